"""Command-line surface: every subcommand, exit codes, error lines."""

import subprocess
import sys

import numpy as np
import pytest

from ltcodec.analysis import RDPoint, write_rd_csv
from ltcodec.cli import main, parse_config_file
from ltcodec.errors import UsageError
from ltcodec.imageio import read_pgm, write_pgm
from ltcodec.train import TrainConfig


@pytest.fixture(scope="module")
def tiny_train_dir(tmp_path_factory):
    rng = np.random.default_rng(0)
    d = tmp_path_factory.mktemp("cli_train")
    for i in range(3):
        img = np.clip(rng.normal(128, 40, (48, 48)), 0, 255).astype(np.uint8)
        write_pgm(d / f"img{i}.pgm", img)
    return d


@pytest.fixture(scope="module")
def tiny_cli_model(tiny_train_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_model")
    cfg = d / "train.cfg"
    cfg.write_text(
        "# tiny run\n"
        "gamma = 10000.0\n"
        "learn_delta = true\n"
        "end_normalization = false\n"
        "steps = 10\n"
        "batch_size = 4\n"
        "patch_size = 16\n"
        "patch_count = 40\n"
        "latent_maps = 2\n"
        "hidden_channels = 2\n"
        "log_every = 5\n"
        f"data_dir = {tiny_train_dir}\n")
    out = d / "tiny.ltm"
    rc = main(["train", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return out


class TestConfigFile:
    def test_parse_types(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("gamma = 500.0\nlearn_delta = true\nend_normalization = false\n"
                     "steps = 7\ndata_dir = /data  # comment\n")
        cfg = parse_config_file(p)
        assert cfg.gamma == 500.0
        assert cfg.learn_delta is True
        assert cfg.steps == 7
        assert cfg.data_dir == "/data"

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("nonsense = 1\n")
        with pytest.raises(UsageError, match="unknown key"):
            parse_config_file(p)

    def test_bad_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("gamma\n")
        with pytest.raises(UsageError):
            parse_config_file(p)


class TestTrainCommand:
    def test_writes_model_and_logs(self, tiny_cli_model):
        assert tiny_cli_model.exists()
        assert tiny_cli_model.with_name("tiny_log.csv").exists()
        assert tiny_cli_model.with_name("tiny_delta.csv").exists()

    def test_log_csv_columns(self, tiny_cli_model):
        header = tiny_cli_model.with_name("tiny_log.csv").read_text().splitlines()[0]
        assert header == "step,loss,mse,rate_bits_per_coeff,val_mse"


class TestRoundTripCommands:
    def test_encode_decode(self, tiny_cli_model, tmp_path):
        rng = np.random.default_rng(1)
        img_path = tmp_path / "in.pgm"
        write_pgm(img_path, np.clip(rng.normal(128, 40, (40, 44)), 0,
                                    255).astype(np.uint8))
        ltc = tmp_path / "out.ltc"
        rec = tmp_path / "rec.pgm"
        assert main(["encode", "--model", str(tiny_cli_model), "--beta", "2.0",
                     str(img_path), str(ltc)]) == 0
        assert ltc.exists() and ltc.stat().st_size > 23
        assert main(["decode", "--model", str(tiny_cli_model), str(ltc),
                     str(rec)]) == 0
        out = read_pgm(rec)
        assert out.shape == (40, 44)

    def test_decode_wrong_model_errors(self, tiny_cli_model, tmp_path, capsys):
        img_path = tmp_path / "in.pgm"
        write_pgm(img_path, np.full((32, 32), 100, dtype=np.uint8))
        ltc = tmp_path / "x.ltc"
        assert main(["encode", "--model", str(tiny_cli_model), str(img_path),
                     str(ltc)]) == 0
        blob = bytearray(ltc.read_bytes())
        blob[14] ^= 0xFF  # clobber the model checksum field
        ltc.write_bytes(bytes(blob))
        rc = main(["decode", "--model", str(tiny_cli_model), str(ltc),
                   str(tmp_path / "y.pgm")])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ") and len(err.strip().splitlines()) == 1

    def test_missing_file_error_line(self, tiny_cli_model, tmp_path, capsys):
        rc = main(["encode", "--model", str(tiny_cli_model),
                   str(tmp_path / "absent.pgm"), str(tmp_path / "o.ltc")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error: ")


class TestAnalysisCommands:
    def test_sweep_report_probe(self, tiny_cli_model, tmp_path):
        rng = np.random.default_rng(2)
        imgdir = tmp_path / "imgs"
        imgdir.mkdir()
        for i in range(2):
            write_pgm(imgdir / f"t{i}.pgm",
                      np.clip(rng.normal(128, 40, (32, 32)), 0, 255).astype(np.uint8))
        rd = tmp_path / "rd.csv"
        assert main(["sweep", "--model", str(tiny_cli_model), "--images",
                     str(imgdir), "--betas", "1,2", "--out", str(rd)]) == 0
        lines = rd.read_text().splitlines()
        assert len(lines) == 1 + 2 * (2 + 1)

        rep = tmp_path / "latent.csv"
        assert main(["report", "--model", str(tiny_cli_model), "--images",
                     str(imgdir), "--out", str(rep)]) == 0
        assert rep.exists()
        assert (tmp_path / "latent_hist.csv").exists()
        assert (tmp_path / "latent_scales.csv").exists()

        probe_out = tmp_path / "probe.pgm"
        assert main(["probe", "--model", str(tiny_cli_model), "--map", "1",
                     "--pos", "2,2", "--alpha", "30", "--size", "4x4",
                     "--out", str(probe_out)]) == 0
        assert probe_out.exists()
        assert (tmp_path / "probe_baseline.pgm").exists()

    def test_compare_pools_single_point_tables(self, tmp_path):
        sweep_a = [RDPoint("mean", b, 0.5 / b, 0.5 / b, 10.0, 30.0 - b)
                   for b in (1.0, 2.0, 4.0)]
        write_rd_csv(tmp_path / "a.csv", sweep_a)
        for i, rate in enumerate((0.12, 0.2, 0.4)):
            write_rd_csv(tmp_path / f"p{i}.csv",
                         [RDPoint("mean", 1.0, rate, rate, 10.0, 29.0)])
        out = tmp_path / "gaps.csv"
        rc = main(["compare", "--out", str(out), str(tmp_path / "a.csv"),
                   str(tmp_path / "p0.csv"), str(tmp_path / "p1.csv"),
                   str(tmp_path / "p2.csv")])
        assert rc == 0
        text = out.read_text()
        assert "pooled_points" in text

    def test_compare_no_overlap_errors(self, tmp_path, capsys):
        write_rd_csv(tmp_path / "lo.csv",
                     [RDPoint("mean", b, 0.01 * b, 0.01 * b, 9.0, 20.0)
                      for b in (1.0, 2.0)])
        write_rd_csv(tmp_path / "hi.csv",
                     [RDPoint("mean", b, 1.0 * b, 1.0 * b, 9.0, 40.0)
                      for b in (1.0, 2.0)])
        rc = main(["compare", "--out", str(tmp_path / "g.csv"),
                   str(tmp_path / "lo.csv"), str(tmp_path / "hi.csv")])
        assert rc == 1
        assert "overlap" in capsys.readouterr().err


class TestSubprocessEntry:
    def test_module_invocation(self, tiny_cli_model, tmp_path):
        img_path = tmp_path / "in.pgm"
        write_pgm(img_path, np.full((16, 16), 77, dtype=np.uint8))
        proc = subprocess.run(
            [sys.executable, "-m", "ltcodec", "encode", "--model",
             str(tiny_cli_model), str(img_path), str(tmp_path / "o.ltc")],
            capture_output=True, text=True, cwd="/root/pkg",
            env={"PYTHONPATH": "/root/pkg/src", "PATH": "/usr/bin:/bin"})
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "o.ltc").exists()

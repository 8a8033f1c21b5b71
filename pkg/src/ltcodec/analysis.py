"""Experiment harness: rate-distortion sweeps, latent diagnostics, probes.

Everything here evaluates a trained model on test images and emits CSV;
plotting is left to whatever reads the CSVs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .bitstream import decode_image, encode_image
from .entropy import (LaplaceParams, empirical_entropy, fit_laplace, laplace_cdf,
                      rate_bpp_estimate, rate_term_value)
from .errors import DegenerateFitError, ShapeError, UsageError
from .imageio import pad_to_multiple
from .model import Model, decode_transform, encode_transform
from .quant import QuantSpec, dequantize, quantize

DEFAULT_BETAS = (1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("mse requires equal shapes")
    return float(((a - b) ** 2).mean())


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit range; inf when identical."""
    e = mse(a, b)
    if e == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / e)


@dataclass
class RDPoint:
    image_id: str
    beta: float
    rate_bpp_estimated: float
    rate_bpp_actual: float
    mse: float
    psnr_db: float


def _image_latents(image: np.ndarray, model: Model) -> np.ndarray:
    padded, _, _ = pad_to_multiple(np.asarray(image, dtype=np.float64),
                                   model.arch.total_stride)
    with ad.no_grad():
        return encode_transform(padded[None, None], model.params, model.arch).data[0]


def rd_point(image: np.ndarray, image_id: str, model: Model, beta: float,
             latents: np.ndarray | None = None) -> RDPoint:
    """One (image, beta) measurement: estimated rate, coded rate, distortion."""
    if latents is None:
        latents = _image_latents(image, model)
    spec = QuantSpec(delta=model.params.delta, mu_bar=model.params.mu_bar,
                     beta=float(np.float32(beta)))
    symbols = quantize(latents, spec)
    pixels = int(np.asarray(image).size)
    est = rate_bpp_estimate(symbols, pixels)
    blob = encode_image(image, model, beta)
    actual = len(blob) * 8.0 / pixels
    rec = decode_image(blob, model)
    e = mse(image, rec)
    return RDPoint(image_id=image_id, beta=float(beta), rate_bpp_estimated=est,
                   rate_bpp_actual=actual, mse=e, psnr_db=psnr(image, rec))


def rd_sweep(model: Model, images: list[tuple[str, np.ndarray]],
             betas=DEFAULT_BETAS) -> list[RDPoint]:
    """Per-image rows for every beta, plus one 'mean' row per beta."""
    points: list[RDPoint] = []
    latents = {name: _image_latents(img, model) for name, img in images}
    for beta in betas:
        group = [rd_point(img, name, model, beta, latents=latents[name])
                 for name, img in images]
        points.extend(group)
        points.append(RDPoint(
            image_id="mean", beta=float(beta),
            rate_bpp_estimated=float(np.mean([p.rate_bpp_estimated for p in group])),
            rate_bpp_actual=float(np.mean([p.rate_bpp_actual for p in group])),
            mse=float(np.mean([p.mse for p in group])),
            psnr_db=float(np.mean([p.psnr_db for p in group])),
        ))
    return points


def write_rd_csv(path, points: list[RDPoint]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image", "beta", "rate_bpp_estimated", "rate_bpp_actual",
                    "mse", "psnr_db"])
        for p in points:
            w.writerow([p.image_id, f"{p.beta:g}", f"{p.rate_bpp_estimated:.8g}",
                        f"{p.rate_bpp_actual:.8g}", f"{p.mse:.8g}", f"{p.psnr_db:.8g}"])


def read_rd_csv(path) -> list[RDPoint]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(RDPoint(
                image_id=row["image"], beta=float(row["beta"]),
                rate_bpp_estimated=float(row["rate_bpp_estimated"]),
                rate_bpp_actual=float(row["rate_bpp_actual"]),
                mse=float(row["mse"]), psnr_db=float(row["psnr_db"])))
    return out


def monotonicity_violations(points: list[RDPoint]) -> dict[str, int]:
    """Inverted adjacent beta pairs per image: rate must not rise nor MSE
    fall as beta grows; a pair failing either way counts once."""
    by_image: dict[str, list[RDPoint]] = {}
    for p in points:
        if p.image_id != "mean":
            by_image.setdefault(p.image_id, []).append(p)
    out = {}
    for name, pts in by_image.items():
        pts = sorted(pts, key=lambda p: p.beta)
        bad = 0
        for a, b in zip(pts, pts[1:]):
            rate_up = b.rate_bpp_estimated > a.rate_bpp_estimated + 1e-12
            mse_down = b.mse < a.mse - 1e-12
            bad += rate_up or mse_down
        out[name] = bad
    return out


# ---------------------------------------------------------------------
# Latent distribution report
# ---------------------------------------------------------------------

@dataclass
class MapReport:
    map_index: int
    mu_bar: float
    fit_mu: float
    fit_b: float
    fit_l1_error: float
    htilde_noise_free: float
    empirical_bits: float
    degenerate: bool
    outlier: bool


def latent_report(model: Model, images: list[tuple[str, np.ndarray]],
                  hist_bins_cap: int = 100000):
    """Per-map Laplace fits, fit errors, and rate-proxy agreement.

    Returns (reports, hist_rows, scales): hist_rows is long-format
    (map, bin_center, density, fitted_density); scales lists the fitted b
    of every non-degenerate map.  The fit error is the integrated absolute
    difference between the normed histogram (bin width delta_i / 4) and
    the fitted density averaged over each bin (i.e. the L1 distance of the
    two piecewise-constant densities), so it lives in [0, 2].  Maps whose
    error exceeds twice the median are flagged, never suppressed.
    """
    samples = [[] for _ in range(model.arch.latent_maps)]
    symbol_groups = [[] for _ in range(model.arch.latent_maps)]
    spec = QuantSpec(delta=model.params.delta, mu_bar=model.params.mu_bar, beta=1.0)
    for _, img in images:
        y = _image_latents(img, model)
        k = quantize(y, spec)
        for i in range(model.arch.latent_maps):
            samples[i].append(y[i].ravel())
            symbol_groups[i].append(k[i].ravel())

    delta = model.params.delta
    psi_mu = model.params.psi_mu.data
    psi_b = model.params.psi_b
    reports: list[MapReport] = []
    hist_rows: list[tuple[int, float, float, float]] = []
    for i in range(model.arch.latent_maps):
        vals = np.concatenate(samples[i])
        syms = np.concatenate(symbol_groups[i])
        mu_bar = float(model.params.mu_bar[i])
        emp = empirical_entropy(syms)
        ht = float(rate_term_value(vals[None, :, None],
                                   delta[i:i + 1], psi_mu[i:i + 1], psi_b[i:i + 1])[0])
        try:
            fit = fit_laplace(vals)
            degenerate = False
        except DegenerateFitError:
            fit = LaplaceParams(mu=float(vals[0]), b=float("nan"))
            degenerate = True
        if degenerate:
            reports.append(MapReport(i, mu_bar, fit.mu, fit.b, float("nan"),
                                     ht, emp, True, False))
            continue
        width = delta[i] / 4.0
        lo, hi = float(vals.min()), float(vals.max())
        n_bins = max(1, int(np.ceil((hi - lo) / width)))
        if n_bins > hist_bins_cap:
            n_bins = hist_bins_cap
            width = (hi - lo) / n_bins
        edges = lo + width * np.arange(n_bins + 1)
        hist, _ = np.histogram(vals, bins=edges, density=True)
        centers = 0.5 * (edges[:-1] + edges[1:])
        cdf = laplace_cdf(edges, fit.mu, fit.b)
        fitted = np.diff(cdf) / width  # bin-averaged fitted density
        err = float(np.abs(hist - fitted).sum() * width)
        reports.append(MapReport(i, mu_bar, fit.mu, fit.b, err, ht, emp, False, False))
        for c, h, fd in zip(centers, hist, fitted):
            hist_rows.append((i, float(c), float(h), float(fd)))

    errs = [r.fit_l1_error for r in reports if not r.degenerate]
    if errs:
        med = float(np.median(errs))
        for r in reports:
            if not r.degenerate and med > 0 and r.fit_l1_error > 2.0 * med:
                r.outlier = True
    scales = [r.fit_b for r in reports if not r.degenerate]
    return reports, hist_rows, scales


def write_latent_csv(path, reports: list[MapReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["map", "mu_bar", "fit_mu", "fit_b", "fit_l1_error",
                    "htilde_noise_free", "empirical_bits", "degenerate", "outlier"])
        for r in reports:
            w.writerow([r.map_index, f"{r.mu_bar:.8g}", f"{r.fit_mu:.8g}",
                        f"{r.fit_b:.8g}", f"{r.fit_l1_error:.8g}",
                        f"{r.htilde_noise_free:.8g}", f"{r.empirical_bits:.8g}",
                        int(r.degenerate), int(r.outlier)])


def write_hist_csv(path, hist_rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["map", "bin_center", "density", "fitted_density"])
        for row in hist_rows:
            w.writerow([row[0], f"{row[1]:.8g}", f"{row[2]:.8g}", f"{row[3]:.8g}"])


def write_scales_csv(path, scales) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["fit_b"])
        for s in scales:
            w.writerow([f"{s:.8g}"])


# ---------------------------------------------------------------------
# Single-coefficient probe
# ---------------------------------------------------------------------

@dataclass
class ProbeResult:
    image: np.ndarray
    baseline: np.ndarray
    locality: float
    diff_energy: float


def probe(model: Model, map_index: int, pos: tuple[int, int], alpha: float,
          latent_hw: tuple[int, int] = (8, 8)) -> ProbeResult:
    """Decode a latent that is all centering means except one coefficient.

    The probe coefficient at `pos` in map `map_index` is set to alpha, the
    latent quantized at beta = 1 and decoded.  Locality is the fraction of
    squared difference (probe minus baseline) inside the square crop of
    side 4 * total_stride centered on the coefficient's projection.
    """
    m = model.arch.latent_maps
    lh, lw = latent_hw
    if not (0 <= map_index < m):
        raise UsageError(f"map index {map_index} out of range")
    if not (0 <= pos[0] < lh and 0 <= pos[1] < lw):
        raise UsageError(f"probe position {pos} outside latent {latent_hw}")
    base_latent = np.broadcast_to(
        model.params.mu_bar[:, None, None], (m, lh, lw)).copy()
    probe_latent = base_latent.copy()
    probe_latent[map_index, pos[0], pos[1]] = alpha

    spec = QuantSpec(delta=model.params.delta, mu_bar=model.params.mu_bar, beta=1.0)

    def run(latent):
        y_hat = dequantize(quantize(latent, spec), spec)
        with ad.no_grad():
            rec = decode_transform(y_hat[None], model.params, model.arch).data[0, 0]
        return np.clip(np.rint(rec), 0, 255).astype(np.uint8)

    base_img = run(base_latent)
    probe_img = run(probe_latent)
    diff = probe_img.astype(np.float64) - base_img.astype(np.float64)
    energy = float((diff ** 2).sum())
    s = model.arch.total_stride
    half = 2 * s
    cr = pos[0] * s + s // 2
    cc = pos[1] * s + s // 2
    r0, r1 = max(0, cr - half), min(diff.shape[0], cr + half)
    c0, c1 = max(0, cc - half), min(diff.shape[1], cc + half)
    inside = float((diff[r0:r1, c0:c1] ** 2).sum())
    locality = inside / energy if energy > 0 else 0.0
    return ProbeResult(image=probe_img, baseline=base_img, locality=locality,
                       diff_energy=energy)


def probe_sign_correlation(model: Model, map_index: int, pos: tuple[int, int],
                           alpha_pos: float, alpha_neg: float,
                           latent_hw: tuple[int, int] = (8, 8)) -> float:
    """Correlation between the +alpha and -alpha difference images."""
    rp = probe(model, map_index, pos, alpha_pos, latent_hw)
    rn = probe(model, map_index, pos, alpha_neg, latent_hw)
    dp = rp.image.astype(np.float64) - rp.baseline.astype(np.float64)
    dn = rn.image.astype(np.float64) - rn.baseline.astype(np.float64)
    dp, dn = dp.ravel(), dn.ravel()
    if dp.std() == 0 or dn.std() == 0:
        return float("nan")
    return float(np.corrcoef(dp, dn)[0, 1])


# ---------------------------------------------------------------------
# Curve comparison
# ---------------------------------------------------------------------

def curve_from_points(points: list[RDPoint]) -> list[tuple[float, float]]:
    """(rate, psnr) curve from a table's mean rows (estimated rate)."""
    means = [p for p in points if p.image_id == "mean"]
    if not means:
        means = points
    agg: dict[float, list[float]] = {}
    for p in means:
        agg.setdefault(p.rate_bpp_estimated, []).append(p.psnr_db)
    curve = sorted((r, float(np.mean(ps))) for r, ps in agg.items())
    return curve


def compare_curves(curves: dict[str, list[tuple[float, float]]],
                   grid_points: int = 64) -> list[dict]:
    """Pairwise PSNR gaps over overlapping rate ranges.

    Each curve is a sorted (rate, psnr) list; interpolation is piecewise
    linear in rate.  Raises UsageError when a pair has no overlap.
    """
    names = sorted(curves)
    for name in names:
        if len(curves[name]) < 2:
            raise UsageError(f"curve {name!r} needs at least two points")
    rows = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ca, cb = curves[a], curves[b]
            lo = max(ca[0][0], cb[0][0])
            hi = min(ca[-1][0], cb[-1][0])
            if hi <= lo:
                raise UsageError(f"curves {a!r} and {b!r} have no overlapping rates")
            grid = np.linspace(lo, hi, grid_points)
            ya = np.interp(grid, [p[0] for p in ca], [p[1] for p in ca])
            yb = np.interp(grid, [p[0] for p in cb], [p[1] for p in cb])
            gaps = np.abs(ya - yb)
            rows.append({
                "curve_a": a, "curve_b": b,
                "rate_lo": float(lo), "rate_hi": float(hi),
                "mean_gap_db": float(gaps.mean()),
                "max_gap_db": float(gaps.max()),
            })
    return rows


def write_gaps_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["curve_a", "curve_b", "rate_lo", "rate_hi",
                    "mean_gap_db", "max_gap_db"])
        for r in rows:
            w.writerow([r["curve_a"], r["curve_b"], f"{r['rate_lo']:.8g}",
                        f"{r['rate_hi']:.8g}", f"{r['mean_gap_db']:.8g}",
                        f"{r['max_gap_db']:.8g}"])

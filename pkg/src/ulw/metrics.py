"""Image quality metrics and batch evaluation reports.

Everything here is evaluation-only numpy code (no gradients).  Color math is
done in float64; the SSIM metric reuses the differentiable implementation so
the reported number is exactly what training optimizes.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from ulw.autodiff import Tensor, no_grad
from ulw.errors import ShapeError, UsageError
from ulw.losses import ssim_map

# Linear sRGB -> XYZ (D65).  White is normalized against the row sums so that
# (1, 1, 1) maps to exactly L* = 100, a* = b* = 0 regardless of how the matrix
# coefficients are rounded.
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
], dtype=np.float64)
_WHITE = _SRGB_TO_XYZ.sum(axis=1)

CSV_HEADER = "pair,ssim,psnr_db,mse,ciede2000"


def _as_float_pair(kind: str, a, b) -> tuple[np.ndarray, np.ndarray]:
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise ShapeError(f"{kind}: shape mismatch {av.shape} vs {bv.shape}")
    if av.size == 0:
        raise ShapeError(f"{kind}: empty input")
    return av, bv


def mse(a, b) -> float:
    """Mean squared error in float64."""
    av, bv = _as_float_pair("mse", a, b)
    diff = av - bv
    return float(np.mean(diff * diff))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give +inf."""
    if peak <= 0:
        raise UsageError(f"psnr: peak must be positive, got {peak!r}")
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def ssim(a, b) -> float:
    """Mean SSIM between two images ([C,H,W] or [N,C,H,W], range [0, 1])."""
    av = np.asarray(a)
    bv = np.asarray(b)
    if av.ndim == 3:
        av = av[np.newaxis]
        bv = bv[np.newaxis]
    with no_grad():
        _, mean = ssim_map(Tensor(av, requires_grad=False), Tensor(bv, requires_grad=False))
    return float(mean.data)


def srgb_to_linear(rgb: np.ndarray) -> np.ndarray:
    """Undo the sRGB transfer curve (elementwise, float64)."""
    v = np.asarray(rgb, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] to CIELAB under D65; accepts [3] or [3,H,W]."""
    v = np.asarray(rgb, dtype=np.float64)
    if v.ndim == 1 and v.shape == (3,):
        return srgb_to_lab(v.reshape(3, 1, 1)).reshape(3)
    if v.ndim != 3 or v.shape[0] != 3:
        raise ShapeError(f"srgb_to_lab: expected [3] or [3,H,W], got shape {v.shape}")
    linear = srgb_to_linear(v)
    xyz = np.einsum("ij,jhw->ihw", _SRGB_TO_XYZ, linear)
    t = xyz / _WHITE.reshape(3, 1, 1)
    delta = 6.0 / 29.0
    f = np.where(t > delta ** 3, np.cbrt(t), t / (3.0 * delta * delta) + 4.0 / 29.0)
    fx, fy, fz = f[0], f[1], f[2]
    lab = np.empty_like(xyz)
    lab[0] = 116.0 * fy - 16.0
    lab[1] = 500.0 * (fx - fy)
    lab[2] = 200.0 * (fy - fz)
    return lab


def ciede2000_lab(lab1, lab2) -> np.ndarray:
    """CIEDE2000 color difference between Lab triples (broadcast over [3,...])."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    if lab1.shape != lab2.shape or lab1.shape[0] != 3:
        raise ShapeError(
            f"ciede2000_lab: expected matching [3,...] arrays, got {lab1.shape} vs {lab2.shape}")
    l1, a1, b1 = lab1[0], lab1[1], lab1[2]
    l2, a2, b2 = lab2[0], lab2[1], lab2[2]

    c1 = np.hypot(a1, b1)
    c2 = np.hypot(a2, b2)
    cbar = 0.5 * (c1 + c2)
    pow7 = cbar ** 7
    g = 0.5 * (1.0 - np.sqrt(pow7 / (pow7 + 25.0 ** 7)))
    a1p = (1.0 + g) * a1
    a2p = (1.0 + g) * a2
    c1p = np.hypot(a1p, b1)
    c2p = np.hypot(a2p, b2)

    h1p = np.degrees(np.arctan2(b1, a1p)) % 360.0
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360.0
    h1p = np.where((b1 == 0.0) & (a1p == 0.0), 0.0, h1p)
    h2p = np.where((b2 == 0.0) & (a2p == 0.0), 0.0, h2p)

    dlp = l2 - l1
    dcp = c2p - c1p
    chroma_prod = c1p * c2p
    dh = h2p - h1p
    dh = np.where(dh > 180.0, dh - 360.0, dh)
    dh = np.where(dh < -180.0, dh + 360.0, dh)
    dh = np.where(chroma_prod == 0.0, 0.0, dh)
    dhp = 2.0 * np.sqrt(chroma_prod) * np.sin(np.radians(0.5 * dh))

    lbar = 0.5 * (l1 + l2)
    cbarp = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    habs = np.abs(h1p - h2p)
    hbar = np.where(habs <= 180.0, 0.5 * hsum,
                    np.where(hsum < 360.0, 0.5 * (hsum + 360.0), 0.5 * (hsum - 360.0)))
    hbar = np.where(chroma_prod == 0.0, hsum, hbar)

    t = (1.0
         - 0.17 * np.cos(np.radians(hbar - 30.0))
         + 0.24 * np.cos(np.radians(2.0 * hbar))
         + 0.32 * np.cos(np.radians(3.0 * hbar + 6.0))
         - 0.20 * np.cos(np.radians(4.0 * hbar - 63.0)))
    dtheta = 30.0 * np.exp(-(((hbar - 275.0) / 25.0) ** 2))
    pow7p = cbarp ** 7
    rc = 2.0 * np.sqrt(pow7p / (pow7p + 25.0 ** 7))
    lterm = (lbar - 50.0) ** 2
    sl = 1.0 + 0.015 * lterm / np.sqrt(20.0 + lterm)
    sc = 1.0 + 0.045 * cbarp
    sh = 1.0 + 0.015 * cbarp * t
    rt = -np.sin(np.radians(2.0 * dtheta)) * rc

    fl = dlp / sl
    fc = dcp / sc
    fh = dhp / sh
    return np.sqrt(fl * fl + fc * fc + fh * fh + rt * fc * fh)


def ciede2000(rgb1, rgb2) -> float:
    """Mean CIEDE2000 between two sRGB images in [0, 1] ([3,H,W])."""
    lab1 = srgb_to_lab(rgb1)
    lab2 = srgb_to_lab(rgb2)
    return float(np.mean(ciede2000_lab(lab1, lab2)))


def _format(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6f}"


def evaluate_pairs(pred_dir, ref_dir, csv_path) -> dict:
    """Score every prediction against its same-named reference, writing a CSV.

    Rows are `name,ssim,psnr_db,mse,ciede2000` over the union of *.png stems
    found in either directory.  A stem that is missing on one side or fails to
    load becomes a `#error` row.  Two trailing rows give the mean and the
    population standard deviation of each column over the scored pairs.
    Returns {"pairs": n_scored, "errors": n_failed, "mean": {...}, "std": {...}}.
    """
    from ulw.data import load_image

    pred_dir = Path(pred_dir)
    ref_dir = Path(ref_dir)
    names = sorted({p.stem for p in pred_dir.glob("*.png")}
                   | {p.stem for p in ref_dir.glob("*.png")})
    if not names:
        raise UsageError(f"evaluate_pairs: no .png files under {pred_dir} or {ref_dir}")

    columns = ("ssim", "psnr_db", "mse", "ciede2000")
    rows: list[str] = [CSV_HEADER]
    scores: dict[str, list[float]] = {c: [] for c in columns}
    errors = 0
    for name in names:
        try:
            pred = load_image(pred_dir / f"{name}.png")
            ref = load_image(ref_dir / f"{name}.png")
            if pred.shape != ref.shape:
                raise ShapeError(f"shape mismatch {pred.shape} vs {ref.shape}")
            values = (ssim(pred, ref), psnr(pred, ref), mse(pred, ref), ciede2000(pred, ref))
        except Exception as exc:
            errors += 1
            reason = str(exc).replace(",", ";").replace("\n", " ")
            rows.append(f"#error,{name},{reason}")
            continue
        for column, value in zip(columns, values):
            scores[column].append(value)
        rows.append(name + "," + ",".join(_format(v) for v in values))

    summary = {"pairs": len(names) - errors, "errors": errors, "mean": {}, "std": {}}
    if summary["pairs"] > 0:
        # errstate: std over a column containing inf (perfect-match PSNR)
        # yields nan, which is the intended sentinel, not a warning.
        with np.errstate(invalid="ignore"):
            for tag, reducer in (("#mean", np.mean), ("#std", np.std)):
                reduced = [float(reducer(np.asarray(scores[c]))) for c in columns]
                rows.append(tag + "," + ",".join(_format(v) for v in reduced))
            summary["mean"] = {c: float(np.mean(np.asarray(scores[c]))) for c in columns}
            summary["std"] = {c: float(np.std(np.asarray(scores[c]))) for c in columns}

    Path(csv_path).write_text("\n".join(rows) + "\n", encoding="utf-8")
    return summary

"""Image I/O, dataset splitting, and the synthetic smoke compositor.

The generator builds paired clean/smoky PNGs from procedural tissue-like
textures and multi-octave value noise.  Every pair derives its own sub-seed
from (seed, id), so generation is reproducible pair by pair and order does
not matter.  Synthetic smoke is alpha compositing toward a near-white tint,
which is enough to exercise the training pipeline at desk scale; it makes no
claim of matching real smoke.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ulw.errors import ImageIOError, ShapeError, UsageError

SMOKE_TINT = (0.93, 0.93, 0.93)
DEFAULT_NOISE_OCTAVES = 4
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into a [3,H,W] float32 array in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            fmt, mode = img.format, img.mode
            pixels = np.asarray(img, dtype=np.float32)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or 'file not found'}") from exc
    except UnidentifiedImageError as exc:
        raise ImageIOError(f"{path}: not a readable image") from exc
    except OSError as exc:
        raise ImageIOError(f"{path}: unreadable image ({exc})") from exc
    if fmt != "PNG":
        raise ImageIOError(f"{path}: expected a PNG file, got {fmt}")
    if mode != "RGB":
        raise ImageIOError(f"{path}: expected 8-bit RGB, got mode {mode}")
    return np.ascontiguousarray(pixels.transpose(2, 0, 1)) / np.float32(255.0)


def save_image(image: np.ndarray, path) -> None:
    """Write a [3,H,W] float array in [0, 1] as an 8-bit RGB PNG.

    Values are clipped, scaled by 255 and rounded to nearest, so a later load
    reproduces each value to within 1/510.
    """
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"save_image: expected [3,H,W], got shape {arr.shape}")
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized.transpose(1, 2, 0), mode="RGB").save(Path(path), format="PNG")


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a [3,H,W] float array (no quantization)."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"resize_image: expected [3,H,W], got shape {arr.shape}")
    if arr.shape[1] == height and arr.shape[2] == width:
        return arr
    channels = [
        np.asarray(
            Image.fromarray(c, mode="F").resize((width, height), Image.Resampling.BILINEAR))
        for c in arr
    ]
    return np.clip(np.stack(channels), 0.0, 1.0)


def mean_luminance(image: np.ndarray) -> float:
    """Mean Rec.601 luma of a [3,H,W] image."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"mean_luminance: expected [3,H,W], got shape {arr.shape}")
    return float(np.einsum("c,chw->", _LUMA_WEIGHTS, arr) / (arr.shape[1] * arr.shape[2]))


@dataclass(frozen=True)
class ImagePair:
    """A matched smoky/clean image pair, both [3,H,W] float32 in [0, 1]."""

    id: str
    smoky: np.ndarray
    clean: np.ndarray

    def __post_init__(self):
        if self.smoky.shape != self.clean.shape:
            raise ShapeError(
                f"pair {self.id}: smoky {self.smoky.shape} vs clean {self.clean.shape}")


def split_dataset(ids, train_frac: float = 0.8, val_frac: float = 0.1, *,
                  seed: int) -> tuple[list, list, list]:
    """Shuffle ids with a seeded generator and cut floor(0.8n)/floor(0.1n)/rest."""
    ids = list(ids)
    if not ids:
        raise UsageError("split_dataset: empty id list")
    if not (0 < train_frac < 1 and 0 < val_frac < 1 and train_frac + val_frac < 1):
        raise UsageError(
            f"split_dataset: fractions ({train_frac}, {val_frac}) must be in (0,1) and sum below 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    order = rng.permutation(len(ids))
    n_train = int(np.floor(train_frac * len(ids)))
    n_val = int(np.floor(val_frac * len(ids)))
    shuffled = [ids[i] for i in order]
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


def _fade(t: np.ndarray) -> np.ndarray:
    # Quintic smoothstep: zero first and second derivatives at the knots.
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def gen_fractal_noise(height: int, width: int, octaves: int = DEFAULT_NOISE_OCTAVES,
                      scale: float = 16.0, *, seed: int) -> np.ndarray:
    """Multi-octave value noise in [0, 1], [H,W] float32, deterministic per seed.

    Each octave interpolates a random lattice with a quintic fade; octave o
    doubles the base frequency and halves the amplitude.  The sum is divided
    by the total amplitude, so the result is a convex combination of lattice
    values and stays in range without rescaling.
    """
    if height < 1 or width < 1:
        raise ShapeError(f"gen_fractal_noise: size {height}x{width} must be positive")
    if octaves < 1:
        raise UsageError(f"gen_fractal_noise: octaves must be >= 1, got {octaves}")
    if scale <= 0:
        raise UsageError(f"gen_fractal_noise: scale must be positive, got {scale}")
    rng = np.random.Generator(np.random.PCG64(seed))
    total = np.zeros((height, width), dtype=np.float64)
    amplitude = 1.0
    amplitude_sum = 0.0
    for octave in range(octaves):
        cell = max(scale / (2.0 ** octave), 1.0)
        ys = np.arange(height, dtype=np.float64) / cell
        xs = np.arange(width, dtype=np.float64) / cell
        iy = ys.astype(np.int64)
        ix = xs.astype(np.int64)
        ty = _fade(ys - iy).reshape(-1, 1)
        tx = _fade(xs - ix).reshape(1, -1)
        lattice = rng.random((int(iy[-1]) + 2, int(ix[-1]) + 2))
        c00 = lattice[np.ix_(iy, ix)]
        c01 = lattice[np.ix_(iy, ix + 1)]
        c10 = lattice[np.ix_(iy + 1, ix)]
        c11 = lattice[np.ix_(iy + 1, ix + 1)]
        top = c00 * (1.0 - tx) + c01 * tx
        bottom = c10 * (1.0 - tx) + c11 * tx
        total += amplitude * (top * (1.0 - ty) + bottom * ty)
        amplitude_sum += amplitude
        amplitude *= 0.5
    return np.clip(total / amplitude_sum, 0.0, 1.0).astype(np.float32)


@dataclass(frozen=True)
class SmokeRecipe:
    """Parameters of one synthetic smoke overlay."""

    density: float
    noise_octaves: int = DEFAULT_NOISE_OCTAVES
    noise_scale: float = 16.0
    smoke_tint: tuple = SMOKE_TINT
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise UsageError(f"smoke density must be in [0,1], got {self.density!r}")


def synth_smoke(clean: np.ndarray, recipe: SmokeRecipe,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Composite smoke over a clean [3,H,W] image in [0, 1].

    smoky = (1 - d*m) * clean + d*m * tint, with m a fractal noise field and
    d the recipe density.  Density 0 reproduces the input bitwise.  A caller
    may inject its own [H,W] mask in [0, 1] in place of the generated field.
    """
    arr = np.asarray(clean, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"synth_smoke: expected [3,H,W], got shape {arr.shape}")
    if mask is None:
        mask = gen_fractal_noise(arr.shape[1], arr.shape[2], recipe.noise_octaves,
                                 recipe.noise_scale, seed=recipe.seed)
    else:
        mask = np.asarray(mask, dtype=np.float32)
        if mask.shape != arr.shape[1:]:
            raise ShapeError(f"synth_smoke: mask {mask.shape} does not match image {arr.shape}")
    alpha = np.float32(recipe.density) * mask
    tint = np.asarray(recipe.smoke_tint, dtype=np.float32).reshape(3, 1, 1)
    smoky = (np.float32(1.0) - alpha) * arr + alpha * tint
    return np.clip(smoky, 0.0, 1.0)


def synth_tissue(height: int, width: int, *, field_seed: int, detail_seed: int) -> np.ndarray:
    """Procedural tissue-like texture, [3,H,W] float32.

    A low-frequency field blends between a dark red and a light pink, and a
    finer field adds surface variation.  Output is capped at 0.9 so the
    near-white smoke tint stays brighter than every clean pixel.
    """
    field = gen_fractal_noise(height, width, octaves=3, scale=max(height, width) / 2.0,
                              seed=field_seed).astype(np.float64)
    detail = gen_fractal_noise(height, width, octaves=4, scale=max(height, width) / 8.0,
                               seed=detail_seed).astype(np.float64)
    dark = np.array([0.38, 0.10, 0.12]).reshape(3, 1, 1)
    light = np.array([0.82, 0.52, 0.55]).reshape(3, 1, 1)
    base = dark + (light - dark) * field
    textured = base * (0.85 + 0.3 * detail)
    return np.clip(textured, 0.0, 0.9).astype(np.float32)


def pair_seed(seed: int, pair_id: str) -> int:
    """Stable per-pair sub-seed derived from the run seed and the pair id."""
    digest = hashlib.sha256(f"{seed}:{pair_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def build_synthetic_dataset(out_dir, count: int, size: int, *, seed: int,
                            density_range: tuple = (0.3, 0.9),
                            clean_dir=None) -> Path:
    """Write `count` paired PNGs plus a manifest; returns the manifest path.

    Files are `<id>_clean.png` / `<id>_smoky.png`.  Clean images come from
    clean_dir (cycled in sorted order, resized to `size`) when given, else
    from the procedural tissue generator.  The manifest has one
    `id<TAB>density<TAB>seed` row per pair, where seed is the pair's own
    sub-seed; a pair is fully reproducible from its row.
    """
    if count < 1:
        raise UsageError(f"build_synthetic_dataset: count must be >= 1, got {count}")
    if size < 1:
        raise UsageError(f"build_synthetic_dataset: size must be >= 1, got {size}")
    lo, hi = float(density_range[0]), float(density_range[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise UsageError(f"build_synthetic_dataset: bad density range {density_range!r}")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ImageIOError(f"{out_dir}: cannot create output directory ({exc})") from exc

    sources = None
    if clean_dir is not None:
        sources = sorted(Path(clean_dir).glob("*.png"))
        if not sources:
            raise UsageError(f"build_synthetic_dataset: no .png files in {clean_dir}")

    rows = []
    for index in range(count):
        pair_id = f"{index:04d}"
        sub_seed = pair_seed(seed, pair_id)
        rng = np.random.Generator(np.random.PCG64(sub_seed))
        density = float(rng.uniform(lo, hi))
        if sources is not None:
            clean = resize_image(load_image(sources[index % len(sources)]), size, size)
        else:
            clean = synth_tissue(size, size,
                                 field_seed=int(rng.integers(2 ** 63)),
                                 detail_seed=int(rng.integers(2 ** 63)))
        recipe = SmokeRecipe(density=density, noise_scale=size / 4.0,
                             seed=int(rng.integers(2 ** 63)))
        smoky = synth_smoke(clean, recipe)
        save_image(clean, out_dir / f"{pair_id}_clean.png")
        save_image(smoky, out_dir / f"{pair_id}_smoky.png")
        rows.append(f"{pair_id}\t{density!r}\t{sub_seed}")

    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return manifest


def load_pairs(data_dir, image_size: int | None = None) -> list[ImagePair]:
    """Load every smoky/clean pair under data_dir, sorted by id.

    Accepts either flat `<id>_smoky.png` / `<id>_clean.png` naming or the
    two-directory layout `smoky/<name>.png` + `clean/<name>.png`.  With
    image_size set, pairs are bilinearly resized to that square size.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise UsageError(f"load_pairs: {data_dir} is not a directory")

    entries: list[tuple[str, Path, Path]] = []
    smoky_sub, clean_sub = data_dir / "smoky", data_dir / "clean"
    if smoky_sub.is_dir() and clean_sub.is_dir():
        names = sorted(p.stem for p in smoky_sub.glob("*.png"))
        for name in names:
            clean_path = clean_sub / f"{name}.png"
            if not clean_path.exists():
                raise UsageError(f"load_pairs: {smoky_sub / (name + '.png')} has no clean twin")
            entries.append((name, smoky_sub / f"{name}.png", clean_path))
    else:
        for smoky_path in sorted(data_dir.glob("*_smoky.png")):
            pair_id = smoky_path.name[:-len("_smoky.png")]
            clean_path = data_dir / f"{pair_id}_clean.png"
            if not clean_path.exists():
                raise UsageError(f"load_pairs: {smoky_path} has no clean twin")
            entries.append((pair_id, smoky_path, clean_path))
    if not entries:
        raise UsageError(f"load_pairs: no image pairs found under {data_dir}")

    pairs = []
    for pair_id, smoky_path, clean_path in entries:
        smoky = load_image(smoky_path)
        clean = load_image(clean_path)
        if image_size is not None:
            smoky = resize_image(smoky, image_size, image_size)
            clean = resize_image(clean, image_size, image_size)
        pairs.append(ImagePair(pair_id, smoky, clean))
    return pairs

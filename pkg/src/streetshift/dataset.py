"""Image ingestion, preprocessing, averaging and procedural streetscapes.

Images are ``uint8`` arrays of shape (H, W, 3). Everything that turns a
float into an 8-bit value rounds half to even (``np.rint``).
"""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

GROUNDS = ("grass", "concrete", "gravel")
HEADINGS = (0, 90, 180, 270)

# Fixed palettes; the domain-separation properties depend on these values.
SKY_TOP = (88, 132, 206)
SKY_HORIZON = (178, 200, 226)
GROUND_PALETTES = {
    "grass": ((56, 158, 42), (64, 170, 48), (48, 146, 38), (72, 164, 54)),
    "concrete": ((112, 110, 108), (120, 118, 116), (104, 102, 100), (116, 115, 113)),
    "gravel": ((140, 128, 108), (150, 137, 116), (130, 119, 100), (144, 134, 118)),
}
BUILDING_PALETTE = ((150, 92, 74), (168, 160, 150), (104, 100, 108), (186, 170, 140), (120, 80, 64))
WINDOW_COLOR = (52, 60, 76)
TREE_PALETTE = ((34, 110, 38), (46, 126, 44), (28, 96, 34))
TRUNK_COLOR = (84, 62, 40)


class ImageFormatError(ValueError):
    pass


def check_image(img, name="image") -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageFormatError(f"{name}: expected HxWx3, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ImageFormatError(f"{name}: values outside [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def to_uint8(x) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64)), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# PNG I/O


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def save_png(path, img) -> None:
    arr = check_image(img)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def save_gray_png(path, plane) -> None:
    arr = np.asarray(plane, dtype=np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


# --------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ImageRef:
    id: str
    latitude: float | None = None
    longitude: float | None = None
    heading: int = 0
    path: str = ""

    def __post_init__(self):
        if self.heading not in HEADINGS:
            raise ValueError(f"heading must be one of {HEADINGS}, got {self.heading}")
        if self.latitude is not None and not -90 <= self.latitude <= 90:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if self.longitude is not None and not -180 <= self.longitude <= 180:
            raise ValueError(f"longitude out of range: {self.longitude}")


INDEX_FIELDS = ("id", "lat", "lon", "heading", "path")


def _opt_float(s):
    return None if s in ("", None) else float(s)


def read_index(path_or_lines) -> list[ImageRef]:
    """Parse ``id,lat,lon,heading,path`` records (header required)."""
    if isinstance(path_or_lines, (str, os.PathLike)):
        with open(path_or_lines, newline="") as fh:
            return read_index(fh.read().splitlines())
    reader = csv.DictReader(path_or_lines)
    missing = {"id", "lat", "lon"} - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"image index missing columns: {sorted(missing)}")
    return [
        ImageRef(r["id"], _opt_float(r["lat"]), _opt_float(r["lon"]), int(float(r.get("heading") or 0)),
                 r.get("path") or "")
        for r in reader
    ]


def write_index(path, refs, extra=None) -> None:
    """Write image records; ``extra`` maps column name -> per-row values."""
    extra = extra or {}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_FIELDS + tuple(extra))
        for i, r in enumerate(refs):
            lat = "" if r.latitude is None else repr(r.latitude)
            lon = "" if r.longitude is None else repr(r.longitude)
            w.writerow([r.id, lat, lon, r.heading, r.path] + [extra[k][i] for k in extra])


@dataclass
class Manifest:
    entries: list[tuple[ImageRef, int]] = field(default_factory=list)
    min_byte_size: int = 0
    excluded: list[tuple[ImageRef, int]] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def refs(self):
        return [r for r, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def ingest(directory, min_byte_size=0, index=None) -> Manifest:
    """Scan ``directory`` for PNGs and drop files smaller than ``min_byte_size``.

    Small files stand in for indoor or blank captures. Coordinates come from
    an ``index`` file (``id,lat,lon,heading,path``) when one is given.
    """
    directory = Path(directory)
    known = {}
    if index is not None:
        known = {r.id: r for r in read_index(index)}
    man = Manifest(min_byte_size=int(min_byte_size))
    for path in sorted(directory.glob("*.png"), key=lambda p: p.stem):
        rid = path.stem
        base = known.get(rid, ImageRef(rid))
        ref = replace(base, path=str(path))
        try:
            size = path.stat().st_size
            with Image.open(path) as im:
                im.verify()
        except (OSError, SyntaxError) as exc:
            man.errors.append((rid, str(exc)))
            continue
        if size < man.min_byte_size:
            man.excluded.append((ref, size))
        else:
            man.entries.append((ref, size))
    log.info("ingested %d images, excluded %d below %d bytes", len(man.entries), len(man.excluded), min_byte_size)
    return man


# --------------------------------------------------------------------------
# preprocessing


def resize_bilinear(img, target: int) -> np.ndarray:
    """Square bilinear resize with half-pixel centres and edge clamping."""
    arr = check_image(img)
    if target < 1:
        raise ValueError("target size must be >= 1")
    h, w = arr.shape[:2]
    if (h, w) == (target, target):
        return arr.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, target)
    x0, x1, fx = axis(w, target)
    a = arr.astype(np.float64)
    fx = fx[None, :, None]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    fy = fy[:, None, None]
    return to_uint8(top * (1 - fy) + bot * fy)


def average_image(images) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel mean of a set of images: (8-bit image, float64 mean).

    Sums are accumulated in int64, so the result does not depend on the
    order of the set.
    """
    images = list(images) if not isinstance(images, np.ndarray) else images
    if len(images) == 0:
        raise ValueError("cannot average an empty set")
    first = check_image(images[0])
    total = np.zeros(first.shape, np.int64)
    for i, im in enumerate(images):
        im = check_image(im)
        if im.shape != first.shape:
            raise ImageFormatError(f"image {i}: shape {im.shape} != {first.shape}")
        total += im
    mean = total / len(images)
    return to_uint8(mean), mean


# --------------------------------------------------------------------------
# procedural streetscapes


@dataclass(frozen=True)
class SceneParams:
    ground: str = "grass"
    building_count: int = 0
    building_height_frac: float = 0.5
    tree_count: int = 0
    horizon_frac: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.ground not in GROUNDS:
            raise ValueError(f"ground must be one of {GROUNDS}")
        if not 0 <= self.building_count <= 4 or not 0 <= self.tree_count <= 4:
            raise ValueError("building_count and tree_count must be in 0..4")
        if not 0 < self.building_height_frac < 1:
            raise ValueError("building_height_frac must be in (0, 1)")
        if not 0.3 < self.horizon_frac < 0.7:
            raise ValueError("horizon_frac must be in (0.3, 0.7)")


def sky_row_colors(horizon: int) -> np.ndarray:
    top = np.array(SKY_TOP, float)
    bottom = np.array(SKY_HORIZON, float)
    t = np.arange(horizon) / max(horizon - 1, 1)
    return to_uint8(top + (bottom - top) * t[:, None])


def horizon_row(params: SceneParams, size: int) -> int:
    return int(round(params.horizon_frac * size))


def synth_scene(params: SceneParams, size: int = 32) -> np.ndarray:
    """Render a streetscape: sky gradient, textured ground, buildings, trees."""
    rng = np.random.default_rng(params.seed)
    img = np.zeros((size, size, 3), np.uint8)
    hz = horizon_row(params, size)
    img[:hz] = sky_row_colors(hz)[:, None, :]
    pal = np.array(GROUND_PALETTES[params.ground], np.uint8)
    img[hz:] = pal[rng.integers(len(pal), size=(size - hz, size))]

    for _ in range(params.building_count):
        bw = int(rng.integers(max(2, size // 8), max(3, size // 3) + 1))
        x0 = int(rng.integers(0, size - bw + 1))
        bh = max(1, int(round(params.building_height_frac * hz * rng.uniform(0.7, 1.0))))
        base = min(size, hz + max(1, size // 16))
        y0 = max(0, base - bh - max(1, size // 16))
        color = BUILDING_PALETTE[int(rng.integers(len(BUILDING_PALETTE)))]
        img[y0:base, x0 : x0 + bw] = color
        step = max(2, size // 10)
        win = max(1, step // 2)
        for wy in range(y0 + 1, base - win - 1, step):
            for wx in range(x0 + 1, x0 + bw - win, step):
                img[wy : wy + win, wx : wx + win] = WINDOW_COLOR

    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(params.tree_count):
        cx = rng.uniform(0, size)
        cy = hz - rng.uniform(0.05, 0.25) * size
        trunk_w = max(1, size // 32)
        trunk_top, trunk_bot = int(cy), min(size, hz + max(1, size // 10))
        img[max(0, trunk_top) : trunk_bot, int(cx) : int(cx) + trunk_w] = TRUNK_COLOR
        for _ in range(3):
            ex = cx + rng.normal(0, 0.04 * size)
            ey = cy + rng.normal(0, 0.03 * size)
            rx = rng.uniform(0.07, 0.13) * size
            ry = rng.uniform(0.06, 0.11) * size
            mask = ((xx - ex) / rx) ** 2 + ((yy - ey) / ry) ** 2 <= 1.0
            img[mask] = TREE_PALETTE[int(rng.integers(len(TREE_PALETTE)))]
    return img


@dataclass(frozen=True)
class DomainSpec:
    """Distribution over SceneParams for one synthetic domain."""

    name: str = "domain"
    ground: tuple = (("grass", 1.0),)
    building_count: tuple = (0, 2)
    building_height_frac: tuple = (0.2, 0.5)
    tree_count: tuple = (0, 2)
    horizon_frac: tuple = (0.4, 0.6)
    seed: int = 0

    def __post_init__(self):
        names = [g for g, _ in self.ground]
        if not names or any(g not in GROUNDS for g in names):
            raise ValueError(f"ground weights must name {GROUNDS}")
        if any(w < 0 for _, w in self.ground) or sum(w for _, w in self.ground) <= 0:
            raise ValueError("ground weights must be non-negative with positive sum")
        for key, lo, hi in (("building_count", 0, 4), ("tree_count", 0, 4)):
            a, b = getattr(self, key)
            if not lo <= a <= b <= hi:
                raise ValueError(f"{key} range must lie in {lo}..{hi}")
        a, b = self.building_height_frac
        if not 0 < a <= b < 1:
            raise ValueError("building_height_frac range must lie in (0, 1)")
        a, b = self.horizon_frac
        if not 0.3 < a <= b < 0.7:
            raise ValueError("horizon_frac range must lie in (0.3, 0.7)")


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1, np.uint64)[0])


def draw_params(spec: DomainSpec, seed: int) -> SceneParams:
    rng = np.random.default_rng(seed)
    names = [g for g, _ in spec.ground]
    w = np.array([w for _, w in spec.ground], float)
    ground = names[int(rng.choice(len(names), p=w / w.sum()))]
    return SceneParams(
        ground=ground,
        building_count=int(rng.integers(spec.building_count[0], spec.building_count[1] + 1)),
        building_height_frac=float(rng.uniform(*spec.building_height_frac)),
        tree_count=int(rng.integers(spec.tree_count[0], spec.tree_count[1] + 1)),
        horizon_frac=float(rng.uniform(*spec.horizon_frac)),
        seed=seed,
    )


def synth_domain(n: int, spec: DomainSpec, seed: int | None = None, size: int = 32) -> list[np.ndarray]:
    """``n`` scenes; scene i uses the seed derived from (master seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    master = spec.seed if seed is None else seed
    return [synth_scene(draw_params(spec, derive_seed(master, i)), size) for i in range(n)]


GREEN = DomainSpec(
    name="green", ground=(("grass", 1.0),), building_count=(0, 1), building_height_frac=(0.15, 0.4),
    tree_count=(1, 4), horizon_frac=(0.4, 0.6),
)
GREY = DomainSpec(
    name="grey", ground=(("concrete", 1.0),), building_count=(2, 4), building_height_frac=(0.5, 0.9),
    tree_count=(0, 1), horizon_frac=(0.4, 0.6),
)
# Graded overlap between domain pairs. All pairs draw on the same two ground
# materials and differ only in how strongly each domain favours one of them,
# so texture difficulty does not vary with the overlap level.
PARTIAL_A = DomainSpec(
    name="partial_a", ground=(("grass", 0.75), ("concrete", 0.25)), building_count=(0, 2),
    building_height_frac=(0.2, 0.6), tree_count=(1, 3), horizon_frac=(0.4, 0.6),
)
PARTIAL_B = DomainSpec(
    name="partial_b", ground=(("grass", 0.25), ("concrete", 0.75)), building_count=(1, 3),
    building_height_frac=(0.4, 0.8), tree_count=(0, 2), horizon_frac=(0.4, 0.6),
)
NEAR_A = DomainSpec(
    name="near_a", ground=(("grass", 0.55), ("concrete", 0.45)), building_count=(1, 2),
    building_height_frac=(0.3, 0.7), tree_count=(1, 2), horizon_frac=(0.4, 0.6),
)
NEAR_B = DomainSpec(
    name="near_b", ground=(("grass", 0.45), ("concrete", 0.55)), building_count=(1, 2),
    building_height_frac=(0.3, 0.7), tree_count=(1, 2), horizon_frac=(0.4, 0.6),
)
PRESETS = {s.name: s for s in (GREEN, GREY, PARTIAL_A, PARTIAL_B, NEAR_A, NEAR_B)}
PAIRS = {
    "disjoint": (GREEN, GREY),
    "partial": (PARTIAL_A, PARTIAL_B),
    "near": (NEAR_A, NEAR_B),
}


def _range(v, cast):
    parts = [p.strip() for p in str(v).split(",")]
    if len(parts) == 1:
        parts = parts * 2
    return (cast(parts[0]), cast(parts[1]))


def parse_domain_spec(text: str) -> DomainSpec:
    """Key-value text (``key = value`` lines, ``#`` comments) -> DomainSpec.

    ``ground`` is ``grass:0.5, gravel:0.5``; ranges are ``lo, hi``.
    """
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    known = {"name", "ground", "building_count", "building_height_frac", "tree_count", "horizon_frac", "seed"}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown keys: {sorted(unknown)}")
    args = {}
    if "name" in kv:
        args["name"] = kv["name"]
    if "ground" in kv:
        pairs = []
        for item in kv["ground"].split(","):
            g, _, w = item.strip().partition(":")
            pairs.append((g.strip(), float(w) if w else 1.0))
        args["ground"] = tuple(pairs)
    for k in ("building_count", "tree_count"):
        if k in kv:
            args[k] = _range(kv[k], int)
    for k in ("building_height_frac", "horizon_frac"):
        if k in kv:
            args[k] = _range(kv[k], float)
    if "seed" in kv:
        args["seed"] = int(kv["seed"])
    return DomainSpec(**args)


def format_domain_spec(spec: DomainSpec) -> str:
    ground = ", ".join(f"{g}:{w:g}" for g, w in spec.ground)
    lines = [
        f"name = {spec.name}",
        f"ground = {ground}",
        f"building_count = {spec.building_count[0]}, {spec.building_count[1]}",
        f"building_height_frac = {spec.building_height_frac[0]:g}, {spec.building_height_frac[1]:g}",
        f"tree_count = {spec.tree_count[0]}, {spec.tree_count[1]}",
        f"horizon_frac = {spec.horizon_frac[0]:g}, {spec.horizon_frac[1]:g}",
        f"seed = {spec.seed}",
    ]
    return "\n".join(lines) + "\n"

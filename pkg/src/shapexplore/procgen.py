"""Procedural furniture family: chairs and tables on a 1/16 lattice.

The family replaces an external shape corpus. Every shape is a union of
axis-aligned part primitives whose coordinates sit on a sixteenth-of-
the-unit-cube lattice, which buys three things:

* exact ground truth: each binary attribute (armrests, stretchers, ...)
  owns a fixed region of the cube that contains the attribute's parts
  and nothing else, so regional occupancy is a machine-checkable oracle
  for "does this shape have the attribute";
* deterministic voxelization at any resolution in [8, 32];
* deliberate 3D-to-2D information loss: a shape's depth extent (the
  viewing axis) is nearly invisible in its line rendering, which is what
  makes refining a sketch-derived code against the true shape worthwhile.

Coordinate frame: x is width, z is height, and the viewer sits at y=+inf
looking along -y, so high-y faces are the front of the furniture.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ArgumentError, ConfigError, DataError
from .util import derive_seed

CATEGORIES = ("chair", "table")
PART_ROLES = (
    "seat",
    "back",
    "leg",
    "armrest",
    "stretcher",
    "tabletop",
    "drawer",
    "shelf",
    "slat",
)
ATTRIBUTE_NAMES = ("armrest", "stretcher", "drawer", "shelf", "tall", "slatted_back")
APPLICABLE_ATTRIBUTES = {
    "chair": ("armrest", "slatted_back", "stretcher", "tall"),
    "table": ("drawer", "shelf", "stretcher", "tall"),
}

DEFAULT_RESOLUTION = 16
DEFAULT_SKETCH_WIDTH = 64
EDGE_THRESHOLD = 2.0  # voxel depth steps; strictly-greater differences draw a stroke
THETA_ATTR = 0.15  # regional mean occupancy at/above which an attribute counts as present

_L = 1.0 / 16.0  # lattice pitch


@dataclass(frozen=True)
class PartPrimitive:
    kind: str  # "box" | "cylinder" (cylinder axis is z; half_extents = (r, r, hz))
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    part_role: str

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ArgumentError(f"unknown part kind {self.kind!r}")
        if self.part_role not in PART_ROLES:
            raise ArgumentError(f"unknown part role {self.part_role!r}")
        if any(h <= 0 for h in self.half_extents):
            raise ArgumentError("half_extents must be positive")
        for c, h in zip(self.center, self.half_extents):
            if c - h < -1e-9 or c + h > 1.0 + 1e-9:
                raise ArgumentError("part exceeds the unit cube")


@dataclass(frozen=True)
class AttributeLabel:
    name: str
    # axis-aligned region (lo, hi) per axis, inside the unit cube
    region: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        if self.name not in ATTRIBUTE_NAMES:
            raise DataError(f"unknown attribute {self.name!r}")
        for lo, hi in self.region:
            if not (0.0 <= lo < hi <= 1.0):
                raise ArgumentError("region must be a nonempty box inside the unit cube")


@dataclass(frozen=True)
class ShapeSpec:
    category: str
    parts: tuple[PartPrimitive, ...]
    attributes: frozenset[str]
    seed: int

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ArgumentError(f"unknown category {self.category!r}")
        implied = implied_attributes(self.category, self.parts)
        if self.attributes != implied:
            raise ArgumentError(
                f"attribute flags {sorted(self.attributes)} do not match parts "
                f"(implied {sorted(implied)})"
            )


@dataclass
class VoxelGrid:
    resolution: int
    values: np.ndarray  # (R, R, R) indexed [ix, iy, iz], entries in [0, 1]

    def __post_init__(self):
        r = self.resolution
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (r, r, r):
            raise ArgumentError(f"values shape {self.values.shape} != ({r},{r},{r})")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise ArgumentError("voxel values must lie in [0, 1]")

    @classmethod
    def empty(cls, resolution: int) -> "VoxelGrid":
        return cls(resolution, np.zeros((resolution,) * 3))

    def binarized(self, threshold: float = 0.5) -> "VoxelGrid":
        return VoxelGrid(self.resolution, (self.values > threshold).astype(np.float64))

    def occupancy_fraction(self) -> float:
        return float(self.values.mean())


@dataclass
class SketchImage:
    width: int
    pixels: np.ndarray  # (W, W) row-major, row 0 at the top, stroke=1

    def __post_init__(self):
        w = self.width
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (w, w):
            raise ArgumentError(f"pixels shape {self.pixels.shape} != ({w},{w})")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ArgumentError("pixel values must lie in [0, 1]")

    @classmethod
    def blank(cls, width: int) -> "SketchImage":
        return cls(width, np.zeros((width, width)))


# ---------------------------------------------------------------------------
# Lattice helpers


def _box(role: str, xs: tuple[int, int], ys: tuple[int, int], zs: tuple[int, int]) -> PartPrimitive:
    """Box from lattice intervals (in sixteenths, half-open in spirit)."""
    c = tuple((a + b) / 2.0 * _L for a, b in (xs, ys, zs))
    h = tuple((b - a) / 2.0 * _L for a, b in (xs, ys, zs))
    return PartPrimitive("box", c, h, role)  # type: ignore[arg-type]


def _cyl(role: str, xs: tuple[int, int], ys: tuple[int, int], zs: tuple[int, int]) -> PartPrimitive:
    c = tuple((a + b) / 2.0 * _L for a, b in (xs, ys, zs))
    r = (xs[1] - xs[0]) / 2.0 * _L
    hz = (zs[1] - zs[0]) / 2.0 * _L
    return PartPrimitive("cylinder", c, (r, r, hz), role)  # type: ignore[arg-type]


def implied_attributes(category: str, parts: Iterable[PartPrimitive]) -> frozenset[str]:
    """Attribute flags are a pure function of the part list."""
    roles = {p.part_role for p in parts}
    attrs = set()
    if "armrest" in roles:
        attrs.add("armrest")
    if "stretcher" in roles:
        attrs.add("stretcher")
    if "drawer" in roles:
        attrs.add("drawer")
    if "shelf" in roles:
        attrs.add("shelf")
    if "slat" in roles:
        attrs.add("slatted_back")
    tall_roles = ("back", "slat", "tabletop")
    top = max(
        (p.center[2] + p.half_extents[2] for p in parts if p.part_role in tall_roles),
        default=0.0,
    )
    if top >= 12.5 * _L:
        attrs.add("tall")
    return frozenset(attrs)


# ---------------------------------------------------------------------------
# Sampling


def sample_spec(seed: int, category: str) -> ShapeSpec:
    """Deterministically sample one shape; each applicable attribute is an
    independent coin flip so presence/absence are both well covered."""
    if category not in CATEGORIES:
        raise ArgumentError(f"unknown category {category!r}")
    rng = np.random.default_rng(derive_seed("spec", category, seed))
    flags = {name: bool(rng.random() < 0.5) for name in APPLICABLE_ATTRIBUTES[category]}
    if category == "chair":
        parts = _chair_parts(rng, flags)
    else:
        parts = _table_parts(rng, flags)
    return ShapeSpec(category, tuple(parts), implied_attributes(category, parts), seed)


def _pick(rng: np.random.Generator, options: list[int]) -> int:
    return int(options[rng.integers(0, len(options))])


def _chair_parts(rng: np.random.Generator, flags: dict[str, bool]) -> list[PartPrimitive]:
    x0 = _pick(rng, [1, 2])
    w = _pick(rng, [9, 10, 11, 12])
    x1 = x0 + w
    y1 = _pick(rng, [11, 12, 13])  # front extent; back plane is fixed at y [3,5]
    hs = _pick(rng, [6, 7])  # seat top
    t = _pick(rng, [1, 2])  # leg thickness
    hb = _pick(rng, [14, 15]) if flags["tall"] else _pick(rng, [10, 11])

    parts = [_box("seat", (x0, x1), (5, y1), (hs - 1, hs))]
    for lx in ((x0, x0 + t), (x1 - t, x1)):
        parts.append(_box("leg", lx, (3, 3 + t), (0, hs - 1)))
        parts.append(_box("leg", lx, (y1 - t, y1), (0, hs - 1)))
    if flags["slatted_back"]:
        parts.append(_box("slat", (x0, x1), (3, 5), (hb - 2, hb)))  # top rail
        mid = (x0 + x1) // 2
        for sx in ((x0, x0 + 2), (mid - 1, mid + 1), (x1 - 2, x1)):
            parts.append(_box("slat", sx, (7, 8), (hs, hb - 2)))
    else:
        parts.append(_box("back", (x0, x1), (3, 5), (hs, hb)))
    if flags["armrest"]:
        # chunky bars: large enough that decoded (blurred) armrests still
        # clear the oracle region
        for ax in ((x0, x0 + 3), (x1 - 3, x1)):
            parts.append(_box("armrest", ax, (6, y1 - 1), (8, 11)))
            parts.append(_box("armrest", ax, (y1 - 3, y1 - 1), (hs, 8)))
    if flags["stretcher"]:
        parts.append(_box("stretcher", (x0, x0 + 1), (5, y1), (2, 4)))
        parts.append(_box("stretcher", (x1 - 1, x1), (5, y1), (2, 4)))
        parts.append(_box("stretcher", (x0, x1), (7, 9), (2, 4)))
    return parts


def _table_parts(rng: np.random.Generator, flags: dict[str, bool]) -> list[PartPrimitive]:
    x0 = 2
    w = _pick(rng, [10, 11, 12])
    x1 = x0 + w
    y1 = _pick(rng, [11, 12, 13])
    t = _pick(rng, [1, 2])
    round_legs = bool(rng.random() < 0.5)
    h = _pick(rng, [13, 14]) if flags["tall"] else _pick(rng, [8, 9])

    parts = [_box("tabletop", (x0, x1), (3, y1), (h - 2, h))]
    make_leg = _cyl if round_legs else _box
    for lx in ((x0, x0 + t), (x1 - t, x1)):
        for ly in ((3, 3 + t), (y1 - t, y1)):
            parts.append(make_leg("leg", lx, ly, (0, h - 2)))
    if flags["drawer"]:
        # front drawer box at a height independent of the tabletop so its
        # rendered signature is the same rows for every table; big enough to
        # dominate the front view and survive decoder blur
        parts.append(_box("drawer", (x0 + 1, x1 - 1), (12, 15), (4, 6)))
    if flags["shelf"]:
        parts.append(_box("shelf", (x0 + 1, x1 - 1), (4, y1 - 1), (3, 4)))
    if flags["stretcher"]:
        parts.append(_box("stretcher", (x0, x0 + 1), (4, y1), (1, 3)))
        parts.append(_box("stretcher", (x1 - 1, x1), (4, y1), (1, 3)))
        parts.append(_box("stretcher", (x0, x1), (7, 9), (1, 3)))
    return parts


# ---------------------------------------------------------------------------
# Voxelization


def voxelize(spec: ShapeSpec, resolution: int = DEFAULT_RESOLUTION) -> VoxelGrid:
    """Binary occupancy: a voxel is occupied iff its center lies inside the
    union of part primitives (boxes closed, cylinders closed)."""
    if not (8 <= resolution <= 32):
        raise ConfigError(f"resolution {resolution} outside [8, 32]")
    r = resolution
    axis = (np.arange(r) + 0.5) / r
    cx, cy, cz = np.meshgrid(axis, axis, axis, indexing="ij")
    occupied = np.zeros((r, r, r), dtype=bool)
    for p in spec.parts:
        px, py, pz = p.center
        hx, hy, hz = p.half_extents
        inz = np.abs(cz - pz) <= hz
        if p.kind == "box":
            mask = (np.abs(cx - px) <= hx) & (np.abs(cy - py) <= hy) & inz
        else:
            mask = ((cx - px) ** 2 + (cy - py) ** 2 <= hx * hx) & inz
        occupied |= mask
    return VoxelGrid(r, occupied.astype(np.float64))


# ---------------------------------------------------------------------------
# Sketch rendering


def render_sketch(grid: VoxelGrid, width: int = DEFAULT_SKETCH_WIDTH) -> SketchImage:
    """Orthographic front view (looking along -y) as a line drawing.

    Per pixel column, march the ray front-to-back and record the first-hit
    depth in voxel steps; a pixel becomes a stroke when it hits geometry
    and any 4-neighbor either misses or differs in depth by more than
    EDGE_THRESHOLD. Off-image neighbors count as misses.
    """
    if width < grid.resolution:
        raise ArgumentError("sketch width must be at least the voxel resolution")
    r = grid.resolution
    occ = grid.values > 0.5

    # first occupied voxel from the viewer side (large y first)
    hit_col = occ.any(axis=1)  # (ix, iz)
    iy_first = (r - 1) - np.argmax(occ[:, ::-1, :], axis=1)  # valid only where hit_col
    depth_col = np.where(hit_col, (r - 1) - iy_first, 1e9).astype(np.float64)

    # map pixels to voxel columns: column u -> x, row v -> z (row 0 on top)
    u = np.arange(width)
    ix = ((u + 0.5) * r / width).astype(int)
    v = np.arange(width)
    iz = (((width - 1 - v) + 0.5) * r / width).astype(int)
    hit = hit_col[np.ix_(ix, iz)].T  # (row, col)
    depth = depth_col[np.ix_(ix, iz)].T

    big = 1e9
    dpad = np.pad(depth, 1, constant_values=big)
    hpad = np.pad(hit, 1, constant_values=False)
    stroke = np.zeros_like(hit)
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nd = dpad[1 + dr : 1 + dr + width, 1 + dc : 1 + dc + width]
        nh = hpad[1 + dr : 1 + dr + width, 1 + dc : 1 + dc + width]
        differs = (~nh) | (np.abs(depth - nd) > EDGE_THRESHOLD)
        stroke |= hit & differs
    return SketchImage(width, stroke.astype(np.float64))


# ---------------------------------------------------------------------------
# Captions


_PHRASES = {
    "armrest": "armrests",
    "drawer": "a drawer",
    "shelf": "a shelf",
    "slatted_back": "a slatted back",
    "stretcher": "stretchers",
}


def caption_for(spec: ShapeSpec) -> str:
    """Deterministic template caption; attribute phrases in sorted name order."""
    tall = "tall" in spec.attributes
    withs = sorted(a for a in spec.attributes if a != "tall")
    head = f"a tall {spec.category}" if tall else f"a {spec.category}"
    if not spec.attributes:
        return f"a plain {spec.category}"
    if not withs:
        return head
    return head + " with " + " and ".join(_PHRASES[a] for a in withs)


def caption_words() -> list[str]:
    """Closed word set every caption draws from."""
    words = {"a", "plain", "tall", "with", "and"} | set(CATEGORIES)
    for phrase in _PHRASES.values():
        words.update(phrase.split())
    return sorted(words)


# ---------------------------------------------------------------------------
# Attribute oracle


# Regions in sixteenths: ((x_lo, x_hi), (y_lo, y_hi), (z_lo, z_hi)).
_REGIONS = {
    ("chair", "armrest"): ((0, 16), (6, 11), (8, 10)),
    ("chair", "stretcher"): ((4, 10), (7, 9), (2, 4)),
    ("chair", "tall"): ((2, 14), (3, 5), (12, 15)),
    ("chair", "slatted_back"): ((2, 14), (7, 8), (7, 8)),
    ("table", "drawer"): ((4, 10), (13, 15), (4, 6)),
    ("table", "shelf"): ((4, 10), (5, 10), (3, 4)),
    ("table", "stretcher"): ((4, 10), (7, 9), (1, 3)),
    ("table", "tall"): ((0, 16), (0, 16), (11, 14)),
}


def attribute_label(category: str, name: str) -> AttributeLabel:
    key = (category, name)
    if key not in _REGIONS:
        raise DataError(f"attribute {name!r} is not defined for category {category!r}")
    region = tuple((lo * _L, hi * _L) for lo, hi in _REGIONS[key])
    return AttributeLabel(name, region)  # type: ignore[arg-type]


def attribute_score(grid: VoxelGrid, label: AttributeLabel) -> float:
    """Mean occupancy of the label's region; classify present at >= THETA_ATTR.

    Region membership uses half-open intervals over voxel centers so each
    lattice cell belongs to exactly one region row.
    """
    r = grid.resolution
    centers = (np.arange(r) + 0.5) / r
    sel = []
    for lo, hi in label.region:
        sel.append((centers >= lo) & (centers < hi))
    mask = sel[0][:, None, None] & sel[1][None, :, None] & sel[2][None, None, :]
    if not mask.any():
        return 0.0
    return float(grid.values[mask].mean())


def has_attribute(grid: VoxelGrid, category: str, name: str, theta: float = THETA_ATTR) -> bool:
    return attribute_score(grid, attribute_label(category, name)) >= theta


def classify_attributes(grid: VoxelGrid, category: str, theta: float = THETA_ATTR) -> frozenset[str]:
    """Oracle classification over every attribute applicable to the category."""
    return frozenset(
        name for name in APPLICABLE_ATTRIBUTES[category] if has_attribute(grid, category, name, theta)
    )


# ---------------------------------------------------------------------------
# Sketch edits


def apply_sketch_edit(sketch: SketchImage, edit: dict) -> SketchImage:
    """Apply one edit op; pixels outside the declared region are untouched.

    Ops (pixel coordinates, x = column, y = row, all integers):
      {"op": "erase_rect", "x", "y", "width", "height"}
      {"op": "draw_segment", "x0", "y0", "x1", "y1"}
      {"op": "paste_patch", "src": SketchImage, "src_x", "src_y",
       "width", "height", "dst_x", "dst_y"}
    """
    if "op" not in edit:
        raise ArgumentError("edit needs an 'op' field")
    op = edit["op"]
    w = sketch.width
    px = sketch.pixels.copy()

    def check_rect(x: int, y: int, rw: int, rh: int, what: str) -> None:
        if rw <= 0 or rh <= 0 or x < 0 or y < 0 or x + rw > w or y + rh > w:
            raise ArgumentError(f"{what} rectangle out of bounds")

    if op == "erase_rect":
        x, y, rw, rh = (int(edit[k]) for k in ("x", "y", "width", "height"))
        check_rect(x, y, rw, rh, "erase")
        px[y : y + rh, x : x + rw] = 0.0
    elif op == "draw_segment":
        x0, y0, x1, y1 = (int(edit[k]) for k in ("x0", "y0", "x1", "y1"))
        for xx, yy in ((x0, y0), (x1, y1)):
            if not (0 <= xx < w and 0 <= yy < w):
                raise ArgumentError("segment endpoint out of bounds")
        for xx, yy in _bresenham(x0, y0, x1, y1):
            px[yy, xx] = 1.0
    elif op == "paste_patch":
        src = edit["src"]
        if not isinstance(src, SketchImage):
            raise ArgumentError("paste_patch needs a SketchImage source")
        sx, sy, rw, rh, dx, dy = (
            int(edit[k]) for k in ("src_x", "src_y", "width", "height", "dst_x", "dst_y")
        )
        if rw <= 0 or rh <= 0 or sx < 0 or sy < 0 or sx + rw > src.width or sy + rh > src.width:
            raise ArgumentError("source rectangle out of bounds")
        check_rect(dx, dy, rw, rh, "destination")
        px[dy : dy + rh, dx : dx + rw] = src.pixels[sy : sy + rh, sx : sx + rw]
    else:
        raise ArgumentError(f"unknown edit op {op!r}")
    return SketchImage(w, px)


def _bresenham(x0: int, y0: int, x1: int, y1: int) -> list[tuple[int, int]]:
    points = []
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    x, y = x0, y0
    while True:
        points.append((x, y))
        if x == x1 and y == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x += sx
        if e2 <= dx:
            err += dx
            y += sy
    return points


def region_pixel_rect(label: AttributeLabel, width: int) -> tuple[int, int, int, int]:
    """Project an attribute region to sketch pixels: (x, y, w, h).

    Useful for constructing edits that target an attribute (e.g. erase the
    stretcher area of a rendering).
    """
    (xlo, xhi), _, (zlo, zhi) = label.region
    x0 = int(np.floor(xlo * width))
    x1 = int(np.ceil(xhi * width))
    # row 0 is the top (z = 1)
    y0 = int(np.floor((1.0 - zhi) * width))
    y1 = int(np.ceil((1.0 - zlo) * width))
    return x0, y0, x1 - x0, y1 - y0

"""Conductor layouts as nodal density fields on a fixed grid.

A layout lives on an nx x ny node grid. Fixed regions (port pads, component
pads, clearance) are always conductor or always void; the rectangular design
window in between carries the per-node densities that the optimizer works on.
Initial layouts are drawn from a six-curve quadratic Bezier model whose
endpoints are pinned to the pads, so every seed wires up the filter circuit:
port1 -> A, A -> C1, A -> L1(left), L1(right) -> B, B -> C2, B -> port2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

PAD_NAMES = ("port1", "port2", "c1", "c2", "l1_left", "l1_right")

# curve index -> (start anchor, end anchor); None marks the free branch
# points A and B
CURVE_WIRING = (
    ("port1", None),      # port1 -> A
    (None, "c1"),         # A -> C1
    (None, "l1_left"),    # A -> L1 left terminal
    ("l1_right", None),   # L1 right terminal -> B
    (None, "c2"),         # B -> C2
    (None, "port2"),      # B -> port2
)
_A_CURVES = (0, 1, 2)     # curves whose free end is point A
MAX_CURVE_SAMPLES = 1 << 14


class GridError(ValueError):
    pass


@dataclass
class GridGeometry:
    """Desk-scale board geometry; all pad placement choices are explicit."""

    design_nx: int = 48
    design_ny: int = 32
    margin: int = 3
    pitch: float = 2.64e-3
    port_pad_height: int = 0          # 0 -> derived from design_ny
    bottom_pad_width: int = 0         # 0 -> derived from design_nx
    pad_centers: dict = dc_field(default_factory=lambda: {
        "c1": 0.18, "l1_left": 0.40, "l1_right": 0.60, "c2": 0.82,
    })

    def __post_init__(self):
        if self.port_pad_height <= 0:
            self.port_pad_height = max(2, round(self.design_ny / 5))
        if self.bottom_pad_width <= 0:
            self.bottom_pad_width = max(1, round(self.design_nx / 12))


class Grid:
    """Node grid with fixed conductor/void regions and named pads.

    fixed_conductor, fixed_void and design_nodes partition the node set.
    design_nodes must enumerate a rectangular window in row-major order.
    """

    def __init__(self, nx, ny, pitch, fixed_conductor, fixed_void,
                 design_nodes, pads):
        if nx < 2 or ny < 2:
            raise GridError("grid needs at least 2x2 nodes")
        if pitch <= 0:
            raise GridError("pitch must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.pitch = float(pitch)
        n = self.nx * self.ny

        self.fixed_conductor = frozenset(int(i) for i in fixed_conductor)
        self.fixed_void = frozenset(int(i) for i in fixed_void)
        self.design_nodes = np.asarray(design_nodes, dtype=np.intp)
        self.pads = {name: tuple(sorted(int(i) for i in nodes))
                     for name, nodes in pads.items()}

        dset = set(self.design_nodes.tolist())
        if len(dset) != self.design_nodes.size:
            raise GridError("design_nodes contains duplicates")
        if (self.fixed_conductor & self.fixed_void or
                self.fixed_conductor & dset or self.fixed_void & dset):
            raise GridError("fixed_conductor, fixed_void, design_nodes overlap")
        union = self.fixed_conductor | self.fixed_void | dset
        if union != set(range(n)):
            raise GridError("node sets do not cover the grid exactly")
        for name in PAD_NAMES:
            nodes = self.pads.get(name)
            if not nodes:
                raise GridError(f"pad {name!r} is missing or empty")
            if set(nodes) & self.fixed_void:
                raise GridError(f"pad {name!r} intersects fixed_void")
            if not all(0 <= i < n for i in nodes):
                raise GridError(f"pad {name!r} has out-of-range nodes")

        self._find_design_window()
        self._build_edges()
        self._build_anchors()

    # -- derived structure ---------------------------------------------------

    def _find_design_window(self):
        xs = self.design_nodes % self.nx
        ys = self.design_nodes // self.nx
        x0, x1 = int(xs.min()), int(xs.max())
        y0, y1 = int(ys.min()), int(ys.max())
        wnx, wny = x1 - x0 + 1, y1 - y0 + 1
        expect = (np.arange(y0, y1 + 1)[:, None] * self.nx
                  + np.arange(x0, x1 + 1)[None, :]).ravel()
        if self.design_nodes.size != wnx * wny or \
                not np.array_equal(self.design_nodes, expect):
            raise GridError("design_nodes must be a row-major rectangle")
        self.window_x0, self.window_y0 = x0, y0
        self.window_nx, self.window_ny = wnx, wny

    def _build_edges(self):
        idx = np.arange(self.nx * self.ny).reshape(self.ny, self.nx)
        self.edge_a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        self.edge_b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])

    def _build_anchors(self):
        """Pad anchors: pad centroids clamped onto the design window."""
        x0 = self.window_x0 * self.pitch
        y0 = self.window_y0 * self.pitch
        x1 = (self.window_x0 + self.window_nx - 1) * self.pitch
        y1 = (self.window_y0 + self.window_ny - 1) * self.pitch
        self.anchors = {}
        for name in PAD_NAMES:
            nodes = np.asarray(self.pads[name])
            cx = (nodes % self.nx).mean() * self.pitch
            cy = (nodes // self.nx).mean() * self.pitch
            self.anchors[name] = np.array([min(max(cx, x0), x1),
                                           min(max(cy, y0), y1)])

    # -- convenience ---------------------------------------------------------

    @property
    def n_nodes(self):
        return self.nx * self.ny

    @property
    def n_design(self):
        return int(self.design_nodes.size)

    @property
    def design_shape(self):
        """(window_ny, window_nx) for reshaping design vectors."""
        return self.window_ny, self.window_nx

    def design_coords(self):
        """(n_design, 2) node coordinates in meters."""
        xs = (self.design_nodes % self.nx) * self.pitch
        ys = (self.design_nodes // self.nx) * self.pitch
        return np.column_stack([xs, ys])

    def window_rect(self):
        """Design window bounds in meters: (x_lo, y_lo, x_hi, y_hi)."""
        return (self.window_x0 * self.pitch,
                self.window_y0 * self.pitch,
                (self.window_x0 + self.window_nx - 1) * self.pitch,
                (self.window_y0 + self.window_ny - 1) * self.pitch)

    def signature(self):
        return (self.nx, self.ny, self.n_design)


def _rect(nx, x0, y0, x1, y1):
    return [y * nx + x for y in range(y0, y1) for x in range(x0, x1)]


def make_grid(geom: GridGeometry) -> Grid:
    """Build the standard board: ports on the side margins at mid height,
    component pads in the bottom margin, design window in between."""
    dnx, dny, m = geom.design_nx, geom.design_ny, geom.margin
    if dnx < 8 or dny < 6:
        raise GridError("design window must be at least 8x6 nodes")
    if m < 2:
        raise GridError("margin must be at least 2 nodes")
    nx, ny = dnx + 2 * m, dny + 2 * m

    ph = min(geom.port_pad_height, dny)
    py0 = m + (dny - ph) // 2
    pads = {
        "port1": _rect(nx, 0, py0, m, py0 + ph),
        "port2": _rect(nx, nx - m, py0, nx, py0 + ph),
    }

    pw = geom.bottom_pad_width
    spans = {}
    for name in ("c1", "l1_left", "l1_right", "c2"):
        c = m + round(geom.pad_centers[name] * (dnx - 1))
        x0 = c - (pw - 1) // 2
        spans[name] = [x0, x0 + pw]
    # keep at least one void column between l1 terminals: a touching pair
    # would short the inductor
    if spans["l1_right"][0] <= spans["l1_left"][1]:
        shift = spans["l1_left"][1] + 1 - spans["l1_right"][0]
        spans["l1_right"][0] += shift
        spans["l1_right"][1] += shift
    prev = None
    for name in ("c1", "l1_left", "l1_right", "c2"):
        x0, x1 = spans[name]
        if x0 < m or x1 > m + dnx:
            raise GridError(f"bottom pad {name!r} leaves the design span")
        if prev is not None and x0 <= prev:
            raise GridError(f"bottom pad {name!r} touches its neighbor")
        prev = x1
        pads[name] = _rect(nx, x0, 0, x1, m)

    design = _rect(nx, m, m, m + dnx, m + dny)
    pad_all = set()
    for nodes in pads.values():
        pad_all.update(nodes)
    void = set(range(nx * ny)) - pad_all - set(design)
    return Grid(nx, ny, geom.pitch, pad_all, void, design, pads)


# -- Bezier seeding ----------------------------------------------------------

@dataclass
class ParametricSeed:
    """Branch points A/B, one control point per curve, stroke geometry.

    Coordinates are meters in the grid frame (node (ix, iy) sits at
    (ix*pitch, iy*pitch)).
    """

    point_a: np.ndarray
    point_b: np.ndarray
    control: np.ndarray          # (6, 2)
    halfwidth: float
    transition: float

    def __post_init__(self):
        self.point_a = np.asarray(self.point_a, dtype=float)
        self.point_b = np.asarray(self.point_b, dtype=float)
        self.control = np.asarray(self.control, dtype=float)
        if self.control.shape != (6, 2):
            raise ValueError("control must be six 2D points")
        if self.halfwidth <= 0 or self.transition <= 0:
            raise ValueError("halfwidth and transition must be positive")


@dataclass
class SeedBounds:
    """Per-parameter uniform ranges for random seeds, in meters."""

    a_lo: np.ndarray
    a_hi: np.ndarray
    b_lo: np.ndarray
    b_hi: np.ndarray
    c_lo: np.ndarray             # (6, 2)
    c_hi: np.ndarray
    halfwidth: tuple
    transition: float


def make_seed_bounds(grid, a_x=(0.08, 0.38), a_y=(0.10, 0.90),
                     b_x=(0.62, 0.92), b_y=(0.10, 0.90),
                     c_x=(0.0, 1.0), c_y=(0.0, 1.0),
                     halfwidth_pitch=(2.0, 6.0),
                     transition_pitch=1.5) -> SeedBounds:
    """Turn window-fraction ranges into meter-space bounds."""
    x_lo, y_lo, x_hi, y_hi = grid.window_rect()
    w, h = x_hi - x_lo, y_hi - y_lo

    def pt(fx, fy):
        return np.array([x_lo + fx * w, y_lo + fy * h])

    return SeedBounds(
        a_lo=pt(a_x[0], a_y[0]), a_hi=pt(a_x[1], a_y[1]),
        b_lo=pt(b_x[0], b_y[0]), b_hi=pt(b_x[1], b_y[1]),
        c_lo=np.tile(pt(c_x[0], c_y[0]), (6, 1)),
        c_hi=np.tile(pt(c_x[1], c_y[1]), (6, 1)),
        halfwidth=(halfwidth_pitch[0] * grid.pitch,
                   halfwidth_pitch[1] * grid.pitch),
        transition=transition_pitch * grid.pitch,
    )


def bezier_point(p0, p1, p2, t):
    """Quadratic Bezier point (1-t)^2 p0 + 2t(1-t) p1 + t^2 p2."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t ** 2 * p2


def _sample_curve(p0, p1, p2, max_spacing):
    """Polyline samples of one curve, refined until no segment exceeds
    max_spacing. Starts at 64 points."""
    n = 64
    while True:
        t = np.linspace(0.0, 1.0, n)[:, None]
        pts = (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t ** 2 * p2
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if seg.size == 0 or seg.max() <= max_spacing or n >= MAX_CURVE_SAMPLES:
            return pts
        n *= 2


def seed_curves(seed: ParametricSeed, grid: Grid):
    """The six (p0, control, p2) triples in circuit wiring order."""
    curves = []
    for i, (start, end) in enumerate(CURVE_WIRING):
        free = seed.point_a if i in _A_CURVES else seed.point_b
        p0 = grid.anchors[start] if start is not None else free
        p2 = grid.anchors[end] if end is not None else free
        curves.append((np.asarray(p0, float), seed.control[i],
                       np.asarray(p2, float)))
    return curves


def _check_in_window(grid, points, what):
    x_lo, y_lo, x_hi, y_hi = grid.window_rect()
    pts = np.atleast_2d(points)
    eps = 1e-9 * grid.pitch
    ok = ((pts[:, 0] >= x_lo - eps) & (pts[:, 0] <= x_hi + eps) &
          (pts[:, 1] >= y_lo - eps) & (pts[:, 1] <= y_hi + eps))
    if not ok.all():
        raise ValueError(f"{what} outside the design domain")


def rasterize_seed(seed: ParametricSeed, grid: Grid) -> np.ndarray:
    """Density field of the stroked six-curve skeleton.

    Each design node gets clamp(0.5 + (halfwidth - d)/transition, 0, 1)
    where d is its distance to the nearest polyline sample point.
    """
    _check_in_window(grid, seed.point_a, "point A")
    _check_in_window(grid, seed.point_b, "point B")
    _check_in_window(grid, seed.control, "control points")
    pts = np.vstack([_sample_curve(p0, p1, p2, grid.pitch / 2)
                     for p0, p1, p2 in seed_curves(seed, grid)])
    d, _ = cKDTree(pts).query(grid.design_coords())
    return np.clip(0.5 + (seed.halfwidth - d) / seed.transition, 0.0, 1.0)


def random_seed(rng, grid: Grid, bounds: SeedBounds) -> ParametricSeed:
    """Draw one seed with every free parameter uniform within its bound;
    the pad-side curve endpoints are fixed anchors and never randomized."""
    for lo, hi, what in ((bounds.a_lo, bounds.a_hi, "point A bounds"),
                         (bounds.b_lo, bounds.b_hi, "point B bounds"),
                         (bounds.c_lo, bounds.c_hi, "control bounds")):
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise ValueError(f"empty {what}")
        _check_in_window(grid, lo, what)
        _check_in_window(grid, hi, what)
    if bounds.halfwidth[0] > bounds.halfwidth[1] or bounds.halfwidth[0] <= 0:
        raise ValueError("empty halfwidth bounds")

    a = rng.uniform(bounds.a_lo, bounds.a_hi)
    b = rng.uniform(bounds.b_lo, bounds.b_hi)
    c = rng.uniform(bounds.c_lo, bounds.c_hi)
    hw = rng.uniform(bounds.halfwidth[0], bounds.halfwidth[1])
    return ParametricSeed(point_a=a, point_b=b, control=c,
                          halfwidth=float(hw), transition=bounds.transition)


def reference_seed(grid: Grid, halfwidth=None, transition=None) -> ParametricSeed:
    """Plain hand-routed layout: straight runs at mid height with drops to
    the component pads. Baseline for sweeps and insertion studies."""
    p = grid.pitch
    hw = 3.0 * p if halfwidth is None else halfwidth
    tr = 1.5 * p if transition is None else transition
    _, y_lo, _, y_hi = grid.window_rect()
    y_mid = round((y_lo + y_hi) / 2 / p) * p
    anch = grid.anchors
    a = np.array([anch["c1"][0], y_mid])
    b = np.array([anch["c2"][0], y_mid])
    control = np.array([
        (anch["port1"] + a) / 2,
        (a + anch["c1"]) / 2,
        [anch["l1_left"][0], y_mid],
        [anch["l1_right"][0], y_mid],
        (b + anch["c2"]) / 2,
        (b + anch["port2"]) / 2,
    ])
    return ParametricSeed(point_a=a, point_b=b, control=control,
                          halfwidth=hw, transition=tr)


# -- normalization -----------------------------------------------------------

def normalize(values: np.ndarray, grid: Grid, transition: float) -> np.ndarray:
    """Rebuild the field as a clamped signed-distance ramp around its 0.5
    contour, so densities are 0 or 1 outside a band of the given width.

    Contour samples are the midpoints of window edges whose endpoints lie on
    opposite sides of 0.5. Because re-application sees the same side
    assignment, the operation is exactly idempotent. A field with no
    crossings collapses to all-0 or all-1.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_design,):
        raise ValueError("field length does not match grid design nodes")
    wny, wnx = grid.design_shape
    f = values.reshape(wny, wnx)
    inside = f >= 0.5

    pts = []
    m = inside[:, :-1] != inside[:, 1:]
    iy, ix = np.nonzero(m)
    pts.append(np.column_stack([ix + 0.5, iy.astype(float)]))
    m = inside[:-1, :] != inside[1:, :]
    iy, ix = np.nonzero(m)
    pts.append(np.column_stack([ix.astype(float), iy + 0.5]))
    pts = np.vstack(pts)

    if pts.shape[0] == 0:
        return (np.ones if inside.all() else np.zeros)(grid.n_design)

    xs, ys = np.meshgrid(np.arange(wnx, dtype=float),
                         np.arange(wny, dtype=float))
    d, _ = cKDTree(pts * grid.pitch).query(
        np.column_stack([xs.ravel(), ys.ravel()]) * grid.pitch)
    sign = np.where(inside.ravel(), 1.0, -1.0)
    return np.clip(0.5 + sign * d / transition, 0.0, 1.0)


# -- resolved layouts and rendering -------------------------------------------

@dataclass
class ResolvedLayout:
    """Full nodal density vector: fixed conductor pinned to 1, fixed void to
    0, design nodes taken from the density field."""

    grid: Grid
    full: np.ndarray


def resolve(grid: Grid, values: np.ndarray) -> ResolvedLayout:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_design,):
        raise ValueError("field length does not match grid design nodes")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("densities must lie in [0, 1]")
    full = np.zeros(grid.n_nodes)
    if grid.fixed_conductor:
        full[list(grid.fixed_conductor)] = 1.0
    full[grid.design_nodes] = values
    return ResolvedLayout(grid=grid, full=full)


def render_svg(layout: ResolvedLayout, path):
    """One rect per node with resolved density >= 0.5; pads in a distinct
    color. Coordinates in millimeters, y up."""
    grid = layout.grid
    cell = grid.pitch * 1e3
    w, h = grid.nx * cell, grid.ny * cell
    pad_nodes = set()
    for nodes in grid.pads.values():
        pad_nodes.update(nodes)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {w:.3f} {h:.3f}" width="{w:.3f}mm" height="{h:.3f}mm">',
        f'<rect x="0" y="0" width="{w:.3f}" height="{h:.3f}" fill="#ffffff"/>',
    ]
    for n in np.nonzero(layout.full >= 0.5)[0]:
        ix, iy = int(n) % grid.nx, int(n) // grid.nx
        color = "#b03434" if n in pad_nodes else "#3a3a3a"
        x = ix * cell
        y = (grid.ny - 1 - iy) * cell
        lines.append(f'<rect x="{x:.3f}" y="{y:.3f}" width="{cell:.3f}" '
                     f'height="{cell:.3f}" fill="{color}"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# -- layout files -------------------------------------------------------------

LAYOUT_FORMAT = "ddtd-emi-layout-1"


def save_layout(path, grid: Grid, values: np.ndarray):
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_design,):
        raise ValueError("field length does not match grid design nodes")
    doc = {
        "format": LAYOUT_FORMAT,
        "design_nx": grid.window_nx,
        "design_ny": grid.window_ny,
        "values": [round(float(v), 6) for v in values],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_layout(path, grid: Grid) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != LAYOUT_FORMAT:
        raise ValueError(f"not a layout file: {path}")
    if (doc["design_nx"], doc["design_ny"]) != (grid.window_nx, grid.window_ny):
        raise ValueError("layout design shape does not match the grid")
    values = np.asarray(doc["values"], dtype=float)
    if values.shape != (grid.n_design,):
        raise ValueError("layout value count does not match the grid")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("layout densities must lie in [0, 1]")
    return values

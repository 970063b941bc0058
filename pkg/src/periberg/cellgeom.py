"""Periodic cell geometry.

A channel domain Pi, invariant under z -> z + 1, is described by one period
cell: an open region between two polylines, glued to its neighbors through
vertical junction segments at integer real parts. This module validates cell
descriptions, decomposes the cell into quadrature slabs, and provides the
exponential map E(z) = exp(i 2 pi z) together with its branch-aware inverse.

The logarithm convention: the cut of log sits on the positive real axis of
the image plane (the image of the junctions), and the argument window is
(0, 2pi) for interior points. Side tags select the one-sided limit on the
cut itself; the two windows differ by exactly 2pi there.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Polygon

GEOM_TOL = 1e-12


class InvalidCell(Exception):
    """Cell description violates a geometric invariant."""


class BranchViolation(Exception):
    """Point is not consistent with the requested branch tag."""


class InvalidDelta(Exception):
    """Sector half-angle outside (0, 1)."""


# ---------------------------------------------------------------------------
# cell specification


@dataclass(frozen=True)
class PeriodicCellSpec:
    """One period of the channel boundary.

    upper_polyline and lower_polyline are vertex tuples listed from Re = 1
    down to Re = 0 (the period seam vertices at both ends describe the same
    boundary point, one period apart). beta_upper/beta_lower hold one
    turning exponent per vertex; the interior angle at a vertex is
    pi*(beta+1), and each polyline's exponents sum to zero. junction is the
    open vertical interval (a, b) shared with the neighboring period at
    integer real parts. height_bound is a stated bound M on |Im| over all
    vertices. The period is always 1.
    """

    upper_polyline: tuple
    lower_polyline: tuple
    beta_upper: tuple
    beta_lower: tuple
    junction: tuple
    height_bound: float

    period = 1.0

    def to_dict(self):
        return {
            "upper_vertices": [[v.real, v.imag] for v in self.upper_polyline],
            "lower_vertices": [[v.real, v.imag] for v in self.lower_polyline],
            "beta_upper": list(self.beta_upper),
            "beta_lower": list(self.beta_lower),
            "junction": [self.junction[0], self.junction[1]],
            "height_bound": self.height_bound,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            upper = tuple(complex(p[0], p[1]) for p in data["upper_vertices"])
            lower = tuple(complex(p[0], p[1]) for p in data["lower_vertices"])
            bu = tuple(float(b) for b in data["beta_upper"])
            bl = tuple(float(b) for b in data["beta_lower"])
            junction = (float(data["junction"][0]), float(data["junction"][1]))
            hb = float(data["height_bound"])
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise InvalidCell(f"malformed cell description: {exc}") from exc
        return cls(upper, lower, bu, bl, junction, hb)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidCell(f"cell file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def rectangle_cell(h):
    """Straight channel of half-height h: the cell (0,1) x (-h, h)."""
    return PeriodicCellSpec(
        upper_polyline=(complex(1.0, h), complex(0.0, h)),
        lower_polyline=(complex(1.0, -h), complex(0.0, -h)),
        beta_upper=(0.0, 0.0),
        beta_lower=(0.0, 0.0),
        junction=(-h, h),
        height_bound=h + 1.0,
    )


def zigzag_cell(mid_offset=0.5, end_height=0.25):
    """Symmetric zigzag channel (canonical nontrivial test geometry).

    The upper boundary rises from (0, e) to a peak (1/2, e + m) and back;
    the lower boundary mirrors it downward. The turning exponent at the
    mid-period vertices is -(2/pi) atan(2 m) (equal to -1/2 when m = 1/2),
    and the period-seam corners carry the opposite exponent, so each
    polyline sums to zero. Small m gives a gently perturbed strip.
    """
    m = float(mid_offset)
    e = float(end_height)
    if m <= 0 or e <= 0:
        raise InvalidCell("zigzag_cell needs positive offsets")
    b_mid = -2.0 * math.atan(2.0 * m) / math.pi
    b_seam = -b_mid
    upper = (complex(1.0, e), complex(0.5, e + m), complex(0.0, e))
    lower = (complex(1.0, -e), complex(0.5, -e - m), complex(0.0, -e))
    return PeriodicCellSpec(
        upper_polyline=upper,
        lower_polyline=lower,
        beta_upper=(b_seam, b_mid, 0.0),
        beta_lower=(b_seam, b_mid, 0.0),
        junction=(-e, e),
        height_bound=e + m + 1.0,
    )


# ---------------------------------------------------------------------------
# validation and quadrature decomposition


def _validate_polyline(name, verts, betas, hb):
    if len(verts) < 2:
        raise InvalidCell(f"{name} needs at least two vertices")
    if len(betas) != len(verts):
        raise InvalidCell(f"{name}: one turning exponent per vertex required")
    if abs(verts[0].real - 1.0) > GEOM_TOL:
        raise InvalidCell(f"{name}: first vertex must have Re = 1")
    if abs(verts[-1].real) > GEOM_TOL:
        raise InvalidCell(f"{name}: last vertex must have Re = 0")
    for v in verts:
        if v.real < -GEOM_TOL or v.real > 1.0 + GEOM_TOL:
            raise InvalidCell(f"{name}: vertex {v} outside the period strip")
        if abs(v.imag) > hb + GEOM_TOL:
            raise InvalidCell(f"{name}: vertex {v} above the height bound")
    if abs(verts[0].imag - verts[-1].imag) > GEOM_TOL:
        raise InvalidCell(
            f"{name}: endpoint heights differ, boundary is not periodic"
        )
    if abs(sum(betas)) > 1e-12:
        raise InvalidCell(f"{name}: turning exponents sum to {sum(betas)}, not 0")
    xs = [v.real for v in verts]
    for x0, x1 in zip(xs, xs[1:]):
        if x1 >= x0 - GEOM_TOL:
            raise InvalidCell(
                f"{name}: vertices must be strictly decreasing in Re "
                "(the slab decomposition needs single-valued boundaries)"
            )


def _piecewise_linear(verts):
    # segments in left-to-right order: (xL, xR, yL, yR)
    segs = []
    pts = list(reversed(verts))
    for p, q in zip(pts, pts[1:]):
        segs.append((p.real, q.real, p.imag, q.imag))
    return segs


def _boundary_y(segs, x):
    for xl, xr, yl, yr in segs:
        if xl - GEOM_TOL <= x <= xr + GEOM_TOL:
            if xr == xl:
                return 0.5 * (yl + yr)
            t = (x - xl) / (xr - xl)
            return yl + t * (yr - yl)
    raise InvalidCell(f"no boundary segment covers x = {x}")


@dataclass
class _Slab:
    x0: float
    x1: float
    y_lo0: float
    y_lo1: float
    y_hi0: float
    y_hi1: float
    x_nodes: np.ndarray
    wx: np.ndarray
    t_nodes: np.ndarray
    wt: np.ndarray


class CellRegion:
    """Quadrature decomposition of a cell into vertical trapezoid slabs.

    Slab boundaries sit at the vertex abscissae, so each slab has affine
    upper and lower boundaries and the tensor Gauss-Legendre rule on it is
    geometrically exact. ``nodes`` and ``weights`` expose the combined
    rule; ``refined()`` doubles both orders for error estimation.
    """

    def __init__(self, spec, nx=32, ny=32):
        self.spec = spec
        self.nx = nx
        self.ny = ny
        up = _piecewise_linear(spec.upper_polyline)
        lo = _piecewise_linear(spec.lower_polyline)
        xs = sorted(
            {round(v.real, 15) for v in spec.upper_polyline}
            | {round(v.real, 15) for v in spec.lower_polyline}
        )
        from .numerics import gauss_legendre

        gx, gwx = gauss_legendre(nx)
        gy, gwy = gauss_legendre(ny)
        slabs = []
        node_chunks = []
        weight_chunks = []
        for x0, x1 in zip(xs, xs[1:]):
            if x1 - x0 < GEOM_TOL:
                raise InvalidCell("degenerate (zero-width) slab")
            ylo0, ylo1 = _boundary_y(lo, x0), _boundary_y(lo, x1)
            yhi0, yhi1 = _boundary_y(up, x0), _boundary_y(up, x1)
            if yhi0 - ylo0 < GEOM_TOL and yhi1 - ylo1 < GEOM_TOL:
                raise InvalidCell("cell degenerates to zero height")
            xn = 0.5 * (x1 - x0) * gx + 0.5 * (x1 + x0)
            wxn = 0.5 * (x1 - x0) * gwx
            slab = _Slab(x0, x1, ylo0, ylo1, yhi0, yhi1, xn, wxn, gy, gwy)
            slabs.append(slab)
            ylo = self._slab_lo(slab, xn)
            yhi = self._slab_hi(slab, xn)
            h = yhi - ylo
            if np.any(h <= 0):
                raise InvalidCell("upper boundary dips below the lower one")
            yn = ylo[:, None] + 0.5 * (gy[None, :] + 1.0) * h[:, None]
            node_chunks.append((xn[:, None] + 1j * yn).ravel())
            weight_chunks.append(
                (wxn[:, None] * (0.5 * h[:, None]) * gwy[None, :]).ravel()
            )
        self.slabs = slabs
        self.nodes = np.concatenate(node_chunks)
        self.weights = np.concatenate(weight_chunks)
        self._check_area()

    @staticmethod
    def _slab_lo(slab, x):
        t = (x - slab.x0) / (slab.x1 - slab.x0)
        return slab.y_lo0 + t * (slab.y_lo1 - slab.y_lo0)

    @staticmethod
    def _slab_hi(slab, x):
        t = (x - slab.x0) / (slab.x1 - slab.x0)
        return slab.y_hi0 + t * (slab.y_hi1 - slab.y_hi0)

    def _ring(self):
        lo = [(v.real, v.imag) for v in reversed(self.spec.lower_polyline)]
        up = [(v.real, v.imag) for v in self.spec.upper_polyline]
        return lo + up

    def _check_area(self):
        ring = self._ring()
        n = len(ring)
        s = 0.0
        for i in range(n):
            x0, y0 = ring[i]
            x1, y1 = ring[(i + 1) % n]
            s += x0 * y1 - x1 * y0
        shoelace = 0.5 * abs(s)
        total = float(np.sum(self.weights))
        if abs(total - shoelace) > 1e-12 * max(shoelace, 1.0):
            raise InvalidCell(
                f"quadrature area {total} disagrees with shoelace {shoelace}"
            )
        self.area = shoelace

    def refined(self):
        return CellRegion(self.spec, nx=2 * self.nx, ny=2 * self.ny)

    def contains(self, z, inset=0.0):
        x, y = z.real, z.imag
        if not (inset < x < 1.0 - inset):
            return False
        for slab in self.slabs:
            if slab.x0 - GEOM_TOL <= x <= slab.x1 + GEOM_TOL:
                lo = self._slab_lo(slab, x)
                hi = self._slab_hi(slab, x)
                return lo + inset < y < hi - inset
        return False

    def boundary_edges(self):
        """Non-seam boundary segments as (start, end, side) tuples."""
        out = []
        for side, poly in (("upper", self.spec.upper_polyline),
                           ("lower", self.spec.lower_polyline)):
            for p, q in zip(poly, poly[1:]):
                out.append((p, q, side))
        return out


def build_cell(spec, nx=32, ny=32):
    """Validate a cell description and build its quadrature region.

    Raises InvalidCell with a human-readable reason on any violated
    invariant: endpoint placement, height bound, exponent sums, junction
    consistency, simplicity, or a degenerate decomposition.
    """
    _validate_polyline("upper polyline", spec.upper_polyline, spec.beta_upper,
                       spec.height_bound)
    _validate_polyline("lower polyline", spec.lower_polyline, spec.beta_lower,
                       spec.height_bound)
    a, b = spec.junction
    if not b > a:
        raise InvalidCell(f"junction interval ({a}, {b}) is empty")
    y_lo_end = spec.lower_polyline[-1].imag
    y_hi_end = spec.upper_polyline[-1].imag
    if abs(a - y_lo_end) > GEOM_TOL or abs(b - y_hi_end) > GEOM_TOL:
        raise InvalidCell(
            "junction interval must span the gap between the polyline "
            f"endpoints ({y_lo_end}, {y_hi_end}); got ({a}, {b})"
        )
    region = CellRegion(spec, nx=nx, ny=ny)
    poly = Polygon(region._ring())
    if not (poly.is_valid and poly.is_simple):
        raise InvalidCell("cell boundary is not a simple polygon")
    return region


# ---------------------------------------------------------------------------
# exponential map and branch-aware logarithm


def exp_map(z):
    """E(z) = exp(i 2 pi z). Works on scalars and arrays."""
    return np.exp(2j * np.pi * np.asarray(z))


@dataclass(frozen=True)
class BranchTag:
    """Selector for the one-sided limit of log on its cut.

    side is 'minus' (junction approached from within the cell, Re -> 0+),
    'plus' (Re -> 1-), or 'interior'. The two one-sided argument windows
    [0, 2pi) and (0, 2pi] differ by exactly 2pi on the cut itself.
    """

    side: str

    def cut_argument(self):
        """Argument assigned on the cut itself (None for interior tags).

        The minus and plus values differ by exactly 2 pi; that jump is what
        makes the lifted map continuous across junctions.
        """
        if self.side == "minus":
            return 0.0
        if self.side == "plus":
            return 2.0 * math.pi
        return None


MINUS = BranchTag("minus")
PLUS = BranchTag("plus")
INTERIOR = BranchTag("interior")

_CUT_TOL = 1e-13


def log_branch(w, tag=INTERIOR):
    """Inverse of exp_map: (i 2 pi)^{-1} log w with the junction-cut branch.

    For interior points the argument is taken in the open window (0, 2pi).
    On the cut (positive real axis) the side tag picks the limit: 'minus'
    gives argument 0, 'plus' gives 2pi, and the two results differ by
    exactly 1 in the real part. Raises BranchViolation if w sits on the
    cut with an 'interior' tag, if w is incompatible with the side tag,
    or if w = 0.
    """
    w = complex(w)
    if w == 0:
        raise BranchViolation("log_branch undefined at 0")
    theta = math.atan2(w.imag, w.real)
    if theta < 0:
        theta += 2.0 * math.pi
    on_cut = theta < _CUT_TOL or (2.0 * math.pi - theta) < _CUT_TOL
    if tag.side == "interior":
        if on_cut:
            raise BranchViolation(
                "point on the junction cut needs a side tag"
            )
    elif tag.side == "minus":
        if on_cut:
            theta = 0.0
        elif theta > math.pi + 1e-9:
            raise BranchViolation("minus-side tag on a plus-side point")
    elif tag.side == "plus":
        if on_cut:
            theta = 2.0 * math.pi
        elif theta < math.pi - 1e-9:
            raise BranchViolation("plus-side tag on a minus-side point")
    else:
        raise BranchViolation(f"unknown branch tag {tag.side!r}")
    # (log r + i theta) / (i 2 pi) = (theta - i log r) / (2 pi)
    return (theta - 1j * math.log(abs(w))) / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# sector check for the annulus cut curve


@dataclass(frozen=True)
class SectorReport:
    ok: bool
    margin: float
    arg_min: float
    arg_max: float
    suggested_rotation: float
    delta: float

    def __str__(self):
        state = "inside" if self.ok else "OUTSIDE"
        return (
            f"cut curve arguments in [{self.arg_min:.6f}, {self.arg_max:.6f}], "
            f"{state} sector ({self.delta:.3f}, pi - {self.delta:.3f}), "
            f"margin {self.margin:.6f}, suggested rotation "
            f"{self.suggested_rotation:+.6f}"
        )


def check_sector_assumption(amap, delta=0.05):
    """Check that the cut curve of an annulus map stays in a sector.

    The curve Gamma (image of the junction cut) must keep its argument
    inside (delta, pi - delta) for the lifted-map branch to be safe. amap
    is any object exposing cut_arg_samples() returning sampled arguments
    of Gamma in its current frame. Returns a SectorReport; the suggested
    rotation recenters the mean argument at pi/2. Raises InvalidDelta for
    delta outside (0, 1).
    """
    if not (0.0 < delta < 1.0):
        raise InvalidDelta(f"delta must lie in (0, 1), got {delta}")
    args = np.asarray(amap.cut_arg_samples(), dtype=float)
    wrapped = np.angle(np.exp(1j * args))
    amin = float(wrapped.min())
    amax = float(wrapped.max())
    margin = min(amin - delta, (math.pi - delta) - amax)
    ok = bool(margin > 0.0)
    suggested = math.pi / 2.0 - float(wrapped.mean())
    return SectorReport(ok, margin, amin, amax, suggested, delta)

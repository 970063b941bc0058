"""Transform between functions on the periodic domain and quasimomentum fields.

A function f on the union of integer translates of the cell is turned into
a field g(z, eta) on cell x [-pi, pi),

    g(z, eta) = (2 pi)^{-1/2} sum_m e^{-i eta m} f(z + m),

and recovered by integrating e^{i [Re z] eta} g(z - [Re z], eta) over eta.
The eta integral uses the periodic trapezoid rule, which is exact once the
grid resolves every translate index retained in the sum; fields built here
default to 256 eta nodes and callers pass a larger grid when they keep more
translates than that.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import barycentric_eval, gl_barycentric

TWO_PI = 2.0 * math.pi
INV_SQRT_2PI = 1.0 / math.sqrt(TWO_PI)

_CHUNK = 512


class GridTooCoarse(Exception):
    """The eta grid cannot resolve the requested inverse transform."""


class TruncationWarning(UserWarning):
    """The outermost retained translate still contributes noticeably."""


@dataclass(frozen=True)
class MollifierEps:
    """Gaussian damping factor exp(-eps z^2) with eps in (0, 1]."""

    eps: float = 1e-3

    def __post_init__(self):
        if not 0.0 < self.eps <= 1.0:
            raise ValueError(f"eps must lie in (0, 1], got {self.eps}")

    def __call__(self, z):
        return np.exp(-self.eps * np.asarray(z, dtype=complex) ** 2)


class SampledFunction:
    """A function on the periodic domain sampled over a translate window.

    Wraps an evaluator together with the cell quadrature grid it is sampled
    on and a default window |m| <= m_trunc.  Construction evaluates the
    window once so non-finite values and a diverging translate-norm sum are
    caught early.
    """

    def __init__(self, func, region, m_trunc=16):
        if m_trunc < 1:
            raise ValueError("m_trunc must be at least 1")
        self.region = region
        self.m_trunc = int(m_trunc)
        self._func = func
        window = self.block(np.arange(-self.m_trunc, self.m_trunc + 1))
        w = region.weights
        self.window_norms_sq = (window.real ** 2 + window.imag ** 2) @ w

    def block(self, ms):
        """Samples f(z_i + m) for each m in ms; shape (len(ms), n_nodes)."""
        pts = np.asarray(ms, dtype=float)[:, None] + self.region.nodes[None, :]
        try:
            vals = np.asarray(self._func(pts), dtype=complex)
            if vals.shape != pts.shape:
                raise ValueError
        except (ValueError, TypeError):
            vals = np.vectorize(self._func, otypes=[complex])(pts)
        if not np.all(np.isfinite(vals)):
            raise ValueError("function samples are not finite on the window")
        return vals

    def __call__(self, z):
        return self._func(z)


def eta_grid(n=256):
    """Uniform quasimomentum grid on [-pi, pi), left endpoint included."""
    return -math.pi + TWO_PI * np.arange(int(n)) / int(n)


@dataclass
class FloquetField:
    """Field values g(z_i, eta_j) on a cell quadrature grid x eta grid."""

    values: np.ndarray
    etas: np.ndarray
    region: object
    m_trunc: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        self.etas = np.asarray(self.etas, dtype=float)
        n_z = len(self.region.nodes)
        if self.values.shape != (n_z, len(self.etas)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{n_z} nodes x {len(self.etas)} eta values"
            )
        if len(self.etas) > 1:
            steps = np.diff(self.etas)
            if np.any(np.abs(steps - steps[0]) > 1e-12):
                raise ValueError("eta grid is not uniform")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def eta_weight(self):
        return TWO_PI / len(self.etas)

    def norm_sq(self):
        """L^2(cell x (-pi, pi)) squared norm by quadrature."""
        dens = (self.values.real ** 2 + self.values.imag ** 2)
        return float(self.region.weights @ dens.sum(axis=1)) * self.eta_weight

    def interpolate(self, z0):
        """Values g(z0, eta_j) at an off-grid cell point, all eta at once.

        Barycentric interpolation on the slab's tensor Gauss-Legendre
        nodes, in the slab's reference coordinates.  z0 may sit on the
        closed cell (edges included); it must lie in some slab's x-range.
        """
        region = self.region
        x, y = float(np.real(z0)), float(np.imag(z0))
        offset = 0
        for slab in region.slabs:
            n_slab = len(slab.x_nodes) * len(slab.t_nodes)
            if slab.x0 - 1e-12 <= x <= slab.x1 + 1e-12:
                break
            offset += n_slab
        else:
            raise ValueError(f"point {z0} is outside the cell's x-range")
        nx, ny = len(slab.x_nodes), len(slab.t_nodes)
        vals = self.values[offset:offset + nx * ny]
        vals = vals.reshape(nx, ny, len(self.etas))

        fx = (x - slab.x0) / (slab.x1 - slab.x0)
        y_lo = slab.y_lo0 + fx * (slab.y_lo1 - slab.y_lo0)
        y_hi = slab.y_hi0 + fx * (slab.y_hi1 - slab.y_hi0)
        s = 2.0 * fx - 1.0
        t = 2.0 * (y - y_lo) / (y_hi - y_lo) - 1.0

        ref_t, bw_t = gl_barycentric(ny)
        ref_x, bw_x = gl_barycentric(nx)
        cols = barycentric_eval(ref_t, bw_t, np.moveaxis(vals, 1, 0), t)
        return barycentric_eval(ref_x, bw_x, cols, s)

    def to_csv(self, path):
        """Dump the field, z-major then eta, full float precision.

        path may be a filename or an open text file (so callers can
        prepend their own header lines).
        """
        fh = path if hasattr(path, "write") else open(path, "w", newline="")
        try:
            wr = csv.writer(fh)
            wr.writerow(["re_z", "im_z", "eta", "re_g", "im_g"])
            for i, z in enumerate(self.region.nodes):
                for j, eta in enumerate(self.etas):
                    gij = complex(self.values[i, j])
                    wr.writerow([repr(float(z.real)), repr(float(z.imag)),
                                 repr(float(eta)),
                                 repr(gij.real), repr(gij.imag)])
        finally:
            if fh is not path:
                fh.close()


def _is_canonical_grid(etas):
    n = len(etas)
    return n > 0 and np.allclose(etas, eta_grid(n), rtol=0.0, atol=1e-12)


def floquet_forward(f, m_trunc=None, etas=None, mollifier=None,
                    shell_tol=1e-10, max_m=1 << 15):
    """Transform a sampled function into a FloquetField.

    m_trunc fixes the translate window |m| <= m_trunc; None starts from
    the function's own window and doubles it until the outermost shell
    contributes less than shell_tol of the running norm.  A window that
    stays noisy at its edge triggers TruncationWarning.  On the canonical
    uniform eta grid the phase sum collapses to an FFT over the translate
    index folded modulo the grid size, so large windows stay cheap.
    """
    if etas is None:
        etas = eta_grid(256)
    elif np.ndim(etas) == 0:
        etas = eta_grid(int(etas))
    else:
        etas = np.asarray(etas, dtype=float)
    n_eta = len(etas)
    n_z = len(f.region.nodes)
    w = f.region.weights

    adaptive = m_trunc is None
    m = f.m_trunc if adaptive else int(m_trunc)
    if m < 1:
        raise ValueError("m_trunc must be at least 1")

    canonical = _is_canonical_grid(etas)
    while True:
        ms = np.arange(-m, m + 1)
        per_m = np.empty(len(ms))
        acc = np.zeros((n_z, n_eta), dtype=complex)
        for lo in range(0, len(ms), _CHUNK):
            chunk = ms[lo:lo + _CHUNK]
            block = f.block(chunk)
            if mollifier is not None:
                pts = chunk[:, None].astype(float) + f.region.nodes[None, :]
                block = block * mollifier(pts)
            per_m[lo:lo + len(chunk)] = (
                (block.real ** 2 + block.imag ** 2) @ w
            )
            if canonical:
                signed = block * ((-1.0) ** (chunk % 2))[:, None]
                np.add.at(acc.T, chunk % n_eta, signed)
            else:
                phases = np.exp(-1j * np.outer(chunk, etas))
                acc += block.T @ phases
        total = per_m.sum()
        shell = math.sqrt(per_m[0] + per_m[-1])
        running = math.sqrt(total) if total > 0 else 0.0
        converged = running == 0.0 or shell <= shell_tol * running
        if not adaptive or converged or 2 * m > max_m:
            break
        m *= 2
    if not converged:
        warnings.warn(
            f"outermost translate shell |m| = {m} still contributes "
            f"{shell / max(running, 1e-300):.2e} of the norm",
            TruncationWarning, stacklevel=2,
        )
    if canonical:
        values = INV_SQRT_2PI * np.fft.fft(acc, axis=1)
    else:
        values = INV_SQRT_2PI * acc
    return FloquetField(values=values, etas=etas, region=f.region, m_trunc=m)

def floquet_inverse(g, z, tol=1e-8):
    """Reconstruct f(z) from a field by the explicit inverse integral.

    z may lie in any translate of the cell.  The periodic trapezoid rule
    on the field's eta grid is compared against its half-grid subsample;
    disagreement above tol means the grid cannot resolve the phase
    e^{i [Re z] eta} and GridTooCoarse is raised.
    """
    z = complex(z)
    m = math.floor(z.real)
    col = g.interpolate(z - m)
    integrand = np.exp(1j * m * g.etas) * col
    full = integrand.mean()
    if len(g.etas) % 2 == 0 and len(g.etas) >= 4:
        half = integrand[::2].mean()
        if abs(full - half) > tol * max(1.0, abs(full)):
            raise GridTooCoarse(
                f"eta self-estimate {abs(full - half):.2e} above {tol:.1e} "
                f"at translate {m} with {len(g.etas)} nodes"
            )
    return math.sqrt(TWO_PI) * full


@dataclass
class QuasiperiodicityReport:
    residual: float
    tol: float
    ok: bool
    n_eta: int
    n_heights: int

    def __str__(self):
        verdict = "pass" if self.ok else "FAIL"
        return (f"quasiperiodic edge residual {self.residual:.3e} "
                f"(tol {self.tol:.1e}, {self.n_heights} heights x "
                f"{self.n_eta} eta nodes): {verdict}")


def check_quasiperiodicity(g, tol=1e-8, n_heights=9):
    """Residual of g(1+iy, eta) = e^{i eta} g(iy, eta) on the cell edges.

    Heights run strictly inside the junction interval; edge values come
    from barycentric evaluation of the slab interpolants at x = 0 and 1.
    """
    a, b = g.region.spec.junction
    fracs = (np.arange(n_heights) + 0.5) / n_heights
    resid = 0.0
    phase = np.exp(1j * g.etas)
    for y in a + (b - a) * fracs:
        left = g.interpolate(1j * y)
        right = g.interpolate(1.0 + 1j * y)
        resid = max(resid, float(np.max(np.abs(right - phase * left))))
    return QuasiperiodicityReport(residual=resid, tol=tol, ok=resid < tol,
                                  n_eta=len(g.etas), n_heights=n_heights)


def field_inner(g1, g2):
    """Inner product <g1, g2> over cell x (-pi, pi)."""
    if g1.values.shape != g2.values.shape:
        raise ValueError("fields live on different grids")
    w = g1.region.weights
    s = np.einsum("i,ij,ij->", w, g1.values, g2.values.conj())
    return complex(s * g1.eta_weight)


class IsometryResult(tuple):
    """(norm_sq_domain, norm_sq_transform) with a relative-gap property."""

    def __new__(cls, norm_sq_domain, norm_sq_transform):
        return super().__new__(cls, (norm_sq_domain, norm_sq_transform))

    @property
    def norm_sq_domain(self):
        return self[0]

    @property
    def norm_sq_transform(self):
        return self[1]

    @property
    def rel_gap(self):
        denom = max(self.norm_sq_domain, 1e-300)
        return abs(self.norm_sq_transform - self.norm_sq_domain) / denom

    def __str__(self):
        return (f"||f||^2 = {self.norm_sq_domain:.12e}, "
                f"||Ff||^2 = {self.norm_sq_transform:.12e}, "
                f"relative gap {self.rel_gap:.3e}")


def isometry_check(f, m_trunc=None, mollifier=None):
    """Compare the domain norm of f with the norm of its transform.

    Both sides use the same translate window, and the eta grid is sized
    past twice the window so the trapezoid rule integrates every retained
    cross term exactly; the comparison then tests the implementation, not
    the truncation.
    """
    m = f.m_trunc if m_trunc is None else int(m_trunc)
    n_eta = 256
    while n_eta < 2 * m + 2:
        n_eta *= 2
    g = floquet_forward(f, m_trunc=m, etas=n_eta, mollifier=mollifier,
                        shell_tol=np.inf)
    block = f.block(np.arange(-m, m + 1))
    if mollifier is not None:
        pts = np.arange(-m, m + 1)[:, None] + f.region.nodes[None, :]
        block = block * mollifier(pts)
    lhs = float(((block.real ** 2 + block.imag ** 2) @ f.region.weights).sum())
    return IsometryResult(lhs, g.norm_sq())


@dataclass
class DivergenceTable:
    """Partial sums of translates of 1/z at a fixed probe point."""

    z: complex
    ms: np.ndarray
    one_sided: np.ndarray
    centered: np.ndarray
    symmetric: np.ndarray

    def __str__(self):
        lines = [f"partial sums of 1/(z+m) at z = {self.z}",
                 f"{'M':>8}  {'Re S_M':>12}  {'S_M - ln M':>26}  "
                 f"{'symmetric':>26}"]
        for k in range(len(self.ms)):
            c = self.centered[k]
            s = self.symmetric[k]
            lines.append(
                f"{self.ms[k]:>8d}  {self.one_sided[k].real:>12.6f}  "
                f"{c.real:>12.6f}{c.imag:+.6f}j  "
                f"{s.real:>12.6f}{s.imag:+.6f}j"
            )
        return "\n".join(lines)


def divergence_demo(m_max, z=0.5 + 0.375j):
    """One-sided and symmetric partial sums showing how truncation fails.

    The one-sided sums S_M = sum_{m=1..M} 1/(z+m) grow like ln M, so the
    transform of 1/z cannot converge absolutely; S_M - ln M and the
    symmetric sums both settle down.  Checkpoints at m_max and its halves.
    """
    m_max = int(m_max)
    if m_max < 2:
        raise ValueError("need m_max >= 2")
    ms = sorted({max(2, m_max >> k) for k in range(5)})
    m = np.arange(1, m_max + 1)
    plus = np.cumsum(1.0 / (z + m))
    minus = np.cumsum(1.0 / (z - m))
    idx = np.array(ms) - 1
    one_sided = plus[idx]
    centered = one_sided - np.log(np.array(ms))
    symmetric = 1.0 / z + plus[idx] + minus[idx]
    return DivergenceTable(z=z, ms=np.array(ms), one_sided=one_sided,
                           centered=centered, symmetric=symmetric)

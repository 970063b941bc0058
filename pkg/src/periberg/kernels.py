"""Bergman kernels for the periodic domain and its model geometries.

The closed form for the kernel of the periodic domain,

    K(z, w) = Ktil(z, w) * (pi^3 / (4 L^2)) * sech^2(pi^2 (phi(z) -
              conj(phi(w))) / (2 L)),        L = log rho,

with Ktil(z, w) = e^{i 2 pi (z - phi(z))} conj(e^{i 2 pi (w - phi(w))})
phi_A'(E z) conj(phi_A'(E w)), is checked here against two independent
evaluation routes: assembly of the quasimomentum kernels over eta, and a
real-line integral resting on the Fourier transform of t / (e^t - e^{-t}).
All three share the lifted map phi but nothing else, so agreement pins
down the constants.

The quasimomentum kernel on the cell is a series over annulus basis
exponents.  Writing theta_n = 2 pi (n - 1) + eta and s_n for the
coefficient x_n / (4 pi sinh(x_n L)) with x_n = 2 n + eta / pi, each term
is split evenly between its two arguments,

    K_eta(z, w) = 4 pi^2 sum_n g_n(z) conj(g_n(w)),
    g_n(z) = sqrt(s_n) e^{i 2 pi z} phi_A'(E z) e^{i theta_n phi(z)},

which keeps every factor bounded on the open cell and makes Hermitian
symmetry and positive-definiteness visible term by term.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import confmap
from .numerics import QuadratureFailure, integrate_line_adaptive, sinhc

TWO_PI = 2.0 * math.pi


class OutOfDomain(Exception):
    """Evaluation point outside the kernel's domain."""


class DerivativeUnavailable(Exception):
    """The supplied map exposes no derivative."""


class SeriesNotConverged(Exception):
    """The basis series window was exhausted before the stop rule fired."""


class TailNotNegligible(Exception):
    """The translate window is too small for the requested projection."""


def halfplane_kernel(z, w):
    """Bergman kernel of the upper half-plane, -1/(pi (z - conj w)^2)."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(z.imag <= 0) or np.any(w.imag <= 0):
        raise OutOfDomain("half-plane kernel needs Im z > 0 and Im w > 0")
    out = -1.0 / (np.pi * (z - np.conj(w)) ** 2)
    return complex(out) if out.ndim == 0 else out


def strip_kernel_sigma(z, w):
    """Bergman kernel of the strip R x (-pi, pi), sech^2((z - conj w)/4)/16pi."""
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    if np.any(np.abs(z.imag) >= np.pi) or np.any(np.abs(w.imag) >= np.pi):
        raise OutOfDomain("strip kernel needs |Im| < pi for both arguments")
    out = 1.0 / (16.0 * np.pi * np.cosh((z - np.conj(w)) / 4.0) ** 2)
    return complex(out) if out.ndim == 0 else out


def _phi_pair(phi_map):
    if isinstance(phi_map, tuple) and len(phi_map) == 2:
        return phi_map
    if hasattr(phi_map, "phi") and hasattr(phi_map, "dphi"):
        return phi_map.phi, phi_map.dphi
    if callable(phi_map) and hasattr(phi_map, "derivative"):
        return phi_map, phi_map.derivative
    raise DerivativeUnavailable(
        "need a (phi, dphi) pair, or an object with phi/dphi attributes, "
        "or a callable with a .derivative attribute"
    )


def pullback_kernel(kernel, phi_map, z, w, weighted=False):
    """Transport a kernel through a conformal map.

    Plain rule: K(phi z, phi w) phi'(z) conj(phi'(w)).  The weighted form
    K(phi z, phi w) |phi'(w)|^2 is the kernel of the composition-operator
    conjugation of the projection rather than of a new Bergman space.
    """
    phi, dphi = _phi_pair(phi_map)
    base = kernel(phi(z), phi(w))
    if weighted:
        return base * np.abs(dphi(w)) ** 2
    return base * dphi(z) * np.conj(dphi(w))


@dataclass
class SeriesControl:
    """Stop rule for the symmetric basis-series window.

    The window grows one index per side until small_run consecutive terms
    on that side fall below tol; n_min indices per side are always summed
    and n_max caps the window.
    """

    tol: float = 1e-12
    n_min: int = 4
    n_max: int = 400
    small_run: int = 5

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not 0 <= self.n_min <= self.n_max:
            raise ValueError("need 0 <= n_min <= n_max")


@dataclass
class KernelContext:
    """A solved, sector-checked map bundle driving every kernel evaluator."""

    lifted: confmap.LiftedMap
    weights: confmap.WeightEvaluators
    control: SeriesControl = field(default_factory=SeriesControl)

    def __post_init__(self):
        self._cache = {}

    @property
    def amap(self):
        return self.lifted.amap

    @property
    def rho(self):
        return self.lifted.rho

    @property
    def log_rho(self):
        return math.log(self.lifted.rho)

    def phi_with_deriv(self, z):
        """Cached (phi(z), phi_A'(E z)) for scalar z."""
        key = complex(z)
        try:
            return self._cache[key]
        except KeyError:
            out = self.lifted.with_annulus_derivative(key)
            self._cache[key] = out
            return out

    def phi_with_deriv_array(self, zs):
        zs = np.asarray(zs, dtype=complex)
        vals = np.empty(zs.shape, dtype=complex)
        ders = np.empty(zs.shape, dtype=complex)
        flat_v, flat_d = vals.ravel(), ders.ravel()
        for i, z in enumerate(zs.ravel()):
            flat_v[i], flat_d[i] = self.phi_with_deriv(z)
        return vals, ders


def make_context(amap, control=None, delta=0.05):
    """Lift and sector-check an annulus map and bundle the kernel inputs."""
    lifted = confmap.lift(amap, delta=delta)
    weights = confmap.weight_evaluators(lifted.amap)
    return KernelContext(lifted=lifted, weights=weights,
                         control=control or SeriesControl())


def strip_context(h=0.5, control=None):
    """Context for the straight channel of half-height h."""
    return make_context(confmap.builtin_strip_map(h), control=control)


def sech_sq(v):
    """sech^2 for complex v without cosh overflow (flushes to 0 instead)."""
    v = np.asarray(v, dtype=complex)
    vm = np.where(v.real < 0, -v, v)
    e = np.exp(-2.0 * vm)
    return 4.0 * e / (1.0 + e) ** 2


def periodic_kernel_closed(ctx, z, w):
    """Closed-form kernel of the periodic domain; z, w scalars or arrays."""
    phi_z, dphi_z = (ctx.phi_with_deriv(z) if np.ndim(z) == 0
                     else ctx.phi_with_deriv_array(z))
    phi_w, dphi_w = (ctx.phi_with_deriv(w) if np.ndim(w) == 0
                     else ctx.phi_with_deriv_array(w))
    length = ctx.log_rho
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    u = phi_z - np.conj(phi_w)
    ktil = (np.exp(1j * TWO_PI * (z - phi_z - np.conj(w) + np.conj(phi_w)))
            * dphi_z * np.conj(dphi_w))
    body = (np.pi ** 3 / (4.0 * length ** 2)
            * sech_sq(np.pi ** 2 * u / (2.0 * length)))
    out = ktil * body
    return complex(out) if out.ndim == 0 else out


def norm_const(n, eta, rho):
    """Normalization constant C making z^{n + eta/2pi}/v unit-norm.

    C^{-2} = 2 pi (rho^x - rho^{-x}) / x with x = 2(n+1) + eta/pi; the
    degenerate exponent x = 0 is filled by its limit 4 pi log rho.
    """
    if rho <= 1.0:
        raise ValueError("need rho > 1")
    x = 2.0 * (n + 1) + eta / math.pi
    length = math.log(rho)
    ax = abs(x) * length
    if ax > 600.0:
        return 0.0
    c_inv_sq = 4.0 * math.pi * length * float(sinhc(x * length))
    return c_inv_sq ** -0.5


def basis_fn(n, eta, zeta, ctx, v_vals=None):
    """Annulus basis element C_{n,eta} zeta^{n + eta/2pi} / v(zeta).

    The fractional power uses the log branch cut along the image of the
    junction, so values are single-valued on the slit annulus; evaluating
    outside the closed annulus raises BranchViolation.  Pass v_vals to
    reuse weight samples across n (the weight needs the inverse map, which
    dominates the cost on solved cells).
    """
    c = norm_const(n, eta, ctx.rho)
    logz = ctx.amap.log_branch(zeta)
    zeta = np.asarray(zeta, dtype=complex)
    power = np.exp((n + eta / TWO_PI) * logz)
    out = c * power / (ctx.weights.v(zeta) if v_vals is None else v_vals)
    return complex(out) if out.ndim == 0 else out


def _series_sum(ctx, u, eta, control):
    """The dimensionless series sum_n s_n e^{i theta_n u} and its window.

    u = phi(z) - conj(phi(w)).  Term magnitudes behave like
    e^{-2 L |n| margin} with margin 1 -/+ pi Im u / L per side, which
    caps the window a priori; the stop rule usually fires much earlier.
    """
    length = ctx.log_rho
    margin_plus = 1.0 + math.pi * u.imag / length
    margin_minus = 1.0 - math.pi * u.imag / length
    if margin_plus <= 1e-9 or margin_minus <= 1e-9:
        raise SeriesNotConverged(
            f"series margin vanished at Im(phi z - conj phi w) = {u.imag}; "
            "the evaluation points touch the domain boundary"
        )
    budget = math.log(1.0 / control.tol) + 12.0
    cap = max(
        control.n_min,
        math.ceil(budget / (2.0 * length * margin_plus)),
        math.ceil(budget / (2.0 * length * margin_minus)),
    ) + control.small_run + 2
    if cap > control.n_max:
        cap = control.n_max

    def term(n):
        x = 2.0 * n + eta / math.pi
        theta = TWO_PI * (n - 1) + eta
        log_mag = -theta * u.imag
        ax = abs(x) * length
        if ax < 1e-8:
            log_s = -math.log(4.0 * math.pi * length)
        elif ax > 35.0:
            log_s = math.log(abs(x) / (2.0 * math.pi)) - ax
        else:
            log_s = -math.log(4.0 * math.pi * length * float(sinhc(x * length)))
        log_mag += log_s
        if log_mag < -745.0:
            return 0.0 + 0.0j
        return math.exp(log_mag) * np.exp(1j * theta * u.real)

    total = term(0)
    small_plus = 0
    small_minus = 0
    n = 0
    while small_plus < control.small_run or small_minus < control.small_run:
        n += 1
        if n > cap:
            raise SeriesNotConverged(
                f"window |n| <= {cap} exhausted before the stop rule fired "
                f"(tol {control.tol:g})"
            )
        if small_plus < control.small_run:
            t = term(n)
            total += t
            if abs(t) < control.tol and n >= control.n_min:
                small_plus += 1
            else:
                small_plus = 0
        if small_minus < control.small_run:
            t = term(-n)
            total += t
            if abs(t) < control.tol and n >= control.n_min:
                small_minus += 1
            else:
                small_minus = 0
    return total, n


def cell_kernel_eta(ctx, z, w, eta, control=None, return_info=False):
    """Quasimomentum kernel K_eta(z, w) on the cell by the basis series."""
    control = control or ctx.control
    z = complex(z)
    w = complex(w)
    phi_z, dphi_z = ctx.phi_with_deriv(z)
    phi_w, dphi_w = ctx.phi_with_deriv(w)
    u = phi_z - np.conj(phi_w)
    total, window = _series_sum(ctx, u, eta, control)
    ktil = (4.0 * np.pi ** 2 * np.exp(1j * TWO_PI * (z - np.conj(w)))
            * dphi_z * np.conj(dphi_w))
    value = ktil * total
    if return_info:
        return value, {"window": window, "u": u}
    return value


def assemble_periodic_from_eta(ctx, z, w, n_eta=32, tol=1e-8, max_n_eta=512,
                               control=None):
    """Periodic kernel by quasimomentum assembly.

    (2 pi)^{-1} integral over (-pi, pi) of e^{i eta (mz - mw)}
    K_eta(z - mz, w - mw) with mz = floor(Re z), using the periodic
    trapezoid rule doubled until the self-estimate drops below tol.
    """
    control = control or ctx.control
    z = complex(z)
    w = complex(w)
    mz = math.floor(z.real)
    mw = math.floor(w.real)
    z0 = z - mz
    w0 = w - mw
    phi_z, dphi_z = ctx.phi_with_deriv(z0)
    phi_w, dphi_w = ctx.phi_with_deriv(w0)
    u = phi_z - np.conj(phi_w)
    ktil = (4.0 * np.pi ** 2 * np.exp(1j * TWO_PI * (z0 - np.conj(w0)))
            * dphi_z * np.conj(dphi_w))

    def node_value(eta):
        total, _ = _series_sum(ctx, u, eta, control)
        return np.exp(1j * eta * (mz - mw)) * ktil * total

    n = int(n_eta)
    etas = -math.pi + TWO_PI * np.arange(n) / n
    vals = np.array([node_value(e) for e in etas])
    estimate = vals.mean()
    while True:
        n *= 2
        if n > max_n_eta:
            raise QuadratureFailure(
                f"eta quadrature self-estimate stuck above {tol:g} "
                f"at {n // 2} nodes"
            )
        new_etas = -math.pi + TWO_PI * (np.arange(n // 2) + 0.5) * 2.0 / n
        new_vals = np.array([node_value(e) for e in new_etas])
        refined = 0.5 * (estimate + new_vals.mean())
        if abs(refined - estimate) <= tol * max(1.0, abs(refined)):
            return refined
        estimate = refined
        vals = None


def sech_fourier_identity(s, a, tol=1e-12):
    """Both sides of the Fourier transform of t/(e^{at} - e^{-at}).

    lhs integrates cos(st)/(2 a sinhc(a t)) over the real line by
    adaptive panels; rhs is (pi^2 / 4 a^2) sech^2(pi s / 2 a).
    """
    if a <= 0:
        raise ValueError("need a > 0")

    # rescale so the oscillation cos(st) stays near unit frequency per panel
    stretch = 1.0 + abs(s)

    def integrand(tp):
        t = tp / stretch
        return np.cos(s * t) / (2.0 * a * sinhc(a * t)) / stretch

    lhs, _ = integrate_line_adaptive(integrand, tol=tol, max_width=8.0,
                                     max_panels=256)
    rhs = (math.pi ** 2 / (4.0 * a ** 2)) / math.cosh(
        math.pi * s / (2.0 * a)) ** 2
    return float(np.real(lhs)), rhs

def periodic_kernel_t_integral(ctx, z, w, tol=1e-12):
    """Periodic kernel via the real-line integral form.

    Fusing the series index and the quasimomentum into one real variable
    t turns the eta assembly into

        K(z, w) = Ktil(z0, w0) e^{-i 2 pi u0} (2 pi)^{-1}
                  integral e^{i 2 pi t U} / (2 L sinhc(2 L t)) dt,

    with u0 the cell-level phi difference and U the full lifted one.
    Converges for |Im U| < L / pi, the same margin as the series.
    """
    z = complex(z)
    w = complex(w)
    mz = math.floor(z.real)
    mw = math.floor(w.real)
    phi_z, dphi_z = ctx.phi_with_deriv(z - mz)
    phi_w, dphi_w = ctx.phi_with_deriv(w - mw)
    u0 = phi_z - np.conj(phi_w)
    big_u = u0 + mz - mw
    length = ctx.log_rho
    if abs(big_u.imag) >= length / math.pi:
        raise OutOfDomain(
            "t-integral diverges: evaluation points touch the boundary"
        )
    pref = (2.0 * np.pi * np.exp(1j * TWO_PI * ((z - mz) - np.conj(w - mw)))
            * dphi_z * np.conj(dphi_w) * np.exp(-1j * TWO_PI * u0))

    # rescale so the oscillation e^{i 2 pi t Re U} stays near unit frequency
    # no matter how many periods separate z and w
    stretch = 1.0 + abs(big_u.real)

    def integrand(tp):
        t = tp / stretch
        return (np.exp(2j * np.pi * t * big_u)
                / (2.0 * length * sinhc(2.0 * length * t)) / stretch)

    value, est = integrate_line_adaptive(integrand, tol=None, max_width=4.0,
                                         max_panels=256)
    if est > tol * max(abs(value), 1e-300) + 1e-13:
        raise QuadratureFailure(
            f"t-integral error estimate {est:.3e} above {tol:g} x |value|"
        )
    return pref * value


def _log_sqrt_s(x, length):
    """0.5 log s_n for s_n = x / (4 pi sinh(x L)), overflow-safe."""
    ax = abs(x) * length
    if ax < 1e-8:
        return -0.5 * math.log(4.0 * math.pi * length)
    if ax > 35.0:
        return 0.5 * (math.log(abs(x) / (2.0 * math.pi)) - ax)
    return -0.5 * math.log(4.0 * math.pi * length * float(sinhc(x * length)))


def cell_basis(ctx, n, eta, z_points):
    """Values of the split-form basis factor g_n at cell points.

    K_eta(z, w) = 4 pi^2 sum_n g_n(z) conj(g_n(w)), and 2 pi g_n is the
    unit-norm pullback of the annulus basis element to the cell.
    """
    z_points = np.asarray(z_points, dtype=complex)
    phi, dphi = ctx.phi_with_deriv_array(z_points)
    x = 2.0 * n + eta / math.pi
    theta = TWO_PI * (n - 1) + eta
    half = _log_sqrt_s(x, ctx.log_rho)
    return (np.exp(1j * TWO_PI * z_points) * dphi
            * np.exp(half + 1j * theta * phi))


def eta_projection(ctx, eta, f_vals, region, z_points=None, control=None):
    """Apply the quasimomentum projection to samples on the cell grid.

    Uses the split form K_eta(z, w) = 4 pi^2 sum_n g_n(z) conj(g_n(w)):
    each basis coefficient is one quadrature sum, so the cost is one map
    evaluation per point plus a term loop.  Returns values at z_points
    (the grid itself by default).
    """
    control = control or ctx.control
    f_vals = np.asarray(f_vals, dtype=complex)
    nodes = region.nodes
    wq = region.weights
    phi_n, dphi_n = ctx.phi_with_deriv_array(nodes)
    if z_points is None:
        z_points = nodes
        phi_z, dphi_z = phi_n, dphi_n
    else:
        z_points = np.asarray(z_points, dtype=complex)
        phi_z, dphi_z = ctx.phi_with_deriv_array(z_points)
    length = ctx.log_rho
    base_w = np.exp(1j * TWO_PI * nodes) * dphi_n
    base_z = np.exp(1j * TWO_PI * z_points) * dphi_z
    scale = float(np.sqrt((np.abs(f_vals) ** 2) @ wq)) or 1.0

    out = np.zeros(z_points.shape, dtype=complex)

    def add_term(n):
        x = 2.0 * n + eta / math.pi
        theta = TWO_PI * (n - 1) + eta
        half = _log_sqrt_s(x, length)
        g_w = base_w * np.exp(half + 1j * theta * phi_n)
        coef = np.sum(wq * np.conj(g_w) * f_vals)
        g_z = base_z * np.exp(half + 1j * theta * phi_z)
        piece = (4.0 * np.pi ** 2) * coef * g_z
        out[...] = out + piece
        return float(np.max(np.abs(piece)))

    add_term(0)
    small_plus = 0
    small_minus = 0
    n = 0
    while small_plus < control.small_run or small_minus < control.small_run:
        n += 1
        if n > control.n_max:
            raise SeriesNotConverged(
                f"projection window |n| <= {control.n_max} exhausted"
            )
        if small_plus < control.small_run:
            if add_term(n) < control.tol * scale and n >= control.n_min:
                small_plus += 1
            else:
                small_plus = 0
        if small_minus < control.small_run:
            if add_term(-n) < control.tol * scale and n >= control.n_min:
                small_minus += 1
            else:
                small_minus = 0
    return out


def project(ctx, f, z, kernel="closed", m_window=None, tol=1e-8):
    """Bergman projection integral over a window of cell translates.

    f is a floquet.SampledFunction; kernel picks the evaluator ("closed",
    "eta", "t", or a callable K(z, w_array)).  The per-translate
    contributions must decay geometrically; if the extrapolated tail
    exceeds tol relative to scale, TailNotNegligible is raised.
    """
    z = complex(z)
    m = f.m_trunc if m_window is None else int(m_window)
    nodes = f.region.nodes
    wq = f.region.weights
    if callable(kernel):
        evaluate = kernel
    elif kernel == "closed":
        evaluate = lambda zz, ww: periodic_kernel_closed(ctx, zz, ww)
    elif kernel == "eta":
        evaluate = lambda zz, ww: np.array(
            [assemble_periodic_from_eta(ctx, zz, x) for x in ww])
    elif kernel == "t":
        evaluate = lambda zz, ww: np.array(
            [periodic_kernel_t_integral(ctx, zz, x) for x in ww])
    else:
        raise ValueError(f"unknown kernel selector {kernel!r}")

    ms = np.arange(-m, m + 1)
    block = f.block(ms)
    contrib = np.empty(len(ms), dtype=complex)
    for k, shift in enumerate(ms):
        kv = evaluate(z, nodes + shift)
        contrib[k] = np.sum(wq * kv * block[k])
    total = contrib.sum()

    mags = np.abs(contrib)
    scale = max(abs(total), float(np.sqrt(f.window_norms_sq.sum())), 1e-300)
    last = mags[0] + mags[-1]
    prev = mags[1] + mags[-2] if len(ms) >= 5 else 0.0
    if last > 0 and prev > 0:
        ratio = last / prev
        tail = last * ratio / (1.0 - ratio) if ratio < 1.0 else math.inf
        if tail > tol * scale:
            raise TailNotNegligible(
                f"translate tail estimate {tail:.2e} above "
                f"{tol:g} x scale {scale:.2e}; widen the window"
            )
    return total


def write_kernel_csv(path, entries):
    """Dump kernel evaluations; entries are (z, w, value, method) tuples."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["re_z", "im_z", "re_w", "im_w", "re_K", "im_K",
                     "method"])
        for z, w, val, method in entries:
            z = complex(z)
            w = complex(w)
            val = complex(val)
            wr.writerow([repr(z.real), repr(z.imag), repr(w.real),
                         repr(w.imag), repr(val.real), repr(val.imag),
                         method])

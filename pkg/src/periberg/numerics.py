"""Shared numerical substrate.

Quadrature rules with build-time exactness verification, cell and line
integration with order-doubling error estimates, and a small damped
least-squares solver that records a deterministic iterate trace.

Everything in this module is deterministic: fixed node counts, ordered
reductions, no randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi


class EstimateAboveTolerance(Exception):
    """Quadrature self-estimate exceeded the requested tolerance."""


class NoDecayDetected(Exception):
    """Line integrand failed to decay within the panel budget."""


class QuadratureFailure(Exception):
    """A quadrature routine could not reach its target accuracy."""


class NoConvergence(Exception):
    """Iteration budget exhausted before the gradient tolerance was met.

    Carries the best-iterate report in the ``report`` attribute.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_GJ_CACHE: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}
_BARY_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n):
    """Gauss-Legendre nodes and weights on [-1, 1], cached per order."""
    try:
        return _GL_CACHE[n]
    except KeyError:
        x, w = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (x, w)
        return x, w


def gauss_jacobi(n, alpha):
    """Gauss-Jacobi nodes and weights for the weight (1-x)^alpha on [-1, 1].

    Used to absorb a corner factor (1-t)^alpha at the right endpoint of a
    line integral; alpha > -1.
    """
    key = (n, float(alpha))
    try:
        return _GJ_CACHE[key]
    except KeyError:
        x, w = roots_jacobi(n, float(alpha), 0.0)
        _GJ_CACHE[key] = (x, w)
        return x, w


def gl_barycentric(n):
    """Gauss-Legendre nodes with their barycentric weights, cached.

    Weights are normalized to unit max; the common scale cancels in the
    barycentric formula, and normalizing keeps them in range for orders
    up to a few hundred.
    """
    try:
        return _BARY_CACHE[n]
    except KeyError:
        x, _ = gauss_legendre(n)
        w = np.empty(n)
        for k in range(n):
            w[k] = 1.0 / np.prod(x[k] - np.delete(x, k))
        w /= np.abs(w).max()
        _BARY_CACHE[n] = (x, w)
        return x, w


def barycentric_eval(nodes, bary_w, values, x):
    """Evaluate the polynomial interpolant of (nodes, values) at x.

    values may have extra trailing axes; interpolation acts on axis 0.
    Exact node hits are returned directly instead of dividing by zero.
    """
    d = x - nodes
    hit = int(np.argmin(np.abs(d)))
    if abs(d[hit]) < 1e-14:
        return values[hit]
    c = bary_w / d
    return np.tensordot(c, values, axes=(0, 0)) / c.sum()


def sinhc(x):
    """sinh(x)/x, stable through x = 0. Accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-4
    xs = x[small]
    out[small] = 1.0 + xs * xs / 6.0 * (1.0 + xs * xs / 20.0)
    xl = x[~small]
    out[~small] = np.sinh(xl) / xl
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# quadrature rules


@dataclass(frozen=True)
class QuadratureRule:
    """A verified quadrature rule.

    kind is one of 'tensor_gauss_legendre', 'triangle_duffy',
    'periodic_trapezoid', 'adaptive_line'. nodes/weights are the reference
    nodes (1D points packed as a complex array for 2D kinds, with x in the
    real part and y in the imaginary part). exactness_degree records the
    polynomial (or trigonometric) degree verified at build time.
    """

    kind: str
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    exactness_degree: int


def gl_segment_rule(n):
    """1D Gauss-Legendre rule on [-1, 1], exactness verified at build."""
    x, w = gauss_legendre(n)
    if np.any(w <= 0):
        raise QuadratureFailure("nonpositive Gauss-Legendre weight")
    deg = 2 * n - 1
    for k in range(0, min(deg, 14) + 1):
        exact = 0.0 if k % 2 == 1 else 2.0 / (k + 1)
        got = float(np.sum(w * x**k))
        if abs(got - exact) > 1e-13:
            raise QuadratureFailure(
                f"Gauss-Legendre({n}) misses x^{k}: {got} vs {exact}"
            )
    return QuadratureRule("tensor_gauss_legendre", n, x.astype(complex), w, deg)


def periodic_trapezoid_rule(n):
    """Uniform trapezoid rule on [-pi, pi), exact for e^{ik eta}, |k| < n."""
    eta = -np.pi + 2.0 * np.pi * np.arange(n) / n
    w = np.full(n, 2.0 * np.pi / n)
    for k in range(0, min(n - 1, 6) + 1):
        exact = 2.0 * np.pi if k == 0 else 0.0
        got = np.sum(w * np.exp(1j * k * eta))
        if abs(got - exact) > 1e-12:
            raise QuadratureFailure(f"trapezoid({n}) misses e^(i{k}eta)")
    return QuadratureRule("periodic_trapezoid", n, eta.astype(complex), w, n - 1)


def triangle_duffy_rule(n):
    """Rule on the reference triangle {x, y >= 0, x + y <= 1}.

    Built by collapsing a tensor Gauss-Legendre grid (Duffy transform
    x = u, y = v(1-u), Jacobian 1-u). Positive weights by construction;
    polynomial exactness through degree n-1 is verified against the closed
    form integral of x^a y^b, which is a! b! / (a+b+2)!.
    """
    x1, w1 = gauss_legendre(n)
    u = 0.5 * (x1 + 1.0)
    wu = 0.5 * w1
    uu, vv = np.meshgrid(u, u, indexing="ij")
    ww = np.outer(wu, wu) * (1.0 - uu)
    xs = uu
    ys = vv * (1.0 - uu)
    nodes = (xs + 1j * ys).ravel()
    weights = ww.ravel()
    deg = n - 1
    for a in range(0, min(deg, 5) + 1):
        for b in range(0, min(deg - a, 5) + 1):
            exact = (
                math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            )
            got = float(np.sum(weights * nodes.real**a * nodes.imag**b))
            if abs(got - exact) > 1e-13:
                raise QuadratureFailure(
                    f"triangle rule misses x^{a} y^{b}: {got} vs {exact}"
                )
    return QuadratureRule("triangle_duffy", n, nodes, weights, deg)


def adaptive_line_rule(panel_order=24):
    """Descriptor for the adaptive line strategy (panel rule is GL)."""
    base = gl_segment_rule(panel_order)
    return QuadratureRule(
        "adaptive_line", panel_order, base.nodes, base.weights, base.exactness_degree
    )


def annulus_rule(r_inner, r_outer, nr=64, ntheta=128):
    """Area-quadrature nodes and weights for {r_inner < |z| < r_outer}.

    Radial direction uses Gauss-Legendre in s = log r (the Jacobian
    r dr dtheta becomes e^{2s} ds dtheta, entire in s, so monomial moments
    converge superexponentially); angular direction uses the periodic
    trapezoid, which integrates e^{i k theta} exactly for |k| < ntheta.
    Returns (nodes, weights) with complex nodes.
    """
    x, w = gauss_legendre(nr)
    s0, s1 = math.log(r_inner), math.log(r_outer)
    s = 0.5 * (s1 - s0) * x.real + 0.5 * (s1 + s0)
    ws = 0.5 * (s1 - s0) * w
    theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
    wt = 2.0 * np.pi / ntheta
    r = np.exp(s)
    nodes = (r[:, None] * np.exp(1j * theta[None, :])).ravel()
    weights = (ws * r * r)[:, None] * np.full(ntheta, wt)[None, :]
    return nodes, weights.ravel()


# ---------------------------------------------------------------------------
# integration drivers


def integrate_cell(region, f, tol=None):
    """Integrate f over a cell region with an order-doubled error estimate.

    region is any object exposing ``nodes`` (complex array), ``weights``
    (real array) and ``refined()`` returning the same region at doubled
    order. f maps a complex array to an array of values. Returns
    (value, estimate); raises EstimateAboveTolerance if tol is given and
    the estimate exceeds it.
    """
    v1 = np.sum(np.asarray(region.weights) * np.asarray(f(region.nodes)))
    fine = region.refined()
    v2 = np.sum(np.asarray(fine.weights) * np.asarray(f(fine.nodes)))
    est = abs(v2 - v1)
    if tol is not None and est > tol:
        raise EstimateAboveTolerance(
            f"cell integral estimate {est:.3e} above tolerance {tol:.3e}"
        )
    return v2, est


def _panel(f, a, b, order):
    x, w = gauss_legendre(order)
    t = 0.5 * (b - a) * x + 0.5 * (b + a)
    return 0.5 * (b - a) * np.sum(w * f(t))


def integrate_line_adaptive(f, tol=1e-12, cutoff=1e-16, first_width=1.0,
                            panel_order=24, max_panels=64, max_width=32.0):
    """Integrate f over the whole real line.

    The integrand must decay (exponentially, in the intended uses) in both
    directions. Panels of geometrically growing width are laid out from 0
    in each direction; each panel is evaluated at panel_order and
    2*panel_order nodes for an error estimate. A side stops once the panel
    contribution and the sampled integrand magnitude fall below cutoff
    relative to the running total. Raises NoDecayDetected if the sampled
    magnitude has not started to drop after the panel budget.
    """
    total = 0.0 + 0.0j
    est = 0.0
    for sign in (1.0, -1.0):
        a = 0.0
        width = first_width
        first_mag = None
        stopped = False
        for k in range(max_panels):
            b = a + width
            lo, hi = (sign * a, sign * b) if sign > 0 else (sign * b, sign * a)
            v1 = _panel(f, lo, hi, panel_order)
            v2 = _panel(f, lo, hi, 2 * panel_order)
            total += v2
            est += abs(v2 - v1)
            probe = sign * np.array([b, b - width / 3.0, b - 2.0 * width / 3.0])
            mag = float(np.max(np.abs(f(probe))))
            if first_mag is None:
                first_mag = max(mag, 1e-300)
            scale = max(abs(total), 1.0)
            if mag < cutoff * scale and abs(v2) < cutoff * scale:
                stopped = True
                break
            if k >= 20 and mag > first_mag:
                raise NoDecayDetected(
                    f"integrand magnitude {mag:.3e} at t = {sign * b:.3e} "
                    f"has not decayed after {k + 1} panels"
                )
            a = b
            if k >= 1:
                width = min(width * 2.0, max_width)
        if not stopped:
            raise NoDecayDetected("panel budget exhausted before tail cutoff")
    if tol is not None and est > tol:
        raise EstimateAboveTolerance(
            f"line integral estimate {est:.3e} above tolerance {tol:.3e}"
        )
    return total, est


# ---------------------------------------------------------------------------
# damped least squares


@dataclass(frozen=True)
class SolverBudget:
    """Iteration and damping budget for nlls_solve. All defaults are tame."""

    max_iter: int = 100
    gtol: float = 1e-12
    ftol: float = 1e-15
    lambda0: float = 1e-8
    lambda_min: float = 1e-14
    lambda_max: float = 1e10


@dataclass
class SolveReport:
    x: np.ndarray
    cost: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str
    trace: list = field(default_factory=list)


def _fd_jacobian(residual, x, r0):
    n = x.size
    m = r0.size
    J = np.empty((m, n))
    for j in range(n):
        h = 1e-7 * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (residual(xp) - residual(xm)) / (2.0 * h)
    return J


def nlls_solve(residual, x0, budget=None, jac=None):
    """Damped Gauss-Newton (Levenberg-Marquardt) for small dense problems.

    residual maps an n-vector to an m-vector (m >= n). The iterate trace
    (iteration, cost, damping, gradient norm) is recorded in the report and
    is bitwise deterministic for identical inputs. Raises NoConvergence,
    carrying the best-iterate report, if the budget is exhausted while the
    gradient norm is still above budget.gtol and the cost is not at the
    rounding floor.
    """
    budget = budget or SolverBudget()
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual(x), dtype=float)
    cost = 0.5 * float(r @ r)
    lam = budget.lambda0
    trace = []
    message = "iteration budget exhausted"
    converged = False
    it = 0
    gnorm = math.inf
    for it in range(1, budget.max_iter + 1):
        J = jac(x) if jac is not None else _fd_jacobian(residual, x, r)
        g = J.T @ r
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        trace.append(
            {"iter": it, "cost": cost, "lambda": lam, "grad_norm": gnorm}
        )
        if gnorm < budget.gtol:
            converged = True
            message = "gradient tolerance reached"
            break
        A = J.T @ J
        d = np.diag(A).copy()
        floor = 1e-12 * (float(d.max()) if d.size and d.max() > 0 else 1.0)
        d[d < floor] = floor
        accepted = False
        for _ in range(60):
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam = min(lam * 4.0, budget.lambda_max)
                continue
            xn = x + step
            rn = np.asarray(residual(xn), dtype=float)
            costn = 0.5 * float(rn @ rn)
            if costn < cost:
                rel_drop = (cost - costn) / max(cost, 1e-300)
                x, r, cost = xn, rn, costn
                lam = max(lam * 0.1, budget.lambda_min)
                accepted = True
                if rel_drop < budget.ftol:
                    converged = True
                    message = "cost decrease below ftol"
                break
            lam = lam * 10.0
            if lam > budget.lambda_max:
                break
        if converged:
            break
        if not accepted:
            # no damping level can decrease the cost any further; the
            # iterate is stationary to working precision
            converged = True
            message = "cost stationary at damping limit"
            break
    report = SolveReport(
        x=x,
        cost=cost,
        grad_norm=gnorm,
        iterations=it,
        converged=converged,
        message=message,
        trace=trace,
    )
    if not converged and not (cost < 1e-28):
        raise NoConvergence(message, report=report)
    return report

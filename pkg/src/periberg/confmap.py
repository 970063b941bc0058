"""Conformal maps from the exponential lift of a channel onto an annulus.

The exponential map sends one period of the channel to a doubly connected
region D; this module supplies the conformal map phi from D onto a round
annulus A = {1/rho < |z| < rho}. For a straight channel the map is the
identity (builtin). For polygonal channels the map is solved in
Schwarz-Christoffel form on the rescaled annulus {q < |zeta| < 1} with
q = 1/rho^2: the derivative of the inverse map is

    f'(zeta) = A prod_k P(zeta / a_k, q)^{beta_k} / zeta

with P(xi, q) = (1 - xi) prod_{j>=1} (1 - q^{2j} xi)(1 - q^{2j} / xi), the
a_k prevertices on the two boundary circles, and beta_k the turning
exponents of the polyline vertices. Factors for inner-circle prevertices
are rewritten through the reflection P(1/xi) = -P(xi)/xi so every
principal logarithm stays single-valued on the closed annulus; since the
exponents on each circle sum to zero, the leftover constant is absorbed
into A.

The lifted map phi(z) = (i 2 pi)^{-1} log(phi(exp(i 2 pi z))) + [Re z] is
evaluated on the universal cover of the annulus (no cut on the cover), and
normalized by a real constant so that the straight channel lifts to the
identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import cellgeom
from .cellgeom import check_sector_assumption
from .numerics import (
    NoConvergence,
    QuadratureFailure,
    SolverBudget,
    gauss_jacobi,
    gauss_legendre,
    nlls_solve,
)

TWO_PI = 2.0 * math.pi


class NonConvergentRatio(Exception):
    """Product ratio q outside (0, 1); the annulus product diverges."""


class PathThroughPrevertex(Exception):
    """An integration path endpoint coincides with a prevertex."""


class DegenerateInitialization(Exception):
    """Solver initialization collapses prevertices or the scale constant."""


class SectorAssumptionFailed(Exception):
    """Cut curve leaves the safe sector even after auto-rotation."""


class MapEvaluationFailure(Exception):
    """Inversion of the channel map did not converge at the target point."""


# ---------------------------------------------------------------------------
# annulus product


def default_k_trunc(q):
    """Smallest K with q^{2K} below 1e-16 (truncation of the P product)."""
    if not (0.0 < q < 1.0):
        raise NonConvergentRatio(f"ratio q must lie in (0, 1), got {q}")
    return max(1, int(math.ceil(math.log(1e-16) / (2.0 * math.log(q)))))


def sc_product_P(zeta, q, K_trunc=None):
    """The annulus product P(zeta, q), truncated at K_trunc factors.

    P(zeta, q) = (1 - zeta) prod_{k=1}^{K} (1 - q^{2k} zeta)(1 - q^{2k}/zeta).
    Vectorized over zeta. Raises NonConvergentRatio unless 0 < q < 1.

    >>> abs(sc_product_P(1.0 + 0j, 0.3))
    0.0
    """
    if not (0.0 < q < 1.0):
        raise NonConvergentRatio(f"ratio q must lie in (0, 1), got {q}")
    K = K_trunc if K_trunc is not None else default_k_trunc(q)
    zeta = np.asarray(zeta, dtype=complex)
    out = 1.0 - zeta
    for k in range(1, K + 1):
        qk = q ** (2 * k)
        out = out * (1.0 - qk * zeta) * (1.0 - qk / zeta)
    if out.ndim == 0:
        return complex(out)
    return out


def _log_p_factors(xi, q, K, skip_leading=False):
    """Sum of principal logs of the factors of P(xi, q).

    Valid (single-valued, analytic) whenever every factor stays off the
    negative real axis, which holds for all integration paths used here.
    """
    if skip_leading:
        s = np.zeros_like(xi)
    else:
        s = np.log(1.0 - xi)
    for k in range(1, K + 1):
        qk = q ** (2 * k)
        s = s + np.log(1.0 - qk * xi) + np.log(1.0 - qk / xi)
    return s


# ---------------------------------------------------------------------------
# solved parameters


@dataclass(frozen=True)
class SCParams:
    """Solved Schwarz-Christoffel data for a polygonal channel cell.

    Prevertex angles are stored in traversal order (period seam first,
    gauge-fixed at angle 0 on the outer circle). verts_* are the collapsed
    vertex positions with the seam representative at Re = 0. offset pins
    the additive constant of the channel map; scale_A makes the period
    exactly one trip around the annulus.
    """

    q: float
    rho: float
    K_trunc: int
    angles_outer: tuple
    betas_outer: tuple
    verts_outer: tuple
    angles_inner: tuple
    betas_inner: tuple
    verts_inner: tuple
    scale_A: complex
    offset: complex
    residual: float

    def to_dict(self):
        return {
            "q": self.q,
            "rho": self.rho,
            "K_trunc": self.K_trunc,
            "angles_outer": list(self.angles_outer),
            "betas_outer": list(self.betas_outer),
            "verts_outer": [[v.real, v.imag] for v in self.verts_outer],
            "angles_inner": list(self.angles_inner),
            "betas_inner": list(self.betas_inner),
            "verts_inner": [[v.real, v.imag] for v in self.verts_inner],
            "scale_A": [self.scale_A.real, self.scale_A.imag],
            "offset": [self.offset.real, self.offset.imag],
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            q=float(d["q"]),
            rho=float(d["rho"]),
            K_trunc=int(d["K_trunc"]),
            angles_outer=tuple(float(a) for a in d["angles_outer"]),
            betas_outer=tuple(float(b) for b in d["betas_outer"]),
            verts_outer=tuple(complex(p[0], p[1]) for p in d["verts_outer"]),
            angles_inner=tuple(float(a) for a in d["angles_inner"]),
            betas_inner=tuple(float(b) for b in d["betas_inner"]),
            verts_inner=tuple(complex(p[0], p[1]) for p in d["verts_inner"]),
            scale_A=complex(d["scale_A"][0], d["scale_A"][1]),
            offset=complex(d["offset"][0], d["offset"][1]),
            residual=float(d["residual"]),
        )


def _collapse(verts, betas):
    # Traversal (left to right) order with the period-seam vertex first.
    # The first and last listed vertices describe the same boundary point
    # one period apart, so their exponents merge.
    pts = [complex(v) for v in reversed(verts)]
    bs = [float(b) for b in reversed(betas)]
    seam_beta = bs[0] + bs[-1]
    return [pts[0]] + pts[1:-1], [seam_beta] + bs[1:-1]


# ---------------------------------------------------------------------------
# map evaluator


class _SCEvaluator:
    """Evaluates the channel map f (annulus cover -> cell) for fixed data.

    The base point is sqrt(q) on the mid circle; f(base) = 0. Paths run
    along the mid circle (cached cumulative panels) and then radially.
    The radial approach to a prevertex keeps the singular factor real and
    positive, so Gauss-Jacobi quadrature absorbs the (1-t)^beta endpoint
    behavior exactly.
    """

    def __init__(self, q, K, angles_outer, betas_outer, angles_inner,
                 betas_inner, n_panels=128, gl_arc=12, gl_rad=24, gj_n=32):
        if not (0.0 < q < 1.0):
            raise NonConvergentRatio(f"ratio q must lie in (0, 1), got {q}")
        self.q = q
        self.K = K
        self.sq = math.sqrt(q)
        self.th_out = np.asarray(angles_outer, dtype=float)
        self.be_out = np.asarray(betas_outer, dtype=float)
        self.th_in = np.asarray(angles_inner, dtype=float)
        self.be_in = np.asarray(betas_inner, dtype=float)
        self.gl_rad = gl_rad
        self.gj_n = gj_n
        if self.th_out.size > 1 and np.min(np.diff(np.sort(self.th_out))) < 1e-8:
            raise DegenerateInitialization("outer prevertices collide")
        if self.th_in.size > 1 and np.min(np.diff(np.sort(self.th_in))) < 1e-8:
            raise DegenerateInitialization("inner prevertices collide")

        # mid-circle cumulative panels, scale constant from the period
        self.n_panels = n_panels
        h = TWO_PI / n_panels
        gx, gw = gauss_legendre(gl_arc)
        t = (np.arange(n_panels)[:, None] * h
             + 0.5 * h * (gx[None, :] + 1.0))
        vals = np.exp(self._log_integrand(self.sq * np.exp(1j * t.ravel())))
        vals = vals.reshape(n_panels, gl_arc)
        panel_ints = 1j * 0.5 * h * np.sum(gw[None, :] * vals, axis=1)
        raw_period = complex(np.sum(panel_ints))
        if abs(raw_period) < 1e-12:
            raise DegenerateInitialization(
                "period normalization constant vanished"
            )
        self.A = 1.0 / raw_period
        self.cum = np.concatenate(
            [[0.0 + 0.0j], np.cumsum(panel_ints)]
        ) * self.A
        self.period = complex(self.cum[-1])
        self._arc_gx, self._arc_gw = gx, gw
        self._arc_h = h

    # -- integrand -----------------------------------------------------

    def _log_integrand(self, zeta, skip=None):
        """log of prod_k factors at zeta (without A and without 1/zeta)."""
        zeta = np.asarray(zeta, dtype=complex)
        s = np.zeros(zeta.shape, dtype=complex)
        for k in range(self.th_out.size):
            xi = zeta * np.exp(-1j * self.th_out[k])
            sk = skip == ("out", k)
            s = s + self.be_out[k] * _log_p_factors(xi, self.q, self.K,
                                                    skip_leading=sk)
        for k in range(self.th_in.size):
            xi = self.q * np.exp(1j * self.th_in[k]) / zeta
            sk = skip == ("in", k)
            s = s + self.be_in[k] * _log_p_factors(xi, self.q, self.K,
                                                   skip_leading=sk)
        return s

    def fprime_hat(self, zeta):
        """df/dzeta on the rescaled annulus."""
        zeta = np.asarray(zeta, dtype=complex)
        return self.A * np.exp(self._log_integrand(zeta)) / zeta

    # -- path legs -----------------------------------------------------

    def circ(self, theta):
        """Cumulative mid-circle integral from angle 0 to theta (unwrapped)."""
        m = math.floor(theta / TWO_PI)
        tr = theta - TWO_PI * m
        j = min(int(tr / self._arc_h), self.n_panels - 1)
        t0 = j * self._arc_h
        if tr - t0 > 1e-15:
            tt = t0 + 0.5 * (tr - t0) * (self._arc_gx + 1.0)
            vals = np.exp(self._log_integrand(self.sq * np.exp(1j * tt)))
            part = self.A * 1j * 0.5 * (tr - t0) * np.sum(self._arc_gw * vals)
        else:
            part = 0.0
        return complex(self.cum[j] + part + m * self.period)

    def _radial(self, theta, r):
        """Integral along the ray at angle theta from sqrt(q) out to r."""
        s0 = math.log(self.sq)
        s1 = math.log(r)
        if abs(s1 - s0) < 1e-15:
            return 0.0 + 0.0j
        # graded panels, finest near the evaluation end (the boundary side)
        n_p = 6
        frac = 1.0 - 0.5 ** np.arange(n_p + 1)
        frac[-1] = 1.0
        brk = s0 + (s1 - s0) * frac
        gx, gw = gauss_legendre(self.gl_rad)
        total = 0.0 + 0.0j
        eiθ = np.exp(1j * theta)
        for a, b in zip(brk, brk[1:]):
            ss = 0.5 * (b - a) * gx + 0.5 * (b + a)
            vals = np.exp(self._log_integrand(np.exp(ss) * eiθ))
            total += 0.5 * (b - a) * np.sum(gw * vals)
        return self.A * total

    def f_cover(self, u):
        """f on the universal cover: u with zeta = exp(i 2 pi u)."""
        theta = TWO_PI * u.real
        r = math.exp(-TWO_PI * u.imag)
        return self.circ(theta) + self._radial(theta, r)

    def f_cover_prime(self, u):
        """df/du on the cover; equals i 2 pi A exp(log-integrand)."""
        zeta = np.exp(1j * TWO_PI * u)
        return 1j * TWO_PI * self.A * complex(
            np.exp(self._log_integrand(np.asarray([zeta])))[0]
        )

    def f_at_prevertex(self, circle, k):
        """f at a boundary prevertex (radial approach, Gauss-Jacobi end)."""
        sq, q = self.sq, self.q
        if circle == "out":
            theta = self.th_out[k]
            beta = self.be_out[k]
        else:
            theta = self.th_in[k]
            beta = self.be_in[k]
        x, w = gauss_jacobi(self.gj_n, beta)
        t = 0.5 * (x + 1.0)
        eiθ = np.exp(1j * theta)
        if circle == "out":
            # zeta(t) = e^{i theta} (sq + t (1 - sq));
            # leading factor (1 - zeta e^{-i theta}) = (1 - sq)(1 - t)
            zt = eiθ * (sq + t * (1.0 - sq))
            rest = np.exp(self._log_integrand(zt, skip=("out", k)))
            h = self.A * rest / zt * eiθ * (1.0 - sq)
            pref = (1.0 - sq) ** beta
        else:
            # zeta(t) = e^{i theta} (sq - t (sq - q)); the leading factor of
            # P(a/zeta) is (1 - a/zeta) = (1 - t)(sq - q)/s(t), s(t) real > 0
            st = sq - t * (sq - q)
            zt = eiθ * st
            rest = np.exp(self._log_integrand(zt, skip=("in", k)))
            h = self.A * rest / zt * (-eiθ * (sq - q)) * ((sq - q) / st) ** beta
            pref = 1.0
        val = pref * 0.5 ** (beta + 1.0) * np.sum(w * h)
        return self.circ(float(theta)) + complex(val)

    # -- inversion -------------------------------------------------------

    def invert_with_continuation(self, target, u0, steps=8):
        """invert with a fallback walk along a vertical segment in the cell.

        u0 should anchor mid-column at the same Re as the target; cells are
        vertically convex (slab decomposition), so the straight path stays
        interior.
        """
        try:
            return self.invert(target, u0)
        except MapEvaluationFailure:
            t_start = self.f_cover(u0)
            u = complex(u0)
            for s in np.linspace(0.0, 1.0, steps + 1)[1:]:
                t = t_start + s * (target - t_start)
                u = self.invert(t, u)
            return u

    def invert(self, target, u0, tol=1e-13, max_iter=60):
        """Solve f_cover(u) = target by a damped Newton iteration."""
        im_max = -math.log(self.q) / TWO_PI
        pad = 0.05 * im_max
        u = complex(u0)
        best = None
        for _ in range(max_iter):
            fu = self.f_cover(u)
            res = abs(fu - target)
            if best is None or res < best[1]:
                best = (u, res)
            if res < 1e-13:
                return u
            fp = self.f_cover_prime(u)
            if fp == 0:
                break
            step = -(fu - target) / fp
            # keep the iterate inside (a slightly padded copy of) the cover
            for _damp in range(12):
                un = u + step
                if -pad < un.imag < im_max + pad:
                    break
                step *= 0.5
            else:
                break
            u = un
            if abs(step) < tol and res < 1e-12:
                return u
        if best is not None and best[1] < 1e-12:
            return best[0]
        raise MapEvaluationFailure(
            f"map inversion stalled at target {target}"
        )


# ---------------------------------------------------------------------------
# parameter solve


def _softmax(logits):
    e = np.exp(logits - np.max(logits))
    return e / np.sum(e)


def _angles_from_vector(x, n_out, n_in):
    lo = x[: n_out - 1]
    t0 = x[n_out - 1]
    li = x[n_out : n_out + n_in - 1]
    sq_logit = x[n_out + n_in - 1]
    inc_out = TWO_PI * _softmax(np.concatenate([lo, [0.0]]))
    th_out = np.concatenate([[0.0], np.cumsum(inc_out)[:-1]])
    inc_in = TWO_PI * _softmax(np.concatenate([li, [0.0]]))
    th_in = t0 + np.concatenate([[0.0], np.cumsum(inc_in)[:-1]])
    q = math.exp(-math.exp(sq_logit))
    return th_out, th_in, q


def _initial_vector(vo, vi):
    def gap_logits(verts):
        pts = verts + [verts[0] + 1.0]
        gaps = np.array([abs(b - a) for a, b in zip(pts, pts[1:])])
        gaps = np.maximum(gaps, 1e-6)
        l = np.log(gaps / gaps[-1])
        return l[:-1]

    lo = gap_logits(vo)
    li = gap_logits(vi)
    t0 = TWO_PI * (vi[0].real - vo[0].real)
    y_up = np.mean([v.imag for v in vi])
    y_lo = np.mean([v.imag for v in vo])
    gap = max(y_up - y_lo, 1e-3)
    q0 = math.exp(-TWO_PI * gap)
    sq_logit = math.log(-math.log(q0))
    return np.concatenate([lo, [t0], li, [sq_logit]])


def solve_sc_parameters(spec, init=None, budget=None, resolution="final"):
    """Solve for prevertex angles and modulus of a polygonal channel cell.

    Returns SCParams. The residual system matches consecutive prevertex
    image differences against the polyline vertex differences on both
    circles and anchors the inner circle to the outer one; the period is
    exactly one by the normalization of the scale constant, and the
    absolute offset is pinned by definition, so neither enters the
    residual. Raises NoConvergence (with the best-iterate report),
    DegenerateInitialization, or InvalidCell.
    """
    cellgeom.build_cell(spec, nx=4, ny=4)
    vo, bo = _collapse(spec.lower_polyline, spec.beta_lower)
    vi, bi = _collapse(spec.upper_polyline, spec.beta_upper)
    n_out, n_in = len(vo), len(vi)
    x0 = _initial_vector(vo, vi) if init is None else np.asarray(init, float)
    coarse_kw = dict(n_panels=64, gl_arc=10, gl_rad=16, gj_n=24)
    fine_kw = dict(n_panels=256, gl_arc=16, gl_rad=24, gj_n=48)

    def make_residual(kw):
        def residual(x):
            th_out, th_in, q = _angles_from_vector(x, n_out, n_in)
            K = default_k_trunc(q)
            ev = _SCEvaluator(q, K, th_out, bo, th_in, bi, **kw)
            fo = [ev.f_at_prevertex("out", k) for k in range(n_out)]
            fi = [ev.f_at_prevertex("in", k) for k in range(n_in)]
            off = vo[0] - fo[0]
            res = []
            for k in range(1, n_out):
                d = (fo[k] + off) - vo[k]
                res.extend([d.real, d.imag])
            d = (fi[0] + off) - vi[0]
            res.extend([d.real, d.imag])
            for k in range(1, n_in):
                d = (fi[k] + off) - vi[k]
                res.extend([d.real, d.imag])
            return np.array(res)

        return residual

    # coarse pass for the basin, fine pass to quadrature accuracy
    budget = budget or SolverBudget(max_iter=80, gtol=1e-13)
    report = nlls_solve(make_residual(coarse_kw), x0, budget=budget)
    report = nlls_solve(
        make_residual(fine_kw),
        report.x,
        budget=SolverBudget(max_iter=30, gtol=1e-13),
    )
    th_out, th_in, q = _angles_from_vector(report.x, n_out, n_in)
    K = default_k_trunc(q)

    # rebuild at final resolution and pin the offset
    fine_kw = dict(n_panels=256, gl_arc=16, gl_rad=24, gj_n=48)
    if resolution == "solve":
        fine_kw = solve_kw
    ev = _SCEvaluator(q, K, th_out, bo, th_in, bi, **fine_kw)
    fo = [ev.f_at_prevertex("out", k) for k in range(n_out)]
    fi = [ev.f_at_prevertex("in", k) for k in range(n_in)]
    offset = vo[0] - fo[0]
    errs = []
    for k in range(n_out):
        errs.append(abs((fo[k] + offset) - vo[k]))
    for k in range(n_in):
        errs.append(abs((fi[k] + offset) - vi[k]))
    return SCParams(
        q=q,
        rho=q ** -0.5,
        K_trunc=K,
        angles_outer=tuple(th_out),
        betas_outer=tuple(bo),
        verts_outer=tuple(vo),
        angles_inner=tuple(th_in),
        betas_inner=tuple(bi),
        verts_inner=tuple(vi),
        scale_A=complex(ev.A),
        offset=complex(offset),
        residual=float(max(errs)),
    )


def _evaluator_for(params, fine=True):
    kw = dict(n_panels=256, gl_arc=16, gl_rad=24, gj_n=48) if fine else {}
    return _SCEvaluator(
        params.q,
        params.K_trunc,
        np.asarray(params.angles_outer),
        np.asarray(params.betas_outer),
        np.asarray(params.angles_inner),
        np.asarray(params.betas_inner),
        **kw,
    )


def sc_channel_map(z, params, evaluator=None):
    """Channel map evaluated at a point z of the raw annulus {1/rho<|z|<rho}.

    Raw frame: no rotation applied, period seam prevertex at angle 0.
    The argument of z is taken in [0, 2 pi). Raises PathThroughPrevertex
    if z coincides with a boundary prevertex (use the dedicated endpoint
    integrals for those) and MapEvaluationFailure outside the closed
    annulus.
    """
    ev = evaluator or _evaluator_for(params)
    z = complex(z)
    r_hat = abs(z) / params.rho
    if not (params.q - 1e-12 <= r_hat <= 1.0 + 1e-12):
        raise MapEvaluationFailure(f"point {z} is outside the annulus")
    r_hat = min(max(r_hat, params.q), 1.0)
    theta = math.atan2(z.imag, z.real) % TWO_PI
    for th, circle in ((params.angles_outer, 1.0), (params.angles_inner,
                                                    params.q)):
        if abs(r_hat - circle) < 1e-12:
            for t in th:
                if abs((theta - t + math.pi) % TWO_PI - math.pi) < 1e-10:
                    raise PathThroughPrevertex(
                        "target point sits on a prevertex"
                    )
    return ev.circ(theta) + ev._radial(theta, r_hat) + params.offset


# ---------------------------------------------------------------------------
# the annulus map object


class AnnulusMap:
    """Conformal map data between the lifted channel D and an annulus.

    Exposes phi / dphi (D -> A) and psi / dpsi (A -> D), the modulus rho,
    the sampled cut curve Gamma (image of the junction), and the frame
    rotation. provenance is 'builtin' or 'sc_solved'.
    """

    def __init__(self, rho, phi, dphi, psi, dpsi, cut_radii, cut_args,
                 provenance, rotation=0.0, junction=(0.0, 0.0), extra=None):
        self.rho = float(rho)
        self._phi = phi
        self._dphi = dphi
        self._psi = psi
        self._dpsi = dpsi
        self.cut_radii = np.asarray(cut_radii, dtype=float)
        self.cut_args = np.asarray(cut_args, dtype=float)
        self.provenance = provenance
        self.rotation = float(rotation)
        self.junction = (float(junction[0]), float(junction[1]))
        self.extra = extra or {}

    def phi(self, w):
        return self._phi(w)

    def dphi(self, w):
        return self._dphi(w)

    def psi(self, zeta):
        return self._psi(zeta)

    def dpsi(self, zeta):
        return self._dpsi(zeta)

    def cut_arg_samples(self):
        return self.cut_args

    def rotated(self, alpha):
        """The same map with the annulus rotated by exp(i alpha)."""
        ph = self._phi
        dph = self._dphi
        ps = self._psi
        dps = self._dpsi
        ei = np.exp(1j * alpha)
        return AnnulusMap(
            self.rho,
            lambda w: ei * ph(w),
            lambda w: ei * dph(w),
            lambda z: ps(z / ei),
            lambda z: dps(z / ei) / ei,
            self.cut_radii,
            self.cut_args + alpha,
            self.provenance,
            rotation=self.rotation + alpha,
            junction=self.junction,
            extra=self.extra,
        )

    def gamma_of_r(self, r):
        """Cut-curve argument at radius r (log-radial interpolation)."""
        lr = np.log(np.clip(r, self.cut_radii.min(), self.cut_radii.max()))
        order = np.argsort(self.cut_radii)
        return np.interp(
            lr, np.log(self.cut_radii[order]), self.cut_args[order]
        )

    def log_branch(self, zeta):
        """log zeta with the argument window [gamma(r), gamma(r) + 2 pi).

        The window follows the cut curve, so powers zeta^s built from this
        log are single-valued on the slit annulus. Raises BranchViolation
        outside the closed annulus. Accepts scalars or arrays.
        """
        scalar = np.ndim(zeta) == 0
        zeta = np.asarray(zeta, dtype=complex)
        r = np.abs(zeta)
        if np.any(r < 1.0 / self.rho - 1e-12) or np.any(r > self.rho + 1e-12):
            bad = zeta.ravel()[
                int(np.argmax((r < 1.0 / self.rho - 1e-12)
                              | (r > self.rho + 1e-12)))
            ]
            raise cellgeom.BranchViolation(
                f"|{bad}| = {abs(bad)} outside the annulus"
            )
        lo = self.gamma_of_r(r)
        theta = lo + (np.angle(zeta) - lo) % TWO_PI
        theta = np.where(theta >= lo + TWO_PI - 1e-15, lo, theta)
        out = np.log(r) + 1j * theta
        return complex(out) if scalar else out

    def consistency_report(self, n_probes=40, seed=7):
        """Analyticity, derivative, and round-trip residuals at probes.

        Probes are drawn in the annulus (where psi is defined everywhere)
        and mapped into the domain, so every phi evaluation sees an
        interior point.
        """
        rng = np.random.default_rng(seed)
        r = np.exp(rng.uniform(np.log(1.1 / self.rho),
                               np.log(self.rho / 1.1), n_probes))
        th = rng.uniform(0.0, TWO_PI, n_probes)
        zetas = r * np.exp(1j * th)
        h = 1e-6
        cr = 0.0
        deriv = 0.0
        rt = 0.0
        for zeta in zetas:
            w = complex(self.psi(zeta))
            rt = max(rt, abs(self._eval_phi(w) - zeta))
            dx = (self._eval_phi(w + h) - self._eval_phi(w - h)) / (2 * h)
            dy = (self._eval_phi(w + 1j * h) - self._eval_phi(w - 1j * h)) / (
                2j * h
            )
            cr = max(cr, abs(dx - dy) / max(abs(dx), 1e-30))
            deriv = max(deriv, abs(complex(self.dphi(w)) - dx)
                        / max(abs(dx), 1e-30))
        return {"cr_residual": cr, "deriv_residual": deriv,
                "roundtrip": rt, "n_probes": n_probes}

    def _eval_phi(self, w):
        v = self._phi(w)
        return complex(v) if np.ndim(v) == 0 else v

    # -- persistence ---------------------------------------------------

    def save(self, path):
        data = {
            "provenance": self.provenance,
            "rho": self.rho,
            "rotation": self.rotation,
            "junction": [self.junction[0], self.junction[1]],
            "cut_radii": self.cut_radii.tolist(),
            "cut_args": self.cut_args.tolist(),
        }
        if self.provenance == "builtin":
            data["h"] = self.extra["h"]
        else:
            data["params"] = self.extra["params"].to_dict()
            data["residual_report"] = self.extra.get("residual_report", {})
        with open(path, "w") as fh:
            json.dump(data, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            data = json.load(fh)
        if data["provenance"] == "builtin":
            m = builtin_strip_map(data["h"])
            if data["rotation"]:
                m = m.rotated(data["rotation"])
            return m
        params = SCParams.from_dict(data["params"])
        return annulus_map_from_sc(
            params,
            junction=tuple(data["junction"]),
            rotation=data["rotation"],
            cut_final=(data["cut_radii"], data["cut_args"]),
        )


def builtin_strip_map(h):
    """Annulus map of the straight channel of half-height h.

    The exponential lift of (0,1) x (-h, h) is already the round annulus
    with rho = exp(2 pi h); phi is the identity and dphi is 1 everywhere.
    """
    if h <= 0:
        raise ValueError("half-height must be positive")
    rho = math.exp(TWO_PI * h)
    radii = np.exp(np.linspace(-math.log(rho), math.log(rho), 33))
    ident = lambda w: np.asarray(w, dtype=complex) + 0.0
    one = lambda w: np.ones_like(np.asarray(w, dtype=complex))
    return AnnulusMap(
        rho,
        ident,
        one,
        ident,
        one,
        radii,
        np.zeros_like(radii),
        "builtin",
        rotation=0.0,
        junction=(-h, h),
        extra={"h": h},
    )


def _wall_tables(params):
    """Periodic piecewise-linear interpolation tables for the two walls."""
    def tables(verts):
        xs = np.array([v.real for v in verts] + [verts[0].real + 1.0])
        ys = np.array([v.imag for v in verts] + [verts[0].imag])
        return xs, ys

    return tables(list(params.verts_outer)), tables(list(params.verts_inner))


def _cell_frac_builder(params):
    """Return z -> relative height of z between the cell's two boundary walls.

    The walls are reconstructed as periodic piecewise-linear interpolants of
    the collapsed vertex lists, which is enough for Newton initialization.
    """
    (xo, yo), (xi, yi) = _wall_tables(params)

    def frac(z0):
        x = z0.real % 1.0
        y_lo = np.interp(x, xo, yo)
        y_hi = np.interp(x, xi, yi)
        t = (z0.imag - y_lo) / max(y_hi - y_lo, 1e-9)
        return min(max(t, 0.02), 0.98)

    return frac


def annulus_map_from_sc(params, junction=None, n_cut=33, rotation=None,
                        cut_final=None):
    """Build the AnnulusMap of a solved polygonal cell.

    Samples the cut curve Gamma (image of the junction segment) by
    inverting the channel map along Re z = 0, then rotates the annulus so
    the mean argument of Gamma is pi/2 (the sector normalization), unless
    an explicit rotation is given. cut_final, if given, supplies the
    already-rotated cut samples verbatim (used when reloading archives,
    to keep round trips bit-identical).
    """
    ev = _evaluator_for(params)
    a = params.verts_outer[0].imag
    b = params.verts_inner[0].imag
    if junction is not None:
        a, b = junction
    im_max = -math.log(params.q) / TWO_PI

    if cut_final is None:
        ys = a + (b - a) * (np.arange(n_cut) + 0.5) / n_cut
        radii_hat = []
        args_hat = []
        u = 0.0 + 0.5j * im_max
        for y in ys:
            frac = (y - a) / (b - a)
            u0 = 0.0 + 1j * (1.0 - frac) * im_max
            if abs(u0 - u) > 0.45 * im_max:
                u_init = u0
            else:
                u_init = u
            u = ev.invert(complex(0.0, y) - params.offset, u_init)
            radii_hat.append(math.exp(-TWO_PI * u.imag))
            args_hat.append(TWO_PI * u.real)
        radii_hat = np.concatenate([[params.q], radii_hat, [1.0]])
        args_hat = np.concatenate(
            [[params.angles_inner[0]], args_hat, [0.0]]
        )
        if rotation is None:
            alpha = math.pi / 2.0 - float(np.mean(args_hat))
        else:
            alpha = rotation
        final_radii = params.rho * np.asarray(radii_hat)
        final_args = np.asarray(args_hat) + alpha
    else:
        if rotation is None:
            raise ValueError("cut_final requires an explicit rotation")
        alpha = rotation
        final_radii = np.asarray(cut_final[0], dtype=float)
        final_args = np.asarray(cut_final[1], dtype=float)

    rho = params.rho
    q = params.q
    scale = rho * np.exp(1j * alpha)

    def to_cell(w):
        # inverse exponential with the junction-cut window [0, 2 pi)
        w = complex(w)
        theta = math.atan2(w.imag, w.real) % TWO_PI
        return (theta - 1j * math.log(abs(w))) / TWO_PI

    cell_frac = _cell_frac_builder(params)

    def u_init_for(z0):
        return complex(z0.real, (1.0 - cell_frac(z0)) * im_max)

    def invert_cell(z0):
        target = z0 - params.offset
        try:
            return ev.invert(target, u_init_for(z0))
        except MapEvaluationFailure:
            mid = complex(z0.real, 0.5 * im_max)
            return ev.invert_with_continuation(target, mid)

    def phi_scalar(w):
        u = invert_cell(to_cell(w))
        return scale * np.exp(1j * TWO_PI * u)

    def phi(w):
        if np.ndim(w) == 0:
            return phi_scalar(w)
        return np.array([phi_scalar(x) for x in np.asarray(w).ravel()]
                        ).reshape(np.shape(w))

    def dphi_scalar(w):
        u = invert_cell(to_cell(w))
        zeta_hat = np.exp(1j * TWO_PI * u)
        fp = ev.f_cover_prime(u)
        # dzeta_A/dw = scale * (dzeta_hat/du) / (dz/du) * dz/dw
        return scale * (1j * TWO_PI * zeta_hat / fp) / (1j * TWO_PI * complex(w))

    def dphi(w):
        if np.ndim(w) == 0:
            return dphi_scalar(w)
        return np.array([dphi_scalar(x) for x in np.asarray(w).ravel()]
                        ).reshape(np.shape(w))

    def psi_scalar(zeta):
        zeta_hat = complex(zeta) / scale
        r_hat = abs(zeta_hat)
        r_hat = min(max(r_hat, q), 1.0)
        theta = math.atan2(zeta_hat.imag, zeta_hat.real) % TWO_PI
        z = ev.circ(theta) + ev._radial(theta, r_hat) + params.offset
        return np.exp(1j * TWO_PI * z)

    def psi(zeta):
        if np.ndim(zeta) == 0:
            return psi_scalar(zeta)
        return np.array([psi_scalar(x) for x in np.asarray(zeta).ravel()]
                        ).reshape(np.shape(zeta))

    def dpsi_scalar(zeta):
        zeta_hat = complex(zeta) / scale
        w = psi_scalar(zeta)
        fp = ev.fprime_hat(np.asarray([zeta_hat]))[0]
        return 1j * TWO_PI * fp / scale * w

    def dpsi(zeta):
        if np.ndim(zeta) == 0:
            return dpsi_scalar(zeta)
        return np.array([dpsi_scalar(x) for x in np.asarray(zeta).ravel()]
                        ).reshape(np.shape(zeta))

    return AnnulusMap(
        rho,
        phi,
        dphi,
        psi,
        dpsi,
        final_radii,
        final_args,
        "sc_solved",
        rotation=alpha,
        junction=(a, b),
        extra={
            "params": params,
            "evaluator": ev,
            "residual_report": {"vertex_residual": params.residual},
        },
    )


# ---------------------------------------------------------------------------
# lifted map


class LiftedMap:
    """The lift phi: Pi -> strip of an annulus map.

    phi(z) = (i 2 pi)^{-1} log(phi_A(exp(i 2 pi z))) + [Re z] - c_norm,
    with the log branch following the cut curve and c_norm a real constant
    chosen so the straight channel lifts to the identity (the annulus map
    is only defined up to rotation, and every kernel formula is invariant
    under real translations of the lift, so the constant is free; pinning
    it this way makes results reproducible).

    Satisfies phi(z + 1) = phi(z) + 1 and maps into the horizontal strip
    of half-height log(rho) / (2 pi).
    """

    def __init__(self, amap, delta=0.05):
        rep = check_sector_assumption(amap, delta)
        applied = 0.0
        if not rep.ok:
            applied = rep.suggested_rotation
            amap = amap.rotated(applied)
            rep = check_sector_assumption(amap, delta)
            if not rep.ok:
                raise SectorAssumptionFailed(str(rep))
        self.amap = amap
        self.rotation_applied = applied
        self.sector_report = rep
        self.rho = amap.rho
        self.half_height = math.log(amap.rho) / TWO_PI
        self._is_builtin = amap.provenance == "builtin"
        self._alpha = amap.rotation
        if not self._is_builtin:
            self._ev = amap.extra["evaluator"]
            self._params = amap.extra["params"]
            self._im_max = -math.log(self._params.q) / TWO_PI
            self._frac = _cell_frac_builder(self._params)
        a, b = amap.junction
        self._junction = (a, b)
        z_ref = 0.5 + 0.5j * (a + b)
        self.c_norm = 0.0
        self.c_norm = (self(z_ref)).real - z_ref.real

    # -- scalar core -----------------------------------------------------

    def _phi_pre_builtin(self, z0):
        zeta = np.exp(1j * self._alpha) * np.exp(2j * np.pi * z0)
        lo = self._alpha
        theta = np.angle(zeta)
        theta = lo + np.mod(theta - lo, TWO_PI)
        near_top = theta >= lo + TWO_PI - 1e-14
        theta = np.where(near_top, lo, theta)
        return (theta - 1j * np.log(np.abs(zeta))) / TWO_PI

    def _phi_pre_sc(self, z0, with_deriv=False):
        p = self._params
        u0 = self._u_init(z0)
        target = z0 - p.offset
        try:
            u = self._ev.invert(target, u0)
        except MapEvaluationFailure:
            mid = complex(z0.real, 0.5 * self._im_max)
            u = self._ev.invert_with_continuation(target, mid)
        val = u + self._alpha / TWO_PI - 1j * math.log(p.rho) / TWO_PI
        if not with_deriv:
            return val, None
        # phi_A'(w) at w = exp(i 2 pi z0)
        zeta_hat = np.exp(1j * TWO_PI * u)
        fp = self._ev.f_cover_prime(u)
        w = np.exp(1j * TWO_PI * z0)
        scale = p.rho * np.exp(1j * self._alpha)
        dphi = scale * zeta_hat / (fp * w) * 1.0
        return val, dphi

    def _u_init(self, z0):
        return complex(z0.real, (1.0 - self._frac(z0)) * self._im_max)

    def __call__(self, z):
        """Lifted map value(s); z scalar or array of points of Pi."""
        if np.ndim(z) == 0:
            return self._eval_scalar(complex(z))
        zf = np.asarray(z, dtype=complex)
        if self._is_builtin:
            m = np.floor(zf.real)
            pre = self._phi_pre_builtin(zf - m)
            return pre + m - self.c_norm
        return np.array([self._eval_scalar(x) for x in zf.ravel()]
                        ).reshape(zf.shape)

    def _eval_scalar(self, z):
        m = math.floor(z.real)
        z0 = z - m
        if self._is_builtin:
            pre = complex(self._phi_pre_builtin(np.asarray(z0) + 0j))
        else:
            pre, _ = self._phi_pre_sc(z0)
        return pre + m - self.c_norm

    def with_annulus_derivative(self, z):
        """(phi(z), phi_A'(exp(i 2 pi z))) in the rotated frame."""
        if self._is_builtin:
            val = self(z)
            if np.ndim(z) == 0:
                return val, np.exp(1j * self._alpha)
            return val, np.full(np.shape(z), np.exp(1j * self._alpha),
                                dtype=complex)
        if np.ndim(z) == 0:
            zs = [complex(z)]
        else:
            zs = np.asarray(z, dtype=complex).ravel()
        vals = np.empty(len(zs), dtype=complex)
        ders = np.empty(len(zs), dtype=complex)
        for i, zz in enumerate(zs):
            m = math.floor(zz.real)
            pre, d = self._phi_pre_sc(zz - m, with_deriv=True)
            vals[i] = pre + m - self.c_norm
            ders[i] = d
        if np.ndim(z) == 0:
            return complex(vals[0]), complex(ders[0])
        return vals.reshape(np.shape(z)), ders.reshape(np.shape(z))

    def wall_heights(self, x):
        """Lower and upper channel boundary heights over Re z = x.

        x may be a scalar or array; heights come from the cell's vertex
        tables (piecewise linear), or +/- half_height for the straight
        channel.
        """
        x = np.mod(np.asarray(x, dtype=float), 1.0)
        if self._is_builtin:
            h = self.half_height
            return np.full_like(x, -h), np.full_like(x, h)
        (xo, yo), (xi, yi) = _wall_tables(self._params)
        return np.interp(x, xo, yo), np.interp(x, xi, yi)

    def wall_vertex_abscissae(self):
        """Sorted Re-coordinates of wall vertices in [0, 1); empty for the strip."""
        if self._is_builtin:
            return np.array([], dtype=float)
        xs = {v.real % 1.0 for v in self._params.verts_outer}
        xs |= {v.real % 1.0 for v in self._params.verts_inner}
        return np.array(sorted(xs))

    def abs_derivative(self, z):
        """|phi'(z)| of the lifted map.

        phi'(z) = phi_A'(E z) E(z) / phi_A(E z), so the modulus is
        |phi_A'(E z)| e^{2 pi (Im phi(z) - Im z)}.  The straight channel
        lifts to the identity, where the derivative is the constant 1.
        """
        if self._is_builtin:
            return 1.0 if np.ndim(z) == 0 else np.ones(np.shape(z))
        val, der = self.with_annulus_derivative(z)
        out = np.abs(der) * np.exp(TWO_PI * (np.imag(val) - np.imag(z)))
        return float(out) if np.ndim(z) == 0 else out

    # -- diagnostics -----------------------------------------------------

    def periodicity_residual(self, probes):
        vals = 0.0
        for z in probes:
            vals = max(vals, abs(self(z + 1.0) - self(z) - 1.0))
        return vals

    def junction_continuity_residual(self, n=9, eps=1e-7):
        a, b = self._junction
        ys = a + (b - a) * (np.arange(n) + 0.5) / n
        worst = 0.0
        for y in ys:
            left = self(complex(1.0 - eps, y))
            right = self(complex(eps, y)) + 1.0
            # linear extrapolation of both one-sided values to Re = 1
            left2 = self(complex(1.0 - 2 * eps, y))
            right2 = self(complex(2 * eps, y)) + 1.0
            lim_l = 2 * left - left2
            lim_r = 2 * right - right2
            worst = max(worst, abs(lim_l - lim_r))
        return worst


def lift(amap, delta=0.05):
    """Lift an annulus map to the channel, auto-rotating if needed.

    Raises SectorAssumptionFailed if the cut curve cannot be brought into
    the sector (delta, pi - delta) by a rotation.
    """
    return LiftedMap(amap, delta=delta)


# ---------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class WeightEvaluators:
    """Weights tying the cell, the lifted region, and the annulus together.

    W(w) = 1 / (4 pi^2 |w|^2) is the area weight induced on D by the
    exponential map; v(zeta) = psi'(zeta) / (2 pi psi(zeta)) is the
    derivative of the full pullback A -> cell, and V = |v|^2 the induced
    area weight on the annulus.
    """

    W: object
    v: object
    V: object


def weight_evaluators(amap):
    def W(w):
        w = np.asarray(w, dtype=complex)
        return 1.0 / (4.0 * np.pi**2 * np.abs(w) ** 2)

    if amap.provenance == "builtin":
        # psi is a rotation of the identity, so v collapses to 1/(2 pi zeta)
        # in every frame
        def v(zeta):
            zeta = np.asarray(zeta, dtype=complex)
            return 1.0 / (2.0 * np.pi * zeta)

    else:

        def v(zeta):
            zeta = np.asarray(zeta, dtype=complex)
            ps = amap.psi(zeta)
            dps = amap.dpsi(zeta)
            return dps / (2.0 * np.pi * ps)

    def V(zeta):
        return np.abs(v(zeta)) ** 2

    return WeightEvaluators(W=W, v=v, V=V)

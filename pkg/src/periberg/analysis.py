"""Quantitative studies built on the kernel evaluators.

Four probes: boundedness of the lifted map derivative on boundary collars,
exponential decay fitting of the periodic kernel across translates, the
translation-weight class check, and a Schur-type row-integral bound for
the weighted projection.  Everything reports plain numbers; nothing here
feeds back into the evaluators.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import cellgeom
from .kernels import TWO_PI, periodic_kernel_closed, sech_sq


class UnderflowBeyondN(Exception):
    """Kernel peaks underflow before enough fit points accumulate."""


class NotAWeight(Exception):
    """No finite constant satisfies the two-sided translation bound."""


class NotSummable(Exception):
    """Per-period row masses stop decreasing; the window sum diverges."""


# ---------------------------------------------------------------------------
# derivative bounds


@dataclass(frozen=True)
class PhiPrimeReport:
    inf: float
    sup: float
    collar_distances: tuple
    inf_by_level: tuple
    sup_by_level: tuple

    @property
    def blow_up(self):
        """True when the collar sup increases at every shrink step."""
        s = self.sup_by_level
        return all(s[i + 1] > s[i] * 1.02 for i in range(len(s) - 1))

    def __iter__(self):
        return iter((self.inf, self.sup))

    def __str__(self):
        lines = [f"inf: {self.inf:.6g}", f"sup: {self.sup:.6g}",
                 f"blow_up: {self.blow_up}"]
        for d, lo, hi in zip(self.collar_distances, self.inf_by_level,
                             self.sup_by_level):
            lines.append(f"collar {d:g}: inf {lo:.6g} sup {hi:.6g}")
        return "\n".join(lines)


def phi_prime_bounds(ctx, collar_levels=4, n_probe=48, d0=0.08):
    """Sampled extrema of |phi'| on collars shrinking toward the walls.

    Each level halves the collar distance; the per-level sups expose a
    corner blow-up as a monotone trend, while smooth walls give stable
    bounds.  Returns a PhiPrimeReport (unpacks to (inf, sup)).
    """
    lifted = ctx.lifted
    base = (np.arange(n_probe) + 0.5) / n_probe
    corners = lifted.wall_vertex_abscissae()
    infs, sups, dists = [], [], []
    for k in range(collar_levels):
        d = d0 * 0.5 ** k
        # cluster extra abscissae around each wall vertex so the probes
        # approach corners at the same rate as the collar shrinks
        near = [(vx + c * d) % 1.0 for vx in corners for c in (-1.0, -0.5, 0.5, 1.0)]
        x = np.sort(np.concatenate([base, np.array(near)]))
        y_lo, y_hi = lifted.wall_heights(x)
        gap = y_hi - y_lo
        pts = np.concatenate([x + 1j * (y_lo + d * gap),
                              x + 1j * (y_hi - d * gap)])
        vals = np.asarray(lifted.abs_derivative(pts), dtype=float)
        infs.append(float(vals.min()))
        sups.append(float(vals.max()))
        dists.append(d)
    return PhiPrimeReport(inf=min(infs), sup=max(sups),
                          collar_distances=tuple(dists),
                          inf_by_level=tuple(infs),
                          sup_by_level=tuple(sups))


# ---------------------------------------------------------------------------
# kernel decay across translates


@dataclass
class DecayFit:
    """Log-linear fit of per-translate kernel peaks.

    peaks[k] is max over the probe set G of |K(g + ns[k], w0)|.  The fit
    runs over fit_ns (n >= 2, underflow excluded); rate is the positive
    decay exponent.  Both candidate reference rates are recorded: the
    sech-squared asymptotic pi^2 / log rho and its half.
    """
    ns: np.ndarray
    peaks: np.ndarray
    fit_ns: np.ndarray
    rate: float
    intercept: float
    residual: float
    rate_sech_sq: float
    rate_half: float
    prefactor_lo: float
    prefactor_hi: float

    @property
    def matched_rate(self):
        if abs(self.rate - self.rate_sech_sq) <= abs(self.rate - self.rate_half):
            return "pi^2/log(rho)"
        return "pi^2/(2 log(rho))"

    def fitted(self, n):
        return math.exp(self.intercept - self.rate * np.asarray(n, dtype=float))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["n", "peak", "fit"])
            for n, p in zip(self.ns, self.peaks):
                wr.writerow([int(n), repr(float(p)),
                             repr(float(np.exp(self.intercept - self.rate * n)))])

    def __str__(self):
        return "\n".join([
            f"rate: {self.rate:.6g}",
            f"residual: {self.residual:.3g}",
            f"rate_sech_sq: {self.rate_sech_sq:.6g}",
            f"rate_half: {self.rate_half:.6g}",
            f"matched_rate: {self.matched_rate}",
            f"prefactor_lo: {self.prefactor_lo:.6g}",
            f"prefactor_hi: {self.prefactor_hi:.6g}",
            f"fit_range: {int(self.fit_ns[0])}..{int(self.fit_ns[-1])}",
        ])


def default_probe_set(ctx, n_x=7, n_y=3, margin=0.3):
    """A compact grid inside the cell, away from the walls."""
    x = 0.1 + 0.8 * (np.arange(n_x) + 0.5) / n_x
    y_lo, y_hi = ctx.lifted.wall_heights(x)
    mid = 0.5 * (y_lo + y_hi)
    half = 0.5 * (y_hi - y_lo) * (1.0 - margin)
    ts = np.linspace(-1.0, 1.0, n_y)
    return np.concatenate([x + 1j * (mid + t * half) for t in ts])


def decay_profile(ctx, probe_set, n_max, w0=0.0, n_min_fit=2):
    """Fit the exponential decay of kernel peaks against the translate index.

    For each n the peak is max over z in probe_set + n of |K(z, w0)|;
    the log-linear fit runs over n >= n_min_fit with underflowed peaks
    (below 1e-300) dropped.  Raises UnderflowBeyondN when fewer than
    three usable points remain.
    """
    probe_set = np.asarray(probe_set, dtype=complex)
    ns = np.arange(0, n_max + 1)
    peaks = np.empty(len(ns), dtype=float)
    for k, n in enumerate(ns):
        vals = periodic_kernel_closed(ctx, probe_set + n, np.full_like(probe_set, w0))
        peaks[k] = float(np.max(np.abs(vals)))
    usable = (ns >= n_min_fit) & (peaks > 1e-300) & np.isfinite(peaks)
    fit_ns = ns[usable]
    if len(fit_ns) < 3:
        raise UnderflowBeyondN(
            f"only {len(fit_ns)} usable peaks at n >= {n_min_fit}; "
            "decay too fast for a fit at this n_max"
        )
    logs = np.log(peaks[usable])
    slope, intercept = np.polyfit(fit_ns, logs, 1)
    rate = -float(slope)
    residual = float(np.sqrt(np.mean((logs - (slope * fit_ns + intercept)) ** 2)))
    length = ctx.log_rho
    envelope = peaks[usable] * np.exp(rate * fit_ns)
    return DecayFit(ns=ns, peaks=peaks, fit_ns=fit_ns, rate=rate,
                    intercept=float(intercept), residual=residual,
                    rate_sech_sq=math.pi ** 2 / length,
                    rate_half=math.pi ** 2 / (2.0 * length),
                    prefactor_lo=float(envelope.min()),
                    prefactor_hi=float(envelope.max()))


# ---------------------------------------------------------------------------
# translation weights


@dataclass(frozen=True)
class WeightSpec:
    """A weight W(Re z) for the weighted projection estimate.

    Profiles: "constant" (W = 1), "stretched" (W = e^{a |x|^b} with a > 0,
    0 < b < 1), or "custom" with an explicit evaluator.
    """
    profile: str
    a: float = 0.0
    b: float = 0.5
    fn: object = None

    def __post_init__(self):
        if self.profile == "stretched":
            if not self.a > 0:
                raise ValueError("stretched profile needs a > 0")
            if not 0.0 < self.b < 1.0:
                raise ValueError("stretched profile needs b in (0, 1)")
        elif self.profile == "custom":
            if not callable(self.fn):
                raise ValueError("custom profile needs an evaluator")
        elif self.profile != "constant":
            raise ValueError(f"unknown weight profile {self.profile!r}")

    @classmethod
    def constant(cls):
        return cls(profile="constant")

    @classmethod
    def stretched(cls, a, b):
        return cls(profile="stretched", a=float(a), b=float(b))

    @classmethod
    def custom(cls, fn):
        return cls(profile="custom", fn=fn)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.profile == "constant":
            out = np.ones_like(x)
        elif self.profile == "stretched":
            out = np.exp(self.a * np.abs(x) ** self.b)
        else:
            out = np.asarray(self.fn(x), dtype=float)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WeightReport:
    c: float
    a: float
    b: float
    n_range: int
    worst_x: float
    worst_n: int

    def __str__(self):
        return "\n".join([f"c: {self.c:.6g}", f"a: {self.a:g}",
                          f"b: {self.b:g}", f"n_range: {self.n_range}",
                          f"worst_x: {self.worst_x:g}",
                          f"worst_n: {self.worst_n}"])


def weight_check(spec, a, b, n_range=8, n_x=41, cap=1e6):
    """Smallest empirical C with (1/C) W(x) e^{-a|n|^b} <= W(x+n) <= C W(x) e^{a|n|^b}.

    Sampled over x in [0, 1] and integer |n| <= n_range.  Raises NotAWeight
    when no C below the cap works (the weight grows faster than the
    stretched-exponential envelope allows).
    """
    if not a > 0:
        raise ValueError("need a > 0")
    if not 0.0 < b < 1.0:
        raise ValueError("need b in (0, 1)")
    xs = np.linspace(0.0, 1.0, n_x)
    wx = spec(xs)
    if np.any(~np.isfinite(wx)) or np.any(wx <= 0):
        raise NotAWeight("weight not finite and positive on [0, 1]")
    best_c = 0.0
    worst = (0.0, 0)
    for n in range(-n_range, n_range + 1):
        wxn = spec(xs + n)
        env = math.exp(a * abs(n) ** b)
        with np.errstate(over="ignore", invalid="ignore"):
            upper = wxn / (wx * env)
            lower = wx / (wxn * env)
        cand = np.maximum(upper, lower)
        k = int(np.argmax(cand))
        if cand[k] > best_c:
            best_c = float(cand[k])
            worst = (float(xs[k]), n)
    if not math.isfinite(best_c) or best_c > cap:
        raise NotAWeight(
            f"no constant below {cap:g} satisfies the translation bound "
            f"(worst sample x = {worst[0]:g}, n = {worst[1]})"
        )
    return WeightReport(c=best_c, a=a, b=b, n_range=n_range,
                        worst_x=worst[0], worst_n=worst[1])


# ---------------------------------------------------------------------------
# Schur row integrals


@dataclass(frozen=True)
class SchurReport:
    window: int
    sup_by_window: dict
    rel_change: float
    n_probes: int

    def __str__(self):
        lines = [f"window: {self.window}",
                 f"rel_change: {self.rel_change:.3g}",
                 f"n_probes: {self.n_probes}"]
        for w in sorted(self.sup_by_window):
            lines.append(f"sup[{w}]: {self.sup_by_window[w]:.8g}")
        return "\n".join(lines)


def _schur_probes(region):
    """20 probe points: a spread across the period plus imaginary extremes."""
    nodes = region.nodes
    idx = np.linspace(0, len(nodes) - 1, 12).astype(int)
    picks = list(nodes[idx])
    order = np.argsort(np.imag(nodes))
    picks.extend(nodes[order[:4]])
    picks.extend(nodes[order[-4:]])
    return np.array(picks[:20])


def schur_bound(ctx, spec, window=16, region=None, nx=24, ny=24):
    """Sup over probes of the weighted kernel row integral, with stability.

    Row(z) = W(Re z) sum over |m| <= window of the integral of
    |K(z, w + m)| / W(Re w + m) over the cell.  The per-m masses reuse a
    single map evaluation of the cell nodes: the lift is periodic, so
    phi(w + m) = phi(w) + m and only the sech^2 body changes with m.
    Stability is the relative change when the window doubles; the sups at
    window/2, window, and 2*window are all reported.  Raises NotSummable
    when the outermost per-m mass fails to drop below the mid-window one.
    """
    if region is None:
        if ctx.lifted.amap.provenance != "builtin":
            raise ValueError("pass region= for a solved (non-builtin) map")
        region = cellgeom.CellRegion(
            cellgeom.rectangle_cell(ctx.lifted.half_height), nx=nx, ny=ny)
    probes = _schur_probes(region)
    nodes = region.nodes
    wq = region.weights
    phi_w, dphi_w = ctx.phi_with_deriv_array(nodes)
    length = ctx.log_rho
    w_big = 2 * window
    ms = np.arange(-w_big, w_big + 1)
    inv_w = 1.0 / spec(np.real(nodes)[None, :] + ms[:, None])

    masses = np.empty((len(probes), len(ms)), dtype=float)
    for i, z in enumerate(probes):
        phi_z, dphi_z = ctx.phi_with_deriv(complex(z))
        ktil = np.abs(np.exp(1j * TWO_PI * (z - phi_z - np.conj(nodes)
                                            + np.conj(phi_w)))
                      * dphi_z * np.conj(dphi_w))
        u0 = phi_z - np.conj(phi_w)
        for k, m in enumerate(ms):
            body = np.abs(np.pi ** 3 / (4.0 * length ** 2)
                          * sech_sq(np.pi ** 2 * (u0 - m) / (2.0 * length)))
            masses[i, k] = float(np.sum(wq * ktil * body * inv_w[k]))
    wz = spec(np.real(probes))

    mid = np.abs(ms) == window // 2
    outer = np.abs(ms) == w_big
    for i in range(len(probes)):
        m_out = masses[i, outer].max()
        m_mid = masses[i, mid].max()
        if m_out > m_mid and m_out > 1e-290:
            raise NotSummable(
                f"per-period mass grows with |m| (probe {probes[i]:.3f}: "
                f"{m_mid:.3e} at |m| = {window // 2}, {m_out:.3e} at "
                f"|m| = {w_big})"
            )

    def sup_at(w):
        keep = np.abs(ms) <= w
        return float(np.max(wz * masses[:, keep].sum(axis=1)))

    sups = {w: sup_at(w) for w in (window // 2, window, w_big)}
    rel = abs(sups[w_big] - sups[window]) / sups[w_big]
    report = SchurReport(window=window, sup_by_window=sups,
                         rel_change=rel, n_probes=len(probes))
    return sups[window], report

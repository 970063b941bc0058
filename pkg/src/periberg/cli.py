"""Command-line front end: map solving, kernel grids, verification, studies.

Every output file starts with a header line carrying the tool version, a
12-hex hash of the invocation config, and the seed, so identical configs
produce byte-identical artifacts.  Exit codes: 0 success, 1 verification
or convergence failure, 2 malformed input, 3 unusable output location.
"""

import hashlib
import json
import math
import sys
from importlib.metadata import PackageNotFoundError, version as _pkg_version
from pathlib import Path

import click
import numpy as np

from . import analysis, cellgeom, confmap, floquet, kernels
from .numerics import QuadratureFailure, annulus_rule


def _version():
    try:
        return _pkg_version("periberg")
    except PackageNotFoundError:
        return "0.0.0"


def _config_hash(options):
    # the output location is not part of the run's identity
    sig = {k: v for k, v in options.items() if k != "out"}
    canon = json.dumps(sig, sort_keys=True, separators=(",", ":"),
                       default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _header(options):
    seed = options.get("seed", 0)
    return (f"# periberg {_version()} config {_config_hash(options)} "
            f"seed {seed}")


def _outdir(out):
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        click.echo(f"output directory unusable: {exc}", err=True)
        sys.exit(3)
    return path


def _load_spec(cell):
    try:
        return cellgeom.PeriodicCellSpec.load(cell)
    except cellgeom.InvalidCell as exc:
        click.echo(f"InvalidCell: {exc}", err=True)
        sys.exit(2)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        click.echo(f"InvalidCell: unreadable cell spec ({exc})", err=True)
        sys.exit(2)


def _load_setup(cell, map_path, h):
    """(ctx, spec_or_None) for the chosen cell/map/builtin combination."""
    if map_path:
        try:
            data = json.loads(Path(map_path).read_text())
            params = confmap.SCParams.from_dict(data["params"])
        except (OSError, ValueError, KeyError) as exc:
            click.echo(f"unreadable map archive: {exc}", err=True)
            sys.exit(2)
        amap = confmap.annulus_map_from_sc(params)
        spec = _load_spec(cell) if cell else None
        return kernels.make_context(amap), spec
    if cell:
        spec = _load_spec(cell)
        try:
            params = confmap.solve_sc_parameters(spec)
        except Exception as exc:
            click.echo(f"map solve failed: {exc}", err=True)
            sys.exit(1)
        return kernels.make_context(confmap.annulus_map_from_sc(params)), spec
    return kernels.strip_context(h), cellgeom.rectangle_cell(h)


def _parse_point(text, flag):
    try:
        re_s, im_s = text.split(",")
        return complex(float(re_s), float(im_s))
    except ValueError:
        click.echo(f"{flag} expects 're,im', got {text!r}", err=True)
        sys.exit(2)


@click.group()
@click.version_option(version=_version(), prog_name="periberg")
def main():
    """Bergman kernels of periodic planar domains."""


# ---------------------------------------------------------------------------
# map-solve


@main.command("map-solve")
@click.option("--cell", required=True, type=click.Path(), help="cell spec JSON")
@click.option("--out", default=".", type=click.Path(), help="output directory")
@click.option("--tol", default=1e-8, type=float, help="residual tolerance")
@click.option("--seed", default=0, type=int)
def cmd_map_solve(cell, out, tol, seed):
    """Solve the channel-to-annulus map and archive the parameters."""
    opts = {"command": "map-solve", "cell": cell, "out": out, "tol": tol,
            "seed": seed}
    if tol <= 0:
        click.echo("tol must be positive", err=True)
        sys.exit(2)
    spec = _load_spec(cell)
    outdir = _outdir(out)
    try:
        params = confmap.solve_sc_parameters(spec)
    except Exception as exc:
        click.echo(f"map solve failed: {exc}", err=True)
        sys.exit(1)
    amap = confmap.annulus_map_from_sc(params)
    report = amap.consistency_report()
    archive = {
        "_header": {"tool": "periberg", "version": _version(),
                    "config": _config_hash(opts), "seed": seed},
        "params": params.to_dict(),
        "rho": amap.rho,
        "residual": params.residual,
        "roundtrip": report["roundtrip"],
    }
    (outdir / "map.json").write_text(
        json.dumps(archive, sort_keys=True, indent=2) + "\n")
    click.echo(f"rho: {amap.rho!r}")
    click.echo(f"residual: {params.residual:.3e}")
    click.echo(f"roundtrip: {report['roundtrip']:.3e}")
    click.echo(f"archive: {outdir / 'map.json'}")
    if params.residual >= tol:
        click.echo(f"residual above tolerance {tol:g}", err=True)
        sys.exit(1)


# ---------------------------------------------------------------------------
# kernel


_METHOD_LABEL = {"closed": "closed", "eta": "eta_assembly", "t": "t_integral"}


def _kernel_eval(ctx, method, z, w):
    if method == "closed":
        return complex(kernels.periodic_kernel_closed(ctx, z, w))
    if method == "eta":
        return kernels.assemble_periodic_from_eta(ctx, z, w)
    return kernels.periodic_kernel_t_integral(ctx, z, w)


@main.command("kernel")
@click.option("--cell", default=None, type=click.Path())
@click.option("--map", "map_path", default=None, type=click.Path())
@click.option("--h", default=0.5, type=float, help="builtin strip half-height")
@click.option("--method", default="closed",
              type=click.Choice(["closed", "eta", "t", "all"]))
@click.option("--z", "z_str", default=None, help="single evaluation point 're,im'")
@click.option("--w", "w_str", default="0.25,0.0", help="kernel second argument 're,im'")
@click.option("--grid", default=0, type=int, help="n x n z-grid over one period")
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=0, type=int)
def cmd_kernel(cell, map_path, h, method, z_str, w_str, grid, out, seed):
    """Evaluate the periodic kernel at a point or on a grid."""
    opts = {"command": "kernel", "cell": cell, "map": map_path, "h": h,
            "method": method, "z": z_str, "w": w_str, "grid": grid,
            "out": out, "seed": seed}
    ctx, _ = _load_setup(cell, map_path, h)
    w0 = _parse_point(w_str, "--w")
    if z_str is not None:
        z_pts = np.array([_parse_point(z_str, "--z")])
    elif grid > 0:
        x = (np.arange(grid) + 0.5) / grid
        y_lo, y_hi = ctx.lifted.wall_heights(x)
        ts = (np.arange(grid) + 0.5) / grid
        z_pts = np.concatenate(
            [x + 1j * (y_lo + t * (y_hi - y_lo)) for t in 0.1 + 0.8 * ts])
    else:
        click.echo("empty grid: pass --z or a positive --grid", err=True)
        sys.exit(2)
    methods = ["closed", "eta", "t"] if method == "all" else [method]
    outdir = _outdir(out)
    rows = []
    worst = 0.0
    try:
        for z in z_pts:
            z = complex(z)
            vals = {m: complex(_kernel_eval(ctx, m, z, w0)) for m in methods}
            scale = max(abs(v) for v in vals.values()) or 1.0
            dev = float(max(abs(a - b) for a in vals.values()
                            for b in vals.values()) / scale)
            worst = max(worst, dev)
            for m in methods:
                rows.append((z, vals[m], _METHOD_LABEL[m], dev))
    except (kernels.SeriesNotConverged, kernels.OutOfDomain,
            QuadratureFailure) as exc:
        click.echo(f"kernel evaluation failed: {exc}", err=True)
        sys.exit(1)
    path = outdir / "kernel.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_header(opts) + "\n")
        fh.write("re_z,im_z,re_w,im_w,re_K,im_K,method,deviation\n")
        for z, val, label, dev in rows:
            fh.write(f"{z.real!r},{z.imag!r},{w0.real!r},{w0.imag!r},"
                     f"{val.real!r},{val.imag!r},{label},{dev!r}\n")
        fh.write(f",,,,,,summary_max_deviation,{worst!r}\n")
    first = rows[0][1]
    click.echo(f"re_K = {first.real:.7f}")
    click.echo(f"points: {len(z_pts)}  methods: {','.join(methods)}")
    click.echo(f"max cross-method deviation: {worst:.3e}")
    click.echo(f"csv: {path}")


# ---------------------------------------------------------------------------
# floquet


_TEST_FN = {
    "cauchy": lambda z: 1.0 / (z - 2j),
    "gauss": lambda z: np.exp(-(z - 0.1j) ** 2),
}


@main.command("floquet")
@click.option("--cell", default=None, type=click.Path())
@click.option("--h", default=0.5, type=float)
@click.option("--fn", default="cauchy", type=click.Choice(sorted(_TEST_FN)))
@click.option("--m-trunc", default=2048, type=int)
@click.option("--n-eta", default=64, type=int)
@click.option("--nx", default=12, type=int)
@click.option("--ny", default=12, type=int)
@click.option("--eps", default=0.0, type=float, help="mollifier strength")
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=0, type=int)
def cmd_floquet(cell, h, fn, m_trunc, n_eta, nx, ny, eps, out, seed):
    """Transform a test function and dump the field grid."""
    opts = {"command": "floquet", "cell": cell, "h": h, "fn": fn,
            "m_trunc": m_trunc, "n_eta": n_eta, "nx": nx, "ny": ny,
            "eps": eps, "out": out, "seed": seed}
    spec = _load_spec(cell) if cell else cellgeom.rectangle_cell(h)
    if nx <= 0 or ny <= 0 or n_eta <= 0:
        click.echo("empty grid", err=True)
        sys.exit(2)
    region = cellgeom.CellRegion(spec, nx=nx, ny=ny)
    sf = floquet.SampledFunction(_TEST_FN[fn], region, m_trunc=m_trunc)
    moll = floquet.MollifierEps(eps) if eps > 0 else None
    field = floquet.floquet_forward(sf, etas=floquet.eta_grid(n_eta),
                                    mollifier=moll)
    outdir = _outdir(out)
    path = outdir / "floquet.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_header(opts) + "\n")
        field.to_csv(fh)
    click.echo(f"rows: {len(region.nodes) * n_eta}")
    click.echo(f"norm_sq: {field.norm_sq()!r}")
    click.echo(f"csv: {path}")


# ---------------------------------------------------------------------------
# verify


class _PerturbedRho:
    """Context shim scaling log rho in the closed formula (fault injection)."""

    def __init__(self, ctx, factor):
        self._ctx = ctx
        self.log_rho = ctx.log_rho * factor
        self.rho = math.exp(self.log_rho)

    def __getattr__(self, name):
        return getattr(self._ctx, name)


def _verify_checks(ctx, region, seed, perturb_rho):
    """Yield (check, value, bound) triples for the full suite."""
    rng = np.random.default_rng(seed)
    closed_ctx = _PerturbedRho(ctx, 1.0 + perturb_rho) if perturb_rho else ctx

    nodes = region.nodes
    inner = nodes[np.array([region.contains(z, inset=0.04) for z in nodes])]
    picks = inner[rng.choice(len(inner), size=4, replace=False)]
    shifts = (-1, 0, 1, 2)

    dev_a = dev_t = 0.0
    for i, m in enumerate(shifts):
        z = complex(picks[i]) + m
        w = complex(picks[(i + 1) % len(picks)])
        kc = kernels.periodic_kernel_closed(closed_ctx, z, w)
        ka = kernels.assemble_periodic_from_eta(ctx, z, w)
        kt = kernels.periodic_kernel_t_integral(ctx, z, w)
        scale = max(abs(kc), abs(ka))
        dev_a = max(dev_a, abs(ka - kc) / scale)
        dev_t = max(dev_t, abs(kt - kc) / scale)
    yield "closed_vs_assembly", dev_a, 1e-5
    yield "closed_vs_t_integral", dev_t, 1e-5

    lhs, rhs = kernels.sech_fourier_identity(2.0, 1.0)
    yield "fourier_identity", abs(lhs - rhs), 1e-8

    qn, qw = annulus_rule(1.0 / ctx.rho, ctx.rho, nr=72, ntheta=72)
    vq = ctx.weights.v(qn)
    vv = np.abs(vq) ** 2
    gram_dev = 0.0
    for eta in (0.0, 1.0):
        basis = np.array([kernels.basis_fn(n, eta, qn, ctx, v_vals=vq)
                          for n in range(-6, 7)])
        gram = (basis * vv * qw) @ basis.conj().T
        gram_dev = max(gram_dev, float(np.max(np.abs(gram - np.eye(13)))))
    yield "basis_gram", gram_dev, 1e-8

    # Reproducing property over a fixed coefficient window.  On solved
    # cells the corner singularity of |phi'|^2 caps what tensor quadrature
    # can resolve, so the bound there reflects the grid, not the kernel.
    eta0 = 1.0
    f_vals = kernels.cell_basis(ctx, 1, eta0, nodes)
    wq = region.weights
    proj = np.zeros_like(f_vals)
    for n in range(-8, 9):
        g = kernels.cell_basis(ctx, n, eta0, nodes)
        coef = np.sum(wq * np.conj(g) * f_vals)
        proj = proj + (4.0 * math.pi ** 2) * coef * g
    rel = math.sqrt(float(np.sum(wq * np.abs(proj - f_vals) ** 2))
                    / float(np.sum(wq * np.abs(f_vals) ** 2)))
    builtin = ctx.amap.provenance == "builtin"
    yield "reproducing", rel, 1e-6 if builtin else 1e-4

    def cauchy(z):
        return 1.0 / (z - 2j)

    sf = floquet.SampledFunction(cauchy, region, m_trunc=1024)
    moll = floquet.MollifierEps(1e-3)
    field = floquet.floquet_forward(sf, mollifier=moll, shell_tol=np.inf)
    qp = floquet.check_quasiperiodicity(field, tol=np.inf)
    yield "quasiperiodicity", qp.residual, 1e-8

    iso = floquet.isometry_check(sf, mollifier=moll)
    yield "isometry", abs(iso.rel_gap), 1e-6

    probe = nodes[len(nodes) // 2]
    rt = 0.0
    for m in (-1, 0, 2):
        got = floquet.floquet_inverse(field, probe + m, tol=1e-5)
        want = moll(probe + m) * cauchy(probe + m)
        rt = max(rt, abs(got - want))
    yield "round_trip", rt, 1e-6

    fit = analysis.decay_profile(ctx, analysis.default_probe_set(ctx), n_max=8)
    rate_ref = math.pi ** 2 / ctx.log_rho
    yield "decay_rate", abs(fit.rate - rate_ref) / rate_ref, 0.05

    _, srep = analysis.schur_bound(ctx, analysis.WeightSpec.constant(),
                                   window=8, region=region)
    yield "schur_stability", srep.rel_change, 0.01


@main.command("verify")
@click.option("--cell", default=None, type=click.Path())
@click.option("--h", default=0.5, type=float)
@click.option("--tol", default=1.0, type=float,
              help="bound multiplier; checks pass iff value < bound * tol")
@click.option("--out", default=None, type=click.Path(),
              help="JSON-lines report path (default stdout)")
@click.option("--seed", default=0, type=int)
@click.option("--perturb-rho", default=0.0, type=float, hidden=True)
def cmd_verify(cell, h, tol, out, seed, perturb_rho):
    """Run the cross-check suite; exit 0 only if every check passes."""
    opts = {"command": "verify", "cell": cell, "h": h, "tol": tol,
            "out": out, "seed": seed, "perturb_rho": perturb_rho}
    if tol < 0:
        click.echo("tol must be nonnegative", err=True)
        sys.exit(2)
    ctx, spec = _load_setup(cell, None, h)
    region = cellgeom.CellRegion(spec, nx=32, ny=32)
    lines = [json.dumps({"tool": "periberg", "version": _version(),
                         "config": _config_hash(opts), "seed": seed})]
    failed = []
    for check, value, bound in _verify_checks(ctx, region, seed, perturb_rho):
        ok = bool(value < bound * tol)
        if not ok:
            failed.append(check)
        lines.append(json.dumps({"check": check, "value": float(value),
                                 "bound": float(bound * tol),
                                 "pass": ok}))
    text = "\n".join(lines) + "\n"
    if out:
        out_path = Path(out)
        try:
            out_path.parent.mkdir(parents=True, exist_ok=True)
            out_path.write_text(text)
        except OSError as exc:
            click.echo(f"cannot write report: {exc}", err=True)
            sys.exit(3)
        click.echo(f"report: {out_path}")
    else:
        click.echo(text, nl=False)
    if failed:
        click.echo("failed checks: " + ", ".join(failed), err=True)
        sys.exit(1)
    click.echo("all checks passed", err=True)


# ---------------------------------------------------------------------------
# decay


@main.command("decay")
@click.option("--cell", default=None, type=click.Path())
@click.option("--map", "map_path", default=None, type=click.Path())
@click.option("--h", default=0.5, type=float)
@click.option("--n-max", default=8, type=int)
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=0, type=int)
def cmd_decay(cell, map_path, h, n_max, out, seed):
    """Fit the kernel's per-translate decay rate."""
    opts = {"command": "decay", "cell": cell, "map": map_path, "h": h,
            "n_max": n_max, "out": out, "seed": seed}
    ctx, _ = _load_setup(cell, map_path, h)
    outdir = _outdir(out)
    try:
        fit = analysis.decay_profile(ctx, analysis.default_probe_set(ctx),
                                     n_max=n_max)
    except analysis.UnderflowBeyondN as exc:
        click.echo(f"decay fit failed: {exc}", err=True)
        sys.exit(1)
    csv_path = outdir / "decay.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(_header(opts) + "\n")
        fh.write("n,peak,fit\n")
        for n, p in zip(fit.ns, fit.peaks):
            fh.write(f"{int(n)},{float(p)!r},{fit.fitted(n)!r}\n")
    txt_path = outdir / "decay.txt"
    txt_path.write_text(_header(opts) + "\n" + str(fit) + "\n")
    click.echo(str(fit))
    click.echo(f"csv: {csv_path}")


# ---------------------------------------------------------------------------
# schur


@main.command("schur")
@click.option("--cell", default=None, type=click.Path())
@click.option("--h", default=0.5, type=float)
@click.option("--weight", default="constant",
              type=click.Choice(["constant", "stretched"]))
@click.option("--a", default=1.0, type=float)
@click.option("--b", default=0.5, type=float)
@click.option("--window", default=16, type=int)
@click.option("--out", default=".", type=click.Path())
@click.option("--seed", default=0, type=int)
def cmd_schur(cell, h, weight, a, b, window, out, seed):
    """Weighted Schur row-integral bound with window-doubling stability."""
    opts = {"command": "schur", "cell": cell, "h": h, "weight": weight,
            "a": a, "b": b, "window": window, "out": out, "seed": seed}
    ctx, spec = _load_setup(cell, None, h)
    region = cellgeom.CellRegion(spec, nx=24, ny=24)
    wspec = (analysis.WeightSpec.constant() if weight == "constant"
             else analysis.WeightSpec.stretched(a, b))
    outdir = _outdir(out)
    try:
        sup, report = analysis.schur_bound(ctx, wspec, window=window,
                                           region=region)
    except analysis.NotSummable as exc:
        click.echo(f"not summable: {exc}", err=True)
        sys.exit(1)
    txt = _header(opts) + "\n" + f"sup_row_integral: {sup!r}\n" + str(report) + "\n"
    path = outdir / "schur.txt"
    path.write_text(txt)
    click.echo(txt, nl=False)


if __name__ == "__main__":
    main()

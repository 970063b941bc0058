import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from periberg import cellgeom, floquet, kernels


INV_4PI = 0.07957747154594767
INV_16PI = 0.019894367886486918
PI_OVER_4 = 0.7853981633974483


def test_halfplane_value_and_domain():
    assert kernels.halfplane_kernel(1j, 1j) == pytest.approx(INV_4PI)
    with pytest.raises(kernels.OutOfDomain):
        kernels.halfplane_kernel(1.0 - 0.1j, 1j)


def test_strip_sigma_value_and_domain():
    assert kernels.strip_kernel_sigma(0.0, 0.0) == pytest.approx(
        INV_16PI, abs=1e-12
    )
    with pytest.raises(kernels.OutOfDomain):
        kernels.strip_kernel_sigma(1.0 + 3.2j, 0.0)


def test_pullback_recovers_strip_from_halfplane():
    # z -> i e^{z/2} maps the strip R x (-pi, pi) onto the upper half-plane
    phi = lambda z: 1j * np.exp(np.asarray(z) / 2.0)
    dphi = lambda z: 0.5j * np.exp(np.asarray(z) / 2.0)
    for z, w in ((0.0, 0.0), (0.3 + 0.8j, -0.2 + 0.1j), (1.5j, -2.0 - 1.0j)):
        via_map = kernels.pullback_kernel(
            kernels.halfplane_kernel, (phi, dphi), z, w
        )
        direct = kernels.strip_kernel_sigma(z, w)
        assert abs(via_map - direct) < 1e-13


def test_pullback_weighted_variant():
    phi = lambda z: 1j * np.exp(np.asarray(z) / 2.0)
    dphi = lambda z: 0.5j * np.exp(np.asarray(z) / 2.0)
    z, w = 0.3 + 0.8j, -0.2 + 0.1j
    weighted = kernels.pullback_kernel(
        kernels.halfplane_kernel, (phi, dphi), z, w, weighted=True
    )
    base = kernels.halfplane_kernel(phi(z), phi(w))
    assert weighted == pytest.approx(base * abs(dphi(w)) ** 2)


def test_closed_form_diagonal_value(strip_ctx):
    val = complex(kernels.periodic_kernel_closed(strip_ctx, 0.0, 0.0))
    assert val.real == pytest.approx(PI_OVER_4, abs=1e-12)
    assert abs(val.imag) < 1e-14


def test_closed_form_collapses_to_strip_kernel(strip_ctx_sigma):
    rng = np.random.default_rng(3)
    for _ in range(25):
        x1, x2 = rng.uniform(-1.0, 1.0, 2)
        y1, y2 = rng.uniform(-0.9 * math.pi, 0.9 * math.pi, 2)
        z, w = complex(x1, y1), complex(x2, y2)
        a = complex(kernels.periodic_kernel_closed(strip_ctx_sigma, z, w))
        b = complex(kernels.strip_kernel_sigma(z, w))
        assert abs(a - b) < 1e-12


def test_closed_form_translation_invariance(strip_ctx):
    z, w = 0.3 + 0.2j, 0.6 - 0.1j
    a = complex(kernels.periodic_kernel_closed(strip_ctx, z, w))
    b = complex(kernels.periodic_kernel_closed(strip_ctx, z + 1.0, w + 1.0))
    assert abs(a - b) < 1e-14


def test_closed_form_array_broadcast(strip_ctx):
    zs = np.array([0.1 + 0.1j, 0.4 - 0.2j, 0.8])
    vals = kernels.periodic_kernel_closed(strip_ctx, zs, 0.25)
    singles = [
        complex(kernels.periodic_kernel_closed(strip_ctx, z, 0.25)) for z in zs
    ]
    assert np.allclose(vals, singles, rtol=0, atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(-1.0, 1.0), st.floats(-0.45, 0.45),
    st.floats(-1.0, 1.0), st.floats(-0.45, 0.45),
)
def test_closed_form_hermitian(strip_ctx, xz, yz, xw, yw):
    z, w = complex(xz, yz), complex(xw, yw)
    a = complex(kernels.periodic_kernel_closed(strip_ctx, z, w))
    b = complex(kernels.periodic_kernel_closed(strip_ctx, w, z))
    assert cmath.isclose(a, b.conjugate(), rel_tol=0, abs_tol=1e-13)


def test_sech_sq_agrees_with_cosh_and_flushes():
    for v in (0.3, 1.0 + 0.5j, -2.0 + 0.1j):
        direct = 1.0 / np.cosh(v) ** 2
        assert abs(complex(kernels.sech_sq(v)) - direct) < 1e-14
    assert complex(kernels.sech_sq(500.0 + 1j)) == 0.0
    assert complex(kernels.sech_sq(-500.0 + 1j)) == 0.0


def test_norm_const_values():
    length = math.pi
    rho = math.exp(length)
    # x = 0 limit: C = (4 pi log rho)^{-1/2}
    got = kernels.norm_const(-1, 0.0, rho)
    assert got == pytest.approx((4.0 * math.pi * length) ** -0.5)
    # generic exponent against the direct formula
    x = 2.0 * (2 + 1) + 0.7 / math.pi
    want = (2.0 * math.pi * (rho**x - rho**-x) / x) ** -0.5
    assert kernels.norm_const(2, 0.7, rho) == pytest.approx(want, rel=1e-13)
    # far exponents underflow to an exact zero rather than raising
    assert kernels.norm_const(200, 0.0, rho) == 0.0
    with pytest.raises(ValueError):
        kernels.norm_const(0, 0.0, 0.5)


def test_cell_basis_matches_strip_formula(strip_ctx):
    # on the straight channel the split factor reduces to
    # sqrt(s_n) e^{i (2 pi n + eta) z}, up to one overall unit phase from
    # the annulus frame (which cancels in g_n(z) conj(g_n(w)))
    pts = np.array([0.1 + 0.2j, 0.5 - 0.3j, 0.9 + 0.05j])
    length = strip_ctx.log_rho
    for n, eta in ((0, 0.5), (3, -1.2), (-2, 2.0)):
        x = 2.0 * n + eta / math.pi
        s = x / (4.0 * math.pi * math.sinh(x * length))
        want = math.sqrt(s) * np.exp(1j * (2.0 * math.pi * n + eta) * pts)
        got = kernels.cell_basis(strip_ctx, n, eta, pts)
        ratios = got / want
        assert np.allclose(np.abs(ratios), 1.0, rtol=0, atol=1e-12)
        assert np.allclose(ratios, ratios[0], rtol=0, atol=1e-12)


def test_cell_basis_orthonormal_on_cell(strip_ctx, strip_region):
    nodes, wq = strip_region.nodes, strip_region.weights
    eta = 0.7
    fs = [2.0 * math.pi * kernels.cell_basis(strip_ctx, n, eta, nodes)
          for n in range(-3, 4)]
    for i, fi in enumerate(fs):
        for j, fj in enumerate(fs):
            inner = np.sum(wq * fi * np.conj(fj))
            assert abs(inner - (1.0 if i == j else 0.0)) < 1e-10


def test_basis_gram_on_annulus(strip_ctx):
    from periberg.numerics import annulus_rule

    qn, qw = annulus_rule(1.0 / strip_ctx.rho, strip_ctx.rho, nr=72,
                          ntheta=72)
    vq = strip_ctx.weights.v(qn)
    vv = np.abs(vq) ** 2
    for eta in (0.0, 1.0):
        basis = np.array([kernels.basis_fn(n, eta, qn, strip_ctx, v_vals=vq)
                          for n in range(-4, 5)])
        gram = (basis * vv * qw) @ basis.conj().T
        assert np.max(np.abs(gram - np.eye(9))) < 1e-10


def test_eta_series_assembly_matches_closed(strip_ctx):
    for z, w in ((0.2 + 0.1j, 0.7 - 0.2j), (0.5, 0.25 + 0.3j)):
        closed = complex(kernels.periodic_kernel_closed(strip_ctx, z, w))
        assembled = kernels.assemble_periodic_from_eta(strip_ctx, z, w)
        assert abs(assembled - closed) < 1e-10 * abs(closed)


def test_cell_kernel_eta_hermitian(strip_ctx):
    z, w, eta = 0.3 + 0.15j, 0.6 - 0.25j, 1.3
    a = kernels.cell_kernel_eta(strip_ctx, z, w, eta)
    b = kernels.cell_kernel_eta(strip_ctx, w, z, eta)
    assert abs(a - np.conj(b)) < 1e-13 * abs(a)


def test_t_integral_matches_closed(strip_ctx):
    for z, w in ((0.2 + 0.1j, 0.7 - 0.2j), (1.4 + 0.3j, 0.25)):
        closed = complex(kernels.periodic_kernel_closed(strip_ctx, z, w))
        via_t = kernels.periodic_kernel_t_integral(strip_ctx, z, w)
        assert abs(via_t - closed) < 1e-9 * max(abs(closed), 1e-6)


def test_t_integral_rejects_boundary_touch(strip_ctx):
    with pytest.raises(kernels.OutOfDomain):
        kernels.periodic_kernel_t_integral(strip_ctx, 0.3 + 0.5j, 0.3 + 0.5j)


def test_sech_fourier_identity_grid():
    for s, a in ((0.0, 1.0), (2.0, 1.0), (3.5, 0.5)):
        lhs, rhs = kernels.sech_fourier_identity(s, a)
        assert abs(lhs - rhs) < 1e-12


def test_eta_projection_reproduces_basis(strip_ctx, strip_region):
    eta = 1.0
    nodes, wq = strip_region.nodes, strip_region.weights
    f = kernels.cell_basis(strip_ctx, 1, eta, nodes)
    proj = kernels.eta_projection(strip_ctx, eta, f, strip_region)
    num = float(np.sum(wq * np.abs(proj - f) ** 2))
    den = float(np.sum(wq * np.abs(f) ** 2))
    assert math.sqrt(num / den) < 1e-12


def test_eta_projection_reproduces_combination(strip_ctx, strip_region):
    eta = -0.8
    nodes = strip_region.nodes
    f = (kernels.cell_basis(strip_ctx, -2, eta, nodes)
         + 0.5j * kernels.cell_basis(strip_ctx, 0, eta, nodes)
         - 2.0 * kernels.cell_basis(strip_ctx, 3, eta, nodes))
    proj = kernels.eta_projection(strip_ctx, eta, f, strip_region)
    wq = strip_region.weights
    num = float(np.sum(wq * np.abs(proj - f) ** 2))
    den = float(np.sum(wq * np.abs(f) ** 2))
    assert math.sqrt(num / den) < 1e-12


def test_eta_projection_at_chosen_points(strip_ctx, strip_region):
    eta = 0.4
    nodes = strip_region.nodes
    f = kernels.cell_basis(strip_ctx, 0, eta, nodes)
    pts = np.array([0.3 + 0.1j, 0.6 - 0.2j])
    proj = kernels.eta_projection(strip_ctx, eta, f, strip_region,
                                  z_points=pts)
    want = kernels.cell_basis(strip_ctx, 0, eta, pts)
    assert np.allclose(proj, want, rtol=1e-10, atol=1e-14)


def test_eta_projection_gives_up_on_conjugate(strip_ctx, strip_region):
    # conj(g_1) has projection pieces decaying like 1/n in sup norm, so
    # the stop rule cannot fire inside any finite window
    eta = 1.0
    nodes = strip_region.nodes
    f = np.conj(kernels.cell_basis(strip_ctx, 1, eta, nodes))
    control = kernels.SeriesControl(n_max=60)
    with pytest.raises(kernels.SeriesNotConverged):
        kernels.eta_projection(strip_ctx, eta, f, strip_region,
                               control=control)


def test_project_reproduces_holomorphic(strip_ctx, strip_region):
    def f(z):
        return np.exp(-((z - 0.1j) ** 2))

    sf = floquet.SampledFunction(f, strip_region, m_trunc=16)
    for z in (0.3 + 0.2j, 0.7 - 0.1j):
        got = kernels.project(strip_ctx, sf, z)
        assert abs(got - f(complex(z))) < 1e-6


def test_project_kernel_selectors_agree(strip_ctx, strip_region):
    def f(z):
        return np.exp(-((z - 0.1j) ** 2))

    sf = floquet.SampledFunction(f, strip_region, m_trunc=8)
    z = 0.4 + 0.1j
    a = kernels.project(strip_ctx, sf, z, kernel="closed")
    b = kernels.project(strip_ctx, sf, z, kernel="t")
    assert abs(a - b) < 1e-8


def test_project_flags_heavy_tail(strip_ctx, strip_region):
    # a slowly decaying kernel paired with a slowly decaying input leaves
    # a translate tail the window cannot absorb
    def slow_kernel(z, w):
        return 1.0 / (1.0 + np.real(z - w) ** 2)

    def witness(w):
        return np.conj(1.0 / (w - 2j))

    sf = floquet.SampledFunction(witness, strip_region, m_trunc=8)
    with pytest.raises(kernels.TailNotNegligible):
        kernels.project(strip_ctx, sf, 0.4 + 0.1j, kernel=slow_kernel,
                        m_window=8)


def test_write_kernel_csv_columns(tmp_path):
    path = tmp_path / "vals.csv"
    kernels.write_kernel_csv(
        path, [(0.1 + 0.2j, 0.0, 1.5 - 0.5j, "closed")]
    )
    lines = path.read_text().splitlines()
    assert lines[0] == "re_z,im_z,re_w,im_w,re_K,im_K,method"
    assert lines[1].split(",")[-1] == "closed"

import math

import numpy as np
import pytest

from periberg import analysis, cellgeom, confmap, kernels


def test_phi_prime_bounds_strip_are_unit(strip_ctx):
    report = analysis.phi_prime_bounds(strip_ctx)
    inf, sup = report
    assert inf == pytest.approx(1.0)
    assert sup == pytest.approx(1.0)
    assert not report.blow_up


def test_phi_prime_bounds_gentle_zigzag(zigzag_ctx):
    inf, sup = analysis.phi_prime_bounds(zigzag_ctx)
    assert 0.1 < inf < 1.0 < sup < 10.0


def test_phi_prime_blow_up_at_sharp_corners():
    spec = cellgeom.zigzag_cell()  # reentrant seam corners
    params = confmap.solve_sc_parameters(spec)
    ctx = kernels.make_context(confmap.annulus_map_from_sc(params))
    report = analysis.phi_prime_bounds(ctx)
    assert report.blow_up
    sups = report.sup_by_level
    assert sups[-1] > 1.2 * sups[0]


def test_decay_profile_strip_rate(strip_ctx):
    probes = analysis.default_probe_set(strip_ctx)
    fit = analysis.decay_profile(strip_ctx, probes, n_max=8)
    # log rho = pi for the half-height 1/2 channel, so the predicted
    # exponential rate pi^2 / log rho is pi itself
    assert abs(fit.rate - math.pi) / math.pi < 0.05
    assert fit.rate_sech_sq == pytest.approx(math.pi)
    assert fit.rate_half == pytest.approx(math.pi / 2.0)
    assert fit.matched_rate == "pi^2/log(rho)"
    # measured rate sits far outside any confusion with the halved value
    assert abs(fit.rate - fit.rate_half) > 10.0 * abs(fit.rate - fit.rate_sech_sq)


def test_decay_profile_prefactor_window(strip_ctx):
    probes = analysis.default_probe_set(strip_ctx)
    fit = analysis.decay_profile(strip_ctx, probes, n_max=8)
    assert 0.0 < fit.prefactor_lo <= fit.prefactor_hi
    assert fit.prefactor_hi / fit.prefactor_lo < 1.5


def test_decay_fit_csv(strip_ctx, tmp_path):
    probes = analysis.default_probe_set(strip_ctx)
    fit = analysis.decay_profile(strip_ctx, probes, n_max=6)
    path = tmp_path / "decay.csv"
    fit.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "n,peak,fit"
    assert len(lines) == 1 + len(fit.ns)


def test_decay_profile_underflow_guard():
    thin = kernels.strip_context(0.008)
    probes = analysis.default_probe_set(thin)
    with pytest.raises(analysis.UnderflowBeyondN):
        analysis.decay_profile(thin, probes, n_max=8)


def test_weight_spec_constant_and_stretched():
    const = analysis.WeightSpec.constant()
    assert const(3.7) == pytest.approx(1.0)
    spec = analysis.WeightSpec.stretched(1.0, 0.5)
    assert spec(4.0) == pytest.approx(math.exp(2.0))
    assert spec(-4.0) == spec(4.0)
    with pytest.raises(ValueError):
        analysis.WeightSpec.stretched(-1.0, 0.5)
    with pytest.raises(ValueError):
        analysis.WeightSpec.stretched(1.0, 1.0)


def test_weight_check_submultiplicative():
    const = analysis.WeightSpec.constant()
    report = analysis.weight_check(const, a=1.0, b=0.5)
    assert report.c == pytest.approx(1.0)
    spec = analysis.WeightSpec.stretched(1.0, 0.5)
    report = analysis.weight_check(spec, a=1.0, b=0.5)
    assert report.c < 1.0 + 1e-12


def test_weight_check_rejects_gaussian_growth():
    spec = analysis.WeightSpec.custom(lambda x: np.exp(x**2))
    with pytest.raises(analysis.NotAWeight):
        analysis.weight_check(spec, a=1.0, b=0.5)


def test_schur_bound_constant_weight(strip_ctx):
    sup, report = analysis.schur_bound(
        strip_ctx, analysis.WeightSpec.constant(), window=8
    )
    assert np.isfinite(sup) and sup > 0
    assert report.rel_change < 0.01


def test_schur_bound_stretched_weight(strip_ctx):
    sup, report = analysis.schur_bound(
        strip_ctx, analysis.WeightSpec.stretched(1.0, 0.5), window=8
    )
    assert np.isfinite(sup) and sup > 0
    assert report.rel_change < 0.01


def test_schur_bound_rejects_nonsummable(strip_ctx):
    # a weight shrinking as fast as the kernel grows back keeps the row
    # masses from decaying across the window
    bad = analysis.WeightSpec.custom(lambda x: np.exp(-4.0 * np.abs(x)))
    with pytest.raises(analysis.NotSummable):
        analysis.schur_bound(strip_ctx, bad, window=8)


def test_schur_bound_needs_region_for_solved_cells(zigzag_ctx):
    with pytest.raises(ValueError):
        analysis.schur_bound(zigzag_ctx, analysis.WeightSpec.constant(),
                             window=4)

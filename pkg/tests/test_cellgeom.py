import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from periberg import cellgeom as cg


def test_rectangle_cell_fields():
    spec = cg.rectangle_cell(0.5)
    assert spec.junction == (-0.5, 0.5)
    assert {v.imag for v in spec.upper_polyline} == {0.5}
    assert {v.imag for v in spec.lower_polyline} == {-0.5}


def test_spec_dict_roundtrip(tmp_path):
    spec = cg.zigzag_cell(mid_offset=0.3)
    again = cg.PeriodicCellSpec.from_dict(spec.to_dict())
    assert again == spec
    path = tmp_path / "cell.json"
    spec.save(path)
    assert cg.PeriodicCellSpec.load(path) == spec


def test_from_dict_rejects_garbage():
    with pytest.raises(cg.InvalidCell):
        cg.PeriodicCellSpec.from_dict({"not": "a cell"})


def test_zigzag_default_corner_exponents():
    spec = cg.zigzag_cell()
    betas = set(spec.beta_upper) | set(spec.beta_lower)
    assert -0.5 in betas and 0.5 in betas


def test_zigzag_gentle_corner_exponents():
    spec = cg.zigzag_cell(mid_offset=0.1)
    expect = 2.0 / math.pi * math.atan(0.2)
    mags = {abs(b) for b in spec.beta_upper}
    assert max(mags) == pytest.approx(expect)


@given(st.floats(0.05, 1.5))
def test_zigzag_corner_exponents_balance(m):
    spec = cg.zigzag_cell(mid_offset=m)
    # seam and mid corners carry opposite turning angles
    assert sum(spec.beta_upper) == pytest.approx(0.0, abs=1e-12)
    assert sum(spec.beta_lower) == pytest.approx(0.0, abs=1e-12)


def test_region_area_and_weights(strip_region):
    assert strip_region.area == pytest.approx(1.0)
    assert strip_region.weights.sum() == pytest.approx(1.0)
    assert np.all(strip_region.weights > 0)


def test_region_multi_slab_node_count(zigzag_region):
    per_slab = zigzag_region.nx * zigzag_region.ny
    assert len(zigzag_region.nodes) == len(zigzag_region.slabs) * per_slab


def test_region_contains(strip_region):
    assert strip_region.contains(0.5 + 0.2j)
    assert not strip_region.contains(0.5 + 0.7j)
    assert not strip_region.contains(0.5 + 0.48j, inset=0.05)


def test_region_refined_doubles(strip_region):
    fine = strip_region.refined()
    assert len(fine.nodes) == 4 * len(strip_region.nodes)
    assert fine.weights.sum() == pytest.approx(strip_region.weights.sum())


def test_exp_map_log_branch_roundtrip():
    for z in (0.25 + 0.3j, 0.8 - 0.1j, 0.5 + 0.0j):
        w = cg.exp_map(z)
        back = cg.log_branch(w)
        assert abs(back - z) < 1e-14


def test_log_branch_needs_side_on_cut():
    w = cg.exp_map(0.0 + 0.2j)  # on the positive real axis
    with pytest.raises(cg.BranchViolation):
        cg.log_branch(w)
    lo = cg.log_branch(w, cg.MINUS)
    hi = cg.log_branch(w, cg.PLUS)
    assert (hi - lo).real == pytest.approx(1.0)
    assert abs(hi.imag - lo.imag) < 1e-14


def test_log_branch_rejects_zero_and_wrong_side():
    with pytest.raises(cg.BranchViolation):
        cg.log_branch(0.0)
    # a point with argument 3 pi / 2 belongs to the plus side
    with pytest.raises(cg.BranchViolation):
        cg.log_branch(cg.exp_map(0.75 + 0.1j), cg.MINUS)
    with pytest.raises(cg.BranchViolation):
        cg.log_branch(cg.exp_map(0.25 + 0.1j), cg.PLUS)


def test_sector_check_flags_bad_delta():
    class FakeMap:
        def cut_arg_samples(self):
            return np.full(5, math.pi / 2.0)

    report = cg.check_sector_assumption(FakeMap(), delta=0.05)
    assert report.ok
    assert report.suggested_rotation == pytest.approx(0.0)
    with pytest.raises(cg.InvalidDelta):
        cg.check_sector_assumption(FakeMap(), delta=1.5)


def test_sector_check_detects_escape():
    class FakeMap:
        def cut_arg_samples(self):
            return np.array([0.01, math.pi / 2.0])

    report = cg.check_sector_assumption(FakeMap(), delta=0.05)
    assert not report.ok
    assert report.margin < 0


def test_boundary_edges_span_one_period(zigzag_region):
    edges = zigzag_region.boundary_edges()
    for side in ("upper", "lower"):
        run = sum(q.real - p.real for p, q, s in edges if s == side)
        assert abs(abs(run) - 1.0) < 1e-12

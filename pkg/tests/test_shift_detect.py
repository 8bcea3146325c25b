import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ilcs.alignment import AlignedUnmixing
from ilcs.harness import DetectConfig, fit_environments
from ilcs.scm_sim import LatentScm, apply_general_intervention, simulate_environments
from ilcs.shift_detect import (
    ShiftStatisticConfig,
    default_alpha,
    detect_shifts,
    exact_shift_oracle,
    shifted_from_statistics,
    stat_abs_row,
    stat_norm_diff,
    stat_sign_min,
)
from scenarios import AU_EDITS, UK_EDITS, toy_base

STATS = [stat_sign_min, stat_abs_row, stat_norm_diff]
vec = arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10, allow_nan=False, width=32))


def aligned_from(M: np.ndarray) -> AlignedUnmixing:
    d = M.shape[0]
    return AlignedUnmixing(M, np.zeros((2, d)), np.zeros(M.shape[1]), np.zeros(d), "psi", np.arange(d), np.ones(d))


@pytest.mark.parametrize(
    "fn,u,v,expected",
    [
        (stat_sign_min, (1, 2), (1, 2), 0.0),
        (stat_sign_min, (1, 1), (-1, -1), 0.0),
        (stat_sign_min, (1, 0), (0, 1), 1.0),
        (stat_sign_min, (2, 0), (1, 0), 1 / 3),
        (stat_abs_row, (1, -2), (-1, 2), 0.0),
        (stat_abs_row, (1, 0), (0, 1), 1.0),
        (stat_abs_row, (2, 0), (1, 0), 1 / 3),
        (stat_norm_diff, (1, 0), (0, 1), 0.0),
        (stat_norm_diff, (2, 0), (1, 0), 1 / 3),
        (stat_norm_diff, (3, -1), (3, -1), 0.0),
    ],
)
def test_hand_examples(fn, u, v, expected):
    assert abs(fn(u, v) - expected) <= 1e-12


def test_zero_rows_and_shape_mismatch_rejected():
    for fn in STATS:
        with pytest.raises(ValueError):
            fn((0, 0), (0, 0))
        with pytest.raises(ValueError):
            fn((1, 2), (1, 2, 3))


@given(u=vec, data=st.data())
@settings(max_examples=200, deadline=None)
def test_sign_min_zero_characterization(u, data):
    if not np.any(u):
        return
    v = data.draw(arrays(np.float64, u.shape, elements=st.floats(-10, 10, allow_nan=False, width=32)))
    if not np.any(v):
        return
    is_pm = np.array_equal(u, v) or np.array_equal(u, -v)
    assert (stat_sign_min(u, v) == 0) == is_pm
    assert stat_sign_min(u, u) == 0 and stat_sign_min(u, -u) == 0


@given(u=vec, data=st.data(), s=st.sampled_from([-1.0, 1.0]), t=st.sampled_from([-1.0, 1.0]))
@settings(max_examples=200, deadline=None)
def test_sign_invariance_and_bounds(u, data, s, t):
    v = data.draw(arrays(np.float64, u.shape, elements=st.floats(-10, 10, allow_nan=False, width=32)))
    if not (np.any(u) or np.any(v)):
        return
    for fn in STATS:
        val = fn(u, v)
        assert 0.0 <= val <= 1.0 + 1e-15
        assert fn(s * u, t * v) == pytest.approx(val, abs=1e-15)


def test_thresholding_of_reported_real_values():
    assert shifted_from_statistics([0.074, 0.0497, 0.078, 0.638, 0.633], 0.5) == {3, 4}
    assert shifted_from_statistics([0.302, 0.258, 0.109, 0.189, 0.088], 0.5) == set()
    # strict inequality
    assert shifted_from_statistics([0.2, 0.2000001], 0.2) == {1}


def test_default_alpha():
    assert default_alpha(5) == 0.2 and default_alpha(10) == 0.2 and default_alpha(11) == 0.5
    assert ShiftStatisticConfig().resolve_alpha(20) == 0.5
    assert ShiftStatisticConfig(alpha=0.3).resolve_alpha(20) == 0.3
    assert ShiftStatisticConfig("sign-min").variant == "sign_min"
    with pytest.raises(ValueError):
        ShiftStatisticConfig("l2")
    with pytest.raises(ValueError):
        ShiftStatisticConfig(alpha=1.5)


def test_identical_environments_empty():
    M = np.random.default_rng(0).normal(size=(4, 8))
    report = detect_shifts([aligned_from(M)] * 3)
    assert report.union == set()
    for key in report.pairwise:
        np.testing.assert_array_equal(report.pairwise[key]["L"], 0)
    assert len(report.pairwise) == 3


def test_detect_shifts_flags_changed_row_and_serializes():
    M = np.eye(3)
    M2 = M.copy()
    M2[1] = [0.0, 3.0, 0.0]
    report = detect_shifts([aligned_from(M), aligned_from(M2)], env_ids=["a", "b"])
    assert report.union == {1}
    assert report.shifted("b", "a") == {1}
    np.testing.assert_allclose(report.L("a", "b"), [0, 0.5, 0])
    payload = json.loads(report.to_json())
    assert payload["shifted_union"] == [1] and payload["pairs"][0]["k"] == "a"


def test_mismatched_d_rejected():
    with pytest.raises(ValueError, match="d=3"):
        detect_shifts([aligned_from(np.eye(3)), aligned_from(np.eye(4))])
    with pytest.raises(ValueError):
        detect_shifts([aligned_from(np.eye(3))])


# --- oracle -----------------------------------------------------------------


def test_oracle_identical_is_empty():
    base = toy_base()
    assert exact_shift_oracle(base, base) == set()


def test_oracle_omega_only():
    base = toy_base()
    omega = base.omega.copy()
    omega[3] = 9.0
    assert exact_shift_oracle(base, LatentScm(base.adjacency, omega)) == {3}


def test_oracle_toy_scenarios():
    base = toy_base()
    au = apply_general_intervention(base, 0.0, edits=AU_EDITS).intervened
    uk = apply_general_intervention(base, 0.0, edits=UK_EDITS).intervened
    assert {i + 1 for i in exact_shift_oracle(base, au)} == {2, 3, 5}
    assert {i + 1 for i in exact_shift_oracle(base, uk)} == {1}


def test_oracle_matches_B_rows():
    run = simulate_environments(8, 3, 10, m=2, seed=1)
    for a in range(3):
        for b in range(3):
            Ba, Bb = run.scms[a].B, run.scms[b].B
            rows = {i for i in range(8) if not np.array_equal(Ba[i], Bb[i])}
            assert exact_shift_oracle(run.scms[a], run.scms[b]) == rows


def test_shifted_nodes_never_look_like_sign_flips():
    for seed in range(3):
        run = simulate_environments(5, 2, 100_000, seed=seed)
        aligned, _, _ = fit_environments(run.datasets, DetectConfig(seed=seed))
        truth = exact_shift_oracle(run.scms[0], run.scms[1])
        for i in truth:
            assert stat_sign_min(aligned[0].unmixing[i], aligned[1].unmixing[i]) > 0.1

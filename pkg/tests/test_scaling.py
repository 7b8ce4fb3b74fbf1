import numpy as np
import pytest

from qpkr.baselines import CriticalLaw, ScalingFunction, synth_scaling_data
from qpkr.core import Branch, ConfigurationError, ControlPoint, ConvergenceError, DegenerateDataError
from qpkr.engine import ObservableSeries
from qpkr.scaling import (LambdaSeries, ScalingResult, assign_branches, branch_from_slope, classify_branch,
                          collapse, default_gauge_ref, lambda_series, lambda_slope, ordered_labels)

LAW = CriticalLaw(0.05, 6.67, 1.58, 0.01)
TIMES = np.arange(30, 151)
CONTROLS = np.round(np.arange(5.0, 8.35, 0.1), 10)
L, D, AMB = Branch.LOCALIZED, Branch.DIFFUSIVE, Branch.CRITICAL_AMBIGUOUS


def _observables(p2, pi0, t=None, err=0.01):
    t = np.arange(1, 201) if t is None else t
    ones = np.ones(len(t))
    return ObservableSeries(ControlPoint(5.0, 0.2, 5.0), t, p2 * ones if np.ndim(p2) == 0 else p2, err * ones,
                            pi0 * ones if np.ndim(pi0) == 0 else pi0, 0.001 * ones, 64)


def _flat(q, level=1.0, err=0.01, t=TIMES):
    return LambdaSeries(q, t, np.full(len(t), level), np.full(len(t), err))


# ---------------------------------------------------------------------------
# Λ from observables
# ---------------------------------------------------------------------------

def test_lambda_from_spread():
    t = np.arange(1, 201)
    obs = _observables(3.0 * t ** (2 / 3), 0.5, t)
    ls = lambda_series(obs, (30, 150))
    assert ls.times[0] == 30 and ls.times[-1] == 150
    np.testing.assert_allclose(ls.values, 3.0)
    np.testing.assert_allclose(ls.lambda_err, 0.01 / (3.0 * ls.times ** (2 / 3)))
    assert ls.control_value == 5.0
    assert ls.source == "p2"


def test_lambda_from_return_probability():
    t = np.arange(1, 201)
    obs = _observables(1.0, 0.5 * t ** (-1 / 3), t)
    ls = lambda_series(obs, (30, 150), source="pi0")
    np.testing.assert_allclose(ls.values, 4.0)
    np.testing.assert_allclose(ls.lambda_err, np.maximum(2 * 0.001 / (0.5 * ls.times ** (-1 / 3)), 1e-4))


def test_lambda_error_floor():
    obs = _observables(100.0, 0.5, err=0.0)
    ls = lambda_series(obs, (30, 150))
    assert np.all(ls.lambda_err == 1e-4)


def test_lambda_window_must_be_covered():
    obs = _observables(1.0, 0.5, np.arange(1, 101))
    with pytest.raises(ConfigurationError, match="not covered"):
        lambda_series(obs, (30, 150))


def test_lambda_vanishing_return_probability():
    obs = _observables(1.0, 0.0)
    with pytest.raises(DegenerateDataError):
        lambda_series(obs, (30, 150), source="pi0")


def test_lambda_unknown_source():
    with pytest.raises(ConfigurationError, match="source"):
        lambda_series(_observables(1.0, 0.5), (30, 150), source="p4")


def test_lambda_series_validation():
    with pytest.raises(ValueError, match="positive"):
        LambdaSeries(1.0, TIMES, np.zeros(len(TIMES)), np.ones(len(TIMES)))


def test_perturbed_series_is_reproducible():
    ls = _flat(5.0, err=0.1)
    a = ls.perturbed(np.random.default_rng(1))
    b = ls.perturbed(np.random.default_rng(1))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, ls.values)
    assert np.array_equal(a.lambda_err, ls.lambda_err)


# ---------------------------------------------------------------------------
# Branch classification
# ---------------------------------------------------------------------------

def test_classify_localized_and_diffusive():
    loc = LambdaSeries(4.0, TIMES, 5.0 * TIMES ** (-2 / 3), np.full(len(TIMES), 0.01))
    dif = LambdaSeries(8.0, TIMES, 0.2 * TIMES ** (1 / 3), np.full(len(TIMES), 0.01))
    assert classify_branch(loc).branch is Branch.LOCALIZED
    assert classify_branch(loc).slope == pytest.approx(-2 / 3)
    assert classify_branch(dif).branch is Branch.DIFFUSIVE
    assert classify_branch(_flat(6.0)).branch is Branch.CRITICAL_AMBIGUOUS


def test_branch_from_slope():
    assert branch_from_slope(-0.1, 0.01) is Branch.LOCALIZED
    assert branch_from_slope(0.1, 0.01) is Branch.DIFFUSIVE
    assert branch_from_slope(0.015, 0.01) is Branch.CRITICAL_AMBIGUOUS


def test_lambda_slope_needs_three_points():
    with pytest.raises(ConfigurationError):
        lambda_slope(_flat(1.0), t_min=149)


def test_ambiguous_series_join_nearest_branch():
    loc = LambdaSeries(4.0, TIMES, TIMES ** (-2 / 3), np.full(len(TIMES), 0.01))
    dif = LambdaSeries(8.0, TIMES, TIMES ** (1 / 3), np.full(len(TIMES), 0.01))
    series = [loc, _flat(5.0), _flat(7.5), dif]
    assert assign_branches(series, ambiguous="nearest") == [L, L, D, D]


def test_ambiguous_series_stay_unassigned_by_default():
    loc = LambdaSeries(4.0, TIMES, TIMES ** (-2 / 3), np.full(len(TIMES), 0.01))
    dif = LambdaSeries(8.0, TIMES, TIMES ** (1 / 3), np.full(len(TIMES), 0.01))
    series = [loc, _flat(5.0), _flat(7.5), dif]
    assert assign_branches(series) == [L, AMB, AMB, D]


def test_assign_branches_all_ambiguous():
    with pytest.raises(ConfigurationError, match="ambiguous"):
        assign_branches([_flat(1.0), _flat(2.0)])


def test_assign_branches_rejects_unknown_policy():
    with pytest.raises(ConfigurationError, match="ambiguous must be one of"):
        assign_branches([_flat(1.0), _flat(2.0)], ambiguous="closest")


@pytest.mark.parametrize("labels, demoted", [
    ([L, L, L, D, D], []),
    ([D, D, L, L, L], []),
    ([L, AMB, L, AMB, D], []),
    ([L, L, D, L, D], [2, 3]),
    ([L, L, L, D, L, D, D], [3, 4]),
    ([L, D, L, L, D, D], [1]),
])
def test_ordered_labels(labels, demoted):
    controls = np.arange(len(labels), dtype=float)
    out, found = ordered_labels(controls, labels)
    assert found == demoted
    assert [i for i, b in enumerate(out) if b is AMB and labels[i] is not AMB] == demoted


def test_ordered_labels_follow_control_order_not_input_order():
    controls = np.array([5.0, 1.0, 3.0, 2.0, 4.0])
    labels = [D, L, L, L, D]
    assert ordered_labels(controls, labels)[1] == []
    assert ordered_labels(controls, [D, L, D, L, L])[1] == [2, 4]


def test_out_of_order_series_is_demoted(caplog):
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    impostor = LambdaSeries(5.45, TIMES, TIMES ** (1 / 3), np.full(len(TIMES), 1e-3))
    with caplog.at_level("WARNING", logger="qpkr.scaling"):
        branches = assign_branches(series + [impostor])
    assert branches[-1] is Branch.CRITICAL_AMBIGUOUS
    assert "contradicts the branch ordering" in caplog.text


def test_default_gauge_ref():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    assert default_gauge_ref(series) == pytest.approx(5.0)


# ---------------------------------------------------------------------------
# Collapse
# ---------------------------------------------------------------------------

def test_exact_power_law_collapse_recovers_scale_factors():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    result = collapse(series)
    assert isinstance(result, ScalingResult)
    assert result.gauge_ref == pytest.approx(5.0)
    assert result.diffusive_gauge_ref == pytest.approx(8.3)
    assert result.chi2_per_dof < 1e-6
    for q in CONTROLS:
        ref = result.gauge_ref if q < LAW.q_c else result.diffusive_gauge_ref
        assert result.xi[q] == pytest.approx(LAW(q) / LAW(ref), rel=1e-5)
    assert result.xi[result.gauge_ref] == 1.0
    assert result.branches[5.0] is Branch.LOCALIZED
    assert result.branches[8.3] is Branch.DIFFUSIVE


def test_collapse_does_not_depend_on_input_order():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    forward = collapse(series)
    backward = collapse(series[::-1])
    for q in CONTROLS:
        assert forward.xi[q] == pytest.approx(backward.xi[q], rel=1e-10)


def test_collapse_with_explicit_gauges_and_branches():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    branches = {q: Branch.LOCALIZED if q < 6.67 else Branch.DIFFUSIVE for q in CONTROLS}
    result = collapse(series, gauge_ref=6.0, branches=branches, diffusive_gauge_ref=7.5)
    assert result.xi[6.0] == 1.0 and result.xi[7.5] == 1.0
    assert result.xi[5.5] == pytest.approx(LAW(5.5) / LAW(6.0), rel=1e-5)
    assert result.xi[8.0] == pytest.approx(LAW(8.0) / LAW(7.5), rel=1e-5)


def test_noisy_crossover_collapse():
    series = synth_scaling_data(ScalingFunction.crossover(), LAW, CONTROLS, TIMES, noise=0.01, seed=3)
    result = collapse(series, tol=1e-4)
    assert result.chi2_per_dof < 2.0
    assert result.residual_rms < 0.02
    assert np.all(np.diff(result.z) >= 0)
    assert len(result.z) == (len(CONTROLS) - len(result.excluded)) * len(TIMES)
    assert set(result.excluded) <= set(result.ambiguous)
    curve = result.curves[Branch.LOCALIZED]
    assert isinstance(curve(0.0), float)


def test_collapse_reports_missed_convergence():
    series = synth_scaling_data(ScalingFunction.crossover(), LAW, CONTROLS, TIMES, noise=0.01, seed=3)
    with pytest.raises(ConvergenceError) as info:
        collapse(series, max_sweeps=1)
    assert isinstance(info.value.last_iterate, ScalingResult)


def test_collapse_needs_four_series():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, [5.0, 6.0, 7.5], TIMES)
    with pytest.raises(ConfigurationError, match="at least 4"):
        collapse(series)


def test_collapse_rejects_duplicate_controls():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, [5.0, 5.0, 6.0, 7.5, 8.0], TIMES)
    with pytest.raises(ConfigurationError, match="distinct"):
        collapse(series)


def test_collapse_needs_both_branches():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, [4.0, 4.5, 5.0, 5.5, 6.0], TIMES)
    with pytest.raises(ConfigurationError, match="both branches"):
        collapse(series)


def test_collapse_rejects_diffusive_gauge():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    with pytest.raises(ConfigurationError, match="not on the localized branch"):
        collapse(series, gauge_ref=8.0)
    with pytest.raises(ConfigurationError, match="not one of the control values"):
        collapse(series, gauge_ref=5.05)


def test_collapse_needs_four_series_outside_the_ambiguous_region():
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, [5.0, 7.5, 8.0], TIMES)
    with pytest.raises(ConfigurationError, match="outside the critical-ambiguous region"):
        collapse(series + [_flat(6.2), _flat(6.5)])


def test_collapse_leaves_out_ambiguous_series(caplog):
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES) + [_flat(6.62)]
    with caplog.at_level("INFO", logger="qpkr.scaling"):
        result = collapse(series)
    assert result.excluded == [6.62]
    assert 6.62 in result.ambiguous
    assert 6.62 not in result.xi
    assert result.assignment[6.62] is AMB
    assert len(result.assignment) == len(CONTROLS) + 1
    assert len(result.z) == len(CONTROLS) * len(TIMES)
    for q in CONTROLS:
        ref = result.gauge_ref if q < LAW.q_c else result.diffusive_gauge_ref
        assert result.xi[q] == pytest.approx(LAW(q) / LAW(ref), rel=1e-5)
    assert "left 1 critical-ambiguous series out" in caplog.text


def test_joint_refinement_does_not_raise_chi2():
    series = synth_scaling_data(ScalingFunction.crossover(), LAW, CONTROLS, TIMES, noise=0.01, seed=3)
    plain = collapse(series, tol=1e-4, polish=False)
    refined = collapse(series, tol=1e-4)
    assert refined.excluded == plain.excluded
    assert refined.chi2_per_dof <= plain.chi2_per_dof * (1 + 1e-9)
    errors = np.array([refined.xi_err[q] for q in refined.controls])
    assert np.all(np.isfinite(errors)) and np.all(errors > 0)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_jittered_restarts_agree(seed):
    series = synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES)
    reference = collapse(series)
    restarted = collapse(series, init_jitter=0.2, seed=seed)
    for q in CONTROLS:
        assert restarted.xi[q] == pytest.approx(reference.xi[q], rel=1e-4)


def test_scale_factors_grow_towards_the_transition():
    result = collapse(synth_scaling_data(ScalingFunction.power_law(), LAW, CONTROLS, TIMES))
    for branch, sign in ((L, 1.0), (D, -1.0)):
        ln_xi = np.log([result.xi[q] for q in result.controls if result.branches[q] is branch])
        assert np.all(sign * np.diff(ln_xi) > 0)


def test_noisy_localized_scale_factors_are_monotone_within_errors():
    series = synth_scaling_data(ScalingFunction.crossover(), LAW, CONTROLS, TIMES, noise=0.01, seed=3)
    result = collapse(series, tol=1e-4)
    q = [c for c in result.controls if result.branches[c] is L]
    ln_xi = np.log([result.xi[c] for c in q])
    ln_err = np.array([result.xi_err[c] / result.xi[c] for c in q])
    assert np.all(np.diff(ln_xi) > -4.0 * np.hypot(ln_err[1:], ln_err[:-1]))


def test_near_critical_noisy_series_keep_their_branch():
    controls = np.round(np.linspace(4.0, 9.0, 41), 10)
    series = synth_scaling_data(ScalingFunction.crossover(), LAW, controls, np.arange(30, 1001, 10), noise=0.02,
                                seed=0)
    result = collapse(series, tol=1e-4)
    assert result.assignment[6.625] is not D
    for q, branch in result.branches.items():
        assert branch is (L if q < LAW.q_c else D)
    for q in result.controls:
        if abs(q - LAW.q_c) > 0.25:
            ref = result.gauge_ref if q < LAW.q_c else result.diffusive_gauge_ref
            assert np.log(result.xi[q]) == pytest.approx(np.log(LAW(q) / LAW(ref)), abs=0.5)

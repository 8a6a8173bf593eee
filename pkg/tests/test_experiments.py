import io
import math
import warnings

import numpy as np
import pytest

from beamsearch.experiments import (
    RUNS_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentError,
    async_sweep,
    derive_seeds,
    improvement_probability_estimate,
    linear_fit,
    monte_carlo_convergence,
    scaling_study,
    snr_factory,
    summarize,
    worker_count,
    write_runs_csv,
    write_summary_csv,
)
from beamsearch.model import (
    ChannelRealization,
    Objective,
    PerturbationModel,
    PhaseState,
    SnrObjective,
    UpdateSchedule,
    UsageError,
    sample_channels,
)
from beamsearch.search import SearchConfig, StopCriterion

PI = math.pi
DEG = PI / 180


class MeanPhase(Objective):
    """f = mean(theta) with a declared optimum of 3N; a stand-in for scaling tests."""

    def __init__(self, n):
        self.dimension = n
        self.global_max_value = 3.0 * n

    def _value(self, theta):
        return float(theta.mean())


def unit_steps(delta, n_iter):
    return np.ones_like(delta)


def snr_config(n=20, seed=0, **kw):
    kw.setdefault("perturbation", PerturbationModel.symmetric(5 * DEG))
    return SearchConfig(SnrObjective(sample_channels(n, seed)), **kw)


# linear_fit
# ----------

def test_fit_collinear():
    fit = linear_fit([(1, 2), (2, 4), (3, 6)])
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == 1.0


def test_fit_flat_line_convention():
    fit = linear_fit([(0, 1), (1, 1)])
    assert (fit.slope, fit.intercept, fit.r_squared) == (0.0, 1.0, 1.0)


def test_fit_zero_r_squared():
    # by hand: x mean 1, y mean 1/3, Sxy = 0 -> slope 0, intercept 1/3, SS_res = SS_tot
    fit = linear_fit([(0, 0), (1, 1), (2, 0)])
    assert fit.slope == pytest.approx(0.0, abs=1e-15)
    assert fit.intercept == pytest.approx(1 / 3)
    assert fit.r_squared == pytest.approx(0.0, abs=1e-12)


def test_fit_matches_polyfit():
    rng = np.random.default_rng(0)
    x = np.arange(10.0)
    y = 3 * x + rng.normal(size=10)
    fit = linear_fit(list(zip(x, y)))
    slope, intercept = np.polyfit(x, y, 1)
    assert fit.slope == pytest.approx(slope)
    assert fit.intercept == pytest.approx(intercept)
    assert 0.0 <= fit.r_squared <= 1.0


@pytest.mark.parametrize("points", [[(1, 2)], [(1, 2), (1, 3)], []])
def test_fit_underdetermined(points):
    with pytest.raises(UsageError):
        linear_fit(points)


# seeds and workers
# -----------------

def test_derive_seeds_stable_and_distinct():
    a = derive_seeds(5, 100, 0)
    assert a == derive_seeds(5, 100, 0)
    assert len(set(a)) == 100
    assert a != derive_seeds(5, 100, 1)
    assert a != derive_seeds(6, 100, 0)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("BEAMSEARCH_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("BEAMSEARCH_WORKERS", "0")
    with pytest.raises(UsageError):
        worker_count()
    monkeypatch.delenv("BEAMSEARCH_WORKERS")
    assert worker_count() >= 1


# monte_carlo_convergence
# -----------------------

def test_mc_from_global_max_is_converged_throughout():
    cfg = snr_config(n=6, initial_state="zeros", max_iterations=50)
    res = monte_carlo_convergence(cfg, 1, 0, workers=1)
    assert np.all(res.convergence_fraction_by_iter == 1.0)
    assert res.hit_times == (0,)


def test_mc_deterministic():
    cfg = snr_config(schedule=UpdateSchedule.asynchronous(0.5))
    a = monte_carlo_convergence(cfg, 8, 17, workers=1)
    b = monte_carlo_convergence(cfg, 8, 17, workers=1)
    assert a.same_as(b)
    c = monte_carlo_convergence(cfg, 8, 18, workers=1)
    assert not a.same_as(c)


def test_mc_parallel_matches_serial():
    cfg = snr_config()
    serial = monte_carlo_convergence(cfg, 6, 3, workers=1)
    parallel = monte_carlo_convergence(cfg, 6, 3, workers=2)
    assert serial.same_as(parallel)


def test_mc_convergence_fraction_shape():
    cfg = snr_config(n=25, seed=2)
    res = monte_carlo_convergence(cfg, 20, 1, workers=1)
    frac = res.convergence_fraction_by_iter
    assert frac.size == cfg.budget + 1
    assert np.all(np.diff(frac) >= 0)
    assert res.final_convergence_fraction == 1.0
    for n in (0, 100, 500, cfg.budget):
        assert frac[n] == np.mean([h <= n for h in res.hit_times])


def test_mc_traces_pairwise_distinct():
    res = monte_carlo_convergence(snr_config(n=10), 15, 2, workers=1)
    blobs = {tr.values.tobytes() for tr in res.traces}
    assert len(blobs) == 15
    assert len(set(res.seeds)) == 15


def test_mc_mean_value_exceeds_threshold_after_hitting():
    cfg = snr_config(n=20, seed=9, halt_on_hit=False, max_iterations=3000,
                     stop_rule=StopCriterion.epsilon_region(0.1 * 400))
    res = monte_carlo_convergence(cfg, 12, 4, workers=1)
    curve = res.mean_value_curve()
    target = cfg.objective.global_max_value - cfg.stop_rule.epsilon
    first = int(np.argmax(curve > target))
    assert curve[first] > target
    assert np.all(curve[first:] > target)


def test_mc_rejects_zero_runs():
    with pytest.raises(UsageError):
        monte_carlo_convergence(snr_config(), 0, 0)


def test_mc_flags_origin_outside_range():
    cfg = snr_config(n=5, perturbation=PerturbationModel.shifted(5 * DEG, 10 * DEG), max_iterations=200)
    with pytest.warns(UserWarning, match="origin"):
        res = monte_carlo_convergence(cfg, 2, 0, workers=1)
    assert res.origin_interior is False


def test_mc_without_traces():
    res = monte_carlo_convergence(snr_config(n=8), 3, 0, keep_traces=False, workers=1)
    assert res.traces is None
    with pytest.raises(UsageError):
        res.mean_value_curve()


# scaling_study
# -------------

def stub_base():
    model = PerturbationModel(1.0, transform=unit_steps, support=(1.0, 1.0))
    return SearchConfig(MeanPhase(2), model, initial_state="zeros",
                        stop_rule=StopCriterion.alpha_threshold(1.0))


def test_scaling_stub_exact_line():
    res = scaling_study(stub_base(), [2, 4, 8, 16], 2, 2, 0, objective_factory=lambda n, rng: MeanPhase(n))
    assert res.mean_hit_times == (6.0, 12.0, 24.0, 48.0)
    assert res.fit.slope == pytest.approx(3.0)
    assert res.fit.intercept == pytest.approx(0.0, abs=1e-9)
    assert res.fit.r_squared == 1.0
    assert res.counts == (4, 4, 4, 4)
    assert len(res.records) == 16


def test_scaling_rejects_single_n():
    with pytest.raises(UsageError):
        scaling_study(stub_base(), [10], 1, 1, 0)


def test_scaling_rejects_unordered_or_small_n():
    with pytest.raises(UsageError):
        scaling_study(stub_base(), [10, 5], 1, 1, 0)
    with pytest.raises(UsageError):
        scaling_study(stub_base(), [1, 5], 1, 1, 0)


def test_scaling_zero_converged_cell_fails_loudly():
    base = snr_config(n=5, max_iterations=1, stop_rule=StopCriterion.alpha_threshold(1.0))
    with pytest.raises(ExperimentError) as info:
        scaling_study(base, [5, 10], 2, 1, 0)
    assert info.value.cell == {"N": 5, "channel": 0}


def test_scaling_snr_small():
    res = scaling_study(snr_config(n=10), [10, 20, 40], 4, 3, 1, workers=1)
    assert res.fit.slope > 0
    assert sum(res.non_converged) == 0
    assert res.summaries[-1].condition == "fit"


# async_sweep
# -----------

def test_async_rho_100_is_sync():
    base = snr_config(n=15, seed=3)
    sweep = async_sweep(base, [100], 6, 5, workers=1)
    sync = monte_carlo_convergence(base, 6, 5, workers=1)
    assert sweep.hit_times[100.0] == sync.hit_times


def test_async_common_random_numbers():
    base = snr_config(n=15, seed=3)
    sweep = async_sweep(base, [50, 100], 6, 5, objective_factory=snr_factory, workers=1)
    assert [r.seed for r in sweep.records[:6]] == [r.seed for r in sweep.records[6:]]
    mean, se = sweep.paired_difference(50.0, 100.0)
    assert se > 0


def test_async_rejects_bad_rho():
    with pytest.raises(UsageError):
        async_sweep(snr_config(), [0, 50], 2, 0)
    with pytest.raises(UsageError):
        async_sweep(snr_config(), [150], 2, 0)


def test_async_budget_scales_with_p():
    base = snr_config(n=10)
    sweep = async_sweep(base, [25, 100], 2, 0, workers=1)
    assert all(h is not None for h in sweep.hit_times[25.0])


# improvement_probability_estimate
# --------------------------------

def test_improvement_zero_at_maximizer():
    cfg = snr_config(n=10)
    assert improvement_probability_estimate(np.zeros(10), cfg, 2000, 0) == 0.0


def test_improvement_two_transmitters():
    # at exact cancellation f(theta + d) = 4 sin^2((d2 - d1) / 2) > 0 whenever d1 != d2,
    # so every synchronous draw improves; with p = 1/2 only the all-masked quarter fails
    obj = SnrObjective(ChannelRealization([1.0, 1.0], [0.0, 0.0]))
    cfg = SearchConfig(obj, PerturbationModel.symmetric(5 * DEG))
    theta = PhaseState([0.0, PI])
    sync = improvement_probability_estimate(theta, cfg, 10_000, 1)
    assert sync == 1.0
    async_cfg = cfg.with_(schedule=UpdateSchedule.asynchronous(0.5))
    asyn = improvement_probability_estimate(theta, async_cfg, 10_000, 1)
    se = math.sqrt(0.75 * 0.25 / 10_000)
    assert 0.0 < asyn <= sync + 3 * se
    assert asyn == pytest.approx(0.75, abs=4 * se)


def test_improvement_strictly_between_away_from_cancellation():
    cfg = snr_config(n=30, seed=8)
    theta = np.random.default_rng(3).uniform(-PI, PI, 30)
    sync = improvement_probability_estimate(theta, cfg, 10_000, 4)
    asyn = improvement_probability_estimate(theta, cfg.with_(schedule=UpdateSchedule.asynchronous(0.5)), 10_000, 4)
    assert 0.0 < sync < 1.0
    assert 0.0 < asyn < 1.0


def test_improvement_matches_loop_oracle():
    cfg = snr_config(n=8, seed=5, schedule=UpdateSchedule.asynchronous(0.4))
    theta = np.random.default_rng(2).uniform(-PI, PI, 8)
    est = improvement_probability_estimate(theta, cfg, 500, 7)
    rng = np.random.default_rng(7)
    d = cfg.perturbation.draw(rng, 8, size=500)
    m = cfg.schedule.draw(rng, 8, size=500)
    f0 = cfg.objective.evaluate(theta)
    wins = sum(cfg.objective.evaluate(theta + dd * mm) > f0 for dd, mm in zip(d, m))
    assert est == wins / 500


# CSV output
# ----------

def test_runs_and_summary_csv():
    res = monte_carlo_convergence(snr_config(n=8), 3, 0, workers=1)
    buf = io.StringIO()
    assert write_runs_csv(res.records(8, 100.0), buf) == 3
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(RUNS_COLUMNS)
    assert len(lines) == 4
    buf = io.StringIO()
    write_summary_csv([summarize("x", [1, 2, None])], buf)
    header, row = buf.getvalue().splitlines()
    assert header == ",".join(SUMMARY_COLUMNS)
    assert row.startswith("x,2,1,0.6666666666666666,1.5,")


def test_summarize_empty():
    s = summarize("none", [None, None])
    assert (s.count, s.non_converged, s.mean, s.convergence_fraction) == (0, 2, None, 0.0)

"""
Acceptance criteria. Each test prints one PASS/FAIL line in the
"acceptance criteria" section of the pytest summary.

    pytest tests/test_acceptance.py -v
"""

import cmath
import math

import numpy as np
import pytest

from beamsearch.cli import main
from beamsearch.experiments import (
    async_sweep,
    improvement_probability_estimate,
    monte_carlo_convergence,
    scaling_study,
    snr_factory,
)
from beamsearch.model import (
    ChannelRealization,
    ModPiQuadraticObjective,
    PerturbationModel,
    PhaseState,
    SnrObjective,
    TransformedObjective,
    UpdateSchedule,
    evaluate_mod_quadratic,
    evaluate_snr,
    sample_channels,
    snr_global_max,
)
from beamsearch.search import SearchConfig, StopCriterion, run

PI = math.pi
DELTA0 = math.radians(5.0)
ALPHA = 0.9
N = 200
RUNS = 50
SEED = 2024


def setup_config(objective, perturbation=None, rho=100, **kw):
    """Simulation setup: identity transform, U[-5 deg, 5 deg]^N, alpha = 0.9, budget 200 N / p."""
    return SearchConfig(
        objective,
        perturbation or PerturbationModel.symmetric(DELTA0),
        UpdateSchedule.from_rho(rho),
        stop_rule=StopCriterion.alpha_threshold(ALPHA),
        **kw,
    )


def convergence_line(res, budget):
    hits = [h for h in res.hit_times if h is not None]
    tail = f", mean hit {np.mean(hits):.0f}, max {max(hits)}" if hits else ""
    return f"fraction {res.final_convergence_fraction:.2f} of {res.runs} runs within {budget}{tail}"


@pytest.mark.criterion("1 monotone traces")
def test_monotone_traces(criterion):
    n = 20
    objectives = {"snr": SnrObjective(sample_channels(n, 1)), "modpi": ModPiQuadraticObjective(n)}
    measures = {
        "symmetric": PerturbationModel.symmetric(DELTA0),
        "shifted-independent": PerturbationModel.random_shift(DELTA0, n, 2),
        "shifted-common": PerturbationModel.random_shift(DELTA0, n, 3, common=True),
    }
    schedules = {"sync": UpdateSchedule.synchronous(), "async50": UpdateSchedule.asynchronous(0.5)}
    bad, total, seed = [], 0, 0
    for oname, obj in objectives.items():
        for mname, model in measures.items():
            for sname, sched in schedules.items():
                cfg = SearchConfig(obj, model, sched, halt_on_hit=False, max_iterations=2000)
                for _ in range(9):
                    tr = run(cfg, seed)
                    seed += 1
                    total += 1
                    v, acc = tr.values, tr.accepted
                    kept = acc[1:]
                    same = v[1:].view(np.uint64) == v[:-1].view(np.uint64)
                    ok = (
                        not acc[0]
                        and np.all(v[1:][kept] > v[:-1][kept])
                        and np.all(same[~kept])
                        and obj.evaluate(tr.final_state) == v[-1]
                    )
                    if not ok:
                        bad.append((oname, mname, sname, seed - 1))
    criterion.check(total >= 100 and not bad, f"{total} runs over 12 combinations, {len(bad)} violations")


@pytest.mark.criterion("2 convergence, SNR, N=200")
def test_convergence_snr(criterion):
    cfg = setup_config(SnrObjective(sample_channels(N, SEED)))
    res = monte_carlo_convergence(cfg, RUNS, SEED, keep_traces=False)
    assert cfg.budget == 200 * N
    criterion.check(res.final_convergence_fraction == 1.0, convergence_line(res, cfg.budget))


@pytest.mark.criterion("3 convergence, modulo-quadratic objective, N=200")
def test_convergence_modpi(criterion):
    obj = ModPiQuadraticObjective(N)
    assert obj.global_max_value == pytest.approx(N * (PI / 2) ** 2, rel=1e-15)
    cfg = setup_config(obj)
    res = monte_carlo_convergence(cfg, RUNS, SEED, keep_traces=False)
    criterion.check(res.final_convergence_fraction == 1.0, convergence_line(res, cfg.budget))


@pytest.mark.criterion("4 convergence, asymmetric measure (independent per-coordinate shift), N=200")
def test_convergence_shifted(criterion):
    model = PerturbationModel.random_shift(DELTA0, N, SEED)
    assert model.dimension == N and np.all(np.abs(model.shift) < DELTA0 / 2)
    cfg = setup_config(SnrObjective(sample_channels(N, SEED)), model)
    res = monte_carlo_convergence(cfg, RUNS, SEED, keep_traces=False)
    assert res.origin_interior is True
    best = max(res.final_values) / cfg.objective.global_max_value
    criterion.check(
        res.final_convergence_fraction == 1.0,
        convergence_line(res, cfg.budget) + f"; best final f/f* = {best:.3f}",
    )


@pytest.mark.criterion("4b convergence, asymmetric measure (one shift shared by all coordinates), N=200")
def test_convergence_shifted_common(criterion):
    model = PerturbationModel.random_shift(DELTA0, N, SEED, common=True)
    assert abs(float(model.shift)) < DELTA0 / 2
    cfg = setup_config(SnrObjective(sample_channels(N, SEED)), model)
    res = monte_carlo_convergence(cfg, RUNS, SEED, keep_traces=False)
    assert res.origin_interior is True
    criterion.check(res.final_convergence_fraction == 1.0, convergence_line(res, cfg.budget))


@pytest.mark.criterion("5 linear scaling of hitting time in N")
@pytest.mark.parametrize("rho", [100, 50])
def test_linear_scaling(criterion, rho):
    base = setup_config(SnrObjective(sample_channels(25, SEED)), rho=rho)
    res = scaling_study(base, [25, 50, 100, 150, 200], 20, 5, SEED, objective_factory=snr_factory)
    fit = res.fit
    means = ", ".join(f"{n}:{m:.0f}" for n, m in zip(res.n_values, res.mean_hit_times))
    criterion.check(
        fit.r_squared >= 0.95 and fit.slope > 0 and sum(res.non_converged) == 0,
        f"rho={rho}: r2={fit.r_squared:.4f} slope={fit.slope:.2f} intercept={fit.intercept:.0f} "
        f"means [{means}] non-converged {sum(res.non_converged)}",
    )


@pytest.mark.criterion("6 asynchronous ordering rho=100 <= 75 <= 50 <= 25, N=100")
def test_async_ordering(criterion):
    base = setup_config(SnrObjective(sample_channels(100, SEED)))
    res = async_sweep(base, [100, 75, 50, 25], RUNS, SEED, objective_factory=snr_factory)
    parts, ok = [], True
    for faster, slower in [(100.0, 75.0), (75.0, 50.0), (50.0, 25.0)]:
        # paired under common random numbers: same channel, start and perturbations
        diff, se = res.paired_difference(faster, slower)
        holds = diff <= 3 * se
        ok &= holds
        parts.append(f"mean({faster:g})-mean({slower:g})={diff:.0f} (SE {se:.0f}, {diff / se:+.1f} SE)")
    counts = all(res.summaries[r].count == RUNS for r in res.rho_values)
    means = ", ".join(f"{r:g}:{res.means[r]:.0f}" for r in res.rho_values)
    criterion.check(ok and counts, f"means [{means}]; " + "; ".join(parts))


@pytest.mark.criterion("7 improvement probability positive off the convergence region, N=50")
def test_improvement_probability(criterion):
    n = 50
    obj = SnrObjective(sample_channels(n, SEED))
    rng = np.random.default_rng(SEED)
    states = []
    while len(states) < 20:
        theta = PhaseState.uniform(n, rng)
        if obj.evaluate(theta) < ALPHA * obj.global_max_value:
            states.append(theta)
    lows = {}
    for rho in (100, 50):
        cfg = setup_config(obj, rho=rho)
        est = [improvement_probability_estimate(t, cfg, 10_000, rng) for t in states]
        lows[rho] = min(est)
    criterion.check(
        all(v > 0 for v in lows.values()),
        f"20 states, 10^4 samples each; min estimate sync={lows[100]:.4f}, rho=50%={lows[50]:.4f}",
    )


@pytest.mark.criterion("8 one-bit invariance under a strictly increasing transform, N=50")
def test_one_bit_invariance(criterion):
    n = 50
    obj = SnrObjective(sample_channels(n, SEED))
    cubed = TransformedObjective(obj, lambda x: x**3, "cube")
    kw = dict(perturbation=PerturbationModel.symmetric(DELTA0), stop_rule=StopCriterion.budget_only(),
              max_iterations=200 * n)
    mismatched = 0
    for seed in range(10):
        a = run(SearchConfig(obj, **kw), seed)
        b = run(SearchConfig(cubed, **kw), seed)
        mismatched += not np.array_equal(a.accepted, b.accepted)
    criterion.check(mismatched == 0, f"10 runs x {200 * n} slots, {mismatched} differing acceptance sequences")


@pytest.mark.criterion("9 analytic oracles")
def test_analytic_oracles(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(1, 65))
        gains = rng.rayleigh(math.sqrt(0.5), n)
        theta = rng.uniform(-4 * PI, 4 * PI, n)
        ps, s2 = rng.uniform(0.01, 100), rng.uniform(0.01, 100)
        obj = SnrObjective(ChannelRealization(gains, np.zeros(n)), ps, s2)
        total = sum(a * cmath.exp(1j * t) for a, t in zip(gains.tolist(), theta.tolist()))
        direct = ps * abs(total) ** 2 / s2
        worst = max(worst, abs(evaluate_snr(theta, obj) - direct) / direct)
    aligned_exact = all(
        snr_global_max(o) == o.evaluate(np.zeros(o.dimension))
        for o in (SnrObjective(sample_channels(k, k), 1.5, 0.3) for k in (1, 2, 17, 200, 1000))
    )
    modpi_ok = all(
        evaluate_mod_quadratic(np.full(k, PI / 2)) == pytest.approx(k * (PI / 2) ** 2, rel=1e-15)
        and ModPiQuadraticObjective(k).evaluate(np.full(k, PI / 2)) == ModPiQuadraticObjective(k).global_max_value
        for k in (1, 2, 50, 200)
    )
    criterion.check(
        worst <= 1e-12 and aligned_exact and modpi_ok,
        f"max rel. error vs complex arithmetic {worst:.2e} over 10^4 tuples; "
        f"global max exact: {aligned_exact}; modulo-quadratic max: {modpi_ok}",
    )


@pytest.mark.criterion("10 reproducible CSV output across worker counts")
def test_reproducibility(criterion, tmp_path, monkeypatch):
    files = {}
    for workers in ("1", "2"):
        monkeypatch.setenv("BEAMSEARCH_WORKERS", workers)
        for kind, extra in [
            ("converge", ["--n", "40", "--runs", "8", "--traces"]),
            ("async-sweep", ["--n", "30", "--runs", "6", "--rho-values", "50,100"]),
            ("scaling", ["--n-values", "10,20", "--runs", "3", "--channels", "2"]),
        ]:
            out = tmp_path / f"{kind}-{workers}"
            assert main([kind, *extra, "--seed", "7", "--out", str(out)]) == 0
            for p in sorted(out.glob("*.csv")):
                files.setdefault((kind, p.name), []).append(p.read_bytes())
    differing = [k for k, v in files.items() if len(v) != 2 or v[0] != v[1]]
    criterion.check(not differing, f"{len(files)} CSV files compared between 1 and 2 workers, {len(differing)} differ")

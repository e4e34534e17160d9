import math

import numpy as np
import pytest

import oracles
from selexfit.energy import EnergyMatrix, best_site_energies, consensus
from selexfit.fit import (
    RESTART_STREAM,
    FitConfig,
    RoundCounts,
    SelexLikelihood,
    _Objective,
    apply_identifiability,
    grid_search,
    initial_layout,
    log_likelihood,
    multi_start_fit,
    nelder_mead,
)
from selexfit.seqcore import count_revcomp_classes, substream
from selexfit.simulate import SimConfig, simulate_selex
from selexfit.thermo import DenominatorEstimate, MCSample, SelexModel, exact_denominator

BICOID = EnergyMatrix.bicoid()


# -- data container -------------------------------------------------------------------


def test_round_counts_merges_reverse_complements():
    data = RoundCounts.from_records([("AACG", 2, 1), ("CGTT", 3, 1), ("ACGT", 1, 2)])
    assert data.rounds == {1: {"AACG": 5}, 2: {"ACGT": 1}}
    assert data.R == 2 and data.k == 4 and data.total(1) == 5


@pytest.mark.parametrize("records", [
    [("ACGT", 0, 1)], [("ACGT", 1, 0)], [("ACGT", 1, 1), ("ACG", 1, 1)], [],
])
def test_round_counts_rejects(records):
    with pytest.raises(ValueError):
        RoundCounts.from_records(records)


# -- likelihood -----------------------------------------------------------------------


def test_uniform_two_type_example():
    data = RoundCounts.from_records([("AC", 3, 1), ("AG", 1, 1)])
    model = SelexModel(EnergyMatrix.zeros(2), (0.0,))
    n = count_revcomp_classes(2)
    denom = DenominatorEstimate.exact(exact_denominator(model, 1, 2))
    assert log_likelihood(model, data, [denom]) == pytest.approx(4 * math.log(1 / n))
    lik = SelexLikelihood(data, 2, denominator="exact")
    assert lik(model) == pytest.approx(4 * math.log(1 / n), rel=1e-12)


def _random_data(rng, k, R, n=30):
    records = []
    for r in range(1, R + 1):
        for _ in range(n):
            records.append(("".join(rng.choice(list("ACGT"), k)), int(rng.integers(1, 5)), r))
    return RoundCounts.from_records(records)


def test_fast_objective_matches_reference_and_oracle():
    rng = np.random.default_rng(0)
    data = _random_data(rng, 5, 3)
    model = SelexModel(EnergyMatrix(-3 * rng.random((3, 4))), (0.5, -0.2, 1.0), 0.03)
    lik = SelexLikelihood(data, 3, denominator="exact")
    denoms = [exact_denominator(model, r, 5) for r in (1, 2, 3)]
    ref = log_likelihood(model, data, denoms)
    want = oracles.log_likelihood(model.matrix.values.tolist(), model.log_tf, 0.03, 5,
                                  list(data.records()))
    assert lik(model) == pytest.approx(ref, rel=1e-11)
    assert ref == pytest.approx(want, rel=1e-11)


def test_mc_objective_matches_reference_with_mc_denominators():
    rng = np.random.default_rng(1)
    data = _random_data(rng, 12, 2)
    sample = MCSample.draw(4000, 12, seed=3)
    model = SelexModel(EnergyMatrix(-4 * rng.random((6, 4))), (1.0, 2.0))
    lik = SelexLikelihood(data, 6, sample=sample)
    denoms = sample.estimate(model)
    assert lik(model) == pytest.approx(log_likelihood(model, data, denoms), rel=1e-11)


def test_gauge_invariance_of_objective():
    rng = np.random.default_rng(2)
    data = _random_data(rng, 10, 3)
    lik = SelexLikelihood(data, 5, mc_sample_size=3000, seed=1)
    model = SelexModel(EnergyMatrix(-4 * rng.random((5, 4))), (1.0, 0.0, 2.0))
    v = model.matrix.values.copy()
    v[2] += 1.7
    shifted = SelexModel(EnergyMatrix(v), tuple(x - 1.7 for x in model.log_tf))
    assert lik(shifted) == pytest.approx(lik(model), rel=1e-9)


def test_objective_is_deterministic():
    rng = np.random.default_rng(3)
    data = _random_data(rng, 10, 2)
    lik = SelexLikelihood(data, 4, mc_sample_size=2000, seed=5)
    model = SelexModel(EnergyMatrix(-rng.random((4, 4))), (0.3, 0.1))
    assert lik(model) == lik(model)
    again = SelexLikelihood(data, 4, mc_sample_size=2000, seed=5)
    assert again(model) == lik(model)


def test_truth_beats_row_permuted_truth():
    truth = SelexModel(BICOID, (8.0, 8.0, 8.0, 8.0))
    wins = 0
    for seed in range(10):
        data = simulate_selex(SimConfig(truth, pool_size=20_000, k=16, sample_per_round=300, seed=seed))
        lik = SelexLikelihood(data, 10, mc_sample_size=5000, seed=seed)
        perm = np.random.default_rng(seed).permutation(10)
        if np.array_equal(perm, np.arange(10)):
            perm = perm[::-1]
        corrupt = SelexModel(EnergyMatrix(BICOID.values[perm]), truth.log_tf)
        wins += lik(truth) >= lik(corrupt)
    assert wins == 10


# -- simplex --------------------------------------------------------------------------


@pytest.mark.parametrize("adaptive", [False, True])
def test_nelder_mead_quadratic(adaptive):
    res = nelder_mead(lambda x: -(x[0] - 3.0) ** 2, [0.0], adaptive=adaptive)
    assert res.converged and abs(res.x[0] - 3.0) < 1e-6


def test_nelder_mead_rosenbrock():
    def f(x):
        return -((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2)

    res = nelder_mead(f, [-1.2, 1.0], ftol=1e-14, xtol=1e-9)
    assert res.converged
    assert np.allclose(res.x, [1.0, 1.0], atol=1e-4)


def test_nelder_mead_non_smooth():
    res = nelder_mead(lambda x: -abs(x[0]), [2.3])
    assert abs(res.x[0]) < 1e-6


def test_nelder_mead_iteration_cap_is_flagged():
    res = nelder_mead(lambda x: -np.sum((x - 1) ** 2), np.zeros(6), max_iter=5)
    assert not res.converged and res.iterations == 5


def test_nelder_mead_avoids_infeasible_region():
    res = nelder_mead(lambda x: -math.inf if x[0] < 0 else -(x[0] - 0.5) ** 2, [2.0])
    assert abs(res.x[0] - 0.5) < 1e-5


# -- multi-start -----------------------------------------------------------------------


def _toy_data():
    truth = SelexModel(EnergyMatrix([[-1.0, 0.0, -2.0, -0.5], [0.0, -1.5, -1.0, -3.0],
                                     [-2.0, -1.0, 0.0, -0.7]]), (0.5,))
    data = simulate_selex(SimConfig(truth, pool_size=5000, k=3, sample_per_round=500, seed=4))
    return truth, data


def test_restarts_one_equals_single_simplex():
    _, data = _toy_data()
    config = FitConfig(l=3, restarts=1, denominator="exact", seed=7, max_iter=3000)
    result = multi_start_fit(data, config)
    lik = SelexLikelihood(data, 3, denominator="exact")
    layout, start = initial_layout(config, data.R, substream(7, RESTART_STREAM, 0))
    res = nelder_mead(_Objective(lik, layout), start, ftol=config.ftol, xtol=config.xtol,
                      max_iter=config.max_iter, adaptive=config.adaptive)
    assert result.traces[0].final_value == res.value
    assert result.traces[0].start == start.tolist()
    expected = apply_identifiability(layout.model(res.x))
    assert result.matrix == expected.matrix
    assert result.log_tf == pytest.approx(expected.log_tf, abs=0)


def test_multi_start_best_and_deterministic():
    _, data = _toy_data()
    config = FitConfig(l=3, restarts=4, denominator="exact", seed=2, max_iter=2000)
    a = multi_start_fit(data, config)
    b = multi_start_fit(data, config)
    assert a.log_likelihood == b.log_likelihood and a.matrix == b.matrix
    assert a.log_likelihood >= max(t.final_value for t in a.traces) - 1e-9
    assert np.all(a.matrix.values.max(axis=1) == 0.0)
    assert len(a.traces) == 4


def test_multi_start_worker_count_independent():
    _, data = _toy_data()
    config = FitConfig(l=3, restarts=3, denominator="exact", seed=1, max_iter=500)
    a = multi_start_fit(data, config)
    b = multi_start_fit(data, FitConfig(**{**config.to_dict(), "n_jobs": 2}))
    assert a.log_likelihood == b.log_likelihood and a.matrix == b.matrix


def test_polish_does_not_decrease_value():
    _, data = _toy_data()
    base = FitConfig(l=3, restarts=2, denominator="exact", seed=3, max_iter=200)
    plain = multi_start_fit(data, base)
    polished = multi_start_fit(data, FitConfig(**{**base.to_dict(), "polish_rounds": 2}))
    assert polished.log_likelihood >= plain.log_likelihood - 1e-9


def test_fixed_log_tf_fit_recovers_level():
    truth, data = _toy_data()
    config = FitConfig(l=3, restarts=3, fit_log_tf=False, log_tf=(0.5,), denominator="exact",
                       seed=0, max_iter=4000)
    result = multi_start_fit(data, config)
    lik = SelexLikelihood(data, 3, denominator="exact")
    assert result.log_likelihood >= lik(truth) - 1e-6


def test_one_parameter_grid_oracle():
    truth, data = _toy_data()
    free = np.zeros((3, 4), dtype=bool)
    free[1, 2] = True
    fixed = truth.matrix.values
    config = FitConfig(l=3, restarts=5, fit_log_tf=False, log_tf=truth.log_tf, denominator="exact",
                       seed=0, free_cells=tuple(map(tuple, free)),
                       fixed_matrix=tuple(map(tuple, fixed)), init_energy_range=(-5.0, 0.0))
    result = multi_start_fit(data, config)
    lik = SelexLikelihood(data, 3, denominator="exact")

    def objective(x):
        v = fixed.copy()
        v[1, 2] = x[0]
        return lik(SelexModel(EnergyMatrix(v), truth.log_tf))

    _, grid_best = grid_search(objective, -10.0, 5.0)
    assert result.log_likelihood >= grid_best - 1e-3
    assert result.log_likelihood <= grid_best + 1e-3


def test_all_restarts_failing_reports_failure(monkeypatch):
    data = RoundCounts.from_records([("ACG", 1, 1)])
    monkeypatch.setattr(SelexLikelihood, "__call__", lambda self, model: -math.inf)
    config = FitConfig(l=3, restarts=2, denominator="exact", max_iter=5)
    result = multi_start_fit(data, config)
    assert not result.success and result.model is None and len(result.traces) == 2


# -- identifiability --------------------------------------------------------------------


def test_identifiability_examples():
    model = SelexModel(BICOID, (1.0, 2.0))
    out = apply_identifiability(model)
    assert consensus(out.matrix) == "CCCCTAATCC"
    assert out.log_tf == (1.0, 2.0)
    assert apply_identifiability(out).matrix == out.matrix


def test_identifiability_preserves_scores_and_likelihood():
    rng = np.random.default_rng(9)
    data = _random_data(rng, 10, 2)
    lik = SelexLikelihood(data, 6, mc_sample_size=3000, seed=2)
    model = SelexModel(EnergyMatrix(rng.normal(size=(6, 4))), (0.2, -0.4))
    out, shift = apply_identifiability(model, return_shift=True)
    seqs = ["".join(rng.choice(list("ACGT"), 10)) for _ in range(100)]
    assert np.allclose(best_site_energies(out.matrix, seqs) + shift,
                       best_site_energies(model.matrix, seqs), atol=1e-9)
    assert lik(out) == pytest.approx(lik(model), rel=1e-9)
    twice = apply_identifiability(out)
    assert twice.matrix == out.matrix and twice.log_tf == pytest.approx(out.log_tf)


def test_config_validation():
    with pytest.raises(ValueError):
        FitConfig(restarts=0)
    with pytest.raises(ValueError):
        FitConfig(ftol=0)
    with pytest.raises(ValueError):
        FitConfig(fit_log_tf=False)
    with pytest.raises(ValueError):
        FitConfig(denominator="bogus")

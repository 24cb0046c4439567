import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from recbench.errors import ConfigError, DuplicateTrial, InvalidSchedule
from recbench.hpo import (ALGORITHMS, BOHB, GPBO, SMAC, TPE, Anneal, Hyperband, RandomSearch,
                          Trial, hyperband_schedule, make_optimizer, schedule_epochs)
from recbench.hpo.anneal import acceptance_probability
from recbench.hpo.gp import GaussianProcess, expected_improvement, matern52
from recbench.hpo.smac import RandomForest, RegressionTree
from recbench.hpo.tpe import ParzenEstimator, split_good_bad
from recbench.searchspace import ParamSpec, SearchSpace, default_space, sample_uniform

from test_searchspace import spaces

X_STAR = 0.3
LINE = SearchSpace((ParamSpec.float_range("x", 0.0, 1.0),))


def quadratic(config):
    return (config["x"] - X_STAR) ** 2


def drive(opt, objective, limit=None):
    """Sequential suggest/observe loop; returns the (config, budget) sequence."""
    seq = []
    tid = 0
    while not opt.done() and (limit is None or tid < limit):
        config, budget = opt.suggest()
        seq.append((config, budget))
        obj = objective(config, budget) if objective.__code__.co_argcount == 2 else objective(config)
        opt.observe(Trial(tid, config, budget, obj))
        tid += 1
    return seq


# observe / incumbent ------------------------------------------------------------

def test_incumbent_rules():
    opt = RandomSearch(LINE, seed=0)
    opt.observe(Trial(0, {"x": 0.5}, 30, 0.4))
    assert opt.incumbent.trial_id == 0
    opt.observe(Trial(1, {"x": 0.6}, 30, 0.4))
    assert opt.incumbent.trial_id == 0  # ties do not replace
    opt.observe(Trial(2, {"x": 0.7}, 10, 0.1, status="pruned"))
    assert opt.incumbent.trial_id == 0  # pruned trials never become incumbent
    with pytest.raises(DuplicateTrial):
        opt.observe(Trial(1, {"x": 0.1}, 30, 0.2))


def test_incumbent_equals_min_scan():
    rng = np.random.default_rng(1)
    opt = RandomSearch(LINE, seed=1)
    objs = rng.random(50).round(2)  # rounding forces ties
    for k, o in enumerate(objs):
        opt.observe(Trial(k, {"x": 0.0}, 30, float(o)))
    assert opt.incumbent.trial_id == int(np.argmin(objs))
    assert opt.incumbent.objective == objs.min()


def test_trial_validation():
    with pytest.raises(ValueError):
        Trial(0, {}, 30, 1.5)
    with pytest.raises(ValueError):
        Trial(0, {}, 30, 0.5, status="running")


# random search ------------------------------------------------------------------

def test_random_search_valid_deterministic_full_budget():
    space = default_space("neumf")
    a, b = RandomSearch(space, seed=4, trials=10_000), RandomSearch(space, seed=4, trials=10_000)
    for _ in range(10_000):
        cfg, budget = a.suggest()
        space.validate(cfg)
        assert budget == 30
    assert [RandomSearch(space, seed=4).suggest() for _ in range(3)] == \
           [RandomSearch(space, seed=4).suggest() for _ in range(3)]
    assert b.suggest() == RandomSearch(space, seed=4).suggest()


# anneal -------------------------------------------------------------------------

def test_acceptance_probability():
    assert acceptance_probability(0.7, 0.7) == pytest.approx(math.exp(-1), abs=1e-15)
    assert acceptance_probability(-0.1, 1e-9) == 1.0
    assert acceptance_probability(0.0, 1.0) == 1.0


def test_anneal_schedule_constants():
    opt = Anneal(LINE, seed=0)
    assert opt.step_size(0) == 0.2
    assert opt.step_size(3) == pytest.approx(0.2 * 0.95 ** 3)
    assert opt.temperature(2) == pytest.approx(0.81)  # T0 is 1 before five objectives exist
    for k, o in enumerate([0.1, 0.2, 0.3, 0.4, 0.5]):
        opt.observe(Trial(k, {"x": 0.5}, 30, o))
    assert opt.t0 == pytest.approx(np.std([0.1, 0.2, 0.3, 0.4, 0.5], ddof=1))


def test_anneal_quadratic_screen():
    wins = 0
    for seed in range(100):
        opt = Anneal(LINE, seed=seed, trials=40)
        xs = np.array([c["x"] for c, _ in drive(opt, quadratic)])
        err = np.abs(xs - X_STAR)
        wins += err[-10:].mean() < err[:10].mean()
    assert wins >= 90, wins


# TPE ----------------------------------------------------------------------------

def test_good_bad_split_sizes():
    trials = [Trial(k, {"x": 0.0}, 30, k / 20) for k in range(20)]
    good, bad = split_good_bad(trials)
    assert len(good) == 5 and len(bad) == 15
    assert len(split_good_bad(trials[:1])[0]) == 1


def test_categorical_parzen_probabilities():
    space = SearchSpace((ParamSpec.categorical("c", ["A", "B"]),))
    est = ParzenEstimator(space, [{"c": "A"}] * 3 + [{"c": "B"}])
    assert est.categorical_probs(0) == pytest.approx([4 / 6, 2 / 6], abs=1e-15)


def test_parzen_density_positive_and_normalized():
    est = ParzenEstimator(LINE, [{"x": v} for v in (0.0, 0.01, 0.99)])
    grid = np.linspace(0, 1, 20001)
    dens = np.exp([est.logpdf(np.array([g])) for g in grid])
    assert np.all(dens > 0)
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def _tpe_hits(seed):
    rng = np.random.default_rng(10_000 + seed)
    opt = TPE(LINE, seed=seed)
    for k in range(50):
        x = float(rng.random())
        opt.observe(Trial(k, {"x": x}, 30, quadratic({"x": x})))
    return abs(opt.suggest()[0]["x"] - X_STAR) < 0.15


def test_tpe_quadratic_screen():
    hits = sum(_tpe_hits(seed) for seed in range(100))
    assert hits >= 80, hits


# GP / EI ------------------------------------------------------------------------

def _dense_oracle(x, y, xq, ell, jitter):
    k = matern52(x, x, ell) + jitter * np.eye(len(x))
    ks = matern52(xq, x, ell)
    mean = ks @ np.linalg.solve(k, y)
    var = 1.0 - np.einsum("ij,ji->i", ks, np.linalg.solve(k, ks.T))
    return mean, np.maximum(var, 0.0)


@pytest.mark.parametrize("seed", range(10))
def test_gp_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((3, 1))
    y = rng.normal(size=3)
    xq = np.linspace(0, 1, 25)[:, None]
    gp = GaussianProcess().fit(x, y)
    mean, var = gp.predict(xq)
    om, ov = _dense_oracle(x, y, xq, gp.lengthscale, gp.jitter)
    assert np.max(np.abs(mean - om)) <= 1e-8
    assert np.max(np.abs(var - ov)) <= 1e-8


def test_gp_lengthscale_maximizes_lml():
    rng = np.random.default_rng(0)
    x, y = rng.random((6, 2)), rng.normal(size=6)
    chosen = GaussianProcess().fit(x, y)
    for ell in (0.1, 0.2, 0.5, 1.0):
        assert GaussianProcess([ell]).fit(x, y).log_marginal_likelihood <= chosen.log_marginal_likelihood


def test_gp_interpolates_and_reverts_to_prior():
    x = np.array([[0.1], [0.5], [0.9]])
    y = np.array([1.0, -0.5, 0.3])
    gp = GaussianProcess().fit(x, y)
    mean, var = gp.predict(x)
    assert np.allclose(mean, y, atol=1e-5) and np.all(var <= 1e-4)
    mean, var = gp.predict(np.array([[80.0]]))
    assert abs(mean[0]) < 1e-8 and var[0] == pytest.approx(1.0, abs=1e-8)


def test_gp_variance_nonnegative_everywhere():
    rng = np.random.default_rng(5)
    x = rng.random((12, 3))
    gp = GaussianProcess().fit(x, rng.normal(size=12))
    _, var = gp.predict(np.vstack([x, rng.random((500, 3))]))
    assert np.all(var >= 0)


def test_expected_improvement_spot_values():
    for s in (0.1, 1.0, 2.5):
        assert expected_improvement(0.4, s, 0.4, xi=0.0) == pytest.approx(0.39894 * s, abs=1e-5)
    # 0.1 * Phi(1) + 0.1 * phi(1) = 0.1083315...
    assert expected_improvement(0.4, 0.1, 0.5, xi=0.0) == pytest.approx(0.10833, abs=1e-5)
    assert expected_improvement(0.4, 0.1, 0.5, xi=0.0) == pytest.approx(
        0.1 * stats.norm.cdf(1) + 0.1 * stats.norm.pdf(1), abs=1e-12)
    assert expected_improvement(0.6, 0.0, 0.5) == 0.0
    assert expected_improvement(0.2, 0.0, 0.5, xi=0.0) == pytest.approx(0.3)


def test_expected_improvement_nonnegative():
    rng = np.random.default_rng(0)
    ei = expected_improvement(rng.normal(size=1000), rng.random(1000) * 2, 0.0)
    assert np.all(ei >= 0)


def test_gpbo_acquire_equals_scan_oracle():
    rng = np.random.default_rng(3)
    x, y = rng.random((8, 2)), rng.normal(size=8)
    gp = GaussianProcess().fit(x, y)
    cands = rng.random((300, 2))
    opt = GPBO(SearchSpace((ParamSpec.float_range("a", 0, 1), ParamSpec.float_range("b", 0, 1))))
    best_val, best_idx = -1.0, None
    for k, c in enumerate(cands):
        m, v = gp.predict(c[None, :])
        sd = math.sqrt(v[0])
        imp = y.min() - m[0] - 0.01
        val = max(imp * stats.norm.cdf(imp / sd) + sd * stats.norm.pdf(imp / sd), 0.0) if sd > 0 else max(imp, 0.0)
        if val > best_val:
            best_val, best_idx = val, k
    assert opt.acquire(gp, cands, float(y.min())) == best_idx


def test_gpbo_all_categorical_space():
    space = SearchSpace((ParamSpec.categorical("c", [64, 128, 256, 512]),))
    opt = GPBO(space, seed=0, trials=12)
    for cfg, _ in drive(opt, lambda c: {64: 0.5, 128: 0.2, 256: 0.3, 512: 0.9}[c["c"]]):
        space.validate(cfg)


# SMAC ---------------------------------------------------------------------------

def test_smac_constant_history_picks_first_pool_entry():
    opt = SMAC(LINE, seed=0)
    for k in range(8):
        opt.observe(Trial(k, {"x": k / 10}, 30, 0.5))
    # replay the rng to recover the pool the optimizer will build
    clone = SMAC(LINE, seed=0)
    clone.rng = np.random.default_rng(0)
    opt.rng = np.random.default_rng(0)
    RandomForest(clone.rng).fit(np.arange(8.0)[:, None] / 10, np.zeros(8))
    pool = clone.candidate_pool(opt.history)
    assert opt.suggest()[0] == pool[0]


def test_tree_predictions_within_training_range():
    rng = np.random.default_rng(0)
    x, y = rng.random((40, 3)), rng.normal(size=40)
    tree = RegressionTree(rng, 2).fit(x, y)
    pred = tree.predict(rng.random((500, 3)) * 3 - 1)
    assert pred.min() >= y.min() and pred.max() <= y.max()
    forest = RandomForest(rng).fit(x, y)
    for t, (tx, ty) in zip(forest.trees, forest.tree_data):
        p = t.predict(rng.random((100, 3)))
        assert p.min() >= ty.min() and p.max() <= ty.max()


def test_tree_leaves_respect_min_size():
    rng = np.random.default_rng(1)
    x, y = rng.random((30, 2)), rng.normal(size=30)
    tree = RegressionTree(rng, 2).fit(x, y)
    leaves = {}
    for row in x:
        node = 0
        while tree.feature[node] >= 0:
            node = tree.left[node] if row[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        leaves[node] = leaves.get(node, 0) + 1
    assert min(leaves.values()) >= 3


def test_smac_quadratic_screen():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(20_000 + seed)
        opt = SMAC(LINE, seed=seed)
        for k in range(50):
            x = float(rng.random())
            opt.observe(Trial(k, {"x": x}, 30, quadratic({"x": x})))
        hits += abs(opt.suggest()[0]["x"] - X_STAR) < 0.2
    assert hits >= 70, hits


# Hyperband / BOHB ---------------------------------------------------------------

def test_hyperband_schedule_table():
    table = [(b.s, [(r.n_configs, r.budget) for r in b.rungs]) for b in hyperband_schedule(5, 30, 3)]
    assert table == [(1, [(3, 10), (1, 30)]), (0, [(2, 30)])]
    assert schedule_epochs(hyperband_schedule(5, 30, 3)) == 3 * 10 + 1 * 20 + 2 * 30


def test_hyperband_degenerate_and_invalid():
    table = hyperband_schedule(30, 30, 2)
    assert len(table) == 1 and [(r.n_configs, r.budget) for r in table[0].rungs] == [(1, 30)]
    for bad in [(5, 30, 1), (31, 30, 3), (0, 30, 3)]:
        with pytest.raises(InvalidSchedule):
            hyperband_schedule(*bad)


@pytest.mark.parametrize("b_min,b_max,eta", [(5, 30, 3), (1, 27, 3), (2, 32, 2), (5, 30, 2)])
def test_hyperband_rungs_follow_recurrence(b_min, b_max, eta):
    for bracket in hyperband_schedule(b_min, b_max, eta):
        for a, b in zip(bracket.rungs, bracket.rungs[1:]):
            assert b.n_configs == a.n_configs // eta
            assert b.budget == min(a.budget * eta, b_max)
        assert all(b_min <= r.budget <= b_max for r in bracket.rungs)


def _ledger(seq):
    """Epochs charged when each config resumes from its previous budget."""
    trained = {}
    total = 0
    for config, budget in seq:
        key = tuple(sorted(config.items()))
        total += budget - trained.get(key, 0)
        trained[key] = budget
    return total


@pytest.mark.parametrize("cls", [Hyperband, BOHB])
def test_hyperband_epoch_accounting_and_promotion(cls):
    opt = cls(LINE, seed=2, trials=20)
    seq = drive(opt, lambda c, b: quadratic(c) + 0.1 / b)
    assert all(5 <= b <= 30 for _, b in seq)
    assert opt.epochs_consumed == _ledger(seq)
    assert opt.epochs_consumed >= 600
    assert opt.epochs_consumed == opt.schedules_done * 110
    # bracket s=1: three configs at 10 epochs, the best of them continues to 30
    first, promoted = seq[:3], seq[3]
    best = min(first, key=lambda cb: (quadratic(cb[0]) + 0.01))
    assert promoted == (best[0], 30)


def test_bohb_model_budget_threshold():
    space = default_space("bprmf")  # d = 4
    opt = BOHB(space, seed=0)
    rng = np.random.default_rng(0)
    assert opt.model_budget() is None
    opt.propose()
    assert opt.last_draw == "random"
    for k in range(6):
        opt.history.append(Trial(k, sample_uniform(space, rng), 10, 0.5))
    for k in range(6, 8):
        opt.history.append(Trial(k, sample_uniform(space, rng), 30, 0.5))
    assert opt.model_budget() == 10


def test_bohb_random_fraction():
    opt = BOHB(LINE, seed=7)
    rng = np.random.default_rng(0)
    for k in range(10):
        x = float(rng.random())
        opt.history.append(Trial(k, {"x": x}, 30, quadratic({"x": x})))
    draws = []
    for _ in range(300):
        opt.propose()
        draws.append(opt.last_draw)
    frac = draws.count("random") / 300
    assert abs(frac - 1 / 3) <= 0.08, frac


# all optimizers -----------------------------------------------------------------

def test_make_optimizer():
    assert isinstance(make_optimizer("hyperband", LINE, 0, eta=2), Hyperband)
    with pytest.raises(ConfigError):
        make_optimizer("cmaes", LINE, 0)
    with pytest.raises(ConfigError):
        make_optimizer("tpe", LINE, 0, bogus=1)


@pytest.mark.parametrize("algorithm", sorted(ALGORITHMS))
def test_determinism_given_identical_observations(algorithm):
    space = default_space("bprmf")

    def objective(c, b):
        return min(1.0, abs(math.log10(c["lr"]) + 2.5) / 3 + c["num_ng"] / 100 + 1 / b)

    runs = [drive(make_optimizer(algorithm, space, seed=11, trials=8), objective, limit=40)
            for _ in range(2)]
    assert runs[0] == runs[1]
    other = drive(make_optimizer(algorithm, space, seed=12, trials=8), objective, limit=40)
    assert other != runs[0]


@settings(max_examples=25, deadline=None)
@given(spaces(), st.sampled_from(sorted(ALGORITHMS)), st.integers(0, 2**16))
def test_every_suggestion_validates(space, algorithm, seed):
    opt = make_optimizer(algorithm, space, seed=seed, trials=8)
    rng = np.random.default_rng(seed)
    for cfg, budget in drive(opt, lambda c, b: float(rng.random()), limit=12):
        space.validate(cfg)
        assert 5 <= budget <= 30

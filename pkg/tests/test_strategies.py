import numpy as np
import pytest

from plebo import gp
from plebo.acquisition import base_acquisition
from plebo.errors import ConfigError, NoUnobservedPoints
from plebo.schema import AcquisitionSpec, CandidateSet, HyperParams, HyperPrior, StrategyConfig, StrategyKind
from plebo.strategies import (
    StrategyState, argmax_random_tie, build_transfer_pool, extract_initial_points, fit_shared, propose_next,
)

THETA = HyperParams(lengthscale=0.2, signal_variance=1.0)


def lattice(side=6):
    g = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])


def surface(grid, rng):
    K = gp.gram(gp.Dataset(X=grid, y=np.zeros(len(grid))), THETA)
    return np.linalg.cholesky(K + 1e-9 * np.eye(len(grid))) @ rng.standard_normal(len(grid))


def run(cfg, grid, values, starts, steps, seed):
    rng = np.random.default_rng(seed)
    state = StrategyState()
    for i in starts:
        state.observe(i, values[i])
    chosen = []
    for _ in range(steps):
        idx = propose_next(cfg, state, grid, rng)
        chosen.append(idx)
        state.observe(idx, values[idx])
    return chosen, state


def all_configs(tuning):
    eta = HyperPrior(l_shape=5, l_scale=0.04, v_shape=2, v_scale=0.5)
    return [
        StrategyConfig(kind=StrategyKind.RANDOM_SEARCH),
        StrategyConfig(kind=StrategyKind.EI, fit_restarts=2),
        StrategyConfig(kind=StrategyKind.UCB, fit_restarts=2),
        StrategyConfig(kind=StrategyKind.GAMMA, eta_mean=eta, fit_restarts=2),
        StrategyConfig(kind=StrategyKind.SHARED, shared_theta=THETA),
        StrategyConfig(kind=StrategyKind.TRUE_PLEBO, true_theta=THETA),
        StrategyConfig(kind=StrategyKind.PLEBO, candidates=CandidateSet(thetas=[THETA, THETA.model_copy(update={"lengthscale": 0.5})])),
        StrategyConfig(kind=StrategyKind.INITIAL, initial_points=extract_initial_points(tuning), fit_restarts=2),
        StrategyConfig(kind=StrategyKind.DIRECT_TRANS, transfer_pool=build_transfer_pool(tuning, 12, np.random.default_rng(0)), fit_restarts=2),
    ]


@pytest.fixture
def task(rng):
    grid = lattice()
    return grid, surface(grid, rng)


@pytest.fixture
def tuning(rng):
    grid = lattice()
    out = []
    for _ in range(3):
        idx = rng.choice(len(grid), 5, replace=False)
        out.append(gp.Dataset(X=grid[idx], y=surface(grid, rng)[idx]))
    return out


class TestArgmax:
    def test_unique_max(self, rng):
        assert argmax_random_tie(np.array([0.1, 0.9, 0.3]), rng) == 1

    def test_ties_use_rng(self):
        scores = np.array([1.0, 0.0, 1.0, 1.0 - 1e-13])
        picks = {argmax_random_tie(scores, np.random.default_rng(s)) for s in range(50)}
        assert picks == {0, 2, 3}


class TestProposeNext:
    def test_random_search_seeded(self):
        grid = np.array([[0.0], [0.5], [1.0]])
        state = StrategyState(indices=[1], values=[0.0])
        cfg = StrategyConfig(kind=StrategyKind.RANDOM_SEARCH)
        a = propose_next(cfg, state, grid, np.random.default_rng(3))
        state2 = StrategyState(indices=[1], values=[0.0])
        b = propose_next(cfg, state2, grid, np.random.default_rng(3))
        assert a == b and a in {0, 2}

    def test_never_repeats_and_deterministic(self, task, tuning):
        grid, values = task
        for cfg in all_configs(tuning):
            a, state = run(cfg, grid, values, [0, 7], 6, seed=11)
            b, _ = run(cfg, grid, values, [0, 7], 6, seed=11)
            assert a == b, cfg.kind
            assert len(set(state.indices)) == len(state.indices)
            assert state.iteration == 6

    def test_exhausted_grid(self):
        grid = np.array([[0.0], [1.0]])
        state = StrategyState(indices=[0, 1], values=[0.0, 1.0])
        with pytest.raises(NoUnobservedPoints):
            propose_next(StrategyConfig(kind=StrategyKind.RANDOM_SEARCH), state, grid, np.random.default_rng(0))

    def test_missing_field(self):
        with pytest.raises(ConfigError):
            StrategyConfig(kind=StrategyKind.PLEBO)

    def test_true_plebo_matches_single_candidate_plebo(self, task):
        grid, values = task
        true = StrategyConfig(kind=StrategyKind.TRUE_PLEBO, true_theta=THETA)
        plebo = StrategyConfig(kind=StrategyKind.PLEBO, candidates=CandidateSet(thetas=[THETA]))
        assert run(true, grid, values, [3, 20], 5, seed=4)[0] == run(plebo, grid, values, [3, 20], 5, seed=4)[0]

    def test_plebo_candidate_order_irrelevant(self, task):
        grid, values = task
        thetas = [THETA, HyperParams(lengthscale=0.5, signal_variance=2.0), HyperParams(lengthscale=0.1, signal_variance=0.5)]
        a = StrategyConfig(kind=StrategyKind.PLEBO, candidates=CandidateSet(thetas=thetas))
        b = StrategyConfig(kind=StrategyKind.PLEBO, candidates=CandidateSet(thetas=thetas[::-1]))
        assert run(a, grid, values, [5, 9], 4, seed=2)[0] == run(b, grid, values, [5, 9], 4, seed=2)[0]

    def test_ei_picks_brute_force_argmax(self, task):
        grid, values = task
        state = StrategyState()
        for i in [1, 14, 30]:
            state.observe(i, values[i])
        cfg = StrategyConfig(kind=StrategyKind.SHARED, shared_theta=THETA)
        idx = propose_next(cfg, state, grid, np.random.default_rng(0))
        D = gp.Dataset(X=grid[[1, 14, 30]], y=values[[1, 14, 30]])
        scores = base_acquisition(D, THETA, grid, AcquisitionSpec(kind="EI"), float(D.y.max()))
        scores[[1, 14, 30]] = -np.inf
        assert idx == int(np.argmax(scores))

    def test_fixed_theta_strategies_never_fit(self, task):
        grid, values = task
        for cfg in [StrategyConfig(kind=StrategyKind.SHARED, shared_theta=THETA),
                    StrategyConfig(kind=StrategyKind.TRUE_PLEBO, true_theta=THETA)]:
            _, state = run(cfg, grid, values, [0, 1, 2], 5, seed=0)
            assert state.fit_calls == 0

    def test_refit_every(self, task):
        grid, values = task
        cfg = StrategyConfig(kind=StrategyKind.EI, refit_every=3, fit_restarts=1)
        _, state = run(cfg, grid, values, [0, 10, 20], 6, seed=0)
        assert state.fit_calls == 2

    def test_initial_replays_points(self, rng):
        grid = lattice()
        tuning = [
            gp.Dataset(X=grid[[0, 5]], y=[1.0, 4.0]),
            gp.Dataset(X=grid[[12, 30]], y=[9.0, 2.0]),
            gp.Dataset(X=grid[[35, 7]], y=[-1.0, 0.5]),
        ]
        cfg = StrategyConfig(kind=StrategyKind.INITIAL, initial_points=extract_initial_points(tuning))
        chosen_a, _ = run(cfg, grid, surface(grid, rng), [], 3, seed=0)
        chosen_b, _ = run(cfg, grid, surface(grid, rng), [], 3, seed=0)
        assert chosen_a == chosen_b == [12, 5, 7]
        for idx, point in zip(chosen_a, cfg.initial_points):
            np.testing.assert_allclose(grid[idx], point)

    def test_empty_start_uses_prior(self, task):
        grid, values = task
        chosen, _ = run(StrategyConfig(kind=StrategyKind.EI), grid, values, [], 2, seed=1)
        assert len(set(chosen)) == 2


class TestFitShared:
    def test_single_task_matches_fit_map(self, rng, make_dataset):
        D = make_dataset(rng, 10)
        shared = fit_shared([D], restarts=3, rng=np.random.default_rng(8))
        single = gp.fit_map(D, restarts=3, rng=np.random.default_rng(8))
        assert gp.log_marginal_likelihood(D, shared) == pytest.approx(gp.log_marginal_likelihood(D, single), abs=1e-4)

    def test_beats_grid(self, tuning):
        theta = fit_shared(tuning, restarts=10, rng=np.random.default_rng(1))
        objective = lambda t: sum(gp.log_marginal_likelihood(D, t) for D in tuning)
        best = objective(theta)
        box = gp.hyperparameter_box(tuning)
        for l in np.exp(np.linspace(*box[0], 20)):
            for v in np.exp(np.linspace(*box[1], 20)):
                assert best >= objective(HyperParams(lengthscale=float(l), signal_variance=float(v))) - 1e-2


class TestTransferPool:
    def datasets(self, sizes, rng):
        return [gp.Dataset(X=rng.uniform(size=(n, 2)), y=rng.normal(size=n)) for n in sizes]

    def test_under_cap_keeps_all(self, rng):
        pool = build_transfer_pool(self.datasets([5] * 10, rng), 100, rng)
        assert pool.n == 50

    def test_equal_strata(self, rng):
        Ds = self.datasets([20] * 10, rng)
        pool = build_transfer_pool(Ds, 100, rng)
        assert pool.n == 100
        for D in Ds:
            assert sum(any(np.array_equal(x, p) for p in pool.X) for x in D.X) == 10

    def test_small_task_taken_whole(self, rng):
        Ds = self.datasets([50, 30, 2], rng)
        pool = build_transfer_pool(Ds, 30, np.random.default_rng(0))
        counts = [sum(any(np.array_equal(x, p) for p in pool.X) for x in D.X) for D in Ds]
        assert counts == [14, 14, 2]

    def test_deterministic(self, rng):
        Ds = self.datasets([20, 20, 20], rng)
        a = build_transfer_pool(Ds, 10, np.random.default_rng(5))
        b = build_transfer_pool(Ds, 10, np.random.default_rng(5))
        np.testing.assert_array_equal(a.X, b.X)


class TestInitialPoints:
    def test_single_task(self):
        D = gp.Dataset(X=[[0.1, 0.1], [0.4, 0.6]], y=[1.0, 2.0])
        assert extract_initial_points([D]) == [[0.4, 0.6]]

    def test_descending_order(self):
        a = gp.Dataset(X=[[0.1, 0.1]], y=[3.0])
        b = gp.Dataset(X=[[0.9, 0.9]], y=[7.0])
        assert extract_initial_points([a, b]) == [[0.9, 0.9], [0.1, 0.1]]

    def test_ties_by_task_index(self):
        a = gp.Dataset(X=[[0.1, 0.1]], y=[3.0])
        b = gp.Dataset(X=[[0.9, 0.9]], y=[3.0])
        assert extract_initial_points([a, b]) == [[0.1, 0.1], [0.9, 0.9]]

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from japs.environment import EnvironmentSpec, World
from japs.mnl import Action, augmented_rows
from japs.online import (
    CSV_COLUMNS,
    ConfigError,
    OnlineConfig,
    RegretTrace,
    SupCBState,
    config_from_dict,
    load_config,
    read_trace_csv,
    simulate,
)
from japs.online.market import Market
from japs.online.supcb import assortment_uncertainty, exploration_threshold, num_levels
from japs.online.ts import MetropolisSampler, snap_to_grid, uniform_ball
from japs.online.ucb_mle import optimism_multiplier

ALGOS = ("supcb", "ts", "ucb_mle", "uniform")


def run(world, algorithm, T=150, seed=0, **kw):
    return simulate(world, OnlineConfig(T=T, algorithm=algorithm, **kw), np.random.default_rng(seed))


def test_config_from_toml(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('T = 500\nalgorithm = "ucb-mle"\nlambda = 12.5\nprice_grid = [0.0, 1.0, 2.0]\n'
                    "[sampler]\nsteps = 4\nburn_in = 10\n")
    cfg = load_config(path)
    assert cfg.T == 500 and cfg.algorithm == "ucb_mle" and cfg.lam == 12.5
    assert cfg.price_grid == (0.0, 1.0, 2.0)
    assert cfg.mh_steps == 4 and cfg.mh_burn_in == 10
    assert cfg.delta == pytest.approx(1 / 500)
    assert load_config(path, algorithm="ts").algorithm == "ts"


@pytest.mark.parametrize("doc", [{"T": 5, "bogus": 1}, {"T": 5, "lam": 1.0}, {"T": 5, "sampler": {"x": 1}},
                                 {"algorithm": "ts"}, {"T": 0}, {"T": 5, "algorithm": "greedy"},
                                 {"T": 5, "mode": "fixed_assortment"}, {"T": 5, "width_scale": 0}])
def test_config_rejects_bad_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_config_round_trip():
    cfg = OnlineConfig(T=10, algorithm="ts", lam=3.0, fixed_assortment=(3, 1), mode="fixed_assortment")
    assert config_from_dict(cfg.to_dict()) == cfg


def test_num_levels():
    assert num_levels(10_000) == 7
    assert num_levels(1) == 0
    assert num_levels(2000) == 6


def test_uncertainty_zero_widths():
    q = np.array([[0.2, 0.3]])
    assert assortment_uncertainty(np.zeros((1, 2)), np.array([0.5]), q, 9.0)[0] == 0.0


@given(st.lists(st.floats(0, 2), min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 1))
def test_uncertainty_monotone_in_each_width(w, i, bump):
    q = np.array([[0.1, 0.2, 0.3]])
    w = np.array([w])
    up = w.copy()
    up[0, i] += bump
    assert assortment_uncertainty(up, np.array([0.4]), q, 5.0)[0] >= assortment_uncertainty(w, np.array([0.4]), q, 5.0)[0]


def test_bin_growth_never_widens(world):
    state = SupCBState.empty(3, 4, 9.4, 1e-3, 10.0, world.constants.P)
    state.theta0 = world.params.theta
    aug = world.catalog.augmented_table(world.grid)
    rng = np.random.default_rng(0)
    prev = state.item_widths(1, aug)
    for t in range(30):
        act = Action((int(rng.integers(1, 7)),), (float(rng.choice(world.grid)),))
        state.record(1, t, augmented_rows(world.catalog, act), int(rng.integers(0, 2)))
        cur = state.item_widths(1, aug)
        assert np.all(cur <= prev + 1e-12)
        prev = cur


def test_exploit_bin_feeds_no_estimator(world):
    state = SupCBState.empty(2, 4, 9.4, 1e-3, 10.0, world.constants.P)
    state.record(0, 1, augmented_rows(world.catalog, Action((1,), (1.0,))), 1)
    assert state.builders[0].n_records == 0 and state.bins[0] == [1]
    assert not np.any(state.V[0])


def test_exploration_threshold_takes_smaller_branch():
    a = exploration_threshold(2, 6, 100, 0.0, 1.0)
    assert a == pytest.approx(1 / (144 * math.sqrt(4 * math.log(600))))
    assert exploration_threshold(2, 6, 100, 1e6, 1.0) == pytest.approx(1 / 24_000)


def test_supcb_single_round(world):
    tr = run(world, "supcb", T=1)
    assert len(tr) == 1 and tr.rows[0].phase == "explore"


def test_supcb_default_ridge_floor(world):
    with pytest.raises(ConfigError):
        run(world, "supcb", T=5, lam=1.0)
    tr = run(world, "supcb", T=5)
    assert tr.metadata["lambda"] == pytest.approx(world.constants.Pbar)


def test_supcb_default_constants_never_finish_exploring(world):
    tr = run(world, "supcb", T=200)
    assert tr.metadata["exploration_complete"] is False
    assert set(tr.phase_counts()) == {"explore"}


def test_supcb_elimination_keeps_optimum_with_narrow_widths(world):
    tr = run(world, "supcb", T=400, width_scale=1e-4)
    flags = [r.opt_in_candidates for r in tr.rows if r.opt_in_candidates is not None]
    assert tr.metadata["exploration_complete"] is True
    assert len(flags) == 400 and all(flags)
    assert {r.phase for r in tr.rows} <= {"exploit"} | {f"bin-{k}" for k in range(1, 6)}


def test_fixed_assortment_candidates(world):
    cfg = dict(mode="fixed_assortment", fixed_assortment=(3,), price_grid=(0.0, 2.0))
    tr = run(world, "supcb", T=30, **cfg)
    assert tr.metadata["candidates"] == 2
    assert all(r.action.assortment == (3,) for r in tr.rows)


def test_fixed_assortment_benchmark_is_grid_optimal_price(world):
    cfg = OnlineConfig(T=10, algorithm="uniform", mode="fixed_assortment", fixed_assortment=(2, 6))
    market = Market(world, cfg, np.random.default_rng(0))
    best = world.optimum()  # the unrestricted optimum uses the same pair
    assert best.assortment == (2, 6)
    _, regret = market.play(world.catalog, best.action)
    assert regret == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("algorithm", ALGOS)
def test_regret_nonnegative_and_trace_consistent(world, algorithm):
    tr = run(world, algorithm)
    inst = np.array([r.inst_regret for r in tr.rows])
    assert np.all(inst >= -1e-12)
    np.testing.assert_allclose(tr.cumulative, np.cumsum(inst))
    for r in tr.rows:
        r.action.validate(world.N, world.K)
        assert set(r.action.prices) <= set(world.grid.tolist())


@pytest.mark.parametrize("algorithm", ALGOS)
def test_same_seed_same_trace(world, algorithm):
    assert run(world, algorithm, T=80, seed=4).to_csv() == run(world, algorithm, T=80, seed=4).to_csv()


@pytest.mark.parametrize("algorithm", ALGOS)
def test_iid_contexts(algorithm):
    world = World.generate(EnvironmentSpec(d=2, N=4, K=2, W=1.0, L0=0.5, context_mode="iid_per_round", seed=1))
    tr = run(world, algorithm, T=40)
    assert len(tr) == 40 and tr.total_regret >= 0


def test_trace_csv_format(world):
    tr = run(world, "ts", T=20)
    text = tr.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    rows = read_trace_csv(text)
    assert [r["t"] for r in rows] == list(range(1, 21))
    assert rows[-1]["cum_regret"] == tr.total_regret
    assert rows[0]["bin"] is None and rows[0]["opt_in_candidates"] is None


def test_trace_regret_lookup():
    tr = RegretTrace()
    for t in range(1, 5):
        tr.append(t, "explore", 1, Action((1,), (1.0,)), 0, 0.5)
    assert tr.regret_at(2) == 1.0 and tr.regret_at(0) == 0.0 and tr.total_regret == 2.0
    assert tr.phase_counts() == {"explore": 4}


def test_prior_draws_inside_ball():
    rng = np.random.default_rng(0)
    assert max(np.linalg.norm(uniform_ball(rng, 4, 1.0)) for _ in range(500)) <= 1.0


def test_snap_to_grid():
    assert snap_to_grid([0.4, 2.6], np.array([0.0, 1.0, 2.0, 3.0])) == (0.0, 3.0)


def test_posterior_concentrates(world):
    from japs.harness import BehaviorPolicy, generate_offline_dataset

    rng = np.random.default_rng(1)
    x = world.catalog.augmented_table(world.grid)[1, 2]
    spreads = []
    for n in (50, 400, 3000):
        data = generate_offline_dataset(world, BehaviorPolicy(), n, rng).design()
        sampler = MetropolisSampler(4, world.W, np.random.default_rng(2))
        sampler.run(data, 300, 0)
        draws = np.array([sampler.run(data, 5, t) @ x for t in range(200)])
        spreads.append(draws.std())
    assert spreads[0] > spreads[1] > spreads[2]


def test_sampler_acceptance_in_band(world):
    tr = run(world, "ts", T=1500, seed=2)
    assert tr.metadata["mh_warnings"] == []


def test_ucb_first_round_and_optimism(world):
    tr = run(world, "ucb_mle", T=200)
    assert len(tr) == 200
    assert tr.metadata["optimistic_rounds"] >= 0.9 * 200
    assert tr.metadata["unconverged_fits"] == 0


def test_optimism_multiplier_hand_value():
    r = math.log(100) + 2 * math.log(2 * math.e * (1 + 3.0 * 10 / 2))
    assert optimism_multiplier(10, 2, 1.0, 3.0, 2 * math.e, 100) == pytest.approx(math.sqrt(2 * r + 1))


def test_ts_beats_uniform_on_short_horizon(world):
    ts = run(world, "ts", T=600, seed=3).total_regret
    uni = run(world, "uniform", T=600, seed=3).total_regret
    assert ts < uni / 2

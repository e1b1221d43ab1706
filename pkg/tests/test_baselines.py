import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from potnash.baselines import ExpWeightsSchedule, ExpWeightsState, exp_weights_run, first_hit, rescale
from potnash.games import MatrixGame


def _dominant_game():
    # identical interest, action 0 of player 1 strictly dominant; player 2 indifferent
    u = np.array([[1.0, 1.0], [0.0, 0.0]])
    return MatrixGame(np.stack([u, u], -1))


def test_schedule_values():
    s = ExpWeightsSchedule()
    assert s.eta(1) == 1.0 and s.eta(4) == 0.5
    assert s.epsilon(1) == 1.0
    assert s.epsilon(8) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        ExpWeightsSchedule(eta0=0)


def test_single_action_game_stays_point_mass():
    game = MatrixGame(np.zeros((1, 1, 2)))
    tr = exp_weights_run(game, 50, rng=np.random.default_rng(0))
    for strat in tr.strategies:
        assert all(np.array_equal(p, [1.0]) for p in strat)


def test_dominant_action_concentrates():
    probs = [exp_weights_run(_dominant_game(), 500, rng=np.random.default_rng(s)).strategies[-1][0][0] for s in range(20)]
    assert np.median(probs) >= 0.95


def test_strategies_are_probability_vectors(cournot_grid_game):
    tr = exp_weights_run(cournot_grid_game, 200, rng=np.random.default_rng(1), utility_bounds=(-550, 10))
    for strat in tr.strategies:
        for p in strat:
            assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(1, 50))
def test_state_update_keeps_simplex(rewards, t):
    state = ExpWeightsState.uniform((3, 3, 3), ExpWeightsSchedule())
    state.t = t - 1
    q = state.sampling(t)
    state.update((0, 1, 2), rewards, q)
    state.check()


def test_rescale_clips_to_unit_interval():
    b = np.array([[0.0, 10.0], [-5.0, 5.0]])
    assert np.allclose(rescale([5.0, 20.0], b), [0.5, 1.0])
    assert np.allclose(rescale([-1.0, -5.0], b), [0.0, 0.0])


def test_bad_bounds_rejected():
    with pytest.raises(ValueError):
        exp_weights_run(_dominant_game(), 5, utility_bounds=(1.0, 0.0))
    with pytest.raises(ValueError):
        exp_weights_run(_dominant_game(), 5, utility_bounds=[(0, 1)] * 3)


def test_first_hit_and_csv_schema():
    tr = exp_weights_run(_dominant_game(), 30, rng=np.random.default_rng(2), target=(0, 0))
    hit = first_hit(tr, (0, 0))
    assert hit == tr.extra["first_hit"]
    header = tr.to_csv().splitlines()[0].split(",")
    assert header == ["step", "a_1", "a_2", "x_1", "x_2", "y_1", "y_2", "mode_1", "mode_2", "mode_prob_1", "mode_prob_2"]
    assert len(tr.to_csv().splitlines()) == 31


def test_stop_at_target():
    tr = exp_weights_run(_dominant_game(), 1000, rng=np.random.default_rng(2), target=(0, 0), stop_at_target=True)
    assert len(tr.rows) == tr.extra["first_hit"]


def test_same_seed_same_trace(cournot_grid_game):
    a = exp_weights_run(cournot_grid_game, 100, rng=np.random.default_rng(9), utility_bounds=(-550, 10))
    b = exp_weights_run(cournot_grid_game, 100, rng=np.random.default_rng(9), utility_bounds=(-550, 10))
    assert a.to_csv() == b.to_csv()

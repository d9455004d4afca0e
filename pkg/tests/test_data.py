import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2

from statdist import data
from statdist.environments import gridworld, queue


def test_from_pairs_minimal():
    ds = data.from_pairs([[0.0]], [[1.0]])
    assert ds.n == 1 and ds.dim == 1
    assert ds.xs[0, 0] == 0.0 and ds.xps[0, 0] == 1.0


def test_from_pairs_dimension_mismatch_names_row():
    xs = [[0.0, 1.0], [1.0, 2.0], [3.0, 4.0, 5.0]]
    with pytest.raises(ValueError, match="row 2"):
        data.from_pairs(xs, [[0.0, 0.0]] * 3)


def test_from_pairs_empty():
    with pytest.raises(ValueError):
        data.from_pairs([], [])


def test_from_pairs_nonfinite_named():
    with pytest.raises(ValueError, match="row 1"):
        data.from_pairs([[0.0], [np.nan]], [[0.0], [0.0]])
    with pytest.raises(ValueError, match="row 0"):
        data.from_pairs([[0.0]], [[np.inf]])


def test_from_pairs_reward_validation():
    with pytest.raises(ValueError, match="length"):
        data.from_pairs([[0.0]], [[1.0]], rewards=[1.0, 2.0])
    with pytest.raises(ValueError, match="row 0"):
        data.from_pairs([[0.0]], [[1.0]], rewards=[np.nan])


def test_from_pairs_queue_generator_count():
    qp = queue.make_params(0.8, 0.9)
    ds = queue.queue_make_dataset(qp, 10_000, np.random.default_rng(0))
    assert ds.n == 10_000 and ds.dim == 1


def test_dataset_arrays_are_read_only():
    ds = data.from_pairs([[0.0]], [[1.0]])
    with pytest.raises(ValueError):
        ds.xs[0, 0] = 5.0


def test_minibatch_determinism():
    ds = data.from_pairs(np.arange(5.0)[:, None], np.arange(5.0)[:, None])
    a = data.sample_minibatch(ds, 5, np.random.default_rng(42))
    b = data.sample_minibatch(ds, 5, np.random.default_rng(42))
    assert np.array_equal(a.indices, b.indices)


def test_minibatch_single_row():
    ds = data.from_pairs([[7.0]], [[8.0]])
    mb = data.sample_minibatch(ds, 4, np.random.default_rng(0))
    assert np.array_equal(mb.indices, np.zeros(4, dtype=int))
    assert mb.size == 4


def test_minibatch_uniformity_chi_square():
    # 2000 batches of 50 rows each = 1e5 draws over 50 rows
    n, draws = 50, 100_000
    ds = data.from_pairs(np.arange(float(n))[:, None], np.zeros((n, 1)))
    rng = np.random.default_rng(7)
    counts = np.zeros(n)
    for _ in range(draws // 50):
        mb = data.sample_minibatch(ds, 50, rng)
        counts += np.bincount(mb.indices, minlength=n)
    expected = draws / n
    stat = float(((counts - expected) ** 2 / expected).sum())
    assert stat < chi2.ppf(1.0 - 1e-3, df=n - 1)


def test_minibatch_carries_rewards():
    ds = data.from_pairs([[0.0], [1.0]], [[1.0], [0.0]], rewards=[5.0, 6.0])
    mb = data.sample_minibatch(ds, 3, np.random.default_rng(1))
    assert np.array_equal(mb.rewards, ds.rewards[mb.indices])


def test_compose_deterministic_policy():
    ds = data.from_pairs([[0.0, 1.0]] * 4, [[2.0, 3.0]] * 4)
    composed = data.compose_with_policy(
        ds, lambda states, rng: np.zeros((states.shape[0], 1)), 1, np.random.default_rng(0)
    )
    assert np.all(composed.xps[:, 1] == 0.0)
    assert np.array_equal(composed.xps[:, 0], ds.xps[:, 0])
    assert np.array_equal(composed.xs, ds.xs)


def test_compose_identity_split():
    ds = data.from_pairs([[0.0, 1.0]], [[2.0, 3.0]], rewards=[1.0])
    out = data.compose_with_policy(ds, None, 2, np.random.default_rng(0))
    assert np.array_equal(out.xps, ds.xps)
    assert np.array_equal(out.rewards, ds.rewards)


def test_compose_split_out_of_range():
    ds = data.from_pairs([[0.0, 1.0]], [[2.0, 3.0]])
    with pytest.raises(ValueError, match="out of range"):
        data.compose_with_policy(ds, None, 3, np.random.default_rng(0))


def test_compose_action_marginal_matches_policy():
    g = gridworld.make_gridworld(width=3, height=3, behavior_mix=0.6)
    rng = np.random.default_rng(5)
    ds = gridworld.gridworld_make_dataset(g, 50, 400, rng)
    composed = data.compose_with_policy(ds, gridworld.target_action_sampler(g), 1, rng)
    states = composed.xps[:, 0].astype(int)
    actions = composed.xps[:, 1].astype(int)
    for s in range(g.n_states):
        rows = states == s
        total = rows.sum()
        if total < 200:
            continue
        freq = np.bincount(actions[rows], minlength=4) / total
        sigma = np.sqrt(g.target_policy[s] * (1 - g.target_policy[s]) / total)
        assert np.all(np.abs(freq - g.target_policy[s]) < 5 * sigma + 1e-9)


def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(3)
    ds = data.from_pairs(
        rng.standard_normal((20, 3)) * 1e7,
        rng.standard_normal((20, 3)) * 1e-7,
        rewards=rng.standard_normal(20),
    )
    path = tmp_path / "ds.csv"
    data.save_csv(ds, path)
    back = data.load_csv(path)
    assert np.array_equal(back.xs, ds.xs)
    assert np.array_equal(back.xps, ds.xps)
    assert np.array_equal(back.rewards, ds.rewards)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.floats(allow_nan=False, allow_infinity=False, width=64),
        min_size=2,
        max_size=8,
    )
)
def test_csv_round_trip_property(tmp_path_factory, values):
    half = len(values) // 2
    ds = data.from_pairs(
        np.asarray(values[:half])[:, None], np.asarray(values[half : 2 * half])[:, None]
    )
    path = tmp_path_factory.mktemp("csv") / "ds.csv"
    data.save_csv(ds, path)
    back = data.load_csv(path)
    assert np.array_equal(back.xs, ds.xs) and np.array_equal(back.xps, ds.xps)


def test_csv_wrong_arity_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("d,n,has_rewards\n1,2,0\n0.0,1.0\n0.0\n")
    with pytest.raises(ValueError, match="line 4"):
        data.load_csv(path)


def test_csv_missing_reward_is_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("d,n,has_rewards\n1,1,1\n0.0,1.0\n")
    with pytest.raises(ValueError, match="line 3"):
        data.load_csv(path)


def test_csv_row_count_mismatch(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("d,n,has_rewards\n1,3,0\n0.0,1.0\n")
    with pytest.raises(ValueError, match="declares n=3"):
        data.load_csv(path)


def test_state_indices_cast_checks():
    with pytest.raises(ValueError, match="non-integer"):
        data.state_indices(np.array([[2.5]]), 3)
    with pytest.raises(ValueError, match="out of range"):
        data.state_indices(np.array([[3.0]]), 3)
    idx = data.state_indices(np.array([[1.0, 2.0]]), (4, 5))
    assert idx[0] == 1 * 5 + 2

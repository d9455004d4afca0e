import numpy as np
import pytest
from scipy.stats import chi2

from statdist import data, metrics, tabular
from statdist.environments import gridworld, ou, potentials, queue


# ---------------------------------------------------------------------------
# queue


def test_queue_no_arrivals_stays_empty():
    qp = queue.QueueParams(1e-12, 0.9, 5)
    rng = np.random.default_rng(0)
    assert all(queue.queue_transition(0, qp, rng) == 0 for _ in range(50))


def test_queue_from_zero_at_most_one():
    qp = queue.make_params(0.8, 0.9)
    rng = np.random.default_rng(1)
    outs = {queue.queue_transition(0, qp, rng) for _ in range(200)}
    assert outs <= {0, 1}


def test_queue_stationary_values():
    qp = queue.make_params(0.8, 0.9)
    rho = queue.traffic_intensity(0.8, 0.9)
    assert rho == pytest.approx(4.0 / 9.0)
    law = queue.queue_stationary(qp, 40)
    assert law[0] == pytest.approx(5.0 / 9.0, abs=1e-6)
    assert law.sum() == pytest.approx(1.0, abs=1e-12)


def test_queue_stationary_empty_limit():
    qp = queue.QueueParams(1e-9, 0.9, 5)
    law = queue.queue_stationary(qp, 10)
    assert law[0] > 1.0 - 1e-8


def test_queue_default_probe_range():
    assert queue.make_params(0.8, 0.9).probe_range == 18


def test_queue_instability_rejected():
    with pytest.raises(ValueError, match="stability"):
        queue.make_params(0.9, 0.8)


def test_queue_long_trajectory_matches_geometric_law():
    qp = queue.make_params(0.8, 0.9)
    rng = np.random.default_rng(2)
    steps = 400_000
    x = 0
    counts = np.zeros(60)
    arrivals = rng.random(steps) < qp.arrival_prob
    services = rng.random(steps) < qp.finish_prob
    for t in range(steps):
        x = x + arrivals[t]
        if x > 0 and services[t]:
            x -= 1
        if x < 60:
            counts[x] += 1
    emp = counts / counts.sum()
    rho = queue.traffic_intensity(0.8, 0.9)
    law = (1 - rho) * rho ** np.arange(60)
    assert np.abs(emp - law).max() < 0.01


def test_queue_tabular_chain_matches_truncated_law():
    qp = queue.make_params(0.8, 0.9)
    chain = queue.queue_tabular_chain(qp, qp.probe_range)
    mu, _ = tabular.solve_stationary(chain, tol=1e-14)
    law = queue.queue_stationary(qp, qp.probe_range)
    assert metrics.kl_divergence(law, mu, floor=0.0) < 1e-8


def test_queue_dataset_probe_uniform_and_deterministic():
    qp = queue.make_params(0.8, 0.9)
    ds1 = queue.queue_make_dataset(qp, 5000, np.random.default_rng(3))
    ds2 = queue.queue_make_dataset(qp, 5000, np.random.default_rng(3))
    assert np.array_equal(ds1.xs, ds2.xs) and np.array_equal(ds1.xps, ds2.xps)
    assert ds1.xs.min() == 0.0 and ds1.xs.max() == qp.probe_range - 1


# ---------------------------------------------------------------------------
# diffusion


def test_ou_drift_fixed_point():
    op = ou.OuParams(mean=2.0, sigma=1.0, strength=2.0, dt=0.01)
    rng = np.random.default_rng(4)
    # sigma enters only through the noise; silence it by checking the drift map
    x = 2.0
    drift = x + op.strength * (op.mean - x) * op.dt
    assert drift == pytest.approx(2.0)


def test_ou_deterministic_contraction():
    op = ou.OuParams(mean=2.0, sigma=1e-300, strength=2.0, dt=0.01)
    rng = np.random.default_rng(5)
    x0, x1 = 5.0, float(ou.ou_em_step(5.0, op, rng))
    assert abs(x1 - op.mean) == pytest.approx((1 - op.strength * op.dt) * abs(x0 - op.mean), rel=1e-9)


def test_ou_stationary_sampler_moments():
    op = ou.OuParams(mean=2.0, sigma=2.0, strength=2.0, dt=1e-3)
    draws = ou.ou_stationary_sampler(op, 200_000, np.random.default_rng(6))
    assert draws.mean() == pytest.approx(2.0, abs=0.02)
    assert draws.std() == pytest.approx(1.0, abs=0.02)


def test_ou_long_chain_approaches_stationary_mmd():
    op = ou.OuParams(mean=2.0, sigma=2.0, strength=2.0, dt=1e-3)
    rng = np.random.default_rng(7)
    path = ou.ou_simulate(op, np.linspace(0, 1, 500), 2000, rng)
    exact = ou.ou_stationary_sampler(op, 500, rng)
    early = metrics.mmd_gaussian(path[200][:, None], exact)
    late = metrics.mmd_gaussian(path[2000][:, None], exact)
    assert late < early
    assert late < 0.05


def test_ou_em_bias_shrinks_with_dt():
    # stationary variance error of the Euler chain decreases monotonically in dt
    strength, sigma = 4.0, 2.0
    target_var = sigma**2 / (2 * strength)
    rng = np.random.default_rng(8)
    errors = []
    for dt in (1e-1, 1e-2, 1e-3):
        op = ou.OuParams(mean=0.0, sigma=sigma, strength=strength, dt=dt)
        x = rng.normal(0.0, np.sqrt(target_var), size=500_000)
        for _ in range(int(round(1.0 / dt))):
            x = ou.ou_em_step(x, op, rng)
        errors.append(abs(x.var() - target_var))
    assert errors[0] > errors[1] > errors[2]


def test_ou_window_dataset_shape():
    op = ou.OuParams(mean=0.0, sigma=1.0, strength=1.0, dt=0.01)
    path = ou.ou_simulate(op, np.zeros(10), 20, np.random.default_rng(9))
    ds = ou.ou_window_dataset(path, 5)
    assert ds.n == 50
    assert np.array_equal(ds.xs.ravel(), path[-6:-1].ravel())


# ---------------------------------------------------------------------------
# potentials / HMC


class FlatPotential(potentials.Potential):
    name = "flat"

    def raw_log_density(self, x):
        return np.zeros(x.shape[0])

    def raw_grad(self, x):
        return np.zeros_like(x)


def test_hmc_flat_potential_always_accepts():
    pot = FlatPotential()
    rng = np.random.default_rng(10)
    xs = potentials.uniform_probe(pot, 500, rng) * 0.5  # keep proposals inside the box
    out = potentials.hmc_transition_batch(xs, pot, rng, step=0.5, n_leapfrog=1)
    assert np.all(np.any(out != xs, axis=1))


def test_hmc_zero_step_is_identity():
    pot = potentials.make_potential("2gauss")
    rng = np.random.default_rng(11)
    xs = potentials.uniform_probe(pot, 100, rng)
    out = potentials.hmc_transition_batch(xs, pot, rng, step=0.0, n_leapfrog=1)
    assert np.array_equal(out, xs)


def test_hmc_deterministic_under_seed():
    pot = potentials.make_potential("banana")
    xs = potentials.uniform_probe(pot, 50, np.random.default_rng(12))
    a = potentials.hmc_transition_batch(xs, pot, np.random.default_rng(13))
    b = potentials.hmc_transition_batch(xs, pot, np.random.default_rng(13))
    assert np.array_equal(a, b)


def test_two_gaussians_symmetry_of_long_chain():
    pot = potentials.make_potential("2gauss")
    finals = potentials.hmc_reference_sample(pot, 4000, np.random.default_rng(14), n_steps=400)
    assert abs(finals[:, 0].mean()) < 0.15
    assert abs(finals[:, 1].mean()) < 0.1


def test_dataset_stays_in_box():
    pot = potentials.make_potential("funnel")
    ds = potentials.potentials_make_dataset(pot, 2000, np.random.default_rng(15))
    assert np.all(np.abs(ds.xs) <= 6.0)
    assert np.all(np.abs(ds.xps) <= 6.0)


def test_hmc_leaves_target_invariant_chi_square():
    # parallel chains give effectively independent draws for the test
    pot = potentials.make_potential("2gauss")
    rng = np.random.default_rng(16)
    n = 20_000
    finals = potentials.hmc_reference_sample(pot, n, rng, n_steps=300)
    edges = np.linspace(-6.0, 6.0, 21)
    hist = np.histogram2d(finals[:, 0], finals[:, 1], bins=[edges, edges])[0].ravel()
    centers = (edges[:-1] + edges[1:]) / 2.0
    gx, gy = np.meshgrid(centers, centers, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    dens = np.exp(pot.log_density(grid))
    expected = n * dens / dens.sum()
    big = expected >= 10.0
    stat = float(((hist[big] - expected[big]) ** 2 / expected[big]).sum())
    pooled_obs = hist[~big].sum()
    pooled_exp = expected[~big].sum()
    stat += (pooled_obs - pooled_exp) ** 2 / pooled_exp
    df = int(big.sum())  # pooled cell adds one, minus one for the total
    assert stat < chi2.ppf(1 - 1e-3, df=df)


def test_unknown_potential():
    with pytest.raises(ValueError, match="unknown potential"):
        potentials.make_potential("kidney")


# ---------------------------------------------------------------------------
# gridworld


def test_gridworld_policies_are_distributions():
    g = gridworld.make_gridworld()
    assert np.allclose(g.target_policy.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(g.behavior_policy.sum(axis=1), 1.0, atol=1e-12)
    p = gridworld.transition_tensor(g)
    assert np.allclose(p.sum(axis=2), 1.0, atol=1e-12)


def test_gridworld_chains_are_ergodic():
    g = gridworld.make_gridworld()
    for policy in (g.target_policy, g.behavior_policy):
        chain = gridworld.state_action_chain(g, policy)
        mu, _ = tabular.solve_stationary(chain, tol=1e-12)
        assert mu.min() > 0


def test_gridworld_constant_reward_gives_constant_value():
    g = gridworld.make_gridworld(step_reward=3.0, goal_reward=3.0)
    truth = gridworld.gridworld_ground_truth(g, discount=0.9)
    assert truth.avg_reward == pytest.approx(3.0, abs=1e-10)
    assert truth.discounted_reward == pytest.approx(3.0, abs=1e-8)


def test_gridworld_gamma_zero_is_initial_expectation():
    g = gridworld.make_gridworld()
    truth = gridworld.gridworld_ground_truth(g, discount=0.0)
    want = float(gridworld.initial_pair_probs(g) @ gridworld.reward_table(g).ravel())
    assert truth.discounted_reward == pytest.approx(want, abs=1e-12)


def test_gridworld_ground_truth_matches_long_rollout():
    g = gridworld.make_gridworld(width=3, height=3, slip=0.0, behavior_mix=1e-12)
    truth = gridworld.gridworld_ground_truth(g)
    # behavior_mix ~ 0 makes rollouts follow the target policy
    ds = gridworld.gridworld_make_dataset(g, 1000, 1000, np.random.default_rng(17))
    rollout_avg = ds.rewards.mean()
    assert rollout_avg == pytest.approx(truth.avg_reward, abs=1e-2)


def test_gridworld_dataset_composed_actions_follow_target():
    g = gridworld.make_gridworld()
    ds = gridworld.gridworld_make_dataset(g, 20, 500, np.random.default_rng(18))
    states = ds.xps[:, 0].astype(int)
    actions = ds.xps[:, 1].astype(int)
    for s in np.unique(states):
        rows = states == s
        if rows.sum() < 300:
            continue
        freq = np.bincount(actions[rows], minlength=4) / rows.sum()
        assert np.abs(freq - g.target_policy[s]).max() < 0.1


def test_gridworld_initial_term_sampler_matches_probs():
    g = gridworld.make_gridworld()
    spec = gridworld.initial_term(g)
    pts = spec.sample(np.random.default_rng(19), 200_000)
    idx = data.state_indices(pts, (g.n_states, g.n_actions))
    freq = np.bincount(idx, minlength=g.n_states * g.n_actions) / pts.shape[0]
    assert np.abs(freq - spec.probs).max() < 0.003

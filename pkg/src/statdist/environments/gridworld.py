"""Small gridworld decision process with exactly solvable ground truth.

The agent moves on a width x height grid with slippery actions; entering
the goal cell pays a bonus and the next step teleports to a uniformly drawn
cell, which keeps the chain recurrent.  The target policy drifts toward the
goal; the behavior policy is a mixture of the target with the uniform
policy.  State-action pairs form the chain states, so stationary and
discounted-occupancy quantities come straight from the dense solvers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import tabular
from ..data import TransitionDataset, from_pairs
from ..vpm import InitialTermSpec

N_ACTIONS = 4
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right in (row, col)


@dataclass(frozen=True)
class GridworldMdp:
    width: int
    height: int
    slip: float
    goal: int
    step_reward: float
    goal_reward: float
    target_policy: np.ndarray  # (S, A) rows sum to 1
    behavior_policy: np.ndarray
    initial_dist: np.ndarray  # (S,)
    discount: float = 0.99

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def n_actions(self) -> int:
        return N_ACTIONS


def _neighbor(state: int, move, width: int, height: int) -> int:
    r, c = divmod(state, width)
    nr, nc = r + move[0], c + move[1]
    if 0 <= nr < height and 0 <= nc < width:
        return nr * width + nc
    return state


def _greedy_policy(width: int, height: int, goal: int, greedy_prob: float) -> np.ndarray:
    """Mostly move to shrink the Manhattan distance to the goal; rest uniform."""
    n = width * height
    pol = np.full((n, N_ACTIONS), (1.0 - greedy_prob) / N_ACTIONS)
    gr, gc = divmod(goal, width)
    for s in range(n):
        r, c = divmod(s, width)
        if s == goal:
            pol[s] = 1.0 / N_ACTIONS
            continue
        if r > gr:
            best = 0
        elif r < gr:
            best = 1
        elif c > gc:
            best = 2
        else:
            best = 3
        pol[s, best] += greedy_prob
    return pol


def make_gridworld(
    width: int = 5,
    height: int = 5,
    slip: float = 0.1,
    behavior_mix: float = 0.5,
    goal: int | None = None,
    greedy_prob: float = 0.85,
    step_reward: float = -1.0,
    goal_reward: float = 20.0,
    discount: float = 0.99,
) -> GridworldMdp:
    """Default construction: greedy-ish target, uniform-mixed behavior."""
    if not 0.0 < behavior_mix <= 1.0:
        raise ValueError("behavior mix must lie in (0, 1]")
    n = width * height
    if goal is None:
        goal = n - 1
    target = _greedy_policy(width, height, goal, greedy_prob)
    behavior = (1.0 - behavior_mix) * target + behavior_mix / N_ACTIONS
    initial = np.full(n, 1.0 / n)
    return GridworldMdp(
        width, height, slip, goal, step_reward, goal_reward, target, behavior, initial, discount
    )


def transition_tensor(g: GridworldMdp) -> np.ndarray:
    """State dynamics P[s, a, s']; the goal teleports to the initial distribution."""
    n = g.n_states
    p = np.zeros((n, N_ACTIONS, n))
    for s in range(n):
        if s == g.goal:
            p[s, :, :] = g.initial_dist
            continue
        for a in range(N_ACTIONS):
            p[s, a, _neighbor(s, _MOVES[a], g.width, g.height)] += 1.0 - g.slip
            for m in _MOVES:
                p[s, a, _neighbor(s, m, g.width, g.height)] += g.slip / N_ACTIONS
    return p


def reward_table(g: GridworldMdp) -> np.ndarray:
    """Per-(state, action) rewards: the step cost, or the bonus at the goal."""
    r = np.full((g.n_states, N_ACTIONS), g.step_reward)
    r[g.goal, :] = g.goal_reward
    return r


def state_action_chain(g: GridworldMdp, policy: np.ndarray) -> tabular.TabularChain:
    """Chain over flattened (state, action) pairs induced by a policy."""
    p = transition_tensor(g)
    n, a = g.n_states, N_ACTIONS
    k = np.einsum("sax,xb->saxb", p, policy).reshape(n * a, n * a)
    return tabular.TabularChain(k)


def initial_pair_probs(g: GridworldMdp) -> np.ndarray:
    """Initial (state, action) law: initial state times the target policy."""
    return (g.initial_dist[:, None] * g.target_policy).ravel()


def initial_term(g: GridworldMdp) -> InitialTermSpec:
    """Initial-distribution term for discounted runs, with sampler and exact vector."""
    probs = initial_pair_probs(g)

    def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
        flat = rng.choice(probs.size, size=size, p=probs)
        s, a = np.divmod(flat, N_ACTIONS)
        return np.column_stack([s, a]).astype(float)

    return InitialTermSpec(sampler=sampler, probs=probs)


def _sample_rows(prob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a stack of probability rows."""
    u = rng.random(prob_rows.shape[0])
    cum = np.cumsum(prob_rows, axis=1)
    idx = (u[:, None] > cum).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def gridworld_make_dataset(
    g: GridworldMdp, n_traj: int, traj_len: int, rng: np.random.Generator
) -> TransitionDataset:
    """Behavior-policy rollouts, with next pairs composed under the target policy.

    Each row is x = (s, a) with a from the behavior policy, the reward of
    (s, a), and x' = (s', a') where a' is drawn from the target policy at s'.
    """
    p = transition_tensor(g)
    r_table = reward_table(g)
    states = _sample_rows(np.tile(g.initial_dist, (n_traj, 1)), rng)
    xs = np.empty((n_traj * traj_len, 2))
    xps = np.empty((n_traj * traj_len, 2))
    rewards = np.empty(n_traj * traj_len)
    for t in range(traj_len):
        actions = _sample_rows(g.behavior_policy[states], rng)
        nxt = _sample_rows(p[states, actions], rng)
        target_actions = _sample_rows(g.target_policy[nxt], rng)
        rows = slice(t * n_traj, (t + 1) * n_traj)
        xs[rows, 0], xs[rows, 1] = states, actions
        xps[rows, 0], xps[rows, 1] = nxt, target_actions
        rewards[rows] = r_table[states, actions]
        states = nxt
    return from_pairs(xs, xps, rewards)


def target_action_sampler(g: GridworldMdp):
    """Policy callable for :func:`statdist.data.compose_with_policy`."""

    def policy(states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        idx = states[:, 0].astype(int)
        return _sample_rows(g.target_policy[idx], rng).astype(float)[:, None]

    return policy


@dataclass(frozen=True)
class GroundTruth:
    stationary_pairs: np.ndarray
    avg_reward: float
    discounted_reward: float | None = None


def gridworld_ground_truth(g: GridworldMdp, discount: float | None = None) -> GroundTruth:
    """Exact stationary (state, action) law and policy values via the dense solvers."""
    chain = state_action_chain(g, g.target_policy)
    mu, _ = tabular.solve_stationary(chain, tol=1e-13)
    r = reward_table(g).ravel()
    avg = float(mu @ r)
    disc = None
    if discount is not None:
        n = chain.n_states
        probe = np.full(n, 1.0 / n)
        joint = tabular.joint_from_chain(chain, probe)
        tau = tabular.discounted_ratio_fixed_point(
            joint, probe, initial_pair_probs(g), discount, tol=1e-13
        )
        disc = float((probe * tau) @ r)
    return GroundTruth(stationary_pairs=mu, avg_reward=avg, discounted_reward=disc)

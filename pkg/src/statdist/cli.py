"""Experiment harness: one subcommand per benchmark family plus a selftest.

Configuration is a nested mapping assembled from the built-in preset of the
chosen experiment, an optional YAML file, and ``--set`` flag overrides (in
that order; later wins).  Each run writes ``results.csv`` (long form, one
metric per row), ``diagnostics.csv`` (per-outer-step traces) and
``manifest.yaml`` (the resolved configuration).  Identical config and seeds
produce identical files.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import baselines, data, metrics, models, tabular, vpm
from .environments import gridworld, ou, potentials, queue


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# presets


PRESETS: dict[str, dict] = {
    "queue": {
        "out": "results/queue",
        "seeds": list(range(10)),
        "env": {"arrival_prob": 0.8, "finish_prob": 0.9, "probe_range": None, "n": 10_000},
        "vpm": {"outer_steps": 1000, "penalty_weight": 1.0},
        "baseline": {"steps": 200},
    },
    "sde": {
        "out": "results/sde",
        "seeds": list(range(10)),
        "env": {
            "mean": 2.0,
            "sigma": 2.0,
            "strength": 2.0,
            "dt": 1e-3,
            "n_particles": 1000,
            "n_steps": 2000,
            "n_checkpoints": 10,
            "window_frac": 0.5,
            "max_pairs": 24_000,
        },
        "vpm": {
            "outer_steps": 30,
            "inner_steps": 10,
            "batch_size": 1024,
            "lr_model": 1e-3,
            "lr_dual": 1e-2,
            "hidden": [64, 64],
            "average_tail": 8,
            "eval_points": 4000,
        },
    },
    "mcmc": {
        "out": "results/mcmc",
        "seeds": list(range(5)),
        "env": {"potential": "2gauss", "n": 50_000, "hmc_step": 0.5, "n_leapfrog": 1},
        "vpm": {
            "outer_steps": 120,
            "inner_steps": 10,
            "batch_size": 1000,
            "lr_model": 1e-3,
            "lr_dual": 5e-2,
            "penalty_weight": 5.0,
            "damping": "none",
            "hidden": [128, 128, 128, 128],
        },
        "eval": {"holdout": 2000, "true_sample": 2000, "true_steps": 2000, "true_seed": 123456},
        "baseline": {"enabled": True, "steps": 100, "fit_steps": 1500, "lr": 5e-4, "noise_std": 0.1},
    },
    "ope": {
        "out": "results/ope",
        "seeds": list(range(5)),
        "env": {
            "width": 5,
            "height": 5,
            "slip": 0.1,
            "behavior_mix": 0.5,
            "n_traj": 100,
            "traj_len": 1000,
            "discount": 0.99,
        },
        "vpm": {"outer_steps": 100, "penalty_weight": 1.0},
        "baseline": {"steps": 200},
    },
    "selftest": {"out": "results/selftest", "seeds": [0]},
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key.split("."), value


def resolve_config(experiment: str, config_path: str | None, overrides, seeds, out) -> dict:
    if experiment not in PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = copy.deepcopy(PRESETS[experiment])
    cfg["experiment"] = experiment
    if config_path:
        try:
            loaded = yaml.safe_load(Path(config_path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
        if loaded:
            if not isinstance(loaded, dict):
                raise ConfigError(f"config {config_path} must be a mapping")
            cfg = _deep_merge(cfg, loaded)
    for item in overrides or []:
        path, value = _parse_override(item)
        node = cfg
        for key in path[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[path[-1]] = value
    if seeds is not None:
        cfg["seeds"] = seeds
    if out is not None:
        cfg["out"] = out
    if not cfg.get("seeds"):
        raise ConfigError("at least one seed is required")
    return cfg


# ---------------------------------------------------------------------------
# experiment bodies: each returns (result rows, diagnostics rows)


def _diag_rows(seed: int, setting: str, rows) -> list[dict]:
    return [
        {
            "seed": seed,
            "setting": setting,
            "outer_step": r.outer_step,
            "loss": r.loss,
            "probe_mean": r.probe_mean,
            "dual": r.dual,
            "metric": "" if r.metric is None else r.metric,
        }
        for r in rows
    ]


def run_queue_trial(env: dict, vpm_cfg: dict, baseline_cfg: dict, n: int, seed: int):
    """One queue run: exact-update training plus the simulated-kernel baseline."""
    rng = np.random.default_rng(seed)
    qp = queue.make_params(env["arrival_prob"], env["finish_prob"], env.get("probe_range"))
    ds = queue.queue_make_dataset(qp, n, rng)
    bound = qp.probe_range
    # transitions escaping the probe range are dropped before tabular casting
    keep = ds.xps[:, 0] < bound
    ds_t = data.from_pairs(ds.xs[keep], ds.xps[keep])
    truth = queue.queue_stationary(qp, bound)

    def kl_hook(model):
        w = model.value_batch(ds_t.xs)
        est = np.bincount(ds_t.xs[:, 0].astype(int), weights=w, minlength=bound)
        return metrics.kl_divergence(truth, est / est.sum())

    model = models.TabularRatioModel((bound,))
    cfg = vpm.VpmConfig(
        outer_steps=int(vpm_cfg.get("outer_steps", 1000)),
        penalty_weight=float(vpm_cfg.get("penalty_weight", 1.0)),
        inner_mode="exact",
        damping="none",
        seed=seed,
    )
    trained, diag = vpm.run_vpm(ds_t, cfg, model, ground_truth_hook=kl_hook)
    kl_vpm = diag[-1].metric

    kernel = baselines.empirical_kernel(ds, bound + 1)
    mu = baselines.pushforward_estimate(kernel, int(baseline_cfg.get("steps", 200)))
    mu = mu[:bound] / mu[:bound].sum()
    kl_base = metrics.kl_divergence(truth, mu)
    return {"kl_vpm": kl_vpm, "kl_baseline": kl_base}, diag


def _experiment_queue(cfg: dict):
    results, diagnostics = [], []
    env = cfg["env"]
    sizes = env["n"] if isinstance(env["n"], list) else [env["n"]]
    for seed in cfg["seeds"]:
        for n in sizes:
            start = time.perf_counter()
            vals, diag = run_queue_trial(env, cfg["vpm"], cfg.get("baseline", {}), int(n), seed)
            elapsed = time.perf_counter() - start
            setting = f"n={n}"
            for name, value in vals.items():
                results.append((seed, setting, name, value))
            results.append((seed, setting, "wall_time_s", elapsed))
            diagnostics.extend(_diag_rows(seed, setting, diag))
    return results, diagnostics


def strided_window_dataset(
    path: np.ndarray, window: int, stride: int, max_pairs: int, rng: np.random.Generator
) -> data.TransitionDataset:
    """Pairs (x_t, x_{t+stride}) from the trailing ``window`` steps of a path.

    Multi-step pairs are transitions of the iterated kernel, which shares
    the stationary law and mixes faster per power step.
    """
    w = min(window, path.shape[0] - 1)
    s = min(stride, w)
    xs = path[path.shape[0] - 1 - w : path.shape[0] - s]
    xps = path[path.shape[0] - 1 - w + s :]
    xs, xps = xs.ravel(), xps.ravel()
    if xs.size > max_pairs:
        idx = rng.choice(xs.size, size=max_pairs, replace=False)
        xs, xps = xs[idx], xps[idx]
    return data.from_pairs(xs[:, None], xps[:, None])


def run_sde_trial(env: dict, vcfg: dict, seed: int):
    """One diffusion run: evolve particles, correct the trailing window at checkpoints."""
    rng = np.random.default_rng(seed)
    op = ou.OuParams(env["mean"], env["sigma"], env["strength"], env["dt"])
    n_particles, n_steps = int(env["n_particles"]), int(env["n_steps"])
    x0 = np.linspace(0.0, 1.0, n_particles)
    path = ou.ou_simulate(op, x0, n_steps, rng)
    exact = ou.ou_stationary_sampler(op, n_particles, rng)
    n_checks = int(env["n_checkpoints"])
    checkpoints = [n_steps * k // n_checks for k in range(1, n_checks + 1)]
    model = models.MlpRatioModel([1, *vcfg.get("hidden", [64, 64])], rng=np.random.default_rng(seed + 999))
    tail = int(vcfg.get("average_tail", 8))
    rows, all_diag = [], []
    for t in checkpoints:
        w = max(2, int(np.ceil(env["window_frac"] * t)))
        ds = strided_window_dataset(
            path[: t + 1], w, max(1, w // 2), int(env["max_pairs"]), np.random.default_rng(seed + t)
        )
        eval_rng = np.random.default_rng(seed + t)
        sub = eval_rng.choice(ds.n, size=min(int(vcfg.get("eval_points", 4000)), ds.n), replace=False)
        pts = ds.xs[sub]
        trail: list[np.ndarray] = []

        def hook(m, pts=pts, trail=trail):
            trail.append(m.value_batch(pts))
            return 0.0

        cfg = vpm.VpmConfig(
            outer_steps=int(vcfg.get("outer_steps", 30)),
            inner_steps=int(vcfg.get("inner_steps", 10)),
            batch_size=min(int(vcfg.get("batch_size", 1024)), ds.n),
            lr_model=float(vcfg.get("lr_model", 1e-3)),
            lr_dual=float(vcfg.get("lr_dual", 1e-2)),
            penalty_weight=float(vcfg.get("penalty_weight", 1.0)),
            seed=seed * 7 + t,
        )
        model, diag = vpm.run_vpm(ds, cfg, model, ground_truth_hook=hook)
        weights = np.mean(trail[-tail:], axis=0)
        weights = weights / weights.sum()
        mmd_vpm = metrics.mmd_gaussian(pts, exact, weights)
        mmd_em = metrics.mmd_gaussian(path[t][:, None], exact)
        rows.append((f"checkpoint={t}", {"mmd_vpm_weighted": mmd_vpm, "mmd_em": mmd_em}))
        all_diag.extend(_diag_rows(seed, f"checkpoint={t}", diag))
    return rows, all_diag


def _experiment_sde(cfg: dict):
    results, diagnostics = [], []
    for seed in cfg["seeds"]:
        start = time.perf_counter()
        rows, diag = run_sde_trial(cfg["env"], cfg["vpm"], seed)
        elapsed = time.perf_counter() - start
        for setting, vals in rows:
            for name, value in vals.items():
                results.append((seed, setting, name, value))
        results.append((seed, "all", "wall_time_s", elapsed))
        diagnostics.extend(diag)
    return results, diagnostics


def run_mcmc_trial(env: dict, vcfg: dict, eval_cfg: dict, seed: int, true_sample: np.ndarray):
    """One post-processing run: learn the ratio on probe transitions, resample."""
    rng = np.random.default_rng(seed)
    pot = potentials.make_potential(env["potential"])
    ds = potentials.potentials_make_dataset(
        pot, int(env["n"]), rng, step=float(env.get("hmc_step", 0.5)), n_leapfrog=int(env.get("n_leapfrog", 1))
    )
    model = models.MlpRatioModel(
        [2, *vcfg.get("hidden", [128] * 4)], rng=np.random.default_rng(seed + 55)
    )
    cfg = vpm.VpmConfig(
        outer_steps=int(vcfg.get("outer_steps", 120)),
        inner_steps=int(vcfg.get("inner_steps", 10)),
        batch_size=int(vcfg.get("batch_size", 1000)),
        lr_model=float(vcfg.get("lr_model", 1e-3)),
        lr_dual=float(vcfg.get("lr_dual", 5e-2)),
        penalty_weight=float(vcfg.get("penalty_weight", 5.0)),
        damping=str(vcfg.get("damping", "none")),
        seed=seed,
    )
    trained, diag = vpm.run_vpm(ds, cfg, model)
    holdout = potentials.uniform_probe(pot, int(eval_cfg.get("holdout", 2000)), rng)
    corrected = vpm.resample(vpm.weighted_sample(trained, holdout), holdout.shape[0], rng)
    vals = {
        "mmd_resampled": metrics.mmd_gaussian(corrected, true_sample),
        "mmd_uncorrected": metrics.mmd_gaussian(holdout, true_sample),
    }
    return vals, diag, ds, holdout


def _experiment_mcmc(cfg: dict):
    results, diagnostics = [], []
    env, eval_cfg = cfg["env"], cfg.get("eval", {})
    pot = potentials.make_potential(env["potential"])
    true_sample = potentials.hmc_reference_sample(
        pot,
        int(eval_cfg.get("true_sample", 2000)),
        np.random.default_rng(int(eval_cfg.get("true_seed", 123456))),
        n_steps=int(eval_cfg.get("true_steps", 2000)),
        step=float(env.get("hmc_step", 0.5)),
        n_leapfrog=int(env.get("n_leapfrog", 1)),
    )
    bl = cfg.get("baseline", {})
    for seed in cfg["seeds"]:
        start = time.perf_counter()
        vals, diag, ds, holdout = run_mcmc_trial(env, cfg["vpm"], eval_cfg, seed, true_sample)
        if bl.get("enabled", False):
            rng = np.random.default_rng(seed + 777)
            reg = baselines.fit_mean_regressor(
                ds,
                cfg["vpm"].get("hidden", [128] * 4),
                rng,
                steps=int(bl.get("fit_steps", 1500)),
                batch_size=int(cfg["vpm"].get("batch_size", 1000)),
                lr=float(bl.get("lr", 5e-4)),
                noise_std=float(bl.get("noise_std", 0.1)),
            )
            rolled = baselines.rollout_regressor(reg, holdout, int(bl.get("steps", 100)), rng)
            vals["mmd_model_based"] = metrics.mmd_gaussian(rolled, true_sample)
        elapsed = time.perf_counter() - start
        for name, value in vals.items():
            results.append((seed, "default", name, value))
        results.append((seed, "default", "wall_time_s", elapsed))
        diagnostics.extend(_diag_rows(seed, "default", diag))
    return results, diagnostics


def run_ope_trial(env: dict, vcfg: dict, baseline_cfg: dict, seed: int, g=None, truth=None):
    """One gridworld run: undiscounted, discounted and zero-discount estimates."""
    if g is None:
        g = gridworld.make_gridworld(
            width=int(env["width"]),
            height=int(env["height"]),
            slip=float(env["slip"]),
            behavior_mix=float(env["behavior_mix"]),
            discount=float(env["discount"]),
        )
    if truth is None:
        truth = gridworld.gridworld_ground_truth(g, discount=float(env["discount"]))
    rng = np.random.default_rng(seed)
    ds = gridworld.gridworld_make_dataset(g, int(env["n_traj"]), int(env["traj_len"]), rng)
    dims = (g.n_states, g.n_actions)
    init = gridworld.initial_term(g)
    outer = int(vcfg.get("outer_steps", 100))
    lam = float(vcfg.get("penalty_weight", 1.0))

    def run(discount):
        cfg = vpm.VpmConfig(
            outer_steps=outer,
            penalty_weight=lam,
            inner_mode="exact",
            damping="none",
            discount=discount,
            seed=seed,
        )
        model = models.TabularRatioModel(dims)
        trained, diag = vpm.run_vpm(ds, cfg, model, init_term=None if discount is None else init)
        return vpm.estimate_expectation(trained, ds), diag

    rho_hat, diag = run(None)
    rho_gamma_hat, diag_g = run(float(env["discount"]))
    rho_zero_hat, _ = run(0.0)
    avg_base, disc_base = baselines.ope_model_based(
        ds,
        dims,
        steps=int(baseline_cfg.get("steps", 200)),
        discount=float(env["discount"]),
        init_probs=gridworld.initial_pair_probs(g),
    )
    vals = {
        "rho_vpm": rho_hat,
        "rho_true": truth.avg_reward,
        "rho_gamma_vpm": rho_gamma_hat,
        "rho_gamma_true": truth.discounted_reward,
        "rho_zero_vpm": rho_zero_hat,
        "rho_zero_true": float(gridworld.initial_pair_probs(g) @ gridworld.reward_table(g).ravel()),
        "rho_model_based": avg_base,
        "rho_gamma_model_based": disc_base,
    }
    return vals, diag + diag_g


def _experiment_ope(cfg: dict):
    env = cfg["env"]
    g = gridworld.make_gridworld(
        width=int(env["width"]),
        height=int(env["height"]),
        slip=float(env["slip"]),
        behavior_mix=float(env["behavior_mix"]),
        discount=float(env["discount"]),
    )
    truth = gridworld.gridworld_ground_truth(g, discount=float(env["discount"]))
    results, diagnostics = [], []
    estimates = []
    for seed in cfg["seeds"]:
        start = time.perf_counter()
        vals, diag = run_ope_trial(env, cfg["vpm"], cfg.get("baseline", {}), seed, g, truth)
        elapsed = time.perf_counter() - start
        for name, value in vals.items():
            results.append((seed, "default", name, value))
        results.append((seed, "default", "wall_time_s", elapsed))
        diagnostics.extend(_diag_rows(seed, "default", diag))
        estimates.append(vals["rho_vpm"])
    results.append(("all", "default", "log_mse_rho_vpm", metrics.log_mse(estimates, truth.avg_reward)))
    return results, diagnostics


def _experiment_selftest(cfg: dict):
    """Quick oracle suite: exactness identities and gradient checks."""
    rng = np.random.default_rng(cfg["seeds"][0])
    checks = []

    for _ in range(20):
        s = int(rng.integers(3, 20))
        chain = tabular.random_ergodic_chain(s, rng)
        p = rng.dirichlet(np.ones(s) * 2)
        joint = tabular.joint_from_chain(chain, p)
        raw = rng.uniform(0.5, 2.0, s)
        tau = raw / (p @ raw)
        step = tabular.ratio_power_step(joint, p, tau)
        for lam in (0.01, 1.0, 100.0):
            closed = tabular.regularized_update_closed_form(joint, p, tau, lam)
            assert np.abs(closed - step).max() < 1e-9
            assert abs(p @ closed - 1.0) < 1e-10
    checks.append("penalized closed form matches the power update")

    for _ in range(10):
        s = int(rng.integers(3, 12))
        chain = tabular.random_ergodic_chain(s, rng)
        p = rng.dirichlet(np.ones(s) * 3)
        joint = tabular.joint_from_chain(chain, p)
        tau = np.ones(s)
        for _ in range(3000):
            tau = tabular.ratio_power_step(joint, p, tau)
        mu, _ = tabular.solve_stationary(chain, tol=1e-13)
        assert np.abs(p * tau - mu).max() < 1e-8
    checks.append("ratio fixed point recovers the stationary law")

    for maker in (
        lambda r: models.TabularRatioModel((5,)),
        lambda r: models.LinearRatioModel(2, n_features=16, rng=r),
        lambda r: models.MlpRatioModel([2, 6, 4], rng=r),
    ):
        m = maker(rng)
        m.apply_update(0.3 * rng.standard_normal(m.n_params))
        if isinstance(m, models.TabularRatioModel):
            x = rng.integers(0, 5, size=(1, 1)).astype(float)
        else:
            x = rng.standard_normal((1, 2))
        analytic = m.weighted_value_gradient(x, np.array([1.0]))
        h = 1e-5
        numeric = np.empty_like(analytic)
        for i in range(m.n_params):
            e = np.zeros(m.n_params)
            e[i] = h
            m.apply_update(e)
            up = m.value_batch(x)[0]
            m.apply_update(-2 * e)
            down = m.value_batch(x)[0]
            m.apply_update(e)
            numeric[i] = (up - down) / (2 * h)
        floor = 1e-6 * max(1.0, np.abs(numeric).max())
        err = np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor))
        assert err < 1e-5
    checks.append("analytic gradients match finite differences")

    q = rng.dirichlet(np.ones(6))
    assert metrics.kl_divergence(q, q) == 0.0
    x = rng.standard_normal((30, 2))
    assert metrics.mmd_gaussian(x, x) < 1e-7
    checks.append("metric identities hold")

    results = [(cfg["seeds"][0], "selftest", name, "pass") for name in checks]
    for name in checks:
        print(f"PASS {name}")
    return results, []


EXPERIMENTS = {
    "queue": _experiment_queue,
    "sde": _experiment_sde,
    "mcmc": _experiment_mcmc,
    "ope": _experiment_ope,
    "selftest": _experiment_selftest,
}


# ---------------------------------------------------------------------------
# output plumbing


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_outputs(cfg: dict, results, diagnostics) -> None:
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["experiment", "seed", "setting", "metric", "value"])
        for seed, setting, metric, value in results:
            writer.writerow([cfg["experiment"], seed, setting, metric, _fmt(value)])
    with open(outdir / "diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "setting", "outer_step", "loss", "probe_mean", "dual", "metric"])
        for row in diagnostics:
            writer.writerow(
                [
                    row["seed"],
                    row["setting"],
                    row["outer_step"],
                    _fmt(row["loss"]),
                    _fmt(row["probe_mean"]),
                    _fmt(row["dual"]),
                    _fmt(row["metric"]) if row["metric"] != "" else "",
                ]
            )
    (outdir / "manifest.yaml").write_text(yaml.safe_dump(cfg, sort_keys=True))


def run(cfg: dict) -> int:
    """Execute a resolved configuration; returns the process exit code."""
    threads = cfg.get("threads")
    if threads:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(limits=int(threads))
        except ImportError:
            print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
    try:
        results, diagnostics = EXPERIMENTS[cfg["experiment"]](cfg)
        write_outputs(cfg, results, diagnostics)
    except (AssertionError, Exception) as exc:  # noqa: BLE001 - harness boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="statdist", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML config file merged over the preset")
        p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="cap BLAS thread pools")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override a config entry (repeatable; wins over --config)",
        )
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args.experiment, args.config, args.overrides, args.seed, args.out)
        if args.threads:
            cfg["threads"] = args.threads
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line harness: training runs, drift measurement, theory
verification, aggregate statistics, and standalone distillation.

Exit codes: 0 success, 1 usage error, 2 run failure, 3 verification
failure.  `GIRL_LOG` sets the log level (DEBUG/INFO/WARNING/...).
"""

import argparse
import glob as globmod
import json
import logging
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from . import config as cfgmod
from . import envs as envmod
from . import evalstats
from . import imagination as imag
from . import metrics as metmod
from . import rng as rngmod
from . import theory
from . import world_model as wmmod
from .autodiff import Tensor

log = logging.getLogger("girl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---- run records ----

def write_run_record(out_dir, cfg, seed, trainer, wall_time, status="ok",
                     diagnostics=None):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w") as f:
        f.write(",".join(imag.METRIC_COLUMNS) + "\n")
        for row in trainer.metrics:
            f.write(row.row() + "\n")
    ckpt = {}
    for tag, params in (("wm", trainer.wm.params),
                        ("actor", trainer.ac.actor.params),
                        ("critic", trainer.ac.critic.params)):
        prefix = os.path.join(out_dir, f"checkpoint_{tag}")
        ad.save_params(prefix, params)
        ckpt[tag] = f"checkpoint_{tag}"
    final_eval = None
    if status == "ok":
        final_eval = trainer.evaluate()
    manifest = {
        "status": status,
        "config": cfgmod.config_to_dict(cfg),
        "config_hash": cfgmod.config_hash(cfg),
        "seed": seed,
        "iterations": trainer.iteration,
        "env_steps": trainer.env_steps,
        "final_eval_return": final_eval,
        "wall_time_s": wall_time,
        "artifacts": {"metrics": "metrics.csv", "checkpoints": ckpt},
    }
    if diagnostics:
        manifest["diagnostics"] = diagnostics
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return manifest


def load_run(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = json.load(f)
    cfg = cfgmod.config_from_dict(manifest["config"])
    return manifest, cfg


def rebuild_model(run_dir, manifest, cfg):
    """World model + actor from a run's checkpoints, plus env spec/oracle."""
    e = cfg.env
    spec = envmod.make_env_spec(
        e.kind, seed=e.env_seed, state_dim=e.state_dim,
        action_dim=e.action_dim, horizon=e.horizon,
        distractor_dim=e.distractor_dim, noise_scale=e.noise_scale,
        chain_length=e.chain_length, goal_index=e.goal_index)
    oracle = envmod.make_grounding_oracle(spec, cfg.ground_dim, seed=e.env_seed)
    wm = wmmod.WorldModel(
        spec.obs_dim, spec.action_dim, latent_dim=cfg.latent_dim,
        hidden_dim=cfg.recurrent_dim, ground_dim=cfg.ground_dim,
        ensemble_size=cfg.ensemble_size, width=cfg.net_width,
        seed=manifest["seed"], vae_ground=cfg.vae_ground)
    ac = imag.ActorCritic(cfg.recurrent_dim + cfg.latent_dim, spec.action_dim,
                          width=cfg.net_width, seed=manifest["seed"])
    ckpt = manifest["artifacts"]["checkpoints"]
    ad.load_params(os.path.join(run_dir, ckpt["wm"]), wm.params)
    ad.load_params(os.path.join(run_dir, ckpt["actor"]), ac.actor.params)
    ad.load_params(os.path.join(run_dir, ckpt["critic"]), ac.critic.params)
    return spec, oracle, wm, ac


def collect_real_trajectory(spec, oracle, wm, ac, cfg, seed, min_len):
    """Roll the deterministic policy until min_len transitions are gathered,
    returning observations, actions, and model-space groundings."""
    rng = rngmod.stream(seed, "dfm-collect")
    obs_rows, act_rows, ground_rows = [], [], []

    def grounding(ob):
        if cfg.no_ground:
            return wm.constant_grounding(1).data[0]
        raw = envmod.grounding_vector(oracle, ob)
        return wm.project_grounding(raw[None]).data[0]

    for _ in range(20):
        if len(act_rows) >= min_len:
            break
        state, obs = envmod.env_reset(spec, rng)
        segment_obs = [obs.vector]
        segment_ground = [grounding(obs)]
        segment_act = []
        h = wm.initial_hidden()
        done = False
        while not done:
            q = wmmod.posterior(wm, h, obs.vector)
            z = Tensor(q.mean.data.copy())
            feat = ad.concat([h, z], axis=-1)
            a = np.tanh(ac.actor_dist(feat).mean.data)
            h = wm.advance_hidden(h, z, a).detach()
            state, obs, _, done = envmod.env_step(spec, state, a, rng)
            segment_obs.append(obs.vector)
            segment_ground.append(grounding(obs))
            segment_act.append(np.asarray(a).reshape(spec.action_dim))
        if len(segment_act) > len(act_rows):
            obs_rows = segment_obs
            ground_rows = segment_ground
            act_rows = segment_act
    return metmod.RealTrajectory(np.stack(obs_rows), np.stack(act_rows),
                                 np.stack(ground_rows))


def aggregate(run_glob, metric="iqm", baseline_glob=None, resamples=50_000,
              seed=0, level=0.95):
    """Report dict over matching run directories: point estimate + CI."""
    run_dirs = sorted(d for d in globmod.glob(run_glob) if
                      os.path.exists(os.path.join(d, "manifest.json")))
    if not run_dirs:
        raise FileNotFoundError(f"no run records match {run_glob!r}")
    scores = {}
    for d in run_dirs:
        manifest, cfg = load_run(d)
        if manifest["status"] != "ok":
            log.warning("skipping failed run %s", d)
            continue
        scores.setdefault(cfg.env.kind, []).append(manifest["final_eval_return"])
    sm = evalstats.ScoreMatrix(scores)
    other = None
    if metric == "pi":
        if baseline_glob is None:
            raise UsageError("--metric pi requires --baseline")
        base_dirs = sorted(d for d in globmod.glob(baseline_glob) if
                           os.path.exists(os.path.join(d, "manifest.json")))
        if not base_dirs:
            raise FileNotFoundError(f"no run records match {baseline_glob!r}")
        bscores = {}
        for d in base_dirs:
            manifest, cfg = load_run(d)
            if manifest["status"] == "ok":
                bscores.setdefault(cfg.env.kind, []).append(
                    manifest["final_eval_return"])
        other = evalstats.ScoreMatrix(bscores)
    lo, hi, point = evalstats.stratified_bootstrap_ci(
        sm, metric, n_resamples=resamples, seed=seed, level=level, other=other)
    report = {
        "metric": metric,
        "runs": len(run_dirs),
        "tasks": sm.tasks,
        "point": point,
        "ci_lo": lo,
        "ci_hi": hi,
        "level": level,
        "resamples": resamples,
        "seed": seed,
    }
    if metric == "iqm":
        report["optimality_gap"] = evalstats.optimality_gap(point)
    return report


# ---- subcommand bodies ----

def cmd_train(args):
    cfg = cfgmod.load_config(args.config)
    t0 = time.time()
    trainer = imag.Trainer(cfg, args.seed)
    try:
        trainer.train()
    except FloatingPointError as exc:
        write_run_record(args.out, cfg, args.seed, trainer, time.time() - t0,
                         status="failed", diagnostics=str(exc))
        log.error("run failed: %s", exc)
        return 2
    manifest = write_run_record(args.out, cfg, args.seed, trainer,
                                time.time() - t0)
    print(f"run ok: {args.out} final_eval_return="
          f"{manifest['final_eval_return']:.6g}")
    return 0


def cmd_dfm(args):
    manifest, cfg = load_run(args.run)
    spec, oracle, wm, ac = rebuild_model(args.run, manifest, cfg)
    traj = collect_real_trajectory(spec, oracle, wm, ac, cfg,
                                   manifest["seed"], args.horizon + 1)
    if len(traj) < args.horizon + 1:
        log.error("episode too short (%d) for horizon %d", len(traj),
                  args.horizon)
        return 2
    report = metmod.dfm(wm, traj, args.horizon, particles=args.particles,
                        seed=manifest["seed"])
    out_json = os.path.join(args.run, f"dfm_h{args.horizon}.json")
    with open(out_json, "w") as f:
        json.dump(report.to_dict(), f, indent=1)
    out_csv = os.path.join(args.run, f"dfm_h{args.horizon}.csv")
    with open(out_csv, "w") as f:
        f.write("offset,kl\n")
        for i, v in enumerate(report.per_step_kl, start=1):
            f.write(f"{i},{v:.10g}\n")
    print(f"dfm({args.horizon}) = {report.mean:.6g}  -> {out_json}")
    return 0


def cmd_verify_theory(args):
    try:
        report = theory.run_verification(trials=args.trials, seed=args.seed)
    except AssertionError as exc:
        log.error("theory verification failed: %s", exc)
        return 3
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=1)
    print(json.dumps(report, indent=1))
    return 0


def cmd_stats(args):
    try:
        report = aggregate(args.runs, metric=args.metric,
                           baseline_glob=args.baseline,
                           resamples=args.resamples, seed=args.seed)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return 2
    print(json.dumps(report, indent=1))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=1)
        csv_path = os.path.splitext(args.out)[0] + ".csv"
        with open(csv_path, "w") as f:
            f.write("metric,point,ci_lo,ci_hi\n")
            f.write(f"{report['metric']},{report['point']:.10g},"
                    f"{report['ci_lo']:.10g},{report['ci_hi']:.10g}\n")
    return 0


def cmd_distill(args):
    manifest, cfg = load_run(args.run)
    spec, oracle, wm, _ = rebuild_model(args.run, manifest, cfg)
    seed = manifest["seed"]
    dp = wmmod.DistillParams.create(spec.obs_dim, cfg.ground_dim,
                                    width=cfg.net_width,
                                    tau_distill=cfg.tau_distill, seed=seed)
    rng = rngmod.stream(seed, "cli-distill")
    obs_pool = []
    while len(obs_pool) < max(4 * cfg.distill_batch, 256):
        state, obs = envmod.env_reset(spec, rng)
        done = False
        while not done:
            obs_pool.append(obs)
            a = rng.uniform(-1.0, 1.0, size=spec.action_dim)
            state, obs, _, done = envmod.env_step(spec, state, a, rng)
    steps = 0
    while not dp.retired and steps < args.max_steps:
        batch = [obs_pool[rng.integers(len(obs_pool))]
                 for _ in range(cfg.distill_batch)]
        obs_arr = np.stack([o.vector for o in batch])
        raw = np.stack([envmod.grounding_vector(oracle, o) for o in batch])
        wmmod.distill_step(dp, wm, obs_arr, raw)
        steps += 1
    held = [obs_pool[rng.integers(len(obs_pool))] for _ in range(128)]
    obs_arr = np.stack([o.vector for o in held])
    raw = np.stack([envmod.grounding_vector(oracle, o) for o in held])
    target = wmmod.distill_teacher_target(wm, raw)
    pred = wmmod.student_grounding(dp, obs_arr)
    heldout = float(np.mean(np.sum((pred - target) ** 2, axis=1)))
    report = {"retired": dp.retired, "steps": steps,
              "running_loss": dp.running_loss, "heldout_mse": heldout}
    with open(os.path.join(args.run, "distill.json"), "w") as f:
        json.dump(report, f, indent=1)
    print(json.dumps(report, indent=1))
    return 0


# ---- argument plumbing ----

def build_parser():
    p = _Parser(prog="girl", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one training experiment")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("dfm", help="measure drift fidelity of a finished run")
    d.add_argument("--run", required=True)
    d.add_argument("--horizon", type=int, required=True)
    d.add_argument("--particles", type=int, default=256)
    d.set_defaults(func=cmd_dfm)

    v = sub.add_parser("verify-theory", help="numeric bound verification")
    v.add_argument("--trials", type=int, default=300)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify_theory)

    s = sub.add_parser("stats", help="aggregate statistics over run records")
    s.add_argument("--runs", required=True)
    s.add_argument("--metric", choices=("iqm", "pi"), default="iqm")
    s.add_argument("--baseline", default=None)
    s.add_argument("--resamples", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_stats)

    di = sub.add_parser("distill", help="distill the grounding teacher")
    di.add_argument("--run", required=True)
    di.add_argument("--max-steps", type=int, default=2_000)
    di.set_defaults(func=cmd_distill)
    return p


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("GIRL_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        log.error("run failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())

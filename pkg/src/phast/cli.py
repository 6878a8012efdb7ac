"""Command-line runner: gen-data, train, eval, control, report.

Outputs are a pure function of (config, input files, seeds). Timestamps go
only to ``run.log`` in the output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, from_dict, to_dict
from .control import (ControlGains, ControlSettings, FiniteDifferenceEstimator, LearnedObserverEstimator,
                      MapSmootherEstimator, ModelBasedEstimator, OracleEstimator, aggregate_trials, gains_hash,
                      run_control_batch, sample_regime_states, train_control_observer)
from .envs import generate_dataset, get_env
from .errors import ConfigError, PhastError
from .factory import build_model, data_stats
from .metrics import aggregate, rollout_eval
from .training import Trainer

__all__ = ["main", "build_parser", "resolve_config"]

log = logging.getLogger("phast")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def resolve_config(args) -> ExperimentConfig:
    """File values, then flag overrides."""
    raw = io.read_json(args.config) if getattr(args, "config", None) else {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    over = {}
    if getattr(args, "env", None):
        over["env"] = args.env
    if getattr(args, "regime", None):
        over["regime"] = args.regime
    seeds = getattr(args, "seeds", None)
    if seeds:
        over["seeds"] = list(seeds)
    cfg = from_dict(raw)
    if over:
        cfg = from_dict(over, cfg)
    if getattr(args, "epochs", None) is not None:
        cfg = from_dict({"train": {"epochs": args.epochs}}, cfg)
    return cfg


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    env = io.env_out_dir()
    return env if env is not None else Path("runs")


def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    return max(1, int(os.environ.get("PHAST_JOBS", "1")))


def _setup_logging(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    log.handlers.clear()
    log.setLevel(logging.INFO)
    fh = logging.FileHandler(out / "run.log")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(logging.Formatter("%(message)s"))
    log.addHandler(fh)
    log.addHandler(sh)


def _data_dir(out: Path, cfg: ExperimentConfig) -> Path:
    return out / "data" / cfg.env / f"seed{cfg.data.seed}"


def _run_dir(out: Path, cfg: ExperimentConfig, seed: int | None = None) -> Path:
    d = out / cfg.env / cfg.regime
    return d if seed is None else d / f"seed{seed}"


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, out: Path, force: bool = False):
    env = get_env(cfg.env)
    ds = generate_dataset(env, cfg.data.sizes, seed=cfg.data.seed, T=cfg.data.T)
    d = _data_dir(out, cfg)
    files = io.save_dataset(ds, d, force=force)
    log.info("wrote %d files to %s", len(files), d)
    return d


def _load_or_generate(cfg: ExperimentConfig, out: Path):
    d = _data_dir(out, cfg)
    if not (d / "train.phds").exists():
        log.info("dataset missing; generating into %s", d)
        cmd_gen_data(cfg, out)
    ds = io.load_dataset(d)
    if ds.env.name != cfg.env:
        raise ConfigError(f"dataset env {ds.env.name} does not match config env {cfg.env}")
    for split in ("train", "val", "test"):
        if split not in ds.splits:
            raise ConfigError(f"dataset in {d} lacks the {split} split")
        if ds[split].q.shape[-1] != ds.env.n_dof:
            raise ConfigError(f"dataset n_dof {ds[split].q.shape[-1]} does not match {ds.env.n_dof}")
    return ds


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _build(cfg: ExperimentConfig, ds, seed: int):
    stats = data_stats(ds.env, ds["train"].q)
    return build_model(ds.env, cfg.regime, cfg.model, seed, stats)


def _save(trainer: Trainer, cfg: ExperimentConfig, path: Path, seed: int) -> None:
    params = trainer.params
    best = trainer.best
    selected = best[2] if best is not None else params.snapshot()
    meta = {"env": cfg.env, "regime": cfg.regime, "seed": seed, "config": to_dict(cfg),
            "best_epoch": None if best is None else best[1],
            "best_val_mse": None if best is None else best[0], "epochs_run": trainer.epoch}
    resume = {"epoch": trainer.epoch, "params": params.snapshot(), "optimizer": trainer.opt.state(),
              "best": best, "evaluations": trainer.evaluations, "history": trainer.history}
    io.save_checkpoint(path, params=selected, trainable={n: params.is_trainable(n) for n in params.names()},
                       meta=meta, resume=resume)


def make_trainer(cfg: ExperimentConfig, ds, seed: int) -> Trainer:
    model, observer, canon = _build(cfg, ds, seed)
    return Trainer(model, observer, canon, ds["train"].q, ds["val"].q, ds.env.dt, cfg.weights, cfg.train, seed)


def restore_trainer(trainer: Trainer, ckpt: dict) -> Trainer:
    r = ckpt["resume"]
    trainer.params.load(r["params"])
    trainer.opt.load_state(r["optimizer"])
    trainer.epoch = int(r["epoch"])
    trainer.best = r["best"]
    trainer.evaluations = list(r["evaluations"])
    trainer.history = list(r["history"])
    return trainer


def train_seed(cfg_dict: dict, out: str, seed: int, force: bool = False, resume: bool = False) -> str:
    cfg = from_dict(cfg_dict)
    out = Path(out)
    ds = _load_or_generate(cfg, out)
    run = _run_dir(out, cfg, seed)
    run.mkdir(parents=True, exist_ok=True)
    ckpt_path, hist_path = run / "checkpoint.json", run / "history.jsonl"
    trainer = make_trainer(cfg, ds, seed)
    if ckpt_path.exists():
        if resume:
            restore_trainer(trainer, io.load_checkpoint(ckpt_path))
        elif not force:
            raise FileExistsError(f"{ckpt_path} exists; pass --force to retrain or --resume to continue")
    io.write_json(run / "config.json", to_dict(cfg))
    io.write_jsonl(hist_path, trainer.history)

    def on_epoch(rec):
        io.append_jsonl(hist_path, rec)
        _save(trainer, cfg, ckpt_path, seed)
        log.info("%s/%s seed %d epoch %d loss %.6g%s", cfg.env, cfg.regime, seed, rec["epoch"],
                 rec["loss_total"], f" val {rec['val_mse']:.6g}" if "val_mse" in rec else "")

    trainer.run(callback=on_epoch)
    _save(trainer, cfg, ckpt_path, seed)
    return str(ckpt_path)


def _map_seeds(fn, cfg: ExperimentConfig, out: Path, jobs: int, *extra):
    args = [(to_dict(cfg), str(out), s, *extra) for s in cfg.seeds]
    _load_or_generate(cfg, out)  # generate once before workers fork
    if jobs <= 1 or len(args) == 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def cmd_train(cfg: ExperimentConfig, out: Path, force=False, resume=False, jobs=1):
    return _map_seeds(train_seed, cfg, out, jobs, force, resume)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def load_trained(cfg: ExperimentConfig, ds, seed: int, ckpt_path: Path):
    ckpt = io.load_checkpoint(ckpt_path)
    meta = ckpt["meta"]
    if meta["env"] != cfg.env or meta["regime"] != cfg.regime:
        raise ConfigError(f"checkpoint {ckpt_path} is for {meta['env']}/{meta['regime']}")
    saved = from_dict(meta["config"])
    model, observer, canon = _build(saved, ds, seed)
    model.params.load(ckpt["params"])
    return model, observer, canon


def eval_seed(cfg_dict: dict, out: str, seed: int) -> dict:
    cfg = from_dict(cfg_dict)
    out = Path(out)
    ds = _load_or_generate(cfg, out)
    run = _run_dir(out, cfg, seed)
    model, observer, canon = load_trained(cfg, ds, seed, run / "checkpoint.json")
    rep = rollout_eval(model, observer, canon, ds.env, ds["test"].q, cfg.eval.K, cfg.eval.horizons,
                       cfg.eval.takeover)
    io.write_json(run / "metrics.json", rep)
    return rep


def cmd_eval(cfg: ExperimentConfig, out: Path, jobs=1):
    reports = _map_seeds(eval_seed, cfg, out, jobs)
    agg = aggregate(reports)
    d = _run_dir(out, cfg)
    io.write_json(d / "metrics.json", {"env": cfg.env, "regime": cfg.regime, "seeds": list(cfg.seeds),
                                       "per_seed": reports, "aggregate": agg})
    keys = sorted(set().union(*[r.keys() for r in reports]))
    rows = [{"env": cfg.env, "regime": cfg.regime, "seed": s, **r} for s, r in zip(cfg.seeds, reports)]
    rows.append({"env": cfg.env, "regime": cfg.regime, "seed": "mean",
                 **{k: agg[f"{k}_mean"] for k in keys}})
    rows.append({"env": cfg.env, "regime": cfg.regime, "seed": "std", **{k: agg[f"{k}_std"] for k in keys}})
    io.write_csv(d / "metrics.csv", rows, ["env", "regime", "seed"] + keys)
    io.write_json(d / "config.json", to_dict(cfg))
    log.info("wrote %s", d / "metrics.csv")
    return reports, agg


# ---------------------------------------------------------------------------
# control
# ---------------------------------------------------------------------------


def _observer_noise(spec, sigma):
    if spec == "matched":
        return float(sigma)
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, (list, tuple)) and len(spec) == 3 and spec[0] == "uniform":
        return ("uniform", float(spec[1]), float(spec[2]))
    raise ConfigError(f"invalid observer_noise {spec!r}")


def cmd_control(cfg: ExperimentConfig, out: Path, force=False):
    c = cfg.control
    plant = get_env(c.plant)
    if plant.n_dof != 1 or not plant.angular[0]:
        raise ConfigError("the control harness needs a single-joint pendulum plant")
    gains = ControlGains(c.k_c, c.d_inj, c.k_xi, c.q_star)
    settings = ControlSettings(c.dt, c.T_ctl, c.success_tol)
    seed = cfg.seeds[0]
    d = out / "control"
    d.mkdir(parents=True, exist_ok=True)
    trials_path = d / "control_trials.jsonl"
    if trials_path.exists() and not force:
        raise FileExistsError(f"{trials_path} exists; pass --force to overwrite")
    q0s, p0s, labels = [], [], []
    for regime in c.regimes:
        q0, p0 = sample_regime_states(plant, regime, c.trials_per_regime, seed)
        q0s.append(q0)
        p0s.append(p0)
        labels += [(regime, i) for i in range(c.trials_per_regime)]
    q0, p0 = np.concatenate(q0s), np.concatenate(p0s)
    noise_seeds = [(seed, "control", "noise", r, i) for r, i in labels]
    chash = gains_hash(gains, settings, plant, seed)

    model = None
    if "model_based" in c.methods:
        if not c.checkpoint:
            raise ConfigError("the model_based method needs control.checkpoint")
        ckpt = io.load_checkpoint(c.checkpoint)
        saved = from_dict(ckpt["meta"]["config"])
        model, _, _ = build_model(get_env(saved.env), saved.regime, saved.model, ckpt["meta"]["seed"])
        model.params.load(ckpt["params"])

    records, summary = [], []
    for sigma in c.sigmas:
        for method in c.methods:
            if method == "oracle":
                est = OracleEstimator(plant)
            elif method == "fd":
                est = FiniteDifferenceEstimator(c.dt)
            elif method == "map":
                est = MapSmootherEstimator(c.dt, sigma, c.map_window, c.sigma_a)
            elif method == "observer":
                net = train_control_observer(plant, gains, _observer_noise(c.observer_noise, sigma), seed, settings)
                est = LearnedObserverEstimator(net, c.dt)
            elif method == "model_based":
                est = ModelBasedEstimator(model)
            else:
                raise ConfigError(f"unknown control method {method!r}")
            recs = run_control_batch(plant, gains, est, sigma, q0, p0, noise_seeds, settings)
            for (regime, i), r in zip(labels, recs):
                records.append({"sigma": sigma, "method": method, "regime": regime, "trial": i,
                                "config_hash": chash, **r})
            agg = aggregate_trials(recs)
            summary.append({"sigma": sigma, "method": method, **agg})
            log.info("control sigma=%g %s success=%.2f effort=%.4g vel_err=%.4g", sigma, method, agg["success"],
                     agg["effort"], agg["velocity_error"])
    if len({r["config_hash"] for r in records}) != 1:
        raise ConfigError("control variants do not share gains and seeds")
    io.write_jsonl(trials_path, records)
    io.write_csv(d / "control_summary.csv", summary,
                 ["sigma", "method", "success", "final_error", "effort", "velocity_error", "n_trials"])
    io.write_json(d / "config.json", to_dict(cfg))
    return records, summary


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(run_dirs, out_file: Path):
    rows = []
    for d in run_dirs:
        for path in sorted(Path(d).rglob("metrics.csv")):
            rows += [r for r in io.read_csv(path) if r.get("seed") not in ("mean", "std")]
    if not rows:
        raise ConfigError("no metrics.csv found under the given run directories")
    rows.sort(key=lambda r: (r.get("env", ""), r.get("regime", ""), int(r.get("seed") or 0)))
    metrics = sorted(set().union(*[r.keys() for r in rows]) - {"env", "regime", "seed"})
    out_file.parent.mkdir(parents=True, exist_ok=True)
    io.write_csv(out_file, rows, ["env", "regime", "seed"] + metrics)
    log.info("wrote %s (%d rows)", out_file, len(rows))
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phast", description="Port-Hamiltonian learning from positions.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (default $PHAST_OUT_DIR or ./runs)")
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        p.add_argument("--jobs", type=int, default=None, help="worker processes (default $PHAST_JOBS or 1)")
        if data:
            p.add_argument("--env")
            p.add_argument("--regime")
            p.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+")
            p.add_argument("--epochs", type=int)

    common(sub.add_parser("gen-data", help="simulate and write dataset splits"))
    p = sub.add_parser("train", help="train one model per seed")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from the saved training state")
    common(sub.add_parser("eval", help="evaluate trained checkpoints"))
    common(sub.add_parser("control", help="run the closed-loop estimator grid"))
    p = sub.add_parser("report", help="merge metric tables across runs")
    p.add_argument("runs", nargs="+", help="run directories to scan for metrics.csv")
    common(p, data=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = _out_dir(args)
    _setup_logging(out)
    try:
        if args.command == "report":
            cmd_report(args.runs, out / "report.csv")
            return 0
        cfg = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            cmd_gen_data(cfg, out, args.force)
        elif args.command == "train":
            cmd_train(cfg, out, args.force, args.resume, _jobs(args))
        elif args.command == "eval":
            cmd_eval(cfg, out, _jobs(args))
        elif args.command == "control":
            cmd_control(cfg, out, args.force)
    except (PhastError, FileExistsError, FileNotFoundError) as exc:
        log.error("error: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: simulate | train | eval | track | gradcheck | datascale.

All commands are deterministic under a fixed --seed; every result is a file
(CSV/JSON/binary container) so plotting stays external.  Exit codes: 0 on
success, 2 for configuration problems, 3 for data/file problems, 4 for
numeric failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigView, load_config
from .errors import ConfigError, MemtrackError, NonFinite, StoreError
from .filtering import TrackerConfig, run_filter
from .metrics import MetricsReport, evaluate_run
from .models import NominalModel, ScenarioConfig, nominal_cv_model
from .network import forward_sequence, init_params
from .simulate import Dataset, generate_case, generate_dataset
from .store import (
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
    write_report,
)
from .training import TrainConfig, grad_check, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_NOISE_LEVELS = [(0.4, 0.6), (0.6, 0.8), (0.8, 1.0), (1.0, 1.2)]

MASK_TOKENS = {"jeb": "mask_evolution", "jub": "mask_update", "mub": "mask_memory"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memtrack",
        description="Memory-aided random-matrix extended-object tracking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate benchmark datasets")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cases", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--levels", default=None,
                   help="noise levels as sw:sv pairs, e.g. 0.4:0.6,0.6:0.8")
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for interface compatibility; runs serially")

    p = sub.add_parser("train", help="train the compensation network")
    p.add_argument("dataset")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", default=None, help="history CSV (default: <out>.history.csv)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--memory-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask", default="", help="comma list from {jeb, jub, mub}")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("eval", help="evaluate on the test split")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--baseline", action="store_true",
                   help="zero-compensation filter instead of a checkpoint")
    p.add_argument("--compare", action="store_true",
                   help="run both baseline and checkpoint, emit a side-by-side table")
    p.add_argument("--out", required=True, help="report path prefix")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--polygon", type=int, default=256)
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("track", help="dump one case's trajectory and extents")
    p.add_argument("dataset")
    p.add_argument("--case", type=int, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file")

    p = sub.add_parser("gradcheck", help="verify BPTT gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--memory-dim", type=int, default=6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true",
                   help="damage one adjoint to prove the harness catches it")

    p = sub.add_parser("datascale", help="test RMSE at a ladder of training-set sizes")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--sizes", default=None, help="comma list, default 100,200,1000")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    return parser


def _load_view(path) -> ConfigView:
    if path is None:
        return ConfigView()
    return load_config(path)


def _scenario_from(view: ConfigView, args) -> ScenarioConfig:
    cfg = ScenarioConfig(
        steps=view.get_int("scenario.steps", 140),
        dt=view.get_float("scenario.dt", 1.0),
        sigma_w=view.get_float("scenario.sigma_w", 0.4),
        sigma_v=view.get_float("scenario.sigma_v", 0.6),
        axis_major=view.get_float("scenario.axis_major", 10.0),
        axis_minor=view.get_float("scenario.axis_minor", 2.0),
        speed=view.get_float("scenario.speed", 10.0),
        scatter_rate=view.get_float("scenario.scatter_rate", 20.0),
        cases=view.get_int("scenario.cases", 600),
        train_fraction=view.get_float("scenario.train_fraction", 0.8),
        turn_rate_min=view.get_float("scenario.turn_rate_min", 1.0),
        turn_rate_max=view.get_float("scenario.turn_rate_max", 5.0),
        segment_min=view.get_int("scenario.segment_min", 10),
        segment_max=view.get_int("scenario.segment_max", 40),
        regimes=view.get_str("scenario.regimes", "cv_ct"),
        process_noise=view.get_str("scenario.process_noise", "direct"),
        seed=view.get_int("scenario.seed", 0),
    )
    if getattr(args, "cases", None) is not None:
        cfg = replace(cfg, cases=args.cases)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, steps=args.steps)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _tracker_from(view: ConfigView) -> TrackerConfig:
    return TrackerConfig(
        pos_var=view.get_float("tracker.pos_var", 1.0),
        vel_var=view.get_float("tracker.vel_var", 25.0),
        init_dof=view.get_float("tracker.init_dof", 10.0),
        min_extent=view.get_float("tracker.min_extent", 1.0),
    )


def _model_from(view: ConfigView, dataset_cfg: ScenarioConfig) -> NominalModel:
    return nominal_cv_model(
        sigma_w=view.get_float("model.q_sigma", dataset_cfg.sigma_w),
        dt=dataset_cfg.dt,
        delta=view.get_float("model.delta", 7.0),
        mean_preserving_transition=view.get_bool("model.mean_preserving_transition", True),
        feldmann_update=view.get_bool("model.feldmann_update", False),
    )


def _train_config_base(view: ConfigView, mask_spec: str = "") -> TrainConfig:
    tokens = [t.strip() for t in mask_spec.split(",") if t.strip()]
    unknown = [t for t in tokens if t not in MASK_TOKENS]
    if unknown:
        raise ConfigError(f"unknown mask tokens {unknown}; valid: jeb, jub, mub")
    masks = {MASK_TOKENS[t]: True for t in tokens}
    return TrainConfig(
        learning_rate=view.get_float("train.learning_rate", 1e-3),
        momentum=view.get_float("train.momentum", 0.9),
        epochs=view.get_int("train.epochs", 60),
        batch_size=view.get_int("train.batch_size", 8),
        l2=view.get_float("train.l2", 1e-4),
        folds=view.get_int("train.folds", 5),
        seed=view.get_int("train.seed", 0),
        memory_dim=view.get_int("train.memory_dim", 64),
        clip=view.get_float("train.clip", 5.0),
        val_fraction=view.get_float("train.val_fraction", 0.2),
        tracker=_tracker_from(view),
        history_metric_cases=view.get_int("train.history_metric_cases", 8),
        history_polygon=view.get_int("train.history_polygon", 64),
        **masks,
    )


def _train_config_from(view: ConfigView, args) -> TrainConfig:
    cfg = _train_config_base(view, getattr(args, "mask", ""))
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.folds is not None:
        overrides["folds"] = args.folds
    if args.batch is not None:
        overrides["batch_size"] = args.batch
    if args.memory_dim is not None:
        overrides["memory_dim"] = args.memory_dim
    if args.seed is not None:
        overrides["seed"] = args.seed
    return replace(cfg, **overrides) if overrides else cfg


def _parse_levels(spec: str):
    pairs = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 2:
            raise ConfigError(f"--levels expects sw:sv pairs, got {chunk!r}")
        pairs.append((float(parts[0]), float(parts[1])))
    if not pairs:
        raise ConfigError("--levels produced no pairs")
    return pairs


def cmd_simulate(args) -> int:
    view = _load_view(args.config)
    base = _scenario_from(view, args)
    if args.levels is not None:
        levels = _parse_levels(args.levels)
    else:
        levels = view.get_float_pairs("simulate.levels", DEFAULT_NOISE_LEVELS)
    os.makedirs(args.out, exist_ok=True)
    for li, (sw, sv) in enumerate(levels):
        cfg = replace(base, sigma_w=sw, sigma_v=sv, seed=base.seed + li)
        dataset = generate_dataset(cfg)
        name = f"dataset_sw{sw:g}_sv{sv:g}.mtds"
        path = os.path.join(args.out, name)
        write_dataset(dataset, path)
        mean_n = float(np.mean([f.count for c in dataset.cases for f in c.frames]))
        print(f"{name}: cases={cfg.cases} steps={cfg.steps} "
              f"train/test={len(dataset.train_idx)}/{len(dataset.test_idx)} "
              f"mean scatterers={mean_n:.2f}")
    return EXIT_OK


def _history_csv(history, path) -> None:
    lines = ["fold,epoch,train_loss,val_loss,val_rmse,val_iou,val_gwd"]
    for rec in history:
        lines.append(
            f"{rec.fold},{rec.epoch},{rec.train_loss:.17g},{rec.val_loss:.17g},"
            f"{rec.val_rmse:.17g},{rec.val_iou:.17g},{rec.val_gwd:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    view = _load_view(args.config)
    dataset = read_dataset(args.dataset)
    model = _model_from(view, dataset.config)
    cfg = _train_config_from(view, args)
    params, history, folds = train(dataset, model, cfg)
    digest = hashlib.sha256(
        json.dumps({k: str(v) for k, v in vars(cfg).items()}, sort_keys=True).encode()
    ).hexdigest()[:16]
    write_checkpoint(params, args.out, train_config_digest=digest)
    _history_csv(history, args.history or (args.out + ".history.csv"))
    for rep in folds:
        print(f"fold {rep.fold}: best epoch {rep.best_epoch} "
              f"val loss {rep.best_val_loss:.6g}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _posteriors_for(dataset: Dataset, model, tracker, params=None):
    runs = []
    for idx in dataset.test_idx:
        frames = dataset.cases[int(idx)].frames
        if params is None:
            states, exts, _ = run_filter(frames, model, tracker)
        else:
            states, exts, _ = forward_sequence(params, frames, model, tracker)
        runs.append((states, exts))
    return runs


def _report_line(tag: str, rep: MetricsReport) -> str:
    return (f"{tag:10s} rmse={rep.position_rmse:.4f} m  iou={rep.mean_iou:.4f}  "
            f"gwd={rep.mean_gwd:.4f}  peaks: err={rep.peak_position_error:.4f} "
            f"iou={rep.peak_iou:.4f} gwd={rep.peak_gwd:.4f}")


def cmd_eval(args) -> int:
    view = _load_view(args.config)
    dataset = read_dataset(args.dataset)
    model = _model_from(view, dataset.config)
    tracker = _tracker_from(view)
    if not args.baseline and not args.checkpoint and not args.compare:
        raise ConfigError("eval needs --checkpoint, --baseline, or --compare")
    if len(dataset.test_idx) == 0:
        raise StoreError("dataset has no test split")

    modes = []
    if args.compare:
        if not args.checkpoint:
            raise ConfigError("--compare needs --checkpoint for the learned row")
        modes = [("baseline", None), ("learned", read_checkpoint(args.checkpoint))]
    elif args.baseline:
        modes = [("baseline", None)]
    else:
        modes = [("learned", read_checkpoint(args.checkpoint))]

    rows = []
    for tag, params in modes:
        runs = _posteriors_for(dataset, model, tracker, params)
        report = evaluate_run(dataset, runs, polygon_order=args.polygon)
        suffix = f".{tag}" if len(modes) > 1 else ""
        write_report(report, f"{args.out}{suffix}.csv", "csv")
        write_report(report, f"{args.out}{suffix}.json", "json")
        rows.append((tag, report))
        print(_report_line(tag, report))
    if len(rows) == 2:
        with open(f"{args.out}.compare.csv", "w", encoding="utf-8") as fh:
            fh.write("mode,position_rmse,mean_iou,mean_gwd\n")
            for tag, rep in rows:
                fh.write(f"{tag},{rep.position_rmse:.17g},{rep.mean_iou:.17g},"
                         f"{rep.mean_gwd:.17g}\n")
    return EXIT_OK


def _ellipse_params(extent: np.ndarray):
    w, u = np.linalg.eigh(extent)
    major = np.sqrt(max(w[1], 0.0))
    minor = np.sqrt(max(w[0], 0.0))
    vec = u[:, 1]
    angle = float(np.arctan2(vec[1], vec[0]))
    if angle < -np.pi / 2:
        angle += np.pi
    elif angle >= np.pi / 2:
        angle -= np.pi
    return major, minor, angle


def cmd_track(args) -> int:
    from .filtering import extension_mean
    from . import ops

    view = _load_view(args.config)
    dataset = read_dataset(args.dataset)
    if not (0 <= args.case < len(dataset.cases)):
        raise StoreError(f"case index {args.case} out of range 0..{len(dataset.cases) - 1}")
    model = _model_from(view, dataset.config)
    tracker = _tracker_from(view)
    case = dataset.cases[args.case]
    if args.checkpoint:
        params = read_checkpoint(args.checkpoint)
        states, exts, _ = forward_sequence(params, case.frames, model, tracker)
    else:
        states, exts, _ = run_filter(case.frames, model, tracker)

    header = ("step,truth_px,truth_py,truth_vx,truth_vy,truth_a,truth_b,truth_angle,"
              "est_px,est_py,est_vx,est_vy,est_a,est_b,est_angle,n")
    lines = [header]
    for i, (st, ex) in enumerate(zip(states, exts)):
        k = i + 1
        tstate = case.truth.states[k]
        ta, tb, tang = _ellipse_params(case.truth.extents[k])
        mean = ops.value(st.mean)
        ea, eb, eang = _ellipse_params(np.asarray(ops.value(extension_mean(ex))))
        n = case.frames[k].count
        vals = list(tstate) + [ta, tb, tang] + list(mean) + [ea, eb, eang]
        lines.append(f"{k}," + ",".join(f"{v:.17g}" for v in vals) + f",{n}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")

    points_path = args.out + ".points.csv"
    with open(points_path, "w", encoding="utf-8") as fh:
        fh.write("step,x,y\n")
        for k, frame in enumerate(case.frames):
            for p in frame.points:
                fh.write(f"{k},{p[0]:.17g},{p[1]:.17g}\n")
    print(f"track written to {args.out} ({len(states)} rows); points to {points_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = ScenarioConfig(steps=max(2, args.steps), cases=1, sigma_w=0.4, sigma_v=0.6,
                         seed=args.seed)
    case = generate_case(cfg, args.seed, 0)
    model = nominal_cv_model(sigma_w=cfg.sigma_w, dt=cfg.dt)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((args.seed, 0xC))))
    params = init_params(args.memory_dim, rng)
    for name, arr in params.arrays.items():
        params.arrays[name] = arr + 0.05 * rng.standard_normal(arr.shape)
    err = grad_check(params, case, model, eps=1e-5, corrupt=args.corrupt)
    status = "PASS" if err < args.tolerance else "FAIL"
    print(f"gradcheck {status}: max relative error {err:.3e} "
          f"(tolerance {args.tolerance:g}, K={cfg.steps}, memory_dim={args.memory_dim})")
    return EXIT_OK if err < args.tolerance else EXIT_NUMERIC


def cmd_datascale(args) -> int:
    view = _load_view(args.config)
    base = _scenario_from(view, args)
    sizes = (view.get_int_list("datascale.sizes", [100, 200, 1000])
             if args.sizes is None else [int(s) for s in args.sizes.split(",")])
    test_cases = view.get_int("datascale.test_cases", 25)
    epochs = args.epochs or view.get_int("datascale.epochs", 10)
    seed = args.seed if args.seed is not None else base.seed

    rows = []
    largest = max(sizes)
    cfg_all = replace(base, cases=largest + test_cases,
                      train_fraction=largest / (largest + test_cases), seed=seed)
    dataset_all = generate_dataset(cfg_all)
    model = _model_from(view, cfg_all)
    tracker = _tracker_from(view)

    baseline_runs = _posteriors_for(dataset_all, model, tracker, None)
    baseline_rep = evaluate_run(dataset_all, baseline_runs, polygon_order=64)
    rows.append(("baseline", baseline_rep))
    print(_report_line("baseline", baseline_rep))

    for size in sizes:
        subset = Dataset(
            cases=dataset_all.cases,
            train_idx=dataset_all.train_idx[:size],
            test_idx=dataset_all.test_idx,
            config=cfg_all,
            master_seed=seed,
        )
        cfg = replace(_train_config_base(view), epochs=epochs, folds=1, seed=seed)
        params, _, _ = train(subset, model, cfg)
        runs = _posteriors_for(dataset_all, model, tracker, params)
        rep = evaluate_run(dataset_all, runs, polygon_order=64)
        rows.append((str(size), rep))
        print(_report_line(str(size), rep))

    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("train_cases,position_rmse,mean_iou,mean_gwd\n")
        for tag, rep in rows:
            fh.write(f"{tag},{rep.position_rmse:.17g},{rep.mean_iou:.17g},"
                     f"{rep.mean_gwd:.17g}\n")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "train": cmd_train,
        "eval": cmd_eval,
        "track": cmd_track,
        "gradcheck": cmd_gradcheck,
        "datascale": cmd_datascale,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StoreError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFinite as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MemtrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

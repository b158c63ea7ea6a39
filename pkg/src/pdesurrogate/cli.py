"""Command-line entry points: generate, train, eval, bench, schedule.

Every subcommand takes `--config file.json` plus repeatable
`--set key=value` overrides on the flat dotted-key namespace, and writes
the fully resolved configuration next to its outputs. Exit codes are
stable and scriptable:

    0  success
    2  configuration problem (unknown key, bad value, malformed file)
    3  numerical failure (solver instability, training divergence)
    4  missing artifact (dataset, checkpoint, or config file not found)

Heavy modules load inside the handlers so `--help` and `schedule` stay
fast. The LEPP_THREADS environment variable (default 1) sets the worker
count for data generation; everything else is single-threaded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4


class MissingArtifactError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="flat dotted-key JSON config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pdesurrogate",
        description="Latent-space PDE surrogate: data, training, evaluation.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate trajectories into a dataset dir")
    _add_common(g)
    g.add_argument("--out", required=True, help="output dataset directory")

    t = sub.add_parser("train", help="train a surrogate on a dataset")
    _add_common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--resume", action="store_true",
                   help="continue from <out>/ckpt_last.lepp")

    e = sub.add_parser("eval", help="rollout metrics for a checkpoint")
    _add_common(e)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--ckpt", required=True, help="checkpoint file")
    e.add_argument("--out", default=None, help="report JSON path (default stdout)")
    e.add_argument("--split", default="test", choices=["test", "train"])

    b = sub.add_parser("bench", help="time the inference path")
    _add_common(b)
    b.add_argument("--ckpt", default=None,
                   help="checkpoint to bench; default compares fresh ssm vs mlp")
    b.add_argument("--out", default=None, help="stats JSON path (default stdout)")

    s = sub.add_parser("schedule", help="print a curriculum horizon table")
    _add_common(s)
    s.add_argument("--out", default=None, help="optional CSV path")
    return ap


def _load_dataset_dir(data_dir: str, split: str):
    from .pdedata import read_dataset, read_sidecar
    d = Path(data_dir)
    lepd = d / f"{split}.lepd"
    sidecar = d / "dataset.json"
    if not lepd.exists():
        raise MissingArtifactError(f"dataset file not found: {lepd}")
    if not sidecar.exists():
        raise MissingArtifactError(f"dataset sidecar not found: {sidecar}")
    return read_dataset(lepd), read_sidecar(sidecar)


def cmd_generate(args, cfg: dict) -> int:
    from .config import generate_spec_from, write_resolved
    from .pdedata import generate_dataset
    spec = generate_spec_from(cfg)
    out = Path(args.out)
    meta = generate_dataset(spec, out)
    write_resolved(cfg, out / "resolved_config.json")
    print(f"generated {meta['count_train']}+{meta['count_test']} {spec.kind} "
          f"trajectories -> {out}")
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    from .config import model_config_from, train_config_from, write_resolved
    from .model import SurrogateModel
    from .training import load_training_checkpoint, train_run
    train_ds, meta = _load_dataset_dir(args.data, "train")
    tcfg = train_config_from(cfg)
    out = Path(args.out)

    if args.resume:
        ckpt = out / "ckpt_last.lepp"
        if not ckpt.exists():
            raise MissingArtifactError(f"cannot resume: {ckpt} not found")
        model, _, epoch_next, opt = load_training_checkpoint(ckpt)
        result = train_run(model, train_ds, tcfg, out, resume_from=(opt, epoch_next))
    else:
        mcfg = model_config_from(cfg, meta)
        model = SurrogateModel(mcfg, seed=cfg["model.seed"])
        result = train_run(model, train_ds, tcfg, out)
    write_resolved(cfg, out / "resolved_config.json")
    last = result["last"]
    tail = f"final loss {last['loss']:.6g}" if last else "no epochs run"
    print(f"trained {result['epochs_run']} epochs ({tail}); "
          f"checkpoint {result['checkpoint']}")
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    from .config import write_resolved
    from .evalbench import config_fingerprint, evaluate_model
    from .training import load_training_checkpoint
    ds, _ = _load_dataset_dir(args.data, args.split)
    ckpt = Path(args.ckpt)
    if not ckpt.exists():
        raise MissingArtifactError(f"checkpoint not found: {ckpt}")
    model, _, _, _ = load_training_checkpoint(ckpt)
    report = evaluate_model(model, ds, m=cfg["eval.m"],
                            start_stride=cfg["eval.start_stride"],
                            fingerprint=config_fingerprint(cfg))
    blob = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(blob + "\n")
        write_resolved(cfg, Path(args.out).with_name("resolved_config.json"))
        print(f"eval m={report.m} rollout rmse {report.rmse_rollout:.4f} "
              f"rel_l2 {report.rel_l2:.4f} (persistence rmse "
              f"{report.persistence_rmse_rollout:.4f} rel_l2 "
              f"{report.persistence_rel_l2:.4f}) -> {args.out}")
    else:
        print(blob)
    return EXIT_OK


def cmd_bench(args, cfg: dict) -> int:
    from .config import model_config_from, write_resolved
    from .evalbench import compare_evolution_timing, time_inference
    from .model import InferenceEngine
    import numpy as np
    if args.ckpt is not None:
        from .training import load_training_checkpoint
        ckpt = Path(args.ckpt)
        if not ckpt.exists():
            raise MissingArtifactError(f"checkpoint not found: {ckpt}")
        model, _, _, _ = load_training_checkpoint(ckpt)
        rng = np.random.default_rng(cfg["model.seed"])
        c = model.config
        u0 = rng.standard_normal((c.bundle, c.channels, c.grid_h, c.grid_w))
        p = rng.standard_normal(c.d_p)
        stats = time_inference(InferenceEngine(model), u0, p, m=cfg["bench.m"],
                               span=cfg["bench.span"], reps=cfg["bench.reps"],
                               warmup=cfg["bench.warmup"])
        payload = {"model": stats.to_dict()}
        line = (f"bench {stats.span} m={stats.m}: median "
                f"{stats.median_s * 1e6:.1f}us over {stats.reps} reps")
    else:
        mcfg = model_config_from(cfg)
        out = compare_evolution_timing(mcfg, seed=cfg["model.seed"],
                                       m=cfg["bench.m"], reps=cfg["bench.reps"])
        payload = {"ssm": out["ssm"].to_dict(), "mlp": out["mlp"].to_dict(),
                   "ratio_median": out["ratio_median"]}
        line = (f"bench evolve m={cfg['bench.m']}: ssm "
                f"{out['ssm'].median_s * 1e6:.1f}us, mlp "
                f"{out['mlp'].median_s * 1e6:.1f}us, ratio "
                f"{out['ratio_median']:.3f}")
    blob = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(blob + "\n")
        write_resolved(cfg, Path(args.out).with_name("resolved_config.json"))
    else:
        print(blob)
    print(line)
    return EXIT_OK


def cmd_schedule(args, cfg: dict) -> int:
    from .config import schedule_spec_from
    from .curriculum import table
    rows = table(schedule_spec_from(cfg))
    lines = ["epoch,ratio,horizon"]
    lines += [f"{n},{r:.6f},{h}" for n, r, h in rows]
    text = "\n".join(lines)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n")
        print(f"schedule table ({len(rows)} rows) -> {args.out}")
    else:
        print(text)
    return EXIT_OK


_HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
             "bench": cmd_bench, "schedule": cmd_schedule}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .config import ConfigError, load_config
    try:
        cfg = load_config(args.config, args.overrides)
        return _HANDLERS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # numerical and unexpected failures
        from .autodiff import NonFiniteError
        from .checkpoint import CheckpointError
        from .pdedata import DatasetFormatError, SimulationError
        from .training import TrainingDivergedError
        if isinstance(e, (SimulationError, TrainingDivergedError, NonFiniteError)):
            print(f"numerical failure: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        if isinstance(e, (DatasetFormatError, CheckpointError)):
            print(f"unreadable artifact: {e}", file=sys.stderr)
            return EXIT_MISSING
        raise


if __name__ == "__main__":
    sys.exit(main())

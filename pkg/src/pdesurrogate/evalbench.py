"""Evaluation metrics, timing harness, and ablation sweeps.

Evaluation runs the raw-array inference engine (no graph construction)
over every valid rollout start of a dataset split, decoding at every
horizon step, and reports the single-step RMSE, the global RMSE over the
whole rollout block, the per-step error curve, and the same numbers for
the persistence baseline that simply repeats the start frame. Reports
carry a fingerprint of the resolved configuration so results can be
traced to the exact settings that produced them.

Timing uses perf_counter medians over a fixed rep count with warmup, and
refuses sample sizes too small to be meaningful. Every timed rep's output
feeds a checksum; reps of a deterministic engine must agree, so a
mismatch fails loudly rather than corrupting the measurement silently.
The harness allocates its sample buffer up front and keeps no per-rep
bookkeeping; numpy temporaries inside the engine are the only
allocations in the timed region.

Ablation cells each run in a child process through the command-line
interface (train, then eval, then bench), so a cell's wall-clock
measurements never share a process with other work and every row is
reproducible from its cell config file alone.
"""

from __future__ import annotations

import csv
import hashlib
import json
import subprocess
import sys
import time
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .model import InferenceEngine, ModelConfig, SurrogateModel
from .pdedata import Dataset

MIN_TIMING_REPS = 30
MIN_TIMING_WARMUP = 5


def rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def rel_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    denom = np.sqrt(np.sum(truth ** 2))
    return float(np.sqrt(np.sum((pred - truth) ** 2)) / (denom + 1e-30))


def config_fingerprint(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass
class EvalReport:
    kind: str                      # dataset kind
    evolution: str                 # stepper kind, or "persistence"
    m: int
    n_traj: int
    n_starts: int
    rmse_single: float             # horizon step 1
    rmse_rollout: float            # global RMSE over the full m-step block
    per_step_rmse: list            # [m] RMSE values, step 1..m
    rel_l2: float                  # relative L2 at the final step
    persistence_rmse_single: float
    persistence_rmse_rollout: float
    persistence_per_step_rmse: list
    persistence_rel_l2: float
    parameter_count: int
    seconds: float
    fingerprint: str
    inference: dict | None = None  # median/p10/p90 ms + reps/warmup/span when timed

    def to_dict(self) -> dict:
        return asdict(self)


def _valid_starts(t_frames: int, bundle: int, m: int, stride: int = 1):
    last = t_frames - bundle * (m + 1)
    if last < 0:
        raise ValueError(f"{t_frames} frames cannot support horizon {m}")
    return range(0, last + 1, stride)


def persistence_prediction(fields: np.ndarray, k: int, bundle: int) -> np.ndarray:
    """Baseline: the start frames, unchanged."""
    return fields[k:k + bundle]


def _accumulate(dataset: Dataset, m: int, bundle: int, stride: int,
                predict_steps):
    """Shared per-step error accumulation.

    predict_steps(fields, p, k) yields the prediction for steps 1..m in
    order; persistence errors come along for free since the truth frames
    are in hand anyway.
    """
    sse_model = np.zeros(m)
    sse_pers = np.zeros(m)
    sq_final = 0.0
    sse_model_final = sse_pers_final = 0.0
    n_starts = 0
    elems = 0
    for i in range(dataset.fields.shape[0]):
        fields = dataset.fields[i]
        p = dataset.params[i]
        for k in _valid_starts(fields.shape[0], bundle, m, stride):
            pers = persistence_prediction(fields, k, bundle)
            for j, pred in enumerate(predict_steps(fields, p, k), start=1):
                truth = fields[k + j * bundle:k + (j + 1) * bundle]
                e_m = float(np.sum((pred - truth) ** 2))
                e_p = float(np.sum((pers - truth) ** 2))
                sse_model[j - 1] += e_m
                sse_pers[j - 1] += e_p
                if j == m:
                    sq_final += float(np.sum(truth ** 2))
                    sse_model_final += e_m
                    sse_pers_final += e_p
                    elems = truth.size
            n_starts += 1
    n_el = max(n_starts * elems, 1)
    denom = np.sqrt(sq_final) + 1e-30
    per_step = np.sqrt(sse_model / n_el)
    per_step_pers = np.sqrt(sse_pers / n_el)
    return {
        "n_starts": n_starts,
        "rmse_single": float(per_step[0]),
        "rmse_rollout": float(np.sqrt(sse_model.sum() / (n_el * m))),
        "per_step_rmse": [float(v) for v in per_step],
        "rel_l2": float(np.sqrt(sse_model_final) / denom),
        "persistence_rmse_single": float(per_step_pers[0]),
        "persistence_rmse_rollout": float(np.sqrt(sse_pers.sum() / (n_el * m))),
        "persistence_per_step_rmse": [float(v) for v in per_step_pers],
        "persistence_rel_l2": float(np.sqrt(sse_pers_final) / denom),
    }


def evaluate_model(model: SurrogateModel, dataset: Dataset, m: int,
                   start_stride: int = 1, fingerprint: str = "") -> EvalReport:
    """Rollout metrics at horizon m over all (stride-sampled) starts.

    Encodes once per start, then decodes after every latent step for the
    per-step error curve.
    """
    engine = InferenceEngine(model)
    bundle = model.config.bundle
    t0 = time.perf_counter()

    def predict_steps(fields, p, k):
        z = engine.encode(fields[k:k + bundle])
        z_p = engine.encode_static(p)
        h = None
        for _ in range(m):
            z, h = engine.evolve(z, z_p, h)
            yield engine.decode(z)

    acc = _accumulate(dataset, m, bundle, start_stride, predict_steps)
    return EvalReport(
        kind=dataset.kind, evolution=model.config.evolution, m=m,
        n_traj=dataset.fields.shape[0],
        parameter_count=model.parameter_count(),
        seconds=time.perf_counter() - t0,
        fingerprint=fingerprint, **acc)


def persistence_baseline(dataset: Dataset, m: int, start_stride: int = 1,
                         bundle: int = 1, fingerprint: str = "") -> EvalReport:
    """The repeat-the-start predictor as a first-class report."""
    t0 = time.perf_counter()

    def predict_steps(fields, p, k):
        pers = persistence_prediction(fields, k, bundle)
        for _ in range(m):
            yield pers

    acc = _accumulate(dataset, m, bundle, start_stride, predict_steps)
    return EvalReport(
        kind=dataset.kind, evolution="persistence", m=m,
        n_traj=dataset.fields.shape[0], parameter_count=0,
        seconds=time.perf_counter() - t0, fingerprint=fingerprint, **acc)


# ---------------------------------------------------------------------- timing

@dataclass
class TimingStats:
    span: str
    m: int
    reps: int
    warmup: int
    median_s: float
    p10_s: float
    p90_s: float
    mean_s: float
    checksum: float
    timer_resolution_s: float
    resolution_warning: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def inference_dict(self) -> dict:
        """The EvalReport inference block, in milliseconds."""
        return {"median_ms": self.median_s * 1e3, "p10_ms": self.p10_s * 1e3,
                "p90_ms": self.p90_s * 1e3, "reps": self.reps,
                "warmup": self.warmup, "span": self.span, "m": self.m}


def time_inference(engine: InferenceEngine, u0: np.ndarray, p: np.ndarray,
                   m: int, span: str = "evolve", reps: int = 50,
                   warmup: int = 10) -> TimingStats:
    """Median-of-reps wall time for one span of the inference path.

    span "evolve" times only the m latent steps (encode/decode hoisted out
    of the timed region); "full" times encode + steps + decode.
    """
    if span not in ("evolve", "full"):
        raise ValueError(f"span must be evolve or full, got {span!r}")
    if reps < MIN_TIMING_REPS:
        raise ValueError(f"reps must be >= {MIN_TIMING_REPS}, got {reps}")
    if warmup < MIN_TIMING_WARMUP:
        raise ValueError(f"warmup must be >= {MIN_TIMING_WARMUP}, got {warmup}")

    if span == "evolve":
        z = engine.encode(u0)
        zp = engine.encode_static(p)
        run = lambda: engine.evolve_steps_fast(z, zp, m)
    else:
        run = lambda: engine.rollout_fast(u0, p, m)

    for _ in range(warmup):
        ref = run()
    ref_sum = float(np.sum(ref))

    times = np.empty(reps)
    for r in range(reps):
        t0 = time.perf_counter()
        out = run()
        times[r] = time.perf_counter() - t0
        s = float(np.sum(out))
        if s != ref_sum:
            raise RuntimeError(
                f"nondeterministic timed output: checksum {s!r} vs {ref_sum!r}")

    res = time.get_clock_info("perf_counter").resolution
    med = float(np.median(times))
    return TimingStats(
        span=span, m=m, reps=reps, warmup=warmup,
        median_s=med,
        p10_s=float(np.percentile(times, 10)),
        p90_s=float(np.percentile(times, 90)),
        mean_s=float(times.mean()),
        checksum=ref_sum,
        timer_resolution_s=res,
        resolution_warning=bool(med < 100.0 * res))


def compare_evolution_timing(base_config: ModelConfig, seed: int, m: int = 20,
                             reps: int = 50) -> dict:
    """ssm vs mlp stepping time on freshly initialized matched models."""
    rng = np.random.default_rng(seed)
    u0 = rng.standard_normal((base_config.bundle, base_config.channels,
                              base_config.grid_h, base_config.grid_w))
    p = rng.standard_normal(base_config.d_p)
    out = {}
    for kind in ("ssm", "mlp"):
        model = SurrogateModel(replace(base_config, evolution=kind), seed)
        engine = InferenceEngine(model)
        out[kind] = time_inference(engine, u0, p, m, span="evolve", reps=reps)
    out["ratio_median"] = out["ssm"].median_s / out["mlp"].median_s
    return out


# -------------------------------------------------------------------- ablation

ABLATION_COLUMNS = [
    # table columns consumed by the sweep reports
    "kind", "tau0", "schedule", "rmse_single", "rmse_rollout", "median_ms",
    "params",
    # bookkeeping extras
    "name", "status", "rel_l2", "persistence_rmse_rollout",
    "test_rmse_rollout", "test_rel_l2", "final_loss", "seconds", "error",
]


def _run_cli(args: list, cwd=None):
    return subprocess.run([sys.executable, "-m", "pdesurrogate", *args],
                          capture_output=True, text=True, cwd=cwd)


def _tail(text: str, n: int = 3) -> str:
    lines = [l for l in text.strip().splitlines() if l.strip()]
    return " | ".join(lines[-n:])


def run_ablation(data_dir, base_cfg: dict, variants: list, out_csv,
                 workdir=None, eval_split: str = "train") -> list:
    """Train and evaluate each (name, {dotted-key overrides}) variant.

    Every cell runs as child processes of the command-line interface: a
    train run, an eval on each split, and a bench, all against a cell
    config file written next to the cell's artifacts. All cells share the
    seeds in base_cfg unless a variant overrides them, so differences come
    from the settings, not the draw. A cell whose child process fails is
    recorded as a failed row with the error tail; the sweep continues.
    Returns the row dicts.
    """
    import tempfile

    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    own_tmp = workdir is None
    workdir = Path(tempfile.mkdtemp(prefix="ablation-")) if own_tmp \
        else Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    rows = []
    for name, overrides in variants:
        cell_dir = workdir / name
        cell_dir.mkdir(parents=True, exist_ok=True)
        cfg = dict(base_cfg)
        cfg.update(overrides)
        cfg_path = cell_dir / "cell_config.json"
        cfg_path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")

        row = {c: "" for c in ABLATION_COLUMNS}
        row.update(name=name, kind=cfg.get("model.evolution", ""),
                   tau0=cfg.get("train.tau0", ""),
                   schedule=cfg.get("train.curriculum", ""))
        t0 = time.perf_counter()
        try:
            r = _run_cli(["train", "--config", str(cfg_path),
                          "--data", str(data_dir), "--out", str(cell_dir)])
            if r.returncode != 0:
                raise RuntimeError(f"train rc={r.returncode}: {_tail(r.stderr)}")
            ckpt = cell_dir / "ckpt_last.lepp"

            reports = {}
            for split in dict.fromkeys([eval_split, "test"]):
                out_json = cell_dir / f"eval_{split}.json"
                r = _run_cli(["eval", "--config", str(cfg_path),
                              "--data", str(data_dir), "--ckpt", str(ckpt),
                              "--split", split, "--out", str(out_json)])
                if r.returncode != 0:
                    raise RuntimeError(
                        f"eval[{split}] rc={r.returncode}: {_tail(r.stderr)}")
                reports[split] = json.loads(out_json.read_text())

            bench_json = cell_dir / "bench.json"
            r = _run_cli(["bench", "--config", str(cfg_path),
                          "--ckpt", str(ckpt), "--out", str(bench_json)])
            if r.returncode != 0:
                raise RuntimeError(f"bench rc={r.returncode}: {_tail(r.stderr)}")
            bench = json.loads(bench_json.read_text())

            log_lines = (cell_dir / "train_log.jsonl").read_text().splitlines()
            final_loss = json.loads(log_lines[-1])["loss"] if log_lines else ""

            main_rep = reports[eval_split]
            row.update(
                status="ok",
                rmse_single=main_rep["rmse_single"],
                rmse_rollout=main_rep["rmse_rollout"],
                rel_l2=main_rep["rel_l2"],
                persistence_rmse_rollout=main_rep["persistence_rmse_rollout"],
                test_rmse_rollout=reports["test"]["rmse_rollout"],
                test_rel_l2=reports["test"]["rel_l2"],
                median_ms=bench["model"]["median_s"] * 1e3,
                params=main_rep["parameter_count"],
                final_loss=final_loss)
        except Exception as e:  # noqa: BLE001 - sweep must survive bad cells
            row.update(status="failed", error=f"{type(e).__name__}: {e}")
        row["seconds"] = round(time.perf_counter() - t0, 3)
        rows.append(row)

    with open(out_csv, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    if own_tmp:
        import shutil
        shutil.rmtree(workdir, ignore_errors=True)
    return rows

"""Trajectory generation: seeded, order-independent, optionally parallel.

Each trajectory draws from a stream derived off the master seed by its
global index, so regenerating with the same seed is byte-identical no
matter how many workers ran or in what order they finished. The static
parameter vector stored per trajectory uses normalized encodings (layouts
below) so the surrogate's parameter encoder sees O(1) inputs.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from ..prng import SplitMix64
from . import navier_stokes as ns
from . import pollutant as pte
from . import shallow_water as swe
from .datafile import Dataset, write_dataset, write_sidecar

PARAM_LAYOUTS = {
    "ns": ["log(nu)"],
    "swe": ["g", "H/100"],
    "pte": ["D/100",
            "src1.x/Lx", "src1.y/Ly", "src1.rate",
            "src2.x/Lx", "src2.y/Ly", "src2.rate",
            "src3.x/Lx", "src3.y/Ly", "src3.rate",
            "wind.x/10", "wind.y/10"],
}


@dataclass
class GenerateSpec:
    """Desk-scale defaults per kind; ranges are per-trajectory draws."""

    kind: str = "ns"
    count_train: int = 50
    count_test: int = 10
    seed: int = 0
    nx: int = 32
    ny: int = 32
    n_frames: int = 21
    # ns
    nu_lo: float = 8e-4
    nu_hi: float = 1.25e-3
    init_amp: float = 1.0
    # swe
    depth_lo: float = 80.0
    depth_hi: float = 120.0
    # pte
    diff_lo: float = 20.0
    diff_hi: float = 60.0
    rate_lo: float = 0.5
    rate_hi: float = 2.0
    max_sources: int = 3
    wind_preset: str = "off"   # "off", a direction name, or "four" for a per-trajectory draw

    def __post_init__(self):
        if self.kind not in PARAM_LAYOUTS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.kind == "pte" and self.nx == 32 and self.ny == 32:
            # pollutant desk default runs on the finer grid
            self.nx = self.ny = 64
        if self.count_train < 1 or self.count_test < 0:
            raise ValueError("count_train must be >= 1 and count_test >= 0")
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid {self.nx}x{self.ny} too small")
        if self.n_frames < 2:
            raise ValueError(f"n_frames must be >= 2, got {self.n_frames}")
        for lo, hi, what in ((self.nu_lo, self.nu_hi, "nu"),
                             (self.depth_lo, self.depth_hi, "depth"),
                             (self.diff_lo, self.diff_hi, "diff"),
                             (self.rate_lo, self.rate_hi, "rate")):
            if not (0 < lo <= hi):
                raise ValueError(f"{what} range must satisfy 0 < lo <= hi, "
                                 f"got [{lo}, {hi}]")
        if self.init_amp <= 0:
            raise ValueError(f"init_amp must be positive, got {self.init_amp}")
        if self.max_sources < 1:
            raise ValueError(f"max_sources must be >= 1, got {self.max_sources}")


def _ns_trajectory(spec: GenerateSpec, rng: SplitMix64):
    nu = float(np.exp(rng.derive("nu").uniform(np.log(spec.nu_lo), np.log(spec.nu_hi))))
    cfg = ns.NSConfig(nx=spec.nx, ny=spec.ny, nu=nu, dt=0.0125,
                      n_frames=spec.n_frames, store_every=20)
    w0 = spec.init_amp * ns.band_limited_field(rng.derive("ic"), cfg)
    fields = ns.simulate(cfg, w0)
    # Encode viscosity centered on the sampling range so the conditioning
    # input lands in [-1, 1] instead of at raw log(nu) ~ -7.
    mid = 0.5 * (np.log(spec.nu_lo) + np.log(spec.nu_hi))
    half = 0.5 * (np.log(spec.nu_hi) - np.log(spec.nu_lo))
    enc = (np.log(nu) - mid) / half if half > 0 else 0.0
    return np.array([enc]), fields, cfg.dt * cfg.store_every, cfg.lx, cfg.ly


def _swe_trajectory(spec: GenerateSpec, rng: SplitMix64):
    depth = rng.derive("depth").uniform(spec.depth_lo, spec.depth_hi)
    cfg = swe.SWEConfig(nx=spec.nx, ny=spec.ny, h_depth=depth, dt=8e-4,
                        n_frames=spec.n_frames, store_every=25)
    eta0 = swe.gaussian_bumps(rng.derive("ic"), cfg)
    fields = swe.simulate(cfg, eta0)
    return np.array([cfg.g / 10.0, depth / 100.0]), fields, cfg.dt * cfg.store_every, cfg.lx, cfg.ly


def _pte_trajectory(spec: GenerateSpec, rng: SplitMix64):
    d = rng.derive("diff").uniform(spec.diff_lo, spec.diff_hi)
    if spec.wind_preset == "four":
        name = ("east", "west", "north", "south")[rng.derive("wind").randint(0, 4)]
        wind = pte.WIND_PRESETS[name]
    else:
        wind = pte.WIND_PRESETS[spec.wind_preset]
    cfg = pte.PTEConfig(nx=spec.nx, ny=spec.ny, diffusivity=d, wind=wind,
                        n_frames=spec.n_frames)
    n_src = rng.derive("nsrc").randint(1, spec.max_sources + 1)
    srng = rng.derive("sources")
    sources = []
    for _ in range(n_src):
        sources.append((srng.uniform(0.15, 0.85) * cfg.lx,
                        srng.uniform(0.15, 0.85) * cfg.ly,
                        srng.uniform(spec.rate_lo, spec.rate_hi)))
    cfg.sources = sources
    fields = pte.simulate(cfg)
    p = np.zeros(12)
    p[0] = d / 100.0
    for i, (sx, sy, rate) in enumerate(sources):
        p[1 + 3 * i:4 + 3 * i] = (sx / cfg.lx, sy / cfg.ly, rate)
    p[10] = wind[0] / 10.0
    p[11] = wind[1] / 10.0
    return p, fields, cfg.dt * cfg.store_every, cfg.lx, cfg.ly


_BUILDERS = {"ns": _ns_trajectory, "swe": _swe_trajectory, "pte": _pte_trajectory}


def _one(args):
    spec, index = args
    rng = SplitMix64(spec.seed).derive(f"traj-{index}")
    return _BUILDERS[spec.kind](spec, rng)


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LEPP_THREADS", "1")))
    except ValueError:
        return 1


def generate_split(spec: GenerateSpec, indices: list) -> Dataset:
    jobs = [(spec, i) for i in indices]
    workers = _worker_count()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    params = np.stack([r[0] for r in results])
    fields = np.stack([r[1] for r in results])
    dt, lx, ly = results[0][2], results[0][3], results[0][4]
    return Dataset(spec.kind, params, fields, dt, lx, ly)


def generate_dataset(spec: GenerateSpec, out_dir) -> dict:
    """Write train.lepd, test.lepd and dataset.json under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    train = generate_split(spec, list(range(spec.count_train)))
    test = generate_split(spec, list(range(spec.count_train,
                                           spec.count_train + spec.count_test)))
    train_path = os.path.join(out_dir, "train.lepd")
    test_path = os.path.join(out_dir, "test.lepd")
    write_dataset(train_path, train)
    write_dataset(test_path, test)
    meta = {
        "spec": asdict(spec),
        "kind": spec.kind,
        "nx": spec.nx,
        "ny": spec.ny,
        "channels": int(train.fields.shape[2]),
        "d_p": int(train.params.shape[1]),
        "n_frames": spec.n_frames,
        "count_train": spec.count_train,
        "count_test": spec.count_test,
        "param_layout": PARAM_LAYOUTS[spec.kind],
        "frame_interval": train.dt,
        "files": {"train": "train.lepd", "test": "test.lepd"},
        "forcing": "0.1*(sin(2pi(x+y))+cos(2pi(x+y))) on vorticity" if spec.kind == "ns" else None,
    }
    write_sidecar(os.path.join(out_dir, "dataset.json"), meta)
    return meta

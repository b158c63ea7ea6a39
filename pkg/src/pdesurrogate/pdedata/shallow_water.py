"""Linearized 2D shallow-water equations on a periodic grid.

    du/dt = -g deta/dx,   dv/dt = -g deta/dy,   deta/dt = -H (du/dx + dv/dy)

Second-order centered differences in space (skew-adjoint, so the discrete
energy H(u^2+v^2)+g eta^2 is conserved up to the RK4 truncation error) and
classic RK4 in time. The gravity-wave CFL sqrt(g H) dt/dx is validated up
front; the stored channels are (u, v, eta).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..prng import SplitMix64
from .navier_stokes import SimulationError


@dataclass
class SWEConfig:
    nx: int = 32
    ny: int = 32
    lx: float = 1.0
    ly: float = 1.0
    g: float = 1.0
    h_depth: float = 100.0
    dt: float = 8.0e-4
    n_frames: int = 21
    store_every: int = 25
    cfl_limit: float = 0.3

    def wave_speed(self) -> float:
        return float(np.sqrt(self.g * self.h_depth))

    def validate(self) -> None:
        dx = min(self.lx / self.nx, self.ly / self.ny)
        cfl = self.wave_speed() * self.dt / dx
        if cfl > self.cfl_limit:
            raise SimulationError(
                f"wave CFL {cfl:.3f} > {self.cfl_limit} "
                f"(c={self.wave_speed():.2f}, dt={self.dt}, dx={dx:.4f})")


def _ddx(f: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * dx)


def _ddy(f: np.ndarray, dy: float) -> np.ndarray:
    return (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * dy)


def gaussian_bumps(rng: SplitMix64, cfg: SWEConfig, max_bumps: int = 3) -> np.ndarray:
    """Initial elevation: 1..max_bumps positive Gaussian bumps."""
    x = (np.arange(cfg.nx) + 0.5) * (cfg.lx / cfg.nx)
    y = (np.arange(cfg.ny) + 0.5) * (cfg.ly / cfg.ny)
    xg, yg = np.meshgrid(x, y)
    eta = np.zeros((cfg.ny, cfg.nx))
    n = rng.derive("count").randint(1, max_bumps + 1)
    pos = rng.derive("pos")
    for _ in range(n):
        cx = pos.uniform(0.2, 0.8) * cfg.lx
        cy = pos.uniform(0.2, 0.8) * cfg.ly
        amp = pos.uniform(0.2, 1.0)
        width = pos.uniform(0.05, 0.12) * cfg.lx
        eta += amp * np.exp(-((xg - cx) ** 2 + (yg - cy) ** 2) / (2.0 * width ** 2))
    return eta


def simulate(cfg: SWEConfig, eta0: np.ndarray,
             u0: np.ndarray | None = None, v0: np.ndarray | None = None) -> np.ndarray:
    """Returns frames [n_frames, 3, ny, nx] with channels (u, v, eta)."""
    cfg.validate()
    dx = cfg.lx / cfg.nx
    dy = cfg.ly / cfg.ny
    u = np.zeros((cfg.ny, cfg.nx)) if u0 is None else np.array(u0, dtype=np.float64)
    v = np.zeros((cfg.ny, cfg.nx)) if v0 is None else np.array(v0, dtype=np.float64)
    eta = np.array(eta0, dtype=np.float64)

    def rhs(state):
        su, sv, se = state
        return (-cfg.g * _ddx(se, dx),
                -cfg.g * _ddy(se, dy),
                -cfg.h_depth * (_ddx(su, dx) + _ddy(sv, dy)))

    frames = np.empty((cfg.n_frames, 3, cfg.ny, cfg.nx))
    frames[0] = (u, v, eta)
    state = (u, v, eta)
    for fi in range(1, cfg.n_frames):
        for _ in range(cfg.store_every):
            k1 = rhs(state)
            k2 = rhs(tuple(s + 0.5 * cfg.dt * k for s, k in zip(state, k1)))
            k3 = rhs(tuple(s + 0.5 * cfg.dt * k for s, k in zip(state, k2)))
            k4 = rhs(tuple(s + cfg.dt * k for s, k in zip(state, k3)))
            state = tuple(
                s + (cfg.dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
                for s, a, b, c, d in zip(state, k1, k2, k3, k4))
        if not all(np.isfinite(s).all() for s in state):
            raise SimulationError(f"non-finite shallow-water state at frame {fi}")
        frames[fi] = state
    return frames


def energy(frame: np.ndarray, cfg: SWEConfig) -> float:
    """Discrete energy 0.5 sum(H(u^2+v^2) + g eta^2)."""
    u, v, eta = frame
    return 0.5 * float(np.sum(cfg.h_depth * (u * u + v * v) + cfg.g * eta * eta))

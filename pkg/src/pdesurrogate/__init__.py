"""Latent-space surrogate models for 2D PDE simulation.

Pipeline: generate reference trajectories with the numerical solvers in
`pdedata`, train an encode/evolve/decode surrogate whose latent stepper is
either a gated state-space block or a residual MLP, then evaluate rollout
accuracy and wall-clock cost against a persistence baseline.
"""

__version__ = "0.1.0"

_LAZY = {
    "ScheduleSpec": "curriculum", "horizon": "curriculum", "ratio": "curriculum",
    "table": "curriculum", "InferenceEngine": "model", "ModelConfig": "model",
    "SurrogateModel": "model", "SplitMix64": "prng",
}

__all__ = sorted(_LAZY) + ["__version__"]


def __getattr__(name):
    # deferred so light entry points never pay for the compiled stack
    if name in _LAZY:
        import importlib
        mod = importlib.import_module(f".{_LAZY[name]}", __name__)
        value = getattr(mod, name)
        globals()[name] = value
        return value
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")

"""Adam with bias correction.

`adam_step` is the pure array-level update rule and is what the oracle
tests exercise; `Adam` is a thin stateful wrapper that pulls gradients off
parameter nodes, applies the rule, and swaps the node values in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Node, NonFiniteError, Tensor


@dataclass
class AdamState:
    m: list = field(default_factory=list)   # first moments, one array per param
    v: list = field(default_factory=list)   # second moments
    t: int = 0

    @classmethod
    def init(cls, params: list) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            t=0,
        )


def adam_step(params: list, grads: list, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One update over a flat list of arrays; returns (new_params, state).

    state is mutated (moments updated, timestep advanced). With zero
    gradients the parameters come back unchanged while t still advances.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params vs {len(grads)} grads")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * (g * g)
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        out.append(p - lr * mhat / (np.sqrt(vhat) + eps))
    return out, state


class Adam:
    """Optimizer over parameter Nodes. step() consumes and clears .grad."""

    def __init__(self, params: dict, lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.names = list(params.keys())
        self.nodes: list[Node] = [params[k] for k in self.names]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.init([n.data for n in self.nodes])

    def step(self) -> None:
        grads = []
        for name, node in zip(self.names, self.nodes):
            g = node.grad
            if g is None:
                g = np.zeros_like(node.data)
            elif not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
            grads.append(g)
        values = [n.data for n in self.nodes]
        new_values, _ = adam_step(values, grads, self.state, self.lr,
                                  self.beta1, self.beta2, self.eps)
        for node, val in zip(self.nodes, new_values):
            node.value = Tensor(val, _own=True)
            node.grad = None

    def state_tensors(self) -> dict:
        """Moment arrays keyed for checkpointing."""
        out = {}
        for name, m, v in zip(self.names, self.state.m, self.state.v):
            out[f"opt.m.{name}"] = m
            out[f"opt.v.{name}"] = v
        return out

    def load_state_tensors(self, tensors: dict, t: int) -> None:
        for i, name in enumerate(self.names):
            self.state.m[i] = np.array(tensors[f"opt.m.{name}"])
            self.state.v[i] = np.array(tensors[f"opt.v.{name}"])
        self.state.t = t

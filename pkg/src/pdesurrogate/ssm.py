"""Diagonal linear state-space sequence layer with a gated block wrapper.

Each of the d_model channels owns an independent continuous-time system
with d_state internal modes,

    h'(t) = A h(t) + B x(t),        y(t) = sum_s C h(t) + D x(t),

discretized by zero-order hold over step size Delta:

    abar = exp(Delta A),    bbar = ((exp(Delta A) - 1) / A) B.

Because A and Delta are fixed (time-invariant by design, not input
selective), the same layer can run in two exactly equivalent modes:

  * scan: the recurrence h_t = abar h_{t-1} + bbar x_t, one step at a
    time, carrying hidden state (what autoregressive rollout uses),
  * conv: materialize the truncated impulse response and convolve the
    whole input sequence causally in one shot (teacher-forced scoring).

Storage uses unconstrained parameters: A = -exp(a_log) keeps every mode
strictly decaying and Delta = exp(delta_log) keeps the step positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .prng import SplitMix64

TAYLOR_THRESHOLD = 1e-6

# below this sequence length the O(L^2) direct convolution beats FFT setup cost
FFT_MIN_LEN = 64


# ------------------------------------------------------------ parameter sets

@dataclass
class SSMLayerParams:
    """Continuous-time layer parameters, array level.

    a_log: [d_model, d_state], A = -exp(a_log) < 0
    b, c:  [d_model, d_state]
    delta_log: [d_model], Delta = exp(delta_log) > 0
    d_skip: [d_model]
    """

    a_log: np.ndarray
    b: np.ndarray
    c: np.ndarray
    delta_log: np.ndarray
    d_skip: np.ndarray

    @property
    def d_model(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    @property
    def A(self) -> np.ndarray:
        return -np.exp(self.a_log)

    @property
    def delta(self) -> np.ndarray:
        return np.exp(self.delta_log)

    @classmethod
    def init(cls, rng: SplitMix64, d_model: int, d_state: int) -> "SSMLayerParams":
        a_log, b, c, delta_log, d_skip = init_ssm_core(rng, d_model, d_state)
        return cls(a_log, b, c, delta_log, d_skip)


def init_ssm_core(rng: SplitMix64, d_model: int, d_state: int):
    """Shared init: mode s decays at rate (1+s); per-channel step sizes are
    log-uniform in [1e-3, 1e-1]; B, C fan-in uniform; skip starts at 1."""
    a_log = np.tile(np.log(1.0 + np.arange(d_state, dtype=np.float64)), (d_model, 1))
    delta_log = rng.derive("delta").uniforms(d_model, np.log(1e-3), np.log(1e-1))
    lim = 1.0 / np.sqrt(d_state)
    b = rng.derive("b").uniforms(d_model * d_state, -lim, lim).reshape(d_model, d_state)
    c = rng.derive("c").uniforms(d_model * d_state, -lim, lim).reshape(d_model, d_state)
    d_skip = np.ones(d_model)
    return a_log, b, c, delta_log, d_skip


@dataclass
class SSMDiscreteParams:
    abar: np.ndarray  # [d_model, d_state]
    bbar: np.ndarray  # [d_model, d_state]


@dataclass
class SSMHiddenState:
    h: np.ndarray  # [d_model, d_state]

    @classmethod
    def zeros(cls, d_model: int, d_state: int, dtype=np.float64) -> "SSMHiddenState":
        return cls(np.zeros((d_model, d_state), dtype=dtype))


# ---------------------------------------------------------------- zoh math

def _phi_raw(x: np.ndarray) -> np.ndarray:
    """(exp(x) - 1) / x with a cubic Taylor branch near zero."""
    small = np.abs(x) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 + x / 2.0 + x * x / 6.0, np.expm1(safe) / safe)
    return out


def _phi_grad_raw(x: np.ndarray) -> np.ndarray:
    """d/dx of (exp(x)-1)/x = (exp(x)(x-1)+1)/x^2, Taylor branch near zero."""
    small = np.abs(x) < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, x)
    exact = (np.exp(safe) * (safe - 1.0) + 1.0) / (safe * safe)
    return np.where(small, 0.5 + x / 3.0 + x * x / 8.0, exact)


def discretize(params: SSMLayerParams) -> SSMDiscreteParams:
    """Zero-order-hold map of (A, B, Delta) to one-step (abar, bbar).

    As Delta*A -> 0 the Taylor branch gives bbar -> Delta*B, so very stiff
    or very slow modes never hit the 0/0 in the closed form.
    """
    delta = params.delta
    if not np.all(delta > 0):
        raise ValueError("discretize requires Delta > 0 for every channel")
    x = delta[:, None] * params.A
    abar = np.exp(x)
    bbar = delta[:, None] * _phi_raw(x) * params.b
    return SSMDiscreteParams(abar=abar, bbar=bbar)


def recurrent_scan(disc: SSMDiscreteParams, c: np.ndarray, d_skip: np.ndarray,
                   x: np.ndarray, h0: SSMHiddenState | None = None):
    """Step the recurrence over x: [L, d_model]; returns (y, final state)."""
    L, d_model = x.shape
    h = np.zeros_like(disc.abar) if h0 is None else h0.h.copy()
    y = np.empty_like(x)
    abar, bbar = disc.abar, disc.bbar
    for t in range(L):
        h = abar * h + bbar * x[t][:, None]
        y[t] = (c * h).sum(axis=1) + d_skip * x[t]
    return y, SSMHiddenState(h=h)


def build_kernel(disc: SSMDiscreteParams, c: np.ndarray, length: int) -> np.ndarray:
    """Truncated impulse response: K[k] = sum_s c * abar^k * bbar, [L, d_model]."""
    K = np.empty((length, disc.abar.shape[0]), dtype=disc.abar.dtype)
    w = disc.bbar.copy()
    for k in range(length):
        K[k] = (c * w).sum(axis=1)
        if k + 1 < length:
            w *= disc.abar
    return K


def causal_conv_direct(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    L = x.shape[0]
    y = np.zeros_like(x)
    for j in range(L):
        y[j:] += kernel[j] * x[:L - j]
    return y


def causal_conv_fft(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    L = x.shape[0]
    n = 2 * L
    xf = np.fft.rfft(x, n=n, axis=0)
    kf = np.fft.rfft(kernel, n=n, axis=0)
    return np.fft.irfft(xf * kf, n=n, axis=0)[:L].astype(x.dtype, copy=False)


def causal_conv(x: np.ndarray, kernel: np.ndarray, d_skip: np.ndarray | None = None) -> np.ndarray:
    """Per-channel causal convolution of x [L, d] with kernel [L, d].

    Short sequences use the direct quadratic form, longer ones the padded
    FFT path; both agree to roundoff and are cross-checked in the tests.
    """
    if x.shape != kernel.shape:
        raise ValueError(f"causal_conv: x {x.shape} vs kernel {kernel.shape}")
    L = x.shape[0]
    y = causal_conv_direct(x, kernel) if L < FFT_MIN_LEN else causal_conv_fft(x, kernel)
    if d_skip is not None:
        y = y + d_skip * x
    return y


# --------------------------------------------------- differentiable wrappers

def phi_op(x: Node) -> Node:
    out = _phi_raw(x.data)
    xd = x.data

    def rule(g):
        return (g * _phi_grad_raw(xd),)

    return ad.Node(ad.Tensor(out, _own=True), (x,), rule, "phi")


def discretize_nodes(a_log: Node, delta_log: Node, b_mat: Node):
    """Node-level ZOH, same numerics as `discretize` via the shared phi core."""
    d_state = a_log.shape[1]
    A = ad.scale(ad.exp(a_log), -1.0)
    dcol = ad.tile_cols(ad.exp(delta_log), d_state)
    x = ad.mul(dcol, A)
    abar = ad.exp(x)
    bbar = ad.mul(ad.mul(dcol, phi_op(x)), b_mat)
    return abar, bbar


def causal_conv_op(x: Node, kernel: Node) -> Node:
    """Autodiff causal convolution; both gradients are causal correlations."""
    xd, kd = x.data, kernel.data
    L = xd.shape[0]
    out = causal_conv_direct(xd, kd) if L < FFT_MIN_LEN else causal_conv_fft(xd, kd)

    def rule(g):
        gx = np.zeros_like(xd)
        gk = np.zeros_like(kd)
        for j in range(L):
            gx[:L - j] += g[j:] * kd[j]
            gk[j] = (g[j:] * xd[:L - j]).sum(axis=0)
        return gx, gk

    return ad.Node(ad.Tensor(out, _own=True), (x, kernel), rule, "causal_conv")


def dense_rows(x: Node, w: Node, b: Node) -> Node:
    """Affine map applied to every row of x: [L, p] @ [p, q] + b."""
    y = ad.matmul(x, w)
    return ad.add(y, ad.tile_rows(b, y.shape[0]))


@dataclass
class MambaBlockParams:
    """Gated SSM block parameters as graph nodes.

    Structure: two parallel projections of the input (one feeds the SSM,
    one becomes a SiLU gate), elementwise gate on the SSM output, output
    projection, then a residual connection back to the block input. The
    output projection starts at zero so a fresh block is the identity.
    """

    w_in: Node
    b_in: Node
    w_gate: Node
    b_gate: Node
    w_out: Node
    b_out: Node
    a_log: Node
    b_mat: Node
    c_mat: Node
    delta_log: Node
    d_skip: Node

    @property
    def d_model(self) -> int:
        return self.a_log.shape[0]

    @property
    def d_state(self) -> int:
        return self.a_log.shape[1]

    @classmethod
    def init(cls, rng: SplitMix64, d_model: int, d_state: int,
             dtype=np.float64, prefix: str = "block") -> "MambaBlockParams":
        a_log, b, c, delta_log, d_skip = init_ssm_core(rng.derive("ssm"), d_model, d_state)
        lim = 1.0 / np.sqrt(d_model)
        proj = rng.derive("proj")

        def pnode(name, arr):
            return ad.parameter(np.asarray(arr, dtype=dtype), f"{prefix}.{name}", dtype=dtype)

        return cls(
            w_in=pnode("w_in", proj.derive("in").uniforms(d_model * d_model, -lim, lim)
                       .reshape(d_model, d_model)),
            b_in=pnode("b_in", np.zeros(d_model)),
            w_gate=pnode("w_gate", proj.derive("gate").uniforms(d_model * d_model, -lim, lim)
                         .reshape(d_model, d_model)),
            b_gate=pnode("b_gate", np.zeros(d_model)),
            w_out=pnode("w_out", np.zeros((d_model, d_model))),
            b_out=pnode("b_out", np.zeros(d_model)),
            a_log=pnode("a_log", a_log),
            b_mat=pnode("b_mat", b),
            c_mat=pnode("c_mat", c),
            delta_log=pnode("delta_log", delta_log),
            d_skip=pnode("d_skip", d_skip),
        )

    def nodes(self) -> dict:
        return {n.name: n for n in (
            self.w_in, self.b_in, self.w_gate, self.b_gate, self.w_out, self.b_out,
            self.a_log, self.b_mat, self.c_mat, self.delta_log, self.d_skip)}


def mamba_block_forward(z_seq: Node, params: MambaBlockParams,
                        h0: Node | None = None, mode: str = "scan"):
    """Run the gated block over a [L, d_model] sequence.

    Returns (block output [L, d_model], final hidden state or None).
    scan mode accepts any initial hidden state and returns the final one;
    conv mode scores the whole sequence against the truncated kernel and
    only exists for zero initial state.
    """
    if mode not in ("scan", "conv"):
        raise ValueError(f"unknown mode {mode!r}")
    L, d_model = z_seq.shape
    d_state = params.d_state
    u = dense_rows(z_seq, params.w_in, params.b_in)
    gate = ad.silu(dense_rows(z_seq, params.w_gate, params.b_gate))
    abar, bbar = discretize_nodes(params.a_log, params.delta_log, params.b_mat)

    if mode == "scan":
        h = h0 if h0 is not None else ad.constant(
            np.zeros((d_model, d_state), dtype=z_seq.data.dtype))
        rows = []
        for t in range(L):
            xt = ad.take_row(u, t)
            h = ad.add(ad.mul(abar, h), ad.mul(bbar, ad.tile_cols(xt, d_state)))
            yt = ad.add(ad.reduce_sum(ad.mul(params.c_mat, h), axes=1),
                        ad.mul(params.d_skip, xt))
            rows.append(ad.reshape(yt, (1, d_model)))
        y_ssm = rows[0] if L == 1 else ad.concat(rows, axis=0)
        h_final = h
    else:
        if h0 is not None and np.any(h0.data != 0.0):
            raise ValueError("conv mode assumes zero initial state; got nonzero h0")
        rows = []
        w = bbar
        for k in range(L):
            rows.append(ad.reshape(ad.reduce_sum(ad.mul(params.c_mat, w), axes=1),
                                   (1, d_model)))
            if k + 1 < L:
                w = ad.mul(w, abar)
        kernel = rows[0] if L == 1 else ad.concat(rows, axis=0)
        y_conv = causal_conv_op(u, kernel)
        y_ssm = ad.add(y_conv, ad.mul(ad.tile_rows(params.d_skip, L), u))
        h_final = None

    gated = ad.mul(y_ssm, gate)
    out = dense_rows(gated, params.w_out, params.b_out)
    return ad.add(out, z_seq), h_final

"""Selective state-space layer driven by inter-event time gaps.

The continuous system h' = a*h + b*x is discretized per step with a zero-order
hold whose step size is the (transformed) gap between consecutive events, so
the recurrence decays hidden state by exactly exp(gap * a) between events.
The state matrix is diagonal: one independent N-vector of decay rates per
channel.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Parameter, Tensor


def rms_norm(x, scale, eps=1e-5):
    """Root-mean-square normalization over the last axis, learned scale only."""
    ms = ag.reduce_mean(ag.mul(x, x), axis=-1, keepdims=True)
    return ag.mul(ag.div(x, ag.sqrt(ag.add(ms, eps))), scale)


def linear_init(rng, fan_in, fan_out):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def discretize(delta, a, b):
    """Zero-order-hold discretization of a diagonal continuous system.

    Returns (abar, bbar) with abar = exp(delta*a) and
    bbar = ((exp(delta*a) - 1) / a) * b, evaluated elementwise with
    broadcasting. The (exp(u)-1)/u factor switches to a series for
    |delta*a| < 1e-4, so the a -> 0 limit bbar -> delta*b is exact to
    rounding.
    """
    delta = ag.as_tensor(delta)
    if np.any(delta.data <= 0.0):
        raise ag.DomainError(
            f"discretize: non-positive step size (min={delta.data.min()!r}); "
            "the upstream gap transform should guarantee positivity"
        )
    a = ag.as_tensor(a)
    b = ag.as_tensor(b)
    u = ag.mul(delta, a)
    abar = ag.exp(u)
    bbar = ag.mul(ag.mul(delta, ag.expm1_over_x(u)), b)
    return abar, bbar


def selective_scan(x, delta, a, b, c, skip=None):
    """Run the time-variant recurrence z_i = abar_i * z_{i-1} + bbar_i * x_i.

    Args:
        x: [L, D] input stream.
        delta: [L] strictly positive step sizes, shared across channels.
        a: [D, N] diagonal decay rates (negative for stability).
        b: [L, N] per-step input projections.
        c: [L, N] per-step output projections.
        skip: optional [D] direct feedthrough added as skip * x.

    Returns:
        [L, D] outputs y_i = c_i . z_i (+ skip * x_i), differentiable in
        every argument.
    """
    x, delta = ag.as_tensor(x), ag.as_tensor(delta)
    a, b, c = ag.as_tensor(a), ag.as_tensor(b), ag.as_tensor(c)
    if x.ndim != 2:
        raise ag.ShapeError(f"selective_scan: x must be [L, D], got {x.shape}")
    L, D = x.shape
    N = a.shape[-1]
    if delta.shape != (L,):
        raise ag.ShapeError(
            f"selective_scan: length mismatch between x {x.shape} and delta {delta.shape}"
        )
    if b.shape != (L, N) or c.shape != (L, N):
        raise ag.ShapeError(
            f"selective_scan: b/c must be [L, N]={L, N}, got {b.shape} and {c.shape}"
        )
    if np.any(delta.data <= 0.0):
        raise ag.DomainError(
            f"selective_scan: non-positive step size (min={delta.data.min()!r})"
        )

    # Discretize all steps at once; bbar is kept fused with x so the per-step
    # work is a single multiply-add on [D, N].
    d3 = ag.reshape(delta, (L, 1, 1))
    u = ag.mul(d3, a)                                   # [L, D, N]
    abar = ag.exp(u)
    bbar_x = ag.mul(ag.mul(ag.mul(d3, ag.expm1_over_x(u)), ag.reshape(b, (L, 1, N))),
                    ag.reshape(x, (L, D, 1)))           # [L, D, N]

    z = Tensor(np.zeros((D, N)))
    states = []
    for i in range(L):
        z = ag.add(ag.mul(abar[i], z), bbar_x[i])
        states.append(ag.reshape(z, (1, D, N)))
    zs = states[0] if L == 1 else ag.concat(states, axis=0)
    y = ag.reduce_sum(ag.mul(zs, ag.reshape(c, (L, 1, N))), axis=2)
    if skip is not None:
        y = ag.add(y, ag.mul(ag.as_tensor(skip), x))
    return y


def gated_decay_reference(timestamps, x):
    """Closed-form N=1 recurrence: z_i = g_i z_{i-1} + (1 - g_i) x_i.

    g_i = exp(t_{i-1} - t_i) with t_0 = 0, z_0 = 0. Plain float oracle for the
    degenerate configuration (a = -1, b = c = 1, no feedthrough); not a
    trainable path.
    """
    t = np.asarray(timestamps, dtype=np.float64)
    xv = np.asarray(x, dtype=np.float64).reshape(-1)
    if t.ndim != 1 or t.shape != xv.shape:
        raise ValueError(f"timestamps and x must be equal-length vectors, got {t.shape}, {xv.shape}")
    gaps = np.diff(np.concatenate([[0.0], t]))
    if np.any(gaps <= 0.0):
        raise ValueError("timestamps must be strictly increasing (and start above 0)")
    z = 0.0
    out = np.empty_like(xv)
    for i in range(len(xv)):
        g = np.exp(-gaps[i])
        z = g * z + (1.0 - g) * xv[i]
        out[i] = z
    return out


class SsmCore:
    """Learnable pieces of the scan: decay rates, B/C projections, feedthrough.

    The decay matrix is stored as A_log with a = -exp(A_log), so every rate is
    strictly negative and abar = exp(delta * a) stays inside (0, 1) for any
    positive step.
    """

    def __init__(self, d_inner, d_state, rng):
        self.d_inner = d_inner
        self.d_state = d_state
        # one decaying mode per (channel, state) pair, rates 1..N per channel
        a_init = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
        self.A_log = Parameter(np.log(a_init), "A_log")
        self.W_B = Parameter(linear_init(rng, d_inner, d_state), "W_B")
        self.W_C = Parameter(linear_init(rng, d_inner, d_state), "W_C")
        self.D = Parameter(np.ones(d_inner), "D")

    def named_parameters(self, prefix=""):
        return [(prefix + "A_log", self.A_log), (prefix + "W_B", self.W_B),
                (prefix + "W_C", self.W_C), (prefix + "D", self.D)]

    def __call__(self, x, delta):
        a = ag.neg(ag.exp(self.A_log))
        b = ag.matmul(x, self.W_B)
        c = ag.matmul(x, self.W_C)
        return selective_scan(x, delta, a, b, c, skip=self.D)


class MambaBlock:
    """Pre-norm gated block: in-proj -> causal conv -> SiLU -> scan -> gate -> out-proj.

    The step sizes come from event time gaps and are shared by every channel;
    they are computed before the convolution, so the conv mixes channel
    streams over positions but never the gaps themselves.
    """

    def __init__(self, d_model, d_state, d_conv, expand, rng):
        self.d_model = d_model
        self.d_inner = expand * d_model
        self.d_conv = d_conv
        self.norm_scale = Parameter(np.ones(d_model), "norm_scale")
        self.in_proj = Parameter(linear_init(rng, d_model, 2 * self.d_inner), "in_proj")
        bound = 1.0 / np.sqrt(d_conv)
        self.conv_kernel = Parameter(
            rng.uniform(-bound, bound, size=(d_conv, self.d_inner)), "conv_kernel")
        self.conv_bias = Parameter(np.zeros(self.d_inner), "conv_bias")
        self.ssm = SsmCore(self.d_inner, d_state, rng)
        self.out_proj = Parameter(linear_init(rng, self.d_inner, d_model), "out_proj")

    def named_parameters(self, prefix=""):
        out = [(prefix + "norm_scale", self.norm_scale),
               (prefix + "in_proj", self.in_proj),
               (prefix + "conv_kernel", self.conv_kernel),
               (prefix + "conv_bias", self.conv_bias)]
        out += self.ssm.named_parameters(prefix + "ssm.")
        out.append((prefix + "out_proj", self.out_proj))
        return out

    def __call__(self, u, delta):
        xn = rms_norm(u, self.norm_scale)
        xz = ag.matmul(xn, self.in_proj)
        x = xz[:, :self.d_inner]
        z = xz[:, self.d_inner:]
        x = ag.causal_conv1d(x, self.conv_kernel, self.conv_bias)
        x = ag.silu(x)
        y = self.ssm(x, delta)
        y = ag.mul(y, ag.silu(z))
        return ag.add(ag.matmul(y, self.out_proj), u)

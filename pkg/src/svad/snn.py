"""
Discrete-time leaky integrate-and-fire (LIF) layers with a hand-written BPTT.

Neuron dynamics, per timestep t:

    u[t] = alpha * u[t-1] + I[t] - theta * o[t-1]
    o[t] = H(u[t] - theta)                  (H(0) = 1)
    I[t] = W x[t] (+ W_rec o[t-1]) + b

Backward passes replace dH/du with a boxcar of height 1/a and width a centred
on theta. In relaxed mode H is swapped for the clipped ramp whose derivative
is that same boxcar, so the network becomes piecewise linear and the analytic
gradients can be checked against finite differences.

Arrays are laid out (batch, time, unit). Single sequences given as (time, unit)
are promoted to a batch of one and returned in the same rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class LifParams:
    alpha: float = 0.5
    theta: float = 0.3
    a: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.theta > 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.a > 0.0:
            raise ValueError(f"a must be positive, got {self.a}")


@dataclass
class LifState:
    u: np.ndarray
    o_prev: np.ndarray

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "LifState":
        return cls(np.zeros(n, dtype=dtype), np.zeros(n, dtype=dtype))


@dataclass
class LayerWeights:
    """Weights of one spiking layer.

    ``w`` is (n_out, n_in) for fully connected layers and (n_out, n_in, k) for
    temporal convolutions. ``w_rec`` is the optional (n_out, n_out) recurrent
    matrix.
    """

    w: np.ndarray
    b: np.ndarray
    w_rec: np.ndarray | None = None

    def __post_init__(self):
        if self.w.ndim not in (2, 3):
            raise ShapeError(f"w must be rank 2 or 3, got shape {self.w.shape}")
        if self.b.shape != (self.w.shape[0],):
            raise ShapeError(f"b shape {self.b.shape} does not match w rows {self.w.shape[0]}")
        if self.w_rec is not None and self.w_rec.shape != (self.n_out, self.n_out):
            raise ShapeError(f"w_rec must be ({self.n_out}, {self.n_out}), got {self.w_rec.shape}")

    @property
    def n_out(self) -> int:
        return self.w.shape[0]

    @property
    def n_in(self) -> int:
        return self.w.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, kernel: int | None = None,
             recurrent: bool = False, dtype=np.float32) -> "LayerWeights":
        """Uniform +-sqrt(1/fan_in) weights and zero biases."""
        fan_in = n_in * (kernel or 1)
        lim = np.sqrt(1.0 / fan_in)
        shape = (n_out, n_in) if kernel is None else (n_out, n_in, kernel)
        w = rng.uniform(-lim, lim, size=shape).astype(dtype)
        w_rec = None
        if recurrent:
            lim_rec = np.sqrt(1.0 / n_out)
            w_rec = rng.uniform(-lim_rec, lim_rec, size=(n_out, n_out)).astype(dtype)
        return cls(w, np.zeros(n_out, dtype=dtype), w_rec)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"w": self.w, "b": self.b}
        if self.w_rec is not None:
            out["w_rec"] = self.w_rec
        return out


# -- single-step primitives ---------------------------------------------------

def fire(u, params: LifParams, relaxed: bool = False):
    if relaxed:
        return relaxed_spike(u, params)
    return (u >= params.theta).astype(np.asarray(u).dtype)


def relaxed_spike(u, params: LifParams):
    """Clipped ramp whose derivative is exactly the boxcar surrogate."""
    return np.clip((u - params.theta) / params.a + 0.5, 0.0, 1.0)


def surrogate_grad(u, params: LifParams):
    """Boxcar pseudo-derivative: 1/a inside |u - theta| < a/2, else 0."""
    inside = np.abs(u - params.theta) < params.a / 2
    if np.ndim(inside) == 0:
        return 1.0 / params.a if inside else 0.0
    return inside.astype(np.asarray(u).dtype) / params.a


def lif_step(state: LifState, current, params: LifParams, relaxed: bool = False):
    current = np.asarray(current)
    if current.shape != state.u.shape:
        raise ShapeError(f"current shape {current.shape} != neuron shape {state.u.shape}")
    if not np.all(np.isfinite(current)):
        raise NumericError("non-finite input current")
    u = params.alpha * state.u + current - params.theta * state.o_prev
    o = fire(u, params, relaxed)
    return LifState(u, o), o


def layer_current(weights: LayerWeights, in_spikes, own_prev_spikes=None):
    """Input current of one layer for one timestep."""
    if weights.w.ndim != 2:
        raise ShapeError("layer_current expects a fully connected weight matrix")
    x = np.asarray(in_spikes)
    if x.shape != (weights.n_in,):
        raise ShapeError(f"in_spikes shape {x.shape} != ({weights.n_in},)")
    if (own_prev_spikes is None) != (weights.w_rec is None):
        raise ShapeError("own_prev_spikes must be given exactly when w_rec is present")
    i = weights.w @ x
    if weights.w_rec is not None:
        o = np.asarray(own_prev_spikes)
        if o.shape != (weights.n_out,):
            raise ShapeError(f"own_prev_spikes shape {o.shape} != ({weights.n_out},)")
        i = i + weights.w_rec @ o
    return i + weights.b


# -- time scans ---------------------------------------------------------------

def lif_scan(i_ff, b, w_rec, params: LifParams, relaxed: bool = False):
    """Run LIF neurons over a (B, T, N) feedforward current (bias excluded)."""
    batch, steps, n = i_ff.shape
    u_all = np.empty_like(i_ff)
    o_all = np.empty_like(i_ff)
    u = np.zeros((batch, n), dtype=i_ff.dtype)
    o = np.zeros((batch, n), dtype=i_ff.dtype)
    for t in range(steps):
        cur = i_ff[:, t]
        if w_rec is not None:
            cur = cur + o @ w_rec.T
        cur = cur + b
        u = params.alpha * u + cur - params.theta * o
        o = fire(u, params, relaxed)
        u_all[:, t] = u
        o_all[:, t] = o
    return u_all, o_all


def lif_scan_backward(u_all, o_all, w_rec, g_out, params: LifParams):
    """Reverse-time pass; returns dL/du (B, T, N) and dL/dw_rec.

    ``g_out`` holds the gradient reaching each o[t] from outside the layer.
    The soft-reset and recurrent paths from o[t] into u[t+1] are added here.
    """
    batch, steps, n = u_all.shape
    delta = np.empty_like(u_all)
    sg = surrogate_grad(u_all, params)
    d_next = np.zeros((batch, n), dtype=u_all.dtype)
    for t in range(steps - 1, -1, -1):
        g = g_out[:, t]
        if t + 1 < steps:
            g = g - params.theta * d_next
            if w_rec is not None:
                g = g + d_next @ w_rec
        d = g * sg[:, t] + params.alpha * d_next
        delta[:, t] = d
        d_next = d
    g_rec = None
    if w_rec is not None:
        g_rec = np.einsum("bti,btj->ij", delta[:, 1:], o_all[:, :-1])
    return delta, g_rec


# -- layers -------------------------------------------------------------------

class Dense:
    """Fully connected spiking layer, optionally with recurrent weights."""

    kind = "dense"

    def __init__(self, weights: LayerWeights):
        if weights.w.ndim != 2:
            raise ShapeError("Dense expects a rank-2 weight matrix")
        self.weights = weights

    n_in = property(lambda self: self.weights.n_in)
    n_out = property(lambda self: self.weights.n_out)
    synapses_per_input = property(lambda self: self.weights.n_out)

    def ff_current(self, x):
        return x @ self.weights.w.T

    def ff_backward(self, x, delta):
        gw = np.einsum("bto,bti->oi", delta, x)
        return {"w": gw}, delta @ self.weights.w

    def macs_per_step(self) -> int:
        return self.weights.w.size


class Conv1d:
    """Spiking temporal convolution, stride 1, zero 'same' padding."""

    kind = "conv1d"

    def __init__(self, weights: LayerWeights):
        if weights.w.ndim != 3 or weights.w.shape[2] % 2 != 1:
            raise ShapeError("Conv1d expects (n_out, n_in, k) weights with odd k")
        if weights.w_rec is not None:
            raise ShapeError("Conv1d does not support recurrent weights")
        self.weights = weights

    n_in = property(lambda self: self.weights.n_in)
    n_out = property(lambda self: self.weights.n_out)
    k = property(lambda self: self.weights.w.shape[2])

    @property
    def synapses_per_input(self) -> int:
        return self.weights.n_out * self.k

    def _windows(self, x):
        c = self.k // 2
        xp = np.pad(x, ((0, 0), (c, c), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, self.k, axis=1)
        # (B, T, n_in, k) flattened to match w.reshape(n_out, n_in * k)
        return win.reshape(x.shape[0], x.shape[1], -1)

    def ff_current(self, x):
        w = self.weights.w.reshape(self.n_out, -1)
        return self._windows(x) @ w.T

    def ff_backward(self, x, delta):
        win = self._windows(x)
        gw = np.einsum("bto,btj->oj", delta, win).reshape(self.weights.w.shape)
        dwin = (delta @ self.weights.w.reshape(self.n_out, -1)).reshape(
            x.shape[0], x.shape[1], self.n_in, self.k)
        c = self.k // 2
        dxp = np.zeros((x.shape[0], x.shape[1] + 2 * c, self.n_in), dtype=x.dtype)
        for j in range(self.k):
            dxp[:, j:j + x.shape[1]] += dwin[..., j]
        return {"w": gw}, dxp[:, c:c + x.shape[1]]

    def macs_per_step(self) -> int:
        return self.weights.w.size


class DirectLif:
    """Parameter-free LIF encoding: each input value is injected as current."""

    kind = "direct"

    def __init__(self, n: int, dtype=np.float32):
        self.weights = LayerWeights(np.zeros((n, n), dtype=dtype), np.zeros(n, dtype=dtype))
        self._n = n

    n_in = property(lambda self: self._n)
    n_out = property(lambda self: self._n)
    synapses_per_input = 1

    def ff_current(self, x):
        return x

    def ff_backward(self, x, delta):
        return {}, delta

    def macs_per_step(self) -> int:
        return 0


# -- recording ----------------------------------------------------------------

@dataclass
class LayerTrace:
    name: str
    n_neurons: int
    spike_count: int
    fan_out: int
    stateful: bool = True


@dataclass
class RunTrace:
    """Per-layer spike and update bookkeeping for the power estimator."""

    layers: list[LayerTrace]
    n_steps: int
    duration_s: float
    dsp_macs: int = 0

    def layer(self, name: str) -> LayerTrace:
        for lt in self.layers:
            if lt.name == name:
                return lt
        raise KeyError(name)


@dataclass
class LayerRecord:
    layer: object
    x: np.ndarray
    u: np.ndarray
    o: np.ndarray


@dataclass
class Tape:
    records: list[LayerRecord] = field(default_factory=list)
    relaxed: bool = False

    def replay(self, params: LifParams) -> bool:
        """Re-run every recorded layer from its stored input; True if all outputs match."""
        for rec in self.records:
            _, o = run_layer(rec.layer, rec.x, params, self.relaxed)
            if not np.array_equal(o, rec.o):
                return False
        return True


def run_layer(layer, x, params: LifParams, relaxed: bool = False):
    w = layer.weights
    return lif_scan(layer.ff_current(x), w.b, w.w_rec, params, relaxed)


def backward_layer(layer, rec: LayerRecord, g_out, params: LifParams):
    """Gradients of one layer given dL/d(output); returns (param grads, dL/dx)."""
    delta, g_rec = lif_scan_backward(rec.u, rec.o, layer.weights.w_rec, g_out, params)
    grads, dx = layer.ff_backward(rec.x, delta)
    if grads:
        grads["b"] = delta.sum(axis=(0, 1))
    if g_rec is not None:
        grads["w_rec"] = g_rec
    return grads, dx


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 2:
        return x[None], True
    if x.ndim == 3:
        return x, False
    raise ShapeError(f"input must be (T, N) or (B, T, N), got shape {x.shape}")


def valid_mask(batch: int, steps: int, lengths=None):
    if lengths is None:
        return np.ones((batch, steps), dtype=bool)
    lengths = np.asarray(lengths)
    return np.arange(steps)[None, :] < lengths[:, None]


class LayerStack:
    """A feedforward chain of spiking layers sharing one set of LIF parameters."""

    def __init__(self, layers, names=None, output_fan_out: int = 0):
        self.layers = list(layers)
        self.names = list(names) if names else [f"layer{i}" for i in range(len(self.layers))]
        self.output_fan_out = output_fan_out
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer chain mismatch: {a.n_out} outputs feed {b.n_in} inputs")

    def _check_input(self, x):
        if x.shape[1] < 1:
            raise ShapeError("input must have at least one timestep")
        if self.layers and x.shape[2] != self.layers[0].n_in:
            raise ShapeError(f"input width {x.shape[2]} != first layer n_in {self.layers[0].n_in}")

    def forward(self, x, params: LifParams, relaxed: bool = False):
        out, _, _ = self.forward_recorded(x, params, relaxed=relaxed)
        return out

    def forward_recorded(self, x, params: LifParams, relaxed: bool = False, lengths=None,
                         frame_s: float = 0.015):
        xb, squeeze = _as_batch(x)
        self._check_input(xb)
        tape = Tape(relaxed=relaxed)
        mask = valid_mask(xb.shape[0], xb.shape[1], lengths)[..., None]
        n_steps = int(mask.sum())
        trace_layers = []
        dsp_macs = 0
        if self.layers:
            first = self.layers[0]
            if np.all((xb == 0) | (xb == 1)):
                trace_layers.append(LayerTrace("input", first.n_in, int((xb * mask).sum()),
                                               first.synapses_per_input, stateful=False))
            else:
                dsp_macs = first.macs_per_step() * n_steps
        h = xb
        for i, layer in enumerate(self.layers):
            u, o = run_layer(layer, h, params, relaxed)
            tape.records.append(LayerRecord(layer, h, u, o))
            nxt = self.layers[i + 1].synapses_per_input if i + 1 < len(self.layers) else self.output_fan_out
            if layer.weights.w_rec is not None:
                nxt += layer.n_out
            spikes = int(np.count_nonzero(o * mask)) if not relaxed else int(round(float((o * mask).sum())))
            trace_layers.append(LayerTrace(self.names[i], layer.n_out, spikes, nxt))
            h = o
        trace = RunTrace(trace_layers, n_steps, n_steps * frame_s, dsp_macs)
        out = h[0] if squeeze else h
        return out, tape, trace

    def backward(self, tape: Tape, output_grads, params: LifParams):
        """BPTT through the recorded stack; returns (per-layer grads, dL/dinput)."""
        if len(tape.records) != len(self.layers) or any(
                r.layer is not l for r, l in zip(tape.records, self.layers)):
            raise ShapeError("tape was not recorded on this layer stack")
        g, squeeze = _as_batch(output_grads)
        if tape.records and g.shape != tape.records[-1].o.shape:
            raise ShapeError(f"output_grads shape {g.shape} != output shape {tape.records[-1].o.shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grads[i], g = backward_layer(self.layers[i], tape.records[i], g, params)
        return grads, (g[0] if squeeze else g)


def forward_recorded(stack: LayerStack, x, params: LifParams, **kw):
    return stack.forward_recorded(x, params, **kw)


def relaxed_forward(stack: LayerStack, x, params: LifParams):
    return stack.forward(x, params, relaxed=True)


def bptt_backward(stack: LayerStack, tape: Tape, output_grads, params: LifParams):
    return stack.backward(tape, output_grads, params)

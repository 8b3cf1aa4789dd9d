"""Leaky integrate-and-fire layers with direct encoding and tape-based BPTT.

The same input x is presented at every time step. Each forward records a
tape; `backward(tape, y)` replays it in reverse, accumulating gradients for
all parameters, the shared input, and the initial membrane states. Spikes
are binary in the default (hard) mode with an arctan surrogate replacing
the Heaviside derivative; `smooth=True` swaps the Heaviside for its smooth
primitive so the whole network becomes analytic (the "twin" used by
finite-difference checks and curvature probes).

All math is float64 and single-threaded per tape, so identical inputs give
bitwise-identical losses and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeMismatch(ValueError):
    """Layer input shape does not compose with the layer."""

    def __init__(self, layer_index: int, message: str):
        super().__init__(f"layer {layer_index}: {message}")
        self.layer_index = layer_index


class TapeConsumed(RuntimeError):
    """The model's parameters changed after this tape was recorded."""


@dataclass(frozen=True)
class LifConfig:
    tau: float = 1.1
    v_threshold: float = 1.0
    v_reset: float = 0.0
    surrogate_alpha: float = 2.0

    def __post_init__(self):
        if not self.tau > 1.0:
            raise ValueError(f"tau must be > 1 (got {self.tau})")
        if not self.v_threshold > 0.0:
            raise ValueError(f"v_threshold must be > 0 (got {self.v_threshold})")
        if not self.surrogate_alpha > 0.0:
            raise ValueError(
                f"surrogate_alpha must be > 0 (got {self.surrogate_alpha})"
            )


@dataclass(frozen=True)
class LifState:
    """One step of a spiking layer: pre-reset membrane potential and spikes."""

    v: np.ndarray
    s: np.ndarray


def lif_step(v_prev: np.ndarray, x: np.ndarray, cfg: LifConfig):
    """One hard LIF update: leak toward x, fire at threshold, hard reset.

    Returns (v_new, s). v_pre = v_prev + (x - v_prev)/tau; s = 1 where
    v_pre >= v_threshold; fired neurons reset to v_reset.
    """
    if v_prev.shape != x.shape:
        raise ValueError(f"shape mismatch: v_prev {v_prev.shape} vs x {x.shape}")
    v_pre = v_prev + (x - v_prev) / cfg.tau
    s = (v_pre >= cfg.v_threshold).astype(np.float64)
    v_new = np.where(s == 1.0, cfg.v_reset, v_pre)
    return v_new, s


def surrogate_grad(v_pre: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """Arctan surrogate derivative, peak alpha/2 at v_threshold."""
    a = cfg.surrogate_alpha
    u = np.pi * a * (v_pre - cfg.v_threshold) / 2.0
    return a / (2.0 * (1.0 + u * u))


def smooth_spike(v_pre: np.ndarray, cfg: LifConfig) -> np.ndarray:
    """Smooth primitive of the surrogate: sigma(u) = 1/2 + arctan(pi*a*u/2)/pi.

    Its derivative is exactly `surrogate_grad`, so replacing the Heaviside
    with this makes the hard network's surrogate BPTT the true gradient of
    an analytic twin network.
    """
    a = cfg.surrogate_alpha
    return 0.5 + np.arctan(np.pi * a * (v_pre - cfg.v_threshold) / 2.0) / np.pi


class Linear:
    """Dense layer y = x W^T + b; inputs of rank > 2 are flattened."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = rng.normal(0.0, np.sqrt(2.0 / in_dim), (out_dim, in_dim))
        self.bias = np.zeros(out_dim)

    stateful = False

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward_step(self, x, state, smooth, index):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_dim:
            raise ShapeMismatch(
                index, f"expected {self.in_dim} input features, got {flat.shape[1]}"
            )
        y = flat @ self.weight.T + self.bias
        return y, None, (flat, x.shape)

    def backward_step(self, gy, state_grad, cache, smooth, grads, prefix):
        flat, x_shape = cache
        grads[prefix + "weight"] += gy.T @ flat
        grads[prefix + "bias"] += gy.sum(axis=0)
        return (gy @ self.weight).reshape(x_shape), None


class Conv2d:
    """2-D convolution, stride 1, no padding, square kernel."""

    def __init__(self, in_ch: int, out_ch: int, ksize: int, rng: np.random.Generator):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.ksize = ksize
        fan_in = in_ch * ksize * ksize
        self.kernel = rng.normal(
            0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, ksize, ksize)
        )
        self.bias = np.zeros(out_ch)

    stateful = False

    def param_items(self):
        return [("kernel", self.kernel), ("bias", self.bias)]

    def forward_step(self, x, state, smooth, index):
        k = self.ksize
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeMismatch(
                index,
                f"expected (B, {self.in_ch}, H, W) input, got shape {x.shape}",
            )
        if x.shape[2] < k or x.shape[3] < k:
            raise ShapeMismatch(
                index, f"spatial size {x.shape[2:]} smaller than kernel {k}"
            )
        wins = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
        y = np.einsum("bchwij,ocij->bohw", wins, self.kernel)
        y += self.bias[None, :, None, None]
        return y, None, (x, wins)

    def backward_step(self, gy, state_grad, cache, smooth, grads, prefix):
        x, wins = cache
        k = self.ksize
        grads[prefix + "bias"] += gy.sum(axis=(0, 2, 3))
        grads[prefix + "kernel"] += np.einsum("bohw,bchwij->ocij", gy, wins)
        pad = ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1))
        gyp = np.pad(gy, pad)
        gwins = np.lib.stride_tricks.sliding_window_view(gyp, (k, k), axis=(2, 3))
        gx = np.einsum(
            "bohwij,ocij->bchw", gwins, self.kernel[:, :, ::-1, ::-1]
        )
        return gx, None


class LifActivation:
    """Spiking nonlinearity with membrane state carried across time steps.

    Hard mode: binary spikes, hard reset detached in backward, Heaviside
    derivative replaced by the arctan surrogate. Smooth mode: the spike is
    sigma_a(v_pre - v_th) and the reset interpolates, with the full chain
    rule (including the reset path) applied in backward.
    """

    def __init__(self, cfg: LifConfig):
        self.cfg = cfg

    stateful = True

    def param_items(self):
        return []

    def forward_step(self, x, state, smooth, index):
        cfg = self.cfg
        v_prev = np.zeros_like(x) if state is None else state
        if v_prev.shape != x.shape:
            raise ShapeMismatch(
                index, f"carried state {v_prev.shape} vs input {x.shape}"
            )
        v_pre = v_prev + (x - v_prev) / cfg.tau
        if smooth:
            s = smooth_spike(v_pre, cfg)
            v_new = s * cfg.v_reset + (1.0 - s) * v_pre
        else:
            s = (v_pre >= cfg.v_threshold).astype(np.float64)
            v_new = np.where(s == 1.0, cfg.v_reset, v_pre)
        return s, v_new, LifState(v=v_pre, s=s)

    def backward_step(self, gs, state_grad, cache, smooth, grads, prefix):
        cfg = self.cfg
        v_pre, s = cache.v, cache.s
        gv = np.zeros_like(v_pre) if state_grad is None else state_grad
        sg = surrogate_grad(v_pre, cfg)
        if smooth:
            dv_pre = gs * sg + gv * ((1.0 - s) + (cfg.v_reset - v_pre) * sg)
        else:
            # reset branch detached: only the non-fired lane passes gradient
            dv_pre = gs * sg + gv * (1.0 - s)
        gx = dv_pre / cfg.tau
        gv_prev = dv_pre * (1.0 - 1.0 / cfg.tau)
        return gx, gv_prev


class MeanPoolReadout:
    """Terminal non-spiking leaky integrator; its membrane is the logit.

    4-D inputs are mean-pooled over the spatial axes first. No threshold,
    no reset: v_t = v_{t-1} + (x_t - v_{t-1})/tau is emitted per step.
    """

    def __init__(self, cfg: LifConfig):
        self.cfg = cfg

    stateful = True

    def param_items(self):
        return []

    def forward_step(self, x, state, smooth, index):
        if x.ndim == 4:
            pooled = x.mean(axis=(2, 3))
        elif x.ndim == 2:
            pooled = x
        else:
            raise ShapeMismatch(index, f"expected 2-D or 4-D input, got {x.shape}")
        v_prev = np.zeros_like(pooled) if state is None else state
        v = v_prev + (pooled - v_prev) / self.cfg.tau
        return v, v, (x.shape, x.ndim)

    def backward_step(self, g_logits, state_grad, cache, smooth, grads, prefix):
        x_shape, x_ndim = cache
        gv = g_logits if state_grad is None else g_logits + state_grad
        gpooled = gv / self.cfg.tau
        gv_prev = gv * (1.0 - 1.0 / self.cfg.tau)
        if x_ndim == 4:
            b, c, h, w = x_shape
            gx = np.broadcast_to(
                gpooled[:, :, None, None] / (h * w), x_shape
            ).copy()
        else:
            gx = gpooled
        return gx, gv_prev


@dataclass
class TapeGraph:
    """Forward record: enough to replay backward any number of times.

    Replaying is pure (identical gradients each time); the tape only becomes
    invalid when the model's parameters change, which `backward` detects via
    the version counter and reports as TapeConsumed.
    """

    model: "Model"
    version: int
    x: np.ndarray
    t_steps: int
    smooth: bool
    logits_per_step: list
    caches: list  # [step][layer] forward caches
    initial_state: list  # per-layer state the pass started from (None entries)


@dataclass
class ForwardResult:
    logits_per_step: list
    tape: TapeGraph
    final_state: list  # per-layer carried state after step T


@dataclass
class GradientSet:
    """Gradients of the summed-over-steps, batch-averaged loss."""

    params: dict  # name -> array, ordered like Model.param_index
    x_grad: np.ndarray  # per-sample gradient w.r.t. the shared input
    initial_state_grad: list  # per-layer gradient w.r.t. the initial state

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.params.values()])


class Model:
    """Ordered layer stack with a deterministic flat parameter index."""

    def __init__(self, layers: list, input_shape: tuple):
        if not layers:
            raise ValueError("model needs at least one layer")
        for i, layer in enumerate(layers[:-1]):
            if isinstance(layer, MeanPoolReadout):
                raise ValueError(f"readout must be the final layer (found at {i})")
        if not isinstance(layers[-1], MeanPoolReadout):
            raise ValueError("final layer must be a readout")
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.version = 0
        names = [
            f"{i}.{name}"
            for i, layer in enumerate(layers)
            for name, _ in layer.param_items()
        ]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def param_index(self) -> list:
        return [
            (f"{i}.{name}", arr.shape)
            for i, layer in enumerate(self.layers)
            for name, arr in layer.param_items()
        ]

    def params(self) -> dict:
        return {
            f"{i}.{name}": arr
            for i, layer in enumerate(self.layers)
            for name, arr in layer.param_items()
        }

    @property
    def num_params(self) -> int:
        return sum(arr.size for _, arr in self.param_index_arrays())

    def param_index_arrays(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.param_items():
                yield f"{i}.{name}", arr

    def set_params(self, new: dict) -> None:
        """Replace parameter arrays (not in place) and invalidate old tapes."""
        for i, layer in enumerate(self.layers):
            for name, _ in layer.param_items():
                key = f"{i}.{name}"
                if key in new:
                    arr = np.asarray(new[key], dtype=np.float64)
                    current = getattr(layer, name)
                    if arr.shape != current.shape:
                        raise ValueError(
                            f"shape mismatch for {key}: "
                            f"{arr.shape} vs {current.shape}"
                        )
                    setattr(layer, name, arr)
        self.version += 1

    def flat_params(self) -> np.ndarray:
        return np.concatenate(
            [arr.ravel() for _, arr in self.param_index_arrays()]
        )

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} entries, got {vec.shape}")
        new = {}
        offset = 0
        for name, shape in self.param_index:
            size = int(np.prod(shape))
            new[name] = vec[offset : offset + size].reshape(shape).copy()
            offset += size
        self.set_params(new)


def forward(
    model: Model,
    x: np.ndarray,
    t_steps: int,
    smooth: bool = False,
    initial_state: list | None = None,
) -> ForwardResult:
    """Run T direct-encoding steps (same x each step); record the tape.

    `initial_state` (per-layer, None for stateless layers) lets callers
    chain passes; membranes start at zero when omitted.
    """
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == len(model.input_shape):  # single sample: add batch axis
        x = x[None]
    if x.shape[1:] != model.input_shape:
        raise ShapeMismatch(
            0, f"input shape {x.shape[1:]} != model input {model.input_shape}"
        )
    n_layers = len(model.layers)
    if initial_state is None:
        state = [None] * n_layers
    else:
        if len(initial_state) != n_layers:
            raise ValueError("initial_state must have one entry per layer")
        state = list(initial_state)
    init_state = list(state)
    logits_per_step = []
    caches = []
    for _ in range(t_steps):
        h = x
        step_caches = []
        for i, layer in enumerate(model.layers):
            h, state[i], cache = layer.forward_step(h, state[i], smooth, i)
            step_caches.append(cache)
        logits_per_step.append(h)
        caches.append(step_caches)
    tape = TapeGraph(
        model=model,
        version=model.version,
        x=x,
        t_steps=t_steps,
        smooth=smooth,
        logits_per_step=logits_per_step,
        caches=caches,
        initial_state=init_state,
    )
    return ForwardResult(logits_per_step, tape, state)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _as_labels(y, batch: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 0:
        y = y[None]
    if y.shape != (batch,):
        raise ValueError(f"expected {batch} labels, got shape {y.shape}")
    return y.astype(np.intp)


def loss(logits_per_step: list, y) -> float:
    """Cross-entropy summed over time steps, averaged over the batch."""
    batch, n_classes = logits_per_step[0].shape
    labels = _as_labels(y, batch)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label out of range")
    total = 0.0
    for z in logits_per_step:
        shifted = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        total += float((lse - shifted[np.arange(batch), labels]).mean())
    return total


def backward(tape: TapeGraph, y, state_grad: list | None = None) -> GradientSet:
    """Reverse replay of the tape for the summed-CE loss against labels y.

    Accumulates gradients across all time steps through the membrane
    recurrences. `state_grad` (per-layer) injects incoming gradients on the
    final carried state, which makes chained single-step tapes reproduce a
    full multi-step backward exactly.
    """
    model = tape.model
    if tape.version != model.version:
        raise TapeConsumed(
            "model parameters changed since this tape was recorded; run a "
            "fresh forward"
        )
    batch = tape.x.shape[0]
    labels = _as_labels(y, batch)
    n_layers = len(model.layers)
    grads = {name: np.zeros(shape) for name, shape in model.param_index}
    sgrads = list(state_grad) if state_grad is not None else [None] * n_layers
    if len(sgrads) != n_layers:
        raise ValueError("state_grad must have one entry per layer")
    x_grad = np.zeros_like(tape.x)
    rows = np.arange(batch)
    for t in reversed(range(tape.t_steps)):
        p = _softmax(tape.logits_per_step[t])
        p[rows, labels] -= 1.0
        g = p / batch
        for i in reversed(range(n_layers)):
            layer = model.layers[i]
            g, sgrads[i] = layer.backward_step(
                g, sgrads[i], tape.caches[t][i], tape.smooth, grads, f"{i}."
            )
        x_grad += g
    return GradientSet(params=grads, x_grad=x_grad, initial_state_grad=sgrads)


def loss_and_grad(
    model: Model, x: np.ndarray, y, t_steps: int, smooth: bool = False
):
    """Convenience: forward, loss, backward in one call."""
    fr = forward(model, x, t_steps, smooth=smooth)
    value = loss(fr.logits_per_step, y)
    return value, backward(fr.tape, y), fr


def build_mlp(dims: list, cfg: LifConfig, seed: int) -> Model:
    """Dense spiking net: Linear+LIF per hidden layer, Linear+readout last.

    dims = [input, hidden..., classes]; e.g. [64, 128, 64, 4].
    """
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    rng = np.random.default_rng((seed, 101))
    layers = []
    for a, b in zip(dims[:-2], dims[1:-1]):
        layers.append(Linear(a, b, rng))
        layers.append(LifActivation(cfg))
    layers.append(Linear(dims[-2], dims[-1], rng))
    layers.append(MeanPoolReadout(cfg))
    return Model(layers, (dims[0],))


def build_convnet(
    input_shape: tuple,
    conv: list,
    dense: list,
    n_classes: int,
    cfg: LifConfig,
    seed: int,
) -> Model:
    """Small conv net: (Conv2d+LIF)*, then (Linear+LIF)*, Linear, readout.

    `conv` is a list of (out_channels, kernel_size); `dense` a list of
    hidden widths. Convolutions are stride 1, no padding.
    """
    c, h, w = input_shape
    rng = np.random.default_rng((seed, 101))
    layers = []
    for out_ch, k in conv:
        layers.append(Conv2d(c, out_ch, k, rng))
        layers.append(LifActivation(cfg))
        c, h, w = out_ch, h - k + 1, w - k + 1
        if h < 1 or w < 1:
            raise ValueError("conv stack shrinks spatial size below 1")
    flat = c * h * w
    for width in dense:
        layers.append(Linear(flat, width, rng))
        layers.append(LifActivation(cfg))
        flat = width
    layers.append(Linear(flat, n_classes, rng))
    layers.append(MeanPoolReadout(cfg))
    return Model(layers, tuple(input_shape))

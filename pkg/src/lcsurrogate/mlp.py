"""Dense feed-forward networks trained with backpropagation and Adam.

Two models are built from this engine:

* the direct model, normalized voltages ``v / 10`` -> Cholesky rows ``tau``;
* the compound model, density rows -> inverse net -> normalized voltages ->
  frozen direct net -> ``tau`` -> density rows, trained so that the output
  state reproduces the input state.

Everything runs in float64 on numpy; one training run is single-threaded
Python and deterministic for a fixed seed.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import qstate
from .errors import DataError, DimensionMismatch, EmptyDataset

log = logging.getLogger(__name__)

VOLT_SCALE = 10.0
ACTIVATIONS = ("relu", "linear", "sigmoid_scaled")


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise DataError(f"unknown activation {self.activation!r}")


@dataclass
class MlpModel:
    layers: list[Layer]
    trainable: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[1] != b.weight.shape[0]:
                raise DimensionMismatch("adjacent layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def forward(self, x) -> np.ndarray:
        return forward(self, x)

    __call__ = forward

    def count_params(self) -> int:
        return count_params(self)

    def copy(self) -> "MlpModel":
        return copy.deepcopy(self)

    def weights_digest(self) -> str:
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(layer.weight.tobytes())
            h.update(layer.bias.tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "kind": "mlp",
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "trainable": self.trainable,
            "layers": [
                {
                    "rows": int(l.weight.shape[0]),
                    "cols": int(l.weight.shape[1]),
                    "activation": l.activation,
                    "weight": l.weight.ravel().tolist(),
                    "bias": l.bias.tolist(),
                }
                for l in self.layers
            ],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        layers = [
            Layer(
                np.array(l["weight"], dtype=float).reshape(l["rows"], l["cols"]),
                np.array(l["bias"], dtype=float),
                l["activation"],
            )
            for l in d["layers"]
        ]
        return cls(layers, d.get("trainable", True), d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MlpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainConfig:
    hidden_layers: int = 8
    neurons_per_layer: int = 64
    batch_size: int = 256
    learning_rate: float = 1e-3
    dropout_rate: float = 0.0
    epochs: int = 300
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # constant learning rate for the first lr_decay_start of the epochs, then a
    # geometric decay reaching lr * lr_final_factor at the last epoch
    lr_decay_start: float = 0.6
    lr_final_factor: float = 0.03
    eval_every: int = 1
    # compound training only: penalty on inverse-output logits beyond +-logit_bound
    logit_bound: float = 4.0
    logit_penalty: float = 0.0
    # compound training only: independent inverse runs (seeds seed, seed + 1, ...);
    # the one with the best validation infidelity is kept
    restarts: int = 1

    def __post_init__(self):
        if min(self.hidden_layers, self.neurons_per_layer, self.batch_size, self.epochs, self.eval_every, self.restarts) < 1:
            raise DataError("counts in TrainConfig must be positive")
        if not self.learning_rate > 0:
            raise DataError("learning_rate must be positive")
        if not 0 <= self.lr_decay_start <= 1 or not self.lr_final_factor > 0:
            raise DataError("lr_decay_start must lie in [0, 1] and lr_final_factor be positive")
        if not 0 <= self.dropout_rate < 1:
            raise DataError("dropout_rate must lie in [0, 1)")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def compound_config(**changes) -> TrainConfig:
    """Default training setup for the inverse network of a compound model.

    No continuous map inverts the device over the whole sphere, so the
    inverse must sharpen a seam; that takes about twice the direct model's
    epochs, the logit guard keeps the sigmoid outputs trainable meanwhile,
    and three restarts guard against a badly placed seam.
    """
    return TrainConfig(epochs=600, logit_penalty=1e-2, restarts=3).replace(**changes)


@dataclass(frozen=True)
class InfidelityStats:
    mean: float
    p5: float
    p95: float
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


# -- construction ---------------------------------------------------------------

RELU_GAIN = math.sqrt(6.0)


def build(sizes: list[int], output_activation: str = "linear", seed=0) -> MlpModel:
    """Dense net with ReLU hidden layers.

    Weights are uniform with bound ``gain / sqrt(fan_in)``: gain sqrt(6) (He)
    for layers feeding a ReLU, 1 for the output layer. Biases use the
    ``1 / sqrt(fan_in)`` bound throughout.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        last = k == len(sizes) - 2
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if not last:
            w *= RELU_GAIN
        b = rng.uniform(-bound, bound, size=fan_out)
        act = output_activation if last else "relu"
        layers.append(Layer(w, b, act))
    return MlpModel(layers)


def architecture(n_in: int, n_out: int, hidden_layers: int, neurons: int) -> list[int]:
    return [n_in] + [neurons] * hidden_layers + [n_out]


def count_params(model) -> int:
    if isinstance(model, CompoundModel):
        return count_params(model.inverse) + (count_params(model.direct) if model.direct.trainable else 0)
    if not model.trainable:
        return 0
    return sum(l.weight.size + l.bias.size for l in model.layers)


def count_params_for(n_in: int, n_out: int, hidden_layers: int, neurons: int) -> int:
    sizes = architecture(n_in, n_out, hidden_layers, neurons)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


# -- forward / backward ----------------------------------------------------------

def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid_scaled":
        return 0.5 * (1.0 + np.tanh(0.5 * z))  # overflow-free logistic
    return z


def _check_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"expected input dim {model.input_dim}, got {x.shape[-1]}")
    return x


def forward(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = _check_input(model, x.reshape(1, -1) if single else x)
    for layer in model.layers:
        h = _activate(h @ layer.weight + layer.bias, layer.activation)
    return h[0] if single else h


def forward_cache(model: MlpModel, x: np.ndarray, dropout_rate: float = 0.0, rng=None):
    """Forward pass that keeps what backward() needs.

    Inverted dropout is applied to hidden activations only; at rate 0 no
    mask is drawn and the pass is identical to :func:`forward`.
    """
    x = _check_input(model, np.asarray(x, dtype=float))
    inputs, outputs, masks = [], [], []
    h = x
    last = len(model.layers) - 1
    for k, layer in enumerate(model.layers):
        inputs.append(h)
        a = _activate(h @ layer.weight + layer.bias, layer.activation)
        outputs.append(a)
        mask = None
        if dropout_rate > 0 and k < last:
            keep = 1.0 - dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        masks.append(mask)
        h = a
    return h, (inputs, outputs, masks)


def backward(model: MlpModel, cache, grad_out: np.ndarray, param_grads: bool = True, grad_logits=None):
    """Return ``(grads, grad_input)``; ``grads`` is a list of ``(dW, db)``.

    ``grads`` is ``None`` when ``param_grads`` is false, which is how a
    frozen network passes gradients upstream without computing its own.
    ``grad_logits`` is an extra gradient on the output layer's
    pre-activation, for losses that look at the logits directly.
    """
    inputs, outputs, masks = cache
    grads = [None] * len(model.layers) if param_grads else None
    g = grad_out
    last = len(model.layers) - 1
    for k in range(last, -1, -1):
        layer = model.layers[k]
        if masks[k] is not None:
            g = g * masks[k]
        act = layer.activation
        if act == "relu":
            g = g * (outputs[k] > 0)
        elif act == "sigmoid_scaled":
            s = outputs[k]
            g = g * s * (1.0 - s)
        if k == last and grad_logits is not None:
            g = g + grad_logits
        if param_grads:
            grads[k] = (inputs[k].T @ g, g.sum(axis=0))
        g = g @ layer.weight.T
    return grads, g


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def backprop_batch(model: MlpModel, x, y, dropout_rate: float = 0.0, rng=None):
    """MSE loss (mean over samples and components), parameter and input gradients."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) == 0:
        raise EmptyDataset("empty batch")
    out, cache = forward_cache(model, x, dropout_rate, rng)
    if out.shape != y.shape:
        raise DimensionMismatch(f"target shape {y.shape} does not match output {out.shape}")
    loss, g = mse(out, y)
    grads, gx = backward(model, cache, g, param_grads=model.trainable)
    return loss, grads, gx


# -- Adam --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "AdamState":
        m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
        v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in model.layers]
        return cls(m, v, 0)


def adam_step(model: MlpModel, grads, state: AdamState, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place on ``model`` and ``state``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for layer, (gw, gb), (mw, mb), (vw, vb) in zip(model.layers, grads, state.m, state.v):
        for p, g, m, v in ((layer.weight, gw, mw, vw), (layer.bias, gb, mb, vb)):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# -- predictors ----------------------------------------------------------------------

def volts_to_input(volts) -> np.ndarray:
    return np.asarray(volts, dtype=float) / VOLT_SCALE


class DirectPredictor:
    """Voltages ``(N, 3)`` -> density rows through a direct network."""

    def __init__(self, model: MlpModel):
        self.model = model

    def __call__(self, volts) -> np.ndarray:
        tau = forward(self.model, volts_to_input(volts))
        return qstate.tau_to_rho4_safe(tau)


@dataclass
class CompoundModel:
    inverse: MlpModel
    direct: MlpModel
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inverse.output_dim != 3 or self.direct.input_dim != 3:
            raise DimensionMismatch("inverse must emit 3 values and direct must take 3")
        if self.inverse.input_dim != 4 or self.direct.output_dim != 4:
            raise DimensionMismatch("compound ends must be 4-dimensional")

    def voltages(self, states) -> np.ndarray:
        """Predicted control voltages in volts, always within [0, 10]."""
        return VOLT_SCALE * forward(self.inverse, states)

    def reconstruct(self, states) -> np.ndarray:
        u = forward(self.inverse, states)
        return qstate.tau_to_rho4_safe(forward(self.direct, u))

    def to_dict(self) -> dict:
        return {"kind": "compound", "inverse": self.inverse.to_dict(), "direct": self.direct.to_dict(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "CompoundModel":
        direct = MlpModel.from_dict(d["direct"])
        direct.trainable = False
        return cls(MlpModel.from_dict(d["inverse"]), direct, d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CompoundModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def infidelity_stats(infidelities) -> InfidelityStats:
    x = np.asarray(infidelities, dtype=float)
    if x.size == 0:
        raise EmptyDataset("no samples to summarize")
    # Hazen positions: the k-th smallest of n sits at percentile (k - 1/2) / n
    p5, p95 = np.percentile(x, [5, 95], method="hazen")
    return InfidelityStats(float(x.mean()), float(p5), float(p95), int(x.size))


def infidelities(predictor, data) -> np.ndarray:
    if len(data) == 0:
        raise EmptyDataset("empty dataset")
    if isinstance(predictor, CompoundModel) or hasattr(predictor, "reconstruct"):
        out = predictor.reconstruct(data.states)
    else:
        out = predictor(data.voltages)
    return 1.0 - qstate.fidelity4(out, data.states)


def evaluate(predictor, data) -> InfidelityStats:
    """Direct predictors are scored against the recorded state, compound
    models against their own input state."""
    return infidelity_stats(infidelities(predictor, data))


# -- training ------------------------------------------------------------------------

def _lr_at(config: TrainConfig, epoch: int) -> float:
    start = config.lr_decay_start * (config.epochs - 1)
    if config.lr_final_factor == 1.0 or epoch <= start:
        return config.learning_rate
    return config.learning_rate * config.lr_final_factor ** ((epoch - start) / (config.epochs - 1 - start))


def _fit(
    model: MlpModel,
    n: int,
    step: Callable,
    score: Callable[[], float],
    config: TrainConfig,
    rng: np.random.Generator,
    history: list | None,
):
    adam = AdamState.zeros_like(model)
    best = (math.inf, model.copy(), -1)
    for epoch in range(config.epochs):
        lr = _lr_at(config, epoch)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = step(idx, rng)
            adam_step(model, grads, adam, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            total += loss * len(idx)
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            val = score()
            if history is not None:
                history.append({"epoch": epoch + 1, "train_loss": total / n, "val_infidelity": val})
            if val < best[0]:
                best = (val, model.copy(), epoch + 1)
    return best


def train_direct(train, val, config: TrainConfig | None = None, history: list | None = None) -> MlpModel:
    """Fit voltages -> tau and keep the epoch with the best validation infidelity."""
    config = config or TrainConfig()
    if len(train) == 0:
        raise EmptyDataset("empty training set")
    rng = np.random.default_rng(config.seed)
    model = build(architecture(3, 4, config.hidden_layers, config.neurons_per_layer), "linear", rng)
    x = volts_to_input(train.voltages)
    y = qstate.rho4_to_tau(train.states)
    val = val if val is not None and len(val) else train
    xv = volts_to_input(val.voltages)

    def step(idx, rng):
        loss, grads, _ = backprop_batch(model, x[idx], y[idx], config.dropout_rate, rng)
        return loss, grads

    def score():
        pred = qstate.tau_to_rho4_safe(forward(model, xv))
        return float(np.mean(1.0 - qstate.fidelity4(pred, val.states)))

    t0 = time.perf_counter()
    best_val, best_model, best_epoch = _fit(model, len(train), step, score, config, rng, history)
    best_model.meta = {
        "role": "direct",
        "config": config.to_dict(),
        "train_digest": train.digest(),
        "best_epoch": best_epoch,
        "val_mean_infidelity": best_val,
        "train_seconds": time.perf_counter() - t0,
    }
    log.info("direct %s: best val %.3g at epoch %d", config.hidden_layers, best_val, best_epoch)
    return best_model


def logit_guard(z: np.ndarray, bound: float, weight: float) -> tuple[float, np.ndarray]:
    """Quadratic penalty on logits beyond +-bound, with its gradient.

    A saturated sigmoid passes almost no gradient, so a sample whose
    voltage sits on a rail for the wrong branch would stay there; the
    guard pulls such logits back into the responsive range.
    """
    excess = np.sign(z) * np.maximum(np.abs(z) - bound, 0.0)
    return float(weight * np.mean(excess * excess)), 2.0 * weight * excess / z.size


def compound_loss_and_grads(
    inverse: MlpModel,
    direct: MlpModel,
    states,
    dropout_rate=0.0,
    rng=None,
    direct_param_grads=False,
    logit_bound: float = math.inf,
    logit_penalty: float = 0.0,
):
    """Loss in state space and gradients; the direct net only passes gradients through."""
    states = np.asarray(states, dtype=float)
    u, inv_cache = forward_cache(inverse, states, dropout_rate, rng)
    tau, dir_cache = forward_cache(direct, u)
    out = qstate.tau_to_rho4(tau)
    loss, g = mse(out, states)
    g_logits = None
    if logit_penalty > 0:
        last = inverse.layers[-1]
        z = inv_cache[0][-1] @ last.weight + last.bias
        extra, g_logits = logit_guard(z, logit_bound, logit_penalty)
        loss += extra
    g_tau = qstate.tau_to_rho4_vjp(tau, g)
    dir_grads, g_u = backward(direct, dir_cache, g_tau, param_grads=direct_param_grads)
    inv_grads, g_x = backward(inverse, inv_cache, g_u, grad_logits=g_logits)
    return loss, inv_grads, dir_grads, g_x


def _inverse_run(frozen: MlpModel, train, val, config: TrainConfig, history: list | None):
    rng = np.random.default_rng(config.seed)
    inverse = build(architecture(4, 3, config.hidden_layers, config.neurons_per_layer), "sigmoid_scaled", rng)
    x = train.states

    def step(idx, rng):
        loss, grads, _, _ = compound_loss_and_grads(
            inverse, frozen, x[idx], config.dropout_rate, rng, logit_bound=config.logit_bound, logit_penalty=config.logit_penalty
        )
        return loss, grads

    def score():
        pred = CompoundModel(inverse, frozen).reconstruct(val.states)
        return float(np.mean(1.0 - qstate.fidelity4(pred, val.states)))

    return _fit(inverse, len(train), step, score, config, rng, history)


def train_compound(direct: MlpModel, train, val, config: TrainConfig | None = None, history: list | None = None) -> CompoundModel:
    """Train the inverse through a frozen copy of ``direct``.

    Which seam the inverse settles on is fixed early and differs a lot
    between initializations, so ``config.restarts`` independent runs are
    made and the best by validation infidelity is returned. ``history``
    rows carry the seed of their run.
    """
    config = config or TrainConfig()
    if len(train) == 0:
        raise EmptyDataset("empty training set")
    frozen = direct.copy()
    frozen.trainable = False
    digest = direct.weights_digest()
    val = val if val is not None and len(val) else train

    t0 = time.perf_counter()
    runs = []
    for k in range(config.restarts):
        seed = config.seed + k
        rows: list = []
        runs.append((*_inverse_run(frozen, train, val, config.replace(seed=seed), rows), seed))
        log.info("compound seed %d: best val %.3g at epoch %d", seed, runs[-1][0], runs[-1][2])
        if history is not None:
            history.extend({**r, "seed": seed} for r in rows)
    best_val, best_inverse, best_epoch, seed = min(runs, key=lambda r: r[0])
    if frozen.weights_digest() != digest or direct.weights_digest() != digest:
        raise RuntimeError("frozen direct model changed during compound training")
    best_inverse.meta = {
        "role": "inverse",
        "config": config.to_dict(),
        "train_digest": train.digest(),
        "init_seed": seed,
        "restart_val": [r[0] for r in runs],
        "best_epoch": best_epoch,
        "val_mean_infidelity": best_val,
        "train_seconds": time.perf_counter() - t0,
    }
    return CompoundModel(best_inverse, frozen, {"direct_digest": digest})

"""Dense float64 MLP with exact reverse-mode gradients.

Tensors are plain C-contiguous float64 numpy arrays; no broadcasting
tricks, explicit shapes only, so the gradient code can be audited line by
line.  The network is a stack of affine layers with ReLU between them and
raw logits at the output.  The ReLU subgradient at exactly zero is taken
to be zero, which keeps every computation deterministic.

Gradients are implemented twice over, in a sense: the analytic backward
pass here, and the finite-difference oracles in the test-suite that pin it
down to 1e-5 relative error.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .rng import substream

__all__ = [
    "Mlp",
    "forward",
    "cross_entropy",
    "mean_cross_entropy",
    "per_sample_cross_entropy",
    "grad_params",
    "grad_input",
    "grad_input_batch",
    "ce_and_grad_input_batch",
    "grad_input_from_logit_cotangent",
    "save_model",
    "load_model",
]


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


def _as_matrix(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Promote a single sample (d,) to a (1, d) batch; report if promoted."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError(f"input must be 1-D or 2-D, got shape {x.shape}")


class Mlp:
    """Feed-forward ReLU classifier defined by explicit weight/bias arrays."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be nonempty and equal length")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(
                    f"layer {i} expects {w.shape[1]} inputs but layer {i-1} "
                    f"produces {self.weights[i-1].shape[0]}"
                )

    @classmethod
    def init(cls, layer_sizes: Sequence[int], seed: int) -> "Mlp":
        """He-normal weights, zero biases, drawn from substream(seed, 0)."""
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = substream(seed, 0)
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.standard_normal((fan_out, fan_in)) * scale)
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _forward_cache(self, x: np.ndarray):
        """Activations per layer; returns (activation list, preactivation list)."""
        acts = [x]
        pres = []
        a = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w.T + b
            pres.append(z)
            a = np.maximum(z, 0.0) if i < len(self.weights) - 1 else z
            acts.append(a)
        return acts, pres


def forward(model: Mlp, x: np.ndarray) -> np.ndarray:
    """Logits for a single sample (d,) -> (K,) or a batch (n,d) -> (n,K)."""
    mat, single = _as_matrix(x)
    _check_finite("input", mat)
    if mat.shape[1] != model.in_dim:
        raise ValueError(f"input has {mat.shape[1]} features, model expects {model.in_dim}")
    acts, _ = model._forward_cache(mat)
    logits = acts[-1]
    _check_finite("logits", logits)
    return logits[0] if single else logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: int) -> float:
    """Softmax cross-entropy for one sample, stable at extreme logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError(f"logits must be a vector of >= 2 classes, got {logits.shape}")
    if not 0 <= y < logits.shape[0]:
        raise ValueError(f"label {y} out of range for {logits.shape[0]} classes")
    _check_finite("logits", logits)
    return float(-_log_softmax(logits[None, :])[0, y])


def mean_cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    """Mean softmax cross-entropy over a batch (n, K) with labels (n,)."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise ValueError("batch shape mismatch")
    if logits.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if y.min() < 0 or y.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(y)), y].mean())


def per_sample_cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample softmax cross-entropy for a batch (n, K), labels (n,)."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y)
    logp = _log_softmax(logits)
    return -logp[np.arange(len(y)), y]


def _validate_batch(model: Mlp, x: np.ndarray, y: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("expected inputs (n, d) with labels (n,)")
    if x.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if x.shape[1] != model.in_dim:
        raise ValueError(f"inputs have {x.shape[1]} features, model expects {model.in_dim}")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError("label out of range")
    _check_finite("inputs", x)
    return x, y


def _backward(model: Mlp, acts, pres, delta: np.ndarray, want_params: bool,
              want_input: bool):
    """Shared backward pass from a logit cotangent `delta` of shape (n, K)."""
    grads = [None] * len(model.weights) if want_params else None
    for i in range(len(model.weights) - 1, -1, -1):
        if want_params:
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ model.weights[i]) * (pres[i - 1] > 0.0)
        elif want_input:
            delta = delta @ model.weights[0]
    return grads, (delta if want_input else None)


def grad_params(model: Mlp, x: np.ndarray, y: np.ndarray):
    """Gradient of the mean cross-entropy wrt every (weight, bias) pair."""
    x, y = _validate_batch(model, x, y)
    acts, pres = model._forward_cache(x)
    delta = _softmax(acts[-1])
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    grads, _ = _backward(model, acts, pres, delta, want_params=True, want_input=False)
    return grads


def grad_input_batch(model: Mlp, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-sample gradient of that sample's cross-entropy wrt its input."""
    x, y = _validate_batch(model, x, y)
    acts, pres = model._forward_cache(x)
    delta = _softmax(acts[-1])
    delta[np.arange(len(y)), y] -= 1.0
    _, dx = _backward(model, acts, pres, delta, want_params=False, want_input=True)
    return dx


def ce_and_grad_input_batch(model: Mlp, x: np.ndarray, y: np.ndarray):
    """Per-sample losses and input gradients from one forward/backward pass."""
    x, y = _validate_batch(model, x, y)
    acts, pres = model._forward_cache(x)
    losses = per_sample_cross_entropy(acts[-1], y)
    delta = _softmax(acts[-1])
    delta[np.arange(len(y)), y] -= 1.0
    _, dx = _backward(model, acts, pres, delta, want_params=False, want_input=True)
    return losses, dx


def grad_input(model: Mlp, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of the cross-entropy at one sample wrt the input vector."""
    return grad_input_batch(model, np.asarray(x, dtype=np.float64)[None, :],
                            np.asarray([y]))[0]


def grad_input_from_logit_cotangent(model: Mlp, x: np.ndarray,
                                    cotangent: np.ndarray) -> np.ndarray:
    """Input gradient of <cotangent, logits>; used for margin-style losses."""
    mat, single = _as_matrix(x)
    cot, _ = _as_matrix(cotangent)
    if cot.shape != (mat.shape[0], model.n_classes):
        raise ValueError("cotangent shape mismatch")
    acts, pres = model._forward_cache(mat)
    _, dx = _backward(model, acts, pres, cot.astype(np.float64),
                      want_params=False, want_input=True)
    return dx[0] if single else dx


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_model(model: Mlp, path, seed: Optional[int] = None,
               defense: Optional[str] = None) -> None:
    """Single-JSON checkpoint: sizes, activation tag, flat parameters."""
    doc = {
        "layer_sizes": model.layer_sizes,
        "activation": "relu",
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "seed": seed,
        "defense": defense,
    }
    Path(path).write_text(json.dumps(doc))


def load_model(path) -> tuple[Mlp, dict]:
    """Load a checkpoint, rejecting any broken dimension chain."""
    doc = json.loads(Path(path).read_text())
    sizes = doc["layer_sizes"]
    if doc.get("activation") != "relu":
        raise ValueError(f"unsupported activation {doc.get('activation')!r}")
    if len(sizes) < 2 or len(doc["weights"]) != len(sizes) - 1:
        raise ValueError("checkpoint layer count inconsistent with sizes")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        w = np.asarray(doc["weights"][i], dtype=np.float64)
        b = np.asarray(doc["biases"][i], dtype=np.float64)
        if w.size != fan_in * fan_out:
            raise ValueError(
                f"layer {i}: {w.size} weights cannot form a {fan_out}x{fan_in} matrix"
            )
        if b.size != fan_out:
            raise ValueError(f"layer {i}: bias length {b.size} != {fan_out}")
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(b)
    meta = {"seed": doc.get("seed"), "defense": doc.get("defense")}
    return Mlp(weights, biases), meta

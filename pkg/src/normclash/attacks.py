"""Loss-maximization (PGD) and perturbation-minimization (C&W style) attacks.

Both attacks operate on batches internally; samples are independent, so a
batch is just the data-parallel form of n single attacks.  Per-sample
randomness (random starts, noise draws for gradient averaging) comes from
substream(seed, sample_index), which makes every attack reproducible and
independent of batching.

PGD returns the best-loss iterate over the visited trajectory, clean point
included, so the reported loss never falls below the clean loss and the
perturbation always satisfies its ball constraint.  The norm-minimizing
attack runs gradient descent in tanh-space with a per-sample search over
the trade-off constant, keeping the smallest successful perturbation seen
anywhere along the way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import nn
from .geometry import BallSpec, sample_uniform_l2
from .noise import NoiseDistribution, predict_batch, predict_randomized_batch
from .rng import mix, substream

__all__ = [
    "PgdConfig",
    "CwConfig",
    "AdversarialExample",
    "steepest_direction",
    "project_ball",
    "pgd_attack",
    "pgd_attack_batch",
    "cw_attack",
    "cw_attack_batch",
    "eot_gradient",
    "pgd_eot_attack",
    "pgd_eot_attack_batch",
]


@dataclass
class PgdConfig:
    """Projected-gradient attack settings.

    `step_size` defaults to 2 * epsilon / steps.  `epsilon == 0` is the
    degenerate ball: the attack returns the clean input.
    """

    norm: str
    epsilon: float
    steps: int = 20
    step_size: Optional[float] = None
    random_init: bool = False
    clip_domain: bool = True

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ValueError(f"norm must be 'l2' or 'linf', got {self.norm!r}")
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is None:
            self.step_size = 2.0 * self.epsilon / self.steps
        elif self.step_size <= 0.0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")


@dataclass
class CwConfig:
    """Norm-minimization attack settings (L2, untargeted)."""

    kappa: float = 0.0
    lambda_init: float = 1e-2
    binary_search_steps: int = 9
    inner_iters: int = 1000
    learning_rate: float = 1e-2

    def __post_init__(self):
        if self.kappa < 0.0:
            raise ValueError("kappa must be >= 0")
        for name in ("lambda_init", "binary_search_steps", "inner_iters", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class AdversarialExample:
    """One attack outcome: the produced input plus its bookkeeping."""

    x_adv: np.ndarray
    success: bool
    l2_norm: float
    linf_norm: float
    loss_value: float
    iterations_used: int


# ---------------------------------------------------------------------------
# Geometry primitives
# ---------------------------------------------------------------------------

def steepest_direction(grad: np.ndarray, norm: str) -> np.ndarray:
    """Unit-norm ascent direction: sign for Linf, normalized for L2.

    A zero gradient maps to the zero vector (null PGD step) rather than an
    arbitrary direction.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient contains non-finite entries")
    if norm == "linf":
        return np.sign(grad)
    if norm == "l2":
        n = float(np.linalg.norm(grad))
        return grad / n if n > 0.0 else np.zeros_like(grad)
    raise ValueError(f"norm must be 'l2' or 'linf', got {norm!r}")


def _steepest_batch(grads: np.ndarray, norm: str) -> np.ndarray:
    if norm == "linf":
        return np.sign(grads)
    norms = np.linalg.norm(grads, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return grads / safe


def _project_batch(points: np.ndarray, origin: np.ndarray, norm: str,
                   eps: float) -> np.ndarray:
    if norm == "linf":
        return np.clip(points, origin - eps, origin + eps)
    delta = points - origin
    norms = np.linalg.norm(delta, axis=1, keepdims=True)
    scale = np.where(norms > eps, eps / np.where(norms > 0.0, norms, 1.0), 1.0)
    return origin + delta * scale


def project_ball(point: np.ndarray, center: np.ndarray, ball: BallSpec) -> np.ndarray:
    """Euclidean projection onto an L2 or Linf ball; interior points fixed."""
    point = np.asarray(point, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if point.shape != center.shape:
        raise ValueError("point and center shapes differ")
    return _project_batch(point[None, :], center[None, :], ball.norm, ball.radius)[0]


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def _pgd_core(x0: np.ndarray, y: np.ndarray, cfg: PgdConfig,
              ce_grad: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
              init_rngs=None):
    """Shared ascent loop; `ce_grad` maps a batch to per-sample (loss, grad)."""
    n, d = x0.shape
    best_x = x0.copy()
    best_loss, _ = ce_grad(x0)
    best_loss = best_loss.copy()
    best_iter = np.zeros(n, dtype=np.int64)

    cur = x0.copy()
    if cfg.random_init and cfg.epsilon > 0.0:
        if init_rngs is None:
            raise ValueError("random_init requires per-sample generators")
        for i in range(n):
            rng = init_rngs[i]
            if cfg.norm == "linf":
                cur[i] += rng.uniform(-cfg.epsilon, cfg.epsilon, size=d)
            else:
                cur[i] += sample_uniform_l2(d, cfg.epsilon, rng)
        cur = _project_batch(cur, x0, cfg.norm, cfg.epsilon)
        if cfg.clip_domain:
            cur = np.clip(cur, 0.0, 1.0)

    def consider(candidate, losses, t):
        better = losses > best_loss
        if np.any(better):
            best_x[better] = candidate[better]
            best_loss[better] = losses[better]
            best_iter[better] = t

    for t in range(cfg.steps):
        losses, grads = ce_grad(cur)
        consider(cur, losses, t)
        cur = cur + cfg.step_size * _steepest_batch(grads, cfg.norm)
        cur = _project_batch(cur, x0, cfg.norm, cfg.epsilon)
        if cfg.clip_domain:
            cur = np.clip(cur, 0.0, 1.0)
    final_losses, _ = ce_grad(cur)
    consider(cur, final_losses, cfg.steps)
    return best_x, best_loss, best_iter


def _package(x0: np.ndarray, y: np.ndarray, best_x, best_loss, best_iter,
             success: np.ndarray) -> list[AdversarialExample]:
    out = []
    for i in range(x0.shape[0]):
        tau = best_x[i] - x0[i]
        out.append(AdversarialExample(
            x_adv=best_x[i],
            success=bool(success[i]),
            l2_norm=float(np.linalg.norm(tau)),
            linf_norm=float(np.max(np.abs(tau))) if tau.size else 0.0,
            loss_value=float(best_loss[i]),
            iterations_used=int(best_iter[i]),
        ))
    return out


def pgd_attack_batch(model: nn.Mlp, x: np.ndarray, y: np.ndarray,
                     cfg: PgdConfig, seed: int = 0) -> list[AdversarialExample]:
    """PGD on every row of x; sample i's random start uses substream(seed, i)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    init_rngs = None
    if cfg.random_init:
        init_rngs = [substream(seed, i) for i in range(x.shape[0])]
    ce_grad = lambda xs: nn.ce_and_grad_input_batch(model, xs, y)
    best_x, best_loss, best_iter = _pgd_core(x, y, cfg, ce_grad, init_rngs)
    success = predict_batch(model, best_x) != y
    return _package(x, y, best_x, best_loss, best_iter, success)


def pgd_attack(model: nn.Mlp, x: np.ndarray, y: int, cfg: PgdConfig,
               seed: int = 0) -> AdversarialExample:
    """Single-sample PGD; equivalent to a batch of one."""
    return pgd_attack_batch(model, np.asarray(x, dtype=np.float64)[None, :],
                            np.asarray([y]), cfg, seed=seed)[0]


# ---------------------------------------------------------------------------
# Gradient averaging over input noise
# ---------------------------------------------------------------------------

def eot_gradient(model: nn.Mlp, noise: NoiseDistribution, x: np.ndarray, y: int,
                 n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Input gradient of the expected loss under noise, by sample mean.

    With `noise.kind == 'none'` this is exactly the plain input gradient.
    """
    if n_draws < 1:
        raise ValueError(f"n_draws must be >= 1, got {n_draws}")
    x = np.asarray(x, dtype=np.float64)
    if noise.is_none:
        return nn.grad_input(model, x, y)
    eta = noise.sample(rng, (n_draws, x.shape[0]))
    grads = nn.grad_input_batch(model, x[None, :] + eta,
                                np.full(n_draws, y, dtype=np.int64))
    return grads.mean(axis=0)


def _eot_ce_grad_factory(model, noise, y, n_draws, rngs):
    """Per-sample (mean loss, mean grad) over fresh noise draws each call."""
    n = len(y)

    def ce_grad(xs: np.ndarray):
        if noise.is_none:
            return nn.ce_and_grad_input_batch(model, xs, y)
        d = xs.shape[1]
        stacked = np.empty((n * n_draws, d))
        for i in range(n):
            eta = noise.sample(rngs[i], (n_draws, d))
            stacked[i * n_draws:(i + 1) * n_draws] = xs[i] + eta
        labels = np.repeat(y, n_draws)
        losses, grads = nn.ce_and_grad_input_batch(model, stacked, labels)
        return (losses.reshape(n, n_draws).mean(axis=1),
                grads.reshape(n, n_draws, d).mean(axis=1))

    return ce_grad


def pgd_eot_attack_batch(model: nn.Mlp, noise: NoiseDistribution, x: np.ndarray,
                         y: np.ndarray, cfg: PgdConfig, n_draws: int,
                         seed: int = 0, eval_draws: int = 64) -> list[AdversarialExample]:
    """PGD with noise-averaged gradients against a randomized classifier.

    Success is judged on the aggregated randomized prediction (`eval_draws`
    mean-logit draws).  With no noise this reduces to `pgd_attack_batch`,
    trajectory and all.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    attack_seed, eval_seed = mix(seed, 0), mix(seed, 1)
    rngs = [substream(attack_seed, i) for i in range(x.shape[0])]
    init_rngs = None
    if cfg.random_init:
        init_rngs = [substream(attack_seed, (1 << 32) + i) for i in range(x.shape[0])]
    ce_grad = _eot_ce_grad_factory(model, noise, y, n_draws, rngs)
    best_x, best_loss, best_iter = _pgd_core(x, y, cfg, ce_grad, init_rngs)
    success = predict_randomized_batch(model, noise, best_x, eval_draws, eval_seed) != y
    return _package(x, y, best_x, best_loss, best_iter, success)


def pgd_eot_attack(model: nn.Mlp, noise: NoiseDistribution, x: np.ndarray, y: int,
                   cfg: PgdConfig, n_draws: int, seed: int = 0,
                   eval_draws: int = 64) -> AdversarialExample:
    return pgd_eot_attack_batch(model, noise, np.asarray(x, dtype=np.float64)[None, :],
                                np.asarray([y]), cfg, n_draws, seed=seed,
                                eval_draws=eval_draws)[0]


# ---------------------------------------------------------------------------
# Norm-minimization attack (tanh-space, per-sample trade-off search)
# ---------------------------------------------------------------------------

def _margins_and_cotangents(model, xs, y):
    """Margin z_y - max_{i != y} z_i per sample, plus d(margin)/d(logits)."""
    logits = nn.forward(model, xs)
    n, k = logits.shape
    rows = np.arange(n)
    masked = logits.copy()
    masked[rows, y] = -np.inf
    runner = np.argmax(masked, axis=1)
    margins = logits[rows, y] - logits[rows, runner]
    cot = np.zeros((n, k))
    cot[rows, y] = 1.0
    cot[rows, runner] -= 1.0
    return margins, cot


def cw_attack_batch(model: nn.Mlp, x: np.ndarray, y: np.ndarray,
                    cfg: CwConfig) -> list[AdversarialExample]:
    """L2 norm-minimization via tanh reparameterization.

    Minimizes ||tau||_2 + lambda * max(margin, -kappa) with Adam in w-space
    where x' = (tanh(w) + 1) / 2 keeps iterates inside (0, 1).  Each sample
    searches its own lambda: multiply by 10 until the attack lands, then
    bisect.  The reported example is the smallest successful perturbation
    seen across every lambda round.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = x.shape
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError("inputs must lie in [0, 1]")
    # tanh parameterization needs a strictly interior starting point
    xq = np.clip(x, 1e-6, 1.0 - 1e-6)
    w0 = np.arctanh(2.0 * xq - 1.0)

    lam = np.full(n, cfg.lambda_init)
    lam_lo = np.zeros(n)
    lam_hi = np.full(n, np.inf)

    best_norm = np.full(n, np.inf)
    best_x = x.copy()
    best_iter = np.zeros(n, dtype=np.int64)
    # fallback for samples that never succeed: the lowest-margin attempt
    fallback_margin = np.full(n, np.inf)
    fallback_x = x.copy()

    threshold = -cfg.kappa if cfg.kappa > 0.0 else 0.0
    total_iter = 0
    for _ in range(cfg.binary_search_steps):
        w = w0.copy()
        m1 = np.zeros_like(w)
        m2 = np.zeros_like(w)
        found_this_round = np.zeros(n, dtype=bool)
        for it in range(cfg.inner_iters):
            x_adv = 0.5 * (np.tanh(w) + 1.0)
            margins, cot = _margins_and_cotangents(model, x_adv, y)
            tau = x_adv - x
            dist = np.linalg.norm(tau, axis=1)
            total_iter += 1

            ok = (margins < threshold) if cfg.kappa == 0.0 else (margins <= threshold)
            improved = ok & (dist < best_norm)
            if np.any(improved):
                best_norm[improved] = dist[improved]
                best_x[improved] = x_adv[improved]
                best_iter[improved] = total_iter
                found_this_round |= improved
            worse = margins < fallback_margin
            if np.any(worse):
                fallback_margin[worse] = margins[worse]
                fallback_x[worse] = x_adv[worse]

            g_norm = tau / np.maximum(dist, 1e-12)[:, None]
            g_margin = nn.grad_input_from_logit_cotangent(model, x_adv, cot)
            active = (margins > -cfg.kappa)[:, None]
            gx = g_norm + lam[:, None] * g_margin * active
            gw = gx * (2.0 * x_adv * (1.0 - x_adv))

            m1 = 0.9 * m1 + 0.1 * gw
            m2 = 0.999 * m2 + 0.001 * gw * gw
            t = it + 1
            mhat = m1 / (1.0 - 0.9 ** t)
            vhat = m2 / (1.0 - 0.999 ** t)
            w = w - cfg.learning_rate * mhat / (np.sqrt(vhat) + 1e-8)

        succeeded = found_this_round
        lam_hi[succeeded] = np.minimum(lam_hi[succeeded], lam[succeeded])
        lam_lo[~succeeded] = np.maximum(lam_lo[~succeeded], lam[~succeeded])
        has_hi = np.isfinite(lam_hi)
        lam = np.where(has_hi, 0.5 * (lam_lo + lam_hi), lam * 10.0)

    out = []
    for i in range(n):
        success = math.isfinite(best_norm[i])
        xa = best_x[i] if success else fallback_x[i]
        tau = xa - x[i]
        out.append(AdversarialExample(
            x_adv=xa,
            success=success,
            l2_norm=float(np.linalg.norm(tau)),
            linf_norm=float(np.max(np.abs(tau))) if tau.size else 0.0,
            loss_value=float(nn.per_sample_cross_entropy(
                nn.forward(model, xa[None, :]), y[i:i + 1])[0]),
            iterations_used=int(best_iter[i]) if success else total_iter,
        ))
    return out


def cw_attack(model: nn.Mlp, x: np.ndarray, y: int, cfg: CwConfig) -> AdversarialExample:
    """Single-sample norm-minimization attack."""
    return cw_attack_batch(model, np.asarray(x, dtype=np.float64)[None, :],
                           np.asarray([y]), cfg)[0]

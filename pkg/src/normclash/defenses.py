"""Training procedures and classifier evaluation.

Six ways to fit the same MLP:

* natural       - plain SGD on clean batches
* at            - adversarial training against one norm ball
* ni            - noise injected on inputs (train and/or inference)
* mat_rand      - per batch, train against a coin-flipped norm
* mat_max       - per sample, train against the worse of the two norms
* rat           - adversarial training against the noise-injected network

All training is SGD with momentum over shuffled batches; every random
choice (shuffling, noise, per-sample attack starts) is drawn from a
substream of the training seed, so a (spec, config, data, seed) tuple maps
to exactly one parameter vector.

The adversarial inner loops call the attacks module; there is no second
PGD implementation hiding in here.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import nn
from .attacks import PgdConfig, pgd_attack_batch, pgd_eot_attack_batch
from .noise import (NoiseDistribution, predict, predict_batch,
                    predict_randomized, predict_randomized_batch)
from .rng import mix, substream

__all__ = [
    "DefenseSpec",
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "TrainingDiverged",
    "DEFENSE_TAGS",
    "defense_from_tag",
    "train",
    "eval_accuracy",
    "predict",
    "predict_batch",
    "predict_randomized",
    "predict_randomized_batch",
]


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class DefenseSpec:
    """Tagged choice of training-time defense and its parameters."""

    kind: str
    norm: Optional[str] = None            # at / rat
    epsilon: Optional[float] = None       # at / rat
    eps_inf: Optional[float] = None       # mat_rand / mat_max
    eps_2: Optional[float] = None         # mat_rand / mat_max
    noise: Optional[NoiseDistribution] = None  # ni / rat
    ni_train_noise: bool = True           # ni: inject during training too

    def __post_init__(self):
        kinds = ("natural", "at", "ni", "mat_rand", "mat_max", "rat")
        if self.kind not in kinds:
            raise ValueError(f"kind must be one of {kinds}, got {self.kind!r}")
        if self.kind in ("at", "rat"):
            if self.norm not in ("l2", "linf") or self.epsilon is None or self.epsilon < 0:
                raise ValueError(f"{self.kind} requires a norm and epsilon >= 0")
        if self.kind in ("mat_rand", "mat_max"):
            if not (self.eps_inf and self.eps_inf > 0 and self.eps_2 and self.eps_2 > 0):
                raise ValueError(f"{self.kind} requires positive eps_inf and eps_2")
        if self.kind in ("ni", "rat"):
            if self.noise is None or self.noise.is_none:
                raise ValueError(f"{self.kind} requires a non-degenerate noise distribution")

    @property
    def randomized(self) -> bool:
        """Whether the deployed classifier injects noise at inference."""
        return self.kind in ("ni", "rat")

    @property
    def tag(self) -> str:
        if self.kind == "natural":
            return "natural"
        if self.kind == "at":
            return f"at-{self.norm}"
        if self.kind == "ni":
            return f"ni-{self.noise.kind}"
        if self.kind == "mat_rand":
            return "mat-rand"
        if self.kind == "mat_max":
            return "mat-max"
        return f"rat-{self.norm}-{self.noise.kind}"


DEFENSE_TAGS = (
    "natural", "at-linf", "at-l2", "mat-max", "mat-rand",
    "ni-gaussian", "ni-uniform",
    "rat-linf-gaussian", "rat-linf-uniform",
    "rat-l2-gaussian", "rat-l2-uniform",
)


def defense_from_tag(tag: str, eps_inf: float, eps_2: float, d: int,
                     ni_train_noise: bool = True) -> DefenseSpec:
    """Build a DefenseSpec from a short tag plus the calibrated budgets.

    Noise scales are tied to the L2 budget: the injected noise has expected
    L2 norm approximately eps_2.
    """
    def noise_for(noise_kind: str) -> NoiseDistribution:
        if noise_kind in ("gaussian", "gauss"):
            return NoiseDistribution.gaussian_for_l2(eps_2, d)
        if noise_kind in ("uniform", "unif"):
            return NoiseDistribution.uniform_for_l2(eps_2, d)
        raise ValueError(f"unknown noise kind {noise_kind!r}")

    parts = tag.split("-")
    if tag == "natural":
        return DefenseSpec(kind="natural")
    if tag in ("at-linf", "at-l2"):
        norm = parts[1]
        return DefenseSpec(kind="at", norm=norm,
                           epsilon=eps_inf if norm == "linf" else eps_2)
    if tag == "mat-rand":
        return DefenseSpec(kind="mat_rand", eps_inf=eps_inf, eps_2=eps_2)
    if tag == "mat-max":
        return DefenseSpec(kind="mat_max", eps_inf=eps_inf, eps_2=eps_2)
    if len(parts) == 2 and parts[0] == "ni":
        return DefenseSpec(kind="ni", noise=noise_for(parts[1]),
                           ni_train_noise=ni_train_noise)
    if len(parts) == 3 and parts[0] == "rat":
        norm = parts[1]
        if norm not in ("linf", "l2"):
            raise ValueError(f"unknown rat norm {norm!r}")
        return DefenseSpec(kind="rat", norm=norm,
                           epsilon=eps_inf if norm == "linf" else eps_2,
                           noise=noise_for(parts[2]))
    raise ValueError(f"unknown defense tag {tag!r}")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 100
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    at_steps: int = 10          # inner PGD iterations for the AT family
    at_random_init: bool = True
    rat_draws: int = 1          # noise draws per inner PGD gradient step

    def __post_init__(self):
        for name in ("epochs", "batch_size", "learning_rate", "at_steps", "rat_draws"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    clean_loss: float
    clean_acc: float
    defense: str
    wall_ms: float


@dataclass
class TrainResult:
    model: nn.Mlp
    log: list[EpochRecord]
    extras: dict = field(default_factory=dict)


def _assert_in_ball(x_adv: np.ndarray, x: np.ndarray, norm: str, eps: float):
    tau = x_adv - x
    if norm == "linf":
        worst = float(np.max(np.abs(tau))) if tau.size else 0.0
    else:
        worst = float(np.max(np.linalg.norm(tau, axis=1))) if tau.size else 0.0
    assert worst <= eps * (1.0 + 1e-9) + 1e-12, \
        f"adversarial training example violates its {norm} ball: {worst} > {eps}"


def _adversarial_batch(model, xb, yb, spec: DefenseSpec, cfg: TrainConfig,
                       attack_seed: int, defense_rng, extras: dict) -> np.ndarray:
    if spec.kind == "natural":
        return xb
    if spec.kind == "ni":
        if not spec.ni_train_noise:
            return xb
        return xb + spec.noise.sample(defense_rng, xb.shape)
    if spec.kind == "at":
        pgd = PgdConfig(norm=spec.norm, epsilon=spec.epsilon, steps=cfg.at_steps,
                        random_init=cfg.at_random_init)
        exs = pgd_attack_batch(model, xb, yb, pgd, seed=attack_seed)
        x_adv = np.stack([e.x_adv for e in exs])
        _assert_in_ball(x_adv, xb, spec.norm, spec.epsilon)
        return x_adv
    if spec.kind == "mat_rand":
        norm = "linf" if defense_rng.random() < 0.5 else "l2"
        extras.setdefault("mat_norm_counts", {"linf": 0, "l2": 0})[norm] += 1
        eps = spec.eps_inf if norm == "linf" else spec.eps_2
        pgd = PgdConfig(norm=norm, epsilon=eps, steps=cfg.at_steps,
                        random_init=cfg.at_random_init)
        exs = pgd_attack_batch(model, xb, yb, pgd, seed=attack_seed)
        x_adv = np.stack([e.x_adv for e in exs])
        _assert_in_ball(x_adv, xb, norm, eps)
        return x_adv
    if spec.kind == "mat_max":
        pgd_inf = PgdConfig(norm="linf", epsilon=spec.eps_inf, steps=cfg.at_steps,
                            random_init=cfg.at_random_init)
        pgd_l2 = PgdConfig(norm="l2", epsilon=spec.eps_2, steps=cfg.at_steps,
                           random_init=cfg.at_random_init)
        ex_inf = pgd_attack_batch(model, xb, yb, pgd_inf, seed=mix(attack_seed, 0))
        ex_l2 = pgd_attack_batch(model, xb, yb, pgd_l2, seed=mix(attack_seed, 1))
        loss_inf = np.array([e.loss_value for e in ex_inf])
        loss_l2 = np.array([e.loss_value for e in ex_l2])
        pick_inf = loss_inf >= loss_l2
        chosen = np.maximum(loss_inf, loss_l2)
        assert np.all(chosen >= loss_inf) and np.all(chosen >= loss_l2)
        x_adv = np.where(pick_inf[:, None],
                         np.stack([e.x_adv for e in ex_inf]),
                         np.stack([e.x_adv for e in ex_l2]))
        return x_adv
    if spec.kind == "rat":
        pgd = PgdConfig(norm=spec.norm, epsilon=spec.epsilon, steps=cfg.at_steps,
                        random_init=cfg.at_random_init)
        exs = pgd_eot_attack_batch(model, spec.noise, xb, yb, pgd,
                                   n_draws=cfg.rat_draws, seed=attack_seed,
                                   eval_draws=1)
        x_adv = np.stack([e.x_adv for e in exs])
        _assert_in_ball(x_adv, xb, spec.norm, spec.epsilon)
        # the outer objective is on the noisy network too
        return x_adv + spec.noise.sample(defense_rng, x_adv.shape)
    raise AssertionError(f"unhandled defense kind {spec.kind}")


def train(model_init: nn.Mlp, x: np.ndarray, y: np.ndarray, spec: DefenseSpec,
          cfg: TrainConfig) -> TrainResult:
    """Fit a copy of `model_init` on (x, y) under the given defense.

    Returns the trained model plus one log record per epoch with the clean
    train loss and accuracy.  Raises TrainingDiverged naming the epoch if
    the loss stops being finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("expected nonempty (n, d) inputs with (n,) labels")
    if x.shape[1] != model_init.in_dim:
        raise ValueError("data dimension does not match the model")

    model = model_init.copy()
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    shuffle_rng = substream(cfg.seed, 0)
    defense_rng = substream(cfg.seed, 1)
    attack_base = mix(cfg.seed, 2)

    n = x.shape[0]
    log: list[EpochRecord] = []
    extras: dict = {}
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            xt = _adversarial_batch(model, xb, yb, spec, cfg,
                                    mix(attack_base, step), defense_rng, extras)
            grads = nn.grad_params(model, xt, yb)
            for i, (dw, db) in enumerate(grads):
                vel_w[i] = cfg.momentum * vel_w[i] + dw
                vel_b[i] = cfg.momentum * vel_b[i] + db
                model.weights[i] -= cfg.learning_rate * vel_w[i]
                model.biases[i] -= cfg.learning_rate * vel_b[i]
            step += 1
        logits = nn.forward(model, x)
        clean_loss = nn.mean_cross_entropy(logits, y)
        if not math.isfinite(clean_loss):
            raise TrainingDiverged(f"training loss became non-finite at epoch {epoch}")
        clean_acc = float(np.mean(np.argmax(logits, axis=1) == y))
        log.append(EpochRecord(epoch=epoch, clean_loss=clean_loss,
                               clean_acc=clean_acc, defense=spec.tag,
                               wall_ms=(time.perf_counter() - t0) * 1e3))
    return TrainResult(model=model, log=log, extras=extras)


def eval_accuracy(model: nn.Mlp, x: np.ndarray, y: np.ndarray,
                  attack: Optional[PgdConfig] = None,
                  noise: Optional[NoiseDistribution] = None,
                  n_draws_attack: int = 16, n_draws_predict: int = 64,
                  seed: int = 0) -> float:
    """Accuracy of a (possibly randomized) classifier, clean or under attack.

    With noise, clean predictions aggregate mean logits over
    `n_draws_predict` draws and attacks run the noise-averaged PGD with
    `n_draws_attack` gradient draws per step.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("data must be nonempty")
    noise = noise or NoiseDistribution.none()
    if attack is None:
        if noise.is_none:
            preds = predict_batch(model, x)
        else:
            preds = predict_randomized_batch(model, noise, x, n_draws_predict,
                                             mix(seed, 0))
        return float(np.mean(preds == y))
    if noise.is_none:
        exs = pgd_attack_batch(model, x, y, attack, seed=mix(seed, 1))
    else:
        exs = pgd_eot_attack_batch(model, noise, x, y, attack,
                                   n_draws=n_draws_attack, seed=mix(seed, 1),
                                   eval_draws=n_draws_predict)
    return float(np.mean([not e.success for e in exs]))

"""White-box FGSM and PGD on the spiking network's input gradients.

Attack gradients flow through the same surrogate-gradient BPTT path used
for training. Both attacks are pure with respect to the model and fully
deterministic by default (PGD starts at x; random start is opt-in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import snn


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 8.0 / 255.0
    alpha: float = 0.01
    k_steps: int = 7
    clamp_lo: float = 0.0
    clamp_hi: float = 1.0
    random_start: bool = False

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError(f"epsilon must be >= 0 (got {self.epsilon})")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be > 0 (got {self.alpha})")
        if self.k_steps < 1:
            raise ValueError(f"k_steps must be >= 1 (got {self.k_steps})")
        if self.clamp_lo >= self.clamp_hi:
            raise ValueError("clamp_lo must be < clamp_hi")


def _input_grad(model: snn.Model, x: np.ndarray, y, t_steps: int) -> np.ndarray:
    _, gs, _ = snn.loss_and_grad(model, x, y, t_steps)
    return gs.x_grad


def fgsm(
    model: snn.Model, x: np.ndarray, y, cfg: AttackConfig, t_steps: int
) -> np.ndarray:
    """x_adv = clamp(x + epsilon * sign(dL/dx)); sign(0) = 0."""
    x = np.asarray(x, dtype=np.float64)
    step = cfg.epsilon * np.sign(_input_grad(model, x, y, t_steps))
    return np.clip(x + step, cfg.clamp_lo, cfg.clamp_hi)


def pgd(
    model: snn.Model,
    x: np.ndarray,
    y,
    cfg: AttackConfig,
    t_steps: int,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """K signed-gradient steps, each range-clamped then projected onto the
    L-inf ball of radius epsilon around x.

    Starts at x unless cfg.random_start, in which case a seeded uniform
    draw inside the ball is used (pass `rng`; defaults to a fixed seed).
    With k_steps=1 and alpha=epsilon the output is bitwise identical to
    fgsm: the single step already saturates the ball, so the projection
    and clamp are no-ops on top of the fgsm arithmetic.
    """
    x = np.asarray(x, dtype=np.float64)
    lo_ball = x - cfg.epsilon
    hi_ball = x + cfg.epsilon
    x_adv = x
    if cfg.random_start:
        if rng is None:
            rng = np.random.default_rng(0)
        x_adv = np.clip(
            x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape),
            cfg.clamp_lo,
            cfg.clamp_hi,
        )
        x_adv = np.clip(x_adv, lo_ball, hi_ball)
    for _ in range(cfg.k_steps):
        grad = _input_grad(model, x_adv, y, t_steps)
        x_adv = np.clip(
            x_adv + cfg.alpha * np.sign(grad), cfg.clamp_lo, cfg.clamp_hi
        )
        x_adv = np.clip(x_adv, lo_ball, hi_ball)
    return x_adv

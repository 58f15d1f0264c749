"""Few-step distribution matching distillation on analytic Gaussians.

Noising is the linear interpolation ``z_t = (1 - t/1000) x0 + (t/1000) eps``.
With Gaussian data the optimal denoiser is closed form, which stands in
for both the frozen teacher and the critic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

T_MAX = 1000.0
STEPS = (1000, 750, 500, 250, 0)


@dataclass(frozen=True)
class Schedule:
    steps: tuple[int, ...] = STEPS

    def __post_init__(self):
        s = self.steps
        if s[0] != T_MAX or s[-1] != 0 or any(a <= b for a, b in zip(s, s[1:])):
            raise ValueError(f"schedule must decrease strictly from 1000 to 0, got {s}")

    @staticmethod
    def alpha(t):
        return 1.0 - np.asarray(t, dtype=np.float64) / T_MAX

    @staticmethod
    def sigma(t):
        return np.asarray(t, dtype=np.float64) / T_MAX


def _check_t(t, allow_zero=True):
    t = np.asarray(t, dtype=np.float64)
    lo_ok = (t >= 0) if allow_zero else (t > 0)
    if not np.all(lo_ok & (t <= T_MAX)):
        raise ValueError(f"timestep out of range: {t}")
    return t


def noisify(x0, t, eps):
    t = _check_t(t)
    return Schedule.alpha(t) * np.asarray(x0) + Schedule.sigma(t) * np.asarray(eps)


@dataclass(frozen=True)
class GaussianModel:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("GaussianModel std must be positive")


def gaussian_posterior_mean(z_t, t, model: GaussianModel):
    """E[x0 | z_t] for x0 ~ N(mean, std^2) under the linear noising.

    At ``t == 0`` the observation is the clean sample and is returned as is.
    """
    t = _check_t(t)
    z_t = np.asarray(z_t, dtype=np.float64)
    a, s = Schedule.alpha(t), Schedule.sigma(t)
    v = model.std**2
    with np.errstate(divide="ignore", invalid="ignore"):
        post = (a * v * z_t + s**2 * model.mean) / (a**2 * v + s**2)
    return np.where(t == 0, z_t, post)


@dataclass(frozen=True, eq=False)
class DistillState:
    student_pred: np.ndarray
    teacher_pred: np.ndarray
    critic_pred: np.ndarray
    eta: float = 1.0
    sigma_norm: float = 1.0

    def __post_init__(self):
        shapes = {np.shape(self.student_pred), np.shape(self.teacher_pred), np.shape(self.critic_pred)}
        if len(shapes) != 1:
            raise ValueError(f"predictions must share one shape, got {shapes}")
        if not self.sigma_norm > 0:
            raise ValueError("sigma_norm must be positive")


def regression_target(state: DistillState) -> np.ndarray:
    """The stop-gradient target the student output is pulled towards."""
    x = np.asarray(state.student_pred, dtype=np.float64)
    return x + state.eta * (np.asarray(state.teacher_pred) - np.asarray(state.critic_pred)) / state.sigma_norm


def generator_loss(state: DistillState, target: Optional[np.ndarray] = None) -> float:
    """0.5 * ||x_student - sg(target)||^2; pass a frozen ``target`` to differentiate."""
    if target is None:
        target = regression_target(state)
    r = np.asarray(state.student_pred, dtype=np.float64) - target
    return 0.5 * float(np.sum(r * r))


def dmd_generator_gradient(state: DistillState) -> np.ndarray:
    """d(generator_loss)/d(student_pred) with the target held fixed."""
    if not state.sigma_norm > 0:
        raise ValueError("sigma_norm must be positive")
    return np.asarray(state.student_pred, dtype=np.float64) - regression_target(state)


def critic_loss(critic_pred, x_clean) -> float:
    """Mean over elements of the squared residual: (3, 4) -> 25 / 2."""
    a, b = np.asarray(critic_pred, dtype=np.float64), np.asarray(x_clean, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2) / a.size)


def sample_4step(
    generator_fn: Callable[[np.ndarray, float], np.ndarray],
    schedule: Schedule,
    z_init: np.ndarray,
    rng: Optional[np.random.Generator] = None,
):
    """Few-step sampling along ``schedule``.

    Each intermediate estimate is re-noised to the next timestep with fresh
    noise from ``rng``; without ``rng`` the initial noise is reused
    (deterministic mode). Returns the last estimate and the list of
    ``(t, z_t, x0_hat)`` visited.
    """
    z = np.asarray(z_init, dtype=np.float64)
    eps0 = z
    trajectory = []
    x_hat = z
    for t, t_next in zip(schedule.steps[:-1], schedule.steps[1:]):
        x_hat = np.asarray(generator_fn(z, t), dtype=np.float64)
        trajectory.append((t, z, x_hat))
        eps = eps0 if rng is None else rng.standard_normal(z.shape)
        z = noisify(x_hat, t_next, eps)
    return x_hat, trajectory


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainResult:
    mean: float
    std: float
    converged: bool
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "m", "s", "gen_loss", "critic_loss"])
            for it, m, s, g, c in self.history:
                w.writerow([it, repr(m), repr(s), repr(g), repr(c)])

    def summary(self) -> dict:
        return {"m_final": self.mean, "s_final": self.std, "converged": self.converged}

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=1) + "\n")


def toy_dmd_train(
    teacher: GaussianModel,
    student_init: tuple[float, float] = (0.0, 1.0),
    iters: int = 2000,
    eta: float = 1.0,
    lr: float = 0.05,
    batch: int = 64,
    seed: int = 0,
    sigma_norm: Optional[float] = None,
    t_sampling: str = "discrete",
    critic_refresh: int = 1,
    tol: float = 0.05,
) -> TrainResult:
    """Distil an affine generator ``x = m + s * xi`` towards ``teacher``.

    Generator and critic alternate: the critic is the exact posterior mean
    of the student's current law, refreshed every ``critic_refresh``
    generator steps. ``sigma_norm=None`` normalises by the batch mean of
    ``|teacher - critic|``.
    """
    m, s = float(student_init[0]), float(student_init[1])
    if not s > 0:
        raise ValueError("initial student std must be positive")
    rng = np.random.default_rng(seed)
    critic = GaussianModel(m, s)
    steps = np.array(STEPS[:-1], dtype=np.float64)
    history = []
    for it in range(iters):
        if it % critic_refresh == 0:
            critic = GaussianModel(m, s)
        xi = rng.standard_normal(batch)
        eps = rng.standard_normal(batch)
        if t_sampling == "discrete":
            t = rng.choice(steps, size=batch)
        elif t_sampling == "uniform":
            t = T_MAX - rng.uniform(0.0, T_MAX, size=batch)  # (0, 1000]
        else:
            raise ValueError(f"unknown t_sampling {t_sampling!r}")
        x = m + s * xi
        z = noisify(x, t, eps)
        teacher_pred = gaussian_posterior_mean(z, t, teacher)
        critic_pred = gaussian_posterior_mean(z, t, critic)
        diff = teacher_pred - critic_pred
        norm = float(np.mean(np.abs(diff))) + 1e-8 if sigma_norm is None else sigma_norm
        state = DistillState(x, teacher_pred, critic_pred, eta, norm)
        g = dmd_generator_gradient(state)
        gen_loss = generator_loss(state) / batch
        c_loss = critic_loss(critic_pred, x)
        m -= lr * float(np.mean(g))
        s -= lr * float(np.mean(g * xi))
        if abs(m) > 1e3 or abs(s) > 1e3 or not np.isfinite(m + s):
            raise DivergenceError(f"toy DMD diverged at iter {it}: m={m}, s={s}")
        history.append((it, m, s, gen_loss, c_loss))
    converged = abs(m - teacher.mean) < tol and abs(abs(s) - teacher.std) < tol
    return TrainResult(m, s, converged, history)

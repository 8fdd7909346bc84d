"""Noise schedules, forward corruption, DDPM/DDIM reverse steps, analog-bit labels.

Steps are 1-based: ``beta[t]`` for ``t`` in ``1..T`` and ``gamma[t]`` for
``t`` in ``0..T`` with ``gamma[0] = 1``.  Label tensors are frame-major,
``(..., N, C)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from gtd.errors import ConfigError, ShapeError

SAMPLERS = ("ddpm", "ddim")
SCHEDULES = ("linear", "cosine")
SCALINGS = ("zero_one", "signed")

# generator(y_t, self_cond, cond, t) -> reconstruction of Y_0, same shape as y_t
Generator = Callable[[np.ndarray, np.ndarray, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class DiffusionConfig:
    T: int = 1000
    inference_steps: int = 50
    sampler: str = "ddim"
    self_cond_prob: float = 0.5
    schedule_kind: str = "linear"
    label_scaling: str = "zero_one"

    def __post_init__(self):
        if not 1 <= self.inference_steps <= self.T:
            raise ConfigError(f"need 1 <= inference_steps <= T, got {self.inference_steps}, {self.T}")
        if not 0.0 <= self.self_cond_prob <= 1.0:
            raise ConfigError("self_cond_prob must lie in [0, 1]")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}")
        if self.schedule_kind not in SCHEDULES:
            raise ConfigError(f"schedule_kind must be one of {SCHEDULES}")
        if self.label_scaling not in SCALINGS:
            raise ConfigError(f"label_scaling must be one of {SCALINGS}")


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray  # (T+1,), beta[0] unused (0)
    gamma: np.ndarray  # (T+1,), gamma[0] = 1
    beta_tilde: np.ndarray  # (T+1,), beta_tilde[1] = 0

    @property
    def T(self) -> int:
        return len(self.beta) - 1

    @classmethod
    def from_betas(cls, betas: Sequence[float]) -> "NoiseSchedule":
        b = np.asarray(betas, dtype=np.float64)
        if b.ndim != 1 or len(b) < 1:
            raise ValueError("need at least one beta")
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie strictly between 0 and 1")
        beta = np.concatenate([[0.0], b])
        gamma = np.cumprod(1.0 - beta)
        bt = np.zeros_like(beta)
        bt[1:] = (1.0 - gamma[:-1]) / (1.0 - gamma[1:]) * beta[1:]
        return cls(beta, gamma, bt)

    def posterior_variance(self, t: int, t_prev: int) -> float:
        """Variance of q(Y_prev | Y_t, Y_0); equals ``beta_tilde[t]`` when ``t_prev = t - 1``."""
        if t_prev == t - 1:
            return float(self.beta_tilde[t])
        g_t, g_p = self.gamma[t], self.gamma[t_prev]
        return float((1.0 - g_p) / (1.0 - g_t) * (1.0 - g_t / g_p))


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind == "linear":
        betas = np.linspace(1e-4, 0.02, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        g = f / f[0]
        betas = np.clip(1.0 - g[1:] / g[:-1], 1e-12, 0.999)
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule.from_betas(betas)


def _check_step(t: int, schedule: NoiseSchedule):
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside [1, {schedule.T}]")


def q_sample(y0, t: int, epsilon, schedule: NoiseSchedule) -> np.ndarray:
    _check_step(t, schedule)
    y0, eps = np.asarray(y0, dtype=np.float64), np.asarray(epsilon, dtype=np.float64)
    if y0.shape != eps.shape:
        raise ShapeError(f"Y_0 {y0.shape} vs epsilon {eps.shape}")
    g = schedule.gamma[t]
    return np.sqrt(g) * y0 + np.sqrt(1.0 - g) * eps


def estimate_epsilon(y_t, y0_hat, t: int, schedule: NoiseSchedule) -> np.ndarray:
    _check_step(t, schedule)
    g = schedule.gamma[t]
    if g >= 1.0:
        raise ValueError(f"gamma[{t}] = 1; noise cannot be recovered")
    return (np.asarray(y_t) - np.sqrt(g) * np.asarray(y0_hat)) / np.sqrt(1.0 - g)


@dataclass
class DenoiseTrace:
    steps: list[int] = field(default_factory=list)
    reconstructions: list[np.ndarray] = field(default_factory=list)
    clamped: int = 0


def denoise_step(
    y_t,
    y0_hat,
    t: int,
    schedule: NoiseSchedule,
    sampler: str = "ddim",
    rng: np.random.Generator | Sequence[np.random.Generator] | None = None,
    t_prev: int | None = None,
    trace: DenoiseTrace | None = None,
) -> np.ndarray:
    """One reverse transition from step ``t`` to ``t_prev`` (default ``t - 1``).

    For a batched ``y_t`` a sequence of generators supplies one noise draw per
    leading index, keeping each sample's stream separate.
    """
    _check_step(t, schedule)
    t_prev = t - 1 if t_prev is None else t_prev
    if not 0 <= t_prev < t:
        raise ValueError(f"t_prev must lie in [0, {t}), got {t_prev}")
    if sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {sampler!r}")
    y_t, y0_hat = np.asarray(y_t, dtype=np.float64), np.asarray(y0_hat, dtype=np.float64)
    eps = estimate_epsilon(y_t, y0_hat, t, schedule)
    g_prev = schedule.gamma[t_prev]
    var = schedule.posterior_variance(t, t_prev) if sampler == "ddpm" else 0.0
    radicand = 1.0 - g_prev - var
    if radicand < 0.0:
        radicand = 0.0
        if trace is not None:
            trace.clamped += 1
    mean = np.sqrt(g_prev) * y0_hat + np.sqrt(radicand) * eps
    if sampler == "ddim" or var == 0.0:
        return mean
    if rng is None:
        raise ValueError("DDPM sampling needs an rng")
    if isinstance(rng, np.random.Generator):
        z = rng.standard_normal(y_t.shape)
    else:
        z = np.stack([r.standard_normal(y_t.shape[1:]) for r in rng])
    return mean + np.sqrt(var) * z


def step_subsequence(T: int, D: int) -> list[int]:
    """``D`` evenly spaced steps from ``T`` down to 1 (both ends included when D > 1)."""
    if not 1 <= D <= T:
        raise ValueError(f"need 1 <= D <= T, got D={D}, T={T}")
    if D == 1:
        return [T]
    steps = np.floor(np.linspace(T, 1, D) + 0.5).astype(int)
    return [int(s) for s in steps]


def denoise_loop(
    generator: Generator,
    cond,
    num_classes: int,
    config: DiffusionConfig,
    schedule: NoiseSchedule,
    rng: np.random.Generator | Sequence[np.random.Generator],
    keep_trace: bool = False,
) -> tuple[np.ndarray, DenoiseTrace]:
    """Generate from pure noise; returns the last reconstruction and a trace.

    With a single generator the result is ``(N, C)``; with a sequence of
    generators the samples are batched as ``(B, N, C)`` and each draws its
    noise from its own stream.
    """
    cond = np.asarray(cond, dtype=np.float64)
    n = cond.shape[-2]
    batched = not isinstance(rng, np.random.Generator)
    if batched:
        y = np.stack([r.standard_normal((n, num_classes)) for r in rng])
    else:
        y = rng.standard_normal((n, num_classes))
    steps = step_subsequence(schedule.T, config.inference_steps)
    trace = DenoiseTrace(steps=list(steps))
    self_cond = np.zeros_like(y)
    y0_hat = None
    for i, t in enumerate(steps):
        y0_hat = np.asarray(generator(y, self_cond, cond, t), dtype=np.float64)
        if y0_hat.shape != y.shape:
            raise ShapeError(f"generator returned {y0_hat.shape}, expected {y.shape}")
        if keep_trace:
            trace.reconstructions.append(y0_hat)
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        if t_prev > 0:
            y = denoise_step(y, y0_hat, t, schedule, config.sampler, rng, t_prev, trace)
        self_cond = y0_hat
    return y0_hat, trace


def sample_many(
    generator: Generator,
    cond,
    M: int,
    num_classes: int,
    config: DiffusionConfig,
    schedule: NoiseSchedule,
    seed: int | Sequence[int],
    workers: int = 1,
    chunk_size: int = 5,
) -> list[np.ndarray]:
    """``M`` decoded label sequences; sample ``m`` uses the stream seeded by ``(seed..., m)``.

    Samples are processed in fixed chunks of ``chunk_size``, so results do not
    depend on ``workers``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    key = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    chunks = [list(range(i, min(i + chunk_size, M))) for i in range(0, M, chunk_size)]

    def run(ms: list[int]) -> list[np.ndarray]:
        rngs = [np.random.default_rng(key + [m]) for m in ms]
        y0_hat, _ = denoise_loop(generator, cond, num_classes, config, schedule, rngs)
        return [decode_labels(y) for y in y0_hat]

    if workers <= 1:
        results = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, chunks))
    return [labels for chunk in results for labels in chunk]


def encode_labels(labels, num_classes: int, scaling: str = "zero_one") -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    onehot = np.eye(num_classes)[labels]
    if scaling == "zero_one":
        return onehot
    if scaling == "signed":
        return 2.0 * onehot - 1.0
    raise ConfigError(f"unknown label scaling {scaling!r}")


def decode_labels(y) -> np.ndarray:
    """Per-frame argmax; ``np.argmax`` already resolves ties to the lowest index."""
    return np.argmax(np.asarray(y), axis=-1)

"""Training loops, losses, Adam and checkpoints.

A batch is a list of :class:`Example`; examples of different lengths are
zero-padded to the longest one and a frame mask keeps padded frames out of
both the network and the loss.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from gtd import container
from gtd import numerics as nx
from gtd.data import Dataset, SequenceRecord, build_condition, split_protocol
from gtd.diffusion import DiffusionConfig, NoiseSchedule, encode_labels, make_schedule
from gtd.errors import ConfigError, FormatError, NonFiniteError
from gtd.gtan import GateTrace, GtanConfig, gtan_forward, init_params, param_shapes

MODES = ("stochastic", "deterministic")
LOSSES = ("mse", "ce", "bce")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "stochastic"
    loss: str = "mse"
    obs_loss_weight: float = 1.0
    lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 1
    seed: int = 0
    # observation / horizon fractions drawn per training example
    alphas: tuple[float, ...] = (0.2, 0.3)
    betas: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.mode == "deterministic" and self.loss != "ce":
            raise ConfigError("deterministic mode trains with the ce loss")
        if self.obs_loss_weight < 0:
            raise ConfigError("obs_loss_weight must be >= 0")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr must be > 0, batch_size >= 1, epochs >= 0")
        if not self.alphas or not self.betas:
            raise ConfigError("alphas and betas must be non-empty")


@dataclass
class Example:
    """One training / inference window: clean labels, padded condition, split point."""

    labels: np.ndarray
    cond: np.ndarray
    n_obs: int
    id: str = ""

    def __len__(self) -> int:
        return len(self.labels)


def make_example(record: SequenceRecord, alpha: float, beta: float) -> Example:
    split = split_protocol(len(record), alpha, beta)
    return Example(record.labels[: split.n_total], build_condition(record, split), split.n_obs, record.id)


# -- loss plumbing -----------------------------------------------------------


def frame_weights(n_obs: int, n: int, obs_weight: float) -> np.ndarray:
    """Per-frame reduction weights for one sequence.

    Weight 1 gives a plain mean over frames; any other weight averages the
    observed and future frames separately and scales the observed mean.
    """
    w = np.empty(n)
    if obs_weight == 1.0:
        w[:] = 1.0 / n
    else:
        w[:n_obs] = obs_weight / n_obs
        w[n_obs:] = 1.0 / (n - n_obs) if n > n_obs else 0.0
    return w


@dataclass
class Batch:
    ids: list[str]
    y0: np.ndarray  # (B, N, C) analog labels
    onehot: np.ndarray  # (B, N, C) {0, 1}
    cond: np.ndarray  # (B, N, D)
    mask: np.ndarray  # (B, N)
    weights: np.ndarray  # (B, N), includes the 1/B batch mean

    @property
    def size(self) -> int:
        return len(self.ids)


def collate(examples: Sequence[Example], num_classes: int, scaling: str, obs_weight: float) -> Batch:
    b = len(examples)
    n = max(len(e) for e in examples)
    d = examples[0].cond.shape[1]
    y0 = np.zeros((b, n, num_classes))
    onehot = np.zeros((b, n, num_classes))
    cond = np.zeros((b, n, d))
    mask = np.zeros((b, n))
    weights = np.zeros((b, n))
    for i, e in enumerate(examples):
        k = len(e)
        y0[i, :k] = encode_labels(e.labels, num_classes, scaling)
        onehot[i, :k] = encode_labels(e.labels, num_classes, "zero_one")
        cond[i, :k] = e.cond
        mask[i, :k] = 1.0
        weights[i, :k] = frame_weights(e.n_obs, k, obs_weight) / b
    return Batch([e.id for e in examples], y0, onehot, cond, mask, weights)


def reconstruction(scores: np.ndarray, loss: str, scaling: str) -> np.ndarray:
    """Map raw stage scores to an estimate of the clean analog labels."""
    if loss == "mse":
        return scores
    p = nx.softmax(scores) if loss == "ce" else 1.0 / (1.0 + np.exp(-scores))
    return 2.0 * p - 1.0 if scaling == "signed" else p


def _stage_losses(outputs, batch: Batch, loss: str) -> tuple[nx.Tensor, list[float]]:
    target = batch.y0 if loss == "mse" else batch.onehot
    terms = [nx.frame_loss(o, target, batch.weights, loss) for o in outputs]
    return nx.sum_tensors(terms), [t.item() for t in terms]


def _leaf_params(params: Mapping[str, np.ndarray]) -> dict[str, nx.Tensor]:
    return {k: nx.Tensor(v, requires_grad=True) for k, v in params.items()}


def _grads(leaves: Mapping[str, nx.Tensor]) -> dict[str, np.ndarray]:
    return {k: t.grad if t.grad is not None else np.zeros(t.dims) for k, t in leaves.items()}


@dataclass
class StepResult:
    loss: float
    stage_losses: list[float]
    grads: dict[str, np.ndarray]


# -- stochastic (diffusion) training ------------------------------------------


@dataclass
class Draws:
    t: np.ndarray  # (B,) int
    eps: np.ndarray  # (B, N, C)
    keep_self_cond: np.ndarray  # (B,) bool


def draw_noise(batch: Batch, schedule: NoiseSchedule, self_cond_prob: float, rng: np.random.Generator) -> Draws:
    b, n, c = batch.y0.shape
    t = np.empty(b, dtype=np.int64)
    eps = np.empty((b, n, c))
    keep = np.empty(b, dtype=bool)
    for i in range(b):
        t[i] = rng.integers(1, schedule.T + 1)
        eps[i] = rng.standard_normal((n, c))
        keep[i] = rng.random() >= self_cond_prob
    return Draws(t, eps, keep)


def noisy_labels(batch: Batch, draws: Draws, schedule: NoiseSchedule) -> np.ndarray:
    g = schedule.gamma[draws.t][:, None, None]
    y_t = np.sqrt(g) * batch.y0 + np.sqrt(1.0 - g) * draws.eps
    return y_t * batch.mask[..., None]


def self_condition(
    params, batch: Batch, y_t: np.ndarray, draws: Draws, gcfg: GtanConfig, tcfg: TrainConfig,
    scaling: str, rng: np.random.Generator | None, train: bool = True,
) -> np.ndarray:
    """Gradient-free estimate from a pass with zero self-conditioning; zero where dropped."""
    sc = np.zeros_like(y_t)
    if not draws.keep_self_cond.any():
        return sc
    outs, _ = gtan_forward(
        y_t, sc, batch.cond, draws.t, dict(params), gcfg, train=train, rng=rng, mask=batch.mask
    )
    est = reconstruction(outs[-1].data, tcfg.loss, scaling)
    return est * draws.keep_self_cond[:, None, None] * batch.mask[..., None]


def stochastic_loss(
    params, batch: Batch, y_t: np.ndarray, self_cond: np.ndarray, t: np.ndarray,
    gcfg: GtanConfig, tcfg: TrainConfig, train: bool = False, rng: np.random.Generator | None = None,
) -> tuple[nx.Tensor, list[float]]:
    outs, _ = gtan_forward(y_t, self_cond, batch.cond, t, params, gcfg, train=train, rng=rng, mask=batch.mask)
    return _stage_losses(outs, batch, tcfg.loss)


def stochastic_training_step(
    batch: Batch, params, schedule: NoiseSchedule, gcfg: GtanConfig, dcfg: DiffusionConfig,
    tcfg: TrainConfig, rng: np.random.Generator,
) -> StepResult:
    draws = draw_noise(batch, schedule, dcfg.self_cond_prob, rng)
    y_t = noisy_labels(batch, draws, schedule)
    sc = self_condition(params, batch, y_t, draws, gcfg, tcfg, dcfg.label_scaling, rng)
    leaves = _leaf_params(params)
    loss, stages = stochastic_loss(leaves, batch, y_t, sc, draws.t, gcfg, tcfg, train=True, rng=rng)
    loss.backward()
    return StepResult(loss.item(), stages, _grads(leaves))


# -- deterministic training ------------------------------------------------------


def deterministic_loss(
    params, batch: Batch, gcfg: GtanConfig, train: bool = False, rng: np.random.Generator | None = None
) -> tuple[nx.Tensor, list[float]]:
    zeros = np.zeros_like(batch.y0)
    outs, _ = gtan_forward(
        zeros, zeros, batch.cond, 0, params, gcfg, train=train, rng=rng, mask=batch.mask, use_step=False
    )
    return _stage_losses(outs, batch, "ce")


def deterministic_training_step(
    batch: Batch, params, gcfg: GtanConfig, rng: np.random.Generator
) -> StepResult:
    leaves = _leaf_params(params)
    loss, stages = deterministic_loss(leaves, batch, gcfg, train=True, rng=rng)
    loss.backward()
    return StepResult(loss.item(), stages, _grads(leaves))


# -- Adam ------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    step = state.step + 1
    c1, c2 = 1.0 - beta1**step, 1.0 - beta2**step
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, step)


# -- generator wrapper for sampling ------------------------------------------------


class GtanDenoiser:
    """Adapts trained parameters to the ``generator(y_t, self_cond, cond, t)`` protocol."""

    def __init__(self, params, gcfg: GtanConfig, loss: str = "mse", scaling: str = "zero_one",
                 capture_gates: bool = False):
        self.params = {k: nx.Tensor(v) for k, v in params.items()}
        self.gcfg = gcfg
        self.loss = loss
        self.scaling = scaling
        self.capture_gates = capture_gates
        self.last_gates: GateTrace | None = None

    def __call__(self, y_t, self_cond, cond, t) -> np.ndarray:
        y_t = np.asarray(y_t, dtype=np.float64)
        cond = np.asarray(cond, dtype=np.float64)
        if y_t.ndim == 3 and cond.ndim == 2:
            cond = np.broadcast_to(cond, y_t.shape[:2] + cond.shape[-1:])
        outs, trace = gtan_forward(y_t, self_cond, cond, t, self.params, self.gcfg)
        if self.capture_gates:
            self.last_gates = trace
        return reconstruction(outs[-1].data, self.loss, self.scaling)

    def deterministic(self, cond) -> np.ndarray:
        """Class scores of the last stage without diffusion input."""
        cond = np.asarray(cond, dtype=np.float64)
        zeros = np.zeros(cond.shape[:-1] + (self.gcfg.num_classes,))
        outs, trace = gtan_forward(zeros, zeros, cond, 0, self.params, self.gcfg, use_step=False)
        if self.capture_gates:
            self.last_gates = trace
        return outs[-1].data


# -- training driver ----------------------------------------------------------------


CHECKPOINT_KIND = "gtd-checkpoint"


@dataclass
class Trainer:
    gcfg: GtanConfig
    dcfg: DiffusionConfig
    tcfg: TrainConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam: AdamState | None = None
    rng: np.random.Generator | None = None
    step: int = 0

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.gcfg, np.random.default_rng([self.tcfg.seed, 0]))
        if self.adam is None:
            self.adam = AdamState.zeros_like(self.params)
        if self.rng is None:
            self.rng = np.random.default_rng([self.tcfg.seed, 1])
        self.schedule = make_schedule(self.dcfg.schedule_kind, self.dcfg.T)

    def steps_per_epoch(self, n_records: int) -> int:
        return max(1, -(-n_records // self.tcfg.batch_size))

    def _batch_indices(self, n_records: int) -> np.ndarray:
        spe = self.steps_per_epoch(n_records)
        epoch, pos = divmod(self.step, spe)
        perm = np.random.default_rng([self.tcfg.seed, 2, epoch]).permutation(n_records)
        return perm[pos * self.tcfg.batch_size : (pos + 1) * self.tcfg.batch_size]

    def next_batch(self, records: Sequence[SequenceRecord]) -> Batch:
        examples = []
        for i in self._batch_indices(len(records)):
            alpha = self.tcfg.alphas[self.rng.integers(len(self.tcfg.alphas))]
            beta = self.tcfg.betas[self.rng.integers(len(self.tcfg.betas))]
            examples.append(make_example(records[i], alpha, beta))
        return collate(examples, self.gcfg.num_classes, self.dcfg.label_scaling, self.tcfg.obs_loss_weight)

    def _step_on(self, batch: Batch) -> StepResult:
        if self.tcfg.mode == "stochastic":
            return stochastic_training_step(batch, self.params, self.schedule, self.gcfg, self.dcfg, self.tcfg, self.rng)
        return deterministic_training_step(batch, self.params, self.gcfg, self.rng)

    def train_step(self, records: Sequence[SequenceRecord]) -> StepResult:
        batch = self.next_batch(records)
        try:
            result = self._step_on(batch)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {self.step}: {exc}; batch ids {batch.ids}") from exc
        self.params, self.adam = adam_update(self.params, result.grads, self.adam, self.tcfg.lr)
        self.step += 1
        return result

    def fit(
        self,
        dataset: Dataset,
        steps: int | None = None,
        log_path: str | Path | None = None,
        checkpoint_path: str | Path | None = None,
        checkpoint_every: int | None = None,
    ) -> list[float]:
        """Train until ``steps`` total steps (default: ``epochs`` full passes)."""
        if dataset.num_classes != self.gcfg.num_classes:
            raise ConfigError(
                f"dataset has {dataset.num_classes} classes, model expects {self.gcfg.num_classes}"
            )
        records = dataset.records
        total = steps if steps is not None else self.tcfg.epochs * self.steps_per_epoch(len(records))
        log = open(log_path, "a") if log_path else None
        losses = []
        try:
            while self.step < total:
                t0 = time.perf_counter()
                res = self.train_step(records)
                losses.append(res.loss)
                if log:
                    log.write(
                        json.dumps(
                            {
                                "step": self.step,
                                "loss": res.loss,
                                "stage_losses": res.stage_losses,
                                "wall_time": time.perf_counter() - t0,
                            }
                        )
                        + "\n"
                    )
                if checkpoint_path and checkpoint_every and self.step % checkpoint_every == 0:
                    self.save(checkpoint_path)
        finally:
            if log:
                log.close()
        if checkpoint_path:
            self.save(checkpoint_path)
        return losses

    def denoiser(self, capture_gates: bool = False) -> GtanDenoiser:
        loss = self.tcfg.loss if self.tcfg.mode == "stochastic" else "ce"
        return GtanDenoiser(self.params, self.gcfg, loss, self.dcfg.label_scaling, capture_gates)

    # -- persistence --

    def to_bytes(self) -> bytes:
        arrays = {}
        for k in sorted(self.params):
            arrays[f"param/{k}"] = self.params[k]
        for k in sorted(self.params):
            arrays[f"adam.m/{k}"] = self.adam.m[k]
        for k in sorted(self.params):
            arrays[f"adam.v/{k}"] = self.adam.v[k]
        blob = {
            "kind": CHECKPOINT_KIND,
            "gtan": self.gcfg.to_dict(),
            "diffusion": asdict(self.dcfg),
            "train": asdict(self.tcfg),
            "step": self.step,
            "adam_step": self.adam.step,
            "rng": self.rng.bit_generator.state,
        }
        return container.dumps(arrays, json.dumps(blob, sort_keys=True))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Trainer":
        arrays, text = container.loads(data)
        try:
            blob = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"checkpoint metadata is not JSON: {exc}") from exc
        if blob.get("kind") != CHECKPOINT_KIND:
            raise FormatError("container is not a checkpoint")
        train = dict(blob["train"])
        train["alphas"], train["betas"] = tuple(train["alphas"]), tuple(train["betas"])
        gcfg = GtanConfig(**blob["gtan"])
        dcfg = DiffusionConfig(**blob["diffusion"])
        tcfg = TrainConfig(**train)

        def section(prefix):
            return {k[len(prefix) :]: v for k, v in arrays.items() if k.startswith(prefix)}

        params = section("param/")
        adam = AdamState(section("adam.m/"), section("adam.v/"), int(blob["adam_step"]))
        expected = set(param_shapes(gcfg))
        if set(params) != expected or set(adam.m) != expected or set(adam.v) != expected:
            raise FormatError("checkpoint parameter names do not match its model config")
        bitgen = getattr(np.random, blob["rng"]["bit_generator"])()
        bitgen.state = blob["rng"]
        return cls(gcfg, dcfg, tcfg, params, adam, np.random.Generator(bitgen), int(blob["step"]))

    @classmethod
    def load(cls, path: str | Path) -> "Trainer":
        return cls.from_bytes(Path(path).read_bytes())


def save_checkpoint(trainer: Trainer, path: str | Path) -> None:
    trainer.save(path)


def load_checkpoint(path: str | Path) -> Trainer:
    return Trainer.load(path)

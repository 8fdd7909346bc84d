"""Finite-difference gradient suite at a tiny model size."""

from __future__ import annotations

import numpy as np

from gtd import numerics as nx
from gtd.data import SequenceRecord
from gtd.diffusion import DiffusionConfig, make_schedule
from gtd.gtan import GtanConfig, init_params
from gtd.trainer import (
    TrainConfig,
    collate,
    deterministic_loss,
    draw_noise,
    make_example,
    noisy_labels,
    self_condition,
    stochastic_loss,
)

TINY = dict(num_classes=4, feature_dim=6, stages=2, layers_per_stage=3, channels=8)
TINY_FRAMES = 16


def tiny_batch(gcfg: GtanConfig, rng: np.random.Generator, batch: int = 2, loss: str = "mse",
               scaling: str = "zero_one", obs_weight: float = 1.0):
    """Two sequences of different length so padding and masking are exercised."""
    examples = []
    for i, n in enumerate([TINY_FRAMES, TINY_FRAMES - 4][:batch]):
        labels = np.sort(rng.integers(0, gcfg.num_classes, n))
        rec = SequenceRecord(f"g{i}", 0, labels, rng.standard_normal((n, gcfg.feature_dim)))
        examples.append(make_example(rec, 0.25, 0.75))
    return collate(examples, gcfg.num_classes, scaling, obs_weight)


def _loss_on_params(names, build):
    def fn(*tensors):
        return build(dict(zip(names, tensors)))

    return fn


def stochastic_loss_error(loss: str = "mse", seed: int = 0, obs_weight: float = 1.0,
                          gating_mode: str = "gated", max_coords: int | None = None) -> float:
    gcfg = GtanConfig(**TINY, gating_mode=gating_mode, dropout_rate=0.3)
    rng = np.random.default_rng(seed)
    params = init_params(gcfg, rng)
    batch = tiny_batch(gcfg, rng, loss=loss, obs_weight=obs_weight)
    dcfg = DiffusionConfig(T=100, self_cond_prob=0.0)
    schedule = make_schedule("linear", dcfg.T)
    draws = draw_noise(batch, schedule, dcfg.self_cond_prob, rng)
    y_t = noisy_labels(batch, draws, schedule)
    tcfg = TrainConfig(loss=loss, obs_loss_weight=obs_weight)
    sc = self_condition(params, batch, y_t, draws, gcfg, tcfg, dcfg.label_scaling, None, train=False)
    names = sorted(params)

    def build(p):
        # fixed dropout masks: a fresh generator with the same seed per evaluation
        drop = np.random.default_rng([seed, 7])
        return stochastic_loss(p, batch, y_t, sc, draws.t, gcfg, tcfg, train=True, rng=drop)[0]

    return nx.grad_check(_loss_on_params(names, build), [params[k] for k in names], eps=1e-4, max_coords=max_coords, refine=3)


def deterministic_loss_error(seed: int = 0, max_coords: int | None = None) -> float:
    gcfg = GtanConfig(**TINY, dropout_rate=0.3)
    rng = np.random.default_rng(seed)
    params = init_params(gcfg, rng)
    batch = tiny_batch(gcfg, rng, loss="ce")
    names = sorted(params)

    def build(p):
        drop = np.random.default_rng([seed, 7])
        return deterministic_loss(p, batch, gcfg, train=True, rng=drop)[0]

    return nx.grad_check(_loss_on_params(names, build), [params[k] for k in names], eps=1e-4, max_coords=max_coords, refine=3)


def operator_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-1, 1, shape)

    def dot(t, w):
        return nx.frame_loss(nx.add(t, nx.Tensor(w)), np.zeros(w.shape), np.full(w.shape[:-1], 0.5), "mse")

    w = {k: u(*shape) for k, shape in [("c", (2, 4, 7)), ("p", (2, 4, 5)), ("e", (3, 4)), ("cat", (5, 4)), ("f", (2, 3, 4))]}
    frame_w = np.abs(u(4))
    target = np.eye(3)[[0, 2, 1, 1]]
    cases = {
        "conv1d_dilated": (lambda x, k, b: dot(nx.conv1d_dilated(x, k, b, 2), w["c"]), [u(2, 3, 7), u(4, 3, 3), u(4)]),
        "conv1x1": (lambda x, k, b: dot(nx.conv1x1(x, k, b), w["p"]), [u(2, 3, 5), u(4, 3), u(4)]),
        "sigmoid": (lambda x: dot(nx.sigmoid(x), w["e"]), [u(3, 4)]),
        "relu": (lambda x: dot(nx.relu(x), w["e"]), [u(3, 4)]),
        "mul": (lambda x, y: dot(nx.mul(x, y), w["e"]), [u(3, 4), u(3, 4)]),
        "dropout": (lambda x: dot(nx.dropout(x, 0.5, np.random.default_rng(1), True), w["e"]), [u(3, 4)]),
        "concat": (lambda x, y: dot(nx.concat([x, y]), w["cat"]), [u(3, 4), u(2, 4)]),
        "add_over_frames": (lambda x, v: dot(nx.add_over_frames(x, v), w["f"]), [u(2, 3, 4), u(2, 3)]),
        "ce_loss": (lambda s: nx.frame_loss(s, target, frame_w, "ce"), [u(4, 3)]),
        "bce_loss": (lambda s: nx.frame_loss(s, target, frame_w, "bce"), [u(4, 3)]),
    }
    return {name: nx.grad_check(fn, inputs) for name, (fn, inputs) in cases.items()}


def gradient_suite(seed: int = 0, max_coords: int | None = 12) -> dict[str, float]:
    """Max relative error per check; every value should be far below 1e-4."""
    out = {f"op.{k}": v for k, v in operator_errors(seed).items()}
    for loss in ("mse", "ce", "bce"):
        out[f"loss.stochastic.{loss}"] = stochastic_loss_error(loss, seed, max_coords=max_coords)
    out["loss.stochastic.obs_weighted"] = stochastic_loss_error("mse", seed, 0.5, max_coords=max_coords)
    out["loss.stochastic.feature_only"] = stochastic_loss_error(
        "mse", seed, gating_mode="feature_only", max_coords=max_coords
    )
    out["loss.deterministic"] = deterministic_loss_error(seed, max_coords=max_coords)
    return out

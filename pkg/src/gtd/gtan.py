"""Gated temporal anticipation network (the diffusion generator).

Layout conventions: public inputs and stage outputs are frame-major
``(B, N, C)`` (or unbatched ``(N, C)``); everything inside a stage is
channel-major ``(B, channels, N)`` so the temporal convolutions run along the
last axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from gtd import numerics as nx
from gtd.errors import ConfigError, ShapeError
from gtd.numerics import Tensor

GATING_MODES = ("gated", "feature_only", "gated_undilated_gate")


@dataclass(frozen=True)
class GtanConfig:
    num_classes: int
    feature_dim: int
    stages: int = 5
    layers_per_stage: int = 9
    channels: int = 64
    kernel_size: int = 3
    dropout_rate: float = 0.5
    gating_mode: str = "gated"
    embed_dim: int | None = None

    def __post_init__(self):
        if self.stages < 1 or self.layers_per_stage < 1:
            raise ConfigError("stages and layers_per_stage must be >= 1")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feature_dim < 1 or self.channels < 1:
            raise ConfigError("feature_dim and channels must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.gating_mode not in GATING_MODES:
            raise ConfigError(f"gating_mode must be one of {GATING_MODES}")
        if self.step_dim % 2:
            raise ConfigError("step embedding dimension must be even")

    @property
    def step_dim(self) -> int:
        return self.embed_dim if self.embed_dim is not None else self.channels

    @property
    def input_dim(self) -> int:
        return 2 * self.num_classes + self.feature_dim

    @property
    def receptive_radius(self) -> int:
        """Frames reachable on either side through one stage."""
        return (self.kernel_size - 1) // 2 * (2**self.layers_per_stage - 1)

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(config: GtanConfig) -> dict[str, tuple[int, ...]]:
    ch, k, c = config.channels, config.kernel_size, config.num_classes
    shapes: dict[str, tuple[int, ...]] = {
        "step.w": (ch, config.step_dim),
        "step.b": (ch,),
    }
    for s in range(config.stages):
        in_dim = config.input_dim if s == 0 else c + config.input_dim
        shapes[f"s{s}.in.w"] = (ch, in_dim)
        shapes[f"s{s}.in.b"] = (ch,)
        for l in range(config.layers_per_stage):
            p = f"s{s}.l{l}."
            if config.gating_mode != "feature_only":
                shapes[p + "gate.w"] = (ch, ch, k)
                shapes[p + "gate.b"] = (ch,)
            shapes[p + "feat.w"] = (ch, ch, k)
            shapes[p + "feat.b"] = (ch,)
            shapes[p + "out.w"] = (ch, ch)
            shapes[p + "out.b"] = (ch,)
        shapes[f"s{s}.head.w"] = (c, ch)
        shapes[f"s{s}.head.b"] = (c,)
    return shapes


def param_count(config: GtanConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


def init_params(config: GtanConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform fan-in initialisation, bound 1/sqrt(fan_in) for weights and biases."""
    shapes = param_shapes(config)
    params = {}
    for name, shape in shapes.items():
        wname = name[:-1] + "w"
        wshape = shapes[wname]
        fan_in = int(np.prod(wshape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zero_params(config: GtanConfig) -> dict[str, np.ndarray]:
    return {k: np.zeros(s) for k, s in param_shapes(config).items()}


def sinusoidal_step_embedding(t, dim: int) -> np.ndarray:
    """Sines then cosines of ``t`` at frequencies ``10000**(-2i/dim)``.

    ``t`` may be a scalar or a ``(B,)`` array; the result is ``(dim,)`` or ``(B, dim)``.
    """
    if dim % 2:
        raise ShapeError(f"embedding dimension must be even, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("diffusion step must be non-negative")
    freqs = 10000.0 ** (-2.0 * np.arange(dim // 2) / dim)
    angles = t[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def assemble_input(y_t, self_cond, cond) -> Tensor:
    """Frame-wise concatenation ``[Y_t | self_cond | F~]`` along the last axis."""
    y_t, self_cond, cond = nx.as_tensor(y_t), nx.as_tensor(self_cond), nx.as_tensor(cond)
    if y_t.dims != self_cond.dims:
        raise ShapeError(f"Y_t {y_t.dims} and self-conditioning {self_cond.dims} differ")
    if y_t.dims[:-1] != cond.dims[:-1]:
        raise ShapeError(f"Y_t {y_t.dims} and condition {cond.dims} disagree on frames")
    return nx.concat([y_t, self_cond, cond], axis=-1)


@dataclass
class GateTrace:
    """Sigmoid gate activations keyed by ``(stage, layer)``, each ``(B, channels, N)``."""

    gates: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def to_arrays(self, sample: int | None = None) -> dict[str, np.ndarray]:
        out = {}
        for (s, l), g in sorted(self.gates.items()):
            out[f"gate.s{s}.l{l}"] = g if sample is None else g[sample]
        return out


_BLOCK_KEYS = ("feat.w", "feat.b", "gate.w", "gate.b", "out.w", "out.b")


def _block_params(params: Mapping, prefix: str) -> dict:
    return {k: params[prefix + k] for k in _BLOCK_KEYS if prefix + k in params}


def gta_block(
    h: Tensor,
    layer: int,
    params: Mapping,
    mode: str = "gated",
    train: bool = False,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
) -> tuple[Tensor, np.ndarray | None]:
    """One residual gated block.

    ``params`` holds the block's own entries (``feat.w``, ``feat.b``,
    ``gate.w``, ``gate.b``, ``out.w``, ``out.b``).  Returns the block output
    and the gate activations (``None`` in ``feature_only`` mode).
    """
    if layer < 0:
        raise ValueError("layer index must be >= 0")
    if mode not in GATING_MODES:
        raise ConfigError(f"unknown gating mode {mode!r}")
    dilation = 2**layer
    feat = nx.conv1d_dilated(h, params["feat.w"], params["feat.b"], dilation)
    if mode == "feature_only":
        gated, gate_vals = feat, None
    else:
        gate_dil = 1 if mode == "gated_undilated_gate" else dilation
        gate = nx.sigmoid(nx.conv1d_dilated(h, params["gate.w"], params["gate.b"], gate_dil))
        gated, gate_vals = nx.mul(gate, feat), gate.data
    z = nx.dropout(gated, dropout_rate, rng, train)
    z = nx.relu(nx.conv1x1(z, params["out.w"], params["out.b"]))
    return nx.add(h, z), gate_vals


def gtan_forward(
    y_t,
    self_cond,
    cond,
    t,
    params: Mapping,
    config: GtanConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    mask: np.ndarray | None = None,
    use_step: bool = True,
) -> tuple[list[Tensor], GateTrace]:
    """Run all stages; returns one frame-major score tensor per stage.

    ``mask`` is an optional ``(B, N)`` 0/1 array marking valid frames of a
    padded batch; padded frames are zeroed after every block so they act as
    the convolutions' zero padding.  ``use_step=False`` drops the step
    embedding (deterministic mode).
    """
    y_t, self_cond, cond = (nx.as_tensor(a) for a in (y_t, self_cond, cond))
    unbatched = y_t.data.ndim == 2
    if unbatched:
        y_t, self_cond, cond = (nx.reshape(a, (1,) + a.dims) for a in (y_t, self_cond, cond))
    if y_t.dims[-1] != config.num_classes or cond.dims[-1] != config.feature_dim:
        raise ShapeError(
            f"inputs (C={y_t.dims[-1]}, D={cond.dims[-1]}) do not match config "
            f"(C={config.num_classes}, D={config.feature_dim})"
        )
    batch, n = y_t.dims[0], y_t.dims[1]
    P = {k: nx.as_tensor(v) for k, v in params.items()}
    frame_mask = None if mask is None else np.asarray(mask, dtype=np.float64).reshape(batch, 1, n)

    x = nx.swap_last(assemble_input(y_t, self_cond, cond))
    step_vec = None
    if use_step:
        emb = sinusoidal_step_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (batch,)), config.step_dim)
        step_vec = nx.swap_last(nx.conv1x1(emb.T.copy(), P["step.w"], P["step.b"]))

    trace = GateTrace()
    outputs: list[Tensor] = []
    prev = None
    for s in range(config.stages):
        inp = x if prev is None else nx.concat([prev, x], axis=-2)
        h = nx.conv1x1(inp, P[f"s{s}.in.w"], P[f"s{s}.in.b"])
        if step_vec is not None:
            h = nx.add_over_frames(h, step_vec)
        if frame_mask is not None:
            h = nx.mask_frames(h, frame_mask)
        for l in range(config.layers_per_stage):
            h, gate = gta_block(
                h,
                l,
                _block_params(P, f"s{s}.l{l}."),
                config.gating_mode,
                train,
                rng,
                config.dropout_rate,
            )
            if gate is not None:
                trace.gates[(s, l)] = gate
            if frame_mask is not None:
                h = nx.mask_frames(h, frame_mask)
        prev = nx.conv1x1(h, P[f"s{s}.head.w"], P[f"s{s}.head.b"])
        out = nx.swap_last(prev)
        if unbatched:
            out = nx.reshape(out, out.dims[1:])
        outputs.append(out)
    return outputs, trace

"""Synthetic action grammars, per-frame features and the observation protocol.

A grammar is a set of activities, each a choice of branches, each branch an
ordered list of action segments with a duration range.  Activities whose
branches start with the same segment are observationally indistinguishable
until that segment ends, which is how ambiguity is produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gtd import container
from gtd.errors import ConfigError, FormatError


@dataclass(frozen=True)
class Segment:
    action: int
    min_frames: int
    max_frames: int


@dataclass(frozen=True)
class Activity:
    id: int
    branches: tuple[tuple[Segment, ...], ...]


@dataclass(frozen=True)
class GrammarSpec:
    activities: tuple[Activity, ...]
    num_classes: int
    seed: int = 0

    def __post_init__(self):
        seen = set()
        for act in self.activities:
            if not act.branches:
                raise ConfigError(f"activity {act.id} has no branches")
            for br in act.branches:
                if not br:
                    raise ConfigError(f"activity {act.id} has an empty branch")
                for seg in br:
                    if seg.min_frames < 1 or seg.max_frames < seg.min_frames:
                        raise ConfigError(f"bad duration range in activity {act.id}: {seg}")
                    if not 0 <= seg.action < self.num_classes:
                        raise ConfigError(f"action {seg.action} outside [0, {self.num_classes})")
                    seen.add(seg.action)
        if seen != set(range(self.num_classes)):
            raise ConfigError("action ids must densely cover [0, num_classes)")

    def shared_prefixes(self) -> list[tuple[int, int, int]]:
        """``(activity_a, activity_b, min_frames)`` for activities with branches opening on the same segment."""
        out = []
        acts = self.activities
        for i, a in enumerate(acts):
            for b in acts[i + 1 :]:
                for ba in a.branches:
                    for bb in b.branches:
                        if ba[0] == bb[0]:
                            out.append((a.id, b.id, ba[0].min_frames))
        return out


def _fixed(*pairs: tuple[int, int]) -> tuple[Segment, ...]:
    return tuple(Segment(a, d, d) for a, d in pairs)


def unambiguous_grammar(seed: int = 0) -> GrammarSpec:
    """Four activities over 8 classes, each opening on its own action, fixed durations."""
    acts = (
        Activity(0, (_fixed((0, 18), (4, 14), (5, 22), (6, 26)),)),
        Activity(1, (_fixed((1, 20), (5, 16), (6, 18), (7, 30)),)),
        Activity(2, (_fixed((2, 16), (6, 20), (7, 14), (4, 26)),)),
        Activity(3, (_fixed((3, 22), (7, 12), (4, 20), (5, 34)),)),
    )
    return GrammarSpec(acts, 8, seed)


def ambiguous_grammar(seed: int = 0) -> GrammarSpec:
    """Two activities sharing a 24-frame opening action, then diverging."""
    acts = (
        Activity(0, (_fixed((0, 24), (1, 20), (2, 18), (3, 18)),)),
        Activity(1, (_fixed((0, 24), (4, 18), (5, 20), (6, 18)),)),
    )
    return GrammarSpec(acts, 7, seed)


GRAMMARS = {"unambiguous": unambiguous_grammar, "ambiguous": ambiguous_grammar}


@dataclass
class SequenceRecord:
    id: str
    activity: int
    labels: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features is not None and len(self.features) != len(self.labels):
            raise FormatError(
                f"record {self.id}: {len(self.labels)} labels vs {len(self.features)} feature rows"
            )

    def __len__(self) -> int:
        return len(self.labels)


def sample_sequence(spec: GrammarSpec, rng: np.random.Generator, record_id: str = "") -> SequenceRecord:
    act = spec.activities[rng.integers(len(spec.activities))]
    branch = act.branches[rng.integers(len(act.branches))]
    runs = []
    for seg in branch:
        d = int(rng.integers(seg.min_frames, seg.max_frames + 1))
        runs.append(np.full(d, seg.action, dtype=np.int64))
    return SequenceRecord(record_id, act.id, np.concatenate(runs))


def class_embeddings(
    num_classes: int, dim: int, rng: np.random.Generator, min_dist: float = 1.0, tries: int = 1000
) -> np.ndarray:
    """Random unit-norm rows with every pairwise distance at least ``min_dist``."""
    for _ in range(tries):
        e = rng.standard_normal((num_classes, dim))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        d = np.linalg.norm(e[:, None] - e[None], axis=-1)
        d[np.diag_indices(num_classes)] = np.inf
        if d.min() >= min_dist:
            return e
    raise ConfigError(f"could not place {num_classes} embeddings in {dim} dims at distance {min_dist}")


def synthesize_features(
    labels,
    embeddings: np.ndarray,
    noise_sigma: float,
    rng: np.random.Generator,
    ambiguity: tuple[int, int, float] | None = None,
) -> np.ndarray:
    """Class embedding per frame plus Gaussian noise.

    ``ambiguity = (start, stop, extra_sigma)`` adds a second noise draw of
    scale ``extra_sigma`` to frames ``start:stop``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    feats = embeddings[labels] + noise_sigma * rng.standard_normal((len(labels), embeddings.shape[1]))
    if ambiguity is not None:
        start, stop, extra = ambiguity
        start, stop = max(0, start), min(len(labels), stop)
        if stop > start:
            feats[start:stop] += extra * rng.standard_normal((stop - start, embeddings.shape[1]))
    return feats


@dataclass(frozen=True)
class ProtocolSplit:
    alpha: float
    beta: float
    n_obs: int
    n_future: int

    @property
    def n_total(self) -> int:
        return self.n_obs + self.n_future


def split_protocol(length: int, alpha: float, beta: float) -> ProtocolSplit:
    """Observed / anticipated frame counts: ``floor(fraction * length)``, at least one each."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if alpha + beta > 1.0 + 1e-12:
        raise ValueError(f"alpha + beta must not exceed 1, got {alpha + beta}")
    # 1e-9 absorbs products such as 0.57 * 100 = 56.999...
    n_obs = max(1, int(np.floor(alpha * length + 1e-9)))
    n_fut = max(1, int(np.floor(beta * length + 1e-9)))
    if n_obs + n_fut > length:
        raise ValueError(f"sequence of {length} frames too short for alpha={alpha}, beta={beta}")
    return ProtocolSplit(alpha, beta, n_obs, n_fut)


def build_condition(record: SequenceRecord, split: ProtocolSplit) -> np.ndarray:
    """Observed features followed by zero rows for the frames to anticipate."""
    if record.features is None:
        raise FormatError(f"record {record.id} has no features")
    if split.n_total > len(record):
        raise ValueError(f"split needs {split.n_total} frames, record {record.id} has {len(record)}")
    cond = np.zeros((split.n_total, record.features.shape[1]))
    cond[: split.n_obs] = record.features[: split.n_obs]
    return cond


# -- dataset generation ------------------------------------------------------


@dataclass(frozen=True)
class DataConfig:
    grammar: str = "unambiguous"
    feature_dim: int = 16
    n_train: int = 200
    n_test: int = 40
    noise_sigma: float = 0.1
    # extra observation noise levels, one drawn uniformly per record
    ambiguity_sigmas: tuple[float, ...] = ()
    ambiguity_span: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.grammar not in GRAMMARS:
            raise ConfigError(f"grammar must be one of {sorted(GRAMMARS)}")
        if self.feature_dim < 1 or self.n_train < 0 or self.n_test < 0:
            raise ConfigError("feature_dim must be >= 1 and record counts >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


@dataclass
class Dataset:
    records: list[SequenceRecord]
    num_classes: int
    info: dict = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.records[0].features.shape[1]


def generate_record(
    spec: GrammarSpec,
    embeddings: np.ndarray,
    config: DataConfig,
    split_name: str,
    index: int,
) -> SequenceRecord:
    """Pure in ``(config.seed, split_name, index)``."""
    code = {"train": 0, "test": 1}.get(split_name, 2)
    rng = np.random.default_rng([config.seed, code, index])
    rec = sample_sequence(spec, rng, f"{split_name}_{index:05d}")
    ambiguity = None
    if config.ambiguity_sigmas:
        extra = float(config.ambiguity_sigmas[rng.integers(len(config.ambiguity_sigmas))])
        ambiguity = (0, int(np.ceil(config.ambiguity_span * len(rec))), extra)
    rec.features = synthesize_features(rec.labels, embeddings, config.noise_sigma, rng, ambiguity)
    return rec


def generate(config: DataConfig) -> tuple[Dataset, Dataset]:
    spec = GRAMMARS[config.grammar](config.seed)
    emb = class_embeddings(spec.num_classes, config.feature_dim, np.random.default_rng([config.seed, 99]))
    info = {"grammar": config.grammar, "seed": config.seed}
    train = [generate_record(spec, emb, config, "train", i) for i in range(config.n_train)]
    test = [generate_record(spec, emb, config, "test", i) for i in range(config.n_test)]
    return Dataset(train, spec.num_classes, info), Dataset(test, spec.num_classes, info)


# -- on-disk format ----------------------------------------------------------

META_FILE = "meta.jsonl"
FEATURES_FILE = "features.bin"


def write_dataset(directory: str | Path, dataset: Dataset) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    arrays = {}
    for rec in dataset.records:
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "activity": int(rec.activity),
                    "labels": [int(x) for x in rec.labels],
                    "length": len(rec),
                }
            )
        )
        arrays[rec.id] = rec.features
    (d / META_FILE).write_text("".join(line + "\n" for line in lines))
    blob = json.dumps({"kind": "features", "num_classes": dataset.num_classes, **dataset.info}, sort_keys=True)
    container.save(d / FEATURES_FILE, arrays, blob)


def read_dataset(directory: str | Path) -> Dataset:
    d = Path(directory)
    try:
        meta_text = (d / META_FILE).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {d / META_FILE}: {exc}") from exc
    if not (d / FEATURES_FILE).exists():
        raise FormatError(f"missing {d / FEATURES_FILE}")
    arrays, blob = container.load(d / FEATURES_FILE)
    try:
        info = json.loads(blob) if blob else {}
    except json.JSONDecodeError as exc:
        raise FormatError(f"features blob is not JSON: {exc}") from exc
    records = []
    max_label = -1
    for lineno, line in enumerate(meta_text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            m = json.loads(line)
            rid, labels, length = m["id"], m["labels"], int(m["length"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{META_FILE}:{lineno}: malformed record ({exc})") from exc
        if len(labels) != length:
            raise FormatError(f"{META_FILE}:{lineno}: length {length} != {len(labels)} labels")
        if rid not in arrays:
            raise FormatError(f"record {rid!r} has no features array")
        feats = arrays[rid]
        if feats.ndim != 2 or feats.shape[0] != length:
            raise FormatError(f"record {rid!r}: features {feats.shape} vs {length} labels")
        records.append(SequenceRecord(rid, int(m.get("activity", -1)), np.asarray(labels), feats))
        if labels:
            max_label = max(max_label, max(labels))
    num_classes = int(info.get("num_classes", max_label + 1))
    info = {k: v for k, v in info.items() if k not in ("kind", "num_classes")}
    return Dataset(records, num_classes, info)


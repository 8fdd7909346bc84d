"""Anticipation metrics: MoC accuracy, Mean / Top-1 MoC, MFSS diversity, quartiles.

All percentages are in [0, 100].  A *region* is a ``slice`` over frames; the
future region of a prediction is ``slice(n_obs, n_total)``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from gtd.errors import FormatError


def _region(n: int, region: slice | None) -> slice:
    r = slice(0, n) if region is None else region
    start, stop, _ = r.indices(n)
    if stop <= start:
        raise ValueError("evaluation region is empty")
    return slice(start, stop)


def moc(pred, gt, region: slice | None = None) -> float:
    """Mean over classes of frame accuracy, over classes present in ``gt[region]``."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction length {pred.shape} != ground truth {gt.shape}")
    r = _region(len(gt), region)
    p, g = pred[r], gt[r]
    accs = [np.mean(p[g == c] == c) for c in np.unique(g)]
    return 100.0 * float(np.mean(accs))


def evaluate_samples(samples: Sequence, gt, region: slice | None = None) -> tuple[float, float]:
    """``(mean MoC, top-1 MoC)`` over a set of sampled label sequences."""
    scores = [moc(s, gt, region) for s in samples]
    if not scores:
        raise ValueError("need at least one sample")
    return float(np.mean(scores)), float(np.max(scores))


def pairwise_dissimilarity(samples: Sequence, region: slice | None = None) -> float:
    """Mean over sample pairs of the percentage of region frames where they disagree."""
    arr = np.asarray([np.asarray(s) for s in samples])
    m = len(arr)
    if m < 2:
        raise ValueError("MFSS needs at least two samples per video")
    r = _region(arr.shape[1], region)
    a = arr[:, r]
    total = 0.0
    for i in range(m):
        for j in range(i + 1, m):
            total += 100.0 * (1.0 - np.mean(a[i] == a[j]))
    return 2.0 * total / (m * (m - 1))


def mfss(sample_sets: Sequence[Sequence], regions: slice | Sequence[slice | None] | None = None) -> float:
    """Mean framewise sample dissimilarity averaged over videos."""
    if not sample_sets:
        raise ValueError("no videos to score")
    if regions is None or isinstance(regions, slice):
        regions = [regions] * len(sample_sets)
    vals = [pairwise_dissimilarity(s, r) for s, r in zip(sample_sets, regions)]
    return float(np.mean(vals))


@dataclass
class QuartileBucket:
    size: int
    observed_mfss: float
    future_mean_moc: float
    future_mfss: float


def bucket_sizes(z: int, buckets: int = 4) -> list[int]:
    base, extra = divmod(z, buckets)
    return [base + (1 if i < extra else 0) for i in range(buckets)]


def quartile_report(observed_mfss, future_mean_moc, future_mfss) -> list[QuartileBucket]:
    """Rank videos by observed-region MFSS and average each quarter."""
    obs = np.asarray(observed_mfss, dtype=float)
    fmoc = np.asarray(future_mean_moc, dtype=float)
    fmfss = np.asarray(future_mfss, dtype=float)
    z = len(obs)
    if z < 4:
        raise ValueError(f"quartile report needs at least 4 videos, got {z}")
    if not (len(fmoc) == len(fmfss) == z):
        raise ValueError("per-video statistics must have equal lengths")
    order = np.argsort(obs, kind="stable")
    out, start = [], 0
    for size in bucket_sizes(z):
        idx = order[start : start + size]
        start += size
        out.append(QuartileBucket(size, float(obs[idx].mean()), float(fmoc[idx].mean()), float(fmfss[idx].mean())))
    return out


# -- prediction records ------------------------------------------------------


def prediction_record(rid: str, m: int, labels, n_obs: int, alpha: float, beta: float) -> dict:
    labels = [int(x) for x in labels]
    return {
        "id": rid,
        "m": int(m),
        "alpha": alpha,
        "beta": beta,
        "labels": labels,
        "observed": labels[:n_obs],
        "future": labels[n_obs:],
    }


def write_predictions(path: str | Path, records: Iterable[dict]) -> None:
    rows = sorted(records, key=lambda r: (r["alpha"], r["beta"], r["id"], r["m"]))
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in rows))


def read_predictions(path: str | Path) -> list[dict]:
    out = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read predictions {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            r["labels"], r["observed"], r["future"]
            r["id"], r["m"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: malformed prediction record ({exc})") from exc
        if r["observed"] + r["future"] != r["labels"]:
            raise FormatError(f"{path}:{lineno}: observed + future != labels")
        out.append(r)
    return out


@dataclass
class VideoScores:
    id: str
    future_mean_moc: float
    future_top1_moc: float
    observed_mfss: float
    future_mfss: float


@dataclass
class MetricsReport:
    alpha: float
    beta: float
    videos: int
    samples: int
    mean_moc: float
    top1_moc: float
    mfss_observed: float
    mfss_future: float
    spearman_obs_mfss_vs_moc: float | None
    quartiles: list[QuartileBucket] = field(default_factory=list)
    per_video: list[VideoScores] = field(default_factory=list)

    def table(self) -> str:
        lines = [
            f"alpha={self.alpha:g} beta={self.beta:g}  videos={self.videos}  M={self.samples}",
            f"  Mean MoC        {self.mean_moc:6.2f}",
            f"  Top-1 MoC       {self.top1_moc:6.2f}",
            f"  MFSS (observed) {self.mfss_observed:6.2f}",
            f"  MFSS (future)   {self.mfss_future:6.2f}",
        ]
        if self.spearman_obs_mfss_vs_moc is not None:
            lines.append(f"  Spearman(obs MFSS, future Mean MoC) {self.spearman_obs_mfss_vs_moc:+.3f}")
        if self.quartiles:
            lines.append("  quartile  size  obs MFSS  fut Mean MoC  fut MFSS")
            for i, q in enumerate(self.quartiles, 1):
                lines.append(
                    f"  Q{i}        {q.size:4d}  {q.observed_mfss:8.2f}  {q.future_mean_moc:12.2f}  {q.future_mfss:8.2f}"
                )
        return "\n".join(lines)

    def records(self) -> list[dict]:
        """Flat line-delimited records for plotting."""
        base = {"alpha": self.alpha, "beta": self.beta}
        rows = [
            {
                **base,
                "kind": "summary",
                "mean_moc": self.mean_moc,
                "top1_moc": self.top1_moc,
                "mfss_observed": self.mfss_observed,
                "mfss_future": self.mfss_future,
                "spearman": self.spearman_obs_mfss_vs_moc,
                "videos": self.videos,
                "samples": self.samples,
            }
        ]
        rows += [{**base, "kind": "quartile", "q": i + 1, **asdict(q)} for i, q in enumerate(self.quartiles)]
        rows += [{**base, "kind": "video", **asdict(v)} for v in self.per_video]
        return rows


def evaluate_predictions(predictions: Sequence[dict], ground_truth: dict[str, np.ndarray]) -> list[MetricsReport]:
    """One report per ``(alpha, beta)`` found in the prediction records."""
    groups: dict[tuple, dict[str, list[dict]]] = defaultdict(lambda: defaultdict(list))
    for r in predictions:
        groups[(r.get("alpha"), r.get("beta"))][r["id"]].append(r)
    reports = []
    for (alpha, beta), by_id in sorted(groups.items(), key=lambda kv: (kv[0][0] or 0, kv[0][1] or 0)):
        videos = []
        m_count = None
        for rid in sorted(by_id):
            rows = sorted(by_id[rid], key=lambda r: r["m"])
            if rid not in ground_truth:
                raise FormatError(f"prediction for unknown sequence {rid!r}")
            n_obs, n_total = len(rows[0]["observed"]), len(rows[0]["labels"])
            gt = np.asarray(ground_truth[rid])[:n_total]
            if len(gt) != n_total:
                raise FormatError(f"sequence {rid!r}: prediction longer than ground truth")
            samples = [np.asarray(r["labels"]) for r in rows]
            if any(len(s) != n_total for s in samples):
                raise FormatError(f"sequence {rid!r}: samples differ in length")
            fut, obs = slice(n_obs, n_total), slice(0, n_obs)
            mean_m, top_m = evaluate_samples(samples, gt, fut)
            if len(samples) >= 2:
                o_mfss, f_mfss = pairwise_dissimilarity(samples, obs), pairwise_dissimilarity(samples, fut)
            else:
                o_mfss = f_mfss = 0.0
            videos.append(VideoScores(rid, mean_m, top_m, o_mfss, f_mfss))
            m_count = len(samples) if m_count is None else min(m_count, len(samples))
        fm = [v.future_mean_moc for v in videos]
        om = [v.observed_mfss for v in videos]
        ff = [v.future_mfss for v in videos]
        rho = None
        if len(videos) >= 3 and np.ptp(om) > 0 and np.ptp(fm) > 0:
            rho = float(spearmanr(om, fm).statistic)
        reports.append(
            MetricsReport(
                alpha=alpha,
                beta=beta,
                videos=len(videos),
                samples=m_count or 0,
                mean_moc=float(np.mean(fm)),
                top1_moc=float(np.mean([v.future_top1_moc for v in videos])),
                mfss_observed=float(np.mean(om)),
                mfss_future=float(np.mean(ff)),
                spearman_obs_mfss_vs_moc=rho,
                quartiles=quartile_report(om, fm, ff) if len(videos) >= 4 else [],
                per_video=videos,
            )
        )
    return reports

"""Command-line entry point: ``gtd <subcommand> ...``.

Configuration lives in an INI file with sections ``data``, ``model``,
``diffusion``, ``train`` and ``eval``; ``--set section.key=value`` overrides
single entries.  Unknown sections or keys are rejected before anything is
written.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from gtd import container
from gtd.data import DataConfig, generate, read_dataset, write_dataset
from gtd.diffusion import DiffusionConfig, denoise_loop
from gtd.errors import ConfigError, FormatError, GTDError
from gtd.gtan import GtanConfig
from gtd.metrics import evaluate_predictions, read_predictions, write_predictions
from gtd.trainer import TrainConfig, Trainer, make_example

log = logging.getLogger("gtd")

GRADCHECK_TOL = 1e-4
EXIT_GRADCHECK = 5


# -- configuration -----------------------------------------------------------------


@dataclass(frozen=True)
class ModelSection:
    stages: int = 5
    layers_per_stage: int = 9
    channels: int = 64
    kernel_size: int = 3
    dropout_rate: float = 0.5
    gating_mode: str = "gated"
    embed_dim: int | None = None


@dataclass(frozen=True)
class TrainSection:
    mode: str = "stochastic"
    loss: str = "mse"
    obs_loss_weight: float = 1.0
    lr: float = 5e-4
    batch_size: int = 16
    epochs: int = 1
    alphas: tuple[float, ...] = (0.2, 0.3)
    betas: tuple[float, ...] = (0.5,)
    # total optimizer steps; overrides epochs when set
    steps: int | None = None
    checkpoint_every: int | None = None


@dataclass(frozen=True)
class EvalSection:
    alphas: tuple[float, ...] = (0.2, 0.3)
    betas: tuple[float, ...] = (0.1, 0.2, 0.3, 0.5)
    samples: int = 25
    workers: int = 1


SECTIONS = {
    "data": DataConfig,
    "model": ModelSection,
    "diffusion": DiffusionConfig,
    "train": TrainSection,
    "eval": EvalSection,
}


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelSection = field(default_factory=ModelSection)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def gtan(self, num_classes: int, feature_dim: int) -> GtanConfig:
        return GtanConfig(num_classes=num_classes, feature_dim=feature_dim, **dataclasses.asdict(self.model))

    def train_config(self, seed: int) -> TrainConfig:
        t = dataclasses.asdict(self.train)
        t.pop("steps"), t.pop("checkpoint_every")
        return TrainConfig(seed=seed, **t)


def _coerce(raw: str, default, key: str):
    text = raw.strip()
    try:
        if isinstance(default, tuple):
            return tuple(float(x) for x in text.replace(",", " ").split())
        if default is None:
            return None if text.lower() in ("", "none") else int(text)
        if isinstance(default, bool):
            return {"true": True, "false": False}[text.lower()]
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return text


def _defaults(cls) -> dict:
    inst = cls()
    return {f.name: getattr(inst, f.name) for f in fields(cls)}


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    """Parse the INI file, apply ``section.key=value`` overrides, validate."""
    raw: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keys are field names; keep their case
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            raw[section].update(parser[section])
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        raw[section][name] = value
    built = {}
    for section, cls in SECTIONS.items():
        defaults = _defaults(cls)
        unknown = set(raw[section]) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        values = {k: _coerce(v, defaults[k], f"{section}.{k}") for k, v in raw[section].items()}
        try:
            built[section] = cls(**{**defaults, **values})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    cfg = RunConfig(**built)
    # validate model and train choices before any command touches the disk
    cfg.gtan(2, 1)
    cfg.train_config(0)
    return cfg


def _log_config(cfg: RunConfig, **extra) -> dict:
    resolved = {**cfg.to_dict(), **extra}
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    return resolved


# -- subcommands --------------------------------------------------------------------


def cmd_gen_data(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    resolved = _log_config(cfg)
    train, test = generate(cfg.data)
    write_dataset(out / "train", train)
    write_dataset(out / "test", test)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d train / %d test sequences to %s", len(train.records), len(test.records), out)
    return 0


def _split_dir(data: str, split: str) -> Path:
    d = Path(data)
    return d / split if (d / split).is_dir() else d


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    dataset = read_dataset(_split_dir(args.data, "train"))
    if not dataset.records:
        raise FormatError("training set is empty")
    if args.resume:
        trainer = Trainer.load(args.resume)
        if trainer.tcfg.seed != args.seed:
            raise ConfigError(f"checkpoint was trained with seed {trainer.tcfg.seed}, not {args.seed}")
    else:
        gcfg = cfg.gtan(dataset.num_classes, dataset.feature_dim)
        trainer = Trainer(gcfg, cfg.diffusion, cfg.train_config(args.seed))
    steps = args.steps if args.steps is not None else cfg.train.steps
    resolved = _log_config(cfg, seed=args.seed, steps=steps, data=str(args.data))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")
    ckpt = out / "checkpoint.gtd"
    losses = trainer.fit(
        dataset,
        steps=steps,
        log_path=out / "train_log.jsonl",
        checkpoint_path=ckpt,
        checkpoint_every=cfg.train.checkpoint_every,
    )
    if losses:
        log.info("trained to step %d, last loss %.6f", trainer.step, losses[-1])
    log.info("checkpoint: %s", ckpt)
    return 0


def cmd_sample(args, cfg: RunConfig) -> int:
    from gtd.experiments import predict

    trainer = Trainer.load(args.checkpoint)
    dataset = read_dataset(_split_dir(args.data, args.split))
    alphas = args.alpha or cfg.eval.alphas
    betas = args.beta or cfg.eval.betas
    samples = args.samples or cfg.eval.samples
    workers = args.workers or cfg.eval.workers
    for a in alphas:
        for b in betas:
            if a <= 0 or b <= 0 or a + b > 1.0 + 1e-12:
                raise ConfigError(f"invalid protocol alpha={a}, beta={b}")
    resolved = {
        "checkpoint": str(args.checkpoint),
        "model": trainer.gcfg.to_dict(),
        "diffusion": dataclasses.asdict(trainer.dcfg),
        "train": dataclasses.asdict(trainer.tcfg),
        "step": trainer.step,
        "seed": args.seed,
        "alphas": list(alphas),
        "betas": list(betas),
        "samples": samples,
        "workers": workers,
    }
    log.info("resolved config: %s", json.dumps(resolved, sort_keys=True))
    rows = []
    for a in alphas:
        for b in betas:
            rows += predict(trainer, dataset, a, b, samples, args.seed, workers)
    write_predictions(args.out, rows)
    log.info("wrote %d prediction records to %s", len(rows), args.out)
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    preds = read_predictions(args.predictions)
    dataset = read_dataset(_split_dir(args.data, args.split))
    gt = {r.id: r.labels for r in dataset.records}
    reports = evaluate_predictions(preds, gt)
    for rep in reports:
        print(rep.table())
    if args.out:
        rows = [row for rep in reports for row in rep.records()]
        Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in rows))
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from gtd.checks import gradient_suite

    errors = gradient_suite(args.seed, max_coords=args.max_coords)
    for name, err in errors.items():
        print(f"{name:36s} {err:.3e}")
    worst = max(errors.values())
    ok = worst < GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'} at tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else EXIT_GRADCHECK


def cmd_inspect_gates(args, cfg: RunConfig) -> int:
    trainer = Trainer.load(args.checkpoint)
    dataset = read_dataset(_split_dir(args.data, args.split))
    by_id = {r.id: r for r in dataset.records}
    if args.id is not None:
        if args.id not in by_id:
            raise FormatError(f"no sequence {args.id!r} in {args.data}")
        rec = by_id[args.id]
    else:
        if not 0 <= args.index < len(dataset.records):
            raise ConfigError(f"index {args.index} outside [0, {len(dataset.records)})")
        rec = dataset.records[args.index]
    ex = make_example(rec, args.alpha, args.beta)
    den = trainer.denoiser(capture_gates=True)
    if trainer.tcfg.mode == "deterministic":
        den.deterministic(ex.cond)
        step = 0
    else:
        rng = np.random.default_rng([args.seed, 0])
        _, trace = denoise_loop(den, ex.cond, dataset.num_classes, trainer.dcfg, trainer.schedule, rng)
        step = trace.steps[-1]
    arrays = den.last_gates.to_arrays(sample=None)
    arrays = {k: v[0] if v.ndim == 3 else v for k, v in arrays.items()}
    blob = {"kind": "gate-trace", "id": rec.id, "alpha": args.alpha, "beta": args.beta,
            "n_obs": ex.n_obs, "diffusion_step": step, "seed": args.seed}
    container.save(args.out, arrays, json.dumps(blob, sort_keys=True))
    for k, v in arrays.items():
        print(f"{k:14s} shape={v.shape} mean={v.mean():.4f} min={v.min():.4f} max={v.max():.4f}")
    return 0


# -- argument parsing ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gtd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        return sp

    g = with_config(sub.add_parser("gen-data", help="generate a synthetic dataset"))
    g.add_argument("--out", required=True)

    t = with_config(sub.add_parser("train", help="train a model"))
    t.add_argument("--data", required=True, help="dataset directory (or its parent holding train/)")
    t.add_argument("--out", required=True, help="run directory for checkpoint and log")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")

    s = with_config(sub.add_parser("sample", help="write prediction records"))
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--alpha", type=float, nargs="+")
    s.add_argument("--beta", type=float, nargs="+")
    s.add_argument("--samples", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)

    e = with_config(sub.add_parser("eval", help="score prediction records"))
    e.add_argument("--predictions", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="write report records here")

    gc = with_config(sub.add_parser("gradcheck", help="finite-difference gradient suite"))
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--max-coords", type=int, default=12, help="probed coordinates per parameter array")

    ig = with_config(sub.add_parser("inspect-gates", help="dump gate activations for one sequence"))
    ig.add_argument("--checkpoint", required=True)
    ig.add_argument("--data", required=True)
    ig.add_argument("--split", default="test")
    ig.add_argument("--index", type=int, default=0)
    ig.add_argument("--id")
    ig.add_argument("--alpha", type=float, default=0.2)
    ig.add_argument("--beta", type=float, default=0.3)
    ig.add_argument("--seed", type=int, default=0)
    ig.add_argument("--out", required=True)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect-gates": cmd_inspect_gates,
}


def run(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](args, cfg)
    except GTDError as exc:
        print(f"gtd: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gtd: error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    except ValueError as exc:
        print(f"gtd: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""``cdidti`` command line: gen, train, eval, gradcheck, export.

Every option is a key in a flat TOML section and a flag of the same name
(underscores become dashes). Values resolve as built-in default, then the
``--config`` file, then the command line.

Exit codes: 0 ok, 1 gradient check failure, 2 configuration error,
3 divergence, 4 undefined metric, 5 lookup failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data.dataset import DatasetError, MissingEntityError, load_dataset, save_dataset
from .data.features import CorruptBlobError
from .data.splits import BINDINGDB_FRACTIONS, MODES, InfeasibleSplitError, SplitSpec, split_dataset
from .data.synthetic import DEFAULT_POSITIVE_RATE, generate_synthetic
from .model import VARIANTS, EntityDims, InputDims, ModelConfig, predict_proba
from .training import DivergenceError, TrainConfig, train

log = logging.getLogger("cdidti")

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_UNDEFINED, EXIT_LOOKUP = 0, 1, 2, 3, 4, 5


class ConfigError(Exception):
    pass


def _floats3(text) -> tuple[float, float, float]:
    parts = text if isinstance(text, (list, tuple)) else str(text).split(",")
    vals = tuple(float(p) for p in parts)
    if len(vals) != 3:
        raise ValueError("expected three comma-separated numbers")
    return vals


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    kind: Callable
    default: Any
    help: str
    choices: tuple | None = None

    @property
    def flag(self) -> str:
        return "--" + self.key.replace("_", "-")


_MODEL_DEFAULTS = ModelConfig()
_TRAIN_DEFAULTS = TrainConfig()
_MODEL_HELP = {
    "hidden_dim": "hidden width (Dim)",
    "heads": "attention heads",
    "gat_layers": "stacked GAT layers",
    "mhsa_layers": "stacked self-attention blocks",
    "temperature": "Gram loss temperature",
    "loss_weight": "weight of the alignment loss",
    "threshold": "similarity threshold of the orthogonal fusion",
    "bca_mode": "bidirectional attention stream",
    "residual": "orthogonal residual form",
    "gram_negatives": "Gram loss negative construction",
    "variant": "ablation variant",
    "pos_weight": "positive-class weight in the cross-entropy (none = unweighted)",
}
_TRAIN_HELP = {
    "batch_size": "mini-batch size",
    "learning_rate": "initial Adam learning rate",
    "lr_decay_interval": "epochs between learning-rate decays",
    "lr_decay_factor": "learning-rate multiplier per decay",
    "weight_decay": "L2 weight decay",
    "max_epochs": "epochs to run",
    "beta1": "Adam beta1",
    "beta2": "Adam beta2",
    "adam_eps": "Adam epsilon",
    "select_best": "keep the parameters with the best validation AUROC",
}
_MODEL_CHOICES = {"bca_mode": ("cross", "self"), "residual": ("gram_schmidt", "literal"),
                  "gram_negatives": ("self", "cross"), "variant": VARIANTS}


def _dataclass_options(section, defaults, helps, skip=()):
    out = []
    for f in dataclasses.fields(defaults):
        if f.name in skip:
            continue
        value = getattr(defaults, f.name)
        if f.name == "pos_weight":
            kind = _opt_float
        elif isinstance(value, bool):
            kind = bool
        else:
            kind = type(value)
        out.append(Option(section, f.name, kind, value, helps[f.name], _MODEL_CHOICES.get(f.name)))
    return out


OPTIONS: list[Option] = [
    Option("run", "seed", int, 0, "seed for generation, splitting and training"),
    Option("gen", "drugs", int, 10, "number of drugs"),
    Option("gen", "targets", int, 20, "number of targets"),
    Option("gen", "interactions", int, 200, "number of labelled pairs"),
    Option("gen", "signal", float, 3.0, "planted signal strength (0 = labels carry no signal)"),
    Option("gen", "positive_rate", float, DEFAULT_POSITIVE_RATE, "fraction of positive labels"),
    Option("gen", "rank", int, 2, "rank of each planted bilinear block"),
    Option("gen", "feat_dim", int, 16, "input feature width"),
    Option("gen", "text_len", int, 8, "tokens in the textual modality"),
    Option("gen", "func_len", int, 4, "tokens in the functional modality"),
    Option("gen", "noise", float, 0.3, "feature noise scale"),
    Option("paths", "data", str, "", "dataset manifest (or its directory)"),
    Option("paths", "out", str, "", "output location (gen: dataset dir, train: checkpoint, export: dir)"),
    Option("paths", "history", str, "", "training history file (JSON lines); default <out>.history.jsonl"),
    Option("paths", "checkpoint", str, "", "checkpoint to evaluate or export from"),
    Option("paths", "train_data", str, "", "eval: dataset the model is trained on (trains when no checkpoint)"),
    Option("paths", "test_data", str, "", "eval: dataset scored whole (cross-domain test)"),
    Option("split", "split", str, "random", "split protocol", MODES),
    Option("split", "fractions", _floats3, BINDINGDB_FRACTIONS, "train,val,test fractions"),
    *_dataclass_options("model", _MODEL_DEFAULTS, _MODEL_HELP),
    *_dataclass_options("train", _TRAIN_DEFAULTS, _TRAIN_HELP, skip=("seed",)),
    Option("eval", "partition", str, "test", "split partition to score", ("train", "val", "test", "all")),
    Option("eval", "report", str, "", "also write the report JSON to this file"),
    Option("export", "what", str, "embeddings", "what to export", ("embeddings", "attention")),
    Option("export", "sample", str, "", "sample id drug_id:target_id (attention export)"),
    Option("export", "subset", str, "all", "split partition to export embeddings for", ("train", "val", "test", "all")),
    Option("gradcheck", "suites", str, "all", "comma-separated suite names"),
    Option("gradcheck", "flip", str, "", "negate the backward rule of this op (fault injection)"),
]
BY_KEY = {o.key: o for o in OPTIONS}
SECTIONS = sorted({o.section for o in OPTIONS})

COMMAND_SECTIONS = {
    "gen": ("run", "gen", "paths"),
    "train": ("run", "paths", "split", "model", "train"),
    "eval": ("run", "paths", "split", "model", "train", "eval"),
    "gradcheck": ("run", "gradcheck"),
    "export": ("run", "paths", "split", "export"),
}
COMMAND_HELP = {
    "gen": "generate a planted-signal synthetic dataset",
    "train": "train a model and write a checkpoint plus history",
    "eval": "score a checkpoint and print the report JSON",
    "gradcheck": "run the finite-difference gradient suites",
    "export": "export stage embeddings or attention importances as CSV",
}


def _coerce(opt: Option, value, source: str):
    try:
        if opt.kind is bool:
            if not isinstance(value, bool):
                raise ValueError("expected true or false")
            out = value
        elif opt.kind is int and isinstance(value, float):
            raise ValueError("expected an integer")
        else:
            out = opt.kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: invalid value {value!r} for {opt.key}: {exc}") from None
    if opt.choices and out not in opt.choices:
        raise ConfigError(f"{source}: {opt.key} must be one of {opt.choices}, got {out!r}")
    return out


def read_config(path: str) -> dict[str, Any]:
    """Flatten a TOML config into ``{key: value}``; unknown sections or keys raise."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    out: dict[str, Any] = {}
    for section, table in raw.items():
        if section not in SECTIONS or not isinstance(table, dict):
            raise ConfigError(f"{path}: unknown section [{section}] (known: {', '.join(SECTIONS)})")
        for key, value in table.items():
            opt = BY_KEY.get(key)
            if opt is None or opt.section != section:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[key] = _coerce(opt, value, path)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdidti", description="Multimodal drug-target interaction prediction.")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, sections in COMMAND_SECTIONS.items():
        p = sub.add_parser(cmd, help=COMMAND_HELP[cmd], description=COMMAND_HELP[cmd])
        p.add_argument("--config", default=None, help="TOML config file; flags override its values (default: none)")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
        for sec in sections:
            group = p.add_argument_group(f"[{sec}]")
            for opt in (o for o in OPTIONS if o.section == sec):
                default = ",".join(f"{x:.6g}" for x in opt.default) if opt.key == "fractions" else opt.default
                shown = "none" if default in ("", None) else default
                text = f"{opt.help} (default: {shown})"
                if opt.kind is bool:
                    group.add_argument(opt.flag, dest=opt.key, action=argparse.BooleanOptionalAction, default=None, help=text)
                else:
                    kind = opt.kind if opt.kind in (int, float, str) else str
                    group.add_argument(opt.flag, dest=opt.key, type=kind, default=None, choices=opt.choices, help=text)
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict[str, Any], set[str]]:
    """Merge defaults, config file and flags; also return keys set explicitly."""
    values = {o.key: o.default for o in OPTIONS}
    explicit: set[str] = set()
    if args.config:
        cfg = read_config(args.config)
        values.update(cfg)
        explicit |= set(cfg)
    for opt in OPTIONS:
        v = getattr(args, opt.key, None)
        if v is not None:
            values[opt.key] = _coerce(opt, v, opt.flag)
            explicit.add(opt.key)
    return values, explicit


def _model_config(v) -> ModelConfig:
    try:
        return ModelConfig(**{f.name: v[f.name] for f in dataclasses.fields(ModelConfig)})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _train_config(v) -> TrainConfig:
    try:
        kw = {f.name: v[f.name] for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
        return TrainConfig(seed=v["seed"], **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _split_spec(v) -> SplitSpec:
    try:
        return SplitSpec(v["split"], v["fractions"], v["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _manifest(path: str, flag: str) -> Path:
    if not path:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def _load(path: str, flag: str):
    return load_dataset(_manifest(path, flag))


def _require(v, key):
    if not v[key]:
        raise ConfigError(f"{BY_KEY[key].flag} is required")
    return v[key]


def cmd_gen(v, explicit) -> int:
    out = Path(v["out"] or "synthetic_data")
    try:
        ds = generate_synthetic(
            v["drugs"], v["targets"], v["interactions"], v["signal"], v["seed"], v["positive_rate"],
            v["rank"], v["feat_dim"], v["text_len"], v["func_len"], v["noise"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    manifest = save_dataset(ds, out)
    print(manifest)
    return EXIT_OK


def _dims(ds) -> InputDims:
    s = ds.samples[0]
    return InputDims(EntityDims.of(ds.drugs[s.drug_id]), EntityDims.of(ds.targets[s.target_id]))


def _fit(ds, v, spec: SplitSpec):
    train_s, val_s, _ = split_dataset(ds, spec, ds if spec.mode == "cross_domain" else None)
    if not train_s:
        raise InfeasibleSplitError("training partition is empty")
    tp, ty = ds.pairs(train_s)
    vp, vy = ds.pairs(val_s) if val_s else (None, None)
    return train(tp, ty, _model_config(v), _train_config(v), vp, vy, dims=_dims(ds))


def _split_meta(spec: SplitSpec, data: str) -> dict:
    return {"split": spec.mode, "fractions": list(spec.fractions), "seed": spec.seed, "data": data}


def cmd_train(v, explicit) -> int:
    ds = _load(v["data"], "--data")
    spec = _split_spec(v)
    result = _fit(ds, v, spec)
    out = Path(v["out"] or "model.ckpt")
    meta = _split_meta(spec, v["data"])
    meta["best_epoch"] = result.best_epoch
    save_checkpoint(out, result.params, _model_config(v), _dims(ds), meta)
    hist = Path(v["history"] or f"{out}.history.jsonl")
    hist.parent.mkdir(parents=True, exist_ok=True)
    with open(hist, "w", encoding="utf-8") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec) + "\n")
    Path(f"{hist}.meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
    print(json.dumps({"checkpoint": str(out), "history": str(hist), "best_epoch": result.best_epoch}))
    return EXIT_OK


def _checkpoint_split(v, explicit, meta) -> SplitSpec:
    """Split used at training time unless overridden."""
    merged = dict(v)
    for key in ("split", "fractions", "seed"):
        if key not in explicit and key in meta:
            merged[key] = tuple(meta[key]) if key == "fractions" else meta[key]
    return _split_spec(merged)


def _partition(ds, spec, name):
    if name == "all":
        return list(ds.samples)
    parts = split_dataset(ds, spec, ds if spec.mode == "cross_domain" else None)
    return list(parts[("train", "val", "test").index(name)])


def cmd_eval(v, explicit) -> int:
    from .metrics import compute_metrics

    if v["checkpoint"]:
        params, cfg, _, meta = load_checkpoint(v["checkpoint"])
    elif v["train_data"]:
        train_ds = _load(v["train_data"], "--train-data")
        spec = _split_spec({**v, "split": "random" if v["split"] == "cross_domain" else v["split"]})
        params, cfg, meta = _fit(train_ds, v, spec).params, _model_config(v), _split_meta(spec, v["train_data"])
    else:
        raise ConfigError("--checkpoint or --train-data is required")
    if v["test_data"]:
        ds = _load(v["test_data"], "--test-data")
        samples = list(ds.samples)
    else:
        ds = _load(v["data"] or meta.get("data", ""), "--data")
        samples = _partition(ds, _checkpoint_split(v, explicit, meta), v["partition"])
    if not samples:
        raise InfeasibleSplitError(f"partition {v['partition']!r} is empty")
    pairs, labels = ds.pairs(samples)
    report = compute_metrics(predict_proba(pairs, params, cfg), labels)
    text = json.dumps(report.to_dict())
    print(text)
    if v["report"]:
        Path(v["report"]).write_text(text + "\n", encoding="utf-8")
    if not report.defined:
        print("error: AUROC/AUPRC undefined (evaluation set has a single class)", file=sys.stderr)
        return EXIT_UNDEFINED
    return EXIT_OK


def cmd_gradcheck(v, explicit) -> int:
    from .gradcheck import SUITES, format_table, run_suites

    names = None if v["suites"] in ("", "all") else [s.strip() for s in v["suites"].split(",") if s.strip()]
    if names:
        unknown = [n for n in names if n not in SUITES]
        if unknown:
            raise ConfigError(f"--suites: unknown suite(s) {unknown}; known: {', '.join(SUITES)}")
    results = run_suites(names, flip=v["flip"] or None, seed=v["seed"])
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_export(v, explicit) -> int:
    from .export import export_attention, export_embeddings

    params, cfg, _, meta = load_checkpoint(_require(v, "checkpoint"))
    ds = _load(v["data"] or meta.get("data", ""), "--data")
    out = Path(v["out"] or "exports")
    if v["what"] == "attention":
        sample = ds.find(_require(v, "sample"))
        written = export_attention(sample, ds.pair(sample), params, cfg, out)
    else:
        samples = _partition(ds, _checkpoint_split(v, explicit, meta), v["subset"])
        pairs, _ = ds.pairs(samples)
        written = export_embeddings(samples, pairs, params, cfg, out)
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "export": cmd_export}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        values, explicit = resolve(args)
        return COMMANDS[args.command](values, explicit)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MissingEntityError, KeyError) as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_LOOKUP
    except (FileNotFoundError, DatasetError, CorruptBlobError, CheckpointError, InfeasibleSplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: encode, train, evaluate, compare, explain, predict.

Every hyperparameter flag can also be set through an ``LRMOE_*`` environment
variable (``--lambda-r`` -> ``LRMOE_LAMBDA_R``).  Precedence, lowest first:
built-in defaults, ``--config`` file, environment, explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from lrmoe import explain as explain_mod
from lrmoe.encoding import Dataset, FeatureDictionary, encode_prefix, encode_prefixes, prepare_prefixes
from lrmoe.encoding import fit_feature_dictionary, derive_temporal_features
from lrmoe.errors import (
    ConfigError,
    DivergenceError,
    EmptyLogError,
    LrMoeError,
    ModelFormatError,
    SchemaError,
    ShapeError,
)
from lrmoe.evaluation import compare_with_baseline, evaluate, evaluate_dataset
from lrmoe.event_log import PrefixInstance, Schema, SplitSpec, parse_event_log, temporal_split
from lrmoe.model import MoeModel, complexity, deserialize, predict, serialize
from lrmoe.training import TrainConfig, check_sparsity, parse_k_top, train_full

log = logging.getLogger("lrmoe")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_EMPTY = 3
EXIT_DIVERGED = 4
EXIT_DIMENSION = 5

ENV_PREFIX = "LRMOE_"

# flag dest -> TrainConfig field
CONFIG_FLAGS = {
    "m": "m",
    "ktop": "k_top",
    "lambda_r": "lambda_r",
    "epochs_e2e": "epochs_e2e",
    "epochs_gate": "epochs_gate",
    "lr_gate": "lr_gate",
    "lr_experts": "lr_experts",
    "batch_size": "batch_size",
    "seed": "seed",
}

# CLI defaults: m=6, kTop=8, lambda_R=0.1, 100 + 100 epochs
CLI_DEFAULTS = TrainConfig(m=6, k_top=8, lambda_r=0.1, epochs_e2e=100, epochs_gate=100)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _env(dest: str):
    return os.environ.get(ENV_PREFIX + dest.upper())


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--config", help="JSON or TOML file with TrainConfig fields")
    g.add_argument("--m", type=int, help="number of experts (default 6)")
    g.add_argument("--ktop", help="max features per sub-net, integer or ALL (default 8)")
    g.add_argument("--lambda-r", type=float, help="L1 weight (default 0.1)")
    g.add_argument("--epochs-e2e", type=int, help="end-to-end epochs (default 100)")
    g.add_argument("--epochs-gate", type=int, help="gate fine-tuning epochs (default 100)")
    g.add_argument("--lr-gate", type=float, help="gate learning rate (default 0.01)")
    g.add_argument("--lr-experts", type=float, help="expert learning rate (default 0.05)")
    g.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    g.add_argument("--seed", type=int, help="random seed (default 0)")


def _add_prefix_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-prefix-len", type=int, help="shortest prefix to encode (default 2)")
    p.add_argument("--max-prefix-len", type=int, help="longest training prefix (default unbounded)")


def _resolve(args, dest: str, cast, default):
    value = getattr(args, dest, None)
    if value is None:
        env = _env(dest)
        if env is not None:
            try:
                value = cast(env)
            except ValueError:
                raise CliError(EXIT_SCHEMA, f"bad value {env!r} in {ENV_PREFIX}{dest.upper()}") from None
    return default if value is None else value


def _train_config(args) -> TrainConfig:
    base = CLI_DEFAULTS.to_dict()
    if args.config:
        base.update(TrainConfig.load(args.config).to_dict())
    casts = {"ktop": parse_k_top, "lambda_r": float, "lr_gate": float, "lr_experts": float}
    for dest, name in CONFIG_FLAGS.items():
        base[name] = _resolve(args, dest, casts.get(dest, int), base[name])
    return TrainConfig.from_mapping(base)


def _write_manifest(out: Path, command: str, argv: list[str], inputs: dict, outputs: dict, extra: dict) -> None:
    from lrmoe import __version__

    doc = {
        "tool": "lrmoe",
        "version": __version__,
        "command": command,
        "argv": argv,
        "inputs": inputs,
        "outputs": outputs,
        **extra,
    }
    (out / f"manifest_{command}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _load_model(path) -> MoeModel:
    return deserialize(Path(path).read_text(encoding="utf-8"))


def _load_schema(path) -> Schema:
    try:
        return Schema.load(path)
    except OSError as exc:
        raise CliError(EXIT_ERROR, f"cannot read schema: {exc}") from exc


def cmd_encode(args, argv) -> int:
    schema = _load_schema(args.schema)
    event_log = parse_event_log(args.log, schema)
    if len(event_log) == 0:
        raise EmptyLogError(f"{args.log}: no events")
    split = SplitSpec.parse(args.split) if args.split else (
        SplitSpec.parse(_env("split")) if _env("split") else SplitSpec()
    )
    min_len = _resolve(args, "min_prefix_len", int, 2)
    max_len = _resolve(args, "max_prefix_len", int, None)
    train_log, valid_log, test_log = temporal_split(event_log, split)

    train_p = prepare_prefixes(train_log, min_len, max_len)
    if not train_p:
        raise EmptyLogError("training split yields no prefixes")
    dictionary = fit_feature_dictionary(train_p, rare_threshold=args.rare_threshold)
    standardize = not args.no_standardize
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dictionary.save(out / "dictionary.json")
    datasets = {
        "train": encode_prefixes(train_p, dictionary, standardize),
        "valid": encode_prefixes(prepare_prefixes(valid_log, min_len, max_len), dictionary, standardize),
        "test": encode_prefixes(prepare_prefixes(test_log, min_len, None), dictionary, standardize),
    }
    for name, data in datasets.items():
        data.to_csv(out / f"{name}.csv")
    _write_manifest(
        out, "encode", argv,
        {"log": str(args.log), "schema": str(args.schema)},
        {"dictionary": str(out / "dictionary.json"), **{k: str(out / f"{k}.csv") for k in datasets}},
        {"split": [split.train_fraction, split.valid_fraction, split.test_fraction],
         "min_prefix_len": min_len, "max_prefix_len": max_len, "standardize": standardize},
    )
    print(f"d={dictionary.d} features; cases train/valid/test = "
          f"{len(train_log)}/{len(valid_log)}/{len(test_log)}; "
          f"prefixes = {len(datasets['train'])}/{len(datasets['valid'])}/{len(datasets['test'])}")
    return EXIT_OK


def _read_split(data_dir: Path, name: str) -> Dataset:
    path = data_dir / f"{name}.csv"
    if not path.exists():
        raise CliError(EXIT_ERROR, f"missing encoded split {path}")
    return Dataset.from_csv(path)


def cmd_train(args, argv) -> int:
    cfg = _train_config(args)
    data_dir = Path(args.data)
    train, valid = _read_split(data_dir, "train"), _read_split(data_dir, "valid")
    model, report = train_full(train, valid, cfg)
    check_sparsity(model, cfg.k_top)
    out = Path(args.out or data_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(serialize(model), encoding="utf-8")
    report.to_csv(out / "train_report.csv")
    _write_manifest(
        out, "train", argv, {"data": str(data_dir)},
        {"model": str(out / "model.json"), "report": str(out / "train_report.csv")},
        {"config": cfg.to_dict(), "seed": cfg.seed},
    )
    print(f"trained m={cfg.m} k_top={cfg.k_top}: complexity {complexity(model)}, "
          f"chosen epochs {report.chosen_epochs}")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    model = _load_model(args.model)
    if args.log:
        if not (args.schema and args.dictionary):
            raise CliError(EXIT_SCHEMA, "--log needs --schema and --dictionary")
        dictionary = FeatureDictionary.load(args.dictionary)
        report = evaluate(model, parse_event_log(args.log, _load_schema(args.schema)), dictionary)
    else:
        if not args.data:
            raise CliError(EXIT_SCHEMA, "give --data DIR or --log/--schema/--dictionary")
        report = evaluate_dataset(model, _read_split(Path(args.data), args.split))
    print(report.to_text())
    if args.json:
        report.save(args.json)
    return EXIT_OK


def cmd_compare(args, argv) -> int:
    cfg = _train_config(args)
    data_dir = Path(args.data)
    comp = compare_with_baseline(
        _read_split(data_dir, "train"), _read_split(data_dir, "valid"), _read_split(data_dir, "test"),
        cfg, dataset=args.dataset,
    )
    out = Path(args.out) if args.out else data_dir / "comparison.csv"
    comp.to_csv(out)
    for r in comp.rows:
        print(f"{r.method:>5}  m={r.m}  k_top={r.k_top:>3}  AUC {r.auc:.4f}  complexity {r.complexity}")
    print(f"relative AUC improvement of MoE over 1-LR: {comp.relative_improvement:+.2%}")
    return EXIT_OK


def cmd_explain(args, argv) -> int:
    model = _load_model(args.model)
    dictionary = FeatureDictionary.load(args.dictionary) if args.dictionary else None
    if args.raw_units and dictionary is None:
        raise CliError(EXIT_SCHEMA, "--raw-units needs --dictionary")
    unit_dict = dictionary if args.raw_units else None
    if dictionary is not None and dictionary.d != model.d:
        raise ShapeError(f"dictionary has {dictionary.d} features, model expects {model.d}")
    experts = explain_mod.explain_experts(model, unit_dict)
    gate = explain_mod.explain_gate(model, unit_dict)
    if args.format == "json":
        text = explain_mod.report_json(model, unit_dict)
    elif args.format == "csv":
        text = explain_mod.to_csv(experts, "expert") + explain_mod.to_csv(gate, "gate").split("\n", 1)[1]
    else:
        text = "## Experts\n\n" + explain_mod.to_markdown(experts) + "\n## Gate\n\n" + \
            explain_mod.to_markdown(gate, "Gate row")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _predict_input(args, model: MoeModel) -> np.ndarray:
    if args.values is not None:
        values = np.array([float(v) for v in args.values.split(",") if v.strip()], dtype=float)
    elif args.encoded:
        data = Dataset.from_csv(args.encoded)
        if not 0 <= args.row < len(data):
            raise CliError(EXIT_ERROR, f"row {args.row} out of range for {len(data)} instances")
        values = data.X[args.row]
    elif args.log:
        if not (args.schema and args.dictionary):
            raise CliError(EXIT_SCHEMA, "--log needs --schema and --dictionary")
        dictionary = FeatureDictionary.load(args.dictionary)
        if dictionary.d != model.d:
            raise ShapeError(f"dictionary has {dictionary.d} features, model expects {model.d}")
        event_log = parse_event_log(args.log, _load_schema(args.schema))
        traces = [t for t in event_log if args.case is None or t.case_id == args.case]
        if not traces:
            raise EmptyLogError("no matching case in the prefix log")
        trace = traces[0]
        length = args.prefix_len or len(trace.events)
        prefix = derive_temporal_features(
            PrefixInstance(trace.case_id, trace.events[:length], trace.label), dictionary.temporal_features
        )
        values = encode_prefix(prefix, dictionary, not args.no_standardize).values
    else:
        raise CliError(EXIT_SCHEMA, "give --values, --encoded or --log")
    if values.shape != (model.d,):
        raise ShapeError(f"instance has {values.size} values, model expects {model.d}")
    return values


def cmd_predict(args, argv) -> int:
    model = _load_model(args.model)
    x = _predict_input(args, model)
    pred = predict(model, x)
    expl = explain_mod.explain_experts(model)[pred.selected_expert]
    print(f"probability      {pred.probability:.6f}")
    print(f"selected expert  {pred.selected_expert}")
    print(f"gate             {', '.join(f'{g:.4f}' for g in pred.gate_distribution)}")
    print(f"bias             {expl.bias:+.6f}")
    for e in expl.entries:
        print(f"  {e.feature:<40} {e.weight:+.6f}  {e.sign}")
    return EXIT_OK


def cmd_toy(args, argv) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pkg = resources.files("lrmoe") / "data"
    for name in ("toy_log.csv", "toy_schema.json"):
        with resources.as_file(pkg / name) as src:
            shutil.copyfile(src, out / name)
    print(f"wrote {out / 'toy_log.csv'} and {out / 'toy_schema.json'}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    doc = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if "argv" not in doc:
        raise CliError(EXIT_SCHEMA, "manifest has no recorded argv")
    return main(doc["argv"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrmoe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="split a CSV log and write encoded datasets")
    p.add_argument("--log", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="train,valid,test fractions (default 0.64,0.16,0.2)")
    p.add_argument("--rare-threshold", type=float, default=0.01)
    p.add_argument("--no-standardize", action="store_true")
    _add_prefix_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train, fine-tune and prune a model")
    p.add_argument("--data", required=True, help="directory written by 'encode'")
    p.add_argument("--out", help="output directory (default: --data)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="AUC and complexity on a test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--split", default="test")
    p.add_argument("--log")
    p.add_argument("--schema")
    p.add_argument("--dictionary")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="MoE against the single-LR baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--dataset", default="dataset", help="label for the CSV rows")
    p.add_argument("--out", help="CSV path (default DATA/comparison.csv)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("explain", help="per-expert and gate weight tables")
    p.add_argument("--model", required=True)
    p.add_argument("--dictionary", help="feature dictionary, enables --raw-units")
    p.add_argument("--raw-units", action="store_true", help="report weights in de-standardized units")
    p.add_argument("--format", choices=("md", "json", "csv"), default="md")
    p.add_argument("--out")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("predict", help="score a single instance")
    p.add_argument("--model", required=True)
    p.add_argument("--values", help="comma-separated encoded feature values")
    p.add_argument("--encoded", help="encoded dataset CSV")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--log", help="raw CSV holding the prefix events")
    p.add_argument("--schema")
    p.add_argument("--dictionary")
    p.add_argument("--case")
    p.add_argument("--prefix-len", type=int)
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("toy", help="write the bundled 20-case toy log and schema")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SchemaError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except EmptyLogError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (LrMoeError, ModelFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

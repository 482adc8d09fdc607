"""Command line entry point: ``mmfusion <command> [--config FILE] [--set key=value ...]``.

Every command reads an optional YAML config; ``--set`` overrides any dotted key
(``--set train.epochs=5``), values parsed as YAML scalars. Keys follow
:class:`~mmfusion.runner.ExperimentMatrix`; ``train`` additionally reads
``modality_config``, ``architecture`` and ``repeat``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .checkpoint import load_model
from .data.pairing import complete_samples
from .data.records import ImageLoader, read_manifest, save_samples
from .data.synthetic import SynthConfig, generate_synthetic
from .data.usecases import load_use_cases
from .evaluation import VARIANTS, evaluate, export_confusion_grid
from .runner import ExperimentMatrix, RunSpec, collect_records, execute_run, prepare_dataset, report, run_matrix


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _scalar(raw: str):
    value = yaml.safe_load(raw)
    if isinstance(value, str):
        # YAML 1.1 reads exponent forms such as 1e-4 as strings
        try:
            return float(value)
        except ValueError:
            pass
    return value


def load_config(path: str | None, overrides: list[str]) -> dict:
    doc = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    for item in overrides:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _set_dotted(doc, key.strip(), _scalar(raw))
    return doc


def _matrix(doc: dict) -> ExperimentMatrix:
    keys = set(ExperimentMatrix.__dataclass_fields__)
    return ExperimentMatrix.from_dict({k: v for k, v in doc.items() if k in keys})


def cmd_synth(args, doc):
    cfg = SynthConfig.from_dict(doc.get("synthetic", doc))
    records = generate_synthetic(cfg, args.out)
    print(f"wrote {len(records)} objects to {Path(args.out) / 'manifest.jsonl'}")


def _classes(args, records):
    if args.use_case:
        return list(load_use_cases(args.use_cases)[args.use_case].classes)
    return sorted({r.class_label for r in records})


def cmd_pair(args, doc):
    records = [r for r in read_manifest(args.manifest) if args.split in (None, r.split)]
    classes = _classes(args, records)
    loader = ImageLoader(Path(args.manifest).parent, size=args.size)
    samples = complete_samples([r for r in records if r.is_complete], args.seed, loader=loader, classes=classes)
    save_samples(args.out, samples)
    print(f"wrote {len(samples)} samples ({len(classes)} classes) to {args.out}")


def cmd_train(args, doc):
    doc = dict(doc)
    mc = doc.pop("modality_config", "complete")
    arch = doc.pop("architecture", "late")
    repeat = int(doc.pop("repeat", 0))
    matrix = _matrix({**doc, "modality_configs": [mc], "architectures": [arch], "seeds": [repeat]})
    spec = RunSpec(matrix.use_cases[0], mc, arch, repeat)
    out = Path(args.out)
    bundle = prepare_dataset(matrix, out, spec.use_case)
    record = execute_run(matrix, spec, bundle, out)
    print(json.dumps({"status": record.status, "best_epoch": record.best_epoch, "best_val_loss": record.best_val_loss,
                      **{v: m["macro_f1"] for v, m in record.metrics.items()}}, indent=2))
    return 0 if record.status == "completed" else 1


def cmd_eval(args, doc):
    model, meta = load_model(args.checkpoint)
    records = [r for r in read_manifest(args.manifest) if r.split == args.split and r.is_complete]
    loader = ImageLoader(Path(args.manifest).parent, size=model.backbone_config.input_height)
    samples = complete_samples(records, args.seed, loader=loader, classes=model.classes)
    variants = VARIANTS if args.variant == "all" else [args.variant]
    out = []
    for variant in variants:
        rep = evaluate(model, samples, variant, model.classes)
        out.append(rep.to_dict())
        if args.grid_dir:
            export_confusion_grid(rep, samples, Path(args.grid_dir) / f"confusion_{variant}.json", seed=args.seed)
    text = "\n".join(json.dumps(r) for r in out) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_matrix(args, doc):
    matrix = _matrix(doc)
    records = run_matrix(matrix, args.out)
    table = report(records, Path(args.out) / "results_table.tsv", load_use_cases(matrix.use_case_file))
    sys.stdout.write(table.to_tsv())
    failed = [r for r in records if r.status != "completed"]
    print(f"{len(records)} runs, {len(failed)} failed", file=sys.stderr)
    return 1 if failed else 0


def cmd_report(args, doc):
    records = collect_records(args.runs)
    table = report(records, args.out, load_use_cases(doc.get("use_case_file")))
    sys.stdout.write(table.to_tsv())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic two-modality dataset"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("pair", help="build complete facade/interior samples from a manifest"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .npz")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--use-case", help="take the class vocabulary from this use case")
    p.add_argument("--use-cases", help="use-case YAML (default: bundled UC1-UC3)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_pair)

    p = common(sub.add_parser("train", help="run one training + evaluation"))
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a manifest split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--variant", default="all", choices=["all", *VARIANTS])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-dir", help="also write confusion grids here")
    p.add_argument("--out", help="write metrics JSON lines here")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("matrix", help="run the full experiment matrix"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrix)

    p = common(sub.add_parser("report", help="summarize finished runs as a results table"))
    p.add_argument("--runs", required=True, help="matrix output directory")
    p.add_argument("--out", help="TSV output path")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    doc = load_config(args.config, args.set)
    return args.func(args, doc) or 0


if __name__ == "__main__":
    sys.exit(main())

"""Experiment matrix: use case x modality configuration x architecture x repeat.

Output layout::

    <output_dir>/
      matrix.json                       resolved matrix
      dataset/                          rendered synthetic data (synthetic source only)
      runs/<uc>/<modality>/<arch>/rep<k>/
          config.json                   resolved run configuration
          history.jsonl                 epoch, train_loss, val_loss, saved
          checkpoint.npz                best-validation weights
          metrics.jsonl                 one MetricsReport per test variant
          confusion_<variant>.json      confusion grid with representative pairs
          record.json                   RunRecord; written last, marks the run done
      results_table.tsv                 Table-style summary (see :func:`report`)
      results_cells.csv                 one row per table cell, with the bold flag
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .backbone import get_config
from .data.pairing import MODALITY_CONFIGS, apply_modality_config, build_missing_pool, complete_samples
from .data.records import SPLITS, ImageLoader, ObjectRecord, Sample, read_manifest
from .data.synthetic import SynthConfig, generate_synthetic
from .data.usecases import UseCase, load_use_cases, synthetic_use_case
from .evaluation import VARIANTS, evaluate, export_confusion_grid, summarize
from .fusion import ARCHITECTURES, build_model
from .seeding import derive_seed
from .train import DESK_EPOCHS, NonFiniteLossError, TrainConfig, train

logger = logging.getLogger(__name__)

CONFIG_LABELS = {
    "complete": "complete",
    "facade_only": "facade only",
    "interior_only": "interior only",
    "complete_plus_missing": "complete+missing",
}
VARIANTS_FOR_CONFIG = {
    "complete": VARIANTS,
    "facade_only": ("test_f",),
    "interior_only": ("test_i",),
    "complete_plus_missing": VARIANTS,
}


@dataclass
class ExperimentMatrix:
    # default: UC1-UC3 for manifests, a single "SYN" use case for synthetic data
    use_cases: tuple[str, ...] | None = None
    modality_configs: tuple[str, ...] = MODALITY_CONFIGS
    architectures: tuple[str, ...] = ARCHITECTURES
    seeds: tuple[int, ...] = (0, 1, 2)
    global_seed: int = 0
    # dataset source: one manifest per use case, or a synthetic config
    manifests: dict[str, str] | None = None
    synthetic: SynthConfig | None = None
    use_case_file: str | None = None
    backbone: str = "desknet"
    pretrained_weights_path: str | None = None
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=DESK_EPOCHS))
    workers: int = 1

    def __post_init__(self):
        if self.use_cases is None:
            self.use_cases = ("SYN",) if self.synthetic is not None else ("UC1", "UC2", "UC3")
        self.use_cases = tuple(self.use_cases)
        self.modality_configs = tuple(self.modality_configs)
        self.architectures = tuple(self.architectures)
        self.seeds = tuple(int(s) for s in self.seeds)
        if isinstance(self.train, Mapping):
            self.train = TrainConfig(**self.train)
        if isinstance(self.synthetic, Mapping):
            self.synthetic = SynthConfig.from_dict(dict(self.synthetic))
        for mc in self.modality_configs:
            if mc not in MODALITY_CONFIGS:
                raise ValueError(f"unknown modality configuration {mc!r}")
        for arch in self.architectures:
            if arch not in ARCHITECTURES:
                raise ValueError(f"unknown architecture {arch!r}")
        if (self.manifests is None) == (self.synthetic is None):
            raise ValueError("give exactly one dataset source: manifests or synthetic")
        if self.synthetic is not None and len(self.use_cases) != 1:
            raise ValueError("a synthetic source provides exactly one use case")
        if self.manifests is not None:
            missing = [uc for uc in self.use_cases if uc not in self.manifests]
            if missing:
                raise ValueError(f"no manifest for use case(s) {missing}")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def configurations(self) -> list[tuple[str, str, str]]:
        return [(uc, mc, a) for uc in self.use_cases for mc in self.modality_configs for a in self.architectures]

    def runs(self) -> list["RunSpec"]:
        return [RunSpec(uc, mc, a, s) for uc, mc, a in self.configurations() for s in self.seeds]

    def run_seed(self, spec: "RunSpec") -> int:
        return derive_seed(self.global_seed, spec.use_case, spec.modality_config, spec.architecture, spec.repeat)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synthetic"] = self.synthetic.to_dict() if self.synthetic else None
        d["train"] = self.train.to_dict()
        for key in ("use_cases", "modality_configs", "architectures", "seeds"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentMatrix":
        return cls(**dict(d))


@dataclass(frozen=True)
class RunSpec:
    use_case: str
    modality_config: str
    architecture: str
    repeat: int

    def relpath(self) -> Path:
        return Path("runs") / self.use_case / self.modality_config / self.architecture / f"rep{self.repeat}"


@dataclass
class RunRecord:
    use_case: str
    modality_config: str
    architecture: str
    repeat: int
    seed: int
    status: str
    classes: list[str] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    metrics: dict[str, dict] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    error: str | None = None
    diagnostic: dict | None = None

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: Mapping) -> "RunRecord":
        return cls(**dict(d))

    def macro_f1(self, variant: str) -> float | None:
        m = self.metrics.get(variant)
        return None if m is None else float(m["macro_f1"])


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetBundle:
    use_case: UseCase
    complete: dict[str, list[Sample]]
    missing_pool: dict[str, list[Sample]]


def _records_by_use_case(matrix: ExperimentMatrix, output_dir: Path) -> dict[str, tuple[UseCase, list[ObjectRecord], Path]]:
    if matrix.synthetic is not None:
        data_dir = output_dir / "dataset"
        cfg_path = data_dir / "synth_config.json"
        manifest = data_dir / "manifest.jsonl"
        if not (manifest.exists() and cfg_path.exists() and json.loads(cfg_path.read_text()) == matrix.synthetic.to_dict()):
            generate_synthetic(matrix.synthetic, data_dir)
        uc = synthetic_use_case(matrix.synthetic.classes, matrix.use_cases[0])
        return {uc.id: (uc, read_manifest(manifest), data_dir)}
    registry = load_use_cases(matrix.use_case_file)
    out = {}
    for uc_id in matrix.use_cases:
        if uc_id not in registry:
            raise ValueError(f"use case {uc_id!r} is not defined")
        manifest = Path(matrix.manifests[uc_id])
        out[uc_id] = (registry[uc_id], read_manifest(manifest), manifest.parent)
    return out


def prepare_dataset(matrix: ExperimentMatrix, output_dir: str | Path, use_case: str) -> DatasetBundle:
    """Complete pairs and balanced missing pools per split for one use case.

    Splits and pairings depend only on ``matrix.global_seed``, never on the run,
    so every repeat sees the same data partitions.
    """
    uc, records, root = _records_by_use_case(matrix, Path(output_dir))[use_case]
    cfg = get_config(matrix.backbone)
    loader = ImageLoader(root, size=cfg.input_height)
    unknown = sorted({r.class_label for r in records} - set(uc.classes))
    if unknown:
        raise ValueError(f"{use_case}: manifest classes {unknown} are not in the vocabulary {list(uc.classes)}")
    complete: dict[str, list[Sample]] = {}
    pools: dict[str, list[Sample]] = {}
    for split in SPLITS:
        split_records = [r for r in records if r.split == split]
        complete[split] = complete_samples(
            [r for r in split_records if r.is_complete], derive_seed(matrix.global_seed, "pairs"), loader=loader, classes=uc.classes
        )
        pools[split] = []
        for cls in uc.classes:
            cls_records = [r for r in split_records if r.class_label == cls]
            if uc.split_counts is not None:
                size = uc.count(split, cls, incomplete=True)
            else:
                size = sum(1 for r in cls_records if not r.is_complete) // 2 * 2
            if size:
                pools[split] += build_missing_pool(
                    cls_records, size, derive_seed(matrix.global_seed, use_case, split, cls), loader=loader, classes=uc.classes
                )
    return DatasetBundle(uc, complete, pools)


# ---------------------------------------------------------------------------
# runs


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    tmp.replace(path)


def load_record(run_dir: str | Path) -> RunRecord | None:
    path = Path(run_dir) / "record.json"
    if not path.exists():
        return None
    return RunRecord.from_json(json.loads(path.read_text(encoding="utf-8")))


def execute_run(matrix: ExperimentMatrix, spec: RunSpec, bundle: DatasetBundle, run_dir: str | Path) -> RunRecord:
    """Train and evaluate one run; failures are captured in the returned record."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    seed = matrix.run_seed(spec)
    classes = list(bundle.use_case.classes)
    record = RunRecord(spec.use_case, spec.modality_config, spec.architecture, spec.repeat, seed, "running", classes)
    cfg = replace(matrix.train, seed=seed)
    backbone_cfg = get_config(matrix.backbone, pretrained_weights_path=matrix.pretrained_weights_path)
    _write_json(
        run_dir / "config.json",
        {
            "run": asdict(spec),
            "seed": seed,
            "train": cfg.to_dict(),
            "backbone": backbone_cfg.to_dict(),
            "classes": classes,
            "matrix": matrix.to_dict(),
        },
    )
    start = time.perf_counter()
    try:
        pools = bundle.missing_pool
        train_set = apply_modality_config(bundle.complete["train"], spec.modality_config, pools["train"], seed=seed)
        val_set = apply_modality_config(bundle.complete["val"], spec.modality_config, pools["val"], seed=seed)
        model = build_model(spec.architecture, backbone_cfg, len(classes), seed=seed, classes=classes)
        result = train(
            model,
            train_set,
            val_set,
            cfg,
            checkpoint_path=run_dir / "checkpoint.npz",
            history_path=run_dir / "history.jsonl",
            checkpoint_meta={"run": asdict(spec), "seed": seed},
        )
        record.best_epoch = result.checkpoint.best_epoch
        record.best_val_loss = result.checkpoint.best_val_loss
        test = bundle.complete["test"]
        with (run_dir / "metrics.jsonl").open("w", encoding="utf-8") as fh:
            for variant in VARIANTS_FOR_CONFIG[spec.modality_config]:
                rep = evaluate(model, test, variant, classes)
                line = {**asdict(spec), "seed": seed, **rep.to_dict()}
                fh.write(json.dumps(line) + "\n")
                record.metrics[variant] = rep.to_dict()
                export_confusion_grid(rep, test, run_dir / f"confusion_{variant}.json", seed=seed)
        record.status = "completed"
    except NonFiniteLossError as exc:
        record.status = "failed"
        record.error = str(exc)
        record.diagnostic = exc.diagnostic
    except Exception as exc:  # a broken run must not take the matrix down
        logger.exception("run %s failed", spec)
        record.status = "failed"
        record.error = f"{type(exc).__name__}: {exc}"
        record.diagnostic = {"traceback": traceback.format_exc()}
    record.wall_clock_s = time.perf_counter() - start
    _write_json(run_dir / "record.json", record.to_json())
    return record


_BUNDLES: dict[tuple, DatasetBundle] = {}


def _bundle(matrix: ExperimentMatrix, output_dir: Path, use_case: str) -> DatasetBundle:
    key = (json.dumps(matrix.to_dict(), sort_keys=True), str(output_dir), use_case)
    if key not in _BUNDLES:
        _BUNDLES.clear()
        _BUNDLES[key] = prepare_dataset(matrix, output_dir, use_case)
    return _BUNDLES[key]


def _worker(matrix_doc: dict, output_dir: str, spec: RunSpec) -> RunRecord:
    matrix = ExperimentMatrix.from_dict(matrix_doc)
    out = Path(output_dir)
    return execute_run(matrix, spec, _bundle(matrix, out, spec.use_case), out / spec.relpath())


def run_matrix(matrix: ExperimentMatrix, output_dir: str | Path) -> list[RunRecord]:
    """Execute every (configuration, repeat) not already completed under ``output_dir``.

    Returns the records of all runs in the matrix, previously completed ones
    included. Failed runs are recorded and retried on the next invocation.
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(output_dir / "matrix.json", matrix.to_dict())
    records: dict[RunSpec, RunRecord] = {}
    pending: list[RunSpec] = []
    for spec in matrix.runs():
        rec = load_record(output_dir / spec.relpath())
        if rec is not None and rec.status == "completed":
            records[spec] = rec
        else:
            pending.append(spec)
    logger.info("%d runs in matrix, %d already complete", len(records) + len(pending), len(records))

    if matrix.workers > 1 and len(pending) > 1:
        # each worker prepares its own dataset; render synthetic data once up front
        _records_by_use_case(matrix, output_dir)
        doc = matrix.to_dict()
        with ProcessPoolExecutor(max_workers=matrix.workers) as pool:
            futures = {spec: pool.submit(_worker, doc, str(output_dir), spec) for spec in pending}
            for spec, fut in futures.items():
                records[spec] = fut.result()
    else:
        for spec in pending:
            bundle = _bundle(matrix, output_dir, spec.use_case)
            logger.info("run %s", spec)
            records[spec] = execute_run(matrix, spec, bundle, output_dir / spec.relpath())
    return [records[s] for s in matrix.runs()]


def collect_records(output_dir: str | Path) -> list[RunRecord]:
    return [
        RunRecord.from_json(json.loads(p.read_text(encoding="utf-8")))
        for p in sorted(Path(output_dir).glob("runs/*/*/*/rep*/record.json"))
    ]


# ---------------------------------------------------------------------------
# reporting


@dataclass
class TableCell:
    use_case: str
    modality_config: str
    architecture: str
    variant: str
    mean: float
    std: float
    n_runs: int
    text: str
    bold: bool = False


@dataclass
class ResultsTable:
    use_cases: list[UseCase]
    rows: list[tuple[str, str]]
    cells: dict[tuple[str, str, str, str], TableCell]

    def cell_text(self, uc: str, mc: str, arch: str, variant: str) -> str:
        cell = self.cells.get((uc, mc, arch, variant))
        return "" if cell is None else cell.text

    def to_rows(self) -> list[list[str]]:
        head1 = ["Modality Configuration", "Multimodal Architecture"]
        head2 = ["", ""]
        for uc in self.use_cases:
            head1 += [uc.header, "", ""]
            head2 += list(VARIANTS)
        lines = [head1, head2]
        previous = None
        for mc, arch in self.rows:
            row = [CONFIG_LABELS[mc] if mc != previous else "", arch]
            previous = mc
            for uc in self.use_cases:
                row += [self.cell_text(uc.id, mc, arch, v) for v in VARIANTS]
            lines.append(row)
        return lines

    def to_tsv(self) -> str:
        return "\n".join("\t".join(r) for r in self.to_rows()) + "\n"

    def cells_csv(self) -> str:
        buf = io.StringIO()
        names = ["use_case", "modality_config", "architecture", "variant", "mean", "std", "n_runs", "text", "bold"]
        w = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        w.writeheader()
        for cell in self.cells.values():
            w.writerow(asdict(cell))
        return buf.getvalue()


def build_table(records: Iterable[RunRecord], use_cases: Mapping[str, UseCase] | None = None) -> ResultsTable:
    """Aggregate completed runs into the (configuration x architecture) by (use case x variant) layout.

    Cells are "mean (std)" of Macro F1 over repeats (population std). A cell
    exists only when the variant applies to the configuration: facade-only
    rows fill test_f alone, interior-only rows test_i alone. Within every
    (use case, variant) column the cells with the highest two-decimal mean
    carry ``bold=True``.
    """
    done = [r for r in records if r.status == "completed"]
    registry = dict(use_cases or {})
    uc_ids = sorted({r.use_case for r in done})
    ucs = []
    for uc_id in uc_ids:
        if uc_id in registry:
            ucs.append(registry[uc_id])
        else:
            classes = next(r.classes for r in done if r.use_case == uc_id)
            ucs.append(UseCase(uc_id, "Synthetic" if uc_id == "SYN" else uc_id, tuple(classes)))
    present = {(r.modality_config, r.architecture) for r in done}
    rows = [(mc, a) for mc in MODALITY_CONFIGS for a in ARCHITECTURES if (mc, a) in present]

    cells: dict[tuple[str, str, str, str], TableCell] = {}
    for uc in ucs:
        for mc, arch in rows:
            group = [r for r in done if (r.use_case, r.modality_config, r.architecture) == (uc.id, mc, arch)]
            for variant in VARIANTS_FOR_CONFIG[mc]:
                vals = [r.macro_f1(variant) for r in group if r.macro_f1(variant) is not None]
                if not vals:
                    continue
                agg = summarize(vals)
                cells[(uc.id, mc, arch, variant)] = TableCell(uc.id, mc, arch, variant, agg.mean, agg.std, agg.n, agg.text)
        for variant in VARIANTS:
            column = [c for k, c in cells.items() if k[0] == uc.id and k[3] == variant]
            if column:
                best = max(round(c.mean, 2) for c in column)
                for c in column:
                    c.bold = round(c.mean, 2) == best
    return ResultsTable(ucs, rows, cells)


def report(
    records: Iterable[RunRecord],
    path: str | Path | None = None,
    use_cases: Mapping[str, UseCase] | None = None,
) -> ResultsTable:
    """Build the results table; with ``path``, write it as TSV plus a per-cell CSV next to it."""
    records = list(records)
    if use_cases is None:
        use_cases = load_use_cases()
    table = build_table(records, use_cases)
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(table.to_tsv(), encoding="utf-8")
        path.with_name(path.stem.replace("_table", "") + "_cells.csv").write_text(table.cells_csv(), encoding="utf-8")
    return table

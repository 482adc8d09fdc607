"""
A small experiment matrix
=========================

The runner trains every (modality configuration, architecture, repeat)
combination and aggregates Macro F1 into a results table. This example keeps
the matrix tiny: two configurations, two architectures, two repeats, five epochs.
Rerunning with the same output directory skips finished runs.
"""

import tempfile

from mmfusion.data import SynthConfig
from mmfusion.runner import ExperimentMatrix, report, run_matrix
from mmfusion.train import TrainConfig

matrix = ExperimentMatrix(
    synthetic=SynthConfig(
        objects_per_class_per_split={"train": 30, "val": 10, "test": 20},
        incomplete_objects_per_class_per_split={"train": 10, "val": 4, "test": 0},
        conflict_fraction=0.25,
    ),
    modality_configs=("complete", "complete_plus_missing"),
    architectures=("early", "late"),
    seeds=(0, 1),
    train=TrainConfig(epochs=5),
)
out = tempfile.mkdtemp()
records = run_matrix(matrix, out)
print(len(records), "runs,", sum(r.status == "completed" for r in records), "completed")

table = report(records, f"{out}/results_table.tsv")
print(table.to_tsv())

"""Staged self-training with optionally calibrated pseudo-labels.

Each stage re-initializes and trains the classifier on the accumulated
training set, optionally fits a calibrator on that same training set (not
the validation set, which stays reserved for early stopping), then promotes
every unlabeled-pool node whose calibrated confidence clears the threshold
to a pseudo-labeled training node. Pseudo-labels are frozen once assigned;
ground-truth training labels are never overwritten.
"""

from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    CaGcnTrainConfig,
    CalibratorOutput,
    apply_temperature,
    cagcn_forward,
    fit_temperature,
    train_cagcn,
)
from .errors import InputError
from .graphcore import normalize_sym
from .nn import TrainConfig, accuracy, gcn_forward, train_classifier
from .seeding import TAG_STAGE, subseed

CALIBRATORS = ("none", "temperature", "cagcn")


@dataclass
class SelfTrainConfig:
    threshold: float = 0.8
    max_stages: int = 10
    calibrator: str = "cagcn"
    cagcn_lr: float = 0.001
    cagcn_epochs: int = 200
    cagcn_weight_decay: float = 5e-3
    cagcn_lambda: float = 0.5
    cagcn_dropout: float = 0.5
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def validate(self, num_classes: int) -> None:
        if self.calibrator not in CALIBRATORS:
            raise InputError(
                f"calibrator must be one of {CALIBRATORS}, got {self.calibrator!r}"
            )
        if not 1.0 / num_classes < self.threshold < 1.0:
            raise InputError(
                f"threshold must lie in (1/{num_classes}, 1), got {self.threshold}"
            )
        if self.max_stages < 1:
            raise InputError(f"max_stages must be at least 1, got {self.max_stages}")


@dataclass
class StageRecord:
    """One self-training stage: sizes before selection, what got added.

    ``train_set_size`` is the number of (true + pseudo) labels the stage
    trained on; ``pseudo_label_precision`` compares the added pseudo-labels
    with ground truth and is diagnostic only.
    """

    stage: int
    added_nodes: int
    pseudo_label_precision: float
    test_accuracy: float
    train_set_size: int


def select_pseudo_labels(output: CalibratorOutput, pool, threshold: float):
    """Pool nodes whose confidence reaches the threshold, with predictions.

    The comparison is >=, so a node sitting exactly at the threshold is
    selected. An empty result is legal and ends the staging loop.
    """
    pool = np.asarray(pool, dtype=bool)
    picked = np.flatnonzero(pool & (output.confidence >= threshold))
    return picked, output.prediction[picked]


def run_self_training(dataset, config: SelfTrainConfig):
    """Run the staged loop; returns (final params, list of StageRecord)."""
    dataset.validate()
    config.validate(dataset.num_classes)

    pool = dataset.unlabeled_pool()
    cur_train = dataset.train_mask.copy()
    cur_labels = dataset.labels.copy()
    ahat = normalize_sym(dataset.graph)

    records = []
    params = None
    for stage in range(1, config.max_stages + 1):
        stage_train = TrainConfig(
            hidden=config.train.hidden,
            learning_rate=config.train.learning_rate,
            weight_decay=config.train.weight_decay,
            dropout=config.train.dropout,
            max_epochs=config.train.max_epochs,
            patience=config.train.patience,
            seed=subseed(config.seed, TAG_STAGE, stage, 1),
        )
        stage_ds = dataset.with_training(cur_train, cur_labels)
        params, _ = train_classifier(stage_ds, stage_train)
        logits = gcn_forward(ahat, dataset.features, params)

        if config.calibrator == "none":
            output = apply_temperature(logits, 1.0)
        elif config.calibrator == "temperature":
            t = fit_temperature(logits[cur_train], cur_labels[cur_train])
            output = apply_temperature(logits, t)
        else:
            cal_config = CaGcnTrainConfig(
                lam=config.cagcn_lambda,
                learning_rate=config.cagcn_lr,
                weight_decay=config.cagcn_weight_decay,
                dropout=config.cagcn_dropout,
                max_epochs=config.cagcn_epochs,
                patience=min(100, config.cagcn_epochs),
                seed=subseed(config.seed, TAG_STAGE, stage, 2),
            )
            cal_params = train_cagcn(dataset.graph, logits, cur_labels, cur_train,
                                     config=cal_config)
            output = cagcn_forward(ahat, logits, cal_params)

        picked, pseudo = select_pseudo_labels(output, pool, config.threshold)
        forbidden = dataset.val_mask | dataset.test_mask | cur_train
        if forbidden[picked].any():
            raise AssertionError("pseudo-label selection touched a reserved node")
        precision = (
            float((pseudo == dataset.labels[picked]).mean()) if picked.size else 0.0
        )
        records.append(
            StageRecord(
                stage=stage,
                added_nodes=int(picked.size),
                pseudo_label_precision=precision,
                test_accuracy=accuracy(output.prediction, dataset.labels, dataset.test_mask),
                train_set_size=int(cur_train.sum()),
            )
        )
        if picked.size == 0:
            break
        cur_train[picked] = True
        cur_labels[picked] = pseudo
        pool[picked] = False
    return params, records


def write_stage_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("stage,added_nodes,pseudo_label_precision,test_accuracy,train_set_size\n")
        for r in records:
            fh.write(
                f"{r.stage},{r.added_nodes},{r.pseudo_label_precision!r},"
                f"{r.test_accuracy!r},{r.train_set_size}\n"
            )

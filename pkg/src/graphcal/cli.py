"""Command-line entry point.

Subcommands: train, calibrate, selftrain, report, gen-sbm. Every run is
reproducible: one --seed flag (plus --seeds for repeated runs at seed,
seed+1, ...) feeds the documented sub-seed rule in :mod:`graphcal.seeding`,
outputs carry no timestamps, and floats are written with repr, so identical
invocations produce bitwise-identical files.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import calibration, datasets, graphcore, metrics, nn, selftrain
from .errors import InputError, NumericalError

THRESHOLD_GRID = (0.8, 0.85, 0.9, 0.95, 0.99)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _add_dataset_flags(p):
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--labels-per-class", type=int, default=20)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--row-normalize", action=argparse.BooleanOptionalAction, default=True)


def _add_classifier_flags(p):
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=100)


def build_parser():
    parser = _Parser(prog="graphcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {}

    p = sub.add_parser("train", help="train the graph classifier")
    _add_dataset_flags(p)
    _add_classifier_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of runs (seed, seed+1, ...)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value defaults file")
    p.set_defaults(func=cmd_train)
    commands["train"] = p

    p = sub.add_parser("calibrate", help="fit a post-hoc calibrator on frozen logits")
    _add_dataset_flags(p)
    p.add_argument("--checkpoint", help="checkpoint directory from 'train'")
    p.add_argument("--logits", help="external logits CSV (node_id,l0,...)")
    p.add_argument("--calibrator", default="cagcn",
                   choices=["none", "temperature", "matrix", "cagcn"])
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--cagcn-lr", type=float, default=0.01)
    p.add_argument("--cagcn-weight-decay", type=float, default=5e-3)
    p.add_argument("--cagcn-epochs", type=int, default=1000)
    p.add_argument("--cagcn-dropout", type=float, default=0.5)
    p.add_argument("--cagcn-hidden", type=int, default=16)
    p.add_argument("--odir-lambda", type=float, default=1e-2)
    p.add_argument("--odir-mu", type=float, default=1e-2)
    p.add_argument("--fit-split", default="val", choices=["val", "train"])
    p.add_argument("--eval-split", default="test", choices=["test", "val", "train", "all"])
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_calibrate)
    commands["calibrate"] = p

    p = sub.add_parser("selftrain", help="staged self-training with pseudo-labels")
    _add_dataset_flags(p)
    _add_classifier_flags(p)
    p.add_argument("--calibrator", default="cagcn", choices=["none", "temperature", "cagcn"])
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--stages", type=int, default=10)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--cagcn-lr", type=float, default=0.001)
    p.add_argument("--cagcn-weight-decay", type=float, default=5e-3)
    p.add_argument("--cagcn-epochs", type=int, default=200)
    p.add_argument("--cagcn-dropout", type=float, default=0.5)
    p.add_argument("--sweep-threshold",
                   help="'lo..hi' filters the 0.8/0.85/0.9/0.95/0.99 grid, or comma list")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_selftrain)
    commands["selftrain"] = p

    p = sub.add_parser("report", help="reliability bins and confidence histogram from a predictions CSV")
    p.add_argument("--predictions", required=True, help="CalibratorOutput CSV")
    p.add_argument("--dataset", help="dataset directory supplying labels")
    p.add_argument("--labels", help="labels.csv supplying labels")
    p.add_argument("--split", default="test", choices=["test", "val", "train", "all"])
    p.add_argument("--labels-per-class", type=int, default=20)
    p.add_argument("--val-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--row-normalize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_report)
    commands["report"] = p

    p = sub.add_parser("gen-sbm", help="write a synthetic block-model dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--labels-per-class", type=int, default=10)
    p.add_argument("--val-size", type=int, default=200)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_sbm)
    commands["gen-sbm"] = p

    return parser, commands


def load_config_file(path):
    """key = value (or key: value) lines; '#' comments; values auto-typed."""
    if not os.path.exists(path):
        raise InputError(f"{path}: config file not found")
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            for sep in ("=", ":"):
                if sep in text:
                    key, _, raw = text.partition(sep)
                    break
            else:
                raise InputError(f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key = key.strip().replace("-", "_")
            raw = raw.strip()
            if raw.lower() in ("true", "false"):
                val = raw.lower() == "true"
            else:
                try:
                    val = int(raw)
                except ValueError:
                    try:
                        val = float(raw)
                    except ValueError:
                        val = raw
            values[key] = val
    return values


def _load_dataset(args):
    return datasets.load_dataset(
        args.dataset,
        row_normalize_features=args.row_normalize,
        labels_per_class=args.labels_per_class,
        val_size=args.val_size,
        test_size=args.test_size,
        split_seed=args.split_seed,
    )


def _train_config(args, seed):
    return nn.TrainConfig(
        hidden=args.hidden,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=seed,
    )


def write_matrix_csv(path, matrix) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# rows={matrix.shape[0]} cols={matrix.shape[1]}\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            rows.append([float(v) for v in text.split(",")])
    if not rows:
        raise InputError(f"{path}: empty matrix file")
    return np.asarray(rows, dtype=np.float64)


def _split_mask(ds, name):
    if name == "test":
        return ds.test_mask
    if name == "val":
        return ds.val_mask
    if name == "train":
        return ds.train_mask
    return np.ones(ds.num_nodes, dtype=bool)


def cmd_train(args):
    ds = _load_dataset(args)
    os.makedirs(args.out, exist_ok=True)
    ahat = graphcore.normalize_sym(ds.graph)
    accs = []
    for i in range(args.seeds):
        seed = args.seed + i
        params, log = nn.train_classifier(ds, _train_config(args, seed))
        probs = nn.softmax_rows(nn.gcn_forward(ahat, ds.features, params))
        preds = probs.argmax(axis=1)
        test_acc = nn.accuracy(preds, ds.labels, ds.test_mask)
        accs.append(test_acc)

        run_dir = os.path.join(args.out, f"seed_{seed}")
        os.makedirs(run_dir, exist_ok=True)
        nn.write_epoch_log(os.path.join(run_dir, "epochs.csv"), log)
        write_matrix_csv(os.path.join(run_dir, "w1.csv"), params.w1)
        write_matrix_csv(os.path.join(run_dir, "w2.csv"), params.w2)
        manifest = {
            "format": "graphcal-checkpoint-v1",
            "feature_dim": ds.feature_dim,
            "hidden": args.hidden,
            "num_classes": ds.num_classes,
            "seed": seed,
            "test_accuracy": test_acc,
            "val_accuracy": nn.accuracy(preds, ds.labels, ds.val_mask),
            "weights": {"w1": "w1.csv", "w2": "w2.csv"},
        }
        with open(os.path.join(run_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")

    with open(os.path.join(args.out, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("seed,test_accuracy\n")
        for i, acc in enumerate(accs):
            fh.write(f"{args.seed + i},{acc!r}\n")
    mean, std = float(np.mean(accs)), float(np.std(accs))
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"runs = {args.seeds}\n")
        fh.write(f"test_accuracy_mean = {mean!r}\n")
        fh.write(f"test_accuracy_std = {std!r}\n")
    print(f"train: test accuracy {mean:.4f} +/- {std:.4f} over {args.seeds} run(s)")
    return 0


def load_checkpoint(ckpt_dir):
    manifest_path = os.path.join(ckpt_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise InputError(f"{manifest_path}: missing checkpoint manifest")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    w1 = read_matrix_csv(os.path.join(ckpt_dir, manifest["weights"]["w1"]))
    w2 = read_matrix_csv(os.path.join(ckpt_dir, manifest["weights"]["w2"]))
    return nn.GcnParams(w1, w2), manifest


def _metrics_dict(report, tv):
    return {
        "accuracy": report.accuracy,
        "brier": report.brier,
        "ece": report.ece,
        "nll": report.nll,
        "total_variation": tv,
    }


def cmd_calibrate(args):
    if bool(args.checkpoint) == bool(args.logits):
        raise InputError("provide exactly one of --checkpoint or --logits")
    ds = _load_dataset(args)
    ahat = graphcore.normalize_sym(ds.graph)
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
        logits = nn.gcn_forward(ahat, ds.features, params)
    else:
        ids, logits = calibration.read_logits_csv(args.logits)
        if logits.shape[0] != ds.num_nodes:
            raise InputError(
                f"{args.logits}: {logits.shape[0]} rows but dataset has {ds.num_nodes} nodes"
            )
        if not np.array_equal(ids, np.arange(ds.num_nodes)):
            raise InputError(f"{args.logits}: node ids must cover 0..{ds.num_nodes - 1}")

    os.makedirs(args.out, exist_ok=True)
    fit_mask = _split_mask(ds, args.fit_split)
    before = calibration.apply_temperature(logits, 1.0)

    if args.calibrator == "none":
        after = before
    elif args.calibrator == "temperature":
        t = calibration.fit_temperature(logits[fit_mask], ds.labels[fit_mask], args.seed)
        after = calibration.apply_temperature(logits, t)
        with open(os.path.join(args.out, "temperature.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"temperature = {t!r}\n")
    elif args.calibrator == "matrix":
        result = calibration.fit_matrix_scaling(
            logits[fit_mask], ds.labels[fit_mask],
            odir_lambda=args.odir_lambda, odir_mu=args.odir_mu, seed=args.seed,
        )
        after = calibration.apply_matrix_scaling(logits, result.w, result.b)
        write_matrix_csv(os.path.join(args.out, "matrix_w.csv"), result.w)
        write_matrix_csv(os.path.join(args.out, "matrix_b.csv"), result.b.reshape(1, -1))
        with open(os.path.join(args.out, "matrix_status.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"converged = {result.converged}\n")
            fh.write(f"iterations = {result.n_iter}\n")
            fh.write(f"final_loss = {result.final_loss!r}\n")
        if not result.converged:
            print("calibrate: matrix scaling did not converge (-)", file=sys.stderr)
    else:
        cal_config = calibration.CaGcnTrainConfig(
            hidden=args.cagcn_hidden,
            lam=args.lam,
            learning_rate=args.cagcn_lr,
            weight_decay=args.cagcn_weight_decay,
            dropout=args.cagcn_dropout,
            max_epochs=args.cagcn_epochs,
            patience=min(100, args.cagcn_epochs),
            seed=args.seed,
        )
        cal_params = calibration.train_cagcn(
            ds.graph, logits, ds.labels, fit_mask, config=cal_config
        )
        after = calibration.cagcn_forward(ahat, logits, cal_params)
        write_matrix_csv(os.path.join(args.out, "cagcn_w1.csv"), cal_params.w1)
        write_matrix_csv(os.path.join(args.out, "cagcn_w2.csv"), cal_params.w2)

    calibration.write_calibrator_csv(os.path.join(args.out, "before.csv"), before)
    calibration.write_calibrator_csv(os.path.join(args.out, "calibrated.csv"), after)

    eval_mask = _split_mask(ds, args.eval_split)
    for tag, output in (("before", before), ("after", after)):
        report = metrics.reliability_report(
            output.probs[eval_mask], ds.labels[eval_mask], args.bins
        )
        metrics.write_reliability_csv(
            os.path.join(args.out, f"reliability_{tag}.csv"), report
        )
        tv = metrics.total_variation(ds.graph, output.confidence)
        metrics.write_metrics(os.path.join(args.out, f"metrics_{tag}"), _metrics_dict(report, tv))
        print(
            f"calibrate[{tag}]: acc {report.accuracy:.4f} ece {report.ece:.4f} "
            f"nll {report.nll:.4f} brier {report.brier:.4f} tv {tv:.3f}"
        )
    return 0


def parse_threshold_sweep(text):
    if "," in text:
        try:
            values = tuple(float(v) for v in text.split(","))
        except ValueError:
            raise InputError(f"bad threshold list {text!r}")
    else:
        lo, sep, hi = text.partition("..")
        if not sep:
            raise InputError(f"--sweep-threshold expects 'lo..hi' or a comma list, got {text!r}")
        try:
            lo, hi = float(lo), float(hi)
        except ValueError:
            raise InputError(f"bad threshold range {text!r}")
        values = tuple(t for t in THRESHOLD_GRID if lo <= t <= hi)
    if not values:
        raise InputError(f"threshold sweep {text!r} selects no values")
    return values


def _selftrain_config(args, seed, threshold):
    return selftrain.SelfTrainConfig(
        threshold=threshold,
        max_stages=args.stages,
        calibrator=args.calibrator,
        cagcn_lr=args.cagcn_lr,
        cagcn_epochs=args.cagcn_epochs,
        cagcn_weight_decay=args.cagcn_weight_decay,
        cagcn_lambda=args.lam,
        cagcn_dropout=args.cagcn_dropout,
        train=_train_config(args, seed),
        seed=seed,
    )


def cmd_selftrain(args):
    ds = _load_dataset(args)
    os.makedirs(args.out, exist_ok=True)

    if args.sweep_threshold:
        thresholds = parse_threshold_sweep(args.sweep_threshold)
        rows = []
        for th in thresholds:
            accs = []
            for i in range(args.seeds):
                seed = args.seed + i
                _, records = selftrain.run_self_training(ds, _selftrain_config(args, seed, th))
                accs.append(records[-1].test_accuracy)
            rows.append((th, float(np.mean(accs)), float(np.std(accs))))
        with open(os.path.join(args.out, "sweep.csv"), "w", encoding="utf-8") as fh:
            fh.write("threshold,test_accuracy_mean,test_accuracy_std\n")
            for th, mean, std in rows:
                fh.write(f"{th!r},{mean!r},{std!r}\n")
        for th, mean, std in rows:
            print(f"selftrain: th={th} accuracy {mean:.4f} +/- {std:.4f}")
        return 0

    accs = []
    for i in range(args.seeds):
        seed = args.seed + i
        _, records = selftrain.run_self_training(ds, _selftrain_config(args, seed, args.threshold))
        selftrain.write_stage_records(
            os.path.join(args.out, f"stages_seed_{seed}.csv"), records
        )
        accs.append(records[-1].test_accuracy)
    with open(os.path.join(args.out, "summary.csv"), "w", encoding="utf-8") as fh:
        fh.write("seed,test_accuracy\n")
        for i, acc in enumerate(accs):
            fh.write(f"{args.seed + i},{acc!r}\n")
    mean, std = float(np.mean(accs)), float(np.std(accs))
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"runs = {args.seeds}\n")
        fh.write(f"calibrator = {args.calibrator}\n")
        fh.write(f"test_accuracy_mean = {mean!r}\n")
        fh.write(f"test_accuracy_std = {std!r}\n")
    print(
        f"selftrain[{args.calibrator}]: test accuracy {mean:.4f} +/- {std:.4f} "
        f"over {args.seeds} run(s)"
    )
    return 0


def cmd_report(args):
    if bool(args.dataset) == bool(args.labels):
        raise InputError("provide exactly one of --dataset or --labels")
    if not os.path.exists(args.predictions):
        raise InputError(f"{args.predictions}: predictions file not found")
    with open(args.predictions, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if header[:2] != ["node_id", "l0"]:
        raise InputError(f"{args.predictions}:1: not a calibrator output CSV")
    k = sum(1 for h in header if h.startswith("l") and h[1:].isdigit())
    ids, table = _read_prediction_table(args.predictions, k)
    logits = table[:, :k]
    probs = nn.softmax_rows(logits)

    if args.dataset:
        ds = datasets.load_dataset(
            args.dataset,
            row_normalize_features=args.row_normalize,
            labels_per_class=args.labels_per_class,
            val_size=args.val_size,
            test_size=args.test_size,
            split_seed=args.split_seed,
        )
        mask = _split_mask(ds, args.split)
        keep = mask[ids]
        probs_eval = probs[keep]
        labels_eval = ds.labels[ids[keep]]
    else:
        label_map = _read_label_file(args.labels)
        try:
            labels_eval = np.asarray([label_map[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise InputError(f"{args.labels}: no label for node {exc.args[0]}")
        probs_eval = probs

    os.makedirs(args.out, exist_ok=True)
    report = metrics.reliability_report(probs_eval, labels_eval, args.bins)
    metrics.write_reliability_csv(os.path.join(args.out, "reliability.csv"), report)
    confidence = probs_eval.max(axis=1)
    correct = probs_eval.argmax(axis=1) == labels_eval
    hits, misses = metrics.confidence_histogram(confidence, correct, args.bins)
    metrics.write_histogram_csv(
        os.path.join(args.out, "histogram.csv"), report.bin_edges, hits, misses
    )
    metrics.write_metrics(
        os.path.join(args.out, "metrics"),
        {"accuracy": report.accuracy, "brier": report.brier,
         "ece": report.ece, "nll": report.nll},
    )
    print(f"report: acc {report.accuracy:.4f} ece {report.ece:.4f} over {len(labels_eval)} nodes")
    return 0


def _read_prediction_table(path, k):
    ids, rows = [], []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for lineno, line in enumerate(fh, start=2):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) < k + 1:
                raise InputError(f"{path}:{lineno}: expected at least {k + 1} fields")
            try:
                ids.append(int(parts[0]))
                rows.append([float(v) for v in parts[1 : k + 1]])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed row {text!r}")
    return np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.float64)


def _read_label_file(path):
    if not os.path.exists(path):
        raise InputError(f"{path}: labels file not found")
    label_map = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.replace(",", " ").split()
            if len(parts) != 2:
                raise InputError(f"{path}:{lineno}: expected 'node_id,class', got {text!r}")
            try:
                label_map[int(parts[0])] = int(parts[1])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed label row {text!r}")
    return label_map


def cmd_gen_sbm(args):
    ds = graphcore.generate_sbm(
        num_nodes=args.nodes,
        num_classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        feature_noise=args.noise,
        seed=args.seed,
        labels_per_class=args.labels_per_class,
        val_size=args.val_size,
        test_size=args.test_size,
    )
    datasets.save_dataset(args.out, ds)
    print(
        f"gen-sbm: wrote {ds.num_nodes} nodes, {ds.graph.nnz // 2} undirected edges, "
        f"{ds.num_classes} classes to {args.out}"
    )
    return 0


def main(argv=None):
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        parser, commands = build_parser()
        if "--config" in argv:
            cfg_path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
            if cfg_path is None:
                raise InputError("--config requires a file path")
            values = load_config_file(cfg_path)
            target = argv[0] if argv and not argv[0].startswith("-") else None
            if target in commands:
                known = {
                    a.dest for a in commands[target]._actions  # noqa: SLF001
                }
                unknown = set(values) - known
                if unknown:
                    raise InputError(
                        f"{cfg_path}: unknown config keys for '{target}': {sorted(unknown)}"
                    )
                commands[target].set_defaults(**values)
        args = parser.parse_args(argv)
        return args.func(args)
    except InputError as exc:
        print(f"graphcal: input error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"graphcal: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

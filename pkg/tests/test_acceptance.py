"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line per
criterion. Criteria 5-7 evaluate the Cora citation graph and require the
converted dataset under data/cora (or $GRAPHCAL_CORA_DIR); they skip with an
explicit message when the files are not provisioned. Criterion 8 falls back
to its synthetic-graph substitute in that case.
"""

import hashlib
import os
import time

import numpy as np
import pytest

from graphcal import calibration, cli, datasets, graphcore, metrics, nn, selftrain

import oracles
from test_calibration import make_calibrated_instance

CORA_DIR = os.environ.get(
    "GRAPHCAL_CORA_DIR",
    os.path.join(os.path.dirname(__file__), "..", "data", "cora"),
)


def cora_available():
    return all(
        os.path.exists(os.path.join(CORA_DIR, name))
        for name in ("edges.txt", "features.csv", "labels.csv")
    )


def load_cora():
    return datasets.load_dataset(
        CORA_DIR, row_normalize_features=True,
        labels_per_class=20, val_size=500, test_size=1000, split_seed=0,
    )


@pytest.fixture(scope="module")
def cora_runs():
    """Train Cora over 10 seeds once; criteria 5-7 share the results."""
    if not cora_available():
        pytest.skip(f"Cora dataset not provisioned under {CORA_DIR}")
    ds = load_cora()
    ahat = graphcore.normalize_sym(ds.graph)
    runs = []
    for seed in range(10):
        params, _ = nn.train_classifier(ds, nn.TrainConfig(seed=seed))
        logits = nn.gcn_forward(ahat, ds.features, params)
        runs.append(logits)
    return ds, ahat, runs


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(2024)
    start = time.time()
    n, f, h, k = 8, 5, 4, 3
    worst_cls = worst_cal = 0.0
    instances = 0
    while instances < 20:
        g = graphcore.build_csr(rng.integers(0, n, size=(2 * n, 2)), n)
        ahat = graphcore.normalize_sym(g)
        x = rng.standard_normal((n, f))
        labels = rng.integers(0, k, size=n)
        mask = rng.random(n) < 0.7
        mask[0] = True

        cls_params = nn.GcnParams(
            0.5 * rng.standard_normal((f, h)), 0.5 * rng.standard_normal((h, k))
        )
        cal_params = calibration.CaGcnParams(
            0.5 * rng.standard_normal((k, h)), 0.5 * rng.standard_normal((h, 1)),
            lam=0.5, weight_decay=5e-3,
        )
        logits = rng.standard_normal((n, k)) * 2.0

        # the finite-difference oracle needs local smoothness: stay away
        # from relu kinks and argmax ties (resample deterministically)
        z1_cls = nn.spmm(ahat, x @ cls_params.w1)
        z1_cal = nn.spmm(ahat, logits @ cal_params.w1)
        raw, _ = calibration._cagcn_raw(ahat, logits, cal_params, None)
        probs = nn.softmax_rows(logits / calibration.softplus(raw)[:, None])
        top2 = np.partition(probs, -2, axis=1)
        if (
            np.abs(z1_cls).min() < 1e-3
            or np.abs(z1_cal).min() < 1e-3
            or (top2[:, -1] - top2[:, -2]).min() < 1e-3
        ):
            continue
        instances += 1

        def cls_objective():
            loss, _ = nn.gcn_backward(ahat, x, cls_params, labels, mask, 5e-4)
            return loss

        _, analytic = nn.gcn_backward(ahat, x, cls_params, labels, mask, 5e-4)
        numeric = oracles.finite_difference_grads(cls_objective, [cls_params.w1, cls_params.w2])
        worst_cls = max(
            worst_cls, oracles.max_relative_error([analytic.w1, analytic.w2], numeric)
        )

        def cal_objective():
            loss, _, _ = calibration.cagcn_backward(ahat, logits, labels, mask, cal_params)
            return loss

        _, gw1, gw2 = calibration.cagcn_backward(ahat, logits, labels, mask, cal_params)
        numeric = oracles.finite_difference_grads(cal_objective, [cal_params.w1, cal_params.w2])
        worst_cal = max(worst_cal, oracles.max_relative_error([gw1, gw2], numeric))

    elapsed = time.time() - start
    assert worst_cls < 1e-5, f"classifier gradient error {worst_cls}"
    assert worst_cal < 1e-5, f"calibration gradient error {worst_cal}"
    assert elapsed < 10.0, f"criterion 1 took {elapsed:.1f}s"
    print(
        f"\n[criterion 1] PASS gradients: classifier {worst_cls:.2e}, "
        f"calibrator {worst_cal:.2e} over 20 instances in {elapsed:.1f}s"
    )


def test_criterion_2_metric_oracles():
    rng = np.random.default_rng(7)
    start = time.time()
    for _ in range(100):
        n = int(rng.integers(1, 1001))
        m = int(rng.integers(1, 51))
        conf = rng.random(n)
        edge_case = rng.random(n) < 0.2
        conf[edge_case] = rng.integers(0, m + 1, size=int(edge_case.sum())) / m
        correct = rng.random(n) < 0.6
        assert metrics.ece(conf, correct, m) == oracles.ece_bruteforce(conf, correct, m)

        k = int(rng.integers(2, 9))
        probs = nn.softmax_rows(rng.standard_normal((n, k)) * 2)
        labels = rng.integers(0, k, size=n)
        assert metrics.brier(probs, labels) == oracles.brier_bruteforce(probs, labels)

        g = graphcore.build_csr(
            rng.integers(0, min(n, 60), size=(int(rng.integers(0, 150)), 2)), min(n, 60)
        )
        conf_g = rng.random(g.num_nodes)
        assert metrics.total_variation(g, conf_g) == oracles.total_variation_bruteforce(
            g, conf_g
        )
    elapsed = time.time() - start
    assert elapsed < 10.0, f"criterion 2 took {elapsed:.1f}s"
    print(f"\n[criterion 2] PASS metric oracles exact on 100 instances in {elapsed:.1f}s")


def test_criterion_3_accuracy_preservation():
    rng = np.random.default_rng(31)
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        k = int(rng.integers(2, 9))
        logits = rng.standard_normal((n, k)) * 4
        temps = rng.uniform(1e-2, 1e2, size=n)
        out = calibration.CalibratorOutput.from_temperatures(logits, temps)
        assert np.array_equal(out.prediction, logits.argmax(axis=1))

    # end to end: test accuracy identical before and after calibration,
    # on an instance hard enough that the classifier actually errs
    ds = graphcore.generate_sbm(
        num_nodes=200, num_classes=3, p_in=0.15, p_out=0.04,
        feature_dim=8, feature_noise=3.0, seed=11,
        labels_per_class=5, val_size=40, test_size=60,
    )
    params, _ = nn.train_classifier(ds, nn.TrainConfig(hidden=8, seed=0))
    ahat = graphcore.normalize_sym(ds.graph)
    logits = nn.gcn_forward(ahat, ds.features, params)
    acc_before = nn.accuracy(logits.argmax(axis=1), ds.labels, ds.test_mask)
    cal_params = calibration.train_cagcn(
        ds.graph, logits, ds.labels, ds.val_mask,
        config=calibration.CaGcnTrainConfig(max_epochs=200, patience=100, seed=0),
    )
    out = calibration.cagcn_forward(ahat, logits, cal_params)
    acc_after = nn.accuracy(out.prediction, ds.labels, ds.test_mask)
    assert acc_before == acc_after
    print(
        f"\n[criterion 3] PASS argmax preserved on 1000 random matrices; "
        f"end-to-end accuracy {acc_before:.4f} unchanged by calibration"
    )


def test_criterion_4_confidence_traversal():
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 200:
        k = int(rng.integers(2, 11))
        row = rng.uniform(-0.75, 0.75, size=k)
        top2 = np.sort(row)[-2:]
        if top2[1] - top2[0] < 0.05:
            continue
        checked += 1
        hot = calibration.apply_temperature(row.reshape(1, -1), 1e-3).confidence[0]
        cold = calibration.apply_temperature(row.reshape(1, -1), 1e3).confidence[0]
        assert hot >= 0.999, f"confidence {hot} at t=1e-3 (K={k})"
        assert abs(cold - 1.0 / k) <= 1e-3, f"confidence {cold} at t=1e3 (K={k})"
        t = calibration.solve_temperature(row, 0.9)
        conf = calibration.apply_temperature(row.reshape(1, -1), t).confidence[0]
        assert abs(conf - 0.9) <= 1e-6
    print("\n[criterion 4] PASS traversal limits and 1e-6 bracketing on 200 rows")


def test_criterion_5_cora_underconfidence(cora_runs):
    ds, ahat, runs = cora_runs
    accs, eces, under = [], [], []
    for logits in runs:
        probs = nn.softmax_rows(logits)
        test_probs = probs[ds.test_mask]
        test_labels = ds.labels[ds.test_mask]
        accs.append(nn.accuracy(probs.argmax(axis=1), ds.labels, ds.test_mask))
        report = metrics.reliability_report(test_probs, test_labels, 20)
        eces.append(report.ece)
        populated = report.bin_count > 0
        under.append(
            (report.bin_acc[populated] > report.bin_conf[populated]).mean() > 0.5
        )
    mean_acc, mean_ece = float(np.mean(accs)), float(np.mean(eces))
    assert 0.78 <= mean_acc <= 0.84, f"mean accuracy {mean_acc}"
    assert 0.09 <= mean_ece <= 0.18, f"mean ECE {mean_ece}"
    assert sum(under) > len(under) / 2, "under-confidence direction not reproduced"
    print(f"\n[criterion 5] PASS Cora: accuracy {mean_acc:.4f}, ECE {mean_ece:.4f}")


def test_criterion_6_cora_calibration_gain(cora_runs):
    ds, ahat, runs = cora_runs
    ece_un, ece_cag, ece_ts, nll_pairs, brier_pairs = [], [], [], [], []
    for seed, logits in enumerate(runs):
        test_labels = ds.labels[ds.test_mask]
        probs_un = nn.softmax_rows(logits)[ds.test_mask]
        rep_un = metrics.reliability_report(probs_un, test_labels, 20)
        ece_un.append(rep_un.ece)

        cal = calibration.train_cagcn(
            ds.graph, logits, ds.labels, ds.val_mask,
            config=calibration.CaGcnTrainConfig(seed=seed),
        )
        out = calibration.cagcn_forward(ahat, logits, cal)
        rep_cag = metrics.reliability_report(out.probs[ds.test_mask], test_labels, 20)
        ece_cag.append(rep_cag.ece)
        nll_pairs.append((rep_un.nll, rep_cag.nll))
        brier_pairs.append((rep_un.brier, rep_cag.brier))

        t = calibration.fit_temperature(logits[ds.val_mask], ds.labels[ds.val_mask])
        probs_ts = calibration.apply_temperature(logits, t).probs[ds.test_mask]
        ece_ts.append(metrics.reliability_report(probs_ts, test_labels, 20).ece)

    mean_un, mean_cag, mean_ts = map(float, map(np.mean, (ece_un, ece_cag, ece_ts)))
    assert mean_cag <= 0.07, f"CaGCN ECE {mean_cag}"
    assert mean_cag <= 0.6 * mean_un, f"CaGCN ECE {mean_cag} vs uncalibrated {mean_un}"
    assert 0.03 <= mean_ts <= 0.08, f"TS ECE {mean_ts}"
    assert np.mean([b for _, b in nll_pairs]) <= np.mean([a for a, _ in nll_pairs])
    assert np.mean([b for _, b in brier_pairs]) <= np.mean([a for a, _ in brier_pairs])
    print(
        f"\n[criterion 6] PASS Cora ECE: uncalibrated {mean_un:.4f} -> "
        f"CaGCN {mean_cag:.4f}, TS {mean_ts:.4f}"
    )


def test_criterion_7_cora_total_variation(cora_runs):
    ds, ahat, runs = cora_runs
    reductions = []
    for seed, logits in enumerate(runs):
        before = metrics.total_variation(ds.graph, nn.softmax_rows(logits).max(axis=1))
        cal = calibration.train_cagcn(
            ds.graph, logits, ds.labels, ds.val_mask,
            config=calibration.CaGcnTrainConfig(seed=seed),
        )
        out = calibration.cagcn_forward(ahat, logits, cal)
        after = metrics.total_variation(ds.graph, out.confidence)
        assert after < before, f"total variation did not decrease ({before} -> {after})"
        reductions.append(1.0 - after / before)
    mean_red = float(np.mean(reductions))
    assert mean_red >= 0.10, f"mean relative reduction {mean_red}"
    print(f"\n[criterion 7] PASS Cora total variation reduced by {mean_red:.1%}")


def test_criterion_8_self_training_gain():
    start = time.time()
    if cora_available():
        ds = load_cora()
        seeds = range(10)
        threshold, stages = 0.8, 4
        margin = 0.005
    else:
        ds = graphcore.generate_sbm(
            num_nodes=1500, num_classes=3, p_in=0.05, p_out=0.005,
            feature_dim=16, feature_noise=10.0, seed=0,
            labels_per_class=10, val_size=200, test_size=500,
        )
        seeds = range(5)
        threshold, stages = 0.8, 4
        margin = 0.0

    plain_accs, st_accs = [], []
    ahat = graphcore.normalize_sym(ds.graph)
    for seed in seeds:
        params, _ = nn.train_classifier(ds, nn.TrainConfig(seed=seed))
        preds = nn.gcn_forward(ahat, ds.features, params).argmax(axis=1)
        plain_accs.append(nn.accuracy(preds, ds.labels, ds.test_mask))

        config = selftrain.SelfTrainConfig(
            threshold=threshold, max_stages=stages, calibrator="cagcn",
            train=nn.TrainConfig(seed=seed), seed=seed,
        )
        _, records = selftrain.run_self_training(ds, config)
        st_accs.append(records[-1].test_accuracy)

    plain, boosted = float(np.mean(plain_accs)), float(np.mean(st_accs))
    elapsed = time.time() - start
    assert elapsed < 1200.0, f"criterion 8 took {elapsed:.0f}s"
    assert boosted >= plain + margin, (
        f"self-training gain not reproduced: plain {plain:.4f}, CaGCN-st {boosted:.4f}"
    )
    source = "Cora" if cora_available() else "SBM substitute"
    print(
        f"\n[criterion 8] PASS {source}: plain {plain:.4f} -> CaGCN-st {boosted:.4f} "
        f"in {elapsed:.0f}s"
    )


def _digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_criterion_9_cli_determinism(tmp_path):
    data = tmp_path / "data"
    assert cli.main([
        "gen-sbm", "--nodes", "80", "--classes", "3", "--p-in", "0.3", "--p-out", "0.03",
        "--labels-per-class", "4", "--val-size", "12", "--test-size", "20",
        "--seed", "2", "--out", str(data),
    ]) == 0
    ds_flags = ["--labels-per-class", "4", "--val-size", "12", "--test-size", "20"]
    fast = ["--hidden", "8", "--epochs", "30", "--patience", "30"]

    chains = {
        "gen-sbm": ["gen-sbm", "--nodes", "50", "--classes", "2", "--p-in", "0.4",
                    "--p-out", "0.05", "--labels-per-class", "3", "--val-size", "8",
                    "--test-size", "10", "--seed", "4"],
        "train": ["train", "--dataset", str(data), *ds_flags, *fast, "--seeds", "2"],
        "selftrain": ["selftrain", "--dataset", str(data), *ds_flags, *fast,
                      "--calibrator", "cagcn", "--cagcn-epochs", "40",
                      "--threshold", "0.8", "--stages", "2", "--seeds", "1"],
    }
    for name, argv in chains.items():
        a, b = tmp_path / f"{name}_a", tmp_path / f"{name}_b"
        assert cli.main(argv + ["--out", str(a)]) == 0
        assert cli.main(argv + ["--out", str(b)]) == 0
        assert _digest(a) == _digest(b), f"{name} outputs differ between runs"

    ckpt = tmp_path / "train_a" / "seed_0"
    cal_argv = ["calibrate", "--dataset", str(data), *ds_flags,
                "--checkpoint", str(ckpt), "--calibrator", "cagcn",
                "--cagcn-epochs", "40"]
    a, b = tmp_path / "cal_a", tmp_path / "cal_b"
    assert cli.main(cal_argv + ["--out", str(a)]) == 0
    assert cli.main(cal_argv + ["--out", str(b)]) == 0
    assert _digest(a) == _digest(b), "calibrate outputs differ between runs"

    rep_argv = ["report", "--predictions", str(a / "calibrated.csv"),
                "--dataset", str(data), *ds_flags]
    ra, rb = tmp_path / "rep_a", tmp_path / "rep_b"
    assert cli.main(rep_argv + ["--out", str(ra)]) == 0
    assert cli.main(rep_argv + ["--out", str(rb)]) == 0
    assert _digest(ra) == _digest(rb), "report outputs differ between runs"
    print("\n[criterion 9] PASS all five subcommands bitwise deterministic")

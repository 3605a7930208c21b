"""Post-hoc confidence calibrators.

Three families:

* scalar temperature scaling (:func:`fit_temperature` / :func:`apply_temperature`),
* matrix scaling with off-diagonal regularization (:func:`fit_matrix_scaling`),
* a per-node temperature network (:func:`train_cagcn` / :func:`cagcn_forward`)
  that runs a second two-layer GCN over the frozen classifier logits and emits
  one softplus-positive temperature per node.

Dividing a logit row by a positive temperature never reorders it, so the
temperature family preserves every prediction; matrix scaling does not.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .graphcore import SparseGraph, normalize_sym
from .nn import (
    AdamState,
    adam_step,
    glorot,
    make_dropout_masks,
    nll_loss,
    softmax_rows,
    spmm,
)
from .seeding import TAG_CAL_DROPOUT, TAG_CAL_INIT, substream


@dataclass(frozen=True)
class CalibratorOutput:
    """Calibrated logits plus everything derived from them.

    ``temperatures`` holds the per-node divisor for temperature-family
    calibrators and is all ones where the notion does not apply.
    """

    calibrated_logits: np.ndarray
    temperatures: np.ndarray
    probs: np.ndarray
    confidence: np.ndarray
    prediction: np.ndarray

    @classmethod
    def from_calibrated(cls, calibrated_logits, temperatures) -> "CalibratorOutput":
        probs = softmax_rows(calibrated_logits)
        return cls(
            calibrated_logits=calibrated_logits,
            temperatures=np.asarray(temperatures, dtype=np.float64),
            probs=probs,
            confidence=probs.max(axis=1),
            prediction=probs.argmax(axis=1),
        )

    @classmethod
    def from_temperatures(cls, logits, temperatures) -> "CalibratorOutput":
        temperatures = np.asarray(temperatures, dtype=np.float64)
        if (temperatures <= 0).any():
            raise InputError("temperatures must be strictly positive")
        return cls.from_calibrated(logits / temperatures[:, None], temperatures)


def _mean_nll_of_scaled(logits, labels, t):
    probs = softmax_rows(logits / t)
    picked = np.maximum(probs[np.arange(len(labels)), labels], 1e-300)
    return float(-np.log(picked).mean())


def _golden_section(f, lo, hi, tol=1e-7):
    """Minimize a unimodal scalar function on [lo, hi]."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


T_MIN, T_MAX = 0.05, 20.0


def fit_temperature(logits_val, labels_val, seed: int = 0,
                    learning_rate: float = 0.01, max_iter: int = 50) -> float:
    """Scalar temperature minimizing validation NLL of softmax(logits / t).

    Runs plain gradient descent on t (the reference recipe: lr 0.01, at most
    50 steps) and a golden-section search over [0.05, 20] as fallback; the
    candidate with the lower NLL wins. Deterministic; ``seed`` is accepted
    for interface symmetry and unused.
    """
    logits_val = np.asarray(logits_val, dtype=np.float64)
    labels_val = np.asarray(labels_val, dtype=np.int64)
    if logits_val.size == 0 or labels_val.size == 0:
        raise InputError("fit_temperature needs nonempty validation logits and labels")

    n = logits_val.shape[0]
    idx = np.arange(n)
    t = 1.0
    for _ in range(max_iter):
        probs = softmax_rows(logits_val / t)
        expected = (probs * logits_val).sum(axis=1)
        grad = float((logits_val[idx, labels_val] - expected).mean()) / (t * t)
        t = min(max(t - learning_rate * grad, T_MIN), T_MAX)

    t_golden = _golden_section(
        lambda s: _mean_nll_of_scaled(logits_val, labels_val, s), T_MIN, T_MAX
    )
    candidates = [t, t_golden]
    losses = [_mean_nll_of_scaled(logits_val, labels_val, c) for c in candidates]
    return float(candidates[int(np.argmin(losses))])


def apply_temperature(logits, t: float) -> CalibratorOutput:
    """Divide every logit row by the scalar t > 0."""
    if not t > 0:
        raise InputError(f"temperature must be positive, got {t}")
    logits = np.asarray(logits, dtype=np.float64)
    return CalibratorOutput.from_temperatures(logits, np.full(logits.shape[0], float(t)))


def solve_temperature(logits_row, target: float, tol: float = 1e-6,
                      max_iter: int = 200) -> float:
    """Bisection for the t whose scaled confidence hits ``target``.

    Confidence is strictly decreasing in t for a row with distinct entries,
    from 1 (t -> 0) down to 1/K (t -> inf); targets inside (1/K, 1) are
    reachable.
    """
    row = np.asarray(logits_row, dtype=np.float64).reshape(1, -1)
    k = row.shape[1]
    if not (1.0 / k < target < 1.0):
        raise InputError(f"target confidence {target} outside (1/{k}, 1)")

    def conf(t):
        return float(softmax_rows(row / t).max())

    lo, hi = 1e-6, 1.0
    while conf(hi) > target and hi < 1e9:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        c = conf(mid)
        if abs(c - target) <= tol:
            return mid
        if c > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class MatrixScalingResult:
    """Affine map logits -> logits @ w.T + b, plus convergence status."""

    w: np.ndarray
    b: np.ndarray
    converged: bool
    n_iter: int
    final_loss: float


def fit_matrix_scaling(logits_val, labels_val, odir_lambda: float = 1e-2,
                       odir_mu: float = 1e-2, seed: int = 0,
                       learning_rate: float = 0.01, max_iter: int = 400) -> MatrixScalingResult:
    """Matrix scaling with off-diagonal regularization (ODIR).

    Full-batch gradient descent on mean validation NLL of softmax(W v + b)
    plus odir_lambda * sum_{j!=k} W_jk^2 / (K(K-1)) + odir_mu * |b|^2 / K,
    from W = I, b = 0. The best iterate is returned; fifty consecutive loss
    increases mark the run as not converged.
    """
    logits_val = np.asarray(logits_val, dtype=np.float64)
    labels_val = np.asarray(labels_val, dtype=np.int64)
    if logits_val.size == 0 or labels_val.size == 0:
        raise InputError("fit_matrix_scaling needs nonempty validation logits and labels")
    n, k = logits_val.shape
    if k < 2:
        raise InputError("matrix scaling needs at least two classes")

    off_diag = ~np.eye(k, dtype=bool)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels_val] = 1.0

    def objective(w, b):
        probs = softmax_rows(logits_val @ w.T + b)
        picked = np.maximum(probs[np.arange(n), labels_val], 1e-300)
        nll = float(-np.log(picked).mean())
        pen = odir_lambda * float((w[off_diag] ** 2).sum()) / (k * (k - 1))
        pen += odir_mu * float((b ** 2).sum()) / k
        return nll + pen

    w = np.eye(k)
    b = np.zeros(k)
    best = (objective(w, b), w.copy(), b.copy(), 0)
    prev = best[0]
    rising = 0
    converged = True
    it = 0
    for it in range(1, max_iter + 1):
        probs = softmax_rows(logits_val @ w.T + b)
        g = (probs - onehot) / n
        gw = g.T @ logits_val
        gw[off_diag] += 2.0 * odir_lambda * w[off_diag] / (k * (k - 1))
        gb = g.sum(axis=0) + 2.0 * odir_mu * b / k
        w = w - learning_rate * gw
        b = b - learning_rate * gb
        loss = objective(w, b)
        if not np.isfinite(loss):
            converged = False
            break
        if loss < best[0]:
            best = (loss, w.copy(), b.copy(), it)
        rising = rising + 1 if loss > prev else 0
        prev = loss
        if rising >= 50:
            converged = False
            break
    return MatrixScalingResult(
        w=best[1], b=best[2], converged=converged, n_iter=it, final_loss=best[0]
    )


def apply_matrix_scaling(logits, w, b) -> CalibratorOutput:
    """Affine recalibration; not accuracy-preserving in general."""
    logits = np.asarray(logits, dtype=np.float64)
    return CalibratorOutput.from_calibrated(
        logits @ np.asarray(w).T + np.asarray(b), np.ones(logits.shape[0])
    )


@dataclass
class CaGcnParams:
    """Weights of the temperature network plus its objective knobs.

    w1 is (K x hidden), w2 (hidden x 1): the output head is a single scalar
    per node, turned into a temperature by softplus. ``lam`` weighs the
    confidence regularizer inside the fit objective; ``weight_decay`` is the
    L2 coefficient both terms were trained with.
    """

    w1: np.ndarray
    w2: np.ndarray
    lam: float = 0.5
    weight_decay: float = 5e-3

    def copy(self) -> "CaGcnParams":
        return CaGcnParams(self.w1.copy(), self.w2.copy(), self.lam, self.weight_decay)


@dataclass
class CaGcnTrainConfig:
    hidden: int = 16
    lam: float = 0.5
    learning_rate: float = 0.01
    weight_decay: float = 5e-3
    dropout: float = 0.5
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _cagcn_raw(ahat, logits, params, dropout_masks):
    v = logits
    mask_in = mask_hidden = None
    if dropout_masks is not None:
        mask_in, mask_hidden = dropout_masks
        v = v * mask_in
    z1 = spmm(ahat, v @ params.w1)
    h = np.maximum(z1, 0.0)
    h_used = h if mask_hidden is None else h * mask_hidden
    raw = spmm(ahat, h_used @ params.w2)
    return raw[:, 0], (v, z1, h_used)


def cagcn_forward(ahat: SparseGraph, logits, params: CaGcnParams,
                  dropout_masks=None) -> CalibratorOutput:
    """Per-node temperatures from a two-layer GCN over the logits.

    ``ahat`` is the renormalized adjacency. Temperatures are
    softplus(network output), strictly positive, so predictions always match
    the uncalibrated argmax.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] != ahat.num_nodes:
        raise InputError(
            f"logits rows ({logits.shape[0]}) must equal graph nodes ({ahat.num_nodes})"
        )
    if logits.shape[1] != params.w1.shape[0]:
        raise InputError(
            f"logits width {logits.shape[1]} does not match w1 input {params.w1.shape[0]}"
        )
    raw, _ = _cagcn_raw(ahat, logits, params, dropout_masks)
    return CalibratorOutput.from_temperatures(logits, softplus(raw))


def cal_regularizer(probs, labels, mask) -> float:
    """Average max-minus-submax penalty over the masked nodes.

    Correctly predicted nodes contribute 1 - z_max + z_submax (pushes their
    confidence up); incorrect ones contribute z_max - z_submax (pulls it
    down). Both contributions lie in [0, 1].
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] < 2:
        raise InputError("confidence regularizer needs at least two classes")
    sub = probs[mask]
    if sub.shape[0] == 0:
        return 0.0
    top2 = np.partition(sub, -2, axis=1)
    z_max, z_sub = top2[:, -1], top2[:, -2]
    correct = sub.argmax(axis=1) == np.asarray(labels)[mask]
    per_node = np.where(correct, 1.0 - z_max + z_sub, z_max - z_sub)
    return float(per_node.mean())


def cagcn_backward(ahat, logits, labels, mask, params: CaGcnParams, dropout_masks=None):
    """Objective and exact gradients for the temperature network.

    Objective: masked NLL sum of the calibrated probabilities, plus
    lam * cal_regularizer, plus weight_decay/2 * (|W1|^2 + |W2|^2).
    Returns (loss, grad_w1, grad_w2). Argmax/submax indices are treated as
    locally constant, matching the piecewise-smooth objective.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, k = logits.shape
    lam, wd = params.lam, params.weight_decay
    raw, (v_used, z1, h_used) = _cagcn_raw(ahat, logits, params, dropout_masks)
    temps = softplus(raw)
    calibrated = logits / temps[:, None]
    probs = softmax_rows(calibrated)

    loss = nll_loss(probs, labels, mask)
    loss += lam * cal_regularizer(probs, labels, mask)
    loss += 0.5 * wd * (float((params.w1 ** 2).sum()) + float((params.w2 ** 2).sum()))

    midx = np.flatnonzero(mask)
    n_mask = midx.shape[0]
    # d(loss)/d(calibrated logits): softmax-NLL shortcut plus the regularizer
    # pushed through the softmax Jacobian.
    dlogits = np.zeros_like(probs)
    dlogits[midx] = probs[midx]
    dlogits[midx, labels[midx]] -= 1.0

    if lam != 0.0 and n_mask:
        sub = probs[midx]
        rows = np.arange(n_mask)
        i_max = sub.argmax(axis=1)
        blanked = sub.copy()
        blanked[rows, i_max] = -np.inf
        i_sub = blanked.argmax(axis=1)
        correct = i_max == labels[midx]
        sign = np.where(correct, -1.0, 1.0) * (lam / n_mask)
        g_z = np.zeros_like(sub)
        g_z[rows, i_max] += sign
        g_z[rows, i_sub] -= sign
        inner = (g_z * sub).sum(axis=1, keepdims=True)
        dlogits[midx] += sub * (g_z - inner)

    dtemps = -(dlogits * logits).sum(axis=1) / (temps * temps)
    draw = (dtemps * _sigmoid(raw))[:, None]

    ds2 = spmm(ahat, draw)
    gw2 = h_used.T @ ds2 + wd * params.w2
    dh = ds2 @ params.w2.T
    if dropout_masks is not None:
        dh = dh * dropout_masks[1]
    dz1 = dh * (z1 > 0.0)
    ds1 = spmm(ahat, dz1)
    gw1 = v_used.T @ ds1 + wd * params.w1
    return loss, gw1, gw2


def train_cagcn(graph: SparseGraph, logits, fit_labels, fit_mask,
                params_init: CaGcnParams = None,
                config: CaGcnTrainConfig = None) -> CaGcnParams:
    """Fit the temperature network on the held-out mask.

    ``graph`` is the raw adjacency (renormalized internally); ``fit_mask``
    selects the nodes whose labels drive the objective: the validation set
    for post-hoc calibration, the training set in self-training mode. Early
    stopping tracks the dropout-free fit loss. Deterministic per seed.
    """
    if config is None:
        config = CaGcnTrainConfig()
    logits = np.asarray(logits, dtype=np.float64)
    fit_labels = np.asarray(fit_labels, dtype=np.int64)
    fit_mask = np.asarray(fit_mask, dtype=bool)
    if not fit_mask.any():
        raise InputError("fit mask is empty")

    ahat = normalize_sym(graph)
    k = logits.shape[1]
    if params_init is None:
        rng_init = substream(config.seed, TAG_CAL_INIT)
        params = CaGcnParams(
            glorot(k, config.hidden, rng_init),
            glorot(config.hidden, 1, rng_init),
            lam=config.lam,
            weight_decay=config.weight_decay,
        )
    else:
        params = params_init.copy()
        params.lam = config.lam
        params.weight_decay = config.weight_decay
    rng_drop = substream(config.seed, TAG_CAL_DROPOUT)
    state = AdamState.like([params.w1, params.w2])

    best_loss = np.inf
    best_params = params.copy()
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        masks = make_dropout_masks(
            [logits.shape, (logits.shape[0], config.hidden)], config.dropout, rng_drop
        )
        loss, gw1, gw2 = cagcn_backward(ahat, logits, fit_labels, fit_mask, params, masks)
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite calibration loss {loss} at epoch {epoch} (seed {config.seed})"
            )
        (params.w1, params.w2), state = adam_step(
            [params.w1, params.w2], [gw1, gw2], state, config.learning_rate
        )
        eval_loss, _, _ = cagcn_backward(ahat, logits, fit_labels, fit_mask, params, None)
        if eval_loss < best_loss:
            best_loss = eval_loss
            best_params = params.copy()
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    return best_params


def read_logits_csv(path):
    """Logit ingestion: header ``node_id,l0,...,l{K-1}``; returns (ids, logits).

    Rows may arrive in any order; they are returned sorted by node id.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InputError(f"{path}: empty logits file")
    header = [h.strip() for h in lines[0].split(",")]
    if header[0] != "node_id" or len(header) < 2 or header[1] != "l0":
        raise InputError(f"{path}:1: expected header 'node_id,l0,...', got {lines[0]!r}")
    k = 0
    for name in header[1:]:
        if name == f"l{k}":
            k += 1
        else:
            break
    if k < 1:
        raise InputError(f"{path}:1: no logit columns found in {lines[0]!r}")
    ids, rows = [], []
    for lineno, text in enumerate(lines[1:], start=2):
        parts = text.split(",")
        if len(parts) < k + 1:
            raise InputError(
                f"{path}:{lineno}: expected at least {k + 1} fields, got {len(parts)}"
            )
        parts = parts[: k + 1]
        try:
            ids.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        except ValueError:
            raise InputError(f"{path}:{lineno}: malformed row {text!r}")
    ids = np.asarray(ids, dtype=np.int64)
    logits = np.asarray(rows, dtype=np.float64)
    order = np.argsort(ids, kind="stable")
    return ids[order], logits[order]


def write_calibrator_csv(path, output: CalibratorOutput, node_ids=None) -> None:
    """CalibratorOutput in the logits format plus temperature/confidence columns."""
    n, k = output.calibrated_logits.shape
    if node_ids is None:
        node_ids = np.arange(n)
    with open(path, "w", encoding="utf-8") as fh:
        cols = ",".join(f"l{j}" for j in range(k))
        fh.write(f"node_id,{cols},temperature,confidence,prediction\n")
        for i in range(n):
            row = ",".join(repr(float(v)) for v in output.calibrated_logits[i])
            fh.write(
                f"{int(node_ids[i])},{row},{output.temperatures[i]!r},"
                f"{output.confidence[i]!r},{int(output.prediction[i])}\n"
            )

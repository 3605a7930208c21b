"""Two-layer graph convolutional classifier with hand-derived gradients.

Dense matrices are plain 2-D float64 numpy arrays. The classifier computes

    logits = P @ relu(P @ (X @ W1)) @ W2

where P is the renormalized adjacency from :func:`graphcore.normalize_sym`
(symmetric, so the backward pass reuses it as its own transpose). Training
uses inverted dropout on the input features and the hidden activations, an
L2 penalty on both weight matrices, Adam, and early stopping on validation
loss.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ._kernels import spmm_csr
from .errors import InputError, NumericalError
from .graphcore import SparseGraph, normalize_sym
from .seeding import TAG_CLS_DROPOUT, TAG_CLS_INIT, substream

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


@dataclass
class GcnParams:
    """Weight matrices of the two layers; no bias terms."""

    w1: np.ndarray
    w2: np.ndarray

    def copy(self) -> "GcnParams":
        return GcnParams(self.w1.copy(), self.w2.copy())


@dataclass
class TrainConfig:
    hidden: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    max_epochs: int = 200
    patience: int = 100
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.dropout < 1.0:
            raise InputError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.patience > self.max_epochs:
            raise InputError(
                f"patience ({self.patience}) must not exceed max_epochs ({self.max_epochs})"
            )
        if self.hidden < 1 or self.max_epochs < 1:
            raise InputError("hidden and max_epochs must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    test_acc: float
    test_nll: float


def glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform init, limit sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def spmm(graph: SparseGraph, dense: np.ndarray) -> np.ndarray:
    """Sparse-dense product ``graph @ dense``."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2:
        raise InputError(f"dense operand must be 2-D, got shape {dense.shape}")
    if graph.num_nodes != dense.shape[0]:
        raise InputError(
            f"shape mismatch: graph has {graph.num_nodes} nodes, dense has {dense.shape[0]} rows"
        )
    return spmm_csr(graph.row_ptr, graph.col_idx, graph.values, dense)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def nll_loss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Unreduced negative log likelihood, summed over the masked nodes."""
    picked = probs[mask, labels[mask]]
    clamped = np.count_nonzero(picked < LOG_CLAMP)
    if clamped:
        logger.debug("nll_loss clamped %d probabilities at %g", clamped, LOG_CLAMP)
    return float(-np.log(np.maximum(picked, LOG_CLAMP)).sum())


def make_dropout_masks(shapes, dropout: float, rng: np.random.Generator):
    """Inverted-dropout masks (entries 0 or 1/(1-p)) for the given shapes."""
    if dropout == 0.0:
        return None
    scale = 1.0 / (1.0 - dropout)
    return tuple((rng.random(s) >= dropout) * scale for s in shapes)


def gcn_forward(ahat: SparseGraph, x: np.ndarray, params: GcnParams, dropout_masks=None):
    """Logits of the two-layer GCN.

    ``ahat`` is the renormalized adjacency. ``dropout_masks``, when given,
    is the (input, hidden) pair from :func:`make_dropout_masks`; omit it at
    evaluation time.
    """
    logits, _ = _forward_cached(ahat, x, params, dropout_masks)
    return logits


def _forward_cached(ahat, x, params, dropout_masks):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params.w1.shape[0] or params.w1.shape[1] != params.w2.shape[0]:
        raise InputError(
            f"shape chain broken: x {x.shape}, w1 {params.w1.shape}, w2 {params.w2.shape}"
        )
    mask_in = mask_hidden = None
    if dropout_masks is not None:
        mask_in, mask_hidden = dropout_masks
        x = x * mask_in
    z1 = spmm(ahat, x @ params.w1)
    h = np.maximum(z1, 0.0)
    h_used = h if mask_hidden is None else h * mask_hidden
    logits = spmm(ahat, h_used @ params.w2)
    cache = (x, z1, h_used)
    return logits, cache


def gcn_backward(
    ahat: SparseGraph,
    x: np.ndarray,
    params: GcnParams,
    labels: np.ndarray,
    mask: np.ndarray,
    weight_decay: float = 0.0,
    dropout_masks=None,
):
    """Objective value and its exact gradients.

    Objective: masked NLL sum plus weight_decay/2 * (|W1|^2 + |W2|^2).
    Returns (loss, GcnParams gradients). The analytic gradient ignores the
    1e-12 log clamp, which only binds on pathological inputs.
    """
    logits, (x_used, z1, h_used) = _forward_cached(ahat, x, params, dropout_masks)
    probs = softmax_rows(logits)
    loss = nll_loss(probs, labels, mask)
    loss += 0.5 * weight_decay * (float((params.w1 ** 2).sum()) + float((params.w2 ** 2).sum()))

    dlogits = np.zeros_like(probs)
    dlogits[mask] = probs[mask]
    dlogits[mask, labels[mask]] -= 1.0

    ds2 = spmm(ahat, dlogits)
    gw2 = h_used.T @ ds2 + weight_decay * params.w2
    dh = ds2 @ params.w2.T
    if dropout_masks is not None:
        dh = dh * dropout_masks[1]
    dz1 = dh * (z1 > 0.0)
    ds1 = spmm(ahat, dz1)
    gw1 = x_used.T @ ds1 + weight_decay * params.w1
    return loss, GcnParams(gw1, gw2)


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: list
    v: list
    step: int = 0

    @classmethod
    def like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update with bias correction; returns (new_params, new_state)."""
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


def accuracy(predictions: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    denom = int(mask.sum())
    if denom == 0:
        return 0.0
    return float((predictions[mask] == labels[mask]).mean())


def mean_nll(probs, labels, mask) -> float:
    denom = int(mask.sum())
    return nll_loss(probs, labels, mask) / denom if denom else 0.0


def train_classifier(dataset, config: TrainConfig):
    """Train the classifier; returns (best GcnParams, list of EpochRecord).

    Early stopping keeps the parameters with the lowest validation loss and
    halts once that loss has not improved for ``config.patience`` epochs.
    Fully deterministic given (dataset, config.seed).
    """
    config.validate()
    dataset.validate()
    if not dataset.train_mask.any():
        raise InputError("training mask is empty")

    ahat = normalize_sym(dataset.graph)
    x = dataset.features
    labels = dataset.labels
    k = dataset.num_classes

    rng_init = substream(config.seed, TAG_CLS_INIT)
    rng_drop = substream(config.seed, TAG_CLS_DROPOUT)
    params = GcnParams(
        glorot(dataset.feature_dim, config.hidden, rng_init),
        glorot(config.hidden, k, rng_init),
    )
    state = AdamState.like([params.w1, params.w2])

    best_val = np.inf
    best_params = params.copy()
    stall = 0
    log = []
    for epoch in range(1, config.max_epochs + 1):
        masks = make_dropout_masks(
            [x.shape, (dataset.num_nodes, config.hidden)], config.dropout, rng_drop
        )
        loss, grads = gcn_backward(
            ahat, x, params, labels, dataset.train_mask, config.weight_decay, masks
        )
        if not np.isfinite(loss):
            raise NumericalError(
                f"non-finite training loss {loss} at epoch {epoch} (seed {config.seed})"
            )
        (params.w1, params.w2), state = adam_step(
            [params.w1, params.w2], [grads.w1, grads.w2], state, config.learning_rate
        )

        probs = softmax_rows(gcn_forward(ahat, x, params))
        preds = probs.argmax(axis=1)
        val_loss = mean_nll(probs, labels, dataset.val_mask)
        log.append(
            EpochRecord(
                epoch=epoch,
                train_loss=mean_nll(probs, labels, dataset.train_mask),
                val_loss=val_loss,
                val_acc=accuracy(preds, labels, dataset.val_mask),
                test_acc=accuracy(preds, labels, dataset.test_mask),
                test_nll=mean_nll(probs, labels, dataset.test_mask),
            )
        )
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    return best_params, log


def write_epoch_log(path, records) -> None:
    """EpochRecord rows as CSV."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc,test_acc,test_nll\n")
        for r in records:
            fh.write(
                f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_acc!r},"
                f"{r.test_acc!r},{r.test_nll!r}\n"
            )

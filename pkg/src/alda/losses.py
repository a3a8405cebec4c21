"""Pseudo-labels, the class-wise-uniform noise model, and the ALDA loss family.

Two layers live here.  The plain-array functions (``confusion_matrix``,
``corrected_label_vector``, ``opposite_distribution``, ``bce_vector``,
``unhinged_loss``) are the per-sample algebra; they take and return numpy
and serve as the oracles for everything else.  The ``*_graph`` functions are
their batched tape-aware counterparts used in training, built only from
registered tensor ops so gradients route exactly where the objectives say:
the corrected labels inside the target loss are constants (no gradient into
the discriminator), pseudo-labels are hard argmax constants everywhere, and
the adversarial losses reach the generator only through the GRL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, add, clamp, log, log_softmax, matmul, mul, scale, sub, tsum

CLAMP_EPS = 1e-7


# -- pseudo-labels -------------------------------------------------------------


@dataclass(frozen=True)
class PseudoLabel:
    class_index: int
    confidence: float
    accepted: bool


def pseudo_label(p: np.ndarray, delta: float) -> PseudoLabel:
    """Argmax prediction, accepted when its confidence clears the threshold.

    Ties break toward the lowest class index so runs stay deterministic.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError("pseudo_label expects a single probability vector")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("probability vector must sum to 1")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    k = int(np.argmax(p))  # argmax returns the first (lowest) index on ties
    conf = float(p[k])
    return PseudoLabel(class_index=k, confidence=conf, accepted=conf > delta)


def pseudo_labels(probs: np.ndarray, delta: float):
    """Vectorized pseudo_label over an (n, K) matrix -> (indices, confidences, accepted)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError("expected an (n, K) probability matrix")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("probability rows must sum to 1")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    idx = probs.argmax(axis=1)
    conf = probs[np.arange(len(probs)), idx]
    return idx.astype(np.int64), conf, conf > delta


# -- class-wise-uniform noise algebra ------------------------------------------


def confusion_matrix(xi: np.ndarray) -> np.ndarray:
    """K x K column-stochastic matrix: xi_l on the diagonal, (1-xi_l)/(K-1) off it."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.ndim != 1 or xi.shape[0] < 2:
        raise ValueError("noise vector must be 1-D with K >= 2")
    k = xi.shape[0]
    eta = np.tile((1.0 - xi) / (k - 1), (k, 1))
    np.fill_diagonal(eta, xi)
    return eta


def corrected_label_vector(xi: np.ndarray, p_hat: np.ndarray) -> np.ndarray:
    """Apply the noise model to a pseudo-label distribution: c = eta @ p_hat."""
    xi = np.asarray(xi, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if xi.shape != p_hat.shape:
        raise ValueError("xi and p_hat must have matching length K")
    return confusion_matrix(xi) @ p_hat


def opposite_distribution(y_hat: int, k: int) -> np.ndarray:
    """Zero at the pseudo-label class, uniform 1/(K-1) elsewhere."""
    if k < 2:
        raise ValueError("opposite distribution needs K >= 2")
    if not 0 <= y_hat < k:
        raise ValueError(f"class index {y_hat} out of range for K={k}")
    u = np.full(k, 1.0 / (k - 1))
    u[y_hat] = 0.0
    return u


def one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 0:
        labels = labels[None]
    if np.any((labels < 0) | (labels >= k)):
        raise ValueError("label out of range")
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def unhinged_loss(p: np.ndarray, k: int) -> float:
    """Linear loss 1 - p_k, robust to the uniform part of label noise."""
    p = np.asarray(p, dtype=np.float64)
    return float(1.0 - p[k])


def bce_vector(c: np.ndarray, target: np.ndarray) -> float:
    """Componentwise binary cross-entropy summed over the K classes."""
    c = np.clip(np.asarray(c, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    t = np.asarray(target, dtype=np.float64)
    if c.shape != t.shape:
        raise ValueError("c and target must have matching length")
    return float(-(t * np.log(c) + (1.0 - t) * np.log(1.0 - c)).sum())


# -- batched graph losses --------------------------------------------------------


def corrected_labels_graph(xi: Tensor, p_hat: np.ndarray) -> Tensor:
    """Row-wise eta(xi) @ p_hat for a batch, keeping the graph through xi.

    ``p_hat`` is a constant (n, K) matrix of pseudo-label distributions.
    Row-sum broadcasting is realized with a matmul against an all-ones
    matrix so only registered ops appear on the tape.
    """
    n, k = xi.data.shape
    if p_hat.shape != (n, k):
        raise ValueError("p_hat shape must match xi")
    if k < 2:
        raise ValueError("corrected labels need K >= 2")
    p_const = Tensor(p_hat)
    ones_nk = Tensor(np.ones((n, k)))
    ones_kk = Tensor(np.ones((k, k)))
    xi_p = mul(xi, p_const)
    off = mul(sub(ones_nk, xi), p_const)  # (1 - xi) * p
    row_tot = matmul(off, ones_kk)  # broadcast row sums of `off`
    return add(xi_p, scale(sub(row_tot, off), 1.0 / (k - 1)))


def _masked_total(per_elem: Tensor, row_mask: np.ndarray | None) -> Tensor:
    if row_mask is None:
        return tsum(per_elem)
    n, k = per_elem.data.shape
    weights = np.repeat(np.asarray(row_mask, dtype=np.float64)[:, None], k, axis=1)
    return tsum(mul(per_elem, Tensor(weights)))


def bce_mean_graph(c: Tensor, target: np.ndarray, row_mask: np.ndarray | None = None) -> Tensor:
    """Mean over (masked) rows of the summed componentwise BCE against ``target``."""
    n, k = c.data.shape
    if target.shape != (n, k):
        raise ValueError("target shape must match c")
    denom = float(row_mask.sum()) if row_mask is not None else float(n)
    if denom <= 0:
        raise ValueError("bce_mean_graph needs at least one active row")
    t = Tensor(np.asarray(target, dtype=np.float64))
    ones = Tensor(np.ones((n, k)))
    cc = clamp(c, CLAMP_EPS, 1.0 - CLAMP_EPS)
    hit = mul(t, log(cc))
    miss = mul(sub(ones, t), log(sub(ones, cc)))
    return scale(_masked_total(add(hit, miss), row_mask), -1.0 / denom)


def cross_entropy_mean_graph(
    logits: Tensor, labels: np.ndarray, row_mask: np.ndarray | None = None
) -> Tensor:
    """Mean softmax cross-entropy of logits against integer labels."""
    n, k = logits.data.shape
    target = one_hot(labels, k)
    denom = float(row_mask.sum()) if row_mask is not None else float(n)
    if denom <= 0:
        raise ValueError("cross entropy needs at least one active row")
    picked = mul(log_softmax(logits), Tensor(target))
    return scale(_masked_total(picked, row_mask), -1.0 / denom)


def soft_cross_entropy_mean_graph(
    logits: Tensor, target_rows: np.ndarray, row_mask: np.ndarray | None = None
) -> Tensor:
    """Cross-entropy against constant soft target rows (used by the CE-basic variant)."""
    n, k = logits.data.shape
    if target_rows.shape != (n, k):
        raise ValueError("target shape must match logits")
    denom = float(row_mask.sum()) if row_mask is not None else float(n)
    if denom <= 0:
        raise ValueError("cross entropy needs at least one active row")
    picked = mul(log_softmax(logits), Tensor(target_rows))
    return scale(_masked_total(picked, row_mask), -1.0 / denom)


def corrected_target_loss_graph(
    c_rows: np.ndarray, probs: Tensor, row_mask: np.ndarray | None = None
) -> Tensor:
    """Mean over accepted rows of sum_k c_k * (1 - p_k), with c held constant.

    Because each corrected-label row sums to 1, the row loss equals
    1 - c . p, so the masked mean reduces to 1 - sum(mask * c * p)/n_active.
    """
    n, k = probs.data.shape
    if c_rows.shape != (n, k):
        raise ValueError("corrected label rows must match probs shape")
    denom = float(row_mask.sum()) if row_mask is not None else float(n)
    if denom <= 0:
        raise ValueError("corrected target loss needs at least one active row")
    overlap = mul(Tensor(np.asarray(c_rows, dtype=np.float64)), probs)
    return sub(Tensor(1.0), scale(_masked_total(overlap, row_mask), 1.0 / denom))


def reg_loss(d_logits: Tensor, y_source: np.ndarray) -> Tensor:
    """Source classification penalty on the discriminator's score rows."""
    return cross_entropy_mean_graph(d_logits, y_source)


def adversarial_loss(
    xi_source: Tensor,
    source_pred: np.ndarray,
    y_source: np.ndarray,
    xi_target: Tensor | None,
    target_pred: np.ndarray | None,
    target_accepted: np.ndarray | None,
):
    """Noise-correcting discrimination losses for one paired batch.

    The source half pushes corrected labels (built on the classifier's hard
    source predictions) toward the ground-truth one-hots; the target half
    pushes them toward the opposite distribution of each accepted
    pseudo-label.  Returns ``(l_adv_source, l_adv_target, n_accepted)``;
    with no accepted target samples the target term is a constant zero.
    """
    n_s, k = xi_source.data.shape
    l_src = bce_mean_graph(
        corrected_labels_graph(xi_source, one_hot(source_pred, k)),
        one_hot(y_source, k),
    )
    if xi_target is None:
        return l_src, Tensor(0.0), 0
    accepted = np.asarray(target_accepted, dtype=bool)
    n_acc = int(accepted.sum())
    if n_acc == 0:
        return l_src, Tensor(0.0), 0
    u_rows = np.stack([opposite_distribution(int(y), k) for y in target_pred])
    l_tgt = bce_mean_graph(
        corrected_labels_graph(xi_target, one_hot(target_pred, k)),
        u_rows,
        row_mask=accepted,
    )
    return l_src, l_tgt, n_acc


# -- objective recomposition ------------------------------------------------------


@dataclass
class LossBundle:
    """Scalar loss components of one batch plus the three recomposed objectives."""

    l_adv_source: float
    l_adv_target: float
    l_reg: float
    l_src_ce: float
    l_target_corrected: float
    lam: float
    no_accepted_target: bool = False

    @property
    def discriminator_objective(self) -> float:
        return self.l_adv_source + self.l_adv_target + self.l_reg

    @property
    def classifier_objective(self) -> float:
        return self.l_src_ce + self.lam * self.l_target_corrected

    @property
    def generator_objective(self) -> float:
        return (
            self.l_src_ce
            + self.lam * self.l_target_corrected
            - self.lam * (self.l_adv_source + self.l_adv_target)
        )


def objectives(
    l_adv_source: float,
    l_adv_target: float,
    l_reg: float,
    l_src_ce: float,
    l_target_corrected: float,
    lam: float,
    no_accepted_target: bool = False,
) -> LossBundle:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    return LossBundle(
        l_adv_source=float(l_adv_source),
        l_adv_target=float(l_adv_target),
        l_reg=float(l_reg),
        l_src_ce=float(l_src_ce),
        l_target_corrected=float(l_target_corrected),
        lam=float(lam),
        no_accepted_target=no_accepted_target,
    )

"""Classification, boundary-margin and weighted total losses with output gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discrepancy import KernelSpec, domain_loss
from .errors import InvalidInputError
from .numkit import log_softmax, softmax


def _check_labels(logits: np.ndarray, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise InvalidInputError("logits must be a nonempty batch x K matrix")
    if labels.shape != (logits.shape[0],):
        raise InvalidInputError("one label per logit row required")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InvalidInputError("labels must be integers")
        labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise InvalidInputError(f"labels must lie in [0, {logits.shape[1]})")
    return labels


def classification_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(logits, labels)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -log_softmax(logits)[rows, labels].mean()
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def boundary_loss(logits, labels, margin: float, weight: float = 1.0,
                  include_true_class: bool = False) -> tuple[float, np.ndarray]:
    """``weight * mean_n sum_k max(0, logit_k - logit_y + margin)``.

    The true class is skipped unless ``include_true_class`` (it would add the
    constant ``margin`` per sample with zero gradient).
    """
    if margin < 0:
        raise InvalidInputError("margin must be non-negative")
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(logits, labels)
    n = logits.shape[0]
    rows = np.arange(n)
    viol = logits - logits[rows, labels][:, None] + margin
    if not include_true_class:
        viol[rows, labels] = 0.0
    active = viol > 0
    loss = weight * np.where(active, viol, 0.0).sum() / n
    grad = active.astype(np.float64)
    if include_true_class:
        grad[rows, labels] = 0.0  # the k == y term is constant
    grad[rows, labels] -= grad.sum(1)
    return float(loss), weight * grad / n


@dataclass
class SourceBatch:
    logits: np.ndarray
    labels: np.ndarray
    z: np.ndarray


@dataclass
class LossBreakdown:
    clf: list[float]
    mmd: list[float]
    dis: list[float]
    clf_tl: float
    beta: float
    margin: float
    omega: list[float]
    lambda_dis: float
    total: float
    # gradients of ``total`` w.r.t. the batch outputs
    grad_source_logits: list[np.ndarray] = field(repr=False, default_factory=list)
    grad_source_z: list[np.ndarray] = field(repr=False, default_factory=list)
    grad_target_z: np.ndarray | None = field(repr=False, default=None)
    grad_tl_logits: np.ndarray | None = field(repr=False, default=None)


def total_loss(sources: list[SourceBatch], z_target, omega, beta: float, margin: float,
               spec: KernelSpec | None, lambda_dis: float = 1.0,
               tl_logits=None, tl_labels=None, use_boundary: bool = True,
               include_true_class: bool = False, mmd_values=None) -> LossBreakdown:
    """``sum_i w_i (clf_i + beta mmd_i) + lambda_dis sum_i dis_i + clf_TL``.

    ``dis_i`` already carries its factor ``w_i``. The labelled-target term is
    unweighted and contributes 0 when empty. ``omega`` is treated as a
    constant. Pass precomputed ``mmd_values`` (a list of ``MmdResult``) to
    avoid recomputing the discrepancy; otherwise it is evaluated with ``spec``
    whenever ``beta != 0``.
    """
    tl_empty = tl_logits is None or len(tl_logits) == 0
    if not sources and tl_empty:
        raise InvalidInputError("total_loss needs at least one nonempty batch")
    omega = np.asarray(omega, dtype=np.float64).ravel()
    if omega.size != len(sources):
        raise InvalidInputError("one weight per source required")

    clf, mmd, dis = [], [], []
    g_logits, g_z = [], []
    z_target = None if z_target is None else np.asarray(z_target, dtype=np.float64)
    g_target = None if z_target is None else np.zeros_like(z_target)
    total = 0.0
    for i, sb in enumerate(sources):
        w = float(omega[i])
        c, gc = classification_loss(sb.logits, sb.labels)
        gl = w * gc
        gz = np.zeros_like(sb.z)
        m = 0.0
        if beta != 0.0 and z_target is not None and len(z_target):
            res = mmd_values[i] if mmd_values is not None else domain_loss(sb.z, z_target, spec)
            m = res.value
            gz = w * beta * res.grad_x
            g_target += w * beta * res.grad_y
        if use_boundary and lambda_dis != 0.0:
            b, gb = boundary_loss(sb.logits, sb.labels, margin, w, include_true_class)
            gl = gl + lambda_dis * gb
        else:
            b = 0.0
        total += w * (c + beta * m) + lambda_dis * b
        clf.append(c)
        mmd.append(m)
        dis.append(b)
        g_logits.append(gl)
        g_z.append(gz)

    clf_tl, g_tl = 0.0, None
    if not tl_empty:
        clf_tl, g_tl = classification_loss(tl_logits, tl_labels)
        total += clf_tl
    return LossBreakdown(clf=clf, mmd=mmd, dis=dis, clf_tl=clf_tl, beta=beta, margin=margin,
                         omega=[float(w) for w in omega], lambda_dis=lambda_dis, total=total,
                         grad_source_logits=g_logits, grad_source_z=g_z,
                         grad_target_z=g_target, grad_tl_logits=g_tl)

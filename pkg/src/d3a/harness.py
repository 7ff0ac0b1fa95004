"""Pretraining, overall distances, the adaptive training loop, evaluation and
the ablation / sampling-comparison runners."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import model as mdl
from .config import TrainConfig
from .data import Dataset, batches
from .discrepancy import KernelSpec, median_bandwidth, mmd2
from .errors import InvalidInputError, TrainingDivergedError
from .losses import LossBreakdown, SourceBatch, total_loss
from .numkit import Rng, SgdState, lr_at_epoch, sgd_step
from .sampling import (SamplingState, importance, label_and_commit, select,
                       select_cluster_centers, select_random, should_sample)
from .weighting import DomainWeights, omega

log = logging.getLogger(__name__)

# child-stream tags
_INIT, _PRETRAIN, _TRAIN, _DIST, _SAMPLE = 1, 2, 3, 4, 5

ABLATION_ROWS = (
    # use_alpha, use_epsilon, use_projection_head, use_boundary_loss, use_active_sampling
    (True, False, False, False, False),
    (False, True, True, False, False),
    (True, False, True, False, False),
    (True, True, False, False, False),
    (True, True, True, False, False),
    (True, True, True, True, False),
    (True, True, True, False, True),
    (True, True, True, True, True),
)
TOGGLES = ("use_alpha", "use_epsilon", "use_projection_head", "use_boundary_loss",
           "use_active_sampling")


def metrics_header(n_sources: int) -> list[str]:
    cols = ["epoch", "step", "lr"]
    for i in range(n_sources):
        cols += [f"s{i}_{k}" for k in ("d", "alpha", "epsilon", "omega", "clf", "mmd", "dis")]
    return cols + ["clf_TL", "total", "target_acc", "TL_size"]


@dataclass
class StepResult:
    breakdown: LossBreakdown
    weights: DomainWeights | None
    grads: list[np.ndarray]


@dataclass
class TrainReport:
    config: TrainConfig
    epochs: list[dict] = field(default_factory=list)
    final_accuracy: float = float("nan")
    distances: list[float] = field(default_factory=list)
    sampling_log: list[dict] = field(default_factory=list)
    metrics_rows: list[list] = field(default_factory=list)
    n_sources: int = 0
    wall_clock: float = 0.0
    params: mdl.ModelParams | None = field(default=None, repr=False)
    projections: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(metrics_header(self.n_sources))
        for row in self.metrics_rows:
            w.writerow(_fmt(v) for v in row)
        return buf.getvalue()

    def sampling_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "round", "index", "score", "label", "correct"])
        for rec in self.sampling_log:
            for idx, sc, lab, ok in zip(rec["indices"], rec["scores"], rec["labels"],
                                        rec["correct"]):
                w.writerow([rec["epoch"], rec["round"], idx, _fmt(sc), lab, int(ok)])
        return buf.getvalue()

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["epoch", "lr", "mean_total", "target_acc", "TL_size"]
        w.writerow(keys)
        for rec in self.epochs:
            w.writerow(_fmt(rec[k]) for k in keys)
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(self.metrics_csv(), encoding="utf-8")
        (out / "epochs.csv").write_text(self.epochs_csv(), encoding="utf-8")
        (out / "sampling.csv").write_text(self.sampling_csv(), encoding="utf-8")
        (out / "config.txt").write_text(self.config.to_text(), encoding="utf-8")
        (out / "summary.txt").write_text(
            f"final_target_acc = {self.final_accuracy!r}\n"
            f"overall_distances = {' '.join(repr(d) for d in self.distances)}\n"
            f"labeled_target = {self.epochs[-1]['TL_size'] if self.epochs else 0}\n"
            f"wall_clock_s = {self.wall_clock:.3f}\n", encoding="utf-8")
        if self.params is not None:
            mdl.save_checkpoint(self.params, out / "model.txt")
        for ep, z in self.projections.items():
            np.savetxt(out / f"projections_epoch{ep:03d}.csv", z, delimiter=",", fmt="%.17g",
                       header=",".join(f"z{j}" for j in range(z.shape[1])) + ",domain",
                       comments="")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _check_sources(sources: Sequence[Dataset]) -> None:
    if not sources:
        raise InvalidInputError("at least one source domain is required")
    for s in sources:
        if not s.labeled:
            raise InvalidInputError(f"source {s.domain_tag!r} is unlabeled")
        if len(s) == 0:
            raise InvalidInputError(f"source {s.domain_tag!r} is empty")


def build_model(cfg: TrainConfig, d_in: int, n_classes: int) -> mdl.ModelParams:
    return mdl.init((d_in, cfg.hidden, cfg.feature_dim, n_classes),
                    Rng(cfg.seed).spawn(_INIT), use_head=cfg.use_projection_head)


def batch_objective(params, source_X, source_y, target_X, omega_fn, cfg: TrainConfig,
                    spec: KernelSpec | None, tl_X=None, tl_y=None) -> StepResult:
    """Forward every batch, evaluate the composite loss and backpropagate.

    ``omega_fn`` maps the vector of batch discrepancies to a DomainWeights
    record (or is an array of fixed weights). Weights are constants for the
    gradient.
    """
    caches = [mdl.forward(params, X) for X in source_X]
    t_cache = mdl.forward(params, target_X) if target_X is not None and len(target_X) else None
    mmds = None
    if t_cache is not None and spec is not None:
        mmds = [mmd2(c.z, t_cache.z, spec) for c in caches]
    weights = None
    if callable(omega_fn):
        weights = omega_fn(np.array([m.value for m in mmds]) if mmds else None)
        w = weights.omega
    else:
        w = np.asarray(omega_fn, dtype=np.float64)
    beta = cfg.beta if (cfg.use_mmd and mmds is not None) else 0.0
    tl_cache = mdl.forward(params, tl_X) if tl_X is not None and len(tl_X) else None
    bd = total_loss(
        [SourceBatch(c.logits, y, c.z) for c, y in zip(caches, source_y)],
        None if t_cache is None else t_cache.z, w, beta, cfg.margin, spec,
        lambda_dis=cfg.lambda_dis, tl_logits=None if tl_cache is None else tl_cache.logits,
        tl_labels=tl_y, use_boundary=cfg.use_boundary_loss,
        include_true_class=cfg.include_true_class_margin, mmd_values=mmds)
    if mmds is not None and beta == 0.0:
        bd.mmd = [m.value for m in mmds]  # still reported, not optimised
    all_caches = list(caches)
    bundles = [{"logits": gl, "z": gz} for gl, gz in zip(bd.grad_source_logits, bd.grad_source_z)]
    if t_cache is not None:
        all_caches.append(t_cache)
        bundles.append({"z": bd.grad_target_z})
    if tl_cache is not None:
        all_caches.append(tl_cache)
        bundles.append({"logits": bd.grad_tl_logits})
    grads = mdl.backward(params, all_caches, bundles)
    return StepResult(bd, weights, grads)


def clip_grads(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale to a global L2 norm of at most ``max_norm`` (0 disables)."""
    if max_norm <= 0:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm <= max_norm:
        return grads
    return [g * (max_norm / norm) for g in grads]


def _make_sgd(cfg: TrainConfig, params) -> SgdState:
    return SgdState.for_params(params.arrays, momentum=cfg.momentum, lr_init=cfg.lr_init,
                               gamma=cfg.gamma, epoch_drop=cfg.epoch_drop)


def pretrain(cfg: TrainConfig, sources: Sequence[Dataset], params=None) -> mdl.ModelParams:
    """Source-only classification (unit weights, no discrepancy, no margin term)."""
    _check_sources(sources)
    n_classes = int(max(s.labels.max() for s in sources)) + 1
    if params is None:
        params = build_model(cfg, sources[0].dim, n_classes)
    if cfg.pretrain_epochs == 0:
        return params
    pcfg = cfg.replace(use_mmd=False, use_boundary_loss=False)
    rng = Rng(cfg.seed).spawn(_PRETRAIN)
    sgd = _make_sgd(cfg, params)
    ones = np.ones(len(sources))
    scales = params.lr_scales(cfg.lr_head_multiplier)
    for epoch in range(cfg.pretrain_epochs):
        lr = lr_at_epoch(sgd, epoch)
        plan = [batches(len(s), cfg.batch_size, rng) for s in sources]
        n_steps = max(len(p) for p in plan)
        for step in range(n_steps):
            idx = [p[step % len(p)] for p in plan]
            res = batch_objective(params, [s.features[i] for s, i in zip(sources, idx)],
                                  [s.labels[i] for s, i in zip(sources, idx)], None, ones,
                                  pcfg, None)
            if not np.isfinite(res.breakdown.total):
                raise TrainingDivergedError(epoch, step, "during pretraining")
            params = params.with_arrays(
                sgd_step(params.arrays, clip_grads(res.grads, cfg.grad_clip), sgd, [lr * s for s in scales]))
    return params


def epoch_kernel(cfg: TrainConfig, source_z: Sequence[np.ndarray], target_z, rng: Rng
                 ) -> KernelSpec:
    med = median_bandwidth(np.vstack(source_z), target_z, rng)
    return KernelSpec.multiscale(med, cfg.n_bandwidths, cfg.unbiased)


def overall_distances(params, sources: Sequence[Dataset], target: Dataset, cfg: TrainConfig
                      ) -> np.ndarray:
    """Per-source squared MMD between projections over capped seeded subsamples."""
    rng = Rng(cfg.seed).spawn(_DIST)
    cap = cfg.distance_cap
    zs = [mdl.forward(params, s.features[rng.subsample(len(s), cap)]).z for s in sources]
    zt = mdl.forward(params, target.features[rng.subsample(len(target), cap)]).z
    spec = epoch_kernel(cfg, zs, zt, rng)
    return np.array([mmd2(z, zt, spec).value for z in zs])


def evaluate(params, dataset: Dataset) -> float:
    if not dataset.labeled:
        raise InvalidInputError("evaluation needs a labelled dataset")
    if len(dataset) == 0:
        raise InvalidInputError("evaluation needs a nonempty dataset")
    pred = np.argmax(mdl.predict_logits(params, dataset.features), axis=1)
    return float(np.mean(pred == dataset.labels))


def _safe_distances(D: np.ndarray) -> np.ndarray:
    # exact zeros only arise for identical subsamples; keep alphas defined
    return np.maximum(D, 1e-12)


def train(cfg: TrainConfig, sources: Sequence[Dataset], target: Dataset) -> TrainReport:
    """Pretrain, freeze overall distances, then run the adaptive loop with sampling."""
    cfg.validate()
    _check_sources(sources)
    if target.dim != sources[0].dim:
        raise InvalidInputError("target and source feature dimensions differ")
    t0 = time.perf_counter()
    n_classes = int(max(s.labels.max() for s in sources)) + 1
    target_labels = target.labels  # read only by evaluate() and oracle labelling
    target_X = target.features
    report = TrainReport(config=cfg, n_sources=len(sources))

    params = pretrain(cfg, sources, build_model(cfg, sources[0].dim, n_classes))
    D = _safe_distances(overall_distances(params, sources, target, cfg))
    report.distances = D.tolist()
    log.info("overall distances: %s", D)

    state = SamplingState(n_target=len(target), delta=cfg.delta, max_rounds=cfg.max_rounds,
                          start_epoch=cfg.start_epoch, period=cfg.period,
                          label_mode=cfg.label_mode)
    rng = Rng(cfg.seed).spawn(_TRAIN)
    sample_rng = Rng(cfg.seed).spawn(_SAMPLE)
    sgd = _make_sgd(cfg, params)
    scales = params.lr_scales(cfg.lr_head_multiplier)

    def weigh(d):
        return omega(D, d, cfg.omega_min, cfg.use_alpha, cfg.use_epsilon)

    for epoch in range(cfg.epochs):
        if cfg.refresh_distances and epoch > 0:
            D = _safe_distances(overall_distances(params, sources, target, cfg))
        if cfg.use_active_sampling and should_sample(epoch, state):
            _sampling_round(params, state, target_X, target_labels, cfg, epoch, sample_rng,
                            report)
        lr = lr_at_epoch(sgd, epoch)
        lrs = [lr * s for s in scales]
        pool = state.remaining
        tl_idx = np.array(state.labeled_idx, dtype=np.int64)
        tl_y = np.array(state.labeled_y, dtype=np.int64)
        plan = [batches(len(s), cfg.batch_size, rng) for s in sources]
        t_plan = batches(len(pool), cfg.batch_size, rng)
        tl_plan = batches(len(tl_idx), cfg.batch_size, rng) if len(tl_idx) else []
        n_steps = max(len(p) for p in plan)
        spec = None
        totals = []
        for step in range(n_steps):
            idx = [p[step % len(p)] for p in plan]
            sx = [s.features[i] for s, i in zip(sources, idx)]
            sy = [s.labels[i] for s, i in zip(sources, idx)]
            tx = target_X[pool[t_plan[step % len(t_plan)]]]
            if spec is None:
                zs = [mdl.forward(params, x).z for x in sx]
                spec = epoch_kernel(cfg, zs, mdl.forward(params, tx).z, rng)
            tlx = tly = None
            if tl_plan:
                j = tl_plan[step % len(tl_plan)]
                tlx, tly = target_X[tl_idx[j]], tl_y[j]
            res = batch_objective(params, sx, sy, tx, weigh, cfg, spec, tlx, tly)
            bd, wts = res.breakdown, res.weights
            if not np.isfinite(bd.total) or not all(np.all(np.isfinite(g)) for g in res.grads):
                raise TrainingDivergedError(epoch, step)
            params = params.with_arrays(sgd_step(params.arrays, clip_grads(res.grads, cfg.grad_clip), sgd, lrs))
            row = [epoch, step, lr]
            for i in range(len(sources)):
                row += [wts.d[i], wts.alpha[i], wts.epsilon[i], wts.omega[i],
                        bd.clf[i], bd.mmd[i], bd.dis[i]]
            row += [bd.clf_tl, bd.total, None, len(tl_idx)]
            report.metrics_rows.append(row)
            totals.append(bd.total)
        acc = evaluate(params, Dataset(target_X, target_labels))
        report.metrics_rows[-1][-2] = acc
        report.epochs.append({"epoch": epoch, "lr": lr, "mean_total": float(np.mean(totals)),
                              "target_acc": acc, "TL_size": len(state.labeled_idx)})
        if cfg.export_features:
            report.projections[epoch] = _projection_dump(params, sources, target)
        log.debug("epoch %d lr %.5f acc %.4f", epoch, lr, acc)

    report.final_accuracy = report.epochs[-1]["target_acc"] if report.epochs else evaluate(
        params, Dataset(target_X, target_labels))
    report.params = params
    report.wall_clock = time.perf_counter() - t0
    return report


def _projection_dump(params, sources, target) -> np.ndarray:
    blocks = []
    for tag, ds in enumerate([*sources, target]):
        z = mdl.forward(params, ds.features).z
        blocks.append(np.hstack([z, np.full((len(z), 1), tag)]))
    return np.vstack(blocks)


def _sampling_round(params, state: SamplingState, target_X, target_labels, cfg: TrainConfig,
                    epoch: int, rng: Rng, report: TrainReport) -> None:
    if cfg.sampling_strategy == "boundary":
        chosen = select(params, state, target_X)
    elif cfg.sampling_strategy == "random":
        chosen = select_random(state, rng)
    else:
        chosen = select_cluster_centers(params, state, target_X, rng)
    scores = importance(mdl.predict_logits(params, target_X[chosen]))
    labels = label_and_commit(state, chosen, params, target_X,
                              target_labels if cfg.label_mode == "oracle" else None)
    correct = labels == target_labels[chosen]
    report.sampling_log.append({
        "epoch": epoch, "round": state.rounds_done, "indices": chosen.tolist(),
        "scores": scores.tolist(), "labels": labels.tolist(), "correct": correct.tolist(),
        "correct_rate": float(correct.mean())})
    log.info("epoch %d: committed %d samples, label correctness %.3f", epoch, len(chosen),
             correct.mean())


@dataclass
class AblationRow:
    toggles: dict
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def _run_seeds(cfg: TrainConfig, benchmark, seeds: Sequence[int]) -> list[float]:
    """``benchmark`` is a callable seed -> (sources, target)."""
    accs = []
    for s in seeds:
        sources, target = benchmark(s)
        accs.append(train(cfg.replace(seed=s), sources, target).final_accuracy)
    return accs


def ablate(base: TrainConfig, benchmark, seeds: Sequence[int]) -> list[AblationRow]:
    if not seeds:
        raise InvalidInputError("at least one seed is required")
    rows = []
    for combo in ABLATION_ROWS:
        toggles = dict(zip(TOGGLES, combo))
        rows.append(AblationRow(toggles, _run_seeds(base.replace(**toggles), benchmark, seeds)))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*TOGGLES, "mean_acc", "std_acc"])
    for r in rows:
        w.writerow([int(r.toggles[t]) for t in TOGGLES] + [_fmt(r.mean), _fmt(r.std)])
    return buf.getvalue()


@dataclass
class SamplingRow:
    strategy: str
    accuracies: list[float]
    committed: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


def compare_sampling(cfg: TrainConfig, benchmark, seeds: Sequence[int]) -> list[SamplingRow]:
    if not seeds:
        raise InvalidInputError("at least one seed is required")
    out = []
    for strategy in ("random", "cluster", "boundary"):
        c = cfg.replace(sampling_strategy=strategy, use_active_sampling=True)
        accs, committed = [], []
        for s in seeds:
            sources, target = benchmark(s)
            rep = train(c.replace(seed=s), sources, target)
            accs.append(rep.final_accuracy)
            committed.append(sum(len(r["indices"]) for r in rep.sampling_log))
        out.append(SamplingRow(strategy, accs, committed))
    return out


def sampling_csv(rows: Sequence[SamplingRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "mean_acc", "std_acc", "committed"])
    for r in rows:
        w.writerow([r.strategy, _fmt(r.mean), _fmt(r.std), int(np.mean(r.committed))])
    return buf.getvalue()


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    n_checked: int
    n_excluded: int


def _kink_pattern(params, xs, labels, tl, margin) -> bytes:
    """ReLU masks of every batch plus the hinge active set; a change under a
    coordinate perturbation means the difference straddles a kink."""
    parts = []
    for X, y in [*zip(xs, labels), tl]:
        if X is None:
            continue
        c = mdl.forward(params, X)
        parts += [c.a1 > 0, c.a2 > 0, c.b > 0]
        if y is not None:
            L = c.logits
            parts.append(L - L[np.arange(len(y)), y][:, None] + margin > 0)
    return b"".join(np.packbits(p.ravel()).tobytes() for p in parts)


def grad_check(seed: int, hidden: int = 16, batch: int = 8, eps: float = 1e-5,
               floor: float = 1e-6, cfg: TrainConfig | None = None) -> GradCheckResult:
    """Compare the analytic gradient of the composite objective with central
    differences on a random two-source problem.

    Weights and bandwidths are frozen at the unperturbed point. Coordinates
    whose perturbation flips a ReLU or hinge are excluded.
    """
    rng = Rng(seed)
    d_in, feat, k = 5, 6, 3
    cfg = (cfg or TrainConfig()).replace(hidden=hidden, feature_dim=feat, seed=seed,
                                         beta=0.5 + float(rng.random(1)[0]))
    params = build_model(cfg, d_in, k)
    params = params.with_arrays([a + 0.05 * rng.normal(a.shape) if a.ndim == 1 else a
                                 for a in params.arrays])
    sx = [rng.normal((batch, d_in)), rng.normal((batch, d_in)) + 0.5]
    sy = [np.arange(batch) % k, (np.arange(batch) + 1) % k]
    tx = rng.normal((batch, d_in)) * 1.2
    tlx, tly = rng.normal((max(2, batch // 4), d_in)), np.arange(max(2, batch // 4)) % k
    zs = [mdl.forward(params, x).z for x in sx]
    spec = epoch_kernel(cfg, zs, mdl.forward(params, tx).z, rng)
    D = rng.uniform(0.1, 1.0, 2)
    first = batch_objective(params, sx, sy, tx,
                            lambda d: omega(D, d, cfg.omega_min, cfg.use_alpha, cfg.use_epsilon),
                            cfg, spec, tlx, tly)
    w = first.weights.omega

    def loss(v):
        return batch_objective(params.unflatten(v), sx, sy, tx, w, cfg, spec, tlx,
                               tly).breakdown.total

    analytic = np.concatenate([g.ravel() for g in first.grads])
    flat = params.flatten()
    base = _kink_pattern(params, sx, sy, (tlx, tly), cfg.margin) + _kink_pattern(
        params, [tx], [None], (None, None), cfg.margin)
    worst, checked, excluded = 0.0, 0, 0
    for i in range(flat.size):
        kinked = False
        for sgn in (1.0, -1.0):
            v = flat.copy()
            v[i] += sgn * eps
            p = params.unflatten(v)
            pat = _kink_pattern(p, sx, sy, (tlx, tly), cfg.margin) + _kink_pattern(
                p, [tx], [None], (None, None), cfg.margin)
            kinked |= pat != base
        if kinked:
            excluded += 1
            continue
        v = flat.copy()
        v[i] = flat[i] + eps
        fp = loss(v)
        v[i] = flat[i] - eps
        fm = loss(v)
        fd = (fp - fm) / (2 * eps)
        a = analytic[i]
        worst = max(worst, float(abs(a - fd) / max(abs(a), abs(fd), floor)))
        checked += 1
    return GradCheckResult(seed, worst, checked, excluded)

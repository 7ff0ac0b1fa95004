"""Synthetic multi-source benchmarks, dataset CSV files and deterministic batching."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ParseError
from .numkit import Rng


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    domain_tag: str = ""

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidInputError("features must be a 2-D matrix")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError(f"dataset {self.domain_tag!r} has NaN/Inf features")
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise InvalidInputError("label count does not match row count")
            object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    def unlabeled(self) -> "Dataset":
        return Dataset(self.features, None, self.domain_tag)


@dataclass(frozen=True)
class Transform:
    """Rotation of the first two coordinates (degrees), uniform scale, then translation."""

    angle: float = 0.0
    scale: float = 1.0
    translation: tuple[float, ...] = ()

    def apply(self, X: np.ndarray) -> np.ndarray:
        X = X.copy()
        th = math.radians(self.angle)
        c, s = math.cos(th), math.sin(th)
        x0, x1 = X[:, 0].copy(), X[:, 1].copy()
        X[:, 0] = c * x0 - s * x1
        X[:, 1] = s * x0 + c * x1
        X *= self.scale
        t = np.zeros(X.shape[1])
        t[:len(self.translation)] = self.translation
        return X + t


IDENTITY = Transform()


@dataclass
class SynthConfig:
    n_classes: int = 6
    n_sources: int = 2
    dim: int = 8
    n_per_class: int = 200
    radius: float = 3.0
    noise: float = 0.5
    source_transforms: list[Transform] = field(default_factory=list)
    target_transform: Transform = IDENTITY
    mode: str = "global"
    # segment mode: class -> segment name, segment name -> matched source index
    segments: dict[int, str] = field(default_factory=dict)
    segment_source: dict[str, int] = field(default_factory=dict)

    def validate(self) -> None:
        if self.n_sources < 2 or self.n_classes < 2:
            raise InvalidInputError("need at least two sources and two classes")
        if self.dim < 2 or self.n_per_class < 1:
            raise InvalidInputError("dim must be >= 2 and n_per_class >= 1")
        if self.noise < 0 or self.radius <= 0:
            raise InvalidInputError("noise must be >= 0 and radius > 0")
        if len(self.source_transforms) not in (0, self.n_sources):
            raise InvalidInputError("one transform per source required")
        for t in [*self.source_transforms, self.target_transform]:
            if len(t.translation) > self.dim:
                raise InvalidInputError("translation longer than the feature dimension")
            if t.scale <= 0:
                raise InvalidInputError("transform scale must be positive")
        if self.mode not in ("global", "segment"):
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.mode == "segment":
            missing = [k for k in range(self.n_classes) if k not in self.segments]
            if missing:
                raise InvalidInputError(f"segment map misses classes {missing}")
            for seg in set(self.segments.values()):
                src = self.segment_source.get(seg)
                if src is None or not 0 <= src < self.n_sources:
                    raise InvalidInputError(f"segment {seg!r} has no valid matched source")

    def class_transform(self, domain: int | None, k: int) -> Transform:
        """Transform used for class ``k`` in source ``domain`` (None = target)."""
        if domain is None:
            return self.target_transform
        if self.mode == "segment" and self.segment_source[self.segments[k]] == domain:
            return self.target_transform
        return self.source_transforms[domain] if self.source_transforms else IDENTITY


def class_means(cfg: SynthConfig) -> np.ndarray:
    ang = 2.0 * np.pi * np.arange(cfg.n_classes) / cfg.n_classes
    mu = np.zeros((cfg.n_classes, cfg.dim))
    mu[:, 0] = cfg.radius * np.cos(ang)
    mu[:, 1] = cfg.radius * np.sin(ang)
    return mu


def _draw(cfg: SynthConfig, domain: int | None, rng: Rng, tag: str) -> Dataset:
    mu = class_means(cfg)
    blocks, labels = [], []
    for k in range(cfg.n_classes):
        centre = cfg.class_transform(domain, k).apply(mu[k:k + 1])
        noise = cfg.noise * rng.normal((cfg.n_per_class, cfg.dim))
        blocks.append(centre + noise)
        labels.append(np.full(cfg.n_per_class, k))
    return Dataset(np.vstack(blocks), np.concatenate(labels), tag)


def generate(cfg: SynthConfig, seed: int) -> tuple[list[Dataset], Dataset]:
    """Sources (labelled) and the target (labels kept for evaluation only)."""
    cfg.validate()
    root = Rng(seed)
    sources = [_draw(cfg, i, root.spawn(i + 1), f"source{i}") for i in range(cfg.n_sources)]
    target = _draw(cfg, None, root.spawn(0), "target")
    return sources, target


def standard_benchmark() -> SynthConfig:
    """Segment-mode benchmark used by the acceptance suite (K=6, M=2, D=8, 200/class).

    Source 0 matches the target on classes 0-3 and sees classes 4-5 rotated
    by 30 degrees. Source 1 matches on classes 4-5 and sees classes 0-3
    rotated by 60 degrees, which lands each of them on a neighbouring class's
    target position. So source 1 is the farther, label-conflicting domain.
    """
    return SynthConfig(
        n_classes=6, n_sources=2, dim=8, n_per_class=200, radius=3.0, noise=0.5,
        source_transforms=[Transform(angle=30.0), Transform(angle=60.0)],
        target_transform=IDENTITY,
        mode="segment",
        segments={0: "X", 1: "X", 2: "X", 3: "X", 4: "Y", 5: "Y"},
        segment_source={"X": 0, "Y": 1},
    )


def save_csv(dataset: Dataset, path) -> None:
    D = dataset.dim
    header = [f"f{j}" for j in range(D)]
    if dataset.labeled:
        header.append("label")
    lines = [",".join(header)]
    for i, row in enumerate(dataset.features):
        fields = ["%.17g" % v for v in row]
        if dataset.labeled:
            fields.append(str(int(dataset.labels[i])))
        lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_csv(path, domain_tag: str | None = None) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    header = lines[0].strip().split(",")
    has_label = header[-1] == "label"
    n_feat = len(header) - int(has_label)
    if n_feat < 1 or header[:n_feat] != [f"f{j}" for j in range(n_feat)]:
        raise ParseError("header must be f0,...,f{D-1}[,label]", path, 1)
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(parts)}", path, lineno)
        try:
            vals = [float(p) for p in parts[:n_feat]]
        except ValueError:
            raise ParseError("malformed number", path, lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("NaN/Inf feature", path, lineno)
        rows.append(vals)
        if has_label:
            try:
                labels.append(int(parts[-1]))
            except ValueError:
                raise ParseError(f"non-integer label {parts[-1]!r}", path, lineno) from None
    X = np.array(rows, dtype=np.float64).reshape(len(rows), n_feat)
    return Dataset(X, np.array(labels, dtype=np.int64) if has_label else None,
                   domain_tag if domain_tag is not None else path.stem)


def batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """One shuffled pass over ``range(n)``; the last batch may be short."""
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]

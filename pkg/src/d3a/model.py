"""Feature extractor, projection head and shared classifier with hand-written backprop.

Network layout for dims ``(d_in, hidden, feat, K)``::

    features = relu(relu(X @ W1 + b1) @ W2 + b2)      # extractor F
    z        = relu(features @ P1) @ P2               # projection head g (no biases)
    logits   = z @ Wc + bc                            # classifier C

With the head disabled ``z = features``. ReLU's derivative at exactly 0 is 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolationError, InvalidInputError, ParseError
from .numkit import Rng, as_matrix

PARAM_NAMES = ("W1", "b1", "W2", "b2", "P1", "P2", "Wc", "bc")
HEAD_PARAMS = ("P1", "P2", "Wc", "bc")
CHECKPOINT_HEADER = "d3a-model v1"

_versions = itertools.count(1)


@dataclass
class ModelParams:
    dims: tuple[int, int, int, int]
    arrays: list[np.ndarray]
    use_head: bool = True
    version: int = field(default_factory=lambda: next(_versions), compare=False)

    def __post_init__(self):
        d_in, hidden, feat, k = self.dims
        expected = [(d_in, hidden), (hidden,), (hidden, feat), (feat,),
                    (feat, feat), (feat, feat), (feat, k), (k,)]
        if [a.shape for a in self.arrays] != expected:
            raise InvalidInputError(
                f"parameter shapes {[a.shape for a in self.arrays]} do not chain for dims {self.dims}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[PARAM_NAMES.index(name)]

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def unflatten(self, flat) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise InvalidInputError(f"flat vector has {flat.size} entries, expected {self.size}")
        out, pos = [], 0
        for a in self.arrays:
            out.append(flat[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        return ModelParams(self.dims, out, self.use_head)

    def with_arrays(self, arrays) -> "ModelParams":
        return ModelParams(self.dims, [np.asarray(a, dtype=np.float64) for a in arrays],
                           self.use_head)

    def lr_scales(self, head_multiplier: float) -> list[float]:
        """Per-array learning-rate factor: head and classifier get the multiplier."""
        return [head_multiplier if n in HEAD_PARAMS else 1.0 for n in PARAM_NAMES]


@dataclass
class ForwardCache:
    version: int
    X: np.ndarray
    a1: np.ndarray
    h1: np.ndarray
    a2: np.ndarray
    features: np.ndarray
    b: np.ndarray
    r: np.ndarray
    z: np.ndarray
    logits: np.ndarray


def init(dims, rng: Rng, use_head: bool = True) -> ModelParams:
    """Fan-based uniform (Glorot) weights, zero biases."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise InvalidInputError(f"dims must be four positive sizes, got {dims}")
    d_in, hidden, feat, k = dims

    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, (fan_in, fan_out))

    arrays = [glorot(d_in, hidden), np.zeros(hidden),
              glorot(hidden, feat), np.zeros(feat),
              glorot(feat, feat), glorot(feat, feat),
              glorot(feat, k), np.zeros(k)]
    return ModelParams(dims, arrays, use_head)


def _relu(x):
    return np.maximum(x, 0.0)


def forward(params: ModelParams, X) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.dims[0]:
        raise InvalidInputError(
            f"input has shape {X.shape}, expected (n, {params.dims[0]})")
    W1, b1, W2, b2, P1, P2, Wc, bc = params.arrays
    a1 = X @ W1 + b1
    h1 = _relu(a1)
    a2 = h1 @ W2 + b2
    feats = _relu(a2)
    if params.use_head:
        b = feats @ P1
        r = _relu(b)
        z = r @ P2
    else:
        b = r = np.empty((X.shape[0], 0))
        z = feats
    logits = z @ Wc + bc
    return ForwardCache(params.version, X, a1, h1, a2, feats, b, r, z, logits)


def predict_logits(params: ModelParams, X) -> np.ndarray:
    return forward(params, X).logits


def backward(params: ModelParams, caches, output_grads) -> list[np.ndarray]:
    """Accumulate parameter gradients over several forward passes.

    ``output_grads[i]`` is a mapping with optional keys ``"logits"``, ``"z"``
    and ``"features"`` holding the loss gradient w.r.t. those outputs of
    ``caches[i]``.
    """
    if len(caches) != len(output_grads):
        raise ContractViolationError("one gradient bundle per cache required")
    W1, b1, W2, b2, P1, P2, Wc, bc = params.arrays
    grads = [np.zeros_like(a) for a in params.arrays]
    for cache, og in zip(caches, output_grads):
        if cache.version != params.version:
            raise ContractViolationError("forward cache was produced by different parameters")
        dlogits = og.get("logits")
        dz = og.get("z")
        dz = np.zeros_like(cache.z) if dz is None else np.array(dz, dtype=np.float64)
        if dlogits is not None:
            if dlogits.shape != cache.logits.shape:
                raise ContractViolationError("logit gradient shape does not match cache")
            grads[6] += cache.z.T @ dlogits
            grads[7] += dlogits.sum(axis=0)
            dz = dz + dlogits @ Wc.T
        if dz.shape != cache.z.shape:
            raise ContractViolationError("z gradient shape does not match cache")
        if params.use_head:
            grads[5] += cache.r.T @ dz
            db = (dz @ P2.T) * (cache.b > 0)
            grads[4] += cache.features.T @ db
            dfeat = db @ P1.T
        else:
            dfeat = dz
        if og.get("features") is not None:
            dfeat = dfeat + og["features"]
        da2 = dfeat * (cache.a2 > 0)
        grads[2] += cache.h1.T @ da2
        grads[3] += da2.sum(axis=0)
        da1 = (da2 @ W2.T) * (cache.a1 > 0)
        grads[0] += cache.X.T @ da1
        grads[1] += da1.sum(axis=0)
    return grads


def min_abs_preactivation(cache: ForwardCache) -> float:
    """Smallest |pre-activation| over all ReLU inputs (kink proximity)."""
    vals = [np.abs(cache.a1).min(initial=np.inf), np.abs(cache.a2).min(initial=np.inf)]
    if cache.b.size:
        # a row of all-zero features gives b == 0 exactly, but the output is
        # locally flat there rather than kinked, so those rows are skipped
        live = np.any(cache.features != 0.0, axis=1)
        if live.any():
            vals.append(np.abs(cache.b[live]).min())
    return float(min(vals))


def save_checkpoint(params: ModelParams, path) -> None:
    dims = " ".join(str(d) for d in params.dims)
    if not params.use_head:
        dims += " nohead"
    lines = [CHECKPOINT_HEADER, dims]
    lines.extend(repr(float(v)) for v in params.flatten())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> ModelParams:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ParseError(f"missing '{CHECKPOINT_HEADER}' header", path, 1)
    if len(lines) < 2:
        raise ParseError("missing dims line", path, 2)
    tokens = lines[1].split()
    use_head = True
    if tokens and tokens[-1] == "nohead":
        use_head = False
        tokens = tokens[:-1]
    try:
        dims = tuple(int(t) for t in tokens)
    except ValueError:
        raise ParseError(f"bad dims line {lines[1]!r}", path, 2) from None
    if len(dims) != 4:
        raise ParseError("dims line must hold four sizes", path, 2)
    values = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ParseError(f"bad parameter value {line!r}", path, lineno) from None
    template = init(dims, Rng(0), use_head)
    if len(values) != template.size:
        raise ParseError(f"expected {template.size} parameters, found {len(values)}", path)
    flat = as_matrix(values, "parameters").ravel()
    return template.unflatten(flat)

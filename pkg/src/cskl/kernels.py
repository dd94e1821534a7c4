"""Gram matrix construction, normalization, combination and serialization.

Kernel banks hold N precomputed Gram matrices over a shared sample set,
trace-normalized so each kernel contributes the same total energy and
stabilized with a diagonal jitter so every matrix is strictly positive
definite. Everything downstream (the SVM solvers and the weight
optimizers) consumes banks built here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "KernelSpec",
    "Dataset",
    "GramMatrix",
    "KernelBank",
    "BankFormatError",
    "BankMagicError",
    "BankVersionError",
    "BankTruncatedError",
    "BankDimensionError",
    "compute_gram",
    "cross_gram",
    "trace_normalize",
    "stabilize",
    "combine",
    "build_bank",
    "subset_bank",
    "save_bank",
    "load_bank",
    "load_bank_csv",
    "save_groups",
    "load_groups",
]

DEFAULT_JITTER_SCALE = 1e-8

_KINDS = ("precomputed", "gaussian", "polynomial", "linear")


class BankFormatError(Exception):
    """Base class for kernel bank (de)serialization failures."""


class BankMagicError(BankFormatError):
    """File does not start with the expected magic bytes."""


class BankVersionError(BankFormatError):
    """File declares an unsupported format version."""


class BankTruncatedError(BankFormatError):
    """Payload shorter or longer than the header declares."""


class BankDimensionError(BankFormatError):
    """Declared dimensions or label values are inconsistent."""


@dataclass(frozen=True)
class KernelSpec:
    """Recipe for one kernel evaluation.

    kind is one of ``gaussian`` (uses ``width``), ``polynomial`` (uses
    ``degree`` and ``offset``), ``linear`` or ``precomputed``. When
    ``feature_subset`` is given the kernel is computed on those feature
    columns only.
    """

    kind: str
    width: float = 1.0
    degree: int = 2
    offset: float = 0.0
    feature_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError("gaussian width must be strictly positive")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be a positive integer")
            if self.offset < 0:
                raise ValueError("polynomial offset must be nonnegative")
        if self.feature_subset is not None and len(self.feature_subset) == 0:
            raise ValueError("feature_subset must be None or non-empty")


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (m samples x dim) with integer labels of length m."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array")
        if lab.shape != (pts.shape[0],):
            raise ValueError("labels length must match number of samples")
        if pts.shape[0] < 2:
            raise ValueError("need at least two samples")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        if np.unique(lab).size < 2:
            raise ValueError("need at least two distinct labels")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def n_samples(self) -> int:
        return self.points.shape[0]


def _require_symmetric(values: np.ndarray, tol: float = 1e-12) -> None:
    gap = np.abs(values - values.T)
    bound = tol * np.maximum(1.0, np.abs(values))
    if np.any(gap > bound):
        i, j = np.unravel_index(int(np.argmax(gap - bound)), values.shape)
        raise ValueError(f"matrix not symmetric at ({i},{j}): {values[i, j]} vs {values[j, i]}")


class GramMatrix:
    """Dense symmetric kernel matrix with cached trace.

    ``scale`` tracks the cumulative multiplier applied relative to the
    raw kernel of ``source``, so cross-kernels between train and test
    points can be rescaled consistently. Instances are immutable.
    """

    __slots__ = ("values", "trace", "source", "scale")

    def __init__(self, values, source: KernelSpec | None = None, scale: float = 1.0):
        vals = np.array(values, dtype=np.float64, copy=True, order="C")
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise ValueError("Gram matrix must be square")
        _require_symmetric(vals)
        vals.flags.writeable = False
        self.values = vals
        self.trace = float(np.trace(vals))
        self.source = source
        self.scale = float(scale)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def __repr__(self):
        kind = self.source.kind if self.source is not None else "raw"
        return f"GramMatrix(m={self.n_samples}, trace={self.trace:.6g}, source={kind})"


def _select_features(points: np.ndarray, spec: KernelSpec) -> np.ndarray:
    if spec.feature_subset is None:
        return points
    idx = np.asarray(spec.feature_subset, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= points.shape[1]:
        raise ValueError("feature_subset index out of range")
    return points[:, idx]


def _raw_kernel(xa: np.ndarray, xb: np.ndarray, spec: KernelSpec) -> np.ndarray:
    # overflow deliberately produces inf here; callers reject non-finite
    # entries with a pointed error naming the sample pair
    with np.errstate(over="ignore", invalid="ignore"):
        if spec.kind == "gaussian":
            sq = (
                np.sum(xa * xa, axis=1)[:, None]
                + np.sum(xb * xb, axis=1)[None, :]
                - 2.0 * (xa @ xb.T)
            )
            np.maximum(sq, 0.0, out=sq)
            return np.exp(-sq / (2.0 * spec.width**2))
        if spec.kind == "polynomial":
            return (xa @ xb.T + spec.offset) ** spec.degree
        if spec.kind == "linear":
            return xa @ xb.T
    raise ValueError(f"cannot evaluate kernel of kind {spec.kind!r}")


def compute_gram(data: Dataset, spec: KernelSpec) -> GramMatrix:
    """Evaluate ``spec`` on all pairs of ``data`` samples.

    Gaussian entries are exp(-||x_i - x_j||^2 / (2 width^2)), polynomial
    entries (x_i . x_j + offset)^degree, linear entries x_i . x_j. Any
    non-finite entry raises, naming the offending sample pair.
    """
    x = _select_features(data.points, spec)
    vals = _raw_kernel(x, x, spec)
    if spec.kind == "gaussian":
        np.fill_diagonal(vals, 1.0)
    vals = 0.5 * (vals + vals.T)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite kernel value for sample pair ({i}, {j})")
    return GramMatrix(vals, source=spec)


def cross_gram(data: Dataset, other: Dataset, spec: KernelSpec) -> np.ndarray:
    """Raw (unscaled) kernel block between two sample sets, shape (m, q)."""
    xa = _select_features(data.points, spec)
    xb = _select_features(other.points, spec)
    vals = _raw_kernel(xa, xb, spec)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise ValueError(f"non-finite kernel value for sample pair ({i}, {j})")
    return vals


def trace_normalize(gram: GramMatrix, target: float) -> GramMatrix:
    """Rescale so the trace equals ``target``. Trace must be positive."""
    if not gram.trace > 0:
        raise ValueError(f"trace must be positive to normalize, got {gram.trace}")
    if not target > 0:
        raise ValueError("normalization target must be positive")
    factor = target / gram.trace
    return GramMatrix(gram.values * factor, source=gram.source, scale=gram.scale * factor)


def stabilize(gram: GramMatrix, jitter: float) -> GramMatrix:
    """Add ``jitter`` to the diagonal, enforcing strict positive definiteness."""
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    if jitter == 0:
        return gram
    vals = gram.values + jitter * np.eye(gram.n_samples)
    return GramMatrix(vals, source=gram.source, scale=gram.scale)


class KernelBank:
    """Ordered kernels over one sample set, plus labels.

    ``groups`` optionally maps kernel index -> descriptor group name,
    used when reporting how many feature representations a solver
    selects. Immutable after construction.
    """

    __slots__ = ("kernels", "labels", "groups", "_stacked")

    def __init__(self, kernels, labels, groups: dict[int, str] | None = None):
        kernels = list(kernels)
        if not kernels:
            raise ValueError("bank needs at least one kernel")
        m = kernels[0].n_samples
        for k, gram in enumerate(kernels):
            if gram.n_samples != m:
                raise ValueError(f"kernel {k} has {gram.n_samples} samples, expected {m}")
        lab = np.array(labels, dtype=np.int64, copy=True)
        if lab.shape != (m,):
            raise ValueError(f"labels must have length {m}")
        lab.flags.writeable = False
        if groups is not None:
            groups = dict(groups)
            for k in groups:
                if not 0 <= k < len(kernels):
                    raise ValueError(f"group mapping references kernel {k} out of range")
        self.kernels = kernels
        self.labels = lab
        self.groups = groups
        self._stacked = None

    @property
    def n_kernels(self) -> int:
        return len(self.kernels)

    @property
    def n_samples(self) -> int:
        return self.kernels[0].n_samples

    @property
    def is_binary(self) -> bool:
        return bool(np.all(np.isin(self.labels, (-1, 1)))) and np.unique(self.labels).size <= 2

    def stacked(self) -> np.ndarray:
        """(N, m*m) row-major view of all kernels, cached for fast combines."""
        if self._stacked is None:
            m = self.n_samples
            self._stacked = np.stack([g.values.reshape(m * m) for g in self.kernels])
        return self._stacked

    def __getstate__(self):
        # the stacked cache doubles the pickle payload; rebuild it lazily
        return {"kernels": self.kernels, "labels": self.labels, "groups": self.groups}

    def __setstate__(self, state):
        self.kernels = state["kernels"]
        self.labels = state["labels"]
        self.groups = state["groups"]
        self._stacked = None

    def __repr__(self):
        return f"KernelBank(N={self.n_kernels}, m={self.n_samples})"


def combine(bank: KernelBank, weights) -> GramMatrix:
    """Weighted sum of the bank's kernels, sum_j gamma_j K_j."""
    gamma = np.asarray(getattr(weights, "gamma", weights), dtype=np.float64)
    if gamma.shape != (bank.n_kernels,):
        raise ValueError(f"expected {bank.n_kernels} weights, got {gamma.shape}")
    m = bank.n_samples
    vals = (gamma @ bank.stacked()).reshape(m, m)
    return GramMatrix(vals)


def combined_values(bank: KernelBank, gamma: np.ndarray) -> np.ndarray:
    """Like :func:`combine` but returns the bare array (solver hot path)."""
    m = bank.n_samples
    return np.ascontiguousarray((gamma @ bank.stacked()).reshape(m, m))


def build_bank(
    grams,
    labels,
    groups: dict[int, str] | None = None,
    target: float | None = None,
    jitter_scale: float = DEFAULT_JITTER_SCALE,
) -> KernelBank:
    """Assemble a bank: jitter each kernel, then normalize its trace.

    The target defaults to the sample count m, so after construction
    every kernel satisfies trace(K_j) = m and the capped-simplex weight
    constraint applies uniformly across kernels. The jitter defaults to
    1e-8 * (trace/m), enough to make x^T K x > 0 for all x != 0 without
    materially changing solutions.
    """
    grams = list(grams)
    if not grams:
        raise ValueError("bank needs at least one kernel")
    m = grams[0].n_samples
    if target is None:
        target = float(m)
    prepared = []
    for gram in grams:
        if not gram.trace > 0:
            raise ValueError("cannot bank a kernel with nonpositive trace")
        jittered = stabilize(gram, jitter_scale * gram.trace / m)
        prepared.append(trace_normalize(jittered, target))
    return KernelBank(prepared, labels, groups=groups)


def subset_bank(bank: KernelBank, idx) -> KernelBank:
    """Restrict every kernel and the labels to the given sample indices."""
    idx = np.asarray(idx, dtype=np.int64)
    kernels = [
        GramMatrix(g.values[np.ix_(idx, idx)], source=g.source, scale=g.scale)
        for g in bank.kernels
    ]
    return KernelBank(kernels, bank.labels[idx], groups=bank.groups)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = b"CSKB"
_VERSION = 1
_TAG_BY_KIND = {"precomputed": 0, "gaussian": 1, "polynomial": 2, "linear": 3}
_KIND_BY_TAG = {v: k for k, v in _TAG_BY_KIND.items()}


def _spec_params(spec: KernelSpec | None) -> tuple[int, float, float]:
    if spec is None:
        return 0, 0.0, 0.0
    tag = _TAG_BY_KIND[spec.kind]
    if spec.kind == "gaussian":
        return tag, spec.width, 0.0
    if spec.kind == "polynomial":
        return tag, float(spec.degree), spec.offset
    return tag, 0.0, 0.0


def _spec_from_params(tag: int, p0: float, p1: float) -> KernelSpec | None:
    kind = _KIND_BY_TAG.get(tag)
    if kind is None:
        raise BankDimensionError(f"unknown kernel spec tag {tag}")
    if kind == "precomputed":
        return None
    if kind == "gaussian":
        return KernelSpec("gaussian", width=p0)
    if kind == "polynomial":
        return KernelSpec("polynomial", degree=int(p0), offset=p1)
    return KernelSpec("linear")


def save_bank(bank: KernelBank, path) -> None:
    """Write the binary bank format (little-endian, magic ``CSKB``)."""
    path = Path(path)
    labels = bank.labels
    binary = bool(np.all(np.isin(labels, (-1, 1))))
    encoding = 0 if binary else 1
    if encoding == 1 and (labels.max() > np.iinfo(np.int32).max or labels.min() < np.iinfo(np.int32).min):
        raise BankDimensionError("labels out of range for 32-bit encoding")
    chunks = [
        _MAGIC,
        struct.pack("<III", _VERSION, bank.n_kernels, bank.n_samples),
        struct.pack("<B", encoding),
        labels.astype("<i1" if encoding == 0 else "<i4").tobytes(),
    ]
    for gram in bank.kernels:
        tag, p0, p1 = _spec_params(gram.source)
        chunks.append(struct.pack("<Bdd", tag, p0, p1))
        chunks.append(gram.values.astype("<f8", copy=False).tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_bank(path) -> KernelBank:
    """Read a bank written by :func:`save_bank`.

    Raises a distinct error per failure mode: BankMagicError,
    BankVersionError, BankTruncatedError, BankDimensionError.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != _MAGIC:
        raise BankMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 17:
        raise BankTruncatedError(f"{path}: header truncated at {len(raw)} bytes")
    version, n_kernels, m = struct.unpack_from("<III", raw, 4)
    if version != _VERSION:
        raise BankVersionError(f"{path}: unsupported version {version}")
    if n_kernels < 1 or m < 1:
        raise BankDimensionError(f"{path}: declares {n_kernels} kernels over {m} samples")
    (encoding,) = struct.unpack_from("<B", raw, 16)
    if encoding not in (0, 1):
        raise BankDimensionError(f"{path}: unknown label encoding {encoding}")
    label_bytes = m * (1 if encoding == 0 else 4)
    expected = 17 + label_bytes + n_kernels * (17 + 8 * m * m)
    if len(raw) != expected:
        raise BankTruncatedError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = 17
    labels = np.frombuffer(raw, dtype="<i1" if encoding == 0 else "<i4", count=m, offset=offset)
    labels = labels.astype(np.int64)
    if encoding == 0 and not np.all(np.isin(labels, (-1, 1))):
        raise BankDimensionError(f"{path}: binary encoding with labels outside {{-1,+1}}")
    offset += label_bytes
    kernels = []
    for _ in range(n_kernels):
        tag, p0, p1 = struct.unpack_from("<Bdd", raw, offset)
        offset += 17
        vals = np.frombuffer(raw, dtype="<f8", count=m * m, offset=offset).reshape(m, m)
        offset += 8 * m * m
        kernels.append(GramMatrix(vals, source=_spec_from_params(tag, p0, p1)))
    return KernelBank(kernels, labels)


def load_bank_csv(kernel_paths, labels_path) -> KernelBank:
    """Import one CSV per kernel (m x m comma-separated) plus a labels CSV."""
    labels = np.loadtxt(labels_path, delimiter=",", dtype=np.int64, ndmin=1)
    m = labels.shape[0]
    kernels = []
    for p in kernel_paths:
        vals = np.loadtxt(p, delimiter=",", dtype=np.float64, ndmin=2)
        if vals.shape != (m, m):
            raise BankDimensionError(f"{p}: expected {m}x{m} values, got {vals.shape}")
        kernels.append(GramMatrix(vals))
    if not kernels:
        raise BankDimensionError("no kernel CSV files given")
    return KernelBank(kernels, labels)


def save_groups(groups: dict[int, str], path) -> None:
    """Write the descriptor-group mapping, one ``kernel_index,group`` per line."""
    path = Path(path)
    lines = [f"{k},{groups[k]}" for k in sorted(groups)]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_groups(path) -> dict[int, str]:
    groups = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            idx, name = line.split(",", 1)
            groups[int(idx)] = name.strip()
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: expected 'kernel_index,group_name'") from exc
    return groups

"""Benchmark generation, multiclass reductions, t-sweeps and solver comparisons.

The synthetic benchmark draws two Gaussian classes (identity covariance,
means 0 and 3 per coordinate) and builds 18 kernels: gaussian and
polynomial kernels on each single feature and on all features jointly
(16 informative) plus 2 kernels computed on label-independent noise
features. Sweeps and comparisons operate on a full-sample bank plus a
stratified train/test split, so precomputed Caltech-style banks follow
the exact same path.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .kernels import (
    Dataset,
    GramMatrix,
    KernelBank,
    KernelSpec,
    build_bank,
    compute_gram,
)
from .optimizer import (
    CsklConfig,
    MklWeights,
    OptTrace,
    cskl_train,
    lpnorm_mkl_train,
    simplemkl_train,
)
from .svm import SvmConfig, SvmSolution

__all__ = [
    "SyntheticConfig",
    "ExperimentConfig",
    "SolverSpec",
    "SplitBank",
    "TrainedBinaryModel",
    "MulticlassModel",
    "SweepRow",
    "SweepReport",
    "ComparisonRow",
    "ComparisonReport",
    "stratified_split",
    "generate_synthetic",
    "generate_synthetic_split",
    "make_signal_noise_bank",
    "train_on_bank",
    "train_multiclass",
    "predict_multiclass",
    "sweep_t",
    "compare_solvers",
]


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for the two-Gaussian benchmark.

    The informative grid applies every (gaussian width x polynomial
    degree) choice to each single feature and to all features jointly,
    4 * (dim + 1) kernels; noise kernels are gaussian kernels on
    label-independent random features with width set to the median
    pairwise distance. Kernel parameters are free choices of this
    benchmark and are echoed into every report.
    """

    m: int = 500
    dim: int = 3
    mean_low: float = 0.0
    mean_high: float = 3.0
    seed: int = 0
    gaussian_widths: tuple[float, ...] = (0.5, 1.0)
    poly_degrees: tuple[int, ...] = (2, 3)
    poly_offset: float = 1.0
    n_noise: int = 2
    noise_dim: int = 1
    train_fraction: float = 0.5
    jitter_scale: float = 1e-8

    @property
    def n_kernels(self) -> int:
        return (len(self.gaussian_widths) + len(self.poly_degrees)) * (self.dim + 1) + self.n_noise


@dataclass(frozen=True)
class SolverSpec:
    """Which trainer to run and with what parameters."""

    name: str  # cskl | simplemkl | lpmkl
    svm: SvmConfig = field(default_factory=SvmConfig)
    t: int | None = None
    p: float | None = None
    gamma_step: str = "reduced_gradient"
    outer_tolerance: float = 1e-5
    max_outer_iters: int = 200
    certificate_tolerance: float = 1e-4

    def __post_init__(self):
        if self.name not in ("cskl", "simplemkl", "lpmkl"):
            raise ValueError(f"unknown solver {self.name!r}")
        if self.name == "cskl" and self.t is None:
            raise ValueError("cskl needs t")
        if self.name == "lpmkl" and (self.p is None or not self.p > 1):
            raise ValueError("lpmkl needs p > 1")

    @property
    def label(self) -> str:
        if self.name == "cskl":
            return f"cskl[t={self.t}]"
        if self.name == "lpmkl":
            return f"lpmkl[p={self.p:g}]"
        return "simplemkl"


@dataclass(frozen=True)
class ExperimentConfig:
    """Harness-level settings shared by sweeps and comparisons."""

    svm: SvmConfig = field(default_factory=SvmConfig)
    scheme: str = "one_vs_one"
    seed: int = 0
    train_fraction: float = 0.5
    gamma_step: str = "reduced_gradient"
    outer_tolerance: float = 1e-5
    max_outer_iters: int = 200
    certificate_tolerance: float = 1e-4
    jitter_scale: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if self.scheme not in ("one_vs_one", "one_vs_rest"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie strictly between 0 and 1")

    def solver_for(self, name: str, t: int | None = None, p: float | None = None) -> SolverSpec:
        return SolverSpec(
            name,
            svm=self.svm,
            t=t,
            p=p,
            gamma_step=self.gamma_step,
            outer_tolerance=self.outer_tolerance,
            max_outer_iters=self.max_outer_iters,
            certificate_tolerance=self.certificate_tolerance,
        )


@dataclass
class SplitBank:
    """A full-sample bank plus a train/test partition of its rows."""

    bank: KernelBank
    train_idx: np.ndarray
    test_idx: np.ndarray


def stratified_split(labels, fraction: float, rng: np.random.Generator):
    """Per-class shuffled split; returns sorted (train_idx, test_idx)."""
    labels = np.asarray(labels)
    train_parts, test_parts = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        perm = rng.permutation(idx)
        k = int(round(fraction * idx.shape[0]))
        train_parts.append(perm[:k])
        test_parts.append(perm[k:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def synthetic_kernel_grid(cfg: SyntheticConfig):
    """The informative kernel specs and their descriptor-group mapping."""
    specs: list[KernelSpec] = []
    groups: dict[int, str] = {}
    subsets: list[tuple[int, ...] | None] = [(i,) for i in range(cfg.dim)] + [None]
    names = [f"dim{i}" for i in range(cfg.dim)] + ["all"]
    for subset, name in zip(subsets, names):
        for w in cfg.gaussian_widths:
            groups[len(specs)] = name
            specs.append(KernelSpec("gaussian", width=w, feature_subset=subset))
        for q in cfg.poly_degrees:
            groups[len(specs)] = name
            specs.append(KernelSpec("polynomial", degree=q, offset=cfg.poly_offset, feature_subset=subset))
    return specs, groups


def _noise_gram(rng: np.random.Generator, m: int, dim: int, width_factor: float = 1.0) -> GramMatrix:
    """Gaussian kernel on pure-noise features.

    The width is ``width_factor`` times the median pairwise distance of
    the noise features, giving a high-variance Gram matrix with no label
    structure.
    """
    feats = rng.normal(size=(m, dim))
    sq = (
        np.sum(feats * feats, axis=1)[:, None]
        + np.sum(feats * feats, axis=1)[None, :]
        - 2.0 * feats @ feats.T
    )
    np.maximum(sq, 0.0, out=sq)
    dists = np.sqrt(sq[np.triu_indices(m, k=1)])
    sigma = width_factor * float(np.median(dists))
    if sigma <= 0:
        sigma = 1.0
    vals = np.exp(-sq / (2.0 * sigma**2))
    np.fill_diagonal(vals, 1.0)
    return GramMatrix(0.5 * (vals + vals.T))


def _synthetic_raw(cfg: SyntheticConfig):
    rng = np.random.default_rng(cfg.seed)
    m_neg = cfg.m // 2
    m_pos = cfg.m - m_neg
    pts = np.vstack(
        [
            cfg.mean_low + rng.normal(size=(m_neg, cfg.dim)),
            cfg.mean_high + rng.normal(size=(m_pos, cfg.dim)),
        ]
    )
    labels = np.concatenate([-np.ones(m_neg, dtype=np.int64), np.ones(m_pos, dtype=np.int64)])
    data = Dataset(pts, labels)
    specs, groups = synthetic_kernel_grid(cfg)
    grams = [compute_gram(data, spec) for spec in specs]
    for j in range(cfg.n_noise):
        groups[len(grams)] = f"noise{j}"
        grams.append(_noise_gram(rng, cfg.m, cfg.noise_dim))
    return data, grams, groups, rng


def generate_synthetic_split(cfg: SyntheticConfig) -> SplitBank:
    """Full-sample synthetic bank with a stratified train/test partition."""
    data, grams, groups, rng = _synthetic_raw(cfg)
    bank = build_bank(grams, data.labels, groups=groups, jitter_scale=cfg.jitter_scale)
    train_idx, test_idx = stratified_split(data.labels, cfg.train_fraction, rng)
    return SplitBank(bank, train_idx, test_idx)


def generate_synthetic(cfg: SyntheticConfig):
    """Train/test datasets plus the normalized, stabilized training bank.

    Fully reproducible from the seed: two calls with equal configs yield
    bitwise-identical banks.
    """
    data, grams, groups, rng = _synthetic_raw(cfg)
    train_idx, test_idx = stratified_split(data.labels, cfg.train_fraction, rng)
    train = Dataset(data.points[train_idx], data.labels[train_idx])
    test = Dataset(data.points[test_idx], data.labels[test_idx])
    train_grams = [
        GramMatrix(g.values[np.ix_(train_idx, train_idx)], source=g.source) for g in grams
    ]
    bank = build_bank(train_grams, train.labels, groups=groups, jitter_scale=cfg.jitter_scale)
    return train, test, bank


def make_signal_noise_bank(
    m: int = 160,
    n_signal: int = 4,
    n_noise: int = 16,
    delta: float = 4.0,
    elongation: float = 25.0,
    angle_deg: float = 60.0,
    noise_width_factor: float = 0.5,
    seed: int = 0,
    jitter_scale: float = 1e-8,
) -> SplitBank:
    """Constructed bank where exactly the signal subset should be selected.

    The signal group is one linear kernel on strongly anisotropic
    two-Gaussian data (class means +-delta/2 along the first axis,
    covariance elongated along a tilted direction), replicated n_signal
    times. Because the budget t adds the copies at weight one each, t
    directly scales the combined signal kernel, sweeping the classifier
    from heavily regularized (t=1, far below the optimal margin) to well
    fit (t = n_signal). The noise kernels are gaussian kernels on
    label-independent features; once t exceeds n_signal they are forced
    into the combination and memorize training points, hurting test
    accuracy. Intermediate t therefore beats both extremes by a clear
    margin.
    """
    rng = np.random.default_rng(seed)
    half = m // 2
    labels = np.concatenate([-np.ones(half, dtype=np.int64), np.ones(m - half, dtype=np.int64)])
    yv = labels.astype(np.float64)
    theta = np.radians(angle_deg)
    along = np.array([np.cos(theta), np.sin(theta)])
    spread = rng.normal(size=(m, 2)) + np.sqrt(elongation) * rng.normal(size=(m, 1)) * along
    points = 0.5 * delta * yv[:, None] * np.array([1.0, 0.0]) + spread
    signal = GramMatrix(points @ points.T)
    grams = []
    groups = {}
    for j in range(n_signal):
        groups[len(grams)] = f"signal{j}"
        grams.append(signal)
    for j in range(n_noise):
        groups[len(grams)] = f"noise{j}"
        grams.append(_noise_gram(rng, m, 1, width_factor=noise_width_factor))
    bank = build_bank(grams, labels, groups=groups, jitter_scale=jitter_scale)
    train_idx, test_idx = stratified_split(labels, 0.5, rng)
    return SplitBank(bank, train_idx, test_idx)


# ---------------------------------------------------------------------------
# training over splits
# ---------------------------------------------------------------------------


@dataclass
class TrainedBinaryModel:
    """A binary MKL model plus what is needed to score new bank rows."""

    task_id: str
    positive_class: int
    negative_class: int | None  # None means one-vs-rest
    train_rows: np.ndarray
    task_labels: np.ndarray
    kernel_factors: np.ndarray
    weights: MklWeights
    solution: SvmSolution
    trace: OptTrace

    def decisions(self, bank: KernelBank, eval_idx) -> np.ndarray:
        eval_idx = np.asarray(eval_idx, dtype=np.int64)
        z = self.solution.alpha * self.task_labels
        out = np.full(eval_idx.shape[0], self.solution.bias)
        for j in np.flatnonzero(self.weights.gamma > 0):
            block = bank.kernels[j].values[np.ix_(self.train_rows, eval_idx)]
            out += (self.weights.gamma[j] * self.kernel_factors[j]) * (z @ block)
        return out

    @property
    def groups_selected(self) -> int:
        return count_groups_selected(self.weights, None)


def count_groups_selected(weights: MklWeights, groups: dict[int, str] | None) -> int:
    """Distinct descriptor groups carrying weight above 1e-6."""
    sel = weights.selected
    if groups is None:
        return int(sel.shape[0])
    return len({groups.get(int(j), f"kernel{j}") for j in sel})


def _task_bank(bank: KernelBank, train_rows, task_labels, jitter_scale: float):
    """Restrict the bank to task rows, then re-jitter and re-normalize.

    Returns the task-local bank plus the per-kernel scale factor applied,
    which must also multiply any cross block used for prediction.
    """
    train_rows = np.asarray(train_rows, dtype=np.int64)
    m = train_rows.shape[0]
    kernels = []
    factors = np.empty(bank.n_kernels)
    eye = np.eye(m)
    for j, g in enumerate(bank.kernels):
        block = g.values[np.ix_(train_rows, train_rows)]
        tr = float(np.trace(block))
        if not tr > 0:
            raise ValueError(f"kernel {j} has nonpositive trace on the task rows")
        block = block + (jitter_scale * tr / m) * eye
        factor = m / float(np.trace(block))
        kernels.append(GramMatrix(block * factor, source=g.source, scale=g.scale * factor))
        factors[j] = factor
    return KernelBank(kernels, task_labels, groups=bank.groups), factors


def run_solver(bank: KernelBank, spec: SolverSpec):
    """Dispatch one trainer run; returns (weights, solution, trace)."""
    if spec.name == "cskl":
        cfg = CsklConfig(
            t=spec.t,
            svm=spec.svm,
            outer_tolerance=spec.outer_tolerance,
            max_outer_iters=spec.max_outer_iters,
            gamma_step=spec.gamma_step,
            certificate_tolerance=spec.certificate_tolerance,
        )
        return cskl_train(bank, cfg)
    kwargs = dict(
        outer_tolerance=spec.outer_tolerance,
        max_outer_iters=spec.max_outer_iters,
        certificate_tolerance=spec.certificate_tolerance,
    )
    if spec.name == "simplemkl":
        return simplemkl_train(bank, spec.svm, **kwargs)
    return lpnorm_mkl_train(bank, spec.p, spec.svm, **kwargs)


def train_on_bank(
    bank: KernelBank,
    train_rows,
    spec: SolverSpec,
    task_id: str = "binary",
    positive_class: int = 1,
    negative_class: int | None = -1,
    relabel=None,
    jitter_scale: float = 1e-8,
) -> TrainedBinaryModel:
    """Train one binary model on a row subset of a full-sample bank.

    ``relabel`` maps the bank's labels on the task rows to {+1, -1}; by
    default the labels are assumed to already be binary.
    """
    train_rows = np.asarray(train_rows, dtype=np.int64)
    raw = bank.labels[train_rows]
    task_labels = raw if relabel is None else relabel(raw)
    task_labels = np.asarray(task_labels, dtype=np.float64)
    task_bank, factors = _task_bank(bank, train_rows, task_labels.astype(np.int64), jitter_scale)
    weights, solution, trace = run_solver(task_bank, spec)
    return TrainedBinaryModel(
        task_id=task_id,
        positive_class=positive_class,
        negative_class=negative_class,
        train_rows=train_rows,
        task_labels=task_labels,
        kernel_factors=factors,
        weights=weights,
        solution=solution,
        trace=trace,
    )


def predict_binary(model: TrainedBinaryModel, bank: KernelBank, eval_idx) -> np.ndarray:
    """Predicted labels on bank rows; sign(0) counts as +1."""
    f = model.decisions(bank, eval_idx)
    return np.where(f >= 0, model.positive_class, model.negative_class)


def binary_accuracy(model: TrainedBinaryModel, bank: KernelBank, eval_idx) -> float:
    eval_idx = np.asarray(eval_idx, dtype=np.int64)
    truth = bank.labels[eval_idx]
    f = model.decisions(bank, eval_idx)
    if model.negative_class is None:
        pred_pos = f >= 0
        return float(np.mean(pred_pos == (truth == model.positive_class)))
    pred = np.where(f >= 0, model.positive_class, model.negative_class)
    return float(np.mean(pred == truth))


# ---------------------------------------------------------------------------
# multiclass reductions
# ---------------------------------------------------------------------------


@dataclass
class MulticlassModel:
    scheme: str
    class_ids: np.ndarray
    models: list[TrainedBinaryModel]
    failures: list[tuple[str, str]] = field(default_factory=list)


def _binary_task_list(labels, train_idx, scheme: str):
    classes = np.unique(labels[train_idx])
    tasks = []
    if scheme == "one_vs_one":
        for ia, a in enumerate(classes):
            for b in classes[ia + 1 :]:
                tasks.append((f"{a}v{b}", int(a), int(b)))
    else:
        for c in classes:
            tasks.append((f"{c}vrest", int(c), None))
    return classes, tasks


def train_multiclass(
    bank: KernelBank,
    train_idx,
    spec: SolverSpec,
    scheme: str = "one_vs_one",
    jitter_scale: float = 1e-8,
    threads: int = 1,
) -> MulticlassModel:
    """One binary model per class pair (1-vs-1) or per class (1-vs-rest).

    A task that fails (infeasible nu, solver error) is recorded under
    ``failures`` and the remaining tasks still complete.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    labels = bank.labels
    classes, tasks = _binary_task_list(labels, train_idx, scheme)
    args = []
    for task_id, a, b in tasks:
        if b is None:
            rows = train_idx
            relabel = _one_vs_rest_relabel(a)
        else:
            rows = train_idx[np.isin(labels[train_idx], (a, b))]
            relabel = _pair_relabel(a)
        args.append((bank, rows, task_id, a, b, relabel, jitter_scale, spec))
    results = _parallel_map(_train_task, args, threads)
    model = MulticlassModel(scheme=scheme, class_ids=classes, models=[])
    for (task_id, _a, _b), res in zip(tasks, results):
        if isinstance(res, str):
            model.failures.append((task_id, res))
        else:
            model.models.append(res)
    return model


class _one_vs_rest_relabel:
    def __init__(self, positive):
        self.positive = positive

    def __call__(self, raw):
        return np.where(raw == self.positive, 1, -1)


class _pair_relabel:
    def __init__(self, positive):
        self.positive = positive

    def __call__(self, raw):
        return np.where(raw == self.positive, 1, -1)


def _train_task(bank, rows, task_id, a, b, relabel, jitter_scale, spec):
    try:
        return train_on_bank(
            bank,
            rows,
            spec,
            task_id=task_id,
            positive_class=a,
            negative_class=b,
            relabel=relabel,
            jitter_scale=jitter_scale,
        )
    except Exception as exc:  # noqa: BLE001 - error-path contract: report, continue
        return f"{type(exc).__name__}: {exc}"


def _parallel_map(fn, args_list, threads: int):
    if threads <= 1 or len(args_list) <= 1:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *a) for a in args_list]
        return [f.result() for f in futures]


def predict_multiclass(model: MulticlassModel, bank: KernelBank, eval_idx) -> np.ndarray:
    """Majority vote (1-vs-1, ties by summed decisions then lowest class
    id) or argmax decision value (1-vs-rest)."""
    eval_idx = np.asarray(eval_idx, dtype=np.int64)
    classes = model.class_ids
    pos = {int(c): k for k, c in enumerate(classes)}
    n = eval_idx.shape[0]
    if model.scheme == "one_vs_rest":
        scores = np.full((n, classes.shape[0]), -np.inf)
        for bm in model.models:
            scores[:, pos[bm.positive_class]] = bm.decisions(bank, eval_idx)
        return classes[np.argmax(scores, axis=1)]
    votes = np.zeros((n, classes.shape[0]), dtype=np.int64)
    margin = np.zeros((n, classes.shape[0]))
    for bm in model.models:
        f = bm.decisions(bank, eval_idx)
        a = pos[bm.positive_class]
        b = pos[bm.negative_class]
        won_a = f >= 0
        votes[won_a, a] += 1
        votes[~won_a, b] += 1
        margin[:, a] += f
        margin[:, b] -= f
    # lexicographic: votes, then summed decision values, then lowest id
    best = np.zeros(n, dtype=np.int64)
    for i in range(n):
        order = np.lexsort((classes, -margin[i], -votes[i]))
        best[i] = order[0]
    return classes[best]


def multiclass_accuracy(model: MulticlassModel, bank: KernelBank, eval_idx) -> float:
    eval_idx = np.asarray(eval_idx, dtype=np.int64)
    pred = predict_multiclass(model, bank, eval_idx)
    return float(np.mean(pred == bank.labels[eval_idx]))


# ---------------------------------------------------------------------------
# sweeps and comparisons
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    t: int
    accuracy: float
    gamma: np.ndarray
    n_selected: float
    n_groups: float
    converged: bool
    outer_iterations: int
    wall_time: float


@dataclass
class SweepReport:
    rows: list[SweepRow]
    config: dict

    def accuracy_by_t(self):
        return [(row.t, row.accuracy) for row in self.rows]


@dataclass
class ComparisonRow:
    task_id: str
    solver: str
    accuracy: float
    n_selected: float
    n_groups: float
    ratio_vs_first: float | None
    converged: bool
    error: str | None = None


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    wins: dict
    config: dict


def _sweep_one(bank, train_idx, test_idx, t, cfg: ExperimentConfig):
    started = time.perf_counter()
    spec = cfg.solver_for("cskl", t=t)
    if np.unique(bank.labels).size > 2 or not set(np.unique(bank.labels)) <= {-1, 1}:
        model = train_multiclass(
            bank, train_idx, spec, scheme=cfg.scheme, jitter_scale=cfg.jitter_scale
        )
        for bm in model.models:  # re-validate constraints at report time
            bm.weights.validate()
        acc = multiclass_accuracy(model, bank, test_idx)
        gammas = np.mean([bm.weights.gamma for bm in model.models], axis=0)
        n_sel = float(np.mean([bm.weights.selected.shape[0] for bm in model.models]))
        n_grp = float(
            np.mean([count_groups_selected(bm.weights, bank.groups) for bm in model.models])
        )
        conv = all(bm.trace.converged for bm in model.models) and not model.failures
        iters = int(np.max([len(bm.trace.entries) for bm in model.models]))
    else:
        bm = train_on_bank(bank, train_idx, spec, jitter_scale=cfg.jitter_scale)
        bm.weights.validate()
        acc = binary_accuracy(bm, bank, test_idx)
        gammas = bm.weights.gamma
        n_sel = float(bm.weights.selected.shape[0])
        n_grp = float(count_groups_selected(bm.weights, bank.groups))
        conv = bm.trace.converged
        iters = len(bm.trace.entries)
    return SweepRow(
        t=t,
        accuracy=acc,
        gamma=gammas,
        n_selected=n_sel,
        n_groups=n_grp,
        converged=conv,
        outer_iterations=iters,
        wall_time=time.perf_counter() - started,
    )


def sweep_t(bank: KernelBank, t_values, cfg: ExperimentConfig) -> SweepReport:
    """Train the capped-simplex solver at each t and score the test split."""
    t_values = [int(t) for t in t_values]
    for t in t_values:
        if not 1 <= t <= bank.n_kernels:
            raise ValueError(f"t={t} outside 1..{bank.n_kernels}")
    rng = np.random.default_rng(cfg.seed)
    train_idx, test_idx = stratified_split(bank.labels, cfg.train_fraction, rng)
    args = [(bank, train_idx, test_idx, t, cfg) for t in t_values]
    rows = _parallel_map(_sweep_one, args, cfg.threads)
    return SweepReport(rows=rows, config=_echo_config(cfg, bank))


def _compare_one(bank, rows, task_id, a, b, relabel, test_rows, spec, cfg):
    try:
        bm = train_on_bank(
            bank,
            rows,
            spec,
            task_id=task_id,
            positive_class=a,
            negative_class=b,
            relabel=relabel,
            jitter_scale=cfg.jitter_scale,
        )
    except Exception as exc:  # noqa: BLE001 - error-path contract: report, continue
        return ComparisonRow(
            task_id=task_id,
            solver=spec.label,
            accuracy=float("nan"),
            n_selected=float("nan"),
            n_groups=float("nan"),
            ratio_vs_first=None,
            converged=False,
            error=f"{type(exc).__name__}: {exc}",
        )
    bm.weights.validate()  # re-validate constraints at report time
    return ComparisonRow(
        task_id=task_id,
        solver=spec.label,
        accuracy=binary_accuracy(bm, bank, test_rows),
        n_selected=float(bm.weights.selected.shape[0]),
        n_groups=float(count_groups_selected(bm.weights, bank.groups)),
        ratio_vs_first=None,
        converged=bm.trace.converged,
    )


def compare_solvers(bank: KernelBank, solvers, cfg: ExperimentConfig) -> ComparisonReport:
    """Run every solver on every binary task and tally pairwise wins.

    The first solver is the reference: per-task accuracy ratios and the
    win/tie/loss counts are taken against it. Ties are tracked separately
    so wins + losses always equals the number of decided tasks.
    """
    solvers = list(solvers)
    if len(solvers) < 2:
        raise ValueError("need at least two solver specifications to compare")
    rng = np.random.default_rng(cfg.seed)
    train_idx, test_idx = stratified_split(bank.labels, cfg.train_fraction, rng)
    labels = bank.labels
    if np.unique(labels).size > 2 or not set(np.unique(labels)) <= {-1, 1}:
        _classes, tasks = _binary_task_list(labels, train_idx, cfg.scheme)
    else:
        tasks = [("binary", 1, -1)]
    args = []
    for task_id, a, b in tasks:
        if b is None:
            rows = train_idx
            test_rows = test_idx
            relabel = _one_vs_rest_relabel(a)
        elif task_id == "binary":
            rows = train_idx
            test_rows = test_idx
            relabel = None
        else:
            rows = train_idx[np.isin(labels[train_idx], (a, b))]
            test_rows = test_idx[np.isin(labels[test_idx], (a, b))]
            relabel = _pair_relabel(a)
        for spec in solvers:
            args.append((bank, rows, task_id, a, b, relabel, test_rows, spec, cfg))
    rows_out = _parallel_map(_compare_one, args, cfg.threads)
    by_task: dict[str, dict[str, ComparisonRow]] = {}
    for row in rows_out:
        by_task.setdefault(row.task_id, {})[row.solver] = row
    first = solvers[0].label
    for task_rows in by_task.values():
        ref = task_rows.get(first)
        if ref is None or ref.error is not None:
            continue
        for row in task_rows.values():
            if row.error is None and ref.accuracy > 0:
                row.ratio_vs_first = row.accuracy / ref.accuracy
    wins = {}
    for spec in solvers[1:]:
        w = t = l = failed = 0
        for task_rows in by_task.values():
            ref = task_rows.get(first)
            other = task_rows.get(spec.label)
            if ref is None or other is None or ref.error or other.error:
                failed += 1
                continue
            if ref.accuracy > other.accuracy:
                w += 1
            elif ref.accuracy < other.accuracy:
                l += 1
            else:
                t += 1
        wins[spec.label] = {"wins": w, "ties": t, "losses": l, "failed": failed}
    return ComparisonReport(rows=rows_out, wins=wins, config=_echo_config(cfg, bank))


def _echo_config(cfg: ExperimentConfig, bank: KernelBank) -> dict:
    return {
        "svm_variant": cfg.svm.variant,
        "c": cfg.svm.c,
        "nu": cfg.svm.nu,
        "kkt_tolerance": cfg.svm.kkt_tolerance,
        "scheme": cfg.scheme,
        "seed": cfg.seed,
        "train_fraction": cfg.train_fraction,
        "gamma_step": cfg.gamma_step,
        "outer_tolerance": cfg.outer_tolerance,
        "max_outer_iters": cfg.max_outer_iters,
        "certificate_tolerance": cfg.certificate_tolerance,
        "jitter_scale": cfg.jitter_scale,
        "threads": cfg.threads,
        "n_kernels": bank.n_kernels,
        "n_samples": bank.n_samples,
    }

"""Command-line entry point: bank generation, training, sweeps, comparisons.

Subcommands: gen-synthetic, train, sweep, compare, inspect-bank. Every
JSON report echoes the fully resolved configuration so a run can be
reproduced from its report alone, and all outputs are written atomically
(temp file then rename). Exit codes are a stable contract: 0 success,
1 validation error, 2 I/O or format error, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .experiments import ExperimentConfig, SolverSpec, SyntheticConfig
from .kernels import (
    BankFormatError,
    KernelBank,
    load_bank,
    load_bank_csv,
    load_groups,
    save_bank,
    save_groups,
)
from .svm import SmoNonConvergenceError, SvmConfig

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_NONCONVERGENCE = 3


class ValidationError(ValueError):
    """Configuration rejected before any computation starts."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; our contract reserves
    # 2 for I/O, so remap anything argparse rejects to the validation code.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    def __init__(self, message):
        super().__init__(message)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_json(path: Path, payload: dict) -> None:
    _write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    _write_text(path, "\n".join(lines) + "\n")


def _load_any_bank(path: str) -> KernelBank:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"bank path {path} does not exist")
    if p.is_dir():
        kernel_files = sorted(p.glob("*.csv"))
        kernel_files = [f for f in kernel_files if f.name != "labels.csv"]
        labels = p / "labels.csv"
        if not labels.exists():
            raise FileNotFoundError(f"{path}: CSV bank directory needs labels.csv")
        return load_bank_csv(kernel_files, labels)
    return load_bank(p)


def _resolve_bank(args) -> KernelBank:
    if args.bank is None:
        raise ValidationError("--bank is required")
    if args.labels is not None:
        # explicit CSV import: --bank is a directory or comma-joined list
        p = Path(args.bank)
        if p.is_dir():
            kernel_files = sorted(f for f in p.glob("*.csv") if f.name != Path(args.labels).name)
        else:
            kernel_files = [Path(x) for x in args.bank.split(",")]
        bank = load_bank_csv(kernel_files, args.labels)
    else:
        bank = _load_any_bank(args.bank)
    if args.groups:
        groups = load_groups(args.groups)
        bank = KernelBank(bank.kernels, bank.labels, groups=groups)
    return bank


def _svm_config(args) -> SvmConfig:
    variant = args.svm
    if variant not in ("c", "nu"):
        raise ValidationError(f"--svm must be c or nu, got {variant!r}")
    if args.c is not None and args.c <= 0:
        raise ValidationError("--c must be strictly positive")
    if args.nu is not None and not 0 < args.nu <= 1:
        raise ValidationError("--nu must lie in (0, 1]")
    try:
        return SvmConfig(
            variant=variant,
            c=args.c if args.c is not None else 10.0,
            nu=args.nu if args.nu is not None else 0.2,
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc


def _experiment_config(args, svm: SvmConfig) -> ExperimentConfig:
    if args.epsilon is not None and args.epsilon <= 0:
        raise ValidationError("--epsilon must be strictly positive")
    if args.threads < 1:
        raise ValidationError("--threads must be at least 1")
    gamma_step = {"rg": "reduced_gradient", "lp": "lp_direction"}.get(args.gamma_step)
    if gamma_step is None:
        raise ValidationError(f"--gamma-step must be rg or lp, got {args.gamma_step!r}")
    scheme = {"1v1": "one_vs_one", "1vrest": "one_vs_rest"}.get(args.scheme)
    if scheme is None:
        raise ValidationError(f"--scheme must be 1v1 or 1vrest, got {args.scheme!r}")
    if args.max_outer is not None and args.max_outer < 1:
        raise ValidationError("--max-outer must be at least 1")
    return ExperimentConfig(
        svm=svm,
        scheme=scheme,
        seed=args.seed,
        train_fraction=0.5,
        gamma_step=gamma_step,
        outer_tolerance=args.epsilon if args.epsilon is not None else 1e-5,
        max_outer_iters=args.max_outer if args.max_outer is not None else 200,
        threads=args.threads,
    )


def _echo(args, extra: dict) -> dict:
    payload = {
        "command": args.command,
        "seed": args.seed,
        "svm": getattr(args, "svm", None),
        "c": getattr(args, "c", None) if getattr(args, "c", None) is not None else 10.0,
        "nu": getattr(args, "nu", None) if getattr(args, "nu", None) is not None else 0.2,
        "epsilon": getattr(args, "epsilon", None) if getattr(args, "epsilon", None) is not None else 1e-5,
        "gamma_step": getattr(args, "gamma_step", "rg"),
        "threads": getattr(args, "threads", 1),
    }
    payload.update(extra)
    return payload


def _solver_spec(args, cfg: ExperimentConfig, n_kernels: int) -> SolverSpec:
    name = args.solver
    if name is None:
        raise ValidationError("--solver is required")
    if name not in ("cskl", "simplemkl", "lpmkl"):
        raise ValidationError(f"--solver must be cskl, simplemkl or lpmkl, got {name!r}")
    if name == "cskl":
        if args.t is None:
            raise ValidationError("--solver cskl requires --t")
        if not 1 <= args.t <= n_kernels:
            raise ValidationError(f"--t must lie in 1..{n_kernels}, got {args.t}")
    elif args.t is not None:
        raise ValidationError("--t only applies to --solver cskl")
    if name == "lpmkl":
        if args.p is None:
            raise ValidationError("--solver lpmkl requires --p")
        if args.p <= 1:
            raise ValidationError("--p must exceed 1")
    elif args.p is not None:
        raise ValidationError("--p only applies to --solver lpmkl")
    return cfg.solver_for(name, t=args.t, p=args.p)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"--out {out} is not a directory")
    cfg = SyntheticConfig(
        m=args.m,
        dim=args.dim,
        seed=args.seed,
        n_noise=args.noise_kernels,
    )
    if cfg.m < 4:
        raise ValidationError("--m must be at least 4")
    if cfg.dim < 1:
        raise ValidationError("--dim must be at least 1")
    split = experiments.generate_synthetic_split(cfg)
    bank = split.bank
    out.mkdir(parents=True, exist_ok=True)
    bank_path = out / "bank.cskb"
    save_bank(bank, bank_path)
    save_groups(bank.groups, out / "groups.txt")
    summary = _echo(
        args,
        {
            "bank_path": bank_path.name,
            "groups_path": "groups.txt",
            "n_kernels": bank.n_kernels,
            "n_samples": bank.n_samples,
            "m": cfg.m,
            "dim": cfg.dim,
            "mean_low": cfg.mean_low,
            "mean_high": cfg.mean_high,
            "gaussian_widths": list(cfg.gaussian_widths),
            "poly_degrees": list(cfg.poly_degrees),
            "poly_offset": cfg.poly_offset,
            "n_noise": cfg.n_noise,
            "noise_dim": cfg.noise_dim,
            "traces": [g.trace for g in bank.kernels],
        },
    )
    _write_json(out / "summary.json", summary)
    print(f"wrote bank of {bank.n_kernels} kernels over {bank.n_samples} samples to {bank_path}")
    print(f"traces: min={min(summary['traces']):.9g} max={max(summary['traces']):.9g}")
    return EXIT_OK


def cmd_train(args) -> int:
    bank = _resolve_bank(args)
    svm = _svm_config(args)
    cfg = _experiment_config(args, svm)
    spec = _solver_spec(args, cfg, bank.n_kernels)
    if not bank.is_binary:
        raise ValidationError("train expects a binary bank; use compare/sweep for multiclass")
    out = Path(args.out)
    model = experiments.train_on_bank(
        bank,
        np.arange(bank.n_samples),
        spec,
        jitter_scale=cfg.jitter_scale,
    )
    trace_path = out / "trace.csv"
    _write_csv(
        trace_path,
        ["iteration", "objective", "step", "sum_gamma", "nonzero_gamma"],
        model.trace.csv_rows(),
    )
    _write_json(
        out / "model.json",
        {
            "gamma": model.weights.gamma.tolist(),
            "alpha": model.solution.alpha.tolist(),
            "bias": model.solution.bias,
            "rho": model.solution.rho,
            "objective": model.solution.dual_objective,
            "support_indices": model.solution.support_indices.tolist(),
            "selected_kernels": model.weights.selected.tolist(),
            "converged": model.trace.converged,
            "outer_iterations": len(model.trace.entries),
        },
    )
    summary = _echo(
        args,
        {
            "solver": spec.label,
            "bank": str(args.bank),
            "converged": model.trace.converged,
            "objective": model.solution.dual_objective,
            "n_selected": int(model.weights.selected.shape[0]),
            "trace_path": trace_path.name,
        },
    )
    _write_json(out / "summary.json", summary)
    print(
        f"{spec.label}: objective {model.solution.dual_objective:.6g}, "
        f"{model.weights.selected.shape[0]} kernels selected, "
        f"{'converged' if model.trace.converged else 'iteration cap reached'}"
    )
    return EXIT_OK if model.trace.converged else EXIT_NONCONVERGENCE


def cmd_sweep(args) -> int:
    bank = _resolve_bank(args)
    svm = _svm_config(args)
    cfg = _experiment_config(args, svm)
    t_lo = args.t_min if args.t_min is not None else 1
    t_hi = args.t_max if args.t_max is not None else bank.n_kernels
    if t_lo > t_hi:
        raise ValidationError(f"--t-min {t_lo} exceeds --t-max {t_hi}")
    if t_lo < 1 or t_hi > bank.n_kernels:
        raise ValidationError(f"t range must lie in 1..{bank.n_kernels}")
    out = Path(args.out)
    report = experiments.sweep_t(bank, range(t_lo, t_hi + 1), cfg)
    _write_csv(
        out / "sweep_accuracy.csv",
        ["t", "mean_accuracy"],
        ((row.t, row.accuracy) for row in report.rows),
    )
    _write_csv(
        out / "sweep_report.csv",
        ["task_id", "solver", "t", "accuracy", "selected_kernels", "selected_groups", "converged", "outer_iterations"],
        (
            ("binary", f"cskl[t={row.t}]", row.t, row.accuracy, row.n_selected, row.n_groups, row.converged, row.outer_iterations)
            for row in report.rows
        ),
    )
    _write_csv(
        out / "sweep_gamma.csv",
        ["t"] + [f"k{j}" for j in range(bank.n_kernels)],
        ((row.t, *row.gamma.tolist()) for row in report.rows),
    )
    summary = _echo(
        args,
        {
            "bank": str(args.bank),
            "resolved_config": report.config,
            "t_values": [row.t for row in report.rows],
            "accuracies": [row.accuracy for row in report.rows],
            "selected_kernels": [row.n_selected for row in report.rows],
            "selected_groups": [row.n_groups for row in report.rows],
            "all_converged": all(row.converged for row in report.rows),
        },
    )
    _write_json(out / "summary.json", summary)
    best = max(report.rows, key=lambda r: r.accuracy)
    print(f"swept t={t_lo}..{t_hi}: best accuracy {best.accuracy:.4f} at t={best.t}")
    return EXIT_OK if summary["all_converged"] else EXIT_NONCONVERGENCE


def _parse_solver_list(args, cfg: ExperimentConfig, n_kernels: int) -> list[SolverSpec]:
    if args.solvers is None:
        raise ValidationError("--solvers is required")
    names = [s.strip() for s in args.solvers.split(",") if s.strip()]
    if len(names) < 2:
        raise ValidationError("--solvers needs at least two comma-separated entries")
    specs = []
    for name in names:
        t = p = None
        base = name
        if "=" in name:
            base, _, val = name.partition("=")
            if base == "cskl":
                t = int(val)
            elif base == "lpmkl":
                p = float(val)
            else:
                raise ValidationError(f"cannot parameterize solver {base!r}")
        if base == "cskl":
            t = t if t is not None else (args.t if args.t is not None else 4)
            if not 1 <= t <= n_kernels:
                raise ValidationError(f"t={t} outside 1..{n_kernels}")
        elif base == "lpmkl":
            p = p if p is not None else (args.p if args.p is not None else 2.0)
            if p <= 1:
                raise ValidationError("--p must exceed 1")
        elif base != "simplemkl":
            raise ValidationError(f"unknown solver {base!r}")
        specs.append(cfg.solver_for(base, t=t, p=p))
    return specs


def cmd_compare(args) -> int:
    bank = _resolve_bank(args)
    svm = _svm_config(args)
    cfg = _experiment_config(args, svm)
    specs = _parse_solver_list(args, cfg, bank.n_kernels)
    out = Path(args.out)
    report = experiments.compare_solvers(bank, specs, cfg)
    _write_csv(
        out / "compare_report.csv",
        ["task_id", "solver", "accuracy", "selected_kernels", "selected_groups", "ratio_vs_first", "converged", "error"],
        (
            (
                row.task_id,
                row.solver,
                row.accuracy,
                row.n_selected,
                row.n_groups,
                row.ratio_vs_first if row.ratio_vs_first is not None else "",
                row.converged,
                row.error or "",
            )
            for row in report.rows
        ),
    )
    summary = _echo(
        args,
        {
            "bank": str(args.bank),
            "resolved_config": report.config,
            "solvers": [s.label for s in specs],
            "wins_vs_first": report.wins,
            "n_tasks": len({row.task_id for row in report.rows}),
            "failures": [
                {"task": row.task_id, "solver": row.solver, "error": row.error}
                for row in report.rows
                if row.error
            ],
            "mean_accuracy": {
                s.label: float(
                    np.mean([r.accuracy for r in report.rows if r.solver == s.label and not r.error] or [np.nan])
                )
                for s in specs
            },
        },
    )
    _write_json(out / "summary.json", summary)
    for label, tally in report.wins.items():
        print(f"{specs[0].label} vs {label}: {tally['wins']} wins, {tally['ties']} ties, {tally['losses']} losses")
    return EXIT_OK


def cmd_inspect_bank(args) -> int:
    bank = _resolve_bank(args)
    labels, counts = np.unique(bank.labels, return_counts=True)
    print(f"kernels: {bank.n_kernels}")
    print(f"samples: {bank.n_samples}")
    print("labels: " + ", ".join(f"{l}:{c}" for l, c in zip(labels, counts)))
    for j, g in enumerate(bank.kernels):
        spec = g.source
        desc = "precomputed" if spec is None else (
            f"gaussian(width={spec.width:g})" if spec.kind == "gaussian"
            else f"polynomial(degree={spec.degree}, offset={spec.offset:g})" if spec.kind == "polynomial"
            else spec.kind
        )
        group = f" group={bank.groups[j]}" if bank.groups and j in bank.groups else ""
        print(f"  kernel {j}: trace={g.trace:.9g} {desc}{group}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_common(p: _Parser, needs_bank: bool = True) -> None:
    if needs_bank:
        p.add_argument("--bank", type=str, default=None, help="bank file, or CSV directory")
        p.add_argument("--labels", type=str, default=None, help="labels CSV (CSV import mode)")
        p.add_argument("--groups", type=str, default=None, help="descriptor-group mapping file")
    p.add_argument("--svm", type=str, default="c", help="SVM variant: c or nu")
    p.add_argument("--c", type=float, default=None, help="C for the c variant (default 10)")
    p.add_argument("--nu", type=float, default=None, help="nu for the nu variant (default 0.2)")
    p.add_argument("--epsilon", type=float, default=None, help="outer tolerance (default 1e-5)")
    p.add_argument("--max-outer", dest="max_outer", type=int, default=None, help="outer iteration cap (default 200)")
    p.add_argument("--gamma-step", dest="gamma_step", type=str, default="rg", help="rg or lp")
    p.add_argument("--scheme", type=str, default="1v1", help="multiclass scheme: 1v1 or 1vrest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", type=str, required=True, help="output directory")


def build_parser() -> _Parser:
    parser = _Parser(prog="cskl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", parents=[], help="generate the synthetic benchmark bank")
    g.add_argument("--m", type=int, default=500)
    g.add_argument("--dim", type=int, default=3)
    g.add_argument("--noise-kernels", dest="noise_kernels", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=str, required=True)
    g.set_defaults(fn=cmd_gen_synthetic)

    t = sub.add_parser("train", help="train one solver on a binary bank")
    _add_common(t)
    t.add_argument("--solver", type=str, default=None, help="cskl, simplemkl or lpmkl")
    t.add_argument("--t", type=int, default=None, help="kernel budget (cskl only)")
    t.add_argument("--p", type=float, default=None, help="norm order (lpmkl only)")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep", help="train cskl across a range of t and score the test split")
    _add_common(s)
    s.add_argument("--t-min", dest="t_min", type=int, default=None)
    s.add_argument("--t-max", dest="t_max", type=int, default=None)
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("compare", help="run several solvers over the same tasks")
    _add_common(c)
    c.add_argument("--solvers", type=str, default=None, help="comma list, e.g. cskl=4,simplemkl,lpmkl=2")
    c.add_argument("--t", type=int, default=None, help="default t for cskl entries")
    c.add_argument("--p", type=float, default=None, help="default p for lpmkl entries")
    c.set_defaults(fn=cmd_compare)

    i = sub.add_parser("inspect-bank", help="print a bank summary")
    i.add_argument("--bank", type=str, default=None)
    i.add_argument("--labels", type=str, default=None)
    i.add_argument("--groups", type=str, default=None)
    i.set_defaults(fn=cmd_inspect_bank)

    parser.subcommands = {"gen-synthetic": g, "train": t, "sweep": s, "compare": c, "inspect-bank": i}
    return parser


def _apply_config_file(parser: _Parser, path: str) -> None:
    """Seed subcommand defaults from a JSON config; explicit flags still win.

    Unknown keys are ignored, so an emitted summary.json can be replayed
    directly as a configuration file.
    """
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    for sub in parser.subcommands.values():
        known = {a.dest for a in sub._actions} - {"fn", "command", "help", "out"}
        seeded = {
            k.replace("-", "_"): v
            for k, v in payload.items()
            if k.replace("-", "_") in known and v is not None
        }
        sub.set_defaults(**seeded)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if "--config" in argv:
            k = argv.index("--config")
            if k + 1 >= len(argv):
                raise ValidationError("--config needs a file path")
            config_path = argv[k + 1]
            del argv[k : k + 2]
            _apply_config_file(parser, config_path)
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.fn(args)
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SmoNonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (OSError, BankFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Experiment driver: JSON configs in, deterministic CSV/JSON artifacts out.

One command per experiment; identical config and seed produce byte-identical
output.  Exit status 0 on success, 2 on configuration errors (all collected,
not just the first), 3 on downstream numerical failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    conditioning_comparison,
    defect_decay_fit,
    defect_majorant,
    extreme_eigenvalues,
    run_trace_experiment,
    threshold_sweep,
)
from .basisfuncs import DirectionAssignment
from .exponents import build_sharpness_partition, estimate_density, generate_family
from .gram import (
    ExponentialSystem,
    IntervalSpec,
    NearSingularGramError,
    assemble_gram,
)

COMMANDS = ("density", "gram", "bounds-sweep", "trace", "defect-decay", "dd-condition", "sharpness")
FAMILY_KINDS = ("lattice", "perturbed-lattice", "clustered-pairs", "explicit")
DIRECTION_RULES = ("constant", "partition", "random")


class ConfigError(ValueError):
    """Carries every validation problem found in a config, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalFailure(RuntimeError):
    """A downstream numerical error, annotated with the offending grid point."""


@dataclass
class ExperimentConfig:
    command: str
    family: dict
    seed: int = 0
    directions: dict = field(default_factory=lambda: {"rule": "constant", "d": 1})
    interval: list | None = None
    grids: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output_path: str = "experiment.csv"
    output_format: str = "csv"
    threads: int = field(default=1, compare=False)  # execution detail, not identity

    def canonical(self) -> dict:
        return {
            "command": self.command,
            "family": self.family,
            "seed": self.seed,
            "directions": self.directions,
            "interval": self.interval,
            "grids": self.grids,
            "params": self.params,
            "output": {"path": self.output_path, "format": self.output_format},
        }


_REQUIRED_GRIDS = {
    "density": ["r"],
    "bounds-sweep": ["lengths"],
    "defect-decay": ["R"],
    "dd-condition": ["delta"],
}
_REQUIRED_PARAMS = {
    "trace": ["r", "R"],
    "defect-decay": ["r"],
    "sharpness": ["alpha", "d"],
}
_NEEDS_INTERVAL = ("gram", "bounds-sweep", "trace", "defect-decay", "dd-condition", "sharpness")


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON config document, collecting every error."""
    errors: list[str] = []
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])

    command = raw.get("command")
    if command is None:
        errors.append("missing required field 'command'")
    elif command not in COMMANDS:
        errors.append(f"unknown command {command!r} (expected one of {', '.join(COMMANDS)})")

    family = raw.get("family")
    if not isinstance(family, dict):
        errors.append("missing required field 'family'")
        family = {}
    else:
        kind = family.get("kind")
        if kind not in FAMILY_KINDS:
            errors.append(f"family.kind must be one of {', '.join(FAMILY_KINDS)}, got {kind!r}")
        if not isinstance(family.get("params", {}), dict):
            errors.append("family.params must be an object")

    seed = raw.get("seed", family.get("seed", 0) if isinstance(family, dict) else 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append("seed must be a nonnegative integer")
        seed = 0

    directions = raw.get("directions", {"rule": "constant", "d": 1})
    if not isinstance(directions, dict):
        errors.append("directions must be an object")
        directions = {"rule": "constant", "d": 1}
    else:
        rule = directions.get("rule", "constant")
        if rule not in DIRECTION_RULES:
            errors.append(f"directions.rule must be one of {', '.join(DIRECTION_RULES)}, got {rule!r}")
        d = directions.get("d", 1)
        if not isinstance(d, int) or d < 1:
            errors.append("directions.d must be a positive integer")
        if rule == "partition" and "alpha" not in directions:
            errors.append("directions.rule 'partition' requires directions.alpha")

    interval = raw.get("interval")
    if interval is not None:
        if (
            not isinstance(interval, (list, tuple))
            or len(interval) != 2
            or not all(isinstance(v, (int, float)) for v in interval)
        ):
            errors.append("interval must be a pair [a, b] of numbers")
        elif not interval[1] > interval[0]:
            errors.append("interval must satisfy b > a")
    if command in _NEEDS_INTERVAL and interval is None:
        errors.append(f"missing required field 'interval' for command {command!r}")

    grids = raw.get("grids", {})
    if not isinstance(grids, dict):
        errors.append("grids must be an object")
        grids = {}
    for name, grid in grids.items():
        if not isinstance(grid, list) or not grid:
            errors.append(f"grid {name!r} must be a nonempty list")
            continue
        if not all(isinstance(v, (int, float)) for v in grid):
            errors.append(f"grid {name!r} must contain numbers only")
            continue
        if any(b <= a for a, b in zip(grid, grid[1:])):
            errors.append(f"grid {name!r} not increasing")
    for name in _REQUIRED_GRIDS.get(command, []):
        if name not in grids:
            errors.append(f"missing required grid {name!r} for command {command!r}")

    params = raw.get("params", {})
    if not isinstance(params, dict):
        errors.append("params must be an object")
        params = {}
    for name in _REQUIRED_PARAMS.get(command, []):
        if name not in params:
            errors.append(f"missing required parameter {name!r} for command {command!r}")

    output = raw.get("output", {})
    if not isinstance(output, dict):
        errors.append("output must be an object")
        output = {}
    output_format = output.get("format", "csv")
    if output_format not in ("csv", "json"):
        errors.append(f"output.format must be 'csv' or 'json', got {output_format!r}")
    output_path = output.get("path", "experiment." + (output_format if output_format in ("csv", "json") else "csv"))

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        command=command,
        family=family,
        seed=seed,
        directions=directions,
        interval=list(interval) if interval is not None else None,
        grids=grids,
        params=params,
        output_path=str(output_path),
        output_format=output_format,
    )


def _build_family(config: ExperimentConfig):
    params = dict(config.family.get("params", {}))
    kind = config.family["kind"]
    if kind == "perturbed-lattice":
        params.setdefault("seed", config.seed)
    return generate_family(kind, **params)


def _directions_rule(config: ExperimentConfig, family):
    options = config.directions
    rule = options.get("rule", "constant")
    d = int(options.get("d", 1))
    if rule == "constant":
        axis = int(options.get("axis", 0))
        return lambda fam: DirectionAssignment.constant(fam, d, axis=axis)
    if rule == "partition":
        partition = build_sharpness_partition(family, d, float(options["alpha"]), options.get("period_count"))
        return lambda fam: DirectionAssignment.from_partition(partition, fam)
    if rule == "random":
        seed = int(options.get("seed", config.seed))
        return lambda fam: DirectionAssignment.random(fam, d, seed=seed)
    raise ConfigError([f"unknown directions rule {rule!r}"])


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".16e")  # 17 significant digits: lossless for doubles
    return str(value)


def _run_density(config: ExperimentConfig):
    family = _build_family(config)
    est = estimate_density(family, config.grids["r"])
    rows = [
        {"r": float(r), "count": int(c)}
        for r, c in zip(est.radii, est.counts)
    ]
    summary = {
        "dplus_estimate": est.dplus_estimate,
        "intercept": est.intercept,
        "residual": est.residual,
        "fit_window": list(est.fit_window),
        "family_size": len(family),
    }
    return rows, summary


def _run_gram(config: ExperimentConfig):
    family = _build_family(config)
    rule = _directions_rule(config, family)
    interval = IntervalSpec(*config.interval)
    G = assemble_gram(ExponentialSystem(family, rule(family)), interval)
    lo, hi = extreme_eigenvalues(G)
    rows = [
        {"row": j, "col": k, "re": float(G.entries[j, k].real), "im": float(G.entries[j, k].imag)}
        for j in range(G.n)
        for k in range(G.n)
    ]
    summary = {"n": G.n, "lambda_min": lo, "lambda_max": hi, "hermiticity_residual": G.hermiticity_residual()}
    return rows, summary


def _run_bounds_sweep(config: ExperimentConfig):
    family = _build_family(config)
    rule = _directions_rule(config, family)
    lengths = config.grids["lengths"]
    N_max = int(config.params.get("N_max", 128))
    start = float(config.interval[0])
    sweep = threshold_sweep(family, rule, lengths, N_max=N_max, start=start, threads=config.threads)
    rows = sweep.to_rows()
    summary = {
        "transition_bracket": sweep.metadata["transition_bracket"],
        "N_grid": sweep.metadata["N_grid"],
    }
    return rows, summary


def _run_trace(config: ExperimentConfig):
    family = _build_family(config)
    rule = _directions_rule(config, family)
    interval = IntervalSpec(*config.interval)
    y = float(config.params.get("y", 0.5 * (family.exponents[0] + family.exponents[-1])))
    r = float(config.params["r"])
    R = float(config.params["R"])
    exp = run_trace_experiment(family, rule(family), interval, y, r, R)
    return [exp.to_row()], {"card_omega_r": exp.card_omega_r, "card_gamma": exp.card_gamma}


def _run_defect_decay(config: ExperimentConfig):
    family = _build_family(config)
    rule = _directions_rule(config, family)
    interval = IntervalSpec(*config.interval)
    y = float(config.params.get("y", 0.5 * (family.exponents[0] + family.exponents[-1])))
    r = float(config.params["r"])
    d = int(config.directions.get("d", 1))
    fit = defect_decay_fit(family, rule(family), interval, y, r, config.grids["R"])
    rows = []
    for R, defect in zip(fit.R_grid, fit.max_defects):
        majorant = defect_majorant(d, interval, float(R))
        rows.append(
            {
                "R": float(R),
                "max_defect": float(defect),
                "defect_squared": float(defect**2),
                "majorant": majorant,
                "below_majorant": bool(defect**2 <= majorant),
            }
        )
    summary = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "degenerate_zero_defect": fit.degenerate_zero_defect,
    }
    return rows, summary


def _run_dd_condition(config: ExperimentConfig):
    interval = IntervalSpec(*config.interval)
    fparams = dict(config.family.get("params", {}))
    sweep = conditioning_comparison(
        interval,
        config.grids["delta"],
        spacing=float(fparams.get("spacing", 2.0)),
        window=tuple(fparams.get("window", (0.0, 8.0))),
        gamma_prime=float(config.params.get("gamma_prime", 0.5)),
        M=int(config.params.get("M", 2)),
        normalize_dd=bool(config.params.get("normalize_dd", True)),
        threads=config.threads,
    )
    rows = []
    for row in sweep.results:
        cond_raw = row["cond_raw"]
        rows.append(
            {
                "delta": row["delta"],
                "cond_raw": cond_raw if isinstance(cond_raw, str) else float(cond_raw),
                "cond_dd": float(row["cond_dd"]),
                "ratio": (
                    "overflow"
                    if isinstance(cond_raw, str)
                    else float(cond_raw / row["cond_dd"])
                ),
            }
        )
    return rows, {"normalized_dd": sweep.metadata["normalized_dd"]}


def _run_sharpness(config: ExperimentConfig):
    family = _build_family(config)
    interval = IntervalSpec(*config.interval)
    alpha = float(config.params["alpha"])
    d = int(config.params["d"])
    partition = build_sharpness_partition(family, d, alpha, config.params.get("period_count"))
    directions = DirectionAssignment.from_partition(partition)
    G = assemble_gram(ExponentialSystem(family, directions), interval)
    rows = []
    max_density = 0.0
    block_residual = 0.0
    for j in range(1, d + 1):
        sub = partition.class_family(j)
        if sub is None:
            rows.append({"class": j, "size": 0, "density": 0.0, "threshold_length": 0.0,
                         "lambda_min": float("nan"), "lambda_max": float("nan")})
            continue
        positions = [family.position(i) for i in partition.class_indices(j)]
        block = G.entries[np.ix_(positions, positions)]
        scalar = assemble_gram(
            ExponentialSystem(sub, DirectionAssignment.constant(sub, 1)), interval
        )
        block_residual = max(block_residual, float(np.max(np.abs(block - scalar.entries))))
        if len(sub) >= 8:
            span = sub.span
            r_grid = np.linspace(max(1.0, span / 16), span, 12)
            density = estimate_density(sub, r_grid).dplus_estimate
        else:
            density = float("nan")
        lo, hi = extreme_eigenvalues(scalar)
        max_density = max(max_density, density if not math.isnan(density) else 0.0)
        rows.append(
            {
                "class": j,
                "size": len(sub),
                "density": density,
                "threshold_length": 2.0 * math.pi * density if not math.isnan(density) else float("nan"),
                "lambda_min": lo,
                "lambda_max": hi,
            }
        )
    summary = {
        "target_alpha": alpha,
        "block_identity_residual": block_residual,
        "max_class_density": max_density,
        "period_exponent_count": partition.period_exponent_count,
    }
    return rows, summary


_RUNNERS = {
    "density": _run_density,
    "gram": _run_gram,
    "bounds-sweep": _run_bounds_sweep,
    "trace": _run_trace,
    "defect-decay": _run_defect_decay,
    "dd-condition": _run_dd_condition,
    "sharpness": _run_sharpness,
}


def _write_csv(path: Path, config: ExperimentConfig, rows: list[dict], summary: dict) -> None:
    lines = [
        f"# inghamlab {__version__}",
        f"# seed={config.seed}",
        "# config=" + json.dumps(config.canonical(), sort_keys=True, separators=(",", ":")),
        "# summary=" + json.dumps(summary, sort_keys=True, separators=(",", ":")),
    ]
    if rows:
        header = list(rows[0].keys())
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_fmt(row[key]) for key in header))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, config: ExperimentConfig, rows: list[dict], summary: dict) -> None:
    document = {
        "tool_version": __version__,
        "seed": config.seed,
        "config": config.canonical(),
        "summary": summary,
        "rows": rows,
    }
    path.write_text(json.dumps(document, sort_keys=True, indent=1) + "\n")


def read_artifact_config(path) -> ExperimentConfig:
    """Re-parse the config echoed into an artifact (CSV header or JSON field)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return parse_config(json.dumps(json.loads(text)["config"]))
    for line in text.splitlines():
        if line.startswith("# config="):
            return parse_config(line[len("# config=") :])
    raise ValueError(f"no config echo found in {path}")


def run(config: ExperimentConfig, out_path: str | None = None) -> int:
    """Execute a validated config and write its artifact.  Returns exit status."""
    runner = _RUNNERS[config.command]
    try:
        rows, summary = runner(config)
    except (NearSingularGramError, ArithmeticError, FloatingPointError) as exc:
        raise NumericalFailure(f"command {config.command!r}: {exc}") from exc
    path = Path(out_path if out_path is not None else config.output_path)
    if config.output_format == "csv":
        _write_csv(path, config, rows, summary)
    else:
        _write_json(path, config, rows, summary)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="inghamlab",
        description="Run frame-bound, density, trace, and conditioning experiments from a JSON config.",
    )
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", help="output path (overrides the config)")
    parser.add_argument("--format", choices=("csv", "json"), help="output format (overrides the config)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweep grid points; output stays ordered by grid index")
    parser.add_argument("--seed", type=int, help="seed override (recorded in the artifact)")
    args = parser.parse_args(argv)

    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        config = parse_config(Path(args.config).read_text())
        config.threads = args.threads
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        for problem in exc.errors:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be nonnegative", file=sys.stderr)
            return 2
        config.seed = args.seed
    if args.format is not None:
        config.output_format = args.format
    try:
        return run(config, out_path=args.out)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

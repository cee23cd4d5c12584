"""Command-line entry point: validated experiment configs in, tables out.

Configs are flat TOML files.  Physics parameters live in the file; flags
only override the seed, the output path and the output format::

    cqedinfo run --config configs/c1_entropy_rate_mc.toml --seed 3 --out rq.csv
    cqedinfo all --config-dir configs

Exit codes: 0 success, 1 configuration error, 2 numerical failure, and for
``all`` 3 when every experiment ran but at least one check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .dynamics import DEFAULT_DT, RNG_ALGORITHM, SystemParams
from .errors import ConfigError, ConvergenceError, DomainError, InvalidUpdate, StabilityError, TruncationError
from .experiments import DRIVERS, ExperimentResult
from .steady_state import analytic_alpha

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CHECK_FAILED = 3

NUMERICAL_ERRORS = (StabilityError, ConvergenceError, TruncationError, InvalidUpdate)

REQUIRED = object()

COMMON_KEYS = {
    "experiment": REQUIRED,
    "E": REQUIRED,
    "g": REQUIRED,
    "kappa": 1.0,
    "eta": 1.0,
    "phi": 0.0,
    "dt": DEFAULT_DT,
    "seed": 0,
    "output_path": None,
    "format": "csv",
    "truncation": "minimal",
}

_sweep = {"v0_sq": REQUIRED, "n_traj": 10_000, "n_steps": 100_000, "delta_t": 1e-4, "n_terms": 200}

EXPERIMENT_KEYS = {
    "entropy-rate-mc": {"n_traj": 10_000, "delta_t": 1e-4},
    "bayes-rate-mc": {"v0_sq": REQUIRED, "n_steps": 100_000, "slow_n_steps": 1000, "g_true": None, "substeps": 1},
    "phi-sweep": {**_sweep, "n_phi": 5},
    "tradeoff": {**_sweep, "n_phi": 7},
    "state-invariance": {"t_final": 10.0, "monitor_every": 50, "threshold": 0.02},
    "steady-state-validation": {"E": None, "E_values": [2.5, 5.0, 10.0]},
    "series-check": {"n_terms": 200},
    "series-oracle": {
        "E": None,
        "g": None,
        "dim": 6,
        "ratio": 0.8,
        "scale": 0.1,
        "n_terms": 200,
        "h": 1e-6,
    },
    "photocurrent-mean": {"n_steps": 1000, "n_traj": 1000},
    "invariants": {"v0_sq": 0.09, "truncation": "recommended"},
    "bayes-converge": {"v0_sq": REQUIRED, "n_steps": 10_000, "g_true": None, "prior_mean": REQUIRED},
}

POSITIVE_INT = ("n_traj", "n_steps", "slow_n_steps", "n_phi", "n_terms", "monitor_every", "dim", "substeps")
POSITIVE_REAL = ("dt", "delta_t", "t_final", "v0_sq", "threshold", "scale", "h")

_PI_RE = re.compile(r"^\s*([0-9]*\.?[0-9]*)\s*\*?\s*pi\s*(?:/\s*([0-9]*\.?[0-9]+))?\s*$")


@dataclass
class ExperimentConfig:
    experiment: str
    params: SystemParams | None
    seed: int = 0
    dt: float = DEFAULT_DT
    output_path: str | None = None
    format: str = "csv"
    truncation: str = "minimal"
    v0_sq: float | None = None
    n_traj: int | None = None
    n_steps: int | None = None
    t_final: float | None = None
    options: dict = field(default_factory=dict)

    def __getattr__(self, name):
        # experiment-specific knobs (delta_t, n_terms, E_values, ...)
        options = self.__dict__.get("options", {})
        if name in options:
            return options[name]
        raise AttributeError(name)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("params", "options")}
        d["params"] = None if self.params is None else self.params.as_dict()
        d.update(self.options)
        return d


def parse_angle(value, name: str = "phi") -> float:
    """Radians from a number or a string such as ``"pi/2"`` or ``"3pi/8"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _PI_RE.match(value)
        if m:
            num = float(m.group(1)) if m.group(1) not in ("", ".") else 1.0
            den = float(m.group(2)) if m.group(2) else 1.0
            return num * math.pi / den
        try:
            return float(value)
        except ValueError:
            pass
    raise ConfigError(f"{name}: cannot read {value!r} as an angle")


def _number(raw, key, kind):
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def validate_config(raw: dict | str) -> ExperimentConfig:
    """Check a parsed (or TOML text) config and fill in defaults.

    Unknown keys, missing required keys, wrong types and out-of-range values
    raise :class:`ConfigError` naming the field; ``g >= 2E`` raises
    :class:`DomainError`.
    """
    if isinstance(raw, str):
        try:
            raw = tomli.loads(raw)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config is not valid TOML: {exc}") from exc
    raw = dict(raw)
    experiment = raw.get("experiment")
    if experiment is None:
        raise ConfigError("experiment: required field is missing")
    if experiment not in EXPERIMENT_KEYS:
        raise ConfigError(f"experiment: unknown value {experiment!r}; choose from {sorted(EXPERIMENT_KEYS)}")
    schema = {**COMMON_KEYS, **EXPERIMENT_KEYS[experiment]}

    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for experiment {experiment!r}: {', '.join(unknown)}")
    for key, default in schema.items():
        if key not in raw:
            if default is REQUIRED:
                raise ConfigError(f"{key}: required field is missing for experiment {experiment!r}")
            raw[key] = list(default) if isinstance(default, list) else default

    values = {}
    for key in raw:
        if raw[key] is None or key in ("experiment", "output_path", "format", "truncation", "phi", "E_values"):
            continue
        kind = int if key in POSITIVE_INT or key == "seed" else float
        values[key] = _number(raw, key, kind)
        if key in POSITIVE_INT and values[key] < 1:
            raise ConfigError(f"{key}: must be >= 1, got {values[key]}")
        if key in POSITIVE_REAL and not values[key] > 0:
            raise ConfigError(f"{key}: must be positive, got {values[key]}")
    if values.get("seed", 0) < 0:
        raise ConfigError(f"seed: must be non-negative, got {values['seed']}")
    if raw["format"] not in ("csv", "json"):
        raise ConfigError(f"format: expected 'csv' or 'json', got {raw['format']!r}")
    if raw["truncation"] not in ("minimal", "recommended"):
        raise ConfigError(f"truncation: expected 'minimal' or 'recommended', got {raw['truncation']!r}")
    if raw["output_path"] is not None and not isinstance(raw["output_path"], str):
        raise ConfigError("output_path: expected a string")
    phi = parse_angle(raw["phi"])
    if "ratio" in values and not 0 < values["ratio"] < 1:
        raise ConfigError(f"ratio: must lie in (0, 1), got {values['ratio']}")

    if experiment == "steady-state-validation":
        e_values = raw["E_values"]
        if not isinstance(e_values, list) or not e_values:
            raise ConfigError("E_values: expected a non-empty list of numbers")
        for e in e_values:
            if isinstance(e, bool) or not isinstance(e, (int, float)) or not e > 0:
                raise ConfigError(f"E_values: every entry must be a positive number, got {e!r}")
        values["E_values"] = [float(e) for e in e_values]
        values.setdefault("E", min(values["E_values"]))

    params = None
    if values.get("E") is not None and values.get("g") is not None:
        kappa, eta = values["kappa"], values["eta"]
        if not kappa > 0:
            raise ConfigError(f"kappa: must be positive, got {kappa}")
        if not 0 < eta <= 1:
            raise ConfigError(f"eta: must lie in (0, 1], got {eta}")
        if not values["E"] > 0:
            raise ConfigError(f"E: must be positive, got {values['E']}")
        if values["g"] < 0:
            raise ConfigError(f"g: must be non-negative, got {values['g']}")
        params = SystemParams(E=values["E"], g=values["g"], kappa=kappa, eta=eta, phi=phi)
        for e in values.get("E_values", [values["E"]]):
            analytic_alpha(params.with_(E=e))  # DomainError when g >= 2E
        g_true = values.get("g_true")
        if g_true is not None:
            analytic_alpha(params.with_(g=g_true))

    core = ("experiment", "E", "g", "kappa", "eta", "phi", "dt", "seed", "output_path", "format", "truncation",
            "v0_sq", "n_traj", "n_steps", "t_final")
    options = {k: v for k, v in values.items() if k not in core}
    options.update({k: raw[k] for k in schema if k not in core and k not in options})
    return ExperimentConfig(
        experiment=experiment,
        params=params,
        seed=values.get("seed", 0),
        dt=values.get("dt", DEFAULT_DT),
        output_path=raw["output_path"],
        format=raw["format"],
        truncation=raw["truncation"],
        v0_sq=values.get("v0_sq"),
        n_traj=values.get("n_traj"),
        n_steps=values.get("n_steps"),
        t_final=values.get("t_final"),
        options=options,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}") from exc
    return validate_config(raw)


def metadata(cfg: ExperimentConfig, result: ExperimentResult) -> dict:
    return {
        "experiment": cfg.experiment,
        "config": cfg.as_dict(),
        "code_version": __version__,
        "rng": RNG_ALGORITHM,
        "summary": result.summary,
        "passed": result.passed,
    }


def _cell(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(cfg: ExperimentConfig, result: ExperimentResult, fmt: str | None = None) -> str:
    """Serialized output: CSV with ``#`` metadata lines, or a JSON document."""
    fmt = fmt or cfg.format
    meta = metadata(cfg, result)
    if fmt == "json":
        return json.dumps({**meta, "rows": result.rows}, sort_keys=True, indent=2) + "\n"
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    if result.rows:
        columns = list(result.rows[0])
        for row in result.rows[1:]:
            columns += [c for c in row if c not in columns]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in result.rows:
            w.writerow([_cell(row.get(c, "")) for c in columns])
    return buf.getvalue()


def run(cfg: ExperimentConfig) -> ExperimentResult:
    return DRIVERS[cfg.experiment](cfg)


def _execute(cfg: ExperimentConfig, out: Path | None, fmt: str) -> ExperimentResult:
    result = run(cfg)
    text = render(cfg, result, fmt)
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    return result


def _apply_overrides(cfg: ExperimentConfig, seed, fmt) -> ExperimentConfig:
    if seed is not None:
        if seed < 0:
            raise ConfigError(f"--seed: must be non-negative, got {seed}")
        cfg.seed = seed
    if fmt is not None:
        cfg.format = fmt
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args.seed, args.format)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.output_path
    try:
        result = _execute(cfg, Path(out) if out else None, cfg.format)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in {cfg.experiment}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if result.passed is not None:
        print(f"{cfg.experiment}: {'PASS' if result.passed else 'FAIL'}", file=sys.stderr)
    return EXIT_OK


def cmd_all(args) -> int:
    config_dir = Path(args.config_dir)
    paths = sorted(config_dir.glob("*.toml"))
    if not paths:
        print(f"config error: no *.toml files in {config_dir}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out_dir) if args.out_dir else config_dir / "results"
    report = []
    codes = set()
    for path in paths:
        entry = {"config": path.name}
        try:
            cfg = _apply_overrides(load_config(path), args.seed, None)
        except (ConfigError, DomainError) as exc:
            entry.update(status="config-error", error=str(exc))
            codes.add(EXIT_CONFIG)
            report.append(entry)
            continue
        out = out_dir / f"{path.stem}.{cfg.format}"
        entry.update(experiment=cfg.experiment, output=str(out))
        print(f"running {path.name} ({cfg.experiment})", file=sys.stderr, flush=True)
        try:
            result = _execute(cfg, out, cfg.format)
        except NUMERICAL_ERRORS as exc:
            entry.update(status="numerical-failure", error=f"{type(exc).__name__}: {exc}")
            codes.add(EXIT_NUMERICAL)
            report.append(entry)
            continue
        status = "ran" if result.passed is None else ("passed" if result.passed else "failed")
        if result.passed is False:
            codes.add(EXIT_CHECK_FAILED)
        entry.update(status=status, summary=result.summary)
        report.append(entry)
    all_passed = all(e["status"] in ("passed", "ran") for e in report)
    json.dump({"all_passed": all_passed, "results": report}, sys.stdout, sort_keys=True, indent=2)
    sys.stdout.write("\n")
    for code in (EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK_FAILED):
        if code in codes:
            return code
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqedinfo", description="Information-rate experiments for a driven atom-cavity system.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True, help="path to a TOML experiment config")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--out", help="output file (default: config output_path, else stdout)")
    p_run.add_argument("--format", choices=("csv", "json"), help="override the config format")
    p_run.set_defaults(func=cmd_run)

    p_all = sub.add_parser("all", help="run every config in a directory and print a JSON summary")
    p_all.add_argument("--config-dir", required=True)
    p_all.add_argument("--out-dir", help="where outputs go (default: <config-dir>/results)")
    p_all.add_argument("--seed", type=int, help="override every config seed")
    p_all.set_defaults(func=cmd_all)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

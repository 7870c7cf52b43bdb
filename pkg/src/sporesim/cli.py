"""Configuration ingestion, experiment orchestration, and artifact output.

Experiments are described by a JSON config with three blocks::

    {
      "model":      {"beta": 1.0, "rho": 0.0,
                     "offspring": {"kind": "table", "probs": [0.6, 0.0, 0.4]}},
      "experiment": {"type": "survival", ...},
      "output":     {"dir": ".", "format": "csv"}
    }

Experiment types: survival (per-k curves, ODE and/or Monte Carlo), constant
(leading-constant extraction), gumbel (extinction-time limit law), oracle
(closed-form comparison table), slope (decay-rate fit against the model
value).  Unknown keys are rejected anywhere; every artifact embeds the fully
resolved config (defaults filled), its hash, the RNG algorithm tag, and the
master seed, so a rerun needs nothing but the artifact.  Randomized
experiments refuse to run without an explicit seed unless --ephemeral.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 event budget
exhausted.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import secrets
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    NonConvergenceError,
    SolverError,
    TruncatedSystem,
    _grid,
    closed_form_linear_fractional,
    closed_form_mu0,
    estimate_constant,
    linear_fractional_constant,
    solve_survival,
)
from .model import DecayWindow, ModelParams, OffspringDistribution, validate
from .simulator import DEFAULT_MAX_EVENTS, RNG_ALGORITHM, BudgetError
from .stats import (
    WindowError,
    check_growth_condition,
    fit_decay_rate,
    gumbel_experiment,
    survival_curve_mc,
)

EXPERIMENT_TYPES = ("survival", "constant", "gumbel", "oracle", "slope")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_BUDGET = 4


class ConfigError(ValueError):
    """Config rejection carrying the JSON path of the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at '{path}': {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    params: ModelParams
    kind: str
    settings: dict
    out_dir: str
    out_format: str
    resolved: dict = field(repr=False)

    @property
    def randomized(self) -> bool:
        return self.kind == "gumbel" or (
            self.kind == "survival" and self.settings["method"] != "ode"
        )

    @property
    def seed(self) -> int | None:
        return self.settings.get("seed")

    def set_seed(self, seed: int) -> None:
        self.settings["seed"] = int(seed)
        self.resolved["experiment"]["seed"] = int(seed)


def _require_keys(obj: dict, path: str, required: tuple, optional: tuple = ()) -> None:
    for key in required:
        if key not in obj:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _number(obj: dict, path: str, key: str, default=None):
    value = obj.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {value!r}")
    return float(value)


def _integer(obj: dict, path: str, key: str, default=None):
    value = obj.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {value!r}")
    return value


def _parse_offspring(obj, path: str) -> OffspringDistribution:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    kind = obj.get("kind")
    if kind == "table":
        _require_keys(obj, path, ("kind", "probs"))
        probs = obj["probs"]
        if not isinstance(probs, list) or not probs:
            raise ConfigError(f"{path}.probs", "expected a nonempty list of numbers")
        try:
            return OffspringDistribution.table(probs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{path}.probs", str(e)) from e
    if kind in ("poisson", "geometric"):
        _require_keys(obj, path, ("kind", "param"))
        param = _number(obj, path, "param")
        try:
            return OffspringDistribution(kind=kind, param=param)
        except ValueError as e:
            raise ConfigError(f"{path}.param", str(e)) from e
    raise ConfigError(f"{path}.kind", f"expected one of table/poisson/geometric, got {kind!r}")


def _parse_model(obj, path: str = "model") -> ModelParams:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    _require_keys(obj, path, ("beta", "rho", "offspring"))
    beta = _number(obj, path, "beta")
    rho = _number(obj, path, "rho")
    offspring = _parse_offspring(obj["offspring"], f"{path}.offspring")
    try:
        return ModelParams(beta=beta, rho=rho, offspring=offspring)
    except ValueError as e:
        raise ConfigError(path, str(e)) from e


def _parse_initial_counts(obj, path: str) -> dict[int, int]:
    if not isinstance(obj, dict) or not obj:
        raise ConfigError(path, "expected a nonempty map of type -> host count")
    counts: dict[int, int] = {}
    for key, value in obj.items():
        try:
            k = int(key)
        except ValueError:
            raise ConfigError(f"{path}.{key}", "type keys must be integers") from None
        if k < 1:
            raise ConfigError(f"{path}.{key}", "types must be >= 1")
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(f"{path}.{key}", "host counts must be nonnegative integers")
        if value:
            counts[k] = value
    if not counts:
        raise ConfigError(path, "needs at least one host")
    return counts


def _default_dt(t_max: float) -> float:
    return min(0.5, max(t_max / 400.0, 1e-3))


def _require_subcritical(m: ModelParams, kind: str) -> None:
    lam = m.decay_rate
    if lam <= 0.0:
        raise ConfigError(
            "model",
            f"experiment '{kind}' requires a subcritical model: "
            f"rho + beta*(1 - mean offspring) must be positive, got {lam:g}",
        )


def _parse_experiment(obj, m: ModelParams, path: str = "experiment") -> tuple[str, dict]:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    kind = obj.get("type")
    if kind not in EXPERIMENT_TYPES:
        raise ConfigError(f"{path}.type", f"expected one of {EXPERIMENT_TYPES}, got {kind!r}")
    s: dict = {"type": kind}

    if kind == "survival":
        _require_keys(
            obj,
            path,
            ("type", "k", "t_max"),
            ("dt", "method", "K", "tol", "seed", "replicates", "max_events"),
        )
        ks = obj["k"]
        if not isinstance(ks, list) or not ks or not all(
            isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in ks
        ):
            raise ConfigError(f"{path}.k", "expected a nonempty list of integers >= 1")
        s["k"] = sorted(set(ks))
        s["t_max"] = _number(obj, path, "t_max")
        if s["t_max"] <= 0.0:
            raise ConfigError(f"{path}.t_max", "must be positive")
        s["dt"] = _number(obj, path, "dt", _default_dt(s["t_max"]))
        method = obj.get("method", "ode")
        if method not in ("ode", "mc", "both"):
            raise ConfigError(f"{path}.method", f"expected ode/mc/both, got {method!r}")
        s["method"] = method
        s["K"] = _integer(obj, path, "K", max(max(s["k"]), 20))
        if s["K"] < max(s["k"]):
            raise ConfigError(f"{path}.K", "truncation level K must cover every requested k")
        s["tol"] = _number(obj, path, "tol", 1e-9)
        s["replicates"] = _integer(obj, path, "replicates", 100_000)
        s["max_events"] = _integer(obj, path, "max_events", DEFAULT_MAX_EVENTS)
        if "seed" in obj:
            s["seed"] = _integer(obj, path, "seed")

    elif kind == "constant":
        _require_keys(
            obj, path, ("type",), ("K", "tol", "solver_tol", "a", "epsilon", "t_max")
        )
        _require_subcritical(m, kind)
        try:
            window = DecayWindow.for_model(
                m,
                a=_number(obj, path, "a") if "a" in obj else None,
                epsilon=_number(obj, path, "epsilon") if "epsilon" in obj else None,
            )
        except ValueError as e:
            raise ConfigError(f"{path}.a", str(e)) from e
        s["a"] = window.a
        s["epsilon"] = window.epsilon
        s["K"] = _integer(obj, path, "K", 20)
        s["tol"] = _number(obj, path, "tol", 1e-8)
        s["solver_tol"] = _number(obj, path, "solver_tol", 1e-9)
        s["t_max"] = _number(obj, path, "t_max", 30.0 / window.a)

    elif kind == "gumbel":
        _require_keys(
            obj, path, ("type", "z"), ("replicates", "seed", "C", "a", "max_events")
        )
        _require_subcritical(m, kind)
        counts = _parse_initial_counts(obj["z"], f"{path}.z")
        s["z"] = {str(k): v for k, v in sorted(counts.items())}
        s["replicates"] = _integer(obj, path, "replicates", 2000)
        s["max_events"] = _integer(obj, path, "max_events", DEFAULT_MAX_EVENTS)
        cap = min(m.decay_rate, m.beta)
        s["a"] = _number(obj, path, "a", cap / 2.0)
        if not 0.0 < s["a"] < cap:
            raise ConfigError(f"{path}.a", f"must lie in (0, {cap:g})")
        if "C" in obj and obj["C"] is not None:
            s["C"] = _number(obj, path, "C")
            if not 0.0 < s["C"] <= 1.0:
                raise ConfigError(f"{path}.C", "leading constant must lie in (0, 1]")
        else:
            s["C"] = None
        if "seed" in obj:
            s["seed"] = _integer(obj, path, "seed")

    elif kind == "oracle":
        _require_keys(obj, path, ("type",), ("k", "t_max", "dt", "K", "tol", "match_tol"))
        ks = obj.get("k", [1, 2, 5])
        if not isinstance(ks, list) or not ks or not all(
            isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in ks
        ):
            raise ConfigError(f"{path}.k", "expected a nonempty list of integers >= 1")
        s["k"] = sorted(set(ks))
        s["t_max"] = _number(obj, path, "t_max", 5.0)
        s["dt"] = _number(obj, path, "dt", _default_dt(s["t_max"]))
        s["K"] = _integer(obj, path, "K", max(max(s["k"]), 4))
        s["tol"] = _number(obj, path, "tol", 1e-9)
        s["match_tol"] = _number(obj, path, "match_tol", 1e-7)

    else:  # slope
        _require_keys(obj, path, ("type",), ("window", "K", "tol", "dt"))
        _require_subcritical(m, kind)
        lam = m.decay_rate
        window = obj.get("window", [20.0 / lam, 40.0 / lam])
        if (
            not isinstance(window, list)
            or len(window) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in window)
            or not 0.0 <= window[0] < window[1]
        ):
            raise ConfigError(f"{path}.window", "expected [t_lo, t_hi] with 0 <= t_lo < t_hi")
        s["window"] = [float(window[0]), float(window[1])]
        s["K"] = _integer(obj, path, "K", 20)
        s["tol"] = _number(obj, path, "tol", 1e-9)
        s["dt"] = _number(obj, path, "dt", _default_dt(s["window"][1]))

    return kind, s


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment config.

    Raises ConfigError with the JSON path of the offending key; the returned
    config has every default filled in and recorded.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("", "top level must be an object")
    _require_keys(raw, "", ("model", "experiment"), ("output",))

    m = _parse_model(raw["model"])
    kind, settings = _parse_experiment(raw["experiment"], m)

    out = raw.get("output", {})
    if not isinstance(out, dict):
        raise ConfigError("output", "expected an object")
    _require_keys(out, "output", (), ("dir", "format"))
    out_dir = out.get("dir", ".")
    if not isinstance(out_dir, str):
        raise ConfigError("output.dir", "expected a string")
    out_format = out.get("format", "csv")
    if out_format != "csv":
        raise ConfigError("output.format", f"only 'csv' is supported, got {out_format!r}")

    offspring = raw["model"]["offspring"]
    resolved_offspring = (
        {"kind": "table", "probs": list(m.offspring.probs)}
        if offspring["kind"] == "table"
        else {"kind": offspring["kind"], "param": m.offspring.param}
    )
    resolved = {
        "model": {"beta": m.beta, "rho": m.rho, "offspring": resolved_offspring},
        "experiment": dict(settings),
        "output": {"dir": out_dir, "format": out_format},
    }
    return ExperimentConfig(
        params=m,
        kind=kind,
        settings=settings,
        out_dir=out_dir,
        out_format=out_format,
        resolved=resolved,
    )


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def build_metadata(cfg: ExperimentConfig) -> dict:
    return {
        "tool": "sporesim",
        "tool_version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "master_seed": cfg.seed,
        "config_hash": hashlib.sha256(_canonical_json(cfg.resolved).encode()).hexdigest(),
        "config": cfg.resolved,
    }


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def emit_csv(path: Path, metadata: dict, header: list[str], rows) -> None:
    """Write `# key=value` provenance comments, a header row, then data rows.

    Floats carry 17 significant digits (lossless round-trip); newline is LF.
    """
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            for key, value in metadata.items():
                if key == "config":
                    value = _canonical_json(value)
                f.write(f"# {key}={value}\n")
            f.write(",".join(header) + "\n")
            for row in rows:
                f.write(",".join(_fmt(x) for x in row) + "\n")
    except OSError as e:
        raise OSError(f"cannot write CSV artifact {path}: {e}") from e


def emit_json(path: Path, metadata: dict, payload: dict) -> None:
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as f:
            json.dump({"metadata": metadata, **payload}, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OSError(f"cannot write JSON artifact {path}: {e}") from e


def _is_linear_fractional(m: ModelParams) -> bool:
    d = m.offspring
    if m.rho != 0.0 or d.kind != "table" or len(d.probs) < 3:
        return False
    if any(p != 0.0 for j, p in enumerate(d.probs) if j not in (0, 2)):
        return False
    return d.probs[0] != d.probs[2]


def _resolve_gumbel_constant(cfg: ExperimentConfig) -> tuple[float, str]:
    if cfg.settings["C"] is not None:
        return cfg.settings["C"], "config"
    m = cfg.params
    if _is_linear_fractional(m) and m.offspring.probs[2] < m.offspring.probs[0]:
        return linear_fractional_constant(m.offspring.probs[0], m.offspring.probs[2]), (
            "linear_fractional"
        )
    window = DecayWindow.for_model(m, a=cfg.settings["a"])
    support = m.offspring.max_support
    K = support if support is not None else 20
    est = estimate_constant(TruncatedSystem(m, K=max(K, 2)), window)
    return est.c_hat, "backward_system"


@dataclass
class ExperimentResult:
    paths: list[Path]
    ok: bool
    summary: str


def run_experiment(
    cfg: ExperimentConfig, out_dir: str | None = None, threads: int = 1
) -> ExperimentResult:
    """Execute the configured experiment and write its artifacts.

    All payloads are computed before anything is written; if writing fails
    partway, every artifact written so far is removed.
    """
    if cfg.randomized and cfg.seed is None:
        raise ConfigError(
            "experiment.seed",
            "randomized experiments need an explicit seed (or run with --ephemeral)",
        )
    directory = Path(out_dir if out_dir is not None else cfg.out_dir)
    metadata = build_metadata(cfg)
    m = cfg.params
    s = cfg.settings
    artifacts: list[tuple[Path, str, dict | tuple]] = []  # (path, kind, payload)
    ok = True
    summary = ""

    if cfg.kind == "survival":
        header = ["k", "t", "q", "err", "source"]
        if s["method"] in ("ode", "both"):
            curves = solve_survival(
                TruncatedSystem(m, K=s["K"]), t_max=s["t_max"], tol=s["tol"], dt=s["dt"]
            )
            rows = [
                (c.k, float(t), float(q), float(e), c.source)
                for c in curves
                if c.k in s["k"]
                for t, q, e in zip(c.ts, c.qs, c.err)
            ]
            artifacts.append((directory / "survival_ode.csv", "csv", (header, rows)))
        if s["method"] in ("mc", "both"):
            ts = _grid(s["t_max"], s["dt"])
            rows = []
            for pos, k in enumerate(s["k"]):
                curve = survival_curve_mc(
                    k,
                    ts,
                    m,
                    seed=(s["seed"] + pos) % (1 << 64),  # disjoint streams per k
                    n=s["replicates"],
                    max_events=s["max_events"],
                    threads=threads,
                )
                rows.extend(
                    (k, float(t), float(q), float(e), curve.source)
                    for t, q, e in zip(curve.ts, curve.qs, curve.err)
                )
            artifacts.append((directory / "survival_mc.csv", "csv", (header, rows)))
        summary = f"survival curves for k={s['k']}"

    elif cfg.kind == "constant":
        window = DecayWindow(a=s["a"], epsilon=s["epsilon"])
        est = estimate_constant(
            TruncatedSystem(m, K=s["K"]),
            window,
            tol=s["tol"],
            solver_tol=s["solver_tol"],
            t_max=s["t_max"],
        )
        payload = {
            "c_hat": est.c_hat,
            "t_star": est.t_star,
            "K": est.K,
            "last_rel_change": est.last_rel_change,
            "k_doubling_change": est.k_doubling_change,
            "decay_rate": m.decay_rate,
            "a": window.a,
            "epsilon": window.epsilon,
        }
        artifacts.append((directory / "constant.json", "json", payload))
        summary = f"c_hat = {est.c_hat:.6g} at t* = {est.t_star:.4g}"

    elif cfg.kind == "gumbel":
        C, c_source = _resolve_gumbel_constant(cfg)
        z = {int(k): v for k, v in s["z"].items()}
        report = gumbel_experiment(
            z,
            m,
            C=C,
            seed=s["seed"],
            replicates=s["replicates"],
            max_events=s["max_events"],
            threads=threads,
        )
        growth = check_growth_condition(z, a=s["a"], lam=m.decay_rate)
        payload = {
            "C": C,
            "C_source": c_source,
            "decay_rate": m.decay_rate,
            "predicted_location": report.location,
            "predicted_scale": report.scale,
            "replicates": report.n,
            "ks_distance": report.ks,
            "median_w": report.median_w,
            "predicted_median_w": -math.log(math.log(2.0)),
            "quantiles": [
                {"p": p, "empirical": emp, "predicted": pred}
                for p, emp, pred in report.quantiles
            ],
            "growth_condition": {
                "spores": growth.spores,
                "second_moment": growth.second_moment,
                "exponent": growth.exponent,
                "ratio": growth.ratio,
            },
        }
        artifacts.append((directory / "gumbel.json", "json", payload))
        rows = [(i, float(t)) for i, t in enumerate(report.extinction_times)]
        artifacts.append(
            (directory / "extinction_times.csv", "csv", (["replicate", "T"], rows))
        )
        summary = f"KS distance {report.ks:.4f} over {report.n} replicates"

    elif cfg.kind == "oracle":
        cases = _oracle_cases(cfg)
        ok = all(c["pass"] for c in cases)
        payload = {"cases": cases, "all_pass": ok}
        artifacts.append((directory / "oracle.json", "json", payload))
        summary = f"{sum(c['pass'] for c in cases)}/{len(cases)} oracle comparisons pass"

    else:  # slope
        lo, hi = s["window"]
        curves = solve_survival(
            TruncatedSystem(m, K=s["K"]), t_max=hi, tol=s["tol"], dt=s["dt"]
        )
        lam_fit, stderr = fit_decay_rate(curves[0], (lo, hi))
        lam = m.decay_rate
        payload = {
            "lambda_fit": lam_fit,
            "stderr": stderr,
            "lambda_model": lam,
            "rel_error": abs(lam_fit - lam) / lam,
            "window": [lo, hi],
        }
        artifacts.append((directory / "slope.json", "json", payload))
        summary = f"fitted rate {lam_fit:.6g} vs model {lam:.6g}"

    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        for path, fmt, payload in artifacts:
            if fmt == "csv":
                header, rows = payload
                emit_csv(path, metadata, header, rows)
            else:
                emit_json(path, metadata, payload)
            written.append(path)
    except OSError:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return ExperimentResult(paths=written, ok=ok, summary=summary)


def _oracle_cases(cfg: ExperimentConfig) -> list[dict]:
    m = cfg.params
    s = cfg.settings
    cases: list[dict] = []
    if m.offspring.mean == 0.0:
        curves = solve_survival(
            TruncatedSystem(m, K=s["K"]), t_max=s["t_max"], tol=s["tol"], dt=s["dt"]
        )
        by_k = {c.k: c for c in curves}
        for k in s["k"]:
            c = by_k[k]
            exact = np.array([closed_form_mu0(k, t, m.beta, m.rho) for t in c.ts])
            err = float(np.abs(c.qs - exact).max())
            cases.append(
                {
                    "name": f"pure_death_q{k}_vs_ode",
                    "max_abs_err": err,
                    "tolerance": s["match_tol"],
                    "pass": err <= s["match_tol"],
                }
            )
    elif _is_linear_fractional(m):
        p0, p2 = m.offspring.probs[0], m.offspring.probs[2]
        curves = solve_survival(
            TruncatedSystem(m, K=max(s["K"], 2)), t_max=s["t_max"], tol=s["tol"], dt=s["dt"]
        )
        c1 = curves[0]
        exact = np.array(
            [closed_form_linear_fractional(t, m.beta, p0, p2) for t in c1.ts]
        )
        err = float(np.abs(c1.qs - exact).max())
        cases.append(
            {
                "name": "linear_fractional_q1_vs_ode",
                "max_abs_err": err,
                "tolerance": s["match_tol"],
                "pass": err <= s["match_tol"],
            }
        )
        if p2 < p0:
            window = DecayWindow.for_model(m)
            est = estimate_constant(TruncatedSystem(m, K=max(s["K"], 2)), window)
            expected = linear_fractional_constant(p0, p2)
            cases.append(
                {
                    "name": "linear_fractional_constant",
                    "computed": est.c_hat,
                    "expected": expected,
                    "abs_err": abs(est.c_hat - expected),
                    "tolerance": 1e-4,
                    "pass": abs(est.c_hat - expected) <= 1e-4,
                }
            )
    else:
        raise ConfigError(
            "experiment",
            "no closed-form oracle covers this model (needs zero mean offspring, "
            "or rho = 0 with offspring on {0, 2})",
        )
    return cases


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="sporesim",
        description="Simulate and analyze the extinction of a spore-carrying host population.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured experiment")
    run_p.add_argument("--config", required=True, help="JSON config file")
    run_p.add_argument("--seed", type=int, default=None, help="override the config seed")
    run_p.add_argument("--out-dir", default=None, help="override the output directory")
    run_p.add_argument("--threads", type=int, default=1, help="worker bound for batch runs")
    run_p.add_argument(
        "--ephemeral",
        action="store_true",
        help="allow a randomized experiment without an explicit seed (one is drawn and recorded)",
    )

    val_p = sub.add_parser("validate", help="validate a config without running it")
    val_p.add_argument("--config", required=True, help="JSON config file")

    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)

        if args.command == "validate":
            report = validate(cfg.params, require_subcritical=cfg.kind in
                              ("constant", "gumbel", "slope"))
            print(report)
            print(f"experiment: {cfg.kind}")
            print(f"resolved: {_canonical_json(cfg.resolved)}")
            return EXIT_OK

        if args.seed is not None:
            cfg.set_seed(args.seed)
        if cfg.randomized and cfg.seed is None:
            if not args.ephemeral:
                raise ConfigError(
                    "experiment.seed",
                    "randomized experiments need an explicit seed "
                    "(config key, --seed, or opt out with --ephemeral)",
                )
            cfg.set_seed(secrets.randbits(63))

        result = run_experiment(cfg, out_dir=args.out_dir, threads=args.threads)
        for path in result.paths:
            print(f"wrote {path}")
        print(result.summary)
        return EXIT_OK if result.ok else EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (SolverError, NonConvergenceError, WindowError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())

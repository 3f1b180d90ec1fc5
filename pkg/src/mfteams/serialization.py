"""JSON documents for specs, experiment configs and reports.

Field names follow the dataclasses exactly and unknown keys are rejected;
errors carry the key path (``spec.cost.R``) or the line/column of a syntax
error.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diagnostics import ConvergenceReport
from .model import (
    Coupling,
    DynamicLQGSpec,
    LawFamily,
    NoiseLaw,
    ObservationKind,
    ObservationModel,
    QuadraticCost,
    TeamSpec,
)
from .montecarlo import MCConfig

SUITES = (
    "ex1_state_coupled",
    "ex2_nongaussian",
    "ex3_control_coupled",
    "ex4_asymmetric",
    "ex5_lqg_classical",
)
CSV_HEADER = ("N", "policy_gap", "cost_gap", "cost_gap_ci", "ui_stat")
CSV_HEADER_DYNAMIC = ("T", "k_residual", "cost_gap")

SUITE_OPTIONS = {
    "ex1_state_coupled": {"epsilon"},
    "ex2_nongaussian": {"epsilon"},
    "ex3_control_coupled": {"epsilon", "tol", "max_iter", "step_rule"},
    "ex4_asymmetric": {"epsilon", "tol", "max_iter", "step_rule", "asym_count", "alpha"},
    "ex5_lqg_classical": {"tol", "mc_check"},
}


class ConfigError(ValueError):
    def __init__(self, message, path=None, line=None, column=None):
        self.path, self.line, self.column = path, line, column
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if path:
            where.append(f"at '{path}'")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


# --- helpers ----------------------------------------------------------------


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _obj(doc, path, required, optional=()):
    if not isinstance(doc, dict):
        raise ConfigError("expected an object", path)
    unknown = sorted(set(doc) - set(required) - set(optional))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'", _join(path, unknown[0]))
    for k in required:
        if k not in doc:
            raise ConfigError("missing required key", _join(path, k))
    return doc


def _matrix(value, path, ndim=2):
    try:
        a = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError("expected a numeric array", path) from None
    if a.ndim == 0:
        a = a.reshape((1,) * ndim)
    if ndim == 2 and a.ndim == 1:
        a = np.diag(a) if a.size > 1 else a.reshape(1, 1)
    if a.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-d array", path)
    if not np.all(np.isfinite(a)):
        raise ConfigError("array has non-finite entries", path)
    return a


def _int(value, path, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", path)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}", path)
    return value


def _enum(cls, value, path):
    try:
        return cls(value)
    except ValueError:
        raise ConfigError(f"expected one of {[e.value for e in cls]}", path) from None


def _tolist(a):
    return np.asarray(a).tolist()


# --- specs ------------------------------------------------------------------


def law_to_dict(law):
    return {"family": law.family.value, "covariance": _tolist(law.covariance)}


def law_from_dict(doc, path):
    _obj(doc, path, ("family", "covariance"))
    return NoiseLaw(_enum(LawFamily, doc["family"], _join(path, "family")), _matrix(doc["covariance"], _join(path, "covariance")))


def spec_to_dict(spec):
    if isinstance(spec, DynamicLQGSpec):
        return {k: _tolist(getattr(spec, k)) for k in ("A", "B", "Q", "R", "Sigma_w", "Sigma_0")}
    cost = {"R": _tolist(spec.cost.R), "Q": _tolist(spec.cost.Q)}
    if spec.cost.D is not None:
        cost["D"] = _tolist(spec.cost.D)
    if spec.cost.cross_weight != 1.0:
        cost["cross_weight"] = spec.cost.cross_weight
    obs = spec.obs_model
    return {
        "action_dim": spec.action_dim,
        "obs_dim": spec.obs_dim,
        "state_dim": spec.state_dim,
        "coupling": spec.coupling.value,
        "cost": cost,
        "obs_model": {
            "kind": obs.kind.value,
            "H": _tolist(obs.H),
            "state_law": law_to_dict(obs.state_law),
            "noise_law": law_to_dict(obs.noise_law),
        },
    }


def team_spec_from_dict(doc, path="spec"):
    _obj(doc, path, ("action_dim", "obs_dim", "state_dim", "coupling", "cost", "obs_model"))
    dims = {k: _int(doc[k], _join(path, k), 1) for k in ("action_dim", "obs_dim", "state_dim")}
    cp = _join(path, "cost")
    c = _obj(doc["cost"], cp, ("R", "Q"), ("D", "cross_weight"))
    cross = c.get("cross_weight", 1.0)
    if isinstance(cross, bool) or not isinstance(cross, (int, float)):
        raise ConfigError("expected a number", _join(cp, "cross_weight"))
    cost = QuadraticCost(
        _matrix(c["R"], _join(cp, "R")),
        _matrix(c["Q"], _join(cp, "Q")),
        _matrix(c["D"], _join(cp, "D")) if "D" in c else None,
        float(cross),
    )
    op = _join(path, "obs_model")
    o = _obj(doc["obs_model"], op, ("kind", "state_law", "noise_law"), ("H",))
    kind = _enum(ObservationKind, o["kind"], _join(op, "kind"))
    H = _matrix(o["H"], _join(op, "H")) if "H" in o else np.eye(dims["obs_dim"], dims["state_dim"])
    obs = ObservationModel(kind, H, law_from_dict(o["state_law"], _join(op, "state_law")), law_from_dict(o["noise_law"], _join(op, "noise_law")))
    return TeamSpec(dims["action_dim"], dims["obs_dim"], dims["state_dim"], _enum(Coupling, doc["coupling"], _join(path, "coupling")), cost, obs)


def dynamic_spec_from_dict(doc, path="spec"):
    keys = ("A", "B", "Q", "R", "Sigma_w", "Sigma_0")
    _obj(doc, path, keys)
    vals = {}
    for k in keys:
        a = np.array(doc[k], dtype=np.float64) if k == "B" else _matrix(doc[k], _join(path, k))
        if k == "B":
            if a.ndim == 0:
                a = a.reshape(1, 1)
            elif a.ndim == 1:
                a = a.reshape(-1, 1)
            if a.ndim != 2 or not np.all(np.isfinite(a)):
                raise ConfigError("expected a finite matrix", _join(path, k))
        vals[k] = a
    return DynamicLQGSpec(**vals)


# --- experiment configs -----------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str
    spec: TeamSpec | DynamicLQGSpec
    schedule: tuple
    mc: MCConfig = MCConfig()
    output_path: str = "results"
    options: dict = field(default_factory=dict)

    @property
    def dynamic(self):
        return self.suite == "ex5_lqg_classical"

    def with_overrides(self, seed=None, samples=None, output_path=None):
        mc = MCConfig(
            samples if samples is not None else self.mc.samples,
            seed if seed is not None else self.mc.seed,
            self.mc.antithetic,
        )
        return ExperimentConfig(self.suite, self.spec, self.schedule, mc, output_path or self.output_path, dict(self.options))


def config_from_dict(doc):
    _obj(doc, "", ("suite", "spec"), ("ns", "ts", "mc", "output_path", "options"))
    suite = doc["suite"]
    if suite not in SUITES:
        raise ConfigError(f"unknown suite '{suite}'; valid suites: {', '.join(SUITES)}", "suite")
    dynamic = suite == "ex5_lqg_classical"
    key = "ts" if dynamic else "ns"
    other = "ns" if dynamic else "ts"
    if other in doc:
        raise ConfigError(f"suite {suite} takes '{key}', not '{other}'", other)
    if key not in doc:
        raise ConfigError("missing required key", key)
    sched = doc[key]
    if not isinstance(sched, list) or not sched:
        raise ConfigError("schedule must be a nonempty list", key)
    sched = tuple(_int(v, f"{key}[{i}]", 1) for i, v in enumerate(sched))
    if any(b <= a for a, b in zip(sched, sched[1:])):
        raise ConfigError("schedule must be strictly increasing", key)
    spec = dynamic_spec_from_dict(doc["spec"]) if dynamic else team_spec_from_dict(doc["spec"])
    m = _obj(doc.get("mc", {}), "mc", (), ("samples", "seed", "antithetic"))
    anti = m.get("antithetic", False)
    if not isinstance(anti, bool):
        raise ConfigError("expected a boolean", "mc.antithetic")
    try:
        mc = MCConfig(_int(m.get("samples", 10_000), "mc.samples", 1), _int(m.get("seed", 0), "mc.seed", 0), anti)
    except ValueError as exc:
        raise ConfigError(str(exc), "mc") from None
    out = doc.get("output_path", "results")
    if not isinstance(out, str):
        raise ConfigError("expected a string", "output_path")
    opts = _obj(doc.get("options", {}), "options", (), SUITE_OPTIONS[suite])
    return ExperimentConfig(suite, spec, sched, mc, out, dict(opts))


def config_to_dict(cfg):
    doc = {"suite": cfg.suite, "spec": spec_to_dict(cfg.spec)}
    doc["ts" if cfg.dynamic else "ns"] = list(cfg.schedule)
    doc["mc"] = {"samples": cfg.mc.samples, "seed": cfg.mc.seed, "antithetic": cfg.mc.antithetic}
    doc["output_path"] = cfg.output_path
    if cfg.options:
        doc["options"] = cfg.options
    return doc


def parse_json(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from None


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    return config_from_dict(parse_json(text))


# --- reports ----------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def report_to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for n, pg, cg, ci, ui in report.rows():
        w.writerow([int(n), _fmt(pg), _fmt(cg), _fmt(ci), _fmt(ui)])
    return buf.getvalue()


def dynamic_rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER_DYNAMIC)
    for T, kr, gap in rows:
        w.writerow([int(T), _fmt(kr), _fmt(gap)])
    return buf.getvalue()


def report_to_dict(report):
    return {
        "ns": [int(n) for n in report.ns],
        "policy_gap": [float(x) for x in report.policy_gap],
        "cost_gap": [float(x) for x in report.cost_gap],
        "cost_gap_ci": [float(x) for x in report.cost_gap_ci],
        "ui_stat": [float(x) for x in report.ui_stat],
        "extras": report.extras,
    }


def report_from_dict(doc):
    _obj(doc, "", ("ns", "policy_gap", "cost_gap", "cost_gap_ci", "ui_stat"), ("extras",))
    return ConvergenceReport(
        list(doc["ns"]), list(doc["policy_gap"]), list(doc["cost_gap"]), list(doc["cost_gap_ci"]), list(doc["ui_stat"]), dict(doc.get("extras", {}))
    )


def dumps(doc):
    """Canonical JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def read_report_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ConfigError("unexpected CSV header")
    cols = list(zip(*rows[1:])) if len(rows) > 1 else [()] * 5
    return ConvergenceReport([int(v) for v in cols[0]], *[[float(v) for v in c] for c in cols[1:]])

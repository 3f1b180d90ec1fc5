"""Named experiment suites: solve along an N (or T) schedule, diagnose, check."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy import linalg

from . import riccati
from .diagnostics import (
    ConvergenceReport,
    cost_gap,
    policy_gap_sup,
    uniform_integrability_stat,
)
from .exact import asymmetric_term, exact_cost
from .serialization import (
    SUITES,
    ExperimentConfig,
    config_from_dict,
    dynamic_rows_to_csv,
    report_to_csv,
    report_to_dict,
)
from .static import (
    FixedPointConfig,
    solve_control_coupled_limit,
    solve_control_coupled_N,
    solve_state_coupled_limit,
    solve_state_coupled_N,
)

UI_SLOPE_MAX = 0.05


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class SuiteResult:
    suite: str
    checks: list
    report: ConvergenceReport | None = None
    dynamic_rows: list | None = None
    extras: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(c.ok for c in self.checks)

    def csv(self):
        if self.report is not None:
            return report_to_csv(self.report)
        return dynamic_rows_to_csv(self.dynamic_rows)

    def document(self):
        doc = {"suite": self.suite, "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks]}
        if self.report is not None:
            doc["report"] = report_to_dict(self.report)
        else:
            doc["rows"] = [{"T": int(t), "k_residual": float(k), "cost_gap": float(g)} for t, k, g in self.dynamic_rows]
            doc["extras"] = self.extras
        return doc


def default_config(suite):
    if suite not in SUITES:
        raise KeyError(suite)
    text = resources.files("mfteams").joinpath("configs", f"{suite}.json").read_text()
    return config_from_dict(json.loads(text))


# --- check helpers ----------------------------------------------------------


def strictly_decreasing(xs):
    return all(b < a for a, b in zip(xs, xs[1:]))


def _decreasing_check(name, xs):
    return Check(name, strictly_decreasing(xs), "values " + ", ".join(f"{x:.6g}" for x in xs))


def _band_check(name, xs, factor=2.0):
    xs = np.asarray(xs, dtype=np.float64)
    ok = bool(np.all(xs > 0) and xs.max() <= factor * xs.min())
    return Check(name, ok, f"min {xs.min():.6g}, max {xs.max():.6g}")


def _constant_check(name, xs, tol=1e-12):
    xs = np.asarray(xs, dtype=np.float64)
    spread = float(xs.max() - xs.min())
    return Check(name, spread <= tol * max(1.0, float(np.abs(xs).max())), f"spread {spread:.3e}")


def _tail_slope_check(ui):
    # the control-coupled statistic rises toward its limit, so only the tail slope measures growth
    ns, vals = ui.ns[-2:], ui.values[-2:]
    slope = float(np.log(vals[1] / vals[0]) / np.log(ns[1] / ns[0])) if len(ns) == 2 and min(vals) > 0 else 0.0
    return Check("ui_stat has no growth trend at the tail", slope <= UI_SLOPE_MAX,
                 f"tail log-log slope {slope:.4f}, full slope {ui.slope:.4f}")


def _fp_config(opts):
    kw = {k: opts[k] for k in ("tol", "max_iter", "step_rule") if k in opts}
    return FixedPointConfig(**kw)


# --- static suites ----------------------------------------------------------


def _state_suite(cfg: ExperimentConfig):
    spec, ns, mc = cfg.spec, cfg.schedule, cfg.mc
    eps = cfg.options.get("epsilon", 1.0)
    p_inf = solve_state_coupled_limit(spec)
    pol_gaps, cost_gaps, cis, gains, gain_gap_n = [], [], [], [], []
    for N in ns:
        p_N = solve_state_coupled_N(spec, N)
        gains.append(p_N.gain.tolist())
        gain_gap_n.append(float(np.max(np.abs(p_N.gain - p_inf.gain))) * N)
        pol_gaps.append(policy_gap_sup(spec, p_N, p_inf, N, mc))
        cg = cost_gap(spec, N, p_N, p_inf)
        cost_gaps.append(cg.value)
        cis.append(cg.ci)
    ui = uniform_integrability_stat(spec, p_inf, ns, eps, mc)
    report = ConvergenceReport(list(ns), pol_gaps, cost_gaps, cis, list(ui.values),
                               {"gain_N": gains, "gain_inf": p_inf.gain.tolist(), "ui_slope": ui.slope})
    checks = [
        _decreasing_check("policy_gap strictly decreasing", pol_gaps),
        _constant_check("gain gap times N constant", gain_gap_n),
        _band_check("cost_gap times N^2 within a factor-2 band", [g * N * N for g, N in zip(cost_gaps, ns)]),
        Check("ui_stat has no growth trend", ui.slope <= UI_SLOPE_MAX, f"log-log slope {ui.slope:.4f}"),
    ]
    return SuiteResult(cfg.suite, checks, report)


def _control_suite(cfg: ExperimentConfig):
    spec, ns, mc = cfg.spec, cfg.schedule, cfg.mc
    eps = cfg.options.get("epsilon", 1.0)
    fp = _fp_config(cfg.options)
    lim = solve_control_coupled_limit(spec, fp)
    p_inf = lim.policy
    pol_gaps, cost_gaps, cis, gains, dist, consist = [], [], [], [], [], [lim.consistency_gap]
    for N in ns:
        res = solve_control_coupled_N(spec, N, fp)
        consist.append(res.consistency_gap)
        gains.append(res.gains.tolist())
        dist.append(float(np.max(np.abs(res.gains - p_inf.gain))))
        pol_gaps.append(policy_gap_sup(spec, res.policy, p_inf, N, mc))
        cg = cost_gap(spec, N, res.policy, p_inf)
        cost_gaps.append(cg.value)
        cis.append(cg.ci)
    ui = uniform_integrability_stat(spec, p_inf, ns, eps, mc)
    report = ConvergenceReport(list(ns), pol_gaps, cost_gaps, cis, list(ui.values),
                               {"gain_N": gains, "gain_inf": p_inf.gain.tolist(), "ui_slope": ui.slope,
                                "consistency_gap": max(consist)})
    checks = [
        _decreasing_check("|pi_N - pi_inf| strictly decreasing", dist),
        _decreasing_check("policy_gap strictly decreasing", pol_gaps),
        _decreasing_check("cost_gap strictly decreasing", cost_gaps),
        Check("iteration matches direct solve", max(consist) <= 1e-10, f"max gap {max(consist):.3e}"),
        _tail_slope_check(ui),
    ]
    return SuiteResult(cfg.suite, checks, report)


def _asym_weights(cfg):
    count = int(cfg.options.get("asym_count", 3))
    n = cfg.spec.action_dim
    alpha = np.asarray(cfg.options.get("alpha", np.eye(n).tolist()), dtype=np.float64).reshape(n, n)
    return [alpha] * count


def _asymmetric_suite(cfg: ExperimentConfig):
    spec, ns, mc = cfg.spec, cfg.schedule, cfg.mc
    eps = cfg.options.get("epsilon", 1.0)
    fp = _fp_config(cfg.options)
    alphas = _asym_weights(cfg)
    if min(ns) < len(alphas):
        raise ValueError("every N must be at least the number of asymmetric DMs")
    p_inf = solve_control_coupled_limit(spec, fp).policy
    pol_gaps, cost_gaps, cis, term, term_n, gains = [], [], [], [], [], []
    for N in ns:
        asym = solve_control_coupled_N(spec, N, fp, asym_weights=alphas)
        sym = solve_control_coupled_N(spec, N, fp).policy
        gains.append([p.gain.tolist() for p in asym.policy[: len(alphas) + 1]])
        pol_gaps.append(policy_gap_sup(spec, asym.policy, p_inf, N, mc))
        d = exact_cost(spec, N, asym.policy, asym_weights=alphas) - exact_cost(spec, N, p_inf, asym_weights=alphas)
        cost_gaps.append(abs(d))
        cis.append(0.0)
        t = asymmetric_term(spec, N, sym, alphas)
        term.append(t)
        term_n.append(t * N)
    ui = uniform_integrability_stat(spec, p_inf, ns, eps, mc, asym_weights=alphas)
    report = ConvergenceReport(list(ns), pol_gaps, cost_gaps, cis, list(ui.values),
                               {"asym_term": term, "gains_first_dms": gains, "gain_inf": p_inf.gain.tolist(),
                                "ui_slope": ui.slope})
    checks = [
        _decreasing_check("asymmetric term strictly decreasing", term),
        _band_check("asymmetric term times N within a factor-2 band", term_n),
        _decreasing_check("policy_gap strictly decreasing", pol_gaps),
        _decreasing_check("cost_gap strictly decreasing", cost_gaps),
        _tail_slope_check(ui),
    ]
    return SuiteResult(cfg.suite, checks, report)


# --- dynamic suite ----------------------------------------------------------


def _k_residual_check(res):
    ok = all(b <= a + 1e-12 for a, b in zip(res, res[1:])) and res[-1] <= 1e-9
    return Check("k residual nonincreasing and below 1e-9 at the largest T", ok,
                 "values " + ", ".join(f"{x:.3e}" for x in res))


def _lqg_suite(cfg: ExperimentConfig):
    spec, ts = cfg.spec, cfg.schedule
    tol = cfg.options.get("tol", 1e-12)
    K, G = riccati.infinite_horizon_lqr(spec, tol)
    rows, k0s, shift_ok = [], [], True
    for T in ts:
        sol = riccati.finite_horizon_lqr(spec, T)
        nxt = riccati.finite_horizon_lqr(spec, T + 1)
        shift_ok &= all(np.array_equal(nxt.k_seq[t], sol.k_seq[t - 1]) for t in range(1, T + 2))
        k0s.append(sol.k_seq[0])
        gap = abs(riccati.exact_average_cost(spec, T, list(sol.g_seq)) - riccati.exact_average_cost(spec, T, G))
        rows.append((T, float(np.linalg.norm(sol.k_seq[0] - K)), gap))
    are = linalg.solve_discrete_are(spec.A, spec.B, spec.Q, spec.R)
    are_err = float(np.max(np.abs(are - K)) / max(1.0, float(np.abs(are).max())))
    radius = riccati.closed_loop_radius(spec, G)
    monotone = all(riccati.is_psd_ordered(a, b) for a, b in zip(k0s, k0s[1:])) and riccati.is_psd_ordered(k0s[-1], K)
    betas = riccati.beta_homotopy(spec)
    beta_d = [float(np.linalg.norm(C - K)) for C in betas]
    Tz = min(10, riccati.TRACE_EXPANSION_MAX_T)
    zsol = riccati.finite_horizon_lqr(spec, Tz)
    z_err = max(
        abs(riccati.trace_expansion_cost(spec, Tz, list(zsol.g_seq)) - riccati.exact_average_cost(spec, Tz, list(zsol.g_seq))),
        abs(riccati.trace_expansion_cost(spec, Tz, G) - riccati.exact_average_cost(spec, Tz, G)),
    )
    checks = [
        Check("value iteration matches the ARE solution", are_err <= 1e-9, f"relative error {are_err:.3e}"),
        Check("closed loop is stable", radius < 1.0, f"spectral radius {radius:.6f}"),
        Check("k_T^0 nondecreasing in T and bounded by K", monotone),
        Check("shift identity k_{T+1}^t = k_T^{t-1} holds bitwise", bool(shift_ok)),
        _k_residual_check([r[1] for r in rows]),
        _decreasing_check("beta homotopy approaches K", beta_d),
        Check("trace expansion equals covariance recursion", z_err <= 1e-10, f"max difference {z_err:.3e}"),
    ]
    ratios = [(a[0], b[0], a[2] / b[2]) for a, b in zip(rows, rows[1:]) if b[0] == 2 * a[0] and b[2] > 0]
    if ratios:
        ok = all(1.6 <= r <= 2.4 for _, _, r in ratios)
        checks.append(Check("cost gap halves when T doubles (within 20%)", ok,
                            ", ".join(f"{a}->{b}: {r:.4f}" for a, b, r in ratios)))
    if cfg.options.get("mc_check", False):
        Tm = ts[0]
        est = riccati.simulate_average_cost(spec, Tm, G, cfg.mc)
        ex = riccati.exact_average_cost(spec, Tm, G)
        z = abs(est.mean - ex) / est.stderr
        checks.append(Check("simulated chain cost matches exact within 5 SE", z <= 5.0, f"z = {z:.3f}"))
    extras = {"K": K.tolist(), "G_inf": G.tolist(), "closed_loop_radius": radius, "beta_distance": beta_d}
    return SuiteResult(cfg.suite, checks, dynamic_rows=rows, extras=extras)


_RUNNERS = {
    "ex1_state_coupled": _state_suite,
    "ex2_nongaussian": _state_suite,
    "ex3_control_coupled": _control_suite,
    "ex4_asymmetric": _asymmetric_suite,
    "ex5_lqg_classical": _lqg_suite,
}


def run_suite(cfg: ExperimentConfig) -> SuiteResult:
    return _RUNNERS[cfg.suite](cfg)


__all__ = ["Check", "SuiteResult", "default_config", "run_suite", "strictly_decreasing"]

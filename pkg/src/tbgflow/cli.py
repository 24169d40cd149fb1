"""Scenario files, the experiment pipeline and the `tbgflow` command line.

A scenario is one JSON document::

    {
      "name": "example_5_1",
      "problem": "rap",                      # or "consensus"
      "graph": {"n_agents": 4, "edges": [[0, 1], [1, 2, 0.5], ...]},
      "costs": [{"kind": "quadratic", "a": 4, "b": 3}, ...],
      "q0": 145,                             # rap only
      "demands": [36.25, ...],               # rap only, optional (default q0/N each)
      "t_p": 7,
      "tbg": {"kind": "constant", "alpha": 80},
      "varrho": 8,                           # or "auto"
      "initial": {"x": [...], "y": [...]},   # auxiliaries default to zero
      "integrator": {"dt": 1e-4, "t_end": 10, "sample_every": 10},
      "epsilon": 0.05,                       # or "auto"
      "baseline": {"enabled": true, "gain": 2},
      "reference": [...]                     # optional externally quoted optimum
    }
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import fnmatch
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from . import analysis
from .costs import CostError, CostFunction, cost_from_config
from .dynamics import (
    CoefficientSet,
    ConfigurationError,
    MasSystem,
    Problem,
    orthogonal_frame,
    select_coefficients_consensus,
    select_coefficients_rap,
)
from .graph import DisconnectedGraph, Graph, GraphError, build_graph, spectral_bounds
from .integrator import DivergenceError, IntegratorConfig, StabilityGuardError, Trajectory, integrate
from .scalar_verify import example_4_8_suite, gronwall_check
from .tbg import Tbg, TbgError, make_constant_tbg, make_gamma_tbg, make_prior_zeta_tbg, make_theta_tbg, \
    tbg_from_config, verify_contraction

DEFAULT_EPSILON = 0.05
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
AUX_BLOCKS = {Problem.RAP: ("y", "z", "u"), Problem.CONSENSUS: ("w",)}


class ScenarioError(ValueError):
    """A scenario file that does not parse or does not validate."""


# ------------------------------------------------------------------ scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    problem: Problem
    n_agents: int
    edges: tuple[tuple[int, int, float], ...]
    costs: tuple[dict[str, Any], ...]
    t_p: float
    tbg: dict[str, Any]
    varrho: float
    x0: tuple[float, ...]
    aux0: dict[str, tuple[float, ...]]
    dt: float
    t_end: float
    sample_every: int = 1
    epsilon: float = DEFAULT_EPSILON
    q0: float | None = None
    demands: tuple[float, ...] | None = None
    baseline: bool = False
    baseline_gain: float | None = None
    reference: tuple[float, ...] | None = None
    description: str = ""
    varrho_auto: bool = field(default=False, compare=False)
    epsilon_auto: bool = field(default=False, compare=False)

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "description": self.description,
            "problem": self.problem.value,
            "graph": {"n_agents": self.n_agents, "edges": [list(e) for e in self.edges]},
            "costs": [dict(c) for c in self.costs],
        }
        if self.problem is Problem.RAP:
            d["q0"] = self.q0
            d["demands"] = list(self.demands or ())
        d.update({
            "t_p": self.t_p,
            "tbg": dict(self.tbg),
            "varrho": self.varrho,
            "initial": {"x": list(self.x0), **{k: list(v) for k, v in self.aux0.items()}},
            "integrator": {"dt": self.dt, "t_end": self.t_end, "sample_every": self.sample_every},
            "epsilon": self.epsilon,
            "baseline": {"enabled": self.baseline, "gain": self.baseline_gain},
        })
        if self.reference is not None:
            d["reference"] = list(self.reference)
        return d


def _need(d: dict[str, Any], key: str, where: str = "") -> Any:
    if key not in d:
        raise ScenarioError(f"missing field '{where}{key}'")
    return d[key]


def _number(value: Any, name: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"field '{name}' must be a finite number, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(f"field '{name}' must be positive, got {value!r}")
    return float(value)


def _vector(value: Any, name: str, n: int) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ScenarioError(f"field '{name}' must be a list of {n} numbers")
    if len(value) != n:
        raise ScenarioError(f"field '{name}' has {len(value)} entries, expected {n}")
    return tuple(_number(v, f"{name}[{i}]") for i, v in enumerate(value))


def scenario_from_dict(d: dict[str, Any], resolve: bool = True) -> Scenario:
    """Validate a parsed scenario document; `resolve` fills "auto" fields."""
    if not isinstance(d, dict):
        raise ScenarioError("scenario document must be a JSON object")
    name = str(_need(d, "name"))
    try:
        problem = Problem(str(_need(d, "problem")).lower())
    except ValueError:
        raise ScenarioError(f"field 'problem' must be 'rap' or 'consensus', got {d['problem']!r}") from None
    g = _need(d, "graph")
    n = _need(g, "n_agents", "graph.")
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise ScenarioError(f"field 'graph.n_agents' must be an integer >= 2, got {n!r}")
    edges = []
    for k, e in enumerate(_need(g, "edges", "graph.")):
        if not isinstance(e, list) or len(e) not in (2, 3):
            raise ScenarioError(f"field 'graph.edges[{k}]' must be [i, j] or [i, j, weight]")
        w = _number(e[2], f"graph.edges[{k}][2]", positive=True) if len(e) == 3 else 1.0
        edges.append((int(e[0]), int(e[1]), w))
    costs = _need(d, "costs")
    if not isinstance(costs, list) or len(costs) != n:
        got = len(costs) if isinstance(costs, list) else "no"
        raise ScenarioError(f"field 'costs' has {got} entries, expected {n}")
    for k, c in enumerate(costs):
        if not isinstance(c, dict) or "kind" not in c:
            raise ScenarioError(f"field 'costs[{k}]' must be an object with a 'kind'")
    t_p = _number(_need(d, "t_p"), "t_p", positive=True)
    tbg = dict(_need(d, "tbg"))
    _need(tbg, "kind", "tbg.")
    _number(_need(tbg, "alpha", "tbg."), "tbg.alpha", positive=True)
    q0 = demands = None
    if problem is Problem.RAP:
        q0 = _number(_need(d, "q0"), "q0")
        raw = d.get("demands")
        demands = tuple([q0 / n] * n) if not raw else _vector(raw, "demands", n)
        if abs(sum(demands) - q0) > 1e-9 * max(1.0, abs(q0)):
            raise ScenarioError(f"field 'demands' sums to {sum(demands)!r}, not q0 = {q0!r}")
    init = _need(d, "initial")
    x0 = _vector(_need(init, "x", "initial."), "initial.x", n)
    aux0 = {}
    for block in AUX_BLOCKS[problem]:
        aux0[block] = _vector(init[block], f"initial.{block}", n) if block in init else (0.0,) * n
    extra = set(init) - {"x", *AUX_BLOCKS[problem]}
    if extra:
        raise ScenarioError(f"field 'initial.{sorted(extra)[0]}' does not belong to a {problem.value} scenario")
    integ = _need(d, "integrator")
    dt = _number(_need(integ, "dt", "integrator."), "integrator.dt", positive=True)
    t_end = _number(_need(integ, "t_end", "integrator."), "integrator.t_end", positive=True)
    every = integ.get("sample_every", 1)
    if isinstance(every, bool) or not isinstance(every, int) or every < 1:
        raise ScenarioError(f"field 'integrator.sample_every' must be a positive integer, got {every!r}")
    base = d.get("baseline", {"enabled": False})
    if isinstance(base, bool):
        base = {"enabled": base}
    base_gain = base.get("gain")
    if base_gain is not None:
        base_gain = _number(base_gain, "baseline.gain", positive=True)
    if base.get("enabled") and base_gain is None:
        raise ScenarioError("field 'baseline.gain' is required when the baseline is enabled")
    reference = d.get("reference")
    if reference is not None:
        reference = _vector(reference, "reference", n)
    varrho, eps = d.get("varrho", "auto"), d.get("epsilon", "auto")
    scen = Scenario(
        name=name, problem=problem, n_agents=n, edges=tuple(edges), costs=tuple(dict(c) for c in costs),
        t_p=t_p, tbg=tbg, varrho=math.nan if varrho == "auto" else _number(varrho, "varrho", positive=True),
        x0=x0, aux0=aux0, dt=dt, t_end=t_end, sample_every=every,
        epsilon=math.nan if eps == "auto" else _number(eps, "epsilon", positive=True),
        q0=q0, demands=demands, baseline=bool(base.get("enabled", False)), baseline_gain=base_gain,
        reference=reference, description=str(d.get("description", "")),
        varrho_auto=varrho == "auto", epsilon_auto=eps == "auto",
    )
    # Building every component surfaces graph, cost and generator errors with the field named.
    try:
        spectral_bounds(build_scenario_graph(scen))
    except (GraphError, DisconnectedGraph) as exc:
        raise ScenarioError(f"field 'graph': {exc}") from None
    for k, c in enumerate(scen.costs):
        try:
            cost_from_config(c)
        except CostError as exc:
            raise ScenarioError(f"field 'costs[{k}]': {exc}") from None
    try:
        build_scenario_tbg(scen)
    except (TbgError, KeyError, ValueError) as exc:
        raise ScenarioError(f"field 'tbg': {exc}") from None
    return resolve_auto(scen) if resolve else scen


def resolve_auto(s: Scenario) -> Scenario:
    """Replace "auto" ϱ by the selector output and "auto" ε by the ε policy."""
    if s.varrho_auto:
        s = dataclasses.replace(s, varrho=coefficients_for(s, selected=True).varrho, varrho_auto=True)
    if s.epsilon_auto:
        eps, _ = epsilon_policy(s)
        s = dataclasses.replace(s, epsilon=eps, epsilon_auto=True)
    return s


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_dict(doc)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def write_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(s.to_dict(), indent=2) + "\n")


def bundled_scenario_paths() -> list[Path]:
    root = resources.files("tbgflow") / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


def bundled_scenario(name: str) -> Scenario:
    for p in bundled_scenario_paths():
        if p.stem == name:
            return load_scenario(p)
    raise KeyError(name)


# ------------------------------------------------------------------- builders

def build_scenario_graph(s: Scenario) -> Graph:
    return build_graph(s.n_agents, s.edges)


def build_scenario_costs(s: Scenario) -> list[CostFunction]:
    return [cost_from_config(c) for c in s.costs]


def build_scenario_tbg(s: Scenario) -> Tbg:
    return tbg_from_config({**s.tbg, "t_p": s.t_p})


def build_system(s: Scenario, baseline: bool = False) -> MasSystem:
    tbg = build_scenario_tbg(s)
    q = None if s.problem is Problem.RAP and s.demands is None else s.demands
    if not baseline:
        return MasSystem(s.problem, build_scenario_graph(s), build_scenario_costs(s), tbg, s.varrho, q)
    if s.baseline_gain is None:
        raise ConfigurationError("scenario has no baseline gain")
    base_tbg = make_constant_tbg(s.baseline_gain, s.t_p)
    return MasSystem(s.problem, build_scenario_graph(s), build_scenario_costs(s), base_tbg, s.varrho, q,
                     baseline=True, nominal_gain=tbg.gain(0.0))


def initial_state(s: Scenario) -> NDArray[np.float64]:
    blocks = [s.x0] + [s.aux0[b] for b in AUX_BLOCKS[s.problem]]
    return np.concatenate([np.asarray(b, dtype=np.float64) for b in blocks])


def smoothness_constants(costs: Sequence[CostFunction], generalized: bool = False) -> tuple[float, float]:
    if generalized:
        if not all(c.alt_smoothness for c in costs):
            raise ConfigurationError("some cost has no generalized-smoothness constants")
        alts = [c.alt_smoothness[0] for c in costs]
        return max(a.M for a in alts), max(a.M_tilde for a in alts)
    return max(c.smoothness.M for c in costs), max(c.smoothness.M_tilde for c in costs)


def coefficients_for(s: Scenario, selected: bool = False, generalized: bool = False) -> CoefficientSet:
    """Coefficients at the scenario's ϱ, or with ϱ from the selector when `selected`."""
    costs = build_scenario_costs(s)
    M, M_tilde = smoothness_constants(costs, generalized)
    bounds = spectral_bounds(build_scenario_graph(s))
    select = select_coefficients_rap if s.problem is Problem.RAP else select_coefficients_consensus
    return select(bounds, M, build_scenario_tbg(s), None if selected else s.varrho, M_tilde)


def reference_for(s: Scenario, seeds: Sequence[NDArray[np.float64]] = ()) -> analysis.ReferenceOptimum:
    costs = build_scenario_costs(s)
    try:
        if s.problem is Problem.RAP:
            return analysis.reference_optimum_rap(costs, s.q0, seeds=seeds, stated=s.reference)
        stated = None if s.reference is None else float(np.mean(s.reference))
        return analysis.reference_optimum_consensus(costs, initial=np.array(s.x0), stated=stated)
    except analysis.OracleError:
        if s.reference is None:
            raise
        return analysis.ReferenceOptimum(np.array(s.reference), analysis.Method.PAPER_STATED)


def epsilon_policy(s: Scenario) -> tuple[float, dict[str, Any]]:
    """ε = max(finite bound candidates, 0.05); falls back to 0.05 when the margin fails."""
    system = build_system(s)
    coeffs = coefficients_for(s)
    ref = reference_for(s)
    frame = orthogonal_frame(s.n_agents)
    s0 = initial_state(s)
    traj0 = Trajectory(np.zeros(1), s0[None, :], s.t_p, s.dt, "none")
    v0 = float(analysis.lyapunov_series(traj0, system, coeffs, frame, ref)[0])
    cands = analysis.epsilon_candidates(system, coeffs, v0)
    finite = [v for v in cands.values() if math.isfinite(v)]
    info = {"candidates": cands, "margin_ok": coeffs.margin_ok, "fallback": not finite}
    return max(finite + [DEFAULT_EPSILON]), info


# ------------------------------------------------------------------- pipeline

@dataclass
class RunResult:
    scenario: Scenario
    trajectory: Trajectory
    reference: analysis.ReferenceOptimum
    convergence: analysis.ConvergenceReport
    report: dict[str, Any]
    baseline: Trajectory | None = None
    baseline_convergence: analysis.ConvergenceReport | None = None
    runtime: float = 0.0
    baseline_runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return self.convergence.verdict is analysis.Verdict.PREDEFINED_TIME_OPTIMAL

    @property
    def exit_status(self) -> int:
        return EXIT_OK if self.passed else EXIT_FAIL


def state_columns(s: Scenario) -> list[str]:
    names = ["x"] + list(AUX_BLOCKS[s.problem])
    return [f"{b}_{i + 1}" for b in names for i in range(s.n_agents)]


def conserved_drift(traj: Trajectory, s: Scenario) -> dict[str, float]:
    """Largest change of the agent-mean of each conserved auxiliary block."""
    n = s.n_agents
    out = {}
    blocks = AUX_BLOCKS[s.problem]
    for k, b in enumerate(blocks):
        if b == "y":
            continue
        start = (k + 1) * n
        means = traj.states[:, start:start + n].mean(axis=1)
        out[b] = float(np.max(np.abs(means - means[0])))
    return out


def _audit_dict(audit: analysis.LyapunovAudit) -> dict[str, Any]:
    return {"margin_ok": audit.margin_ok, "delta": audit.delta, "exponent": audit.exponent,
            "violations": audit.violations, "max_relative_violation": audit.max_relative_violation,
            "sandwich_lower_violations": audit.sandwich_lower_violations,
            "sandwich_upper_violations": audit.sandwich_upper_violations}


def _coeff_dict(c: CoefficientSet) -> dict[str, Any]:
    d = dataclasses.asdict(c)
    d["margin_ok"] = c.margin_ok
    return d


def _conv_dict(c: analysis.ConvergenceReport) -> dict[str, Any]:
    d = dataclasses.asdict(c)
    d["verdict"] = c.verdict.value
    return d


def execute(s: Scenario, with_baseline: bool | None = None, audit: bool = True) -> RunResult:
    """Integrate a scenario (and its baseline) and assemble every report quantity."""
    system = build_system(s)
    cfg = IntegratorConfig(s.dt, s.t_end, s.sample_every)
    s0 = initial_state(s)
    t0 = time.perf_counter()
    traj = integrate(system, s0, system.tbg, cfg)
    runtime = time.perf_counter() - t0
    m = s.n_agents
    ref = reference_for(s, seeds=[traj.state_at(s.t_p)[:m], traj.states[-1, :m]])
    conv = analysis.convergence_report(traj, ref, s.t_p, s.epsilon)
    coeffs = coefficients_for(s)
    frame = orthogonal_frame(s.n_agents)
    diag = analysis.diagnostics(traj, system, ref, coeffs, frame, s.q0)
    k_tp = traj.tp_index
    report: dict[str, Any] = {
        "scenario": s.name,
        "problem": s.problem.value,
        "backend": traj.backend,
        "dt": traj.dt,
        "samples": int(traj.times.size),
        "runtime_s": runtime,
        "epsilon": s.epsilon,
        "reference": {"method": ref.method.value, "x_star": ref.x_star.tolist(),
                      "objective_value": ref.objective_value, "non_unique": ref.non_unique,
                      "candidates": [c.tolist() for c in ref.candidates]},
        "convergence": _conv_dict(conv),
        "x_at_tp": traj.states[k_tp, :m].tolist(),
        "x_final": traj.states[-1, :m].tolist(),
        "diagnostics_at_tp": {k: float(v[k_tp]) for k, v in diag.items()},
        "coefficients": _coeff_dict(coeffs),
        "conserved_drift": conserved_drift(traj, s),
        "oscillation_new": analysis.oscillation_metric(traj, s.t_p, m) if s.t_end > s.t_p else None,
    }
    costs = build_scenario_costs(s)
    if all(c.alt_smoothness for c in costs):
        gen = coefficients_for(s, generalized=True)
        report["generalized_margin"] = {"M": smoothness_constants(costs, True)[0],
                                        "M_tilde": smoothness_constants(costs, True)[1],
                                        "delta": gen.delta_generalized, "limit": gen.margin,
                                        "ok": gen.delta_generalized <= gen.margin}
    if audit:
        try:
            report["lyapunov_audit"] = _audit_dict(analysis.lyapunov_audit(traj, system, coeffs, frame, ref))
        except analysis.AuditError as exc:
            report["lyapunov_audit"] = {"error": str(exc)}
    result = RunResult(s, traj, ref, conv, report, runtime=runtime)
    if s.baseline if with_baseline is None else with_baseline:
        base_sys = build_system(s, baseline=True)
        t0 = time.perf_counter()
        base = integrate(base_sys, s0, base_sys.tbg, cfg)
        result.baseline_runtime = time.perf_counter() - t0
        analysis.diagnostics(base, base_sys, ref, coeffs, frame, s.q0)
        result.baseline = base
        result.baseline_convergence = analysis.convergence_report(base, ref, s.t_p, s.epsilon)
        osc_new = report["oscillation_new"]
        osc_base = analysis.oscillation_metric(base, s.t_p, m) if s.t_end > s.t_p else None
        report["baseline"] = {
            "gain": s.baseline_gain,
            "runtime_s": result.baseline_runtime,
            "convergence": _conv_dict(result.baseline_convergence),
            "x_at_tp": base.states[base.tp_index, :m].tolist(),
            "oscillation": osc_base,
            "oscillation_ratio": (osc_base / osc_new if osc_new else math.inf) if osc_base is not None else None,
        }
    return result


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path: Path, traj: Trajectory, s: Scenario) -> None:
    third = "demand_gap" if s.problem is Problem.RAP else "consensus_residual"
    extra = ["V", "grad_spread", third]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + state_columns(s) + extra)
        cols = [traj.diagnostics.get(k, np.full(traj.times.size, math.nan)) for k in extra]
        for i, t in enumerate(traj.times):
            w.writerow([_fmt(t)] + [_fmt(v) for v in traj.states[i]] + [_fmt(c[i]) for c in cols])


def write_plot_data(root: Path, traj: Trajectory, s: Scenario, prefix: str = "") -> None:
    """Two-column whitespace series: one file per agent, plus V and its bound when available."""
    root.mkdir(parents=True, exist_ok=True)
    for i in range(s.n_agents):
        _series(root / f"{prefix}x_{i + 1}.dat", traj.times, traj.states[:, i], f"t x_{i + 1}")
    v = traj.diagnostics.get("V")
    if v is not None and np.all(np.isfinite(v)):
        _series(root / f"{prefix}lyapunov.dat", traj.times, v, "t V")


def _series(path: Path, t: NDArray[np.float64], y: NDArray[np.float64], header: str) -> None:
    with path.open("w") as fh:
        fh.write(f"# {header}\n")
        for a, b in zip(t, y):
            fh.write(f"{_fmt(a)} {_fmt(b)}\n")


def _json_default(o: Any) -> Any:
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_artifacts(result: RunResult, out_dir: str | Path) -> Path:
    s = result.scenario
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trajectory.csv", result.trajectory, s)
    write_plot_data(out / "plot", result.trajectory, s)
    if "lyapunov_audit" in result.report and "exponent" in result.report["lyapunov_audit"]:
        exponent = result.report["lyapunov_audit"]["exponent"]
        v = result.trajectory.diagnostics.get("V")
        if exponent > 0 and v is not None:
            tbg = build_scenario_tbg(s)
            bound = np.array([analysis._safe_bound(tbg, t, exponent) for t in result.trajectory.times]) * v[0]
            _series(out / "plot" / "lyapunov_bound.dat", result.trajectory.times, bound, "t bound")
    if result.baseline is not None:
        write_csv(out / "baseline_trajectory.csv", result.baseline, s)
        write_plot_data(out / "plot", result.baseline, s, prefix="baseline_")
        b = result.report["baseline"]
        (out / "oscillation.json").write_text(json.dumps(
            {"new": result.report["oscillation_new"], "baseline": b["oscillation"],
             "ratio": b["oscillation_ratio"]}, indent=2, default=_json_default) + "\n")
    (out / "report.json").write_text(json.dumps(result.report, indent=2, default=_json_default) + "\n")
    return out


def run_scenario(s: Scenario, out_dir: str | Path, dt: float | None = None,
                 baseline: bool | None = None) -> RunResult:
    if dt is not None:
        s = dataclasses.replace(s, dt=float(dt))
    result = execute(s, with_baseline=baseline)
    write_artifacts(result, out_dir)
    return result


def time_to_epsilon(s: Scenario, baseline: bool, epsilon: float | None = None,
                    ref: analysis.ReferenceOptimum | None = None) -> dict[str, float]:
    """Simulated time of first entry into the ε-ball and the wall clock spent getting there.

    The run stops at the first sample within ε; a run that never enters costs its full length.
    """
    eps = s.epsilon if epsilon is None else epsilon
    ref = reference_for(s) if ref is None else ref
    system = build_system(s, baseline=baseline)
    m = s.n_agents
    hit: list[float] = []

    def stop(t: float, state: NDArray[np.float64]) -> bool:
        if ref.distance(state[:m]) <= eps:
            hit.append(t)
            return True
        return False

    t0 = time.perf_counter()
    traj = integrate(system, initial_state(s), system.tbg, IntegratorConfig(s.dt, s.t_end, s.sample_every),
                     stop=stop, chunk_steps=s.sample_every)
    wall = time.perf_counter() - t0
    entry = math.inf
    if hit:
        dists = ref.distances(traj.states[:, :m])
        entry = float(traj.times[int(np.argmax(dists <= eps))])
    return {"entry_time": entry, "wall_clock": wall, "reached": bool(hit)}


# -------------------------------------------------------------------- catalog

def _catalog_job(args: tuple[str, str]) -> dict[str, Any]:
    path, out = args
    s = load_scenario(path)
    t0 = time.perf_counter()
    try:
        r = run_scenario(s, Path(out) / s.name)
    except DivergenceError as exc:
        return {"scenario": s.name, "verdict": "Diverged", "dist_at_tp": math.nan,
                "runtime_s": time.perf_counter() - t0, "passed": False, "note": str(exc)}
    return {"scenario": s.name, "verdict": r.convergence.verdict.value, "dist_at_tp": r.convergence.dist_at_tp,
            "runtime_s": time.perf_counter() - t0, "passed": r.passed, "note": ""}


def _case_dict(c: Any) -> dict[str, Any]:
    return {"case": c.case, "description": c.description, "passed": c.passed, "detail": c.detail,
            "final": c.run.final, "violations": c.run.violations}


def scalar_suite_row(out: Path | None = None) -> dict[str, Any]:
    t0 = time.perf_counter()
    cases = example_4_8_suite()
    ok = all(c.passed for c in cases)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(
            [_case_dict(c) for c in cases],
            indent=2, default=_json_default) + "\n")
    return {"scenario": "example_4_8", "verdict": "Pass" if ok else "Fail", "dist_at_tp": math.nan,
            "runtime_s": time.perf_counter() - t0, "passed": ok, "note": ""}


def run_catalog(pattern: str | None, out_dir: str | Path, jobs: int = 1) -> list[dict[str, Any]]:
    """Run every bundled scenario (and the scalar suite) whose name contains `pattern`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def match(name: str) -> bool:
        return pattern is None or pattern in name or fnmatch.fnmatch(name, pattern)

    paths = [p for p in bundled_scenario_paths() if match(p.stem)]
    work = [(str(p), str(out)) for p in paths]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_catalog_job, work))
    else:
        rows = [_catalog_job(w) for w in work]
    if match("example_4_8"):
        rows.append(scalar_suite_row(out / "example_4_8"))
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "verdict", "dist_at_tp", "runtime_s"])
        for r in rows:
            w.writerow([r["scenario"], r["verdict"], _fmt(r["dist_at_tp"]), f"{r['runtime_s']:.3f}"])
    return rows


def format_table(rows: list[dict[str, Any]]) -> str:
    lines = [f"{'scenario':<14} {'verdict':<24} {'dist_at_tp':>12} {'runtime_s':>10}"]
    for r in rows:
        d = "-" if math.isnan(r["dist_at_tp"]) else f"{r['dist_at_tp']:.3e}"
        lines.append(f"{r['scenario']:<14} {r['verdict']:<24} {d:>12} {r['runtime_s']:>10.3f}")
    return "\n".join(lines)


# -------------------------------------------------------------- theorem checks

def verify_theorems(out_dir: str | Path) -> tuple[bool, dict[str, Any]]:
    """Scalar suite, contraction of the built-in generators, and the Gronwall comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cases = example_4_8_suite()
    grid = np.linspace(0.0, 1.0, 100)
    contraction = {}
    for label, tbg in [("constant", make_constant_tbg(2.0, 1.0)), ("theta", make_theta_tbg(100.0, 1.0))]:
        rep = verify_contraction(tbg, grid)
        contraction[label] = {"max_semigroup_violation": rep.max_semigroup_violation,
                              "min_rate_floor": rep.min_rate_floor, "epsilon_at_tp": rep.epsilon_at_tp,
                              "monotone": rep.monotone, "points": len(rep.checked_grid), "passed": rep.passed}
    gron = {label: gronwall_check(tbg, delta, np.linspace(0.0, 1.0, 201))
            for label, tbg, delta in [("constant", make_constant_tbg(2.0, 1.0), 1.0),
                                      ("theta", make_theta_tbg(100.0, 1.0), 10.0)]}
    report = {
        "scalar_suite": [_case_dict(c) for c in cases],
        "contraction": contraction,
        "gronwall": {k: {**dataclasses.asdict(g), "passed": g.passed} for k, g in gron.items()},
    }
    ok = (all(c.passed for c in cases) and all(v["passed"] for v in contraction.values())
          and all(g.passed for g in gron.values()))
    report["passed"] = ok
    (out / "theorems.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    return ok, report


def tbg_for_cli(kind: str, alpha: float, t_p: float, varsigma: float = 0.1) -> Tbg:
    makers = {"constant": lambda: make_constant_tbg(alpha, t_p),
              "theta": lambda: make_theta_tbg(alpha, t_p),
              "gamma": lambda: make_gamma_tbg(alpha, t_p, varsigma),
              "prior_zeta": lambda: make_prior_zeta_tbg(alpha, t_p)}
    if kind not in makers:
        raise TbgError(f"unknown generator kind {kind!r}; expected one of {sorted(makers)}")
    return makers[kind]()


# ------------------------------------------------------------------ main

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tbgflow", description="Predefined-time distributed optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="integrate one scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--dt", type=float)
    r.add_argument("--baseline", action="store_true", help="also run the comparison MAS")
    c = sub.add_parser("catalog", help="run the bundled experiment catalog")
    c.add_argument("--filter", dest="pattern")
    c.add_argument("--out", required=True)
    c.add_argument("--jobs", type=int, default=1)
    v = sub.add_parser("verify-theorems", help="scalar suite, contraction and Gronwall checks")
    v.add_argument("--out", required=True)
    t = sub.add_parser("verify-tbg", help="check the contraction properties of one generator")
    t.add_argument("--kind", required=True)
    t.add_argument("--alpha", type=float, required=True)
    t.add_argument("--tp", type=float, required=True)
    t.add_argument("--varsigma", type=float, default=0.1)
    t.add_argument("--points", type=int, default=100)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            s = load_scenario(args.scenario)
            result = run_scenario(s, args.out, dt=args.dt, baseline=True if args.baseline else None)
            c = result.convergence
            print(f"{s.name}: {c.verdict.value} dist_at_tp={c.dist_at_tp:.6g} "
                  f"post_tp_max={c.post_tp_max:.6g} eps={c.epsilon_used:g}")
            if result.baseline is not None:
                b = result.report["baseline"]
                print(f"baseline: {b['convergence']['verdict']} oscillation={b['oscillation']:.6g} "
                      f"(new {result.report['oscillation_new']:.6g})")
            return result.exit_status
        if args.command == "catalog":
            rows = run_catalog(args.pattern, args.out, jobs=args.jobs)
            print(format_table(rows))
            return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL
        if args.command == "verify-theorems":
            ok, report = verify_theorems(args.out)
            for c in report["scalar_suite"]:
                print(f"case {c['case']}: {'pass' if c['passed'] else 'FAIL'}")
            for k, v in report["contraction"].items():
                print(f"contraction {k}: {'pass' if v['passed'] else 'FAIL'}")
            for k, v in report["gronwall"].items():
                print(f"gronwall {k}: {'pass' if v['passed'] else 'FAIL'}")
            return EXIT_OK if ok else EXIT_FAIL
        tbg = tbg_for_cli(args.kind, args.alpha, args.tp, args.varsigma)
        rep = verify_contraction(tbg, np.linspace(0.0, args.tp, args.points))
        print(f"semigroup violation {rep.max_semigroup_violation:.3e}, rate floor {rep.min_rate_floor:.6f}, "
              f"mu(t_p,0) {rep.epsilon_at_tp:.3e}, monotone {rep.monotone}")
        print("pass" if rep.passed else "FAIL")
        return EXIT_OK if rep.passed else EXIT_FAIL
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TbgError, ConfigurationError, StabilityGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

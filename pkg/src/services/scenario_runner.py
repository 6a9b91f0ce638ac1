"""
Scenario execution for the command-line front end.

A scenario is a JSON object with a ``kind`` and a kind-specific payload.
Everything is computed before the first file is written, so a failing
scenario leaves no partial outputs behind.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from .. import __version__
from ..models.ambiguity_set import OTAmbiguitySet
from ..models.base import AtomBudgetExceededError, CostError, DistributionError, OTPropError
from ..models.cost import cost_from_spec, squared_euclidean
from ..models.distribution import EmpiricalDistribution
from ..models.planning import PlanStatus, PolyhedralTarget
from ..models.system import LTISystem
from ..config.settings import Settings, get_settings
from ..config.logging_config import get_logger, log_performance, log_with_context
from ..utils.helpers import safe_filename, scenario_hash, write_csv, write_json
from ..utils.validators import Validators, validate_overrides
from .drcvar import DRTrajectoryPlanner, InfeasiblePlanError, validate_plan
from .systems import (
    consensus_limit,
    consensus_trace,
    noise_ambiguity_set,
    ols_error_set,
    ols_iid_radius,
    prestabilize,
    propagate_additive,
    propagate_initial,
    propagate_multiplicative,
)
from .transport import ot_discrepancy

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4

OVERRIDE_KEYS = ("eps", "gamma", "horizon", "seed", "atom_budget")

# The planning experiment on a prestabilised two-state system.
DEMO_SCENARIO: Dict[str, Any] = {
    "kind": "plan",
    "system": {
        "A": [[0.5, -0.5], [1.0, 0.5]],
        "B": [[1.0, 0.0], [0.0, 1.0]],
        "D": [[0.1, 0.0], [0.0, 0.1]],
    },
    "prestabilize": True,
    "x0": [0.0, 0.0],
    "horizon": 10,
    "gamma": 0.1,
    "eps": [0.0, 0.1, 0.3],
    "target": {"box": {"lower": [1.0, 1.0], "upper": [2.0, 2.0]}},
    "num_samples": 5,
    "num_test_samples": 100,
    "noise_scale": 1.0,
    "mode": "exact",
    "seed": 0,
}


class ScenarioError(OTPropError):
    """Scenario file is unreadable or violates the schema."""
    pass


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, InfeasiblePlanError):
        return EXIT_INFEASIBLE
    if isinstance(error, AtomBudgetExceededError):
        return EXIT_NUMERICAL
    if isinstance(error, (ScenarioError, DistributionError, CostError)):
        return EXIT_SCHEMA
    if isinstance(error, OTPropError):
        return EXIT_NUMERICAL
    return 1


@dataclass
class ScenarioOutput:
    """Computed artefacts of one scenario, not yet written."""
    kind: str
    scenario_hash: str
    result: Dict[str, Any]
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    documents: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    infeasible: bool = False

    def envelope(self) -> Dict[str, Any]:
        return {
            "version": __version__,
            "scenario_hash": self.scenario_hash,
            "kind": self.kind,
            "result": self.result,
        }


class BatchOutcome(NamedTuple):
    name: str
    exit_code: int
    message: str


# Table helpers

def _state_columns(prefix: str, dim: int, unit: str) -> List[str]:
    return [f"{prefix}{i + 1} [{unit}]" for i in range(dim)]


def _atoms_frame(P: EmpiricalDistribution, prefix: str = "x", unit: str = "state") -> pd.DataFrame:
    frame = pd.DataFrame(P.atoms, columns=_state_columns(prefix, P.dim, unit))
    frame.insert(0, "weight [probability]", P.weights)
    return frame


def _set_summary(S: OTAmbiguitySet) -> Dict[str, Any]:
    return {
        "radius": float(S.radius),
        "exact": bool(S.exact),
        "cost": S.cost.to_dict(),
        "dim": S.dim,
        "atoms": S.center.size,
        "mean": S.center.mean().tolist(),
    }


class ScenarioRunner:
    """
    Load, validate, execute and write scenarios.

    A runner holds no per-scenario state, so one instance may execute
    several scenarios concurrently.
    """

    def __init__(self, settings: Optional[Settings] = None):
        self.settings = settings or get_settings()

    # Loading

    def load(self, path: Union[str, Path]) -> Dict[str, Any]:
        """Read a scenario file; malformed JSON raises ScenarioError."""
        ok, msg = Validators.validate_file_path(str(path))
        if not ok:
            raise ScenarioError(msg)
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ScenarioError(f"Malformed scenario file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ScenarioError("Scenario must be a JSON object")
        return data

    def prepare(self, data: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Apply flag overrides and demo defaults, then validate.

        Returns the effective scenario, whose hash identifies the outputs.
        """
        overrides = {k: v for k, v in (overrides or {}).items() if k in OVERRIDE_KEYS and v is not None}
        ok, msg = validate_overrides(overrides)
        if not ok:
            raise ScenarioError(msg)

        scenario = dict(data)
        if scenario.get("kind") == "demo":
            scenario = {**DEMO_SCENARIO, **{k: v for k, v in data.items() if k != "kind"}}
            scenario["kind"] = "demo"
        scenario.update(overrides)

        ok, msg = Validators.validate_scenario(scenario)
        if not ok:
            raise ScenarioError(msg)
        return scenario

    # Execution

    def execute(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        """Run a prepared scenario in memory."""
        kind = scenario["kind"]
        handler = {
            "discrepancy": self._discrepancy,
            "propagate": self._propagate,
            "plan": self._plan,
            "demo": self._plan,
            "consensus": self._consensus,
            "ols": self._ols,
        }[kind]
        digest = scenario_hash(scenario)
        ctx = log_with_context(logger, kind=kind, scenario_hash=digest[:12])
        ctx.info("Running scenario")
        try:
            with log_performance(logger, f"scenario_{kind}"):
                output = handler(scenario)
        except OTPropError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"Invalid {kind} scenario: {e}") from e
        output.kind = kind
        output.scenario_hash = digest
        return output

    def write(self, output: ScenarioOutput, out_dir: Union[str, Path]) -> List[Path]:
        """Write result.json, the CSV tables and any extra documents."""
        out_dir = Path(out_dir)
        written = [write_json(output.envelope(), out_dir / "result.json")]
        for name, frame in output.tables.items():
            written.append(write_csv(frame, out_dir / name))
        for name, document in output.documents.items():
            envelope = {"version": __version__, "scenario_hash": output.scenario_hash, **document}
            written.append(write_json(envelope, out_dir / name))
        logger.info(f"Wrote {len(written)} files to {out_dir}")
        return written

    def run_data(self, data: Dict[str, Any], out_dir: Union[str, Path],
                 overrides: Optional[Dict[str, Any]] = None) -> ScenarioOutput:
        """
        Prepare, execute and write one scenario.

        Raises InfeasiblePlanError after writing the outputs (including
        certificate.json) when some plan is infeasible.
        """
        scenario = self.prepare(data, overrides)
        output = self.execute(scenario)
        self.write(output, out_dir)
        if output.infeasible:
            raise InfeasiblePlanError(
                f"DR-CVaR constraint cannot be met; certificate written to {Path(out_dir) / 'certificate.json'}"
            )
        return output

    def run(self, path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
            overrides: Optional[Dict[str, Any]] = None) -> ScenarioOutput:
        """run_data on a scenario file; outputs default to <output_dir>/<file stem>."""
        data = self.load(path)
        if out_dir is None:
            out_dir = self.settings.output_dir / safe_filename(Path(path).stem)
        return self.run_data(data, out_dir, overrides)

    def run_batch(self, path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None,
                  overrides: Optional[Dict[str, Any]] = None,
                  max_workers: Optional[int] = None) -> List[BatchOutcome]:
        """
        Run independent scenarios of a batch file in parallel.

        The batch file is a list (or ``{"scenarios": [...]}``) of scenario
        objects or paths relative to the batch file. Each scenario writes
        into its own subdirectory.
        """
        batch_path = Path(path)
        data = self._load_batch(batch_path)
        out_root = Path(out_dir) if out_dir is not None else self.settings.output_dir / safe_filename(batch_path.stem)

        jobs = []
        for index, item in enumerate(data):
            if isinstance(item, str):
                item_path = batch_path.parent / item
                name = safe_filename(f"{index:03d}_{item_path.stem}")
                jobs.append((name, item_path))
            elif isinstance(item, dict):
                name = safe_filename(f"{index:03d}_{item.get('name', item.get('kind', 'scenario'))}")
                jobs.append((name, item))
            else:
                jobs.append((f"{index:03d}_invalid", None))

        def run_one(job) -> BatchOutcome:
            name, source = job
            try:
                if source is None:
                    raise ScenarioError("Batch entries must be scenario objects or paths")
                scenario = self.load(source) if isinstance(source, Path) else source
                self.run_data(scenario, out_root / name, overrides)
                return BatchOutcome(name, EXIT_OK, "ok")
            except Exception as e:  # noqa: BLE001
                code = exit_code_for(e)
                logger.error(f"Scenario {name} failed (exit {code}): {e}")
                return BatchOutcome(name, code, str(e))

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(run_one, jobs))

    def _load_batch(self, path: Path) -> List[Any]:
        ok, msg = Validators.validate_file_path(str(path))
        if not ok:
            raise ScenarioError(msg)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ScenarioError(f"Malformed batch file {path}: {e}") from e
        if isinstance(data, dict):
            data = data.get("scenarios")
        if not isinstance(data, list):
            raise ScenarioError("Batch file must be a list or an object with a 'scenarios' list")
        return data

    # Kinds

    def _system(self, scenario: Dict[str, Any]) -> LTISystem:
        sys = LTISystem.from_dict(scenario["system"])
        if scenario.get("prestabilize"):
            sys = prestabilize(sys, scenario.get("K"))
        return sys

    def _rng(self, scenario: Dict[str, Any]) -> np.random.Generator:
        if "seed" not in scenario:
            raise ScenarioError("seed is required when noise samples are generated")
        return np.random.default_rng(int(scenario["seed"]))

    def _noise_samples(self, scenario: Dict[str, Any], key: str, count_key: str, default_count: int,
                       T: int, r: int, rng_holder: List[np.random.Generator]) -> np.ndarray:
        if scenario.get(key) is not None:
            samples = np.array(scenario[key], dtype=np.float64)
            if samples.ndim == 2 and r == 1:
                samples = samples[:, :, None]
            return samples
        if not rng_holder:
            rng_holder.append(self._rng(scenario))
        count = int(scenario.get(count_key, default_count))
        scale = float(scenario.get("noise_scale", 1.0))
        return scale * rng_holder[0].standard_normal((count, T, r))

    def _discrepancy(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        P = EmpiricalDistribution.from_dict(scenario["P"])
        Q = EmpiricalDistribution.from_dict(scenario["Q"])
        cost = cost_from_spec(scenario["cost"]) if scenario.get("cost") else squared_euclidean(P.dim)
        result = ot_discrepancy(P, Q, cost)
        coupling = result.plan.to_frame().reset_index()
        return ScenarioOutput(
            kind="discrepancy",
            scenario_hash="",
            result={
                "value": result.value,
                "cost": cost.to_dict(),
                "plan": result.plan.to_dict(),
                "support_size": int(len(result.plan.support())),
                "row_residual": result.plan.row_residual(),
                "column_residual": result.plan.column_residual(),
            },
            tables={"coupling.csv": coupling},
        )

    def _propagate(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        sys = self._system(scenario)
        T = int(scenario["horizon"])
        x0 = scenario.get("x0", [0.0] * sys.n)
        u = scenario.get("u")
        unc = scenario["uncertainty"]
        kind = unc["type"]

        if kind == "initial":
            S0 = OTAmbiguitySet.from_dict(unc["set"])
            if "eps" in scenario:
                S0 = S0.with_radius(float(scenario["eps"]))
            S = propagate_initial(sys, S0, u, T)
        elif kind == "additive":
            holder: List[np.random.Generator] = []
            samples = self._noise_samples({**scenario, **unc}, "samples", "num_samples", 5, T, sys.r, holder)
            eps = float(scenario.get("eps", unc.get("eps", 0.0)))
            S = propagate_additive(sys, x0, u, noise_ambiguity_set(samples, eps), T)
        elif kind == "multiplicative":
            S1 = OTAmbiguitySet.from_dict(unc["state_set"])
            S2 = OTAmbiguitySet.from_dict(unc["input_set"])
            budget = scenario.get("atom_budget", self.settings.atom_budget)

            def progress(step: int, horizon: int, rho: float) -> None:
                logger.debug(f"multiplicative step {step}/{horizon}: radius {rho:.6g}")

            S = propagate_multiplicative(sys, x0, u, S1, S2, T, atom_budget=int(budget), progress=progress)
        else:
            raise ScenarioError(f"Unknown uncertainty type '{kind}'")

        return ScenarioOutput(
            kind="propagate",
            scenario_hash="",
            result={"type": kind, "horizon": T, "set": _set_summary(S)},
            tables={"terminal_states.csv": _atoms_frame(S.center)},
        )

    def _plan(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        sys = self._system(scenario)
        T = int(scenario["horizon"])
        gamma = float(scenario["gamma"])
        eps_values = scenario["eps"]
        eps_values = [float(e) for e in (eps_values if isinstance(eps_values, list) else [eps_values])]
        target = PolyhedralTarget.from_dict(scenario["target"])
        x0 = scenario.get("x0", [0.0] * sys.n)
        mode = scenario.get("mode", "exact")

        holder: List[np.random.Generator] = []
        train = self._noise_samples(scenario, "samples", "num_samples", 5, T, sys.r, holder)
        test = self._noise_samples(scenario, "test_samples", "num_test_samples", 100, T, sys.r, holder)

        planner = DRTrajectoryPlanner(sys, x0, train, target, gamma, T, mode, self.settings)
        results = planner.sweep(eps_values)

        plans, sweep_rows, state_frames, input_frames, certificates = [], [], [], [], []
        columns = _state_columns("x", sys.n, "state")
        for res in results:
            report = validate_plan(sys, res.u_star, test, target, gamma, x0)
            summary = res.to_dict()
            summary.pop("terminal_states")
            summary["validation"] = {
                "empirical_cvar": report.empirical_cvar,
                "fraction_in_target": report.fraction_in_target,
            }
            plans.append(summary)
            sweep_rows.append({
                "eps [transport cost]": res.eps,
                "status": res.status.value,
                "cost [input energy]": res.cost,
                "worst_case_cvar [state]": res.worst_case_cvar,
                "lambda [dual]": res.certificate.lam,
                "tau [state]": res.certificate.tau,
                "max_violation [state]": res.certificate.max_violation,
                "test_cvar [state]": report.empirical_cvar,
                "fraction_in_target [probability]": report.fraction_in_target,
            })
            for split, states in (("train", res.terminal_states), ("test", report.terminal_states)):
                frame = pd.DataFrame(states, columns=columns)
                frame.insert(0, "sample", np.arange(states.shape[0]))
                frame.insert(0, "split", split)
                frame.insert(0, "eps [transport cost]", res.eps)
                state_frames.append(frame)
            inputs = pd.DataFrame(res.inputs(sys.m), columns=_state_columns("u", sys.m, "input"))
            inputs.insert(0, "step", np.arange(T))
            inputs.insert(0, "eps [transport cost]", res.eps)
            input_frames.append(inputs)
            if res.status == PlanStatus.INFEASIBLE:
                certificates.append({"eps": res.eps, "mode": res.mode, **res.certificate.to_dict()})

        output = ScenarioOutput(
            kind=scenario["kind"],
            scenario_hash="",
            result={
                "gamma": gamma,
                "horizon": T,
                "mode": planner.mode.value,
                "closed_loop_A": sys.A.tolist(),
                "plans": plans,
            },
            tables={
                "sweep.csv": pd.DataFrame(sweep_rows),
                "terminal_states.csv": pd.concat(state_frames, ignore_index=True),
                "inputs.csv": pd.concat(input_frames, ignore_index=True),
            },
        )
        if certificates:
            output.documents["certificate.json"] = {"certificates": certificates}
            output.infeasible = True
        return output

    def _consensus(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        A = np.array(scenario["A"], dtype=np.float64)
        S0 = OTAmbiguitySet.from_dict(scenario["set"])
        if "eps" in scenario:
            S0 = S0.with_radius(float(scenario["eps"]))
        steps = int(scenario.get("steps", 50))
        res = consensus_limit(A, S0)
        spread = consensus_trace(A, S0.center, steps)
        trace = pd.DataFrame({
            "step": np.arange(steps + 1),
            "spread [state]": spread,
            "radius [transport cost]": np.full(steps + 1, res.set.radius),
        })
        return ScenarioOutput(
            kind="consensus",
            scenario_hash="",
            result={
                "n": int(A.shape[0]),
                "radius": res.set.radius,
                "weights": res.weights.tolist(),
                "set": _set_summary(res.set),
            },
            tables={"consensus.csv": trace, "consensus_center.csv": _atoms_frame(res.set.center, "c", "state")},
        )

    def _ols(self, scenario: Dict[str, Any]) -> ScenarioOutput:
        A = np.array(scenario["A"], dtype=np.float64)
        noise = OTAmbiguitySet.from_dict(scenario["noise"])
        if "eps" in scenario:
            noise = noise.with_radius(float(scenario["eps"]))
        S = ols_error_set(A, noise)
        result = {"set": _set_summary(S)}
        if scenario.get("iid_eps") is not None:
            result["iid_radius"] = ols_iid_radius(float(scenario["iid_eps"]), int(A.shape[0]))
        return ScenarioOutput(
            kind="ols",
            scenario_hash="",
            result=result,
            tables={"errors.csv": _atoms_frame(S.center, "e", "parameter")},
        )

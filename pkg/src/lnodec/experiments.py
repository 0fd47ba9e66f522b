"""Empirical studies on trained policies: perturbation sweeps, constraint
violation rates, decay-envelope checks, time-to-dose statistics, domain of
attraction grids, and the terminal-potential robustness bound.

Sweeps are embarrassingly parallel over initial states: records are keyed
by input index and merged order-independently, so a thread pool only
changes wall time, never results.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dynamics as dyn
from . import losses
from . import policy as pol
from .simulate import Trajectory, rollout, truncate_at_target

Array = np.ndarray


# ---------------------------------------------------------------------------
# Sobol sequence (dimensions 1-2, Gray-code order, index starts at 1)
# ---------------------------------------------------------------------------

_SOBOL_BITS = 52


def _sobol_direction_integers(dim: int, bits: int) -> list[list[int]]:
    """Direction integers V[d][k] scaled to ``bits`` bits for dims 1-2.

    Dimension 1 is the base-2 radical inverse (m_k = 1).  Dimension 2 uses
    the first entry of the standard direction-number table: degree-1
    recurrence m_k = 2 m_{k-1} xor m_{k-1} with m_1 = 1.
    """
    tables = []
    m = [1] * bits
    tables.append([m[k] << (bits - 1 - k) for k in range(bits)])
    if dim == 2:
        m = [1]
        for k in range(1, bits):
            m.append((2 * m[k - 1]) ^ m[k - 1])
        tables.append([m[k] << (bits - 1 - k) for k in range(bits)])
    return tables


def sobol_points(n: int, dim: int, lo, hi) -> Array:
    """First ``n`` Sobol points mapped affinely into the box [lo, hi].

    Indexing starts at sequence index 1, so the degenerate all-zeros point
    is excluded and the first point is the box midpoint.
    """
    if dim not in (1, 2):
        raise ValueError("only dimensions 1 and 2 are supported")
    if n < 1:
        raise ValueError("n must be >= 1")
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != (dim,) or hi.shape != (dim,):
        raise ValueError(f"lo/hi must have shape ({dim},)")

    V = _sobol_direction_integers(dim, _SOBOL_BITS)
    state = [0] * dim
    pts = np.empty((n, dim))
    scale = 0.5 ** _SOBOL_BITS
    for k in range(1, n + 1):
        # Gray-code step: flip the direction of the lowest zero bit of k-1
        j = ((k - 1) ^ k).bit_length() - 1
        for d in range(dim):
            state[d] ^= V[d][j]
            pts[k - 1, d] = state[d] * scale
    return lo + pts * (hi - lo)


# ---------------------------------------------------------------------------
# Sweep records and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    """Per-initial-state outcome of a sweep."""

    index: int
    x_init: tuple
    ok: bool                      # rollout stayed inside the domain guard
    violation: bool               # any grid point with g > 0
    max_constraint_excess: float  # max g over the grid (margin when negative)
    final_potential: float
    max_position: float           # max of state component 0 over the grid
    mean_abs_u: float             # mean |u| over all grid controls
    reached: bool = False         # target crossing (dose sweeps only)
    time_to_target: float = math.nan
    error: str = ""


@dataclass
class ExperimentReport:
    run_id: str
    records: list = field(default_factory=list)
    doa_grid: "DoaGrid | None" = None

    def aggregates(self) -> dict:
        """Summary statistics, recomputable from the records."""
        ok = [r for r in self.records if r.ok]
        agg = {
            "n_records": len(self.records),
            "n_failed": len(self.records) - len(ok),
            "violation_rate": violation_rate(self) if ok else math.nan,
        }
        if ok:
            agg["mean_abs_u"] = float(np.mean([r.mean_abs_u for r in ok]))
            agg["max_constraint_excess"] = float(
                max(r.max_constraint_excess for r in ok))
            agg["max_final_potential"] = float(max(r.final_potential for r in ok))
            times = [r.time_to_target for r in ok if not math.isnan(r.time_to_target)]
            if times:
                agg["mean_time_to_target"] = float(np.mean(times))
                agg["std_time_to_target"] = float(np.std(times))
                agg["n_unreached"] = sum(1 for r in ok if not r.reached)
        return agg


def violation_rate(report: ExperimentReport) -> float:
    """Fraction of evaluable records that violate the constraint."""
    ok = [r for r in report.records if r.ok]
    if not ok:
        raise ValueError("report has no evaluable records")
    return sum(1 for r in ok if r.violation) / len(ok)


def _record_from_rollout(p, params, index, x_init, gamma, kappa,
                         target_component=None, target=None) -> TrajectoryRecord:
    x_init = np.asarray(x_init, dtype=float)
    try:
        traj = rollout(p, params, x_init, gamma, kappa)
    except dyn.DomainError as e:
        return TrajectoryRecord(
            index=index, x_init=tuple(x_init), ok=False, violation=False,
            max_constraint_excess=math.nan, final_potential=math.nan,
            max_position=math.nan, mean_abs_u=math.nan, error=str(e))
    excess = max(
        dyn.eval_constraint(p, traj.states[i], traj.controls[i])
        for i in range(len(traj.times)))
    reached = False
    t_target = math.nan
    if target_component is not None:
        truncated, reached = truncate_at_target(traj, target_component, target)
        # unreached trajectories count the full horizon, a lower bound on
        # their true crossing time
        t_target = float(truncated.times[-1]) if reached else p.t_f
    return TrajectoryRecord(
        index=index, x_init=tuple(x_init), ok=True,
        violation=bool(excess > 0.0),
        max_constraint_excess=float(excess),
        final_potential=float(traj.potentials[-1]),
        max_position=float(traj.states[:, 0].max()),
        mean_abs_u=float(np.abs(traj.controls).mean()),
        reached=reached, time_to_target=t_target)


def _run_indexed(worker, n_tasks: int, jobs: int) -> list:
    if jobs <= 1 or n_tasks <= 1:
        return [worker(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(worker, range(n_tasks)))


def adversarial_sweep(p: dyn.ProblemSpec, params: pol.PolicyParams,
                      perturbations, gamma: int, kappa: float = 5.0,
                      include_nominal: bool = True, run_id: str = "sweep",
                      jobs: int = 1) -> ExperimentReport:
    """Roll out the fixed policy from perturbed initial states.

    Record 0 is the nominal initial state when ``include_nominal`` is set;
    initial states outside the domain guard yield failed records instead of
    aborting the sweep.
    """
    offsets = [np.zeros(p.n_x)] if include_nominal else []
    offsets += [np.asarray(off, dtype=float) for off in perturbations]

    def worker(i):
        return _record_from_rollout(p, params, i, p.x0 + offsets[i], gamma, kappa)

    report = ExperimentReport(run_id=run_id)
    report.records = _run_indexed(worker, len(offsets), jobs)
    return report


def dose_sweep(p: dyn.ProblemSpec, params: pol.PolicyParams, perturbations,
               target_cem: float, gamma: int, kappa: float = 5.0,
               component: int = 1, include_nominal: bool = True,
               run_id: str = "dose", jobs: int = 1) -> ExperimentReport:
    """Adversarial sweep that also records the target-crossing time."""
    offsets = [np.zeros(p.n_x)] if include_nominal else []
    offsets += [np.asarray(off, dtype=float) for off in perturbations]

    def worker(i):
        return _record_from_rollout(p, params, i, p.x0 + offsets[i], gamma,
                                    kappa, target_component=component,
                                    target=target_cem)

    report = ExperimentReport(run_id=run_id)
    report.records = _run_indexed(worker, len(offsets), jobs)
    return report


def time_to_dose(p: dyn.ProblemSpec, params: pol.PolicyParams, x_init,
                 target_cem: float, gamma: int,
                 component: int = 1) -> tuple[float, bool]:
    """Interpolated time at which the dose component crosses the target.

    Returns (t_f, False) when the target is not reached within the horizon.
    """
    traj = rollout(p, params, x_init, gamma)
    truncated, reached = truncate_at_target(traj, component, target_cem)
    return (float(truncated.times[-1]) if reached else p.t_f), reached


# ---------------------------------------------------------------------------
# Decay envelope and domain of attraction
# ---------------------------------------------------------------------------

def envelope_check(traj: Trajectory, kappa: float, t_start: float,
                   tol: float | None = None) -> tuple[Array, bool]:
    """Margins of V(x(t)) against the V(x(0)) e^{-kappa t} envelope.

    Returns (margins, satisfied) for grid times >= t_start; satisfied means
    every margin is >= -tol.  Default tol is 1e-3 * V(x(0)), matching a
    plot-relative reading of the threshold.
    """
    V0 = float(traj.potentials[0])
    if tol is None:
        tol = 1e-3 * V0
    mask = traj.times >= t_start
    envelope = V0 * np.exp(-kappa * traj.times[mask])
    margins = envelope - traj.potentials[mask]
    return margins, bool(np.all(margins >= -tol))


@dataclass(frozen=True)
class DoaGrid:
    success: Array     # boolean, shape (n1, n2)
    x1_axis: Array
    x2_axis: Array
    tol: float


def estimate_doa(p: dyn.ProblemSpec, params: pol.PolicyParams,
                 x1_range, x2_range, n1: int, n2: int, tol: float,
                 gamma: int, jobs: int = 1) -> DoaGrid:
    """Success grid: initial states whose rollout ends within tol of x*.

    Cells whose rollout leaves the domain guard are marked unsuccessful.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("grid sizes must be >= 2")
    x1_axis = np.linspace(x1_range[0], x1_range[1], n1)
    x2_axis = np.linspace(x2_range[0], x2_range[1], n2)

    def worker(flat):
        i, j = divmod(flat, n2)
        x_init = np.array([x1_axis[i], x2_axis[j]])
        try:
            traj = rollout(p, params, x_init, gamma)
        except dyn.DomainError:
            return False
        return bool(np.linalg.norm(traj.states[-1] - p.x_star) <= tol)

    flags = _run_indexed(worker, n1 * n2, jobs)
    return DoaGrid(success=np.array(flags, dtype=bool).reshape(n1, n2),
                   x1_axis=x1_axis, x2_axis=x2_axis, tol=tol)


# ---------------------------------------------------------------------------
# Robustness bound (terminal potential under initial-state perturbation)
# ---------------------------------------------------------------------------

def robustness_bound(lam_max: float, kappa: float, x0, x_star, L: float,
                     eps_bar: float, plus_variant: bool = False) -> float:
    """Terminal-potential bound lam_max e^{-kappa} ||x0 - x*||^2 -+ (L eps/kappa)(1 - e^{-kappa}).

    The default evaluates the bound with the perturbation term subtracted,
    as printed; ``plus_variant`` adds it instead, which is the form the
    comparison-function argument actually yields.  Times are normalized, so
    pass kappa scaled by the horizon when instantiating on [0, t_f].
    """
    if not (lam_max > 0.0 and kappa > 0.0):
        raise ValueError("lam_max and kappa must be positive")
    if L < 0.0 or eps_bar < 0.0:
        raise ValueError("L and eps_bar must be nonnegative")
    base = lam_max * math.exp(-kappa) * float(
        np.linalg.norm(np.asarray(x0, float) - np.asarray(x_star, float)) ** 2)
    perturb = (L * eps_bar / kappa) * (1.0 - math.exp(-kappa))
    return base + perturb if plus_variant else base - perturb


def empirical_lipschitz(p: dyn.ProblemSpec, params: pol.PolicyParams,
                        box_lo, box_hi, n_samples: int,
                        seed: int) -> tuple[float, float]:
    """Largest finite-difference slopes of V and of the closed-loop field
    over random state pairs in a box.

    These are lower bounds on the true Lipschitz constants over the box
    (which is all a finite sample can certify) and grow monotonically with
    the sample.
    """
    lo = np.asarray(box_lo, dtype=float)
    hi = np.asarray(box_hi, dtype=float)
    rng = np.random.default_rng(seed)
    L_V = 0.0
    L_f = 0.0
    for _ in range(n_samples):
        a = rng.uniform(lo, hi)
        b = rng.uniform(lo, hi)
        d = float(np.linalg.norm(a - b))
        if d == 0.0:
            continue
        dV = abs(losses.potential(a, p.x_star, p.P)
                 - losses.potential(b, p.x_star, p.P))
        Fa = dyn.eval_F(p, a, pol.forward(params, a))
        Fb = dyn.eval_F(p, b, pol.forward(params, b))
        L_V = max(L_V, dV / d)
        L_f = max(L_f, float(np.linalg.norm(Fa - Fb)) / d)
    return L_V, L_f


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def write_records_csv(report: ExperimentReport, path) -> None:
    fields = ["index", "x_init", "ok", "violation", "max_constraint_excess",
              "final_potential", "max_position", "mean_abs_u", "reached",
              "time_to_target", "error"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(fields)
        for r in report.records:
            row = asdict(r)
            row["x_init"] = " ".join(f"{v:.9g}" for v in r.x_init)
            w.writerow([row[k] for k in fields])


def write_summary_json(report: ExperimentReport, path, extra: dict | None = None) -> None:
    payload = {"run_id": report.run_id, "aggregates": report.aggregates()}
    if extra:
        payload.update(extra)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def write_doa_csv(grid: DoaGrid, path) -> None:
    """Columns: x1,x2,success; one row per grid cell."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x1", "x2", "success"])
        for i, x1 in enumerate(grid.x1_axis):
            for j, x2 in enumerate(grid.x2_axis):
                w.writerow([f"{x1:.9g}", f"{x2:.9g}", int(grid.success[i, j])])

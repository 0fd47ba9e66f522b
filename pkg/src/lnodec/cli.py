"""Command-line interface tying the library into reproducible runs.

Commands::

    train       learn a policy, write checkpoint + history + trajectory
    simulate    roll out a saved policy from the nominal initial state
    robustness  perturbation sweep + terminal-potential bound check
    doa         domain-of-attraction success grid
    dose        time-to-dose sweep (plasma)
    gradcheck   cross-validate the gradient engines on the shipped presets
    compare     train the paper's policy variants and tabulate their metrics

Every command writes its delimited outputs plus rendered PNG figures and a
manifest (config hash, seed, version) into --out; existing files are never
overwritten unless --force is given.  LNODEC_SEED overrides the seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import experiments as xp
from . import figures as fig
from . import losses
from . import policy as pol
from .config import ParseError, RunSpec, ValidationError, parse_config, spec_to_dict
from .gradients import (GRAD_ENGINES, NonFiniteError, effective_beta,
                        finite_difference_gradient, loss_gradient_adjoint,
                        loss_gradient_discrete)
from .simulate import rollout, write_trajectory_csv
from .train import train_policy, write_history_csv

COMMANDS = ("train", "simulate", "robustness", "doa", "dose", "gradcheck",
            "compare")


class CliError(RuntimeError):
    pass


def _resolve_problem(spec: RunSpec, extended_horizon: bool) -> dyn.ProblemSpec:
    p = dyn.get_problem(spec.problem)
    if extended_horizon:
        if spec.problem != "double_integrator":
            raise CliError("--extended-horizon only applies to the double integrator")
        p = p.with_horizon(2.0)
    return p


def _prepare_out(out_dir: str, names, force: bool) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    existing = [n for n in (*names, "manifest.json") if (out / n).exists()]
    if existing and not force:
        raise CliError(
            f"refusing to overwrite existing outputs in {out}: "
            f"{', '.join(sorted(existing))} (use --force or a fresh directory)")
    return out


def _write_manifest(out: Path, command: str, spec: RunSpec, args, outputs) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "numpy_version": np.__version__,
        "seed": spec.seed,
        "config": spec_to_dict(spec),
        "outputs": sorted(str(o) for o in outputs),
    }
    if args.config:
        manifest["config_path"] = str(args.config)
        manifest["config_sha256"] = hashlib.sha256(
            Path(args.config).read_bytes()).hexdigest()
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_policy_arg(args) -> pol.PolicyParams:
    if not args.policy:
        raise CliError("this command needs --policy <checkpoint>")
    return pol.load_policy(args.policy)


def _nominal_rollout(p, params, spec):
    cfg = spec.train
    return rollout(p, params, p.x0, cfg.gamma, cfg.kappa, effective_beta(cfg))


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------

def _cmd_train(spec, args):
    p = _resolve_problem(spec, args.extended_horizon)
    outputs = ["policy.bin", "policy.txt", "history.csv", "trajectory.csv",
               "history.png", "trajectory.png"]
    out = _prepare_out(args.out or spec.out_dir, outputs, args.force)
    params, history = train_policy(p, spec.train, verbose=args.verbose)
    pol.save_policy(out / "policy.bin", params)
    pol.export_policy_text(out / "policy.txt", params)
    write_history_csv(history, out / "history.csv")
    traj = _nominal_rollout(p, params, spec)
    write_trajectory_csv(traj, out / "trajectory.csv")
    fig.save_history_figure(history, out / "history.png")
    fig.save_trajectory_figure(traj, p, out / "trajectory.png")
    _write_manifest(out, "train", spec, args, outputs)
    print(f"trained {spec.train.mode} on {spec.problem}: "
          f"final loss {history[-1].total:.6g} -> {out}")
    return 0


def _cmd_simulate(spec, args):
    p = _resolve_problem(spec, args.extended_horizon)
    params = _load_policy_arg(args)
    outputs = ["trajectory.csv", "trajectory.png", "envelope.png"]
    out = _prepare_out(args.out or spec.out_dir, outputs, args.force)
    traj = _nominal_rollout(p, params, spec)
    write_trajectory_csv(traj, out / "trajectory.csv")
    fig.save_trajectory_figure(traj, p, out / "trajectory.png")
    fig.save_envelope_figure(traj, spec.train.kappa, spec.envelope.t_start,
                             out / "envelope.png")
    margins, ok = xp.envelope_check(traj, spec.train.kappa, spec.envelope.t_start,
                                    spec.envelope.tol_rel * traj.potentials[0])
    _write_manifest(out, "simulate", spec, args, outputs)
    print(f"simulated {spec.problem}: final state "
          f"{np.array2string(traj.states[-1], precision=6)}, envelope "
          f"{'satisfied' if ok else 'violated'} from t={spec.envelope.t_start:g}s")
    return 0


def _sweep_with_trajectories(p, params, offsets, gamma, kappa, jobs):
    report = xp.adversarial_sweep(p, params, offsets, gamma, kappa, jobs=jobs)
    trajs = []
    for r in report.records:
        if not r.ok:
            continue
        trajs.append(rollout(p, params, np.array(r.x_init), gamma, kappa))
    return report, trajs


def _cmd_robustness(spec, args):
    p = _resolve_problem(spec, args.extended_horizon)
    params = _load_policy_arg(args)
    cfg = spec.train
    ax = spec.adversarial
    gamma = ax.gamma or cfg.gamma
    outputs = ["records.csv", "summary.json", "phase.png", "positions.png"]
    out = _prepare_out(args.out or spec.out_dir, outputs, args.force)

    offsets = xp.sobol_points(ax.n_points, p.n_x,
                              [-ax.radius] * p.n_x, [ax.radius] * p.n_x)
    report, trajs = _sweep_with_trajectories(p, params, offsets, gamma,
                                             cfg.kappa, args.jobs)
    xp.write_records_csv(report, out / "records.csv")

    # terminal-potential bound: estimated over the box the sweep visited,
    # instantiated in horizon-normalized time
    states = np.concatenate([t.states for t in trajs])
    box_lo, box_hi = states.min(axis=0), states.max(axis=0)
    L_V, L_f = xp.empirical_lipschitz(p, params, box_lo, box_hi,
                                      n_samples=4000, seed=spec.seed)
    lam_max = float(np.linalg.eigvalsh(p.P).max())
    kappa_n = cfg.kappa * p.t_f
    L_n = L_V * L_f * p.t_f
    bound_plus = xp.robustness_bound(lam_max, kappa_n, p.x0, p.x_star, L_n,
                                     ax.radius, plus_variant=True)
    bound_minus = xp.robustness_bound(lam_max, kappa_n, p.x0, p.x_star, L_n,
                                      ax.radius, plus_variant=False)
    max_final = max(r.final_potential for r in report.records if r.ok)
    extra = {
        "lipschitz": {"L_V": L_V, "L_f": L_f,
                      "box_lo": box_lo.tolist(), "box_hi": box_hi.tolist()},
        "terminal_potential_bound": {
            "plus_variant": bound_plus,
            "minus_variant_as_printed": bound_minus,
            "max_measured_final_potential": max_final,
            "plus_bound_satisfied": bool(max_final <= bound_plus),
            "kappa_normalized": kappa_n,
            "eps_bar": ax.radius,
        },
    }
    xp.write_summary_json(report, out / "summary.json", extra=extra)
    fig.save_phase_portrait(p, params, trajs, out / "phase.png")
    fig.save_positions_figure(trajs, out / "positions.png",
                              equilibrium=p.x_star[0])
    _write_manifest(out, "robustness", spec, args, outputs)
    agg = report.aggregates()
    print(f"robustness sweep ({ax.n_points} points, radius {ax.radius:g}): "
          f"violation_rate {agg['violation_rate']:.2f}, max final potential "
          f"{max_final:.3e} vs plus-bound {bound_plus:.3e}")
    return 0


def _cmd_doa(spec, args):
    p = _resolve_problem(spec, args.extended_horizon)
    params = _load_policy_arg(args)
    d = spec.doa
    gamma = d.gamma or spec.train.gamma
    outputs = ["doa.csv", "doa.png", "summary.json"]
    out = _prepare_out(args.out or spec.out_dir, outputs, args.force)
    grid = xp.estimate_doa(p, params, (d.x1_min, d.x1_max), (d.x2_min, d.x2_max),
                           d.n1, d.n2, d.tol, gamma, jobs=args.jobs)
    xp.write_doa_csv(grid, out / "doa.csv")
    fig.save_doa_figure(grid, p.x_star, out / "doa.png")
    frac = float(grid.success.mean())
    with open(out / "summary.json", "w") as f:
        json.dump({"success_fraction": frac, "tol": d.tol,
                   "n1": d.n1, "n2": d.n2}, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out, "doa", spec, args, outputs)
    print(f"doa grid {d.n1}x{d.n2}: success fraction {frac:.3f}")
    return 0


def _cmd_dose(spec, args):
    p = _resolve_problem(spec, False)
    if spec.problem != "plasma":
        raise CliError("dose experiments need the plasma problem")
    params = _load_policy_arg(args)
    d = spec.dose
    gamma = d.gamma or spec.train.gamma
    outputs = ["records.csv", "summary.json", "dose.png"]
    out = _prepare_out(args.out or spec.out_dir, outputs, args.force)
    offsets_1d = xp.sobol_points(d.n_points, 1, [-d.radius], [d.radius])
    offsets = [np.array([off[0], 0.0]) for off in offsets_1d]
    report = xp.dose_sweep(p, params, offsets, d.target_cem, gamma,
                           spec.train.kappa, jobs=args.jobs)
    xp.write_records_csv(report, out / "records.csv")
    xp.write_summary_json(report, out / "summary.json",
                          extra={"target_cem": d.target_cem, "radius": d.radius})
    trajs = []
    for r in report.records:
        if r.ok:
            traj = rollout(p, params, np.array(r.x_init), gamma, spec.train.kappa)
            trajs.append(xp.truncate_at_target(traj, 1, d.target_cem)[0])
    fig.save_dose_panels({"policy": trajs}, out / "dose.png",
                         target_cem=d.target_cem)
    _write_manifest(out, "dose", spec, args, outputs)
    agg = report.aggregates()
    mean_t = agg.get("mean_time_to_target", float("nan"))
    print(f"dose sweep ({d.n_points} points, radius {d.radius:g}C): mean time "
          f"to {d.target_cem:g} min = {mean_t:.1f}s over "
          f"{agg['n_records'] - agg['n_failed']} feasible starts")
    return 0


def _gradcheck_case(p, cfg, seed, rng):
    arch = pol.PolicyArch(n_in=p.n_x, hidden=cfg.hidden, n_out=p.n_u)
    params = pol.init_params(arch, (p.u_lb, p.u_ub), seed)
    g_disc, _ = loss_gradient_discrete(p, params, cfg, p.x0)
    g_adj, _ = loss_gradient_adjoint(p, params, cfg, p.x0)
    coords = rng.choice(arch.n_theta, size=20, replace=False)
    h = 1e-3
    fd_h = finite_difference_gradient(p, params, cfg, p.x0, coords, h)
    fd_h2 = finite_difference_gradient(p, params, cfg, p.x0, coords, h / 2)
    fd = (4.0 * fd_h2 - fd_h) / 3.0
    floor = 1e-5 * (1.0 + np.abs(fd[coords]).max())
    err_fd = max(abs(g_disc[j] - fd[j]) / max(abs(fd[j]), floor) for j in coords)
    scale = np.abs(g_disc).max()
    err_adj = float(np.abs(g_adj - g_disc).max() / max(scale, 1e-12))
    return err_fd, err_adj


def _cmd_gradcheck(spec, args):
    from .train import TrainConfig
    names = [spec.problem] if args.config else ["double_integrator", "plasma"]
    rng = np.random.default_rng(0)
    worst_fd = 0.0
    worst_adj = 0.0
    for name in names:
        p = dyn.get_problem(name)
        base = spec.train if args.config else TrainConfig()
        cfg = base.replace(gamma=50, constrained=True,
                           beta=base.beta if base.beta > 0 else 5.0)
        for seed in (0, 1):
            err_fd, err_adj = _gradcheck_case(p, cfg, seed, rng)
            worst_fd = max(worst_fd, err_fd)
            worst_adj = max(worst_adj, err_adj)
            print(f"{name} seed {seed}: discrete-vs-FD {err_fd:.3e}, "
                  f"adjoint-vs-discrete {err_adj:.3e}")
    print(f"max relative error: discrete-vs-FD {worst_fd:.3e} (tol 1e-6), "
          f"adjoint-vs-discrete {worst_adj:.3e} (tol 1e-3)")
    ok = worst_fd <= 1e-6 and worst_adj <= 1e-3
    if args.out:
        out = _prepare_out(args.out, ["gradcheck.json"], args.force)
        with open(out / "gradcheck.json", "w") as f:
            json.dump({"max_rel_err_fd": worst_fd, "max_rel_err_adjoint": worst_adj,
                       "ok": ok}, f, indent=2)
            f.write("\n")
        _write_manifest(out, "gradcheck", spec, args, ["gradcheck.json"])
    return 0 if ok else 1


def _train_variant(p, cfg, label, out, verbose):
    params, history = train_policy(p, cfg, verbose=verbose)
    pol.save_policy(out / f"policy_{label}.bin", params)
    write_history_csv(history, out / f"history_{label}.csv")
    return params


def _cmd_compare(spec, args):
    p = _resolve_problem(spec, args.extended_horizon)
    cfg = spec.train
    out_names = ["compare.csv", "summary.json"]
    if spec.problem == "double_integrator":
        variants = {
            "NODEC": cfg.replace(mode=losses.MODE_STAGE, constrained=False),
            "L-NODEC-unconstrained": cfg.replace(mode=losses.MODE_LYAPUNOV,
                                                 constrained=False),
            "L-NODEC-constrained": cfg.replace(mode=losses.MODE_LYAPUNOV,
                                               constrained=True),
        }
        out_names += [f"policy_{k}.bin" for k in variants]
        out_names += ["phase_NODEC.png", "phase_L-NODEC-unconstrained.png",
                      "positions.png", "envelope.png"]
    elif spec.problem == "plasma":
        variants = {
            "L-NODEC": cfg.replace(mode=losses.MODE_LYAPUNOV, constrained=True),
            "NODEC-stage": cfg.replace(mode=losses.MODE_STAGE, constrained=False),
            "NODEC-terminal": cfg.replace(mode=losses.MODE_TERMINAL,
                                          constrained=False),
        }
        out_names += [f"policy_{k}.bin" for k in variants]
        out_names += ["dose_panels.png"]
    else:
        raise CliError(f"no comparison recipe for problem '{spec.problem}'")
    out = _prepare_out(args.out or spec.out_dir, out_names, args.force)

    trained = {}
    for label, vcfg in variants.items():
        if args.verbose:
            print(f"-- training {label} ({vcfg.mode}, "
                  f"constrained={vcfg.constrained})")
        trained[label] = _train_variant(p, vcfg, label, out, args.verbose)

    rows = []
    summary = {}
    if spec.problem == "double_integrator":
        ax = spec.adversarial
        offsets = xp.sobol_points(ax.n_points, 2, [-ax.radius] * 2,
                                  [ax.radius] * 2)
        positions_rep = []
        for label, params in trained.items():
            report, trajs = _sweep_with_trajectories(
                p, params, offsets, ax.gamma or cfg.gamma, cfg.kappa, args.jobs)
            xp.write_records_csv(report, out / f"records_{label}.csv")
            nominal = trajs[0]
            rows.append({
                "policy": label,
                "violation_rate": xp.violation_rate(report),
                "mean_abs_u": report.records[0].mean_abs_u,
                "max_overshoot": max(0.0, nominal.states[:, 0].max() - p.x_star[0]),
                "final_distance": float(np.linalg.norm(nominal.states[-1] - p.x_star)),
            })
            if label in ("NODEC", "L-NODEC-unconstrained"):
                fig.save_phase_portrait(p, params, trajs,
                                        out / f"phase_{label}.png")
            positions_rep.append(nominal)
        fig.save_positions_figure(positions_rep, out / "positions.png",
                                  equilibrium=p.x_star[0])
        nominal_lnodec = rollout(p, trained["L-NODEC-unconstrained"], p.x0,
                                 cfg.gamma, cfg.kappa)
        fig.save_envelope_figure(nominal_lnodec, cfg.kappa,
                                 spec.envelope.t_start, out / "envelope.png")
    else:
        d = spec.dose
        offsets_1d = xp.sobol_points(d.n_points, 1, [-d.radius], [d.radius])
        offsets = [np.array([off[0], 0.0]) for off in offsets_1d]
        panel_trajs = {}
        for label, params in trained.items():
            report = xp.dose_sweep(p, params, offsets, d.target_cem,
                                   d.gamma or cfg.gamma, cfg.kappa,
                                   jobs=args.jobs)
            xp.write_records_csv(report, out / f"records_{label}.csv")
            agg = report.aggregates()
            rows.append({
                "policy": label,
                "mean_time_to_target": agg.get("mean_time_to_target"),
                "std_time_to_target": agg.get("std_time_to_target"),
                "n_unreached": agg.get("n_unreached"),
                "n_failed": agg["n_failed"],
                "max_temp_excess": agg["max_constraint_excess"],
            })
            trajs = []
            for r in report.records:
                if r.ok:
                    t = rollout(p, params, np.array(r.x_init),
                                d.gamma or cfg.gamma, cfg.kappa)
                    trajs.append(xp.truncate_at_target(t, 1, d.target_cem)[0])
            panel_trajs[label] = trajs
        fig.save_dose_panels(panel_trajs, out / "dose_panels.png",
                             target_cem=d.target_cem)

    import csv as _csv
    with open(out / "compare.csv", "w", newline="") as f:
        w = _csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    summary["table"] = rows
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=float)
        f.write("\n")
    _write_manifest(out, "compare", spec, args, out_names)
    for row in rows:
        print("  ".join(f"{k}={v}" for k, v in row.items()))
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "simulate": _cmd_simulate,
    "robustness": _cmd_robustness,
    "doa": _cmd_doa,
    "dose": _cmd_dose,
    "gradcheck": _cmd_gradcheck,
    "compare": _cmd_compare,
}


def run(spec: RunSpec, command: str, **options) -> int:
    """Programmatic entry point mirroring the CLI commands."""
    if command not in _HANDLERS:
        raise CliError(f"unknown command '{command}' (known: {', '.join(COMMANDS)})")
    ns = argparse.Namespace(
        config=options.get("config"), out=options.get("out"),
        policy=options.get("policy"), force=options.get("force", False),
        jobs=options.get("jobs", 1), verbose=options.get("verbose", False),
        extended_horizon=options.get("extended_horizon", False))
    return _HANDLERS[command](spec, ns)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lnodec",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=f"{name} command")
        sp.add_argument("--config", default=None,
                        help="run configuration file (INI sections: [problem], "
                             "[run], [train], [experiments.*]); defaults are "
                             "the per-problem reproduction settings")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--policy", default=None,
                        help="policy checkpoint (commands evaluating a "
                             "trained policy)")
        sp.add_argument("--force", action="store_true",
                        help="allow overwriting existing outputs")
        sp.add_argument("--jobs", type=int, default=1,
                        help="worker threads for sweeps (results are "
                             "merge-order independent)")
        sp.add_argument("--extended-horizon", action="store_true",
                        help="double integrator: use t_f = 2.0 s for the "
                             "constrained variant")
        sp.add_argument("--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.config:
            spec = parse_config(args.config)
        else:
            if args.command not in ("gradcheck",):
                raise CliError("--config is required for this command")
            from .train import TrainConfig
            spec = RunSpec(problem="double_integrator", train=TrainConfig(),
                           out_dir=args.out or "runs/out")
        if args.out is None and not args.config:
            args.out = spec.out_dir
        return _HANDLERS[args.command](spec, args)
    except (CliError, ParseError, ValidationError, dyn.DomainError,
            NonFiniteError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

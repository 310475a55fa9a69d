"""Command-line surface: five scenario subcommands over one config format.

Every subcommand is a pure function of the config file and its referenced
inputs: outputs are CSV-style columnar text plus rendered figures, and
repeated invocations are byte-identical.  The exit status is 0 exactly when
every tolerance declared for the run was met (2 for configuration errors).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import ensembles as es
from . import hilbert as hl
from . import instruments as ins
from . import plotting
from . import shiftmodel as sm
from . import trajectories as tr
from .config import RunConfig, build_model, build_sde, load_config, parse_partition
from .errors import BlowUpError, CompletenessError, ConfigError, QndsimError

_COMMANDS = ("instrument-table", "simulate", "shift-check",
             "ensemble-stats", "oracle-compare")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: dict, columns, units, rows) -> None:
    lines = [f"# {key}={_fmt(val)}" for key, val in header.items()]
    lines.append("# columns=" + ",".join(columns))
    lines.append("# units=" + ",".join(units))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get_str("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_instrument_table(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    kind = cfg.get_str("instrument", "kind").lower()
    xi = cfg.get_state("instrument", "initial")
    t = cfg.get_float("instrument", "t")
    if kind == "gaussian":
        r_op = cfg.get_matrix("instrument", "r")
        hbar = cfg.get_float("instrument", "hbar")
        if "y_min" in cfg.sections.get("instrument", {}):
            space = ins.OutcomeSpace.grid(cfg.get_float("instrument", "y_min"),
                                          cfg.get_float("instrument", "y_max"),
                                          cfg.get_int("instrument", "n_points",
                                                      default=2048))
        else:
            space = None
        instr = ins.gaussian_instrument(r_op, t=t, hbar=hbar, space=space)
        columns, units = ("y", "g_xi"), ("outcome", "density")
        tol = ins.GRID_COMPLETENESS_TOL
    elif kind == "counting":
        l_op = cfg.get_matrix("instrument", "l")
        n_max = cfg.get_int("instrument", "n_max", default=-1)
        instr = ins.counting_instrument(l_op, t=t,
                                        n_max=None if n_max < 0 else n_max)
        columns, units = ("n", "p_n"), ("count", "probability")
        tol = ins.DISCRETE_COMPLETENESS_TOL
    else:
        raise ConfigError(f"[instrument] kind: must be 'gaussian' or 'counting', "
                          f"got {kind!r}")
    if xi.dim != instr.dim:
        raise ConfigError("[instrument] initial: dimension does not match the "
                          f"instrument ({xi.dim} vs {instr.dim})")
    density = ins.outcome_density(instr, xi)
    weights = instr.space.quadrature_weights()
    table = density if kind == "gaussian" else density * weights
    total = float(density @ weights)
    ok = abs(total - 1.0) <= max(tol, instr.completeness_defect + 1e-12)
    header = {
        "command": "instrument-table",
        "config_hash": cfg.hash(),
        "kind": kind,
        "completeness_defect": instr.completeness_defect,
        "density_total": total,
        "tolerance": tol,
    }
    _write_csv(out / "instrument_table.csv", header, columns, units,
               zip(instr.outcomes.tolist(), table.tolist()))
    plotting.render_instrument_table(instr.outcomes, table, instr.space.kind,
                                     out / "instrument_table.png")
    print(f"instrument-table: defect={instr.completeness_defect:.3e} "
          f"total={total:.12f} -> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    sde = build_sde(cfg)
    n_paths = cfg.get_int("ensemble", "n_paths", default=1)
    integrate = (tr.integrate_diffusive if model.unraveling == tr.DIFFUSIVE
                 else tr.integrate_counting)
    rows = []
    records = []
    failed = 0
    for stream in range(n_paths):
        name = f"traj_{stream:05d}.csv"
        try:
            rec = integrate(model, sde, stream=stream)
        except BlowUpError:
            rows.append((stream, "blowup", ""))
            failed += 1
            continue
        tr.save_trajectory(rec, out / name)
        records.append(rec)
        rows.append((stream, "ok", name))
    header = {
        "command": "simulate",
        "config_hash": cfg.hash(),
        "model_hash": model.model_hash(),
        "seed": sde.seed,
        "dt": sde.dt,
        "t_final": sde.t_final,
        "scheme": sde.scheme,
        "record_stride": sde.record_stride,
        "n_paths": n_paths,
        "failed_paths": failed,
    }
    _write_csv(out / "manifest.csv", header, ("stream", "status", "file"),
               ("index", "flag", "path"), rows)
    if records:
        plotting.render_trajectories(records, out / "trajectories.png")
    print(f"simulate: {len(records)}/{n_paths} paths ok"
          + (f", {failed} flagged in manifest" if failed else ""))
    return 0 if failed == 0 else 1


def cmd_shift_check(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    r_op = cfg.get_matrix("shift", "r")
    grain = sm.CoarseGraining(parse_partition(cfg))
    model = sm.build_dilation(r_op, grain, cfg.get_int("shift", "pointer_size"))
    unit_defect = hl.max_abs(model.S.mat.conj().T @ model.S.mat
                             - np.eye(model.dim))

    named: list[tuple[str, hl.Operator]] = []
    c_raw = cfg.get_str("shift", "c", default="").strip()
    if c_raw and c_raw.lower() != "random":
        named.append((c_raw if c_raw.lower() in ("sigmax", "sigmay", "sigmaz")
                      else "c", cfg.get_matrix("shift", "c")))
    n_random = cfg.get_int("shift", "n_random", default=0)
    if c_raw.lower() == "random" and n_random == 0:
        n_random = 20
    if n_random > 0:
        gen = tr.path_generator(cfg.get_int("shift", "seed"), stream=0)
        d = model.object_dim
        for j in range(n_random):
            a = gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))
            named.append((f"random_{j:02d}", hl.Operator(0.5 * (a + a.conj().T))))

    rows = [("unitarity_defect", "", unit_defect)]
    ok = unit_defect <= sm.UNITARITY_TOL
    for label, c_op in named:
        hcomm, icomm = sm.nondemolition_check(model, c_op)
        rows.append(("hcomm", label, hcomm))
        rows.append(("icomm", label, icomm))
        ok = ok and hcomm <= 1e-12
        if hl.max_abs(hl.commutator(c_op, model.index_observable).mat) > 1e-6:
            ok = ok and icomm >= 1e-3

    if "initial" in cfg.sections.get("shift", {}):
        xi = cfg.get_state("shift", "initial")
    else:
        ones = np.ones(model.object_dim, dtype=np.complex128)
        xi = hl.PureState(ones / np.linalg.norm(ones))
    p_points = cfg.get_int("shift", "p_points", default=64)
    p_max = cfg.get_float("shift", "p_max", default=float(np.pi))
    p_grid = np.linspace(-p_max, p_max, p_points)
    char_err = sm.characteristic_match(model, xi, p_grid)
    rows.append(("char_max_error", "", char_err))
    ok = ok and char_err <= 1e-10

    header = {
        "command": "shift-check",
        "config_hash": cfg.hash(),
        "pointer_size": model.pointer_size,
        "cells": grain.n_cells,
        "p_points": p_points,
    }
    _write_csv(out / "shift_check.csv", header, ("check", "label", "value"),
               ("name", "operator", "max_abs"), rows)

    wy, vy = hl.herm_eig(model.Y)
    amp_y = np.abs(vy.conj().T @ np.kron(xi.vec, model.phi0.vec)) ** 2
    wi, vi = hl.herm_eig(model.index_observable)
    amp_i = np.abs(vi.conj().T @ xi.vec) ** 2
    lhs = np.exp(1j * np.outer(p_grid, wy)) @ amp_y
    rhs = np.exp(1j * np.outer(p_grid, wi)) @ amp_i
    plotting.render_characteristic(p_grid, lhs, rhs, out / "characteristic.png")
    print(f"shift-check: unitarity={unit_defect:.3e} char={char_err:.3e} "
          f"-> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_ensemble_stats(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    sde = build_sde(cfg)
    n_paths = cfg.get_int("ensemble", "n_paths")
    if cfg.has_section("ensemble_stats"):
        times = cfg.get_floats("ensemble_stats", "times")
    else:
        times = [sde.t_final]
    summary = es.simulate_ensemble(model, sde, n_paths, times=times)
    oracle = es.master_equation_oracle(model, times, dt=sde.dt)
    budget = es.mixture_budget(n_paths, sde.dt)
    distances = [es.trace_distance(got, ref)
                 for got, ref in zip(summary.rho_hat, oracle)]
    ok = all(d <= budget for d in distances)

    header = {
        "command": "ensemble-stats",
        "config_hash": cfg.hash(),
        "model_hash": model.model_hash(),
        "n_paths": n_paths,
        "dt": sde.dt,
        "trace_distance_budget": budget,
    }
    _write_csv(out / "rho_compare.csv", header, ("t", "trace_distance"),
               ("time", "distance"), zip(times, distances))
    plotting.render_trace_distance(times, distances, budget,
                                   out / "rho_compare.png")

    law = es.output_law_check(summary, model, times[-1])
    edges, emp, theo = law.table
    mass_ok = abs(float(np.sum(emp)) - 1.0) <= 1e-12
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    hist_header = dict(header)
    hist_header.update({
        "time": times[-1],
        "sup_cdf_error": law.sup_cdf_error,
        "mean_empirical": law.mean_empirical,
        "mean_theory": law.mean_theory,
        "var_empirical": law.var_empirical,
        "var_theory": law.var_theory,
        "effective_sample_size": law.effective_sample_size,
    })
    _write_csv(out / "output_hist.csv", hist_header,
               ("bin", "empirical", "theoretical"),
               ("outcome", "mass", "mass"), zip(centers, emp, theo))
    plotting.render_histogram(edges, emp, theo, model.unraveling,
                              out / "output_hist.png")
    ok = ok and mass_ok
    print("ensemble-stats: "
          + " ".join(f"TD(t={t:g})={d:.4f}" for t, d in zip(times, distances))
          + f" budget={budget:.4f} cdf_err={law.sup_cdf_error:.4f} "
          f"-> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def cmd_oracle_compare(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    model = build_model(cfg)
    sde = build_sde(cfg)
    if cfg.has_section("oracle_compare") and \
            "n_paths" in cfg.sections["oracle_compare"]:
        n_paths = cfg.get_int("oracle_compare", "n_paths")
    else:
        n_paths = cfg.get_int("ensemble", "n_paths", default=100)
    dt_values = cfg.get_floats("oracle_compare", "dt_values") \
        if cfg.has_section("oracle_compare") else [sde.dt]
    header = {
        "command": "oracle-compare",
        "config_hash": cfg.hash(),
        "model_hash": model.model_hash(),
        "n_paths": n_paths,
        "unraveling": model.unraveling,
    }
    if model.unraveling == tr.DIFFUSIVE:
        rep = es.diffusive_convergence(model, sde, dt_values, n_paths)
        ok = rep.monotone and rep.fitted_order >= 0.5
        header["fitted_order"] = rep.fitted_order
        header["monotone"] = rep.monotone
        _write_csv(out / "convergence.csv", header, ("dt", "max_error"),
                   ("step", "amplitude"), zip(rep.dt_values, rep.max_errors))
        plotting.render_convergence(rep.dt_values, rep.max_errors,
                                    rep.fitted_order, out / "convergence.png")
        print(f"oracle-compare: order={rep.fitted_order:.3f} "
              f"monotone={rep.monotone} -> {'ok' if ok else 'FAIL'}")
    else:
        dts = sorted(dt_values, reverse=True)
        errs = []
        for dt in dts:
            cfg_dt = tr.SDEConfig(t_final=sde.t_final, dt=float(dt),
                                  seed=sde.seed, scheme=tr.EXACT_PIECEWISE,
                                  record_stride=sde.record_stride)
            errs.append(es.counting_exactness(model, cfg_dt, n_paths))
        ok = all(e <= 1e-12 for e in errs)
        header["tolerance"] = 1e-12
        _write_csv(out / "convergence.csv", header, ("dt", "max_error"),
                   ("step", "amplitude"), zip(dts, errs))
        plotting.render_convergence(np.asarray(dts), np.asarray(errs),
                                    0.0, out / "convergence.png")
        print(f"oracle-compare: max_error={max(errs):.3e} "
              f"-> {'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


_DISPATCH = {
    "instrument-table": cmd_instrument_table,
    "simulate": cmd_simulate,
    "shift-check": cmd_shift_check,
    "ensemble-stats": cmd_ensemble_stats,
    "oracle-compare": cmd_oracle_compare,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="qndsim",
        description="Simulator for quantum nondemolition measurement models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output directory (overrides [output] dir)")
        p.add_argument("--paths", type=int, help="override [ensemble] n_paths")
        p.add_argument("--seed", type=int, help="override the configured seed")
    args = parser.parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides[("output", "dir")] = args.out
    if args.paths is not None:
        overrides[("ensemble", "n_paths")] = args.paths
    if args.seed is not None:
        overrides[("sde", "seed")] = args.seed
        overrides[("shift", "seed")] = args.seed
    try:
        cfg = load_config(args.config, overrides)
        if args.out is not None and "output" not in cfg.sections:
            cfg.sections["output"] = {"dir": str(args.out)}
        return _DISPATCH[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CompletenessError, BlowUpError, QndsimError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

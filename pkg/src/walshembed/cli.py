"""Command line entry point: validate, barrier, embed, compare, dual-check."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dubins, dual, sim, stats, vallois
from .measure import (
    MeasureError,
    SpinningMeasure,
    centered_spinning,
    first_moment,
    is_admissible,
    is_centered,
    polar_decompose,
    second_moment,
)
from .rules import RuleError

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_TOLERANCE = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def load_spec(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read spec {path}: {e}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"spec {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("rays"), list):
        raise ConfigError("spec must be an object with a 'rays' list")
    return raw


def _kappa_override(text: str | None) -> SpinningMeasure | None:
    if text is None:
        return None
    try:
        probs = json.loads(text)
        return SpinningMeasure({str(k): float(v) for k, v in probs.items()})
    except (json.JSONDecodeError, AttributeError, TypeError, ValueError) as e:
        raise ConfigError(f"--kappa must be a JSON object of probabilities: {e}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _params(args) -> sim.SimParams:
    if args.paths < 1:
        raise ConfigError("--paths must be >= 1")
    try:
        return sim.SimParams(dt=args.dt, t_max=args.t_max, n_paths=args.paths, seed=args.seed,
                             bridge_refinement=args.bridge == "on")
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _target(args):
    target = polar_decompose(load_spec(args.spec))
    return target, centered_spinning(target)


def _rule(method: str, target, kappa, depth: int):
    if method == "dubins":
        return dubins.dubins_rule(target, kappa, depth)
    return vallois.build_barrier(target).rule()


def _law_report(batch, target, w1_tol: float) -> list[stats.Check]:
    emp = stats.EmpiricalLaw.from_batch(batch)
    pmf = {r.ray_id: r.weight for r in target.rays}
    return stats.law_checks(emp, pmf, {r.ray_id: r.radial for r in target.rays}, w1_tol=w1_tol)


def _stopped_check(batch) -> stats.Check:
    frac = float(batch.stopped.mean())
    return stats.Check("stopped_fraction", frac, 1.0, frac == 1.0)


# --------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    target = polar_decompose(load_spec(args.spec))
    centered = centered_spinning(target)
    override = _kappa_override(args.kappa)
    kappa = override or centered
    checks = [
        stats.Check("admissible", float(is_admissible(target, kappa)), 1.0, is_admissible(target, kappa)),
        stats.Check("centered", float(is_centered(target, kappa)), 1.0, is_centered(target, kappa)),
    ]
    report = stats.report_json(
        checks, command="validate",
        rays={r.ray_id: {"weight": r.weight, "barycenter": r.barycenter} for r in target.rays},
        origin_mass=target.origin_mass, first_moment=first_moment(target),
        second_moment=second_moment(target),
        centered_kappa={g: centered[g] for g in centered.ray_ids},
        kappa={g: kappa[g] for g in kappa.ray_ids})
    _write(_outdir(args) / "validate.json", report)
    sys.stdout.write(report)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VALIDATION


def cmd_barrier(args) -> int:
    target, _ = _target(args)
    bar = vallois.build_barrier(target)
    out = _outdir(args)
    with open(out / "barrier.csv", "w") as fh:
        vallois.write_barrier_csv(bar, fh)
    breaks = [p.s1 for p in bar.pieces[:-1]]
    report = stats.report_json(
        [], command="barrier", m=bar.m, tail=bar.tail, l_max=bar.l_max,
        truncated_mass=bar.truncated_mass,
        s_breakpoints=breaks, h_breakpoints=[bar.H(s) for s in breaks],
        lambda_breakpoints=[bar.Lambda(s) for s in breaks])
    _write(out / "barrier.json", report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_embed(args) -> int:
    target, kappa = _target(args)
    params = _params(args)
    rule = _rule(args.method, target, kappa, args.depth)
    batch = sim.run_batch(rule, kappa, params, threads=args.threads)
    out = _outdir(args)
    with open(out / "samples.csv", "w") as fh:
        sim.write_samples_csv(batch, fh)
    checks = _law_report(batch, target, args.w1_tol)
    tau_mean, tau_se = stats.mean_se(batch.tau[batch.stopped])
    lt_mean, lt_se = stats.mean_se(batch.local_time[batch.stopped])
    meta = {"command": "embed", "method": args.method, "paths": params.n_paths, "dt": params.dt,
            "seed": params.seed, "bridge": args.bridge, "tau_mean": tau_mean, "tau_se": tau_se,
            "local_time_mean": lt_mean, "local_time_se": lt_se, "m": first_moment(target)}
    if args.method == "dubins":
        law = dubins.analytic_law(target, args.depth)
        with open(out / "law.csv", "w") as fh:
            dubins.write_law_csv(law, fh)
        meta["depth"] = args.depth
        meta["expected_tau_analytic"] = law.expected_time
        meta["wasserstein_gap"] = dubins.wasserstein_gap(target, args.depth)
        exact = dubins.exact_depth(target, max_depth=args.depth)
        if exact is None:
            # the stopped law is the depth-stage law, not the target itself
            emp = stats.EmpiricalLaw.from_batch(batch)
            checks = stats.law_checks(emp, law.ray_pmf, {g: law.radial(g) for g in law.ray_ids},
                                      w1_tol=args.w1_tol)
        ok = abs(tau_mean - law.expected_time) <= 3 * tau_se + 1e-12
        checks.append(stats.Check("tau_mean", tau_mean, law.expected_time, ok, {"se": tau_se}))
    checks.append(_stopped_check(batch))
    if args.dump_path is not None:
        path, _ = sim.simulate_path(kappa, params, args.dump_path, rule)
        with open(out / "path.csv", "w") as fh:
            sim.write_path_csv(path, fh)
    report = stats.report_json(checks, **meta)
    _write(out / "embed.json", report)
    sys.stdout.write(report)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE


def cmd_compare(args) -> int:
    target, kappa = _target(args)
    params = _params(args)
    cost = dual.get_cost(args.psi)
    bar = vallois.build_barrier(target)
    v = sim.run_batch(bar.rule(), kappa, params, threads=args.threads)
    d = sim.run_batch(dubins.dubins_rule(target, kappa, args.depth), kappa, params, threads=args.threads)
    diff, half = stats.compare_cost(v.local_time[v.stopped], d.local_time[d.stopped], cost.psi)
    checks = [stats.Check("vallois_minus_dubins", diff, half, diff <= half, {"point_estimate_le_0": diff <= 0})]
    ids = list(kappa.ray_ids)
    subset = ids[:1] if len(ids) > 1 else ids
    rows = []
    ui = None
    if len(ids) > 1:
        ui = vallois.ui_diagnostic(v, kappa, subset, args.ui_grid)
        rows = [{"x": r.x, "value": r.value, "stderr": r.stderr} for r in ui["rows"]]
    meta = {"command": "compare", "psi": cost.name, "paths": params.n_paths, "dt": params.dt,
            "seed": params.seed, "depth": args.depth,
            "cost_vallois": float(np.mean(cost.psi(v.local_time[v.stopped]))),
            "cost_dubins": float(np.mean(cost.psi(d.local_time[d.stopped]))),
            "ui_subset": subset, "ui_rows": rows,
            "ui_non_increasing": ui["non_increasing"] if ui else None,
            "ui_decays": ui["decays"] if ui else None}
    report = stats.report_json(checks, **meta)
    out = _outdir(args)
    _write(out / "compare.json", report)
    sys.stdout.write(report)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE


def cmd_dual_check(args) -> int:
    target, kappa = _target(args)
    params = _params(args)
    cost = dual.get_cost(args.psi)
    bar = vallois.build_barrier(target)
    cert = dual.dual_certificate(bar, cost)
    out = _outdir(args)
    with open(out / "certificate_l.csv", "w") as fl, open(out / "certificate_r.csv", "w") as fr:
        dual.write_certificate_csv(cert, fl, fr)
    rule = bar.rule()
    max_gap, stop_gaps, hit_gaps, m_end = -math.inf, [], [], []
    for p in range(params.n_paths):
        path, sample = sim.simulate_path(kappa, params, p, rule)
        g, last = dual.pathwise_gap(path, cert, cost)
        max_gap = max(max_gap, g)
        stop_gaps.append(last)
        k = cert.ray_ids.index(sample.ray_id)
        hit_gaps.append(float(dual.gap_values(np.array([k]), np.array([sample.radius]),
                                              np.array([sample.local_time]), cert)[0]))
        m_end.append(float(dual.dual_M(path, cert)[-1]))
    m_mean, m_se = stats.mean_se(m_end)
    eq = float(np.max(np.abs(hit_gaps)))
    checks = [
        stats.Check("max_pathwise_gap", max_gap, args.gap_bound, max_gap <= args.gap_bound),
        stats.Check("equality_gap_at_stop", eq, args.gap_bound, eq <= args.gap_bound),
        stats.Check("mean_M_at_stop", abs(m_mean), 3 * m_se, abs(m_mean) <= 3 * m_se, {"mean": m_mean}),
        stats.Check("identity_residual", cert.consistency_residual(), 1e-8, cert.consistency_residual() <= 1e-8),
    ]
    meta = {"command": "dual-check", "psi": cost.name, "paths": params.n_paths, "dt": params.dt,
            "seed": params.seed, "G_at_origin": cert.G(0, 0.0), "K_inf": cert.K_inf,
            "skeleton_stop_gap_mean_abs": float(np.mean(np.abs(stop_gaps))),
            "skeleton_stop_gap_max_abs": float(np.max(np.abs(stop_gaps)))}
    report = stats.report_json(checks, **meta)
    _write(out / "dual.json", report)
    sys.stdout.write(report)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_TOLERANCE


# --------------------------------------------------------------------------
# parser


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="walshembed", description="Skorokhod embeddings for Walsh Brownian motion")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, sim_flags=True):
        p.add_argument("--spec", required=True, help="measure spec (JSON)")
        p.add_argument("--out", default="out", help="output directory")
        if sim_flags:
            p.add_argument("--dt", type=float, default=1e-4)
            p.add_argument("--t-max", type=float, default=200.0)
            p.add_argument("--paths", type=int, default=100_000)
            p.add_argument("--seed", type=_u64, default=0)
            p.add_argument("--bridge", choices=("on", "off"), default="on")
            p.add_argument("--threads", type=int, default=None,
                           help="worker processes (default: $WALSHEMBED_THREADS or 1)")

    p = sub.add_parser("validate", help="decompose the target and check kappa")
    common(p, sim_flags=False)
    p.add_argument("--kappa", help='spinning measure override, e.g. \'{"A": 0.5, "B": 0.5}\'')
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("barrier", help="write the barrier tables")
    common(p, sim_flags=False)
    p.set_defaults(func=cmd_barrier)

    p = sub.add_parser("embed", help="simulate an embedding and check the stopped law")
    common(p)
    p.add_argument("--method", choices=("dubins", "vallois"), default="vallois")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--w1-tol", type=float, default=0.05)
    p.add_argument("--dump-path", type=int, default=None, metavar="INDEX", help="also write one path as CSV")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("compare", help="compare E[psi(L_tau)] between the two embeddings")
    common(p)
    p.add_argument("--psi", choices=sorted(dual.COSTS), default="exp")
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--ui-grid", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dual-check", help="evaluate the dual certificate along simulated paths")
    common(p)
    p.add_argument("--psi", choices=sorted(dual.COSTS), default="exp")
    p.add_argument("--gap-bound", type=float, default=0.02)
    p.set_defaults(func=cmd_dual_check, paths=1000)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 0) is None:
        try:
            args.threads = sim.default_threads()
        except ValueError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
    if getattr(args, "depth", 1) < 1:
        print("error: --depth must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeasureError, RuleError) as e:
        print(f"validation failed: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry points: inspect, tables, simulate, verify.

Each command takes one TOML campaign file; flags only override the seed,
output directory, worker count and path-dump size, so any result is
reproducible from the config artifact alone.  Worker count resolution:
--workers flag, then [run] workers, then the LCB_WORKERS environment
variable, then 1."""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path as FilePath

import numpy as np

from . import analytic, mechanism, montecarlo, report
from .config import CampaignSpec, load_config
from .paths import (
    SimConfig,
    dual_u_block,
    dual_v_block,
    gou_block,
    lcb_block,
    levy_block,
    simulate_cb_conditioned,
    simulate_conditioned,
    simulate_gou_and_timechange,
    simulate_lcb_euler,
    simulate_levy,
    simulate_U,
    simulate_V,
    simulate_V_down,
    v_down_block,
)
from .montecarlo import collect_campaign

__all__ = ["main", "cmd_inspect", "cmd_tables", "cmd_simulate", "cmd_verify"]


def _resolve_workers(spec: CampaignSpec, flag: int | None) -> int:
    if flag is not None:
        return flag
    if spec.run.workers is not None:
        return int(spec.run.workers)
    env = os.environ.get("LCB_WORKERS")
    return int(env) if env else 1


def _build_ht(spec: CampaignSpec) -> analytic.HTransform:
    return analytic.HTransform(spec.mechanism, analytic.build_scale_table(spec.mechanism))


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(spec: CampaignSpec, out=None) -> int:
    mech = spec.mechanism
    rep = mechanism.classify(mech)
    print(f"mechanism hash {mechanism.mechanism_hash(mech)}", file=out)
    print(f"  sigma={mech.sigma:.6g} gamma={mech.gamma:.6g} c={mech.c:.6g} "
          f"pi-kind={mech.pi.kind}", file=out)
    probes = [0.1, 0.5, 1.0, 2.0, 10.0]
    vals = ", ".join(f"Psi({x:g})={mechanism.psi_eval(mech, x):.6g}" for x in probes)
    print(f"  {vals}", file=out)
    print(f"  rho (Psi'(0+)) = {rep.rho:.6g}", file=out)
    print(f"  zero accessible: {rep.grey}", file=out)
    print(f"  log-moment finite: {rep.log_moment}", file=out)
    print(f"  non-explosion integral infinite: {rep.calE_infinite}", file=out)
    print(f"  Psi(inf) = inf: {rep.psi_inf_infinite}", file=out)
    print(f"  extinction hypothesis holds: {rep.H_holds}", file=out)
    print(f"  ell = {rep.ell:.10g}", file=out)
    if mech.c == 0.0:
        print("  competition-free: duality and scale machinery unavailable", file=out)
    for note in rep.notes:
        print(f"  note: {note}", file=out)
    return 0


# ---------------------------------------------------------------------------
# tables


def cmd_tables(spec: CampaignSpec, out=None) -> int:
    outdir = FilePath(spec.run.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ht = _build_ht(spec)
    sc = ht.scale
    table_path = outdir / "scale_table.csv"
    analytic.scale_table_to_csv(sc, table_path)

    failures = []
    reloaded = analytic.scale_table_from_csv(table_path, spec.mechanism)
    if not np.allclose(reloaded["S"], sc.S_values, rtol=1e-12, atol=0.0):
        failures.append("round-trip S mismatch beyond 1e-12")

    # speed-measure/scale-function identity on the full grid
    resid = np.max(np.abs(sc.grid * sc.S_prime(sc.grid) * sc.m_values + 1.0))
    if resid > 1e-8:
        failures.append(f"x(-S)'(x) m(x) = 1 residual {resid:.3e} > 1e-8")

    # two representations of h
    z_probe = np.array([0.1, 1.0, 10.0])
    for z in z_probe:
        direct = float(ht.h(z))
        alt = float(ht.h_alt(z))
        rel = abs(direct - alt) / max(abs(direct), 1e-300)
        if rel > 1e-6:
            failures.append(f"h representations differ by {rel:.3e} at z={z}")

    zs = np.exp(np.linspace(math.log(1e-4), math.log(50.0), 200))
    h_path = outdir / "h_grid.csv"
    with open(h_path, "w") as fh:
        fh.write(f"# lcb-h-grid config={spec.config_hash}\n")
        fh.write("z,h,h_prime,b,k\n")
        hv = ht.h_vec(zs)
        hp = ht.h_prime_vec(zs)
        for z, h, p in zip(zs, hv, hp):
            fh.write(f"{z:.17e},{h:.17e},{p:.17e},{float(ht.b(z)):.17e},{float(ht.k(z)):.17e}\n")

    print(f"wrote {table_path} and {h_path}", file=out)
    for key, value in sc.diagnostics.items():
        print(f"  diagnostic: {key} = {value}", file=out)
    for f in failures:
        print(f"  CROSS-CHECK FAILED: {f}", file=out)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# simulate


def _checkpoint_times(cfg: SimConfig, max_points: int = 50):
    stride = max(1, cfg.n_steps // max_points)
    return [k * cfg.dt for k in range(stride, cfg.n_steps + 1, stride)]


def _block_runner(spec: CampaignSpec, ht, cps):
    mech, run = spec.mechanism, spec.run
    sim = run.simulator

    def fn(rng, n):
        if sim == "lcb":
            o = lcb_block(mech, spec.sim, rng, n, run.z0, checkpoints=cps)
        elif sim == "conditioned":
            o = lcb_block(mech, spec.sim, rng, n, run.z0, ht=ht, conditioned=True,
                          checkpoints=cps)
        elif sim == "cb-conditioned":
            o = lcb_block(mech, spec.sim, rng, n, run.z0, cb_immigration=True,
                          checkpoints=cps)
        elif sim == "levy":
            o = levy_block(mech, spec.sim, rng, n, run.z0, checkpoints=cps)
        elif sim == "gou":
            o = gou_block(mech, spec.sim, rng, n, run.z0, checkpoints=cps)
        elif sim == "dual-u":
            o = dual_u_block(mech, spec.sim, rng, n, run.z0, checkpoints=cps)
        elif sim == "dual-v":
            o = dual_v_block(mech, spec.sim, rng, n, run.z0, checkpoints=cps)
        elif sim == "v-down":
            o = v_down_block(ht.scale, spec.sim, rng, n, run.z0, checkpoints=cps)
        else:  # pragma: no cover - rejected by config validation
            raise ValueError(f"unknown simulator {sim!r}")
        return {"cp": o["checkpoints"].T, "status": o["status"]}

    return fn


def _dump_paths(spec: CampaignSpec, ht, n_dump: int):
    run = spec.run
    paths = []
    for i in range(n_dump):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence([spec.sim.seed, 99_999, i])))
        if run.simulator == "lcb":
            p = simulate_lcb_euler(spec.mechanism, spec.sim, rng, run.z0)
        elif run.simulator == "conditioned":
            p = simulate_conditioned(ht, spec.sim, rng, run.z0)
        elif run.simulator == "cb-conditioned":
            p = simulate_cb_conditioned(spec.mechanism, spec.sim, rng, run.z0)
        elif run.simulator == "levy":
            p = simulate_levy(spec.mechanism, spec.sim, rng, run.z0)
        elif run.simulator == "gou":
            p = simulate_gou_and_timechange(spec.mechanism, spec.sim, rng, run.z0)
        elif run.simulator == "dual-u":
            p = simulate_U(spec.mechanism, spec.sim, rng, run.z0)
        elif run.simulator == "dual-v":
            p = simulate_V(spec.mechanism, spec.sim, rng, run.z0)
        else:
            p = simulate_V_down(ht, spec.sim, rng, run.z0)
        paths.append(p)
    return paths


def cmd_simulate(spec: CampaignSpec, workers: int = 1, out=None) -> int:
    outdir = FilePath(spec.run.out)
    outdir.mkdir(parents=True, exist_ok=True)
    needs_ht = spec.run.simulator in ("conditioned", "v-down")
    ht = _build_ht(spec) if needs_ht else None
    cps = _checkpoint_times(spec.sim)
    collected = collect_campaign(
        _block_runner(spec, ht, cps), spec.sim.n_paths, spec.sim.seed, 1, workers)
    cp_matrix = collected["cp"].T
    rows = report.marginal_stat_rows(cps, cp_matrix, collected["status"])
    report.stats_long_csv(rows, outdir / "stats.csv", spec.config_hash)
    report.render_stats_png(rows, outdir / "stats.png",
                            title=f"{spec.run.simulator} marginals ({spec.config_hash})")
    if spec.run.dump_paths > 0:
        paths = _dump_paths(spec, ht, spec.run.dump_paths)
        report.paths_to_csv(paths, outdir / "paths.csv", spec.config_hash)
        report.render_paths_png(paths, outdir / "paths.png",
                                title=f"{spec.run.simulator} sample paths")
    print(f"wrote {outdir / 'stats.csv'}", file=out)
    return 0


# ---------------------------------------------------------------------------
# verify


def _run_checks(spec: CampaignSpec, workers: int) -> list:
    mech, cfg, run = spec.mechanism, spec.sim, spec.run
    explicit = "checks" in spec.raw.get("run", {})
    needs_ht = {"supermartingale", "infimum", "dichotomy", "conditioning",
                "two-constructions", "entrance"}
    needs_scale = {"progeny"}
    ht = None
    if mech.c > 0 and (needs_ht | needs_scale) & set(run.checks):
        ht = _build_ht(spec)
    verdicts = []
    for name in run.checks:
        if name == "lifetime" and mech.c != 0.0:
            if explicit:
                raise ValueError("the lifetime check needs a competition-free mechanism (c = 0)")
            continue
        if name in needs_ht and mech.c == 0.0:
            if explicit:
                raise ValueError(f"check {name!r} needs competition (c > 0)")
            continue
        if name == "laplace":
            v = montecarlo.check_laplace_duality(mech, cfg, run.z0, run.x, run.t, workers)
        elif name == "siegmund":
            v = montecarlo.check_siegmund_duality(mech, cfg, run.x, run.y, run.t, workers)
        elif name == "biduality":
            v = montecarlo.check_biduality(mech, cfg, run.z0, run.x, run.t, workers)
        elif name == "supermartingale":
            v = montecarlo.check_h_supermartingale(ht, cfg, run.z0, run.t_list, workers)
        elif name == "infimum":
            v = montecarlo.check_infimum_law(ht, cfg, run.z0, run.a_list, workers)
        elif name == "progeny":
            scale = ht.scale if mech.c > 0 else None
            v = montecarlo.check_progeny_lt(mech, scale, cfg, run.z0, run.theta_list, workers)
        elif name == "lifetime":
            v = montecarlo.check_lifetime_exponential(mech, cfg, run.z0, workers)
        elif name == "dichotomy":
            v = montecarlo.check_killing_dichotomy(ht, cfg, run.z0, workers)
        elif name == "conditioning":
            v = montecarlo.check_conditioning_limit(ht, cfg, run.z0, run.t,
                                                    run.theta_list, workers)
        elif name == "two-constructions":
            v = montecarlo.check_two_constructions(ht, cfg, run.z0, run.t, workers=workers)
        elif name == "entrance":
            v = montecarlo.check_entrance_from_zero(ht, cfg, run.x, run.t,
                                                    run.z_list, workers=workers)
        else:  # pragma: no cover - rejected by config validation
            raise ValueError(f"unknown check {name!r}")
        verdicts.append(v)
    if not verdicts:
        raise ValueError("no applicable checks for this mechanism")
    return verdicts


def cmd_verify(spec: CampaignSpec, workers: int = 1, out=None) -> int:
    outdir = FilePath(spec.run.out)
    outdir.mkdir(parents=True, exist_ok=True)
    verdicts = _run_checks(spec, workers)
    report.verdicts_to_csv(verdicts, outdir / "verdicts.csv", spec.config_hash)
    text = report.text_report(verdicts, spec.config_hash)
    (outdir / "report.txt").write_text(text)
    report.render_margins_png(verdicts, outdir / "margins.png")
    print(text, file=out, end="")
    return min(sum(not v.passed for v in verdicts), 125)


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lcb",
        description="logistic continuous-state branching process toolkit",
    )
    parser.add_argument("command", choices=["inspect", "tables", "simulate", "verify"])
    parser.add_argument("config", help="TOML campaign file")
    parser.add_argument("--seed", type=int, default=None, help="override [sim] seed")
    parser.add_argument("--out", default=None, help="override [run] out directory")
    parser.add_argument("--dump-paths", type=int, default=None,
                        help="override the number of dumped sample paths")
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        spec = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if spec.run.command != args.command:
        print(f"error: config requests command {spec.run.command!r}, "
              f"invoked as {args.command!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        spec = CampaignSpec(
            mechanism=spec.mechanism,
            sim=SimConfig(**{**spec.sim.__dict__, "seed": args.seed}),
            run=spec.run, config_hash=spec.config_hash, raw=spec.raw)
    if args.out is not None or args.dump_paths is not None:
        updates = {}
        if args.out is not None:
            updates["out"] = args.out
        if args.dump_paths is not None:
            updates["dump_paths"] = args.dump_paths
        from .config import RunSpec
        spec = CampaignSpec(
            mechanism=spec.mechanism, sim=spec.sim,
            run=RunSpec(**{**spec.run.__dict__, **updates}),
            config_hash=spec.config_hash, raw=spec.raw)
    workers = _resolve_workers(spec, args.workers)

    try:
        if args.command == "inspect":
            return cmd_inspect(spec)
        if args.command == "tables":
            return cmd_tables(spec)
        if args.command == "simulate":
            return cmd_simulate(spec, workers)
        return cmd_verify(spec, workers)
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line surface: config management, runs, single-layout inspection
and the parasitic-insertion studies.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import circuit, engine, field
from .config import RunConfig, load_config, preset, save_config

ESL_STEPS_H = [k * 1e-9 for k in range(1, 11)]     # 1..10 nH
ESR_STEPS_OHM = [k * 1e-3 for k in range(1, 11)]   # 1..10 mOhm


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddtd-emi",
        description="Multi-objective conductor layout design for a pi-type "
                    "EMI filter on a grid surrogate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a default config file")
    p.add_argument("--out", default="config.json")
    p.add_argument("--preset", default="example1",
                   choices=["example1", "example2", "smoke"])
    p.add_argument("--force", action="store_true",
                   help="overwrite an existing file")

    p = sub.add_parser("seed", help="write random seed layouts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=0,
                   help="number of seeds (default: config n_initial)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config rng seed")
    p.add_argument("--reference", action="store_true",
                   help="also write the hand-routed reference layout")

    p = sub.add_parser("run", help="execute the full design loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config rng seed")
    p.add_argument("--no-svg", action="store_true",
                   help="skip per-iteration layout rendering")

    p = sub.add_parser("evaluate", help="print J1/J2/G for one layout")
    p.add_argument("--config", required=True)
    p.add_argument("layout")

    p = sub.add_parser("sweep", help="frequency sweep of one layout")
    p.add_argument("--config", required=True)
    p.add_argument("layout")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.add_argument("--f-lo", type=float, default=1e3)
    p.add_argument("--f-hi", type=float, default=100e6)
    p.add_argument("--points-per-decade", type=int, default=10)

    p = sub.add_parser("pareto", help="export the final archive of a run")
    p.add_argument("run_dir")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")

    p = sub.add_parser("render", help="render a layout to SVG")
    p.add_argument("--config", required=True)
    p.add_argument("layout")
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="parasitic insertion studies")
    p.add_argument("--config", required=True)
    p.add_argument("layout")
    p.add_argument("--study", required=True, choices=["esl", "esr", "l1x2"])
    p.add_argument("--freq", type=float, default=None,
                   help="evaluation frequency (default: study-specific)")

    return parser


def _load_config(path) -> RunConfig:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _load_layout(path, grid):
    if not Path(path).is_file():
        raise UsageError(f"layout file not found: {path}")
    return field.load_layout(path, grid)


def cmd_init(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        print(f"error: {out} exists (use --force to overwrite)",
              file=sys.stderr)
        return 1
    save_config(preset(args.preset), out)
    print(f"wrote {args.preset} config to {out}")
    return 0


def cmd_seed(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.rng_seed = args.seed
    grid = cfg.build_grid()
    bounds = cfg.build_seed_bounds(grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    count = args.count if args.count > 0 else cfg.n_initial
    rng = np.random.default_rng(cfg.rng_seed)
    for k in range(count):
        rho = field.rasterize_seed(field.random_seed(rng, grid, bounds), grid)
        field.save_layout(out / f"seed_{k:03d}.json", grid, rho)
    if args.reference:
        rho = field.rasterize_seed(field.reference_seed(grid), grid)
        field.save_layout(out / "reference.json", grid, rho)
    print(f"wrote {count} seed layout(s) to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.rng_seed = args.seed
    final, state = engine.run(cfg, args.out, resume=args.resume,
                              render_layouts=not args.no_svg)
    last = state.metrics[-1]
    print(f"finished after {cfg.iterations} iteration(s): "
          f"{last.elite_count} elites, hypervolume {last.hypervolume:.6g}, "
          f"best J1 {last.best_j1:.2f} dB, best J2 {last.best_j2:.2f} dB")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    grid = cfg.build_grid()
    rho = _load_layout(args.layout, grid)
    layout = field.resolve(grid, rho)
    rec = circuit.evaluate(layout, cfg.physics, cfg.components,
                           cfg.f1, cfg.f2, cfg.f3, cfg.g_bar)
    print(f"J1 = {rec.j1_db:.2f} dB")
    print(f"J2 = {rec.j2_db:.2f} dB")
    print(f"G  = {rec.g_db:.2f} dB")
    print("FEASIBLE" if rec.feasible else "INFEASIBLE")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    grid = cfg.build_grid()
    rho = _load_layout(args.layout, grid)
    layout = field.resolve(grid, rho)
    result = circuit.sweep(layout, cfg.physics, cfg.components,
                           args.f_lo, args.f_hi, args.points_per_decade)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            circuit.write_sweep_csv(result, fh, cfg.physics.db_floor)
    else:
        circuit.write_sweep_csv(result, sys.stdout, cfg.physics.db_floor)
    return 0


def cmd_pareto(args) -> int:
    run_dir = Path(args.run_dir)
    candidates = sorted(run_dir.glob("pareto/iter_*.csv"),
                        key=lambda p: int(p.stem.split("_")[1]))
    if not candidates:
        raise UsageError(f"no pareto exports found under {run_dir}")
    text = candidates[-1].read_text(encoding="utf-8")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_render(args) -> int:
    cfg = _load_config(args.config)
    grid = cfg.build_grid()
    rho = _load_layout(args.layout, grid)
    field.render_svg(field.resolve(grid, rho), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _load_config(args.config)
    grid = cfg.build_grid()
    rho = _load_layout(args.layout, grid)
    layout = field.resolve(grid, rho)
    phys, comps = cfg.physics, cfg.components
    out = sys.stdout
    if args.study == "esl":
        freq = args.freq if args.freq else cfg.f2
        rows = circuit.esl_esr_study(layout, phys, comps,
                                     ESL_STEPS_H, [0.0], freq)
        out.write("esl_h,esr_ohm,s21_db\n")
        for esl, esr, db in rows:
            out.write(f"{esl:.6g},{esr:.6g},{db:.6f}\n")
    elif args.study == "esr":
        freq = args.freq if args.freq else \
            circuit.find_dip_frequency(layout, phys, comps)
        rows = circuit.esl_esr_study(layout, phys, comps,
                                     [0.0], ESR_STEPS_OHM, freq)
        out.write("esl_h,esr_ohm,s21_db\n")
        for esl, esr, db in rows:
            out.write(f"{esl:.6g},{esr:.6g},{db:.6f}\n")
    else:
        freq = args.freq if args.freq else cfg.f2
        base, doubled = circuit.l1_doubling_study(layout, phys, comps, freq)
        out.write("l1_h,s21_db\n")
        out.write(f"{comps.l1:.6g},{base:.6f}\n")
        out.write(f"{2 * comps.l1:.6g},{doubled:.6f}\n")
    return 0


COMMANDS = {
    "init": cmd_init,
    "seed": cmd_seed,
    "run": cmd_run,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "pareto": cmd_pareto,
    "render": cmd_render,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (engine.EngineError, engine.CheckpointError, circuit.CircuitError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    raise SystemExit(main())

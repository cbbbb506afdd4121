"""Command-line front end.

Exit codes: 0 ok, 2 parse error, 3 unstable/ill-posed input, 4 infeasible
hard constraints, 5 unstabilizable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import (
    IllPosed,
    InfeasibleHard,
    ParseError,
    ResolventSingular,
    StructuneError,
    Unstabilizable,
    Unstable,
)
from .ss_core import ss_from_json
from .synth_program import SynthOptions, program_from_json, solve
from .sysnorms import h2_norm, hinf_norm
from .wave_demo import DemoConfig, run_demo

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_UNSTABLE = 3
EXIT_INFEASIBLE = 4
EXIT_UNSTABILIZABLE = 5


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc


def cmd_norm(args) -> int:
    obj = _load_json(args.system)
    try:
        sys_ = ss_from_json(obj)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    if args.kind == "h2":
        value = h2_norm(sys_)
        print(f"{value:.10f}")
    else:
        res = hinf_norm(sys_, args.tol)
        print(f"{res.value:.10f}")
        peak = res.peak_frequencies[-1] if res.peak_frequencies else math.nan
        print(f"peak_frequency {peak:.10g}")
    return EXIT_OK


def cmd_synth(args) -> int:
    obj = _load_json(args.program)
    try:
        program = program_from_json(obj)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    opts = SynthOptions(seed=args.seed)
    result = solve(program, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "result.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "x": [float(v) for v in result.x_star.x],
                "f": result.f_star,
                "g": result.g_star,
                "certificate": result.certificate,
                "status": result.status,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
    with open(out / "iterations.csv", "w", encoding="utf-8") as fh:
        fh.write("serious_idx,f,g,tau,step_norm,certificate\n")
        for row in result.history:
            fh.write(
                f"{row['serious_idx']},{row['f']:.12g},{row['g']:.12g},"
                f"{row['tau']:.12g},{row['step_norm']:.12g},{row['certificate']:.12g}\n"
            )
    print(f"status {result.status} f {result.f_star:.6g} g {result.g_star:.6g}")
    if result.status == "infeasible_hard":
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_wave_demo(args) -> int:
    override = None
    if args.gains_override:
        data = _load_json(args.gains_override)
        try:
            override = {
                "k_nominal": [float(v) for v in data["k_nominal"]],
                "k1": [float(v) for v in data["k1"]],
                "k2": [float(v) for v in data["k2"]],
            }
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad gains override: {exc}") from exc
    qs = tuple(float(v) for v in args.qs.split(","))
    cfg = DemoConfig(
        q0=args.q0,
        qs=qs,
        out_dir=args.out,
        seed=args.seed,
        horizon=args.horizon,
        n_grid=args.grid,
        gains_override=override,
    )
    run_demo(cfg)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structune",
        description="Structured controller tuning and the wave benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_norm = sub.add_parser("norm", help="compute a system norm from a JSON file")
    p_norm.add_argument("system", help="state-space JSON file")
    p_norm.add_argument("--kind", choices=("h2", "hinf"), default="hinf")
    p_norm.add_argument("--tol", type=float, default=1e-8)
    p_norm.set_defaults(func=cmd_norm)

    p_synth = sub.add_parser("synth", help="solve a synthesis program")
    p_synth.add_argument("program", help="program JSON file")
    p_synth.add_argument("--out", default="out")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_demo = sub.add_parser("wave-demo", help="run the wave benchmark end to end")
    p_demo.add_argument("--q0", type=float, default=3.0)
    p_demo.add_argument("--qs", default="2,3,4")
    p_demo.add_argument("--out", default="out")
    p_demo.add_argument("--seed", type=int, default=0)
    p_demo.add_argument("--horizon", type=float, default=20.0)
    p_demo.add_argument("--grid", type=int, default=400)
    p_demo.add_argument("--gains-override", default=None,
                        help="JSON file with k_nominal, k1, k2")
    p_demo.set_defaults(func=cmd_wave_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (Unstable, IllPosed, ResolventSingular) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except InfeasibleHard as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Unstabilizable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNSTABILIZABLE
    except StructuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end wave benchmark: design, scheduling, simulation, reporting.

Pipeline stages:

1. verify the rational-plus-delay decomposition of the prestabilized plant,
2. tune a static design gain at the nominal boundary parameter under the
   nominal pole goal,
3. tune a degree-2 polynomial gain schedule over frozen parameter samples
   under the scheduled pole goal,
4. rebuild implementable controllers three ways (frozen nominal, remainder
   scheduled, fully scheduled) and simulate each against the plant at every
   requested parameter value with both simulators,
5. write trace CSVs, a gains JSON, and a feasibility report.

Published reference gains can be supplied via an override file so the
feasibility checks run independently of the local optimizer.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle_opt import BundleOptions
from .controller_structures import ParamVector, PolynomialScheduled, StaticGain
from .delay_sim import (
    PRESTAB_GAIN,
    WaveScenario,
    build_gtilde,
    recover_controller,
    simulate_network,
    simulate_wave_pde,
    verify_decomposition,
    wave_closed_loop_network,
    write_trace_csv,
)
from .errors import StructuneError
from .ss_core import PartitionedPlant, StateSpace, closed_pair
from .synth_program import Program, Requirement, SynthOptions, solve
from .sysnorms import PoleGoal, pole_region_violation

__all__ = [
    "DemoConfig",
    "design_plant",
    "nominal_program",
    "scheduled_program",
    "frozen_gain",
    "frozen_loop_check",
    "run_demo",
    "NOMINAL_GOAL",
    "SCHEDULED_GOAL",
    "SCHEDULE_SAMPLES",
]

NOMINAL_GOAL = PoleGoal(0.9, 0.9, 4.0)
SCHEDULED_GOAL = PoleGoal(0.7, 0.9, 2.0)
SCHEDULE_SAMPLES = (2.0, 2.5, 3.0, 3.5, 4.0)


@dataclass
class DemoConfig:
    q0: float = 3.0
    qs: tuple = (2.0, 3.0, 4.0)
    out_dir: str = "out"
    seed: int = 0
    horizon: float = 20.0
    n_grid: int = 400
    nominal_goal: PoleGoal = NOMINAL_GOAL
    scheduled_goal: PoleGoal = SCHEDULED_GOAL
    schedule_samples: tuple = SCHEDULE_SAMPLES
    gains_override: dict | None = None  # {"k_nominal": [...], "k1": [...], "k2": [...]}
    skip_simulations: bool = False
    log: object = field(default=print)


def design_plant(q: float) -> PartitionedPlant:
    """Loop-shaping cast of the rational plant part under negative feedback.

    The measurement rows carry the minus sign so that closing u = K y with
    the loop-closing operation realizes the negative-feedback pair used in
    the design; w enters as an input disturbance and z collects the outputs.
    """
    g = build_gtilde(q)
    return PartitionedPlant(
        a=g.a,
        b1=g.b,
        b2=g.b,
        c1=g.c,
        c2=-g.c,
        d11=g.d,
        d12=g.d,
        d21=-g.d,
        d22=-g.d,
    )


def nominal_program(q0: float, goal: PoleGoal = NOMINAL_GOAL,
                    eligibility: PoleGoal | None = None) -> Program:
    """Nominal design program: minimize the pole-goal violation.

    The schedule built later cannot move the loop at the nominal parameter,
    so when the gain is meant to seed a schedule an ``eligibility`` goal
    (the scheduled goal, slightly tightened) is enforced as a hard
    requirement; otherwise the unconstrained optimum may leave the
    scheduled region with no way back.
    """
    reqs = [Requirement(model_id=0, kind="poles", goal=goal)]
    if eligibility is not None:
        reqs.append(Requirement(model_id=0, kind="poles", goal=eligibility, hard=True))
    return Program((design_plant(q0),), StaticGain(1, 3), tuple(reqs))


def scheduled_program(base_gain, samples, goal: PoleGoal = SCHEDULED_GOAL,
                      q0: float = 3.0) -> Program:
    models = tuple(design_plant(q) for q in samples)
    structure = PolynomialScheduled(np.asarray(base_gain, float).reshape(1, 3), 2, q0)
    reqs = tuple(
        Requirement(model_id=i, kind="poles", goal=goal) for i in range(len(models))
    )
    return Program(models, structure, reqs, tuple(samples))


def frozen_gain(base, k1, k2, q: float, q0: float = 3.0) -> np.ndarray:
    base = np.asarray(base, float).ravel()
    k1 = np.asarray(k1, float).ravel()
    k2 = np.asarray(k2, float).ravel()
    return base + (q - q0) * k1 + (q - q0) ** 2 * k2


def frozen_loop_check(q: float, gain, goal: PoleGoal):
    """Close the rational plant part with a frozen static gain and report
    the loop poles plus the signed goal violation."""
    _, spec = closed_pair(build_gtilde(q), StateSpace.static(np.asarray(gain, float).reshape(1, 3)))
    violation, _ = pole_region_violation(spec, goal)
    return {
        "q": q,
        "gain": [float(v) for v in np.asarray(gain, float).ravel()],
        "poles": [[float(lam.real), float(lam.imag)] for lam in spec.eigenvalues],
        "abscissa": spec.abscissa,
        "violation": float(violation),
        "satisfied": bool(violation <= 0.0),
        "goal": {
            "min_decay": goal.min_decay,
            "min_damping": goal.min_damping,
            "max_frequency": goal.max_frequency,
        },
    }


def _synth_options(seed: int) -> SynthOptions:
    return SynthOptions(
        seed=seed,
        bundle=BundleOptions(max_serious=250),
    )


def run_demo(cfg: DemoConfig) -> dict:
    """Run the full pipeline; returns the report dict (also written to disk)."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = cfg.log
    t_start = time.perf_counter()
    report: dict = {"q0": cfg.q0, "qs": list(cfg.qs)}

    # stage 0: decomposition self-test
    log("[stage 0] decomposition self-test")
    worst = 0.0
    for q in sorted(set(list(cfg.qs) + [cfg.q0])):
        err = verify_decomposition(q, seed=cfg.seed)
        worst = max(worst, err)
        if err > 1e-9:
            raise StructuneError(
                f"stage 0: decomposition check failed at q={q} (rel err {err:.2e})"
            )
    report["decomposition_max_rel_err"] = worst

    # stage 1: nominal design
    log("[stage 1] nominal design")
    if cfg.gains_override is not None:
        k_nom = np.asarray(cfg.gains_override["k_nominal"], float).ravel()
        report["nominal_source"] = "override"
    else:
        g = cfg.scheduled_goal
        eligibility = PoleGoal(g.min_decay, g.min_damping, 0.95 * g.max_frequency)
        res = solve(
            nominal_program(cfg.q0, cfg.nominal_goal, eligibility),
            _synth_options(cfg.seed),
        )
        if res.status not in ("local_optimum", "feasible"):
            raise StructuneError(f"stage 1: nominal synthesis ended with {res.status}")
        k_nom = res.x_star.x
        report["nominal_source"] = res.status
    nominal_check = frozen_loop_check(cfg.q0, k_nom, cfg.nominal_goal)
    report["nominal"] = nominal_check
    log(
        f"    gains {np.array2string(k_nom, precision=5)}  "
        f"abscissa {nominal_check['abscissa']:.4f}  "
        f"violation {nominal_check['violation']:+.4f}"
    )
    if not nominal_check["satisfied"]:
        raise StructuneError("stage 1: nominal design misses its pole goal")

    # stage 2: scheduled design
    log("[stage 2] scheduled design")
    if cfg.gains_override is not None:
        k1 = np.asarray(cfg.gains_override["k1"], float).ravel()
        k2 = np.asarray(cfg.gains_override["k2"], float).ravel()
        report["scheduled_source"] = "override"
    else:
        res = solve(
            scheduled_program(k_nom, cfg.schedule_samples, cfg.scheduled_goal, cfg.q0),
            _synth_options(cfg.seed),
        )
        if res.status not in ("local_optimum", "feasible"):
            raise StructuneError(f"stage 2: scheduled synthesis ended with {res.status}")
        k1, k2 = res.x_star.x[:3], res.x_star.x[3:]
        report["scheduled_source"] = res.status
    sched_checks = [
        frozen_loop_check(q, frozen_gain(k_nom, k1, k2, q, cfg.q0), cfg.scheduled_goal)
        for q in cfg.qs
    ]
    report["scheduled"] = {
        "k1": [float(v) for v in k1],
        "k2": [float(v) for v in k2],
        "samples": list(cfg.schedule_samples),
        "frozen": sched_checks,
    }
    for chk in sched_checks:
        log(
            f"    q={chk['q']:.3g}  abscissa {chk['abscissa']:.4f}  "
            f"violation {chk['violation']:+.4f}"
        )
        if not chk["satisfied"]:
            raise StructuneError(
                f"stage 2: scheduled design misses its pole goal at q={chk['q']}"
            )

    gains = {
        "prestab_gain": list(PRESTAB_GAIN),
        "k_nominal": [float(v) for v in k_nom],
        "k1": [float(v) for v in k1],
        "k2": [float(v) for v in k2],
        "q0": cfg.q0,
    }
    with open(out / "gains.json", "w", encoding="utf-8") as fh:
        json.dump(gains, fh, indent=2, sort_keys=True)

    # stage 3: simulations
    simulations = []
    if not cfg.skip_simulations:
        log("[stage 3] simulations")
        for method in ("nominal", "method1", "method2"):
            for q in cfg.qs:
                if method == "nominal":
                    gain, q_ctrl = k_nom, cfg.q0
                elif method == "method1":
                    gain, q_ctrl = k_nom, q
                else:
                    gain, q_ctrl = frozen_gain(k_nom, k1, k2, q, cfg.q0), q
                entry = _simulate_pair(cfg, out, method, q, gain, q_ctrl)
                simulations.append(entry)
                log(
                    f"    {method} q={q:.3g}: max|y1|={entry['max_abs_y1']:.3f} "
                    f"tail|y3|={entry['tail_abs_y3']:.2e} "
                    f"cross-sim err={entry['cross_sim_max_err']:.2e}"
                )
    report["simulations"] = simulations
    report["elapsed_seconds"] = time.perf_counter() - t_start

    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    log(f"[done] artifacts in {out} ({report['elapsed_seconds']:.1f}s)")
    return report


def _simulate_pair(cfg: DemoConfig, out: Path, method: str, q: float,
                   gain, q_ctrl: float) -> dict:
    kt = StateSpace.static(np.asarray(gain, float).reshape(1, 3))
    controller = recover_controller(kt, q_ctrl)
    scenario = WaveScenario(q=q, n_grid=cfg.n_grid, horizon=cfg.horizon)

    pde = simulate_wave_pde(scenario, controller)
    pde_path = out / f"trace_{method}_q{q:g}_pde.csv"
    write_trace_csv(pde_path, pde["t"], pde["y1"], pde["y2"], pde["y3"],
                    pde["u"], pde["r"])

    net = wave_closed_loop_network(q, kt, q_ctrl, ref_select=scenario.ref_select)
    dt = 1.0 / cfg.n_grid
    nt = simulate_network(net, {"r": scenario.reference or (lambda t: 1.0)},
                          dt, cfg.horizon)
    net_path = out / f"trace_{method}_q{q:g}_network.csv"
    write_trace_csv(net_path, nt["t"], nt["y"][:, 0], nt["y"][:, 1],
                    nt["y"][:, 2], nt["u"], nt["r"])

    cross = max(
        float(np.max(np.abs(pde["y1"] - nt["y"][:, 0]))),
        float(np.max(np.abs(pde["y2"] - nt["y"][:, 1]))),
        float(np.max(np.abs(pde["y3"] - nt["y"][:, 2]))),
    )
    tail = slice(int(0.8 * len(pde["t"])), None)
    y3_tail = float(np.max(np.abs(pde["y3"][tail] - np.mean(pde["y3"][tail]))))
    return {
        "method": method,
        "q": q,
        "q_controller": q_ctrl,
        "gain": [float(v) for v in np.asarray(gain).ravel()],
        "pde_csv": str(pde_path),
        "network_csv": str(net_path),
        "max_abs_y1": float(np.max(np.abs(pde["y1"]))),
        "max_abs_y3": float(np.max(np.abs(pde["y3"]))),
        "tail_abs_y3": y3_tail,
        "cross_sim_max_err": cross,
        "bounded": bool(np.isfinite(pde["y1"]).all() and np.max(np.abs(pde["y1"])) < 1e3),
    }

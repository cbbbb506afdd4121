"""Multi-model, multi-requirement synthesis programs.

A Program bundles plant models, a controller structure and a list of soft
and hard requirements.  Requirement values are normalized so that
"satisfied" always means "<= 1": norm requirements are scaled by their
bound, pole-region goals are shifted by +1.  The solver minimizes the worst
soft value subject to the worst hard value via an exact penalty, with
closed-loop stability enforced as an infinite barrier inside the bundle
inner loop.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import bundle_opt
from .bundle_opt import BundleOptions, OracleSample
from .controller_structures import (
    ParamVector,
    StructureSpec,
    assemble,
    init_params,
    jacobian,
    structure_from_json,
    structure_to_json,
)
from .errors import InfeasibleHard, Unstable, Unstabilizable
from .sensitivity import (
    closed_loop_jacobian,
    h2_gradient,
    hinf_subgradients,
    pole_subgradients,
    slice_quads,
)
from .ss_core import (
    PartitionedPlant,
    Spectrum,
    StateSpace,
    lft_lower,
    plant_from_json,
    plant_to_json,
)
from .sysnorms import PoleGoal, h2_norm, hinf_norm

__all__ = [
    "Requirement",
    "Program",
    "SynthResult",
    "EvalResult",
    "SynthOptions",
    "evaluate",
    "phase0_stabilize",
    "solve",
    "program_to_json",
    "program_from_json",
    "two_dof_tracking_program",
]

# ties within this tolerance of the max are treated as active
_ACTIVE_TOL = 1e-8
# spectral-abscissa margin used by the stabilization surrogate
_STAB_MARGIN = 0.05


@dataclass(frozen=True)
class Requirement:
    """One normalized requirement on a closed-loop channel.

    kind is 'hinf', 'h2' (value = weight * norm / bound) or 'poles'
    (value = 1 + weight * violation).  Hard requirements are mandatory;
    soft ones form the objective.
    """

    model_id: int
    kind: str
    bound: float | None = None
    goal: PoleGoal | None = None
    hard: bool = False
    weight: float = 1.0
    w: tuple | None = None
    z: tuple | None = None

    def __post_init__(self):
        if self.kind in ("hinf", "h2"):
            if self.bound is None or not self.bound > 0:
                raise ValueError(f"{self.kind} requirement needs a positive bound")
        elif self.kind == "poles":
            if self.goal is None:
                raise ValueError("pole requirement needs a goal")
        else:
            raise ValueError(f"unknown requirement kind {self.kind!r}")
        if not self.weight > 0:
            raise ValueError("weight must be positive")
        for name in ("w", "z"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(int(i) for i in v))


@dataclass(frozen=True)
class Program:
    """Plant models, controller structure, requirements, schedule samples.

    When ``schedule_samples`` is given it either pairs with the models
    one-to-one (model i is evaluated with the controller frozen at q_i) or
    broadcasts a single model across all samples.
    """

    models: tuple
    structure: StructureSpec
    requirements: tuple
    schedule_samples: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "requirements", tuple(self.requirements))
        if self.schedule_samples is not None:
            object.__setattr__(
                self, "schedule_samples", tuple(float(q) for q in self.schedule_samples)
            )
        if not self.requirements:
            raise ValueError("a program needs at least one requirement")
        used = {r.model_id for r in self.requirements}
        if not used.issubset(range(len(self.models))):
            raise ValueError("requirement references an unknown model")
        if self.structure.needs_schedule and self.schedule_samples is None:
            raise ValueError("scheduled structure needs schedule samples")
        if self.schedule_samples is not None:
            if len(self.schedule_samples) not in (len(self.models),) and len(self.models) != 1:
                raise ValueError(
                    "schedule samples must pair with models or broadcast one model"
                )

    def pairings(self):
        """(model index, schedule value or None) pairs actually evaluated."""
        if self.schedule_samples is None:
            return [(i, None) for i in range(len(self.models))]
        if len(self.models) == 1 and len(self.schedule_samples) != 1:
            return [(0, q) for q in self.schedule_samples]
        return list(zip(range(len(self.models)), self.schedule_samples))


@dataclass
class EvalResult:
    f: float
    g: float
    stable: bool
    soft_planes: list      # (gradient, branch value, source) for active soft terms
    hard_planes: list      # same for active hard terms
    values: list           # per requirement: list of (pairing, value)
    surrogate_planes: list = field(default_factory=list)
    surrogate_value: float | None = None


@dataclass
class SynthResult:
    x_star: ParamVector
    f_star: float
    g_star: float
    certificate: float
    status: str            # local_optimum | feasible | infeasible_hard | unstabilizable
    history: list


@dataclass
class SynthOptions:
    x0: ParamVector | None = None
    init: str = "zeros"
    seed: int | None = 0
    mu0: float = 10.0
    mu_factor: float = 10.0
    mu_rounds: int = 8
    feas_tol: float = 1e-6
    cert_tol: float = 1e-5
    hinf_rel_tol: float = 1e-8
    stabilize_max_serious: int = 500
    bundle: BundleOptions | None = None


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("STRUCTUNE_THREADS", "1")))
    except ValueError:
        return 1


def _pairing_data(program: Program, x, model_idx: int, q, need_grads: bool):
    plant = program.models[model_idx]
    k = assemble(program.structure, x, q)
    clp = lft_lower(plant, k)
    quads = None
    if need_grads:
        jac = jacobian(program.structure, x, q)
        quads = closed_loop_jacobian(plant, k, jac)
    if clp.nx:
        spectrum = Spectrum.from_eigenvalues(np.linalg.eigvals(clp.a))
    else:
        spectrum = Spectrum.from_eigenvalues([])
    return clp, quads, spectrum


def _channel(clp: StateSpace, quads, req: Requirement):
    z_idx = list(req.z) if req.z is not None else None
    w_idx = list(req.w) if req.w is not None else None
    sub = clp
    if z_idx is not None or w_idx is not None:
        b = clp.b[:, w_idx] if w_idx is not None else clp.b
        c = clp.c[z_idx, :] if z_idx is not None else clp.c
        d = clp.d
        if z_idx is not None:
            d = d[z_idx, :]
        if w_idx is not None:
            d = d[:, w_idx]
        sub = StateSpace(clp.a, b, c, d)
    sub_quads = slice_quads(quads, z_idx, w_idx) if quads is not None else None
    return sub, sub_quads


def evaluate(program: Program, x, need_subgradients: bool = True,
             hinf_rel_tol: float = 1e-8) -> EvalResult:
    """Normalized worst soft value f, worst hard value g, and active planes.

    Satisfaction convention: a requirement holds iff its value is <= 1.
    If a norm requirement meets an unstable closed loop, the result switches
    to the stabilization surrogate (max spectral abscissa plus margin) and
    ``stable`` is False; pole-region requirements do not need stability and
    are evaluated as-is.
    """
    xv = x.x if isinstance(x, ParamVector) else np.asarray(x, float).ravel()
    if isinstance(x, ParamVector):
        x.check_bounds()
    pairings = program.pairings()

    cap = _thread_cap()
    if cap > 1 and len(pairings) > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            data = list(
                pool.map(
                    lambda mq: _pairing_data(program, xv, mq[0], mq[1], need_subgradients),
                    pairings,
                )
            )
    else:
        data = [
            _pairing_data(program, xv, mi, q, need_subgradients) for mi, q in pairings
        ]

    # stabilization surrogate when a norm requirement faces an unstable loop
    norm_models = {r.model_id for r in program.requirements if r.kind in ("hinf", "h2")}
    needs_surrogate = any(
        pairings[i][0] in norm_models and data[i][2].abscissa >= 0.0
        for i in range(len(pairings))
    )
    if needs_surrogate:
        goal = PoleGoal(_STAB_MARGIN, 0.0, math.inf)
        s_vals = [spec.abscissa + _STAB_MARGIN for (_, _, spec) in data]
        s = max(s_vals)
        planes = []
        if need_subgradients:
            for i, (clp, quads, spec) in enumerate(data):
                if s_vals[i] < s - _ACTIVE_TOL or clp.nx == 0:
                    continue
                _, active = _stab_violation(spec, goal)
                for sub in pole_subgradients(clp, quads, goal, active):
                    planes.append((sub.vector, s_vals[i], f"pairing{i}:{sub.source}"))
        return EvalResult(
            f=s, g=s, stable=False, soft_planes=[], hard_planes=[], values=[],
            surrogate_planes=planes, surrogate_value=s,
        )

    entries = []  # (hard flag, value, planes)
    values = []
    for r_idx, req in enumerate(program.requirements):
        for p_idx, (mi, q) in enumerate(pairings):
            if mi != req.model_id:
                continue
            clp, quads, spectrum = data[p_idx]
            if req.kind == "poles":
                if clp.nx == 0:
                    raise ValueError("pole requirement on a static closed loop")
                viol, active = _pole_violation(spectrum, req.goal)
                value = 1.0 + req.weight * viol
                planes = []
                if need_subgradients:
                    for sub in pole_subgradients(clp, quads, req.goal, active):
                        planes.append(
                            (req.weight * sub.vector, value,
                             f"req{r_idx}:pairing{p_idx}:{sub.source}")
                        )
            else:
                sub_sys, sub_quads = _channel(clp, quads, req)
                scale = req.weight / req.bound
                if req.kind == "hinf":
                    res = hinf_norm(sub_sys, hinf_rel_tol)
                    value = scale * res.value
                    planes = []
                    if need_subgradients:
                        for sub in hinf_subgradients(sub_sys, sub_quads,
                                                     res.peak_frequencies):
                            planes.append(
                                (scale * sub.vector, value,
                                 f"req{r_idx}:pairing{p_idx}:{sub.source}")
                            )
                else:
                    value = scale * h2_norm(sub_sys)
                    planes = []
                    if need_subgradients:
                        sub = h2_gradient(sub_sys, sub_quads)
                        planes.append(
                            (scale * sub.vector, value,
                             f"req{r_idx}:pairing{p_idx}:h2")
                        )
            entries.append((req.hard, value, planes))
            values.append(((r_idx, p_idx), value))

    soft_vals = [v for hard, v, _ in entries if not hard]
    hard_vals = [v for hard, v, _ in entries if hard]
    f = max(soft_vals) if soft_vals else 0.0
    g = max(hard_vals) if hard_vals else 0.0

    soft_planes = []
    hard_planes = []
    for hard, value, planes in entries:
        ref = g if hard else f
        if value >= ref - _ACTIVE_TOL:
            (hard_planes if hard else soft_planes).extend(planes)
    soft_planes = _dedupe(soft_planes)
    hard_planes = _dedupe(hard_planes)
    return EvalResult(
        f=f, g=g, stable=True,
        soft_planes=soft_planes, hard_planes=hard_planes, values=values,
    )


def _dedupe(planes):
    out = []
    for vec, val, src in planes:
        if any(
            np.array_equal(vec, v2) and abs(val - val2) <= 1e-14
            for v2, val2, _ in out
        ):
            continue
        out.append((vec, val, src))
    return out


def _pole_violation(spectrum: Spectrum, goal: PoleGoal):
    from .sysnorms import pole_region_violation

    return pole_region_violation(spectrum, goal)


def _stab_violation(spectrum: Spectrum, goal: PoleGoal):
    from .sysnorms import pole_region_violation

    return pole_region_violation(spectrum, goal)


def _merged_bounds(program: Program, x0: ParamVector | None):
    if x0 is not None and (x0.lo is not None or x0.hi is not None):
        return x0.lo, x0.hi
    lo, hi = program.structure.default_bounds()
    lo = None if np.all(np.isneginf(lo)) else lo
    hi = None if np.all(np.isposinf(hi)) else hi
    return lo, hi


def phase0_stabilize(program: Program, x0, margin: float = _STAB_MARGIN,
                     max_serious: int = 500,
                     bundle_options: BundleOptions | None = None) -> ParamVector:
    """Drive the worst spectral abscissa below ``-margin``.

    Already-stabilizing starts are returned unchanged.  Raises
    Unstabilizable when the bundle budget is exhausted while the surrogate
    is still nonnegative.
    """
    xv = x0.x if isinstance(x0, ParamVector) else np.asarray(x0, float).ravel()
    lo, hi = _merged_bounds(program, x0 if isinstance(x0, ParamVector) else None)
    goal = PoleGoal(margin, 0.0, math.inf)

    def oracle(y):
        planes = []
        vals = []
        for p_idx, (mi, q) in enumerate(program.pairings()):
            clp, quads, spectrum = _pairing_data(program, y, mi, q, True)
            if clp.nx == 0:
                raise ValueError("stabilization needs a dynamic closed loop")
            v, active = _stab_violation(spectrum, goal)
            vals.append((v, clp, quads, active, p_idx))
        s = max(v for v, *_ in vals)
        for v, clp, quads, active, p_idx in vals:
            if v < s - _ACTIVE_TOL:
                continue
            for sub in pole_subgradients(clp, quads, goal, active):
                planes.append((sub.vector, v))
        return OracleSample(np.asarray(y, float), s, planes)

    first = oracle(xv)
    if first.value < 0.0:
        return ParamVector(xv, lo, hi)

    opts = bundle_options or BundleOptions()
    opts = replace(opts, max_serious=max_serious, target_value=0.0, lo=lo, hi=hi)
    res = bundle_opt.run(oracle, xv, opts)
    if res.f >= 0.0:
        raise Unstabilizable(
            f"stabilization stalled at surrogate value {res.f:.3e} ({res.status})"
        )
    return ParamVector(res.x, lo, hi)


def _phi_oracle(program: Program, mu: float, hinf_rel_tol: float):
    """Exact-penalty oracle: f + mu * max(0, g - 1), infinite barrier on
    destabilized norm channels."""

    def oracle(y):
        ev = evaluate(program, y, need_subgradients=True, hinf_rel_tol=hinf_rel_tol)
        if not ev.stable:
            planes = [(vec, val) for vec, val, _ in ev.surrogate_planes]
            return OracleSample(
                np.asarray(y, float), math.inf, planes, feasible_eval=False,
                meta={"f": math.inf, "g": math.inf, "surrogate": ev.surrogate_value},
            )
        h = max(0.0, ev.g - 1.0)
        phi = ev.f + mu * h
        soft = ev.soft_planes or [(np.zeros(len(np.asarray(y).ravel())), 0.0, "const")]
        if ev.g > 1.0 + _ACTIVE_TOL:
            hard = [(vec, val - 1.0) for vec, val, _ in ev.hard_planes]
        elif ev.g < 1.0 - _ACTIVE_TOL:
            hard = [(None, 0.0)]
        else:
            hard = [(None, 0.0)] + [(vec, val - 1.0) for vec, val, _ in ev.hard_planes]
        planes = []
        for gs, vs, _ in soft:
            for gh, vh in hard:
                grad = gs if gh is None else gs + mu * gh
                planes.append((grad, vs + mu * vh))
                if len(planes) >= 16:
                    break
            if len(planes) >= 16:
                break
        return OracleSample(
            np.asarray(y, float), phi, planes, meta={"f": ev.f, "g": ev.g}
        )

    return oracle


def solve(program: Program, options: SynthOptions | None = None) -> SynthResult:
    """Stabilize, then minimize the exact penalty with escalating mu.

    The returned status is ``local_optimum`` when the bundle certificate
    meets tolerance and the hard constraints hold, ``feasible`` when only
    the constraints hold, ``infeasible_hard`` when mu escalation runs out,
    and an Unstabilizable error propagates from the stabilization phase.
    """
    opts = options or SynthOptions()
    if opts.x0 is not None:
        x0 = opts.x0
    else:
        x0 = init_params(program.structure, opts.init, seed=opts.seed)
    x = phase0_stabilize(
        program, x0, max_serious=opts.stabilize_max_serious,
        bundle_options=opts.bundle,
    )
    lo, hi = x.lo, x.hi

    history = []
    mu = opts.mu0
    status = "infeasible_hard"
    certificate = math.inf
    xv = x.x
    f_star = g_star = math.nan
    for round_idx in range(opts.mu_rounds):
        oracle = _phi_oracle(program, mu, opts.hinf_rel_tol)
        bopts = opts.bundle or BundleOptions()
        bopts = replace(bopts, lo=lo, hi=hi, target_value=None)
        res = bundle_opt.run(oracle, xv, bopts)
        xv = res.x
        certificate = res.certificate
        for row in res.history:
            meta = row.get("meta") or {}
            history.append(
                {
                    "serious_idx": len(history) + 1,
                    "f": meta.get("f", row["f"]),
                    "g": meta.get("g", 0.0),
                    "tau": row["tau"],
                    "step_norm": row["step_norm"],
                    "certificate": row["certificate"],
                    "mu": mu,
                    "phi": row["f"],
                    "round": round_idx,
                }
            )
        ev = evaluate(program, xv, need_subgradients=False,
                      hinf_rel_tol=opts.hinf_rel_tol)
        f_star, g_star = ev.f, ev.g
        if ev.g <= 1.0 + opts.feas_tol:
            if res.status == "converged" and certificate <= opts.cert_tol:
                status = "local_optimum"
            else:
                status = "feasible"
            break
        mu *= opts.mu_factor
    return SynthResult(
        x_star=ParamVector(xv, lo, hi),
        f_star=float(f_star),
        g_star=float(g_star),
        certificate=float(certificate),
        status=status,
        history=history,
    )


# ---------------------------------------------------------------------------
# JSON program format

def _goal_to_json(goal: PoleGoal):
    return {
        "min_decay": goal.min_decay,
        "min_damping": goal.min_damping,
        "max_frequency": goal.max_frequency,
    }


def _goal_from_json(obj) -> PoleGoal:
    if isinstance(obj, (list, tuple)):
        return PoleGoal(float(obj[0]), float(obj[1]), float(obj[2]))
    return PoleGoal(
        float(obj["min_decay"]),
        float(obj["min_damping"]),
        float(obj["max_frequency"]),
    )


def program_to_json(program: Program) -> dict:
    reqs = []
    for r in program.requirements:
        obj = {
            "model": r.model_id,
            "kind": r.kind,
            "class": "hard" if r.hard else "soft",
            "weight": r.weight,
        }
        if r.bound is not None:
            obj["bound"] = r.bound
        if r.goal is not None:
            obj["goal"] = _goal_to_json(r.goal)
        if r.w is not None:
            obj["w"] = list(r.w)
        if r.z is not None:
            obj["z"] = list(r.z)
        reqs.append(obj)
    return {
        "models": [plant_to_json(m) for m in program.models],
        "structure": structure_to_json(program.structure),
        "requirements": reqs,
        "schedule_samples": (
            list(program.schedule_samples) if program.schedule_samples else None
        ),
    }


def program_from_json(obj: dict) -> Program:
    try:
        models = [plant_from_json(m) for m in obj["models"]]
        structure = structure_from_json(obj["structure"])
        reqs = []
        for r in obj["requirements"]:
            reqs.append(
                Requirement(
                    model_id=int(r["model"]),
                    kind=str(r["kind"]),
                    bound=float(r["bound"]) if "bound" in r else None,
                    goal=_goal_from_json(r["goal"]) if "goal" in r else None,
                    hard=str(r.get("class", "soft")) == "hard",
                    weight=float(r.get("weight", 1.0)),
                    w=r.get("w"),
                    z=r.get("z"),
                )
            )
        samples = obj.get("schedule_samples")
        return Program(models, structure, reqs,
                       tuple(samples) if samples else None)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad program object: {exc}") from exc


def two_dof_tracking_program(plant: StateSpace, bound: float,
                             tau: float = 1e-2) -> Program:
    """Premade two-degree-of-freedom tracking arrangement.

    A unity-DC set-point filter feeds a PI loop around a SISO plant; the
    soft requirement bounds the reference-to-output peak gain.  Tunables
    are (filter pole, kp, ki).
    """
    if plant.nu != 1 or plant.ny != 1:
        raise ValueError("the premade 2-DOF arrangement expects a SISO plant")
    from .controller_structures import Decentralized, FirstOrderFilter, RealizablePid

    n = plant.nx
    a, b, c, d = plant.a, plant.b, plant.c, plant.d
    aug = PartitionedPlant(
        a=a,
        b1=np.zeros((n, 1)),
        b2=np.hstack([np.zeros((n, 1)), b]),
        c1=c,
        c2=np.vstack([np.zeros((1, n)), -c]),
        d11=np.zeros((1, 1)),
        d12=np.hstack([np.zeros((1, 1)), d]),
        d21=np.array([[1.0], [0.0]]),
        d22=np.array([[0.0, 0.0], [1.0, -float(d[0, 0])]]),
    )
    structure = Decentralized(
        (
            FirstOrderFilter(),
            RealizablePid(tau_tunable=False, tau=tau, kd_fixed=0.0),
        )
    )
    req = Requirement(model_id=0, kind="hinf", bound=bound)
    return Program((aug,), structure, (req,))

"""Proximity-control bundle method for non-smooth minimization.

The optimizer keeps a serious iterate x and a bundle of downshifted cutting
planes.  An inner loop generates trial points from the piecewise-linear
working model under a quadratic proximity penalty (weight tau); the outer
loop accepts serious steps and applies the stopping test.  tau is managed
like a trust-region radius: poor agreement between model and oracle forces
shorter trial steps, good agreement allows longer ones.

The oracle is any callable ``x -> OracleSample``.  Samples may report
``feasible_eval=False`` (barrier points, e.g. a destabilizing controller);
such samples are treated as null steps that tighten the proximity weight,
and any planes they carry are anchored at ``f(x) + violation`` so they cut
off the offending direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QPFailure

__all__ = [
    "OracleSample",
    "BundleOptions",
    "BundleResult",
    "BundleState",
    "tangent_step",
    "inner_loop",
    "run",
    "simplex_qp",
]


@dataclass
class OracleSample:
    """Value and cutting planes returned by one oracle call.

    planes -- list of (gradient, branch value) pairs.  For feasible samples
    the branch values are function values of the active branches at
    ``point`` (max of them equals ``value``).  For infeasible samples the
    planes describe a surrogate violation (positive scalars) instead.
    """

    point: np.ndarray
    value: float
    planes: list
    feasible_eval: bool = True
    meta: dict | None = None


@dataclass
class BundleOptions:
    descent_ratio: float = 0.1        # serious-step acceptance threshold
    good_ratio: float = 0.6           # very-good agreement threshold
    downshift_curvature: float = 1e-4
    tau_min: float = 1e-6
    tau_max: float = 1e12
    max_bundle: int = 50
    inner_budget: int = 50
    max_serious: int = 300
    tol_gap: float = 1e-6
    tol_step: float = 1e-6
    serious_keep: int = 6     # cuts retained across a serious step (plus aggregate)
    tau0: float | None = None
    target_value: float | None = None  # stop once a serious value drops below
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None


@dataclass
class BundleResult:
    x: np.ndarray
    f: float
    certificate: float
    history: list
    status: str
    n_serious: int
    n_oracle: int
    meta: dict | None = None


@dataclass
class _Cut:
    z: np.ndarray
    value: float
    g: np.ndarray
    shift: float = 0.0
    aggregate: bool = False


def simplex_qp(G: np.ndarray, p: np.ndarray, tau: float, tol: float = 1e-12):
    """Minimize (1/(2 tau)) ||G' lam||^2 - p' lam over the unit simplex.

    Primal active-set solve: from a feasible vertex, alternate equality-
    constrained solves on the unclamped weights with line searches toward
    the candidate, clamping the blocking weight; at stationary points the
    most negative bound multiplier is released.  A tiny ridge keeps the
    reduced systems solvable when planes repeat.  Returns (lam, mu) with mu
    the multiplier of the sum constraint; raises QPFailure on stall (never
    fails silently).
    """
    m = p.size
    if m == 1:
        return np.array([1.0]), float(G[0] @ G[0] / tau - p[0])
    q = (G @ G.T) / tau
    ridge = 1e-13 * (1.0 + np.trace(q) / m)
    scale = 1.0 + np.abs(p).max() + np.abs(q).max()

    lam = np.zeros(m)
    lam[int(np.argmax(p))] = 1.0
    clamped = lam == 0.0

    def eqp(idx):
        k = idx.size
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = q[np.ix_(idx, idx)] + ridge * np.eye(k)
        kkt[:k, k] = -1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([p[idx], [1.0]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
        cand = np.zeros(m)
        cand[idx] = sol[:k]
        return cand, float(sol[k])

    for _ in range(6 * m + 60):
        idx = np.flatnonzero(~clamped)
        cand, mu = eqp(idx)
        d = cand - lam
        if np.max(np.abs(d)) <= tol * (1.0 + np.max(np.abs(lam))):
            grad = q @ lam - p
            nu = grad[clamped] - mu if clamped.any() else np.array([])
            if nu.size == 0 or nu.min() >= -1e-11 * scale:
                return np.clip(lam, 0.0, None), mu
            release = np.flatnonzero(clamped)[int(np.argmin(nu))]
            clamped[release] = False
            continue
        alpha = 1.0
        blocking = -1
        for j in idx:
            if d[j] < -1e-16:
                a = lam[j] / -d[j]
                if a < alpha:
                    alpha, blocking = a, j
        lam = np.clip(lam + alpha * d, 0.0, None)
        if blocking >= 0:
            clamped[blocking] = True
            lam[blocking] = 0.0
        total = lam.sum()
        if not 0.5 <= total <= 1.5:
            raise QPFailure("simplex QP lost the sum constraint")
        lam /= total
    raise QPFailure("active-set loop did not settle")


class BundleState:
    """Serious iterate plus the downshifted cutting-plane bundle."""

    def __init__(self, x, fx, tau, opts: BundleOptions):
        self.x = np.asarray(x, dtype=float).ravel()
        self.fx = float(fx)
        self.tau = float(tau)
        self.opts = opts
        self.cuts: list[_Cut] = []
        self.aggregate: _Cut | None = None

    # -- downshift bookkeeping -------------------------------------------
    def _shift_for(self, z, value, g):
        dz = self.x - z
        raw = value + float(g @ dz) - self.fx
        return max(0.0, raw) + self.opts.downshift_curvature * float(dz @ dz)

    def add_plane(self, z, value, g):
        z = np.asarray(z, dtype=float).ravel()
        g = np.asarray(g, dtype=float).ravel()
        cut = _Cut(z, float(value), g)
        cut.shift = self._shift_for(cut.z, cut.value, cut.g)
        self.cuts.append(cut)
        self._trim()

    def set_aggregate(self, z, value, g):
        cut = _Cut(np.asarray(z, float).ravel(), float(value),
                   np.asarray(g, float).ravel(), aggregate=True)
        cut.shift = self._shift_for(cut.z, cut.value, cut.g)
        self.aggregate = cut

    def move_serious(self, x_new, f_new):
        self.x = np.asarray(x_new, dtype=float).ravel()
        self.fx = float(f_new)
        # prune to a local working set: stale far-away cuts otherwise pin the
        # model to the old neighborhood; the aggregate carries their summary
        keep = max(0, self.opts.serious_keep)
        if len(self.cuts) > keep:
            self.cuts = self.cuts[len(self.cuts) - keep :]
        for cut in self.cuts:
            cut.shift = self._shift_for(cut.z, cut.value, cut.g)
        if self.aggregate is not None:
            self.aggregate.shift = self._shift_for(
                self.aggregate.z, self.aggregate.value, self.aggregate.g
            )

    def _trim(self):
        excess = len(self.cuts) - self.opts.max_bundle
        if excess > 0:
            del self.cuts[:excess]

    def all_cuts(self):
        if self.aggregate is not None:
            return self.cuts + [self.aggregate]
        return list(self.cuts)

    def model_value_at(self, y):
        vals = [
            c.value + float(c.g @ (y - c.z)) - c.shift for c in self.all_cuts()
        ]
        return max(vals) if vals else -math.inf


def tangent_step(state: BundleState):
    """Trial point from the working model under the proximity penalty.

    Returns ``(y, model_value, info)`` where info carries the simplex
    multipliers, the aggregate subgradient and the QP gap diagnostics.
    Bounds are enforced by projecting the trial point.
    """
    cuts = state.all_cuts()
    if not cuts:
        raise QPFailure("tangent step requested with an empty bundle")
    G = np.stack([c.g for c in cuts])
    p = np.array(
        [c.value + float(c.g @ (state.x - c.z)) - c.shift for c in cuts]
    )
    lam, _mu = simplex_qp(G, p, state.tau)
    g_agg = G.T @ lam
    y = state.x - g_agg / state.tau
    opts = state.opts
    if opts.lo is not None:
        y = np.maximum(y, opts.lo)
    if opts.hi is not None:
        y = np.minimum(y, opts.hi)
    model_value = float(np.max(p + G @ (y - state.x)))
    dual_value = float(p @ lam - (g_agg @ g_agg) / (2.0 * state.tau))
    primal_value = model_value + 0.5 * state.tau * float((y - state.x) @ (y - state.x))
    info = {
        "lam": lam,
        "g_agg": g_agg,
        "p_agg": float(p @ lam),
        "qp_gap": abs(primal_value - dual_value),
        "certificate": float(np.linalg.norm(g_agg)),
    }
    return y, model_value, info


def inner_loop(state: BundleState, oracle):
    """Descent-step generating loop at the current serious iterate.

    Produces a serious step, declares optimality (model gap and step both
    below tolerance), or exhausts its budget after repeated null steps.
    """
    opts = state.opts
    n_oracle = 0
    last_info = None
    trust_model = True  # a barrier rejection invalidates the optimality test
    for _ in range(opts.inner_budget):
        y, model_value, info = tangent_step(state)
        last_info = info
        gap = state.fx - model_value
        step = float(np.linalg.norm(y - state.x))
        if trust_model and gap <= opts.tol_gap * (1.0 + abs(state.fx)) and step <= opts.tol_step:
            return {"kind": "optimal", "info": info, "n_oracle": n_oracle,
                    "model_value": model_value, "step": step}
        if trust_model and gap <= 0.0:
            # projection onto the box removed all predicted descent
            return {"kind": "optimal", "info": info, "n_oracle": n_oracle,
                    "model_value": model_value, "step": step}

        sample = oracle(y)
        n_oracle += 1

        if not sample.feasible_eval:
            # barrier point: keep the iterate, shorten trial steps, and let
            # any surrogate planes push the model up in that direction
            state.set_aggregate(state.x, info["p_agg"], info["g_agg"])
            for g, violation in sample.planes:
                state.add_plane(y, state.fx + float(violation), g)
            state.tau = min(2.0 * state.tau, opts.tau_max)
            trust_model = False
            continue

        trust_model = True
        rho = (state.fx - sample.value) / gap
        if rho >= opts.descent_ratio:
            if rho >= opts.good_ratio:
                state.tau = max(0.5 * state.tau, opts.tau_min)
            return {"kind": "serious", "sample": sample, "y": y, "info": info,
                    "n_oracle": n_oracle, "model_value": model_value,
                    "step": step}

        # null step: enrich the model with the aggregate and the new planes
        state.set_aggregate(state.x, info["p_agg"], info["g_agg"])
        for g, branch_value in sample.planes:
            state.add_plane(y, float(branch_value), g)
        model_plus = state.model_value_at(y)
        rho_tilde = (state.fx - model_plus) / gap
        if rho_tilde >= opts.good_ratio:
            # updated model already explains the failure: proximity too loose
            state.tau = min(2.0 * state.tau, opts.tau_max)
    return {"kind": "exhausted", "info": last_info, "n_oracle": n_oracle}


def run(oracle, x0, options: BundleOptions | None = None) -> BundleResult:
    """Minimize the oracle's function starting from a feasible x0.

    Stops when the model gap and the trial-step length both fall below
    tolerance; the certificate is the norm of the aggregate convex
    combination of subgradients at termination.  Serious values decrease
    strictly.
    """
    opts = options or BundleOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    sample0 = oracle(x0)
    n_oracle = 1
    if not sample0.feasible_eval or not math.isfinite(sample0.value):
        raise ValueError("bundle run needs a feasible, finite starting value")

    grads = [np.asarray(g, float).ravel() for g, _ in sample0.planes]
    tau0 = opts.tau0
    if tau0 is None:
        gnorm = max((float(np.linalg.norm(g)) for g in grads), default=1.0)
        tau0 = max(1.0, gnorm)
    state = BundleState(x0, sample0.value, tau0, opts)
    for g, val in sample0.planes:
        state.add_plane(x0, val, g)

    history = []
    status = "max_serious"
    certificate = math.inf
    n_serious = 0
    for _ in range(opts.max_serious):
        res = inner_loop(state, oracle)
        n_oracle += res["n_oracle"]
        if res["kind"] == "optimal":
            certificate = res["info"]["certificate"]
            status = "converged"
            break
        if res["kind"] == "exhausted":
            if res["info"] is not None:
                certificate = res["info"]["certificate"]
            status = "inner_exhausted"
            break
        sample = res["sample"]
        step_norm = float(np.linalg.norm(res["y"] - state.x))
        state.move_serious(res["y"], sample.value)
        for g, val in sample.planes:
            state.add_plane(state.x, val, g)
        n_serious += 1
        certificate = res["info"]["certificate"]
        history.append(
            {
                "serious_idx": n_serious,
                "f": state.fx,
                "tau": state.tau,
                "step_norm": step_norm,
                "certificate": certificate,
                "meta": sample.meta,
            }
        )
        if opts.target_value is not None and state.fx < opts.target_value:
            status = "target_reached"
            break
    return BundleResult(
        x=state.x,
        f=state.fx,
        certificate=certificate,
        history=history,
        status=status,
        n_serious=n_serious,
        n_oracle=n_oracle,
    )

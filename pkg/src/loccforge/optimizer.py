"""Riemannian gradient descent with Armijo backtracking on product Stiefel
manifolds, plus multi-restart orchestration.

The solver minimizes; experiments that maximize pass the negated objective.
Each accepted step satisfies f(R(t)) <= f(x) - c * t * |grad|^2 and iterates
stay on the manifold by construction of the QR retraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import ProductManifold, RankDeficientStep

STATUS_CONVERGED = "converged"
STATUS_MAX_ITERS = "max_iters"
STATUS_LINE_SEARCH_FAILED = "line_search_failed"
STATUS_EARLY_STOP = "early_stop"


@dataclass
class OptimOptions:
    max_iters: int = 1000
    grad_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    init_step: float = 1.0
    restarts: int = 10
    seed: int = 0
    max_halvings: int = 60
    early_stop_value: float | None = None   # stop a run once f <= this value

    def __post_init__(self):
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


@dataclass
class OptimTrace:
    values: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    steps: list[float] = field(default_factory=list)
    status: str = ""
    restart_index: int = 0


@dataclass
class OptimResult:
    point: list[np.ndarray]
    value: float
    trace: OptimTrace
    grads: list[np.ndarray] | None = None


def minimize(fun, manifold: ProductManifold, opts: OptimOptions,
             x0=None, seed=None) -> OptimResult:
    """Armijo-backtracked Riemannian gradient descent from x0 (or random).

    ``fun(point) -> (value, euclidean_grads)``.  Trial steps warm-start at
    min(init_step, 2 * last accepted step); a step whose retraction is rank
    deficient counts as a failed trial and is halved like an Armijo failure.
    """
    x = manifold.random_point(opts.seed if seed is None else seed) if x0 is None else x0
    manifold.check_point(x, tol=1e-8)
    f, eg = fun(x)
    grad = manifold.project(x, eg)
    gn = manifold.norm(grad)
    trace = OptimTrace()
    trace.values.append(f)
    trace.grad_norms.append(gn)
    trace.steps.append(0.0)
    last_step = opts.init_step
    for _ in range(opts.max_iters):
        if gn <= opts.grad_tol:
            trace.status = STATUS_CONVERGED
            return OptimResult(x, f, trace, grad)
        if opts.early_stop_value is not None and f <= opts.early_stop_value:
            trace.status = STATUS_EARLY_STOP
            return OptimResult(x, f, trace, grad)
        direction = [-g for g in grad]
        t = min(opts.init_step, 2.0 * last_step)
        accepted = False
        for _ in range(opts.max_halvings):
            try:
                x_new = manifold.retract(x, direction, t)
            except RankDeficientStep:
                t *= opts.backtrack_factor
                continue
            f_new, eg_new = fun(x_new)
            threshold = f - opts.armijo_c * t * gn * gn
            # threshold == f means the required decrease underflowed; such a
            # step is not a meaningful Armijo acceptance
            if f_new <= threshold and threshold < f:
                accepted = True
                break
            t *= opts.backtrack_factor
        if not accepted:
            trace.status = STATUS_LINE_SEARCH_FAILED
            return OptimResult(x, f, trace, grad)
        x, f = x_new, f_new
        grad = manifold.project(x, eg_new)
        gn = manifold.norm(grad)
        last_step = t
        trace.values.append(f)
        trace.grad_norms.append(gn)
        trace.steps.append(t)
    trace.status = STATUS_MAX_ITERS if gn > opts.grad_tol else STATUS_CONVERGED
    return OptimResult(x, f, trace, grad)


@dataclass
class MultiRestartResult:
    best: OptimResult
    restart_index: int
    traces: list[OptimTrace]


def multi_restart(fun, manifold: ProductManifold, opts: OptimOptions,
                  extra_inits=None) -> MultiRestartResult:
    """Best of ``opts.restarts`` independent runs (plus optional warm starts).

    Run i draws its own generator from SeedSequence(opts.seed).spawn, so a
    fixed seed reproduces results bit for bit.  ``extra_inits`` prepends runs
    started from the given points.  With ``early_stop_value`` set, remaining
    restarts are skipped once a run reaches the threshold.
    """
    children = np.random.SeedSequence(opts.seed).spawn(opts.restarts)
    runs: list[tuple[int, OptimResult]] = []

    def reached_target(res):
        return opts.early_stop_value is not None and res.value <= opts.early_stop_value

    idx = 0
    stop = False
    for x0 in (extra_inits or []):
        res = minimize(fun, manifold, opts, x0=[np.array(p) for p in x0])
        res.trace.restart_index = idx
        runs.append((idx, res))
        idx += 1
        if reached_target(res):
            stop = True
            break
    if not stop:
        for seq in children:
            res = minimize(fun, manifold, opts, x0=None, seed=np.random.default_rng(seq))
            res.trace.restart_index = idx
            runs.append((idx, res))
            idx += 1
            if reached_target(res):
                break
    best_idx, best = min(runs, key=lambda pair: (pair[1].value, pair[0]))
    return MultiRestartResult(best, best_idx, [r.trace for _, r in runs])

"""PPT-relaxation upper bounds via a self-contained first-order SDP solver.

Problems are collections of Hermitian PSD blocks tied by affine equality
constraints (inequalities enter through explicit PSD slack blocks).  The
solver is an ADMM / operator-splitting scheme alternating an exact affine
projection (normal equations solved by conjugate gradients in constraint
space) with PSD-cone projection by eigenvalue clipping, with over-relaxation
and adaptive penalty rebalancing.

The three bound programs implemented on top of it:

* average distillation fidelity:
      max Tr[rho^T E]
      s.t. E, F >= 0,  (1-d) F^{TA} <= E^{TA} <= (1+d) F^{TA},
           E + (d^2-1) F = I
* fixed-success-probability distillation fidelity: the same with
      Tr{rho^T [E + (d^2-1) F]} = p  and  E + (d^2-1) F <= I,
  reported as the maximized numerator divided by p.
* average state-merging fidelity (qubit R, A, B; k = m = 1):
      max Tr[C K]  s.t.  C >= 0, Tr_{B'B''} C = I_AB, C^{TA} >= 0.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .states import PureState, QState, _partial_trace_raw, embed_operator


def partial_transpose(rho, dims, subsystems) -> np.ndarray:
    """Transpose the designated tensor factors; involutive, trace preserving."""
    data = rho.data if isinstance(rho, QState) else np.asarray(rho)
    dims = tuple(int(d) for d in dims)
    n = len(dims)
    subsystems = sorted(set(int(s) for s in subsystems))
    if any(s < 0 or s >= n for s in subsystems):
        raise IndexError(f"subsystems {subsystems} out of range for {n} factors")
    t = data.reshape(dims + dims)
    for s in subsystems:
        t = np.swapaxes(t, s, s + n)
    D = data.shape[0]
    return np.ascontiguousarray(t.reshape(D, D))


# -- constraint operators ---------------------------------------------------

class _Id:
    def apply(self, x):
        return x

    adjoint = apply


class _PT:
    def __init__(self, dims, subsystems):
        self.dims = tuple(dims)
        self.subsystems = tuple(subsystems)

    def apply(self, x):
        return partial_transpose(x, self.dims, self.subsystems)

    adjoint = apply


class _PTrace:
    def __init__(self, dims, keep):
        self.dims = tuple(dims)
        self.keep = tuple(keep)

    def apply(self, x):
        return _partial_trace_raw(x, self.dims, list(self.keep))

    def adjoint(self, y):
        return embed_operator(y, self.keep, self.dims)


@dataclass
class MatrixConstraint:
    """sum_k coeff_k * op_k(x[block_k]) = rhs (an operator equation)."""

    terms: list            # (block, coeff, op)
    rhs: np.ndarray

    def apply(self, xs):
        out = None
        for block, coeff, op in self.terms:
            term = coeff * op.apply(xs[block])
            out = term if out is None else out + term
        return out

    def adjoint_into(self, y, outs):
        for block, coeff, op in self.terms:
            outs[block] += coeff * op.adjoint(y)


@dataclass
class TraceConstraint:
    """sum_k Re Tr[W_k x[block_k]] = rhs (a scalar equation, W Hermitian)."""

    pairs: list            # (block, W)
    rhs: float

    def apply(self, xs):
        return np.array(sum(float(np.real(np.trace(w @ xs[b]))) for b, w in self.pairs))

    def adjoint_into(self, y, outs):
        s = float(np.real(y))
        for b, w in self.pairs:
            outs[b] += s * w


@dataclass
class SdpProblem:
    """PSD blocks, affine equality constraints, and a linear objective."""

    block_dims: list[int]
    constraints: list
    objective: list | None = None       # Hermitian coefficient per block (None = 0)
    maximize: bool = True

    def zeros(self):
        return [np.zeros((d, d), dtype=complex) for d in self.block_dims]


@dataclass
class SdpSolution:
    blocks: list[np.ndarray]
    value: float
    primal_residual: float
    dual_residual: float
    compl_residual: float
    iterations: int
    converged: bool
    status: str
    error_estimate: float = 0.0
    runtime: float = 0.0


def _dot(a, b) -> float:
    return sum(float(np.real(np.vdot(x, y))) for x, y in zip(a, b))


def _norm(a) -> float:
    return float(np.sqrt(max(_dot(a, a), 0.0)))


def _hermitize(x):
    return (x + x.conj().T) / 2


class _AffineProjector:
    """Least-squares projection onto {x : A(x) = b} with warm-started CG."""

    def __init__(self, problem: SdpProblem):
        self.problem = problem
        self.constraints = problem.constraints
        self.rhs = [np.asarray(c.rhs, dtype=complex) for c in self.constraints]
        self.lam = [np.zeros_like(r) for r in self.rhs]

    def _A(self, xs):
        return [c.apply(xs) for c in self.constraints]

    def _At(self, ys):
        outs = self.problem.zeros()
        for c, y in zip(self.constraints, ys):
            c.adjoint_into(y, outs)
        return outs

    def _AAt(self, ys):
        return self._A(self._At(ys))

    def project(self, xs):
        if not self.constraints:
            return [np.array(x) for x in xs]
        resid = [a - b for a, b in zip(self._A(xs), self.rhs)]
        lam = self._solve_normal(resid)
        corr = self._At(lam)
        return [x - c for x, c in zip(xs, corr)]

    def _solve_normal(self, b, tol_rel=1e-12, max_iter=2000):
        x = [np.array(v) for v in self.lam]
        r = [bb - aa for bb, aa in zip(b, self._AAt(x))]
        p = [np.array(v) for v in r]
        rs = _dot(r, r)
        b_norm = _norm(b)
        stop = max(tol_rel * b_norm, 1e-15)
        it = 0
        while np.sqrt(rs) > stop and it < max_iter:
            ap = self._AAt(p)
            alpha = rs / max(_dot(p, ap), 1e-300)
            x = [xx + alpha * pp for xx, pp in zip(x, p)]
            r = [rr - alpha * aa for rr, aa in zip(r, ap)]
            rs_new = _dot(r, r)
            p = [rr + (rs_new / rs) * pp for rr, pp in zip(r, p)]
            rs = rs_new
            it += 1
        self.lam = x
        return x


def _project_psd(x):
    lam, v = np.linalg.eigh(_hermitize(x))
    lam = np.maximum(lam, 0.0)
    return _hermitize((v * lam) @ v.conj().T)


def _min_eig(x) -> float:
    return float(np.linalg.eigvalsh(_hermitize(x))[0])


def solve(problem: SdpProblem, tol: float = 1e-7, max_iters: int = 200000,
          sigma: float = 1.0, over_relax: float = 1.6,
          check_every: int = 25, time_cap: float | None = None) -> SdpSolution:
    """Run the operator-splitting iteration until both residuals reach tol."""
    t0 = time.perf_counter()
    sense = -1.0 if problem.maximize else 1.0
    c = problem.objective or [None] * len(problem.block_dims)
    c = [sense * np.asarray(ci) if ci is not None else None for ci in c]
    feasibility_only = all(ci is None or not np.any(ci) for ci in c)

    proj = _AffineProjector(problem)
    x = proj.project(problem.zeros())
    x = [_hermitize(v) for v in x]
    z = [np.array(v) for v in x]
    u = [np.zeros_like(v) for v in x]

    def objective_at(blocks):
        val = 0.0
        for ci, bi in zip(c, blocks):
            if ci is not None:
                val += float(np.real(np.trace(ci @ bi)))
        return -val if problem.maximize else val  # undo the sense flip

    rp = rd = np.inf
    status = "max_iters"
    it = 0
    for it in range(1, max_iters + 1):
        w = [zi - ui - (0 if ci is None else ci / sigma)
             for zi, ui, ci in zip(z, u, c)]
        x = [_hermitize(v) for v in proj.project(w)]
        if feasibility_only and all(_min_eig(v) >= -tol for v in x):
            z = [np.array(v) for v in x]
            rp = rd = 0.0
            status = "solved"
            break
        xh = [over_relax * xi + (1 - over_relax) * zi for xi, zi in zip(x, z)]
        z_old = z
        z = [_project_psd(xi + ui) for xi, ui in zip(xh, u)]
        u = [ui + xi - zi for ui, xi, zi in zip(u, xh, z)]
        if it % check_every == 0 or it == max_iters:
            diff = [a - b for a, b in zip(x, z)]
            rp = _norm(diff) / (1.0 + max(_norm(x), _norm(z)))
            dz = [a - b for a, b in zip(z, z_old)]
            rd = sigma * _norm(dz) / (1.0 + sigma * _norm(u))
            if rp <= tol and rd <= tol:
                status = "solved"
                break
            if time_cap is not None and time.perf_counter() - t0 > time_cap:
                status = "time_cap"
                break
            if rp > 10 * rd and sigma < 1e6:
                sigma *= 2.0
                u = [ui / 2.0 for ui in u]
            elif rd > 10 * rp and sigma > 1e-6:
                sigma /= 2.0
                u = [2.0 * ui for ui in u]

    value_z = objective_at(z)
    value_x = objective_at(x)
    s_dual = [-sigma * ui for ui in u]
    compl = abs(sum(float(np.real(np.vdot(zi, si))) for zi, si in zip(z, s_dual)))
    compl /= 1.0 + abs(value_z)
    return SdpSolution(
        blocks=z,
        value=value_z,
        primal_residual=float(rp),
        dual_residual=float(rd),
        compl_residual=compl,
        iterations=it,
        converged=(status == "solved"),
        status=status,
        error_estimate=abs(value_x - value_z),
        runtime=time.perf_counter() - t0,
    )


# -- PPT bound programs ------------------------------------------------------

def _check_bipartite(rho: QState) -> tuple[int, int]:
    if len(rho.dims) != 2:
        raise ValueError("expected a state with dims (d_Alice, d_Bob)")
    return rho.dims


def ppt_avg_fidelity_problem(rho_ab: QState, d: int = 2) -> SdpProblem:
    da, db = _check_bipartite(rho_ab)
    D = rho_ab.dim
    eye = np.eye(D, dtype=complex)
    pt = _PT((da, db), (0,))
    constraints = [
        MatrixConstraint([(0, 1.0, _Id()), (1, float(d * d - 1), _Id())], eye),
        MatrixConstraint([(2, 1.0, _Id()), (0, -1.0, pt), (1, float(1 - d), pt)],
                         np.zeros((D, D), dtype=complex)),
        MatrixConstraint([(3, 1.0, _Id()), (0, 1.0, pt), (1, -float(1 + d), pt)],
                         np.zeros((D, D), dtype=complex)),
    ]
    objective = [np.array(rho_ab.data.T), None, None, None]
    return SdpProblem([D, D, D, D], constraints, objective, maximize=True)


def ppt_avg_fidelity_bound(rho_ab: QState, d: int = 2, tol: float = 1e-7,
                           max_iters: int = 200000, **kw) -> float:
    sol = solve(ppt_avg_fidelity_problem(rho_ab, d), tol=tol, max_iters=max_iters, **kw)
    if not sol.converged:
        raise RuntimeError(
            f"PPT average-fidelity SDP did not converge: status={sol.status}, "
            f"residuals=({sol.primal_residual:.2e}, {sol.dual_residual:.2e})"
        )
    return sol.value


def ppt_fidelity_problem(rho_ab: QState, d: int, p: float) -> SdpProblem:
    if not 0.0 < p <= 1.0:
        raise ValueError(f"success probability {p} outside (0, 1]")
    da, db = _check_bipartite(rho_ab)
    D = rho_ab.dim
    eye = np.eye(D, dtype=complex)
    zero = np.zeros((D, D), dtype=complex)
    pt = _PT((da, db), (0,))
    rho_t = np.array(rho_ab.data.T)
    k = float(d * d - 1)
    constraints = [
        MatrixConstraint([(4, 1.0, _Id()), (0, 1.0, _Id()), (1, k, _Id())], eye),
        MatrixConstraint([(2, 1.0, _Id()), (0, -1.0, pt), (1, float(1 - d), pt)], zero),
        MatrixConstraint([(3, 1.0, _Id()), (0, 1.0, pt), (1, -float(1 + d), pt)], zero),
        TraceConstraint([(0, rho_t), (1, k * rho_t)], float(p)),
    ]
    objective = [rho_t, None, None, None, None]
    return SdpProblem([D] * 5, constraints, objective, maximize=True)


def ppt_fidelity_bound(rho_ab: QState, d: int, p: float, tol: float = 1e-7,
                       max_iters: int = 200000, **kw) -> float:
    """Upper bound on the conditional fidelity at success probability p.

    The linear-fractional objective is handled by maximizing the numerator at
    the fixed trace p and dividing afterwards.
    """
    sol = solve(ppt_fidelity_problem(rho_ab, d, p), tol=tol, max_iters=max_iters, **kw)
    if not sol.converged:
        raise RuntimeError(
            f"PPT fixed-p SDP did not converge: status={sol.status}, "
            f"residuals=({sol.primal_residual:.2e}, {sol.dual_residual:.2e})"
        )
    return sol.value / p


def merging_objective_coefficient(psi_rab: PureState) -> np.ndarray:
    """Hermitian coefficient K with F = Tr[C K] on the A,B,B',B'' layout."""
    if tuple(psi_rab.dims) != (2, 2, 2):
        raise ValueError("the merging SDP is defined for qubit R, A, B")
    proj = np.outer(psi_rab.amp, psi_rab.amp.conj())
    dims5 = (2, 2, 2, 2, 2)                      # R, A, B, B', B''
    p1 = embed_operator(partial_transpose(proj, (2, 2, 2), (1, 2)), (0, 1, 2), dims5)
    p2 = embed_operator(proj, (0, 3, 4), dims5)  # psi_{RB'B''}
    m = p2 @ p1
    k = _partial_trace_raw(m, dims5, [1, 2, 3, 4])
    return _hermitize(k)


def ppt_merging_problem(psi_rab: PureState) -> SdpProblem:
    k_obj = merging_objective_coefficient(psi_rab)
    dims = (2, 2, 2, 2)                          # A, B, B', B''
    D = 16
    constraints = [
        MatrixConstraint([(0, 1.0, _PTrace(dims, (0, 1)))], np.eye(4, dtype=complex)),
        MatrixConstraint([(1, 1.0, _Id()), (0, -1.0, _PT(dims, (0,)))],
                         np.zeros((D, D), dtype=complex)),
    ]
    objective = [k_obj, None]
    return SdpProblem([D, D], constraints, objective, maximize=True)


def ppt_merging_bound(psi_rab: PureState, tol: float = 1e-7,
                      max_iters: int = 200000, **kw) -> float:
    sol = solve(ppt_merging_problem(psi_rab), tol=tol, max_iters=max_iters, **kw)
    if not sol.converged:
        raise RuntimeError(
            f"PPT merging SDP did not converge: status={sol.status}, "
            f"residuals=({sol.primal_residual:.2e}, {sol.dual_residual:.2e})"
        )
    return sol.value

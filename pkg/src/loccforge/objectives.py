"""Noise channels, experiment input states, objective functions and their
Euclidean gradients.

All objectives are real functions of the protocol's Stiefel parameters.
Gradients follow the convention G = 2 df/dX*, so the real directional
derivative along Z is Re Tr[G^+ Z]; they are computed by an adjoint chain
through each branch's CP-map layers.  Trace objectives backpropagate the
target operator, the block coherent information backpropagates the spectral
derivative of the entropy (with eigenvalue clamping at 1e-12), and
fixed-outcome fidelities use the quotient rule with a success-probability
floor of 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .protocol import LoccProtocol, Scheme, cmps, general_locc, ips
from .states import (
    ENTROPY_EIG_FLOOR,
    KrausSet,
    PureState,
    QState,
    _apply_kraus_raw,
    _entropy_from_eigs,
    _permute_raw,
    choi_state,
    embed_operator,
    max_entangled,
    permute_pure,
    tensor,
)

PROB_FLOOR = 1e-12
_LOG2E = 1.0 / np.log(2.0)


# -- noise channels --------------------------------------------------------

class NoiseKind(str, Enum):
    DEPOLARIZING = "depolarizing"
    AMPLITUDE_DAMPING = "amplitude_damping"
    DEPHASING = "dephasing"
    GADC = "gadc"


def _weyl_operators(d: int) -> list[np.ndarray]:
    """Generalized Paulis X^a Z^b; conjugation-averaging them depolarizes."""
    omega = np.exp(2j * np.pi / d)
    shift = np.zeros((d, d), dtype=complex)
    for k in range(d):
        shift[(k + 1) % d, k] = 1.0
    clock = np.diag(omega ** np.arange(d))
    ops = []
    xa = np.eye(d, dtype=complex)
    for _ in range(d):
        zb = np.eye(d, dtype=complex)
        for _ in range(d):
            ops.append(xa @ zb)
            zb = zb @ clock
        xa = xa @ shift
    return ops


def make_noise(kind, params, d: int) -> KrausSet:
    """Kraus set of the named channel on a d-dimensional system.

    Depolarizing: (1-g) rho + g Tr(rho) I/d, realized with Weyl operators.
    Amplitude damping: K0 = |0><0| + sqrt(1-g) sum_{i>=1} |i><i| plus the
    d-1 decay operators sqrt(g)|i-1><i|.
    Dephasing: g * diag(rho) + (1-g) rho.
    GADC (d=2): the four generalized-amplitude-damping operators with
    parameters (g_a, g_n); g_n = 0 reduces to amplitude damping.
    """
    kind = NoiseKind(kind)
    if d < 2:
        raise ValueError("channel dimension must be >= 2")
    if kind is NoiseKind.GADC:
        ga, gn = (float(params[0]), float(params[1]))
        if not (0 <= ga <= 1 and 0 <= gn <= 1):
            raise ValueError(f"GADC parameters {params} outside [0, 1]")
        if d != 2:
            raise ValueError("GADC is defined on qubits")
        k1 = np.sqrt(1 - gn) * np.array([[1, 0], [0, np.sqrt(1 - ga)]], dtype=complex)
        k2 = np.sqrt(ga * (1 - gn)) * np.array([[0, 1], [0, 0]], dtype=complex)
        k3 = np.sqrt(gn) * np.array([[np.sqrt(1 - ga), 0], [0, 1]], dtype=complex)
        k4 = np.sqrt(ga * gn) * np.array([[0, 0], [1, 0]], dtype=complex)
        return KrausSet((k1, k2, k3, k4))
    g = float(params if np.isscalar(params) else params[0])
    if not 0 <= g <= 1:
        raise ValueError(f"channel parameter {g} outside [0, 1]")
    eye = np.eye(d, dtype=complex)
    if kind is NoiseKind.DEPOLARIZING:
        ops = [np.sqrt(1 - g) * eye]
        ops += [np.sqrt(g) / d * U for U in _weyl_operators(d)]
        return KrausSet(tuple(ops))
    if kind is NoiseKind.AMPLITUDE_DAMPING:
        k0 = np.diag(np.concatenate(([1.0], np.full(d - 1, np.sqrt(1 - g))))).astype(complex)
        ops = [k0]
        for i in range(1, d):
            k = np.zeros((d, d), dtype=complex)
            k[i - 1, i] = np.sqrt(g)
            ops.append(k)
        return KrausSet(tuple(ops))
    # dephasing
    ops = [np.sqrt(1 - g) * eye]
    for i in range(d):
        p = np.zeros((d, d), dtype=complex)
        p[i, i] = np.sqrt(g)
        ops.append(p)
    return KrausSet(tuple(ops))


def gadc_choi(gamma_a: float, gamma_n: float) -> QState:
    """Normalized Choi state (id x N_gadc)(Phi+) on dims (2, 2)."""
    return choi_state(make_noise(NoiseKind.GADC, (gamma_a, gamma_n), 2), 2)


def hashing_bound(gamma_a: float, gamma_n: float) -> float:
    """Single-copy coherent information of the GADC Choi state (ebits)."""
    from .states import coherent_information

    return coherent_information(gadc_choi(gamma_a, gamma_n), cut=1)


# -- experiment input states ------------------------------------------------

def copy_major_to_agent_major(n_agents: int, n_copies: int) -> list[int]:
    """Permutation taking [copy1(agents...), copy2(agents...)] subsystem order
    to [agent1(copies...), agent2(copies...)]; entry i is the source index."""
    perm = []
    for agent in range(n_agents):
        for copy in range(n_copies):
            perm.append(copy * n_agents + agent)
    return perm


def noisy_bell_input(noises, n_agents: int = 2, one_sided: bool = False) -> QState:
    """Tensor product of noisy maximally entangled copies, agent-major order.

    ``noises`` lists one KrausSet per copy.  By default each channel acts on
    the full 2^N-dimensional copy; with ``one_sided`` it is a qubit channel
    on the first agent's share of each copy.  The returned state has fine
    dims (2,)*(N*M) grouped as agent 1's copies, then agent 2's, etc.
    """
    n_copies = len(noises)
    phi = max_entangled(n_agents, 2).density()
    copies = []
    for ks in noises:
        ops = ks.ops if isinstance(ks, KrausSet) else tuple(ks)
        if one_sided:
            pad = np.eye(2 ** (n_agents - 1))
            ops = tuple(np.kron(K, pad) for K in ops)
        if ops[0].shape[1] != phi.dim:
            raise ValueError(
                f"noise dimension {ops[0].shape[1]} does not match the copy dimension {phi.dim}"
            )
        copies.append(QState(_apply_kraus_raw(ops, phi.data), phi.dims, validate=False))
    state = copies[0]
    for c in copies[1:]:
        state = tensor(state, c)
    perm = copy_major_to_agent_major(n_agents, n_copies)
    data = _permute_raw(state.data, state.dims, perm)
    return QState(data, (2,) * (n_agents * n_copies), validate=False)


def distill_target_op(n_agents: int, n_copies: int) -> np.ndarray:
    """Projector onto the copy-1 MES, padded with identities (agent-major)."""
    phi = max_entangled(n_agents, 2)
    proj = np.outer(phi.amp, phi.amp.conj())
    positions = [x * n_copies for x in range(n_agents)]
    return embed_operator(proj, positions, (2,) * (n_agents * n_copies))


def coherent_info_input(gadc_params) -> QState:
    """n GADC Choi copies grouped as (Alice = all A factors, Bob = all B's).

    ``gadc_params`` lists (gamma_a, gamma_n) per copy.  Returns coarse dims
    (2^n, 2^n).
    """
    n = len(gadc_params)
    state = gadc_choi(*gadc_params[0])
    for pars in gadc_params[1:]:
        state = tensor(state, gadc_choi(*pars))
    perm = copy_major_to_agent_major(2, n)
    data = _permute_raw(state.data, state.dims, perm)
    return QState(data, (2 ** n, 2 ** n), validate=False)


def _trivial_or_mes(rank: int) -> PureState:
    if rank == 1:
        return PureState(np.ones(1), (1, 1))
    return max_entangled(2, rank)


def merge_input(psi_rab: PureState, k: int) -> QState:
    """psi_RAB tensored with a rank-k MES, grouped (R | A,Ae | B,Be)."""
    if tuple(psi_rab.dims) != (2, 2, 2):
        raise ValueError("merging experiments use qubit R, A, B")
    full = tensor(psi_rab, _trivial_or_mes(k))       # order R, A, B, Ae, Be
    full = permute_pure(full, [0, 1, 3, 2, 4])       # -> R, A, Ae, B, Be
    rho = full.density()
    return QState(rho.data, (2, 2 * k, 2 * k), validate=False)


def merge_target_op(psi_rab: PureState, k: int, m: int) -> np.ndarray:
    """Projector onto Phi'_{Ae'Be'} (x) psi_{RB'B''} on the output layout
    (R | Ae' | Be', B', B'')."""
    target = tensor(_trivial_or_mes(m), psi_rab)     # Ae', Be', R, B', B''
    target = permute_pure(target, [2, 0, 1, 3, 4])   # -> R, Ae', Be', B', B''
    return np.outer(target.amp, target.amp.conj())


# -- protocol builders for the experiments ----------------------------------

def build_distill_protocol(scheme, n_agents: int, n_copies: int, s_order: int = 2,
                           t_order: int = 1, rounds: int = 2,
                           follower_t_order: int = 1) -> LoccProtocol:
    """Distillation protocol acting on agent blocks of n_copies qubits each."""
    scheme = Scheme(scheme)
    d = 2 ** n_copies
    dims = (d,) * n_agents
    if scheme is Scheme.GENERAL_R_ROUND:
        return general_locc(n_agents, dims, rounds, s_order, t_order,
                            follower_t_order=follower_t_order)
    if scheme is Scheme.IPS:
        return ips(dims, s_order=s_order, t_orders=t_order)
    keep = ((2,),) * n_agents
    measured = ((2,) * (n_copies - 1),) * n_agents
    return cmps(keep, measured, t_order)


def build_coherent_protocol(n_copies: int, s_order: int = 2, t_order: int = 1) -> LoccProtocol:
    """Two-agent LOCC_2 with identity followers on n Choi copies."""
    d = 2 ** n_copies
    return general_locc(2, (d, d), rounds=2, s_order=s_order, t_order=t_order,
                        followers_identity=True)


def build_merge_protocol(k: int, m: int, s_order: int = 2,
                         t_orders=None) -> LoccProtocol:
    """IPS merging protocol: Alice (A, Ae) -> Ae', Bob (B, Be) -> (Be', B', B'').

    Kraus orders default to the full value dim_in * dim_out per agent.
    """
    if k not in (1, 2) or m not in (1, 2):
        raise ValueError(f"qubit merging experiments support ranks 1 and 2, got k={k}, m={m}")
    dims_in = (2 * k, 2 * k)
    dims_out = (m, 4 * m)
    return ips(dims_in, agent_dims_out=dims_out, s_order=s_order, t_orders=t_orders,
               state_dims=(2, 2 * k, 2 * k), agent_slots=(1, 2))


# -- objectives --------------------------------------------------------------

class ObjectiveKind(str, Enum):
    AVG_DISTILL_FID = "avg_distill_fid"
    DISTILL_FID = "distill_fid"
    BLOCK_COHERENT_INFO = "block_coherent_info"
    MERGE_FID = "merge_fid"
    AVG_MERGE_FID = "avg_merge_fid"


_RATIO_KINDS = (ObjectiveKind.DISTILL_FID, ObjectiveKind.MERGE_FID)


@dataclass
class Objective:
    """An objective bound to a protocol and an input state.

    ``target_op`` is the Hermitian operator on the protocol's output space
    whose expectation defines fidelity objectives (already padded with
    identities on discarded subsystems).  ``selected_outcome`` is required
    exactly for the fixed-outcome fidelities and defaults to all zeros.
    """

    kind: ObjectiveKind
    protocol: LoccProtocol
    input_state: QState
    target_op: np.ndarray | None = None
    selected_outcome: tuple[int, ...] | None = None
    n_copies: int = 1
    cut_agent: int = 0

    def __post_init__(self):
        self.kind = ObjectiveKind(self.kind)
        if tuple(self.input_state.dims) != self.protocol.state_dims:
            self.input_state = self.input_state.regroup(self.protocol.state_dims)
        if self.kind in _RATIO_KINDS:
            if self.selected_outcome is None:
                self.selected_outcome = (0,) * self.protocol.outcome_lengths()
            self.selected_outcome = tuple(self.selected_outcome)
        elif self.selected_outcome is not None:
            raise ValueError(f"{self.kind.value} admits no selected outcome")
        if self.kind is not ObjectiveKind.BLOCK_COHERENT_INFO:
            if self.target_op is None:
                raise ValueError(f"{self.kind.value} needs a target operator")
            d_out = int(np.prod(self.protocol.output_dims()))
            if self.target_op.shape != (d_out, d_out):
                raise ValueError(
                    f"target operator shape {self.target_op.shape} does not match "
                    f"the output dimension {d_out}"
                )


@dataclass
class ObjectiveResult:
    value: float
    success_prob: float | None = None


def _tr_product(sigma: np.ndarray, op: np.ndarray) -> float:
    return float(np.real(np.trace(sigma @ op)))


def _entropy_gradient(rho: np.ndarray) -> np.ndarray:
    """Spectral derivative of S(rho) = -Tr[rho log2 rho], clamped at the floor."""
    lam, v = np.linalg.eigh(rho)
    lam = np.maximum(lam, ENTROPY_EIG_FLOOR)
    gp = -(np.log2(lam) + _LOG2E)
    return (v * gp) @ v.conj().T


def _coherent_pieces(obj: Objective, branches):
    """Entropy terms and per-branch cotangents of the flagged output state."""
    slot = obj.protocol.agent_slots[obj.cut_agent]
    out_dims = obj.protocol.output_dims()
    d_a = out_dims[slot]
    n = len(out_dims)
    keep = [i for i in range(n) if i != slot]
    s_ab = 0.0
    s_b = 0.0
    cotangents = []
    for br in branches:
        sigma = br.state.data
        lam_ab = np.linalg.eigvalsh(sigma)
        s_ab += _entropy_from_eigs(lam_ab)
        from .states import _partial_trace_raw

        rho_b = _partial_trace_raw(sigma, out_dims, keep)
        s_b += _entropy_from_eigs(np.linalg.eigvalsh(rho_b))
        cot = embed_operator(_entropy_gradient(rho_b), keep, out_dims) \
            - _entropy_gradient(sigma)
        cotangents.append(cot / obj.n_copies)
    value = (s_b - s_ab) / obj.n_copies
    return value, cotangents


def _branch_cotangents(obj: Objective, branches):
    """Objective value, success probability and per-branch cotangents."""
    if obj.kind in (ObjectiveKind.AVG_DISTILL_FID, ObjectiveKind.AVG_MERGE_FID):
        value = sum(_tr_product(br.state.data, obj.target_op) for br in branches)
        return value, None, [obj.target_op] * len(branches)
    if obj.kind in _RATIO_KINDS:
        sigma = branches[0].state.data
        den = float(np.real(np.trace(sigma)))
        if den < PROB_FLOOR:
            return 0.0, den, [np.zeros_like(sigma)]
        num = _tr_product(sigma, obj.target_op)
        eye = np.eye(sigma.shape[0])
        cot = obj.target_op / den - (num / den ** 2) * eye
        return num / den, den, [cot]
    value, cots = _coherent_pieces(obj, branches)
    return value, None, cots


def _run_branches(obj: Objective, point, with_tape: bool):
    if obj.kind in _RATIO_KINDS:
        return [obj.protocol.apply_selected(point, obj.input_state,
                                            obj.selected_outcome, with_tape=with_tape)]
    return obj.protocol.apply(point, obj.input_state, with_tape=with_tape)


def _contract_embedded(m: np.ndarray, pre: int, d_out: int, post: int, d_in: int) -> np.ndarray:
    t = m.reshape(pre, d_out, post, pre, d_in, post)
    return np.einsum("iajibj->ab", t)


def _backprop(obj: Objective, branches, cotangents, grads):
    for br, lam in zip(branches, cotangents):
        tape = br.tape
        for depth in range(len(tape) - 1, -1, -1):
            layer = tape[depth]
            if layer.part is not None:
                target = grads[layer.part]
                for K, r0 in zip(layer.kraus, layer.row_offsets):
                    m = lam @ K @ layer.rho_in
                    target[r0:r0 + layer.d_out, :] += _contract_embedded(
                        m, layer.pre, layer.d_out, layer.post, layer.d_in)
            if depth > 0:
                nxt = layer.kraus[0].conj().T @ lam @ layer.kraus[0]
                for K in layer.kraus[1:]:
                    nxt += K.conj().T @ lam @ K
                lam = nxt


def evaluate(obj: Objective, point) -> ObjectiveResult:
    branches = _run_branches(obj, point, with_tape=False)
    value, prob, _ = _branch_cotangents(obj, branches)
    return ObjectiveResult(value, prob)


def objective_value(obj: Objective, point) -> float:
    return evaluate(obj, point).value


def value_and_grad(obj: Objective, point):
    """Objective value and the ambient Euclidean gradient per Stiefel part."""
    branches = _run_branches(obj, point, with_tape=True)
    value, _, cotangents = _branch_cotangents(obj, branches)
    grads = [np.zeros(shape, dtype=complex) for shape in obj.protocol.layout()]
    _backprop(obj, branches, cotangents, grads)
    return value, [2.0 * g for g in grads]


def euclidean_gradient(obj: Objective, point) -> list[np.ndarray]:
    return value_and_grad(obj, point)[1]


def avg_distill_fidelity(point, obj: Objective) -> float:
    if obj.kind is not ObjectiveKind.AVG_DISTILL_FID:
        raise ValueError(f"objective kind is {obj.kind.value}")
    return objective_value(obj, point)


def distill_fidelity(point, obj: Objective) -> float:
    if obj.kind is not ObjectiveKind.DISTILL_FID:
        raise ValueError(f"objective kind is {obj.kind.value}")
    return objective_value(obj, point)


def block_coherent_info(point, obj: Objective) -> float:
    if obj.kind is not ObjectiveKind.BLOCK_COHERENT_INFO:
        raise ValueError(f"objective kind is {obj.kind.value}")
    return objective_value(obj, point)


def merge_fidelity(point, obj: Objective) -> float:
    if obj.kind is not ObjectiveKind.MERGE_FID:
        raise ValueError(f"objective kind is {obj.kind.value}")
    return objective_value(obj, point)


def avg_merge_fidelity(point, obj: Objective) -> float:
    if obj.kind is not ObjectiveKind.AVG_MERGE_FID:
        raise ValueError(f"objective kind is {obj.kind.value}")
    return objective_value(obj, point)


# -- objective assembly -------------------------------------------------------

def distill_objective(kind, protocol: LoccProtocol, noises, n_agents: int = 2,
                      one_sided: bool = False) -> Objective:
    n_copies = len(noises)
    rho = noisy_bell_input(noises, n_agents, one_sided=one_sided)
    return Objective(
        kind=ObjectiveKind(kind), protocol=protocol,
        input_state=rho.regroup(protocol.state_dims),
        target_op=distill_target_op(n_agents, n_copies),
    )


def coherent_objective(protocol: LoccProtocol, gadc_params) -> Objective:
    rho = coherent_info_input(gadc_params)
    return Objective(
        kind=ObjectiveKind.BLOCK_COHERENT_INFO, protocol=protocol,
        input_state=rho, n_copies=len(gadc_params), cut_agent=0,
    )


def merge_objective(kind, protocol: LoccProtocol, psi_rab: PureState,
                    k: int, m: int) -> Objective:
    return Objective(
        kind=ObjectiveKind(kind), protocol=protocol,
        input_state=merge_input(psi_rab, k),
        target_op=merge_target_op(psi_rab, k, m),
    )

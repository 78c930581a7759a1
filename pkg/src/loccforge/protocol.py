"""Fixed-round LOCC protocol structures and their action on states.

Three schemes are supported:

* ``GENERAL_R_ROUND`` -- a tree of one-way local instruments.  Each round has
  a leader whose instrument depends on the full outcome history; every other
  agent applies an outcome-conditioned channel.
* ``IPS`` -- every agent applies one instrument independently; the joint
  outcome pattern drives post-selection.
* ``CMPS`` -- every agent applies a channel followed by a fixed
  computational-basis measurement on its designated subsystems.

A protocol is parameterized by a list of Stiefel matrices (one per
instrument/channel).  Rows of each matrix are sliced into contiguous
d_out x d_in Kraus blocks, ordered by (outcome j, Kraus index i), so column
orthonormality is exactly the trace-preservation constraint.

Outcome sequences are little-endian lists [j1, ..., jr] (round 1 first) and
branches are enumerated in lexicographic order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from itertools import product as iter_product

import numpy as np

from .manifold import ProductManifold
from .states import KrausSet, QState, ket

TP_TOL = 1e-9
WEIGHT_SUM_TOL = 1e-8


class Scheme(str, Enum):
    GENERAL_R_ROUND = "general"
    IPS = "ips"
    CMPS = "cmps"


@dataclass(frozen=True)
class InstrumentSpec:
    """Shape data of one instrument: S CP maps with T Kraus operators each,
    mapping dim_in to dim_out."""

    s_order: int
    t_order: int
    dim_in: int
    dim_out: int

    def __post_init__(self):
        if self.s_order < 1 or self.t_order < 1:
            raise ValueError("instrument and Kraus orders must be >= 1")
        if self.dim_in < 1 or self.dim_out < 1:
            raise ValueError("dimensions must be >= 1")
        if self.s_order * self.t_order * self.dim_out < self.dim_in:
            raise ValueError(
                f"spec {self} cannot satisfy trace preservation: "
                "S*T*dim_out must be >= dim_in"
            )

    @property
    def stiefel_shape(self) -> tuple[int, int]:
        return (self.s_order * self.t_order * self.dim_out, self.dim_in)


@dataclass(frozen=True)
class Instrument:
    """A family of CP maps (one KrausSet per outcome) summing to a TP map."""

    branches: tuple[KrausSet, ...]

    def __post_init__(self):
        gram = sum(
            K.conj().T @ K for ks in self.branches for K in ks.ops
        )
        dev = float(np.max(np.abs(gram - np.eye(self.branches[0].dim_in))))
        if dev > TP_TOL:
            raise ValueError(f"instrument is not trace preserving: |sum - I| = {dev:.3e}")

    @property
    def s_order(self) -> int:
        return len(self.branches)


def instrument_from_point(x: np.ndarray, spec: InstrumentSpec) -> Instrument:
    """Slice a Stiefel matrix into the Kraus blocks of an instrument."""
    if x.shape != spec.stiefel_shape:
        raise ValueError(f"point shape {x.shape} does not match spec {spec.stiefel_shape}")
    d = spec.dim_out
    branches = []
    for j in range(spec.s_order):
        ops = []
        for i in range(spec.t_order):
            r0 = (j * spec.t_order + i) * d
            ops.append(np.asarray(x[r0:r0 + d, :]))
        branches.append(KrausSet(tuple(ops)))
    return Instrument(tuple(branches))


@dataclass(frozen=True)
class PartRole:
    """Where one Stiefel factor sits in the protocol."""

    kind: str          # "instrument" or "channel"
    round_index: int   # 0 for IPS/CMPS
    prefix: tuple      # outcome history selecting this node
    agent: int
    spec: InstrumentSpec


@dataclass
class TapeLayer:
    """One CP-map application recorded for gradient backpropagation."""

    part: int | None                    # Stiefel factor index, None for fixed maps
    kraus: list[np.ndarray]             # operators embedded on the full space
    row_offsets: list[int]              # row of each raw block inside the factor
    d_out: int
    d_in: int
    pre: int
    post: int
    rho_in: np.ndarray


@dataclass
class BranchOutcome:
    """One outcome sequence with its unnormalized post-branch state."""

    outcome_seq: tuple[int, ...]
    state: QState
    weight: float
    tape: list[TapeLayer] | None = None


def _embed(k: np.ndarray, pre: int, post: int) -> np.ndarray:
    if pre > 1:
        k = np.kron(np.eye(pre), k)
    if post > 1:
        k = np.kron(k, np.eye(post))
    return k


def _apply_cp_layer(state, dims, slot, kraus_raw, d_out, part, row_offsets, tape):
    """Apply sum_i K_i . K_i^+ with K_i acting on subsystem ``slot``."""
    pre = int(np.prod(dims[:slot])) if slot > 0 else 1
    post = int(np.prod(dims[slot + 1:])) if slot + 1 < len(dims) else 1
    d_in = dims[slot]
    embedded = [_embed(np.asarray(K), pre, post) for K in kraus_raw]
    out = embedded[0] @ state @ embedded[0].conj().T
    for K in embedded[1:]:
        out += K @ state @ K.conj().T
    out = (out + out.conj().T) / 2
    if tape is not None:
        tape.append(TapeLayer(part, embedded, list(row_offsets), d_out, d_in, pre, post, state))
    new_dims = dims[:slot] + (d_out,) + dims[slot + 1:]
    return out, new_dims


@dataclass
class LoccProtocol:
    """Structure of a fixed-round LOCC protocol (no parameters attached).

    ``state_dims`` are the coarse subsystem dimensions of the input state,
    including untouched spectator subsystems; ``agent_slots[x]`` is the index
    of agent x's (contiguous) block in that list.
    """

    scheme: Scheme
    n_agents: int
    state_dims: tuple[int, ...]
    agent_slots: tuple[int, ...]
    agent_dims_in: tuple[int, ...]
    agent_dims_out: tuple[int, ...]
    s_order: int
    t_order: int
    rounds: int = 1
    leader_order: tuple[int, ...] = ()
    follower_t_order: int = 1
    followers_identity: bool = False
    agent_t_orders: tuple[int, ...] = ()          # per-agent Kraus order (IPS/CMPS)
    cmps_keep_dims: tuple[tuple[int, ...], ...] = ()
    cmps_measured_dims: tuple[tuple[int, ...], ...] = ()
    part_roles: list[PartRole] = field(default_factory=list, repr=False)
    _part_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.state_dims = tuple(int(d) for d in self.state_dims)
        self.agent_slots = tuple(int(s) for s in self.agent_slots)
        self.agent_dims_in = tuple(int(d) for d in self.agent_dims_in)
        self.agent_dims_out = tuple(int(d) for d in self.agent_dims_out)
        n = self.n_agents
        if not (len(self.agent_slots) == len(self.agent_dims_in) == len(self.agent_dims_out) == n):
            raise ValueError("agent_slots/agent_dims_in/agent_dims_out must have one entry per agent")
        if len(set(self.agent_slots)) != n:
            raise ValueError("agent slots must be distinct")
        for x in range(n):
            if self.state_dims[self.agent_slots[x]] != self.agent_dims_in[x]:
                raise ValueError(
                    f"state_dims[{self.agent_slots[x]}] != agent {x} input dimension"
                )
        if not self.agent_t_orders:
            self.agent_t_orders = (self.t_order,) * n
        if self.scheme is Scheme.GENERAL_R_ROUND:
            if self.agent_dims_in != self.agent_dims_out:
                raise ValueError("the general scheme keeps local dimensions fixed")
            if not self.leader_order:
                self.leader_order = tuple(k % n for k in range(self.rounds))
            if len(self.leader_order) != self.rounds:
                raise ValueError("need one leader per round")
        if self.scheme is Scheme.CMPS:
            if len(self.cmps_keep_dims) != n or len(self.cmps_measured_dims) != n:
                raise ValueError("CMPS needs keep/measured dims per agent")
            for x in range(n):
                d = int(np.prod(self.cmps_keep_dims[x]) * np.prod(self.cmps_measured_dims[x]))
                if d != self.agent_dims_out[x]:
                    raise ValueError(f"agent {x}: keep x measured dims != output dimension")
        self._build_parts()

    # -- part registry ---------------------------------------------------

    def _build_parts(self):
        roles: list[PartRole] = []
        if self.scheme is Scheme.GENERAL_R_ROUND:
            s, t = self.s_order, self.t_order
            for k in range(1, self.rounds + 1):
                leader = self.leader_order[k - 1]
                d = self.agent_dims_in[leader]
                for prefix in iter_product(range(s), repeat=k - 1):
                    roles.append(PartRole("instrument", k, prefix, leader,
                                          InstrumentSpec(s, t, d, d)))
                if not self.followers_identity:
                    for prefix in iter_product(range(s), repeat=k):
                        for agent in range(self.n_agents):
                            if agent == leader:
                                continue
                            dj = self.agent_dims_in[agent]
                            roles.append(PartRole("channel", k, prefix, agent,
                                                  InstrumentSpec(1, self.follower_t_order, dj, dj)))
        elif self.scheme is Scheme.IPS:
            for x in range(self.n_agents):
                roles.append(PartRole("instrument", 0, (), x,
                                      InstrumentSpec(self.s_order, self.agent_t_orders[x],
                                                     self.agent_dims_in[x],
                                                     self.agent_dims_out[x])))
        else:  # CMPS
            for x in range(self.n_agents):
                roles.append(PartRole("channel", 0, (), x,
                                      InstrumentSpec(1, self.agent_t_orders[x],
                                                     self.agent_dims_in[x],
                                                     self.agent_dims_out[x])))
        self.part_roles = roles
        self._part_index = {
            (r.kind, r.round_index, r.prefix, r.agent): i for i, r in enumerate(roles)
        }

    def layout(self) -> list[tuple[int, int]]:
        """Stiefel factor shapes, in deterministic parameter order."""
        return [r.spec.stiefel_shape for r in self.part_roles]

    def manifold(self) -> ProductManifold:
        return ProductManifold(self.layout())

    def check_point(self, point):
        shapes = [np.asarray(x).shape for x in point]
        if shapes != self.layout():
            raise ValueError(f"point shapes {shapes} do not match layout {self.layout()}")

    def identity_point(self) -> list[np.ndarray]:
        """The no-op parameter point (first Kraus block = I, rest zero)."""
        parts = []
        for role in self.part_roles:
            n, p = role.spec.stiefel_shape
            if role.spec.dim_out != role.spec.dim_in:
                raise ValueError("identity point needs dim_out == dim_in for every part")
            x = np.zeros((n, p), dtype=complex)
            x[:p, :] = np.eye(p)
            parts.append(x)
        return parts

    def n_branches(self) -> int:
        if self.scheme is Scheme.GENERAL_R_ROUND:
            return self.s_order ** self.rounds
        if self.scheme is Scheme.IPS:
            return self.s_order ** self.n_agents
        return int(np.prod([max(int(np.prod(m)), 1) for m in self.cmps_measured_dims]))

    def outcome_lengths(self) -> int:
        return self.rounds if self.scheme is Scheme.GENERAL_R_ROUND else self.n_agents

    # -- Kraus helpers ---------------------------------------------------

    def _branch_kraus(self, x: np.ndarray, spec: InstrumentSpec, j: int):
        """Kraus blocks of outcome j plus their row offsets inside x."""
        d, t = spec.dim_out, spec.t_order
        offs = [(j * t + i) * d for i in range(t)]
        return [x[r0:r0 + d, :] for r0 in offs], offs

    # -- application -----------------------------------------------------

    def apply(self, point, rho_in: QState, with_tape: bool = False) -> list[BranchOutcome]:
        return apply_protocol(self, point, rho_in, with_tape=with_tape)

    def apply_selected(self, point, rho_in: QState, outcome_seq,
                       with_tape: bool = False) -> BranchOutcome:
        return apply_protocol(self, point, rho_in, selected=tuple(outcome_seq),
                              with_tape=with_tape)[0]

    def output_dims(self) -> tuple[int, ...]:
        dims = list(self.state_dims)
        for x in range(self.n_agents):
            dims[self.agent_slots[x]] = self.agent_dims_out[x]
        return tuple(dims)


def apply_protocol(protocol: LoccProtocol, point, rho_in: QState,
                   selected: tuple | None = None,
                   with_tape: bool = False) -> list[BranchOutcome]:
    """Enumerate outcome branches of the protocol on ``rho_in``.

    With ``selected`` only that outcome sequence is followed (the returned
    list has a single entry).  With ``with_tape`` every branch carries the
    layer tape needed for gradient backpropagation.
    """
    protocol.check_point(point)
    if tuple(rho_in.dims) != protocol.state_dims:
        raise ValueError(f"input dims {rho_in.dims} do not match protocol {protocol.state_dims}")
    point = [np.asarray(x) for x in point]
    branches: list[BranchOutcome] = []

    def emit(outcome, state, dims, tape):
        st = QState(state, dims, trace_normalized=False, validate=False)
        branches.append(BranchOutcome(tuple(outcome), st, float(np.real(np.trace(state))),
                                      tape if with_tape else None))

    if protocol.scheme is Scheme.GENERAL_R_ROUND:
        _apply_general(protocol, point, rho_in.data, selected, with_tape, emit)
    elif protocol.scheme is Scheme.IPS:
        _apply_ips(protocol, point, rho_in.data, selected, with_tape, emit)
    else:
        _apply_cmps(protocol, point, rho_in.data, selected, with_tape, emit)
    if selected is not None and len(branches) != 1:
        raise ValueError(f"outcome {selected} selected {len(branches)} branches")
    return branches


def apply_cmps(protocol: LoccProtocol, point, rho_in: QState,
               selected: tuple | None = None,
               with_tape: bool = False) -> list[BranchOutcome]:
    """CMPS application: per agent, the channel then the fixed projectors."""
    if protocol.scheme is not Scheme.CMPS:
        raise ValueError(f"protocol scheme is {protocol.scheme.value}, not cmps")
    return apply_protocol(protocol, point, rho_in, selected=selected, with_tape=with_tape)


def layout(protocol: LoccProtocol) -> list[tuple[int, int]]:
    """Stiefel factor shapes of the protocol, in parameter order."""
    return protocol.layout()


def _apply_general(pr: LoccProtocol, point, rho0, selected, with_tape, emit):
    dims0 = pr.state_dims

    def rec(k, prefix, state, dims, tape):
        if k > pr.rounds:
            emit(prefix, state, dims, tape)
            return
        leader = pr.leader_order[k - 1]
        idx = pr._part_index[("instrument", k, prefix, leader)]
        role = pr.part_roles[idx]
        outcomes = range(pr.s_order) if selected is None else (selected[k - 1],)
        for j in outcomes:
            kraus, offs = pr._branch_kraus(point[idx], role.spec, j)
            layers = list(tape) if with_tape else None
            st, dims1 = _apply_cp_layer(state, dims, pr.agent_slots[leader], kraus,
                                        role.spec.dim_out, idx, offs, layers)
            if not pr.followers_identity:
                for agent in range(pr.n_agents):
                    if agent == leader:
                        continue
                    cidx = pr._part_index[("channel", k, prefix + (j,), agent)]
                    crole = pr.part_roles[cidx]
                    ck, coffs = pr._branch_kraus(point[cidx], crole.spec, 0)
                    st, dims1 = _apply_cp_layer(st, dims1, pr.agent_slots[agent], ck,
                                                crole.spec.dim_out, cidx, coffs, layers)
            rec(k + 1, prefix + (j,), st, dims1, layers)

    rec(1, (), rho0, dims0, [] if with_tape else None)


def _apply_ips(pr: LoccProtocol, point, rho0, selected, with_tape, emit):
    def rec(x, outcome, state, dims, tape):
        if x == pr.n_agents:
            emit(outcome, state, dims, tape)
            return
        idx = pr._part_index[("instrument", 0, (), x)]
        role = pr.part_roles[idx]
        outcomes = range(pr.s_order) if selected is None else (selected[x],)
        for j in outcomes:
            kraus, offs = pr._branch_kraus(point[idx], role.spec, j)
            layers = list(tape) if with_tape else None
            st, dims1 = _apply_cp_layer(state, dims, pr.agent_slots[x], kraus,
                                        role.spec.dim_out, idx, offs, layers)
            rec(x + 1, outcome + (j,), st, dims1, layers)

    rec(0, (), rho0, pr.state_dims, [] if with_tape else None)


def _cmps_projectors(keep_dims, measured_dims) -> list[np.ndarray]:
    d_keep = int(np.prod(keep_dims))
    d_meas = int(np.prod(measured_dims))
    if d_meas == 1:
        return [np.eye(d_keep, dtype=complex)]
    projs = []
    for b in range(d_meas):
        e = ket(b, d_meas)
        projs.append(np.kron(np.eye(d_keep), np.outer(e, e.conj())))
    return projs


def _apply_cmps(pr: LoccProtocol, point, rho0, selected, with_tape, emit):
    projectors = [_cmps_projectors(pr.cmps_keep_dims[x], pr.cmps_measured_dims[x])
                  for x in range(pr.n_agents)]

    def rec(x, outcome, state, dims, tape):
        if x == pr.n_agents:
            emit(outcome, state, dims, tape)
            return
        idx = pr._part_index[("channel", 0, (), x)]
        role = pr.part_roles[idx]
        kraus, offs = pr._branch_kraus(point[idx], role.spec, 0)
        layers = list(tape) if with_tape else None
        st, dims1 = _apply_cp_layer(state, dims, pr.agent_slots[x], kraus,
                                    role.spec.dim_out, idx, offs, layers)
        outcomes = range(len(projectors[x])) if selected is None else (selected[x],)
        for b in outcomes:
            blayers = list(layers) if with_tape else None
            st2, dims2 = _apply_cp_layer(st, dims1, pr.agent_slots[x], [projectors[x][b]],
                                         role.spec.dim_out, None, [0], blayers)
            rec(x + 1, outcome + (b,), st2, dims2, blayers)

    rec(0, (), rho0, pr.state_dims, [] if with_tape else None)


# -- constructors ---------------------------------------------------------

def general_locc(n_agents: int, agent_dims, rounds: int, s_order: int, t_order: int,
                 follower_t_order: int = 1, followers_identity: bool = False,
                 leader_order=None, state_dims=None, agent_slots=None) -> LoccProtocol:
    agent_dims = tuple(int(d) for d in agent_dims)
    if state_dims is None:
        state_dims = agent_dims
        agent_slots = tuple(range(n_agents))
    return LoccProtocol(
        scheme=Scheme.GENERAL_R_ROUND, n_agents=n_agents,
        state_dims=tuple(state_dims), agent_slots=tuple(agent_slots),
        agent_dims_in=agent_dims, agent_dims_out=agent_dims,
        s_order=s_order, t_order=t_order, rounds=rounds,
        leader_order=tuple(leader_order) if leader_order else (),
        follower_t_order=follower_t_order, followers_identity=followers_identity,
    )


def ips(agent_dims_in, agent_dims_out=None, s_order: int = 2, t_orders=None,
        state_dims=None, agent_slots=None) -> LoccProtocol:
    agent_dims_in = tuple(int(d) for d in agent_dims_in)
    n = len(agent_dims_in)
    if agent_dims_out is None:
        agent_dims_out = agent_dims_in
    agent_dims_out = tuple(int(d) for d in agent_dims_out)
    if t_orders is None:
        t_orders = tuple(di * do for di, do in zip(agent_dims_in, agent_dims_out))
    elif isinstance(t_orders, int):
        t_orders = (t_orders,) * n
    if state_dims is None:
        state_dims = agent_dims_in
        agent_slots = tuple(range(n))
    return LoccProtocol(
        scheme=Scheme.IPS, n_agents=n,
        state_dims=tuple(state_dims), agent_slots=tuple(agent_slots),
        agent_dims_in=agent_dims_in, agent_dims_out=agent_dims_out,
        s_order=s_order, t_order=max(t_orders), agent_t_orders=tuple(t_orders),
    )


def cmps(keep_dims, measured_dims, t_order: int, state_dims=None, agent_slots=None) -> LoccProtocol:
    """CMPS protocol: per agent, its local space is keep x measured factors."""
    keep_dims = tuple(tuple(int(d) for d in k) for k in keep_dims)
    measured_dims = tuple(tuple(int(d) for d in m) for m in measured_dims)
    n = len(keep_dims)
    dims = tuple(int(np.prod(k) * np.prod(m)) for k, m in zip(keep_dims, measured_dims))
    if state_dims is None:
        state_dims = dims
        agent_slots = tuple(range(n))
    return LoccProtocol(
        scheme=Scheme.CMPS, n_agents=n,
        state_dims=tuple(state_dims), agent_slots=tuple(agent_slots),
        agent_dims_in=dims, agent_dims_out=dims,
        s_order=1, t_order=t_order, agent_t_orders=(t_order,) * n,
        cmps_keep_dims=keep_dims, cmps_measured_dims=measured_dims,
    )


# -- serialization --------------------------------------------------------

PROTOCOL_FORMAT = "loccforge-protocol"
PROTOCOL_VERSION = 1


def export_protocol(protocol: LoccProtocol, point, metadata: dict | None = None) -> dict:
    """Serializable document with the full structure and Kraus parameters."""
    protocol.check_point(point)
    doc = {
        "format": PROTOCOL_FORMAT,
        "version": PROTOCOL_VERSION,
        "scheme": protocol.scheme.value,
        "n_agents": protocol.n_agents,
        "state_dims": list(protocol.state_dims),
        "agent_slots": list(protocol.agent_slots),
        "agent_dims_in": list(protocol.agent_dims_in),
        "agent_dims_out": list(protocol.agent_dims_out),
        "s_order": protocol.s_order,
        "t_order": protocol.t_order,
        "rounds": protocol.rounds,
        "leader_order": list(protocol.leader_order),
        "follower_t_order": protocol.follower_t_order,
        "followers_identity": protocol.followers_identity,
        "agent_t_orders": list(protocol.agent_t_orders),
        "cmps_keep_dims": [list(k) for k in protocol.cmps_keep_dims],
        "cmps_measured_dims": [list(m) for m in protocol.cmps_measured_dims],
        "parts": [
            {
                "role": [r.kind, r.round_index, list(r.prefix), r.agent],
                "shape": list(np.asarray(x).shape),
                "re": np.real(x).tolist(),
                "im": np.imag(x).tolist(),
            }
            for r, x in zip(protocol.part_roles, point)
        ],
    }
    if metadata:
        doc["metadata"] = metadata
    return doc


def import_protocol(doc: dict) -> tuple[LoccProtocol, list[np.ndarray]]:
    if doc.get("format") != PROTOCOL_FORMAT:
        raise ValueError("not a loccforge protocol document")
    if doc.get("version") != PROTOCOL_VERSION:
        raise ValueError(f"unsupported protocol version {doc.get('version')}")
    protocol = LoccProtocol(
        scheme=Scheme(doc["scheme"]), n_agents=doc["n_agents"],
        state_dims=tuple(doc["state_dims"]), agent_slots=tuple(doc["agent_slots"]),
        agent_dims_in=tuple(doc["agent_dims_in"]), agent_dims_out=tuple(doc["agent_dims_out"]),
        s_order=doc["s_order"], t_order=doc["t_order"], rounds=doc["rounds"],
        leader_order=tuple(doc["leader_order"]), follower_t_order=doc["follower_t_order"],
        followers_identity=doc["followers_identity"],
        agent_t_orders=tuple(doc["agent_t_orders"]),
        cmps_keep_dims=tuple(tuple(k) for k in doc["cmps_keep_dims"]),
        cmps_measured_dims=tuple(tuple(m) for m in doc["cmps_measured_dims"]),
    )
    point = [np.array(p["re"]) + 1j * np.array(p["im"]) for p in doc["parts"]]
    protocol.check_point(point)
    return protocol, point


def write_protocol(path, protocol: LoccProtocol, point, metadata: dict | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(export_protocol(protocol, point, metadata), fh)


def read_protocol(path) -> tuple[LoccProtocol, list[np.ndarray]]:
    with open(path, encoding="utf-8") as fh:
        return import_protocol(json.load(fh))

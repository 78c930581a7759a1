"""Dense multipartite quantum states and the standard operations on them.

States are density matrices on a tensor product of subsystems.  The composite
index convention is row-major: the first subsystem is the most significant
index, so ``|i1 i2 ... in>`` maps to the flat index ``i1*d2*...*dn + ...``.
All entropies are in bits (base-2 logarithms).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HERMITICITY_TOL = 1e-10
PSD_TOL = 1e-9
TRACE_TOL = 1e-9
NORM_TOL = 1e-12
ENTROPY_EIG_FLOOR = 1e-12

_LOG2E = 1.0 / np.log(2.0)


def _as_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if any(d < 1 for d in dims):
        raise ValueError(f"subsystem dimensions must be >= 1, got {dims}")
    return dims


@dataclass(frozen=True)
class QState:
    """Density matrix on a list of subsystems.

    Parameters
    ----------
    data : ndarray
        D x D complex matrix, Hermitian and PSD within tolerance.
    dims : tuple of int
        Subsystem dimensions; their product must equal D.
    trace_normalized : bool
        If True the trace must be 1; unnormalized branch states set False.
    validate : bool
        Skip the (O(D^3)) invariant checks when False; used on hot paths
        where the invariants hold by construction.
    """

    data: np.ndarray
    dims: tuple[int, ...]
    trace_normalized: bool = True
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        dims = _as_dims(self.dims)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", dims)
        D = int(np.prod(dims))
        if data.shape != (D, D):
            raise ValueError(f"data shape {data.shape} does not match dims {dims}")
        if self.validate:
            herm = np.max(np.abs(data - data.conj().T))
            if herm > HERMITICITY_TOL:
                raise ValueError(f"state not Hermitian: max |rho - rho^+| = {herm:.3e}")
            min_eig = float(np.linalg.eigvalsh(data)[0])
            if min_eig < -PSD_TOL:
                raise ValueError(f"state not PSD: min eigenvalue = {min_eig:.3e}")
            if self.trace_normalized:
                tr = complex(np.trace(data))
                if abs(tr - 1.0) > TRACE_TOL:
                    raise ValueError(f"trace {tr} differs from 1 beyond tolerance")
        data.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def trace(self) -> float:
        return float(np.real(np.trace(self.data)))

    def regroup(self, dims) -> "QState":
        """Reinterpret the same matrix with a coarser/finer subsystem split."""
        dims = _as_dims(dims)
        if int(np.prod(dims)) != self.dim:
            raise ValueError(f"dims {dims} incompatible with dimension {self.dim}")
        return QState(self.data, dims, self.trace_normalized, validate=False)


@dataclass(frozen=True)
class PureState:
    """Normalized state vector with subsystem structure."""

    amp: np.ndarray
    dims: tuple[int, ...]

    def __post_init__(self):
        amp = np.asarray(self.amp, dtype=complex).reshape(-1)
        dims = _as_dims(self.dims)
        object.__setattr__(self, "amp", amp)
        object.__setattr__(self, "dims", dims)
        if amp.shape[0] != int(np.prod(dims)):
            raise ValueError(f"amplitude length {amp.shape[0]} does not match dims {dims}")
        nrm = np.linalg.norm(amp)
        if abs(nrm - 1.0) > NORM_TOL:
            raise ValueError(f"state vector norm {nrm} differs from 1 beyond 1e-12")
        amp.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.amp.shape[0]

    def density(self) -> QState:
        return QState(np.outer(self.amp, self.amp.conj()), self.dims, validate=False)

    def regroup(self, dims) -> "PureState":
        dims = _as_dims(dims)
        if int(np.prod(dims)) != self.dim:
            raise ValueError(f"dims {dims} incompatible with dimension {self.dim}")
        return PureState(self.amp, dims)


@dataclass(frozen=True)
class KrausSet:
    """Kraus operators of a completely positive, trace non-increasing map."""

    ops: tuple[np.ndarray, ...]

    def __post_init__(self):
        ops = tuple(np.asarray(K, dtype=complex) for K in self.ops)
        if not ops:
            raise ValueError("KrausSet needs at least one operator")
        shape = ops[0].shape
        if any(K.shape != shape for K in ops):
            raise ValueError("all Kraus operators must share one shape")
        object.__setattr__(self, "ops", ops)
        gram = sum(K.conj().T @ K for K in ops)
        top = float(np.linalg.eigvalsh(gram)[-1])
        if top > 1.0 + HERMITICITY_TOL:
            raise ValueError(f"sum K^+K exceeds identity: max eigenvalue {top:.12f}")
        for K in ops:
            K.setflags(write=False)

    @property
    def dim_in(self) -> int:
        return self.ops[0].shape[1]

    @property
    def dim_out(self) -> int:
        return self.ops[0].shape[0]

    def is_trace_preserving(self, tol: float = 1e-10) -> bool:
        gram = sum(K.conj().T @ K for K in self.ops)
        return bool(np.max(np.abs(gram - np.eye(self.dim_in))) <= tol)


def ket(index: int, dim: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[index] = 1.0
    return v


def tensor(a, b):
    """Kronecker product. QState x QState -> QState with concatenated dims;
    plain arrays compose to a plain array."""
    if isinstance(a, QState) and isinstance(b, QState):
        return QState(
            np.kron(a.data, b.data),
            a.dims + b.dims,
            a.trace_normalized and b.trace_normalized,
            validate=False,
        )
    if isinstance(a, PureState) and isinstance(b, PureState):
        return PureState(np.kron(a.amp, b.amp), a.dims + b.dims)
    return np.kron(np.asarray(a), np.asarray(b))


def partial_trace(rho: QState, keep) -> QState:
    """Trace out every subsystem not listed in ``keep`` (order preserved)."""
    keep = sorted(set(int(k) for k in keep))
    n = len(rho.dims)
    if any(k < 0 or k >= n for k in keep):
        raise IndexError(f"keep indices {keep} out of range for {n} subsystems")
    data = _partial_trace_raw(rho.data, rho.dims, keep)
    new_dims = tuple(rho.dims[k] for k in keep)
    return QState(data, new_dims, rho.trace_normalized, validate=False)


def _partial_trace_raw(data: np.ndarray, dims, keep) -> np.ndarray:
    dims = list(dims)
    n = len(dims)
    traced = [i for i in range(n) if i not in keep]
    t = data.reshape(dims + dims)
    offset = n
    for idx in sorted(traced, reverse=True):
        t = np.trace(t, axis1=idx, axis2=idx + offset)
        offset -= 1
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(d_keep, d_keep)


def permute_subsystems(rho: QState, perm) -> QState:
    """Reorder subsystems: output subsystem i is input subsystem perm[i]."""
    perm = [int(p) for p in perm]
    n = len(rho.dims)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    data = _permute_raw(rho.data, rho.dims, perm)
    return QState(data, tuple(rho.dims[p] for p in perm), rho.trace_normalized, validate=False)


def _permute_raw(data: np.ndarray, dims, perm) -> np.ndarray:
    dims = list(dims)
    n = len(dims)
    t = data.reshape(dims + dims)
    t = np.transpose(t, list(perm) + [n + p for p in perm])
    D = data.shape[0]
    return np.ascontiguousarray(t.reshape(D, D))


def embed_operator(op: np.ndarray, positions, dims) -> np.ndarray:
    """Pad ``op`` (acting on the listed subsystems, in that order) with
    identities and reorder to the full subsystem layout ``dims``."""
    dims = tuple(int(d) for d in dims)
    positions = [int(p) for p in positions]
    rest = [i for i in range(len(dims)) if i not in positions]
    rest_dim = int(np.prod([dims[i] for i in rest])) if rest else 1
    full = np.kron(op, np.eye(rest_dim))
    current = positions + rest
    perm = [current.index(i) for i in range(len(dims))]
    cur_dims = [dims[i] for i in current]
    return _permute_raw(full, cur_dims, perm)


def permute_pure(psi: PureState, perm) -> PureState:
    perm = [int(p) for p in perm]
    n = len(psi.dims)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    t = psi.amp.reshape(psi.dims).transpose(perm).reshape(-1)
    return PureState(t, tuple(psi.dims[p] for p in perm))


def max_entangled(n_parties: int, local_dim: int) -> PureState:
    """GHZ-type maximally entangled state (1/sqrt(d)) sum_i |i>^(x n)."""
    if n_parties < 2 or local_dim < 2:
        raise ValueError("need n_parties >= 2 and local_dim >= 2")
    amp = np.zeros(local_dim ** n_parties, dtype=complex)
    stride = sum(local_dim ** k for k in range(n_parties))
    for i in range(local_dim):
        amp[i * stride] = 1.0
    amp /= np.sqrt(local_dim)
    return PureState(amp, (local_dim,) * n_parties)


def _entropy_from_eigs(lam: np.ndarray) -> float:
    lam = lam[lam > ENTROPY_EIG_FLOOR]
    if lam.size == 0:
        return 0.0
    return float(-np.sum(lam * np.log2(lam)))


def von_neumann_entropy(rho) -> float:
    """S(rho) = -sum lam log2 lam over eigenvalues above the 1e-12 floor."""
    data = rho.data if isinstance(rho, QState) else np.asarray(rho)
    tr = np.real(np.trace(data))
    if abs(tr - 1.0) > 1e-8:
        raise ValueError(f"entropy requires a normalized state, trace = {tr}")
    return _entropy_from_eigs(np.linalg.eigvalsh(data))


def coherent_information(rho_ab: QState, cut: int) -> float:
    """I(A>B) = S(rho_B) - S(rho_AB); A is the first ``cut`` subsystems."""
    n = len(rho_ab.dims)
    if not 0 < cut < n:
        raise ValueError(f"cut {cut} must split the {n} subsystems in two")
    rho_b = partial_trace(rho_ab, range(cut, n))
    return von_neumann_entropy(rho_b) - von_neumann_entropy(rho_ab)


def conditional_entropy(psi_rab: PureState) -> float:
    """S(A|B) = S(rho_AB) - S(rho_B) of a tripartite pure state (R, A, B)."""
    if len(psi_rab.dims) != 3:
        raise ValueError("expected a tripartite pure state with dims (R, A, B)")
    rho_ab = partial_trace(psi_rab.density(), keep=(1, 2))
    rho_b = partial_trace(rho_ab, keep=(1,))
    return von_neumann_entropy(rho_ab) - von_neumann_entropy(rho_b)


def fidelity_to_pure(rho: QState, phi: PureState) -> float:
    """<phi| rho |phi>."""
    if rho.dim != phi.dim:
        raise ValueError(f"dimension mismatch: state {rho.dim}, target {phi.dim}")
    val = complex(phi.amp.conj() @ rho.data @ phi.amp)
    return float(np.real(val))


def haar_random_pure(dim: int, seed) -> PureState:
    """Haar-random state vector (normalized complex Ginibre column)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return PureState(v, (dim,))


def apply_kraus(kraus, rho):
    """sum_i K_i rho K_i^+ with the result re-symmetrized.

    Accepts a KrausSet or an iterable of matrices; QState in, QState out.
    """
    ops = kraus.ops if isinstance(kraus, KrausSet) else tuple(kraus)
    if isinstance(rho, QState):
        out = _apply_kraus_raw(ops, rho.data)
        d_out = ops[0].shape[0]
        dims = rho.dims if d_out == rho.dim else (d_out,)
        return QState(out, dims, rho.trace_normalized, validate=False)
    return _apply_kraus_raw(ops, np.asarray(rho, dtype=complex))


def _apply_kraus_raw(ops, data: np.ndarray) -> np.ndarray:
    out = ops[0] @ data @ ops[0].conj().T
    for K in ops[1:]:
        out += K @ data @ K.conj().T
    return (out + out.conj().T) / 2


def choi_state(kraus, dim_in: int) -> QState:
    """Normalized Choi state (id x E)(Phi+) of a channel on ``dim_in``."""
    phi = max_entangled(2, dim_in)
    rho = phi.density()
    ops = kraus.ops if isinstance(kraus, KrausSet) else tuple(kraus)
    eye = np.eye(dim_in)
    out = _apply_kraus_raw(tuple(np.kron(eye, K) for K in ops), rho.data)
    d_out = ops[0].shape[0]
    return QState(out, (dim_in, d_out), validate=False)

"""Complex Stiefel manifold geometry and product-manifold composition.

A point is a complex n x p matrix X with orthonormal columns (X^+ X = I).
Tangent vectors at X satisfy Z^+ X + X^+ Z = 0.  The metric is the real part
of the Euclidean inner product, <Z1, Z2> = Re Tr[Z1^+ Z2], and the retraction
is QR-based with the R factor forced to a positive real diagonal (which makes
Q unique and retract(X, U, 0) = X exact).
"""

from __future__ import annotations

import numpy as np

ORTHONORMALITY_TOL = 1e-10
TANGENCY_TOL = 1e-10


class RankDeficientStep(RuntimeError):
    """X + tU lost column rank; the step t is too large and must shrink."""


def qr_positive(a: np.ndarray) -> np.ndarray:
    """Q factor of the QR factorization with positive real diag(R)."""
    q, r = np.linalg.qr(a)
    d = np.diagonal(r)
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.min(np.abs(d)) < 1e-13 * scale:
        raise RankDeficientStep("matrix is numerically rank deficient")
    phase = d / np.abs(d)
    return q * phase.conj()


def random_point(n: int, p: int, seed) -> np.ndarray:
    """Haar point on St(n, p): sign-fixed QR of a complex Ginibre matrix."""
    if n < p or p < 1:
        raise ValueError(f"need n >= p >= 1, got ({n}, {p})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
    return qr_positive(g)


def project_tangent(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """U = V - X (X^+ V + V^+ X) / 2, the tangent-space projection at X."""
    if v.shape != x.shape:
        raise ValueError(f"shape mismatch: point {x.shape}, vector {v.shape}")
    xv = x.conj().T @ v
    return v - x @ ((xv + xv.conj().T) / 2)


def riemannian_gradient(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Project the ambient Euclidean gradient onto the tangent space at X.

    The ambient gradient convention is G = 2 df/dX*, so that the real
    directional derivative along a tangent Z equals Re Tr[G^+ Z].
    """
    return project_tangent(x, g)


def qr_retract(x: np.ndarray, u: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Move along U: the Q factor of X + tU (positive-diagonal convention)."""
    if u.shape != x.shape:
        raise ValueError(f"shape mismatch: point {x.shape}, vector {u.shape}")
    return qr_positive(x + t * u)


def inner(z1: np.ndarray, z2: np.ndarray) -> float:
    return float(np.real(np.vdot(z1, z2)))


def check_point(x: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> float:
    """Max-abs deviation of X^+ X from the identity (raises above tol)."""
    p = x.shape[1]
    dev = float(np.max(np.abs(x.conj().T @ x - np.eye(p))))
    if dev > tol:
        raise ValueError(f"not on the Stiefel manifold: |X^+X - I| = {dev:.3e}")
    return dev


def check_tangent(x: np.ndarray, z: np.ndarray, tol: float = TANGENCY_TOL) -> float:
    s = z.conj().T @ x
    dev = float(np.max(np.abs(s + s.conj().T)))
    if dev > tol:
        raise ValueError(f"not tangent: |Z^+X + X^+Z| = {dev:.3e}")
    return dev


class Stiefel:
    """St(n, p) with the operations the optimizer needs."""

    def __init__(self, n: int, p: int):
        if n < p or p < 1:
            raise ValueError(f"need n >= p >= 1, got ({n}, {p})")
        self.n = int(n)
        self.p = int(p)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.p)

    def random_point(self, seed) -> np.ndarray:
        return random_point(self.n, self.p, seed)

    project = staticmethod(project_tangent)
    gradient = staticmethod(riemannian_gradient)
    retract = staticmethod(qr_retract)
    inner = staticmethod(inner)

    def __repr__(self):
        return f"Stiefel({self.n}, {self.p})"

    def __eq__(self, other):
        return isinstance(other, Stiefel) and self.shape == other.shape


class ProductManifold:
    """Cartesian product of Stiefel factors; points are lists of matrices.

    All operations act componentwise; the inner product is the sum of the
    component inner products.
    """

    def __init__(self, factors):
        self.factors = [f if isinstance(f, Stiefel) else Stiefel(*f) for f in factors]
        if not self.factors:
            raise ValueError("product manifold needs at least one factor")

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [f.shape for f in self.factors]

    def __len__(self):
        return len(self.factors)

    def _check_parts(self, parts, what: str):
        if len(parts) != len(self.factors):
            raise ValueError(
                f"{what} has {len(parts)} parts, manifold has {len(self.factors)}"
            )

    def random_point(self, seed) -> list[np.ndarray]:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return [f.random_point(rng) for f in self.factors]

    def project(self, point, vector) -> list[np.ndarray]:
        self._check_parts(point, "point")
        self._check_parts(vector, "vector")
        return [project_tangent(x, v) for x, v in zip(point, vector)]

    gradient = project

    def retract(self, point, vector, t: float = 1.0) -> list[np.ndarray]:
        self._check_parts(point, "point")
        self._check_parts(vector, "vector")
        return [qr_retract(x, u, t) for x, u in zip(point, vector)]

    def inner(self, z1, z2) -> float:
        self._check_parts(z1, "vector")
        self._check_parts(z2, "vector")
        return sum(inner(a, b) for a, b in zip(z1, z2))

    def norm(self, z) -> float:
        return float(np.sqrt(max(self.inner(z, z), 0.0)))

    def check_point(self, point, tol: float = ORTHONORMALITY_TOL) -> float:
        self._check_parts(point, "point")
        return max(check_point(x, tol) for x in point)

    def zero_vector(self, point=None) -> list[np.ndarray]:
        return [np.zeros(f.shape, dtype=complex) for f in self.factors]

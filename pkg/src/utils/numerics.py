"""
Dense linear-algebra kernel for the spatial-filtering code.

All functions are pure: they depend only on their arguments (and explicit
seeds) and never mutate inputs.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Tuple

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-10
ORTHONORMAL_TOL = 1e-8
ROTATION_TOL = 1e-10
PD_RTOL = 1e-12
RIDGE_RTOL = 1e-10


class NumericsError(ValueError):
    """Raised when an input violates a kernel precondition"""


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues with column-matched eigenvectors"""
    values: np.ndarray
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def head(self, k: int) -> "EigenPairs":
        return EigenPairs(self.values[:k], self.vectors[:, :k])


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal basis of a k-dimensional subspace of R^ambient_dim"""
    columns: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim != 2:
            raise NumericsError(f"basis must be a 2-D array, got shape {cols.shape}")
        if cols.shape[1] > cols.shape[0]:
            raise NumericsError(
                f"subspace dimension {cols.shape[1]} exceeds ambient dimension {cols.shape[0]}"
            )
        if cols.shape[1] > 0:
            defect = np.abs(cols.T @ cols - np.eye(cols.shape[1])).max()
            if defect > ORTHONORMAL_TOL:
                raise NumericsError(f"columns are not orthonormal (defect {defect:.3e})")
        object.__setattr__(self, "columns", cols)

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]

    @classmethod
    def from_span(cls, vectors: np.ndarray) -> "OrthonormalBasis":
        """Orthonormalize the columns of `vectors`, keeping their order"""
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        if vectors.shape[1] == 0:
            return cls.empty(vectors.shape[0])
        q, _ = np.linalg.qr(vectors)
        return cls(q)

    @classmethod
    def empty(cls, ambient_dim: int) -> "OrthonormalBasis":
        return cls(np.zeros((ambient_dim, 0)))

    def projector(self) -> np.ndarray:
        return self.columns @ self.columns.T

    def complement(self) -> "OrthonormalBasis":
        """Orthonormal basis of the orthogonal complement"""
        if self.k == 0:
            return OrthonormalBasis(np.eye(self.ambient_dim))
        return OrthonormalBasis(linalg.null_space(self.columns.T))


def check_symmetric(S: np.ndarray, name: str = "matrix") -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NumericsError(f"{name} has non-finite entries")
    scale = max(np.abs(S).max(), 1.0)
    asym = np.abs(S - S.T).max()
    if asym > SYMMETRY_RTOL * scale:
        raise NumericsError(f"{name} is not symmetric (max |S - S^T| = {asym:.3e})")
    return S


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so that the largest-magnitude entry of each is positive"""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(S: np.ndarray,
            order: Literal["descending_value", "descending_abs_value"] = "descending_value"
            ) -> EigenPairs:
    """Eigendecomposition of a symmetric matrix with deterministic signs."""
    S = check_symmetric(S)
    values, vectors = linalg.eigh(symmetrize(S))
    if order == "descending_value":
        ix = np.argsort(-values, kind="stable")
    elif order == "descending_abs_value":
        ix = np.argsort(-np.abs(values), kind="stable")
    else:
        raise NumericsError(f"unknown eigenvalue order '{order}'")
    return EigenPairs(values[ix], _fix_signs(vectors[:, ix]))


def smallest_eigenvalue(S: np.ndarray) -> float:
    return float(linalg.eigh(symmetrize(S), eigvals_only=True, subset_by_index=[0, 0])[0])


def is_positive_definite(B: np.ndarray) -> Tuple[bool, float]:
    dim = B.shape[0]
    floor = PD_RTOL * np.trace(B) / dim
    smallest = smallest_eigenvalue(B)
    return smallest > floor and smallest > 0, smallest


def ridge_if_singular(B: np.ndarray) -> np.ndarray:
    """Add a ridge of 1e-10 * trace/dim when B is not numerically positive definite"""
    B = symmetrize(np.asarray(B, dtype=float))
    ok, smallest = is_positive_definite(B)
    if ok:
        return B
    dim = B.shape[0]
    ridge = RIDGE_RTOL * np.trace(B) / dim
    if ridge <= 0:
        raise NumericsError(f"cannot regularize a matrix with non-positive trace ({np.trace(B):.3e})")
    logger.debug(f"Adding ridge {ridge:.3e} to denominator (smallest eigenvalue {smallest:.3e})")
    return B + ridge * np.eye(dim)


def gen_sym_eig(A: np.ndarray, B: np.ndarray) -> EigenPairs:
    """
    Solve A w = lambda B w for symmetric A and positive definite B.

    B is whitened by its Cholesky factor and the resulting symmetric problem
    is solved with `sym_eig`. Eigenvalues come out descending and the
    eigenvectors are B-orthonormal.
    """
    A = check_symmetric(A, "A")
    B = check_symmetric(B, "B")
    if A.shape != B.shape:
        raise NumericsError(f"shape mismatch: A {A.shape} vs B {B.shape}")
    ok, smallest = is_positive_definite(B)
    if not ok:
        raise NumericsError(
            f"B is not positive definite (smallest eigenvalue {smallest:.6e})"
        )
    L = linalg.cholesky(symmetrize(B), lower=True)
    tmp = linalg.solve_triangular(L, symmetrize(A), lower=True)
    C = linalg.solve_triangular(L, tmp.T, lower=True)
    pairs = sym_eig(symmetrize(C), "descending_value")
    W = linalg.solve_triangular(L.T, pairs.vectors, lower=False)
    return EigenPairs(pairs.values, _fix_signs(W))


def orthogonality_defect(R: np.ndarray) -> float:
    return float(np.linalg.norm(R @ R.T - np.eye(R.shape[0])))


def expm_antisym(M: np.ndarray) -> np.ndarray:
    """Rotation matrix exp(M) of an antisymmetric generator M"""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericsError(f"generator must be square, got shape {M.shape}")
    scale = max(np.abs(M).max(), 1.0)
    defect = np.abs(M + M.T).max()
    if defect > SYMMETRY_RTOL * scale:
        raise NumericsError(f"generator is not antisymmetric (max |M + M^T| = {defect:.3e})")
    R = linalg.expm(M)
    if orthogonality_defect(R) > ROTATION_TOL:
        # snap to the nearest orthogonal matrix; det stays +1 for small corrections
        U, _, Vt = linalg.svd(R)
        R = U @ Vt
        logger.debug(f"Re-orthogonalized expm output (dim {M.shape[0]})")
    return R


def random_generator(dim: int, rng: np.random.Generator) -> np.ndarray:
    G = rng.standard_normal((dim, dim))
    return 0.5 * (G - G.T)


def rand_rotation(dim: int, seed) -> Tuple[np.ndarray, np.ndarray]:
    """Random rotation R = exp(M) with M = (G - G^T)/2, G iid standard normal"""
    if dim < 1:
        raise NumericsError(f"dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    M = random_generator(dim, rng)
    return expm_antisym(M), M


def perturb_rotation(M: np.ndarray, eta: float, seed) -> np.ndarray:
    """Rotation exp((M2 - M2^T)/2) with M2 = M + eta * Xi, Xi iid standard normal"""
    if eta < 0:
        raise NumericsError(f"perturbation weight must be non-negative, got {eta}")
    M = np.asarray(M, dtype=float)
    if eta == 0:
        return expm_antisym(M)
    rng = np.random.default_rng(seed)
    Xi = rng.standard_normal(M.shape)
    M2 = M + eta * Xi
    return expm_antisym(0.5 * (M2 - M2.T))


def _as_basis(U) -> OrthonormalBasis:
    return U if isinstance(U, OrthonormalBasis) else OrthonormalBasis(U)


def principal_angle_similarity(U, V) -> float:
    """Mean squared cosine of the principal angles between span(U) and span(V)"""
    U, V = _as_basis(U), _as_basis(V)
    if U.ambient_dim != V.ambient_dim:
        raise NumericsError(f"ambient dimensions differ: {U.ambient_dim} vs {V.ambient_dim}")
    k = min(U.k, V.k)
    if k == 0:
        raise NumericsError("similarity is undefined for an empty subspace")
    cosines = linalg.svd(U.columns.T @ V.columns, compute_uv=False)[:k]
    return float(np.clip(np.mean(cosines ** 2), 0.0, 1.0))


def principal_angles(U, V) -> np.ndarray:
    """Principal angles in radians, ascending"""
    U, V = _as_basis(U), _as_basis(V)
    cosines = linalg.svd(U.columns.T @ V.columns, compute_uv=False)[:min(U.k, V.k)]
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def project_out(X: np.ndarray, basis, as_covariance: bool = False) -> np.ndarray:
    """
    Deflate X by Q = I - B B^T.

    Data matrices are mapped to Q X, covariance matrices to Q S Q.
    """
    basis = _as_basis(basis)
    X = np.asarray(X, dtype=float)
    if X.shape[0] != basis.ambient_dim:
        raise NumericsError(f"ambient dimension mismatch: {X.shape[0]} vs {basis.ambient_dim}")
    if basis.k == 0:
        return X.copy()
    B = basis.columns
    QX = X - B @ (B.T @ X)
    if not as_covariance:
        return QX
    QSQ = QX - (QX @ B) @ B.T
    return symmetrize(QSQ)


def pca_no_mean(P: np.ndarray, nu: int) -> OrthonormalBasis:
    """Top-nu eigenvectors of P P^T (no centering)"""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    dim, m = P.shape
    if not 1 <= nu <= min(dim, m):
        raise NumericsError(f"nu must lie in [1, {min(dim, m)}], got {nu}")
    pairs = sym_eig(symmetrize(P @ P.T), "descending_value")
    return OrthonormalBasis(pairs.vectors[:, :nu])


def random_orthonormal(dim: int, k: int, rng: np.random.Generator) -> OrthonormalBasis:
    """Haar-distributed k-dimensional subspace (QR of a Gaussian matrix)"""
    q, r = np.linalg.qr(rng.standard_normal((dim, k)))
    return OrthonormalBasis(q * np.sign(np.diag(r)))


def tree_sum(stack: np.ndarray) -> np.ndarray:
    """Pairwise (tree) reduction along axis 0 with a fixed summation order"""
    stack = np.asarray(stack)
    if stack.shape[0] == 0:
        raise NumericsError("cannot reduce an empty stack")
    while stack.shape[0] > 1:
        n = stack.shape[0]
        half = n // 2
        paired = stack[:half] + stack[half:2 * half]
        stack = np.concatenate([paired, stack[2 * half:]], axis=0) if n % 2 else paired
    return stack[0]

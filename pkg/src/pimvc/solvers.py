"""Preconditioned CG and shift-invert block Lanczos for symmetric pencils."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConvergenceError, IndefiniteError, ParameterError
from .operator import SolveReport, SparseOperator

logger = logging.getLogger(__name__)

__all__ = [
    "CgConfig",
    "cg_solve",
    "EigenPair",
    "EigenReport",
    "smallest_eigenpairs",
    "min_ritz_value",
    "has_negative_ritz",
]


@dataclass(frozen=True)
class CgConfig:
    tol: float = 1e-10
    max_iter: int | None = None  # None -> 10 * dim
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ParameterError("tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ParameterError(f"unknown preconditioner {self.preconditioner!r}")


def _as_matrix(A):
    if isinstance(A, SparseOperator):
        return A.matrix
    if isinstance(A, np.ndarray) or sparse.issparse(A):
        return A
    raise ParameterError("A must be a SparseOperator, sparse matrix or ndarray")


def cg_solve(A, b, cfg: CgConfig = CgConfig(), x0=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``history`` holds relative residuals ``|b - A x_k| / |b|``;
        ``notes`` holds the energy ``x^T A x / 2 - b^T x`` per iteration,
        which CG decreases monotonically.

    Raises
    ------
    ConvergenceError
        ``max_iter`` reached before ``tol``.
    IndefiniteError
        Nonpositive or non-finite curvature ``p^T A p``.
    """
    M = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if M.shape != (n, n):
        raise ParameterError(f"dimension mismatch: A is {M.shape}, b has {n} entries")
    max_iter = cfg.max_iter or 10 * n
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        return np.zeros(n), SolveReport(np.zeros(n), 0, 0.0, history=[0.0], notes=[0.0])

    if cfg.preconditioner == "jacobi":
        d = np.asarray(M.diagonal(), dtype=float)
        if np.any(d <= 0):
            raise IndefiniteError("nonpositive diagonal entry; matrix is not SPD")
        inv_d = 1.0 / d
    else:
        inv_d = None

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - M @ x if x0 is not None else b.copy()
    z = r * inv_d if inv_d is not None else r.copy()
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / bnorm]
    energy = [0.5 * float(x @ (M @ x)) - float(b @ x)] if x0 is not None else [0.0]
    it = 0
    while history[-1] > cfg.tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations (residual {history[-1]:.3e})",
                history)
        Ap = M @ p
        curv = float(p @ Ap)
        if not (curv > 0 and math.isfinite(curv)):
            raise IndefiniteError(f"CG breakdown: p^T A p = {curv!r} at iteration {it}", history)
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        # energy drop of an exact line search along p
        energy.append(energy[-1] - 0.5 * alpha * rz)
        z = r * inv_d if inv_d is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(float(np.linalg.norm(r)) / bnorm)
    return x, SolveReport(x, it, history[-1], history=history, notes=energy)


# ---------------------------------------------------------------------------
# Eigenproblems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray
    residual: float  # |A v - lambda B v| / |B v|


@dataclass
class EigenReport:
    pairs: list
    mass_used: str  # "consistent" or "lumped"
    steps: int = 0
    inner_iterations: int = 0
    notes: list = field(default_factory=list)

    @property
    def values(self):
        return np.array([p.value for p in self.pairs])


class _BIndefinite(Exception):
    pass


def _b_orthonormalize(X, Bop, basis, B_basis):
    """B-orthogonalise the columns of ``X`` against ``basis`` and each other."""
    for _ in range(2):
        if basis is not None and basis.shape[1]:
            X = X - basis @ (B_basis.T @ X)
    BX = Bop(X)
    G = X.T @ BX
    G = 0.5 * (G + G.T)
    w, U = np.linalg.eigh(G)
    scale = max(abs(w).max(), 1e-300)
    if w.min() < -1e-10 * scale:
        raise _BIndefinite()
    keep = w > 1e-12 * scale
    if not keep.any():
        return X[:, :0], BX[:, :0]
    T = U[:, keep] / np.sqrt(w[keep])
    X = X @ T
    BX = BX @ T
    # one more pass for numerical orthogonality
    if basis is not None and basis.shape[1]:
        X = X - basis @ (B_basis.T @ X)
        BX = Bop(X)
    G = X.T @ BX
    L = np.linalg.cholesky(0.5 * (G + G.T))
    Linv = np.linalg.inv(L).T
    return X @ Linv, BX @ Linv


def _lanczos(Bop, solve, dim, m, tol, seed, block, max_steps):
    rng = np.random.default_rng(seed)
    Q, BQ = _b_orthonormalize(rng.standard_normal((dim, block)), Bop, None, None)
    basis = np.empty((dim, 0))
    B_basis = np.empty((dim, 0))
    images = np.empty((dim, 0))  # A^{-1} B q for every basis vector
    steps = 0
    while True:
        Q, BQ = Q[:, :dim - basis.shape[1]], BQ[:, :dim - basis.shape[1]]
        W = np.column_stack([solve(BQ[:, c]) for c in range(Q.shape[1])])
        steps += 1
        basis = np.hstack([basis, Q])
        B_basis = np.hstack([B_basis, BQ])
        images = np.hstack([images, W])
        # projected operator q_i^T B A^{-1} B q_j
        H = B_basis.T @ images
        H = 0.5 * (H + H.T)
        theta, S = np.linalg.eigh(H)
        if theta[0] < -1e-8 * abs(theta).max():
            # A is SPD, so a negative Ritz value means v^T B v < 0
            raise _BIndefinite()
        theta, S = theta[::-1], S[:, ::-1]
        full = basis.shape[1] >= dim
        if basis.shape[1] >= m:
            R = images @ S[:, :m] - basis @ (S[:, :m] * theta[:m])
            res = np.sqrt(np.maximum(np.einsum("ij,ij->j", R, Bop(R)), 0.0))
            if full or np.all(res <= tol * np.abs(theta[:m])):
                return theta[:m], basis @ S[:, :m], steps
        if steps >= max_steps:
            break
        Q, BQ = _b_orthonormalize(W, Bop, basis, B_basis)
        if Q.shape[1] == 0:
            # invariant subspace: continue from a fresh random block
            Q, BQ = _b_orthonormalize(rng.standard_normal((dim, block)), Bop, basis, B_basis)
            if Q.shape[1] == 0:
                break
    raise ConvergenceError(f"Lanczos stagnated after {steps} block steps")


def has_negative_ritz(B, steps=60, seed=0) -> bool:
    """Plain Lanczos on ``B``; a negative Ritz value proves ``B`` indefinite."""
    Bm = _as_matrix(B)
    dim = Bm.shape[0]
    steps = min(steps, dim)
    rng = np.random.default_rng(seed)
    Q = np.zeros((dim, steps))
    q = rng.standard_normal(dim)
    Q[:, 0] = q / np.linalg.norm(q)
    scale = 0.0
    for j in range(steps):
        w = Bm @ Q[:, j]
        for _ in range(2):
            w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        T = Q[:, :j + 1].T @ (Bm @ Q[:, :j + 1])
        ritz = np.linalg.eigvalsh(0.5 * (T + T.T))
        scale = max(scale, abs(ritz).max())
        if ritz[0] < -1e-12 * scale:
            return True
        nrm = np.linalg.norm(w)
        if j + 1 == steps or nrm <= 1e-14 * scale:
            break
        Q[:, j + 1] = w / nrm
    return False


def smallest_eigenpairs(A, B=None, m=6, tol=1e-8, seed=0, *, block=None, max_steps=None,
                        cg=None, residual_tol=None, mass="auto") -> EigenReport:
    """Smallest eigenpairs of ``A v = lambda B v`` by shift-invert block Lanczos.

    The Krylov space of ``A^{-1} B`` is built in the B-inner product with
    full reorthogonalisation; every application of ``A^{-1}`` is a Jacobi
    preconditioned CG solve at tolerance ``1e-2 * tol``. Ritz pairs are
    accepted when their residual in the shifted-inverse operator falls below
    ``tol`` relative to the Ritz value.

    With ``mass="auto"`` the consistent ``B`` is first probed by a short plain
    Lanczos run; if it shows a negative Ritz value, or a negative B-norm or
    Ritz value appears during the iteration, the row-sum lumped ``B`` is
    used instead and the report's ``mass_used`` says so.

    Returns
    -------
    EigenReport
        Pairs in ascending order with B-orthonormal vectors.
    """
    Am = _as_matrix(A)
    dim = Am.shape[0]
    if B is None:
        Bm = sparse.identity(dim, format="csr")
    else:
        Bm = _as_matrix(B)
    if Bm.shape != Am.shape:
        raise ParameterError("A and B must have the same shape")
    if not 1 <= m <= dim:
        raise ParameterError(f"m must lie in [1, {dim}]")
    if mass not in ("auto", "consistent", "lumped"):
        raise ParameterError(f"unknown mass policy {mass!r}")
    if np.any(Bm.diagonal() <= 0):
        raise ParameterError("B must have a positive diagonal")
    block = block or min(m, 4)
    max_steps = max_steps or max(20, 3 * dim // block)
    cg = cg or CgConfig(tol=max(1e-2 * tol, 1e-14))

    counter = {"iters": 0}
    dense = isinstance(Am, np.ndarray)

    def solve(rhs):
        if dense:
            return np.linalg.solve(Am, rhs)
        x, rep = cg_solve(Am, rhs, cg)
        counter["iters"] += rep.iterations
        return x

    notes = []
    mass_used = "consistent"

    def lump():
        lumped_m = sparse.diags(np.asarray(Bm.sum(axis=1)).ravel()).tocsr()
        if np.any(lumped_m.diagonal() <= 0):
            raise IndefiniteError("lumped mass has nonpositive entries")
        return lumped_m

    if mass == "lumped":
        Bm, mass_used = lump(), "lumped"
    elif mass == "auto" and B is not None and has_negative_ritz(Bm, seed=seed):
        notes.append("B has a negative Ritz value: switched to lumped (row-sum) mass")
        logger.warning(notes[-1])
        Bm, mass_used = lump(), "lumped"
    try:
        theta, X, steps = _lanczos(lambda X: Bm @ X, solve, dim, m, tol, seed, block, max_steps)
    except _BIndefinite:
        if mass != "auto" or mass_used == "lumped":
            raise IndefiniteError("B is indefinite")
        notes.append("B indefinite during Lanczos: switched to lumped (row-sum) mass")
        logger.warning(notes[-1])
        Bm, mass_used = lump(), "lumped"
        theta, X, steps = _lanczos(lambda X: Bm @ X, solve, dim, m, tol, seed, block, max_steps)

    pairs = []
    for c in range(len(theta)):
        v = X[:, c]
        Bv = Bm @ v
        v = v / math.sqrt(float(v @ Bv))
        Av, Bv = Am @ v, Bm @ v
        lam = float(v @ Av)  # Rayleigh quotient, v^T B v = 1
        res = float(np.linalg.norm(Av - lam * Bv) / np.linalg.norm(Bv))
        pairs.append(EigenPair(lam, v, res))
    pairs.sort(key=lambda p: p.value)
    limit = residual_tol if residual_tol is not None else None
    if limit is not None:
        bad = [p for p in pairs if p.residual > limit * max(1.0, abs(p.value))]
        if bad:
            raise ConvergenceError(f"{len(bad)} eigenpairs miss the residual bound {limit}")
    return EigenReport(pairs, mass_used, steps, counter["iters"], notes)


def is_positive_definite_dense(M) -> bool:
    try:
        np.linalg.cholesky(np.asarray(M))
    except np.linalg.LinAlgError:
        return False
    return True


def min_ritz_value(A, tol=1e-6, seed=0) -> float:
    """Smallest eigenvalue of SPD ``A`` via shift-invert Lanczos with ``B = I``.

    Any CG breakdown during the inner solves raises
    :class:`~pimvc.errors.IndefiniteError`, so a returned positive value is a
    practical certificate of positive definiteness.
    """
    dim = _as_matrix(A).shape[0]
    rep = smallest_eigenpairs(A, None, m=1, tol=tol, seed=seed, block=1 if dim < 8 else 2,
                              max_steps=max(40, dim))
    return rep.pairs[0].value

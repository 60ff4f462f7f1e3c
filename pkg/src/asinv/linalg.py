"""Sparse symmetric linear algebra: PCG, smallest generalized eigenpairs, M-orthonormalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class EigPairs:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns, M-orthonormal

    def __len__(self):
        return self.eigenvalues.size


def cg_solve(A, b, tol=1e-10, max_iter=None, preconditioner="jacobi", x0=None, return_info=False):
    """Preconditioned conjugate gradients for SPD ``A``.

    Stops once ``||b - A x|| <= tol * ||b||``; raises :class:`ConvergenceError` otherwise.
    """
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b has {b.shape[0]} entries")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    n = b.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        x[:] = 0.0
        return (x, 0) if return_info else x

    if preconditioner == "jacobi":
        dinv = 1.0 / A.diagonal()
    elif preconditioner in (None, "none"):
        dinv = np.ones(n)
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    r = b - A @ x
    target = tol * bnorm
    rnorm = np.linalg.norm(r)
    it = 0
    if rnorm <= target:
        return (x, it) if return_info else x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    while it < max_iter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # recursive residual drifts; confirm on the true one
            r = b - A @ x
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return (x, it) if return_info else x
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(
        f"CG did not converge in {max_iter} iterations (relative residual {rnorm / bnorm:.3e})",
        residual=rnorm / bnorm,
    )


def smallest_eigpairs(A, M, K, tol=1e-8) -> EigPairs:
    """The ``K`` algebraically smallest eigenpairs of ``A x = lam M x``.

    Shift-invert Lanczos about zero (ARPACK with a sparse LU of ``A``).
    Eigenvectors are M-normalized with the largest-magnitude entry positive.
    """
    A = sp.csc_matrix(A)
    M = sp.csc_matrix(M)
    n = A.shape[0]
    if K < 1 or K > n:
        raise ValueError(f"cannot compute {K} eigenpairs of a {n}-dimensional pencil")
    if K >= n - 1 or (K > n // 4 and n <= 6000):
        # ARPACK needs k < n; for a large share of a moderate spectrum a dense solve is cheaper
        from scipy.linalg import eigh

        lam, vec = eigh(A.toarray(), M.toarray(), subset_by_index=[0, K - 1])
    else:
        lu = spla.splu(A)
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        ncv = min(n, max(2 * K + 1, K + 32))
        v0 = np.ones(n) + 0.01 * np.cos(np.arange(n))
        try:
            lam, vec = spla.eigsh(
                A, k=K, M=M, sigma=0.0, which="LM", OPinv=op, tol=tol * 1e-2, ncv=ncv, v0=v0,
                maxiter=max(1000, 20 * n // ncv),
            )
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(lam, kind="stable")
    lam = lam[order]
    vec = vec[:, order]
    # M-normalize and fix signs for reproducible output
    mnorm = np.sqrt(np.einsum("ij,ij->j", vec, M @ vec))
    vec = vec / mnorm
    idx = np.argmax(np.abs(vec), axis=0)
    vec = vec * np.sign(vec[idx, np.arange(vec.shape[1])])
    vec = _reorthonormalize(vec, M)
    return EigPairs(lam, vec)


def _reorthonormalize(V, M):
    # Near-degenerate clusters come out of ARPACK orthogonal only to ~tol.
    G = V.T @ (M @ V)
    if np.max(np.abs(G - np.eye(G.shape[0]))) < 1e-12:
        return V
    L = np.linalg.cholesky(G)
    return np.linalg.solve(L, V.T).T


def eig_residuals(A, M, pairs: EigPairs) -> np.ndarray:
    """Scaled residuals ``||A phi - lam M phi|| / (max(1, lam) ||phi||_M)``."""
    V = pairs.eigenvectors
    R = A @ V - (M @ V) * pairs.eigenvalues
    return np.linalg.norm(R, axis=0) / np.maximum(1.0, np.abs(pairs.eigenvalues))


def mgs_orthonormalize(vectors, M, drop_tol=1e-8, basis=None, block=64):
    """Gram-Schmidt with reorthogonalization in the M-inner product.

    ``vectors`` are the columns of a 2-D array (or a sequence of 1-D arrays).
    A vector is dropped when its M-norm after orthogonalization falls below
    ``drop_tol`` times its original M-norm. If ``basis`` (already M-orthonormal
    columns) is given, new vectors are orthogonalized against it as well and only
    the accepted new columns are returned.

    Returns ``(Q, kept)``: orthonormal columns and the indices of accepted inputs.
    """
    V = np.asarray(vectors, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    elif not isinstance(vectors, np.ndarray):
        V = V.T
    n = V.shape[0]
    n_prior = 0 if basis is None else basis.shape[1]
    cap = n_prior + V.shape[1]
    # column-major so the leading block is contiguous
    Q = np.empty((n, cap), order="F")
    MQ = np.empty((n, cap), order="F")
    if n_prior:
        Q[:, :n_prior] = basis
        MQ[:, :n_prior] = (M @ basis).reshape(n, n_prior)
    k = n_prior
    kept = []
    norms0 = np.sqrt(np.maximum(np.einsum("ij,ij->j", V, M @ V), 0.0)) if V.size else np.zeros(0)
    for start in range(0, V.shape[1], block):
        # project the block against everything accepted so far (twice), then finish column by column
        B = V[:, start:start + block].copy()
        k_block = k
        for _ in range(2):
            B -= Q[:, :k_block] @ (MQ[:, :k_block].T @ B)
        for i in range(B.shape[1]):
            j = start + i
            if norms0[j] == 0.0:
                continue
            v = B[:, i]
            for _ in range(2):
                v -= Q[:, k_block:k] @ (MQ[:, k_block:k].T @ v)
            Mv = M @ v
            nrm = np.sqrt(max(v @ Mv, 0.0))
            if nrm < drop_tol * norms0[j]:
                continue
            Q[:, k] = v / nrm
            MQ[:, k] = Mv / nrm
            k += 1
            kept.append(j)
    Q = Q[:, n_prior:k].copy()
    return Q, kept

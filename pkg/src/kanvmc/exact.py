"""Exact ground states: dense diagonalization for small spaces, thick-restart
Lanczos with full reorthogonalization for sector spaces up to ~2*10^5 states,
plus model-state vectorization and fidelity.

The Lanczos basis is explicitly re-orthogonalized (two Gram-Schmidt passes
per step) and the projected matrix is taken from the actual projection
coefficients, which makes the thick restart bookkeeping-free: restarting
with the lowest Ritz vectors plus the running residual preserves the
recurrence automatically.  Correctness over speed; every returned pair is
verified against an explicit residual bound before it leaves this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .hamiltonian import HamiltonianModel, build_sector_matrix
from .spins import SectorBasis, bits_to_codes

DIM_GUARD = 1 << 20
DENSE_EIG_MAX = 4096


@dataclass(frozen=True)
class EdSolution:
    """Lowest eigenpairs over a sector basis (ascending, orthonormal, sign-fixed)."""

    basis: SectorBasis
    eigenvalues: np.ndarray      # (k,)
    eigenvectors: np.ndarray     # (dim, k) columns

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    for j in range(vectors.shape[1]):
        i = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[i, j] < 0:
            vectors[:, j] = -vectors[:, j]
    return vectors


def _h_norm_bound(h) -> float:
    """Row-sum bound on the spectral norm, valid for dense and CSR."""
    if sp.issparse(h):
        return float(np.abs(h).sum(axis=1).max())
    return float(np.abs(h).sum(axis=1).max())


def _lanczos_lowest(h, k: int, seed: int, tol_scaled: float,
                    m_max: int | None = None, max_matvecs: int = 40_000):
    """k lowest eigenpairs by thick-restart Lanczos with full reorthogonalization."""
    dim = h.shape[0]
    if m_max is None:
        m_max = int(min(dim, max(3 * k + 60, 120)))
    keep = int(min(max(2 * k + 4, k + 8), m_max - 20))
    rng = np.random.default_rng(seed)

    q_basis = np.empty((dim, m_max))
    t_proj = np.zeros((m_max, m_max))
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    q_basis[:, 0] = q

    n_active = 1
    matvecs = 0
    beta = 0.0
    w = None
    while matvecs < max_matvecs:
        # extend the basis up to m_max columns
        for j in range(n_active - 1, m_max):
            w = h @ q_basis[:, j]
            matvecs += 1
            coeff = q_basis[:, : j + 1].T @ w
            w -= q_basis[:, : j + 1] @ coeff
            extra = q_basis[:, : j + 1].T @ w
            w -= q_basis[:, : j + 1] @ extra
            coeff += extra
            t_proj[: j + 1, j] = coeff
            t_proj[j, : j + 1] = coeff
            beta = float(np.linalg.norm(w))
            n_active = j + 1

            if j + 1 >= k:
                theta, s_small = np.linalg.eigh(t_proj[: j + 1, : j + 1])
                resid = beta * np.abs(s_small[j, :k])
                if np.all(resid <= tol_scaled):
                    vecs = q_basis[:, : j + 1] @ s_small[:, :k]
                    return theta[:k], vecs

            if beta < 1e-13:
                # invariant subspace hit: restart the residual randomly
                w = rng.standard_normal(dim)
                w -= q_basis[:, : j + 1] @ (q_basis[:, : j + 1].T @ w)
                w -= q_basis[:, : j + 1] @ (q_basis[:, : j + 1].T @ w)
                beta = float(np.linalg.norm(w))
            if j + 1 < m_max:
                q_basis[:, j + 1] = w / beta

        # thick restart: lowest Ritz vectors plus the running residual
        theta, s_small = np.linalg.eigh(t_proj[:m_max, :m_max])
        q_basis[:, :keep] = q_basis[:, :m_max] @ s_small[:, :keep]
        t_proj[:] = 0.0
        t_proj[:keep, :keep] = np.diag(theta[:keep])
        q_basis[:, keep] = w / beta
        n_active = keep + 1
    raise RuntimeError(f"Lanczos did not converge within {max_matvecs} matvecs")


def ed_solve(m: HamiltonianModel, basis: SectorBasis, k: int = 1,
             tol: float = 1e-9, seed: int = 77) -> EdSolution:
    """k lowest eigenpairs of m over the basis.

    Dense solve for dim <= 4096, thick-restart Lanczos otherwise.  Residuals
    are checked against tol * ||H|| before returning.
    """
    dim = basis.size
    if dim > DIM_GUARD:
        raise ValueError(f"sector dimension {dim} exceeds the ED guard {DIM_GUARD}")
    if not 1 <= k <= dim:
        raise ValueError(f"need 1 <= k <= dim, got k={k}, dim={dim}")

    if dim <= DENSE_EIG_MAX:
        h = build_sector_matrix(m, basis, format="dense")
        evals, evecs = scipy.linalg.eigh(h, subset_by_index=[0, k - 1])
    else:
        # CSR keeps the Lanczos matvec cheap regardless of the public
        # dense-below-20k convention for build_sector_matrix
        h = build_sector_matrix(m, basis, format="sparse")
        evals, evecs = _lanczos_lowest(h, k, seed, tol_scaled=tol * _h_norm_bound(h))

    order = np.argsort(evals)
    evals = np.asarray(evals)[order]
    evecs = np.asarray(evecs)[:, order]
    # exact orthonormalization of the returned block (cheap at small k)
    evecs, _ = np.linalg.qr(evecs)
    evecs = _sign_fix(evecs)

    scale = _h_norm_bound(h)
    for j in range(k):
        v = evecs[:, j]
        lam = float(v @ (h @ v))
        evals[j] = lam
        resid = float(np.linalg.norm(h @ v - lam * v))
        if resid > tol * scale:
            raise RuntimeError(
                f"eigenpair {j} residual {resid:.3e} exceeds {tol:.1e} * ||H|| = {tol * scale:.3e}"
            )
    order = np.argsort(evals)
    return EdSolution(basis=basis, eigenvalues=evals[order], eigenvectors=evecs[:, order])


def model_vector(model, basis: SectorBasis) -> np.ndarray:
    """Normalized amplitude vector exp(log_psi - max) over the basis."""
    if basis.size > DIM_GUARD:
        raise ValueError(f"sector dimension {basis.size} exceeds the guard {DIM_GUARD}")
    logs = model.log_psi_batch(basis.bits())
    v = np.exp(logs - logs.max())
    return v / np.linalg.norm(v)


def fidelity(v: np.ndarray, sol: EdSolution, degenerate_tol: float = 1e-8) -> float:
    """Squared overlap with the ground space (summed over all eigenvectors
    within degenerate_tol of the lowest eigenvalue)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (sol.basis.size,):
        raise ValueError("vector dimension does not match the ED basis")
    ground = sol.eigenvalues <= sol.eigenvalues[0] + degenerate_tol
    overlaps = sol.eigenvectors[:, ground].T @ v
    return float((overlaps**2).sum() / (v @ v))


def exact_expectation(v: np.ndarray, basis: SectorBasis, operator) -> float:
    """<v|O|v> for a normalized vector; operator is a HamiltonianModel or a
    prebuilt (dense or sparse) matrix over the same basis."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (basis.size,):
        raise ValueError("vector dimension does not match the basis")
    if isinstance(operator, HamiltonianModel):
        fmt = "dense" if basis.size <= DENSE_EIG_MAX else "sparse"
        operator = build_sector_matrix(operator, basis, format=fmt)
    return float(v @ (operator @ v))


class TableModel:
    """Lookup-table log-amplitude 'model' built from a nonnegative basis vector.

    Gives the sampler and estimators an exact eigenstate to chew on: the
    local-energy variance of an eigenstate must vanish, making this the
    zero-variance oracle for estimator tests.
    """

    def __init__(self, basis: SectorBasis, vector: np.ndarray):
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (basis.size,):
            raise ValueError("vector dimension does not match the basis")
        i = int(np.argmax(np.abs(vector)))
        if vector[i] < 0:
            vector = -vector
        if vector.min() < -1e-10 * np.abs(vector).max():
            raise ValueError("table model requires a nonnegative amplitude vector")
        self.basis = basis
        self.L = basis.L
        self.reflected = False
        self._log_amp = np.log(np.maximum(vector, 1e-300))

    def log_psi_batch(self, bits: np.ndarray) -> np.ndarray:
        bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
        idx = self.basis.index_of(bits_to_codes(bits))
        return self._log_amp[idx]

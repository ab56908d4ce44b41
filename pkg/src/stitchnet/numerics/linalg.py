"""Singular value decomposition and Moore-Penrose pseudoinverse.

The SVD is a one-sided (Hestenes) Jacobi iteration carried out in float64;
tall inputs are first reduced to their triangular factor by Householder QR.
Columns are orthogonalized pairwise with plane rotations; each sweep visits
every column pair once using a round-robin tournament schedule so that the
k/2 rotations of a round touch disjoint columns and can be applied at once.

Sign convention: the first nonzero component of every left singular vector
is non-negative; the matching row of ``vt`` is flipped with it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericalError
from .tensor import Tensor

MAX_SWEEPS = 100
DEFAULT_RCOND = 1e-6


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray   # [n, r], orthonormal columns
    s: np.ndarray   # [r], non-increasing, >= 0
    vt: np.ndarray  # [r, k], orthonormal rows

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def _round_robin(k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint column pairs covering every pair exactly once."""
    m = k + (k % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < k and b < k:
                p.append(min(a, b))
                q.append(max(a, b))
        if p:
            rounds.append((np.array(p), np.array(q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: np.ndarray, have: np.ndarray) -> np.ndarray:
    """Fill the columns of ``u`` not flagged in ``have`` with an orthonormal complement."""
    n, r = u.shape
    basis = [u[:, j] for j in range(r) if have[j]]
    candidates = iter(np.eye(n))
    for j in range(r):
        if have[j]:
            continue
        for e in candidates:
            v = e.copy()
            for _ in range(2):  # re-orthogonalize once for stability
                for b in basis:
                    v -= (b @ v) * b
            norm = np.linalg.norm(v)
            if norm > 1e-8:
                v /= norm
                u[:, j] = v
                basis.append(v)
                break
    return u


def _jacobi_tall(a: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi on ``a`` with n >= k. Returns (u, s, v) unsorted."""
    n, k = a.shape
    # columns are kept as contiguous rows of wt / vt for cheap gathers
    wt = np.array(a.T, order="C", copy=True)
    vt = np.eye(k)
    rounds = _round_robin(k)
    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            wp, wq = wt[p], wt[q]
            alpha = np.einsum("ij,ij->i", wp, wp)
            beta = np.einsum("ij,ij->i", wq, wq)
            gamma = np.einsum("ij,ij->i", wp, wq)
            scale = np.sqrt(alpha * beta)
            active = (np.abs(gamma) > tol * scale) & (scale > 0)
            if not active.any():
                continue
            rotated = True
            zeta = np.where(active, (beta - alpha) / np.where(active, 2.0 * gamma, 1.0), 0.0)
            t = np.where(active, np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)), 0.0)
            t = np.where(active & (zeta == 0), 1.0, t)
            c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
            s = c * t[:, None]
            wt[p], wt[q] = c * wp - s * wq, s * wp + c * wq
            vp, vq = vt[p], vt[q]
            vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            return wt.T, np.linalg.norm(wt, axis=1), vt.T
    sv = np.linalg.norm(wt, axis=1)
    nz = sv[sv > 0]
    cond = float(nz.max() / nz.min()) if nz.size else float("nan")
    raise NumericalError(
        f"svd: Jacobi iteration did not converge in {MAX_SWEEPS} sweeps "
        f"(shape {a.shape}, max singular value {sv.max():.3e}, condition estimate {cond:.3e})"
    )


def householder_qr(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR of a tall matrix by Householder reflections: a = q @ r, q [n, k], r [k, k]."""
    n, k = a.shape
    r = a.copy()
    vs = []
    for j in range(k):
        x = r[j:, j]
        norm = np.linalg.norm(x)
        v = x.copy()
        v[0] += norm if x[0] >= 0 else -norm
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            vs.append(None)
            continue
        v /= vnorm
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        vs.append(v)
    q = np.eye(n, k)
    for j in reversed(range(k)):
        v = vs[j]
        if v is not None:
            q[j:, :] -= 2.0 * np.outer(v, v @ q[j:, :])
    return q, np.triu(r[:k, :])


def svd(a) -> SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vt`` computed in float64.

    ``u`` is [n, r], ``s`` is [r], ``vt`` is [r, k] with r = min(n, k).
    Raises :class:`NumericalError` if Jacobi sweeps exceed ``MAX_SWEEPS``.
    """
    arr = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ContractError(f"svd: expected a non-empty matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericalError("svd: input contains non-finite entries")

    transposed = arr.shape[0] < arr.shape[1]
    work = arr.T if transposed else arr
    n, k = work.shape
    tol = max(n, k) * np.finfo(np.float64).eps
    if n > 2 * k:
        # Jacobi on the k x k triangular factor; rotations commute with q
        q, r = householder_qr(work)
        w, sv, v = _jacobi_tall(r, tol)
        w = q @ w
    else:
        w, sv, v = _jacobi_tall(work, tol)

    order = np.argsort(-sv, kind="stable")
    sv = sv[order]
    w = w[:, order]
    v = v[:, order]
    # singular values below roundoff of the largest carry no direction
    floor = sv[0] * max(n, k) * np.finfo(np.float64).eps if sv[0] > 0 else 0.0
    have = sv > floor
    sv = np.where(have, sv, 0.0)
    u = np.zeros((n, k))
    u[:, have] = w[:, have] / sv[have]
    if not have.all():
        u = _complete_basis(u, have)

    for j in range(k):
        nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
        if nz.size and u[nz[0], j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]

    if transposed:
        # work = a.T = u s v.T  =>  a = v s u.T; re-apply the sign rule to the new left vectors
        u, v = v, u
        for j in range(k):
            nz = np.flatnonzero(np.abs(u[:, j]) > 1e-12)
            if nz.size and u[nz[0], j] < 0:
                u[:, j] = -u[:, j]
                v[:, j] = -v[:, j]
    return SvdResult(u=u, s=sv, vt=v.T.copy())


def pinv(a, rcond: float = DEFAULT_RCOND) -> Tensor:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values at or below ``rcond * s_max`` are treated as zero. The
    result keeps the input dtype; all arithmetic happens in float64.
    """
    if not rcond > 0:
        raise ContractError(f"pinv: rcond must be positive, got {rcond}")
    dtype = a.dtype if isinstance(a, Tensor) else np.asarray(a).dtype
    if dtype not in (np.float32, np.float64):
        dtype = np.float64
    res = svd(a)
    cutoff = rcond * (res.s[0] if res.s.size else 0.0)
    inv = np.zeros_like(res.s)
    keep = res.s > cutoff
    inv[keep] = 1.0 / res.s[keep]
    out = (res.vt.T * inv) @ res.u.T
    return Tensor(out.astype(dtype))


def lstsq(a, b, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Minimum-norm solution of min ||a @ m - b||_F, as float64."""
    a_pinv = pinv(np.asarray(a, dtype=np.float64), rcond).data
    return a_pinv @ np.asarray(b, dtype=np.float64)

"""Linearised covariance of the stacked weak-form residual ``vec(G W - B)``.

A perturbation ``E`` of the data moves ``B`` by ``-PhiDot Q E`` and ``G W`` by
``Phi Q (J E)`` to first order, where ``J`` is the state Jacobian of
``Theta(u) W`` at each grid point. With unit-variance i.i.d. noise the residual
covariance is ``L L^T`` for the stacked operator ``L``. Block ``(i, j)`` is::

    Phi diag(q^2 sum_k J_ik J_jk) Phi^T + Phi diag(q^2 J_ij) PhiDot^T
      + PhiDot diag(q^2 J_ji) Phi^T + [i == j] PhiDot diag(q^2) PhiDot^T

When every test function is the same bump shifted by one grid point, each
block is banded and the products reduce to short sliding-window sums; the
general route goes through a sparse ``L``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import sparse

from .models import ModelSpec, state_jacobian
from .weakform import TestFunctionBasis, quadrature_weights

__all__ = ["ResidualCovariance", "linearization"]


def linearization(model: ModelSpec, U: np.ndarray, W: np.ndarray, basis: TestFunctionBasis, Q) -> sparse.csr_matrix:
    """Sparse ``Kd x (M+1)d`` map from data perturbations to ``vec(GW - B)``."""
    q = quadrature_weights(Q)
    A = basis.Phi.multiply(q[None, :]).tocsr()
    Adot = basis.PhiDot.multiply(q[None, :]).tocsr()
    jac = state_jacobian(model, U, W)
    d = model.d
    blocks = []
    for i in range(d):
        row = []
        for k in range(d):
            col = jac[:, i, k]
            blk = A.multiply(col[None, :]) if np.any(col) else None
            if i == k:
                blk = Adot if blk is None else blk + Adot
            row.append(blk)
        blocks.append(row)
    shape_fix = [[None] * d for _ in range(d)]
    # bmat needs every block-row and block-column to have one defined block
    for i in range(d):
        shape_fix[i][i] = blocks[i][i]
    for i in range(d):
        for k in range(d):
            if blocks[i][k] is not None:
                shape_fix[i][k] = blocks[i][k]
    return sparse.bmat(shape_fix, format="csr")


def _shift_kernels(basis: TestFunctionBasis, n: int):
    """Bump and derivative windows if all rows are unit shifts of one another."""
    K = basis.K
    w = n - K + 1
    if w < 2:
        return None
    Phi = basis.Phi.toarray()
    Dot = basis.PhiDot.toarray()
    rows = np.arange(K)[:, None]
    idx = rows + np.arange(w)[None, :]
    pw, dw = Phi[rows, idx], Dot[rows, idx]
    a, ad = pw[0], dw[0]
    scale = max(np.abs(a).max(), 1e-300)
    dscale = max(np.abs(ad).max(), 1e-300)
    if not (
        np.allclose(pw, a[None, :], rtol=0, atol=1e-12 * scale)
        and np.allclose(dw, ad[None, :], rtol=0, atol=1e-12 * dscale)
        and np.allclose(np.abs(pw).sum(1), np.abs(Phi).sum(1), rtol=1e-12, atol=0)
        and np.allclose(np.abs(dw).sum(1), np.abs(Dot).sum(1), rtol=1e-12, atol=0)
    ):
        return None
    return a, ad


def _pair_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``out[s, o + w - 1] = x[s] * y[s - o]`` for lag ``o`` in ``(-w, w)``."""
    w = x.size
    out = np.zeros((w, 2 * w - 1))
    for oi in range(2 * w - 1):
        o = oi - (w - 1)
        s = np.arange(max(0, o), min(w, w + o))
        out[s, oi] = x[s] * y[s - o]
    return out


class ResidualCovariance:
    """Residual covariance ``C(W)`` for fixed data, test functions and quadrature.

    ``dense(W)`` returns the ``Kd x Kd`` matrix in stacked (state-major)
    order. When the basis is shift-invariant, ``banded(W)`` returns the lower
    band of the same matrix permuted to centre-major order (row ``k*d + i``),
    ready for a banded Cholesky; ``perm`` maps that order back to stacked rows.
    """

    def __init__(self, model: ModelSpec, U: np.ndarray, basis: TestFunctionBasis, Q, *, structured: bool = True):
        self.model = model
        self.U = np.asarray(U, dtype=float)
        self.basis = basis
        self.Q = Q
        q = quadrature_weights(Q)
        self.q2 = q**2
        self.K = basis.K
        self.d = model.d
        n = self.U.shape[0]
        kernels = _shift_kernels(basis, n) if structured else None
        self.structured = kernels is not None
        if not self.structured:
            return
        a, ad = kernels
        w = a.size
        self.w = w
        self._kernels = np.stack(
            [_pair_kernel(a, a), _pair_kernel(a, ad), _pair_kernel(ad, a), _pair_kernel(ad, ad)]
        )  # (4, w, 2w-1)
        K, d = self.K, self.d
        nlag = 2 * w - 1
        k, i, j, o = np.meshgrid(np.arange(K), np.arange(d), np.arange(d), np.arange(nlag), indexing="ij")
        l = k + o - (w - 1)
        ok = (l >= 0) & (l < K)
        self._src = np.flatnonzero(ok.ravel())
        kk, ii, jj, ll = k.ravel()[self._src], i.ravel()[self._src], j.ravel()[self._src], l.ravel()[self._src]
        self._dense_rows = ii * K + kk
        self._dense_cols = jj * K + ll
        p = kk * d + ii
        qq = ll * d + jj
        low = p >= qq
        self._band_src = self._src[low]
        self._band_rows = (p - qq)[low]
        self._band_cols = qq[low]
        self.bandwidth = (w - 1) * d + d - 1
        self.perm = (np.arange(K)[:, None] + K * np.arange(d)[None, :]).ravel()

    def _bands(self, W: np.ndarray) -> np.ndarray:
        jac = state_jacobian(self.model, self.U, W)  # (n, d, d)
        q2 = self.q2
        d, K, w = self.d, self.K, self.w
        jj = np.einsum("mik,mjk->mij", jac, jac)
        v = np.stack(
            [
                q2[:, None, None] * jj,
                q2[:, None, None] * jac,
                q2[:, None, None] * jac.transpose(0, 2, 1),
                q2[:, None, None] * np.eye(d)[None, :, :],
            ]
        )  # (4, n, d, d)
        win = sliding_window_view(v, w, axis=1)[:, :K]  # (4, K, d, d, w)
        return np.einsum("tkijs,tso->kijo", win, self._kernels, optimize=True)

    def dense(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W, dtype=float)
        if not self.structured:
            L = linearization(self.model, self.U, W, self.basis, self.Q)
            C = (L @ L.T).toarray()
            return 0.5 * (C + C.T)
        band = self._bands(W).ravel()
        n = self.K * self.d
        C = np.zeros((n, n))
        C[self._dense_rows, self._dense_cols] = band[self._src]
        return 0.5 * (C + C.T)

    def banded(self, W: np.ndarray) -> np.ndarray:
        if not self.structured:
            raise ValueError("banded form needs a shift-invariant test-function basis")
        band = self._bands(np.asarray(W, dtype=float)).ravel()
        ab = np.zeros((self.bandwidth + 1, self.K * self.d))
        ab[self._band_rows, self._band_cols] = band[self._band_src]
        return ab

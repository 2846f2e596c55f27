"""Eigenvalues of small dense matrices (n <= 4).

The primary route builds the characteristic polynomial with the
Faddeev-LeVerrier recursion and finds its roots by simultaneous Aberth
iteration followed by Newton polishing. Each root is then checked by the
smallest singular value of ``M - lambda I``.

:func:`qr_eigenvalues` is an independent route (LAPACK Hessenberg QR) used to
cross-check the first.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

MAX_DIM = 4


class EigenvalueConvergenceError(RuntimeError):
    pass


def characteristic_polynomial(M) -> np.ndarray:
    """Coefficients of ``det(lambda I - M)``, highest degree first (monic)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    A = np.zeros_like(M)
    eye = np.eye(n)
    for k in range(1, n + 1):
        A = M @ A + coeffs[k - 1] * eye
        coeffs[k] = -np.trace(M @ A) / k
    return coeffs


def _aberth(coeffs: np.ndarray, max_iter: int) -> np.ndarray:
    n = len(coeffs) - 1
    deriv = np.polyder(coeffs)
    abs_coeffs = np.abs(coeffs)
    eps = np.finfo(float).eps
    # Cauchy-type bound on root magnitudes sets the initial circle.
    radius = 1.0 + np.max(np.abs(coeffs[1:]))
    angles = 2 * np.pi * np.arange(n) / n + 0.4
    z = 0.5 * radius * np.exp(1j * angles)
    for _ in range(max_iter):
        pz = np.polyval(coeffs, z)
        # Stop once every residual is at the level of evaluation round-off.
        noise = 8 * n * eps * np.polyval(abs_coeffs, np.abs(z))
        if np.all(np.abs(pz) <= noise):
            return z
        dpz = np.polyval(deriv, z)
        safe = np.where(dpz != 0, dpz, 1.0)
        ratio = np.where(dpz != 0, pz / safe, 0.0)
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        repulsion = (1.0 / diff).sum(axis=1) - 1.0
        step = ratio / (1.0 - ratio * repulsion)
        z = z - step
        if np.all(np.abs(step) <= 4 * eps * np.maximum(1.0, np.abs(z))):
            return z
    raise EigenvalueConvergenceError(f"Aberth iteration did not converge in {max_iter} iterations")


def _polish(coeffs: np.ndarray, z: np.ndarray, steps: int = 3) -> np.ndarray:
    deriv = np.polyder(coeffs)
    for _ in range(steps):
        dpz = np.polyval(deriv, z)
        ok = np.abs(dpz) > 0
        new = z.copy()
        new[ok] = z[ok] - np.polyval(coeffs, z[ok]) / dpz[ok]
        # Near multiple roots Newton can wander; keep only improving steps.
        better = np.abs(np.polyval(coeffs, new)) < np.abs(np.polyval(coeffs, z))
        z = np.where(better, new, z)
    return z


def _sigma_min(M: np.ndarray, lam: complex) -> float:
    return np.linalg.svd(M - lam * np.eye(M.shape[0]), compute_uv=False)[-1]


def _merge_clusters(M: np.ndarray, coeffs: np.ndarray, z: np.ndarray,
                    radius: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Collapse tight root clusters onto a single multiple root.

    A k-fold eigenvalue splits into k polynomial roots spread by roughly
    eps**(1/k). It is a simple root of the (k-1)-th derivative of the
    polynomial, which is found by Newton iteration from the cluster mean.
    The merge is kept only if it lowers the singular-value residual.
    """
    n = len(z)
    labels = list(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            if abs(z[i] - z[j]) < radius:
                old, new = labels[j], labels[i]
                labels = [new if lab == old else lab for lab in labels]
    z = z.copy()
    merged = np.zeros(n, dtype=bool)
    for lab in set(labels):
        members = [i for i in range(n) if labels[i] == lab]
        if len(members) < 2:
            continue
        k = len(members)
        g = np.polyder(coeffs, k - 1)
        dg = np.polyder(g)
        centre = z[members].mean()
        for _ in range(8):
            slope = np.polyval(dg, centre)
            if slope == 0:
                break
            centre = centre - np.polyval(g, centre) / slope
        if _sigma_min(M, centre) < max(_sigma_min(M, z[i]) for i in members):
            z[members] = centre
            merged[members] = True
    return z, merged


def _pair_conjugates(z: np.ndarray, tol: float) -> np.ndarray:
    """Make the root set exactly closed under conjugation (real matrix)."""
    z = z.copy()
    z[np.abs(z.imag) <= tol] = z[np.abs(z.imag) <= tol].real
    upper = [i for i in range(len(z)) if z[i].imag > 0]
    lower = [i for i in range(len(z)) if z[i].imag < 0]
    if len(upper) == len(lower) and upper:
        cost = np.abs(z[upper][:, None] - np.conj(z[lower])[None, :])
        rows, cols = linear_sum_assignment(cost)
        for a, b in zip(rows, cols):
            i, j = upper[a], lower[b]
            mean = 0.5 * (z[i] + np.conj(z[j]))
            z[i], z[j] = mean, np.conj(mean)
    return z


def sort_eigenvalues(z) -> np.ndarray:
    """Descending real part, then ascending imaginary part."""
    z = np.asarray(z, dtype=complex)
    order = np.lexsort((z.imag, -z.real))
    return z[order]


def eigenvalues(M, *, max_iter: int = 500, verify_tol: float = 1e-7) -> np.ndarray:
    """All eigenvalues of a real square matrix of size at most 4.

    The matrix is scaled by its largest entry before the polynomial is formed,
    and the roots are scaled back afterwards.

    Raises
    ------
    ValueError
        For non-square, oversized or non-finite input.
    EigenvalueConvergenceError
        If root finding does not converge or a root fails the singular-value
        check ``sigma_min(M - lambda I) <= verify_tol * max(1, ||M||)``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    if n > MAX_DIM:
        raise ValueError(f"only matrices up to {MAX_DIM}x{MAX_DIM} are supported, got {n}x{n}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if n == 0:
        return np.empty(0, dtype=complex)
    scale = np.max(np.abs(M))
    if scale == 0:
        return np.zeros(n, dtype=complex)
    coeffs = characteristic_polynomial(M / scale)
    if n == 1:
        roots = np.array([-coeffs[1]], dtype=complex)
    else:
        roots, merged = _merge_clusters(M / scale, coeffs, _aberth(coeffs, max_iter))
        roots[~merged] = _polish(coeffs, roots[~merged])
    roots = _pair_conjugates(roots, 1e-12) * scale

    norm = max(1.0, np.linalg.norm(M, 2))
    shifted = M[None, :, :] - roots[:, None, None] * np.eye(n)[None, :, :]
    sigma_min = np.linalg.svd(shifted, compute_uv=False)[:, -1]
    bad = np.nonzero(sigma_min > verify_tol * norm)[0]
    if bad.size:
        k = int(bad[0])
        raise EigenvalueConvergenceError(
            f"root {roots[k]} fails verification: sigma_min(M - lambda I) = {sigma_min[k]:.3e}"
        )
    return sort_eigenvalues(roots)


def qr_eigenvalues(M) -> np.ndarray:
    """Independent route: LAPACK QR iteration on the Hessenberg form."""
    return sort_eigenvalues(np.linalg.eigvals(np.asarray(M, dtype=float)))


def max_mismatch(a, b) -> float:
    """Largest distance between two eigenvalue sets under optimal pairing."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("eigenvalue sets differ in size")
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())

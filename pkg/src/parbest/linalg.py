"""Hermitian linear-algebra primitives for the inner solvers.

Everything here is small and dense (dimensions of a few to ~8), so the
emphasis is on contract robustness, not scale: eigendecompositions are
LAPACK-backed, projections are exact in the eigenbasis, and multiplier
searches are plain bisections with explicit brackets.
"""

from typing import Callable, NamedTuple

import numpy as np

from .errors import BracketError, ContractError, DefinitenessError

HERMITIAN_ATOL = 1e-12


def hermitian(A: np.ndarray) -> np.ndarray:
    """Return the Hermitian part (A + A^H)/2 as a new array."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    return 0.5 * (A + A.conj().T)


def check_hermitian(A: np.ndarray, atol: float = HERMITIAN_ATOL) -> np.ndarray:
    """Validate ||A - A^H||_inf <= atol (scaled) and return A unchanged."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.abs(A).max()) if A.size else 0.0)
    dev = float(np.abs(A - A.conj().T).max()) if A.size else 0.0
    if dev > atol * scale:
        raise ContractError(f"matrix is not Hermitian: deviation {dev:.3e}")
    return A


class EigPair(NamedTuple):
    """Eigenvectors (columns of U) and real eigenvalues d, sorted descending."""

    U: np.ndarray
    d: np.ndarray


def hermitian_eig(A: np.ndarray) -> EigPair:
    """Eigendecomposition of a Hermitian matrix with descending eigenvalues.

    Raises ContractError if the input is not Hermitian to tolerance.
    """
    A = check_hermitian(A)
    d, U = np.linalg.eigh(hermitian(A))
    return EigPair(U[:, ::-1].copy(), d[::-1].copy())


def generalized_eig_pd(D1: np.ndarray, B: np.ndarray):
    """Generalized eigendecomposition of the pencil (D1, B) with B > 0.

    Returns (V, sigma) with D1 v_k = sigma_k B v_k, normalized so that
    V^H B V = I and V^H D1 V = diag(sigma); sigma is descending and
    clipped at 0 (D1 is assumed PSD).
    """
    D1 = check_hermitian(D1)
    B = check_hermitian(B)
    bev = np.linalg.eigvalsh(hermitian(B))
    if bev[0] <= 1e-12 * max(bev[-1], 0.0) or bev[0] <= 0.0:
        raise DefinitenessError(
            f"pencil base matrix is not positive definite (min eig {bev[0]:.3e})"
        )
    L = np.linalg.cholesky(hermitian(B))
    M = np.linalg.solve(L, np.linalg.solve(L, hermitian(D1)).conj().T).conj().T
    sig, Ut = np.linalg.eigh(hermitian(M))
    V = np.linalg.solve(L.conj().T, Ut)
    order = np.argsort(sig)[::-1]
    return V[:, order], np.clip(sig[order], 0.0, None)


def psd_project(X: np.ndarray) -> np.ndarray:
    """Projection onto the PSD cone: clip negative eigenvalues at zero."""
    U, d = hermitian_eig(X)
    if d.size and d[-1] >= 0.0:
        return hermitian(X)
    return hermitian((U * np.clip(d, 0.0, None)) @ U.conj().T)


def trace_budget_multiplier(
    shifted_matrix_fn: Callable[[float], np.ndarray],
    P: float,
    bracket: tuple = (0.0, 1.0),
    tol: float = 1e-10,
    maxit: int = 200,
):
    """Find mu* >= 0 with 0 <= mu* perp tr(fn(mu*)) - P <= 0 by bisection.

    `shifted_matrix_fn` must produce matrices whose trace is nonincreasing
    in mu. Returns (mu*, fn(mu*)). The upper bracket is doubled until it
    straddles; failure to straddle raises BracketError.
    """
    if P <= 0:
        raise ContractError("budget P must be positive")
    lo, hi = float(bracket[0]), float(bracket[1])
    M0 = shifted_matrix_fn(lo)
    if np.real(np.trace(M0)) <= P + 1e-8 * P:
        return lo, M0
    for _ in range(60):
        if np.real(np.trace(shifted_matrix_fn(hi))) <= P:
            break
        hi *= 2.0
    else:
        raise BracketError(f"trace at mu={hi:.3e} still exceeds budget {P}")
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        if np.real(np.trace(shifted_matrix_fn(mid))) > P:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    M = shifted_matrix_fn(hi)
    return hi, M


def nonneg_sum_project(v: np.ndarray, P: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p <= P}.

    Diagonal case of the trace-budget search: one code path with the
    matrix projection.
    """
    v = np.asarray(v, dtype=float)
    clipped = np.clip(v, 0.0, None)
    if clipped.sum() <= P:
        return clipped
    _, M = trace_budget_multiplier(
        lambda mu: np.diag(np.clip(v - mu, 0.0, None)), P,
        bracket=(0.0, max(float(v.max()), 1.0)),
    )
    return np.diag(M).copy()


def psd_trace_project(X: np.ndarray, P: float) -> np.ndarray:
    """Euclidean projection onto {X PSD, tr X <= P}."""
    U, d = hermitian_eig(X)
    x = nonneg_sum_project(d, P)
    return hermitian((U * x) @ U.conj().T)


def wf_scalar(a: float, b: float, c: float, d: float) -> float:
    """Closed-form maximizer over p >= 0 of a*log(1+b*p) + d*p - (c/2)*p^2.

    WF(a,b,c,d) = 0.5*[d/c - 1/b + sqrt((d/c + 1/b)^2 + 4a/c)]^+.

    Evaluated as the stable root of b*c*p^2 + (c - b*d)*p - (a*b + d);
    the textbook expression cancels catastrophically once c ~ 1e-8.
    """
    if b <= 0 or c <= 0:
        raise ContractError(f"wf_scalar needs b > 0 and c > 0, got b={b}, c={c}")
    if a < 0:
        raise ContractError(f"wf_scalar needs a >= 0, got a={a}")
    lin = c - b * d
    sq = np.sqrt((c + b * d) ** 2 + 4.0 * a * b * b * c)
    if lin <= 0:
        p = (-lin + sq) / (2.0 * b * c)
    else:
        p = 2.0 * (a * b + d) / (lin + sq)
    return max(p, 0.0)


def fd_gradient_check(
    fn: Callable[[np.ndarray], float],
    grad: np.ndarray,
    x: np.ndarray,
    h: float = 1e-6,
) -> float:
    """Max scaled error between `grad` and the central difference of `fn` at x.

    `fn` takes a real vector; `grad` is the analytic gradient at `x`. The
    error of component i is |fd_i - grad_i| / max(1, ||grad||_inf), so a
    return value of 1e-5 means five digits on the dominant scale.
    """
    x = np.asarray(x, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != x.shape:
        raise ContractError("gradient and point shapes differ")
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (fn(x + e) - fn(x - e)) / (2.0 * h)
    scale = max(1.0, float(np.abs(grad).max()) if grad.size else 0.0)
    return float(np.abs(fd - grad).max()) / scale if x.size else 0.0


def hermitian_to_composite(X: np.ndarray) -> np.ndarray:
    """Real-composite coordinates of a Hermitian matrix.

    Layout: diagonal (real), then Re of the strict upper triangle row by
    row, then Im of the same entries.
    """
    X = np.asarray(X)
    n = X.shape[0]
    iu = np.triu_indices(n, k=1)
    return np.concatenate([np.real(np.diag(X)), np.real(X[iu]), np.imag(X[iu])])


def composite_to_hermitian(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of hermitian_to_composite."""
    v = np.asarray(v, dtype=float)
    m = n * (n - 1) // 2
    X = np.diag(v[:n].astype(complex))
    iu = np.triu_indices(n, k=1)
    upper = v[n:n + m] + 1j * v[n + m:n + 2 * m]
    X[iu] = upper
    X[(iu[1], iu[0])] = upper.conj()
    return X


def hermitian_grad_composite(G: np.ndarray) -> np.ndarray:
    """Real-composite gradient matching hermitian_to_composite coordinates.

    For a real function of a Hermitian matrix with conjugate gradient G,
    the derivative w.r.t. an off-diagonal Re/Im coordinate carries a
    factor 2 (the coordinate moves two conjugate entries at once); the
    diagonal is unscaled.
    """
    G = np.asarray(G)
    n = G.shape[0]
    iu = np.triu_indices(n, k=1)
    return np.concatenate([
        np.real(np.diag(G)),
        2.0 * np.real(G[iu]),
        2.0 * np.imag(G[iu]),
    ])

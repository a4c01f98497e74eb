"""Small dense matrix kernels.

Matrix exponentials, resolvent solves, block assembly for nested
convolution integrals and an adaptive quadrature wrapper.  Nothing here
knows about phase-type distributions; the modules above only hand in
arrays.
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.integrate
import scipy.linalg
from scipy.linalg import lapack

from .errors import QuadratureError, SingularMatrixError

#: reciprocal condition numbers below this are treated as singular
RCOND_THRESHOLD = 1e-12


def as_matrix(A, name="matrix"):
    """Return ``A`` as a finite 2-d float array or raise ``ValueError``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-d array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def _square(A, name="matrix"):
    A = as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def expm(A, t=1.0):
    """Return ``exp(A t)``.

    Uses scaling and squaring with a degree-13 Pade approximant
    (``scipy.linalg.expm``).  ``t = 0`` returns the identity exactly.
    """
    A = _square(A)
    t = float(t)
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"t must be a finite non-negative number, got {t}")
    if t == 0.0:
        return np.eye(A.shape[0])
    out = scipy.linalg.expm(A * t)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("matrix exponential overflowed")
    return out


def solve_neg(A, B):
    """Solve ``(-A) X = B`` by LU factorisation with partial pivoting.

    Raises :class:`SingularMatrixError` when the estimated reciprocal
    1-norm condition number of ``-A`` is below :data:`RCOND_THRESHOLD`.
    ``B`` may be a vector or a matrix; the result has the same shape.
    """
    A = _square(A)
    B = np.asarray(B, dtype=float)
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
    negA = -A
    anorm = np.linalg.norm(negA, 1)
    if anorm == 0.0:
        raise SingularMatrixError("matrix is zero")
    lu, piv, info = lapack.dgetrf(negA)
    if info > 0:
        raise SingularMatrixError("matrix is exactly singular")
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    if rcond < RCOND_THRESHOLD:
        raise SingularMatrixError(f"matrix is near-singular (rcond={rcond:.3e})")
    X, info = lapack.dgetrs(lu, piv, B)
    return X


def block_upper_bidiagonal(diag_blocks, super_blocks):
    """Assemble a block upper-bidiagonal matrix.

    ``diag_blocks`` holds ``k`` square ``m x m`` blocks and ``super_blocks``
    the ``k - 1`` blocks of the first superdiagonal.
    """
    diag_blocks = [_square(D, "diagonal block") for D in diag_blocks]
    super_blocks = [as_matrix(E, "superdiagonal block") for E in super_blocks]
    k = len(diag_blocks)
    if k < 1:
        raise ValueError("need at least one diagonal block")
    if len(super_blocks) != k - 1:
        raise ValueError(f"need {k - 1} superdiagonal blocks, got {len(super_blocks)}")
    m = diag_blocks[0].shape[0]
    for blk in diag_blocks + super_blocks:
        if blk.shape != (m, m):
            raise ValueError(f"block of shape {blk.shape} does not match {(m, m)}")
    out = np.zeros((k * m, k * m))
    for i, D in enumerate(diag_blocks):
        out[i * m:(i + 1) * m, i * m:(i + 1) * m] = D
    for i, E in enumerate(super_blocks):
        out[i * m:(i + 1) * m, (i + 1) * m:(i + 2) * m] = E
    return out


def carbonell_block(diag_blocks, super_blocks, s, i):
    """Block ``(1, i)`` of ``exp(A s)`` for a block upper-bidiagonal ``A``.

    This equals the nested convolution integral

        int e^{A11 u1} A12 e^{A22 u2} ... A(i-1)i e^{Aii (s - u1 - ... - u(i-1))} du

    over the simplex ``u1 + ... + u(i-1) <= s``.  ``i`` is 1-based and
    must satisfy ``2 <= i <= k``.
    """
    k = len(diag_blocks)
    if not 2 <= i <= k:
        raise IndexError(f"block index i={i} outside 2..{k}")
    A = block_upper_bidiagonal(diag_blocks, super_blocks)
    m = A.shape[0] // k
    return expm(A, s)[:m, (i - 1) * m:i * m]


def upper_right_block(E, rows, cols):
    """Top-right ``rows x cols`` corner of a square matrix."""
    return E[:rows, E.shape[1] - cols:]


def quadrature(f, a, b, tol=1e-10, breakpoints=(), limit=500):
    """Adaptive Gauss-Kronrod integral of ``f`` over ``[a, b]``.

    ``breakpoints`` inside ``(a, b)`` are passed to the integrator so jumps
    in ``f`` sit on subinterval boundaries.  Raises
    :class:`QuadratureError` if the absolute error estimate cannot be
    pushed below ``tol``.
    """
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("integration limits must be finite; truncate the tail first")
    if b < a:
        raise ValueError(f"need a <= b, got [{a}, {b}]")
    if a == b:
        return 0.0
    pts = sorted({float(p) for p in breakpoints if a < p < b})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
        value, err, info, *rest = scipy.integrate.quad(
            f, a, b, epsabs=tol, epsrel=0.0, limit=limit,
            points=pts or None, full_output=1,
        )
    if not np.isfinite(value) or err > tol:
        msg = rest[0] if rest else ""
        raise QuadratureError(
            f"no convergence on [{a}, {b}]: estimate {value!r}, error {err:.3e} > {tol:.3e}. {msg}"
        )
    return float(value)


def decay_rate(A):
    """Slowest exponential decay rate ``-max Re(eig(A))`` of a stable matrix."""
    eig = np.linalg.eigvals(_square(A))
    rate = -float(np.max(eig.real))
    if rate <= 0:
        raise ValueError("matrix is not stable (eigenvalue with non-negative real part)")
    return rate


def truncation_point(A, alpha, tol=1e-14):
    """Smallest doubling of an eigenvalue-based guess with ``alpha e^{Ax} 1 <= tol``.

    Used to replace infinite upper limits in oracle integrals.
    """
    A = _square(A)
    alpha = np.asarray(alpha, dtype=float)
    one = np.ones(A.shape[0])
    x = np.log(1.0 / tol) / decay_rate(A)
    while abs(alpha @ expm(A, x) @ one) > tol:
        x *= 2.0
    return x

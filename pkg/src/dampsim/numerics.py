"""Complex Hermitian matrix primitives shared by the numerical modules.

All determinant ratios downstream are formed as differences of
log-determinants: at many antennas the raw ratio |R + S| / |S| spans
hundreds of orders of magnitude and overflows double precision.
"""

import numpy as np
import scipy.linalg


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorization failed: the input is not positive-definite."""


def symmetrize(a):
    """Return the Hermitian part (A + A^H) / 2.

    Applied after updates that can accumulate asymmetry (e.g. the empirical
    AMP state) to keep downstream factorizations stable.
    """
    a = np.asarray(a)
    return 0.5 * (a + np.conj(np.swapaxes(a, -2, -1)))


def is_hermitian(a, tol=1e-12):
    a = np.asarray(a)
    return bool(np.max(np.abs(a - np.conj(a.T))) <= tol)


def cholesky_lower(a):
    """Lower Cholesky factor of a Hermitian positive-definite matrix."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            f"matrix of dim {np.asarray(a).shape[-1]} is not positive-definite"
        ) from exc


def hermitian_inverse(a):
    """Inverse of a Hermitian positive-definite matrix via Cholesky.

    Raises NotPositiveDefiniteError when factorization fails.
    """
    a = np.asarray(a)
    lower = cholesky_lower(a)
    eye = np.eye(a.shape[-1], dtype=complex)
    inv = scipy.linalg.cho_solve((lower, True), eye, check_finite=False)
    return symmetrize(inv)


def logdet(a):
    """Natural-log determinant of a Hermitian positive-definite matrix.

    Computed from the Cholesky diagonal, never from the raw determinant.
    """
    lower = cholesky_lower(a)
    return 2.0 * float(np.sum(np.log(np.real(np.diagonal(lower)))))


def covariance_factor(r, floor=0.0):
    """Factor A with A @ A^H = R for Hermitian PSD R (eigen square root).

    Handles rank-deficient R; eigenvalues below ``floor`` are clipped.
    """
    r = np.asarray(r, dtype=complex)
    w, v = np.linalg.eigh(symmetrize(r))
    w = np.maximum(w, floor)
    return v * np.sqrt(w)[..., None, :]


def complex_normal(rng, shape):
    """Circularly-symmetric standard complex Gaussian draws, CN(0, 1)."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def sample_gaussian(r, rng):
    """Draw from CN(0, R) for Hermitian PSD R (rank deficiency allowed)."""
    r = np.asarray(r, dtype=complex)
    factor = covariance_factor(r)
    z = complex_normal(rng, r.shape[-1])
    return factor @ z

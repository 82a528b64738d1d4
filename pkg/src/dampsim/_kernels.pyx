"""Compiled hot kernels for the per-AP AMP recursion (i.i.d. Rayleigh path).

Same API as the NumPy fallback ``dampsim._kernels_np``; big matrix products
go through BLAS zgemm, the per-device denoiser runs in tight C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log1p
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()

BACKEND_NAME = "compiled"

LOGLR_CLAMP = 700.0

cdef double _CLAMP = 700.0

ctypedef double complex zdouble


cdef inline double _theta_c(double loglr, double eps) noexcept nogil:
    cdef double lc = loglr
    if lc > _CLAMP:
        lc = _CLAMP
    elif lc < -_CLAMP:
        lc = -_CLAMP
    return 1.0 / (1.0 + (1.0 - eps) / eps * exp(lc))


cdef inline void _rm_zgemm(zdouble* a, zdouble* b, zdouble* c,
                           int m, int k, int n,
                           zdouble alpha, zdouble beta) noexcept nogil:
    # Row-major C (m,n) = alpha * A (m,k) @ B (k,n) + beta * C, expressed as
    # the column-major product C^T = B^T A^T.
    zgemm("N", "N", &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef double _phase_a_core(zdouble* z, zdouble* xhat, zdouble* phis_h,
                          double* rho, zdouble* xi, double* loglr,
                          int pilot_len, int num_antennas, int num_served) noexcept nogil:
    cdef int i, n, m
    cdef double re, im, acc = 0.0, q, r, tau
    cdef zdouble one = 1.0
    for i in range(pilot_len * num_antennas):
        re = z[i].real
        im = z[i].imag
        acc += re * re + im * im
    tau = acc / (pilot_len * num_antennas)
    if num_served > 0:
        memcpy(xi, xhat, num_served * num_antennas * sizeof(zdouble))
        _rm_zgemm(phis_h, z, xi, num_served, pilot_len, num_antennas, one, one)
    if tau <= 0.0:
        return tau
    for n in range(num_served):
        q = 0.0
        for m in range(num_antennas):
            re = xi[n * num_antennas + m].real
            im = xi[n * num_antennas + m].imag
            q += re * re + im * im
        r = rho[n]
        loglr[n] = num_antennas * log1p(r / tau) - r * q / (tau * (r + tau))
    return tau


cdef void _phase_b_core(zdouble* y, zdouble* z, zdouble* phis, zdouble* xi,
                        double* theta_loglr, double* rho, double* eps,
                        double tau, int num_devices,
                        zdouble* z_new, zdouble* xhat_new, zdouble* u,
                        int pilot_len, int num_antennas, int num_served) noexcept nogil:
    cdef int n, i, j
    cdef double th, ps, om, gain, coeff, diag = 0.0
    cdef zdouble one = 1.0, minus = -1.0, scale
    for i in range(num_antennas * num_antennas):
        u[i] = 0.0
    for n in range(num_served):
        th = _theta_c(theta_loglr[n], eps[n])
        ps = rho[n] / (rho[n] + tau)
        om = rho[n] / (tau * (rho[n] + tau))
        gain = th * ps
        for i in range(num_antennas):
            xhat_new[n * num_antennas + i] = gain * xi[n * num_antennas + i]
        diag += gain
        coeff = gain * (1.0 - th) * om
        # accumulates the TRANSPOSED Jacobian sum (conj(xi_i) xi_j): the
        # residual correction Z @ U^T keeps the recursion equivariant
        # under unitary antenna rotations
        for i in range(num_antennas):
            for j in range(num_antennas):
                u[i * num_antennas + j] = u[i * num_antennas + j] + (
                    coeff * xi[n * num_antennas + i].conjugate()
                    * xi[n * num_antennas + j])
    for i in range(num_antennas):
        u[i * num_antennas + i] = u[i * num_antennas + i] + diag
    for i in range(num_antennas * num_antennas):
        u[i] = u[i] / num_devices
    memcpy(z_new, y, pilot_len * num_antennas * sizeof(zdouble))
    if num_served > 0:
        _rm_zgemm(phis, xhat_new, z_new, pilot_len, num_served, num_antennas,
                  minus, one)
    scale = num_devices / <double>pilot_len
    _rm_zgemm(z, u, z_new, pilot_len, num_antennas, num_antennas, scale, one)


def theta_from_loglr(loglr, eps):
    """Activity posterior theta = 1 / (1 + (1-eps)/eps * exp(loglr))."""
    loglr_arr = np.ascontiguousarray(np.atleast_1d(loglr), dtype=np.float64)
    eps_arr = np.ascontiguousarray(
        np.broadcast_to(eps, loglr_arr.shape), dtype=np.float64)
    out = np.empty_like(loglr_arr)
    cdef double[::1] lv = loglr_arr.ravel()
    cdef double[::1] ev = eps_arr.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i
    for i in range(lv.shape[0]):
        ov[i] = _theta_c(lv[i], ev[i])
    if np.isscalar(loglr) or np.asarray(loglr).ndim == 0:
        return float(out.ravel()[0])
    return out


def phase_a_iid(z, xhat, phis_h, rho):
    """Effective observations and local log-LRs for one AP iteration."""
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] z_c = np.ascontiguousarray(z, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xhat_c = np.ascontiguousarray(xhat, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] phis_h_c = np.ascontiguousarray(phis_h, dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=1, mode="c"] rho_c = np.ascontiguousarray(rho, dtype=np.float64)
    cdef int pilot_len = z_c.shape[0]
    cdef int num_antennas = z_c.shape[1]
    cdef int num_served = rho_c.shape[0]
    xi = np.empty((num_served, num_antennas), dtype=np.complex128)
    loglr = np.empty(num_served, dtype=np.float64)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xi_c = xi
    cdef cnp.ndarray[double, ndim=1, mode="c"] loglr_c = loglr
    cdef double tau = _phase_a_core(
        &z_c[0, 0], <zdouble*>xhat_c.data, <zdouble*>phis_h_c.data,
        <double*>rho_c.data, <zdouble*>xi_c.data, <double*>loglr_c.data,
        pilot_len, num_antennas, num_served)
    return xi, loglr, tau


def phase_b_iid(y, z, phis, xi, theta_loglr, rho, eps, double tau,
                int num_devices):
    """Denoise, accumulate the Onsager matrix and update the residual."""
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] y_c = np.ascontiguousarray(y, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] z_c = np.ascontiguousarray(z, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] phis_c = np.ascontiguousarray(phis, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xi_c = np.ascontiguousarray(xi, dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=1, mode="c"] tl_c = np.ascontiguousarray(theta_loglr, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] rho_c = np.ascontiguousarray(rho, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] eps_c = np.ascontiguousarray(eps, dtype=np.float64)
    cdef int pilot_len = y_c.shape[0]
    cdef int num_antennas = y_c.shape[1]
    cdef int num_served = rho_c.shape[0]
    z_new = np.empty((pilot_len, num_antennas), dtype=np.complex128)
    xhat_new = np.empty((num_served, num_antennas), dtype=np.complex128)
    u = np.empty((num_antennas, num_antennas), dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] zn_c = z_new
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xn_c = xhat_new
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] u_c = u
    _phase_b_core(
        <zdouble*>y_c.data, <zdouble*>z_c.data, <zdouble*>phis_c.data,
        <zdouble*>xi_c.data, <double*>tl_c.data, <double*>rho_c.data,
        <double*>eps_c.data, tau, num_devices,
        <zdouble*>zn_c.data, <zdouble*>xn_c.data, <zdouble*>u_c.data,
        pilot_len, num_antennas, num_served)
    return z_new, xhat_new


DEF SE_MAXDIM = 16


def se_accumulate(zv_raw, zs_raw, idx, noise_f, signal_f, psi_t, omega_t,
                  double ldiff, double eps, acc):
    """Fused Monte-Carlo accumulation for one state-evolution device batch.

    zv_raw (B, 2d) float32: interleaved noise draws; zs_raw (A, 2d) float32
    and idx (A,) int64: draws and positions of the active samples.  The
    factor matrices carry the 1/sqrt(2) scale.  Adds the denoiser-error
    outer products to acc (d, d) in place and returns the sample count.
    """
    cdef cnp.ndarray[float, ndim=2, mode="c"] zv_c = np.ascontiguousarray(zv_raw, dtype=np.float32)
    cdef cnp.ndarray[float, ndim=2, mode="c"] zs_c = np.ascontiguousarray(zs_raw, dtype=np.float32)
    cdef cnp.ndarray[long long, ndim=1, mode="c"] idx_c = np.ascontiguousarray(idx, dtype=np.int64)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] nf_c = np.ascontiguousarray(noise_f, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] sf_c = np.ascontiguousarray(signal_f, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] psi_c = np.ascontiguousarray(psi_t, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] om_c = np.ascontiguousarray(omega_t, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] acc_c = acc
    cdef int batch = zv_c.shape[0]
    cdef int dim = zv_c.shape[1] // 2
    if dim > SE_MAXDIM:
        raise ValueError(f"dimension {dim} exceeds the compiled limit {SE_MAXDIM}")

    cdef zdouble xi[SE_MAXDIM]
    cdef zdouble x [SE_MAXDIM]
    cdef zdouble w [SE_MAXDIM]
    cdef zdouble err[SE_MAXDIM]
    cdef zdouble zval, accu
    cdef double q, th, lc
    cdef float* zv = <float*>zv_c.data
    cdef float* zs = <float*>zs_c.data
    cdef long long* idxp = <long long*>idx_c.data
    cdef zdouble* nf = <zdouble*>nf_c.data
    cdef zdouble* sf = <zdouble*>sf_c.data
    cdef zdouble* psi = <zdouble*>psi_c.data
    cdef zdouble* om = <zdouble*>om_c.data
    cdef zdouble* accp = <zdouble*>acc_c.data
    cdef int num_active = idx_c.shape[0]
    cdef int s, i, j, a = 0
    cdef bint active

    with nogil:
        for s in range(batch):
            active = a < num_active and idxp[a] == s
            # xi = z_v @ noise_f (+ z_s @ signal_f when active)
            for j in range(dim):
                accu = 0.0
                for i in range(dim):
                    zval = zv[s * 2 * dim + 2 * i] + 1j * zv[s * 2 * dim + 2 * i + 1]
                    accu = accu + zval * nf[i * dim + j]
                xi[j] = accu
            if active:
                for j in range(dim):
                    accu = 0.0
                    for i in range(dim):
                        zval = zs[a * 2 * dim + 2 * i] + 1j * zs[a * 2 * dim + 2 * i + 1]
                        accu = accu + zval * sf[i * dim + j]
                    x[j] = accu
                    xi[j] = xi[j] + accu
            # quadratic form and posterior
            q = 0.0
            for j in range(dim):
                accu = 0.0
                for i in range(dim):
                    accu = accu + xi[i] * om[i * dim + j]
                w[j] = accu
                q += xi[j].real * accu.real + xi[j].imag * accu.imag
            if eps < 1.0:
                th = _theta_c(ldiff - q, eps)
            else:
                th = 1.0
            # denoiser error
            for j in range(dim):
                accu = 0.0
                for i in range(dim):
                    accu = accu + xi[i] * psi[i * dim + j]
                err[j] = th * accu
            if active:
                for j in range(dim):
                    err[j] = err[j] - x[j]
                a += 1
            for i in range(dim):
                for j in range(dim):
                    accp[i * dim + j] = accp[i * dim + j] + err[i] * err[j].conjugate()
    return batch


def damp_run_iid(y, phis, phis_h, rho, eps, int num_devices,
                 int num_iterations, double early_tol=0.0):
    """Full local AMP recursion for one AP under i.i.d. fading.

    Returns (xhat (S, M), loglr (S,), tau, iterations_run).  A non-positive
    state trace aborts with FloatingPointError (state collapse).
    """
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] y_c = np.ascontiguousarray(y, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] phis_c = np.ascontiguousarray(phis, dtype=np.complex128)
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] phis_h_c = np.ascontiguousarray(phis_h, dtype=np.complex128)
    cdef cnp.ndarray[double, ndim=1, mode="c"] rho_c = np.ascontiguousarray(rho, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1, mode="c"] eps_c = np.ascontiguousarray(eps, dtype=np.float64)
    cdef int pilot_len = y_c.shape[0]
    cdef int num_antennas = y_c.shape[1]
    cdef int num_served = rho_c.shape[0]

    z_a = y_c.copy()
    z_b = np.empty_like(z_a)
    xhat_a = np.zeros((num_served, num_antennas), dtype=np.complex128)
    xhat_b = np.empty_like(xhat_a)
    xi = np.empty((num_served, num_antennas), dtype=np.complex128)
    loglr = np.empty(num_served, dtype=np.float64)
    prev = np.empty(num_served, dtype=np.float64)
    u = np.empty((num_antennas, num_antennas), dtype=np.complex128)

    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] za_c = z_a
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] zb_c = z_b
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xa_c = xhat_a
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xb_c = xhat_b
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] xi_c = xi
    cdef cnp.ndarray[double, ndim=1, mode="c"] loglr_c = loglr
    cdef cnp.ndarray[double, ndim=1, mode="c"] prev_c = prev
    cdef cnp.ndarray[zdouble, ndim=2, mode="c"] u_c = u

    cdef zdouble* z_cur = <zdouble*>za_c.data
    cdef zdouble* z_nxt = <zdouble*>zb_c.data
    cdef zdouble* x_cur = <zdouble*>xa_c.data
    cdef zdouble* x_nxt = <zdouble*>xb_c.data
    cdef zdouble* tmp
    cdef double tau = 0.0, delta, d
    cdef int it, n, iterations = 0
    cdef bint have_prev = False, stop = False, collapsed = False

    with nogil:
        for it in range(num_iterations):
            tau = _phase_a_core(z_cur, x_cur, <zdouble*>phis_h_c.data,
                                <double*>rho_c.data, <zdouble*>xi_c.data,
                                <double*>loglr_c.data,
                                pilot_len, num_antennas, num_served)
            if tau <= 0.0:
                collapsed = True
                break
            _phase_b_core(<zdouble*>y_c.data, z_cur, <zdouble*>phis_c.data,
                          <zdouble*>xi_c.data, <double*>loglr_c.data,
                          <double*>rho_c.data, <double*>eps_c.data,
                          tau, num_devices, z_nxt, x_nxt, <zdouble*>u_c.data,
                          pilot_len, num_antennas, num_served)
            tmp = z_cur; z_cur = z_nxt; z_nxt = tmp
            tmp = x_cur; x_cur = x_nxt; x_nxt = tmp
            iterations += 1
            if early_tol > 0.0 and num_served > 0:
                if have_prev:
                    delta = 0.0
                    for n in range(num_served):
                        d = fabs(loglr_c[n] - prev_c[n])
                        if d > delta:
                            delta = d
                    if delta < early_tol:
                        stop = True
                for n in range(num_served):
                    prev_c[n] = loglr_c[n]
                have_prev = True
                if stop:
                    break

    if collapsed:
        raise FloatingPointError("state trace collapsed to zero")
    xhat_out = xhat_a if x_cur == <zdouble*>xa_c.data else xhat_b
    return xhat_out.copy(), loglr.copy(), tau, iterations

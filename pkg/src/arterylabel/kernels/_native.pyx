# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for the classifier network.

Same contract as ``numpy_ref``: matrix products go through BLAS dgemm,
batch-norm / ReLU / dropout / softmax / focal-loss passes are fused C
loops. Float64 throughout; results agree with the reference backend to
round-off.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

NAME = "native"

PROB_FLOOR = 1e-12
cdef double _FLOOR = 1e-12


# Row-major GEMM helpers on top of the Fortran (column-major) dgemm: a
# row-major (r, c) array is the transpose of a column-major (c, r) one,
# so operands swap sides.

cdef void _mm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m, n) = a (m, k) @ b (k, n)
    cdef int m = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int n = <int> b.shape[1]
    cdef double one = 1.0, zero = 0.0
    cdef char cn = b'N'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&cn, &cn, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _mm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m, n) = a (m, k) @ b (n, k).T
    cdef int m = <int> a.shape[0]
    cdef int k = <int> a.shape[1]
    cdef int n = <int> b.shape[0]
    cdef double one = 1.0, zero = 0.0
    cdef char cn = b'N'
    cdef char ct = b'T'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&ct, &cn, &n, &m, &k, &one, &b[0, 0], &k, &a[0, 0], &k, &zero, &c[0, 0], &n)


cdef void _mm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] c) noexcept nogil:
    # c (m, n) = a (k, m).T @ b (k, n)
    cdef int k = <int> a.shape[0]
    cdef int m = <int> a.shape[1]
    cdef int n = <int> b.shape[1]
    cdef double one = 1.0, zero = 0.0
    cdef char cn = b'N'
    cdef char ct = b'T'
    if m == 0 or n == 0 or k == 0:
        return
    dgemm(&cn, &ct, &n, &m, &k, &one, &b[0, 0], &n, &a[0, 0], &m, &zero, &c[0, 0], &n)


cdef void _add_bias(double[:, ::1] z, double[::1] bias) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] += bias[j]


cdef void _bn_relu_train(double[:, ::1] z, double[::1] gamma, double[::1] beta,
                         double eps, double[::1] mu, double[::1] var,
                         double[::1] inv_std, double[:, ::1] xhat,
                         double[:, ::1] act, cnp.uint8_t[:, ::1] relu_mask) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1]
    cdef double diff, u
    for j in range(d):
        mu[j] = 0.0
        var[j] = 0.0
    for i in range(n):
        for j in range(d):
            mu[j] += z[i, j]
    for j in range(d):
        mu[j] /= n
    for i in range(n):
        for j in range(d):
            diff = z[i, j] - mu[j]
            var[j] += diff * diff
    for j in range(d):
        var[j] /= n
        inv_std[j] = 1.0 / sqrt(var[j] + eps)
    for i in range(n):
        for j in range(d):
            diff = (z[i, j] - mu[j]) * inv_std[j]
            xhat[i, j] = diff
            u = gamma[j] * diff + beta[j]
            if u > 0.0:
                act[i, j] = u
                relu_mask[i, j] = 1
            else:
                act[i, j] = 0.0
                relu_mask[i, j] = 0


cdef void _bn_relu_eval(double[:, ::1] z, double[::1] gamma, double[::1] beta,
                        double[::1] mean, double[::1] var, double eps,
                        double[:, ::1] act) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double inv, u
    for j in range(z.shape[1]):
        inv = 1.0 / sqrt(var[j] + eps)
        for i in range(z.shape[0]):
            u = gamma[j] * (z[i, j] - mean[j]) * inv + beta[j]
            act[i, j] = u if u > 0.0 else 0.0


cdef void _softmax_rows(double[:, ::1] z, double[:, ::1] probs) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0], c = z.shape[1]
    cdef double zmax, total
    for i in range(n):
        zmax = z[i, 0]
        for j in range(1, c):
            if z[i, j] > zmax:
                zmax = z[i, j]
        total = 0.0
        for j in range(c):
            probs[i, j] = exp(z[i, j] - zmax)
            total += probs[i, j]
        for j in range(c):
            probs[i, j] /= total


cdef double _focal_loss_dz(double[:, ::1] probs, cnp.int64_t[::1] targets,
                           double g, double[:, ::1] dz) noexcept nogil:
    # Mean focal loss over rows plus its gradient w.r.t. the logits.
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = probs.shape[0], c = probs.shape[1]
    cdef cnp.int64_t t
    cdef double p_t, u, log_p, coef, loss = 0.0
    cdef double inv_n = 1.0 / n
    for i in range(n):
        t = targets[i]
        p_t = probs[i, t]
        u = 1.0 - p_t
        log_p = log(p_t if p_t > _FLOOR else _FLOOR)
        loss += -pow(u, g) * log_p
        coef = -pow(u, g)
        if g > 0.0 and u > 0.0:
            coef += g * p_t * pow(u, g - 1.0) * log_p
        for j in range(c):
            dz[i, j] = -coef * probs[i, j] * inv_n
        dz[i, t] += coef * inv_n
    return loss * inv_n


cdef void _bn_relu_backward(double[:, ::1] da, cnp.uint8_t[:, ::1] relu_mask,
                            double[:, ::1] xhat, double[::1] inv_std,
                            double[::1] gamma, double[::1] d_gamma,
                            double[::1] d_beta, double[:, ::1] dz) noexcept nogil:
    # da is the gradient at the ReLU output (dropout already folded in).
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = da.shape[0], d = da.shape[1]
    cdef double du, scale
    for j in range(d):
        d_gamma[j] = 0.0
        d_beta[j] = 0.0
    for i in range(n):
        for j in range(d):
            du = da[i, j] if relu_mask[i, j] else 0.0
            dz[i, j] = du
            d_beta[j] += du
            d_gamma[j] += du * xhat[i, j]
    # dz/dinput for batch norm, using sum(dxhat) = gamma*d_beta and
    # sum(dxhat*xhat) = gamma*d_gamma.
    for j in range(d):
        scale = gamma[j] * inv_std[j] / n
        for i in range(n):
            dz[i, j] = scale * (n * dz[i, j] - d_beta[j] - xhat[i, j] * d_gamma[j])


cdef void _colsum(double[:, ::1] a, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for j in range(a.shape[1]):
        out[j] = 0.0
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]


cdef _as_mat(obj):
    return np.ascontiguousarray(obj, dtype=np.float64)


cdef _as_vec(obj):
    return np.ascontiguousarray(np.asarray(obj, dtype=np.float64).reshape(-1))


def forward_eval(ws, bs, gammas, betas, run_means, run_vars, x, double eps):
    cdef Py_ssize_t i, n_layers = len(ws)
    a = _as_mat(x)
    cdef double[:, ::1] av, zv
    for i in range(n_layers - 1):
        w = _as_mat(ws[i])
        z = np.empty((a.shape[0], w.shape[1]))
        av = a
        zv = z
        _mm_nn(av, _as_mat(w), zv)
        _add_bias(zv, _as_vec(bs[i]))
        act = np.empty_like(z)
        _bn_relu_eval(zv, _as_vec(gammas[i]), _as_vec(betas[i]),
                      _as_vec(run_means[i]), _as_vec(run_vars[i]), eps, act)
        a = act
    w = _as_mat(ws[n_layers - 1])
    z = np.empty((a.shape[0], w.shape[1]))
    av = a
    zv = z
    _mm_nn(av, w, zv)
    _add_bias(zv, _as_vec(bs[n_layers - 1]))
    probs = np.empty_like(z)
    _softmax_rows(zv, probs)
    return probs


cdef _train_pass(ws, bs, gammas, betas, x, dropout_mask, double eps):
    cdef Py_ssize_t i, n_hidden = len(ws) - 1
    a = _as_mat(x)
    acts = [a]
    caches = []
    means = []
    variances = []
    cdef double[:, ::1] zv, actv, dmv
    cdef Py_ssize_t r, c
    for i in range(n_hidden):
        w = _as_mat(ws[i])
        z = np.empty((a.shape[0], w.shape[1]))
        zv = z
        _mm_nn(a, w, zv)
        _add_bias(zv, _as_vec(bs[i]))
        n, d = z.shape
        mu = np.empty(d)
        var = np.empty(d)
        inv_std = np.empty(d)
        xhat = np.empty_like(z)
        act = np.empty_like(z)
        relu_mask = np.empty((n, d), dtype=np.uint8)
        _bn_relu_train(zv, _as_vec(gammas[i]), _as_vec(betas[i]), eps,
                       mu, var, inv_std, xhat, act, relu_mask)
        if i == n_hidden - 1 and dropout_mask is not None:
            dm = _as_mat(dropout_mask)
            actv = act
            dmv = dm
            for r in range(actv.shape[0]):
                for c in range(actv.shape[1]):
                    actv[r, c] *= dmv[r, c]
        caches.append((xhat, inv_std, relu_mask))
        means.append(mu)
        variances.append(var)
        a = act
        acts.append(a)
    w = _as_mat(ws[n_hidden])
    z = np.empty((a.shape[0], w.shape[1]))
    zv = z
    _mm_nn(a, w, zv)
    _add_bias(zv, _as_vec(bs[n_hidden]))
    probs = np.empty_like(z)
    _softmax_rows(zv, probs)
    return probs, acts, caches, means, variances


def forward_train(ws, bs, gammas, betas, x, dropout_mask, double eps):
    probs, _, _, means, variances = _train_pass(ws, bs, gammas, betas, x, dropout_mask, eps)
    return probs, means, variances


def focal_loss_from_probs(probs, targets, double focal_gamma):
    cdef double[:, ::1] pv = _as_mat(probs)
    cdef cnp.int64_t[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)
    cdef Py_ssize_t i
    cdef double p_t, loss = 0.0
    for i in range(pv.shape[0]):
        p_t = pv[i, tv[i]]
        loss += -pow(1.0 - p_t, focal_gamma) * log(p_t if p_t > _FLOOR else _FLOOR)
    return loss / pv.shape[0]


def loss_and_grads(ws, bs, gammas, betas, x, targets, double focal_gamma,
                   dropout_mask, double eps):
    cdef Py_ssize_t i, n_hidden = len(ws) - 1
    probs, acts, caches, means, variances = _train_pass(
        ws, bs, gammas, betas, x, dropout_mask, eps)
    cdef cnp.int64_t[::1] tv = np.ascontiguousarray(targets, dtype=np.int64)

    dz = np.empty_like(probs)
    cdef double loss = _focal_loss_dz(probs, tv, focal_gamma, dz)

    d_ws = [None] * (n_hidden + 1)
    d_bs = [None] * (n_hidden + 1)
    d_gammas = [None] * n_hidden
    d_betas = [None] * n_hidden

    w_out = _as_mat(ws[n_hidden])
    dw = np.empty_like(w_out)
    _mm_tn(acts[n_hidden], dz, dw)
    db = np.empty(w_out.shape[1])
    _colsum(dz, db)
    d_ws[n_hidden] = dw
    d_bs[n_hidden] = db
    da = np.empty((dz.shape[0], w_out.shape[0]))
    _mm_nt(dz, w_out, da)

    cdef double[:, ::1] dav, dmv
    cdef Py_ssize_t r, c
    for i in range(n_hidden - 1, -1, -1):
        xhat, inv_std, relu_mask = caches[i]
        if i == n_hidden - 1 and dropout_mask is not None:
            dm = _as_mat(dropout_mask)
            dav = da
            dmv = dm
            for r in range(dav.shape[0]):
                for c in range(dav.shape[1]):
                    dav[r, c] *= dmv[r, c]
        gamma = _as_vec(gammas[i])
        d = xhat.shape[1]
        d_gamma = np.empty(d)
        d_beta = np.empty(d)
        dz = np.empty_like(xhat)
        _bn_relu_backward(da, relu_mask, xhat, inv_std, gamma, d_gamma, d_beta, dz)
        d_gammas[i] = d_gamma
        d_betas[i] = d_beta
        w = _as_mat(ws[i])
        dw = np.empty_like(w)
        _mm_tn(acts[i], dz, dw)
        db = np.empty(w.shape[1])
        _colsum(dz, db)
        d_ws[i] = dw
        d_bs[i] = db
        if i > 0:
            da = np.empty((dz.shape[0], w.shape[0]))
            _mm_nt(dz, w, da)

    return loss, d_ws, d_bs, d_gammas, d_betas, means, variances, probs

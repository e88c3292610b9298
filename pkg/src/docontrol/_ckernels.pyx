# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels mirroring ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef double LOG_2PI = 1.8378770664093453


def gmm_score_diag(const double[::1] x, const double[:, ::1] means,
                   const double[:, ::1] variances, const double[::1] log_weights):
    cdef Py_ssize_t M = means.shape[0], d = means.shape[1], m, i
    cdef double diff, acc, mx, total
    score_arr = np.zeros(d)
    resp_arr = np.empty(M)
    comp_arr = np.empty((M, d))
    cdef double[::1] score = score_arr
    cdef double[::1] resp = resp_arr
    cdef double[:, ::1] comp = comp_arr
    for m in range(M):
        acc = 0.0
        for i in range(d):
            diff = x[i] - means[m, i]
            comp[m, i] = -diff / variances[m, i]
            acc += diff * diff / variances[m, i] + log(variances[m, i]) + LOG_2PI
        resp[m] = log_weights[m] - 0.5 * acc
    mx = resp[0]
    for m in range(1, M):
        if resp[m] > mx:
            mx = resp[m]
    total = 0.0
    for m in range(M):
        resp[m] = exp(resp[m] - mx)
        total += resp[m]
    for m in range(M):
        resp[m] /= total
        for i in range(d):
            score[i] += resp[m] * comp[m, i]
    return score_arr, resp_arr, comp_arr


def gmm_score_jvp(const double[::1] v, const double[::1] resp,
                  const double[:, ::1] comp_scores, const double[:, ::1] variances):
    cdef Py_ssize_t M = comp_scores.shape[0], d = comp_scores.shape[1], m, i
    cdef double proj
    mean_arr = np.zeros(d)
    out_arr = np.zeros(d)
    cdef double[::1] mean_score = mean_arr
    cdef double[::1] out = out_arr
    for m in range(M):
        for i in range(d):
            mean_score[i] += resp[m] * comp_scores[m, i]
    for m in range(M):
        proj = 0.0
        for i in range(d):
            proj += (comp_scores[m, i] - mean_score[i]) * v[i]
        for i in range(d):
            out[i] += resp[m] * (proj * comp_scores[m, i] - v[i] / variances[m, i])
    return out_arr


cdef inline Py_ssize_t _reflect(Py_ssize_t q, Py_ssize_t n) nogil:
    if q < 0:
        return -q
    if q >= n:
        return 2 * (n - 1) - q
    return q


def conv2d_reflect(const double[:, ::1] img, const double[:, ::1] kernel):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2, i, j, a, b
    cdef double acc
    out_arr = np.empty((h, w))
    cdef double[:, ::1] out = out_arr
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    acc += kernel[a, b] * img[_reflect(i + a - ph, h), _reflect(j + b - pw, w)]
            out[i, j] = acc
    return out_arr


def conv2d_reflect_adjoint(const double[:, ::1] out, const double[:, ::1] kernel):
    cdef Py_ssize_t h = out.shape[0], w = out.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2, i, j, a, b
    cdef double o
    img_arr = np.zeros((h, w))
    cdef double[:, ::1] img = img_arr
    for i in range(h):
        for j in range(w):
            o = out[i, j]
            for a in range(kh):
                for b in range(kw):
                    img[_reflect(i + a - ph, h), _reflect(j + b - pw, w)] += kernel[a, b] * o
    return img_arr

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_kernels_py``.

Recurrent matrix products go through BLAS via ``scipy.linalg.cython_blas``;
the elementwise gate arithmetic is fused into plain C loops.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport tanh, tanhf, exp, expf, INFINITY
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()


cdef inline floating _sig(floating x) noexcept nogil:
    if floating is double:
        return 1.0 / (1.0 + exp(-x))
    else:
        return 1.0 / (1.0 + expf(-x))


cdef inline floating _tanh(floating x) noexcept nogil:
    if floating is double:
        return 2.0 / (1.0 + exp(-2.0 * x)) - 1.0
    else:
        return 2.0 / (1.0 + expf(-2.0 * x)) - 1.0


cdef inline void _gemm(char* ta, char* tb, int m, int n, int k, floating* a, int lda,
                       floating* b, int ldb, floating beta, floating* c, int ldc) noexcept nogil:
    cdef floating one = 1.0
    if floating is double:
        dgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)
    else:
        sgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


def lstm_forward(floating[:, :, ::1] gates, floating[:, ::1] w_h):
    cdef Py_ssize_t n_steps = gates.shape[0]
    cdef Py_ssize_t batch = gates.shape[1]
    cdef Py_ssize_t four_h = gates.shape[2]
    cdef Py_ssize_t hid = four_h // 4
    dtype = np.float64 if floating is double else np.float32
    hs_arr = np.zeros((n_steps, batch, hid), dtype=dtype)
    cs_arr = np.zeros((n_steps, batch, hid), dtype=dtype)
    cdef floating[:, :, ::1] hs = hs_arr
    cdef floating[:, :, ::1] cs = cs_arr
    cdef Py_ssize_t t, b, j
    cdef floating* row
    cdef floating* cp
    cdef floating* hp
    cdef floating* cprev
    with nogil:
        for t in range(n_steps):
            if t > 0:
                # gates[t]^T (4h x B) += W_h (4h x h) . h_{t-1}^T (h x B), column-major view
                _gemm(b"T", b"N", <int>four_h, <int>batch, <int>hid, &w_h[0, 0], <int>hid,
                      &hs[t - 1, 0, 0], <int>hid, 1.0, &gates[t, 0, 0], <int>four_h)
            for b in range(batch):
                row = &gates[t, b, 0]
                # contiguous activation passes so the compiler can vectorize exp
                for j in range(2 * hid):
                    row[j] = _sig(row[j])
                for j in range(2 * hid, 3 * hid):
                    row[j] = _tanh(row[j])
                for j in range(3 * hid, four_h):
                    row[j] = _sig(row[j])
                cp = &cs[t, b, 0]
                hp = &hs[t, b, 0]
                if t > 0:
                    cprev = &cs[t - 1, b, 0]
                    for j in range(hid):
                        cp[j] = row[hid + j] * cprev[j] + row[j] * row[2 * hid + j]
                else:
                    for j in range(hid):
                        cp[j] = row[j] * row[2 * hid + j]
                for j in range(hid):
                    hp[j] = row[3 * hid + j] * _tanh(cp[j])
    return hs_arr, cs_arr


def lstm_backward(floating[:, :, ::1] d_hs, floating[:, :, ::1] gates,
                  floating[:, :, ::1] cs, floating[:, ::1] w_h):
    cdef Py_ssize_t n_steps = d_hs.shape[0]
    cdef Py_ssize_t batch = d_hs.shape[1]
    cdef Py_ssize_t hid = d_hs.shape[2]
    cdef Py_ssize_t four_h = 4 * hid
    dtype = np.float64 if floating is double else np.float32
    d_pre_arr = np.empty((n_steps, batch, four_h), dtype=dtype)
    dh_next_arr = np.zeros((batch, hid), dtype=dtype)
    dc_next_arr = np.zeros((batch, hid), dtype=dtype)
    zeros_arr = np.zeros(hid, dtype=dtype)
    tc_arr = np.empty(hid, dtype=dtype)
    cdef floating[:, :, ::1] d_pre = d_pre_arr
    cdef floating[:, ::1] dh_next = dh_next_arr
    cdef floating[:, ::1] dc_next = dc_next_arr
    cdef floating[::1] zeros = zeros_arr
    cdef floating[::1] tcb = tc_arr
    cdef Py_ssize_t t, b, j
    cdef floating dh, dc, ig, fg, gg, og, tc
    cdef floating* a
    cdef floating* dp
    cdef floating* cprev
    cdef floating* ccur
    cdef floating* dhn
    cdef floating* dcn
    cdef floating* dout
    cdef floating* tcp = &tcb[0]
    with nogil:
        for t in range(n_steps - 1, -1, -1):
            for b in range(batch):
                a = &gates[t, b, 0]
                dp = &d_pre[t, b, 0]
                ccur = &cs[t, b, 0]
                cprev = &cs[t - 1, b, 0] if t > 0 else &zeros[0]
                dhn = &dh_next[b, 0]
                dcn = &dc_next[b, 0]
                dout = &d_hs[t, b, 0]
                for j in range(hid):
                    tcp[j] = _tanh(ccur[j])
                for j in range(hid):
                    ig = a[j]
                    fg = a[hid + j]
                    gg = a[2 * hid + j]
                    og = a[3 * hid + j]
                    tc = tcp[j]
                    dh = dout[j] + dhn[j]
                    dc = dcn[j] + dh * og * (1.0 - tc * tc)
                    dp[j] = dc * gg * ig * (1.0 - ig)
                    dp[hid + j] = dc * cprev[j] * fg * (1.0 - fg)
                    dp[2 * hid + j] = dc * ig * (1.0 - gg * gg)
                    dp[3 * hid + j] = dh * tc * og * (1.0 - og)
                    dcn[j] = dc * fg
            # dh_next^T (h x B) = W_h^T (h x 4h) . d_pre[t]^T (4h x B)
            _gemm(b"N", b"N", <int>hid, <int>batch, <int>four_h, &w_h[0, 0], <int>hid,
                  &d_pre[t, 0, 0], <int>four_h, 0.0, &dh_next[0, 0], <int>hid)
    return d_pre_arr


def temporal_gaps(const unsigned char[:, :] mask, double dt):
    cdef Py_ssize_t n = mask.shape[0]
    cdef Py_ssize_t d = mask.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, j
    cdef long run
    with nogil:
        for j in range(d):
            run = 0
            for t in range(n):
                if mask[t, j]:
                    run = 0
                else:
                    run = run + 1
                out[t, j] = run * dt
    return out_arr


def best_gini_split(const double[:] x_sorted, const long[:] y_sorted, int n_classes, int min_leaf):
    cdef Py_ssize_t n = x_sorted.shape[0]
    if n < 2 * min_leaf:
        return INFINITY, -1
    left_arr = np.zeros(n_classes, dtype=np.float64)
    total_arr = np.zeros(n_classes, dtype=np.float64)
    cdef double[::1] left = left_arr
    cdef double[::1] total = total_arr
    cdef Py_ssize_t i, c
    cdef double best = INFINITY
    cdef Py_ssize_t best_pos = -1
    cdef double nl, nr, sl, sr, r, score
    with nogil:
        for i in range(n):
            total[y_sorted[i]] += 1.0
        for i in range(n - 1):
            left[y_sorted[i]] += 1.0
            nl = i + 1
            nr = n - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            if not (x_sorted[i + 1] > x_sorted[i]):
                continue
            sl = 0.0
            sr = 0.0
            for c in range(n_classes):
                sl += left[c] * left[c]
                r = total[c] - left[c]
                sr += r * r
            score = (nl * (1.0 - sl / (nl * nl)) + nr * (1.0 - sr / (nr * nr))) / n
            if score < best:
                best = score
                best_pos = i + 1
    return best, best_pos

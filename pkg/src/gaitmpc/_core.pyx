# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend: fused per-step loops around BLAS matmuls.

Mirrors gaitmpc._core_np exactly (same contracts, same math); the heavy
lifting is dgemm via scipy's BLAS bindings plus numpy's vectorized tanh,
with everything between fused into nogil C loops.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, fabs, floor as c_floor, isfinite
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef int SD = 18          # state dim
cdef int HL = 4           # history length
cdef int AD = 12          # action dim
cdef int PH = 14          # first phase index
cdef double TWO_PI = 6.283185307179586476925286766559

REWARD_TRACK = 0
REWARD_TURN = 1


cdef inline void linear_t(int B, int in_dim, int out_dim, double* X, double* W,
                          double* out, double beta) noexcept nogil:
    # out (B x out_dim) = X (B x in_dim) @ W(out_dim x in_dim)^T [+ beta*out]
    cdef double one = 1.0
    cdef int m = out_dim, n = B, k = in_dim
    dgemm("T", "N", &m, &n, &k, &one, W, &in_dim, X, &in_dim, &beta, out, &out_dim)


cdef inline void matmul(int m, int k, int n, double* A, double* B, double* C,
                        double beta) noexcept nogil:
    # C (m x n) = A (m x k) @ B (k x n) [+ beta*C], row-major
    cdef double one = 1.0
    dgemm("N", "N", &n, &m, &k, &one, B, &n, A, &k, &beta, C, &n)


cdef inline void at_b(int B, int da, int db, double* Ga, double* Hb, double* C,
                      double beta) noexcept nogil:
    # C (da x db) = Ga(B x da)^T @ Hb(B x db) [+ beta*C], row-major
    cdef double one = 1.0
    dgemm("N", "T", &db, &da, &B, &one, Hb, &db, Ga, &da, &beta, C, &db)


cdef inline double wrap2pi(double x) noexcept nogil:
    return x - TWO_PI * c_floor(x / TWO_PI)


def rollout_returns(object W1o, object b1o, object W2o, object b2o,
                    object in_mean_o, object in_inv_std_o, object out_mean_o,
                    object out_std_o, object history_o, object phases_o,
                    object actions_o, double omega_lo, double omega_hi,
                    double base_rate, bint tg_enabled, double dt,
                    object v_targets_o, int reward_kind, double turn_rate,
                    double w_speed, double w_heading, double w_tilt):
    cdef double[:, ::1] W1 = np.ascontiguousarray(W1o)
    cdef double[::1] b1 = np.ascontiguousarray(b1o)
    cdef double[:, ::1] W2 = np.ascontiguousarray(W2o)
    cdef double[::1] b2 = np.ascontiguousarray(b2o)
    cdef double[::1] in_mean = np.ascontiguousarray(in_mean_o)
    cdef double[::1] in_inv_std = np.ascontiguousarray(in_inv_std_o)
    cdef double[::1] out_mean = np.ascontiguousarray(out_mean_o)
    cdef double[::1] out_std = np.ascontiguousarray(out_std_o)
    cdef double[:, ::1] history = np.ascontiguousarray(history_o)
    cdef double[::1] phases0 = np.ascontiguousarray(phases_o)
    cdef double[:, :, ::1] actions = np.ascontiguousarray(actions_o)
    cdef double[::1] v_targets = np.ascontiguousarray(v_targets_o)

    cdef int P = actions.shape[0]
    cdef int H_steps = actions.shape[1]
    cdef int hid = W1.shape[0]
    cdef int in_dim = HL * SD + AD

    hist_arr = np.empty((P, HL * SD))
    hist_arr[:] = np.asarray(history_o).reshape(1, HL * SD)
    cdef double[:, ::1] hist = hist_arr
    phi_arr = np.tile(np.asarray(phases_o, dtype=np.float64), (P, 1))
    cdef double[:, ::1] phi = phi_arr

    XN_arr = np.empty((P, in_dim))
    H_np = np.empty((P, hid))
    Y_arr = np.empty((P, SD))
    cdef double[:, ::1] XN = XN_arr
    cdef double[:, ::1] H = H_np
    cdef double[:, ::1] Y = Y_arr

    returns_arr = np.zeros(P)
    cdef double[::1] returns = returns_arr
    alive_arr = np.ones(P, dtype=np.uint8)
    cdef unsigned char[::1] alive = alive_arr
    state_arr = np.array(hist_arr[:, (HL - 1) * SD:])
    cdef double[:, ::1] state = state_arr

    cdef int t, p, j, d, l
    cdef double om, nxt_d, v_err, heading, tilt, yaw_prev
    cdef double s_tmp[18]
    cdef bint ok
    cdef int bad = 0

    for t in range(H_steps):
        with nogil:
            for p in range(P):
                for j in range(HL * SD):
                    XN[p, j] = (hist[p, j] - in_mean[j]) * in_inv_std[j]
                for j in range(AD):
                    XN[p, HL * SD + j] = (actions[p, t, j] - in_mean[HL * SD + j]) \
                        * in_inv_std[HL * SD + j]
            linear_t(P, in_dim, hid, &XN[0, 0], &W1[0, 0], &H[0, 0], 0.0)
            for p in range(P):
                for j in range(hid):
                    H[p, j] += b1[j]
        np.tanh(H_np, out=H_np)
        with nogil:
            linear_t(P, hid, SD, &H[0, 0], &W2[0, 0], &Y[0, 0], 0.0)
            for p in range(P):
                if not alive[p]:
                    continue
                yaw_prev = state[p, 5]
                ok = True
                for d in range(SD):
                    nxt_d = state[p, d] + (Y[p, d] + b2[d]) * out_std[d] + out_mean[d]
                    s_tmp[d] = nxt_d
                if tg_enabled:
                    for l in range(4):
                        om = actions[p, t, 8 + l]
                        if om < omega_lo:
                            om = omega_lo
                        elif om > omega_hi:
                            om = omega_hi
                        phi[p, l] = wrap2pi(phi[p, l] + om * base_rate * dt)
                for l in range(4):
                    s_tmp[PH + l] = phi[p, l]
                for d in range(SD):
                    if not isfinite(s_tmp[d]):
                        ok = False
                        break
                if not ok:
                    returns[p] = -INFINITY
                    alive[p] = 0
                    bad += 1
                    for d in range(SD):
                        s_tmp[d] = 0.0
                        state[p, d] = 0.0
                    for j in range(HL * SD):
                        hist[p, j] = 0.0
                    continue

                v_err = fabs(s_tmp[0] - v_targets[t])
                if reward_kind == 1:
                    heading = fabs((s_tmp[5] - yaw_prev) / dt - turn_rate)
                else:
                    heading = fabs(s_tmp[5])
                tilt = s_tmp[3] * s_tmp[3] + s_tmp[4] * s_tmp[4]
                returns[p] -= w_speed * v_err + w_heading * heading + w_tilt * tilt

                memcpy(&hist[p, 0], &hist[p, SD], (HL - 1) * SD * sizeof(double))
                for d in range(SD):
                    hist[p, (HL - 1) * SD + d] = s_tmp[d]
                    state[p, d] = s_tmp[d]
                for l in range(4):
                    hist[p, (HL - 1) * SD + PH + l] = wrap2pi(s_tmp[PH + l])

    return returns_arr, bad


def multistep_loss_grad(object W1o, object b1o, object W2o, object b2o,
                        object in_mean_o, object in_inv_std_o, object out_mean_o,
                        object out_std_o, object hist0_o, object actions_o,
                        object deltas_o, bint full_grad=True, bint want_grad=True):
    cdef double[:, ::1] W1 = np.ascontiguousarray(W1o)
    cdef double[::1] b1 = np.ascontiguousarray(b1o)
    cdef double[:, ::1] W2 = np.ascontiguousarray(W2o)
    cdef double[::1] b2 = np.ascontiguousarray(b2o)
    cdef double[::1] in_mean = np.ascontiguousarray(in_mean_o)
    cdef double[::1] in_inv_std = np.ascontiguousarray(in_inv_std_o)
    cdef double[::1] out_mean = np.ascontiguousarray(out_mean_o)
    cdef double[::1] out_std = np.ascontiguousarray(out_std_o)
    cdef double[:, :, ::1] actions = np.ascontiguousarray(actions_o)
    cdef double[:, :, ::1] deltas = np.ascontiguousarray(deltas_o)

    cdef int B = actions.shape[0]
    cdef int n = actions.shape[1]
    cdef int hid = W1.shape[0]
    cdef int in_dim = HL * SD + AD

    hist_arr = np.ascontiguousarray(hist0_o, dtype=np.float64).reshape(B, HL * SD).copy()
    cdef double[:, ::1] hist = hist_arr
    cdef double[:, ::1] shat

    cdef int t, p, j, d, k_idx
    # wrap the phase entries of every incoming frame
    with nogil:
        for p in range(B):
            for j in range(HL):
                for d in range(4):
                    hist[p, j * SD + PH + d] = wrap2pi(hist[p, j * SD + PH + d])
    shat_arr = hist_arr[:, (HL - 1) * SD:].copy()
    shat = shat_arr

    XN_all_arr = np.empty((n, B, in_dim)) if want_grad else np.empty((1, B, in_dim))
    H_all_arr = np.empty((n, B, hid)) if want_grad else np.empty((1, B, hid))
    resid_arr = np.empty((n, B, SD))
    cdef double[:, :, ::1] XN_all = XN_all_arr
    cdef double[:, :, ::1] H_all = H_all_arr
    cdef double[:, :, ::1] resid = resid_arr

    Y_arr = np.empty((B, SD))
    cdef double[:, ::1] Y = Y_arr
    cdef double[:, ::1] XN
    cdef double[:, ::1] H
    cdef double loss = 0.0
    cdef double pred_d, r
    cdef int slot

    for t in range(n):
        slot = t if want_grad else 0
        XN = XN_all_arr[slot]
        H = H_all_arr[slot]
        with nogil:
            for p in range(B):
                for j in range(HL * SD):
                    XN[p, j] = (hist[p, j] - in_mean[j]) * in_inv_std[j]
                for j in range(AD):
                    XN[p, HL * SD + j] = (actions[p, t, j] - in_mean[HL * SD + j]) \
                        * in_inv_std[HL * SD + j]
            linear_t(B, in_dim, hid, &XN[0, 0], &W1[0, 0], &H[0, 0], 0.0)
            for p in range(B):
                for j in range(hid):
                    H[p, j] += b1[j]
        np.tanh(H_all_arr[slot], out=H_all_arr[slot])
        with nogil:
            linear_t(B, hid, SD, &H[0, 0], &W2[0, 0], &Y[0, 0], 0.0)
            for p in range(B):
                memcpy(&hist[p, 0], &hist[p, SD], (HL - 1) * SD * sizeof(double))
                for d in range(SD):
                    pred_d = (Y[p, d] + b2[d]) * out_std[d] + out_mean[d]
                    r = deltas[p, t, d] - pred_d
                    resid[t, p, d] = r
                    loss += r * r
                    shat[p, d] += pred_d
                    hist[p, (HL - 1) * SD + d] = shat[p, d]
                for d in range(4):
                    hist[p, (HL - 1) * SD + PH + d] = wrap2pi(shat[p, PH + d])

    cdef double scale = 1.0 / (B * n)
    loss *= scale
    if not want_grad:
        return loss, None

    gW1_arr = np.zeros((hid, in_dim))
    gb1_arr = np.zeros(hid)
    gW2_arr = np.zeros((SD, hid))
    gb2_arr = np.zeros(SD)
    cdef double[:, ::1] gW1 = gW1_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[:, ::1] gW2 = gW2_arr
    cdef double[::1] gb2 = gb2_arr

    dshat_arr = np.zeros((n + 1, B, SD)) if full_grad else None
    cdef double[:, :, ::1] dshat
    if full_grad:
        dshat = dshat_arr

    g_pred_arr = np.empty((B, SD))
    g_yn_arr = np.empty((B, SD))
    g_h_arr = np.empty((B, hid))
    g_x_arr = np.empty((B, in_dim))
    cdef double[:, ::1] g_pred = g_pred_arr
    cdef double[:, ::1] g_yn = g_yn_arr
    cdef double[:, ::1] g_h = g_h_arr
    cdef double[:, ::1] g_x = g_x_arr

    cdef double neg2s = -2.0 * scale
    cdef double hv

    for t in range(n - 1, -1, -1):
        XN = XN_all_arr[t]
        H = H_all_arr[t]
        with nogil:
            for p in range(B):
                for d in range(SD):
                    g_pred[p, d] = neg2s * resid[t, p, d]
            if full_grad:
                for p in range(B):
                    for d in range(SD):
                        g_pred[p, d] += dshat[t + 1, p, d]
                if t >= 1:
                    for p in range(B):
                        for d in range(SD):
                            dshat[t, p, d] += dshat[t + 1, p, d]
            for p in range(B):
                for d in range(SD):
                    g_yn[p, d] = g_pred[p, d] * out_std[d]
                    gb2[d] += g_yn[p, d]
            at_b(B, SD, hid, &g_yn[0, 0], &H[0, 0], &gW2[0, 0], 1.0)
            matmul(B, SD, hid, &g_yn[0, 0], &W2[0, 0], &g_h[0, 0], 0.0)
            for p in range(B):
                for j in range(hid):
                    hv = H[p, j]
                    g_h[p, j] *= (1.0 - hv * hv)
                    gb1[j] += g_h[p, j]
            at_b(B, hid, in_dim, &g_h[0, 0], &XN[0, 0], &gW1[0, 0], 1.0)
            if full_grad:
                matmul(B, hid, in_dim, &g_h[0, 0], &W1[0, 0], &g_x[0, 0], 0.0)
                for p in range(B):
                    for j in range(HL):
                        k_idx = t - (HL - 1) + j
                        if k_idx >= 1:
                            for d in range(SD):
                                dshat[k_idx, p, d] += g_x[p, j * SD + d] \
                                    * in_inv_std[j * SD + d]

    return loss, (gW1_arr, gb1_arr, gW2_arr, gb2_arr)

"""Vectorized numpy implementations of the hot kernels.

This is the portable fallback backend; the compiled backend in ``_core``
implements the same contracts with fused per-step loops. Both operate on
raw float64 arrays so the surrounding modules stay backend-agnostic.

Shared conventions:
  * model input x = [history oldest..newest (4*18), action (12)], length 84
  * normalized input xn = (x - in_mean) * in_inv_std
  * hidden h = tanh(W1 @ xn + b1), delta = (W2 @ h + b2) * out_std + out_mean
  * predicted-state phase entries are wrapped to [0, 2pi) when (re)entering
    the input; the wrap is a constant shift, so gradients pass through.
"""

from __future__ import annotations

import numpy as np

from .state import HISTORY_LEN, PHASE_START, PITCH, ROLL, STATE_DIM, TWO_PI, VEL_X, YAW

REWARD_TRACK = 0   # heading term penalizes |yaw|
REWARD_TURN = 1    # heading term penalizes |yaw_rate - target|


def _wrap_phases_inplace(frames: np.ndarray):
    """Wrap the phase block of (..., STATE_DIM) frames to [0, 2pi)."""
    ph = frames[..., PHASE_START:]
    np.mod(ph, TWO_PI, out=ph)


def forward_batch(W1, b1, W2, b2, in_mean, in_inv_std, out_mean, out_std,
                  X: np.ndarray) -> np.ndarray:
    """Model deltas for a batch of raw (unnormalized) inputs X (B, 84)."""
    XN = (X - in_mean) * in_inv_std
    H = np.tanh(XN @ W1.T + b1)
    return (H @ W2.T + b2) * out_std + out_mean


def rollout_returns(W1, b1, W2, b2, in_mean, in_inv_std, out_mean, out_std,
                    history: np.ndarray, phases: np.ndarray, actions: np.ndarray,
                    omega_lo: float, omega_hi: float, base_rate: float, tg_enabled: bool,
                    dt: float, v_targets: np.ndarray, reward_kind: int, turn_rate: float,
                    w_speed: float, w_heading: float, w_tilt: float):
    """Evaluate a population of action sequences under the learned model.

    history: (4, 18) shared start window, oldest first; phases: (4,) TG
    phases of the start state; actions: (P, H, 12). TG phases inside the
    predicted states are propagated exactly from the action's phase scales
    (when tg_enabled), not taken from the network output.

    Returns (returns (P,), bad_count) where sequences that produced a
    non-finite state score -inf and are counted in bad_count.
    """
    P, H_steps, _ = actions.shape
    hist = np.broadcast_to(history.reshape(1, HISTORY_LEN, STATE_DIM),
                           (P, HISTORY_LEN, STATE_DIM)).copy()
    phi = np.broadcast_to(phases, (P, 4)).copy()
    state = hist[:, -1, :].copy()
    returns = np.zeros(P)
    alive = np.ones(P, dtype=bool)
    XN = np.empty((P, HISTORY_LEN * STATE_DIM + actions.shape[2]))
    H = np.empty((P, len(b1)))
    Y = np.empty((P, STATE_DIM))
    nxt = np.empty((P, STATE_DIM))
    rate = base_rate * dt

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(H_steps):
            a_t = actions[:, t, :]
            XN[:, :HISTORY_LEN * STATE_DIM] = hist.reshape(P, -1)
            XN[:, HISTORY_LEN * STATE_DIM:] = a_t
            XN -= in_mean
            XN *= in_inv_std
            np.matmul(XN, W1.T, out=H)
            H += b1
            np.tanh(H, out=H)
            np.matmul(H, W2.T, out=Y)
            Y += b2
            Y *= out_std
            Y += out_mean
            np.add(state, Y, out=nxt)
            if tg_enabled:
                om = np.clip(a_t[:, 8:12], omega_lo, omega_hi)
                phi += om * rate
                np.mod(phi, TWO_PI, out=phi)
            nxt[:, PHASE_START:] = phi

            finite = np.isfinite(nxt).all(axis=1)
            if not finite.all():
                newly_dead = alive & ~finite
                returns[newly_dead] = -np.inf
                alive &= finite
                nxt[~alive] = 0.0

            v_err = np.abs(nxt[:, VEL_X] - v_targets[t])
            if reward_kind == REWARD_TURN:
                heading = np.abs((nxt[:, YAW] - state[:, YAW]) / dt - turn_rate)
            else:
                heading = np.abs(nxt[:, YAW])
            tilt = nxt[:, ROLL] ** 2 + nxt[:, PITCH] ** 2
            r = w_speed * v_err
            r += w_heading * heading
            r += w_tilt * tilt
            returns[alive] -= r[alive]

            hist[:, :-1, :] = hist[:, 1:, :]
            hist[:, -1, :] = nxt
            _wrap_phases_inplace(hist[:, -1, :])
            state[:] = nxt

    bad = int(P - alive.sum())
    return returns, bad


def multistep_loss_grad(W1, b1, W2, b2, in_mean, in_inv_std, out_mean, out_std,
                        hist0: np.ndarray, actions: np.ndarray, deltas: np.ndarray,
                        full_grad: bool = True, want_grad: bool = True):
    """Recursive n-step prediction loss and its weight gradients.

    hist0: (B, 4, 18) observation history at each segment's first state
    (newest frame equals the segment's first state); actions: (B, n, 12);
    deltas: (B, n, 18) ground-truth per-step state differences.

    loss = mean over segments of (1/n) * sum_t ||deltas[t] - f(x_t)||^2,
    where x_t is built from the recursively predicted state. With
    full_grad, gradients flow through the whole unroll (including the
    history frames and the state recursion); otherwise predicted states
    are treated as constants at each step.

    Returns (loss, (gW1, gb1, gW2, gb2)) or (loss, None).
    """
    B, n, _ = actions.shape
    in_dim = HISTORY_LEN * STATE_DIM + actions.shape[2]

    hist = np.asarray(hist0, dtype=np.float64).copy()
    _wrap_phases_inplace(hist)
    shat = hist[:, -1, :].copy()

    XN_all = np.empty((n, B, in_dim)) if want_grad else None
    H_all = np.empty((n, B, W1.shape[0])) if want_grad else None
    resid_all = np.empty((n, B, STATE_DIM))

    X = np.empty((B, in_dim))
    loss = 0.0
    for t in range(n):
        X[:, :HISTORY_LEN * STATE_DIM] = hist.reshape(B, -1)
        X[:, HISTORY_LEN * STATE_DIM:] = actions[:, t, :]
        XN = (X - in_mean) * in_inv_std
        H = np.tanh(XN @ W1.T + b1)
        pred = (H @ W2.T + b2) * out_std + out_mean
        resid = deltas[:, t, :] - pred
        resid_all[t] = resid
        if want_grad:
            XN_all[t] = XN
            H_all[t] = H
        loss += float(np.sum(resid * resid))

        shat = shat + pred
        hist[:, :-1, :] = hist[:, 1:, :]
        hist[:, -1, :] = shat
        _wrap_phases_inplace(hist[:, -1, :])

    scale = 1.0 / (B * n)
    loss *= scale
    if not want_grad:
        return loss, None

    gW1 = np.zeros_like(W1)
    gb1 = np.zeros_like(b1)
    gW2 = np.zeros_like(W2)
    gb2 = np.zeros_like(b2)
    # d loss / d shat_k for predicted states k = 1..n (index k-1 here)
    dshat = np.zeros((n + 1, B, STATE_DIM)) if full_grad else None

    for t in range(n - 1, -1, -1):
        g_pred = (-2.0 * scale) * resid_all[t]
        if full_grad:
            g_pred = g_pred + dshat[t + 1]
            if t >= 1:
                dshat[t] += dshat[t + 1]   # shat_{t+1} = shat_t + pred_t
        g_yn = g_pred * out_std
        H = H_all[t]
        XN = XN_all[t]
        gW2 += g_yn.T @ H
        gb2 += g_yn.sum(axis=0)
        g_h = g_yn @ W2
        g_pre = g_h * (1.0 - H * H)
        gW1 += g_pre.T @ XN
        gb1 += g_pre.sum(axis=0)
        if full_grad:
            g_x = (g_pre @ W1) * in_inv_std
            for j in range(HISTORY_LEN):
                k = t - (HISTORY_LEN - 1) + j   # frame j is predicted state k
                if k >= 1:
                    dshat[k] += g_x[:, j * STATE_DIM:(j + 1) * STATE_DIM]

    return loss, (gW1, gb1, gW2, gb2)

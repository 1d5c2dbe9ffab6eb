"""Learned dynamics model: a one-hidden-layer tanh network on a four-frame
observation history, predicting per-step state deltas.

Training minimizes the recursive n-step prediction loss: the model is
unrolled on its own predictions and penalized against the ground-truth
delta at every step, which suppresses compounding error over planning
horizons. Gradients flow through the full unroll by default (a config
switch stops them at each predicted state for comparison).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .replay import ReplayBuffer, SegmentDataset
from .state import ACTION_DIM, HISTORY_LEN, PHASE_START, STATE_DIM, TWO_PI

MODEL_MAGIC = b"GMPCMODL"
MODEL_VERSION = 1

HIDDEN_UNITS = 256
INPUT_DIM = HISTORY_LEN * STATE_DIM + ACTION_DIM
STD_FLOOR = 1e-6


@dataclass
class TrainingConfig:
    n: int = 20                       # multi-step unroll horizon
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    full_batch_threshold: int = 4096  # minibatch only above this many segments
    max_batches_per_epoch: int | None = None
    full_unroll_grad: bool = True     # False: stop gradients at predicted states
    early_stop_rel: float = 1e-3      # stop when best loss improves < 0.1% ...
    early_stop_window: int = 10       # ... over this many epochs

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("multi-step horizon n must be >= 1")


@dataclass
class DynamicsModel:
    """Weights plus input/output normalization statistics."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2", "in_mean", "in_std", "out_mean", "out_std"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))
        if self.W1.shape != (self.hidden, INPUT_DIM):
            raise ValueError(f"W1 must be ({self.hidden}, {INPUT_DIM})")
        if self.W2.shape != (STATE_DIM, self.hidden):
            raise ValueError(f"W2 must be ({STATE_DIM}, {self.hidden})")
        if np.any(self.in_std < STD_FLOOR) or np.any(self.out_std < STD_FLOOR):
            raise ValueError(f"normalization std must be floored at {STD_FLOOR}")

    @property
    def hidden(self) -> int:
        return len(self.b1)

    def predict_delta(self, history: np.ndarray, action: np.ndarray) -> np.ndarray:
        return predict_delta(self, history, action)

    def kernel_args(self) -> tuple:
        return (self.W1, self.b1, self.W2, self.b2,
                self.in_mean, 1.0 / self.in_std, self.out_mean, self.out_std)

    def copy(self) -> "DynamicsModel":
        return DynamicsModel(*(a.copy() for a in (
            self.W1, self.b1, self.W2, self.b2,
            self.in_mean, self.in_std, self.out_mean, self.out_std)))


def init_model(rng: np.random.Generator, hidden: int = HIDDEN_UNITS) -> DynamicsModel:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] init, unit normalization."""
    s1 = 1.0 / np.sqrt(INPUT_DIM)
    s2 = 1.0 / np.sqrt(hidden)
    return DynamicsModel(
        W1=rng.uniform(-s1, s1, (hidden, INPUT_DIM)),
        b1=rng.uniform(-s1, s1, hidden),
        W2=rng.uniform(-s2, s2, (STATE_DIM, hidden)),
        b2=rng.uniform(-s2, s2, STATE_DIM),
        in_mean=np.zeros(INPUT_DIM), in_std=np.ones(INPUT_DIM),
        out_mean=np.zeros(STATE_DIM), out_std=np.ones(STATE_DIM),
    )


def normalization_from_buffer(buffer: ReplayBuffer) -> tuple[np.ndarray, ...]:
    """Input/output stats from the full buffer, stds floored at 1e-6.

    State statistics are taken over the wrapped-phase view of the states,
    matching how frames enter the network.
    """
    states = buffer.all_states().copy()
    states[:, PHASE_START:] = np.mod(states[:, PHASE_START:], TWO_PI)
    actions = buffer.all_actions()
    deltas = buffer.all_step_deltas()
    s_mean, s_std = states.mean(axis=0), states.std(axis=0)
    a_mean, a_std = actions.mean(axis=0), actions.std(axis=0)
    in_mean = np.concatenate([np.tile(s_mean, HISTORY_LEN), a_mean])
    in_std = np.concatenate([np.tile(s_std, HISTORY_LEN), a_std])
    out_mean, out_std = deltas.mean(axis=0), deltas.std(axis=0)
    return (in_mean, np.maximum(in_std, STD_FLOOR),
            out_mean, np.maximum(out_std, STD_FLOOR))


def build_input(history: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Flat model input; phase entries of every frame wrapped to [0, 2pi).

    The wrap keeps prediction-time inputs identical to what the training
    kernels see (they wrap history frames the same way).
    """
    x = np.empty(INPUT_DIM)
    frames = x[:HISTORY_LEN * STATE_DIM].reshape(HISTORY_LEN, STATE_DIM)
    frames[:] = history
    frames[:, PHASE_START:] = np.mod(frames[:, PHASE_START:], TWO_PI)
    x[HISTORY_LEN * STATE_DIM:] = action
    return x


def predict_delta(model: DynamicsModel, history: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Unnormalized state delta; next state = current state + delta."""
    history = np.asarray(history, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if history.shape != (HISTORY_LEN, STATE_DIM):
        raise ValueError(f"history must be ({HISTORY_LEN}, {STATE_DIM}), got {history.shape}")
    if action.shape != (ACTION_DIM,):
        raise ValueError(f"action must be ({ACTION_DIM},), got {action.shape}")
    X = build_input(history, action)[None, :]
    return kernels.forward_batch(*model.kernel_args(), X)[0]


def rollout(model: DynamicsModel, history: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Recursive open-loop prediction over len(actions) steps.

    Each step feeds the previous *predicted* state back into the history
    window (phase entries wrapped to [0, 2pi) on input). Returns the
    predicted states, shape (n, 18).
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[1] != ACTION_DIM or len(actions) < 1:
        raise ValueError(f"actions must be (n>=1, {ACTION_DIM}), got {actions.shape}")
    hist = np.asarray(history, dtype=np.float64).copy()
    state = hist[-1].copy()
    out = np.empty((len(actions), STATE_DIM))
    for t, a in enumerate(actions):
        delta = model.predict_delta(hist, a)
        state = state + delta
        out[t] = state
        hist[:-1] = hist[1:]
        hist[-1] = state
        hist[-1, PHASE_START:] = np.mod(hist[-1, PHASE_START:], TWO_PI)
    return out


def single_step_loss(model: DynamicsModel, transitions: SegmentDataset) -> float:
    """Mean squared norm of one-step prediction residuals."""
    if transitions.n != 1:
        raise ValueError("single-step loss expects n=1 transitions")
    if len(transitions) == 0:
        raise ValueError("empty dataset")
    loss, _ = kernels.multistep_loss_grad(
        *model.kernel_args(), transitions.history0, transitions.actions,
        transitions.deltas, want_grad=False)
    return loss


def multi_step_loss(model: DynamicsModel, segments: SegmentDataset,
                    full_grad: bool = True, want_grad: bool = False):
    """Recursive n-step loss (and optionally gradients) over a dataset."""
    if len(segments) == 0:
        raise ValueError("empty dataset")
    loss, grads = kernels.multistep_loss_grad(
        *model.kernel_args(), segments.history0, segments.actions, segments.deltas,
        full_grad=full_grad, want_grad=want_grad)
    return (loss, grads) if want_grad else loss


class Adam:
    """Adam over the four weight arrays (beta1=0.9, beta2=0.999)."""

    def __init__(self, shapes, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def train(model: DynamicsModel, buffer: ReplayBuffer,
          config: TrainingConfig) -> tuple[DynamicsModel, list[float]]:
    """Fit the model to the full buffer with the n-step loss.

    Normalization statistics are recomputed from the buffer before
    optimizing. Training continues from the passed model's weights and
    returns a new snapshot plus the per-epoch loss curve. Deterministic
    given config.seed.
    """
    segments = buffer.segment_dataset(config.n)
    if len(segments) == 0:
        raise ValueError(
            f"buffer has no segment of length >= {config.n + 1} "
            f"(n={config.n} requires n+1 consecutive states)")

    model = model.copy()
    model.in_mean, model.in_std, model.out_mean, model.out_std = \
        normalization_from_buffer(buffer)

    params = [model.W1, model.b1, model.W2, model.b2]
    opt = Adam([p.shape for p in params], lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    B = len(segments)
    minibatch = B >= config.full_batch_threshold
    curve: list[float] = []
    best = np.inf
    recent_best: list[float] = []

    for _epoch in range(config.epochs):
        if minibatch:
            order = rng.permutation(B)
            starts = range(0, B, config.batch_size)
            if config.max_batches_per_epoch is not None:
                starts = list(starts)[:config.max_batches_per_epoch]
            losses = []
            for s in starts:
                idx = order[s:s + config.batch_size]
                loss, grads = kernels.multistep_loss_grad(
                    *model.kernel_args(),
                    segments.history0[idx], segments.actions[idx], segments.deltas[idx],
                    full_grad=config.full_unroll_grad, want_grad=True)
                opt.step(params, grads)
                losses.append(loss)
            epoch_loss = float(np.mean(losses))
        else:
            loss, grads = kernels.multistep_loss_grad(
                *model.kernel_args(),
                segments.history0, segments.actions, segments.deltas,
                full_grad=config.full_unroll_grad, want_grad=True)
            opt.step(params, grads)
            epoch_loss = loss
        curve.append(epoch_loss)

        best = min(best, epoch_loss)
        recent_best.append(best)
        if len(recent_best) > config.early_stop_window + 1:
            prev = recent_best[-config.early_stop_window - 1]
            if prev > 0 and (prev - best) / prev < config.early_stop_rel:
                break

    return model, curve


def multi_step_loss_tape(model: DynamicsModel, segments: SegmentDataset,
                         want_grad: bool = True):
    """Tape-autodiff reference of the n-step loss (and weight gradients).

    Builds the unrolled loss graph segment by segment with the tensor
    primitives; input vectors are assembled with constant selector matrices
    so concatenation stays inside the fixed primitive set. Slow; used to
    cross-check the fused kernels and for micro-scale experiments.
    """
    from . import tensor as tt

    B, n = len(segments), segments.n
    sel_frames = []
    for j in range(HISTORY_LEN):
        P = np.zeros((INPUT_DIM, STATE_DIM))
        P[j * STATE_DIM:(j + 1) * STATE_DIM] = np.eye(STATE_DIM)
        sel_frames.append(tt.Matrix(P))
    Pa = np.zeros((INPUT_DIM, ACTION_DIM))
    Pa[HISTORY_LEN * STATE_DIM:] = np.eye(ACTION_DIM)
    sel_action = tt.Matrix(Pa)

    def wrap_frame(shat: "tt.Node") -> "tt.Node":
        shift = np.zeros(STATE_DIM)
        ph = shat.value[PHASE_START:]
        shift[PHASE_START:] = TWO_PI * np.floor(ph / TWO_PI)
        return tt.sub(shat, tt.node(shift))

    with tt.Tape() as tape:
        W1 = tt.node(model.W1)
        b1 = tt.node(model.b1)
        W2 = tt.node(model.W2)
        b2 = tt.node(model.b2)
        in_mean = tt.node(model.in_mean)
        inv_std = tt.node(1.0 / model.in_std)
        out_mean = tt.node(model.out_mean)
        out_std = tt.node(model.out_std)

        total = tt.node(0.0)
        for b in range(B):
            hist = segments.history0[b].copy()
            hist[:, PHASE_START:] = np.mod(hist[:, PHASE_START:], TWO_PI)
            frames = [tt.node(hist[j]) for j in range(HISTORY_LEN)]
            shat = frames[-1]
            for t in range(n):
                x = tt.matvec(sel_frames[0], frames[0])
                for j in range(1, HISTORY_LEN):
                    x = tt.add(x, tt.matvec(sel_frames[j], frames[j]))
                x = tt.add(x, tt.matvec(sel_action, tt.node(segments.actions[b, t])))
                xn = tt.hadamard(tt.sub(x, in_mean), inv_std)
                h = tt.tanh(tt.add(tt.matvec(W1, xn), b1))
                yn = tt.add(tt.matvec(W2, h), b2)
                pred = tt.add(tt.hadamard(yn, out_std), out_mean)
                resid = tt.sub(tt.node(segments.deltas[b, t]), pred)
                total = tt.add(total, tt.vsum(tt.square(resid)))
                shat = tt.add(shat, pred)
                frames = frames[1:] + [wrap_frame(shat)]
        loss = tt.smul(1.0 / (B * n), total)

    if not want_grad:
        return float(loss.value), None
    grads = tape.backward(loss)
    return float(loss.value), (grads[W1], grads[b1], grads[W2], grads[b2])


# --------------------------------------------------------------------- io

def save_model(model: DynamicsModel, path: str | Path):
    path = Path(path)
    header = {
        "hidden": model.hidden,
        "input_dim": INPUT_DIM,
        "state_dim": STATE_DIM,
        "arrays": ["W1", "b1", "W2", "b2", "in_mean", "in_std", "out_mean", "out_std"],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(np.uint32(MODEL_VERSION).tobytes())
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for name in header["arrays"]:
            f.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())


def load_model(path: str | Path) -> DynamicsModel:
    raw = Path(path).read_bytes()
    off = 0

    def take(nbytes: int, what: str) -> bytes:
        nonlocal off
        if off + nbytes > len(raw):
            raise ValueError(f"truncated checkpoint: missing {what}")
        out = raw[off:off + nbytes]
        off += nbytes
        return out

    if take(8, "magic") != MODEL_MAGIC:
        raise ValueError(f"{path} is not a model checkpoint")
    version = int(np.frombuffer(take(4, "version"), dtype="<u4")[0])
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(take(8, "header length"), dtype="<u8")[0])
    header = json.loads(take(hlen, "header").decode("utf-8"))
    hidden, in_dim = header["hidden"], header["input_dim"]
    shapes = {
        "W1": (hidden, in_dim), "b1": (hidden,),
        "W2": (header["state_dim"], hidden), "b2": (header["state_dim"],),
        "in_mean": (in_dim,), "in_std": (in_dim,),
        "out_mean": (header["state_dim"],), "out_std": (header["state_dim"],),
    }
    arrays = {}
    for name in header["arrays"]:
        shape = shapes[name]
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(8 * count, name), dtype="<f8").reshape(shape).copy()
    return DynamicsModel(**arrays)

"""Small trainable syndrome MLP decoder with analytic input gradients.

The received vector is preprocessed into [|y|, s(y)]; a two-hidden-layer MLP
(softplus activations) maps it to per-bit sign-agreement logits, which are
recombined with sign(y) into probabilities that each codeword bit equals 1.
Only the magnitude path carries gradient: d|y|/dy = sign(y), and the syndrome
and sign recombination are piecewise constant in y (gradient zero through
them), which is exactly why attacks go through the smoothed objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codes import LinearCode, hard_demodulate, syndrome
from .decoders import DecoderHandle

PROB_CLAMP = 1e-7


class TrainingDivergence(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"training loss became non-finite at step {step}")
        self.step = step


@dataclass
class PreprocessedInput:
    magnitude: np.ndarray  # (n,) >= 0
    syndrome_bits: np.ndarray  # (n-k,) uint8
    concatenated: np.ndarray  # (n + (n-k),) float


def preprocess(code: LinearCode, y: np.ndarray) -> PreprocessedInput:
    y = np.asarray(y, dtype=np.float64)
    mag = np.abs(y)
    syn = syndrome(code, hard_demodulate(y))
    return PreprocessedInput(mag, syn, np.concatenate([mag, syn.astype(np.float64)]))


def preprocess_batch(code: LinearCode, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    syn = syndrome(code, hard_demodulate(y)).astype(np.float64)
    return np.concatenate([np.abs(y), syn], axis=1)


def bce_loss(probabilities: np.ndarray, target_bits: np.ndarray) -> float:
    """Mean over bits of the binary cross entropy, probabilities clamped at 1e-7."""
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.asarray(target_bits, dtype=np.float64)
    return float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))


def _softplus(z: np.ndarray) -> np.ndarray:
    # stable log(1 + e^z) without logaddexp (which is several times slower)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


@dataclass
class MlpDecoderModel:
    """Weights for the syndrome MLP; layer sizes [n+(n-k), h, h, n]."""

    code_id: str
    layer_sizes: tuple[int, int, int, int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    seed: int = 0

    @classmethod
    def init(cls, code: LinearCode, hidden: int = 128, seed: int = 0) -> "MlpDecoderModel":
        """He-style random hidden layers; the output layer starts at zero so a
        fresh model emits probability 0.5 everywhere."""
        d0 = code.n + (code.n - code.k)
        sizes = (d0, hidden, hidden, code.n)
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for i in range(3):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            if i == 2:
                ws.append(np.zeros((fan_in, fan_out)))
            else:
                ws.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            bs.append(np.zeros(fan_out))
        return cls(code_id=code.name, layer_sizes=sizes, weights=ws, biases=bs, seed=seed)

    def copy(self) -> "MlpDecoderModel":
        return MlpDecoderModel(
            self.code_id,
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def param_vector(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)


def _forward_core(model: MlpDecoderModel, x0: np.ndarray):
    """Hidden stack up to the agreement logits; returns intermediates for backward."""
    w1, w2, w3 = model.weights
    b1, b2, b3 = model.biases
    z1 = x0 @ w1 + b1
    a1 = _softplus(z1)
    z2 = a1 @ w2 + b2
    a2 = _softplus(z2)
    t = a2 @ w3 + b3
    return z1, a1, z2, a2, t


def forward_batch(model: MlpDecoderModel, code: LinearCode, y: np.ndarray) -> np.ndarray:
    """P(bit = 1) per position for a (B, n) batch of received vectors."""
    y = np.asarray(y, dtype=np.float64)
    s = np.where(y >= 0, 1.0, -1.0)
    x0 = preprocess_batch(code, y)
    *_, t = _forward_core(model, x0)
    return _sigmoid(-s * t)


def forward(model: MlpDecoderModel, code: LinearCode, y: np.ndarray) -> np.ndarray:
    return forward_batch(model, code, np.asarray(y, dtype=np.float64)[None, :])[0]


def _backward(model, code, y, targets, want_input_grad=False, want_param_grads=False):
    """Shared backward pass for the mean-BCE loss over a batch.

    Gradients are of the per-frame loss (mean over bits); parameter gradients
    are additionally averaged over the batch.
    """
    y = np.asarray(y, dtype=np.float64)
    b, n = y.shape
    s = np.where(y >= 0, 1.0, -1.0)
    x0 = preprocess_batch(code, y)
    z1, a1, z2, a2, t = _forward_core(model, x0)
    p = _sigmoid(-s * t)
    tgt = targets.astype(np.float64)
    loss = -np.mean(
        tgt * np.log(np.clip(p, PROB_CLAMP, 1)) + (1 - tgt) * np.log(np.clip(1 - p, PROB_CLAMP, 1)),
        axis=1,
    )
    dlogit = (p - tgt) / n  # d(per-frame loss)/d(bit-1 logit)
    dt = -s * dlogit
    w1, w2, w3 = model.weights
    da2 = dt @ w3.T
    dz2 = da2 * _sigmoid(z2)
    da1 = dz2 @ w2.T
    dz1 = da1 * _sigmoid(z1)
    out = {"loss": loss, "p": p}
    if want_param_grads:
        out["grads"] = (
            [x0.T @ dz1 / b, a1.T @ dz2 / b, a2.T @ dt / b],
            [dz1.mean(axis=0), dz2.mean(axis=0), dt.mean(axis=0)],
        )
    if want_input_grad:
        dx0 = dz1 @ w1.T
        out["dy"] = s * dx0[:, :n]  # syndrome columns carry zero gradient
    return out


def input_gradient(model: MlpDecoderModel, code: LinearCode, y: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Analytic gradient of the per-frame BCE w.r.t. y (sign-stable treatment)."""
    res = _backward(model, code, np.asarray(y, dtype=np.float64)[None, :], np.asarray(target)[None, :], want_input_grad=True)
    return res["dy"][0]


def input_gradient_batch(model, code, y, targets) -> np.ndarray:
    return _backward(model, code, y, targets, want_input_grad=True)["dy"]


@dataclass
class TrainConfig:
    snr_range_db: tuple[float, float] = (2.0, 8.0)
    batch_size: int = 128
    steps: int = 2000
    lr: float = 1e-2
    seed: int = 0
    all_zero: bool = False
    momentum: float = 0.0  # 0 = plain SGD

    def __post_init__(self):
        lo, hi = self.snr_range_db
        if not lo <= hi:
            raise ValueError("empty SNR range")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def train(model: MlpDecoderModel, code: LinearCode, config: TrainConfig) -> np.ndarray:
    """SGD (optionally with heavy-ball momentum) on BCE over random frames;
    per-batch SNR uniform in the configured range.

    Mutates the model in place and returns the per-step loss curve.
    Deterministic given config.seed.
    """
    from .channel import modulate, snr_to_sigma2
    from .codes import encode

    rng = np.random.default_rng(config.seed)
    losses = np.empty(config.steps)
    lo, hi = config.snr_range_db
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    for step in range(config.steps):
        snr_db = rng.uniform(lo, hi)
        sigma = np.sqrt(snr_to_sigma2(snr_db, code.rate))
        msgs = rng.integers(0, 2, size=(config.batch_size, code.k)).astype(np.uint8)
        if config.all_zero:
            msgs[:] = 0
        cws = encode(code, msgs)
        y = modulate(cws) + rng.standard_normal((config.batch_size, code.n)) * sigma
        res = _backward(model, code, y, cws, want_param_grads=True)
        loss = float(res["loss"].mean())
        if not np.isfinite(loss):
            raise TrainingDivergence(step)
        losses[step] = loss
        gw, gb = res["grads"]
        for w, v, g in zip(model.weights, vel_w, gw):
            v *= config.momentum
            v -= config.lr * g
            w += v
        for b_, v, g in zip(model.biases, vel_b, gb):
            v *= config.momentum
            v -= config.lr * g
            b_ += v
    return losses


# ---------------------------------------------------------------------------
# checkpoint format v1: three ASCII header lines, then raw little-endian f64.
#   decrob-mlp v1
#   <code_id> <d0> <d1> <d2> <d3> <seed>
#   <param_count>
# Parameters follow in layer order W1, b1, W2, b2, W3, b3 (weights row-major).

_MAGIC = b"decrob-mlp v1\n"


def save_checkpoint(model: MlpDecoderModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        d = model.layer_sizes
        fh.write(f"{model.code_id} {d[0]} {d[1]} {d[2]} {d[3]} {model.seed}\n".encode())
        params = model.param_vector()
        fh.write(f"{params.size}\n".encode())
        fh.write(params.astype("<f8").tobytes())


def load_checkpoint(path: str) -> MlpDecoderModel:
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise ValueError("not a decrob-mlp v1 checkpoint")
        fields = fh.readline().split()
        code_id = fields[0].decode()
        d = tuple(int(x) for x in fields[1:5])
        seed = int(fields[5])
        count = int(fh.readline())
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise ValueError("checkpoint truncated")
        flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    ws, bs, pos = [], [], 0
    for i in range(3):
        w = flat[pos : pos + d[i] * d[i + 1]].reshape(d[i], d[i + 1]).copy()
        pos += d[i] * d[i + 1]
        b = flat[pos : pos + d[i + 1]].copy()
        pos += d[i + 1]
        ws.append(w)
        bs.append(b)
    if pos != count:
        raise ValueError("parameter count mismatch")
    return MlpDecoderModel(code_id=code_id, layer_sizes=d, weights=ws, biases=bs, seed=seed)


class MlpDecoderHandle(DecoderHandle):
    """DecoderHandle wrapper over a trained (or fresh) MLP model."""

    differentiable = True
    black_box = False

    def __init__(self, model: MlpDecoderModel, name: str = "mlp"):
        self.model = model
        self.name = name

    def decode_batch(self, code, y, sigma2=None):
        y = np.asarray(y, dtype=np.float64)
        s = np.where(y >= 0, 1.0, -1.0)
        x0 = preprocess_batch(code, y)
        *_, t = _forward_core(self.model, x0)
        soft = s * t  # positive = bit 0
        bits = (soft < 0).astype(np.uint8)
        conv = ~syndrome(code, bits).any(axis=1)
        b = y.shape[0]
        return bits, soft, np.ones(b, dtype=np.int64), conv

    def loss_batch(self, code, y, targets, sigma2=None):
        res = _backward(self.model, code, np.asarray(y, dtype=np.float64), targets)
        return res["loss"]

    def input_gradient(self, code, y, target, sigma2=None):
        return input_gradient(self.model, code, y, target)

    def input_gradient_batch(self, code, y, targets, sigma2=None):
        return input_gradient_batch(self.model, code, y, targets)

    def loss_and_gradient_batch(self, code, y, targets, sigma2=None):
        res = _backward(self.model, code, np.asarray(y, dtype=np.float64), targets,
                        want_input_grad=True)
        return res["loss"], res["dy"]

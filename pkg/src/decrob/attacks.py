"""Sample-wise (FGM, PGD) and universal (UAP-Grad, UAP-PCA) attacks under
relative L2 energy constraints, plus the equal-norm random baseline.

Sample-wise budgets are per frame: eps = alpha * ||y||_2.  A universal delta
shares one budget across all frames, fixed at alpha * sqrt(n (1 + sigma^2)),
the expected received-signal norm, and recorded in the artifact metadata.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .channel import ReceivedFrame
from .codes import LinearCode
from .decoders import DecoderHandle
from .smoothing import SmoothingConfig, estimate_gradient, gradient_rows, smoothed_loss_rows

DEGENERATE_GRAD = 1e-12
BUDGET_SLACK = 1e-12


@dataclass(frozen=True)
class EnergyBudget:
    alpha: float
    epsilon: float

    def __post_init__(self):
        if self.alpha < 0 or self.epsilon < 0:
            raise ValueError("budget must be nonnegative")

    @classmethod
    def for_sample(cls, alpha: float, y: np.ndarray) -> "EnergyBudget":
        return cls(alpha, alpha * float(np.linalg.norm(y)))

    @classmethod
    def for_universal(cls, alpha: float, n: int, sigma2: float) -> "EnergyBudget":
        return cls(alpha, alpha * float(np.sqrt(n * (1.0 + sigma2))))


def project_l2(delta: np.ndarray, epsilon: float) -> np.ndarray:
    """Euclidean projection onto the ball ||delta||_2 <= epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    delta = np.asarray(delta, dtype=np.float64)
    nrm = np.linalg.norm(delta)
    if nrm <= epsilon:
        return delta.copy()
    return delta * (epsilon / nrm)


def _project_rows(deltas: np.ndarray, eps: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(deltas, axis=1)
    scale = np.where(nrm > eps, np.divide(eps, nrm, out=np.ones_like(nrm), where=nrm > 0), 1.0)
    return deltas * scale[:, None]


def random_baseline(n: int, budget: EnergyBudget, seed: int) -> np.ndarray:
    """Gaussian direction scaled to exactly the budget norm."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
    d = rng.standard_normal(n)
    return d * (budget.epsilon / np.linalg.norm(d))


def random_rows(b: int, n: int, eps: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5EED)))
    d = rng.standard_normal((b, n))
    return d * (eps / np.linalg.norm(d, axis=1))[:, None]


def _uniform_ball_rows(b: int, n: int, eps: np.ndarray, rng) -> np.ndarray:
    d = rng.standard_normal((b, n))
    d /= np.linalg.norm(d, axis=1)[:, None]
    radius = eps * rng.uniform(size=b) ** (1.0 / n)
    return d * radius[:, None]


@dataclass
class PerturbResult:
    delta: np.ndarray
    degenerate: bool = False
    loss_trace: np.ndarray | None = None


# ---------------------------------------------------------------------------
# sample-wise attacks


def fgm_rows(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    targets: np.ndarray,
    eps: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float,
    stream_base: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """One-step attack for each row: eps * g / ||g|| at delta = 0.

    Returns (deltas, degenerate flags); degenerate rows get a zero delta.
    """
    grads, _ = gradient_rows(decoder, code, y, np.zeros(code.n), targets, cfg, sigma2, stream=stream_base)
    nrm = np.linalg.norm(grads, axis=1)
    degenerate = nrm < DEGENERATE_GRAD
    safe = np.where(degenerate, 1.0, nrm)
    deltas = grads * (eps / safe)[:, None]
    deltas[degenerate] = 0.0
    return deltas, degenerate


def pgd_rows(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    targets: np.ndarray,
    eps: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float,
    t_steps: int = 20,
    step_scale: float = 1.2,
    stream_base: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Projected gradient ascent with random start; keeps the iterate with the
    highest recorded smoothed loss.

    Steps follow the L2 convention: each update moves a distance of
    step_scale * eps / t_steps along the normalized gradient, then projects.
    Returns (deltas, best smoothed losses).
    """
    b, n = y.shape
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x96D, stream_base)))
    # random start confined to one step length: the walk can then always reach
    # the boundary within its path budget (t_steps steps cover step_scale*eps)
    deltas = _uniform_ball_rows(b, n, step_scale * eps / t_steps, rng)
    step = (step_scale * eps / t_steps)[:, None]
    best_loss = np.full(b, -np.inf)
    best = deltas.copy()
    for t in range(t_steps):
        grads, losses = gradient_rows(
            decoder, code, y, deltas, targets, cfg, sigma2, stream=stream_base + t + 1
        )
        better = losses > best_loss
        best_loss[better] = losses[better]
        best[better] = deltas[better]
        gn = np.linalg.norm(grads, axis=1, keepdims=True)
        direction = np.where(gn > DEGENERATE_GRAD, grads / np.maximum(gn, DEGENERATE_GRAD), 0.0)
        deltas = _project_rows(deltas + step * direction, eps)
    losses = smoothed_loss_rows(
        decoder, code, y, deltas, targets, cfg, sigma2, stream=stream_base + t_steps + 1
    )
    better = losses > best_loss
    best_loss[better] = losses[better]
    best[better] = deltas[better]
    return best, best_loss


def fgm_attack(
    decoder: DecoderHandle,
    code: LinearCode,
    frame: ReceivedFrame,
    budget: EnergyBudget,
    cfg: SmoothingConfig,
) -> PerturbResult:
    """Single-step attack on one frame: eps * g / ||g|| at delta = 0.

    Estimates the smoothed gradient with cfg.estimator; a vanishing gradient
    yields a zero perturbation with the degenerate flag set.
    """
    est = estimate_gradient(
        decoder, code, frame.received, np.zeros_like(frame.received),
        frame.codeword, cfg, frame.snr.sigma2,
    )
    nrm = np.linalg.norm(est.gradient)
    if nrm < DEGENERATE_GRAD:
        return PerturbResult(np.zeros_like(frame.received), degenerate=True)
    return PerturbResult(est.gradient * (budget.epsilon / nrm))


def pgd_attack(
    decoder: DecoderHandle,
    code: LinearCode,
    frame: ReceivedFrame,
    budget: EnergyBudget,
    cfg: SmoothingConfig,
    t_steps: int = 20,
) -> PerturbResult:
    deltas, losses = pgd_rows(
        decoder,
        code,
        frame.received[None, :],
        frame.codeword[None, :],
        np.array([budget.epsilon]),
        cfg,
        frame.snr.sigma2,
        t_steps=t_steps,
    )
    return PerturbResult(deltas[0], loss_trace=losses)


def attack_frame(
    decoder: DecoderHandle,
    code: LinearCode,
    frame: ReceivedFrame,
    budget: EnergyBudget,
    cfg: SmoothingConfig,
    kind: str = "pgd",
    t_steps: int = 20,
) -> PerturbResult:
    """Craft a sample-wise perturbation for one frame (kind: fgm | pgd | random)."""
    if kind == "random":
        return PerturbResult(random_baseline(code.n, budget, cfg.seed))
    if kind == "fgm":
        deltas, degenerate = fgm_rows(
            decoder, code, frame.received[None, :], frame.codeword[None, :],
            np.array([budget.epsilon]), cfg, frame.snr.sigma2,
        )
        return PerturbResult(deltas[0], degenerate=bool(degenerate[0]))
    if kind == "pgd":
        deltas, losses = pgd_rows(
            decoder, code, frame.received[None, :], frame.codeword[None, :],
            np.array([budget.epsilon]), cfg, frame.snr.sigma2, t_steps=t_steps,
        )
        return PerturbResult(deltas[0], loss_trace=losses)
    raise ValueError(f"unknown sample-wise attack kind {kind!r}")


# ---------------------------------------------------------------------------
# universal attacks


@dataclass
class FrameBatch:
    """Training frames for universal attacks: received rows plus loss targets."""

    code: LinearCode
    received: np.ndarray  # (N, n)
    targets: np.ndarray  # (N, n) codeword bits
    sigma2: float

    def __post_init__(self):
        if self.received.ndim != 2 or self.received.shape != self.targets.shape:
            raise ValueError("received and targets must both be (N, n)")


@dataclass
class GradientBatch:
    q: np.ndarray  # (N, n) per-sample smoothed gradients at delta = 0
    norms: np.ndarray
    grad_cap: float  # observed max ||q_i||

    @classmethod
    def collect(cls, decoder, frames: FrameBatch, cfg: SmoothingConfig) -> "GradientBatch":
        q, _ = gradient_rows(
            decoder, frames.code, frames.received, np.zeros(frames.code.n),
            frames.targets, cfg, frames.sigma2, stream=0,
        )
        norms = np.linalg.norm(q, axis=1)
        return cls(q=q, norms=norms, grad_cap=float(norms.max(initial=0.0)))


@dataclass
class AttackArtifact:
    kind: str
    code_id: str
    alpha: float
    epsilon: float
    source_decoder: str
    seed: int
    hyperparameters: dict = field(default_factory=dict)
    delta: np.ndarray | None = None

    def __post_init__(self):
        if self.delta is not None:
            nrm = float(np.linalg.norm(self.delta))
            if nrm > self.epsilon + BUDGET_SLACK:
                raise ValueError(f"delta norm {nrm} exceeds budget {self.epsilon}")


def uap_grad_attack(
    decoder: DecoderHandle,
    frames: FrameBatch,
    budget: EnergyBudget,
    cfg: SmoothingConfig,
    lr: float = 0.05,
    batches: int = 50,
    batch_size: int | None = None,
) -> AttackArtifact:
    """Stochastic projected gradient ascent on the empirical smoothed objective.

    Walks the training frames in fixed-size mini-batches (cycling as needed),
    taking one projected step of length lr along the normalized batch gradient
    per mini-batch; deterministic given cfg.seed.
    """
    n_frames = frames.received.shape[0]
    if n_frames < 1:
        raise ValueError("need at least one training frame")
    bs = batch_size or max(1, n_frames // batches)
    delta = np.zeros(frames.code.n)
    for t in range(batches):
        idx = (np.arange(bs) + t * bs) % n_frames
        grads, _ = gradient_rows(
            decoder, frames.code, frames.received[idx], delta,
            frames.targets[idx], cfg, frames.sigma2, stream=t + 1,
        )
        g = grads.mean(axis=0)
        gn = np.linalg.norm(g)
        if gn > DEGENERATE_GRAD:
            delta = project_l2(delta + lr * g / gn, budget.epsilon)
    obj_before = float(
        smoothed_loss_rows(
            decoder, frames.code, frames.received, np.zeros(frames.code.n),
            frames.targets, cfg, frames.sigma2, stream=batches + 1,
        ).mean()
    )
    obj_after = float(
        smoothed_loss_rows(
            decoder, frames.code, frames.received, delta,
            frames.targets, cfg, frames.sigma2, stream=batches + 1,
        ).mean()
    )
    return AttackArtifact(
        kind="uap_grad",
        code_id=frames.code.name,
        alpha=budget.alpha,
        epsilon=budget.epsilon,
        source_decoder=decoder.name,
        seed=cfg.seed,
        hyperparameters={
            "lr": lr,
            "batches": batches,
            "batch_size": bs,
            "train_frames": n_frames,
            "objective_before": obj_before,
            "objective_after": obj_after,
            "nu": cfg.nu,
            "samples": cfg.samples,
            "estimator": cfg.estimator,
        },
        delta=delta,
    )


def power_iteration(
    a: np.ndarray, tol: float = 1e-10, max_iter: int = 10000, seed: int = 0
) -> tuple[float, np.ndarray, bool, int]:
    """Dominant eigenpair of a symmetric PSD matrix by power iteration.

    Stops when the residual ||A v - lam v|| <= tol * max(lam, tiny).
    Returns (eigenvalue, unit vector, converged, iterations).
    """
    n = a.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA11)))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = a @ v
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return 0.0, v, True, it  # operating in the nullspace: eigenvalue 0
        v = w / wn
        lam = float(v @ (a @ v))
        if np.linalg.norm(a @ v - lam * v) <= tol * max(lam, 1e-30):
            return lam, v, True, it
    return lam, v, False, max_iter


def uap_pca_attack(
    decoder: DecoderHandle,
    frames: FrameBatch,
    budget: EnergyBudget,
    cfg: SmoothingConfig,
) -> AttackArtifact:
    """Universal direction as the top eigenvector of the gradient second moment.

    Falls back to a dense eigendecomposition if power iteration stalls (tiny
    eigengap); the +/- sign is fixed by evaluating the empirical smoothed
    objective at both signed perturbations.
    """
    n_frames = frames.received.shape[0]
    if n_frames < 2:
        raise ValueError("UAP-PCA needs at least two frames")
    gb = GradientBatch.collect(decoder, frames, cfg)
    sigma_q = gb.q.T @ gb.q / n_frames
    lam1, u, converged, iters = power_iteration(sigma_q, seed=cfg.seed)
    if not converged:
        evals, evecs = np.linalg.eigh(sigma_q)
        lam1, u = float(evals[-1]), evecs[:, -1]
        lam2 = float(evals[-2]) if len(evals) > 1 else 0.0
    else:
        deflated = sigma_q - lam1 * np.outer(u, u)
        lam2 = power_iteration(deflated, seed=cfg.seed + 1)[0]
    candidates = np.stack([budget.epsilon * u, -budget.epsilon * u])
    scores = [
        float(
            smoothed_loss_rows(
                decoder, frames.code, frames.received, cand,
                frames.targets, cfg, frames.sigma2, stream=0x51,
            ).mean()
        )
        for cand in candidates
    ]
    pick = int(np.argmax(scores))
    return AttackArtifact(
        kind="uap_pca",
        code_id=frames.code.name,
        alpha=budget.alpha,
        epsilon=budget.epsilon,
        source_decoder=decoder.name,
        seed=cfg.seed,
        hyperparameters={
            "lambda1": lam1,
            "lambda2": lam2,
            "eigengap": lam1 - lam2,
            "power_iterations": iters,
            "power_converged": bool(converged),
            "sign": 1 if pick == 0 else -1,
            "train_frames": n_frames,
            "grad_cap": gb.grad_cap,
            "nu": cfg.nu,
            "samples": cfg.samples,
            "estimator": cfg.estimator,
        },
        delta=candidates[pick],
    )


# ---------------------------------------------------------------------------
# artifact serialization: text header plus decimal floats one per line


def save_artifact(artifact: AttackArtifact, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("decrob-attack v1\n")
        fh.write(f"kind: {artifact.kind}\n")
        fh.write(f"code: {artifact.code_id}\n")
        fh.write(f"alpha: {artifact.alpha!r}\n")
        fh.write(f"epsilon: {artifact.epsilon!r}\n")
        fh.write(f"source_decoder: {artifact.source_decoder}\n")
        fh.write(f"seed: {artifact.seed}\n")
        fh.write(f"hyperparameters: {json.dumps(artifact.hyperparameters)}\n")
        if artifact.delta is None:
            fh.write("delta: none\n")
        else:
            fh.write(f"delta: {artifact.delta.size}\n")
            for v in artifact.delta:
                fh.write(f"{v!r}\n")


def load_artifact(path: str) -> AttackArtifact:
    with open(path) as fh:
        if fh.readline().strip() != "decrob-attack v1":
            raise ValueError("not a decrob attack artifact")
        fields = {}
        for key in ("kind", "code", "alpha", "epsilon", "source_decoder", "seed", "hyperparameters", "delta"):
            line = fh.readline()
            name, _, value = line.partition(":")
            if name.strip() != key:
                raise ValueError(f"expected field {key!r}, got {name.strip()!r}")
            fields[key] = value.strip()
        if fields["delta"] == "none":
            delta = None
        else:
            count = int(fields["delta"])
            delta = np.array([float(fh.readline()) for _ in range(count)])
    return AttackArtifact(
        kind=fields["kind"],
        code_id=fields["code"],
        alpha=float(fields["alpha"]),
        epsilon=float(fields["epsilon"]),
        source_decoder=fields["source_decoder"],
        seed=int(fields["seed"]),
        hyperparameters=json.loads(fields["hyperparameters"]),
        delta=delta,
    )

"""Gaussian-smoothed loss evaluation and gradient estimation.

Two estimators of the smoothed-loss gradient: a Monte Carlo average of
analytic input gradients (differentiable decoders only) and the loss-only
Stein-identity estimator with antithetic pairing (any decoder, including
black boxes).  All losses are clipped to [0, C] so the smoothness and
concentration assumptions hold by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, stats

from .codes import LinearCode
from .decoders import CapabilityError, DecoderHandle

_ESTIMATORS = ("backprop_mc", "stein")


@dataclass(frozen=True)
class SmoothingConfig:
    nu: float = 0.1
    samples: int = 128
    seed: int = 0
    estimator: str = "backprop_mc"
    loss_clip: float = 10.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be > 0")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.loss_clip <= 0:
            raise ValueError("loss_clip must be > 0")
        if self.estimator not in _ESTIMATORS:
            raise ValueError(f"estimator must be one of {_ESTIMATORS}")


@dataclass
class GradientEstimate:
    gradient: np.ndarray
    samples_used: int
    estimator: str
    variance: np.ndarray  # per-coordinate variance of the mean estimate


def _rng(seed: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + extra))


def _clipped_losses(decoder, code, u, targets, cfg, sigma2):
    raw = decoder.loss_batch(code, u, targets, sigma2)
    return np.clip(raw, 0.0, cfg.loss_clip)


def smoothed_loss(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    delta: np.ndarray,
    target: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float = 1.0,
) -> float:
    """Monte Carlo estimate of E_V[ min(loss(y + delta + V), C) ]."""
    y = np.asarray(y, dtype=np.float64)
    v = _rng(cfg.seed).standard_normal((cfg.samples, y.size)) * cfg.nu
    u = y[None, :] + np.asarray(delta, dtype=np.float64)[None, :] + v
    targets = np.broadcast_to(np.asarray(target), (cfg.samples, y.size))
    return float(_clipped_losses(decoder, code, u, targets, cfg, sigma2).mean())


def grad_backprop_mc(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    delta: np.ndarray,
    target: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float = 1.0,
) -> GradientEstimate:
    """Average of analytic input gradients at y + delta + V_m.

    Samples whose raw loss sits above the clip C contribute zero gradient, so
    the estimate targets the same clipped objective as the loss-only path.
    """
    if not decoder.differentiable:
        raise CapabilityError(f"{decoder.name} is not differentiable; use the stein estimator")
    y = np.asarray(y, dtype=np.float64)
    v = _rng(cfg.seed).standard_normal((cfg.samples, y.size)) * cfg.nu
    u = y[None, :] + np.asarray(delta, dtype=np.float64)[None, :] + v
    targets = np.broadcast_to(np.asarray(target), (cfg.samples, y.size))
    raw, grads = decoder.loss_and_gradient_batch(code, u, targets, sigma2)
    grads = np.where((raw < cfg.loss_clip)[:, None], grads, 0.0)
    mean = grads.mean(axis=0)
    var = grads.var(axis=0, ddof=1) / cfg.samples if cfg.samples > 1 else np.zeros_like(mean)
    return GradientEstimate(mean, cfg.samples, "backprop_mc", var)


def grad_stein(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    delta: np.ndarray,
    target: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float = 1.0,
) -> GradientEstimate:
    """Loss-only estimator (1/(M nu^2)) sum_m loss_m V_m with antithetic pairs.

    Requires an even sample count; the pairing makes the estimate exactly zero
    for constant losses.
    """
    if cfg.samples % 2 != 0:
        raise ValueError("stein estimator needs an even sample count")
    y = np.asarray(y, dtype=np.float64)
    half = cfg.samples // 2
    v = _rng(cfg.seed).standard_normal((half, y.size)) * cfg.nu
    base = y[None, :] + np.asarray(delta, dtype=np.float64)[None, :]
    targets = np.broadcast_to(np.asarray(target), (half, y.size))
    lp = _clipped_losses(decoder, code, base + v, targets, cfg, sigma2)
    lm = _clipped_losses(decoder, code, base - v, targets, cfg, sigma2)
    terms = (lp - lm)[:, None] * v / (2.0 * cfg.nu**2)
    mean = terms.mean(axis=0)
    var = terms.var(axis=0, ddof=1) / half if half > 1 else np.zeros_like(mean)
    return GradientEstimate(mean, cfg.samples, "stein", var)


def estimate_gradient(
    decoder: DecoderHandle,
    code: LinearCode,
    y: np.ndarray,
    delta: np.ndarray,
    target: np.ndarray,
    cfg: SmoothingConfig,
    sigma2: float = 1.0,
) -> GradientEstimate:
    if cfg.estimator == "backprop_mc":
        return grad_backprop_mc(decoder, code, y, delta, target, cfg, sigma2)
    return grad_stein(decoder, code, y, delta, target, cfg, sigma2)


@lru_cache(maxsize=1)
def abs_z2_minus_one() -> float:
    """E|Z^2 - 1| for standard normal Z, by quadrature split at the kinks."""
    f = lambda z: abs(z * z - 1.0) * stats.norm.pdf(z)
    total = 0.0
    for a, b in [(-np.inf, -1.0), (-1.0, 1.0), (1.0, np.inf)]:
        val, _ = integrate.quad(f, a, b)
        total += val
    return total


def beta_bound(cfg: SmoothingConfig) -> float:
    """Gradient-Lipschitz constant bound (C/nu^2) E|Z^2-1| of the smoothed loss."""
    return cfg.loss_clip / cfg.nu**2 * abs_z2_minus_one()


# ---------------------------------------------------------------------------
# batched variants used by the attack loops; one frame per row, draws keyed by
# (cfg.seed, stream) so repeated calls with the same key are bit-stable.


def _chunks(total: int, size: int):
    for lo in range(0, total, size):
        yield lo, min(lo + size, total)


def smoothed_loss_rows(
    decoder, code, y, deltas, targets, cfg, sigma2=1.0, stream: int = 0, max_rows: int = 262144
) -> np.ndarray:
    """Smoothed loss per frame for (B, n) inputs; deltas may be (n,) or (B, n)."""
    y = np.asarray(y, dtype=np.float64)
    b, n = y.shape
    u0 = y + np.asarray(deltas, dtype=np.float64)
    out = np.empty(b)
    rows_per = max(1, max_rows // cfg.samples)
    for lo, hi in _chunks(b, rows_per):
        m = hi - lo
        v = _rng(cfg.seed, stream, lo).standard_normal((m, cfg.samples, n)) * cfg.nu
        u = (u0[lo:hi, None, :] + v).reshape(m * cfg.samples, n)
        t = np.repeat(targets[lo:hi], cfg.samples, axis=0)
        losses = _clipped_losses(decoder, code, u, t, cfg, sigma2)
        out[lo:hi] = losses.reshape(m, cfg.samples).mean(axis=1)
    return out


def gradient_rows(
    decoder, code, y, deltas, targets, cfg, sigma2=1.0, stream: int = 0, max_rows: int = 262144
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame smoothed gradient estimates and smoothed losses, (B, n) and (B,).

    Dispatches on cfg.estimator like estimate_gradient; the returned losses
    reuse the same Monte Carlo draws.
    """
    y = np.asarray(y, dtype=np.float64)
    b, n = y.shape
    u0 = y + np.asarray(deltas, dtype=np.float64)
    grads = np.empty((b, n))
    losses = np.empty(b)
    backprop = cfg.estimator == "backprop_mc"
    if backprop and not decoder.differentiable:
        raise CapabilityError(f"{decoder.name} is not differentiable; use the stein estimator")
    m_samp = cfg.samples if backprop else cfg.samples // 2
    if not backprop and cfg.samples % 2 != 0:
        raise ValueError("stein estimator needs an even sample count")
    rows_per = max(1, max_rows // max(m_samp, 1))
    for lo, hi in _chunks(b, rows_per):
        m = hi - lo
        v = _rng(cfg.seed, stream, lo).standard_normal((m, m_samp, n)) * cfg.nu
        t = np.repeat(targets[lo:hi], m_samp, axis=0)
        if backprop:
            u = (u0[lo:hi, None, :] + v).reshape(m * m_samp, n)
            raw, g = decoder.loss_and_gradient_batch(code, u, t, sigma2)
            g = np.where((raw < cfg.loss_clip)[:, None], g, 0.0)
            grads[lo:hi] = g.reshape(m, m_samp, n).mean(axis=1)
            lv = np.clip(raw, 0.0, cfg.loss_clip).reshape(m, m_samp)
            losses[lo:hi] = lv.mean(axis=1)
        else:
            up = (u0[lo:hi, None, :] + v).reshape(m * m_samp, n)
            um = (u0[lo:hi, None, :] - v).reshape(m * m_samp, n)
            lp = _clipped_losses(decoder, code, up, t, cfg, sigma2).reshape(m, m_samp)
            lm = _clipped_losses(decoder, code, um, t, cfg, sigma2).reshape(m, m_samp)
            grads[lo:hi] = ((lp - lm)[:, :, None] * v).mean(axis=1) / (2.0 * cfg.nu**2)
            losses[lo:hi] = 0.5 * (lp.mean(axis=1) + lm.mean(axis=1))
    return grads, losses

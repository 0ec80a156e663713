"""Classical decoders behind a uniform handle: SP/MS belief propagation,
successive cancellation for polar codes, and an exhaustive ML oracle.

All decoders are stateless and operate on batches of frames; the per-frame
decode() entry point is a thin wrapper.  LLR convention: lambda = 2y/sigma^2,
positive LLR means bit 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import LinearCode, hard_demodulate, syndrome

LLR_CLIP = 30.0
_TANH_EPS = 1e-15
_PROB_CLAMP = 1e-7


class CapabilityError(RuntimeError):
    """Requested an interface the decoder does not expose."""


@dataclass
class DecodeResult:
    bits_hat: np.ndarray  # (n,) uint8
    soft: np.ndarray  # (n,) float, positive = bit 0
    iterations_used: int
    converged: bool


def bits_to_probs(soft: np.ndarray) -> np.ndarray:
    """Map bit-0-positive scores to P(bit = 1), clamped away from {0, 1}."""
    p = 1.0 / (1.0 + np.exp(np.clip(soft, -500, 500)))
    return np.clip(p, _PROB_CLAMP, 1.0 - _PROB_CLAMP)


class DecoderHandle:
    """Uniform decoder interface.

    Subclasses implement decode_batch; everything else (per-frame decode, the
    bounded surrogate loss used by gradient estimators) is shared.
    """

    name: str = "decoder"
    differentiable: bool = False
    black_box: bool = True

    def decode_batch(
        self, code: LinearCode, y: np.ndarray, sigma2: float
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Returns (bits (B,n), soft (B,n), iterations (B,), converged (B,))."""
        raise NotImplementedError

    def decode(self, code: LinearCode, y: np.ndarray, sigma2: float) -> DecodeResult:
        bits, soft, iters, conv = self.decode_batch(code, np.asarray(y, dtype=np.float64)[None, :], sigma2)
        return DecodeResult(bits[0], soft[0], int(iters[0]), bool(conv[0]))

    def loss_batch(
        self, code: LinearCode, y: np.ndarray, targets: np.ndarray, sigma2: float
    ) -> np.ndarray:
        """Per-frame BCE of the decoder's soft output against target bits."""
        _, soft, _, _ = self.decode_batch(code, y, sigma2)
        p = bits_to_probs(soft)
        t = targets.astype(np.float64)
        return -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p), axis=1)

    def input_gradient(
        self, code: LinearCode, y: np.ndarray, target: np.ndarray, sigma2: float
    ) -> np.ndarray:
        raise CapabilityError(f"{self.name} does not expose input gradients")

    def input_gradient_batch(
        self, code: LinearCode, y: np.ndarray, targets: np.ndarray, sigma2: float
    ) -> np.ndarray:
        raise CapabilityError(f"{self.name} does not expose input gradients")

    def loss_and_gradient_batch(
        self, code: LinearCode, y: np.ndarray, targets: np.ndarray, sigma2: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Raw losses and input gradients in one pass (differentiable decoders)."""
        return (
            self.loss_batch(code, y, targets, sigma2),
            self.input_gradient_batch(code, y, targets, sigma2),
        )


# ---------------------------------------------------------------------------
# belief propagation


class _TannerGraph:
    """Edge arrays of H in check-major order plus var-major gather indices."""

    def __init__(self, h: np.ndarray):
        m, n = h.shape
        chk, var = np.nonzero(h)
        order = np.lexsort((var, chk))
        self.chk = chk[order]
        self.var = var[order]
        self.n_edges = len(self.chk)
        counts = np.bincount(self.chk, minlength=m)
        self.chk_ptr = np.concatenate([[0], np.cumsum(counts)])[:-1].astype(np.int64)
        v_order = np.argsort(self.var, kind="stable")
        self.by_var = v_order
        vcounts = np.bincount(self.var, minlength=n)
        self.var_ptr = np.concatenate([[0], np.cumsum(vcounts)])[:-1].astype(np.int64)
        self.m, self.n = m, n

    def check_totals(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.chk_ptr, axis=1)

    def var_totals(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x[:, self.by_var], self.var_ptr, axis=1)


_GRAPH_CACHE: dict[tuple[int, bool], _TannerGraph] = {}

# full dual-space BP pays off only on very short, dense graphs
REDUNDANT_CHECK_MAX_PARITY = 6


def _dual_span_rows(h: np.ndarray) -> np.ndarray:
    """All 2^m - 1 nonzero GF(2) combinations of the rows of h."""
    m = h.shape[0]
    rows = []
    for mask in range(1, 2**m):
        row = np.zeros(h.shape[1], dtype=np.uint8)
        for b in range(m):
            if (mask >> b) & 1:
                row ^= h[b]
        rows.append(row)
    return np.array(rows)


def _graph(code: LinearCode, redundant: bool) -> _TannerGraph:
    key = (id(code), redundant)
    if key not in _GRAPH_CACHE:
        h = np.asarray(code.H)
        if redundant:
            h = _dual_span_rows(h)
        _GRAPH_CACHE[key] = _TannerGraph(h)
    return _GRAPH_CACHE[key]


def _sp_check_update(q: np.ndarray, g: _TannerGraph) -> np.ndarray:
    """Tanh-rule extrinsic messages; exact zero inputs handled explicitly."""
    t = np.tanh(np.clip(q, -LLR_CLIP, LLR_CLIP) / 2.0)
    zero = t == 0.0
    logs = np.where(zero, 0.0, np.log(np.abs(np.where(zero, 1.0, t))))
    neg = (t < 0).astype(np.int64)
    log_sum = g.check_totals(logs)[:, g.chk]
    neg_sum = g.check_totals(neg)[:, g.chk]
    zero_cnt = g.check_totals(zero.astype(np.int64))[:, g.chk]
    total_sign = 1.0 - 2.0 * (neg_sum % 2)
    own_sign = np.where(t < 0, -1.0, 1.0)
    # no zeros among the other edges: divide out own contribution
    prod_excl = total_sign * own_sign * np.exp(log_sum - logs)
    # exactly one zero: only that edge sees a nonzero product
    prod_one_zero = np.where(zero, total_sign * np.exp(log_sum), 0.0)
    prod = np.where(zero_cnt == 0, prod_excl, np.where(zero_cnt == 1, prod_one_zero, 0.0))
    prod = np.clip(prod, -1.0 + _TANH_EPS, 1.0 - _TANH_EPS)
    return 2.0 * np.arctanh(prod)


def _ms_check_update(q: np.ndarray, g: _TannerGraph, scale: float) -> np.ndarray:
    """Min-sum extrinsic messages: sign product times smallest other magnitude."""
    mag = np.abs(q)
    m1 = np.minimum.reduceat(mag, g.chk_ptr, axis=1)[:, g.chk]
    is_min = mag == m1
    cum = np.cumsum(is_min, axis=1)
    seg_start = cum[:, g.chk_ptr] - is_min[:, g.chk_ptr]
    first_min = is_min & ((cum - seg_start[:, g.chk]) == 1)
    masked = np.where(first_min, np.inf, mag)
    m2 = np.minimum.reduceat(masked, g.chk_ptr, axis=1)[:, g.chk]
    mag_excl = np.where(first_min, m2, m1)
    neg = (q < 0).astype(np.int64)
    neg_sum = g.check_totals(neg)[:, g.chk]
    total_sign = 1.0 - 2.0 * (neg_sum % 2)
    own_sign = np.where(q < 0, -1.0, 1.0)
    r = total_sign * own_sign * mag_excl * scale
    return np.clip(r, -LLR_CLIP, LLR_CLIP)


class _BPDecoder(DecoderHandle):
    """Flooding-schedule BP with early termination on zero syndrome.

    redundant_checks: "auto" runs message passing over the full nonzero dual
    space when the code has at most REDUNDANT_CHECK_MAX_PARITY parity bits
    (short dense graphs decode much closer to ML that way); True/False force
    the choice.  Convergence is always reported against the code's own H.
    """

    def __init__(self, max_iter: int = 10, redundant_checks: str | bool = "auto"):
        self.max_iter = max_iter
        self.redundant_checks = redundant_checks

    def _check_update(self, q: np.ndarray, g: _TannerGraph) -> np.ndarray:
        raise NotImplementedError

    def _use_redundant(self, code: LinearCode) -> bool:
        if self.redundant_checks == "auto":
            return (code.n - code.k) <= REDUNDANT_CHECK_MAX_PARITY
        return bool(self.redundant_checks)

    def decode_batch(self, code, y, sigma2):
        y = np.asarray(y, dtype=np.float64)
        b, n = y.shape
        g = _graph(code, self._use_redundant(code))
        lam = 2.0 * y / sigma2
        bits = hard_demodulate(y)
        soft = lam.copy()
        iters = np.zeros(b, dtype=np.int64)
        conv = ~syndrome(code, bits).any(axis=1)
        active = ~conv
        if active.any():
            q = np.broadcast_to(lam[:, g.var], (b, g.n_edges)).copy()
            r = np.zeros_like(q)
            for it in range(1, self.max_iter + 1):
                r[active] = self._check_update(q[active], g)
                post = lam + _var_totals_into(r, g)
                q = post[:, g.var] - r
                q = np.clip(q, -LLR_CLIP, LLR_CLIP)
                new_bits = hard_demodulate(post)
                now = active & ~syndrome(code, new_bits).any(axis=1)
                upd = active
                bits[upd] = new_bits[upd]
                soft[upd] = post[upd]
                iters[upd] = it
                conv |= now
                active = active & ~now
                if not active.any():
                    break
        return bits, soft, iters, conv


def _var_totals_into(r: np.ndarray, g: _TannerGraph) -> np.ndarray:
    return np.add.reduceat(r[:, g.by_var], g.var_ptr, axis=1)


class SumProductDecoder(_BPDecoder):
    name = "sum_product"

    def _check_update(self, q, g):
        return _sp_check_update(q, g)


class MinSumDecoder(_BPDecoder):
    name = "min_sum"

    def __init__(self, max_iter: int = 10, scale: float = 1.0, redundant_checks: str | bool = "auto"):
        super().__init__(max_iter, redundant_checks)
        self.scale = scale

    def _check_update(self, q, g):
        return _ms_check_update(q, g, self.scale)


# ---------------------------------------------------------------------------
# successive cancellation for polar codes


def _f_combine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    t = np.tanh(np.clip(a, -LLR_CLIP, LLR_CLIP) / 2.0) * np.tanh(
        np.clip(b, -LLR_CLIP, LLR_CLIP) / 2.0
    )
    return 2.0 * np.arctanh(np.clip(t, -1.0 + _TANH_EPS, 1.0 - _TANH_EPS))


def _sc_recurse(llr: np.ndarray, frozen: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Returns (u bits, codeword bits) for this sub-block, batch-first."""
    b, n = llr.shape
    if n == 1:
        if frozen[0]:
            u = np.zeros((b, 1), dtype=np.uint8)
        else:
            u = (llr < 0).astype(np.uint8)
        return u, u.copy()
    h = n // 2
    la = _f_combine(llr[:, :h], llr[:, h:])
    ua, ca = _sc_recurse(la, frozen[:h])
    lb = llr[:, h:] + (1.0 - 2.0 * ca) * llr[:, :h]
    ub, cb = _sc_recurse(lb, frozen[h:])
    return np.concatenate([ua, ub], axis=1), np.concatenate([ca ^ cb, cb], axis=1)


class SCDecoder(DecoderHandle):
    name = "sc"

    def decode_batch(self, code, y, sigma2):
        if code.family != "polar" or code.info_set is None:
            raise ValueError("SC decoding requires a polar code")
        y = np.asarray(y, dtype=np.float64)
        b, n = y.shape
        lam = 2.0 * y / sigma2
        frozen_mask = np.ones(n, dtype=bool)
        frozen_mask[code.info_set] = False
        _, x_hat = _sc_recurse(lam, frozen_mask)
        soft = (1.0 - 2.0 * x_hat.astype(np.float64)) * np.maximum(np.abs(lam), 1e-30)
        conv = ~syndrome(code, x_hat).any(axis=1)
        return x_hat, soft, np.ones(b, dtype=np.int64), conv


# ---------------------------------------------------------------------------
# exhaustive maximum-likelihood oracle


class MLOracleDecoder(DecoderHandle):
    name = "ml_oracle"
    max_k = 16

    def __init__(self):
        self._cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _codebook(self, code: LinearCode) -> tuple[np.ndarray, np.ndarray]:
        key = id(code)
        if key not in self._cache:
            if code.k > self.max_k:
                raise ValueError(f"k={code.k} too large for exhaustive ML (max {self.max_k})")
            idx = np.arange(2**code.k, dtype=np.int64)
            msgs = ((idx[:, None] >> np.arange(code.k)) & 1).astype(np.uint8)
            from .codes import encode

            cb = encode(code, msgs)
            self._cache[key] = (cb, 1.0 - 2.0 * cb.astype(np.float64))
        return self._cache[key]

    def decode_batch(self, code, y, sigma2=None):
        y = np.asarray(y, dtype=np.float64)
        cb, sym = self._codebook(code)
        scores = y @ sym.T
        best = np.argmax(scores, axis=1)  # argmax takes the lowest index on ties
        bits = cb[best]
        soft = sym[best]
        b = y.shape[0]
        return bits, soft, np.ones(b, dtype=np.int64), np.ones(b, dtype=bool)


# ---------------------------------------------------------------------------
# module-level convenience wrappers


def sum_product_decode(code: LinearCode, y: np.ndarray, sigma2: float, max_iter: int = 10) -> DecodeResult:
    return SumProductDecoder(max_iter=max_iter).decode(code, y, sigma2)


def min_sum_decode(code: LinearCode, y: np.ndarray, sigma2: float, max_iter: int = 10) -> DecodeResult:
    return MinSumDecoder(max_iter=max_iter).decode(code, y, sigma2)


def sc_decode(code: LinearCode, y: np.ndarray, sigma2: float) -> DecodeResult:
    return SCDecoder().decode(code, y, sigma2)


def ml_oracle_decode(code: LinearCode, y: np.ndarray) -> DecodeResult:
    return MLOracleDecoder().decode(code, y, 1.0)

"""BPSK over AWGN with counter-based reproducible frame streams.

Every frame has its own Philox stream keyed by (experiment seed, frame index),
so frames can be regenerated in isolation and in any order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codes import LinearCode, encode


def snr_to_sigma2(ebno_db: float, rate: float) -> float:
    """Noise variance for a given Eb/N0 in dB: sigma^2 = 1 / (2 R 10^(dB/10))."""
    if not 0 < rate < 1:
        raise ValueError(f"rate must be in (0,1), got {rate}")
    return 1.0 / (2.0 * rate * 10.0 ** (ebno_db / 10.0))


@dataclass(frozen=True)
class SnrContext:
    ebno_db: float
    rate: float
    sigma2: float

    @classmethod
    def from_db(cls, ebno_db: float, rate: float) -> "SnrContext":
        return cls(ebno_db=ebno_db, rate=rate, sigma2=snr_to_sigma2(ebno_db, rate))


@dataclass(frozen=True)
class ReceivedFrame:
    message: np.ndarray  # (k,) uint8
    codeword: np.ndarray  # (n,) uint8
    symbols: np.ndarray  # (n,) float, +/-1
    noise: np.ndarray  # (n,) float
    received: np.ndarray  # (n,) float
    snr: SnrContext
    seed: int
    index: int


def modulate(codeword: np.ndarray) -> np.ndarray:
    """BPSK map: bit 0 -> +1, bit 1 -> -1 (elementwise 1 - 2c)."""
    return 1.0 - 2.0 * np.asarray(codeword, dtype=np.float64)


def stream_rng(seed: int, lane: int, index: int) -> np.random.Generator:
    """Counter-based stream for (experiment seed, purpose lane, frame index).

    Lane 0 is channel frames; attacks use other lanes so their randomness
    never aliases the noise of the frames they perturb.
    """
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=[lane, 0, 0, index]))


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for one frame of one experiment."""
    return stream_rng(seed, 0, index)


def transmit(
    code: LinearCode,
    snr: SnrContext,
    seed: int,
    index: int = 0,
    all_zero: bool = False,
) -> ReceivedFrame:
    """One reproducible frame: uniform (or all-zero) message, AWGN at snr.sigma2."""
    rng = frame_rng(seed, index)
    if all_zero:
        message = np.zeros(code.k, dtype=np.uint8)
        rng.integers(0, 2, size=code.k)  # keep the noise draw aligned with uniform mode
    else:
        message = rng.integers(0, 2, size=code.k).astype(np.uint8)
    codeword = encode(code, message)
    symbols = modulate(codeword)
    noise = rng.standard_normal(code.n) * np.sqrt(snr.sigma2)
    return ReceivedFrame(
        message=message,
        codeword=codeword,
        symbols=symbols,
        noise=noise,
        received=symbols + noise,
        snr=snr,
        seed=seed,
        index=index,
    )


def transmit_batch(
    code: LinearCode,
    snr: SnrContext,
    seed: int,
    start: int,
    count: int,
    all_zero: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frames start..start+count-1 as arrays (messages, codewords, received).

    Bit-identical to calling transmit() per index; the loop only batches the
    bookkeeping.
    """
    messages = np.empty((count, code.k), dtype=np.uint8)
    noise = np.empty((count, code.n), dtype=np.float64)
    sq = np.sqrt(snr.sigma2)
    for i in range(count):
        rng = frame_rng(seed, start + i)
        bits = rng.integers(0, 2, size=code.k).astype(np.uint8)
        messages[i] = 0 if all_zero else bits
        noise[i] = rng.standard_normal(code.n)
    codewords = encode(code, messages)
    received = modulate(codewords) + noise * sq
    return messages, codewords, received

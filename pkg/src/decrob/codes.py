"""Binary linear codes: construction, encoding, syndromes, alist files.

A LinearCode carries both G and H over GF(2) plus a family tag.  Codes built
from a parity-check matrix get G through Gaussian elimination; the pivot
permutation is folded back so the external bit order always matches the
source file.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import gf2


class AlistParseError(ValueError):
    """Malformed alist text; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class LinearCode:
    """An (n, k) binary linear code defined by generator and parity-check matrices."""

    name: str
    n: int
    k: int
    G: np.ndarray  # (k, n) uint8
    H: np.ndarray  # (n-k, n) uint8
    family: str = "custom"
    # systematic pivot columns of H recorded by the construction (metadata only)
    pivot_cols: np.ndarray | None = field(default=None, compare=False)
    # polar codes only: information / frozen index sets in transform bit order
    info_set: np.ndarray | None = field(default=None, compare=False)
    frozen_set: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (0 < self.k < self.n):
            raise ValueError(f"need 0 < k < n, got k={self.k}, n={self.n}")
        G = np.ascontiguousarray(np.asarray(self.G, dtype=np.uint8) & 1)
        H = np.ascontiguousarray(np.asarray(self.H, dtype=np.uint8) & 1)
        if G.shape != (self.k, self.n):
            raise ValueError(f"G shape {G.shape} != ({self.k}, {self.n})")
        if H.shape != (self.n - self.k, self.n):
            raise ValueError(f"H shape {H.shape} != ({self.n - self.k}, {self.n})")
        if gf2.matmul(G, H.T).any():
            raise ValueError("G H^T != 0 over GF(2)")
        if gf2.rank(G) != self.k:
            raise ValueError("rank(G) != k")
        if gf2.rank(H) != self.n - self.k:
            raise ValueError("rank(H) != n-k")
        G.setflags(write=False)
        H.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "H", H)

    @property
    def rate(self) -> float:
        return self.k / self.n

    def matrix_hash(self) -> str:
        """Hex digest identifying the exact H matrix (for experiment manifests)."""
        return hashlib.sha256(self.H.tobytes() + bytes([0]) + np.int64(self.n).tobytes()).hexdigest()[:16]


def encode(code: LinearCode, m: np.ndarray) -> np.ndarray:
    """Codeword m @ G over GF(2); m may be a single message or a (B, k) batch."""
    m = np.asarray(m, dtype=np.uint8)
    if m.shape[-1] != code.k:
        raise ValueError(f"message length {m.shape[-1]} != k={code.k}")
    return ((m.astype(np.int64) @ code.G.astype(np.int64)) & 1).astype(np.uint8)


def syndrome(code: LinearCode, y_b: np.ndarray) -> np.ndarray:
    """H @ y_b^T over GF(2); accepts a single word or a (B, n) batch."""
    y_b = np.asarray(y_b, dtype=np.uint8)
    if y_b.shape[-1] != code.n:
        raise ValueError(f"word length {y_b.shape[-1]} != n={code.n}")
    return ((y_b.astype(np.int64) @ code.H.T.astype(np.int64)) & 1).astype(np.uint8)


def hard_demodulate(y: np.ndarray) -> np.ndarray:
    """Per-coordinate hard decision: y_i >= 0 -> bit 0, y_i < 0 -> bit 1."""
    return (np.asarray(y, dtype=np.float64) < 0).astype(np.uint8)


# ---------------------------------------------------------------------------
# constructors


def hamming_code(r: int) -> LinearCode:
    """Hamming code with r parity bits: n = 2^r - 1, k = n - r.

    Columns of H are the binary expansions of 1..n.
    """
    n = 2**r - 1
    h = np.zeros((r, n), dtype=np.uint8)
    for j in range(1, n + 1):
        for b in range(r):
            h[b, j - 1] = (j >> b) & 1
    g, piv = gf2.solve_basis(h)
    return LinearCode(f"hamming_{n}_{n - r}", n, n - r, g, h, family="hamming", pivot_cols=piv)


def repetition_code(n: int) -> LinearCode:
    g = np.ones((1, n), dtype=np.uint8)
    h = np.zeros((n - 1, n), dtype=np.uint8)
    for i in range(n - 1):
        h[i, 0] = 1
        h[i, i + 1] = 1
    return LinearCode(f"repetition_{n}_1", n, 1, g, h, family="repetition")


def from_parity_check(name: str, h: np.ndarray, family: str = "custom") -> LinearCode:
    h = np.asarray(h, dtype=np.uint8)
    m, n = h.shape
    g, piv = gf2.solve_basis(h)
    return LinearCode(name, n, n - m, g, h, family=family, pivot_cols=piv)


def build_polar(n: int, k: int, design_snr_db: float = 2.0) -> LinearCode:
    """Polar code from the Bhattacharyya recursion at a design SNR.

    Reliability seeds Z0 = exp(-R * 10^(snr/10)); each polarization level maps
    Z -> (2Z - Z^2, Z^2) with the degraded half first, matching the natural
    bit order of the n x n transform F^{(x)log2 n}.  The n-k indices with the
    largest Z are frozen; G is the information rows of the transform.
    """
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    if not (0 < k < n):
        raise ValueError(f"need 0 < k < n, got k={k}")
    rate = k / n
    z = np.array([np.exp(-rate * 10 ** (design_snr_db / 10))], dtype=np.float64)
    while len(z) < n:
        z = np.concatenate([2 * z - z**2, z**2])
    # freeze the n-k least reliable (largest Z); stable order for ties
    order = np.argsort(-z, kind="stable")
    frozen = np.sort(order[: n - k])
    info = np.sort(order[n - k :])

    f = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    transform = np.array([[1]], dtype=np.uint8)
    for _ in range(int(np.log2(n))):
        transform = np.kron(f, transform)
    g = transform[info, :]
    h = gf2.nullspace(g)
    return LinearCode(
        f"polar_{n}_{k}", n, k, g, h, family="polar", info_set=info, frozen_set=frozen
    )


# ---------------------------------------------------------------------------
# alist IO (MacKay convention, 1-based indices, zero padding allowed)


def parse_alist(text: str, name: str = "alist") -> LinearCode:
    """Parse alist text into a LinearCode.

    The file stores H column-major then row-major; G is derived by Gaussian
    elimination.  Raises AlistParseError with a line number on malformed input.
    """
    lines = text.splitlines()
    tokens: list[tuple[int, str]] = []
    for ln, raw in enumerate(lines, start=1):
        for tok in raw.split():
            tokens.append((ln, tok))

    pos = 0

    def take(count: int, what: str) -> list[int]:
        nonlocal pos
        if pos + count > len(tokens):
            line = tokens[-1][0] if tokens else 1
            raise AlistParseError(f"unexpected end of file while reading {what}", line)
        out = []
        for _ in range(count):
            ln, tok = tokens[pos]
            pos += 1
            try:
                out.append(int(tok))
            except ValueError:
                raise AlistParseError(f"expected integer for {what}, got {tok!r}", ln) from None
        return out

    n, m = take(2, "header n m")
    if n <= 0 or m <= 0 or m >= n:
        raise AlistParseError(f"bad header dimensions n={n}, m={m}", tokens[0][0])
    max_col_w, max_row_w = take(2, "max degrees")
    col_w = take(n, "column weights")
    row_w = take(m, "row weights")
    if any(w < 0 or w > max_col_w for w in col_w):
        raise AlistParseError("column weight outside [0, max]", tokens[min(pos, len(tokens)) - 1][0])
    if any(w < 0 or w > max_row_w for w in row_w):
        raise AlistParseError("row weight outside [0, max]", tokens[min(pos, len(tokens)) - 1][0])

    h = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        entries = take(max_col_w, f"column {j + 1} indices")
        nz = [e for e in entries if e != 0]
        if len(nz) != col_w[j]:
            raise AlistParseError(
                f"column {j + 1} lists {len(nz)} entries, weight says {col_w[j]}",
                tokens[pos - 1][0],
            )
        for e in nz:
            if not (1 <= e <= m):
                raise AlistParseError(f"row index {e} out of range 1..{m}", tokens[pos - 1][0])
            h[e - 1, j] = 1
    for i in range(m):
        entries = take(max_row_w, f"row {i + 1} indices")
        nz = [e for e in entries if e != 0]
        if len(nz) != row_w[i]:
            raise AlistParseError(
                f"row {i + 1} lists {len(nz)} entries, weight says {row_w[i]}",
                tokens[pos - 1][0],
            )
        for e in nz:
            if not (1 <= e <= n):
                raise AlistParseError(f"column index {e} out of range 1..{n}", tokens[pos - 1][0])
            if not h[i, e - 1]:
                raise AlistParseError(
                    f"row {i + 1} and column lists disagree at column {e}",
                    tokens[pos - 1][0],
                )
    if pos != len(tokens):
        raise AlistParseError("trailing tokens after matrix data", tokens[pos][0])
    # cross-check the two redundant views
    if not np.array_equal(h.sum(axis=0), np.asarray(col_w)) or not np.array_equal(
        h.sum(axis=1), np.asarray(row_w)
    ):
        raise AlistParseError("degree lists inconsistent with index lists", 3)
    return from_parity_check(name, h, family="ldpc")


def to_alist(code: LinearCode) -> str:
    """Serialize H in canonical padded alist form (round-trips with parse_alist)."""
    h = code.H
    m, n = h.shape
    col_idx = [list(np.flatnonzero(h[:, j]) + 1) for j in range(n)]
    row_idx = [list(np.flatnonzero(h[i, :]) + 1) for i in range(m)]
    max_col = max(len(c) for c in col_idx)
    max_row = max(len(r) for r in row_idx)
    out = [f"{n} {m}", f"{max_col} {max_row}"]
    out.append(" ".join(str(len(c)) for c in col_idx))
    out.append(" ".join(str(len(r)) for r in row_idx))
    for c in col_idx:
        out.append(" ".join(str(v) for v in c + [0] * (max_col - len(c))))
    for r in row_idx:
        out.append(" ".join(str(v) for v in r + [0] * (max_row - len(r))))
    return "\n".join(out) + "\n"


def load_alist(text: str, name: str = "alist") -> LinearCode:
    return parse_alist(text, name=name)


_BUNDLED = {
    "hamming_7_4": "hamming_7_4.alist",
    "hamming_15_11": "hamming_15_11.alist",
    "repetition_3_1": "repetition_3_1.alist",
    "ldpc_49_24": "ldpc_49_24.alist",
    "ldpc_121_60": "ldpc_121_60.alist",
}


def load_bundled(name: str) -> LinearCode:
    """Load one of the bundled parity-check files by short name."""
    if name not in _BUNDLED:
        raise KeyError(f"unknown bundled code {name!r}; have {sorted(_BUNDLED)}")
    text = resources.files("decrob.data").joinpath(_BUNDLED[name]).read_text()
    code = parse_alist(text, name=name)
    if name.startswith("hamming"):
        object.__setattr__(code, "family", "hamming")
    elif name.startswith("repetition"):
        object.__setattr__(code, "family", "repetition")
    return code


def get_code(spec: str) -> LinearCode:
    """Resolve a code by name: bundled alist names or 'polar_<n>_<k>'."""
    if spec in _BUNDLED:
        return load_bundled(spec)
    if spec.startswith("polar_"):
        parts = spec.split("_")
        if len(parts) == 3:
            return build_polar(int(parts[1]), int(parts[2]))
    raise KeyError(f"unknown code spec {spec!r}")

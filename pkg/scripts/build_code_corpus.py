#!/usr/bin/env python3
"""Regenerate the bundled parity-check corpus under src/decrob/data/.

Hamming and repetition matrices are the standard constructions.  The LDPC
matrices are column-weight-3 randomized constructions (girth >= 6 where the
search succeeds, full row rank enforced), generated here with fixed seeds.
They are stand-ins at the published block lengths, NOT copies of any external
database matrix; experiment manifests record the matrix hash for this reason.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from decrob import gf2  # noqa: E402
from decrob.codes import from_parity_check, hamming_code, repetition_code, to_alist  # noqa: E402

DATA = os.path.join(os.path.dirname(__file__), "..", "src", "decrob", "data")


def random_ldpc_parity(n: int, m: int, col_weight: int = 3, seed: int = 0,
                       tries: int = 2000) -> np.ndarray:
    """Column-weight-regular H with near-uniform row weights, no 4-cycles,
    full GF(2) row rank.  Retries the whole construction until it works."""
    rng = np.random.default_rng(seed)
    for attempt in range(tries):
        h = np.zeros((m, n), dtype=np.uint8)
        row_load = np.zeros(m, dtype=np.int64)
        target = int(np.ceil(n * col_weight / m))
        ok = True
        for j in range(n):
            placed = False
            for _ in range(200):
                # prefer the least-loaded rows to keep row weights balanced
                candidates = np.flatnonzero(row_load < target)
                if len(candidates) < col_weight:
                    candidates = np.arange(m)
                rows = rng.choice(candidates, size=col_weight, replace=False)
                h[:, j] = 0
                h[rows, j] = 1
                # 4-cycle check: no pair of rows may share two columns
                shared = h[rows].astype(np.int64) @ h.T.astype(np.int64)
                np.put_along_axis(shared, rows[:, None], 0, axis=1)
                if (shared >= 2).any():
                    continue
                row_load[rows] += 1
                placed = True
                break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        if gf2.rank(h) == m:
            return h
    raise RuntimeError(f"no valid LDPC matrix found for ({n},{m}) after {tries} tries")


def main():
    os.makedirs(DATA, exist_ok=True)
    corpus = {
        "hamming_7_4.alist": hamming_code(3),
        "hamming_15_11.alist": hamming_code(4),
        "repetition_3_1.alist": repetition_code(3),
    }
    for fname, (n, m, seed) in {
        "ldpc_49_24.alist": (49, 25, 7),
        "ldpc_121_60.alist": (121, 61, 11),
    }.items():
        h = random_ldpc_parity(n, m, seed=seed)
        corpus[fname] = from_parity_check(fname.removesuffix(".alist"), h, family="ldpc")
    for fname, code in corpus.items():
        path = os.path.join(DATA, fname)
        with open(path, "w") as fh:
            fh.write(to_alist(code))
        print(f"{fname}: n={code.n} k={code.k} hash={code.matrix_hash()}")


if __name__ == "__main__":
    main()

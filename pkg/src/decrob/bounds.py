"""Finite-sample concentration calculators for the universal-attack objective
and the PCA direction, plus synthetic coverage validation.

Three bounds, each holding jointly with probability >= 1 - eta under bounded
loss (<= C), bounded gradients (||q|| <= L) and population eigengap Delta:

  objective   |F_hat - F|            <= C sqrt(log(4/eta) / (2N))
  second mom. ||Sigma_hat - Sigma||  <= 4 sqrt(2) L^2 sqrt(log(4n/eta) / N)
  direction   sin angle(u1_hat, u1)  <= (second moment bound) / Delta
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def hoeffding_objective_bound(c: float, eta: float, n_samples: int) -> float:
    if not 0 < eta < 1:
        raise ValueError("eta must be in (0,1)")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    return c * np.sqrt(np.log(4.0 / eta) / (2.0 * n_samples))


def matrix_bound(grad_cap: float, eta: float, n_samples: int, dim: int) -> float:
    if not 0 < eta < 1:
        raise ValueError("eta must be in (0,1)")
    if n_samples < 1 or dim < 1:
        raise ValueError("need n_samples >= 1 and dim >= 1")
    return 4.0 * np.sqrt(2.0) * grad_cap**2 * np.sqrt(np.log(4.0 * dim / eta) / n_samples)


def davis_kahan_bound(grad_cap: float, eta: float, n_samples: int, dim: int, delta_gap: float) -> float:
    if delta_gap <= 0:
        raise ValueError("eigengap must be > 0")
    return matrix_bound(grad_cap, eta, n_samples, dim) / delta_gap


@dataclass
class ConcentrationReport:
    C: float
    L: float
    Delta: float
    N: int
    eta: float
    dim: int
    bound_objective: float
    bound_sigma_op: float
    bound_sin_angle: float

    @classmethod
    def compute(cls, C: float, L: float, Delta: float, N: int, eta: float, dim: int) -> "ConcentrationReport":
        return cls(
            C=C, L=L, Delta=Delta, N=N, eta=eta, dim=dim,
            bound_objective=hoeffding_objective_bound(C, eta, N),
            bound_sigma_op=matrix_bound(L, eta, N, dim),
            bound_sin_angle=davis_kahan_bound(L, eta, N, dim, Delta),
        )


# ---------------------------------------------------------------------------
# synthetic distributions with known F, Sigma_q and u1


@dataclass
class SyntheticSpec:
    """A loss/gradient distribution with every population quantity known."""

    name: str
    dim: int
    C: float
    L: float
    F_true: float
    Sigma: np.ndarray
    u1: np.ndarray
    Delta: float
    sampler: Callable[[np.random.Generator, int], tuple[np.ndarray, np.ndarray]] = field(repr=False)


def rank_one_spec(dim: int = 8, p: float = 0.5, C: float = 1.0) -> SyntheticSpec:
    """Gradients q = +/- u1 (so L = 1, Delta = 1) and Bernoulli(p) * C losses.

    The only distribution compatible with L = 1 and eigengap 1: the second
    moment must be exactly u1 u1^T.
    """
    u1 = np.zeros(dim)
    u1[0] = 1.0

    def sampler(rng, n):
        losses = C * (rng.uniform(size=n) < p).astype(np.float64)
        signs = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
        return losses, signs[:, None] * u1[None, :]

    return SyntheticSpec(
        name=f"rank_one_d{dim}", dim=dim, C=C, L=1.0, F_true=p * C,
        Sigma=np.outer(u1, u1), u1=u1, Delta=1.0, sampler=sampler,
    )


def diagonal_spec(lams: tuple[float, ...] = (2.0, 1.0, 0.5, 0.5), p: float = 0.5, C: float = 1.0) -> SyntheticSpec:
    """Independent +/- sqrt(lambda_j) coordinates: Sigma = diag(lams) exactly,
    gradient norm sqrt(sum lams) almost surely."""
    lams_arr = np.asarray(lams, dtype=np.float64)
    if np.any(np.diff(lams_arr) > 0):
        raise ValueError("eigenvalues must be nonincreasing")
    dim = len(lams_arr)
    roots = np.sqrt(lams_arr)
    u1 = np.zeros(dim)
    u1[0] = 1.0

    def sampler(rng, n):
        losses = C * (rng.uniform(size=n) < p).astype(np.float64)
        signs = np.where(rng.uniform(size=(n, dim)) < 0.5, 1.0, -1.0)
        return losses, signs * roots[None, :]

    return SyntheticSpec(
        name=f"diagonal_d{dim}", dim=dim, C=C, L=float(np.sqrt(lams_arr.sum())),
        F_true=p * C, Sigma=np.diag(lams_arr), u1=u1,
        Delta=float(lams_arr[0] - lams_arr[1]), sampler=sampler,
    )


@dataclass
class CoverageReport:
    spec_name: str
    repetitions: int
    n_samples: int
    eta: float
    violations_objective: int
    violations_sigma_op: int
    violations_sin_angle: int
    report: ConcentrationReport

    @property
    def rates(self) -> tuple[float, float, float]:
        r = self.repetitions
        return (
            self.violations_objective / r,
            self.violations_sigma_op / r,
            self.violations_sin_angle / r,
        )


def sin_angle(u: np.ndarray, v: np.ndarray) -> float:
    """Sine of the principal angle between the lines spanned by u and v."""
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.sqrt(max(0.0, 1.0 - min(1.0, c) ** 2)))


def validate_concentration(
    spec: SyntheticSpec, repetitions: int, n_samples: int, eta: float, seed: int = 0
) -> CoverageReport:
    """Empirical violation counts of the three bounds on a known distribution."""
    report = ConcentrationReport.compute(spec.C, spec.L, spec.Delta, n_samples, eta, spec.dim)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0 + spec.dim)))
    v_obj = v_op = v_ang = 0
    for _ in range(repetitions):
        losses, q = spec.sampler(rng, n_samples)
        f_hat = losses.mean()
        sigma_hat = q.T @ q / n_samples
        err = sigma_hat - spec.Sigma
        op_norm = float(np.abs(np.linalg.eigvalsh(err)).max())
        u1_hat = np.linalg.eigh(sigma_hat)[1][:, -1]
        if abs(f_hat - spec.F_true) > report.bound_objective:
            v_obj += 1
        if op_norm > report.bound_sigma_op:
            v_op += 1
        if sin_angle(u1_hat, spec.u1) > report.bound_sin_angle:
            v_ang += 1
    return CoverageReport(
        spec_name=spec.name,
        repetitions=repetitions,
        n_samples=n_samples,
        eta=eta,
        violations_objective=v_obj,
        violations_sigma_op=v_op,
        violations_sin_angle=v_ang,
        report=report,
    )

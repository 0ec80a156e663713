"""Experiment orchestration: FER estimation with confidence intervals, paired
attack evaluation, transferability matrices, energy-constraint ablations and
reproducibility manifests.

Frames are identified by (seed, index) counter streams, so every row of a
result table built from the same seed sees bit-identical channel realizations;
perturbations are applied strictly post-channel (the decoder sees y + delta).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from . import codes as codes_mod
from .attacks import (
    AttackArtifact,
    EnergyBudget,
    FrameBatch,
    fgm_rows,
    pgd_rows,
    uap_grad_attack,
    uap_pca_attack,
)
from .channel import SnrContext, stream_rng, transmit_batch
from .codes import LinearCode
from .decoders import DecoderHandle, MinSumDecoder, MLOracleDecoder, SCDecoder, SumProductDecoder
from .smoothing import SmoothingConfig

SAMPLE_KINDS = ("fgm", "pgd")
UNIVERSAL_KINDS = ("uap_grad", "uap_pca")
_RANDOM_LANE = 7


def wilson_interval(errors: int, trials: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if trials == 0:
        return (0.0, 1.0)
    p = errors / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class FERStats:
    frames: int
    frame_errors: int
    bit_errors: int
    n_bits: int
    fer: float = field(init=False)
    ber: float = field(init=False)
    fer_inverse: float = field(init=False)
    fer_inverse_is_bound: bool = field(init=False)
    wilson_95: tuple[float, float] = field(init=False)

    def __post_init__(self):
        self.fer = self.frame_errors / self.frames if self.frames else 0.0
        self.ber = self.bit_errors / (self.frames * self.n_bits) if self.frames else 0.0
        if self.frame_errors > 0:
            self.fer_inverse = 1.0 / self.fer
            self.fer_inverse_is_bound = False
        else:
            # zero observed errors: report "> frames" as a finite lower bound
            self.fer_inverse = float(self.frames)
            self.fer_inverse_is_bound = True
        self.wilson_95 = wilson_interval(self.frame_errors, self.frames)


def paired_error_pvalue(errors_a: np.ndarray, errors_b: np.ndarray) -> float:
    """Exact one-sided McNemar p-value that condition A errs more than B.

    Small under H1: A's error probability exceeds B's on the paired frames.
    """
    a = np.asarray(errors_a, dtype=bool)
    b = np.asarray(errors_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("paired comparison needs equal-length error vectors")
    only_a = int(np.sum(a & ~b))
    only_b = int(np.sum(~a & b))
    total = only_a + only_b
    if total == 0:
        return 1.0
    return float(sstats.binom.sf(only_a - 1, total, 0.5))


# ---------------------------------------------------------------------------
# attack plans: how to produce delta for a batch of frames


class AttackPlan:
    """Recipe producing perturbations for frames; kind/alpha/source label rows."""

    kind = "clean"
    alpha = 0.0
    source = ""

    def perturb(self, code, y, targets, sigma2, seed, start) -> np.ndarray | float:
        return 0.0


class CleanPlan(AttackPlan):
    pass


class RandomPlan(AttackPlan):
    """Per-frame Gaussian direction scaled to alpha * ||y||; keyed by frame index."""

    kind = "random"

    def __init__(self, alpha: float):
        self.alpha = alpha

    def perturb(self, code, y, targets, sigma2, seed, start):
        b, n = y.shape
        deltas = np.empty((b, n))
        for i in range(b):
            rng = stream_rng(seed, _RANDOM_LANE, start + i)
            d = rng.standard_normal(n)
            deltas[i] = d * (self.alpha * np.linalg.norm(y[i]) / np.linalg.norm(d))
        return deltas


class UniversalPlan(AttackPlan):
    """Apply a fixed crafted delta to every frame."""

    def __init__(self, artifact: AttackArtifact):
        self.artifact = artifact
        self.kind = artifact.kind
        self.alpha = artifact.alpha
        self.source = artifact.source_decoder

    def perturb(self, code, y, targets, sigma2, seed, start):
        if self.artifact.delta is None or self.artifact.delta.size != code.n:
            raise ValueError("universal artifact missing or incompatible with code dimension")
        return self.artifact.delta[None, :]


class SamplePlan(AttackPlan):
    """Craft FGM or PGD per frame on a source decoder at alpha * ||y||.

    Crafting uses the true codeword as the loss target (white-box crafting);
    evaluation only ever decodes y + delta.
    """

    def __init__(self, kind: str, source_decoder: DecoderHandle, alpha: float,
                 cfg: SmoothingConfig, t_steps: int = 20):
        if kind not in SAMPLE_KINDS:
            raise ValueError(f"sample-wise kind must be one of {SAMPLE_KINDS}")
        self.kind = kind
        self.decoder = source_decoder
        self.alpha = alpha
        self.cfg = cfg
        self.t_steps = t_steps
        self.source = source_decoder.name

    def perturb(self, code, y, targets, sigma2, seed, start):
        eps = self.alpha * np.linalg.norm(y, axis=1)
        if self.kind == "fgm":
            deltas, _ = fgm_rows(self.decoder, code, y, targets, eps, self.cfg, sigma2,
                                 stream_base=start)
            return deltas
        deltas, _ = pgd_rows(self.decoder, code, y, targets, eps, self.cfg, sigma2,
                             t_steps=self.t_steps, stream_base=start)
        return deltas


# ---------------------------------------------------------------------------
# core estimation loops


def estimate_fer(
    decoder: DecoderHandle,
    code: LinearCode,
    snr: SnrContext,
    plan: AttackPlan | None = None,
    frames: int | None = None,
    target_errors: int = 100,
    max_frames: int = 10**6,
    seed: int = 0,
    batch_size: int = 8192,
    all_zero: bool = False,
) -> FERStats:
    """Monte Carlo FER/BER under an optional attack plan.

    Stops at the fixed frame budget when given, otherwise after target_errors
    frame errors (or max_frames).  Deterministic given seed.
    """
    plan = plan or CleanPlan()
    done = 0
    frame_errors = 0
    bit_errors = 0
    budget = frames if frames is not None else max_frames
    while done < budget:
        b = min(batch_size, budget - done)
        _, cws, y = transmit_batch(code, snr, seed, done, b, all_zero=all_zero)
        delta = plan.perturb(code, y, cws, snr.sigma2, seed, done)
        bits, _, _, _ = decoder.decode_batch(code, y + delta, snr.sigma2)
        diff = bits != cws
        frame_errors += int(diff.any(axis=1).sum())
        bit_errors += int(diff.sum())
        done += b
        if frames is None and frame_errors >= target_errors:
            break
    return FERStats(done, frame_errors, bit_errors, code.n)


def evaluate_plans(
    decoders: dict[str, DecoderHandle],
    code: LinearCode,
    snr: SnrContext,
    plans: dict[str, AttackPlan],
    n_frames: int,
    seed: int = 0,
    batch_size: int = 2048,
) -> dict[tuple[str, str], np.ndarray]:
    """Per-frame error indicators for every (plan, decoder) pair on one shared,
    seed-paired frame set.  Sample-wise plans craft once per batch and the
    crafted deltas are reused across all target decoders."""
    errors = {
        (pn, dn): np.zeros(n_frames, dtype=bool) for pn in plans for dn in decoders
    }
    done = 0
    while done < n_frames:
        b = min(batch_size, n_frames - done)
        _, cws, y = transmit_batch(code, snr, seed, done, b)
        for pn, plan in plans.items():
            delta = plan.perturb(code, y, cws, snr.sigma2, seed, done)
            yp = y + delta
            for dn, dec in decoders.items():
                bits, _, _, _ = dec.decode_batch(code, yp, snr.sigma2)
                errors[(pn, dn)][done : done + b] = (bits != cws).any(axis=1)
        done += b
    return errors


def stats_from_errors(err: np.ndarray, code: LinearCode) -> FERStats:
    # frame-level indicators only; bit error counts are not tracked here
    return FERStats(len(err), int(err.sum()), 0, code.n)


def training_frames(code: LinearCode, snr: SnrContext, n: int, seed: int) -> FrameBatch:
    """Held-out frames for crafting universal attacks (separate seed space)."""
    _, cws, y = transmit_batch(code, snr, seed, 0, n)
    return FrameBatch(code=code, received=y, targets=cws, sigma2=snr.sigma2)


def craft_universal(
    kind: str,
    source_decoder: DecoderHandle,
    code: LinearCode,
    snr: SnrContext,
    alpha: float,
    cfg: SmoothingConfig,
    n_train: int = 512,
    seed: int = 1,
    lr: float = 0.05,
    batches: int = 50,
) -> AttackArtifact:
    frames = training_frames(code, snr, n_train, seed)
    budget = EnergyBudget.for_universal(alpha, code.n, snr.sigma2)
    if kind == "uap_grad":
        return uap_grad_attack(source_decoder, frames, budget, cfg, lr=lr, batches=batches)
    if kind == "uap_pca":
        return uap_pca_attack(source_decoder, frames, budget, cfg)
    raise ValueError(f"universal kind must be one of {UNIVERSAL_KINDS}")


# ---------------------------------------------------------------------------
# result rows and CSV output

CSV_COLUMNS = [
    "code", "decoder", "attack", "source_decoder", "snr_db", "alpha",
    "frames", "frame_errors", "fer", "fer_inverse", "ci_low", "ci_high", "seed",
]


@dataclass
class ResultRow:
    code: str
    decoder: str
    attack: str
    source_decoder: str
    snr_db: float
    alpha: float
    stats: FERStats
    seed: int

    def as_csv(self) -> list:
        s = self.stats
        return [
            self.code, self.decoder, self.attack, self.source_decoder,
            self.snr_db, self.alpha, s.frames, s.frame_errors,
            s.fer, s.fer_inverse, s.wilson_95[0], s.wilson_95[1], self.seed,
        ]


def write_csv(rows: list[ResultRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv())


# ---------------------------------------------------------------------------
# grid experiments


def build_decoder(name: str, max_iter: int = 10, checkpoint: str | None = None) -> DecoderHandle:
    if name == "sum_product":
        return SumProductDecoder(max_iter=max_iter)
    if name == "min_sum":
        return MinSumDecoder(max_iter=max_iter)
    if name == "sc":
        return SCDecoder()
    if name == "ml_oracle":
        return MLOracleDecoder()
    if name == "mlp":
        from .neural import MlpDecoderHandle, load_checkpoint

        if checkpoint is None:
            raise ValueError("mlp decoder needs a checkpoint path")
        return MlpDecoderHandle(load_checkpoint(checkpoint))
    raise ValueError(f"unknown decoder {name!r}")


@dataclass
class ExperimentConfig:
    code: str = "hamming_7_4"
    decoders: tuple[str, ...] = ("sum_product",)
    snr_db: tuple[float, ...] = (4.0, 5.0, 6.0)
    alphas: tuple[float, ...] = (0.001,)
    attacks: tuple[str, ...] = ("clean",)
    source_decoder: str = ""
    frames: int | None = None
    target_errors: int = 100
    max_frames: int = 10**6
    seed: int = 0
    batch_size: int = 8192
    nu: float = 0.1
    samples: int = 128
    estimator: str = "stein"
    loss_clip: float = 10.0
    pgd_steps: int = 20
    uap_lr: float = 0.05
    uap_batches: int = 50
    uap_train_frames: int = 512
    checkpoint: str = ""
    out_dir: str = "results"
    label: str = "experiment"


def _make_plan(
    kind: str,
    alpha: float,
    cfg: SmoothingConfig,
    source: DecoderHandle | None,
    code: LinearCode,
    snr: SnrContext,
    config: ExperimentConfig,
    artifact_store: dict,
) -> AttackPlan:
    if kind == "clean" or alpha == 0.0:
        return CleanPlan()
    if kind == "random":
        return RandomPlan(alpha)
    if kind in SAMPLE_KINDS:
        if source is None:
            raise ValueError(f"{kind} needs a source decoder")
        return SamplePlan(kind, source, alpha, cfg, t_steps=config.pgd_steps)
    if kind in UNIVERSAL_KINDS:
        if source is None:
            raise ValueError(f"{kind} needs a source decoder")
        key = (kind, source.name, code.name, snr.ebno_db, alpha)
        if key not in artifact_store:
            artifact_store[key] = craft_universal(
                kind, source, code, snr, alpha, cfg,
                n_train=config.uap_train_frames, seed=config.seed + 1,
                lr=config.uap_lr, batches=config.uap_batches,
            )
        return UniversalPlan(artifact_store[key])
    raise ValueError(f"unknown attack kind {kind!r}")


def run_experiment(config: ExperimentConfig) -> int:
    """Run a (decoder x snr x attack x alpha) grid; write CSV plus a manifest.

    Returns 0 on success.  On any sub-failure the partial CSV is kept, a
    FAILED marker records the error, and the return code is 1.
    """
    os.makedirs(config.out_dir, exist_ok=True)
    code = codes_mod.get_code(config.code)
    cfg = SmoothingConfig(
        nu=config.nu, samples=config.samples, seed=config.seed,
        estimator=config.estimator, loss_clip=config.loss_clip,
    )
    decoders = {
        name: build_decoder(name, checkpoint=config.checkpoint or None)
        for name in config.decoders
    }
    source = None
    if config.source_decoder:
        source = decoders.get(config.source_decoder) or build_decoder(
            config.source_decoder, checkpoint=config.checkpoint or None
        )
    rows: list[ResultRow] = []
    artifacts: dict = {}
    csv_path = os.path.join(config.out_dir, f"{config.label}.csv")
    failure: Exception | None = None
    try:
        for snr_db in config.snr_db:
            snr = SnrContext.from_db(snr_db, code.rate)
            for kind in config.attacks:
                alphas = [0.0] if kind == "clean" else config.alphas
                for alpha in alphas:
                    plan = _make_plan(kind, alpha, cfg, source, code, snr, config, artifacts)
                    for dn, dec in decoders.items():
                        stats = estimate_fer(
                            dec, code, snr, plan,
                            frames=config.frames,
                            target_errors=config.target_errors,
                            max_frames=config.max_frames,
                            seed=config.seed,
                            batch_size=config.batch_size,
                        )
                        rows.append(ResultRow(
                            code=code.name, decoder=dn, attack=plan.kind,
                            source_decoder=plan.source, snr_db=snr_db,
                            alpha=alpha, stats=stats, seed=config.seed,
                        ))
    except Exception as exc:  # keep partial results with a marker
        failure = exc
    write_csv(rows, csv_path)
    manifest = {
        "label": config.label,
        "code": code.name,
        "code_matrix_sha": code.matrix_hash(),
        "matrix_source": "bundled corpus (locally generated; see data/README note)",
        "seed": config.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(config).items()},
        "artifacts": {
            "_".join(map(str, k)): v.hyperparameters for k, v in artifacts.items()
        },
        "status": "failed" if failure else "ok",
    }
    with open(os.path.join(config.out_dir, f"{config.label}.manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    if failure is not None:
        with open(os.path.join(config.out_dir, f"{config.label}.FAILED"), "w") as fh:
            fh.write(f"{type(failure).__name__}: {failure}\n")
        return 1
    return 0


def transferability_matrix(
    sources: dict[str, DecoderHandle],
    targets: dict[str, DecoderHandle],
    attack_kinds: tuple[str, ...],
    code: LinearCode,
    snr_grid: tuple[float, ...],
    alpha: float,
    cfg: SmoothingConfig,
    n_frames: int = 20000,
    n_train: int = 512,
    seed: int = 0,
    batch_size: int = 2048,
    pgd_steps: int = 20,
) -> list[ResultRow]:
    """FER of every target decoder under attacks crafted on every source.

    All rows at one SNR share identical frame seeds, so comparisons down a
    column are paired.  The random baseline is source-independent and emitted
    once; clean rows are always included.
    """
    rows: list[ResultRow] = []
    for snr_db in snr_grid:
        snr = SnrContext.from_db(snr_db, code.rate)
        plans: dict[str, AttackPlan] = {"clean": CleanPlan(), "random": RandomPlan(alpha)}
        for sn, sdec in sources.items():
            for kind in attack_kinds:
                if kind in ("clean", "random"):
                    continue
                if kind in SAMPLE_KINDS:
                    plans[f"{kind}@{sn}"] = SamplePlan(kind, sdec, alpha, cfg, t_steps=pgd_steps)
                elif kind in UNIVERSAL_KINDS:
                    art = craft_universal(kind, sdec, code, snr, alpha, cfg,
                                          n_train=n_train, seed=seed + 1)
                    plans[f"{kind}@{sn}"] = UniversalPlan(art)
                else:
                    raise ValueError(f"unknown attack kind {kind!r}")
        errors = evaluate_plans(targets, code, snr, plans, n_frames, seed=seed,
                                batch_size=batch_size)
        for (pn, dn), err in errors.items():
            plan = plans[pn]
            rows.append(ResultRow(
                code=code.name, decoder=dn, attack=plan.kind,
                source_decoder=plan.source, snr_db=snr_db,
                alpha=0.0 if pn == "clean" else alpha,
                stats=stats_from_errors(err, code), seed=seed,
            ))
    return rows


def ablation_alpha_sweep(
    decoder: DecoderHandle,
    code: LinearCode,
    snr_grid: tuple[float, ...],
    alpha_grid: tuple[float, ...],
    attack_kinds: tuple[str, ...] = ("random", "fgm"),
    cfg: SmoothingConfig | None = None,
    source: DecoderHandle | None = None,
    n_frames: int = 4096,
    seed: int = 0,
    batch_size: int = 2048,
    pgd_steps: int = 20,
) -> list[ResultRow]:
    """FER over an increasing energy-constraint grid, paired across alphas.

    alpha = 0 rows reproduce the clean FER for every attack kind.
    """
    cfg = cfg or SmoothingConfig(seed=seed, estimator="stein")
    source = source or decoder
    rows: list[ResultRow] = []
    for snr_db in snr_grid:
        snr = SnrContext.from_db(snr_db, code.rate)
        plans: dict[str, AttackPlan] = {}
        for alpha in sorted(alpha_grid):
            for kind in attack_kinds:
                if alpha == 0.0:
                    plans[f"{kind}@{alpha}"] = CleanPlan()
                elif kind == "random":
                    plans[f"{kind}@{alpha}"] = RandomPlan(alpha)
                elif kind in SAMPLE_KINDS:
                    plans[f"{kind}@{alpha}"] = SamplePlan(kind, source, alpha, cfg, t_steps=pgd_steps)
                elif kind in UNIVERSAL_KINDS:
                    art = craft_universal(kind, source, code, snr, alpha, cfg, seed=seed + 1)
                    plans[f"{kind}@{alpha}"] = UniversalPlan(art)
                else:
                    raise ValueError(f"unknown attack kind {kind!r}")
        errors = evaluate_plans({decoder.name: decoder}, code, snr, plans, n_frames,
                                seed=seed, batch_size=batch_size)
        for (pn, dn), err in errors.items():
            kind, _, alpha_s = pn.partition("@")
            rows.append(ResultRow(
                code=code.name, decoder=dn, attack=kind,
                source_decoder=plans[pn].source, snr_db=snr_db,
                alpha=float(alpha_s), stats=stats_from_errors(err, code), seed=seed,
            ))
    rows.sort(key=lambda r: (r.snr_db, r.attack, r.alpha))
    return rows

"""Command-line front end.

Verbs: simulate, attack, transfer, ablate, bounds, train.  Every verb accepts
--config FILE (key = value lines); any flag given on the command line
overrides the file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import codes as codes_mod
from .attacks import save_artifact
from .bounds import ConcentrationReport, diagonal_spec, rank_one_spec, validate_concentration
from .channel import SnrContext
from .config import load_config
from .harness import (
    ExperimentConfig,
    SmoothingConfig,
    build_decoder,
    craft_universal,
    run_experiment,
    transferability_matrix,
    ablation_alpha_sweep,
    write_csv,
)


def _tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _experiment_config(args, attacks_default=("clean",)) -> ExperimentConfig:
    base = dataclasses.asdict(ExperimentConfig())
    if args.config:
        loaded = load_config(args.config)
        unknown = set(loaded) - set(base)
        if unknown:
            raise SystemExit(f"unknown config keys: {sorted(unknown)}")
        base.update(loaded)
    for key in base:
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    for key in ("decoders", "snr_db", "alphas", "attacks"):
        base[key] = _tuple(base[key])
    if base["attacks"] == ("clean",) and attacks_default != ("clean",):
        base["attacks"] = attacks_default
    return ExperimentConfig(**base)


def _merged(args, conf_keys: dict):
    """Config-file values as fallbacks for flags left at None."""
    conf = load_config(args.config) if getattr(args, "config", None) else {}
    out = {}
    for key, default in conf_keys.items():
        val = getattr(args, key, None)
        if val is None:
            val = conf.get(key, default)
        out[key] = val
    return argparse.Namespace(**out)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--code", help="code name (bundled alist or polar_<n>_<k>)")
    p.add_argument("--decoders", nargs="+", help="decoder names")
    p.add_argument("--snr-db", dest="snr_db", nargs="+", type=float)
    p.add_argument("--alphas", nargs="+", type=float)
    p.add_argument("--frames", type=int)
    p.add_argument("--target-errors", dest="target_errors", type=int)
    p.add_argument("--max-frames", dest="max_frames", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--nu", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--estimator", choices=["stein", "backprop_mc"])
    p.add_argument("--checkpoint", help="mlp checkpoint path")
    p.add_argument("--source-decoder", dest="source_decoder")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--label")


def cmd_simulate(args) -> int:
    cfg = _experiment_config(args)
    return run_experiment(cfg)


def cmd_attack(args) -> int:
    attacks = tuple(args.attacks) if args.attacks else ("random", "fgm", "pgd", "uap_grad")
    cfg = _experiment_config(args, attacks_default=attacks)
    if not cfg.source_decoder:
        cfg = dataclasses.replace(cfg, source_decoder=cfg.decoders[0])
    rc = run_experiment(cfg)
    # persist crafted universal artifacts alongside the CSV for transfer studies
    if args.save_artifacts:
        code = codes_mod.get_code(cfg.code)
        sm = SmoothingConfig(nu=cfg.nu, samples=cfg.samples, seed=cfg.seed,
                             estimator=cfg.estimator, loss_clip=cfg.loss_clip)
        src = build_decoder(cfg.source_decoder, checkpoint=cfg.checkpoint or None)
        for kind in cfg.attacks:
            if kind not in ("uap_grad", "uap_pca"):
                continue
            for snr_db in cfg.snr_db:
                for alpha in cfg.alphas:
                    snr = SnrContext.from_db(snr_db, code.rate)
                    art = craft_universal(kind, src, code, snr, alpha, sm,
                                          n_train=cfg.uap_train_frames, seed=cfg.seed + 1,
                                          lr=cfg.uap_lr, batches=cfg.uap_batches)
                    path = os.path.join(cfg.out_dir, f"{cfg.label}_{kind}_{snr_db}dB_a{alpha}.attack")
                    save_artifact(art, path)
    return rc


def cmd_transfer(args) -> int:
    cfg = _experiment_config(args)
    code = codes_mod.get_code(cfg.code)
    sm = SmoothingConfig(nu=cfg.nu, samples=cfg.samples, seed=cfg.seed,
                         estimator=cfg.estimator, loss_clip=cfg.loss_clip)
    sources = {
        name: build_decoder(name, checkpoint=cfg.checkpoint or None)
        for name in _tuple(cfg.source_decoder or cfg.decoders[0])
    }
    targets = {name: build_decoder(name, checkpoint=cfg.checkpoint or None) for name in cfg.decoders}
    kinds = tuple(k for k in cfg.attacks if k not in ("clean",)) or ("pgd", "uap_grad")
    rows = transferability_matrix(
        sources, targets, kinds, code, cfg.snr_db, cfg.alphas[0], sm,
        n_frames=cfg.frames or 20000, n_train=cfg.uap_train_frames,
        seed=cfg.seed, batch_size=cfg.batch_size, pgd_steps=cfg.pgd_steps,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = os.path.join(cfg.out_dir, f"{cfg.label}_transfer.csv")
    write_csv(rows, out)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_ablate(args) -> int:
    cfg = _experiment_config(args)
    code = codes_mod.get_code(cfg.code)
    sm = SmoothingConfig(nu=cfg.nu, samples=cfg.samples, seed=cfg.seed,
                         estimator=cfg.estimator, loss_clip=cfg.loss_clip)
    dec = build_decoder(cfg.decoders[0], checkpoint=cfg.checkpoint or None)
    kinds = tuple(k for k in cfg.attacks if k != "clean") or ("random", "fgm")
    rows = ablation_alpha_sweep(
        dec, code, cfg.snr_db, cfg.alphas, kinds, cfg=sm,
        n_frames=cfg.frames or 4096, seed=cfg.seed, batch_size=cfg.batch_size,
        pgd_steps=cfg.pgd_steps,
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = os.path.join(cfg.out_dir, f"{cfg.label}_ablation.csv")
    write_csv(rows, out)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def cmd_bounds(args) -> int:
    a = _merged(args, {
        "C": 1.0, "L": 1.0, "Delta": 1.0, "N": 1000, "eta": 0.05, "dim": 8,
        "validate": False, "spec": "rank_one", "repetitions": 200, "seed": 0,
    })
    report = ConcentrationReport.compute(
        C=a.C, L=a.L, Delta=a.Delta, N=a.N, eta=a.eta, dim=a.dim
    )
    print(json.dumps(dataclasses.asdict(report), indent=2))
    if a.validate:
        spec = rank_one_spec(a.dim) if a.spec == "rank_one" else diagonal_spec()
        cov = validate_concentration(spec, a.repetitions, a.N, a.eta, seed=a.seed)
        rates = cov.rates
        print(f"violation rates on {spec.name}: objective={rates[0]:.4f} "
              f"sigma_op={rates[1]:.4f} sin_angle={rates[2]:.4f} (eta={a.eta})")
    return 0


def cmd_train(args) -> int:
    from .neural import MlpDecoderModel, TrainConfig, save_checkpoint, train

    a = _merged(args, {
        "code": "hamming_7_4", "hidden": 128, "steps": 2000, "lr": 1e-2,
        "train_batch": 128, "snr_lo": 2.0, "snr_hi": 8.0, "seed": 0, "checkpoint": "",
    })
    code = codes_mod.get_code(a.code)
    model = MlpDecoderModel.init(code, hidden=a.hidden, seed=a.seed)
    tc = TrainConfig(
        snr_range_db=(a.snr_lo, a.snr_hi),
        batch_size=a.train_batch,
        steps=a.steps,
        lr=a.lr,
        seed=a.seed,
    )
    losses = train(model, code, tc)
    out = a.checkpoint or f"{code.name}_mlp.ckpt"
    save_checkpoint(model, out)
    tail = losses[-max(1, len(losses) // 10):].mean()
    print(f"trained {code.name} for {tc.steps} steps; final loss window {tail:.4f}; wrote {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="decrob", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    for verb, fn in [("simulate", cmd_simulate), ("attack", cmd_attack),
                     ("transfer", cmd_transfer), ("ablate", cmd_ablate)]:
        p = sub.add_parser(verb)
        _add_common(p)
        p.add_argument("--attacks", nargs="+")
        if verb == "attack":
            p.add_argument("--save-artifacts", action="store_true")
        p.set_defaults(fn=fn)

    p = sub.add_parser("bounds")
    p.add_argument("--config")
    p.add_argument("--C", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--Delta", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--validate", action="store_const", const=True)
    p.add_argument("--spec", choices=["rank_one", "diagonal"])
    p.add_argument("--repetitions", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("train")
    p.add_argument("--config")
    p.add_argument("--code")
    p.add_argument("--hidden", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--train-batch", dest="train_batch", type=int)
    p.add_argument("--snr-lo", dest="snr_lo", type=float)
    p.add_argument("--snr-hi", dest="snr_hi", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.set_defaults(fn=cmd_train)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

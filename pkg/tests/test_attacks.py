import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from decrob.channel import SnrContext, transmit, transmit_batch
from decrob.codes import load_bundled
from decrob.attacks import (
    AttackArtifact,
    EnergyBudget,
    FrameBatch,
    GradientBatch,
    attack_frame,
    fgm_attack,
    fgm_rows,
    load_artifact,
    pgd_rows,
    power_iteration,
    project_l2,
    random_baseline,
    random_rows,
    save_artifact,
    uap_grad_attack,
    uap_pca_attack,
)
from decrob.neural import MlpDecoderHandle, MlpDecoderModel, TrainConfig, train
from decrob.smoothing import SmoothingConfig
from tests.test_smoothing import FunctionLossDecoder

CODE7 = load_bundled("hamming_7_4")


def trained_mlp(code, steps=400, seed=30):
    model = MlpDecoderModel.init(code, hidden=16, seed=seed)
    train(model, code, TrainConfig(steps=steps, lr=0.5, seed=seed))
    return MlpDecoderHandle(model)


# ---------------------------------------------------------------------------
# projection


def test_project_interior_unchanged():
    d = np.array([0.3, 0.4])
    assert np.array_equal(project_l2(d, 1.0), d)


def test_project_radial_scaling():
    assert np.allclose(project_l2(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(0, 10))
def test_project_idempotent(vals, eps):
    d = np.array(vals)
    once = project_l2(d, eps)
    assert np.allclose(project_l2(once, eps), once)
    assert np.linalg.norm(once) <= eps + 1e-9


# ---------------------------------------------------------------------------
# random baseline


def test_random_baseline_exact_norm():
    b = EnergyBudget(alpha=0.01, epsilon=0.35)
    d = random_baseline(49, b, seed=4)
    assert abs(np.linalg.norm(d) - 0.35) <= 1e-12


def test_random_baseline_isotropy():
    b = EnergyBudget(alpha=0.01, epsilon=1.0)
    n, draws = 8, 10000
    acc = np.zeros(n)
    for i in range(draws):
        acc += random_baseline(n, b, seed=i)
    mean = acc / draws
    assert np.linalg.norm(mean) <= 4.0 / np.sqrt(draws)


def test_random_baseline_cosine_matches_beta_oracle(rng):
    # |cos| between independent directions in R^n has mean
    # 2 Gamma(n/2) / ((n-1) sqrt(pi) Gamma((n-1)/2))
    n, draws = 8, 4000
    b = EnergyBudget(alpha=0.01, epsilon=1.0)
    y = rng.normal(size=n)
    y /= np.linalg.norm(y)
    cs = []
    for i in range(draws):
        d = random_baseline(n, b, seed=1000 + i)
        cs.append(abs(float(d @ y)) / np.linalg.norm(d))
    expected = 2 * special.gamma(n / 2) / ((n - 1) * np.sqrt(np.pi) * special.gamma((n - 1) / 2))
    assert np.mean(cs) == pytest.approx(expected, rel=0.05)


# ---------------------------------------------------------------------------
# FGM


def test_fgm_linear_loss_recovers_direction():
    w = np.array([1.0, -2.0, 0.5, 3.0, -0.25, 0.125, 1.5])
    dec = FunctionLossDecoder(lambda u: float(w @ u) + 50.0)
    cfg = SmoothingConfig(nu=0.5, samples=10**5, seed=5, estimator="stein", loss_clip=1e9)
    snr = SnrContext.from_db(5.0, CODE7.rate)
    frame = transmit(CODE7, snr, seed=1, index=0)
    budget = EnergyBudget.for_sample(0.05, frame.received)
    res = fgm_attack(dec, CODE7, frame, budget, cfg)
    assert not res.degenerate
    assert np.linalg.norm(res.delta) == pytest.approx(budget.epsilon, rel=1e-9)
    cos = float(res.delta @ w) / (np.linalg.norm(res.delta) * np.linalg.norm(w))
    assert cos > 0.98


def test_fgm_degenerate_gradient_flags():
    dec = FunctionLossDecoder(lambda u: 2.0)
    cfg = SmoothingConfig(nu=0.5, samples=64, seed=6, estimator="stein")
    snr = SnrContext.from_db(5.0, CODE7.rate)
    frame = transmit(CODE7, snr, seed=2, index=0)
    res = fgm_attack(dec, CODE7, frame, EnergyBudget.for_sample(0.1, frame.received), cfg)
    assert res.degenerate
    assert not res.delta.any()


def test_fgm_rows_norms(ldpc49, rng):
    dec = trained_mlp(ldpc49, steps=200, seed=31)
    snr = SnrContext.from_db(5.0, ldpc49.rate)
    _, cws, y = transmit_batch(ldpc49, snr, seed=9, start=0, count=16)
    eps = 0.01 * np.linalg.norm(y, axis=1)
    cfg = SmoothingConfig(nu=0.1, samples=32, seed=7, estimator="backprop_mc")
    deltas, degenerate = fgm_rows(dec, ldpc49, y, cws, eps, cfg, snr.sigma2)
    norms = np.linalg.norm(deltas, axis=1)
    assert np.allclose(norms[~degenerate], eps[~degenerate])


# ---------------------------------------------------------------------------
# PGD


def test_pgd_step_size_value():
    # paper protocol: eps = 0.1 with T = 20 gives steps of length 0.006
    eps, t_steps = 0.1, 20
    assert 1.2 * eps / t_steps == pytest.approx(0.006)


def test_pgd_concave_quadratic_converges():
    # g(delta) = C - ||delta - d*||^2 has its max at d* inside the ball
    n = 5
    d_star = np.zeros(n)
    d_star[0] = 0.4
    y0 = np.ones(n)
    dec = FunctionLossDecoder(
        lambda u: 30.0 - float(np.sum((u - y0 - d_star) ** 2)),
        grad_fn=lambda u: -2.0 * (u - y0 - d_star),
    )
    cfg = SmoothingConfig(nu=0.05, samples=16, seed=8, estimator="backprop_mc", loss_clip=1e9)
    eps = np.array([1.0])
    t_steps = 40
    deltas, _ = pgd_rows(dec, CODE7, y0[None, :], np.zeros((1, n)), eps, cfg, 1.0,
                         t_steps=t_steps)
    step = 1.2 * eps[0] / t_steps
    assert np.linalg.norm(deltas[0] - d_star) <= 3 * step + 0.05


def test_pgd_within_budget(ldpc49):
    dec = trained_mlp(ldpc49, steps=200, seed=32)
    snr = SnrContext.from_db(5.0, ldpc49.rate)
    _, cws, y = transmit_batch(ldpc49, snr, seed=10, start=0, count=8)
    eps = 0.01 * np.linalg.norm(y, axis=1)
    cfg = SmoothingConfig(nu=0.1, samples=16, seed=9, estimator="backprop_mc")
    deltas, losses = pgd_rows(dec, ldpc49, y, cws, eps, cfg, snr.sigma2, t_steps=5)
    assert np.all(np.linalg.norm(deltas, axis=1) <= eps + 1e-12)
    assert np.isfinite(losses).all()


def test_pgd_loss_at_least_fgm_on_toy_decoder(hamming74):
    # paired comparison of recorded smoothed losses over many frames
    dec = trained_mlp(hamming74, steps=800, seed=33)
    snr = SnrContext.from_db(4.0, hamming74.rate)
    n_frames = 500
    _, cws, y = transmit_batch(hamming74, snr, seed=11, start=0, count=n_frames)
    eps = 0.15 * np.linalg.norm(y, axis=1)
    cfg = SmoothingConfig(nu=0.1, samples=64, seed=10, estimator="backprop_mc")
    from decrob.smoothing import smoothed_loss_rows

    dfg, _ = fgm_rows(dec, hamming74, y, cws, eps, cfg, snr.sigma2)
    dpg, _ = pgd_rows(dec, hamming74, y, cws, eps, cfg, snr.sigma2, t_steps=20)
    lf = smoothed_loss_rows(dec, hamming74, y, dfg, cws, cfg, snr.sigma2, stream=99)
    lp = smoothed_loss_rows(dec, hamming74, y, dpg, cws, cfg, snr.sigma2, stream=99)
    assert lp.mean() >= lf.mean() - 1e-6


# ---------------------------------------------------------------------------
# universal attacks


def make_frames(code, n, seed=12, snr_db=5.0):
    snr = SnrContext.from_db(snr_db, code.rate)
    _, cws, y = transmit_batch(code, snr, seed, 0, n)
    return FrameBatch(code=code, received=y, targets=cws, sigma2=snr.sigma2), snr


def test_uap_grad_single_frame_matches_reference_loop(hamming74):
    # Eq. with N=1 is plain projected ascent on that frame's smoothed loss
    dec = trained_mlp(hamming74, steps=300, seed=34)
    frames, snr = make_frames(hamming74, 1)
    budget = EnergyBudget.for_universal(0.05, hamming74.n, snr.sigma2)
    cfg = SmoothingConfig(nu=0.1, samples=32, seed=13, estimator="backprop_mc")
    art = uap_grad_attack(dec, frames, budget, cfg, lr=0.02, batches=10)
    # reference: same update rule unrolled by hand
    from decrob.smoothing import gradient_rows
    from decrob.attacks import project_l2 as proj

    delta = np.zeros(hamming74.n)
    for t in range(10):
        g, _ = gradient_rows(dec, hamming74, frames.received, delta, frames.targets,
                             cfg, frames.sigma2, stream=t + 1)
        gm = g.mean(axis=0)
        delta = proj(delta + 0.02 * gm / np.linalg.norm(gm), budget.epsilon)
    assert np.allclose(art.delta, delta)


def test_uap_grad_identical_frames_match_single(hamming74):
    dec = trained_mlp(hamming74, steps=300, seed=35)
    single, snr = make_frames(hamming74, 1, seed=14)
    repeated = FrameBatch(
        code=hamming74,
        received=np.repeat(single.received, 4, axis=0),
        targets=np.repeat(single.targets, 4, axis=0),
        sigma2=single.sigma2,
    )
    budget = EnergyBudget.for_universal(0.05, hamming74.n, snr.sigma2)
    cfg = SmoothingConfig(nu=0.1, samples=32, seed=15, estimator="backprop_mc")
    a = uap_grad_attack(dec, single, budget, cfg, lr=0.02, batches=5, batch_size=4)
    b = uap_grad_attack(dec, repeated, budget, cfg, lr=0.02, batches=5, batch_size=4)
    # same frames in every batch either way: identical updates
    assert np.allclose(a.delta, b.delta)


def test_uap_grad_improves_objective(ldpc49):
    dec = trained_mlp(ldpc49, steps=600, seed=36)
    frames, snr = make_frames(ldpc49, 128, seed=16)
    budget = EnergyBudget.for_universal(0.01, ldpc49.n, snr.sigma2)
    cfg = SmoothingConfig(nu=0.1, samples=32, seed=17, estimator="backprop_mc")
    art = uap_grad_attack(dec, frames, budget, cfg)
    assert np.linalg.norm(art.delta) <= budget.epsilon + 1e-12
    assert art.hyperparameters["objective_after"] >= art.hyperparameters["objective_before"]


def test_power_iteration_matches_eigh(rng):
    for _ in range(10):
        a = rng.normal(size=(12, 12))
        m = a @ a.T
        lam, v, converged, iters = power_iteration(m, seed=3)
        evals, evecs = np.linalg.eigh(m)
        assert converged
        assert lam == pytest.approx(evals[-1], rel=1e-8)
        assert abs(float(v @ evecs[:, -1])) == pytest.approx(1.0, abs=1e-6)


def test_power_iteration_flat_spectrum_does_not_crash():
    lam, v, converged, iters = power_iteration(np.eye(6), seed=0)
    assert lam == pytest.approx(1.0)
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_uap_pca_rank_one_batch(hamming74):
    # all gradients along e1: the universal direction must be +/- e1
    class RankOne(FunctionLossDecoder):
        pass

    w = np.zeros(7)
    w[0] = 1.0
    dec = FunctionLossDecoder(lambda u: float(w @ u) + 20.0, grad_fn=lambda u: w)
    frames, snr = make_frames(hamming74, 16, seed=18)
    budget = EnergyBudget.for_universal(0.05, 7, snr.sigma2)
    cfg = SmoothingConfig(nu=0.2, samples=32, seed=19, estimator="backprop_mc", loss_clip=1e9)
    art = uap_pca_attack(dec, frames, budget, cfg)
    direction = art.delta / np.linalg.norm(art.delta)
    assert abs(abs(direction[0]) - 1.0) <= 1e-6
    # sign disambiguation: +e1 raises the linear loss, -e1 lowers it
    assert direction[0] > 0


def test_uap_pca_rayleigh_quotient_near_top(ldpc49):
    dec = trained_mlp(ldpc49, steps=400, seed=37)
    frames, snr = make_frames(ldpc49, 64, seed=20)
    budget = EnergyBudget.for_universal(0.01, ldpc49.n, snr.sigma2)
    cfg = SmoothingConfig(nu=0.1, samples=64, seed=21, estimator="backprop_mc")
    gb = GradientBatch.collect(dec, frames, cfg)
    sigma_q = gb.q.T @ gb.q / gb.q.shape[0]
    art = uap_pca_attack(dec, frames, budget, cfg)
    u = art.delta / np.linalg.norm(art.delta)
    lam1 = np.linalg.eigvalsh(sigma_q)[-1]
    assert u @ sigma_q @ u >= (1 - 1e-6) * lam1


def test_uap_pca_two_cluster_structure(hamming74):
    # per-frame gradients 3:1 along two orthogonal directions, keyed off the
    # sign of coordinate 0 (sign-stable under the smoothing draws); the second
    # moment is (9 uu^T + vv^T)/2 so the top eigenvector is the big cluster
    u_dir = np.zeros(7)
    u_dir[1] = 1.0
    v_dir = np.zeros(7)
    v_dir[4] = 1.0

    def loss_fn(u):
        return 20.0 + (3.0 * float(u_dir @ u) if u[0] >= 0 else float(v_dir @ u))

    def grad_fn(u):
        return 3.0 * u_dir if u[0] >= 0 else v_dir

    dec = FunctionLossDecoder(loss_fn, grad_fn=grad_fn)
    snr = SnrContext.from_db(5.0, hamming74.rate)
    y = np.zeros((64, 7))
    y[:32, 0] = 2.0
    y[32:, 0] = -2.0
    frames = FrameBatch(code=hamming74, received=y,
                        targets=np.zeros((64, 7), dtype=np.uint8), sigma2=snr.sigma2)
    budget = EnergyBudget.for_universal(0.05, 7, snr.sigma2)
    cfg = SmoothingConfig(nu=0.2, samples=16, seed=23, estimator="backprop_mc", loss_clip=1e9)
    art = uap_pca_attack(dec, frames, budget, cfg)
    direction = art.delta / np.linalg.norm(art.delta)
    assert abs(float(direction @ u_dir)) > 0.99
    # sign disambiguation: +u_dir raises the plus-cluster loss
    assert float(direction @ u_dir) > 0


def test_artifact_round_trip(tmp_path):
    art = AttackArtifact(
        kind="uap_grad", code_id="ldpc_49_24", alpha=0.01, epsilon=0.08,
        source_decoder="mlp", seed=7, hyperparameters={"lr": 0.05, "batches": 50},
        delta=np.linspace(-0.01, 0.01, 49),
    )
    path = tmp_path / "a.attack"
    save_artifact(art, str(path))
    back = load_artifact(str(path))
    assert back.kind == art.kind
    assert back.alpha == art.alpha
    assert back.epsilon == art.epsilon
    assert back.hyperparameters == art.hyperparameters
    assert np.array_equal(back.delta, art.delta)


def test_artifact_sample_wise_round_trip(tmp_path):
    art = AttackArtifact(kind="pgd", code_id="x", alpha=0.001, epsilon=0.0,
                         source_decoder="mlp", seed=3, hyperparameters={"T": 20}, delta=None)
    path = tmp_path / "b.attack"
    save_artifact(art, str(path))
    back = load_artifact(str(path))
    assert back.delta is None
    assert back.kind == "pgd"


def test_artifact_rejects_over_budget():
    with pytest.raises(ValueError, match="budget"):
        AttackArtifact(kind="uap_grad", code_id="x", alpha=0.01, epsilon=0.1,
                       source_decoder="m", seed=0, delta=np.ones(4))


def test_budget_invariant_all_kinds(ldpc49):
    # every attack kind emits perturbations within eps + 1e-12
    dec = trained_mlp(ldpc49, steps=300, seed=38)
    snr = SnrContext.from_db(5.0, ldpc49.rate)
    cfg = SmoothingConfig(nu=0.1, samples=16, seed=24, estimator="backprop_mc")
    _, cws, y = transmit_batch(ldpc49, snr, seed=25, start=0, count=30)
    eps = 0.01 * np.linalg.norm(y, axis=1)
    d_r = random_rows(30, ldpc49.n, eps, seed=25)
    d_f, _ = fgm_rows(dec, ldpc49, y, cws, eps, cfg, snr.sigma2)
    d_p, _ = pgd_rows(dec, ldpc49, y, cws, eps, cfg, snr.sigma2, t_steps=5)
    for d in (d_r, d_f, d_p):
        assert np.all(np.linalg.norm(d, axis=1) <= eps + 1e-12)
    frames, _ = make_frames(ldpc49, 32, seed=26)
    budget = EnergyBudget.for_universal(0.01, ldpc49.n, snr.sigma2)
    for art in (uap_grad_attack(dec, frames, budget, cfg, batches=5),
                uap_pca_attack(dec, frames, budget, cfg)):
        assert np.linalg.norm(art.delta) <= budget.epsilon + 1e-12


def test_attack_frame_kinds(ldpc49):
    dec = trained_mlp(ldpc49, steps=200, seed=39)
    snr = SnrContext.from_db(5.0, ldpc49.rate)
    frame = transmit(ldpc49, snr, seed=27, index=0)
    budget = EnergyBudget.for_sample(0.01, frame.received)
    cfg = SmoothingConfig(nu=0.1, samples=16, seed=28, estimator="backprop_mc")
    for kind in ("random", "fgm", "pgd"):
        res = attack_frame(dec, ldpc49, frame, budget, cfg, kind=kind, t_steps=3)
        assert np.linalg.norm(res.delta) <= budget.epsilon + 1e-12
    with pytest.raises(ValueError):
        attack_frame(dec, ldpc49, frame, budget, cfg, kind="nope")

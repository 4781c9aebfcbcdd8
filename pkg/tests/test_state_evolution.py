import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from hdrobust import scale_mixtures as sm
from hdrobust import state_evolution as se
from hdrobust.channel import LossSpec, NoiseModel, proximal_f, prox_derivative, z0
from hdrobust.errors import (
    DegenerateDenominator,
    InfiniteNoiseVariance,
    NotConverged,
    RootNotBracketed,
)
from hdrobust.quadrature import gauss_hermite

GAUSS = NoiseModel.gaussian(1.0)


def single(alpha, law, noise, loss, b2=1.0):
    return se.ProblemSpec.single(alpha, law, noise, loss, beta_star_sq=b2)


def params(m, q, v):
    return se.OrderParams(m=m, q=q, v=v, t=np.zeros(1))


# ---------------------------------------------------------------------------
# channel updates


def test_square_channel_hand_example():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(1e-10))
    hats = se.channel_update_square(spec, params(1.0, 1.0, 1.0))
    assert hats.m_hat[0] == pytest.approx(1.0, abs=1e-12)
    assert hats.v_hat == pytest.approx(1.0, abs=1e-12)
    assert hats.q_hat[0] == pytest.approx(0.5, abs=1e-12)


def test_square_channel_zero_noise_perfect_overlap():
    spec = single(2.0, sm.Dirac(1.0), NoiseModel.gaussian(0.0), LossSpec.square(0.1))
    hats = se.channel_update_square(spec, params(1.0, 1.0, 0.7))
    assert hats.q_hat[0] == pytest.approx(0.0, abs=1e-14)


def test_square_channel_requires_finite_noise_power():
    heavy = NoiseModel.contaminated(0.5, sm.InverseGamma(0.8, 1.0))
    spec = single(2.0, sm.Dirac(1.0), heavy, LossSpec.square(0.1))
    with pytest.raises(InfiniteNoiseVariance):
        se.channel_update_square(spec, params(0.3, 0.9, 1.0))
    with pytest.raises(InfiniteNoiseVariance):
        se.solve(spec)


def _random_specs(rng, count, loss_maker):
    # Noise tails stay at shape >= 2: the huber-to-square separation scales
    # like delta^(2 - 2a), so thresholds such as delta = 1e6 only pin the
    # square loss to 1e-8 when the noise second moment converges comfortably.
    laws = [
        lambda: sm.Dirac(rng.uniform(0.5, 2.0)),
        lambda: sm.Discrete(((rng.uniform(0.3, 1.0), 0.4), (rng.uniform(1.0, 3.0), 0.6))),
        lambda: sm.InverseGamma(rng.uniform(1.1, 3.0), rng.uniform(0.3, 2.0)),
        lambda: sm.Contaminated(rng.uniform(0.0, 1.0), sm.Dirac(1.0), sm.Pareto(rng.uniform(1.1, 2.5))),
    ]
    noises = [
        lambda: NoiseModel.gaussian(rng.uniform(0.3, 2.0)),
        lambda: NoiseModel.from_scale_law(
            sm.Discrete(((rng.uniform(0.2, 1.0), 0.7), (rng.uniform(1.0, 4.0), 0.3)))
        ),
        lambda: NoiseModel.contaminated(rng.uniform(0.0, 1.0), sm.InverseGamma(rng.uniform(2.0, 4.0), 1.0)),
    ]
    out = []
    for _ in range(count):
        law = laws[rng.integers(len(laws))]()
        noise = noises[rng.integers(len(noises))]()
        out.append(
            single(
                rng.uniform(0.5, 8.0), law, noise, loss_maker(rng), b2=rng.uniform(0.5, 2.0)
            )
        )
    return out


def test_square_channel_matches_generic_quadrature():
    rng = np.random.default_rng(17)
    specs = _random_specs(rng, 8, lambda r: LossSpec.square(r.uniform(1e-4, 1.0)))
    for spec in specs:
        p = params(rng.uniform(0.0, 0.7), rng.uniform(0.5, 1.5), rng.uniform(0.2, 2.0))
        a = se.channel_update_square(spec, p)
        b = se.channel_update_generic(spec, p, nodes=200, zeta_nodes=120)
        assert a.m_hat[0] == pytest.approx(b.m_hat[0], rel=1e-8)
        assert a.q_hat[0] == pytest.approx(b.q_hat[0], rel=1e-8)
        assert a.v_hat == pytest.approx(b.v_hat, rel=1e-8)


def test_huber_channel_matches_generic_quadrature():
    rng = np.random.default_rng(29)
    specs = _random_specs(rng, 8, lambda r: LossSpec.huber(r.uniform(0.1, 3.0), r.uniform(1e-4, 1.0)))
    for spec in specs:
        p = params(rng.uniform(0.0, 0.7), rng.uniform(0.5, 1.5), rng.uniform(0.2, 2.0))
        a = se.channel_update_huber(spec, p)
        b = se.channel_update_generic(spec, p, nodes=200, zeta_nodes=120)
        assert a.m_hat[0] == pytest.approx(b.m_hat[0], rel=1e-8, abs=1e-10)
        assert a.q_hat[0] == pytest.approx(b.q_hat[0], rel=1e-8, abs=1e-10)
        assert a.v_hat == pytest.approx(b.v_hat, rel=1e-8, abs=1e-10)


def _brute_force_hats(spec, p, n_zeta=150):
    """Hat parameters by pointwise quadrature of the generic equations:
    Gauss-Hermite over the field, adaptive quadrature over labels split at the
    proximal kinks, the channel density from z0. Shares no code path with the
    closed forms or the truncated-moment route."""
    alpha, b2 = spec.alpha, spec.beta_star_sq
    loss = spec.loss
    law = spec.clusters[0].scale_law
    assert isinstance(law, (sm.Dirac, sm.Discrete))
    atoms = [(law.scale, 1.0)] if isinstance(law, sm.Dirac) else list(law.atoms)
    sig_hats = [c.scale_law.scale for c in spec.noise.components]
    zg, zw = gauss_hermite(n_zeta)
    m, q, v = p.m, p.q, p.v
    qh = vh = mh = 0.0
    for sig, ws in atoms:
        s2 = sig * sig
        cond_var = s2 * (b2 - m * m / q)
        width = math.sqrt(cond_var + max(sig_hats) ** 2)
        for zeta, wz in zip(zg, zw):
            mu = sig * m / math.sqrt(q) * zeta
            omega = sig * math.sqrt(q) * zeta
            radius = loss.delta * (1.0 + v * s2) if loss.kind == "huber" else math.inf
            pts = [omega - radius, omega + radius] if math.isfinite(radius) else []
            lo = min(mu, omega) - 14.0 * width
            hi = max(mu, omega) + 14.0 * width
            inner = sorted({x for x in pts + [mu] if lo < x < hi})

            def zf(y, what):
                zval, dz = z0(spec.noise, np.array([y]), mu, cond_var)
                f = float(proximal_f(loss, y, omega, v * s2))
                if what == "q":
                    return zval[0] * f * f
                if what == "v":
                    return zval[0] * float(prox_derivative(loss, y, omega, v * s2))
                return dz[0] * f

            for what in ("q", "v", "m"):
                val, _ = integrate.quad(zf, lo, hi, args=(what,), points=inner, limit=400)
                if what == "q":
                    qh += ws * wz * s2 * val
                elif what == "v":
                    vh -= ws * wz * s2 * val
                else:
                    mh += ws * wz * s2 * val
    return alpha * mh, alpha * qh, alpha * vh


@pytest.mark.parametrize("loss", [LossSpec.square(0.05), LossSpec.huber(0.7, 0.05)])
def test_channels_match_pointwise_brute_force(loss):
    from hdrobust.channel import NoiseComponent

    law = sm.Discrete(((0.8, 0.5), (1.6, 0.5)))
    noise = NoiseModel(
        (
            NoiseComponent(0.6, 1.0, sm.Dirac(1.0)),
            NoiseComponent(0.4, 1.0, sm.Dirac(2.0)),
        )
    )
    spec = single(1.7, law, noise, loss)
    p = params(0.35, 0.9, 0.6)
    closed = se.channel_update(spec, p, se.SolverConfig())
    mh, qh, vh = _brute_force_hats(spec, p)
    assert closed.m_hat[0] == pytest.approx(mh, rel=1e-7)
    assert closed.q_hat[0] == pytest.approx(qh, rel=1e-7)
    assert closed.v_hat == pytest.approx(vh, rel=1e-7)


def test_huber_channel_large_threshold_reduces_to_square():
    rng = np.random.default_rng(5)
    specs = _random_specs(rng, 50, lambda r: LossSpec.square(r.uniform(1e-4, 1.0)))
    for spec in specs:
        if math.isinf(spec.noise.second_moment()):
            continue
        p = params(rng.uniform(0.0, 0.7), rng.uniform(0.5, 1.5), rng.uniform(0.2, 2.0))
        sq = se.channel_update_square(spec, p)
        hb = se.channel_update_huber(replace(spec, loss=LossSpec.huber(1e6, spec.loss.ridge)), p)
        assert hb.m_hat[0] == pytest.approx(sq.m_hat[0], rel=1e-9)
        assert hb.q_hat[0] == pytest.approx(sq.q_hat[0], rel=1e-9, abs=1e-12)
        assert hb.v_hat == pytest.approx(sq.v_hat, rel=1e-9)


def test_huber_channel_small_threshold_limit():
    spec = single(2.0, sm.InverseGamma(2.0, 1.0), GAUSS, LossSpec.huber(1e-8, 0.1))
    p = params(0.3, 0.8, 0.9)
    tiny = se.channel_update_huber(spec, p)
    small = se.channel_update_huber(replace(spec, loss=LossSpec.huber(1e-7, 0.1)), p)
    # m_hat, v_hat vanish linearly; q_hat / delta^2 drifts below 1e-3
    assert abs(tiny.m_hat[0]) < 1e-6
    assert abs(tiny.v_hat) < 1e-6
    ratio_tiny = tiny.q_hat[0] / 1e-8**2
    ratio_small = small.q_hat[0] / 1e-7**2
    assert ratio_tiny == pytest.approx(ratio_small, rel=1e-3)


def test_huber_identity_theta_makes_mhat_equal_vhat():
    spec = single(2.5, sm.InverseGamma(1.5, 0.5), NoiseModel.contaminated(0.4, sm.Pareto(0.9)), LossSpec.huber(0.8, 0.01))
    hats = se.channel_update_huber(spec, params(0.4, 1.1, 0.8))
    assert hats.m_hat[0] == hats.v_hat


# ---------------------------------------------------------------------------
# prior update


def test_prior_update_hand_example():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(0.0))
    out = se.prior_update(spec, se.HatParams(np.array([1.0]), np.array([0.5]), 1.0, np.zeros(1)))
    assert (out.m, out.q, out.v) == pytest.approx((1.0, 1.5, 1.0))


def test_prior_update_infinite_shrinkage():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(1e12))
    out = se.prior_update(spec, se.HatParams(np.array([1.0]), np.array([0.5]), 1.0, np.zeros(1)))
    assert abs(out.m) < 1e-11 and abs(out.q) < 1e-22 and out.v < 1e-11


def test_prior_update_degenerate_denominator():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(0.0))
    with pytest.raises(DegenerateDenominator):
        se.prior_update(spec, se.HatParams(np.array([1.0]), np.array([0.5]), 0.0, np.zeros(1)))


def test_prior_update_two_centered_clusters_pool():
    spec1 = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(0.3))
    hats1 = se.HatParams(np.array([0.8]), np.array([0.6]), 1.1, np.zeros(1))
    spec2 = se.ProblemSpec(
        alpha=2.0, beta_star_sq=1.0,
        clusters=(se.Cluster(0.5, sm.Dirac(1.0)), se.Cluster(0.5, sm.Dirac(1.0))),
        noise=GAUSS, loss=LossSpec.square(0.3),
    )
    hats2 = se.HatParams(np.array([0.4, 0.4]), np.array([0.3, 0.3]), 1.1, np.zeros(2))
    out1, out2 = se.prior_update(spec1, hats1), se.prior_update(spec2, hats2)
    assert (out2.m, out2.q, out2.v) == pytest.approx((out1.m, out1.q, out1.v), abs=1e-14)


# ---------------------------------------------------------------------------
# solve


def test_solve_gaussian_baseline():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(1e-10))
    sol = se.solve(spec)
    assert sol.converged
    assert sol.eps_est == pytest.approx(1.0, abs=1e-6)
    assert sol.eps_est == pytest.approx(spec.beta_star_sq - 2 * sol.params.m + sol.params.q, abs=1e-12)


def test_solve_no_data_limit():
    spec = single(1e-6, sm.InverseGamma(2.0, 1.0), GAUSS, LossSpec.square(1e-10), b2=1.3)
    sol = se.solve(spec)
    assert abs(sol.params.m) < 1e-4
    assert sol.params.q < 1e-4
    assert sol.eps_est == pytest.approx(1.3, abs=1e-3)


def test_solve_noise_free_interpolation():
    spec = single(2.0, sm.Dirac(1.0), NoiseModel.gaussian(0.0), LossSpec.square(1e-10))
    sol = se.solve(spec)
    assert sol.eps_est < 1e-6


def test_solve_not_converged_carries_solution():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(1e-10))
    with pytest.raises(NotConverged) as err:
        se.solve(spec, se.SolverConfig(max_iters=3))
    assert err.value.solution is not None
    assert not err.value.solution.converged
    flagged = se.solve(spec, se.SolverConfig(max_iters=3, raise_on_fail=False))
    assert not flagged.converged


def test_solve_idempotent_at_fixed_point():
    cfg = se.SolverConfig(tol=1e-10)
    for spec in (
        single(2.0, sm.InverseGamma(1.1, 0.1), GAUSS, LossSpec.square(1e-3)),
        single(1.5, sm.Dirac(1.0), NoiseModel.contaminated(0.5, sm.InverseGamma(1.1, 0.1)), LossSpec.huber(0.7, 1e-2)),
    ):
        sol = se.solve(spec, cfg)
        hats = se.channel_update(spec, sol.params, cfg)
        fresh = se.prior_update(spec, hats)
        old, new = sol.params.flat(), fresh.flat()
        assert float(np.max(np.abs(new - old) / (np.abs(old) + 1e-12))) < cfg.tol
        # converged overlaps respect the Cauchy-Schwarz ball
        assert abs(sol.params.m) <= math.sqrt(spec.beta_star_sq * sol.params.q) + 1e-9


def test_eps_est_monotone_in_alpha():
    # Monotone grids as used by the acceptance scenarios: a ridgeless sweep
    # above the interpolation threshold and a well-regularised huber sweep.
    # (With tiny fixed ridge the error genuinely peaks near alpha = 1.)
    prev = math.inf
    for alpha in np.geomspace(1.5, 16.0, 8):
        sol = se.stieltjes_form_solve(single(alpha, sm.Dirac(1.0), GAUSS, LossSpec.square(1e-10)))
        assert sol.eps_est < prev + 1e-12
        prev = sol.eps_est
    noise = NoiseModel.contaminated(0.5, sm.InverseGamma(1.1, 0.1))
    prev = math.inf
    for alpha in np.geomspace(0.25, 16.0, 10):
        sol = se.solve(single(alpha, sm.Dirac(1.0), noise, LossSpec.huber(0.8, 0.5)))
        assert sol.eps_est < prev + 1e-12
        prev = sol.eps_est


def test_large_alpha_consistency():
    spec = single(1e5, sm.InverseGamma(2.0, 1.0), GAUSS, LossSpec.square(1e-10))
    sol = se.stieltjes_form_solve(spec)
    assert sol.angle < 1e-2
    assert sol.params.m == pytest.approx(spec.beta_star_sq, abs=1e-3)


def test_huber_infinite_delta_solution_equals_square():
    noise = NoiseModel.contaminated(0.3, sm.InverseGamma(2.0, 1.0))
    sq = se.solve(single(2.0, sm.InverseGamma(1.5, 0.5), noise, LossSpec.square(0.05)))
    hb = se.solve(single(2.0, sm.InverseGamma(1.5, 0.5), noise, LossSpec.huber(math.inf, 0.05)))
    assert hb.eps_est == pytest.approx(sq.eps_est, rel=1e-8)
    assert hb.params.v == pytest.approx(sq.params.v, rel=1e-8)


def test_k_cluster_centered_identical_matches_pooled():
    law_a, law_b = sm.Dirac(1.0), sm.InverseGamma(2.0, 1.0)
    pooled = sm.Contaminated(0.7, law_a, law_b)
    noise = NoiseModel.gaussian(0.5)
    loss = LossSpec.huber(0.9, 0.05)
    cfg = se.SolverConfig(tol=1e-11)
    two = se.ProblemSpec(
        alpha=2.0, beta_star_sq=1.0,
        clusters=(se.Cluster(0.3, law_a), se.Cluster(0.7, law_b)),
        noise=noise, loss=loss,
    )
    one = single(2.0, pooled, noise, loss)
    sol_two, sol_one = se.solve(two, cfg), se.solve(one, cfg)
    assert sol_two.params.m == pytest.approx(sol_one.params.m, abs=1e-10)
    assert sol_two.params.q == pytest.approx(sol_one.params.q, abs=1e-10)
    assert sol_two.params.v == pytest.approx(sol_one.params.v, abs=1e-10)


def test_square_hats_depend_on_noise_through_second_moment_only():
    atoms = sm.Discrete(((math.sqrt(0.4), 0.5), (math.sqrt(2.2), 0.5)))
    n1 = NoiseModel.gaussian(1.3)
    n2 = NoiseModel.from_scale_law(atoms)
    assert n1.second_moment() == pytest.approx(n2.second_moment(), abs=1e-14)
    spec1 = single(2.0, sm.InverseGamma(2.0, 1.0), n1, LossSpec.square(0.1))
    spec2 = single(2.0, sm.InverseGamma(2.0, 1.0), n2, LossSpec.square(0.1))
    p = params(0.4, 0.9, 0.7)
    h1, h2 = se.channel_update_square(spec1, p), se.channel_update_square(spec2, p)
    assert h1.m_hat[0] == pytest.approx(h2.m_hat[0], abs=1e-10)
    assert h1.q_hat[0] == pytest.approx(h2.q_hat[0], abs=1e-10)
    assert h1.v_hat == pytest.approx(h2.v_hat, abs=1e-10)


def test_scaled_teacher_channels_match_generic():
    # outlier labels with theta != 1 exercise the per-component scaling terms
    noise = NoiseModel.with_outliers(0.3, 0.5, sigma_in=0.7, sigma_out=0.4)
    p = params(0.3, 0.8, 0.9)
    sq_spec = single(3.0, sm.Dirac(1.0), noise, LossSpec.square(0.1))
    a = se.channel_update_square(sq_spec, p)
    b = se.channel_update_generic(sq_spec, p, nodes=200, zeta_nodes=150)
    assert a.m_hat[0] == pytest.approx(b.m_hat[0], rel=1e-9)
    assert a.q_hat[0] == pytest.approx(b.q_hat[0], rel=1e-9)
    hb_spec = single(3.0, sm.Dirac(1.0), noise, LossSpec.huber(0.7, 0.1))
    h = se.channel_update_huber(hb_spec, p)
    g = se.channel_update_generic(hb_spec, p, nodes=200, zeta_nodes=150)
    assert h.m_hat[0] == pytest.approx(g.m_hat[0], rel=1e-9)
    assert h.q_hat[0] == pytest.approx(g.q_hat[0], rel=1e-9)
    assert h.v_hat == pytest.approx(g.v_hat, rel=1e-9)
    assert h.m_hat[0] != h.v_hat  # scaling breaks the identity-theta equality


def test_noncentered_square_channel_matches_generic():
    # exercises the teacher-overlap and magnetisation terms on both routes
    spec = se.ProblemSpec(
        alpha=1.8, beta_star_sq=1.0,
        clusters=(se.Cluster(0.4, sm.Dirac(1.0), 0.3), se.Cluster(0.6, sm.InverseGamma(2.0, 1.0), -0.2)),
        noise=NoiseModel.gaussian(0.7), loss=LossSpec.square(0.2),
        gram=np.array([[0.5, 0.1], [0.1, 0.8]]),
    )
    p = se.OrderParams(m=0.3, q=0.9, v=0.8, t=np.array([0.15, -0.05]))
    a = se.channel_update_square(spec, p)
    b = se.channel_update_generic(spec, p, nodes=200, zeta_nodes=150)
    assert a.m_hat == pytest.approx(b.m_hat, rel=1e-8)
    assert a.q_hat == pytest.approx(b.q_hat, rel=1e-8)
    assert a.t_hat == pytest.approx(b.t_hat, rel=1e-8, abs=1e-12)
    assert a.v_hat == pytest.approx(b.v_hat, rel=1e-8)


# ---------------------------------------------------------------------------
# training loss and errors


def test_training_loss_universal_value():
    for law in (sm.Dirac(1.0), sm.InverseGamma(1.1, 0.1), sm.Pareto(0.5)):
        sol = se.solve(single(2.0, law, GAUSS, LossSpec.square(1e-10)))
        assert sol.eps_train == pytest.approx(0.25, abs=1e-6)


def test_training_loss_below_threshold_is_zero():
    sol = se.solve(single(0.5, sm.Dirac(1.0), GAUSS, LossSpec.square(1e-10)))
    assert sol.eps_train == pytest.approx(0.0, abs=1e-6)


def test_training_loss_noise_free():
    sol = se.solve(single(2.0, sm.Dirac(1.0), NoiseModel.gaussian(0.0), LossSpec.square(1e-10)))
    assert sol.eps_train == pytest.approx(0.0, abs=1e-9)


def test_gen_error_infinite_variance_covariates_flagged():
    spec = single(2.0, sm.Pareto(0.5), GAUSS, LossSpec.square(1e-6))
    sol = se.solve(spec)
    assert math.isinf(sol.eps_gen)
    assert math.isfinite(sol.params.m) and math.isfinite(sol.params.q)
    assert math.isfinite(sol.eps_est)


def test_huber_training_loss_matches_erf_form_on_generic_route():
    spec = single(2.0, sm.InverseGamma(2.0, 1.0), NoiseModel.contaminated(0.4, sm.InverseGamma(3.0, 2.0)), LossSpec.huber(0.8, 0.05))
    sol = se.solve(spec)
    closed = se.training_loss(spec, sol.params)
    generic = se._training_loss_generic(spec, sol.params, nodes=200, zeta_nodes=120)
    assert closed == pytest.approx(generic, rel=1e-8)


# ---------------------------------------------------------------------------
# square-loss fast path


def test_fast_path_dirac_ridgeless():
    spec = single(2.0, sm.Dirac(1.0), GAUSS, LossSpec.square(0.0))
    sol = se.stieltjes_form_solve(spec)
    assert sol.params.v == pytest.approx(1.0, rel=1e-12)
    assert sol.eps_est == pytest.approx(1.0, rel=1e-10)


def test_fast_path_no_root_below_threshold():
    with pytest.raises(RootNotBracketed):
        se.stieltjes_form_solve(single(0.8, sm.Dirac(1.0), GAUSS, LossSpec.square(0.0)))
    with pytest.raises(RootNotBracketed):
        se.stieltjes_form_solve(single(1.0, sm.Dirac(1.0), GAUSS, LossSpec.square(0.0)))


def test_fast_path_agrees_with_damped_iteration():
    rng = np.random.default_rng(101)
    cfg = se.SolverConfig(tol=1e-12)
    checked = 0
    for spec in _random_specs(rng, 100, lambda r: LossSpec.square(r.uniform(1e-6, 2.0))):
        if math.isinf(spec.noise.second_moment()):
            continue
        fast = se.stieltjes_form_solve(spec, cfg)
        iterated = se.solve(spec, cfg)
        assert fast.eps_est == pytest.approx(iterated.eps_est, rel=1e-8, abs=1e-12)
        assert fast.params.v == pytest.approx(iterated.params.v, rel=1e-8)
        checked += 1
    assert checked >= 50

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from demo2prog import smc
from demo2prog.arm import forward_kinematics_batch, project
from demo2prog.attribution import SaliencyMap
from demo2prog.errors import ContractViolationError, DegenerateWeightsError, InvalidArgumentError
from demo2prog.programs import (ControllerParams, Exec, Seq,
                                generate_demonstration)
from demo2prog.symbolizer import detect_switches


def test_likelihood_peak_and_unit_residual():
    p = ControllerParams([0.5, -0.2, 0.1], 2.0)
    theta = np.array([0.1, 0.1, 0.1])
    u = 2.0 * (p.goal - theta)
    assert smc.control_likelihood(u, theta, p, 0.05) == pytest.approx((2 * math.pi * 0.05 ** 2) ** -1.5)
    one = ControllerParams([1.0], 1.0)
    assert smc.control_likelihood([2.0], [0.0], one, 1.0) == pytest.approx(0.24197072451914337)
    assert smc.control_likelihood([1e4], [0.0], one, 1.0) == 0.0
    with pytest.raises(InvalidArgumentError):
        smc.control_likelihood([1.0, 1.0], [0.0], one, 1.0)


def test_log_likelihood_vectorised():
    goals = np.array([[1.0, 0.0], [0.0, 1.0]])
    ll = smc.log_control_likelihood([2.0, 0.0], [0.0, 0.0], goals, np.array([2.0, 2.0]), 1.0)
    np.testing.assert_allclose(ll, [-math.log(2 * math.pi), -math.log(2 * math.pi) - 4.0])


def test_neff_examples():
    assert smc.effective_sample_size(np.full(50, 0.02)) == pytest.approx(50.0)
    assert smc.effective_sample_size([0.5, 0.5] + [0.0] * 48) == 2.0
    assert smc.effective_sample_size(np.eye(50)[7]) == 1.0
    for bad in ([0.5, 0.6], [1.5, -0.5], [], [[1.0]]):
        with pytest.raises(ContractViolationError):
            smc.effective_sample_size(bad)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=100).filter(lambda w: sum(w) > 1e-6))
def test_neff_bounds(raw):
    w = np.array(raw) / np.sum(raw)
    n = smc.effective_sample_size(w)
    assert 1.0 - 1e-12 <= n <= len(w) + 1e-9


def test_particle_set_normalisation_contract():
    with pytest.raises(ContractViolationError):
        smc.ParticleSet(np.zeros((2, 1)), np.ones(2), np.array([0.5, 0.5 + 1e-6]))
    smc.ParticleSet(np.zeros((2, 1)), np.ones(2), np.array([0.5, 0.5 + 1e-10]))


def test_config_validation():
    cfg = smc.GenerativeModelConfig()
    assert cfg.n_continue == 45 and cfg.n_draws == 50
    assert smc.GenerativeModelConfig(p_switch=0.15, n_particles=10).n_continue == 9
    for kw in ({"p_switch": 0.0}, {"p_switch": 1.0}, {"r": 0.0}, {"n_particles": 1},
               {"window": 0}, {"allocation": "x"}):
        with pytest.raises(InvalidArgumentError):
            smc.GenerativeModelConfig(**kw)


def test_switch_slots_fixed_allocation():
    cfg = smc.GenerativeModelConfig()
    m = smc.switch_slots(cfg, np.random.default_rng(0))
    assert m.sum() == 5
    assert np.array_equal(m, smc.switch_slots(cfg, np.random.default_rng(1)))


def test_systematic_resample():
    rng = np.random.default_rng(0)
    assert np.all(smc.systematic_resample(np.eye(10)[3], rng) == 3)
    w = rng.dirichlet(np.ones(20))
    idx = smc.systematic_resample(w, np.random.default_rng(5))
    assert len(idx) == 20
    assert np.array_equal(idx, smc.systematic_resample(w, np.random.default_rng(5)))
    # every index is copied floor(N w) or ceil(N w) times
    counts = np.bincount(idx, minlength=20)
    assert np.all(np.abs(counts - 20 * w) < 1.0 + 1e-9)


def test_future_window_truncation():
    assert smc.future_window(10, 7, 100).tolist() == [7, 8, 9]
    assert smc.future_window(10, 2, 3).tolist() == [2, 3, 4, 5]


@pytest.fixture(scope="module")
def two_goal_demo(arm, camera, scene, library):
    return generate_demonstration(Seq((Exec(0), Exec(1))), library, arm, scene, camera)


def _block_mask_saliency(camera, obj):
    v = np.zeros((camera.height, camera.width))
    c = project(camera, obj.center)
    h = obj.half_extent * camera.pixels_per_unit
    v[int(np.ceil(c[1] - h)):int(c[1] + h) + 1, int(np.ceil(c[0] - h)):int(c[0] + h) + 1] = 1.0
    return SaliencyMap(v, (camera.width, camera.height)), c, h


def test_attribution_prior_concentrates_on_salient_block(two_goal_demo, arm, camera, scene):
    sal, c, h = _block_mask_saliency(camera, scene.objects[1])
    s = smc.attribution_prior_sample(two_goal_demo, 0, sal, arm, camera, 500,
                                     np.random.default_rng(0), n_draws=2000)
    assert not s.fallback
    pix = project(camera, forward_kinematics_batch(arm, s.goals))
    inside = np.all(np.abs(pix - c) <= h, axis=1)
    assert inside.mean() >= 0.9


def test_attribution_prior_uniform_saliency_is_uniform(two_goal_demo, arm, camera):
    sal = SaliencyMap(np.ones((24, 32)), (camera.width, camera.height))
    window = smc.future_window(len(two_goal_demo), 0, 30)
    # a large candidate pool: the draw-then-resample scheme is overdispersed otherwise
    s = smc.attribution_prior_sample(two_goal_demo, 0, sal, arm, camera, 3100,
                                     np.random.default_rng(0), window=30, n_draws=100_000)
    counts = np.bincount(s.indices, minlength=window[-1] + 1)[window]
    assert stats.chisquare(counts).pvalue > 0.01


def test_attribution_prior_zero_saliency_falls_back(two_goal_demo, arm, camera):
    sal = SaliencyMap(np.zeros((24, 32)), (camera.width, camera.height))
    cfg = smc.GenerativeModelConfig()
    prior = smc.AttributionPrior(two_goal_demo, cfg, sal, arm, camera)
    s = prior(3, 10, np.random.default_rng(0))
    assert s.fallback and prior.fallbacks == 1
    assert s.goals.shape == (10, 3) and np.all(s.indices >= 3)


def test_baseline_prior_window():
    demo = type("D", (), {"thetas": np.arange(20.0)[:, None] * np.ones(3)})()
    s = smc.baseline_prior_sample(demo, 12, 200, np.random.default_rng(0), window=4)
    assert s.indices.min() >= 12 and s.indices.max() <= 16


def test_one_segment_neff_stays_high(arm, camera, scene, library):
    demo = generate_demonstration(Exec(2), library, arm, scene, camera)
    # goal jitter well below the control noise; at q_theta = 0.02 the dips reach about 0.42 N
    cfg = smc.GenerativeModelConfig(q_theta=0.01)
    prior = smc.BaselinePrior(demo, cfg)
    rng = np.random.default_rng(0)
    truth = library[2]
    ps = smc.ParticleSet(np.tile(truth.goal, (50, 1)), np.full(50, truth.gain), np.full(50, 0.02))
    neff = []
    for t in range(len(demo)):
        step = smc.sis_step(ps, t, demo.thetas[t], demo.controls[t], cfg, prior, rng)
        ps = step.particles
        neff.append(step.neff)
    assert min(neff) > 25


def test_two_segment_switch_is_a_dip(two_goal_demo, arm, camera):
    s = two_goal_demo.segment_starts[1]
    cfg = smc.GenerativeModelConfig()
    for seed in range(5):
        tr = smc.run_inference(two_goal_demo, cfg, smc.BaselinePrior(two_goal_demo, cfg),
                               np.random.default_rng(seed))
        assert np.all(tr.neff >= 1 - 1e-9) and np.all(tr.neff <= 50 + 1e-9)
        found = detect_switches(tr.neff)
        assert any(abs(p - s) <= 3 for p in found)


def test_map_goals_hit_true_goals(arm, camera, scene, library):
    demo = generate_demonstration(Seq(tuple(Exec(k) for k in (3, 1, 4, 0, 2))), library, arm,
                                  scene, camera)
    cfg = smc.GenerativeModelConfig()
    tr = smc.run_inference(demo, cfg, smc.BaselinePrior(demo, cfg), np.random.default_rng(0))
    ends = [s - 1 for s in demo.segment_starts[1:]] + [len(demo) - 1]
    for t, sym in zip(ends, (3, 1, 4, 0, 2)):
        assert np.max(np.abs(tr.map_goals[t] - library[sym].goal)) < 0.05


def test_inference_deterministic_and_single_step(two_goal_demo):
    cfg = smc.GenerativeModelConfig(n_particles=20)
    prior = smc.BaselinePrior(two_goal_demo, cfg)
    a = smc.run_inference(two_goal_demo, cfg, prior, np.random.default_rng(3))
    b = smc.run_inference(two_goal_demo, cfg, prior, np.random.default_rng(3))
    assert np.array_equal(a.neff, b.neff) and np.array_equal(a.goals, b.goals)
    np.testing.assert_allclose(a.weights.sum(axis=1), 1.0, atol=1e-12)
    assert len(a) == len(two_goal_demo) and a.prior == "baseline"

    one = type(two_goal_demo)(two_goal_demo.thetas[:1], two_goal_demo.controls[:1],
                              two_goal_demo.images[:1], two_goal_demo.dt,
                              two_goal_demo.segment_symbols[:1], [0], two_goal_demo.thetas[0])
    assert len(smc.run_inference(one, cfg, smc.BaselinePrior(one, cfg), np.random.default_rng(0))) == 1


def test_degenerate_weights():
    cfg = smc.GenerativeModelConfig(n_particles=4)
    ps = smc.ParticleSet(np.zeros((4, 2)), np.ones(4), np.full(4, 0.25))
    prior = lambda t, n, rng: smc.PriorSample(np.zeros((n, 2)), np.zeros(n, int))
    with pytest.raises(DegenerateWeightsError) as ei:
        smc.sis_step(ps, 7, np.zeros(2), np.array([np.nan, 0.0]), cfg, prior, np.random.default_rng(0))
    assert "7" in str(ei.value)
    with pytest.raises(InvalidArgumentError):
        smc.sis_step(ps, 0, np.zeros(2), np.zeros(2), smc.GenerativeModelConfig(), prior,
                     np.random.default_rng(0))


def test_trace_and_statistics_csv(tmp_path, two_goal_demo):
    cfg = smc.GenerativeModelConfig(n_particles=10)
    tr = smc.run_inference(two_goal_demo, cfg, smc.BaselinePrior(two_goal_demo, cfg),
                           np.random.default_rng(0))
    smc.write_trace_csv(tr, tmp_path / "t.csv")
    neff, goals, gains = smc.read_trace_csv(tmp_path / "t.csv")
    assert np.array_equal(neff, tr.neff) and np.array_equal(goals, tr.map_goals)
    assert np.array_equal(gains, tr.map_gains)
    st_ = smc.neff_statistics([1.0, 2.0, 3.0, 4.0, 5.0])
    assert st_ == {"mean": 3.0, "max": 5.0, "min": 1.0, "iqr": 2.0}
    smc.write_statistics_csv({"Baseline (N_p = 10)": st_}, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == [
        "statistic,mean,max,min,iqr", "Baseline (N_p = 10),3.0000,5.0000,1.0000,2.0000"]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import numeric_gradient, relative_error, tiny_config

from matsubgoal.losses import subgoal_cross_entropy
from matsubgoal.mat import (
    MatConfig,
    MomentState,
    PerturbationSet,
    adversarial_gradient,
    adversarial_loss,
    corrected_moments,
    init_perturbations,
    mat_step,
    project_to_ball,
    run_inner_loop,
    villa_baseline_step,
)
from matsubgoal.model import SPACES, SubgoalModel
from matsubgoal.train import teacher_forced_samples

SHAPES = {"instruction": (4, 3), "subgoals": (2, 3), "state": (3,)}


def _zeros(shapes=SHAPES, active=SPACES):
    return PerturbationSet({s: np.zeros(shapes[s]) for s in SPACES}, tuple(active))


def _fresh_moments(shapes=SHAPES, active=SPACES):
    return MomentState({s: np.zeros(shapes[s]) for s in active}, {s: np.zeros(shapes[s]) for s in active})


def _random_grads(rng, shapes=SHAPES, active=SPACES):
    return {s: rng.normal(size=shapes[s]) * 10 ** rng.uniform(-3, 3) for s in active}


def _sample_input(model, split, episode=5, k=2):
    sample = teacher_forced_samples(split["train"][episode])[k]
    return sample.to_input(model), sample.target


def test_scalar_first_step_moments():
    cfg = MatConfig(eps_ball=100.0)
    shapes = {"instruction": (1,), "subgoals": (1,), "state": (1,)}
    delta = _zeros(shapes, ("instruction",))
    new, mom = mat_step(delta, _fresh_moments(shapes, ("instruction",)), {"instruction": np.array([2.0])}, cfg)
    assert mom.t == 1
    assert mom.m["instruction"][0] == pytest.approx(0.2, abs=1e-15)
    assert mom.v["instruction"][0] == pytest.approx(0.004, abs=1e-15)
    m_hat, v_hat = corrected_moments(mom, "instruction")
    assert m_hat[0] == 2.0 and v_hat[0] == 4.0
    raw_step = cfg.eta * 2.0 / np.sqrt(4.0 + cfg.eps_num)
    assert raw_step == pytest.approx(cfg.eta, rel=1e-8)
    # the applied step is normalised to unit length
    assert new.delta_l[0] == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.99), st.floats(0.0, 0.9999))
def test_first_step_bias_correction_is_exact(seed, rho1, rho2):
    rng = np.random.default_rng(seed)
    grads = _random_grads(rng)
    _, mom = mat_step(_zeros(), _fresh_moments(), grads, MatConfig(rho1=rho1, rho2=rho2))
    for s in SPACES:
        m_hat, v_hat = corrected_moments(mom, s)
        np.testing.assert_array_equal(m_hat, grads[s])
        np.testing.assert_array_equal(v_hat, grads[s] * grads[s])


def test_zero_decay_matches_direct_formula():
    rng = np.random.default_rng(1)
    cfg = MatConfig(rho1=0.0, rho2=0.0, eps_ball=2.0)
    for _ in range(200):
        delta = _zeros()
        for s in SPACES:
            delta.components[s] = rng.uniform(-0.5, 0.5, SHAPES[s])
        grads = _random_grads(rng)
        new, _ = mat_step(delta, _fresh_moments(), grads, cfg)
        for s in SPACES:
            g = grads[s]
            step = cfg.eta * g / np.sqrt(g * g + cfg.eps_num)
            expected = delta.components[s] + step / np.linalg.norm(step)
            norm = np.linalg.norm(expected)
            if norm > cfg.eps_ball:
                expected = expected * (cfg.eps_ball / norm)
            assert np.max(np.abs(new.components[s] - expected)) <= 1e-12


def test_moment_recurrences_match_closed_form_over_fifty_steps():
    rng = np.random.default_rng(2)
    cfg = MatConfig(eps_ball=1e6)
    for _ in range(20):
        stream = [_random_grads(rng) for _ in range(50)]
        delta, mom = _zeros(), _fresh_moments()
        for t, grads in enumerate(stream, 1):
            delta, mom = mat_step(delta, mom, grads, cfg)
            for s in SPACES:
                gs = np.array([stream[i][s] for i in range(t)])
                w1 = (1 - cfg.rho1) * cfg.rho1 ** np.arange(t - 1, -1, -1)
                w2 = (1 - cfg.rho2) * cfg.rho2 ** np.arange(t - 1, -1, -1)
                m = np.tensordot(w1, gs, axes=1)
                v = np.tensordot(w2, gs * gs, axes=1)
                scale_m = max(1.0, np.abs(m).max())
                scale_v = max(1.0, np.abs(v).max())
                assert np.max(np.abs(mom.m[s] - m)) <= 1e-12 * scale_m
                assert np.max(np.abs(mom.v[s] - v)) <= 1e-12 * scale_v
                m_hat, v_hat = corrected_moments(mom, s)
                assert np.max(np.abs(m_hat - m / (1 - cfg.rho1**t))) <= 1e-12 * max(1.0, np.abs(m_hat).max())
                assert np.max(np.abs(v_hat - v / (1 - cfg.rho2**t))) <= 1e-12 * max(1.0, np.abs(v_hat).max())


def test_projection_rescales_radially():
    np.testing.assert_allclose(project_to_ball(np.array([3.0, 4.0]), 2.5), [1.5, 2.0], rtol=0, atol=1e-15)
    inside = np.array([0.3, 0.4])
    assert project_to_ball(inside, 2.5) is inside


def test_villa_unit_step_example():
    shapes = {"instruction": (2,), "subgoals": (1,), "state": (1,)}
    cfg = MatConfig(eta=1.0, eps_ball=10.0)
    new = villa_baseline_step(_zeros(shapes, ("instruction",)), {"instruction": np.array([0.0, 3.0])}, cfg)
    np.testing.assert_array_equal(new.delta_l, [0.0, 1.0])


def test_villa_and_moment_free_mat_share_direction():
    rng = np.random.default_rng(4)
    mat_cfg = MatConfig(rho1=0.0, rho2=0.0, use_second_moment=False, eps_ball=1e6)
    villa_cfg = MatConfig(eta=0.37, update_rule="villa", eps_ball=1e6)
    for _ in range(100):
        delta = _zeros()
        for s in SPACES:
            delta.components[s] = rng.normal(size=SHAPES[s])
        grads = _random_grads(rng)
        a, _ = mat_step(delta, _fresh_moments(), grads, mat_cfg)
        b = villa_baseline_step(delta, grads, villa_cfg)
        for s in SPACES:
            da = a.components[s] - delta.components[s]
            db = b.components[s] - delta.components[s]
            np.testing.assert_allclose(da / np.linalg.norm(da), db / np.linalg.norm(db), atol=1e-12)


def test_degenerate_gradient_skips_update_but_advances_moments():
    delta = _zeros()
    delta.components["state"] = np.array([0.1, 0.2, 0.3])
    new, mom = mat_step(delta, _fresh_moments(), {s: np.zeros(SHAPES[s]) for s in SPACES}, MatConfig())
    np.testing.assert_array_equal(new.delta_s, delta.delta_s)
    assert mom.t == 1 and sorted(s for _, s in mom.skipped) == sorted(SPACES)


def test_inputs_are_not_mutated():
    rng = np.random.default_rng(6)
    delta, mom = _zeros(), _fresh_moments()
    grads = _random_grads(rng)
    mat_step(delta, mom, grads, MatConfig())
    assert all(not d.any() for d in delta.components.values()) and mom.t == 0
    assert all(not m.any() for m in mom.m.values())


def test_init_zero_sigma_gives_zero_delta():
    delta, mom = init_perturbations(SHAPES, MatConfig(init_sigma=0.0), 3)
    assert all(not d.any() for d in delta.components.values())
    assert mom.t == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 5.0), st.floats(0.0, 50.0))
def test_init_starts_inside_ball_and_is_seeded(seed, radius, sigma):
    cfg = MatConfig(eps_ball=radius, init_sigma=sigma)
    a, _ = init_perturbations(SHAPES, cfg, seed)
    b, _ = init_perturbations(SHAPES, cfg, seed)
    for s in SPACES:
        assert np.linalg.norm(a.components[s]) <= radius * (1 + 1e-12)
        np.testing.assert_array_equal(a.components[s], b.components[s])


def test_joint_projection_bounds_the_concatenation():
    rng = np.random.default_rng(8)
    cfg = MatConfig(projection="joint", eps_ball=0.5)
    delta, mom = init_perturbations(SHAPES, cfg, 0)
    for _ in range(20):
        delta, mom = mat_step(delta, mom, _random_grads(rng), cfg)
        joint = np.sqrt(sum(np.sum(delta.components[s] ** 2) for s in SPACES))
        assert joint <= 0.5 + 1e-12


def test_config_validation():
    with pytest.raises(ValueError):
        MatConfig(rho1=1.0)
    with pytest.raises(ValueError):
        MatConfig(alpha_steps=0)
    with pytest.raises(ValueError):
        MatConfig(update_rule="sgd")
    assert MatConfig(eps_ball=3.0).sigma == pytest.approx(0.3)


def test_inner_loop_counts_steps_and_stays_in_ball(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    x, target = _sample_input(model, split)
    delta, mom = run_inner_loop(model, x, target, MatConfig(alpha_steps=7), 0)
    assert mom.t == 7
    assert all(n <= 1.0 + 1e-12 for n in delta.norms().values())


def test_inner_loop_is_deterministic_and_leaves_parameters_alone(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    before = model.state_dict()
    x, target = _sample_input(model, split)
    a, _ = run_inner_loop(model, x, target, MatConfig(), 42)
    b, _ = run_inner_loop(model, x, target, MatConfig(), 42)
    for s in SPACES:
        np.testing.assert_array_equal(a.components[s], b.components[s])
    for name, value in model.state_dict().items():
        np.testing.assert_array_equal(value, before[name])
    assert all(p.requires_grad for p in model.params.values())


def test_inactive_space_stays_zero_and_gets_no_gradient(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    x, target = _sample_input(model, split)
    cfg = MatConfig(active_spaces=("instruction", "subgoals"))
    delta, _ = run_inner_loop(model, x, target, cfg, 1)
    assert not delta.delta_s.any()
    assert set(adversarial_gradient(model, x, target, delta)) == {"instruction", "subgoals"}


def test_single_step_direction_is_independent_of_decay_rates(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    x, target = _sample_input(model, split)
    ref, _ = run_inner_loop(model, x, target, MatConfig(alpha_steps=1, eps_ball=50.0), 5)
    for rho1, rho2 in ((0.0, 0.0), (0.5, 0.9), (0.99, 0.9999)):
        other, _ = run_inner_loop(model, x, target, MatConfig(alpha_steps=1, eps_ball=50.0, rho1=rho1, rho2=rho2), 5)
        for s in SPACES:
            np.testing.assert_allclose(other.components[s], ref.components[s], atol=1e-12)


def test_adversarial_gradient_matches_finite_differences(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    x, target = _sample_input(model, split)
    delta, _ = init_perturbations(model.embedding_shapes(x), MatConfig(init_sigma=0.3), 2)
    grads = adversarial_gradient(model, x, target, delta)
    for s in SPACES:
        numeric = numeric_gradient(lambda: adversarial_loss(model, x, target, delta), delta.components[s])
        assert relative_error(grads[s], numeric) <= 1e-4


def test_zero_perturbation_loss_is_clean_loss(split):
    model = SubgoalModel(tiny_config(len(split.vocab)))
    x, target = _sample_input(model, split)
    delta, _ = init_perturbations(model.embedding_shapes(x), MatConfig(init_sigma=0.0), 0)
    with model.frozen():
        clean = subgoal_cross_entropy(model.forward(x), target).item()
    assert adversarial_loss(model, x, target, delta) == clean


def test_inner_loop_tends_to_increase_the_loss(split):
    from matsubgoal.train import Sample

    samples: list[Sample] = [s for ep in split["train"][:60] for s in teacher_forced_samples(ep)]
    rng = np.random.default_rng(12)
    ok = 0
    trials = 200
    for i in range(trials):
        model = SubgoalModel(tiny_config(len(split.vocab), seed=i))
        sample = samples[int(rng.integers(len(samples)))]
        x = sample.to_input(model)
        zero, _ = init_perturbations(model.embedding_shapes(x), MatConfig(init_sigma=0.0), 0)
        delta, _ = run_inner_loop(model, x, sample.target, MatConfig(), i)
        ok += adversarial_loss(model, x, sample.target, delta) >= adversarial_loss(model, x, sample.target, zero) - 1e-6
    assert ok / trials >= 0.9

import numpy as np
import pytest

from septrans.attacks import AttackConfig, attack, fgsm, input_gradient, pgd
from septrans.data import synthetic_gaussians
from septrans.network import SepMlp, build_mlp, cross_entropy, softmax
from septrans.tensor_ops import unvec, vec
from septrans.training import TrainConfig, evaluate, train
from septrans.transform import SeparableTransform

from oracles import central_difference_grad, max_rel_err


def constant_logit_model(classes=3, in_shape=(2, 2)):
    factors = [np.zeros((1, in_shape[0])), np.zeros((classes, in_shape[1]))]
    bias = np.linspace(0.5, 1.0, classes)
    return SepMlp([SeparableTransform(factors, bias)], ["none"], classes)


class TestAttackConfig:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            AttackConfig(kind="cw", eps=0.1)

    def test_negative_eps(self):
        with pytest.raises(ValueError):
            AttackConfig(kind="fgsm", eps=-0.1)

    def test_eps_beyond_range(self):
        with pytest.raises(ValueError):
            AttackConfig(kind="fgsm", eps=1.5)

    def test_pgd_needs_step_size(self):
        with pytest.raises(ValueError):
            AttackConfig(kind="pgd", eps=0.1, steps=10, step_size=None)

    def test_short_schedule_warns(self):
        with pytest.warns(UserWarning):
            AttackConfig(kind="pgd", eps=0.5, steps=2, step_size=0.01)

    def test_paper_defaults_accepted(self):
        cfg = AttackConfig(kind="pgd", eps=0.031, steps=10, step_size=0.0078)
        assert cfg.steps * cfg.step_size >= cfg.eps
        AttackConfig(kind="fgsm", eps=0.015)


class TestFgsm:
    def test_zero_eps_is_identity(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=0)
        x = rng.uniform(0.1, 0.9, size=(2, 2))
        adv = fgsm(model, x, 0, AttackConfig(kind="fgsm", eps=0.0))
        assert np.array_equal(adv, x)

    def test_constant_model_unmoved(self, rng):
        model = constant_logit_model()
        x = rng.uniform(0.1, 0.9, size=(2, 2))
        adv = fgsm(model, x, 1, AttackConfig(kind="fgsm", eps=0.2))
        assert np.array_equal(adv, x)

    def test_linear_model_sign_pattern(self, rng):
        # two-class linear model: the loss gradient is p_other * (w_other - w_label)
        w = rng.normal(size=(2, 5))
        w[0, np.abs(w[0] - w[1]) < 0.2] += 0.3  # keep the sign pattern unambiguous
        model = SepMlp([SeparableTransform([w])], ["none"], 2)
        x = rng.uniform(0.3, 0.7, size=(5,))
        label = 0
        eps = 0.05
        adv = fgsm(model, x, label, AttackConfig(kind="fgsm", eps=eps))
        want = np.clip(x + eps * np.sign(w[1] - w[0]), 0.0, 1.0)
        assert np.array_equal(adv, want)

    def test_out_of_range_input_rejected(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=0)
        with pytest.raises(ValueError):
            fgsm(model, 1.5 * np.ones((2, 2)), 0, AttackConfig(kind="fgsm", eps=0.1))


class TestPgd:
    def test_single_step_equals_fgsm_bitwise(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=2)
        for _ in range(10):
            x = rng.uniform(0, 1, size=(2, 2))
            label = int(rng.integers(0, 4))
            eps = 0.07
            a = fgsm(model, x, label, AttackConfig(kind="fgsm", eps=eps))
            b = pgd(model, x, label, AttackConfig(kind="pgd", eps=eps, steps=1, step_size=eps))
            assert np.array_equal(a, b)

    def test_zero_eps_identity(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=2)
        x = rng.uniform(0.2, 0.8, size=(2, 2))
        cfg = AttackConfig(kind="pgd", eps=0.0, steps=7, step_size=0.1)
        assert np.array_equal(pgd(model, x, 1, cfg), x)

    def test_paper_defaults_ball(self, rng):
        model = build_mlp([[(2, 4), (2, 4)]], 4, seed=3)
        cfg = AttackConfig(kind="pgd", eps=0.031, steps=10, step_size=0.0078)
        for _ in range(20):
            x = rng.uniform(0, 1, size=(4, 4))
            label = int(rng.integers(0, 4))
            adv = pgd(model, x, label, cfg)
            assert float(np.max(np.abs(adv - x))) <= 0.031 + 1e-12
            assert np.all(adv >= 0.0) and np.all(adv <= 1.0)

    def test_random_start_stays_in_ball_and_is_deterministic(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=5)
        cfg = AttackConfig(
            kind="pgd", eps=0.05, steps=3, step_size=0.02, random_start=True, start_seed=11
        )
        x = rng.uniform(0.2, 0.8, size=(2, 2))
        a1 = pgd(model, x, 2, cfg)
        a2 = pgd(model, x, 2, cfg)
        assert np.array_equal(a1, a2)
        assert float(np.max(np.abs(a1 - x))) <= cfg.eps + 1e-12

    def test_increases_loss_statistically(self, rng):
        model = build_mlp([[(2, 3), (2, 3)]], 4, seed=7)
        cfg = AttackConfig(kind="pgd", eps=0.1, steps=10, step_size=0.02)
        wins = 0
        trials = 50
        for _ in range(trials):
            x = rng.uniform(0.05, 0.95, size=(3, 3))
            label = int(rng.integers(0, 4))
            adv = pgd(model, x, label, cfg)
            clean, _ = model.forward(x)
            attacked, _ = model.forward(adv)
            if cross_entropy(attacked, label) >= cross_entropy(clean, label):
                wins += 1
        assert wins >= int(0.9 * trials)


class TestInputGradient:
    def test_constant_model_zero(self, rng):
        model = constant_logit_model()
        g = input_gradient(model, rng.uniform(0, 1, size=(2, 2)), 0)
        assert np.array_equal(g, np.zeros((2, 2)))

    def test_dense_oracle_via_materialize(self, rng):
        model = build_mlp([[(2, 3), (2, 2)]], 4, seed=9)
        x = rng.uniform(0, 1, size=(3, 2))
        label = 2
        logits, _ = model.forward(x)
        delta = softmax(logits)
        delta[label] -= 1.0
        w = model.layers[0].materialize()
        want = unvec(w.T @ delta, (3, 2))
        got = input_gradient(model, x, label)
        assert max_rel_err(got, want) < 1e-12

    def test_finite_differences(self, rng):
        for _ in range(30):
            model = build_mlp([[(3, 2), (2, 3)], [(1, 3), (3, 2)]], 3,
                              seed=int(rng.integers(1 << 30)))
            x = rng.uniform(0.1, 0.9, size=(2, 3))
            label = int(rng.integers(0, 3))
            _, cache = model.forward(x)
            if np.min(np.abs(np.concatenate([p.ravel() for p in cache.preacts]))) <= 1e-3:
                continue

            def loss_at(xp):
                lg, _ = model.forward(xp)
                return cross_entropy(lg, label)

            want = central_difference_grad(loss_at, x.copy())
            assert max_rel_err(input_gradient(model, x, label), want) < 1e-4
            return
        raise AssertionError("no kink-free case found")


class TestAttackEffectiveness:
    def test_fgsm_reduces_accuracy_of_natural_model(self):
        train_set = synthetic_gaussians(2, 100, (4, 4), separation=0.45, seed=31, noise_std=0.08)
        eval_set = synthetic_gaussians(2, 100, (4, 4), separation=0.45, seed=32, noise_std=0.08)
        model = build_mlp([[(1, 4), (2, 4)]], 2, seed=1)
        trained, _ = train(model, train_set, TrainConfig(epochs=20, batch_size=32, seed=1))
        na = evaluate(trained, eval_set)
        ra = evaluate(trained, eval_set, AttackConfig(kind="fgsm", eps=0.1))
        assert ra < na

    def test_attack_dispatch(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=0)
        x = rng.uniform(0.2, 0.8, size=(2, 2))
        a = attack(model, x, 0, AttackConfig(kind="fgsm", eps=0.03))
        b = fgsm(model, x, 0, AttackConfig(kind="fgsm", eps=0.03))
        assert np.array_equal(a, b)


class TestDeterminism:
    def test_same_inputs_same_outputs(self, rng):
        model = build_mlp([[(2, 2), (2, 2)]], 4, seed=6)
        x = rng.uniform(0.1, 0.9, size=(2, 2))
        cfg = AttackConfig(kind="pgd", eps=0.05, steps=5, step_size=0.02)
        assert np.array_equal(pgd(model, x, 1, cfg), pgd(model, x, 1, cfg))
        cfg2 = AttackConfig(kind="fgsm", eps=0.05)
        assert np.array_equal(fgsm(model, x, 1, cfg2), fgsm(model, x, 1, cfg2))

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cskl.kernels import GramMatrix, build_bank
from cskl.optimizer import (
    CsklConfig,
    MklWeights,
    capped_simplex_argmax,
    cskl_train,
    descent_direction,
    lp_direction,
    lpnorm_mkl_train,
    max_step,
    reduced_gradient_gamma_step,
    simplemkl_train,
    top_t_sum,
    top_t_weights,
)
from cskl.svm import SvmConfig, kernel_quad_forms, solve_svm

from conftest import feasible_capped, random_bank, random_labels
from oracles import capped_simplex_lp_oracle, direction_lp_oracle


class TestTopTSum:
    def test_examples(self):
        v = np.array([3.0, 1.0, 2.0])
        assert top_t_sum(v, 2) == 5.0
        assert top_t_sum(v, 1) == 3.0
        assert top_t_sum(v, 3) == 6.0

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            top_t_sum(np.array([1.0]), 2)
        with pytest.raises(ValueError):
            top_t_sum(np.array([1.0, 2.0]), 0)

    @given(st.lists(st.floats(0, 100), min_size=1, max_size=12), st.data())
    def test_matches_sorted_prefix(self, values, data):
        v = np.array(values)
        t = data.draw(st.integers(1, len(values)))
        assert top_t_sum(v, t) == pytest.approx(sum(sorted(values, reverse=True)[:t]), rel=1e-12)


class TestTopTWeights:
    def test_distinct_values(self):
        w = top_t_weights(np.array([5.0, 3.0, 4.0, 1.0]), 2)
        np.testing.assert_array_equal(w.gamma, [1.0, 0.0, 1.0, 0.0])
        assert w.gamma @ np.array([5.0, 3.0, 4.0, 1.0]) == 9.0

    def test_full_tie_splits_evenly(self):
        w = top_t_weights(np.array([4.0, 4.0, 4.0]), 2)
        np.testing.assert_allclose(w.gamma, np.full(3, 2.0 / 3.0), rtol=1e-15)
        assert w.gamma @ np.full(3, 4.0) == pytest.approx(8.0, rel=1e-15)

    def test_partial_tie(self):
        v = np.array([9.0, 5.0, 5.0, 1.0])
        w = top_t_weights(v, 2)
        np.testing.assert_allclose(w.gamma, [1.0, 0.5, 0.5, 0.0], rtol=1e-15)
        assert w.gamma @ v == pytest.approx(top_t_sum(v, 2), rel=1e-15)

    def test_selection_structure(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 12))
            v = rng.uniform(0.01, 10.0, n)
            t = int(rng.integers(1, n + 1))
            g = top_t_weights(v, t).gamma
            kth = np.sort(v)[::-1][t - 1]
            assert np.all(g[v > kth] == 1.0)
            assert np.all(g[v < kth] == 0.0)
            assert abs(g.sum() - t) <= 1e-12 * max(1, t)

    def test_lp_oracle_agreement(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            v = rng.uniform(0.0, 10.0, n)
            if rng.random() < 0.3:  # force ties
                v[: n // 2] = v[0]
            t = int(rng.integers(1, n + 1))
            want, _ = capped_simplex_lp_oracle(v, t)
            got = float(top_t_weights(v, t).gamma @ v)
            assert got == pytest.approx(want, abs=1e-9)

    @given(
        st.lists(st.floats(0.001, 1000.0), min_size=2, max_size=10),
        st.sampled_from([0.5, 2.0, 4.0, 1024.0, 2.0**-10]),
        st.data(),
    )
    def test_scale_invariance_dyadic(self, values, c, data):
        # powers of two rescale exactly in binary floating point, so the
        # selection and tie handling must be bit-identical
        v = np.array(values)
        t = data.draw(st.integers(1, len(values)))
        np.testing.assert_array_equal(top_t_weights(c * v, t).gamma, top_t_weights(v, t).gamma)

    def test_few_fractional_entries(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 12))
            v = np.round(rng.uniform(0, 4, n))  # coarse grid forces ties
            t = int(rng.integers(1, n + 1))
            g = top_t_weights(v, t).gamma
            kth = np.sort(v)[::-1][t - 1]
            fractional = np.sum((g > 1e-9) & (g < 1 - 1e-9))
            assert fractional <= np.sum(v == kth)


class TestCappedSimplexArgmax:
    def test_zero_mass(self):
        np.testing.assert_array_equal(capped_simplex_argmax(np.array([1.0, 2.0]), 0.0), [0, 0])

    def test_full_mass(self):
        np.testing.assert_array_equal(capped_simplex_argmax(np.array([1.0, 2.0]), 2.0), [1, 1])

    def test_fractional_mass(self):
        x = capped_simplex_argmax(np.array([3.0, 2.0, 1.0]), 1.5)
        np.testing.assert_allclose(x, [1.0, 0.5, 0.0], rtol=1e-15)

    def test_mass_out_of_range(self):
        with pytest.raises(ValueError):
            capped_simplex_argmax(np.array([1.0]), 2.0)


class TestDescentDirection:
    def test_worked_example(self):
        # pivot is the first coordinate; direction drains it toward the
        # coordinates with lower gradient
        gamma = np.array([0.5, 0.3, 0.2])
        phi = np.array([-1.0, -2.0, -3.0])
        D = descent_direction(gamma, 0, phi)
        np.testing.assert_allclose(D, [-3.0, 1.0, 2.0], rtol=1e-15)
        assert abs(D.sum()) <= 1e-12
        assert phi @ D == pytest.approx(-5.0, rel=1e-12)

    def test_zero_at_lower_bound_when_climbing(self):
        gamma = np.array([0.0, 1.0])
        phi = np.array([5.0, 0.0])  # phi_0 - phi_pivot > 0 with gamma_0 = 0
        D = descent_direction(gamma, 1, phi)
        assert D[0] == 0.0

    def test_zero_at_upper_bound_when_pushing(self):
        gamma = np.array([1.0, 0.5, 0.5])
        phi = np.array([-5.0, 0.0, 0.0])
        D = descent_direction(gamma, 1, phi)
        assert D[0] == 0.0

    def test_constant_gradient_stationary(self):
        D = descent_direction(np.array([0.5, 0.3, 0.2]), 0, np.full(3, 2.5))
        np.testing.assert_array_equal(D, np.zeros(3))

    def test_unit_simplex_mode_ignores_caps(self):
        gamma = np.array([1.0, 0.0])
        phi = np.array([-5.0, 0.0])
        D = descent_direction(gamma, 0, phi, upper=None)
        # without the cap the second coordinate may still drain into the pivot
        assert abs(D.sum()) <= 1e-12

    def test_properties_random(self, rng):
        for _ in range(300):
            n = int(rng.integers(2, 10))
            t = int(rng.integers(1, n + 1))
            gamma = feasible_capped(rng, n, t)
            phi = rng.normal(size=n)
            pivot = int(np.argmin(np.abs(gamma - 0.5)))
            D = descent_direction(gamma, pivot, phi)
            assert abs(D.sum()) <= 1e-10
            assert phi @ D <= 1e-12


class TestMaxStep:
    def test_worked_example(self):
        s, nu = max_step(np.array([0.5, 0.3, 0.2]), np.array([-3.0, 1.0, 2.0]))
        assert s == pytest.approx(1.0 / 6.0, rel=1e-12)
        assert nu == 0

    def test_pair_direction_at_bounds(self):
        s, nu = max_step(np.array([0.0, 1.0]), np.array([1.0, -1.0]))
        assert s == pytest.approx(1.0, rel=1e-12)
        s, nu = max_step(np.array([0.0, 1.0]), np.array([-1.0, 1.0]))
        assert s == 0.0

    def test_zero_direction_signal(self):
        s, nu = max_step(np.array([0.5, 0.5]), np.zeros(2))
        assert s == 0.0 and nu is None

    def test_containment_property(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 10))
            t = int(rng.integers(1, n + 1))
            gamma = feasible_capped(rng, n, t)
            phi = rng.normal(size=n)
            pivot = int(np.argmin(np.abs(gamma - 0.5)))
            D = descent_direction(gamma, pivot, phi)
            s, nu = max_step(gamma, D)
            if nu is None:
                continue
            out = gamma + s * D
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert abs(out.sum() - gamma.sum()) <= 1e-10


class TestLpDirection:
    def test_worked_example(self):
        gamma = np.array([0.5, 0.3, 0.2])
        phi = np.array([-1.0, -2.0, -3.0])
        D = lp_direction(gamma, phi)
        np.testing.assert_allclose(D, [-0.5, -0.3, 0.8], rtol=1e-12)
        assert phi @ D == pytest.approx(-1.3, rel=1e-12)

    def test_constant_gradient_zero(self):
        D = lp_direction(np.array([0.5, 0.5]), np.full(2, 3.0))
        np.testing.assert_allclose(D, np.zeros(2), atol=1e-15)

    def test_oracle_agreement(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 7))
            t = int(rng.integers(1, n + 1))
            gamma = feasible_capped(rng, n, t)
            phi = rng.normal(size=n)
            want, _ = direction_lp_oracle(gamma, phi)
            D = lp_direction(gamma, phi)
            assert float(phi @ D) == pytest.approx(want, abs=1e-9)
            out = gamma + D
            assert out.min() >= -1e-12 and out.max() <= 1.0 + 1e-12
            assert abs(D.sum()) <= 1e-10


class TestMklWeightsValidation:
    def test_capped_ok(self):
        MklWeights(np.array([1.0, 0.5, 0.5]), "capped_simplex", t=2).validate()

    def test_capped_bad_sum(self):
        with pytest.raises(ValueError):
            MklWeights(np.array([0.5, 0.5]), "capped_simplex", t=2).validate()

    def test_lp_ball_ok(self):
        MklWeights(np.array([0.6, 0.8]), "lp_ball", p=2.0).validate()

    def test_lp_ball_overflow(self):
        with pytest.raises(ValueError):
            MklWeights(np.array([0.9, 0.9]), "lp_ball", p=2.0).validate()


def small_cfg(t, variant="c", **kw):
    svm = SvmConfig(variant=variant, c=kw.pop("c", 1.0), nu=kw.pop("nu", 0.4), kkt_tolerance=1e-8)
    return CsklConfig(t=t, svm=svm, **kw)


class TestReducedGradientStep:
    def test_stationary_at_topt_vertex(self, rng):
        bank = random_bank(rng, 3, 12)
        cfg = small_cfg(1)
        # train to optimality first, then one more step must not move
        w, sol, trace = cskl_train(bank, cfg)
        g2, entry = reduced_gradient_gamma_step(bank, w.gamma, cfg)
        d = entry.d
        np.testing.assert_allclose(g2.sum(), 1.0, atol=1e-9)
        assert float(g2 @ d) >= float(w.gamma @ d) - 1e-9

    def test_two_kernel_mass_flows_to_better(self, rng):
        bank = random_bank(rng, 2, 14)
        cfg = small_cfg(1)
        gamma = np.array([0.5, 0.5])
        g2, entry = reduced_gradient_gamma_step(bank, gamma, cfg)
        d = entry.d
        better = int(np.argmax(d))
        assert g2[better] > 0.5 or entry.step_size == 0.0

    def test_objective_never_increases(self, rng):
        for _ in range(10):
            bank = random_bank(rng, 4, 12)
            t = int(rng.integers(1, 5))
            cfg = small_cfg(t)
            gamma = feasible_capped(rng, 4, t)
            from cskl.kernels import combined_values
            from cskl.optimizer import _WeightObjective

            obj = _WeightObjective(bank, cfg.svm)
            J0, _ = obj.solve(gamma)
            g2, entry = reduced_gradient_gamma_step(bank, gamma, cfg)
            J2, _ = obj.solve(g2)
            assert J2 <= J0 + 1e-9


class TestGradientFiniteDifference:
    def test_phi_matches_central_difference(self, rng):
        checked = 0
        h = 1e-5
        for _ in range(25):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(8, 16))
            bank = random_bank(rng, n, m)
            t = int(rng.integers(1, n + 1))
            gamma = feasible_capped(rng, n, t)
            svm = SvmConfig(variant="c", c=1.0, kkt_tolerance=1e-11)
            from cskl.optimizer import _WeightObjective

            obj = _WeightObjective(bank, svm)
            _, sol = obj.solve(gamma)
            d = kernel_quad_forms(sol.alpha, bank.labels, bank)
            phi = -0.5 * d
            pairs = [
                (a, b)
                for a in range(n)
                for b in range(n)
                if a != b and 2 * h < gamma[a] < 1 - 2 * h and 2 * h < gamma[b] < 1 - 2 * h
            ]
            if not pairs:
                continue
            a, b = max(pairs, key=lambda p: abs(phi[p[0]] - phi[p[1]]))
            if abs(phi[a] - phi[b]) < 1e-3:
                continue
            u = np.zeros(n)
            u[a], u[b] = 1.0, -1.0
            obj_fd = _WeightObjective(bank, svm)
            Jp, _ = obj_fd.solve(gamma + h * u)
            Jm, _ = obj_fd.solve(gamma - h * u)
            fd = (Jp - Jm) / (2 * h)
            want = phi[a] - phi[b]
            assert fd == pytest.approx(want, rel=1e-4)
            checked += 1
        assert checked >= 10


class TestCsklTrain:
    def test_t_equals_n_forces_all_ones(self, rng):
        bank = random_bank(rng, 4, 12)
        w, sol, trace = cskl_train(bank, small_cfg(4))
        assert np.max(np.abs(w.gamma - 1.0)) <= 1e-6
        assert trace.converged

    def test_perfect_vs_noise_selects_perfect(self, rng):
        m = 30
        y = random_labels(rng, m)
        perfect = GramMatrix(np.outer(y, y).astype(float) + 1e-6 * np.eye(m))
        noise = GramMatrix(np.asarray(np.random.default_rng(7).normal(size=(m, m))) @ np.eye(m) * 0)
        noise = GramMatrix(_rand_psd(m, 7))
        bank = build_bank([perfect, noise], y)
        w, sol, trace = cskl_train(bank, small_cfg(1, c=10.0))
        assert w.gamma[0] >= 0.99
        from cskl.kernels import combine
        from cskl.svm import decision_values

        f = decision_values(sol, combine(bank, w.gamma).values, y)
        assert np.all(np.sign(f) == y)

    def test_trace_monotone_both_steps(self, rng):
        for step in ("reduced_gradient", "lp_direction"):
            bank = random_bank(rng, 3, 14)
            cfg = small_cfg(2, gamma_step=step)
            _, _, trace = cskl_train(bank, cfg)
            objs = trace.objectives()
            assert np.all(np.diff(objs) <= 1e-6)

    def test_certificate_at_convergence(self, rng):
        bank = random_bank(rng, 4, 12)
        cfg = small_cfg(2)
        w, sol, trace = cskl_train(bank, cfg)
        if trace.converged:
            d = kernel_quad_forms(sol.alpha, bank.labels, bank)
            gt = top_t_sum(d, 2)
            assert abs(float(w.gamma @ d) - gt) <= 1e-4 * gt + 1e-12

    def test_grid_search_oracle_small(self, rng):
        # joint optimality: trained objective beats a 0.05-step grid search
        bank = random_bank(rng, 3, 10)
        t = 2
        cfg = small_cfg(t, outer_tolerance=1e-8)
        w, sol, trace = cskl_train(bank, cfg)
        final = trace.entries[-1].objective
        from cskl.kernels import combined_values

        y = bank.labels.astype(float)
        best = np.inf
        grid = np.arange(0.0, 1.0 + 1e-9, 0.05)
        for g1 in grid:
            for g2 in grid:
                g3 = t - g1 - g2
                if not -1e-9 <= g3 <= 1.0 + 1e-9:
                    continue
                gam = np.clip(np.array([g1, g2, g3]), 0, 1)
                val = solve_svm(combined_values(bank, gam), y, cfg.svm).dual_objective
                best = min(best, val)
        assert final <= best + 1e-3

    def test_invalid_t(self, rng):
        bank = random_bank(rng, 3, 10)
        with pytest.raises(ValueError):
            cskl_train(bank, small_cfg(5))


def _rand_psd(m, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(m, m))
    return x @ x.T / m


class TestSimpleMkl:
    def test_single_kernel_reduces_to_svm(self, rng):
        bank = random_bank(rng, 1, 12)
        svm = SvmConfig(variant="c", c=1.0, kkt_tolerance=1e-8)
        w, sol, trace = simplemkl_train(bank, svm)
        np.testing.assert_allclose(w.gamma, [1.0], atol=1e-12)
        direct = solve_svm(bank.kernels[0].values, bank.labels.astype(float), svm)
        assert sol.dual_objective == pytest.approx(direct.dual_objective, abs=1e-8)

    def test_perfect_vs_noise(self, rng):
        m = 24
        y = random_labels(rng, m)
        perfect = GramMatrix(np.outer(y, y).astype(float) + 1e-6 * np.eye(m))
        bank = build_bank([perfect, GramMatrix(_rand_psd(m, 3))], y)
        w, _, _ = simplemkl_train(bank, SvmConfig(variant="c", c=10.0, kkt_tolerance=1e-8))
        assert w.gamma[0] >= 0.99

    def test_matches_cskl_t1(self, rng):
        for _ in range(5):
            bank = random_bank(rng, 3, 12)
            svm = SvmConfig(variant="c", c=1.0, kkt_tolerance=1e-9)
            kwargs = dict(outer_tolerance=1e-8, certificate_tolerance=1e-6)
            _, sol_s, _ = simplemkl_train(bank, svm, **kwargs)
            _, sol_c, _ = cskl_train(bank, CsklConfig(t=1, svm=svm, **kwargs))
            assert sol_s.dual_objective == pytest.approx(sol_c.dual_objective, abs=1e-4)


class TestLpNormMkl:
    def test_p2_update_is_normalized_d(self, rng):
        bank = random_bank(rng, 3, 14)
        svm = SvmConfig(variant="c", c=1.0, kkt_tolerance=1e-8)
        w, sol, trace = lpnorm_mkl_train(bank, 2.0, svm)
        for k in range(1, len(trace.entries)):
            d_prev = np.maximum(trace.entries[k - 1].d, 0.0)
            if not np.any(d_prev > 0):
                continue
            want = d_prev / np.linalg.norm(d_prev)
            np.testing.assert_allclose(trace.entries[k].gamma, want, atol=1e-9)

    def test_closed_form_examples(self):
        d = np.array([3.0, 4.0])
        want = d / np.linalg.norm(d)
        np.testing.assert_allclose(want, [0.6, 0.8], rtol=1e-15)

    def test_degenerate_d_resets_uniform(self, rng):
        # single-class labels force alpha = 0 and d = 0
        m = 10
        grams = [GramMatrix(_rand_psd(m, s)) for s in range(2)]
        y = np.ones(m, dtype=np.int64)
        from cskl.kernels import KernelBank

        bank = build_bank(grams, y)
        w, sol, trace = lpnorm_mkl_train(bank, 2.0, SvmConfig(variant="c", c=1.0))
        np.testing.assert_allclose(w.gamma, np.full(2, 2 ** (-0.5)), rtol=1e-12)

    def test_p_must_exceed_one(self, rng):
        bank = random_bank(rng, 2, 8)
        with pytest.raises(ValueError):
            lpnorm_mkl_train(bank, 1.0, SvmConfig())

    def test_ball_constraint_holds(self, rng):
        bank = random_bank(rng, 4, 12)
        for p in (1.5, 2.0, 3.0):
            w, _, _ = lpnorm_mkl_train(bank, p, SvmConfig(variant="c", c=1.0))
            w.validate()


class TestStepVariantAgreement:
    def test_rg_and_lp_final_objectives_agree(self, rng):
        for _ in range(6):
            n = int(rng.integers(2, 5))
            m = int(rng.integers(8, 18))
            bank = random_bank(rng, n, m)
            t = int(rng.integers(1, n + 1))
            svm = SvmConfig(variant="c", c=1.0, kkt_tolerance=1e-9)
            kw = dict(outer_tolerance=1e-7, certificate_tolerance=1e-5)
            _, sol_rg, _ = cskl_train(bank, CsklConfig(t=t, svm=svm, gamma_step="reduced_gradient", **kw))
            _, sol_lp, _ = cskl_train(bank, CsklConfig(t=t, svm=svm, gamma_step="lp_direction", **kw))
            assert sol_rg.dual_objective == pytest.approx(sol_lp.dual_objective, abs=1e-3)


class TestGroupSelectionMonotone:
    def test_group_count_non_decreasing_in_t_for_fixed_d(self, rng):
        from cskl.experiments import count_groups_selected

        for _ in range(20):
            n = int(rng.integers(3, 10))
            d = rng.uniform(0, 5, n)
            groups = {j: f"g{int(rng.integers(0, 4))}" for j in range(n)}
            counts = [
                count_groups_selected(top_t_weights(d, t), groups) for t in range(1, n + 1)
            ]
            assert all(a <= b for a, b in zip(counts, counts[1:]))

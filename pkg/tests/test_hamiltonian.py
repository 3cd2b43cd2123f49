from parabolic_msa import hamiltonian
from parabolic_msa.exceptions import InvalidCurvatureError, MinimizerError, PreconditionError
from parabolic_msa.problem import Box, builtin_paper_test, builtin_semilinear_test
import numpy as np
import pytest


@pytest.fixture
def paper():
    return builtin_paper_test()


@pytest.fixture
def origin():
    return np.zeros((2, 1))


def arr(value):
    return np.array([value], dtype=float)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"decay": 1.0},
            {"decay": 0.0},
            {"initial_lr": 0.0},
            {"max_inner_iters": 0},
            {"decay_every": 0},
            {"grad_tol": -1.0},
        ],
    )
    def test_invalid_minimizer_config(self, kwargs):
        with pytest.raises(PreconditionError):
            hamiltonian.MinimizerConfig(**kwargs)

    def test_negative_rho(self):
        with pytest.raises(PreconditionError):
            hamiltonian.AugmentationParams(rho=-1.0, anchor=0.0)


class TestHamiltonians:
    @pytest.mark.parametrize(
        "y, u, p, expected",
        [(0.0, 1.0, 0.0, 0.5), (1.0, 1.0, 1.0, 2.5), (0.5, -2.0, 0.0, 2.0)],
    )
    def test_h_omega(self, paper, origin, y, u, p, expected):
        actual = hamiltonian.h_omega(paper, origin, 0.0, arr(y), arr(u), arr(p))
        np.testing.assert_allclose(actual, [expected])

    def test_h_omega_without_adjoint_is_running_cost(self, origin):
        semilinear = builtin_semilinear_test()
        y, u = arr(0.3), arr(-0.7)
        actual = hamiltonian.h_omega(semilinear, origin, 0.5, y, u, arr(0.0))
        np.testing.assert_allclose(actual, semilinear.F(origin, 0.5, y, u))

    def test_h_sigma_bilinear(self, paper):
        actual = hamiltonian.h_sigma(paper, arr(0.5), 0.0, arr(1.0), arr(3.0), arr(2.0))
        np.testing.assert_allclose(actual, [-6.0])

    def test_h_sigma_at_zero_control(self):
        semilinear = builtin_semilinear_test(beta=0.4)
        actual = hamiltonian.h_sigma(semilinear, arr(0.5), 0.0, arr(1.0), arr(0.0), arr(5.0))
        np.testing.assert_allclose(actual, [0.0])

    def test_h_sigma_quadratic(self):
        semilinear = builtin_semilinear_test(beta=2.0)
        actual = hamiltonian.h_sigma(semilinear, arr(0.5), 0.0, arr(0.0), arr(1.0), arr(1.0))
        np.testing.assert_allclose(actual, [0.0])

    def test_h_omega_aug(self, paper, origin):
        aug = hamiltonian.AugmentationParams(rho=1.0, anchor=arr(0.0))
        actual = hamiltonian.h_omega_aug(paper, origin, 0.0, arr(0.0), arr(1.0), arr(0.0), aug)
        np.testing.assert_allclose(actual, [1.5])

    def test_penalty_vanishes_at_anchor(self, paper, origin):
        aug = hamiltonian.AugmentationParams(rho=3.0, anchor=arr(0.4))
        args = (paper, origin, 0.0, arr(0.2), arr(0.4), arr(-1.0))
        np.testing.assert_array_equal(
            hamiltonian.h_omega_aug(*args, aug), hamiltonian.h_omega(*args)
        )

    def test_zero_rho(self, paper, origin):
        aug = hamiltonian.AugmentationParams(rho=0.0, anchor=arr(5.0))
        args = (paper, origin, 0.0, arr(0.2), arr(-0.4), arr(0.7))
        np.testing.assert_array_equal(
            hamiltonian.h_omega_aug(*args, aug), hamiltonian.h_omega(*args)
        )

    def test_h_sigma_aug(self, paper):
        aug = hamiltonian.AugmentationParams(rho=0.5, anchor=arr(1.0))
        actual = hamiltonian.h_sigma_aug(paper, arr(0.0), 0.0, arr(0.0), arr(3.0), arr(1.0), aug)
        np.testing.assert_allclose(actual, [-3.0 + 0.5 * 4.0])


class TestClosedForm:
    @pytest.mark.parametrize(
        "alpha, p, rho, anchor, expected",
        [
            (1.0, 0.0, 2.0, 0.0, 0.0),
            (1.0, 0.5, 0.0, 0.0, -0.5),
            (1.0, 1.0, 1.0, 0.01, -0.98 / 3),
        ],
    )
    def test_stationary_point(self, alpha, p, rho, anchor, expected):
        aug = hamiltonian.AugmentationParams(rho, anchor)
        actual = hamiltonian.minimize_quadratic_closed_form(alpha, p, aug, Box())
        assert actual == pytest.approx(expected)

    def test_projected(self):
        aug = hamiltonian.AugmentationParams(1.0, 0.5)
        actual = hamiltonian.minimize_quadratic_closed_form(1.0, 0.3, aug, Box(0.5, 1.0))
        assert actual == 0.5

    def test_boundary_coupling(self):
        aug = hamiltonian.AugmentationParams(1.0, 0.25)
        actual = hamiltonian.minimize_quadratic_closed_form(0.5, 1.0, aug, Box(), coupling=-1.0)
        assert actual == pytest.approx((2 * 0.25 + 1.0) / 2.5)

    def test_array_input(self):
        aug = hamiltonian.AugmentationParams(1.0, np.zeros(3))
        actual = hamiltonian.minimize_quadratic_closed_form(
            1.0, np.array([-3.0, 0.0, 3.0]), aug, Box(-0.5, 0.5)
        )
        np.testing.assert_allclose(actual, [0.5, 0.0, -0.5])

    def test_zero_curvature(self):
        aug = hamiltonian.AugmentationParams(0.0, 0.0)
        with pytest.raises(InvalidCurvatureError):
            hamiltonian.minimize_quadratic_closed_form(0.0, 1.0, aug, Box())

    def test_matches_dense_search(self, paper, origin):
        aug = hamiltonian.AugmentationParams(rho=1.0, anchor=0.01)
        candidates = np.linspace(-2.0, 2.0, 400001)
        values = hamiltonian.h_omega_aug(
            paper, origin, 0.0, np.zeros(1), candidates, np.ones(1), aug
        )
        closed = hamiltonian.minimize_quadratic_closed_form(1.0, 1.0, aug, Box())
        assert candidates[np.argmin(values)] == pytest.approx(closed, abs=1e-5)

    @pytest.mark.parametrize(
        "p, anchor, box",
        [(1.0, 0.01, Box()), (-2.5, 0.7, Box()), (3.0, -0.2, Box(-1.0, 1.0)), (0.0, 0.4, Box())],
    )
    def test_penalty_pulls_towards_anchor(self, p, anchor, box):
        distances = [
            abs(
                hamiltonian.minimize_quadratic_closed_form(
                    1.0, p, hamiltonian.AugmentationParams(rho, anchor), box
                )
                - anchor
            )
            for rho in np.linspace(0.0, 20.0, 201)
        ]
        assert np.all(np.diff(distances) <= 1e-15)
        assert distances[-1] < distances[0]

    def test_agrees_with_descent_on_random_triples(self, paper, origin):
        rng = np.random.default_rng(0)
        for _ in range(100):
            p = rng.uniform(-3.0, 3.0)
            anchor = rng.uniform(-1.0, 1.0)
            rho = rng.uniform(0.0, 5.0)
            aug = hamiltonian.AugmentationParams(rho=rho, anchor=arr(anchor))

            def objective(w):
                return hamiltonian.h_omega_aug(paper, origin, 0.0, np.zeros(1), w, arr(p), aug)

            descended = hamiltonian.minimize_pointwise(objective, Box(), start=arr(anchor))
            closed = hamiltonian.minimize_quadratic_closed_form(
                1.0, p, hamiltonian.AugmentationParams(rho, anchor), Box()
            )
            np.testing.assert_allclose(descended, [closed], atol=1e-4)


class TestPointwiseMinimizer:
    def test_quadratic_bowl(self):
        actual = hamiltonian.minimize_pointwise(lambda w: (w - 2.0) ** 2, Box(), start=0.0)
        assert actual == pytest.approx(2.0, abs=1e-5)
        assert isinstance(actual, float)

    def test_linear_on_box(self):
        actual = hamiltonian.minimize_pointwise(lambda w: w, Box(0.0, 1.0), start=0.5)
        assert actual == pytest.approx(0.0, abs=1e-6)

    def test_outside_box(self):
        actual = hamiltonian.minimize_pointwise(lambda w: (w - 2.0) ** 2, Box(0.0, 1.0))
        assert actual == pytest.approx(1.0)

    def test_augmented_paper_objective(self, paper, origin):
        aug = hamiltonian.AugmentationParams(rho=1.0, anchor=arr(0.01))

        def objective(w):
            return hamiltonian.h_omega_aug(paper, origin, 0.0, np.zeros(1), w, np.ones(1), aug)

        actual = hamiltonian.minimize_pointwise(objective, Box(), start=arr(0.01))
        np.testing.assert_allclose(actual, [-0.98 / 3], atol=1e-4)

    def test_vectorised_nodes(self):
        targets = np.array([-1.0, 0.25, 3.0])
        minimizer = hamiltonian.PointwiseMinimizer()
        actual = minimizer.minimize(lambda w: (w - targets) ** 2, Box(-2.0, 2.0), np.zeros(3))
        np.testing.assert_allclose(actual, [-1.0, 0.25, 2.0], atol=1e-5)
        assert minimizer.unconverged == 0
        assert minimizer.iterations > 0

    @pytest.mark.parametrize("anchor, expected", [(0.3, 1.0), (-0.3, -1.0)])
    def test_tie_goes_to_nearest_anchor(self, anchor, expected):
        actual = hamiltonian.minimize_pointwise(
            lambda w: -(w**2), Box(-1.0, 1.0), start=0.0, anchor=anchor
        )
        assert actual == expected

    def test_singleton_box(self):
        minimizer = hamiltonian.PointwiseMinimizer()
        actual = minimizer.minimize(lambda w: w**2, Box(0.3, 0.3), start=np.zeros(4))
        np.testing.assert_array_equal(actual, np.full(4, 0.3))
        assert minimizer.iterations == 0

    def test_iteration_cap(self):
        cfg = hamiltonian.MinimizerConfig(max_inner_iters=3)
        minimizer = hamiltonian.PointwiseMinimizer(cfg)
        minimizer.minimize(lambda w: (w - 100.0) ** 2, Box(), start=np.zeros(2))
        assert minimizer.unconverged == 2

    def test_non_finite_objective(self):
        with pytest.raises(MinimizerError):
            hamiltonian.minimize_pointwise(lambda w: np.full_like(w, np.nan), Box(), start=0.0)

    def test_double_well_matches_grid_search(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            lower, upper = rng.uniform(-2.5, -1.5), rng.uniform(1.5, 2.5)
            a = rng.uniform(0.5, 2.0)
            b = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.5)

            def objective(w):
                return w**4 - a * w**2 + b * w

            candidates = np.linspace(lower, upper, 20001)
            best = candidates[np.argmin(objective(candidates))]
            actual = hamiltonian.minimize_pointwise(objective, Box(lower, upper), start=0.0)
            assert abs(actual - best) <= candidates[1] - candidates[0]
            assert objective(actual) <= np.min(objective(candidates)) + 1e-10


class TestStepControl:
    def test_plain_schedule_single_step(self):
        cfg = hamiltonian.MinimizerConfig(adaptive=False, max_inner_iters=1)
        actual = hamiltonian.minimize_pointwise(lambda w: (w - 2.0) ** 2, Box(), cfg)
        assert actual == pytest.approx(0.004, rel=1e-6)

    def test_plain_schedule_decays(self):
        cfg = hamiltonian.MinimizerConfig(
            adaptive=False, max_inner_iters=2, decay=0.5, decay_every=1
        )
        actual = hamiltonian.minimize_pointwise(lambda w: (w - 2.0) ** 2, Box(), cfg)
        assert actual == pytest.approx(0.004 + 5e-4 * 2 * 1.996, rel=1e-6)

    def test_adaptive_multiplier_doubles(self):
        cfg = hamiltonian.MinimizerConfig(max_inner_iters=2)
        actual = hamiltonian.minimize_pointwise(lambda w: (w - 2.0) ** 2, Box(), cfg)
        assert actual == pytest.approx(0.004 + 2e-3 * 2 * 1.996, rel=1e-6)

    @pytest.mark.parametrize("adaptive, expected", [(False, -2.0), (True, 1.0)])
    def test_overshooting_step(self, adaptive, expected):
        cfg = hamiltonian.MinimizerConfig(initial_lr=1.5, max_inner_iters=1, adaptive=adaptive)
        actual = hamiltonian.minimize_pointwise(lambda w: w**2, Box(), cfg, start=1.0)
        assert actual == pytest.approx(expected, rel=1e-6)


class TestAnchorDescent:
    def test_reset_where_worse(self):
        actual, resets = hamiltonian.enforce_anchor_descent(
            lambda w: w**2, np.array([0.5, 2.0]), np.array([1.0, 1.0])
        )
        np.testing.assert_array_equal(actual, [0.5, 1.0])
        assert resets == 1

    def test_keep_candidate(self):
        candidate = np.array([0.0, -0.5])
        actual, resets = hamiltonian.enforce_anchor_descent(
            lambda w: w**2, candidate, np.array([1.0, 1.0])
        )
        assert actual is candidate
        assert resets == 0

    def test_strict_raises(self):
        with pytest.raises(MinimizerError, match="1 nodes"):
            hamiltonian.enforce_anchor_descent(
                lambda w: w**2, np.array([0.5, 2.0]), np.array([1.0, 1.0]), strict=True
            )

    def test_strict_keeps_descending_candidate(self):
        candidate = np.array([0.0, -0.5])
        actual, resets = hamiltonian.enforce_anchor_descent(
            lambda w: w**2, candidate, np.array([1.0, 1.0]), strict=True
        )
        assert actual is candidate
        assert resets == 0


if __name__ == "__main__":
    pytest.main()

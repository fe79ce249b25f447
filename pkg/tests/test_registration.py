import numpy as np
import pytest

from meshcal import liegroup as lg
from meshcal.errors import (DegenerateCentroids, IllConditioned,
                            TooFewCorrespondences)
from meshcal.evaluation import generate_synthetic_scene
from meshcal.kinematics import PosedModelCloud
from meshcal.registration import (CorrespondenceSet, IrlsSystem,
                                  RegistrationConfig, assemble_system,
                                  brute_force_nearest, find_correspondences,
                                  huber_loss, huber_weights,
                                  initialize_centroid_kabsch, irls_inner_loop,
                                  mad_sigma, register, solve_weighted_step)
from meshcal.sensing import ObservedCloud
from oracles import lstsq_svd, nearest_brute


def single_point_clouds(model_centroids):
    """One PosedModelCloud per centroid, each holding just that point."""
    clouds = []
    for p in model_centroids:
        clouds.append(PosedModelCloud(
            np.asarray([p], dtype=float),
            np.array([[0.0, 0.0, 1.0]]),
            np.zeros(1, dtype=int)))
    return clouds


def observed_from_points(per_config_points):
    points = np.vstack([np.atleast_2d(p) for p in per_config_points])
    index = np.concatenate([
        np.full(len(np.atleast_2d(p)), c) for c, p in enumerate(per_config_points)])
    return ObservedCloud(points, index)


class TestKabschInitialization:
    def test_identity_when_centroids_coincide(self):
        centroids = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.4, 0.5]])
        clouds = single_point_clouds(centroids)
        observed = observed_from_points(list(centroids))
        pose = initialize_centroid_kabsch(clouds, observed)
        assert np.allclose(pose.matrix(), np.eye(4), atol=1e-12)

    def test_recovers_inverse_of_known_rigid_transform(self):
        rng = np.random.default_rng(0)
        truth = lg.exp_se3(lg.Twist(rng.uniform(-1, 1, 3), rng.uniform(-0.5, 0.5, 3)))
        model = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        observed_pts = lg.apply(truth, model)  # camera side = R*model + t
        clouds = single_point_clouds(model)
        observed = observed_from_points(list(observed_pts))
        pose = initialize_centroid_kabsch(clouds, observed)
        assert np.allclose(pose.matrix(), lg.inverse(truth).matrix(), atol=1e-9)

    def test_collinear_centroids_degenerate(self):
        model = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]])
        clouds = single_point_clouds(model)
        observed = observed_from_points(list(model + [0.0, 0.1, 0.0]))
        with pytest.raises(DegenerateCentroids):
            initialize_centroid_kabsch(clouds, observed)


def make_cloud(points, normals=None, link_index=None):
    points = np.asarray(points, dtype=float)
    if normals is None:
        normals = np.tile([0.0, 0.0, 1.0], (len(points), 1))
    if link_index is None:
        link_index = np.zeros(len(points), dtype=int)
    return PosedModelCloud(points, np.asarray(normals, dtype=float), link_index)


class TestFindCorrespondences:
    def test_exact_self_match(self):
        rng = np.random.default_rng(1)
        model_pts = rng.uniform(-1, 1, (50, 3))
        theta = lg.exp_se3(lg.Twist([0.2, -0.1, 0.3], [0.1, 0.2, -0.1]))
        observed = observed_from_points([lg.apply(lg.inverse(theta), model_pts)])
        corr = find_correspondences([make_cloud(model_pts)], observed, theta, 0.1)
        assert len(corr) == 50
        assert np.allclose(corr.distances, 0.0, atol=1e-12)
        assert np.allclose(corr.model_points, model_pts)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model_pts = rng.uniform(-1, 1, (100, 3))
            observed_pts = model_pts + rng.normal(scale=1e-3, size=(100, 3))
            corr = find_correspondences(
                [make_cloud(model_pts)], observed_from_points([observed_pts]),
                lg.Pose.identity(), 1.0)
            idx, dist = nearest_brute(model_pts, observed_pts)
            assert np.allclose(corr.model_points, model_pts[idx])
            assert np.allclose(corr.distances, dist)

    def test_rejection_leaves_too_few(self):
        model_pts = np.eye(3) * 5.0  # sparse model
        observed_pts = model_pts + 0.3
        min_dist = np.min(np.linalg.norm(observed_pts - model_pts, axis=1))
        with pytest.raises(TooFewCorrespondences):
            find_correspondences(
                [make_cloud(model_pts)], observed_from_points([observed_pts]),
                lg.Pose.identity(), 0.5 * min_dist)

    def test_per_configuration_matching(self):
        # identical observed point must match its own configuration's model
        probe = [[0.4, 0, 0], [0.4, 0.1, 0], [0.4, 0, 0.1], [0.4, 0.1, 0.1]]
        model_a = make_cloud(np.zeros((4, 3)) + [[0, 0, 0]])
        model_b = make_cloud(np.zeros((4, 3)) + [[1, 0, 0]])
        observed = observed_from_points([probe, probe])
        corr = find_correspondences([model_a, model_b], observed,
                                    lg.Pose.identity(), 10.0)
        assert np.allclose(corr.model_points[:4], [0, 0, 0])
        assert np.allclose(corr.model_points[4:], [1, 0, 0])


def random_correspondences(rng, n=100, outliers=0.0):
    model = rng.uniform(-0.5, 0.5, (n, 3))
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    observed = rng.uniform(-0.5, 0.5, (n, 3))
    if outliers > 0:
        k = int(outliers * n)
        observed[:k] += rng.normal(scale=0.3, size=(k, 3))
    dist = np.linalg.norm(observed - model, axis=1)
    return CorrespondenceSet(model, normals, observed, dist)


class TestAssembleSystem:
    def test_aligned_residuals_are_zero(self):
        rng = np.random.default_rng(3)
        theta = lg.exp_se3(lg.Twist([0.1, 0.2, -0.1], [0.3, 0, 0.1]))
        model = rng.uniform(-1, 1, (20, 3))
        observed = lg.apply(lg.inverse(theta), model)
        normals = rng.normal(size=(20, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        corr = CorrespondenceSet(model, normals, observed, np.zeros(20))
        system = assemble_system(corr, theta)
        assert np.allclose(system.B, 0.0, atol=1e-12)

    def test_single_correspondence_pure_z(self):
        corr = CorrespondenceSet(
            np.array([[0.0, 0.0, 0.5]]), np.array([[0.0, 0.0, 1.0]]),
            np.array([[0.0, 0.0, 0.0]]), np.array([0.5]))
        system = assemble_system(corr, lg.Pose.identity())
        assert np.allclose(system.A[0], [0, 0, 0, 0, 0, 1], atol=1e-15)
        assert np.allclose(system.B[0], 0.5)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        corr = random_correspondences(rng, n=1000)
        theta = lg.exp_se3(lg.Twist(rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.3, 0.3, 3)))
        system = assemble_system(corr, theta)

        def residuals(delta):
            step = lg.exp_se3(lg.Twist.from_vector(delta))
            transformed = lg.apply(lg.compose(theta, step), corr.observed_points)
            return np.einsum("ij,ij->i", corr.model_normals,
                             transformed - corr.model_points)

        h = 1e-6
        for k in range(6):
            e = np.zeros(6)
            e[k] = h
            fd = (residuals(e) - residuals(-e)) / (2 * h)
            assert np.max(np.abs(system.A[:, k] - fd)) < 1e-6


class TestMadSigma:
    def test_constant_vector(self):
        assert mad_sigma(np.full(7, 3.2)) == 0.0

    def test_symmetric_triple(self):
        assert abs(mad_sigma([-1.0, 0.0, 1.0]) - 1.0 / 0.6745) < 1e-12

    def test_even_length_uses_central_mean(self):
        # median of (0,1,2,3) = 1.5; |B - 1.5| = (1.5, .5, .5, 1.5); MAD = 1
        assert abs(mad_sigma([0.0, 1.0, 2.0, 3.0]) - 1.0 / 0.6745) < 1e-12

    def test_gaussian_consistency(self):
        rng = np.random.default_rng(5)
        draws = rng.normal(scale=2.0, size=100_000)
        assert 1.9 <= mad_sigma(draws) <= 2.1


class TestHuberWeights:
    def test_inlier_branch(self):
        assert np.allclose(huber_weights([0.1, -0.1], 0.2), [1.0, 1.0])

    def test_outlier_branch(self):
        assert np.allclose(huber_weights([2.0], 0.5), [0.25])

    def test_branch_table(self):
        B = np.array([-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0])
        kappa = 1.0
        expected = np.array([1 / 3, 1.0, 1.0, 1.0, 1.0, 1.0, 1 / 3])
        assert np.allclose(huber_weights(B, kappa), expected)

    def test_zero_kappa_degenerates_to_ols(self):
        assert np.allclose(huber_weights([0.0, 0.0, 0.0], 0.0), [1, 1, 1])

    def test_weights_in_unit_interval(self):
        rng = np.random.default_rng(6)
        w = huber_weights(rng.normal(size=1000), 0.7)
        assert np.all(w > 0) and np.all(w <= 1)


class TestSolveWeightedStep:
    def test_identity_system(self):
        A = np.vstack([np.eye(6), np.zeros((4, 6))])
        B = np.zeros(10)
        B[5] = 1.0
        step = solve_weighted_step(IrlsSystem(A, B, np.ones(10)))
        assert np.allclose(step.vector, [0, 0, 0, 0, 0, 1], atol=1e-12)

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            A = rng.normal(size=(100, 6))
            B = rng.normal(size=100)
            W = rng.uniform(0.1, 1.0, size=100)
            step = solve_weighted_step(IrlsSystem(A, B, W))
            # W enters the quadratic form linearly: rows scaled by sqrt(W)
            sw = np.sqrt(W)
            expected = lstsq_svd(A * sw[:, None], B * sw)
            assert np.max(np.abs(step.vector - expected)) < 1e-8

    def test_parallel_normals_ill_conditioned(self):
        rng = np.random.default_rng(8)
        n = np.tile([0.0, 0.0, 1.0], (50, 1))
        corr = CorrespondenceSet(
            rng.uniform(-1, 1, (50, 3)), n, rng.uniform(-1, 1, (50, 3)),
            np.ones(50))
        system = assemble_system(corr, lg.Pose.identity())
        with pytest.raises(IllConditioned):
            solve_weighted_step(system)


class TestIrlsInnerLoop:
    def plane_rich_correspondences(self, rng, theta_true, n=300):
        """Exact correspondences on three orthogonal planes."""
        normals = np.repeat(np.eye(3), n // 3, axis=0)
        model = rng.uniform(-0.5, 0.5, (len(normals), 3))
        observed = lg.apply(lg.inverse(theta_true), model)
        dist = np.zeros(len(normals))
        return CorrespondenceSet(model, normals, observed, dist)

    def test_fixed_point_at_truth(self):
        rng = np.random.default_rng(9)
        theta_true = lg.exp_se3(lg.Twist([0.1, 0, 0.2], [0.2, 0.1, 0]))
        corr = self.plane_rich_correspondences(rng, theta_true)
        theta, iterations = irls_inner_loop(corr, theta_true, max_inner=20, tol=1e-7)
        assert iterations == 1
        assert np.allclose(theta.matrix(), theta_true.matrix(), atol=1e-12)

    def test_converges_from_small_offset(self):
        rng = np.random.default_rng(10)
        theta_true = lg.exp_se3(lg.Twist([0.05, -0.02, 0.1], [0.1, 0.2, 0.05]))
        corr = self.plane_rich_correspondences(rng, theta_true)
        offset = lg.exp_se3(lg.Twist([0, 0, 0], [0.005, 0, 0]))
        theta, _ = irls_inner_loop(corr, lg.compose(theta_true, offset),
                                   max_inner=10, tol=1e-9)
        err = np.linalg.norm(theta.translation - theta_true.translation)
        assert err < 1e-6

    def test_outliers_barely_move_solution(self):
        rng = np.random.default_rng(11)
        theta_true = lg.exp_se3(lg.Twist([0.1, 0.05, -0.08], [0.15, -0.1, 0.2]))
        corr = self.plane_rich_correspondences(rng, theta_true, n=300)
        start = lg.compose(theta_true, lg.exp_se3(lg.Twist([0, 0, 0], [0.003, 0.002, 0])))
        clean, _ = irls_inner_loop(corr, start, max_inner=20, tol=1e-10)
        # displace 20% of observed points by 10 cm
        observed = corr.observed_points.copy()
        k = len(observed) // 5
        which = rng.choice(len(observed), size=k, replace=False)
        direction = rng.normal(size=(k, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        observed[which] += 0.1 * direction
        dirty = CorrespondenceSet(corr.model_points, corr.model_normals,
                                  observed, corr.distances)
        robust, _ = irls_inner_loop(dirty, start, max_inner=20, tol=1e-10)
        trans_err = np.linalg.norm(robust.translation - clean.translation)
        rot_err = lg.log_so3(robust.rotation.T @ clean.rotation)
        assert trans_err < 1e-3
        assert np.degrees(np.linalg.norm(rot_err)) < 0.1

    def test_descent_per_solve_at_frozen_kappa(self):
        rng = np.random.default_rng(12)
        corr = random_correspondences(rng, n=200, outliers=0.2)
        theta = lg.Pose.identity()
        for _ in range(10):
            system = assemble_system(corr, theta)
            kappa = 1.345 * mad_sigma(system.B)
            weights = huber_weights(system.B, kappa)
            step = solve_weighted_step(IrlsSystem(system.A, system.B, weights))
            after = system.B - system.A @ step.vector
            assert huber_loss(after, kappa) <= huber_loss(system.B, kappa) + 1e-12
            theta = lg.compose(theta, lg.exp_se3(step))

    def test_gradient_vanishes_at_optimum(self):
        rng = np.random.default_rng(13)
        theta_true = lg.exp_se3(lg.Twist([0.03, 0.07, -0.02], [0.1, 0, 0.05]))
        corr = self.plane_rich_correspondences(rng, theta_true)
        theta, _ = irls_inner_loop(corr, lg.compose(
            theta_true, lg.exp_se3(lg.Twist([0, 0, 0], [0.002, 0, 0]))),
            max_inner=30, tol=1e-12)
        system = assemble_system(corr, theta)
        weights = huber_weights(system.B, 1.345 * mad_sigma(system.B))
        gradient = system.A.T @ (weights * system.B)
        assert np.linalg.norm(gradient) <= 1e-8 * len(corr)


@pytest.fixture(scope="module")
def noiseless_scene(arm_model):
    return generate_synthetic_scene(arm_model, n_configs=3, noise_mm=0.0,
                                    outlier_frac=0.0, seed=42,
                                    points_per_config=400)


def pose_errors(pose, true_pose):
    trans = np.linalg.norm(pose.translation - true_pose.translation)
    R = pose.rotation.T @ true_pose.rotation
    angle = np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0))
    return trans, np.degrees(angle)


class TestRegister:
    def test_noiseless_recovery(self, arm_model, noiseless_scene):
        scene = noiseless_scene
        report = register(arm_model, scene.qs, scene.observed, RegistrationConfig())
        trans, rot = pose_errors(report.pose, scene.true_pose)
        assert trans <= 1e-4
        assert rot <= 0.01
        assert report.converged

    def test_noisy_recovery_within_5mm(self, arm_model):
        scene = generate_synthetic_scene(arm_model, n_configs=3, noise_mm=2.0,
                                         outlier_frac=0.0, seed=7,
                                         points_per_config=400)
        report = register(arm_model, scene.qs, scene.observed, RegistrationConfig())
        trans, _ = pose_errors(report.pose, scene.true_pose)
        assert trans <= 5e-3

    def test_determinism(self, arm_model, noiseless_scene):
        scene = noiseless_scene
        a = register(arm_model, scene.qs, scene.observed, RegistrationConfig())
        b = register(arm_model, scene.qs, scene.observed, RegistrationConfig())
        assert np.array_equal(a.pose.matrix(), b.pose.matrix())

    def test_equivariance_under_camera_motion(self, arm_model, noiseless_scene):
        scene = noiseless_scene
        G = lg.exp_se3(lg.Twist([0.1, -0.2, 0.15], [0.05, 0.1, -0.08]))
        moved = ObservedCloud(lg.apply(G, scene.observed.points),
                              scene.observed.config_index)
        base = register(arm_model, scene.qs, scene.observed, RegistrationConfig())
        shifted = register(arm_model, scene.qs, moved, RegistrationConfig())
        theta_base = lg.inverse(base.pose)
        theta_shifted = lg.inverse(shifted.pose)
        # theta' * G == theta: same model-frame alignment
        assert np.allclose(lg.compose(theta_shifted, G).matrix(),
                           theta_base.matrix(), atol=1e-4)

    def test_flipped_initialization_never_silently_converges(self, arm_model):
        scene = generate_synthetic_scene(arm_model, n_configs=1, noise_mm=0.0,
                                         outlier_frac=0.0, seed=3,
                                         points_per_config=400)
        flip = lg.Pose(lg.exp_so3([0, 0, np.pi]), np.zeros(3))
        flipped_init = lg.compose(scene.true_pose, flip)
        config = RegistrationConfig(initial_pose=flipped_init)
        report = register(arm_model, scene.qs, scene.observed, config)
        trans, rot = pose_errors(report.pose, scene.true_pose)
        recovered = trans < 0.01 and rot < 1.0
        assert recovered or not report.converged

    def test_report_invariant(self, arm_model, noiseless_scene):
        scene = noiseless_scene
        config = RegistrationConfig()
        report = register(arm_model, scene.qs, scene.observed, config)
        if report.converged:
            assert report.final_median_residual <= config.residual_threshold
        assert report.iterations_outer >= 1
        assert report.wall_time > 0


class TestBruteForcePath:
    def test_brute_force_matches_kdtree(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            n = rng.integers(10, 500)
            model_pts = rng.uniform(-1, 1, (n, 3))
            queries = rng.uniform(-1, 1, (rng.integers(5, 100), 3))
            idx_fast, dist_fast = brute_force_nearest(model_pts, queries)
            idx_ref, dist_ref = nearest_brute(model_pts, queries)
            assert np.array_equal(idx_fast, idx_ref)
            assert np.allclose(dist_fast, dist_ref)

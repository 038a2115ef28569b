import numpy as np
import pytest

from dafslam.datasets import (
    Dataset,
    DatasetConfig,
    apply_sweep_parameter,
    dataset_from_dict,
    dataset_to_dict,
    generate_grid,
    load_dataset,
    make_semireal,
    reference_solution,
    save_dataset,
    snake_positions,
)
from dafslam.factor_graph import (
    Estimate,
    Measurements,
    _odometry_residual,
    compose_chain,
    graph_cost,
    build_slam_graph,
)
from dafslam.g2o_io import PoseGraph, PoseGraphEdge
from dafslam.geometry import Pose, compose, inverse, pose_dof, retract, rot2


class TestSnakePath:
    @pytest.mark.parametrize("shape", [(4, 5), (20, 25)])
    def test_2d_adjacency(self, shape):
        pos = snake_positions(shape, 1.0)
        assert pos.shape == (shape[0] * shape[1], 2)
        steps = np.diff(pos, axis=0)
        # every step moves exactly one cell along exactly one axis
        assert np.all(np.abs(steps).sum(axis=1) == 1.0)
        assert len(np.unique(pos, axis=0)) == len(pos)

    @pytest.mark.parametrize("shape", [(3, 3, 3), (6, 6, 6), (2, 3, 4)])
    def test_3d_adjacency(self, shape):
        pos = snake_positions(shape, 1.0)
        assert pos.shape == (np.prod(shape), 3)
        steps = np.diff(pos, axis=0)
        assert np.all(np.abs(steps).sum(axis=1) == 1.0)
        assert len(np.unique(pos, axis=0)) == len(pos)

    def test_spacing(self):
        pos = snake_positions((2, 3), 2.5)
        steps = np.abs(np.diff(pos, axis=0)).sum(axis=1)
        assert np.allclose(steps, 2.5)


class TestGenerateGrid:
    def test_zero_noise_consistency(self):
        cfg = DatasetConfig(grid_shape=(4, 5), n_landmarks=5, obs_per_landmark=4,
                            odom_trans_std=0.0, odom_rot_std=0.0, lm_std=0.0, seed=1)
        ds = generate_grid(cfg)
        chain = compose_chain(ds.odometry)
        for p, q in zip(chain, ds.gt_trajectory):
            np.testing.assert_allclose(p.translation, q.translation, atol=1e-12)
            np.testing.assert_allclose(p.rotation, q.rotation, atol=1e-12)
        for k in range(ds.m):
            i = ds.measurements.pose_indices[k]
            j = ds.gt_associations[k]
            pose = ds.gt_trajectory[i]
            exact = pose.rotation.T @ (ds.gt_landmarks[:, j] - pose.translation)
            np.testing.assert_allclose(ds.measurements.values[k], exact, atol=1e-12)

    def test_table_defaults_2d(self):
        ds = generate_grid(DatasetConfig.grid_2d())
        assert ds.n_poses == 500
        assert ds.k_true == 100
        assert ds.m == 1000
        assert ds.sigma == 0.05

    def test_table_defaults_3d(self):
        ds = generate_grid(DatasetConfig.grid_3d())
        assert ds.n_poses == 216
        assert ds.k_true == 43
        assert ds.m == 430

    def test_observers_are_nearest_poses(self):
        ds = generate_grid(DatasetConfig(grid_shape=(5, 6), n_landmarks=7,
                                         obs_per_landmark=4, seed=2))
        positions = np.stack([p.translation for p in ds.gt_trajectory])
        for j in range(ds.k_true):
            observers = set(
                int(ds.measurements.pose_indices[k])
                for k in range(ds.m) if ds.gt_associations[k] == j)
            dists = np.linalg.norm(positions - ds.gt_landmarks[:, j], axis=1)
            brute = set(np.argsort(dists)[:4].tolist())
            assert observers == brute

    def test_m_equals_obs_times_k(self):
        for cfg in (DatasetConfig.grid_2d(), DatasetConfig.grid_3d(),
                    DatasetConfig(grid_shape=(3, 4), n_landmarks=6, obs_per_landmark=2)):
            ds = generate_grid(cfg)
            assert ds.m == cfg.n_landmarks * cfg.obs_per_landmark

    def test_obs_exceeding_poses_rejected(self):
        with pytest.raises(ValueError):
            generate_grid(DatasetConfig(grid_shape=(2, 2), n_landmarks=2,
                                        obs_per_landmark=5))

    def test_deterministic_given_seed(self):
        a = generate_grid(DatasetConfig(grid_shape=(3, 4), n_landmarks=3,
                                        obs_per_landmark=2, seed=9))
        b = generate_grid(DatasetConfig(grid_shape=(3, 4), n_landmarks=3,
                                        obs_per_landmark=2, seed=9))
        np.testing.assert_array_equal(a.measurements.values, b.measurements.values)
        np.testing.assert_array_equal(a.gt_landmarks, b.gt_landmarks)

    def test_whitened_noise_passes_chi2_mean_test(self):
        # Mean of squared whitened odometry residuals over 20 seeds must sit
        # within 3 standard errors of the residual dimension.
        samples = []
        for seed in range(20):
            cfg = DatasetConfig(grid_shape=(5, 10), n_landmarks=5,
                                obs_per_landmark=3, seed=seed)
            ds = generate_grid(cfg)
            for f in ds.odometry:
                r = _odometry_residual(f, ds.gt_trajectory[f.from_idx],
                                       ds.gt_trajectory[f.to_idx])
                samples.append(r @ r)
        samples = np.array(samples)
        dof = pose_dof(2)
        se = np.sqrt(2 * dof / len(samples))
        assert abs(samples.mean() - dof) <= 3 * se


class TestSemireal:
    def make_chain_graph(self, n=12, with_loop=True, seed=0):
        rng = np.random.default_rng(seed)
        poses = [Pose.identity(2)]
        info = np.diag([50.0, 50.0, 100.0])
        edges = []
        for i in range(n - 1):
            rel = Pose(rot2(rng.uniform(-0.4, 0.4)), np.array([1.0, rng.uniform(-0.2, 0.2)]))
            poses.append(compose(poses[-1], rel))
            edges.append(PoseGraphEdge(i, i + 1, rel, info.copy()))
        if with_loop:
            rel = compose(inverse(poses[2]), poses[n - 2])
            edges.append(PoseGraphEdge(2, n - 2, rel, info.copy()))
        return PoseGraph(dim=2, poses=poses, edges=edges)

    def test_no_loop_closures_proxy_equals_chain(self):
        g = self.make_chain_graph(with_loop=False)
        cfg = DatasetConfig(grid_shape=(3, 4), n_landmarks=4, obs_per_landmark=3, seed=3)
        ds = make_semireal(g, cfg)
        chain = compose_chain(ds.odometry)
        for p, q in zip(ds.gt_trajectory, chain):
            np.testing.assert_allclose(p.translation, q.translation, atol=1e-6)

    def test_zero_sigma_measurements_exact_against_proxy(self):
        g = self.make_chain_graph()
        cfg = DatasetConfig(grid_shape=(3, 4), n_landmarks=4, obs_per_landmark=3,
                            lm_std=0.0, seed=4)
        ds = make_semireal(g, cfg)
        for k in range(ds.m):
            pose = ds.gt_trajectory[ds.measurements.pose_indices[k]]
            j = ds.gt_associations[k]
            exact = pose.rotation.T @ (ds.gt_landmarks[:, j] - pose.translation)
            np.testing.assert_allclose(ds.measurements.values[k], exact, atol=1e-12)

    def test_counts_follow_config(self):
        g = self.make_chain_graph(n=30)
        cfg = DatasetConfig(grid_shape=(3, 4), n_landmarks=7, obs_per_landmark=5, seed=5)
        ds = make_semireal(g, cfg)
        assert ds.n_poses == 30
        assert ds.k_true == 7
        assert ds.m == 35
        assert len(ds.odometry) == 29

    def test_loop_closures_are_dropped(self):
        g = self.make_chain_graph(with_loop=True)
        cfg = DatasetConfig(grid_shape=(3, 4), n_landmarks=3, obs_per_landmark=2, seed=6)
        ds = make_semireal(g, cfg)
        assert all(f.to_idx == f.from_idx + 1 for f in ds.odometry)

    def test_broken_chain_is_error(self):
        g = self.make_chain_graph(n=8)
        del g.edges[3]
        with pytest.raises(ValueError, match="broken odometry chain"):
            make_semireal(g, DatasetConfig(grid_shape=(2, 2), n_landmarks=2,
                                           obs_per_landmark=2))

    def test_intel_scale_counts_and_sparse_solve(self):
        # A 942-vertex chain plus the Intel landmark parameters reproduces
        # 942 poses / 94 landmarks / 1880 measurements. Perturbed vertex
        # initials force the proxy optimization through the sparse path
        # (2826 pose variables > the dense limit).
        rng = np.random.default_rng(20)
        poses = [Pose.identity(2)]
        info = np.diag([400.0, 400.0, 1000.0])
        edges = []
        for i in range(941):
            rel = Pose(rot2(rng.uniform(-0.1, 0.1)), np.array([1.0, 0.0]))
            poses.append(compose(poses[-1], rel))
            edges.append(PoseGraphEdge(i, i + 1, rel, info.copy()))
        noisy = [poses[0]] + [retract(p, rng.normal(scale=0.05, size=3))
                              for p in poses[1:]]
        graph = PoseGraph(dim=2, poses=noisy, edges=edges)
        ds = make_semireal(graph, DatasetConfig.intel())
        assert (ds.n_poses, ds.k_true, ds.m) == (942, 94, 1880)
        # chain edges are exact, so the optimized proxy matches composition
        chain = compose_chain(ds.odometry)
        worst = max(np.linalg.norm(p.translation - q.translation)
                    for p, q in zip(ds.gt_trajectory, chain))
        assert worst < 1e-6

    def test_gauge_normalized_to_identity(self):
        g = self.make_chain_graph()
        # Shift every vertex: the proxy must still start at the identity.
        offset = Pose.from_xytheta(5.0, -3.0, 0.7)
        g.poses = [compose(offset, p) for p in g.poses]
        ds = make_semireal(g, DatasetConfig(grid_shape=(2, 2), n_landmarks=2,
                                            obs_per_landmark=2, seed=7))
        np.testing.assert_allclose(ds.gt_trajectory[0].translation, 0.0, atol=1e-9)
        np.testing.assert_allclose(ds.gt_trajectory[0].rotation, np.eye(2), atol=1e-9)


class TestReferenceSolution:
    def test_zero_noise_reference_is_truth(self):
        cfg = DatasetConfig(grid_shape=(4, 5), n_landmarks=4, obs_per_landmark=3,
                            odom_trans_std=0.0, odom_rot_std=0.0, lm_std=0.0, seed=8)
        ds = generate_grid(cfg)
        res = reference_solution(ds)
        for p, q in zip(res.trajectory, ds.gt_trajectory):
            np.testing.assert_allclose(p.translation, q.translation, atol=1e-8)

    def test_reference_no_worse_than_odometry_init(self):
        cfg = DatasetConfig(grid_shape=(4, 5), n_landmarks=4, obs_per_landmark=3, seed=9)
        ds = generate_grid(cfg)
        res = reference_solution(ds)
        x_init = compose_chain(ds.odometry)
        from dafslam.baselines import first_observation_init

        y_init = first_observation_init(ds.measurements, ds.gt_associations, x_init)
        graph = build_slam_graph(ds.odometry, ds.measurements, ds.gt_associations,
                                 ds.sigma, prior_target=x_init[0])
        init_cost = graph_cost(graph, Estimate(x_init, y_init))
        assert res.objective <= init_cost + 1e-12

    def test_reference_near_coarse_grid_optimum(self):
        # 2-pose, 1-landmark noisy instance: LM must beat a brute-force
        # lattice around the ground truth (up to the lattice resolution).
        rng = np.random.default_rng(10)
        traj = [Pose.identity(2), Pose.from_xytheta(1, 0, 0.2)]
        y_true = np.array([[1.5], [0.8]])
        sigma = 0.1
        vals, pidx = [], []
        for i, p in enumerate(traj):
            z = p.rotation.T @ (y_true[:, 0] - p.translation)
            vals.append(z + rng.normal(scale=sigma, size=2))
            pidx.append(i)
        meas = Measurements(pidx, vals)
        from dafslam.factor_graph import OdometryFactor, diag_info_sqrt

        rel = compose(inverse(traj[0]), traj[1])
        noisy_rel = retract(rel, rng.normal(scale=0.05, size=3))
        odom = [OdometryFactor(0, 1, noisy_rel, diag_info_sqrt(0.05, 0.05, 2))]
        ds = Dataset(2, odom, meas, sigma, traj, y_true, np.array([0, 0]))
        res = reference_solution(ds)
        graph = build_slam_graph(odom, meas, [0, 0], sigma,
                                 prior_target=Pose.identity(2))
        best = np.inf
        grid = np.linspace(-0.15, 0.15, 7)
        for dx in grid:
            for dy in grid:
                for dth in grid:
                    for lx in grid:
                        for ly in grid:
                            est = Estimate(
                                [traj[0], retract(traj[1], np.array([dx, dy, dth]))],
                                y_true + np.array([[lx], [ly]]))
                            best = min(best, graph_cost(graph, est))
        assert res.objective <= best + 1e-9


class TestSerialization:
    @pytest.mark.parametrize("dim", [2, 3])
    def test_round_trip(self, dim, tmp_path):
        shape = (3, 4) if dim == 2 else (2, 3, 2)
        cfg = DatasetConfig(dim=dim, grid_shape=shape, n_landmarks=3,
                            obs_per_landmark=2, seed=11)
        ds = generate_grid(cfg)
        path = tmp_path / "ds.json"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert back.dim == ds.dim and back.m == ds.m and back.k_true == ds.k_true
        np.testing.assert_array_equal(back.measurements.values, ds.measurements.values)
        np.testing.assert_array_equal(back.gt_associations, ds.gt_associations)
        np.testing.assert_allclose(back.gt_landmarks, ds.gt_landmarks, atol=0)
        for p, q in zip(back.gt_trajectory, ds.gt_trajectory):
            np.testing.assert_allclose(p.rotation, q.rotation, atol=1e-12)
            np.testing.assert_array_equal(p.translation, q.translation)
        for f, g in zip(back.odometry, ds.odometry):
            np.testing.assert_array_equal(f.info_sqrt, g.info_sqrt)
            np.testing.assert_allclose(f.rel_pose.rotation, g.rel_pose.rotation,
                                       atol=1e-12)

    def test_version_check(self):
        obj = dataset_to_dict(generate_grid(DatasetConfig(
            grid_shape=(2, 2), n_landmarks=2, obs_per_landmark=2)))
        obj["format_version"] = 99
        with pytest.raises(ValueError, match="format_version"):
            dataset_from_dict(obj)

    def test_byte_identical_dumps(self, tmp_path):
        cfg = DatasetConfig(grid_shape=(3, 3), n_landmarks=2, obs_per_landmark=2, seed=12)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_dataset(generate_grid(cfg), p1)
        save_dataset(generate_grid(cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSweepParameter:
    def test_odom_noise_scales_both_stds(self):
        cfg = DatasetConfig()
        out = apply_sweep_parameter(cfg, "odom_noise", 2.0)
        assert out.odom_trans_std == pytest.approx(0.1)
        assert out.odom_rot_std == pytest.approx(0.01)

    def test_lm_noise_sets_sigma(self):
        out = apply_sweep_parameter(DatasetConfig(), "lm_noise", 0.4)
        assert out.lm_std == 0.4

    def test_n_landmarks(self):
        out = apply_sweep_parameter(DatasetConfig(), "n_landmarks", 25)
        assert out.n_landmarks == 25

    def test_unknown_parameter(self):
        with pytest.raises(ValueError):
            apply_sweep_parameter(DatasetConfig(), "bogus", 1)

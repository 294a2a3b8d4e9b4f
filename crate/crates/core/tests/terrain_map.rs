use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use proptest::prelude::*;
use uneven_planner::pointcloud::{Point3, PointCloud};
use uneven_planner::terrain_map::{
    FitParams, GridFileError, GridSpec, TerrainError, TerrainGrid, TerrainSample, SIGMA_UPPER,
};

fn plane_cloud(slope_deg: f64, min: [f64; 2], max: [f64; 2], spacing: f64) -> PointCloud {
    let m = slope_deg.to_radians().tan();
    let nx = ((max[0] - min[0]) / spacing).round() as usize;
    let ny = ((max[1] - min[1]) / spacing).round() as usize;
    let mut pts = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (min[0] + i as f64 * spacing, min[1] + j as f64 * spacing);
            pts.push(Point3::new(x, y, m * x));
        }
    }
    PointCloud::new(pts).unwrap()
}

fn angle_deg(a: Vector3<f64>, b: Vector3<f64>) -> f64 {
    a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Cloud reaching one meter past the grid so every ellipsoid is full.
fn plane_grid(slope_deg: f64) -> TerrainGrid {
    let cloud = plane_cloud(slope_deg, [-2.0, -2.0], [3.0, 3.0], 0.1);
    TerrainGrid::build(&cloud, GridSpec::covering([-1.0, -1.0], [2.0, 2.0], 0.25, 12), &FitParams::default()).unwrap()
}

#[test]
fn flat_plane_build() {
    let grid = plane_grid(0.0);
    assert_eq!(grid.stats().invalid_cells, 0);
    for s in grid.samples() {
        assert!(s.a.abs() < 1e-12 && s.b.abs() < 1e-12 && s.z.abs() < 1e-12 && s.sigma.abs() < 1e-12);
    }
}

#[test]
fn inclined_plane_build_recovers_normal_and_height() {
    for slope in [10.0, 26.565] {
        let grid = plane_grid(slope);
        let m = f64::to_radians(slope).tan();
        let normal = Vector3::new(-m, 0.0, 1.0);
        let spec = *grid.spec();
        for i in 0..spec.dims[0] {
            for j in 0..spec.dims[1] {
                for k in 0..spec.dims[2] {
                    let s = grid.sample(i, j, k);
                    let node = spec.node(i, j, k);
                    assert!(s.valid);
                    assert!(angle_deg(s.normal(), normal) < 1.0, "slope {slope} node {node:?}");
                    assert!((s.z - m * node.x).abs() < 0.01, "slope {slope} node {node:?}: z {}", s.z);
                }
            }
        }
    }
}

#[test]
fn half_slope_plane_matches_unit_normal() {
    let grid = plane_grid(0.5f64.atan().to_degrees());
    let expected = Vector3::new(-0.4472, 0.0, 0.8944);
    for s in grid.samples() {
        assert!((s.normal() - expected).norm() < 1e-2);
    }
}

#[test]
fn hemisphere_cap_apex_is_level_and_curved() {
    let r = 3.0;
    let mut pts = Vec::new();
    let n = 60;
    for i in -n..=n {
        for j in -n..=n {
            let (x, y) = (0.05 * i as f64, 0.05 * j as f64);
            let rr = x * x + y * y;
            if rr < 0.81 * r * r {
                pts.push(Point3::new(x, y, (r * r - rr).sqrt()));
            }
        }
    }
    let cloud = PointCloud::new(pts).unwrap();
    let grid = TerrainGrid::build(&cloud, GridSpec::covering([-1.0, -1.0], [1.0, 1.0], 0.5, 8), &FitParams::default())
        .unwrap();
    let spec = *grid.spec();
    for i in 0..spec.dims[0] {
        for j in 0..spec.dims[1] {
            for k in 0..spec.dims[2] {
                let s = grid.sample(i, j, k);
                let node = spec.node(i, j, k);
                let radial = Vector3::new(node.x, node.y, (r * r - node.x * node.x - node.y * node.y).sqrt());
                assert!(s.valid);
                assert!(s.sigma > 0.0 && s.sigma < 0.05, "sigma {}", s.sigma);
                assert!(angle_deg(s.normal(), radial) < 1.0, "node {node:?}");
            }
        }
    }
    let apex = grid.query(0.0, 0.0, 0.3).unwrap();
    assert!(angle_deg(apex.zb, Vector3::z()) < 0.1);
}

#[test]
fn sparse_cells_are_marked_invalid() {
    let cloud = plane_cloud(0.0, [0.0, 0.0], [1.0, 1.0], 0.1);
    let grid = TerrainGrid::build(&cloud, GridSpec::covering([0.0, 0.0], [3.0, 1.0], 0.5, 4), &FitParams::default())
        .unwrap();
    let stats = grid.stats();
    assert!(stats.invalid_cells > 0 && stats.invalid_cells < stats.cells);
    for s in grid.samples().iter().filter(|s| !s.valid) {
        assert_eq!((s.a, s.b, s.sigma), (0.0, 0.0, SIGMA_UPPER));
    }
}

#[test]
fn build_is_independent_of_worker_count() {
    let cloud = plane_cloud(12.0, [-2.0, -2.0], [3.0, 3.0], 0.1);
    let spec = GridSpec::covering([-1.0, -1.0], [2.0, 2.0], 0.3, 8);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| TerrainGrid::build(&cloud, spec, &FitParams::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

/// Smooth synthetic grid with every field varying in all three coordinates.
fn wavy_grid() -> TerrainGrid {
    TerrainGrid::from_fn(GridSpec::covering([0.0, 0.0], [2.0, 2.0], 0.2, 12), |s| TerrainSample {
        z: (s.x * 1.3).sin() + 0.2 * s.y,
        a: 0.3 * (s.x + s.theta).sin(),
        b: 0.2 * (s.y - 2.0 * s.theta).cos(),
        sigma: 0.05 + 0.04 * (s.x * s.y + s.theta).sin(),
        valid: true,
    })
    .unwrap()
}

#[test]
fn query_at_nodes_returns_stored_values() {
    let grid = wavy_grid();
    let spec = *grid.spec();
    for (i, j, k) in [(0, 0, 0), (3, 7, 5), (10, 10, 11), (4, 1, 6)] {
        let node = spec.node(i, j, k);
        let q = grid.query(node.x, node.y, node.theta).unwrap();
        let s = grid.sample(i, j, k);
        for (got, want) in [(q.z, s.z), (q.a, s.a), (q.b, s.b), (q.sigma, s.sigma)] {
            assert!((got - want).abs() < 1e-12, "node ({i},{j},{k}): {got} vs {want}");
        }
        assert!((q.zb.norm() - 1.0).abs() < 1e-12 && q.zb.z > 0.0);
    }
}

#[test]
fn flat_grid_queries_are_level() {
    let grid = TerrainGrid::from_fn(GridSpec::covering([0.0, 0.0], [1.0, 1.0], 0.1, 8), |_| TerrainSample::flat(0.2))
        .unwrap();
    let q = grid.query(0.37, 0.81, 2.0).unwrap();
    assert_eq!(q.zb, Vector3::z());
    assert!((q.z - 0.2).abs() < 1e-12);
    for g in [q.grad_z, q.grad_a, q.grad_b, q.grad_sigma] {
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn out_of_bounds_is_rejected() {
    let grid = wavy_grid();
    assert!(matches!(grid.query(-0.01, 1.0, 0.0), Err(TerrainError::OutOfBounds { .. })));
    assert!(matches!(grid.query(1.0, 2.01, 0.0), Err(TerrainError::OutOfBounds { .. })));
    assert!(grid.query(f64::NAN, 1.0, 0.0).is_err());
}

#[test]
fn grid_file_roundtrip_is_exact() {
    let grid = wavy_grid();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.tpm");
    grid.write(&path).unwrap();
    assert_eq!(TerrainGrid::read(&path).unwrap(), grid);
    std::fs::write(&path, b"NOPE0000").unwrap();
    assert!(matches!(TerrainGrid::read(&path), Err(GridFileError::BadMagic)));
}

proptest! {
    #[test]
    fn query_gradients_match_central_differences(
        cx in 0usize..10, cy in 0usize..10, ck in 0usize..12,
        fx in 0.1f64..0.9, fy in 0.1f64..0.9, ft in 0.1f64..0.9,
    ) {
        let grid = wavy_grid();
        let spec = *grid.spec();
        let dt = TAU / 12.0;
        let u = [
            (cx as f64 + fx) * spec.resolution,
            (cy as f64 + fy) * spec.resolution,
            -PI + (ck as f64 + ft) * dt,
        ];
        let q = grid.query(u[0], u[1], u[2]).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let (mut up, mut dn) = (u, u);
            up[k] += h;
            dn[k] -= h;
            let qp = grid.query(up[0], up[1], up[2]).unwrap();
            let qm = grid.query(dn[0], dn[1], dn[2]).unwrap();
            let pairs = [
                (q.grad_z[k], qp.z - qm.z),
                (q.grad_a[k], qp.a - qm.a),
                (q.grad_b[k], qp.b - qm.b),
                (q.grad_sigma[k], qp.sigma - qm.sigma),
            ];
            for (analytic, diff) in pairs {
                let fd = diff / (2.0 * h);
                prop_assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0), "axis {}: {} vs {}", k, analytic, fd);
            }
        }
    }

    #[test]
    fn query_is_continuous_across_faces(
        cx in 1usize..10, y in 0.05f64..1.95, theta in -3.1f64..3.1,
    ) {
        let grid = wavy_grid();
        let x = cx as f64 * grid.spec().resolution;
        let a = grid.query(x - 1e-9, y, theta).unwrap();
        let b = grid.query(x + 1e-9, y, theta).unwrap();
        for (p, q) in [(a.z, b.z), (a.a, b.a), (a.b, b.b), (a.sigma, b.sigma)] {
            prop_assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn query_is_theta_periodic(x in 0.0f64..2.0, y in 0.0f64..2.0, theta in -3.1f64..3.1) {
        let grid = wavy_grid();
        let a = grid.query(x, y, theta).unwrap();
        let b = grid.query(x, y, theta + TAU).unwrap();
        for (p, q) in [(a.z, b.z), (a.a, b.a), (a.b, b.b), (a.sigma, b.sigma)] {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn queries_stay_in_chart(x in -1.0f64..2.0, y in -1.0f64..2.0, theta in -3.1f64..3.1) {
        let grid = shared_plane_grid();
        let q = grid.query(x, y, theta).unwrap();
        prop_assert!((q.zb.norm() - 1.0).abs() < 1e-12 && q.zb.z > 0.0);
        prop_assert!(q.a * q.a + q.b * q.b < 1.0);
        prop_assert!((0.0..=SIGMA_UPPER).contains(&q.sigma));
    }
}

fn shared_plane_grid() -> &'static TerrainGrid {
    static GRID: std::sync::OnceLock<TerrainGrid> = std::sync::OnceLock::new();
    GRID.get_or_init(|| plane_grid(20.0))
}

#[test]
fn valid_samples_stay_in_chart() {
    for s in shared_plane_grid().samples().iter().chain(wavy_grid().samples()) {
        assert!(s.a * s.a + s.b * s.b < 1.0);
        assert!((0.0..=SIGMA_UPPER).contains(&s.sigma));
        assert!(s.normal().z > 0.0);
    }
}

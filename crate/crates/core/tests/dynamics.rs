use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use uneven_planner::dynamics::{
    attitude_projection, dynamic_state, state_gradients, AttitudeProjection, DynamicsError, FlatKinematics,
    VehicleParams,
};

/// Smooth chart fields over `(x, y, θ)` with `a² + b² ≤ 0.5`.
fn field(u: [f64; 3]) -> (f64, f64) {
    let [x, y, th] = u;
    (0.4 * x.sin() * y.cos() + 0.1 * th.cos(), 0.3 * (0.5 * x + y).cos() + 0.1 * (2.0 * th).sin())
}

fn field_gradients(u: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let [x, y, th] = u;
    let ga = [0.4 * x.cos() * y.cos(), -0.4 * x.sin() * y.sin(), -0.1 * th.sin()];
    let sn = (0.5 * x + y).sin();
    let gb = [-0.15 * sn, -0.3 * sn, 0.2 * (2.0 * th).cos()];
    (ga, gb)
}

fn projection_at(u: [f64; 3]) -> AttitudeProjection {
    let (a, b) = field(u);
    attitude_projection(u[2], a, b).unwrap()
}

type Getter = fn(&AttitudeProjection) -> f64;

const QUANTITIES: [(&str, Getter); 8] = [
    ("r", |p| p.r),
    ("s", |p| p.s),
    ("c", |p| p.c),
    ("cos_phi_x", |p| p.cos_phi_x),
    ("cos_phi_y", |p| p.cos_phi_y),
    ("sin_phi_x", |p| p.sin_phi_x),
    ("sin_phi_y", |p| p.sin_phi_y),
    ("cos_xi", |p| p.cos_xi),
];

#[test]
fn projection_gradients_match_central_differences() {
    let mut rng = StdRng::seed_from_u64(7);
    for case in 0..60 {
        let u = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.1..3.1)];
        let (a, b) = field(u);
        let (ga, gb) = field_gradients(u);
        let g = state_gradients(u[2], a, b, ga, gb).unwrap();
        let analytic = [g.r, g.s, g.c, g.cos_phi_x, g.cos_phi_y, g.sin_phi_x, g.sin_phi_y, g.cos_xi];
        for (q, (name, get)) in QUANTITIES.iter().enumerate() {
            for k in 0..3 {
                let h = 1e-6;
                let (mut up, mut dn) = (u, u);
                up[k] += h;
                dn[k] -= h;
                let fd = (get(&projection_at(up)) - get(&projection_at(dn))) / (2.0 * h);
                let err = (analytic[q][k] - fd).abs() / fd.abs().max(1.0);
                assert!(err < 1e-5, "case {case} {name}[{k}]: {} vs {fd}", analytic[q][k]);
            }
        }
    }
}

#[test]
fn level_ground_projections_are_trivial() {
    let p = attitude_projection(0.7, 0.0, 0.0).unwrap();
    assert_eq!((p.cos_phi_x, p.cos_phi_y, p.cos_xi), (1.0, 1.0, 1.0));
    assert_eq!(p.sin_phi_x.abs(), 0.0);
    assert_eq!(p.sin_phi_y.abs(), 0.0);
}

#[test]
fn pitch_on_incline_heading_uphill() {
    let slope = 20f64.to_radians();
    // body z axis of a plane rising along +x
    let p = attitude_projection(0.0, -slope.sin(), 0.0).unwrap();
    assert!((p.cos_phi_x - slope.cos()).abs() < 1e-12);
    assert!((p.sin_phi_x - slope.sin()).abs() < 1e-12);
    assert!((p.cos_phi_y - 1.0).abs() < 1e-12);
    assert!(p.sin_phi_y.abs() < 1e-12);
}

#[test]
fn thirty_degree_incline_examples() {
    let (sin30, cos30) = 30f64.to_radians().sin_cos();
    let head_on = attitude_projection(0.0, -sin30, 0.0).unwrap();
    assert!((head_on.cos_phi_x - cos30).abs() < 1e-12);
    assert!((head_on.sin_phi_x - 0.5).abs() < 1e-12);
    assert!((head_on.cos_xi - cos30).abs() < 1e-12);
    let flat = FlatKinematics {
        v: 1.0,
        a_t: 0.0,
        a_n: 0.0,
        omega: 0.0,
    };
    let d = dynamic_state(&flat, &head_on, &VehicleParams::default());
    assert!((d.v_x - 1.0 / cos30).abs() < 1e-12);
    assert!((d.a_x - 4.905).abs() < 1e-12);

    let sideways = attitude_projection(std::f64::consts::FRAC_PI_2, -sin30, 0.0).unwrap();
    assert!(sideways.r.abs() < 1e-12);
    assert!((sideways.cos_phi_x - 1.0).abs() < 1e-12);
    assert!(sideways.sin_phi_x.abs() < 1e-12);
    assert!((sideways.sin_phi_y + 0.5).abs() < 1e-12);
}

#[test]
fn rest_state_has_zero_steering() {
    let rest = FlatKinematics {
        v: 0.0,
        a_t: 0.0,
        a_n: 0.0,
        omega: 0.0,
    };
    let d = dynamic_state(&rest, &attitude_projection(0.0, 0.1, -0.2).unwrap(), &VehicleParams::default());
    assert_eq!((d.curvature, d.steering), (0.0, 0.0));
}

#[test]
fn cos_xi_gradient_example() {
    let g = state_gradients(0.0, 0.1, 0.0, [1.0, 0.0, 0.0], [0.0; 3]).unwrap();
    let expected = -0.1 / 0.99f64.sqrt();
    assert!((g.cos_xi[0] - expected).abs() < 1e-12);
    assert_eq!((g.cos_xi[1], g.cos_xi[2]), (0.0, 0.0));
    let level = state_gradients(1.0, 0.0, 0.0, [0.0; 3], [0.0; 3]).unwrap();
    let all = [level.cos_phi_x, level.cos_phi_y, level.sin_phi_x, level.sin_phi_y, level.cos_xi];
    assert!(all.iter().flatten().all(|v| v.abs() == 0.0));
}

#[test]
fn chart_boundary_is_rejected() {
    assert!(matches!(attitude_projection(0.0, 1.0, 0.0), Err(DynamicsError::ChartBoundary { .. })));
    assert!(attitude_projection(0.0, f64::NAN, 0.0).is_err());
}

#[test]
fn flat_worked_example() {
    let flat = FlatKinematics {
        v: 1.0,
        a_t: 0.5,
        a_n: 0.2,
        omega: 0.2,
    };
    let level = attitude_projection(0.0, 0.0, 0.0).unwrap();
    let exact = VehicleParams {
        delta_plus: 0.0,
        ..VehicleParams::default()
    };
    let d = dynamic_state(&flat, &level, &exact);
    assert!((d.curvature - 0.2).abs() < 1e-12);
    assert!((d.steering - 0.12f64.atan()).abs() < 1e-12);
    assert_eq!((d.v_x, d.a_x, d.a_y, d.omega_z), (1.0, 0.5, 0.2, 0.2));
    let regularized = dynamic_state(&flat, &level, &VehicleParams::default());
    assert!((regularized.curvature - 0.2 / (1.0 + 1e-4)).abs() < 1e-12);
}

#[test]
fn flat_kinematics_from_derivatives() {
    let th: f64 = 0.3;
    let (s, c) = th.sin_cos();
    let k = FlatKinematics::from_derivatives([2.0 * c, 2.0 * s], [c - 0.5 * s, s + 0.5 * c], th, 0.25);
    assert!((k.v - 2.0).abs() < 1e-12);
    assert!((k.a_t - 1.0).abs() < 1e-12);
    assert!((k.a_n - 0.5).abs() < 1e-12);
    assert_eq!(k.omega, 0.25);
}

fn chart() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0f64..0.95, -std::f64::consts::PI..std::f64::consts::PI, -4.0f64..4.0)
        .prop_map(|(rad, ang, theta)| (rad * ang.cos(), rad * ang.sin(), theta))
}

proptest! {
    #[test]
    fn pythagorean_identities((a, b, theta) in chart()) {
        let p = attitude_projection(theta, a, b).unwrap();
        prop_assert!((p.cos_phi_x.powi(2) + p.r * p.r - 1.0).abs() < 1e-12);
        let lhs = (p.cos_phi_y.powi(2) + p.sin_phi_y.powi(2)) * (1.0 - p.r * p.r);
        prop_assert!((lhs - (p.c * p.c + p.s * p.s)).abs() < 1e-12);
        prop_assert!((p.s * p.s + p.c * p.c - (1.0 - p.r * p.r)).abs() < 1e-12);
        prop_assert!(p.cos_xi > 0.0 && p.cos_phi_x > 0.0 && p.cos_phi_y > 0.0);
    }

    #[test]
    fn steering_is_odd_in_curvature(
        (a, b, theta) in chart(),
        v in 0.01f64..2.0,
        omega in -2.0f64..2.0,
    ) {
        let p = attitude_projection(theta, a, b).unwrap();
        let params = VehicleParams::default();
        let flat = |w| FlatKinematics { v, a_t: 0.0, a_n: 0.0, omega: w };
        let pos = dynamic_state(&flat(omega), &p, &params);
        let neg = dynamic_state(&flat(-omega), &p, &params);
        prop_assert_eq!(pos.curvature, -neg.curvature);
        prop_assert_eq!(pos.steering, -neg.steering);
    }

    #[test]
    fn level_chart_reduces_to_planar(
        theta in -4.0f64..4.0,
        v in 0.0f64..2.0,
        a_t in -3.0f64..3.0,
        a_n in -3.0f64..3.0,
        omega in -2.0f64..2.0,
    ) {
        let p = attitude_projection(theta, 0.0, 0.0).unwrap();
        let d = dynamic_state(&FlatKinematics { v, a_t, a_n, omega }, &p, &VehicleParams::default());
        prop_assert_eq!((d.v_x, d.a_x, d.a_y, d.omega_z), (v, a_t, a_n, omega));
    }
}

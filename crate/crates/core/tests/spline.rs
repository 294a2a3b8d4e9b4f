use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use uneven_planner::spline::{
    basis, time_backward, time_forward, time_forward_derivative, BoundaryCondition, QuinticSpline, SplineError,
};

#[derive(Debug)]
struct Instance {
    channels: usize,
    waypoints: Vec<f64>,
    durations: Vec<f64>,
    head: BoundaryCondition,
    tail: BoundaryCondition,
}

fn random_bc(rng: &mut StdRng, c: usize) -> BoundaryCondition {
    let mut v = || (0..c).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>();
    BoundaryCondition::new(v(), v(), v())
}

fn random_instance(rng: &mut StdRng) -> Instance {
    let m = rng.random_range(1..=6);
    let c = rng.random_range(1..=3);
    Instance {
        channels: c,
        waypoints: (0..(m - 1) * c).map(|_| rng.random_range(-3.0..3.0)).collect(),
        durations: (0..m).map(|_| rng.random_range(0.4..2.0)).collect(),
        head: random_bc(rng, c),
        tail: random_bc(rng, c),
    }
}

fn solve(inst: &Instance) -> QuinticSpline {
    QuinticSpline::solve(&inst.waypoints, &inst.durations, &inst.head, &inst.tail).unwrap()
}

/// Coefficients from a dense LU of the interpolation conditions, one channel at a time.
fn dense_coefficients(inst: &Instance) -> Vec<f64> {
    let m = inst.durations.len();
    let c = inst.channels;
    let n = 6 * m;
    let mut out = vec![0.0; n * c];
    for ch in 0..c {
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        let mut row = 0;
        let put = |row: usize, piece: usize, t: f64, order: usize, sign: f64, a: &mut DMatrix<f64>| {
            for (p, v) in basis(t, order).into_iter().enumerate() {
                a[(row, 6 * piece + p)] += sign * v;
            }
        };
        let heads = [&inst.head.position, &inst.head.velocity, &inst.head.acceleration];
        for (k, h) in heads.iter().enumerate() {
            put(row, 0, 0.0, k, 1.0, &mut a);
            b[row] = h[ch];
            row += 1;
        }
        for i in 0..m - 1 {
            put(row, i, inst.durations[i], 0, 1.0, &mut a);
            b[row] = inst.waypoints[i * c + ch];
            row += 1;
            for k in 0..5 {
                put(row, i, inst.durations[i], k, 1.0, &mut a);
                put(row, i + 1, 0.0, k, -1.0, &mut a);
                row += 1;
            }
        }
        let tails = [&inst.tail.position, &inst.tail.velocity, &inst.tail.acceleration];
        for (k, t) in tails.iter().enumerate() {
            put(row, m - 1, inst.durations[m - 1], k, 1.0, &mut a);
            b[row] = t[ch];
            row += 1;
        }
        assert_eq!(row, n);
        let x = a.lu().solve(&b).expect("dense system is regular");
        for k in 0..n {
            out[k * c + ch] = x[k];
        }
    }
    out
}

#[test]
fn banded_solve_matches_dense_oracle() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..30 {
        let inst = random_instance(&mut rng);
        let spline = solve(&inst);
        let dense = dense_coefficients(&inst);
        for (k, (a, b)) in spline.poly().coeffs().iter().zip(&dense).enumerate() {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "coefficient {k}: {a} vs {b}");
        }
    }
}

#[test]
fn single_piece_min_jerk_closed_form() {
    let zero = BoundaryCondition::scalar(0.0, 0.0, 0.0);
    let one = BoundaryCondition::scalar(1.0, 0.0, 0.0);
    let spline = QuinticSpline::solve(&[], &[1.0], &zero, &one).unwrap();
    let expected = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
    for (n, e) in expected.iter().enumerate() {
        assert!((spline.poly().coeff(0, n, 0) - e).abs() < 1e-12, "power {n}");
    }
    for i in 0..=20 {
        let t = i as f64 / 20.0;
        let p = spline.poly().eval(t, 0).unwrap()[0];
        let closed = 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5);
        assert!((p - closed).abs() < 1e-12, "t = {t}");
    }
}

#[test]
fn min_jerk_energy_closed_form() {
    let (dp, t) = (2.5, 1.7);
    let zero = BoundaryCondition::scalar(0.0, 0.0, 0.0);
    let end = BoundaryCondition::scalar(dp, 0.0, 0.0);
    let spline = QuinticSpline::solve(&[], &[t], &zero, &end).unwrap();
    let expected = 720.0 * dp * dp / t.powi(5);
    assert!((spline.poly().jerk_energy() - expected).abs() < 1e-9 * expected);
}

/// Cost `w · coeffs + jerk energy`, with its analytic gradient propagated to all inputs.
fn cost(inst: &Instance, weights: &[f64]) -> f64 {
    let spline = solve(inst);
    let poly = spline.poly();
    poly.coeffs().iter().zip(weights).map(|(c, w)| c * w).sum::<f64>() + poly.jerk_energy()
}

fn central_difference(inst: &mut Instance, weights: &[f64], get: impl Fn(&mut Instance) -> &mut f64) -> f64 {
    let h = 1e-6;
    let x0 = *get(inst);
    *get(inst) = x0 + h;
    let fp = cost(inst, weights);
    *get(inst) = x0 - h;
    let fm = cost(inst, weights);
    *get(inst) = x0;
    (fp - fm) / (2.0 * h)
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
    assert!(err < 1e-5, "{what}: analytic {analytic}, numeric {numeric}, rel {err}");
}

#[test]
fn adjoint_gradients_match_central_differences() {
    let mut rng = StdRng::seed_from_u64(23);
    for case in 0..20 {
        let mut inst = random_instance(&mut rng);
        let spline = solve(&inst);
        let poly = spline.poly();
        let weights: Vec<f64> = (0..poly.coeffs().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut gc = weights.clone();
        let mut gt = vec![0.0; inst.durations.len()];
        poly.add_jerk_energy_gradient(1.0, &mut gc, &mut gt);
        let grads = spline.propagate_gradients(&gc, &gt);

        for k in 0..inst.waypoints.len() {
            let fd = central_difference(&mut inst, &weights, |s| &mut s.waypoints[k]);
            assert_close(grads.waypoints[k], fd, &format!("case {case} waypoint {k}"));
        }
        for k in 0..inst.durations.len() {
            let fd = central_difference(&mut inst, &weights, |s| &mut s.durations[k]);
            assert_close(grads.durations[k], fd, &format!("case {case} duration {k}"));
        }
        for ch in 0..inst.channels {
            for order in 0..3 {
                let fd = central_difference(&mut inst, &weights, |s| match order {
                    0 => &mut s.head.position[ch],
                    1 => &mut s.head.velocity[ch],
                    _ => &mut s.head.acceleration[ch],
                });
                assert_close(grads.head[order][ch], fd, &format!("case {case} head {order}/{ch}"));
                let fd = central_difference(&mut inst, &weights, |s| match order {
                    0 => &mut s.tail.position[ch],
                    1 => &mut s.tail.velocity[ch],
                    _ => &mut s.tail.acceleration[ch],
                });
                assert_close(grads.tail[order][ch], fd, &format!("case {case} tail {order}/{ch}"));
            }
        }
    }
}

#[test]
fn tau_gradient_chains_time_map() {
    let mut rng = StdRng::seed_from_u64(5);
    let mut inst = random_instance(&mut rng);
    let taus: Vec<f64> = inst.durations.iter().map(|&d| time_backward(d).unwrap()).collect();
    let spline = solve(&inst);
    let poly = spline.poly();
    let mut gc = vec![0.0; poly.coeffs().len()];
    let mut gt = vec![0.0; inst.durations.len()];
    poly.add_jerk_energy_gradient(1.0, &mut gc, &mut gt);
    let g_tau = spline.propagate_gradients(&gc, &gt).tau(&taus);
    let weights = vec![0.0; gc.len()];
    for k in 0..taus.len() {
        let h = 1e-6;
        inst.durations[k] = time_forward(taus[k] + h);
        let fp = cost(&inst, &weights);
        inst.durations[k] = time_forward(taus[k] - h);
        let fm = cost(&inst, &weights);
        inst.durations[k] = time_forward(taus[k]);
        assert_close(g_tau[k], (fp - fm) / (2.0 * h), &format!("tau {k}"));
    }
}

#[test]
fn invalid_inputs_are_rejected() {
    let bc = BoundaryCondition::scalar(0.0, 0.0, 0.0);
    assert_eq!(
        QuinticSpline::solve(&[1.0], &[1.0, 0.0], &bc, &bc).unwrap_err(),
        SplineError::NonPositiveDuration(0.0)
    );
    assert!(matches!(QuinticSpline::solve(&[], &[1.0, 1.0], &bc, &bc), Err(SplineError::Shape(_))));
    let spline = QuinticSpline::solve(&[], &[1.0], &bc, &bc).unwrap();
    assert!(matches!(spline.poly().eval(1.5, 0), Err(SplineError::OutOfDomain { .. })));
    assert!(time_backward(-1.0).is_err());
}

#[test]
fn json_roundtrip_is_exact() {
    let mut rng = StdRng::seed_from_u64(3);
    let poly = solve(&random_instance(&mut rng)).into_poly();
    let text = serde_json::to_string(&poly.to_json()).unwrap();
    let back = uneven_planner::spline::PiecewisePoly::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(poly, back);
}

fn instance_strategy() -> impl Strategy<Value = Instance> {
    (1usize..=6, 1usize..=3).prop_flat_map(|(m, c)| {
        let vec = |n: usize, lo: f64, hi: f64| prop::collection::vec(lo..hi, n);
        (
            vec((m - 1) * c, -5.0, 5.0),
            vec(m, 0.2, 3.0),
            vec(3 * c, -2.0, 2.0),
            vec(3 * c, -2.0, 2.0),
        )
            .prop_map(move |(waypoints, durations, h, t)| {
                let bc = |v: &[f64]| BoundaryCondition::new(v[..c].to_vec(), v[c..2 * c].to_vec(), v[2 * c..].to_vec());
                Instance {
                    channels: c,
                    waypoints,
                    durations,
                    head: bc(&h),
                    tail: bc(&t),
                }
            })
    })
}

proptest! {
    #[test]
    fn junctions_are_c4_and_interpolate(inst in instance_strategy()) {
        let spline = solve(&inst);
        let poly = spline.poly();
        let c = inst.channels;
        let m = inst.durations.len();
        let tol = |x: f64| 1e-9 * x.abs().max(1.0);
        for i in 0..m - 1 {
            let end = poly.eval_piece(i, inst.durations[i], 0);
            for ch in 0..c {
                let w = inst.waypoints[i * c + ch];
                prop_assert!((end[ch] - w).abs() < tol(w), "waypoint {} channel {}", i, ch);
            }
            for order in 0..=4 {
                let left = poly.eval_piece(i, inst.durations[i], order);
                let right = poly.eval_piece(i + 1, 0.0, order);
                for ch in 0..c {
                    prop_assert!((left[ch] - right[ch]).abs() < tol(left[ch]),
                        "junction {} order {}: {} vs {}", i, order, left[ch], right[ch]);
                }
            }
        }
        let total = poly.total_duration();
        for (order, (h, t)) in [
            (&inst.head.position, &inst.tail.position),
            (&inst.head.velocity, &inst.tail.velocity),
            (&inst.head.acceleration, &inst.tail.acceleration),
        ].into_iter().enumerate() {
            let start = poly.eval(0.0, order).unwrap();
            let finish = poly.eval(total, order).unwrap();
            for ch in 0..c {
                prop_assert!((start[ch] - h[ch]).abs() < tol(h[ch]));
                prop_assert!((finish[ch] - t[ch]).abs() < tol(t[ch]));
            }
        }
    }

    #[test]
    fn time_map_roundtrip(tau in -50.0f64..50.0) {
        let t = time_forward(tau);
        prop_assert!(t > 0.0);
        let back = time_backward(t).unwrap();
        prop_assert!((back - tau).abs() < 1e-9 * tau.abs().max(1.0), "{} -> {} -> {}", tau, t, back);
        prop_assert!(time_forward_derivative(tau) > 0.0);
    }

    #[test]
    fn time_map_derivative_matches_difference(tau in -5.0f64..5.0) {
        let h = 1e-6;
        let fd = (time_forward(tau + h) - time_forward(tau - h)) / (2.0 * h);
        prop_assert!((fd - time_forward_derivative(tau)).abs() < 1e-6 * fd.abs().max(1.0));
    }
}

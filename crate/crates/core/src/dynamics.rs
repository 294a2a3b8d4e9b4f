//! Terrain-coupled control inputs and dynamic variables of a car-like robot.
//!
//! Planar kinematics come from the xy/θ spline derivatives; the terrain enters
//! only through the body z axis `z_b = (a, b, c)` in unit-disk chart form.
//! With `r = cθ·a + sθ·b` and `s = a·sθ − b·cθ` the attitude projections are
//!
//! ```text
//! cos φx = √(1−r²)        cos φy = c/√(1−r²)
//! sin φx = −r·c/√(1−r²)   sin φy = s/√(1−r²)      cos ξ = c
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Disk radius² beyond which the body axis is considered horizontal.
pub const CHART_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DynamicsError {
    #[error("body axis chart ({a}, {b}) too close to the unit circle")]
    ChartBoundary { a: f64, b: f64 },
}

/// Speed, tangential/normal acceleration and yaw rate of the planar motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatKinematics {
    pub v: f64,
    pub a_t: f64,
    pub a_n: f64,
    pub omega: f64,
}

impl FlatKinematics {
    pub fn from_derivatives(vel: [f64; 2], acc: [f64; 2], theta: f64, theta_rate: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            v: vel[0].hypot(vel[1]),
            a_t: acc[0] * c + acc[1] * s,
            a_n: -acc[0] * s + acc[1] * c,
            omega: theta_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeProjection {
    pub cos_phi_x: f64,
    pub cos_phi_y: f64,
    pub sin_phi_x: f64,
    pub sin_phi_y: f64,
    pub cos_xi: f64,
    pub r: f64,
    pub s: f64,
    pub c: f64,
}

fn check_chart(a: f64, b: f64) -> Result<(), DynamicsError> {
    let rr = a * a + b * b;
    if rr <= CHART_LIMIT && rr.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::ChartBoundary { a, b })
    }
}

pub fn attitude_projection(theta: f64, a: f64, b: f64) -> Result<AttitudeProjection, DynamicsError> {
    check_chart(a, b)?;
    let (st, ct) = theta.sin_cos();
    let r = ct * a + st * b;
    let s = a * st - b * ct;
    let c = (1.0 - a * a - b * b).sqrt();
    let p = (1.0 - r * r).sqrt();
    Ok(AttitudeProjection {
        cos_phi_x: p,
        cos_phi_y: c / p,
        sin_phi_x: -r * c / p,
        sin_phi_y: s / p,
        cos_xi: c,
        r,
        s,
        c,
    })
}

/// Gradients with respect to `(x, y, θ)` of the chart intermediates and the
/// five projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionGradients {
    pub r: [f64; 3],
    pub s: [f64; 3],
    pub c: [f64; 3],
    pub cos_phi_x: [f64; 3],
    pub cos_phi_y: [f64; 3],
    pub sin_phi_x: [f64; 3],
    pub sin_phi_y: [f64; 3],
    pub cos_xi: [f64; 3],
}

/// `grad_a`, `grad_b` are the derivatives of the interpolated chart
/// coordinates. The heading also enters `r` and `s` directly, which adds
/// `−s` and `r` to their θ components.
pub fn state_gradients(
    theta: f64,
    a: f64,
    b: f64,
    grad_a: [f64; 3],
    grad_b: [f64; 3],
) -> Result<ProjectionGradients, DynamicsError> {
    let proj = attitude_projection(theta, a, b)?;
    let (st, ct) = theta.sin_cos();
    let AttitudeProjection { r, s, c, .. } = proj;
    let mut gr = [0.0; 3];
    let mut gs = [0.0; 3];
    let mut gc = [0.0; 3];
    for k in 0..3 {
        gr[k] = ct * grad_a[k] + st * grad_b[k];
        gs[k] = st * grad_a[k] - ct * grad_b[k];
        gc[k] = -(a * grad_a[k] + b * grad_b[k]) / c;
    }
    gr[2] += -s;
    gs[2] += r;

    let one_r2 = 1.0 - r * r;
    let inv_sqrt = one_r2.sqrt().recip();
    let inv_32 = inv_sqrt / one_r2;
    let mut out = ProjectionGradients {
        r: gr,
        s: gs,
        c: gc,
        cos_phi_x: [0.0; 3],
        cos_phi_y: [0.0; 3],
        sin_phi_x: [0.0; 3],
        sin_phi_y: [0.0; 3],
        cos_xi: gc,
    };
    for k in 0..3 {
        out.cos_phi_x[k] = -r * inv_sqrt * gr[k];
        out.cos_phi_y[k] = inv_sqrt * gc[k] + r * inv_32 * c * gr[k];
        out.sin_phi_x[k] = -r * inv_sqrt * gc[k] - inv_32 * c * gr[k];
        out.sin_phi_y[k] = inv_sqrt * gs[k] + r * inv_32 * s * gr[k];
    }
    Ok(out)
}

/// Constants of the vehicle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Wheelbase, meters.
    pub wheelbase: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Regularizer for zero speed in the curvature terms.
    pub delta_plus: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.6,
            gravity: 9.81,
            delta_plus: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicState {
    /// Speed along the body x axis.
    pub v_x: f64,
    /// Longitudinal acceleration including the gravity component.
    pub a_x: f64,
    /// Lateral acceleration including the gravity component.
    pub a_y: f64,
    /// Yaw rate about the body z axis.
    pub omega_z: f64,
    pub curvature: f64,
    pub steering: f64,
}

pub fn dynamic_state(flat: &FlatKinematics, proj: &AttitudeProjection, params: &VehicleParams) -> DynamicState {
    let v_x = flat.v / proj.cos_phi_x;
    let a_x = flat.a_t / proj.cos_phi_x + params.gravity * proj.sin_phi_x;
    let a_y = flat.a_n / proj.cos_phi_y + params.gravity * proj.sin_phi_y;
    let omega_z = flat.omega / proj.cos_xi;
    // κ = ω_z / v_x, regularized at rest
    let curvature = omega_z * v_x / (v_x * v_x + params.delta_plus);
    DynamicState {
        v_x,
        a_x,
        a_y,
        omega_z,
        curvature,
        steering: (params.wheelbase * curvature).atan(),
    }
}

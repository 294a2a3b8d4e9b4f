#![allow(dead_code)]

use std::f64::consts::PI;

use uneven_planner::frontend::{make_initial_guess, GuessParams, InitialGuess};
use uneven_planner::terrain_map::{GridSpec, SE2State, TerrainGrid, TerrainSample};

pub fn flat_grid() -> TerrainGrid {
    TerrainGrid::from_fn(GridSpec::covering([-3.0, -4.0], [9.0, 4.0], 0.1, 36), |_| TerrainSample::flat(0.0)).unwrap()
}

/// Chart coordinates and σ vary linearly in x and y, so trilinear
/// interpolation reproduces them exactly and the mapping is smooth.
pub fn sloped_grid() -> TerrainGrid {
    TerrainGrid::from_fn(GridSpec::covering([-3.0, -4.0], [9.0, 4.0], 0.1, 36), |s| TerrainSample {
        z: 0.1 * s.x - 0.05 * s.y,
        a: 0.03 + 0.012 * s.x - 0.01 * s.y,
        b: -0.02 + 0.008 * s.x + 0.015 * s.y,
        sigma: 0.012 + 0.001 * s.x + 0.0008 * s.y,
        valid: true,
    })
    .unwrap()
}

/// Plane inclined by `deg` about the y axis, rising along +x.
pub fn incline_grid(deg: f64) -> TerrainGrid {
    let a = deg.to_radians();
    TerrainGrid::from_fn(GridSpec::covering([-3.0, -4.0], [9.0, 4.0], 0.1, 36), move |s| TerrainSample {
        z: s.x * a.tan(),
        a: -a.sin(),
        b: 0.0,
        sigma: 0.0,
        valid: true,
    })
    .unwrap()
}

pub fn straight_path(length: f64) -> Vec<SE2State> {
    let n = (length / 0.2).ceil() as usize;
    (0..=n).map(|i| SE2State::new(length * i as f64 / n as f64, 0.0, 0.0)).collect()
}

/// Quarter-ish arc of radius 4 starting at the origin heading +x.
pub fn arc_path() -> Vec<SE2State> {
    let r = 4.0;
    (0..=30)
        .map(|i| {
            let phi = 0.6 * PI / 2.0 * i as f64 / 30.0;
            SE2State::new(r * phi.sin(), r * (1.0 - phi.cos()), phi)
        })
        .collect()
}

pub fn guess(path: &[SE2State], piece_length: f64, v_init: f64, split: usize) -> InitialGuess {
    make_initial_guess(
        path,
        &GuessParams {
            piece_length,
            theta_split: split,
            v_init,
        },
    )
    .unwrap()
}

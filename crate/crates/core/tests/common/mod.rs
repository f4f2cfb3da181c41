#![allow(dead_code)]

use std::f64::consts::PI;

use hallway_reach::controller::{Activation, Layer, MLPController};
use hallway_reach::dynamics::{CarState, DynamicsParams};
use hallway_reach::track::{Leg, TrackConfig};
use rand::Rng;

/// Closed-form solution under constant steering. The speed ODE is linear
/// and the heading is linear in arc length, so position follows from
/// sine/cosine differences.
pub fn exact_flow(s: &CarState, steering: f64, t: f64, p: &DynamicsParams) -> CarState {
    let vs = p.c_m * (p.u - p.c_h);
    let decay = (-p.c_a * t).exp();
    let v = vs + (s.v - vs) * decay;
    let dist = vs * t + (s.v - vs) * (1.0 - decay) / p.c_a;
    let k = steering.tan() / (p.l_f + p.l_r);
    let th = s.theta + k * dist;
    let (dx, dy) = if k.abs() < 1e-12 {
        (dist * s.theta.cos(), dist * s.theta.sin())
    } else {
        ((th.sin() - s.theta.sin()) / k, (s.theta.cos() - th.cos()) / k)
    };
    CarState::new(s.x + dx, s.y + dy, v, th)
}

/// Random all-tanh network `inputs → hidden… → 1` with Glorot-like scale
/// times `gain`.
pub fn random_mlp(rng: &mut impl Rng, inputs: usize, hidden: &[usize], gain: f64) -> MLPController {
    let mut dims = vec![inputs];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let layers = dims
        .windows(2)
        .map(|d| {
            let (cols, rows) = (d[0], d[1]);
            let scale = gain / (cols as f64).sqrt();
            Layer {
                rows,
                cols,
                weights: (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
                bias: (0..rows).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                activation: Activation::Tanh,
            }
        })
        .collect();
    MLPController::new(inputs, layers).unwrap()
}

/// Uniform position inside a random leg's part of the corridor with a
/// random heading.
pub fn random_pose(rng: &mut impl Rng, track: &TrackConfig) -> CarState {
    let (w, s) = (track.w(), track.s());
    let leg = Leg(rng.gen_range(0..4));
    let u = rng.gen_range(1e-3..w - 1e-3);
    let a = rng.gen_range(w + 1e-3..s - 1e-3);
    let (x, y) = leg.to_global(u, a, s);
    CarState::new(x, y, 2.0, rng.gen_range(-PI..PI))
}

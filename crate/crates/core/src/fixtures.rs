//! Hand-built controllers used as test fixtures and shipped as weight files.

use crate::controller::{Activation, Layer, MLPController};
use crate::lidar::RayConfig;

/// Gains of the wall-centering network. Hidden unit `j` computes
/// `tanh(k_j (Σ_i c_i s_i d_i))` with `s_i = sign(α_i)`; the output is
/// `tanh(out · (0.75 h_1 + 0.25 h_2))` scaled to the steering limit, with
/// `k_1 = 1`, `k_2 = 1/2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CenteringGains {
    /// Weight `c_i` of the ray pair closest to `±pair_deg`.
    pub pair: f64,
    /// Weight `c_i` added on every other ray.
    pub uniform: f64,
    pub pair_deg: f64,
    pub output: f64,
}

/// Balances the distances seen by the two rays at ±46°. In a hallway this
/// difference is proportional to the lateral offset; the right ray also
/// clears the inner corner about 0.7 m before the corner box, which starts
/// the turn.
pub const CENTERING: CenteringGains = CenteringGains {
    pair: 1.0,
    uniform: 0.0,
    pair_deg: 46.0,
    output: 3.0,
};

/// Same structure with a stronger uniform term: reacts to every ray, so
/// missing returns and wide initial sets both move it much more.
pub const SENSITIVE: CenteringGains = CenteringGains {
    pair: 0.6,
    uniform: 0.1,
    pair_deg: 46.0,
    output: 3.0,
};

/// A `n → 2 → 1` tanh network.
pub fn centering_with(num_rays: usize, gains: CenteringGains) -> MLPController {
    let rays = RayConfig {
        count: num_rays,
        ..RayConfig::default()
    };
    let angles = rays.angles();
    let target = gains.pair_deg.to_radians();
    let nearest = angles
        .iter()
        .map(|a| (a.abs() - target).abs())
        .fold(f64::INFINITY, f64::min);
    let c: Vec<f64> = angles
        .iter()
        .map(|a| {
            let s = if *a > 0.0 {
                1.0
            } else if *a < 0.0 {
                -1.0
            } else {
                0.0
            };
            let pair = if ((a.abs() - target).abs() - nearest).abs() < 1e-12 {
                gains.pair
            } else {
                0.0
            };
            s * (pair + gains.uniform)
        })
        .collect();
    let mut w1 = c.clone();
    w1.extend(c.iter().map(|v| 0.5 * v));
    let layers = vec![
        Layer {
            rows: 2,
            cols: num_rays,
            weights: w1,
            bias: vec![0.0, 0.0],
            activation: Activation::Tanh,
        },
        Layer {
            rows: 1,
            cols: 2,
            weights: vec![0.75 * gains.output, 0.25 * gains.output],
            bias: vec![0.0],
            activation: Activation::Tanh,
        },
    ];
    MLPController::new(num_rays, layers).expect("fixture is well formed")
}

pub fn centering_controller(num_rays: usize) -> MLPController {
    centering_with(num_rays, CENTERING)
}

pub fn sensitive_controller(num_rays: usize) -> MLPController {
    centering_with(num_rays, SENSITIVE)
}

/// All weights zero: always steers straight.
pub fn zero_controller(num_rays: usize) -> MLPController {
    constant_controller(num_rays, 0.0)
}

/// Ignores the scan; steers `tanh(bias) · 15°`.
pub fn constant_controller(num_rays: usize, bias: f64) -> MLPController {
    MLPController::new(
        num_rays,
        vec![Layer {
            rows: 1,
            cols: num_rays,
            weights: vec![0.0; num_rays],
            bias: vec![bias],
            activation: Activation::Tanh,
        }],
    )
    .expect("fixture is well formed")
}

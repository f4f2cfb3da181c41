//! Simulated 2D LiDAR: raycast oracle, closed-form wall model, set-valued
//! scan enclosures and fault injection.
//!
//! In a leg's local frame a ray with relative angle `φ = θ_local + α`
//! (positive to the left) hits exactly one of five walls, decided by where
//! `φ` falls among the corner angles:
//!
//! ```text
//! (-π, θ_rb]        back wall (outer wall behind the leg)
//! (θ_rb, θ_r]       right wall (inner block)
//! (θ_r, -π/2]       bottom wall (inner block, only inside the corner box)
//! (max(θ_r,-π/2), θ_l]  top wall (outer wall of the turn)
//! (θ_l, θ_lb]       left wall (outer wall)
//! (θ_lb, π]         back wall
//! ```
//!
//! The distance is `d / cos(φ - n)` for the wall's perpendicular distance
//! `d` and normal direction `n`. This agrees with raycasting whenever
//! `S - 2w ≥ max_range`; for shorter tracks the far walls of the adjacent
//! hallways come within range and only the raycast is exact.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::dynamics::{CarState, StateBox};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::track::{localize, normalize_angle, Leg, LocalPose, Point, Region, TrackConfig, WallSegment};

/// Ray count of the physical scanner.
pub const FULL_SCAN_RAYS: usize = 1081;
/// Half field of view of the physical scanner, degrees.
pub const FULL_SCAN_HALF_FOV_DEG: f64 = 135.0;
/// Distances below this are reported as this value.
pub const MIN_DISTANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayConfig {
    pub count: usize,
    pub max_range: f64,
    /// Rays are spread evenly over `[-half_fov_deg, half_fov_deg]`.
    pub half_fov_deg: f64,
}

impl Default for RayConfig {
    fn default() -> Self {
        RayConfig {
            count: 21,
            max_range: 5.0,
            half_fov_deg: 115.0,
        }
    }
}

impl RayConfig {
    pub fn new(count: usize) -> Result<Self> {
        let cfg = RayConfig {
            count,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 3 || self.count.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "ray count must be odd and at least 3, got {}",
                self.count
            )));
        }
        if !(self.max_range.is_finite() && self.max_range > MIN_DISTANCE) {
            return Err(Error::Config(format!("invalid max_range {}", self.max_range)));
        }
        if !(self.half_fov_deg > 0.0 && self.half_fov_deg < 180.0) {
            return Err(Error::Config(format!(
                "half_fov_deg must lie in (0, 180), got {}",
                self.half_fov_deg
            )));
        }
        Ok(())
    }

    /// Ray angles relative to the heading, in radians, strictly increasing
    /// and symmetric about zero.
    pub fn angles(&self) -> Vec<f64> {
        let half = self.half_fov_deg.to_radians();
        let n = self.count;
        let mid = (n / 2) as isize;
        (0..n)
            .map(|i| {
                let k = i as isize - mid;
                half * k as f64 / mid as f64
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarScan {
    pub distances: Vec<f64>,
    pub fault_mask: Vec<bool>,
}

impl LidarScan {
    fn clean(distances: Vec<f64>) -> Self {
        let n = distances.len();
        LidarScan {
            distances,
            fault_mask: vec![false; n],
        }
    }

    pub fn fault_count(&self) -> usize {
        self.fault_mask.iter().filter(|f| **f).count()
    }
}

#[inline]
fn clamp_distance(d: f64, max_range: f64) -> f64 {
    d.clamp(MIN_DISTANCE, max_range)
}

/// Reference scan: nearest intersection of each ray with the wall segments.
pub fn raycast_scan(
    state: &CarState,
    rays: &RayConfig,
    segments: &[WallSegment],
    config: &TrackConfig,
) -> Result<LidarScan> {
    localize(state, config)?;
    let origin = Point::new(state.x, state.y);
    let distances = rays
        .angles()
        .iter()
        .map(|alpha| {
            let (s, c) = (state.theta + alpha).sin_cos();
            let hit = segments
                .iter()
                .filter_map(|seg| seg.ray_hit(origin, (c, s)))
                .fold(f64::INFINITY, f64::min);
            clamp_distance(hit, rays.max_range)
        })
        .collect();
    Ok(LidarScan::clean(distances))
}

/// The wall a ray is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    Right,
    Bottom,
    Top,
    Left,
    /// Outer wall behind the leg, seen by rays pointing backwards.
    Back,
    /// More than one wall is possible over the state set.
    Ambiguous,
}

/// Sector labels in angular order; see the module docs.
const SECTOR_WALLS: [Wall; 6] = [Wall::Back, Wall::Right, Wall::Bottom, Wall::Top, Wall::Left, Wall::Back];

fn wall_normal(wall: Wall) -> f64 {
    match wall {
        Wall::Right => -FRAC_PI_2,
        Wall::Bottom => -PI,
        Wall::Top => 0.0,
        Wall::Left => FRAC_PI_2,
        Wall::Back | Wall::Ambiguous => PI,
    }
}

fn wall_distance(pose: &LocalPose, wall: Wall) -> f64 {
    match wall {
        Wall::Right => pose.d_right,
        Wall::Bottom => pose.d_bottom,
        Wall::Top => pose.d_top,
        Wall::Left => pose.d_left,
        Wall::Back | Wall::Ambiguous => pose.d_back,
    }
}

/// Sector boundaries `[-π, θ_rb, θ_r, max(θ_r, -π/2), θ_l, θ_lb, π]`.
fn boundaries(pose: &LocalPose) -> [f64; 7] {
    [
        -PI,
        pose.theta_rear_r,
        pose.theta_r,
        pose.theta_r.max(-FRAC_PI_2),
        pose.theta_l,
        pose.theta_rear_l,
        PI,
    ]
}

/// Wall hit by a ray at normalized relative angle `phi`.
pub fn wall_for_angle(pose: &LocalPose, phi: f64) -> Wall {
    let b = boundaries(pose);
    (0..6)
        .find(|&j| phi > b[j] && phi <= b[j + 1])
        .map_or(Wall::Back, |j| SECTOR_WALLS[j])
}

/// Closed-form scan with one wall formula per ray.
pub fn closed_form_scan(pose: &LocalPose, rays: &RayConfig) -> LidarScan {
    let distances = rays
        .angles()
        .iter()
        .map(|alpha| closed_form_ray(pose, *alpha, rays.max_range).0)
        .collect();
    LidarScan::clean(distances)
}

/// Distance and wall for a single ray.
pub fn closed_form_ray(pose: &LocalPose, alpha: f64, max_range: f64) -> (f64, Wall) {
    let phi = normalize_angle(pose.theta_local + alpha);
    let wall = wall_for_angle(pose, phi);
    let c = (phi - wall_normal(wall)).cos();
    let d = if c > 0.0 {
        wall_distance(pose, wall) / c
    } else {
        f64::INFINITY
    };
    (clamp_distance(d, max_range), wall)
}

/// Enclosure of the scans over a set of states.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanEnclosure {
    pub intervals: Vec<Interval>,
    /// Per-ray forms over the state box's symbols, when it has any.
    pub forms: Option<Vec<AffineForm>>,
    pub walls: Vec<Wall>,
}

impl ScanEnclosure {
    pub fn contains(&self, scan: &LidarScan) -> bool {
        self.intervals.len() == scan.distances.len()
            && self
                .intervals
                .iter()
                .zip(&scan.distances)
                .all(|(iv, d)| iv.contains(*d))
    }
}

#[derive(Clone, Debug)]
pub struct ScanCase {
    pub scan: ScanEnclosure,
    /// The part of the input box for which `scan` is valid.
    pub states: StateBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnclosureSettings {
    /// Maximum number of joint ray/wall assignments before ambiguous rays
    /// are merged instead of split.
    pub max_cases: usize,
}

impl Default for EnclosureSettings {
    fn default() -> Self {
        EnclosureSettings { max_cases: 64 }
    }
}

/// Slack absorbing rounding in angle sums and the period shifts.
const ANGLE_SLACK: f64 = 1e-12;

/// `atan2` over a box in the closed lower half plane, with `y = 0` read as
/// `-0` so the result lies in `[-π, 0]`.
fn atan2_lower(y: Interval, x: Interval) -> Interval {
    let y = Interval::new(y.lo.min(-0.0), y.hi.min(-0.0));
    if y.hi == 0.0 && x.contains(0.0) {
        return Interval::new(-PI, 0.0);
    }
    bounded_atan2(y, x, -PI, 0.0)
}

/// As [`atan2_lower`] for the closed upper half plane, result in `[0, π]`.
fn atan2_upper(y: Interval, x: Interval) -> Interval {
    let y = Interval::new(y.lo.max(0.0), y.hi.max(0.0));
    if y.lo == 0.0 && x.contains(0.0) {
        return Interval::new(0.0, PI);
    }
    bounded_atan2(y, x, 0.0, PI)
}

fn bounded_atan2(y: Interval, x: Interval, min: f64, max: f64) -> Interval {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for yy in [y.lo, y.hi] {
        for xx in [x.lo, x.hi] {
            let t = yy.atan2(xx);
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    Interval::new((lo - ANGLE_SLACK).max(min), (hi + ANGLE_SLACK).min(max))
}

/// Local quantities of a state box relative to one leg.
struct LocalBox {
    u: AffineForm,
    a: AffineForm,
    theta: AffineForm,
    u_iv: Interval,
    a_iv: Interval,
    theta_iv: Interval,
    /// Global heading minus local heading.
    offset: f64,
    /// Interval bounds of the seven sector boundaries.
    bounds: [Interval; 7],
}

fn local_box(states: &StateBox, leg: Leg, config: &TrackConfig) -> Result<LocalBox> {
    let (w, s) = (config.w(), config.s());
    let (_, forms) = states.forms();
    let (u, a) = leg.to_local_affine(&forms[0], &forms[1], s);
    let (ub, ab) = leg.to_local_interval(states.bounds[0], states.bounds[1], s);
    let inter = |f: &AffineForm, b: Interval| f.range().intersect(&b).unwrap_or(b);
    let u_iv = inter(&u, ub);
    let a_iv = inter(&a, ab);
    if u_iv.hi < 0.0 || u_iv.lo > w || a_iv.hi < w || a_iv.lo > s {
        return Err(Error::Enclosure(format!(
            "state box (u = {u_iv}, a = {a_iv}) is outside leg {}",
            leg.0
        )));
    }
    // States outside the leg's corridor are not covered; clip to it.
    let u_iv = Interval::new(u_iv.lo.max(0.0), u_iv.hi.min(w));
    let a_iv = Interval::new(a_iv.lo.max(w), a_iv.hi.min(s));

    let mut offset = leg.forward_angle();
    let mut th = forms[3].add_const(-offset);
    let mut th_iv = inter(&th, states.bounds[3].add_scalar(-offset));
    if th_iv.width() >= PI {
        return Err(Error::Enclosure(format!("heading interval {th_iv} too wide")));
    }
    let shift = normalize_angle(th_iv.mid()) - th_iv.mid();
    let k = (shift / (2.0 * PI)).round();
    if k != 0.0 {
        th = th.add_const(2.0 * PI * k);
        th_iv = th_iv.add_scalar(2.0 * PI * k).inflate(ANGLE_SLACK);
        offset -= 2.0 * PI * k;
    }

    let wp = Interval::point(w);
    let sp = Interval::point(s);
    let lat_r = u_iv - wp;
    let rb = atan2_lower(lat_r, wp - a_iv);
    let r = atan2_lower(lat_r, sp - wp - a_iv);
    let l = atan2_upper(u_iv, sp - a_iv);
    let lb = atan2_upper(u_iv, -a_iv);
    let m = Interval::new(r.lo.max(-FRAC_PI_2), r.hi.max(-FRAC_PI_2));
    Ok(LocalBox {
        u,
        a,
        theta: th,
        u_iv,
        a_iv,
        theta_iv: th_iv,
        offset,
        bounds: [Interval::point(-PI), rb, r, m, l, lb, Interval::point(PI)],
    })
}

/// Unwrapped sector index: sector `k mod 6` shifted by `2π (k div 6)`.
fn sector_of(k: i64) -> (usize, f64) {
    let j = k.rem_euclid(6) as usize;
    let m = k.div_euclid(6) as f64;
    (j, 2.0 * PI * m)
}

/// Heading range for which a ray at `alpha` can fall in sector `k`.
fn sector_heading(lb: &LocalBox, alpha: f64, k: i64) -> Option<Interval> {
    let (j, off) = sector_of(k);
    let lo = lb.bounds[j].lo + off - alpha - ANGLE_SLACK;
    let hi = lb.bounds[j + 1].hi + off - alpha + ANGLE_SLACK;
    // The bottom sector (θ_r, max(θ_r, -π/2)] is empty unless θ_r < -π/2.
    let empty = if j == 2 {
        lb.bounds[2].lo >= -FRAC_PI_2
    } else {
        lb.bounds[j].lo >= lb.bounds[j + 1].hi
    };
    if empty {
        return None;
    }
    Some(Interval::new(lo, hi))
}

/// Candidate unwrapped sectors for a ray under heading range `theta`.
fn candidates(lb: &LocalBox, theta: Interval, alpha: f64) -> Vec<(i64, Interval)> {
    let phi = theta.add_scalar(alpha);
    let m0 = ((phi.lo + PI) / (2.0 * PI)).floor() as i64 - 1;
    let mut out = Vec::new();
    for m in m0..=m0 + 2 {
        for j in 0..6 {
            let k = 6 * m + j as i64;
            if let Some(h) = sector_heading(lb, alpha, k) {
                if let Some(t) = theta.intersect(&h) {
                    out.push((k, t));
                }
            }
        }
    }
    out
}

fn ray_enclosure(
    lb: &LocalBox,
    config: &TrackConfig,
    max_range: f64,
    alpha: f64,
    wall: Wall,
    theta: Interval,
) -> (Interval, AffineForm) {
    let (w, s) = (config.w(), config.s());
    let n = lb.u.n_symbols();
    let (d, d_iv) = match wall {
        Wall::Right => (lb.u.neg().add_const(w), Interval::point(w) - lb.u_iv),
        Wall::Bottom => (lb.a.add_const(-(s - w)), lb.a_iv.add_scalar(-(s - w))),
        Wall::Top => (lb.a.neg().add_const(s), Interval::point(s) - lb.a_iv),
        Wall::Left => (lb.u.clone(), lb.u_iv),
        Wall::Back | Wall::Ambiguous => (lb.a.clone(), lb.a_iv),
    };
    let d_iv = d.range().intersect(&d_iv).unwrap_or(d_iv);
    let arg_iv = theta.add_scalar(alpha - wall_normal(wall));
    let cos_iv = arg_iv.cos();
    let floor = d_iv.lo.max(MIN_DISTANCE).min(max_range);
    if cos_iv.lo <= 1e-9 {
        let iv = Interval::new(floor, max_range);
        return (iv, AffineForm::from_interval(iv, n));
    }
    let raw_iv = d_iv.div(&cos_iv).unwrap_or(Interval::new(floor, f64::INFINITY));
    let iv = Interval::new(
        raw_iv.lo.clamp(MIN_DISTANCE, max_range),
        raw_iv.hi.clamp(MIN_DISTANCE, max_range),
    );
    let arg = lb.theta.add_const(alpha - wall_normal(wall));
    let form = arg
        .cos(Some(arg_iv))
        .recip(Some(cos_iv))
        .map(|r| d.mul(&r).min_const(max_range).max_const(MIN_DISTANCE));
    match form {
        Some(f) => {
            let iv = f.range().intersect(&iv).unwrap_or(iv);
            (iv, f)
        }
        None => (iv, AffineForm::from_interval(iv, n)),
    }
}

/// Splits `states` into cases with a consistent assignment of rays to walls
/// and encloses the scan over each case.
///
/// `states` must lie in `leg`'s part of the corridor. The returned cases
/// cover every state in the input: each state lies in the box of the case
/// matching its own ray/wall assignment, and that case's enclosure contains
/// its scan.
pub fn scan_enclosure(
    states: &StateBox,
    leg: Leg,
    rays: &RayConfig,
    config: &TrackConfig,
    settings: &EnclosureSettings,
) -> Result<Vec<ScanCase>> {
    let lb = local_box(states, leg, config)?;
    let alphas = rays.angles();

    // Depth-first enumeration of monotone sector sequences.
    let mut leaves: Vec<(Vec<i64>, Interval)> = Vec::new();
    let mut stack: Vec<(usize, Vec<i64>, Interval)> = vec![(0, Vec::new(), lb.theta_iv)];
    let mut overflow = false;
    while let Some((i, seq, theta)) = stack.pop() {
        if i == alphas.len() {
            leaves.push((seq, theta));
            if leaves.len() > settings.max_cases.max(1) {
                overflow = true;
                break;
            }
            continue;
        }
        let last = seq.last().copied().unwrap_or(i64::MIN);
        let mut cands = candidates(&lb, theta, alphas[i]);
        cands.retain(|(k, _)| *k >= last);
        // Reverse so the lowest sector is explored first.
        for (k, t) in cands.into_iter().rev() {
            let mut s = seq.clone();
            s.push(k);
            stack.push((i + 1, s, t));
        }
    }
    if leaves.is_empty() {
        return Err(Error::Enclosure("no consistent ray/wall assignment".into()));
    }
    let symbolic = states.symbolic.is_some();

    let make_case = |walls: Vec<Wall>, parts: Vec<(Interval, AffineForm)>, theta: Interval| {
        let (intervals, forms): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        let mut bounds = states.bounds;
        let global = theta.add_scalar(lb.offset).inflate(ANGLE_SLACK);
        bounds[3] = bounds[3].intersect(&global).unwrap_or(bounds[3]);
        ScanCase {
            scan: ScanEnclosure {
                intervals,
                forms: symbolic.then_some(forms),
                walls,
            },
            states: StateBox {
                bounds,
                symbolic: states.symbolic.clone(),
            },
        }
    };

    if !overflow {
        return Ok(leaves
            .into_iter()
            .map(|(seq, theta)| {
                let walls: Vec<Wall> = seq.iter().map(|k| SECTOR_WALLS[sector_of(*k).0]).collect();
                let parts = walls
                    .iter()
                    .zip(&alphas)
                    .map(|(wall, alpha)| ray_enclosure(&lb, config, rays.max_range, *alpha, *wall, theta))
                    .collect();
                make_case(walls, parts, theta)
            })
            .collect());
    }

    // Too many cases: one case with every candidate wall merged per ray.
    let mut walls = Vec::with_capacity(alphas.len());
    let mut parts = Vec::with_capacity(alphas.len());
    for alpha in &alphas {
        let cands = candidates(&lb, lb.theta_iv, *alpha);
        let mut acc: Option<(Interval, AffineForm)> = None;
        let mut label = None;
        for (k, t) in &cands {
            let wall = SECTOR_WALLS[sector_of(*k).0];
            label = match label {
                None => Some(wall),
                Some(l) if l == wall => Some(l),
                _ => Some(Wall::Ambiguous),
            };
            let (iv, f) = ray_enclosure(&lb, config, rays.max_range, *alpha, wall, *t);
            acc = Some(match acc {
                None => (iv, f),
                Some((aiv, af)) => (aiv.hull(&iv), af.join(&f)),
            });
        }
        let (iv, f) = acc.ok_or_else(|| Error::Enclosure("ray without candidate wall".into()))?;
        walls.push(label.unwrap_or(Wall::Ambiguous));
        parts.push((iv, f));
    }
    Ok(vec![make_case(walls, parts, lb.theta_iv)])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub num_faulty_rays: usize,
    /// Faults are active inside the corner box and within this distance
    /// before it.
    pub approach_distance: f64,
    /// Candidate rays have relative angles inside this window, degrees.
    pub window_deg: [f64; 2],
    /// Reading reported by a faulted ray; `None` means the maximum range.
    pub fault_distance: Option<f64>,
    pub seed: u64,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            num_faulty_rays: 5,
            approach_distance: 2.0,
            window_deg: [-115.0, 0.0],
            fault_distance: None,
            seed: 0,
        }
    }
}

impl FaultConfig {
    pub fn validate(&self, rays: &RayConfig) -> Result<()> {
        let n = self.candidates(rays).len();
        if self.num_faulty_rays > n {
            return Err(Error::Config(format!(
                "{} faulty rays requested but the window holds only {n} rays",
                self.num_faulty_rays
            )));
        }
        if !(self.approach_distance >= 0.0) {
            return Err(Error::Config("approach_distance must be non-negative".into()));
        }
        Ok(())
    }

    /// Indices of rays eligible for faults.
    pub fn candidates(&self, rays: &RayConfig) -> Vec<usize> {
        let (lo, hi) = (self.window_deg[0].to_radians(), self.window_deg[1].to_radians());
        rays.angles()
            .iter()
            .enumerate()
            .filter(|(_, a)| **a >= lo - 1e-12 && **a <= hi + 1e-12)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn triggered(&self, pose: &LocalPose, config: &TrackConfig) -> bool {
        pose.region == Region::Region2 || pose.a >= config.s() - config.w() - self.approach_distance
    }
}

/// Replaces randomly chosen rays in the fault window by the fault reading.
///
/// The choice depends only on `(faults.seed, step)`.
pub fn apply_faults(
    scan: &LidarScan,
    pose: &LocalPose,
    faults: &FaultConfig,
    rays: &RayConfig,
    config: &TrackConfig,
    step: u64,
) -> LidarScan {
    let mut out = scan.clone();
    if faults.num_faulty_rays == 0 || !faults.triggered(pose, config) {
        return out;
    }
    let cands = faults.candidates(rays);
    let k = faults.num_faulty_rays.min(cands.len());
    let mut rng = ChaCha8Rng::seed_from_u64(faults.seed);
    rng.set_stream(step);
    let value = faults.fault_distance.unwrap_or(rays.max_range);
    for idx in sample(&mut rng, cands.len(), k).into_iter() {
        let r = cands[idx];
        out.distances[r] = value;
        out.fault_mask[r] = true;
    }
    out
}

/// Pose of a state relative to a given leg plus its exact scan.
pub fn scan_in_leg(state: &CarState, leg: Leg, rays: &RayConfig, config: &TrackConfig) -> LidarScan {
    let pose = crate::track::localize_in(leg, state, config);
    closed_form_scan(&pose, rays)
}

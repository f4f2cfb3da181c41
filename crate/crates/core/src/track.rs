//! Square hallway loop, per-leg local frames and wall clearance.
//!
//! The track is the region between the outer square `[0, S]^2` and the inner
//! block `(w, S - w)^2`. The car drives clockwise, so every turn is a right
//! turn. The loop is cut into four legs; leg `k` owns the hallway strip from
//! the exit of the previous corner box up to and including the corner box of
//! its own turn.
//!
//! Each leg has a local frame `(u, a)`: `u` is the lateral offset measured
//! rightward from the outer wall (`0 ≤ u ≤ w` inside the hallway) and `a` is
//! the forward coordinate, zero at the outer wall behind the leg and `S` at
//! the outer wall of the upcoming turn. In that frame every leg looks like
//! leg 0 (the west hallway, heading north).

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::dynamics::CarState;
use crate::error::{Error, Result};
use crate::interval::Interval;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackConfig {
    pub hallway_width: f64,
    pub outer_side_length: f64,
    #[serde(default = "default_margin")]
    pub safety_margin: f64,
}

fn default_margin() -> f64 {
    0.3
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            hallway_width: 1.5,
            outer_side_length: 10.0,
            safety_margin: 0.3,
        }
    }
}

impl TrackConfig {
    pub fn new(hallway_width: f64, outer_side_length: f64) -> Result<Self> {
        let cfg = TrackConfig {
            hallway_width,
            outer_side_length,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.hallway_width;
        let s = self.outer_side_length;
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::Config(format!("hallway_width must be positive, got {w}")));
        }
        if !(s.is_finite() && s > 2.0 * w) {
            return Err(Error::Config(format!(
                "outer_side_length {s} must exceed twice the hallway width {w}"
            )));
        }
        let m = self.safety_margin;
        if !(m.is_finite() && m >= 0.0 && m < w / 2.0) {
            return Err(Error::Config(format!("safety_margin {m} must lie in [0, {})", w / 2.0)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrackConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.hallway_width
    }

    #[inline]
    pub fn s(&self) -> f64 {
        self.outer_side_length
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// An axis-aligned wall.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub a: Point,
    pub b: Point,
}

impl WallSegment {
    fn new(a: Point, b: Point) -> Self {
        debug_assert!(a != b && (a.x == b.x || a.y == b.y));
        WallSegment { a, b }
    }

    /// Distance along the unit ray `origin + t * dir` to this segment, if hit at `t > 0`.
    pub fn ray_hit(&self, origin: Point, dir: (f64, f64)) -> Option<f64> {
        if self.a.y == self.b.y {
            // Horizontal wall.
            if dir.1 == 0.0 {
                return None;
            }
            let t = (self.a.y - origin.y) / dir.1;
            let x = origin.x + t * dir.0;
            let (lo, hi) = (self.a.x.min(self.b.x), self.a.x.max(self.b.x));
            (t > 0.0 && x >= lo && x <= hi).then_some(t)
        } else {
            if dir.0 == 0.0 {
                return None;
            }
            let t = (self.a.x - origin.x) / dir.0;
            let y = origin.y + t * dir.1;
            let (lo, hi) = (self.a.y.min(self.b.y), self.a.y.max(self.b.y));
            (t > 0.0 && y >= lo && y <= hi).then_some(t)
        }
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        let (x0, x1) = (self.a.x.min(self.b.x), self.a.x.max(self.b.x));
        let (y0, y1) = (self.a.y.min(self.b.y), self.a.y.max(self.b.y));
        let dx = (x0 - p.x).max(0.0).max(p.x - x1);
        let dy = (y0 - p.y).max(0.0).max(p.y - y1);
        dx.hypot(dy)
    }
}

/// The four outer walls followed by the four walls of the inner block.
pub fn wall_segments(config: &TrackConfig) -> Result<Vec<WallSegment>> {
    config.validate()?;
    let s = config.s();
    let w = config.w();
    let square = |lo: f64, hi: f64| {
        let c = [
            Point::new(lo, lo),
            Point::new(hi, lo),
            Point::new(hi, hi),
            Point::new(lo, hi),
        ];
        (0..4).map(move |i| WallSegment::new(c[i], c[(i + 1) % 4]))
    };
    Ok(square(0.0, s).chain(square(w, s - w)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Second half of a hallway, approaching the next turn.
    Region1,
    /// Inside the corner box of the upcoming turn.
    Region2,
    /// First half of a hallway, right after the previous turn.
    Region3,
}

/// One of the four hallways of the loop, indexed in driving order starting
/// from the west hallway.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Leg(pub u8);

impl Leg {
    pub const ALL: [Leg; 4] = [Leg(0), Leg(1), Leg(2), Leg(3)];

    pub fn next(self) -> Leg {
        Leg((self.0 + 1) % 4)
    }

    /// Global heading of the leg's forward direction.
    pub fn forward_angle(self) -> f64 {
        match self.0 {
            0 => FRAC_PI_2,
            1 => 0.0,
            2 => -FRAC_PI_2,
            _ => PI,
        }
    }

    /// Global position to local `(u, a)`.
    pub fn to_local(self, x: f64, y: f64, s: f64) -> (f64, f64) {
        match self.0 {
            0 => (x, y),
            1 => (s - y, x),
            2 => (s - x, s - y),
            _ => (y, s - x),
        }
    }

    /// Local `(u, a)` back to global `(x, y)`.
    pub fn to_global(self, u: f64, a: f64, s: f64) -> (f64, f64) {
        match self.0 {
            0 => (u, a),
            1 => (a, s - u),
            2 => (s - u, s - a),
            _ => (s - a, u),
        }
    }

    pub fn to_local_interval(self, x: Interval, y: Interval, s: f64) -> (Interval, Interval) {
        let sp = Interval::point(s);
        match self.0 {
            0 => (x, y),
            1 => (sp - y, x),
            2 => (sp - x, sp - y),
            _ => (y, sp - x),
        }
    }

    pub fn to_local_affine(self, x: &AffineForm, y: &AffineForm, s: f64) -> (AffineForm, AffineForm) {
        let flip = |f: &AffineForm| f.neg().add_const(s);
        match self.0 {
            0 => (x.clone(), y.clone()),
            1 => (flip(y), x.clone()),
            2 => (flip(x), flip(y)),
            _ => (y.clone(), flip(x)),
        }
    }

    /// Whether a local position belongs to this leg's domain.
    pub fn owns_local(u: f64, a: f64, config: &TrackConfig) -> bool {
        (0.0..=config.w()).contains(&u) && a > config.w() && a <= config.s()
    }

    /// The leg whose domain contains the global position, if any.
    pub fn containing(x: f64, y: f64, config: &TrackConfig) -> Option<Leg> {
        Leg::ALL.into_iter().find(|leg| {
            let (u, a) = leg.to_local(x, y, config.s());
            Leg::owns_local(u, a, config)
        })
    }
}

/// Folds an angle into `(-pi, pi]`.
pub fn normalize_angle(mut t: f64) -> f64 {
    if t.is_finite() {
        t %= 2.0 * PI;
        if t > PI {
            t -= 2.0 * PI;
        } else if t <= -PI {
            t += 2.0 * PI;
        }
    }
    t
}

/// A pose expressed relative to the upcoming turn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPose {
    pub leg: Leg,
    /// Lateral offset from the outer wall.
    pub u: f64,
    /// Forward coordinate along the leg.
    pub a: f64,
    pub theta_local: f64,
    pub d_top: f64,
    /// Signed forward offset past the inner wall of the crossing hallway;
    /// negative before the corner box.
    pub d_bottom: f64,
    pub d_left: f64,
    pub d_right: f64,
    /// Distance back to the outer wall behind the leg.
    pub d_back: f64,
    /// Relative angle to the outer corner of the upcoming turn.
    pub theta_l: f64,
    /// Relative angle to the inner corner of the upcoming turn.
    pub theta_r: f64,
    /// Relative angle to the inner corner of the previous turn.
    pub theta_rear_r: f64,
    /// Relative angle to the outer corner of the previous turn.
    pub theta_rear_l: f64,
    pub region: Region,
}

/// Relative angles to the four corners for a local position `(u, a)`, in
/// the order rear-right, right, left, rear-left.
pub(crate) fn corner_angles(u: f64, a: f64, w: f64, s: f64) -> [f64; 4] {
    // On the line u = w the rightward corners are read from the corridor
    // side, giving -π rather than π.
    let lat = if u == w { -0.0 } else { u - w };
    [lat.atan2(w - a), lat.atan2(s - w - a), u.atan2(s - a), u.atan2(-a)]
}

pub fn region_of(a: f64, config: &TrackConfig) -> Region {
    if a >= config.s() - config.w() {
        Region::Region2
    } else if a < 0.5 * config.s() {
        Region::Region3
    } else {
        Region::Region1
    }
}

pub fn localize(state: &CarState, config: &TrackConfig) -> Result<LocalPose> {
    let leg = Leg::containing(state.x, state.y, config).ok_or(Error::OutOfTrack { x: state.x, y: state.y })?;
    Ok(localize_in(leg, state, config))
}

/// Local pose relative to a given leg, without checking ownership.
pub fn localize_in(leg: Leg, state: &CarState, config: &TrackConfig) -> LocalPose {
    let (w, s) = (config.w(), config.s());
    let (u, a) = leg.to_local(state.x, state.y, s);
    let theta_local = normalize_angle(state.theta - leg.forward_angle());
    let [rr, r, l, rl] = corner_angles(u, a, w, s);
    LocalPose {
        leg,
        u,
        a,
        theta_local,
        d_top: s - a,
        d_bottom: a - (s - w),
        d_left: u,
        d_right: w - u,
        d_back: a,
        theta_l: l,
        theta_r: r,
        theta_rear_r: rr,
        theta_rear_l: rl,
        region: region_of(a, config),
    }
}

/// Signed distance from a point to the nearest wall: positive inside the
/// corridor, negative outside.
pub fn clearance(x: f64, y: f64, config: &TrackConfig) -> f64 {
    let (w, s) = (config.w(), config.s());
    let inside_outer = (0.0..=s).contains(&x) && (0.0..=s).contains(&y);
    if !inside_outer {
        let dx = (-x).max(x - s).max(0.0);
        let dy = (-y).max(y - s).max(0.0);
        return -dx.hypot(dy);
    }
    let (lo, hi) = (w, s - w);
    let inside_inner = x > lo && x < hi && y > lo && y < hi;
    if inside_inner {
        return -(x - lo).min(hi - x).min(y - lo).min(hi - y);
    }
    let outer = x.min(s - x).min(y).min(s - y);
    let gx = (lo - x).max(x - hi).max(0.0);
    let gy = (lo - y).max(y - hi).max(0.0);
    outer.min(gx.hypot(gy))
}

pub fn state_clearance(state: &CarState, config: &TrackConfig) -> f64 {
    clearance(state.x, state.y, config)
}

/// A lower bound on `clearance` over the box `x × y`.
pub fn box_clearance_lower_bound(x: &Interval, y: &Interval, config: &TrackConfig) -> f64 {
    let (w, s) = (config.w(), config.s());
    let (lo, hi) = (w, s - w);
    // Terms valid for the part of the box inside the outer square.
    let mut bound = x.lo.min(s - x.hi).min(y.lo).min(s - y.hi);
    let ex = (-x.lo).max(x.hi - s).max(0.0);
    let ey = (-y.lo).max(y.hi - s).max(0.0);
    if ex > 0.0 || ey > 0.0 {
        bound = bound.min(-ex.hypot(ey));
    }
    let meets_inner = x.hi > lo && x.lo < hi && y.hi > lo && y.lo < hi;
    if meets_inner {
        let depth = |iv: &Interval| {
            let c = 0.5 * s;
            let t = if iv.contains(c) {
                c
            } else if iv.hi < c {
                iv.hi
            } else {
                iv.lo
            };
            (t - lo).min(hi - t)
        };
        bound = bound.min(-depth(x).min(depth(y)));
    } else {
        let gx = (lo - x.hi).max(x.lo - hi).max(0.0);
        let gy = (lo - y.hi).max(y.lo - hi).max(0.0);
        bound = bound.min(gx.hypot(gy));
    }
    // Absorb rounding in the subtractions and the hypot.
    bound - 4.0 * f64::EPSILON * (s + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> TrackConfig {
        TrackConfig::default()
    }

    #[test]
    fn segments_of_default_track() {
        let segs = wall_segments(&TrackConfig::new(1.5, 10.0).unwrap()).unwrap();
        assert_eq!(segs.len(), 8);
        let outer: Vec<_> = segs[..4].iter().map(|s| (s.a.x, s.a.y)).collect();
        assert_eq!(outer, vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        let inner: Vec<_> = segs[4..].iter().map(|s| (s.a.x, s.a.y)).collect();
        assert_eq!(inner, vec![(1.5, 1.5), (8.5, 1.5), (8.5, 8.5), (1.5, 8.5)]);
        // Each loop closes.
        for lp in [&segs[..4], &segs[4..]] {
            for i in 0..4 {
                assert_eq!(lp[i].b, lp[(i + 1) % 4].a);
            }
        }
    }

    #[test]
    fn narrow_hallway_insets() {
        let segs = wall_segments(&TrackConfig::new(0.75, 10.0).unwrap()).unwrap();
        assert_eq!(segs[4].a, Point::new(0.75, 0.75));
        assert_eq!(segs[6].a, Point::new(9.25, 9.25));
    }

    #[test]
    fn degenerate_track_rejected() {
        assert!(TrackConfig::new(1.5, 3.0).is_err());
        let bad = TrackConfig {
            safety_margin: 0.8,
            ..Default::default()
        };
        assert!(wall_segments(&bad).is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let ok = TrackConfig::from_json(r#"{"hallway_width":1.5,"outer_side_length":10,"safety_margin":0.3}"#);
        assert!(ok.is_ok());
        let bad = TrackConfig::from_json(r#"{"hallway_width":1.5,"outer_side_length":10,"lanes":2}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn mid_hallway_pose() {
        let st = CarState::new(0.75, 5.0, 1.0, FRAC_PI_2);
        let p = localize(&st, &cfg()).unwrap();
        assert_eq!(p.leg, Leg(0));
        assert_eq!(p.theta_local, 0.0);
        assert_eq!(p.d_left, 0.75);
        assert_eq!(p.d_right, 0.75);
        assert!(matches!(p.region, Region::Region1 | Region::Region3));
        assert!(p.theta_r < p.theta_l);
    }

    #[test]
    fn inner_corner_angle_ahead() {
        // Hallway centre, inner corner 3 m ahead and 0.75 m to the right.
        let st = CarState::new(0.75, 8.5 - 3.0, 0.0, FRAC_PI_2);
        let p = localize(&st, &cfg()).unwrap();
        let expected = -(0.75f64).atan2(3.0);
        assert!((p.theta_r - expected).abs() < 1e-12);
        assert!((p.theta_r + 0.2450).abs() < 1e-4);
    }

    #[test]
    fn corner_box_angles() {
        let st = CarState::new(0.6, 9.3, 2.0, FRAC_PI_2);
        let p = localize(&st, &cfg()).unwrap();
        assert_eq!(p.region, Region::Region2);
        assert!(p.theta_r > -PI && p.theta_r < -FRAC_PI_2);
        assert!(p.theta_l > -FRAC_PI_2);
        assert!(p.d_bottom >= 0.0);
    }

    #[test]
    fn legs_partition_the_corridor() {
        let c = cfg();
        for (x, y, leg) in [
            (0.75, 9.0, 0),
            (0.75, 1.0, 3),
            (1.5, 9.0, 0),
            (1.6, 9.0, 1),
            (9.0, 9.5, 1),
            (9.0, 1.0, 2),
            (5.0, 0.7, 3),
        ] {
            assert_eq!(Leg::containing(x, y, &c), Some(Leg(leg)), "({x}, {y})");
        }
        assert_eq!(Leg::containing(5.0, 5.0, &c), None);
        assert!(localize(&CarState::new(5.0, 5.0, 0.0, 0.0), &c).is_err());
    }

    #[test]
    fn clearance_examples() {
        let c = cfg();
        assert_eq!(clearance(0.75, 5.0, &c), 0.75);
        assert_eq!(clearance(0.0, 5.0, &c), 0.0);
        let d = clearance(0.2, 5.0, &c);
        assert!((d - 0.2).abs() < 1e-15 && d < c.safety_margin);
        assert!(clearance(-0.1, 5.0, &c) < 0.0);
        assert!(clearance(3.0, 5.0, &c) < 0.0);
        // Near the inner corner the distance is Euclidean.
        let d = clearance(1.2, 1.2, &c);
        assert!((d - 0.3f64.hypot(0.3)).abs() < 1e-15);
    }

    fn random_in_corridor(c: &TrackConfig, t0: f64, t1: f64, leg: u8) -> (f64, f64) {
        let u = t0 * c.w();
        let a = c.w() + 1e-9 + t1 * (c.s() - c.w() - 1e-9);
        Leg(leg).to_global(u, a, c.s())
    }

    proptest! {
        #[test]
        fn clearance_is_lipschitz(x0 in -1.0f64..11.0, y0 in -1.0f64..11.0, x1 in -1.0f64..11.0, y1 in -1.0f64..11.0) {
            let c = cfg();
            let d = (clearance(x0, y0, &c) - clearance(x1, y1, &c)).abs();
            prop_assert!(d <= (x0 - x1).hypot(y0 - y1) + 1e-12);
        }

        #[test]
        fn clearance_matches_segment_distance(t0 in 0.0f64..1.0, t1 in 0.0f64..1.0, leg in 0u8..4) {
            let c = cfg();
            let (x, y) = random_in_corridor(&c, t0, t1, leg);
            let segs = wall_segments(&c).unwrap();
            let best = segs.iter().map(|s| s.distance_to(Point::new(x, y))).fold(f64::INFINITY, f64::min);
            prop_assert!((clearance(x, y, &c) - best).abs() < 1e-12);
        }

        #[test]
        fn box_bound_is_below_samples(x in -0.5f64..10.5, y in -0.5f64..10.5, wx in 0.0f64..0.6, wy in 0.0f64..0.6, s0 in 0.0f64..1.0, s1 in 0.0f64..1.0) {
            let c = cfg();
            let bx = Interval::new(x, x + wx);
            let by = Interval::new(y, y + wy);
            let lb = box_clearance_lower_bound(&bx, &by, &c);
            prop_assert!(lb <= clearance(x + s0 * wx, y + s1 * wy, &c));
            for (px, py) in [(bx.lo, by.lo), (bx.hi, by.lo), (bx.lo, by.hi), (bx.hi, by.hi)] {
                prop_assert!(lb <= clearance(px, py, &c));
            }
        }

        #[test]
        fn local_frame_distances_match_walls(t0 in 0.01f64..0.99, t1 in 0.0f64..1.0, leg in 0u8..4) {
            let c = cfg();
            let (x, y) = random_in_corridor(&c, t0, t1, leg);
            let st = CarState::new(x, y, 1.0, 0.3);
            let p = localize(&st, &c).unwrap();
            prop_assert_eq!(p.leg, Leg(leg));
            let segs = wall_segments(&c).unwrap();
            let sz = c.s();
            // Picks the wall whose local endpoints satisfy `pick`, then
            // intersects the line carrying it with the global ray.
            let line_param = |pick: &dyn Fn(f64, f64, f64, f64) -> bool, ang: f64| -> f64 {
                let seg = segs.iter().find(|sg| {
                    let (u0, a0) = p.leg.to_local(sg.a.x, sg.a.y, sz);
                    let (u1, a1) = p.leg.to_local(sg.b.x, sg.b.y, sz);
                    pick(u0, a0, u1, a1)
                }).unwrap();
                let (dx, dy) = (ang.cos(), ang.sin());
                if seg.a.y == seg.b.y { (seg.a.y - y) / dy } else { (seg.a.x - x) / dx }
            };
            let eq = |p: f64, q: f64| (p - q).abs() < 1e-12;
            let fwd = p.leg.forward_angle();
            let top = line_param(&|_, a0, _, a1| eq(a0, sz) && eq(a1, sz), fwd);
            let left = line_param(&|u0, _, u1, _| eq(u0, 0.0) && eq(u1, 0.0), fwd + FRAC_PI_2);
            let right = line_param(&|u0, _, u1, _| eq(u0, c.w()) && eq(u1, c.w()), fwd - FRAC_PI_2);
            let bottom = line_param(&|u0, a0, u1, a1| eq(a0, sz - c.w()) && eq(a1, sz - c.w()) && u0 >= c.w() - 1e-12 && u1 >= c.w() - 1e-12, fwd + PI);
            prop_assert!((top - p.d_top).abs() < 1e-9);
            prop_assert!((left - p.d_left).abs() < 1e-9);
            prop_assert!((right - p.d_right).abs() < 1e-9);
            prop_assert!((bottom - p.d_bottom).abs() < 1e-9);
            if p.region == Region::Region2 {
                prop_assert!(p.theta_r < -FRAC_PI_2 + 1e-12 && -FRAC_PI_2 < p.theta_l);
                prop_assert!(p.d_bottom >= 0.0);
            }
        }
    }
}

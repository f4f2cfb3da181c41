//! Kinematic bicycle model with zero slip angle.
//!
//! ```text
//! x' = v cos θ
//! y' = v sin θ
//! v' = -c_a v + c_a c_m (u - c_h)
//! θ' = v tan(δ) / (l_f + l_r)
//! ```
//!
//! Simulation uses fixed-step RK4. Set propagation uses a Taylor expansion in
//! time whose coefficients are generated by the recurrences in
//! [`taylor_coefficients`]; the same code runs on points, intervals and affine
//! forms through the [`Scalar`] trait. The truncation error is bounded by
//! evaluating the next coefficient over an a-priori enclosure of the whole
//! step found by Picard iteration.

use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::error::{Error, Result};
use crate::interval::Interval;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

impl CarState {
    pub fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        CarState { x, y, v, theta }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.v, self.theta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CarState::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub c_a: f64,
    pub c_m: f64,
    pub c_h: f64,
    pub l_f: f64,
    pub l_r: f64,
    pub u: f64,
}

impl Default for DynamicsParams {
    /// Identified F1/10 parameters with the constant throttle of 16.
    fn default() -> Self {
        DynamicsParams {
            c_a: 1.633,
            c_m: 0.2,
            c_h: 4.0,
            l_f: 0.225,
            l_r: 0.225,
            u: 16.0,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.c_a, self.c_m, self.c_h, self.l_f, self.l_r, self.u]
            .iter()
            .all(|v| v.is_finite());
        if !ok || self.c_a <= 0.0 || self.c_m <= 0.0 || self.l_f + self.l_r <= 0.0 {
            return Err(Error::Config(format!("invalid dynamics parameters {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    /// Constant term of the speed equation, `c_a c_m (u - c_h)`.
    #[inline]
    pub fn drive(&self) -> f64 {
        self.c_a * self.c_m * (self.u - self.c_h)
    }

    /// Speed at which the drive and drag terms balance.
    pub fn top_speed(&self) -> f64 {
        self.c_m * (self.u - self.c_h)
    }
}

pub fn derivative(state: &CarState, steering: f64, params: &DynamicsParams) -> [f64; 4] {
    [
        state.v * state.theta.cos(),
        state.v * state.theta.sin(),
        -params.c_a * state.v + params.drive(),
        state.v * steering.tan() / params.wheelbase(),
    ]
}

/// Default RK4 substep for simulation.
pub const SIM_SUBSTEP: f64 = 1e-3;

/// Advances `duration` seconds under constant steering with fixed-step RK4.
pub fn integrate_step(state: &CarState, steering: f64, duration: f64, params: &DynamicsParams) -> CarState {
    integrate_step_with(state, steering, duration, params, SIM_SUBSTEP)
}

pub fn integrate_step_with(
    state: &CarState,
    steering: f64,
    duration: f64,
    params: &DynamicsParams,
    substep: f64,
) -> CarState {
    debug_assert!(duration > 0.0 && substep > 0.0);
    let n = (duration / substep).round().max(1.0) as usize;
    let h = duration / n as f64;
    let add = |s: &CarState, k: &[f64; 4], f: f64| {
        CarState::new(s.x + f * k[0], s.y + f * k[1], s.v + f * k[2], s.theta + f * k[3])
    };
    let mut s = *state;
    for _ in 0..n {
        let k1 = derivative(&s, steering, params);
        let k2 = derivative(&add(&s, &k1, 0.5 * h), steering, params);
        let k3 = derivative(&add(&s, &k2, 0.5 * h), steering, params);
        let k4 = derivative(&add(&s, &k3, h), steering, params);
        let mut out = [0.0; 4];
        let base = s.as_array();
        for i in 0..4 {
            out[i] = base[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s = CarState::from_array(out);
    }
    s
}

/// Arithmetic needed by the Taylor recurrences.
pub trait Scalar: Clone {
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, k: f64) -> Self;
    fn add_const(&self, k: f64) -> Self;
    fn zero_like(&self) -> Self;
    /// `(sin, cos)` with an optional known range of the argument.
    fn sin_cos(&self, hint: Option<Interval>) -> (Self, Self);
}

impl Scalar for f64 {
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn add_const(&self, k: f64) -> Self {
        self + k
    }
    fn zero_like(&self) -> Self {
        0.0
    }
    fn sin_cos(&self, _hint: Option<Interval>) -> (Self, Self) {
        f64::sin_cos(*self)
    }
}

impl Scalar for Interval {
    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn scale(&self, k: f64) -> Self {
        Interval::scale(self, k)
    }
    fn add_const(&self, k: f64) -> Self {
        self.add_scalar(k)
    }
    fn zero_like(&self) -> Self {
        Interval::point(0.0)
    }
    fn sin_cos(&self, hint: Option<Interval>) -> (Self, Self) {
        let d = hint.and_then(|h| self.intersect(&h)).unwrap_or(*self);
        (d.sin(), d.cos())
    }
}

impl Scalar for AffineForm {
    fn add(&self, o: &Self) -> Self {
        AffineForm::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        AffineForm::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        AffineForm::mul(self, o)
    }
    fn scale(&self, k: f64) -> Self {
        AffineForm::scale(self, k)
    }
    fn add_const(&self, k: f64) -> Self {
        AffineForm::add_const(self, k)
    }
    fn zero_like(&self) -> Self {
        AffineForm::constant(0.0, self.n_symbols())
    }
    fn sin_cos(&self, hint: Option<Interval>) -> (Self, Self) {
        (self.sin(hint), self.cos(hint))
    }
}

/// Normalized Taylor coefficients `z_j = z^(j)(0) / j!` of the solution
/// through `state = (x, y, v, θ)`, for `j = 0..=order`, with curvature
/// `kappa = tan(δ) / (l_f + l_r)` held constant.
pub fn taylor_coefficients<T: Scalar>(
    state: &[T; 4],
    kappa: &T,
    params: &DynamicsParams,
    order: usize,
    theta_hint: Option<Interval>,
) -> Vec<[T; 4]> {
    let [x, y, v, th] = state.clone();
    let zero = v.zero_like();
    let mut xs = vec![x];
    let mut ys = vec![y];
    let mut vs = vec![v];
    let mut ths = vec![th];
    let (s0, c0) = ths[0].sin_cos(theta_hint);
    let mut sn = vec![s0];
    let mut cs = vec![c0];
    for j in 0..order {
        let jf = (j + 1) as f64;
        let mut vnext = vs[j].scale(-params.c_a);
        if j == 0 {
            vnext = vnext.add_const(params.drive());
        }
        vs.push(vnext.scale(1.0 / jf));
        ths.push(kappa.mul(&vs[j]).scale(1.0 / jf));
        if j >= 1 {
            // (cos θ)' = -sin θ θ', (sin θ)' = cos θ θ'
            let mut cj = zero.clone();
            let mut sj = zero.clone();
            for i in 1..=j {
                let w = ths[i].scale(i as f64);
                cj = cj.sub(&w.mul(&sn[j - i]));
                sj = sj.add(&w.mul(&cs[j - i]));
            }
            cs.push(cj.scale(1.0 / j as f64));
            sn.push(sj.scale(1.0 / j as f64));
        }
        let mut p = zero.clone();
        let mut q = zero.clone();
        for i in 0..=j {
            p = p.add(&vs[i].mul(&cs[j - i]));
            q = q.add(&vs[i].mul(&sn[j - i]));
        }
        xs.push(p.scale(1.0 / jf));
        ys.push(q.scale(1.0 / jf));
    }
    (0..=order)
        .map(|j| [xs[j].clone(), ys[j].clone(), vs[j].clone(), ths[j].clone()])
        .collect()
}

/// Symbolic (affine) part of a [`StateBox`]: one form per state variable
/// over a shared list of noise symbols, identified by `ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicState {
    pub ids: Vec<u64>,
    pub forms: [AffineForm; 4],
}

impl SymbolicState {
    pub fn n_symbols(&self) -> usize {
        self.ids.len()
    }

    pub fn ranges(&self) -> [Interval; 4] {
        [0, 1, 2, 3].map(|i| self.forms[i].range())
    }

    /// Turns each private error term into a fresh shared symbol so later
    /// steps keep its correlation across the state variables.
    pub fn fold_errors(&mut self, next_id: &mut u64) {
        for d in 0..4 {
            let e = self.forms[d].e;
            if e > 0.0 {
                self.ids.push(*next_id);
                *next_id += 1;
                for (k, f) in self.forms.iter_mut().enumerate() {
                    f.g.push(if k == d { e } else { 0.0 });
                }
                self.forms[d].e = 0.0;
            }
        }
    }

    /// Keeps at most `max_symbols` symbols. The symbols with the smallest
    /// total weight are replaced by a box (one fresh symbol per dimension)
    /// enclosing their contribution.
    pub fn reduce(&mut self, max_symbols: usize, next_id: &mut u64) {
        let n = self.ids.len();
        if n <= max_symbols || max_symbols < 5 {
            return;
        }
        let keep_count = max_symbols - 4;
        let mut order: Vec<usize> = (0..n).collect();
        let weight = |i: usize| -> f64 { self.forms.iter().map(|f| f.g[i].abs()).sum() };
        order.sort_by(|&i, &j| weight(j).total_cmp(&weight(i)).then(i.cmp(&j)));
        let mut keep: Vec<usize> = order[..keep_count].to_vec();
        keep.sort_unstable();
        let dropped = &order[keep_count..];
        let mut ids: Vec<u64> = keep.iter().map(|&i| self.ids[i]).collect();
        let mut new_forms = self.forms.clone();
        for (d, f) in new_forms.iter_mut().enumerate() {
            let box_r: f64 = dropped.iter().map(|&i| self.forms[d].g[i].abs()).sum();
            let box_r = crate::interval::up(box_r * (1.0 + (n as f64 + 1.0) * f64::EPSILON));
            f.g = keep.iter().map(|&i| self.forms[d].g[i]).collect();
            f.e = crate::interval::up(f.e + box_r);
        }
        self.forms = new_forms;
        self.ids = std::mem::take(&mut ids);
        self.fold_errors(next_id);
    }

    /// Re-expresses both states over the union of their symbols.
    pub fn align(a: &SymbolicState, b: &SymbolicState) -> (SymbolicState, SymbolicState) {
        let mut ids = a.ids.clone();
        for id in &b.ids {
            if !ids.contains(id) {
                ids.push(*id);
            }
        }
        let remap = |s: &SymbolicState| -> SymbolicState {
            let forms = s.forms.clone().map(|f| {
                let mut g = vec![0.0; ids.len()];
                for (k, id) in s.ids.iter().enumerate() {
                    let pos = ids.iter().position(|x| x == id).expect("id present");
                    g[pos] = f.g[k];
                }
                AffineForm { c: f.c, g, e: f.e }
            });
            SymbolicState {
                ids: ids.clone(),
                forms,
            }
        };
        (remap(a), remap(b))
    }

    pub fn join(&self, other: &SymbolicState) -> SymbolicState {
        let (a, b) = SymbolicState::align(self, other);
        let forms = [0, 1, 2, 3].map(|i| a.forms[i].join(&b.forms[i]));
        SymbolicState { ids: a.ids, forms }
    }
}

/// A sound enclosure of a set of car states: a box, optionally refined by an
/// affine form. The enclosed set is the intersection of the two.
#[derive(Clone, Debug, PartialEq)]
pub struct StateBox {
    /// Bounds on `x, y, v, theta`.
    pub bounds: [Interval; 4],
    pub symbolic: Option<SymbolicState>,
}

impl StateBox {
    pub fn from_bounds(bounds: [Interval; 4]) -> Self {
        StateBox { bounds, symbolic: None }
    }

    pub fn point(state: &CarState) -> Self {
        StateBox::from_bounds(state.as_array().map(Interval::point))
    }

    pub fn from_symbolic(symbolic: SymbolicState) -> Self {
        StateBox {
            bounds: symbolic.ranges(),
            symbolic: Some(symbolic),
        }
    }

    pub fn x(&self) -> Interval {
        self.bounds[0]
    }
    pub fn y(&self) -> Interval {
        self.bounds[1]
    }
    pub fn v(&self) -> Interval {
        self.bounds[2]
    }
    pub fn theta(&self) -> Interval {
        self.bounds[3]
    }

    pub fn contains(&self, s: &CarState) -> bool {
        self.bounds.iter().zip(s.as_array()).all(|(iv, v)| iv.contains(v))
    }

    pub fn contains_box(&self, other: &StateBox) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(a, b)| a.contains_interval(b))
    }

    pub fn center(&self) -> CarState {
        CarState::from_array(self.bounds.map(|b| b.mid()))
    }

    pub fn widths(&self) -> [f64; 4] {
        self.bounds.map(|b| b.width())
    }

    pub fn hull(&self, other: &StateBox) -> StateBox {
        let mut b = self.bounds;
        for (x, y) in b.iter_mut().zip(&other.bounds) {
            *x = x.hull(y);
        }
        StateBox::from_bounds(b)
    }

    /// Affine forms for each state variable; interval-only boxes become
    /// forms without symbols.
    pub fn forms(&self) -> (Vec<u64>, [AffineForm; 4]) {
        match &self.symbolic {
            Some(s) => (s.ids.clone(), s.forms.clone()),
            None => (Vec::new(), self.bounds.map(|b| AffineForm::from_interval(b, 0))),
        }
    }

    /// Replaces the bounds with their intersection with `bounds`; `None` when empty.
    pub fn narrowed(&self, bounds: [Interval; 4]) -> Option<StateBox> {
        let mut out = self.bounds;
        for (o, b) in out.iter_mut().zip(&bounds) {
            *o = o.intersect(b)?;
        }
        Some(StateBox {
            bounds: out,
            symbolic: self.symbolic.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowSettings {
    /// Taylor order of the polynomial part.
    pub order: usize,
    /// Taylor steps per control period.
    pub substeps: usize,
    /// Time slices per substep used for the swept-region boxes.
    pub tube_slices: usize,
    pub picard_iterations: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            order: 4,
            substeps: 2,
            tube_slices: 4,
            picard_iterations: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowEnclosure {
    /// States at the end of the period.
    pub end: StateBox,
    /// Boxes covering every state visited during the period.
    pub tube: Vec<[Interval; 4]>,
}

fn vector_field_interval(b: &[Interval; 4], kappa: &Interval, params: &DynamicsParams) -> [Interval; 4] {
    let [_, _, v, th] = *b;
    [
        v * th.cos(),
        v * th.sin(),
        v.scale(-params.c_a).add_scalar(params.drive()),
        *kappa * v,
    ]
}

/// Box containing the solution over `[0, h]` from any state in `x0`.
fn a_priori_enclosure(
    x0: &[Interval; 4],
    kappa: &Interval,
    h: f64,
    params: &DynamicsParams,
    iterations: usize,
) -> Result<[Interval; 4]> {
    let t = Interval::new(0.0, h);
    let step = |b: &[Interval; 4]| -> [Interval; 4] {
        let f = vector_field_interval(b, kappa, params);
        [0, 1, 2, 3].map(|i| x0[i] + t * f[i])
    };
    let mut b = step(x0);
    for _ in 0..iterations {
        let inflated = b.map(|iv| iv.inflate(0.05 * iv.width() + 1e-9));
        let next = step(&inflated);
        if next.iter().zip(&inflated).all(|(n, i)| i.contains_interval(n)) {
            return Ok(next);
        }
        b = next;
    }
    Err(Error::Enclosure(format!(
        "no a-priori enclosure after {iterations} Picard iterations (h = {h})"
    )))
}

/// Sound enclosure of the states reached after `duration` seconds from any
/// state in `states` under any steering in the interval.
pub fn flow_enclosure(
    states: &StateBox,
    steering: Interval,
    duration: f64,
    params: &DynamicsParams,
    settings: &FlowSettings,
) -> Result<FlowEnclosure> {
    let n = states.symbolic.as_ref().map_or(0, |s| s.n_symbols());
    flow_enclosure_affine(
        states,
        &AffineForm::from_interval(steering, n),
        duration,
        params,
        settings,
    )
}

/// As [`flow_enclosure`], with the steering given as an affine form over the
/// same symbols as `states` so its correlation with the state is kept.
pub fn flow_enclosure_affine(
    states: &StateBox,
    steering: &AffineForm,
    duration: f64,
    params: &DynamicsParams,
    settings: &FlowSettings,
) -> Result<FlowEnclosure> {
    if !(duration > 0.0) {
        return Err(Error::Config(format!("flow duration must be positive, got {duration}")));
    }
    let (ids, mut forms) = states.forms();
    debug_assert_eq!(steering.n_symbols(), ids.len());
    let order = settings.order.max(2);
    let substeps = settings.substeps.max(1);
    let slices = settings.tube_slices.max(1);
    let h = duration / substeps as f64;

    let steer_range = steering.range();
    let kappa = steering
        .tan(None)
        .ok_or_else(|| Error::Enclosure(format!("steering range {steer_range} too wide")))?
        .scale(1.0 / params.wheelbase());
    let kappa_iv = kappa.range();

    let mut bounds = states.bounds;
    let mut tube = Vec::with_capacity(substeps * slices);
    for _ in 0..substeps {
        let x0: [Interval; 4] = [0, 1, 2, 3].map(|i| forms[i].range().intersect(&bounds[i]).unwrap_or(bounds[i]));
        let apriori = a_priori_enclosure(&x0, &kappa_iv, h, params, settings.picard_iterations)?;
        let high = taylor_coefficients(&apriori, &kappa_iv, params, order + 1, None);
        let rem_coef = high[order + 1];
        let coeffs = taylor_coefficients(&forms, &kappa, params, order, Some(x0[3]));

        let mut coef_ranges: Vec<[Interval; 4]> = coeffs.iter().map(|c| [0, 1, 2, 3].map(|i| c[i].range())).collect();
        coef_ranges[0] = x0;
        for s in 0..slices {
            let t = Interval::new(h * s as f64 / slices as f64, h * (s + 1) as f64 / slices as f64);
            let slice = [0, 1, 2, 3].map(|i| {
                let mut acc = rem_coef[i] * power(&t, order + 1);
                for j in (1..=order).rev() {
                    acc = acc + coef_ranges[j][i] * power(&t, j);
                }
                acc = acc + coef_ranges[0][i];
                acc.intersect(&apriori[i]).unwrap_or(apriori[i])
            });
            tube.push(slice);
        }

        let mut next = forms.clone();
        for i in 0..4 {
            // Horner in h on the affine coefficients.
            let mut acc = coeffs[order][i].clone();
            for j in (0..order).rev() {
                acc = acc.scale(h).add(&coeffs[j][i]);
            }
            let rem = rem_coef[i].scale(h.powi(order as i32 + 1));
            next[i] = acc.add_interval(&rem);
        }
        forms = next;
        bounds = [0, 1, 2, 3].map(|i| {
            let end_range = forms[i].range();
            // The tube's last slice also encloses the end state.
            let last = tube.last().expect("slices >= 1")[i];
            end_range.intersect(&last).unwrap_or(end_range)
        });
    }

    let end = if ids.is_empty() {
        StateBox::from_bounds(bounds)
    } else {
        StateBox {
            bounds,
            symbolic: Some(SymbolicState { ids, forms }),
        }
    };
    Ok(FlowEnclosure { end, tube })
}

fn power(t: &Interval, j: usize) -> Interval {
    let mut p = *t;
    for _ in 1..j {
        p = p * *t;
    }
    p
}

//! First-order (affine) enclosures.
//!
//! An [`AffineForm`] represents the set `{ c + Σ g_i ε_i + δ : ε ∈ [-1,1]^n, |δ| ≤ e }`.
//! The `ε_i` are shared noise symbols, so two forms built over the same
//! symbols keep their correlation through linear operations. The `e` term is
//! private to the form. Nonlinear functions are linearized with a mean-value
//! slope and the linearization error is pushed into `e`.
//!
//! Floating-point rounding is accounted for by epsilon inflation: every
//! operation adds a bound of a few ulps of the magnitudes involved to `e`.

use crate::interval::{up, Interval};

const EPS: f64 = f64::EPSILON;
// Absolute floor covering underflow in products.
const TINY: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm {
    pub c: f64,
    pub g: Vec<f64>,
    pub e: f64,
}

#[inline]
fn l1(g: &[f64]) -> f64 {
    let s: f64 = g.iter().map(|v| v.abs()).sum();
    up(s * (1.0 + (g.len() as f64 + 1.0) * EPS))
}

#[inline]
fn round_bound(magnitude: f64, ops: f64) -> f64 {
    up(magnitude * ops * EPS + TINY)
}

impl AffineForm {
    pub fn constant(c: f64, n: usize) -> Self {
        AffineForm {
            c,
            g: vec![0.0; n],
            e: 0.0,
        }
    }

    /// A form with no symbolic dependence covering `iv`.
    pub fn from_interval(iv: Interval, n: usize) -> Self {
        let c = iv.mid();
        AffineForm {
            c,
            g: vec![0.0; n],
            e: iv.rad(),
        }
    }

    /// `center + radius * ε_index` over `n` symbols.
    pub fn symbol(center: f64, radius: f64, index: usize, n: usize) -> Self {
        let mut g = vec![0.0; n];
        g[index] = radius;
        AffineForm { c: center, g, e: 0.0 }
    }

    #[inline]
    pub fn n_symbols(&self) -> usize {
        self.g.len()
    }

    /// Upper bound on `|value - c|`.
    pub fn radius(&self) -> f64 {
        up(l1(&self.g) + self.e)
    }

    pub fn range(&self) -> Interval {
        let r = self.radius();
        Interval::centered(self.c, r)
    }

    /// Value at a given symbol assignment, with the private error term as an interval.
    pub fn eval(&self, eps: &[f64]) -> Interval {
        let mut s = self.c;
        let mut mag = self.c.abs();
        for (gi, ei) in self.g.iter().zip(eps) {
            s += gi * ei;
            mag += (gi * ei).abs();
        }
        Interval::centered(s, self.e + round_bound(mag, 2.0 * (self.g.len() as f64 + 1.0)))
    }

    pub fn add_error(&mut self, r: f64) {
        self.e = up(self.e + r.abs());
    }

    /// Resizes to `n` symbols; new symbols get zero coefficients.
    pub fn extend_to(&mut self, n: usize) {
        if self.g.len() < n {
            self.g.resize(n, 0.0);
        }
    }

    pub fn add(&self, o: &AffineForm) -> AffineForm {
        debug_assert_eq!(self.g.len(), o.g.len());
        let c = self.c + o.c;
        let g: Vec<f64> = self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect();
        let mag = c.abs() + l1(&g);
        AffineForm {
            c,
            e: up(self.e + o.e + round_bound(mag, 2.0)),
            g,
        }
    }

    pub fn sub(&self, o: &AffineForm) -> AffineForm {
        debug_assert_eq!(self.g.len(), o.g.len());
        let c = self.c - o.c;
        let g: Vec<f64> = self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect();
        let mag = c.abs() + l1(&g);
        AffineForm {
            c,
            e: up(self.e + o.e + round_bound(mag, 2.0)),
            g,
        }
    }

    pub fn neg(&self) -> AffineForm {
        AffineForm {
            c: -self.c,
            g: self.g.iter().map(|v| -v).collect(),
            e: self.e,
        }
    }

    pub fn scale(&self, k: f64) -> AffineForm {
        let c = self.c * k;
        let g: Vec<f64> = self.g.iter().map(|v| v * k).collect();
        let mag = c.abs() + l1(&g);
        AffineForm {
            c,
            e: up(self.e * k.abs() * (1.0 + 2.0 * EPS) + round_bound(mag, 2.0)),
            g,
        }
    }

    pub fn add_const(&self, k: f64) -> AffineForm {
        let c = self.c + k;
        AffineForm {
            c,
            g: self.g.clone(),
            e: up(self.e + round_bound(c.abs(), 2.0)),
        }
    }

    /// Adds an interval constant.
    pub fn add_interval(&self, iv: &Interval) -> AffineForm {
        let m = iv.mid();
        let c = self.c + m;
        AffineForm {
            c,
            g: self.g.clone(),
            e: up(self.e + iv.rad() + round_bound(c.abs(), 2.0)),
        }
    }

    pub fn mul(&self, o: &AffineForm) -> AffineForm {
        debug_assert_eq!(self.g.len(), o.g.len());
        let c = self.c * o.c;
        let g: Vec<f64> = self.g.iter().zip(&o.g).map(|(a, b)| self.c * b + o.c * a).collect();
        let ra = self.radius();
        let rb = o.radius();
        let la = l1(&self.g);
        let lb = l1(&o.g);
        let nonlinear = up(ra * rb);
        let cross = up(self.c.abs() * o.e + o.c.abs() * self.e);
        let rounding = round_bound(c.abs() + self.c.abs() * lb + o.c.abs() * la, 4.0);
        AffineForm {
            c,
            g,
            e: up(nonlinear + cross + rounding),
        }
    }

    /// `bias + Σ w_j x_j` with a single rounding account.
    pub fn linear_combination(terms: &[(f64, &AffineForm)], bias: f64, n: usize) -> AffineForm {
        let mut c = bias;
        let mut g = vec![0.0; n];
        let mut e = 0.0;
        let mut mag = bias.abs();
        for (w, x) in terms {
            if *w == 0.0 {
                continue;
            }
            c += w * x.c;
            for (gi, xi) in g.iter_mut().zip(&x.g) {
                *gi += w * xi;
            }
            e += w.abs() * x.e;
            mag += w.abs() * (x.c.abs() + l1(&x.g));
        }
        let k = terms.len() as f64 + 2.0;
        AffineForm {
            c,
            g,
            e: up(up(e * (1.0 + k * EPS)) + round_bound(mag, 2.0 * k)),
        }
    }

    /// Mean-value linearization of a differentiable unary function.
    ///
    /// `hint` narrows the domain when the caller knows the actual argument
    /// values are confined further than the form's own range. `point` must
    /// return an enclosure of `f` at a point and `deriv` an enclosure of `f'`
    /// over an interval. Returns `None` when the derivative bound is not finite.
    pub fn apply_unary(
        &self,
        hint: Option<Interval>,
        point: impl Fn(f64) -> Interval,
        deriv: impl Fn(&Interval) -> Option<Interval>,
    ) -> Option<AffineForm> {
        let r = self.range();
        let dom = match hint {
            Some(h) => r.intersect(&h).unwrap_or(r),
            None => r,
        };
        let x0 = dom.mid();
        let f0 = point(x0);
        let dp = deriv(&dom)?;
        if !dp.is_finite() || !f0.is_finite() {
            return None;
        }
        let lam = dp.mid();
        let spread = up((dom.hi - x0).max(x0 - dom.lo));
        let lin_err = up(dp.rad() * spread);
        let mut out = self.scale(lam);
        let shift = f0.mid() - lam * x0;
        out = out.add_const(shift);
        out.add_error(lin_err + f0.rad() + round_bound((lam * x0).abs() + f0.mid().abs(), 2.0));
        Some(out)
    }

    pub fn sin(&self, hint: Option<Interval>) -> AffineForm {
        self.apply_unary(hint, |x| Interval::point(x).sin(), |d| Some(d.cos()))
            .expect("sin linearization is always finite")
    }

    pub fn cos(&self, hint: Option<Interval>) -> AffineForm {
        self.apply_unary(hint, |x| Interval::point(x).cos(), |d| Some(-d.sin()))
            .expect("cos linearization is always finite")
    }

    pub fn tanh(&self, hint: Option<Interval>) -> AffineForm {
        self.apply_unary(hint, |x| Interval::point(x).tanh(), |d| Some(d.tanh_derivative()))
            .expect("tanh linearization is always finite")
    }

    /// Tangent; `None` unless the domain lies inside `(-pi/2, pi/2)`.
    pub fn tan(&self, hint: Option<Interval>) -> Option<AffineForm> {
        self.apply_unary(
            hint,
            |x| Interval::point(x).tan().unwrap_or(Interval::ENTIRE),
            |d| {
                let t = d.tan()?;
                Some(t.sqr().add_scalar(1.0))
            },
        )
    }

    /// `1 / x`; `None` when the domain touches zero.
    pub fn recip(&self, hint: Option<Interval>) -> Option<AffineForm> {
        self.apply_unary(
            hint,
            |x| Interval::point(x).recip().unwrap_or(Interval::ENTIRE),
            |d| {
                let r = d.recip()?;
                Some(-r.sqr())
            },
        )
    }

    /// `min(x, k)` via the secant of the concave kink.
    pub fn min_const(&self, k: f64) -> AffineForm {
        let r = self.range();
        if r.hi <= k {
            return self.clone();
        }
        let n = self.g.len();
        if r.lo >= k {
            return AffineForm::constant(k, n);
        }
        // Secant through (lo, lo) and (hi, k); the function lies above it by
        // at most (k - lo) * (1 - slope), attained at x = k.
        let slope = (k - r.lo) / (r.hi - r.lo);
        let gap = up((k - r.lo) * (1.0 - slope));
        let mut out = self.scale(slope).add_const(r.lo - slope * r.lo + 0.5 * gap);
        out.add_error(0.5 * gap + round_bound(r.mag() + k.abs(), 8.0));
        out
    }

    /// `max(x, k)`.
    pub fn max_const(&self, k: f64) -> AffineForm {
        self.neg().min_const(-k).neg()
    }

    /// Sound join: a form whose set contains both inputs' sets.
    pub fn join(&self, o: &AffineForm) -> AffineForm {
        debug_assert_eq!(self.g.len(), o.g.len());
        let g: Vec<f64> = self
            .g
            .iter()
            .zip(&o.g)
            .map(|(&a, &b)| {
                if a.signum() == b.signum() && a != 0.0 && b != 0.0 {
                    a.signum() * a.abs().min(b.abs())
                } else {
                    0.0
                }
            })
            .collect();
        let resid = |f: &AffineForm| -> f64 {
            let s: f64 = f.g.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum();
            up(up(s * (1.0 + (g.len() as f64 + 2.0) * EPS)) + f.e)
        };
        let ra = resid(self);
        let rb = resid(o);
        let hull = Interval::centered(self.c, ra).hull(&Interval::centered(o.c, rb));
        let c = hull.mid();
        AffineForm {
            c,
            e: up(hull.rad() + round_bound(c.abs(), 2.0)),
            g,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(f: &AffineForm, eps: &[f64], t: f64) -> f64 {
        let mut v = f.c;
        for (g, e) in f.g.iter().zip(eps) {
            v += g * e;
        }
        v + t * f.e
    }

    fn contains(f: &AffineForm, eps: &[f64], v: f64) -> bool {
        let iv = f.eval(eps);
        iv.lo - 1e-15 * v.abs() <= v && v <= iv.hi + 1e-15 * v.abs()
    }

    prop_compose! {
        fn form(n: usize)(c in -3.0f64..3.0, g in proptest::collection::vec(-0.5f64..0.5, n), e in 0.0f64..0.1) -> AffineForm {
            AffineForm { c, g, e }
        }
    }

    proptest! {
        #[test]
        fn operations_enclose_samples(
            a in form(3), b in form(3),
            eps in proptest::collection::vec(-1.0f64..1.0, 3),
            ta in -1.0f64..1.0, tb in -1.0f64..1.0,
        ) {
            let x = sample(&a, &eps, ta);
            let y = sample(&b, &eps, tb);
            prop_assert!(contains(&a.add(&b), &eps, x + y));
            prop_assert!(contains(&a.sub(&b), &eps, x - y));
            prop_assert!(contains(&a.mul(&b), &eps, x * y));
            prop_assert!(contains(&a.scale(-1.7), &eps, -1.7 * x));
            prop_assert!(contains(&a.sin(None), &eps, x.sin()));
            prop_assert!(contains(&a.cos(None), &eps, x.cos()));
            prop_assert!(contains(&a.tanh(None), &eps, x.tanh()));
            prop_assert!(contains(&a.min_const(0.5), &eps, x.min(0.5)));
            prop_assert!(contains(&a.max_const(-0.5), &eps, x.max(-0.5)));
            let lc = AffineForm::linear_combination(&[(2.0, &a), (-0.3, &b)], 0.1, 3);
            prop_assert!(contains(&lc, &eps, 0.1 + 2.0 * x - 0.3 * y));
            let j = a.join(&b);
            prop_assert!(contains(&j, &eps, x));
            prop_assert!(contains(&j, &eps, y));
            if let Some(r) = a.add_const(5.0).recip(None) {
                prop_assert!(contains(&r, &eps, 1.0 / (x + 5.0)));
            }
            if let Some(t) = a.scale(0.1).tan(None) {
                prop_assert!(contains(&t, &eps, (0.1 * x).tan()));
            }
        }
    }

    #[test]
    fn linear_ops_keep_correlation() {
        let x = AffineForm::symbol(1.0, 0.5, 0, 1);
        let d = x.sub(&x);
        assert!(d.radius() < 1e-14);
    }

    #[test]
    fn hint_tightens_linearization() {
        let x = AffineForm::symbol(0.0, 2.0, 0, 1);
        let loose = x.tanh(None);
        let tight = x.tanh(Some(Interval::new(1.0, 2.0)));
        assert!(tight.e < loose.e);
    }
}

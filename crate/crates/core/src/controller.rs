//! Fully connected tanh steering networks.
//!
//! Weight file (JSON):
//!
//! ```text
//! {"meta": {"num_rays": 21, "output_scale_deg": 15,
//!           "input_offset": [..], "input_scale": [..]},
//!  "layers": [{"rows": 64, "cols": 21, "weights": [row-major],
//!              "bias": [..], "activation": "tanh"}, ...]}
//! ```
//!
//! Each ray distance is preprocessed as `(d - offset) * scale`; the last layer
//! has one output whose tanh is scaled by `output_scale_deg` and converted to
//! radians.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::error::{Error, Result};
use crate::interval::{down, up, Interval};
use crate::lidar::LidarScan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub num_rays: usize,
    pub output_scale_deg: f64,
    #[serde(default)]
    pub input_offset: Vec<f64>,
    #[serde(default)]
    pub input_scale: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MLPController {
    pub meta: Meta,
    pub layers: Vec<Layer>,
}

/// Steering limit, degrees.
pub const MAX_STEERING_DEG: f64 = 15.0;

impl MLPController {
    /// A network with default preprocessing; validated.
    pub fn new(num_rays: usize, layers: Vec<Layer>) -> Result<Self> {
        let c = MLPController {
            meta: Meta {
                num_rays,
                output_scale_deg: MAX_STEERING_DEG,
                input_offset: vec![0.0; num_rays],
                input_scale: vec![1.0; num_rays],
            },
            layers,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: MLPController = serde_json::from_str(text).map_err(|e| Error::Weights(e.to_string()))?;
        let n = c.meta.num_rays;
        if c.meta.input_offset.is_empty() {
            c.meta.input_offset = vec![0.0; n];
        }
        if c.meta.input_scale.is_empty() {
            c.meta.input_scale = vec![1.0; n];
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("controller serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let bad = |s: String| Err(Error::Weights(s));
        if m.num_rays == 0 {
            return bad("num_rays must be positive".into());
        }
        if !(m.output_scale_deg > 0.0 && m.output_scale_deg <= MAX_STEERING_DEG) {
            return bad(format!(
                "output_scale_deg must lie in (0, {MAX_STEERING_DEG}], got {}",
                m.output_scale_deg
            ));
        }
        if m.input_offset.len() != m.num_rays || m.input_scale.len() != m.num_rays {
            return bad("input_offset and input_scale must have num_rays entries".into());
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        let mut width = m.num_rays;
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != width {
                return Err(Error::Dimension {
                    context: format!("layer {i} input"),
                    expected: width,
                    found: l.cols,
                });
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows || l.rows == 0 {
                return bad(format!("layer {i} has inconsistent weight or bias length"));
            }
            width = l.rows;
        }
        if width != 1 {
            return Err(Error::Dimension {
                context: "network output".into(),
                expected: 1,
                found: width,
            });
        }
        if self.layers.last().map(|l| l.activation) != Some(Activation::Tanh) {
            return bad("the final activation must be tanh".into());
        }
        let finite = m
            .input_offset
            .iter()
            .chain(&m.input_scale)
            .chain(self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)))
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite weight".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.meta.num_rays
    }

    /// Checks that the network reads scans with `rays` rays.
    pub fn check_rays(&self, rays: usize) -> Result<()> {
        if rays != self.meta.num_rays {
            return Err(Error::Dimension {
                context: "controller input vs ray count".into(),
                expected: rays,
                found: self.meta.num_rays,
            });
        }
        Ok(())
    }

    fn scale_rad(&self) -> f64 {
        self.meta.output_scale_deg.to_radians()
    }

    /// Steering angle in radians for a scan.
    pub fn evaluate(&self, scan: &LidarScan) -> f64 {
        self.evaluate_raw(&scan.distances)
    }

    pub fn evaluate_raw(&self, distances: &[f64]) -> f64 {
        debug_assert_eq!(distances.len(), self.meta.num_rays);
        let mut x: Vec<f64> = distances
            .iter()
            .zip(self.meta.input_offset.iter().zip(&self.meta.input_scale))
            .map(|(d, (o, s))| (d - o) * s)
            .collect();
        for l in &self.layers {
            x = (0..l.rows)
                .map(|r| {
                    let z = l.bias[r] + dot(l.row(r), &x);
                    match l.activation {
                        Activation::Tanh => z.tanh(),
                        Activation::Linear => z,
                    }
                })
                .collect();
        }
        x[0] * self.scale_rad()
    }

    fn preprocess_interval(&self, scan: &[Interval]) -> Vec<Interval> {
        scan.iter()
            .zip(self.meta.input_offset.iter().zip(&self.meta.input_scale))
            .map(|(d, (o, s))| (d.add_scalar(-o)).scale(*s))
            .collect()
    }

    /// Sound steering interval (radians) over a box of scans.
    pub fn evaluate_enclosure(&self, scan: &[Interval]) -> Result<Interval> {
        self.check_rays(scan.len())?;
        let mut x = self.preprocess_interval(scan);
        for l in &self.layers {
            x = affine_layer_interval(l, &x)
                .into_iter()
                .map(|z| match l.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Linear => z,
                })
                .collect();
        }
        Ok(self.scale_output(x[0]))
    }

    fn scale_output(&self, y: Interval) -> Interval {
        let y = Interval::new(y.lo.max(-1.0), y.hi.min(1.0));
        let k = self.scale_rad();
        let lim = self.scale_rad();
        let s = y.scale(k);
        Interval::new(s.lo.max(-lim), s.hi.min(lim))
    }

    /// First-order enclosure: the steering as an affine form over the same
    /// symbols as the scan forms, together with its interval bound.
    ///
    /// `intervals` must enclose the values of `forms`; both are propagated and
    /// intersected at every layer.
    pub fn evaluate_affine(&self, forms: &[AffineForm], intervals: &[Interval]) -> Result<(AffineForm, Interval)> {
        self.check_rays(forms.len())?;
        self.check_rays(intervals.len())?;
        let n = forms.first().map_or(0, |f| f.n_symbols());
        let mut xf: Vec<AffineForm> = forms
            .iter()
            .zip(self.meta.input_offset.iter().zip(&self.meta.input_scale))
            .map(|(f, (o, s))| f.add_const(-o).scale(*s))
            .collect();
        let mut xi = self.preprocess_interval(intervals);
        for l in &self.layers {
            let zi = affine_layer_interval(l, &xi);
            let mut nf = Vec::with_capacity(l.rows);
            let mut ni = Vec::with_capacity(l.rows);
            #[allow(clippy::needless_range_loop)]
            for r in 0..l.rows {
                let terms: Vec<(f64, &AffineForm)> = l.row(r).iter().copied().zip(xf.iter()).collect();
                let z = AffineForm::linear_combination(&terms, l.bias[r], n);
                let zr = z.range().intersect(&zi[r]).unwrap_or(zi[r]);
                let (f, iv) = match l.activation {
                    Activation::Tanh => (z.tanh(Some(zr)), zr.tanh()),
                    Activation::Linear => (z, zr),
                };
                let iv = f.range().intersect(&iv).unwrap_or(iv);
                nf.push(f);
                ni.push(iv);
            }
            xf = nf;
            xi = ni;
        }
        let k = self.scale_rad();
        let out_iv = self.scale_output(xi[0]);
        let out_f = xf[0].scale(k);
        let out_iv = out_f.range().intersect(&out_iv).unwrap_or(out_iv);
        Ok((out_f, out_iv))
    }
}

/// `W x + b` over interval inputs with every operation rounded outward,
/// which keeps the result inclusion isotone.
fn affine_layer_interval(l: &Layer, x: &[Interval]) -> Vec<Interval> {
    (0..l.rows)
        .map(|r| {
            let mut lo = l.bias[r];
            let mut hi = l.bias[r];
            for (w, v) in l.row(r).iter().zip(x) {
                let (a, b) = if *w >= 0.0 { (v.lo, v.hi) } else { (v.hi, v.lo) };
                lo = down(lo + down(w * a));
                hi = up(hi + up(w * b));
            }
            Interval::new(lo, hi)
        })
        .collect()
}

/// Dot product with four independent accumulators, which lets the
/// compiler vectorize it. The summation order is fixed, so results are
/// reproducible.
fn dot(w: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (wc, xc) = (w.chunks_exact(4), x.chunks_exact(4));
    let tail: f64 = wc.remainder().iter().zip(xc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in wc.zip(xc) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

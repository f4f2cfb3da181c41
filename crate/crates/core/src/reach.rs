//! Closed-loop reachability: scan enclosure, network enclosure and flow
//! enclosure alternated at the control rate over subsets of the initial
//! lateral window.

use std::io::Write;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::AffineForm;
use crate::closed_loop::{run_episode, Outcome};
use crate::controller::MLPController;
use crate::dynamics::{flow_enclosure_affine, StateBox, SymbolicState};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::lidar::scan_enclosure;
use crate::scenario::Scenario;
use crate::track::{box_clearance_lower_bound, Leg};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Wall-clock limit per subset.
    pub wall_seconds: Option<f64>,
    /// Limit on propagated (path, case) pairs per subset.
    pub max_path_steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub subset_size: f64,
    pub budget: Budget,
    /// Unknown subsets are halved and re-verified up to this depth.
    pub refine_depth: usize,
}

impl VerifyOptions {
    pub fn new(subset_size: f64) -> Self {
        VerifyOptions {
            subset_size,
            budget: Budget::default(),
            refine_depth: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Safe,
    Unknown,
    Unsafe,
}

/// Where and why a subset stopped being provably safe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// Control step whose transition failed (1-based); 0 is the initial set.
    pub step: usize,
    pub path: usize,
    /// Lower bound on the clearance, when the margin check failed.
    pub clearance_bound: Option<f64>,
    pub reason: String,
}

/// A simulated run from inside the subset that violates the margin. Replay
/// it with `run_episode` from `scenario.initial_state(init_lateral)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub init_lateral: f64,
    pub outcome: Outcome,
    pub min_clearance: f64,
    /// First step whose state is closer than the margin.
    pub step: usize,
}

/// One live path at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeBox {
    pub path: usize,
    pub leg: u8,
    pub bounds: [Interval; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetVerdict {
    pub subset_index: usize,
    /// Lateral offsets, leftward positive from the midline.
    pub subset_interval: [f64; 2],
    pub verdict: Verdict,
    pub resource_exceeded: bool,
    pub failure: Option<Failure>,
    pub counterexample: Option<Counterexample>,
    /// Live paths after each control step.
    pub path_count_per_step: Vec<usize>,
    pub max_paths: usize,
    /// Halves verified after an Unknown verdict; they decide `verdict`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<SubsetVerdict>,
    /// Seconds inside the network enclosure. Not serialized: timings go to
    /// a separate file so reports stay reproducible.
    #[serde(skip)]
    pub nn_time: f64,
    #[serde(skip)]
    pub total_time: f64,
    /// Boxes of every live path, indexed by step (0 = initial set).
    #[serde(skip)]
    pub reach_tube: Vec<Vec<TubeBox>>,
}

impl SubsetVerdict {
    /// The verdicts that were not refined further.
    pub fn leaves(&self) -> Vec<&SubsetVerdict> {
        if self.children.is_empty() {
            vec![self]
        } else {
            self.children.iter().flat_map(|c| c.leaves()).collect()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subset_size: f64,
    pub window: [f64; 2],
    pub steps: usize,
    pub subsets: Vec<SubsetVerdict>,
    /// Mean over subsets of `max_paths`.
    pub mean_paths: f64,
    pub safe: usize,
    pub unknown: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_: usize,
    pub overall: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetTiming {
    pub subset_index: usize,
    pub nn_time: f64,
    pub total_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mean_nn_time: f64,
    pub mean_total_time: f64,
    /// Total network time over total time.
    pub nn_fraction: f64,
    pub subsets: Vec<SubsetTiming>,
}

impl VerificationReport {
    fn from_subsets(subset_size: f64, window: [f64; 2], steps: usize, subsets: Vec<SubsetVerdict>) -> Self {
        let count = |v: Verdict| subsets.iter().filter(|s| s.verdict == v).count();
        let (safe, unknown, unsafe_) = (count(Verdict::Safe), count(Verdict::Unknown), count(Verdict::Unsafe));
        let mean_paths = subsets.iter().map(|s| s.max_paths as f64).sum::<f64>() / subsets.len() as f64;
        let overall = if safe == subsets.len() {
            Verdict::Safe
        } else if unsafe_ > 0 {
            Verdict::Unsafe
        } else {
            Verdict::Unknown
        };
        VerificationReport {
            subset_size,
            window,
            steps,
            subsets,
            mean_paths,
            safe,
            unknown,
            unsafe_,
            overall,
        }
    }

    /// Recomputes the aggregates from the rows.
    pub fn recomputed(&self) -> Self {
        Self::from_subsets(self.subset_size, self.window, self.steps, self.subsets.clone())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn timing(&self) -> TimingReport {
        let n = self.subsets.len() as f64;
        let nn: f64 = self.subsets.iter().map(|s| s.nn_time).sum();
        let total: f64 = self.subsets.iter().map(|s| s.total_time).sum();
        TimingReport {
            mean_nn_time: nn / n,
            mean_total_time: total / n,
            nn_fraction: if total > 0.0 { nn / total } else { 0.0 },
            subsets: self
                .subsets
                .iter()
                .map(|s| SubsetTiming {
                    subset_index: s.subset_index,
                    nn_time: s.nn_time,
                    total_time: s.total_time,
                })
                .collect(),
        }
    }

    /// `subset size (cm) | mean NN time (s) | mean total time (s) | mean paths | safe`.
    pub fn summary_row(&self) -> String {
        let t = self.timing();
        format!(
            "subset {:.2} cm | NN time {:.3} s | total time {:.3} s | paths {:.3} | {}/{} safe",
            self.subset_size * 100.0,
            t.mean_nn_time,
            t.mean_total_time,
            self.mean_paths,
            self.safe,
            self.subsets.len()
        )
    }

    /// One row per (subset, step, path), leaves only.
    pub fn write_tube_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "subset,lateral_lo,lateral_hi,step,path,leg,x_lo,x_hi,y_lo,y_hi,v_lo,v_hi,theta_lo,theta_hi"
        )?;
        for row in &self.subsets {
            for leaf in row.leaves() {
                let [l0, l1] = leaf.subset_interval;
                for (k, boxes) in leaf.reach_tube.iter().enumerate() {
                    for b in boxes {
                        write!(out, "{},{},{},{},{},{}", row.subset_index, l0, l1, k, b.path, b.leg)?;
                        for iv in &b.bounds {
                            write!(out, ",{},{}", iv.lo, iv.hi)?;
                        }
                        writeln!(out)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits the initial lateral window into consecutive subsets of width
/// `subset_size`; the last one absorbs a remainder shorter than one subset.
pub fn subdivide_window(scenario: &Scenario, subset_size: f64) -> Result<Vec<[f64; 2]>> {
    if !(subset_size > 0.0 && subset_size.is_finite()) {
        return Err(Error::Config(format!(
            "subset size must be positive, got {subset_size}"
        )));
    }
    let width = scenario.initial_lateral_window;
    let lo = -0.5 * width;
    // Tolerate representation error in sizes that divide the window.
    let n = ((width / subset_size) - 1e-9).ceil().max(1.0) as usize;
    Ok((0..n)
        .map(|i| {
            let a = lo + width * i as f64 / n as f64;
            let b = if i + 1 == n {
                -lo
            } else {
                lo + width * (i + 1) as f64 / n as f64
            };
            [a, b]
        })
        .collect())
}

/// The state box of a lateral subset: `x` (or the leg's lateral coordinate)
/// carries one noise symbol, `v` and `theta` are exact.
pub fn initial_box(scenario: &Scenario, lateral: [f64; 2]) -> StateBox {
    let a = scenario.initial_state(lateral[1]);
    let b = scenario.initial_state(lateral[0]);
    let x = Interval::new(a.x.min(b.x), a.x.max(b.x));
    // The start lies in the first leg, where `x` is the lateral coordinate.
    debug_assert_eq!(a.y, b.y);
    let forms = [
        AffineForm::symbol(x.mid(), x.rad(), 0, 1),
        AffineForm::constant(a.y, 1),
        AffineForm::constant(a.v, 1),
        AffineForm::constant(a.theta, 1),
    ];
    StateBox {
        bounds: [x, Interval::point(a.y), Interval::point(a.v), Interval::point(a.theta)],
        symbolic: Some(SymbolicState { ids: vec![0], forms }),
    }
}

pub fn subdivide(scenario: &Scenario, subset_size: f64) -> Result<Vec<StateBox>> {
    Ok(subdivide_window(scenario, subset_size)?
        .into_iter()
        .map(|l| initial_box(scenario, l))
        .collect())
}

/// A live hybrid path.
#[derive(Clone, Debug)]
pub struct ReachPath {
    pub leg: Leg,
    pub states: StateBox,
}

/// Result of propagating one path through one control period.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub successors: Vec<ReachPath>,
    /// Smallest clearance lower bound over the swept region.
    pub clearance_bound: f64,
    pub nn_time: Duration,
}

/// Splits `states` where the leg's lateral coordinate crosses the inner
/// wall line. The part beyond it belongs to the next leg. A box that passed
/// the margin check cannot reach beyond that line outside the corner box.
fn handoff_split(path: &ReachPath, scenario: &Scenario) -> Vec<ReachPath> {
    let (w, s) = (scenario.track.w(), scenario.track.s());
    let b = path.states.bounds;
    let (u, _) = path.leg.to_local_interval(b[0], b[1], s);
    if u.hi <= w {
        return vec![path.clone()];
    }
    // Global coordinate equal to `u` up to sign, and the side that stays.
    let (dim, line, stay_below) = match path.leg.0 {
        0 => (0, w, true),
        1 => (1, s - w, false),
        2 => (0, s - w, false),
        _ => (1, w, true),
    };
    let cut = |lo: f64, hi: f64| {
        let (lo, hi) = (lo.max(b[dim].lo), hi.min(b[dim].hi));
        if lo > hi {
            return None;
        }
        let mut nb = b;
        nb[dim] = Interval::new(lo, hi);
        path.states.narrowed(nb)
    };
    let (stay, go) = if stay_below {
        (cut(f64::NEG_INFINITY, line), cut(line, f64::INFINITY))
    } else {
        (cut(line, f64::INFINITY), cut(f64::NEG_INFINITY, line))
    };
    let mut out = Vec::with_capacity(2);
    if u.lo < w {
        if let Some(st) = stay {
            out.push(ReachPath {
                leg: path.leg,
                states: st,
            });
        }
    }
    if let Some(st) = go {
        out.push(ReachPath {
            leg: path.leg.next(),
            states: st,
        });
    }
    out
}

/// One control period from `path`: one successor per consistent ray/wall
/// assignment (after splitting at a leg handoff).
pub fn step_reach(path: &ReachPath, controller: &MLPController, scenario: &Scenario) -> Result<StepOutcome> {
    let mut successors = Vec::new();
    let mut nn_time = Duration::ZERO;
    let mut clearance_bound = f64::INFINITY;
    for piece in handoff_split(path, scenario) {
        let cases = scan_enclosure(
            &piece.states,
            piece.leg,
            &scenario.rays,
            &scenario.track,
            &scenario.reach.enclosure,
        )?;
        for case in cases {
            let t0 = Instant::now();
            let steering = match &case.scan.forms {
                Some(forms) => {
                    let (f, iv) = controller.evaluate_affine(forms, &case.scan.intervals)?;
                    // The interval bound never exceeds the steering limit;
                    // the form's range can, and tan is undefined beyond it.
                    let limit = Interval::centered(0.0, 1.001 * controller.meta.output_scale_deg.to_radians());
                    if limit.contains_interval(&f.range()) {
                        f
                    } else {
                        AffineForm::from_interval(iv, f.n_symbols())
                    }
                }
                None => {
                    let n = case.states.symbolic.as_ref().map_or(0, |s| s.n_symbols());
                    AffineForm::from_interval(controller.evaluate_enclosure(&case.scan.intervals)?, n)
                }
            };
            nn_time += t0.elapsed();
            let flow = flow_enclosure_affine(
                &case.states,
                &steering,
                scenario.control_period,
                &scenario.dynamics,
                &scenario.reach.flow,
            )?;
            for slice in flow.tube.iter().chain(std::iter::once(&flow.end.bounds)) {
                clearance_bound = clearance_bound.min(box_clearance_lower_bound(&slice[0], &slice[1], &scenario.track));
            }
            successors.push(ReachPath {
                leg: piece.leg,
                states: flow.end,
            });
        }
    }
    Ok(StepOutcome {
        successors,
        clearance_bound,
        nn_time,
    })
}

fn compact(states: &mut StateBox, max_symbols: usize, next_id: &mut u64) {
    if let Some(sym) = states.symbolic.as_mut() {
        sym.fold_errors(next_id);
        sym.reduce(max_symbols, next_id);
    }
}

fn hull_cost(a: &StateBox, b: &StateBox) -> f64 {
    a.bounds.iter().zip(&b.bounds).map(|(x, y)| x.hull(y).width()).sum()
}

/// Joins the cheapest pair of same-leg paths until at most `cap` remain or
/// every leg holds a single path.
fn merge_paths(paths: &mut Vec<ReachPath>, cap: usize) {
    while paths.len() > cap {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..paths.len() {
            for j in i + 1..paths.len() {
                if paths[i].leg != paths[j].leg {
                    continue;
                }
                let c = hull_cost(&paths[i].states, &paths[j].states);
                if best.is_none_or(|(bc, _, _)| c < bc) {
                    best = Some((c, i, j));
                }
            }
        }
        let Some((_, i, j)) = best else { return };
        let b = paths.remove(j);
        let a = &mut paths[i];
        let bounds = a.states.hull(&b.states).bounds;
        let symbolic = match (&a.states.symbolic, &b.states.symbolic) {
            (Some(x), Some(y)) => Some(x.join(y)),
            _ => None,
        };
        a.states = StateBox { bounds, symbolic };
    }
}

fn tube_entry(paths: &[ReachPath]) -> Vec<TubeBox> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| TubeBox {
            path: i,
            leg: p.leg.0,
            bounds: p.states.bounds,
        })
        .collect()
}

/// Searches the subset for a simulated run that violates the margin.
fn find_counterexample(
    controller: &MLPController,
    scenario: &Scenario,
    lateral: [f64; 2],
) -> Result<Option<Counterexample>> {
    const SAMPLES: usize = 33;
    let margin = scenario.track.safety_margin;
    for i in 0..SAMPLES {
        let l = lateral[0] + (lateral[1] - lateral[0]) * i as f64 / (SAMPLES - 1) as f64;
        let tr = run_episode(controller, scenario, scenario.initial_state(l), None, 0)?;
        if tr.outcome != Outcome::Completed {
            let step = tr
                .steps
                .iter()
                .position(|s| s.min_clearance < margin)
                .unwrap_or(tr.steps.len() - 1);
            return Ok(Some(Counterexample {
                init_lateral: l,
                outcome: tr.outcome,
                min_clearance: tr.min_clearance(),
                step,
            }));
        }
    }
    Ok(None)
}

fn is_semantic(e: &Error) -> bool {
    matches!(e, Error::Enclosure(_))
}

/// Verifies one lateral subset without refinement.
pub fn verify_subset(
    scenario: &Scenario,
    controller: &MLPController,
    index: usize,
    lateral: [f64; 2],
    budget: &Budget,
) -> Result<SubsetVerdict> {
    let start = Instant::now();
    let margin = scenario.track.safety_margin;
    let settings = &scenario.reach;
    let mut next_id = 1u64;
    let mut paths = vec![ReachPath {
        leg: Leg(0),
        states: initial_box(scenario, lateral),
    }];
    let mut tube = vec![tube_entry(&paths)];
    let mut counts = Vec::with_capacity(scenario.steps());
    let mut nn_time = Duration::ZERO;
    let mut path_steps = 0usize;
    let mut failure = None;
    let mut resource_exceeded = false;

    let b0 = &paths[0].states.bounds;
    let c0 = box_clearance_lower_bound(&b0[0], &b0[1], &scenario.track);
    if c0 < margin {
        failure = Some(Failure {
            step: 0,
            path: 0,
            clearance_bound: Some(c0),
            reason: "initial set violates the margin".into(),
        });
    }

    'steps: for k in 1..=scenario.steps() {
        if failure.is_some() {
            break;
        }
        let mut next = Vec::new();
        for (pi, p) in paths.iter().enumerate() {
            let over_time = budget.wall_seconds.is_some_and(|s| start.elapsed().as_secs_f64() > s);
            let over_steps = budget.max_path_steps.is_some_and(|m| path_steps >= m);
            if over_time || over_steps {
                resource_exceeded = true;
                failure = Some(Failure {
                    step: k,
                    path: pi,
                    clearance_bound: None,
                    reason: "budget exhausted".into(),
                });
                break 'steps;
            }
            let out = match step_reach(p, controller, scenario) {
                Ok(o) => o,
                Err(e) if is_semantic(&e) => {
                    failure = Some(Failure {
                        step: k,
                        path: pi,
                        clearance_bound: None,
                        reason: e.to_string(),
                    });
                    break 'steps;
                }
                Err(e) => return Err(e),
            };
            nn_time += out.nn_time;
            path_steps += out.successors.len();
            if out.clearance_bound < margin {
                failure = Some(Failure {
                    step: k,
                    path: pi,
                    clearance_bound: Some(out.clearance_bound),
                    reason: "margin not established".into(),
                });
                break 'steps;
            }
            next.extend(out.successors);
        }
        for p in next.iter_mut() {
            compact(&mut p.states, settings.max_symbols, &mut next_id);
        }
        merge_paths(&mut next, settings.max_live_paths);
        counts.push(next.len());
        tube.push(tube_entry(&next));
        paths = next;
    }

    let (verdict, counterexample) = match &failure {
        None => (Verdict::Safe, None),
        Some(_) if resource_exceeded => (Verdict::Unknown, None),
        Some(_) => match find_counterexample(controller, scenario, lateral)? {
            Some(c) => (Verdict::Unsafe, Some(c)),
            None => (Verdict::Unknown, None),
        },
    };
    Ok(SubsetVerdict {
        subset_index: index,
        subset_interval: lateral,
        verdict,
        resource_exceeded,
        failure,
        counterexample,
        max_paths: counts.iter().copied().max().unwrap_or(1),
        path_count_per_step: counts,
        children: Vec::new(),
        nn_time: nn_time.as_secs_f64(),
        total_time: start.elapsed().as_secs_f64(),
        reach_tube: tube,
    })
}

fn verify_refining(
    scenario: &Scenario,
    controller: &MLPController,
    index: usize,
    lateral: [f64; 2],
    options: &VerifyOptions,
    depth: usize,
) -> Result<SubsetVerdict> {
    let mut v = verify_subset(scenario, controller, index, lateral, &options.budget)?;
    if v.verdict != Verdict::Unknown || v.resource_exceeded || depth >= options.refine_depth {
        return Ok(v);
    }
    let mid = 0.5 * (lateral[0] + lateral[1]);
    let halves = [[lateral[0], mid], [mid, lateral[1]]];
    let children = halves
        .par_iter()
        .map(|h| verify_refining(scenario, controller, index, *h, options, depth + 1))
        .collect::<Result<Vec<_>>>()?;
    v.verdict = if children.iter().all(|c| c.verdict == Verdict::Safe) {
        Verdict::Safe
    } else if children.iter().any(|c| c.verdict == Verdict::Unsafe) {
        Verdict::Unsafe
    } else {
        Verdict::Unknown
    };
    v.resource_exceeded = children.iter().any(|c| c.resource_exceeded);
    v.max_paths = v.max_paths.max(children.iter().map(|c| c.max_paths).max().unwrap_or(1));
    v.nn_time += children.iter().map(|c| c.nn_time).sum::<f64>();
    v.total_time += children.iter().map(|c| c.total_time).sum::<f64>();
    v.children = children;
    Ok(v)
}

/// Verifies every subset of the initial window. Subsets run in parallel on
/// the current rayon pool; the report does not depend on the thread count.
pub fn verify(scenario: &Scenario, controller: &MLPController, options: &VerifyOptions) -> Result<VerificationReport> {
    scenario.validate()?;
    controller.check_rays(scenario.rays.count)?;
    let subsets = subdivide_window(scenario, options.subset_size)?;
    let rows = subsets
        .par_iter()
        .enumerate()
        .map(|(i, l)| verify_refining(scenario, controller, i, *l, options, 0))
        .collect::<Result<Vec<_>>>()?;
    let half = 0.5 * scenario.initial_lateral_window;
    Ok(VerificationReport::from_subsets(
        options.subset_size,
        [-half, half],
        scenario.steps(),
        rows,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub trajectories: usize,
    pub states_checked: usize,
    pub violations: usize,
}

/// Simulates `samples` runs from random points of every verified subset
/// (plus both endpoints) and counts 10 Hz states outside the union of that
/// step's path boxes.
pub fn containment_audit(
    report: &VerificationReport,
    controller: &MLPController,
    scenario: &Scenario,
    samples: usize,
    seed: u64,
) -> Result<AuditResult> {
    let leaves: Vec<&SubsetVerdict> = report.subsets.iter().flat_map(|s| s.leaves()).collect();
    let per_leaf = leaves
        .par_iter()
        .enumerate()
        .map(|(i, leaf)| -> Result<(usize, usize, usize)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let [l0, l1] = leaf.subset_interval;
            let mut laterals = vec![l0, l1];
            laterals.extend((0..samples).map(|_| if l1 > l0 { rng.gen_range(l0..=l1) } else { l0 }));
            let (mut states, mut bad) = (0, 0);
            for l in &laterals {
                let tr = run_episode(controller, scenario, scenario.initial_state(*l), None, 0)?;
                for rec in &tr.steps {
                    let Some(boxes) = leaf.reach_tube.get(rec.k) else { break };
                    states += 1;
                    let s = rec.state.as_array();
                    let inside = boxes
                        .iter()
                        .any(|b| b.bounds.iter().zip(s).all(|(iv, v)| iv.contains(v)));
                    if !inside {
                        bad += 1;
                    }
                }
            }
            Ok((laterals.len(), states, bad))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_leaf.into_iter().fold(
        AuditResult {
            trajectories: 0,
            states_checked: 0,
            violations: 0,
        },
        |acc, (t, s, v)| AuditResult {
            trajectories: acc.trajectories + t,
            states_checked: acc.states_checked + s,
            violations: acc.violations + v,
        },
    ))
}

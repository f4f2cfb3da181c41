//! Exact closed-loop episodes at the control rate, rewards and Monte Carlo
//! campaigns.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::MLPController;
use crate::dynamics::{integrate_step, CarState};
use crate::error::{Error, Result};
use crate::lidar::{apply_faults, raycast_scan, FaultConfig, LidarScan};
use crate::scenario::Scenario;
use crate::track::{localize, state_clearance, wall_segments, Point, Region, WallSegment};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub g_p: f64,
    pub g_n: f64,
    pub crash_penalty: f64,
    /// Penalize the steering in degrees (otherwise radians).
    pub penalty_in_degrees: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            g_p: 10.0,
            g_n: 0.05,
            crash_penalty: -100.0,
            penalty_in_degrees: true,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_p > 0.0 && self.g_n >= 0.0 && self.crash_penalty.is_finite()) {
            return Err(Error::Config(format!("invalid reward parameters {self:?}")));
        }
        Ok(())
    }
}

/// Per-step reward; the steering penalty is waived in turns.
pub fn reward(delta: f64, crashed: bool, in_turn: bool, params: &RewardParams) -> f64 {
    if crashed {
        params.crash_penalty
    } else if in_turn {
        params.g_p
    } else {
        let d = if params.penalty_in_degrees {
            delta.to_degrees()
        } else {
            delta
        };
        params.g_p - params.g_n * d * d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    Crashed,
    MarginViolated,
}

/// One control step. The last record of a trace holds the terminal state
/// and has zero steering and reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub state: CarState,
    pub delta: f64,
    pub scan: LidarScan,
    pub reward: f64,
    /// Smallest clearance seen up to and including this state.
    pub min_clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub seed: u64,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn min_clearance(&self) -> f64 {
        self.steps.last().map_or(f64::INFINITY, |s| s.min_clearance)
    }

    pub fn final_state(&self) -> CarState {
        self.steps.last().expect("non-empty trace").state
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "k,t,x,y,v,theta,delta_rad,reward,min_clearance,fault_count")?;
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.k,
                s.t,
                s.state.x,
                s.state.y,
                s.state.v,
                s.state.theta,
                s.delta,
                s.reward,
                s.min_clearance,
                s.scan.fault_count()
            )?;
        }
        Ok(())
    }

    /// One row per step: `k` followed by the ray distances.
    pub fn write_scan_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.steps.first().map_or(0, |s| s.scan.distances.len());
        let header: Vec<String> = (0..n).map(|i| format!("ray{i}")).collect();
        writeln!(out, "k,{}", header.join(","))?;
        for s in &self.steps {
            let row: Vec<String> = s.scan.distances.iter().map(|d| d.to_string()).collect();
            writeln!(out, "{},{}", s.k, row.join(","))?;
        }
        Ok(())
    }
}

/// Whether the straight move `p → q` touches a wall.
pub fn crosses_wall(p: Point, q: Point, segments: &[WallSegment]) -> bool {
    let (dx, dy) = (q.x - p.x, q.y - p.y);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return false;
    }
    let dir = (dx / len, dy / len);
    segments.iter().any(|s| s.ray_hit(p, dir).is_some_and(|t| t <= len))
}

/// Stepping state shared by in-process episodes and the environment server.
#[derive(Clone, Debug)]
pub struct Episode {
    scenario: Scenario,
    segments: Vec<WallSegment>,
    faults: Option<FaultConfig>,
    state: CarState,
    k: usize,
    min_clearance: f64,
    done: bool,
    crashed: bool,
    scan: LidarScan,
    max_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub scan: LidarScan,
    pub reward: f64,
    pub done: bool,
    pub crashed: bool,
    pub state: CarState,
    pub t: f64,
}

impl Episode {
    pub fn new(scenario: &Scenario, init: CarState, faults: Option<FaultConfig>) -> Result<Self> {
        Self::with_steps(scenario, init, faults, scenario.steps())
    }

    pub fn with_steps(
        scenario: &Scenario,
        init: CarState,
        faults: Option<FaultConfig>,
        max_steps: usize,
    ) -> Result<Self> {
        let segments = wall_segments(&scenario.track)?;
        if let Some(f) = &faults {
            f.validate(&scenario.rays)?;
        }
        localize(&init, &scenario.track)?;
        let c0 = state_clearance(&init, &scenario.track);
        let mut ep = Episode {
            scenario: scenario.clone(),
            segments,
            faults,
            state: init,
            k: 0,
            min_clearance: c0,
            done: false,
            crashed: c0 <= 0.0,
            scan: LidarScan {
                distances: Vec::new(),
                fault_mask: Vec::new(),
            },
            max_steps,
        };
        ep.scan = ep.observe()?;
        Ok(ep)
    }

    fn observe(&self) -> Result<LidarScan> {
        let sc = &self.scenario;
        let scan = raycast_scan(&self.state, &sc.rays, &self.segments, &sc.track)?;
        Ok(match &self.faults {
            Some(f) => {
                let pose = localize(&self.state, &sc.track)?;
                apply_faults(&scan, &pose, f, &sc.rays, &sc.track, self.k as u64)
            }
            None => scan,
        })
    }

    pub fn scan(&self) -> &LidarScan {
        &self.scan
    }

    pub fn state(&self) -> CarState {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.k as f64 * self.scenario.control_period
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn min_clearance(&self) -> f64 {
        self.min_clearance
    }

    /// Applies `delta` (radians) for one control period.
    pub fn step(&mut self, delta: f64) -> Result<Transition> {
        if self.done {
            return Err(Error::Config("episode finished; send reset".into()));
        }
        let sc = &self.scenario;
        let in_turn = localize(&self.state, &sc.track)
            .map(|p| p.region == Region::Region2)
            .unwrap_or(false);
        let next = integrate_step(&self.state, delta, sc.control_period, &sc.dynamics);
        let c = state_clearance(&next, &sc.track);
        let crossed = crosses_wall(
            Point::new(self.state.x, self.state.y),
            Point::new(next.x, next.y),
            &self.segments,
        );
        self.crashed = c <= 0.0 || crossed || !next.is_finite();
        self.min_clearance = self.min_clearance.min(c);
        self.state = next;
        self.k += 1;
        let r = reward(delta, self.crashed, in_turn, &sc.reward);
        self.done = self.crashed || self.k >= self.max_steps;
        if !self.crashed {
            self.scan = self.observe()?;
        }
        Ok(Transition {
            scan: self.scan.clone(),
            reward: r,
            done: self.done,
            crashed: self.crashed,
            state: self.state,
            t: self.time(),
        })
    }
}

/// Runs a full episode from `init`. `faults` replaces the scenario's fault
/// configuration; its seed is overridden by `seed`.
pub fn run_episode(
    controller: &MLPController,
    scenario: &Scenario,
    init: CarState,
    faults: Option<&FaultConfig>,
    seed: u64,
) -> Result<EpisodeTrace> {
    controller.check_rays(scenario.rays.count)?;
    let faults = faults.cloned().map(|f| FaultConfig { seed, ..f });
    let mut ep = Episode::new(scenario, init, faults)?;
    let mut steps = Vec::with_capacity(scenario.steps() + 1);
    let mut crashed = ep.crashed;
    while !ep.is_done() && !crashed {
        let scan = ep.scan().clone();
        let delta = controller.evaluate(&scan);
        let (k, t, state, min_c) = (ep.step_index(), ep.time(), ep.state(), ep.min_clearance());
        let tr = ep.step(delta)?;
        crashed = tr.crashed;
        steps.push(StepRecord {
            k,
            t,
            state,
            delta,
            scan,
            reward: tr.reward,
            min_clearance: min_c,
        });
    }
    let last_scan = if crashed {
        LidarScan {
            distances: vec![0.0; scenario.rays.count],
            fault_mask: vec![false; scenario.rays.count],
        }
    } else {
        ep.scan().clone()
    };
    steps.push(StepRecord {
        k: ep.step_index(),
        t: ep.time(),
        state: ep.state(),
        delta: 0.0,
        scan: last_scan,
        reward: 0.0,
        min_clearance: ep.min_clearance(),
    });
    let outcome = if crashed {
        Outcome::Crashed
    } else if ep.min_clearance() < scenario.track.safety_margin {
        Outcome::MarginViolated
    } else {
        Outcome::Completed
    };
    Ok(EpisodeTrace { steps, outcome, seed })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub init_lateral: f64,
    pub outcome: Outcome,
    pub min_clearance: f64,
    pub total_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    /// Runs without a crash.
    pub safe: usize,
    /// Runs that also kept the safety margin.
    pub margin_safe: usize,
    pub faults: Option<FaultConfig>,
    pub seed: u64,
    pub per_run: Vec<RunSummary>,
}

impl MonteCarloReport {
    pub fn safe_rate(&self) -> f64 {
        self.safe as f64 / self.runs as f64
    }

    /// `"k/n safe"`.
    pub fn summary(&self) -> String {
        format!("{}/{} safe", self.safe, self.runs)
    }
}

/// Episodes from initial lateral offsets drawn uniformly in the scenario's
/// window. Each run gets its own sub-seed, so results do not depend on the
/// thread count.
pub fn monte_carlo(
    controller: &MLPController,
    scenario: &Scenario,
    n_runs: usize,
    faults: Option<&FaultConfig>,
    seed: u64,
) -> Result<MonteCarloReport> {
    if n_runs == 0 {
        return Err(Error::Config("at least one run is required".into()));
    }
    controller.check_rays(scenario.rays.count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.5 * scenario.initial_lateral_window;
    let plan: Vec<(f64, u64)> = (0..n_runs)
        .map(|_| {
            let lat = if half > 0.0 { rng.gen_range(-half..=half) } else { 0.0 };
            (lat, rng.gen())
        })
        .collect();
    let per_run = plan
        .par_iter()
        .enumerate()
        .map(|(i, (lat, sub))| {
            let tr = run_episode(controller, scenario, scenario.initial_state(*lat), faults, *sub)?;
            Ok(RunSummary {
                run: i,
                seed: *sub,
                init_lateral: *lat,
                outcome: tr.outcome,
                min_clearance: tr.min_clearance(),
                total_reward: tr.total_reward(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let safe = per_run.iter().filter(|r| r.outcome != Outcome::Crashed).count();
    let margin_safe = per_run.iter().filter(|r| r.outcome == Outcome::Completed).count();
    Ok(MonteCarloReport {
        runs: n_runs,
        safe,
        margin_safe,
        faults: faults.cloned(),
        seed,
        per_run,
    })
}

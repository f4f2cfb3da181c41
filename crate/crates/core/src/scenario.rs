//! Scenario configuration shared by simulation and verification.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closed_loop::RewardParams;
use crate::dynamics::{CarState, DynamicsParams, FlowSettings};
use crate::error::{Error, Result};
use crate::lidar::{EnclosureSettings, FaultConfig, RayConfig};
use crate::track::{Leg, TrackConfig};

/// Verification tuning knobs that do not change the semantics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachSettings {
    pub flow: FlowSettings,
    pub enclosure: EnclosureSettings,
    /// Cap on the number of noise symbols carried per path.
    pub max_symbols: usize,
    /// Live paths per subset above which the two closest paths in the same
    /// leg are joined.
    pub max_live_paths: usize,
}

impl Default for ReachSettings {
    fn default() -> Self {
        ReachSettings {
            flow: FlowSettings::default(),
            enclosure: EnclosureSettings::default(),
            max_symbols: 24,
            max_live_paths: 8,
        }
    }
}

/// The scenario file. Unknown keys are rejected; missing keys take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub track: TrackConfig,
    pub rays: RayConfig,
    pub dynamics: DynamicsParams,
    /// Seconds; a positive multiple of the control period.
    pub horizon: f64,
    pub control_period: f64,
    /// Width of the initial lateral window, centred on the hallway midline.
    pub initial_lateral_window: f64,
    pub initial_speed: f64,
    /// Forward coordinate of the start in the first leg, meters from the
    /// outer wall behind it.
    pub start_offset: f64,
    pub faults: Option<FaultConfig>,
    pub reward: RewardParams,
    pub reach: ReachSettings,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            track: TrackConfig::default(),
            rays: RayConfig::default(),
            dynamics: DynamicsParams::default(),
            horizon: 7.0,
            control_period: 0.1,
            initial_lateral_window: 0.2,
            initial_speed: 0.0,
            start_offset: 2.0,
            faults: None,
            reward: RewardParams::default(),
            reach: ReachSettings::default(),
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.track.validate()?;
        self.rays.validate()?;
        self.dynamics.validate()?;
        self.reward.validate()?;
        if let Some(f) = &self.faults {
            f.validate(&self.rays)?;
        }
        if !(self.control_period > 0.0 && self.control_period.is_finite()) {
            return Err(Error::Config("control_period must be positive".into()));
        }
        let steps = self.horizon / self.control_period;
        if !(self.horizon > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "horizon {} is not a positive multiple of the control period {}",
                self.horizon, self.control_period
            )));
        }
        let w = self.track.w();
        if !(self.initial_lateral_window >= 0.0 && self.initial_lateral_window <= w - 2.0 * self.track.safety_margin) {
            return Err(Error::Config(format!(
                "initial_lateral_window {} must lie in [0, w - 2 margin]",
                self.initial_lateral_window
            )));
        }
        if !(self.start_offset > w && self.start_offset < self.track.s() - w) {
            return Err(Error::Config(format!(
                "start_offset {} must lie inside the first hallway ({w}, {})",
                self.start_offset,
                self.track.s() - w
            )));
        }
        if !(self.initial_speed >= 0.0) {
            return Err(Error::Config("initial_speed must be non-negative".into()));
        }
        if self.reach.max_symbols < 8 {
            return Err(Error::Config("reach.max_symbols must be at least 8".into()));
        }
        if self.reach.max_live_paths == 0 || self.reach.max_live_paths > self.reach.enclosure.max_cases {
            return Err(Error::Config(
                "reach.max_live_paths must lie in [1, enclosure.max_cases]".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.control_period).round() as usize
    }

    /// Start state at lateral offset `lateral` (leftward positive) from
    /// the hallway midline.
    pub fn initial_state(&self, lateral: f64) -> CarState {
        let (x, y) = self.start_point(lateral);
        CarState::new(x, y, self.initial_speed, FRAC_PI_2)
    }

    fn start_point(&self, lateral: f64) -> (f64, f64) {
        let u = 0.5 * self.track.w() - lateral;
        Leg(0).to_global(u, self.start_offset, self.track.s())
    }

    /// A straight-hallway variant: short horizon, far from the first turn.
    pub fn straight_hallway() -> Self {
        Scenario {
            horizon: 2.0,
            start_offset: 2.0,
            ..Scenario::default()
        }
    }

    /// The one-turn scenario shipped as `fixtures/single_turn.json`.
    pub fn single_turn() -> Self {
        Scenario {
            track: TrackConfig {
                outer_side_length: 14.0,
                ..TrackConfig::default()
            },
            ..Scenario::default()
        }
    }
}

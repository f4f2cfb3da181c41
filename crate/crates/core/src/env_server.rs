//! Newline-delimited JSON environment for external trainers. Each
//! connection owns one episode state machine.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::closed_loop::Episode;
use crate::controller::MAX_STEERING_DEG;
use crate::dynamics::CarState;
use crate::error::Result;
use crate::lidar::FaultConfig;
use crate::scenario::Scenario;

/// Initial lateral offset used when a reset (or a simulation) gives only a
/// seed: uniform over the scenario's window.
pub fn initial_lateral_for_seed(scenario: &Scenario, seed: u64) -> f64 {
    let half = 0.5 * scenario.initial_lateral_window;
    if half > 0.0 {
        ChaCha8Rng::seed_from_u64(seed).gen_range(-half..=half)
    } else {
        0.0
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
enum Request {
    Reset {
        seed: u64,
        #[serde(default)]
        init_lateral: Option<f64>,
    },
    Step {
        steering_deg: f64,
    },
}

#[derive(Serialize)]
struct StateMsg {
    x: f64,
    y: f64,
    v: f64,
    theta: f64,
}

impl From<CarState> for StateMsg {
    fn from(s: CarState) -> Self {
        StateMsg {
            x: s.x,
            y: s.y,
            v: s.v,
            theta: s.theta,
        }
    }
}

/// How an episode ended, reported once per episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeEnd {
    pub seed: u64,
    pub steps: usize,
    pub crashed: bool,
    pub total_reward: f64,
}

/// One client's protocol state.
pub struct Session {
    scenario: Scenario,
    faults: Option<FaultConfig>,
    max_steps: usize,
    episode: Option<(Episode, u64, f64)>,
    finished: Vec<EpisodeEnd>,
}

impl Session {
    /// `max_steps` bounds the episode length (the horizon by default).
    pub fn new(scenario: Scenario, faults: Option<FaultConfig>, max_steps: usize) -> Self {
        Session {
            scenario,
            faults,
            max_steps,
            episode: None,
            finished: Vec::new(),
        }
    }

    /// Episodes that ended since the last call.
    pub fn take_finished(&mut self) -> Vec<EpisodeEnd> {
        std::mem::take(&mut self.finished)
    }

    /// Handles one request line and returns the reply line (no newline).
    pub fn handle_line(&mut self, line: &str) -> String {
        let reply = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => Err(format!("malformed request: {e}")),
        };
        match reply {
            Ok(v) => v.to_string(),
            Err(msg) => json!({ "error": msg }).to_string(),
        }
    }

    fn handle(&mut self, req: Request) -> std::result::Result<Value, String> {
        match req {
            Request::Reset { seed, init_lateral } => {
                let lateral = init_lateral.unwrap_or_else(|| initial_lateral_for_seed(&self.scenario, seed));
                let faults = self.faults.clone().map(|f| FaultConfig { seed, ..f });
                let init = self.scenario.initial_state(lateral);
                let ep =
                    Episode::with_steps(&self.scenario, init, faults, self.max_steps).map_err(|e| e.to_string())?;
                let reply = json!({
                    "scan": ep.scan().distances,
                    "state": StateMsg::from(ep.state()),
                    "t": ep.time(),
                });
                self.episode = Some((ep, seed, 0.0));
                Ok(reply)
            }
            Request::Step { steering_deg } => {
                let Some((ep, seed, total)) = self.episode.as_mut() else {
                    return Err("no episode; send reset".into());
                };
                if ep.is_done() {
                    return Err("episode finished; send reset".into());
                }
                if !(steering_deg.abs() <= MAX_STEERING_DEG) {
                    return Err(format!(
                        "steering_deg must lie in [-{MAX_STEERING_DEG}, {MAX_STEERING_DEG}], got {steering_deg}"
                    ));
                }
                let tr = ep.step(steering_deg.to_radians()).map_err(|e| e.to_string())?;
                *total += tr.reward;
                if tr.done {
                    self.finished.push(EpisodeEnd {
                        seed: *seed,
                        steps: ep.step_index(),
                        crashed: tr.crashed,
                        total_reward: *total,
                    });
                }
                Ok(json!({
                    "scan": tr.scan.distances,
                    "reward": tr.reward,
                    "done": tr.done,
                    "crashed": tr.crashed,
                    "state": StateMsg::from(tr.state),
                    "t": tr.t,
                }))
            }
        }
    }
}

/// Serves one connection until the client disconnects.
pub fn serve_connection(
    stream: TcpStream,
    scenario: &Scenario,
    faults: Option<&FaultConfig>,
    max_steps: usize,
    on_episode: &(dyn Fn(&EpisodeEnd) + Sync),
) -> Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let mut session = Session::new(scenario.clone(), faults.cloned(), max_steps);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        for end in session.take_finished() {
            on_episode(&end);
        }
    }
    Ok(())
}

/// Accepts connections until `stop` is set, one thread per connection.
pub fn serve_env(
    listener: TcpListener,
    scenario: &Scenario,
    faults: Option<&FaultConfig>,
    max_steps: usize,
    stop: Arc<AtomicBool>,
    on_episode: &(dyn Fn(&EpisodeEnd) + Sync),
) -> Result<()> {
    std::thread::scope(|scope| {
        for stream in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(_) => continue,
            };
            scope.spawn(move || {
                // A failed connection only ends that session.
                let _ = serve_connection(stream, scenario, faults, max_steps, on_episode);
            });
        }
    });
    Ok(())
}

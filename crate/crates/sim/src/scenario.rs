//! Scenario files: who joins when, doing what, over which network.

use std::collections::BTreeSet;
use std::path::Path;

use blocks_analytics::Report;
use blocks_core::anchor::DEFAULT_FRESHNESS_MS;
use blocks_core::{LocationMode, Millis, UserId, WorldId};
use blocks_server::WorldSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::behavior::Registry;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioInvalid {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Rule(String),
}

fn rule(msg: impl Into<String>) -> ScenarioInvalid {
    ScenarioInvalid::Rule(msg.into())
}

/// When collaborators are active relative to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollabMode {
    ColocatedSync,
    RemoteSync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WorldMode {
    #[default]
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSetup {
    pub id: String,
    #[serde(default)]
    pub mode: WorldMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<String>,
    #[serde(default = "yes")]
    pub seed_starter: bool,
    #[serde(default = "default_freshness")]
    pub freshness_window_ms: Millis,
}

fn yes() -> bool {
    true
}

fn default_freshness() -> Millis {
    DEFAULT_FRESHNESS_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NetworkSetup {
    #[serde(default)]
    pub latency_ms: Millis,
    #[serde(default)]
    pub jitter_ms: Millis,
    /// Probability that any one message is lost.
    #[serde(default)]
    pub drop: f64,
    /// Forced disconnects per bot, at random times inside its sessions.
    #[serde(default)]
    pub reconnects: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    /// Mean pause between a bot's actions; each pause is drawn from [0.5, 1.5) times this.
    pub think_ms: Millis,
    /// Unacknowledged commands and unanswered joins are resent after this.
    /// Defaults to twice the worst one-way delay plus 200 ms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resend_ms: Option<Millis>,
    /// An idle bot asks for missed events this often.
    pub keepalive_ms: Millis,
    pub reconnect_delay_ms: Millis,
    pub marker_refresh_ms: Millis,
    /// How often the bot's wake-up timer fires.
    pub wake_ms: Millis,
    /// Longest the run may continue past `duration_ms` waiting for replicas to settle.
    pub quiescence_limit_ms: Millis,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            think_ms: 3_000,
            resend_ms: None,
            keepalive_ms: 5_000,
            reconnect_delay_ms: 1_000,
            marker_refresh_ms: 60_000,
            wake_ms: 250,
            quiescence_limit_ms: 600_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BotSetup {
    pub name: String,
    /// Drawn from the seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<UserId>,
    pub behavior: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    /// `[join, leave]` offsets from the start of the run.
    pub sessions: Vec<[Millis; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: Millis,
    /// Wall-clock time the virtual clock starts at.
    #[serde(default = "default_start")]
    pub start_at: Millis,
    pub mode: CollabMode,
    pub world: WorldSetup,
    #[serde(default)]
    pub network: NetworkSetup,
    #[serde(default)]
    pub timing: Timing,
    #[serde(default = "default_window")]
    pub sync_window_ms: Millis,
    pub bots: Vec<BotSetup>,
    /// Report fields the script is meant to produce, by field name.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub expect: serde_json::Map<String, Value>,
}

fn default_start() -> Millis {
    1_700_000_000_000
}

fn default_window() -> Millis {
    blocks_analytics::DEFAULT_SYNC_WINDOW_MS
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioInvalid> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioInvalid> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn world_id(&self) -> WorldId {
        WorldId::new(self.world.id.clone())
    }

    pub fn world_spec(&self) -> WorldSpec {
        let location = match (&self.world.mode, &self.world.marker) {
            (WorldMode::Dependent, Some(m)) => LocationMode::Dependent { marker: m.clone() },
            _ => LocationMode::Independent,
        };
        WorldSpec {
            id: self.world_id(),
            location,
            seed_starter: self.world.seed_starter,
            freshness_window_ms: self.world.freshness_window_ms,
        }
    }

    pub fn resend_ms(&self) -> Millis {
        self.timing.resend_ms.unwrap_or(2 * (self.network.latency_ms + self.network.jitter_ms) + 200)
    }

    /// Checks everything `run_scenario` relies on.
    pub fn validate(&self, registry: &Registry) -> Result<(), ScenarioInvalid> {
        if self.version != SCENARIO_VERSION {
            return Err(rule(format!("version {} is not supported (expected {SCENARIO_VERSION})", self.version)));
        }
        if self.duration_ms == 0 {
            return Err(rule("duration_ms must be positive"));
        }
        if !self.world_id().is_valid() {
            return Err(rule(format!("bad world id {:?}", self.world.id)));
        }
        if self.world.mode == WorldMode::Dependent && self.world.marker.as_deref().is_none_or(str::is_empty) {
            return Err(rule("a dependent world needs a marker"));
        }
        let net = &self.network;
        if !(0.0..1.0).contains(&net.drop) {
            return Err(rule(format!("drop must be in [0, 1), got {}", net.drop)));
        }
        let t = &self.timing;
        if t.think_ms == 0 || t.keepalive_ms == 0 || t.wake_ms == 0 || t.marker_refresh_ms == 0 || self.resend_ms() == 0 {
            return Err(rule("timing intervals must be positive"));
        }
        if self.world.mode == WorldMode::Dependent && t.marker_refresh_ms >= self.world.freshness_window_ms {
            return Err(rule("marker_refresh_ms must be shorter than the freshness window"));
        }
        if self.bots.is_empty() {
            return Err(rule("no bots"));
        }
        let mut names = BTreeSet::new();
        let mut users = BTreeSet::new();
        for bot in &self.bots {
            if !names.insert(bot.name.as_str()) {
                return Err(rule(format!("duplicate bot name {:?}", bot.name)));
            }
            if let Some(u) = bot.user {
                if u.is_system() || !users.insert(u) {
                    return Err(rule(format!("bot {:?}: reserved or duplicate user id", bot.name)));
                }
            }
            registry.build(&bot.behavior, &bot.params).map_err(|e| rule(format!("bot {:?}: {e}", bot.name)))?;
            if bot.sessions.is_empty() {
                return Err(rule(format!("bot {:?} has no sessions", bot.name)));
            }
            let mut prev_leave = None;
            for [join, leave] in &bot.sessions {
                if join >= leave {
                    return Err(rule(format!("bot {:?}: session [{join}, {leave}] is empty", bot.name)));
                }
                if *leave > self.duration_ms {
                    return Err(rule(format!(
                        "bot {:?}: session [{join}, {leave}] is outside the duration {}",
                        bot.name, self.duration_ms
                    )));
                }
                if prev_leave.is_some_and(|p| *join <= p) {
                    return Err(rule(format!("bot {:?}: sessions overlap or are out of order", bot.name)));
                }
                prev_leave = Some(*leave);
            }
        }
        if self.mode == CollabMode::Async {
            self.check_async_gaps()?;
        }
        for key in self.expect.keys() {
            if !crate::truth::REPORT_FIELDS.contains(&key.as_str()) {
                return Err(rule(format!("expect: unknown report field {key:?}")));
            }
        }
        Ok(())
    }

    /// `expect` entries the report disagrees with, as "field: got X, expected Y".
    pub fn unmet(&self, report: &Report) -> Vec<String> {
        let got = serde_json::to_value(report).expect("report serializes");
        self.expect
            .iter()
            .filter(|(k, want)| got.get(k.as_str()) != Some(want))
            .map(|(k, want)| format!("{k}: got {}, expected {want}", got.get(k.as_str()).unwrap_or(&Value::Null)))
            .collect()
    }

    /// Sessions of different bots must be further apart than the sync window,
    /// so no two people's adds can ever count as simultaneous.
    fn check_async_gaps(&self) -> Result<(), ScenarioInvalid> {
        let w = self.sync_window_ms;
        for (i, a) in self.bots.iter().enumerate() {
            for b in &self.bots[i + 1..] {
                for [aj, al] in &a.sessions {
                    for [bj, bl] in &b.sessions {
                        let apart = bj.saturating_sub(*al) > w || aj.saturating_sub(*bl) > w;
                        if !apart {
                            return Err(rule(format!(
                                "async mode: sessions of {:?} and {:?} are within {w} ms of each other",
                                a.name, b.name
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

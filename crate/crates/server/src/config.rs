//! Shared-world definitions, read from the server's config file.

use std::path::Path;

use blocks_core::anchor::DEFAULT_FRESHNESS_MS;
use blocks_core::{LocationMode, Millis, WorldId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("world {0}: {1}")]
    Invalid(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Independent,
    Dependent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorld {
    id: String,
    #[serde(default = "independent")]
    location_mode: ModeName,
    #[serde(default)]
    marker_id: Option<String>,
    #[serde(default)]
    seed_starter: bool,
    #[serde(default = "default_freshness")]
    freshness_window_ms: Millis,
}

fn independent() -> ModeName {
    ModeName::Independent
}

fn default_freshness() -> Millis {
    DEFAULT_FRESHNESS_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    worlds: Vec<RawWorld>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldSpec {
    pub id: WorldId,
    pub location: LocationMode,
    pub seed_starter: bool,
    pub freshness_window_ms: Millis,
}

impl WorldSpec {
    pub fn independent(id: impl Into<String>) -> Self {
        Self {
            id: WorldId::new(id),
            location: LocationMode::Independent,
            seed_starter: false,
            freshness_window_ms: DEFAULT_FRESHNESS_MS,
        }
    }
}

/// The worlds used when no config file is given: one seeded, independent "ourworld".
pub fn default_worlds() -> Vec<WorldSpec> {
    vec![WorldSpec { seed_starter: true, ..WorldSpec::independent("ourworld") }]
}

pub fn parse_config(text: &str) -> Result<Vec<WorldSpec>, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text)?;
    let mut specs: Vec<WorldSpec> = Vec::new();
    for w in raw.worlds {
        let invalid = |why: &str| ConfigError::Invalid(w.id.clone(), why.to_owned());
        let id = WorldId::new(w.id.clone());
        if !id.is_valid() {
            return Err(invalid("ids use letters, digits, '-' and '_' only"));
        }
        if id.as_str().starts_with("my-") {
            return Err(invalid("the my- prefix is reserved for personal worlds"));
        }
        if specs.iter().any(|s| s.id == id) {
            return Err(invalid("defined twice"));
        }
        let location = match (w.location_mode, w.marker_id) {
            (ModeName::Independent, None) => LocationMode::Independent,
            (ModeName::Independent, Some(_)) => return Err(invalid("marker_id given for an independent world")),
            (ModeName::Dependent, Some(marker)) if !marker.is_empty() => LocationMode::Dependent { marker },
            (ModeName::Dependent, _) => return Err(invalid("dependent worlds need a marker_id")),
        };
        specs.push(WorldSpec { id, location, seed_starter: w.seed_starter, freshness_window_ms: w.freshness_window_ms });
    }
    Ok(specs)
}

pub fn load_config(path: &Path) -> Result<Vec<WorldSpec>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn committed_fixture_parses() {
        let specs = parse_config(include_str!("../fixtures/worlds.json")).unwrap();
        assert_eq!(specs.len(), 2);
        assert!(specs[0].seed_starter);
        assert_eq!(specs[1].location, LocationMode::Dependent { marker: "poster-1".into() });
        assert_eq!(specs[1].freshness_window_ms, 120_000);
    }

    #[test]
    fn rejects_bad_definitions() {
        for bad in [
            r#"{"worlds":[{"id":"a","location_mode":"dependent"}]}"#,
            r#"{"worlds":[{"id":"a","marker_id":"m"}]}"#,
            r#"{"worlds":[{"id":"a"},{"id":"a"}]}"#,
            r#"{"worlds":[{"id":"my-x"}]}"#,
            r#"{"worlds":[{"id":"a/b"}]}"#,
            r#"{"worlds":[{"id":"a","colour":1}]}"#,
        ] {
            assert!(parse_config(bad).is_err(), "{bad}");
        }
    }
}

//! Built-in scenario catalog: scene + configuration pairs shipped under
//! `scenarios/`, each tagged with the regime it is expected to reproduce.

use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::sim::scene::Scene;

pub const REGIMES: [&str; 5] = [
    "NOMINAL",
    "RANGE-LIMITED",
    "FOV-LIMITED",
    "DEGENERATE-WALL",
    "DUAL-RECOVERY",
];

struct Entry {
    name: &'static str,
    config: &'static str,
    scene: &'static str,
}

macro_rules! entry {
    ($name:literal, $scene:literal) => {
        Entry {
            name: $name,
            config: include_str!(concat!("../../../scenarios/", $name, ".toml")),
            scene: include_str!(concat!("../../../scenarios/", $scene, ".scene.json")),
        }
    };
}

const CATALOG: &[Entry] = &[
    entry!("office-loop", "office"),
    entry!("dual-office", "office"),
    entry!("hall-l515", "hall"),
    entry!("office-l515", "office"),
    entry!("stairwell-kinect", "stairwell"),
    entry!("wall-stare", "wall-stare"),
    entry!("wall-stare-dual", "wall-stare"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub name: String,
    pub regime: String,
    pub description: String,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub info: ScenarioInfo,
    pub config: RunConfig,
    pub scene: Scene,
}

fn parse(entry: &Entry) -> Result<Scenario> {
    let origin = Path::new("scenarios").join(format!("{}.toml", entry.name));
    let config = RunConfig::from_toml(entry.config, &origin)?;
    let scene = Scene::from_json(entry.scene, &Path::new("scenarios").join(&config.sim.scene))?;
    let meta = config
        .scenario
        .clone()
        .ok_or_else(|| Error::Config(format!("scenario {} lacks a [scenario] header", entry.name)))?;
    Ok(Scenario {
        info: ScenarioInfo {
            name: meta.name,
            regime: meta.regime,
            description: meta.description,
        },
        config,
        scene,
    })
}

/// Catalog in a fixed order.
pub fn list_scenarios() -> Vec<ScenarioInfo> {
    CATALOG
        .iter()
        .map(|e| parse(e).expect("built-in scenario parses").info)
        .collect()
}

pub fn load_scenario(name: &str) -> Result<Scenario> {
    let entry = CATALOG.iter().find(|e| e.name == name).ok_or_else(|| {
        let known: Vec<_> = CATALOG.iter().map(|e| e.name).collect();
        Error::Config(format!("unknown scenario {name:?} (known: {})", known.join(", ")))
    })?;
    parse(entry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_covers_every_regime() {
        let list = list_scenarios();
        assert!(list.len() >= 5);
        for regime in REGIMES {
            assert!(list.iter().any(|s| s.regime == regime), "{regime}");
        }
        for info in &list {
            let s = load_scenario(&info.name).unwrap();
            assert_eq!(s.info, *info);
        }
    }

    #[test]
    fn office_loop_uses_tilted_mid360() {
        let s = load_scenario("office-loop").unwrap();
        assert_eq!(s.config.sim.trajectory, "walk-loop");
        assert_eq!(s.config.sim.l1.preset, "mid360");
        assert_eq!(s.config.sim.l1.mount, "helmet-tilted");
        assert_eq!(s.config.sim.duration, 60.0);
    }

    #[test]
    fn unknown_scenario_is_an_error() {
        assert!(load_scenario("moon-base").is_err());
    }
}

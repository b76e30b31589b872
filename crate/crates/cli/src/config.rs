//! Run configuration: defaults, then an optional JSON config file, then
//! `--set path=value` overrides, then dedicated flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use stplan::sim::{Scenario, SimConfig};
use stplan::PairingMode;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub sim: SimConfig,
    /// Seeds for `compare`; `sim` uses the first.
    pub seeds: Vec<u64>,
    /// Exchanges the speed ranges of the two traffic lanes.
    pub swap_lane_table: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            seeds: (1..=10).collect(),
            swap_lane_table: false,
        }
    }
}

/// Overrides shared by every command.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON file shaped like the `RunConfig` dump (`--print-config`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any field, e.g. `--set sim.planner.params.c_alpha_f=2.0e5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
    /// Uncertainty inflation k on the collision distance.
    #[arg(long)]
    pub inflation_k: Option<f64>,
    /// Pair every ego knot with every obstacle knot (diagnostic).
    #[arg(long)]
    pub full_cross_pairing: bool,
    #[arg(long)]
    pub swap_lane_table: bool,
    /// Include the front tire's longitudinal force in the vehicle model.
    #[arg(long)]
    pub front_tire_drag: bool,
    /// Seeds as a list or range: `1,2,5` or `1..10` (inclusive).
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub w3: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

/// Parsed `--seeds` value.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedList(pub Vec<u64>);

pub fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = |e: std::num::ParseIntError| format!("bad seed list {s:?}: {e}");
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        (a..=b).collect::<Vec<_>>()
    } else {
        s.split(',')
            .map(|p| p.trim().parse().map_err(bad))
            .collect::<Result<Vec<_>, _>>()?
    };
    if seeds.is_empty() {
        return Err(format!("seed list {s:?} is empty"));
    }
    Ok(SeedList(seeds))
}

/// Copies `patch` into `base`. Every key in `patch` must already exist in
/// `base`, so misspelt fields are rejected instead of ignored.
fn merge(base: &mut Value, patch: &Value, path: &str) -> CliResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = format!("{path}{}{k}", if path.is_empty() { "" } else { "." });
                let slot = b
                    .get_mut(k)
                    .ok_or_else(|| CliError::Config(format!("unknown field `{sub}`")))?;
                merge(slot, v, &sub)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

fn set_path(root: &mut Value, assignment: &str) -> CliResult<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected PATH=VALUE, got {assignment:?}")))?;
    let value: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut patch = value;
    for key in path.rsplit('.') {
        let mut obj = serde_json::Map::new();
        obj.insert(key.to_string(), patch);
        patch = Value::Object(obj);
    }
    merge(root, &patch, "")
}

impl RunConfig {
    /// Defaults for single plans: the planner's own defaults, without the
    /// closed-loop uncertainty inflation.
    pub fn for_plan() -> Self {
        let mut cfg = Self::default();
        cfg.sim.planner = stplan::PlannerConfig::default();
        cfg
    }

    /// Resolves the configuration for a command starting from `base`.
    pub fn resolve(base: RunConfig, o: &Overrides) -> CliResult<RunConfig> {
        let mut value = serde_json::to_value(&base)?;
        if let Some(path) = &o.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let patch: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, &patch, "")?;
        }
        for s in &o.set {
            set_path(&mut value, s)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        let planner = &mut cfg.sim.planner;
        if let Some(k) = o.inflation_k {
            planner.optimizer.collision.inflation_k = k;
        }
        if o.full_cross_pairing {
            planner.optimizer.collision.mode = PairingMode::FullCross;
        }
        if o.front_tire_drag {
            planner.params.front_tire_drag = true;
        }
        if let Some(w) = o.w1 {
            planner.optimizer.weights.w1 = w;
        }
        if let Some(w) = o.w2 {
            planner.optimizer.weights.w2 = w;
        }
        if let Some(w) = o.w3 {
            planner.optimizer.weights.w3 = w;
        }
        if let Some(v) = o.v_max {
            planner.optimizer.limits.v_max = v;
        }
        if let Some(n) = o.horizon {
            planner.horizon = n;
        }
        if o.swap_lane_table {
            cfg.swap_lane_table = true;
        }
        if let Some(seeds) = &o.seeds {
            cfg.seeds = seeds.0.clone();
        }
        cfg.sim
            .planner
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if !(cfg.sim.dt > 0.0) {
            return Err(CliError::Config(format!("dt must be positive, got {}", cfg.sim.dt)));
        }
        Ok(cfg)
    }
}

/// Loads and validates a scenario file, applying the lane-table swap.
pub fn load_scenario(path: &Path, cfg: &RunConfig) -> CliResult<Scenario> {
    let mut s = Scenario::load(path).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.swap_lane_table {
        if let Some(t) = &mut s.traffic {
            t.swap_lane_table = true;
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("1..4").unwrap().0, vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("7, 3").unwrap().0, vec![7, 3]);
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("5..1").is_err());
    }

    #[test]
    fn flags_win_over_file_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(
            &file,
            r#"{"sim": {"planner": {"optimizer": {"collision": {"inflation_k": 1.0}}}}, "seeds": [4]}"#,
        )
        .unwrap();
        let mut o = Overrides {
            config: Some(file),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(RunConfig::default(), &o).unwrap();
        assert_eq!(cfg.sim.planner.optimizer.collision.inflation_k, 1.0);
        assert_eq!(cfg.seeds, vec![4]);
        o.set = vec!["sim.planner.optimizer.collision.inflation_k=1.5".into()];
        let cfg = RunConfig::resolve(RunConfig::default(), &o).unwrap();
        assert_eq!(cfg.sim.planner.optimizer.collision.inflation_k, 1.5);
        o.inflation_k = Some(3.0);
        let cfg = RunConfig::resolve(RunConfig::default(), &o).unwrap();
        assert_eq!(cfg.sim.planner.optimizer.collision.inflation_k, 3.0);
    }

    #[test]
    fn unknown_or_mistyped_fields_are_config_errors() {
        let o = Overrides {
            set: vec!["sim.planner.horizn=10".into()],
            ..Overrides::default()
        };
        assert!(matches!(
            RunConfig::resolve(RunConfig::default(), &o),
            Err(CliError::Config(_))
        ));
        let o = Overrides {
            set: vec!["sim.planner.horizon=ten".into()],
            ..Overrides::default()
        };
        assert!(matches!(
            RunConfig::resolve(RunConfig::default(), &o),
            Err(CliError::Config(_))
        ));
    }
}

//! File-based pipeline configuration (TOML). Every field has a default and unknown
//! keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ethogram::EthogramConfig;
use crate::evaluation::EvalConfig;
use crate::reconstruction::ReconstructionConfig;
use crate::retracking::RetrackConfig;
use crate::simulator::{NoiseModel, SceneConfig};
use crate::tracking::TrackerConfig;

/// Environment variable that overrides `paths.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "FLOCKTRACK_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Simulate,
    Reconstruct,
    Track,
    Retrack,
    Evaluate,
    Ethogram,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Simulate,
        Stage::Reconstruct,
        Stage::Track,
        Stage::Retrack,
        Stage::Evaluate,
        Stage::Ethogram,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Reconstruct => "reconstruct",
            Stage::Track => "track",
            Stage::Retrack => "retrack",
            Stage::Evaluate => "evaluate",
            Stage::Ethogram => "ethogram",
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A contiguous run of stages, written `first:last` or a single stage name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRange {
    pub first: Stage,
    pub last: Stage,
}

impl StageRange {
    pub fn all() -> Self {
        Self { first: Stage::Simulate, last: Stage::Ethogram }
    }

    pub fn contains(&self, s: Stage) -> bool {
        self.first <= s && s <= self.last
    }

    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL.into_iter().filter(|s| self.contains(*s)).collect()
    }
}

impl FromStr for StageRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = match s.split_once(':') {
            Some((a, b)) => (a.parse::<Stage>()?, b.parse::<Stage>()?),
            None => {
                let x = s.parse::<Stage>()?;
                (x, x)
            }
        };
        if a > b {
            return Err(format!("stage range '{s}' runs backwards"));
        }
        Ok(Self { first: a, last: b })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub output_dir: PathBuf,
    /// Inputs default to the files the earlier stages write into `output_dir`.
    pub calibration: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub songs: Option<PathBuf>,
    pub birds: Option<PathBuf>,
    /// Per-bird positions for the ethogram (`frame,bird_id,x,y,z` CSV).
    pub timelines: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("flocktrack-out"),
            calibration: None,
            detections: None,
            manifest: None,
            songs: None,
            birds: None,
            timelines: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConfig {
    pub scene: SceneConfig,
    pub noise: NoiseModel,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub rng_seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub paths: Paths,
    pub simulator: SimulatorConfig,
    pub reconstruction: ReconstructionConfig,
    pub tracker: TrackerConfig,
    pub retracking: RetrackConfig,
    pub evaluation: EvalConfig,
    pub ethogram: EthogramConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.retracking.dt = cfg.tracker.dt;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Parses `text` after applying `section.key=value` overrides; values are read
    /// as TOML, falling back to a plain string.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, String> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| format!("override '{o}' is not key=value"))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let parts: Vec<&str> = key.trim().split('.').collect();
            let (last, path) = parts.split_last().expect("split yields one part");
            let mut cur = &mut table;
            for p in path {
                cur = cur
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| format!("override '{key}': '{p}' is not a table"))?;
            }
            cur.insert(last.to_string(), value);
        }
        Self::from_toml(&toml::to_string(&table).map_err(|e| e.to_string())?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.simulator.scene.validate().map_err(|e| e.to_string())?;
        self.simulator.noise.validate().map_err(|e| e.to_string())?;
        self.reconstruction.validate()?;
        self.tracker.validate()?;
        self.retracking.validate()?;
        self.ethogram.validate()?;
        let fps_dt = 1.0 / self.simulator.scene.fps;
        if (fps_dt - self.tracker.dt).abs() > 1e-9 * fps_dt.max(1.0) {
            return Err(format!(
                "tracker.dt ({}) must equal 1 / simulator.scene.fps ({})",
                self.tracker.dt, fps_dt
            ));
        }
        if (self.retracking.dt - self.tracker.dt).abs() > 1e-12 {
            return Err("retracking.dt must equal tracker.dt".into());
        }
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.paths.output_dir = PathBuf::from(dir);
            }
        }
    }

    /// SHA-256 of the configuration with all paths cleared, so the same settings
    /// hash identically wherever they run.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths { output_dir: PathBuf::new(), ..Paths::default() };
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.hash(), back.hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(PipelineConfig::from_toml("rng_seed = 1\nbogus = 2\n").is_err());
        assert!(PipelineConfig::from_toml("[tracker]\ngate = 0.2\nfoo = 1\n").is_err());
        let c = PipelineConfig::from_toml("[tracker]\ngate = 0.2\n").unwrap();
        assert_eq!(c.tracker.gate, 0.2);
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let c = PipelineConfig::from_toml_with(
            "[tracker]\ngate = 0.2\n",
            &["tracker.gate=0.4".into(), "reconstruction.mask_cap=20".into(), "rng_seed=9".into()],
        )
        .unwrap();
        assert_eq!(c.tracker.gate, 0.4);
        assert_eq!(c.reconstruction.mask_cap, 20);
        assert_eq!(c.rng_seed, 9);
        assert!(PipelineConfig::from_toml_with("", &["tracker.nope=1".into()]).is_err());
        assert!(PipelineConfig::from_toml_with("", &["tracker".into()]).is_err());
    }

    #[test]
    fn inconsistent_frame_rate_rejected() {
        assert!(PipelineConfig::from_toml("[tracker]\ndt = 0.01\n").is_err());
    }

    #[test]
    fn stage_ranges() {
        let r: StageRange = "reconstruct:evaluate".parse().unwrap();
        assert_eq!(r.stages(), vec![Stage::Reconstruct, Stage::Track, Stage::Retrack, Stage::Evaluate]);
        assert_eq!("track".parse::<StageRange>().unwrap().stages(), vec![Stage::Track]);
        assert!("evaluate:track".parse::<StageRange>().is_err());
        assert!("fly".parse::<StageRange>().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.paths.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.rng_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}

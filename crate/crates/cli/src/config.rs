//! Benchmark configuration, profiles and loading.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ogmm_core::data::{sub_seed, PairSpec, ShapeKind};
use ogmm_core::RegistrationConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Environment variable that replaces the seed of any loaded config.
pub const SEED_ENV: &str = "OGMM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ogmm,
    OgmmUnguided,
    OgmmOracleOverlap,
    Icp,
    GmmL2,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ogmm,
        Method::OgmmUnguided,
        Method::OgmmOracleOverlap,
        Method::Icp,
        Method::GmmL2,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ogmm => "ogmm",
            Method::OgmmUnguided => "ogmm_unguided",
            Method::OgmmOracleOverlap => "ogmm_oracle_overlap",
            Method::Icp => "icp",
            Method::GmmL2 => "gmm_l2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::invalid(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub shape: ShapeKind,
    /// Base pair parameters; the sweep axes override the overlap, jitter
    /// and density fields.
    pub pair: PairSpec,
    pub overlap_fractions: Vec<f64>,
    pub cluster_counts: Vec<usize>,
    pub noise: Vec<bool>,
    pub density: Vec<bool>,
    pub noise_sigma: f64,
    pub noise_clip: f64,
    pub density_keep: f64,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub pipeline: RegistrationConfig,
    /// Welsch scale of the registration loss column of the summary.
    pub nu: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self::paper()
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: usize,
    pub overlap: f64,
    pub clusters: usize,
    pub noise: bool,
    pub density: bool,
}

impl BenchConfig {
    pub fn paper() -> Self {
        let pipeline = RegistrationConfig::paper();
        Self {
            shape: ShapeKind::Composite,
            pair: PairSpec {
                n_points: 1024,
                ..PairSpec::default()
            },
            overlap_fractions: vec![0.7, 0.6, 0.5, 0.4, 0.3],
            cluster_counts: vec![pipeline.clusters],
            noise: vec![false],
            density: vec![false],
            noise_sigma: 0.01,
            noise_clip: 0.05,
            density_keep: 0.5,
            trials: 1,
            methods: Method::ALL.to_vec(),
            pipeline,
            nu: 0.1,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        let pipeline = RegistrationConfig::desk();
        Self {
            pair: PairSpec {
                n_points: 256,
                ..PairSpec::default()
            },
            overlap_fractions: vec![0.7, 0.5, 0.3],
            cluster_counts: vec![pipeline.clusters],
            pipeline,
            ..Self::paper()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.trials == 0 {
            return Err(CliError::invalid("trials must be >= 1"));
        }
        let empty = [
            ("overlap_fractions", self.overlap_fractions.is_empty()),
            ("cluster_counts", self.cluster_counts.is_empty()),
            ("noise", self.noise.is_empty()),
            ("density", self.density.is_empty()),
            ("methods", self.methods.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::invalid(format!("{name} must not be empty")));
        }
        if self.cluster_counts.contains(&0) {
            return Err(CliError::invalid("cluster counts must be >= 1"));
        }
        if !(self.nu > 0.0) {
            return Err(CliError::invalid("nu must be > 0"));
        }
        self.pipeline.validate()?;
        for cell in self.cells() {
            self.pair_spec(&cell, 0).validate()?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, overlap outermost.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &overlap in &self.overlap_fractions {
            for &clusters in &self.cluster_counts {
                for &noise in &self.noise {
                    for &density in &self.density {
                        out.push(Cell {
                            index: out.len(),
                            overlap,
                            clusters,
                            noise,
                            density,
                        });
                    }
                }
            }
        }
        out
    }

    /// Pair parameters of one trial. The seed depends only on the trial so
    /// every cell sees the same shapes and motions.
    pub fn pair_spec(&self, cell: &Cell, trial: usize) -> PairSpec {
        PairSpec {
            overlap_keep_fraction: cell.overlap,
            jitter_sigma: if cell.noise { self.noise_sigma } else { 0.0 },
            jitter_clip: self.noise_clip,
            density_keep: if cell.density { self.density_keep } else { 1.0 },
            seed: sub_seed(self.seed, trial as u64),
            ..self.pair.clone()
        }
    }

    pub fn pipeline_for(&self, cell: &Cell) -> RegistrationConfig {
        RegistrationConfig {
            clusters: cell.clusters,
            ..self.pipeline.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.pipeline.seed = seed;
        self
    }
}

pub fn pair_id(cell: &Cell, trial: usize) -> String {
    format!("c{:03}_t{:03}", cell.index, trial)
}

/// Recursively overlays `patch` on `base`; objects merge key by key,
/// anything else is replaced.
pub fn merge_json(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::invalid(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

/// Profile defaults, overlaid with the JSON file if given, then the seed
/// from the environment.
pub fn load_bench_config(path: Option<&Path>, profile: Profile) -> CliResult<BenchConfig> {
    let mut value = serde_json::to_value(BenchConfig::for_profile(profile))?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("config: {e}")))?;
        if !patch.is_object() {
            return Err(CliError::invalid("config must be a JSON object"));
        }
        merge_json(&mut value, patch);
    }
    let mut cfg: BenchConfig = serde_json::from_value(value).map_err(|e| CliError::invalid(format!("config: {e}")))?;
    if let Some(seed) = seed_override()? {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pipeline settings for `register`: a file holding a full benchmark config
/// contributes its `pipeline` section, any other object is read as the
/// pipeline config itself.
pub fn load_pipeline_config(path: Option<&Path>, profile: Profile) -> CliResult<RegistrationConfig> {
    let mut value = serde_json::to_value(BenchConfig::for_profile(profile).pipeline)?;
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        let mut patch: Value = serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("config: {e}")))?;
        if !patch.is_object() {
            return Err(CliError::invalid("config must be a JSON object"));
        }
        if let Some(p) = patch.get_mut("pipeline") {
            patch = p.take();
        }
        merge_json(&mut value, patch);
    }
    let mut cfg: RegistrationConfig =
        serde_json::from_value(value).map_err(|e| CliError::invalid(format!("config: {e}")))?;
    if let Some(seed) = seed_override()? {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn cells_enumerate_the_grid() {
        let cfg = BenchConfig {
            overlap_fractions: vec![0.7, 0.5],
            cluster_counts: vec![8, 16, 32],
            noise: vec![false, true],
            ..BenchConfig::desk()
        };
        let cells = cfg.cells();
        assert_eq!(cells.len(), 12);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
        assert_eq!((cells[0].overlap, cells[0].clusters, cells[0].noise), (0.7, 8, false));
        assert_eq!((cells[11].overlap, cells[11].clusters, cells[11].noise), (0.5, 32, true));
    }

    #[test]
    fn merge_overrides_nested_fields() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge_json(&mut base, json!({"b": {"d": 4}, "e": [1]}));
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": 4}, "e": [1]}));
    }

    #[test]
    fn validation_rejects_empty_axes() {
        let mut cfg = BenchConfig::desk();
        assert!(cfg.validate().is_ok());
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let cfg = BenchConfig {
            methods: vec![],
            ..BenchConfig::desk()
        };
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn config_round_trips_and_hash_tracks_content() {
        let cfg = BenchConfig::desk();
        let back: BenchConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.clone().with_seed(1).hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn trials_share_pairs_across_cells() {
        let cfg = BenchConfig::desk();
        let cells = cfg.cells();
        let a = cfg.pair_spec(&cells[0], 3);
        let b = cfg.pair_spec(&cells[1], 3);
        assert_eq!(a.seed, b.seed);
        assert_ne!(a.overlap_keep_fraction, b.overlap_keep_fraction);
        assert_ne!(cfg.pair_spec(&cells[0], 4).seed, a.seed);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.name()));
        }
        assert!("nope".parse::<Method>().is_err());
    }
}

//! Writes the sweep's synthetic pairs to disk.

use std::fs;
use std::path::Path;

use ogmm_core::data::{make_pair, write_cloud, CloudFormat};
use ogmm_core::RigidTransform;
use serde::{Deserialize, Serialize};

use crate::config::{pair_id, BenchConfig, Cell};
use crate::error::CliResult;

pub const SOURCE_FILE: &str = "source.ply";
pub const TARGET_FILE: &str = "target.ply";
pub const GT_FILE: &str = "gt.json";
pub const LABELS_FILE: &str = "overlap.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pair_id: String,
    pub cell: Cell,
    pub trial: usize,
    pub seed: u64,
    pub transform: RigidTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapLabels {
    pub source: Vec<bool>,
    pub target: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub dir: String,
    pub cell: usize,
    pub trial: usize,
    pub seed: u64,
    pub source_points: usize,
    pub target_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: BenchConfig,
    pub pairs: Vec<ManifestEntry>,
}

/// One directory per (cell, trial) holding both clouds, the ground-truth
/// motion and the overlap labels, plus a manifest at the top level.
pub fn cmd_genpairs(cfg: &BenchConfig, out_dir: &Path) -> CliResult<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir)?;
    let mut pairs = Vec::new();
    for cell in cfg.cells() {
        for trial in 0..cfg.trials {
            let spec = cfg.pair_spec(&cell, trial);
            let pair = make_pair(&spec, cfg.shape)?;
            let id = pair_id(&cell, trial);
            let dir = out_dir.join(&id);
            fs::create_dir_all(&dir)?;
            write_cloud(&pair.source, dir.join(SOURCE_FILE), CloudFormat::Ply)?;
            write_cloud(&pair.target, dir.join(TARGET_FILE), CloudFormat::Ply)?;
            let gt = GroundTruth {
                pair_id: id.clone(),
                cell,
                trial,
                seed: spec.seed,
                transform: pair.gt_transform,
            };
            fs::write(dir.join(GT_FILE), serde_json::to_string_pretty(&gt)?)?;
            let labels = OverlapLabels {
                source: pair.gt_overlap_source,
                target: pair.gt_overlap_target,
            };
            fs::write(dir.join(LABELS_FILE), serde_json::to_string(&labels)?)?;
            pairs.push(ManifestEntry {
                dir: id.clone(),
                pair_id: id,
                cell: cell.index,
                trial,
                seed: spec.seed,
                source_points: pair.source.len(),
                target_points: pair.target.len(),
            });
        }
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        pairs,
    };
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

//! Benchmark sweeps: generate pairs per cell, run every method, collect
//! one row per (cell, trial, method).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ogmm_core::data::{make_pair, RegistrationPair};
use ogmm_core::losses::global_registration_loss;
use ogmm_core::metrics::EvalRecord;
use ogmm_core::registration::{icp_baseline, OverlapMode, Solver};
use ogmm_core::{register, register_pair, RegistrationConfig, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::config::{pair_id, BenchConfig, Cell, Method};
use crate::error::{CliError, CliResult};

/// One CSV row. Metric fields are empty on failed registrations and
/// `runtime_ms` comes last so runs can be compared without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub cell: usize,
    pub overlap: f64,
    pub clusters: usize,
    pub noise: bool,
    pub density: bool,
    pub trial: usize,
    pub pair_id: String,
    pub seed: u64,
    pub mae_r_deg: Option<f64>,
    pub mae_t: Option<f64>,
    pub ccd: Option<f64>,
    pub geodesic_deg: Option<f64>,
    pub registration_loss: Option<f64>,
    pub near_gimbal_lock: bool,
    pub error: String,
    pub config_hash: String,
    pub runtime_ms: f64,
}

impl BenchRow {
    pub fn is_error(&self) -> bool {
        !self.error.is_empty()
    }
}

fn method_config(method: Method, base: &RegistrationConfig) -> RegistrationConfig {
    let (overlap_mode, solver) = match method {
        Method::Ogmm | Method::Icp => (OverlapMode::Predicted, Solver::Ot),
        Method::OgmmUnguided => (OverlapMode::Unguided, Solver::Ot),
        Method::OgmmOracleOverlap => (OverlapMode::Oracle, Solver::Ot),
        Method::GmmL2 => (OverlapMode::Predicted, Solver::GmmL2),
    };
    RegistrationConfig {
        overlap_mode,
        solver,
        ..base.clone()
    }
}

/// Runs one method on a pair; the clock covers the registration call only.
pub fn run_method(
    method: Method,
    pair: &RegistrationPair,
    cfg: &RegistrationConfig,
) -> ogmm_core::Result<(RigidTransform, f64)> {
    let cfg = method_config(method, cfg);
    let start = Instant::now();
    let transform = match method {
        Method::Icp => icp_baseline(&pair.source, &pair.target, &Default::default())?.transform,
        Method::OgmmOracleOverlap => register_pair(pair, &cfg)?.transform,
        _ => register(&pair.source, &pair.target, &cfg, None)?.transform,
    };
    Ok((transform, start.elapsed().as_secs_f64() * 1e3))
}

fn run_cell(cfg: &BenchConfig, cell: &Cell, hash: &str) -> Vec<BenchRow> {
    let pipeline = cfg.pipeline_for(cell);
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        let spec = cfg.pair_spec(cell, trial);
        let pair = make_pair(&spec, cfg.shape);
        for &method in &cfg.methods {
            let mut row = BenchRow {
                method: method.name().to_string(),
                cell: cell.index,
                overlap: cell.overlap,
                clusters: cell.clusters,
                noise: cell.noise,
                density: cell.density,
                trial,
                pair_id: pair_id(cell, trial),
                seed: spec.seed,
                mae_r_deg: None,
                mae_t: None,
                ccd: None,
                geodesic_deg: None,
                registration_loss: None,
                near_gimbal_lock: false,
                error: String::new(),
                config_hash: hash.to_string(),
                runtime_ms: 0.0,
            };
            let outcome = pair.as_ref().map_err(|e| e.kind()).and_then(|pair| {
                let (t, ms) = run_method(method, pair, &pipeline).map_err(|e| e.kind())?;
                let rec = EvalRecord::evaluate(
                    &row.pair_id,
                    spec.seed,
                    pair.source.points(),
                    pair.target.points(),
                    &t,
                    &pair.gt_transform,
                    ms,
                )
                .map_err(|e| e.kind())?;
                let loss = global_registration_loss(&pair.source, &pair.target, &t, &pair.gt_transform, cfg.nu)
                    .map_err(|e| e.kind())?;
                Ok((rec, loss))
            });
            match outcome {
                Ok((rec, loss)) => {
                    row.mae_r_deg = Some(rec.mae_r_deg);
                    row.mae_t = Some(rec.mae_t);
                    row.ccd = Some(rec.ccd);
                    row.geodesic_deg = Some(rec.geodesic_deg);
                    row.registration_loss = Some(loss);
                    row.near_gimbal_lock = rec.near_gimbal_lock;
                    row.runtime_ms = rec.runtime_ms;
                }
                Err(kind) => row.error = kind.to_string(),
            }
            rows.push(row);
        }
    }
    rows
}

/// Runs the sweep with up to `workers` cells in flight. Rows come back in
/// (cell, trial, method) order regardless of scheduling.
pub fn run_bench(cfg: &BenchConfig, workers: usize) -> CliResult<Vec<BenchRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let hash = cfg.hash();
    let slots: Mutex<Vec<Option<Vec<BenchRow>>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let rows = run_cell(cfg, cell, &hash);
                slots.lock().expect("no worker panicked")[i] = Some(rows);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .flat_map(|r| r.expect("every cell ran"))
        .collect())
}

pub fn write_rows<W: std::io::Write>(rows: &[BenchRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: std::io::Read>(input: R) -> CliResult<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<Result<Vec<BenchRow>, _>>()?;
    Ok(rows)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub cell: usize,
    pub overlap: f64,
    pub clusters: usize,
    pub noise: bool,
    pub density: bool,
    pub rows: usize,
    pub errors: usize,
    pub mean_mae_r_deg: Option<f64>,
    pub mean_mae_t: Option<f64>,
    pub mean_ccd: Option<f64>,
    pub mean_geodesic_deg: Option<f64>,
    pub mean_registration_loss: Option<f64>,
    pub mean_runtime_ms: Option<f64>,
}

/// Mean MAE(R) per overlap fraction for one method with the other axes
/// fixed, ordered from the largest overlap to the smallest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTrend {
    pub method: String,
    pub clusters: usize,
    pub noise: bool,
    pub density: bool,
    pub overlaps: Vec<f64>,
    pub mean_mae_r_deg: Vec<Option<f64>>,
    /// Error never decreases as overlap drops.
    pub non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config_hash: String,
    pub config: BenchConfig,
    pub rows: usize,
    pub error_rows: usize,
    pub cells: Vec<CellSummary>,
    pub overlap_trends: Vec<OverlapTrend>,
}

pub fn summarize(cfg: &BenchConfig, rows: &[BenchRow]) -> BenchSummary {
    let mut groups: BTreeMap<(usize, usize), Vec<&BenchRow>> = BTreeMap::new();
    let order: BTreeMap<&str, usize> = cfg.methods.iter().enumerate().map(|(i, m)| (m.name(), i)).collect();
    for r in rows {
        let m = order.get(r.method.as_str()).copied().unwrap_or(usize::MAX);
        groups.entry((r.cell, m)).or_default().push(r);
    }
    let cells: Vec<CellSummary> = groups
        .values()
        .map(|g| {
            let ok: Vec<&&BenchRow> = g.iter().filter(|r| !r.is_error()).collect();
            let avg = |f: fn(&BenchRow) -> Option<f64>| mean(ok.iter().filter_map(|r| f(r)));
            CellSummary {
                method: g[0].method.clone(),
                cell: g[0].cell,
                overlap: g[0].overlap,
                clusters: g[0].clusters,
                noise: g[0].noise,
                density: g[0].density,
                rows: g.len(),
                errors: g.len() - ok.len(),
                mean_mae_r_deg: avg(|r| r.mae_r_deg),
                mean_mae_t: avg(|r| r.mae_t),
                mean_ccd: avg(|r| r.ccd),
                mean_geodesic_deg: avg(|r| r.geodesic_deg),
                mean_registration_loss: avg(|r| r.registration_loss),
                mean_runtime_ms: avg(|r| Some(r.runtime_ms)),
            }
        })
        .collect();

    let mut trends = Vec::new();
    for method in &cfg.methods {
        for &clusters in &cfg.cluster_counts {
            for &noise in &cfg.noise {
                for &density in &cfg.density {
                    let mut pts: Vec<(f64, Option<f64>)> = cells
                        .iter()
                        .filter(|c| {
                            c.method == method.name() && c.clusters == clusters && c.noise == noise && c.density == density
                        })
                        .map(|c| (c.overlap, c.mean_mae_r_deg))
                        .collect();
                    if pts.is_empty() {
                        continue;
                    }
                    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
                    let non_decreasing = pts.windows(2).all(|w| match (w[0].1, w[1].1) {
                        (Some(a), Some(b)) => b >= a,
                        _ => false,
                    });
                    trends.push(OverlapTrend {
                        method: method.name().to_string(),
                        clusters,
                        noise,
                        density,
                        overlaps: pts.iter().map(|p| p.0).collect(),
                        mean_mae_r_deg: pts.iter().map(|p| p.1).collect(),
                        non_decreasing,
                    });
                }
            }
        }
    }

    BenchSummary {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        rows: rows.len(),
        error_rows: rows.iter().filter(|r| r.is_error()).count(),
        cells,
        overlap_trends: trends,
    }
}

/// `results.csv` → `results.summary.json`.
pub fn summary_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("summary.json")
}

/// Runs the sweep and writes the CSV plus its summary next to it.
pub fn cmd_bench(cfg: &BenchConfig, out_csv: &Path, workers: usize) -> CliResult<BenchSummary> {
    let rows = run_bench(cfg, workers)?;
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(out_csv).map_err(|e| CliError::new("io", format!("{}: {e}", out_csv.display())))?;
    write_rows(&rows, std::io::BufWriter::new(file))?;
    let summary = summarize(cfg, &rows);
    std::fs::write(summary_path(out_csv), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, cell: usize, overlap: f64, mae: Option<f64>) -> BenchRow {
        BenchRow {
            method: method.into(),
            cell,
            overlap,
            clusters: 16,
            noise: false,
            density: false,
            trial: 0,
            pair_id: format!("c{cell:03}_t000"),
            seed: 1,
            mae_r_deg: mae,
            mae_t: mae.map(|v| v / 10.0),
            ccd: mae.map(|_| 0.01),
            geodesic_deg: mae,
            registration_loss: mae.map(|_| 1.0),
            near_gimbal_lock: false,
            error: if mae.is_some() { String::new() } else { "geometry".into() },
            config_hash: "x".into(),
            runtime_ms: 3.0,
        }
    }

    #[test]
    fn csv_round_trip_keeps_empty_metrics() {
        let rows = vec![row("ogmm", 0, 0.7, Some(1.5)), row("icp", 0, 0.7, None)];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",runtime_ms"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn summary_means_and_trend() {
        let cfg = BenchConfig {
            overlap_fractions: vec![0.7, 0.5],
            methods: vec![Method::Ogmm],
            ..BenchConfig::desk()
        };
        let mut rows = vec![
            row("ogmm", 0, 0.7, Some(1.0)),
            row("ogmm", 0, 0.7, Some(3.0)),
            row("ogmm", 0, 0.7, None),
            row("ogmm", 1, 0.5, Some(4.0)),
        ];
        rows[1].trial = 1;
        rows[2].trial = 2;
        let s = summarize(&cfg, &rows);
        assert_eq!(s.error_rows, 1);
        assert_eq!(s.cells.len(), 2);
        assert_eq!(s.cells[0].mean_mae_r_deg, Some(2.0));
        assert_eq!(s.cells[0].errors, 1);
        assert_eq!(s.overlap_trends.len(), 1);
        assert!(s.overlap_trends[0].non_decreasing);
        rows[3].mae_r_deg = Some(0.5);
        assert!(!summarize(&cfg, &rows).overlap_trends[0].non_decreasing);
    }
}

//! Multi-run suites: the noise sweep and the five-way ablation.
//!
//! Cells are independent runs. They execute on a bounded worker pool, and
//! results are always written in (variant, noise, seed) order so the output
//! does not depend on scheduling. Finished cells found in an existing output
//! file with a matching fingerprint are reused instead of re-run.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Variant};
use crate::error::{HarnessError, Result};
use crate::experiment::{self, RunStatus};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_RUNS_FILE: &str = "ablation_runs.csv";

#[derive(Debug, Clone)]
pub struct Cell {
    pub variant: Variant,
    pub noise: f64,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Cell {
    pub fn new(base: &ExperimentConfig, variant: Variant, noise: f64, seed: u64) -> Self {
        let config = ExperimentConfig {
            seed,
            contamination_rate: noise,
            ..base.with_variant(variant)
        };
        Self {
            variant,
            noise,
            seed,
            config,
        }
    }

    pub fn fingerprint(&self) -> String {
        self.config.run_spec().fingerprint()
    }
}

/// One row of `sweep.csv` / `ablation_runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub config: Variant,
    pub noise: f64,
    pub seed: u64,
    pub status: String,
    pub i_auroc: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fingerprint: String,
}

impl CellRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn sort_key(&self) -> (Variant, u64, u64) {
        (self.config, self.noise.to_bits(), self.seed)
    }
}

fn run_cell(cell: &Cell) -> CellRow {
    let fingerprint = cell.fingerprint();
    let mut row = CellRow {
        config: cell.variant,
        noise: cell.noise,
        seed: cell.seed,
        status: "ok".into(),
        i_auroc: None,
        f1: None,
        precision: None,
        recall: None,
        fingerprint,
    };
    match experiment::run(&cell.config) {
        Ok(out) if out.report.status == RunStatus::Ok => match out.report.eval {
            Some(e) => {
                row.i_auroc = Some(e.i_auroc);
                row.f1 = Some(e.f1);
                row.precision = Some(e.precision);
                row.recall = Some(e.recall);
            }
            None => row.status = "unlabeled".into(),
        },
        Ok(_) => row.status = "diverged".into(),
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Runs `cells` on `workers` threads, reusing rows from `previous` whose
/// fingerprint matches and that finished successfully.
pub fn run_cells(cells: &[Cell], workers: usize, previous: &[CellRow]) -> Result<(Vec<CellRow>, usize)> {
    let done: BTreeMap<&str, &CellRow> = previous
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.fingerprint.as_str(), r))
        .collect();
    let pending: Vec<&Cell> = cells
        .iter()
        .filter(|c| !done.contains_key(c.fingerprint().as_str()))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let fresh: Vec<CellRow> = pool.install(|| pending.par_iter().map(|c| run_cell(c)).collect());
    let reused = cells.len() - pending.len();

    let mut rows: Vec<CellRow> = cells
        .iter()
        .filter_map(|c| {
            done.get(c.fingerprint().as_str()).map(|r| CellRow {
                config: c.variant,
                noise: c.noise,
                seed: c.seed,
                ..(*r).clone()
            })
        })
        .chain(fresh)
        .collect();
    rows.sort_by_key(CellRow::sort_key);
    Ok((rows, reused))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(HarnessError::io(path))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_error(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error(path))
}

fn previous_rows(path: &Path) -> Result<Vec<CellRow>> {
    if path.exists() {
        read_rows(path)
    } else {
        Ok(Vec::new())
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub config: Variant,
    pub noise: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_i_auroc: Option<f64>,
    pub std_i_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<CellRow>,
    pub summary: Vec<SweepSummaryRow>,
    pub reused: usize,
}

impl SweepOutcome {
    /// Mean AUROC at the lowest noise level minus the mean at the highest.
    pub fn degradation(&self, variant: Variant) -> Option<f64> {
        let levels: Vec<&SweepSummaryRow> = self.summary.iter().filter(|r| r.config == variant).collect();
        let first = levels.first()?.mean_i_auroc?;
        let last = levels.last()?.mean_i_auroc?;
        Some(first - last)
    }
}

pub fn summarize_sweep(rows: &[CellRow]) -> Vec<SweepSummaryRow> {
    let mut groups: BTreeMap<(Variant, u64), Vec<&CellRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.config, r.noise.to_bits())).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let ok: Vec<f64> = g.iter().filter_map(|r| r.i_auroc).collect();
            let ms = mean_std(&ok);
            SweepSummaryRow {
                config: g[0].config,
                noise: g[0].noise,
                n_ok: ok.len(),
                n_failed: g.len() - ok.len(),
                mean_i_auroc: ms.map(|m| m.0),
                std_i_auroc: ms.map(|m| m.1),
            }
        })
        .collect()
}

pub fn sweep_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &v in &cfg.sweep_variants {
        for &noise in &cfg.noise_levels {
            for &seed in &cfg.seeds {
                cells.push(Cell::new(cfg, v, noise, seed));
            }
        }
    }
    cells
}

/// Every (variant, noise, seed) cell of the sweep; writes `sweep.csv`,
/// `sweep_summary.csv` and `sweep.svg` into `out`.
pub fn sweep_noise(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let path = out.join(SWEEP_FILE);
    let (rows, reused) = run_cells(&sweep_cells(cfg), cfg.workers, &previous_rows(&path)?)?;
    write_rows(&path, &rows)?;
    let summary = summarize_sweep(&rows);
    write_rows(&out.join(SWEEP_SUMMARY_FILE), &summary)?;
    let svg = crate::plot::sweep_chart(&summary);
    let svg_path = out.join("sweep.svg");
    std::fs::write(&svg_path, svg).map_err(HarnessError::io(&svg_path))?;
    Ok(SweepOutcome { rows, summary, reused })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rank: usize,
    pub configuration: String,
    pub mean_i_auroc: Option<f64>,
    pub std_i_auroc: Option<f64>,
    pub mean_f1: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub runs: Vec<CellRow>,
    pub table: Vec<AblationRow>,
    pub reused: usize,
}

impl AblationOutcome {
    pub fn mean(&self, v: Variant) -> Option<f64> {
        self.table.iter().find(|r| r.configuration == v.label())?.mean_i_auroc
    }
}

/// The five configurations on identical data and seeds at the configured
/// contamination rate; writes `ablation_runs.csv` and the ranked
/// `ablation.csv` into `out`.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<AblationOutcome> {
    std::fs::create_dir_all(out).map_err(HarnessError::io(out))?;
    let cells: Vec<Cell> = Variant::ALL
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .map(|(v, s)| Cell::new(cfg, v, cfg.contamination_rate, s))
        .collect();
    let runs_path = out.join(ABLATION_RUNS_FILE);
    let (runs, reused) = run_cells(&cells, cfg.workers, &previous_rows(&runs_path)?)?;
    write_rows(&runs_path, &runs)?;

    let mut table: Vec<AblationRow> = Variant::ALL
        .iter()
        .map(|&v| {
            let group: Vec<&CellRow> = runs.iter().filter(|r| r.config == v).collect();
            let aurocs: Vec<f64> = group.iter().filter_map(|r| r.i_auroc).collect();
            let f1s: Vec<f64> = group.iter().filter_map(|r| r.f1).collect();
            let ms = mean_std(&aurocs);
            AblationRow {
                rank: 0,
                configuration: v.label().to_string(),
                mean_i_auroc: ms.map(|m| m.0),
                std_i_auroc: ms.map(|m| m.1),
                mean_f1: mean_std(&f1s).map(|m| m.0),
                n_ok: aurocs.len(),
                n_failed: group.len() - aurocs.len(),
            }
        })
        .collect();
    // Highest mean first; configurations without results go last. The sort
    // is stable, so ties keep the canonical order.
    table.sort_by(|a, b| match (a.mean_i_auroc, b.mean_i_auroc) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    for (i, row) in table.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    write_rows(&out.join(ABLATION_FILE), &table)?;
    Ok(AblationOutcome { runs, table, reused })
}

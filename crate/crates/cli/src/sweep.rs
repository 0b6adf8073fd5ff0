use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use epidg::data::MultiDomainDataset;
use epidg::eval::{hetero_probe, target_accuracy, ProbeMode};
use epidg::train::run_training;
use epidg::{Error, Result};

use crate::config::ExperimentConfig;

/// The cross-product to run. Empty axes contribute a single default cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepSpec {
    pub seeds: Vec<u64>,
    /// Domain names to hold out in turn; empty uses the configured target.
    pub holdouts: Vec<String>,
    pub variants: Vec<String>,
    /// `section.key` with the values to try, e.g. `train.lambda1` over `1,2`.
    pub grid: Vec<(String, Vec<String>)>,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub holdout: String,
    pub variant: String,
    /// The grid assignment, formatted `key=value;key=value`.
    pub setting: String,
    pub seed: u64,
    overrides: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub value: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub holdout: String,
    pub variant: String,
    pub setting: String,
    pub n: usize,
    pub failed: usize,
    pub mean: f64,
    pub std: f64,
}

/// Parses `0-9` (inclusive range) or `0,3,7`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seed list '{s}' (use 0-9 or 0,3,7)"));
    if let Some((a, b)) = s.split_once('-') {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

/// Parses `section.key=v1,v2,...`. Values that themselves contain commas
/// (such as step schedules) can be separated with `|` instead.
pub fn parse_grid_axis(s: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("grid axis '{s}' must look like section.key=v1,v2")))?;
    let sep = if values.contains('|') { '|' } else { ',' };
    let values: Vec<String> = values.split(sep).map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("grid axis '{key}' has no values")));
    }
    Ok((key.trim().to_string(), values))
}

fn grid_settings(grid: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in grid {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

pub fn expand(base: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<Cell>> {
    let base_train = base.train_config()?;
    let holdouts: Vec<String> = if spec.holdouts.is_empty() { vec![String::new()] } else { spec.holdouts.clone() };
    let variants: Vec<String> = if spec.variants.is_empty() {
        vec![base_train.variant.to_string()]
    } else {
        spec.variants.clone()
    };
    let seeds = if spec.seeds.is_empty() { vec![base_train.seed] } else { spec.seeds.clone() };
    let mut cells = Vec::new();
    for holdout in &holdouts {
        for variant in &variants {
            let parsed: epidg::train::Variant = variant.parse()?;
            for setting in grid_settings(&spec.grid) {
                for &seed in &seeds {
                    let mut overrides: Vec<String> = setting.iter().map(|(k, v)| format!("{k}={v}")).collect();
                    overrides.push(format!("train.variant=\"{parsed}\""));
                    overrides.push(format!("train.seed={seed}"));
                    cells.push(Cell {
                        holdout: holdout.clone(),
                        variant: parsed.to_string(),
                        setting: setting.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";"),
                        seed,
                        overrides,
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn dataset_for(config: &ExperimentConfig, holdout: &str) -> Result<MultiDomainDataset> {
    if holdout.is_empty() {
        return config.dataset();
    }
    let all = config.all_domains()?;
    let idx = all
        .iter()
        .position(|d| d.name == holdout)
        .ok_or_else(|| Error::Config(format!("held-out domain '{holdout}' not found")))?;
    MultiDomainDataset::leave_one_out(&all, idx, config.homogeneous())
}

/// Target accuracy for homogeneous data, linear-probe accuracy otherwise.
pub fn run_cell(base: &ExperimentConfig, cell: &Cell) -> Result<f64> {
    let config = ExperimentConfig::from_toml_str(&base.to_toml_string(), Path::new("<sweep>"), &cell.overrides)?;
    let ds = dataset_for(&config, &cell.holdout)?;
    let train = config.train_config()?;
    let (bank, _) = run_training(&ds, &config.arch(ds.dim()), &train)?;
    if ds.homogeneous {
        target_accuracy(&bank, &ds)
    } else {
        Ok(hetero_probe(&bank, &ds.target, ProbeMode::TrainedOnly, None, epidg::eval::probe::DEFAULT_L2)?.accuracy)
    }
}

/// Runs every cell on up to `spec.jobs` threads. Failed cells are recorded
/// with their error rather than aborting the sweep.
pub fn run_sweep(base: &ExperimentConfig, spec: &SweepSpec) -> Result<Vec<CellResult>> {
    let cells = expand(base, spec)?;
    let results: Vec<Mutex<Option<CellResult>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let jobs = spec.jobs.clamp(1, cells.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let value = run_cell(base, cell).map_err(|e| e.to_string());
                *results[i].lock().expect("no panics while holding the lock") = Some(CellResult {
                    cell: cell.clone(),
                    value,
                });
            });
        }
    });
    Ok(results
        .into_iter()
        .map(|m| m.into_inner().expect("lock not poisoned").expect("every cell ran"))
        .collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample std over seeds for each (holdout, variant, setting). With
/// several holdouts an `average` row per (variant, setting) averages the
/// per-holdout means.
pub fn summarize(results: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in results {
        let k = (r.cell.holdout.clone(), r.cell.variant.clone(), r.cell.setting.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut rows: Vec<SummaryRow> = keys
        .iter()
        .map(|(h, v, s)| {
            let group: Vec<&CellResult> = results
                .iter()
                .filter(|r| &r.cell.holdout == h && &r.cell.variant == v && &r.cell.setting == s)
                .collect();
            let ok: Vec<f64> = group.iter().filter_map(|r| r.value.as_ref().ok().copied()).collect();
            let (mean, std) = mean_std(&ok);
            SummaryRow {
                holdout: h.clone(),
                variant: v.clone(),
                setting: s.clone(),
                n: ok.len(),
                failed: group.len() - ok.len(),
                mean,
                std,
            }
        })
        .collect();
    let holdouts: Vec<&String> = {
        let mut h: Vec<&String> = keys.iter().map(|k| &k.0).collect();
        h.dedup();
        h
    };
    if holdouts.len() > 1 {
        let mut seen: Vec<(String, String)> = Vec::new();
        for (_, v, s) in &keys {
            if seen.contains(&(v.clone(), s.clone())) {
                continue;
            }
            seen.push((v.clone(), s.clone()));
            let per: Vec<&SummaryRow> = rows
                .iter()
                .filter(|r| &r.variant == v && &r.setting == s && r.n > 0)
                .collect();
            let means: Vec<f64> = per.iter().map(|r| r.mean).collect();
            let (mean, std) = mean_std(&means);
            let failed = rows.iter().filter(|r| &r.variant == v && &r.setting == s).map(|r| r.failed).sum();
            rows.push(SummaryRow {
                holdout: "average".into(),
                variant: v.clone(),
                setting: s.clone(),
                n: means.len(),
                failed,
                mean,
                std,
            });
        }
    }
    rows
}

pub fn write_cells_csv(results: &[CellResult], mut w: impl Write) -> Result<()> {
    writeln!(w, "holdout,variant,setting,seed,value,error")?;
    for r in results {
        let (value, error) = match &r.value {
            Ok(v) => (v.to_string(), String::new()),
            Err(e) => (String::new(), e.replace([',', '\n'], " ")),
        };
        writeln!(w, "{},{},{},{},{},{}", r.cell.holdout, r.cell.variant, r.cell.setting, r.cell.seed, value, error)?;
    }
    Ok(())
}

pub fn write_summary_csv(rows: &[SummaryRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "holdout,variant,setting,n,failed,mean,std")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{},{},{}", r.holdout, r.variant, r.setting, r.n, r.failed, r.mean, r.std)?;
    }
    Ok(())
}

/// Runs the sweep and writes `cells.csv` and `summary.csv` into `out`.
pub fn sweep_to_dir(base: &ExperimentConfig, spec: &SweepSpec, out: &Path) -> Result<(Vec<CellResult>, Vec<PathBuf>)> {
    std::fs::create_dir_all(out)?;
    let results = run_sweep(base, spec)?;
    let cells_path = out.join("cells.csv");
    let mut w = BufWriter::new(File::create(&cells_path)?);
    write_cells_csv(&results, &mut w)?;
    w.flush()?;
    let summary_path = out.join("summary.csv");
    let mut w = BufWriter::new(File::create(&summary_path)?);
    write_summary_csv(&summarize(&results), &mut w)?;
    w.flush()?;
    Ok((results, vec![cells_path, summary_path]))
}

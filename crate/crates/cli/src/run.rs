use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use epidg::bank::{checkpoint_save, DomainBank};
use epidg::data::MultiDomainDataset;
use epidg::train::{MetricRow, Trainer, METRICS_HEADER};
use epidg::Result;

use crate::config::ExperimentConfig;
use crate::manifest::{unix_now, RunManifest, RunStatus};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.epidg";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub bank: DomainBank,
    pub rows: Vec<MetricRow>,
}

/// Iterations after which a periodic checkpoint is written.
fn checkpoint_interval(total: usize, fraction: f64) -> Option<usize> {
    if fraction <= 0.0 || total == 0 {
        return None;
    }
    Some(((total as f64 * fraction).ceil() as usize).max(1))
}

pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("iter_{iteration:07}.epidg"))
}

/// Trains per `config` into `dir`: writes the manifest first, streams the
/// metrics CSV, saves periodic checkpoints and the final bank, and marks the
/// manifest completed (or failed, with the error) at the end.
pub fn train_run(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    let mut manifest = RunManifest::new(config.clone(), dir)?;
    manifest.write(dir)?;
    let result = train_into(config, dir);
    manifest.finished_unix = Some(unix_now());
    match &result {
        Ok(_) => manifest.status = RunStatus::Completed,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    manifest.write(dir)?;
    result
}

fn train_into(config: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    let dataset: MultiDomainDataset = config.dataset()?;
    let train = config.train_config()?;
    let arch = config.arch(dataset.dim());
    let interval = checkpoint_interval(train.total_iters, config.output.checkpoint_every);
    let total = train.total_iters;
    let mut trainer = Trainer::new(&dataset, &arch, train)?;

    let mut metrics = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let rows = trainer.run_with(|tr, row| {
        writeln!(metrics, "{}", row.to_csv_line())?;
        let done = row.report.iteration + 1;
        if let Some(every) = interval {
            if done % every == 0 && done < total {
                checkpoint_save(tr.bank(), checkpoint_path(dir, done))?;
            }
        }
        Ok(())
    })?;
    metrics.flush()?;
    drop(metrics);
    let bank = trainer.into_bank();
    checkpoint_save(&bank, dir.join(FINAL_CHECKPOINT))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        bank,
        rows,
    })
}

/// Repeats the run recorded in a manifest into a new directory.
pub fn rerun(manifest_path: &Path, dir: &Path) -> Result<RunOutcome> {
    let manifest = RunManifest::read(manifest_path)?;
    manifest.verify_inputs()?;
    train_run(&manifest.config, dir)
}

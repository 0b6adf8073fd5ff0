use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use epidg::bank::{checkpoint_load_expecting, DomainBank};
use epidg::data::{MultiDomainDataset, Split};
use epidg::eval::{
    ensemble_baseline, evaluate_accuracy, hetero_probe, routing_analysis, sharpness_analysis, target_accuracy,
    write_probe_csv, ProbeMode,
};
use epidg::nn::{stream_rng, Mlp, Stream};
use epidg::{Error, Result};

use crate::manifest::RunManifest;
use crate::run::FINAL_CHECKPOINT;

pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    Accuracy,
    Routing,
    Sharpness,
    Probe,
    Ensemble,
}

impl std::str::FromStr for EvalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(EvalKind::Accuracy),
            "routing" => Ok(EvalKind::Routing),
            "sharpness" => Ok(EvalKind::Sharpness),
            "probe" => Ok(EvalKind::Probe),
            "ensemble" => Ok(EvalKind::Ensemble),
            other => Err(Error::Config(format!(
                "unknown evaluation '{other}' (accuracy, routing, sharpness, probe, ensemble)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub which: EvalKind,
    /// Defaults to the run's final checkpoint.
    pub checkpoint: Option<PathBuf>,
    pub sigmas: Vec<f64>,
    pub draws: usize,
    pub probe_mode: ProbeMode,
    /// Run directory whose deployed feature extractor serves as the probe baseline.
    pub baseline: Option<PathBuf>,
    pub l2: f64,
    /// Ensemble size; defaults to the number of sources plus one.
    pub members: Option<usize>,
}

impl EvalOptions {
    pub fn new(which: EvalKind) -> Self {
        EvalOptions {
            which,
            checkpoint: None,
            sigmas: vec![0.0, 0.1, 0.3, 0.5, 1.0],
            draws: 20,
            probe_mode: ProbeMode::TrainedOnly,
            baseline: None,
            l2: epidg::eval::probe::DEFAULT_L2,
            members: None,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_bank(run: &Path, checkpoint: Option<&Path>, n_domains: usize) -> Result<DomainBank> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run.join(FINAL_CHECKPOINT));
    if !path.exists() {
        return Err(Error::Checkpoint(format!("checkpoint {} not found", path.display())));
    }
    checkpoint_load_expecting(&path, n_domains)
}

/// Runs one evaluation on a finished run and writes its CSV files under
/// `<run>/eval/`. Returns the paths written.
pub fn eval_run(run: &Path, opts: &EvalOptions) -> Result<Vec<PathBuf>> {
    let manifest = RunManifest::read(run)?;
    manifest.verify_inputs()?;
    let config = &manifest.config;
    let dataset = config.dataset()?;
    let out_dir = run.join(EVAL_DIR);
    std::fs::create_dir_all(&out_dir)?;
    let mut written = Vec::new();

    if opts.which == EvalKind::Ensemble {
        let members = opts.members.unwrap_or(dataset.n_sources() + 1);
        let train = config.train_config()?;
        let acc = ensemble_baseline(&dataset, &config.arch(dataset.dim()), &train, members)?;
        let path = out_dir.join("ensemble.csv");
        let mut w = create(&path)?;
        writeln!(w, "members,target_accuracy")?;
        writeln!(w, "{members},{acc}")?;
        w.flush()?;
        written.push(path);
        return Ok(written);
    }

    let bank = load_bank(run, opts.checkpoint.as_deref(), dataset.n_sources())?;
    match opts.which {
        EvalKind::Accuracy => {
            let path = out_dir.join("accuracy.csv");
            write_accuracy(&bank, &dataset, create(&path)?)?;
            written.push(path);
        }
        EvalKind::Routing => {
            let (f, c) = routing_analysis(&bank, &dataset)?;
            for m in [f, c] {
                let path = out_dir.join(format!("routing_{}.csv", m.mode.as_str()));
                let mut w = create(&path)?;
                m.write_csv(&mut w)?;
                w.flush()?;
                written.push(path);
            }
        }
        EvalKind::Sharpness => {
            if !dataset.homogeneous {
                return Err(Error::Config(
                    "sharpness is measured on target accuracy and needs a shared label space".into(),
                ));
            }
            let mut rng = stream_rng(manifest.seed, Stream::Eval);
            let curve = sharpness_analysis(
                &bank.deployed_feature()?,
                bank.agnostic.classifier(),
                &dataset.target,
                epidg::data::SplitSel::All,
                &opts.sigmas,
                opts.draws,
                &mut rng,
            )?;
            let path = out_dir.join("sharpness.csv");
            let mut w = create(&path)?;
            curve.write_csv(&mut w)?;
            w.flush()?;
            written.push(path);
            let path = out_dir.join("sharpness_plot.csv");
            let mut w = create(&path)?;
            curve.write_plot(&mut w)?;
            w.flush()?;
            written.push(path);
        }
        EvalKind::Probe => {
            if dataset.homogeneous {
                return Err(Error::Config(
                    "the linear probe is the heterogeneous protocol; this run's data is homogeneous \
                     (set data.homogeneous = false or use a synth-hetero source)"
                        .into(),
                ));
            }
            let baseline: Option<Mlp> = match &opts.baseline {
                Some(dir) => {
                    let m = RunManifest::read(dir)?;
                    let n = m.config.dataset()?.n_sources();
                    Some(load_bank(dir, None, n)?.deployed_feature()?)
                }
                None => None,
            };
            let result = hetero_probe(&bank, &dataset.target, opts.probe_mode, baseline.as_ref(), opts.l2)?;
            let path = out_dir.join(format!("probe_{}.csv", opts.probe_mode));
            let mut w = create(&path)?;
            write_probe_csv(&[result], &mut w)?;
            w.flush()?;
            written.push(path);
        }
        EvalKind::Ensemble => unreachable!("handled above"),
    }
    Ok(written)
}

/// Source test accuracy per domain plus the target accuracy when the label
/// space is shared.
fn write_accuracy(bank: &DomainBank, ds: &MultiDomainDataset, mut w: impl Write) -> Result<()> {
    writeln!(w, "domain,role,accuracy")?;
    let feature = bank.deployed_feature()?;
    for (i, d) in ds.sources.iter().enumerate() {
        let acc = evaluate_accuracy(&feature, bank.agnostic.head(i), d, Split::Test)?;
        writeln!(w, "{},source,{acc}", d.name)?;
    }
    if ds.homogeneous {
        writeln!(w, "{},target,{}", ds.target.name, target_accuracy(bank, ds)?)?;
    }
    w.flush()?;
    Ok(())
}

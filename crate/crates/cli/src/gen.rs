use std::path::{Path, PathBuf};

use epidg::data::{gen_synthetic_heterogeneous, gen_synthetic_homogeneous, write_domain_csv, HeteroSpec, HomogSpec};
use epidg::nn::seeded_rng;
use epidg::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    /// `synth-homog` or `synth-hetero`.
    pub preset: String,
    pub domains: Option<usize>,
    pub classes: Option<usize>,
    pub label_spaces: Option<Vec<usize>>,
    pub target_classes: Option<usize>,
    pub dim: usize,
    pub per_domain: usize,
    pub shift: f64,
    pub class_spread: f64,
    pub seed: u64,
}

/// Generates a synthetic benchmark and writes one feature CSV per domain
/// (`d0.csv`, ..., `target.csv`) into `out`.
pub fn gen_data(opts: &GenOptions, out: &Path) -> Result<Vec<PathBuf>> {
    let ds = match opts.preset.as_str() {
        "synth-homog" => {
            if opts.label_spaces.is_some() || opts.target_classes.is_some() {
                return Err(Error::Config(
                    "--label-spaces and --target-classes only apply to synth-hetero".into(),
                ));
            }
            let classes = opts
                .classes
                .ok_or_else(|| Error::Config("synth-homog needs --classes".into()))?;
            let mut spec = HomogSpec::new(opts.domains.unwrap_or(4), classes, opts.dim, opts.per_domain, opts.shift);
            spec.class_spread = opts.class_spread;
            gen_synthetic_homogeneous(&spec, &mut seeded_rng(opts.seed))?
        }
        "synth-hetero" => {
            if opts.classes.is_some() {
                return Err(Error::Config(
                    "--classes is homogeneous-only; synth-hetero takes --label-spaces".into(),
                ));
            }
            let label_spaces = opts
                .label_spaces
                .clone()
                .ok_or_else(|| Error::Config("synth-hetero needs --label-spaces".into()))?;
            if let Some(n) = opts.domains.filter(|&n| n != label_spaces.len()) {
                return Err(Error::Config(format!(
                    "--domains {n} but --label-spaces lists {} domains",
                    label_spaces.len()
                )));
            }
            let spec = HeteroSpec {
                label_spaces,
                target_label_space: opts
                    .target_classes
                    .ok_or_else(|| Error::Config("synth-hetero needs --target-classes".into()))?,
                dim: opts.dim,
                per_domain: opts.per_domain,
                shift_strength: opts.shift,
                class_spread: opts.class_spread,
            };
            gen_synthetic_heterogeneous(&spec, &mut seeded_rng(opts.seed))?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown data preset '{other}' (synth-homog, synth-hetero)"
            )))
        }
    };
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for d in ds.all_domains() {
        let path = out.join(format!("{}.csv", d.name));
        write_domain_csv(d, &path)?;
        written.push(path);
    }
    Ok(written)
}

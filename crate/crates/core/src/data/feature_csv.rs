//! Feature CSV files: header `domain,label,split,f0,f1,...`, split one of
//! `train`, `val`, `test` or `auto`. Rows of several domains may share a file.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{random_splits, DomainData, MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Stream, Tensor2};

/// Fraction of `auto` rows assigned to train; the rest go to test.
pub const AUTO_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    /// Name of the held-out domain.
    pub target: String,
    pub homogeneous: bool,
    /// Declared class count per domain name. Missing entries are inferred
    /// (homogeneous: one count across all domains).
    pub classes: HashMap<String, usize>,
    /// Seeds the split of `auto` rows.
    pub seed: u64,
}

impl CsvOptions {
    pub fn new(target: impl Into<String>, homogeneous: bool, seed: u64) -> Self {
        CsvOptions {
            target: target.into(),
            homogeneous,
            classes: HashMap::new(),
            seed,
        }
    }
}

struct RawDomain {
    name: String,
    rows: Vec<f64>,
    labels: Vec<usize>,
    splits: Vec<Option<Split>>,
    /// (file, line) of every row, for error messages.
    origin: Vec<(PathBuf, usize)>,
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads every file and groups rows by domain, in order of first appearance.
/// `auto` rows are split 70/30 train/test with the given seed; labels are
/// checked against declared class counts when provided.
pub fn read_domains_csv(
    paths: &[PathBuf],
    homogeneous: bool,
    classes: &HashMap<String, usize>,
    seed: u64,
) -> Result<Vec<DomainData>> {
    let mut order: Vec<String> = Vec::new();
    let mut raw: HashMap<String, RawDomain> = HashMap::new();
    let mut dim: Option<usize> = None;
    for path in paths {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(path)
            .map_err(|e| parse_err(path, 0, e.to_string()))?;
        let header = reader
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .clone();
        if header.len() < 4
            || &header[0] != "domain"
            || &header[1] != "label"
            || &header[2] != "split"
        {
            return Err(parse_err(
                path,
                1,
                "header must be domain,label,split,f0,... with at least one feature",
            ));
        }
        let file_dim = header.len() - 3;
        match dim {
            None => dim = Some(file_dim),
            Some(d) if d != file_dim => {
                return Err(parse_err(path, 1, format!("{file_dim} features, earlier files have {d}")));
            }
            _ => {}
        }
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            if rec.len() != header.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} fields, found {}", header.len(), rec.len()),
                ));
            }
            let name = rec[0].trim().to_string();
            if name.is_empty() {
                return Err(parse_err(path, line, "empty domain name"));
            }
            let label: usize = rec[1]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("label '{}' is not a class index", &rec[1])))?;
            let split = match rec[2].trim() {
                "auto" => None,
                s => Some(s.parse::<Split>().map_err(|e| parse_err(path, line, e.to_string()))?),
            };
            let entry = raw.entry(name.clone()).or_insert_with(|| {
                order.push(name.clone());
                RawDomain {
                    name,
                    rows: Vec::new(),
                    labels: Vec::new(),
                    splits: Vec::new(),
                    origin: Vec::new(),
                }
            });
            for (k, field) in rec.iter().skip(3).enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    parse_err(path, line, format!("feature f{k} value '{field}' is not numeric"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(path, line, format!("feature f{k} is not finite")));
                }
                entry.rows.push(v);
            }
            entry.labels.push(label);
            entry.splits.push(split);
            entry.origin.push((path.clone(), line));
        }
    }
    let dim = dim.unwrap_or(0);
    let shared_classes = if homogeneous {
        let declared: Vec<usize> = order.iter().filter_map(|n| classes.get(n).copied()).collect();
        if declared.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config("homogeneous data with differing declared class counts".into()));
        }
        Some(declared.first().copied().unwrap_or_else(|| {
            raw.values()
                .flat_map(|d| d.labels.iter())
                .max()
                .map_or(0, |m| m + 1)
        }))
    } else {
        None
    };

    let mut rng = stream_rng(seed, Stream::Split);
    let mut out = Vec::with_capacity(order.len());
    for name in order {
        let d = raw.remove(&name).expect("grouped above");
        let k = shared_classes
            .or_else(|| classes.get(&name).copied())
            .unwrap_or_else(|| d.labels.iter().max().map_or(0, |m| m + 1));
        if let Some(i) = d.labels.iter().position(|&y| y >= k) {
            let (file, line) = &d.origin[i];
            return Err(parse_err(
                file,
                *line,
                format!("label {} out of range for {k} classes", d.labels[i]),
            ));
        }
        let auto: Vec<usize> = (0..d.labels.len()).filter(|&i| d.splits[i].is_none()).collect();
        let auto_tags = random_splits(
            auto.len(),
            &[(Split::Train, AUTO_TRAIN_FRACTION), (Split::Test, 1.0)],
            &mut rng,
        );
        let mut splits: Vec<Split> = d.splits.iter().map(|s| s.unwrap_or(Split::Train)).collect();
        for (&i, &t) in auto.iter().zip(&auto_tags) {
            splits[i] = t;
        }
        let n = d.labels.len();
        out.push(DomainData::new(d.name, Tensor2::new(n, dim, d.rows)?, d.labels, k, splits)?);
    }
    Ok(out)
}

pub fn load_feature_csv(paths: &[PathBuf], opts: &CsvOptions) -> Result<MultiDomainDataset> {
    let domains = read_domains_csv(paths, opts.homogeneous, &opts.classes, opts.seed)?;
    let target = domains
        .iter()
        .position(|d| d.name == opts.target)
        .ok_or_else(|| Error::Config(format!("target domain '{}' not found in feature files", opts.target)))?;
    MultiDomainDataset::leave_one_out(&domains, target, opts.homogeneous)
}

fn write_rows(w: &mut impl Write, d: &DomainData) -> Result<()> {
    for i in 0..d.len() {
        write!(w, "{},{},{}", d.name, d.labels[i], d.splits[i])?;
        for v in d.features.row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn write_header(w: &mut impl Write, dim: usize) -> Result<()> {
    write!(w, "domain,label,split")?;
    for k in 0..dim {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Writes one domain; floats use the shortest representation that parses
/// back to the same value.
pub fn write_domain_csv(d: &DomainData, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write_header(&mut w, d.dim())?;
    write_rows(&mut w, d)?;
    w.flush()?;
    Ok(())
}

/// Writes several domains into one combined file.
pub fn write_domains_csv(domains: &[&DomainData], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    write_header(&mut w, domains.first().map_or(0, |d| d.dim()))?;
    for d in domains {
        write_rows(&mut w, d)?;
    }
    w.flush()?;
    Ok(())
}

use rand::Rng as _;

use super::{random_splits, DomainData, MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::nn::{rng::gaussian, Rng, Tensor2};

/// Observation noise added after the domain transform.
pub const NOISE_STD: f64 = 0.1;

/// Split fractions used for source domains: train, val, rest test.
const SOURCE_SPLITS: [(Split, f64); 3] = [(Split::Train, 0.7), (Split::Val, 0.1), (Split::Test, 1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct HomogSpec {
    /// Number of source domains; one extra target domain is generated.
    pub n_domains: usize,
    pub n_classes: usize,
    pub dim: usize,
    pub per_domain: usize,
    pub shift_strength: f64,
    /// Std of the within-class latent scatter around each prototype.
    pub class_spread: f64,
}

impl HomogSpec {
    pub fn new(n_domains: usize, n_classes: usize, dim: usize, per_domain: usize, shift_strength: f64) -> Self {
        HomogSpec {
            n_domains,
            n_classes,
            dim,
            per_domain,
            shift_strength,
            class_spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroSpec {
    pub label_spaces: Vec<usize>,
    pub target_label_space: usize,
    pub dim: usize,
    pub per_domain: usize,
    pub shift_strength: f64,
    pub class_spread: f64,
}

/// Affine covariate shift `x ↦ Q·diag(s)·x + b`.
struct DomainTransform {
    rotation: Tensor2,
    scale: Vec<f64>,
    bias: Vec<f64>,
}

impl DomainTransform {
    /// Identity at `strength = 0`. The rotation is the orthogonal factor of
    /// `I + strength·G/√dim` with Gaussian `G`, the scales are uniform in
    /// `[1 − strength, 1 + strength]` and the bias has norm `strength·√dim`.
    fn sample(dim: usize, strength: f64, rng: &mut Rng) -> Self {
        let g = Tensor2::from_fn(dim, dim, |_, _| gaussian(rng));
        let scale_g = strength / (dim as f64).sqrt();
        let m = Tensor2::from_fn(dim, dim, |i, j| {
            if i == j {
                1.0 + scale_g * g.get(i, j)
            } else {
                scale_g * g.get(i, j)
            }
        });
        let rotation = orthonormalize(&m);
        let scale = (0..dim)
            .map(|_| {
                let u: f64 = rng.random_range(-1.0..=1.0);
                (1.0 + strength * u).max(0.1)
            })
            .collect();
        let dir: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let bias = dir
            .iter()
            .map(|v| v / norm * strength * (dim as f64).sqrt())
            .collect();
        DomainTransform {
            rotation,
            scale,
            bias,
        }
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let dim = z.len();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.bias[i];
            for j in 0..dim {
                acc += self.rotation.get(i, j) * self.scale[j] * z[j];
            }
            *o = acc;
        }
    }
}

/// Modified Gram-Schmidt on the columns of a square matrix; columns of the
/// result are orthonormal and `Qᵀ·M` is upper triangular with positive
/// diagonal.
fn orthonormalize(m: &Tensor2) -> Tensor2 {
    let n = m.rows();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| m.get(i, j)).collect()).collect();
    for j in 0..n {
        for k in 0..j {
            let dot: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(j);
            for (a, b) in tail[0].iter_mut().zip(&head[k]) {
                *a -= dot * b;
            }
        }
        let norm = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[j].iter_mut().for_each(|v| *v /= norm);
    }
    Tensor2::from_fn(n, n, |i, j| cols[j][i])
}

fn prototypes(k: usize, dim: usize, rng: &mut Rng) -> Tensor2 {
    Tensor2::from_fn(k, dim, |_, _| gaussian(rng))
}

/// Draws `n` balanced examples around `protos` and pushes them through a
/// fresh domain transform.
fn sample_domain(
    name: String,
    protos: &Tensor2,
    n: usize,
    strength: f64,
    spread: f64,
    splits: &[(Split, f64)],
    rng: &mut Rng,
) -> Result<DomainData> {
    let (k, dim) = protos.shape();
    let transform = DomainTransform::sample(dim, strength, rng);
    let mut features = Tensor2::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; dim];
    for i in 0..n {
        let y = i % k;
        for (d, zv) in z.iter_mut().enumerate() {
            *zv = protos.get(y, d) + spread * gaussian(rng);
        }
        let row = features.row_mut(i);
        transform.apply(&z, row);
        for v in row.iter_mut() {
            *v += NOISE_STD * gaussian(rng);
        }
        labels.push(y);
    }
    let tags = random_splits(n, splits, rng);
    DomainData::new(name, features, labels, k, tags)
}

fn check_common(per_domain: usize, dim: usize, strength: f64) -> Result<()> {
    if per_domain == 0 {
        return Err(Error::invalid("per_domain must be positive"));
    }
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if !(strength.is_finite() && strength >= 0.0) {
        return Err(Error::invalid("shift_strength must be finite and non-negative"));
    }
    Ok(())
}

/// Source domains `d0..d{n-1}` plus a `target` domain, all sharing one set of
/// class prototypes and each with its own affine shift. Every domain, the
/// target included, is split 70/10/20 train/val/test so that any of them can
/// be held out.
pub fn gen_synthetic_homogeneous(spec: &HomogSpec, rng: &mut Rng) -> Result<MultiDomainDataset> {
    if spec.n_domains == 0 {
        return Err(Error::invalid("at least one source domain is required"));
    }
    if spec.n_classes < 2 {
        return Err(Error::invalid("at least two classes are required"));
    }
    check_common(spec.per_domain, spec.dim, spec.shift_strength)?;
    let protos = prototypes(spec.n_classes, spec.dim, rng);
    let sources = (0..spec.n_domains)
        .map(|d| {
            sample_domain(
                format!("d{d}"),
                &protos,
                spec.per_domain,
                spec.shift_strength,
                spec.class_spread,
                &SOURCE_SPLITS,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let target = sample_domain(
        "target".into(),
        &protos,
        spec.per_domain,
        spec.shift_strength,
        spec.class_spread,
        &SOURCE_SPLITS,
        rng,
    )?;
    let mut ds = MultiDomainDataset::new(sources, target, true)?;
    if spec.n_domains == 1 {
        ds.warnings
            .push("a single source domain supports AGG and R only; F and C need two or more".into());
    }
    if spec.dim < spec.n_classes {
        ds.warnings.push(format!(
            "dim {} is smaller than the class count {}",
            spec.dim, spec.n_classes
        ));
    }
    Ok(ds)
}

/// Every domain gets its own, independently drawn prototype set of its own
/// cardinality. Target prototypes are random linear combinations of the
/// source prototypes, rescaled to the same typical norm, so a feature space
/// that separates source classes also tends to separate target ones. The
/// target is split 70/30 train/test for probing.
pub fn gen_synthetic_heterogeneous(spec: &HeteroSpec, rng: &mut Rng) -> Result<MultiDomainDataset> {
    if spec.label_spaces.is_empty() {
        return Err(Error::invalid("at least one source domain is required"));
    }
    if spec.label_spaces.iter().any(|&k| k < 2) || spec.target_label_space < 2 {
        return Err(Error::invalid("every label space needs at least two classes"));
    }
    check_common(spec.per_domain, spec.dim, spec.shift_strength)?;
    let source_protos: Vec<Tensor2> = spec
        .label_spaces
        .iter()
        .map(|&k| prototypes(k, spec.dim, rng))
        .collect();
    let pool: Vec<&[f64]> = source_protos
        .iter()
        .flat_map(|p| (0..p.rows()).map(move |r| p.row(r)))
        .collect();
    let target_protos = Tensor2::from_fn(spec.target_label_space, spec.dim, |_, _| 0.0);
    let mut target_protos = target_protos;
    for r in 0..spec.target_label_space {
        let w: Vec<f64> = pool.iter().map(|_| gaussian(rng)).collect();
        let row = target_protos.row_mut(r);
        for (p, &wk) in pool.iter().zip(&w) {
            for (o, &v) in row.iter_mut().zip(p.iter()) {
                *o += wk * v;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let want = (spec.dim as f64).sqrt();
        row.iter_mut().for_each(|v| *v *= want / norm);
    }

    let sources = source_protos
        .iter()
        .enumerate()
        .map(|(d, protos)| {
            sample_domain(
                format!("d{d}"),
                protos,
                spec.per_domain,
                spec.shift_strength,
                spec.class_spread,
                &SOURCE_SPLITS,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let target = sample_domain(
        "target".into(),
        &target_protos,
        spec.per_domain,
        spec.shift_strength,
        spec.class_spread,
        &[(Split::Train, 0.7), (Split::Test, 1.0)],
        rng,
    )?;
    MultiDomainDataset::new(sources, target, false)
}

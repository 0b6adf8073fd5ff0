use std::io::Write;

use crate::data::{DomainData, SplitSel};
use crate::error::{Error, Result};
use crate::nn::{rng::gaussian, Mlp, Rng};

use super::accuracy::evaluate_accuracy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessPoint {
    pub sigma: f64,
    pub mean: f64,
    /// Population std over draws.
    pub std: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessCurve {
    pub points: Vec<SharpnessPoint>,
}

impl SharpnessCurve {
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "sigma,mean,std,draws")?;
        for p in &self.points {
            writeln!(w, "{},{},{},{}", p.sigma, p.mean, p.std, p.draws)?;
        }
        Ok(())
    }

    /// Two columns: `sigma` and `mean±std`.
    pub fn write_plot(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "sigma,accuracy")?;
        for p in &self.points {
            writeln!(w, "{},{:.6}±{:.6}", p.sigma, p.mean, p.std)?;
        }
        Ok(())
    }
}

/// Adds `sigma · std(W) · ε` to every weight matrix, layer by layer.
/// Biases are left alone.
fn perturb(model: &mut Mlp, sigma: f64, rng: &mut Rng) {
    for layer in model.layers.iter_mut() {
        let scale = sigma * layer.weights.std();
        for w in layer.weights.data_mut() {
            *w += scale * gaussian(rng);
        }
    }
}

/// Accuracy under relative Gaussian weight noise at each `sigma`, averaged
/// over `m_draws` perturbations. The given models are never modified; each
/// draw perturbs a private copy. `sigma = 0` skips the noise entirely.
pub fn sharpness_analysis(
    feature: &Mlp,
    classifier: &Mlp,
    data: &DomainData,
    split: impl Into<SplitSel>,
    sigmas: &[f64],
    m_draws: usize,
    rng: &mut Rng,
) -> Result<SharpnessCurve> {
    let split = split.into();
    if m_draws == 0 {
        return Err(Error::invalid("sharpness analysis needs at least one draw"));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::invalid(format!("noise magnitude {s} must be finite and non-negative")));
    }
    let clean = evaluate_accuracy(feature, classifier, data, split)?;
    let mut points = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        if sigma == 0.0 {
            points.push(SharpnessPoint {
                sigma,
                mean: clean,
                std: 0.0,
                draws: m_draws,
            });
            continue;
        }
        let mut accs = Vec::with_capacity(m_draws);
        for _ in 0..m_draws {
            let mut f = feature.clone();
            let mut c = classifier.clone();
            perturb(&mut f, sigma, rng);
            perturb(&mut c, sigma, rng);
            accs.push(evaluate_accuracy(&f, &c, data, split)?);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
        points.push(SharpnessPoint {
            sigma,
            mean,
            std: var.sqrt(),
            draws: m_draws,
        });
    }
    Ok(SharpnessCurve { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_homogeneous, HomogSpec, Split};
    use crate::nn::{seeded_rng, Activation};

    #[test]
    fn zero_sigma_is_exact_and_models_untouched() {
        let ds = gen_synthetic_homogeneous(&HomogSpec::new(2, 3, 5, 90, 0.3), &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(1);
        let f = Mlp::init(&[5, 8], &[Activation::Relu], &mut rng).unwrap();
        let c = Mlp::init(&[8, 3], &[Activation::Identity], &mut rng).unwrap();
        let (f0, c0) = (f.clone(), c.clone());
        let curve = sharpness_analysis(&f, &c, &ds.target, Split::Test, &[0.0, 0.5], 5, &mut rng).unwrap();
        let clean = evaluate_accuracy(&f, &c, &ds.target, Split::Test).unwrap();
        assert_eq!(curve.points[0].mean, clean);
        assert_eq!(curve.points[0].std, 0.0);
        assert!(curve.points[1].std >= 0.0);
        assert!(f.params_bit_eq(&f0) && c.params_bit_eq(&c0));
        let mut buf = Vec::new();
        curve.write_plot(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn rejects_bad_arguments() {
        let ds = gen_synthetic_homogeneous(&HomogSpec::new(2, 3, 5, 30, 0.3), &mut seeded_rng(0)).unwrap();
        let mut rng = seeded_rng(1);
        let f = Mlp::init(&[5, 3], &[Activation::Identity], &mut rng).unwrap();
        let c = Mlp::init(&[3, 3], &[Activation::Identity], &mut rng).unwrap();
        assert!(sharpness_analysis(&f, &c, &ds.target, Split::Test, &[0.1], 0, &mut rng).is_err());
        assert!(sharpness_analysis(&f, &c, &ds.target, Split::Test, &[-0.1], 2, &mut rng).is_err());
    }
}

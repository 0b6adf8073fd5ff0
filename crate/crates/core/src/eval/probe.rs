use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::bank::DomainBank;
use crate::data::{DomainData, Split};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Mlp, Tensor2};

use super::accuracy::count_correct;

/// Default L2 coefficient on the probe weights.
pub const DEFAULT_L2: f64 = 1e-2;
/// Gradient infinity-norm at which the probe fit stops.
pub const PROBE_TOLERANCE: f64 = 1e-6;
const MAX_PROBE_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    TrainedOnly,
    /// Trained features concatenated with the baseline's.
    Concat,
    /// Elementwise mean of trained and baseline features.
    Mean,
}

impl fmt::Display for ProbeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeMode::TrainedOnly => "trained",
            ProbeMode::Concat => "concat",
            ProbeMode::Mean => "mean",
        })
    }
}

impl FromStr for ProbeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trained" | "trained-only" => Ok(ProbeMode::TrainedOnly),
            "concat" => Ok(ProbeMode::Concat),
            "mean" => Ok(ProbeMode::Mean),
            other => Err(Error::Config(format!("unknown probe mode '{other}' (trained, concat, mean)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub target: String,
    pub mode: ProbeMode,
    pub accuracy: f64,
    pub converged: bool,
}

pub fn write_probe_csv(results: &[ProbeResult], mut w: impl Write) -> Result<()> {
    writeln!(w, "target,mode,accuracy,converged")?;
    for r in results {
        writeln!(w, "{},{},{},{}", r.target, r.mode, r.accuracy, r.converged)?;
    }
    Ok(())
}

/// Multinomial logistic regression with an L2 penalty on the weights (the
/// bias is not penalised), fit by accelerated full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Objective<'a> {
    x: &'a Tensor2,
    y: &'a [usize],
    l2: f64,
}

impl Objective<'_> {
    fn eval(&self, w: &Tensor2, b: &[f64]) -> Result<(f64, Tensor2, Tensor2)> {
        let mut logits = self.x.matmul(w)?;
        logits.add_row_broadcast(b)?;
        let (ce, dlogits) = softmax_cross_entropy(&logits, self.y)?;
        let mut gw = self.x.matmul_tn(&dlogits)?;
        gw.axpy(self.l2, w)?;
        let gb = dlogits.sum_rows();
        let penalty = 0.5 * self.l2 * w.data().iter().map(|v| v * v).sum::<f64>();
        Ok((ce + penalty, gw, gb))
    }
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / n` by power iteration, used to bound
/// the gradient's Lipschitz constant.
fn gram_top_eigenvalue(x: &Tensor2) -> Result<f64> {
    let n = x.rows() as f64;
    let d = x.cols();
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let xv: Vec<f64> = (0..x.rows())
            .map(|r| x.row(r).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d])
            .collect();
        let mut next = vec![0.0; d + 1];
        for (r, &s) in xv.iter().enumerate() {
            for (c, &a) in x.row(r).iter().enumerate() {
                next[c] += a * s;
            }
            next[d] += s;
        }
        next.iter_mut().for_each(|e| *e /= n);
        let norm = next.iter().map(|e| e * e).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let prev = lambda;
        lambda = norm;
        v = next.into_iter().map(|e| e / norm).collect();
        if (lambda - prev).abs() <= 1e-9 * lambda {
            break;
        }
    }
    Ok(lambda)
}

fn inf_norm(a: &Tensor2, b: &Tensor2) -> f64 {
    a.data().iter().chain(b.data()).fold(0.0, |m, v| m.max(v.abs()))
}

impl LinearProbe {
    /// Fits on `x` / `y` until the gradient's infinity norm drops below
    /// [`PROBE_TOLERANCE`]. Deterministic: starts from zero.
    pub fn fit(x: &Tensor2, y: &[usize], classes: usize, l2: f64) -> Result<Self> {
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::invalid(format!("probe L2 coefficient {l2} must be non-negative")));
        }
        if x.rows() != y.len() || y.is_empty() {
            return Err(Error::shape("LinearProbe::fit", x.rows(), y.len()));
        }
        let obj = Objective { x, y, l2 };
        // Softmax cross-entropy has Hessian at most 1/2 in logit space.
        let lipschitz = 0.5 * gram_top_eigenvalue(x)? * 1.05 + l2;
        let step = 1.0 / lipschitz.max(1e-12);

        let d = x.cols();
        let mut w = Tensor2::zeros(d, classes);
        let mut b = Tensor2::zeros(1, classes);
        let (mut f, mut gw, mut gb) = obj.eval(&w, b.data())?;
        let (mut yw, mut yb) = (w.clone(), b.clone());
        let (mut ygw, mut ygb) = (gw.clone(), gb.clone());
        let mut t = 1.0f64;
        let mut converged = inf_norm(&gw, &gb) < PROBE_TOLERANCE;
        let mut iterations = 0;
        while !converged && iterations < MAX_PROBE_ITERS {
            iterations += 1;
            let mut nw = yw.clone();
            nw.axpy(-step, &ygw)?;
            let mut nb = yb.clone();
            nb.axpy(-step, &ygb)?;
            let (nf, ngw, ngb) = obj.eval(&nw, nb.data())?;
            if nf > f {
                // Adaptive restart: drop the momentum and retry from the last iterate.
                t = 1.0;
                yw = w.clone();
                yb = b.clone();
                ygw = gw.clone();
                ygb = gb.clone();
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            yw = nw.clone();
            yw.axpy(beta, &nw)?;
            yw.axpy(-beta, &w)?;
            yb = nb.clone();
            yb.axpy(beta, &nb)?;
            yb.axpy(-beta, &b)?;
            t = t_next;
            w = nw;
            b = nb;
            f = nf;
            gw = ngw;
            gb = ngb;
            converged = inf_norm(&gw, &gb) < PROBE_TOLERANCE;
            if !converged {
                let (_, a, c) = obj.eval(&yw, yb.data())?;
                ygw = a;
                ygb = c;
            }
        }
        Ok(LinearProbe {
            weights: w,
            bias: b.into_data(),
            iterations,
            converged,
        })
    }

    pub fn logits(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut z = x.matmul(&self.weights)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }
}

/// Probe inputs for `x`: the bank's deployed features, optionally combined
/// with a baseline extractor's features.
pub fn extract_probe_features(
    bank: &DomainBank,
    x: &Tensor2,
    mode: ProbeMode,
    baseline: Option<&Mlp>,
) -> Result<Tensor2> {
    let trained = bank.agnostic_features(x)?;
    let base = match (mode, baseline) {
        (ProbeMode::TrainedOnly, _) => return Ok(trained),
        (_, Some(b)) => b.predict(x)?,
        (_, None) => {
            return Err(Error::Config(format!("probe mode {mode} needs a baseline feature extractor")));
        }
    };
    match mode {
        ProbeMode::Concat => Tensor2::hstack(&trained, &base),
        ProbeMode::Mean => {
            if trained.cols() != base.cols() {
                return Err(Error::shape("probe mean features", trained.cols(), base.cols()));
            }
            let mut m = trained;
            m.axpy(1.0, &base)?;
            m.scale(0.5);
            Ok(m)
        }
        ProbeMode::TrainedOnly => unreachable!("handled above"),
    }
}

/// Uses the trained agnostic features as a frozen extractor for `target`:
/// fits a linear classifier on its train rows and scores its test rows.
pub fn hetero_probe(
    bank: &DomainBank,
    target: &DomainData,
    mode: ProbeMode,
    baseline: Option<&Mlp>,
    l2: f64,
) -> Result<ProbeResult> {
    let (xtr, ytr) = target.view(Split::Train);
    let (xte, yte) = target.view(Split::Test);
    if ytr.is_empty() || yte.is_empty() {
        return Err(Error::invalid(format!(
            "probe target '{}' needs labelled train and test rows ({} train, {} test)",
            target.name,
            ytr.len(),
            yte.len()
        )));
    }
    let ftr = extract_probe_features(bank, &xtr, mode, baseline)?;
    let fte = extract_probe_features(bank, &xte, mode, baseline)?;
    let probe = LinearProbe::fit(&ftr, &ytr, target.label_space, l2)?;
    let correct = count_correct(&probe.logits(&fte)?, &yte)?;
    Ok(ProbeResult {
        target: target.name.clone(),
        mode,
        accuracy: correct as f64 / yte.len() as f64,
        converged: probe.converged,
    })
}

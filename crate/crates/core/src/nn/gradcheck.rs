use super::loss::softmax_cross_entropy;
use super::mlp::{Mlp, ParamGrads};
use super::tensor::Tensor2;
use crate::error::Result;

/// Central-difference step.
pub const FD_EPS: f64 = 1e-6;

/// Gradients smaller than this are compared absolutely rather than
/// relatively; central differences carry ~1e-10 of rounding noise at
/// `FD_EPS`.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    /// `(parameter tensor index, element index)` of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of `loss` with respect to every parameter of `model`.
pub fn numeric_grads(model: &Mlp, mut loss: impl FnMut(&Mlp) -> Result<f64>) -> Result<Vec<Tensor2>> {
    let mut probe = model.clone();
    let shapes: Vec<(usize, usize)> = model.params().iter().map(|t| t.shape()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (ti, &(r, c)) in shapes.iter().enumerate() {
        let mut g = Tensor2::zeros(r, c);
        for e in 0..r * c {
            let orig = probe.params()[ti].data()[e];
            probe.params_mut()[ti].data_mut()[e] = orig + FD_EPS;
            let up = loss(&probe)?;
            probe.params_mut()[ti].data_mut()[e] = orig - FD_EPS;
            let down = loss(&probe)?;
            probe.params_mut()[ti].data_mut()[e] = orig;
            g.data_mut()[e] = (up - down) / (2.0 * FD_EPS);
        }
        out.push(g);
    }
    Ok(out)
}

/// Compares `analytic` against `numeric` tensor by tensor.
pub fn compare(analytic: &[&Tensor2], numeric: &[Tensor2], tolerance: f64) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        tolerance,
        worst: None,
    };
    for (ti, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for (e, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let err = rel_error(av, nv);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((ti, e));
            }
        }
    }
    report
}

/// Checks backprop of mean softmax cross-entropy through `model`.
pub fn grad_check(model: &Mlp, batch: &Tensor2, labels: &[usize], tolerance: f64) -> Result<GradCheckReport> {
    let (logits, trace) = model.forward_traced(batch)?;
    let (_, dlogits) = softmax_cross_entropy(&logits, labels)?;
    let analytic = model.backward_traced(&trace, &dlogits)?;
    check_against(model, &analytic, batch, labels, tolerance)
}

/// Like [`grad_check`] but with caller-supplied analytic gradients, so a
/// corrupted gradient can be shown to fail.
pub fn check_against(
    model: &Mlp,
    analytic: &ParamGrads,
    batch: &Tensor2,
    labels: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let numeric = numeric_grads(model, |m| {
        let logits = m.predict(batch)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    })?;
    Ok(compare(&analytic.tensors(), &numeric, tolerance))
}

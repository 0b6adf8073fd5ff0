//! The five training losses. Each returns its value together with gradients
//! for exactly the modules it is allowed to update; partner modules are only
//! borrowed immutably and contribute input gradients, never parameter ones.

use crate::bank::DomainBank;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Mlp, ParamGrads, Tensor2};

use super::episode::EpisodeAssignment;

/// One minibatch per source domain, already passed through the shared stem
/// when there is one.
#[derive(Debug, Clone)]
pub struct DomainBatches {
    pub x: Vec<Tensor2>,
    pub y: Vec<Vec<usize>>,
}

impl DomainBatches {
    pub fn new(x: Vec<Tensor2>, y: Vec<Vec<usize>>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::invalid(format!(
                "{} feature batches with {} label batches",
                x.len(),
                y.len()
            )));
        }
        for (xi, yi) in x.iter().zip(&y) {
            if xi.rows() != yi.len() || yi.is_empty() {
                return Err(Error::shape("DomainBatches", xi.rows(), yi.len()));
            }
        }
        Ok(DomainBatches { x, y })
    }

    pub fn n_domains(&self) -> usize {
        self.x.len()
    }

    fn stacked(&self) -> Result<(Tensor2, Vec<usize>, Vec<usize>)> {
        let parts: Vec<&Tensor2> = self.x.iter().collect();
        let x = Tensor2::vstack(&parts)?;
        let y = self.y.iter().flatten().copied().collect();
        let sizes = self.y.iter().map(Vec::len).collect();
        Ok((x, y, sizes))
    }
}

fn unstack(t: &Tensor2, sizes: &[usize]) -> Vec<Tensor2> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let part = t.slice_rows(start, start + s);
            start += s;
            part
        })
        .collect()
}

fn check_domains(bank: &DomainBank, b: &DomainBatches) -> Result<()> {
    if b.n_domains() != bank.n_domains() {
        return Err(Error::shape("loss", bank.n_domains(), b.n_domains()));
    }
    Ok(())
}

/// Gradients for the agnostic pair and for the per-domain inputs.
#[derive(Debug, Clone)]
pub struct AgnosticGrads {
    pub loss: f64,
    pub feature: ParamGrads,
    /// One entry per agnostic head.
    pub heads: Vec<ParamGrads>,
    pub input: Vec<Tensor2>,
}

/// `θ` through per-domain classifiers: `mean_i CE(heads(i)(θ(x_i)), y_i)`.
/// Head gradients are produced only when `train_heads`.
fn through_heads<'a>(
    theta: &Mlp,
    b: &DomainBatches,
    head_of: impl Fn(usize) -> &'a Mlp,
    train_heads: bool,
) -> Result<(f64, ParamGrads, Vec<Option<ParamGrads>>, Vec<Tensor2>)> {
    let (x, _, sizes) = b.stacked()?;
    let (feats, f_trace) = theta.forward_traced(&x)?;
    let n = b.n_domains() as f64;
    let mut loss = 0.0;
    let mut dfeat_parts = Vec::with_capacity(sizes.len());
    let mut head_grads = Vec::with_capacity(sizes.len());
    for (i, f_i) in unstack(&feats, &sizes).into_iter().enumerate() {
        let head = head_of(i);
        let (logits, h_trace) = head.forward_traced(&f_i)?;
        let (l, mut dlogits) = softmax_cross_entropy(&logits, &b.y[i])?;
        loss += l / n;
        dlogits.scale(1.0 / n);
        if train_heads {
            let g = head.backward_traced(&h_trace, &dlogits)?;
            dfeat_parts.push(g.input.clone());
            head_grads.push(Some(g));
        } else {
            dfeat_parts.push(head.backward_input(&h_trace, &dlogits)?);
            head_grads.push(None);
        }
    }
    let parts: Vec<&Tensor2> = dfeat_parts.iter().collect();
    let dfeat = Tensor2::vstack(&parts)?;
    let g = theta.backward_traced(&f_trace, &dfeat)?;
    let input = unstack(&g.input, &sizes);
    Ok((loss, g, head_grads, input))
}

/// Aggregation loss: the agnostic pair on all domains' data, domain labels
/// ignored. With a shared label space this is one cross-entropy over the
/// stacked batches; otherwise each domain is scored by its own agnostic head
/// and the per-domain losses are averaged.
pub fn loss_agg(bank: &DomainBank, b: &DomainBatches) -> Result<AgnosticGrads> {
    check_domains(bank, b)?;
    let theta = &bank.agnostic.feature;
    if bank.agnostic.heads.len() == 1 {
        let psi = &bank.agnostic.heads[0];
        let (x, y, sizes) = b.stacked()?;
        let (feats, f_trace) = theta.forward_traced(&x)?;
        let (logits, h_trace) = psi.forward_traced(&feats)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
        let head = psi.backward_traced(&h_trace, &dlogits)?;
        let feature = theta.backward_traced(&f_trace, &head.input)?;
        let input = unstack(&feature.input, &sizes);
        return Ok(AgnosticGrads {
            loss,
            feature,
            heads: vec![head],
            input,
        });
    }
    let (loss, feature, heads, input) = through_heads(theta, b, |i| bank.agnostic.head(i), true)?;
    Ok(AgnosticGrads {
        loss,
        feature,
        heads: heads.into_iter().map(|h| h.expect("heads trained")).collect(),
        input,
    })
}

#[derive(Debug, Clone)]
pub struct DomainSpecificGrads {
    /// Mean over domains of each branch's cross-entropy on its own domain.
    pub loss: f64,
    pub per_domain_loss: Vec<f64>,
    /// `(feature, head)` gradients for trainable branches, `None` for frozen ones.
    pub branches: Vec<Option<(ParamGrads, ParamGrads)>>,
    /// Input gradients; zero for frozen branches.
    pub input: Vec<Tensor2>,
}

/// Domain-specific loss: branch `i` only ever sees domain `i`'s batch.
pub fn loss_ds(bank: &DomainBank, b: &DomainBatches) -> Result<DomainSpecificGrads> {
    check_domains(bank, b)?;
    let n = b.n_domains() as f64;
    let mut out = DomainSpecificGrads {
        loss: 0.0,
        per_domain_loss: Vec::with_capacity(b.n_domains()),
        branches: Vec::with_capacity(b.n_domains()),
        input: Vec::with_capacity(b.n_domains()),
    };
    for (i, branch) in bank.specific.iter().enumerate() {
        let (feats, f_trace) = branch.feature.forward_traced(&b.x[i])?;
        let head = branch.classifier();
        let (logits, h_trace) = head.forward_traced(&feats)?;
        let (l, mut dlogits) = softmax_cross_entropy(&logits, &b.y[i])?;
        out.loss += l / n;
        out.per_domain_loss.push(l);
        if branch.trainable {
            dlogits.scale(1.0 / n);
            let hg = head.backward_traced(&h_trace, &dlogits)?;
            let fg = branch.feature.backward_traced(&f_trace, &hg.input)?;
            out.input.push(fg.input.clone());
            out.branches.push(Some((fg, hg)));
        } else {
            out.input.push(Tensor2::zeros(b.x[i].rows(), b.x[i].cols()));
            out.branches.push(None);
        }
    }
    Ok(out)
}

/// Gradients for the agnostic feature extractor only.
#[derive(Debug, Clone)]
pub struct FeatureGrads {
    pub loss: f64,
    pub feature: ParamGrads,
    pub input: Vec<Tensor2>,
}

fn check_assignment(bank: &DomainBank, a: &EpisodeAssignment) -> Result<()> {
    if !bank.homogeneous() {
        return Err(Error::Config(
            "cross-domain episodes require a shared label space".into(),
        ));
    }
    if a.len() != bank.n_domains() {
        return Err(Error::shape("episode assignment", bank.n_domains(), a.len()));
    }
    for i in 0..a.len() {
        if a.partner(i) == i || a.partner(i) >= a.len() {
            return Err(Error::invalid(format!("domain {i} routed to partner {}", a.partner(i))));
        }
    }
    Ok(())
}

/// Episodic feature loss: domain `i` data through the agnostic `θ` and the
/// partner's classifier `ψ_j`, which stays constant.
pub fn loss_epif(bank: &DomainBank, b: &DomainBatches, a: &EpisodeAssignment) -> Result<FeatureGrads> {
    check_domains(bank, b)?;
    check_assignment(bank, a)?;
    let (loss, feature, _, input) = through_heads(
        &bank.agnostic.feature,
        b,
        |i| bank.specific[a.partner(i)].classifier(),
        false,
    )?;
    Ok(FeatureGrads { loss, feature, input })
}

/// Random-classifier loss: domain `i` data through `θ` and the frozen random
/// head of matching cardinality.
pub fn loss_epir(bank: &DomainBank, b: &DomainBatches) -> Result<FeatureGrads> {
    check_domains(bank, b)?;
    for (i, (rc, y)) in bank.random.iter().zip(&b.y).enumerate() {
        if let Some(&bad) = y.iter().find(|&&v| v >= rc.cardinality()) {
            return Err(Error::invalid(format!(
                "domain {i} label {bad} exceeds its random classifier's {} classes",
                rc.cardinality()
            )));
        }
        if bank.label_spaces.per_domain[i] != rc.cardinality() {
            return Err(Error::shape(
                "loss_epir cardinality",
                bank.label_spaces.per_domain[i],
                rc.cardinality(),
            ));
        }
    }
    let (loss, feature, _, input) =
        through_heads(&bank.agnostic.feature, b, |i| bank.random[i].classifier(), false)?;
    Ok(FeatureGrads { loss, feature, input })
}

/// Gradient for the agnostic classifier only.
#[derive(Debug, Clone)]
pub struct ClassifierGrads {
    pub loss: f64,
    pub head: ParamGrads,
}

/// Episodic classifier loss: domain `i` data encoded by the partner's
/// feature extractor `θ_j`, which stays constant, then classified by `ψ`.
pub fn loss_epic(bank: &DomainBank, b: &DomainBatches, a: &EpisodeAssignment) -> Result<ClassifierGrads> {
    check_domains(bank, b)?;
    check_assignment(bank, a)?;
    let feats = (0..b.n_domains())
        .map(|i| bank.specific[a.partner(i)].feature.predict(&b.x[i]))
        .collect::<Result<Vec<_>>>()?;
    let parts: Vec<&Tensor2> = feats.iter().collect();
    let stacked = Tensor2::vstack(&parts)?;
    let y: Vec<usize> = b.y.iter().flatten().copied().collect();
    let psi = bank.agnostic.classifier();
    let (logits, trace) = psi.forward_traced(&stacked)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
    let head = psi.backward_traced(&trace, &dlogits)?;
    Ok(ClassifierGrads { loss, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{ArchSpec, LabelSpaces};
    use crate::nn::{gaussian_init, seeded_rng};

    fn setup(n: usize) -> (DomainBank, DomainBatches) {
        let mut rng = seeded_rng(21);
        let bank = DomainBank::build(
            &ArchSpec::new(5, vec![7, 6]),
            &LabelSpaces::homogeneous(n, 3),
            &mut rng,
        )
        .unwrap();
        let x = (0..n).map(|_| gaussian_init(4, 5, 1.0, &mut rng)).collect();
        let y = (0..n).map(|i| vec![i % 3, (i + 1) % 3, 2, 0]).collect();
        (bank, DomainBatches::new(x, y).unwrap())
    }

    #[test]
    fn agg_is_mean_of_domain_losses() {
        let (bank, b) = setup(3);
        let agg = loss_agg(&bank, &b).unwrap();
        let mean: f64 = (0..3)
            .map(|i| {
                let logits = bank.agnostic_logits(&b.x[i], i).unwrap();
                softmax_cross_entropy(&logits, &b.y[i]).unwrap().0
            })
            .sum::<f64>()
            / 3.0;
        assert!((agg.loss - mean).abs() < 1e-12);
    }

    #[test]
    fn saturated_agg_has_tiny_grads() {
        let mut rng = seeded_rng(2);
        let mut bank = DomainBank::build(&ArchSpec::new(2, vec![2]), &LabelSpaces::homogeneous(1, 2), &mut rng).unwrap();
        // identity feature, head that scores class 1 at +1000·x1
        bank.agnostic.feature.layers[0].weights = Tensor2::identity(2);
        let head = &mut bank.agnostic.heads[0].layers[0];
        head.weights = Tensor2::new(2, 2, vec![0.0, 0.0, 0.0, 1000.0]).unwrap();
        let b = DomainBatches::new(vec![Tensor2::new(1, 2, vec![0.0, 1.0]).unwrap()], vec![vec![1]]).unwrap();
        let agg = loss_agg(&bank, &b).unwrap();
        assert!(agg.loss < 1e-12);
        assert!(agg.feature.max_abs() < 1e-12 && agg.heads[0].max_abs() < 1e-12);
    }

    #[test]
    fn epic_equals_agg_when_partners_copy_theta() {
        let (mut bank, b) = setup(3);
        for s in &mut bank.specific {
            s.feature = bank.agnostic.feature.clone();
        }
        let a = EpisodeAssignment::new(vec![1, 2, 0]).unwrap();
        let epic = loss_epic(&bank, &b, &a).unwrap();
        let agg = loss_agg(&bank, &b).unwrap();
        assert!((epic.loss - agg.loss).abs() < 1e-12);
    }

    #[test]
    fn frozen_branches_return_no_grads() {
        let (mut bank, b) = setup(2);
        bank.freeze_specific();
        let ds = loss_ds(&bank, &b).unwrap();
        assert!(ds.branches.iter().all(Option::is_none));
        assert!(ds.loss > 0.0);
    }

    #[test]
    fn ds_branch_grads_ignore_other_domains() {
        let (bank, mut b) = setup(3);
        let before = loss_ds(&bank, &b).unwrap();
        // perturbing domain 2's data leaves branches 0 and 1 untouched
        b.x[2] = b.x[2].map(|v| v * 3.0 + 1.0);
        let after = loss_ds(&bank, &b).unwrap();
        for k in 0..2 {
            let (f0, h0) = before.branches[k].as_ref().unwrap();
            let (f1, h1) = after.branches[k].as_ref().unwrap();
            for (x, y) in f0.tensors().iter().chain(h0.tensors().iter()).zip(f1.tensors().iter().chain(h1.tensors().iter())) {
                assert!(x.bit_eq(y));
            }
        }
    }

    #[test]
    fn heterogeneous_rejects_cross_domain_episodes() {
        let mut rng = seeded_rng(4);
        let bank = DomainBank::build(
            &ArchSpec::new(3, vec![4]),
            &LabelSpaces::heterogeneous(vec![10, 5, 3]),
            &mut rng,
        )
        .unwrap();
        let x: Vec<Tensor2> = (0..3).map(|_| gaussian_init(2, 3, 1.0, &mut rng)).collect();
        let b = DomainBatches::new(x, vec![vec![9, 0], vec![4, 1], vec![2, 0]]).unwrap();
        let a = EpisodeAssignment::new(vec![1, 2, 0]).unwrap();
        assert!(loss_epif(&bank, &b, &a).is_err());
        assert!(loss_epic(&bank, &b, &a).is_err());
        let r = loss_epir(&bank, &b).unwrap();
        assert!(r.loss > 0.0);
        let agg = loss_agg(&bank, &b).unwrap();
        assert_eq!(agg.heads.len(), 3);
    }
}

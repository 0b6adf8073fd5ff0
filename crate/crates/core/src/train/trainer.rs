use std::io::Write;

use crate::bank::{ArchSpec, DomainBank};
use crate::data::{DomainBatcher, MultiDomainDataset, Split};
use crate::error::{Error, Result};
use crate::eval::count_correct;
use crate::nn::{stream_rng, Mlp, ParamGrads, Rng, SgdState, Stream, Tensor2, Trace};

use super::config::TrainConfig;
use super::episode::sample_assignment;
use super::losses::{loss_agg, loss_ds, loss_epic, loss_epif, loss_epir, DomainBatches};

/// Per-iteration loss terms. Inactive terms are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub iteration: usize,
    pub l_agg: f64,
    pub l_ds: f64,
    pub l_epif: f64,
    pub l_epic: f64,
    pub l_epir: f64,
    /// `l_agg + l_ds + λ1·l_epif + λ2·l_epic + λ3·l_epir` at this iteration's λ.
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub report: LossReport,
    pub val_acc: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,l_agg,l_ds,l_epif,l_epic,l_epir,total,val_acc";

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        let r = &self.report;
        let val = self.val_acc.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            r.iteration, r.l_agg, r.l_ds, r.l_epif, r.l_epic, r.l_epir, r.total, val
        )
    }
}

pub fn write_metrics_csv(rows: &[MetricRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(w, "{}", row.to_csv_line())?;
    }
    Ok(())
}

struct Optimizers {
    stem: SgdState,
    agn_feature: SgdState,
    agn_heads: Vec<SgdState>,
    spec_feature: Vec<SgdState>,
    spec_head: Vec<SgdState>,
}

impl Optimizers {
    fn new(cfg: &TrainConfig, bank: &DomainBank) -> Self {
        let mk = || SgdState::new(cfg.alpha.at(0), cfg.momentum, cfg.weight_decay);
        Optimizers {
            stem: mk(),
            agn_feature: mk(),
            agn_heads: bank.agnostic.heads.iter().map(|_| mk()).collect(),
            spec_feature: bank.specific.iter().map(|_| mk()).collect(),
            spec_head: bank.specific.iter().map(|_| mk()).collect(),
        }
    }

    fn set_lr(&mut self, lr: f64) {
        self.stem.lr = lr;
        self.agn_feature.lr = lr;
        for s in self
            .agn_heads
            .iter_mut()
            .chain(self.spec_feature.iter_mut())
            .chain(self.spec_head.iter_mut())
        {
            s.lr = lr;
        }
    }
}

fn apply(state: &mut SgdState, model: &mut Mlp, grads: &ParamGrads) -> Result<()> {
    state.step(model.params_mut(), grads.tensors())
}

/// Maps non-finite failures inside a loss term onto a divergence error that
/// names the term and iteration.
fn named<T>(term: &'static str, iteration: usize, r: Result<T>) -> Result<T> {
    match r {
        Err(Error::NonFinite(_)) => Err(Error::Diverged { term, iteration }),
        other => other,
    }
}

fn finite(term: &'static str, iteration: usize, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged { term, iteration })
    }
}

/// One episodic training run: the bank, its optimizer states and the data
/// streams, advanced one iteration at a time.
pub struct Trainer<'a> {
    dataset: &'a MultiDomainDataset,
    bank: DomainBank,
    config: TrainConfig,
    batcher: DomainBatcher,
    episode_rng: Rng,
    opt: Optimizers,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    /// Builds a fresh bank from `config.seed`.
    pub fn new(dataset: &'a MultiDomainDataset, arch: &ArchSpec, config: TrainConfig) -> Result<Self> {
        config.validate_for(dataset)?;
        if arch.input_dim != dataset.dim() {
            return Err(Error::Config(format!(
                "architecture input_dim {} does not match data dimension {}",
                arch.input_dim,
                dataset.dim()
            )));
        }
        let mut init = stream_rng(config.seed, Stream::Init);
        let bank = DomainBank::build(arch, &dataset.label_spaces(), &mut init)?;
        Trainer::with_bank(dataset, bank, config)
    }

    /// Continues from an existing bank, e.g. one with pre-trained
    /// domain-specific branches.
    pub fn with_bank(dataset: &'a MultiDomainDataset, mut bank: DomainBank, config: TrainConfig) -> Result<Self> {
        config.validate_for(dataset)?;
        if bank.label_spaces != dataset.label_spaces() {
            return Err(Error::Config(format!(
                "bank label spaces {:?} do not match dataset {:?}",
                bank.label_spaces.per_domain,
                dataset.label_spaces().per_domain
            )));
        }
        if bank.arch.input_dim != dataset.dim() {
            return Err(Error::Config("bank input_dim does not match the data".into()));
        }
        if config.fixed_specific {
            bank.freeze_specific();
        }
        let batcher = DomainBatcher::new(
            &dataset.sources,
            config.batch_size,
            stream_rng(config.seed, Stream::Batches),
        )?;
        let opt = Optimizers::new(&config, &bank);
        Ok(Trainer {
            dataset,
            bank,
            episode_rng: stream_rng(config.seed, Stream::Episodes),
            config,
            batcher,
            opt,
            iteration: 0,
        })
    }

    pub fn bank(&self) -> &DomainBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut DomainBank {
        &mut self.bank
    }

    pub fn into_bank(self) -> DomainBank {
        self.bank
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draws this iteration's batch for every source domain.
    fn draw(&mut self) -> Result<(Vec<Tensor2>, Vec<Vec<usize>>)> {
        let mut xs = Vec::with_capacity(self.dataset.n_sources());
        let mut ys = Vec::with_capacity(self.dataset.n_sources());
        for (i, d) in self.dataset.sources.iter().enumerate() {
            let (x, y) = self.batcher.next_batch(i, d)?;
            xs.push(x);
            ys.push(y);
        }
        Ok((xs, ys))
    }

    /// One iteration of the interleaved schedule:
    /// (a) each domain-specific pair on its own domain,
    /// (b) the agnostic feature extractor on `L_agg + λ1·L_epif + λ3·L_epir`,
    /// (c) the agnostic classifier on `L_agg + λ2·L_epic`.
    /// During warmup only (a) runs, plus `L_agg` alone for (b)/(c) when
    /// `warmup_includes_agnostic` is set.
    pub fn step(&mut self) -> Result<LossReport> {
        let t = self.iteration;
        let cfg = &self.config;
        let warm = t < cfg.warmup_iters;
        let variant = cfg.variant;
        let (l1, l2, l3) = cfg.lambdas_at(t);
        let lr = cfg.alpha.at(t);
        let train_agnostic = !warm || cfg.warmup_includes_agnostic;
        let episodes = !warm;
        self.opt.set_lr(lr);

        let (raw_x, ys) = self.draw()?;
        let mut stem_traces: Vec<Trace> = Vec::new();
        let xs = match &self.bank.stem {
            Some(stem) => {
                let mut out = Vec::with_capacity(raw_x.len());
                for x in &raw_x {
                    let (h, tr) = named("stem", t, stem.forward_traced(x))?;
                    out.push(h);
                    stem_traces.push(tr);
                }
                out
            }
            None => raw_x,
        };
        let batches = DomainBatches::new(xs, ys)?;
        let mut stem_grad: Option<Vec<Tensor2>> = self
            .bank
            .stem
            .as_ref()
            .map(|_| batches.x.iter().map(|x| Tensor2::zeros(x.rows(), x.cols())).collect());
        let mut add_stem = |parts: &[Tensor2], scale: f64| -> Result<()> {
            if let Some(acc) = stem_grad.as_mut() {
                for (a, p) in acc.iter_mut().zip(parts) {
                    a.axpy(scale, p)?;
                }
            }
            Ok(())
        };

        let assignment = if episodes && variant.needs_shared_labels() {
            Some(sample_assignment(self.bank.n_domains(), &mut self.episode_rng)?)
        } else {
            None
        };

        let mut report = LossReport {
            iteration: t,
            l_agg: 0.0,
            l_ds: 0.0,
            l_epif: 0.0,
            l_epic: 0.0,
            l_epir: 0.0,
            total: 0.0,
        };

        // (a) domain-specific pairs
        let ds = named("l_ds", t, loss_ds(&self.bank, &batches))?;
        report.l_ds = finite("l_ds", t, ds.loss)?;
        for (i, g) in ds.branches.iter().enumerate() {
            if let Some((fg, hg)) = g {
                let branch = &mut self.bank.specific[i];
                apply(&mut self.opt.spec_feature[i], &mut branch.feature, fg)?;
                apply(&mut self.opt.spec_head[i], &mut branch.heads[0], hg)?;
            }
        }
        add_stem(&ds.input, 1.0)?;

        if train_agnostic {
            // (b) agnostic feature extractor
            let agg = named("l_agg", t, loss_agg(&self.bank, &batches))?;
            report.l_agg = finite("l_agg", t, agg.loss)?;
            let mut theta_grad = agg.feature.clone();
            add_stem(&agg.input, 1.0)?;
            if episodes && variant.f {
                let a = assignment.as_ref().expect("drawn when F is active");
                let epif = named("l_epif", t, loss_epif(&self.bank, &batches, a))?;
                report.l_epif = finite("l_epif", t, epif.loss)?;
                theta_grad.add_scaled(l1, &epif.feature)?;
                add_stem(&epif.input, l1)?;
            }
            if episodes && variant.r {
                let epir = named("l_epir", t, loss_epir(&self.bank, &batches))?;
                report.l_epir = finite("l_epir", t, epir.loss)?;
                theta_grad.add_scaled(l3, &epir.feature)?;
                add_stem(&epir.input, l3)?;
            }
            apply(&mut self.opt.agn_feature, &mut self.bank.agnostic.feature, &theta_grad)?;

            // (c) agnostic classifier(s)
            let mut head_grads = agg.heads;
            if episodes && variant.c {
                let a = assignment.as_ref().expect("drawn when C is active");
                let epic = named("l_epic", t, loss_epic(&self.bank, &batches, a))?;
                report.l_epic = finite("l_epic", t, epic.loss)?;
                head_grads[0].add_scaled(l2, &epic.head)?;
            }
            for (k, g) in head_grads.iter().enumerate() {
                apply(&mut self.opt.agn_heads[k], &mut self.bank.agnostic.heads[k], g)?;
            }
        }

        if let (Some(stem), Some(grads)) = (self.bank.stem.as_mut(), stem_grad) {
            let mut total: Option<ParamGrads> = None;
            for (tr, g) in stem_traces.iter().zip(&grads) {
                let pg = named("stem", t, stem.backward_traced(tr, g))?;
                match total.as_mut() {
                    Some(acc) => acc.add_scaled(1.0, &pg)?,
                    None => total = Some(pg),
                }
            }
            if let Some(g) = total {
                apply(&mut self.opt.stem, stem, &g)?;
            }
        }

        report.total = report.l_agg + report.l_ds + l1 * report.l_epif + l2 * report.l_epic + l3 * report.l_epir;
        finite("total", t, report.total)?;
        self.iteration += 1;
        Ok(report)
    }

    /// Accuracy of the deployed agnostic model on the sources' validation rows.
    pub fn validation_accuracy(&self) -> Result<Option<f64>> {
        let (mut correct, mut total) = (0usize, 0usize);
        for (i, d) in self.dataset.sources.iter().enumerate() {
            let (x, y) = d.view(Split::Val);
            if y.is_empty() {
                continue;
            }
            let logits = self.bank.agnostic_logits(&x, i)?;
            correct += count_correct(&logits, &y)?;
            total += y.len();
        }
        Ok((total > 0).then(|| correct as f64 / total as f64))
    }

    /// Runs to `total_iters`, calling `observe` after every iteration.
    pub fn run_with(&mut self, mut observe: impl FnMut(&Trainer<'a>, &MetricRow) -> Result<()>) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::with_capacity(self.config.total_iters);
        while self.iteration < self.config.total_iters {
            let report = self.step()?;
            let t = report.iteration;
            let last = t + 1 == self.config.total_iters;
            let due = self.config.eval_every > 0 && (t + 1) % self.config.eval_every == 0;
            let val_acc = if last || due { self.validation_accuracy()? } else { None };
            let row = MetricRow { report, val_acc };
            observe(self, &row)?;
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn run(&mut self) -> Result<Vec<MetricRow>> {
        self.run_with(|_, _| Ok(()))
    }
}

/// Trains a fresh bank on `dataset` and returns it with the metric stream.
/// Only the agnostic pair of the returned bank is the deployable model.
pub fn run_training(
    dataset: &MultiDomainDataset,
    arch: &ArchSpec,
    config: &TrainConfig,
) -> Result<(DomainBank, Vec<MetricRow>)> {
    let mut trainer = Trainer::new(dataset, arch, config.clone())?;
    let rows = trainer.run()?;
    Ok((trainer.into_bank(), rows))
}

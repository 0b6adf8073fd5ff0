//! Reference implementations shared by the integration tests. Everything
//! here is written with plain loops so it does not share code paths with
//! the library beyond parameter storage.

#![allow(dead_code)]

use epidg::bank::{ArchSpec, DomainBank};
use epidg::data::{gen_synthetic_homogeneous, DomainBatcher, HomogSpec, MultiDomainDataset};
use epidg::nn::{seeded_rng, softmax_cross_entropy, stream_rng, Activation, Mlp, SgdState, Stream, Tensor2};
use epidg::train::TrainConfig;

/// Row-by-row forward pass.
pub fn naive_forward(model: &Mlp, x: &Tensor2) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
    for layer in &model.layers {
        let (din, dout) = layer.weights.shape();
        rows = rows
            .iter()
            .map(|v| {
                (0..dout)
                    .map(|o| {
                        let mut z = layer.bias.get(0, o);
                        for i in 0..din {
                            z += v[i] * layer.weights.get(i, o);
                        }
                        match layer.activation {
                            Activation::Relu => z.max(0.0),
                            Activation::Identity => z,
                        }
                    })
                    .collect()
            })
            .collect();
    }
    rows
}

pub fn chain(models: &[&Mlp], x: &Tensor2) -> Vec<Vec<f64>> {
    let mut cur = x.clone();
    for m in models {
        let rows = naive_forward(m, &cur);
        cur = Tensor2::from_rows(&rows).unwrap();
    }
    (0..cur.rows()).map(|r| cur.row(r).to_vec()).collect()
}

/// Mean cross-entropy computed directly from the softmax probabilities.
pub fn naive_ce(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += -((row[y] - m).exp() / z).ln();
    }
    total / labels.len() as f64
}

/// A small homogeneous dataset that trains quickly.
pub fn toy_homogeneous(n_domains: usize, seed: u64) -> MultiDomainDataset {
    gen_synthetic_homogeneous(&HomogSpec::new(n_domains, 3, 6, 120, 0.4), &mut seeded_rng(seed)).unwrap()
}

pub fn toy_arch() -> ArchSpec {
    ArchSpec::new(6, vec![10, 8])
}

pub fn quick_config(iters: usize, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::preset(epidg::train::Preset::Synth);
    c.total_iters = iters;
    c.warmup_iters = iters / 10;
    c.batch_size = 16;
    c.seed = seed;
    c
}

/// Plain aggregation training written against the network primitives only:
/// stack every domain's batch, one cross-entropy, update θ then ψ. Returns
/// the (θ, ψ) pair after every iteration.
pub fn standalone_agg(ds: &MultiDomainDataset, arch: &ArchSpec, cfg: &TrainConfig) -> Vec<(Mlp, Mlp)> {
    let bank = DomainBank::build(arch, &ds.label_spaces(), &mut stream_rng(cfg.seed, Stream::Init)).unwrap();
    let mut theta = bank.agnostic.feature.clone();
    let mut psi = bank.agnostic.heads[0].clone();
    let mut batcher = DomainBatcher::new(&ds.sources, cfg.batch_size, stream_rng(cfg.seed, Stream::Batches)).unwrap();
    let mut opt_theta = SgdState::new(0.0, cfg.momentum, cfg.weight_decay);
    let mut opt_psi = SgdState::new(0.0, cfg.momentum, cfg.weight_decay);
    let mut out = Vec::with_capacity(cfg.total_iters);
    for t in 0..cfg.total_iters {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, d) in ds.sources.iter().enumerate() {
            let (x, y) = batcher.next_batch(i, d).unwrap();
            xs.push(x);
            ys.extend(y);
        }
        let parts: Vec<&Tensor2> = xs.iter().collect();
        let x = Tensor2::vstack(&parts).unwrap();
        let h = theta.forward(&x).unwrap();
        let logits = psi.forward(&h).unwrap();
        let (_, dlogits) = softmax_cross_entropy(&logits, &ys).unwrap();
        let g_psi = psi.backward(&dlogits).unwrap();
        let g_theta = theta.backward(&g_psi.input).unwrap();
        let lr = cfg.alpha.at(t);
        opt_theta.lr = lr;
        opt_psi.lr = lr;
        opt_theta.step(theta.params_mut(), g_theta.tensors()).unwrap();
        opt_psi.step(psi.params_mut(), g_psi.tensors()).unwrap();
        out.push((theta.clone(), psi.clone()));
    }
    out
}

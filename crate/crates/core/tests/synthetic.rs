use epidg::bank::ArchSpec;
use epidg::data::{gen_synthetic_homogeneous, DomainData, HomogSpec, MultiDomainDataset, Split};
use epidg::eval::{evaluate_accuracy, target_accuracy};
use epidg::nn::{seeded_rng, LrSchedule};
use epidg::train::{run_training, Preset, TrainConfig, Variant};

/// Largest per-coordinate Welch t statistic between the feature means of two
/// domains.
fn max_welch_t(a: &DomainData, b: &DomainData) -> f64 {
    let stats = |d: &DomainData, c: usize| {
        let n = d.len() as f64;
        let mean = (0..d.len()).map(|r| d.features.get(r, c)).sum::<f64>() / n;
        let var = (0..d.len()).map(|r| (d.features.get(r, c) - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    (0..a.dim())
        .map(|c| {
            let (ma, va) = stats(a, c);
            let (mb, vb) = stats(b, c);
            (ma - mb).abs() / (va + vb).sqrt()
        })
        .fold(0.0, f64::max)
}

fn worst_pair(ds: &MultiDomainDataset) -> f64 {
    let all = ds.all_domains();
    let mut worst: f64 = 0.0;
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            worst = worst.max(max_welch_t(all[i], all[j]));
        }
    }
    worst
}

#[test]
fn zero_shift_domains_are_exchangeable() {
    // 4 domains give 6 pairs over 8 coordinates; 4.0 is a Bonferroni bound
    // near the 0.3% family-wise level.
    let spec = HomogSpec::new(3, 4, 8, 600, 0.0);
    for seed in 0..5 {
        let ds = gen_synthetic_homogeneous(&spec, &mut seeded_rng(seed)).unwrap();
        let t = worst_pair(&ds);
        assert!(t < 4.0, "seed {seed}: max |t| = {t:.2}");
    }
    let shifted = HomogSpec::new(3, 4, 8, 600, 0.6);
    let ds = gen_synthetic_homogeneous(&shifted, &mut seeded_rng(0)).unwrap();
    assert!(worst_pair(&ds) > 10.0, "the test must have power against a real shift");
}

fn source_target_gap(shift: f64, seed: u64) -> f64 {
    let spec = HomogSpec::new(3, 4, 8, 400, shift);
    let ds = gen_synthetic_homogeneous(&spec, &mut seeded_rng(1_000 + seed)).unwrap();
    let mut cfg = TrainConfig::preset(Preset::Synth);
    cfg.variant = Variant::AGG;
    cfg.total_iters = 400;
    cfg.warmup_iters = 0;
    cfg.batch_size = 16;
    cfg.alpha = LrSchedule::constant(1e-2);
    cfg.seed = seed;
    let (bank, _) = run_training(&ds, &ArchSpec::new(8, vec![16, 16]), &cfg).unwrap();
    let source = ds
        .sources
        .iter()
        .map(|d| evaluate_accuracy(&bank.agnostic.feature, bank.agnostic.head(0), d, Split::Test).unwrap())
        .sum::<f64>()
        / ds.n_sources() as f64;
    source - target_accuracy(&bank, &ds).unwrap()
}

#[test]
fn shift_strength_widens_the_generalization_gap() {
    let strengths = [0.0, 0.5, 1.0];
    let gaps: Vec<f64> = strengths
        .iter()
        .map(|&s| (0..10).map(|seed| source_target_gap(s, seed)).sum::<f64>() / 10.0)
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] > w[0], "mean gaps {gaps:?} for strengths {strengths:?}");
    }
}

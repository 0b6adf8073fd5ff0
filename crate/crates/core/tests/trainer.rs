mod common;

use common::*;
use epidg::bank::{ArchSpec, DomainBank};
use epidg::data::{gen_synthetic_heterogeneous, gen_synthetic_homogeneous, HeteroSpec, HomogSpec, MultiDomainDataset, Split};
use epidg::eval::evaluate_accuracy;
use epidg::nn::{seeded_rng, stream_rng, LrSchedule, Stream};
use epidg::train::{
    run_training, sample_assignment, write_metrics_csv, Trainer, Variant, METRICS_HEADER,
};
use epidg::Error;

fn hetero(seed: u64) -> MultiDomainDataset {
    let spec = HeteroSpec {
        label_spaces: vec![4, 3, 2],
        target_label_space: 3,
        dim: 6,
        per_domain: 90,
        shift_strength: 0.4,
        class_spread: 1.0,
    };
    gen_synthetic_heterogeneous(&spec, &mut seeded_rng(seed)).unwrap()
}

#[test]
fn zero_iterations_returns_initial_bank() {
    let ds = toy_homogeneous(3, 0);
    let cfg = quick_config(0, 4);
    let (bank, rows) = run_training(&ds, &toy_arch(), &cfg).unwrap();
    let init = DomainBank::build(&toy_arch(), &ds.label_spaces(), &mut stream_rng(4, Stream::Init)).unwrap();
    assert_eq!(bank, init);
    assert!(rows.is_empty());
}

#[test]
fn agg_matches_standalone_trainer() {
    for n in [1usize, 3] {
        let full = toy_homogeneous(3, 1);
        let ds = if n == 1 {
            MultiDomainDataset::new(vec![full.sources[0].clone()], full.target.clone(), true).unwrap()
        } else {
            full
        };
        let mut cfg = quick_config(30, 2);
        cfg.variant = Variant::AGG;
        let reference = standalone_agg(&ds, &toy_arch(), &cfg);
        let mut tr = Trainer::new(&ds, &toy_arch(), cfg).unwrap();
        for (theta, psi) in &reference {
            tr.step().unwrap();
            assert!(tr.bank().agnostic.feature.params_bit_eq(theta));
            assert!(tr.bank().agnostic.heads[0].params_bit_eq(psi));
        }
    }
}

#[test]
fn zero_lambdas_reduce_to_agg() {
    let ds = toy_homogeneous(3, 3);
    let mut agg = quick_config(40, 7);
    agg.variant = Variant::AGG;
    let mut fcr = agg.clone();
    fcr.variant = Variant::FCR;
    fcr.lambda1 = LrSchedule::constant(0.0);
    fcr.lambda2 = LrSchedule::constant(0.0);
    fcr.lambda3 = LrSchedule::constant(0.0);
    let mut a = Trainer::new(&ds, &toy_arch(), agg).unwrap();
    let mut b = Trainer::new(&ds, &toy_arch(), fcr).unwrap();
    for _ in 0..40 {
        a.step().unwrap();
        b.step().unwrap();
        assert!(a.bank().agnostic.params_bit_eq(&b.bank().agnostic));
    }
}

#[test]
fn warmup_without_agnostic_leaves_it_untouched() {
    let ds = toy_homogeneous(3, 4);
    let mut cfg = quick_config(20, 1);
    cfg.warmup_iters = 10;
    cfg.warmup_includes_agnostic = false;
    let mut tr = Trainer::new(&ds, &toy_arch(), cfg).unwrap();
    let init = tr.bank().clone();
    for _ in 0..10 {
        let r = tr.step().unwrap();
        assert_eq!((r.l_agg, r.l_epif, r.l_epic, r.l_epir), (0.0, 0.0, 0.0, 0.0));
    }
    assert!(tr.bank().agnostic.params_bit_eq(&init.agnostic));
    assert!(!tr.bank().specific[0].params_bit_eq(&init.specific[0]));
    tr.step().unwrap();
    assert!(!tr.bank().agnostic.params_bit_eq(&init.agnostic));
}

#[test]
fn random_heads_and_fixed_branches_never_move() {
    let ds = toy_homogeneous(3, 5);
    let mut cfg = quick_config(60, 3);
    cfg.fixed_specific = true;
    let mut tr = Trainer::new(&ds, &toy_arch(), cfg.clone()).unwrap();
    let init = tr.bank().clone();
    tr.run().unwrap();
    let bank = tr.bank();
    for (a, b) in bank.random.iter().zip(&init.random) {
        assert!(a.classifier().params_bit_eq(b.classifier()));
    }
    for (a, b) in bank.specific.iter().zip(&init.specific) {
        assert!(a.params_bit_eq(b));
    }
    assert!(!bank.agnostic.params_bit_eq(&init.agnostic));

    // Unfreezing resumes domain-specific training.
    let mut bank = tr.into_bank();
    bank.unfreeze_specific();
    let before = bank.clone();
    cfg.fixed_specific = false;
    let mut tr = Trainer::with_bank(&ds, bank, cfg).unwrap();
    tr.step().unwrap();
    assert!(!tr.bank().specific[0].params_bit_eq(&before.specific[0]));
}

#[test]
fn report_total_matches_independent_recomputation() {
    let ds = toy_homogeneous(2, 6);
    let mut cfg = quick_config(1, 11);
    cfg.warmup_iters = 0;
    cfg.lambda1 = LrSchedule::constant(0.7);
    cfg.lambda2 = LrSchedule::constant(1.3);
    cfg.lambda3 = LrSchedule::constant(0.4);
    let mut tr = Trainer::new(&ds, &toy_arch(), cfg.clone()).unwrap();
    let before = tr.bank().clone();
    let report = tr.step().unwrap();
    let after = tr.bank().clone();

    // Replay the batch and episode draws.
    let mut batcher = epidg::data::DomainBatcher::new(&ds.sources, 16, stream_rng(11, Stream::Batches)).unwrap();
    let batches: Vec<_> = (0..2).map(|i| batcher.next_batch(i, &ds.sources[i]).unwrap()).collect();
    let assign = sample_assignment(2, &mut stream_rng(11, Stream::Episodes)).unwrap();
    assert_eq!(assign.partners(), &[1, 0]);

    let n = 2.0;
    let mut l_agg = 0.0;
    let mut l_ds = 0.0;
    let mut l_epif = 0.0;
    let mut l_epic = 0.0;
    let mut l_epir = 0.0;
    let (theta, psi) = (&before.agnostic.feature, &before.agnostic.heads[0]);
    for (i, (x, y)) in batches.iter().enumerate() {
        let j = assign.partner(i);
        l_agg += naive_ce(&chain(&[theta, psi], x), y) / n;
        let spec_i = &before.specific[i];
        l_ds += naive_ce(&chain(&[&spec_i.feature, &spec_i.heads[0]], x), y) / n;
        // Partners are read after the domain-specific update of the same step.
        l_epif += naive_ce(&chain(&[theta, &after.specific[j].heads[0]], x), y) / n;
        l_epic += naive_ce(&chain(&[&after.specific[j].feature, psi], x), y) / n;
        l_epir += naive_ce(&chain(&[theta, before.random[i].classifier()], x), y) / n;
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    assert!(close(report.l_agg, l_agg), "{} vs {l_agg}", report.l_agg);
    assert!(close(report.l_ds, l_ds));
    assert!(close(report.l_epif, l_epif));
    assert!(close(report.l_epic, l_epic));
    assert!(close(report.l_epir, l_epir));
    let total = l_agg + l_ds + 0.7 * l_epif + 1.3 * l_epic + 0.4 * l_epir;
    assert!(close(report.total, total));
}

#[test]
fn all_terms_are_non_negative() {
    let ds = toy_homogeneous(3, 8);
    let (_, rows) = run_training(&ds, &toy_arch(), &quick_config(50, 0)).unwrap();
    for r in &rows {
        let p = r.report;
        assert!([p.l_agg, p.l_ds, p.l_epif, p.l_epic, p.l_epir, p.total].iter().all(|v| *v >= 0.0));
    }
    assert!(rows.last().unwrap().val_acc.is_some());
}

#[test]
fn heterogeneous_supports_r_and_rejects_f() {
    let ds = hetero(2);
    let arch = ArchSpec::new(6, vec![10, 8]);
    let mut cfg = quick_config(30, 1);
    cfg.variant = Variant::R;
    let init = DomainBank::build(&arch, &ds.label_spaces(), &mut stream_rng(1, Stream::Init)).unwrap();
    let (bank, rows) = run_training(&ds, &arch, &cfg).unwrap();
    assert_eq!(rows.len(), 30);
    assert!(rows.last().unwrap().report.l_epir > 0.0);
    for (a, b) in bank.random.iter().zip(&init.random) {
        assert!(a.classifier().params_bit_eq(b.classifier()));
    }
    for v in ["F", "C", "FCR"] {
        cfg.variant = v.parse().unwrap();
        assert!(matches!(Trainer::new(&ds, &arch, cfg.clone()), Err(Error::Config(_))));
    }
}

#[test]
fn single_source_rejects_episodes() {
    let full = toy_homogeneous(2, 1);
    let ds = MultiDomainDataset::new(vec![full.sources[0].clone()], full.target.clone(), true).unwrap();
    let mut cfg = quick_config(5, 0);
    cfg.variant = "F".parse().unwrap();
    assert!(matches!(Trainer::new(&ds, &toy_arch(), cfg.clone()), Err(Error::Config(_))));
    cfg.variant = Variant::R;
    run_training(&ds, &toy_arch(), &cfg).unwrap();
}

#[test]
fn divergence_names_term_and_iteration() {
    let ds = toy_homogeneous(3, 9);
    let mut cfg = quick_config(200, 0);
    cfg.alpha = LrSchedule::constant(1e6);
    cfg.momentum = 0.0;
    match run_training(&ds, &toy_arch(), &cfg) {
        Err(Error::Diverged { term, iteration }) => {
            assert!(!term.is_empty());
            assert!(iteration < 200);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn metrics_csv_layout() {
    let ds = toy_homogeneous(3, 10);
    let mut cfg = quick_config(10, 0);
    cfg.eval_every = 4;
    let (_, rows) = run_training(&ds, &toy_arch(), &cfg).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 11);
    for (k, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[0], k.to_string());
        let evaluated = k == 3 || k == 7 || k == 9;
        assert_eq!(!fields[7].is_empty(), evaluated, "row {k}");
    }
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let ds = toy_homogeneous(3, 12);
    let (a, ra) = run_training(&ds, &toy_arch(), &quick_config(25, 5)).unwrap();
    let (b, rb) = run_training(&ds, &toy_arch(), &quick_config(25, 5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = run_training(&ds, &toy_arch(), &quick_config(25, 6)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn shared_stem_trains_as_one_copy() {
    let ds = toy_homogeneous(3, 13);
    let arch = ArchSpec::new(6, vec![10, 8, 8]).with_stem(1);
    let init = DomainBank::build(&arch, &ds.label_spaces(), &mut stream_rng(2, Stream::Init)).unwrap();
    let (bank, _) = run_training(&ds, &arch, &quick_config(20, 2)).unwrap();
    let stem = bank.stem.as_ref().unwrap();
    assert!(!stem.params_bit_eq(init.stem.as_ref().unwrap()));
    // The deployed network and every branch see the same stem.
    assert!(bank.deployed_feature().unwrap().layers[0] == stem.layers[0]);
    assert!(bank.specific_feature(2).unwrap().layers[0] == stem.layers[0]);
    assert_eq!(bank.agnostic.feature.in_dim(), stem.out_dim());
}

#[test]
fn intermediate_split_trains() {
    let ds = toy_homogeneous(3, 14);
    let arch = ArchSpec::new(6, vec![10, 8]).with_split(1);
    let (bank, rows) = run_training(&ds, &arch, &quick_config(20, 2)).unwrap();
    assert_eq!(bank.agnostic.feature.layers.len(), 1);
    assert_eq!(bank.agnostic.heads[0].layers.len(), 2);
    assert!(rows.iter().all(|r| r.report.total.is_finite()));
}

#[test]
fn separable_data_is_learned() {
    let mut spec = HomogSpec::new(3, 3, 6, 150, 0.1);
    spec.class_spread = 0.1;
    let ds = gen_synthetic_homogeneous(&spec, &mut seeded_rng(15)).unwrap();
    let mut cfg = quick_config(300, 0);
    cfg.variant = Variant::AGG;
    let (bank, _) = run_training(&ds, &toy_arch(), &cfg).unwrap();
    let f = bank.deployed_feature().unwrap();
    for d in &ds.sources {
        let acc = evaluate_accuracy(&f, bank.agnostic.classifier(), d, Split::Test).unwrap();
        assert!(acc >= 0.99, "{}: {acc}", d.name);
    }
}

//! Small, fast experiments for the browser page in `www/`. Each operation is
//! a plain Rust function returning a serializable result, so it can be tested
//! natively; the `#[wasm_bindgen]` wrappers at the bottom hand the same
//! results to JavaScript as JSON strings.

use epidg::bank::ArchSpec;
use epidg::data::{gen_synthetic_homogeneous, HomogSpec, MultiDomainDataset, SplitSel};
use epidg::eval::{sharpness_analysis, target_accuracy};
use epidg::nn::{stream_rng, LrSchedule, Stream};
use epidg::train::{run_training, Preset, TrainConfig, Variant};
use epidg::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Feature dimension used by the training demos.
pub const DEMO_DIM: usize = 8;
pub const DEMO_HIDDEN: [usize; 2] = [16, 8];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    /// Source index, or `n_sources` for the target.
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scatter {
    pub domains: Vec<String>,
    pub classes: usize,
    pub points: Vec<ScatterPoint>,
}

/// Two-dimensional synthetic domains, so the covariate shift between them is
/// directly visible.
pub fn domain_scatter(seed: u64, sources: usize, classes: usize, shift: f64, per_domain: usize) -> Result<Scatter> {
    let mut spec = HomogSpec::new(sources, classes, 2, per_domain, shift);
    spec.class_spread = 0.5;
    let ds = gen_synthetic_homogeneous(&spec, &mut stream_rng(seed, Stream::Data))?;
    let mut points = Vec::with_capacity((sources + 1) * per_domain);
    for (d, dom) in ds.all_domains().into_iter().enumerate() {
        for (r, &label) in dom.labels.iter().enumerate() {
            let row = dom.features.row(r);
            points.push(ScatterPoint {
                x: row[0],
                y: row[1],
                label,
                domain: d,
            });
        }
    }
    Ok(Scatter {
        domains: ds.all_domains().iter().map(|d| d.name.clone()).collect(),
        classes,
        points,
    })
}

fn demo_dataset(seed: u64, shift: f64) -> Result<MultiDomainDataset> {
    let spec = HomogSpec::new(4, 5, DEMO_DIM, 300, shift);
    gen_synthetic_homogeneous(&spec, &mut stream_rng(seed, Stream::Data))
}

fn demo_config(seed: u64, iters: usize, lambdas: [f64; 3]) -> TrainConfig {
    let mut cfg = TrainConfig::preset(Preset::Synth);
    cfg.total_iters = iters;
    cfg.warmup_iters = iters / 10;
    cfg.batch_size = 16;
    cfg.seed = seed;
    cfg.lambda1 = LrSchedule::constant(lambdas[0]);
    cfg.lambda2 = LrSchedule::constant(lambdas[1]);
    cfg.lambda3 = LrSchedule::constant(lambdas[2]);
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub variant: String,
    /// Aggregation loss of the agnostic pair at every iteration.
    pub l_agg: Vec<f64>,
    pub total: Vec<f64>,
    pub target_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCurves {
    pub iterations: usize,
    pub warmup: usize,
    pub curves: Vec<Curve>,
}

/// Trains AGG and Epi-FCR on the same data and seed and returns both
/// loss traces.
pub fn loss_curves(seed: u64, iters: usize, shift: f64, lambdas: [f64; 3]) -> Result<LossCurves> {
    let ds = demo_dataset(seed, shift)?;
    let arch = ArchSpec::new(DEMO_DIM, DEMO_HIDDEN.to_vec());
    let mut cfg = demo_config(seed, iters, lambdas);
    let mut curves = Vec::with_capacity(2);
    for variant in [Variant::AGG, Variant::FCR] {
        cfg.variant = variant;
        let (bank, rows) = run_training(&ds, &arch, &cfg)?;
        curves.push(Curve {
            variant: variant.to_string(),
            l_agg: rows.iter().map(|r| r.report.l_agg).collect(),
            total: rows.iter().map(|r| r.report.total).collect(),
            target_accuracy: target_accuracy(&bank, &ds)?,
        });
    }
    Ok(LossCurves {
        iterations: iters,
        warmup: cfg.warmup_iters,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharpnessSeries {
    pub variant: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sharpness {
    pub sigmas: Vec<f64>,
    pub draws: usize,
    pub series: Vec<SharpnessSeries>,
}

/// Target accuracy of AGG and Epi-FCR models under relative weight noise.
/// Both models see the same noise draws.
pub fn sharpness(seed: u64, iters: usize, shift: f64, sigmas: &[f64], draws: usize) -> Result<Sharpness> {
    let ds = demo_dataset(seed, shift)?;
    let arch = ArchSpec::new(DEMO_DIM, DEMO_HIDDEN.to_vec());
    let mut cfg = demo_config(seed, iters, [3.0, 0.05, 0.1]);
    let mut series = Vec::with_capacity(2);
    for variant in [Variant::AGG, Variant::FCR] {
        cfg.variant = variant;
        let (bank, _) = run_training(&ds, &arch, &cfg)?;
        let curve = sharpness_analysis(
            &bank.deployed_feature()?,
            bank.agnostic.classifier(),
            &ds.target,
            SplitSel::All,
            sigmas,
            draws,
            &mut stream_rng(seed, Stream::Eval),
        )?;
        series.push(SharpnessSeries {
            variant: variant.to_string(),
            mean: curve.points.iter().map(|p| p.mean).collect(),
            std: curve.points.iter().map(|p| p.std).collect(),
        });
    }
    Ok(Sharpness {
        sigmas: sigmas.to_vec(),
        draws,
        series,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    let value = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = domainScatter)]
pub fn domain_scatter_js(seed: u32, sources: u32, classes: u32, shift: f64, per_domain: u32) -> std::result::Result<String, JsValue> {
    to_js(domain_scatter(seed as u64, sources as usize, classes as usize, shift, per_domain as usize))
}

#[wasm_bindgen(js_name = lossCurves)]
pub fn loss_curves_js(seed: u32, iters: u32, shift: f64, lambda1: f64, lambda2: f64, lambda3: f64) -> std::result::Result<String, JsValue> {
    to_js(loss_curves(seed as u64, iters as usize, shift, [lambda1, lambda2, lambda3]))
}

#[wasm_bindgen(js_name = sharpnessCurve)]
pub fn sharpness_js(seed: u32, iters: u32, shift: f64, sigmas: Vec<f64>, draws: u32) -> std::result::Result<String, JsValue> {
    to_js(sharpness(seed as u64, iters as usize, shift, &sigmas, draws as usize))
}

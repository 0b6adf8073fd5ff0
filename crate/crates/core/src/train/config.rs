use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::MultiDomainDataset;
use crate::error::{Error, Result};
use crate::nn::LrSchedule;

/// Which episodic losses are active. Empty is plain aggregation (AGG).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Variant {
    pub f: bool,
    pub c: bool,
    pub r: bool,
}

impl Variant {
    pub const AGG: Variant = Variant {
        f: false,
        c: false,
        r: false,
    };
    pub const FCR: Variant = Variant {
        f: true,
        c: true,
        r: true,
    };
    pub const R: Variant = Variant {
        f: false,
        c: false,
        r: true,
    };

    pub fn is_agg(self) -> bool {
        !(self.f || self.c || self.r)
    }

    /// Feature or classifier episodes route data across domains and need a
    /// shared label space.
    pub fn needs_shared_labels(self) -> bool {
        self.f || self.c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_agg() {
            return f.write_str("AGG");
        }
        let mut s = String::new();
        for (on, ch) in [(self.f, 'F'), (self.c, 'C'), (self.r, 'R')] {
            if on {
                s.push(ch);
            }
        }
        f.write_str(&s)
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let t = t.strip_prefix("Epi-").or_else(|| t.strip_prefix("epi-")).unwrap_or(t);
        if t.is_empty() || t.eq_ignore_ascii_case("agg") || t == "-" || t == "∅" {
            return Ok(Variant::AGG);
        }
        let mut v = Variant::AGG;
        for ch in t.chars() {
            match ch.to_ascii_uppercase() {
                'F' => v.f = true,
                'C' => v.c = true,
                'R' => v.r = true,
                _ => return Err(Error::Config(format!("unknown variant '{s}' (use a subset of FCR or AGG)"))),
            }
        }
        Ok(v)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: LrSchedule,
    pub lambda2: LrSchedule,
    pub lambda3: LrSchedule,
    pub alpha: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Examples drawn from each source domain per iteration.
    pub batch_size: usize,
    pub total_iters: usize,
    pub warmup_iters: usize,
    /// Whether the agnostic pair trains on the aggregate loss during warmup.
    pub warmup_includes_agnostic: bool,
    pub variant: Variant,
    pub seed: u64,
    /// Validation accuracy cadence; 0 evaluates only the final iteration.
    pub eval_every: usize,
    /// Freeze the domain-specific branches (use pre-trained, fixed ones).
    pub fixed_specific: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    IxmasLike,
    VlcsLike,
    PacsLike,
    VdLike,
    /// The desk-scale synthetic benchmark.
    Synth,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ixmas-like" => Ok(Preset::IxmasLike),
            "vlcs-like" => Ok(Preset::VlcsLike),
            "pacs-like" => Ok(Preset::PacsLike),
            "vd-like" => Ok(Preset::VdLike),
            "synth" => Ok(Preset::Synth),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (ixmas-like, vlcs-like, pacs-like, vd-like, synth)"
            ))),
        }
    }
}

impl TrainConfig {
    /// Shared defaults: momentum 0.9, batch 32 per domain, warmup 5%.
    fn base(total_iters: usize) -> Self {
        TrainConfig {
            lambda1: LrSchedule::constant(0.0),
            lambda2: LrSchedule::constant(0.0),
            lambda3: LrSchedule::constant(0.0),
            alpha: LrSchedule::constant(1e-3),
            momentum: 0.9,
            weight_decay: 5e-5,
            batch_size: 32,
            total_iters,
            warmup_iters: total_iters / 20,
            warmup_includes_agnostic: true,
            variant: Variant::FCR,
            seed: 0,
            eval_every: 0,
            fixed_specific: false,
        }
    }

    fn with_lambdas(mut self, l1: f64, l2: f64, l3: f64) -> Self {
        self.lambda1 = LrSchedule::constant(l1);
        self.lambda2 = LrSchedule::constant(l2);
        self.lambda3 = LrSchedule::constant(l3);
        self
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::IxmasLike => {
                let mut c = TrainConfig::base(5_000).with_lambdas(2.0, 2.0, 0.5);
                c.alpha = LrSchedule::constant(1e-4);
                c
            }
            Preset::VlcsLike => TrainConfig::base(5_000).with_lambdas(7.0, 5.0, 0.5),
            Preset::PacsLike => TrainConfig::base(45_000).with_lambdas(2.0, 0.05, 0.1),
            Preset::VdLike => {
                let mut c = TrainConfig::base(100_000);
                c.lambda3 = LrSchedule::Reciprocal {
                    numerator: 2.5,
                    offset: 50.0,
                };
                c.alpha = LrSchedule::StepDecay {
                    base: 1e-3,
                    decay_iters: vec![40_000, 80_000],
                    factor: 0.1,
                };
                c.weight_decay = 1e-4;
                c.variant = Variant::R;
                c
            }
            Preset::Synth => {
                let mut c = TrainConfig::base(1_500).with_lambdas(3.0, 0.05, 0.1);
                c.alpha = LrSchedule::constant(1e-2);
                c.warmup_iters = 150;
                c
            }
        }
    }

    pub fn lambdas_at(&self, t: usize) -> (f64, f64, f64) {
        (self.lambda1.at(t), self.lambda2.at(t), self.lambda3.at(t))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("lambda3", &self.lambda3),
            ("alpha", &self.alpha),
        ] {
            s.validate().map_err(|_| Error::Config(format!("{name}: invalid schedule {s}")))?;
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Checks the variant against the dataset's label-space structure.
    pub fn validate_for(&self, ds: &MultiDomainDataset) -> Result<()> {
        self.validate()?;
        if self.variant.needs_shared_labels() {
            if !ds.homogeneous {
                return Err(Error::Config(format!(
                    "variant {} routes data through other domains' modules and needs a shared label space; \
                     heterogeneous datasets support AGG and R only",
                    self.variant
                )));
            }
            if ds.n_sources() < 2 {
                return Err(Error::Config(format!(
                    "variant {} needs at least two source domains, dataset has {}",
                    self.variant,
                    ds.n_sources()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("FCR".parse::<Variant>().unwrap(), Variant::FCR);
        assert_eq!("Epi-R".parse::<Variant>().unwrap(), Variant::R);
        assert_eq!("agg".parse::<Variant>().unwrap(), Variant::AGG);
        assert_eq!("".parse::<Variant>().unwrap(), Variant::AGG);
        let fc: Variant = "fc".parse().unwrap();
        assert!(fc.f && fc.c && !fc.r);
        assert_eq!(fc.to_string(), "FC");
        assert!("FX".parse::<Variant>().is_err());
    }

    #[test]
    fn presets() {
        let v = TrainConfig::preset(Preset::VlcsLike);
        assert_eq!(v.lambdas_at(0), (7.0, 5.0, 0.5));
        assert_eq!(v.alpha.at(0), 1e-3);
        assert_eq!((v.momentum, v.weight_decay), (0.9, 5e-5));
        let p = TrainConfig::preset(Preset::PacsLike);
        assert_eq!(p.lambdas_at(10), (2.0, 0.05, 0.1));
        assert_eq!(p.batch_size, 32);
        let i = TrainConfig::preset(Preset::IxmasLike);
        assert_eq!(i.lambdas_at(0), (2.0, 2.0, 0.5));
        assert_eq!(i.alpha.at(0), 1e-4);
        let vd = TrainConfig::preset(Preset::VdLike);
        assert!((vd.lambda3.at(0) - 2.5 / 50.0).abs() < 1e-15);
        assert!((vd.lambda3.at(950) - 2.5 / 1000.0).abs() < 1e-15);
        assert!((vd.alpha.at(80_000) - 1e-5).abs() < 1e-18);
        assert_eq!(vd.variant, Variant::R);
        assert_eq!(vd.weight_decay, 1e-4);
        for p in ["ixmas-like", "vlcs-like", "pacs-like", "vd-like", "synth"] {
            TrainConfig::preset(p.parse().unwrap()).validate().unwrap();
        }
        assert!("imagenet".parse::<Preset>().is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = TrainConfig::preset(Preset::Synth);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::preset(Preset::Synth);
        c.lambda1 = LrSchedule::constant(-1.0);
        assert!(c.validate().is_err());
        let mut c = TrainConfig::preset(Preset::Synth);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}

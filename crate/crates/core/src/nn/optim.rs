use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// A non-negative scalar that may vary with the iteration count. Used for the
/// learning rate and for the episodic loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant { value: f64 },
    /// `base · factor^(number of milestones ≤ t)`.
    StepDecay {
        base: f64,
        decay_iters: Vec<usize>,
        factor: f64,
    },
    /// `numerator / (t + offset)`.
    Reciprocal { numerator: f64, offset: f64 },
}

impl LrSchedule {
    pub fn constant(value: f64) -> Self {
        LrSchedule::Constant { value }
    }

    pub fn at(&self, t: usize) -> f64 {
        match self {
            LrSchedule::Constant { value } => *value,
            LrSchedule::StepDecay {
                base,
                decay_iters,
                factor,
            } => {
                let passed = decay_iters.iter().filter(|&&m| t >= m).count();
                base * factor.powi(passed as i32)
            }
            LrSchedule::Reciprocal { numerator, offset } => numerator / (t as f64 + offset),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            LrSchedule::Constant { value } => value.is_finite() && *value >= 0.0,
            LrSchedule::StepDecay { base, factor, .. } => {
                base.is_finite() && *base >= 0.0 && factor.is_finite() && *factor > 0.0
            }
            LrSchedule::Reciprocal { numerator, offset } => {
                numerator.is_finite() && *numerator >= 0.0 && offset.is_finite() && *offset > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid schedule {self:?}")))
        }
    }

    /// Parses `0.5`, `step:1e-3@40000,80000x0.1` or `recip:2.5/50`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse schedule '{s}'"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let sched = if let Some(rest) = s.strip_prefix("recip:") {
            let (n, o) = rest.split_once('/').ok_or_else(bad)?;
            LrSchedule::Reciprocal {
                numerator: num(n)?,
                offset: num(o)?,
            }
        } else if let Some(rest) = s.strip_prefix("step:") {
            let (base, tail) = rest.split_once('@').ok_or_else(bad)?;
            let (iters, factor) = tail.split_once('x').ok_or_else(bad)?;
            let decay_iters = iters
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            LrSchedule::StepDecay {
                base: num(base)?,
                decay_iters,
                factor: num(factor)?,
            }
        } else {
            LrSchedule::constant(num(s)?)
        };
        sched.validate()?;
        Ok(sched)
    }
}

impl std::fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LrSchedule::Constant { value } => write!(f, "{value}"),
            LrSchedule::StepDecay {
                base,
                decay_iters,
                factor,
            } => {
                let iters: Vec<String> = decay_iters.iter().map(|i| i.to_string()).collect();
                write!(f, "step:{base}@{}x{factor}", iters.join(","))
            }
            LrSchedule::Reciprocal { numerator, offset } => write!(f, "recip:{numerator}/{offset}"),
        }
    }
}

/// Heavy-ball momentum SGD with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor2>,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor2] {
        &self.velocity
    }

    /// `v ← momentum·v + grad + wd·param; param ← param − lr·v`.
    pub fn step(&mut self, params: Vec<&mut Tensor2>, grads: Vec<&Tensor2>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("sgd_step", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("{:?}", p.shape()),
                    format!("{:?}", g.shape()),
                ));
            }
            g.check_finite("sgd_step gradient")?;
        }
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|p| Tensor2::zeros(p.rows(), p.cols()))
                .collect();
        } else if self.velocity.len() != params.len()
            || self
                .velocity
                .iter()
                .zip(&params)
                .any(|(v, p)| v.shape() != p.shape())
        {
            return Err(Error::shape(
                "sgd_step velocity",
                self.velocity.len(),
                params.len(),
            ));
        }
        let (lr, mom, wd) = (self.lr, self.momentum, self.weight_decay);
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            for ((pv, &gv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *vv = mom * *vv + gv + wd * *pv;
                if lr != 0.0 {
                    *pv -= lr * *vv;
                }
            }
            p.check_finite("sgd_step")?;
        }
        Ok(())
    }
}

use serde::{Deserialize, Serialize};

use super::rng::{gaussian_init, Rng};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Fan-in scaled init std: He for ReLU, LeCun for linear outputs.
    pub fn init_scale(self, fan_in: usize) -> f64 {
        let gain = match self {
            Activation::Relu => 2.0,
            Activation::Identity => 1.0,
        };
        (gain / fan_in.max(1) as f64).sqrt()
    }
}

/// `y = act(x · W + b)` with `W` stored `in_dim × out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor2,
    /// `1 × out_dim`.
    pub bias: Tensor2,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor2, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape("DenseLayer::new", weights.cols(), bias.len()));
        }
        let bias = Tensor2::new(1, bias.len(), bias)?;
        weights.check_finite("DenseLayer::new")?;
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        DenseLayer {
            weights: gaussian_init(in_dim, out_dim, activation.init_scale(in_dim), rng),
            bias: Tensor2::zeros(1, out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Returns `(pre_activation, output)`.
    fn forward(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let mut z = x.matmul(&self.weights)?;
        z.add_row_broadcast(self.bias.data())?;
        let act = self.activation;
        let y = match act {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| act.apply(v)),
        };
        Ok((z, y))
    }
}

/// Per-layer gradients plus the gradient w.r.t. the model input.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
    pub input: Tensor2,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Tensor2,
    pub bias: Tensor2,
}

impl ParamGrads {
    pub fn zeros_like(model: &Mlp) -> Self {
        ParamGrads {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: Tensor2::zeros(l.in_dim(), l.out_dim()),
                    bias: Tensor2::zeros(1, l.out_dim()),
                })
                .collect(),
            input: Tensor2::zeros(0, model.in_dim()),
        }
    }

    /// Tensors in the same order as [`Mlp::params_mut`].
    pub fn tensors(&self) -> Vec<&Tensor2> {
        self.layers
            .iter()
            .flat_map(|g| [&g.weights, &g.bias])
            .collect()
    }

    /// `self += alpha · other` over parameter gradients; the input
    /// gradient is left alone.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamGrads) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(
                "ParamGrads::add_scaled",
                self.layers.len(),
                other.layers.len(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(alpha, &b.weights)?;
            a.bias.axpy(alpha, &b.bias)?;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded by a forward pass, consumed by backward.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Tensor2>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor2>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    cache: Option<Trace>,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an Mlp needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "Mlp::new",
                    format!("layer {} in_dim {}", k + 1, pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Mlp {
            layers,
            cache: None,
        })
    }

    /// Randomly initialised stack over `dims` (length = layers + 1).
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() + 1 != dims.len() {
            return Err(Error::invalid(format!(
                "{} dims do not describe {} layers",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| DenseLayer::init(d[0], d[1], a, rng))
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    /// Bitwise parameter equality, ignoring any cached activations.
    pub fn params_bit_eq(&self, other: &Mlp) -> bool {
        let (a, b) = (self.params(), other.params());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.bit_eq(y))
    }

    /// Forward pass that leaves the model untouched and returns the trace
    /// needed for [`Mlp::backward_traced`].
    pub fn forward_traced(&self, batch: &Tensor2) -> Result<(Tensor2, Trace)> {
        if batch.cols() != self.in_dim() {
            return Err(Error::shape("forward", self.in_dim(), batch.cols()));
        }
        batch.check_finite("forward input")?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let (z, y) = layer.forward(&x)?;
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        x.check_finite("forward output")?;
        Ok((x, Trace { inputs, pre }))
    }

    /// Forward pass without recording anything.
    pub fn predict(&self, batch: &Tensor2) -> Result<Tensor2> {
        if batch.cols() != self.in_dim() {
            return Err(Error::shape("forward", self.in_dim(), batch.cols()));
        }
        let mut x = batch.clone();
        for layer in &self.layers {
            x = layer.forward(&x)?.1;
        }
        x.check_finite("forward output")?;
        Ok(x)
    }

    /// Forward pass that caches activations on the model for [`Mlp::backward`].
    pub fn forward(&mut self, batch: &Tensor2) -> Result<Tensor2> {
        let (out, trace) = self.forward_traced(batch)?;
        self.cache = Some(trace);
        Ok(out)
    }

    /// Backward pass through the activations cached by the last [`Mlp::forward`].
    pub fn backward(&mut self, dout: &Tensor2) -> Result<ParamGrads> {
        let trace = self.cache.take().ok_or(Error::NoForwardCache)?;
        let grads = self.backward_traced(&trace, dout);
        self.cache = Some(trace);
        grads
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn backward_traced(&self, trace: &Trace, dout: &Tensor2) -> Result<ParamGrads> {
        self.backward_impl(trace, dout, true)
    }

    /// Gradient w.r.t. the input only; parameter gradients come back empty.
    /// This is how a frozen module passes gradient to the module below it.
    pub fn backward_input(&self, trace: &Trace, dout: &Tensor2) -> Result<Tensor2> {
        Ok(self.backward_impl(trace, dout, false)?.input)
    }

    fn backward_impl(&self, trace: &Trace, dout: &Tensor2, want_params: bool) -> Result<ParamGrads> {
        let last = trace.pre.last().ok_or(Error::NoForwardCache)?;
        if trace.pre.len() != self.layers.len() {
            return Err(Error::shape(
                "backward trace",
                self.layers.len(),
                trace.pre.len(),
            ));
        }
        if dout.shape() != last.shape() {
            return Err(Error::shape(
                "backward",
                format!("{:?}", last.shape()),
                format!("{:?}", dout.shape()),
            ));
        }
        dout.check_finite("backward dout")?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut grad = dout.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (g, &z) in grad.data_mut().iter_mut().zip(trace.pre[k].data()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            if want_params {
                layers.push(LayerGrads {
                    weights: trace.inputs[k].matmul_tn(&grad)?,
                    bias: grad.sum_rows(),
                });
            }
            grad = grad.matmul_nt(&layer.weights)?;
        }
        layers.reverse();
        grad.check_finite("backward")?;
        Ok(ParamGrads {
            layers,
            input: grad,
        })
    }

    /// Consumes the top `k` layers into a new model, leaving the rest.
    pub fn split_at(&self, k: usize) -> Result<(Mlp, Mlp)> {
        if k == 0 || k >= self.layers.len() {
            return Err(Error::invalid(format!(
                "split point {k} outside 1..{}",
                self.layers.len()
            )));
        }
        Ok((
            Mlp::new(self.layers[..k].to_vec())?,
            Mlp::new(self.layers[k..].to_vec())?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng::seeded_rng;

    fn identity_layer(n: usize, act: Activation) -> DenseLayer {
        DenseLayer::new(Tensor2::identity(n), vec![0.0; n], act).unwrap()
    }

    #[test]
    fn identity_layer_is_identity() {
        let m = Mlp::new(vec![identity_layer(3, Activation::Identity)]).unwrap();
        let x = Tensor2::from_fn(4, 3, |i, j| i as f64 - j as f64 * 0.5);
        assert_eq!(m.predict(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negatives() {
        let m = Mlp::new(vec![identity_layer(2, Activation::Relu)]).unwrap();
        let x = Tensor2::new(1, 2, vec![-1.0, 2.0]).unwrap();
        assert_eq!(m.predict(&x).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn two_layer_matches_nested_loop_oracle() {
        let mut rng = seeded_rng(42);
        let m = Mlp::init(&[4, 6, 3], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = gaussian_init(5, 4, 1.0, &mut rng);
        let got = m.predict(&x).unwrap();

        // Plain nested loops, no Tensor2 arithmetic.
        let dense = |inp: &Vec<Vec<f64>>, l: &DenseLayer| -> Vec<Vec<f64>> {
            inp.iter()
                .map(|row| {
                    (0..l.out_dim())
                        .map(|o| {
                            let mut s = l.bias.get(0, o);
                            for (i, v) in row.iter().enumerate() {
                                s += v * l.weights.get(i, o);
                            }
                            if l.activation == Activation::Relu && s < 0.0 {
                                0.0
                            } else {
                                s
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let rows: Vec<Vec<f64>> = (0..5).map(|r| x.row(r).to_vec()).collect();
        let h = dense(&rows, &m.layers[0]);
        let y = dense(&h, &m.layers[1]);
        for r in 0..5 {
            for c in 0..3 {
                assert!((got.get(r, c) - y[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_output_non_negative() {
        let mut rng = seeded_rng(1);
        let m = Mlp::init(&[3, 8], &[Activation::Relu], &mut rng).unwrap();
        let out = m.predict(&gaussian_init(10, 3, 2.0, &mut rng)).unwrap();
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dimension_errors() {
        let mut rng = seeded_rng(1);
        let mut m = Mlp::init(&[3, 4], &[Activation::Relu], &mut rng).unwrap();
        assert!(m.forward(&Tensor2::zeros(2, 5)).is_err());
        assert!(matches!(
            m.backward(&Tensor2::zeros(2, 4)),
            Err(Error::NoForwardCache)
        ));
        m.forward(&Tensor2::zeros(2, 3)).unwrap();
        assert!(m.backward(&Tensor2::zeros(3, 4)).is_err());
        let bad = DenseLayer::init(5, 2, Activation::Identity, &mut rng);
        let ok = DenseLayer::init(3, 4, Activation::Relu, &mut rng);
        assert!(Mlp::new(vec![ok, bad]).is_err());
    }

    #[test]
    fn zero_dout_gives_zero_grads() {
        let mut rng = seeded_rng(9);
        let mut m =
            Mlp::init(&[4, 5, 2], &[Activation::Relu, Activation::Identity], &mut rng).unwrap();
        let x = gaussian_init(3, 4, 1.0, &mut rng);
        m.forward(&x).unwrap();
        let g = m.backward(&Tensor2::zeros(3, 2)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        for (p, gt) in m.params().iter().zip(g.tensors()) {
            assert_eq!(p.shape(), gt.shape());
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut rng = seeded_rng(2);
        let m = Mlp::init(&[2, 2], &[Activation::Identity], &mut rng).unwrap();
        let mut x = Tensor2::zeros(1, 2);
        x.data_mut()[0] = f64::NAN;
        assert!(matches!(m.predict(&x), Err(Error::NonFinite(_))));
    }
}

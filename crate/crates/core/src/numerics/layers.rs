//! Learnable layers composed by the pipeline.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Uniform init in `±sqrt(1/fan_in)`, fixed by the caller's seeded rng.
fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Vec<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect()
}

/// Dense affine map `x -> x W (+ b)` with `W` of shape `d_in x d_out`.
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl LinearLayer {
    pub fn new(d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> LinearLayer {
        let weight = Tensor::param(&[d_in, d_out], init_uniform(rng, d_in, d_out, d_in))
            .expect("finite init");
        let bias = bias.then(|| {
            Tensor::param(&[d_out], init_uniform(rng, 1, d_out, d_in)).expect("finite init")
        });
        LinearLayer { weight, bias }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies the map to the last axis; leading axes are flattened into a
    /// batch and restored afterwards.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape().to_vec();
        let d_in = *sh
            .last()
            .ok_or_else(|| Error::shape("linear_forward on rank-0"))?;
        if d_in != self.d_in() {
            return Err(Error::shape(format!(
                "linear_forward: input dim {d_in}, weight expects {}",
                self.d_in()
            )));
        }
        let rows = x.numel() / d_in;
        let flat = x.reshape(&[rows, d_in])?;
        let mut out = flat.matmul(&self.weight)?;
        if let Some(b) = &self.bias {
            out = out.add_bias(b)?;
        }
        let mut out_shape = sh;
        *out_shape.last_mut().unwrap() = self.d_out();
        out.reshape(&out_shape)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum NormKind {
    Batch,
    Layer,
}

/// Batch or layer normalization over the last-axis features.
///
/// Batch mode normalizes each feature over all leading axes and maintains
/// running statistics (momentum update in training, frozen in inference).
/// Layer mode normalizes each lane independently and ignores mode.
pub struct NormLayer {
    pub kind: NormKind,
    pub gamma: Tensor,
    pub beta: Tensor,
    /// Running statistics; tensors so they serialize with the other state,
    /// but never differentiated.
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub eps: f64,
    pub momentum: f64,
}

impl NormLayer {
    pub fn new(kind: NormKind, d: usize) -> NormLayer {
        NormLayer {
            kind,
            gamma: Tensor::param(&[d], vec![1.0; d]).expect("finite init"),
            beta: Tensor::param(&[d], vec![0.0; d]).expect("finite init"),
            running_mean: Tensor::zeros(&[d]),
            running_var: Tensor::full(&[d], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        match self.kind {
            NormKind::Layer => x.layer_norm(&self.gamma, &self.beta, self.eps),
            NormKind::Batch => {
                if training {
                    let (out, mean, var) = x.batch_norm_train(&self.gamma, &self.beta, self.eps)?;
                    let m = self.momentum;
                    let mut rm = self.running_mean.to_vec();
                    let mut rv = self.running_var.to_vec();
                    for (r, b) in rm.iter_mut().zip(&mean) {
                        *r = (1.0 - m) * *r + m * b;
                    }
                    for (r, b) in rv.iter_mut().zip(&var) {
                        *r = (1.0 - m) * *r + m * b;
                    }
                    self.running_mean.set_data(&rm);
                    self.running_var.set_data(&rv);
                    Ok(out)
                } else {
                    x.batch_norm_infer(
                        &self.gamma,
                        &self.beta,
                        &self.running_mean.to_vec(),
                        &self.running_var.to_vec(),
                        self.eps,
                    )
                }
            }
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
        if self.kind == NormKind::Batch {
            out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
            out.push((format!("{prefix}.running_var"), self.running_var.clone()));
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    None,
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::None => x.affine(1.0, 0.0),
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

/// One MLP stage: linear, optional normalization, activation — in that order.
pub struct MlpLayer {
    pub linear: LinearLayer,
    pub norm: Option<NormLayer>,
    pub act: Activation,
}

/// Sequential composition of [`MlpLayer`]s. An empty layer list is the
/// identity map.
pub struct Mlp {
    pub layers: Vec<MlpLayer>,
}

impl Mlp {
    pub fn forward(&self, x: &Tensor, training: bool) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.linear.forward(&h)?;
            if let Some(norm) = &layer.norm {
                h = norm.forward(&h, training)?;
            }
            h = layer.act.apply(&h);
        }
        Ok(h)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.linear.collect_params(&format!("{prefix}.lin{}", i + 1), out);
            if let Some(norm) = &layer.norm {
                norm.collect_params(&format!("{prefix}.norm{}", i + 1), out);
            }
        }
    }
}

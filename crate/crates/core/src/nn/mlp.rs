use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Silu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let sig = 1.0 / (1.0 + (-x).exp());
                sig * (1.0 + x * (1.0 - sig))
            }
        }
    }
}

/// Multilayer perceptron with a linear output layer.
///
/// All parameters live in one flat buffer, layer by layer, each layer's
/// `out x in` row-major weight matrix followed by its bias. Gradients and
/// optimizer moments use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Activations cached by a forward pass for the backward pass.
struct Trace {
    /// Input followed by every post-activation (the last entry is the output).
    outputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// He-initialized weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation)?;
        let mut rng = substream(seed, 0);
        for l in 0..net.n_layers() {
            let (fan_in, off, len) = (layer_dims[l], net.weight_offset(l), layer_dims[l] * layer_dims[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            for w in &mut net.params[off..off + len] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("an MLP needs at least input and output dimensions"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let n: usize = layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp { layer_dims: layer_dims.to_vec(), activation, params: vec![0.0; n] })
    }

    pub(crate) fn from_params(layer_dims: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(&layer_dims, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::format(format!(
                "expected {} parameters, found {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::format("non-finite network parameter"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight_offset(&self, layer: usize) -> usize {
        self.layer_dims.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(out x in)` weight matrix of `layer`.
    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (i, o) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.weight_offset(layer);
        ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).unwrap()
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (i, o) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.weight_offset(layer) + o * i;
        ArrayView1::from(&self.params[off..off + o])
    }

    fn split_grad<'a>(&self, grads: &'a mut [f64], layer: usize) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
        let (i, o) = (self.layer_dims[layer], self.layer_dims[layer + 1]);
        let off = self.weight_offset(layer);
        let (w, b) = grads[off..off + o * i + o].split_at_mut(o * i);
        (ArrayViewMut2::from_shape((o, i), w).unwrap(), ArrayViewMut1::from(b))
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::invalid(format!("input has {cols} features, network expects {}", self.input_dim())));
        }
        Ok(())
    }

    /// Evaluate a batch (`rows x input_dim`).
    pub fn forward(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut x = self.affine(0, input);
        for l in 1..self.n_layers() {
            x.mapv_inplace(|v| self.activation.apply(v));
            x = self.affine(l, x.view());
        }
        Ok(x)
    }

    /// Evaluate a single input vector.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).unwrap();
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    fn affine(&self, layer: usize, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight(layer).t());
        z += &self.bias(layer);
        z
    }

    fn forward_trace(&self, input: ArrayView2<'_, f64>) -> Trace {
        let mut outputs = vec![input.to_owned()];
        let mut pre = Vec::with_capacity(self.n_layers() - 1);
        let mut z = self.affine(0, input);
        for l in 1..self.n_layers() {
            let a = z.mapv(|v| self.activation.apply(v));
            pre.push(z);
            z = self.affine(l, a.view());
            outputs.push(a);
        }
        outputs.push(z);
        Trace { outputs, pre }
    }

    /// Gradient of `L = mean_b ||net(x_b) - y_b||^2` with respect to every
    /// parameter, in the flat parameter layout. Returns `(grads, loss)`.
    pub fn grad(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<(Vec<f64>, f64)> {
        self.check_input(inputs.ncols())?;
        if targets.ncols() != self.output_dim() || targets.nrows() != inputs.nrows() {
            return Err(Error::invalid("targets do not match the batch and output shape"));
        }
        if inputs.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if inputs.iter().chain(targets.iter()).any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN in training batch"));
        }
        let batch = inputs.nrows() as f64;
        let trace = self.forward_trace(inputs);
        let out = trace.outputs.last().unwrap();
        let mut delta = out - &targets;
        let loss = delta.iter().map(|v| v * v).sum::<f64>() / batch;
        delta *= 2.0 / batch;

        let mut grads = vec![0.0; self.params.len()];
        for l in (0..self.n_layers()).rev() {
            let (mut gw, mut gb) = self.split_grad(&mut grads, l);
            gw.assign(&delta.t().dot(&trace.outputs[l]));
            gb.assign(&delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut back = delta.dot(&self.weight(l));
                let act = self.activation;
                Zip::from(&mut back).and(&trace.pre[l - 1]).for_each(|d, &z| *d *= act.derivative(z));
                delta = back;
            }
        }
        Ok((grads, loss))
    }

    /// Copy of the `rows` of a batch, used by callers to build inputs.
    pub fn batch_from_rows(rows: &[f64], width: usize) -> Result<Array2<f64>> {
        if width == 0 || !rows.len().is_multiple_of(width) {
            return Err(Error::invalid("row buffer is not a whole number of rows"));
        }
        Ok(Array2::from_shape_vec((rows.len() / width, width), rows.to_vec()).unwrap())
    }

    /// Slice of the output layer's weights, handy for zeroing the final layer.
    pub fn output_layer_mut(&mut self) -> &mut [f64] {
        let l = self.n_layers() - 1;
        let off = self.weight_offset(l);
        let n = self.layer_dims[l] * self.layer_dims[l + 1] + self.layer_dims[l + 1];
        &mut self.params[off..off + n]
    }
}

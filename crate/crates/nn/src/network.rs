use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::param::{ParamSet, ParamTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Affine,
    Relu,
    Tanh,
    Sigmoid,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Affine => 0,
            LayerKind::Relu => 1,
            LayerKind::Tanh => 2,
            LayerKind::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => LayerKind::Affine,
            1 => LayerKind::Relu,
            2 => LayerKind::Tanh,
            3 => LayerKind::Sigmoid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerSpec {
    pub fn affine(in_dim: usize, out_dim: usize) -> Self {
        Self { kind: LayerKind::Affine, in_dim, out_dim }
    }

    pub fn activation(kind: LayerKind, dim: usize) -> Self {
        Self { kind, in_dim: dim, out_dim: dim }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    /// `[weight (out × in), bias (out)]` for affine layers, empty otherwise.
    params: Vec<ParamTensor>,
}

impl Layer {
    fn new(spec: LayerSpec) -> Result<Self> {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(NnError::InvalidSpec(format!("zero-sized layer {spec:?}")));
        }
        let params = match spec.kind {
            LayerKind::Affine => vec![
                ParamTensor::zeros(&[spec.out_dim, spec.in_dim]),
                ParamTensor::zeros(&[spec.out_dim]),
            ],
            _ => {
                if spec.in_dim != spec.out_dim {
                    return Err(NnError::InvalidSpec(format!(
                        "activation layer must preserve width: {spec:?}"
                    )));
                }
                Vec::new()
            }
        };
        Ok(Self { spec, params })
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self.spec.kind {
            LayerKind::Affine => {
                let w = weight_view(&self.params[0], self.spec);
                let b = ArrayView1::from(&self.params[1].values[..]);
                let mut y = x.dot(&w.t());
                y += &b;
                y
            }
            LayerKind::Relu => x.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            LayerKind::Tanh => x.mapv(f64::tanh),
            LayerKind::Sigmoid => x.mapv(sigmoid),
        }
    }

    /// Backpropagates `g` (gradient w.r.t. this layer's output). Returns the
    /// gradient w.r.t. the layer input when `want_input` is set.
    fn backward(
        &mut self,
        input: &Array2<f64>,
        output: &Array2<f64>,
        g: Array2<f64>,
        want_input: bool,
    ) -> Option<Array2<f64>> {
        match self.spec.kind {
            LayerKind::Affine => {
                let spec = self.spec;
                let (w, b) = self.params.split_at_mut(1);
                let mut dw =
                    ArrayViewMut2::from_shape((spec.out_dim, spec.in_dim), &mut w[0].grad[..])
                        .expect("weight grad shape");
                general_mat_mul(1.0, &g.t(), input, 1.0, &mut dw);
                for (db, col) in b[0].grad.iter_mut().zip(g.sum_axis(Axis(0))) {
                    *db += col;
                }
                want_input.then(|| g.dot(&weight_view(&self.params[0], spec)))
            }
            kind => Some(activation_backward(kind, input, output, g)),
        }
    }
}

fn activation_backward(
    kind: LayerKind,
    input: &Array2<f64>,
    output: &Array2<f64>,
    mut g: Array2<f64>,
) -> Array2<f64> {
    match kind {
        LayerKind::Relu => g.zip_mut_with(input, |gv, &x| {
            if x <= 0.0 {
                *gv = 0.0;
            }
        }),
        LayerKind::Tanh => g.zip_mut_with(output, |gv, &y| *gv *= 1.0 - y * y),
        LayerKind::Sigmoid => g.zip_mut_with(output, |gv, &y| *gv *= y * (1.0 - y)),
        LayerKind::Affine => unreachable!("affine layers are handled by the caller"),
    }
    g
}

fn weight_view(w: &ParamTensor, spec: LayerSpec) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((spec.out_dim, spec.in_dim), &w.values[..]).expect("weight shape")
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sequential stack of layers with a single-slot activation tape.
#[derive(Debug, Clone)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
    /// Activations of the last training forward pass: `tape[i]` is the input
    /// of layer `i`, the final entry is the network output.
    tape: Option<Vec<Array2<f64>>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim && self.layers == other.layers
    }
}

impl Network {
    pub fn new(specs: &[LayerSpec]) -> Result<Self> {
        let first = specs
            .first()
            .ok_or_else(|| NnError::InvalidSpec("network needs at least one layer".into()))?;
        for pair in specs.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::InvalidSpec(format!(
                    "layer chain broken: {:?} feeds {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        let layers = specs.iter().map(|s| Layer::new(*s)).collect::<Result<Vec<_>>>()?;
        Ok(Self { input_dim: first.in_dim, layers, tape: None })
    }

    /// Affine layers of the given widths, each followed by `hidden` except the
    /// last, which is followed by `output` when given.
    pub fn mlp(
        input_dim: usize,
        widths: &[usize],
        hidden: LayerKind,
        output: Option<LayerKind>,
    ) -> Result<Self> {
        let mut specs = Vec::new();
        let mut prev = input_dim;
        for (i, &w) in widths.iter().enumerate() {
            specs.push(LayerSpec::affine(prev, w));
            let last = i + 1 == widths.len();
            let act = if last { output } else { Some(hidden) };
            if let Some(kind) = act {
                if kind == LayerKind::Affine {
                    return Err(NnError::InvalidSpec("affine is not an activation".into()));
                }
                specs.push(LayerSpec::activation(kind, w));
            }
            prev = w;
        }
        Self::new(&specs)
    }

    /// Glorot-uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init_glorot<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            if layer.spec.kind != LayerKind::Affine {
                continue;
            }
            let limit = (6.0 / (layer.spec.in_dim + layer.spec.out_dim) as f64).sqrt();
            for w in &mut layer.params[0].values {
                *w = rng.random_range(-limit..limit);
            }
            layer.params[1].values.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn seeded(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut net = Self::new(specs)?;
        net.init_glorot(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.spec.out_dim).unwrap_or(self.input_dim)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    /// Zeroes every parameter of the final affine layer.
    pub fn zero_last_affine(&mut self) {
        if let Some(layer) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| l.spec.kind == LayerKind::Affine)
        {
            for p in &mut layer.params {
                p.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim {
            return Err(NnError::shape("network input", self.input_dim, cols));
        }
        Ok(())
    }

    /// Inference on a single sample. Does not touch the tape.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Inference on a `batch × input_dim` matrix. Does not touch the tape.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut iter = self.layers.iter();
        let mut y = match iter.next() {
            Some(l) => l.forward(x),
            None => x.to_owned(),
        };
        for layer in iter {
            y = layer.forward(y.view());
        }
        Ok(y)
    }

    /// Forward pass that records activations for a subsequent [`backward`].
    ///
    /// [`backward`]: Network::backward
    pub fn forward_train(&mut self, x: Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut tape = Vec::with_capacity(self.layers.len() + 1);
        tape.push(x);
        for layer in &self.layers {
            let y = layer.forward(tape.last().expect("tape").view());
            tape.push(y);
        }
        let out = tape.last().expect("tape").clone();
        self.tape = Some(tape);
        Ok(out)
    }

    /// Consumes the recorded tape, accumulates parameter gradients and, if
    /// requested, returns the gradient w.r.t. the recorded input.
    pub fn backward(
        &mut self,
        output_grad: ArrayView2<f64>,
        want_input_grad: bool,
    ) -> Result<Option<Array2<f64>>> {
        let tape = self.tape.take().ok_or(NnError::NoTape)?;
        let out = tape.last().expect("tape");
        if output_grad.dim() != out.dim() {
            let expected = format!("{:?}", out.dim());
            self.tape = Some(tape);
            return Err(NnError::shape("output gradient", expected, format!("{:?}", output_grad.dim())));
        }
        let mut g = output_grad.to_owned();
        let n = self.layers.len();
        for i in (0..n).rev() {
            let want = want_input_grad || i > 0;
            match self.layers[i].backward(&tape[i], &tape[i + 1], g, want) {
                Some(next) => g = next,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    /// Gradient w.r.t. the recorded input without touching parameter
    /// gradients or consuming the tape.
    pub fn input_grad(&self, output_grad: ArrayView2<f64>) -> Result<Array2<f64>> {
        let tape = self.tape.as_ref().ok_or(NnError::NoTape)?;
        let out = tape.last().expect("tape");
        if output_grad.dim() != out.dim() {
            return Err(NnError::shape(
                "output gradient",
                format!("{:?}", out.dim()),
                format!("{:?}", output_grad.dim()),
            ));
        }
        let mut g = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            g = match layer.spec.kind {
                LayerKind::Affine => g.dot(&weight_view(&layer.params[0], layer.spec)),
                kind => activation_backward(kind, &tape[i], &tape[i + 1], g),
            };
        }
        Ok(g)
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Single-sample convenience wrapper around [`forward_train`] + [`backward`].
    ///
    /// [`forward_train`]: Network::forward_train
    /// [`backward`]: Network::backward
    pub fn backward_single(&mut self, output_grad: &[f64]) -> Result<Vec<f64>> {
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row view");
        let dx = self.backward(g, true)?.expect("input grad requested");
        Ok(dx.into_raw_vec_and_offset().0)
    }

    pub fn forward_train_single(&mut self, input: &[f64]) -> Result<Vec<f64>> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row");
        Ok(self.forward_train(x)?.into_raw_vec_and_offset().0)
    }
}

impl ParamSet for Network {
    fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }
}

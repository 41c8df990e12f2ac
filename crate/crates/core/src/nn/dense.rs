use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Real};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    /// ReLU uses the subgradient 0 at the kink.
    #[inline]
    fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn new(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
        }
    }

    fn num_params(&self) -> usize {
        self.outputs * (self.inputs + 1)
    }
}

/// Fully connected feedforward network.
///
/// All parameters live in one flat buffer, layer by layer, each layer laid out
/// as its row-major `outputs × inputs` weight matrix followed by its bias.
/// Optimizer state, soft target updates and checkpoints all operate on that
/// buffer directly.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

/// Activations recorded by a forward pass, consumed by [`DenseNet::backward`].
#[derive(Debug, Clone)]
pub struct Trace<T> {
    rows: usize,
    // acts[0] is the input, acts[l + 1] the output of layer l
    acts: Vec<Vec<T>>,
}

impl<T: Real> Trace<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn input(&self) -> &[T] {
        &self.acts[0]
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Vec<T> {
        self.acts.pop().expect("trace holds at least the input")
    }
}

impl<T: Real> DenseNet<T> {
    /// Network with every parameter set to zero.
    pub fn zeros(shapes: Vec<LayerShape>) -> Result<Self, NnError> {
        let total = validate_shapes(&shapes)?;
        Self::from_params(shapes, vec![T::zero(); total])
    }

    pub fn from_params(shapes: Vec<LayerShape>, params: Vec<T>) -> Result<Self, NnError> {
        let total = validate_shapes(&shapes)?;
        if params.len() != total {
            return Err(NnError::ParamCount {
                expected: total,
                actual: params.len(),
            });
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for s in &shapes {
            offsets.push(at);
            at += s.num_params();
        }
        Ok(Self {
            shapes,
            offsets,
            params,
        })
    }

    /// Uniform initialization in ±1/√fan_in for weights and biases.
    pub fn init<R: Rng + ?Sized>(shapes: Vec<LayerShape>, rng: &mut R) -> Result<Self, NnError> {
        let mut net = Self::zeros(shapes)?;
        for l in 0..net.shapes.len() {
            let bound = 1.0 / (net.shapes[l].inputs as f64).sqrt();
            let range = net.layer_range(l);
            for p in &mut net.params[range] {
                *p = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    /// `inputs → hidden[0] → … → outputs`, hidden layers with `hidden_act`.
    pub fn mlp<R: Rng + ?Sized>(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        hidden_act: Activation,
        output_act: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut prev = inputs;
        for &h in hidden {
            shapes.push(LayerShape::new(prev, h, hidden_act));
            prev = h;
        }
        shapes.push(LayerShape::new(prev, outputs, output_act));
        Self::init(shapes, rng)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.shapes[self.shapes.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.offsets[layer];
        start..start + self.shapes[layer].num_params()
    }

    fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let s = self.shapes[layer];
        let start = self.offsets[layer];
        start..start + s.inputs * s.outputs
    }

    fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let s = self.shapes[layer];
        let start = self.offsets[layer] + s.inputs * s.outputs;
        start..start + s.outputs
    }

    pub fn weight(&self, layer: usize) -> &[T] {
        &self.params[self.weight_range(layer)]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.weight_range(layer);
        &mut self.params[r]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.params[self.bias_range(layer)]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [T] {
        let r = self.bias_range(layer);
        &mut self.params[r]
    }

    /// Zeroes weight and bias of the final layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.shapes.len() - 1;
        let r = self.layer_range(last);
        for p in &mut self.params[r] {
            *p = T::zero();
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        self.forward_batch(x, 1)
    }

    /// Forward pass over `rows` inputs stored row-major in `x`.
    pub fn forward_batch(&self, x: &[T], rows: usize) -> Result<Vec<T>, NnError> {
        self.check_input(x.len(), rows)?;
        let mut cur = x.to_vec();
        for l in 0..self.shapes.len() {
            cur = self.layer_forward(l, &cur, rows);
        }
        Ok(cur)
    }

    /// Forward pass that keeps every intermediate activation.
    pub fn forward_trace(&self, x: Vec<T>, rows: usize) -> Result<Trace<T>, NnError> {
        self.check_input(x.len(), rows)?;
        let mut acts = Vec::with_capacity(self.shapes.len() + 1);
        acts.push(x);
        for l in 0..self.shapes.len() {
            let next = self.layer_forward(l, &acts[l], rows);
            acts.push(next);
        }
        Ok(Trace { rows, acts })
    }

    fn check_input(&self, len: usize, rows: usize) -> Result<(), NnError> {
        let expected = self.input_dim() * rows;
        if len != expected {
            return Err(NnError::DimMismatch {
                layer: 0,
                expected: self.input_dim(),
                actual: if rows == 0 { len } else { len / rows.max(1) },
            });
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &[T], rows: usize) -> Vec<T> {
        let s = self.shapes[l];
        let mut y = vec![T::zero(); rows * s.outputs];
        gemm(
            false,
            true,
            rows,
            s.inputs,
            s.outputs,
            T::one(),
            x,
            self.weight(l),
            T::zero(),
            &mut y,
        );
        let bias = self.bias(l);
        for row in y.chunks_exact_mut(s.outputs) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = s.activation.apply(*v + b);
            }
        }
        y
    }

    /// Reverse-mode pass: accumulates ∂⟨upstream, output⟩/∂params into
    /// `grads` and, when `want_input_grad`, returns the input gradient.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        grads: &mut [T],
        want_input_grad: bool,
    ) -> Result<Option<Vec<T>>, NnError> {
        let rows = trace.rows;
        if upstream.len() != rows * self.output_dim() {
            return Err(NnError::GradientShape {
                expected: rows * self.output_dim(),
                actual: upstream.len(),
            });
        }
        if grads.len() != self.params.len() {
            return Err(NnError::ParamCount {
                expected: self.params.len(),
                actual: grads.len(),
            });
        }
        let mut delta = upstream.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let out = &trace.acts[l + 1];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d = *d * s.activation.derivative_from_output(y);
            }
            let input = &trace.acts[l];
            let wr = self.weight_range(l);
            gemm(
                true,
                false,
                s.outputs,
                rows,
                s.inputs,
                T::one(),
                &delta,
                input,
                T::one(),
                &mut grads[wr],
            );
            let br = self.bias_range(l);
            let mut sums = vec![0.0f64; s.outputs];
            for row in delta.chunks_exact(s.outputs) {
                for (acc, &d) in sums.iter_mut().zip(row) {
                    *acc += d.f64();
                }
            }
            for (g, acc) in grads[br].iter_mut().zip(sums) {
                *g = *g + T::of(acc);
            }
            if l == 0 && !want_input_grad {
                return Ok(None);
            }
            let mut prev = vec![T::zero(); rows * s.inputs];
            gemm(
                false,
                false,
                rows,
                s.outputs,
                s.inputs,
                T::one(),
                &delta,
                self.weight(l),
                T::zero(),
                &mut prev,
            );
            delta = prev;
        }
        Ok(Some(delta))
    }

    /// `self ← eta·online + (1 − eta)·self`, parameter by parameter.
    pub fn soft_update_from(&mut self, online: &DenseNet<T>, eta: f64) -> Result<(), NnError> {
        if online.shapes != self.shapes {
            return Err(NnError::ParamCount {
                expected: self.params.len(),
                actual: online.params.len(),
            });
        }
        let eta = T::of(eta);
        let keep = T::one() - eta;
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = eta * o + keep * *t;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> DenseNet<U> {
        DenseNet {
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }
}

fn validate_shapes(shapes: &[LayerShape]) -> Result<usize, NnError> {
    if shapes.is_empty() {
        return Err(NnError::EmptyNetwork);
    }
    for (i, pair) in shapes.windows(2).enumerate() {
        if pair[0].outputs != pair[1].inputs {
            return Err(NnError::Compose {
                layer: i,
                outputs: pair[0].outputs,
                next_inputs: pair[1].inputs,
            });
        }
    }
    if let Some(i) = shapes.iter().position(|s| s.inputs == 0 || s.outputs == 0) {
        return Err(NnError::DimMismatch {
            layer: i,
            expected: 1,
            actual: 0,
        });
    }
    Ok(shapes.iter().map(LayerShape::num_params).sum())
}

/// Gradients of ⟨upstream, net(x)⟩ for a single input: `(param_grads, input_grad)`.
pub fn backward<T: Real>(
    net: &DenseNet<T>,
    x: &[T],
    upstream: &[T],
) -> Result<(Vec<T>, Vec<T>), NnError> {
    let trace = net.forward_trace(x.to_vec(), 1)?;
    let mut grads = vec![T::zero(); net.num_params()];
    let input_grad = net
        .backward(&trace, upstream, &mut grads, true)?
        .expect("input gradient requested");
    Ok((grads, input_grad))
}

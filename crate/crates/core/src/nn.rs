//! Dense rectifier networks with masked mean-square-error backpropagation
//! and the Adam optimizer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"DNET";

/// Optimizer steps between subnormal flushes of the moment estimates.
const FLUSH_PERIOD: u64 = 64;

/// One affine layer; `weights` is (out, in).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F = f64> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Layer<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_out, fan_in)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn params(&self) -> impl Iterator<Item = &F> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Rectifier on hidden layers, identity on the output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<F = f64> {
    dims: Vec<usize>,
    layers: Vec<Layer<F>>,
}

/// Parameter-shaped gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F = f64> {
    pub layers: Vec<Layer<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &DenseNet<F>) -> Self {
        Gradients {
            layers: net.dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn flat(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn max_abs(&self) -> F {
        self.layers
            .iter()
            .flat_map(Layer::params)
            .fold(F::zero(), |m, g| m.max(g.abs()))
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<F = f64> {
    /// `activations[0]` is the input, `activations[l + 1]` the output of
    /// layer `l` (after the rectifier on hidden layers).
    pub activations: Vec<Array2<F>>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn output(&self) -> &Array2<F> {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// Regression batch where each row constrains one output coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<F = f64> {
    pub inputs: Array2<F>,
    /// One target per row for the coordinate named in `mask`.
    pub targets: Array1<F>,
    pub mask: Vec<usize>,
    /// Optional nonnegative row weights; the loss is the weighted mean.
    pub weights: Option<Array1<F>>,
}

impl<F: Scalar> Batch<F> {
    pub fn new(inputs: Array2<F>, targets: Array1<F>, mask: Vec<usize>) -> Result<Self> {
        let b = Batch {
            inputs,
            targets,
            mask,
            weights: None,
        };
        b.check_rows()?;
        Ok(b)
    }

    pub fn weighted(inputs: Array2<F>, targets: Array1<F>, mask: Vec<usize>, weights: Array1<F>) -> Result<Self> {
        let b = Batch {
            inputs,
            targets,
            mask,
            weights: Some(weights),
        };
        b.check_rows()?;
        Ok(b)
    }

    fn check_rows(&self) -> Result<()> {
        let rows = self.inputs.nrows();
        let ok = self.targets.len() == rows
            && self.mask.len() == rows
            && self.weights.as_ref().is_none_or(|w| w.len() == rows);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("batch row counts disagree ({rows} inputs)")))
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weight(&self, row: usize) -> F {
        self.weights.as_ref().map_or(F::one(), |w| w[row])
    }
}

impl<F: Scalar> DenseNet<F> {
    /// All-zero parameters.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer dims {dims:?}")));
        }
        Ok(DenseNet {
            dims: dims.to_vec(),
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    /// Weights uniform in `+-sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for layer in &mut net.layers {
            let (out, inp) = layer.weights.dim();
            let bound = (6.0 / (inp + out) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = F::lit(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn layers(&self) -> &[Layer<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<F>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Parameters flattened layer by layer, weights row-major then bias.
    pub fn params_flat(&self) -> Vec<F> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_params_flat(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        for (p, v) in self.layers.iter_mut().flat_map(Layer::params_mut).zip(params) {
            *p = *v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flat_map(Layer::params).all(|p| p.is_finite())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols == self.input_dim() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "input has {cols} columns, network expects {}",
                self.input_dim()
            )))
        }
    }

    /// Output for one input vector.
    pub fn forward(&self, input: &[F]) -> Result<Vec<F>> {
        self.check_input(input.len())?;
        let mut a = Array1::from(input.to_vec());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.weights.dot(&a) + &layer.bias;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a.to_vec())
    }

    /// Outputs for a batch of inputs (rows).
    pub fn forward_batch(&self, inputs: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(inputs.ncols())?;
        let mut a = inputs.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.weights.t()) + &layer.bias;
            if l < last {
                a.mapv_inplace(relu);
            }
        }
        Ok(a)
    }

    pub fn forward_cached(&self, inputs: ArrayView2<F>) -> Result<ForwardCache<F>> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_owned());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = activations[l].dot(&layer.weights.t()) + &layer.bias;
            if l < last {
                z.mapv_inplace(relu);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Backpropagates `grad_output` (d loss / d output, batch x out).
    pub fn backward(&self, cache: &ForwardCache<F>, grad_output: Array2<F>) -> Gradients<F> {
        let mut delta = grad_output;
        let mut grads: Vec<Layer<F>> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let layer = &self.layers[l];
            grads.push(Layer {
                weights: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut next = delta.dot(&layer.weights);
                // A hidden unit is active exactly when its output is positive.
                ndarray::Zip::from(&mut next).and(input).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
                delta = next;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Weighted mean of squared errors on the masked coordinates, and its
    /// gradient.
    pub fn backward_mse(&self, batch: &Batch<F>) -> Result<(F, Gradients<F>)> {
        let out_dim = self.output_dim();
        if let Some(&bad) = batch.mask.iter().find(|&&c| c >= out_dim) {
            return Err(Error::Shape(format!("mask column {bad} out of range")));
        }
        let cache = self.forward_cached(batch.inputs.view())?;
        let total: F = (0..batch.len()).map(|i| batch.weight(i)).sum();
        let mut grad_out = Array2::zeros((batch.len(), out_dim));
        let mut loss = F::zero();
        if total > F::zero() {
            let out = cache.output();
            for (i, &c) in batch.mask.iter().enumerate() {
                let w = batch.weight(i) / total;
                let err = out[[i, c]] - batch.targets[i];
                loss += w * err * err;
                grad_out[[i, c]] = F::lit(2.0) * w * err;
            }
        }
        Ok((loss, self.backward(&cache, grad_out)))
    }

    /// `sum_ij w_ij (out_ij - y_ij)^2 / sum_ij w_ij` and its gradient. A
    /// zero weight leaves that coordinate unconstrained, so one row can
    /// carry targets for several outputs.
    pub fn backward_weighted_mse(
        &self,
        inputs: ArrayView2<F>,
        targets: &Array2<F>,
        weights: &Array2<F>,
    ) -> Result<(F, Gradients<F>)> {
        let shape = (inputs.nrows(), self.output_dim());
        if targets.dim() != shape || weights.dim() != shape {
            return Err(Error::Shape(format!(
                "targets {:?} and weights {:?} must be {shape:?}",
                targets.dim(),
                weights.dim()
            )));
        }
        let cache = self.forward_cached(inputs)?;
        let total = weights.sum();
        let mut grad_out = Array2::zeros(shape);
        let mut loss = F::zero();
        if total > F::zero() {
            let two = F::lit(2.0);
            ndarray::Zip::from(&mut grad_out)
                .and(cache.output())
                .and(targets)
                .and(weights)
                .for_each(|g, &o, &y, &w| {
                    let w = w / total;
                    let err = o - y;
                    loss += w * err * err;
                    *g = two * w * err;
                });
        }
        Ok((loss, self.backward(&cache, grad_out)))
    }

    /// Writes dims and parameters as little-endian 64-bit values.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dims.len() as u64).to_le_bytes())?;
        for &d in &self.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for p in self.params_flat() {
            w.write_all(&p.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidInput("not a network parameter file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let count = u64::from_le_bytes(next(&mut r)?) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::InvalidInput(format!("implausible layer count {count}")));
        }
        let dims = (0..count)
            .map(|_| next(&mut r).map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&dims)?;
        let params = (0..net.param_count())
            .map(|_| next(&mut r).map(|b| F::lit(f64::from_le_bytes(b))))
            .collect::<Result<Vec<_>>>()?;
        net.set_params_flat(&params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Overwrites this network's parameters with `source`'s.
    pub fn copy_from(&mut self, source: &DenseNet<F>) -> Result<()> {
        copy_params(source, self)
    }
}

pub fn copy_params<F: Scalar>(source: &DenseNet<F>, destination: &mut DenseNet<F>) -> Result<()> {
    if source.dims != destination.dims {
        return Err(Error::InvalidInput(format!(
            "cannot copy {:?} parameters into {:?}",
            source.dims, destination.dims
        )));
    }
    destination.layers.clone_from(&source.layers);
    Ok(())
}

/// Parameter and moment arrays are always allocated in standard layout.
fn contiguous<F, D: ndarray::Dimension>(a: &mut ndarray::Array<F, D>) -> &mut [F] {
    a.as_slice_mut().expect("parameters are stored contiguously")
}

#[inline]
fn relu<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<F = f64> {
    pub rate: F,
    pub beta1: F,
    pub beta2: F,
    pub epsilon: F,
    steps: u64,
    first: Vec<Layer<F>>,
    second: Vec<Layer<F>>,
}

impl<F: Scalar> Adam<F> {
    /// Rate 0.001, decays 0.9 / 0.999, epsilon 1e-8.
    pub fn new(net: &DenseNet<F>) -> Self {
        Self::with_rate(net, F::lit(1e-3))
    }

    pub fn with_rate(net: &DenseNet<F>, rate: F) -> Self {
        let zeros = Gradients::zeros_like(net).layers;
        Adam {
            rate,
            beta1: F::lit(0.9),
            beta2: F::lit(0.999),
            epsilon: F::lit(1e-8),
            steps: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    // Moments of inactive units decay geometrically into the subnormal
    // range, where arithmetic is very slow.
    fn flush_subnormal_moments(&mut self) {
        let tiny = F::min_positive_value();
        for layer in self.first.iter_mut().chain(self.second.iter_mut()) {
            for x in layer.params_mut() {
                if x.abs() < tiny {
                    *x = F::zero();
                }
            }
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut DenseNet<F>, grads: &Gradients<F>) -> Result<()> {
        if grads.layers.len() != net.layers.len()
            || grads
                .layers
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len())
            || self.first.len() != net.layers.len()
        {
            return Err(Error::Shape("gradient does not match the network".into()));
        }
        self.steps += 1;
        let t = i32::try_from(self.steps).unwrap_or(i32::MAX);
        let c1 = F::one() - self.beta1.powi(t);
        let c2 = F::one() - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let step_size = self.rate / c1;
        let inv_c2 = F::one() / c2;
        let update = |p: &mut [F], m: &mut [F], v: &mut [F], g: &[F]| {
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                *p -= step_size * *m / ((*v * inv_c2).sqrt() + eps);
            }
        };
        for (((layer, m), v), g) in net.layers.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(&grads.layers) {
            let gw = g.weights.as_standard_layout();
            update(
                contiguous(&mut layer.weights),
                contiguous(&mut m.weights),
                contiguous(&mut v.weights),
                gw.as_slice().expect("standard layout"),
            );
            update(
                contiguous(&mut layer.bias),
                contiguous(&mut m.bias),
                contiguous(&mut v.bias),
                g.bias.as_slice().expect("owned vector"),
            );
        }
        if self.steps.is_multiple_of(FLUSH_PERIOD) {
            self.flush_subnormal_moments();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::<f64>::zeros(&[2, 4, 3]).unwrap();
        assert_eq!(net.forward(&[0.3, -2.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(net.param_count(), 3 * 4 + 5 * 3);
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn identity_chain() {
        let mut net = DenseNet::<f64>::zeros(&[1, 1, 1]).unwrap();
        net.set_params_flat(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(net.forward(&[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn adam_zero_gradient_and_first_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = DenseNet::<f64>::new(&[2, 3, 2], &mut rng).unwrap();
        let before = net.clone();
        let mut opt = Adam::new(&net);
        let zero = Gradients::zeros_like(&net);
        opt.step(&mut net, &zero).unwrap();
        assert_eq!(net, before);
        assert_eq!(opt.steps(), 1);

        let mut opt = Adam::new(&net);
        let mut g = zero.clone();
        g.layers[0].weights[[0, 0]] = 0.37;
        g.layers[1].bias[1] = -5.0;
        opt.step(&mut net, &g).unwrap();
        let dw = net.layers()[0].weights[[0, 0]] - before.layers()[0].weights[[0, 0]];
        let db = net.layers()[1].bias[1] - before.layers()[1].bias[1];
        assert!((dw + 1e-3).abs() < 1e-7, "{dw}");
        assert!((db - 1e-3).abs() < 1e-7, "{db}");
    }

    #[test]
    fn perfect_targets_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::<f64>::new(&[2, 5, 2], &mut rng).unwrap();
        let inputs = array![[0.1, 0.9], [0.5, 0.2]];
        let out = net.forward_batch(inputs.view()).unwrap();
        let batch = Batch::new(inputs, array![out[[0, 1]], out[[1, 0]]], vec![1, 0]).unwrap();
        let (loss, grads) = net.backward_mse(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn batch_shape_errors() {
        assert!(Batch::<f64>::new(Array2::zeros((2, 2)), Array1::zeros(1), vec![0, 0]).is_err());
        let net = DenseNet::<f64>::zeros(&[2, 2]).unwrap();
        let batch = Batch::new(Array2::zeros((1, 2)), Array1::zeros(1), vec![2]).unwrap();
        assert!(net.backward_mse(&batch).is_err());
    }

    #[test]
    fn copy_requires_matching_dims() {
        let a = DenseNet::<f64>::zeros(&[2, 3, 2]).unwrap();
        let mut b = DenseNet::<f64>::zeros(&[2, 4, 2]).unwrap();
        assert!(copy_params(&a, &mut b).is_err());
    }
}

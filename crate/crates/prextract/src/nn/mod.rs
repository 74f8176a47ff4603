//! Minimal differentiable network stack: dense/conv layers with manual
//! backpropagation, softmax cross-entropy, SGD, finite-difference gradient
//! verification and a versioned binary checkpoint format.
//!
//! Everything runs in `f64`; architectures are small registry entries
//! ("cnn-s", "mlp-s") sized for CPU experiments.

pub mod arch;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod tensor;

pub use arch::Architecture;
pub use layer::Layer;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Named map of parameter tensors. Iteration order is the sorted key
/// order, which every serialization and update path relies on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Add `data` into the entry `name`, creating a zero tensor first if
    /// absent. Used by backward passes that accumulate over layers.
    pub fn accumulate(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        match self.entries.get_mut(name) {
            Some(t) => {
                if t.shape() != shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        context: format!("ParamSet::accumulate('{name}')"),
                        expected: t.shape().to_vec(),
                        got: shape,
                    });
                }
                for (a, b) in t.data_mut().iter_mut().zip(&data) {
                    *a += b;
                }
                Ok(())
            }
            None => self.insert(name, Tensor::new(shape, data)?),
        }
    }

    /// Keep only parameters whose name passes the filter.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Copy every entry of `other` over the matching entries of `self`.
    pub fn overwrite_from(&mut self, other: &ParamSet) -> Result<()> {
        for (name, tensor) in other.iter() {
            let slot = self.get_mut(name)?;
            if slot.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    context: format!("ParamSet::overwrite_from('{name}')"),
                    expected: slot.shape().to_vec(),
                    got: tensor.shape().to_vec(),
                });
            }
            *slot = tensor.clone();
        }
        Ok(())
    }
}

/// Hyper-parameters of one supervised training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        // epochs = 0 is legal: it means "return the initialization".
        Ok(())
    }
}

/// An architecture bound to a concrete parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub params: ParamSet,
}

/// Cached per-layer inputs from one forward pass, consumed by `backward`.
pub struct ForwardTrace {
    /// `activations[i]` is the input to layer `i`; the final element is
    /// the network output.
    activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }
}

impl Network {
    /// Fresh fan-in-scaled uniform initialization: weights drawn from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&arch, &mut rng)?;
        Ok(Network { arch, params })
    }

    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(batch)?.output().clone())
    }

    pub fn forward_trace(&self, batch: &Tensor) -> Result<ForwardTrace> {
        if batch.shape().len() < 2 || batch.shape()[1..] != *self.arch.input_shape {
            return Err(Error::ShapeMismatch {
                context: format!("network '{}' input", self.arch.name),
                expected: self.arch.input_shape.clone(),
                got: batch.shape().to_vec(),
            });
        }
        let mut activations = Vec::with_capacity(self.arch.layers.len() + 1);
        activations.push(batch.clone());
        for spec in &self.arch.layers {
            let out = spec
                .layer
                .forward(&spec.name, &self.params, activations.last().unwrap())?;
            out.assert_finite(&format!("layer '{}' output", spec.name))?;
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Backpropagate `grad_out` (gradient of a batch-summed scalar loss
    /// w.r.t. the network output). Returns parameter gradients summed over
    /// the batch and the gradient w.r.t. the input batch.
    pub fn backward(&self, trace: &ForwardTrace, grad_out: &Tensor) -> Result<(ParamSet, Tensor)> {
        let expected = trace.output().shape();
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                context: "Network::backward grad_out".into(),
                expected: expected.to_vec(),
                got: grad_out.shape().to_vec(),
            });
        }
        let mut grads = ParamSet::new();
        let mut g = grad_out.clone();
        for (i, spec) in self.arch.layers.iter().enumerate().rev() {
            g = spec
                .layer
                .backward(&spec.name, &self.params, &trace.activations[i], &g, &mut grads)?;
        }
        // Parameter-free layers contribute nothing; make sure every
        // parameterized layer has a gradient entry even if all-zero.
        for name in self.params.names() {
            if !grads.contains(name) {
                grads.accumulate(name, self.params.get(name)?.shape().to_vec(), vec![
                    0.0;
                    self.params.get(name)?.len()
                ])?;
            }
        }
        Ok((grads, g))
    }

    /// Softmax posteriors per sample, rows summing to 1.
    pub fn predict_posterior(&self, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward(batch)?;
        Ok(loss::softmax_rows(&logits))
    }
}

fn init_params(arch: &Architecture, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for spec in &arch.layers {
        match spec.layer {
            Layer::Dense { input, output } => {
                let bound = 1.0 / (input as f64).sqrt();
                let w: Vec<f64> = (0..output * input)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                params.insert(format!("{}.w", spec.name), Tensor::new(vec![output, input], w)?)?;
                params.insert(format!("{}.b", spec.name), Tensor::zeros(vec![output]))?;
            }
            Layer::Conv2d { in_channels, out_channels, kernel } => {
                let fan_in = in_channels * kernel * kernel;
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w: Vec<f64> = (0..out_channels * fan_in)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                params.insert(
                    format!("{}.w", spec.name),
                    Tensor::new(vec![out_channels, in_channels, kernel, kernel], w)?,
                )?;
                params.insert(format!("{}.b", spec.name), Tensor::zeros(vec![out_channels]))?;
            }
            _ => {}
        }
    }
    Ok(params)
}

/// One SGD step: `p' = p - (lr / batch_effective) * grad`, with `grad`
/// the batch-summed gradient.
pub fn sgd_step(
    params: &ParamSet,
    grads: &ParamSet,
    learning_rate: f64,
    batch_effective: usize,
) -> Result<ParamSet> {
    if batch_effective == 0 {
        return Err(Error::InvalidArgument("sgd_step with empty batch".into()));
    }
    let scale = learning_rate / batch_effective as f64;
    let mut out = ParamSet::new();
    for (name, p) in params.iter() {
        let g = grads.get(name).map_err(|_| {
            Error::InvalidArgument(format!("sgd_step: missing gradient for '{name}'"))
        })?;
        if g.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                context: format!("sgd_step('{name}')"),
                expected: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        let data: Vec<f64> = p
            .data()
            .iter()
            .zip(g.data())
            .map(|(&pv, &gv)| pv - scale * gv)
            .collect();
        out.insert(name.clone(), Tensor::new(p.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::LayerSpec;

    fn tiny_dense() -> Architecture {
        Architecture {
            name: "tiny".into(),
            input_shape: vec![3],
            layers: vec![LayerSpec {
                name: "fc".into(),
                layer: Layer::Dense { input: 3, output: 3 },
            }],
        }
    }

    #[test]
    fn zero_weight_network_gives_zero_logits() {
        let arch = tiny_dense();
        let mut net = Network::init(arch, 0).unwrap();
        let zeros = Tensor::zeros(net.params.get("fc.w").unwrap().shape().to_vec());
        *net.params.get_mut("fc.w").unwrap() = zeros;
        let x = Tensor::new(vec![1, 3], vec![1.0, -2.0, 3.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_weight_network_passes_input_through() {
        let mut net = Network::init(tiny_dense(), 0).unwrap();
        let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        *net.params.get_mut("fc.w").unwrap() = eye;
        let x = Tensor::new(vec![1, 3], vec![0.5, -1.5, 2.0]).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn two_layer_forward_matches_hand_computed_matrix_chain() {
        // Independent oracle: explicit matrix arithmetic, no framework calls.
        let arch = Architecture {
            name: "two".into(),
            input_shape: vec![2],
            layers: vec![
                LayerSpec { name: "a".into(), layer: Layer::Dense { input: 2, output: 2 } },
                LayerSpec { name: "r".into(), layer: Layer::Relu },
                LayerSpec { name: "b".into(), layer: Layer::Dense { input: 2, output: 2 } },
            ],
        };
        let mut net = Network::init(arch, 7).unwrap();
        *net.params.get_mut("a.w").unwrap() =
            Tensor::new(vec![2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        *net.params.get_mut("a.b").unwrap() = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        *net.params.get_mut("b.w").unwrap() =
            Tensor::new(vec![2, 2], vec![1.0, 2.0, -0.5, 0.5]).unwrap();
        *net.params.get_mut("b.b").unwrap() = Tensor::new(vec![2], vec![0.0, 1.0]).unwrap();
        let x = [0.4f64, 0.8];
        // h = relu(A x + a)
        let h0 = (0.5 * x[0] - 1.0 * x[1] + 0.1).max(0.0);
        let h1 = (2.0 * x[0] + 0.25 * x[1] - 0.2).max(0.0);
        let y0 = 1.0 * h0 + 2.0 * h1;
        let y1 = -0.5 * h0 + 0.5 * h1 + 1.0;
        let out = net
            .forward(&Tensor::new(vec![1, 2], x.to_vec()).unwrap())
            .unwrap();
        assert!((out.data()[0] - y0).abs() < 1e-12);
        assert!((out.data()[1] - y1).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::init(tiny_dense(), 42).unwrap();
        let x = Tensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_names_the_network() {
        let net = Network::init(tiny_dense(), 0).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap();
        let err = net.forward(&x).unwrap_err().to_string();
        assert!(err.contains("tiny"), "error should name the offender: {err}");
    }

    #[test]
    fn sgd_zero_gradients_is_identity() {
        let net = Network::init(tiny_dense(), 1).unwrap();
        let mut grads = ParamSet::new();
        for (name, p) in net.params.iter() {
            grads.insert(name.clone(), Tensor::zeros(p.shape().to_vec())).unwrap();
        }
        let updated = sgd_step(&net.params, &grads, 0.5, 4).unwrap();
        assert_eq!(updated, net.params);
    }

    #[test]
    fn sgd_unit_step_subtracts_gradient() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let mut grads = ParamSet::new();
        grads.insert("p", Tensor::new(vec![2], vec![0.5, -1.0]).unwrap()).unwrap();
        let out = sgd_step(&params, &grads, 1.0, 1).unwrap();
        assert_eq!(out.get("p").unwrap().data(), &[0.5, 3.0]);
    }

    #[test]
    fn sgd_hand_computed_batch_update() {
        // eta=0.1, batch 2: p' = p - 0.05 * g
        let mut params = ParamSet::new();
        params.insert("a", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        params.insert("b", Tensor::new(vec![1], vec![-2.0]).unwrap()).unwrap();
        let mut grads = ParamSet::new();
        grads.insert("a", Tensor::new(vec![1], vec![4.0]).unwrap()).unwrap();
        grads.insert("b", Tensor::new(vec![1], vec![-6.0]).unwrap()).unwrap();
        let out = sgd_step(&params, &grads, 0.1, 2).unwrap();
        assert!((out.get("a").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert!((out.get("b").unwrap().data()[0] - (-1.7)).abs() < 1e-15);
    }

    #[test]
    fn sgd_missing_gradient_key_errors() {
        let mut params = ParamSet::new();
        params.insert("p", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        let grads = ParamSet::new();
        assert!(sgd_step(&params, &grads, 0.1, 1).is_err());
    }
}

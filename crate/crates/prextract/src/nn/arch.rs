//! Architecture registry: small CPU-sized networks.
//!
//! `cnn-s` is two valid-padding conv blocks followed by two dense layers;
//! `mlp-s` is three dense layers. Victim and substitute pick independently,
//! so the architecture-mismatch condition of black-box extraction is
//! preserved at desk scale.

use crate::error::{Error, Result};
use crate::nn::layer::Layer;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub layer: Layer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    /// Per-sample input shape (no batch dimension).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Per-sample output shape, validating every layer transition.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for spec in &self.layers {
            shape = spec.layer.output_shape(&spec.name, &shape)?;
        }
        Ok(shape)
    }

    /// Append the layers of `tail`, keeping this architecture's name.
    pub fn chain(mut self, tail: &Architecture) -> Result<Architecture> {
        let out = self.output_shape()?;
        if out != tail.input_shape {
            return Err(Error::ShapeMismatch {
                context: format!("chaining '{}' -> '{}'", self.name, tail.name),
                expected: tail.input_shape.clone(),
                got: out,
            });
        }
        self.layers.extend(tail.layers.iter().cloned());
        Ok(self)
    }
}

pub const ARCH_NAMES: &[&str] = &["cnn-s", "mlp-s"];

/// Full classifier: encoder into `latent_dim` features plus a dense head
/// to `num_classes` logits. Encoder layers are prefixed `enc.`, the head
/// is `head.fc`, so parameter ownership is recoverable from names.
pub fn classifier(
    arch: &str,
    input_shape: &[usize],
    latent_dim: usize,
    num_classes: usize,
) -> Result<Architecture> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "classifier needs at least 2 classes, got {num_classes}"
        )));
    }
    let enc = encoder(arch, input_shape, latent_dim)?;
    let head = Architecture {
        name: "head".into(),
        input_shape: vec![latent_dim],
        layers: vec![LayerSpec {
            name: "head.fc".into(),
            layer: Layer::Dense { input: latent_dim, output: num_classes },
        }],
    };
    let mut full = enc.chain(&head)?;
    full.name = arch.to_string();
    Ok(full)
}

/// Encoder half of the registry architectures: maps an input image to a
/// `latent_dim` feature vector (post-ReLU).
pub fn encoder(arch: &str, input_shape: &[usize], latent_dim: usize) -> Result<Architecture> {
    if input_shape.len() != 3 {
        return Err(Error::InvalidArgument(format!(
            "expected (channels, height, width) input shape, got {input_shape:?}"
        )));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let layers = match arch {
        "cnn-s" => {
            let mut a = Architecture {
                name: format!("enc-{arch}"),
                input_shape: input_shape.to_vec(),
                layers: vec![
                    spec("enc.conv1", Layer::Conv2d { in_channels: c, out_channels: 8, kernel: 3 }),
                    spec("enc.relu1", Layer::Relu),
                    spec("enc.pool1", Layer::MaxPool2),
                    spec("enc.conv2", Layer::Conv2d { in_channels: 8, out_channels: 16, kernel: 3 }),
                    spec("enc.relu2", Layer::Relu),
                    spec("enc.pool2", Layer::MaxPool2),
                    spec("enc.flat", Layer::Flatten),
                ],
            };
            let flat = a.output_shape()?[0];
            a.layers.push(spec("enc.fc", Layer::Dense { input: flat, output: latent_dim }));
            a.layers.push(spec("enc.relu3", Layer::Relu));
            return Ok(a);
        }
        "mlp-s" => {
            let flat = c * h * w;
            vec![
                spec("enc.flat", Layer::Flatten),
                spec("enc.fc1", Layer::Dense { input: flat, output: 128 }),
                spec("enc.relu1", Layer::Relu),
                spec("enc.fc2", Layer::Dense { input: 128, output: latent_dim }),
                spec("enc.relu2", Layer::Relu),
            ]
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown architecture '{other}', known: {ARCH_NAMES:?}"
            )))
        }
    };
    Ok(Architecture {
        name: format!("enc-{arch}"),
        input_shape: input_shape.to_vec(),
        layers,
    })
}

/// Linear-ish decoder used by autoencoder pretraining: latent back to a
/// flat image, reshaped by the caller.
pub fn decoder(latent_dim: usize, input_shape: &[usize]) -> Result<Architecture> {
    let flat: usize = input_shape.iter().product();
    Ok(Architecture {
        name: "dec".into(),
        input_shape: vec![latent_dim],
        layers: vec![
            spec("dec.fc1", Layer::Dense { input: latent_dim, output: 128 }),
            spec("dec.relu1", Layer::Relu),
            spec("dec.fc2", Layer::Dense { input: 128, output: flat }),
        ],
    })
}

/// Two-layer projection head for contrastive pretraining; discarded from
/// the returned encoder artifact.
pub fn projection_head(latent_dim: usize) -> Architecture {
    Architecture {
        name: "proj".into(),
        input_shape: vec![latent_dim],
        layers: vec![
            spec("proj.fc1", Layer::Dense { input: latent_dim, output: latent_dim }),
            spec("proj.relu1", Layer::Relu),
            spec("proj.fc2", Layer::Dense { input: latent_dim, output: latent_dim }),
        ],
    }
}

fn spec(name: &str, layer: Layer) -> LayerSpec {
    LayerSpec { name: name.into(), layer }
}

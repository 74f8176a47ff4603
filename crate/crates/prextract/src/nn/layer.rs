use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;
use crate::nn::ParamSet;
use serde::{Deserialize, Serialize};

/// A layer kind plus its fixed hyper-shape. Parameters live in a
/// [`ParamSet`] keyed by `"{layer_name}.w"` / `"{layer_name}.b"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense { input: usize, output: usize },
    /// Valid-padding stride-1 square convolution.
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    /// 2x2 stride-2 max pooling; trailing odd row/column is dropped.
    MaxPool2,
    Flatten,
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    /// Per-sample output shape, validating the per-sample input shape.
    pub fn output_shape(&self, name: &str, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: Vec<usize>| Error::ShapeMismatch {
            context: format!("layer '{name}'"),
            expected,
            got: input.to_vec(),
        };
        match self {
            Layer::Dense { input: n_in, output } => {
                if input != [*n_in] {
                    return Err(mismatch(vec![*n_in]));
                }
                Ok(vec![*output])
            }
            Layer::Conv2d { in_channels, out_channels, kernel } => {
                if input.len() != 3 || input[0] != *in_channels {
                    return Err(mismatch(vec![*in_channels, 0, 0]));
                }
                let (h, w) = (input[1], input[2]);
                if h < *kernel || w < *kernel {
                    return Err(Error::InvalidArgument(format!(
                        "layer '{name}': input {h}x{w} smaller than kernel {kernel}"
                    )));
                }
                Ok(vec![*out_channels, h - kernel + 1, w - kernel + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2 => {
                if input.len() != 3 {
                    return Err(mismatch(vec![0, 0, 0]));
                }
                if input[1] < 2 || input[2] < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "layer '{name}': input {}x{} too small for 2x2 pooling",
                        input[1], input[2]
                    )));
                }
                Ok(vec![input[0], input[1] / 2, input[2] / 2])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, name: &str, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        let batch = input.shape()[0];
        let out_shape = self.output_shape(name, &input.shape()[1..])?;
        match self {
            Layer::Dense { input: n_in, output } => {
                let w = params.get(&format!("{name}.w"))?;
                let b = params.get(&format!("{name}.b"))?;
                let (wd, bd, xd) = (w.data(), b.data(), input.data());
                let mut out = vec![0.0; batch * output];
                for bi in 0..batch {
                    let x = &xd[bi * n_in..(bi + 1) * n_in];
                    for o in 0..*output {
                        let row = &wd[o * n_in..(o + 1) * n_in];
                        let mut acc = bd[o];
                        for i in 0..*n_in {
                            acc += row[i] * x[i];
                        }
                        out[bi * output + o] = acc;
                    }
                }
                Tensor::new(prepend(batch, &out_shape), out)
            }
            Layer::Conv2d { in_channels, out_channels, kernel } => {
                let w = params.get(&format!("{name}.w"))?;
                let b = params.get(&format!("{name}.b"))?;
                let (ic, oc, k) = (*in_channels, *out_channels, *kernel);
                let (h, win) = (input.shape()[2], input.shape()[3]);
                let (oh, ow) = (h - k + 1, win - k + 1);
                let (wd, bd, xd) = (w.data(), b.data(), input.data());
                let mut out = vec![0.0; batch * oc * oh * ow];
                for bi in 0..batch {
                    let xb = &xd[bi * ic * h * win..(bi + 1) * ic * h * win];
                    let ob = &mut out[bi * oc * oh * ow..(bi + 1) * oc * oh * ow];
                    for o in 0..oc {
                        let bias = bd[o];
                        for y in 0..oh {
                            for x in 0..ow {
                                let mut acc = bias;
                                for c in 0..ic {
                                    let xc = &xb[c * h * win..(c + 1) * h * win];
                                    let wk = &wd[(o * ic + c) * k * k..(o * ic + c + 1) * k * k];
                                    for ky in 0..k {
                                        let xr = &xc[(y + ky) * win + x..(y + ky) * win + x + k];
                                        let wr = &wk[ky * k..(ky + 1) * k];
                                        for kx in 0..k {
                                            acc += wr[kx] * xr[kx];
                                        }
                                    }
                                }
                                ob[(o * oh + y) * ow + x] = acc;
                            }
                        }
                    }
                }
                Tensor::new(prepend(batch, &out_shape), out)
            }
            Layer::Relu => {
                let out: Vec<f64> = input.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::new(prepend(batch, &out_shape), out)
            }
            Layer::MaxPool2 => {
                let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
                let (oh, ow) = (h / 2, w / 2);
                let xd = input.data();
                let mut out = vec![0.0; batch * c * oh * ow];
                for bi in 0..batch {
                    for ci in 0..c {
                        let plane = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        let op = &mut out[(bi * c + ci) * oh * ow..(bi * c + ci + 1) * oh * ow];
                        for y in 0..oh {
                            for x in 0..ow {
                                let mut m = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        m = m.max(plane[(2 * y + dy) * w + 2 * x + dx]);
                                    }
                                }
                                op[y * ow + x] = m;
                            }
                        }
                    }
                }
                Tensor::new(prepend(batch, &out_shape), out)
            }
            Layer::Flatten => {
                input.clone().reshape(prepend(batch, &out_shape))
            }
        }
    }

    /// Given the cached forward input and the gradient w.r.t. this layer's
    /// output (summed over the batch convention), return the gradient
    /// w.r.t. the input and accumulate parameter gradients into `grads`.
    pub fn backward(
        &self,
        name: &str,
        params: &ParamSet,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut ParamSet,
    ) -> Result<Tensor> {
        let batch = input.shape()[0];
        match self {
            Layer::Dense { input: n_in, output } => {
                let w = params.get(&format!("{name}.w"))?;
                let (wd, xd, gd) = (w.data(), input.data(), grad_out.data());
                let mut dw = vec![0.0; output * n_in];
                let mut db = vec![0.0; *output];
                let mut dx = vec![0.0; batch * n_in];
                for bi in 0..batch {
                    let x = &xd[bi * n_in..(bi + 1) * n_in];
                    let g = &gd[bi * output..(bi + 1) * output];
                    let dxb = &mut dx[bi * n_in..(bi + 1) * n_in];
                    for o in 0..*output {
                        let go = g[o];
                        db[o] += go;
                        let dwr = &mut dw[o * n_in..(o + 1) * n_in];
                        let wr = &wd[o * n_in..(o + 1) * n_in];
                        for i in 0..*n_in {
                            dwr[i] += go * x[i];
                            dxb[i] += go * wr[i];
                        }
                    }
                }
                grads.accumulate(&format!("{name}.w"), vec![*output, *n_in], dw)?;
                grads.accumulate(&format!("{name}.b"), vec![*output], db)?;
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Conv2d { in_channels, out_channels, kernel } => {
                let w = params.get(&format!("{name}.w"))?;
                let (ic, oc, k) = (*in_channels, *out_channels, *kernel);
                let (h, win) = (input.shape()[2], input.shape()[3]);
                let (oh, ow) = (h - k + 1, win - k + 1);
                let (wd, xd, gd) = (w.data(), input.data(), grad_out.data());
                let mut dw = vec![0.0; oc * ic * k * k];
                let mut db = vec![0.0; oc];
                let mut dx = vec![0.0; batch * ic * h * win];
                for bi in 0..batch {
                    let xb = &xd[bi * ic * h * win..(bi + 1) * ic * h * win];
                    let gb = &gd[bi * oc * oh * ow..(bi + 1) * oc * oh * ow];
                    let dxb = &mut dx[bi * ic * h * win..(bi + 1) * ic * h * win];
                    for o in 0..oc {
                        for y in 0..oh {
                            for x in 0..ow {
                                let g = gb[(o * oh + y) * ow + x];
                                if g == 0.0 {
                                    continue;
                                }
                                db[o] += g;
                                for c in 0..ic {
                                    let base_x = c * h * win;
                                    let base_w = (o * ic + c) * k * k;
                                    for ky in 0..k {
                                        for kx in 0..k {
                                            let xi = base_x + (y + ky) * win + x + kx;
                                            dw[base_w + ky * k + kx] += g * xb[xi];
                                            dxb[xi] += g * wd[base_w + ky * k + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                grads.accumulate(&format!("{name}.w"), vec![oc, ic, k, k], dw)?;
                grads.accumulate(&format!("{name}.b"), vec![oc], db)?;
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Relu => {
                let dx: Vec<f64> = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::MaxPool2 => {
                let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
                let (oh, ow) = (h / 2, w / 2);
                let (xd, gd) = (input.data(), grad_out.data());
                let mut dx = vec![0.0; batch * c * h * w];
                for bi in 0..batch {
                    for ci in 0..c {
                        let plane = &xd[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        let gp = &gd[(bi * c + ci) * oh * ow..(bi * c + ci + 1) * oh * ow];
                        let dxp = &mut dx[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
                        for y in 0..oh {
                            for x in 0..ow {
                                // route to the first maximum for determinism
                                let mut best = (0, f64::NEG_INFINITY);
                                for dy in 0..2 {
                                    for dx_ in 0..2 {
                                        let idx = (2 * y + dy) * w + 2 * x + dx_;
                                        if plane[idx] > best.1 {
                                            best = (idx, plane[idx]);
                                        }
                                    }
                                }
                                dxp[best.0] += gp[y * ow + x];
                            }
                        }
                    }
                }
                Tensor::new(input.shape().to_vec(), dx)
            }
            Layer::Flatten => grad_out.clone().reshape(input.shape().to_vec()),
        }
    }
}

fn prepend(batch: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(batch);
    s.extend_from_slice(shape);
    s
}

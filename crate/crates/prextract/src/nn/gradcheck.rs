//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::nn::tensor::Tensor;
use crate::nn::ParamSet;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare an analytic parameter gradient against central differences of
/// the scalar loss `f(params)`, perturbing every parameter entry.
pub fn grad_check_params<F>(
    params: &ParamSet,
    analytic: &ParamSet,
    f: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let names: Vec<String> = params.names().cloned().collect();
    for name in &names {
        let n = params.get(name)?.len();
        for i in 0..n {
            let mut plus = params.clone();
            plus.get_mut(name)?.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(name)?.data_mut()[i] -= h;
            let numeric = (f(&plus)? - f(&minus)?) / (2.0 * h);
            let a = analytic.get(name)?.data()[i];
            max_rel = max_rel.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked })
}

/// Compare an analytic input gradient against central differences of the
/// scalar loss `f(input)`.
pub fn grad_check_input<F>(
    input: &Tensor,
    analytic: &Tensor,
    f: F,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut max_rel = 0.0f64;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += h;
        let mut minus = input.clone();
        minus.data_mut()[i] -= h;
        let numeric = (f(&plus)? - f(&minus)?) / (2.0 * h);
        max_rel = max_rel.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked: input.len() })
}

/// Compare an analytic gradient over a flat vector against central
/// differences of `f(vector)`.
pub fn grad_check_vec<F>(x: &[f64], analytic: &[f64], f: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut max_rel = 0.0f64;
    let mut v = x.to_vec();
    for i in 0..x.len() {
        v[i] = x[i] + h;
        let fp = f(&v)?;
        v[i] = x[i] - h;
        let fm = f(&v)?;
        v[i] = x[i];
        max_rel = max_rel.max(rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    Ok(GradCheckReport { max_rel_error: max_rel, checked: x.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{classifier, LayerSpec};
    use crate::nn::layer::Layer;
    use crate::nn::loss::{cross_entropy, cross_entropy_grad};
    use crate::nn::{Architecture, Network};

    fn ce_loss_of(net: &Network, x: &Tensor, y: &Tensor) -> Result<f64> {
        // batch-summed loss to match the backward convention
        let logits = net.forward(x)?;
        Ok(cross_entropy(&logits, y)? * x.shape()[0] as f64)
    }

    fn check_network(net: &Network, x: &Tensor, y: &Tensor, tol: f64) {
        let trace = net.forward_trace(x).unwrap();
        let g = cross_entropy_grad(trace.output(), y).unwrap();
        let (grads, gx) = net.backward(&trace, &g).unwrap();
        let arch = net.arch.clone();
        let report = grad_check_params(
            &net.params,
            &grads,
            |p| ce_loss_of(&Network { arch: arch.clone(), params: p.clone() }, x, y),
            1e-5,
        )
        .unwrap();
        assert!(report.passes(tol), "param grad rel err {}", report.max_rel_error);
        let report = grad_check_input(x, &gx, |xi| ce_loss_of(net, xi, y), 1e-5).unwrap();
        assert!(report.passes(tol), "input grad rel err {}", report.max_rel_error);
    }

    #[test]
    fn linear_model_ce_gradient_matches_finite_differences() {
        let arch = Architecture {
            name: "lin".into(),
            input_shape: vec![4],
            layers: vec![LayerSpec {
                name: "fc".into(),
                layer: Layer::Dense { input: 4, output: 3 },
            }],
        };
        let net = Network::init(arch, 3).unwrap();
        let x = Tensor::new(vec![2, 4], vec![0.1, -0.4, 0.9, 0.3, -0.2, 0.5, 0.0, 0.7]).unwrap();
        let y = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 0.3, 0.7]).unwrap();
        check_network(&net, &x, &y, 1e-4);
    }

    #[test]
    fn conv_dense_net_gradient_matches_finite_differences() {
        let arch = classifier("cnn-s", &[1, 12, 12], 8, 3).unwrap();
        let net = Network::init(arch, 5).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x =
            Tensor::new(vec![2, 1, 12, 12], (0..288).map(|_| rng.gen_range(0.0..1.0)).collect())
                .unwrap();
        let y = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.5, 0.25, 0.25]).unwrap();
        check_network(&net, &x, &y, 1e-3);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut params = ParamSet::new();
        params
            .insert("p", Tensor::new(vec![3], vec![0.5, -0.5, 1.0]).unwrap())
            .unwrap();
        let analytic = {
            let mut g = ParamSet::new();
            g.insert("p", Tensor::zeros(vec![3])).unwrap();
            g
        };
        let report = grad_check_params(&params, &analytic, |_| Ok(7.0), 1e-5).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::tensor::Tensor;

/// Draws every kernel and the similarity weights i.i.d. from `U[-1, 1]`.
/// Biases start at zero and layer projections at the padded identity.
pub fn init_params(arch: &Architecture, rng: &mut impl Rng) -> ModelParams {
    arch.build_params(&mut |shape| Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0)))
}

/// RMSProp with per-scalar running mean of squared gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    pub mean_square: ModelParams,
}

impl RmsProp {
    pub fn new(params: &ModelParams, lr: f64, rho: f64, eps: f64) -> Self {
        Self {
            lr,
            rho,
            eps,
            mean_square: params.zeros_like(),
        }
    }

    /// `v ← ρv + (1−ρ)g²; p ← p − η g / √(v + ε)`. Nothing is modified when
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        for (name, g) in grads.named() {
            if let Some(i) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in {name} at element {i}: {}",
                    g.data()[i]
                )));
            }
        }
        let (lr, rho, eps) = (self.lr, self.rho, self.eps);
        let gs = grads.named();
        for (((_, p), (_, v)), (_, g)) in params
            .named_mut()
            .into_iter()
            .zip(self.mean_square.named_mut())
            .zip(gs)
        {
            for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = rho * *v + (1.0 - rho) * g * g;
                *p -= lr * g / (*v + eps).sqrt();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture::new(&Config::grad_check()).unwrap()
    }

    #[test]
    fn uniform_init_range_and_biases() {
        let a = arch();
        let p = init_params(&a, &mut ChaCha8Rng::seed_from_u64(1));
        for (name, t) in p.named() {
            assert!(t.data().iter().all(|x| (-1.0..=1.0).contains(x)), "{name}");
            if name.ends_with(".b") || name == "sim.c" {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
        assert_eq!(p, init_params(&a, &mut ChaCha8Rng::seed_from_u64(1)));
    }

    #[test]
    fn uniform_draw_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::from_fn(&[1_000_000], |_| rng.gen_range(-1.0..=1.0));
        let mean = t.sum() / t.len() as f64;
        assert!(mean.abs() <= 0.01, "{mean}");
        assert!(t.max_abs() <= 1.0);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let a = arch();
        let mut p = init_params(&a, &mut ChaCha8Rng::seed_from_u64(2));
        let before = p.clone();
        let mut opt = RmsProp::new(&p, 1e-3, 0.9, 1e-8);
        opt.step(&mut p, &before.zeros_like()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let a = arch();
        let mut p = a.build_params(&mut |s| Tensor::zeros(s));
        let ones = p.map(|_, t| Tensor::full(t.shape(), 1.0));
        let mut opt = RmsProp::new(&p, 1e-3, 0.9, 1e-8);
        let mut last = 0.0;
        for k in 0..200 {
            let before = p.similarity.c.item();
            opt.step(&mut p, &ones).unwrap();
            let delta = before - p.similarity.c.item();
            // closed form: v_k = 1 - 0.9^k
            let v = 1.0 - 0.9f64.powi(k + 1);
            assert!((delta - 1e-3 / (v + 1e-8).sqrt()).abs() < 1e-15);
            last = delta;
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let a = arch();
        let mut p = a.build_params(&mut |s| Tensor::zeros(s));
        let mut g = p.zeros_like();
        g.layers[1].u_r.data_mut()[3] = f64::NAN;
        let before = p.clone();
        let err = RmsProp::new(&p, 1e-3, 0.9, 1e-8).step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("rcn.l2.Ur")), "{err}");
        assert_eq!(p, before);
    }
}

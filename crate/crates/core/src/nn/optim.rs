use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{CorefError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Decay of the squared-gradient average.
    pub rho: f64,
    pub epsilon: f64,
    /// L2 coefficient, applied to weights but not biases.
    pub l2: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            rho: 0.9,
            epsilon: 1e-8,
            l2: 1e-5,
        }
    }
}

/// One RMSProp update over a flat slice. `l2` is folded into the gradient
/// before the accumulator update.
pub fn rmsprop_update(
    theta: &mut [f64],
    grad: &[f64],
    acc: &mut [f64],
    cfg: &OptimizerConfig,
    l2: f64,
) {
    for ((t, &g), a) in theta.iter_mut().zip(grad).zip(acc.iter_mut()) {
        let g = g + l2 * *t;
        *a = cfg.rho * *a + (1.0 - cfg.rho) * g * g;
        *t -= cfg.learning_rate * g / (a.sqrt() + cfg.epsilon);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub config: OptimizerConfig,
    /// Running average of squared gradients, mirroring the parameter shapes.
    pub accumulator: ModelParams,
}

impl RmsProp {
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Self {
        RmsProp {
            config,
            accumulator: params.zeros_like(),
        }
    }

    /// Applies `grads` to every layer accepted by `trainable`. Fails without
    /// touching anything if a gradient entry is not finite.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        for (name, g) in grads.layers() {
            if trainable(&name)
                && !(g.weight.iter().all(|v| v.is_finite()) && g.bias.iter().all(|v| v.is_finite()))
            {
                return Err(CorefError::NonFiniteGradient(name));
            }
        }
        let cfg = self.config;
        for (((name, p), (_, g)), (_, a)) in params
            .layers_mut()
            .into_iter()
            .zip(grads.layers())
            .zip(self.accumulator.layers_mut())
        {
            if !trainable(&name) {
                continue;
            }
            rmsprop_update(
                p.weight.as_slice_mut().expect("contiguous"),
                g.weight.as_slice().expect("contiguous"),
                a.weight.as_slice_mut().expect("contiguous"),
                &cfg,
                cfg.l2,
            );
            rmsprop_update(
                p.bias.as_slice_mut().expect("contiguous"),
                g.bias.as_slice().expect("contiguous"),
                a.bias.as_slice_mut().expect("contiguous"),
                &cfg,
                0.0,
            );
        }
        params.quantize();
        self.accumulator.quantize();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: lr,
            rho: 0.9,
            epsilon: 1e-8,
            l2: 0.0,
        }
    }

    #[test]
    fn single_scalar_step() {
        let (mut t, mut a) = ([1.0], [0.0]);
        rmsprop_update(&mut t, &[1.0], &mut a, &cfg(0.1), 0.0);
        let expected = 1.0 - 0.1 / (0.1f64.sqrt() + 1e-8);
        assert!((t[0] - expected).abs() < 1e-15);
        assert!((t[0] - 0.6838).abs() < 1e-4);
        assert!((a[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn descends_on_square() {
        // f(t) = t^2, f'(t) = 2t
        let (mut t, mut a) = ([1.0], [0.0]);
        let mut prev = 1.0;
        for _ in 0..2 {
            let g = [2.0 * t[0]];
            rmsprop_update(&mut t, &g, &mut a, &cfg(0.1), 0.0);
            assert!(t[0] < prev && t[0] > 0.0);
            prev = t[0];
        }
    }

    #[test]
    fn zero_gradient_is_identity() {
        let shape = ModelShape {
            pair_input: 4,
            anaphoricity_input: 3,
            hidden1: 3,
            hidden2: 2,
            output: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::init(&shape, &mut rng);
        let before = p.clone();
        let mut opt = RmsProp::new(cfg(0.01), &p);
        let zeros = p.zeros_like();
        opt.step(&mut p, &zeros, |_| true).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let shape = ModelShape {
            pair_input: 2,
            anaphoricity_input: 2,
            hidden1: 2,
            hidden2: 2,
            output: 2,
        };
        let mut p = ModelParams::zeros(&shape);
        let mut g = p.zeros_like();
        g.na_head.bias[0] = f64::NAN;
        let mut opt = RmsProp::new(cfg(0.01), &p);
        let err = opt.step(&mut p, &g, |_| true).unwrap_err();
        assert!(matches!(err, CorefError::NonFiniteGradient(ref n) if n == "head.na"));
        // frozen layers are not checked
        assert!(opt.step(&mut p, &g, |n| n != "head.na").is_ok());
    }
}

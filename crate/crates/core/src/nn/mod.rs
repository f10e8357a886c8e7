//! Dense layers, activations, and the parameter collection shared by every
//! model in the system.

mod checkpoint;
mod gradcheck;
mod optim;

pub use checkpoint::{
    build_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, LoadedCheckpoint, NamedTensor,
};
pub use gradcheck::{gradient_check, gradient_check_params, GradCheckReport, Probe};
pub use optim::{OptimizerConfig, RmsProp};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CorefError, Result};

/// Fully connected layer computing `W x + b`; `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseLayer {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Uniform in `±sqrt(6 / (in + out))`, zero bias.
    pub fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((output, input), || rng.gen_range(-limit..limit));
        DenseLayer {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(CorefError::Shape {
                tensor: "layer input".into(),
                expected: vec![self.input_dim()],
                found: vec![x.len()],
            });
        }
        let x = ndarray::ArrayView1::from(x);
        Ok((self.weight.dot(&x) + &self.bias).to_vec())
    }

    /// Row-batched forward: `x` is `batch x in`, result is `batch x out`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight.t());
        out += &self.bias;
        out
    }

    /// Accumulates parameter gradients for a batch and returns `dL/dx`.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
        grad: &mut DenseLayer,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &d_out.t().dot(&x);
        grad.bias += &d_out.sum_axis(Axis(0));
        need_input_grad.then(|| d_out.dot(&self.weight))
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`. Returns the
/// per-entry multiplier that was applied.
pub fn dropout<R: Rng>(x: &mut [f64], rate: f64, rng: &mut R, training: bool) -> Vec<f64> {
    if !training || rate == 0.0 {
        return vec![1.0; x.len()];
    }
    assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    x.iter_mut()
        .map(|v| {
            let m = if rng.gen::<f64>() < rate { 0.0 } else { keep };
            *v *= m;
            m
        })
        .collect()
}

/// Dimensions of every tensor in a [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub pair_input: usize,
    pub anaphoricity_input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Size of a mention-pair representation.
    pub output: usize,
}

pub const PAIR: &str = "pair";
pub const ANAPHORICITY: &str = "anaphoricity";
pub const MENTION_HEAD: &str = "head.mention";
pub const NA_HEAD: &str = "head.na";
pub const CLUSTER_HEAD: &str = "head.cluster";

/// Pair encoder, anaphoricity encoder, and the three scoring heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub pair: Vec<DenseLayer>,
    pub anaphoricity: Vec<DenseLayer>,
    pub mention_head: DenseLayer,
    pub na_head: DenseLayer,
    pub cluster_head: DenseLayer,
}

impl ModelParams {
    fn encoder_dims(shape: &ModelShape, input: usize) -> [(usize, usize); 3] {
        [
            (input, shape.hidden1),
            (shape.hidden1, shape.hidden2),
            (shape.hidden2, shape.output),
        ]
    }

    pub fn init<R: Rng>(shape: &ModelShape, rng: &mut R) -> Self {
        let mut enc = |input| {
            Self::encoder_dims(shape, input)
                .iter()
                .map(|&(i, o)| DenseLayer::init(i, o, rng))
                .collect::<Vec<_>>()
        };
        let pair = enc(shape.pair_input);
        let anaphoricity = enc(shape.anaphoricity_input);
        let mut p = ModelParams {
            pair,
            anaphoricity,
            mention_head: DenseLayer::init(shape.output, 1, rng),
            na_head: DenseLayer::init(shape.output, 1, rng),
            cluster_head: DenseLayer::init(2 * shape.output, 1, rng),
        };
        p.quantize();
        p
    }

    pub fn zeros(shape: &ModelShape) -> Self {
        let enc = |input| {
            Self::encoder_dims(shape, input)
                .iter()
                .map(|&(i, o)| DenseLayer::zeros(i, o))
                .collect::<Vec<_>>()
        };
        ModelParams {
            pair: enc(shape.pair_input),
            anaphoricity: enc(shape.anaphoricity_input),
            mention_head: DenseLayer::zeros(shape.output, 1),
            na_head: DenseLayer::zeros(shape.output, 1),
            cluster_head: DenseLayer::zeros(2 * shape.output, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.shape())
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            pair_input: self.pair[0].input_dim(),
            anaphoricity_input: self.anaphoricity[0].input_dim(),
            hidden1: self.pair[0].output_dim(),
            hidden2: self.pair[1].output_dim(),
            output: self.pair[2].output_dim(),
        }
    }

    pub fn layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut v = Vec::with_capacity(9);
        for (i, l) in self.pair.iter().enumerate() {
            v.push((format!("{PAIR}.{i}"), l));
        }
        for (i, l) in self.anaphoricity.iter().enumerate() {
            v.push((format!("{ANAPHORICITY}.{i}"), l));
        }
        v.push((MENTION_HEAD.to_string(), &self.mention_head));
        v.push((NA_HEAD.to_string(), &self.na_head));
        v.push((CLUSTER_HEAD.to_string(), &self.cluster_head));
        v
    }

    pub fn layers_mut(&mut self) -> Vec<(String, &mut DenseLayer)> {
        let mut v = Vec::with_capacity(9);
        for (i, l) in self.pair.iter_mut().enumerate() {
            v.push((format!("{PAIR}.{i}"), l));
        }
        for (i, l) in self.anaphoricity.iter_mut().enumerate() {
            v.push((format!("{ANAPHORICITY}.{i}"), l));
        }
        v.push((MENTION_HEAD.to_string(), &mut self.mention_head));
        v.push((NA_HEAD.to_string(), &mut self.na_head));
        v.push((CLUSTER_HEAD.to_string(), &mut self.cluster_head));
        v
    }

    /// Checks every tensor against `expected`, naming the first mismatch.
    pub fn ensure_shape(&self, expected: &ModelShape) -> Result<()> {
        let reference = ModelParams::zeros(expected);
        for ((name, got), (_, want)) in self.layers().into_iter().zip(reference.layers()) {
            if got.weight.dim() != want.weight.dim() {
                let (r, c) = want.weight.dim();
                let (fr, fc) = got.weight.dim();
                return Err(CorefError::Shape {
                    tensor: format!("{name}.weight"),
                    expected: vec![r, c],
                    found: vec![fr, fc],
                });
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.layers()
            .iter()
            .map(|(_, l)| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Rounds every value to the nearest `f32` so checkpoints are lossless.
    pub fn quantize(&mut self) {
        for (_, l) in self.layers_mut() {
            l.weight.mapv_inplace(|v| v as f32 as f64);
            l.bias.mapv_inplace(|v| v as f32 as f64);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (_, l) in self.layers() {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for (_, l) in self.layers_mut() {
            l.weight.iter_mut().for_each(|v| *v = *it.next().expect("flat length"));
            l.bias.iter_mut().for_each(|v| *v = *it.next().expect("flat length"));
        }
        assert!(it.next().is_none(), "flat vector longer than parameters");
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.layers_mut().into_iter().zip(other.layers()) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let l = DenseLayer {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
        };
        assert_eq!(l.forward(&[3.0, -1.0]).unwrap(), vec![3.0, -1.0]);
    }

    #[test]
    fn hand_arithmetic_layer() {
        let l = DenseLayer {
            weight: ndarray::arr2(&[[1.0, 1.0]]),
            bias: ndarray::arr1(&[0.5]),
        };
        assert_eq!(l.forward(&[1.0, 2.0]).unwrap(), vec![3.5]);
        assert!(l.forward(&[1.0]).is_err());
    }

    #[test]
    fn layer_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = DenseLayer::init(2, 3, &mut rng);
        l.bias = ndarray::arr1(&[0.1, -0.2, 0.3]);
        let x = [0.7, -1.3];
        let got = l.forward(&x).unwrap();
        for o in 0..3 {
            let mut acc = l.bias[o];
            for i in 0..2 {
                acc += l.weight[[o, i]] * x[i];
            }
            assert!((got[o] - acc).abs() < 1e-12);
        }
        let batch = ndarray::arr2(&[[0.7, -1.3]]);
        let b = l.forward_batch(batch.view());
        for o in 0..3 {
            assert!((b[[0, o]] - got[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(relu(&[-1.0, -2.0]), vec![0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut x = vec![1.0, 2.0, 3.0];
        dropout(&mut x, 0.0, &mut rng, true);
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        dropout(&mut x, 0.5, &mut rng, false);
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn dropout_survivor_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut x = vec![1.0; 100_000];
        dropout(&mut x, 0.5, &mut rng, true);
        let survivors = x.iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((survivors - 0.5).abs() < 0.02, "{survivors}");
        assert!(x.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn shape_mismatch_names_tensor() {
        let a = ModelShape {
            pair_input: 10,
            anaphoricity_input: 6,
            hidden1: 8,
            hidden2: 4,
            output: 4,
        };
        let b = ModelShape { output: 3, ..a };
        let p = ModelParams::zeros(&a);
        match p.ensure_shape(&b).unwrap_err() {
            CorefError::Shape { tensor, .. } => assert_eq!(tensor, "pair.2.weight"),
            e => panic!("{e:?}"),
        }
        assert!(p.ensure_shape(&a).is_ok());
    }

    #[test]
    fn flatten_round_trip() {
        let shape = ModelShape {
            pair_input: 5,
            anaphoricity_input: 3,
            hidden1: 4,
            hidden2: 3,
            output: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::init(&shape, &mut rng);
        let mut q = ModelParams::zeros(&shape);
        q.unflatten(&p.flatten());
        assert_eq!(p, q);
    }
}

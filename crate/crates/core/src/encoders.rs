//! Mention-pair, anaphoricity, and cluster-pair encoders.
//!
//! Encoders work on row batches: each row of the input is one `h0`, each row
//! of the output one representation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{CorefError, Result};
use crate::features::InputVector;
use crate::nn::{DenseLayer, ModelParams};
use crate::util::Fingerprint;

/// Dropout rates for one forward pass. `input_mask` restricts input dropout
/// to the flagged coordinates; `None` drops over the whole input.
#[derive(Clone, Copy, Debug, Default)]
pub struct DropoutPlan<'a> {
    pub input_rate: f64,
    pub input_mask: Option<&'a [bool]>,
    pub hidden_rate: f64,
}

/// Everything the backward pass needs from a batched forward pass.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub input: Array2<f64>,
    pub pre: Vec<Array2<f64>>,
    /// Post-ReLU (and post-dropout) activations; the last one is the output.
    pub post: Vec<Array2<f64>>,
    hidden_masks: Vec<Option<Array2<f64>>>,
}

impl EncoderCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("encoder has layers")
    }

    /// Smallest |pre-activation|, the distance to the nearest ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        self.pre
            .iter()
            .flat_map(|p| p.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn relu_pattern(&self, fp: &mut Fingerprint) {
        for p in &self.pre {
            let mut word = 0u64;
            for (i, v) in p.iter().enumerate() {
                word = (word << 1) | (*v > 0.0) as u64;
                if i % 64 == 63 {
                    fp.write(word);
                    word = 0;
                }
            }
            fp.write(word);
        }
    }
}

fn mask_matrix<R: Rng>(rows: usize, cols: usize, rate: f64, cols_mask: Option<&[bool]>, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |(_, c)| {
        if cols_mask.is_some_and(|m| !m[c]) {
            1.0
        } else if rng.gen::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

/// Forward pass through `layers` with `h_i = max(0, W_i h_{i-1} + b_i)`.
/// With `dropout`, inverted dropout is applied to the input and to the output
/// of every hidden layer.
pub fn encode<R: Rng>(
    layers: &[DenseLayer],
    x: ArrayView2<f64>,
    dropout: Option<(&DropoutPlan, &mut R)>,
) -> EncoderCache {
    let mut input = x.to_owned();
    let mut masks = Vec::with_capacity(layers.len());
    let mut rng_slot = dropout;
    if let Some((plan, rng)) = rng_slot.as_mut() {
        if plan.input_rate > 0.0 {
            let m = mask_matrix(input.nrows(), input.ncols(), plan.input_rate, plan.input_mask, *rng);
            input *= &m;
        }
    }
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
    for layer in layers {
        let z = layer.forward_batch(post.last().map_or(input.view(), |p| p.view()));
        let mut h = z.mapv(|v| v.max(0.0));
        let mask = match rng_slot.as_mut() {
            Some((plan, rng)) if plan.hidden_rate > 0.0 => {
                let m = mask_matrix(h.nrows(), h.ncols(), plan.hidden_rate, None, *rng);
                h *= &m;
                Some(m)
            }
            _ => None,
        };
        masks.push(mask);
        pre.push(z);
        post.push(h);
    }
    EncoderCache {
        input,
        pre,
        post,
        hidden_masks: masks,
    }
}

pub fn encode_plain(layers: &[DenseLayer], x: ArrayView2<f64>) -> Array2<f64> {
    encode::<rand::rngs::ThreadRng>(layers, x, None)
        .post
        .pop()
        .expect("encoder has layers")
}

/// Accumulates the gradients of `layers` given `dL/d(output)`.
pub fn encode_backward(
    layers: &[DenseLayer],
    cache: &EncoderCache,
    d_out: Array2<f64>,
    grads: &mut [DenseLayer],
) {
    let mut d = d_out;
    for i in (0..layers.len()).rev() {
        if let Some(m) = &cache.hidden_masks[i] {
            d *= m;
        }
        ndarray::Zip::from(&mut d)
            .and(&cache.pre[i])
            .for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
        let x = if i == 0 { cache.input.view() } else { cache.post[i - 1].view() };
        match layers[i].backward_batch(x, d.view(), &mut grads[i], i > 0) {
            Some(next) => d = next,
            None => break,
        }
    }
}

/// A mention-pair (or anaphoricity) representation with its forward cache.
#[derive(Clone, Debug, PartialEq)]
pub struct MentionPairRep {
    pub values: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
}

fn encode_single(layers: &[DenseLayer], h0: &InputVector, what: &str) -> Result<MentionPairRep> {
    if h0.values.len() != layers[0].input_dim() {
        return Err(CorefError::Shape {
            tensor: format!("{what} input"),
            expected: vec![layers[0].input_dim()],
            found: vec![h0.values.len()],
        });
    }
    let x = ArrayView2::from_shape((1, h0.values.len()), &h0.values).expect("row");
    let cache = encode::<rand::rngs::ThreadRng>(layers, x, None);
    Ok(MentionPairRep {
        values: cache.output().row(0).to_vec(),
        pre_activations: cache.pre.iter().map(|p| p.row(0).to_vec()).collect(),
    })
}

pub fn encode_mention_pair(params: &ModelParams, h0: &InputVector) -> Result<MentionPairRep> {
    encode_single(&params.pair, h0, "pair encoder")
}

pub fn encode_anaphoricity(params: &ModelParams, h0: &InputVector) -> Result<MentionPairRep> {
    encode_single(&params.anaphoricity, h0, "anaphoricity encoder")
}

/// Max-pooled then average-pooled mention-pair representations. `max_source`
/// records, for each of the first `d` coordinates, the row that won the max
/// (lowest row on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPairRep {
    pub values: Vec<f64>,
    pub max_source: Vec<usize>,
}

/// Pools a `k x d` matrix of mention-pair representations into `2d` values.
pub fn encode_cluster_pair(reps: ArrayView2<f64>) -> Result<ClusterPairRep> {
    let (k, d) = reps.dim();
    if k == 0 {
        return Err(CorefError::validation("cluster pair", "no mention pairs to pool"));
    }
    let mut values = vec![0.0; 2 * d];
    let mut max_source = vec![0; d];
    for j in 0..d {
        let col = reps.column(j);
        let mut best = 0;
        for (r, &v) in col.iter().enumerate().skip(1) {
            if v > col[best] {
                best = r;
            }
        }
        values[j] = col[best];
        max_source[j] = best;
    }
    let mean = reps.mean_axis(Axis(0)).expect("non-empty");
    values[d..].copy_from_slice(mean.as_slice().expect("contiguous"));
    Ok(ClusterPairRep { values, max_source })
}

/// Routes `dL/d r_c` back onto the `k x d` pooled matrix: max coordinates to
/// their winning row, average coordinates split evenly.
pub fn cluster_pair_backward(rep: &ClusterPairRep, k: usize, d_rc: &[f64]) -> Array2<f64> {
    let d = rep.max_source.len();
    let mut out = Array2::zeros((k, d));
    let share = 1.0 / k as f64;
    for j in 0..d {
        out[[rep.max_source[j], j]] += d_rc[j];
        let g = d_rc[d + j] * share;
        out.column_mut(j).mapv_inplace(|v| v + g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Layout;
    use crate::nn::ModelShape;
    use ndarray::{arr1, arr2, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(values: Vec<f64>) -> InputVector {
        InputVector {
            values,
            layout: Layout { segments: vec![] },
        }
    }

    fn shape(i: usize, d: usize) -> ModelShape {
        ModelShape {
            pair_input: i,
            anaphoricity_input: i,
            hidden1: d,
            hidden2: d,
            output: d,
        }
    }

    #[test]
    fn zero_weights_give_relu_of_last_bias() {
        let mut p = ModelParams::zeros(&shape(3, 2));
        p.pair[2].bias = arr1(&[0.7, -0.4]);
        p.anaphoricity[2].bias = arr1(&[-1.0, 2.0]);
        let r = encode_mention_pair(&p, &input(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r.values, vec![0.7, 0.0]);
        let r = encode_anaphoricity(&p, &input(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(r.values, vec![0.0, 2.0]);
    }

    #[test]
    fn identity_network_by_hand() {
        let mut p = ModelParams::zeros(&shape(2, 2));
        for l in p.pair.iter_mut().chain(p.anaphoricity.iter_mut()) {
            l.weight = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        }
        p.pair[1].weight = arr2(&[[2.0, 1.0], [1.0, 1.0]]);
        // (1,-1) -> relu -> (1,0) -> [[2,1],[1,1]] -> (2,1) -> identity -> (2,1)
        let r = encode_mention_pair(&p, &input(vec![1.0, -1.0])).unwrap();
        assert_eq!(r.pre_activations[0], vec![1.0, -1.0]);
        assert_eq!(r.values, vec![2.0, 1.0]);
        let r = encode_anaphoricity(&p, &input(vec![1.0, -1.0])).unwrap();
        assert_eq!(r.values, vec![1.0, 0.0]);
    }

    #[test]
    fn output_has_configured_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(&shape(6, 5), &mut rng);
        let r = encode_mention_pair(&p, &input(vec![0.5; 6])).unwrap();
        assert_eq!(r.values.len(), 5);
        assert!(r.values.iter().all(|&v| v >= 0.0));
        assert!(encode_mention_pair(&p, &input(vec![0.5; 5])).is_err());
    }

    #[test]
    fn pooling_by_hand() {
        let reps = arr2(&[[1.0, 0.0], [3.0, 4.0]]);
        let r = encode_cluster_pair(reps.view()).unwrap();
        assert_eq!(r.values, vec![3.0, 4.0, 2.0, 2.0]);
        assert_eq!(r.max_source, vec![1, 1]);
    }

    #[test]
    fn single_pair_pools_to_itself_twice() {
        let reps = arr2(&[[0.5, 1.5, 0.0]]);
        let r = encode_cluster_pair(reps.view()).unwrap();
        assert_eq!(r.values, vec![0.5, 1.5, 0.0, 0.5, 1.5, 0.0]);
        assert!(encode_cluster_pair(Array2::<f64>::zeros((0, 3)).view()).is_err());
    }

    #[test]
    fn duplicated_column_keeps_max_and_ties_go_low() {
        let reps = arr2(&[[1.0, 2.0], [3.0, 0.5]]);
        let dup = arr2(&[[1.0, 2.0], [3.0, 0.5], [3.0, 0.5]]);
        let a = encode_cluster_pair(reps.view()).unwrap();
        let b = encode_cluster_pair(dup.view()).unwrap();
        assert_eq!(a.values[..2], b.values[..2]);
        assert_eq!(b.max_source, vec![1, 0]);
    }

    #[test]
    fn pooling_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let reps = Array2::from_shape_fn((3, 4), |_| rng.gen_range(0.0..1.0));
        let w: Array1<f64> = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
        let f = |r: &Array2<f64>| {
            let p = encode_cluster_pair(r.view()).unwrap();
            p.values.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        let rep = encode_cluster_pair(reps.view()).unwrap();
        let g = cluster_pair_backward(&rep, 3, w.as_slice().unwrap());
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut p = reps.clone();
                p[[i, j]] += h;
                let mut m = reps.clone();
                m[[i, j]] -= h;
                let num = (f(&p) - f(&m)) / (2.0 * h);
                assert!((num - g[[i, j]]).abs() < 1e-8, "({i},{j}) {num} vs {}", g[[i, j]]);
            }
        }
    }

    #[test]
    fn encoder_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = ModelParams::init(&shape(4, 3), &mut rng);
        let x = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
        let loss = |p: &ModelParams| encode_plain(&p.pair, x.view()).sum();
        let cache = encode::<ChaCha8Rng>(&p.pair, x.view(), None);
        let mut g = p.zeros_like();
        encode_backward(&p.pair, &cache, Array2::ones((2, 3)), &mut g.pair);
        let h = 1e-6;
        for l in 0..3 {
            let (r, c) = p.pair[l].weight.dim();
            for i in 0..r {
                for j in 0..c {
                    let mut a = p.clone();
                    a.pair[l].weight[[i, j]] += h;
                    let mut b = p.clone();
                    b.pair[l].weight[[i, j]] -= h;
                    let num = (loss(&a) - loss(&b)) / (2.0 * h);
                    assert!((num - g.pair[l].weight[[i, j]]).abs() < 1e-6);
                }
            }
        }
    }
}

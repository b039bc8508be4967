//! Time-conditioned vector field `v(x, t)`: a three-layer ReLU perceptron on
//! the concatenated input `[x; t]`, with a hand-written reverse pass.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `outputs × inputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn apply(&self, input: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&input) + &self.bias
    }

    fn apply_batch(&self, input: ArrayView2<f64>) -> Array2<f64> {
        input.dot(&self.weights.t()) + &self.bias
    }
}

/// Weights and biases of the field, `(d + 1) → h → h → d`.
///
/// The same type doubles as the container for parameter gradients and for
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldParams {
    pub d: usize,
    pub h: usize,
    pub seed: u64,
    pub layers: [Layer; 3],
}

/// Cached intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array1<f64>,
    pre1: Array1<f64>,
    act1: Array1<f64>,
    pre2: Array1<f64>,
    act2: Array1<f64>,
}

impl ForwardTrace {
    /// The concatenated network input `[x; t]`.
    pub fn input(&self) -> ArrayView1<'_, f64> {
        self.input.view()
    }
}

/// Forward intermediates for a batch, one row per sample.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    pub(crate) input: Array2<f64>,
    pre1: Array2<f64>,
    act1: Array2<f64>,
    pre2: Array2<f64>,
    act2: Array2<f64>,
    pub(crate) output: Array2<f64>,
}

impl BatchTrace {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.output.view()
    }
}

fn relu(z: &Array1<f64>) -> Array1<f64> {
    z.mapv(|v| v.max(0.0))
}

fn relu_batch(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Zeroes `grad` wherever the pre-activation is not strictly positive.
fn relu_mask<D: ndarray::Dimension>(grad: &mut ndarray::Array<f64, D>, pre: &ndarray::Array<f64, D>) {
    Zip::from(grad).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Hidden width used for a given ambient dimension: 128 in the plane and
/// `min(256, 4d)` in higher dimensions.
pub fn default_hidden(d: usize) -> usize {
    if d <= 2 {
        128
    } else {
        (4 * d).min(256)
    }
}

impl VectorFieldParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            d,
            h,
            seed: 0,
            layers: [Layer::zeros(d + 1, h), Layer::zeros(h, h), Layer::zeros(h, d)],
        }
    }

    /// Same shapes (and metadata), all entries zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.d, self.h);
        z.seed = self.seed;
        z
    }

    /// Uniform fan-in/fan-out initialization with zero biases.
    pub fn init(seed: u64, d: usize, h: usize) -> Result<Self> {
        if d == 0 || h == 0 {
            return Err(Error::InvalidConfig(format!(
                "field dimensions must be positive (d = {d}, h = {h})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(d, h);
        p.seed = seed;
        for layer in p.layers.iter_mut() {
            let scale = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-scale..=scale);
            }
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every scalar in a fixed order: per layer, weights row-major then bias.
    pub fn scalars(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.scalars().all(|v| v.is_finite())
    }

    /// `self += k · other` elementwise.
    pub fn add_scaled(&mut self, k: f64, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(k, &b.weights);
            a.bias.scaled_add(k, &b.bias);
        }
    }

    fn check_input(&self, x: &[f64], t: f64) -> Result<Array1<f64>> {
        check_dim(self.d, x.len())?;
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "field input",
                step: 0,
            });
        }
        let mut input = Array1::zeros(self.d + 1);
        input.slice_mut(s![..self.d]).assign(&ArrayView1::from(x));
        input[self.d] = t;
        Ok(input)
    }

    /// Evaluates `v(x, t)`.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<Array1<f64>> {
        Ok(self.forward(x, t)?.0)
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<(Array1<f64>, ForwardTrace)> {
        let input = self.check_input(x, t)?;
        let [l1, l2, l3] = &self.layers;
        let pre1 = l1.apply(input.view());
        let act1 = relu(&pre1);
        let pre2 = l2.apply(act1.view());
        let act2 = relu(&pre2);
        let v = l3.apply(act2.view());
        Ok((
            v,
            ForwardTrace {
                input,
                pre1,
                act1,
                pre2,
                act2,
            },
        ))
    }

    /// Reverse pass for the scalar `upstream · v`: returns parameter gradients
    /// and the gradient with respect to the input `[x; t]`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<(VectorFieldParams, Array1<f64>)> {
        check_dim(self.d, upstream.len())?;
        check_dim(self.d + 1, trace.input.len())?;
        check_dim(self.h, trace.pre1.len())?;
        let [l1, l2, l3] = &self.layers;
        let g3 = ArrayView1::from(upstream);
        let mut grads = self.zeros_like();

        let outer = |g: ArrayView1<f64>, a: ArrayView1<f64>| {
            let g = g.insert_axis(Axis(1));
            let a = a.insert_axis(Axis(0));
            g.dot(&a)
        };

        grads.layers[2].weights = outer(g3, trace.act2.view());
        grads.layers[2].bias = g3.to_owned();
        let mut g2 = l3.weights.t().dot(&g3);
        relu_mask(&mut g2, &trace.pre2);

        grads.layers[1].weights = outer(g2.view(), trace.act1.view());
        let mut g1 = l2.weights.t().dot(&g2);
        grads.layers[1].bias = g2;
        relu_mask(&mut g1, &trace.pre1);

        grads.layers[0].weights = outer(g1.view(), trace.input.view());
        let input_grad = l1.weights.t().dot(&g1);
        grads.layers[0].bias = g1;
        Ok((grads, input_grad))
    }

    /// Batched forward pass; rows of `xs` are samples, `ts` their times.
    pub fn forward_batch(&self, xs: ArrayView2<f64>, ts: ArrayView1<f64>) -> Result<BatchTrace> {
        check_dim(self.d, xs.ncols())?;
        check_dim(xs.nrows(), ts.len())?;
        let mut input = Array2::zeros((xs.nrows(), self.d + 1));
        input.slice_mut(s![.., ..self.d]).assign(&xs);
        input.column_mut(self.d).assign(&ts);
        let [l1, l2, l3] = &self.layers;
        let pre1 = l1.apply_batch(input.view());
        let act1 = relu_batch(&pre1);
        let pre2 = l2.apply_batch(act1.view());
        let act2 = relu_batch(&pre2);
        let output = l3.apply_batch(act2.view());
        Ok(BatchTrace {
            input,
            pre1,
            act1,
            pre2,
            act2,
            output,
        })
    }

    /// Parameter gradients of `Σᵢ upstreamᵢ · vᵢ` over the batch.
    pub fn backward_batch(&self, trace: &BatchTrace, upstream: ArrayView2<f64>) -> Result<VectorFieldParams> {
        check_dim(trace.output.nrows(), upstream.nrows())?;
        check_dim(self.d, upstream.ncols())?;
        let [_, l2, l3] = &self.layers;
        let mut grads = self.zeros_like();

        grads.layers[2].weights = upstream.t().dot(&trace.act2);
        grads.layers[2].bias = upstream.sum_axis(Axis(0));
        let mut g2 = upstream.dot(&l3.weights);
        relu_mask(&mut g2, &trace.pre2);

        grads.layers[1].weights = g2.t().dot(&trace.act1);
        grads.layers[1].bias = g2.sum_axis(Axis(0));
        let mut g1 = g2.dot(&l2.weights);
        relu_mask(&mut g1, &trace.pre1);

        grads.layers[0].weights = g1.t().dot(&trace.input);
        grads.layers[0].bias = g1.sum_axis(Axis(0));
        Ok(grads)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            d: self.d,
            h: self.h,
            seed: self.seed,
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.outputs(),
                    cols: l.inputs(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |msg: String| Error::InvalidConfig(format!("checkpoint: {msg}"));
        if ck.layers.len() != 3 {
            return Err(bad(format!("expected 3 layers, found {}", ck.layers.len())));
        }
        let mut p = Self::zeros(ck.d, ck.h);
        p.seed = ck.seed;
        for (i, (layer, stored)) in p.layers.iter_mut().zip(&ck.layers).enumerate() {
            let (rows, cols) = (layer.outputs(), layer.inputs());
            if stored.rows != rows || stored.cols != cols {
                return Err(bad(format!(
                    "layer {i} is {}x{}, expected {rows}x{cols}",
                    stored.rows, stored.cols
                )));
            }
            if stored.weights.len() != rows * cols || stored.bias.len() != rows {
                return Err(bad(format!("layer {i} has the wrong number of entries")));
            }
            layer.weights =
                Array2::from_shape_vec((rows, cols), stored.weights.clone()).map_err(|e| bad(e.to_string()))?;
            layer.bias = Array1::from(stored.bias.clone());
        }
        if !p.all_finite() {
            return Err(bad("non-finite entry".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

/// On-disk checkpoint: weights are stored row-major per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub d: usize,
    pub h: usize,
    pub seed: u64,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn randomized(seed: u64, d: usize, h: usize) -> VectorFieldParams {
        let mut p = VectorFieldParams::init(seed, d, h).unwrap();
        // non-zero biases so every parameter is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in p.layers.iter_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    #[test]
    fn init_shapes_and_determinism() {
        let p = VectorFieldParams::init(0, 2, 128).unwrap();
        let shapes: Vec<_> = p.layers.iter().map(|l| l.weights.dim()).collect();
        assert_eq!(shapes, vec![(128, 3), (128, 128), (2, 128)]);
        assert_eq!(p, VectorFieldParams::init(0, 2, 128).unwrap());
        assert_ne!(p, VectorFieldParams::init(1, 2, 128).unwrap());
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let bound = (6.0f64 / 131.0).sqrt();
        assert!(p.layers[0].weights.iter().all(|w| w.abs() <= bound));

        let hd = VectorFieldParams::init(0, 100, default_hidden(100)).unwrap();
        assert_eq!(hd.layers[0].weights.dim(), (256, 101));
        assert_eq!(default_hidden(10), 40);
        assert!(VectorFieldParams::init(0, 0, 4).is_err());
    }

    #[test]
    fn zero_params_give_zero_field() {
        let p = VectorFieldParams::zeros(2, 16);
        assert_eq!(p.eval(&[0.3, -4.0], 0.7).unwrap().to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn last_layer_is_linear() {
        let p = randomized(3, 2, 32);
        let v = p.eval(&[0.4, -0.2], 0.5).unwrap();
        let mut q = p.clone();
        q.layers[2].weights *= 2.0;
        q.layers[2].bias *= 2.0;
        assert_eq!(q.eval(&[0.4, -0.2], 0.5).unwrap(), &v * 2.0);
        assert_eq!(p.eval(&[0.4, -0.2], 0.5).unwrap(), v);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = randomized(0, 2, 8);
        assert!(p.forward(&[f64::NAN, 0.0], 0.1).is_err());
        assert!(p.forward(&[0.0, 0.0], f64::INFINITY).is_err());
        assert!(matches!(p.forward(&[0.0], 0.1), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = randomized(1, 3, 16);
        let (_, trace) = p.forward(&[0.1, 0.2, 0.3], 0.4).unwrap();
        let (g, gin) = p.backward(&trace, &[0.0; 3]).unwrap();
        assert!(g.scalars().all(|&v| v == 0.0));
        assert!(gin.iter().all(|&v| v == 0.0));
        assert!(p.backward(&trace, &[0.0; 2]).is_err());
    }

    #[test]
    fn batch_matches_single_sample_path() {
        let p = randomized(5, 2, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs = Array2::from_shape_fn((7, 2), |_| StandardNormal.sample(&mut rng));
        let ts = Array1::from_shape_fn(7, |_| rng.random::<f64>());
        let up = Array2::from_shape_fn((7, 2), |_| StandardNormal.sample(&mut rng));
        let trace = p.forward_batch(xs.view(), ts.view()).unwrap();
        let batch_grads = p.backward_batch(&trace, up.view()).unwrap();
        let mut acc = p.zeros_like();
        for i in 0..7 {
            let x = xs.row(i).to_vec();
            let (v, tr) = p.forward(&x, ts[i]).unwrap();
            for k in 0..2 {
                assert!((v[k] - trace.output[[i, k]]).abs() < 1e-12);
            }
            let (g, _) = p.backward(&tr, &up.row(i).to_vec()).unwrap();
            acc.add_scaled(1.0, &g);
        }
        for (a, b) in acc.scalars().zip(batch_grads.scalars()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = randomized(11, 2, 16);
        let text = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let q = VectorFieldParams::from_checkpoint(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(p, q);
        let x = [0.25, -1.5];
        let dv = &p.eval(&x, 0.3).unwrap() - &q.eval(&x, 0.3).unwrap();
        assert!(dv.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn checkpoint_shape_errors() {
        let mut ck = randomized(0, 2, 4).to_checkpoint();
        ck.layers[1].rows = 5;
        assert!(VectorFieldParams::from_checkpoint(&ck).is_err());
        let mut ck = randomized(0, 2, 4).to_checkpoint();
        ck.layers.pop();
        assert!(VectorFieldParams::from_checkpoint(&ck).is_err());
    }
}

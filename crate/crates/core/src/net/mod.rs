//! Coordinate MLPs: ReLU layers with a linear head, trained full-batch with Adam.

pub mod adam;
mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::par;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{
    coordinate_loss_gradient, recover_coordinates, train, write_loss_csv, InputSource, Recovery,
    RecoveryConfig, RunConfig, SgInput, TrainMode, TrainRun,
};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Gradients of the mean-squared error.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// `d loss / d input`, when requested.
    pub input: Option<Matrix>,
}

impl MlpModel {
    /// `depth` affine layers: `d_in → hidden → … → hidden → d_out`, He-uniform
    /// weights and zero biases.
    pub fn new(d_in: usize, hidden: usize, depth: usize, d_out: usize, seed: u64) -> Result<Self> {
        if depth == 0 || d_in == 0 || d_out == 0 || (depth > 1 && hidden == 0) {
            return Err(Error::Config(format!(
                "bad MLP shape: d_in={d_in} hidden={hidden} depth={depth} d_out={d_out}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Self::dims_for(d_in, hidden, depth, d_out);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let weight = Matrix::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound));
                Layer {
                    weight,
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    fn dims_for(d_in: usize, hidden: usize, depth: usize, d_out: usize) -> Vec<usize> {
        let mut dims = vec![d_in];
        dims.extend(std::iter::repeat_n(hidden, depth - 1));
        dims.push(d_out);
        dims
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::Config("layer dimensions do not chain".into()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.cols() {
                return Err(Error::Config("bias length differs from layer width".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn d_out(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.d_in()];
        d.extend(self.layers.iter().map(|l| l.weight.cols()));
        d
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub(crate) fn param_shapes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice().len(), l.bias.len()])
            .collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d_in() {
            return Err(Error::LengthMismatch {
                left: x.cols(),
                right: self.d_in(),
            });
        }
        Ok(())
    }

    /// Output of every layer (ReLU applied to all but the last).
    fn forward_cache(&self, x: &Matrix) -> Vec<Matrix> {
        let n = self.layers.len();
        let mut acts: Vec<Matrix> = Vec::with_capacity(n);
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { &acts[k - 1] };
            let mut z = matmul(input, &layer.weight);
            let hidden = k + 1 < n;
            let w = z.cols();
            par::for_each_chunk_mut(z.as_mut_slice(), w, |_, row| {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                    if hidden {
                        *v = v.max(0.0);
                    }
                }
            });
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        Ok(self.forward_cache(x).pop().expect("at least one layer"))
    }

    /// MSE (mean over all `B×M` entries) and its exact gradients.
    pub fn backward(&self, x: &Matrix, targets: &Matrix, want_input: bool) -> Result<Gradients> {
        self.check_input(x)?;
        if targets.rows() != x.rows() || targets.cols() != self.d_out() {
            return Err(Error::LengthMismatch {
                left: targets.rows() * targets.cols(),
                right: x.rows() * self.d_out(),
            });
        }
        let acts = self.forward_cache(x);
        let out = &acts[acts.len() - 1];
        let count = (out.rows() * out.cols()) as f64;
        let mut loss = 0.0;
        let mut delta = Matrix::zeros(out.rows(), out.cols());
        for ((d, y), t) in delta
            .as_mut_slice()
            .iter_mut()
            .zip(out.as_slice())
            .zip(targets.as_slice())
        {
            let r = y - t;
            loss += r * r;
            *d = 2.0 * r / count;
        }
        loss /= count;
        let n = self.layers.len();
        let mut weights = vec![Matrix::zeros(0, 0); n];
        let mut biases = vec![Vec::new(); n];
        let mut input = None;
        for k in (0..n).rev() {
            let a_prev = if k == 0 { x } else { &acts[k - 1] };
            weights[k] = matmul_tn(a_prev, &delta);
            let mut gb = vec![0.0; delta.cols()];
            for i in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                    *g += d;
                }
            }
            biases[k] = gb;
            if k > 0 || want_input {
                let mut back = matmul_nt(&delta, &self.layers[k].weight);
                if k > 0 {
                    let w = back.cols();
                    par::for_each_chunk_mut(back.as_mut_slice(), w, |i, row| {
                        for (v, a) in row.iter_mut().zip(a_prev.row(i)) {
                            if *a <= 0.0 {
                                *v = 0.0;
                            }
                        }
                    });
                    delta = back;
                } else {
                    input = Some(back);
                }
            }
        }
        Ok(Gradients {
            loss,
            weights,
            biases,
            input,
        })
    }
}

impl Gradients {
    pub(crate) fn as_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

/// Mean-squared error between two equally shaped matrices.
pub fn mse(pred: &Matrix, truth: &Matrix) -> f64 {
    let n = pred.as_slice().len() as f64;
    pred.as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

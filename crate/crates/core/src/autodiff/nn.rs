use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter `{name}`");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the tape as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, dropout masks drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Batch mean and biased variance of the pre-normalisation activations.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    pub var: Tensor,
}

/// He-uniform initialisation on fan-in.
pub fn he_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / rows.max(1) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Affine → batch norm → ReLU → dropout → affine.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBlock {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub dropout: f64,
    pub momentum: f64,
    pub eps: f64,
    w1: ParamId,
    b1: ParamId,
    gamma: ParamId,
    beta: ParamId,
    w2: ParamId,
    b2: ParamId,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    stream: u64,
}

impl MlpBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        dropout: f64,
        stream: u64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Shape(format!("{prefix}: zero width")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Validation(format!("{prefix}: dropout {dropout} outside [0,1)")));
        }
        Ok(MlpBlock {
            input,
            hidden,
            output,
            dropout,
            momentum: 0.1,
            eps: 1e-5,
            w1: store.add(format!("{prefix}.w1"), he_uniform(input, hidden, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(1, hidden)),
            gamma: store.add(format!("{prefix}.gamma"), Tensor::filled(1, hidden, 1.0)),
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(1, hidden)),
            w2: store.add(format!("{prefix}.w2"), he_uniform(hidden, output, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(1, output)),
            running_mean: Tensor::zeros(1, hidden),
            running_var: Tensor::filled(1, hidden, 1.0),
            stream,
        })
    }

    /// Returns the pre-activation output and, in train mode, the batch
    /// statistics for [`MlpBlock::update_running`].
    pub fn forward(&self, tape: &mut Tape, params: &Bound, x: Var, mode: Mode) -> Result<(Var, Option<BatchStats>)> {
        let (rows, cols) = tape.value(x).shape();
        if cols != self.input {
            return Err(Error::Shape(format!("MLP expects width {}, got {cols}", self.input)));
        }
        let h = tape.matmul(x, params.var(self.w1));
        let h = tape.add_row(h, params.var(self.b1));
        let (normed, stats) = match mode {
            Mode::Train { .. } => {
                let inv_n = 1.0 / rows.max(1) as f64;
                let sum = tape.sum_rows(h);
                let neg_mean = tape.scale(sum, -inv_n);
                let centered = tape.add_row(h, neg_mean);
                let sq = tape.square(centered);
                let var_sum = tape.sum_rows(sq);
                let var = tape.scale(var_sum, inv_n);
                let shifted = tape.add_const(var, self.eps);
                let inv_std = tape.powf(shifted, -0.5);
                let stats = BatchStats {
                    mean: tape.value(neg_mean).map(|v| -v),
                    var: tape.value(var).clone(),
                };
                (tape.mul_row(centered, inv_std), Some(stats))
            }
            Mode::Eval => {
                let neg_mean = tape.constant(self.running_mean.map(|v| -v));
                let inv_std = tape.constant(self.running_var.map(|v| 1.0 / (v + self.eps).sqrt()));
                let centered = tape.add_row(h, neg_mean);
                (tape.mul_row(centered, inv_std), None)
            }
        };
        let scaled = tape.mul_row(normed, params.var(self.gamma));
        let shifted = tape.add_row(scaled, params.var(self.beta));
        let mut a = tape.relu(shifted);
        if let Mode::Train { seed } = mode {
            if self.dropout > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(self.stream);
                let keep = 1.0 / (1.0 - self.dropout);
                let mask = Tensor::from_fn(rows, self.hidden, |_, _| {
                    if rng.random::<f64>() < self.dropout {
                        0.0
                    } else {
                        keep
                    }
                });
                let mask = tape.constant(mask);
                a = tape.mul(a, mask);
            }
        }
        let out = tape.matmul(a, params.var(self.w2));
        Ok((tape.add_row(out, params.var(self.b2)), stats))
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        self.running_mean = self.running_mean.zip_map(&stats.mean, |r, b| (1.0 - m) * r + m * b);
        self.running_var = self.running_var.zip_map(&stats.var, |r, b| (1.0 - m) * r + m * b);
    }

    pub fn param_ids(&self) -> [ParamId; 6] {
        [self.w1, self.b1, self.gamma, self.beta, self.w2, self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.input * self.hidden + 3 * self.hidden + self.hidden * self.output + self.output
    }
}

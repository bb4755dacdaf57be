//! Two-layer perceptron `W2 · relu(W1 · x + b1) + b2` with exact backpropagation.
//!
//! Used both for the learned position-encoding variant and for the grounding
//! projection heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Weights are row-major: `w1` is `hidden x input`, `w2` is `output x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input: usize,
    hidden: usize,
    output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl MlpTrace {
    /// Hidden-layer pre-activations.
    pub fn pre_activations(&self) -> &[f64] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }
}

impl Mlp {
    pub fn from_parts(
        input: usize,
        hidden: usize,
        output: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if w1.len() != hidden * input
            || b1.len() != hidden
            || w2.len() != output * hidden
            || b2.len() != output
        {
            return Err(Error::invalid(format!(
                "MLP parameters do not match shape {input}->{hidden}->{output}"
            )));
        }
        Ok(Mlp {
            input,
            hidden,
            output,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Mlp {
            input,
            hidden,
            output,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    /// Exact identity map on `R^d`, using `relu(x) - relu(-x) = x` with `2d` hidden units.
    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, 2 * d, d);
        for k in 0..d {
            m.w1[k * d + k] = 1.0;
            m.w1[(d + k) * d + k] = -1.0;
            m.w2[k * 2 * d + k] = 1.0;
            m.w2[k * 2 * d + d + k] = -1.0;
        }
        m
    }

    /// Weights drawn uniformly from `±1/sqrt(fan_in)`, biases from `±0.1`.
    pub fn random(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let s1 = 1.0 / (input.max(1) as f64).sqrt();
        let s2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let w1 = draw(hidden * input, s1);
        let b1 = draw(hidden, 0.1);
        let w2 = draw(output * hidden, s2);
        let b2 = draw(output, 0.1);
        Mlp {
            input,
            hidden,
            output,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Mutable access to parameter `k` in the order `w1, b1, w2, b2`.
    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for block in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            if k < block.len() {
                return &mut block[k];
            }
            k -= block.len();
        }
        panic!("parameter index out of range")
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTrace)> {
        if x.len() != self.input {
            return Err(Error::invalid(format!(
                "MLP expects {} inputs, got {}",
                self.input,
                x.len()
            )));
        }
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| dot(&self.w1[h * self.input..(h + 1) * self.input], x) + self.b1[h])
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let out = (0..self.output)
            .map(|o| dot(&self.w2[o * self.hidden..(o + 1) * self.hidden], &hidden) + self.b2[o])
            .collect();
        Ok((out, MlpTrace { pre, hidden }))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dout` into `grads`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, x: &[f64], trace: &MlpTrace, dout: &[f64], grads: &mut MlpGrads) -> Vec<f64> {
        let mut dhidden = vec![0.0; self.hidden];
        for o in 0..self.output {
            let g = dout[o];
            grads.b2[o] += g;
            let row = o * self.hidden;
            for h in 0..self.hidden {
                grads.w2[row + h] += g * trace.hidden[h];
                dhidden[h] += g * self.w2[row + h];
            }
        }
        let mut dx = vec![0.0; self.input];
        for h in 0..self.hidden {
            if trace.pre[h] <= 0.0 {
                continue;
            }
            let g = dhidden[h];
            grads.b1[h] += g;
            let row = h * self.input;
            for i in 0..self.input {
                grads.w1[row + i] += g * x[i];
                dx[i] += g * self.w1[row + i];
            }
        }
        dx
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

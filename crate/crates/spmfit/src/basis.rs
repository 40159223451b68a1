//! Randomized single-layer feature basis with analytic derivatives.
//!
//! The surrogate is a linear combination ĉ(r̂,t̂) = Σ_j w_j·f_j(r̂,t̂) of
//! frozen random features f_j(r̂,t̂) = act_j(w_r·r̂ + w_t·t̂ + b). Nodes are
//! split into three contiguous blocks by activation — sin, SiLU, tanh — so a
//! small genome can steer each block's input-weight distribution separately.
//! Because features are fixed at fit time, the physics-informed loss is
//! linear in the output weights and minimized by one regularized
//! least-squares solve; everything the loss needs (f, ∂f/∂r̂, ∂²f/∂r̂²,
//! ∂f/∂t̂) has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sin,
    Silu,
    Tanh,
}

/// Logistic sigmoid σ(z) = 1/(1 + e^{−z}).
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// All activations in block order.
    pub const ALL: [Activation; 3] = [Activation::Sin, Activation::Silu, Activation::Tanh];

    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Sin => z.sin(),
            Activation::Silu => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative d act/dz.
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Sin => z.cos(),
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    /// Second derivative d² act/dz².
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Sin => -z.sin(),
            Activation::Silu => {
                let s = sigmoid(z);
                s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
        }
    }

    /// Split `n` nodes into three near-equal contiguous blocks
    /// (sin, SiLU, tanh), front-loading remainders.
    pub fn split_blocks(n: usize) -> [usize; 3] {
        let base = n / 3;
        let rem = n % 3;
        [base + usize::from(rem > 0), base + usize::from(rem > 1), base]
    }
}

/// Frozen random feature layer: per-node input weights, biases, and the
/// block layout that assigns activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub w_r: Vec<f64>,
    pub w_t: Vec<f64>,
    pub b: Vec<f64>,
    /// Node counts for the sin, SiLU, and tanh blocks; sums to the basis
    /// size.
    pub blocks: [usize; 3],
}

impl FeatureBasis {
    pub fn new(w_r: Vec<f64>, w_t: Vec<f64>, b: Vec<f64>, blocks: [usize; 3]) -> Result<Self> {
        let n = w_r.len();
        if w_t.len() != n || b.len() != n {
            return Err(Error::Config(format!(
                "basis parameter lengths disagree: w_r {n}, w_t {}, b {}",
                w_t.len(),
                b.len()
            )));
        }
        if blocks.iter().sum::<usize>() != n {
            return Err(Error::Config(format!(
                "block sizes {blocks:?} do not sum to basis size {n}"
            )));
        }
        if n == 0 {
            return Err(Error::Config("basis must have at least one node".into()));
        }
        Ok(Self { w_r, w_t, b, blocks })
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.w_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_r.is_empty()
    }

    /// Activation of node `j` from the block layout.
    pub fn activation(&self, j: usize) -> Activation {
        if j < self.blocks[0] {
            Activation::Sin
        } else if j < self.blocks[0] + self.blocks[1] {
            Activation::Silu
        } else {
            Activation::Tanh
        }
    }

    /// Fill `out` with the feature values f_j(r̂,t̂).
    pub fn features_into(&self, r: f64, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        for j in 0..self.len() {
            let z = self.w_r[j] * r + self.w_t[j] * t + self.b[j];
            out[j] = self.activation(j).eval(z);
        }
    }

    /// Fill the four rows f, ∂f/∂r̂, ∂²f/∂r̂², ∂f/∂t̂ at (r̂,t̂). By the
    /// chain rule on z = w_r·r̂ + w_t·t̂ + b:
    /// f_r = w_r·act′(z), f_rr = w_r²·act″(z), f_t = w_t·act′(z).
    pub fn derivatives_into(
        &self,
        r: f64,
        t: f64,
        f: &mut [f64],
        f_r: &mut [f64],
        f_rr: &mut [f64],
        f_t: &mut [f64],
    ) {
        let n = self.len();
        debug_assert!(f.len() == n && f_r.len() == n && f_rr.len() == n && f_t.len() == n);
        for j in 0..n {
            let act = self.activation(j);
            let wr = self.w_r[j];
            let wt = self.w_t[j];
            let z = wr * r + wt * t + self.b[j];
            let d1 = act.d1(z);
            f[j] = act.eval(z);
            f_r[j] = wr * d1;
            f_rr[j] = wr * wr * act.d2(z);
            f_t[j] = wt * d1;
        }
    }

    /// Evaluate Σ_j weights_j · f_j(r̂,t̂).
    pub fn eval(&self, weights: &[f64], r: f64, t: f64) -> f64 {
        debug_assert_eq!(weights.len(), self.len());
        let mut acc = 0.0;
        for j in 0..self.len() {
            let z = self.w_r[j] * r + self.w_t[j] * t + self.b[j];
            acc += weights[j] * self.activation(j).eval(z);
        }
        acc
    }
}

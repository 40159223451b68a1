//! Evolution strategies: separable NES and full-covariance CMA-ES.
//!
//! Two black-box minimizers drive everything that is not a linear solve:
//!
//! * [`Snes`] — separable natural evolution strategies (Schaul, Glasmachers
//!   & Schmidhuber, "High dimensions and heavy tails for natural evolution
//!   strategies", GECCO 2011). Diagonal covariance, O(d) per sample, suited
//!   to the medium-dimensional meta-optimization of basis distributions.
//! * [`CmaEs`] — covariance matrix adaptation ES with cumulative step-size
//!   adaptation and rank-1 plus rank-μ covariance updates (Hansen, "The CMA
//!   evolution strategy: a tutorial", arXiv:1604.00772). Full covariance,
//!   suited to the low-dimensional, strongly coupled inverse problem.
//!
//! Both follow the ask/tell protocol: `ask` draws one population from the
//! current search distribution, `tell` ranks its fitness values (lower is
//! better) and updates the distribution. All randomness comes from the
//! caller-supplied generator, so runs are reproducible from a seed alone.
//! Both strategies track the best sample ever told ("elitist bookkeeping"):
//! the search distribution may move away from good points, the record does
//! not.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Rank-based utility weights shared by both strategies: `max(0, ln(λ/2+1)
/// - ln(rank))`, normalized to sum to one, then shifted by `-1/λ` so they
/// sum to zero. The best half of the population pulls, the worst half
/// pushes with a uniform small weight.
fn utilities(pop: usize) -> Vec<f64> {
    let half = (pop as f64) / 2.0 + 1.0;
    let raw: Vec<f64> = (1..=pop)
        .map(|rank| (half.ln() - (rank as f64).ln()).max(0.0))
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|u| u / sum - 1.0 / pop as f64).collect()
}

/// Indices of `fitness` sorted ascending (best first). Ties resolve by
/// index, keeping the ordering deterministic.
fn ranking(fitness: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fitness.len()).collect();
    idx.sort_by(|&a, &b| {
        fitness[a]
            .partial_cmp(&fitness[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Separable natural evolution strategy over a diagonal Gaussian.
#[derive(Debug, Clone)]
pub struct Snes {
    mu: Vec<f64>,
    sigma: Vec<f64>,
    pop: usize,
    lr_mu: f64,
    lr_sigma: f64,
    utility: Vec<f64>,
    /// z-scores of the last asked population, pop × d.
    last_z: Vec<Vec<f64>>,
    /// Parameter vectors of the last asked population.
    last_x: Vec<Vec<f64>>,
    best: Option<(Vec<f64>, f64)>,
    generation: usize,
}

impl Snes {
    /// Start a search at `mu0` with per-coordinate spread `sigma0`.
    pub fn new(mu0: &[f64], sigma0: &[f64], pop: usize) -> Result<Self> {
        if mu0.is_empty() || mu0.len() != sigma0.len() {
            return Err(Error::Config(
                "SNES needs matching non-empty mean and spread vectors".into(),
            ));
        }
        if pop < 4 {
            return Err(Error::Config("SNES population must be at least 4".into()));
        }
        if sigma0.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("SNES spreads must be positive".into()));
        }
        let d = mu0.len() as f64;
        Ok(Self {
            mu: mu0.to_vec(),
            sigma: sigma0.to_vec(),
            pop,
            lr_mu: 1.0,
            lr_sigma: (3.0 + d.ln()) / (5.0 * d.sqrt()),
            utility: utilities(pop),
            last_z: Vec::new(),
            last_x: Vec::new(),
            best: None,
            generation: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn population_size(&self) -> usize {
        self.pop
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn spread(&self) -> &[f64] {
        &self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Best `(x, fitness)` ever told.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// Draw one population from the current distribution.
    pub fn ask<R: Rng>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.last_z = (0..self.pop)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        self.last_x = self
            .last_z
            .iter()
            .map(|z| {
                (0..d)
                    .map(|j| self.mu[j] + self.sigma[j] * z[j])
                    .collect()
            })
            .collect();
        self.last_x.clone()
    }

    /// Rank the fitness of the last asked population (lower is better) and
    /// update mean and spreads along the natural gradient.
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.pop || self.last_z.len() != self.pop {
            return Err(Error::Config(
                "tell must follow ask with one fitness per sample".into(),
            ));
        }
        let d = self.dim();
        let order = ranking(fitness);
        for (rank, &k) in order.iter().enumerate() {
            if self.best.as_ref().is_none_or(|(_, f)| fitness[k] < *f) {
                self.best = Some((self.last_x[k].clone(), fitness[k]));
            }
            // Only the top ranks carry non-trivial utility; the loop is
            // cheap enough to keep uniform.
            let _ = rank;
        }

        let mut grad_mu = vec![0.0; d];
        let mut grad_sigma = vec![0.0; d];
        for (rank, &k) in order.iter().enumerate() {
            let u = self.utility[rank];
            let z = &self.last_z[k];
            for j in 0..d {
                grad_mu[j] += u * z[j];
                grad_sigma[j] += u * (z[j] * z[j] - 1.0);
            }
        }
        for j in 0..d {
            self.mu[j] += self.lr_mu * self.sigma[j] * grad_mu[j];
            self.sigma[j] *= (0.5 * self.lr_sigma * grad_sigma[j]).exp();
        }
        self.generation += 1;
        Ok(())
    }
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns of a
/// row-major d×d matrix, `A = V diag(λ) Vᵀ`. Intended for the small (d ≤ 10)
/// covariance matrices of [`CmaEs`]; cost is O(d³) per sweep.
pub fn jacobi_eigen(a: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), d * d, "matrix must be d x d");
    let mut m = a.to_vec();
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m[p * d + q] * m[p * d + q];
            }
        }
        if off.sqrt() < 1e-15 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                // Rotation angle zeroing the (p, q) entry.
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[k * d + p];
                    let mkq = m[k * d + q];
                    m[k * d + p] = c * mkp - s * mkq;
                    m[k * d + q] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[p * d + k];
                    let mqk = m[q * d + k];
                    m[p * d + k] = c * mpk - s * mqk;
                    m[q * d + k] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..d).map(|i| m[i * d + i]).collect();
    (eig, v)
}

/// Covariance matrix adaptation evolution strategy (minimization).
#[derive(Debug, Clone)]
pub struct CmaEs {
    dim: usize,
    pop: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,

    mean: Vec<f64>,
    sigma: f64,
    /// Covariance, row-major symmetric d×d.
    cov: Vec<f64>,
    /// Eigenvectors of `cov` (columns), refreshed every `tell`.
    eigvec: Vec<f64>,
    /// Square roots of the (clamped) eigenvalues.
    eigsqrt: Vec<f64>,
    p_sigma: Vec<f64>,
    p_c: Vec<f64>,

    /// y-vectors of the last asked population (x = mean + σ y).
    last_y: Vec<Vec<f64>>,
    last_x: Vec<Vec<f64>>,
    best: Option<(Vec<f64>, f64)>,
    generation: usize,
}

impl CmaEs {
    /// Start a search centered at `mean0` with global step size `sigma0`
    /// and identity covariance.
    pub fn new(mean0: &[f64], sigma0: f64, pop: usize) -> Result<Self> {
        let d = mean0.len();
        if d == 0 {
            return Err(Error::Config("CMA-ES needs a non-empty mean".into()));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::Config("CMA-ES step size must be positive".into()));
        }
        if pop < 4 {
            return Err(Error::Config("CMA-ES population must be at least 4".into()));
        }
        let mu = pop / 2;
        // Log-rank recombination weights over the better half.
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((mu as f64) + 0.5).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let df = d as f64;
        let c_sigma = (mu_eff + 2.0) / (df + mu_eff + 5.0);
        let d_sigma =
            1.0 + 2.0 * (((mu_eff - 1.0) / (df + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / df) / (df + 4.0 + 2.0 * mu_eff / df);
        let c_1 = 2.0 / ((df + 1.3) * (df + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((df + 2.0) * (df + 2.0) + mu_eff));
        let chi_n = df.sqrt() * (1.0 - 1.0 / (4.0 * df) + 1.0 / (21.0 * df * df));

        let mut cov = vec![0.0; d * d];
        let mut eigvec = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = 1.0;
            eigvec[i * d + i] = 1.0;
        }
        Ok(Self {
            dim: d,
            pop,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: mean0.to_vec(),
            sigma: sigma0,
            cov,
            eigvec,
            eigsqrt: vec![1.0; d],
            p_sigma: vec![0.0; d],
            p_c: vec![0.0; d],
            last_y: Vec::new(),
            last_x: Vec::new(),
            best: None,
            generation: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn population_size(&self) -> usize {
        self.pop
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn step_size(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Best `(x, fitness)` ever told.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(x, f)| (x.as_slice(), *f))
    }

    /// Draw one population: `x = mean + σ B D z`, `z ~ N(0, I)`.
    pub fn ask<R: Rng>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let d = self.dim;
        self.last_y = (0..self.pop)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                (0..d)
                    .map(|i| {
                        (0..d)
                            .map(|j| self.eigvec[i * d + j] * self.eigsqrt[j] * z[j])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        self.last_x = self
            .last_y
            .iter()
            .map(|y: &Vec<f64>| {
                (0..d)
                    .map(|i| self.mean[i] + self.sigma * y[i])
                    .collect()
            })
            .collect();
        self.last_x.clone()
    }

    /// Rank fitness (lower is better), move the mean, update both evolution
    /// paths, adapt covariance (rank-1 + rank-μ) and step size (CSA).
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.pop || self.last_y.len() != self.pop {
            return Err(Error::Config(
                "tell must follow ask with one fitness per sample".into(),
            ));
        }
        let d = self.dim;
        let order = ranking(fitness);
        for &k in &order {
            if self.best.as_ref().is_none_or(|(_, f)| fitness[k] < *f) {
                self.best = Some((self.last_x[k].clone(), fitness[k]));
            }
        }

        // Weighted mean of the μ best steps.
        let mut y_w = vec![0.0; d];
        for (i, &k) in order.iter().take(self.mu).enumerate() {
            for j in 0..d {
                y_w[j] += self.weights[i] * self.last_y[k][j];
            }
        }
        for j in 0..d {
            self.mean[j] += self.sigma * y_w[j];
        }

        // Step-size path uses the whitened step C^{-1/2} y_w = B D^{-1} Bᵀ y_w.
        let mut bty = vec![0.0; d];
        for j in 0..d {
            bty[j] = (0..d).map(|i| self.eigvec[i * d + j] * y_w[i]).sum();
        }
        let mut white = vec![0.0; d];
        for i in 0..d {
            white[i] = (0..d)
                .map(|j| self.eigvec[i * d + j] * bty[j] / self.eigsqrt[j])
                .sum();
        }
        let cs = self.c_sigma;
        let scale = (cs * (2.0 - cs) * self.mu_eff).sqrt();
        for j in 0..d {
            self.p_sigma[j] = (1.0 - cs) * self.p_sigma[j] + scale * white[j];
        }
        let ps_norm = self.p_sigma.iter().map(|x| x * x).sum::<f64>().sqrt();

        // Stall indicator: freeze the rank-1 path while the step-size path
        // is far too long, so a single lucky generation cannot blow up C.
        let denom = 1.0 - (1.0 - cs).powi(2 * (self.generation as i32 + 1));
        let h_sigma = ps_norm / denom.max(1e-12).sqrt()
            < (1.4 + 2.0 / (d as f64 + 1.0)) * self.chi_n;
        let cc = self.c_c;
        let pc_scale = if h_sigma {
            (cc * (2.0 - cc) * self.mu_eff).sqrt()
        } else {
            0.0
        };
        for j in 0..d {
            self.p_c[j] = (1.0 - cc) * self.p_c[j] + pc_scale * y_w[j];
        }

        // Covariance update: decay, rank-1 from the path, rank-μ from the
        // better half. The δ(h_σ) term compensates the frozen path decay.
        let delta = if h_sigma { 0.0 } else { cc * (2.0 - cc) };
        let decay = 1.0 - self.c_1 - self.c_mu + self.c_1 * delta;
        for i in 0..d {
            for j in 0..d {
                let mut cij = decay * self.cov[i * d + j]
                    + self.c_1 * self.p_c[i] * self.p_c[j];
                for (w, &k) in self.weights.iter().zip(order.iter().take(self.mu)) {
                    cij += self.c_mu * w * self.last_y[k][i] * self.last_y[k][j];
                }
                self.cov[i * d + j] = cij;
            }
        }

        // Step-size adaptation.
        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        // Refresh the eigendecomposition (cheap at these dimensions).
        let (eig, vec) = jacobi_eigen(&self.cov, d);
        let floor = eig.iter().cloned().fold(f64::MIN, f64::max).abs() * 1e-14;
        self.eigsqrt = eig.iter().map(|&l| l.max(floor.max(1e-300)).sqrt()).collect();
        self.eigvec = vec;

        self.generation += 1;
        Ok(())
    }
}

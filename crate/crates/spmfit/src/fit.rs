//! Physics-informed least-squares fine-tuning of basis output weights.
//!
//! With frozen features, enforcing the PDE, initial condition, and boundary
//! conditions at collocation points is linear in the output weights w, so the
//! fit is one regularized least-squares problem ‖Aw − b‖² + λ_PI‖w‖² with
//! block-structured rows:
//!
//! ```text
//!   λ_PDE · [ f_t − α(f_rr + (2/r̂)·f_r) ] w = 0      (interior + surface)
//!   λ_IC  · [ f(r̂, 0) ]                   w = λ_IC    (initial value 1)
//!   λ_BC  · [ f_r(0, t̂) ]                 w = 0       (center symmetry)
//!   λ_BC  · [ f_r(1, t̂) ]                 w = λ_BC·β  (surface flux)
//! ```
//!
//! The normal-equations solution w = (λ_PI·I + AᵀA)⁻¹Aᵀb is used when the
//! system is overdetermined; otherwise the push-through identity gives the
//! equivalent dual form w = Aᵀ(λ_PI·I + AAᵀ)⁻¹b.
//!
//! The per-task matrices depend on (α, β) only through scalar combinations,
//! so one [`Fitter`] caches the Gram blocks of its basis once and each task
//! solve costs a single Cholesky factorization:
//!
//! ```text
//!   AᵀA(α) = C₀ + λ_PDE²·(M₁ − α·(G + Gᵀ) + α²·M₃),
//!   M₁ = Φ_tᵀΦ_t,  G = Φ_tᵀS,  M₃ = SᵀS,  S = Φ_rr + (2/r̂)Φ_r,
//!   Aᵀb(β) = λ_IC²·Φ_icᵀ1 + β·λ_BC²·Φ_r1ᵀ1.
//! ```
//!
//! The reported residual ‖Aw − b‖² is always recomputed blockwise from the
//! feature matrices; expanding it through the Gram identity
//! wᵀAᵀAw − 2wᵀAᵀb + bᵀb cancels catastrophically when the fit is good.

use faer::prelude::*;
use faer::Side;
use serde::{Deserialize, Serialize};

use crate::basis::FeatureBasis;
use crate::error::{Error, Result};
use crate::metrics::{label_radii, label_times};

/// Penalty weights of the physics-informed loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    /// Ridge (Tikhonov) strength λ_PI on ‖w‖².
    pub ridge: f64,
    /// PDE residual weight λ_PDE.
    pub pde: f64,
    /// Initial-condition weight λ_IC.
    pub ic: f64,
    /// Boundary-condition weight λ_BC.
    pub bc: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        Self { ridge: 1e-10, pde: 1.0, ic: 10.0, bc: 10.0 }
    }
}

/// Collocation points grouped by the constraint they enforce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    /// (r̂, t̂) points carrying PDE rows: t̂ > 0 and r̂ > 0 (the surface is
    /// included; the center is excluded because of the 2/r̂ factor, where
    /// the symmetry row below constrains the solution instead).
    pub pde: Vec<(f64, f64)>,
    /// Radii carrying initial-condition rows at t̂ = 0.
    pub ic_radii: Vec<f64>,
    /// Times t̂ > 0 carrying the two gradient rows (center and surface).
    pub bc_times: Vec<f64>,
}

impl CollocationSet {
    /// Uniform tensor grid with `n_t` times × `n_r` radii on [0,1]²,
    /// endpoints included, partitioned into constraint groups.
    pub fn tensor(n_t: usize, n_r: usize) -> Result<Self> {
        if n_t < 2 || n_r < 2 {
            return Err(Error::Config(format!(
                "collocation tensor needs n_t ≥ 2 and n_r ≥ 2, got {n_t} × {n_r}"
            )));
        }
        let times: Vec<f64> = (0..n_t).map(|i| i as f64 / (n_t - 1) as f64).collect();
        let radii: Vec<f64> = (0..n_r).map(|j| j as f64 / (n_r - 1) as f64).collect();
        let mut pde = Vec::with_capacity((n_t - 1) * (n_r - 1));
        for &t in &times[1..] {
            for &r in &radii[1..] {
                pde.push((r, t));
            }
        }
        Ok(Self { pde, ic_radii: radii, bc_times: times[1..].to_vec() })
    }

    pub fn n_rows(&self) -> usize {
        self.pde.len() + self.ic_radii.len() + 2 * self.bc_times.len()
    }
}

/// Output weights fitted for one (α, β) task, with the blockwise residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedSolution {
    pub alpha: f64,
    pub beta: f64,
    pub weights: Vec<f64>,
    /// Physics residual ‖Aw − b‖² (ridge term excluded).
    pub lse: f64,
    /// Ridge actually used (may exceed the configured value after a
    /// conditioning retry).
    pub ridge_used: f64,
}

/// Prepared fine-tuner for one basis + collocation set: feature matrices and
/// Gram blocks are built once, after which each task costs one factorization.
pub struct Fitter {
    basis: FeatureBasis,
    weights: PenaltyWeights,
    colloc: CollocationSet,
    // Feature matrices (rows × n).
    phi_t: Mat<f64>,
    s_mat: Mat<f64>,
    phi_ic: Mat<f64>,
    phi_r0: Mat<f64>,
    phi_r1: Mat<f64>,
    // Gram cache.
    m1: Mat<f64>,
    m2: Mat<f64>,
    m3: Mat<f64>,
    c0: Mat<f64>,
    v_ic: Mat<f64>,
    v_r1: Mat<f64>,
    /// Feature values on the 61 × 64 evaluation grid (row-major by time).
    phi_label: Mat<f64>,
}

impl Fitter {
    pub fn new(basis: FeatureBasis, weights: PenaltyWeights, colloc: CollocationSet) -> Result<Self> {
        if weights.ridge < 0.0 || weights.pde <= 0.0 || weights.ic <= 0.0 || weights.bc <= 0.0 {
            return Err(Error::Config(format!("invalid penalty weights {weights:?}")));
        }
        let n = basis.len();
        let n_pde = colloc.pde.len();
        let n_ic = colloc.ic_radii.len();
        let n_bc = colloc.bc_times.len();

        let mut f = vec![0.0; n];
        let mut f_r = vec![0.0; n];
        let mut f_rr = vec![0.0; n];
        let mut f_t = vec![0.0; n];

        let mut phi_t = Mat::<f64>::zeros(n_pde, n);
        let mut s_mat = Mat::<f64>::zeros(n_pde, n);
        for (i, &(r, t)) in colloc.pde.iter().enumerate() {
            basis.derivatives_into(r, t, &mut f, &mut f_r, &mut f_rr, &mut f_t);
            for j in 0..n {
                phi_t[(i, j)] = f_t[j];
                s_mat[(i, j)] = f_rr[j] + 2.0 / r * f_r[j];
            }
        }
        let mut phi_ic = Mat::<f64>::zeros(n_ic, n);
        for (i, &r) in colloc.ic_radii.iter().enumerate() {
            basis.features_into(r, 0.0, &mut f);
            for j in 0..n {
                phi_ic[(i, j)] = f[j];
            }
        }
        let mut phi_r0 = Mat::<f64>::zeros(n_bc, n);
        let mut phi_r1 = Mat::<f64>::zeros(n_bc, n);
        for (i, &t) in colloc.bc_times.iter().enumerate() {
            basis.derivatives_into(0.0, t, &mut f, &mut f_r, &mut f_rr, &mut f_t);
            for j in 0..n {
                phi_r0[(i, j)] = f_r[j];
            }
            basis.derivatives_into(1.0, t, &mut f, &mut f_r, &mut f_rr, &mut f_t);
            for j in 0..n {
                phi_r1[(i, j)] = f_r[j];
            }
        }

        let m1 = phi_t.transpose() * &phi_t;
        let g = phi_t.transpose() * &s_mat;
        let m2 = &g + g.transpose();
        let m3 = s_mat.transpose() * &s_mat;
        let ic2 = weights.ic * weights.ic;
        let bc2 = weights.bc * weights.bc;
        let gram_ic = phi_ic.transpose() * &phi_ic;
        let gram_r0 = phi_r0.transpose() * &phi_r0;
        let gram_r1 = phi_r1.transpose() * &phi_r1;
        let c0 = Mat::from_fn(n, n, |i, j| {
            ic2 * gram_ic[(i, j)] + bc2 * (gram_r0[(i, j)] + gram_r1[(i, j)])
        });
        let ones_ic = Mat::from_fn(n_ic, 1, |_, _| 1.0);
        let ones_bc = Mat::from_fn(n_bc, 1, |_, _| 1.0);
        let v_ic = phi_ic.transpose() * &ones_ic;
        let v_r1 = phi_r1.transpose() * &ones_bc;

        let (ts, rs) = (label_times(), label_radii());
        let mut phi_label = Mat::<f64>::zeros(ts.len() * rs.len(), n);
        for (it, &t) in ts.iter().enumerate() {
            for (ir, &r) in rs.iter().enumerate() {
                basis.features_into(r, t, &mut f);
                let row = it * rs.len() + ir;
                for j in 0..n {
                    phi_label[(row, j)] = f[j];
                }
            }
        }

        Ok(Self {
            basis,
            weights,
            colloc,
            phi_t,
            s_mat,
            phi_ic,
            phi_r0,
            phi_r1,
            m1,
            m2,
            m3,
            c0,
            v_ic,
            v_r1,
            phi_label,
        })
    }

    pub fn basis(&self) -> &FeatureBasis {
        &self.basis
    }

    pub fn penalties(&self) -> PenaltyWeights {
        self.weights
    }

    pub fn collocation(&self) -> &CollocationSet {
        &self.colloc
    }

    /// Solve the regularized physics-informed least squares for one task.
    /// On a failed factorization, retries once with λ_PI = 1e-10 before
    /// reporting a conditioning error.
    pub fn fine_tune(&self, alpha: f64, beta: f64) -> Result<FittedSolution> {
        if !(alpha.is_finite() && alpha > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("fine_tune needs α > 0 and finite β, got α={alpha}, β={beta}")));
        }
        let n = self.basis.len();
        let rows = self.colloc.n_rows();
        let overdetermined = rows >= n;
        let mut ridge = self.weights.ridge;
        for attempt in 0..2 {
            let solved = if overdetermined {
                self.solve_primal(alpha, beta, ridge)
            } else {
                self.solve_dual(alpha, beta, ridge)
            };
            match solved {
                Some(w) => {
                    let lse = self.residual_norm2(&w, alpha, beta);
                    if !lse.is_finite() {
                        return Err(Error::Conditioning { lambda_pi: ridge });
                    }
                    return Ok(FittedSolution { alpha, beta, weights: w, lse, ridge_used: ridge });
                }
                None if attempt == 0 => {
                    log::warn!(
                        "fine_tune factorization failed at λ_PI = {ridge:.3e}; retrying with 1e-10"
                    );
                    ridge = 1e-10;
                }
                None => return Err(Error::Conditioning { lambda_pi: ridge }),
            }
        }
        unreachable!("fine_tune retry loop exits by return");
    }

    /// Primal normal equations: (λ_PI·I + AᵀA) w = Aᵀb from the Gram cache.
    fn solve_primal(&self, alpha: f64, beta: f64, ridge: f64) -> Option<Vec<f64>> {
        let n = self.basis.len();
        let pde2 = self.weights.pde * self.weights.pde;
        let h = Mat::from_fn(n, n, |i, j| {
            let gram = self.c0[(i, j)]
                + pde2 * (self.m1[(i, j)] - alpha * self.m2[(i, j)] + alpha * alpha * self.m3[(i, j)]);
            if i == j {
                gram + ridge
            } else {
                gram
            }
        });
        let ic2 = self.weights.ic * self.weights.ic;
        let bc2 = self.weights.bc * self.weights.bc;
        let atb = Mat::from_fn(n, 1, |i, _| {
            ic2 * self.v_ic[(i, 0)] + beta * bc2 * self.v_r1[(i, 0)]
        });
        let llt = h.llt(Side::Lower).ok()?;
        let w = llt.solve(&atb);
        Some((0..n).map(|i| w[(i, 0)]).collect())
    }

    /// Dual (underdetermined) form via the push-through identity:
    /// w = Aᵀ(λ_PI·I + AAᵀ)⁻¹ b.
    fn solve_dual(&self, alpha: f64, beta: f64, ridge: f64) -> Option<Vec<f64>> {
        let (a, b) = self.assemble_system(alpha, beta);
        let rows = a.nrows();
        let mut k = &a * a.transpose();
        for i in 0..rows {
            k[(i, i)] += ridge;
        }
        let llt = k.llt(Side::Lower).ok()?;
        let y = llt.solve(&b);
        let w = a.transpose() * &y;
        Some((0..a.ncols()).map(|i| w[(i, 0)]).collect())
    }

    /// Materialize the full weighted system (A, b), rows ordered
    /// [PDE, IC, center BC, surface BC]. Used by the dual solve path and by
    /// tests; the primal path never forms A.
    pub fn assemble_system(&self, alpha: f64, beta: f64) -> (Mat<f64>, Mat<f64>) {
        let n = self.basis.len();
        let n_pde = self.colloc.pde.len();
        let n_ic = self.colloc.ic_radii.len();
        let n_bc = self.colloc.bc_times.len();
        let rows = n_pde + n_ic + 2 * n_bc;
        let w = self.weights;
        let mut a = Mat::<f64>::zeros(rows, n);
        let mut b = Mat::<f64>::zeros(rows, 1);
        for i in 0..n_pde {
            for j in 0..n {
                a[(i, j)] = w.pde * (self.phi_t[(i, j)] - alpha * self.s_mat[(i, j)]);
            }
        }
        for i in 0..n_ic {
            for j in 0..n {
                a[(n_pde + i, j)] = w.ic * self.phi_ic[(i, j)];
            }
            b[(n_pde + i, 0)] = w.ic;
        }
        for i in 0..n_bc {
            for j in 0..n {
                a[(n_pde + n_ic + i, j)] = w.bc * self.phi_r0[(i, j)];
            }
        }
        for i in 0..n_bc {
            for j in 0..n {
                a[(n_pde + n_ic + n_bc + i, j)] = w.bc * self.phi_r1[(i, j)];
            }
            b[(n_pde + n_ic + n_bc + i, 0)] = w.bc * beta;
        }
        (a, b)
    }

    /// Blockwise ‖Aw − b‖²: PDE, IC, and the two boundary blocks evaluated
    /// directly from the cached feature matrices.
    fn residual_norm2(&self, w: &[f64], alpha: f64, beta: f64) -> f64 {
        let n = self.basis.len();
        let wm = Mat::from_fn(n, 1, |i, _| w[i]);
        let pw = self.weights;
        let mut acc = 0.0;
        let t_part = &self.phi_t * &wm;
        let s_part = &self.s_mat * &wm;
        for i in 0..t_part.nrows() {
            let r = pw.pde * (t_part[(i, 0)] - alpha * s_part[(i, 0)]);
            acc += r * r;
        }
        let ic_part = &self.phi_ic * &wm;
        for i in 0..ic_part.nrows() {
            let r = pw.ic * (ic_part[(i, 0)] - 1.0);
            acc += r * r;
        }
        let r0_part = &self.phi_r0 * &wm;
        for i in 0..r0_part.nrows() {
            let r = pw.bc * r0_part[(i, 0)];
            acc += r * r;
        }
        let r1_part = &self.phi_r1 * &wm;
        for i in 0..r1_part.nrows() {
            let r = pw.bc * (r1_part[(i, 0)] - beta);
            acc += r * r;
        }
        acc
    }

    /// Surrogate values on the 61 × 64 evaluation grid (row-major by time).
    pub fn predict_labels(&self, sol: &FittedSolution) -> Vec<f64> {
        let wm = Mat::from_fn(sol.weights.len(), 1, |i, _| sol.weights[i]);
        let v = &self.phi_label * &wm;
        (0..v.nrows()).map(|i| v[(i, 0)]).collect()
    }

    /// Largest |∂ĉ/∂r̂(0, t̂)| over the evaluation times — how well the
    /// fitted surrogate honors the center-symmetry condition.
    pub fn center_flux_max(&self, sol: &FittedSolution) -> f64 {
        let n = self.basis.len();
        let mut f = vec![0.0; n];
        let mut f_r = vec![0.0; n];
        let mut f_rr = vec![0.0; n];
        let mut f_t = vec![0.0; n];
        label_times()
            .iter()
            .map(|&t| {
                self.basis.derivatives_into(0.0, t, &mut f, &mut f_r, &mut f_rr, &mut f_t);
                f_r.iter().zip(&sol.weights).map(|(&d, &w)| d * w).sum::<f64>().abs()
            })
            .fold(0.0, f64::max)
    }
}

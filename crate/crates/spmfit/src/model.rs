//! Core domain types: electrode parameters, cell constants, degradation
//! scaling factors, and the nondimensionalization that reduces each
//! electrode's diffusion problem to the pair (α, β).
//!
//! Nondimensional single-particle diffusion on r̂ ∈ [0,1], t̂ ∈ (0,1]:
//!
//! ```text
//!   ∂ĉ/∂t̂ = α (1/r̂²) ∂_r̂ (r̂² ∂_r̂ ĉ),   ĉ(r̂,0) = 1,
//!   ∂_r̂ ĉ(0,t̂) = 0,   ∂_r̂ ĉ(1,t̂) = β,
//! ```
//!
//! with α = D·T/R² and β = J·R/(D·C); concentrations are normalized by the
//! initial value C, so the dimensional field is c = ĉ·C.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which electrode a task belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElectrodeKind {
    Positive,
    Negative,
}

impl ElectrodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElectrodeKind::Positive => "positive",
            ElectrodeKind::Negative => "negative",
        }
    }
}

impl std::fmt::Display for ElectrodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dimensional parameters of one electrode.
///
/// The geometric coefficient folds the specific interfacial area a = 3ε/R
/// into G = R/(3·ε·A·L); it is stored explicitly and kept consistent with the
/// component geometry to a relative 1e-12.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeParams {
    /// Diffusion coefficient D (m²/s).
    pub diffusion: f64,
    /// Particle radius R (m).
    pub radius: f64,
    /// Initial concentration C (mol/m³).
    pub init_conc: f64,
    /// Maximum concentration c_max (mol/m³).
    pub max_conc: f64,
    /// Geometric coefficient G = R/(3·ε·A·L) (1/m²).
    pub geom_coeff: f64,
    /// Exchange current density j (A/m²).
    pub exchange_current: f64,
    /// Active-material volume fraction ε (–).
    pub volume_fraction: f64,
    /// Electrode area A (m²).
    pub area: f64,
    /// Electrode thickness L (m).
    pub thickness: f64,
}

impl ElectrodeParams {
    /// Geometric coefficient implied by the component geometry.
    pub fn derived_geom_coeff(&self) -> f64 {
        self.radius / (3.0 * self.volume_fraction * self.area * self.thickness)
    }

    /// Check positivity, the initial/maximum concentration ordering, and the
    /// consistency of the stored geometric coefficient with its components.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("diffusion", self.diffusion),
            ("radius", self.radius),
            ("init_conc", self.init_conc),
            ("max_conc", self.max_conc),
            ("geom_coeff", self.geom_coeff),
            ("exchange_current", self.exchange_current),
            ("volume_fraction", self.volume_fraction),
            ("area", self.area),
            ("thickness", self.thickness),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::SingularParameter(format!("{name} = {v}")));
            }
        }
        if self.init_conc > self.max_conc {
            return Err(Error::SingularParameter(format!(
                "init_conc {} exceeds max_conc {}",
                self.init_conc, self.max_conc
            )));
        }
        let derived = self.derived_geom_coeff();
        if ((self.geom_coeff - derived) / self.geom_coeff).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "geom_coeff {} inconsistent with R/(3 eps A L) = {}",
                self.geom_coeff, derived
            )));
        }
        Ok(())
    }
}

/// Cell-level constants shared by both electrodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConstants {
    /// Applied current I (A); positive denotes discharge.
    pub current: f64,
    /// Faraday constant F (C/mol).
    pub faraday: f64,
    /// Temperature (K).
    pub temperature: f64,
    /// Gas constant R_g (J/mol/K).
    pub gas_constant: f64,
    /// Film resistance R_f (Ω).
    pub film_resistance: f64,
    /// Simulation horizon T (s); observed samples beyond T are truncated.
    pub horizon: f64,
}

impl CellConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon {} must be > 0", self.horizon)));
        }
        if !(self.faraday > 0.0) || !(self.temperature > 0.0) || !(self.gas_constant > 0.0) {
            return Err(Error::Config("faraday, temperature, gas_constant must be > 0".into()));
        }
        Ok(())
    }
}

/// Declared ranges of the four cycle-dependent scaling factors.
pub const ETA_DP_RANGE: (f64, f64) = (1e-1, 1e1);
pub const ETA_DN_RANGE: (f64, f64) = (1e-2, 1e1);
pub const ETA_GP_RANGE: (f64, f64) = (1.0, 4.0);
pub const ETA_CMAXP_RANGE: (f64, f64) = (0.8, 1.2);

/// The four cycle-dependent scaling factors inferred from discharge curves.
///
/// `new` enforces the declared ranges; `unbounded` is the explicit escape
/// hatch for sensitivity studies that step outside them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    pub eta_dp: f64,
    pub eta_dn: f64,
    pub eta_gp: f64,
    pub eta_cmaxp: f64,
}

impl ScalingFactors {
    pub fn new(eta_dp: f64, eta_dn: f64, eta_gp: f64, eta_cmaxp: f64) -> Result<Self> {
        let check = |name: &'static str, value: f64, (lo, hi): (f64, f64)| {
            if value.is_finite() && (lo..=hi).contains(&value) {
                Ok(())
            } else {
                Err(Error::FactorRange { name, value, lo, hi })
            }
        };
        check("eta_dp", eta_dp, ETA_DP_RANGE)?;
        check("eta_dn", eta_dn, ETA_DN_RANGE)?;
        check("eta_gp", eta_gp, ETA_GP_RANGE)?;
        check("eta_cmaxp", eta_cmaxp, ETA_CMAXP_RANGE)?;
        Ok(Self { eta_dp, eta_dn, eta_gp, eta_cmaxp })
    }

    /// Construct without range checks (sensitivity studies only).
    pub fn unbounded(eta_dp: f64, eta_dn: f64, eta_gp: f64, eta_cmaxp: f64) -> Self {
        Self { eta_dp, eta_dn, eta_gp, eta_cmaxp }
    }

    /// The factors as an array in canonical order (Dp, Dn, Gp, cmaxp).
    pub fn as_array(&self) -> [f64; 4] {
        [self.eta_dp, self.eta_dn, self.eta_gp, self.eta_cmaxp]
    }

    pub fn identity() -> Self {
        Self { eta_dp: 1.0, eta_dn: 1.0, eta_gp: 1.0, eta_cmaxp: 1.0 }
    }
}

/// Canonical factor names in the order of [`ScalingFactors::as_array`].
pub const FACTOR_NAMES: [&str; 4] = ["eta_dp", "eta_dn", "eta_gp", "eta_cmaxp"];

/// Fixed (non-cycle-dependent) scaling factors applied once at configuration
/// load. Each multiplies its reference parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedFactors {
    pub c_p: f64,
    pub r_p: f64,
    pub j_p: f64,
    pub r_n: f64,
    pub j_n: f64,
    pub g_n: f64,
    pub r_f: f64,
}

impl FixedFactors {
    pub fn identity() -> Self {
        Self { c_p: 1.0, r_p: 1.0, j_p: 1.0, r_n: 1.0, j_n: 1.0, g_n: 1.0, r_f: 1.0 }
    }
}

/// One electrode's fully specified diffusion problem, dimensional and
/// nondimensional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeTask {
    pub kind: ElectrodeKind,
    pub params: ElectrodeParams,
    /// Surface molar flux J (mol/m²/s); positive extracts lithium into the
    /// particle (positive electrode under discharge), negative removes it.
    pub surface_flux: f64,
    /// α = D·T/R² (–).
    pub alpha: f64,
    /// β = J·R/(D·C) (–); same sign as the flux.
    pub beta: f64,
}

impl ElectrodeTask {
    /// Build a task from dimensional parameters, recomputing (α, β).
    pub fn new(
        kind: ElectrodeKind,
        params: ElectrodeParams,
        surface_flux: f64,
        horizon: f64,
    ) -> Result<Self> {
        let (alpha, beta) = nondimensionalize(
            params.diffusion,
            params.radius,
            params.init_conc,
            surface_flux,
            horizon,
        )?;
        Ok(Self { kind, params, surface_flux, alpha, beta })
    }
}

/// Nondimensionalize one electrode: α = D·T/R², β = J·R/(D·C).
///
/// The flux may be zero (β = 0); all other inputs must be positive.
pub fn nondimensionalize(
    diffusion: f64,
    radius: f64,
    init_conc: f64,
    surface_flux: f64,
    horizon: f64,
) -> Result<(f64, f64)> {
    if !(diffusion > 0.0) {
        return Err(Error::SingularParameter(format!("diffusion = {diffusion}")));
    }
    if !(radius > 0.0) || !(init_conc > 0.0) || !(horizon > 0.0) {
        return Err(Error::SingularParameter(
            "radius, init_conc, horizon must be > 0".into(),
        ));
    }
    let alpha = diffusion * horizon / (radius * radius);
    let beta = surface_flux * radius / (diffusion * init_conc);
    Ok((alpha, beta))
}

/// Reference parameter set plus constants, before any scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCell {
    pub positive: ElectrodeParams,
    pub negative: ElectrodeParams,
    pub constants: CellConstants,
}

/// Effective (scaled) cell: per-electrode tasks ready to solve plus the
/// constants used by the voltage model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCell {
    pub positive: ElectrodeTask,
    pub negative: ElectrodeTask,
    pub constants: CellConstants,
}

/// Apply fixed factors and the four cycle-dependent factors to a reference
/// cell, producing effective electrode tasks.
///
/// Order of operations:
/// 1. fixed factors scale their components (C_p, R_p, j_p, R_n, j_n, R_f);
/// 2. geometric coefficients are re-derived from the effective components,
///    then G_n is multiplied by its own fixed factor;
/// 3. cycle factors apply: D_p·η_Dp, D_n·η_Dn, G_p·η_Gp (with ε_p divided by
///    η_Gp so the stored geometry stays consistent with G), c_max,p·η_cmax,p;
/// 4. surface fluxes follow the discharge sign convention J_p = +(I/F)·G_p,
///    J_n = −(I/F)·G_n for I > 0.
///
/// η_cmax,p rescales only the maximum concentration; the initial
/// concentration keeps its fixed-scaled value, so initial stoichiometry
/// shifts with η_cmax,p.
pub fn apply_scaling(
    reference: &ReferenceCell,
    factors: &ScalingFactors,
    fixed: &FixedFactors,
) -> Result<EffectiveCell> {
    reference.positive.validate()?;
    reference.negative.validate()?;
    reference.constants.validate()?;

    // Step 1-2: fixed factors on components, geometry re-derived.
    let mut pos = reference.positive;
    pos.init_conc *= fixed.c_p;
    pos.radius *= fixed.r_p;
    pos.exchange_current *= fixed.j_p;
    pos.geom_coeff = pos.derived_geom_coeff();

    let mut neg = reference.negative;
    neg.radius *= fixed.r_n;
    neg.exchange_current *= fixed.j_n;
    // G_n carries its own fixed multiplier on top of the effective geometry;
    // fold it into the volume fraction so geometry stays self-consistent.
    neg.volume_fraction /= fixed.g_n;
    neg.geom_coeff = neg.derived_geom_coeff();

    let mut constants = reference.constants;
    constants.film_resistance *= fixed.r_f;

    // Step 3: cycle-dependent factors.
    pos.diffusion *= factors.eta_dp;
    pos.volume_fraction /= factors.eta_gp;
    pos.geom_coeff = pos.derived_geom_coeff();
    pos.max_conc *= factors.eta_cmaxp;
    neg.diffusion *= factors.eta_dn;

    // Step 4: discharge-sign fluxes.
    let i_over_f = constants.current / constants.faraday;
    let flux_p = i_over_f * pos.geom_coeff;
    let flux_n = -i_over_f * neg.geom_coeff;

    let positive = ElectrodeTask::new(ElectrodeKind::Positive, pos, flux_p, constants.horizon)?;
    let negative = ElectrodeTask::new(ElectrodeKind::Negative, neg, flux_n, constants.horizon)?;

    if constants.current > 0.0 {
        debug_assert!(positive.beta > 0.0 && negative.beta < 0.0);
    }

    Ok(EffectiveCell { positive, negative, constants })
}

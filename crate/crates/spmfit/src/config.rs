//! Configuration: a TOML file mirroring the reference parameter table, with
//! every key optional — missing keys fall back to the defaults baked into the
//! binary below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellConstants, ElectrodeParams, FixedFactors, ReferenceCell};

/// Reference values for one electrode as they appear in the parameter table.
/// `geom_coeff` may be omitted; it is then derived from R/(3·ε·A·L).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ElectrodeConfig {
    pub diffusion: f64,
    pub radius: f64,
    pub init_conc: f64,
    pub max_conc: f64,
    pub exchange_current: f64,
    pub volume_fraction: f64,
    pub area: f64,
    pub thickness: f64,
    pub geom_coeff: Option<f64>,
}

impl ElectrodeConfig {
    fn positive_default() -> Self {
        Self {
            diffusion: 3.9e-14,
            radius: 3.0e-6,
            init_conc: 30730.0,
            max_conc: 51000.0,
            exchange_current: 0.1,
            volume_fraction: 0.689,
            area: 0.1,
            thickness: 7.2e-5,
            geom_coeff: None,
        }
    }

    fn negative_default() -> Self {
        Self {
            diffusion: 3.9e-14,
            radius: 5.86e-6,
            init_conc: 29866.0,
            max_conc: 30555.0,
            exchange_current: 7.7e-2,
            volume_fraction: 0.75,
            area: 0.1,
            thickness: 8.3e-5,
            geom_coeff: None,
        }
    }

    pub fn to_params(self) -> ElectrodeParams {
        let mut p = ElectrodeParams {
            diffusion: self.diffusion,
            radius: self.radius,
            init_conc: self.init_conc,
            max_conc: self.max_conc,
            geom_coeff: 0.0,
            exchange_current: self.exchange_current,
            volume_fraction: self.volume_fraction,
            area: self.area,
            thickness: self.thickness,
        };
        p.geom_coeff = self.geom_coeff.unwrap_or_else(|| p.derived_geom_coeff());
        p
    }
}

impl Default for ElectrodeConfig {
    fn default() -> Self {
        Self::positive_default()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsConfig {
    pub current: f64,
    pub faraday: f64,
    pub temperature: f64,
    pub gas_constant: f64,
    pub film_resistance: f64,
    pub horizon: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            current: 1.35,
            faraday: 96485.0,
            temperature: 298.15,
            gas_constant: 8.3145,
            film_resistance: 0.020,
            horizon: 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedFactorsConfig {
    pub c_p: f64,
    pub r_p: f64,
    pub j_p: f64,
    pub r_n: f64,
    pub j_n: f64,
    pub g_n: f64,
    pub r_f: f64,
}

impl Default for FixedFactorsConfig {
    fn default() -> Self {
        Self { c_p: 0.82, r_p: 5.0, j_p: 2.5, r_n: 2.0, j_n: 3.2, g_n: 2.8, r_f: 0.5 }
    }
}

/// Task-sampling ranges: effective diffusion coefficients are drawn
/// log-uniformly, the positive geometric coefficient uniformly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub d_p_range: [f64; 2],
    pub g_p_range: [f64; 2],
    pub d_n_range: [f64; 2],
    pub train_positive: usize,
    pub train_negative: usize,
    pub test_positive: usize,
    pub test_negative: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            d_p_range: [3.9e-15, 3.9e-13],
            g_p_range: [1.01, 4.03],
            d_n_range: [3.9e-16, 3.9e-13],
            train_positive: 60,
            train_negative: 40,
            test_positive: 40,
            test_negative: 10,
        }
    }
}

/// Reference-solver settings used when generating training labels. The label
/// grid itself is fixed at 61 time x 64 radial points; the solver runs on a
/// finer mesh with sub-stepping and the field is sampled onto the label grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Radial cell count for label generation.
    pub label_mesh: usize,
    /// Integer sub-steps per 60 s label interval.
    pub label_substeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { label_mesh: 256, label_substeps: 32 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    pub population: usize,
    pub generations: usize,
    pub subset_size: usize,
    pub hidden_width: usize,
    /// Evolution strategy: "diag-nes" (default) or "cmaes".
    pub es: String,
    /// Collocation grid (time points x radial points) used for fine-tuning.
    pub colloc_nt: usize,
    pub colloc_nr: usize,
    /// Generations without best-fitness improvement before stopping with a
    /// warning status.
    pub patience: usize,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            population: 32,
            generations: 300,
            subset_size: 16,
            // Widths of 256+ make the random-feature Gram matrix numerically
            // singular in f64 (the features are smooth functions of a 2-D
            // input, so collinearity grows fast with width) and the Cholesky
            // factorization fails across the whole initial population; 192
            // is the widest setting that trains reliably.
            hidden_width: 192,
            es: "diag-nes".into(),
            colloc_nt: 61,
            colloc_nr: 64,
            patience: 120,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseConfig {
    pub restarts: usize,
    pub generations: usize,
    pub population: usize,
    /// Initial step size as a fraction of the normalized search box width.
    pub sigma0: f64,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self { restarts: 20, generations: 50, population: 20, sigma0: 0.3 }
    }
}

/// Discharge protocol constants used by synthesis and segment extraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub cutoff_voltage: f64,
    /// Target discharge current magnitude (A) for segment extraction.
    pub discharge_current: f64,
    /// Relative tolerance on the discharge current match.
    pub current_tolerance: f64,
    /// Curves with more samples are decimated to this count for objective
    /// evaluation (raw curves are kept on disk).
    pub max_curve_samples: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            cutoff_voltage: 2.7,
            discharge_current: 1.35,
            current_tolerance: 0.05,
            max_curve_samples: 600,
        }
    }
}

/// Equilibrium-potential curve sources: file paths, or the built-in defaults
/// when omitted.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    pub positive_path: Option<String>,
    pub negative_path: Option<String>,
}

/// Top-level configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub positive: PositiveSection,
    pub negative: NegativeSection,
    pub constants: ConstantsConfig,
    pub fixed_factors: FixedFactorsConfig,
    pub sampling: SamplingConfig,
    pub solver: SolverConfig,
    pub meta: MetaConfig,
    pub inverse: InverseConfig,
    pub protocol: ProtocolConfig,
    pub ocp: OcpConfig,
}

/// Newtype wrappers so `[positive]` and `[negative]` get distinct defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositiveSection(pub ElectrodeConfig);

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NegativeSection(pub ElectrodeConfig);

impl Default for PositiveSection {
    fn default() -> Self {
        Self(ElectrodeConfig::positive_default())
    }
}

impl Default for NegativeSection {
    fn default() -> Self {
        Self(ElectrodeConfig::negative_default())
    }
}

impl Config {
    /// Parse a TOML config file; missing keys fall back to built-in defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("sampling.d_p_range", self.sampling.d_p_range),
            ("sampling.g_p_range", self.sampling.g_p_range),
            ("sampling.d_n_range", self.sampling.d_n_range),
        ];
        for (key, [lo, hi]) in ranges {
            if !(lo > 0.0) || !(hi > lo) {
                return Err(Error::Config(format!(
                    "{key}: invalid range [{lo}, {hi}] (need 0 < lo < hi)"
                )));
            }
        }
        for (key, n) in [
            ("sampling.train_positive", self.sampling.train_positive),
            ("sampling.train_negative", self.sampling.train_negative),
            ("sampling.test_positive", self.sampling.test_positive),
            ("sampling.test_negative", self.sampling.test_negative),
        ] {
            if n < 1 {
                return Err(Error::Config(format!("{key}: need at least 1 task")));
            }
        }
        if self.meta.population < 8 {
            return Err(Error::Config("meta.population: minimum is 8".into()));
        }
        if self.meta.generations < 10 {
            return Err(Error::Config("meta.generations: minimum is 10".into()));
        }
        if self.meta.subset_size < 1 {
            return Err(Error::Config("meta.subset_size: minimum is 1".into()));
        }
        if self.meta.hidden_width < 3 {
            return Err(Error::Config("meta.hidden_width: minimum is 3".into()));
        }
        if self.meta.colloc_nt < 4 || self.meta.colloc_nr < 4 {
            return Err(Error::Config("meta.colloc_nt/colloc_nr: minimum is 4".into()));
        }
        if !matches!(self.meta.es.as_str(), "diag-nes" | "cmaes") {
            return Err(Error::Config(format!(
                "meta.es: unknown strategy '{}' (expected diag-nes or cmaes)",
                self.meta.es
            )));
        }
        if self.solver.label_mesh < 4 {
            return Err(Error::Config("solver.label_mesh: minimum is 4".into()));
        }
        if self.solver.label_substeps < 1 {
            return Err(Error::Config("solver.label_substeps: minimum is 1".into()));
        }
        if self.inverse.restarts < 4 || self.inverse.restarts % 2 != 0 {
            return Err(Error::Config("inverse.restarts: need an even count >= 4".into()));
        }
        if !(self.protocol.cutoff_voltage > 0.0) {
            return Err(Error::Config("protocol.cutoff_voltage: must be > 0".into()));
        }
        self.reference_cell().positive.validate()?;
        self.reference_cell().negative.validate()?;
        Ok(())
    }

    pub fn reference_cell(&self) -> ReferenceCell {
        ReferenceCell {
            positive: self.positive.0.to_params(),
            negative: self.negative.0.to_params(),
            constants: CellConstants {
                current: self.constants.current,
                faraday: self.constants.faraday,
                temperature: self.constants.temperature,
                gas_constant: self.constants.gas_constant,
                film_resistance: self.constants.film_resistance,
                horizon: self.constants.horizon,
            },
        }
    }

    pub fn fixed_factors(&self) -> FixedFactors {
        let f = self.fixed_factors;
        FixedFactors {
            c_p: f.c_p,
            r_p: f.r_p,
            j_p: f.j_p,
            r_n: f.r_n,
            j_n: f.j_n,
            g_n: f.g_n,
            r_f: f.r_f,
        }
    }
}

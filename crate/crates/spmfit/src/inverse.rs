//! Inverse inference of cycle-dependent scaling factors from discharge curves.
//!
//! The forward map — four scaling factors to a terminal-voltage curve — costs
//! two basis fine-tunes (one per electrode) plus the closed-form voltage
//! expression, cheap enough to sit inside an evolution-strategy loop. Each
//! cycle is inverted by multistart CMA-ES in a normalized search box: the
//! diffusion factors move over decades and get logarithmic axes, the
//! geometry and capacity factors are order-one and stay linear. Because the
//! problem is ill-posed (several factor combinations reproduce a curve to
//! within noise), a single optimum is not the deliverable; the lowest-error
//! half of the restarts is summarized per factor, and Spearman rank
//! correlation between fit error and distance-to-truth quantifies
//! identifiability on synthetic data where the truth is known.
//!
//! Everything here is deterministic given a master seed: restart seeds are
//! derived from `(master seed, cycle, restart index)`, so cycles are
//! independent and reruns are bit-identical.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::CmaEs;
use crate::fit::Fitter;
use crate::model::{
    apply_scaling, FixedFactors, ReferenceCell, ScalingFactors, ETA_CMAXP_RANGE, ETA_DN_RANGE,
    ETA_DP_RANGE, ETA_GP_RANGE, FACTOR_NAMES,
};
use crate::ocp::OcpCurve;
use crate::seeds::derive_seed;
use crate::voltage::{DischargeCurve, SynthesisResult, VoltageModel};

/// Weight of the stoichiometry-clamp penalty added to the voltage MSE.
pub const CLAMP_PENALTY_WEIGHT: f64 = 10.0;

/// Minimum number of observed samples (within the horizon) per curve.
pub const MIN_OBSERVED_SAMPLES: usize = 10;

/// Final best fitness at or below this is always classified converged; it is
/// the numerical floor of a squared-voltage objective in double precision.
pub const CONVERGENCE_FLOOR: f64 = 1e-12;

/// A run whose best fitness improved by less than this relative amount over
/// the final half of its generations is classified stalled.
pub const STALL_RELATIVE_IMPROVEMENT: f64 = 1e-12;

/// Fitness assigned to a candidate whose fine-tune fails to factorize; large
/// enough that such candidates never win, finite so the strategy continues.
pub const CONDITIONING_FITNESS: f64 = 1e6;

// ---------------------------------------------------------------------------
// Search space
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct FactorAxis {
    name: &'static str,
    lo: f64,
    hi: f64,
    log: bool,
}

impl FactorAxis {
    fn decode(&self, x: f64) -> f64 {
        // Exact endpoint mapping: clamped coordinates land bit-exactly on
        // the declared bounds (exp(ln lo) can drift one ULP off otherwise).
        if x <= 0.0 {
            return self.lo;
        }
        if x >= 1.0 {
            return self.hi;
        }
        let value = if self.log {
            (self.lo.ln() + x * (self.hi.ln() - self.lo.ln())).exp()
        } else {
            self.lo + x * (self.hi - self.lo)
        };
        value.clamp(self.lo, self.hi)
    }

    fn encode(&self, value: f64) -> f64 {
        if self.log {
            (value.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln())
        } else {
            (value - self.lo) / (self.hi - self.lo)
        }
    }
}

/// Normalized `[0, 1]^4` search box over the four scaling factors.
///
/// Diffusion factors (decades of spread) use logarithmic axes; the geometry
/// and capacity factors are linear. Out-of-box coordinates clamp onto the
/// boundary at decode time, so every evaluated candidate lies inside the
/// declared factor ranges; boundary pressure enters the objective only
/// through the stoichiometry-clamp penalty.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    axes: [FactorAxis; 4],
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            axes: [
                FactorAxis { name: FACTOR_NAMES[0], lo: ETA_DP_RANGE.0, hi: ETA_DP_RANGE.1, log: true },
                FactorAxis { name: FACTOR_NAMES[1], lo: ETA_DN_RANGE.0, hi: ETA_DN_RANGE.1, log: true },
                FactorAxis { name: FACTOR_NAMES[2], lo: ETA_GP_RANGE.0, hi: ETA_GP_RANGE.1, log: false },
                FactorAxis { name: FACTOR_NAMES[3], lo: ETA_CMAXP_RANGE.0, hi: ETA_CMAXP_RANGE.1, log: false },
            ],
        }
    }
}

impl SearchSpace {
    pub const DIM: usize = 4;

    /// Map a point of the normalized box to factors (clamping into the box).
    pub fn decode(&self, x: &[f64]) -> ScalingFactors {
        assert_eq!(x.len(), Self::DIM, "encoded candidate must have 4 coordinates");
        let v: Vec<f64> = self.axes.iter().zip(x).map(|(a, &xi)| a.decode(xi)).collect();
        ScalingFactors::new(v[0], v[1], v[2], v[3])
            .expect("decoded factors lie inside the declared ranges by construction")
    }

    /// Map factors to normalized coordinates (inverse of [`Self::decode`]).
    pub fn encode(&self, f: &ScalingFactors) -> [f64; 4] {
        let v = f.as_array();
        [
            self.axes[0].encode(v[0]),
            self.axes[1].encode(v[1]),
            self.axes[2].encode(v[2]),
            self.axes[3].encode(v[3]),
        ]
    }

    /// Linear width `hi − lo` of axis `i`, used to normalize factor errors.
    pub fn linear_width(&self, i: usize) -> f64 {
        self.axes[i].hi - self.axes[i].lo
    }

    /// Axis name (canonical factor order).
    pub fn name(&self, i: usize) -> &'static str {
        self.axes[i].name
    }
}

/// Root-mean-square over the four factors of `(inferred − true) / width`,
/// where `width` is the linear range of each factor. A dimensionless scalar
/// distance used by the identifiability diagnostics.
pub fn normalized_error(
    inferred: &ScalingFactors,
    truth: &ScalingFactors,
    space: &SearchSpace,
) -> f64 {
    let a = inferred.as_array();
    let b = truth.as_array();
    let mut acc = 0.0;
    for i in 0..SearchSpace::DIM {
        let d = (a[i] - b[i]) / space.linear_width(i);
        acc += d * d;
    }
    (acc / SearchSpace::DIM as f64).sqrt()
}

/// Three canned degradation states used for synthetic validation, labelled
/// by life stage. Both diffusion factors fall with age while the positive
/// geometric factor grows, so later states reach the cutoff voltage earlier
/// — the qualitative signature of capacity fade under constant-current
/// discharge.
pub fn synthetic_truth_sets() -> [(&'static str, ScalingFactors); 3] {
    let state = |dp, dn, gp| {
        ScalingFactors::new(dp, dn, gp, 1.0)
            .expect("canned states lie inside the declared factor ranges")
    };
    [
        ("early", state(2.5, 0.25, 2.5)),
        ("middle", state(1.5, 0.1, 3.5)),
        ("late", state(0.3, 0.03, 3.5)),
    ]
}

// ---------------------------------------------------------------------------
// Forward map and objective
// ---------------------------------------------------------------------------

/// Everything the inverse problem needs to evaluate a candidate: the
/// reference cell, fixed factors, a prepared fine-tuner over the trained
/// basis, and the equilibrium-potential curves.
pub struct InverseContext {
    reference: ReferenceCell,
    fixed: FixedFactors,
    fitter: Fitter,
    positive: OcpCurve,
    negative: OcpCurve,
    space: SearchSpace,
}

impl InverseContext {
    pub fn new(
        reference: ReferenceCell,
        fixed: FixedFactors,
        fitter: Fitter,
        positive: OcpCurve,
        negative: OcpCurve,
    ) -> Result<Self> {
        reference.positive.validate()?;
        reference.negative.validate()?;
        reference.constants.validate()?;
        positive.validate()?;
        negative.validate()?;
        Ok(Self { reference, fixed, fitter, positive, negative, space: SearchSpace::default() })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn fitter(&self) -> &Fitter {
        &self.fitter
    }

    /// Discharge horizon T (s); observed samples beyond it are truncated.
    pub fn horizon(&self) -> f64 {
        self.reference.constants.horizon
    }

    /// Forward map: scale the reference cell by `factors`, fine-tune both
    /// electrodes on the basis, and synthesize the terminal voltage at the
    /// given times — mesh-free, at exactly the requested instants.
    pub fn synthesize(
        &self,
        factors: &ScalingFactors,
        battery_id: &str,
        cycle: u32,
        times_s: &[f64],
        cutoff: Option<f64>,
    ) -> Result<SynthesisResult> {
        let cell = apply_scaling(&self.reference, factors, &self.fixed)?;
        let sol_p = self.fitter.fine_tune(cell.positive.alpha, cell.positive.beta)?;
        let sol_n = self.fitter.fine_tune(cell.negative.alpha, cell.negative.beta)?;
        let horizon = cell.constants.horizon;
        let basis = self.fitter.basis();
        let surf_p: Vec<f64> =
            times_s.iter().map(|&t| basis.eval(&sol_p.weights, 1.0, t / horizon)).collect();
        let surf_n: Vec<f64> =
            times_s.iter().map(|&t| basis.eval(&sol_n.weights, 1.0, t / horizon)).collect();
        let model = VoltageModel::new(cell, self.positive.clone(), self.negative.clone())?;
        model.synthesize(battery_id, cycle, times_s, &surf_p, &surf_n, cutoff)
    }

    /// Validate an observed curve and truncate it to the horizon.
    ///
    /// Errors if no sample survives the truncation, or if fewer than
    /// [`MIN_OBSERVED_SAMPLES`] do.
    pub fn prepare(&self, observed: &DischargeCurve) -> Result<PreparedCurve> {
        observed.validate()?;
        let horizon = self.horizon();
        let kept: Vec<(f64, f64)> =
            observed.samples.iter().copied().filter(|&(t, _)| t <= horizon).collect();
        if kept.is_empty() {
            return Err(Error::EmptyCurve(format!(
                "battery '{}' cycle {}: no samples within [0, {horizon}] s",
                observed.battery_id, observed.cycle
            )));
        }
        if kept.len() < MIN_OBSERVED_SAMPLES {
            return Err(Error::Config(format!(
                "battery '{}' cycle {}: inverse inference needs at least \
                 {MIN_OBSERVED_SAMPLES} samples within [0, {horizon}] s, got {}",
                observed.battery_id,
                observed.cycle,
                kept.len()
            )));
        }
        let (times, voltages) = kept.into_iter().unzip();
        Ok(PreparedCurve {
            battery_id: observed.battery_id.clone(),
            cycle: observed.cycle,
            times,
            voltages,
            capacity_ah: observed.capacity_ah(),
        })
    }

    /// The inverse objective: mean squared voltage error at exactly the
    /// observed times, plus [`CLAMP_PENALTY_WEIGHT`] times the squared
    /// fraction of stoichiometry-clamped evaluations.
    pub fn objective(&self, factors: &ScalingFactors, prepared: &PreparedCurve) -> Result<f64> {
        let synth =
            self.synthesize(factors, &prepared.battery_id, prepared.cycle, &prepared.times, None)?;
        let n = prepared.times.len() as f64;
        let mse = synth
            .points
            .iter()
            .zip(&prepared.voltages)
            .map(|(p, &v)| (p.voltage - v) * (p.voltage - v))
            .sum::<f64>()
            / n;
        Ok(mse + CLAMP_PENALTY_WEIGHT * synth.clamp_fraction * synth.clamp_fraction)
    }
}

/// An observed curve after validation and horizon truncation, ready for
/// repeated objective evaluations.
#[derive(Debug, Clone)]
pub struct PreparedCurve {
    pub battery_id: String,
    pub cycle: u32,
    pub times: Vec<f64>,
    pub voltages: Vec<f64>,
    pub capacity_ah: f64,
}

// ---------------------------------------------------------------------------
// Restarts and per-cycle inference
// ---------------------------------------------------------------------------

/// Multistart budget for one cycle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InverseOptions {
    /// Independent CMA-ES restarts per cycle (even, at least 4).
    pub restarts: usize,
    /// Generations per restart (at least 2).
    pub generations: usize,
    /// Population per generation.
    pub population: usize,
    /// Initial step size as a fraction of the normalized box width.
    pub sigma0: f64,
}

impl Default for InverseOptions {
    fn default() -> Self {
        Self { restarts: 20, generations: 50, population: 20, sigma0: 0.3 }
    }
}

/// Terminal classification of one restart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    /// Still improving (or at the numerical floor) when the budget ran out.
    Converged,
    /// No relative improvement above [`STALL_RELATIVE_IMPROVEMENT`] over the
    /// final half of the generations.
    Stalled,
    /// The best candidate clamps more than 20% of its stoichiometry
    /// evaluations — a fit that escaped the physically plausible region.
    Penalized,
}

/// One CMA-ES restart: its seed, best factors, objective value, and the
/// best-so-far trace (non-increasing by construction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferenceRun {
    pub seed: u64,
    pub factors: ScalingFactors,
    pub mse: f64,
    pub trace: Vec<f64>,
    pub status: RunStatus,
}

/// Classify a finished restart from its trace and the plausibility of its
/// best candidate. `trace` holds the best-so-far fitness after each
/// generation and must be non-empty.
fn classify_run(trace: &[f64], implausible: bool) -> RunStatus {
    if implausible {
        return RunStatus::Penalized;
    }
    let last = *trace.last().expect("trace has one entry per generation");
    if last <= CONVERGENCE_FLOOR {
        return RunStatus::Converged;
    }
    // Mid-point of the trace: a run that made no headway over its final half
    // was stuck long before the budget ran out.
    let mid = trace[trace.len() / 2 - 1];
    if mid - last <= STALL_RELATIVE_IMPROVEMENT * mid {
        RunStatus::Stalled
    } else {
        RunStatus::Converged
    }
}

fn run_restart(
    ctx: &InverseContext,
    prepared: &PreparedCurve,
    seed: u64,
    opts: &InverseOptions,
) -> Result<InferenceRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Uniform initial mean in the normalized box — log-uniform over the
    // logarithmic factor axes, as the box is the strategy's native space.
    let mean0: Vec<f64> = (0..SearchSpace::DIM).map(|_| rng.random::<f64>()).collect();
    let mut es = CmaEs::new(&mean0, opts.sigma0, opts.population)?;

    let mut trace = Vec::with_capacity(opts.generations);
    for _ in 0..opts.generations {
        let candidates = es.ask(&mut rng);
        let mut fitness = Vec::with_capacity(candidates.len());
        for x in &candidates {
            let factors = ctx.space.decode(x);
            match ctx.objective(&factors, prepared) {
                Ok(v) => fitness.push(v),
                // A candidate whose normal equations refuse to factorize is
                // penalized, not fatal: the strategy routes around it.
                Err(Error::Conditioning { .. }) => fitness.push(CONDITIONING_FITNESS),
                Err(e) => return Err(e),
            }
        }
        es.tell(&fitness)?;
        let (_, best) = es.best().expect("told at least one generation");
        trace.push(best);
    }

    let (x_best, mse) = es.best().expect("told at least one generation");
    let factors = ctx.space.decode(x_best);
    // One diagnostic synthesis at the winner to test physical plausibility.
    let synth =
        ctx.synthesize(&factors, &prepared.battery_id, prepared.cycle, &prepared.times, None)?;
    let status = classify_run(&trace, synth.implausible);

    Ok(InferenceRun { seed, factors, mse, trace, status })
}

/// Per-factor spread over the filtered (lowest-error) runs of a cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorSummary {
    pub name: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// All restarts for one cycle plus the filtered summary.
///
/// `filtered` indexes into `runs`, naming the ⌈n/2⌉ runs of lowest objective
/// value in ascending order; every filtered run has an objective no worse
/// than any excluded run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleInference {
    pub battery_id: String,
    pub cycle: u32,
    pub runs: Vec<InferenceRun>,
    pub filtered: Vec<usize>,
    pub summary: Vec<FactorSummary>,
    pub mse_median: f64,
    pub capacity_ah: f64,
}

impl CycleInference {
    /// Count of runs per terminal status `(converged, stalled, penalized)`.
    pub fn status_counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for run in &self.runs {
            match run.status {
                RunStatus::Converged => c.0 += 1,
                RunStatus::Stalled => c.1 += 1,
                RunStatus::Penalized => c.2 += 1,
            }
        }
        c
    }
}

/// Median of an ascending-sorted non-empty slice (mean of the middle pair
/// for even lengths).
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Invert one cycle by multistart CMA-ES.
///
/// Restart seeds derive from `(master_seed, cycle, restart index)`, so the
/// result is a pure function of its arguments and cycles never share RNG
/// state. Restarts run in parallel. A cycle where every restart lands in
/// the penalized region still returns a `CycleInference` — the status flags
/// carry the warning; only a malformed observed curve is an error.
pub fn infer_cycle(
    ctx: &InverseContext,
    observed: &DischargeCurve,
    opts: &InverseOptions,
    master_seed: u64,
) -> Result<CycleInference> {
    if opts.restarts < 4 || opts.restarts % 2 != 0 {
        return Err(Error::Config(format!(
            "restarts must be even and at least 4, got {}",
            opts.restarts
        )));
    }
    if opts.generations < 2 {
        return Err(Error::Config(format!(
            "inverse inference needs at least 2 generations, got {}",
            opts.generations
        )));
    }
    let prepared = ctx.prepare(observed)?;

    let stream = format!("cycle-{}-restart", observed.cycle);
    let seeds: Vec<u64> =
        (0..opts.restarts).map(|r| derive_seed(master_seed, &stream, r as u64)).collect();

    let runs = seeds
        .par_iter()
        .map(|&seed| run_restart(ctx, &prepared, seed, opts))
        .collect::<Result<Vec<_>>>()?;

    if runs.iter().all(|r| r.status == RunStatus::Penalized) {
        log::warn!(
            "battery '{}' cycle {}: every restart ended penalized — no physically \
             plausible fit found",
            prepared.battery_id,
            prepared.cycle
        );
    }

    // Keep the ⌈n/2⌉ runs of lowest objective value (ties break by restart
    // index so the choice is deterministic).
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].mse.total_cmp(&runs[b].mse).then(a.cmp(&b)));
    let keep = runs.len().div_ceil(2);
    let filtered = order[..keep].to_vec();
    if keep < runs.len() {
        debug_assert!(runs[filtered[keep - 1]].mse <= runs[order[keep]].mse);
    }

    let summary = (0..SearchSpace::DIM)
        .map(|i| {
            let mut values: Vec<f64> =
                filtered.iter().map(|&k| runs[k].factors.as_array()[i]).collect();
            values.sort_by(f64::total_cmp);
            FactorSummary {
                name: ctx.space.name(i).to_string(),
                min: values[0],
                median: median_sorted(&values),
                max: *values.last().expect("filtered set is non-empty"),
            }
        })
        .collect();

    let mses: Vec<f64> = filtered.iter().map(|&k| runs[k].mse).collect();
    let mse_median = median_sorted(&mses);

    Ok(CycleInference {
        battery_id: prepared.battery_id,
        cycle: prepared.cycle,
        runs,
        filtered,
        summary,
        mse_median,
        capacity_ah: prepared.capacity_ah,
    })
}

// ---------------------------------------------------------------------------
// Identifiability diagnostics
// ---------------------------------------------------------------------------

/// Spearman rank correlation at one filtering threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// Percentage of runs retained (lowest objective first).
    pub percent: u32,
    /// Number of runs the correlation was computed over.
    pub n_used: usize,
    /// `None` when the correlation is undefined (e.g. constant objective).
    pub rho: Option<f64>,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Spearman rank correlation: Pearson correlation of average ranks, which
/// handles ties. `None` when either sequence has constant rank.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "correlation needs paired samples");
    if x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Classical rank-difference form `1 − 6Σd²/(n(n²−1))`, valid only without
/// ties. Kept as an independent cross-check of [`spearman_rho`]; returns
/// `None` when ties make the formula inapplicable.
pub fn spearman_rank_difference(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "correlation needs paired samples");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let has_ties = |v: &[f64]| {
        let mut s: Vec<f64> = v.to_vec();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties(x) || has_ties(y) {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let d2: f64 = rx.iter().zip(&ry).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let nf = n as f64;
    Some(1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)))
}

/// Rank correlation between objective value and distance-to-truth across a
/// set of restarts, at retention thresholds of 100/75/50/25% (lowest
/// objective first).
///
/// A positive, threshold-stable correlation means the objective ranks
/// candidates the way the (hidden) truth would — the practical notion of
/// identifiability for an ill-posed inversion. Requires the true factors
/// (synthetic data) and at least 20 runs.
pub fn correlation_diagnostics(
    runs: &[InferenceRun],
    truth: &ScalingFactors,
    space: &SearchSpace,
) -> Result<Vec<CorrelationRow>> {
    if runs.len() < 20 {
        return Err(Error::Config(format!(
            "correlation diagnostics need at least 20 runs, got {}",
            runs.len()
        )));
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[a].mse.total_cmp(&runs[b].mse).then(a.cmp(&b)));

    let rows = [100u32, 75, 50, 25]
        .into_iter()
        .map(|percent| {
            let n_used = (runs.len() * percent as usize).div_ceil(100).max(2);
            let subset = &order[..n_used];
            let mses: Vec<f64> = subset.iter().map(|&k| runs[k].mse).collect();
            let errs: Vec<f64> =
                subset.iter().map(|&k| normalized_error(&runs[k].factors, truth, space)).collect();
            CorrelationRow { percent, n_used, rho: spearman_rho(&mses, &errs) }
        })
        .collect();
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Sensitivity scan
// ---------------------------------------------------------------------------

/// One perturbed synthesis within a sensitivity scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityCurve {
    /// Relative perturbation applied to the factor (`η → η·(1+delta)`).
    pub delta: f64,
    pub factors: ScalingFactors,
    pub curve: DischargeCurve,
    /// `max_t |V_perturbed − V_base|` over the common sampled prefix.
    pub max_abs_dv: f64,
}

/// All perturbations of one factor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub factor: String,
    pub curves: Vec<SensitivityCurve>,
}

/// A full one-at-a-time sensitivity scan around a base factor set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityScan {
    pub base_factors: ScalingFactors,
    pub base: DischargeCurve,
    pub reports: Vec<SensitivityReport>,
}

/// Perturb each factor in turn by the relative `deltas` (holding the others
/// at `base`), synthesizing on `n_times` uniform samples of `[0, T]`, and
/// record `max|ΔV|` against the base curve over the common prefix.
///
/// Perturbed factors may leave the declared inference ranges (the scan is a
/// model study, not an inversion); each must remain physical, i.e.
/// `delta > −1`. With a cutoff, perturbed curves can end earlier or later
/// than the base curve; ΔV compares the samples both curves share. A zero
/// delta reproduces the base synthesis bit for bit, so its ΔV is exactly 0.
pub fn sensitivity_scan(
    ctx: &InverseContext,
    base: &ScalingFactors,
    deltas: &[f64],
    n_times: usize,
    cutoff: Option<f64>,
) -> Result<SensitivityScan> {
    if n_times < 2 {
        return Err(Error::Config(format!("sensitivity scan needs at least 2 samples, got {n_times}")));
    }
    if deltas.is_empty() {
        return Err(Error::Config("sensitivity scan needs at least one perturbation".into()));
    }
    for &d in deltas {
        if !d.is_finite() || d <= -1.0 {
            return Err(Error::Config(format!(
                "relative perturbation must be finite and greater than -1, got {d}"
            )));
        }
    }

    let horizon = ctx.horizon();
    let times: Vec<f64> =
        (0..n_times).map(|j| horizon * j as f64 / (n_times - 1) as f64).collect();
    let base_synth = ctx.synthesize(base, "sensitivity", 0, &times, cutoff)?;
    let base_curve = base_synth.curve;

    let mut reports = Vec::with_capacity(SearchSpace::DIM);
    for i in 0..SearchSpace::DIM {
        let mut curves = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let mut v = base.as_array();
            v[i] *= 1.0 + delta;
            let factors = ScalingFactors::unbounded(v[0], v[1], v[2], v[3]);
            let synth = ctx.synthesize(&factors, "sensitivity", 0, &times, cutoff)?;
            let max_abs_dv = base_curve
                .samples
                .iter()
                .zip(&synth.curve.samples)
                .map(|(&(_, vb), &(_, vp))| (vb - vp).abs())
                .fold(0.0, f64::max);
            curves.push(SensitivityCurve { delta, factors, curve: synth.curve, max_abs_dv });
        }
        reports.push(SensitivityReport { factor: ctx.space.name(i).to_string(), curves });
    }

    Ok(SensitivityScan { base_factors: *base, base: base_curve, reports })
}

// ---------------------------------------------------------------------------
// Whole-battery driver
// ---------------------------------------------------------------------------

/// Outcome for one cycle of a battery: either an inference or the error that
/// prevented it. The series never aborts on a bad cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleOutcome {
    pub cycle: u32,
    pub inference: Option<CycleInference>,
    pub error: Option<String>,
}

/// Per-cycle inference results for one battery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatteryInference {
    pub battery_id: String,
    pub cycles: Vec<CycleOutcome>,
}

/// Run [`infer_cycle`] over each curve independently, recording failures
/// per cycle and continuing. An empty curve list is not an error: it yields
/// an empty result and a warning.
pub fn infer_battery(
    ctx: &InverseContext,
    battery_id: &str,
    curves: &[DischargeCurve],
    opts: &InverseOptions,
    master_seed: u64,
) -> Result<BatteryInference> {
    if curves.is_empty() {
        log::warn!("battery '{battery_id}': no discharge curves to invert");
        return Ok(BatteryInference { battery_id: battery_id.to_string(), cycles: Vec::new() });
    }
    let mut cycles = Vec::with_capacity(curves.len());
    for curve in curves {
        match infer_cycle(ctx, curve, opts, master_seed) {
            Ok(inference) => cycles.push(CycleOutcome {
                cycle: curve.cycle,
                inference: Some(inference),
                error: None,
            }),
            Err(e) => {
                log::warn!("battery '{battery_id}' cycle {}: {e}", curve.cycle);
                cycles.push(CycleOutcome {
                    cycle: curve.cycle,
                    inference: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(BatteryInference { battery_id: battery_id.to_string(), cycles })
}

/// One row of the flat summary table (one factor of one cycle).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportRow {
    pub battery: String,
    pub cycle: u32,
    pub factor: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mse_median: f64,
    pub capacity_ah: f64,
}

/// Flatten a battery inference into per-factor rows (four per successful
/// cycle; failed cycles contribute none).
pub fn export_rows(inference: &BatteryInference) -> Vec<ExportRow> {
    let mut rows = Vec::new();
    for outcome in &inference.cycles {
        let Some(inf) = &outcome.inference else { continue };
        for s in &inf.summary {
            rows.push(ExportRow {
                battery: inference.battery_id.clone(),
                cycle: inf.cycle,
                factor: s.name.clone(),
                min: s.min,
                median: s.median,
                max: s.max,
                mse_median: inf.mse_median,
                capacity_ah: inf.capacity_ah,
            });
        }
    }
    rows
}

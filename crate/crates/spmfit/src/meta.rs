//! Meta-learning of the feature basis: a Baldwinian outer evolutionary loop.
//!
//! Instead of training hidden-layer weights by gradient descent, the basis
//! is *materialized* from a small genome: per activation block, a mean and a
//! log-spread for each of the input weight groups (radial weight, temporal
//! weight, bias), plus log-space encodings of the four penalty weights
//! (ridge, PDE, IC, BC). A genome therefore has `3 blocks × 6 + 4 = 22`
//! entries regardless of the hidden width — the search space stays tiny
//! while the basis can be arbitrarily wide.
//!
//! Materialization uses *common random numbers*: the standard-normal draws
//! behind every node are seeded by a basis seed shared across all genomes of
//! a run. Two genomes therefore differ only through their distribution
//! parameters, never through sampling noise, which makes the fitness
//! landscape smooth enough for a rank-based evolution strategy.
//!
//! Fitness of a genome is the summed fine-tuning loss over a random subset
//! of training tasks: `Σ (0.1·LSE + 1.0·MSE)`, where LSE is the weighted
//! residual of the physics system and MSE the mismatch against
//! reference-solver labels on the fixed 61 × 64 grid. The subset is
//! resampled every generation (without replacement, generation-indexed
//! seed), so genomes are compared on common tasks within a generation but
//! cannot overfit a fixed subset across generations.

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Activation, FeatureBasis};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::fit::{CollocationSet, Fitter, PenaltyWeights};
use crate::metrics::{label_radii, mse, relative_l2};
use crate::model::{
    apply_scaling, ElectrodeKind, ElectrodeTask, ScalingFactors,
};
use crate::solver::{solve_reference, SolverGrid};

/// Genome length: 3 activation blocks × (mean, log-spread) × (w_r, w_t, b)
/// plus four log-penalties.
pub const GENOME_DIM: usize = 22;

/// Clamp bounds for decoded node-parameter spreads.
pub const SPREAD_BOUNDS: [f64; 2] = [1e-6, 1e3];
/// Clamp bounds for the decoded ridge penalty λ_PI.
pub const RIDGE_BOUNDS: [f64; 2] = [1e-14, 1e-6];
/// Clamp bounds for the decoded structural penalties λ_PDE, λ_IC, λ_BC.
pub const PENALTY_BOUNDS: [f64; 2] = [1e-3, 1e3];

/// Large finite penalty charged to a task whose linear solve fails even
/// after the conditioning retry.
pub const CONDITIONING_PENALTY: f64 = 1e6;

/// One training or evaluation task: the nondimensional diffusion problem
/// plus its reference-solver labels on the 61 × 64 grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaTask {
    /// Stable identifier, e.g. `train-pos-007`.
    pub id: String,
    pub task: ElectrodeTask,
    /// Row-major labels, 61 time × 64 radius.
    pub labels: Vec<f64>,
}

/// Train/test split of sampled tasks. The two sets are disjoint by
/// construction (distinct RNG draws, distinct ids).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSet {
    pub train: Vec<MetaTask>,
    pub test: Vec<MetaTask>,
}

/// Dimensional parameters drawn for one task, before label generation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TaskDraw {
    pub kind: ElectrodeKind,
    /// Sampled diffusion coefficient (m²/s).
    pub diffusion: f64,
    /// Geometric coefficient: sampled for positive tasks, the effective
    /// reference value for negative tasks (1/m²).
    pub geom_coeff: f64,
}

/// Draw task parameters only (no labels): positives vary `(D_p, G_p)` with
/// `D_p` log-uniform and `G_p` uniform, negatives vary `D_n` log-uniform.
///
/// Draw order is positives first, then negatives, from a single stream, so
/// the draws — and everything derived from them — are reproducible from the
/// seed alone.
pub fn sample_parameters(
    cfg: &Config,
    n_positive: usize,
    n_negative: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TaskDraw>> {
    let s = &cfg.sampling;
    for (name, [lo, hi]) in [
        ("d_p_range", s.d_p_range),
        ("g_p_range", s.g_p_range),
        ("d_n_range", s.d_n_range),
    ] {
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!(
                "{name} [{lo}, {hi}] is not a positive increasing interval"
            )));
        }
    }
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (rng.random_range(lo.ln()..hi.ln())).exp()
    };
    let mut draws = Vec::with_capacity(n_positive + n_negative);
    for _ in 0..n_positive {
        let d = log_uniform(rng, s.d_p_range[0], s.d_p_range[1]);
        let g = rng.random_range(s.g_p_range[0]..s.g_p_range[1]);
        draws.push(TaskDraw {
            kind: ElectrodeKind::Positive,
            diffusion: d,
            geom_coeff: g,
        });
    }
    for _ in 0..n_negative {
        let d = log_uniform(rng, s.d_n_range[0], s.d_n_range[1]);
        draws.push(TaskDraw {
            kind: ElectrodeKind::Negative,
            diffusion: d,
            geom_coeff: f64::NAN, // filled from the effective cell below
        });
    }
    Ok(draws)
}

/// Sample the full task population (train + test) and generate labels with
/// the reference solver. Deterministic given the seed; tasks are labeled in
/// parallel but stored in draw order.
pub fn sample_tasks(cfg: &Config, seed: u64) -> Result<TaskSet> {
    let cell = apply_scaling(
        &cfg.reference_cell(),
        &ScalingFactors::identity(),
        &cfg.fixed_factors(),
    )?;
    let s = &cfg.sampling;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_draws = sample_parameters(cfg, s.train_positive, s.train_negative, &mut rng)?;
    let test_draws = sample_parameters(cfg, s.test_positive, s.test_negative, &mut rng)?;

    let grid = SolverGrid {
        n_r: cfg.solver.label_mesh,
        substeps: cfg.solver.label_substeps,
        ..SolverGrid::labels()
    };
    let build = |draws: &[TaskDraw], prefix: &str| -> Result<Vec<MetaTask>> {
        let staged: Vec<(String, ElectrodeTask)> = draws
            .iter()
            .enumerate()
            .map(|(i, draw)| -> Result<(String, ElectrodeTask)> {
                let task = realize_task(&cell, draw)?;
                let tag = match task.kind {
                    ElectrodeKind::Positive => "pos",
                    ElectrodeKind::Negative => "neg",
                };
                Ok((format!("{prefix}-{tag}-{i:03}"), task))
            })
            .collect::<Result<Vec<_>>>()?;
        staged
            .into_par_iter()
            .map(|(id, task)| {
                let field = solve_reference(task.alpha, task.beta, grid)?;
                let labels = field.sample_grid(&label_radii())?;
                Ok(MetaTask { id, task, labels })
            })
            .collect()
    };
    Ok(TaskSet {
        train: build(&train_draws, "train")?,
        test: build(&test_draws, "test")?,
    })
}

/// Turn a parameter draw into a concrete electrode task on the effective
/// cell: the sampled diffusion replaces the reference value, a sampled
/// geometric coefficient is folded into the volume fraction (so the stored
/// geometry stays self-consistent), and the surface flux follows the
/// discharge sign convention.
fn realize_task(
    cell: &crate::model::EffectiveCell,
    draw: &TaskDraw,
) -> Result<ElectrodeTask> {
    let (template, sign) = match draw.kind {
        ElectrodeKind::Positive => (&cell.positive.params, 1.0),
        ElectrodeKind::Negative => (&cell.negative.params, -1.0),
    };
    let mut params = *template;
    params.diffusion = draw.diffusion;
    if draw.kind == ElectrodeKind::Positive {
        params.volume_fraction =
            params.radius / (3.0 * draw.geom_coeff * params.area * params.thickness);
        params.geom_coeff = params.derived_geom_coeff();
    }
    params.validate()?;
    let i_over_f = cell.constants.current / cell.constants.faraday;
    let flux = sign * i_over_f * params.geom_coeff;
    ElectrodeTask::new(draw.kind, params, flux, cell.constants.horizon)
}

/// A genome decoded into usable quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedGenome {
    /// Per block: means of (w_r, w_t, b).
    pub means: [[f64; 3]; 3],
    /// Per block: spreads of (w_r, w_t, b), clamped into [`SPREAD_BOUNDS`].
    pub spreads: [[f64; 3]; 3],
    /// Decoded penalty weights, clamped into their bounds.
    pub penalties: PenaltyWeights,
}

/// Decode the 22-entry genome. Layout: per block `b` the six entries
/// `[m_wr, ls_wr, m_wt, ls_wt, m_b, ls_b]` at offset `6b`, then the four
/// log-penalties `[ln λ_PI, ln λ_PDE, ln λ_IC, ln λ_BC]`.
pub fn decode_genome(genome: &[f64]) -> Result<DecodedGenome> {
    if genome.len() != GENOME_DIM {
        return Err(Error::Config(format!(
            "genome must have {GENOME_DIM} entries, got {}",
            genome.len()
        )));
    }
    if genome.iter().any(|g| !g.is_finite()) {
        return Err(Error::Config("genome contains non-finite entries".into()));
    }
    let mut means = [[0.0; 3]; 3];
    let mut spreads = [[0.0; 3]; 3];
    for b in 0..3 {
        for (slot, field) in [(0usize, 0usize), (2, 1), (4, 2)] {
            means[b][field] = genome[6 * b + slot];
            spreads[b][field] =
                genome[6 * b + slot + 1].exp().clamp(SPREAD_BOUNDS[0], SPREAD_BOUNDS[1]);
        }
    }
    let penalties = PenaltyWeights {
        ridge: genome[18].exp().clamp(RIDGE_BOUNDS[0], RIDGE_BOUNDS[1]),
        pde: genome[19].exp().clamp(PENALTY_BOUNDS[0], PENALTY_BOUNDS[1]),
        ic: genome[20].exp().clamp(PENALTY_BOUNDS[0], PENALTY_BOUNDS[1]),
        bc: genome[21].exp().clamp(PENALTY_BOUNDS[0], PENALTY_BOUNDS[1]),
    };
    Ok(DecodedGenome {
        means,
        spreads,
        penalties,
    })
}

/// Materialize a basis from a genome: every node draws three standard
/// normals from a stream seeded only by `basis_seed`, then shifts and
/// scales them by its block's decoded (mean, spread). Common random
/// numbers: the normals never depend on the genome.
pub fn materialize(
    genome: &[f64],
    hidden_width: usize,
    basis_seed: u64,
) -> Result<(FeatureBasis, PenaltyWeights)> {
    let decoded = decode_genome(genome)?;
    let blocks = Activation::split_blocks(hidden_width);
    let mut rng = ChaCha8Rng::seed_from_u64(basis_seed);
    let mut w_r = Vec::with_capacity(hidden_width);
    let mut w_t = Vec::with_capacity(hidden_width);
    let mut bias = Vec::with_capacity(hidden_width);
    for (b, &count) in blocks.iter().enumerate() {
        for _ in 0..count {
            let e_r: f64 = rng.sample(StandardNormal);
            let e_t: f64 = rng.sample(StandardNormal);
            let e_b: f64 = rng.sample(StandardNormal);
            w_r.push(decoded.means[b][0] + decoded.spreads[b][0] * e_r);
            w_t.push(decoded.means[b][1] + decoded.spreads[b][1] * e_t);
            bias.push(decoded.means[b][2] + decoded.spreads[b][2] * e_b);
        }
    }
    let basis = FeatureBasis::new(w_r, w_t, bias, blocks)?;
    Ok((basis, decoded.penalties))
}

/// The genome every meta-training run starts from: zero means, moderate
/// spreads (3 for input weights, 2 for biases), and the default penalty
/// weights in log space.
pub fn initial_genome() -> Vec<f64> {
    let ls_w = 3.0_f64.ln();
    let ls_b = 2.0_f64.ln();
    let mut g = Vec::with_capacity(GENOME_DIM);
    for _ in 0..3 {
        g.extend_from_slice(&[0.0, ls_w, 0.0, ls_w, 0.0, ls_b]);
    }
    let d = PenaltyWeights::default();
    g.extend_from_slice(&[d.ridge.ln(), d.pde.ln(), d.ic.ln(), d.bc.ln()]);
    g
}

/// Per-task outcome inside a fitness evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskFitness {
    pub task_id: String,
    /// Weighted physics residual ‖Aw − b‖² of the fine-tuned solution.
    pub lse: f64,
    /// Mean squared error against the task labels on the 61 × 64 grid.
    pub mse: f64,
    /// True when the solve failed and the task was charged
    /// [`CONDITIONING_PENALTY`] instead of `0.1·LSE + MSE`.
    pub penalized: bool,
}

impl TaskFitness {
    /// This task's contribution to the aggregate fitness.
    pub fn contribution(&self) -> f64 {
        if self.penalized {
            CONDITIONING_PENALTY
        } else {
            0.1 * self.lse + 1.0 * self.mse
        }
    }
}

/// Fitness of one genome on one task subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub generation: usize,
    /// Aggregate loss `Σ (0.1·LSE + 1.0·MSE)` over the subset (penalties
    /// included); always recomputable from `per_task`.
    pub fitness: f64,
    pub per_task: Vec<TaskFitness>,
}

/// Evaluate one genome on a task subset: materialize the basis, fine-tune
/// every task, and aggregate `0.1·LSE + 1.0·MSE` per task. A failed solve
/// charges a large finite penalty instead of aborting the generation.
pub fn evaluate_genome(
    genome: &[f64],
    tasks: &[&MetaTask],
    hidden_width: usize,
    basis_seed: u64,
    colloc: &CollocationSet,
    generation: usize,
) -> Result<FitnessRecord> {
    if tasks.is_empty() {
        return Err(Error::Config("fitness needs a non-empty task subset".into()));
    }
    let (basis, penalties) = materialize(genome, hidden_width, basis_seed)?;
    let fitter = Fitter::new(basis, penalties, colloc.clone())?;
    let mut per_task = Vec::with_capacity(tasks.len());
    for t in tasks {
        match fitter.fine_tune(t.task.alpha, t.task.beta) {
            Ok(sol) => {
                let predicted = fitter.predict_labels(&sol);
                per_task.push(TaskFitness {
                    task_id: t.id.clone(),
                    lse: sol.lse,
                    mse: mse(&predicted, &t.labels),
                    penalized: false,
                });
            }
            Err(Error::Conditioning { .. }) => {
                per_task.push(TaskFitness {
                    task_id: t.id.clone(),
                    lse: f64::NAN,
                    mse: f64::NAN,
                    penalized: true,
                });
            }
            Err(e) => return Err(e),
        }
    }
    let fitness = per_task.iter().map(TaskFitness::contribution).sum();
    Ok(FitnessRecord {
        generation,
        fitness,
        per_task,
    })
}

/// Summary row of one meta-training generation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Best fitness seen so far (elitist, non-increasing over generations).
    pub best: f64,
    /// Mean fitness of this generation's population.
    pub mean: f64,
    /// Median fitness of this generation's population.
    pub median: f64,
}

/// Terminal status of a meta-training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaStatus {
    /// The configured number of generations ran to completion.
    Completed,
    /// The best fitness failed to improve for `patience` consecutive
    /// generations and training stopped early with a warning.
    Stalled,
}

/// Result of a meta-training run: the materialized best basis, its decoded
/// penalties, and the full training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaOutcome {
    pub basis: FeatureBasis,
    pub penalties: PenaltyWeights,
    pub genome: Vec<f64>,
    pub basis_seed: u64,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    pub status: MetaStatus,
}

/// Driver abstraction over the two evolution strategies.
enum Driver {
    DiagNes(crate::es::Snes),
    Cma(crate::es::CmaEs),
}

impl Driver {
    fn ask(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        match self {
            Driver::DiagNes(es) => es.ask(rng),
            Driver::Cma(es) => es.ask(rng),
        }
    }

    fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        match self {
            Driver::DiagNes(es) => es.tell(fitness),
            Driver::Cma(es) => es.tell(fitness),
        }
    }
}

/// Run the outer evolutionary loop and return the best basis.
///
/// Per generation: draw a task subset (without replacement, seeded by the
/// generation index), evaluate the whole population on it in parallel, tell
/// the strategy, and track the best genome ever seen. Stops early with
/// [`MetaStatus::Stalled`] after `patience` generations without improvement.
pub fn run_meta_training(cfg: &Config, tasks: &TaskSet, seed: u64) -> Result<MetaOutcome> {
    let m = &cfg.meta;
    if m.population < 8 {
        return Err(Error::Config("meta population must be at least 8".into()));
    }
    if m.generations < 10 {
        return Err(Error::Config("meta training needs at least 10 generations".into()));
    }
    if tasks.train.is_empty() {
        return Err(Error::Config("meta training needs training tasks".into()));
    }
    let subset_size = m.subset_size.min(tasks.train.len()).max(1);
    let colloc = CollocationSet::tensor(m.colloc_nt, m.colloc_nr)?;

    // Independent deterministic streams for basis materialization, the ES
    // sampler, and the per-generation subset draws.
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let basis_seed: u64 = seeder.random();
    let es_seed: u64 = seeder.random();
    let subset_seed: u64 = seeder.random();

    let init = initial_genome();
    let mut driver = match m.es.as_str() {
        "diag-nes" => Driver::DiagNes(crate::es::Snes::new(
            &init,
            &vec![0.5; GENOME_DIM],
            m.population,
        )?),
        "cmaes" => Driver::Cma(crate::es::CmaEs::new(&init, 0.5, m.population)?),
        other => {
            return Err(Error::Config(format!(
                "unknown evolution strategy '{other}' (expected diag-nes or cmaes)"
            )))
        }
    };
    let mut es_rng = ChaCha8Rng::seed_from_u64(es_seed);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::with_capacity(m.generations);
    let mut since_improvement = 0usize;
    let mut status = MetaStatus::Completed;

    for generation in 0..m.generations {
        let mut subset_rng =
            ChaCha8Rng::seed_from_u64(subset_seed.wrapping_add(generation as u64));
        let subset: Vec<&MetaTask> =
            index_sample(&mut subset_rng, tasks.train.len(), subset_size)
                .into_iter()
                .map(|i| &tasks.train[i])
                .collect();

        let population = driver.ask(&mut es_rng);
        let records: Vec<FitnessRecord> = population
            .par_iter()
            .map(|genome| {
                evaluate_genome(genome, &subset, m.hidden_width, basis_seed, &colloc, generation)
            })
            .collect::<Result<Vec<_>>>()?;
        let fitness: Vec<f64> = records.iter().map(|r| r.fitness).collect();
        if fitness.iter().all(|f| *f >= CONDITIONING_PENALTY) {
            log::warn!("generation {generation}: every genome was penalized");
        }
        driver.tell(&fitness)?;

        let gen_best_idx = (0..fitness.len())
            .min_by(|&a, &b| fitness[a].total_cmp(&fitness[b]))
            .expect("non-empty population");
        let improved = best
            .as_ref()
            .is_none_or(|(_, f)| fitness[gen_best_idx] < *f);
        if improved {
            best = Some((population[gen_best_idx].clone(), fitness[gen_best_idx]));
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }

        let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
        let mut sorted = fitness.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        history.push(GenerationStats {
            generation,
            best: best.as_ref().expect("best set above").1,
            mean,
            median,
        });

        if since_improvement >= m.patience {
            log::warn!(
                "meta-training stalled: no improvement for {} generations, stopping at {generation}",
                m.patience
            );
            status = MetaStatus::Stalled;
            break;
        }
    }

    let (genome, best_fitness) = best.expect("at least one generation ran");
    let (basis, penalties) = materialize(&genome, m.hidden_width, basis_seed)?;
    Ok(MetaOutcome {
        basis,
        penalties,
        genome,
        basis_seed,
        best_fitness,
        history,
        status,
    })
}

/// Mean relative L2 error of the fine-tuned surrogate over a task list,
/// split by electrode kind: `(positive mean, negative mean)`. Either entry
/// is NaN when the list has no task of that kind.
pub fn held_out_errors(
    basis: &FeatureBasis,
    penalties: PenaltyWeights,
    colloc: &CollocationSet,
    tasks: &[MetaTask],
) -> Result<(f64, f64)> {
    let fitter = Fitter::new(basis.clone(), penalties, colloc.clone())?;
    let errors: Vec<(ElectrodeKind, f64)> = tasks
        .par_iter()
        .map(|t| -> Result<(ElectrodeKind, f64)> {
            let sol = fitter.fine_tune(t.task.alpha, t.task.beta)?;
            let predicted = fitter.predict_labels(&sol);
            Ok((t.task.kind, relative_l2(&predicted, &t.labels)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_of = |kind: ElectrodeKind| -> f64 {
        let vals: Vec<f64> = errors
            .iter()
            .filter(|(k, _)| *k == kind)
            .map(|(_, e)| *e)
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    Ok((
        mean_of(ElectrodeKind::Positive),
        mean_of(ElectrodeKind::Negative),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Small configuration for fast unit tests: few tasks, coarse labels,
    /// narrow basis, tiny collocation grid.
    fn tiny_config() -> Config {
        let mut cfg = Config::default();
        cfg.sampling.train_positive = 6;
        cfg.sampling.train_negative = 4;
        cfg.sampling.test_positive = 3;
        cfg.sampling.test_negative = 2;
        cfg.solver.label_mesh = 64;
        cfg.solver.label_substeps = 4;
        cfg.meta.population = 8;
        cfg.meta.generations = 10;
        cfg.meta.subset_size = 4;
        cfg.meta.hidden_width = 32;
        cfg.meta.colloc_nt = 13;
        cfg.meta.colloc_nr = 9;
        cfg.meta.patience = 100;
        cfg
    }

    #[test]
    fn task_sampling_is_deterministic_with_honored_counts() {
        let cfg = tiny_config();
        let a = sample_tasks(&cfg, 42).unwrap();
        let b = sample_tasks(&cfg, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap(),
            "same seed must reproduce the task set byte-for-byte"
        );
        let c = sample_tasks(&cfg, 43).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap(),
            "different seeds must differ"
        );

        assert_eq!(a.train.len(), 10);
        assert_eq!(a.test.len(), 5);
        let pos = |ts: &[MetaTask]| ts.iter().filter(|t| t.task.kind == ElectrodeKind::Positive).count();
        assert_eq!(pos(&a.train), 6);
        assert_eq!(pos(&a.test), 3);
        for t in a.train.iter().chain(&a.test) {
            assert_eq!(t.labels.len(), 61 * 64);
            assert!(t.labels.iter().all(|c| c.is_finite()));
            // Labels start at the uniform initial condition.
            assert!((t.labels[0] - 1.0).abs() < 1e-9);
        }
        // Ids are unique across the whole set.
        let mut ids: Vec<&str> = a
            .train
            .iter()
            .chain(&a.test)
            .map(|t| t.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 15);
    }

    /// The diffusion draws must be log-uniform and the geometric-coefficient
    /// draws uniform: a chi-squared test on 4000 draws with 10 bins.
    #[test]
    fn sampled_parameters_have_the_declared_distributions() {
        let cfg = Config::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = sample_parameters(&cfg, 4000, 4000, &mut rng).unwrap();

        let chi2_uniform = |values: &[f64], lo: f64, hi: f64| -> f64 {
            let bins = 10usize;
            let mut counts = vec![0usize; bins];
            for &v in values {
                assert!((lo..=hi).contains(&v), "draw {v} outside [{lo}, {hi}]");
                let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
                counts[b.min(bins - 1)] += 1;
            }
            let expected = values.len() as f64 / bins as f64;
            let chi2: f64 = counts
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2)
        };

        let s = &cfg.sampling;
        let log_dp: Vec<f64> = draws[..4000].iter().map(|d| d.diffusion.log10()).collect();
        let gp: Vec<f64> = draws[..4000].iter().map(|d| d.geom_coeff).collect();
        let log_dn: Vec<f64> = draws[4000..].iter().map(|d| d.diffusion.log10()).collect();

        let p1 = chi2_uniform(&log_dp, s.d_p_range[0].log10(), s.d_p_range[1].log10());
        let p2 = chi2_uniform(&gp, s.g_p_range[0], s.g_p_range[1]);
        let p3 = chi2_uniform(&log_dn, s.d_n_range[0].log10(), s.d_n_range[1].log10());
        for (name, p) in [("log10 D_p", p1), ("G_p", p2), ("log10 D_n", p3)] {
            assert!(p > 0.01, "{name} rejected uniformity (p = {p:.4})");
        }
    }

    #[test]
    fn genome_decode_clamps_and_rejects() {
        let mut g = initial_genome();
        assert_eq!(g.len(), GENOME_DIM);
        let d = decode_genome(&g).unwrap();
        // exp(ln x) round-trips only to a ULP; compare with tolerance.
        let want = PenaltyWeights::default();
        assert!((d.penalties.ridge - want.ridge).abs() / want.ridge < 1e-12);
        assert!((d.penalties.pde - want.pde).abs() < 1e-12);
        assert!((d.penalties.ic - want.ic).abs() < 1e-11);
        assert!((d.penalties.bc - want.bc).abs() < 1e-11);
        assert!((d.spreads[0][0] - 3.0).abs() < 1e-12);
        assert!((d.spreads[2][2] - 2.0).abs() < 1e-12);

        // Out-of-range log values clamp rather than explode.
        g[1] = 100.0; // spread exp(100) → upper clamp
        g[18] = 0.0; // λ_PI = 1 → clamped to 1e-6
        g[19] = -100.0; // λ_PDE → lower clamp
        let d = decode_genome(&g).unwrap();
        assert_eq!(d.spreads[0][0], SPREAD_BOUNDS[1]);
        assert_eq!(d.penalties.ridge, RIDGE_BOUNDS[1]);
        assert_eq!(d.penalties.pde, PENALTY_BOUNDS[0]);

        assert!(decode_genome(&g[..10]).is_err());
        g[0] = f64::NAN;
        assert!(decode_genome(&g).is_err());
    }

    /// Common random numbers: with the same basis seed, two genomes see the
    /// same node-level normal draws, so an affine change of the distribution
    /// parameters is an exact affine change of every node parameter.
    #[test]
    fn materialization_uses_common_random_numbers() {
        // Unit genome: means 0, spreads 1 → node params are the raw normals.
        let mut unit = vec![0.0; GENOME_DIM];
        for b in 0..3 {
            for slot in [1, 3, 5] {
                unit[6 * b + slot] = 0.0; // ln 1
            }
        }
        unit[18] = (1e-10_f64).ln();
        let (eps, _) = materialize(&unit, 40, 99).unwrap();

        let mut shifted = unit.clone();
        for b in 0..3 {
            shifted[6 * b] = 2.0; // m_wr = 2
            shifted[6 * b + 1] = 3.0_f64.ln(); // s_wr = 3
        }
        let (moved, _) = materialize(&shifted, 40, 99).unwrap();
        let spread = 3.0_f64.ln().exp(); // the decoded value, one ULP off 3.0
        for j in 0..40 {
            let expected = 2.0 + spread * eps.w_r[j];
            assert_eq!(
                moved.w_r[j].to_bits(),
                expected.to_bits(),
                "node {j}: CRN affine property violated"
            );
            // Untouched groups are bitwise identical.
            assert_eq!(moved.w_t[j].to_bits(), eps.w_t[j].to_bits());
            assert_eq!(moved.b[j].to_bits(), eps.b[j].to_bits());
        }

        // A different basis seed rolls different normals.
        let (other, _) = materialize(&unit, 40, 100).unwrap();
        assert_ne!(other.w_r[0].to_bits(), eps.w_r[0].to_bits());
    }

    #[test]
    fn fitness_is_deterministic_and_decomposable() {
        let cfg = tiny_config();
        let tasks = sample_tasks(&cfg, 11).unwrap();
        let colloc = CollocationSet::tensor(13, 9).unwrap();
        let subset: Vec<&MetaTask> = tasks.train.iter().take(3).collect();
        let genome = initial_genome();

        let a = evaluate_genome(&genome, &subset, 32, 5, &colloc, 0).unwrap();
        let b = evaluate_genome(&genome, &subset, 32, 5, &colloc, 0).unwrap();
        assert_eq!(a.fitness.to_bits(), b.fitness.to_bits());

        let recomputed: f64 = a.per_task.iter().map(TaskFitness::contribution).sum();
        assert!(
            ((a.fitness - recomputed) / recomputed).abs() < 1e-10,
            "aggregate must decompose into per-task parts"
        );
        assert_eq!(a.per_task.len(), 3);
        for t in &a.per_task {
            assert!(!t.penalized);
            assert!(t.lse >= 0.0 && t.mse >= 0.0);
        }

        // Single-task subset: the aggregate is exactly that task's value.
        let single = evaluate_genome(&genome, &subset[..1], 32, 5, &colloc, 0).unwrap();
        assert_eq!(
            single.fitness,
            0.1 * single.per_task[0].lse + single.per_task[0].mse
        );
    }

    /// A degenerate genome (zero means, collapsed spreads) yields all-zero
    /// features: the solution can only predict ĉ = 0, so its fitness is
    /// dominated by the initial-condition mismatch and must be far worse
    /// than even the untrained initial genome.
    #[test]
    fn degenerate_genome_is_strictly_worse() {
        let cfg = tiny_config();
        let tasks = sample_tasks(&cfg, 13).unwrap();
        let colloc = CollocationSet::tensor(13, 9).unwrap();
        let subset: Vec<&MetaTask> = tasks.train.iter().take(4).collect();

        let mut degenerate = vec![0.0; GENOME_DIM];
        for b in 0..3 {
            for slot in [1, 3, 5] {
                degenerate[6 * b + slot] = -1e9; // spreads collapse to the floor
            }
        }
        // Spreads clamp to 1e-6, not zero, so features are tiny rather than
        // exactly zero; a vanishing ridge would let the solver blow the
        // output weights up to compensate. The upper ridge clamp keeps the
        // weights bounded and the prediction near zero.
        degenerate[18] = 0.0; // exp(0) = 1 → clamped to the 1e-6 ceiling
        let bad = evaluate_genome(&degenerate, &subset, 32, 5, &colloc, 0).unwrap();
        let init = evaluate_genome(&initial_genome(), &subset, 32, 5, &colloc, 0).unwrap();
        assert!(
            bad.fitness > 10.0 * init.fitness.max(1e-30),
            "degenerate {} vs initial {}",
            bad.fitness,
            init.fitness
        );
        // ĉ ≡ 0 prediction against ĉ ≈ 1 labels → MSE near 1 per task.
        for t in &bad.per_task {
            assert!(t.mse > 0.5, "IC mismatch must dominate, got MSE {}", t.mse);
        }
    }

    #[test]
    fn meta_training_smoke_run_is_reproducible_and_improves() {
        let cfg = tiny_config();
        let tasks = sample_tasks(&cfg, 21).unwrap();
        let out1 = run_meta_training(&cfg, &tasks, 77).unwrap();
        let out2 = run_meta_training(&cfg, &tasks, 77).unwrap();

        assert_eq!(
            serde_json::to_string(&out1.basis).unwrap(),
            serde_json::to_string(&out2.basis).unwrap(),
            "same seed must reproduce the basis"
        );
        assert_eq!(out1.history.len(), cfg.meta.generations);
        assert_eq!(out1.status, MetaStatus::Completed);

        // Elitist trace is non-increasing, and the run improved on the
        // first generation's best.
        for w in out1.history.windows(2) {
            assert!(w[1].best <= w[0].best);
        }
        assert!(out1.best_fitness <= out1.history[0].best);
        assert!(out1.best_fitness.is_finite());
        assert_eq!(out1.basis.len(), cfg.meta.hidden_width);

        // The returned basis+penalties must reproduce the recorded best
        // fitness path end-to-end: fine-tuning the held-out tasks works.
        let colloc = CollocationSet::tensor(cfg.meta.colloc_nt, cfg.meta.colloc_nr).unwrap();
        let (pos_err, neg_err) =
            held_out_errors(&out1.basis, out1.penalties, &colloc, &tasks.test).unwrap();
        assert!(pos_err.is_finite() && neg_err.is_finite());
    }

    /// Patience: with an absurdly low patience the run stops early and
    /// reports `Stalled` instead of burning the full generation budget.
    #[test]
    fn stalled_training_stops_early_with_warning_status() {
        let mut cfg = tiny_config();
        cfg.meta.patience = 1;
        cfg.meta.generations = 50;
        let tasks = sample_tasks(&cfg, 23).unwrap();
        let out = run_meta_training(&cfg, &tasks, 3).unwrap();
        if out.status == MetaStatus::Stalled {
            assert!(out.history.len() < cfg.meta.generations);
        } else {
            // A lucky seed can keep improving for all 50 generations; the
            // trace must then be strictly complete.
            assert_eq!(out.history.len(), cfg.meta.generations);
        }
    }

    /// Subset resampling must cycle through the training set: over 40
    /// generations of size-4 subsets from 10 tasks, every task is touched
    /// with overwhelming probability.
    #[test]
    fn subset_resampling_touches_every_task() {
        let n_train = 10usize;
        let subset_size = 4usize;
        let mut touched = vec![false; n_train];
        for generation in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000u64.wrapping_add(generation));
            for i in index_sample(&mut rng, n_train, subset_size) {
                touched[i] = true;
            }
        }
        assert!(touched.iter().all(|&t| t), "tasks never sampled: {touched:?}");
    }
}

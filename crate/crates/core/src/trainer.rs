//! Training loop: alternate neighbour-probability updates with per-set
//! proximal-gradient solves over the whole training database.

use nalgebra::DMatrix;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::hull::{build_hull, AffineHull, ImageSet, SetRepresentation};
use crate::neighborhood::{
    distance_matrix, hull_points, median_heuristic_sigma, probabilities_from_distances, refresh_distances,
    KernelConfig, NeighborProbabilities,
};
use crate::solver::{apg_solve, representation_error, NeighborTerm, SolverConfig};

/// Default factor applied to the median-heuristic band-width.
pub const DEFAULT_SIGMA_SCALE: f64 = 0.35;

/// Kernel band-width: fixed, or picked from the initial distances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sigma {
    /// `sigma = scale * sqrt(median / 2)`, where `median` is the median
    /// pairwise hull distance at initialization.
    Auto { scale: f64 },
    Fixed(f64),
}

impl Default for Sigma {
    fn default() -> Self {
        Sigma::Auto { scale: DEFAULT_SIGMA_SCALE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Maximum number of passes over the training sets.
    pub outer_iters: usize,
    pub solver: SolverConfig,
    pub sigma: Sigma,
    /// Fraction of squared singular-value mass kept by each hull.
    pub energy: f64,
    pub seed: u64,
    /// Compute probabilities once and keep them fixed (M-step only passes).
    pub freeze_probabilities: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            outer_iters: 10,
            solver: SolverConfig::default(),
            sigma: Sigma::default(),
            energy: 0.98,
            seed: 0,
            freeze_probabilities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetRecord {
    pub id: String,
    pub label: usize,
    pub hull: AffineHull,
    pub rep: SetRepresentation,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainDiagnostics {
    /// Reduced objective at initialization followed by one value per pass.
    pub objective_trace: Vec<f64>,
    pub passes: usize,
    pub solver_invocations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub records: Vec<SetRecord>,
    pub label_names: Vec<String>,
    pub config: TrainConfig,
    /// Band-width actually used (resolved when the config asked for `Auto`).
    pub sigma: f64,
    pub diagnostics: TrainDiagnostics,
}

impl TrainedModel {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.hull.dim())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig::new(self.sigma)
    }
}

/// Reduced objective with fixed probabilities:
/// `sum_i R_i + lambda ||alpha_i||_1 + gamma sum_j P_ij D_ij`.
pub fn total_objective(
    sets: &[ImageSet],
    hulls: &[AffineHull],
    reps: &[SetRepresentation],
    probs: &NeighborProbabilities,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    if sets.len() != hulls.len() || probs.len() != sets.len() {
        return Err(Error::input("objective inputs have inconsistent lengths"));
    }
    let dist = distance_matrix(&hull_points(hulls, reps)?);
    objective_from_distances(sets, hulls, reps, probs, &dist, lambda, gamma)
}

fn objective_from_distances(
    sets: &[ImageSet],
    hulls: &[AffineHull],
    reps: &[SetRepresentation],
    probs: &NeighborProbabilities,
    dist: &DMatrix<f64>,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (i, ((set, hull), rep)) in sets.iter().zip(hulls).zip(reps).enumerate() {
        total += representation_error(set, hull, rep)? + lambda * rep.alpha.lp_norm(1);
        let margin: f64 = (0..sets.len()).map(|j| probs.combined[(i, j)] * dist[(i, j)]).sum();
        total += gamma * margin;
    }
    Ok(total)
}

/// Neighbour terms of set `i`: weight `P_ij + P_ji` and the current point of `j`.
pub(crate) fn neighbor_terms(
    i: usize,
    probs: &NeighborProbabilities,
    points: &[nalgebra::DVector<f64>],
) -> Vec<NeighborTerm> {
    (0..points.len())
        .filter(|&j| j != i)
        .filter_map(|j| {
            let weight = probs.pair_weight(i, j);
            (weight != 0.0).then(|| NeighborTerm { weight, point: points[j].clone() })
        })
        .collect()
}

fn validate(dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<usize>> {
    cfg.solver.validate()?;
    match cfg.sigma {
        Sigma::Fixed(s) => {
            KernelConfig::new(s)?;
        }
        Sigma::Auto { scale } => {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::input(format!("sigma scale must be positive and finite, got {scale}")));
            }
        }
    }
    if dataset.sets.len() < 2 {
        return Err(Error::input(format!(
            "training needs at least two sets, got {}",
            dataset.sets.len()
        )));
    }
    let dim = dataset.sets[0].dim();
    let mut labels = Vec::with_capacity(dataset.sets.len());
    for set in &dataset.sets {
        if set.dim() != dim {
            return Err(Error::input(format!(
                "set '{}' has dimension {} but expected {dim}",
                set.id,
                set.dim()
            )));
        }
        match set.label {
            Some(l) if l < dataset.label_names.len() => labels.push(l),
            Some(l) => return Err(Error::input(format!("set '{}' has unknown class index {l}", set.id))),
            None => return Err(Error::input(format!("training set '{}' has no label", set.id))),
        }
    }
    Ok(labels)
}

fn warn_degenerate_classes(labels: &[usize], num_classes: usize) {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        log::warn!("only one class present: no nearest-miss candidates, margin term has no miss part");
    }
    for (class, &c) in counts.iter().enumerate() {
        if c == 1 {
            log::warn!("class {class} has a single set: its hit term is dropped");
        }
    }
}

/// Learns `(alpha_i, v_i)` for every training set.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    let labels = validate(dataset, cfg)?;
    warn_degenerate_classes(&labels, dataset.label_names.len());
    let sets = &dataset.sets;
    let n = sets.len();

    let hulls = sets
        .iter()
        .map(|s| build_hull(s, cfg.energy).map_err(|e| e.in_set(&s.id)))
        .collect::<Result<Vec<_>>>()?;
    let mut reps: Vec<SetRepresentation> = sets
        .iter()
        .zip(&hulls)
        .map(|(s, h)| SetRepresentation::initial(s.len(), h.rank()))
        .collect();
    let mut points = hull_points(&hulls, &reps)?;
    let mut dist = distance_matrix(&points);

    let sigma = match cfg.sigma {
        Sigma::Fixed(s) => s,
        Sigma::Auto { scale } => match median_heuristic_sigma(&dist) {
            Some(s) => scale * s,
            None => {
                log::warn!("median pairwise distance is zero; falling back to sigma = 1");
                1.0
            }
        },
    };
    let kernel = KernelConfig::new(sigma)?;
    log::info!("training {n} sets, sigma = {sigma}");

    let (lambda, gamma) = (cfg.solver.lambda, cfg.solver.gamma);
    let mut probs = probabilities_from_distances(&dist, &labels, &kernel);
    let mut diagnostics = TrainDiagnostics {
        objective_trace: vec![objective_from_distances(sets, &hulls, &reps, &probs, &dist, lambda, gamma)?],
        ..TrainDiagnostics::default()
    };

    for pass in 1..=cfg.outer_iters {
        for i in 0..n {
            if !cfg.freeze_probabilities {
                probs = probabilities_from_distances(&dist, &labels, &kernel);
            }
            let terms = neighbor_terms(i, &probs, &points);
            let outcome = apg_solve(&sets[i], &hulls[i], &terms, &cfg.solver, &reps[i]).map_err(|e| e.in_set(&sets[i].id))?;
            diagnostics.solver_invocations += 1;
            reps[i] = outcome.rep;
            points[i] = crate::hull::hull_point(&hulls[i], &reps[i].v)?;
            refresh_distances(&mut dist, &points, i);
        }
        if !cfg.freeze_probabilities {
            probs = probabilities_from_distances(&dist, &labels, &kernel);
        }
        let objective = objective_from_distances(sets, &hulls, &reps, &probs, &dist, lambda, gamma)?;
        if !objective.is_finite() {
            return Err(Error::Numerical { iteration: pass, detail: "training objective is not finite".into() });
        }
        let previous = *diagnostics.objective_trace.last().expect("trace starts with the initial objective");
        diagnostics.objective_trace.push(objective);
        diagnostics.passes = pass;
        log::info!("pass {pass}: objective {objective}");
        if (previous - objective).abs() < cfg.solver.tol * previous.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }

    let records = sets
        .iter()
        .zip(hulls)
        .zip(reps)
        .zip(&labels)
        .map(|(((s, hull), rep), &label)| SetRecord { id: s.id.clone(), label, hull, rep })
        .collect();
    Ok(TrainedModel {
        records,
        label_names: dataset.label_names.clone(),
        config: *cfg,
        sigma,
        diagnostics,
    })
}

/// Mean probabilistic margin over all sets for the given coefficients.
pub fn mean_margin(hulls: &[AffineHull], reps: &[SetRepresentation], labels: &[usize], kernel: &KernelConfig) -> Result<f64> {
    let dist = distance_matrix(&hull_points(hulls, reps)?);
    let probs = probabilities_from_distances(&dist, labels, kernel);
    let n = labels.len();
    Ok((0..n).map(|i| crate::neighborhood::probabilistic_margin(i, &probs, &dist)).sum::<f64>() / n as f64)
}

//! Classification of an unseen set by per-class margin energy.
//!
//! For every hypothesis `y` the test set's coefficients are optimized with
//! training sets of class `y` as hit candidates and all others as miss
//! candidates; the training coefficients stay frozen. The label is the class
//! with the lowest energy.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hull::{build_hull, hull_point, AffineHull, ImageSet, SetRepresentation};
use crate::neighborhood::{normalized_kernel, squared_distance, KernelConfig};
use crate::solver::{apg_solve, composite_objective, NeighborTerm, SolverConfig};
use crate::trainer::TrainedModel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyConfig {
    /// Maximum number of alternating probability / coefficient updates.
    pub outer_iters: usize,
    pub solver: SolverConfig,
    pub energy: f64,
    pub sigma: f64,
}

impl ClassifyConfig {
    /// Reuses the training budget, solver settings and band-width.
    pub fn from_model(model: &TrainedModel) -> Self {
        ClassifyConfig {
            outer_iters: model.config.outer_iters,
            solver: model.config.solver,
            energy: model.config.energy,
            sigma: model.sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class_index: usize,
    pub energy: f64,
    /// Number of outer (probability update + solve) iterations run.
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub label: usize,
    pub scores: Vec<ClassScore>,
    /// Number of per-class energy solves performed.
    pub energy_solves: usize,
}

/// Hit-minus-miss weights of every training set for hypothesis `y`.
fn conditional_terms(h: &DVector<f64>, points: &[DVector<f64>], labels: &[usize], y: usize, kernel: &KernelConfig) -> Vec<NeighborTerm> {
    let dists: Vec<f64> = points.iter().map(|p| squared_distance(h, p)).collect();
    let mut weights = vec![0.0; points.len()];
    for (in_pool, sign) in [(true, 1.0), (false, -1.0)] {
        let pool: Vec<usize> = (0..points.len()).filter(|&j| (labels[j] == y) == in_pool).collect();
        let ds: Vec<f64> = pool.iter().map(|&j| dists[j]).collect();
        let (w, fell_back) = normalized_kernel(&ds, kernel);
        if fell_back {
            log::warn!("degenerate kernel weights for class hypothesis {y}; using uniform weights");
        }
        for (&j, p) in pool.iter().zip(w) {
            weights[j] += sign * p;
        }
    }
    weights
        .into_iter()
        .zip(points)
        .filter(|(w, _)| *w != 0.0)
        .map(|(weight, p)| NeighborTerm { weight, point: p.clone() })
        .collect()
}

fn training_points(model: &TrainedModel) -> Result<Vec<DVector<f64>>> {
    model.records.iter().map(|r| hull_point(&r.hull, &r.rep.v)).collect()
}

fn check_test_set(test: &ImageSet, model: &TrainedModel) -> Result<()> {
    if model.records.is_empty() || model.num_classes() == 0 {
        return Err(Error::input("model has no training sets"));
    }
    if test.dim() != model.dim() {
        return Err(Error::input(format!(
            "test set '{}' has dimension {} but the model expects {}",
            test.id,
            test.dim(),
            model.dim()
        )));
    }
    Ok(())
}

fn energy_for_class(
    test: &ImageSet,
    hull: &AffineHull,
    points: &[DVector<f64>],
    labels: &[usize],
    y: usize,
    cfg: &ClassifyConfig,
) -> Result<ClassScore> {
    let kernel = KernelConfig::new(cfg.sigma)?;
    let mut rep = SetRepresentation::initial(test.len(), hull.rank());

    if cfg.outer_iters == 0 {
        let terms = conditional_terms(&hull.mean, points, labels, y, &kernel);
        let energy = composite_objective(test, hull, &rep, &terms, &cfg.solver)?;
        return Ok(ClassScore { class_index: y, energy, iters: 0, converged: false });
    }

    let mut energy = f64::NAN;
    let mut iters = 0;
    let mut converged = false;
    for t in 1..=cfg.outer_iters {
        iters = t;
        let h = hull_point(hull, &rep.v)?;
        let terms = conditional_terms(&h, points, labels, y, &kernel);
        let out = apg_solve(test, hull, &terms, &cfg.solver, &rep)?;
        rep = out.rep;
        let previous = energy;
        energy = out.objective;
        if previous.is_finite() && (previous - energy).abs() < cfg.solver.tol * previous.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(ClassScore { class_index: y, energy, iters, converged })
}

/// Energy of the hypothesis that `test` belongs to class `y`.
pub fn class_energy(test: &ImageSet, model: &TrainedModel, y: usize, cfg: &ClassifyConfig) -> Result<ClassScore> {
    check_test_set(test, model)?;
    if y >= model.num_classes() {
        return Err(Error::input(format!(
            "unknown class index {y} (model has {} classes)",
            model.num_classes()
        )));
    }
    let hull = build_hull(test, cfg.energy).map_err(|e| e.in_set(&test.id))?;
    let points = training_points(model)?;
    energy_for_class(test, &hull, &points, &model.labels(), y, cfg).map_err(|e| e.in_set(&test.id))
}

/// Assigns the class of minimal energy; ties go to the lowest class index.
pub fn classify(test: &ImageSet, model: &TrainedModel, cfg: &ClassifyConfig) -> Result<Classification> {
    check_test_set(test, model)?;
    let hull = build_hull(test, cfg.energy).map_err(|e| e.in_set(&test.id))?;
    let points = training_points(model)?;
    let labels = model.labels();

    let mut scores = Vec::with_capacity(model.num_classes());
    let mut energy_solves = 0;
    for y in 0..model.num_classes() {
        scores.push(energy_for_class(test, &hull, &points, &labels, y, cfg).map_err(|e| e.in_set(&test.id))?);
        energy_solves += 1;
    }
    let label = argmin_energy(&scores);
    Ok(Classification { label, scores, energy_solves })
}

/// Index of the lowest energy, first one on ties.
pub fn argmin_energy(scores: &[ClassScore]) -> usize {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if s.energy < scores[best].energy {
            best = k;
        }
    }
    scores[best].class_index
}

/// Label of the training set whose mean is closest to the test mean.
pub fn baseline_nearest_mean(test: &ImageSet, model: &TrainedModel) -> Result<usize> {
    check_test_set(test, model)?;
    let mean = test.column_mean();
    let mut best: Option<(f64, usize)> = None;
    for rec in &model.records {
        let d = squared_distance(&mean, &rec.hull.mean);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, rec.label));
        }
    }
    Ok(best.expect("model has at least one record").1)
}

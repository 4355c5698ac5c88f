//! Central finite-difference check of the solver's analytic gradients on
//! random subproblems.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::hull::{build_hull, AffineHull, ImageSet};
use crate::solver::{smooth_gradients, smooth_value, NeighborTerm};

pub const FD_STEP: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-5;

/// Gradient under test: `(grad_alpha, grad_v)` for an instance.
pub type GradientFn<'a> = &'a dyn Fn(&GradInstance) -> Result<(DVector<f64>, DVector<f64>)>;

/// A random subproblem with `D <= 20`, `N <= 10`, `r <= 5`.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub set: ImageSet,
    pub hull: AffineHull,
    pub terms: Vec<NeighborTerm>,
    pub alpha: DVector<f64>,
    pub v: DVector<f64>,
    pub gamma: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Result<GradInstance> {
    let dim = rng.random_range(1..=20);
    let n = rng.random_range(1..=10);
    let data = DMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0));
    let set = ImageSet::new("gradcheck", Some(0), data)?;
    let mut hull = build_hull(&set, 1.0)?;
    let rank = hull.rank().min(5);
    hull.basis = hull.basis.columns(0, rank).clone_owned();
    let n_terms = rng.random_range(0..=6);
    let terms = (0..n_terms)
        .map(|_| NeighborTerm {
            weight: rng.random_range(-1.0..1.0),
            point: DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0)),
        })
        .collect();
    Ok(GradInstance {
        alpha: DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
        v: DVector::from_fn(rank, |_, _| rng.random_range(-1.0..1.0)),
        gamma: rng.random_range(0.0..2.0),
        set,
        hull,
        terms,
    })
}

/// Per-coordinate error `|fd - g| / max(1, |fd|, |g|)`, maximised.
pub fn max_relative_error(
    inst: &GradInstance,
    gradient: GradientFn,
) -> Result<f64> {
    let f = |a: &DVector<f64>, v: &DVector<f64>| smooth_value(&inst.set, &inst.hull, a, v, &inst.terms, inst.gamma);
    let (ga, gv) = gradient(inst)?;
    let err = |fd: f64, g: f64| (fd - g).abs() / fd.abs().max(g.abs()).max(1.0);
    let mut worst = 0.0f64;
    for k in 0..inst.alpha.len() {
        let (mut p, mut m) = (inst.alpha.clone(), inst.alpha.clone());
        p[k] += FD_STEP;
        m[k] -= FD_STEP;
        let fd = (f(&p, &inst.v)? - f(&m, &inst.v)?) / (2.0 * FD_STEP);
        worst = worst.max(err(fd, ga[k]));
    }
    for k in 0..inst.v.len() {
        let (mut p, mut m) = (inst.v.clone(), inst.v.clone());
        p[k] += FD_STEP;
        m[k] -= FD_STEP;
        let fd = (f(&inst.alpha, &p)? - f(&inst.alpha, &m)?) / (2.0 * FD_STEP);
        worst = worst.max(err(fd, gv[k]));
    }
    Ok(worst)
}

pub fn analytic_gradient(inst: &GradInstance) -> Result<(DVector<f64>, DVector<f64>)> {
    smooth_gradients(&inst.set, &inst.hull, &inst.alpha, &inst.v, &inst.terms, inst.gamma)
}

/// Maximum error over `trials` random instances drawn from `seed`.
pub fn run(
    trials: usize,
    seed: u64,
    gradient: GradientFn,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inst = random_instance(&mut rng)?;
        worst = worst.max(max_relative_error(&inst, gradient)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_pass() {
        let e = run(50, 1, &analytic_gradient).unwrap();
        assert!(e < PASS_THRESHOLD, "{e}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let corrupt = |inst: &GradInstance| {
            let (ga, gv) = analytic_gradient(inst)?;
            Ok((ga * 1.01, gv))
        };
        assert!(run(10, 1, &corrupt).unwrap() > PASS_THRESHOLD);
    }

    #[test]
    fn same_seed_same_error() {
        assert_eq!(run(3, 9, &analytic_gradient).unwrap(), run(3, 9, &analytic_gradient).unwrap());
    }
}

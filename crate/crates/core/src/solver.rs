//! Accelerated proximal gradient (FISTA) for one set's subproblem.
//!
//! For set `i` with all other sets fixed, the objective is
//!
//! ```text
//! H(alpha, v) = f(alpha, v) + lambda * ||alpha||_1
//! f(alpha, v) = ||h - X alpha||^2 + gamma * sum_j w_j ||h - p_j||^2,   h = mu + U v
//! ```
//!
//! where each neighbour term carries a weight `w_j` (hit minus miss
//! probabilities, both directions) and the neighbour's current hull point
//! `p_j`. Only `alpha` is non-smooth, so its prox step is soft-thresholding
//! while `v` takes a plain gradient step.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hull::{hull_point, AffineHull, ImageSet, SetRepresentation};

/// Backtracking gives up once the step constant passes this bound.
const MAX_LIPSCHITZ: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Weight of the l1 penalty on `alpha`.
    pub lambda: f64,
    /// Weight of the margin term.
    pub gamma: f64,
    /// Backtracking growth factor, `> 1`.
    pub eta: f64,
    /// Initial step constant.
    pub l0: f64,
    pub max_inner_iters: usize,
    /// Stop once the relative change of the objective drops below this.
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1.0,
            gamma: 1e-3,
            eta: 2.0,
            l0: 1.0,
            max_inner_iters: 100,
            tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.lambda, self.gamma, self.eta, self.l0, self.tol]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::input("solver parameters must be finite"));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 || self.tol < 0.0 {
            return Err(Error::input("lambda, gamma and tol must be non-negative"));
        }
        if self.eta <= 1.0 {
            return Err(Error::input(format!("eta must exceed 1, got {}", self.eta)));
        }
        if self.l0 <= 0.0 {
            return Err(Error::input(format!("L0 must be positive, got {}", self.l0)));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::input("max_inner_iters must be positive"));
        }
        Ok(())
    }
}

/// A fixed neighbour in the margin term: weight and hull point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTerm {
    pub weight: f64,
    pub point: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Best iterate seen, including the initial point.
    pub rep: SetRepresentation,
    pub objective: f64,
    pub initial_objective: f64,
    pub iters: usize,
    /// True if the relative-change test fired before the iteration cap.
    pub converged: bool,
}

/// One accepted proximal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub lipschitz: f64,
    /// `H` at the accepted prox point.
    pub objective: f64,
    /// Quadratic majorizer `Q_L` at the same point, including the l1 term.
    pub majorizer: f64,
    /// Rounding allowance used in the acceptance test `objective <= majorizer + slack`.
    pub slack: f64,
    pub backtracks: usize,
}

fn residual(set: &ImageSet, hull: &AffineHull, alpha: &DVector<f64>, h: &DVector<f64>) -> DVector<f64> {
    debug_assert_eq!(hull.dim(), set.dim());
    h - &set.data * alpha
}

fn check_inputs(set: &ImageSet, hull: &AffineHull, alpha: &DVector<f64>, v: &DVector<f64>, terms: &[NeighborTerm]) -> Result<()> {
    if hull.dim() != set.dim() {
        return Err(Error::input(format!(
            "hull dimension {} does not match set dimension {}",
            hull.dim(),
            set.dim()
        )));
    }
    if alpha.len() != set.len() || v.len() != hull.rank() {
        return Err(Error::input(format!(
            "coefficient lengths (alpha {}, v {}) do not match set (images {}, rank {})",
            alpha.len(),
            v.len(),
            set.len(),
            hull.rank()
        )));
    }
    if let Some(t) = terms.iter().find(|t| t.point.len() != set.dim() || !t.weight.is_finite()) {
        return Err(Error::input(format!(
            "neighbour term has dimension {} (expected {}) or non-finite weight {}",
            t.point.len(),
            set.dim(),
            t.weight
        )));
    }
    Ok(())
}

fn smooth_value_unchecked(
    set: &ImageSet,
    hull: &AffineHull,
    alpha: &DVector<f64>,
    v: &DVector<f64>,
    terms: &[NeighborTerm],
    gamma: f64,
) -> f64 {
    let h = &hull.mean + &hull.basis * v;
    let rep_err = residual(set, hull, alpha, &h).norm_squared();
    let margin: f64 = terms.iter().map(|t| t.weight * (&h - &t.point).norm_squared()).sum();
    rep_err + gamma * margin
}

fn smooth_gradients_unchecked(
    set: &ImageSet,
    hull: &AffineHull,
    alpha: &DVector<f64>,
    v: &DVector<f64>,
    terms: &[NeighborTerm],
    gamma: f64,
) -> (f64, DVector<f64>, DVector<f64>) {
    let h = &hull.mean + &hull.basis * v;
    let r = residual(set, hull, alpha, &h);
    let mut value = r.norm_squared();
    let grad_alpha = set.data.tr_mul(&r) * -2.0;

    // d/dh of the whole smooth part, then chain through U
    let mut dh = &r * 2.0;
    let mut margin = 0.0;
    for t in terms {
        let diff = &h - &t.point;
        margin += t.weight * diff.norm_squared();
        dh.axpy(2.0 * gamma * t.weight, &diff, 1.0);
    }
    value += gamma * margin;
    let grad_v = hull.basis.tr_mul(&dh);
    (value, grad_alpha, grad_v)
}

/// Smooth part `f`: representation error plus the weighted margin term.
pub fn smooth_value(
    set: &ImageSet,
    hull: &AffineHull,
    alpha: &DVector<f64>,
    v: &DVector<f64>,
    terms: &[NeighborTerm],
    gamma: f64,
) -> Result<f64> {
    check_inputs(set, hull, alpha, v, terms)?;
    Ok(smooth_value_unchecked(set, hull, alpha, v, terms, gamma))
}

/// Gradients of [`smooth_value`] with respect to `alpha` and `v`.
pub fn smooth_gradients(
    set: &ImageSet,
    hull: &AffineHull,
    alpha: &DVector<f64>,
    v: &DVector<f64>,
    terms: &[NeighborTerm],
    gamma: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_inputs(set, hull, alpha, v, terms)?;
    let (_, ga, gv) = smooth_gradients_unchecked(set, hull, alpha, v, terms, gamma);
    Ok((ga, gv))
}

/// Representation error `||(mu + U v) - X alpha||^2`.
pub fn representation_error(set: &ImageSet, hull: &AffineHull, rep: &SetRepresentation) -> Result<f64> {
    let h = hull_point(hull, &rep.v)?;
    if rep.alpha.len() != set.len() {
        return Err(Error::input("alpha length does not match set size"));
    }
    Ok(residual(set, hull, &rep.alpha, &h).norm_squared())
}

#[inline]
pub fn soft_threshold_scalar(w: f64, eps: f64) -> f64 {
    (w.abs() - eps).max(0.0) * w.signum()
}

/// Elementwise `(|w| - eps)_+ * sgn(w)`, the prox operator of `eps * ||.||_1`.
pub fn soft_threshold(w: &DVector<f64>, eps: f64) -> DVector<f64> {
    w.map(|x| if x == 0.0 { 0.0 } else { soft_threshold_scalar(x, eps) })
}

/// Full composite objective `H = f + lambda * ||alpha||_1`.
pub fn composite_objective(
    set: &ImageSet,
    hull: &AffineHull,
    rep: &SetRepresentation,
    terms: &[NeighborTerm],
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(smooth_value(set, hull, &rep.alpha, &rep.v, terms, cfg.gamma)? + cfg.lambda * rep.alpha.lp_norm(1))
}

pub fn apg_solve(
    set: &ImageSet,
    hull: &AffineHull,
    terms: &[NeighborTerm],
    cfg: &SolverConfig,
    init: &SetRepresentation,
) -> Result<SolveOutcome> {
    apg_solve_observed(set, hull, terms, cfg, init, &mut |_| {})
}

/// [`apg_solve`] with a callback invoked after every accepted step.
pub fn apg_solve_observed(
    set: &ImageSet,
    hull: &AffineHull,
    terms: &[NeighborTerm],
    cfg: &SolverConfig,
    init: &SetRepresentation,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<SolveOutcome> {
    cfg.validate()?;
    check_inputs(set, hull, &init.alpha, &init.v, terms)?;
    let gamma = cfg.gamma;
    let l1 = |a: &DVector<f64>| cfg.lambda * a.lp_norm(1);

    let initial_objective = smooth_value_unchecked(set, hull, &init.alpha, &init.v, terms, gamma) + l1(&init.alpha);
    if !initial_objective.is_finite() {
        return Err(Error::Numerical { iteration: 0, detail: "initial objective is not finite".into() });
    }

    let (mut alpha_prev, mut v_prev) = (init.alpha.clone(), init.v.clone());
    let (mut alpha_prev2, mut v_prev2) = (init.alpha.clone(), init.v.clone());
    let mut tau_prev = 1.0f64;
    let mut lipschitz = cfg.l0;
    let mut best = init.clone();
    let mut best_objective = initial_objective;
    let mut last_objective = initial_objective;
    let mut iters = 0;
    let mut converged = false;

    for t in 1..=cfg.max_inner_iters {
        iters = t;
        let tau = (1.0 + (1.0 + 4.0 * tau_prev * tau_prev).sqrt()) / 2.0;
        let momentum = (tau_prev - 1.0) / tau;
        let beta = &alpha_prev + (&alpha_prev - &alpha_prev2) * momentum;
        let u = &v_prev + (&v_prev - &v_prev2) * momentum;

        let (f_y, grad_beta, grad_u) = smooth_gradients_unchecked(set, hull, &beta, &u, terms, gamma);
        if !f_y.is_finite() || grad_beta.iter().chain(grad_u.iter()).any(|g| !g.is_finite()) {
            return Err(Error::Numerical { iteration: t, detail: "non-finite value or gradient at extrapolated point".into() });
        }
        let mut backtracks = 0;
        let (alpha_new, v_new, objective, majorizer, slack) = loop {
            let step = 1.0 / lipschitz;
            let alpha_new = soft_threshold(&(&beta - &grad_beta * step), cfg.lambda * step);
            let v_new = &u - &grad_u * step;
            let f_p = smooth_value_unchecked(set, hull, &alpha_new, &v_new, terms, gamma);
            let da = &alpha_new - &beta;
            let dv = &v_new - &u;
            let quad = f_y
                + grad_beta.dot(&da)
                + grad_u.dot(&dv)
                + 0.5 * lipschitz * (da.norm_squared() + dv.norm_squared());
            let slack = 1e-12 * quad.abs().max(1.0);
            if f_p.is_finite() && f_p <= quad + slack {
                let g = l1(&alpha_new);
                break (alpha_new, v_new, f_p + g, quad + g, slack);
            }
            lipschitz *= cfg.eta;
            backtracks += 1;
            if !lipschitz.is_finite() || lipschitz > MAX_LIPSCHITZ {
                return Err(Error::Numerical { iteration: t, detail: "backtracking failed to find a step".into() });
            }
        };
        if !objective.is_finite() {
            return Err(Error::Numerical { iteration: t, detail: "objective is not finite".into() });
        }
        observer(&StepRecord { iteration: t, lipschitz, objective, majorizer, slack, backtracks });

        if objective < best_objective {
            best_objective = objective;
            best = SetRepresentation { alpha: alpha_new.clone(), v: v_new.clone() };
        }

        alpha_prev2 = std::mem::replace(&mut alpha_prev, alpha_new);
        v_prev2 = std::mem::replace(&mut v_prev, v_new);
        tau_prev = tau;

        let change = (last_objective - objective).abs();
        last_objective = objective;
        if change <= cfg.tol * objective.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    Ok(SolveOutcome { rep: best, objective: best_objective, initial_objective, iters, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::build_hull;
    use nalgebra::{DMatrix, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Instance {
        set: ImageSet,
        hull: AffineHull,
        terms: Vec<NeighborTerm>,
    }

    fn instance(rng: &mut ChaCha8Rng, dim: usize, n: usize, n_terms: usize, positive: bool) -> Instance {
        let data = DMatrix::from_fn(dim, n, |_, _| rng.random_range(-1.0..1.0));
        let set = ImageSet::new("s", Some(0), data).unwrap();
        let hull = build_hull(&set, 1.0).unwrap();
        let terms = (0..n_terms)
            .map(|_| NeighborTerm {
                weight: if positive { rng.random_range(0.0..1.0) } else { rng.random_range(-1.0..1.0) },
                point: DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0)),
            })
            .collect();
        Instance { set, hull, terms }
    }

    /// Term-by-term scalar evaluation, no matrix products.
    fn scalar_value(inst: &Instance, alpha: &[f64], v: &[f64], gamma: f64) -> f64 {
        let d = inst.set.dim();
        let mut h = vec![0.0; d];
        for (r, hr) in h.iter_mut().enumerate() {
            *hr = inst.hull.mean[r];
            for (k, vk) in v.iter().enumerate() {
                *hr += inst.hull.basis[(r, k)] * vk;
            }
        }
        let mut total = 0.0;
        for (r, hr) in h.iter().enumerate() {
            let mut xa = 0.0;
            for (n, an) in alpha.iter().enumerate() {
                xa += inst.set.data[(r, n)] * an;
            }
            total += (hr - xa) * (hr - xa);
        }
        for t in &inst.terms {
            let mut s = 0.0;
            for (r, hr) in h.iter().enumerate() {
                s += (hr - t.point[r]).powi(2);
            }
            total += gamma * t.weight * s;
        }
        total
    }

    #[test]
    fn value_matches_scalar_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let inst = instance(&mut rng, 7, 5, 3, false);
            let alpha = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(inst.hull.rank(), |_, _| rng.random_range(-1.0..1.0));
            let got = smooth_value(&inst.set, &inst.hull, &alpha, &v, &inst.terms, 0.7).unwrap();
            let want = scalar_value(&inst, alpha.as_slice(), v.as_slice(), 0.7);
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn value_at_initialization_is_zero_without_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inst = instance(&mut rng, 6, 4, 2, false);
        let init = SetRepresentation::initial(4, inst.hull.rank());
        let f = smooth_value(&inst.set, &inst.hull, &init.alpha, &init.v, &inst.terms, 0.0).unwrap();
        assert!(f.abs() < 1e-28);
    }

    #[test]
    fn coincident_neighbour_adds_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inst = instance(&mut rng, 5, 4, 0, false);
        let alpha = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let v = DVector::zeros(inst.hull.rank());
        let term = vec![NeighborTerm { weight: 1.0, point: inst.hull.mean.clone() }];
        let r = smooth_value(&inst.set, &inst.hull, &alpha, &v, &[], 1.0).unwrap();
        let with = smooth_value(&inst.set, &inst.hull, &alpha, &v, &term, 1.0).unwrap();
        assert_eq!(r, with);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..30 {
            let inst = instance(&mut rng, 8, 5, 4, false);
            let alpha = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(inst.hull.rank(), |_, _| rng.random_range(-1.0..1.0));
            let gamma = 0.8;
            let (ga, gv) = smooth_gradients(&inst.set, &inst.hull, &alpha, &v, &inst.terms, gamma).unwrap();
            for k in 0..alpha.len() {
                let (mut p, mut m) = (alpha.clone(), alpha.clone());
                p[k] += h;
                m[k] -= h;
                let fd = (scalar_value(&inst, p.as_slice(), v.as_slice(), gamma) - scalar_value(&inst, m.as_slice(), v.as_slice(), gamma)) / (2.0 * h);
                assert!((fd - ga[k]).abs() / ga[k].abs().max(1.0) < 1e-6, "alpha[{k}] {fd} vs {}", ga[k]);
            }
            for k in 0..v.len() {
                let (mut p, mut m) = (v.clone(), v.clone());
                p[k] += h;
                m[k] -= h;
                let fd = (scalar_value(&inst, alpha.as_slice(), p.as_slice(), gamma) - scalar_value(&inst, alpha.as_slice(), m.as_slice(), gamma)) / (2.0 * h);
                assert!((fd - gv[k]).abs() / gv[k].abs().max(1.0) < 1e-6, "v[{k}] {fd} vs {}", gv[k]);
            }
        }
    }

    #[test]
    fn gradients_vanish_at_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inst = instance(&mut rng, 6, 4, 0, false);
        let init = SetRepresentation::initial(4, inst.hull.rank());
        let (ga, gv) = smooth_gradients(&inst.set, &inst.hull, &init.alpha, &init.v, &[], 0.0).unwrap();
        assert!(ga.norm() < 1e-8 && gv.norm() < 1e-8);
    }

    #[test]
    fn rank_zero_gradient_is_empty() {
        let set = ImageSet::new("one", Some(0), DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0])).unwrap();
        let hull = build_hull(&set, 0.9).unwrap();
        let (ga, gv) = smooth_gradients(&set, &hull, &DVector::from_element(1, 0.5), &DVector::zeros(0), &[], 1.0).unwrap();
        assert_eq!(ga.len(), 1);
        assert_eq!(gv.len(), 0);
    }

    #[test]
    fn soft_threshold_cases() {
        assert!((soft_threshold_scalar(1.2, 0.5) - 0.7).abs() < 1e-15);
        assert_eq!(soft_threshold_scalar(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold_scalar(-2.0, 0.5), -1.5);
        let w = DVector::from_vec(vec![1.0, -0.25, 0.0, 3.5]);
        assert_eq!(soft_threshold(&w, 0.0), w);
    }

    #[test]
    fn soft_threshold_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let w: f64 = rng.random_range(-3.0..3.0);
            let eps: f64 = rng.random_range(0.0..2.0);
            let obj = |z: f64| 0.5 * (z - w).powi(2) + eps * z.abs();
            let best = (-40_000..=40_000)
                .map(|k| k as f64 * 1e-4)
                .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))
                .unwrap();
            assert!((soft_threshold_scalar(w, eps) - best).abs() <= 1e-4);
        }
    }

    #[test]
    fn exact_fit_problem_reaches_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = SolverConfig { lambda: 0.0, gamma: 0.0, ..SolverConfig::default() };
        for _ in 0..10 {
            let inst = instance(&mut rng, 9, 6, 0, false);
            let init = SetRepresentation::initial(6, inst.hull.rank());
            let out = apg_solve(&inst.set, &inst.hull, &[], &cfg, &init).unwrap();
            assert!(out.objective.abs() < 1e-8);
        }
    }

    #[test]
    fn exact_fit_from_random_start_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = SolverConfig { lambda: 0.0, gamma: 0.0, max_inner_iters: 20_000, tol: 0.0, ..SolverConfig::default() };
        for _ in 0..5 {
            let inst = instance(&mut rng, 9, 6, 0, false);
            let init = SetRepresentation {
                alpha: DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0)),
                v: DVector::from_fn(inst.hull.rank(), |_, _| rng.random_range(-1.0..1.0)),
            };
            let out = apg_solve(&inst.set, &inst.hull, &[], &cfg, &init).unwrap();
            assert!(out.initial_objective > 1e-3);
            assert!(out.objective < 1e-8, "objective {}", out.objective);
        }
    }

    #[test]
    fn large_lambda_keeps_alpha_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let inst = instance(&mut rng, 6, 5, 0, false);
            let max_col = inst.set.data.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
            let lambda = 4.0 * max_col * inst.hull.mean.norm();
            let cfg = SolverConfig { lambda, gamma: 0.0, max_inner_iters: 500, ..SolverConfig::default() };
            let init = SetRepresentation { alpha: DVector::zeros(5), v: DVector::zeros(inst.hull.rank()) };
            let out = apg_solve(&inst.set, &inst.hull, &[], &cfg, &init).unwrap();
            assert!(out.rep.alpha.iter().all(|&a| a == 0.0));
            let (ga, _) = smooth_gradients(&inst.set, &inst.hull, &out.rep.alpha, &out.rep.v, &[], 0.0).unwrap();
            assert!(ga.amax() <= lambda);
        }
    }

    /// Proximal gradient with the exact Lipschitz constant from the Hessian.
    fn ista(inst: &Instance, lambda: f64, gamma: f64, steps: usize) -> f64 {
        let n = inst.set.len();
        let r = inst.hull.rank();
        // f is quadratic in z = (alpha, v); Hessian = 2 A^T A + 2 gamma W U^T U block
        let mut a = DMatrix::zeros(inst.set.dim(), n + r);
        a.columns_mut(0, n).copy_from(&(-&inst.set.data));
        a.columns_mut(n, r).copy_from(&inst.hull.basis);
        let w: f64 = inst.terms.iter().map(|t| t.weight).sum();
        let mut hess = a.transpose() * &a * 2.0;
        let mut vv = hess.view_mut((n, n), (r, r));
        vv += DMatrix::<f64>::identity(r, r) * (2.0 * gamma * w);
        let lip = SymmetricEigen::new(hess).eigenvalues.max();
        let mut alpha = DVector::from_element(n, 1.0 / n as f64);
        let mut v = DVector::zeros(r);
        for _ in 0..steps {
            let (ga, gv) = smooth_gradients(&inst.set, &inst.hull, &alpha, &v, &inst.terms, gamma).unwrap();
            alpha = soft_threshold(&(&alpha - ga / lip), lambda / lip);
            v -= gv / lip;
        }
        smooth_value(&inst.set, &inst.hull, &alpha, &v, &inst.terms, gamma).unwrap() + lambda * alpha.lp_norm(1)
    }

    #[test]
    fn apg_beats_long_proximal_gradient_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let inst = instance(&mut rng, 8, 5, 3, true);
            let cfg = SolverConfig { lambda: 0.05, gamma: 0.5, max_inner_iters: 3000, tol: 0.0, ..SolverConfig::default() };
            let init = SetRepresentation::initial(5, inst.hull.rank());
            let out = apg_solve(&inst.set, &inst.hull, &inst.terms, &cfg, &init).unwrap();
            let reference = ista(&inst, cfg.lambda, cfg.gamma, 10_000);
            assert!(out.objective <= reference + 1e-6, "apg {} vs ista {}", out.objective, reference);
        }
    }

    #[test]
    fn rejects_bad_shapes_and_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inst = instance(&mut rng, 4, 3, 0, false);
        let bad = SetRepresentation::initial(2, inst.hull.rank());
        assert!(matches!(apg_solve(&inst.set, &inst.hull, &[], &SolverConfig::default(), &bad), Err(Error::Input(_))));
        let init = SetRepresentation::initial(3, inst.hull.rank());
        let cfg = SolverConfig { eta: 1.0, ..SolverConfig::default() };
        assert!(apg_solve(&inst.set, &inst.hull, &[], &cfg, &init).is_err());
        let wrong_dim = vec![NeighborTerm { weight: 1.0, point: DVector::zeros(5) }];
        assert!(apg_solve(&inst.set, &inst.hull, &wrong_dim, &SolverConfig::default(), &init).is_err());
    }

    #[test]
    fn huge_weights_report_numerical_failure() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let inst = instance(&mut rng, 4, 3, 0, false);
        let terms = vec![NeighborTerm { weight: -1e300, point: DVector::from_element(4, 1e10) }];
        let init = SetRepresentation::initial(3, inst.hull.rank());
        let cfg = SolverConfig { gamma: 1e10, ..SolverConfig::default() };
        let err = apg_solve(&inst.set, &inst.hull, &terms, &cfg, &init).unwrap_err();
        assert!(err.is_numerical());
    }

    proptest! {
        #[test]
        fn soft_threshold_is_odd_and_nonexpansive(a in -10.0f64..10.0, b in -10.0f64..10.0, eps in 0.0f64..5.0) {
            prop_assert_eq!(soft_threshold_scalar(-a, eps), -soft_threshold_scalar(a, eps));
            let d = (soft_threshold_scalar(a, eps) - soft_threshold_scalar(b, eps)).abs();
            prop_assert!(d <= (a - b).abs() + 4.0 * f64::EPSILON * (a.abs() + b.abs() + eps));
        }

        #[test]
        fn apg_is_monotone_and_majorizes(seed in any::<u64>(), positive in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.random_range(2..12);
            let n = rng.random_range(1..8);
            let inst = instance(&mut rng, dim, n, 3, positive);
            let cfg = SolverConfig { lambda: rng.random_range(0.0..0.5), gamma: rng.random_range(0.0..0.5), max_inner_iters: 50, ..SolverConfig::default() };
            let init = SetRepresentation::initial(n, inst.hull.rank());
            let mut records = Vec::new();
            let out = apg_solve_observed(&inst.set, &inst.hull, &inst.terms, &cfg, &init, &mut |r| records.push(*r)).unwrap();
            prop_assert!(out.objective <= out.initial_objective);
            for r in &records {
                prop_assert!(r.objective - r.majorizer <= r.slack);
                prop_assert!(r.lipschitz >= cfg.l0);
            }
            let recomputed = composite_objective(&inst.set, &inst.hull, &out.rep, &inst.terms, &cfg).unwrap();
            prop_assert!((recomputed - out.objective).abs() <= 1e-12 * out.objective.abs().max(1.0));
        }
    }
}

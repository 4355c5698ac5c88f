//! Hull distances, soft nearest-hit / nearest-miss probabilities and margins.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hull::{hull_point, AffineHull, SetRepresentation};

/// Gaussian kernel band-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub sigma: f64,
}

impl KernelConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::input(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(KernelConfig { sigma })
    }

    /// Exponent of the kernel, `-dist / (2 sigma^2)`.
    pub fn log_kernel(&self, dist: f64) -> f64 {
        -dist / (2.0 * self.sigma * self.sigma)
    }
}

/// Hit / miss probabilities and their difference `P_ij = hit - miss`.
///
/// `hit[(i, j)]` is the probability that set `j` is the nearest same-class set
/// of `i`; `miss[(i, j)]` the probability that it is the nearest set from
/// another class.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborProbabilities {
    pub hit: DMatrix<f64>,
    pub miss: DMatrix<f64>,
    pub combined: DMatrix<f64>,
}

impl NeighborProbabilities {
    pub fn len(&self) -> usize {
        self.hit.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.hit.nrows() == 0
    }

    /// `P_ij + P_ji`, the weight set `j` contributes to set `i`'s subproblem.
    pub fn pair_weight(&self, i: usize, j: usize) -> f64 {
        self.combined[(i, j)] + self.combined[(j, i)]
    }
}

pub fn squared_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `||(mu_i + U_i v_i) - (mu_j + U_j v_j)||^2`.
pub fn set_distance(
    hull_i: &AffineHull,
    v_i: &DVector<f64>,
    hull_j: &AffineHull,
    v_j: &DVector<f64>,
) -> Result<f64> {
    if hull_i.dim() != hull_j.dim() {
        return Err(Error::input(format!(
            "hull dimensions differ: {} vs {}",
            hull_i.dim(),
            hull_j.dim()
        )));
    }
    let p = hull_point(hull_i, v_i)?;
    let q = hull_point(hull_j, v_j)?;
    Ok(squared_distance(&p, &q))
}

pub fn gaussian_kernel(dist: f64, cfg: &KernelConfig) -> f64 {
    cfg.log_kernel(dist).exp()
}

/// Symmetric matrix of squared distances between hull points.
pub fn distance_matrix(points: &[DVector<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let mut dist = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(&points[i], &points[j]);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    dist
}

/// Overwrites row and column `i` after point `i` moved.
pub fn refresh_distances(dist: &mut DMatrix<f64>, points: &[DVector<f64>], i: usize) {
    for j in 0..points.len() {
        if j != i {
            let d = squared_distance(&points[i], &points[j]);
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
}

/// Kernel-density weights over `candidates`, normalised to sum to one.
///
/// Exponents are shifted by their maximum before exponentiation so that a
/// small band-width cannot underflow the whole row. If the row is still
/// degenerate (non-finite distances) the weights fall back to uniform and the
/// second return value is `true`.
pub fn normalized_kernel(dists: &[f64], cfg: &KernelConfig) -> (Vec<f64>, bool) {
    if dists.is_empty() {
        return (Vec::new(), false);
    }
    let logits: Vec<f64> = dists.iter().map(|&d| cfg.log_kernel(d)).collect();
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    if top.is_finite() && total.is_finite() && total > 0.0 {
        (weights.into_iter().map(|w| w / total).collect(), false)
    } else {
        let u = 1.0 / dists.len() as f64;
        (vec![u; dists.len()], true)
    }
}

/// E-step from a precomputed distance matrix.
pub fn probabilities_from_distances(
    dist: &DMatrix<f64>,
    labels: &[usize],
    cfg: &KernelConfig,
) -> NeighborProbabilities {
    let n = labels.len();
    let mut hit = DMatrix::zeros(n, n);
    let mut miss = DMatrix::zeros(n, n);
    let mut same = Vec::with_capacity(n);
    let mut other = Vec::with_capacity(n);
    for i in 0..n {
        same.clear();
        other.clear();
        for j in (0..n).filter(|&j| j != i) {
            if labels[j] == labels[i] {
                same.push(j);
            } else {
                other.push(j);
            }
        }
        for (pool, target) in [(&same, &mut hit), (&other, &mut miss)] {
            let ds: Vec<f64> = pool.iter().map(|&j| dist[(i, j)]).collect();
            let (w, fell_back) = normalized_kernel(&ds, cfg);
            if fell_back {
                log::warn!("kernel row {i} degenerate; using uniform neighbour weights");
            }
            for (&j, p) in pool.iter().zip(w) {
                target[(i, j)] = p;
            }
        }
    }
    let combined = &hit - &miss;
    NeighborProbabilities { hit, miss, combined }
}

/// Hull points `mu_i + U_i v_i` for every set.
pub fn hull_points(hulls: &[AffineHull], reps: &[SetRepresentation]) -> Result<Vec<DVector<f64>>> {
    if hulls.len() != reps.len() {
        return Err(Error::input(format!(
            "{} hulls but {} representations",
            hulls.len(),
            reps.len()
        )));
    }
    let dim = hulls.first().map_or(0, AffineHull::dim);
    hulls
        .iter()
        .zip(reps)
        .map(|(h, r)| {
            if h.dim() != dim {
                return Err(Error::input(format!("hull dimension {} differs from {dim}", h.dim())));
            }
            hull_point(h, &r.v)
        })
        .collect()
}

/// Computes hit and miss probabilities for every set from the current hull
/// coefficients.
pub fn e_step(
    hulls: &[AffineHull],
    reps: &[SetRepresentation],
    labels: &[usize],
    cfg: &KernelConfig,
) -> Result<NeighborProbabilities> {
    if hulls.len() < 2 {
        return Err(Error::input("the E-step needs at least two sets"));
    }
    if labels.len() != hulls.len() {
        return Err(Error::input(format!(
            "{} labels for {} sets",
            labels.len(),
            hulls.len()
        )));
    }
    let points = hull_points(hulls, reps)?;
    Ok(probabilities_from_distances(&distance_matrix(&points), labels, cfg))
}

/// Expected miss distance minus expected hit distance for set `i`.
pub fn probabilistic_margin(i: usize, probs: &NeighborProbabilities, dist: &DMatrix<f64>) -> f64 {
    let mut miss = 0.0;
    let mut hit = 0.0;
    for j in 0..probs.len() {
        miss += probs.miss[(i, j)] * dist[(i, j)];
        hit += probs.hit[(i, j)] * dist[(i, j)];
    }
    miss - hit
}

/// Median heuristic: `sigma^2 = median(pairwise distances) / 2`.
///
/// Returns `None` when there are no pairs or the median distance is zero.
pub fn median_heuristic_sigma(dist: &DMatrix<f64>) -> Option<f64> {
    let n = dist.nrows();
    let mut pairs: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| dist[(i, j)])
        .collect();
    if pairs.is_empty() {
        return None;
    }
    pairs.sort_by(f64::total_cmp);
    let m = pairs.len();
    let median = if m % 2 == 1 {
        pairs[m / 2]
    } else {
        0.5 * (pairs[m / 2 - 1] + pairs[m / 2])
    };
    (median.is_finite() && median > 0.0).then(|| (median / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point_hull(coords: &[f64]) -> AffineHull {
        AffineHull::new(DVector::from_row_slice(coords), DMatrix::zeros(coords.len(), 0)).unwrap()
    }

    fn cfg(sigma: f64) -> KernelConfig {
        KernelConfig::new(sigma).unwrap()
    }

    #[test]
    fn set_distance_cases() {
        let a = point_hull(&[1.0, 0.0]);
        let b = point_hull(&[0.0, 0.0]);
        let empty = DVector::zeros(0);
        assert_eq!(set_distance(&a, &empty, &b, &empty).unwrap(), 1.0);
        assert_eq!(set_distance(&a, &empty, &a, &empty).unwrap(), 0.0);

        let ui = AffineHull::new(DVector::zeros(2), DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        let uj = AffineHull::new(DVector::zeros(2), DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let one = DVector::from_element(1, 1.0);
        assert_eq!(set_distance(&ui, &one, &uj, &one).unwrap(), 2.0);

        let c = point_hull(&[0.0, 0.0, 0.0]);
        assert!(set_distance(&a, &empty, &c, &empty).is_err());
    }

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(0.0, &cfg(1.0)), 1.0);
        assert!((gaussian_kernel(2.0, &cfg(1.0)) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((gaussian_kernel(2.0, &cfg(1e8)) - 1.0).abs() < 1e-15);
        assert!(KernelConfig::new(0.0).is_err());
        assert!(KernelConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn equal_distance_hits_split_evenly() {
        // set 0 with two class-mates at distance 1
        let hulls = vec![point_hull(&[0.0]), point_hull(&[1.0]), point_hull(&[-1.0]), point_hull(&[5.0])];
        let reps: Vec<_> = (0..4).map(|_| SetRepresentation::initial(1, 0)).collect();
        let p = e_step(&hulls, &reps, &[0, 0, 0, 1], &cfg(1.0)).unwrap();
        assert!((p.hit[(0, 1)] - 0.5).abs() < 1e-15);
        assert!((p.hit[(0, 2)] - 0.5).abs() < 1e-15);
        assert_eq!(p.miss[(0, 3)], 1.0);
    }

    #[test]
    fn single_classmate_gets_all_hit_mass() {
        let hulls = vec![point_hull(&[0.0]), point_hull(&[3.0]), point_hull(&[1.0])];
        let reps: Vec<_> = (0..3).map(|_| SetRepresentation::initial(1, 0)).collect();
        let p = e_step(&hulls, &reps, &[0, 0, 1], &cfg(0.5)).unwrap();
        assert_eq!(p.hit[(0, 1)], 1.0);
        // set 2 is alone in its class
        assert!(p.hit.row(2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn three_set_softmax_matches_scalar_computation() {
        // distances fixed by hand: d01 = 1, d02 = 4, d12 = 9 (points 0, 1, -2)
        let hulls = vec![point_hull(&[0.0]), point_hull(&[1.0]), point_hull(&[-2.0])];
        let reps: Vec<_> = (0..3).map(|_| SetRepresentation::initial(1, 0)).collect();
        let sigma = 1.5;
        let p = e_step(&hulls, &reps, &[0, 0, 0], &cfg(sigma)).unwrap();
        let k = |d: f64| (-d / (2.0 * sigma * sigma)).exp();
        let expected01 = k(1.0) / (k(1.0) + k(4.0));
        let expected12 = k(9.0) / (k(1.0) + k(9.0));
        assert!((p.hit[(0, 1)] - expected01).abs() < 1e-15);
        assert!((p.hit[(1, 2)] - expected12).abs() < 1e-15);
        assert!(p.miss.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn margin_hand_instance() {
        // four sets on a line: classes [0, 0, 1, 1] at 0, 1, 3, 6
        let hulls: Vec<_> = [0.0, 1.0, 3.0, 6.0].iter().map(|&x| point_hull(&[x])).collect();
        let reps: Vec<_> = (0..4).map(|_| SetRepresentation::initial(1, 0)).collect();
        let labels = [0, 0, 1, 1];
        let c = cfg(2.0);
        let p = e_step(&hulls, &reps, &labels, &c).unwrap();
        let points = hull_points(&hulls, &reps).unwrap();
        let dist = distance_matrix(&points);
        // set 0: hit pool {1: d=1}, miss pool {2: d=9, 3: d=36}
        let k = |d: f64| (-d / 8.0).exp();
        let miss_mean = (k(9.0) * 9.0 + k(36.0) * 36.0) / (k(9.0) + k(36.0));
        let expected = miss_mean - 1.0;
        assert!((probabilistic_margin(0, &p, &dist) - expected).abs() < 1e-12);
        assert!(probabilistic_margin(0, &p, &dist) > 0.0);
    }

    #[test]
    fn equal_hit_and_miss_distances_give_zero_margin() {
        let hulls = vec![point_hull(&[0.0]), point_hull(&[2.0]), point_hull(&[-2.0])];
        let reps: Vec<_> = (0..3).map(|_| SetRepresentation::initial(1, 0)).collect();
        let p = e_step(&hulls, &reps, &[0, 0, 1], &cfg(1.0)).unwrap();
        let dist = distance_matrix(&hull_points(&hulls, &reps).unwrap());
        assert_eq!(probabilistic_margin(0, &p, &dist), 0.0);
    }

    #[test]
    fn one_hot_rows_give_hard_margin() {
        let dist = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 7.0, 2.0, 0.0, 3.0, 7.0, 3.0, 0.0]);
        let mut hit = DMatrix::zeros(3, 3);
        let mut miss = DMatrix::zeros(3, 3);
        hit[(0, 1)] = 1.0;
        miss[(0, 2)] = 1.0;
        let combined = &hit - &miss;
        let p = NeighborProbabilities { hit, miss, combined };
        assert_eq!(probabilistic_margin(0, &p, &dist), 7.0 - 2.0);
    }

    #[test]
    fn tiny_sigma_does_not_underflow() {
        let dist = DMatrix::from_row_slice(3, 3, &[0.0, 1e6, 2e6, 1e6, 0.0, 3e6, 2e6, 3e6, 0.0]);
        let p = probabilities_from_distances(&dist, &[0, 0, 0], &cfg(1e-6));
        assert_eq!(p.hit[(0, 1)], 1.0);
        assert_eq!(p.hit[(0, 2)], 0.0);
    }

    #[test]
    fn non_finite_row_falls_back_to_uniform() {
        let (w, fell_back) = normalized_kernel(&[f64::INFINITY, f64::INFINITY], &cfg(1.0));
        assert!(fell_back);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn e_step_needs_two_sets() {
        let hulls = vec![point_hull(&[0.0])];
        let reps = vec![SetRepresentation::initial(1, 0)];
        assert!(e_step(&hulls, &reps, &[0], &cfg(1.0)).is_err());
    }

    #[test]
    fn median_heuristic() {
        let dist = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 8.0, 2.0, 0.0, 4.0, 8.0, 4.0, 0.0]);
        assert!((median_heuristic_sigma(&dist).unwrap() - 2.0f64.sqrt()).abs() < 1e-15);
        assert!(median_heuristic_sigma(&DMatrix::zeros(2, 2)).is_none());
        assert!(median_heuristic_sigma(&DMatrix::zeros(1, 1)).is_none());
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_respect_labels(seed in any::<u64>(), n in 2usize..12, classes in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0))).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let dist = distance_matrix(&points);
            let p = probabilities_from_distances(&dist, &labels, &cfg(rng.random_range(0.1..3.0)));
            for i in 0..n {
                prop_assert_eq!(p.hit[(i, i)], 0.0);
                prop_assert_eq!(p.miss[(i, i)], 0.0);
                let mates = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
                let others = (0..n).filter(|&j| labels[j] != labels[i]).count();
                let hs: f64 = p.hit.row(i).sum();
                let ms: f64 = p.miss.row(i).sum();
                if mates > 0 { prop_assert!((hs - 1.0).abs() < 1e-9); } else { prop_assert_eq!(hs, 0.0); }
                if others > 0 { prop_assert!((ms - 1.0).abs() < 1e-9); } else { prop_assert_eq!(ms, 0.0); }
                for j in 0..n {
                    prop_assert!((0.0..=1.0).contains(&p.hit[(i, j)]));
                    prop_assert!((0.0..=1.0).contains(&p.miss[(i, j)]));
                    if labels[j] != labels[i] { prop_assert_eq!(p.hit[(i, j)], 0.0); }
                    if labels[j] == labels[i] { prop_assert_eq!(p.miss[(i, j)], 0.0); }
                    prop_assert_eq!(dist[(i, j)], dist[(j, i)]);
                }
            }
        }

        #[test]
        fn set_distance_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hull = || {
                let q = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0)).qr().q();
                let mean = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                AffineHull::new(mean, q).unwrap()
            };
            let (a, b) = (hull(), hull());
            let va = DVector::from_vec(vec![0.3, -1.2]);
            let vb = DVector::from_vec(vec![2.0, 0.1]);
            prop_assert_eq!(set_distance(&a, &va, &b, &vb).unwrap(), set_distance(&b, &vb, &a, &va).unwrap());
        }
    }
}

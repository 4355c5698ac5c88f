//! Image sets and their two linear models.
//!
//! A set `X` (one column per image) is represented either as a combination
//! `X * alpha` of its own images or as a point `mean + basis * v` on its
//! affine hull. The hull basis comes from the SVD of the centered columns.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Singular values at or below this fraction of the data norm are treated as zero.
const ZERO_SINGULAR_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub id: String,
    /// Class index; `None` for unlabeled test sets.
    pub label: Option<usize>,
    /// `D x N` feature matrix, one column per image.
    pub data: DMatrix<f64>,
}

impl ImageSet {
    pub fn new(id: impl Into<String>, label: Option<usize>, data: DMatrix<f64>) -> Result<Self> {
        let id = id.into();
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::input(format!(
                "set '{id}' must have at least one image and one feature, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::input(format!(
                "set '{id}' has a non-finite entry at flat index {pos}"
            )));
        }
        Ok(ImageSet { id, label, data })
    }

    /// Builds a set from row-major image vectors (one `Vec` per image).
    pub fn from_images(id: impl Into<String>, label: Option<usize>, images: &[Vec<f64>]) -> Result<Self> {
        let id = id.into();
        let dim = images.first().map_or(0, Vec::len);
        if let Some(bad) = images.iter().position(|img| img.len() != dim) {
            return Err(Error::input(format!(
                "set '{id}': image {bad} has length {} but expected {dim}",
                images[bad].len()
            )));
        }
        let data = DMatrix::from_fn(dim, images.len(), |r, c| images[c][r]);
        ImageSet::new(id, label, data)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn column_mean(&self) -> DVector<f64> {
        self.data.column_mean()
    }
}

/// Mean plus orthonormal basis of the centered data.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHull {
    pub mean: DVector<f64>,
    /// `D x r`, orthonormal columns.
    pub basis: DMatrix<f64>,
}

impl AffineHull {
    pub fn new(mean: DVector<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != mean.len() {
            return Err(Error::input(format!(
                "hull basis has {} rows but mean has length {}",
                basis.nrows(),
                mean.len()
            )));
        }
        Ok(AffineHull { mean, basis })
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Learnable coefficients of one set: `alpha` over images, `v` over hull bases.
#[derive(Debug, Clone, PartialEq)]
pub struct SetRepresentation {
    pub alpha: DVector<f64>,
    pub v: DVector<f64>,
}

impl SetRepresentation {
    /// Uniform `alpha` and zero `v`: both models give the set mean.
    pub fn initial(n_images: usize, rank: usize) -> Self {
        SetRepresentation {
            alpha: DVector::from_element(n_images, 1.0 / n_images as f64),
            v: DVector::zeros(rank),
        }
    }

    pub fn check_shape(&self, n_images: usize, rank: usize) -> Result<()> {
        if self.alpha.len() != n_images || self.v.len() != rank {
            return Err(Error::input(format!(
                "representation shape (alpha {}, v {}) does not match set (images {n_images}, rank {rank})",
                self.alpha.len(),
                self.v.len()
            )));
        }
        Ok(())
    }
}

/// Left singular pairs of `c` with positive singular values, sorted by
/// decreasing singular value.
///
/// `c` is first reduced to a square triangular factor by Householder QR; the
/// singular pairs of that factor `M` come from the symmetric eigenproblem of
/// `[[0, M], [M^T, 0]]`, whose eigenvalues are `+-sigma`. This keeps the
/// accuracy of small singular values, unlike eigen-decomposing `M^T M`.
fn left_singular_pairs(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (d, n) = c.shape();
    let (lift, m) = if d > n {
        let qr = c.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, c.transpose().qr().r().transpose())
    };
    let (rows, cols) = m.shape();
    let mut aug = DMatrix::zeros(rows + cols, rows + cols);
    aug.view_mut((0, rows), (rows, cols)).copy_from(&m);
    aug.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
    let eig = SymmetricEigen::new(aug);

    let mut order: Vec<usize> = (0..rows + cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let count = rows.min(cols);
    let mut values = Vec::with_capacity(count);
    let mut vectors = DMatrix::zeros(rows, count);
    for (k, &src) in order.iter().take(count).enumerate() {
        let sigma = eig.eigenvalues[src];
        let top = eig.eigenvectors.column(src).rows(0, rows).clone_owned();
        let norm = top.norm();
        if sigma <= 0.0 || norm == 0.0 {
            break;
        }
        vectors.set_column(k, &(top / norm));
        values.push(sigma);
    }
    let vectors = vectors.columns(0, values.len()).clone_owned();
    let vectors = match lift {
        Some(q) => q * vectors,
        None => vectors,
    };
    (values, vectors)
}

/// Builds the affine hull of `set`, keeping the leading left singular vectors
/// of the centered data that capture at least `energy` of the squared
/// singular-value mass. The rank never exceeds `min(D, N - 1)`.
pub fn build_hull(set: &ImageSet, energy: f64) -> Result<AffineHull> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::input(format!("energy must lie in (0, 1], got {energy}")));
    }
    if set.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::input(format!("set '{}' has non-finite entries", set.id)));
    }
    let dim = set.dim();
    let n = set.len();
    let mean = set.column_mean();
    let max_rank = dim.min(n.saturating_sub(1));
    if max_rank == 0 {
        return Ok(AffineHull { mean, basis: DMatrix::zeros(dim, 0) });
    }

    let mut centered = set.data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let (values, vectors) = left_singular_pairs(&centered);

    // centering leaves rounding residue of order eps * |X|, so the cutoff
    // scales with the raw data rather than the largest centered value
    let cutoff = ZERO_SINGULAR_RELATIVE * set.data.norm();
    let kept = values.iter().take_while(|&&s| s > cutoff).count();
    let total: f64 = values[..kept].iter().map(|s| s * s).sum();

    let mut rank = 0;
    let mut captured = 0.0;
    for s in &values[..kept] {
        if rank >= max_rank || captured >= energy * total {
            break;
        }
        captured += s * s;
        rank += 1;
    }

    let mut basis = vectors.columns(0, rank).clone_owned();
    for mut col in basis.column_iter_mut() {
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(AffineHull { mean, basis })
}

/// `mean + basis * v`.
pub fn hull_point(hull: &AffineHull, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.len() != hull.rank() {
        return Err(Error::input(format!(
            "hull coefficient length {} does not match rank {}",
            v.len(),
            hull.rank()
        )));
    }
    if hull.rank() == 0 {
        return Ok(hull.mean.clone());
    }
    Ok(&hull.mean + &hull.basis * v)
}

/// `data * alpha`.
pub fn sample_point(set: &ImageSet, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    if alpha.len() != set.len() {
        return Err(Error::input(format!(
            "sample coefficient length {} does not match {} images in set '{}'",
            alpha.len(),
            set.len(),
            set.id
        )));
    }
    Ok(&set.data * alpha)
}

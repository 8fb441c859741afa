//! Kernel functions and Gram matrices.
//!
//! Three families are supported:
//!
//! | family | k(x, y) | domain |
//! |--------|---------|--------|
//! | `Linear` | xᵀy | ℝ^d (unbounded; only meant for the Hotelling cross-check) |
//! | `Gaussian` | exp(−‖x−y‖² / (2σ²)) | ℝ^d |
//! | `PeriodicSpline` | (−1)^{m−1}/(2m)! · B_{2m}({x−y}) | unit circle ℝ/ℤ |
//!
//! The periodic spline kernel of order m has the Fourier expansion
//! 2 Σ_{p≥1} (2πp)^{−2m} cos(2πp(x−y)); the constant mode is not part of it.

use std::sync::OnceLock;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest Bernoulli polynomial degree we tabulate (spline order ≤ 10).
pub const MAX_BERNOULLI_DEGREE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Gaussian { bandwidth: f64 },
    PeriodicSpline { order: u32 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { bandwidth };
        spec.validate()?;
        Ok(spec)
    }

    pub fn periodic_spline(order: u32) -> Result<Self> {
        let spec = KernelSpec::PeriodicSpline { order };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { bandwidth } => {
                if bandwidth.is_finite() && bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("gaussian bandwidth must be > 0, got {bandwidth}")))
                }
            }
            KernelSpec::PeriodicSpline { order } => {
                if order == 0 {
                    return Err(Error::invalid("spline order must be >= 1"));
                }
                let degree = 2 * order as usize;
                if degree > MAX_BERNOULLI_DEGREE {
                    return Err(Error::UnsupportedOrder { degree, max: MAX_BERNOULLI_DEGREE });
                }
                Ok(())
            }
        }
    }

    /// Whether the kernel satisfies the boundedness assumption the calibrated
    /// tests rely on.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, KernelSpec::Linear)
    }

    /// Short human-readable label, e.g. `gaussian(sigma=0.5)`.
    pub fn label(&self) -> String {
        match self {
            KernelSpec::Linear => "linear".to_string(),
            KernelSpec::Gaussian { bandwidth } => format!("gaussian(sigma={bandwidth})"),
            KernelSpec::PeriodicSpline { order } => format!("spline(m={order})"),
        }
    }

    /// Evaluate k(x, y) with full input validation.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { left: x.len(), right: y.len() });
        }
        if x.is_empty() {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        if matches!(self, KernelSpec::PeriodicSpline { .. }) && x.len() != 1 {
            return Err(Error::invalid(format!(
                "periodic spline kernel needs 1-d points, got dimension {}",
                x.len()
            )));
        }
        if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate {v}")));
        }
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluate without validation. Callers guarantee equal, valid dimensions
    /// and finite coordinates.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
            KernelSpec::Gaussian { bandwidth } => {
                let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-sq / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::PeriodicSpline { order } => {
                // |x − y| keeps the evaluation bit-for-bit symmetric; B_{2m}
                // is symmetric about 1/2 so {t} and {−t} give the same value.
                let d = (x[0] - y[0]).abs();
                spline_kernel_at(order, d - d.floor())
            }
        }
    }
}

/// Evaluate k(x, y); thin wrapper over [`KernelSpec::eval`].
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    spec.eval(x, y)
}

/// ((−1)^{m−1}/(2m)!) · B_{2m}(t) for t in [0, 1).
fn spline_kernel_at(order: u32, t: f64) -> f64 {
    let m = order as usize;
    let table = spline_tables();
    let coeffs = &table[m];
    // Horner on the pre-scaled coefficients.
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn spline_tables() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let polys = bernoulli_coefficients();
        (0..=MAX_BERNOULLI_DEGREE / 2)
            .map(|m| {
                if m == 0 {
                    return vec![0.0];
                }
                let deg = 2 * m;
                let fact: f64 = (1..=deg).map(|k| k as f64).product();
                let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
                polys[deg].iter().map(|c| sign * c / fact).collect()
            })
            .collect()
    })
}

/// Ascending-power coefficients of B_0, ..., B_20.
///
/// Built from B_0 = 1, B_n' = n B_{n−1} and ∫₀¹ B_n = 0 for n ≥ 1.
fn bernoulli_coefficients() -> &'static Vec<Vec<f64>> {
    static COEFFS: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for n in 1..=MAX_BERNOULLI_DEGREE {
            let prev = &polys[n - 1];
            let mut next = vec![0.0; n + 1];
            for (k, a) in prev.iter().enumerate() {
                next[k + 1] = n as f64 * a / (k + 1) as f64;
            }
            // zero mean on [0, 1]
            let integral: f64 = next.iter().enumerate().skip(1).map(|(k, b)| b / (k + 1) as f64).sum();
            next[0] = -integral;
            polys.push(next);
        }
        polys
    })
}

/// Evaluate the Bernoulli polynomial B_degree(t).
pub fn bernoulli_polynomial(degree: usize, t: f64) -> Result<f64> {
    if degree > MAX_BERNOULLI_DEGREE {
        return Err(Error::UnsupportedOrder { degree, max: MAX_BERNOULLI_DEGREE });
    }
    if !t.is_finite() {
        return Err(Error::invalid(format!("non-finite argument {t}")));
    }
    let coeffs = &bernoulli_coefficients()[degree];
    Ok(coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c))
}

/// A set of points in ℝ^d stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("points must have dimension >= 1"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates cannot be split into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(i) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "point {}: non-finite coordinate {}",
                i / dim,
                coords[i]
            )));
        }
        Ok(Points { dim, coords })
    }

    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Points::new(1, values.to_vec())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::invalid(format!(
                "point {i} has dimension {} but point 0 has {dim}",
                r.len()
            )));
        }
        Points::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn concat(&self, other: &Points) -> Result<Points> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { left: self.dim, right: other.dim });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Points { dim: self.dim, coords })
    }

    /// Points at the given indices, in order (indices may repeat).
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Points { dim: self.dim, coords }
    }

    /// Shift every coordinate by `c`.
    pub fn translated(&self, c: f64) -> Points {
        Points { dim: self.dim, coords: self.coords.iter().map(|v| v + c).collect() }
    }
}

/// Symmetric n×n kernel matrix.
#[derive(Debug, Clone)]
pub struct GramMatrix(Mat<f64>);

impl GramMatrix {
    /// Wrap an existing matrix; it must be square and exactly symmetric.
    pub fn from_mat(mat: Mat<f64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        let n = mat.nrows();
        for j in 0..n {
            for i in 0..j {
                if mat[(i, j)] != mat[(j, i)] {
                    return Err(Error::invalid(format!("gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        if let Some(v) = (0..n).flat_map(|j| (0..n).map(move |i| (i, j))).map(|ij| mat[ij]).find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite gram entry {v}")));
        }
        Ok(GramMatrix(mat))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| (0..self.n()).map(|j| self.0[(i, j)]).collect()).collect()
    }

    /// Principal submatrix on `idx` (indices may repeat).
    pub fn gather(&self, idx: &[usize]) -> GramMatrix {
        GramMatrix(Mat::from_fn(idx.len(), idx.len(), |i, j| self.0[(idx[i], idx[j])]))
    }
}

/// Gram matrix of `points` under `spec`.
///
/// Each entry is evaluated exactly once (upper triangle) and mirrored, so the
/// result is symmetric and does not depend on how columns are scheduled.
pub fn gram(spec: &KernelSpec, points: &Points) -> Result<GramMatrix> {
    spec.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(Error::invalid("cannot build a gram matrix from zero points"));
    }
    if matches!(spec, KernelSpec::PeriodicSpline { .. }) && points.dim() != 1 {
        return Err(Error::invalid(format!(
            "periodic spline kernel needs 1-d points, got dimension {}",
            points.dim()
        )));
    }
    // Points already guarantees finite coordinates and homogeneous dimension.
    let mut cols = vec![0.0; n * n];
    cols.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        let xj = points.point(j);
        for (i, out) in col.iter_mut().enumerate().take(j + 1) {
            *out = spec.eval_unchecked(points.point(i), xj);
        }
    });
    let mat = Mat::from_fn(n, n, |i, j| if i <= j { cols[j * n + i] } else { cols[i * n + j] });
    Ok(GramMatrix(mat))
}

/// Median pairwise Euclidean distance, the usual default Gaussian bandwidth.
pub fn median_heuristic(points: &Points) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("median heuristic needs at least two points"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = points.point(i).iter().zip(points.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(sq.sqrt());
        }
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::invalid("median pairwise distance is zero; set the bandwidth explicitly"))
    }
}

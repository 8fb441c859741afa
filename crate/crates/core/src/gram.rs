//! Centering, pooled within-group spectrum and the regularized quadratic form.
//!
//! Everything here is expressed through the pooled Gram matrix K. With the
//! block centering operator N = diag(P_{n1}, P_{n2}) and the contrast vector m
//! (−1/n1 on sample 1, +1/n2 on sample 2):
//!
//! * the pooled covariance Σ̂_W has the nonzero spectrum of n⁻¹ N K N;
//! * μ̂₂ − μ̂₁ has squared RKHS norm mᵀKm;
//! * (n1 n2 / n) ‖(Σ̂_W + γI)^{-1/2}(μ̂₂ − μ̂₁)‖² equals
//!   (n1 n2 / (γ n)) · (mᵀKm − n⁻¹ uᵀ(γI + n⁻¹NKN)⁻¹u) with u = N K m.
//!
//! N is never materialized: centering subtracts per-block row and column means.

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::kernel::{gram, GramMatrix, KernelSpec, Points};

/// Relative error we tolerate from the inversion-lemma formula before
/// switching to the feature-space solve.
const CANCELLATION_TOLERANCE: f64 = 1e-9;

/// Pooled two-sample data, sample 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSample {
    points: Points,
    n1: usize,
    n2: usize,
}

impl TwoSample {
    pub fn new(sample1: &Points, sample2: &Points) -> Result<Self> {
        let points = sample1.concat(sample2)?;
        TwoSample::from_pooled(points, sample1.len())
    }

    pub fn from_pooled(points: Points, n1: usize) -> Result<Self> {
        let n = points.len();
        if n1 > n {
            return Err(Error::invalid(format!("n1 = {n1} exceeds the {n} pooled points")));
        }
        let n2 = n - n1;
        check_sizes(n1, n2)?;
        Ok(TwoSample { points, n1, n2 })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn sample1(&self) -> Points {
        self.points.select(&(0..self.n1).collect::<Vec<_>>())
    }

    pub fn sample2(&self) -> Points {
        self.points.select(&(self.n1..self.n()).collect::<Vec<_>>())
    }

    /// Same points with the two sample labels exchanged.
    pub fn swapped(&self) -> TwoSample {
        TwoSample::new(&self.sample2(), &self.sample1()).expect("sizes already validated")
    }
}

fn check_sizes(n1: usize, n2: usize) -> Result<()> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid(format!("each sample needs at least 2 points, got n1 = {n1}, n2 = {n2}")));
    }
    Ok(())
}

/// Cached feature-space representation K = ΦᵀΦ, used when the
/// inversion-lemma formula loses too many digits.
#[derive(Debug, Clone)]
struct FeatureFactor {
    /// Φ m
    delta: Vec<f64>,
    /// Φ N Nᵀ Φᵀ / n
    covariance: Mat<f64>,
}

/// Pooled Gram matrix with the sample split.
#[derive(Debug, Clone)]
pub struct GramBundle {
    k: GramMatrix,
    n1: usize,
    n2: usize,
    centered: OnceLock<Mat<f64>>,
    spectrum: OnceLock<Result<Vec<f64>>>,
    features: OnceLock<Result<FeatureFactor>>,
}

/// Build the pooled Gram matrix of a two-sample data set.
pub fn build_bundle(sample: &TwoSample, spec: &KernelSpec) -> Result<GramBundle> {
    let k = gram(spec, sample.points())?;
    Ok(GramBundle::new_unchecked(k, sample.n1, sample.n2))
}

impl GramBundle {
    pub fn from_gram(k: GramMatrix, n1: usize) -> Result<Self> {
        let n = k.n();
        if n1 > n {
            return Err(Error::invalid(format!("n1 = {n1} exceeds gram size {n}")));
        }
        check_sizes(n1, n - n1)?;
        Ok(GramBundle::new_unchecked(k, n1, n - n1))
    }

    fn new_unchecked(k: GramMatrix, n1: usize, n2: usize) -> Self {
        GramBundle {
            k,
            n1,
            n2,
            centered: OnceLock::new(),
            spectrum: OnceLock::new(),
            features: OnceLock::new(),
        }
    }

    /// Bundle over the pooled points `idx` (repeats allowed), the first `n1`
    /// of which form sample 1. The kernel is not re-evaluated.
    pub fn resample(&self, idx: &[usize], n1: usize) -> Result<GramBundle> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::invalid(format!("resample index {bad} out of range")));
        }
        GramBundle::from_gram(self.k.gather(idx), n1)
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.k
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    /// n1 n2 / n
    pub fn size_factor(&self) -> f64 {
        (self.n1 as f64) * (self.n2 as f64) / self.n() as f64
    }

    fn block(&self, i: usize) -> usize {
        usize::from(i >= self.n1)
    }

    #[cfg(test)]
    fn block_len(&self, b: usize) -> f64 {
        if b == 0 {
            self.n1 as f64
        } else {
            self.n2 as f64
        }
    }

    pub fn contrast(&self) -> Vec<f64> {
        let (a, b) = (-1.0 / self.n1 as f64, 1.0 / self.n2 as f64);
        (0..self.n()).map(|i| if i < self.n1 { a } else { b }).collect()
    }

    /// Mean of K(i, ·) over each block: `out[i] = [mean over sample 1, mean over sample 2]`.
    fn row_block_means(&self) -> Vec<[f64; 2]> {
        let k = self.k.as_mat();
        let n1 = self.n1;
        (0..self.n())
            .map(|i| {
                // K is symmetric, so read column i (contiguous) instead of row i.
                let col = k.col(i);
                let mut s = [0.0, 0.0];
                for (j, v) in col.iter().enumerate() {
                    s[usize::from(j >= n1)] += *v;
                }
                [s[0] / self.n1 as f64, s[1] / self.n2 as f64]
            })
            .collect()
    }

    /// K m
    pub fn k_contrast(&self) -> Vec<f64> {
        self.row_block_means().iter().map(|r| r[1] - r[0]).collect()
    }

    /// mᵀ K m = ‖μ̂₂ − μ̂₁‖²
    pub fn mean_gap_sq(&self) -> f64 {
        let r = self.row_block_means();
        let bm = block_means(&r, self.n1, self.n2);
        bm[0][0] + bm[1][1] - 2.0 * bm[0][1]
    }

    /// N K N, computed by subtracting block means. Exactly symmetric.
    pub fn centered(&self) -> &Mat<f64> {
        self.centered.get_or_init(|| {
            let r = self.row_block_means();
            let bm = block_means(&r, self.n1, self.n2);
            let k = self.k.as_mat();
            Mat::from_fn(self.n(), self.n(), |i, j| {
                let (bi, bj) = (self.block(i), self.block(j));
                k[(i, j)] - (r[i][bj] + r[j][bi]) + bm[bi][bj]
            })
        })
    }

    /// Dense N, for checking the implicit centering.
    #[cfg(test)]
    pub(crate) fn dense_centering(&self) -> Mat<f64> {
        Mat::from_fn(self.n(), self.n(), |i, j| {
            if self.block(i) != self.block(j) {
                0.0
            } else {
                let l = self.block_len(self.block(i));
                f64::from(u8::from(i == j)) - 1.0 / l
            }
        })
    }

    /// Eigenvalues of n⁻¹ N K N above 1e-12·max(λ₁, 1), nonincreasing.
    pub fn pooled_spectrum(&self) -> Result<&[f64]> {
        self.spectrum
            .get_or_init(|| {
                let n = self.n() as f64;
                let c = self.centered();
                let scaled = Mat::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] / n);
                let mut ev = scaled.self_adjoint_eigenvalues(Side::Lower).map_err(|e| {
                    Error::NumericFailure(format!(
                        "eigensolver failed ({e:?}) on a {0}x{0} centered gram with trace {1:.6e} and max |entry| {2:.6e}",
                        c.nrows(),
                        (0..c.nrows()).map(|i| scaled[(i, i)]).sum::<f64>(),
                        max_abs(&scaled)
                    ))
                })?;
                if let Some(bad) = ev.iter().find(|v| !v.is_finite()) {
                    return Err(Error::NumericFailure(format!("eigensolver returned {bad}")));
                }
                ev.sort_by(|a, b| b.total_cmp(a));
                let top = ev.first().copied().unwrap_or(0.0);
                let tol = 1e-12 * top.max(1.0);
                ev.retain(|&v| v >= tol);
                Ok(ev)
            })
            .as_ref()
            .map(Vec::as_slice)
            .map_err(Clone::clone)
    }

    /// (n1 n2 / n) ‖(Σ̂_W + γI)^{-1/2}(μ̂₂ − μ̂₁)‖²
    pub fn regularized_quadratic(&self, gamma: f64) -> Result<f64> {
        check_gamma(gamma)?;
        match self.inversion_lemma(gamma) {
            Ok(Some(v)) => Ok(v),
            Ok(None) | Err(_) => self.feature_quadratic(gamma),
        }
    }

    /// The Gram-space formula. `Ok(None)` when the estimated rounding error
    /// is too large to trust the difference of the two terms.
    fn inversion_lemma(&self, gamma: f64) -> Result<Option<f64>> {
        let n = self.n();
        let nf = n as f64;
        let c = self.centered();
        let r = self.row_block_means();
        let bm = block_means(&r, self.n1, self.n2);
        let mkm = bm[0][0] + bm[1][1] - 2.0 * bm[0][1];

        // u = N K m: Km centered within each block.
        let km: Vec<f64> = r.iter().map(|v| v[1] - v[0]).collect();
        let mut mean = [0.0, 0.0];
        for (i, v) in km.iter().enumerate() {
            mean[self.block(i)] += v;
        }
        mean[0] /= self.n1 as f64;
        mean[1] /= self.n2 as f64;
        let u = Mat::from_fn(n, 1, |i, _| km[i] - mean[self.block(i)]);

        let a = Mat::from_fn(n, n, |i, j| c[(i, j)] / nf + if i == j { gamma } else { 0.0 });
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::NumericFailure(format!("cholesky of gamma*I + NKN/n failed: {e:?}")))?;
        let x = llt.solve(&u);
        let t2 = (0..n).map(|i| u[(i, 0)] * x[(i, 0)]).sum::<f64>() / nf;

        let trace = (0..n).map(|i| c[(i, i)]).sum::<f64>() / nf;
        let kappa = (trace.max(0.0) + gamma) / gamma;
        // Rounding in mKm is shared with the feature route; only the solve
        // error, amplified by cancellation against mKm, argues for switching.
        let err = f64::EPSILON * nf * kappa * t2.abs();
        let diff = mkm - t2;
        if !diff.is_finite() || err > CANCELLATION_TOLERANCE * diff.abs() {
            return Ok(None);
        }
        Ok(Some((self.size_factor() / gamma * diff).max(0.0)))
    }

    fn feature_factor(&self) -> Result<&FeatureFactor> {
        self.features
            .get_or_init(|| {
                let n = self.n();
                let nf = n as f64;
                let eig = self
                    .k
                    .as_mat()
                    .self_adjoint_eigen(Side::Lower)
                    .map_err(|e| Error::NumericFailure(format!("gram eigendecomposition failed: {e:?}")))?;
                let s = eig.S().column_vector();
                let v = eig.U();
                let smax = (0..n).map(|i| s[i]).fold(0.0_f64, f64::max);
                let keep: Vec<usize> = (0..n).filter(|&i| s[i] > nf * f64::EPSILON * smax).collect();
                let r = keep.len();
                // Φ = S^{1/2} Vᵀ restricted to the kept directions (r × n).
                let phi = Mat::from_fn(r, n, |a, j| s[keep[a]].sqrt() * v[(j, keep[a])]);
                let m = self.contrast();
                let delta: Vec<f64> = (0..r).map(|a| (0..n).map(|j| phi[(a, j)] * m[j]).sum()).collect();
                let block_mean = |a: usize, lo: usize, hi: usize| (lo..hi).map(|l| phi[(a, l)]).sum::<f64>() / (hi - lo) as f64;
                let means: Vec<[f64; 2]> = (0..r).map(|a| [block_mean(a, 0, self.n1), block_mean(a, self.n1, n)]).collect();
                let centered = Mat::from_fn(r, n, |a, j| phi[(a, j)] - means[a][usize::from(j >= self.n1)]);
                let mut covariance = &centered * centered.transpose();
                covariance /= faer::Scale(nf);
                // exact symmetry for the factorization
                for j in 0..r {
                    for i in 0..j {
                        covariance[(i, j)] = covariance[(j, i)];
                    }
                }
                Ok(FeatureFactor { delta, covariance })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn feature_quadratic(&self, gamma: f64) -> Result<f64> {
        let f = self.feature_factor()?;
        let r = f.delta.len();
        if r == 0 {
            return Ok(0.0);
        }
        let a = Mat::from_fn(r, r, |i, j| f.covariance[(i, j)] + if i == j { gamma } else { 0.0 });
        let llt = a
            .llt(Side::Lower)
            .map_err(|e| Error::NumericFailure(format!("cholesky of the feature covariance failed: {e:?}")))?;
        let d = Mat::from_fn(r, 1, |i, _| f.delta[i]);
        let z = llt.solve(&d);
        let q: f64 = (0..r).map(|i| d[(i, 0)] * z[(i, 0)]).sum();
        Ok((self.size_factor() * q).max(0.0))
    }
}

fn block_means(r: &[[f64; 2]], n1: usize, n2: usize) -> [[f64; 2]; 2] {
    let mut s = [[0.0; 2]; 2];
    for (i, row) in r.iter().enumerate() {
        let b = usize::from(i >= n1);
        s[b][0] += row[0];
        s[b][1] += row[1];
    }
    let len = [n1 as f64, n2 as f64];
    let off = s[0][1] / len[0];
    [[s[0][0] / len[0], off], [off, s[1][1] / len[1]]]
}

fn max_abs(m: &Mat<f64>) -> f64 {
    let mut best = 0.0_f64;
    for j in 0..m.ncols() {
        for v in m.col(j).iter() {
            best = best.max(v.abs());
        }
    }
    best
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("gamma must be > 0, got {gamma}")))
    }
}

/// (Σ_p (λ_p/(λ_p+γ))^r)^{1/r} for r ∈ {1, 2}.
pub fn d_r(spectrum: &[f64], gamma: f64, r: u32) -> Result<f64> {
    check_gamma(gamma)?;
    if let Some(v) = spectrum.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("spectrum entries must be finite and >= 0, got {v}")));
    }
    let sum = |pow: i32| -> f64 {
        let mut terms: Vec<f64> = spectrum.iter().map(|l| (l / (l + gamma)).powi(pow)).collect();
        terms.sort_by(f64::total_cmp);
        terms.iter().sum()
    };
    match r {
        1 => Ok(sum(1)),
        2 => Ok(sum(2).sqrt()),
        _ => Err(Error::invalid(format!("r must be 1 or 2, got {r}"))),
    }
}

/// Plug-in spectrum at one regularization level.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub gamma: f64,
    pub d1: f64,
    pub d2: f64,
}

impl SpectralSummary {
    pub fn new(eigenvalues: &[f64], gamma: f64) -> Result<Self> {
        Ok(SpectralSummary {
            eigenvalues: eigenvalues.to_vec(),
            gamma,
            d1: d_r(eigenvalues, gamma, 1)?,
            d2: d_r(eigenvalues, gamma, 2)?,
        })
    }

    /// Mixture weights λ_p/(λ_p+γ).
    pub fn weights(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l / (l + self.gamma)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    use crate::rng::stream;

    fn toy() -> GramBundle {
        let s = TwoSample::new(
            &Points::from_scalars(&[0.0, 2.0]).unwrap(),
            &Points::from_scalars(&[1.0, 3.0]).unwrap(),
        )
        .unwrap();
        build_bundle(&s, &KernelSpec::Linear).unwrap()
    }

    /// Explicit feature-space quantities for the linear kernel.
    fn explicit(sample: &TwoSample, gamma: f64) -> (f64, Vec<f64>) {
        let d = sample.points().dim();
        let mean = |p: &Points| -> Vec<f64> {
            (0..d).map(|c| p.iter().map(|x| x[c]).sum::<f64>() / p.len() as f64).collect()
        };
        let (s1, s2) = (sample.sample1(), sample.sample2());
        let (m1, m2) = (mean(&s1), mean(&s2));
        let n = sample.n() as f64;
        let mut cov = Mat::<f64>::zeros(d, d);
        for (pts, mu) in [(&s1, &m1), (&s2, &m2)] {
            for x in pts.iter() {
                for a in 0..d {
                    for b in 0..d {
                        cov[(a, b)] += (x[a] - mu[a]) * (x[b] - mu[b]) / n;
                    }
                }
            }
        }
        let ev = cov.self_adjoint_eigenvalues(Side::Lower).unwrap();
        let reg = Mat::from_fn(d, d, |a, b| cov[(a, b)] + if a == b { gamma } else { 0.0 });
        let delta = Mat::from_fn(d, 1, |a, _| m2[a] - m1[a]);
        let z = reg.llt(Side::Lower).unwrap().solve(&delta);
        let q: f64 = (0..d).map(|a| delta[(a, 0)] * z[(a, 0)]).sum();
        let f = (sample.n1() * sample.n2()) as f64 / n;
        (f * q, ev)
    }

    fn random_sample(seed: u64, d: usize, n1: usize, n2: usize, shift: f64) -> TwoSample {
        let mut rng = stream(seed, "gram-test", 0);
        let mut draw = |k: usize, s: f64| -> Points {
            let v: Vec<f64> = (0..k * d).map(|_| rng.sample::<f64, _>(StandardNormal) + s).collect();
            Points::new(d, v).unwrap()
        };
        let a = draw(n1, 0.0);
        let b = draw(n2, shift);
        TwoSample::new(&a, &b).unwrap()
    }

    #[test]
    fn bundle_example() {
        let b = toy();
        assert_eq!(
            b.gram().to_rows(),
            vec![vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 4.0, 2.0, 6.0], vec![0.0, 2.0, 1.0, 3.0], vec![0.0, 6.0, 3.0, 9.0]]
        );
        let m = b.contrast();
        assert_eq!(m[..2].iter().sum::<f64>(), -1.0);
        assert_eq!(m[2..].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn undersized_samples_rejected() {
        let one = Points::from_scalars(&[0.0]).unwrap();
        let two = Points::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(TwoSample::new(&one, &two).is_err());
        assert!(TwoSample::new(&two, &one).is_err());
    }

    #[test]
    fn identical_points_give_all_ones() {
        let p = Points::from_scalars(&[0.3; 4]).unwrap();
        let s = TwoSample::from_pooled(p, 2).unwrap();
        let b = build_bundle(&s, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert!(b.gram().to_rows().iter().flatten().all(|&v| v == 1.0));
        assert!(b.pooled_spectrum().unwrap().is_empty());
    }

    #[test]
    fn centering_matches_dense_projector() {
        let s = random_sample(3, 2, 7, 5, 0.4);
        let b = build_bundle(&s, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        let n = b.dense_centering();
        let nn = &n * &n;
        for i in 0..12 {
            for j in 0..12 {
                assert_abs_diff_eq!(nn[(i, j)], n[(i, j)], epsilon = 1e-15);
                assert_eq!(n[(i, j)], n[(j, i)]);
            }
        }
        let dense = &n * b.gram().as_mat() * &n;
        let c = b.centered();
        for i in 0..12 {
            for j in 0..12 {
                assert_abs_diff_eq!(dense[(i, j)], c[(i, j)], epsilon = 1e-13);
                assert_eq!(c[(i, j)], c[(j, i)]);
            }
        }
        // N m = 0 since m is constant within blocks
        let m = Mat::from_fn(12, 1, |i, _| b.contrast()[i]);
        let nm = &n * &m;
        assert!((0..12).all(|i| nm[(i, 0)].abs() < 1e-15));
    }

    #[test]
    fn spectrum_example() {
        let spec = toy().pooled_spectrum().unwrap().to_vec();
        assert_eq!(spec.len(), 1);
        assert_abs_diff_eq!(spec[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spline_spectrum_matches_fourier_pairs() {
        let mut rng = stream(17, "spline-spectrum", 0);
        let xs: Vec<f64> = (0..200).map(|_| rng.random()).collect();
        let s = TwoSample::from_pooled(Points::from_scalars(&xs).unwrap(), 100).unwrap();
        let b = build_bundle(&s, &KernelSpec::periodic_spline(2).unwrap()).unwrap();
        let ev = b.pooled_spectrum().unwrap();
        for l in 1..=2usize {
            let expect = (2.0 * std::f64::consts::PI * l as f64).powi(-4);
            for got in &ev[2 * (l - 1)..2 * l] {
                assert!((got - expect).abs() / expect < 0.2, "l={l} got {got} expect {expect}");
            }
        }
    }

    #[test]
    fn quadratic_examples() {
        let b = toy();
        assert_abs_diff_eq!(b.regularized_quadratic(1.0).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(b.regularized_quadratic(1e-10).unwrap(), 1.0, epsilon = 1e-6);
        let p = Points::from_scalars(&[0.1, 0.7, 0.4]).unwrap();
        let s = TwoSample::new(&p, &p).unwrap();
        for spec in [KernelSpec::Linear, KernelSpec::gaussian(0.5).unwrap(), KernelSpec::periodic_spline(2).unwrap()] {
            let b = build_bundle(&s, &spec).unwrap();
            assert!(b.regularized_quadratic(1.0).unwrap().abs() < 1e-12);
            assert!(b.mean_gap_sq().abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_must_be_positive() {
        assert!(toy().regularized_quadratic(0.0).is_err());
        assert!(toy().regularized_quadratic(-1.0).is_err());
        assert!(d_r(&[1.0], 0.0, 1).is_err());
        assert!(d_r(&[1.0], 1.0, 3).is_err());
    }

    #[test]
    fn linear_kernel_matches_explicit_feature_space() {
        for (seed, d, n1, n2) in [(1, 1, 10, 12), (2, 3, 40, 25), (3, 5, 60, 40), (4, 2, 3, 4)] {
            let s = random_sample(seed, d, n1, n2, 0.3);
            let b = build_bundle(&s, &KernelSpec::Linear).unwrap();
            for gamma in [1e-6, 1e-2, 1.0] {
                let (expect, ev) = explicit(&s, gamma);
                let got = b.regularized_quadratic(gamma).unwrap();
                assert!((got - expect).abs() <= 1e-8 * expect.abs(), "seed {seed} gamma {gamma}: {got} vs {expect}");
                let mut ev: Vec<f64> = ev.into_iter().filter(|v| *v > 1e-12).collect();
                ev.sort_by(|a, b| b.total_cmp(a));
                let spec = b.pooled_spectrum().unwrap();
                assert_eq!(spec.len(), ev.len());
                for (a, e) in spec.iter().zip(&ev) {
                    assert_abs_diff_eq!(*a, *e, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn inversion_lemma_and_feature_route_agree() {
        let s = random_sample(9, 1, 30, 30, 0.5);
        let b = build_bundle(&s, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        for gamma in [1e-1, 1e-2] {
            let direct = b.inversion_lemma(gamma).unwrap().expect("well conditioned");
            let feature = b.feature_quadratic(gamma).unwrap();
            assert!((direct - feature).abs() < 1e-9 * direct);
        }
    }

    #[test]
    fn spectrum_has_at_most_n_minus_two_entries() {
        let s = random_sample(5, 3, 6, 6, 0.0);
        let b = build_bundle(&s, &KernelSpec::gaussian(0.1).unwrap()).unwrap();
        assert!(b.pooled_spectrum().unwrap().len() <= 10);
    }

    #[test]
    fn d_r_examples() {
        assert_eq!(d_r(&[1.0], 1.0, 1).unwrap(), 0.5);
        assert_eq!(d_r(&[1.0], 1.0, 2).unwrap(), 0.5);
        assert_eq!(d_r(&[], 1.0, 1).unwrap(), 0.0);
    }

    #[test]
    fn d_r_bound_on_polynomial_decay() {
        let lam: Vec<f64> = (1..=10_000).map(|p| (p as f64).powi(-2)).collect();
        let rhs = 2.0 * lam.iter().map(|l| l.sqrt()).sum::<f64>();
        for k in 1..=8 {
            let gamma = 10f64.powi(-k);
            let lhs = gamma.sqrt() * d_r(&lam, gamma, 1).unwrap();
            assert!(lhs <= rhs, "gamma {gamma}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn permuting_within_samples_is_invariant() {
        let s = random_sample(6, 2, 15, 20, 0.7);
        let spec = KernelSpec::gaussian(1.2).unwrap();
        let b = build_bundle(&s, &spec).unwrap();
        let mut rng = stream(6, "perm", 0);
        let mut idx1: Vec<usize> = (0..15).collect();
        let mut idx2: Vec<usize> = (15..35).collect();
        idx1.shuffle(&mut rng);
        idx2.shuffle(&mut rng);
        let idx: Vec<usize> = idx1.into_iter().chain(idx2).collect();
        let shuffled = TwoSample::from_pooled(s.points().select(&idx), 15).unwrap();
        let bs = build_bundle(&shuffled, &spec).unwrap();
        for gamma in [1e-3, 0.1, 1.0] {
            let (a, c) = (b.regularized_quadratic(gamma).unwrap(), bs.regularized_quadratic(gamma).unwrap());
            assert!((a - c).abs() < 1e-10 * a.max(1.0));
        }
    }

    #[test]
    fn resample_reuses_gram() {
        let s = random_sample(8, 1, 5, 5, 0.0);
        let b = build_bundle(&s, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        let idx = [9, 0, 3, 3, 1, 2, 8, 7];
        let r = b.resample(&idx, 4).unwrap();
        let direct = build_bundle(
            &TwoSample::from_pooled(s.points().select(&idx), 4).unwrap(),
            &KernelSpec::gaussian(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(r.gram().to_rows(), direct.gram().to_rows());
        assert!(b.resample(&[0, 1, 2, 10], 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn d_r_nonincreasing_in_gamma(
            spec in proptest::collection::vec(0.0f64..10.0, 1..20),
            g in 1e-6f64..10.0,
            f in 1.0f64..100.0,
            extra in 1e-6f64..10.0,
        ) {
            for r in [1, 2] {
                let lo = d_r(&spec, g, r).unwrap();
                let hi = d_r(&spec, g * f, r).unwrap();
                prop_assert!(hi <= lo * (1.0 + 1e-12));
                let mut more = spec.clone();
                more.push(extra);
                prop_assert!(d_r(&more, g, r).unwrap() >= lo);
            }
            let d1 = d_r(&spec, g, 1).unwrap();
            let d2 = d_r(&spec, g, 2).unwrap();
            prop_assert!(d2 <= d1 * (1.0 + 1e-12));
            prop_assert!(d1 <= spec.len() as f64);
            if spec.iter().any(|&l| l > 0.0) {
                prop_assert!(d2 > 0.0);
            }
        }

        #[test]
        fn quadratic_nonnegative_and_nonincreasing(seed in 0u64..1000, g in 1e-4f64..1.0) {
            let s = random_sample(seed, 1, 8, 9, 0.5);
            let b = build_bundle(&s, &KernelSpec::gaussian(1.0).unwrap()).unwrap();
            let a = b.regularized_quadratic(g).unwrap();
            let c = b.regularized_quadratic(g * 2.0).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!(c <= a * (1.0 + 1e-9));
        }
    }
}

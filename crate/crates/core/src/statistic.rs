//! KFDA and MMD statistics, plus exact oracles used to validate them.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{build_bundle, d_r, GramBundle, TwoSample};
use crate::kernel::{gram, KernelSpec, Points};

/// How γ was chosen. The statistic itself always receives a concrete γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSchedule {
    Fixed,
    /// γ_n = scale · n^{−exponent}, with 0 < exponent < 1/2.
    Decaying { exponent: f64, scale: f64 },
}

impl GammaSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaSchedule::Fixed => Ok(()),
            GammaSchedule::Decaying { exponent, scale } => {
                if !(exponent > 0.0 && exponent < 0.5) {
                    return Err(Error::invalid(format!(
                        "decaying schedule exponent must lie in (0, 1/2), got {exponent}"
                    )));
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return Err(Error::invalid(format!("decaying schedule scale must be > 0, got {scale}")));
                }
                Ok(())
            }
        }
    }

    /// γ for a pooled sample of size n; `None` for a fixed schedule.
    pub fn gamma_at(&self, n: usize) -> Option<f64> {
        match *self {
            GammaSchedule::Fixed => None,
            GammaSchedule::Decaying { exponent, scale } => Some(scale * (n as f64).powf(-exponent)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatisticRequest {
    pub sample: TwoSample,
    pub spec: KernelSpec,
    pub gamma: f64,
    pub schedule: GammaSchedule,
}

impl StatisticRequest {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.schedule.validate()?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatisticValue {
    pub raw_quadratic: f64,
    pub normalized: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn kfda_statistic(req: &StatisticRequest) -> Result<TestStatisticValue> {
    req.validate()?;
    let bundle = build_bundle(&req.sample, &req.spec)?;
    kfda_from_bundle(&bundle, req.gamma)
}

/// Normalized statistic (raw − d1)/(√2·d2) on an existing bundle. The
/// bundle caches its spectrum, so sweeping γ costs one factorization per γ.
pub fn kfda_from_bundle(bundle: &GramBundle, gamma: f64) -> Result<TestStatisticValue> {
    let spectrum = bundle.pooled_spectrum()?;
    if spectrum.is_empty() {
        return Err(Error::DegenerateSpectrum(
            "pooled covariance has no positive eigenvalue (constant kernel or constant data?)".into(),
        ));
    }
    let d1 = d_r(spectrum, gamma, 1)?;
    let d2 = d_r(spectrum, gamma, 2)?;
    if d2 <= 0.0 {
        return Err(Error::DegenerateSpectrum(format!("d2 = {d2} at gamma = {gamma}")));
    }
    let raw = bundle.regularized_quadratic(gamma)?;
    Ok(TestStatisticValue {
        raw_quadratic: raw,
        normalized: (raw - d1) / (std::f64::consts::SQRT_2 * d2),
        d1,
        d2,
    })
}

/// (n1 n2 / n) · mᵀKm
pub fn mmd_statistic(bundle: &GramBundle) -> f64 {
    bundle.size_factor() * bundle.mean_gap_sq()
}

/// (n1 n2 / n) δ̂ᵀ Σ̂_W⁻¹ δ̂ computed directly on the coordinates.
pub fn hotelling_oracle(sample: &TwoSample) -> Result<f64> {
    let d = sample.points().dim();
    let (s1, s2) = (sample.sample1(), sample.sample2());
    let mean = |p: &Points| -> Vec<f64> {
        (0..d).map(|c| p.iter().map(|x| x[c]).sum::<f64>() / p.len() as f64).collect()
    };
    let (m1, m2) = (mean(&s1), mean(&s2));
    let n = sample.n() as f64;
    let mut cov = Mat::<f64>::zeros(d, d);
    for (pts, mu) in [(&s1, &m1), (&s2, &m2)] {
        for x in pts.iter() {
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += (x[a] - mu[a]) * (x[b] - mu[b]) / n;
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let ev = cov
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::NumericFailure(format!("{e:?}")))?;
    let top = ev.iter().cloned().fold(0.0_f64, f64::max);
    let low = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if top <= 0.0 || low <= 1e-12 * top {
        return Err(Error::SingularCovariance(format!(
            "eigenvalues of the pooled covariance range over [{low:e}, {top:e}]"
        )));
    }
    let delta = Mat::from_fn(d, 1, |a, _| m2[a] - m1[a]);
    let llt = cov
        .llt(Side::Lower)
        .map_err(|e| Error::SingularCovariance(format!("{e:?}")))?;
    let z = llt.solve(&delta);
    let q: f64 = (0..d).map(|a| delta[(a, 0)] * z[(a, 0)]).sum();
    Ok(sample.n1() as f64 * sample.n2() as f64 / n * q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Chi2Identity {
    Finite { lhs: f64, rhs: f64 },
    /// The two distributions have disjoint supports.
    Singular,
}

/// Both sides of ‖Σ_W^{-1/2}(μ₂ − μ₁)‖² = (1/(ρ₁ρ₂))·(1 − I)/I with
/// I = Σ p₁p₂/(ρ₁p₁ + ρ₂p₂), for distributions on a finite support.
///
/// The left side is computed in the feature space spanned by the support
/// (K = LLᵀ), with the pseudo-inverse of Σ_W on its range.
pub fn population_chi2_identity(
    support: &Points,
    p1: &[f64],
    p2: &[f64],
    rho1: f64,
    spec: &KernelSpec,
) -> Result<Chi2Identity> {
    let s = support.len();
    if s == 0 || s > 50 {
        return Err(Error::invalid(format!("support size must be in 1..=50, got {s}")));
    }
    if p1.len() != s || p2.len() != s {
        return Err(Error::DimensionMismatch { left: p1.len().max(p2.len()), right: s });
    }
    for p in [p1, p2] {
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probabilities must be nonnegative and sum to 1"));
        }
    }
    if !(rho1 > 0.0 && rho1 < 1.0) {
        return Err(Error::invalid(format!("rho1 must lie in (0, 1), got {rho1}")));
    }
    let rho2 = 1.0 - rho1;

    // Support points charged by neither distribution play no role.
    let live: Vec<usize> = (0..s).filter(|&i| p1[i] > 0.0 || p2[i] > 0.0).collect();
    let integral: f64 = live
        .iter()
        .map(|&i| p1[i] * p2[i] / (rho1 * p1[i] + rho2 * p2[i]))
        .sum();
    if integral <= 0.0 {
        return Ok(Chi2Identity::Singular);
    }
    let rhs = (1.0 - integral) / (integral * rho1 * rho2);

    let pts = support.select(&live);
    let r = live.len();
    let k = gram(spec, &pts)?;
    let chol = k
        .as_mat()
        .llt(Side::Lower)
        .map_err(|_| Error::invalid("kernel is not strictly positive definite on the support"))?;
    let l = chol.L();
    let (q1, q2): (Vec<f64>, Vec<f64>) = live.iter().map(|&i| (p1[i], p2[i])).unzip();
    // W = ρ₁(D₁ − p₁p₁ᵀ) + ρ₂(D₂ − p₂p₂ᵀ)
    let w = Mat::from_fn(r, r, |i, j| {
        let diag = if i == j { rho1 * q1[i] + rho2 * q2[i] } else { 0.0 };
        diag - rho1 * q1[i] * q1[j] - rho2 * q2[i] * q2[j]
    });
    let cov = l.transpose() * &w * l;
    let cov = Mat::from_fn(r, r, |i, j| if i >= j { cov[(i, j)] } else { cov[(j, i)] });
    let diff = Mat::from_fn(r, 1, |i, _| q2[i] - q1[i]);
    let delta = l.transpose() * &diff;

    let eig = cov
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::NumericFailure(format!("{e:?}")))?;
    let ev = eig.S().column_vector();
    let u = eig.U();
    let top = (0..r).map(|i| ev[i]).fold(0.0_f64, f64::max);
    let mut lhs = 0.0;
    for a in 0..r {
        if ev[a] > 1e-12 * top {
            let proj: f64 = (0..r).map(|i| u[(i, a)] * delta[(i, 0)]).sum();
            lhs += proj * proj / ev[a];
        }
    }
    Ok(Chi2Identity::Finite { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::RngExt;
    use rand_distr::StandardNormal;

    use crate::rng::stream;

    fn toy() -> TwoSample {
        TwoSample::new(
            &Points::from_scalars(&[0.0, 2.0]).unwrap(),
            &Points::from_scalars(&[1.0, 3.0]).unwrap(),
        )
        .unwrap()
    }

    fn request(sample: TwoSample, spec: KernelSpec, gamma: f64) -> StatisticRequest {
        StatisticRequest { sample, spec, gamma, schedule: GammaSchedule::Fixed }
    }

    fn normal_sample(seed: u64, d: usize, n1: usize, n2: usize, shift: f64) -> TwoSample {
        let mut rng = stream(seed, "statistic-test", 0);
        let mut draw = |k: usize, s: f64| -> Points {
            Points::new(d, (0..k * d).map(|_| rng.sample::<f64, _>(StandardNormal) + s).collect()).unwrap()
        };
        let a = draw(n1, 0.0);
        let b = draw(n2, shift);
        TwoSample::new(&a, &b).unwrap()
    }

    #[test]
    fn kfda_toy_example() {
        let v = kfda_statistic(&request(toy(), KernelSpec::Linear, 1.0)).unwrap();
        assert_abs_diff_eq!(v.raw_quadratic, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.d1, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.d2, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.normalized, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_samples_sit_below_zero() {
        let p = Points::from_scalars(&[0.1, 0.5, 0.9]).unwrap();
        let s = TwoSample::new(&p, &p).unwrap();
        let v = kfda_statistic(&request(s, KernelSpec::gaussian(1.0).unwrap(), 1.0)).unwrap();
        assert!(v.raw_quadratic.abs() < 1e-12);
        assert_abs_diff_eq!(v.normalized, -v.d1 / (std::f64::consts::SQRT_2 * v.d2), epsilon = 1e-12);
        assert!(v.normalized < 0.0);
    }

    #[test]
    fn constant_kernel_is_degenerate() {
        let p = Points::from_scalars(&[0.2; 4]).unwrap();
        let s = TwoSample::from_pooled(p, 2).unwrap();
        let err = kfda_statistic(&request(s, KernelSpec::gaussian(1.0).unwrap(), 1.0)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum(_)));
    }

    #[test]
    fn request_validation() {
        let mut r = request(toy(), KernelSpec::Linear, 0.0);
        assert!(kfda_statistic(&r).is_err());
        r.gamma = 1.0;
        r.schedule = GammaSchedule::Decaying { exponent: 0.5, scale: 1.0 };
        assert!(kfda_statistic(&r).is_err());
        r.schedule = GammaSchedule::Decaying { exponent: 0.25, scale: 1.0 };
        assert!(kfda_statistic(&r).is_ok());
        assert_abs_diff_eq!(r.schedule.gamma_at(16).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mmd_examples() {
        let b = build_bundle(&toy(), &KernelSpec::Linear).unwrap();
        assert_abs_diff_eq!(mmd_statistic(&b), 1.0, epsilon = 1e-12);

        let p = Points::from_scalars(&[0.3, 1.1]).unwrap();
        let b = build_bundle(&TwoSample::new(&p, &p).unwrap(), &KernelSpec::gaussian(1.0).unwrap()).unwrap();
        assert!(mmd_statistic(&b).abs() < 1e-12);

        // Clusters 100σ apart: cross terms vanish, so mKm is the sum of the
        // within-sample mean kernel values.
        let a = Points::from_scalars(&[0.0, 0.1, 0.3]).unwrap();
        let c = Points::from_scalars(&[100.0, 100.2]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let b = build_bundle(&TwoSample::new(&a, &c).unwrap(), &spec).unwrap();
        let within = |p: &Points| -> f64 {
            let n = p.len() as f64;
            p.iter().flat_map(|x| p.iter().map(move |y| spec.eval(x, y).unwrap())).sum::<f64>() / (n * n)
        };
        let expect = 6.0 / 5.0 * (within(&a) + within(&c));
        assert_abs_diff_eq!(mmd_statistic(&b), expect, epsilon = 1e-6);
        // and close to (n1 n2 / n)·2 because the clusters are tight
        assert!((mmd_statistic(&b) - 2.4).abs() < 0.1);
    }

    #[test]
    fn hotelling_examples() {
        assert_abs_diff_eq!(hotelling_oracle(&toy()).unwrap(), 1.0, epsilon = 1e-12);
        let p = Points::from_scalars(&[0.0, 1.0, 4.0]).unwrap();
        assert!(hotelling_oracle(&TwoSample::new(&p, &p).unwrap()).unwrap().abs() < 1e-14);
        let flat = Points::from_rows(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            hotelling_oracle(&TwoSample::new(&flat, &flat).unwrap()),
            Err(Error::SingularCovariance(_))
        ));
    }

    #[test]
    fn hotelling_matches_kfda_at_tiny_gamma() {
        let s = normal_sample(21, 3, 30, 30, 0.4);
        let h = hotelling_oracle(&s).unwrap();
        let v = kfda_statistic(&request(s, KernelSpec::Linear, 1e-10)).unwrap();
        assert!((v.raw_quadratic - h).abs() < 1e-6 * h, "{} vs {h}", v.raw_quadratic);
    }

    #[test]
    fn chi2_identity_examples() {
        let support = Points::from_scalars(&[0.0, 1.0]).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        match population_chi2_identity(&support, &[0.5, 0.5], &[0.25, 0.75], 0.5, &spec).unwrap() {
            Chi2Identity::Finite { lhs, rhs } => {
                assert_abs_diff_eq!(rhs, 2.0 / 7.0, epsilon = 1e-12);
                assert_abs_diff_eq!(lhs, 2.0 / 7.0, epsilon = 1e-10);
            }
            Chi2Identity::Singular => panic!("overlapping supports"),
        }
        let support = Points::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        match population_chi2_identity(&support, &[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5], 0.3, &spec).unwrap() {
            Chi2Identity::Finite { lhs, rhs } => {
                assert!(lhs.abs() < 1e-12 && rhs.abs() < 1e-12);
            }
            Chi2Identity::Singular => panic!("identical distributions"),
        }
        assert_eq!(
            population_chi2_identity(&support, &[0.5, 0.5, 0.0], &[0.0, 0.0, 1.0], 0.5, &spec).unwrap(),
            Chi2Identity::Singular
        );
    }

    #[test]
    fn label_swap_leaves_statistics_unchanged() {
        let s = normal_sample(4, 2, 12, 17, 0.6);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (a, b) = (build_bundle(&s, &spec).unwrap(), build_bundle(&s.swapped(), &spec).unwrap());
        assert!((a.regularized_quadratic(0.1).unwrap() - b.regularized_quadratic(0.1).unwrap()).abs() < 1e-12);
        assert!((mmd_statistic(&a) - mmd_statistic(&b)).abs() < 1e-12);
    }

    #[test]
    fn kernel_scaling() {
        // c·k: MMD scales by c; the Fisher ratio is scale-free as γ → 0.
        let s = normal_sample(5, 2, 15, 15, 0.3);
        let b = build_bundle(&s, &KernelSpec::Linear).unwrap();
        let c = 7.5;
        let scaled_k = Mat::from_fn(30, 30, |i, j| c * b.gram().get(i, j));
        let scaled = GramBundle::from_gram(crate::kernel::GramMatrix::from_mat(scaled_k).unwrap(), 15).unwrap();
        assert!((mmd_statistic(&scaled) - c * mmd_statistic(&b)).abs() <= 1e-12 * mmd_statistic(&scaled));
        let lo = b.regularized_quadratic(1e-10).unwrap();
        let hi = scaled.regularized_quadratic(1e-10 * c).unwrap();
        assert!((lo - hi).abs() < 1e-4 * lo);
    }

    #[test]
    fn null_mean_of_normalized_statistic_is_near_zero() {
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let reps = 500;
        let mut sum = 0.0;
        for r in 0..reps {
            let mut rng = stream(77, "null-mean", r);
            let xs: Vec<f64> = (0..80).map(|_| rng.sample(StandardNormal)).collect();
            let s = TwoSample::from_pooled(Points::from_scalars(&xs).unwrap(), 40).unwrap();
            sum += kfda_statistic(&request(s, spec, 0.1)).unwrap().normalized;
        }
        let mean = sum / reps as f64;
        assert!(mean.abs() <= 0.15, "mean {mean}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn raw_quadratic_nonincreasing_in_gamma(seed in 0u64..500, g in 1e-3f64..1.0) {
            let s = normal_sample(seed, 1, 10, 10, 0.5);
            let b = build_bundle(&s, &KernelSpec::gaussian(0.8).unwrap()).unwrap();
            let lo = kfda_from_bundle(&b, g).unwrap();
            let hi = kfda_from_bundle(&b, g * 3.0).unwrap();
            prop_assert!(hi.raw_quadratic <= lo.raw_quadratic * (1.0 + 1e-9));
            prop_assert!(mmd_statistic(&b) >= -1e-12);
        }

        #[test]
        fn statistic_fields_consistent(seed in 0u64..500, g in 1e-3f64..10.0) {
            let s = normal_sample(seed, 2, 9, 11, 0.2);
            let v = kfda_statistic(&request(s, KernelSpec::gaussian(1.5).unwrap(), g)).unwrap();
            prop_assert!(v.d2 > 0.0 && v.d2 <= v.d1 * (1.0 + 1e-12));
            let expect = (v.raw_quadratic - v.d1) / (std::f64::consts::SQRT_2 * v.d2);
            prop_assert!((v.normalized - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }

        #[test]
        fn chi2_identity_holds(seed in 0u64..10_000, s in 2usize..=10) {
            let mut rng = stream(seed, "chi2", 0);
            let mut draw = || -> Vec<f64> {
                let v: Vec<f64> = (0..s).map(|_| rng.random::<f64>() + 0.01).collect();
                let t: f64 = v.iter().sum();
                v.into_iter().map(|x| x / t).collect()
            };
            let (p1, p2) = (draw(), draw());
            let rho1 = 0.2 + 0.6 * rng.random::<f64>();
            let support = Points::from_scalars(&(0..s).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
            match population_chi2_identity(&support, &p1, &p2, rho1, &KernelSpec::gaussian(1.0).unwrap()).unwrap() {
                Chi2Identity::Finite { lhs, rhs } => prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-12), "{} vs {}", lhs, rhs),
                Chi2Identity::Singular => prop_assert!(false, "overlapping supports flagged singular"),
            }
        }
    }
}

//! Fourier-contamination alternatives on [0, 1], limiting power formulas and
//! Monte-Carlo power / ROC studies.
//!
//! Alternatives have density 1 + η c_q(t) with respect to Uniform[0, 1],
//! where c_0 = 1, c_{2ℓ−1}(t) = √2 sin(2πℓt) and c_{2ℓ}(t) = √2 cos(2πℓt).
//! Under the uniform law the periodic spline kernel of order m has
//! eigenpairs (λ_p, λ_p^{1/2} c_p) with λ_{2ℓ−1} = λ_{2ℓ} = (2πℓ)^{−2m}.

use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    mixture_quantile, normal_cdf, normal_quantile, run_mmd_test, weighted_chi2_draws, CalibrationMethod,
    MixtureSpec, TestConfig,
};
use crate::error::{Error, Result};
use crate::gram::{build_bundle, TwoSample};
use crate::kernel::{KernelSpec, Points};
use crate::rng::{derive_seed, stream, StreamRng};

/// Replicates used for theoretical (limiting-law) power.
pub const THEORY_REPLICATES: usize = 100_000;

pub fn fourier_basis(p: usize, t: f64) -> f64 {
    if p == 0 {
        return 1.0;
    }
    let l = p.div_ceil(2) as f64;
    let arg = 2.0 * std::f64::consts::PI * l * t;
    if p % 2 == 1 {
        std::f64::consts::SQRT_2 * arg.sin()
    } else {
        std::f64::consts::SQRT_2 * arg.cos()
    }
}

/// λ_p of the order-m spline kernel under the uniform law; λ_0 = 1 is the
/// constant mode, which centering removes.
pub fn spline_eigenvalue(order: u32, p: usize) -> f64 {
    if p == 0 {
        return 1.0;
    }
    let l = p.div_ceil(2) as f64;
    (2.0 * std::f64::consts::PI * l).powi(-2 * order as i32)
}

/// λ_1, ..., λ_count.
pub fn spline_spectrum(order: u32, count: usize) -> Vec<f64> {
    (1..=count).map(|p| spline_eigenvalue(order, p)).collect()
}

/// Population spline spectrum long enough that the dropped weights carry
/// less than `tail` of Σ w_p² at regularization γ (at least `min_len` terms).
pub fn population_spectrum(order: u32, gamma: f64, tail: f64, min_len: usize) -> Vec<f64> {
    let mut lam = spline_spectrum(order, min_len.max(2));
    loop {
        let w2: Vec<f64> = lam.iter().map(|l| (l / (l + gamma)).powi(2)).collect();
        let total: f64 = w2.iter().sum();
        // Pairs decay like ℓ^{−4m}; bound the remainder by an integral.
        let last = *w2.last().unwrap_or(&0.0);
        let l = (lam.len() / 2) as f64;
        let rest = 2.0 * last * l / (4.0 * order as f64 - 1.0);
        if rest <= tail * total || lam.len() > 2_000_000 {
            return lam;
        }
        let next = lam.len() * 2;
        lam = spline_spectrum(order, next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlternativeModel {
    /// Density 1 + η c_q, the same at every n.
    Fixed { q: usize, eta: f64 },
    /// Density 1 + A n^{−1/2} c_q.
    Directional { q: usize, amplitude: f64 },
    /// Density 1 + η_n c_{q_n} with q_n = max(1, ⌊scale·n^{exponent}⌋) and
    /// η_n = (2Δ)^{1/2} q_n^{1/4} n^{−1/2}.
    NonDirectional { delta: f64, q_scale: f64, q_exponent: f64 },
}

/// An alternative at a concrete pooled sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub q: usize,
    pub eta: f64,
}

impl Contamination {
    pub fn new(q: usize, eta: f64) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) || eta * std::f64::consts::SQRT_2 >= 1.0 {
            return Err(Error::InvalidAmplitude { eta });
        }
        if q == 0 && eta > 0.0 {
            return Err(Error::invalid("contamination needs a component q >= 1"));
        }
        Ok(Contamination { q, eta })
    }

    pub fn density(&self, t: f64) -> f64 {
        1.0 + self.eta * fourier_basis(self.q, t)
    }
}

impl AlternativeModel {
    pub fn resolve(&self, n: usize) -> Result<Contamination> {
        let nf = n as f64;
        match *self {
            AlternativeModel::Fixed { q, eta } => Contamination::new(q, eta),
            AlternativeModel::Directional { q, amplitude } => Contamination::new(q, amplitude / nf.sqrt()),
            AlternativeModel::NonDirectional { delta, q_scale, q_exponent } => {
                if !(delta >= 0.0 && q_scale > 0.0 && q_exponent >= 0.0) {
                    return Err(Error::invalid("non-directional model needs delta >= 0, q_scale > 0, q_exponent >= 0"));
                }
                let q = ((q_scale * nf.powf(q_exponent)).floor() as usize).max(1);
                let eta = (2.0 * delta).sqrt() * (q as f64).powf(0.25) / nf.sqrt();
                Contamination::new(q, eta)
            }
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.resolve(n).map(|_| ())
    }
}

/// I.i.d. draws from 1 + η c_q by rejection under the envelope 1 + η√2.
pub fn sample_alternative<R: rand::Rng + ?Sized>(c: &Contamination, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let c = Contamination::new(c.q, c.eta)?;
    let top = 1.0 + c.eta * std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t: f64 = rng.random();
        let u: f64 = rng.random::<f64>() * top;
        if u <= c.density(t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// a_{n,p}(γ), indexed from p = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftVector {
    pub a: Vec<f64>,
}

impl ShiftVector {
    pub fn get(&self, p: usize) -> f64 {
        if p == 0 {
            return 0.0;
        }
        self.a.get(p - 1).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }
}

/// Shift of a single-component contamination in the limit law
/// Σ_p w_p (Z_p + a_p)²: a_q = (n1 n2 / n)^{1/2} λ_q^{−1/2}⟨δ, e_q⟩ = (n1 n2 / n)^{1/2} η,
/// zero elsewhere. The regularization enters only through the weights w_p.
pub fn contamination_shift(c: &Contamination, n1: usize, n2: usize) -> ShiftVector {
    let mut a = vec![0.0; c.q];
    if c.q > 0 {
        let size = (n1 as f64 * n2 as f64 / (n1 + n2) as f64).sqrt();
        a[c.q - 1] = size * c.eta;
    }
    ShiftVector { a }
}

/// Shift for the directional alternative with amplitude A, η = A n^{−1/2}.
pub fn directional_shift(q: usize, amplitude: f64, n1: usize, n2: usize) -> ShiftVector {
    let n = (n1 + n2) as f64;
    let c = Contamination { q, eta: amplitude / n.sqrt() };
    contamination_shift(&c, n1, n2)
}

/// P(2^{−1/2} d2⁻¹ Σ w_p{(Z_p + a_p)² − 1} > t_{1−α}), with t_{1−α} the null
/// quantile of the same mixture. Both are Monte-Carlo estimates.
pub fn fixed_gamma_theoretical_power(
    shift: &ShiftVector,
    mix: &MixtureSpec,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let crit = mixture_quantile(mix, alpha, replicates, seed)?;
    let w = mix.weights();
    let len = w.len().max(shift.a.len());
    let mut padded = w.to_vec();
    padded.resize(len, 0.0);
    let draws = weighted_chi2_draws(&[&padded], &[Some(&shift.a)], padded.len(), replicates, seed, "shifted-mixture").remove(0);
    let hits = draws.iter().filter(|&&x| mix.normalize(x) > crit).count();
    Ok(hits as f64 / replicates as f64)
}

/// 1 − Φ(z_{1−α} − ρ₁(1−ρ₁)Δ).
pub fn decaying_gamma_theoretical_power(delta: f64, rho1: f64, alpha: f64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::invalid(format!("delta must be >= 0, got {delta}")));
    }
    if !(rho1 > 0.0 && rho1 < 1.0) {
        return Err(Error::invalid(format!("rho1 must lie in (0, 1), got {rho1}")));
    }
    let z = normal_quantile(alpha)?;
    Ok(1.0 - normal_cdf(z - rho1 * (1.0 - rho1) * delta))
}

/// Limiting fixed-γ power of the spline-kernel test against `c` at sample
/// sizes (n1, n2), using the population spectrum.
pub fn spline_theoretical_power(
    c: &Contamination,
    order: u32,
    gamma: f64,
    n1: usize,
    n2: usize,
    alpha: f64,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let lam = population_spectrum(order, gamma, 1e-8, c.q.max(2));
    let mix = MixtureSpec::from_spectrum(&lam, gamma)?;
    let shift = contamination_shift(c, n1, n2);
    fixed_gamma_theoretical_power(&shift, &mix, alpha, replicates, seed)
}

/// Data generator for simulation studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Uniform,
    Contaminated { q: usize, eta: f64 },
    /// Equal-weight mixture of N(mean + shift, sd²) components in ℝ^dim,
    /// each mean repeated across coordinates.
    GaussianMixture { means: Vec<f64>, sd: f64, shift: f64, dim: usize },
}

impl Generator {
    pub fn validate(&self) -> Result<()> {
        match self {
            Generator::Uniform => Ok(()),
            Generator::Contaminated { q, eta } => Contamination::new(*q, *eta).map(|_| ()),
            Generator::GaussianMixture { means, sd, dim, .. } => {
                if means.is_empty() || !(*sd > 0.0) || *dim == 0 {
                    Err(Error::invalid("gaussian mixture needs means, sd > 0 and dim >= 1"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn draw(&self, n: usize, rng: &mut StreamRng) -> Result<Points> {
        match self {
            Generator::Uniform => Points::from_scalars(&(0..n).map(|_| rng.random()).collect::<Vec<f64>>()),
            Generator::Contaminated { q, eta } => {
                Points::from_scalars(&sample_alternative(&Contamination::new(*q, *eta)?, n, rng)?)
            }
            Generator::GaussianMixture { means, sd, shift, dim } => {
                self.validate()?;
                let mut coords = Vec::with_capacity(n * dim);
                for _ in 0..n {
                    let mu = means[rng.random_range(0..means.len())] + shift;
                    for _ in 0..*dim {
                        coords.push(mu + sd * rng.sample::<f64, _>(StandardNormal));
                    }
                }
                Points::new(*dim, coords)
            }
        }
    }

    /// Synthetic stand-in for the speaker-verification data: a three-cluster
    /// mixture against the same mixture shifted by `shift`.
    pub fn speaker_proxy(shift: f64) -> (Generator, Generator) {
        let base = Generator::GaussianMixture { means: vec![-2.0, 0.0, 2.0], sd: 0.7, shift: 0.0, dim: 2 };
        let alt = Generator::GaussianMixture { means: vec![-2.0, 0.0, 2.0], sd: 0.7, shift, dim: 2 };
        (base, alt)
    }
}

/// Null generator paired with an alternative generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub null: Generator,
    pub alternative: Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub gamma: f64,
    pub q: usize,
    pub n: usize,
    /// Limiting fixed-γ power; present for spline kernels.
    pub theoretical_power: Option<f64>,
    pub empirical_power: f64,
    /// MMD rejection rate on the same data sets (γ-independent).
    pub empirical_power_mmd: Option<f64>,
    pub replications: usize,
}

impl PowerPoint {
    /// Binomial standard error of the KFDA rejection rate.
    pub fn standard_error(&self) -> f64 {
        let p = self.empirical_power;
        (p * (1.0 - p) / self.replications as f64).sqrt()
    }
}

/// Settings shared by power and ROC studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n1: usize,
    pub n2: usize,
    pub alpha: f64,
    pub replications: usize,
    pub method: CalibrationMethod,
    /// Calibration replicates per test.
    pub replicates: usize,
    pub block_length: Option<usize>,
    pub seed: u64,
    pub with_mmd: bool,
}

impl StudyConfig {
    pub fn new(n1: usize, n2: usize, alpha: f64, replications: usize, method: CalibrationMethod, seed: u64) -> Self {
        StudyConfig {
            n1,
            n2,
            alpha,
            replications,
            method,
            replicates: method.default_replicates(),
            block_length: None,
            seed,
            with_mmd: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replications < 100 {
            return Err(Error::invalid(format!("need at least 100 replications, got {}", self.replications)));
        }
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::invalid("each sample needs at least 2 points"));
        }
        Ok(())
    }

    fn test_config(&self, gamma: f64, seed: u64) -> TestConfig {
        TestConfig {
            gamma,
            alpha: self.alpha,
            method: self.method,
            replicates: self.replicates,
            block_length: self.block_length,
            seed,
        }
    }
}

/// Per data set: KFDA decision at each γ, and the MMD decision.
fn sweep_replicate(
    sample: &TwoSample,
    spec: &KernelSpec,
    gammas: &[f64],
    cfg: &StudyConfig,
    r: usize,
) -> Result<(Vec<f64>, Option<f64>)> {
    let bundle = build_bundle(sample, spec)?;
    let seed = derive_seed(cfg.seed, &format!("calibration/{r}"));
    let p_values = crate::calibration::kfda_sweep(&bundle, gammas, &cfg.test_config(gammas[0], seed))?
        .into_iter()
        .map(|t| t.calibration.p_value)
        .collect();
    let mmd = if cfg.with_mmd {
        Some(run_mmd_test(&bundle, &cfg.test_config(gammas[0], seed))?.1.p_value)
    } else {
        None
    };
    Ok((p_values, mmd))
}

/// Rejection rates of the KFDA test (and optionally MMD) over a γ grid,
/// with sample 1 ~ Uniform[0, 1] and sample 2 from the alternative.
pub fn empirical_power_curve(
    model: &AlternativeModel,
    spec: &KernelSpec,
    gammas: &[f64],
    cfg: &StudyConfig,
) -> Result<Vec<PowerPoint>> {
    cfg.validate()?;
    if gammas.is_empty() {
        return Err(Error::invalid("need at least one gamma"));
    }
    let n = cfg.n1 + cfg.n2;
    let c = model.resolve(n)?;
    let runs: Vec<(Vec<f64>, Option<f64>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, "power-data", r as u64);
            let s1 = Generator::Uniform.draw(cfg.n1, &mut rng)?;
            let s2 = Points::from_scalars(&sample_alternative(&c, cfg.n2, &mut rng)?)?;
            let sample = TwoSample::new(&s1, &s2)?;
            sweep_replicate(&sample, spec, gammas, cfg, r).map_err(|e| e.context(format!("replication {r}")))
        })
        .collect::<Result<_>>()?;
    let reps = cfg.replications as f64;
    let mmd_power = cfg
        .with_mmd
        .then(|| runs.iter().filter(|(_, m)| m.is_some_and(|p| p <= cfg.alpha)).count() as f64 / reps);
    gammas
        .iter()
        .enumerate()
        .map(|(g, &gamma)| {
            let rejections = runs.iter().filter(|(p, _)| p[g] <= cfg.alpha).count();
            let theoretical_power = match spec {
                KernelSpec::PeriodicSpline { order } => Some(spline_theoretical_power(
                    &c,
                    *order,
                    gamma,
                    cfg.n1,
                    cfg.n2,
                    cfg.alpha,
                    THEORY_REPLICATES,
                    derive_seed(cfg.seed, "theory"),
                )?),
                _ => None,
            };
            Ok(PowerPoint {
                gamma,
                q: c.q,
                n,
                theoretical_power,
                empirical_power: rejections as f64 / reps,
                empirical_power_mmd: mmd_power,
                replications: cfg.replications,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Raw Monte-Carlo ROC points: at each α, the rejection rates of the KFDA
/// test on null pairs (fpr) and on alternative pairs (tpr).
pub fn roc_curve(
    scenario: &Scenario,
    spec: &KernelSpec,
    gamma: f64,
    alpha_grid: &[f64],
    cfg: &StudyConfig,
) -> Result<Vec<RocPoint>> {
    cfg.validate()?;
    scenario.null.validate()?;
    scenario.alternative.validate()?;
    if alpha_grid.is_empty()
        || alpha_grid.iter().any(|a| !(*a > 0.0 && *a < 1.0))
        || alpha_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::invalid("alpha grid must be strictly increasing inside (0, 1)"));
    }
    let pairs: Vec<(f64, f64)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(cfg.seed, "roc-data", r as u64);
            let a1 = scenario.null.draw(cfg.n1, &mut rng)?;
            let a2 = scenario.null.draw(cfg.n2, &mut rng)?;
            let b1 = scenario.null.draw(cfg.n1, &mut rng)?;
            let b2 = scenario.alternative.draw(cfg.n2, &mut rng)?;
            let seed = derive_seed(cfg.seed, &format!("roc-calibration/{r}"));
            let p = |s1: &Points, s2: &Points| -> Result<f64> {
                let bundle = build_bundle(&TwoSample::new(s1, s2)?, spec)?;
                Ok(crate::calibration::run_kfda_test(&bundle, &cfg.test_config(gamma, seed))?.calibration.p_value)
            };
            Ok((p(&a1, &a2)?, p(&b1, &b2)?))
        })
        .collect::<Result<_>>()?;
    let reps = cfg.replications as f64;
    Ok(alpha_grid
        .iter()
        .map(|&alpha| RocPoint {
            alpha,
            fpr: pairs.iter().filter(|(p0, _)| *p0 <= alpha).count() as f64 / reps,
            tpr: pairs.iter().filter(|(_, p1)| *p1 <= alpha).count() as f64 / reps,
        })
        .collect())
}

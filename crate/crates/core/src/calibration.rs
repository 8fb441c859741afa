//! Null calibration: weighted chi-square mixture, standard normal, and
//! resampling (permutation, bootstrap, block bootstrap).

use rand::seq::SliceRandom;
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::gram::{build_bundle, GramBundle, SpectralSummary, TwoSample};
use crate::kernel::KernelSpec;
use crate::rng::stream;
use crate::statistic::{kfda_from_bundle, mmd_statistic, TestStatisticValue};

pub const MIN_MIXTURE_REPLICATES: usize = 10_000;
pub const MIN_RESAMPLE_REPLICATES: usize = 200;
pub const DEFAULT_MIXTURE_REPLICATES: usize = 20_000;

/// Draws are generated in chunks, each from its own stream, so the result
/// does not depend on the number of worker threads.
const DRAW_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    #[serde(rename = "mixture")]
    MixtureMc,
    Normal,
    Permutation,
    Bootstrap,
    BlockBootstrap,
}

impl CalibrationMethod {
    pub const ALL: [CalibrationMethod; 5] = [
        CalibrationMethod::MixtureMc,
        CalibrationMethod::Normal,
        CalibrationMethod::Permutation,
        CalibrationMethod::Bootstrap,
        CalibrationMethod::BlockBootstrap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CalibrationMethod::MixtureMc => "mixture",
            CalibrationMethod::Normal => "normal",
            CalibrationMethod::Permutation => "permutation",
            CalibrationMethod::Bootstrap => "bootstrap",
            CalibrationMethod::BlockBootstrap => "block-bootstrap",
        }
    }

    pub fn is_resampling(&self) -> bool {
        matches!(
            self,
            CalibrationMethod::Permutation | CalibrationMethod::Bootstrap | CalibrationMethod::BlockBootstrap
        )
    }

    pub fn default_replicates(&self) -> usize {
        match self {
            CalibrationMethod::MixtureMc => DEFAULT_MIXTURE_REPLICATES,
            CalibrationMethod::Normal => 0,
            _ => 999,
        }
    }
}

impl std::str::FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibrationMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown calibration method '{s}'")))
    }
}

/// Weights w_p = λ_p/(λ_p+γ) of the fixed-γ null law
/// 2^{−1/2} d2⁻¹ Σ_p w_p (Z_p² − 1).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    weights: Vec<f64>,
    d1: f64,
    d2: f64,
}

impl MixtureSpec {
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::DegenerateSpectrum("mixture has no weights".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::invalid(format!("mixture weights must be finite and > 0, got {w}")));
        }
        weights.sort_by(|a, b| b.total_cmp(a));
        let d1 = weights.iter().rev().sum();
        let d2 = weights.iter().rev().map(|w| w * w).sum::<f64>().sqrt();
        Ok(MixtureSpec { weights, d1, d2 })
    }

    pub fn from_summary(summary: &SpectralSummary) -> Result<Self> {
        MixtureSpec::new(summary.weights())
    }

    /// Weights for eigenvalues `spectrum` regularized at γ.
    pub fn from_spectrum(spectrum: &[f64], gamma: f64) -> Result<Self> {
        MixtureSpec::from_summary(&SpectralSummary::new(spectrum, gamma)?)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn d1(&self) -> f64 {
        self.d1
    }

    pub fn d2(&self) -> f64 {
        self.d2
    }

    /// Map a raw draw Σ w_p Z_p² to the normalized scale.
    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.d1) / (std::f64::consts::SQRT_2 * self.d2)
    }

    /// Number of leading weights carrying all but a 1e-14 share of Σw².
    /// The rest change a draw by far less than its Monte-Carlo error.
    fn effective_len(&self) -> usize {
        effective_len(&self.weights)
    }
}

fn effective_len(sorted_desc: &[f64]) -> usize {
    let total: f64 = sorted_desc.iter().map(|w| w * w).sum();
    let mut tail = 0.0;
    let mut len = sorted_desc.len();
    while len > 1 {
        let w = sorted_desc[len - 1];
        if tail + w * w > 1e-14 * total {
            break;
        }
        tail += w * w;
        len -= 1;
    }
    len
}

/// Raw draws Σ_p w_p (Z_p + a_p)² for several weight vectors sharing the
/// same Z's. `shifts[k]`, when present, is padded with zeros. Each replicate
/// consumes `normals` standard normals (at least the longest weight vector),
/// so truncating a weight vector does not move the stream.
pub fn weighted_chi2_draws(
    weights: &[&[f64]],
    shifts: &[Option<&[f64]>],
    normals: usize,
    replicates: usize,
    seed: u64,
    label: &str,
) -> Vec<Vec<f64>> {
    let len = weights.iter().map(|w| w.len()).max().unwrap_or(0).max(normals);
    let chunks = replicates.div_ceil(DRAW_CHUNK);
    let per_chunk: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, label, c as u64);
            let count = DRAW_CHUNK.min(replicates - c * DRAW_CHUNK);
            let mut out = vec![Vec::with_capacity(count); weights.len()];
            let mut z = vec![0.0; len];
            for _ in 0..count {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for (k, w) in weights.iter().enumerate() {
                    let shift = shifts.get(k).copied().flatten();
                    let s: f64 = match shift {
                        None => w.iter().zip(&z).map(|(w, z)| w * z * z).sum(),
                        Some(a) => w
                            .iter()
                            .zip(&z)
                            .enumerate()
                            .map(|(p, (w, z))| {
                                let x = z + a.get(p).copied().unwrap_or(0.0);
                                w * x * x
                            })
                            .sum(),
                    };
                    out[k].push(s);
                }
            }
            out
        })
        .collect();
    let mut result = vec![Vec::with_capacity(replicates); weights.len()];
    for chunk in per_chunk {
        for (k, v) in chunk.into_iter().enumerate() {
            result[k].extend(v);
        }
    }
    result
}

/// Normalized null draws 2^{−1/2} d2⁻¹ Σ w_p (Z_p² − 1).
pub fn mixture_draws(mix: &MixtureSpec, replicates: usize, seed: u64) -> Vec<f64> {
    let w = &mix.weights[..mix.effective_len()];
    weighted_chi2_draws(&[w], &[None], mix.weights.len(), replicates, seed, "mixture")
        .remove(0)
        .into_iter()
        .map(|x| mix.normalize(x))
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Type-1 empirical quantile: the ⌈R·p⌉-th order statistic of sorted draws.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let r = sorted.len();
    let k = ((r as f64) * p - 1e-9).ceil().clamp(1.0, r as f64) as usize;
    sorted[k - 1]
}

pub fn mixture_quantile(mix: &MixtureSpec, alpha: f64, replicates: usize, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    if replicates < MIN_MIXTURE_REPLICATES {
        return Err(Error::invalid(format!(
            "mixture quantile needs at least {MIN_MIXTURE_REPLICATES} replicates, got {replicates}"
        )));
    }
    let mut draws = mixture_draws(mix, replicates, seed);
    draws.sort_by(f64::total_cmp);
    Ok(empirical_quantile(&draws, 1.0 - alpha))
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// z_{1−α}.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(inverse_normal_cdf(1.0 - alpha))
}

/// Φ⁻¹(p) by a rational approximation followed by one Halley step.
fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, 3.754408661907416e+00];
    const LOW: f64 = 0.02425;

    let x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// A calibrated null law for one statistic.
#[derive(Debug, Clone, PartialEq)]
pub enum NullDistribution {
    /// Sorted Monte-Carlo or resampling draws.
    Draws(Vec<f64>),
    StandardNormal,
}

impl NullDistribution {
    pub fn from_draws(mut draws: Vec<f64>) -> Self {
        draws.sort_by(f64::total_cmp);
        NullDistribution::Draws(draws)
    }

    /// Add-one smoothed upper tail for draws, 1 − Φ for the normal law.
    pub fn p_value(&self, statistic: f64) -> f64 {
        match self {
            NullDistribution::StandardNormal => normal_cdf(-statistic),
            NullDistribution::Draws(d) => {
                let below = d.partition_point(|&x| x < statistic);
                (1 + d.len() - below) as f64 / (d.len() + 1) as f64
            }
        }
    }

    pub fn critical_value(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        match self {
            NullDistribution::StandardNormal => normal_quantile(alpha),
            NullDistribution::Draws(d) if d.is_empty() => Err(Error::invalid("no null draws")),
            NullDistribution::Draws(d) => Ok(empirical_quantile(d, 1.0 - alpha)),
        }
    }

    pub fn replicates(&self) -> usize {
        match self {
            NullDistribution::StandardNormal => 0,
            NullDistribution::Draws(d) => d.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    pub alpha: f64,
    pub critical_value: f64,
    pub p_value: f64,
    pub mc_replicates: usize,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn rejects(&self) -> bool {
        self.p_value <= self.alpha
    }
}

/// Which statistic a resampling loop recomputes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Kfda,
    Mmd,
}

fn statistic_on(bundle: &GramBundle, kind: StatisticKind, gamma: f64) -> Result<f64> {
    match kind {
        StatisticKind::Kfda => Ok(kfda_from_bundle(bundle, gamma)?.normalized),
        StatisticKind::Mmd => Ok(mmd_statistic(bundle)),
    }
}

/// ⌈n^{1/3}⌉ using the smaller of the two sequences.
pub fn default_block_length(n1: usize, n2: usize) -> usize {
    let n = n1.min(n2) as f64;
    let mut l = n.cbrt().ceil() as usize;
    // guard against cbrt rounding just above an integer
    if l > 1 && ((l - 1) as f64).powi(3) >= n {
        l -= 1;
    }
    l.max(1)
}

/// Pooled indices for one resampling replicate; the first n1 are sample 1.
pub fn resample_indices<R: rand::Rng + ?Sized>(
    method: CalibrationMethod,
    n1: usize,
    n2: usize,
    block_length: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = n1 + n2;
    match method {
        CalibrationMethod::Permutation => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            Ok(idx)
        }
        CalibrationMethod::Bootstrap => Ok((0..n).map(|_| rng.random_range(0..n)).collect()),
        CalibrationMethod::BlockBootstrap => {
            if block_length == 0 || block_length > n1.min(n2) {
                return Err(Error::invalid(format!(
                    "block length must lie in 1..={}, got {block_length}",
                    n1.min(n2)
                )));
            }
            // Non-overlapping full blocks of each original sequence, pooled
            // under the null.
            let starts: Vec<usize> = (0..=n1 - block_length)
                .step_by(block_length)
                .chain((n1..=n - block_length).step_by(block_length))
                .collect();
            let mut idx = Vec::with_capacity(n);
            for target in [n1, n2] {
                let mut piece = Vec::with_capacity(target + block_length);
                while piece.len() < target {
                    let s = starts[rng.random_range(0..starts.len())];
                    piece.extend(s..s + block_length);
                }
                piece.truncate(target);
                idx.extend(piece);
            }
            Ok(idx)
        }
        other => Err(Error::invalid(format!("{} is not a resampling method", other.name()))),
    }
}

/// Replicate statistics at several γ on the same resampled index sets.
/// `out[g][r]` is replicate r at `gammas[g]`.
fn resample_sweep(
    bundle: &GramBundle,
    kind: StatisticKind,
    gammas: &[f64],
    method: CalibrationMethod,
    block_length: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !method.is_resampling() {
        return Err(Error::invalid(format!("{} is not a resampling method", method.name())));
    }
    let (n1, n2) = (bundle.n1(), bundle.n2());
    let rows: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, method.name(), r as u64);
            let idx = resample_indices(method, n1, n2, block_length, &mut rng)?;
            let b = bundle.resample(&idx, n1)?;
            gammas
                .iter()
                .map(|&g| statistic_on(&b, kind, g))
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.context(format!("replicate {r}")))
        })
        .collect::<Result<_>>()?;
    Ok((0..gammas.len()).map(|g| rows.iter().map(|row| row[g]).collect()).collect())
}

/// Replicate statistics under `method`, recomputed on re-indexed Gram
/// matrices. Order matches the replicate index regardless of threading.
pub fn resample_statistics(
    bundle: &GramBundle,
    kind: StatisticKind,
    gamma: f64,
    method: CalibrationMethod,
    block_length: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(resample_sweep(bundle, kind, &[gamma], method, block_length, replicates, seed)?.remove(0))
}

/// Settings of one calibrated test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub gamma: f64,
    pub alpha: f64,
    pub method: CalibrationMethod,
    pub replicates: usize,
    pub block_length: Option<usize>,
    pub seed: u64,
}

impl TestConfig {
    pub fn new(gamma: f64, alpha: f64, method: CalibrationMethod, seed: u64) -> Self {
        TestConfig { gamma, alpha, method, replicates: method.default_replicates(), block_length: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        match self.method {
            CalibrationMethod::MixtureMc if self.replicates < MIN_MIXTURE_REPLICATES => Err(Error::invalid(format!(
                "mixture calibration needs at least {MIN_MIXTURE_REPLICATES} replicates, got {}",
                self.replicates
            ))),
            m if m.is_resampling() && self.replicates < MIN_RESAMPLE_REPLICATES => Err(Error::invalid(format!(
                "resampling calibration needs at least {MIN_RESAMPLE_REPLICATES} replicates, got {}",
                self.replicates
            ))),
            _ => Ok(()),
        }
    }

    fn block_length_for(&self, bundle: &GramBundle) -> usize {
        self.block_length.unwrap_or_else(|| default_block_length(bundle.n1(), bundle.n2()))
    }
}

fn calibrate(statistic: f64, null: &NullDistribution, cfg: &TestConfig) -> Result<CalibrationResult> {
    Ok(CalibrationResult {
        method: cfg.method,
        alpha: cfg.alpha,
        critical_value: null.critical_value(cfg.alpha)?,
        p_value: null.p_value(statistic),
        mc_replicates: null.replicates(),
        seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KfdaTest {
    pub statistic: TestStatisticValue,
    pub calibration: CalibrationResult,
}

impl KfdaTest {
    pub fn rejects(&self) -> bool {
        self.calibration.rejects()
    }
}

pub fn run_kfda_test(bundle: &GramBundle, cfg: &TestConfig) -> Result<KfdaTest> {
    Ok(kfda_sweep(bundle, &[cfg.gamma], cfg)?.remove(0))
}

/// KFDA tests at each γ of `gammas` (the γ in `cfg` is ignored). Mixture
/// draws share their normal variates across γ and resampling replicates
/// share their index sets, so a sweep costs little more than one test.
pub fn kfda_sweep(bundle: &GramBundle, gammas: &[f64], cfg: &TestConfig) -> Result<Vec<KfdaTest>> {
    let configs: Vec<TestConfig> = gammas.iter().map(|&gamma| TestConfig { gamma, ..*cfg }).collect();
    for c in &configs {
        c.validate()?;
    }
    let stats = gammas
        .iter()
        .map(|&g| kfda_from_bundle(bundle, g))
        .collect::<Result<Vec<TestStatisticValue>>>()?;
    let nulls: Vec<NullDistribution> = match cfg.method {
        CalibrationMethod::Normal => vec![NullDistribution::StandardNormal; gammas.len()],
        CalibrationMethod::MixtureMc => {
            let spectrum = bundle.pooled_spectrum()?;
            let mixes = gammas
                .iter()
                .map(|&g| MixtureSpec::from_spectrum(spectrum, g))
                .collect::<Result<Vec<_>>>()?;
            let slices: Vec<&[f64]> = mixes.iter().map(|m| &m.weights()[..m.effective_len()]).collect();
            let raw = weighted_chi2_draws(&slices, &vec![None; slices.len()], spectrum.len(), cfg.replicates, cfg.seed, "mixture");
            raw.into_iter()
                .zip(&mixes)
                .map(|(d, m)| NullDistribution::from_draws(d.into_iter().map(|x| m.normalize(x)).collect()))
                .collect()
        }
        m => resample_sweep(bundle, StatisticKind::Kfda, gammas, m, cfg.block_length_for(bundle), cfg.replicates, cfg.seed)?
            .into_iter()
            .map(NullDistribution::from_draws)
            .collect(),
    };
    stats
        .into_iter()
        .zip(nulls.iter().zip(&configs))
        .map(|(statistic, (null, c))| Ok(KfdaTest { statistic, calibration: calibrate(statistic.normalized, null, c)? }))
        .collect()
}

/// MMD test; returns the statistic and its calibration. The normal method
/// has no meaning for MMD and falls back to the mixture Σ λ_p Z_p².
pub fn run_mmd_test(bundle: &GramBundle, cfg: &TestConfig) -> Result<(f64, CalibrationResult)> {
    cfg.validate()?;
    let statistic = mmd_statistic(bundle);
    let mut cfg = *cfg;
    let null = match cfg.method {
        CalibrationMethod::MixtureMc | CalibrationMethod::Normal => {
            let spectrum = bundle.pooled_spectrum()?;
            if spectrum.is_empty() {
                return Err(Error::DegenerateSpectrum("pooled covariance has no positive eigenvalue".into()));
            }
            cfg.method = CalibrationMethod::MixtureMc;
            cfg.replicates = cfg.replicates.max(MIN_MIXTURE_REPLICATES);
            let len = effective_len(spectrum);
            let draws = weighted_chi2_draws(&[&spectrum[..len]], &[None], spectrum.len(), cfg.replicates, cfg.seed, "mixture").remove(0);
            NullDistribution::from_draws(draws)
        }
        m => NullDistribution::from_draws(resample_statistics(
            bundle,
            StatisticKind::Mmd,
            cfg.gamma,
            m,
            cfg.block_length_for(bundle),
            cfg.replicates,
            cfg.seed,
        )?),
    };
    Ok((statistic, calibrate(statistic, &null, &cfg)?))
}

/// Resampling calibration of the KFDA statistic straight from data.
#[allow(clippy::too_many_arguments)]
pub fn resample_critical_value(
    sample: &TwoSample,
    spec: &KernelSpec,
    gamma: f64,
    method: CalibrationMethod,
    block_length: usize,
    replicates: usize,
    alpha: f64,
    seed: u64,
) -> Result<CalibrationResult> {
    if !method.is_resampling() {
        return Err(Error::invalid(format!("{} is not a resampling method", method.name())));
    }
    let cfg = TestConfig { gamma, alpha, method, replicates, block_length: Some(block_length), seed };
    let bundle = build_bundle(sample, spec)?;
    Ok(run_kfda_test(&bundle, &cfg)?.calibration)
}

//! Monte Carlo estimators for `Λ(n, β)`, the distance exponent, coupled β-sweeps
//! and the continuity telescope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graphs::{bfs_from_index, distance, BoxGraph};
use crate::lattice::BoxShape;
use crate::rng::mix64;
use crate::sampling::{chi_augment, coupled_sweep, sample_fast, Configuration, MeasureSpec};

/// Largest box (in vertices) for the all-pairs estimator.
pub const FULL_MAX_GUARD: usize = 256;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Largest telescope exponent `N` (box side `2^N`).
pub const MAX_TELESCOPE_EXPONENT: u32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    Corner,
    FullMax,
}

impl PairPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PairPolicy::Corner => "corner",
            PairPolicy::FullMax => "full_max",
        }
    }
}

/// Estimate of `Λ(n, β) = max_{u,v} E[D(u, v)] + 1` under one pair policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaEstimate {
    pub n: usize,
    pub dim: usize,
    pub measure: MeasureSpec,
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub pair_policy: PairPolicy,
    pub seed: u64,
    /// The vertex pair whose distance was averaged.
    pub pair: (u32, u32),
    /// Per-replica values of `D + 1`, in replica order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

impl LambdaEstimate {
    fn from_samples(
        n: usize,
        dim: usize,
        measure: MeasureSpec,
        policy: PairPolicy,
        seed: u64,
        pair: (u32, u32),
        samples: Vec<f64>,
    ) -> Self {
        let (mean, sd) = mean_sd(&samples);
        LambdaEstimate {
            n,
            dim,
            measure,
            mean,
            stderr: sd / (samples.len() as f64).sqrt(),
            replicas: samples.len(),
            pair_policy: policy,
            seed,
            pair,
            samples,
        }
    }
}

/// Sample mean and (n−1)-normalised standard deviation.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < 2 {
        return invalid(format!("at least 2 replicas are needed, got {replicas}"));
    }
    Ok(())
}

fn corner_distance(config: Configuration) -> Result<u32> {
    let g = BoxGraph::new(config)?;
    Ok(distance(&g, 0, g.shape().far_corner()))
}

/// Averages `D(0, (n−1)·1) + 1` over independent replicas.
pub fn estimate_corner_distance(
    spec: MeasureSpec,
    n: usize,
    dim: usize,
    replicas: usize,
    seed: u64,
) -> Result<LambdaEstimate> {
    check_replicas(replicas)?;
    spec.validate()?;
    let shape = BoxShape::new(n, dim)?;
    let samples = (0..replicas as u64)
        .into_par_iter()
        .map(|r| Ok(corner_distance(sample_fast(spec, n, dim, seed, r)?)? as f64 + 1.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(LambdaEstimate::from_samples(
        n,
        dim,
        spec,
        PairPolicy::Corner,
        seed,
        (0, shape.far_corner()),
        samples,
    ))
}

/// Averages every pair's distance over replicas and reports the largest mean, plus one.
pub fn estimate_lambda_full(
    beta: f64,
    n: usize,
    dim: usize,
    replicas: usize,
    seed: u64,
) -> Result<LambdaEstimate> {
    check_replicas(replicas)?;
    let spec = MeasureSpec::plain(beta);
    spec.validate()?;
    let shape = BoxShape::new(n, dim)?;
    let v = shape.vertex_count();
    if v > FULL_MAX_GUARD {
        return Err(Error::Capacity(format!(
            "all-pairs estimate on {v} vertices exceeds the guard of {FULL_MAX_GUARD}"
        )));
    }
    // per replica: the upper triangle of the distance matrix
    let tables = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let g = BoxGraph::new(sample_fast(spec, n, dim, seed, r)?)?;
            let mut tri = Vec::with_capacity(v * (v - 1) / 2);
            for s in 0..v as u32 {
                let d = bfs_from_index(&g, s);
                tri.extend(d[s as usize + 1..].iter().map(|&x| x as u16));
            }
            Ok(tri)
        })
        .collect::<Result<Vec<Vec<u16>>>>()?;
    let pairs: Vec<(u32, u32)> = (0..v as u32)
        .flat_map(|a| (a + 1..v as u32).map(move |b| (a, b)))
        .collect();
    if pairs.is_empty() {
        return Ok(LambdaEstimate::from_samples(
            n,
            dim,
            spec,
            PairPolicy::FullMax,
            seed,
            (0, 0),
            vec![1.0; replicas],
        ));
    }
    let mut totals = vec![0u64; pairs.len()];
    for t in &tables {
        for (acc, &d) in totals.iter_mut().zip(t) {
            *acc += d as u64;
        }
    }
    // first maximiser in lexicographic pair order
    let (best, _) = totals
        .iter()
        .enumerate()
        .fold((0, 0), |(bi, bv), (i, &t)| if t > bv { (i, t) } else { (bi, bv) });
    let samples = tables.iter().map(|t| t[best] as f64 + 1.0).collect();
    Ok(LambdaEstimate::from_samples(
        n,
        dim,
        spec,
        PairPolicy::FullMax,
        seed,
        pairs[best],
        samples,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMethod {
    InfFormula,
    OlsSlope,
}

impl ThetaMethod {
    pub fn name(self) -> &'static str {
        match self {
            ThetaMethod::InfFormula => "inf_formula",
            ThetaMethod::OlsSlope => "ols_slope",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaEstimate {
    pub beta: f64,
    pub method: ThetaMethod,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap standard deviation of the estimator.
    pub stderr: f64,
    pub sizes_used: Vec<usize>,
    /// Smallest replica count among the inputs.
    pub replicas: usize,
}

fn check_ladder(estimates: &[LambdaEstimate], min_sizes: usize) -> Result<f64> {
    if estimates.len() < min_sizes {
        return invalid(format!(
            "need at least {min_sizes} sizes, got {}",
            estimates.len()
        ));
    }
    let measure = estimates[0].measure;
    if estimates.iter().any(|e| e.measure != measure) {
        return invalid("estimates mix different measures");
    }
    let mut sizes: Vec<usize> = estimates.iter().map(|e| e.n).collect();
    if sizes.iter().any(|&n| n < 2) {
        return invalid("every size must be at least 2");
    }
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() != estimates.len() {
        return invalid("sizes must be distinct");
    }
    if estimates.iter().any(|e| e.samples.is_empty() || !(e.mean >= 1.0)) {
        return invalid("estimates need replica samples with mean at least 1");
    }
    Ok(measure.beta())
}

fn inf_formula(sizes: &[f64], means: &[f64]) -> f64 {
    sizes
        .iter()
        .zip(means)
        .map(|(n, m)| m.ln() / n.ln())
        .fold(f64::INFINITY, f64::min)
}

/// Ordinary least squares; returns `(slope, intercept, slope stderr)`.
pub fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if xs.len() > 2 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, stderr)
}

fn log_slope(sizes: &[f64], means: &[f64]) -> f64 {
    let xs: Vec<f64> = sizes.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    ols(&xs, &ys).0
}

fn bootstrap_seed(estimates: &[LambdaEstimate]) -> u64 {
    estimates
        .iter()
        .fold(0xB007_5724_u64, |h, e| mix64(h ^ e.seed ^ (e.n as u64).rotate_left(32)))
}

/// Point estimate plus percentile bootstrap over replica-level resamples.
fn theta_with_bootstrap(
    estimates: &[LambdaEstimate],
    beta: f64,
    method: ThetaMethod,
    stat: fn(&[f64], &[f64]) -> f64,
) -> ThetaEstimate {
    let sizes: Vec<f64> = estimates.iter().map(|e| e.n as f64).collect();
    let means: Vec<f64> = estimates.iter().map(|e| e.mean).collect();
    let value = stat(&sizes, &means);
    let base = bootstrap_seed(estimates);
    let mut draws: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(base ^ mix64(b)));
            let resampled: Vec<f64> = estimates
                .iter()
                .map(|e| {
                    let k = e.samples.len();
                    (0..k).map(|_| e.samples[rng.random_range(0..k)]).sum::<f64>() / k as f64
                })
                .collect();
            stat(&sizes, &resampled)
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (draws.len() - 1) as f64;
        let (lo, frac) = (pos.floor() as usize, pos.fract());
        draws[lo] + frac * (draws[(lo + 1).min(draws.len() - 1)] - draws[lo])
    };
    let (_, sd) = mean_sd(&draws);
    ThetaEstimate {
        beta,
        method,
        value,
        ci_low: quantile(0.025).min(value),
        ci_high: quantile(0.975).max(value),
        stderr: sd,
        sizes_used: estimates.iter().map(|e| e.n).collect(),
        replicas: estimates.iter().map(|e| e.replicas).min().unwrap_or(0),
    }
}

/// `θ = min_n log Λ(n) / log n`.
pub fn theta_inf(estimates: &[LambdaEstimate]) -> Result<ThetaEstimate> {
    let beta = check_ladder(estimates, 1)?;
    Ok(theta_with_bootstrap(estimates, beta, ThetaMethod::InfFormula, inf_formula))
}

/// Least-squares slope of `log Λ(n)` against `log n`.
pub fn theta_slope(estimates: &[LambdaEstimate]) -> Result<ThetaEstimate> {
    let beta = check_ladder(estimates, 3)?;
    Ok(theta_with_bootstrap(estimates, beta, ThetaMethod::OlsSlope, log_slope))
}

/// Paired difference of corner estimates at consecutive β of a coupled sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedDifference {
    pub beta_low: f64,
    pub beta_high: f64,
    /// Mean of `D(β_low) − D(β_high)` over replicas.
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub estimates: Vec<LambdaEstimate>,
    pub differences: Vec<PairedDifference>,
    /// Replicas on which pathwise monotonicity was checked (all of them).
    pub replicas_checked: usize,
}

/// Corner-distance estimates along a Harris-coupled β ladder.
///
/// Fails with an invariant violation if any replica's distance increases with β.
pub fn monotone_sweep(
    betas: &[f64],
    n: usize,
    dim: usize,
    replicas: usize,
    seed: u64,
) -> Result<SweepReport> {
    check_replicas(replicas)?;
    let shape = BoxShape::new(n, dim)?;
    let per_replica = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let configs = coupled_sweep(betas, n, dim, seed, r)?;
            let ds = configs
                .into_iter()
                .map(|c| corner_distance(c).map(|d| d as f64 + 1.0))
                .collect::<Result<Vec<f64>>>()?;
            if let Some(i) = (1..ds.len()).find(|&i| ds[i] > ds[i - 1]) {
                return Err(Error::InvariantViolation(format!(
                    "replica {r}: corner distance rose from {} at beta {} to {} at beta {}",
                    ds[i - 1] - 1.0,
                    betas[i - 1],
                    ds[i] - 1.0,
                    betas[i]
                )));
            }
            Ok(ds)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let column = |i: usize| per_replica.iter().map(|ds| ds[i]).collect::<Vec<f64>>();
    let estimates = betas
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            LambdaEstimate::from_samples(
                n,
                dim,
                MeasureSpec::plain(b),
                PairPolicy::Corner,
                seed,
                (0, shape.far_corner()),
                column(i),
            )
        })
        .collect();
    let differences = (1..betas.len())
        .map(|i| {
            let diffs: Vec<f64> = per_replica.iter().map(|ds| ds[i - 1] - ds[i]).collect();
            let (mean, sd) = mean_sd(&diffs);
            PairedDifference {
                beta_low: betas[i - 1],
                beta_high: betas[i],
                mean,
                stderr: sd / (replicas as f64).sqrt(),
            }
        })
        .collect();
    Ok(SweepReport {
        estimates,
        differences,
        replicas_checked: replicas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelescopeTerm {
    pub k: u32,
    /// `log E_k[D] − log E_{k−1}[D]` under the mixed measures at levels `k` and `k−1`.
    pub log_ratio: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelMean {
    pub k: u32,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelescopeReport {
    pub beta: f64,
    pub eps: f64,
    pub n_exponent: u32,
    pub replicas: usize,
    pub seed: u64,
    /// Terms for `k = 2..=N`.
    pub terms: Vec<TelescopeTerm>,
    /// Mean corner distance at each level `k = 1..=N`.
    pub levels: Vec<LevelMean>,
    /// `Σ_k log_ratio = log E_N[D] − log E_1[D]`.
    pub sum: f64,
    pub sum_stderr: f64,
}

/// Delta-method standard error of `log mean(a) − log mean(b)` for paired samples.
pub fn paired_log_ratio_stderr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_sd(a);
    let (mb, _) = mean_sd(b);
    let linear: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / ma - y / mb).collect();
    mean_sd(&linear).1 / (a.len() as f64).sqrt()
}

/// Corner distances along the chain `ω_N, ω_{N−1} = ω_N ∨ χ_N, …, ω_1`, where
/// `ω_k` has law `P_{β≤k}^{β+ε>k}` on the box of side `2^N`.
pub fn telescope_chain(beta: f64, eps: f64, n_exponent: u32, seed: u64, replica: u64) -> Result<Vec<f64>> {
    let side = 1usize << n_exponent;
    let mut omega = sample_fast(MeasureSpec::mixed(beta, beta + eps, n_exponent), side, 1, seed, replica)?;
    let mut out = vec![0.0; n_exponent as usize];
    out[n_exponent as usize - 1] = corner_distance(omega.clone())? as f64;
    for k in (2..=n_exponent).rev() {
        omega = chi_augment(&omega, eps, k, seed)?;
        out[k as usize - 2] = corner_distance(omega.clone())? as f64;
    }
    Ok(out)
}

/// The telescoping decomposition of `log E_β[D] − log E_{β+ε}[D]` over length scales.
pub fn continuity_telescope(
    beta: f64,
    eps: f64,
    n_exponent: u32,
    replicas: usize,
    seed: u64,
) -> Result<TelescopeReport> {
    check_replicas(replicas)?;
    if !(2..=MAX_TELESCOPE_EXPONENT).contains(&n_exponent) {
        return invalid(format!(
            "telescope exponent must lie in 2..={MAX_TELESCOPE_EXPONENT}, got {n_exponent}"
        ));
    }
    if !(0.0..=1.0).contains(&eps) {
        return invalid(format!("eps must lie in [0, 1], got {eps}"));
    }
    MeasureSpec::plain(beta).validate()?;
    let chains = (0..replicas as u64)
        .into_par_iter()
        .map(|r| telescope_chain(beta, eps, n_exponent, seed, r))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let level = |k: u32| chains.iter().map(|c| c[k as usize - 1]).collect::<Vec<f64>>();
    let levels = (1..=n_exponent)
        .map(|k| {
            let (mean, sd) = mean_sd(&level(k));
            LevelMean {
                k,
                mean,
                stderr: sd / (replicas as f64).sqrt(),
            }
        })
        .collect::<Vec<_>>();
    let terms: Vec<TelescopeTerm> = (2..=n_exponent)
        .map(|k| {
            let (a, b) = (level(k), level(k - 1));
            TelescopeTerm {
                k,
                log_ratio: levels[k as usize - 1].mean.ln() - levels[k as usize - 2].mean.ln(),
                stderr: paired_log_ratio_stderr(&a, &b),
            }
        })
        .collect();
    let sum = terms.iter().map(|t| t.log_ratio).sum();
    let sum_stderr = paired_log_ratio_stderr(&level(n_exponent), &level(1));
    Ok(TelescopeReport {
        beta,
        eps,
        n_exponent,
        replicas,
        seed,
        terms,
        levels,
        sum,
        sum_stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointCheck {
    pub log_mean_beta: f64,
    pub log_mean_beta_eps: f64,
    /// `log E_β[D] − log E_{β+ε}[D]` from independent plain samples.
    pub direct: f64,
    pub direct_stderr: f64,
    pub telescoped: f64,
    pub telescoped_stderr: f64,
    /// `|direct − telescoped| / combined stderr`.
    pub z: f64,
}

impl EndpointCheck {
    pub fn within(&self, sigmas: f64) -> bool {
        self.z <= sigmas
    }
}

/// Compares a telescope's sum with endpoints estimated from fresh plain samples.
pub fn telescope_endpoint_check(report: &TelescopeReport, replicas: usize, seed: u64) -> Result<EndpointCheck> {
    check_replicas(replicas)?;
    let side = 1usize << report.n_exponent;
    let endpoint = |b: f64, s: u64| -> Result<(f64, f64)> {
        let ds = (0..replicas as u64)
            .into_par_iter()
            .map(|r| Ok(corner_distance(sample_fast(MeasureSpec::plain(b), side, 1, s, r)?)? as f64))
            .collect::<Result<Vec<f64>>>()?;
        let (m, sd) = mean_sd(&ds);
        Ok((m.ln(), sd / m / (replicas as f64).sqrt()))
    };
    let (la, sa) = endpoint(report.beta, mix64(seed ^ 0xA))?;
    let (lb, sb) = endpoint(report.beta + report.eps, mix64(seed ^ 0xB))?;
    let direct = la - lb;
    let direct_stderr = (sa * sa + sb * sb).sqrt();
    let combined = (direct_stderr.powi(2) + report.sum_stderr.powi(2)).sqrt();
    let gap = (direct - report.sum).abs();
    Ok(EndpointCheck {
        log_mean_beta: la,
        log_mean_beta_eps: lb,
        direct,
        direct_stderr,
        telescoped: report.sum,
        telescoped_stderr: report.sum_stderr,
        z: if gap == 0.0 { 0.0 } else { gap / combined },
    })
}

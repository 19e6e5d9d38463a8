//! Experiment recipes, their JSON configuration and result persistence.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{ConfigIssue, Error, Result};
use crate::estimators::{
    continuity_telescope, estimate_corner_distance, estimate_lambda_full, monotone_sweep,
    telescope_endpoint_check, theta_inf, theta_slope, LambdaEstimate, PairPolicy, ThetaEstimate,
    FULL_MAX_GUARD, MAX_TELESCOPE_EXPONENT,
};
use crate::exact::{random_case, verify_russo, lambda_small_beta_derivative};
use crate::graphs::{count_cut_points, cutpoint_mean_exact, distance, BoxGraph};
use crate::kernel::{closed_form_1d, Kernel};
use crate::lattice::{BoxShape, LatticePoint};
use crate::rng::mix64;
use crate::sampling::{
    sample_continuum, sample_direct, sample_fast, MeasureSpec, DIRECT_PAIR_GUARD,
};

pub const ARTIFACT: &str = "perclr";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tolerance of the analytic self-similarity check.
pub const SELF_SIM_TOL: f64 = 1e-10;
/// Step and tolerance of the Russo suite.
pub const RUSSO_STEP: f64 = 1e-4;
pub const RUSSO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ThetaCurve,
    SmallBetaSlope,
    MonotoneSweep,
    Continuity,
    RussoVerify,
    SelfSimilarity,
    Cutpoints,
    Estimate,
    Sample,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ThetaCurve => "theta_curve",
            ExperimentKind::SmallBetaSlope => "small_beta_slope",
            ExperimentKind::MonotoneSweep => "monotone_sweep",
            ExperimentKind::Continuity => "continuity",
            ExperimentKind::RussoVerify => "russo_verify",
            ExperimentKind::SelfSimilarity => "self_similarity",
            ExperimentKind::Cutpoints => "cutpoints",
            ExperimentKind::Estimate => "estimate",
            ExperimentKind::Sample => "sample",
        }
    }

    /// Fixed default seed of each recipe, so documented numbers are reproducible.
    pub fn default_seed(self) -> u64 {
        match self {
            ExperimentKind::ThetaCurve => 1001,
            ExperimentKind::SmallBetaSlope => 1002,
            ExperimentKind::MonotoneSweep => 1003,
            ExperimentKind::Continuity => 1004,
            ExperimentKind::RussoVerify => 1005,
            ExperimentKind::SelfSimilarity => 1006,
            ExperimentKind::Cutpoints => 1007,
            ExperimentKind::Estimate => 1008,
            ExperimentKind::Sample => 1009,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Fast,
    Direct,
    Continuum,
}

fn default_dim() -> usize {
    1
}

fn default_replicas() -> usize {
    200
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub sizes: Vec<usize>,
    #[serde(default)]
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Several ε values for the continuity recipe; takes precedence over `eps`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_grid: Vec<f64>,
    /// Replicas per estimate; for `russo_verify`, the number of random models.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output")]
    pub output_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_policy: Option<PairPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerKind>,
}

fn ladder(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|j| 1usize << j).collect()
}

impl ExperimentConfig {
    /// The recipe defaults for one experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let (sizes, betas, replicas, eps_grid) = match kind {
            ExperimentKind::ThetaCurve => (ladder(8, 14), vec![0.1, 1.0, 2.0, 4.0, 8.0], 200, vec![]),
            ExperimentKind::SmallBetaSlope => (ladder(8, 14), vec![0.05, 0.1, 0.2], 200, vec![]),
            ExperimentKind::MonotoneSweep => (vec![4096], vec![1.0, 2.0, 4.0], 200, vec![]),
            ExperimentKind::Continuity => (vec![4096], vec![1.0], 200, vec![0.0, 0.05, 0.5]),
            ExperimentKind::RussoVerify => (vec![], vec![0.3, 1.0, 2.0], 50, vec![]),
            ExperimentKind::SelfSimilarity => (vec![1, 2], vec![1.0], 100_000, vec![]),
            ExperimentKind::Cutpoints => (vec![16, 64], vec![0.5, 1.0], 10_000, vec![]),
            ExperimentKind::Estimate => (vec![64, 256], vec![1.0], 200, vec![]),
            ExperimentKind::Sample => (vec![64], vec![1.0], 1, vec![]),
        };
        ExperimentConfig {
            experiment: kind,
            dim: 1,
            sizes,
            betas,
            eps: None,
            eps_grid,
            replicas,
            seed: None,
            output_path: default_output(),
            pair_policy: None,
            sampler: None,
        }
    }

    /// Parses JSON, reporting the field path of the first type error.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Config {
            path: match e.path().to_string().as_str() {
                "." => "$".to_string(),
                p => p.to_string(),
            },
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolved_seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| self.experiment.default_seed())
    }

    pub fn eps_values(&self) -> Vec<f64> {
        if !self.eps_grid.is_empty() {
            self.eps_grid.clone()
        } else {
            self.eps.into_iter().collect()
        }
    }

    /// Checks every guard the recipe will hit, before any sampling.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut issue = |path: String, message: String| issues.push(ConfigIssue { path, message });
        let kind = self.experiment;
        use ExperimentKind::*;

        if self.dim == 0 || self.dim > 4 {
            issue("dim".into(), format!("must lie in 1..=4, got {}", self.dim));
        }
        if matches!(kind, SmallBetaSlope | Continuity | Cutpoints) && self.dim != 1 {
            issue("dim".into(), format!("{} is defined for d = 1 only", kind.name()));
        }
        if kind == SelfSimilarity && self.dim > 2 {
            issue("dim".into(), "self_similarity supports d <= 2".into());
        }
        let min_replicas = if matches!(kind, RussoVerify | Sample) { 1 } else { 2 };
        if self.replicas < min_replicas {
            issue(
                "replicas".into(),
                format!("must be at least {min_replicas}, got {}", self.replicas),
            );
        }
        if self.output_path.as_os_str().is_empty() {
            issue("output_path".into(), "must not be empty".into());
        }

        if kind != RussoVerify && self.sizes.is_empty() {
            issue("sizes".into(), "at least one size is required".into());
        }
        let min_size = match kind {
            Cutpoints => 3,
            SelfSimilarity | Sample => 1,
            _ => 2,
        };
        for (i, &n) in self.sizes.iter().enumerate() {
            let path = format!("sizes[{i}]");
            if n < min_size {
                issue(path, format!("must be at least {min_size}, got {n}"));
                continue;
            }
            if kind == SelfSimilarity {
                // blocks of side n around the pair (0, 3·e₁)
                let side = 4 * n;
                let v = (side as f64).powi(self.dim as i32);
                if v * v > DIRECT_PAIR_GUARD as f64 {
                    issue(path, format!("direct sampling of a {side}^{} box exceeds the pair guard", self.dim));
                }
                continue;
            }
            if let Err(e) = BoxShape::new(n, self.dim.max(1)) {
                issue(path, e.to_string());
                continue;
            }
            let vertices = (n as f64).powi(self.dim as i32);
            if kind == Estimate && self.pair_policy == Some(PairPolicy::FullMax) && vertices > FULL_MAX_GUARD as f64 {
                issue(path.clone(), format!("full_max needs at most {FULL_MAX_GUARD} vertices"));
            }
            if kind == Sample && self.sampler == Some(SamplerKind::Direct) && vertices * vertices > DIRECT_PAIR_GUARD as f64 {
                issue(path, "direct sampling exceeds the pair guard".into());
            }
        }
        if matches!(kind, ThetaCurve | SmallBetaSlope) {
            let mut sorted = self.sizes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != self.sizes.len() {
                issue("sizes".into(), "sizes must be distinct".into());
            }
        }
        if kind == SmallBetaSlope && self.sizes.len() < 3 {
            issue("sizes".into(), "the slope fit needs at least 3 sizes".into());
        }
        if kind == Continuity {
            match self.sizes.as_slice() {
                [n] if n.is_power_of_two() => {
                    let exp = n.trailing_zeros();
                    if !(2..=MAX_TELESCOPE_EXPONENT).contains(&exp) {
                        issue(
                            "sizes[0]".into(),
                            format!("box side must be 2^N with 2 <= N <= {MAX_TELESCOPE_EXPONENT}"),
                        );
                    }
                }
                [_] => issue("sizes[0]".into(), "box side must be a power of two".into()),
                _ => issue("sizes".into(), "continuity takes exactly one box side".into()),
            }
            let eps = self.eps_values();
            if eps.is_empty() {
                issue("eps".into(), "continuity needs eps or eps_grid".into());
            }
            let field = if self.eps_grid.is_empty() { "eps" } else { "eps_grid" };
            for (i, &e) in eps.iter().enumerate() {
                if !(0.0..=1.0).contains(&e) {
                    let path = if self.eps_grid.is_empty() { field.to_string() } else { format!("{field}[{i}]") };
                    issue(path, format!("must lie in [0, 1], got {e}"));
                }
            }
        }

        if self.betas.is_empty() {
            issue("betas".into(), "at least one beta is required".into());
        }
        for (i, &b) in self.betas.iter().enumerate() {
            let path = format!("betas[{i}]");
            if !(b.is_finite() && b >= 0.0) {
                issue(path, format!("must be finite and non-negative, got {b}"));
            } else if kind == SmallBetaSlope && !(b > 0.0 && b <= 0.3) {
                issue(path, format!("small_beta_slope needs beta in (0, 0.3], got {b}"));
            }
        }
        if kind == MonotoneSweep && self.betas.windows(2).any(|w| !(w[0] < w[1])) {
            issue("betas".into(), "must be strictly ascending".into());
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(issues))
        }
    }
}

/// Seed of the `index`-th task of a run.
pub fn task_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0x7A5C)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSeed {
    pub task: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub contents: String,
}

/// Everything a run produces, before it is written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub report: Value,
    pub task_seeds: Vec<TaskSeed>,
}

#[derive(Debug, Serialize)]
struct EstimateRow {
    beta: f64,
    n: usize,
    dim: usize,
    measure_kind: &'static str,
    k_threshold: Option<u32>,
    mean: f64,
    stderr: f64,
    replicas: usize,
    pair_policy: &'static str,
    seed: u64,
}

impl From<&LambdaEstimate> for EstimateRow {
    fn from(e: &LambdaEstimate) -> Self {
        EstimateRow {
            beta: e.measure.beta(),
            n: e.n,
            dim: e.dim,
            measure_kind: e.measure.kind_name(),
            k_threshold: e.measure.k_threshold(),
            mean: e.mean,
            stderr: e.stderr,
            replicas: e.replicas,
            pair_policy: e.pair_policy.name(),
            seed: e.seed,
        }
    }
}

#[derive(Debug, Serialize)]
struct ThetaRow {
    beta: f64,
    method: &'static str,
    value: f64,
    ci_low: f64,
    ci_high: f64,
    sizes: String,
    seed: u64,
    replicas: usize,
}

fn theta_row(t: &ThetaEstimate, seed: u64) -> ThetaRow {
    ThetaRow {
        beta: t.beta,
        method: t.method.name(),
        value: t.value,
        ci_low: t.ci_low,
        ci_high: t.ci_high,
        sizes: t
            .sizes_used
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";"),
        seed,
        replicas: t.replicas,
    }
}

fn csv_table<T: Serialize>(name: &str, rows: &[T]) -> Result<Table> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(Table {
        name: name.to_string(),
        contents: String::from_utf8(bytes).expect("csv output is utf-8"),
    })
}

/// Validates, then runs the configured recipe on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.experiment {
        ExperimentKind::ThetaCurve => run_theta_curve(config),
        ExperimentKind::SmallBetaSlope => run_small_beta(config),
        ExperimentKind::MonotoneSweep => run_monotone_sweep(config),
        ExperimentKind::Continuity => run_continuity(config),
        ExperimentKind::RussoVerify => run_russo_verify(config),
        ExperimentKind::SelfSimilarity => run_self_similarity(config),
        ExperimentKind::Cutpoints => run_cutpoints(config),
        ExperimentKind::Estimate => run_estimate(config),
        ExperimentKind::Sample => run_sample(config),
    }
}

fn sorted_betas(config: &ExperimentConfig) -> Vec<f64> {
    let mut betas = config.betas.clone();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    betas
}

/// Corner-distance ladders over `sizes` for every β, coupled across β within each size.
pub fn run_theta_curve(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let betas = sorted_betas(config);
    let mut per_beta: Vec<Vec<LambdaEstimate>> = vec![Vec::new(); betas.len()];
    let mut task_seeds = Vec::new();
    for (i, &n) in config.sizes.iter().enumerate() {
        let seed = task_seed(base, i as u64);
        task_seeds.push(TaskSeed { task: format!("sweep n={n}"), seed });
        let sweep = monotone_sweep(&betas, n, config.dim, config.replicas, seed)?;
        for (slot, e) in per_beta.iter_mut().zip(sweep.estimates) {
            slot.push(e);
        }
    }
    let mut thetas = Vec::new();
    for ladder in &per_beta {
        thetas.push(theta_inf(ladder)?);
        if ladder.len() >= 3 {
            thetas.push(theta_slope(ladder)?);
        }
    }
    let estimates: Vec<EstimateRow> = per_beta.iter().flatten().map(EstimateRow::from).collect();
    let theta_rows: Vec<ThetaRow> = thetas.iter().map(|t| theta_row(t, base)).collect();
    Ok(RunOutput {
        tables: vec![
            csv_table("estimates.csv", &estimates)?,
            csv_table("theta.csv", &theta_rows)?,
        ],
        report: json!({
            "experiment": config.experiment.name(),
            "theta": thetas,
            "pathwise_monotone": true,
            "proxy_pair": config.dim > 1,
        }),
        task_seeds,
    })
}

#[derive(Debug, Serialize)]
struct SmallBetaRow {
    beta: f64,
    theta_slope: f64,
    ci_low: f64,
    ci_high: f64,
    deficit_over_beta: f64,
    seed: u64,
    replicas: usize,
}

#[derive(Debug, Serialize)]
struct ExactDerivativeRow {
    n: u64,
    derivative: f64,
    normalized: f64,
    seed: u64,
    replicas: usize,
}

/// `dΛ/dβ` at `β = 0` divided by `n log n`, for the exact column of the small-β recipe.
pub fn normalized_small_beta_derivative(n: u64) -> Result<f64> {
    Ok(lambda_small_beta_derivative(n)? / (n as f64 * (n as f64).ln()))
}

/// Sizes at which the exact small-β column is always reported.
pub const EXACT_DERIVATIVE_SIZES: [u64; 3] = [1 << 8, 1 << 12, 1 << 16];

pub fn run_small_beta(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let betas = sorted_betas(config);
    let mut rows = Vec::new();
    let mut estimates = Vec::new();
    let mut thetas = Vec::new();
    let mut task_seeds = Vec::new();
    for (bi, &beta) in betas.iter().enumerate() {
        let mut ladder = Vec::new();
        for (si, &n) in config.sizes.iter().enumerate() {
            let seed = task_seed(base, (bi * config.sizes.len() + si) as u64);
            task_seeds.push(TaskSeed { task: format!("beta={beta} n={n}"), seed });
            ladder.push(estimate_corner_distance(MeasureSpec::plain(beta), n, 1, config.replicas, seed)?);
        }
        let t = theta_slope(&ladder)?;
        rows.push(SmallBetaRow {
            beta,
            theta_slope: t.value,
            ci_low: t.ci_low,
            ci_high: t.ci_high,
            deficit_over_beta: (1.0 - t.value) / beta,
            seed: base,
            replicas: config.replicas,
        });
        estimates.extend(ladder.iter().map(EstimateRow::from));
        thetas.push(t);
    }
    let mut exact_sizes: Vec<u64> = EXACT_DERIVATIVE_SIZES
        .iter()
        .copied()
        .chain(config.sizes.iter().map(|&n| n as u64))
        .filter(|&n| n >= 3)
        .collect();
    exact_sizes.sort_unstable();
    exact_sizes.dedup();
    let exact = exact_sizes
        .iter()
        .map(|&n| {
            let derivative = lambda_small_beta_derivative(n)?;
            Ok(ExactDerivativeRow {
                n,
                derivative,
                normalized: derivative / (n as f64 * (n as f64).ln()),
                seed: base,
                replicas: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let theta_rows: Vec<ThetaRow> = thetas.iter().map(|t| theta_row(t, base)).collect();
    Ok(RunOutput {
        tables: vec![
            csv_table("small_beta.csv", &rows)?,
            csv_table("small_beta_exact.csv", &exact)?,
            csv_table("estimates.csv", &estimates)?,
            csv_table("theta.csv", &theta_rows)?,
        ],
        report: json!({
            "experiment": config.experiment.name(),
            "slopes": rows,
            "exact": exact,
        }),
        task_seeds,
    })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    n: usize,
    dim: usize,
    beta_low: f64,
    beta_high: f64,
    mean_difference: f64,
    stderr: f64,
    separated: bool,
    seed: u64,
    replicas: usize,
}

pub fn run_monotone_sweep(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let mut estimates = Vec::new();
    let mut rows = Vec::new();
    let mut task_seeds = Vec::new();
    for (i, &n) in config.sizes.iter().enumerate() {
        let seed = task_seed(base, i as u64);
        task_seeds.push(TaskSeed { task: format!("sweep n={n}"), seed });
        let rep = monotone_sweep(&config.betas, n, config.dim, config.replicas, seed)?;
        for (k, d) in rep.differences.iter().enumerate() {
            let (lo, hi) = (&rep.estimates[k], &rep.estimates[k + 1]);
            rows.push(SweepRow {
                n,
                dim: config.dim,
                beta_low: d.beta_low,
                beta_high: d.beta_high,
                mean_difference: d.mean,
                stderr: d.stderr,
                separated: d.mean - 3.0 * d.stderr > 0.0
                    && lo.mean - 3.0 * lo.stderr > hi.mean + 3.0 * hi.stderr,
                seed,
                replicas: config.replicas,
            });
        }
        estimates.extend(rep.estimates.iter().map(EstimateRow::from));
    }
    Ok(RunOutput {
        tables: vec![
            csv_table("estimates.csv", &estimates)?,
            csv_table("sweep.csv", &rows)?,
        ],
        report: json!({
            "experiment": config.experiment.name(),
            "pathwise_monotone": true,
            "differences": rows,
        }),
        task_seeds,
    })
}

#[derive(Debug, Serialize)]
struct TelescopeRow {
    beta: f64,
    eps: f64,
    k: u32,
    log_ratio: f64,
    stderr: f64,
    seed: u64,
    replicas: usize,
}

pub fn run_continuity(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let n_exponent = config.sizes[0].trailing_zeros();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut task_seeds = Vec::new();
    for (bi, &beta) in config.betas.iter().enumerate() {
        // every ε on the grid reuses the β's seeds, so the grid is coupled
        let chain_seed = task_seed(base, 2 * bi as u64);
        let endpoint_seed = task_seed(base, 2 * bi as u64 + 1);
        task_seeds.push(TaskSeed { task: format!("telescope beta={beta}"), seed: chain_seed });
        task_seeds.push(TaskSeed { task: format!("endpoints beta={beta}"), seed: endpoint_seed });
        for eps in config.eps_values() {
            let rep = continuity_telescope(beta, eps, n_exponent, config.replicas, chain_seed)?;
            let check = telescope_endpoint_check(&rep, config.replicas, endpoint_seed)?;
            rows.extend(rep.terms.iter().map(|t| TelescopeRow {
                beta,
                eps,
                k: t.k,
                log_ratio: t.log_ratio,
                stderr: t.stderr,
                seed: chain_seed,
                replicas: config.replicas,
            }));
            summaries.push(json!({
                "beta": beta,
                "eps": eps,
                "sum": rep.sum,
                "sum_stderr": rep.sum_stderr,
                "levels": rep.levels,
                "endpoint": check,
                "identity_within_3_sigma": check.within(3.0),
            }));
        }
    }
    Ok(RunOutput {
        tables: vec![csv_table("telescope.csv", &rows)?],
        report: json!({
            "experiment": config.experiment.name(),
            "n_exponent": n_exponent,
            "summaries": summaries,
        }),
        task_seeds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RussoCaseReport {
    pub model_id: String,
    pub functional: String,
    pub beta: f64,
    pub analytic: f64,
    pub finite_diff: f64,
    pub abs_error: f64,
    pub pass: bool,
}

pub fn run_russo_verify(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    let cases: Vec<_> = (0..config.replicas).map(|_| random_case(&mut rng)).collect();
    let mut reports = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        for &beta in &config.betas {
            let rep = verify_russo(&case.model, &case.functional, beta, RUSSO_STEP)?;
            reports.push(RussoCaseReport {
                model_id: format!("m{i:03}"),
                functional: format!("{:?}", case.functional),
                beta,
                analytic: rep.analytic,
                finite_diff: rep.finite_diff,
                abs_error: rep.abs_error,
                pass: rep.abs_error < RUSSO_TOL,
            });
        }
    }
    // second-order convergence: halving h should quarter the error
    let convergence = cases
        .iter()
        .take(5)
        .enumerate()
        .map(|(i, case)| {
            let coarse = verify_russo(&case.model, &case.functional, 1.0, 0.1)?;
            let fine = verify_russo(&case.model, &case.functional, 1.0, 0.05)?;
            let ratio = coarse.abs_error / fine.abs_error;
            Ok(json!({
                "model_id": format!("m{i:03}"),
                "error_h": coarse.abs_error,
                "error_h_half": fine.abs_error,
                "ratio": ratio,
                "second_order": (3.5..=4.5).contains(&ratio),
            }))
        })
        .collect::<Result<Vec<Value>>>()?;
    let all_pass = reports.iter().all(|r| r.pass);
    Ok(RunOutput {
        tables: vec![],
        report: json!({
            "experiment": config.experiment.name(),
            "h": RUSSO_STEP,
            "tolerance": RUSSO_TOL,
            "reports": reports,
            "convergence": convergence,
            "all_pass": all_pass,
        }),
        task_seeds: vec![TaskSeed { task: "random models".into(), seed: base }],
    })
}

/// Block-connection frequency between the `n`-blocks of two lattice points.
#[derive(Debug, Clone, Serialize)]
pub struct BlockCheck {
    pub dim: usize,
    pub n: usize,
    pub beta: f64,
    pub u: LatticePoint,
    pub v: LatticePoint,
    pub frequency: f64,
    pub expected: f64,
    pub z: f64,
    pub pass: bool,
    pub seed: u64,
    pub replicas: usize,
}

/// Empirical `P(V_u^n ∼ V_v^n)` from exhaustive sampling of the box spanning both blocks.
pub fn block_connection_check(
    beta: f64,
    n: usize,
    dim: usize,
    u: &LatticePoint,
    v: &LatticePoint,
    replicas: usize,
    seed: u64,
) -> Result<BlockCheck> {
    let reach = u.coords().iter().chain(v.coords()).copied().max().unwrap_or(0);
    if u.coords().iter().chain(v.coords()).any(|&x| x < 0) {
        return Err(Error::InvalidInput("block coordinates must be non-negative".into()));
    }
    let side = (reach as usize + 1) * n;
    let shape = BoxShape::new(side, dim)?;
    let in_block = |idx: u32, w: &LatticePoint| {
        shape
            .point_of(idx)
            .coords()
            .iter()
            .zip(w.coords())
            .all(|(&x, &c)| x.div_euclid(n as i64) == c)
    };
    let hits = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let c = sample_direct(MeasureSpec::plain(beta), side, dim, seed, r)?;
            Ok(c.long_edges.iter().any(|&(a, b)| {
                (in_block(a, u) && in_block(b, v)) || (in_block(a, v) && in_block(b, u))
            }) as u64)
        })
        .collect::<Result<Vec<u64>>>()?
        .into_iter()
        .sum::<u64>();
    let expected = Kernel::shared(dim).connection_prob(beta, u, v)?;
    let frequency = hits as f64 / replicas as f64;
    let sd = (expected * (1.0 - expected) / replicas as f64).sqrt();
    let z = if sd > 0.0 { (frequency - expected).abs() / sd } else if frequency == expected { 0.0 } else { f64::INFINITY };
    Ok(BlockCheck {
        dim,
        n,
        beta,
        u: u.clone(),
        v: v.clone(),
        frequency,
        expected,
        z,
        pass: z <= 3.0,
        seed,
        replicas,
    })
}

pub fn run_self_similarity(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let kernel = Kernel::shared(1);
    let mut analytic = Vec::new();
    let mut worst = 0.0f64;
    for v in 2..=12i64 {
        for n in [1u64, 2, 4, 8] {
            let (a, b) = (LatticePoint::from(0), LatticePoint::from(v));
            let block = kernel.block_kernel_sum(&a, &b, n)?;
            let direct = closed_form_1d(v as u64);
            let err = (block - direct).abs();
            worst = worst.max(err);
            analytic.push(json!({"u": 0, "v": v, "n": n, "block_sum": block, "kernel": direct, "abs_error": err}));
        }
    }
    if worst > SELF_SIM_TOL {
        return Err(Error::InvariantViolation(format!(
            "block kernel sums deviate from the kernel by {worst:e}"
        )));
    }
    let mut checks = Vec::new();
    let mut task_seeds = Vec::new();
    let u = LatticePoint::origin(config.dim);
    let mut far = vec![0i64; config.dim];
    far[0] = 3;
    let v = LatticePoint::new(far);
    for (bi, &beta) in config.betas.iter().enumerate() {
        for (si, &n) in config.sizes.iter().enumerate() {
            let seed = task_seed(base, (bi * config.sizes.len() + si) as u64);
            task_seeds.push(TaskSeed { task: format!("blocks beta={beta} n={n}"), seed });
            checks.push(block_connection_check(beta, n, config.dim, &u, &v, config.replicas, seed)?);
        }
    }
    Ok(RunOutput {
        tables: vec![],
        report: json!({
            "experiment": config.experiment.name(),
            "analytic": {"tolerance": SELF_SIM_TOL, "max_abs_error": worst, "grid": analytic},
            "monte_carlo": checks,
        }),
        task_seeds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CutpointRow {
    pub n: usize,
    pub beta: f64,
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
    pub invariant_checked: usize,
    pub seed: u64,
    pub replicas: usize,
}

/// Monte Carlo cut-point mean against the exact value, checking `D(0, n−1) ≥ #cut points`
/// on every replica.
pub fn cutpoint_check(n: usize, beta: f64, replicas: usize, seed: u64) -> Result<CutpointRow> {
    let counts = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let g = BoxGraph::new(sample_fast(MeasureSpec::plain(beta), n, 1, seed, r)?)?;
            let cuts = count_cut_points(&g)?;
            let d = distance(&g, 0, n as u32 - 1) as u64;
            if d < cuts {
                return Err(Error::InvariantViolation(format!(
                    "replica {r}: corner distance {d} below cut-point count {cuts}"
                )));
            }
            Ok(cuts as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, sd) = crate::estimators::mean_sd(&counts);
    let stderr = sd / (replicas as f64).sqrt();
    let exact = cutpoint_mean_exact(n, beta)?;
    let gap = (mean - exact).abs();
    Ok(CutpointRow {
        n,
        beta,
        mean,
        stderr,
        exact,
        z: if gap == 0.0 { 0.0 } else { gap / stderr },
        invariant_checked: replicas,
        seed,
        replicas,
    })
}

pub fn run_cutpoints(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let mut rows = Vec::new();
    let mut task_seeds = Vec::new();
    for (bi, &beta) in config.betas.iter().enumerate() {
        for (si, &n) in config.sizes.iter().enumerate() {
            let seed = task_seed(base, (bi * config.sizes.len() + si) as u64);
            task_seeds.push(TaskSeed { task: format!("cutpoints beta={beta} n={n}"), seed });
            rows.push(cutpoint_check(n, beta, config.replicas, seed)?);
        }
    }
    Ok(RunOutput {
        tables: vec![csv_table("cutpoints.csv", &rows)?],
        report: json!({
            "experiment": config.experiment.name(),
            "rows": rows,
            "all_within_3_sigma": rows.iter().all(|r| r.z <= 3.0),
        }),
        task_seeds,
    })
}

fn measure_for(config: &ExperimentConfig, beta: f64) -> MeasureSpec {
    match config.sampler {
        Some(SamplerKind::Continuum) => MeasureSpec::Continuum { beta },
        _ => MeasureSpec::plain(beta),
    }
}

pub fn run_estimate(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let policy = config.pair_policy.unwrap_or(PairPolicy::Corner);
    let mut estimates = Vec::new();
    let mut task_seeds = Vec::new();
    for (bi, &beta) in config.betas.iter().enumerate() {
        for (si, &n) in config.sizes.iter().enumerate() {
            let seed = task_seed(base, (bi * config.sizes.len() + si) as u64);
            task_seeds.push(TaskSeed { task: format!("estimate beta={beta} n={n}"), seed });
            estimates.push(match policy {
                PairPolicy::Corner => estimate_corner_distance(measure_for(config, beta), n, config.dim, config.replicas, seed)?,
                PairPolicy::FullMax => estimate_lambda_full(beta, n, config.dim, config.replicas, seed)?,
            });
        }
    }
    let rows: Vec<EstimateRow> = estimates.iter().map(EstimateRow::from).collect();
    Ok(RunOutput {
        tables: vec![csv_table("estimates.csv", &rows)?],
        report: json!({
            "experiment": config.experiment.name(),
            "estimates": estimates,
        }),
        task_seeds,
    })
}

/// Writes sampled configurations as JSON lines, one file for all βs.
pub fn run_sample(config: &ExperimentConfig) -> Result<RunOutput> {
    let base = config.resolved_seed();
    let n = config.sizes[0];
    let mut lines = String::new();
    for &beta in &config.betas {
        let configs = (0..config.replicas as u64)
            .into_par_iter()
            .map(|r| match config.sampler.unwrap_or(SamplerKind::Fast) {
                SamplerKind::Fast => sample_fast(MeasureSpec::plain(beta), n, config.dim, base, r),
                SamplerKind::Direct => sample_direct(MeasureSpec::plain(beta), n, config.dim, base, r),
                SamplerKind::Continuum => sample_continuum(beta, n, config.dim, base, r),
            })
            .collect::<Result<Vec<_>>>()?;
        for c in configs {
            lines.push_str(&c.to_jsonl()?);
            lines.push('\n');
        }
    }
    Ok(RunOutput {
        tables: vec![Table {
            name: "samples.jsonl".into(),
            contents: lines,
        }],
        report: json!({
            "experiment": config.experiment.name(),
            "n": n,
            "dim": config.dim,
            "betas": config.betas,
            "replicas": config.replicas,
        }),
        task_seeds: vec![TaskSeed { task: "samples".into(), seed: base }],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub workers: usize,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub task_seeds: Vec<TaskSeed>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes tables, `report.json` and `manifest.json` into `dir`.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    output: &RunOutput,
    workers: usize,
    started: SystemTime,
    wall_clock_seconds: f64,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    let mut write = |name: &str, bytes: &[u8]| -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        outputs.push(FileDigest {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    };
    for t in &output.tables {
        write(&t.name, t.contents.as_bytes())?;
    }
    let mut report = serde_json::to_string_pretty(&output.report)?;
    report.push('\n');
    write("report.json", report.as_bytes())?;
    let manifest = RunManifest {
        artifact: ARTIFACT,
        version: VERSION,
        config: config.clone(),
        seed: config.resolved_seed(),
        workers,
        started_unix: started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_clock_seconds,
        task_seeds: output.task_seeds.clone(),
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}

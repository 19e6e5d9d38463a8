//! Configuration samplers for the plain measure `P_β`, the mixed measure
//! `P_{β₁≤k}^{β₂>k}` and the continuum Poisson construction, plus the Harris
//! coupling across a β-grid and the χ-sprinkling coupling between mixed levels.
//!
//! Nearest-neighbour edges (`‖u − v‖_∞ = 1`) are always open and never stored.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernel::{prob_from_kernel, Kernel};
use crate::lattice::{for_each_half_displacement, BoxShape, LatticePoint};
use crate::rng::{
    edge_uniform, edge_uniform_1d, stream_key, stream_rng, CHI_TAG, CONTINUUM_TAG, SWEEP_TAG,
};

/// Upper bound on `(n^d)²` for the exhaustive samplers.
pub const DIRECT_PAIR_GUARD: u128 = 100_000_000;

/// The law a configuration is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSpec {
    Plain {
        beta: f64,
    },
    /// Edges of ∞-length `2..=2^k − 1` use `beta`, longer ones `beta2`.
    Mixed {
        beta: f64,
        beta2: f64,
        k_threshold: u32,
    },
    Continuum {
        beta: f64,
    },
}

impl MeasureSpec {
    pub fn plain(beta: f64) -> Self {
        MeasureSpec::Plain { beta }
    }

    pub fn mixed(beta: f64, beta2: f64, k_threshold: u32) -> Self {
        MeasureSpec::Mixed {
            beta,
            beta2,
            k_threshold,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            MeasureSpec::Plain { .. } => "plain",
            MeasureSpec::Mixed { .. } => "mixed",
            MeasureSpec::Continuum { .. } => "continuum",
        }
    }

    /// The short-edge parameter (the only one for plain and continuum).
    pub fn beta(&self) -> f64 {
        match *self {
            MeasureSpec::Plain { beta }
            | MeasureSpec::Continuum { beta }
            | MeasureSpec::Mixed { beta, .. } => beta,
        }
    }

    pub fn k_threshold(&self) -> Option<u32> {
        match *self {
            MeasureSpec::Mixed { k_threshold, .. } => Some(k_threshold),
            _ => None,
        }
    }

    /// Parameter governing an edge of ∞-length `len ≥ 2`.
    pub fn beta_for_length(&self, len: u64) -> f64 {
        match *self {
            MeasureSpec::Plain { beta } | MeasureSpec::Continuum { beta } => beta,
            MeasureSpec::Mixed {
                beta,
                beta2,
                k_threshold,
            } => {
                let short = 1u64
                    .checked_shl(k_threshold)
                    .map_or(true, |limit| len < limit);
                if short {
                    beta
                } else {
                    beta2
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |b: f64| b >= 0.0 && b.is_finite();
        let fine = match *self {
            MeasureSpec::Plain { beta } | MeasureSpec::Continuum { beta } => ok(beta),
            MeasureSpec::Mixed { beta, beta2, .. } => ok(beta) && ok(beta2),
        };
        if fine {
            Ok(())
        } else {
            invalid(format!("measure parameters must be finite and non-negative: {self:?}"))
        }
    }
}

/// One sampled edge set on the box `{0..n−1}^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub box_side: usize,
    pub dim: usize,
    /// Long edges as sorted `(a, b)` linear vertex indices with `a < b`.
    pub long_edges: Vec<(u32, u32)>,
    pub measure: MeasureSpec,
    pub seed: u64,
    pub replica: u64,
}

impl Configuration {
    pub fn shape(&self) -> BoxShape {
        BoxShape {
            side: self.box_side,
            dim: self.dim,
        }
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        let e = if a < b { (a, b) } else { (b, a) };
        self.long_edges.binary_search(&e).is_ok()
    }

    /// True when every long edge of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Configuration) -> bool {
        let mut it = other.long_edges.iter();
        'outer: for e in &self.long_edges {
            for f in it.by_ref() {
                if f == e {
                    continue 'outer;
                }
                if f > e {
                    return false;
                }
            }
            return false;
        }
        true
    }

    pub fn to_record(&self) -> ConfigurationRecord {
        let shape = self.shape();
        ConfigurationRecord {
            measure: self.measure,
            n: self.box_side,
            dim: self.dim,
            seed: self.seed,
            replica: self.replica,
            edges: self
                .long_edges
                .iter()
                .map(|&(a, b)| [shape.point_of(a), shape.point_of(b)])
                .collect(),
        }
    }

    pub fn from_record(rec: &ConfigurationRecord) -> Result<Self> {
        let shape = BoxShape::new(rec.n, rec.dim)?;
        rec.measure.validate()?;
        let mut long_edges = Vec::with_capacity(rec.edges.len());
        for [u, v] in &rec.edges {
            let (Some(a), Some(b)) = (shape.index_of(u), shape.index_of(v)) else {
                return invalid(format!("edge {u:?}-{v:?} lies outside the box"));
            };
            if u.inf_distance(v) < 2 {
                return invalid(format!("edge {u:?}-{v:?} is not a long edge"));
            }
            long_edges.push((a.min(b), a.max(b)));
        }
        long_edges.sort_unstable();
        long_edges.dedup();
        Ok(Configuration {
            box_side: rec.n,
            dim: rec.dim,
            long_edges,
            measure: rec.measure,
            seed: rec.seed,
            replica: rec.replica,
        })
    }

    /// One JSON line.
    pub fn to_jsonl(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }
}

/// Serialised form of a [`Configuration`]: one JSONL record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationRecord {
    pub measure: MeasureSpec,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    pub replica: u64,
    pub edges: Vec<[LatticePoint; 2]>,
}

fn check_pair_guard(shape: BoxShape) -> Result<()> {
    let v = shape.vertex_count() as u128;
    if v * v > DIRECT_PAIR_GUARD {
        return Err(Error::Capacity(format!(
            "box {}^{} has {} vertex pairs (guard {DIRECT_PAIR_GUARD}); use sample_fast",
            shape.side,
            shape.dim,
            v * v
        )));
    }
    Ok(())
}

/// Opening probability for each displacement in `[−(n−1), n−1]^d`, indexed
/// mixed-radix with base `2n − 1`.
struct DisplacementTable {
    side: usize,
    dim: usize,
    probs: Vec<f64>,
}

impl DisplacementTable {
    fn build(shape: BoxShape, prob: impl Fn(&[i64]) -> Result<f64>) -> Result<Self> {
        let base = 2 * shape.side - 1;
        let len = base.pow(shape.dim as u32);
        let mut probs = vec![1.0; len];
        let max = shape.side as i64 - 1;
        let mut delta = vec![-max; shape.dim];
        for slot in probs.iter_mut() {
            let inf = delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
            if inf >= 2 {
                *slot = prob(&delta)?;
            }
            for k in (0..shape.dim).rev() {
                if delta[k] < max {
                    delta[k] += 1;
                    break;
                }
                delta[k] = -max;
            }
        }
        Ok(DisplacementTable {
            side: shape.side,
            dim: shape.dim,
            probs,
        })
    }

    fn get(&self, a: &[i64], b: &[i64]) -> f64 {
        let base = 2 * self.side as i64 - 1;
        let off = self.side as i64 - 1;
        let mut idx = 0i64;
        for k in 0..self.dim {
            idx = idx * base + (b[k] - a[k] + off);
        }
        self.probs[idx as usize]
    }
}

fn measure_prob(kernel: &Kernel, spec: &MeasureSpec, delta: &[i64]) -> Result<f64> {
    let len = delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
    let j = kernel.of_displacement(delta)?.value();
    Ok(prob_from_kernel(spec.beta_for_length(len), j))
}

/// Exhaustive sampler: pair `{u, v}` is open iff its edge uniform is below `p(spec, {u, v})`.
///
/// Bit-exact for a given `(spec, n, dim, seed, replica)`; the edge uniforms are the
/// same ones used by the Harris coupling.
pub fn sample_direct(
    spec: MeasureSpec,
    n: usize,
    dim: usize,
    seed: u64,
    replica: u64,
) -> Result<Configuration> {
    spec.validate()?;
    let shape = BoxShape::new(n, dim)?;
    check_pair_guard(shape)?;
    if let MeasureSpec::Continuum { .. } = spec {
        return invalid("sample_direct does not draw the continuum construction; use sample_continuum");
    }
    let key = stream_key(seed, replica);
    let kernel = Kernel::shared(dim);
    let mut long_edges = Vec::new();
    let count = shape.vertex_count() as u32;
    if dim == 1 {
        let probs = (0..n as i64)
            .map(|k| if k < 2 { Ok(0.0) } else { measure_prob(&kernel, &spec, &[k]) })
            .collect::<Result<Vec<f64>>>()?;
        for a in 0..count {
            for b in a + 2..count {
                let p = probs[(b - a) as usize];
                if edge_uniform_1d(key, a as i64, b as i64) < p {
                    long_edges.push((a, b));
                }
            }
        }
    } else {
        let table = DisplacementTable::build(shape, |d| measure_prob(&kernel, &spec, d))?;
        let mut ca = vec![0i64; dim];
        let mut cb = vec![0i64; dim];
        for a in 0..count {
            shape.coords_into(a, &mut ca);
            for b in a + 1..count {
                shape.coords_into(b, &mut cb);
                let inf = ca.iter().zip(&cb).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
                if inf < 2 {
                    continue;
                }
                if edge_uniform(key, &ca, &cb) < table.get(&ca, &cb) {
                    long_edges.push((a, b));
                }
            }
        }
    }
    Ok(Configuration {
        box_side: n,
        dim,
        long_edges,
        measure: spec,
        seed,
        replica,
    })
}

/// Visits the indices `t ∈ [0, m)` of a Bernoulli(`p`) sequence that are 1, by
/// geometric skipping.
fn bernoulli_hits(rng: &mut ChaCha8Rng, m: u64, p: f64, mut hit: impl FnMut(u64)) {
    if p <= 0.0 || m == 0 {
        return;
    }
    if p >= 1.0 {
        (0..m).for_each(hit);
        return;
    }
    let log_q = (-p).ln_1p();
    let mut pos = 0u64;
    loop {
        let u: f64 = rng.random();
        // 1 − u ∈ (0, 1]
        let skip = ((1.0 - u).ln() / log_q).floor();
        if skip >= (m - pos) as f64 {
            return;
        }
        pos += skip as u64;
        hit(pos);
        pos += 1;
        if pos >= m {
            return;
        }
    }
}

/// Edge pairs realising displacement `delta` inside the box, addressed by `t`.
struct DisplacementClass<'a> {
    shape: BoxShape,
    delta: &'a [i64],
    count: u64,
}

impl<'a> DisplacementClass<'a> {
    fn new(shape: BoxShape, delta: &'a [i64]) -> Self {
        let count = delta
            .iter()
            .map(|d| (shape.side as i64 - d.abs()) as u64)
            .product();
        DisplacementClass {
            shape,
            delta,
            count,
        }
    }

    fn edge(&self, mut t: u64, base: &mut [i64]) -> (u32, u32) {
        let side = self.shape.side as i64;
        let dim = self.shape.dim;
        for k in (0..dim).rev() {
            let range = (side - self.delta[k].abs()) as u64;
            let offset = (-self.delta[k]).max(0);
            base[k] = offset + (t % range) as i64;
            t /= range;
        }
        let mut a = 0i64;
        let mut b = 0i64;
        for k in 0..dim {
            a = a * side + base[k];
            b = b * side + base[k] + self.delta[k];
        }
        let (a, b) = (a as u32, b as u32);
        (a.min(b), a.max(b))
    }
}

/// Samples the long edges with ∞-length in `[lo, hi]`, opening each independently with
/// `prob(delta)`, by geometric skipping within each displacement class.
fn sample_classes(
    shape: BoxShape,
    lo: u64,
    hi: u64,
    rng: &mut ChaCha8Rng,
    prob: impl Fn(&[i64]) -> Result<f64>,
) -> Result<Vec<(u32, u32)>> {
    let mut edges = Vec::new();
    let mut base = vec![0i64; shape.dim];
    let mut failure = None;
    for_each_half_displacement(shape.dim, shape.side, lo.max(2), hi, |delta| {
        if failure.is_some() {
            return;
        }
        let p = match prob(delta) {
            Ok(p) => p,
            Err(e) => {
                failure = Some(e);
                return;
            }
        };
        let class = DisplacementClass::new(shape, delta);
        bernoulli_hits(rng, class.count, p, |t| edges.push(class.edge(t, &mut base)));
    });
    if let Some(e) = failure {
        return Err(e);
    }
    edges.sort_unstable();
    Ok(edges)
}

/// Scalable sampler for plain and mixed measures; same law as [`sample_direct`],
/// expected cost `O(#displacement classes + #edges)`.
pub fn sample_fast(
    spec: MeasureSpec,
    n: usize,
    dim: usize,
    seed: u64,
    replica: u64,
) -> Result<Configuration> {
    spec.validate()?;
    if let MeasureSpec::Continuum { beta } = spec {
        return sample_continuum(beta, n, dim, seed, replica);
    }
    let shape = BoxShape::new(n, dim)?;
    let kernel = Kernel::shared(dim);
    let mut rng = stream_rng(stream_key(seed, replica), 0);
    let long_edges = sample_classes(shape, 2, u64::MAX, &mut rng, |d| {
        measure_prob(&kernel, &spec, d)
    })?;
    Ok(Configuration {
        box_side: n,
        dim,
        long_edges,
        measure: spec,
        seed,
        replica,
    })
}

/// Draws the two Poisson point counts of `ẽ` on `(u+C)×(v+C)` and `(v+C)×(u+C)`,
/// each with mean `βJ/2`.
pub fn continuum_pair_counts(beta: f64, j: f64, rng: &mut impl Rng) -> [u64; 2] {
    let mean = 0.5 * beta * j;
    if mean <= 0.0 {
        return [0, 0];
    }
    let pois = Poisson::new(mean).expect("finite positive Poisson mean");
    [pois.sample(rng) as u64, pois.sample(rng) as u64]
}

/// Continuum construction: `u ∼ v` iff the symmetrised Poisson process has a point in
/// `(u+C)×(v+C)`. Only the per-box-pair counts are drawn; point locations do not
/// affect the lattice projection.
pub fn sample_continuum(
    beta: f64,
    n: usize,
    dim: usize,
    seed: u64,
    replica: u64,
) -> Result<Configuration> {
    let spec = MeasureSpec::Continuum { beta };
    spec.validate()?;
    let shape = BoxShape::new(n, dim)?;
    check_pair_guard(shape)?;
    let kernel = Kernel::shared(dim);
    let table = DisplacementTable::build(shape, |d| kernel.finite(d))?;
    let mut rng = stream_rng(stream_key(seed, replica), CONTINUUM_TAG);
    let mut long_edges = Vec::new();
    let count = shape.vertex_count() as u32;
    let mut ca = vec![0i64; dim];
    let mut cb = vec![0i64; dim];
    if beta > 0.0 {
        for a in 0..count {
            shape.coords_into(a, &mut ca);
            for b in a + 1..count {
                shape.coords_into(b, &mut cb);
                let inf = ca.iter().zip(&cb).map(|(x, y)| x.abs_diff(*y)).max().unwrap();
                if inf < 2 {
                    continue;
                }
                let [n1, n2] = continuum_pair_counts(beta, table.get(&ca, &cb), &mut rng);
                if n1 + n2 > 0 {
                    long_edges.push((a, b));
                }
            }
        }
    }
    Ok(Configuration {
        box_side: n,
        dim,
        long_edges,
        measure: spec,
        seed,
        replica,
    })
}

/// Harris-coupled configurations for an ascending β-grid.
///
/// Edges are realised once at `β_max`; each realised edge then gets the conditional
/// uniform `U | U < p_max` (uniform on `[0, p_max)`, a pure function of the edge) and
/// is kept at `β_i` iff `U < p(β_i, e)`. Every marginal is `P_{β_i}` and the edge
/// sets are nested.
pub fn coupled_sweep(
    betas: &[f64],
    n: usize,
    dim: usize,
    seed: u64,
    replica: u64,
) -> Result<Vec<Configuration>> {
    if betas.is_empty() {
        return invalid("coupled sweep needs at least one beta");
    }
    for b in betas {
        MeasureSpec::plain(*b).validate()?;
    }
    if betas.windows(2).any(|w| w[0] > w[1]) {
        return invalid("betas must be sorted ascending");
    }
    let beta_max = *betas.last().unwrap();
    let top = sample_fast(MeasureSpec::plain(beta_max), n, dim, seed, replica)?;
    let shape = top.shape();
    let kernel = Kernel::shared(dim);
    let key = stream_key(seed, replica) ^ SWEEP_TAG;
    let mut ca = vec![0i64; dim];
    let mut cb = vec![0i64; dim];
    // (uniform, J) per realised edge
    let mut marks = Vec::with_capacity(top.long_edges.len());
    for &(a, b) in &top.long_edges {
        shape.coords_into(a, &mut ca);
        shape.coords_into(b, &mut cb);
        let delta: Vec<i64> = cb.iter().zip(&ca).map(|(y, x)| y - x).collect();
        let j = kernel.finite(&delta)?;
        let p_max = prob_from_kernel(beta_max, j);
        marks.push((edge_uniform(key, &ca, &cb) * p_max, j));
    }
    Ok(betas
        .iter()
        .map(|&beta| {
            let long_edges = if beta == beta_max {
                top.long_edges.clone()
            } else {
                top.long_edges
                    .iter()
                    .zip(&marks)
                    .filter(|(_, &(u, j))| u < prob_from_kernel(beta, j))
                    .map(|(e, _)| *e)
                    .collect()
            };
            Configuration {
                box_side: n,
                dim,
                long_edges,
                measure: MeasureSpec::plain(beta),
                seed,
                replica,
            }
        })
        .collect())
}

/// The χ sprinkle: edges with `2^{k−1} ≤ |e| ≤ 2^k − 1`, each open with probability
/// `1 − e^{−εJ}`, drawn from the χ seed domain.
pub fn sample_chi(
    shape: BoxShape,
    eps: f64,
    k: u32,
    seed: u64,
    replica: u64,
) -> Result<Vec<(u32, u32)>> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return invalid(format!("eps must be finite and non-negative, got {eps}"));
    }
    if k == 0 || k > 62 {
        return invalid(format!("level k must lie in 1..=62, got {k}"));
    }
    if eps == 0.0 {
        return Ok(Vec::new());
    }
    let kernel = Kernel::shared(shape.dim);
    let mut rng = stream_rng(stream_key(seed ^ CHI_TAG, replica), k as u64);
    let lo = 1u64 << (k - 1);
    let hi = (1u64 << k) - 1;
    sample_classes(shape, lo, hi, &mut rng, |d| {
        Ok(prob_from_kernel(eps, kernel.finite(d)?))
    })
}

/// `ω′ = ω ∨ χ`: turns a sample of `P_{β≤k}^{β+ε>k}` into one of `P_{β≤k−1}^{β+ε>k−1}`.
pub fn chi_augment(omega: &Configuration, eps: f64, k: u32, seed: u64) -> Result<Configuration> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return invalid(format!("eps must be finite and non-negative, got {eps}"));
    }
    let beta = match omega.measure {
        MeasureSpec::Mixed {
            beta,
            beta2,
            k_threshold,
        } => {
            if k_threshold != k || (beta2 - beta - eps).abs() > 1e-12 * (1.0 + beta2) {
                return invalid(format!(
                    "omega has measure {:?}, expected mixed(beta, beta+{eps}, {k})",
                    omega.measure
                ));
            }
            beta
        }
        // a plain sample is a level-k sample when no edge reaches length 2^k
        MeasureSpec::Plain { beta }
            if eps == 0.0 || (omega.box_side as u128) <= (1u128 << k.min(127)) =>
        {
            beta
        }
        other => {
            return invalid(format!(
                "chi_augment needs a mixed level-{k} sample, got {other:?}"
            ))
        }
    };
    let chi = sample_chi(omega.shape(), eps, k, seed, omega.replica)?;
    let mut long_edges = omega.long_edges.clone();
    if !chi.is_empty() {
        long_edges.extend(chi);
        long_edges.sort_unstable();
        long_edges.dedup();
    }
    Ok(Configuration {
        box_side: omega.box_side,
        dim: omega.dim,
        long_edges,
        measure: MeasureSpec::mixed(beta, beta + eps, k - 1),
        seed: omega.seed,
        replica: omega.replica,
    })
}

#[cfg(test)]
mod tests;

//! The kernel `J(u, v) = ∫_{u+C} ∫_{v+C} ‖x − y‖₂^{−2d} dx dy` over unit boxes
//! `C = [0, 1)^d`, and the connection probabilities `p(β, {u,v}) = 1 − e^{−βJ}`
//! built on it.
//!
//! In `d = 1` the integral has the closed form `J(k) = log(k² / (k² − 1))`.
//! For `d ≥ 2` it is evaluated by adaptive cubature of the equivalent
//! `d`-dimensional integral `∫_{[−1,1]^d} ‖δ + z‖^{−2d} Π(1 − |zᵢ|) dz`
//! (the difference of two independent uniforms on `C` has a tent density),
//! and memoised per canonical displacement.

pub mod quadrature;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{Displacement, LatticePoint};

/// Absolute tolerance for quadrature-backed kernel values.
pub const QUAD_TOL: f64 = 1e-10;

/// Value of the kernel for one pair of unit boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelValue {
    /// Touching boxes (`‖u − v‖_∞ = 1`): the integrand is not integrable.
    Infinite,
    Finite {
        value: f64,
        /// Closed form rather than quadrature.
        exact: bool,
        /// Absolute error bound, zero when exact.
        quad_error: f64,
    },
}

impl KernelValue {
    pub fn value(&self) -> f64 {
        match *self {
            KernelValue::Infinite => f64::INFINITY,
            KernelValue::Finite { value, .. } => value,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, KernelValue::Infinite)
    }

    pub fn is_exact(&self) -> bool {
        match *self {
            KernelValue::Infinite => true,
            KernelValue::Finite { exact, .. } => exact,
        }
    }

    pub fn quad_error(&self) -> f64 {
        match *self {
            KernelValue::Infinite => 0.0,
            KernelValue::Finite { quad_error, .. } => quad_error,
        }
    }
}

/// `J(k) = log(k² / (k² − 1))` for the one-dimensional kernel at distance `k ≥ 2`.
pub fn closed_form_1d(k: u64) -> f64 {
    debug_assert!(k >= 2);
    let k = k as f64;
    -(-1.0 / (k * k)).ln_1p()
}

/// `1 − e^{−βJ}`, exactly 1 for an infinite kernel.
pub fn prob_from_kernel(beta: f64, j: f64) -> f64 {
    if j.is_infinite() {
        1.0
    } else {
        -(-beta * j).exp_m1()
    }
}

/// `∂/∂β (1 − e^{−βJ}) = J e^{−βJ}`.
pub fn prob_derivative_from_kernel(beta: f64, j: f64) -> f64 {
    j * (-beta * j).exp()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return invalid(format!("beta must be finite and non-negative, got {beta}"));
    }
    Ok(())
}

/// Truncated evaluation of the expected degree of the origin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DegreeEstimate {
    pub value: f64,
    /// Upper bound on the omitted tail plus accumulated quadrature error.
    pub error_bound: f64,
    pub radius: u64,
}

/// Kernel evaluator for one dimension with a concurrent memo table.
#[derive(Debug)]
pub struct Kernel {
    dim: usize,
    cache: DashMap<Vec<i64>, KernelValue>,
}

impl Kernel {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Kernel {
            dim,
            cache: DashMap::new(),
        }
    }

    /// Process-wide kernel for `dim`, so that every sampler shares one cache.
    pub fn shared(dim: usize) -> Arc<Kernel> {
        static REGISTRY: OnceLock<Mutex<HashMap<usize, Arc<Kernel>>>> = OnceLock::new();
        let mut reg = REGISTRY
            .get_or_init(Default::default)
            .lock()
            .expect("kernel registry poisoned");
        reg.entry(dim)
            .or_insert_with(|| Arc::new(Kernel::new(dim)))
            .clone()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    fn check_pair(&self, u: &LatticePoint, v: &LatticePoint) -> Result<Displacement> {
        if u.dim() != self.dim || v.dim() != self.dim {
            return invalid(format!(
                "points must have dimension {}, got {} and {}",
                self.dim,
                u.dim(),
                v.dim()
            ));
        }
        let d = u.displacement_to(v);
        if d.is_zero() {
            return invalid("kernel undefined for u = v");
        }
        Ok(d)
    }

    /// `J(u, v)`.
    pub fn integral(&self, u: &LatticePoint, v: &LatticePoint) -> Result<KernelValue> {
        let d = self.check_pair(u, v)?;
        self.of_displacement(d.delta())
    }

    /// `J` as a function of the displacement `v − u`.
    pub fn of_displacement(&self, delta: &[i64]) -> Result<KernelValue> {
        if delta.len() != self.dim {
            return invalid("displacement has wrong dimension");
        }
        let inf = delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        match inf {
            0 => invalid("kernel undefined for zero displacement"),
            1 => Ok(KernelValue::Infinite),
            k if self.dim == 1 => Ok(KernelValue::Finite {
                value: closed_form_1d(k),
                exact: true,
                quad_error: 0.0,
            }),
            _ => {
                let key = Displacement::new(delta.to_vec()).canonical().delta().to_vec();
                if let Some(v) = self.cache.get(&key) {
                    return Ok(*v);
                }
                let value = quadrature_kernel(&key)?;
                // concurrent writers compute the same value, first insert wins
                Ok(*self.cache.entry(key).or_insert(value))
            }
        }
    }

    /// Finite `J` for a non-nearest-neighbour displacement.
    pub fn finite(&self, delta: &[i64]) -> Result<f64> {
        match self.of_displacement(delta)? {
            KernelValue::Infinite => invalid("nearest-neighbour displacement has infinite kernel"),
            KernelValue::Finite { value, .. } => Ok(value),
        }
    }

    /// Forces the quadrature route, also in `d = 1`; not cached.
    pub fn quadrature(&self, delta: &[i64]) -> Result<KernelValue> {
        let inf = delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        if inf < 2 {
            return invalid("quadrature only defined for ‖δ‖_∞ ≥ 2");
        }
        let key = Displacement::new(delta.to_vec()).canonical().delta().to_vec();
        quadrature_kernel(&key)
    }

    /// `p(β, {u, v})`.
    pub fn connection_prob(&self, beta: f64, u: &LatticePoint, v: &LatticePoint) -> Result<f64> {
        check_beta(beta)?;
        Ok(prob_from_kernel(beta, self.integral(u, v)?.value()))
    }

    pub fn connection_prob_delta(&self, beta: f64, delta: &[i64]) -> Result<f64> {
        check_beta(beta)?;
        Ok(prob_from_kernel(beta, self.of_displacement(delta)?.value()))
    }

    /// `∂p/∂β` for an edge with `‖u − v‖_∞ ≥ 2`.
    pub fn connection_prob_derivative(
        &self,
        beta: f64,
        u: &LatticePoint,
        v: &LatticePoint,
    ) -> Result<f64> {
        check_beta(beta)?;
        match self.integral(u, v)? {
            KernelValue::Infinite => {
                invalid("derivative undefined for nearest-neighbour edges (probability pinned at 1)")
            }
            KernelValue::Finite { value, .. } => Ok(prob_derivative_from_kernel(beta, value)),
        }
    }

    /// `Σ_{x ∈ V_u^n} Σ_{y ∈ V_v^n} J(x, y)` for the blocks `V_u^n = nu + {0..n−1}^d`.
    pub fn block_kernel_sum(&self, u: &LatticePoint, v: &LatticePoint, n: u64) -> Result<f64> {
        let d = self.check_pair(u, v)?;
        if n == 0 {
            return invalid("block side must be positive");
        }
        if d.inf_norm() < 2 {
            return invalid("blocks overlap or touch: need ‖u − v‖_∞ ≥ 2");
        }
        let n = n as i64;
        let base: Vec<i64> = d.delta().iter().map(|x| x * n).collect();
        // The displacement y − x ranges over base + w with w ∈ {−(n−1)..n−1}^d,
        // with multiplicity Π (n − |wᵢ|).
        let dim = self.dim;
        let mut w = vec![-(n - 1); dim];
        let mut delta = vec![0i64; dim];
        let mut terms = Vec::new();
        loop {
            let mut mult = 1i64;
            for k in 0..dim {
                delta[k] = base[k] + w[k];
                mult *= n - w[k].abs();
            }
            terms.push(mult as f64 * self.finite(&delta)?);
            let mut k = dim;
            loop {
                if k == 0 {
                    terms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    return Ok(terms.iter().sum());
                }
                k -= 1;
                if w[k] < n - 1 {
                    w[k] += 1;
                    break;
                }
                w[k] = -(n - 1);
            }
        }
    }

    /// `μ_β = E_β[deg(0)]` truncated at ∞-norm radius `R`, with the tail bounded via
    /// `p(β, e) ≤ βJ`.
    pub fn expected_degree(&self, beta: f64) -> Result<DegreeEstimate> {
        check_beta(beta)?;
        let dim = self.dim as i32;
        let nearest = 3f64.powi(dim) - 1.0;
        if self.dim == 1 {
            let radius: u64 = 1_000_000;
            // summed smallest-first
            let sum: f64 = (2..=radius)
                .rev()
                .map(|k| prob_from_kernel(beta, closed_form_1d(k)))
                .sum();
            // Σ_{k>R} J(k) = log(1 + 1/R) telescopes exactly
            let tail = 2.0 * beta * (1.0 / radius as f64).ln_1p();
            return Ok(DegreeEstimate {
                value: nearest + 2.0 * sum,
                error_bound: tail,
                radius,
            });
        }
        // Shell r holds (2r+1)^d − (2r−1)^d ≤ 2d(3r)^{d−1} points, and J ≤ (2/r)^{2d}
        // there, so the tail beyond R is at most β·2·4^d·3^{d−1}/R^d.
        let tail_const = 2.0 * 4f64.powi(dim) * 3f64.powi(dim - 1);
        let target = 1e-3;
        let radius = if beta == 0.0 {
            2
        } else {
            ((tail_const * beta / target).powf(1.0 / dim as f64).ceil() as u64).clamp(2, 2000)
        };
        let tail = beta * tail_const / (radius as f64).powi(dim);
        let mut sum = 0.0;
        let mut quad_err = 0.0;
        for_each_canonical(self.dim, 2, radius as i64, |c, mult| {
            let kv = self.of_displacement(c)?;
            sum += mult as f64 * prob_from_kernel(beta, kv.value());
            quad_err += mult as f64 * beta * kv.quad_error();
            Ok(())
        })?;
        Ok(DegreeEstimate {
            value: nearest + sum,
            error_bound: tail + quad_err,
            radius,
        })
    }

    /// Writes quadrature-backed cache entries as `displacement,value,quad_error` rows.
    pub fn save_cache_csv(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<CacheRow> = self
            .cache
            .iter()
            .filter_map(|e| match *e.value() {
                KernelValue::Finite {
                    value, quad_error, ..
                } => Some(CacheRow {
                    displacement: e
                        .key()
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(" "),
                    value,
                    quad_error,
                }),
                KernelValue::Infinite => None,
            })
            .collect();
        rows.sort_by(|a, b| a.displacement.cmp(&b.displacement));
        let mut w = csv::Writer::from_path(path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads cache rows written by [`Kernel::save_cache_csv`]; returns the number loaded.
    pub fn load_cache_csv(&self, path: &Path) -> Result<usize> {
        let mut r = csv::Reader::from_path(path)?;
        let mut count = 0;
        for row in r.deserialize::<CacheRow>() {
            let row = row?;
            let key: Vec<i64> = row
                .displacement
                .split_whitespace()
                .map(|s| s.parse::<i64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad displacement in cache: {e}")))?;
            if key.len() != self.dim {
                return invalid("cache row has wrong dimension");
            }
            let key = Displacement::new(key).canonical().delta().to_vec();
            self.cache.insert(
                key,
                KernelValue::Finite {
                    value: row.value,
                    exact: false,
                    quad_error: row.quad_error,
                },
            );
            count += 1;
        }
        Ok(count)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRow {
    displacement: String,
    value: f64,
    quad_error: f64,
}

/// Visits canonical displacements (non-negative, ascending) with ∞-norm in
/// `[lo, hi]`, passing the number of signed permutations each one represents.
fn for_each_canonical(
    dim: usize,
    lo: i64,
    hi: i64,
    mut visit: impl FnMut(&[i64], u64) -> Result<()>,
) -> Result<()> {
    let mut c = vec![0i64; dim];
    fn rec(
        c: &mut Vec<i64>,
        pos: usize,
        lo: i64,
        hi: i64,
        visit: &mut dyn FnMut(&[i64], u64) -> Result<()>,
    ) -> Result<()> {
        let dim = c.len();
        if pos == dim {
            let top = c[dim - 1];
            if top >= lo && top <= hi {
                visit(c, signed_permutations(c))?;
            }
            return Ok(());
        }
        let start = if pos == 0 { 0 } else { c[pos - 1] };
        for x in start..=hi {
            c[pos] = x;
            rec(c, pos + 1, lo, hi, visit)?;
        }
        Ok(())
    }
    rec(&mut c, 0, lo, hi, &mut visit)
}

fn signed_permutations(c: &[i64]) -> u64 {
    let fact = |n: usize| (1..=n as u64).product::<u64>();
    let mut perms = fact(c.len());
    let mut i = 0;
    while i < c.len() {
        let mut j = i;
        while j < c.len() && c[j] == c[i] {
            j += 1;
        }
        perms /= fact(j - i);
        i = j;
    }
    let nonzero = c.iter().filter(|&&x| x != 0).count() as u32;
    perms * 2u64.pow(nonzero)
}

fn quadrature_kernel(canonical: &[i64]) -> Result<KernelValue> {
    let dim = canonical.len();
    let power = 2 * dim as i32;
    let delta: Vec<f64> = canonical.iter().map(|&x| x as f64).collect();
    let integrand = |z: &[f64]| {
        let mut r2 = 0.0;
        let mut tent = 1.0;
        for k in 0..dim {
            let t = delta[k] + z[k];
            r2 += t * t;
            tent *= 1.0 - z[k].abs();
        }
        tent / r2.powi(power / 2)
    };
    let orthants = 1usize << dim;
    let tol = QUAD_TOL / orthants as f64;
    let mut value = 0.0;
    let mut error = 0.0;
    for o in 0..orthants {
        let lo: Vec<f64> = (0..dim).map(|k| if o >> k & 1 == 0 { -1.0 } else { 0.0 }).collect();
        let hi: Vec<f64> = lo.iter().map(|a| a + 1.0).collect();
        match quadrature::integrate(&lo, &hi, tol, integrand) {
            Ok(c) => {
                value += c.value;
                error += c.error;
            }
            Err(Error::Numeric { message, partial, .. }) => {
                return Err(Error::Numeric {
                    message: format!("kernel at displacement {canonical:?}: {message}"),
                    partial: value + partial,
                    error: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(KernelValue::Finite {
        value,
        exact: false,
        quad_error: error,
    })
}

#[cfg(test)]
mod tests;

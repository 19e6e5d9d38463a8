//! Exact expectations over every configuration of a small edge set, and Russo's
//! formula for the β-derivative of such expectations.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernel::{closed_form_1d, prob_derivative_from_kernel, prob_from_kernel, Kernel};
use crate::lattice::LatticePoint;

/// Largest number of optional edges accepted for enumeration.
pub const ENUMERATION_GUARD: usize = 24;
pub const MAX_VERTICES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionalEdge {
    pub a: usize,
    pub b: usize,
    /// Kernel value `J`; the edge is open with probability `1 − e^{−βJ}`.
    pub j: f64,
}

impl OptionalEdge {
    pub fn prob(&self, beta: f64) -> f64 {
        prob_from_kernel(beta, self.j)
    }

    pub fn prob_derivative(&self, beta: f64) -> f64 {
        prob_derivative_from_kernel(beta, self.j)
    }
}

/// A finite graph whose forced edges are always open and whose optional edges
/// are independent Bernoulli variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteModel {
    pub dim: usize,
    pub vertices: Vec<LatticePoint>,
    pub forced_edges: Vec<(usize, usize)>,
    pub optional_edges: Vec<OptionalEdge>,
}

impl FiniteModel {
    /// Builds a model, taking each optional edge's kernel value from the lattice.
    pub fn new(
        vertices: Vec<LatticePoint>,
        forced_edges: Vec<(usize, usize)>,
        optional: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let dim = match vertices.first() {
            Some(v) => v.dim(),
            None => return invalid("a finite model needs at least one vertex"),
        };
        if vertices.len() > MAX_VERTICES {
            return Err(Error::Capacity(format!(
                "{} vertices exceed the limit of {MAX_VERTICES}",
                vertices.len()
            )));
        }
        if optional.len() > ENUMERATION_GUARD {
            return Err(Error::Capacity(format!(
                "{} optional edges exceed the enumeration guard of {ENUMERATION_GUARD}",
                optional.len()
            )));
        }
        if vertices.iter().any(|v| v.dim() != dim) {
            return invalid("vertices must share one dimension");
        }
        let kernel = Kernel::shared(dim);
        let mut seen = std::collections::HashSet::new();
        let mut check = |a: usize, b: usize| -> Result<()> {
            if a >= vertices.len() || b >= vertices.len() || a == b {
                return invalid(format!("edge ({a},{b}) is not a pair of distinct model vertices"));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return invalid(format!("edge ({a},{b}) listed twice"));
            }
            Ok(())
        };
        for &(a, b) in &forced_edges {
            check(a, b)?;
        }
        let mut optional_edges = Vec::with_capacity(optional.len());
        for &(a, b) in &optional {
            check(a, b)?;
            let delta = vertices[a].displacement_to(&vertices[b]);
            if delta.is_zero() {
                return invalid(format!("edge ({a},{b}) joins coincident points"));
            }
            if delta.inf_norm() == 1 {
                return invalid(format!(
                    "edge ({a},{b}) joins nearest neighbours, which are always open; list it as forced"
                ));
            }
            let j = kernel.finite(delta.delta())?;
            optional_edges.push(OptionalEdge { a, b, j });
        }
        Ok(FiniteModel {
            dim,
            vertices,
            forced_edges,
            optional_edges,
        })
    }

    /// The path `0..n` in `d = 1` with the given long edges optional.
    pub fn path_1d(n: usize, optional: Vec<(usize, usize)>) -> Result<Self> {
        let vertices = (0..n as i64).map(LatticePoint::from).collect();
        let forced = (1..n).map(|i| (i - 1, i)).collect();
        FiniteModel::new(vertices, forced, optional)
    }

    /// The `d = 1` box of side `n` with every long edge optional.
    pub fn box_1d(n: usize) -> Result<Self> {
        let optional = (0..n)
            .flat_map(|a| (a + 2..n).map(move |b| (a, b)))
            .collect();
        FiniteModel::path_1d(n, optional)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn configuration_count(&self) -> u64 {
        1u64 << self.optional_edges.len()
    }

    fn forced_adjacency(&self) -> [u64; MAX_VERTICES] {
        let mut adj = [0u64; MAX_VERTICES];
        for &(a, b) in &self.forced_edges {
            adj[a] |= 1 << b;
            adj[b] |= 1 << a;
        }
        adj
    }
}

/// A real function of the optional-edge assignment.
///
/// Bit `i` of the mask passed to [`Functional::Custom`] is the state of optional edge `i`.
#[derive(Clone)]
pub enum Functional {
    Constant(f64),
    /// Graph distance between two model vertices.
    Distance { a: usize, b: usize },
    Diameter,
    /// Cut points of a `d = 1` model.
    CutPoints,
    Negated(Box<Functional>),
    Custom(Arc<dyn Fn(u32) -> f64 + Send + Sync>),
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Constant(c) => write!(f, "Constant({c})"),
            Functional::Distance { a, b } => write!(f, "D({a},{b})"),
            Functional::Diameter => write!(f, "diameter"),
            Functional::CutPoints => write!(f, "cut_points"),
            Functional::Negated(g) => write!(f, "-{g:?}"),
            Functional::Custom(_) => write!(f, "custom"),
        }
    }
}

impl Functional {
    pub fn custom(f: impl Fn(u32) -> f64 + Send + Sync + 'static) -> Self {
        Functional::Custom(Arc::new(f))
    }

    fn needs_graph(&self) -> bool {
        match self {
            Functional::Distance { .. } | Functional::Diameter => true,
            Functional::Negated(g) => g.needs_graph(),
            _ => false,
        }
    }
}

fn eccentricity_to(adj: &[u64], count: usize, source: usize, target: Option<usize>) -> u32 {
    let all = if count == 64 { u64::MAX } else { (1u64 << count) - 1 };
    let mut visited = 1u64 << source;
    let mut frontier = visited;
    let mut depth = 0;
    loop {
        if let Some(t) = target {
            if visited >> t & 1 == 1 {
                return depth;
            }
        }
        if visited == all {
            return depth;
        }
        let mut next = 0u64;
        let mut f = frontier;
        while f != 0 {
            let v = f.trailing_zeros() as usize;
            next |= adj[v];
            f &= f - 1;
        }
        next &= !visited;
        debug_assert!(next != 0, "forced edges connect the model");
        visited |= next;
        frontier = next;
        depth += 1;
    }
}

/// Precomputed data for evaluating one functional on one model.
struct Evaluator<'a> {
    model: &'a FiniteModel,
    /// For `CutPoints`: per interior vertex, the optional edges straddling it,
    /// or `None` when a forced edge already does.
    straddles: Vec<Option<u32>>,
}

impl<'a> Evaluator<'a> {
    fn new(model: &'a FiniteModel, functional: &'a Functional) -> Result<Self> {
        let n = model.vertex_count();
        let check_vertex = |v: usize| {
            if v >= n {
                invalid(format!("functional refers to vertex {v} of a {n}-vertex model"))
            } else {
                Ok(())
            }
        };
        let mut root = functional;
        while let Functional::Negated(g) = root {
            root = g;
        }
        if let Functional::Distance { a, b } = *root {
            check_vertex(a)?;
            check_vertex(b)?;
        }
        if functional.needs_graph() {
            let adj = model.forced_adjacency();
            let ecc = reachable_set(&adj, n);
            if ecc != (if n == 64 { u64::MAX } else { (1u64 << n) - 1 }) {
                return invalid("graph functionals need forced edges that connect every vertex");
            }
        }
        let mut straddles = Vec::new();
        if matches!(root, Functional::CutPoints) {
            if model.dim != 1 {
                return invalid("cut points are defined for d = 1 only");
            }
            let x = |i: usize| model.vertices[i].0[0];
            let lo = (0..n).map(x).min().unwrap_or(0);
            let hi = (0..n).map(x).max().unwrap_or(0);
            let strictly_inside = |w: i64, a: usize, b: usize| {
                let (u, v) = (x(a).min(x(b)), x(a).max(x(b)));
                u < w && w < v
            };
            for w in 0..n {
                let xw = x(w);
                if xw <= lo || xw >= hi {
                    continue;
                }
                if model.forced_edges.iter().any(|&(a, b)| strictly_inside(xw, a, b)) {
                    straddles.push(None);
                    continue;
                }
                let mut mask = 0u32;
                for (i, e) in model.optional_edges.iter().enumerate() {
                    if strictly_inside(xw, e.a, e.b) {
                        mask |= 1 << i;
                    }
                }
                straddles.push(Some(mask));
            }
        }
        Ok(Evaluator { model, straddles })
    }

    fn eval(&self, f: &Functional, mask: u32, adj: &[u64]) -> f64 {
        let n = self.model.vertex_count();
        match f {
            Functional::Constant(c) => *c,
            Functional::Distance { a, b } => eccentricity_to(adj, n, *a, Some(*b)) as f64,
            Functional::Diameter => (0..n)
                .map(|s| eccentricity_to(adj, n, s, None))
                .max()
                .unwrap_or(0) as f64,
            Functional::CutPoints => self
                .straddles
                .iter()
                .filter(|s| matches!(s, Some(m) if m & mask == 0))
                .count() as f64,
            Functional::Negated(g) => -self.eval(g, mask, adj),
            Functional::Custom(g) => g(mask),
        }
    }
}

fn reachable_set(adj: &[u64], n: usize) -> u64 {
    if n == 0 {
        return 0;
    }
    let mut visited = 1u64;
    loop {
        let mut next = visited;
        let mut f = visited;
        while f != 0 {
            next |= adj[f.trailing_zeros() as usize];
            f &= f - 1;
        }
        if next == visited {
            return visited;
        }
        visited = next;
    }
}

/// The functional tabulated over all `2^m` optional-edge assignments.
pub struct Enumeration {
    edges: Vec<OptionalEdge>,
    values: Vec<f64>,
}

impl Enumeration {
    pub fn new(model: &FiniteModel, functional: &Functional) -> Result<Self> {
        let m = model.optional_edges.len();
        if m > ENUMERATION_GUARD {
            return Err(Error::Capacity(format!(
                "{m} optional edges exceed the enumeration guard of {ENUMERATION_GUARD}"
            )));
        }
        let evaluator = Evaluator::new(model, functional)?;
        let mut adj = model.forced_adjacency();
        let total = 1usize << m;
        let mut values = vec![0.0; total];
        // Gray-code walk: consecutive assignments differ in one edge.
        let mut mask = 0u32;
        values[0] = evaluator.eval(functional, 0, &adj);
        for step in 1..total {
            let flip = step.trailing_zeros() as usize;
            let e = model.optional_edges[flip];
            adj[e.a] ^= 1 << e.b;
            adj[e.b] ^= 1 << e.a;
            mask ^= 1 << flip;
            values[mask as usize] = evaluator.eval(functional, mask, &adj);
        }
        Ok(Enumeration {
            edges: model.optional_edges.clone(),
            values,
        })
    }

    pub fn value(&self, mask: u32) -> f64 {
        self.values[mask as usize]
    }

    /// Per-mask product weights, split into low and high halves.
    fn weight_tables(probs: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
        let split = probs.len() / 2;
        let table = |ps: &[f64]| {
            let mut t = vec![1.0f64; 1 << ps.len()];
            for (i, &p) in ps.iter().enumerate() {
                let bit = 1usize << i;
                for mask in 0..t.len() {
                    t[mask] *= if mask & bit != 0 { p } else { 1.0 - p };
                }
            }
            t
        };
        (table(&probs[..split]), table(&probs[split..]), split)
    }

    fn weighted_sum(&self, probs: &[f64], term: impl Fn(usize) -> f64 + Sync) -> f64 {
        let (lo, hi, split) = Self::weight_tables(probs);
        let lo_mask = (1usize << split) - 1;
        hi.par_iter()
            .enumerate()
            .map(|(h, &wh)| {
                let base = h << split;
                let mut acc = 0.0;
                for (l, &wl) in lo.iter().enumerate() {
                    let w = wl * wh;
                    if w != 0.0 {
                        acc += w * term(base | (l & lo_mask));
                    }
                }
                acc
            })
            .sum()
    }

    pub fn expectation(&self, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        let probs: Vec<f64> = self.edges.iter().map(|e| e.prob(beta)).collect();
        Ok(self.weighted_sum(&probs, |mask| self.values[mask]))
    }

    /// `Σ_e p′_e(β) · E_β[f(ω^{e+}) − f(ω^{e−})]`.
    pub fn russo(&self, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        let mut total = 0.0;
        for (i, e) in self.edges.iter().enumerate() {
            // freeze edge i open so the weights ignore its state
            let probs: Vec<f64> = self
                .edges
                .iter()
                .enumerate()
                .map(|(k, f)| if k == i { 1.0 } else { f.prob(beta) })
                .collect();
            let bit = 1usize << i;
            let pivotal = self.weighted_sum(&probs, |mask| {
                self.values[mask] - self.values[mask & !bit]
            });
            total += e.prob_derivative(beta) * pivotal;
        }
        Ok(total)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta >= 0.0 {
        Ok(())
    } else {
        invalid(format!("beta must be finite and non-negative, got {beta}"))
    }
}

pub fn exact_expectation(model: &FiniteModel, f: &Functional, beta: f64) -> Result<f64> {
    Enumeration::new(model, f)?.expectation(beta)
}

pub fn russo_derivative(model: &FiniteModel, f: &Functional, beta: f64) -> Result<f64> {
    Enumeration::new(model, f)?.russo(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceScheme {
    Central,
    /// Second-order one-sided difference, used when `β < h`.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RussoReport {
    pub beta: f64,
    pub h: f64,
    pub analytic: f64,
    pub finite_diff: f64,
    pub abs_error: f64,
    pub scheme: DifferenceScheme,
}

/// Compares Russo's formula with a finite difference of exact expectations.
pub fn verify_russo(model: &FiniteModel, f: &Functional, beta: f64, h: f64) -> Result<RussoReport> {
    check_beta(beta)?;
    if !(h.is_finite() && h > 0.0) {
        return invalid(format!("step must be positive, got {h}"));
    }
    let en = Enumeration::new(model, f)?;
    let analytic = en.russo(beta)?;
    let (finite_diff, scheme) = if beta >= h {
        (
            (en.expectation(beta + h)? - en.expectation(beta - h)?) / (2.0 * h),
            DifferenceScheme::Central,
        )
    } else {
        (
            (-3.0 * en.expectation(beta)? + 4.0 * en.expectation(beta + h)?
                - en.expectation(beta + 2.0 * h)?)
                / (2.0 * h),
            DifferenceScheme::Forward,
        )
    };
    Ok(RussoReport {
        beta,
        h,
        analytic,
        finite_diff,
        abs_error: (analytic - finite_diff).abs(),
        scheme,
    })
}

/// `dΛ(n, β)/dβ` at `β = 0` in `d = 1`: `−Σ_{k=2}^{n−1} (n−k) J(k) (k−1)`.
pub fn lambda_small_beta_derivative(n: u64) -> Result<f64> {
    if n < 3 {
        return invalid(format!("the small-beta derivative needs n >= 3, got {n}"));
    }
    let mut terms: Vec<f64> = (2..n)
        .map(|k| (n - k) as f64 * closed_form_1d(k) * (k - 1) as f64)
        .collect();
    // small terms first
    terms.reverse();
    Ok(-terms.iter().sum::<f64>())
}

/// A randomly drawn model and functional for identity checks.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub model: FiniteModel,
    pub functional: Functional,
}

/// A contiguous `d = 1` path of 4 to 8 vertices with up to 8 random optional long
/// edges, paired with a distance, diameter or cut-point functional.
pub fn random_case(rng: &mut impl Rng) -> RandomCase {
    let n = rng.random_range(4..=8usize);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 2..n).map(move |b| (a, b)))
        .collect();
    let keep = rng.random_range(1..=pairs.len().min(8));
    for i in 0..keep {
        let j = rng.random_range(i..pairs.len());
        pairs.swap(i, j);
    }
    pairs.truncate(keep);
    pairs.sort_unstable();
    let model = FiniteModel::path_1d(n, pairs).expect("valid random model");
    let functional = match rng.random_range(0..3) {
        0 => {
            let a = rng.random_range(0..n);
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            Functional::Distance { a, b }
        }
        1 => Functional::Diameter,
        _ => Functional::CutPoints,
    };
    RandomCase { model, functional }
}

#[cfg(test)]
mod tests;

//! Graph distances on sampled configurations.
//!
//! Nearest-neighbour bonds (`‖u−v‖∞ = 1`, diagonals included) are generated on the
//! fly; only the long edges are stored, in a compressed adjacency layout.

use std::collections::VecDeque;

use crate::error::{invalid, Error, Result};
use crate::lattice::{BoxShape, LatticePoint};
use crate::sampling::Configuration;

/// Largest box on which [`diameter`] runs all-pairs BFS.
pub const DIAMETER_GUARD: usize = 4096;

const MAX_DIM: usize = 16;
const UNSEEN: u32 = u32::MAX;

/// The box graph of one configuration.
#[derive(Debug, Clone)]
pub struct BoxGraph {
    config: Configuration,
    shape: BoxShape,
    offsets: Vec<u32>,
    targets: Vec<u32>,
    /// Nearest-neighbour displacements with their linear index shifts.
    stencil: Vec<([i8; MAX_DIM], i64)>,
}

impl BoxGraph {
    pub fn new(config: Configuration) -> Result<Self> {
        let shape = BoxShape::new(config.box_side, config.dim)?;
        if shape.dim > MAX_DIM {
            return invalid(format!("dimension {} exceeds {MAX_DIM}", shape.dim));
        }
        let n = shape.vertex_count();
        let mut degree = vec![0u32; n + 1];
        for &(a, b) in &config.long_edges {
            if a as usize >= n || b as usize >= n {
                return invalid(format!("edge ({a},{b}) lies outside the box"));
            }
            degree[a as usize + 1] += 1;
            degree[b as usize + 1] += 1;
        }
        for i in 0..n {
            degree[i + 1] += degree[i];
        }
        let offsets = degree;
        let mut fill = offsets.clone();
        let mut targets = vec![0u32; offsets[n] as usize];
        for &(a, b) in &config.long_edges {
            targets[fill[a as usize] as usize] = b;
            fill[a as usize] += 1;
            targets[fill[b as usize] as usize] = a;
            fill[b as usize] += 1;
        }
        for v in 0..n {
            targets[offsets[v] as usize..offsets[v + 1] as usize].sort_unstable();
        }

        let mut stencil = Vec::new();
        let total = 3usize.pow(shape.dim as u32);
        for code in 0..total {
            let mut delta = [0i8; MAX_DIM];
            let (mut rest, mut shift) = (code, 0i64);
            for i in (0..shape.dim).rev() {
                delta[i] = (rest % 3) as i8 - 1;
                rest /= 3;
            }
            for &d in &delta[..shape.dim] {
                shift = shift * shape.side as i64 + d as i64;
            }
            if delta.iter().any(|&d| d != 0) {
                stencil.push((delta, shift));
            }
        }

        Ok(BoxGraph {
            config,
            shape,
            offsets,
            targets,
            stencil,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn shape(&self) -> BoxShape {
        self.shape
    }

    pub fn vertex_count(&self) -> usize {
        self.shape.vertex_count()
    }

    pub fn long_neighbors(&self, v: u32) -> &[u32] {
        &self.targets[self.offsets[v as usize] as usize..self.offsets[v as usize + 1] as usize]
    }

    /// Calls `f` on every neighbour of `v`, nearest neighbours first.
    pub fn for_each_neighbor(&self, v: u32, mut f: impl FnMut(u32)) {
        let side = self.shape.side as i64;
        if self.shape.dim == 1 {
            if v > 0 {
                f(v - 1);
            }
            if (v as i64) + 1 < side {
                f(v + 1);
            }
        } else {
            let mut coords = [0i64; MAX_DIM];
            self.shape.coords_into(v, &mut coords[..self.shape.dim]);
            'stencil: for (delta, shift) in &self.stencil {
                for i in 0..self.shape.dim {
                    let c = coords[i] + delta[i] as i64;
                    if c < 0 || c >= side {
                        continue 'stencil;
                    }
                }
                f((v as i64 + shift) as u32);
            }
        }
        for &w in self.long_neighbors(v) {
            f(w);
        }
    }

    fn index(&self, p: &LatticePoint) -> Result<u32> {
        self.shape
            .index_of(p)
            .ok_or_else(|| Error::InvalidInput(format!("point {:?} lies outside the box", p.0)))
    }
}

/// Hop distances from one source to every vertex of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub source: LatticePoint,
    pub dist: Vec<u32>,
}

impl DistanceField {
    pub fn at(&self, idx: u32) -> u32 {
        self.dist[idx as usize]
    }

    pub fn max(&self) -> u32 {
        self.dist.iter().copied().max().unwrap_or(0)
    }
}

/// Generic BFS over vertices accepted by `allowed`, skipping edges rejected by
/// `edge_ok`. Stops as soon as `stop` holds for a dequeued vertex.
fn bfs(
    g: &BoxGraph,
    sources: &[u32],
    allowed: impl Fn(u32) -> bool,
    edge_ok: impl Fn(u32, u32) -> bool,
    stop: impl Fn(u32) -> bool,
    dist: &mut [u32],
) -> Option<u32> {
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s as usize] == UNSEEN {
            dist[s as usize] = 0;
            queue.push_back(s);
        }
    }
    while let Some(v) = queue.pop_front() {
        if stop(v) {
            return Some(v);
        }
        let next = dist[v as usize] + 1;
        g.for_each_neighbor(v, |w| {
            if dist[w as usize] == UNSEEN && allowed(w) && edge_ok(v, w) {
                dist[w as usize] = next;
                queue.push_back(w);
            }
        });
    }
    None
}

pub fn bfs_distance(g: &BoxGraph, source: &LatticePoint) -> Result<DistanceField> {
    let s = g.index(source)?;
    Ok(DistanceField {
        source: source.clone(),
        dist: bfs_from_index(g, s),
    })
}

pub fn bfs_from_index(g: &BoxGraph, source: u32) -> Vec<u32> {
    let mut dist = vec![UNSEEN; g.vertex_count()];
    bfs(g, &[source], |_| true, |_, _| true, |_| false, &mut dist);
    dist
}

/// `D(u, v)` inside the box, stopping the search once `v` is reached.
pub fn distance(g: &BoxGraph, u: u32, v: u32) -> u32 {
    let mut dist = vec![UNSEEN; g.vertex_count()];
    let hit = bfs(g, &[u], |_| true, |_, _| true, |w| w == v, &mut dist);
    debug_assert!(hit.is_some(), "box graph is connected");
    dist[v as usize]
}

/// `D_A(u, v)`: distance using only vertices for which `allowed` holds.
///
/// Returns `None` when `v` is unreachable or either endpoint is excluded.
pub fn restricted_distance(
    g: &BoxGraph,
    u: u32,
    v: u32,
    allowed: impl Fn(u32) -> bool,
) -> Option<u32> {
    if !allowed(u) || !allowed(v) {
        return None;
    }
    let mut dist = vec![UNSEEN; g.vertex_count()];
    bfs(g, &[u], allowed, |_, _| true, |w| w == v, &mut dist).map(|_| dist[v as usize])
}

/// Largest distance between two vertices of the box.
pub fn diameter(g: &BoxGraph) -> Result<u32> {
    let n = g.vertex_count();
    if n > DIAMETER_GUARD {
        return Err(Error::Capacity(format!(
            "diameter needs all-pairs BFS; {n} vertices exceed the guard of {DIAMETER_GUARD}"
        )));
    }
    let mut dist = vec![UNSEEN; n];
    let mut best = 0;
    for s in 0..n as u32 {
        dist.fill(UNSEEN);
        bfs(g, &[s], |_| true, |_, _| true, |_| false, &mut dist);
        best = best.max(dist.iter().copied().max().unwrap_or(0));
    }
    Ok(best)
}

/// `D*(A, B)`: distance from `a` to `b` after every edge joining `a` to `b` is removed.
///
/// `None` encodes an unreachable target set.
pub fn indirect_distance(g: &BoxGraph, a: &[u32], b: &[u32]) -> Result<Option<u32>> {
    let n = g.vertex_count();
    if a.is_empty() || b.is_empty() {
        return invalid("indirect distance needs non-empty vertex sets");
    }
    let mut tag = vec![0u8; n];
    for &x in a {
        if x as usize >= n {
            return invalid(format!("vertex {x} lies outside the box"));
        }
        tag[x as usize] = 1;
    }
    for &y in b {
        if y as usize >= n {
            return invalid(format!("vertex {y} lies outside the box"));
        }
        if tag[y as usize] == 1 {
            return invalid(format!("vertex {y} lies in both sets"));
        }
        tag[y as usize] = 2;
    }
    let mut dist = vec![UNSEEN; n];
    let hit = bfs(
        g,
        a,
        |_| true,
        |v, w| tag[v as usize] | tag[w as usize] != 3,
        |w| tag[w as usize] == 2,
        &mut dist,
    );
    Ok(hit.map(|w| dist[w as usize]))
}

/// Interior vertices `w` of a `d = 1` box not straddled by any edge `u < w < v`.
pub fn cut_points(g: &BoxGraph) -> Result<Vec<u32>> {
    if g.shape.dim != 1 {
        return invalid("cut points are defined for d = 1 only");
    }
    let n = g.shape.side;
    let mut cover = vec![0i64; n + 1];
    for &(u, v) in &g.config.long_edges {
        cover[u as usize + 1] += 1;
        cover[v as usize] -= 1;
    }
    let mut out = Vec::new();
    let mut running = 0;
    for w in 0..n.saturating_sub(1) {
        running += cover[w];
        if w >= 1 && running == 0 {
            out.push(w as u32);
        }
    }
    Ok(out)
}

pub fn count_cut_points(g: &BoxGraph) -> Result<u64> {
    Ok(cut_points(g)?.len() as u64)
}

/// Expected number of cut points of the `n`-box in `d = 1`:
/// `Σ_{w=1}^{n−2} ((w+1)(n−w)/n)^{−β}`.
pub fn cutpoint_mean_exact(n: usize, beta: f64) -> Result<f64> {
    if n < 3 {
        return invalid(format!("cut points need n >= 3, got {n}"));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return invalid(format!("beta must be finite and non-negative, got {beta}"));
    }
    let nf = n as f64;
    Ok((1..n - 1)
        .map(|w| {
            let w = w as f64;
            ((w + 1.0) * (nf - w) / nf).powf(-beta)
        })
        .sum())
}

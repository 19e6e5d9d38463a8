//! Lattice points, displacements and finite boxes `{0, .., n-1}^d`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A vertex of `Z^d`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticePoint(coords)
    }

    pub fn origin(dim: usize) -> Self {
        LatticePoint(vec![0; dim])
    }

    /// The point `c * (1, .., 1)`.
    pub fn diagonal(dim: usize, c: i64) -> Self {
        LatticePoint(vec![c; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn displacement_to(&self, other: &LatticePoint) -> Displacement {
        Displacement::new(other.0.iter().zip(&self.0).map(|(b, a)| b - a).collect())
    }

    pub fn inf_distance(&self, other: &LatticePoint) -> u64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }
}

impl From<i64> for LatticePoint {
    fn from(x: i64) -> Self {
        LatticePoint(vec![x])
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(v: Vec<i64>) -> Self {
        LatticePoint(v)
    }
}

/// `v - u` for a pair of lattice points.
///
/// The canonical form takes absolute values and sorts them ascending, which is
/// invariant under the reflections and coordinate permutations that leave the
/// Euclidean norm (and hence the kernel) unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Displacement {
    delta: Vec<i64>,
    canonical: bool,
}

impl Displacement {
    pub fn new(delta: Vec<i64>) -> Self {
        Displacement {
            delta,
            canonical: false,
        }
    }

    pub fn delta(&self) -> &[i64] {
        &self.delta
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical
    }

    pub fn canonical(&self) -> Displacement {
        if self.canonical {
            return self.clone();
        }
        let mut delta: Vec<i64> = self.delta.iter().map(|x| x.abs()).collect();
        delta.sort_unstable();
        Displacement {
            delta,
            canonical: true,
        }
    }

    pub fn inf_norm(&self) -> u64 {
        self.delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.delta
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.delta.iter().all(|&x| x == 0)
    }
}

/// The box `{0, .., side-1}^dim`, with row-major linear vertex indices
/// (coordinate 0 varies slowest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxShape {
    pub side: usize,
    pub dim: usize,
}

impl BoxShape {
    pub fn new(side: usize, dim: usize) -> Result<Self> {
        if side == 0 {
            return invalid("box side must be positive");
        }
        if dim == 0 {
            return invalid("dimension must be positive");
        }
        let vertices = (side as u128).checked_pow(dim as u32);
        match vertices {
            Some(v) if v <= u32::MAX as u128 => Ok(BoxShape { side, dim }),
            _ => invalid(format!("box {side}^{dim} has too many vertices")),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn contains(&self, p: &LatticePoint) -> bool {
        p.dim() == self.dim && p.0.iter().all(|&x| x >= 0 && (x as usize) < self.side)
    }

    pub fn index_of(&self, p: &LatticePoint) -> Option<u32> {
        if !self.contains(p) {
            return None;
        }
        let mut idx = 0usize;
        for &x in &p.0 {
            idx = idx * self.side + x as usize;
        }
        Some(idx as u32)
    }

    pub fn point_of(&self, idx: u32) -> LatticePoint {
        let mut coords = vec![0i64; self.dim];
        let mut rest = idx as usize;
        for c in coords.iter_mut().rev() {
            *c = (rest % self.side) as i64;
            rest /= self.side;
        }
        LatticePoint(coords)
    }

    /// Writes the coordinates of `idx` into `out` without allocating.
    pub fn coords_into(&self, idx: u32, out: &mut [i64]) {
        let mut rest = idx as usize;
        for c in out.iter_mut().rev() {
            *c = (rest % self.side) as i64;
            rest /= self.side;
        }
    }

    pub fn inf_distance(&self, a: u32, b: u32) -> u64 {
        if self.dim == 1 {
            return (a as i64 - b as i64).unsigned_abs();
        }
        let (mut ra, mut rb) = (a as usize, b as usize);
        let mut best = 0u64;
        for _ in 0..self.dim {
            let d = ((ra % self.side) as i64 - (rb % self.side) as i64).unsigned_abs();
            best = best.max(d);
            ra /= self.side;
            rb /= self.side;
        }
        best
    }

    /// Index of the corner `(side-1) * (1, .., 1)`.
    pub fn far_corner(&self) -> u32 {
        (self.vertex_count() - 1) as u32
    }
}

/// Visits every displacement `delta` with `lo <= ||delta||_inf <= hi` whose first
/// non-zero coordinate is positive, i.e. one representative of each `{delta, -delta}`.
/// Coordinates are bounded by `side - 1` in absolute value.
pub(crate) fn for_each_half_displacement(
    dim: usize,
    side: usize,
    lo: u64,
    hi: u64,
    mut visit: impl FnMut(&[i64]),
) {
    let max = (side as i64 - 1).min(hi.min(i64::MAX as u64) as i64);
    if max < 1 || lo > hi {
        return;
    }
    let mut delta = vec![-max; dim];
    loop {
        let inf = delta.iter().map(|x| x.unsigned_abs()).max().unwrap_or(0);
        let first_nonzero = delta.iter().find(|&&x| x != 0).copied().unwrap_or(0);
        if first_nonzero > 0 && inf >= lo && inf <= hi {
            visit(&delta);
        }
        // odometer increment
        let mut i = dim;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if delta[i] < max {
                delta[i] += 1;
                break;
            }
            delta[i] = -max;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_sorts_absolute_values() {
        let d = Displacement::new(vec![-3, 1, -2]);
        let c = d.canonical();
        assert!(c.is_canonical());
        assert_eq!(c.delta(), &[1, 2, 3]);
        assert_eq!(d.inf_norm(), 3);
    }

    #[test]
    fn box_index_round_trip() {
        let b = BoxShape::new(5, 3).unwrap();
        for idx in 0..b.vertex_count() as u32 {
            let p = b.point_of(idx);
            assert_eq!(b.index_of(&p), Some(idx));
        }
        assert_eq!(b.point_of(b.far_corner()), LatticePoint::diagonal(3, 4));
        assert_eq!(b.index_of(&LatticePoint::new(vec![5, 0, 0])), None);
    }

    #[test]
    fn inf_distance_matches_points() {
        let b = BoxShape::new(7, 2).unwrap();
        for a in 0..49u32 {
            for c in 0..49u32 {
                assert_eq!(
                    b.inf_distance(a, c),
                    b.point_of(a).inf_distance(&b.point_of(c))
                );
            }
        }
    }

    #[test]
    fn half_displacements_cover_each_unordered_pair_once() {
        // In a box of side 5, d = 2, count displacements with inf-norm >= 2.
        let mut seen = Vec::new();
        for_each_half_displacement(2, 5, 2, u64::MAX, |d| seen.push(d.to_vec()));
        for d in &seen {
            let neg: Vec<i64> = d.iter().map(|x| -x).collect();
            assert!(!seen.contains(&neg));
        }
        // all of [-4,4]^2 minus [-1,1]^2, halved
        assert_eq!(seen.len(), (81 - 9) / 2);
    }
}

//! Adaptive tensor-product Gauss–Legendre cubature on axis-aligned boxes.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

const LOW_ORDER: usize = 7;
const HIGH_ORDER: usize = 12;
const MAX_BOXES: usize = 200_000;

struct Rules {
    low: Vec<(f64, f64)>,
    high: Vec<(f64, f64)>,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let make = |n: usize| {
            GaussLegendre::new(NonZeroUsize::new(n).unwrap())
                .as_node_weight_pairs()
                .to_vec()
        };
        Rules {
            low: make(LOW_ORDER),
            high: make(HIGH_ORDER),
        }
    })
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Cubature {
    pub value: f64,
    /// Sum of per-box `|high - low|` differences over accepted boxes.
    pub error: f64,
}

fn tensor_rule(
    rule: &[(f64, f64)],
    lo: &[f64],
    hi: &[f64],
    f: &impl Fn(&[f64]) -> f64,
    point: &mut [f64],
) -> f64 {
    let dim = lo.len();
    let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b + a)).collect();
    let jac: f64 = half.iter().product();
    let q = rule.len();
    let mut idx = vec![0usize; dim];
    let mut sum = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..dim {
            let (x, wk) = rule[idx[k]];
            point[k] = mid[k] + half[k] * x;
            w *= wk;
        }
        sum += w * f(point);
        let mut k = dim;
        loop {
            if k == 0 {
                return sum * jac;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < q {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Integrates `f` over the box `[lo, hi]` to absolute tolerance `tol`.
///
/// Each candidate box is accepted when the 7- and 12-point tensor rules agree to
/// within its volume share of `tol`; otherwise it is bisected along every axis.
pub fn integrate(
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    f: impl Fn(&[f64]) -> f64,
) -> Result<Cubature> {
    assert_eq!(lo.len(), hi.len());
    let dim = lo.len();
    let rules = rules();
    let total_volume: f64 = lo.iter().zip(hi).map(|(a, b)| b - a).product();
    let mut point = vec![0.0; dim];
    let mut stack = vec![(lo.to_vec(), hi.to_vec())];
    let mut value = 0.0;
    let mut error = 0.0;
    let mut processed = 0usize;
    while let Some((blo, bhi)) = stack.pop() {
        processed += 1;
        let coarse = tensor_rule(&rules.low, &blo, &bhi, &f, &mut point);
        let fine = tensor_rule(&rules.high, &blo, &bhi, &f, &mut point);
        let diff = (fine - coarse).abs();
        let volume: f64 = blo.iter().zip(&bhi).map(|(a, b)| b - a).product();
        let share = tol * volume / total_volume;
        if diff <= share || processed + stack.len() >= MAX_BOXES {
            value += fine;
            error += diff;
            if processed + stack.len() >= MAX_BOXES && diff > share {
                // drain remaining boxes so the partial estimate covers the domain
                for (rlo, rhi) in stack.drain(..) {
                    value += tensor_rule(&rules.high, &rlo, &rhi, &f, &mut point);
                }
                return Err(Error::Numeric {
                    message: format!("cubature did not reach tolerance {tol:e}"),
                    partial: value,
                    error: f64::NAN,
                });
            }
            continue;
        }
        // bisect every axis
        for child in 0..(1usize << dim) {
            let mut clo = blo.clone();
            let mut chi = bhi.clone();
            for k in 0..dim {
                let m = 0.5 * (blo[k] + bhi[k]);
                if child >> k & 1 == 0 {
                    chi[k] = m;
                } else {
                    clo[k] = m;
                }
            }
            stack.push((clo, chi));
        }
    }
    Ok(Cubature { value, error })
}

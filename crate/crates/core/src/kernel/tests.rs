use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use proptest::prelude::*;

use super::*;

fn p1(x: i64) -> LatticePoint {
    LatticePoint::from(x)
}

/// ∬_{[0,1]²} (k + s − t)^{−2} ds dt by nested Gauss–Legendre.
fn brute_1d(k: f64) -> f64 {
    let gl = GaussLegendre::new(NonZeroUsize::new(30).unwrap());
    gl.integrate(0.0, 1.0, |t| gl.integrate(0.0, 1.0, |s| (k + s - t).powi(-2)))
}

/// Composite tensor Gauss–Legendre over the full 4-dimensional box pair in d = 2.
fn brute_2d(delta: [f64; 2]) -> f64 {
    let rule = GaussLegendre::new(NonZeroUsize::new(12).unwrap());
    let panels = 2;
    let mut nodes = Vec::new();
    for p in 0..panels {
        let a = p as f64 / panels as f64;
        let h = 0.5 / panels as f64;
        for &(x, w) in rule.as_node_weight_pairs() {
            nodes.push((a + h * (x + 1.0), w * h));
        }
    }
    let mut sum = 0.0;
    for &(x0, w0) in &nodes {
        for &(x1, w1) in &nodes {
            for &(y0, w2) in &nodes {
                for &(y1, w3) in &nodes {
                    let a = delta[0] + y0 - x0;
                    let b = delta[1] + y1 - x1;
                    let r2 = a * a + b * b;
                    sum += w0 * w1 * w2 * w3 / (r2 * r2);
                }
            }
        }
    }
    sum
}

#[test]
fn closed_form_matches_brute_force_oracle() {
    for k in 2..=50u64 {
        let oracle = brute_1d(k as f64);
        assert!((closed_form_1d(k) - oracle).abs() < 1e-12, "k={k}");
    }
}

#[test]
fn closed_form_matches_adaptive_quadrature() {
    let kernel = Kernel::new(1);
    for k in 2..=50i64 {
        let q = kernel.quadrature(&[k]).unwrap();
        assert!(!q.is_exact());
        assert!(q.quad_error() <= QUAD_TOL);
        assert!((q.value() - closed_form_1d(k as u64)).abs() < 1e-10, "k={k}");
    }
}

#[test]
fn two_dimensional_quadrature_matches_full_box_pair_oracle() {
    let kernel = Kernel::new(2);
    for delta in [[2i64, 0], [2, 2], [3, 1], [5, 4]] {
        let kv = kernel.of_displacement(&delta).unwrap();
        assert!(kv.quad_error() <= QUAD_TOL);
        let oracle = brute_2d([delta[0] as f64, delta[1] as f64]);
        assert!(
            (kv.value() - oracle).abs() < 1e-9,
            "{delta:?}: {} vs {oracle}",
            kv.value()
        );
    }
}

#[test]
fn kernel_examples() {
    let k = Kernel::new(1);
    let j2 = k.integral(&p1(0), &p1(2)).unwrap();
    assert!(j2.is_exact());
    assert!((j2.value() - 0.287_682_07).abs() < 1e-8);
    assert!((j2.value() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!(k.integral(&p1(3), &p1(4)).unwrap().is_infinite());
    let j10 = k.integral(&p1(0), &p1(10)).unwrap().value();
    assert!(j10 >= 1.0 / 121.0 && j10 <= 1.0 / 81.0);
    assert!((j10 - 0.010_050_34).abs() < 1e-8);
    assert!(matches!(k.integral(&p1(4), &p1(4)), Err(Error::InvalidInput(_))));
}

#[test]
fn connection_prob_examples() {
    let k = Kernel::new(1);
    assert!((k.connection_prob(1.0, &p1(0), &p1(2)).unwrap() - 0.25).abs() < 1e-15);
    assert_eq!(k.connection_prob(0.0, &p1(0), &p1(7)).unwrap(), 0.0);
    assert_eq!(k.connection_prob(0.0, &p1(0), &p1(1)).unwrap(), 1.0);
    let p = k.connection_prob(0.5, &p1(0), &p1(5)).unwrap();
    assert!((p - (1.0 - (24.0f64 / 25.0).sqrt())).abs() < 1e-15);
    assert!((p - 0.020_204_10).abs() < 1e-8);
    assert!(k.connection_prob(-1.0, &p1(0), &p1(5)).is_err());
    assert!(k.connection_prob(1.0, &p1(5), &p1(5)).is_err());
}

#[test]
fn derivative_examples() {
    let k = Kernel::new(1);
    let d0 = k.connection_prob_derivative(0.0, &p1(0), &p1(2)).unwrap();
    assert!((d0 - 0.287_682_07).abs() < 1e-8);
    let d1 = k.connection_prob_derivative(1.0, &p1(0), &p1(2)).unwrap();
    assert!((d1 - 0.75 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((d1 - 0.215_761_55).abs() < 1e-8);
    assert!(k.connection_prob_derivative(1.0, &p1(0), &p1(1)).is_err());
}

#[test]
fn derivative_agrees_with_central_difference() {
    let k = Kernel::new(1);
    let h = 1e-6;
    for dist in [2, 3, 5, 17, 200] {
        for beta in [0.1, 0.5, 1.0, 3.0] {
            let a = k.connection_prob_derivative(beta, &p1(0), &p1(dist)).unwrap();
            let fd = (k.connection_prob(beta + h, &p1(0), &p1(dist)).unwrap()
                - k.connection_prob(beta - h, &p1(0), &p1(dist)).unwrap())
                / (2.0 * h);
            assert!(((a - fd) / a).abs() < 1e-8, "dist={dist} beta={beta}");
        }
    }
}

#[test]
fn block_sum_examples() {
    let k = Kernel::new(1);
    let j2 = closed_form_1d(2);
    let direct = closed_form_1d(3) + 2.0 * closed_form_1d(4) + closed_form_1d(5);
    assert!((direct - j2).abs() < 1e-15);
    assert!((k.block_kernel_sum(&p1(0), &p1(2), 2).unwrap() - j2).abs() < 1e-12);
    assert_eq!(
        k.block_kernel_sum(&p1(0), &p1(3), 1).unwrap(),
        closed_form_1d(3)
    );
    assert!((k.block_kernel_sum(&p1(0), &p1(2), 4).unwrap() - j2).abs() < 1e-12);
    assert!(k.block_kernel_sum(&p1(0), &p1(1), 2).is_err());
}

#[test]
fn self_similarity_in_one_dimension() {
    let k = Kernel::new(1);
    for (u, v) in [(0, 2), (0, 3), (-4, 5), (7, 19)] {
        let unscaled = k.integral(&p1(u), &p1(v)).unwrap().value();
        for n in [1, 2, 4, 8] {
            let b = k.block_kernel_sum(&p1(u), &p1(v), n).unwrap();
            assert!((b - unscaled).abs() < 1e-10, "({u},{v}) n={n}");
        }
    }
}

#[test]
fn self_similarity_in_two_dimensions() {
    let k = Kernel::new(2);
    let u = LatticePoint::new(vec![0, 0]);
    let v = LatticePoint::new(vec![2, 1]);
    let unscaled = k.integral(&u, &v).unwrap().value();
    let b = k.block_kernel_sum(&u, &v, 2).unwrap();
    // sixteen quadrature terms, each within 1e-10
    assert!((b - unscaled).abs() < 2e-9, "{b} vs {unscaled}");
}

#[test]
fn expected_degree_examples() {
    let k = Kernel::new(1);
    let d0 = k.expected_degree(0.0).unwrap();
    assert_eq!(d0.value, 2.0);
    assert_eq!(d0.error_bound, 0.0);
    let d1 = k.expected_degree(1.0).unwrap();
    let exact = 2.0 + 2.0 * (std::f64::consts::PI.powi(2) / 6.0 - 1.0);
    assert!((d1.value - exact).abs() <= d1.error_bound + 1e-9);
    assert!(d1.error_bound < 2.0e-6);
    assert!((d1.value - 3.289_87).abs() < 1e-4);
    let d2 = k.expected_degree(2.0).unwrap();
    assert!(d2.value > d1.value);
}

#[test]
fn expected_degree_two_dimensions_brackets_nearest_neighbours() {
    let k = Kernel::new(2);
    let d = k.expected_degree(0.1).unwrap();
    assert!(d.value > 8.0);
    assert!(d.error_bound < 1e-3);
    // p ≤ βJ ≤ β(2/r)^4 per point bounds the long-range part
    assert!(d.value < 8.0 + 0.1 * 16.0 * 20.0);
}

#[test]
fn cache_returns_bit_identical_values() {
    let k = Kernel::new(2);
    let a = k.of_displacement(&[3, -2]).unwrap();
    let b = k.of_displacement(&[-2, 3]).unwrap();
    let c = k.of_displacement(&[2, 3]).unwrap();
    assert_eq!(a.value().to_bits(), b.value().to_bits());
    assert_eq!(a.value().to_bits(), c.value().to_bits());
    assert_eq!(k.cache_len(), 1);
}

#[test]
fn cache_csv_round_trip() {
    let k = Kernel::new(2);
    k.of_displacement(&[2, 0]).unwrap();
    k.of_displacement(&[4, 3]).unwrap();
    let dir = std::env::temp_dir().join(format!("perclr-cache-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("kernel.csv");
    k.save_cache_csv(&path).unwrap();
    let fresh = Kernel::new(2);
    assert_eq!(fresh.load_cache_csv(&path).unwrap(), 2);
    assert_eq!(
        fresh.of_displacement(&[3, 4]).unwrap().value().to_bits(),
        k.of_displacement(&[4, 3]).unwrap().value().to_bits()
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn concurrent_readers_agree() {
    use rayon::prelude::*;
    let k = Kernel::new(2);
    let values: Vec<u64> = (0..64)
        .into_par_iter()
        .map(|i| k.of_displacement(&[3 + (i % 2), 2]).unwrap().value().to_bits())
        .collect();
    let first = values[0];
    assert!(values.iter().step_by(2).all(|&v| v == first));
}

fn check_bounds(kernel: &Kernel, delta: &[i64], beta: f64) {
    let dim = delta.len() as i32;
    let sqrt_d = (dim as f64).sqrt();
    let disp = Displacement::new(delta.to_vec());
    let norm = disp.euclidean_norm();
    let inf = disp.inf_norm() as f64;
    let j = kernel.finite(delta).unwrap();
    assert!(j > 0.0 && j <= 1.0, "J out of (0,1]: {j}");
    let p = prob_from_kernel(beta, j);
    let dp = prob_derivative_from_kernel(beta, j);
    let tol = 1e-12 * j;
    if norm >= sqrt_d {
        let lo = (norm + sqrt_d).powi(-2 * dim);
        let hi = (norm - sqrt_d).powi(-2 * dim);
        assert!(lo <= j + tol && j <= hi + tol, "J bracket {delta:?}");
        assert!((-beta).exp() * lo <= dp + tol && dp <= hi + tol, "p' bracket {delta:?}");
        assert!(p <= beta * hi + tol, "p upper {delta:?}");
    }
    assert!(p >= (beta * j / 2.0).min(0.5) - tol, "jensen {delta:?}");
    assert!(p <= beta * j + tol);
    assert!(p <= 4f64.powi(dim) * beta / inf.powi(2 * dim) + tol, "inf-norm bound {delta:?}");
}

proptest! {
    #[test]
    fn one_dimensional_bounds(k in 2i64..10_000, beta in 0.0f64..8.0) {
        let kernel = Kernel::new(1);
        check_bounds(&kernel, &[k], beta);
    }

    #[test]
    fn two_dimensional_bounds(a in -60i64..60, b in 2i64..60, beta in 0.0f64..8.0) {
        let kernel = Kernel::shared(2);
        check_bounds(&kernel, &[b, a], beta);
    }
}

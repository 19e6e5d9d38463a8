use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::*;
use crate::kernel::closed_form_1d;

fn p1(beta: f64, k: u64) -> f64 {
    prob_from_kernel(beta, closed_form_1d(k))
}

fn within_3_sigma(freq: f64, p: f64, trials: f64) -> bool {
    (freq - p).abs() <= 3.0 * (p * (1.0 - p) / trials).sqrt()
}

#[test]
fn beta_zero_gives_no_long_edges() {
    for n in [2, 5, 40] {
        assert!(sample_direct(MeasureSpec::plain(0.0), n, 1, 1, 0).unwrap().long_edges.is_empty());
        assert!(sample_fast(MeasureSpec::plain(0.0), n, 1, 1, 0).unwrap().long_edges.is_empty());
        assert!(sample_continuum(0.0, n, 1, 1, 0).unwrap().long_edges.is_empty());
    }
    assert!(sample_fast(MeasureSpec::plain(0.0), 9, 2, 1, 0).unwrap().long_edges.is_empty());
    assert!(sample_fast(MeasureSpec::plain(0.0), 100_000, 1, 1, 0).unwrap().long_edges.is_empty());
}

#[test]
fn direct_is_reproducible_and_respects_the_box() {
    let spec = MeasureSpec::plain(2.0);
    let a = sample_direct(spec, 20, 2, 99, 3).unwrap();
    let b = sample_direct(spec, 20, 2, 99, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, sample_direct(spec, 20, 2, 99, 4).unwrap());
    let shape = a.shape();
    for &(u, v) in &a.long_edges {
        assert!(u < v && (v as usize) < shape.vertex_count());
        assert!(shape.inf_distance(u, v) >= 2);
    }
    assert!(a.long_edges.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn direct_capacity_guard() {
    assert!(matches!(
        sample_direct(MeasureSpec::plain(1.0), 20_000, 1, 0, 0),
        Err(Error::Capacity(_))
    ));
    assert!(sample_fast(MeasureSpec::plain(1.0), 20_000, 1, 0, 0).is_ok());
}

#[test]
fn direct_edge_frequency_matches_probability() {
    let replicas = 100_000u64;
    let hits = (0..replicas)
        .filter(|&r| sample_direct(MeasureSpec::plain(1.0), 3, 1, 11, r).unwrap().has_edge(0, 2))
        .count();
    let freq = hits as f64 / replicas as f64;
    assert!((freq - 0.25).abs() < 0.004, "freq {freq}");
}

#[test]
fn mixed_measure_uses_length_classes() {
    let spec = MeasureSpec::mixed(0.0, 1.0, 2);
    let replicas = 20_000u64;
    let mut len4 = 0usize;
    for r in 0..replicas {
        let c = sample_direct(spec, 8, 1, 5, r).unwrap();
        for &(a, b) in &c.long_edges {
            assert!(b - a >= 4, "short edge ({a},{b}) under beta1 = 0");
        }
        len4 += c.long_edges.iter().filter(|(a, b)| b - a == 4).count();
    }
    // four edges of length 4 in the 8-box
    let trials = 4.0 * replicas as f64;
    assert!(within_3_sigma(len4 as f64 / trials, p1(1.0, 4), trials));
}

#[test]
fn mixed_boundary_levels_coincide_with_plain_measures() {
    // P_{β₁≤1}^{β₂>1} = P_{β₂}
    for r in 0..20 {
        assert_eq!(
            sample_fast(MeasureSpec::mixed(0.3, 1.7, 1), 64, 1, 8, r).unwrap().long_edges,
            sample_fast(MeasureSpec::plain(1.7), 64, 1, 8, r).unwrap().long_edges
        );
        // P_{β₁≤6}^{β₂>6} on the 2^6 box = P_{β₁}
        assert_eq!(
            sample_fast(MeasureSpec::mixed(0.3, 1.7, 6), 64, 1, 8, r).unwrap().long_edges,
            sample_fast(MeasureSpec::plain(0.3), 64, 1, 8, r).unwrap().long_edges
        );
    }
    let m = MeasureSpec::mixed(0.3, 1.7, 3);
    assert_eq!(m.beta_for_length(7), 0.3);
    assert_eq!(m.beta_for_length(8), 1.7);
    assert_eq!(MeasureSpec::mixed(0.3, 1.7, 70).beta_for_length(u64::MAX), 0.3);
}

#[test]
fn fast_sampler_per_distance_counts_pass_chi_square() {
    let (n, replicas) = (64usize, 10_000u64);
    let mut counts = vec![0u64; n];
    for r in 0..replicas {
        for &(a, b) in &sample_fast(MeasureSpec::plain(1.0), n, 1, 2024, r).unwrap().long_edges {
            counts[(b - a) as usize] += 1;
        }
    }
    let mut stat = 0.0;
    for k in 2..n {
        let trials = (replicas * (n - k) as u64) as f64;
        let p = p1(1.0, k as u64);
        let mean = trials * p;
        stat += (counts[k] as f64 - mean).powi(2) / (mean * (1.0 - p));
    }
    let dist = ChiSquared::new((n - 2) as f64).unwrap();
    let p_value = 1.0 - dist.cdf(stat);
    assert!(p_value > 0.001, "chi2 {stat}, p = {p_value}");
}

#[test]
fn fast_sampler_mean_edge_count() {
    let n = 1024usize;
    // p(1, k) = 1/k² exactly in d = 1
    let mean: f64 = (2..n).map(|k| (n - k) as f64 / (k * k) as f64).sum();
    let var: f64 = (2..n)
        .map(|k| {
            let p = 1.0 / (k * k) as f64;
            (n - k) as f64 * p * (1.0 - p)
        })
        .sum();
    let replicas = 2000u64;
    let total: usize = (0..replicas)
        .map(|r| sample_fast(MeasureSpec::plain(1.0), n, 1, 77, r).unwrap().long_edges.len())
        .sum();
    let observed = total as f64 / replicas as f64;
    assert!(
        (observed - mean).abs() <= 3.0 * (var / replicas as f64).sqrt(),
        "{observed} vs {mean}"
    );
}

#[test]
fn fast_sampler_two_dimensions_matches_expected_count() {
    let (n, dim, beta) = (6usize, 2usize, 1.5);
    let shape = BoxShape::new(n, dim).unwrap();
    let kernel = Kernel::shared(dim);
    let (mut mean, mut var) = (0.0, 0.0);
    for a in 0..shape.vertex_count() as u32 {
        for b in a + 1..shape.vertex_count() as u32 {
            if shape.inf_distance(a, b) >= 2 {
                let p = kernel
                    .connection_prob(beta, &shape.point_of(a), &shape.point_of(b))
                    .unwrap();
                mean += p;
                var += p * (1.0 - p);
            }
        }
    }
    let replicas = 4000u64;
    let fast: usize = (0..replicas)
        .map(|r| sample_fast(MeasureSpec::plain(beta), n, dim, 3, r).unwrap().long_edges.len())
        .sum();
    let direct: usize = (0..replicas)
        .map(|r| sample_direct(MeasureSpec::plain(beta), n, dim, 3, r).unwrap().long_edges.len())
        .sum();
    let tol = 3.0 * (var / replicas as f64).sqrt();
    assert!((fast as f64 / replicas as f64 - mean).abs() <= tol);
    assert!((direct as f64 / replicas as f64 - mean).abs() <= tol);
}

#[test]
fn continuum_pair_count_mean_is_half_beta_j() {
    let mut rng = stream_rng(1, 2);
    let (beta, j) = (1.0, closed_form_1d(2));
    let draws = 100_000;
    let mut total = 0u64;
    for _ in 0..draws {
        total += continuum_pair_counts(beta, j, &mut rng)[0];
    }
    let lambda = beta * j / 2.0;
    let mean = total as f64 / draws as f64;
    assert!((mean - lambda).abs() <= 3.0 * (lambda / draws as f64).sqrt());
}

#[test]
fn continuum_marginal_matches_plain_measure() {
    let replicas = 100_000u64;
    let closed = (0..replicas)
        .filter(|&r| !sample_continuum(1.0, 3, 1, 21, r).unwrap().has_edge(0, 2))
        .count();
    let freq = closed as f64 / replicas as f64;
    assert!((freq - 0.75).abs() < 0.004, "freq {freq}");
}

#[test]
fn continuum_marginals_on_displacement_grid() {
    let (n, beta, replicas) = (7usize, 2.0, 20_000u64);
    let mut hits = vec![0u64; n];
    for r in 0..replicas {
        let c = sample_continuum(beta, n, 1, 4, r).unwrap();
        for k in 2..n as u32 {
            if c.has_edge(0, k) {
                hits[k as usize] += 1;
            }
        }
    }
    for k in 2..n {
        let p = p1(beta, k as u64);
        assert!(
            within_3_sigma(hits[k] as f64 / replicas as f64, p, replicas as f64),
            "k={k}"
        );
    }
}

#[test]
fn coupled_sweep_is_nested() {
    for r in 0..50 {
        let cs = coupled_sweep(&[0.0, 0.25, 0.5, 1.0, 3.0], 300, 1, 9, r).unwrap();
        assert!(cs[0].long_edges.is_empty());
        for w in cs.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
        }
        assert_eq!(
            cs.last().unwrap().long_edges,
            sample_fast(MeasureSpec::plain(3.0), 300, 1, 9, r).unwrap().long_edges
        );
    }
    let cs = coupled_sweep(&[0.5, 2.0], 7, 2, 1, 1).unwrap();
    assert!(cs[0].is_subset_of(&cs[1]));
    assert!(coupled_sweep(&[1.0, 0.5], 10, 1, 0, 0).is_err());
    assert!(coupled_sweep(&[], 10, 1, 0, 0).is_err());
}

#[test]
fn coupled_sweep_marginals() {
    let (n, replicas) = (256usize, 10_000u64);
    let mut counts = [[0u64; 6]; 2];
    for r in 0..replicas {
        let cs = coupled_sweep(&[0.5, 1.0], n, 1, 31, r).unwrap();
        for (i, c) in cs.iter().enumerate() {
            for &(a, b) in &c.long_edges {
                let k = (b - a) as usize;
                if k < 6 {
                    counts[i][k] += 1;
                }
            }
        }
    }
    for (i, beta) in [0.5, 1.0].into_iter().enumerate() {
        for k in 2..6 {
            let trials = (replicas * (n - k) as u64) as f64;
            assert!(
                within_3_sigma(counts[i][k] as f64 / trials, p1(beta, k as u64), trials),
                "beta={beta} k={k}"
            );
        }
    }
}

#[test]
fn chi_augment_with_zero_eps_is_identity() {
    let omega = sample_fast(MeasureSpec::mixed(1.0, 1.0, 4), 128, 1, 2, 0).unwrap();
    let out = chi_augment(&omega, 0.0, 4, 17).unwrap();
    assert_eq!(out.long_edges, omega.long_edges);
    assert_eq!(out.measure, MeasureSpec::mixed(1.0, 1.0, 3));
    assert!(chi_augment(&omega, -0.1, 4, 17).is_err());
    // wrong level
    assert!(chi_augment(&omega, 0.0, 5, 17).is_err());
}

#[test]
fn chi_augment_produces_the_lower_level_law() {
    let (beta, eps, k, n) = (0.5, 0.75, 3u32, 32usize);
    let spec = MeasureSpec::mixed(beta, beta + eps, k);
    let replicas = 20_000u64;
    let mut counts = vec![0u64; n];
    for r in 0..replicas {
        let omega = sample_fast(spec, n, 1, 40, r).unwrap();
        let out = chi_augment(&omega, eps, k, 41).unwrap();
        assert!(omega.is_subset_of(&out));
        for &(a, b) in &out.long_edges {
            counts[(b - a) as usize] += 1;
        }
    }
    // level k−1 = 2: lengths 2,3 at beta, lengths ≥ 4 at beta + eps
    for len in 2..12usize {
        let b = if len < 4 { beta } else { beta + eps };
        let trials = (replicas * (n - len) as u64) as f64;
        assert!(
            within_3_sigma(counts[len] as f64 / trials, p1(b, len as u64), trials),
            "len={len}"
        );
    }
}

#[test]
fn chi_block_touch_probability_respects_bound() {
    let (k, eps, replicas) = (6u32, 0.01, 10_000u64);
    let block = 1usize << k;
    let shape = BoxShape::new(3 * block, 1).unwrap();
    let (lo, hi) = (block as u32, 2 * block as u32);
    let touched = (0..replicas)
        .filter(|&r| {
            sample_chi(shape, eps, k, 123, r)
                .unwrap()
                .iter()
                .any(|&(a, b)| (lo..hi).contains(&a) || (lo..hi).contains(&b))
        })
        .count();
    let freq = touched as f64 / replicas as f64;
    let bound = 32.0 * eps;
    assert!(freq <= bound, "freq {freq} > {bound}");
    // exact: 1 − exp(−ε Σ J) over class edges touching the block
    let mut mass = 0.0;
    for v in lo as i64..hi as i64 {
        for w in 0..(3 * block) as i64 {
            let len = (v - w).unsigned_abs();
            let counted = (lo as i64..hi as i64).contains(&w) && w < v;
            if len >= (block / 2) as u64 && len < block as u64 && !counted {
                mass += closed_form_1d(len);
            }
        }
    }
    let p = -(-eps * mass).exp_m1();
    assert!(within_3_sigma(freq, p, replicas as f64), "{freq} vs {p}");
}

#[test]
fn record_round_trip_and_validation() {
    let c = sample_fast(MeasureSpec::plain(1.0), 9, 2, 5, 1).unwrap();
    let line = c.to_jsonl().unwrap();
    let rec: ConfigurationRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(Configuration::from_record(&rec).unwrap(), c);
    let v: serde_json::Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["measure"]["kind"], "plain");
    let mut bad = rec.clone();
    bad.edges.push([LatticePoint::new(vec![0, 0]), LatticePoint::new(vec![1, 1])]);
    assert!(Configuration::from_record(&bad).is_err());
    let mut outside = rec;
    outside.edges.push([LatticePoint::new(vec![0, 0]), LatticePoint::new(vec![9, 0])]);
    assert!(Configuration::from_record(&outside).is_err());
}

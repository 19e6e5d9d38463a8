use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graphs::{distance, BoxGraph};
use crate::sampling::{sample_fast, MeasureSpec};

fn path3() -> FiniteModel {
    FiniteModel::path_1d(3, vec![(0, 2)]).unwrap()
}

fn p(beta: f64, k: u64) -> f64 {
    prob_from_kernel(beta, closed_form_1d(k))
}

#[test]
fn constant_functional_has_unit_mass() {
    let m = FiniteModel::box_1d(6).unwrap();
    let en = Enumeration::new(&m, &Functional::Constant(1.0)).unwrap();
    for beta in [0.0, 0.4, 1.0, 5.0] {
        assert!((en.expectation(beta).unwrap() - 1.0).abs() < 1e-13);
        assert_eq!(en.russo(beta).unwrap(), 0.0);
    }
}

#[test]
fn three_vertex_path_examples() {
    let d = Functional::Distance { a: 0, b: 2 };
    assert!((exact_expectation(&path3(), &d, 1.0).unwrap() - 1.75).abs() < 1e-15);
    let r = russo_derivative(&path3(), &d, 1.0).unwrap();
    assert!((r + 0.215_761_55).abs() < 1e-8);
    assert!((r + prob_derivative_from_kernel(1.0, closed_form_1d(2))).abs() < 1e-15);
}

#[test]
fn four_vertex_box_matches_hand_enumeration() {
    let m = FiniteModel::box_1d(4).unwrap();
    assert_eq!(m.optional_edges.len(), 3);
    let d = Functional::Distance { a: 0, b: 3 };
    for beta in [0.0, 0.5, 1.0, 2.0] {
        let (p2, p3) = (p(beta, 2), p(beta, 3));
        // D = 1 with {0,3}; otherwise 2 if either length-2 edge is open, else 3
        let shortcut = 1.0 - (1.0 - p2) * (1.0 - p2);
        let oracle = p3 + (1.0 - p3) * (2.0 * shortcut + 3.0 * (1.0 - shortcut));
        let e = exact_expectation(&m, &d, beta).unwrap();
        assert!((e - oracle).abs() < 1e-14, "beta={beta}");
    }
}

#[test]
fn tabulated_distances_match_box_graph_bfs() {
    let n = 7;
    let m = FiniteModel::box_1d(n).unwrap();
    let en = Enumeration::new(&m, &Functional::Distance { a: 0, b: n - 1 }).unwrap();
    let mut config = sample_fast(MeasureSpec::plain(0.0), n, 1, 0, 0).unwrap();
    for mask in (0..m.configuration_count() as u32).step_by(37) {
        config.long_edges = m
            .optional_edges
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, e)| (e.a as u32, e.b as u32))
            .collect();
        config.long_edges.sort_unstable();
        let g = BoxGraph::new(config.clone()).unwrap();
        assert_eq!(en.value(mask), distance(&g, 0, n as u32 - 1) as f64);
    }
}

#[test]
fn russo_signs() {
    let m = FiniteModel::box_1d(6).unwrap();
    let neg_d = Functional::Negated(Box::new(Functional::Distance { a: 0, b: 5 }));
    // {D(0,5) ≤ 2} is increasing in the edge set
    let d_table = Enumeration::new(&m, &Functional::Distance { a: 0, b: 5 }).unwrap();
    let short: Vec<f64> = (0..m.configuration_count() as u32)
        .map(|mask| (d_table.value(mask) <= 2.0) as u8 as f64)
        .collect();
    let indicator = Functional::custom(move |mask| short[mask as usize]);
    for beta in [0.0, 0.1, 0.7, 2.0] {
        assert!(russo_derivative(&m, &neg_d, beta).unwrap() >= 0.0);
        assert!(russo_derivative(&m, &indicator, beta).unwrap() >= 0.0);
    }
}

#[test]
fn edge_indicators_factorize() {
    let m = FiniteModel::box_1d(5).unwrap();
    let picks = [0usize, 3, 5];
    let product = Functional::custom(move |mask| {
        picks.iter().all(|&i| mask >> i & 1 == 1) as u8 as f64
    });
    for beta in [0.3, 1.0, 2.5] {
        let expected: f64 = picks.iter().map(|&i| m.optional_edges[i].prob(beta)).product();
        let e = exact_expectation(&m, &product, beta).unwrap();
        assert!((e - expected).abs() < 1e-15, "beta={beta}");
    }
}

#[test]
fn verify_russo_on_small_models() {
    let d = Functional::Distance { a: 0, b: 2 };
    let rep = verify_russo(&path3(), &d, 1.0, 1e-4).unwrap();
    assert_eq!(rep.scheme, DifferenceScheme::Central);
    assert!(rep.abs_error < 1e-7, "{rep:?}");

    let m = FiniteModel::box_1d(4).unwrap();
    let d = Functional::Distance { a: 0, b: 3 };
    let coarse = verify_russo(&m, &d, 1.0, 0.1).unwrap();
    let fine = verify_russo(&m, &d, 1.0, 0.05).unwrap();
    let ratio = coarse.abs_error / fine.abs_error;
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn forward_difference_at_the_boundary() {
    for n in 3..=8usize {
        let m = FiniteModel::box_1d(n).unwrap();
        let d = Functional::Distance { a: 0, b: n - 1 };
        let rep = verify_russo(&m, &d, 0.0, 1e-4).unwrap();
        assert_eq!(rep.scheme, DifferenceScheme::Forward);
        let expected: f64 = -m
            .optional_edges
            .iter()
            .map(|e| e.prob_derivative(0.0) * ((e.b - e.a) as f64 - 1.0))
            .sum::<f64>();
        assert!((rep.analytic - expected).abs() < 1e-12, "n={n}");
        assert!((rep.analytic - lambda_small_beta_derivative(n as u64).unwrap()).abs() < 1e-12);
        assert!(rep.abs_error < 1e-6, "n={n}: {rep:?}");
    }
}

#[test]
fn small_beta_derivative_examples() {
    let l3 = lambda_small_beta_derivative(3).unwrap();
    assert!((l3 + (4.0f64 / 3.0).ln()).abs() < 1e-15);
    assert!((l3 + 0.287_68).abs() < 1e-5);
    let l4 = lambda_small_beta_derivative(4).unwrap();
    let expected = -(2.0 * (4.0f64 / 3.0).ln() + 2.0 * (9.0f64 / 8.0).ln());
    assert!((l4 - expected).abs() < 1e-15);
    assert!((l4 + 0.810_93).abs() < 1e-5);
    assert!(lambda_small_beta_derivative(2).is_err());
}

#[test]
fn russo_identity_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for case in 0..50 {
        let RandomCase { model, functional } = random_case(&mut rng);
        for beta in [0.3, 1.0, 2.0] {
            let rep = verify_russo(&model, &functional, beta, 1e-4).unwrap();
            assert!(
                rep.abs_error < 1e-6,
                "case {case} {functional:?} beta={beta}: {rep:?}"
            );
        }
    }
}

#[test]
fn derivative_bounds_for_optional_edges() {
    let m = FiniteModel::box_1d(8).unwrap();
    for beta in [0.0, 0.5, 1.0, 3.0] {
        for e in &m.optional_edges {
            let len = (e.b - e.a) as f64;
            let dp = e.prob_derivative(beta);
            assert!((-beta).exp() * (len + 1.0).powi(-2) <= dp);
            assert!(dp <= (len - 1.0).powi(-2));
        }
    }
}

#[test]
fn model_validation_and_guards() {
    assert!(matches!(FiniteModel::box_1d(9), Err(Error::Capacity(_))));
    assert!(FiniteModel::path_1d(4, vec![(0, 1)]).is_err());
    assert!(FiniteModel::path_1d(4, vec![(0, 2), (2, 0)]).is_err());
    assert!(FiniteModel::path_1d(4, vec![(0, 7)]).is_err());
    let pts = vec![LatticePoint::from(0), LatticePoint::from(5)];
    let loose = FiniteModel::new(pts, vec![], vec![(0, 1)]).unwrap();
    assert!(exact_expectation(&loose, &Functional::Distance { a: 0, b: 1 }, 1.0).is_err());
    assert!(exact_expectation(&loose, &Functional::Constant(2.0), 1.0).is_ok());
    assert!(exact_expectation(&path3(), &Functional::Distance { a: 0, b: 3 }, 1.0).is_err());
    assert!(exact_expectation(&path3(), &Functional::Constant(1.0), -1.0).is_err());
    assert!(verify_russo(&path3(), &Functional::Diameter, 1.0, 0.0).is_err());
}

#[test]
fn two_dimensional_model() {
    let pts: Vec<LatticePoint> = [[0, 0], [1, 1], [2, 2], [0, 2]]
        .iter()
        .map(|c| LatticePoint::new(c.to_vec()))
        .collect();
    let m = FiniteModel::new(pts, vec![(0, 1), (1, 2), (1, 3)], vec![(0, 2), (0, 3), (2, 3)])
        .unwrap();
    let d = Functional::Distance { a: 0, b: 2 };
    let j = m.optional_edges[0].j;
    let e = exact_expectation(&m, &d, 1.5).unwrap();
    assert!((e - (2.0 - prob_from_kernel(1.5, j))).abs() < 1e-14);
    assert!(verify_russo(&m, &Functional::Diameter, 1.5, 1e-4).unwrap().abs_error < 1e-7);
}

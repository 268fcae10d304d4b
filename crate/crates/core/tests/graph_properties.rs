use gtvr::graph::{build_topology, spectral_radius_rho, MixingMatrix, TopologyKind};
use gtvr::metrics::consensus_gap_d;
use gtvr::Stacked;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = TopologyKind> {
    prop_oneof![
        Just(TopologyKind::Ring),
        Just(TopologyKind::Path),
        Just(TopologyKind::Complete),
        (0.05f64..=1.0, any::<u64>()).prop_map(|(p_edge, seed)| TopologyKind::Random { p_edge, seed }),
    ]
}

fn dense(w: &MixingMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(w.n(), w.n(), w.as_slice())
}

/// `||W - J/n||_2` from a symmetric eigendecomposition.
fn rho_by_eigen(w: &MixingMatrix) -> f64 {
    let n = w.n();
    let b = dense(w) - DMatrix::from_element(n, n, 1.0 / n as f64);
    b.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn stacked(n: usize, d: usize, data: Vec<f64>) -> Stacked {
    Stacked::from_vec(n, d, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metropolis_is_doubly_stochastic(kind in kind_strategy(), n in 2usize..=12) {
        let t = build_topology(kind, n).unwrap();
        prop_assert!(t.is_connected());
        let w = MixingMatrix::metropolis(&t).unwrap();
        for i in 0..n {
            prop_assert!(w.get(i, i) > 0.0);
            let row: f64 = w.row(i).iter().sum();
            let col: f64 = (0..n).map(|j| w.get(j, i)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
            prop_assert!((col - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert!(w.get(i, j) >= 0.0);
                prop_assert_eq!(w.get(i, j), w.get(j, i));
                if i != j {
                    prop_assert_eq!(w.get(i, j) > 0.0, t.has_edge(i, j));
                }
            }
        }
        prop_assert!(w.rho() >= 0.0 && w.rho() < 1.0);
    }

    #[test]
    fn rho_matches_eigendecomposition(kind in kind_strategy(), n in 2usize..=8) {
        let w = MixingMatrix::metropolis(&build_topology(kind, n).unwrap()).unwrap();
        let expected = rho_by_eigen(&w);
        prop_assert!((w.rho() - expected).abs() <= 1e-9, "power {} eig {}", w.rho(), expected);
        let again = spectral_radius_rho(n, w.as_slice()).unwrap();
        prop_assert_eq!(again, w.rho());
    }

    #[test]
    fn mixing_contracts_disagreement(
        kind in prop_oneof![Just(TopologyKind::Ring), Just(TopologyKind::Path),
            (0.1f64..0.6, any::<u64>()).prop_map(|(p_edge, seed)| TopologyKind::Random { p_edge, seed })],
        n in 3usize..=10,
        d in 1usize..=4,
        seed_data in prop::collection::vec(-100.0f64..100.0, 40),
    ) {
        let w = MixingMatrix::metropolis(&build_topology(kind, n).unwrap()).unwrap();
        prop_assume!(w.rho() > 1e-6);
        let x = stacked(n, d, seed_data[..n * d].to_vec());
        let dev = x.deviation_from_mean();
        let lhs = w.mix(&dev).unwrap().frobenius();
        prop_assert!(lhs <= w.rho() * dev.frobenius() * (1.0 + 1e-10));
    }

    #[test]
    fn mixing_preserves_column_means(
        kind in kind_strategy(),
        n in 2usize..=10,
        data in prop::collection::vec(-50.0f64..50.0, 30),
    ) {
        let d = 3;
        let w = MixingMatrix::metropolis(&build_topology(kind, n).unwrap()).unwrap();
        let x = stacked(n, d, data[..n * d].to_vec());
        let before = x.mean_row();
        let after = w.mix(&x).unwrap().mean_row();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-12 * 50.0 * n as f64);
        }
    }

    #[test]
    fn consensus_gap_is_a_laplacian_quadratic_form(
        kind in kind_strategy(),
        n in 2usize..=8,
        data in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let d = 2;
        let w = MixingMatrix::metropolis(&build_topology(kind, n).unwrap()).unwrap();
        let x = stacked(n, d, data[..n * d].to_vec());
        let gap = consensus_gap_d(&w, &x).unwrap();
        let xm = DMatrix::from_row_slice(n, d, x.as_slice());
        let lap = DMatrix::identity(n, n) - dense(&w);
        let expected = (xm.transpose() * &lap * &xm).trace();
        prop_assert!((gap - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
        let lmax = lap.symmetric_eigen().eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        let cons = x.deviation_from_mean().frobenius_sq();
        prop_assert!(gap >= -1e-12);
        prop_assert!(gap <= lmax * cons * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn text_round_trip(kind in kind_strategy(), n in 2usize..=9) {
        let w = MixingMatrix::metropolis(&build_topology(kind, n).unwrap()).unwrap();
        let back = MixingMatrix::from_text(w.to_text().as_bytes()).unwrap();
        prop_assert_eq!(back.as_slice(), w.as_slice());
    }
}

#[test]
fn random_topology_is_reproducible() {
    let kind = TopologyKind::Random { p_edge: 0.3, seed: 42 };
    let a = build_topology(kind, 9).unwrap();
    let b = build_topology(kind, 9).unwrap();
    assert_eq!(a.edges(), b.edges());
    let other = build_topology(TopologyKind::Random { p_edge: 0.3, seed: 43 }, 9).unwrap();
    assert!(other.is_connected());
}

#[test]
fn ring_radius_closed_form() {
    // Metropolis ring weights are 1/3 everywhere, so the spectrum is
    // 1/3 + (2/3) cos(2 pi k / n).
    for n in 3..=12 {
        let w = MixingMatrix::metropolis(&build_topology(TopologyKind::Ring, n).unwrap()).unwrap();
        let expected = (1..n)
            .map(|k| (1.0 / 3.0 + 2.0 / 3.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()).abs())
            .fold(0.0, f64::max);
        assert!((w.rho() - expected).abs() < 1e-10, "n = {n}");
    }
}

use gtvr::ingest::SparseRow;
use gtvr::problem::{FiniteSumProblem, LogisticProblem, QuadraticProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn logistic(agents: usize, samples: usize, dim: usize, lambda: f64, seed: u64) -> LogisticProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..agents {
        let mut r = Vec::new();
        let mut l = Vec::new();
        for _ in 0..samples {
            let (mut idx, mut val) = (Vec::new(), Vec::new());
            for k in 0..dim as u32 {
                if rng.gen_bool(0.5) {
                    idx.push(k);
                    val.push(rng.gen_range(-2.0..2.0));
                }
            }
            r.push(SparseRow::new(idx, val).unwrap());
            l.push(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        }
        rows.push(r);
        labels.push(l);
    }
    LogisticProblem::new(rows, labels, dim, lambda).unwrap()
}

fn central_difference<P: FiniteSumProblem>(p: &P, agent: usize, sample: usize, x: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..x.len())
        .map(|k| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[k] += h;
            minus[k] -= h;
            (p.component_cost(agent, sample, &plus).unwrap() - p.component_cost(agent, sample, &minus).unwrap())
                / (2.0 * h)
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logistic_gradient_matches_finite_differences(
        seed in any::<u64>(),
        x in prop::collection::vec(-3.0f64..3.0, 6),
        sample in 0usize..8,
    ) {
        let p = logistic(2, 8, 6, 5e-4, seed);
        for agent in 0..2 {
            let g = p.component_grad(agent, sample, &x).unwrap();
            let fd = central_difference(&p, agent, sample, &x);
            prop_assert!(norm(&diff(&g, &fd)) <= 1e-6 * (1.0 + norm(&g)));
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(
        seed in any::<u64>(),
        x in prop::collection::vec(-3.0f64..3.0, 4),
        sample in 0usize..10,
    ) {
        let p = QuadraticProblem::synthetic(3, 10, 4, seed).unwrap();
        let g = p.component_grad(1, sample, &x).unwrap();
        let fd = central_difference(&p, 1, sample, &x);
        prop_assert!(norm(&diff(&g, &fd)) <= 1e-6 * (1.0 + norm(&g)));
    }

    #[test]
    fn components_are_lipschitz_smooth(
        seed in any::<u64>(),
        x in prop::collection::vec(-5.0f64..5.0, 6),
        y in prop::collection::vec(-5.0f64..5.0, 6),
    ) {
        let p = logistic(2, 6, 6, 1e-2, seed);
        let l = p.lipschitz_estimate();
        let q = QuadraticProblem::synthetic(2, 6, 6, seed).unwrap();
        let lq = q.lipschitz_estimate();
        for agent in 0..2 {
            for s in 0..6 {
                let gap = diff(&p.component_grad(agent, s, &x).unwrap(), &p.component_grad(agent, s, &y).unwrap());
                prop_assert!(norm(&gap) <= l * norm(&diff(&x, &y)) * (1.0 + 1e-12) + 1e-15);
                let gap = diff(&q.component_grad(agent, s, &x).unwrap(), &q.component_grad(agent, s, &y).unwrap());
                prop_assert!(norm(&gap) <= lq * norm(&diff(&x, &y)) * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn local_gradient_is_the_component_mean(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 5)) {
        let p = logistic(3, 7, 5, 5e-4, seed);
        for agent in 0..3 {
            let full = p.local_full_grad(agent, &x).unwrap();
            let mut mean = vec![0.0; 5];
            for s in 0..7 {
                for (m, g) in mean.iter_mut().zip(p.component_grad(agent, s, &x).unwrap()) {
                    *m += g / 7.0;
                }
            }
            prop_assert!(norm(&diff(&full, &mean)) <= 1e-12);
        }
        let (cost, grad) = p.global_cost_and_grad(&x).unwrap();
        let mut mean_cost = 0.0;
        let mut mean_grad = vec![0.0; 5];
        for agent in 0..3 {
            mean_cost += p.local_cost(agent, &x) / 3.0;
            for (m, g) in mean_grad.iter_mut().zip(p.local_full_grad(agent, &x).unwrap()) {
                *m += g / 3.0;
            }
        }
        prop_assert!((cost - mean_cost).abs() <= 1e-12);
        prop_assert!(norm(&diff(&grad, &mean_grad)) <= 1e-12);
    }
}

#[test]
fn logistic_is_stable_at_extreme_margins() {
    let row = SparseRow::new(vec![0], vec![1.0]).unwrap();
    let p = LogisticProblem::new(vec![vec![row.clone(), row]], vec![vec![1.0, -1.0]], 1, 0.0).unwrap();
    for x in [-1e3, -40.0, 40.0, 1e3] {
        for s in 0..2 {
            let c = p.component_cost(0, s, &[x]).unwrap();
            let g = p.component_grad(0, s, &[x]).unwrap();
            assert!(c.is_finite() && (0.0..=1.0).contains(&c));
            assert!(g[0].is_finite() && g[0].abs() < 1e-15);
        }
    }
}

#[test]
fn quadratic_minimizer_is_stationary() {
    let p = QuadraticProblem::synthetic(5, 20, 4, 0).unwrap();
    let x = p.minimizer().unwrap();
    let (_, g) = p.global_cost_and_grad(&x).unwrap();
    assert!(norm(&g) < 1e-12);
}

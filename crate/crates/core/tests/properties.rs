//! Property tests for the target, loss, bound and optimizer invariants.

mod common;

use histloss::analysis::{discrete_bias, prediction_bound_sides};
use histloss::grid::{BinGrid, PaddingSpec};
use histloss::loss::{entropy_floor, hl_loss, kl_divergence, last_layer_grad_bound_check, PredictionHistogram};
use histloss::optim::clip_global_norm;
use histloss::targets::{
    gaussian_weights, onebin_weights, projected_weights, target_mean, uniform_mix_weights, SupportPolicy, WeightVector,
};
use histloss::trainer::anneal_sigma;
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = BinGrid> {
    (-5.0f64..5.0, 0.01f64..1.0, 2usize..120).prop_map(|(a, w, k)| BinGrid::from_edges(a, w, k).unwrap())
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn assert_distribution(q: &WeightVector) {
    let s: f64 = q.as_slice().iter().sum();
    assert!((s - 1.0).abs() <= 1e-12, "sum {s}");
    assert!(q.as_slice().iter().all(|v| *v >= 0.0));
}

proptest! {
    #[test]
    fn bin_index_is_consistent(grid in grid_strategy(), u in 0.0f64..=1.0) {
        let y = grid.a() + u * (grid.b() - grid.a());
        let i = grid.bin_index(y).unwrap();
        prop_assert!(i < grid.k());
        prop_assert!(grid.left_edge(i) <= y);
        prop_assert!(y < grid.left_edge(i + 1) || i == grid.k() - 1);
    }

    #[test]
    fn every_constructor_yields_a_distribution(grid in grid_strategy(), u in 0.0f64..=1.0, s in 0.05f64..5.0, e in 0.0f64..=1.0) {
        let y = grid.a() + u * (grid.b() - grid.a());
        assert_distribution(&gaussian_weights(&grid, y, s * grid.width()).unwrap());
        assert_distribution(&onebin_weights(&grid, y, SupportPolicy::Strict).unwrap());
        let eps = e / grid.k() as f64;
        assert_distribution(&uniform_mix_weights(&grid, y, eps, SupportPolicy::Strict).unwrap());
        assert_distribution(&projected_weights(&grid, y, SupportPolicy::Lenient).unwrap());
    }

    #[test]
    fn projected_targets_preserve_the_mean(grid in grid_strategy(), u in 0.0f64..=1.0) {
        let (c0, c1) = (grid.center(0), grid.center(grid.k() - 1));
        let y = c0 + u * (c1 - c0);
        let q = projected_weights(&grid, y, SupportPolicy::Strict).unwrap();
        let scale = grid.a().abs().max(grid.b().abs()).max(1.0);
        prop_assert!((target_mean(&grid, &q) - y).abs() <= 1e-12 * scale);
        prop_assert!(q.as_slice().iter().filter(|v| **v > 0.0).count() <= 2);
    }

    #[test]
    fn narrow_gaussian_tends_to_onebin(grid in grid_strategy(), i in 0usize..1000, frac in 0.01f64..0.99) {
        let i = i % grid.k();
        let y = grid.left_edge(i) + frac * grid.width();
        let g = gaussian_weights(&grid, y, grid.width() / 1e3).unwrap();
        let o = onebin_weights(&grid, y, SupportPolicy::Strict).unwrap();
        let gap = g.as_slice().iter().zip(o.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-9, "sup-norm gap {}", gap);
    }

    #[test]
    fn gibbs_inequality(q in distribution(17), z in prop::collection::vec(-8.0f64..8.0, 17)) {
        let q = WeightVector::new(q).unwrap();
        let h = PredictionHistogram::from_logits(z);
        let loss = hl_loss(&q, &h);
        let floor = entropy_floor(&q);
        prop_assert!(loss >= floor - 1e-12);
        let kl = kl_divergence(q.as_slice(), h.probs());
        prop_assert!(kl >= -1e-12);
        prop_assert!((loss - floor - kl).abs() <= 1e-9 * loss.abs().max(1.0));
    }

    #[test]
    fn bias_is_antisymmetric_about_the_center(k in 4usize..80, t in 0.0f64..0.5, s in 0.05f64..3.0) {
        let w = 1.0 / k as f64;
        let grid = BinGrid::from_edges(-0.5, w, k).unwrap();
        let off = t * 0.5;
        let sigma = s * w;
        let up = discrete_bias(&grid, off, sigma).unwrap();
        let down = discrete_bias(&grid, -off, sigma).unwrap();
        prop_assert!((up + down).abs() <= 1e-12, "{} vs {}", up, down);
    }

    #[test]
    fn bias_is_at_most_half_a_bin_with_padding(k in 20usize..120, u in 0.0f64..=1.0, s in 0.01f64..4.0) {
        let grid = BinGrid::build(0.0, 1.0, k + 2 * (12.0 * s).ceil() as usize + 2, PaddingSpec::new(s, 12.0)).unwrap();
        let y = u;
        let b = discrete_bias(&grid, y, grid.sigma()).unwrap();
        prop_assert!(b.abs() <= grid.width() / 2.0 + 1e-9);
    }

    #[test]
    fn prediction_error_bound(q in distribution(25), h in distribution(25), a in -3.0f64..0.0, w in 0.01f64..0.3) {
        let grid = BinGrid::from_edges(a, w, 25).unwrap();
        let q = WeightVector::new(q).unwrap();
        let (lhs, rhs) = prediction_bound_sides(&grid, &q, &h);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn last_layer_gradient_bound(q in distribution(12), z in prop::collection::vec(-5.0f64..5.0, 12), f in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let q = WeightVector::new(q).unwrap();
        let (lhs, rhs) = last_layer_grad_bound_check(&q, &PredictionHistogram::from_logits(z), &f);
        prop_assert!(lhs <= rhs + 1e-10);
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold(g in prop::collection::vec(-1e3f64..1e3, 1..200), t in 1e-6f64..10.0) {
        let mut g = g;
        let (before, after) = clip_global_norm(&mut g, t);
        prop_assert!(after <= t || (before <= t && after == before));
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= t.max(before));
    }

    #[test]
    fn annealing_is_monotone_and_lands_on_final(total in 1usize..300, start in 1.0f64..10.0, ratio in 0.05f64..=1.0, frac in 0.0f64..=1.0) {
        let fin = start * ratio;
        let mut prev = f64::INFINITY;
        for e in 0..total {
            let s = anneal_sigma(e, total, start, fin, frac);
            prop_assert!(s <= prev && s >= fin);
            prev = s;
        }
        let n = (frac * total as f64).ceil() as usize;
        if n < total {
            prop_assert_eq!(anneal_sigma(n, total, start, fin, frac), fin);
        }
    }
}

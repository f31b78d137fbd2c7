mod common;

use damdp::SimplexGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn weights_are_convex_and_reconstruct_the_query(
        seed in any::<u64>(), dim in 2usize..6, res in 1usize..12,
    ) {
        let grid = SimplexGrid::new(dim, res).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = common::random_belief(&mut rng, dim, 0.3);
        let stencil = grid.stencil(&o);
        prop_assert!(stencil.len() <= dim);
        prop_assert!(stencil.iter().all(|&(_, w)| w > 0.0));
        prop_assert!((stencil.iter().map(|&(_, w)| w).sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 0..dim {
            let rebuilt: f64 = stencil.iter().map(|&(j, w)| w * grid.belief(j).get(i)).sum();
            prop_assert!((rebuilt - o.get(i)).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_forms_are_reproduced(seed in any::<u64>(), coef in prop::collection::vec(-5.0f64..5.0, 4)) {
        let grid = SimplexGrid::new(4, 7).unwrap();
        let table: Vec<f64> = grid
            .beliefs()
            .map(|b| coef.iter().zip(b.as_slice()).map(|(a, o)| a * o).sum())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = common::random_belief(&mut rng, 4, 0.2);
        let exact: f64 = coef.iter().zip(o.as_slice()).map(|(a, b)| a * b).sum();
        prop_assert!((grid.interpolate(&table, &o) - exact).abs() <= 1e-12);
    }
}

#[test]
fn grid_points_are_reproduced_exactly() {
    let grid = SimplexGrid::new(3, 10).unwrap();
    let table: Vec<f64> = (0..grid.len()).map(|i| (i as f64).sin()).collect();
    for (i, b) in grid.beliefs().enumerate() {
        assert_eq!(grid.interpolate(&table, &b), table[i]);
    }
}

#[test]
fn interpolant_is_continuous_across_cells() {
    // walk a segment through many simplices; jumps stay proportional to the step
    let grid = SimplexGrid::new(3, 10).unwrap();
    let table: Vec<f64> = (0..grid.len()).map(|i| ((i * 7919) % 101) as f64).collect();
    let mut prev: Option<f64> = None;
    let steps = 20_000;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let o = damdp::Belief::new(vec![0.9 - 0.8 * t, 0.05 + 0.3 * t, 0.05 + 0.5 * t]).unwrap();
        let v = grid.interpolate(&table, &o);
        if let Some(p) = prev {
            assert!((v - p).abs() < 100.0 * 10.0 * 0.8 * 2.0 / steps as f64 + 1e-9);
        }
        prev = Some(v);
    }
}

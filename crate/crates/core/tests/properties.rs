use lodnn::fem::prolongation;
use lodnn::lodref::{compute_correctors, LinearTermMode};
use lodnn::qinterp::InterpolationMatrix;
use lodnn::GridHierarchy;
use proptest::prelude::*;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interpolation_reproduces_coarse_functions(
        m in 2usize..6,
        r in 1usize..5,
        seed in any::<u64>(),
    ) {
        let g = GridHierarchy::new(m, r).unwrap();
        let imat = InterpolationMatrix::<f64>::assemble(&g);
        let p = prolongation::<f64>(&g);
        let mut x = seed;
        let v: Vec<f64> = (0..g.num_coarse_dofs())
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect();
        let back = imat.apply(&p.mul_vec(&v));
        let d: Vec<f64> = back.iter().zip(&v).map(|(a, b)| a - b).collect();
        prop_assert!(max_abs(&d) < 1e-12);
    }

    #[test]
    fn global_correctors_are_invisible_to_interpolation(
        cells in proptest::collection::vec(0.1f64..1.0, 9),
        mode_literal in any::<bool>(),
    ) {
        // 3 x 3 coarse elements with one coefficient value each, r = 3
        let g = GridHierarchy::new(3, 3).unwrap();
        let imat = InterpolationMatrix::<f64>::assemble(&g);
        let n = g.n();
        let fine: Vec<f64> = (0..n * n).map(|e| cells[(e / n / 3) * 3 + (e % n) / 3]).collect();
        let mode = if mode_literal { LinearTermMode::PatchLiteral } else { LinearTermMode::ElementRestricted };
        let records = compute_correctors(&g, &imat, &fine, 3, mode).unwrap();
        prop_assert!(!records.is_empty());
        for rec in &records {
            let v = rec.to_global(&g);
            prop_assert!(max_abs(&imat.apply(&v)) <= 1e-10 * max_abs(&v).max(1e-300));
        }

        let scaled: Vec<f64> = fine.iter().map(|a| 3.5 * a).collect();
        let again = compute_correctors(&g, &imat, &scaled, 3, mode).unwrap();
        for (a, b) in records.iter().zip(&again) {
            let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
            prop_assert!(max_abs(&d) <= 1e-10 * max_abs(&a.values).max(1e-12));
        }
    }
}

use mme_core::minimizer::Grid;
use mme_core::rng::stream_rng;
use mme_core::testbed::{ground_truth, NoisyOracle, Objective};
use proptest::prelude::*;

fn truth(obj: Objective) -> mme_core::testbed::GroundTruth {
    let grid = Grid::lattice(obj.domain(), &obj.default_grid_shape()).unwrap();
    ground_truth(obj, &grid).unwrap()
}

#[test]
fn toy1d_has_two_global_and_two_local_minima() {
    let t = truth(Objective::Toy1d);
    assert_eq!(t.global_minimizers.len(), 2);
    let mut xs: Vec<f64> = t.global_minimizers.iter().map(|p| p[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert!((xs[0] + 1.01269).abs() < 1e-4 && (xs[1] - 1.01269).abs() < 1e-4, "{xs:?}");
    assert!((xs[0] + xs[1]).abs() < 1e-6);
    assert!((t.global_minimum + 0.636816).abs() < 1e-6);

    let locals: Vec<f64> = t
        .local_minima
        .iter()
        .filter(|m| m.value > t.global_minimum + 1e-3 && m.value < -1e-3)
        .map(|m| m.point[0])
        .collect();
    let flat: Vec<f64> = t.local_minima.iter().filter(|m| m.value.abs() <= 1e-3).map(|m| m.point[0]).collect();
    assert_eq!(flat, vec![0.0, -1.5, 1.5]);
    assert_eq!(locals.len(), 2, "{:?}", t.local_minima);
    for x in locals {
        assert!((x.abs() - 0.38366).abs() < 1e-4, "local minimum at {x}");
    }
    assert!((t.grid_minimum + 0.632314).abs() < 1e-6);
    assert_eq!(t.grid_minimizers.len(), 2);
}

#[test]
fn camel_minimizers_are_point_symmetric() {
    let t = truth(Objective::Camel6);
    assert!((t.global_minimum + 1.0316).abs() < 1e-4);
    assert_eq!(t.global_minimizers.len(), 2);
    for p in &t.global_minimizers {
        assert!((p[0].abs() - 0.0898).abs() < 1e-3 && (p[1].abs() - 0.7126).abs() < 1e-3, "{p:?}");
        assert!(p[0] * p[1] < 0.0);
    }
    let (a, b) = (&t.global_minimizers[0], &t.global_minimizers[1]);
    assert!((a[0] + b[0]).abs() < 1e-6 && (a[1] + b[1]).abs() < 1e-6);
    assert_eq!(t.grid_minimizers.len(), 2);
    assert!(t.grid_minimum >= t.global_minimum);
}

#[test]
fn hosaki_has_a_unique_global_minimizer() {
    let t = truth(Objective::Hosaki);
    assert_eq!(t.global_minimizers.len(), 1);
    let p = &t.global_minimizers[0];
    assert!((p[0] - 4.0).abs() < 1e-4 && (p[1] - 2.0).abs() < 1e-4, "{p:?}");
    assert!((t.global_minimum + 2.3458).abs() < 1e-4);
    assert!(t.local_minima.len() >= 2);
}

#[test]
fn ground_truth_is_deterministic_and_bounded_by_grid() {
    for obj in Objective::ALL {
        let a = truth(obj);
        assert_eq!(a, truth(obj));
        assert!(a.grid_minimum >= a.global_minimum);
        let uniform = 1.0 / a.grid_minimizers.len() as f64;
        for (i, &p) in a.reference_distribution.probabilities().iter().enumerate() {
            let expected = if a.grid_minimizers.contains(&i) { uniform } else { 0.0 };
            assert_eq!(p, expected);
        }
    }
}

#[test]
fn ground_truth_rejects_foreign_grid() {
    let grid = Grid::lattice(Objective::Camel6.domain(), &[5, 5]).unwrap();
    assert!(ground_truth(Objective::Hosaki, &grid).is_err());
}

#[test]
fn noisy_oracle_variance_matches_noise_level() {
    let oracle = NoisyOracle::new(Objective::Camel6, 0.1).unwrap();
    let x = [0.5, -0.25];
    let f = Objective::Camel6.value(&x);
    let mut rng = stream_rng(41, &[]);
    let ys: Vec<f64> = (0..10_000).map(|_| oracle.query(&x, &mut rng).unwrap()).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() - 1) as f64;
    assert!((var - 0.01).abs() < 0.001, "variance {var}");
    assert!((mean - f).abs() < 0.005);
}

proptest! {
    #[test]
    fn camel_is_point_symmetric(a in -2.0..2.0f64, b in -1.0..1.0f64) {
        let f = Objective::Camel6.evaluate(&[a, b]).unwrap();
        let g = Objective::Camel6.evaluate(&[-a, -b]).unwrap();
        prop_assert!((f - g).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn toy1d_is_even(x in -1.5..1.5f64) {
        prop_assert_eq!(Objective::Toy1d.evaluate(&[x]).unwrap(), Objective::Toy1d.evaluate(&[-x]).unwrap());
    }

    #[test]
    fn objectives_are_finite_on_their_domains(u in 0.0..1.0f64, v in 0.0..1.0f64) {
        for obj in Objective::ALL {
            let x: Vec<f64> = obj.bounds().iter().zip([u, v]).map(|(&(lo, hi), t)| lo + t * (hi - lo)).collect();
            prop_assert!(obj.evaluate(&x).unwrap().is_finite());
        }
    }
}

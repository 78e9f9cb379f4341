#![allow(clippy::needless_range_loop)]

use cbo_lab::consensus::{laplace_gap, weighted_consensus};
use cbo_lab::metrics::{wasserstein2_1d, Measure1d};
use cbo_lab::{consensus_of_particles, quadratic, rastrigin, ConsensusParams};
use proptest::prelude::*;

fn cloud(dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(move |n| {
        (
            prop::collection::vec(-50.0f64..50.0, n * dim),
            prop::collection::vec(-1e3f64..1e3, n),
        )
    })
}

fn per_axis_range(points: &[f64], dim: usize, k: usize) -> (f64, f64) {
    points
        .chunks_exact(dim)
        .map(|x| x[k])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

proptest! {
    #[test]
    fn consensus_stays_in_hull(dim in 1usize..4, seed_alpha in -3.0f64..15.0, data in cloud(3)) {
        let (pts, vals) = data;
        let n = vals.len();
        let points = &pts[..n * dim];
        let alpha = 10f64.powf(seed_alpha);
        let m = weighted_consensus(points, dim, &vals, None, alpha).unwrap().point;
        for k in 0..dim {
            let (lo, hi) = per_axis_range(points, dim, k);
            prop_assert!(lo <= m[k] && m[k] <= hi, "axis {k}: {} not in [{lo}, {hi}]", m[k]);
        }
    }

    // dyadic values and integer offsets keep f + c exact, so the shifted
    // weights coincide bit for bit
    #[test]
    fn shift_invariance_is_bit_exact(
        pts in prop::collection::vec(-64i32..64, 1..30),
        vals in prop::collection::vec(0i32..4096, 30),
        c in -1000i32..1000,
        alpha in prop::sample::select(vec![0.5, 1.0, 10.0, 1e3, 1e15]),
    ) {
        let points: Vec<f64> = pts.iter().map(|&p| p as f64 / 8.0).collect();
        let values: Vec<f64> = vals[..points.len()].iter().map(|&v| v as f64 / 16.0).collect();
        let shifted: Vec<f64> = values.iter().map(|v| v + c as f64).collect();
        let a = weighted_consensus(&points, 1, &values, None, alpha).unwrap().point;
        let b = weighted_consensus(&points, 1, &shifted, None, alpha).unwrap().point;
        prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn shift_invariance_general_offsets(
        data in cloud(1),
        c in -1e3f64..1e3,
        alpha in 0.01f64..10.0,
    ) {
        let (points, values) = data;
        let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
        let a = weighted_consensus(&points, 1, &values, None, alpha).unwrap().point[0];
        let b = weighted_consensus(&points, 1, &shifted, None, alpha).unwrap().point[0];
        let scale = points.iter().fold(1.0f64, |s, p| s.max(p.abs()));
        prop_assert!((a - b).abs() <= 1e-9 * scale, "{a} vs {b}");
    }

    // with two particles the distance to the better one is
    // |x1 - x0| / (1 + exp(alpha gap)), decreasing in alpha
    #[test]
    fn two_particle_collapse_is_monotone(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0, gap in 1e-3f64..5.0) {
        let points = [x0, x1];
        let values = [0.0, gap];
        let mut last = f64::INFINITY;
        for alpha in [1.0, 10.0, 100.0, 1000.0] {
            let m = weighted_consensus(&points, 1, &values, None, alpha).unwrap().point[0];
            let d = (m - x0).abs();
            prop_assert!(d <= last, "alpha {alpha}: {d} > {last}");
            last = d;
        }
    }

    #[test]
    fn order_of_particles_does_not_matter(data in cloud(1), alpha in 0.1f64..100.0) {
        let (points, values) = data;
        let a = weighted_consensus(&points, 1, &values, None, alpha).unwrap().point[0];
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.reverse();
        let p2: Vec<f64> = idx.iter().map(|&i| points[i]).collect();
        let v2: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
        let b = weighted_consensus(&p2, 1, &v2, None, alpha).unwrap().point[0];
        let scale = points.iter().fold(1.0f64, |s, p| s.max(p.abs()));
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * scale, "{a} vs {b}");
    }
}

#[test]
fn laplace_collapse_with_unique_minimizer() {
    let f = rastrigin(1.0, 1).unwrap();
    let points: Vec<f64> = (0..100).map(|i| 4.0 * i as f64 / 99.0).collect();
    let gap = laplace_gap(&points, 1, &f, ConsensusParams::new(1e15).unwrap()).unwrap();
    assert!(gap <= 1e-12, "{gap}");
}

// the ratio |m(mu) - m(nu)| / W2(mu, nu) over random perturbations of
// bounded empirical measures stays finite; the largest value is printed
#[test]
fn consensus_stability_ratio_is_bounded() {
    use rand::{Rng, SeedableRng};
    let f = quadratic(&[0.5]).unwrap();
    let p = ConsensusParams::new(1.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mu: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
        let nu: Vec<f64> = mu
            .iter()
            .map(|x: &f64| (x + rng.random_range(-0.1..0.1)).clamp(-2.0, 2.0))
            .collect();
        let w = wasserstein2_1d(Measure1d::Samples(&mu), Measure1d::Samples(&nu)).unwrap();
        if w == 0.0 {
            continue;
        }
        let a = consensus_of_particles(&mu, 1, &f, p).unwrap()[0];
        let b = consensus_of_particles(&nu, 1, &f, p).unwrap()[0];
        worst = worst.max((a - b).abs() / w);
    }
    println!("max |m(mu) - m(nu)| / W2 = {worst}");
    assert!(worst.is_finite() && worst < 100.0, "{worst}");
}

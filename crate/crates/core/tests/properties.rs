//! Property tests across modules.

use proptest::prelude::*;

use flatdiv_core::combinatorics::PhiParams;
use flatdiv_core::metrics::{
    der, kl_diversity, mean_disagreement, variance_diversity, PredictionSet,
};
use flatdiv_core::nn_ensemble::{checkpoint, sets_from_tops, top_count, top_k_indices, MlpModel};
use flatdiv_core::numkernel::{
    gaussian_matrix, gaussian_vector, gram, sym_eigen, DenseVector, RngStream,
};
use flatdiv_core::quad_sim::{
    closed_form_theta, pga_sharpness, sam_step, trust_region_sharpness, DataSelector, PgaStart,
    QuadProblem,
};
use flatdiv_core::theory::{sam_sharpness_bounds, TheoryConfig};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(n)
    }
}

fn quad_value(eig: &flatdiv_core::numkernel::SymEigen, b: &DenseVector, e: &DenseVector) -> f64 {
    let me = eig.apply_fn(e, |l| l);
    0.5 * e.dot(&me) - e.dot(b)
}

proptest! {
    #![proptest_config(cases(8))]

    #[test]
    fn closed_form_equals_iterated(seed in 0u64..10_000, eta in 0.001f64..0.05, rho in 0.0f64..0.5, k in 1usize..=15) {
        let rs = RngStream::new(seed, 0);
        let (n, d) = (300, 50);
        let a = gaussian_matrix(&rs.derive(1), n, d, 1.0 / d as f64);
        let t = gaussian_matrix(&rs.derive(2), 20, d, 1.0 / d as f64);
        let ts = gaussian_vector(&rs.derive(3), d, 1.0 / d as f64);
        let p = QuadProblem::new(a, t, ts, 1.0, eta, rho, k, 1).unwrap();
        let theta0 = gaussian_vector(&rs.derive(4), d, 1.0);
        let mut it = theta0.clone();
        for _ in 0..k {
            it = sam_step(&it, &p, DataSelector::Train).unwrap();
        }
        let cf = closed_form_theta(&p, &theta0, k, DataSelector::Train).unwrap();
        let rel = it.sub(&cf).norm() / cf.norm();
        prop_assert!(rel <= 1e-9, "relative error {rel}");
    }
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn trust_region_is_monotone_and_optimal(seed in 0u64..10_000, shift in -2.0f64..2.0, r1 in 0.0f64..1.0, dr in 0.0f64..1.0) {
        let rs = RngStream::new(seed, 1);
        let d = 6;
        let g = gaussian_matrix(&rs.derive(1), 8, d, 1.0);
        let mut m = gram(&g);
        for i in 0..d {
            m.set(i, i, m.get(i, i) + shift);
        }
        let eig = sym_eigen(&m).unwrap();
        let b = gaussian_vector(&rs.derive(2), d, 1.0);
        let (v1, e1) = trust_region_sharpness(&eig, &b, r1).unwrap();
        let (v2, _) = trust_region_sharpness(&eig, &b, r1 + dr).unwrap();
        let scale = 1.0 + v1.abs() + v2.abs();
        prop_assert!(v1 <= v2 + 1e-10 * scale, "{v1} > {v2}");
        prop_assert!(e1.norm() <= r1 * (1.0 + 1e-12) + 1e-15);
        prop_assert!((quad_value(&eig, &b, &e1) - v1).abs() <= 1e-9 * scale);
        prop_assert!(v1 >= -1e-12);
        for s in 0..8 {
            let z = gaussian_vector(&rs.derive(10 + s), d, 1.0);
            let z = z.scale(r1 / z.norm().max(1e-300));
            prop_assert!(quad_value(&eig, &b, &z) <= v1 + 1e-9 * scale);
        }
        let (pg, pe) = pga_sharpness(&eig, &b, r1, &PgaStart::TopEigenvector).unwrap();
        prop_assert!(pg <= v1 + 1e-8 * scale);
        prop_assert!(pe.norm() <= r1 * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn sharpness_bounds_are_ordered(eta in 0.001f64..0.1, rho in 0.0f64..0.5, k in 1usize..=10, q in 2usize..=40, rho0 in 0.01f64..0.5) {
        let cfg = TheoryConfig {
            params: PhiParams::new(q * 50, 50, eta, rho, 1).unwrap(),
            sigma: 1.0,
            theta_star_norm: 1.0,
            rho0,
            k,
        };
        if let Ok((lo, up)) = sam_sharpness_bounds(&cfg) {
            prop_assert!(lo <= up, "lower {lo} > upper {up}");
        }
    }

    #[test]
    fn sharpness_aware_set_sizes(n in 10usize..80, m in 2usize..6, frac in 0.05f64..0.95, seed in 0u64..1000) {
        let k = top_count(frac, n);
        let tops: Vec<Vec<usize>> = (0..m)
            .map(|i| {
                let scores: Vec<f64> = gaussian_vector(&RngStream::new(seed, i as u64), n, 1.0).into_vec();
                top_k_indices(&scores, k)
            })
            .collect();
        let sets = sets_from_tops(&tops, n);
        for i in 0..m {
            let sam = &sets.sam[i];
            prop_assert!(sam.len() >= k && sam.len() <= n.min((m - 1) * k));
            prop_assert_eq!(sam.len() + sets.normal[i].len(), n);
            let mut all: Vec<usize> = sam.iter().chain(&sets.normal[i]).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            // D_SAM^i never depends on member i's own top set.
            let mut others: Vec<usize> = tops.iter().enumerate().filter(|(j, _)| *j != i).flat_map(|(_, t)| t.clone()).collect();
            others.sort_unstable();
            others.dedup();
            prop_assert_eq!(sam, &others);
        }
    }

    #[test]
    fn top_k_keeps_the_largest(scores in proptest::collection::vec(-5i32..5, 1..40), frac in 0.01f64..1.0) {
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let k = top_count(frac, s.len());
        let top = top_k_indices(&s, k);
        prop_assert_eq!(top.len(), k);
        let min_in = top.iter().map(|&i| s[i]).fold(f64::INFINITY, f64::min);
        for (i, &v) in s.iter().enumerate() {
            if !top.contains(&i) {
                prop_assert!(v <= min_in);
                // ties resolved towards lower indices
                if v == min_in {
                    prop_assert!(top.iter().filter(|&&j| s[j] == v).all(|&j| j < i));
                }
            }
        }
    }

    #[test]
    fn diversity_metrics_ignore_member_order(seed in 0u64..1000, m in 2usize..5, n in 5usize..30, perm_seed in 0u64..1000) {
        let c = 4;
        let rs = RngStream::new(seed, 2);
        let outputs: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let z = gaussian_vector(&rs.derive((i * 1000 + j) as u64), c, 1.0).into_vec();
                        let e: Vec<f64> = z.iter().map(|v| (2.0 * v).exp()).collect();
                        let s: f64 = e.iter().sum();
                        e.iter().map(|v| v / s).collect()
                    })
                    .collect()
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|j| j % c).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.rotate_left((perm_seed as usize) % m);
        if perm_seed % 2 == 1 {
            order.reverse();
        }
        let a = PredictionSet::new(outputs.clone(), labels.clone()).unwrap();
        let b = PredictionSet::new(order.iter().map(|&i| outputs[i].clone()).collect(), labels).unwrap();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs());
        prop_assert!(close(variance_diversity(&a).unwrap(), variance_diversity(&b).unwrap()));
        prop_assert!(close(kl_diversity(&a).unwrap(), kl_diversity(&b).unwrap()));
        prop_assert!(close(mean_disagreement(&a).unwrap(), mean_disagreement(&b).unwrap()));
        match (der(&a), der(&b)) {
            (Ok(x), Ok(y)) => prop_assert!(close(x, y)),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "der defined for one order only"),
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, d in 1usize..10, h in 1usize..10, c in 2usize..6) {
        let model = MlpModel::init(d, h, c, &RngStream::new(seed, 0));
        let back = checkpoint::decode(&checkpoint::encode(&model)).unwrap();
        prop_assert_eq!(back.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        model.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!((back.d_in, back.hidden, back.classes), (d, h, c));
    }
}

use gem_core::gazegraph::{crop_window, gaze_to_cell, PATCH};
use gem_core::matcher::sinkhorn;
use gem_core::pipeline::metrics::MetricsAccumulator;
use gem_core::pipeline::synth::{query_class, query_tokens};
use gem_core::pipeline::train::epoch_order;
use gem_core::pipeline::fit_points;
use gem_core::{Tape, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = [f64; 2]> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(x, y)| [x, y])
}

proptest! {
    #[test]
    fn sinkhorn_output_is_doubly_stochastic(k in 2usize..12, seed in vec(0.1..1.0f64, 144)) {
        let v = seed[..k * k].to_vec();
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::new(&[k, k], v).unwrap());
        let c = sinkhorn(&mut tape, m, 20).unwrap();
        let c = tape.values(c);
        for i in 0..k {
            let row: f64 = (0..k).map(|j| c[i * k + j]).sum();
            let col: f64 = (0..k).map(|j| c[j * k + i]).sum();
            prop_assert!((row - 1.0).abs() <= 1e-6 && (col - 1.0).abs() <= 1e-6);
        }
        prop_assert!(c.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn pck_is_monotone_and_bounded(pairs in vec((point(), point()), 1..40)) {
        let (pred, gt): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let mut acc = MetricsAccumulator::default();
        acc.add(&pred, &gt, &vec![true; pred.len()]).unwrap();
        let m = acc.finish().unwrap();
        prop_assert!(0.0 <= m.pck02 && m.pck02 <= m.pck03 && m.pck03 <= m.pck04 && m.pck04 <= 100.0);
        prop_assert!(m.mse >= 0.0 && m.mae >= 0.0 && m.mse <= m.mae);
    }

    #[test]
    fn crops_stay_inside_the_grid(p in point(), grid in PATCH..64) {
        let (r, c) = gaze_to_cell(p, grid);
        prop_assert!(r < grid && c < grid);
        for center in [r, c] {
            let w = crop_window(center, grid);
            prop_assert_eq!(w.len(), PATCH);
            prop_assert!(w.end <= grid);
        }
    }

    #[test]
    fn fit_points_has_k_entries_and_marks_padding(pts in vec(point(), 1..20), k in 1usize..20) {
        let (gaze, valid) = fit_points(&pts, k).unwrap();
        prop_assert_eq!(gaze.len(), k);
        prop_assert_eq!(valid.iter().filter(|&&v| v).count(), pts.len().min(k));
        prop_assert_eq!(&gaze[..pts.len().min(k)], &pts[..pts.len().min(k)]);
    }

    #[test]
    fn query_tokens_round_trip(class in 0usize..4, m in 3usize..10) {
        let t = query_tokens(class, m);
        prop_assert_eq!(t.len(), m);
        prop_assert_eq!(query_class(&t), Some(class));
    }

    #[test]
    fn epoch_order_is_a_permutation(seed in any::<u64>(), epoch in 0usize..50, n in 0usize..200) {
        let mut order = epoch_order(seed, epoch, n);
        prop_assert_eq!(&order, &epoch_order(seed, epoch, n));
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}

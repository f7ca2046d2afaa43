use contour_core::data::{exact_signed_distance, pad_grid, pad_mask, unpad_grid, unpad_mask, Padding};
use contour_core::metrics::{boundf, connected_components, dice, iou, Connectivity, Mask};
use contour_core::Grid2D;
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = Mask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        proptest::collection::vec(any::<bool>(), h * w).prop_map(move |d| Mask::new(h, w, d).unwrap())
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (Mask, Mask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        (proptest::collection::vec(any::<bool>(), h * w), proptest::collection::vec(any::<bool>(), h * w))
            .prop_map(move |(a, b)| (Mask::new(h, w, a).unwrap(), Mask::new(h, w, b).unwrap()))
    })
}

proptest! {
    #[test]
    fn overlap_scores_are_bounded_and_symmetric((a, b) in pair_strategy(12)) {
        let (d, j) = (dice(&a, &b).unwrap(), iou(&a, &b).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert_eq!(j, iou(&b, &a).unwrap());
        // Dice = 2J / (1 + J)
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
    }

    #[test]
    fn boundf_grows_with_tolerance((a, b) in pair_strategy(10)) {
        let mut prev = 0.0;
        for theta in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0] {
            let f = boundf(&a, &b, theta).unwrap();
            prop_assert!(f >= prev, "theta {theta}: {f} < {prev}");
            prop_assert!(f <= 1.0);
            prev = f;
        }
    }

    #[test]
    fn sdf_sign_matches_mask(m in mask_strategy(16)) {
        let d = exact_signed_distance(&m);
        for i in 0..m.height() {
            for j in 0..m.width() {
                let v = d.at2(i, j);
                if m.get(i, j) { prop_assert!(v >= 1.0) } else { prop_assert!(v <= -1.0) }
            }
        }
    }

    #[test]
    fn sdf_is_one_lipschitz(m in mask_strategy(16)) {
        prop_assume!(m.count() > 0 && m.count() < m.height() * m.width());
        let d = exact_signed_distance(&m);
        for i in 0..m.height() {
            for j in 1..m.width() {
                let (a, b) = (d.at2(i, j - 1), d.at2(i, j));
                // a sign change spans the gap between +1 and -1
                let limit = if (a > 0.0) != (b > 0.0) { 2.0 } else { 1.0 };
                prop_assert!((a - b).abs() <= limit + 1e-12);
            }
        }
    }

    #[test]
    fn padding_round_trips(h in 1usize..20, w in 1usize..20, k in 0usize..4, seed in any::<u64>()) {
        let g = Grid2D::from_fn2(h, w, |i, j| ((i * 31 + j * 17) as u64 ^ seed) as f64);
        let m = Mask::from_fn(h, w, |i, j| (i + j + seed as usize) % 3 == 0);
        let pad = Padding::to_multiple(h, w, 1 << k);
        let (ph, pw) = pad.padded_shape();
        prop_assert!(ph % (1 << k) == 0 && pw % (1 << k) == 0 && ph - h < (1 << k) && pw - w < (1 << k));
        prop_assert_eq!(unpad_grid(&pad_grid(&g, &pad), &pad), g);
        prop_assert_eq!(unpad_mask(&pad_mask(&m, &pad), &pad), m);
    }

    #[test]
    fn eight_connectivity_merges_four(m in mask_strategy(12)) {
        let four = connected_components(&m, Connectivity::Four).count();
        let eight = connected_components(&m, Connectivity::Eight).count();
        prop_assert!(eight <= four);
    }
}

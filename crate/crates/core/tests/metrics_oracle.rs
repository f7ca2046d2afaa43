mod common;

use common::oracles;
use contour_core::metrics::{self, boundf, connected_components, dice, iou, rmse, wcov, Connectivity, Labels, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn from_bits(bits: u32, h: usize, w: usize) -> Mask {
    Mask::from_fn(h, w, |i, j| bits >> (i * w + j) & 1 == 1)
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
    Mask::from_fn(h, w, |_, _| rng.random_bool(p))
}

fn assert_all_equal(a: &Mask, b: &Mask) {
    let (ga, gb) = (oracles::grid(a), oracles::grid(b));
    assert_eq!(dice(a, b).unwrap(), oracles::dice(&ga, &gb));
    assert_eq!(iou(a, b).unwrap(), oracles::iou(&ga, &gb));
    assert_eq!(rmse(a, b).unwrap(), oracles::rmse(&ga, &gb));
    for theta in [0.0, 1.0, 1.5, 2.0, 3.0] {
        assert_eq!(boundf(a, b, theta).unwrap(), oracles::boundf(&ga, &gb, theta), "theta {theta}");
    }
}

#[test]
fn all_3x3_pairs_match_brute_force() {
    for x in 0..512u32 {
        let a = from_bits(x, 3, 3);
        for y in 0..512u32 {
            assert_all_equal(&a, &from_bits(y, 3, 3));
        }
    }
}

#[test]
fn random_8x8_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..1000 {
        let p = [0.1, 0.3, 0.5, 0.7][k % 4];
        let a = random_mask(&mut rng, 8, 8, p);
        let b = random_mask(&mut rng, 8, 8, p);
        assert_all_equal(&a, &b);
    }
}

#[test]
fn components_match_propagation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 0..300 {
        let (h, w) = (rng.random_range(1..14), rng.random_range(1..14));
        let m = random_mask(&mut rng, h, w, [0.3, 0.5, 0.65][k % 3]);
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let labels = connected_components(&m, conn);
            let oracle: Vec<usize> = oracles::components(&oracles::grid(&m), eight).into_iter().flatten().collect();
            assert!(oracles::same_partition(labels.labels(), &oracle), "{h}x{w} eight={eight}");
            let distinct: std::collections::HashSet<_> = oracle.iter().filter(|&&l| l > 0).collect();
            assert_eq!(labels.count(), distinct.len());
        }
    }
}

fn rect(h: usize, w: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Vec<bool> {
    (0..h * w).map(|k| (r0..r1).contains(&(k / w)) && (c0..c1).contains(&(k % w))).collect()
}

#[test]
fn wcov_two_instances_hand_formula() {
    let (h, w) = (10, 12);
    // g1: 3x4 = 12 px, g2: 4x5 = 20 px
    let g1 = rect(h, w, 1, 4, 1, 5);
    let g2 = rect(h, w, 5, 9, 6, 11);
    let labels: Vec<u32> = (0..h * w).map(|k| if g1[k] { 1 } else if g2[k] { 2 } else { 0 }).collect();
    let gt = Labels::from_labels(h, w, labels).unwrap();

    // p1 covers g1 exactly, p2 covers the left 3 columns of g2 plus one extra column
    let p1 = rect(h, w, 1, 4, 1, 5);
    let p2 = rect(h, w, 5, 9, 5, 9);
    let pred = Mask::new(h, w, (0..h * w).map(|k| p1[k] || p2[k]).collect()).unwrap();
    // IoU(g2, p2) = 12 / (20 + 16 - 12)
    let expected = 12.0 / 32.0 * 1.0 + 20.0 / 32.0 * (12.0 / 24.0);
    assert!((wcov(&gt, &pred).unwrap() - expected).abs() < 1e-12);

    // a single prediction blob bridging both instances
    let bridge = Mask::new(h, w, (0..h * w).map(|k| g1[k] || g2[k] || rect(h, w, 3, 6, 4, 7)[k]).collect()).unwrap();
    let blob = bridge.count() as f64;
    let expected = 12.0 / 32.0 * (12.0 / blob) + 20.0 / 32.0 * (20.0 / blob);
    assert!((wcov(&gt, &bridge).unwrap() - expected).abs() < 1e-12);

    // nothing predicted
    assert_eq!(wcov(&gt, &Mask::empty(h, w)).unwrap(), 0.0);
}

#[test]
fn identical_masks_score_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let m = random_mask(&mut rng, 12, 9, 0.4);
        let r = metrics::evaluate("x", &m, &m, 2.0).unwrap();
        assert_eq!((r.dice, r.iou, r.wcov, r.boundf, r.rmse), (1.0, 1.0, 1.0, 1.0, 0.0));
    }
}

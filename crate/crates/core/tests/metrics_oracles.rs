//! Metrics checked against brute-force oracles written independently of the
//! library: per-pixel counting, two-pass union-find labelling and exhaustive
//! bipartite matching.

use ilnet::metrics::{
    detections, evaluate, fa, iou_dataset, label_components, match_targets, niou_dataset, roc_sweep, BinaryMask, Component, ProbMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask_from_code(code: u32, w: usize, h: usize) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| code >> (y * w + x) & 1 == 1)
}

/// Per-pixel IoU and false-alarm ratio of a single pair.
fn pixel_oracle(p: &BinaryMask, g: &BinaryMask) -> (f64, f64) {
    let (w, h) = g.dims();
    let (mut inter, mut union, mut false_alarm) = (0, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (p.get(x, y), g.get(x, y));
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
            if a && !b {
                false_alarm += 1;
            }
        }
    }
    let iou = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    (iou, false_alarm as f64 / (w * h) as f64)
}

/// Two-pass 8-connected labelling with union-find; returns each region as a
/// sorted pixel list, regions sorted.
fn union_find_regions(m: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = m.dims();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            // already-visited neighbours: W, NW, N, NE
            let mut prev = vec![];
            if x > 0 {
                prev.push((x - 1, y));
            }
            if y > 0 {
                prev.push((x, y - 1));
                if x > 0 {
                    prev.push((x - 1, y - 1));
                }
                if x + 1 < w {
                    prev.push((x + 1, y - 1));
                }
            }
            for (nx, ny) in prev {
                if m.get(nx, ny) {
                    let a = root(&mut parent, y * w + x);
                    let b = root(&mut parent, ny * w + nx);
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups = std::collections::BTreeMap::<usize, Vec<(usize, usize)>>::new();
    for y in 0..h {
        for x in 0..w {
            if m.get(x, y) {
                let r = root(&mut parent, y * w + x);
                groups.entry(r).or_default().push((x, y));
            }
        }
    }
    let mut out: Vec<_> = groups.into_values().map(|mut g| {
        g.sort();
        g
    }).collect();
    out.sort();
    out
}

fn library_regions(m: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let mut out: Vec<_> = label_components(m).into_iter().map(|c| {
        let mut p = c.pixels;
        p.sort();
        p
    }).collect();
    out.sort();
    out
}

#[test]
fn iou_and_fa_match_pixel_oracle_on_every_3x3_pair() {
    let masks: Vec<BinaryMask> = (0..512).map(|c| mask_from_code(c, 3, 3)).collect();
    for p in &masks {
        for g in &masks {
            let (iou, false_alarm) = pixel_oracle(p, g);
            let pair = (std::slice::from_ref(p), std::slice::from_ref(g));
            assert_eq!(iou_dataset(pair.0, pair.1).unwrap(), iou);
            assert_eq!(niou_dataset(pair.0, pair.1).unwrap(), iou);
            assert_eq!(fa(pair.0, pair.1).unwrap(), false_alarm);
        }
    }
}

#[test]
fn every_3x3_pair_detects_min_of_component_counts() {
    // every centroid inside a 3×3 grid is within √8 < 3 of every other, so
    // the best assignment detects min(#gt, #pred) targets
    let masks: Vec<BinaryMask> = (0..512).map(|c| mask_from_code(c, 3, 3)).collect();
    let counts: Vec<usize> = masks.iter().map(|m| union_find_regions(m).len()).collect();
    for (p, np) in masks.iter().zip(&counts) {
        for (g, ng) in masks.iter().zip(&counts) {
            let (detected, total) = detections(std::slice::from_ref(p), std::slice::from_ref(g)).unwrap();
            assert_eq!((detected, total), ((*np).min(*ng), *ng));
        }
    }
}

#[test]
fn labelling_matches_union_find_on_every_4x4_mask() {
    for code in 0..1u32 << 16 {
        let m = mask_from_code(code, 4, 4);
        assert_eq!(library_regions(&m), union_find_regions(&m), "code {code:#x}");
    }
}

#[test]
fn labelling_matches_union_find_on_random_32x32_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..200 {
        let density = [0.1, 0.3, 0.45, 0.6][i % 4];
        let m = random_mask(&mut rng, 32, 32, density);
        let comps = label_components(&m);
        assert_eq!(library_regions(&m), union_find_regions(&m), "mask {i}");
        for c in &comps {
            let n = c.pixels.len() as f64;
            let cx = c.pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
            let cy = c.pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
            assert_eq!(c.area, c.pixels.len());
            assert!((c.centroid.0 - cx).abs() < 1e-12 && (c.centroid.1 - cy).abs() < 1e-12);
        }
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_bits(w, h, (0..w * h).map(|_| rng.random_bool(density)).collect()).unwrap()
}

fn dot(x: usize, y: usize) -> BinaryMask {
    BinaryMask::from_fn(16, 16, |px, py| (px, py) == (x, y))
}

#[test]
fn match_distance_boundary() {
    let gt = dot(5, 5);
    // (2,2) offset: √8 ≈ 2.83 counts
    assert_eq!(detections(&[dot(7, 7)], &[gt.clone()]).unwrap(), (1, 1));
    // exactly 3 does not
    assert_eq!(detections(&[dot(8, 5)], &[gt.clone()]).unwrap(), (0, 1));
    assert_eq!(detections(&[dot(5, 2)], &[gt]).unwrap(), (0, 1));
}

/// Largest matching between components whose centroids are closer than 3.
fn max_matching(pred: &[Component], gt: &[Component]) -> usize {
    fn go(j: usize, gt: &[Component], pred: &[Component], used: &mut Vec<bool>) -> usize {
        if j == gt.len() {
            return 0;
        }
        let mut best = go(j + 1, gt, pred, used);
        for k in 0..pred.len() {
            let (a, b) = (gt[j].centroid, pred[k].centroid);
            if !used[k] && (a.0 - b.0).hypot(a.1 - b.1) < 3.0 {
                used[k] = true;
                best = best.max(1 + go(j + 1, gt, pred, used));
                used[k] = false;
            }
        }
        best
    }
    go(0, gt, pred, &mut vec![false; pred.len()])
}

#[test]
fn greedy_matching_against_exhaustive_assignment() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut agree = 0;
    for _ in 0..2000 {
        let sparse = |rng: &mut ChaCha8Rng| {
            let pts: Vec<(usize, usize)> = (0..rng.random_range(0..5)).map(|_| (rng.random_range(0..12), rng.random_range(0..12))).collect();
            BinaryMask::from_fn(12, 12, |x, y| pts.contains(&(x, y)))
        };
        let (p, g) = (sparse(&mut rng), sparse(&mut rng));
        let (pc, gc) = (label_components(&p), label_components(&g));
        let greedy = match_targets(&pc, &gc);
        let best = max_matching(&pc, &gc);
        // greedy never exceeds the optimum and never matches out of range
        assert!(greedy <= best);
        // a maximal matching is at least half the maximum
        assert!(2 * greedy >= best);
        agree += (greedy == best) as usize;
    }
    assert!(agree >= 1900, "greedy optimal on {agree}/2000");
}

#[test]
fn evaluate_agrees_with_the_separate_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds: Vec<BinaryMask> = (0..6).map(|_| random_mask(&mut rng, 20, 20, 0.05)).collect();
    let gts: Vec<BinaryMask> = (0..6).map(|_| random_mask(&mut rng, 20, 20, 0.05)).collect();
    let r = evaluate(&preds, &gts).unwrap();
    assert_eq!(r.iou, iou_dataset(&preds, &gts).unwrap());
    assert_eq!(r.niou, niou_dataset(&preds, &gts).unwrap());
    assert_eq!(r.fa, fa(&preds, &gts).unwrap());
    let (d, t) = detections(&preds, &gts).unwrap();
    assert_eq!((r.detected, r.gt_targets), (d, t));
}

#[test]
fn roc_false_alarms_grow_as_threshold_drops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let maps: Vec<ProbMap> =
        (0..4).map(|_| ProbMap { width: 16, height: 16, values: (0..256).map(|_| rng.random::<f32>()).collect() }).collect();
    let gts: Vec<BinaryMask> = (0..4).map(|i| BinaryMask::from_fn(16, 16, |x, y| x / 4 == i && y / 4 == i)).collect();
    let thresholds: Vec<f64> = (0..=20).map(|i| 1.000001 - i as f64 / 20.0).map(|t| t.max(0.0)).collect();
    let points = roc_sweep(&maps, &gts, &thresholds).unwrap();
    assert_eq!((points[0].pd, points[0].fa), (0.0, 0.0));
    for w in points.windows(2) {
        assert!(w[1].fa >= w[0].fa);
    }
}

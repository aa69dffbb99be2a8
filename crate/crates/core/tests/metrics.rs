use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uma_core::bbox::BBox;
use uma_core::metrics::{evaluate, scenarios};
use uma_core::mot_io::{eval_gt, gen_synthetic_sequence, DetectionRow, RandomIdentities, SyntheticSpec};

fn identity_holds(r: &uma_core::metrics::MetricsReport) {
    if r.total_gt > 0 {
        let expect = 1.0 - (r.fp + r.fn_ + r.ids) as f64 / r.total_gt as f64;
        assert!((r.mota() - expect).abs() < 1e-12);
    }
}

#[test]
fn handcrafted_mota() {
    let (gt, hyp) = scenarios::mota_point_six();
    let r = evaluate("s", &gt, &hyp, 0.5).unwrap();
    assert_eq!(r.total_gt, 10);
    assert_eq!((r.fp, r.fn_, r.ids), (1, 2, 1));
    assert_eq!(format!("{:.6}", r.mota()), "0.600000");
    identity_holds(&r);
}

#[test]
fn swapped_ids_halve_idf1() {
    let (gt, hyp) = scenarios::id_swap();
    let r = evaluate("s", &gt, &hyp, 0.5).unwrap();
    assert_eq!(r.idf1(), 0.5);
    assert_eq!(r.mota(), 1.0 - 2.0 / 8.0);
    identity_holds(&r);
}

#[test]
fn perfect_tracking() {
    let (gt, hyp) = scenarios::perfect();
    let r = evaluate("s", &gt, &hyp, 0.5).unwrap();
    assert_eq!((r.mota(), r.motp(), r.idf1()), (1.0, 1.0, 1.0));
    assert_eq!((r.mt_percent(), r.ml_percent()), (100.0, 0.0));
}

#[test]
fn coverage_boundaries() {
    let gt: Vec<DetectionRow> = (1..=10)
        .map(|f| DetectionRow::new(f, 1, BBox { x: 0.0, y: 0.0, w: 10.0, h: 10.0 }, 1.0))
        .collect();
    let r = evaluate("s", &gt, &gt[..8], 0.5).unwrap();
    assert_eq!(r.mt_percent(), 100.0);
    let r = evaluate("s", &gt, &gt[..2], 0.5).unwrap();
    assert_eq!(r.ml_percent(), 100.0);
    let r = evaluate("s", &gt, &gt[..5], 0.5).unwrap();
    assert_eq!((r.mt_percent(), r.ml_percent()), (0.0, 0.0));
}

#[test]
fn synthetic_gt_is_perfect_and_relabel_invariant() {
    for seed in 0..5 {
        let spec = SyntheticSpec::empty("s", 200, 150, 30, seed).with_random_identities(&RandomIdentities {
            count: 5,
            ..Default::default()
        });
        let gt = eval_gt(&gen_synthetic_sequence(&spec).unwrap().gt);
        let r = evaluate("s", &gt, &gt, 0.5).unwrap();
        assert_eq!((r.mota(), r.idf1()), (1.0, 1.0));

        // noisy hypothesis, then the same with ids permuted
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hyp: Vec<DetectionRow> = Vec::new();
        for r in &gt {
            if rng.random::<f64>() < 0.2 {
                continue;
            }
            let mut h = r.clone();
            h.bbox.x += rng.random_range(-6.0..6.0);
            if r.frame > 15 && r.id == 1 {
                h.id = 2;
            } else if r.frame > 15 && r.id == 2 {
                h.id = 1;
            }
            hyp.push(h);
        }
        let perm = [0, 4, 5, 1, 3, 2];
        let relabeled: Vec<DetectionRow> = hyp
            .iter()
            .map(|r| {
                let mut h = r.clone();
                h.id = perm[r.id as usize] + 10;
                h
            })
            .collect();
        let a = evaluate("s", &gt, &hyp, 0.5).unwrap();
        let b = evaluate("s", &gt, &relabeled, 0.5).unwrap();
        identity_holds(&a);
        assert_eq!((a.fp, a.fn_, a.ids, a.idtp, a.matches), (b.fp, b.fn_, b.ids, b.idtp, b.matches));
        assert!((a.motp() - b.motp()).abs() < 1e-12);
    }
}

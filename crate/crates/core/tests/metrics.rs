#[path = "support/metrics_oracle.rs"]
mod oracle;

use fedod::detmetrics::{evaluate, SizeBuckets};
use fedod::synthdata::BBox;
use fedod::tinydet::Detection;
use fedod::Rng;

fn report(images: &[(Vec<Detection>, Vec<BBox>)]) -> fedod::detmetrics::EvalReport {
    let dets: Vec<Vec<Detection>> = images.iter().map(|i| i.0.clone()).collect();
    let truths: Vec<Vec<BBox>> = images.iter().map(|i| i.1.clone()).collect();
    evaluate(&dets, &truths, 2, &SizeBuckets::default()).unwrap()
}

#[test]
fn single_scenes_match_brute_force() {
    let mut rng = Rng::new(2024);
    for _ in 0..300 {
        let scene = vec![oracle::random_scene(&mut rng)];
        let r = report(&scene);
        let (m50, m5095) = oracle::map(&scene, 2);
        assert!((r.map50 - m50).abs() < 1e-9, "{scene:?}: {} vs {m50}", r.map50);
        assert!((r.ap_5095 - m5095).abs() < 1e-9, "{scene:?}: {} vs {m5095}", r.ap_5095);
    }
}

#[test]
fn multi_image_sets_match_brute_force() {
    let mut rng = Rng::new(77);
    for _ in 0..100 {
        let images: Vec<_> = (0..1 + rng.below(4)).map(|_| oracle::random_scene(&mut rng)).collect();
        let r = report(&images);
        let (m50, m5095) = oracle::map(&images, 2);
        assert!((r.map50 - m50).abs() < 1e-9);
        assert!((r.ap_5095 - m5095).abs() < 1e-9);
    }
}

#[test]
fn hand_example_tp_fp_tp_over_two_truths() {
    let t1 = BBox::new(0, 0.25, 0.25, 0.2, 0.2);
    let t2 = BBox::new(0, 0.75, 0.75, 0.2, 0.2);
    let dets = vec![
        Detection {
            bbox: t1,
            confidence: 0.9,
        },
        Detection {
            bbox: BBox::new(0, 0.5, 0.9, 0.1, 0.1),
            confidence: 0.8,
        },
        Detection {
            bbox: t2,
            confidence: 0.7,
        },
    ];
    let images = vec![(dets, vec![t1, t2])];
    // recall 0.5 at precision 1, then recall 1 at precision 2/3:
    // (51 * 1 + 50 * 2/3) / 101
    let expected = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    assert!((report(&images).map50 - expected).abs() < 1e-12);
    assert!((oracle::map(&images, 1).0 - expected).abs() < 1e-12);
    assert!((expected - 0.8350).abs() < 5e-5);
}

//! Seeded fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use synthdet_core::annotation::RawDetection;
use synthdet_core::eval::{ImageGroundTruth, ImagePredictions};
use synthdet_core::{BoundingBox, ScoredBox};

fn random_box(rng: &mut ChaCha8Rng, w: f64, h: f64) -> BoundingBox {
    let (bw, bh) = (rng.random_range(8.0..60.0), rng.random_range(8.0..60.0));
    let (x, y) = (rng.random_range(0.0..w - bw), rng.random_range(0.0..h - bh));
    BoundingBox::new(x, y, x + bw, y + bh).expect("positive size")
}

pub fn scored_boxes(n: usize, seed: u64) -> Vec<ScoredBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| ScoredBox::new(random_box(&mut rng, 1280.0, 704.0), rng.random_range(0.0..1.0)).expect("valid"))
        .collect()
}

/// Mostly apples with some foreign classes, confidences spread over [0, 1).
pub fn raw_detections(n: usize, seed: u64) -> Vec<RawDetection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let class = if rng.random_bool(0.85) { "apple" } else { "leaf" };
            RawDetection::new(random_box(&mut rng, 1280.0, 704.0), class, rng.random_range(0.0..1.0)).expect("valid")
        })
        .collect()
}

/// `images` images with `per_image` truth boxes and jittered predictions,
/// some of them spurious.
pub fn eval_set(images: usize, per_image: usize, seed: u64) -> (ImagePredictions, ImageGroundTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut preds = ImagePredictions::new();
    let mut gts = ImageGroundTruth::new();
    for i in 0..images {
        let id = format!("img-{i:05}");
        let truth: Vec<BoundingBox> = (0..per_image).map(|_| random_box(&mut rng, 1280.0, 704.0)).collect();
        let mut p = Vec::new();
        for b in &truth {
            if rng.random_bool(0.9) {
                let [x0, y0, x1, y1] = b.corners();
                let d = rng.random_range(-3.0..3.0);
                let jittered = BoundingBox::new((x0 + d).max(0.0), (y0 + d).max(0.0), x1 + d, y1 + d).expect("valid");
                p.push(ScoredBox::new(jittered, rng.random_range(0.3..1.0)).expect("valid"));
            }
        }
        for _ in 0..per_image / 4 {
            p.push(ScoredBox::new(random_box(&mut rng, 1280.0, 704.0), rng.random_range(0.0..0.6)).expect("valid"));
        }
        preds.insert(id.clone(), p);
        gts.insert(id, truth);
    }
    (preds, gts)
}

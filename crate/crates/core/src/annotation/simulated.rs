//! A stand-in for a pretrained detector on mock scenes: perturbs the scene
//! truth into raw detections with the failure modes the filter stages are
//! meant to remove (duplicate boxes, foreign classes, low-confidence noise,
//! apples lying on the ground).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{RawDetection, APPLE};
use crate::genclient::MockSceneTruth;
use crate::geometry::BoundingBox;

const DISTRACTOR_CLASSES: [&str; 3] = ["orange", "sports ball", "potted plant"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedDetector {
    /// Extra overlapping boxes emitted per apple, all above the default
    /// confidence threshold.
    pub duplicates_per_apple: usize,
    /// Maximum duplicate offset as a fraction of the apple radius.
    pub duplicate_shift: f64,
    /// Confident detections of non-apple classes.
    pub distractors: usize,
    /// Apple-labelled detections below 0.70 confidence.
    pub low_confidence_noise: usize,
    /// Whether apples lying on the ground are detected too.
    pub detect_ground_apples: bool,
}

impl Default for SimulatedDetector {
    fn default() -> Self {
        Self {
            duplicates_per_apple: 1,
            duplicate_shift: 0.15,
            distractors: 2,
            low_confidence_noise: 2,
            detect_ground_apples: true,
        }
    }
}

impl SimulatedDetector {
    pub fn detect(&self, truth: &MockSceneTruth) -> Vec<RawDetection> {
        let mut rng = ChaCha8Rng::seed_from_u64(truth.seed ^ 0x5EED_DE7E_C7ED_0001);
        let (w, h) = (f64::from(truth.width), f64::from(truth.height));
        let clamp_box = |x0: f64, y0: f64, x1: f64, y1: f64| {
            BoundingBox::new(x0.max(0.0), y0.max(0.0), x1.min(w), y1.min(h)).ok()
        };
        let mut out = Vec::new();

        for apple in &truth.apples {
            if !apple.on_tree && !self.detect_ground_apples {
                continue;
            }
            let main_conf = rng.random_range(0.85..0.99);
            let r = f64::from(apple.radius);
            let (cx, cy) = (f64::from(apple.cx), f64::from(apple.cy));
            if let Some(b) = clamp_box(cx - r, cy - r, cx + r, cy + r) {
                out.push(RawDetection {
                    bbox: b,
                    class_label: APPLE.to_string(),
                    confidence: main_conf,
                });
            }
            for _ in 0..self.duplicates_per_apple {
                let max = self.duplicate_shift * r;
                let dx = rng.random_range(-max..=max);
                let dy = rng.random_range(-max..=max);
                let s = r * rng.random_range(0.9..1.1);
                let conf = rng.random_range(0.70..main_conf);
                if let Some(b) = clamp_box(cx + dx - s, cy + dy - s, cx + dx + s, cy + dy + s) {
                    out.push(RawDetection {
                        bbox: b,
                        class_label: APPLE.to_string(),
                        confidence: conf,
                    });
                }
            }
        }

        let random_box = |rng: &mut ChaCha8Rng| {
            let s = rng.random_range(4.0..(w.min(h) / 6.0).max(5.0));
            let x = rng.random_range(0.0..(w - s).max(1.0));
            let y = rng.random_range(0.0..(h - s).max(1.0));
            clamp_box(x, y, x + s, y + s)
        };
        for i in 0..self.distractors {
            let conf = rng.random_range(0.5..1.0);
            if let Some(b) = random_box(&mut rng) {
                out.push(RawDetection {
                    bbox: b,
                    class_label: DISTRACTOR_CLASSES[i % DISTRACTOR_CLASSES.len()].to_string(),
                    confidence: conf,
                });
            }
        }
        for _ in 0..self.low_confidence_noise {
            let conf = rng.random_range(0.05..0.65);
            if let Some(b) = random_box(&mut rng) {
                out.push(RawDetection {
                    bbox: b,
                    class_label: APPLE.to_string(),
                    confidence: conf,
                });
            }
        }
        out
    }
}

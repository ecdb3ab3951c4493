//! Color-blob annotator for rendered orchard scenes.
//!
//! Pixels are classified as red-apple, yellow-apple or background; each
//! 4-connected component of one apple color becomes a detection. Confidence
//! is the component's fill ratio against the ellipse inscribed in its box,
//! clamped to `[0, 1]`, so round blobs score close to 1.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::annotation::{RawDetection, APPLE};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlobColor {
    Red,
    Yellow,
}

impl BlobColor {
    pub fn classify(px: [u8; 3]) -> Option<Self> {
        let [r, g, b] = px;
        if r >= 150 && g <= 90 && b <= 90 {
            Some(BlobColor::Red)
        } else if r >= 180 && g >= 150 && b <= 100 {
            Some(BlobColor::Yellow)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobAnnotator {
    /// Components smaller than this many pixels are ignored.
    pub min_area: usize,
    pub class_label: String,
}

impl Default for BlobAnnotator {
    fn default() -> Self {
        Self {
            min_area: 12,
            class_label: APPLE.to_string(),
        }
    }
}

impl BlobAnnotator {
    pub fn annotate(&self, img: &RgbImage) -> Vec<RawDetection> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let colors: Vec<Option<BlobColor>> = img.pixels().map(|p| BlobColor::classify(p.0)).collect();
        let mut seen = vec![false; w * h];
        let mut out = Vec::new();
        let mut stack = Vec::new();

        for start in 0..w * h {
            let Some(color) = colors[start] else { continue };
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut count = 0usize;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                count += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |j: usize| {
                    if !seen[j] && colors[j] == Some(color) {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if count < self.min_area {
                continue;
            }
            let (bw, bh) = ((x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64);
            let ellipse = std::f64::consts::FRAC_PI_4 * bw * bh;
            let confidence = (count as f64 / ellipse).clamp(0.0, 1.0);
            let bbox = BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64)
                .expect("pixel extents are non-empty");
            out.push(RawDetection {
                bbox,
                class_label: self.class_label.clone(),
                confidence,
            });
        }
        out
    }
}

//! Deterministic procedural orchard scenes with known apple positions.
//!
//! The rasterizer draws flat shapes with no anti-aliasing and only integer
//! arithmetic, so a `(job, scene)` pair always yields the same pixels. A
//! pixel belongs to a circle when its center lies inside it; with integer
//! centers and radii the filled pixels span exactly the circle's bounding
//! square.

use image::{ImageEncoder, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GenerationJob;
use crate::error::Result;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppleColor {
    Red,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppleCircle {
    pub cx: i32,
    pub cy: i32,
    pub radius: i32,
    pub color: AppleColor,
    pub on_tree: bool,
}

impl AppleCircle {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::around_circle(
            f64::from(self.cx),
            f64::from(self.cy),
            f64::from(self.radius),
        )
        .expect("apple radius is positive")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSceneTruth {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub apples: Vec<AppleCircle>,
    /// Ground-truth boxes; restricted to on-tree apples when the scene was
    /// rendered with `truth_on_tree_only`.
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    /// Inclusive range for the total apple count.
    pub apple_count: [u32; 2],
    /// Share of apples placed on the ground below the tree.
    pub ground_fraction: f64,
    /// When false, apples keep a gap between each other.
    pub allow_overlap: bool,
    /// Share of on-tree apples partly covered by a leaf blob.
    pub occlusion_fraction: f64,
    /// Only on-tree apples get ground-truth boxes.
    pub truth_on_tree_only: bool,
    /// Inclusive apple radius range in pixels; derived from image size when unset.
    pub apple_radius: Option<[u32; 2]>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            apple_count: [6, 14],
            ground_fraction: 0.2,
            allow_overlap: false,
            occlusion_fraction: 0.0,
            truth_on_tree_only: true,
            apple_radius: None,
        }
    }
}

impl SceneParams {
    /// Unoccluded scenes with every apple on the tree.
    pub fn unoccluded() -> Self {
        Self {
            ground_fraction: 0.0,
            occlusion_fraction: 0.0,
            ..Self::default()
        }
    }
}

const TRUNK: [u8; 3] = [95, 65, 40];
const CANOPY: [[u8; 3]; 3] = [[38, 104, 36], [46, 118, 42], [32, 94, 30]];
const RED_APPLE: [u8; 3] = [206, 32, 36];
const YELLOW_APPLE: [u8; 3] = [236, 204, 46];

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn fill_circle(&mut self, cx: i32, cy: i32, r: i32, color: [u8; 3]) {
        let (w, h) = (self.img.width() as i32, self.img.height() as i32);
        let r2x4 = 4 * i64::from(r) * i64::from(r);
        for py in (cy - r).max(0)..(cy + r).min(h) {
            let dy = i64::from(2 * py + 1 - 2 * cy);
            for px in (cx - r).max(0)..(cx + r).min(w) {
                let dx = i64::from(2 * px + 1 - 2 * cx);
                if dx * dx + dy * dy <= r2x4 {
                    self.img.put_pixel(px as u32, py as u32, Rgb(color));
                }
            }
        }
    }

    fn fill_rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, color: [u8; 3]) {
        let (w, h) = (self.img.width() as i32, self.img.height() as i32);
        for py in y0.max(0)..y1.min(h) {
            for px in x0.max(0)..x1.min(w) {
                self.img.put_pixel(px as u32, py as u32, Rgb(color));
            }
        }
    }
}

fn lerp(a: u8, b: u8, num: u32, den: u32) -> u8 {
    let (a, b) = (i64::from(a), i64::from(b));
    (a + (b - a) * i64::from(num) / i64::from(den.max(1))) as u8
}

struct Tree {
    canopy: Vec<(i32, i32, i32)>,
}

impl Tree {
    /// A point inside some canopy circle where an apple of radius `r` fits.
    fn sample_apple_center(&self, rng: &mut ChaCha8Rng, r: i32) -> Option<(i32, i32)> {
        let &(ccx, ccy, cr) = &self.canopy[rng.random_range(0..self.canopy.len())];
        let reach = cr - r;
        if reach <= 0 {
            return None;
        }
        let dx = rng.random_range(-reach..=reach);
        let dy = rng.random_range(-reach..=reach);
        if dx * dx + dy * dy > reach * reach {
            return None;
        }
        Some((ccx + dx, ccy + dy))
    }
}

/// Renders the scene for `job` (its size and seed) and returns the pixels
/// together with the apple truth.
pub fn render_scene(job: &GenerationJob, scene: &SceneParams) -> (RgbImage, MockSceneTruth) {
    let (w, h) = (job.width.max(1), job.height.max(1));
    let (wi, hi) = (w as i32, h as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut canvas = Canvas {
        img: RgbImage::new(w, h),
    };

    // sky and grass
    let horizon = (hi * 11 / 20).max(1);
    for y in 0..hi {
        let color = if y < horizon {
            let n = y as u32;
            let d = horizon as u32;
            [lerp(110, 190, n, d), lerp(160, 222, n, d), lerp(228, 248, n, d)]
        } else {
            let n = (y - horizon) as u32;
            let d = (hi - horizon) as u32;
            [lerp(72, 56, n, d), lerp(142, 122, n, d), lerp(54, 44, n, d)]
        };
        canvas.fill_rect(0, y, wi, y + 1, color);
    }

    // tree
    let short = wi.min(hi);
    let ground_line = horizon + (hi - horizon) * 2 / 5;
    let trunk_x = wi / 2 + rng.random_range(-(wi / 10)..=(wi / 10).max(0));
    let canopy_cy = hi * 8 / 25;
    let trunk_half = (wi / 60).max(1);
    canvas.fill_rect(trunk_x - trunk_half, canopy_cy, trunk_x + trunk_half, ground_line, TRUNK);

    let blobs = rng.random_range(6..=9);
    let mut canopy = Vec::with_capacity(blobs);
    for i in 0..blobs {
        let r = rng.random_range((short * 3 / 25).max(3)..=(short / 5).max(4));
        let cx = trunk_x + rng.random_range(-(short / 4)..=(short / 4).max(0));
        let cy = canopy_cy + rng.random_range(-(short / 8)..=(short / 8).max(0));
        canvas.fill_circle(cx, cy, r, CANOPY[i % CANOPY.len()]);
        canopy.push((cx, cy, r));
    }
    let tree = Tree { canopy };

    // apples
    let [rmin, rmax] = scene.apple_radius.unwrap_or_else(|| {
        let lo = (short / 40).max(4) as u32;
        [lo, ((short / 25).max(6) as u32).max(lo)]
    });
    let [cmin, cmax] = scene.apple_count;
    let count = rng.random_range(cmin.min(cmax)..=cmax.max(cmin));
    let ground = ((f64::from(count) * scene.ground_fraction.clamp(0.0, 1.0)).round() as u32).min(count);
    let on_tree = count - ground;

    let mut apples: Vec<AppleCircle> = Vec::with_capacity(count as usize);
    let fits = |apples: &[AppleCircle], cx: i32, cy: i32, r: i32| {
        if cx - r < 0 || cy - r < 0 || cx + r > wi || cy + r > hi {
            return false;
        }
        scene.allow_overlap
            || apples.iter().all(|a| {
                let gap = (a.radius.max(r) * 3 / 10).max(2);
                let min_d = i64::from(a.radius + r + gap);
                let (dx, dy) = (i64::from(a.cx - cx), i64::from(a.cy - cy));
                dx * dx + dy * dy >= min_d * min_d
            })
    };

    for i in 0..count {
        let tree_apple = i < on_tree;
        let r = rng.random_range(rmin.min(rmax)..=rmax.max(rmin)) as i32;
        let color = if rng.random_bool(0.5) {
            AppleColor::Red
        } else {
            AppleColor::Yellow
        };
        let mut placed = None;
        let mut fallback = None;
        for _ in 0..4000 {
            let candidate = if tree_apple {
                tree.sample_apple_center(&mut rng, r)
            } else {
                let lo_y = (ground_line + r).min(hi - r);
                Some((rng.random_range(r..=(wi - r).max(r)), rng.random_range(lo_y..=(hi - r).max(lo_y))))
            };
            let Some((cx, cy)) = candidate else { continue };
            if cx - r < 0 || cy - r < 0 || cx + r > wi || cy + r > hi {
                continue;
            }
            fallback.get_or_insert((cx, cy));
            if fits(&apples, cx, cy, r) {
                placed = Some((cx, cy));
                break;
            }
        }
        // a crowded canopy may force an overlap rather than dropping the apple
        let (cx, cy) = placed.or(fallback).unwrap_or((wi / 2, hi / 2));
        let r = r.min(cx).min(cy).min(wi - cx).min(hi - cy).max(1);
        apples.push(AppleCircle {
            cx,
            cy,
            radius: r,
            color,
            on_tree: tree_apple,
        });
    }

    for a in &apples {
        let color = match a.color {
            AppleColor::Red => RED_APPLE,
            AppleColor::Yellow => YELLOW_APPLE,
        };
        canvas.fill_circle(a.cx, a.cy, a.radius, color);
    }

    // leaf occluders over a share of the on-tree apples
    for a in apples.iter().filter(|a| a.on_tree) {
        if scene.occlusion_fraction > 0.0 && rng.random_bool(scene.occlusion_fraction.clamp(0.0, 1.0)) {
            let angle = rng.random_range(0..4);
            let (ox, oy) = [(1, 0), (-1, 0), (0, 1), (0, -1)][angle];
            let lr = (a.radius * 3 / 5).max(1);
            canvas.fill_circle(a.cx + ox * a.radius * 2 / 3, a.cy + oy * a.radius * 2 / 3, lr, CANOPY[1]);
        }
    }

    let boxes = apples
        .iter()
        .filter(|a| a.on_tree || !scene.truth_on_tree_only)
        .map(AppleCircle::bbox)
        .collect();
    let truth = MockSceneTruth {
        seed: job.seed,
        width: w,
        height: h,
        apples,
        boxes,
    };
    (canvas.img, truth)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}

/// Renders the scene for the job's own seed and returns PNG bytes plus truth.
pub fn mock_generate(job: &GenerationJob, scene: &SceneParams) -> Result<(Vec<u8>, MockSceneTruth)> {
    let (img, truth) = render_scene(job, scene);
    Ok((encode_png(&img)?, truth))
}

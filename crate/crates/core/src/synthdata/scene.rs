use super::ppm::{from_byte, to_byte};
use super::{Category, DatasetConfig};
use crate::autodiff::Tensor;
use crate::error::Result;
use crate::rng::SplitMix64;

/// Grayscale value of an RGB pixel.
pub fn luminance(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn quantize(v: f32) -> f32 {
    from_byte(to_byte(v))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneTriplet {
    /// `[3, H, W]`, the luminance of `target` (on the 8-bit grid) in every channel.
    pub source: Tensor<f32>,
    /// `[3, H, W]` RGB.
    pub target: Tensor<f32>,
    /// `[3, H, W]` palette color of each pixel's category.
    pub semantic: Tensor<f32>,
    /// Row-major `H × W` category labels.
    pub category_grid: Vec<u8>,
}

/// Vehicle count weights for 0, 1 and 2 vehicles.
const VEHICLE_WEIGHTS: [f64; 3] = [0.05, 0.475, 0.475];

struct Canvas {
    size: usize,
    grid: Vec<u8>,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn paint(&mut self, y: usize, x: usize, cat: Category, color: [f64; 3]) {
        let i = y * self.size + x;
        self.grid[i] = cat.label();
        self.rgb[i] = color;
    }

    fn rect(
        &mut self,
        y0: usize,
        y1: usize,
        x0: usize,
        x1: usize,
        cat: Category,
        color: impl Fn(usize, usize) -> [f64; 3],
    ) {
        for y in y0..y1.min(self.size) {
            for x in x0..x1.min(self.size) {
                self.paint(y, x, cat, color(y, x));
            }
        }
    }
}

fn jitter(base: [f64; 3], amount: f64, rng: &mut SplitMix64) -> [f64; 3] {
    base.map(|c| c + rng.uniform(-amount, amount))
}

fn frac(size: usize, rng: &mut SplitMix64, lo: f64, hi: f64) -> usize {
    (size as f64 * rng.uniform(lo, hi)).round() as usize
}

/// Draws one scene from `seed`.
///
/// Layers, back to front: sky band, ground band of vegetation, road band,
/// one to three buildings, vegetation blobs, then zero to two vehicles.
/// Categories at or beyond `config.categories` are not drawn.
pub fn generate_scene(seed: u64, config: &DatasetConfig) -> Result<SceneTriplet> {
    config.validate()?;
    let s = config.image_size;
    let k = config.categories;
    let has = |c: Category| (c.label() as usize) < k;
    let mut rng = SplitMix64::new(seed);
    let mut cv = Canvas {
        size: s,
        grid: vec![0; s * s],
        rgb: vec![[0.0; 3]; s * s],
    };

    let horizon = frac(s, &mut rng, 0.38, 0.5);
    let road_top = frac(s, &mut rng, 0.66, 0.76);
    let sky = jitter([0.55, 0.72, 0.92], 0.06, &mut rng);
    cv.rect(0, horizon, 0, s, Category::Sky, |y, _| {
        let t = y as f64 / horizon as f64;
        [sky[0] + 0.2 * t, sky[1] + 0.12 * t, sky[2] + 0.04 * t]
    });
    let ground_cat = if has(Category::Vegetation) {
        Category::Vegetation
    } else {
        Category::Road
    };
    let ground = jitter([0.2, 0.42, 0.12], 0.05, &mut rng);
    cv.rect(horizon, road_top, 0, s, ground_cat, |_, _| ground);
    let road = jitter([0.42, 0.42, 0.45], 0.05, &mut rng);
    let lane = (road_top + s) / 2;
    cv.rect(road_top, s, 0, s, Category::Road, |y, x| {
        if y == lane && (x / 3) % 2 == 0 {
            [0.9, 0.9, 0.85]
        } else {
            road
        }
    });

    if has(Category::Building) {
        let n = rng.range_inclusive(1, 3) as usize;
        for _ in 0..n {
            let w = frac(s, &mut rng, 0.12, 0.25).max(3);
            let x0 = rng.below(s - w + 1);
            let top = frac(s, &mut rng, 0.05, 0.22).max(1);
            let bottom = horizon + rng.below(3);
            let shade = rng.uniform(0.3, 0.7);
            let wall = jitter([shade + 0.08, shade, shade - 0.06], 0.05, &mut rng);
            let lit = [wall[0] + 0.25, wall[1] + 0.22, wall[2] + 0.1];
            cv.rect(top, bottom, x0, x0 + w, Category::Building, |y, x| {
                if (y - top) % 3 == 1 && (x - x0) % 2 == 1 {
                    lit
                } else {
                    wall
                }
            });
        }
    }

    if has(Category::Vegetation) {
        let n = rng.range_inclusive(1, 3) as usize;
        for _ in 0..n {
            let r = s as f64 * rng.uniform(0.06, 0.12);
            let cy = rng.uniform(horizon as f64 - 2.0, road_top as f64);
            let cx = rng.uniform(0.0, s as f64);
            let leaf = jitter([0.16, 0.36, 0.1], 0.05, &mut rng);
            for y in 0..s {
                for x in 0..s {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    if dy * dy + dx * dx <= r * r {
                        cv.paint(y, x, Category::Vegetation, leaf);
                    }
                }
            }
        }
    }

    if has(Category::Vehicle) {
        let u = rng.next_f64();
        let n = if u < VEHICLE_WEIGHTS[0] {
            0
        } else if u < VEHICLE_WEIGHTS[0] + VEHICLE_WEIGHTS[1] {
            1
        } else {
            2
        };
        const BODIES: [[f64; 3]; 4] = [
            [0.8, 0.12, 0.1],
            [0.12, 0.2, 0.75],
            [0.92, 0.92, 0.9],
            [0.9, 0.78, 0.1],
        ];
        for _ in 0..n {
            let w = frac(s, &mut rng, 0.15, 0.25).max(3);
            let h = frac(s, &mut rng, 0.08, 0.12).max(2);
            let x0 = rng.below(s - w + 1);
            let lo = (road_top + h).min(s);
            let y1 = lo + rng.below(s - lo + 1);
            let body = jitter(BODIES[rng.below(BODIES.len())], 0.05, &mut rng);
            cv.rect(y1 - h, y1, x0, x0 + w, Category::Vehicle, |y, _| {
                if y + 1 == y1 {
                    [0.08, 0.08, 0.08]
                } else {
                    body
                }
            });
        }
    }

    let plane = s * s;
    let mut target = vec![0.0f32; 3 * plane];
    let mut source = vec![0.0f32; 3 * plane];
    let mut semantic = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        let grain = rng.uniform(-0.04, 0.04);
        // Pixels sit on the 8-bit grid so that a dataset read back from PPM
        // is bit-identical to the in-memory one.
        let px = cv.rgb[i].map(|c| quantize(((c + grain).clamp(0.0, 1.0) * 2.0 - 1.0) as f32));
        let lum = quantize(luminance(px[0], px[1], px[2]));
        let sem = config.palette.color(cv.grid[i]);
        for c in 0..3 {
            target[c * plane + i] = px[c];
            source[c * plane + i] = lum;
            semantic[c * plane + i] = sem[c];
        }
    }
    Ok(SceneTriplet {
        source: Tensor::new([3, s, s], source)?,
        target: Tensor::new([3, s, s], target)?,
        semantic: Tensor::new([3, s, s], semantic)?,
        category_grid: cv.grid,
    })
}

//! Procedural plane-stack scenes with exact disparity ground truth.
//!
//! A scene is a stack of opaque textured layers, each at a constant
//! disparity. View `(u, v)` sees layer `k` sampled at `(x + d_k u, y + d_k v)`,
//! so refocusing with `alpha = d_k` brings layer `k` into alignment. Textures
//! and silhouettes are evaluated analytically at continuous coordinates, so
//! sub-pixel disparities render without resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lightfield::{DisparityMap, LightField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerShape {
    Full,
    Rect { cx: f64, cy: f64, half_w: f64, half_h: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl LayerShape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            LayerShape::Full => true,
            LayerShape::Rect { cx, cy, half_w, half_h } => (x - cx).abs() <= half_w && (y - cy).abs() <= half_h,
            LayerShape::Ellipse { cx, cy, rx, ry } => {
                let (a, b) = ((x - cx) / rx, (y - cy) / ry);
                a * a + b * b <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Pattern {
    /// Checkerboard with square `period`, rotated by `angle` radians.
    Checker { period: f64, angle: f64 },
    /// Fractal value noise with base feature size `scale` pixels.
    Noise { scale: f64, octaves: u32, seed: u64 },
    /// Linear ramp across `span` pixels along `angle`.
    Gradient { angle: f64, span: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub pattern: Pattern,
    /// Colors mixed by the pattern value; each component in `[0,1]`.
    pub colors: [[f64; 3]; 2],
}

impl Texture {
    fn eval(&self, x: f64, y: f64, out: &mut [f64; 3]) {
        let t = match self.pattern {
            Pattern::Checker { period, angle } => {
                let (s, c) = angle.sin_cos();
                let (xr, yr) = (c * x + s * y, -s * x + c * y);
                let k = (xr / period).floor() as i64 + (yr / period).floor() as i64;
                k.rem_euclid(2) as f64
            }
            Pattern::Noise { scale, octaves, seed } => fbm(x / scale, y / scale, octaves.max(1), seed),
            Pattern::Gradient { angle, span } => {
                let (s, c) = angle.sin_cos();
                (0.5 + (c * x + s * y) / span).rem_euclid(1.0)
            }
        };
        for ch in 0..3 {
            out[ch] = self.colors[0][ch] + (self.colors[1][ch] - self.colors[0][ch]) * t;
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, seed: u64) -> f64 {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(ix, iy, seed);
    let b = lattice(ix + 1, iy, seed);
    let c = lattice(ix, iy + 1, seed);
    let d = lattice(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bottom = c + (d - c) * sx;
    top + (bottom - top) * sy
}

fn fbm(x: f64, y: f64, octaves: u32, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        sum += amp * value_noise(x * freq, y * freq, seed.wrapping_add(o as u64 * 0x51_7CC1));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// Pixels of parallax per unit viewpoint offset.
    pub disparity: f64,
    pub shape: LayerShape,
    pub texture: Texture,
}

/// A plane-stack scene. Layers are listed back-to-front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub grid_size: usize,
    pub channels: usize,
    pub layers: Vec<LayerSpec>,
    pub disparity_range: (f64, f64),
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size % 2 == 0 {
            return Err(Error::EvenGrid(self.grid_size));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "scenes have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("scene has no layers".into()));
        }
        let half = ((self.grid_size - 1) / 2) as f64;
        let size = self.width.min(self.height) as f64;
        let (lo, hi) = self.disparity_range;
        for (k, layer) in self.layers.iter().enumerate() {
            let d = layer.disparity;
            if !d.is_finite() || d < lo || d > hi {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} disparity {d} outside [{lo}, {hi}]"
                )));
            }
            if d.abs() * half >= size {
                return Err(Error::InvalidArgument(format!(
                    "layer {k} disparity {d} shifts views by {} px, beyond the {size} px image",
                    d.abs() * half
                )));
            }
        }
        Ok(())
    }
}

/// A rendered scene: its light field plus the center-view disparity.
#[derive(Debug, Clone)]
pub struct Scene {
    pub light_field: LightField,
    pub disparity: DisparityMap,
}

/// Renders every view of `spec`. Per pixel the frontmost layer whose
/// silhouette covers the sample position wins; uncovered pixels are black
/// with disparity 0.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let g = spec.grid_size;
    let (w, h, ch) = (spec.width, spec.height, spec.channels);
    let half = ((g - 1) / 2) as i32;
    let mut data = vec![0f32; g * g * w * h * ch];
    let mut rgb = [0.0; 3];
    for row in 0..g {
        for col in 0..g {
            let (u, v) = ((col as i32 - half) as f64, (half - row as i32) as f64);
            let base = (row * g + col) * w * h * ch;
            for y in 0..h {
                for x in 0..w {
                    let hit = spec.layers.iter().rev().find_map(|layer| {
                        let px = x as f64 + layer.disparity * u;
                        let py = y as f64 + layer.disparity * v;
                        layer.shape.contains(px, py).then_some((layer, px, py))
                    });
                    let Some((layer, px, py)) = hit else { continue };
                    layer.texture.eval(px, py, &mut rgb);
                    let idx = base + (y * w + x) * ch;
                    if ch == 1 {
                        data[idx] = ((rgb[0] + rgb[1] + rgb[2]) / 3.0).clamp(0.0, 1.0) as f32;
                    } else {
                        for c in 0..3 {
                            data[idx + c] = rgb[c].clamp(0.0, 1.0) as f32;
                        }
                    }
                }
            }
        }
    }
    let light_field = LightField::new(w, h, g, ch, data)?;

    let mut disp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            if let Some(layer) = spec
                .layers
                .iter()
                .rev()
                .find(|l| l.shape.contains(x as f64, y as f64))
            {
                disp[y * w + x] = layer.disparity;
            }
        }
    }
    Ok(Scene {
        light_field,
        disparity: DisparityMap::new(w, h, disp)?,
    })
}

/// Knobs for random scene generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub grid_size: usize,
    pub channels: usize,
    pub disparity_range: (f64, f64),
    pub min_layers: usize,
    pub max_layers: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            grid_size: 9,
            channels: 3,
            disparity_range: (-4.0, 4.0),
            min_layers: 1,
            max_layers: 4,
        }
    }
}

fn random_texture(rng: &mut ChaCha8Rng, size: f64) -> Texture {
    let pick: f64 = rng.gen();
    let pattern = if pick < 0.55 {
        Pattern::Noise {
            scale: rng.gen_range(2.0..10.0),
            octaves: rng.gen_range(2..=4),
            seed: rng.gen(),
        }
    } else if pick < 0.85 {
        Pattern::Checker {
            period: rng.gen_range(2.0..8.0),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        }
    } else {
        Pattern::Gradient {
            angle: rng.gen_range(0.0..std::f64::consts::TAU),
            span: rng.gen_range(0.3..1.5) * size,
        }
    };
    let mut color = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let c0 = color();
    let mut c1 = color();
    // keep some contrast between the two colors
    if (0..3).map(|i| (c0[i] - c1[i]).abs()).sum::<f64>() < 0.6 {
        for i in 0..3 {
            c1[i] = 1.0 - c0[i];
        }
    }
    Texture { pattern, colors: [c0, c1] }
}

/// Draws a random scene: a full-frame background plus up to
/// `max_layers - 1` rectangle or ellipse layers.
pub fn random_scene_spec(cfg: &SceneConfig, size: usize, rng: &mut ChaCha8Rng) -> SceneSpec {
    let s = size as f64;
    let (lo, hi) = cfg.disparity_range;
    let n_layers = rng.gen_range(cfg.min_layers.max(1)..=cfg.max_layers.max(cfg.min_layers.max(1)));
    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let shape = if k == 0 {
            LayerShape::Full
        } else {
            let (cx, cy) = (rng.gen_range(0.2..0.8) * s, rng.gen_range(0.2..0.8) * s);
            let (a, b) = (rng.gen_range(0.1..0.3) * s, rng.gen_range(0.1..0.3) * s);
            if rng.gen_bool(0.5) {
                LayerShape::Rect { cx, cy, half_w: a, half_h: b }
            } else {
                LayerShape::Ellipse { cx, cy, rx: a, ry: b }
            }
        };
        let disparity = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        layers.push(LayerSpec {
            disparity,
            shape,
            texture: random_texture(rng, s),
        });
    }
    SceneSpec {
        width: size,
        height: size,
        grid_size: cfg.grid_size,
        channels: cfg.channels,
        layers,
        disparity_range: cfg.disparity_range,
    }
}

/// Per-scene generator; scene `index` uses its own ChaCha stream of `seed`.
pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate_dataset(n_scenes: usize, size: usize, seed: u64) -> Result<Vec<Scene>> {
    generate_dataset_with(&SceneConfig::default(), n_scenes, size, seed)
}

pub fn generate_dataset_with(cfg: &SceneConfig, n_scenes: usize, size: usize, seed: u64) -> Result<Vec<Scene>> {
    if n_scenes == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one scene".into()));
    }
    (0..n_scenes)
        .map(|i| generate_scene(&random_scene_spec(cfg, size, &mut scene_rng(seed, i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{laplacian_variance, Rect};
    use crate::lightfield::{circular_aperture_mask, photograph};

    fn noise_texture(seed: u64) -> Texture {
        Texture {
            pattern: Pattern::Noise { scale: 3.0, octaves: 3, seed },
            colors: [[0.1, 0.2, 0.3], [0.9, 0.7, 0.8]],
        }
    }

    fn single_plane(d: f64, size: usize) -> SceneSpec {
        SceneSpec {
            width: size,
            height: size,
            grid_size: 9,
            channels: 3,
            layers: vec![LayerSpec {
                disparity: d,
                shape: LayerShape::Full,
                texture: noise_texture(11),
            }],
            disparity_range: (-4.0, 4.0),
        }
    }

    #[test]
    fn zero_disparity_views_are_identical() {
        let scene = generate_scene(&single_plane(0.0, 16)).unwrap();
        let lf = &scene.light_field;
        let center = lf.center_view();
        for row in 0..9 {
            for col in 0..9 {
                assert_eq!(lf.view_at(row, col), center);
            }
        }
    }

    #[test]
    fn unit_disparity_translates_views() {
        let mut spec = single_plane(1.0, 24);
        spec.layers[0].texture.pattern = Pattern::Checker { period: 3.0, angle: 0.3 };
        let scene = generate_scene(&spec).unwrap();
        let lf = &scene.light_field;
        let center = lf.center_view();
        for v in -4i32..=4 {
            for u in -4i32..=4 {
                let view = lf.view(u, v).unwrap();
                for y in 4..20usize {
                    for x in 4..20usize {
                        let (sx, sy) = ((x as i32 + u) as usize, (y as i32 + v) as usize);
                        for c in 0..3 {
                            assert_eq!(view.get(x, y, c), center.get(sx, sy, c));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_layer_disparity_map() {
        let mut spec = single_plane(0.0, 32);
        spec.layers.push(LayerSpec {
            disparity: 2.0,
            shape: LayerShape::Rect { cx: 16.0, cy: 16.0, half_w: 6.0, half_h: 4.0 },
            texture: noise_texture(3),
        });
        let scene = generate_scene(&spec).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                let inside = (x as f64 - 16.0).abs() <= 6.0 && (y as f64 - 16.0).abs() <= 4.0;
                assert_eq!(scene.disparity.get(x, y), if inside { 2.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn center_view_is_back_to_front_composite() {
        let mut rng = scene_rng(9, 0);
        let spec = random_scene_spec(&SceneConfig { min_layers: 4, ..Default::default() }, 24, &mut rng);
        let scene = generate_scene(&spec).unwrap();
        let center = scene.light_field.center_view();
        let mut rgb = [0.0; 3];
        for y in 0..24 {
            for x in 0..24 {
                let mut px = [0f32; 3];
                for layer in &spec.layers {
                    if layer.shape.contains(x as f64, y as f64) {
                        layer.texture.eval(x as f64, y as f64, &mut rgb);
                        px = rgb.map(|v| v.clamp(0.0, 1.0) as f32);
                    }
                }
                for c in 0..3 {
                    assert_eq!(center.get(x, y, c), px[c] as f64);
                }
            }
        }
    }

    #[test]
    fn layers_are_sharpest_at_their_disparity() {
        let mask = circular_aperture_mask(9, 4.0).unwrap();
        for d in [-2.0, 1.0, 3.0] {
            let scene = generate_scene(&single_plane(d, 48)).unwrap();
            let roi = Rect::full(48, 48).inset(14);
            let sharp = |a: f64| {
                laplacian_variance(&photograph(&scene.light_field, &mask, a, 0).unwrap(), 0, roi)
            };
            assert!(sharp(d) > sharp(d - 1.0));
            assert!(sharp(d) > sharp(d + 1.0));
        }
    }

    #[test]
    fn dataset_is_deterministic_and_validated() {
        let a = generate_dataset(3, 16, 7).unwrap();
        let b = generate_dataset(3, 16, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.light_field, y.light_field);
            assert_eq!(x.disparity, y.disparity);
        }
        assert!(generate_dataset(0, 16, 7).is_err());
    }

    #[test]
    fn oversized_disparity_is_rejected() {
        let mut spec = single_plane(3.5, 12);
        assert!(generate_scene(&spec).is_err());
        spec.layers[0].disparity = 5.0;
        spec.width = 64;
        spec.height = 64;
        assert!(generate_scene(&spec).is_err(), "outside configured range");
    }
}

//! Procedural outdoor scenes used as source images when no photo corpus is at
//! hand: a sky gradient over textured ground, a sun, and a few trees, houses
//! and rocks. Each scene has an unambiguous global layout and rich local texture.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::ImageRgb;

type Rgb = [f64; 3];

enum Prop {
    Tree {
        x: f64,
        base: f64,
        height: f64,
        canopy: Rgb,
    },
    House {
        x: f64,
        base: f64,
        width: f64,
        height: f64,
        wall: Rgb,
        roof: Rgb,
    },
    Rock {
        x: f64,
        base: f64,
        rx: f64,
        ry: f64,
        color: Rgb,
    },
}

struct Scene {
    sky_top: Rgb,
    sky_horizon: Rgb,
    ground_near: Rgb,
    ground_far: Rgb,
    horizon: f64,
    hill_amp: f64,
    hill_freq: f64,
    hill_phase: f64,
    sun: (f64, f64, f64),
    sun_color: Rgb,
    props: Vec<Prop>,
    texture_seed: u64,
}

fn jitter(rng: &mut ChaCha8Rng, base: Rgb, amount: f64) -> Rgb {
    base.map(|c| (c + rng.random_range(-amount..amount)).clamp(0.0, 1.0))
}

impl Scene {
    fn random(seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let palettes: [(Rgb, Rgb); 4] = [
            ([0.25, 0.45, 0.85], [0.75, 0.85, 0.95]),
            ([0.55, 0.35, 0.60], [0.98, 0.70, 0.45]),
            ([0.10, 0.20, 0.45], [0.45, 0.55, 0.75]),
            ([0.45, 0.65, 0.90], [0.90, 0.92, 0.85]),
        ];
        let grounds: [(Rgb, Rgb); 4] = [
            ([0.20, 0.45, 0.15], [0.40, 0.60, 0.30]),
            ([0.55, 0.45, 0.25], [0.75, 0.65, 0.45]),
            ([0.35, 0.30, 0.20], [0.50, 0.50, 0.35]),
            ([0.80, 0.72, 0.50], [0.90, 0.85, 0.65]),
        ];
        let (sky_top, sky_horizon) = palettes[rng.random_range(0..palettes.len())];
        let (ground_near, ground_far) = grounds[rng.random_range(0..grounds.len())];
        let horizon = rng.random_range(0.42..0.62);
        let n_props = rng.random_range(2..=4);
        let mut props = Vec::with_capacity(n_props);
        for i in 0..n_props {
            let slot = (i as f64 + rng.random_range(0.15..0.85)) / n_props as f64;
            let base = rng.random_range(horizon + 0.08..0.95);
            let depth = (base - horizon) / (1.0 - horizon);
            let prop = match rng.random_range(0..3) {
                0 => Prop::Tree {
                    x: slot,
                    base,
                    height: 0.18 + 0.3 * depth,
                    canopy: jitter(&mut rng, [0.12, 0.38, 0.12], 0.08),
                },
                1 => Prop::House {
                    x: slot,
                    base,
                    width: 0.12 + 0.12 * depth,
                    height: 0.1 + 0.12 * depth,
                    wall: jitter(&mut rng, [0.85, 0.80, 0.70], 0.1),
                    roof: jitter(&mut rng, [0.60, 0.20, 0.15], 0.1),
                },
                _ => Prop::Rock {
                    x: slot,
                    base,
                    rx: 0.05 + 0.07 * depth,
                    ry: 0.03 + 0.05 * depth,
                    color: jitter(&mut rng, [0.45, 0.45, 0.48], 0.08),
                },
            };
            props.push(prop);
        }
        Scene {
            sky_top: jitter(&mut rng, sky_top, 0.05),
            sky_horizon: jitter(&mut rng, sky_horizon, 0.05),
            ground_near: jitter(&mut rng, ground_near, 0.05),
            ground_far: jitter(&mut rng, ground_far, 0.05),
            horizon,
            hill_amp: rng.random_range(0.01..0.06),
            hill_freq: rng.random_range(1.0..3.5),
            hill_phase: rng.random_range(0.0..std::f64::consts::TAU),
            sun: (
                rng.random_range(0.15..0.85),
                rng.random_range(0.08..horizon - 0.15),
                rng.random_range(0.05..0.09),
            ),
            sun_color: jitter(&mut rng, [1.0, 0.92, 0.6], 0.05),
            props,
            texture_seed: rng.random(),
        }
    }

    fn horizon_at(&self, u: f64) -> f64 {
        self.horizon
            + self.hill_amp * (self.hill_freq * std::f64::consts::TAU * u + self.hill_phase).sin()
    }

    fn shade(&self, u: f64, v: f64, noise: &ValueNoise) -> Rgb {
        let mut color = if v < self.horizon_at(u) {
            let t = (v / self.horizon).clamp(0.0, 1.0);
            let mut c = mix(self.sky_top, self.sky_horizon, t);
            let (sx, sy, sr) = self.sun;
            let d = ((u - sx).powi(2) + (v - sy).powi(2)).sqrt();
            if d < sr {
                c = self.sun_color;
            } else if d < sr * 2.5 {
                c = mix(self.sun_color, c, ((d - sr) / (1.5 * sr)).powf(0.5));
            }
            c
        } else {
            let t = ((v - self.horizon) / (1.0 - self.horizon)).clamp(0.0, 1.0);
            let base = mix(self.ground_far, self.ground_near, t);
            let grain = noise.at(u * 24.0, v * 24.0) - 0.5;
            let blotch = noise.at(u * 5.0 + 17.0, v * 5.0) - 0.5;
            base.map(|c| c * (1.0 + 0.35 * grain + 0.25 * blotch))
        };

        for prop in &self.props {
            if let Some(c) = prop.shade(u, v, noise) {
                color = c;
            }
        }
        color.map(|c| c.clamp(0.0, 1.0))
    }
}

impl Prop {
    fn shade(&self, u: f64, v: f64, noise: &ValueNoise) -> Option<Rgb> {
        match *self {
            Prop::Tree {
                x,
                base,
                height,
                canopy,
            } => {
                let trunk_w = height * 0.12;
                let trunk_top = base - height * 0.45;
                let (cx, cy, r) = (x, base - height * 0.7, height * 0.32);
                let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                if d < r {
                    let leaf = noise.at(u * 40.0, v * 40.0) - 0.5;
                    let light = 1.0 + 0.5 * leaf - 0.4 * (u - cx + v - cy) / r;
                    return Some(canopy.map(|c| c * light));
                }
                if (u - x).abs() < trunk_w / 2.0 && v > trunk_top && v < base {
                    let bark = noise.at(u * 60.0, v * 10.0) - 0.5;
                    return Some([0.35, 0.22, 0.12].map(|c| c * (1.0 + 0.4 * bark)));
                }
                None
            }
            Prop::House {
                x,
                base,
                width,
                height,
                wall,
                roof,
            } => {
                let left = x - width / 2.0;
                let top = base - height;
                if u >= left && u <= left + width && v >= top && v <= base {
                    let (wx, wy) = ((u - left) / width, (v - top) / height);
                    let window = (wx - 0.3).abs() < 0.12 && (wy - 0.4).abs() < 0.15;
                    let door = (wx - 0.7).abs() < 0.1 && wy > 0.5;
                    return Some(if window {
                        [0.2, 0.3, 0.45]
                    } else if door {
                        [0.3, 0.18, 0.1]
                    } else {
                        wall
                    });
                }
                let roof_h = height * 0.6;
                if v < top && v > top - roof_h {
                    let half = width * 0.6 * (v - (top - roof_h)) / roof_h;
                    if (u - x).abs() < half {
                        let tile = noise.at(u * 50.0, v * 50.0) - 0.5;
                        return Some(roof.map(|c| c * (1.0 + 0.3 * tile)));
                    }
                }
                None
            }
            Prop::Rock {
                x,
                base,
                rx,
                ry,
                color,
            } => {
                let cy = base - ry;
                let e = ((u - x) / rx).powi(2) + ((v - cy) / ry).powi(2);
                if e < 1.0 {
                    let shade = 1.1 - 0.5 * (v - cy + ry) / (2.0 * ry)
                        + 0.3 * (noise.at(u * 30.0, v * 30.0) - 0.5);
                    return Some(color.map(|c| c * shade));
                }
                None
            }
        }
    }
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

/// Smooth lattice value noise in `[0, 1]`.
struct ValueNoise {
    seed: u64,
}

impl ValueNoise {
    fn lattice(&self, x: i64, y: i64) -> f64 {
        let mut h = self.seed
            ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        h ^= h >> 33;
        h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        h ^= h >> 33;
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let (xi, yi) = (x0 as i64, y0 as i64);
        let top = self.lattice(xi, yi) * (1.0 - sx) + self.lattice(xi + 1, yi) * sx;
        let bot = self.lattice(xi, yi + 1) * (1.0 - sx) + self.lattice(xi + 1, yi + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }
}

/// Render scene `seed` at `size × size`, supersampled 2×2 per pixel.
pub fn render_scene(seed: u64, size: usize) -> Result<ImageRgb> {
    let scene = Scene::random(seed);
    let noise = ValueNoise {
        seed: scene.texture_seed,
    };
    let n = size * size;
    let mut data = vec![0.0f32; 3 * n];
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let c = scene.shade((x as f64 + ox) / s, (y as f64 + oy) / s, &noise);
                for i in 0..3 {
                    acc[i] += c[i] / 4.0;
                }
            }
            for c in 0..3 {
                data[c * n + y * size + x] = acc[c] as f32;
            }
        }
    }
    ImageRgb::from_planar(size, size, data)
}

/// Write `count` scenes as `scene_0000.ppm`, … into `dir`.
pub fn write_scenes(
    dir: impl AsRef<Path>,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("scene_{i:04}.ppm"));
            render_scene(seed.wrapping_add(i as u64), size)?.save(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_varied() {
        let a = render_scene(1, 32).unwrap();
        assert_eq!(a, render_scene(1, 32).unwrap());
        assert_ne!(a, render_scene(2, 32).unwrap());
    }

    #[test]
    fn sky_sits_above_ground() {
        // The top rows are sky, bluer than the bottom rows on average.
        let img = render_scene(3, 48).unwrap();
        let blue_minus_green = |rows: std::ops::Range<usize>| {
            let mut s = 0.0;
            for y in rows.clone() {
                for x in 0..48 {
                    s += f64::from(img.get(2, y, x) - img.get(1, y, x));
                }
            }
            s / (rows.len() * 48) as f64
        };
        assert!(blue_minus_green(0..6) > blue_minus_green(42..48));
    }
}

//! Synthetic sequences: a noisy solid-color rectangle moving at constant
//! velocity over a static textured background, bouncing off the frame edges.

use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Frame, SequenceRecord};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, PatchSize};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Inclusive range for the object's width and height in pixels.
    pub object_size: [usize; 2],
    /// Inclusive range of per-axis speed magnitude in px/frame.
    pub speed: [f64; 2],
    pub color: [u8; 3],
    /// Standard deviation of the fixed per-pixel pattern on the object.
    pub color_noise: f64,
    /// Standard deviation of fine background noise.
    pub background_noise: f64,
    /// Standard deviation of per-frame sensor noise.
    pub frame_noise: f64,
    pub length: usize,
    pub seed: u64,
    /// Overrides for the randomly drawn initial state.
    pub start: Option<[f64; 2]>,
    pub velocity: Option<[f64; 2]>,
    pub size: Option<[usize; 2]>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frame_width: 160,
            frame_height: 120,
            object_size: [20, 36],
            speed: [0.5, 2.5],
            color: [220, 40, 40],
            color_noise: 12.0,
            background_noise: 10.0,
            frame_noise: 2.0,
            length: 100,
            seed: 0,
            start: None,
            velocity: None,
            size: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.frame_width == 0 || self.frame_height == 0 || self.length == 0 {
            return bad("frame size and length must be positive".into());
        }
        let [lo, hi] = self.object_size;
        if lo == 0 || lo > hi {
            return bad(format!("object size range [{lo}, {hi}] invalid"));
        }
        let [ow, oh] = self.size.unwrap_or([hi, hi]);
        if ow == 0 || oh == 0 || ow > self.frame_width || oh > self.frame_height {
            return bad(format!(
                "object {ow}x{oh} does not fit in frame {}x{}",
                self.frame_width, self.frame_height
            ));
        }
        if !(self.speed[0] >= 0.0 && self.speed[0] <= self.speed[1]) {
            return bad(format!("speed range {:?} invalid", self.speed));
        }
        Ok(())
    }

    /// Config of sequence `index` in a dataset: same family, derived seed.
    pub fn for_index(&self, index: usize) -> Self {
        let mut c = self.clone();
        c.seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1);
        c
    }
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Reflects `pos` into `[0, max]`, flipping `vel` on every bounce.
fn reflect(mut pos: f64, mut vel: f64, max: f64) -> (f64, f64) {
    if max <= 0.0 {
        return (0.0, 0.0);
    }
    for _ in 0..64 {
        if pos < 0.0 {
            pos = -pos;
            vel = -vel;
        } else if pos > max {
            pos = 2.0 * max - pos;
            vel = -vel;
        } else {
            break;
        }
    }
    (pos.clamp(0.0, max), vel)
}

fn background<R: Rng>(w: usize, h: usize, noise: f64, rng: &mut R) -> Vec<[f64; 3]> {
    // Bilinear blend of a coarse random lattice, plus per-pixel noise.
    let cell = 12usize;
    let gw = w / cell + 2;
    let gh = h / cell + 2;
    let lattice: Vec<[f64; 3]> = (0..gw * gh)
        .map(|_| {
            let base = rng.random_range(60.0..190.0);
            [
                base + rng.random_range(-25.0..25.0),
                base + rng.random_range(-25.0..25.0),
                base + rng.random_range(-25.0..25.0),
            ]
        })
        .collect();
    let fine = Normal::new(0.0, noise.max(1e-9)).unwrap();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let gy = y as f64 / cell as f64;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..w {
            let gx = x as f64 / cell as f64;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let at = |r: usize, c: usize| lattice[r * gw + c];
            let mut px = [0.0; 3];
            for (k, p) in px.iter_mut().enumerate() {
                let top = at(y0, x0)[k] * (1.0 - fx) + at(y0, x0 + 1)[k] * fx;
                let bot = at(y0 + 1, x0)[k] * (1.0 - fx) + at(y0 + 1, x0 + 1)[k] * fx;
                *p = top * (1.0 - fy) + bot * fy + fine.sample(rng);
            }
            out.push(px);
        }
    }
    out
}

/// Generates one fully deterministic sequence; annotations are the exact
/// integer rectangles that were rendered.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<SequenceRecord> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed, "synth");
    let (fw, fh) = (cfg.frame_width, cfg.frame_height);
    let [ow, oh] = cfg.size.unwrap_or_else(|| {
        [
            rng.random_range(cfg.object_size[0]..=cfg.object_size[1]),
            rng.random_range(cfg.object_size[0]..=cfg.object_size[1]),
        ]
    });
    let (max_x, max_y) = ((fw - ow) as f64, (fh - oh) as f64);
    let [mut x, mut y] = cfg
        .start
        .unwrap_or_else(|| [rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y)]);
    let [mut vx, mut vy] = cfg.velocity.unwrap_or_else(|| {
        let axis = |rng: &mut crate::rng::StreamRng| {
            let s = rng.random_range(cfg.speed[0]..=cfg.speed[1]);
            if rng.random_bool(0.5) {
                s
            } else {
                -s
            }
        };
        [axis(&mut rng), axis(&mut rng)]
    });

    let bg = background(fw, fh, cfg.background_noise, &mut rng);
    let pattern_noise = Normal::new(0.0, cfg.color_noise.max(1e-9)).unwrap();
    let pattern: Vec<[f64; 3]> = (0..ow * oh)
        .map(|_| {
            let mut p = [0.0; 3];
            for (k, v) in p.iter_mut().enumerate() {
                *v = f64::from(cfg.color[k]) + pattern_noise.sample(&mut rng);
            }
            p
        })
        .collect();
    let sensor = Normal::new(0.0, cfg.frame_noise.max(1e-9)).unwrap();

    let mut frames = Vec::with_capacity(cfg.length);
    let mut annotations = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        if t > 0 {
            (x, vx) = reflect(x + vx, vx, max_x);
            (y, vy) = reflect(y + vy, vy, max_y);
        }
        let (rx, ry) = (x.round() as usize, y.round() as usize);
        let mut img = RgbImage::new(fw as u32, fh as u32);
        for py in 0..fh {
            for px in 0..fw {
                let inside = px >= rx && px < rx + ow && py >= ry && py < ry + oh;
                let src = if inside {
                    pattern[(py - ry) * ow + (px - rx)]
                } else {
                    bg[py * fw + px]
                };
                let mut out = [0u8; 3];
                for k in 0..3 {
                    let n = if cfg.frame_noise > 0.0 { sensor.sample(&mut rng) } else { 0.0 };
                    out[k] = to_u8(src[k] + n);
                }
                img.put_pixel(px as u32, py as u32, Rgb(out));
            }
        }
        frames.push(Frame::Memory(Arc::new(img)));
        annotations.push(BoundingBox::new(rx as f64, ry as f64, (rx + ow) as f64, (ry + oh) as f64));
    }
    Ok(SequenceRecord {
        name: format!("synth_{:016x}", cfg.seed),
        frames,
        annotations,
        visible: vec![true; cfg.length],
        frame_sizes: vec![PatchSize::new(fw as f64, fh as f64); cfg.length],
    })
}

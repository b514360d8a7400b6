//! Generated test inputs: smooth random textures with known shifts and
//! drifting-dot "videos" whose motility targets are known by construction.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{save_manifest, write_frame_seq, MotilityTargets, ParticipantFeatures, VideoRecord};
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, FrameTensor};

fn texture_field(h: usize, w: usize, sigma: f64, rng: &mut ChaCha8Rng) -> FrameTensor {
    let noise = FrameTensor::from_fn(h, w, 1, |_, _, _| rng.random::<f32>() * 255.0);
    let blurred = gaussian_blur(&noise, sigma);
    let (lo, hi) = blurred.min_max();
    let span = (hi - lo).max(1e-6);
    FrameTensor::from_fn(h, w, 1, |y, x, _| 20.0 + 215.0 * (blurred.get(y, x, 0) - lo) / span)
}

/// Blurred uniform noise stretched to `[20, 235]`.
pub fn smooth_texture(h: usize, w: usize, sigma: f64, seed: u64) -> FrameTensor {
    texture_field(h, w, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two crops of one texture with `b(x + dx, y + dy) = a(x, y)`.
pub fn shifted_pair(h: usize, w: usize, dx: i32, dy: i32, seed: u64) -> (FrameTensor, FrameTensor) {
    let m = dx.unsigned_abs().max(dy.unsigned_abs()) as usize;
    let big = smooth_texture(h + 2 * m, w + 2 * m, 1.5, seed);
    let crop = |oy: isize, ox: isize| {
        FrameTensor::from_fn(h, w, 1, |y, x, _| big.get((y as isize + oy) as usize, (x as isize + ox) as usize, 0))
    };
    let m = m as isize;
    (crop(m, m), crop(m - dy as isize, m - dx as isize))
}

/// Parameters of a drifting-dot video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DotVideoSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub dots: usize,
    /// Pixels per frame for progressive dots.
    pub fast_speed: f32,
    /// Pixels per frame for non-progressive dots.
    pub slow_speed: f32,
    pub dot_sigma: f32,
}

impl Default for DotVideoSpec {
    fn default() -> Self {
        Self { height: 96, width: 96, frames: 40, dots: 36, fast_speed: 2.5, slow_speed: 0.6, dot_sigma: 1.4 }
    }
}

struct Dot {
    x: f32,
    y: f32,
    heading: f32,
    speed: f32,
    /// Non-progressive dots wander: the heading turns every frame.
    turn: f32,
}

/// A field of Gaussian dots over a faint static background. A share of the
/// dots stays put, the moving ones split into straight fast movers and slowly
/// circling ones. Targets are the percentages of each group, so they follow
/// directly from the stationary fraction and the mean speed of the movers.
pub fn dot_video(spec: &DotVideoSpec, seed: u64) -> (Vec<FrameTensor>, MotilityTargets) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let immotile_frac: f32 = rng.random_range(0.1..0.8);
    let fast_share: f32 = rng.random_range(0.0..1.0);
    let n_still = (spec.dots as f32 * immotile_frac).round() as usize;
    let n_fast = ((spec.dots - n_still) as f32 * fast_share).round() as usize;
    let n_slow = spec.dots - n_still - n_fast;
    let (w, h) = (spec.width as f32, spec.height as f32);
    let mut dots: Vec<Dot> = (0..spec.dots)
        .map(|i| {
            let (speed, turn) = if i < n_still {
                (0.0, 0.0)
            } else if i < n_still + n_fast {
                (spec.fast_speed, 0.0)
            } else {
                (spec.slow_speed, rng.random_range(0.3..0.6) * if rng.random::<bool>() { 1.0 } else { -1.0 })
            };
            Dot {
                x: rng.random_range(0.0..w),
                y: rng.random_range(0.0..h),
                heading: rng.random_range(0.0..std::f32::consts::TAU),
                speed,
                turn,
            }
        })
        .collect();
    let background = texture_field(spec.height, spec.width, 3.0, &mut rng);
    let radius = (3.0 * spec.dot_sigma).ceil() as isize;
    let inv = 1.0 / (2.0 * spec.dot_sigma * spec.dot_sigma);
    let mut frames = Vec::with_capacity(spec.frames);
    for _ in 0..spec.frames {
        let mut f = FrameTensor::from_fn(spec.height, spec.width, 1, |y, x, _| 10.0 + 0.1 * background.get(y, x, 0));
        for d in &dots {
            let (cx, cy) = (d.x.round() as isize, d.y.round() as isize);
            for oy in -radius..=radius {
                for ox in -radius..=radius {
                    // toroidal wrap keeps the dot count constant
                    let px = (cx + ox).rem_euclid(spec.width as isize);
                    let py = (cy + oy).rem_euclid(spec.height as isize);
                    let dx = (cx + ox) as f32 - d.x;
                    let dy = (cy + oy) as f32 - d.y;
                    let v = 200.0 * (-(dx * dx + dy * dy) * inv).exp();
                    let (py, px) = (py as usize, px as usize);
                    let cur = f.get(py, px, 0);
                    f.set(py, px, 0, (cur + v).min(255.0));
                }
            }
        }
        frames.push(f);
        for d in &mut dots {
            d.heading += d.turn;
            d.x = (d.x + d.speed * d.heading.cos()).rem_euclid(w);
            d.y = (d.y + d.speed * d.heading.sin()).rem_euclid(h);
        }
    }
    let pct = |n: usize| 100.0 * n as f64 / spec.dots as f64;
    (frames, MotilityTargets::new(pct(n_fast), pct(n_slow), pct(n_still)))
}

/// Writes `n_videos` dot videos as `.y8seq` files plus `manifest.csv` under
/// `dir` and returns the records.
pub fn write_dot_dataset(dir: &Path, n_videos: usize, spec: &DotVideoSpec, seed: u64) -> Result<Vec<VideoRecord>> {
    let video_dir = dir.join("videos");
    fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_videos);
    for i in 0..n_videos {
        let id = format!("p{i:03}");
        let (frames, targets) = dot_video(spec, rng.random());
        let path: PathBuf = video_dir.join(format!("{id}.y8seq"));
        write_frame_seq(&path, &frames)?;
        records.push(VideoRecord {
            participant_id: id,
            frame_source: path,
            fps: 50.0,
            frame_count: frames.len(),
            features: ParticipantFeatures {
                age: rng.random_range(20.0..50.0_f64).round(),
                bmi: (rng.random_range(19.0..35.0_f64) * 10.0).round() / 10.0,
                abstinence: rng.random_range(1..8) as f64,
                concentration: Some(rng.random_range(5.0..150.0_f64).round()),
            },
            targets,
        });
    }
    save_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}

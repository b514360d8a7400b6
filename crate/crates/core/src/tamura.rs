//! Tamura texture descriptor: coarseness, contrast and a 16-bin directionality
//! histogram, 18 values per frame.

use std::f64::consts::PI;

use log::warn;

use crate::dataio::{classical_frame_indices, open_frames, FrameSequence, VideoRecord};
use crate::error::{Error, Result};
use crate::imgproc::{ensure_greyscale, expect_channels, FrameTensor};

/// Largest coarseness window exponent; windows are `2^k` for `k` in `0..=MAX_SCALE`.
pub const MAX_SCALE: u32 = 4;
pub const DIRECTION_BINS: usize = 16;
pub const EDGE_THRESHOLD: f64 = 12.0;
pub const DESCRIPTOR_LEN: usize = 2 + DIRECTION_BINS;
/// Seconds of video sampled for the classical feature vector.
pub const CLASSICAL_SECONDS: usize = 60;
pub const VIDEO_FEATURE_LEN: usize = 2 * CLASSICAL_SECONDS * DESCRIPTOR_LEN;

#[derive(Debug, Clone, PartialEq)]
pub struct TamuraVector {
    pub coarseness: f64,
    pub contrast: f64,
    pub directionality: Vec<f64>,
}

impl TamuraVector {
    /// `[coarseness, contrast, bins...]`.
    pub fn to_vec(&self) -> Vec<f32> {
        let mut v = Vec::with_capacity(2 + self.directionality.len());
        v.push(self.coarseness as f32);
        v.push(self.contrast as f32);
        v.extend(self.directionality.iter().map(|&b| b as f32));
        v
    }
}

/// Summed-area table with a zero top row and left column.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(frame: &FrameTensor) -> Self {
        let (h, w) = (frame.height(), frame.width());
        let stride = w + 1;
        let mut sums = vec![0f64; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += frame.get(y, x, 0) as f64;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width: w, sums }
    }

    /// Mean over rows `r0..r0+rows`, columns `c0..c0+cols`.
    #[inline]
    fn mean(&self, r0: usize, rows: usize, c0: usize, cols: usize) -> f64 {
        let s = self.width + 1;
        let (r1, c1) = (r0 + rows, c0 + cols);
        let total = self.sums[r1 * s + c1] - self.sums[r0 * s + c1] - self.sums[r1 * s + c0]
            + self.sums[r0 * s + c0];
        total / (rows * cols) as f64
    }
}

/// Mean best window size over interior pixels.
///
/// For `k >= 1` the window is `s = 2^k` pixels; the horizontal difference at
/// `(x, y)` compares the adjacent non-overlapping windows covering columns
/// `x-s..x` and `x..x+s` (rows `y-s/2..y+s/2`), the vertical one is the
/// transpose. At `k = 0` the half-window offset is below one pixel and the
/// difference is zero, so flat neighbourhoods resolve to size 1. Ties go to the
/// smaller window.
pub fn coarseness(frame: &FrameTensor) -> Result<f64> {
    expect_channels(frame, 1)?;
    let (h, w) = (frame.height(), frame.width());
    if h < 64 || w < 64 {
        return Err(Error::FrameTooSmall { height: h, width: w, min: 64 });
    }
    let integral = Integral::new(frame);
    let margin = 1usize << MAX_SCALE;
    let mut total = 0.0;
    let mut count = 0usize;
    for y in margin..=h - margin {
        for x in margin..=w - margin {
            let mut best_e = 0.0;
            let mut best_k = 0;
            for k in 1..=MAX_SCALE {
                let s = 1usize << k;
                let half = s / 2;
                let eh = (integral.mean(y - half, s, x, s) - integral.mean(y - half, s, x - s, s)).abs();
                let ev = (integral.mean(y, s, x - half, s) - integral.mean(y - s, s, x - half, s)).abs();
                let e = eh.max(ev);
                if e > best_e {
                    best_e = e;
                    best_k = k;
                }
            }
            total += (1u32 << best_k) as f64;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `sigma / kurtosis^(1/4)`, zero for flat images.
pub fn contrast(frame: &FrameTensor) -> f64 {
    let data = frame.data();
    if data.is_empty() {
        return 0.0;
    }
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in data {
        let d = v as f64 - mean;
        let d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    let sigma = m2.sqrt();
    if sigma < 1e-9 {
        return 0.0;
    }
    let kurtosis = m4 / (m2 * m2);
    sigma / kurtosis.powf(0.25)
}

/// Normalised histogram of edge orientations in `[0, pi)`, from 3x3 Prewitt
/// gradients. Only pixels with `(|dH| + |dV|) / 2 >= edge_threshold` vote.
pub fn directionality(frame: &FrameTensor, bins: usize, edge_threshold: f64) -> Result<Vec<f64>> {
    expect_channels(frame, 1)?;
    let (h, w) = (frame.height(), frame.width());
    if h < 3 || w < 3 {
        return Err(Error::FrameTooSmall { height: h, width: w, min: 3 });
    }
    let mut hist = vec![0f64; bins];
    let mut votes = 0usize;
    let px = |y: usize, x: usize| frame.get(y, x, 0) as f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut dh = 0.0;
            let mut dv = 0.0;
            for d in 0..3 {
                dh += px(y - 1 + d, x + 1) - px(y - 1 + d, x - 1);
                dv += px(y + 1, x - 1 + d) - px(y - 1, x - 1 + d);
            }
            dh /= 3.0;
            dv /= 3.0;
            if (dh.abs() + dv.abs()) / 2.0 < edge_threshold {
                continue;
            }
            hist[orientation_bin(dh, dv, bins)] += 1.0;
            votes += 1;
        }
    }
    if votes > 0 {
        let n = votes as f64;
        hist.iter_mut().for_each(|b| *b /= n);
    }
    Ok(hist)
}

/// Edge orientation (gradient angle plus pi/2) folded into `[0, pi)`, binned.
/// Negated gradients land in the same bin.
pub(crate) fn orientation_bin(dh: f64, dv: f64, bins: usize) -> usize {
    let (dh, dv) = if dv < 0.0 || (dv == 0.0 && dh < 0.0) { (-dh, -dv) } else { (dh, dv) };
    let mut phi = dv.atan2(dh);
    if phi >= PI {
        phi = 0.0;
    }
    let mut theta = phi + PI / 2.0;
    if theta >= PI {
        theta -= PI;
    }
    ((theta / (PI / bins as f64)) as usize).min(bins - 1)
}

/// Descriptor of one frame; 3-channel frames are greyscaled first.
pub fn descriptor(frame: &FrameTensor) -> Result<TamuraVector> {
    let grey = ensure_greyscale(frame)?;
    Ok(TamuraVector {
        coarseness: coarseness(&grey)?,
        contrast: contrast(&grey),
        directionality: directionality(&grey, DIRECTION_BINS, EDGE_THRESHOLD)?,
    })
}

/// Concatenated descriptors of the first and middle frame of each of the first
/// sixty seconds. Frames past the end are zero-filled.
pub fn video_feature_vector_from(seq: &mut FrameSequence, fps: f64, label: &str) -> Result<Vec<f32>> {
    let indices = classical_frame_indices(fps, CLASSICAL_SECONDS);
    let mut out = Vec::with_capacity(VIDEO_FEATURE_LEN);
    let mut missing = 0;
    for &i in &indices {
        if i >= seq.frame_count() {
            missing += 1;
            out.extend(std::iter::repeat_n(0.0, DESCRIPTOR_LEN));
            continue;
        }
        out.extend(descriptor(&seq.frame(i)?)?.to_vec());
    }
    if missing > 0 {
        warn!(
            "{label}: video is shorter than {CLASSICAL_SECONDS} s; {missing} of {} sampled frames zero-padded",
            indices.len()
        );
    }
    Ok(out)
}

pub fn video_feature_vector(record: &VideoRecord) -> Result<Vec<f32>> {
    let mut seq = open_frames(record)?;
    video_feature_vector_from(&mut seq, record.fps, &record.participant_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grey(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f32) -> FrameTensor {
        FrameTensor::from_fn(h, w, 1, |y, x, _| f(y, x))
    }

    fn checker(n: usize, block: usize) -> FrameTensor {
        grey(n, n, |y, x| if (y / block + x / block) % 2 == 1 { 255.0 } else { 0.0 })
    }

    fn random_image(seed: u64) -> FrameTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        grey(64, 64, |_, _| rng.random_range(0..=255) as f32)
    }

    /// Direct window sums, no integral image.
    fn coarseness_oracle(f: &FrameTensor) -> f64 {
        let mean = |r0: usize, c0: usize, s: usize| {
            let mut acc = 0.0;
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    acc += f.get(r, c, 0) as f64;
                }
            }
            acc / (s * s) as f64
        };
        let (h, w) = (f.height(), f.width());
        let (mut total, mut n) = (0.0, 0.0);
        for y in 16..=h - 16 {
            for x in 16..=w - 16 {
                let (mut best, mut bk) = (0.0, 0);
                for k in 1..=4 {
                    let s = 1usize << k;
                    let eh = (mean(y - s / 2, x, s) - mean(y - s / 2, x - s, s)).abs();
                    let ev = (mean(y, x - s / 2, s) - mean(y - s, x - s / 2, s)).abs();
                    if eh.max(ev) > best {
                        best = eh.max(ev);
                        bk = k;
                    }
                }
                total += (1u32 << bk) as f64;
                n += 1.0;
            }
        }
        total / n
    }

    #[test]
    fn coarseness_of_constant_is_one() {
        assert_eq!(coarseness(&grey(64, 64, |_, _| 9.0)).unwrap(), 1.0);
    }

    #[test]
    fn coarseness_orders_checkerboards() {
        let fine = coarseness(&checker(64, 2)).unwrap();
        let coarse = coarseness(&checker(64, 8)).unwrap();
        assert_eq!(fine, coarseness_oracle(&checker(64, 2)));
        assert_eq!(coarse, coarseness_oracle(&checker(64, 8)));
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn coarseness_of_16px_checkerboard_matches_oracle() {
        let img = checker(128, 16);
        let fast = coarseness(&img).unwrap();
        let slow = coarseness_oracle(&img);
        assert!((fast - slow).abs() < 1e-12);
        // frozen from the oracle
        assert!((slow - 6.735359761930067).abs() < 1e-9, "{slow}");
    }

    #[test]
    fn coarseness_matches_oracle_on_random_images() {
        for seed in 0..5 {
            let img = random_image(seed);
            assert!((coarseness(&img).unwrap() - coarseness_oracle(&img)).abs() < 1e-6);
        }
    }

    #[test]
    fn coarseness_rejects_small_frames() {
        assert!(matches!(coarseness(&grey(63, 80, |_, _| 0.0)), Err(Error::FrameTooSmall { .. })));
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(contrast(&grey(8, 8, |_, _| 3.0)), 0.0);
        let half = grey(8, 8, |y, _| if y < 4 { 0.0 } else { 255.0 });
        assert!((contrast(&half) - 127.5).abs() < 1e-9);
        let img = random_image(3);
        let doubled = FrameTensor::from_fn(64, 64, 1, |y, x, _| 2.0 * img.get(y, x, 0));
        assert!((contrast(&doubled) - 2.0 * contrast(&img)).abs() < 1e-9);
    }

    #[test]
    fn directionality_of_vertical_stripes_and_constant() {
        let stripes = grey(32, 32, |_, x| if (x / 2) % 2 == 0 { 0.0 } else { 255.0 });
        let hist = directionality(&stripes, 16, 12.0).unwrap();
        // theta = pi/2 falls in bin 8
        assert!(hist[8] >= 0.9, "{hist:?}");
        let flat = directionality(&grey(16, 16, |_, _| 40.0), 16, 12.0).unwrap();
        assert!(flat.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn directionality_of_diagonal_stripes() {
        // gradient along (1, 1) gives theta = atan(1) + pi/2
        let img = grey(48, 48, |y, x| if ((x + y) / 3) % 2 == 0 { 0.0 } else { 255.0 });
        let hist = directionality(&img, 16, 12.0).unwrap();
        let peak = (0..16).max_by(|&a, &b| hist[a].total_cmp(&hist[b])).unwrap();
        let width = PI / 16.0;
        let (lo, hi) = (peak as f64 * width, (peak + 1) as f64 * width);
        assert!(lo - width <= 3.0 * PI / 4.0 && 3.0 * PI / 4.0 <= hi + width, "peak bin {peak}: {hist:?}");
    }

    #[test]
    fn features_survive_half_turn() {
        for seed in 10..14 {
            let img = random_image(seed);
            let rot = FrameTensor::from_fn(64, 64, 1, |y, x, _| img.get(63 - y, 63 - x, 0));
            assert_eq!(coarseness(&img).unwrap(), coarseness(&rot).unwrap());
            assert!((contrast(&img) - contrast(&rot)).abs() < 1e-9);
            assert_eq!(directionality(&img, 16, 12.0).unwrap(), directionality(&rot, 16, 12.0).unwrap());
        }
    }

    #[test]
    fn descriptor_layout_and_determinism() {
        let img = random_image(1);
        let d = descriptor(&img).unwrap();
        let v = d.to_vec();
        assert_eq!(v.len(), DESCRIPTOR_LEN);
        assert_eq!(v, descriptor(&img).unwrap().to_vec());
        let s: f64 = d.directionality.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        assert!(d.coarseness >= 1.0 && d.contrast >= 0.0);
    }

    #[test]
    fn short_video_is_zero_padded() {
        let frames = vec![grey(64, 64, |y, x| ((x * 7 + y * 3) % 256) as f32); 1500];
        let mut seq = FrameSequence::from_frames(frames.clone()).unwrap();
        let v = video_feature_vector_from(&mut seq, 50.0, "p").unwrap();
        assert_eq!(v.len(), VIDEO_FEATURE_LEN);
        assert!(v[1080..].iter().all(|&x| x == 0.0));
        let one = descriptor(&frames[0]).unwrap().to_vec();
        assert!(v[..1080].chunks(18).all(|c| c == one.as_slice()));
    }
}

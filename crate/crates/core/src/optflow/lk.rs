use log::warn;

use super::{check_pair, Plane, Point, TrackSet};
use crate::error::Result;
use crate::imgproc::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkParams {
    /// Side of the square integration window, pixels (odd).
    pub window: usize,
    /// Extra pyramid levels above the full-resolution image.
    pub levels: usize,
    pub iterations: usize,
    /// Stop refining once the update is shorter than this, pixels.
    pub epsilon: f32,
    /// Tracks whose normalised gradient matrix has a smaller eigenvalue are dropped.
    pub min_eigen: f32,
}

impl Default for LkParams {
    fn default() -> Self {
        Self { window: 21, levels: 3, iterations: 30, epsilon: 0.01, min_eigen: 1e-4 }
    }
}

/// 5-tap binomial blur followed by 2x decimation.
fn pyr_down(src: &Plane) -> Plane {
    const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                acc += k * src.get_clamped(x as isize + i as isize - 2, y as isize);
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = Plane::new(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, k) in K.iter().enumerate() {
                acc += k * tmp.get_clamped(2 * x as isize, 2 * y as isize + i as isize - 2);
            }
            out.data[y * ow + x] = acc;
        }
    }
    out
}

/// Image pyramid plus central-difference gradients at every level. Intensities
/// are scaled to `[0, 1]`; levels no larger than the window are not built.
struct Pyramid {
    levels: Vec<Plane>,
    grad_x: Vec<Plane>,
    grad_y: Vec<Plane>,
}

impl Pyramid {
    fn build(frame: &FrameTensor, extra_levels: usize, window: usize) -> Result<Self> {
        let mut base = Plane::from_frame(frame)?;
        base.data.iter_mut().for_each(|v| *v /= 255.0);
        let mut levels = vec![base];
        for _ in 0..extra_levels {
            let next = pyr_down(levels.last().unwrap());
            if next.width <= window || next.height <= window {
                break;
            }
            levels.push(next);
        }
        let mut grad_x = Vec::with_capacity(levels.len());
        let mut grad_y = Vec::with_capacity(levels.len());
        for p in &levels {
            let mut gx = Plane::new(p.width, p.height);
            let mut gy = Plane::new(p.width, p.height);
            for y in 0..p.height as isize {
                for x in 0..p.width as isize {
                    let i = y as usize * p.width + x as usize;
                    gx.data[i] = 0.5 * (p.get_clamped(x + 1, y) - p.get_clamped(x - 1, y));
                    gy.data[i] = 0.5 * (p.get_clamped(x, y + 1) - p.get_clamped(x, y - 1));
                }
            }
            grad_x.push(gx);
            grad_y.push(gy);
        }
        Ok(Self { levels, grad_x, grad_y })
    }
}

/// Tracks one point from `prev` to `next`; `None` when it is lost.
fn track_point(prev: &Pyramid, next: &Pyramid, p: Point, params: &LkParams) -> Option<Point> {
    let half = (params.window / 2) as isize;
    let n_px = ((2 * half + 1) * (2 * half + 1)) as f32;
    let top = prev.levels.len().min(next.levels.len()) - 1;
    let (mut gx, mut gy) = (0f32, 0f32);
    for level in (0..=top).rev() {
        let scale = 1.0 / (1u32 << level) as f32;
        let (px, py) = (p.x * scale, p.y * scale);
        let (img_i, img_j) = (&prev.levels[level], &next.levels[level]);
        let (ix, iy) = (&prev.grad_x[level], &prev.grad_y[level]);

        let mut patch = Vec::with_capacity(n_px as usize);
        let (mut g11, mut g12, mut g22) = (0f32, 0f32, 0f32);
        for dy in -half..=half {
            for dx in -half..=half {
                let (sx, sy) = (px + dx as f32, py + dy as f32);
                let gxv = ix.sample(sx, sy);
                let gyv = iy.sample(sx, sy);
                g11 += gxv * gxv;
                g12 += gxv * gyv;
                g22 += gyv * gyv;
                patch.push((img_i.sample(sx, sy), gxv, gyv));
            }
        }
        let tr = g11 + g22;
        let min_eig = (0.5 * tr - (0.25 * (g11 - g22).powi(2) + g12 * g12).sqrt()) / n_px;
        let det = g11 * g22 - g12 * g12;
        if min_eig < params.min_eigen || det <= f32::EPSILON {
            if level == 0 {
                return None;
            }
            gx *= 2.0;
            gy *= 2.0;
            continue;
        }

        let (mut nx, mut ny) = (0f32, 0f32);
        for _ in 0..params.iterations {
            let (cx, cy) = (px + gx + nx, py + gy + ny);
            if cx < -(half as f32) || cy < -(half as f32)
                || cx > (img_j.width as isize + half) as f32
                || cy > (img_j.height as isize + half) as f32
            {
                if level == 0 {
                    return None;
                }
                break;
            }
            let (mut b1, mut b2) = (0f32, 0f32);
            let mut k = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let (i_val, gxv, gyv) = patch[k];
                    k += 1;
                    let diff = i_val - img_j.sample(cx + dx as f32, cy + dy as f32);
                    b1 += diff * gxv;
                    b2 += diff * gyv;
                }
            }
            let ex = (g22 * b1 - g12 * b2) / det;
            let ey = (g11 * b2 - g12 * b1) / det;
            nx += ex;
            ny += ey;
            if ex * ex + ey * ey < params.epsilon * params.epsilon {
                break;
            }
        }
        if level > 0 {
            gx = 2.0 * (gx + nx);
            gy = 2.0 * (gy + ny);
        } else {
            gx += nx;
            gy += ny;
        }
    }
    let out = Point::new(p.x + gx, p.y + gy);
    let (w, h) = (next.levels[0].width as f32, next.levels[0].height as f32);
    if !out.x.is_finite() || !out.y.is_finite() || out.x < 0.0 || out.y < 0.0 || out.x > w - 1.0 || out.y > h - 1.0 {
        return None;
    }
    Some(out)
}

/// Pyramidal Lucas-Kanade over consecutive frame pairs. Seeds are placed on
/// the first frame; a lost track keeps the points found so far.
pub fn lucas_kanade_track(frames: &[FrameTensor], seeds: &[Point], params: &LkParams) -> Result<TrackSet> {
    if seeds.is_empty() {
        warn!("lucas_kanade_track: empty seed list");
        return Ok(TrackSet::default());
    }
    if frames.is_empty() {
        return Ok(TrackSet::default());
    }
    for f in &frames[1..] {
        check_pair(&frames[0], f)?;
    }
    let mut tracks: Vec<Vec<Point>> = seeds.iter().map(|&s| vec![s]).collect();
    let mut alive = vec![true; seeds.len()];
    let mut prev = Pyramid::build(&frames[0], params.levels, params.window)?;
    for frame in &frames[1..] {
        let next = Pyramid::build(frame, params.levels, params.window)?;
        for (track, ok) in tracks.iter_mut().zip(alive.iter_mut()) {
            if !*ok {
                continue;
            }
            match track_point(&prev, &next, *track.last().unwrap(), params) {
                Some(p) => track.push(p),
                None => *ok = false,
            }
        }
        prev = next;
    }
    Ok(TrackSet { tracks, status: alive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{shifted_pair, smooth_texture};

    #[test]
    fn identical_frames_give_stationary_tracks() {
        let tex = smooth_texture(64, 64, 2.0, 3);
        let frames = vec![tex.clone(), tex.clone(), tex];
        let seeds = vec![Point::new(30.0, 30.0), Point::new(20.5, 40.25)];
        let ts = lucas_kanade_track(&frames, &seeds, &LkParams::default()).unwrap();
        for (t, s) in ts.tracks.iter().zip(&seeds) {
            assert_eq!(t.len(), 3);
            assert!(t.iter().all(|p| p == s));
        }
    }

    #[test]
    fn recovers_known_translation() {
        let (a, b) = shifted_pair(96, 96, 3, 0, 11);
        let seeds: Vec<Point> = (0..5).flat_map(|i| (0..5).map(move |j| Point::new(30.0 + 8.0 * i as f32, 30.0 + 8.0 * j as f32))).collect();
        let ts = lucas_kanade_track(&[a, b], &seeds, &LkParams::default()).unwrap();
        let mut errs: Vec<f32> = ts
            .tracks
            .iter()
            .filter(|t| t.len() == 2)
            .map(|t| ((t[1].x - t[0].x - 3.0).powi(2) + (t[1].y - t[0].y).powi(2)).sqrt())
            .collect();
        assert!(errs.len() >= 20);
        errs.sort_by(f32::total_cmp);
        assert!(errs[errs.len() / 2] < 0.2, "{errs:?}");
    }

    #[test]
    fn reversed_sequence_recovers_reversed_motion() {
        let (a, b) = shifted_pair(96, 96, 2, 1, 4);
        let seeds: Vec<Point> = (0..4).flat_map(|i| (0..4).map(move |j| Point::new(32.0 + 10.0 * i as f32, 32.0 + 10.0 * j as f32))).collect();
        let params = LkParams::default();
        let fwd = lucas_kanade_track(&[a.clone(), b.clone()], &seeds, &params).unwrap();
        let ends: Vec<Point> = fwd.tracks.iter().map(|t| *t.last().unwrap()).collect();
        let bwd = lucas_kanade_track(&[b, a], &ends, &params).unwrap();
        let mut errs: Vec<f32> = fwd
            .tracks
            .iter()
            .zip(&bwd.tracks)
            .filter(|(f, b)| f.len() == 2 && b.len() == 2)
            .map(|(f, b)| {
                let (fx, fy) = (f[1].x - f[0].x, f[1].y - f[0].y);
                let (bx, by) = (b[1].x - b[0].x, b[1].y - b[0].y);
                ((fx + bx).powi(2) + (fy + by).powi(2)).sqrt()
            })
            .collect();
        assert!(errs.len() >= 12);
        errs.sort_by(f32::total_cmp);
        assert!(errs[errs.len() / 2] < 0.3, "{errs:?}");
    }

    #[test]
    fn flat_region_seed_is_dropped() {
        let f = FrameTensor::filled(64, 64, 1, 100.0);
        let ts = lucas_kanade_track(&[f.clone(), f], &[Point::new(32.0, 32.0)], &LkParams::default()).unwrap();
        assert_eq!(ts.tracks[0].len(), 1);
        assert!(!ts.status[0]);
    }

    #[test]
    fn empty_seeds_yield_empty_set() {
        let f = FrameTensor::filled(32, 32, 1, 1.0);
        assert!(lucas_kanade_track(&[f.clone(), f], &[], &LkParams::default()).unwrap().is_empty());
    }
}

use super::{Plane, Point};
use crate::error::{Error, Result};
use crate::imgproc::FrameTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodFeaturesParams {
    pub max_corners: usize,
    /// Fraction of the strongest response a corner must reach.
    pub quality: f32,
    /// Minimum Euclidean spacing between kept corners, pixels.
    pub min_distance: f32,
}

impl Default for GoodFeaturesParams {
    fn default() -> Self {
        Self { max_corners: 200, quality: 0.01, min_distance: 7.0 }
    }
}

/// Shi-Tomasi response: smaller eigenvalue of the 3x3-summed structure tensor
/// built from 3x3 Sobel derivatives.
pub fn min_eigen_map(frame: &FrameTensor) -> Result<Vec<f32>> {
    let img = Plane::from_frame(frame)?;
    let (w, h) = (img.width, img.height);
    let mut gxx = vec![0f32; w * h];
    let mut gxy = vec![0f32; w * h];
    let mut gyy = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let ix = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let iy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            gxx[i] = ix * ix;
            gxy[i] = ix * iy;
            gyy[i] = iy * iy;
        }
    }
    let sum3 = |m: &[f32], x: isize, y: isize| {
        let mut acc = 0f32;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let xc = (x + dx).clamp(0, w as isize - 1) as usize;
                let yc = (y + dy).clamp(0, h as isize - 1) as usize;
                acc += m[yc * w + xc];
            }
        }
        acc
    };
    let mut score = vec![0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let a = sum3(&gxx, x, y);
            let b = sum3(&gxy, x, y);
            let c = sum3(&gyy, x, y);
            let half_trace = 0.5 * (a + c);
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            score[y as usize * w + x as usize] = (half_trace - disc).max(0.0);
        }
    }
    Ok(score)
}

/// Strongest-first Shi-Tomasi corners: 3x3 local maxima reaching
/// `quality * max`, greedily thinned to `min_distance`.
pub fn good_features(frame: &FrameTensor, params: &GoodFeaturesParams) -> Result<Vec<Point>> {
    let (h, w) = (frame.height(), frame.width());
    if h < 16 || w < 16 {
        return Err(Error::FrameTooSmall { height: h, width: w, min: 16 });
    }
    let score = min_eigen_map(frame)?;
    let max = score.iter().copied().fold(0f32, f32::max);
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let threshold = params.quality * max;
    let mut candidates: Vec<(f32, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let s = score[y * w + x];
            if s < threshold || s <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if score[ny * w + nx] > s {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((s, y * w + x));
            }
        }
    }
    // stable: equal scores keep raster order
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
    let min_d2 = params.min_distance * params.min_distance;
    let mut kept: Vec<Point> = Vec::new();
    for (_, idx) in candidates {
        if kept.len() >= params.max_corners {
            break;
        }
        let p = Point::new((idx % w) as f32, (idx / w) as f32);
        if kept.iter().all(|q| (q.x - p.x).powi(2) + (q.y - p.y).powi(2) >= min_d2) {
            kept.push(p);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> FrameTensor {
        FrameTensor::from_fn(100, 100, 1, |y, x, _| {
            if (40..60).contains(&y) && (40..60).contains(&x) {
                255.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn constant_image_has_no_features() {
        let f = FrameTensor::filled(32, 32, 1, 80.0);
        assert!(good_features(&f, &GoodFeaturesParams::default()).unwrap().is_empty());
    }

    #[test]
    fn square_corners_are_found() {
        let pts = good_features(&square(), &GoodFeaturesParams::default()).unwrap();
        assert!(pts.len() >= 4, "{pts:?}");
        let corners = [(39.5, 39.5), (59.5, 39.5), (39.5, 59.5), (59.5, 59.5)];
        for p in &pts {
            let d = corners
                .iter()
                .map(|&(cx, cy)| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
                .fold(f32::INFINITY, f32::min);
            assert!(d <= 3.0, "{p:?} is {d} px from the nearest corner");
        }
    }

    /// Direct eigenvalue evaluation for a single pixel.
    #[test]
    fn min_eigen_matches_closed_form_at_a_pixel() {
        let f = square();
        let map = min_eigen_map(&f).unwrap();
        let px = |x: isize, y: isize| f.get(y.clamp(0, 99) as usize, x.clamp(0, 99) as usize, 0) as f64;
        let (x0, y0) = (40isize, 40isize);
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for y in y0 - 1..=y0 + 1 {
            for x in x0 - 1..=x0 + 1 {
                let ix = px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1)
                    - px(x - 1, y - 1) - 2.0 * px(x - 1, y) - px(x - 1, y + 1);
                let iy = px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1)
                    - px(x - 1, y - 1) - 2.0 * px(x, y - 1) - px(x + 1, y - 1);
                a += ix * ix;
                b += ix * iy;
                c += iy * iy;
            }
        }
        let m = [[a, b], [b, c]];
        let tr = m[0][0] + m[1][1];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let lmin = tr / 2.0 - (tr * tr / 4.0 - det).sqrt();
        let got = map[40 * 100 + 40] as f64;
        assert!((got - lmin).abs() <= 1e-3 * lmin.max(1.0), "{got} vs {lmin}");
    }

    #[test]
    fn nearby_blobs_are_thinned_to_one() {
        let blob = |y: usize, x: usize, cy: f32, cx: f32| {
            let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
            255.0 * (-d2 / 2.0).exp()
        };
        let f = FrameTensor::from_fn(40, 40, 1, |y, x, _| blob(y, x, 20.0, 17.5) + blob(y, x, 20.0, 22.5));
        let params = GoodFeaturesParams { min_distance: 7.0, ..Default::default() };
        let pts = good_features(&f, &params).unwrap();
        assert_eq!(pts.len(), 1, "{pts:?}");
    }

    #[test]
    fn respects_max_corners_and_order() {
        let f = FrameTensor::from_fn(64, 64, 1, |y, x, _| if (x / 8 + y / 8) % 2 == 0 { 0.0 } else { 200.0 });
        let params = GoodFeaturesParams { max_corners: 5, ..Default::default() };
        let pts = good_features(&f, &params).unwrap();
        assert_eq!(pts.len(), 5);
        let map = min_eigen_map(&f).unwrap();
        let s: Vec<f32> = pts.iter().map(|p| map[p.y as usize * 64 + p.x as usize]).collect();
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }
}

//! Two-frame dense motion estimation by polynomial expansion.
//!
//! Each pixel neighbourhood is approximated by `f(p) ~ p'Ap + b'p + c` using a
//! Gaussian-weighted least-squares fit. A translated signal keeps `A` and moves
//! `b` by `-2Ad`, which gives a per-pixel linear system for the displacement
//! `d`; the systems are averaged over a window and solved coarse to fine.

use super::{check_pair, FlowField, Plane};
use crate::error::{Error, Result};
use crate::imgproc::{gaussian_blur, resize_bilinear, FrameTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FarnebackParams {
    pub pyr_scale: f64,
    pub levels: usize,
    /// Side of the box window over which the per-pixel systems are averaged.
    pub winsize: usize,
    pub iterations: usize,
    /// Side of the polynomial fitting neighbourhood (odd).
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self { pyr_scale: 0.5, levels: 3, winsize: 15, iterations: 3, poly_n: 5, poly_sigma: 1.2 }
    }
}

/// Pyramid levels smaller than this on either side are skipped.
const MIN_LEVEL_SIDE: f64 = 32.0;
/// Pixels this close to the border get down-weighted systems.
const BORDER: usize = 5;
const BORDER_WEIGHTS: [f32; BORDER] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

/// Per-pixel expansion `[bx, by, axx, ayy, axy]` with
/// `f(x, y) ~ c + bx x + by y + axx x^2 + ayy y^2 + axy x y`.
type Coeffs = [f32; 5];

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = m;
    let mut inv = [[0f64; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let pivot = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for k in 0..6 {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for r in 0..6 {
            if r != col {
                let f = a[r][col];
                for k in 0..6 {
                    a[r][k] -= f * a[col][k];
                    inv[r][k] -= f * inv[col][k];
                }
            }
        }
    }
    inv
}

fn poly_expand(img: &Plane, poly_n: usize, sigma: f64) -> Vec<Coeffs> {
    let n = (poly_n / 2) as isize;
    let offsets: Vec<isize> = (-n..=n).collect();
    let g: Vec<f64> = offsets.iter().map(|&i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let g1: Vec<f64> = offsets.iter().zip(&g).map(|(&i, g)| g * i as f64).collect();
    let g2: Vec<f64> = offsets.iter().zip(&g).map(|(&i, g)| g * (i * i) as f64).collect();

    // Normal matrix of the basis [1, x, y, x^2, y^2, xy] under the weights.
    let mut gram = [[0f64; 6]; 6];
    for (iy, &y) in offsets.iter().enumerate() {
        for (ix, &x) in offsets.iter().enumerate() {
            let w = g[iy] * g[ix];
            let (xf, yf) = (x as f64, y as f64);
            let basis = [1.0, xf, yf, xf * xf, yf * yf, xf * yf];
            for r in 0..6 {
                for c in 0..6 {
                    gram[r][c] += w * basis[r] * basis[c];
                }
            }
        }
    }
    let ginv = invert6(gram);

    let (w, h) = (img.width, img.height);
    // Horizontal pass: correlations with g, g*x, g*x^2.
    let mut row = vec![[0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, &dx) in offsets.iter().enumerate() {
                let v = img.get_clamped(x as isize + dx, y as isize) as f64;
                acc[0] += g[k] * v;
                acc[1] += g1[k] * v;
                acc[2] += g2[k] * v;
            }
            row[y * w + x] = acc;
        }
    }
    let mut out = vec![[0f32; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            // Projections onto [1, x, y, x^2, y^2, xy].
            let mut proj = [0f64; 6];
            for (k, &dy) in offsets.iter().enumerate() {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let r = row[yy * w + x];
                proj[0] += g[k] * r[0];
                proj[1] += g[k] * r[1];
                proj[2] += g1[k] * r[0];
                proj[3] += g[k] * r[2];
                proj[4] += g2[k] * r[0];
                proj[5] += g1[k] * r[1];
            }
            let mut coef = [0f64; 6];
            for (r, c) in coef.iter_mut().enumerate() {
                *c = (0..6).map(|k| ginv[r][k] * proj[k]).sum();
            }
            out[y * w + x] = [coef[1] as f32, coef[2] as f32, coef[3] as f32, coef[4] as f32, coef[5] as f32];
        }
    }
    out
}

#[inline]
fn sample_coeffs(r: &[Coeffs], w: usize, h: usize, x: f32, y: f32) -> Option<Coeffs> {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f32 && y <= (h - 1) as f32) {
        return None;
    }
    let (xi, yi) = ((x as usize).min(w - 2), (y as usize).min(h - 2));
    let (fx, fy) = (x - xi as f32, y - yi as f32);
    let (a, b, c, d) = (&r[yi * w + xi], &r[yi * w + xi + 1], &r[(yi + 1) * w + xi], &r[(yi + 1) * w + xi + 1]);
    let mut out = [0f32; 5];
    for k in 0..5 {
        out[k] = (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy;
    }
    Some(out)
}

/// Per-pixel `[g11, g12, g22, h1, h2]` of the normal equations for the
/// residual displacement, linearised around the current flow.
fn update_matrices(r0: &[Coeffs], r1: &[Coeffs], flow: &FlowField) -> Vec<[f32; 5]> {
    let (w, h) = (flow.width, flow.height);
    let mut m = vec![[0f32; 5]; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (u, v) = (flow.u[i], flow.v[i]);
            let a0 = r0[i];
            let a1 = sample_coeffs(r1, w, h, x as f32 + u, y as f32 + v)
                .unwrap_or([0.0, 0.0, a0[2], a0[3], a0[4]]);
            let axx = 0.5 * (a0[2] + a1[2]);
            let ayy = 0.5 * (a0[3] + a1[3]);
            let axy = 0.25 * (a0[4] + a1[4]);
            let mut dbx = 0.5 * (a0[0] - a1[0]) + axx * u + axy * v;
            let mut dby = 0.5 * (a0[1] - a1[1]) + axy * u + ayy * v;
            let (mut axx, mut ayy, mut axy) = (axx, ayy, axy);
            let wx = if x < BORDER { BORDER_WEIGHTS[x] } else if x >= w - BORDER { BORDER_WEIGHTS[w - 1 - x] } else { 1.0 };
            let wy = if y < BORDER { BORDER_WEIGHTS[y] } else if y >= h - BORDER { BORDER_WEIGHTS[h - 1 - y] } else { 1.0 };
            let s = wx * wy;
            if s < 1.0 {
                axx *= s;
                ayy *= s;
                axy *= s;
                dbx *= s;
                dby *= s;
            }
            m[i] = [
                axx * axx + axy * axy,
                axy * (axx + ayy),
                ayy * ayy + axy * axy,
                axx * dbx + axy * dby,
                axy * dbx + ayy * dby,
            ];
        }
    }
    m
}

/// Normalised box filter with replicated borders, via running sums.
fn box_blur(m: &[[f32; 5]], w: usize, h: usize, size: usize) -> Vec<[f32; 5]> {
    let r = (size / 2) as isize;
    let norm = 1.0 / (size * size) as f64;
    let mut tmp = vec![[0f64; 5]; w * h];
    for y in 0..h {
        let mut acc = [0f64; 5];
        let at = |x: isize| m[y * w + x.clamp(0, w as isize - 1) as usize];
        for x in -r..=r {
            let v = at(x);
            for k in 0..5 {
                acc[k] += v[k] as f64;
            }
        }
        for x in 0..w as isize {
            tmp[y * w + x as usize] = acc;
            let (add, sub) = (at(x + r + 1), at(x - r));
            for k in 0..5 {
                acc[k] += add[k] as f64 - sub[k] as f64;
            }
        }
    }
    let mut out = vec![[0f32; 5]; w * h];
    for x in 0..w {
        let mut acc = [0f64; 5];
        let at = |y: isize| tmp[y.clamp(0, h as isize - 1) as usize * w + x];
        for y in -r..=r {
            let v = at(y);
            for k in 0..5 {
                acc[k] += v[k];
            }
        }
        for y in 0..h as isize {
            let o = &mut out[y as usize * w + x];
            for k in 0..5 {
                o[k] = (acc[k] * norm) as f32;
            }
            let (add, sub) = (at(y + r + 1), at(y - r));
            for k in 0..5 {
                acc[k] += add[k] - sub[k];
            }
        }
    }
    out
}

fn solve_flow(m: &[[f32; 5]], flow: &mut FlowField) {
    for (i, s) in m.iter().enumerate() {
        let [g11, g12, g22, h1, h2] = *s;
        let idet = 1.0 / (g11 as f64 * g22 as f64 - g12 as f64 * g12 as f64 + 1e-3);
        flow.u[i] = ((g22 as f64 * h1 as f64 - g12 as f64 * h2 as f64) * idet) as f32;
        flow.v[i] = ((g11 as f64 * h2 as f64 - g12 as f64 * h1 as f64) * idet) as f32;
    }
}

fn resize_flow(flow: &FlowField, h: usize, w: usize, factor: f32) -> FlowField {
    let t = FrameTensor::from_fn(flow.height, flow.width, 2, |y, x, c| {
        let (u, v) = flow.at(y, x);
        if c == 0 { u } else { v }
    });
    let r = resize_bilinear(&t, h, w);
    FlowField {
        height: h,
        width: w,
        u: r.data().iter().step_by(2).map(|v| v * factor).collect(),
        v: r.data().iter().skip(1).step_by(2).map(|v| v * factor).collect(),
    }
}

/// Dense flow from `frame_a` to `frame_b`: `frame_b(p + d(p)) ~ frame_a(p)`.
pub fn farneback_flow(frame_a: &FrameTensor, frame_b: &FrameTensor, params: &FarnebackParams) -> Result<FlowField> {
    check_pair(frame_a, frame_b)?;
    let (h, w) = (frame_a.height(), frame_a.width());
    let min = (1usize << params.levels) * params.poly_n;
    if h < min || w < min {
        return Err(Error::FrameTooSmall { height: h, width: w, min });
    }

    let mut top = 0;
    let mut scale = 1.0;
    for k in 1..=params.levels {
        scale *= params.pyr_scale;
        if (w as f64 * scale) < MIN_LEVEL_SIDE || (h as f64 * scale) < MIN_LEVEL_SIDE {
            break;
        }
        top = k;
    }

    let mut flow: Option<FlowField> = None;
    for level in (0..=top).rev() {
        let scale = params.pyr_scale.powi(level as i32);
        let (lw, lh) = (((w as f64) * scale).round() as usize, ((h as f64) * scale).round() as usize);
        let prep = |f: &FrameTensor| -> Result<Plane> {
            let sigma = (1.0 / scale - 1.0) * 0.5;
            let blurred = if level > 0 { gaussian_blur(f, sigma) } else { f.clone() };
            Plane::from_frame(&resize_bilinear(&blurred, lh, lw))
        };
        let (pa, pb) = (prep(frame_a)?, prep(frame_b)?);
        let mut cur = match &flow {
            None => FlowField::zeros(lh, lw),
            Some(prev) => resize_flow(prev, lh, lw, (1.0 / params.pyr_scale) as f32),
        };
        let r0 = poly_expand(&pa, params.poly_n, params.poly_sigma);
        let r1 = poly_expand(&pb, params.poly_n, params.poly_sigma);
        let mut m = update_matrices(&r0, &r1, &cur);
        for it in 0..params.iterations {
            let blurred = box_blur(&m, lw, lh, params.winsize);
            solve_flow(&blurred, &mut cur);
            if it + 1 < params.iterations {
                m = update_matrices(&r0, &r1, &cur);
            }
        }
        flow = Some(cur);
    }
    Ok(flow.expect("at least one pyramid level"))
}

use super::{FlowField, TrackSet};
use crate::imgproc::FrameTensor;

/// Track colours, indexed by track id modulo 16.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

/// `h` in degrees, `s` and `v` in `[0, 1]`; returns RGB in `[0, 255]`.
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Direction as hue, magnitude relative to the frame maximum as value.
pub fn render_dense(flow: &FlowField) -> FrameTensor {
    let mag: Vec<f32> = flow.u.iter().zip(&flow.v).map(|(u, v)| u.hypot(*v)).collect();
    let max = mag.iter().copied().fold(0f32, f32::max);
    let mut out = FrameTensor::zeros(flow.height, flow.width, 3);
    if max < 1e-9 {
        return out;
    }
    let data = out.data_mut();
    for (i, px) in data.chunks_exact_mut(3).enumerate() {
        let hue = flow.v[i].atan2(flow.u[i]).to_degrees().rem_euclid(360.0);
        px.copy_from_slice(&hsv_to_rgb(hue, 1.0, mag[i] / max));
    }
    out
}

fn draw_line(img: &mut FrameTensor, (x0, y0): (i64, i64), (x1, y1): (i64, i64), colour: [u8; 3]) {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            for c in 0..3 {
                img.set(y as usize, x as usize, c, colour[c] as f32);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Track polylines on a black `height x width x 3` canvas.
pub fn render_sparse(tracks: &TrackSet, height: usize, width: usize) -> FrameTensor {
    let mut img = FrameTensor::zeros(height, width, 3);
    for (id, track) in tracks.tracks.iter().enumerate() {
        let colour = PALETTE[id % PALETTE.len()];
        let pts: Vec<(i64, i64)> = track.iter().map(|p| (p.x.round() as i64, p.y.round() as i64)).collect();
        match pts.len() {
            0 => {}
            1 => draw_line(&mut img, pts[0], pts[0], colour),
            _ => pts.windows(2).for_each(|s| draw_line(&mut img, s[0], s[1], colour)),
        }
    }
    img
}

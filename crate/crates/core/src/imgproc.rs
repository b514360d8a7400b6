//! Pixel kernels and the [`FrameTensor`] carrier used by every representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, channel-last `H x W x C` array of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FrameTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} tensor needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("tensor contains non-finite values".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Extracts one channel as a single-channel tensor.
    pub fn channel(&self, c: usize) -> FrameTensor {
        FrameTensor::from_fn(self.height, self.width, 1, |y, x, _| self.get(y, x, c))
    }

    /// Replicates a single-channel tensor into `channels` identical channels.
    pub fn broadcast_channels(&self, channels: usize) -> Result<FrameTensor> {
        expect_channels(self, 1)?;
        Ok(FrameTensor::from_fn(self.height, self.width, channels, |y, x, _| self.get(y, x, 0)))
    }

    /// Concatenates tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&FrameTensor]) -> Result<FrameTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::ShapeMismatch("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        if parts.iter().any(|p| p.height != h || p.width != w) {
            return Err(Error::ShapeMismatch("spatial sizes differ in channel concat".into()));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h * w {
            for p in parts {
                data.extend_from_slice(&p.data[i * p.channels..(i + 1) * p.channels]);
            }
        }
        Ok(FrameTensor { height: h, width: w, channels, data })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

pub(crate) fn expect_channels(frame: &FrameTensor, expected: usize) -> Result<()> {
    if frame.channels != expected {
        return Err(Error::WrongChannelCount { expected, got: frame.channels });
    }
    Ok(())
}

/// ITU-R BT.601 luma.
pub fn to_greyscale(frame: &FrameTensor) -> Result<FrameTensor> {
    expect_channels(frame, 3)?;
    let data = frame
        .data
        .chunks_exact(3)
        .map(|px| {
            let v = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            v as f32
        })
        .collect();
    Ok(FrameTensor { height: frame.height, width: frame.width, channels: 1, data })
}

/// Greyscale for any input: 3-channel frames are converted, 1-channel frames are copied.
pub fn ensure_greyscale(frame: &FrameTensor) -> Result<FrameTensor> {
    match frame.channels {
        1 => Ok(frame.clone()),
        3 => to_greyscale(frame),
        got => Err(Error::WrongChannelCount { expected: 3, got }),
    }
}

/// Bilinear resize with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(frame: &FrameTensor, out_h: usize, out_w: usize) -> FrameTensor {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be non-empty");
    if out_h == frame.height && out_w == frame.width {
        return frame.clone();
    }
    let c = frame.channels;
    let xs = axis_taps(frame.width, out_w);
    let ys = axis_taps(frame.height, out_h);
    let mut data = vec![0f32; out_h * out_w * c];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let o = (oy * out_w + ox) * c;
            for ch in 0..c {
                let p00 = frame.get(y0, x0, ch) as f64;
                let p01 = frame.get(y0, x1, ch) as f64;
                let p10 = frame.get(y1, x0, ch) as f64;
                let p11 = frame.get(y1, x1, ch) as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                data[o + ch] = (top + (bottom - top) * fy) as f32;
            }
        }
    }
    FrameTensor { height: out_h, width: out_w, channels: c, data }
}

/// Source taps `(i0, i1, frac)` for each output index along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizeMode {
    /// `v / 255`, into `[0, 1]`.
    Unit,
    /// `v / 127.5 - 1`, into `[-1, 1]`.
    #[default]
    Symmetric,
}

pub fn normalize(frame: &FrameTensor, mode: NormalizeMode) -> FrameTensor {
    let data = frame
        .data
        .iter()
        .map(|&v| match mode {
            NormalizeMode::Unit => v / 255.0,
            NormalizeMode::Symmetric => v / 127.5 - 1.0,
        })
        .collect();
    FrameTensor { height: frame.height, width: frame.width, channels: frame.channels, data }
}

pub fn flatten_row_major(frame: &FrameTensor) -> Result<Vec<f32>> {
    expect_channels(frame, 1)?;
    Ok(frame.data.clone())
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(frame: &FrameTensor, sigma: f64) -> FrameTensor {
    if sigma <= 0.0 {
        return frame.clone();
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel: Vec<f64> =
        (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    separable_filter(frame, &kernel, &kernel)
}

/// Correlates rows with `kx` then columns with `ky` (both odd length), replicating borders.
pub(crate) fn separable_filter(frame: &FrameTensor, kx: &[f64], ky: &[f64]) -> FrameTensor {
    let (h, w, c) = frame.shape();
    let rx = (kx.len() / 2) as isize;
    let ry = (ky.len() / 2) as isize;
    let mut tmp = vec![0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in kx.iter().enumerate() {
                    let sx = (x as isize + i as isize - rx).clamp(0, w as isize - 1) as usize;
                    acc += k * frame.get(y, sx, ch) as f64;
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut data = vec![0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (i, k) in ky.iter().enumerate() {
                    let sy = (y as isize + i as isize - ry).clamp(0, h as isize - 1) as usize;
                    acc += k * tmp[(sy * w + x) * c + ch];
                }
                data[(y * w + x) * c + ch] = acc as f32;
            }
        }
    }
    FrameTensor { height: h, width: w, channels: c, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb(h: usize, w: usize, px: [f32; 3]) -> FrameTensor {
        FrameTensor::from_fn(h, w, 3, |_, _, c| px[c])
    }

    #[test]
    fn greyscale_of_white_black_and_red() {
        let white = to_greyscale(&rgb(4, 5, [255.0; 3])).unwrap();
        assert!(white.data().iter().all(|&v| (v - 255.0).abs() < 1e-4));
        let black = to_greyscale(&rgb(4, 5, [0.0; 3])).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
        let red = to_greyscale(&rgb(2, 2, [255.0, 0.0, 0.0])).unwrap();
        assert!(red.data().iter().all(|&v| (v - 76.245).abs() < 1e-4));
    }

    #[test]
    fn greyscale_rejects_single_channel() {
        let err = to_greyscale(&FrameTensor::zeros(2, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::WrongChannelCount { expected: 3, got: 1 }));
    }

    #[test]
    fn resize_identity_and_centre_average() {
        let f = FrameTensor::from_fn(5, 7, 2, |y, x, c| (y * 31 + x * 7 + c) as f32);
        assert_eq!(resize_bilinear(&f, 5, 7), f);
        let chk = FrameTensor::new(2, 2, 1, vec![0.0, 255.0, 255.0, 0.0]).unwrap();
        let one = resize_bilinear(&chk, 1, 1);
        assert_eq!(one.data(), &[127.5]);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let f = FrameTensor::filled(13, 9, 3, 42.0);
        for (h, w) in [(1, 1), (224, 224), (5, 40)] {
            let r = resize_bilinear(&f, h, w);
            assert_eq!(r.shape(), (h, w, 3));
            assert!(r.data().iter().all(|&v| (v - 42.0).abs() < 1e-4));
        }
    }

    #[test]
    fn normalize_endpoints() {
        let f = FrameTensor::new(1, 3, 1, vec![0.0, 127.5, 255.0]).unwrap();
        assert_eq!(normalize(&f, NormalizeMode::Unit).data()[2], 1.0);
        let s = normalize(&f, NormalizeMode::Symmetric);
        assert_eq!(s.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn flatten_is_row_major() {
        let f = FrameTensor::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten_row_major(&f).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let one = FrameTensor::new(1, 1, 1, vec![7.0]).unwrap();
        assert_eq!(flatten_row_major(&one).unwrap(), vec![7.0]);
        assert_eq!(flatten_row_major(&FrameTensor::zeros(64, 64, 1)).unwrap().len(), 4096);
        assert!(flatten_row_major(&FrameTensor::zeros(2, 2, 3)).is_err());
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(FrameTensor::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FrameTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    fn arb_frame(channels: usize) -> impl Strategy<Value = FrameTensor> {
        (1usize..12, 1usize..12).prop_flat_map(move |(h, w)| {
            proptest::collection::vec(0u8..=255, h * w * channels).prop_map(move |v| {
                FrameTensor::new(h, w, channels, v.into_iter().map(f32::from).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn grey_broadcast_round_trip(f in arb_frame(1)) {
            let grey = to_greyscale(&f.broadcast_channels(3).unwrap()).unwrap();
            for (a, b) in grey.data().iter().zip(f.data()) {
                prop_assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
            }
        }

        #[test]
        fn resize_stays_within_input_range(f in arb_frame(2), h in 1usize..30, w in 1usize..30) {
            let (lo, hi) = f.min_max();
            let r = resize_bilinear(&f, h, w);
            let (rlo, rhi) = r.min_max();
            prop_assert!(rlo >= lo - 1e-3 && rhi <= hi + 1e-3);
        }

        #[test]
        fn unit_normalize_recovers_input(f in arb_frame(3)) {
            let n = normalize(&f, NormalizeMode::Unit);
            for (a, b) in n.data().iter().zip(f.data()) {
                prop_assert!((a * 255.0 - b).abs() < 1e-5);
            }
        }
    }
}

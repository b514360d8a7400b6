//! Sparse (Shi-Tomasi seeds + pyramidal Lucas-Kanade) and dense (Farneback)
//! optical flow, and the renderers that turn flow into images.

mod farneback;
mod features;
mod lk;
mod render;

pub use farneback::{farneback_flow, FarnebackParams};
pub use features::{good_features, min_eigen_map, GoodFeaturesParams};
pub use lk::{lucas_kanade_track, LkParams};
pub use render::{hsv_to_rgb, render_dense, render_sparse, PALETTE};

use crate::error::{Error, Result};
use crate::imgproc::{expect_channels, FrameTensor};
use crate::tenfile::TenArray;

/// Sub-pixel image position, `x` along columns and `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
}

impl Point {
    pub fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }
}

/// Point tracks over one window. A lost track is truncated at its last good
/// position and flagged in `status`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    pub tracks: Vec<Vec<Point>>,
    /// `true` when the track survived every frame of the window.
    pub status: Vec<bool>,
}

impl TrackSet {
    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }
}

/// Dense per-pixel displacement from frame A to frame B.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, u: vec![0.0; height * width], v: vec![0.0; height * width] }
    }

    pub fn uniform(height: usize, width: usize, u: f32, v: f32) -> Self {
        Self { height, width, u: vec![u; height * width], v: vec![v; height * width] }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// `H x W x 2` cache layout.
    pub fn to_ten(&self) -> TenArray {
        let data = self.u.iter().zip(&self.v).flat_map(|(&u, &v)| [u, v]).collect();
        TenArray { dims: vec![self.height, self.width, 2], data }
    }

    pub fn from_ten(t: &TenArray) -> Result<Self> {
        match t.dims[..] {
            [h, w, 2] => Ok(Self {
                height: h,
                width: w,
                u: t.data.iter().step_by(2).copied().collect(),
                v: t.data.iter().skip(1).step_by(2).copied().collect(),
            }),
            _ => Err(Error::ShapeMismatch(format!("flow cache must be HxWx2, got {:?}", t.dims))),
        }
    }
}

/// Single-channel `f32` image used internally by the flow estimators.
#[derive(Debug, Clone)]
pub(crate) struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn from_frame(frame: &FrameTensor) -> Result<Self> {
        expect_channels(frame, 1)?;
        Ok(Self { width: frame.width(), height: frame.height(), data: frame.data().to_vec() })
    }

    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    /// Bilinear sample with replicated borders.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

fn check_pair(a: &FrameTensor, b: &FrameTensor) -> Result<()> {
    expect_channels(a, 1)?;
    expect_channels(b, 1)?;
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "flow frames differ in size: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

//! Greyscale conversion, resizing, blurring and normalization of one frame.

use motility::imgproc::{gaussian_blur, normalize, resize_bilinear, to_greyscale, FrameTensor, NormalizeMode};

fn main() -> motility::Result<()> {
    let rgb = FrameTensor::from_fn(48, 64, 3, |y, x, c| ((x * 4 + y * 2 + c * 40) % 256) as f32);
    let grey = to_greyscale(&rgb)?;
    let small = resize_bilinear(&grey, 24, 32);
    let blurred = gaussian_blur(&small, 1.5);
    for mode in [NormalizeMode::Unit, NormalizeMode::Symmetric] {
        let (lo, hi) = normalize(&blurred, mode).min_max();
        println!("{mode:?}: shape {:?}, range [{lo:.3}, {hi:.3}]", blurred.shape());
    }
    Ok(())
}

//! Tamura coarseness, contrast and directionality of a few synthetic textures.

use motility::imgproc::FrameTensor;
use motility::synthetic::smooth_texture;
use motility::tamura::{descriptor, DIRECTION_BINS};

fn main() -> motility::Result<()> {
    let stripes = FrameTensor::from_fn(64, 64, 1, |_, x, _| if (x / 2) % 2 == 0 { 40.0 } else { 210.0 });
    let blocks = FrameTensor::from_fn(64, 64, 1, |y, x, _| if (x / 8 + y / 8) % 2 == 0 { 0.0 } else { 255.0 });
    let noise = smooth_texture(64, 64, 1.0, 5);
    for (name, img) in [("stripes", stripes), ("blocks", blocks), ("noise", noise)] {
        let d = descriptor(&img)?;
        let (peak, mass) = d
            .directionality
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, &m)| if m > best.1 { (i, m) } else { best });
        println!(
            "{name:8} coarseness {:6.2}  contrast {:6.2}  peak bin {peak}/{DIRECTION_BINS} holds {:.2}",
            d.coarseness, d.contrast, mass
        );
    }
    Ok(())
}

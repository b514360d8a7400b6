//! Sparse and dense flow on a textured frame pair shifted by a known amount.

use motility::optflow::{
    farneback_flow, good_features, lucas_kanade_track, render_dense, FarnebackParams, GoodFeaturesParams, LkParams,
};
use motility::synthetic::shifted_pair;

fn main() -> motility::Result<()> {
    let (dx, dy) = (2, 1);
    let (a, b) = shifted_pair(96, 96, dx, dy, 3);

    let seeds = good_features(&a, &GoodFeaturesParams::default())?;
    let tracks = lucas_kanade_track(&[a.clone(), b.clone()], &seeds, &LkParams::default())?;
    let mut errors: Vec<f32> = tracks
        .tracks
        .iter()
        .zip(&tracks.status)
        .filter(|(_, &ok)| ok)
        .map(|(t, _)| ((t[1].x - t[0].x - dx as f32).powi(2) + (t[1].y - t[0].y - dy as f32).powi(2)).sqrt())
        .collect();
    errors.sort_by(f32::total_cmp);
    println!("LK: {} of {} tracks kept, median endpoint error {:.3} px", errors.len(), seeds.len(), errors[errors.len() / 2]);

    let flow = farneback_flow(&a, &b, &FarnebackParams::default())?;
    let (u, v) = flow.at(48, 48);
    println!("Farneback at the centre: ({u:.3}, {v:.3}), expected ({dx}, {dy})");
    let rgb = render_dense(&flow);
    println!("dense render {:?}", rgb.shape());
    Ok(())
}

//! Model-input samples built from frame windows, and the participant vector.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{FrameSequence, MotilityTargets, ParticipantFeatures, SampleWindow, SEQUENCE_LENGTH};
use crate::error::{Error, Result};
use crate::imgproc::{ensure_greyscale, flatten_row_major, normalize, resize_bilinear, FrameTensor, NormalizeMode};
use crate::optflow::{
    farneback_flow, good_features, lucas_kanade_track, render_dense, render_sparse, FarnebackParams,
    GoodFeaturesParams, LkParams,
};
use crate::tenfile::{self, TenArray};

/// Side of the square image representations.
pub const REP_SIDE: usize = 224;
/// Side of each frame before it is flattened into a vertical-matrix row.
pub const VMATRIX_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Sparse,
    Dense,
    /// Sparse and dense renders stacked channel-wise.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RepresentationKind {
    SingleFrame,
    GreyStack30,
    VerticalMatrix,
    SparseFlow,
    DenseFlow { stride: usize },
    TwoStream { flow: FlowKind, stride: usize },
}

impl RepresentationKind {
    /// Declared `(h, w, c)` of each stream.
    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        let img = (REP_SIDE, REP_SIDE, 3);
        match self {
            Self::SingleFrame | Self::SparseFlow | Self::DenseFlow { .. } => vec![img],
            Self::GreyStack30 => vec![(REP_SIDE, REP_SIDE, SEQUENCE_LENGTH)],
            Self::VerticalMatrix => vec![(SEQUENCE_LENGTH, VMATRIX_SIDE * VMATRIX_SIDE, 1)],
            Self::TwoStream { flow: FlowKind::Both, .. } => vec![img, (REP_SIDE, REP_SIDE, 6)],
            Self::TwoStream { .. } => vec![img, img],
        }
    }

    /// Frames read from the window start.
    pub fn frames_needed(&self) -> usize {
        match *self {
            Self::SingleFrame => 1,
            Self::GreyStack30 | Self::VerticalMatrix | Self::SparseFlow => SEQUENCE_LENGTH,
            Self::DenseFlow { stride } => stride + 1,
            Self::TwoStream { flow: FlowKind::Dense, stride } => stride + 1,
            Self::TwoStream { flow: FlowKind::Sparse, .. } => SEQUENCE_LENGTH,
            Self::TwoStream { flow: FlowKind::Both, stride } => SEQUENCE_LENGTH.max(stride + 1),
        }
    }

    /// Window length used when scheduling samples.
    pub fn window_length(&self) -> usize {
        match self {
            Self::SingleFrame => 1,
            _ => SEQUENCE_LENGTH,
        }
    }

    /// Directory name inside a participant's cache.
    pub fn tag(&self) -> String {
        match self {
            Self::SingleFrame => "single".into(),
            Self::GreyStack30 => "greystack".into(),
            Self::VerticalMatrix => "vmatrix".into(),
            Self::SparseFlow => "sparse".into(),
            Self::DenseFlow { stride } => format!("dense-s{stride}"),
            Self::TwoStream { flow, stride } => {
                let f = match flow {
                    FlowKind::Sparse => "sparse",
                    FlowKind::Dense => "dense",
                    FlowKind::Both => "both",
                };
                format!("two-stream-{f}-s{stride}")
            }
        }
    }
}

impl fmt::Display for RepresentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// Flow estimator settings shared by the flow builders.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowSettings {
    pub features: GoodFeaturesParams,
    pub lk: LkParams,
    pub farneback: FarnebackParams,
}

/// One model input: one stream, or two for two-stream kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub streams: Vec<FrameTensor>,
    pub participant: Option<Vec<f32>>,
    pub targets: MotilityTargets,
    pub participant_id: String,
}

fn need(window: &SampleWindow, frames: &[FrameTensor], n: usize) -> Result<()> {
    if frames.len() < n {
        return Err(Error::VideoTooShort { frame_count: window.start_frame + frames.len(), length: window.start_frame + n });
    }
    Ok(())
}

fn to_rgb(frame: &FrameTensor) -> Result<FrameTensor> {
    match frame.channels() {
        3 => Ok(frame.clone()),
        1 => frame.broadcast_channels(3),
        got => Err(Error::WrongChannelCount { expected: 3, got }),
    }
}

/// First frame of the window as a `224 x 224 x 3` image.
pub fn build_single(window: &SampleWindow, frames: &[FrameTensor], mode: NormalizeMode) -> Result<FrameTensor> {
    need(window, frames, 1)?;
    let rgb = to_rgb(&frames[0])?;
    Ok(normalize(&resize_bilinear(&rgb, REP_SIDE, REP_SIDE), mode))
}

/// Thirty greyscale frames, one per channel.
pub fn build_greystack(window: &SampleWindow, frames: &[FrameTensor], mode: NormalizeMode) -> Result<FrameTensor> {
    need(window, frames, SEQUENCE_LENGTH)?;
    let layers = frames[..SEQUENCE_LENGTH]
        .iter()
        .map(|f| Ok(resize_bilinear(&ensure_greyscale(f)?, REP_SIDE, REP_SIDE)))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FrameTensor> = layers.iter().collect();
    Ok(normalize(&FrameTensor::concat_channels(&refs)?, mode))
}

/// Thirty `64 x 64` greyscale frames, each flattened into one row.
pub fn build_vertical_matrix(window: &SampleWindow, frames: &[FrameTensor], mode: NormalizeMode) -> Result<FrameTensor> {
    need(window, frames, SEQUENCE_LENGTH)?;
    let mut data = Vec::with_capacity(SEQUENCE_LENGTH * VMATRIX_SIDE * VMATRIX_SIDE);
    for f in &frames[..SEQUENCE_LENGTH] {
        data.extend(flatten_row_major(&resize_bilinear(&ensure_greyscale(f)?, VMATRIX_SIDE, VMATRIX_SIDE))?);
    }
    let m = FrameTensor::new(SEQUENCE_LENGTH, VMATRIX_SIDE * VMATRIX_SIDE, 1, data)?;
    Ok(normalize(&m, mode))
}

fn sparse_render(frames: &[FrameTensor], settings: &FlowSettings) -> Result<FrameTensor> {
    let grey = frames[..SEQUENCE_LENGTH].iter().map(ensure_greyscale).collect::<Result<Vec<_>>>()?;
    let seeds = good_features(&grey[0], &settings.features)?;
    let tracks = lucas_kanade_track(&grey, &seeds, &settings.lk)?;
    Ok(render_sparse(&tracks, grey[0].height(), grey[0].width()))
}

fn dense_render(window: &SampleWindow, frames: &[FrameTensor], stride: usize, settings: &FlowSettings) -> Result<FrameTensor> {
    if stride == 0 || frames.len() <= stride {
        return Err(Error::StrideOutOfRange {
            start: window.start_frame,
            stride,
            frame_count: window.start_frame + frames.len(),
        });
    }
    let a = ensure_greyscale(&frames[0])?;
    let b = ensure_greyscale(&frames[stride])?;
    Ok(render_dense(&farneback_flow(&a, &b, &settings.farneback)?))
}

/// Sparse tracks over the 30-frame window, or dense flow between the window
/// start and `stride` frames later, rendered and resized to `224 x 224 x 3`.
pub fn build_flow_rep(
    window: &SampleWindow,
    frames: &[FrameTensor],
    flow: FlowKind,
    stride: usize,
    mode: NormalizeMode,
    settings: &FlowSettings,
) -> Result<FrameTensor> {
    let img = match flow {
        FlowKind::Sparse => {
            need(window, frames, SEQUENCE_LENGTH)?;
            sparse_render(frames, settings)?
        }
        FlowKind::Dense => dense_render(window, frames, stride, settings)?,
        FlowKind::Both => {
            need(window, frames, SEQUENCE_LENGTH)?;
            let s = sparse_render(frames, settings)?;
            let d = dense_render(window, frames, stride, settings)?;
            FrameTensor::concat_channels(&[&s, &d])?
        }
    };
    Ok(normalize(&resize_bilinear(&img, REP_SIDE, REP_SIDE), mode))
}

/// Raw first frame and the flow render of the window.
pub fn build_two_stream(
    window: &SampleWindow,
    frames: &[FrameTensor],
    flow: FlowKind,
    stride: usize,
    mode: NormalizeMode,
    settings: &FlowSettings,
) -> Result<(FrameTensor, FrameTensor)> {
    Ok((build_single(window, frames, mode)?, build_flow_rep(window, frames, flow, stride, mode, settings)?))
}

/// Builds every stream of `kind` from frames that start at the window start.
pub fn build(
    kind: RepresentationKind,
    window: &SampleWindow,
    frames: &[FrameTensor],
    mode: NormalizeMode,
    settings: &FlowSettings,
) -> Result<Vec<FrameTensor>> {
    Ok(match kind {
        RepresentationKind::SingleFrame => vec![build_single(window, frames, mode)?],
        RepresentationKind::GreyStack30 => vec![build_greystack(window, frames, mode)?],
        RepresentationKind::VerticalMatrix => vec![build_vertical_matrix(window, frames, mode)?],
        RepresentationKind::SparseFlow => vec![build_flow_rep(window, frames, FlowKind::Sparse, 1, mode, settings)?],
        RepresentationKind::DenseFlow { stride } => {
            vec![build_flow_rep(window, frames, FlowKind::Dense, stride, mode, settings)?]
        }
        RepresentationKind::TwoStream { flow, stride } => {
            let (a, b) = build_two_stream(window, frames, flow, stride, mode, settings)?;
            vec![a, b]
        }
    })
}

/// Reads the frames `kind` needs for `window` and builds it.
pub fn build_from_sequence(
    kind: RepresentationKind,
    window: &SampleWindow,
    seq: &mut FrameSequence,
    mode: NormalizeMode,
    settings: &FlowSettings,
) -> Result<Vec<FrameTensor>> {
    let available = seq.frame_count().saturating_sub(window.start_frame);
    let frames = seq.frames(window.start_frame, kind.frames_needed().min(available))?;
    build(kind, window, &frames, mode, settings)
}

/// Per-feature mean and standard deviation of a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn raw_features(f: &ParticipantFeatures, include_concentration: bool, id: &str) -> Result<Vec<f64>> {
    let mut v = vec![f.age, f.bmi, f.abstinence];
    if include_concentration {
        v.push(f.concentration.ok_or_else(|| Error::MissingConcentration(id.to_string()))?);
    }
    Ok(v)
}

impl FoldStats {
    /// Statistics over `(participant_id, features)` pairs of the training fold.
    pub fn fit<'a>(
        rows: impl IntoIterator<Item = (&'a str, &'a ParticipantFeatures)>,
        include_concentration: bool,
    ) -> Result<Self> {
        let vals = rows
            .into_iter()
            .map(|(id, f)| raw_features(f, include_concentration, id))
            .collect::<Result<Vec<_>>>()?;
        if vals.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let d = vals[0].len();
        let n = vals.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| vals.iter().map(|v| v[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| (vals.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self { mean, std })
    }
}

/// Z-scored `[age, bmi, abstinence(, concentration)]`.
pub fn participant_vector(
    participant_id: &str,
    features: &ParticipantFeatures,
    include_concentration: bool,
    stats: &FoldStats,
) -> Result<Vec<f32>> {
    let raw = raw_features(features, include_concentration, participant_id)?;
    if raw.len() != stats.mean.len() {
        return Err(Error::ShapeMismatch(format!(
            "fold statistics cover {} features, vector has {}",
            stats.mean.len(),
            raw.len()
        )));
    }
    Ok(raw
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| if *s < 1e-9 { 0.0 } else { ((v - m) / s) as f32 })
        .collect())
}

/// `<cache>/<participant>/<kind>/<window_index>.ten`; two-stream entries
/// hold both streams concatenated channel-wise.
pub fn cache_path(cache: &Path, participant_id: &str, kind: RepresentationKind, window_index: usize) -> PathBuf {
    cache.join(participant_id).join(kind.tag()).join(format!("{window_index}.ten"))
}

pub fn store_cached(path: &Path, streams: &[FrameTensor]) -> Result<()> {
    let refs: Vec<&FrameTensor> = streams.iter().collect();
    let joined = FrameTensor::concat_channels(&refs)?;
    tenfile::write(path, &TenArray::from(&joined))
}

/// Reads a cache entry and splits it into the streams of `kind`.
pub fn load_cached(path: &Path, kind: RepresentationKind) -> Result<Vec<FrameTensor>> {
    let joined = tenfile::read(path)?.into_frame()?;
    let shapes = kind.shapes();
    let total: usize = shapes.iter().map(|s| s.2).sum();
    let (h, w, c) = joined.shape();
    if (h, w) != (shapes[0].0, shapes[0].1) || c != total {
        return Err(Error::ShapeMismatch(format!("cached {:?} does not match {kind}", joined.shape())));
    }
    if shapes.len() == 1 {
        return Ok(vec![joined]);
    }
    let mut out = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(_, _, sc) in &shapes {
        let off = offset;
        out.push(FrameTensor::from_fn(h, w, sc, |y, x, ch| joined.get(y, x, off + ch)));
        offset += sc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgproc::to_greyscale;
    use crate::synthetic::{dot_video, smooth_texture, DotVideoSpec};
    use proptest::prelude::*;

    fn win(start: usize) -> SampleWindow {
        SampleWindow { participant_id: "p".into(), start_frame: start, length: SEQUENCE_LENGTH }
    }

    fn rgb_frames(n: usize, seed: u64) -> Vec<FrameTensor> {
        (0..n)
            .map(|i| {
                let t = smooth_texture(40, 48, 2.0, seed + i as u64);
                FrameTensor::from_fn(40, 48, 3, |y, x, c| (t.get(y, x, 0) + 10.0 * c as f32).min(255.0))
            })
            .collect()
    }

    #[test]
    fn single_frame_shape_constant_and_determinism() {
        let frames = rgb_frames(2, 1);
        let a = build_single(&win(0), &frames, NormalizeMode::Symmetric).unwrap();
        assert_eq!(a.shape(), (224, 224, 3));
        assert_eq!(a, build_single(&win(0), &frames, NormalizeMode::Symmetric).unwrap());
        let flat = build_single(&win(0), &[FrameTensor::filled(10, 10, 1, 51.0)], NormalizeMode::Unit).unwrap();
        assert!(flat.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn greystack_channels_are_grey_frames() {
        let frames = rgb_frames(30, 2);
        let g = build_greystack(&win(0), &frames, NormalizeMode::Unit).unwrap();
        assert_eq!(g.shape(), (224, 224, 30));
        let expect = normalize(&resize_bilinear(&to_greyscale(&frames[7]).unwrap(), 224, 224), NormalizeMode::Unit);
        assert_eq!(g.channel(7), expect);
        let same = vec![frames[0].clone(); 30];
        let g = build_greystack(&win(0), &same, NormalizeMode::Unit).unwrap();
        assert!((1..30).all(|c| g.channel(c) == g.channel(0)));
    }

    #[test]
    fn vertical_matrix_rows() {
        let frames = rgb_frames(30, 3);
        let m = build_vertical_matrix(&win(0), &frames, NormalizeMode::Symmetric).unwrap();
        assert_eq!(m.shape(), (30, 4096, 1));
        let row0 = flatten_row_major(&resize_bilinear(&to_greyscale(&frames[0]).unwrap(), 64, 64)).unwrap();
        for (a, b) in m.data()[..4096].iter().zip(&row0) {
            assert_eq!(*a, b / 127.5 - 1.0);
        }
        let same = vec![frames[1].clone(); 30];
        let m = build_vertical_matrix(&win(0), &same, NormalizeMode::Symmetric).unwrap();
        assert!((1..30).all(|r| m.data()[r * 4096..(r + 1) * 4096] == m.data()[..4096]));
    }

    #[test]
    fn static_video_gives_black_dense_flow() {
        let f = smooth_texture(64, 64, 2.0, 4);
        let frames = vec![f; 2];
        let r = build_flow_rep(&win(0), &frames, FlowKind::Dense, 1, NormalizeMode::Unit, &FlowSettings::default()).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moving_dots_leave_sparse_tracks() {
        let (frames, _) = dot_video(&DotVideoSpec { frames: 30, ..Default::default() }, 5);
        let r = build_flow_rep(&win(0), &frames, FlowKind::Sparse, 1, NormalizeMode::Unit, &FlowSettings::default()).unwrap();
        assert!(r.data().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn stride_changes_magnitude_not_image() {
        // 0.2 px per frame drift to the right
        let big = smooth_texture(80, 100, 2.5, 6);
        let frames: Vec<FrameTensor> = (0..11)
            .map(|i| {
                let s = 0.2 * i as f32;
                FrameTensor::from_fn(64, 64, 1, |y, x, _| {
                    let sx = x as f32 + 16.0 - s;
                    let x0 = sx.floor();
                    let fx = sx - x0;
                    let x0 = x0 as usize;
                    big.get(y + 8, x0, 0) * (1.0 - fx) + big.get(y + 8, x0 + 1, 0) * fx
                })
            })
            .collect();
        let s = FlowSettings::default();
        let one = build_flow_rep(&win(0), &frames, FlowKind::Dense, 1, NormalizeMode::Unit, &s).unwrap();
        let ten = build_flow_rep(&win(0), &frames, FlowKind::Dense, 10, NormalizeMode::Unit, &s).unwrap();
        let interior = |img: &FrameTensor| {
            let mut acc = [0f64; 3];
            for y in 40..184 {
                for x in 40..184 {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += img.get(y, x, c) as f64;
                    }
                }
            }
            acc.map(|a| a / (144.0 * 144.0))
        };
        for m in [interior(&one), interior(&ten)] {
            // hue 0: red dominates, green and blue stay low
            assert!(m[0] > 0.6 && m[1] < 0.2 && m[2] < 0.2, "{m:?}");
        }
    }

    #[test]
    fn stride_past_the_end_is_an_error() {
        let frames = vec![FrameTensor::zeros(64, 64, 1); 5];
        let err = build_flow_rep(&win(100), &frames, FlowKind::Dense, 10, NormalizeMode::Unit, &FlowSettings::default());
        assert!(matches!(err, Err(Error::StrideOutOfRange { start: 100, stride: 10, frame_count: 105 })));
    }

    #[test]
    fn two_stream_shapes_and_shared_first_stream() {
        let (frames, _) = dot_video(&DotVideoSpec { frames: 30, ..Default::default() }, 8);
        let s = FlowSettings::default();
        let w = win(0);
        let (a, b) = build_two_stream(&w, &frames, FlowKind::Both, 1, NormalizeMode::Symmetric, &s).unwrap();
        assert_eq!(b.shape(), (224, 224, 6));
        assert_eq!(a, build_single(&w, &frames, NormalizeMode::Symmetric).unwrap());
        let (_, b) = build_two_stream(&w, &frames, FlowKind::Dense, 1, NormalizeMode::Symmetric, &s).unwrap();
        assert_eq!(b.shape(), (224, 224, 3));
    }

    fn feats(age: f64, conc: Option<f64>) -> ParticipantFeatures {
        ParticipantFeatures { age, bmi: 22.0 + age / 10.0, abstinence: age % 5.0, concentration: conc }
    }

    #[test]
    fn participant_vector_z_scores() {
        let train = [feats(20.0, Some(10.0)), feats(30.0, Some(30.0)), feats(40.0, Some(50.0))];
        let stats = FoldStats::fit(train.iter().map(|f| ("t", f)), false).unwrap();
        let at_mean = ParticipantFeatures { age: 30.0, bmi: stats.mean[1], abstinence: stats.mean[2], concentration: None };
        assert_eq!(participant_vector("x", &at_mean, false, &stats).unwrap(), vec![0.0; 3]);
        let one_up = ParticipantFeatures { age: stats.mean[0] + stats.std[0], ..at_mean };
        assert!((participant_vector("x", &one_up, false, &stats).unwrap()[0] - 1.0).abs() < 1e-6);
        let stats4 = FoldStats::fit(train.iter().map(|f| ("t", f)), true).unwrap();
        assert_eq!(participant_vector("x", &train[0], true, &stats4).unwrap().len(), 4);
        assert!(matches!(
            participant_vector("x", &feats(25.0, None), true, &stats4),
            Err(Error::MissingConcentration(id)) if id == "x"
        ));
    }

    #[test]
    fn cache_round_trip_splits_streams() {
        let dir = tempfile::tempdir().unwrap();
        let kind = RepresentationKind::TwoStream { flow: FlowKind::Both, stride: 1 };
        let a = FrameTensor::from_fn(224, 224, 3, |y, x, c| (y + x + c) as f32);
        let b = FrameTensor::from_fn(224, 224, 6, |y, x, c| (y * x + c) as f32);
        let path = cache_path(dir.path(), "p7", kind, 3);
        assert!(path.ends_with("p7/two-stream-both-s1/3.ten"));
        store_cached(&path, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(load_cached(&path, kind).unwrap(), vec![a, b]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn training_vectors_are_centred(ages in prop::collection::vec(18.0f64..60.0, 2..12)) {
            let train: Vec<_> = ages.iter().map(|&a| feats(a, None)).collect();
            let stats = FoldStats::fit(train.iter().map(|f| ("t", f)), false).unwrap();
            let vs: Vec<_> = train.iter().map(|f| participant_vector("t", f, false, &stats).unwrap()).collect();
            for j in 0..3 {
                let m: f32 = vs.iter().map(|v| v[j]).sum::<f32>() / vs.len() as f32;
                prop_assert!(m.abs() < 1e-4);
            }
        }
    }
}

//! Dataset manifest, frame ingestion and sample scheduling.
//!
//! Frames come from either a directory of images (sorted by file name) or a raw
//! `.y8seq` / `.rgbseq` file:
//!
//! ```text
//! magic "Y8SQ" | "RGBS", u32 width, u32 height, u32 frame_count (little-endian),
//! then frame_count * height * width * {1|3} bytes, row-major
//! ```

use std::fs::{self, File};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::FrameTensor;

pub const MANIFEST_COLUMNS: [&str; 11] = [
    "participant_id",
    "frame_source",
    "fps",
    "frame_count",
    "age",
    "bmi",
    "abstinence",
    "concentration",
    "progressive",
    "nonprogressive",
    "immotile",
];

/// Default number of windows drawn from each video.
pub const SAMPLES_PER_VIDEO: usize = 250;
/// Frames in one sequence window.
pub const SEQUENCE_LENGTH: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFeatures {
    /// Years.
    pub age: f64,
    /// kg/m².
    pub bmi: f64,
    /// Days of sexual abstinence.
    pub abstinence: f64,
    /// 10⁶/mL.
    pub concentration: Option<f64>,
}

impl ParticipantFeatures {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.age > 0.0) {
            return Err(format!("age must be positive, got {}", self.age));
        }
        if !(self.bmi > 0.0) {
            return Err(format!("bmi must be positive, got {}", self.bmi));
        }
        if !(self.abstinence >= 0.0) {
            return Err(format!("abstinence must be non-negative, got {}", self.abstinence));
        }
        if let Some(c) = self.concentration {
            if !(c >= 0.0) {
                return Err(format!("concentration must be non-negative, got {c}"));
            }
        }
        Ok(())
    }
}

/// Percentages of progressive, non-progressive and immotile spermatozoa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotilityTargets {
    pub progressive: f64,
    pub nonprogressive: f64,
    pub immotile: f64,
}

/// Outcome of checking that the three categories partition roughly 100%.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetSumCheck {
    Ok,
    Warn,
    Reject,
}

impl MotilityTargets {
    pub fn new(progressive: f64, nonprogressive: f64, immotile: f64) -> Self {
        Self { progressive, nonprogressive, immotile }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.progressive, self.nonprogressive, self.immotile]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn sum(&self) -> f64 {
        self.progressive + self.nonprogressive + self.immotile
    }

    pub fn check_sum(&self) -> TargetSumCheck {
        let s = self.sum();
        if (98.0..=102.0).contains(&s) {
            TargetSumCheck::Ok
        } else if (90.0..=110.0).contains(&s) {
            TargetSumCheck::Warn
        } else {
            TargetSumCheck::Reject
        }
    }

    fn in_range(&self) -> bool {
        self.as_array().iter().all(|v| (0.0..=100.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub participant_id: String,
    pub frame_source: PathBuf,
    pub fps: f64,
    pub frame_count: usize,
    pub features: ParticipantFeatures,
    pub targets: MotilityTargets,
}

impl VideoRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidRecord {
            participant: self.participant_id.clone(),
            reason,
        };
        if self.participant_id.is_empty() {
            return Err(invalid("empty participant id".into()));
        }
        if !(self.fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frame_count < SEQUENCE_LENGTH {
            return Err(invalid(format!(
                "frame_count {} is below the {SEQUENCE_LENGTH}-frame minimum",
                self.frame_count
            )));
        }
        self.features.validate().map_err(invalid)?;
        if !self.targets.in_range() {
            return Err(invalid("motility targets must lie in [0, 100]".into()));
        }
        match self.targets.check_sum() {
            TargetSumCheck::Ok => {}
            TargetSumCheck::Warn => warn!(
                "participant {}: motility targets sum to {:.2}",
                self.participant_id,
                self.targets.sum()
            ),
            TargetSumCheck::Reject => {
                return Err(Error::TargetSumOutOfRange(self.participant_id.clone()))
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleWindow {
    pub participant_id: String,
    pub start_frame: usize,
    pub length: usize,
}

/// Reads and validates a manifest CSV. Relative `frame_source` paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(file, base)
}

pub fn parse_manifest(input: impl Read, base_dir: &Path) -> Result<Vec<VideoRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::BadFormat(format!("manifest header: {e}")))?
        .clone();
    let mut idx = [0usize; 11];
    for (slot, col) in idx.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::MissingColumn(col.to_string()))?;
    }

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let rec = result.map_err(|e| Error::BadFormat(format!("manifest row {row}: {e}")))?;
        let cell = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            cell(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::BadNumeric { row, col: MANIFEST_COLUMNS[i].to_string() })
        };
        let frame_count = cell(3)
            .parse::<usize>()
            .map_err(|_| Error::BadNumeric { row, col: "frame_count".into() })?;
        let concentration = if cell(7).is_empty() { None } else { Some(num(7)?) };
        let source = PathBuf::from(cell(1));
        let record = VideoRecord {
            participant_id: cell(0).to_string(),
            frame_source: if source.is_absolute() { source } else { base_dir.join(source) },
            fps: num(2)?,
            frame_count,
            features: ParticipantFeatures {
                age: num(4)?,
                bmi: num(5)?,
                abstinence: num(6)?,
                concentration,
            },
            targets: MotilityTargets::new(num(8)?, num(9)?, num(10)?),
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}

/// Writes records in manifest format. Frame sources are written relative to
/// `base_dir` when they live under it.
pub fn write_manifest(out: impl Write, records: &[VideoRecord], base_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::BadFormat(format!("manifest write: {e}"));
    w.write_record(MANIFEST_COLUMNS).map_err(wrap)?;
    for r in records {
        let source = r.frame_source.strip_prefix(base_dir).unwrap_or(&r.frame_source);
        let f = &r.features;
        let t = &r.targets;
        w.write_record([
            r.participant_id.clone(),
            source.to_string_lossy().into_owned(),
            r.fps.to_string(),
            r.frame_count.to_string(),
            f.age.to_string(),
            f.bmi.to_string(),
            f.abstinence.to_string(),
            f.concentration.map(|c| c.to_string()).unwrap_or_default(),
            t.progressive.to_string(),
            t.nonprogressive.to_string(),
            t.immotile.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::BadFormat(format!("manifest write: {e}")))
}

pub fn save_manifest(path: &Path, records: &[VideoRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(file, records, base)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RawKind {
    Grey,
    Rgb,
}

impl RawKind {
    fn magic(self) -> &'static [u8; 4] {
        match self {
            RawKind::Grey => b"Y8SQ",
            RawKind::Rgb => b"RGBS",
        }
    }

    fn channels(self) -> usize {
        match self {
            RawKind::Grey => 1,
            RawKind::Rgb => 3,
        }
    }
}

enum Backend {
    Raw { reader: BufReader<File> },
    Dir { paths: Vec<PathBuf> },
    Memory { frames: Vec<FrameTensor> },
}

/// Random-access reader over the frames of one video. One reader per handle.
pub struct FrameSequence {
    backend: Backend,
    width: usize,
    height: usize,
    channels: usize,
    frame_count: usize,
}

impl std::fmt::Debug for FrameSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameSequence")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("frame_count", &self.frame_count)
            .finish()
    }
}

impl FrameSequence {
    pub fn open(source: &Path) -> Result<Self> {
        if source.is_dir() {
            return Self::open_dir(source);
        }
        let file = File::open(source).map_err(|e| Error::io(source, e))?;
        let mut reader = BufReader::new(file);
        let mut head = [0u8; 16];
        reader
            .read_exact(&mut head)
            .map_err(|_| Error::BadFormat(format!("{}: truncated header", source.display())))?;
        let kind = match &head[..4] {
            b"Y8SQ" => RawKind::Grey,
            b"RGBS" => RawKind::Rgb,
            _ => return Err(Error::BadFormat(format!("{}: unknown magic", source.display()))),
        };
        let u32_at = |o: usize| u32::from_le_bytes([head[o], head[o + 1], head[o + 2], head[o + 3]]) as usize;
        let (width, height, frame_count) = (u32_at(4), u32_at(8), u32_at(12));
        Ok(Self {
            backend: Backend::Raw { reader },
            width,
            height,
            channels: kind.channels(),
            frame_count,
        })
    }

    fn open_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        let mut dims = None;
        for (i, p) in paths.iter().enumerate() {
            let d = image::image_dimensions(p).map_err(|_| Error::UnreadableFrame(i))?;
            match dims {
                None => dims = Some(d),
                Some(first) if first != d => return Err(Error::InconsistentDimensions(i)),
                _ => {}
            }
        }
        let (w, h) = dims.unwrap_or((0, 0));
        Ok(Self {
            frame_count: paths.len(),
            backend: Backend::Dir { paths },
            width: w as usize,
            height: h as usize,
            channels: 3,
        })
    }

    pub fn from_frames(frames: Vec<FrameTensor>) -> Result<Self> {
        let (height, width, channels) = frames.first().map(|f| f.shape()).unwrap_or((0, 0, 1));
        if let Some(i) = frames.iter().position(|f| f.shape() != (height, width, channels)) {
            return Err(Error::InconsistentDimensions(i));
        }
        Ok(Self {
            frame_count: frames.len(),
            backend: Backend::Memory { frames },
            width,
            height,
            channels,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame(&mut self, index: usize) -> Result<FrameTensor> {
        if index >= self.frame_count {
            return Err(Error::UnreadableFrame(index));
        }
        let (w, h, c) = (self.width, self.height, self.channels);
        match &mut self.backend {
            Backend::Memory { frames } => Ok(frames[index].clone()),
            Backend::Raw { reader, .. } => {
                let size = w * h * c;
                let offset = 16 + (index * size) as u64;
                let mut buf = vec![0u8; size];
                reader
                    .seek(SeekFrom::Start(offset))
                    .and_then(|_| reader.read_exact(&mut buf))
                    .map_err(|_| Error::UnreadableFrame(index))?;
                FrameTensor::new(h, w, c, buf.into_iter().map(f32::from).collect())
            }
            Backend::Dir { paths } => {
                let img = image::open(&paths[index]).map_err(|_| Error::UnreadableFrame(index))?;
                let rgb = img.to_rgb8();
                if rgb.width() as usize != w || rgb.height() as usize != h {
                    return Err(Error::InconsistentDimensions(index));
                }
                FrameTensor::new(h, w, 3, rgb.into_raw().into_iter().map(f32::from).collect())
            }
        }
    }

    pub fn frames(&mut self, start: usize, count: usize) -> Result<Vec<FrameTensor>> {
        (start..start + count).map(|i| self.frame(i)).collect()
    }
}

pub fn open_frames(record: &VideoRecord) -> Result<FrameSequence> {
    FrameSequence::open(&record.frame_source)
}

/// Writes frames as `.y8seq` (1 channel) or `.rgbseq` (3 channels). Values are
/// rounded and clamped to bytes.
pub fn write_frame_seq(path: &Path, frames: &[FrameTensor]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::BadFormat("no frames to write".into()))?;
    let (h, w, c) = first.shape();
    let kind = match c {
        1 => RawKind::Grey,
        3 => RawKind::Rgb,
        got => return Err(Error::WrongChannelCount { expected: 1, got }),
    };
    let mut buf = Vec::with_capacity(16 + frames.len() * h * w * c);
    buf.extend_from_slice(kind.magic());
    for v in [w, h, frames.len()] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if f.shape() != (h, w, c) {
            return Err(Error::InconsistentDimensions(i));
        }
        buf.extend(f.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// `n_samples` windows of `length` frames with evenly spaced starts,
/// `round(i * (frame_count - length) / (n_samples - 1))`.
pub fn schedule_windows(
    participant_id: &str,
    frame_count: usize,
    n_samples: usize,
    length: usize,
) -> Result<Vec<SampleWindow>> {
    if frame_count < length {
        return Err(Error::VideoTooShort { frame_count, length });
    }
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let span = (frame_count - length) as f64;
    Ok((0..n_samples)
        .map(|i| {
            let start = if n_samples == 1 { 0 } else { (i as f64 * span / (n_samples - 1) as f64).round() as usize };
            SampleWindow { participant_id: participant_id.to_string(), start_frame: start, length }
        })
        .collect())
}

/// First and middle frame of each of the first `seconds` seconds.
pub fn classical_frame_indices(fps: f64, seconds: usize) -> Vec<usize> {
    (0..seconds)
        .flat_map(|s| {
            let base = s as f64 * fps;
            [base.round() as usize, (base + fps / 2.0).round() as usize]
        })
        .collect()
}

//! Builds every input representation from one synthetic window and prints
//! the stream shapes.

use motility::dataio::schedule_windows;
use motility::imgproc::NormalizeMode;
use motility::represent::{build, FlowKind, FlowSettings, RepresentationKind};
use motility::synthetic::{dot_video, DotVideoSpec};

fn main() -> motility::Result<()> {
    let (frames, _) = dot_video(&DotVideoSpec::default(), 11);
    let settings = FlowSettings::default();
    let kinds = [
        RepresentationKind::SingleFrame,
        RepresentationKind::GreyStack30,
        RepresentationKind::VerticalMatrix,
        RepresentationKind::SparseFlow,
        RepresentationKind::DenseFlow { stride: 1 },
        RepresentationKind::DenseFlow { stride: 10 },
        RepresentationKind::TwoStream { flow: FlowKind::Dense, stride: 1 },
        RepresentationKind::TwoStream { flow: FlowKind::Both, stride: 1 },
    ];
    for kind in kinds {
        let w = &schedule_windows("demo", frames.len(), 1, kind.window_length())?[0];
        let streams = build(kind, w, &frames[w.start_frame..], NormalizeMode::Symmetric, &settings)?;
        let shapes: Vec<_> = streams.iter().map(|s| s.shape()).collect();
        println!("{:24} {shapes:?}", kind.tag());
    }
    Ok(())
}

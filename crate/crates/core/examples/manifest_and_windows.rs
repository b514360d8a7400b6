//! Writes a small drifting-dot dataset, reads its manifest back and lays out
//! the sample windows of the first video.

use motility::dataio::{load_manifest, open_frames, schedule_windows, SEQUENCE_LENGTH};
use motility::synthetic::{write_dot_dataset, DotVideoSpec};

fn main() -> motility::Result<()> {
    let dir = std::env::temp_dir().join("motility-example-manifest");
    write_dot_dataset(&dir, 4, &DotVideoSpec::default(), 7)?;
    let records = load_manifest(&dir.join("manifest.csv"))?;
    for r in &records {
        let t = r.targets;
        println!(
            "{}: {} frames at {} fps, targets {:.1}/{:.1}/{:.1}",
            r.participant_id, r.frame_count, r.fps, t.progressive, t.nonprogressive, t.immotile
        );
    }
    let first = &records[0];
    let seq = open_frames(first)?;
    let windows = schedule_windows(&first.participant_id, seq.frame_count(), 5, SEQUENCE_LENGTH)?;
    let starts: Vec<usize> = windows.iter().map(|w| w.start_frame).collect();
    println!("window starts for {}: {starts:?}", first.participant_id);
    Ok(())
}

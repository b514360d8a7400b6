use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{FeatureSet, ModelFamily, NeuralSettings, RunConfig, CONFIG_FILE, HASH_FILE};
use crate::classical::{load_model, save_model, ClassicalMethod, ClassicalModel, Dataset2D};
use crate::dataio::{
    load_manifest, open_frames, schedule_windows, FrameSequence, MotilityTargets, ParticipantFeatures, SampleWindow,
    TargetSumCheck, VideoRecord,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate_per_video, mae, make_folds, CvReport, FoldPlan, FoldScore, ReportSet};
use crate::neural::{predict, target_mean, train, Checkpoint, Network, SampleSource, TrainConfig};
use crate::represent::{
    build_from_sequence, cache_path, load_cached, participant_vector, store_cached, FlowSettings, FoldStats,
    RepresentationKind, Sample,
};
use crate::synthetic::{write_dot_dataset, DotVideoSpec};
use crate::tamura::video_feature_vector_from;
use crate::tenfile::{self, TenArray};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const PLOTS_CSV: &str = "plots.csv";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const NEURAL_MODEL: &str = "model.mnn";
pub const CLASSICAL_MODEL: &str = "model.mcm";
const CLASSICAL_META: &str = "model_meta.json";

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn with_participant<T>(id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::InvalidRecord { .. } | Error::MissingConcentration(_)) => e,
        e => Error::InvalidRecord { participant: id.to_string(), reason: e.to_string() },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub videos: usize,
    pub windows_per_video: usize,
    pub with_concentration: usize,
    pub target_warnings: Vec<String>,
}

impl fmt::Display for PrepareSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} videos, {} windows each", self.videos, self.windows_per_video)?;
        writeln!(f, "{} with a concentration value", self.with_concentration)?;
        for w in &self.target_warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Validates the manifest and every frame source against the configuration.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<PrepareSummary> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    let length = cfg.representation.window_length();
    let mut target_warnings = Vec::new();
    for r in &records {
        if cfg.with_participant_data && cfg.with_concentration && r.features.concentration.is_none() {
            return Err(Error::MissingConcentration(r.participant_id.clone()));
        }
        if r.targets.check_sum() == TargetSumCheck::Warn {
            target_warnings.push(format!("{}: targets sum to {:.1}", r.participant_id, r.targets.sum()));
        }
        let seq = with_participant(&r.participant_id, open_frames(r))?;
        with_participant(&r.participant_id, schedule_windows(&r.participant_id, seq.frame_count(), 1, length))?;
    }
    Ok(PrepareSummary {
        videos: records.len(),
        windows_per_video: cfg.samples_per_video,
        with_concentration: records.iter().filter(|r| r.features.concentration.is_some()).count(),
        target_warnings,
    })
}

/// Writes a drifting-dot dataset with `manifest.csv` into `dir`.
pub fn cmd_generate(dir: &Path, videos: usize, spec: &DotVideoSpec, seed: u64) -> Result<Vec<VideoRecord>> {
    write_dot_dataset(dir, videos, spec, seed)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractSummary {
    pub label: String,
    pub videos: usize,
    pub entries: usize,
    /// Entries computed by this call; the rest were already cached.
    pub computed: usize,
}

impl fmt::Display for ExtractSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} cached {} entries for {} videos", self.entries, self.label, self.videos)
    }
}

fn windows_for(cfg: &RunConfig, record: &VideoRecord, frame_count: usize) -> Result<Vec<SampleWindow>> {
    schedule_windows(&record.participant_id, frame_count, cfg.samples_per_video, cfg.representation.window_length())
}

fn tamura_path(cache: &Path, id: &str) -> PathBuf {
    cache.join(id).join("tamura.ten")
}

fn uses_tamura(cfg: &RunConfig) -> bool {
    match &cfg.model {
        ModelFamily::Classical { method: ClassicalMethod::Zeror, .. } | ModelFamily::Neural(_) => false,
        ModelFamily::Classical { features, .. } => matches!(features, FeatureSet::Tamura | FeatureSet::Both),
    }
}

fn extract_record(cfg: &RunConfig, r: &VideoRecord, settings: &FlowSettings) -> Result<(usize, usize)> {
    let id = &r.participant_id;
    if !cfg.model.is_neural() {
        if !uses_tamura(cfg) {
            return Ok((0, 0));
        }
        let path = tamura_path(&cfg.cache_dir, id);
        if path.exists() {
            return Ok((1, 0));
        }
        let mut seq = open_frames(r)?;
        let v = video_feature_vector_from(&mut seq, r.fps, id)?;
        tenfile::write(&path, &TenArray::new(vec![v.len()], v)?)?;
        return Ok((1, 1));
    }
    let kind = cfg.representation;
    let windows = windows_for(cfg, r, r.frame_count)?;
    let mut seq: Option<FrameSequence> = None;
    let mut computed = 0;
    for (i, w) in windows.iter().enumerate() {
        let path = cache_path(&cfg.cache_dir, id, kind, i);
        if path.exists() {
            continue;
        }
        if seq.is_none() {
            seq = Some(open_frames(r)?);
        }
        let seq = seq.as_mut().expect("opened above");
        let streams = build_from_sequence(kind, w, seq, cfg.normalize, settings)?;
        store_cached(&path, &streams)?;
        computed += 1;
    }
    Ok((windows.len(), computed))
}

/// Fills the cache with every representation (or Tamura vector) the
/// configuration needs; existing entries are reused.
pub fn cmd_extract(cfg: &RunConfig) -> Result<ExtractSummary> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    extract_records(cfg, &records)
}

fn extract_records(cfg: &RunConfig, records: &[VideoRecord]) -> Result<ExtractSummary> {
    let settings = FlowSettings::default();
    let counts: Vec<(usize, usize)> = records
        .par_iter()
        .map(|r| with_participant(&r.participant_id, extract_record(cfg, r, &settings)))
        .collect::<Result<_>>()?;
    let label = if cfg.model.is_neural() { cfg.representation.tag() } else { "tamura".into() };
    let summary = ExtractSummary {
        label,
        videos: records.len(),
        entries: counts.iter().map(|c| c.0).sum(),
        computed: counts.iter().map(|c| c.1).sum(),
    };
    info!("{summary} ({} newly computed)", summary.computed);
    Ok(summary)
}

struct CachedEntry {
    path: PathBuf,
    participant_id: String,
    targets: MotilityTargets,
    participant: Option<Vec<f32>>,
}

/// Samples read from the representation cache on demand.
pub struct CachedSamples {
    kind: RepresentationKind,
    entries: Vec<CachedEntry>,
}

impl CachedSamples {
    /// Every cached window of `records`, with participant vectors when `stats`
    /// is given.
    pub fn new(cfg: &RunConfig, records: &[&VideoRecord], stats: Option<&FoldStats>) -> Result<Self> {
        let mut entries = Vec::new();
        for r in records {
            let id = &r.participant_id;
            let participant = match stats {
                Some(s) => Some(participant_vector(id, &r.features, cfg.with_concentration, s)?),
                None => None,
            };
            for i in 0..cfg.samples_per_video {
                entries.push(CachedEntry {
                    path: cache_path(&cfg.cache_dir, id, cfg.representation, i),
                    participant_id: id.clone(),
                    targets: r.targets,
                    participant: participant.clone(),
                });
            }
        }
        Ok(Self { kind: cfg.representation, entries })
    }
}

impl SampleSource for CachedSamples {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, Sample>> {
        let e = &self.entries[index];
        Ok(Cow::Owned(Sample {
            streams: load_cached(&e.path, self.kind)?,
            participant: e.participant.clone(),
            targets: e.targets,
            participant_id: e.participant_id.clone(),
        }))
    }

    fn targets(&self, index: usize) -> [f64; 3] {
        self.entries[index].targets.as_array()
    }

    fn participant_id(&self, index: usize) -> Cow<'_, str> {
        Cow::Borrowed(&self.entries[index].participant_id)
    }
}

fn fold_seed(cfg: &RunConfig, fold: usize) -> u64 {
    cfg.seed.wrapping_mul(1_000_003).wrapping_add(fold as u64)
}

/// Participant-level split of `ids` into (train, validation).
pub fn validation_split(ids: &[String], fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut ids = ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a11));
    let n_val = if fraction > 0.0 && ids.len() >= 2 { ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1) } else { 0 };
    let val = ids.split_off(ids.len() - n_val);
    (ids, val)
}

fn assert_disjoint(groups: &[&[String]]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for g in groups {
        for id in *g {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("participant {id} leaks across training, validation and test")));
            }
        }
    }
    Ok(())
}

struct FoldResult {
    method: FoldScore,
    baseline: FoldScore,
    log: serde_json::Value,
}

fn pick<'a>(by_id: &HashMap<&str, &'a VideoRecord>, ids: &[String]) -> Vec<&'a VideoRecord> {
    ids.iter().map(|id| by_id[id.as_str()]).collect()
}

fn zeror_fold(train: &[&VideoRecord], test: &[&VideoRecord], n_train: usize) -> Result<FoldScore> {
    let mut mean = [0.0; 3];
    for r in train {
        for (m, v) in mean.iter_mut().zip(r.targets.as_array()) {
            *m += v;
        }
    }
    let mean = mean.map(|v| v / train.len() as f64);
    let truth: Vec<[f64; 3]> = test.iter().map(|r| r.targets.as_array()).collect();
    Ok(FoldScore {
        test_ids: test.iter().map(|r| r.participant_id.clone()).collect(),
        n_train,
        video: mae(&vec![mean; truth.len()], &truth)?,
        sample: None,
    })
}

fn fold_stats(cfg: &RunConfig, records: &[&VideoRecord]) -> Result<Option<FoldStats>> {
    if !cfg.with_participant_data {
        return Ok(None);
    }
    FoldStats::fit(records.iter().map(|r| (r.participant_id.as_str(), &r.features)), cfg.with_concentration).map(Some)
}

fn neural_fold(
    cfg: &RunConfig,
    settings: &NeuralSettings,
    fold: usize,
    train_recs: &[&VideoRecord],
    test_recs: &[&VideoRecord],
) -> Result<(FoldScore, serde_json::Value)> {
    let seed = fold_seed(cfg, fold);
    let ids: Vec<String> = train_recs.iter().map(|r| r.participant_id.clone()).collect();
    let (inner, val) = validation_split(&ids, settings.validation_fraction, seed);
    let test_ids: Vec<String> = test_recs.iter().map(|r| r.participant_id.clone()).collect();
    assert_disjoint(&[&inner, &val, &test_ids])?;
    let inner_recs: Vec<&VideoRecord> = train_recs.iter().copied().filter(|r| inner.contains(&r.participant_id)).collect();
    let val_recs: Vec<&VideoRecord> = train_recs.iter().copied().filter(|r| val.contains(&r.participant_id)).collect();
    let stats = fold_stats(cfg, &inner_recs)?;
    let tr = CachedSamples::new(cfg, &inner_recs, stats.as_ref())?;
    let va = CachedSamples::new(cfg, &val_recs, stats.as_ref())?;
    let te = CachedSamples::new(cfg, test_recs, stats.as_ref())?;
    let mut net = Network::<f32>::new(settings.network_spec(cfg.representation, cfg.participant_dim()), seed)?;
    net.set_output_bias(&target_mean(&tr));
    let tc = TrainConfig { seed: settings.train.seed.wrapping_add(seed), ..settings.train };
    let mut out = train(net, &tr, &va, &tc)?;
    let preds = predict(&mut out.network, &te, tc.batch_size)?;
    let sample_ids: Vec<String> = (0..te.len()).map(|i| te.participant_id(i).into_owned()).collect();
    let sample_truth: Vec<[f64; 3]> = (0..te.len()).map(|i| te.targets(i)).collect();
    let video_pred = aggregate_per_video(&preds, &sample_ids, &test_ids)?;
    let video_truth: Vec<[f64; 3]> = test_recs.iter().map(|r| r.targets.as_array()).collect();
    let score = FoldScore {
        test_ids,
        n_train: train_recs.len(),
        video: mae(&video_pred, &video_truth)?,
        sample: Some(mae(&preds, &sample_truth)?),
    };
    let log = json!({
        "train_participants": inner,
        "validation_participants": val,
        "train_samples": tr.len(),
        "validation_samples": va.len(),
        "test_samples": te.len(),
        "best_epoch": out.history.best_epoch,
        "history": out.history.epochs,
    });
    Ok((score, log))
}

fn effective_features(cfg: &RunConfig, features: FeatureSet) -> FeatureSet {
    match (features, cfg.with_participant_data) {
        (FeatureSet::Tamura, true) => FeatureSet::Both,
        (f, _) => f,
    }
}

fn classical_rows(
    cfg: &RunConfig,
    features: FeatureSet,
    records: &[&VideoRecord],
    stats: Option<&FoldStats>,
) -> Result<Vec<Vec<f64>>> {
    records
        .iter()
        .map(|r| {
            let id = &r.participant_id;
            let mut row = Vec::new();
            if matches!(features, FeatureSet::Tamura | FeatureSet::Both) {
                row.extend(tenfile::read(&tamura_path(&cfg.cache_dir, id))?.data.iter().map(|&v| v as f64));
            }
            if matches!(features, FeatureSet::Participant | FeatureSet::Both) {
                let s = stats.ok_or_else(|| Error::Config("participant features need fold statistics".into()))?;
                row.extend(participant_vector(id, &r.features, cfg.with_concentration, s)?.iter().map(|&v| v as f64));
            }
            Ok(row)
        })
        .collect()
}

fn participant_stats_for(cfg: &RunConfig, features: FeatureSet, records: &[&VideoRecord]) -> Result<Option<FoldStats>> {
    if matches!(features, FeatureSet::Tamura) {
        return Ok(None);
    }
    FoldStats::fit(records.iter().map(|r| (r.participant_id.as_str(), &r.features)), cfg.with_concentration).map(Some)
}

fn fit_classical(
    cfg: &RunConfig,
    method: &ClassicalMethod,
    features: FeatureSet,
    train_recs: &[&VideoRecord],
    seed: u64,
) -> Result<(Vec<ClassicalModel>, Option<FoldStats>)> {
    let stats = participant_stats_for(cfg, features, train_recs)?;
    let rows = if matches!(method, ClassicalMethod::Zeror) {
        vec![vec![0.0]; train_recs.len()]
    } else {
        classical_rows(cfg, features, train_recs, stats.as_ref())?
    };
    let ids: Vec<String> = train_recs.iter().map(|r| r.participant_id.clone()).collect();
    let models = (0..3)
        .map(|j| {
            let y = train_recs.iter().map(|r| r.targets.as_array()[j]).collect();
            method.fit(&Dataset2D::new(&rows, y, ids.clone())?, seed.wrapping_add(j as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((models, stats))
}

fn classical_fold(
    cfg: &RunConfig,
    method: &ClassicalMethod,
    features: FeatureSet,
    fold: usize,
    train_recs: &[&VideoRecord],
    test_recs: &[&VideoRecord],
) -> Result<FoldScore> {
    let (models, stats) = fit_classical(cfg, method, features, train_recs, fold_seed(cfg, fold))?;
    let rows = if matches!(method, ClassicalMethod::Zeror) {
        vec![vec![0.0]; test_recs.len()]
    } else {
        classical_rows(cfg, features, test_recs, stats.as_ref())?
    };
    let pred: Vec<[f64; 3]> = rows.iter().map(|row| [0, 1, 2].map(|j| models[j].predict(row))).collect();
    let truth: Vec<[f64; 3]> = test_recs.iter().map(|r| r.targets.as_array()).collect();
    Ok(FoldScore {
        test_ids: test_recs.iter().map(|r| r.participant_id.clone()).collect(),
        n_train: train_recs.len(),
        video: mae(&pred, &truth)?,
        sample: None,
    })
}

fn run_fold(cfg: &RunConfig, plan: &FoldPlan, by_id: &HashMap<&str, &VideoRecord>, fold: usize) -> Result<FoldResult> {
    let train_ids = plan.train_ids(fold);
    let test_ids = plan.test_ids(fold);
    assert_disjoint(&[&train_ids, test_ids])?;
    let train_recs = pick(by_id, &train_ids);
    let test_recs = pick(by_id, test_ids);
    let baseline = zeror_fold(&train_recs, &test_recs, train_ids.len())?;
    let (method, extra) = match &cfg.model {
        ModelFamily::Neural(settings) => neural_fold(cfg, settings, fold, &train_recs, &test_recs)?,
        ModelFamily::Classical { method, features } => {
            let f = effective_features(cfg, *features);
            (classical_fold(cfg, method, f, fold, &train_recs, &test_recs)?, json!({}))
        }
    };
    let log = json!({
        "event": "fold",
        "fold": fold + 1,
        "train_participants": train_ids,
        "test_participants": test_ids,
        "method_average_mae": method.video.average,
        "zeror_average_mae": baseline.video.average,
        "details": extra,
    });
    Ok(FoldResult { method, baseline, log })
}

/// Cross-validated evaluation of the configured method next to ZeroR.
/// Writes the report (CSV, text, JSON), the run log and the config snapshot.
pub fn cmd_evaluate(cfg: &RunConfig, emit_plots: bool) -> Result<ReportSet> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    if cfg.with_participant_data && cfg.with_concentration {
        if let Some(r) = records.iter().find(|r| r.features.concentration.is_none()) {
            return Err(Error::MissingConcentration(r.participant_id.clone()));
        }
    }
    extract_records(cfg, &records)?;
    let ids: Vec<String> = records.iter().map(|r| r.participant_id.clone()).collect();
    let plan = make_folds(&ids, cfg.folds, cfg.seed)?;
    plan.check_partition(&ids)?;
    let by_id: HashMap<&str, &VideoRecord> = records.iter().map(|r| (r.participant_id.as_str(), r)).collect();
    let mut log = vec![json!({ "event": "config", "hash": cfg.hash(), "folds": plan.folds })];
    let mut method = CvReport { method: cfg.method_name(), folds: Vec::new() };
    let mut baseline = CvReport { method: "ZeroR".into(), folds: Vec::new() };
    for fold in 0..plan.k {
        let r = run_fold(cfg, &plan, &by_id, fold)?;
        info!("fold {}: {} {:.3}, ZeroR {:.3}", fold + 1, method.method, r.method.video.average, r.baseline.video.average);
        method.folds.push(r.method);
        baseline.folds.push(r.baseline);
        log.push(r.log);
    }
    let set = ReportSet::new(baseline, vec![method])?;
    log.push(json!({ "event": "summary", "entries": set.entries.iter().map(|(r, c)| json!({
        "method": r.method, "average_mae": r.average(), "comparison": c,
    })).collect::<Vec<_>>() }));
    let out = &cfg.output_dir;
    cfg.snapshot(out)?;
    write_reports(out, &set, emit_plots)?;
    let lines: String = log.iter().map(|v| format!("{v}\n")).collect();
    write_file(&out.join(RUN_LOG), lines)?;
    Ok(set)
}

fn write_reports(dir: &Path, set: &ReportSet, emit_plots: bool) -> Result<()> {
    write_file(&dir.join(REPORT_CSV), set.to_csv())?;
    write_file(&dir.join(REPORT_TXT), set.text_table())?;
    let json = serde_json::to_string_pretty(set).map_err(|e| Error::BadFormat(e.to_string()))?;
    write_file(&dir.join(REPORT_JSON), json)?;
    if emit_plots {
        write_file(&dir.join(PLOTS_CSV), set.plot_csv())?;
    }
    Ok(())
}

/// Re-renders the text table (and optionally the plot data) of a finished
/// evaluation.
pub fn cmd_report(output_dir: &Path, emit_plots: bool) -> Result<String> {
    let path = output_dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let set: ReportSet = serde_json::from_str(&text).map_err(|e| Error::BadFormat(format!("{}: {e}", path.display())))?;
    write_reports(output_dir, &set, emit_plots)?;
    Ok(set.text_table())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    representation: RepresentationKind,
    config_hash: String,
    with_concentration: bool,
    participant_stats: Option<FoldStats>,
    features: Option<FeatureSet>,
}

/// Fits the configured model on every participant and saves it under the
/// output directory. Returns the model path.
pub fn cmd_train(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let records = load_manifest(&cfg.manifest)?;
    extract_records(cfg, &records)?;
    let all: Vec<&VideoRecord> = records.iter().collect();
    cfg.snapshot(&cfg.output_dir)?;
    match &cfg.model {
        ModelFamily::Neural(settings) => {
            let seed = fold_seed(cfg, usize::MAX);
            let ids: Vec<String> = records.iter().map(|r| r.participant_id.clone()).collect();
            let (inner, val) = validation_split(&ids, settings.validation_fraction, seed);
            let inner_recs: Vec<&VideoRecord> = all.iter().copied().filter(|r| inner.contains(&r.participant_id)).collect();
            let val_recs: Vec<&VideoRecord> = all.iter().copied().filter(|r| val.contains(&r.participant_id)).collect();
            let stats = fold_stats(cfg, &inner_recs)?;
            let tr = CachedSamples::new(cfg, &inner_recs, stats.as_ref())?;
            let va = CachedSamples::new(cfg, &val_recs, stats.as_ref())?;
            let mut net = Network::<f32>::new(settings.network_spec(cfg.representation, cfg.participant_dim()), seed)?;
            net.set_output_bias(&target_mean(&tr));
            let tc = TrainConfig { seed: settings.train.seed.wrapping_add(seed), ..settings.train };
            let out = train(net, &tr, &va, &tc)?;
            let meta = ModelMeta {
                representation: cfg.representation,
                config_hash: cfg.hash(),
                with_concentration: cfg.with_concentration,
                participant_stats: stats,
                features: None,
            };
            let path = cfg.output_dir.join(NEURAL_MODEL);
            let meta = serde_json::to_value(meta).map_err(|e| Error::BadFormat(e.to_string()))?;
            Checkpoint { network: out.network, optimizer: Some(out.optimizer), history: out.history, meta }.save(&path)?;
            Ok(path)
        }
        ModelFamily::Classical { method, features } => {
            let f = effective_features(cfg, *features);
            let (models, stats) = fit_classical(cfg, method, f, &all, fold_seed(cfg, usize::MAX))?;
            let path = cfg.output_dir.join(CLASSICAL_MODEL);
            save_model(&path, &models)?;
            let meta = ModelMeta {
                representation: cfg.representation,
                config_hash: cfg.hash(),
                with_concentration: cfg.with_concentration,
                participant_stats: stats,
                features: Some(f),
            };
            let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::BadFormat(e.to_string()))?;
            write_file(&cfg.output_dir.join(CLASSICAL_META), json)?;
            Ok(path)
        }
    }
}

/// One video to score.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictInput {
    pub participant_id: String,
    pub frames: PathBuf,
    pub fps: f64,
    pub features: Option<ParticipantFeatures>,
}

impl PredictInput {
    pub fn from_record(r: &VideoRecord) -> Self {
        Self { participant_id: r.participant_id.clone(), frames: r.frame_source.clone(), fps: r.fps, features: Some(r.features) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Unclamped model output.
    pub raw: [f64; 3],
    pub windows: usize,
}

impl Prediction {
    pub fn clamped(&self) -> [f64; 3] {
        self.raw.map(|v| v.clamp(0.0, 100.0))
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.clamped();
        write!(f, "progressive {:.2}%, non-progressive {:.2}%, immotile {:.2}% ({} windows)", c[0], c[1], c[2], self.windows)
    }
}

/// Windows of one video, served from the cache when present and built from
/// the frames otherwise.
struct VideoWindows<'a> {
    cfg: &'a RunConfig,
    id: String,
    windows: Vec<SampleWindow>,
    seq: Mutex<FrameSequence>,
    participant: Option<Vec<f32>>,
    settings: FlowSettings,
}

impl SampleSource for VideoWindows<'_> {
    fn len(&self) -> usize {
        self.windows.len()
    }

    fn get(&self, index: usize) -> Result<Cow<'_, Sample>> {
        let kind = self.cfg.representation;
        let path = cache_path(&self.cfg.cache_dir, &self.id, kind, index);
        let streams = if path.exists() {
            load_cached(&path, kind)?
        } else {
            let mut seq = self.seq.lock().expect("frame reader lock");
            build_from_sequence(kind, &self.windows[index], &mut seq, self.cfg.normalize, &self.settings)?
        };
        Ok(Cow::Owned(Sample {
            streams,
            participant: self.participant.clone(),
            targets: MotilityTargets::new(0.0, 0.0, 0.0),
            participant_id: self.id.clone(),
        }))
    }

    fn targets(&self, _index: usize) -> [f64; 3] {
        [0.0; 3]
    }

    fn participant_id(&self, _index: usize) -> Cow<'_, str> {
        Cow::Borrowed(&self.id)
    }
}

fn meta_participant(meta: &ModelMeta, input: &PredictInput) -> Result<Option<Vec<f32>>> {
    match &meta.participant_stats {
        Some(stats) => {
            let f = input.features.as_ref().ok_or_else(|| {
                Error::Config(format!("the model uses participant data; none given for {}", input.participant_id))
            })?;
            participant_vector(&input.participant_id, f, meta.with_concentration, stats).map(Some)
        }
        None => Ok(None),
    }
}

/// Scores one video with a saved model: mean over its sample windows.
pub fn cmd_predict(cfg: &RunConfig, model: &Path, input: &PredictInput) -> Result<Prediction> {
    if model.extension().is_some_and(|e| e == "mcm") {
        return predict_classical(cfg, model, input);
    }
    let mut ck = Checkpoint::load(model)?;
    let meta: ModelMeta =
        serde_json::from_value(ck.meta.clone()).map_err(|e| Error::UnreadableCheckpoint(format!("metadata: {e}")))?;
    if meta.representation != cfg.representation {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint was trained on {}, config asks for {}",
            meta.representation, cfg.representation
        )));
    }
    ck.network.spec().check_kind(cfg.representation).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let seq = FrameSequence::open(&input.frames)?;
    let windows = schedule_windows(&input.participant_id, seq.frame_count(), cfg.samples_per_video, cfg.representation.window_length())?;
    let source = VideoWindows {
        cfg,
        id: input.participant_id.clone(),
        windows,
        seq: Mutex::new(seq),
        participant: meta_participant(&meta, input)?,
        settings: FlowSettings::default(),
    };
    let batch = match &cfg.model {
        ModelFamily::Neural(s) => s.train.batch_size,
        ModelFamily::Classical { .. } => TrainConfig::default().batch_size,
    };
    let preds = predict(&mut ck.network, &source, batch)?;
    let video = aggregate_per_video(&preds, &vec![input.participant_id.clone(); preds.len()], std::slice::from_ref(&input.participant_id))?;
    Ok(Prediction { raw: video[0], windows: preds.len() })
}

fn predict_classical(cfg: &RunConfig, model: &Path, input: &PredictInput) -> Result<Prediction> {
    let models = load_model(model)?;
    let meta_path = model.with_file_name(CLASSICAL_META);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::BadFormat(e.to_string()))?;
    if models.len() != 3 {
        return Err(Error::BadFormat(format!("expected 3 target models, found {}", models.len())));
    }
    let features = meta.features.unwrap_or(FeatureSet::Tamura);
    let mut row = Vec::new();
    let zeror = models.iter().all(|m| matches!(m, ClassicalModel::ZeroR { .. }));
    if zeror {
        row.push(0.0);
    } else {
        if matches!(features, FeatureSet::Tamura | FeatureSet::Both) {
            let cached = tamura_path(&cfg.cache_dir, &input.participant_id);
            let v = if cached.exists() {
                tenfile::read(&cached)?.data
            } else {
                let mut seq = FrameSequence::open(&input.frames)?;
                video_feature_vector_from(&mut seq, input.fps, &input.participant_id)?
            };
            row.extend(v.iter().map(|&x| x as f64));
        }
        if let Some(p) = meta_participant(&meta, input)? {
            row.extend(p.iter().map(|&x| x as f64));
        }
    }
    Ok(Prediction { raw: [0, 1, 2].map(|j| models[j].predict(&row)), windows: 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOutcome {
    /// Stored hash equals the hash of the stored config.
    pub hash_matches: bool,
    /// Replayed report CSV is byte-identical, when a replay was requested.
    pub replay_matches: Option<bool>,
}

impl VerifyOutcome {
    pub fn ok(&self) -> bool {
        self.hash_matches && self.replay_matches.unwrap_or(true)
    }
}

/// Checks an output directory's config hash and optionally re-runs the
/// evaluation into `<dir>/replay` and compares the report CSVs.
pub fn cmd_verify(output_dir: &Path, replay: bool) -> Result<VerifyOutcome> {
    let cfg = RunConfig::load(&output_dir.join(CONFIG_FILE))?;
    let hash_path = output_dir.join(HASH_FILE);
    let stored = fs::read_to_string(&hash_path).map_err(|e| Error::io(&hash_path, e))?;
    let hash_matches = stored.trim() == cfg.hash();
    if !hash_matches {
        warn!("config hash mismatch: stored {}, computed {}", stored.trim(), cfg.hash());
    }
    let replay_matches = if replay {
        let mut again = cfg.clone();
        again.output_dir = output_dir.join("replay");
        let run = |c: &RunConfig| cmd_evaluate(c, false);
        with_workers(again.workers, || run(&again))??;
        let a = fs::read(output_dir.join(REPORT_CSV)).map_err(|e| Error::io(output_dir.join(REPORT_CSV), e))?;
        let b = fs::read(again.output_dir.join(REPORT_CSV)).map_err(|e| Error::io(again.output_dir.join(REPORT_CSV), e))?;
        Some(a == b)
    } else {
        None
    };
    Ok(VerifyOutcome { hash_matches, replay_matches })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_is_disjoint_and_seeded() {
        let ids: Vec<String> = (0..27).map(|i| format!("p{i}")).collect();
        let (a, b) = validation_split(&ids, 0.2, 3);
        assert_eq!((a.len(), b.len()), (22, 5));
        assert!(assert_disjoint(&[&a, &b]).is_ok());
        assert_eq!(validation_split(&ids, 0.2, 3), (a, b));
        assert_eq!(validation_split(&ids[..1], 0.2, 3).1.len(), 0);
        assert_eq!(validation_split(&ids[..2], 0.2, 3).1.len(), 1);
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let a = vec!["x".to_string()];
        assert!(assert_disjoint(&[&a, &a]).is_err());
    }
}

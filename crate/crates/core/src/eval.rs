//! Participant-level cross-validation, MAE bookkeeping and the
//! variance-corrected paired t-test.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGET_NAMES: [&str; 3] = ["progressive", "non_progressive", "immotile"];

/// Significance level; `p <= ALPHA` counts as significant.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Test participants of each fold.
    pub folds: Vec<Vec<String>>,
}

impl FoldPlan {
    pub fn test_ids(&self, fold: usize) -> &[String] {
        &self.folds[fold]
    }

    pub fn train_ids(&self, fold: usize) -> Vec<String> {
        self.folds.iter().enumerate().filter(|(i, _)| *i != fold).flat_map(|(_, f)| f.iter().cloned()).collect()
    }

    pub fn n_participants(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Union is `ids` and no participant appears twice.
    pub fn check_partition(&self, ids: &[String]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.folds.iter().flatten() {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("participant {id} appears in two folds")));
            }
        }
        let all: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if seen != all {
            return Err(Error::Config("folds do not cover the participant set".into()));
        }
        Ok(())
    }

    /// Test-to-train participant ratio summed over folds.
    pub fn test_train_ratio(&self) -> f64 {
        let n = self.n_participants();
        let test: usize = self.folds.iter().map(Vec::len).sum();
        let train: usize = self.folds.iter().map(|f| n - f.len()).sum();
        test as f64 / train as f64
    }
}

/// Seeded shuffle, then round-robin dealing into `k` folds.
pub fn make_folds(ids: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k == 0 || ids.len() < k {
        return Err(Error::TooFewParticipants { k, got: ids.len() });
    }
    let mut order = ids.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); k];
    for (i, id) in order.into_iter().enumerate() {
        folds[i % k].push(id);
    }
    Ok(FoldPlan { k, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mae {
    pub per_target: [f64; 3],
    pub average: f64,
}

pub fn mae(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Mae> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut per_target = [0.0; 3];
    for (p, t) in pred.iter().zip(truth) {
        for j in 0..3 {
            per_target[j] += (p[j] - t[j]).abs();
        }
    }
    let per_target = per_target.map(|v| v / pred.len() as f64);
    Ok(Mae { per_target, average: per_target.iter().sum::<f64>() / 3.0 })
}

/// Mean prediction of each video in `videos`, from per-sample predictions
/// tagged with `sample_ids`.
pub fn aggregate_per_video(pred: &[[f64; 3]], sample_ids: &[String], videos: &[String]) -> Result<Vec<[f64; 3]>> {
    if pred.len() != sample_ids.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} sample ids", pred.len(), sample_ids.len())));
    }
    let index: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let mut sums = vec![[0.0; 3]; videos.len()];
    let mut counts = vec![0usize; videos.len()];
    for (p, id) in pred.iter().zip(sample_ids) {
        let &i = index.get(id.as_str()).ok_or_else(|| Error::UnknownId(id.clone()))?;
        for j in 0..3 {
            sums[i][j] += p[j];
        }
        counts[i] += 1;
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::UnknownId(videos[i].clone()));
    }
    Ok(sums.iter().zip(&counts).map(|(s, &c)| s.map(|v| v / c as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// All differences were equal; `t` is infinite or zero.
    pub zero_variance: bool,
}

/// Paired t-test on per-fold differences with the variance inflated by
/// `1/k + n_test/n_train`.
pub fn corrected_t_test(diffs: &[f64], n_train: f64, n_test: f64) -> Result<TTest> {
    let k = diffs.len();
    if k < 2 {
        return Err(Error::Config(format!("the t-test needs at least 2 folds, got {k}")));
    }
    if n_train <= 0.0 || n_test < 0.0 {
        return Err(Error::Config("fold sizes must be positive".into()));
    }
    let mean = diffs.iter().sum::<f64>() / k as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let df = k - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df, zero_variance: true }
        } else {
            TTest { t: f64::INFINITY.copysign(mean), p: 0.0, df, zero_variance: true }
        });
    }
    let t = mean / ((1.0 / k as f64 + n_test / n_train) * var).sqrt();
    Ok(TTest { t, p: student_t_two_sided(t, df as f64), df, zero_variance: false })
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        d = if d.abs() < TINY { TINY } else { d };
        c = 1.0 + aa / c;
        c = if c.abs() < TINY { TINY } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub test_ids: Vec<String>,
    pub n_train: usize,
    /// Video-level MAE, the primary score.
    pub video: Mae,
    pub sample: Option<Mae>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub method: String,
    pub folds: Vec<FoldScore>,
}

impl CvReport {
    pub fn per_target_mean(&self) -> [f64; 3] {
        let k = self.folds.len() as f64;
        let mut m = [0.0; 3];
        for f in &self.folds {
            for j in 0..3 {
                m[j] += f.video.per_target[j];
            }
        }
        m.map(|v| v / k)
    }

    /// Mean of the three per-target means.
    pub fn average(&self) -> f64 {
        self.per_target_mean().iter().sum::<f64>() / 3.0
    }

    pub fn sample_per_target_mean(&self) -> Option<[f64; 3]> {
        let k = self.folds.len() as f64;
        let mut m = [0.0; 3];
        for f in &self.folds {
            let s = f.sample?;
            for j in 0..3 {
                m[j] += s.per_target[j];
            }
        }
        Some(m.map(|v| v / k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub test: TTest,
    pub significant: bool,
}

/// Corrected t-test on per-fold average-MAE differences against ZeroR.
pub fn compare_to_zeror(method: &CvReport, zeror: &CvReport) -> Result<Comparison> {
    if method.folds.len() != zeror.folds.len()
        || method.folds.iter().zip(&zeror.folds).any(|(a, b)| a.test_ids != b.test_ids || a.n_train != b.n_train)
    {
        return Err(Error::FoldPlanMismatch);
    }
    let diffs: Vec<f64> = method.folds.iter().zip(&zeror.folds).map(|(a, b)| a.video.average - b.video.average).collect();
    let n_test: usize = method.folds.iter().map(|f| f.test_ids.len()).sum();
    let n_train: usize = method.folds.iter().map(|f| f.n_train).sum();
    let test = corrected_t_test(&diffs, n_train as f64, n_test as f64)?;
    Ok(Comparison { test, significant: test.p <= ALPHA && method.average() < zeror.average() })
}

/// Reports of one run; the first entry is the ZeroR baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub entries: Vec<(CvReport, Option<Comparison>)>,
}

impl ReportSet {
    /// Compares every report with `baseline`.
    pub fn new(baseline: CvReport, others: Vec<CvReport>) -> Result<Self> {
        let mut entries = vec![(baseline.clone(), None)];
        for r in others {
            let c = compare_to_zeror(&r, &baseline)?;
            entries.push((r, Some(c)));
        }
        Ok(Self { entries })
    }

    /// `method,fold,target,mae`; fold `mean` rows hold the per-target means
    /// and target `average` the mean over targets.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,fold,target,mae\n");
        for (r, _) in &self.entries {
            for (i, f) in r.folds.iter().enumerate() {
                for (name, v) in TARGET_NAMES.iter().zip(f.video.per_target) {
                    let _ = writeln!(s, "{},{},{},{}", r.method, i + 1, name, v);
                }
                let _ = writeln!(s, "{},{},average,{}", r.method, i + 1, f.video.average);
            }
            for (name, v) in TARGET_NAMES.iter().zip(r.per_target_mean()) {
                let _ = writeln!(s, "{},mean,{},{}", r.method, name, v);
            }
            let _ = writeln!(s, "{},mean,average,{}", r.method, r.average());
        }
        s
    }

    /// Bar-chart data: one row per method and target.
    pub fn plot_csv(&self) -> String {
        let mut s = String::from("method,target,mae\n");
        for (r, _) in &self.entries {
            for (name, v) in TARGET_NAMES.iter().zip(r.per_target_mean()) {
                let _ = writeln!(s, "{},{},{:.6}", r.method, name, v);
            }
            let _ = writeln!(s, "{},average,{:.6}", r.method, r.average());
        }
        s
    }

    pub fn text_table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>12} {:>16} {:>10} {:>10} {:>10}\n",
            "Method", "Progressive", "Non-progressive", "Immotile", "Average", "p"
        );
        for (r, c) in &self.entries {
            let m = r.per_target_mean();
            let p = match c {
                Some(c) => format!("{:.4}{}", c.test.p, if c.significant { "*" } else { "" }),
                None => "-".into(),
            };
            let _ = writeln!(s, "{:<28} {:>12.3} {:>16.3} {:>10.3} {:>10.3} {:>10}", r.method, m[0], m[1], m[2], r.average(), p);
        }
        let rows: Vec<String> = self
            .entries
            .iter()
            .filter_map(|(r, _)| r.sample_per_target_mean().map(|m| format!("{:<28} {:>12.3} {:>16.3} {:>10.3}", r.method, m[0], m[1], m[2])))
            .collect();
        if !rows.is_empty() {
            s.push_str("\nper-sample MAE\n");
            for r in rows {
                s.push_str(&r);
                s.push('\n');
            }
        }
        s.push_str("\n* p <= 0.05 against ZeroR (corrected paired t-test)\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    #[test]
    fn fold_sizes_for_85() {
        let plan = make_folds(&ids(85), 3, 1).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![28, 28, 29]);
        plan.check_partition(&ids(85)).unwrap();
        assert_eq!(make_folds(&ids(85), 3, 1).unwrap(), plan);
        assert!((plan.test_train_ratio() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_ids_three_singletons() {
        let plan = make_folds(&ids(3), 3, 0).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 1));
        assert!(matches!(make_folds(&ids(2), 3, 0), Err(Error::TooFewParticipants { k: 3, got: 2 })));
    }

    #[test]
    fn mae_arithmetic() {
        let m = mae(&[[10.0, 10.0, 10.0]], &[[20.0, 5.0, 15.0]]).unwrap();
        assert_eq!(m.per_target, [10.0, 5.0, 5.0]);
        assert!((m.average - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(mae(&[[1.0, 2.0, 3.0]], &[[1.0, 2.0, 3.0]]).unwrap().average, 0.0);
        assert!(mae(&[[0.0; 3]], &[]).is_err());
    }

    #[test]
    fn aggregation() {
        let v = vec!["a".to_string()];
        let out = aggregate_per_video(&[[10.0, 0.0, 0.0], [20.0, 0.0, 0.0]], &["a".into(), "a".into()], &v).unwrap();
        assert_eq!(out, vec![[15.0, 0.0, 0.0]]);
        let err = aggregate_per_video(&[[1.0; 3]], &["b".into()], &v).unwrap_err();
        assert!(matches!(err, Error::UnknownId(id) if id == "b"));
    }

    #[test]
    fn t_test_hand_example() {
        let r = corrected_t_test(&[2.0, 1.0, 3.0], 2.0, 1.0).unwrap();
        assert!((r.t - 2.0 / (1.0f64 / 3.0 + 0.5).sqrt()).abs() < 1e-12);
        assert!((r.t - 2.1909).abs() < 1e-4);
        let z = corrected_t_test(&[0.0; 3], 2.0, 1.0).unwrap();
        assert!(z.zero_variance && z.p == 1.0);
        let c = corrected_t_test(&[-1.0; 3], 2.0, 1.0).unwrap();
        assert_eq!((c.t, c.p), (f64::NEG_INFINITY, 0.0));
    }

    #[test]
    fn t_distribution_known_values() {
        // df = 1 is Cauchy: P(|T| > 1) = 1/2
        assert!((student_t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-12);
        // df = 2 has the closed form 1 - |t| / sqrt(2 + t^2)
        for t in [0.3, 1.7, 4.303] {
            assert!((student_t_two_sided(t, 2.0) - (1.0 - t / (2.0f64 + t * t).sqrt())).abs() < 1e-12);
        }
        assert_eq!(student_t_two_sided(0.0, 5.0), 1.0);
    }

    fn report(method: &str, avgs: &[f64]) -> CvReport {
        let folds = avgs
            .iter()
            .enumerate()
            .map(|(i, &a)| FoldScore {
                test_ids: vec![format!("p{i}")],
                n_train: 2,
                video: Mae { per_target: [a; 3], average: a },
                sample: None,
            })
            .collect();
        CvReport { method: method.into(), folds }
    }

    #[test]
    fn zeror_against_itself_is_not_significant() {
        let z = report("ZeroR", &[12.0, 13.0, 11.0]);
        let c = compare_to_zeror(&z, &z).unwrap();
        assert!(!c.significant && c.test.p == 1.0);
    }

    #[test]
    fn mismatched_plans_are_rejected() {
        let mut other = report("m", &[1.0, 2.0, 3.0]);
        other.folds[0].test_ids = vec!["zz".into()];
        assert!(matches!(compare_to_zeror(&other, &report("ZeroR", &[1.0, 2.0, 3.0])), Err(Error::FoldPlanMismatch)));
    }

    #[test]
    fn verdict_follows_the_threshold() {
        let z = report("ZeroR", &[12.0, 12.0, 12.0]);
        // ratio 3/6; diffs -d +- e give t = -d / (e sqrt(5/6))
        let strong = compare_to_zeror(&report("a", &[2.0, 3.0, 4.0]), &z).unwrap();
        let weak = compare_to_zeror(&report("b", &[11.0, 12.5, 11.6]), &z).unwrap();
        assert!(strong.significant && strong.test.p <= ALPHA);
        assert!(!weak.significant && weak.test.p > ALPHA);
        let worse = compare_to_zeror(&report("c", &[20.0, 21.0, 22.0]), &z).unwrap();
        assert!(worse.test.p <= ALPHA && !worse.significant);
    }

    #[test]
    fn csv_average_matches_fold_numbers() {
        let set = ReportSet::new(report("ZeroR", &[12.0, 13.0, 11.5]), vec![report("m", &[7.0, 9.0, 8.0])]).unwrap();
        let csv = set.to_csv();
        assert!(csv.starts_with("method,fold,target,mae\n"));
        let row = csv.lines().find(|l| l.starts_with("m,mean,average,")).unwrap();
        let v: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((v - 8.0).abs() < 1e-12);
        assert!(set.text_table().contains("ZeroR"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn folds_partition_and_differ_by_at_most_one(n in 3usize..120, k in 2usize..6, seed in 0u64..500) {
            prop_assume!(n >= k);
            let plan = make_folds(&ids(n), k, seed).unwrap();
            plan.check_partition(&ids(n)).unwrap();
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                let train: BTreeSet<String> = plan.train_ids(f).into_iter().collect();
                prop_assert!(plan.test_ids(f).iter().all(|id| !train.contains(id)));
            }
        }

        #[test]
        fn t_is_scale_invariant(d in proptest::collection::vec(-5.0f64..5.0, 3..8), c in 0.01f64..100.0) {
            let a = corrected_t_test(&d, 10.0, 5.0).unwrap();
            prop_assume!(!a.zero_variance);
            let scaled: Vec<f64> = d.iter().map(|v| v * c).collect();
            let b = corrected_t_test(&scaled, 10.0, 5.0).unwrap();
            prop_assert!((a.t - b.t).abs() < 1e-9 * a.t.abs().max(1.0));
        }

        #[test]
        fn duplicated_rows_keep_mae(rows in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 1..20)) {
            let pred: Vec<[f64; 3]> = rows.iter().map(|r| [r.0, r.1, r.0]).collect();
            let truth: Vec<[f64; 3]> = rows.iter().map(|r| [r.1, r.0, 50.0]).collect();
            let once = mae(&pred, &truth).unwrap();
            let twice = mae(&[pred.clone(), pred].concat(), &[truth.clone(), truth].concat()).unwrap();
            prop_assert!((once.average - twice.average).abs() < 1e-9);
        }
    }
}

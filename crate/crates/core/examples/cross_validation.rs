//! Participant-level folds, per-fold MAE and the corrected paired t-test
//! against ZeroR, on made-up predictions.

use motility::eval::{compare_to_zeror, mae, make_folds, CvReport, FoldScore, ReportSet};

fn main() -> motility::Result<()> {
    let ids: Vec<String> = (0..12).map(|i| format!("p{i:02}")).collect();
    let truth = |id: &str| {
        let k = id[1..].parse::<f64>().unwrap();
        [30.0 + 3.0 * k, 20.0, 50.0 - 3.0 * k]
    };
    let plan = make_folds(&ids, 3, 0)?;
    let (mut zeror, mut model) = (Vec::new(), Vec::new());
    for f in 0..plan.k {
        let train = plan.train_ids(f);
        let test = plan.test_ids(f);
        let mean = train.iter().map(|id| truth(id)).fold([0.0; 3], |a, t| [0, 1, 2].map(|j| a[j] + t[j] / train.len() as f64));
        let y: Vec<[f64; 3]> = test.iter().map(|id| truth(id)).collect();
        let guess: Vec<[f64; 3]> = y.iter().map(|t| t.map(|v| v + 1.5)).collect();
        let score = |pred: &[[f64; 3]]| -> motility::Result<FoldScore> {
            Ok(FoldScore { test_ids: test.to_vec(), n_train: train.len(), video: mae(pred, &y)?, sample: None })
        };
        zeror.push(score(&vec![mean; y.len()])?);
        model.push(score(&guess)?);
    }
    let zeror = CvReport { method: "ZeroR".into(), folds: zeror };
    let model = CvReport { method: "model".into(), folds: model };
    let cmp = compare_to_zeror(&model, &zeror)?;
    println!("t = {:.3}, p = {:.4}, significant: {}", cmp.test.t, cmp.test.p, cmp.significant);
    print!("{}", ReportSet::new(zeror, vec![model])?.text_table());
    Ok(())
}

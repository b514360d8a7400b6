//! The whole command sequence on a generated dataset: prepare, extract,
//! evaluate with a random forest on Tamura features, train, predict, verify.

use motility::classical::ClassicalMethod;
use motility::cli::{
    cmd_evaluate, cmd_extract, cmd_generate, cmd_predict, cmd_prepare, cmd_train, cmd_verify, FeatureSet, ModelFamily,
    PredictInput, RunConfig,
};
use motility::synthetic::DotVideoSpec;

fn main() -> motility::Result<()> {
    let root = std::env::temp_dir().join("motility-example-pipeline");
    let records = cmd_generate(&root.join("data"), 12, &DotVideoSpec::default(), 3)?;
    let model = ModelFamily::Classical {
        method: ClassicalMethod::RandomForest { n_trees: 30, max_depth: None, min_leaf: 2 },
        features: FeatureSet::Tamura,
    };
    let cfg = RunConfig::new(root.join("data/manifest.csv"), root.join("out"), model);
    print!("{}", cmd_prepare(&cfg)?);
    println!("{}", cmd_extract(&cfg)?);
    print!("{}", cmd_evaluate(&cfg, true)?.text_table());
    let path = cmd_train(&cfg)?;
    let p = cmd_predict(&cfg, &path, &PredictInput::from_record(&records[0]))?;
    println!("{}: {p}", records[0].participant_id);
    let v = cmd_verify(&cfg.output_dir, true)?;
    println!("config hash matches: {}, replay identical: {:?}", v.hash_matches, v.replay_matches);
    Ok(())
}

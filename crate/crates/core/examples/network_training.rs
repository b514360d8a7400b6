//! Trains a small residual regressor on in-memory samples whose targets
//! depend on image brightness, then checkpoints and reloads it.

use motility::dataio::MotilityTargets;
use motility::imgproc::FrameTensor;
use motility::neural::{predict, target_mean, train, Checkpoint, Network, NetworkSpec, StageSpec, TrainConfig};
use motility::represent::{RepresentationKind, Sample};

fn sample(i: usize) -> Sample {
    let level = (i % 8) as f32 / 7.0;
    let frame = FrameTensor::from_fn(224, 224, 3, |y, x, _| level * 2.0 - 1.0 + ((x + y) % 7) as f32 * 0.01);
    let p = 20.0 + 60.0 * level as f64;
    Sample {
        streams: vec![frame],
        participant: None,
        targets: MotilityTargets::new(p, 10.0, 90.0 - p),
        participant_id: format!("p{i:03}"),
    }
}

fn main() -> motility::Result<()> {
    let mut spec = NetworkSpec::desk_scale(RepresentationKind::SingleFrame, 0);
    for t in &mut spec.towers {
        t.stages = vec![StageSpec { width: 8, blocks: 1, stride: 1 }, StageSpec { width: 16, blocks: 1, stride: 2 }];
    }
    spec.hidden = vec![64];
    let train_set: Vec<Sample> = (0..16).map(sample).collect();
    let val_set: Vec<Sample> = (16..20).map(sample).collect();
    let mut net = Network::<f32>::new(spec, 0)?;
    println!("{} parameters", net.param_count());
    net.set_output_bias(&target_mean(&train_set[..]));
    let cfg = TrainConfig { batch_size: 8, max_epochs: 15, patience: 5, ..TrainConfig::default() };
    let out = train(net, &train_set[..], &val_set[..], &cfg)?;
    for e in &out.history.epochs {
        println!("epoch {:2}: train MAE {:6.2}  val MAE {:6.2}", e.epoch, e.train_mae, e.val_mae);
    }
    let path = std::env::temp_dir().join("motility-example.mnn");
    let history = out.history.clone();
    Checkpoint { network: out.network, optimizer: Some(out.optimizer), history, meta: serde_json::json!({}) }.save(&path)?;
    let mut back = Checkpoint::load(&path)?;
    let p = predict(&mut back.network, &val_set[..], 8)?;
    println!("reloaded best epoch {}: first prediction {:.2?}", back.history.best_epoch, p[0]);
    Ok(())
}

use std::borrow::Cow;

use log::{debug, info};
use rayon::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::optim::{Nadam, NadamConfig};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::represent::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strictly lower validation MSE before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: NadamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 16, max_epochs: 200, patience: 20, seed: 0, optimizer: NadamConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub train_mae: f64,
    pub val_mse: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 before any training.
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

/// Strict-improvement early stopping on a minimized metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0 }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> StopVerdict {
        if metric < self.best {
            self.best = metric;
            self.best_epoch = epoch;
            StopVerdict::Improved
        } else if epoch - self.best_epoch >= self.patience {
            StopVerdict::Stop
        } else {
            StopVerdict::Continue
        }
    }
}

pub struct TrainOutcome {
    pub network: Network<f32>,
    pub optimizer: Nadam<f32>,
    pub history: History,
}

/// Random-access sample collection; cache-backed sources load lazily.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Cow<'_, Sample>>;
    fn targets(&self, index: usize) -> [f64; 3];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn participant_id(&self, index: usize) -> Cow<'_, str>;
}

impl SampleSource for [Sample] {
    fn len(&self) -> usize {
        <[Sample]>::len(self)
    }

    fn get(&self, index: usize) -> Result<Cow<'_, Sample>> {
        Ok(Cow::Borrowed(&self[index]))
    }

    fn targets(&self, index: usize) -> [f64; 3] {
        self[index].targets.as_array()
    }

    fn participant_id(&self, index: usize) -> Cow<'_, str> {
        Cow::Borrowed(&self[index].participant_id)
    }
}

fn load_batch<S: SampleSource + ?Sized>(source: &S, indices: &[usize]) -> Result<Batch> {
    let samples: Vec<Cow<'_, Sample>> = indices.par_iter().map(|&i| source.get(i)).collect::<Result<_>>()?;
    let refs: Vec<&Sample> = samples.iter().map(|c| c.as_ref()).collect();
    Batch::new(&refs)
}

/// Stream tensors, optional participant matrix and `n x 3` targets.
pub struct Batch {
    pub streams: Vec<Tensor4<f32>>,
    pub participant: Option<Tensor4<f32>>,
    pub targets: Vec<f32>,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let n = samples.len();
        let mut streams = Vec::with_capacity(first.streams.len());
        for (k, proto) in first.streams.iter().enumerate() {
            let (h, w, c) = proto.shape();
            let mut data = Vec::with_capacity(n * h * w * c);
            for s in samples {
                let t = s.streams.get(k).filter(|t| t.shape() == (h, w, c));
                let t = t.ok_or_else(|| Error::ShapeMismatch(format!("sample {} has mismatched streams", s.participant_id)))?;
                data.extend_from_slice(t.data());
            }
            streams.push(Tensor4::from_vec(n, h, w, c, data)?);
        }
        let participant = match &first.participant {
            Some(p) => {
                let mut data = Vec::with_capacity(n * p.len());
                for s in samples {
                    let v = s.participant.as_ref().filter(|v| v.len() == p.len());
                    let v = v.ok_or_else(|| Error::ShapeMismatch(format!("sample {} has no participant vector", s.participant_id)))?;
                    data.extend_from_slice(v);
                }
                Some(Tensor4::matrix(n, p.len(), data)?)
            }
            None => None,
        };
        let targets = samples.iter().flat_map(|s| s.targets.as_array().map(|v| v as f32)).collect();
        Ok(Self { streams, participant, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// `(mse, mae, d mse / d prediction)`.
pub fn mse_loss(pred: &Tensor4<f32>, targets: &[f32]) -> (f64, f64, Tensor4<f32>) {
    let count = targets.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    let mut grad = Vec::with_capacity(targets.len());
    for (p, y) in pred.data.iter().zip(targets) {
        let d = (*p - *y) as f64;
        se += d * d;
        ae += d.abs();
        grad.push((2.0 * d / count) as f32);
    }
    (se / count, ae / count, pred.with_data(grad))
}

/// Inference-mode predictions, one row per sample.
pub fn predict<S: SampleSource + ?Sized>(net: &mut Network<f32>, samples: &S, batch_size: usize) -> Result<Vec<[f64; 3]>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = load_batch(samples, chunk)?;
        let y = net.forward(&b.streams, b.participant.as_ref(), false)?;
        out.extend(y.data.chunks_exact(3).map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]));
    }
    Ok(out)
}

fn evaluate<S: SampleSource + ?Sized>(net: &mut Network<f32>, samples: &S, batch_size: usize) -> Result<(f64, f64)> {
    let preds = predict(net, samples, batch_size)?;
    let (mut se, mut ae) = (0.0, 0.0);
    for (i, p) in preds.iter().enumerate() {
        for (a, b) in p.iter().zip(samples.targets(i)) {
            se += (a - b).powi(2);
            ae += (a - b).abs();
        }
    }
    let n = (3 * samples.len()) as f64;
    Ok((se / n, ae / n))
}

/// Mean of the training targets, used to start the output bias there.
pub fn target_mean<S: SampleSource + ?Sized>(samples: &S) -> [f64; 3] {
    let mut m = [0.0; 3];
    for i in 0..samples.len() {
        for (a, v) in m.iter_mut().zip(samples.targets(i)) {
            *a += v;
        }
    }
    m.map(|v| v / samples.len().max(1) as f64)
}

/// Nadam on MSE with best-on-validation checkpointing and early stopping.
/// Without validation samples the training MSE selects the checkpoint.
pub fn train<A, B>(mut net: Network<f32>, train_set: &A, val_set: &B, cfg: &TrainConfig) -> Result<TrainOutcome>
where
    A: SampleSource + ?Sized,
    B: SampleSource + ?Sized,
{
    if SampleSource::is_empty(train_set) {
        return Err(Error::EmptyDataset);
    }
    if cfg.patience == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("patience and batch size must be at least 1".into()));
    }
    let mut opt = Nadam::new(cfg.optimizer);
    let mut history = History::default();
    let mut best_state = net.state();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut order: Vec<usize> = (0..SampleSource::len(train_set)).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (mut se, mut ae) = (0.0, 0.0);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let b = load_batch(train_set, idx)?;
            net.zero_grad();
            let pred = net.forward(&b.streams, b.participant.as_ref(), true)?;
            let (mse, mae, grad) = mse_loss(&pred, &b.targets);
            if !mse.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            net.backward(&grad);
            opt.step(&mut net.params_mut())?;
            se += mse * b.len() as f64;
            ae += mae * b.len() as f64;
        }
        let n = SampleSource::len(train_set) as f64;
        let (train_mse, train_mae) = (se / n, ae / n);
        let (val_mse, val_mae) =
            if SampleSource::is_empty(val_set) { (train_mse, train_mae) } else { evaluate(&mut net, val_set, cfg.batch_size)? };
        if !val_mse.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        history.epochs.push(EpochRecord { epoch, train_mse, train_mae, val_mse, val_mae });
        debug!("epoch {epoch}: train mse {train_mse:.3} mae {train_mae:.3}, val mse {val_mse:.3} mae {val_mae:.3}");
        match stopper.update(epoch, val_mse) {
            StopVerdict::Improved => {
                history.best_epoch = epoch;
                best_state = net.state();
            }
            StopVerdict::Continue => {}
            StopVerdict::Stop => {
                info!("early stop at epoch {epoch}, best epoch {}", history.best_epoch);
                break;
            }
        }
    }
    net.load_state(&best_state)?;
    Ok(TrainOutcome { network: net, optimizer: opt, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::MotilityTargets;
    use crate::imgproc::FrameTensor;
    use crate::neural::{NetworkSpec, StageSpec, TowerSpec};
    use rand::Rng;

    #[test]
    fn stops_patience_epochs_after_the_best() {
        let mut s = EarlyStopping::new(20);
        let metric = |e: usize| if e <= 7 { 100.0 - e as f64 } else { 100.0 + e as f64 };
        let mut stop = None;
        for e in 1..=100 {
            if s.update(e, metric(e)) == StopVerdict::Stop {
                stop = Some(e);
                break;
            }
        }
        assert_eq!((stop, s.best_epoch), (Some(27), 7));
        let mut tie = EarlyStopping::new(1);
        assert_eq!(tie.update(1, 5.0), StopVerdict::Improved);
        assert_eq!(tie.update(2, 5.0), StopVerdict::Stop);
    }

    #[test]
    fn mse_gradient_is_scaled_by_element_count() {
        let pred = Tensor4::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (mse, mae, g) = mse_loss(&pred, &[0.0, 2.0, 3.0, 4.0, 5.0, 9.0]);
        assert!((mse - 10.0 / 6.0).abs() < 1e-12);
        assert!((mae - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(g.data, vec![2.0 / 6.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    }

    fn tiny_spec(side: usize) -> NetworkSpec {
        let tower = TowerSpec {
            input: (side, side, 1),
            stem_width: 4,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            stages: vec![StageSpec { width: 8, blocks: 1, stride: 2 }],
        };
        NetworkSpec { towers: vec![tower], participant_dim: 0, hidden: vec![32, 32], outputs: 3 }
    }

    /// Brightness ramps whose targets are linear in the ramp slope.
    fn ramp_samples(n: usize, side: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let a: f32 = rng.random_range(-1.0..1.0);
                let frame = FrameTensor::from_fn(side, side, 1, |y, x, _| a * (x + y) as f32 / side as f32);
                let p = 40.0 + 30.0 * a as f64;
                Sample {
                    streams: vec![frame],
                    participant: None,
                    targets: MotilityTargets::new(p, 20.0, 80.0 - p),
                    participant_id: format!("p{i}"),
                }
            })
            .collect()
    }

    #[test]
    fn loss_is_non_increasing_for_small_steps() {
        for seed in 0..3 {
            let samples = ramp_samples(8, 12, seed);
            let refs: Vec<&Sample> = samples.iter().collect();
            let b = Batch::new(&refs).unwrap();
            let mut net = Network::<f32>::new(tiny_spec(12), seed).unwrap();
            let mut opt = Nadam::new(NadamConfig { lr: 1e-4, ..Default::default() });
            let mut prev = f64::INFINITY;
            for _ in 0..5 {
                net.zero_grad();
                let pred = net.forward(&b.streams, None, true).unwrap();
                let (mse, _, g) = mse_loss(&pred, &b.targets);
                assert!(mse <= prev, "seed {seed}: {mse} > {prev}");
                prev = mse;
                net.backward(&g);
                opt.step(&mut net.params_mut()).unwrap();
            }
        }
    }

    #[test]
    fn kept_weights_are_the_best_validation_epoch() {
        let tr = ramp_samples(12, 12, 1);
        let va = ramp_samples(6, 12, 2);
        let mut net = Network::<f32>::new(tiny_spec(12), 0).unwrap();
        net.set_output_bias(&target_mean(&tr[..]));
        let cfg = TrainConfig { batch_size: 4, max_epochs: 15, patience: 3, seed: 5, ..Default::default() };
        let mut out = train(net, &tr[..], &va[..], &cfg).unwrap();
        let min = out.history.epochs.iter().map(|e| e.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history.best().unwrap().val_mse, min);
        let (mse, _) = evaluate(&mut out.network, &va[..], 4).unwrap();
        assert_eq!(mse, min);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let tr = ramp_samples(10, 12, 3);
        let cfg = TrainConfig { batch_size: 4, max_epochs: 3, seed: 9, ..Default::default() };
        let run = || {
            let mut o = train(Network::<f32>::new(tiny_spec(12), 1).unwrap(), &tr[..], &[][..], &cfg).unwrap();
            o.network.state()
        };
        assert_eq!(run(), run());
    }
}

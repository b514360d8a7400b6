use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm, Conv2d, Dense, Gap, MaxPool, Relu};
use super::tensor::{Param, Real, Tensor4};
use crate::error::{Error, Result};
use crate::represent::RepresentationKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub width: usize,
    pub blocks: usize,
    /// Stride of the stage's first block.
    pub stride: usize,
}

/// One convolutional tower: stem, residual stages, global average pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerSpec {
    /// `(height, width, channels)`.
    pub input: (usize, usize, usize),
    pub stem_width: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub stages: Vec<StageSpec>,
}

impl TowerSpec {
    /// 8 residual blocks in 4 stages of widths 8, 16, 32, 64.
    pub fn desk_scale(input: (usize, usize, usize)) -> Self {
        let stages = [(8, 1), (16, 2), (32, 2), (64, 2)]
            .into_iter()
            .map(|(width, stride)| StageSpec { width, blocks: 2, stride })
            .collect();
        Self { input, stem_width: 8, stem_kernel: 7, stem_stride: 2, stem_pool: true, stages }
    }

    /// Feature width after global pooling.
    pub fn gap_width(&self) -> usize {
        self.stages.last().map_or(self.stem_width, |s| s.width)
    }

    /// Spatial shape entering global pooling.
    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::SpecShapeError(format!("empty tower input {:?}", self.input)));
        }
        if self.stem_width == 0 || self.stem_kernel == 0 || self.stem_stride == 0 {
            return Err(Error::SpecShapeError("stem needs a positive width, kernel and stride".into()));
        }
        let down = |v: usize, s: usize| v.div_ceil(s);
        let (mut h, mut w) = (down(h, self.stem_stride), down(w, self.stem_stride));
        if self.stem_pool {
            (h, w) = (down(h, 2), down(w, 2));
        }
        for (i, st) in self.stages.iter().enumerate() {
            if st.width == 0 || st.blocks == 0 || st.stride == 0 {
                return Err(Error::SpecShapeError(format!("stage {i} needs a positive width, block count and stride")));
            }
            (h, w) = (down(h, st.stride), down(w, st.stride));
        }
        Ok((h, w, self.gap_width()))
    }
}

/// Towers, then `GAP -> [concat participant] -> hidden FC + ReLU -> outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub towers: Vec<TowerSpec>,
    /// 0 disables participant fusion.
    pub participant_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl NetworkSpec {
    /// Desk-scale towers for every stream of `kind`, FC(2048) x 2, 3 outputs.
    pub fn desk_scale(kind: RepresentationKind, participant_dim: usize) -> Self {
        Self {
            towers: kind.shapes().into_iter().map(TowerSpec::desk_scale).collect(),
            participant_dim,
            hidden: vec![2048, 2048],
            outputs: 3,
        }
    }

    /// Width of the first fully connected layer.
    pub fn head_input(&self) -> usize {
        self.towers.iter().map(TowerSpec::gap_width).sum::<usize>() + self.participant_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.towers.is_empty() {
            return Err(Error::SpecShapeError("network has no towers".into()));
        }
        for t in &self.towers {
            t.output_shape()?;
        }
        if self.outputs != 3 {
            return Err(Error::SpecShapeError(format!("network must predict 3 targets, spec says {}", self.outputs)));
        }
        if self.hidden.contains(&0) {
            return Err(Error::SpecShapeError("hidden layers need a positive width".into()));
        }
        Ok(())
    }

    /// Tower inputs must equal the representation's stream shapes.
    pub fn check_kind(&self, kind: RepresentationKind) -> Result<()> {
        let want = kind.shapes();
        let got: Vec<_> = self.towers.iter().map(|t| t.input).collect();
        if want != got {
            return Err(Error::SpecShapeError(format!("{kind} needs tower inputs {want:?}, spec has {got:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ResBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm<T>,
    shortcut: Option<(Conv2d<T>, BatchNorm<T>)>,
    relu_out: Relu,
}

impl<T: Real> ResBlock<T> {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (cin != cout || stride != 1).then(|| (Conv2d::new(1, 1, cin, cout, stride, rng), BatchNorm::new(cout)));
        Self {
            conv1: Conv2d::new(3, 3, cin, cout, stride, rng),
            bn1: BatchNorm::new(cout),
            relu1: Relu::default(),
            conv2: Conv2d::new(3, 3, cout, cout, 1, rng),
            bn2: BatchNorm::new(cout),
            shortcut,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let a = self.conv1.forward(x)?;
        let a = self.bn1.forward(&a, train)?;
        let a = self.relu1.forward(&a);
        let b = self.conv2.forward(&a)?;
        let mut b = self.bn2.forward(&b, train)?;
        match &mut self.shortcut {
            Some((conv, bn)) => {
                let s = bn.forward(&conv.forward(x)?, train)?;
                b.data.iter_mut().zip(&s.data).for_each(|(o, v)| *o += *v);
            }
            None => b.data.iter_mut().zip(&x.data).for_each(|(o, v)| *o += *v),
        }
        Ok(self.relu_out.forward(&b))
    }

    fn backward(&mut self, dy: &Tensor4<T>) -> Tensor4<T> {
        let d = self.relu_out.backward(dy);
        let db = self.bn2.backward(&d);
        let da = self.conv2.backward(&db);
        let da = self.relu1.backward(&da);
        let da = self.bn1.backward(&da);
        let mut dx = self.conv1.backward(&da);
        let ds = match &mut self.shortcut {
            Some((conv, bn)) => conv.backward(&bn.backward(&d)),
            None => d,
        };
        dx.data.iter_mut().zip(&ds.data).for_each(|(o, v)| *o += *v);
        dx
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ];
        if let Some((conv, bn)) = &mut self.shortcut {
            p.extend([&mut conv.weight, &mut conv.bias, &mut bn.gamma, &mut bn.beta]);
        }
        p
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, bn)) = &mut self.shortcut {
            v.push(bn);
        }
        v
    }
}

#[derive(Debug, Clone)]
struct Tower<T> {
    stem: Conv2d<T>,
    stem_bn: BatchNorm<T>,
    stem_relu: Relu,
    pool: Option<MaxPool>,
    blocks: Vec<ResBlock<T>>,
    gap: Gap,
}

impl<T: Real> Tower<T> {
    fn new(spec: &TowerSpec, rng: &mut ChaCha8Rng) -> Self {
        let k = spec.stem_kernel;
        let stem = Conv2d::new(k, k, spec.input.2, spec.stem_width, spec.stem_stride, rng);
        let mut blocks = Vec::new();
        let mut cin = spec.stem_width;
        for st in &spec.stages {
            for b in 0..st.blocks {
                blocks.push(ResBlock::new(cin, st.width, if b == 0 { st.stride } else { 1 }, rng));
                cin = st.width;
            }
        }
        Self {
            stem,
            stem_bn: BatchNorm::new(spec.stem_width),
            stem_relu: Relu::default(),
            pool: spec.stem_pool.then(|| MaxPool::new(3, 2)),
            blocks,
            gap: Gap::default(),
        }
    }

    fn forward(&mut self, x: &Tensor4<T>, train: bool) -> Result<Tensor4<T>> {
        let y = self.stem.forward(x)?;
        let y = self.stem_bn.forward(&y, train)?;
        let mut y = self.stem_relu.forward(&y);
        if let Some(p) = &mut self.pool {
            y = p.forward(&y);
        }
        for b in &mut self.blocks {
            y = b.forward(&y, train)?;
        }
        Ok(self.gap.forward(&y))
    }

    fn backward(&mut self, dy: &Tensor4<T>) {
        let mut d = self.gap.backward(dy);
        for b in self.blocks.iter_mut().rev() {
            d = b.backward(&d);
        }
        if let Some(p) = &mut self.pool {
            d = p.backward(&d);
        }
        let d = self.stem_relu.backward(&d);
        let d = self.stem_bn.backward(&d);
        self.stem.backward_params(&d);
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = vec![&mut self.stem.weight, &mut self.stem.bias, &mut self.stem_bn.gamma, &mut self.stem_bn.beta];
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v = vec![&mut self.stem_bn];
        for b in &mut self.blocks {
            v.extend(b.norms_mut());
        }
        v
    }
}

/// Residual regression network over one or more input streams.
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    towers: Vec<Tower<T>>,
    head: Vec<Dense<T>>,
    head_relu: Vec<Relu>,
    enabled: Vec<bool>,
}

impl<T: Real> Network<T> {
    /// He-initialized network; `seed` fixes every initial weight.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let towers = spec.towers.iter().map(|t| Tower::new(t, &mut rng)).collect();
        let mut head = Vec::new();
        let mut width = spec.head_input();
        for &h in &spec.hidden {
            head.push(Dense::new(width, h, 1.0, &mut rng));
            width = h;
        }
        head.push(Dense::new(width, spec.outputs, 0.5, &mut rng));
        let head_relu = vec![Relu::default(); spec.hidden.len()];
        let enabled = vec![true; spec.towers.len()];
        Ok(Self { spec, towers, head, head_relu, enabled })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Input width of the first fully connected layer.
    pub fn head_input(&self) -> usize {
        self.head[0].inputs
    }

    /// Ablation hook: a disabled stream is fed zeros of its declared shape.
    pub fn set_stream_enabled(&mut self, stream: usize, enabled: bool) {
        self.enabled[stream] = enabled;
    }

    pub fn zero_output_layer(&mut self) {
        let out = self.head.last_mut().expect("head has an output layer");
        out.weight.value.iter_mut().for_each(|v| *v = T::zero());
        out.bias.value.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let out = self.head.last_mut().expect("head has an output layer");
        for (b, v) in out.bias.value.iter_mut().zip(bias) {
            *b = T::of(*v);
        }
    }

    /// `n x 3` predictions. `train` selects batch statistics and caches the
    /// activations needed by `backward`.
    pub fn forward(&mut self, streams: &[Tensor4<T>], participant: Option<&Tensor4<T>>, train: bool) -> Result<Tensor4<T>> {
        if streams.len() != self.towers.len() {
            return Err(Error::ShapeMismatch(format!("network has {} streams, got {}", self.towers.len(), streams.len())));
        }
        let n = streams[0].n;
        for (s, t) in streams.iter().zip(&self.spec.towers) {
            if s.n != n || (s.h, s.w, s.c) != t.input {
                return Err(Error::ShapeMismatch(format!("stream {:?} does not match tower input {:?}", s.shape(), t.input)));
            }
        }
        let pdim = self.spec.participant_dim;
        match participant {
            Some(p) if pdim > 0 && p.n == n && p.sample_len() == pdim => {}
            None if pdim == 0 => {}
            _ => return Err(Error::ShapeMismatch(format!("network expects a participant vector of length {pdim}"))),
        }
        let mut feats = Vec::with_capacity(self.towers.len());
        for ((tower, x), &on) in self.towers.iter_mut().zip(streams).zip(&self.enabled) {
            feats.push(if on { tower.forward(x, train)? } else { tower.forward(&Tensor4::zeros(x.n, x.h, x.w, x.c), train)? });
        }
        let width = self.head_input();
        let mut z = Vec::with_capacity(n * width);
        for i in 0..n {
            for f in &feats {
                z.extend_from_slice(f.sample(i));
            }
            if let Some(p) = participant {
                z.extend_from_slice(p.sample(i));
            }
        }
        let mut y = Tensor4::matrix(n, width, z)?;
        for (dense, relu) in self.head.iter_mut().zip(&mut self.head_relu) {
            y = relu.forward(&dense.forward(&y)?);
        }
        self.head.last_mut().expect("output layer").forward(&y)
    }

    /// Accumulates parameter gradients for the last training forward.
    pub fn backward(&mut self, dy: &Tensor4<T>) {
        let last = self.head.len() - 1;
        let mut d = self.head[last].backward(dy);
        for i in (0..last).rev() {
            d = self.head[i].backward(&self.head_relu[i].backward(&d));
        }
        let n = d.n;
        let width = d.c;
        let mut offset = 0;
        for tower in &mut self.towers {
            let c = tower.blocks.last().map_or(tower.stem.cout, |b| b.conv2.cout);
            let mut part = Vec::with_capacity(n * c);
            for i in 0..n {
                part.extend_from_slice(&d.data[i * width + offset..i * width + offset + c]);
            }
            tower.backward(&Tensor4 { n, h: 1, w: 1, c, data: part });
            offset += c;
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = Vec::new();
        for t in &mut self.towers {
            p.extend(t.params_mut());
        }
        for d in &mut self.head {
            p.extend([&mut d.weight, &mut d.bias]);
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    /// Parameter values followed by batch-norm running statistics.
    pub fn state(&mut self) -> Vec<Vec<T>> {
        let mut out: Vec<Vec<T>> = self.params_mut().into_iter().map(|p| p.value.clone()).collect();
        for t in &mut self.towers {
            for bn in t.norms_mut() {
                out.push(bn.running_mean.clone());
                out.push(bn.running_var.clone());
            }
        }
        out
    }

    pub fn load_state(&mut self, state: &[Vec<T>]) -> Result<()> {
        let mismatch = || Error::ShapeMismatch("state does not match the network layout".into());
        let current = self.state();
        if current.len() != state.len() || current.iter().zip(state).any(|(a, b)| a.len() != b.len()) {
            return Err(mismatch());
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value.copy_from_slice(it.next().ok_or_else(mismatch)?);
        }
        for t in &mut self.towers {
            for bn in t.norms_mut() {
                bn.running_mean.copy_from_slice(it.next().ok_or_else(mismatch)?);
                bn.running_var.copy_from_slice(it.next().ok_or_else(mismatch)?);
            }
        }
        Ok(())
    }

    /// Same network at another precision.
    pub fn cast<U: Real>(&mut self) -> Network<U> {
        let mut out = Network::<U>::new(self.spec.clone(), 0).expect("validated spec");
        let state: Vec<Vec<U>> = self.state().iter().map(|v| v.iter().map(|x| U::of(x.f64())).collect()).collect();
        out.load_state(&state).expect("same layout");
        out.enabled = self.enabled.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(input: (usize, usize, usize)) -> TowerSpec {
        TowerSpec {
            input,
            stem_width: 4,
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: true,
            stages: vec![StageSpec { width: 4, blocks: 1, stride: 1 }, StageSpec { width: 6, blocks: 1, stride: 2 }],
        }
    }

    fn random(n: usize, (h, w, c): (usize, usize, usize), seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(n, h, w, c, (0..n * h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn greystack_stem_takes_thirty_channels() {
        let spec = NetworkSpec::desk_scale(RepresentationKind::GreyStack30, 0);
        assert_eq!(spec.towers[0].input, (224, 224, 30));
        spec.check_kind(RepresentationKind::GreyStack30).unwrap();
        assert!(spec.check_kind(RepresentationKind::SingleFrame).is_err());
        let net = Network::<f32>::new(spec, 0).unwrap();
        assert_eq!(net.towers[0].stem.cin, 30);
    }

    #[test]
    fn desk_scale_is_eight_blocks_up_to_width_64() {
        let t = TowerSpec::desk_scale((224, 224, 3));
        assert_eq!(t.stages.iter().map(|s| s.blocks).sum::<usize>(), 8);
        assert_eq!(t.stages.iter().map(|s| s.width).max(), Some(64));
        assert_eq!(t.output_shape().unwrap(), (7, 7, 64));
    }

    #[test]
    fn fusion_widens_first_fc() {
        let mut t = tiny((16, 16, 3));
        t.stages.last_mut().unwrap().width = 128;
        let spec = NetworkSpec { towers: vec![t], participant_dim: 3, hidden: vec![2048, 2048], outputs: 3 };
        assert_eq!(Network::<f32>::new(spec, 0).unwrap().head_input(), 131);
    }

    #[test]
    fn two_stream_head_concatenates() {
        use crate::represent::FlowKind;
        let kind = RepresentationKind::TwoStream { flow: FlowKind::Both, stride: 1 };
        let mut spec = NetworkSpec::desk_scale(kind, 0);
        assert_eq!(spec.towers[1].input.2, 6);
        for t in &mut spec.towers {
            t.stages.last_mut().unwrap().width = 128;
        }
        assert_eq!(spec.head_input(), 256);
        spec.participant_dim = 4;
        assert_eq!(spec.head_input(), 260);
    }

    #[test]
    fn inconsistent_specs_are_rejected() {
        let mut spec = NetworkSpec { towers: vec![tiny((8, 8, 1))], participant_dim: 0, hidden: vec![8], outputs: 2 };
        assert!(matches!(Network::<f32>::new(spec.clone(), 0), Err(Error::SpecShapeError(_))));
        spec.outputs = 3;
        spec.towers[0].stages[0].blocks = 0;
        assert!(matches!(Network::<f32>::new(spec, 0), Err(Error::SpecShapeError(_))));
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let spec = NetworkSpec { towers: vec![tiny((12, 12, 3))], participant_dim: 2, hidden: vec![8, 8], outputs: 3 };
        let mut net = Network::<f64>::new(spec, 1).unwrap();
        net.zero_output_layer();
        let y = net.forward(&[random(3, (12, 12, 3), 2)], Some(&random(3, (1, 1, 2), 3)), false).unwrap();
        assert_eq!(y.shape(), (3, 1, 1, 3));
        assert!(y.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn disabled_stream_ignores_its_input() {
        let spec = NetworkSpec { towers: vec![tiny((12, 12, 3)), tiny((12, 12, 6))], participant_dim: 0, hidden: vec![8], outputs: 3 };
        let mut net = Network::<f64>::new(spec, 4).unwrap();
        let a = random(2, (12, 12, 3), 5);
        let y1 = net.forward(&[a.clone(), random(2, (12, 12, 6), 6)], None, false).unwrap();
        let y2 = net.forward(&[a.clone(), random(2, (12, 12, 6), 7)], None, false).unwrap();
        assert_ne!(y1, y2);
        net.set_stream_enabled(1, false);
        let z1 = net.forward(&[a.clone(), random(2, (12, 12, 6), 6)], None, false).unwrap();
        let z2 = net.forward(&[a, random(2, (12, 12, 6), 7)], None, false).unwrap();
        assert_eq!(z1, z2);
    }

    #[test]
    fn inference_is_repeatable_and_state_round_trips() {
        let spec = NetworkSpec { towers: vec![tiny((10, 14, 2))], participant_dim: 0, hidden: vec![6], outputs: 3 };
        let mut net = Network::<f32>::new(spec.clone(), 9).unwrap();
        let x = random(4, (10, 14, 2), 1).cast::<f32>();
        net.forward(&[x.clone()], None, true).unwrap();
        let a = net.forward(&[x.clone()], None, false).unwrap();
        assert_eq!(a, net.forward(&[x.clone()], None, false).unwrap());
        let mut other = Network::<f32>::new(spec, 10).unwrap();
        other.load_state(&net.state()).unwrap();
        assert_eq!(a, other.forward(&[x], None, false).unwrap());
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        let spec = NetworkSpec { towers: vec![tiny((9, 9, 2))], participant_dim: 2, hidden: vec![5], outputs: 3 };
        let mut net = Network::<f64>::new(spec, 3).unwrap();
        let x = random(3, (9, 9, 2), 8);
        let p = random(3, (1, 1, 2), 9);
        let r = random(3, (1, 1, 3), 10);
        let loss = |net: &mut Network<f64>| -> f64 {
            let y = net.forward(&[x.clone()], Some(&p), true).unwrap();
            y.data.iter().zip(&r.data).map(|(a, b)| a * b).sum()
        };
        net.zero_grad();
        loss(&mut net);
        net.backward(&r);
        let analytic: Vec<f64> = net.params_mut().iter().flat_map(|q| q.grad.clone()).collect();
        let mut numeric = Vec::new();
        let n_params = net.params_mut().len();
        for pi in 0..n_params {
            let len = net.params_mut()[pi].value.len();
            for j in 0..len {
                let orig = net.params_mut()[pi].value[j];
                net.params_mut()[pi].value[j] = orig + 1e-5;
                let up = loss(&mut net);
                net.params_mut()[pi].value[j] = orig - 1e-5;
                let down = loss(&mut net);
                net.params_mut()[pi].value[j] = orig;
                numeric.push((up - down) / 2e-5);
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "relative error {}", diff / norm);
    }
}

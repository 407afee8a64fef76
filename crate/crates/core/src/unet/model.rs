use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionUNetConfig, Upsample};
use super::gate::{attention_gate_backward, attention_gate_forward, AttentionGate, GateCache};
use crate::nn::activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
use crate::nn::ops::{
    concat_channels_backward, concat_channels_forward, maxpool2x2_backward, maxpool2x2_forward,
    nearest_upsample2x_backward, nearest_upsample2x_forward,
};
use crate::nn::{join, BatchNorm2d, BatchNormCache, Conv2d, Mode, Module, Param, Tensor, TransposedConv2x};
use crate::{Error, Result};

/// conv3×3 → batch-norm → ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct ConvBnReluCache {
    input: Tensor,
    bn: BatchNormCache,
    pre_relu: Tensor,
}

impl ConvBnRelu {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        ConvBnRelu { conv: Conv2d::new(cin, cout, 3, true, rng), bn: BatchNorm2d::new(cout) }
    }
}

impl Module for ConvBnRelu {
    type Cache = ConvBnReluCache;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ConvBnReluCache)> {
        let (c, _) = self.conv.forward(x, mode)?;
        let (pre_relu, bn) = self.bn.forward(&c, mode)?;
        Ok((relu_forward(&pre_relu), ConvBnReluCache { input: x.clone(), bn, pre_relu }))
    }

    fn backward(&mut self, cache: &ConvBnReluCache, dy: &Tensor) -> Result<Tensor> {
        let d = relu_backward(&cache.pre_relu, dy)?;
        let d = self.bn.backward(&cache.bn, &d)?;
        self.conv.backward(&cache.input, &d)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        self.bn.visit_params_mut(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }

    fn commit_stats(&mut self, cache: &ConvBnReluCache) {
        self.bn.commit_stats(&cache.bn);
    }
}

/// Two [`ConvBnRelu`] in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleConv(pub ConvBnRelu, pub ConvBnRelu);

impl DoubleConv {
    pub fn new(cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        DoubleConv(ConvBnRelu::new(cin, cout, rng), ConvBnRelu::new(cout, cout, rng))
    }
}

impl Module for DoubleConv {
    type Cache = (ConvBnReluCache, ConvBnReluCache);

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, Self::Cache)> {
        let (a, ca) = self.0.forward(x, mode)?;
        let (b, cb) = self.1.forward(&a, mode)?;
        Ok((b, (ca, cb)))
    }

    fn backward(&mut self, (ca, cb): &Self::Cache, dy: &Tensor) -> Result<Tensor> {
        let d = self.1.backward(cb, dy)?;
        self.0.backward(ca, &d)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.0.visit_params(&join(prefix, "0"), f);
        self.1.visit_params(&join(prefix, "1"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_params_mut(&join(prefix, "0"), f);
        self.1.visit_params_mut(&join(prefix, "1"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.0.visit_buffers(&join(prefix, "0"), f);
        self.1.visit_buffers(&join(prefix, "1"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.visit_buffers_mut(&join(prefix, "0"), f);
        self.1.visit_buffers_mut(&join(prefix, "1"), f);
    }

    fn commit_stats(&mut self, (ca, cb): &Self::Cache) {
        self.0.commit_stats(ca);
        self.1.commit_stats(cb);
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum UpBlock {
    Transposed(TransposedConv2x),
    NearestConv(ConvBnRelu),
}

#[derive(Debug, Clone)]
pub enum UpCache {
    Transposed(Tensor),
    NearestConv(ConvBnReluCache),
}

impl Module for UpBlock {
    type Cache = UpCache;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, UpCache)> {
        match self {
            UpBlock::Transposed(t) => {
                let (y, c) = t.forward(x, mode)?;
                Ok((y, UpCache::Transposed(c)))
            }
            UpBlock::NearestConv(block) => {
                let (y, c) = block.forward(&nearest_upsample2x_forward(x)?, mode)?;
                Ok((y, UpCache::NearestConv(c)))
            }
        }
    }

    fn backward(&mut self, cache: &UpCache, dy: &Tensor) -> Result<Tensor> {
        match (self, cache) {
            (UpBlock::Transposed(t), UpCache::Transposed(c)) => t.backward(c, dy),
            (UpBlock::NearestConv(b), UpCache::NearestConv(c)) => nearest_upsample2x_backward(&b.backward(c, dy)?),
            _ => Err(Error::State("upsample cache of the wrong kind".into())),
        }
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        match self {
            UpBlock::Transposed(t) => t.visit_params(prefix, f),
            UpBlock::NearestConv(b) => b.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        match self {
            UpBlock::Transposed(t) => t.visit_params_mut(prefix, f),
            UpBlock::NearestConv(b) => b.visit_params_mut(prefix, f),
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let UpBlock::NearestConv(b) = self {
            b.visit_buffers(prefix, f)
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let UpBlock::NearestConv(b) = self {
            b.visit_buffers_mut(prefix, f)
        }
    }

    fn commit_stats(&mut self, cache: &UpCache) {
        if let (UpBlock::NearestConv(b), UpCache::NearestConv(c)) = (self, cache) {
            b.commit_stats(c)
        }
    }
}

/// One decoder level: upsample, gate the skip, concatenate, double conv.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLevel {
    pub up: UpBlock,
    pub gate: AttentionGate,
    pub conv: DoubleConv,
}

/// Attention U-Net with a sigmoid head producing one probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionUNet {
    config: AttentionUNetConfig,
    /// Encoder levels, finest first; the last one is the bottleneck.
    pub encoders: Vec<DoubleConv>,
    /// Decoder levels indexed like the skip they consume (finest first).
    pub decoders: Vec<DecoderLevel>,
    pub head: Conv2d,
}

#[derive(Debug, Clone)]
struct LevelCache {
    up: UpCache,
    gate: GateCache,
    up_channels: usize,
    conv: <DoubleConv as Module>::Cache,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    encoders: Vec<<DoubleConv as Module>::Cache>,
    pools: Vec<(Vec<usize>, Vec<usize>)>,
    levels: Vec<Option<LevelCache>>,
    head_input: Tensor,
    output: Tensor,
}

impl ModelCache {
    /// Gate internals of decoder level `l` (finest first).
    pub fn gate(&self, level: usize) -> Option<&GateCache> {
        self.levels.get(level)?.as_ref().map(|l| &l.gate)
    }
}

impl AttentionUNet {
    /// He-uniform initialization from a seeded stream.
    pub fn new(config: &AttentionUNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = &config.widths;
        let mut encoders = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for &wl in w {
            encoders.push(DoubleConv::new(cin, wl, &mut rng));
            cin = wl;
        }
        let mut decoders = Vec::with_capacity(config.depth - 1);
        for l in 0..config.depth - 1 {
            let (fine, coarse) = (w[l], w[l + 1]);
            let up = match config.upsample {
                Upsample::Transposed => UpBlock::Transposed(TransposedConv2x::new(coarse, fine, &mut rng)),
                Upsample::NearestConv => UpBlock::NearestConv(ConvBnRelu::new(coarse, fine, &mut rng)),
            };
            decoders.push(DecoderLevel {
                up,
                gate: AttentionGate::new(fine, fine, config.gate_widths[l], &mut rng),
                conv: DoubleConv::new(2 * fine, fine, &mut rng),
            });
        }
        let head = Conv2d::new(w[0], 1, 1, true, &mut rng);
        Ok(AttentionUNet { config: config.clone(), encoders, decoders, head })
    }

    pub fn config(&self) -> &AttentionUNetConfig {
        &self.config
    }

    pub fn n_gates(&self) -> usize {
        self.decoders.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let [_, c, h, w] = x.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!("model expects {} input channels, got {c}", self.config.in_channels)));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not a positive multiple of {m}")));
        }
        Ok(())
    }

    /// Probability map only, in evaluation mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}

impl Module for AttentionUNet {
    type Cache = ModelCache;

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ModelCache)> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth - 1);
        let mut encoders = Vec::with_capacity(depth);
        let mut pools = Vec::with_capacity(depth - 1);
        let mut h = x.clone();
        for (l, enc) in self.encoders.iter().enumerate() {
            let (y, c) = enc.forward(&h, mode)?;
            encoders.push(c);
            if l + 1 < depth {
                let (p, arg) = maxpool2x2_forward(&y)?;
                pools.push((y.dims().to_vec(), arg));
                skips.push(y);
                h = p;
            } else {
                h = y;
            }
        }
        let mut levels: Vec<Option<LevelCache>> = vec![None; depth - 1];
        for l in (0..depth - 1).rev() {
            let dec = &self.decoders[l];
            let (u, up) = dec.up.forward(&h, mode)?;
            let (gated, gate) = attention_gate_forward(&dec.gate, &u, &skips[l], mode)?;
            let cat = concat_channels_forward(&gated, &u)?;
            let (y, conv) = dec.conv.forward(&cat, mode)?;
            levels[l] = Some(LevelCache { up, gate, up_channels: u.dims()[1], conv });
            h = y;
        }
        let (logits, _) = self.head.forward(&h, mode)?;
        let output = sigmoid_forward(&logits);
        Ok((output.clone(), ModelCache { encoders, pools, levels, head_input: h, output }))
    }

    fn backward(&mut self, cache: &ModelCache, dy: &Tensor) -> Result<Tensor> {
        let depth = self.config.depth;
        if cache.encoders.len() != depth || cache.levels.len() != depth - 1 {
            return Err(Error::State("model cache from a different architecture".into()));
        }
        let d_logits = sigmoid_backward(&cache.output, dy)?;
        let mut d = self.head.backward(&cache.head_input, &d_logits)?;
        let mut d_skips: Vec<Option<Tensor>> = vec![None; depth - 1];
        for (l, d_skip) in d_skips.iter_mut().enumerate() {
            let lc = cache.levels[l].as_ref().ok_or_else(|| Error::State("missing level cache".into()))?;
            let dec = &mut self.decoders[l];
            let d_cat = dec.conv.backward(&lc.conv, &d)?;
            let gated_channels = d_cat.dims()[1] - lc.up_channels;
            let (d_gated, mut d_u) = concat_channels_backward(gated_channels, &d_cat)?;
            let (d_g, d_skip_l) = attention_gate_backward(&mut dec.gate, &lc.gate, &d_gated)?;
            d_u.add_assign(&d_g)?;
            *d_skip = Some(d_skip_l);
            d = dec.up.backward(&lc.up, &d_u)?;
        }
        for l in (0..depth).rev() {
            if l + 1 < depth {
                let (dims, arg) = &cache.pools[l];
                d = maxpool2x2_backward(dims, arg, &d)?;
                d.add_assign(d_skips[l].as_ref().expect("filled above"))?;
            }
            d = self.encoders[l].backward(&cache.encoders[l], &d)?;
        }
        Ok(d)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (l, e) in self.encoders.iter().enumerate() {
            e.visit_params(&join(prefix, &format!("enc{l}")), f);
        }
        for (l, d) in self.decoders.iter().enumerate() {
            let p = join(prefix, &format!("dec{l}"));
            d.up.visit_params(&join(&p, "up"), f);
            d.gate.visit_params(&join(&p, "gate"), f);
            d.conv.visit_params(&join(&p, "conv"), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (l, e) in self.encoders.iter_mut().enumerate() {
            e.visit_params_mut(&join(prefix, &format!("enc{l}")), f);
        }
        for (l, d) in self.decoders.iter_mut().enumerate() {
            let p = join(prefix, &format!("dec{l}"));
            d.up.visit_params_mut(&join(&p, "up"), f);
            d.gate.visit_params_mut(&join(&p, "gate"), f);
            d.conv.visit_params_mut(&join(&p, "conv"), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, e) in self.encoders.iter().enumerate() {
            e.visit_buffers(&join(prefix, &format!("enc{l}")), f);
        }
        for (l, d) in self.decoders.iter().enumerate() {
            let p = join(prefix, &format!("dec{l}"));
            d.up.visit_buffers(&join(&p, "up"), f);
            d.gate.visit_buffers(&join(&p, "gate"), f);
            d.conv.visit_buffers(&join(&p, "conv"), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, e) in self.encoders.iter_mut().enumerate() {
            e.visit_buffers_mut(&join(prefix, &format!("enc{l}")), f);
        }
        for (l, d) in self.decoders.iter_mut().enumerate() {
            let p = join(prefix, &format!("dec{l}"));
            d.up.visit_buffers_mut(&join(&p, "up"), f);
            d.gate.visit_buffers_mut(&join(&p, "gate"), f);
            d.conv.visit_buffers_mut(&join(&p, "conv"), f);
        }
    }

    fn commit_stats(&mut self, cache: &ModelCache) {
        for (e, c) in self.encoders.iter_mut().zip(&cache.encoders) {
            e.commit_stats(c);
        }
        for (d, c) in self.decoders.iter_mut().zip(&cache.levels) {
            if let Some(c) = c {
                d.up.commit_stats(&c.up);
                d.gate.bn.commit_stats(&c.gate.bn);
                d.conv.commit_stats(&c.conv);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{count_trainable, gradcheck, GradcheckOptions};
    use crate::unet::count_params;

    fn random(dims: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn count_matches_enumeration() {
        for upsample in [Upsample::Transposed, Upsample::NearestConv] {
            for (inc, widths) in [(1, vec![4, 8]), (9, vec![4, 8, 16]), (3, vec![5]), (2, vec![3, 6, 7, 9])] {
                let cfg = AttentionUNetConfig::new(inc, &widths).with_upsample(upsample);
                let model = AttentionUNet::new(&cfg, 0).unwrap();
                assert_eq!(count_trainable(&model), count_params(&cfg).unwrap(), "{cfg:?}");
                assert_eq!(model.n_gates(), widths.len() - 1);
            }
        }
    }

    #[test]
    fn output_shape_and_range() {
        let model = AttentionUNet::new(&AttentionUNetConfig::new(1, &[4, 8, 16]), 1).unwrap();
        let x = random(&[1, 1, 64, 64], 2).map(|v| 10.0 * v);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, _) = model.forward(&x, mode).unwrap();
            assert_eq!(y.dims(), &[1, 1, 64, 64]);
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn nine_channel_input() {
        let model = AttentionUNet::new(&AttentionUNetConfig::new(9, &[4, 8]), 1).unwrap();
        assert_eq!(model.predict(&random(&[2, 9, 8, 8], 3)).unwrap().dims(), &[2, 1, 8, 8]);
        assert!(matches!(model.predict(&random(&[2, 1, 8, 8], 3)), Err(Error::Shape(_))));
        assert!(matches!(model.predict(&random(&[2, 9, 7, 8], 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn parameter_names_are_unique() {
        let cfg = AttentionUNetConfig::new(1, &[2, 4, 8]).with_upsample(Upsample::NearestConv);
        let model = AttentionUNet::new(&cfg, 0).unwrap();
        let mut names = Vec::new();
        model.visit_params("", &mut |n, _| names.push(n.to_string()));
        model.visit_buffers("", &mut |n, _| names.push(n.to_string()));
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"dec0.gate.w_rho.weight".to_string()));
    }

    #[test]
    fn toy_model_gradcheck() {
        for (seed, upsample) in (0..4).flat_map(|s| [(s, Upsample::Transposed), (s + 100, Upsample::NearestConv)]) {
            let cfg = AttentionUNetConfig::new(1, &[3, 4]).with_upsample(upsample);
            let mut model = AttentionUNet::new(&cfg, seed).unwrap();
            crate::unet::suite::jitter_offsets(&mut model, &mut ChaCha8Rng::seed_from_u64(seed));
            let x = random(&[2, 1, 8, 8], seed);
            let report =
                gradcheck(&mut model, &x, &GradcheckOptions { seed, max_per_tensor: 40, ..Default::default() })
                    .unwrap();
            assert!(report.passes(1e-3), "seed {seed}: {} {}", report.max_rel_error, report.worst);
        }
    }
}

//! Attention gate on a skip connection.
//!
//! With decoder features `g` and encoder features `x` at the same
//! resolution:
//!
//! ```text
//! g̃   = W_g ∗ g            x̃ = W_x ∗ x
//! ψ   = g̃ + x̃              ψ' = ReLU(ψ)
//! ψ'' = BatchNorm(ψ')       α  = σ(ψ'')
//! ρ   = W_ρ ∗ α             x_out = ρ ⊙ x
//! ```
//!
//! All three convolutions are 1×1 with bias; `W_ρ` has a single output
//! channel that is broadcast over the channels of `x`.

use rand::Rng;

use crate::nn::activation::{relu_backward, relu_forward, sigmoid_backward, sigmoid_forward};
use crate::nn::join;
use crate::nn::ops::{add_forward, mul_backward, mul_forward};
use crate::nn::probes::split_channels;
use crate::nn::{BatchNorm2d, BatchNormCache, Conv2d, Mode, Module, Param, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGate {
    pub w_g: Conv2d,
    pub w_x: Conv2d,
    pub bn: BatchNorm2d,
    pub w_rho: Conv2d,
}

/// Intermediate maps of one gate evaluation, in computation order.
#[derive(Debug, Clone)]
pub struct GateTrace {
    pub psi: Tensor,
    pub psi_relu: Tensor,
    pub psi_bn: Tensor,
    pub alpha: Tensor,
    pub rho: Tensor,
}

#[derive(Debug, Clone)]
pub struct GateCache {
    pub g: Tensor,
    pub x: Tensor,
    pub bn: BatchNormCache,
    pub trace: GateTrace,
}

impl AttentionGate {
    pub fn new(g_channels: usize, x_channels: usize, inter: usize, rng: &mut impl Rng) -> Self {
        AttentionGate {
            w_g: Conv2d::new(g_channels, inter, 1, true, rng),
            w_x: Conv2d::new(x_channels, inter, 1, true, rng),
            bn: BatchNorm2d::new(inter),
            w_rho: Conv2d::new(inter, 1, 1, true, rng),
        }
    }

    /// Every convolution weight and bias zero; batch-norm at γ = 1, β = 0.
    pub fn zeroed(g_channels: usize, x_channels: usize, inter: usize) -> Self {
        let zero = |cin, cout| Conv2d {
            weight: Param::new(Tensor::zeros(&[cout, cin, 1, 1])),
            bias: Some(Param::new(Tensor::zeros(&[cout]))),
            stride: 1,
            pad: 0,
        };
        AttentionGate {
            w_g: zero(g_channels, inter),
            w_x: zero(x_channels, inter),
            bn: BatchNorm2d::new(inter),
            w_rho: zero(inter, 1),
        }
    }

    pub fn g_channels(&self) -> usize {
        self.w_g.in_channels()
    }

    pub fn x_channels(&self) -> usize {
        self.w_x.in_channels()
    }

    pub fn inter_channels(&self) -> usize {
        self.bn.channels()
    }

    pub fn param_count(g_channels: usize, x_channels: usize, inter: usize) -> u64 {
        Conv2d::param_count(g_channels, inter, 1, true)
            + Conv2d::param_count(x_channels, inter, 1, true)
            + BatchNorm2d::param_count(inter)
            + Conv2d::param_count(inter, 1, 1, true)
    }
}

pub fn attention_gate_forward(gate: &AttentionGate, g: &Tensor, x: &Tensor, mode: Mode) -> Result<(Tensor, GateCache)> {
    let [ng, _, hg, wg] = g.dims4()?;
    let [nx, _, hx, wx] = x.dims4()?;
    if (ng, hg, wg) != (nx, hx, wx) {
        return Err(Error::Shape(format!("attention gate inputs not aligned: g {:?}, x {:?}", g.dims(), x.dims())));
    }
    let (g_tilde, _) = gate.w_g.forward(g, mode)?;
    let (x_tilde, _) = gate.w_x.forward(x, mode)?;
    let psi = add_forward(&g_tilde, &x_tilde)?;
    let psi_relu = relu_forward(&psi);
    let (psi_bn, bn) = gate.bn.forward(&psi_relu, mode)?;
    let alpha = sigmoid_forward(&psi_bn);
    let (rho, _) = gate.w_rho.forward(&alpha, mode)?;
    let out = mul_forward(&rho, x)?;
    Ok((out, GateCache { g: g.clone(), x: x.clone(), bn, trace: GateTrace { psi, psi_relu, psi_bn, alpha, rho } }))
}

/// Accumulates gate parameter gradients and returns `(∂L/∂g, ∂L/∂x)`.
pub fn attention_gate_backward(gate: &mut AttentionGate, cache: &GateCache, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    if dy.dims() != cache.x.dims() || cache.trace.psi.dims4()?[1] != gate.inter_channels() {
        return Err(Error::State(format!(
            "gate cache for x {:?} does not match gradient {:?} or gate width {}",
            cache.x.dims(),
            dy.dims(),
            gate.inter_channels()
        )));
    }
    let t = &cache.trace;
    let (d_rho, mut dx) = mul_backward(&t.rho, &cache.x, dy)?;
    let d_alpha = gate.w_rho.backward(&t.alpha, &d_rho)?;
    let d_psi_bn = sigmoid_backward(&t.alpha, &d_alpha)?;
    let d_psi_relu = gate.bn.backward(&cache.bn, &d_psi_bn)?;
    let d_psi = relu_backward(&t.psi, &d_psi_relu)?;
    let dg = gate.w_g.backward(&cache.g, &d_psi)?;
    dx.add_assign(&gate.w_x.backward(&cache.x, &d_psi)?)?;
    Ok((dg, dx))
}

impl AttentionGate {
    pub(crate) fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.w_g.visit_params(&join(prefix, "w_g"), f);
        self.w_x.visit_params(&join(prefix, "w_x"), f);
        self.bn.visit_params(&join(prefix, "bn"), f);
        self.w_rho.visit_params(&join(prefix, "w_rho"), f);
    }

    pub(crate) fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.w_g.visit_params_mut(&join(prefix, "w_g"), f);
        self.w_x.visit_params_mut(&join(prefix, "w_x"), f);
        self.bn.visit_params_mut(&join(prefix, "bn"), f);
        self.w_rho.visit_params_mut(&join(prefix, "w_rho"), f);
    }

    pub(crate) fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.bn.visit_buffers(&join(prefix, "bn"), f);
    }

    pub(crate) fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.bn.visit_buffers_mut(&join(prefix, "bn"), f);
    }
}

/// The gate as a single-input [`Module`]: the input is `g` and `x`
/// concatenated along channels (`g` first).
#[derive(Debug, Clone, PartialEq)]
pub struct GatePair(pub AttentionGate);

impl Module for GatePair {
    type Cache = GateCache;

    fn forward(&self, input: &Tensor, mode: Mode) -> Result<(Tensor, GateCache)> {
        let (g, x) = split_channels(input, self.0.g_channels())?;
        attention_gate_forward(&self.0, &g, &x, mode)
    }

    fn backward(&mut self, cache: &GateCache, dy: &Tensor) -> Result<Tensor> {
        let (dg, dx) = attention_gate_backward(&mut self.0, cache, dy)?;
        crate::nn::ops::concat_channels_forward(&dg, &dx)
    }

    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.0.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.0.visit_params_mut(prefix, f)
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.0.visit_buffers(prefix, f)
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.0.visit_buffers_mut(prefix, f)
    }

    fn commit_stats(&mut self, cache: &GateCache) {
        self.0.bn.commit_stats(&cache.bn)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{count_trainable, gradcheck, GradcheckOptions};

    fn random(dims: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(dims, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_weight_trace() {
        let gate = AttentionGate::zeroed(4, 3, 2);
        let g = random(&[2, 4, 5, 5], 1);
        let x = random(&[2, 3, 5, 5], 2);
        let (out, cache) = attention_gate_forward(&gate, &g, &x, Mode::Train).unwrap();
        let t = &cache.trace;
        assert!(t.psi_bn.data().iter().all(|&v| v == 0.0));
        assert!(t.alpha.data().iter().all(|&v| v == 0.5));
        assert!(t.rho.data().iter().all(|&v| v == 0.0));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_rho_passes_half_of_x() {
        let mut gate = AttentionGate::zeroed(2, 3, 2);
        gate.w_rho.weight.value = Tensor::new(&[1, 2, 1, 1], vec![1.0, 0.0]).unwrap();
        let x = random(&[1, 3, 4, 4], 3);
        let (out, _) = attention_gate_forward(&gate, &random(&[1, 2, 4, 4], 4), &x, Mode::Train).unwrap();
        for (o, v) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, 0.5 * v);
        }
    }

    #[test]
    fn trace_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gate = AttentionGate::new(3, 3, 2, &mut rng);
        let (_, cache) =
            attention_gate_forward(&gate, &random(&[2, 3, 6, 6], 6), &random(&[2, 3, 6, 6], 7), Mode::Train).unwrap();
        assert!(cache.trace.psi_relu.data().iter().all(|&v| v >= 0.0));
        assert!(cache.trace.alpha.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut gate = AttentionGate::new(2, 3, 2, &mut rng);
        let x = random(&[2, 3, 4, 4], 9);
        let (_, cache) = attention_gate_forward(&gate, &random(&[2, 2, 4, 4], 10), &x, Mode::Train).unwrap();
        let (dg, dx) = attention_gate_backward(&mut gate, &cache, &Tensor::zeros(x.dims())).unwrap();
        assert!(dg.data().iter().chain(dx.data()).all(|&v| v == 0.0));
        let mut all_zero = true;
        gate.visit_params("", &mut |_, p| all_zero &= p.grad.data().iter().all(|&v| v == 0.0));
        assert!(all_zero);
    }

    #[test]
    fn direct_product_term_in_x_gradient() {
        // With W_x = 0 the only path from x to the output is ρ ⊙ x.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gate = AttentionGate::new(2, 2, 2, &mut rng);
        gate.w_x.weight.value.fill(0.0);
        let x = random(&[1, 2, 3, 3], 12);
        let (_, cache) = attention_gate_forward(&gate, &random(&[1, 2, 3, 3], 13), &x, Mode::Train).unwrap();
        let dy = random(x.dims(), 14);
        let (_, dx) = attention_gate_backward(&mut gate, &cache, &dy).unwrap();
        let want = mul_forward(&cache.trace.rho, &dy).unwrap();
        assert!(dx.max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn mismatched_cache_is_state_error() {
        let mut gate = AttentionGate::zeroed(2, 2, 2);
        let (_, cache) =
            attention_gate_forward(&gate, &random(&[1, 2, 3, 3], 0), &random(&[1, 2, 3, 3], 1), Mode::Train).unwrap();
        assert!(matches!(
            attention_gate_backward(&mut gate, &cache, &Tensor::zeros(&[1, 2, 4, 4])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn spatial_mismatch_is_shape_error() {
        let gate = AttentionGate::zeroed(2, 2, 2);
        assert!(matches!(
            attention_gate_forward(&gate, &Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[1, 2, 2, 2]), Mode::Train),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn param_count_matches_enumeration() {
        let gate = GatePair(AttentionGate::zeroed(6, 5, 3));
        assert_eq!(count_trainable(&gate), AttentionGate::param_count(6, 5, 3));
    }

    #[test]
    fn gradcheck_randomized_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..10 {
            let gc = rng.random_range(2..=8);
            let xc = rng.random_range(2..=8);
            let inter = rng.random_range(1..=4);
            let h = rng.random_range(4..=12);
            let w = rng.random_range(4..=12);
            let mut gate = GatePair(AttentionGate::new(gc, xc, inter, &mut rng));
            gate.0.bn.gamma.value = Tensor::uniform(&[inter], 0.5, 1.5, &mut rng);
            let input = random(&[2, gc + xc, h, w], seed);
            let report = gradcheck(&mut gate, &input, &GradcheckOptions { seed, ..Default::default() }).unwrap();
            assert!(report.passes(1e-4), "seed {seed}: {} {}", report.max_rel_error, report.worst);
        }
    }
}

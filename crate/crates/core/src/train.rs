//! Loss, reverse-mode gradients, Adam and the training loop.
//!
//! The loss per sample is `−log Ŷ[label] + λ·Σᵢ‖xᵢ‖₁` where `xᵢ` are the
//! encoded node features. The graph is a constant for differentiation: the
//! gradient flows through `X` as the layer input (and through `L̂·X` with `L̂`
//! fixed) but not through the affinities that built `A`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax_low, forward, forward_with_graph, ForwardTrace, ModelConfig, ModelParams, Pooling};
use crate::numkit::{matmul, Mat, Rng};
use crate::simdata::{apply_masking, PerturbationKind, SequenceSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sc: f64,
    pub total: f64,
}

const LOG_FLOOR: f64 = 1e-300;

pub fn loss(trace: &ForwardTrace, label: usize, cfg: &ModelConfig) -> Result<LossBreakdown> {
    let probs = trace.probabilities();
    if label >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let ce = -probs[label].max(LOG_FLOOR).ln();
    let sc = if cfg.use_sc {
        cfg.lambda * trace.x.as_slice().iter().map(|v| v.abs()).sum::<f64>()
    } else {
        0.0
    };
    Ok(LossBreakdown { ce, sc, total: ce + sc })
}

fn relu_mask(grad: &mut Mat, pre: &Mat) {
    for (g, &p) in grad.as_mut_slice().iter_mut().zip(pre.as_slice()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Gradient of the total loss with respect to every parameter.
pub fn backward(trace: &ForwardTrace, label: usize, params: &ModelParams, cfg: &ModelConfig) -> Result<ModelParams> {
    let classes = trace.probs.cols();
    if label >= classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    params.check_shapes(cfg)?;

    let mut d_logits = trace.probs.clone();
    d_logits[(0, label)] -= 1.0;

    let d_cls = trace.fc.t_matmul(&d_logits)?;
    let mut d_fc = d_logits.matmul_t(&params.cls)?;
    relu_mask(&mut d_fc, &trace.fc_pre);
    let d_out = trace.pooled.t_matmul(&d_fc)?;
    let d_pooled = d_fc.matmul_t(&params.out)?;

    let last = trace.last_nodes();
    let scale = match cfg.pooling {
        Pooling::Mean => 1.0 / last.rows() as f64,
        Pooling::Sum => 1.0,
    };
    let mut d_nodes = Mat::zeros(last.rows(), last.cols());
    for i in 0..d_nodes.rows() {
        for (g, p) in d_nodes.row_mut(i).iter_mut().zip(d_pooled.row(0)) {
            *g = scale * p;
        }
    }

    let mut d_gcn = Vec::with_capacity(trace.layers.len());
    if let Some(graph) = &trace.graph {
        for (l, layer) in trace.layers.iter().enumerate().rev() {
            relu_mask(&mut d_nodes, &layer.pre);
            // P is symmetric, so Pᵀ·dU = P·dU
            let spread = matmul(graph.prop.mat(), &d_nodes)?;
            let input = if l == 0 { &trace.z0 } else { &trace.layers[l - 1].out };
            d_gcn.push(input.t_matmul(&spread)?);
            d_nodes = spread.matmul_t(&params.gcn[l])?;
        }
        d_gcn.reverse();
        if cfg.use_glsp {
            d_nodes = matmul(graph.lap.mat(), &d_nodes)?;
        }
    }

    let mut d_x = d_nodes;
    if cfg.use_sc && cfg.lambda > 0.0 {
        for (g, &x) in d_x.as_mut_slice().iter_mut().zip(trace.x.as_slice()) {
            // subgradient of |x| is 0 at 0
            if x > 0.0 {
                *g += cfg.lambda;
            } else if x < 0.0 {
                *g -= cfg.lambda;
            }
        }
    }
    relu_mask(&mut d_x, &trace.enc_pre);
    let d_enc_w = trace.raw.t_matmul(&d_x)?;
    let d_enc_b = d_x.col_sum();

    Ok(ModelParams {
        enc_w: d_enc_w,
        enc_b: d_enc_b,
        gcn: d_gcn,
        out: d_out,
        cls: d_cls,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update in place. Rejects non-finite gradients
/// without touching the parameters.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState) -> Result<()> {
    let shapes = |p: &ModelParams| p.tensors().iter().map(|m| m.shape()).collect::<Vec<_>>();
    if shapes(params) != shapes(grads) || shapes(params) != shapes(&state.m) {
        return Err(Error::InvalidArgument("gradient shapes do not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite { stage: "gradient" });
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
        for ((p, &g), (m, v)) in it {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite { stage: "adam update" });
    }
    Ok(())
}

/// Epoch count, batching and step-decay learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub adam: AdamConfig,
    /// Optional train-time frame masking: each training draw masks a ratio
    /// drawn uniformly from `[0, train_mask_max]` with `train_mask_kind`.
    pub train_mask_kind: Option<PerturbationKind>,
    pub train_mask_max: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 8,
            decay_factor: 0.1,
            decay_every: 20,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            train_mask_kind: None,
            train_mask_max: 0.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(Error::Config("epochs, batch_size and decay_every must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("lr and decay_factor must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_mask_max) {
            return Err(Error::Config("train_mask_max must lie in [0, 1]".into()));
        }
        if let Some(kind) = self.train_mask_kind {
            if !kind.is_global_mask() {
                return Err(Error::Config(format!("train_mask_kind `{kind}` is not a masking kind")));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.adam.lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }
}

/// One line of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub sc: f64,
    pub total: f64,
    pub train_acc: f64,
    pub lr: f64,
}

/// Trains from a fresh initialisation drawn from `rng`. Batches are visited in
/// a shuffled order each epoch; per-batch gradients are the mean of the
/// per-sample gradients, summed in batch order.
pub fn train_loop(
    dataset: &[SequenceSample],
    cfg: &ModelConfig,
    schedule: &Schedule,
    rng: &mut Rng,
) -> Result<(ModelParams, Vec<EpochRecord>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    cfg.validate()?;
    schedule.validate()?;
    let mut params = ModelParams::init(cfg, rng);
    let mut state = OptimizerState::new(&params, schedule.adam);
    let mut history = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        state.config.lr = schedule.lr_at(epoch);
        let order = rng.permutation(dataset.len());
        let (mut ce, mut sc, mut correct) = (0.0, 0.0, 0usize);
        for batch in order.chunks(schedule.batch_size) {
            let mut acc = params.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let masked;
                let sample = match schedule.train_mask_kind {
                    Some(kind) if schedule.train_mask_max > 0.0 => {
                        let ratio = rng.uniform(0.0, schedule.train_mask_max);
                        masked = apply_masking(&dataset[i], kind, ratio, rng)?;
                        &masked
                    }
                    _ => &dataset[i],
                };
                let trace = forward(sample, &params, cfg)?;
                let l = loss(&trace, sample.label, cfg)?;
                if !l.total.is_finite() {
                    return Err(Error::NonFinite { stage: "loss" });
                }
                ce += l.ce;
                sc += l.sc;
                if argmax_low(trace.probabilities()) == sample.label {
                    correct += 1;
                }
                let g = backward(&trace, sample.label, &params, cfg)?;
                for (a, g) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                    a.axpy(inv, g)?;
                }
            }
            adam_step(&mut params, &acc, &mut state)?;
        }
        let n = dataset.len() as f64;
        history.push(EpochRecord {
            epoch: epoch + 1,
            ce: ce / n,
            sc: sc / n,
            total: (ce + sc) / n,
            train_acc: correct as f64 / n,
            lr: state.config.lr,
        });
    }
    Ok((params, history))
}

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±eps probe crossed an activation kink.
    pub skipped: usize,
}

/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`
/// so coordinates with near-zero gradient are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

fn kink_signature(trace: &ForwardTrace) -> Vec<bool> {
    let mut sig: Vec<bool> = trace.enc_pre.as_slice().iter().map(|&v| v > 0.0).collect();
    for layer in &trace.layers {
        sig.extend(layer.pre.as_slice().iter().map(|&v| v > 0.0));
    }
    sig.extend(trace.fc_pre.as_slice().iter().map(|&v| v > 0.0));
    sig
}

/// Central differences of the total loss (graph frozen at `params`) against
/// the analytic gradient from [`backward`].
pub fn grad_check(
    params: &ModelParams,
    sample: &SequenceSample,
    label: usize,
    cfg: &ModelConfig,
    eps: f64,
) -> Result<GradCheckReport> {
    let trace = forward(sample, params, cfg)?;
    let analytic = backward(&trace, label, params, cfg)?;
    grad_check_against(params, sample, label, cfg, eps, &analytic)
}

/// Like [`grad_check`] but compares against a caller-supplied gradient.
pub fn grad_check_against(
    params: &ModelParams,
    sample: &SequenceSample,
    label: usize,
    cfg: &ModelConfig,
    eps: f64,
    analytic: &ModelParams,
) -> Result<GradCheckReport> {
    let base = forward(sample, params, cfg)?;
    let graph = base.graph.clone();
    let eval = |p: &ModelParams| -> Result<(f64, Vec<bool>)> {
        let t = forward_with_graph(sample, p, cfg, graph.as_ref())?;
        Ok((loss(&t, label, cfg)?.total, kink_signature(&t)))
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].as_slice().len();
        for k in 0..len {
            let orig = params.tensors()[ti].as_slice()[k];
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig + eps;
            let (fp, sp) = eval(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig - eps;
            let (fm, sm) = eval(&probe)?;
            probe.tensors_mut()[ti].as_mut_slice()[k] = orig;
            if sp != sm {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * eps);
            let exact = analytic.tensors()[ti].as_slice()[k];
            let denom = exact.abs().max(numeric.abs()).max(REL_FLOOR);
            report.max_rel_err = report.max_rel_err.max((exact - numeric).abs() / denom);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, LayerTrace};
    use crate::simdata::{gen_sample, GeneratorConfig, Split};

    fn tiny(use_glsp: bool, use_sc: bool, lambda: f64) -> (ModelConfig, GeneratorConfig) {
        let g = GeneratorConfig {
            frames: 3,
            grid_h: 2,
            grid_w: 2,
            raw_channels: 3,
            artifact_block_h: 1,
            artifact_block_w: 1,
            ..GeneratorConfig::default()
        };
        let m = ModelConfig {
            channels: 4,
            gcn_layers: 2,
            gcn_dim: 4,
            fc_width: 5,
            use_glsp,
            use_sc,
            lambda,
            ..ModelConfig::default()
        }
        .with_geometry(&g);
        (m, g)
    }

    fn dummy_trace(probs: &[f64], x: Mat) -> ForwardTrace {
        let one = Mat::from_rows(&[probs]);
        ForwardTrace {
            raw: x.clone(),
            enc_pre: x.clone(),
            z0: x.clone(),
            x,
            graph: None,
            layers: Vec::<LayerTrace>::new(),
            pooled: one.clone(),
            fc_pre: one.clone(),
            fc: one.clone(),
            logits: one.clone(),
            probs: one,
        }
    }

    #[test]
    fn loss_hand_cases() {
        let cfg = ModelConfig {
            lambda: 1e-5,
            ..ModelConfig::default()
        };
        let t = dummy_trace(&[0.0, 1.0], Mat::zeros(2, 2));
        assert_eq!(loss(&t, 1, &cfg).unwrap().ce, 0.0);
        let t = dummy_trace(&[0.5, 0.5], Mat::zeros(2, 2));
        assert!((loss(&t, 0, &cfg).unwrap().ce - std::f64::consts::LN_2).abs() < 1e-15);
        let mut x = Mat::zeros(4, 3);
        x.as_mut_slice().fill(1.0);
        let l = loss(&dummy_trace(&[0.5, 0.5], x), 0, &cfg).unwrap();
        assert!((l.sc - 1.2e-4).abs() < 1e-18);
        assert_eq!(l.total, l.ce + l.sc);
        let off = ModelConfig {
            use_sc: false,
            ..cfg.clone()
        };
        let t = dummy_trace(&[1.0, 0.0], Mat::zeros(2, 2));
        let l = loss(&t, 1, &off).unwrap();
        assert_eq!(l.sc, 0.0);
        assert!(l.ce.is_finite() && l.ce > 690.0);
        assert!(loss(&t, 2, &off).is_err());
    }

    #[test]
    fn classifier_gradient_is_outer_product() {
        let (cfg, g) = tiny(true, false, 0.0);
        let mut params = ModelParams::init(&cfg, &mut Rng::new(3));
        params.cls.as_mut_slice().fill(0.0);
        let s = gen_sample(&g, Split::Train, 1);
        let t = forward(&s, &params, &cfg).unwrap();
        let grads = backward(&t, s.label, &params, &cfg).unwrap();
        let mut delta = t.probs.clone();
        delta[(0, s.label)] -= 1.0;
        let expect = matmul(&t.fc.transpose(), &delta).unwrap();
        assert!(grads.cls.max_abs_diff(&expect) < 1e-15);
        // zero classifier weights block everything upstream
        assert_eq!(grads.out.max_abs(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (glsp, sc) in [(true, true), (true, false), (false, true), (false, false)] {
            let (cfg, g) = tiny(glsp, sc, 1e-2);
            for seed in 0..3 {
                let params = ModelParams::init(&cfg, &mut Rng::new(seed));
                let s = gen_sample(&g, Split::Train, seed as usize);
                let r = grad_check(&params, &s, s.label, &cfg, 1e-5).unwrap();
                assert!(r.max_rel_err < 1e-4, "glsp={glsp} sc={sc}: {r:?}");
                assert!(r.checked > r.skipped);
            }
        }
    }

    #[test]
    fn kink_free_variant_is_tighter() {
        let (cfg, g) = tiny(true, false, 0.0);
        let params = ModelParams::init(&cfg, &mut Rng::new(11));
        let s = gen_sample(&g, Split::Train, 4);
        let r = grad_check(&params, &s, s.label, &cfg, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn baseline_gradients_match() {
        let (cfg, g) = tiny(false, true, 1e-2);
        let cfg = cfg.matched_baseline();
        assert_eq!(cfg.arch, Architecture::NoGraph);
        let params = ModelParams::init(&cfg, &mut Rng::new(2));
        let s = gen_sample(&g, Split::Train, 3);
        let r = grad_check(&params, &s, s.label, &cfg, 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let (cfg, g) = tiny(true, true, 1e-2);
        let params = ModelParams::init(&cfg, &mut Rng::new(5));
        let s = gen_sample(&g, Split::Train, 1);
        let t = forward(&s, &params, &cfg).unwrap();
        let mut grads = backward(&t, s.label, &params, &cfg).unwrap();
        let k = grads.out.as_slice().iter().position(|v| v.abs() > 1e-4).unwrap();
        grads.out.as_mut_slice()[k] *= 1.5;
        let r = grad_check_against(&params, &s, s.label, &cfg, 1e-5, &grads).unwrap();
        assert!(r.max_rel_err > 1e-2, "{r:?}");
    }

    #[test]
    fn pruned_feature_gets_no_l1_push() {
        let (cfg, g) = tiny(false, true, 0.5);
        let mut params = ModelParams::init(&cfg, &mut Rng::new(1));
        // channel 0 is dead for every node: no gradient reaches its weights
        for r in 0..params.enc_w.rows() {
            params.enc_w[(r, 0)] = 0.0;
        }
        params.enc_b[(0, 0)] = -1.0;
        let s = gen_sample(&g, Split::Train, 0);
        let t = forward(&s, &params, &cfg).unwrap();
        assert!((0..t.x.rows()).all(|i| t.x[(i, 0)] == 0.0));
        let grads = backward(&t, s.label, &params, &cfg).unwrap();
        assert_eq!(grads.enc_b[(0, 0)], 0.0);
        assert!((0..grads.enc_w.rows()).all(|r| grads.enc_w[(r, 0)] == 0.0));
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let (cfg, _) = tiny(true, true, 0.0);
        let mut params = ModelParams::init(&cfg, &mut Rng::new(1));
        let before = params.clone();
        let zero = params.zeros_like();
        let mut st = OptimizerState::new(&params, AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut params, &zero, &mut st).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(st.step, 10);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let (cfg, _) = tiny(true, true, 0.0);
        for scale in [1e-3, 1.0, 1e3] {
            let mut params = ModelParams::init(&cfg, &mut Rng::new(1));
            let before = params.clone();
            let mut grads = params.zeros_like();
            for (i, v) in grads.enc_w.as_mut_slice().iter_mut().enumerate() {
                *v = if i % 2 == 0 { scale } else { -scale };
            }
            let mut st = OptimizerState::new(&params, AdamConfig::default());
            adam_step(&mut params, &grads, &mut st).unwrap();
            // m̂ = g, v̂ = g², step = lr·g/(|g|+eps)
            for (i, (a, b)) in params.enc_w.as_slice().iter().zip(before.enc_w.as_slice()).enumerate() {
                let expect = if i % 2 == 0 { -1e-3 } else { 1e-3 } * scale / (scale + 1e-8);
                assert!(((a - b) - expect).abs() < 1e-15, "{scale}");
            }
        }
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let (cfg, _) = tiny(true, true, 0.0);
        let mut params = ModelParams::init(&cfg, &mut Rng::new(1));
        let mut grads = params.zeros_like();
        grads.cls.as_mut_slice().fill(0.37);
        let mut st = OptimizerState::new(&params, AdamConfig::default());
        let mut last = 0.0;
        for _ in 0..1000 {
            let before = params.cls[(0, 0)];
            adam_step(&mut params, &grads, &mut st).unwrap();
            last = before - params.cls[(0, 0)];
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn adam_rejects_non_finite() {
        let (cfg, _) = tiny(true, true, 0.0);
        let mut params = ModelParams::init(&cfg, &mut Rng::new(1));
        let before = params.clone();
        let mut grads = params.zeros_like();
        grads.out[(0, 0)] = f64::NAN;
        let mut st = OptimizerState::new(&params, AdamConfig::default());
        assert!(matches!(
            adam_step(&mut params, &grads, &mut st),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(params, before);
    }

    #[test]
    fn lr_decays_stepwise() {
        let s = Schedule::default();
        assert_eq!(s.lr_at(0), 3e-3);
        assert_eq!(s.lr_at(19), 3e-3);
        assert!((s.lr_at(20) - 3e-4).abs() < 1e-18);
    }
}

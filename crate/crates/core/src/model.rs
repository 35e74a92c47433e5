//! Forward network.
//!
//! ```text
//! raw (d x C_raw) ─ encoder ─▶ X = relu(raw·W_enc + b)          d = N·h·w
//! X ─ graph ─▶ A, P = D̃^{-1/2}ÃD̃^{-1/2}, L̂ = I − P             (held constant)
//! Z⁰ = L̂·X  (with the Laplacian prior)  or  X  (without)
//! Zˡ⁺¹ = relu(P·Zˡ·Wˡ)                       l = 0..g_n
//! pooled = mean over nodes of Z^{g_n}
//! Ŷ = softmax(relu(pooled·W_out)·W_cls)
//! ```
//!
//! The graph-free baseline skips everything between the encoder and pooling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_embed::{build_graph_with, GraphOptions, NodeFeatureMatrix, SparseAdjacency};
use crate::numkit::{matmul, relu, softmax_rows, Mat, Rng};
use crate::simdata::{GeneratorConfig, SequenceSample};
use crate::spectral::{laplacian_prefilter, operators, NormalizedLaplacian, PropagationOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    /// Sparse graph + GCN stack.
    Gcn,
    /// Encoder, node pooling and a two-layer MLP; no graph.
    NoGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub raw_channels: usize,
    pub channels: usize,
    pub gcn_layers: usize,
    pub gcn_dim: usize,
    pub fc_width: usize,
    pub classes: usize,
    pub beta: f64,
    pub lambda: f64,
    pub use_glsp: bool,
    pub use_sc: bool,
    pub keep_gram_diagonal: bool,
    pub pooling: Pooling,
    pub arch: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            grid_h: 4,
            grid_w: 4,
            raw_channels: 8,
            channels: 16,
            gcn_layers: 4,
            gcn_dim: 32,
            fc_width: 64,
            classes: 2,
            beta: 0.5,
            lambda: 1e-4,
            use_glsp: true,
            use_sc: true,
            keep_gram_diagonal: false,
            pooling: Pooling::Mean,
            arch: Architecture::Gcn,
        }
    }
}

impl ModelConfig {
    pub fn nodes(&self) -> usize {
        self.frames * self.grid_h * self.grid_w
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            beta: self.beta,
            keep_gram_diagonal: self.keep_gram_diagonal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gcn_layers < 1 || self.gcn_dim < 1 {
            return Err(Error::Config("gcn_layers and gcn_dim must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if self.channels < 1 || self.fc_width < 1 || self.raw_channels < 1 {
            return Err(Error::Config("channel and layer widths must be at least 1".into()));
        }
        if self.nodes() < 2 {
            return Err(Error::Config("a sample needs at least 2 nodes".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Copies the sample geometry from a generator config.
    pub fn with_geometry(mut self, g: &GeneratorConfig) -> Self {
        self.frames = g.frames;
        self.grid_h = g.grid_h;
        self.grid_w = g.grid_w;
        self.raw_channels = g.raw_channels;
        self
    }

    /// Trainable weights of the graph model with this config.
    pub fn gcn_param_count(&self) -> usize {
        let enc = self.raw_channels * self.channels + self.channels;
        let gcn = self.channels * self.gcn_dim + (self.gcn_layers - 1) * self.gcn_dim * self.gcn_dim;
        enc + gcn + self.gcn_dim * self.fc_width + self.fc_width * self.classes
    }

    /// Graph-free baseline whose MLP hidden width matches the graph model's
    /// parameter count as closely as possible.
    pub fn matched_baseline(&self) -> ModelConfig {
        let enc = self.raw_channels * self.channels + self.channels;
        let budget = self.gcn_param_count().saturating_sub(enc);
        let hidden = (budget / (self.channels + self.classes)).max(1);
        ModelConfig {
            arch: Architecture::NoGraph,
            fc_width: hidden,
            use_glsp: false,
            ..self.clone()
        }
    }
}

/// All trainable weights. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub enc_w: Mat,
    pub enc_b: Mat,
    pub gcn: Vec<Mat>,
    pub out: Mat,
    pub cls: Mat,
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Mat {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform(-bound, bound)).collect();
    Mat::from_vec(fan_in, fan_out, data).expect("sized buffer")
}

impl ModelParams {
    /// Glorot-uniform weights, zero encoder bias.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let enc_w = glorot(rng, cfg.raw_channels, cfg.channels);
        let enc_b = Mat::zeros(1, cfg.channels);
        let (gcn, head_in) = match cfg.arch {
            Architecture::Gcn => {
                let mut layers = Vec::with_capacity(cfg.gcn_layers);
                let mut fan_in = cfg.channels;
                for _ in 0..cfg.gcn_layers {
                    layers.push(glorot(rng, fan_in, cfg.gcn_dim));
                    fan_in = cfg.gcn_dim;
                }
                (layers, cfg.gcn_dim)
            }
            Architecture::NoGraph => (Vec::new(), cfg.channels),
        };
        let out = glorot(rng, head_in, cfg.fc_width);
        let cls = glorot(rng, cfg.fc_width, cfg.classes);
        Self {
            enc_w,
            enc_b,
            gcn,
            out,
            cls,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let z = |m: &Mat| Mat::zeros(m.rows(), m.cols());
        Self {
            enc_w: z(&self.enc_w),
            enc_b: z(&self.enc_b),
            gcn: self.gcn.iter().map(z).collect(),
            out: z(&self.out),
            cls: z(&self.cls),
        }
    }

    pub fn tensors(&self) -> Vec<&Mat> {
        let mut v = vec![&self.enc_w, &self.enc_b];
        v.extend(self.gcn.iter());
        v.push(&self.out);
        v.push(&self.cls);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v = vec![&mut self.enc_w, &mut self.enc_b];
        v.extend(self.gcn.iter_mut());
        v.push(&mut self.out);
        v.push(&mut self.cls);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = |m: &Mat, shape: (usize, usize), op: &'static str| {
            if m.shape() == shape {
                Ok(())
            } else {
                Err(Error::Shape {
                    op,
                    left: m.shape(),
                    right: shape,
                })
            }
        };
        expect(&self.enc_w, (cfg.raw_channels, cfg.channels), "encoder weight")?;
        expect(&self.enc_b, (1, cfg.channels), "encoder bias")?;
        let head_in = match cfg.arch {
            Architecture::Gcn => {
                if self.gcn.len() != cfg.gcn_layers {
                    return Err(Error::Shape {
                        op: "gcn layer count",
                        left: (self.gcn.len(), 0),
                        right: (cfg.gcn_layers, 0),
                    });
                }
                let mut fan_in = cfg.channels;
                for w in &self.gcn {
                    expect(w, (fan_in, cfg.gcn_dim), "gcn weight")?;
                    fan_in = cfg.gcn_dim;
                }
                cfg.gcn_dim
            }
            Architecture::NoGraph => {
                if !self.gcn.is_empty() {
                    return Err(Error::Shape {
                        op: "gcn layer count",
                        left: (self.gcn.len(), 0),
                        right: (0, 0),
                    });
                }
                cfg.channels
            }
        };
        expect(&self.out, (head_in, cfg.fc_width), "fc weight")?;
        expect(&self.cls, (cfg.fc_width, cfg.classes), "classifier weight")?;
        Ok(())
    }
}

/// Graph built from one sample's encoded features.
#[derive(Debug, Clone)]
pub struct GraphOps {
    pub adjacency: SparseAdjacency,
    pub prop: PropagationOperator,
    pub lap: NormalizedLaplacian,
}

impl GraphOps {
    pub fn build(x: &NodeFeatureMatrix, cfg: &ModelConfig) -> Result<Self> {
        let adjacency = build_graph_with(x, &cfg.graph_options())?;
        let (prop, lap) = operators(&adjacency);
        Ok(Self {
            adjacency,
            prop,
            lap,
        })
    }
}

/// Cached activations of one GCN layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// `P·Zˡ·Wˡ`
    pub pre: Mat,
    /// `relu(pre)`
    pub out: Mat,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub raw: Mat,
    pub enc_pre: Mat,
    pub x: Mat,
    pub graph: Option<GraphOps>,
    pub z0: Mat,
    pub layers: Vec<LayerTrace>,
    pub pooled: Mat,
    pub fc_pre: Mat,
    pub fc: Mat,
    pub logits: Mat,
    pub probs: Mat,
}

impl ForwardTrace {
    /// Node features entering pooling.
    pub fn last_nodes(&self) -> &Mat {
        self.layers.last().map_or(&self.x, |l| &l.out)
    }

    pub fn probabilities(&self) -> &[f64] {
        self.probs.row(0)
    }
}

fn finite(m: Mat, stage: &'static str) -> Result<Mat> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(Error::NonFinite { stage })
    }
}

pub fn encode(sample: &SequenceSample, params: &ModelParams) -> Result<NodeFeatureMatrix> {
    let raw = sample.node_inputs();
    let (_, x) = encode_raw(&raw, params)?;
    NodeFeatureMatrix::new(x)
}

fn encode_raw(raw: &Mat, params: &ModelParams) -> Result<(Mat, Mat)> {
    let mut pre = matmul(raw, &params.enc_w)?;
    let bias = params.enc_b.row(0);
    for i in 0..pre.rows() {
        for (v, b) in pre.row_mut(i).iter_mut().zip(bias) {
            *v += b;
        }
    }
    let pre = finite(pre, "encoder")?;
    let x = relu(&pre);
    Ok((pre, x))
}

fn check_sample(sample: &SequenceSample, cfg: &ModelConfig) -> Result<()> {
    let got = (sample.frames, sample.grid_h, sample.grid_w, sample.channels);
    let want = (cfg.frames, cfg.grid_h, cfg.grid_w, cfg.raw_channels);
    if got != want {
        return Err(Error::InvalidArgument(format!(
            "sample shape (N,h,w,C) {got:?} does not match model {want:?}"
        )));
    }
    Ok(())
}

pub fn forward(sample: &SequenceSample, params: &ModelParams, cfg: &ModelConfig) -> Result<ForwardTrace> {
    forward_with_graph(sample, params, cfg, None)
}

/// Forward pass; `graph` overrides the graph that would be built from the
/// encoded features (used to hold the graph fixed during gradient checks).
pub fn forward_with_graph(
    sample: &SequenceSample,
    params: &ModelParams,
    cfg: &ModelConfig,
    graph: Option<&GraphOps>,
) -> Result<ForwardTrace> {
    crate::numkit::retain_freed_memory();
    check_sample(sample, cfg)?;
    params.check_shapes(cfg)?;
    let raw = sample.node_inputs();
    let (enc_pre, x) = encode_raw(&raw, params)?;

    let (graph, z0, layers, last) = match cfg.arch {
        Architecture::Gcn => {
            let graph = match graph {
                Some(g) => g.clone(),
                None => GraphOps::build(&NodeFeatureMatrix::new(x.clone())?, cfg)?,
            };
            let z0 = if cfg.use_glsp {
                finite(laplacian_prefilter(&graph.lap, &x)?, "laplacian prefilter")?
            } else {
                x.clone()
            };
            let mut layers: Vec<LayerTrace> = Vec::with_capacity(params.gcn.len());
            for w in &params.gcn {
                let input = layers.last().map_or(&z0, |l| &l.out);
                let pre = finite(matmul(graph.prop.mat(), &matmul(input, w)?)?, "gcn layer")?;
                let out = relu(&pre);
                layers.push(LayerTrace { pre, out });
            }
            let last = layers.last().map_or(z0.clone(), |l| l.out.clone());
            (Some(graph), z0, layers, last)
        }
        Architecture::NoGraph => (None, x.clone(), Vec::new(), x.clone()),
    };

    let pooled = match cfg.pooling {
        Pooling::Mean => last.col_mean(),
        Pooling::Sum => last.col_sum(),
    };
    let fc_pre = finite(matmul(&pooled, &params.out)?, "fc")?;
    let fc = relu(&fc_pre);
    let logits = finite(matmul(&fc, &params.cls)?, "classifier")?;
    let probs = finite(softmax_rows(&logits), "softmax")?;
    Ok(ForwardTrace {
        raw,
        enc_pre,
        x,
        graph,
        z0,
        layers,
        pooled,
        fc_pre,
        fc,
        logits,
        probs,
    })
}

/// Index of the largest probability; ties go to the lower index.
pub fn argmax_low(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn predict(sample: &SequenceSample, params: &ModelParams, cfg: &ModelConfig) -> Result<(usize, Vec<f64>)> {
    let trace = forward(sample, params, cfg)?;
    let probs = trace.probabilities().to_vec();
    Ok((argmax_low(&probs), probs))
}

pub const CHECKPOINT_FORMAT: &str = "ofgcn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: configs plus every weight matrix with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub generator: GeneratorConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, generator: GeneratorConfig, params: ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model,
            generator,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        for m in ck.params.tensors() {
            if m.as_slice().len() != m.rows() * m.cols() {
                return Err(Error::Config("checkpoint matrix shape does not match its data".into()));
            }
        }
        ck.params.check_shapes(&ck.model)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}

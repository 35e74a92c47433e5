//! Training runs, corrupted evaluation and the ablation variants.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{forward, Architecture, ModelConfig, ModelParams};
use crate::numkit::Rng;
use crate::simdata::{
    apply_perturbation, gen_split, GeneratorConfig, PerturbationKind, PerturbationSpec, SequenceSample, Split,
};
use crate::train::{train_loop, EpochRecord, Schedule};

use super::metrics::{compute_metrics, MetricReport};

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub model: ModelConfig,
    pub schedule: Schedule,
    /// Seeds initialisation and batch order (data has its own seed).
    pub seed: u64,
    /// Seeds evaluation-time corruption.
    pub eval_seed: u64,
    /// Strength used for local perturbation kinds during evaluation.
    pub eval_strength: f64,
    /// Corruption used by the ablation and sweep stress evaluations.
    pub eval_kind: PerturbationKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        let model = ModelConfig::default().with_geometry(&generator);
        Self {
            generator,
            model,
            schedule: Schedule::default(),
            seed: 1,
            eval_seed: 1000,
            eval_strength: 1.0,
            eval_kind: PerturbationKind::GlobalMaskBackground,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.schedule.validate()?;
        let g = &self.generator;
        let m = &self.model;
        if (g.frames, g.grid_h, g.grid_w, g.raw_channels) != (m.frames, m.grid_h, m.grid_w, m.raw_channels) {
            return Err(crate::Error::Config(
                "model geometry does not match generator geometry".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

pub fn train_run(cfg: &RunConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let train = gen_split(&cfg.generator, Split::Train);
    let mut rng = Rng::new(cfg.seed);
    let (params, history) = train_loop(&train, &cfg.model, &cfg.schedule, &mut rng)?;
    Ok(TrainedRun { params, history })
}

/// Corrupts `sample` (the `index`-th of its split) with an independent stream,
/// so results do not depend on evaluation order.
pub fn corrupt(
    sample: &SequenceSample,
    index: usize,
    kind: PerturbationKind,
    mask_ratio: f64,
    strength: f64,
    eval_seed: u64,
) -> Result<SequenceSample> {
    let seed = Rng::derive(eval_seed, index as u64).next_u64();
    apply_perturbation(
        sample,
        &PerturbationSpec {
            kind,
            mask_ratio,
            strength,
            seed,
        },
    )
}

/// Positive-class probabilities for a set of samples.
pub fn scores(params: &ModelParams, model: &ModelConfig, samples: &[SequenceSample]) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| Ok(forward(s, params, model)?.probabilities()[1]))
        .collect()
}

pub fn evaluate(
    params: &ModelParams,
    model: &ModelConfig,
    samples: &[SequenceSample],
    kind: PerturbationKind,
    mask_ratio: f64,
    strength: f64,
    eval_seed: u64,
) -> Result<MetricReport> {
    let corrupted = samples
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt(s, i, kind, mask_ratio, strength, eval_seed))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = corrupted.iter().map(|s| s.label).collect();
    compute_metrics(&scores(params, model, &corrupted)?, &labels)
}

/// Ablation rows: graph model with each combination of the Laplacian prior
/// and the sparsity constraint, plus the parameter-matched graph-free baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    NoGraph,
    Gcn,
    GcnGlsp,
    GcnSc,
    GcnGlspSc,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NoGraph,
        Variant::Gcn,
        Variant::GcnGlsp,
        Variant::GcnSc,
        Variant::GcnGlspSc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoGraph => "no_graph",
            Variant::Gcn => "gcn",
            Variant::GcnGlsp => "gcn+glsp",
            Variant::GcnSc => "gcn+sc",
            Variant::GcnGlspSc => "gcn+glsp+sc",
        }
    }

    /// Model config for this row, derived from the full model's config.
    pub fn configure(self, base: &ModelConfig) -> ModelConfig {
        let graph = ModelConfig {
            arch: Architecture::Gcn,
            ..base.clone()
        };
        match self {
            Variant::NoGraph => ModelConfig {
                use_sc: false,
                ..graph.matched_baseline()
            },
            Variant::Gcn => ModelConfig {
                use_glsp: false,
                use_sc: false,
                ..graph
            },
            Variant::GcnGlsp => ModelConfig {
                use_glsp: true,
                use_sc: false,
                ..graph
            },
            Variant::GcnSc => ModelConfig {
                use_glsp: false,
                use_sc: true,
                ..graph
            },
            Variant::GcnGlspSc => ModelConfig {
                use_glsp: true,
                use_sc: true,
                ..graph
            },
        }
    }
}

/// Mean L1 norm of encoded node features, split by node validity, over a set
/// of samples: `(valid, invalid)`. `None` when a group is empty.
pub fn node_norms(params: &ModelParams, samples: &[SequenceSample]) -> Result<(Option<f64>, Option<f64>)> {
    let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
    for s in samples {
        let x = crate::model::encode(s, params)?;
        for (i, &invalid) in s.invalid_nodes().iter().enumerate() {
            let g = usize::from(invalid);
            sums[g] += x.mat().row(i).iter().map(|v| v.abs()).sum::<f64>();
            counts[g] += 1;
        }
    }
    let mean = |g: usize| (counts[g] > 0).then(|| sums[g] / counts[g] as f64);
    Ok((mean(0), mean(1)))
}

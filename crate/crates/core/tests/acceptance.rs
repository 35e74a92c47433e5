//! Acceptance run: one pass/fail line per criterion.
//!
//! Criteria 1-5, 9 and 10 are exact properties and must hold. Criteria 6-8
//! are trend comparisons on the default synthetic benchmark; they are
//! measured and reported as they come out, and the test only asserts that
//! the measurement itself completed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ofgcn::graph_embed::{build_graph, NodeFeatureMatrix};
use ofgcn::harness::commands::{cmd_ablate_at, run_cell, AblationCell, CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE};
use ofgcn::harness::experiment::{corrupt, node_norms, RunConfig, Variant};
use ofgcn::harness::metrics::rank_auc;
use ofgcn::model::{predict, Checkpoint, ModelConfig, ModelParams};
use ofgcn::numkit::{matmul, sym_eigen, Mat, Rng};
use ofgcn::simdata::{gen_sample, gen_split, permute_frames, GeneratorConfig, Split};
use ofgcn::spectral::{cascade_response, operators};
use ofgcn::train::grad_check;

struct Outcome {
    id: u32,
    pass: bool,
    exact: bool,
    detail: String,
}

fn random_features(rng: &mut Rng, d: usize, c: usize) -> NodeFeatureMatrix {
    let data = (0..d * c).map(|_| rng.uniform(0.0, 1.0).powi(2)).collect();
    NodeFeatureMatrix::new(Mat::from_vec(d, c, data).unwrap()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = Rng::new(101);
    let (mut asym, mut lo, mut hi, mut null, mut comp) = (0.0f64, f64::MAX, f64::MIN, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = 4 + rng.below(61);
        let c = 2 + rng.below(7);
        let beta = rng.uniform(0.1, 1.0);
        let a = build_graph(&random_features(&mut rng, d, c), beta).unwrap();
        let (p, l) = operators(&a);
        asym = asym.max(l.mat().max_asymmetry());
        let eig = sym_eigen(l.mat(), 1e-12).unwrap();
        lo = lo.min(eig.values[0]);
        hi = hi.max(eig.values[d - 1]);
        // degree vector recomputed from A: 1 + row sum
        let s: Vec<f64> = (0..d)
            .map(|i| (1.0 + a.mat().row(i).iter().sum::<f64>()).sqrt())
            .collect();
        let ls = matmul(l.mat(), &Mat::from_vec(d, 1, s).unwrap()).unwrap();
        null = null.max(ls.max_abs());
        comp = comp.max(p.mat().max_abs_diff(&Mat::identity(d).sub(l.mat()).unwrap()));
    }
    let pass = asym <= 1e-12 && lo >= -1e-8 && hi <= 2.0 + 1e-8 && null <= 1e-10 && comp <= 1e-12;
    Outcome {
        id: 1,
        pass,
        exact: true,
        detail: format!(
            "spectral invariants over 100 graphs: asym {asym:.1e}, spectrum [{lo:.3e}, {hi:.6}], |L s| {null:.1e}, |P-(I-L)| {comp:.1e}"
        ),
    }
}

fn small_geometry(frames: usize) -> GeneratorConfig {
    GeneratorConfig {
        frames,
        grid_h: 2,
        grid_w: 2,
        raw_channels: 3,
        artifact_block_h: 1,
        artifact_block_w: 1,
        ..GeneratorConfig::default()
    }
}

fn small_model(g: &GeneratorConfig, use_glsp: bool, use_sc: bool) -> ModelConfig {
    ModelConfig {
        channels: 4,
        gcn_layers: 2,
        gcn_dim: 4,
        fc_width: 5,
        use_glsp,
        use_sc,
        lambda: 1e-2,
        ..ModelConfig::default()
    }
    .with_geometry(g)
}

fn criterion_2() -> Outcome {
    let g = small_geometry(3);
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0usize, 0usize);
    for use_glsp in [false, true] {
        for use_sc in [false, true] {
            let cfg = small_model(&g, use_glsp, use_sc);
            for seed in 0..10u64 {
                let params = ModelParams::init(&cfg, &mut Rng::new(seed));
                let sample = gen_sample(&g, Split::Train, seed as usize);
                let r = grad_check(&params, &sample, sample.label, &cfg, 1e-5).unwrap();
                worst = worst.max(r.max_rel_err);
                checked += r.checked;
                skipped += r.skipped;
            }
        }
    }
    Outcome {
        id: 2,
        pass: worst < 1e-4 && checked > 0,
        exact: true,
        detail: format!("gradient check, 4 variants x 10 seeds: max rel err {worst:.2e} ({checked} coords, {skipped} at kinks)"),
    }
}

fn criterion_3() -> Outcome {
    let g = GeneratorConfig {
        frames: 6,
        raw_channels: 4,
        ..small_geometry(6)
    };
    let cfg = ModelConfig {
        channels: 6,
        gcn_dim: 6,
        ..small_model(&g, true, true)
    };
    let mut rng = Rng::new(303);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let params = ModelParams::init(&cfg, &mut Rng::new(i as u64));
        let sample = gen_sample(&g, Split::Test, i);
        let perm = rng.permutation(g.frames);
        let (_, p0) = predict(&sample, &params, &cfg).unwrap();
        let (_, p1) = predict(&permute_frames(&sample, &perm).unwrap(), &params, &cfg).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            worst = worst.max((a - b).abs());
        }
    }
    Outcome {
        id: 3,
        pass: worst <= 1e-9,
        exact: true,
        detail: format!("frame-shuffle invariance over 100 pairs: max |dp| {worst:.1e}"),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(404);
    let (mut monotone, mut equivariant) = (0usize, 0usize);
    for _ in 0..100 {
        let d = 4 + rng.below(45);
        let c = 2 + rng.below(7);
        let x = random_features(&mut rng, d, c);
        let nnz: Vec<usize> = [0.1, 0.25, 0.5, 1.0]
            .iter()
            .map(|&b| build_graph(&x, b).unwrap().nnz())
            .collect();
        if nnz.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
        let perm = rng.permutation(d);
        let a = build_graph(&x, 0.5).unwrap();
        let px = NodeFeatureMatrix::new(x.mat().permute_rows(&perm)).unwrap();
        if *build_graph(&px, 0.5).unwrap().mat() == a.mat().conjugate_by_permutation(&perm) {
            equivariant += 1;
        }
    }
    Outcome {
        id: 4,
        pass: monotone == 100 && equivariant == 100,
        exact: true,
        detail: format!("threshold monotone in beta {monotone}/100, permutation equivariant {equivariant}/100"),
    }
}

/// Pairwise oracle: positive above negative counts 2, ties 1, over 2PN.
fn brute_auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    (pairs > 0).then(|| twice as f64 / (2 * pairs) as f64)
}

fn criterion_5() -> Outcome {
    let mut rng = Rng::new(505);
    let mut agree = 0;
    let trials = 500;
    for t in 0..trials {
        let n = 1 + rng.below(200);
        // every other instance draws from a coarse grid to force ties
        let levels = if t % 2 == 0 { 5 } else { 1 << 20 };
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        if rank_auc(&scores, &labels) == brute_auc(&scores, &labels) {
            agree += 1;
        }
    }
    let hand = rank_auc(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]);
    Outcome {
        id: 5,
        pass: agree == trials && hand == Some(0.75),
        exact: true,
        detail: format!("rank AUC equals pairwise oracle {agree}/{trials}; hand case {hand:?}"),
    }
}

fn criterion_9() -> Outcome {
    let zero_ok = (0..=16).all(|k| cascade_response(0.0, k).unwrap() == 0.0);
    let peak = cascade_response(1.0 / 3.0, 2).unwrap();
    let steps = 300_000;
    let (mut best, mut arg) = (f64::MIN, 0.0);
    for i in 0..=steps {
        let l = i as f64 / steps as f64;
        let v = cascade_response(l, 2).unwrap();
        if v > best {
            (best, arg) = (v, l);
        }
    }
    let pass = zero_ok && (peak - 4.0 / 27.0).abs() <= 1e-12 && best <= peak + 1e-12 && (arg - 1.0 / 3.0).abs() <= 1e-5;
    Outcome {
        id: 9,
        pass,
        exact: true,
        detail: format!("g(0,k)=0 {zero_ok}; k=2 peak {peak:.15} at {arg:.6} (4/27 = {:.15})", 4.0 / 27.0),
    }
}

fn auc_at(cell: &AblationCell, cfg: &RunConfig, m: f64) -> f64 {
    cell.manifest
        .metric(cfg.eval_kind, m)
        .and_then(|r| r.auc)
        .unwrap_or(f64::NAN)
}

struct Ablation {
    cfg: RunConfig,
    /// variant -> per-seed AUC keyed by mask ratio
    auc: BTreeMap<&'static str, Vec<BTreeMap<u64, f64>>>,
    cells: Vec<AblationCell>,
}

const RATIOS: [f64; 4] = [0.0, 0.4, 0.7, 0.8];

fn key(m: f64) -> u64 {
    (m * 10.0).round() as u64
}

impl Ablation {
    fn run(out: &Path) -> Self {
        let cfg = RunConfig::default();
        let cells = cmd_ablate_at(&cfg, 5, &RATIOS, out).unwrap();
        let mut auc: BTreeMap<&'static str, Vec<BTreeMap<u64, f64>>> = BTreeMap::new();
        for c in &cells {
            let per: BTreeMap<u64, f64> = RATIOS.iter().map(|&m| (key(m), auc_at(c, &cfg, m))).collect();
            auc.entry(c.variant.name()).or_default().push(per);
        }
        Self { cfg, auc, cells }
    }

    fn seeds(&self, v: Variant, m: f64) -> Vec<f64> {
        self.auc[v.name()].iter().map(|r| r[&key(m)]).collect()
    }

    fn mean(&self, v: Variant, m: f64) -> f64 {
        let s = self.seeds(v, m);
        s.iter().sum::<f64>() / s.len() as f64
    }
}

fn fmt(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn criterion_6(ab: &Ablation) -> Outcome {
    let full = ab.seeds(Variant::GcnGlspSc, 0.8);
    let gcn = ab.seeds(Variant::Gcn, 0.8);
    let wins = full.iter().zip(&gcn).filter(|(f, g)| f >= g).count();
    let base = ab.mean(Variant::NoGraph, 0.8);
    let graph_variants = [Variant::Gcn, Variant::GcnGlsp, Variant::GcnSc, Variant::GcnGlspSc];
    let margins: Vec<f64> = graph_variants.iter().map(|&v| ab.mean(v, 0.8) - base).collect();
    let a = wins >= 4;
    let b = margins.iter().all(|&m| m >= 0.05);
    let c = ab.mean(Variant::GcnSc, 0.8) >= ab.mean(Variant::Gcn, 0.8);
    Outcome {
        id: 6,
        pass: a && b && c,
        exact: false,
        detail: format!(
            "ablation at m_r=0.8: (a) full>=gcn on {wins}/5 seeds [{}] vs [{}]; (b) margins over baseline {} [{}]; (c) gcn+sc {:.3} vs gcn {:.3} [{}]",
            fmt(&full),
            fmt(&gcn),
            fmt(&margins),
            if b { "ok" } else { "short" },
            ab.mean(Variant::GcnSc, 0.8),
            ab.mean(Variant::Gcn, 0.8),
            if c { "ok" } else { "short" },
        ),
    }
}

fn criterion_7(ab: &Ablation, out: &Path) -> Outcome {
    let cfg = &ab.cfg;
    let test = gen_split(&cfg.generator, Split::Test);
    let masked: Vec<_> = test
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt(s, i, cfg.eval_kind, 0.8, cfg.eval_strength, cfg.eval_seed).unwrap())
        .collect();
    let invalid_norm = |v: Variant| -> f64 {
        let norms: Vec<f64> = ab
            .cells
            .iter()
            .filter(|c| c.variant == v)
            .map(|c| {
                let dir = out.join("ablate").join(format!("{}-seed{}", v.name().replace('+', "_"), c.seed));
                let ck = Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap();
                node_norms(&ck.params, &masked).unwrap().1.unwrap()
            })
            .collect();
        norms.iter().sum::<f64>() / norms.len() as f64
    };
    // same architecture with and without the penalty
    let with = invalid_norm(Variant::GcnGlspSc);
    let without = invalid_norm(Variant::GcnGlsp);
    Outcome {
        id: 7,
        pass: 2.0 * with <= without,
        exact: false,
        detail: format!(
            "mean invalid-node L1 (lambda={}) {with:.3} vs lambda=0 {without:.3}, ratio {:.2} (need <= 0.5)",
            cfg.model.lambda,
            with / without
        ),
    }
}

fn criterion_8(ab: &Ablation) -> Outcome {
    let full_drop = ab.mean(Variant::GcnGlspSc, 0.0) - ab.mean(Variant::GcnGlspSc, 0.4);
    let base_drop = ab.mean(Variant::NoGraph, 0.0) - ab.mean(Variant::NoGraph, 0.4);
    Outcome {
        id: 8,
        pass: full_drop.abs() <= 0.03 && base_drop >= 0.05,
        exact: false,
        detail: format!(
            "AUC change m_r 0 -> 0.4: full {:.3} -> {:.3} (|d| {:.3}, need <= 0.03); baseline {:.3} -> {:.3} (loss {base_drop:.3}, need >= 0.05)",
            ab.mean(Variant::GcnGlspSc, 0.0),
            ab.mean(Variant::GcnGlspSc, 0.4),
            full_drop.abs(),
            ab.mean(Variant::NoGraph, 0.0),
            ab.mean(Variant::NoGraph, 0.4),
        ),
    }
}

fn criterion_10(ab: &Ablation, out: &Path) -> Outcome {
    let cell_cfg = RunConfig {
        model: Variant::GcnGlspSc.configure(&ab.cfg.model),
        ..ab.cfg.clone()
    };
    let first = out.join("ablate").join(format!("gcn_glsp_sc-seed{}", ab.cfg.seed));
    let second = out.join("repeat");
    run_cell("ablate", &cell_cfg, &RATIOS, &second).unwrap();
    let same: Vec<bool> = [MANIFEST_FILE, HISTORY_FILE, CHECKPOINT_FILE]
        .iter()
        .map(|f| std::fs::read(first.join(f)).unwrap() == std::fs::read(second.join(f)).unwrap())
        .collect();
    Outcome {
        id: 10,
        pass: same.iter().all(|&s| s),
        exact: true,
        detail: format!("rerun of (default config, seed {}): manifest/history/checkpoint identical {same:?}", ab.cfg.seed),
    }
}

#[test]
fn acceptance() {
    let out = tempfile::tempdir().unwrap();
    let mut results = vec![criterion_1(), criterion_2(), criterion_3(), criterion_4(), criterion_5(), criterion_9()];
    let ab = Ablation::run(out.path());
    results.push(criterion_6(&ab));
    results.push(criterion_7(&ab, out.path()));
    results.push(criterion_8(&ab));
    results.push(criterion_10(&ab, out.path()));
    results.sort_by_key(|r| r.id);

    // straight to the stderr handle so the report shows without --nocapture
    let mut err = std::io::stderr().lock();
    for r in &results {
        let _ = writeln!(err, "criterion {:>2} {}: {}", r.id, if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let passed = results.iter().filter(|r| r.pass).count();
    let _ = writeln!(err, "acceptance: {passed}/{} criteria pass", results.len());
    drop(err);
    let broken: Vec<u32> = results.iter().filter(|r| r.exact && !r.pass).map(|r| r.id).collect();
    assert!(broken.is_empty(), "exact criteria failed: {broken:?}");
}

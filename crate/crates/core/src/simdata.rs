//! Synthetic corrupted face-sequence generator.
//!
//! A sample is an `N x h x w x C_raw` tensor: `N` frames, each an `h x w` grid
//! of cells with `C_raw` raw channels. Valid frames of every sample share one
//! identity (a per-sample random offset and gain on top of a fixed face
//! template). Fake samples additionally carry an artifact in one channel over a
//! contiguous cell block, at the same position in every frame. The artifact is
//! small next to identity variation, so it shows up as an inconsistency inside
//! a sample rather than as an absolute feature level.
//!
//! Corruptions follow the masking protocol (whole frames replaced by black or
//! background content) and the local perturbation taxonomy (sunglass band,
//! partial blur, partial noise, adversarial-like noise).

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Mat, Rng};

pub const LABEL_REAL: usize = 0;
pub const LABEL_FAKE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbationKind {
    GlobalMaskBlack,
    GlobalMaskBackground,
    SunglassOcclusion,
    PartialBlur,
    PartialNoise,
    AdversarialLike,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 6] = [
        PerturbationKind::GlobalMaskBlack,
        PerturbationKind::GlobalMaskBackground,
        PerturbationKind::SunglassOcclusion,
        PerturbationKind::PartialBlur,
        PerturbationKind::PartialNoise,
        PerturbationKind::AdversarialLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::GlobalMaskBlack => "black",
            PerturbationKind::GlobalMaskBackground => "background",
            PerturbationKind::SunglassOcclusion => "sunglass",
            PerturbationKind::PartialBlur => "blur",
            PerturbationKind::PartialNoise => "noise",
            PerturbationKind::AdversarialLike => "adversarial",
        }
    }

    pub fn is_global_mask(self) -> bool {
        matches!(
            self,
            PerturbationKind::GlobalMaskBlack | PerturbationKind::GlobalMaskBackground
        )
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown perturbation kind `{s}`")))
    }
}

/// One corruption applied to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Fraction of frames affected.
    pub mask_ratio: f64,
    /// Kind-specific magnitude (blend factor, noise std, or uniform bound).
    pub strength: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::InvalidArgument(format!(
                "mask ratio must lie in [0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(self.strength >= 0.0) || !self.strength.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "perturbation strength must be finite and nonnegative, got {}",
                self.strength
            )));
        }
        Ok(())
    }
}

/// Number of frames touched by ratio `m_r` out of `n`: `round(m_r · n)`.
pub fn affected_frames(mask_ratio: f64, n: usize) -> usize {
    ((mask_ratio * n as f64).round() as usize).min(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub channels: usize,
    /// Frame-major, then row, column, channel.
    pub raw: Vec<f64>,
    pub label: usize,
    pub frame_valid: Vec<bool>,
    pub perturbations: Vec<PerturbationSpec>,
}

impl SequenceSample {
    pub fn cells_per_frame(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn nodes(&self) -> usize {
        self.frames * self.cells_per_frame()
    }

    fn frame_len(&self) -> usize {
        self.cells_per_frame() * self.channels
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.raw[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.raw[t * n..(t + 1) * n]
    }

    pub fn cell(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let off = ((t * self.grid_h + y) * self.grid_w + x) * self.channels;
        &self.raw[off..off + self.channels]
    }

    pub fn cell_mut(&mut self, t: usize, y: usize, x: usize) -> &mut [f64] {
        let off = ((t * self.grid_h + y) * self.grid_w + x) * self.channels;
        &mut self.raw[off..off + self.channels]
    }

    /// Raw input flattened to one node per row (`d x C_raw`).
    pub fn node_inputs(&self) -> Mat {
        Mat::from_vec(self.nodes(), self.channels, self.raw.clone())
            .expect("raw length matches declared shape")
    }

    /// Per-node flag: node belongs to an invalid frame.
    pub fn invalid_nodes(&self) -> Vec<bool> {
        let cells = self.cells_per_frame();
        self.frame_valid
            .iter()
            .flat_map(|&v| std::iter::repeat(!v).take(cells))
            .collect()
    }

    pub fn invalid_frame_count(&self) -> usize {
        self.frame_valid.iter().filter(|&&v| !v).count()
    }
}

/// Settings for the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub raw_channels: usize,
    /// Per-cell Gaussian noise on valid frames.
    pub frame_jitter: f64,
    /// Std of the per-sample identity offset added to every valid cell.
    pub identity_scale: f64,
    /// Half-width of the per-sample multiplicative gain around 1.
    pub gain_spread: f64,
    /// Amplitude added to the artifact channel inside the fake block.
    pub artifact_strength: f64,
    pub artifact_block_h: usize,
    pub artifact_block_w: usize,
    /// Probability that a valid cell holds background clutter (unit-variance
    /// noise, as at the margins of a face crop) instead of face content.
    pub clutter_rate: f64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            grid_h: 4,
            grid_w: 4,
            raw_channels: 8,
            frame_jitter: 0.1,
            identity_scale: 0.15,
            gain_spread: 0.3,
            artifact_strength: 1.0,
            artifact_block_h: 2,
            artifact_block_w: 2,
            clutter_rate: 0.0,
            train_size: 64,
            val_size: 32,
            test_size: 96,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("grid_h", self.grid_h),
            ("grid_w", self.grid_w),
            ("raw_channels", self.raw_channels),
            ("artifact_block_h", self.artifact_block_h),
            ("artifact_block_w", self.artifact_block_w),
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("test_size", self.test_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.frames * self.grid_h * self.grid_w < 2 {
            return Err(Error::Config("a sample needs at least 2 nodes".into()));
        }
        if self.raw_channels < 2 {
            return Err(Error::Config("raw_channels must be at least 2".into()));
        }
        if self.artifact_block_h > self.grid_h || self.artifact_block_w > self.grid_w {
            return Err(Error::Config("artifact block larger than the cell grid".into()));
        }
        for (name, v) in [
            ("frame_jitter", self.frame_jitter),
            ("identity_scale", self.identity_scale),
            ("artifact_strength", self.artifact_strength),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.clutter_rate) {
            return Err(Error::Config("clutter_rate must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.gain_spread) {
            return Err(Error::Config("gain_spread must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn split_size(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_size,
            Split::Val => self.val_size,
            Split::Test => self.test_size,
        }
    }

    pub fn artifact_channel(&self) -> usize {
        self.raw_channels - 1
    }

    /// Class-level signature of a real cell (smooth positive profile).
    pub fn real_signature(&self) -> Vec<f64> {
        let c = self.raw_channels as f64;
        (0..self.raw_channels)
            .map(|k| 1.0 + 0.5 * (std::f64::consts::PI * k as f64 / c).cos())
            .collect()
    }

    /// Signature of a fake artifact cell: real signature plus the artifact.
    pub fn fake_signature(&self) -> Vec<f64> {
        let mut s = self.real_signature();
        s[self.artifact_channel()] += self.artifact_strength;
        s
    }

    /// Fixed spatial face template shared by every sample.
    fn template(&self, y: usize, x: usize, k: usize) -> f64 {
        let pi = std::f64::consts::PI;
        let fy = (y as f64 + 0.5) / self.grid_h as f64;
        let fx = (x as f64 + 0.5) / self.grid_w as f64;
        0.3 * (pi * fy * (1 + k % 3) as f64).cos() * (pi * fx * (1 + k % 2) as f64).cos()
    }
}

/// Draws one clean sample; `index` selects the per-sample stream and the label.
pub fn gen_sample(cfg: &GeneratorConfig, split: Split, index: usize) -> SequenceSample {
    let mut rng = Rng::derive(cfg.seed, (split.stream() << 40) | index as u64);
    let label = if index % 2 == 0 { LABEL_REAL } else { LABEL_FAKE };
    let c = cfg.raw_channels;
    let signature = cfg.real_signature();
    let identity: Vec<f64> = (0..c).map(|_| cfg.identity_scale * rng.normal()).collect();
    let gain = rng.uniform(1.0 - cfg.gain_spread, 1.0 + cfg.gain_spread);
    let by = rng.below(cfg.grid_h - cfg.artifact_block_h + 1);
    let bx = rng.below(cfg.grid_w - cfg.artifact_block_w + 1);
    let art = cfg.artifact_channel();

    let mut sample = SequenceSample {
        frames: cfg.frames,
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        channels: c,
        raw: vec![0.0; cfg.frames * cfg.grid_h * cfg.grid_w * c],
        label,
        frame_valid: vec![true; cfg.frames],
        perturbations: Vec::new(),
    };
    for t in 0..cfg.frames {
        for y in 0..cfg.grid_h {
            for x in 0..cfg.grid_w {
                let in_block = label == LABEL_FAKE
                    && (by..by + cfg.artifact_block_h).contains(&y)
                    && (bx..bx + cfg.artifact_block_w).contains(&x);
                for k in 0..c {
                    let mut v = gain * (signature[k] + identity[k] + cfg.template(y, x, k));
                    if in_block && k == art {
                        v += cfg.artifact_strength;
                    }
                    v += cfg.frame_jitter * rng.normal();
                    sample.cell_mut(t, y, x)[k] = v;
                }
                if cfg.clutter_rate > 0.0 && rng.uniform(0.0, 1.0) < cfg.clutter_rate {
                    for v in sample.cell_mut(t, y, x) {
                        *v = rng.normal();
                    }
                }
            }
        }
    }
    sample
}

pub fn gen_split(cfg: &GeneratorConfig, split: Split) -> Vec<SequenceSample> {
    (0..cfg.split_size(split))
        .map(|i| gen_sample(cfg, split, i))
        .collect()
}

/// Clean train/val/test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

pub fn gen_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    Ok(Dataset {
        train: gen_split(cfg, Split::Train),
        val: gen_split(cfg, Split::Val),
        test: gen_split(cfg, Split::Test),
    })
}

/// Replaces `round(m_r · N)` uniformly chosen frames with black (zeros) or
/// background (unit-variance isotropic noise) content and marks them invalid.
pub fn apply_masking(
    s: &SequenceSample,
    kind: PerturbationKind,
    mask_ratio: f64,
    rng: &mut Rng,
) -> Result<SequenceSample> {
    if !kind.is_global_mask() {
        return Err(Error::InvalidArgument(format!(
            "`{kind}` is not a frame-masking kind"
        )));
    }
    let spec = PerturbationSpec {
        kind,
        mask_ratio,
        strength: 1.0,
        seed: rng.seed(),
    };
    spec.validate()?;
    let mut out = s.clone();
    let picked = rng.choose_k(s.frames, affected_frames(mask_ratio, s.frames));
    for &t in &picked {
        match kind {
            PerturbationKind::GlobalMaskBlack => out.frame_mut(t).fill(0.0),
            _ => out.frame_mut(t).iter_mut().for_each(|v| *v = rng.normal()),
        }
        out.frame_valid[t] = false;
    }
    if !picked.is_empty() {
        out.perturbations.push(spec);
    }
    Ok(out)
}

/// Rows of the eye band: starts a quarter of the way down the grid.
pub fn eye_band_rows(grid_h: usize) -> std::ops::Range<usize> {
    let start = grid_h / 4;
    start..(start + (grid_h / 4).max(1)).min(grid_h)
}

/// Patch used by the local blur/noise kinds.
fn random_patch(s: &SequenceSample, rng: &mut Rng) -> (usize, usize, usize, usize) {
    let ph = (s.grid_h / 2).max(1);
    let pw = (s.grid_w / 2).max(1);
    let py = rng.below(s.grid_h - ph + 1);
    let px = rng.below(s.grid_w - pw + 1);
    (py, px, ph, pw)
}

/// Local corruption of `round(m_r · N)` frames. The random stream is derived
/// from `spec.seed`.
pub fn apply_local_perturbation(s: &SequenceSample, spec: &PerturbationSpec) -> Result<SequenceSample> {
    spec.validate()?;
    if spec.kind.is_global_mask() {
        return Err(Error::InvalidArgument(format!(
            "`{}` is not a local perturbation kind",
            spec.kind
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let mut out = s.clone();
    let picked = rng.choose_k(s.frames, affected_frames(spec.mask_ratio, s.frames));
    let (py, px, ph, pw) = random_patch(s, &mut rng);
    for &t in &picked {
        match spec.kind {
            PerturbationKind::SunglassOcclusion => {
                for y in eye_band_rows(s.grid_h) {
                    for x in 0..s.grid_w {
                        out.cell_mut(t, y, x).fill(0.0);
                    }
                }
            }
            PerturbationKind::PartialBlur => {
                if spec.strength == 0.0 {
                    continue;
                }
                for y in py..py + ph {
                    for x in px..px + pw {
                        let smoothed = box_mean(s, t, y, x);
                        for (o, (v, m)) in out
                            .cell_mut(t, y, x)
                            .iter_mut()
                            .zip(s.cell(t, y, x).iter().zip(&smoothed))
                        {
                            *o = (1.0 - spec.strength) * v + spec.strength * m;
                        }
                    }
                }
            }
            PerturbationKind::PartialNoise => {
                if spec.strength == 0.0 {
                    continue;
                }
                for y in py..py + ph {
                    for x in px..px + pw {
                        for v in out.cell_mut(t, y, x) {
                            *v += spec.strength * rng.normal();
                        }
                    }
                }
            }
            PerturbationKind::AdversarialLike => {
                if spec.strength > 0.0 {
                    for v in out.frame_mut(t) {
                        *v += rng.uniform(-spec.strength, spec.strength);
                    }
                }
                out.frame_valid[t] = false;
            }
            PerturbationKind::GlobalMaskBlack | PerturbationKind::GlobalMaskBackground => {
                unreachable!("rejected above")
            }
        }
    }
    if !picked.is_empty() {
        out.perturbations.push(*spec);
    }
    Ok(out)
}

/// Mean over the 3x3 neighbourhood (clipped to the grid) of the original frame.
fn box_mean(s: &SequenceSample, t: usize, y: usize, x: usize) -> Vec<f64> {
    let mut acc = vec![0.0; s.channels];
    let mut n = 0.0;
    for yy in y.saturating_sub(1)..(y + 2).min(s.grid_h) {
        for xx in x.saturating_sub(1)..(x + 2).min(s.grid_w) {
            for (a, v) in acc.iter_mut().zip(s.cell(t, yy, xx)) {
                *a += v;
            }
            n += 1.0;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Dispatches to frame masking or a local perturbation.
pub fn apply_perturbation(s: &SequenceSample, spec: &PerturbationSpec) -> Result<SequenceSample> {
    if spec.kind.is_global_mask() {
        let mut rng = Rng::new(spec.seed);
        apply_masking(s, spec.kind, spec.mask_ratio, &mut rng)
    } else {
        apply_local_perturbation(s, spec)
    }
}

/// Reorders frames so that frame `i` of the result is frame `perm[i]` of `s`.
pub fn permute_frames(s: &SequenceSample, perm: &[usize]) -> Result<SequenceSample> {
    let mut seen = vec![false; s.frames];
    if perm.len() != s.frames || perm.iter().any(|&p| p >= s.frames || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidArgument("not a permutation of the frames".into()));
    }
    let mut out = s.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.frame_mut(i).copy_from_slice(s.frame(p));
        out.frame_valid[i] = s.frame_valid[p];
    }
    Ok(out)
}

pub fn shuffle_frames(s: &SequenceSample, rng: &mut Rng) -> SequenceSample {
    let perm = rng.permutation(s.frames);
    permute_frames(s, &perm).expect("generated permutation is valid")
}

const DUMP_MAGIC: &[u8; 8] = b"OFGCNDS1";

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    split: String,
    count: usize,
    config: GeneratorConfig,
}

/// Writes a split: magic, one JSON header line, then per sample
/// `label: u32 LE`, the frame-validity bitmap (`ceil(N/8)` bytes, bit `t % 8`
/// of byte `t / 8`), and the raw tensor as `f64` little-endian.
pub fn write_dump(path: &Path, cfg: &GeneratorConfig, split: Split, samples: &[SequenceSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    let header = DumpHeader {
        split: split.name().to_string(),
        count: samples.len(),
        config: cfg.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for s in samples {
        w.write_all(&(s.label as u32).to_le_bytes())?;
        let mut bitmap = vec![0u8; s.frames.div_ceil(8)];
        for (t, &v) in s.frame_valid.iter().enumerate() {
            if v {
                bitmap[t / 8] |= 1 << (t % 8);
            }
        }
        w.write_all(&bitmap)?;
        for v in &s.raw {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a split written by [`write_dump`]. Perturbation records are not part
/// of the format and come back empty.
pub fn read_dump(path: &Path) -> Result<(GeneratorConfig, Vec<SequenceSample>)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: DumpHeader = serde_json::from_str(line.trim_end()).map_err(|e| bad(&e.to_string()))?;
    let cfg = header.config;
    let values = cfg.frames * cfg.grid_h * cfg.grid_w * cfg.raw_channels;
    let mut samples = Vec::with_capacity(header.count);
    for _ in 0..header.count {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let label = u32::from_le_bytes(word) as usize;
        let mut bitmap = vec![0u8; cfg.frames.div_ceil(8)];
        r.read_exact(&mut bitmap)?;
        let frame_valid = (0..cfg.frames).map(|t| bitmap[t / 8] >> (t % 8) & 1 == 1).collect();
        let mut raw = Vec::with_capacity(values);
        let mut buf = [0u8; 8];
        for _ in 0..values {
            r.read_exact(&mut buf)?;
            raw.push(f64::from_le_bytes(buf));
        }
        samples.push(SequenceSample {
            frames: cfg.frames,
            grid_h: cfg.grid_h,
            grid_w: cfg.grid_w,
            channels: cfg.raw_channels,
            raw,
            label,
            frame_valid,
            perturbations: Vec::new(),
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad("trailing bytes after last record"));
    }
    Ok((cfg, samples))
}

//! Stage-1 (mask/point-guided teacher) and stage-2 (point-guided student
//! distilled from the frozen teacher) training loops.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasynth::TrainingPair;
use crate::error::{Error, Result};
use crate::latent::{pool_pointmap, weight_map, LatentCodec, WeightMap};
use crate::losses::{noisy_latent, velocity_target, LossBreakdown, LossSpec, Reduction, StopGrad};
use crate::pointmap::{rasterize_points, sample_points_from_mask, DensityMode, PointCount, SamplingPolicy};
use crate::rng::SeededRng;
use crate::tensor::{gaussian_noise, LatentTensor};

use super::model::{backward, ArchConfig, DenoiserParams, Example, ModelInput};
use super::optim::{adamw_step, AdamState, AdamWConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceKind {
    /// Mask latent with the masked video (stage 1) or object-free source (stage 2).
    Mask,
    /// Stored point map with the inpainted video (stage 1).
    Points,
    Sparse,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage1Mix {
    pub mask: f64,
    pub point: f64,
}

impl Default for Stage1Mix {
    fn default() -> Self {
        Self { mask: 0.8, point: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage2Mix {
    pub mask: f64,
    pub sparse: f64,
    pub dense: f64,
}

impl Default for Stage2Mix {
    fn default() -> Self {
        Self {
            mask: 0.1,
            sparse: 0.3,
            dense: 0.6,
        }
    }
}

fn check_mix(parts: &[f64]) -> Result<()> {
    let sum: f64 = parts.iter().sum();
    if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("guidance mix {parts:?} must be probabilities summing to 1")));
    }
    Ok(())
}

pub fn draw_stage1(mix: &Stage1Mix, rng: &mut SeededRng) -> GuidanceKind {
    if rng.random::<f64>() < mix.mask {
        GuidanceKind::Mask
    } else {
        GuidanceKind::Points
    }
}

pub fn draw_stage2(mix: &Stage2Mix, rng: &mut SeededRng) -> GuidanceKind {
    let u: f64 = rng.random();
    if u < mix.mask {
        GuidanceKind::Mask
    } else if u < mix.mask + mix.sparse {
        GuidanceKind::Sparse
    } else {
        GuidanceKind::Dense
    }
}

/// Sparse prompts: one to three positives per keyframe.
pub fn sparse_policy() -> SamplingPolicy {
    SamplingPolicy {
        mode: DensityMode::VariableDensity,
        keyframe_interval: 4,
        positives: PointCount::Range { min: 1, max: 3 },
        negatives: PointCount::Range { min: 0, max: 2 },
        ..SamplingPolicy::default()
    }
}

/// Dense prompts: positives on half of the 8x8 cells the mask touches.
pub fn dense_policy() -> SamplingPolicy {
    SamplingPolicy {
        mode: DensityMode::VariableDensity,
        keyframe_interval: 4,
        positives: PointCount::MaskCoverage { fraction: 0.5, min: 4 },
        negatives: PointCount::Range { min: 1, max: 3 },
        ..SamplingPolicy::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: u8,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub lambda1: f64,
    pub lambda2: f64,
    pub reduction: Reduction,
    pub weight_etd: bool,
    pub stage1_mix: Stage1Mix,
    pub stage2_mix: Stage2Mix,
    pub sparse_policy: SamplingPolicy,
    pub dense_policy: SamplingPolicy,
    pub arch: ArchConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            steps: 600,
            batch_size: 8,
            optimizer: AdamWConfig::default(),
            lambda1: 0.0,
            lambda2: 0.0,
            reduction: Reduction::Mean,
            weight_etd: false,
            stage1_mix: Stage1Mix::default(),
            stage2_mix: Stage2Mix::default(),
            sparse_policy: sparse_policy(),
            dense_policy: dense_policy(),
            arch: ArchConfig::default(),
            seed: 0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            optimizer: AdamWConfig {
                lr: 1e-3,
                ..AdamWConfig::default()
            },
            lambda1: crate::losses::DEFAULT_LAMBDA1,
            lambda2: crate::losses::DEFAULT_LAMBDA2,
            ..Self::stage1()
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            reduction: self.reduction,
            weight_etd: self.weight_etd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.stage) {
            return Err(Error::Validation(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Validation("loss weights must be non-negative".into()));
        }
        check_mix(&[self.stage1_mix.mask, self.stage1_mix.point])?;
        check_mix(&[self.stage2_mix.mask, self.stage2_mix.sparse, self.stage2_mix.dense])?;
        self.sparse_policy.validate()?;
        self.dense_policy.validate()?;
        self.optimizer.validate()?;
        self.arch.validate()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceCounts {
    pub mask: u64,
    pub points: u64,
    pub sparse: u64,
    pub dense: u64,
}

impl GuidanceCounts {
    fn add(&mut self, k: GuidanceKind) {
        match k {
            GuidanceKind::Mask => self.mask += 1,
            GuidanceKind::Points => self.points += 1,
            GuidanceKind::Sparse => self.sparse += 1,
            GuidanceKind::Dense => self.dense += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.mask + self.points + self.sparse + self.dense
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub guidance: GuidanceCounts,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub optimizer: AdamState,
    pub log: Vec<StepLog>,
    pub counts: GuidanceCounts,
}

pub fn write_log_jsonl(path: &Path, log: &[StepLog]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for entry in log {
        let line = serde_json::to_string(entry).map_err(|e| Error::json("training log", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Latents that do not depend on the per-step draw.
struct Encoded {
    z: LatentTensor,
    z_masked: LatentTensor,
    z_source: LatentTensor,
    mask_latent: LatentTensor,
    mask_weights: WeightMap,
    z_points: LatentTensor,
    tag: usize,
}

fn encode_pairs(pairs: &[TrainingPair], codec: &LatentCodec, stage: u8, num_tags: usize) -> Result<Vec<Encoded>> {
    if pairs.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    pairs
        .iter()
        .map(|p| {
            if p.stage != stage {
                return Err(Error::Validation(format!(
                    "record {} belongs to stage {}, trainer expects {stage}",
                    p.id, p.stage
                )));
            }
            if p.class_tag >= num_tags {
                return Err(Error::Validation(format!(
                    "record {} has tag {} but the model knows {num_tags}",
                    p.id, p.class_tag
                )));
            }
            let mask_video = p.mask.to_video(codec.channels())?;
            Ok(Encoded {
                z: codec.encode_video(&p.target)?,
                z_masked: codec.encode_video(&p.masked)?,
                z_source: codec.encode_video(&p.source)?,
                mask_latent: codec.encode_video(&mask_video)?,
                mask_weights: weight_map(&pool_pointmap(&mask_video)?)?,
                z_points: codec.encode_video(&p.guidance)?,
                tag: p.class_tag,
            })
        })
        .collect()
}

fn noised(z: &LatentTensor, rng: &mut SeededRng) -> Result<(LatentTensor, f64, LatentTensor)> {
    let t: f64 = rng.random();
    let eps = gaussian_noise(z.dims(), rng)?;
    Ok((noisy_latent(z, &eps, t)?, t, velocity_target(z, &eps)?))
}

/// Online point prompt for one stage-2 example.
fn point_guidance(
    pair: &TrainingPair,
    policy: &SamplingPolicy,
    codec: &LatentCodec,
    rng: &mut SeededRng,
) -> Result<(LatentTensor, WeightMap)> {
    let ann = sample_points_from_mask(&pair.mask, policy, rng)?;
    let map = rasterize_points(&ann, pair.target.dims().with_channels(codec.channels()))?;
    Ok((codec.encode_video(&map)?, weight_map(&pool_pointmap(&map)?)?))
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::Numerical { reason, .. } => Error::Numerical { step, reason },
        other => other,
    }
}

fn optimise<F>(
    cfg: &TrainConfig,
    mut params: DenoiserParams,
    spec: LossSpec,
    mut make_batch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &mut SeededRng, &mut GuidanceCounts) -> Result<Vec<Example>>,
{
    let root = SeededRng::new(cfg.seed);
    let mut state = AdamState::new(params.len());
    let mut log = Vec::with_capacity(cfg.steps);
    let mut counts = GuidanceCounts::default();
    for step in 0..cfg.steps {
        let mut rng = root.substream_indexed("step", step as u64);
        let mut step_counts = GuidanceCounts::default();
        let batch = make_batch(step, &mut rng, &mut step_counts)?;
        let (loss, grads) = backward(&params, &batch, &spec).map_err(|e| with_step(e, step))?;
        adamw_step(params.values_mut(), &grads, &mut state, &cfg.optimizer).map_err(|e| with_step(e, step))?;
        params.round_to_storage();
        for (k, n) in [
            (GuidanceKind::Mask, step_counts.mask),
            (GuidanceKind::Points, step_counts.points),
            (GuidanceKind::Sparse, step_counts.sparse),
            (GuidanceKind::Dense, step_counts.dense),
        ] {
            for _ in 0..n {
                counts.add(k);
            }
        }
        log.push(StepLog {
            step,
            lr: cfg.optimizer.lr,
            loss,
            guidance: step_counts,
        });
    }
    Ok(TrainOutcome {
        params,
        optimizer: state,
        log,
        counts,
    })
}

/// Initial weights for a stage-1 run.
pub fn initial_params(cfg: &TrainConfig) -> Result<DenoiserParams> {
    DenoiserParams::init(cfg.arch, &mut SeededRng::new(cfg.seed).substream("init"))
}

/// Trains the mask-capable teacher with flow matching only. Each example
/// is mask-guided (masked video + mask latent) or point-guided (inpainted
/// video + point-map latent) per the stage-1 mix.
pub fn train_stage1(cfg: &TrainConfig, pairs: &[TrainingPair], codec: &LatentCodec) -> Result<TrainOutcome> {
    cfg.validate()?;
    let enc = encode_pairs(pairs, codec, 1, cfg.arch.num_tags)?;
    let spec = LossSpec {
        lambda1: 0.0,
        lambda2: 0.0,
        ..cfg.loss_spec()
    };
    optimise(cfg, initial_params(cfg)?, spec, |_, rng, counts| {
        (0..cfg.batch_size)
            .map(|_| {
                let e = &enc[rng.random_range(0..enc.len())];
                let kind = draw_stage1(&cfg.stage1_mix, rng);
                counts.add(kind);
                let (cond, guidance) = match kind {
                    GuidanceKind::Mask => (&e.z_masked, &e.mask_latent),
                    _ => (&e.z_source, &e.z_points),
                };
                let (z_t, t, target) = noised(&e.z, rng)?;
                Ok(Example {
                    cond: cond.clone(),
                    guidance: guidance.clone(),
                    z_t,
                    t,
                    tag: e.tag,
                    target,
                    teacher: None,
                    weights: None,
                })
            })
            .collect()
    })
}

/// One stage-2 example: the student sees the object-free source with the
/// drawn guidance; the frozen teacher sees the masked video and mask on the
/// same noisy latent and timestep.
fn stage2_example(
    cfg: &TrainConfig,
    pair: &TrainingPair,
    e: &Encoded,
    teacher: &DenoiserParams,
    codec: &LatentCodec,
    kind: GuidanceKind,
    rng: &mut SeededRng,
) -> Result<Example> {
    let (guidance, weights) = match kind {
        GuidanceKind::Mask => (e.mask_latent.clone(), e.mask_weights.clone()),
        GuidanceKind::Sparse => point_guidance(pair, &cfg.sparse_policy, codec, rng)?,
        _ => point_guidance(pair, &cfg.dense_policy, codec, rng)?,
    };
    let (z_t, t, target) = noised(&e.z, rng)?;
    let v_teacher = teacher.forward(&ModelInput {
        cond: &e.z_masked,
        guidance: &e.mask_latent,
        z_t: &z_t,
        t,
        tag: e.tag,
    })?;
    Ok(Example {
        cond: e.z_source.clone(),
        guidance,
        z_t,
        t,
        tag: e.tag,
        target,
        teacher: Some(StopGrad::new(v_teacher)),
        weights: Some(weights),
    })
}

/// Distils a point-guided student from the frozen teacher. The student
/// starts as a copy of the teacher; all of its weights are updated.
pub fn train_stage2(
    cfg: &TrainConfig,
    pairs: &[TrainingPair],
    codec: &LatentCodec,
    teacher: &DenoiserParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if teacher.arch() != cfg.arch {
        return Err(Error::Validation(format!(
            "teacher architecture {:?} differs from configured student {:?}",
            teacher.arch(),
            cfg.arch
        )));
    }
    let enc = encode_pairs(pairs, codec, 2, cfg.arch.num_tags)?;
    optimise(cfg, teacher.clone(), cfg.loss_spec(), |_, rng, counts| {
        (0..cfg.batch_size)
            .map(|_| {
                let i = rng.random_range(0..enc.len());
                let kind = draw_stage2(&cfg.stage2_mix, rng);
                counts.add(kind);
                stage2_example(cfg, &pairs[i], &enc[i], teacher, codec, kind, rng)
            })
            .collect()
    })
}

/// Held-out mean squared disagreement `mean ||v_S - v_T||^2` between a
/// student and the teacher, over `draws` stage-2 examples per record drawn
/// from a fixed seed.
pub fn teacher_gap(
    student: &DenoiserParams,
    teacher: &DenoiserParams,
    pairs: &[TrainingPair],
    codec: &LatentCodec,
    cfg: &TrainConfig,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let enc = encode_pairs(pairs, codec, 2, cfg.arch.num_tags)?;
    let root = SeededRng::new(seed);
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, (pair, e)) in pairs.iter().zip(&enc).enumerate() {
        let mut rng = root.substream_indexed("gap", i as u64);
        for _ in 0..draws {
            let kind = draw_stage2(&cfg.stage2_mix, &mut rng);
            let ex = stage2_example(cfg, pair, e, teacher, codec, kind, &mut rng)?;
            let v_s = student.forward(&ex.input())?;
            let v_t = ex.teacher.as_ref().expect("stage-2 examples carry the teacher").value();
            sum += v_s
                .data()
                .iter()
                .zip(v_t.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                / v_s.data().len() as f64;
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasynth::{build_dataset, DatasetConfig};

    fn data(stage: u8) -> Vec<TrainingPair> {
        let cfg = DatasetConfig {
            count: 4,
            stage,
            frames: 5,
            height: 32,
            width: 32,
            inpaint_iterations: 100,
            ..Default::default()
        };
        build_dataset(&cfg, &SamplingPolicy::default(), &SeededRng::new(21)).unwrap().pairs
    }

    fn quick(stage: u8, steps: usize) -> TrainConfig {
        let base = if stage == 1 { TrainConfig::stage1() } else { TrainConfig::stage2() };
        TrainConfig {
            steps,
            batch_size: 2,
            arch: ArchConfig {
                width: 8,
                ..ArchConfig::default()
            },
            seed: 4,
            ..base
        }
    }

    #[test]
    fn zero_steps_returns_initialisation() {
        let codec = LatentCodec::from_seed(3, 1).unwrap();
        let cfg = quick(1, 0);
        let out = train_stage1(&cfg, &data(1), &codec).unwrap();
        assert_eq!(out.params, initial_params(&cfg).unwrap());
        assert!(out.log.is_empty());
    }

    #[test]
    fn pure_mask_mix_never_draws_points() {
        let codec = LatentCodec::from_seed(3, 1).unwrap();
        let cfg = TrainConfig {
            stage1_mix: Stage1Mix { mask: 1.0, point: 0.0 },
            ..quick(1, 5)
        };
        let out = train_stage1(&cfg, &data(1), &codec).unwrap();
        assert_eq!(out.counts.points, 0);
        assert_eq!(out.counts.mask, 10);
    }

    #[test]
    fn stage1_is_deterministic_and_rejects_bad_input() {
        let codec = LatentCodec::from_seed(3, 1).unwrap();
        let pairs = data(1);
        let cfg = quick(1, 3);
        let a = train_stage1(&cfg, &pairs, &codec).unwrap();
        let b = train_stage1(&cfg, &pairs, &codec).unwrap();
        assert_eq!(a.params, b.params);
        assert!(train_stage1(&cfg, &[], &codec).is_err());
        assert!(train_stage1(&cfg, &data(2), &codec).is_err());
        let bad = TrainConfig {
            stage1_mix: Stage1Mix { mask: 0.7, point: 0.2 },
            ..cfg
        };
        assert!(train_stage1(&bad, &pairs, &codec).is_err());
    }

    #[test]
    fn stage2_leaves_teacher_untouched() {
        let codec = LatentCodec::from_seed(3, 1).unwrap();
        let cfg = quick(2, 3);
        let teacher = initial_params(&cfg).unwrap();
        let before = teacher.fingerprint();
        let out = train_stage2(&cfg, &data(2), &codec, &teacher).unwrap();
        assert_eq!(teacher.fingerprint(), before);
        assert_ne!(out.params.fingerprint(), before);
        assert!(out.log.iter().all(|l| l.loss.l_etd >= 0.0 && l.loss.l_pa >= 0.0));
        let wrong = TrainConfig {
            arch: ArchConfig::default(),
            ..cfg
        };
        assert!(train_stage2(&wrong, &data(2), &codec, &teacher).is_err());
    }

    #[test]
    fn stage2_mix_frequencies() {
        let mix = Stage2Mix::default();
        let mut rng = SeededRng::new(77);
        let mut c = GuidanceCounts::default();
        for _ in 0..10_000 {
            c.add(draw_stage2(&mix, &mut rng));
        }
        let f = |n: u64| n as f64 / 10_000.0;
        assert!((f(c.mask) - 0.1).abs() < 0.02);
        assert!((f(c.sparse) - 0.3).abs() < 0.02);
        assert!((f(c.dense) - 0.6).abs() < 0.02);
    }

    #[test]
    fn log_is_json_lines() {
        let codec = LatentCodec::from_seed(3, 1).unwrap();
        let out = train_stage1(&quick(1, 2), &data(1), &codec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        write_log_jsonl(&p, &out.log).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["step"], 1);
        assert!(v["l_fm"].as_f64().unwrap() > 0.0);
    }
}

//! Training-pair assembly and the on-disk dataset layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/records/<id>/{target,mask,masked,source,guidance}.p2it
//! <dir>/records/<id>/annotations.json
//! <dir>/records/<id>/provenance.json
//! ```
//!
//! `source` is the inpainted video for stage 1 and the object-free video
//! for stage 2. `mask` is stored as a one-channel video.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_tensor, write_tensor};
use crate::pointmap::{annotations_from_json, annotations_to_json, sample_prompt, BinaryMask, PointAnnotation, Prompt, SamplingPolicy};
use crate::rng::SeededRng;
use crate::tensor::{Dims, VideoTensor};

use super::inpaint::{corrupt_inside_mask, masked_video, traditional_inpaint, DEFAULT_INPAINT_ITERATIONS};
use super::scene::{area_fraction, random_scene, scale_filter, synth_scene, SceneSpec, SCALE_HIGH, SCALE_LOW};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceType {
    Points,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub stage: u8,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub inpaint_iterations: usize,
    /// Amplitude of the remover-flaw noise applied inside the mask of
    /// stage-2 sources; 0 gives exact backgrounds.
    pub corruption: f32,
    pub area_low: f64,
    pub area_high: f64,
    /// Scene draws per record before giving up.
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 8,
            stage: 2,
            frames: 9,
            height: 64,
            width: 64,
            num_classes: 4,
            inpaint_iterations: DEFAULT_INPAINT_ITERATIONS,
            corruption: 0.0,
            area_low: SCALE_LOW,
            area_high: SCALE_HIGH,
            max_attempts: 16,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Validation("dataset count must be >= 1".into()));
        }
        if !(1..=2).contains(&self.stage) {
            return Err(Error::Validation(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.num_classes == 0 || self.max_attempts == 0 {
            return Err(Error::Validation("need at least one class and one attempt".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption) {
            return Err(Error::Validation("corruption amplitude outside [0, 1]".into()));
        }
        VideoTensor::validate_dims(Dims::new(self.frames, self.height, self.width, 3))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub index: usize,
    pub record_seed: u64,
    pub attempts: usize,
    pub scene: SceneSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub stage: u8,
    pub guidance_type: GuidanceType,
    pub class_tag: usize,
    /// Video with the object (`x`).
    pub target: VideoTensor,
    pub mask: BinaryMask,
    /// `x * (1 - m)`.
    pub masked: VideoTensor,
    /// Inpainted video (stage 1) or object-free video (stage 2).
    pub source: VideoTensor,
    /// Rasterised point map, or the mask for mask-guided records.
    pub guidance: VideoTensor,
    pub annotations: Vec<PointAnnotation>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub stage: u8,
    pub guidance_type: GuidanceType,
    pub area_fraction: f64,
    pub class_tag: usize,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub master_seed: u64,
    /// Master seed for the latent codec this data is meant to be encoded with.
    pub codec_seed: u64,
    pub stage: u8,
    pub config: DatasetConfig,
    pub policy: SamplingPolicy,
    pub records: Vec<RecordEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub pairs: Vec<TrainingPair>,
}

/// Re-renders the scene without objects. Pixels outside `m` must match `x`
/// exactly, which verifies that `x` was rendered from `spec`.
pub fn remove_object(x: &VideoTensor, m: &BinaryMask, spec: &SceneSpec) -> Result<VideoTensor> {
    let (bg, _, _) = synth_scene(&spec.without_objects())?;
    if bg.dims() != x.dims() {
        return Err(Error::shape(&x.dims().as_vec(), &bg.dims().as_vec()));
    }
    let ch = x.dims().channels;
    for (i, (a, b)) in x.data().iter().zip(bg.data()).enumerate() {
        if !m.data()[i / ch] && a != b {
            return Err(Error::Spec("video does not match the scene outside its mask".into()));
        }
    }
    Ok(bg)
}

fn build_record(cfg: &DatasetConfig, policy: &SamplingPolicy, master: &SeededRng, index: usize) -> Result<TrainingPair> {
    let rng = master.substream_indexed("record", index as u64);
    let mut scene_rng = rng.substream("scene");
    let tag = index % cfg.num_classes;
    let mut found = None;
    for attempt in 1..=cfg.max_attempts {
        let spec = random_scene(tag, cfg.frames, cfg.height, cfg.width, &mut scene_rng)?;
        let (x, m, _) = synth_scene(&spec)?;
        if scale_filter(&m, cfg.area_low, cfg.area_high) {
            found = Some((spec, x, m, attempt));
            break;
        }
    }
    let (spec, x, m, attempts) = found.ok_or_else(|| {
        Error::Generation(format!("record {index}: no scene passed the scale filter in {} attempts", cfg.max_attempts))
    })?;
    let masked = masked_video(&x, &m)?;
    let source = if cfg.stage == 1 {
        traditional_inpaint(&x, &m, cfg.inpaint_iterations)?
    } else {
        let clean = remove_object(&x, &m, &spec)?;
        corrupt_inside_mask(&clean, &m, cfg.corruption, &mut rng.substream("corruption"))?
    };
    let prompt = sample_prompt(&m, policy, &mut rng.substream("prompt"))?;
    let guidance = prompt.guidance_video(&m, 3)?;
    let guidance_type = match prompt {
        Prompt::Mask => GuidanceType::Mask,
        Prompt::Points(_) => GuidanceType::Points,
    };
    Ok(TrainingPair {
        id: format!("r{index:05}"),
        stage: cfg.stage,
        guidance_type,
        class_tag: tag,
        target: x,
        mask: m,
        masked,
        source,
        guidance,
        annotations: prompt.annotations().to_vec(),
        provenance: Provenance {
            index,
            record_seed: rng.seed(),
            attempts,
            scene: spec,
        },
    })
}

const FILES: [&str; 5] = ["target", "mask", "masked", "source", "guidance"];

fn entry(pair: &TrainingPair) -> RecordEntry {
    let mut files: BTreeMap<String, String> = FILES
        .iter()
        .map(|f| (f.to_string(), format!("records/{}/{f}.p2it", pair.id)))
        .collect();
    files.insert("annotations".into(), format!("records/{}/annotations.json", pair.id));
    files.insert("provenance".into(), format!("records/{}/provenance.json", pair.id));
    RecordEntry {
        id: pair.id.clone(),
        stage: pair.stage,
        guidance_type: pair.guidance_type,
        area_fraction: area_fraction(&pair.mask),
        class_tag: pair.class_tag,
        files,
    }
}

/// Generates `cfg.count` records. Records are built in parallel from
/// per-record substreams and assembled in index order.
pub fn build_dataset(cfg: &DatasetConfig, policy: &SamplingPolicy, rng: &SeededRng) -> Result<Dataset> {
    cfg.validate()?;
    policy.validate()?;
    let pairs = (0..cfg.count)
        .into_par_iter()
        .map(|i| build_record(cfg, policy, rng, i))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        dataset_id: format!("synth-s{}-{:016x}-n{}", cfg.stage, rng.seed(), cfg.count),
        master_seed: rng.seed(),
        codec_seed: rng.seed(),
        stage: cfg.stage,
        config: cfg.clone(),
        policy: policy.clone(),
        records: pairs.iter().map(entry).collect(),
    };
    Ok(Dataset { manifest, pairs })
}

fn write_video(path: &Path, v: &VideoTensor) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor(&mut w, &v.to_tensor())?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_video(path: &Path) -> Result<VideoTensor> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    VideoTensor::from_tensor(read_tensor(&mut BufReader::new(file))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    for (pair, rec) in ds.pairs.iter().zip(&ds.manifest.records) {
        let rdir = dir.join("records").join(&pair.id);
        fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
        let videos = [
            &pair.target,
            &pair.mask.to_video(1)?,
            &pair.masked,
            &pair.source,
            &pair.guidance,
        ];
        for (name, v) in FILES.iter().zip(videos) {
            write_video(&dir.join(&rec.files[*name]), v)?;
        }
        let ann = dir.join(&rec.files["annotations"]);
        fs::write(&ann, annotations_to_json(&pair.annotations)? + "\n").map_err(|e| Error::io(&ann, e))?;
        write_json(&dir.join(&rec.files["provenance"]), &pair.provenance)?;
    }
    write_json(&dir.join("manifest.json"), &ds.manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    read_json(&dir.join("manifest.json"))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut pairs = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let file = |name: &str| -> Result<std::path::PathBuf> {
            rec.files
                .get(name)
                .map(|f| dir.join(f))
                .ok_or_else(|| Error::Validation(format!("record {} lacks {name}", rec.id)))
        };
        let mask = BinaryMask::from_video(&read_video(&file("mask")?)?)?;
        let frac = area_fraction(&mask);
        if !(manifest.config.area_low..=manifest.config.area_high).contains(&frac) {
            return Err(Error::Validation(format!("record {} area fraction {frac} outside the admission band", rec.id)));
        }
        let ann_path = file("annotations")?;
        let text = fs::read_to_string(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
        let pair = TrainingPair {
            id: rec.id.clone(),
            stage: rec.stage,
            guidance_type: rec.guidance_type,
            class_tag: rec.class_tag,
            target: read_video(&file("target")?)?,
            mask,
            masked: read_video(&file("masked")?)?,
            source: read_video(&file("source")?)?,
            guidance: read_video(&file("guidance")?)?,
            annotations: annotations_from_json(&text)?,
            provenance: read_json(&file("provenance")?)?,
        };
        let d = pair.target.dims();
        for v in [&pair.masked, &pair.source, &pair.guidance] {
            if v.dims() != d {
                return Err(Error::shape(&d.as_vec(), &v.dims().as_vec()));
            }
        }
        pairs.push(pair);
    }
    Ok(Dataset { manifest, pairs })
}

//! Point-prompted insertion benchmark over held-out records and the
//! density / point-size ablation grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasynth::{composite_background, TrainingPair};
use crate::denoiser::{sample, DenoiserParams};
use crate::error::{Error, Result};
use crate::latent::LatentCodec;
use crate::pointmap::{
    convex_hull_mask, dilate_and_feather, rasterize_points, sample_points_from_mask, BinaryMask, DensityMode, PointAnnotation,
    SamplingPolicy,
};
use crate::rng::SeededRng;
use crate::tensor::VideoTensor;

use super::detect::{detect_inserted_region, point_accuracy, DEFAULT_MIN_BLOB, DEFAULT_THRESHOLD};
use super::ewarp::{ewarp, Flows};
use super::region::{psnr_from_mse, psnr_serde, region_metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub mode: DensityMode,
    pub point_size: usize,
    /// Guide with the convex hull of the positive clicks instead of the
    /// point map (mask-only baseline adapter).
    #[serde(default)]
    pub hull: bool,
}

impl GridCell {
    pub fn new(mode: DensityMode, point_size: usize) -> Self {
        Self {
            mode,
            point_size,
            hull: false,
        }
    }

    pub fn label(&self) -> String {
        let mode = match self.mode {
            DensityMode::FirstFrameOnly => "first_frame_only",
            DensityMode::FixedDensity => "fixed_density",
            DensityMode::VariableDensity => "variable_density",
            DensityMode::FullMask => "full_mask",
        };
        format!("{mode}/{}{}", self.point_size, if self.hull { "/hull" } else { "" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Base prompt policy; each cell overrides mode and point size.
    pub policy: SamplingPolicy,
    pub dilation_radius: usize,
    pub feather: usize,
    pub threshold: f32,
    pub min_blob: usize,
    pub sampler_steps: usize,
    pub composite: bool,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            policy: SamplingPolicy::default(),
            dilation_radius: 2,
            feather: 4,
            threshold: DEFAULT_THRESHOLD,
            min_blob: DEFAULT_MIN_BLOB,
            sampler_steps: 20,
            composite: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub record_id: String,
    pub acc_pos: f64,
    pub acc_neg: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    pub ewarp: f64,
}

/// Means over records. PSNR is computed from the mean MSE so that exact
/// matches on some records do not make the aggregate infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub records: usize,
    pub acc_pos: f64,
    pub acc_neg: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    pub ewarp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cell: GridCell,
    pub rows: Vec<RecordRow>,
    pub mean: Aggregate,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(rows: &[RecordRow]) -> Aggregate {
    let mse = mean(rows.iter().map(|r| r.mse)).unwrap_or(0.0);
    Aggregate {
        records: rows.len(),
        acc_pos: mean(rows.iter().map(|r| r.acc_pos)).unwrap_or(0.0),
        acc_neg: mean(rows.iter().filter_map(|r| r.acc_neg)),
        mse,
        mae: mean(rows.iter().map(|r| r.mae)).unwrap_or(0.0),
        psnr: psnr_from_mse(mse),
        ssim: mean(rows.iter().map(|r| r.ssim)).unwrap_or(0.0),
        ewarp: mean(rows.iter().map(|r| r.ewarp)).unwrap_or(0.0),
    }
}

/// One generated insertion.
#[derive(Debug, Clone)]
pub struct Insertion {
    pub generated: VideoTensor,
    pub output: VideoTensor,
    pub alpha: VideoTensor,
}

/// Samples a video from the model and composites the source background
/// outside the dilated, feathered guidance.
pub fn insert(
    params: &DenoiserParams,
    codec: &LatentCodec,
    source: &VideoTensor,
    guidance: &VideoTensor,
    tag: usize,
    cfg: &BenchConfig,
    rng: &mut SeededRng,
) -> Result<Insertion> {
    let cond = codec.encode_video(source)?;
    let z_guidance = codec.encode_video(guidance)?;
    let z = sample(params, &cond, &z_guidance, tag, cfg.sampler_steps, rng)?;
    let generated = codec.decode_latent(&z)?;
    let alpha = dilate_and_feather(guidance, cfg.dilation_radius, cfg.feather)?;
    let output = if cfg.composite {
        composite_background(&generated, source, &alpha)?
    } else {
        generated.clone()
    };
    Ok(Insertion { generated, output, alpha })
}

fn cell_policy(base: &SamplingPolicy, cell: &GridCell) -> SamplingPolicy {
    SamplingPolicy {
        mode: cell.mode,
        point_size: cell.point_size,
        ..base.clone()
    }
}

/// Prompt clicks for scoring and the guidance video handed to the model.
fn cell_guidance(pair: &TrainingPair, cell: &GridCell, cfg: &BenchConfig, index: usize) -> Result<(Vec<PointAnnotation>, VideoTensor)> {
    let root = SeededRng::new(cfg.seed);
    let mut rng = root.substream_indexed("bench-prompt", index as u64);
    let ch = pair.source.dims().channels;
    let d = pair.source.dims();
    if cell.mode == DensityMode::FullMask {
        // Clicks are still drawn so the mask-guided output can be scored.
        let scoring = SamplingPolicy {
            mode: DensityMode::FixedDensity,
            ..cell_policy(&cfg.policy, cell)
        };
        let ann = sample_points_from_mask(&pair.mask, &scoring, &mut rng)?;
        return Ok((ann, pair.mask.to_video(ch)?));
    }
    let ann = sample_points_from_mask(&pair.mask, &cell_policy(&cfg.policy, cell), &mut rng)?;
    let guidance = if cell.hull {
        convex_hull_mask(&ann, d.frames, d.height, d.width)?.to_video(ch)?
    } else {
        rasterize_points(&ann, d)?
    };
    Ok((ann, guidance))
}

/// Pixel-metric region: everything outside the ground-truth mask dilated
/// by radius + feather.
pub fn background_region(mask: &BinaryMask, cfg: &BenchConfig) -> BinaryMask {
    mask.dilate(cfg.dilation_radius + cfg.feather).complement()
}

pub fn evaluate_record(
    pair: &TrainingPair,
    params: &DenoiserParams,
    codec: &LatentCodec,
    cell: &GridCell,
    cfg: &BenchConfig,
    index: usize,
) -> Result<RecordRow> {
    let (ann, guidance) = cell_guidance(pair, cell, cfg, index)?;
    let mut noise = SeededRng::new(cfg.seed).substream_indexed("bench-noise", index as u64);
    let ins = insert(params, codec, &pair.source, &guidance, pair.class_tag, cfg, &mut noise)?;
    let detected = detect_inserted_region(&ins.output, &pair.source, cfg.threshold, cfg.min_blob)?;
    let acc = point_accuracy(&ann, &detected)?;
    let region = background_region(&pair.mask, cfg);
    if region.is_empty() {
        return Err(Error::Validation(format!("record {} has no background region", pair.id)));
    }
    let m = region_metrics(&ins.output, &pair.source, &region)?;
    Ok(RecordRow {
        record_id: pair.id.clone(),
        acc_pos: acc.acc_pos,
        acc_neg: acc.acc_neg,
        mse: m.mse,
        mae: m.mae,
        psnr: m.psnr,
        ssim: m.ssim,
        ewarp: ewarp(&ins.output, &Flows::Estimate)?,
    })
}

/// Evaluates every record under every grid cell. Records run in parallel;
/// rows keep record order.
pub fn run_pointbench(
    pairs: &[TrainingPair],
    params: &DenoiserParams,
    codec: &LatentCodec,
    grid: &[GridCell],
    cfg: &BenchConfig,
) -> Result<Vec<EvalReport>> {
    if pairs.is_empty() {
        return Err(Error::Validation("no records to evaluate".into()));
    }
    grid.iter()
        .map(|cell| {
            let rows = pairs
                .par_iter()
                .enumerate()
                .map(|(i, p)| evaluate_record(p, params, codec, cell, cfg, i))
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalReport {
                cell: *cell,
                mean: aggregate(&rows),
                rows,
            })
        })
        .collect()
}

/// Cartesian product of density modes and point sizes.
pub fn ablation_grid(modes: &[DensityMode], sizes: &[usize]) -> Vec<GridCell> {
    modes
        .iter()
        .flat_map(|&m| sizes.iter().map(move |&s| GridCell::new(m, s)))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() { "inf".into() } else { format!("{v:.2}") }
}

/// Aligned text table with one line per report.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let header = ["cell", "n", "acc_pos", "acc_neg", "mse", "mae", "psnr", "ssim", "ewarp"];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.mean;
            vec![
                r.cell.label(),
                m.records.to_string(),
                format!("{:.4}", m.acc_pos),
                fmt_opt(m.acc_neg),
                format!("{:.6}", m.mse),
                format!("{:.6}", m.mae),
                fmt_psnr(m.psnr),
                format!("{:.4}", m.ssim),
                format!("{:.3}", m.ewarp),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[derive(Serialize)]
struct CsvRow<'a> {
    mode: DensityMode,
    point_size: usize,
    hull: bool,
    record_id: &'a str,
    acc_pos: f64,
    acc_neg: Option<f64>,
    mse: f64,
    mae: f64,
    psnr: String,
    ssim: f64,
    ewarp: f64,
}

/// Per-record CSV across all reports.
pub fn reports_csv(reports: &[EvalReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        for row in &r.rows {
            w.serialize(CsvRow {
                mode: r.cell.mode,
                point_size: r.cell.point_size,
                hull: r.cell.hull,
                record_id: &row.record_id,
                acc_pos: row.acc_pos,
                acc_neg: row.acc_neg,
                mse: row.mse,
                mae: row.mae,
                psnr: fmt_psnr(row.psnr),
                ssim: row.ssim,
                ewarp: row.ewarp,
            })
            .map_err(|e| Error::Validation(format!("csv: {e}")))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(format!("csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasynth::{build_dataset, DatasetConfig};
    use crate::denoiser::ArchConfig;

    fn fixture() -> (Vec<TrainingPair>, DenoiserParams, LatentCodec) {
        let cfg = DatasetConfig {
            count: 3,
            frames: 5,
            height: 32,
            width: 32,
            ..Default::default()
        };
        let pairs = build_dataset(&cfg, &SamplingPolicy::default(), &SeededRng::new(8)).unwrap().pairs;
        let arch = ArchConfig { width: 8, ..ArchConfig::default() };
        let params = DenoiserParams::init(arch, &mut SeededRng::new(1)).unwrap();
        (pairs, params, LatentCodec::from_seed(3, 8).unwrap())
    }

    fn quick() -> BenchConfig {
        BenchConfig {
            sampler_steps: 2,
            ..Default::default()
        }
    }

    #[test]
    fn grid_reports_share_records() {
        let (pairs, params, codec) = fixture();
        let grid = ablation_grid(&[DensityMode::FixedDensity], &[2, 10, 30]);
        let reports = run_pointbench(&pairs, &params, &codec, &grid, &quick()).unwrap();
        assert_eq!(reports.len(), 3);
        let ids = |r: &EvalReport| r.rows.iter().map(|x| x.record_id.clone()).collect::<Vec<_>>();
        assert!(reports.iter().all(|r| ids(r) == ids(&reports[0])));
        for r in &reports {
            assert!((0.0..=1.0).contains(&r.mean.acc_pos));
            assert!((0.0..=1.0).contains(&r.mean.ssim));
        }
        let again = run_pointbench(&pairs, &params, &codec, &grid, &quick()).unwrap();
        assert_eq!(again, reports);
        assert_eq!(reports_table(&reports).lines().count(), 4);
        let csv = reports_csv(&reports).unwrap();
        assert_eq!(csv.lines().count(), 1 + 9);
        assert!(csv.starts_with("mode,point_size,hull,record_id"));
    }

    #[test]
    fn zero_alpha_preserves_background() {
        let (pairs, params, codec) = fixture();
        let p = &pairs[0];
        let zero = VideoTensor::zeros(p.source.dims().with_channels(1)).unwrap();
        let mut rng = SeededRng::new(2);
        let cond = codec.encode_video(&p.source).unwrap();
        let z = sample(&params, &cond, &cond, 0, 2, &mut rng).unwrap();
        let out = composite_background(&codec.decode_latent(&z).unwrap(), &p.source, &zero).unwrap();
        let m = region_metrics(&out, &p.source, &background_region(&p.mask, &quick())).unwrap();
        assert_eq!((m.mse, m.mae), (0.0, 0.0));
        assert!(m.psnr.is_infinite());
    }

    #[test]
    fn background_region_is_nonempty() {
        let (pairs, _, _) = fixture();
        for p in &pairs {
            let r = background_region(&p.mask, &quick());
            assert!(!r.is_empty());
            assert!(r.data().iter().zip(p.mask.data()).all(|(&bg, &obj)| !(bg && obj)));
        }
    }

    #[test]
    fn full_mask_and_hull_cells_run() {
        let (pairs, params, codec) = fixture();
        let grid = [
            GridCell::new(DensityMode::FullMask, 10),
            GridCell {
                hull: true,
                ..GridCell::new(DensityMode::FixedDensity, 10)
            },
        ];
        let reports = run_pointbench(&pairs, &params, &codec, &grid, &quick()).unwrap();
        assert_eq!(reports.len(), 2);
        let text = serde_json::to_string(&reports).unwrap();
        let back: Vec<EvalReport> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, reports);
    }
}

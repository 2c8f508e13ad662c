use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pinsert_core::datasynth::{build_dataset, read_dataset, write_dataset, Dataset};
use pinsert_core::denoiser::train::{write_log_jsonl, Stage1Mix};
use pinsert_core::denoiser::{load_checkpoint, run_gradcheck, save_checkpoint, train_stage1, train_stage2, Checkpoint, GRADCHECK_TOLERANCE};
use pinsert_core::format::write_tensor;
use pinsert_core::metrics::{ablation_grid, insert, reports_csv, reports_table, run_pointbench, EvalReport, GridCell};
use pinsert_core::pointmap::{annotations_from_json, annotations_to_json, rasterize_points, sample_points_from_mask};
use pinsert_core::{DensityMode, LatentCodec, SeededRng, VideoTensor};

mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pinsert", version, about = "Point-prompted video object insertion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config overlay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct PromptFlags {
    #[arg(long)]
    density_mode: Option<DensityMode>,
    #[arg(long)]
    point_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        stage: Option<u8>,
        #[arg(long)]
        corruption: Option<f32>,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Stage-1 training of the mask-guided teacher.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Probability of a mask-guided example.
        #[arg(long)]
        mask_mix: Option<f64>,
    },
    /// Stage-2 distillation of the point-guided student.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
    },
    /// Insert into one record's source video.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        record: Option<String>,
        /// Click annotations JSON; sampled from the record's mask if absent.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Benchmark a checkpoint on held-out records.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        prompt: PromptFlags,
    },
    /// Density-mode x point-size grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "2,6,10,20,30")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "fixed_density")]
        modes: Vec<DensityMode>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Input problems caught before any work starts; reported as usage errors.
struct UsageError(String);

fn require(path: &Path, what: &str) -> std::result::Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())))
    }
}

fn out_dir(common: &Common, fallback: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn apply_prompt(cfg: &mut RunConfig, p: &PromptFlags) -> bool {
    if let Some(m) = p.density_mode {
        cfg.policy.mode = m;
        cfg.bench.policy.mode = m;
    }
    if let Some(s) = p.point_size {
        cfg.policy.point_size = s;
        cfg.bench.policy.point_size = s;
    }
    p.density_mode.is_some() || p.point_size.is_some()
}

fn load(data: &Path) -> Result<Dataset> {
    read_dataset(data).with_context(|| format!("reading dataset {}", data.display()))
}

fn write_video(path: &Path, v: &VideoTensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, &v.to_tensor())?;
    Ok(())
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(reports)? + "\n")?;
    std::fs::write(dir.join("report.txt"), reports_table(reports))?;
    std::fs::write(dir.join("records.csv"), reports_csv(reports)?)?;
    Ok(())
}

fn record_input(cfg: &mut RunConfig, name: &str, path: &Path) {
    cfg.inputs.insert(name.into(), path.display().to_string());
}

fn train(
    common: &Common,
    cfg: &mut RunConfig,
    data: &Path,
    teacher_dir: Option<&Path>,
) -> Result<()> {
    let out = out_dir(common, if teacher_dir.is_some() { "student" } else { "teacher" });
    let ds = load(data)?;
    record_input(cfg, "data", data);
    let (outcome, codec) = match teacher_dir {
        None => {
            let codec = LatentCodec::from_seed(3, ds.manifest.codec_seed)?;
            (train_stage1(&cfg.train, &ds.pairs, &codec)?, codec)
        }
        Some(t) => {
            record_input(cfg, "teacher", t);
            let teacher = load_checkpoint(t).with_context(|| format!("loading teacher {}", t.display()))?;
            // The student has to read latents the way its teacher does.
            let codec = LatentCodec::from_seed(3, teacher.codec_seed)?;
            cfg.train.arch = teacher.params.arch();
            (train_stage2(&cfg.train, &ds.pairs, &codec, &teacher.params)?, codec)
        }
    };
    let ckpt = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
        stage: cfg.train.stage,
        seed: cfg.train.seed,
        codec_seed: codec.seed(),
        config: serde_json::to_value(&*cfg)?,
    };
    save_checkpoint(&out, &ckpt)?;
    write_log_jsonl(&out.join("train_log.jsonl"), &outcome.log)?;
    cfg.write_snapshot(&out)?;
    if let Some(last) = outcome.log.last() {
        println!("step {} loss {:.6} (fm {:.6}, etd {:.6}, pa {:.6})", last.step, last.loss.total, last.loss.l_fm, last.loss.l_etd, last.loss.l_pa);
    }
    println!("checkpoint written to {} ({})", out.display(), ckpt.params.fingerprint());
    Ok(())
}

fn run(cli: Cli) -> std::result::Result<Result<()>, UsageError> {
    let resolve = |name: &str, common: &Common| {
        RunConfig::resolve(name, common.config.as_deref(), common.seed).map_err(|e| UsageError(format!("{e:#}")))
    };
    Ok(match cli.command {
        Command::Synth {
            common,
            count,
            stage,
            corruption,
            prompt,
        } => {
            let mut cfg = resolve("synth", &common)?;
            if let Some(c) = count {
                cfg.dataset.count = c;
            }
            if let Some(s) = stage {
                cfg.dataset.stage = s;
            }
            if let Some(c) = corruption {
                cfg.dataset.corruption = c;
            }
            let explicit = apply_prompt(&mut cfg, &prompt) || common.config.is_some();
            cfg.default_synth_policy(explicit);
            let out = out_dir(&common, "dataset");
            (|| {
                let ds = build_dataset(&cfg.dataset, &cfg.policy, &SeededRng::new(cfg.seed))?;
                write_dataset(&out, &ds)?;
                cfg.write_snapshot(&out)?;
                println!("{} records written to {}", ds.pairs.len(), out.display());
                Ok(())
            })()
        }
        Command::TrainTeacher {
            common,
            data,
            steps,
            mask_mix,
        } => {
            require(&data, "dataset")?;
            let mut cfg = resolve("train-teacher", &common)?;
            cfg.train.stage = 1;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(p) = mask_mix {
                cfg.train.stage1_mix = Stage1Mix { mask: p, point: 1.0 - p };
            }
            train(&common, &mut cfg, &data, None)
        }
        Command::TrainStudent {
            common,
            data,
            teacher,
            steps,
            lambda1,
            lambda2,
        } => {
            require(&data, "dataset")?;
            require(&teacher, "teacher checkpoint")?;
            let mut cfg = resolve("train-student", &common)?;
            cfg.train.stage = 2;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(l) = lambda1 {
                cfg.train.lambda1 = l;
            }
            if let Some(l) = lambda2 {
                cfg.train.lambda2 = l;
            }
            train(&common, &mut cfg, &data, Some(&teacher))
        }
        Command::Infer {
            common,
            checkpoint,
            data,
            record,
            annotations,
            prompt,
        } => {
            require(&checkpoint, "checkpoint")?;
            require(&data, "dataset")?;
            if let Some(a) = &annotations {
                require(a, "annotations file")?;
            }
            let mut cfg = resolve("infer", &common)?;
            apply_prompt(&mut cfg, &prompt);
            record_input(&mut cfg, "checkpoint", &checkpoint);
            record_input(&mut cfg, "data", &data);
            let out = out_dir(&common, "inference");
            (|| {
                let ckpt = load_checkpoint(&checkpoint)?;
                let codec = LatentCodec::from_seed(3, ckpt.codec_seed)?;
                let ds = load(&data)?;
                let pair = match &record {
                    Some(id) => ds.pairs.iter().find(|p| &p.id == id).with_context(|| format!("no record {id}"))?,
                    None => ds.pairs.first().context("dataset is empty")?,
                };
                let root = SeededRng::new(cfg.seed);
                let ann = match &annotations {
                    Some(path) => annotations_from_json(&std::fs::read_to_string(path)?)?,
                    None => sample_points_from_mask(&pair.mask, &cfg.bench.policy, &mut root.substream("infer-prompt"))?,
                };
                let guidance = rasterize_points(&ann, pair.source.dims())?;
                let ins = insert(&ckpt.params, &codec, &pair.source, &guidance, pair.class_tag, &cfg.bench, &mut root.substream("infer-noise"))?;
                std::fs::create_dir_all(&out)?;
                write_video(&out.join("generated.p2it"), &ins.generated)?;
                write_video(&out.join("composite.p2it"), &ins.output)?;
                write_video(&out.join("alpha.p2it"), &ins.alpha)?;
                std::fs::write(out.join("annotations.json"), annotations_to_json(&ann)? + "\n")?;
                cfg.inputs.insert("record".into(), pair.id.clone());
                cfg.write_snapshot(&out)?;
                println!("inserted into {} with {} clicks; outputs in {}", pair.id, ann.len(), out.display());
                Ok(())
            })()
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            prompt,
        } => {
            require(&checkpoint, "checkpoint")?;
            require(&data, "dataset")?;
            let mut cfg = resolve("eval", &common)?;
            apply_prompt(&mut cfg, &prompt);
            let cell = GridCell::new(cfg.bench.policy.mode, cfg.bench.policy.point_size);
            bench(&common, &mut cfg, &checkpoint, &data, vec![cell])
        }
        Command::Ablate {
            common,
            checkpoint,
            data,
            sizes,
            modes,
        } => {
            require(&checkpoint, "checkpoint")?;
            require(&data, "dataset")?;
            let mut cfg = resolve("ablate", &common)?;
            bench(&common, &mut cfg, &checkpoint, &data, ablation_grid(&modes, &sizes))
        }
        Command::Gradcheck { seed } => (|| {
            let r = run_gradcheck(seed)?;
            println!(
                "max relative gradient error: {:.3e} ({} parameters, worst in {})",
                r.max_rel_error, r.params, r.worst_group
            );
            if r.max_rel_error < GRADCHECK_TOLERANCE {
                Ok(())
            } else {
                bail!("gradient check failed: {:.3e} >= {GRADCHECK_TOLERANCE:e}", r.max_rel_error)
            }
        })(),
    })
}

fn bench(common: &Common, cfg: &mut RunConfig, checkpoint: &Path, data: &Path, grid: Vec<GridCell>) -> Result<()> {
    record_input(cfg, "checkpoint", checkpoint);
    record_input(cfg, "data", data);
    let out = out_dir(common, "report");
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let codec = LatentCodec::from_seed(3, ckpt.codec_seed)?;
    let ds = load(data)?;
    let reports = run_pointbench(&ds.pairs, &ckpt.params, &codec, &grid, &cfg.bench)?;
    write_reports(&out, &reports)?;
    cfg.write_snapshot(&out)?;
    print!("{}", reports_table(&reports));
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("P2I_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match run(cli) {
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Ok(Ok(())) => ExitCode::SUCCESS,
    }
}

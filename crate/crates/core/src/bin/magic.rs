use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use magic_core::denoiser::{load_checkpoint, save_checkpoint};
use magic_core::io::{read_image, write_mask};
use magic_core::metrics::FeatureConfig;
use magic_core::pipeline::{
    evaluate, generate, ingest, parse_manifest, train_class, align_onto, GenerationInputs, PipelineConfig,
    RecordStatus, MANIFEST_FILE,
};
use magic_core::trainer::write_loss_curve;
use magic_core::{Error, Image, Result};

/// Few-shot anomaly image synthesis with mask-guided diffusion inpainting.
///
/// Every option can also be given through the environment variable shown
/// next to it.
#[derive(Parser, Debug)]
#[command(name = "magic", version)]
struct Cli {
    /// Config file of `key = value` lines applied on top of the preset.
    #[arg(long, global = true, env = "MAGIC_CONFIG")]
    config: Option<PathBuf>,

    /// Base hyperparameters before the config file is applied.
    #[arg(long, global = true, env = "MAGIC_PRESET", default_value = "desk")]
    preset: String,

    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Run seed; overrides the `seed` key.
    #[arg(long, global = true, env = "MAGIC_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ClassArgs {
    /// Dataset root holding `<class>/{normal,anomaly,mask}/*.png`.
    #[arg(long, env = "MAGIC_DATA")]
    data: PathBuf,

    #[arg(long, env = "MAGIC_CLASS")]
    class: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fine-tune a denoiser on the training split of one class.
    Train {
        #[command(flatten)]
        class: ClassArgs,
        /// Output directory for `<class>.ckpt` and `<class>_loss.txt`.
        #[arg(long, env = "MAGIC_OUT")]
        out: PathBuf,
    },
    /// Relocate an exemplar's mask onto a normal image and write a sidecar.
    Align {
        #[command(flatten)]
        class: ClassArgs,
        /// Normal image stem; defaults to the first one.
        #[arg(long)]
        normal: Option<String>,
        /// Training exemplar stem; defaults to the first one.
        #[arg(long)]
        exemplar: Option<String>,
        #[arg(long, env = "MAGIC_OUT")]
        out: PathBuf,
    },
    /// Generate anomaly image/mask pairs and a manifest.
    Generate {
        #[command(flatten)]
        class: ClassArgs,
        /// Number of records to generate.
        #[arg(long)]
        n: usize,
        /// Context-aware mask alignment; overrides the `cama` key.
        #[arg(long, env = "MAGIC_CAMA")]
        cama: Option<Switch>,
        /// Checkpoint to load; defaults to `<class>.ckpt` next to --out, then inside it.
        #[arg(long, env = "MAGIC_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "MAGIC_OUT")]
        out: PathBuf,
    },
    /// KID and IC-LPIPS of generated images against real anomalies.
    Eval {
        /// Generation manifest; real images come from the class test split.
        #[arg(long, requires_all = ["data", "class"], conflicts_with_all = ["real", "generated"])]
        manifest: Option<PathBuf>,
        #[arg(long, env = "MAGIC_DATA")]
        data: Option<PathBuf>,
        #[arg(long, env = "MAGIC_CLASS")]
        class: Option<String>,
        /// Directory of real images.
        #[arg(long, requires = "generated")]
        real: Option<PathBuf>,
        /// Directory of generated images, treated as one cluster.
        #[arg(long, requires = "real")]
        generated: Option<PathBuf>,
        /// Resize mismatched images to the first image's size.
        #[arg(long)]
        resize: bool,
    },
    /// Print the train/test split of a class.
    Split {
        #[command(flatten)]
        class: ClassArgs,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::preset(&cli.preset)?;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.merge_text(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn png_dir(dir: &Path) -> Result<Vec<(String, Image)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap().to_string_lossy().into_owned(), read_image(p)?)))
        .collect()
}

fn find_checkpoint(out: &Path, class: &str) -> Result<PathBuf> {
    let name = format!("{class}.ckpt");
    let candidates = [out.parent().map(|p| p.join(&name)), Some(out.join(&name))];
    candidates
        .into_iter()
        .flatten()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Checkpoint {
            path: out.join(&name),
            reason: "no checkpoint found; run `magic train` first or pass --checkpoint".into(),
        })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Train { class, out } => {
            let layout = ingest(&class.data)?;
            let c = layout.class(&class.class)?;
            let (ckpt, report) = train_class(c, &cfg)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let ckpt_path = out.join(format!("{}.ckpt", c.name));
            save_checkpoint(&ckpt_path, &ckpt)?;
            write_loss_curve(&out.join(format!("{}_loss.txt", c.name)), &report.losses)?;
            println!(
                "trained {} for {} steps: loss {:.6} -> {:.6}; checkpoint {}",
                c.name,
                report.losses.len(),
                report.initial_loss(),
                report.final_loss(),
                ckpt_path.display()
            );
        }
        Command::Align {
            class,
            normal,
            exemplar,
            out,
        } => {
            let layout = ingest(&class.data)?;
            let c = layout.class(&class.class)?;
            let normals = c.load_normals()?;
            let exemplars = c.train_exemplars()?;
            let (normal_id, normal_img) = match &normal {
                Some(stem) => normals
                    .iter()
                    .find(|(id, _)| id == stem)
                    .ok_or_else(|| Error::Dataset(format!("no normal image {stem:?} in class {}", c.name)))?,
                None => normals
                    .first()
                    .ok_or_else(|| Error::InsufficientSamples(format!("class {} has no normal images", c.name)))?,
            };
            let ex = match &exemplar {
                Some(stem) => exemplars
                    .iter()
                    .find(|e| e.id() == stem)
                    .ok_or_else(|| Error::Dataset(format!("no training exemplar {stem:?} in class {}", c.name)))?,
                None => &exemplars[0],
            };
            let al = align_onto(ex.mask(), ex, normal_img, &cfg)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let stem = format!("{}_on_{}", ex.id(), normal_id);
            write_mask(&out.join(format!("{stem}_mask.png")), &al.mask)?;
            let sidecar = out.join(format!("{stem}.txt"));
            fs::write(&sidecar, al.sidecar()).map_err(|e| Error::io(&sidecar, e))?;
            print!("{}", al.sidecar());
        }
        Command::Generate {
            class,
            n,
            cama,
            checkpoint,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(s) = cama {
                cfg.cama = matches!(s, Switch::On);
            }
            let layout = ingest(&class.data)?;
            let c = layout.class(&class.class)?;
            let ckpt_path = match checkpoint {
                Some(p) => p,
                None => find_checkpoint(&out, &c.name)?,
            };
            let ckpt = load_checkpoint(&ckpt_path)?;
            let embedding = ckpt.embedding.clone().ok_or_else(|| Error::Checkpoint {
                path: ckpt_path.clone(),
                reason: "checkpoint holds no prompt embedding".into(),
            })?;
            let normals = c.load_normals()?;
            let exemplars = c.train_exemplars()?;
            let inputs = GenerationInputs {
                class: &c.name,
                normals: &normals,
                exemplars: &exemplars,
                predictor: &ckpt.model,
                embedding: &embedding,
            };
            let records = generate(n, &inputs, &cfg, &out)?;
            let ok = records.iter().filter(|r| r.status == RecordStatus::Ok).count();
            println!(
                "generated {ok} of {n} records into {} ({} skipped)",
                out.display(),
                records.len() - ok
            );
        }
        Command::Eval {
            manifest,
            data,
            class,
            real,
            generated,
            resize,
        } => {
            let features = FeatureConfig {
                resize,
                ..FeatureConfig::default()
            };
            let (real_images, gen) = match (manifest, real, generated) {
                (Some(m), None, None) => {
                    let (data, class) = (data.unwrap(), class.unwrap());
                    let layout = ingest(&data)?;
                    let c = layout.class(&class)?;
                    let real: Vec<Image> = c.test_exemplars()?.into_iter().map(|e| e.image().clone()).collect();
                    let text = fs::read_to_string(&m).map_err(|e| Error::io(&m, e))?;
                    let base = m.parent().unwrap_or(Path::new("."));
                    let mut gen = Vec::new();
                    for r in parse_manifest(&text)? {
                        if let (RecordStatus::Ok, Some(out)) = (&r.status, &r.output) {
                            gen.push((r.normal_id.clone(), read_image(&base.join(out))?));
                        }
                    }
                    (real, gen)
                }
                (None, Some(real), Some(generated)) => {
                    let real = png_dir(&real)?.into_iter().map(|(_, i)| i).collect();
                    let gen = png_dir(&generated)?
                        .into_iter()
                        .map(|(_, i)| ("all".to_string(), i))
                        .collect();
                    (real, gen)
                }
                _ => {
                    return Err(Error::Config(format!(
                        "eval needs either --manifest (with --data/--class) or --real and --generated; \
                         a manifest is named {MANIFEST_FILE} inside the generate output"
                    )))
                }
            };
            print!("{}", evaluate(&real_images, &gen, &features)?.to_text());
        }
        Command::Split { class } => {
            let layout = ingest(&class.data)?;
            let c = layout.class(&class.class)?;
            let (train, test) = c.split()?;
            println!("{} train / {} test", train.len(), test.len());
            let stems = |v: &[magic_core::pipeline::AnomalyFiles]| {
                v.iter().map(|a| a.stem.as_str()).collect::<Vec<_>>().join(" ")
            };
            println!("train: {}", stems(&train));
            println!("test: {}", stems(&test));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

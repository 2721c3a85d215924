//! Command-line front end. Subcommands map one-to-one onto the pipeline
//! stages: template creation, forward diffusion, training, reverse sampling,
//! and set evaluation.
//!
//! Exit codes are a scripting contract: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{apply_overrides, load_config, Profile, RunConfig, TemplateSource};
use crate::error::{Error, Result};
use crate::io::{
    load_checkpoint, load_shape, load_shape_dir, load_trajectory, save_checkpoint,
    save_metric_report, save_shape, save_trajectory, Checkpoint,
};
use crate::kernel::{
    average_shape, run_baseline_trajectory, run_trajectory, KernelKind, Trajectory,
    TrajectoryMode,
};
use crate::metrics::{evaluate_sets, jsd, mmd_cov, one_nna, SetMetric, EMD_CAP, JSD_RESOLUTION};
use crate::model::{latent_code, sample, train_resumable, OptimizerState, RegressorModel};
use crate::primitives::icosphere;
use crate::shape::Shape;

/// Environment variable holding a default configuration file path, used
/// when `--config` is not given.
pub const CONFIG_ENV: &str = "MORPHDIFF_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "morphdiff",
    about = "Deformation-driven shape diffusion: templates, trajectories, training, sampling, evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config-selection flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Configuration file (key=value lines); falls back to $MORPHDIFF_CONFIG
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hyperparameter profile: pcl, mesh, or face
    #[arg(long)]
    pub profile: Option<String>,
    /// Individual key=value override, repeatable; applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Run seed override
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let default_profile = match &self.profile {
            Some(p) => Profile::parse(p)?,
            None => Profile::Pcl,
        };
        let file = self
            .config
            .clone()
            .or_else(|| std::env::var(CONFIG_ENV).ok().map(PathBuf::from));
        let mut cfg = match file {
            Some(path) => load_config(&path, default_profile)?,
            None => RunConfig::from_profile(default_profile),
        };
        // --profile wins over the file's own profile line so the flag
        // selects a column wholesale, as documented
        if self.profile.is_some() {
            cfg.set("profile", default_profile.name())?;
        }
        apply_overrides(&mut cfg, &self.sets)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a template shape: an icosphere mesh or a dataset average cloud
    Template {
        /// Icosphere subdivision level
        #[arg(long, conflicts_with = "avg")]
        icosphere: Option<u32>,
        /// Build the average shape of all clouds in this directory
        #[arg(long)]
        avg: Option<PathBuf>,
        /// Average-shape point count
        #[arg(long, default_value_t = 5000)]
        npoints: usize,
        /// Average-shape deformation steps
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Output shape file (.obj, .ply, or .xyz)
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the forward diffusion kernel and record the trajectory
    Diffuse {
        /// Source (anchor) shape
        #[arg(long)]
        source: PathBuf,
        /// Template shape, required in template_descent mode
        #[arg(long)]
        template: Option<PathBuf>,
        /// Output trajectory directory
        #[arg(long)]
        out: PathBuf,
        /// Kernel: ddk (deformation) or gdk (pure-noise baseline)
        #[arg(long, default_value = "ddk")]
        kernel: String,
        /// Step-count override
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the denoising regressor on recorded trajectories
    Train {
        /// Trajectory directories
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        /// Output checkpoint file
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output loss-history CSV
        #[arg(long)]
        loss_csv: PathBuf,
        /// Resume from an existing checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Iteration-count override
        #[arg(long)]
        iterations: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Reverse-sample generated shapes from a trained checkpoint
    Sample {
        /// Trained checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        /// Template shape to start each sample from
        #[arg(long)]
        template: PathBuf,
        /// Number of samples; each gets its own seed offset
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Shape whose latent code conditions the model
        #[arg(long)]
        condition: Option<PathBuf>,
        /// Also write every intermediate state per sample
        #[arg(long)]
        keep_frames: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare a generated set against a reference set
    Eval {
        /// Directory of generated shapes
        #[arg(long)]
        generated: PathBuf,
        /// Directory of reference shapes
        #[arg(long)]
        reference: PathBuf,
        /// Occupancy-histogram resolution for the JSD
        #[arg(long, default_value_t = JSD_RESOLUTION)]
        resolution: usize,
        /// Output directory for report.json and report.txt
        #[arg(long)]
        out: PathBuf,
    },
}

/// Maps an error to the exit-code contract: configuration and schedule
/// problems are usage errors (2), everything else is a runtime failure (1).
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidSchedule(_) | Error::InvalidWeights(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Template {
            icosphere: level,
            avg,
            npoints,
            steps,
            out,
            cfg,
        } => cmd_template(level, avg.as_deref(), npoints, steps, &out, &cfg),
        Command::Diffuse {
            source,
            template,
            out,
            kernel,
            steps,
            cfg,
        } => cmd_diffuse(&source, template.as_deref(), &out, &kernel, steps, &cfg),
        Command::Train {
            trajectories,
            checkpoint,
            loss_csv,
            resume,
            iterations,
            cfg,
        } => cmd_train(
            &trajectories,
            &checkpoint,
            &loss_csv,
            resume.as_deref(),
            iterations,
            &cfg,
        ),
        Command::Sample {
            checkpoint,
            template,
            count,
            condition,
            keep_frames,
            out,
            cfg,
        } => cmd_sample(
            &checkpoint,
            &template,
            count,
            condition.as_deref(),
            keep_frames,
            &out,
            &cfg,
        ),
        Command::Eval {
            generated,
            reference,
            resolution,
            out,
        } => cmd_eval(&generated, &reference, resolution, &out),
    }
}

fn cmd_template(
    level: Option<u32>,
    avg: Option<&Path>,
    npoints: usize,
    steps: usize,
    out: &Path,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let cfg = cfg_args.resolve()?;
    let shape = match (level, avg) {
        (Some(level), None) => icosphere(level)?,
        (None, Some(dir)) => {
            let dataset: Vec<Shape> = load_shape_dir(dir)?
                .into_iter()
                .map(|(_, s)| s)
                .collect();
            average_shape(&dataset, npoints, steps, &cfg.weights, cfg.seed)?
        }
        (None, None) => match cfg.template {
            TemplateSource::Icosphere { level } => icosphere(level)?,
            _ => {
                return Err(Error::Config(
                    "pass --icosphere LEVEL or --avg DIR".into(),
                ))
            }
        },
        (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
    };
    save_shape(&shape, out)?;
    println!("vertices {}", shape.len());
    println!("out {}", out.display());
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_diffuse(
    source_path: &Path,
    template_path: Option<&Path>,
    out: &Path,
    kernel: &str,
    steps: Option<usize>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = cfg_args.resolve()?;
    if let Some(steps) = steps {
        cfg.set("steps", &steps.to_string())?;
    }
    let kernel = match kernel {
        "ddk" => KernelKind::Ddk,
        "gdk" => KernelKind::Gdk,
        other => {
            return Err(Error::Config(format!(
                "unknown kernel '{other}' (expected ddk or gdk)"
            )))
        }
    };
    let source = load_shape(source_path)?;
    let schedule = cfg.schedule()?;
    let mut traj = match kernel {
        KernelKind::Gdk => run_baseline_trajectory(&source, &cfg.weights, &schedule)?,
        KernelKind::Ddk => {
            let template = match (template_path, cfg.mode) {
                (Some(p), _) => load_shape(p)?,
                (None, TrajectoryMode::AnchoredDrift) => source.clone(),
                (None, TrajectoryMode::TemplateDescent) => {
                    return Err(Error::Config(
                        "--template is required in template_descent mode".into(),
                    ))
                }
            };
            run_trajectory(&source, &template, &cfg.weights, &schedule)?
        }
    };
    traj.anchor_id = file_stem(source_path);
    traj.template_id = template_path.map(file_stem).unwrap_or_default();
    save_trajectory(&traj, out)?;
    println!("kernel {}", if kernel == KernelKind::Gdk { "gdk" } else { "ddk" });
    println!("frames {}", traj.frames.len());
    println!("out {}", out.display());
    Ok(())
}

fn cmd_train(
    traj_dirs: &[PathBuf],
    checkpoint_path: &Path,
    loss_csv: &Path,
    resume: Option<&Path>,
    iterations: Option<u64>,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let mut cfg = cfg_args.resolve()?;
    if let Some(iters) = iterations {
        cfg.train.iterations = iters;
    }
    let trajectories: Vec<Trajectory> = traj_dirs
        .iter()
        .map(|d| load_trajectory(d))
        .collect::<Result<_>>()?;

    let (mut model, mut opt, start_iter) = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            (ck.model, ck.optimizer, ck.iteration)
        }
        None => {
            let model = RegressorModel::new(cfg.model, cfg.train.seed)?;
            let opt = OptimizerState::new(model.theta.len());
            (model, opt, 0)
        }
    };
    let history = train_resumable(&mut model, &trajectories, &cfg.train, &mut opt)?;

    let mut csv = String::from("iteration,loss\n");
    for (i, loss) in history.iter().enumerate() {
        csv.push_str(&format!("{},{loss}\n", start_iter + i as u64 + 1));
    }
    std::fs::write(loss_csv, csv).map_err(|e| Error::io(loss_csv.display().to_string(), e))?;

    let end_iter = start_iter + cfg.train.iterations;
    save_checkpoint(
        &Checkpoint {
            model,
            optimizer: opt,
            iteration: end_iter,
        },
        checkpoint_path,
    )?;
    println!("iterations {end_iter}");
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("loss_first {first}");
        println!("loss_last {last}");
    }
    println!("checkpoint {}", checkpoint_path.display());
    Ok(())
}

fn cmd_sample(
    checkpoint_path: &Path,
    template_path: &Path,
    count: usize,
    condition: Option<&Path>,
    keep_frames: bool,
    out: &Path,
    cfg_args: &ConfigArgs,
) -> Result<()> {
    let cfg = cfg_args.resolve()?;
    let ck = load_checkpoint(checkpoint_path)?;
    let template = load_shape(template_path)?;
    let schedule = cfg.schedule()?;
    let latent = match (ck.model.hyper.latent_conditioning, condition) {
        (true, Some(path)) => Some(latent_code(&ck.model, &load_shape(path)?)?),
        (true, None) => {
            return Err(Error::Config(
                "this checkpoint needs --condition SHAPE for its latent code".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::Config(
                "--condition given but the checkpoint has no latent conditioning".into(),
            ))
        }
        (false, None) => None,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let ext = if template.faces.is_some() { "obj" } else { "xyz" };
    println!("reverse_steps {}", schedule.steps / schedule.interval);
    for s in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(s as u64));
        let states = sample(&ck.model, &template, &schedule, latent.as_deref(), &mut rng)?;
        let generated = states.last().expect("sampler returns at least one state");
        let path = out.join(format!("sample_{s:03}.{ext}"));
        save_shape(generated, &path)?;
        if keep_frames {
            let fdir = out.join(format!("sample_{s:03}_frames"));
            std::fs::create_dir_all(&fdir)
                .map_err(|e| Error::io(fdir.display().to_string(), e))?;
            for (k, state) in states.iter().enumerate() {
                save_shape(state, &fdir.join(format!("state_{k:03}.{ext}")))?;
            }
        }
    }
    println!("samples {count}");
    println!("out {}", out.display());
    Ok(())
}

/// Evaluation report that tolerates a skipped EMD column.
#[derive(serde::Serialize)]
struct EvalOutput {
    mmd_cd: f64,
    mmd_emd: Option<f64>,
    cov_cd: f64,
    cov_emd: Option<f64>,
    one_nna_cd: f64,
    one_nna_emd: Option<f64>,
    jsd: f64,
    n_generated: usize,
    n_reference: usize,
    jsd_resolution: usize,
    emd_cap: usize,
}

fn cmd_eval(generated_dir: &Path, reference_dir: &Path, resolution: usize, out: &Path) -> Result<()> {
    let generated: Vec<Shape> = load_shape_dir(generated_dir)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let reference: Vec<Shape> = load_shape_dir(reference_dir)?
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let json_path = out.join("report.json");
    let text_path = out.join("report.txt");

    let counts: Vec<usize> = generated
        .iter()
        .chain(&reference)
        .map(Shape::len)
        .collect();
    let emd_ok = counts.windows(2).all(|w| w[0] == w[1]) && counts[0] <= EMD_CAP;
    if emd_ok {
        let report = evaluate_sets(&generated, &reference, resolution)?;
        save_metric_report(&report, &json_path, &text_path)?;
        for line in report.table_lines() {
            println!("{line}");
        }
    } else {
        eprintln!(
            "warning: point counts are unequal or exceed the solver cap ({EMD_CAP}); skipping EMD"
        );
        let (mmd_cd, cov_cd) = mmd_cov(&generated, &reference, SetMetric::Cd)?;
        let one_nna_cd = one_nna(&generated, &reference, SetMetric::Cd)?;
        let jsd_v = jsd(&generated, &reference, resolution)?;
        let output = EvalOutput {
            mmd_cd,
            mmd_emd: None,
            cov_cd,
            cov_emd: None,
            one_nna_cd,
            one_nna_emd: None,
            jsd: jsd_v,
            n_generated: generated.len(),
            n_reference: reference.len(),
            jsd_resolution: resolution,
            emd_cap: EMD_CAP,
        };
        let json = serde_json::to_string_pretty(&output)?;
        std::fs::write(&json_path, json)
            .map_err(|e| Error::io(json_path.display().to_string(), e))?;
        let text = format!(
            "n_generated     {}\nn_reference     {}\njsd_resolution  {}\n\
             mmd_cd          {:.9e}\ncov_cd          {:.6}\none_nna_cd      {:.6}\n\
             jsd             {:.9e}\nemd             skipped\n",
            output.n_generated,
            output.n_reference,
            output.jsd_resolution,
            output.mmd_cd,
            output.cov_cd,
            output.one_nna_cd,
            output.jsd
        );
        std::fs::write(&text_path, text)
            .map_err(|e| Error::io(text_path.display().to_string(), e))?;
        println!("MMD-CD (x1e3)   {:.6}", mmd_cd * 1e3);
        println!("1-NNA-CD        {:.6}", one_nna_cd);
        println!("JSD (x1e2)      {:.6}", jsd_v * 1e2);
    }
    println!("out {}", out.display());
    Ok(())
}

//! Run configuration: the three task profiles and a flat key=value file
//! format layered on top of them.
//!
//! A profile fixes every hyperparameter; a config file (or CLI override)
//! then changes individual keys. Unknown keys are rejected rather than
//! ignored so typos fail loudly.

use std::fs;
use std::path::Path;

use crate::energy::RegularizerWeights;
use crate::error::{Error, Result};
use crate::kernel::{DiffusionSchedule, TrajectoryMode, DEFAULT_REBUILD_INTERVAL};
use crate::model::{LrSchedule, ModelHyper, TrainConfig};

/// The three built-in hyperparameter columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Profile {
    Pcl,
    Mesh,
    Face,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pcl" => Ok(Profile::Pcl),
            "mesh" => Ok(Profile::Mesh),
            "face" => Ok(Profile::Face),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected pcl, mesh, or face)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Pcl => "pcl",
            Profile::Mesh => "mesh",
            Profile::Face => "face",
        }
    }
}

/// Where the run's template shape comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateSource {
    Icosphere { level: u32 },
    File { path: String },
    Average { npoints: usize, steps: usize },
}

/// One fully resolved run: profile plus every tunable the pipeline reads.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub weights: RegularizerWeights,
    pub steps: usize,
    pub beta: f64,
    /// When set, beta ramps linearly from `beta` to this value.
    pub beta_end: Option<f64>,
    pub interval: usize,
    pub mode: TrajectoryMode,
    pub seed: u64,
    pub rebuild_interval: usize,
    pub train: TrainConfig,
    pub model: ModelHyper,
    pub template: TemplateSource,
}

impl RunConfig {
    /// Profile defaults with nothing overridden.
    pub fn from_profile(profile: Profile) -> Self {
        let (weights, steps, beta, interval, mode) = match profile {
            Profile::Pcl => (
                RegularizerWeights::point_cloud(),
                500,
                0.05,
                50,
                TrajectoryMode::AnchoredDrift,
            ),
            Profile::Mesh => (
                RegularizerWeights::mesh(),
                2000,
                0.05,
                50,
                TrajectoryMode::TemplateDescent,
            ),
            // interval 1 keeps every frame: equispaced acceleration is off
            // for faces to avoid disturbing facial topology
            Profile::Face => (
                RegularizerWeights::face(),
                500,
                0.01,
                1,
                TrajectoryMode::TemplateDescent,
            ),
        };
        RunConfig {
            profile,
            weights,
            steps,
            beta,
            beta_end: None,
            interval,
            mode,
            seed: 0,
            rebuild_interval: DEFAULT_REBUILD_INTERVAL,
            train: TrainConfig::reference(),
            model: ModelHyper::desk(),
            template: TemplateSource::Icosphere { level: 4 },
        }
    }

    /// Builds the diffusion schedule this config describes.
    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        let mut sched = match self.beta_end {
            None => DiffusionSchedule::constant(
                self.steps,
                self.beta,
                self.interval,
                self.mode,
                self.seed,
            )?,
            Some(end) => DiffusionSchedule::linear(
                self.steps,
                self.beta,
                end,
                self.interval,
                self.mode,
                self.seed,
            )?,
        };
        sched.rebuild_interval = self.rebuild_interval;
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        self.schedule().map(|_| ())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("bad value '{value}' for key '{key}'"))
            })
        }
        match key {
            "profile" => {
                // re-derive every profile default, then the caller's later
                // assignments override individual fields
                *self = RunConfig::from_profile(Profile::parse(value)?);
            }
            "lambda_c" => self.weights.lambda_c = num(key, value)?,
            "lambda_n" => self.weights.lambda_n = num(key, value)?,
            "lambda_l" => self.weights.lambda_l = num(key, value)?,
            "lambda_e" => self.weights.lambda_e = num(key, value)?,
            "lambda_p" => self.weights.lambda_p = num(key, value)?,
            "eta" => self.weights.eta = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "beta_end" => self.beta_end = Some(num(key, value)?),
            "interval" => self.interval = num(key, value)?,
            "mode" => {
                self.mode = match value {
                    "anchored_drift" => TrajectoryMode::AnchoredDrift,
                    "template_descent" => TrajectoryMode::TemplateDescent,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown mode '{other}' (expected anchored_drift or template_descent)"
                        )))
                    }
                };
            }
            "seed" => self.seed = num(key, value)?,
            "rebuild_interval" => self.rebuild_interval = num(key, value)?,
            "iterations" => self.train.iterations = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "weight_decay" => self.train.weight_decay = num(key, value)?,
            "lr_schedule" => {
                self.train.schedule = match value {
                    "cosine" => LrSchedule::Cosine,
                    "constant" => LrSchedule::Constant,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown lr_schedule '{other}' (expected cosine or constant)"
                        )))
                    }
                };
            }
            "train_seed" => self.train.seed = num(key, value)?,
            "width" => self.model.width = num(key, value)?,
            "embed_dim" => self.model.embed_dim = num(key, value)?,
            "heads" => self.model.heads = num(key, value)?,
            "time_conditioning" => self.model.time_conditioning = num(key, value)?,
            "latent_conditioning" => self.model.latent_conditioning = num(key, value)?,
            "icosphere_level" => {
                self.template = TemplateSource::Icosphere {
                    level: num(key, value)?,
                };
            }
            "template_path" => {
                self.template = TemplateSource::File {
                    path: value.to_string(),
                };
            }
            "avg_npoints" => {
                let npoints = num(key, value)?;
                let steps = match self.template {
                    TemplateSource::Average { steps, .. } => steps,
                    _ => 500,
                };
                self.template = TemplateSource::Average { npoints, steps };
            }
            "avg_steps" => {
                let steps = num(key, value)?;
                let npoints = match self.template {
                    TemplateSource::Average { npoints, .. } => npoints,
                    _ => 5000,
                };
                self.template = TemplateSource::Average { npoints, steps };
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

fn split_assignment(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::Config(format!("expected key=value, got '{raw}'")))
}

/// Parses flat `key=value` text. `#` starts a comment; a `profile=` line
/// resets all defaults, so place it first.
pub fn parse_config(text: &str, default_profile: Profile) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_profile(default_profile);
    for raw in text.lines() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = split_assignment(line)?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, default_profile: Profile) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config(&text, default_profile)
}

/// Applies CLI-style `key=value` overrides on top of an existing config.
pub fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for raw in overrides {
        let (key, value) = split_assignment(raw)?;
        cfg.set(key, value)?;
    }
    cfg.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_profile_defaults() {
        let cfg = parse_config("", Profile::Mesh).unwrap();
        assert_eq!(cfg.weights.lambda_c, 1.0);
        assert_eq!(cfg.weights.lambda_e, 0.8);
        assert_eq!(cfg.weights.lambda_n, 0.01);
        assert_eq!(cfg.weights.lambda_l, 0.15);
        assert_eq!(cfg.weights.lambda_p, 0.01);
        assert_eq!(cfg.weights.eta, 1.0);
        assert_eq!(cfg.steps, 2000);
        assert_eq!(cfg.beta, 0.05);
        assert_eq!(cfg.interval, 50);
        assert_eq!(cfg.mode, TrajectoryMode::TemplateDescent);
    }

    #[test]
    fn pcl_profile_defaults() {
        let cfg = parse_config("profile = pcl\n", Profile::Mesh).unwrap();
        assert_eq!(cfg.weights.lambda_c, 1.0);
        assert_eq!(cfg.weights.lambda_p, 0.01);
        assert_eq!(cfg.weights.lambda_e, 0.0);
        assert_eq!(cfg.weights.lambda_n, 0.0);
        assert_eq!(cfg.weights.lambda_l, 0.0);
        assert_eq!(cfg.steps, 500);
        assert_eq!(cfg.mode, TrajectoryMode::AnchoredDrift);
    }

    #[test]
    fn face_profile_defaults() {
        let cfg = parse_config("profile=face", Profile::Pcl).unwrap();
        assert_eq!(cfg.weights.eta, 0.1);
        assert_eq!(cfg.beta, 0.01);
        assert_eq!(cfg.steps, 500);
        // every frame kept: no equispaced skipping
        assert_eq!(cfg.interval, 1);
        assert_eq!(cfg.weights.lambda_e, 0.8);
    }

    #[test]
    fn training_defaults_match_reference() {
        let cfg = RunConfig::from_profile(Profile::Pcl);
        assert_eq!(cfg.train.iterations, 100_000);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.lr, 2e-4);
        assert_eq!(cfg.train.weight_decay, 1e-6);
        assert_eq!(cfg.train.schedule, LrSchedule::Cosine);
    }

    #[test]
    fn overrides_compose_on_profile() {
        let text = "profile=mesh\nsteps=100\nlambda_e = 0.5 # softer edges\n";
        let cfg = parse_config(text, Profile::Pcl).unwrap();
        assert_eq!(cfg.steps, 100);
        assert_eq!(cfg.weights.lambda_e, 0.5);
        assert_eq!(cfg.weights.lambda_l, 0.15, "untouched keys keep defaults");
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            parse_config("lambda_q=1\n", Profile::Pcl),
            Err(Error::Config(msg)) if msg.contains("lambda_q")
        ));
    }

    #[test]
    fn type_mismatch_rejected() {
        assert!(matches!(
            parse_config("steps=many\n", Profile::Pcl),
            Err(Error::Config(msg)) if msg.contains("many")
        ));
    }

    #[test]
    fn invariant_violation_rejected() {
        // interval must divide steps
        assert!(parse_config("steps=500\ninterval=51\n", Profile::Pcl).is_err());
        assert!(parse_config("eta=-1\n", Profile::Pcl).is_err());
    }

    #[test]
    fn schedule_reflects_linear_ramp() {
        let cfg = parse_config("beta=0.0\nbeta_end=0.1\nsteps=10\ninterval=1\n", Profile::Pcl)
            .unwrap();
        let sched = cfg.schedule().unwrap();
        assert_eq!(sched.beta.len(), 10);
        assert!(sched.beta[9] > sched.beta[0]);
    }

    #[test]
    fn cli_overrides() {
        let mut cfg = RunConfig::from_profile(Profile::Pcl);
        apply_overrides(&mut cfg, &["seed=9".into(), "beta=0.02".into()]).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.beta, 0.02);
        assert!(apply_overrides(&mut cfg, &["nope".into()]).is_err());
    }

    #[test]
    fn template_source_keys() {
        let cfg = parse_config("avg_npoints=256\navg_steps=50\n", Profile::Pcl).unwrap();
        assert_eq!(
            cfg.template,
            TemplateSource::Average {
                npoints: 256,
                steps: 50
            }
        );
        let cfg = parse_config("icosphere_level=2\n", Profile::Pcl).unwrap();
        assert_eq!(cfg.template, TemplateSource::Icosphere { level: 2 });
    }
}

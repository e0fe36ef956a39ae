//! Run configuration as flat `section.key=value` text.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config; unknown keys are errors so typos surface.

use crate::famm::{AxisBreakpoints, MembershipConfig, MotionModel, RuleBase};
use crate::fusion::{CovarianceForm, NoiseConfig};
use crate::imu::IntegrationRule;
use crate::pipeline::{Clock, FammConfig, FilterConfig, ModelMode, PipelineConfig, SensorSet};
use crate::sim::{Profile, Regime, Segment, SensorNoiseSpec, TrajectorySpec};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{key}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            line: None,
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Regime(Regime),
    Bundle(PathBuf),
    Segments(Vec<Segment>),
}

/// Scalar filter settings; [`FilterParams::build`] turns them into
/// matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub q_pos: f64,
    pub q_vel: f64,
    pub q_rot: f64,
    pub q_ang: f64,
    pub pos_sigma: f64,
    pub rot_sigma: f64,
    pub sigma0_pos: f64,
    pub sigma0_vel: f64,
    pub sigma0_rot: f64,
    pub sigma0_ang: f64,
    pub form: CovarianceForm,
    pub integration: IntegrationRule,
}

impl Default for FilterParams {
    fn default() -> Self {
        let n = NoiseConfig::default();
        let d = FilterConfig::default();
        Self {
            q_pos: n.q[(0, 0)],
            q_vel: n.q[(3, 3)],
            q_rot: n.q[(6, 6)],
            q_ang: n.q[(9, 9)],
            pos_sigma: n.rm[(0, 0)].sqrt(),
            rot_sigma: n.rm[(3, 3)].sqrt(),
            sigma0_pos: d.sigma0[(0, 0)].sqrt(),
            sigma0_vel: d.sigma0[(3, 3)].sqrt(),
            sigma0_rot: d.sigma0[(6, 6)].sqrt(),
            sigma0_ang: d.sigma0[(9, 9)].sqrt(),
            form: d.form,
            integration: d.integration,
        }
    }
}

impl FilterParams {
    pub fn build(&self, sensors: SensorSet) -> FilterConfig {
        FilterConfig {
            noise: NoiseConfig::diagonal(self.q_pos, self.q_vel, self.q_rot, self.q_ang, self.pos_sigma, self.rot_sigma),
            sigma0: FilterConfig::diagonal_sigma0(self.sigma0_pos, self.sigma0_vel, self.sigma0_rot, self.sigma0_ang),
            form: self.form,
            integration: self.integration,
            sensors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub seed: u64,
    pub mode: ModelMode,
    pub sensors: SensorSet,
    pub sim_noise: SensorNoiseSpec,
    pub filter: FilterParams,
    pub membership: MembershipConfig,
    pub initial_model: MotionModel,
    pub rules: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub concurrent: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Regime(Regime::Stationary),
            seed: 0,
            mode: ModelMode::Famm,
            sensors: SensorSet::GpsImuVision,
            sim_noise: SensorNoiseSpec::default(),
            filter: FilterParams::default(),
            membership: MembershipConfig::default(),
            initial_model: MotionModel::STATIONARY,
            rules: None,
            pipeline: PipelineConfig::default(),
            concurrent: true,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse {v:?} as a number")))
}

fn non_negative(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = num(key, v)?;
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::new(key, "must be finite and non-negative"))
    }
}

fn positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x = non_negative(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::new(key, "must be positive"))
    }
}

fn breakpoints(key: &str, v: &str) -> Result<AxisBreakpoints, ConfigError> {
    let parts: Vec<f64> = v.split(',').map(|p| num(key, p)).collect::<Result<_, _>>()?;
    let [a, b, c] = parts[..] else {
        return Err(ConfigError::new(key, "expected three comma-separated values"));
    };
    AxisBreakpoints::new(a, b, c).map_err(|e| ConfigError::new(key, e.to_string()))
}

/// `kind:duration[:speed[:yaw_rate]]` items separated by `;`.
fn segments(key: &str, v: &str) -> Result<Vec<Segment>, ConfigError> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            let f: Vec<&str> = item.split(':').map(str::trim).collect();
            let get = |k: usize| -> Result<f64, ConfigError> {
                f.get(k).map_or(Err(ConfigError::new(key, format!("{item:?} is missing a field"))), |x| num(key, x))
            };
            match f[0] {
                "stationary" => Ok(Segment::stationary(get(1)?)),
                "straight" => Ok(Segment::straight(get(1)?, get(2)?)),
                "turn" => Ok(Segment::turn(get(1)?, get(2)?, get(3)?)),
                "loop" => Ok(Segment::full_loop(get(1)?, get(2)?)),
                other => Err(ConfigError::new(key, format!("unknown segment kind {other:?}"))),
            }
        })
        .collect()
}

fn segments_text(segs: &[Segment]) -> String {
    segs.iter()
        .map(|s| match s.profile {
            Profile::Stationary => format!("stationary:{}", s.duration),
            Profile::Straight => format!("straight:{}:{}", s.duration, s.speed),
            Profile::Turn => format!("turn:{}:{}:{}", s.duration, s.speed, s.yaw_rate),
            Profile::Loop => format!("loop:{}:{}", s.duration, s.speed),
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn fmt_clock(c: Clock) -> String {
    match c {
        Clock::AsFastAsPossible => "fast".into(),
        Clock::RealTime { speed } => format!("realtime:{speed}"),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    line: Some(n + 1),
                    key: line.to_string(),
                    message: "expected key=value".into(),
                });
            };
            cfg.set(key.trim(), value.trim()).map_err(|mut e| {
                e.line = Some(n + 1);
                e
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let f = &mut self.filter;
        let n = &mut self.sim_noise;
        match key {
            "dataset.regime" => self.dataset = DatasetSource::Regime(v.parse().map_err(|e: crate::sim::SimError| ConfigError::new(key, e.to_string()))?),
            "dataset.path" => self.dataset = DatasetSource::Bundle(PathBuf::from(v)),
            "dataset.segments" => self.dataset = DatasetSource::Segments(segments(key, v)?),
            "run.seed" => self.seed = num(key, v)?,
            "run.mode" => {
                self.mode = match v {
                    "cmm" => ModelMode::Cmm,
                    "famm" => ModelMode::Famm,
                    _ => return Err(ConfigError::new(key, "expected cmm or famm")),
                }
            }
            "run.sensors" => {
                self.sensors = SensorSet::parse(v).ok_or_else(|| ConfigError::new(key, "expected gps, gps_imu or gps_imu_vision"))?
            }
            "run.rules" => self.rules = Some(PathBuf::from(v)),
            "run.out" => self.out_dir = PathBuf::from(v),
            "run.concurrent" => self.concurrent = num(key, v)?,
            "noise.gps_sigma" => n.gps_sigma = non_negative(key, v)?,
            "noise.imu_accel_sigma" => n.imu_accel_sigma = non_negative(key, v)?,
            "noise.imu_gyro_sigma" => n.imu_gyro_sigma = non_negative(key, v)?,
            "noise.vision_rot_sigma" => n.vision_rot_sigma = non_negative(key, v)?,
            "noise.vision_trans_sigma" => n.vision_trans_sigma = non_negative(key, v)?,
            "noise.gps_rate" => n.gps_rate = positive(key, v)?,
            "noise.imu_rate" => n.imu_rate = positive(key, v)?,
            "noise.vision_rate" => n.vision_rate = positive(key, v)?,
            "noise.calibration_samples" => n.calibration_samples = num(key, v)?,
            "filter.q_pos" => f.q_pos = non_negative(key, v)?,
            "filter.q_vel" => f.q_vel = non_negative(key, v)?,
            "filter.q_rot" => f.q_rot = non_negative(key, v)?,
            "filter.q_ang" => f.q_ang = non_negative(key, v)?,
            "filter.pos_sigma" => f.pos_sigma = non_negative(key, v)?,
            "filter.rot_sigma" => f.rot_sigma = non_negative(key, v)?,
            "filter.sigma0_pos" => f.sigma0_pos = non_negative(key, v)?,
            "filter.sigma0_vel" => f.sigma0_vel = non_negative(key, v)?,
            "filter.sigma0_rot" => f.sigma0_rot = non_negative(key, v)?,
            "filter.sigma0_ang" => f.sigma0_ang = non_negative(key, v)?,
            "filter.form" => {
                f.form = match v {
                    "standard" => CovarianceForm::Standard,
                    "joseph" => CovarianceForm::Joseph,
                    _ => return Err(ConfigError::new(key, "expected standard or joseph")),
                }
            }
            "filter.integration" => {
                f.integration = match v {
                    "rectangular" => IntegrationRule::Rectangular,
                    "trapezoidal" => IntegrationRule::Trapezoidal,
                    _ => return Err(ConfigError::new(key, "expected rectangular or trapezoidal")),
                }
            }
            "famm.pos_breakpoints" => self.membership.positional = breakpoints(key, v)?,
            "famm.rot_breakpoints" => self.membership.rotational = breakpoints(key, v)?,
            "famm.initial" => self.initial_model = v.parse().map_err(|e: crate::famm::FammError| ConfigError::new(key, e.to_string()))?,
            "pipeline.imu_batch" => {
                self.pipeline.imu_batch = num(key, v)?;
                if self.pipeline.imu_batch < 1 {
                    return Err(ConfigError::new(key, "must be at least 1"));
                }
            }
            "pipeline.queue_capacity" => {
                self.pipeline.queue_capacity = num(key, v)?;
                if self.pipeline.queue_capacity < 16 {
                    return Err(ConfigError::new(key, "must be at least 16"));
                }
            }
            "pipeline.snapshot_every" => self.pipeline.snapshot_every = num(key, v)?,
            "pipeline.clock" => {
                self.pipeline.clock = match v.split_once(':') {
                    None if v == "fast" => Clock::AsFastAsPossible,
                    Some(("realtime", s)) => Clock::RealTime { speed: positive(key, s)? },
                    _ => return Err(ConfigError::new(key, "expected fast or realtime:<speed>")),
                }
            }
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Checks that referenced files exist and the noise settings are usable.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let DatasetSource::Bundle(p) = &self.dataset {
            if !p.is_dir() {
                return Err(ConfigError::new("dataset.path", format!("{} is not a directory", p.display())));
            }
        }
        if let DatasetSource::Segments(s) = &self.dataset {
            TrajectorySpec::new(s.clone(), self.seed)
                .validate()
                .map_err(|e| ConfigError::new("dataset.segments", e.to_string()))?;
        }
        if let Some(p) = &self.rules {
            if !p.is_file() {
                return Err(ConfigError::new("run.rules", format!("{} does not exist", p.display())));
            }
        }
        self.sim_noise
            .validate()
            .map_err(|e| ConfigError::new("noise", e.to_string()))?;
        self.filter
            .build(self.sensors)
            .noise
            .validate()
            .map_err(|e| ConfigError::new("filter", e.to_string()))?;
        Ok(())
    }

    pub fn filter_config(&self) -> FilterConfig {
        self.filter.build(self.sensors)
    }

    /// FAMM settings with the rule file loaded, if one is configured.
    pub fn famm_config(&self) -> Result<FammConfig, ConfigError> {
        let rules = match &self.rules {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::new("run.rules", e.to_string()))?;
                RuleBase::from_text(&text).map_err(|e| ConfigError::new("run.rules", e.to_string()))?
            }
            None => RuleBase::default(),
        };
        Ok(FammConfig {
            mode: self.mode,
            membership: self.membership,
            rules: Arc::new(rules),
            initial: self.initial_model,
        })
    }

    /// Every key with its resolved value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        match &self.dataset {
            DatasetSource::Regime(r) => kv("dataset.regime", r.to_string()),
            DatasetSource::Bundle(p) => kv("dataset.path", p.display().to_string()),
            DatasetSource::Segments(segs) => kv("dataset.segments", segments_text(segs)),
        }
        kv("run.seed", self.seed.to_string());
        kv("run.mode", if self.mode == ModelMode::Cmm { "cmm" } else { "famm" }.into());
        kv("run.sensors", self.sensors.name().into());
        if let Some(p) = &self.rules {
            kv("run.rules", p.display().to_string());
        }
        kv("run.out", self.out_dir.display().to_string());
        kv("run.concurrent", self.concurrent.to_string());
        let n = &self.sim_noise;
        kv("noise.gps_sigma", n.gps_sigma.to_string());
        kv("noise.imu_accel_sigma", n.imu_accel_sigma.to_string());
        kv("noise.imu_gyro_sigma", n.imu_gyro_sigma.to_string());
        kv("noise.vision_rot_sigma", n.vision_rot_sigma.to_string());
        kv("noise.vision_trans_sigma", n.vision_trans_sigma.to_string());
        kv("noise.gps_rate", n.gps_rate.to_string());
        kv("noise.imu_rate", n.imu_rate.to_string());
        kv("noise.vision_rate", n.vision_rate.to_string());
        kv("noise.calibration_samples", n.calibration_samples.to_string());
        let f = &self.filter;
        kv("filter.q_pos", f.q_pos.to_string());
        kv("filter.q_vel", f.q_vel.to_string());
        kv("filter.q_rot", f.q_rot.to_string());
        kv("filter.q_ang", f.q_ang.to_string());
        kv("filter.pos_sigma", f.pos_sigma.to_string());
        kv("filter.rot_sigma", f.rot_sigma.to_string());
        kv("filter.sigma0_pos", f.sigma0_pos.to_string());
        kv("filter.sigma0_vel", f.sigma0_vel.to_string());
        kv("filter.sigma0_rot", f.sigma0_rot.to_string());
        kv("filter.sigma0_ang", f.sigma0_ang.to_string());
        kv("filter.form", if f.form == CovarianceForm::Joseph { "joseph" } else { "standard" }.into());
        kv(
            "filter.integration",
            if f.integration == IntegrationRule::Trapezoidal { "trapezoidal" } else { "rectangular" }.into(),
        );
        let p = &self.membership.positional;
        kv("famm.pos_breakpoints", format!("{},{},{}", p.low_peak, p.med_peak, p.high_sat));
        let r = &self.membership.rotational;
        kv("famm.rot_breakpoints", format!("{},{},{}", r.low_peak, r.med_peak, r.high_sat));
        kv("famm.initial", self.initial_model.to_string());
        kv("pipeline.imu_batch", self.pipeline.imu_batch.to_string());
        kv("pipeline.queue_capacity", self.pipeline.queue_capacity.to_string());
        kv("pipeline.snapshot_every", self.pipeline.snapshot_every.to_string());
        kv("pipeline.clock", fmt_clock(self.pipeline.clock));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn parses_sections() {
        let cfg = RunConfig::parse(
            "dataset.regime=loop\nrun.mode=cmm\nrun.seed=7\nnoise.gps_sigma=3.0 # meters\nfamm.pos_breakpoints=1,2,3\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset, DatasetSource::Regime(Regime::Loop));
        assert_eq!(cfg.mode, ModelMode::Cmm);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sim_noise.gps_sigma, 3.0);
        assert_eq!(cfg.membership.positional.med_peak, 2.0);
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = RunConfig::parse("run.seed=1\nnoise.gps_sigma=abc\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert_eq!(e.key, "noise.gps_sigma");
        assert!(e.to_string().contains("noise.gps_sigma"));
        assert_eq!(RunConfig::parse("bogus.key=1").unwrap_err().key, "bogus.key");
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("famm.pos_breakpoints=3,2,1").is_err());
        assert!(RunConfig::parse("pipeline.queue_capacity=4").is_err());
        assert!(RunConfig::parse("noise.gps_sigma=-1").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::parse(
            "dataset.segments=stationary:5;straight:10:1.2;turn:4:1:0.25\nrun.mode=cmm\nfilter.form=joseph\npipeline.clock=realtime:2.5\nfamm.initial=P2R1",
        )
        .unwrap();
        cfg.rules = Some(PathBuf::from("rules/x.rules"));
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn validate_checks_files() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.rules = Some(PathBuf::from("/definitely/not/here.rules"));
        assert_eq!(cfg.validate().unwrap_err().key, "run.rules");
        cfg.rules = None;
        cfg.dataset = DatasetSource::Bundle(PathBuf::from("/definitely/not/here"));
        assert_eq!(cfg.validate().unwrap_err().key, "dataset.path");
    }
}

//! Run configuration: one `key = value` document bundling every knob a
//! registration run takes, so a whole parameter set can be checked in and
//! replayed. Command-line flags apply the same assignments on top of a
//! loaded file, last writer wins.

use crate::energy::{KernelConfig, Truncation};
use crate::error::{Error, Result};
use crate::io::parse_kv;
use crate::solver::{LmConfig, Schedule, TransformMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Rigid,
    Similarity,
    /// Align points to camera sight lines instead of a second point set.
    Rays,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Rigid => "rigid",
            RunMode::Similarity => "similarity",
            RunMode::Rays => "rays",
        }
    }

    /// Point-target runs map onto a transform mode; ray runs are rigid-only
    /// and use their own entry point.
    pub fn transform_mode(self) -> TransformMode {
        match self {
            RunMode::Similarity => TransformMode::Similarity,
            RunMode::Rigid | RunMode::Rays => TransformMode::Rigid,
        }
    }
}

/// Every field has a default, so a config file (or flag set) only needs to
/// name what it changes. Numeric invariants live in the library types this
/// expands into; `validate` goes through their constructors.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub sigma0: f64,
    pub sigma_final: f64,
    pub sigma_factor: f64,
    pub k: f64,
    pub alpha: f64,
    pub truncation: Truncation,
    pub lambda0: f64,
    pub max_iterations: usize,
    pub fd_step: f64,
    pub resolution_fractions: Vec<f64>,
    pub seed: u64,
    pub voxel_resolution: usize,
    /// Optional input/output paths, so sweep bundles are self-contained.
    pub source: Option<String>,
    pub target: Option<String>,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = Schedule::default();
        let lm = LmConfig::default();
        RunConfig {
            mode: RunMode::Rigid,
            sigma0: schedule.sigma0,
            sigma_final: schedule.sigma_final,
            sigma_factor: schedule.sigma_factor,
            k: 2.0,
            alpha: 0.5,
            truncation: Truncation::Cutoff(4.0),
            lambda0: lm.lambda0,
            max_iterations: lm.max_iters,
            fd_step: lm.fd_step,
            resolution_fractions: schedule.resolution_fractions,
            seed: 0,
            voxel_resolution: 64,
            source: None,
            target: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Parses a config document over the defaults. Unknown keys are errors.
    pub fn from_bytes(bytes: &[u8]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (line, key, value) in parse_kv(bytes)? {
            cfg.assign(&key, &value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<RunConfig> {
        let bytes = std::fs::read(path)?;
        RunConfig::from_bytes(&bytes)
    }

    /// One assignment, shared between file keys and flag overrides.
    /// `line` is 0 for flags; errors then read "at line 0".
    pub fn assign(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let float = |what: &str| -> Result<f64> {
            let v: f64 = value
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid {what} '{value}'")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, format!("{what} must be finite")));
            }
            Ok(v)
        };
        let int = |what: &str| -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid {what} '{value}'")))
        };
        match key {
            "mode" => {
                self.mode = match value {
                    "rigid" => RunMode::Rigid,
                    "similarity" => RunMode::Similarity,
                    "rays" => RunMode::Rays,
                    other => {
                        return Err(Error::parse(
                            line,
                            format!("mode must be rigid, similarity, or rays, got '{other}'"),
                        ))
                    }
                }
            }
            "sigma0" => self.sigma0 = float("sigma0")?,
            "sigma_final" => self.sigma_final = float("sigma_final")?,
            "sigma_factor" => self.sigma_factor = float("sigma_factor")?,
            "k" => self.k = float("k")?,
            "alpha" => self.alpha = float("alpha")?,
            "truncation" => {
                self.truncation = if value == "exact" {
                    Truncation::Exact
                } else {
                    // A number means: drop pairs farther apart than that
                    // many sigmas.
                    Truncation::Cutoff(float("truncation")?)
                }
            }
            "lambda0" => self.lambda0 = float("lambda0")?,
            "max_iterations" => self.max_iterations = int("max_iterations")?,
            "fd_step" => self.fd_step = float("fd_step")?,
            "resolution_fractions" => {
                let mut fractions = Vec::new();
                for tok in value.split_whitespace() {
                    let v: f64 = tok.parse().map_err(|_| {
                        Error::parse(line, format!("invalid resolution fraction '{tok}'"))
                    })?;
                    fractions.push(v);
                }
                if fractions.is_empty() {
                    return Err(Error::parse(
                        line,
                        "resolution_fractions needs at least one value".to_string(),
                    ));
                }
                self.resolution_fractions = fractions;
            }
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::parse(line, format!("invalid seed '{value}'")))?
            }
            "voxel_resolution" => self.voxel_resolution = int("voxel_resolution")?,
            "source" => self.source = Some(value.to_string()),
            "target" => self.target = Some(value.to_string()),
            "out" => self.out = Some(value.to_string()),
            other => {
                return Err(Error::parse(line, format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Expands into the library types, which carry the actual invariants.
    pub fn validate(&self) -> Result<()> {
        self.kernel()?;
        self.schedule().levels()?;
        self.lm()?;
        if self.voxel_resolution < 2 {
            return Err(Error::InvalidParameter(
                "voxel_resolution must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Kernel at the coarsest sigma; the solver re-issues it per level.
    pub fn kernel(&self) -> Result<KernelConfig> {
        KernelConfig {
            sigma: self.sigma0,
            k: self.k,
            alpha: self.alpha,
            truncation: self.truncation,
        }
        .validated()
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            sigma0: self.sigma0,
            sigma_final: self.sigma_final,
            sigma_factor: self.sigma_factor,
            resolution_fractions: self.resolution_fractions.clone(),
            seed: self.seed,
        }
    }

    pub fn lm(&self) -> Result<LmConfig> {
        let lm = LmConfig {
            lambda0: self.lambda0,
            max_iters: self.max_iterations,
            fd_step: self.fd_step,
            ..LmConfig::default()
        };
        if !(lm.lambda0 > 0.0 && lm.lambda0.is_finite()) {
            return Err(Error::InvalidParameter("lambda0 must be positive".into()));
        }
        if lm.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "max_iterations must be at least 1".into(),
            ));
        }
        if !(lm.fd_step > 0.0 && lm.fd_step.is_finite()) {
            return Err(Error::InvalidParameter("fd_step must be positive".into()));
        }
        Ok(lm)
    }

    /// `(key, value)` pairs in a fixed order, as echoed into transform
    /// documents. Re-assigning these onto a default config reproduces self.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("mode".to_string(), self.mode.name().to_string()),
            ("sigma0".to_string(), format!("{}", self.sigma0)),
            ("sigma_final".to_string(), format!("{}", self.sigma_final)),
            ("sigma_factor".to_string(), format!("{}", self.sigma_factor)),
            ("k".to_string(), format!("{}", self.k)),
            ("alpha".to_string(), format!("{}", self.alpha)),
            (
                "truncation".to_string(),
                match self.truncation {
                    Truncation::Exact => "exact".to_string(),
                    Truncation::Cutoff(c) => format!("{c}"),
                },
            ),
            ("lambda0".to_string(), format!("{}", self.lambda0)),
            (
                "max_iterations".to_string(),
                format!("{}", self.max_iterations),
            ),
            ("fd_step".to_string(), format!("{}", self.fd_step)),
            (
                "resolution_fractions".to_string(),
                self.resolution_fractions
                    .iter()
                    .map(|f| format!("{f}"))
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("seed".to_string(), format!("{}", self.seed)),
            (
                "voxel_resolution".to_string(),
                format!("{}", self.voxel_resolution),
            ),
        ];
        for (key, path) in [
            ("source", &self.source),
            ("target", &self.target),
            ("out", &self.out),
        ] {
            if let Some(p) = path {
                out.push((key.to_string(), p.clone()));
            }
        }
        out
    }
}

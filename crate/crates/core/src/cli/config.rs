//! TOML run configuration.
//!
//! ```toml
//! beta = 5.0
//! mu = 0.5
//! U = 1.0
//! w1 = 0.5
//! ell = [1, 2, -1]
//! n_cut = 256                          # default
//! routes = ["bse", "closed", "direct"] # default
//!
//! [bath]
//! kind = "dmft"        # atomic | single_level | dmft | file
//! t_star = 1.0
//!
//! [oracle]
//! enabled = true
//!
//! [sweep]
//! U = [0.5, 1.0, 2.0]
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::DmftSettings;
use crate::oracle::{DEFAULT_H_STEP, DEFAULT_TOLERANCE};
use crate::response::{BseSolver, Route, RouteSelection};

pub const DEFAULT_N_CUT: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("config parse error{}: {message}", key.as_ref().map(|k| format!(" at `{k}`")).unwrap_or_default())]
    Parse { key: Option<String>, message: String },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    /// The offending key, when one can be identified.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Parse { key, .. } => key.as_deref(),
            ConfigError::Io { .. } => None,
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_owned(),
        reason: reason.into(),
    }
}

/// Where the bath comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawBath")]
pub enum BathSpec {
    Atomic,
    SingleLevel {
        coupling: f64,
        level: f64,
    },
    Dmft {
        t_star: f64,
        tol: f64,
        max_iter: usize,
        mixing: f64,
    },
    File {
        path: PathBuf,
    },
}

/// Flat form of the `[bath]` table; serde cannot reject unknown keys inside
/// internally tagged enums, so the checks happen in the conversion.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    kind: String,
    coupling: Option<f64>,
    level: Option<f64>,
    t_star: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    mixing: Option<f64>,
    path: Option<PathBuf>,
}

impl TryFrom<RawBath> for BathSpec {
    type Error = String;

    fn try_from(raw: RawBath) -> Result<Self, String> {
        let present = [
            ("coupling", raw.coupling.is_some()),
            ("level", raw.level.is_some()),
            ("t_star", raw.t_star.is_some()),
            ("tol", raw.tol.is_some()),
            ("max_iter", raw.max_iter.is_some()),
            ("mixing", raw.mixing.is_some()),
            ("path", raw.path.is_some()),
        ];
        let allowed: &[&str] = match raw.kind.as_str() {
            "atomic" => &[],
            "single_level" => &["coupling", "level"],
            "dmft" => &["t_star", "tol", "max_iter", "mixing"],
            "file" => &["path"],
            other => {
                return Err(format!(
                    "unknown variant `{other}`, expected one of `atomic`, `single_level`, `dmft`, `file`"
                ))
            }
        };
        if let Some((key, _)) = present.iter().find(|(k, set)| *set && !allowed.contains(k)) {
            return Err(format!("unknown field `{key}` for bath kind `{}`", raw.kind));
        }
        let missing = |key: &str| format!("missing field `{key}`");
        let defaults = DmftSettings::default();
        Ok(match raw.kind.as_str() {
            "atomic" => BathSpec::Atomic,
            "single_level" => BathSpec::SingleLevel {
                coupling: raw.coupling.ok_or_else(|| missing("coupling"))?,
                level: raw.level.ok_or_else(|| missing("level"))?,
            },
            "dmft" => BathSpec::Dmft {
                t_star: raw.t_star.unwrap_or(defaults.t_star),
                tol: raw.tol.unwrap_or(defaults.tol),
                max_iter: raw.max_iter.unwrap_or(defaults.max_iter),
                mixing: raw.mixing.unwrap_or(defaults.mixing),
            },
            _ => BathSpec::File {
                path: raw.path.ok_or_else(|| missing("path"))?,
            },
        })
    }
}

impl BathSpec {
    pub fn label(&self) -> &'static str {
        match self {
            BathSpec::Atomic => "atomic",
            BathSpec::SingleLevel { .. } => "single_level",
            BathSpec::Dmft { .. } => "dmft",
            BathSpec::File { .. } => "file",
        }
    }

    pub fn dmft_settings(&self) -> Option<DmftSettings> {
        match *self {
            BathSpec::Dmft {
                t_star,
                tol,
                max_iter,
                mixing,
            } => Some(DmftSettings {
                t_star,
                tol,
                max_iter,
                mixing,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_h_step")]
    pub h_step: f64,
    #[serde(default = "default_oracle_tolerance")]
    pub tolerance: f64,
}

fn default_h_step() -> f64 {
    DEFAULT_H_STEP
}
fn default_oracle_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            h_step: DEFAULT_H_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Tabular,
    Structured,
    #[default]
    Both,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// Lists of values to take the cartesian product over. Missing lists keep the
/// base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<f64>,
    #[serde(default, rename = "U", alias = "u", skip_serializing_if = "Vec::is_empty")]
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_cut: Vec<usize>,
}

/// A validated run configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "U", alias = "u")]
    pub u: f64,
    pub w1: f64,
    pub bath: BathSpec,
    #[serde(default = "default_n_cut")]
    pub n_cut: usize,
    pub ell: Vec<i64>,
    #[serde(default = "default_routes")]
    pub routes: Vec<Route>,
    #[serde(default)]
    pub bse_solver: BseSolver,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_n_cut() -> usize {
    DEFAULT_N_CUT
}
fn default_routes() -> Vec<Route> {
    Route::ALL.to_vec()
}

/// Best-effort name of the key a TOML error points at.
fn key_at(source: &str, err: &toml::de::Error) -> Option<String> {
    let message = err.message();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(start) = message.find(marker) {
            let rest = &message[start + marker.len()..];
            if marker == "unknown variant `" {
                break;
            }
            return rest.split('`').next().map(str::to_owned);
        }
    }
    let span = err.span()?;
    let line_start = source[..span.start.min(source.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = source[line_start..].lines().next()?;
    let (key, _) = line.split_once('=')?;
    let key = key.trim().trim_matches('"');
    (!key.is_empty()).then(|| key.to_owned())
}

impl RunConfig {
    pub fn from_toml_str(source: &str) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(source).map_err(|err| ConfigError::Parse {
            key: key_at(source, &err),
            message: err.message().to_owned(),
        })?;
        config.normalize();
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    fn normalize(&mut self) {
        self.routes.sort();
        self.routes.dedup();
    }

    pub fn route_selection(&self) -> RouteSelection {
        RouteSelection {
            routes: self.routes.clone(),
            bse_solver: self.bse_solver,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(invalid("beta", "must be finite and positive"));
        }
        if !self.mu.is_finite() {
            return Err(invalid("mu", "must be finite"));
        }
        if !self.u.is_finite() {
            return Err(invalid("U", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.w1) {
            return Err(invalid("w1", "must lie in [0, 1]"));
        }
        if self.ell.is_empty() {
            return Err(invalid("ell", "needs at least one bosonic index"));
        }
        if self.ell.contains(&0) {
            return Err(invalid("ell", "the static component ell = 0 is not supported"));
        }
        if self.ell.iter().any(|l| l.unsigned_abs() > u32::MAX as u64) {
            return Err(invalid("ell", "index too large"));
        }
        let max_ell = self.ell.iter().map(|l| l.unsigned_abs() as usize).max().unwrap_or(0);
        if self.n_cut < 4 * max_ell {
            return Err(invalid(
                "n_cut",
                format!("must be at least 4 * max|ell| = {}", 4 * max_ell),
            ));
        }
        if self.n_cut > 1 << 20 {
            return Err(invalid("n_cut", "larger than 2^20 is not supported"));
        }
        if self.routes.is_empty() {
            return Err(invalid("routes", "select at least one route"));
        }
        match &self.bath {
            BathSpec::SingleLevel { coupling, level } => {
                if !coupling.is_finite() {
                    return Err(invalid("bath.coupling", "must be finite"));
                }
                if !level.is_finite() {
                    return Err(invalid("bath.level", "must be finite"));
                }
            }
            BathSpec::Dmft {
                t_star,
                tol,
                max_iter,
                mixing,
            } => {
                if !t_star.is_finite() {
                    return Err(invalid("bath.t_star", "must be finite"));
                }
                if !(*tol > 0.0) {
                    return Err(invalid("bath.tol", "must be positive"));
                }
                if *max_iter == 0 {
                    return Err(invalid("bath.max_iter", "must be at least 1"));
                }
                if !(*mixing > 0.0 && *mixing <= 1.0) {
                    return Err(invalid("bath.mixing", "must lie in (0, 1]"));
                }
            }
            BathSpec::Atomic | BathSpec::File { .. } => {}
        }
        if !(self.oracle.h_step > 0.0 && self.oracle.h_step.is_finite()) {
            return Err(invalid("oracle.h_step", "must be positive"));
        }
        if !(self.oracle.tolerance > 0.0) {
            return Err(invalid("oracle.tolerance", "must be positive"));
        }
        if let Some(sweep) = &self.sweep {
            for point in self.sweep_points_unchecked(sweep) {
                point.validate().map_err(|err| match err {
                    ConfigError::Invalid { key, reason } => ConfigError::Invalid {
                        key: format!("sweep.{key}"),
                        reason,
                    },
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    fn sweep_points_unchecked(&self, sweep: &SweepSpec) -> Vec<RunConfig> {
        fn or_base<T: Copy>(list: &[T], base: T) -> Vec<T> {
            if list.is_empty() {
                vec![base]
            } else {
                list.to_vec()
            }
        }
        let mut points = Vec::new();
        for &beta in &or_base(&sweep.beta, self.beta) {
            for &mu in &or_base(&sweep.mu, self.mu) {
                for &u in &or_base(&sweep.u, self.u) {
                    for &w1 in &or_base(&sweep.w1, self.w1) {
                        for &n_cut in &or_base(&sweep.n_cut, self.n_cut) {
                            points.push(RunConfig {
                                beta,
                                mu,
                                u,
                                w1,
                                n_cut,
                                sweep: None,
                                ..self.clone()
                            });
                        }
                    }
                }
            }
        }
        points
    }

    /// Single-point configs of the sweep in a fixed order: beta, mu, U, w1, n_cut,
    /// last varying fastest. Without a `[sweep]` table this is just `self`.
    pub fn sweep_points(&self) -> Vec<RunConfig> {
        match &self.sweep {
            Some(sweep) => self.sweep_points_unchecked(sweep),
            None => vec![self.clone()],
        }
    }
}

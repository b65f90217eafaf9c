//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use fatou_core::dynamics::{SliceSpec, DEFAULT_K_MAX, DEFAULT_NEWTON_TOL, MAX_RESOLUTION};
use fatou_core::fb_map::{DEFAULT_PSI_TOL, DEFAULT_THETA_TOL};
use fatou_core::Point;
use num_complex::Complex64;
use serde::Deserialize;

use crate::CliError;

/// A point as a list of `[re, im]` pairs.
pub type PointSpec = Vec<[f64; 2]>;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    pub origin: Option<PointSpec>,
    pub u: Option<PointSpec>,
    pub v: Option<PointSpec>,
    pub window: Option<[f64; 4]>,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    pub checks: Option<Vec<String>>,
    pub samples: Option<usize>,
    pub corrupt_normal_form: Option<bool>,
}

/// Everything a command may read. Unset fields fall back to defaults when
/// the command asks for them.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub example: Option<String>,
    /// Serialized polynomial germ `F(p + u) - p` (normalize only).
    pub germ: Option<PathBuf>,
    pub m: Option<u32>,
    pub k_max: Option<usize>,
    pub newton_tol: Option<f64>,
    pub psi_tol: Option<f64>,
    pub theta_tol: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub depth: Option<i64>,
    pub turns: Option<i32>,
    pub segments: Option<usize>,
    pub points: Option<Vec<PointSpec>>,
    pub slice: Option<SliceSection>,
    pub verify: Option<VerifySection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }

    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(DEFAULT_K_MAX)
    }

    pub fn newton_tol(&self) -> f64 {
        self.newton_tol.unwrap_or(DEFAULT_NEWTON_TOL)
    }

    pub fn psi_tol(&self) -> f64 {
        self.psi_tol.unwrap_or(DEFAULT_PSI_TOL)
    }

    pub fn theta_tol(&self) -> f64 {
        self.theta_tol.unwrap_or(DEFAULT_THETA_TOL)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn example_name(&self) -> Result<&str, CliError> {
        self.example
            .as_deref()
            .ok_or_else(|| CliError::Config("no example given (use --example or `example = ...` in the config)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        for (name, v) in [
            ("newton_tol", self.newton_tol),
            ("psi_tol", self.psi_tol),
            ("theta_tol", self.theta_tol),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(r) = self.slice.as_ref().and_then(|s| s.resolution) {
            if !(2..=MAX_RESOLUTION).contains(&r) {
                return Err(CliError::Config(format!("resolution must be in 2..={MAX_RESOLUTION}, got {r}")));
            }
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.m.is_some_and(|m| m < 2) {
            return Err(CliError::Config("m must be at least 2".into()));
        }
        Ok(())
    }

    /// The example's default slice with configured fields replaced.
    pub fn slice(&self, default: &SliceSpec) -> Result<SliceSpec, CliError> {
        let mut s = default.clone();
        if let Some(sec) = &self.slice {
            let dim = default.origin.len();
            if let Some(p) = &sec.origin {
                s.origin = to_point(p, dim)?;
            }
            if let Some(p) = &sec.u {
                s.u = to_point(p, dim)?;
            }
            if let Some(p) = &sec.v {
                s.v = to_point(p, dim)?;
            }
            if let Some(w) = sec.window {
                s.window = w;
            }
            if let Some(r) = sec.resolution {
                s.resolution = r;
            }
        }
        Ok(s)
    }
}

pub fn to_point(p: &PointSpec, dim: usize) -> Result<Point, CliError> {
    if p.len() != dim {
        return Err(CliError::Config(format!("point has {} coordinates, the example has dimension {dim}", p.len())));
    }
    Ok(Point::from_iterator(dim, p.iter().map(|[re, im]| Complex64::new(*re, *im))))
}

/// Parses `re,im;re,im;...`.
pub fn parse_point(s: &str) -> Result<PointSpec, CliError> {
    s.split(';')
        .map(|pair| {
            let parts: Vec<&str> = pair.split(',').map(str::trim).collect();
            match parts.as_slice() {
                [re, im] => Ok([parse_f64(re)?, parse_f64(im)?]),
                [re] => Ok([parse_f64(re)?, 0.0]),
                _ => Err(CliError::Config(format!("bad coordinate '{pair}', expected re,im"))),
            }
        })
        .collect()
}

/// Parses `s0,s1,t0,t1`.
pub fn parse_window(s: &str) -> Result<[f64; 4], CliError> {
    let v: Vec<f64> = s.split(',').map(|x| parse_f64(x.trim())).collect::<Result<_, _>>()?;
    <[f64; 4]>::try_from(v).map_err(|_| CliError::Config(format!("window '{s}' needs four numbers s0,s1,t0,t1")))
}

fn parse_f64(s: &str) -> Result<f64, CliError> {
    s.parse().map_err(|_| CliError::Config(format!("'{s}' is not a number")))
}

pub fn format_point(p: &Point) -> String {
    let parts: Vec<String> = p.iter().map(|z| format!("{:.15e},{:.15e}", z.re, z.im)).collect();
    parts.join(";")
}

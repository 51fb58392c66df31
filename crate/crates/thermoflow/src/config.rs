//! TOML experiment configuration for the batch driver.

use serde::Deserialize;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

use crate::dynamics::ThermostatSystem;
use crate::fields::{ConformalMetric, FieldTerm, SpectralScalarField, SpectralVectorField};

pub const MAX_BANDWIDTH: i32 = 64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Fourier term lists for the thermostat triple `(phi, f, e)`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default)]
    pub phi: Vec<FieldTerm>,
    #[serde(default)]
    pub f: Vec<FieldTerm>,
    #[serde(default)]
    pub e1: Vec<FieldTerm>,
    #[serde(default)]
    pub e2: Vec<FieldTerm>,
}

impl SystemConfig {
    pub fn build(&self) -> Arc<ThermostatSystem> {
        Arc::new(ThermostatSystem::new(
            ConformalMetric::new(SpectralScalarField::from_terms(&self.phi)),
            SpectralScalarField::from_terms(&self.f),
            SpectralVectorField::new(
                SpectralScalarField::from_terms(&self.e1),
                SpectralScalarField::from_terms(&self.e2),
            ),
        ))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for (name, terms) in [
            ("phi", &self.phi),
            ("f", &self.f),
            ("e1", &self.e1),
            ("e2", &self.e2),
        ] {
            for t in terms.iter() {
                if t.k1.abs() > MAX_BANDWIDTH || t.k2.abs() > MAX_BANDWIDTH {
                    return Err(invalid(format!(
                        "system.{name}: bandwidth |k| <= {MAX_BANDWIDTH} exceeded by ({}, {})",
                        t.k1, t.k2
                    )));
                }
                if !t.amplitude.is_finite() || !t.phase.is_finite() {
                    return Err(invalid(format!("system.{name}: non-finite term")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Initial conditions `[x1, x2, theta]`.
    pub initial: Vec<[f64; 3]>,
    pub t_span: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateScanConfig {
    /// Number of initial conditions (uniform headings at seeded base
    /// points).
    #[serde(default = "default_scan_ics")]
    pub initial_conditions: usize,
    pub horizon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_nx")]
    pub n_x: usize,
    #[serde(default = "default_ntheta")]
    pub n_theta: usize,
    /// Nodes for the sampled r-identities; 0 skips them.
    #[serde(default)]
    pub r_samples: usize,
    #[serde(default = "default_rtol")]
    pub r_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopfConfig {
    pub initial: [f64; 3],
    #[serde(default)]
    pub anchor: f64,
    #[serde(default = "default_span")]
    pub t_span: f64,
    #[serde(default = "default_b0")]
    pub b0: f64,
    #[serde(default = "default_bmax")]
    pub b_max: f64,
    #[serde(default = "default_rtol")]
    pub tol: f64,
    #[serde(default = "default_tol")]
    pub integrator_tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeConfig {
    /// Initial conditions for the conjugacy correspondence check; 0 skips
    /// it.
    #[serde(default)]
    pub initial_conditions: usize,
    #[serde(default = "default_gauge_horizon")]
    pub horizon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_match_tol")]
    pub match_tol: f64,
}

fn default_tol() -> f64 {
    1e-9
}
fn default_rtol() -> f64 {
    1e-6
}
fn default_scan_ics() -> usize {
    16
}
fn default_nx() -> usize {
    64
}
fn default_ntheta() -> usize {
    16
}
fn default_span() -> f64 {
    100.0
}
fn default_b0() -> f64 {
    8.0
}
fn default_bmax() -> f64 {
    1024.0
}
fn default_gauge_horizon() -> f64 {
    40.0
}
fn default_match_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub simulate: Option<SimulateConfig>,
    pub conjugate_scan: Option<ConjugateScanConfig>,
    pub verify: Option<VerifyConfig>,
    pub hopf: Option<HopfConfig>,
    pub gauge: Option<GaugeConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Load a config and return it with the SHA-256 of the raw bytes,
    /// which reports embed for reproducibility.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config = Self::parse(&text)?;
        use sha2::{Digest, Sha256};
        let hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        Ok((config, hash))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        self.system.validate()?;
        let check_tol = |name: &str, tol: f64| -> Result<(), ConfigError> {
            if !(tol > 0.0) || !tol.is_finite() {
                Err(invalid(format!("{name}: tolerance must be positive")))
            } else {
                Ok(())
            }
        };
        if let Some(sim) = &self.simulate {
            check_tol("simulate.tol", sim.tol)?;
            if sim.initial.is_empty() {
                return Err(invalid("simulate.initial: need at least one"));
            }
            if !(sim.t_span > 0.0) {
                return Err(invalid("simulate.t_span must be positive"));
            }
        }
        if let Some(scan) = &self.conjugate_scan {
            check_tol("conjugate_scan.tol", scan.tol)?;
            if !(scan.horizon > 0.0) {
                return Err(invalid("conjugate_scan.horizon must be positive"));
            }
            if scan.initial_conditions == 0 {
                return Err(invalid("conjugate_scan.initial_conditions must be > 0"));
            }
        }
        if let Some(v) = &self.verify {
            check_tol("verify.r_tol", v.r_tol)?;
            for (name, n) in [("verify.n_x", v.n_x), ("verify.n_theta", v.n_theta)] {
                if !n.is_power_of_two() {
                    return Err(invalid(format!("{name}: resolution must be a power of two")));
                }
            }
        }
        if let Some(h) = &self.hopf {
            check_tol("hopf.tol", h.tol)?;
            check_tol("hopf.integrator_tol", h.integrator_tol)?;
            if !(h.b0 > 0.0 && h.b_max >= h.b0) {
                return Err(invalid("hopf: need 0 < b0 <= b_max"));
            }
            if h.t_span < h.anchor + h.b0 {
                return Err(invalid("hopf.t_span too short for the b-schedule"));
            }
        }
        if let Some(g) = &self.gauge {
            check_tol("gauge.tol", g.tol)?;
            check_tol("gauge.match_tol", g.match_tol)?;
            if !(g.horizon > 0.0) {
                return Err(invalid("gauge.horizon must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
[system]
phi = [{ k1 = 1, k2 = 0, amplitude = 0.3 }]
f = []
e1 = [{ k1 = 0, k2 = 1, amplitude = 0.5, phase = 1.2 }]

[simulate]
initial = [[0.0, 0.0, 0.5]]
t_span = 10.0
tol = 1e-9

[verify]
n_x = 32
n_theta = 8
"#;

    #[test]
    fn parses_and_builds() {
        let config = ExperimentConfig::parse(GOOD).unwrap();
        let system = config.system.build();
        assert!((system.metric().phi_at([0.0, 0.0]) - 0.3).abs() < 1e-12);
        assert!(system.f().is_zero(0.0));
        let sim = config.simulate.unwrap();
        assert_eq!(sim.initial.len(), 1);
        assert_eq!(config.verify.unwrap().n_theta, 8);
    }

    #[test]
    fn rejects_bad_configs() {
        // Unknown key.
        assert!(ExperimentConfig::parse("[system]\nbogus = 1\n").is_err());
        // Excessive bandwidth.
        let text = "[system]\nphi = [{ k1 = 65, k2 = 0, amplitude = 0.1 }]\n";
        assert!(matches!(
            ExperimentConfig::parse(text),
            Err(ConfigError::Invalid(_))
        ));
        // Non-positive tolerance.
        let text = "[system]\n[simulate]\ninitial = [[0.0,0.0,0.0]]\nt_span = 1.0\ntol = -1e-9\n";
        assert!(ExperimentConfig::parse(text).is_err());
        // Resolution not a power of two.
        let text = "[system]\n[verify]\nn_x = 48\n";
        assert!(ExperimentConfig::parse(text).is_err());
        // t_span shorter than the b-schedule start.
        let text = "[system]\n[hopf]\ninitial = [0.0,0.0,0.0]\nt_span = 4.0\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn load_reports_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, GOOD).unwrap();
        let (_, hash) = ExperimentConfig::load(&path).unwrap();
        assert_eq!(hash.len(), 64);
        let (_, hash2) = ExperimentConfig::load(&path).unwrap();
        assert_eq!(hash, hash2);
    }
}

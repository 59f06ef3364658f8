//! TOML experiment configuration. Every frequency in the file is an ordinary
//! frequency in Hz and is converted to rad/s on load.
//!
//! ```toml
//! [cavity]
//! linewidth_hz = 2.75e6
//! detuning_hz = -1.85e6
//!
//! [mechanics]
//! frequency_hz = 1.48e6
//! q_factor = 3.8e8
//! bath_temperature_k = 8.8
//!
//! [drive]
//! gamma_opt_hz = 11e3
//!
//! [detection]
//! efficiency = 0.025
//! dark_rate_hz = 15.5
//! ```

use serde::{Deserialize, Serialize};

use crate::clicks::{DetectionChain, DEFAULT_DEAD_TIME};
use crate::error::{Error, Result};
use crate::filter::{FilterChain, FilterStage};
use crate::optomech::{
    hz_to_angular, DriveSetting, MechanicalMode, OccupancyModel, OpticalCavity, OptomechanicalConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub linewidth_hz: f64,
    pub detuning_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g0_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcoupling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicsSection {
    pub frequency_hz: f64,
    pub q_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath_temperature_k: Option<f64>,
    /// Used instead of a temperature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_th: Option<f64>,
    #[serde(default)]
    pub occupancy_model: OccupancyModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_mass_kg: Option<f64>,
}

/// Exactly one of `gamma_opt_hz`, `coupling_hz` (g/2π) or `photon_number`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_opt_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_number: Option<f64>,
    /// Optical-broadening sweep for tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_opt_grid_hz: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSection {
    /// Total efficiency; alternative to `components`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentEntry>,
    pub dark_rate_hz: f64,
    #[serde(default = "default_dead_time")]
    pub dead_time_s: f64,
    #[serde(default)]
    pub afterpulse_prob: f64,
}

fn default_dead_time() -> f64 {
    DEFAULT_DEAD_TIME
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_stages")]
    pub stages: usize,
    pub linewidth_hz: f64,
    /// Defaults to the mechanical frequency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_detuning_hz: Option<f64>,
    #[serde(default = "one")]
    pub peak_transmission: f64,
    #[serde(default = "one")]
    pub chain_insertion: f64,
}

fn default_stages() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

/// The file as written, before unit conversion and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub cavity: CavitySection,
    pub mechanics: MechanicsSection,
    #[serde(default)]
    pub drive: DriveSection,
    pub detection: DetectionSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSection>,
}

/// Command-line values that replace the file's.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Overrides {
    pub gamma_opt_hz: Option<f64>,
    pub detuning_hz: Option<f64>,
    pub filter_linewidth_hz: Option<f64>,
    pub dark_rate_hz: Option<f64>,
}

impl RawConfig {
    pub fn reference() -> Self {
        RawConfig {
            cavity: CavitySection {
                linewidth_hz: 2.75e6,
                detuning_hz: -1.85e6,
                g0_hz: Some(50.0),
                wavelength_m: Some(852e-9),
                outcoupling: Some(0.75),
            },
            mechanics: MechanicsSection {
                frequency_hz: 1.48e6,
                q_factor: 3.8e8,
                bath_temperature_k: Some(8.8),
                n_th: None,
                occupancy_model: OccupancyModel::HighTemperature,
                effective_mass_kg: None,
            },
            drive: DriveSection {
                gamma_opt_hz: Some(11e3),
                ..DriveSection::default()
            },
            detection: DetectionSection {
                efficiency: Some(0.025),
                components: Vec::new(),
                dark_rate_hz: 15.5,
                dead_time_s: DEFAULT_DEAD_TIME,
                afterpulse_prob: 0.0,
            },
            filter: Some(FilterSection {
                stages: 4,
                linewidth_hz: 30e3,
                center_detuning_hz: None,
                peak_transmission: 1.0,
                chain_insertion: 1.0,
            }),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| format!("@{}..{}", s.start, s.end)).unwrap_or_default();
            Error::Config {
                key: if key.is_empty() { "<file>".into() } else { key },
                reason: e.message().to_string(),
            }
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(g) = o.gamma_opt_hz {
            self.drive.gamma_opt_hz = Some(g);
            self.drive.coupling_hz = None;
            self.drive.photon_number = None;
        }
        if let Some(d) = o.detuning_hz {
            self.cavity.detuning_hz = d;
        }
        if let Some(k) = o.filter_linewidth_hz {
            match &mut self.filter {
                Some(f) => f.linewidth_hz = k,
                None => {
                    self.filter = Some(FilterSection {
                        stages: default_stages(),
                        linewidth_hz: k,
                        center_detuning_hz: None,
                        peak_transmission: 1.0,
                        chain_insertion: 1.0,
                    })
                }
            }
        }
        if let Some(d) = o.dark_rate_hz {
            self.detection.dark_rate_hz = d;
        }
    }

    pub fn resolve(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_raw(self)
    }
}

/// Validated configuration in angular units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub optomech: OptomechanicalConfig,
    pub detection: DetectionChain,
    pub filter: FilterChain,
    /// rad/s; empty when the file gives none.
    pub gamma_opt_grid: Vec<f64>,
    pub raw: RawConfig,
}

fn at(key: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::InvalidParameter { reason, .. } => Error::Config {
            key: key.to_string(),
            reason,
        },
        Error::DegenerateDetuning { .. } => Error::Config {
            key: key.to_string(),
            reason: e.to_string(),
        },
        other => other,
    }
}

fn finite(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config {
            key: key.into(),
            reason: format!("must be finite, got {v}"),
        })
    }
}

impl ExperimentConfig {
    pub fn reference() -> Self {
        RawConfig::reference().resolve().expect("reference config is valid")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::load_with(path, &Overrides::default())
    }

    pub fn load_with(path: &std::path::Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut raw = RawConfig::from_toml_str(&text)?;
        raw.apply(overrides);
        raw.resolve()
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let c = &raw.cavity;
        let mut cavity = OpticalCavity::new(
            hz_to_angular(finite("cavity.linewidth_hz", c.linewidth_hz)?),
            hz_to_angular(finite("cavity.detuning_hz", c.detuning_hz)?),
        )
        .map_err(|e| match &e {
            Error::InvalidParameter { name, .. } if name == "kappa" => at("cavity.linewidth_hz")(e),
            _ => at("cavity.detuning_hz")(e),
        })?;
        if let Some(g0) = c.g0_hz {
            cavity.g0 = hz_to_angular(finite("cavity.g0_hz", g0)?);
        }
        if let Some(w) = c.wavelength_m {
            cavity.wavelength = w;
        }
        if let Some(o) = c.outcoupling {
            cavity.outcoupling = o;
        }
        cavity.validate().map_err(at("cavity"))?;
        if cavity.detuning >= 0.0 {
            return Err(Error::Config {
                key: "cavity.detuning_hz".into(),
                reason: format!(
                    "degenerate detuning: drive must be red-detuned (< 0) for net cooling, got {} Hz",
                    c.detuning_hz
                ),
            });
        }

        let m = &raw.mechanics;
        let omega_m = hz_to_angular(m.frequency_hz);
        let mut mode = match (m.bath_temperature_k, m.n_th) {
            (Some(t), None) => MechanicalMode::with_temperature(omega_m, m.q_factor, t, m.occupancy_model),
            (None, Some(n)) => MechanicalMode::with_occupancy(omega_m, m.q_factor, n),
            _ => {
                return Err(Error::Config {
                    key: "mechanics".into(),
                    reason: "give exactly one of bath_temperature_k or n_th".into(),
                })
            }
        }
        .map_err(|e| match &e {
            Error::InvalidParameter { name, .. } => at(match name.as_str() {
                "omega_m" => "mechanics.frequency_hz",
                "q_factor" => "mechanics.q_factor",
                "n_th" => "mechanics.n_th",
                _ => "mechanics.bath_temperature_k",
            })(e),
            _ => e,
        })?;
        mode.effective_mass = m.effective_mass_kg;

        let d = &raw.drive;
        let drive = match (d.gamma_opt_hz, d.coupling_hz, d.photon_number) {
            (Some(g), None, None) => {
                DriveSetting::for_gamma_opt(&cavity, &mode, hz_to_angular(g)).map_err(at("drive.gamma_opt_hz"))?
            }
            (None, Some(g), None) => {
                let g = hz_to_angular(g);
                DriveSetting::new(g * g).map_err(at("drive.coupling_hz"))?
            }
            (None, None, Some(n)) => {
                DriveSetting::from_photon_number(cavity.g0, n).map_err(at("drive.photon_number"))?
            }
            _ => {
                return Err(Error::Config {
                    key: "drive".into(),
                    reason: "give exactly one of gamma_opt_hz, coupling_hz or photon_number".into(),
                })
            }
        };
        let mut gamma_opt_grid = Vec::new();
        for (i, &g) in d.gamma_opt_grid_hz.iter().flatten().enumerate() {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::Config {
                    key: format!("drive.gamma_opt_grid_hz[{i}]"),
                    reason: format!("must be > 0, got {g}"),
                });
            }
            gamma_opt_grid.push(hz_to_angular(g));
        }

        let det = &raw.detection;
        let dead = det.dead_time_s;
        let mut detection = match (det.efficiency, det.components.is_empty()) {
            (Some(eta), true) => {
                DetectionChain::with_efficiency(eta, det.dark_rate_hz, dead).map_err(keyed_detection)?
            }
            (None, false) => DetectionChain::from_components(
                det.components.iter().map(|c| (c.name.clone(), c.fraction)).collect(),
                det.dark_rate_hz,
                dead,
            )
            .map_err(keyed_detection)?,
            _ => {
                return Err(Error::Config {
                    key: "detection".into(),
                    reason: "give exactly one of efficiency or components".into(),
                })
            }
        };
        detection.afterpulse_prob = det.afterpulse_prob;
        detection.validate().map_err(keyed_detection)?;

        let f = raw.filter.clone().unwrap_or(FilterSection {
            stages: 4,
            linewidth_hz: 30e3,
            center_detuning_hz: None,
            peak_transmission: 1.0,
            chain_insertion: 1.0,
        });
        if f.stages == 0 {
            return Err(Error::Config {
                key: "filter.stages".into(),
                reason: "must be >= 1".into(),
            });
        }
        let stage = FilterStage::new(hz_to_angular(f.linewidth_hz), f.peak_transmission).map_err(|e| match &e {
            Error::InvalidParameter { name, .. } if name.contains("linewidth") => at("filter.linewidth_hz")(e),
            _ => at("filter.peak_transmission")(e),
        })?;
        let center = f.center_detuning_hz.map(hz_to_angular).unwrap_or(omega_m);
        let filter = FilterChain::new(vec![stage; f.stages], center, f.chain_insertion).map_err(|e| match &e {
            Error::InvalidParameter { name, .. } if name.contains("insertion") => at("filter.chain_insertion")(e),
            _ => at("filter.center_detuning_hz")(e),
        })?;

        Ok(ExperimentConfig {
            optomech: OptomechanicalConfig { cavity, mode, drive },
            detection,
            filter,
            gamma_opt_grid,
            raw: raw.clone(),
        })
    }

    /// Same experiment at another optical broadening (rad/s).
    pub fn with_gamma_opt(&self, gamma_opt: f64) -> Result<OptomechanicalConfig> {
        self.optomech.with_gamma_opt(gamma_opt).map_err(at("drive.gamma_opt_hz"))
    }
}

fn keyed_detection(e: Error) -> Error {
    match &e {
        Error::InvalidParameter { name, .. } => {
            let key = match name.as_str() {
                "dark_rate" => "detection.dark_rate_hz",
                "dead_time" => "detection.dead_time_s",
                "afterpulse_prob" => "detection.afterpulse_prob",
                n if n.contains("`overall`") => "detection.efficiency",
                _ => "detection.components",
            };
            at(key)(e)
        }
        _ => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_matches_built_in_operating_point() {
        let cfg = ExperimentConfig::reference();
        let built = OptomechanicalConfig::reference(11e3).unwrap();
        assert_relative_eq!(
            cfg.optomech.drive.coupling_strength_sq,
            built.drive.coupling_strength_sq,
            max_relative = 1e-12
        );
        assert_eq!(cfg.optomech.cavity, built.cavity);
        assert_relative_eq!(cfg.detection.efficiency_total(), 0.025);
        assert_eq!(cfg.filter.stages.len(), 4);
        assert_eq!(cfg.filter.center_detuning, hz_to_angular(1.48e6));
    }

    #[test]
    fn toml_round_trip() {
        let raw = RawConfig::reference();
        let text = raw.to_toml_string();
        let back = RawConfig::from_toml_str(&text).unwrap();
        assert_eq!(raw, back);
    }

    #[test]
    fn minimal_file() {
        let text = r#"
            [cavity]
            linewidth_hz = 2.75e6
            detuning_hz = -1.85e6
            [mechanics]
            frequency_hz = 1.48e6
            q_factor = 3.8e8
            bath_temperature_k = 8.8
            [drive]
            gamma_opt_hz = 255
            [detection]
            efficiency = 0.025
            dark_rate_hz = 15.5
        "#;
        let cfg = RawConfig::from_toml_str(text).unwrap().resolve().unwrap();
        let p = cfg.optomech.predict().unwrap();
        assert_relative_eq!(p.gamma_opt, hz_to_angular(255.0), max_relative = 1e-9);
        assert_eq!(cfg.detection.dead_time, DEFAULT_DEAD_TIME);
    }

    #[test]
    fn overrides_win() {
        let mut raw = RawConfig::reference();
        raw.apply(&Overrides {
            gamma_opt_hz: Some(2.1e3),
            detuning_hz: Some(-1.48e6),
            filter_linewidth_hz: Some(300.0),
            dark_rate_hz: Some(0.0),
        });
        let cfg = raw.resolve().unwrap();
        assert_relative_eq!(cfg.optomech.rates().gamma_opt(), hz_to_angular(2.1e3), max_relative = 1e-9);
        assert_eq!(cfg.optomech.cavity.detuning, hz_to_angular(-1.48e6));
        assert_eq!(cfg.filter.stages[0].linewidth_kf, hz_to_angular(300.0));
        assert_eq!(cfg.detection.dark_rate, 0.0);
    }

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn errors_carry_key_paths() {
        let mut raw = RawConfig::reference();
        raw.cavity.detuning_hz = 1.85e6;
        assert_eq!(key_of(raw.resolve().unwrap_err()), "cavity.detuning_hz");

        let mut raw = RawConfig::reference();
        raw.mechanics.q_factor = -1.0;
        assert_eq!(key_of(raw.resolve().unwrap_err()), "mechanics.q_factor");

        let mut raw = RawConfig::reference();
        raw.detection.efficiency = Some(1.5);
        assert_eq!(key_of(raw.resolve().unwrap_err()), "detection.efficiency");

        let mut raw = RawConfig::reference();
        raw.drive.coupling_hz = Some(1e3);
        assert_eq!(key_of(raw.resolve().unwrap_err()), "drive");

        let mut raw = RawConfig::reference();
        raw.drive.gamma_opt_grid_hz = Some(vec![255.0, -1.0]);
        assert_eq!(key_of(raw.resolve().unwrap_err()), "drive.gamma_opt_grid_hz[1]");

        let mut raw = RawConfig::reference();
        raw.filter.as_mut().unwrap().linewidth_hz = 0.0;
        assert_eq!(key_of(raw.resolve().unwrap_err()), "filter.linewidth_hz");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = RawConfig::reference().to_toml_string();
        text.push_str("\n[bogus]\nx = 1\n");
        assert!(matches!(RawConfig::from_toml_str(&text), Err(Error::Config { .. })));
    }
}

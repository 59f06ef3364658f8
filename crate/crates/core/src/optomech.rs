//! Raman scattering rates and steady-state phonon occupancy of a
//! sideband-cooled mechanical mode.
//!
//! Every frequency and rate in this module is angular (rad/s). The transition
//! rates `A±` come out as event fluxes in 1/s. Use [`hz_to_angular`] when
//! starting from ordinary frequencies.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_fraction, ensure_positive, Error, Result};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;

pub fn hz_to_angular(hz: f64) -> f64 {
    2.0 * PI * hz
}

pub fn angular_to_hz(rad_per_s: f64) -> f64 {
    rad_per_s / (2.0 * PI)
}

/// How the bath occupancy is derived from a temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OccupancyModel {
    /// `k_B T / (ħ Ω_m)`.
    #[default]
    HighTemperature,
    /// `1 / (exp(ħ Ω_m / k_B T) - 1)`.
    BoseEinstein,
}

impl OccupancyModel {
    pub fn occupancy(self, omega_m: f64, temperature: f64) -> f64 {
        let x = HBAR * omega_m / (K_B * temperature);
        match self {
            OccupancyModel::HighTemperature => 1.0 / x,
            OccupancyModel::BoseEinstein => 1.0 / x.exp_m1(),
        }
    }

    /// d n_th / dT at the given temperature.
    pub fn occupancy_slope(self, omega_m: f64, temperature: f64) -> f64 {
        match self {
            OccupancyModel::HighTemperature => K_B / (HBAR * omega_m),
            OccupancyModel::BoseEinstein => {
                let x = HBAR * omega_m / (K_B * temperature);
                let em1 = x.exp_m1();
                x.exp() * x / (temperature * em1 * em1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    pub omega_m: f64,
    pub q_factor: f64,
    /// Angular energy decay rate, always `omega_m / q_factor`.
    pub gamma_m: f64,
    pub bath_temperature: Option<f64>,
    pub n_th: f64,
    pub occupancy_model: OccupancyModel,
    /// Metadata only.
    pub effective_mass: Option<f64>,
}

impl MechanicalMode {
    /// Mode with an explicitly given bath occupancy.
    pub fn with_occupancy(omega_m: f64, q_factor: f64, n_th: f64) -> Result<Self> {
        ensure_positive("omega_m", omega_m)?;
        ensure_positive("q_factor", q_factor)?;
        if !(n_th.is_finite() && n_th >= 0.0) {
            return Err(Error::invalid("n_th", format!("must be >= 0, got {n_th}")));
        }
        Ok(MechanicalMode {
            omega_m,
            q_factor,
            gamma_m: omega_m / q_factor,
            bath_temperature: None,
            n_th,
            occupancy_model: OccupancyModel::HighTemperature,
            effective_mass: None,
        })
    }

    pub fn with_temperature(
        omega_m: f64,
        q_factor: f64,
        temperature: f64,
        model: OccupancyModel,
    ) -> Result<Self> {
        ensure_positive("bath_temperature", temperature)?;
        let mut mode = Self::with_occupancy(omega_m, q_factor, 0.0)?;
        mode.bath_temperature = Some(temperature);
        mode.occupancy_model = model;
        mode.n_th = model.occupancy(omega_m, temperature);
        Ok(mode)
    }

    /// Same mode with a different bath temperature (occupancy recomputed).
    pub fn at_temperature(&self, temperature: f64) -> Result<Self> {
        let mut mode =
            Self::with_temperature(self.omega_m, self.q_factor, temperature, self.occupancy_model)?;
        mode.effective_mass = self.effective_mass;
        Ok(mode)
    }

    /// Phonon flux from the bath into the mode, `n_th · Γ_m` (1/s).
    pub fn bath_flux(&self) -> f64 {
        self.n_th * self.gamma_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalCavity {
    pub kappa: f64,
    /// Drive detuning, negative on the red side.
    pub detuning: f64,
    pub g0: f64,
    pub wavelength: f64,
    pub outcoupling: f64,
}

impl OpticalCavity {
    pub fn new(kappa: f64, detuning: f64) -> Result<Self> {
        ensure_positive("kappa", kappa)?;
        if !detuning.is_finite() {
            return Err(Error::invalid("detuning", "must be finite"));
        }
        Ok(OpticalCavity {
            kappa,
            detuning,
            g0: 0.0,
            wavelength: 0.0,
            outcoupling: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("kappa", self.kappa)?;
        ensure_fraction("outcoupling", self.outcoupling)
    }

    /// `(Δ - Ω_m)² + κ²/4`, the Lorentzian denominator of the heating (Stokes) process.
    pub fn stokes_denominator(&self, omega_m: f64) -> f64 {
        let d = self.detuning - omega_m;
        d * d + self.kappa * self.kappa / 4.0
    }

    /// `(Δ + Ω_m)² + κ²/4`, the denominator of the cooling (anti-Stokes) process.
    pub fn antistokes_denominator(&self, omega_m: f64) -> f64 {
        let d = self.detuning + omega_m;
        d * d + self.kappa * self.kappa / 4.0
    }
}

/// Drive strength as the product `g0² · n_cav` (rad²/s²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSetting {
    pub coupling_strength_sq: f64,
}

impl DriveSetting {
    pub fn new(coupling_strength_sq: f64) -> Result<Self> {
        if !(coupling_strength_sq.is_finite() && coupling_strength_sq >= 0.0) {
            return Err(Error::invalid(
                "coupling_strength_sq",
                format!("must be >= 0, got {coupling_strength_sq}"),
            ));
        }
        Ok(DriveSetting {
            coupling_strength_sq,
        })
    }

    pub fn from_photon_number(g0: f64, n_cav: f64) -> Result<Self> {
        Self::new(g0 * g0 * n_cav)
    }

    /// Drive that produces the requested optical broadening `A₋ - A₊`.
    pub fn for_gamma_opt(cavity: &OpticalCavity, mode: &MechanicalMode, gamma_opt: f64) -> Result<Self> {
        if !(gamma_opt.is_finite() && gamma_opt >= 0.0) {
            return Err(Error::invalid("gamma_opt", format!("must be >= 0, got {gamma_opt}")));
        }
        let per_unit = transition_rates(cavity, mode, &DriveSetting::unit()).gamma_opt();
        if per_unit <= 0.0 {
            let r = transition_rates(cavity, mode, &DriveSetting::unit());
            return Err(Error::DegenerateDetuning {
                a_plus: r.a_plus,
                a_minus: r.a_minus,
            });
        }
        Self::new(gamma_opt / per_unit)
    }

    /// Drive that puts the steady-state occupancy at `n_target`, which must
    /// lie strictly between the back-action limit and the bath occupancy.
    pub fn for_occupancy(cavity: &OpticalCavity, mode: &MechanicalMode, n_target: f64) -> Result<Self> {
        let n_ba = backaction_limit(cavity, mode)?;
        if !(n_target > n_ba && n_target <= mode.n_th) {
            return Err(Error::invalid(
                "n_target",
                format!("must lie in ({n_ba}, {}], got {n_target}", mode.n_th),
            ));
        }
        // n (Γ_opt + Γ_m) = Γ_opt n_ba + n_th Γ_m, since A₊ = n_ba Γ_opt.
        let gamma_opt = (mode.bath_flux() - n_target * mode.gamma_m) / (n_target - n_ba);
        Self::for_gamma_opt(cavity, mode, gamma_opt)
    }

    fn unit() -> Self {
        DriveSetting {
            coupling_strength_sq: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRates {
    /// Upward (heating, Stokes) rate, 1/s.
    pub a_plus: f64,
    /// Downward (cooling, anti-Stokes) rate, 1/s.
    pub a_minus: f64,
}

impl TransitionRates {
    pub fn gamma_opt(&self) -> f64 {
        self.a_minus - self.a_plus
    }
}

pub fn transition_rates(
    cavity: &OpticalCavity,
    mode: &MechanicalMode,
    drive: &DriveSetting,
) -> TransitionRates {
    let g2k = drive.coupling_strength_sq * cavity.kappa;
    TransitionRates {
        a_plus: g2k / cavity.stokes_denominator(mode.omega_m),
        a_minus: g2k / cavity.antistokes_denominator(mode.omega_m),
    }
}

/// `(A₋/A₊ - 1)⁻¹`, independent of drive strength.
pub fn backaction_limit(cavity: &OpticalCavity, mode: &MechanicalMode) -> Result<f64> {
    let ds = cavity.stokes_denominator(mode.omega_m);
    let das = cavity.antistokes_denominator(mode.omega_m);
    if ds <= das {
        return Err(Error::DegenerateDetuning {
            a_plus: cavity.kappa / ds,
            a_minus: cavity.kappa / das,
        });
    }
    // A₋/A₊ = ds/das
    Ok(das / (ds - das))
}

pub fn steady_state_occupancy(rates: &TransitionRates, mode: &MechanicalMode) -> Result<f64> {
    let gamma_opt = rates.gamma_opt();
    if gamma_opt + mode.gamma_m <= 0.0 || (rates.a_plus > 0.0 && gamma_opt <= 0.0) {
        return Err(Error::DegenerateDetuning {
            a_plus: rates.a_plus,
            a_minus: rates.a_minus,
        });
    }
    Ok((rates.a_plus + mode.bath_flux()) / (gamma_opt + mode.gamma_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidebandFluxes {
    pub stokes: f64,
    pub antistokes: f64,
}

impl SidebandFluxes {
    /// Raman ratio `Γ_AS / Γ_S`.
    pub fn ratio(&self) -> f64 {
        self.antistokes / self.stokes
    }
}

/// Photon fluxes leaving the cavity on each sideband, before detection losses.
pub fn sideband_fluxes(rates: &TransitionRates, n_bar: f64) -> SidebandFluxes {
    SidebandFluxes {
        stokes: (n_bar + 1.0) * rates.a_plus,
        antistokes: n_bar * rates.a_minus,
    }
}

/// Quantum cooperativity `4 g² / (Γ_m κ n_th)`.
pub fn cooperativity(cavity: &OpticalCavity, mode: &MechanicalMode, drive: &DriveSetting) -> f64 {
    4.0 * drive.coupling_strength_sq / (mode.gamma_m * cavity.kappa * mode.n_th)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTimes {
    pub t1: f64,
    pub t2: f64,
}

pub fn coherence_times(mode: &MechanicalMode) -> CoherenceTimes {
    CoherenceTimes {
        t1: 1.0 / mode.gamma_m,
        t2: 1.0 / mode.bath_flux(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLimits {
    /// Raman ratio approached when thermal noise dominates (`C_q ≪ 1`).
    pub r_thermal: f64,
    /// Sideband flux per unit `g0² n_cav` when back-action dominates (`C_q ≫ 1`).
    pub flux_qba_slope: f64,
}

pub fn regime_limits(cavity: &OpticalCavity, mode: &MechanicalMode) -> RegimeLimits {
    RegimeLimits {
        r_thermal: cavity.stokes_denominator(mode.omega_m)
            / cavity.antistokes_denominator(mode.omega_m),
        flux_qba_slope: cavity.kappa / (4.0 * cavity.detuning.abs() * mode.omega_m),
    }
}

/// Everything the rate model predicts for one drive setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePrediction {
    pub a_plus: f64,
    pub a_minus: f64,
    pub gamma_opt: f64,
    pub n_bar: f64,
    pub n_ba: f64,
    pub c_q: f64,
    pub flux_stokes: f64,
    pub flux_antistokes: f64,
}

impl RatePrediction {
    pub fn ratio(&self) -> f64 {
        self.flux_antistokes / self.flux_stokes
    }
}

pub fn predict(cavity: &OpticalCavity, mode: &MechanicalMode, drive: &DriveSetting) -> Result<RatePrediction> {
    let rates = transition_rates(cavity, mode, drive);
    let n_ba = backaction_limit(cavity, mode)?;
    let n_bar = steady_state_occupancy(&rates, mode)?;
    let fluxes = sideband_fluxes(&rates, n_bar);
    Ok(RatePrediction {
        a_plus: rates.a_plus,
        a_minus: rates.a_minus,
        gamma_opt: rates.gamma_opt(),
        n_bar,
        n_ba,
        c_q: cooperativity(cavity, mode, drive),
        flux_stokes: fluxes.stokes,
        flux_antistokes: fluxes.antistokes,
    })
}

/// Cavity, mechanical mode and drive for one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptomechanicalConfig {
    pub cavity: OpticalCavity,
    pub mode: MechanicalMode,
    pub drive: DriveSetting,
}

impl OptomechanicalConfig {
    /// The 1.48 MHz soft-clamped membrane in a 2.75 MHz cavity, driven
    /// 1.85 MHz red of resonance, 8.8 K bath, Q = 3.8e8, at the given optical broadening (Hz).
    pub fn reference(gamma_opt_hz: f64) -> Result<Self> {
        let mut cavity = OpticalCavity::new(hz_to_angular(2.75e6), hz_to_angular(-1.85e6))?;
        cavity.g0 = hz_to_angular(50.0);
        cavity.wavelength = 852e-9;
        cavity.outcoupling = 0.75;
        let mode = MechanicalMode::with_temperature(
            hz_to_angular(1.48e6),
            3.8e8,
            8.8,
            OccupancyModel::HighTemperature,
        )?;
        let drive = DriveSetting::for_gamma_opt(&cavity, &mode, hz_to_angular(gamma_opt_hz))?;
        Ok(OptomechanicalConfig { cavity, mode, drive })
    }

    pub fn with_gamma_opt(&self, gamma_opt: f64) -> Result<Self> {
        Ok(OptomechanicalConfig {
            drive: DriveSetting::for_gamma_opt(&self.cavity, &self.mode, gamma_opt)?,
            ..*self
        })
    }

    pub fn rates(&self) -> TransitionRates {
        transition_rates(&self.cavity, &self.mode, &self.drive)
    }

    pub fn predict(&self) -> Result<RatePrediction> {
        predict(&self.cavity, &self.mode, &self.drive)
    }
}

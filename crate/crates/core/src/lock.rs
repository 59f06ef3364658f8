//! Filter-cavity lock lifecycle: sequential acquisition (scan, side-of-fringe,
//! dither lock), frozen-lock drift, relocking, and duty-cycle statistics.
//!
//! Each cavity's free-running detuning is an independent Wiener process plus
//! an optional linear drift whose sign is redrawn for every segment. The
//! controller is a discrete-time PI loop running at the dither update rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::filter::{lorentzian, FilterChain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CavityLockState {
    Scanning,
    SideLock,
    DitherLock,
    Frozen,
    Relocking,
}

impl CavityLockState {
    pub fn can_transition_to(self, next: CavityLockState) -> bool {
        use CavityLockState::*;
        self == next
            || matches!(
                (self, next),
                (Scanning, SideLock)
                    | (SideLock, DitherLock)
                    | (DitherLock, Frozen)
                    | (Frozen, Relocking)
                    | (Relocking, DitherLock)
            )
    }

    /// Dither-locked, or in a state only reachable after it.
    pub fn has_acquired(self) -> bool {
        matches!(
            self,
            CavityLockState::DitherLock | CavityLockState::Frozen | CavityLockState::Relocking
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CavityLockState::Scanning => "SCANNING",
            CavityLockState::SideLock => "SIDE_LOCK",
            CavityLockState::DitherLock => "DITHER_LOCK",
            CavityLockState::Frozen => "FROZEN",
            CavityLockState::Relocking => "RELOCKING",
        }
    }
}

/// Snapshot of all cavities at one controller tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockState {
    pub time: f64,
    pub states: Vec<CavityLockState>,
    /// Detuning of each cavity from the common lock point, rad/s.
    pub detunings: Vec<f64>,
    /// Controller integrator (actuator offset), rad/s.
    pub integrators: Vec<f64>,
}

impl LockState {
    pub fn transmission(&self, chain: &FilterChain) -> f64 {
        relative_transmission(chain, &self.detunings)
    }
}

/// Product of each stage's Lorentzian at its own detuning.
pub fn relative_transmission(chain: &FilterChain, detunings: &[f64]) -> f64 {
    chain
        .stages
        .iter()
        .zip(detunings)
        .map(|(s, &d)| lorentzian(d, s.linewidth_kf))
        .product()
}

/// Shipped drift calibration for 30 kHz stages, in units where detuning is
/// measured in half-linewidths: diffusion in 1/s, linear drift in 1/s.
pub const CALIBRATED_DIFFUSION_NORM: f64 = 0.00913;
pub const CALIBRATED_DRIFT_NORM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    /// Wiener diffusion of the detuning, rad²/s³.
    pub diffusion: f64,
    /// Magnitude of the linear detuning drift, rad/s², random sign per segment.
    pub deterministic_drift: f64,
}

impl DriftModel {
    pub fn none() -> Self {
        DriftModel {
            diffusion: 0.0,
            deterministic_drift: 0.0,
        }
    }

    /// Calibrated drift for cavities of linewidth `kf` (rad/s).
    pub fn calibrated_for(kf: f64) -> Self {
        Self::from_normalized(CALIBRATED_DIFFUSION_NORM, CALIBRATED_DRIFT_NORM, kf)
    }

    /// Drift given in half-linewidth units: `x = 2δ/κ_f`.
    pub fn from_normalized(diffusion: f64, drift: f64, kf: f64) -> Self {
        let half = kf / 2.0;
        DriftModel {
            diffusion: diffusion * half * half,
            deterministic_drift: drift * half,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            return Err(Error::invalid("diffusion", format!("must be >= 0, got {}", self.diffusion)));
        }
        if !self.deterministic_drift.is_finite() {
            return Err(Error::invalid("deterministic_drift", "must be finite"));
        }
        Ok(())
    }

    /// Same drift with the diffusion multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        DriftModel {
            diffusion: self.diffusion * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Proportional gain per tick, in units of the linearized error.
    pub proportional: f64,
    /// Integral gain per tick.
    pub integral: f64,
    pub update_rate: f64,
}

impl Default for ControllerGains {
    /// ≈50 Hz closed-loop bandwidth at a 1 kHz update rate.
    fn default() -> Self {
        ControllerGains {
            proportional: 0.05,
            integral: 2.0 * std::f64::consts::PI * 50.0 / 1000.0,
            update_rate: 1000.0,
        }
    }
}

impl ControllerGains {
    /// Largest pole magnitude of the linearized loop
    /// `δ[k+1] = (1 - ki - kp)·δ[k] + kp·δ[k-1]`.
    pub fn pole_magnitude(&self) -> f64 {
        let b = 1.0 - self.integral - self.proportional;
        let c = self.proportional;
        let disc = b * b + 4.0 * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            ((b + s) / 2.0).abs().max(((b - s) / 2.0).abs())
        } else {
            // complex pair, |z|² = -c
            (-c).sqrt()
        }
    }

    pub fn check_stability(&self) -> Result<()> {
        ensure_positive("update_rate", self.update_rate)?;
        let p = self.pole_magnitude();
        if !(p < 1.0) || self.integral <= 0.0 {
            return Err(Error::UnstableLoop(p));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.update_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSettings {
    /// Time to sweep 3–4 free spectral ranges and find a resonance, s.
    pub scan_duration: f64,
    /// Side-of-fringe settling before switching to dither, s.
    pub side_lock_settle: f64,
    /// Capture band as a fraction of κ_f.
    pub capture_fraction: f64,
    /// How long |δ| must stay inside the band, s.
    pub hold_time: f64,
    /// Per-cavity acquisition timeout, s.
    pub timeout: f64,
    /// Dither amplitude as a fraction of κ_f.
    pub dither_fraction: f64,
}

impl Default for AcquisitionSettings {
    fn default() -> Self {
        AcquisitionSettings {
            scan_duration: 0.2,
            side_lock_settle: 0.05,
            capture_fraction: 1.0 / 20.0,
            hold_time: 0.1,
            timeout: 2.0,
            dither_fraction: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSchedule {
    pub freeze_duration: f64,
    pub relock_timeout: f64,
    /// Delay between freezing the lock and opening the detector shutter, s.
    pub shutter_open_delay: f64,
    /// Delay between closing the detector shutter and re-enabling lock light, s.
    pub shutter_close_delay: f64,
}

impl Default for CycleSchedule {
    fn default() -> Self {
        CycleSchedule {
            freeze_duration: 1.5,
            relock_timeout: 0.5,
            shutter_open_delay: 0.005,
            shutter_close_delay: 0.005,
        }
    }
}

impl CycleSchedule {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("freeze_duration", self.freeze_duration)?;
        ensure_positive("relock_timeout", self.relock_timeout)?;
        ensure_positive("shutter_open_delay", self.shutter_open_delay)?;
        ensure_positive("shutter_close_delay", self.shutter_close_delay)
    }
}

/// Demodulated dither error: `κ_f · [R(δ+a) - R(δ-a)] / (2a)` with the
/// reflection dip `R = 1 - L`. Near resonance it is ≈ `8δ/κ_f`.
pub fn dither_error_signal(detuning: f64, kf: f64, dither_amplitude: f64) -> f64 {
    let refl = |d: f64| 1.0 - lorentzian(d, kf);
    kf * (refl(detuning + dither_amplitude) - refl(detuning - dither_amplitude)) / (2.0 * dither_amplitude)
}

/// Free-running detuning generator shared by all phases of a run.
struct Drift {
    model: DriftModel,
    dt: f64,
    velocity: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Drift {
    fn new(model: DriftModel, n: usize, dt: f64, seed: u64) -> Self {
        let mut d = Drift {
            model,
            dt,
            velocity: vec![0.0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        d.redraw_signs();
        d
    }

    fn redraw_signs(&mut self) {
        for v in &mut self.velocity {
            let sign = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
            *v = sign * self.model.deterministic_drift;
        }
    }

    fn step(&mut self, detunings: &mut [f64]) {
        let sd = (self.model.diffusion * self.dt).sqrt();
        for (d, v) in detunings.iter_mut().zip(&self.velocity) {
            let n: f64 = self.rng.sample(StandardNormal);
            *d += sd * n + v * self.dt;
        }
    }
}

struct Loop<'a> {
    chain: &'a FilterChain,
    gains: ControllerGains,
    settings: AcquisitionSettings,
}

impl Loop<'_> {
    fn kf(&self, i: usize) -> f64 {
        self.chain.stages[i].linewidth_kf
    }

    /// One PI update toward resonance; returns the new detuning.
    fn dither_update(&self, i: usize, detuning: f64, integrator: &mut f64) -> f64 {
        let kf = self.kf(i);
        let e = dither_error_signal(detuning, kf, self.settings.dither_fraction * kf);
        let correction = kf / 8.0 * e;
        let before = *integrator;
        *integrator -= self.gains.integral * correction;
        // P acts on the current sample only
        detuning + (*integrator - before) - self.gains.proportional * correction
    }

    /// Side-of-fringe update toward δ = κ_f/2 using the transmitted level.
    fn side_update(&self, i: usize, detuning: f64, integrator: &mut f64) -> f64 {
        let kf = self.kf(i);
        let s = lorentzian(detuning, kf) - 0.5;
        let correction = -kf * s;
        let before = *integrator;
        *integrator -= self.gains.integral * correction;
        detuning + (*integrator - before)
    }

    fn in_band(&self, i: usize, detuning: f64) -> bool {
        detuning.abs() < self.settings.capture_fraction * self.kf(i)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockTrajectory {
    pub states: Vec<LockState>,
    /// Time each cavity completed acquisition, s.
    pub acquired_at: Vec<f64>,
}

/// Sequential lock acquisition of every cavity in the chain.
pub fn run_lock_acquisition(
    chain: &FilterChain,
    drift: &DriftModel,
    gains: &ControllerGains,
    settings: &AcquisitionSettings,
    seed: u64,
) -> Result<LockTrajectory> {
    chain.validate()?;
    drift.validate()?;
    gains.check_stability()?;
    let n = chain.stages.len();
    let dt = gains.dt();
    let ctl = Loop {
        chain,
        gains: *gains,
        settings: *settings,
    };
    let mut noise = Drift::new(*drift, n, dt, seed);

    let mut states = vec![CavityLockState::Scanning; n];
    let mut detunings = vec![0.0; n];
    let mut integrators = vec![0.0; n];
    let mut acquired_at = Vec::with_capacity(n);
    let mut trajectory = Vec::new();
    let mut time = 0.0;
    let mut step = 0u64;

    for i in 0..n {
        let start = time;
        let mut phase_start = time;
        let mut band_since: Option<f64> = None;
        loop {
            step += 1;
            time = step as f64 * dt;
            noise.step(&mut detunings);
            for j in 0..i {
                detunings[j] = ctl.dither_update(j, detunings[j], &mut integrators[j]);
            }
            match states[i] {
                CavityLockState::Scanning => {
                    if time - phase_start >= settings.scan_duration {
                        // resonance found; park on the half-transmission point
                        integrators[i] += ctl.kf(i) / 2.0 - detunings[i];
                        detunings[i] = ctl.kf(i) / 2.0;
                        states[i] = CavityLockState::SideLock;
                        phase_start = time;
                    }
                }
                CavityLockState::SideLock => {
                    detunings[i] = ctl.side_update(i, detunings[i], &mut integrators[i]);
                    let settled = (detunings[i] - ctl.kf(i) / 2.0).abs() < settings.capture_fraction * ctl.kf(i);
                    if time - phase_start >= settings.side_lock_settle && settled {
                        states[i] = CavityLockState::DitherLock;
                        phase_start = time;
                    }
                }
                _ => {
                    detunings[i] = ctl.dither_update(i, detunings[i], &mut integrators[i]);
                }
            }
            let locking = states[i] == CavityLockState::DitherLock;
            let mut done = false;
            if locking && ctl.in_band(i, detunings[i]) {
                let since = *band_since.get_or_insert(time);
                done = time - since >= settings.hold_time;
            } else {
                band_since = None;
            }
            trajectory.push(LockState {
                time,
                states: states.clone(),
                detunings: detunings.clone(),
                integrators: integrators.clone(),
            });
            if done {
                acquired_at.push(time);
                break;
            }
            if time - start > settings.timeout {
                return Err(Error::AcquisitionTimeout {
                    cavity: i + 1,
                    timeout: settings.timeout,
                });
            }
        }
    }
    Ok(LockTrajectory {
        states: trajectory,
        acquired_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelockOutcome {
    pub trajectory: Vec<LockState>,
    /// Time (from relock start) at which the last cavity entered the capture
    /// band for good; `None` on timeout.
    pub reacquired_after: Option<f64>,
    pub final_detunings: Vec<f64>,
}

fn relock_inner(
    ctl: &Loop,
    noise: &mut Drift,
    detunings: &mut [f64],
    integrators: &mut [f64],
    timeout: f64,
    t0: f64,
    record: bool,
) -> (Vec<LockState>, Option<f64>) {
    let n = detunings.len();
    let dt = ctl.gains.dt();
    let mut states = vec![CavityLockState::Relocking; n];
    let mut band_since: Vec<Option<f64>> = vec![None; n];
    let mut entered: Vec<Option<f64>> = vec![None; n];
    let mut trajectory = Vec::new();
    if record {
        trajectory.push(LockState {
            time: t0,
            states: vec![CavityLockState::Frozen; n],
            detunings: detunings.to_vec(),
            integrators: integrators.to_vec(),
        });
    }
    let limit = timeout + ctl.settings.hold_time;
    let mut step = 0u64;
    loop {
        step += 1;
        let t = step as f64 * dt;
        noise.step(detunings);
        for i in 0..n {
            detunings[i] = ctl.dither_update(i, detunings[i], &mut integrators[i]);
            if ctl.in_band(i, detunings[i]) {
                let since = *band_since[i].get_or_insert(t);
                if states[i] == CavityLockState::Relocking && t - since >= ctl.settings.hold_time {
                    states[i] = CavityLockState::DitherLock;
                    entered[i] = Some(since);
                }
            } else {
                band_since[i] = None;
            }
        }
        if record {
            trajectory.push(LockState {
                time: t0 + t,
                states: states.clone(),
                detunings: detunings.to_vec(),
                integrators: integrators.to_vec(),
            });
        }
        if entered.iter().all(Option::is_some) {
            let last = entered.iter().map(|e| e.expect("all set")).fold(0.0, f64::max);
            return (trajectory, (last <= timeout).then_some(last));
        }
        if t >= limit {
            return (trajectory, None);
        }
    }
}

/// Re-engages the dither lock on all cavities from the given detunings.
pub fn relock(
    chain: &FilterChain,
    drift: &DriftModel,
    gains: &ControllerGains,
    settings: &AcquisitionSettings,
    initial_detunings: &[f64],
    timeout: f64,
    seed: u64,
) -> Result<RelockOutcome> {
    chain.validate()?;
    drift.validate()?;
    gains.check_stability()?;
    if initial_detunings.len() != chain.stages.len() {
        return Err(Error::invalid("initial_detunings", "one detuning per stage"));
    }
    let ctl = Loop {
        chain,
        gains: *gains,
        settings: *settings,
    };
    let mut noise = Drift::new(*drift, chain.stages.len(), gains.dt(), seed);
    let mut detunings = initial_detunings.to_vec();
    let mut integrators = vec![0.0; detunings.len()];
    let (trajectory, reacquired_after) =
        relock_inner(&ctl, &mut noise, &mut detunings, &mut integrators, timeout, 0.0, true);
    Ok(RelockOutcome {
        trajectory,
        reacquired_after,
        final_detunings: detunings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrozenSummary {
    /// First time the relative transmission drops below 0.5, if it does.
    pub time_to_half: Option<f64>,
    /// Fraction of samples in the first second with transmission ≥ 0.8.
    pub fraction_above_80_first_second: f64,
    /// Transmission stayed ≥ 0.8 throughout the first second.
    pub holds_80_first_second: bool,
    pub mean_transmission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenSegment {
    pub times: Vec<f64>,
    pub transmission: Vec<f64>,
    pub final_detunings: Vec<f64>,
    pub summary: FrozenSummary,
}

/// Sample interval of frozen-segment time series, s.
pub const FROZEN_DT: f64 = 1e-3;

/// Free evolution of all cavities from resonance with the lock paused.
pub fn run_frozen_segment(chain: &FilterChain, drift: &DriftModel, duration: f64, seed: u64) -> Result<FrozenSegment> {
    let start = vec![0.0; chain.stages.len()];
    run_frozen_segment_from(chain, drift, duration, &start, seed)
}

pub fn run_frozen_segment_from(
    chain: &FilterChain,
    drift: &DriftModel,
    duration: f64,
    initial_detunings: &[f64],
    seed: u64,
) -> Result<FrozenSegment> {
    chain.validate()?;
    drift.validate()?;
    ensure_positive("duration", duration)?;
    if initial_detunings.len() != chain.stages.len() {
        return Err(Error::invalid("initial_detunings", "one detuning per stage"));
    }
    let mut noise = Drift::new(*drift, chain.stages.len(), FROZEN_DT, seed);
    let mut d = initial_detunings.to_vec();
    Ok(frozen_inner(chain, &mut noise, &mut d, duration))
}

fn frozen_inner(chain: &FilterChain, noise: &mut Drift, detunings: &mut [f64], duration: f64) -> FrozenSegment {
    let steps = (duration / FROZEN_DT).round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut transmission = Vec::with_capacity(steps + 1);
    times.push(0.0);
    transmission.push(relative_transmission(chain, detunings));
    for k in 1..=steps {
        noise.step(detunings);
        times.push(k as f64 * FROZEN_DT);
        transmission.push(relative_transmission(chain, detunings));
    }
    let summary = summarize(&times, &transmission);
    FrozenSegment {
        times,
        transmission,
        final_detunings: detunings.to_vec(),
        summary,
    }
}

fn summarize(times: &[f64], transmission: &[f64]) -> FrozenSummary {
    let time_to_half = times
        .iter()
        .zip(transmission)
        .find(|(_, &t)| t < 0.5)
        .map(|(&t, _)| t);
    let first: Vec<f64> = times
        .iter()
        .zip(transmission)
        .filter(|(&t, _)| t <= 1.0 + 1e-9)
        .map(|(_, &x)| x)
        .collect();
    let above = first.iter().filter(|&&x| x >= 0.8).count();
    FrozenSummary {
        time_to_half,
        fraction_above_80_first_second: above as f64 / first.len().max(1) as f64,
        holds_80_first_second: above == first.len(),
        mean_transmission: transmission.iter().sum::<f64>() / transmission.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEnsemble {
    /// Median over seeds; seeds that never cross 50% count as +∞.
    pub median_time_to_half: f64,
    pub fraction_holding_80: f64,
    /// Ensemble-mean transmission on the segment's time grid.
    pub mean_curve: Vec<f64>,
    pub summaries: Vec<FrozenSummary>,
}

pub fn frozen_ensemble(
    chain: &FilterChain,
    drift: &DriftModel,
    duration: f64,
    n_seeds: usize,
    seed: u64,
) -> Result<FrozenEnsemble> {
    if n_seeds == 0 {
        return Err(Error::invalid("n_seeds", "must be >= 1"));
    }
    let mut summaries = Vec::with_capacity(n_seeds);
    let mut mean_curve: Vec<f64> = Vec::new();
    for k in 0..n_seeds {
        let seg = run_frozen_segment(chain, drift, duration, crate::clicks::derive_seed(seed, k as u64))?;
        if mean_curve.is_empty() {
            mean_curve = vec![0.0; seg.transmission.len()];
        }
        for (m, t) in mean_curve.iter_mut().zip(&seg.transmission) {
            *m += t / n_seeds as f64;
        }
        summaries.push(seg.summary);
    }
    let mut t50: Vec<f64> = summaries
        .iter()
        .map(|s| s.time_to_half.unwrap_or(f64::INFINITY))
        .collect();
    t50.sort_by(f64::total_cmp);
    let median = if n_seeds % 2 == 1 {
        t50[n_seeds / 2]
    } else {
        0.5 * (t50[n_seeds / 2 - 1] + t50[n_seeds / 2])
    };
    let holding = summaries.iter().filter(|s| s.holds_80_first_second).count();
    Ok(FrozenEnsemble {
        median_time_to_half: median,
        fraction_holding_80: holding as f64 / n_seeds as f64,
        mean_curve,
        summaries,
    })
}

/// Bisects the diffusion (in half-linewidth units, 1/s) so that the ensemble
/// median time-to-50% matches `target`, holding the linear drift fixed.
/// All trials share the same seeds.
pub fn calibrate_diffusion(
    chain: &FilterChain,
    drift_norm: f64,
    target: f64,
    n_seeds: usize,
    seed: u64,
) -> Result<f64> {
    ensure_positive("target", target)?;
    let kf = chain.widest_linewidth();
    let horizon = 3.0 * target;
    let median = |s2: f64| -> Result<f64> {
        let drift = DriftModel::from_normalized(s2, drift_norm, kf);
        Ok(frozen_ensemble(chain, &drift, horizon, n_seeds, seed)?.median_time_to_half)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if median(hi)? > target {
        return Err(Error::NonConvergence("diffusion bracket too narrow".into()));
    }
    if median(lo)? < target {
        return Err(Error::NonConvergence("linear drift alone decays faster than the target".into()));
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if median(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutyCycleReport {
    /// Mean relative transmission over each counting window.
    pub per_cycle_mean: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub relock_timeouts: usize,
    /// Relock durations of the cycles that reacquired in time, s.
    pub relock_times: Vec<f64>,
}

/// Alternates relocking and frozen counting windows.
pub fn run_duty_cycle(
    schedule: &CycleSchedule,
    chain: &FilterChain,
    drift: &DriftModel,
    gains: &ControllerGains,
    n_cycles: usize,
    seed: u64,
) -> Result<DutyCycleReport> {
    schedule.validate()?;
    chain.validate()?;
    drift.validate()?;
    gains.check_stability()?;
    if n_cycles == 0 {
        return Err(Error::invalid("n_cycles", "must be >= 1"));
    }
    let n = chain.stages.len();
    let ctl = Loop {
        chain,
        gains: *gains,
        settings: AcquisitionSettings::default(),
    };
    let mut lock_noise = Drift::new(*drift, n, gains.dt(), crate::clicks::derive_seed(seed, 0));
    let mut frozen_noise = Drift::new(*drift, n, FROZEN_DT, crate::clicks::derive_seed(seed, 1));
    let mut detunings = vec![0.0; n];
    let mut integrators = vec![0.0; n];
    let mut per_cycle_mean = Vec::with_capacity(n_cycles);
    let mut relock_timeouts = 0;
    let mut relock_times = Vec::new();

    let window_start = schedule.shutter_open_delay;
    let window_end = schedule.shutter_open_delay + schedule.freeze_duration;
    let frozen_total = window_end + schedule.shutter_close_delay;

    for cycle in 0..n_cycles {
        if cycle > 0 {
            lock_noise.redraw_signs();
            let (_, t) = relock_inner(
                &ctl,
                &mut lock_noise,
                &mut detunings,
                &mut integrators,
                schedule.relock_timeout,
                0.0,
                false,
            );
            match t {
                Some(t) => relock_times.push(t),
                None => {
                    relock_timeouts += 1;
                    // full reacquisition brings every cavity back on resonance
                    detunings.iter_mut().for_each(|d| *d = 0.0);
                }
            }
        }
        frozen_noise.redraw_signs();
        let seg = frozen_inner(chain, &mut frozen_noise, &mut detunings, frozen_total);
        let window: Vec<f64> = seg
            .times
            .iter()
            .zip(&seg.transmission)
            .filter(|(&t, _)| t >= window_start - 1e-12 && t <= window_end + 1e-12)
            .map(|(_, &x)| x)
            .collect();
        per_cycle_mean.push(window.iter().sum::<f64>() / window.len() as f64);
    }
    let m = per_cycle_mean.iter().sum::<f64>() / n_cycles as f64;
    let sd = if n_cycles > 1 {
        (per_cycle_mean.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_cycles - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DutyCycleReport {
        per_cycle_mean,
        mean: m,
        sd,
        relock_timeouts,
        relock_times,
    })
}

/// Checks transition legality and the sequential-acquisition rule.
pub fn validate_trajectory(trajectory: &[LockState]) -> std::result::Result<(), String> {
    for (k, s) in trajectory.iter().enumerate() {
        if s.states.len() != s.detunings.len() {
            return Err(format!("tick {k}: state and detuning counts differ"));
        }
        for (i, st) in s.states.iter().enumerate() {
            if *st != CavityLockState::Scanning && !s.states[..i].iter().all(|p| p.has_acquired()) {
                return Err(format!("tick {k}: cavity {} left SCANNING before its predecessors locked", i + 1));
            }
        }
        if k > 0 {
            let prev = &trajectory[k - 1];
            if prev.time > s.time {
                return Err(format!("tick {k}: time goes backwards"));
            }
            for (i, (a, b)) in prev.states.iter().zip(&s.states).enumerate() {
                if !a.can_transition_to(*b) {
                    return Err(format!(
                        "tick {k}: cavity {} made illegal transition {} -> {}",
                        i + 1,
                        a.as_str(),
                        b.as_str()
                    ));
                }
            }
        }
    }
    Ok(())
}

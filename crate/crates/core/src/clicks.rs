//! Seeded, time-tagged photon click streams.
//!
//! Thermal light is a single-mode complex Gaussian field with exponentially
//! decaying amplitude correlation. Detections form a Cox process driven by the
//! field intensity, with Poissonian dark counts, optional afterpulsing and a
//! non-paralyzable dead time applied on top.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_fraction, Error, Result};
use crate::filter::{chain_clipping, FilterChain};
use crate::optomech::{sideband_fluxes, OptomechanicalConfig, RatePrediction, TransitionRates};

pub const NS_PER_S: f64 = 1e9;

/// Default detector dead time, s.
pub const DEFAULT_DEAD_TIME: f64 = 50e-9;

// independent RNG streams derived from one seed
const STREAM_SIGNAL: u64 = 1;
const STREAM_DARK: u64 = 2;
const STREAM_AFTERPULSE: u64 = 3;
const STREAM_THINNING: u64 = 4;

const AFTERPULSE_MEAN_DELAY: f64 = 200e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Stokes,
    AntiStokes,
    LockingDiagnostic,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Stokes => "stokes",
            Channel::AntiStokes => "anti-stokes",
            Channel::LockingDiagnostic => "locking-diagnostic",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "stokes" | "s" => Ok(Channel::Stokes),
            "anti-stokes" | "antistokes" | "as" => Ok(Channel::AntiStokes),
            "locking-diagnostic" | "lock" => Ok(Channel::LockingDiagnostic),
            other => Err(Error::invalid("channel", format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyComponent {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub components: Vec<EfficiencyComponent>,
    pub dark_rate: f64,
    pub dead_time: f64,
    pub afterpulse_prob: f64,
}

impl DetectionChain {
    pub fn from_components(components: Vec<(String, f64)>, dark_rate: f64, dead_time: f64) -> Result<Self> {
        let chain = DetectionChain {
            components: components
                .into_iter()
                .map(|(name, fraction)| EfficiencyComponent { name, fraction })
                .collect(),
            dark_rate,
            dead_time,
            afterpulse_prob: 0.0,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// A chain described only by its overall efficiency.
    pub fn with_efficiency(eta: f64, dark_rate: f64, dead_time: f64) -> Result<Self> {
        Self::from_components(vec![("overall".to_string(), eta)], dark_rate, dead_time)
    }

    /// Unit efficiency, no dark counts, no dead time.
    pub fn ideal() -> Self {
        Self::with_efficiency(1.0, 0.0, 0.0).expect("valid constants")
    }

    /// Component budget of the membrane setup: cavity outcoupling, fiber,
    /// filter cavities, filter in/out-coupling and detector; 15.5 Hz dark rate.
    pub fn reference_budget() -> Self {
        Self::from_components(
            vec![
                ("cavity-outcoupling".into(), 0.75),
                ("fiber".into(), 0.60),
                ("filter-cavities".into(), 0.30),
                ("filter-coupling".into(), 0.50),
                ("detector".into(), 0.35),
            ],
            15.5,
            DEFAULT_DEAD_TIME,
        )
        .expect("valid constants")
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.components {
            ensure_fraction(&format!("efficiency component `{}`", c.name), c.fraction)?;
        }
        ensure_fraction("afterpulse_prob", self.afterpulse_prob)?;
        if !(self.dark_rate.is_finite() && self.dark_rate >= 0.0) {
            return Err(Error::invalid("dark_rate", format!("must be >= 0, got {}", self.dark_rate)));
        }
        if !(self.dead_time.is_finite() && self.dead_time >= 0.0) {
            return Err(Error::invalid("dead_time", format!("must be >= 0, got {}", self.dead_time)));
        }
        Ok(())
    }

    pub fn efficiency_total(&self) -> f64 {
        self.components.iter().map(|c| c.fraction).product()
    }
}

/// Parameters a stream was generated with, kept for oracle tests.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthMetadata {
    pub signal_rate: f64,
    /// Intensity correlation decay rate (rad/s); infinite for Poissonian light.
    pub gamma_opt: f64,
    pub dark_rate: f64,
    pub dark_fraction: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickStream {
    /// Detection times in integer nanoseconds, strictly increasing.
    pub timestamps: Vec<u64>,
    pub duration: f64,
    pub channel: Channel,
    pub seed: u64,
    pub truth: TruthMetadata,
}

impl ClickStream {
    /// Builds a stream from unsorted times in seconds; duplicates at 1 ns
    /// resolution collapse into one click.
    pub fn from_seconds(times: &[f64], duration: f64, channel: Channel) -> Result<Self> {
        let mut ts: Vec<u64> = Vec::with_capacity(times.len());
        for &t in times {
            if !(t >= 0.0 && t <= duration) {
                return Err(Error::invalid("timestamp", format!("{t} s outside [0, {duration}]")));
            }
            ts.push(to_ns(t));
        }
        ts.sort_unstable();
        ts.dedup();
        Ok(ClickStream {
            timestamps: ts,
            duration,
            channel,
            seed: 0,
            truth: TruthMetadata::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.timestamps.len() as f64 / self.duration
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.timestamps.iter().map(|&t| t as f64 / NS_PER_S)
    }

    /// Checks ordering, bounds and (if `dead_time > 0`) the minimum gap.
    pub fn check_invariants(&self, dead_time: f64) -> Result<()> {
        let end = to_ns(self.duration);
        let gap = to_ns(dead_time).max(1);
        if let Some(&last) = self.timestamps.last() {
            if last > end {
                return Err(Error::invalid("timestamps", "click after end of stream"));
            }
        }
        for w in self.timestamps.windows(2) {
            if w[1] < w[0] + gap {
                return Err(Error::invalid(
                    "timestamps",
                    format!("gap {} ns below minimum {gap} ns", w[1].saturating_sub(w[0])),
                ));
            }
        }
        Ok(())
    }

    /// Counts per consecutive window of `width` seconds.
    pub fn binned_counts(&self, width: f64) -> Vec<u64> {
        let n = (self.duration / width).floor() as usize;
        let w = width * NS_PER_S;
        let mut counts = vec![0u64; n];
        for &t in &self.timestamps {
            let i = (t as f64 / w) as usize;
            if i < n {
                counts[i] += 1;
            }
        }
        counts
    }
}

fn to_ns(t: f64) -> u64 {
    (t * NS_PER_S).round() as u64
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for the `index`-th sub-experiment of a run (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Largest number of field-update steps one stream may take.
    pub max_steps: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { max_steps: 5_000_000_000 }
    }
}

/// Field-update step for a thermal source: at most 1/150 of the mean click
/// spacing and 1/50 of a correlation period `2π/Γ`.
pub fn thermal_time_step(mean_rate: f64, gamma_opt: f64) -> f64 {
    let by_rate = if mean_rate > 0.0 {
        1.0 / (50.0 * mean_rate * 3.0)
    } else {
        f64::INFINITY
    };
    by_rate.min(2.0 * std::f64::consts::PI / (50.0 * gamma_opt))
}

pub fn simulate_thermal_stream(
    mean_rate: f64,
    gamma_opt: f64,
    duration: f64,
    detection: &DetectionChain,
    seed: u64,
) -> Result<ClickStream> {
    simulate_thermal_stream_with(mean_rate, gamma_opt, duration, detection, seed, &SimOptions::default())
}

/// Thermal click stream with detected signal rate `mean_rate` (efficiency is
/// not applied here) and intensity correlation `1 + exp(-Γ|τ|)`. An infinite
/// `gamma_opt` gives Poissonian light.
pub fn simulate_thermal_stream_with(
    mean_rate: f64,
    gamma_opt: f64,
    duration: f64,
    detection: &DetectionChain,
    seed: u64,
    options: &SimOptions,
) -> Result<ClickStream> {
    if !(mean_rate.is_finite() && mean_rate >= 0.0) {
        return Err(Error::invalid("mean_rate", format!("must be >= 0, got {mean_rate}")));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::invalid("duration", format!("must be > 0, got {duration}")));
    }
    if !(gamma_opt > 0.0) {
        return Err(Error::invalid("gamma_opt", format!("must be > 0, got {gamma_opt}")));
    }
    detection.validate()?;

    let signal = if mean_rate == 0.0 {
        Vec::new()
    } else if gamma_opt.is_infinite() {
        poisson_times(mean_rate, duration, &mut rng_for(seed, STREAM_SIGNAL))
    } else {
        cox_times(mean_rate, gamma_opt, duration, seed, options)?
    };
    let dark = poisson_times(detection.dark_rate, duration, &mut rng_for(seed, STREAM_DARK));
    let mut ts = merge_sorted(&signal, &dark);
    ts.dedup();

    if detection.afterpulse_prob > 0.0 {
        ts = dead_time_filter(&ts, to_ns(detection.dead_time));
        let mut rng = rng_for(seed, STREAM_AFTERPULSE);
        let end = to_ns(duration);
        let mut after: Vec<u64> = Vec::new();
        for &t in &ts {
            if rng.random::<f64>() < detection.afterpulse_prob {
                let e: f64 = rng.sample(Exp1);
                let at = t + to_ns(detection.dead_time + e * AFTERPULSE_MEAN_DELAY);
                if at <= end {
                    after.push(at);
                }
            }
        }
        after.sort_unstable();
        ts = merge_sorted(&ts, &after);
        ts.dedup();
    }
    let ts = dead_time_filter(&ts, to_ns(detection.dead_time));

    let total = mean_rate + detection.dark_rate;
    Ok(ClickStream {
        timestamps: ts,
        duration,
        channel: Channel::AntiStokes,
        seed,
        truth: TruthMetadata {
            signal_rate: mean_rate,
            gamma_opt,
            dark_rate: detection.dark_rate,
            dark_fraction: if total > 0.0 { detection.dark_rate / total } else { 0.0 },
            efficiency: detection.efficiency_total(),
        },
    })
}

fn poisson_times(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let mut t = 0.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        t += e / rate;
        if t > duration {
            break;
        }
        out.push(to_ns(t));
    }
    out
}

/// Cox process driven by `mean_rate · |α(t)|²`, α an exponentially correlated
/// complex Gaussian amplitude with `E|α|² = 1` and decay rate `Γ/2`.
///
/// The intensity is held constant over each step; clicks are placed where the
/// integrated intensity crosses unit-exponential thresholds, which is exact
/// for the piecewise-constant intensity.
fn cox_times(mean_rate: f64, gamma_opt: f64, duration: f64, seed: u64, options: &SimOptions) -> Result<Vec<u64>> {
    let dt_max = thermal_time_step(mean_rate, gamma_opt);
    let steps_f = (duration / dt_max).ceil();
    if steps_f > options.max_steps as f64 {
        return Err(Error::StepBudget {
            needed: steps_f as u64,
            budget: options.max_steps,
        });
    }
    let steps = steps_f as u64;
    let dt = duration / steps as f64;
    let decay = (-0.5 * gamma_opt * dt).exp();
    // each quadrature of a standard complex Gaussian has variance 1/2
    let kick = (0.5 * (1.0 - decay * decay)).sqrt();
    let quad = std::f64::consts::FRAC_1_SQRT_2;

    let mut rng = rng_for(seed, STREAM_SIGNAL);
    let mut re: f64 = quad * rng.sample::<f64, _>(StandardNormal);
    let mut im: f64 = quad * rng.sample::<f64, _>(StandardNormal);
    let mut threshold: f64 = rng.sample(Exp1);
    let mut out = Vec::with_capacity((mean_rate * duration * 1.1) as usize + 16);
    let end = to_ns(duration);

    for k in 0..steps {
        let intensity = mean_rate * (re * re + im * im);
        let mass = intensity * dt;
        if threshold <= mass {
            let t0 = k as f64 * dt;
            let mut used = 0.0;
            while used + threshold <= mass {
                used += threshold;
                let t = to_ns(t0 + used / intensity).min(end);
                out.push(t);
                threshold = rng.sample(Exp1);
            }
            threshold -= mass - used;
        } else {
            threshold -= mass;
        }
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        re = re * decay + kick * nr;
        im = im * decay + kick * ni;
    }
    Ok(out)
}

fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

fn dead_time_filter(ts: &[u64], dead_ns: u64) -> Vec<u64> {
    if dead_ns == 0 {
        return ts.to_vec();
    }
    let mut out = Vec::with_capacity(ts.len());
    let mut last: Option<u64> = None;
    for &t in ts {
        if last.is_none_or(|l| t - l >= dead_ns) {
            out.push(t);
            last = Some(t);
        }
    }
    out
}

/// Non-paralyzable dead time: a click survives iff it comes at least
/// `dead_time` after the previous surviving click.
pub fn apply_dead_time(stream: &ClickStream, dead_time: f64) -> Result<ClickStream> {
    if !(dead_time.is_finite() && dead_time >= 0.0) {
        return Err(Error::invalid("dead_time", format!("must be >= 0, got {dead_time}")));
    }
    Ok(ClickStream {
        timestamps: dead_time_filter(&stream.timestamps, to_ns(dead_time)),
        ..stream.clone()
    })
}

/// Keeps each click independently with probability `eta`.
pub fn thin_by_efficiency(stream: &ClickStream, eta: f64, seed: u64) -> Result<ClickStream> {
    ensure_fraction("eta", eta)?;
    let mut rng = rng_for(seed, STREAM_THINNING);
    let timestamps = if eta >= 1.0 {
        stream.timestamps.clone()
    } else {
        stream
            .timestamps
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() < eta)
            .collect()
    };
    let mut truth = stream.truth;
    truth.signal_rate *= eta;
    truth.dark_rate *= eta;
    truth.efficiency *= eta;
    Ok(ClickStream {
        timestamps,
        truth,
        ..stream.clone()
    })
}

/// Union of two streams over the same duration.
pub fn merge_streams(a: &ClickStream, b: &ClickStream) -> ClickStream {
    let mut ts = merge_sorted(&a.timestamps, &b.timestamps);
    ts.dedup();
    ClickStream {
        timestamps: ts,
        duration: a.duration.max(b.duration),
        ..a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedRates {
    pub stokes_signal: f64,
    pub antistokes_signal: f64,
    pub dark_rate: f64,
    pub clipping: f64,
    pub efficiency: f64,
}

impl DetectedRates {
    pub fn stokes_total(&self) -> f64 {
        self.stokes_signal + self.dark_rate
    }

    pub fn antistokes_total(&self) -> f64 {
        self.antistokes_signal + self.dark_rate
    }
}

/// Mean detected rates for a rate prediction: flux × efficiency × clipping.
pub fn detected_rates(prediction: &RatePrediction, chain: &FilterChain, detection: &DetectionChain) -> DetectedRates {
    let clipping = chain_clipping(chain, prediction.gamma_opt);
    let efficiency = detection.efficiency_total();
    DetectedRates {
        stokes_signal: prediction.flux_stokes * efficiency * clipping,
        antistokes_signal: prediction.flux_antistokes * efficiency * clipping,
        dark_rate: detection.dark_rate,
        clipping,
        efficiency,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandStreams {
    pub stokes: ClickStream,
    pub antistokes: ClickStream,
    pub rates: DetectedRates,
}

pub fn simulate_two_sideband_experiment(
    config: &OptomechanicalConfig,
    chain: &FilterChain,
    detection: &DetectionChain,
    duration_per_side: f64,
    seed: u64,
) -> Result<SidebandStreams> {
    let prediction = config.predict()?;
    simulate_sidebands(&prediction, chain, detection, duration_per_side, seed)
}

/// Two-sideband run from an explicit prediction. Both channels carry thermal
/// statistics with correlation rate `Γ_opt`.
pub fn simulate_sidebands(
    prediction: &RatePrediction,
    chain: &FilterChain,
    detection: &DetectionChain,
    duration_per_side: f64,
    seed: u64,
) -> Result<SidebandStreams> {
    if !(prediction.gamma_opt > 0.0) {
        return Err(Error::DegenerateDetuning {
            a_plus: prediction.a_plus,
            a_minus: prediction.a_minus,
        });
    }
    let rates = detected_rates(prediction, chain, detection);
    let mut stokes = simulate_thermal_stream(
        rates.stokes_signal,
        prediction.gamma_opt,
        duration_per_side,
        detection,
        derive_seed(seed, 1),
    )?;
    stokes.channel = Channel::Stokes;
    let mut antistokes = simulate_thermal_stream(
        rates.antistokes_signal,
        prediction.gamma_opt,
        duration_per_side,
        detection,
        derive_seed(seed, 2),
    )?;
    antistokes.channel = Channel::AntiStokes;
    Ok(SidebandStreams {
        stokes,
        antistokes,
        rates,
    })
}

/// Prediction with the occupancy overridden, fluxes recomputed accordingly.
pub fn with_forced_occupancy(prediction: &RatePrediction, n_bar: f64) -> RatePrediction {
    let fluxes = sideband_fluxes(
        &TransitionRates {
            a_plus: prediction.a_plus,
            a_minus: prediction.a_minus,
        },
        n_bar,
    );
    RatePrediction {
        n_bar,
        flux_stokes: fluxes.stokes,
        flux_antistokes: fluxes.antistokes,
        ..*prediction
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optomech::hz_to_angular;
    use approx::assert_relative_eq;

    fn poisson(rate: f64, duration: f64, seed: u64) -> ClickStream {
        simulate_thermal_stream(rate, f64::INFINITY, duration, &DetectionChain::ideal(), seed).unwrap()
    }

    #[test]
    fn reference_budget_product() {
        let d = DetectionChain::reference_budget();
        assert_relative_eq!(d.efficiency_total(), 0.75 * 0.6 * 0.3 * 0.5 * 0.35, max_relative = 1e-12);
        assert!(DetectionChain::with_efficiency(1.2, 0.0, 0.0).is_err());
        assert!(DetectionChain::with_efficiency(0.5, -1.0, 0.0).is_err());
    }

    #[test]
    fn channel_names_round_trip() {
        for c in [Channel::Stokes, Channel::AntiStokes, Channel::LockingDiagnostic] {
            assert_eq!(c.to_string().parse::<Channel>().unwrap(), c);
        }
        assert!("sideways".parse::<Channel>().is_err());
    }

    #[test]
    fn same_seed_same_stream() {
        let d = DetectionChain::with_efficiency(1.0, 15.5, 50e-9).unwrap();
        let a = simulate_thermal_stream(90.0, hz_to_angular(2.1e3), 5.0, &d, 7).unwrap();
        let b = simulate_thermal_stream(90.0, hz_to_angular(2.1e3), 5.0, &d, 7).unwrap();
        let c = simulate_thermal_stream(90.0, hz_to_angular(2.1e3), 5.0, &d, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.timestamps, c.timestamps);
    }

    #[test]
    fn thermal_stream_invariants_and_rate() {
        let d = DetectionChain::with_efficiency(1.0, 15.5, 50e-9).unwrap();
        let s = simulate_thermal_stream(200.0, hz_to_angular(20e3), 50.0, &d, 3).unwrap();
        s.check_invariants(50e-9).unwrap();
        let target = 215.5;
        // thermal excess variance: rate·2/Γ ≈ 3e-3, negligible here
        assert!((s.rate() - target).abs() < 4.0 * (target * 50.0).sqrt() / 50.0, "{}", s.rate());
        assert_relative_eq!(s.truth.dark_fraction, 15.5 / 215.5, max_relative = 1e-12);
    }

    #[test]
    fn step_budget_is_enforced() {
        let opts = SimOptions { max_steps: 1000 };
        let err = simulate_thermal_stream_with(90.0, 1e4, 10.0, &DetectionChain::ideal(), 1, &opts);
        assert!(matches!(err, Err(Error::StepBudget { .. })));
    }

    #[test]
    fn poisson_limit_has_unit_fano() {
        let s = poisson(500.0, 200.0, 11);
        let counts = s.binned_counts(1e-3);
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<u64>() as f64 / n;
        let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let fano = var / mean;
        // sd of a Poisson sample variance ratio ≈ sqrt(2/n + 1/(n·mean))
        let sd = (2.0 / n + 1.0 / (n * mean)).sqrt();
        assert!((fano - 1.0).abs() < 3.0 * sd, "fano {fano} sd {sd}");
    }

    #[test]
    fn dead_time_cases() {
        let s = ClickStream::from_seconds(&[0.0, 1e-6, 2e-6, 3e-6, 4e-6], 1e-5, Channel::Stokes).unwrap();
        assert_eq!(apply_dead_time(&s, 0.0).unwrap(), s);
        let kept = apply_dead_time(&s, 1.5e-6).unwrap();
        assert_eq!(kept.timestamps, vec![0, 2000, 4000]);
        kept.check_invariants(1.5e-6).unwrap();
        assert!(apply_dead_time(&s, -1.0).is_err());
    }

    #[test]
    fn dead_time_rate_formula() {
        let r = 2e5;
        let tau = 1e-6;
        let s = poisson(r, 2.0, 5);
        let kept = apply_dead_time(&s, tau).unwrap();
        let expected = r / (1.0 + r * tau);
        let sigma = (expected * 2.0).sqrt() / 2.0;
        assert!((kept.rate() - expected).abs() < 3.0 * sigma, "{} vs {expected}", kept.rate());
    }

    #[test]
    fn thinning_limits() {
        let s = poisson(1000.0, 1.0, 2);
        assert_eq!(thin_by_efficiency(&s, 1.0, 9).unwrap().timestamps, s.timestamps);
        assert!(thin_by_efficiency(&s, 0.0, 9).unwrap().is_empty());
        let half = thin_by_efficiency(&s, 0.5, 9).unwrap();
        let n = s.len() as f64;
        assert!((half.len() as f64 - 0.5 * n).abs() < 3.0 * (0.25 * n).sqrt());
        assert!(thin_by_efficiency(&s, 1.5, 9).is_err());
    }

    #[test]
    fn superposition_of_poisson_streams() {
        let a = poisson(300.0, 100.0, 21);
        let b = poisson(700.0, 100.0, 22);
        let merged = merge_streams(&a, &b);
        let single = poisson(1000.0, 100.0, 23);
        let stats = |s: &ClickStream| {
            let c = s.binned_counts(0.01);
            let n = c.len() as f64;
            let m = c.iter().sum::<u64>() as f64 / n;
            let v = c.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v / m)
        };
        let (m1, f1) = stats(&merged);
        let (m2, f2) = stats(&single);
        assert!((m1 - m2).abs() < 4.0 * (2.0 * 10.0 / 1e4_f64).sqrt(), "{m1} {m2}");
        assert!((f1 - f2).abs() < 4.0 * (2.0 * 2.0 / 1e4_f64).sqrt(), "{f1} {f2}");
    }

    #[test]
    fn detected_rates_at_endpoints() {
        let chain = FilterChain::identical(4, hz_to_angular(30e3), 0.0).unwrap();
        let det = DetectionChain::with_efficiency(0.025, 15.5, DEFAULT_DEAD_TIME).unwrap();
        let low = OptomechanicalConfig::reference(255.0).unwrap().predict().unwrap();
        let r = detected_rates(&low, &chain, &det);
        assert_relative_eq!(r.clipping, 0.98169127, max_relative = 1e-6);
        assert_relative_eq!(r.stokes_signal, 22.402107, max_relative = 1e-5);
        assert_relative_eq!(r.antistokes_signal, 96.809117, max_relative = 1e-5);
        let high = OptomechanicalConfig::reference(11e3).unwrap().predict().unwrap();
        let r = detected_rates(&high, &chain, &det);
        assert_relative_eq!(r.stokes_signal, 208.25588, max_relative = 1e-5);
        assert_relative_eq!(r.antistokes_signal, 248.40789, max_relative = 1e-5);
    }

    #[test]
    fn ground_state_has_no_antistokes() {
        let chain = FilterChain::identical(4, hz_to_angular(30e3), 0.0).unwrap();
        let det = DetectionChain::with_efficiency(0.025, 0.0, DEFAULT_DEAD_TIME).unwrap();
        let p = OptomechanicalConfig::reference(11e3).unwrap().predict().unwrap();
        let forced = with_forced_occupancy(&p, 0.0);
        let s = simulate_sidebands(&forced, &chain, &det, 10.0, 4).unwrap();
        assert!(s.antistokes.is_empty());
        assert!(!s.stokes.is_empty());
        assert_eq!(s.rates.antistokes_signal, 0.0);
    }

    #[test]
    fn two_sideband_rates_match_prediction() {
        let chain = FilterChain::identical(4, hz_to_angular(30e3), 0.0).unwrap();
        let det = DetectionChain::with_efficiency(0.025, 15.5, DEFAULT_DEAD_TIME).unwrap();
        let cfg = OptomechanicalConfig::reference(11e3).unwrap();
        let s = simulate_two_sideband_experiment(&cfg, &chain, &det, 20.0, 99).unwrap();
        let gamma = cfg.predict().unwrap().gamma_opt;
        for (stream, target) in [
            (&s.stokes, s.rates.stokes_total()),
            (&s.antistokes, s.rates.antistokes_total()),
        ] {
            // thermal light inflates the count variance by 1 + 2·rate/Γ
            let var = target * 20.0 * (1.0 + 2.0 * target / gamma);
            assert!((stream.len() as f64 - target * 20.0).abs() < 4.0 * var.sqrt());
        }
        assert_eq!(s.stokes.channel, Channel::Stokes);
        assert_eq!(s.antistokes.channel, Channel::AntiStokes);
    }
}

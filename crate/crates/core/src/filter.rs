//! Cascaded Lorentzian filter cavities: transmission, rejection, sideband
//! clipping, and count-rate prediction from a measured spectrum.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::quadrature;

/// Intensity transmission of a single cavity, normalized to 1 on resonance.
pub fn lorentzian(omega: f64, kf: f64) -> f64 {
    let x = 2.0 * omega / kf;
    1.0 / (1.0 + x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterStage {
    pub linewidth_kf: f64,
    pub peak_transmission: f64,
}

impl FilterStage {
    pub fn new(linewidth_kf: f64, peak_transmission: f64) -> Result<Self> {
        ensure_positive("linewidth_kf", linewidth_kf)?;
        if !(peak_transmission > 0.0 && peak_transmission <= 1.0) {
            return Err(Error::invalid(
                "peak_transmission",
                format!("must lie in (0, 1], got {peak_transmission}"),
            ));
        }
        Ok(FilterStage {
            linewidth_kf,
            peak_transmission,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterChain {
    pub stages: Vec<FilterStage>,
    /// Common lock point relative to the drive (rad/s); `+Ω_m` selects anti-Stokes.
    pub center_detuning: f64,
    /// Lumped coupling loss between stages.
    pub chain_insertion: f64,
}

impl FilterChain {
    pub fn new(stages: Vec<FilterStage>, center_detuning: f64, chain_insertion: f64) -> Result<Self> {
        let chain = FilterChain {
            stages,
            center_detuning,
            chain_insertion,
        };
        chain.validate()?;
        Ok(chain)
    }

    /// `n` identical unit-transmission stages.
    pub fn identical(n: usize, linewidth_kf: f64, center_detuning: f64) -> Result<Self> {
        let stage = FilterStage::new(linewidth_kf, 1.0)?;
        Self::new(vec![stage; n], center_detuning, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("stages", "filter chain needs at least one stage"));
        }
        for s in &self.stages {
            FilterStage::new(s.linewidth_kf, s.peak_transmission)?;
        }
        if !(self.chain_insertion > 0.0 && self.chain_insertion <= 1.0) {
            return Err(Error::invalid(
                "chain_insertion",
                format!("must lie in (0, 1], got {}", self.chain_insertion),
            ));
        }
        if !self.center_detuning.is_finite() {
            return Err(Error::invalid("center_detuning", "must be finite"));
        }
        Ok(())
    }

    pub fn with_center(&self, center_detuning: f64) -> Self {
        FilterChain {
            center_detuning,
            ..self.clone()
        }
    }

    pub fn resonant_transmission(&self) -> f64 {
        self.chain_insertion * self.stages.iter().map(|s| s.peak_transmission).product::<f64>()
    }

    pub fn widest_linewidth(&self) -> f64 {
        self.stages.iter().map(|s| s.linewidth_kf).fold(0.0, f64::max)
    }

    /// Linewidth shared by all stages, if they are identical.
    pub fn common_linewidth(&self) -> Option<f64> {
        let first = self.stages.first()?.linewidth_kf;
        self.stages
            .iter()
            .all(|s| s.linewidth_kf == first)
            .then_some(first)
    }

    /// Transmission relative to resonance, as a function of offset from the lock point.
    pub fn relative_response(&self, offset: f64) -> f64 {
        self.stages
            .iter()
            .map(|s| lorentzian(offset, s.linewidth_kf))
            .product()
    }
}

pub fn chain_transmission(chain: &FilterChain, omega: f64) -> f64 {
    chain.resonant_transmission() * chain.relative_response(omega - chain.center_detuning)
}

/// Rejection relative to the resonant peak, dB (positive numbers mean attenuation).
pub fn rejection_db(chain: &FilterChain, omega: f64) -> f64 {
    let offset = omega - chain.center_detuning;
    // summed per stage so deep rejection does not underflow
    chain
        .stages
        .iter()
        .map(|s| {
            let x = 2.0 * offset / s.linewidth_kf;
            10.0 * (x * x).ln_1p() / std::f64::consts::LN_10
        })
        .sum()
}

/// Rejection curve on a grid of offsets (rad/s).
pub fn rejection_curve(chain: &FilterChain, omegas: &[f64]) -> Vec<(f64, f64)> {
    omegas.iter().map(|&w| (w, rejection_db(chain, w))).collect()
}

/// Fraction of a Lorentzian sideband of FWHM `gamma_opt` that passes a
/// four-stage cascade of linewidth `kf` locked on the sideband center.
pub fn clipping_factor(gamma_opt: f64, kf: f64) -> f64 {
    let g = gamma_opt;
    let k = kf;
    let s = g + k;
    k * (5.0 * g * g * g + 20.0 * g * g * k + 29.0 * g * k * k + 16.0 * k * k * k)
        / (16.0 * s * s * s * s)
}

/// Clipping of a Lorentzian sideband by an arbitrary chain (relative to its
/// resonant transmission). Four identical stages use the closed form.
pub fn chain_clipping(chain: &FilterChain, gamma_opt: f64) -> f64 {
    if gamma_opt <= 0.0 {
        return 1.0;
    }
    if chain.stages.len() == 4 {
        if let Some(kf) = chain.common_linewidth() {
            return clipping_factor(gamma_opt, kf);
        }
    }
    let half = gamma_opt / 2.0;
    let scale = half.min(chain.widest_linewidth());
    quadrature::integrate_real_line(
        |w| chain.relative_response(w) * half / std::f64::consts::PI / (w * w + half * half),
        scale,
        1e-12,
    )
}

/// On-resonance group delay, `Σ 2/κ_f` (s).
pub fn group_delay(chain: &FilterChain) -> f64 {
    chain.stages.iter().map(|s| 2.0 / s.linewidth_kf).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdTrace {
    /// Fourier frequencies, rad/s, strictly increasing.
    pub frequencies: Vec<f64>,
    /// Spectral density in shot-noise units.
    pub psd: Vec<f64>,
    pub shot_noise_level: f64,
    /// One-sigma uncertainty of `shot_noise_level`.
    pub shot_noise_sigma: f64,
}

impl PsdTrace {
    pub fn new(frequencies: Vec<f64>, psd: Vec<f64>, shot_noise_level: f64) -> Result<Self> {
        let trace = PsdTrace {
            frequencies,
            psd,
            shot_noise_level,
            shot_noise_sigma: 0.0,
        };
        trace.validate()?;
        Ok(trace)
    }

    fn validate(&self) -> Result<()> {
        if self.frequencies.len() != self.psd.len() {
            return Err(Error::invalid("psd", "frequency and psd columns differ in length"));
        }
        if self.frequencies.len() < 2 {
            return Err(Error::invalid("psd", "need at least two grid points"));
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("frequencies", "grid must be strictly increasing"));
        }
        if self.psd.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("psd", "values must be >= 0"));
        }
        Ok(())
    }

    /// Parses whitespace-, comma- or tab-delimited text with columns
    /// `frequency_hz psd [shot_noise]`. Lines starting with `#` are skipped.
    ///
    /// Without a shot-noise column the level is taken as the 5th percentile of
    /// the PSD and its sigma as the spread of the lowest 10% of points.
    pub fn parse(text: &str) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut psd = Vec::new();
        let mut shot = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c == '\t' || c == ' ' || c == ';')
                .filter(|s| !s.is_empty())
                .collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 2 or 3 columns, found {}", fields.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    reason: format!("`{s}`: {e}"),
                })
            };
            freqs.push(crate::optomech::hz_to_angular(parse(fields[0])?));
            psd.push(parse(fields[1])?);
            if fields.len() == 3 {
                shot.push(parse(fields[2])?);
            }
        }
        if !shot.is_empty() && shot.len() != psd.len() {
            return Err(Error::Parse {
                line: 0,
                reason: "shot-noise column present on some rows only".into(),
            });
        }
        let (level, sigma) = if shot.is_empty() {
            estimate_shot_noise(&psd)
        } else {
            mean_and_sd(&shot)
        };
        let mut trace = PsdTrace::new(freqs, psd, level)?;
        trace.shot_noise_sigma = sigma;
        Ok(trace)
    }

    pub fn grid_range(&self) -> (f64, f64) {
        (self.frequencies[0], *self.frequencies.last().expect("validated nonempty"))
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn estimate_shot_noise(psd: &[f64]) -> (f64, f64) {
    let mut sorted = psd.to_vec();
    sorted.sort_by(f64::total_cmp);
    let level = percentile(&sorted, 0.05);
    let tail = ((sorted.len() as f64 * 0.1).ceil() as usize).max(1);
    let (_, sd) = mean_and_sd(&sorted[..tail]);
    (level, sd)
}

/// Predicted detected count rate with the chain locked at its current center.
///
/// The shot-noise-subtracted PSD is clipped at zero, weighted by the chain
/// transmission and integrated with the trapezoidal rule.
pub fn predict_count_rate(chain: &FilterChain, psd: &PsdTrace, calibration: f64) -> Result<f64> {
    predict_with_floor(chain, psd, calibration, psd.shot_noise_level)
}

fn predict_with_floor(chain: &FilterChain, psd: &PsdTrace, calibration: f64, floor: f64) -> Result<f64> {
    ensure_positive("calibration", calibration)?;
    let span = 10.0 * chain.widest_linewidth();
    let (lo, hi) = psd.grid_range();
    let needed = (chain.center_detuning - span, chain.center_detuning + span);
    if needed.0 < lo || needed.1 > hi {
        return Err(Error::GridCoverage {
            grid_min: lo,
            grid_max: hi,
            needed_min: needed.0,
            needed_max: needed.1,
        });
    }
    let integrand: Vec<f64> = psd
        .frequencies
        .iter()
        .zip(&psd.psd)
        .map(|(&w, &p)| (p - floor).max(0.0) * chain_transmission(chain, w))
        .collect();
    let integral: f64 = psd
        .frequencies
        .windows(2)
        .zip(integrand.windows(2))
        .map(|(w, f)| 0.5 * (w[1] - w[0]) * (f[0] + f[1]))
        .sum();
    Ok(integral * calibration)
}

/// Calibration that makes the prediction at the chain's center equal `measured_rate`.
pub fn fit_calibration(chain: &FilterChain, psd: &PsdTrace, measured_rate: f64) -> Result<f64> {
    ensure_positive("measured_rate", measured_rate)?;
    let unit = predict_count_rate(chain, psd, 1.0)?;
    if unit <= 0.0 {
        return Err(Error::NonConvergence(
            "spectrum carries no signal above shot noise at the reference detuning".into(),
        ));
    }
    Ok(measured_rate / unit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountPrediction {
    pub center_detuning: f64,
    pub rate: f64,
    /// Rate with the shot-noise floor raised by one sigma.
    pub rate_low: f64,
    /// Rate with the shot-noise floor lowered by one sigma.
    pub rate_high: f64,
}

/// Sweeps the lock point over `centers` (rad/s).
pub fn predict_sweep(
    chain: &FilterChain,
    psd: &PsdTrace,
    calibration: f64,
    centers: &[f64],
) -> Result<Vec<CountPrediction>> {
    centers
        .iter()
        .map(|&c| {
            let ch = chain.with_center(c);
            let floor = psd.shot_noise_level;
            let sigma = psd.shot_noise_sigma;
            Ok(CountPrediction {
                center_detuning: c,
                rate: predict_with_floor(&ch, psd, calibration, floor)?,
                rate_low: predict_with_floor(&ch, psd, calibration, floor + sigma)?,
                rate_high: predict_with_floor(&ch, psd, calibration, floor - sigma)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optomech::hz_to_angular;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cascade() -> FilterChain {
        FilterChain::identical(4, hz_to_angular(30e3), 0.0).unwrap()
    }

    #[test]
    fn lorentzian_points() {
        assert_eq!(lorentzian(0.0, 3.0), 1.0);
        assert_relative_eq!(lorentzian(1.5, 3.0), 0.5, max_relative = 1e-15);
        assert_eq!(lorentzian(0.7, 3.0), lorentzian(-0.7, 3.0));
        let deep = lorentzian(hz_to_angular(1.5e6), hz_to_angular(300.0));
        assert_relative_eq!(deep, 1e-8, max_relative = 1e-6);
    }

    #[test]
    fn chain_transmission_points() {
        let c = cascade().with_center(5.0);
        assert_eq!(chain_transmission(&c, 5.0), 1.0);
        let db = rejection_db(&c, 5.0 + hz_to_angular(1.48e6));
        assert_relative_eq!(db, 159.5354, max_relative = 1e-6);
        let t = chain_transmission(&c, 5.0 + hz_to_angular(1.48e6));
        assert!(10.0 * t.log10() < -155.0);
        let near = rejection_db(&c, 5.0 + hz_to_angular(30e3));
        assert_relative_eq!(near, 40.0 * 5f64.log10(), max_relative = 1e-12);
    }

    #[test]
    fn chain_scales_with_peak_transmission() {
        let stage = FilterStage::new(1.0, 0.5).unwrap();
        let c = FilterChain::new(vec![stage; 2], 0.0, 0.8).unwrap();
        assert_relative_eq!(chain_transmission(&c, 0.0), 0.2, max_relative = 1e-15);
        assert_eq!(rejection_db(&c, 0.0), 0.0);
        assert!(FilterChain::new(vec![], 0.0, 1.0).is_err());
        assert!(FilterChain::new(vec![stage], 0.0, 1.5).is_err());
        assert!(FilterStage::new(0.0, 1.0).is_err());
    }

    #[test]
    fn rejection_half_width() {
        let single = FilterChain::identical(1, 2.0, 0.0).unwrap();
        assert_relative_eq!(rejection_db(&single, 1.0), 3.0103, max_relative = 1e-4);
        let four = FilterChain::identical(4, 2.0, 0.0).unwrap();
        assert_relative_eq!(rejection_db(&four, 1.0), 12.0412, max_relative = 1e-4);
    }

    #[test]
    fn clipping_values() {
        assert_eq!(clipping_factor(0.0, 3.0), 1.0);
        assert_relative_eq!(clipping_factor(2.0, 2.0), 70.0 / 256.0, max_relative = 1e-15);
        assert_relative_eq!(
            clipping_factor(hz_to_angular(11e3), hz_to_angular(30e3)),
            0.52973894,
            max_relative = 1e-7
        );
    }

    #[test]
    fn chain_clipping_quadrature_matches_closed_form() {
        let c = cascade();
        let g = hz_to_angular(11e3);
        // chains that are not four identical stages go through quadrature
        let stage = FilterStage::new(hz_to_angular(30e3), 1.0).unwrap();
        let three = FilterChain::new(vec![stage; 3], 0.0, 1.0).unwrap();
        let q = chain_clipping(&three, g);
        assert!(q > chain_clipping(&c, g));
        let hetero = FilterChain::new(
            vec![
                stage,
                stage,
                stage,
                FilterStage::new(hz_to_angular(30e3) * (1.0 + 1e-12), 1.0).unwrap(),
            ],
            0.0,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(chain_clipping(&hetero, g), clipping_factor(g, hz_to_angular(30e3)), max_relative = 1e-9);
    }

    #[test]
    fn group_delays() {
        let one = FilterChain::identical(1, hz_to_angular(300.0), 0.0).unwrap();
        assert_relative_eq!(group_delay(&one), 1.0610e-3, max_relative = 1e-4);
        assert_relative_eq!(group_delay(&cascade()), 42.441e-6, max_relative = 1e-4);
        let wide = FilterChain::identical(4, 1e30, 0.0).unwrap();
        assert!(group_delay(&wide) < 1e-29);
    }

    fn flat_trace(level: f64) -> PsdTrace {
        let freqs: Vec<f64> = (0..10001).map(|i| hz_to_angular(0.9e6 + 100.0 * i as f64)).collect();
        let psd = vec![level; freqs.len()];
        PsdTrace::new(freqs, psd, level).unwrap()
    }

    #[test]
    fn shot_noise_only_predicts_nothing() {
        let c = cascade().with_center(hz_to_angular(1.4e6));
        assert_eq!(predict_count_rate(&c, &flat_trace(1.0), 3.0).unwrap(), 0.0);
    }

    #[test]
    fn peak_prediction_reduces_to_clipping() {
        let center = hz_to_angular(1.4e6);
        let gamma = hz_to_angular(11e3);
        let mut trace = flat_trace(1.0);
        for (w, p) in trace.frequencies.iter().zip(trace.psd.iter_mut()) {
            let d = w - center;
            *p += (gamma / 2.0) / PI / (d * d + gamma * gamma / 4.0);
        }
        let c = cascade().with_center(center);
        let rate = predict_count_rate(&c, &trace, 2.0).unwrap();
        assert_relative_eq!(rate, 2.0 * clipping_factor(gamma, hz_to_angular(30e3)), max_relative = 1e-5);
    }

    #[test]
    fn coverage_is_checked() {
        let c = cascade().with_center(hz_to_angular(1.0e6));
        assert!(matches!(
            predict_count_rate(&c, &flat_trace(1.0), 1.0),
            Err(Error::GridCoverage { .. })
        ));
    }

    #[test]
    fn parse_two_and_three_columns() {
        let t = PsdTrace::parse("# f psd\n1e6, 2.0\n2e6, 3.0\n3e6\t1.0\n").unwrap();
        assert_eq!(t.frequencies.len(), 3);
        assert_relative_eq!(t.frequencies[1], hz_to_angular(2e6));
        assert_relative_eq!(t.shot_noise_level, 1.1, max_relative = 1e-12);
        let t = PsdTrace::parse("1 5 1\n2 6 1\n").unwrap();
        assert_eq!(t.shot_noise_level, 1.0);
        assert_eq!(t.shot_noise_sigma, 0.0);
        assert!(matches!(PsdTrace::parse("1 2 3 4\n"), Err(Error::Parse { line: 1, .. })));
        assert!(PsdTrace::parse("2 1\n1 1\n").is_err());
        assert!(PsdTrace::parse("1 x\n2 1\n").is_err());
    }

    #[test]
    fn calibration_round_trip() {
        let center = hz_to_angular(1.4e6);
        let mut trace = flat_trace(1.0);
        for (w, p) in trace.frequencies.iter().zip(trace.psd.iter_mut()) {
            *p += 50.0 * lorentzian(w - center, hz_to_angular(5e3));
        }
        let c = cascade().with_center(center);
        let cal = fit_calibration(&c, &trace, 120.0).unwrap();
        assert_relative_eq!(predict_count_rate(&c, &trace, cal).unwrap(), 120.0, max_relative = 1e-12);
        let sweep = predict_sweep(&c, &trace, cal, &[center, center + hz_to_angular(50e3)]).unwrap();
        assert_relative_eq!(sweep[0].rate, 120.0, max_relative = 1e-12);
        assert!(sweep[1].rate < sweep[0].rate);
        assert!(sweep[0].rate_low <= sweep[0].rate && sweep[0].rate <= sweep[0].rate_high);
    }
}

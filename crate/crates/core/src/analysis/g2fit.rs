use serde::{Deserialize, Serialize};

use super::histogram::{build_histogram, normalize_g2, G2Point, Normalization};
use super::minimize::log_scan_golden;
use crate::clicks::ClickStream;
use crate::error::{Error, Result};

/// Fit of `g²(τ) = 1 + A·exp(-2τ/τ_C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub contrast_a: f64,
    pub tau_c: f64,
    pub g2_zero: f64,
    pub sigma_a: f64,
    pub sigma_tau_c: f64,
    /// Covariance of `(A, τ_C)`.
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub dof: usize,
    /// False when the data carry no information on `τ_C` (no bunching).
    pub tau_c_constrained: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub tau: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
}

impl G2Fit {
    pub fn model(&self, tau: f64) -> f64 {
        1.0 + self.contrast_a * (-2.0 * tau.abs() / self.tau_c).exp()
    }

    /// Model curve with an `n_sigma` confidence band from the covariance.
    pub fn band(&self, taus: &[f64], n_sigma: f64) -> Vec<BandPoint> {
        let c = &self.covariance;
        taus.iter()
            .map(|&tau| {
                let e = (-2.0 * tau.abs() / self.tau_c).exp();
                let ga = e;
                let gt = self.contrast_a * e * 2.0 * tau.abs() / (self.tau_c * self.tau_c);
                let var = ga * ga * c[0][0] + 2.0 * ga * gt * c[0][1] + gt * gt * c[1][1];
                let sd = if var.is_finite() { var.max(0.0).sqrt() } else { f64::INFINITY };
                let value = 1.0 + self.contrast_a * e;
                BandPoint {
                    tau,
                    value,
                    lower: value - n_sigma * sd,
                    upper: value + n_sigma * sd,
                }
            })
            .collect()
    }
}

struct Bin {
    tau: f64,
    y: f64,
    /// Poisson scale: Var(y) = model / scale. Zero when only `sigma` is known.
    scale: f64,
    sigma: f64,
}

fn weights(bins: &[Bin], model: Option<(f64, f64)>) -> Vec<f64> {
    bins.iter()
        .map(|b| {
            if b.scale > 0.0 {
                let m = match model {
                    Some((a, tc)) => (1.0 + a * (-2.0 * b.tau / tc).exp()).max(1e-3),
                    None => 1.0,
                };
                b.scale / m
            } else {
                1.0 / (b.sigma * b.sigma)
            }
        })
        .collect()
}

/// `(A*, χ²)` at fixed `τ_C`, with A solved as a linear least-squares problem.
fn profile(bins: &[Bin], w: &[f64], tau_c: f64) -> (f64, f64, f64) {
    let (mut see, mut sye, mut syy) = (0.0, 0.0, 0.0);
    for (b, &wi) in bins.iter().zip(w) {
        let e = (-2.0 * b.tau / tau_c).exp();
        let r = b.y - 1.0;
        see += wi * e * e;
        sye += wi * r * e;
        syy += wi * r * r;
    }
    let a = if see > 0.0 { sye / see } else { 0.0 };
    let chi2 = if see > 0.0 { syy - sye * sye / see } else { syy };
    (a, chi2.max(0.0), see)
}

fn chi2_at(bins: &[Bin], w: &[f64], a: f64, tau_c: f64) -> f64 {
    bins.iter()
        .zip(w)
        .map(|(b, &wi)| {
            let r = b.y - 1.0 - a * (-2.0 * b.tau / tau_c).exp();
            wi * r * r
        })
        .sum()
}

fn invert2(m: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

const GRID: usize = 160;
const REWEIGHT_PASSES: usize = 4;

/// Weighted least-squares fit over `(A, τ_C)`.
///
/// `τ_C` is searched over `log τ_C` inside `bracket`, with `A` solved in
/// closed form at each trial. When points carry an accidental expectation,
/// weights follow the Poisson variance of the current model (refit a few
/// times); otherwise the per-point sigmas are used.
pub fn fit_g2(points: &[G2Point], bracket: (f64, f64)) -> Result<G2Fit> {
    let bins: Vec<Bin> = points
        .iter()
        .filter(|p| p.tau > 0.0 && p.g2.is_finite() && (p.expected > 0.0 || p.sigma > 0.0))
        .map(|p| Bin {
            tau: p.tau,
            y: p.g2,
            scale: if p.expected > 0.0 && p.expected.is_finite() { p.expected } else { 0.0 },
            sigma: p.sigma,
        })
        .collect();
    if bins.len() < 5 {
        return Err(Error::invalid("bins", format!("need at least 5 usable bins, got {}", bins.len())));
    }
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("bracket", format!("invalid τ_C bracket ({lo}, {hi})")));
    }

    let mut w = weights(&bins, None);
    let mut current: Option<(f64, f64)> = None;
    let passes = if bins.iter().any(|b| b.scale > 0.0) { REWEIGHT_PASSES } else { 1 };
    for _ in 0..passes {
        let best = log_scan_golden(|tc| profile(&bins, &w, tc).1, lo, hi, GRID);
        let (a, _, see) = profile(&bins, &w, best.x);
        let flat = best.range <= 1e-12 * (1.0 + best.value);
        if best.on_boundary || flat {
            let sigma_a = 1.0 / see.sqrt();
            if flat || a.abs() < 3.0 * sigma_a {
                return Ok(G2Fit {
                    contrast_a: a,
                    tau_c: best.x,
                    g2_zero: 1.0 + a,
                    sigma_a,
                    sigma_tau_c: f64::INFINITY,
                    covariance: [[sigma_a * sigma_a, 0.0], [0.0, f64::INFINITY]],
                    chi2: best.value,
                    dof: bins.len() - 1,
                    tau_c_constrained: false,
                });
            }
            return Err(Error::NonConvergence(format!(
                "no interior minimum for τ_C in [{lo:.3e}, {hi:.3e}] s"
            )));
        }
        current = Some((a, best.x));
        w = weights(&bins, current);
    }

    let (a, tau_c) = current.expect("at least one pass");
    // curvature (Gauss–Newton) of χ²/2 at the optimum
    let mut fisher = [[0.0; 2]; 2];
    for (b, &wi) in bins.iter().zip(&w) {
        let e = (-2.0 * b.tau / tau_c).exp();
        let ja = e;
        let jt = a * e * 2.0 * b.tau / (tau_c * tau_c);
        fisher[0][0] += wi * ja * ja;
        fisher[0][1] += wi * ja * jt;
        fisher[1][1] += wi * jt * jt;
    }
    fisher[1][0] = fisher[0][1];
    let chi2 = chi2_at(&bins, &w, a, tau_c);
    let covariance = invert2(fisher).ok_or_else(|| Error::NonConvergence("singular curvature at optimum".into()))?;
    Ok(G2Fit {
        contrast_a: a,
        tau_c,
        g2_zero: 1.0 + a,
        sigma_a: covariance[0][0].sqrt(),
        sigma_tau_c: covariance[1][1].sqrt(),
        covariance,
        chi2,
        dof: bins.len() - 2,
        tau_c_constrained: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Options {
    /// Bin width; `None` picks `τ_C/20` from a pilot fit.
    pub bin_width: Option<f64>,
    /// Largest delay; `None` uses `10·τ_C` from the pilot fit.
    pub max_delay: Option<f64>,
    pub exclusion_window: f64,
    pub normalization: Normalization,
    pub pilot_bin_width: f64,
    pub pilot_max_delay: f64,
}

impl Default for G2Options {
    fn default() -> Self {
        G2Options {
            bin_width: None,
            max_delay: None,
            exclusion_window: 500e-9,
            normalization: Normalization::AccidentalFloor,
            pilot_bin_width: 10e-6,
            pilot_max_delay: 2e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Analysis {
    pub histogram: super::CoincidenceHistogram,
    pub points: Vec<G2Point>,
    pub fit: G2Fit,
}

/// Histogram, normalization and fit in one pass, with pilot-based binning
/// when the options leave it open.
pub fn analyze_g2(stream: &ClickStream, options: &G2Options) -> Result<G2Analysis> {
    let (bin_width, max_delay) = match (options.bin_width, options.max_delay) {
        (Some(w), Some(m)) => (w, m),
        (w, m) => {
            let pilot = run(stream, options.pilot_bin_width, options.pilot_max_delay, options)?;
            let tau = if pilot.fit.tau_c_constrained {
                pilot.fit.tau_c
            } else {
                options.pilot_max_delay / 10.0
            };
            (w.unwrap_or(tau / 20.0), m.unwrap_or(10.0 * tau))
        }
    };
    run(stream, bin_width, max_delay, options)
}

fn run(stream: &ClickStream, bin_width: f64, max_delay: f64, options: &G2Options) -> Result<G2Analysis> {
    let histogram = build_histogram(stream, max_delay, bin_width, options.exclusion_window)?;
    let normalization = match options.normalization {
        Normalization::LongDelayTail { after } if after >= max_delay => Normalization::LongDelayTail {
            after: 0.5 * max_delay,
        },
        n => n,
    };
    let points = normalize_g2(&histogram, normalization)?;
    let fit = fit_g2(&points, (histogram.bin_width(), 10.0 * histogram.max_delay()))?;
    Ok(G2Analysis { histogram, points, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(a: f64, tau_c: f64, n: usize, width: f64) -> Vec<G2Point> {
        (0..n)
            .map(|k| {
                let tau = (k as f64 + 0.5) * width;
                G2Point {
                    tau,
                    g2: 1.0 + a * (-2.0 * tau / tau_c).exp(),
                    sigma: 0.05,
                    counts: 0,
                    expected: 400.0,
                }
            })
            .collect()
    }

    #[test]
    fn noiseless_round_trip() {
        let pts = synthetic(1.0, 143e-6, 150, 7e-6);
        let fit = fit_g2(&pts, (7e-6, 10.0 * 150.0 * 7e-6)).unwrap();
        assert!((fit.contrast_a - 1.0).abs() < 1e-6, "{}", fit.contrast_a);
        assert!((fit.tau_c / 143e-6 - 1.0).abs() < 1e-6, "{}", fit.tau_c);
        assert_eq!(fit.g2_zero, 1.0 + fit.contrast_a);
        assert!(fit.tau_c_constrained);
    }

    #[test]
    fn sigma_only_points_round_trip() {
        let mut pts = synthetic(0.7, 80e-6, 100, 5e-6);
        for p in &mut pts {
            p.expected = 0.0;
        }
        let fit = fit_g2(&pts, (5e-6, 5e-3)).unwrap();
        assert!((fit.contrast_a - 0.7).abs() < 1e-6);
        assert!((fit.tau_c / 80e-6 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_data_is_unconstrained() {
        let pts = synthetic(0.0, 1.0, 50, 1e-5);
        let fit = fit_g2(&pts, (1e-5, 5e-3)).unwrap();
        assert!(fit.contrast_a.abs() < 1e-12);
        assert!(fit.sigma_a > 0.0);
        assert!(!fit.tau_c_constrained);
        assert!(fit.sigma_tau_c.is_infinite());
    }

    #[test]
    fn too_few_bins() {
        let pts = synthetic(1.0, 1e-4, 4, 1e-5);
        assert!(fit_g2(&pts, (1e-5, 1e-3)).is_err());
    }

    #[test]
    fn strong_bunching_outside_bracket_fails() {
        // true τ_C far above the bracket with a large contrast
        let pts = synthetic(1.0, 1.0, 50, 1e-5);
        assert!(matches!(fit_g2(&pts, (1e-5, 1e-3)), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn band_contains_model() {
        let pts = synthetic(1.0, 143e-6, 150, 7e-6);
        let mut fit = fit_g2(&pts, (7e-6, 1e-2)).unwrap();
        fit.covariance = [[0.01, 0.0], [0.0, 1e-10]];
        let band = fit.band(&[0.0, 1e-4, 1e-3], 3.0);
        for b in band {
            assert!(b.lower <= b.value && b.value <= b.upper);
            assert!((b.value - fit.model(b.tau)).abs() < 1e-15);
        }
    }
}

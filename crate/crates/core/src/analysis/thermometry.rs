use serde::{Deserialize, Serialize};

use super::minimize::log_scan_golden;
use crate::error::{ensure_positive, Error, Result};
use crate::optomech::{backaction_limit, MechanicalMode, OpticalCavity};

/// Raw inputs of one Raman-ratio measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamanCounts {
    pub counts_antistokes: u64,
    pub duration_antistokes: f64,
    pub counts_stokes: u64,
    pub duration_stokes: f64,
    pub dark_rate: f64,
    pub dark_rate_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub sigma: f64,
}

/// Dark-subtracted `Γ_AS/Γ_S` with first-order error propagation of the
/// Poisson count variances and the (shared) dark-rate uncertainty.
pub fn raman_ratio(c: &RamanCounts) -> Result<RatioEstimate> {
    ensure_positive("duration_antistokes", c.duration_antistokes)?;
    ensure_positive("duration_stokes", c.duration_stokes)?;
    if !(c.dark_rate >= 0.0 && c.dark_rate_sigma >= 0.0) {
        return Err(Error::invalid("dark_rate", "rate and sigma must be >= 0"));
    }
    let net_as = c.counts_antistokes as f64 / c.duration_antistokes - c.dark_rate;
    let net_s = c.counts_stokes as f64 / c.duration_stokes - c.dark_rate;
    if !(net_s > 0.0) {
        return Err(Error::NonPositiveRate {
            channel: "Stokes",
            rate: net_s,
        });
    }
    if net_as < 0.0 {
        return Err(Error::NonPositiveRate {
            channel: "anti-Stokes",
            rate: net_as,
        });
    }
    let ratio = net_as / net_s;
    let var_as = c.counts_antistokes as f64 / (c.duration_antistokes * c.duration_antistokes);
    let var_s = c.counts_stokes as f64 / (c.duration_stokes * c.duration_stokes);
    // ∂R/∂d = (R - 1)/net_s since the dark rate enters both channels
    let var = (var_as + ratio * ratio * var_s + (ratio - 1.0).powi(2) * c.dark_rate_sigma.powi(2))
        / (net_s * net_s);
    Ok(RatioEstimate {
        ratio,
        sigma: var.sqrt(),
    })
}

/// One-sigma uncertainties of the cavity parameters (rad/s), folded into the
/// occupancy error in quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CavityUncertainty {
    pub kappa: f64,
    pub detuning: f64,
    pub omega_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermometryResult {
    pub ratio_r: f64,
    pub ratio_sigma: f64,
    pub n_est: f64,
    pub sigma_n: f64,
    pub inputs: Option<RamanCounts>,
}

/// `A₊/A₋` from the cavity response alone.
fn stokes_over_antistokes(cavity: &OpticalCavity, omega_m: f64) -> f64 {
    cavity.antistokes_denominator(omega_m) / cavity.stokes_denominator(omega_m)
}

fn occupancy(ratio: f64, q: f64) -> f64 {
    ratio * q / (1.0 - ratio * q)
}

/// Inverts the Raman ratio into a phonon occupancy, `n = R·A₊/(A₋ - R·A₊)`.
pub fn occupancy_from_ratio(
    ratio: RatioEstimate,
    cavity: &OpticalCavity,
    mode: &MechanicalMode,
    cavity_sigma: Option<&CavityUncertainty>,
) -> Result<ThermometryResult> {
    let q = stokes_over_antistokes(cavity, mode.omega_m);
    let limit = 1.0 / q;
    if !(ratio.ratio >= 0.0 && ratio.ratio < limit) {
        return Err(Error::UnphysicalRatio {
            ratio: ratio.ratio,
            limit,
        });
    }
    let n_est = occupancy(ratio.ratio, q);
    let dn_dr = q / (1.0 - ratio.ratio * q).powi(2);
    let mut var = (dn_dr * ratio.sigma).powi(2);

    if let Some(u) = cavity_sigma {
        let n_at = |kappa: f64, detuning: f64, omega_m: f64| {
            let c = OpticalCavity {
                kappa,
                detuning,
                ..*cavity
            };
            occupancy(ratio.ratio, stokes_over_antistokes(&c, omega_m))
        };
        let (k, d, w) = (cavity.kappa, cavity.detuning, mode.omega_m);
        let partial = |h: f64, f: &dyn Fn(f64) -> f64| {
            if h == 0.0 {
                0.0
            } else {
                let step = h * 1e-3;
                (f(step) - f(-step)) / (2.0 * step) * h
            }
        };
        var += partial(u.kappa, &|s| n_at(k + s, d, w)).powi(2);
        var += partial(u.detuning, &|s| n_at(k, d + s, w)).powi(2);
        var += partial(u.omega_m, &|s| n_at(k, d, w + s)).powi(2);
    }

    Ok(ThermometryResult {
        ratio_r: ratio.ratio,
        ratio_sigma: ratio.sigma,
        n_est,
        sigma_n: var.sqrt(),
        inputs: None,
    })
}

/// Ratio, then occupancy, from raw counts.
pub fn thermometry(
    counts: &RamanCounts,
    cavity: &OpticalCavity,
    mode: &MechanicalMode,
    cavity_sigma: Option<&CavityUncertainty>,
) -> Result<ThermometryResult> {
    let ratio = raman_ratio(counts)?;
    let mut result = occupancy_from_ratio(ratio, cavity, mode, cavity_sigma)?;
    result.inputs = Some(*counts);
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    /// Optical broadening, rad/s.
    pub gamma_opt: f64,
    pub n_est: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub sigma: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Occupancy predicted at broadening `gamma_opt` for the given mode.
pub fn occupancy_model(gamma_opt: f64, n_ba: f64, mode: &MechanicalMode) -> f64 {
    (n_ba * gamma_opt + mode.bath_flux()) / (gamma_opt + mode.gamma_m)
}

const T_MIN: f64 = 0.1;
const T_MAX: f64 = 1000.0;

/// Weighted least squares of the occupancy model over the bath temperature.
pub fn fit_bath_temperature(
    points: &[OccupancyPoint],
    cavity: &OpticalCavity,
    mode: &MechanicalMode,
) -> Result<TemperatureFit> {
    if points.is_empty() {
        return Err(Error::invalid("points", "need at least one occupancy point"));
    }
    for p in points {
        ensure_positive("sigma", p.sigma)?;
        if !(p.gamma_opt >= 0.0 && p.n_est.is_finite()) {
            return Err(Error::invalid("points", "gamma_opt must be >= 0 and n_est finite"));
        }
    }
    // A₊ = n_ba·Γ_opt for every drive strength
    let n_ba = backaction_limit(cavity, mode)?;
    let chi2 = |t: f64| -> f64 {
        let m = match mode.at_temperature(t) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        points
            .iter()
            .map(|p| ((p.n_est - occupancy_model(p.gamma_opt, n_ba, &m)) / p.sigma).powi(2))
            .sum()
    };
    let best = log_scan_golden(chi2, T_MIN, T_MAX, 200);
    if best.on_boundary {
        return Err(Error::NonConvergence(format!(
            "bath temperature has no interior minimum in [{T_MIN}, {T_MAX}] K"
        )));
    }
    let t = best.x;
    let slope = mode.occupancy_model.occupancy_slope(mode.omega_m, t);
    let curvature: f64 = points
        .iter()
        .map(|p| {
            let dn_dt = slope * mode.gamma_m / (p.gamma_opt + mode.gamma_m);
            (dn_dt / p.sigma).powi(2)
        })
        .sum();
    Ok(TemperatureFit {
        temperature: t,
        sigma: 1.0 / curvature.sqrt(),
        chi2: best.value,
        dof: points.len().saturating_sub(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optomech::{sideband_fluxes, OptomechanicalConfig};
    use approx::assert_relative_eq;

    fn counts(rate_as: f64, rate_s: f64, t: f64, dark: f64) -> RamanCounts {
        RamanCounts {
            counts_antistokes: (rate_as * t).round() as u64,
            duration_antistokes: t,
            counts_stokes: (rate_s * t).round() as u64,
            duration_stokes: t,
            dark_rate: dark,
            dark_rate_sigma: 0.5,
        }
    }

    #[test]
    fn equal_rates_give_unity() {
        let r = raman_ratio(&counts(100.0, 100.0, 10.0, 15.5)).unwrap();
        assert_relative_eq!(r.ratio, 1.0, max_relative = 1e-12);
        assert!(r.sigma > 0.0);
    }

    #[test]
    fn reported_low_power_ratio() {
        let r = raman_ratio(&counts(115.5, 35.5, 1000.0, 15.5)).unwrap();
        assert_relative_eq!(r.ratio, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn dark_exhausting_a_channel_fails() {
        assert!(matches!(
            raman_ratio(&counts(100.0, 10.0, 10.0, 15.5)),
            Err(Error::NonPositiveRate { channel: "Stokes", .. })
        ));
        assert!(matches!(
            raman_ratio(&counts(10.0, 100.0, 10.0, 15.5)),
            Err(Error::NonPositiveRate { channel: "anti-Stokes", .. })
        ));
    }

    #[test]
    fn ratio_sigma_matches_finite_differences() {
        let c = counts(130.0, 60.0, 10.0, 15.5);
        let r = raman_ratio(&c).unwrap();
        let f = |a: f64, s: f64, d: f64| (a - d) / (s - d);
        let (a, s, d) = (130.0, 60.0, 15.5);
        let h = 1e-6;
        let da = (f(a + h, s, d) - f(a - h, s, d)) / (2.0 * h);
        let ds = (f(a, s + h, d) - f(a, s - h, d)) / (2.0 * h);
        let dd = (f(a, s, d + h) - f(a, s, d - h)) / (2.0 * h);
        let var = da * da * a / 10.0 + ds * ds * s / 10.0 + dd * dd * 0.25;
        assert_relative_eq!(r.sigma, var.sqrt(), max_relative = 1e-6);
    }

    #[test]
    fn occupancy_from_ratio_points() {
        let cfg = OptomechanicalConfig::reference(11e3).unwrap();
        let zero = RatioEstimate { ratio: 0.0, sigma: 0.1 };
        let res = occupancy_from_ratio(zero, &cfg.cavity, &cfg.mode, None).unwrap();
        assert_eq!(res.n_est, 0.0);

        let r = RatioEstimate { ratio: 1.2, sigma: 0.0 };
        let res = occupancy_from_ratio(r, &cfg.cavity, &cfg.mode, None).unwrap();
        assert!((res.n_est - 0.23).abs() < 0.01, "{}", res.n_est);

        let too_big = RatioEstimate { ratio: 6.5, sigma: 0.1 };
        assert!(matches!(
            occupancy_from_ratio(too_big, &cfg.cavity, &cfg.mode, None),
            Err(Error::UnphysicalRatio { .. })
        ));
    }

    #[test]
    fn forward_then_inverse_is_identity() {
        let cfg = OptomechanicalConfig::reference(2.1e3).unwrap();
        let rates = cfg.rates();
        for n in [0.0, 1e-3, 0.23, 1.0, 17.0, 1e4, 1e6] {
            let f = sideband_fluxes(&rates, n);
            let est = occupancy_from_ratio(
                RatioEstimate { ratio: f.ratio(), sigma: 0.0 },
                &cfg.cavity,
                &cfg.mode,
                None,
            )
            .unwrap();
            if n == 0.0 {
                assert_eq!(est.n_est, 0.0);
            } else {
                assert_relative_eq!(est.n_est, n, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn cavity_uncertainty_adds_in_quadrature() {
        let cfg = OptomechanicalConfig::reference(11e3).unwrap();
        let r = RatioEstimate { ratio: 1.2, sigma: 0.05 };
        let base = occupancy_from_ratio(r, &cfg.cavity, &cfg.mode, None).unwrap();
        let zero = occupancy_from_ratio(r, &cfg.cavity, &cfg.mode, Some(&CavityUncertainty::default())).unwrap();
        assert_eq!(base.sigma_n, zero.sigma_n);
        let u = CavityUncertainty {
            kappa: 0.02 * cfg.cavity.kappa,
            detuning: 0.0,
            omega_m: 0.0,
        };
        let wide = occupancy_from_ratio(r, &cfg.cavity, &cfg.mode, Some(&u)).unwrap();
        assert!(wide.sigma_n > base.sigma_n);
    }

    #[test]
    fn single_noiseless_point_recovers_temperature() {
        let cfg = OptomechanicalConfig::reference(11e3).unwrap();
        let n_ba = backaction_limit(&cfg.cavity, &cfg.mode).unwrap();
        let g = crate::optomech::hz_to_angular(1e3);
        let truth = cfg.mode.at_temperature(12.34).unwrap();
        let p = OccupancyPoint {
            gamma_opt: g,
            n_est: occupancy_model(g, n_ba, &truth),
            sigma: 0.1,
        };
        let fit = fit_bath_temperature(&[p], &cfg.cavity, &cfg.mode).unwrap();
        assert_relative_eq!(fit.temperature, 12.34, max_relative = 1e-9);
    }

    #[test]
    fn temperature_outside_bracket_fails() {
        let cfg = OptomechanicalConfig::reference(11e3).unwrap();
        let p = OccupancyPoint {
            gamma_opt: 1e3,
            n_est: 1e12,
            sigma: 1.0,
        };
        assert!(matches!(
            fit_bath_temperature(&[p], &cfg.cavity, &cfg.mode),
            Err(Error::NonConvergence(_))
        ));
    }
}

use std::path::Path;

use phononcount::analysis::{analyze_g2, thermometry, G2Options, RamanCounts};
use phononcount::clicks::{detected_rates, simulate_two_sideband_experiment, Channel};
use phononcount::config::{ExperimentConfig, Overrides, RawConfig};
use phononcount::filter::{fit_calibration, predict_sweep, rejection_db, FilterChain, PsdTrace};
use phononcount::io::{load_click_stream, save_click_stream, Table};
use phononcount::lock::{
    frozen_ensemble, run_duty_cycle, run_lock_acquisition, AcquisitionSettings, ControllerGains, CycleSchedule,
    DriftModel, CALIBRATED_DIFFUSION_NORM, CALIBRATED_DRIFT_NORM,
};
use phononcount::optomech::{angular_to_hz, hz_to_angular};
use phononcount::{Error, Result};
use serde_json::json;

use crate::output::{num, Output};
use crate::{Command, Global};

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut raw = match &g.config {
        Some(p) => RawConfig::from_toml_str(&std::fs::read_to_string(p)?)?,
        None => RawConfig::reference(),
    };
    raw.apply(&Overrides {
        gamma_opt_hz: g.gamma_opt_hz,
        detuning_hz: g.detuning_hz,
        filter_linewidth_hz: g.filter_linewidth_hz,
        dark_rate_hz: g.dark_rate_hz,
    });
    raw.resolve()
}

fn output(g: &Global, name: &str, cfg: &ExperimentConfig) -> Output {
    let snapshot = serde_json::to_value(&cfg.raw).expect("config serializes");
    let mut out = Output::new(&g.out, g.json, name, g.seed, snapshot);
    if let Some(p) = &g.config {
        out.input(p);
    }
    out
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect();
    // keep the endpoints exact
    if let Some(f) = v.first_mut() {
        *f = a;
    }
    if n > 1 {
        v[n - 1] = b;
    }
    v
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<f64>().map_err(|_| Error::Config {
                key: "--grid-hz".into(),
                reason: format!("`{x}` is not a number"),
            })
        })
        .collect()
}

pub fn run(g: &Global, command: Command) -> Result<()> {
    let cfg = load_config(g)?;
    match command {
        Command::Rates { grid_hz } => rates(g, &cfg, grid_hz),
        Command::FilterResponse { from_hz, to_hz, points } => filter_response(g, &cfg, from_hz, to_hz, points),
        Command::PredictCounts {
            psd,
            calibration,
            measured_rate_hz,
            reference_hz,
            from_hz,
            to_hz,
            points,
        } => {
            let cal = match measured_rate_hz {
                Some(r) => Calibration::Measured {
                    rate: r,
                    at: hz_to_angular(reference_hz.unwrap_or(angular_to_hz(cfg.filter.center_detuning))),
                },
                None => Calibration::Fixed(calibration),
            };
            predict_counts(g, &cfg, &psd, cal, linspace(from_hz, to_hz, points))
        }
        Command::Simulate { channel } => simulate(g, &cfg, &channel),
        Command::G2 {
            stream,
            bin_width_s,
            max_delay_s,
            exclusion_s,
            band_sigma,
        } => g2(g, &cfg, &stream, bin_width_s, max_delay_s, exclusion_s, band_sigma),
        Command::Thermometry {
            stokes,
            antistokes,
            dark_rate_sigma_hz,
        } => thermo(g, &cfg, &stokes, &antistokes, dark_rate_sigma_hz),
        Command::LockCycle {
            cycles,
            seeds,
            freeze_s,
            relock_timeout_s,
            horizon_s,
            diffusion_norm,
            drift_norm,
        } => {
            let kf = cfg.filter.widest_linewidth();
            let drift = DriftModel::from_normalized(
                diffusion_norm.unwrap_or(CALIBRATED_DIFFUSION_NORM),
                drift_norm.unwrap_or(CALIBRATED_DRIFT_NORM),
                kf,
            );
            let schedule = CycleSchedule {
                freeze_duration: freeze_s,
                relock_timeout: relock_timeout_s,
                ..CycleSchedule::default()
            };
            lock_cycle(g, &cfg, drift, schedule, cycles, seeds, horizon_s)
        }
    }
}

fn rates(g: &Global, cfg: &ExperimentConfig, grid_hz: Option<String>) -> Result<()> {
    let grid: Vec<f64> = match grid_hz {
        Some(s) => parse_grid(&s)?,
        None if cfg.raw.drive.gamma_opt_grid_hz.is_some() => cfg.gamma_opt_grid.iter().map(|&x| angular_to_hz(x)).collect(),
        None => logspace(255.0, 11e3, 12),
    };
    let mut t = Table::new(
        "rates versus optical broadening",
        &[
            ("gamma_opt_hz", "Γ_opt/2π, Hz"),
            ("a_plus", "Stokes transition rate A+, 1/s"),
            ("a_minus", "anti-Stokes transition rate A-, 1/s"),
            ("n_bar", "steady-state occupancy"),
            ("n_ba", "back-action limit"),
            ("c_q", "quantum cooperativity"),
            ("ratio", "anti-Stokes/Stokes flux ratio"),
            ("flux_stokes", "Stokes scattering flux, 1/s"),
            ("flux_antistokes", "anti-Stokes scattering flux, 1/s"),
            ("clipping", "filter clipping factor"),
            ("detected_stokes_hz", "detected Stokes rate incl. dark counts, Hz"),
            ("detected_antistokes_hz", "detected anti-Stokes rate incl. dark counts, Hz"),
        ],
    );
    t.meta("efficiency", cfg.detection.efficiency_total());
    t.meta("dark_rate_hz", cfg.detection.dark_rate);
    for &gh in &grid {
        let om = cfg.with_gamma_opt(hz_to_angular(gh))?;
        let p = om.predict()?;
        let d = detected_rates(&p, &cfg.filter, &cfg.detection);
        t.push(vec![
            gh,
            p.a_plus,
            p.a_minus,
            p.n_bar,
            p.n_ba,
            p.c_q,
            p.ratio(),
            p.flux_stokes,
            p.flux_antistokes,
            d.clipping,
            d.stokes_total(),
            d.antistokes_total(),
        ]);
    }
    let mut out = output(g, "rates", cfg);
    out.table("rates", &t)?;
    out.finish()?;
    Ok(())
}

fn filter_response(g: &Global, cfg: &ExperimentConfig, from: f64, to: f64, points: usize) -> Result<()> {
    if !(from > 0.0 && to > from) {
        return Err(Error::Config {
            key: "--from-hz/--to-hz".into(),
            reason: "need 0 < from < to".into(),
        });
    }
    let chain = cfg.filter.with_center(0.0);
    let mut t = Table::new(
        "filter chain response",
        &[
            ("offset_hz", "offset from the filter center, Hz"),
            ("transmission", "transmission relative to resonance"),
            ("rejection_db", "rejection, dB"),
        ],
    );
    t.meta("stages", chain.stages.len());
    t.meta("linewidth_hz", angular_to_hz(chain.widest_linewidth()));
    for f in logspace(from, to, points) {
        let w = hz_to_angular(f);
        t.push(vec![f, chain.relative_response(w), rejection_db(&chain, w)]);
    }
    let mut out = output(g, "filter-response", cfg);
    out.table("filter_response", &t)?;
    out.finish()?;
    Ok(())
}

enum Calibration {
    Fixed(f64),
    Measured { rate: f64, at: f64 },
}

fn predict_counts(g: &Global, cfg: &ExperimentConfig, psd_path: &Path, cal: Calibration, centers_hz: Vec<f64>) -> Result<()> {
    let psd = PsdTrace::parse(&std::fs::read_to_string(psd_path)?)?;
    let calibration = match cal {
        Calibration::Fixed(c) => c,
        Calibration::Measured { rate, at } => fit_calibration(&cfg.filter.with_center(at), &psd, rate)?,
    };
    let centers: Vec<f64> = centers_hz.iter().map(|&f| hz_to_angular(f)).collect();
    let sweep = predict_sweep(&cfg.filter, &psd, calibration, &centers)?;
    let mut t = Table::new(
        "predicted count rate versus filter detuning",
        &[
            ("center_hz", "filter center detuning, Hz"),
            ("rate_hz", "predicted rate, Hz"),
            ("rate_low_hz", "rate with shot-noise floor +1 sd, Hz"),
            ("rate_high_hz", "rate with shot-noise floor -1 sd, Hz"),
        ],
    );
    t.meta("calibration", calibration);
    t.meta("shot_noise_level", psd.shot_noise_level);
    t.meta("shot_noise_sigma", psd.shot_noise_sigma);
    for p in sweep {
        t.push(vec![angular_to_hz(p.center_detuning), p.rate, p.rate_low, p.rate_high]);
    }
    let mut out = output(g, "predict-counts", cfg);
    out.input(psd_path);
    out.table("predicted_counts", &t)?;
    out.finish()?;
    Ok(())
}

fn simulate(g: &Global, cfg: &ExperimentConfig, channel: &str) -> Result<()> {
    let duration = g.duration_s.unwrap_or(10.0);
    let which: Vec<Channel> = match channel {
        "both" => vec![Channel::Stokes, Channel::AntiStokes],
        c => match c.parse::<Channel>()? {
            Channel::LockingDiagnostic => {
                return Err(Error::Config {
                    key: "--channel".into(),
                    reason: "only stokes, anti-stokes or both can be simulated".into(),
                })
            }
            ch => vec![ch],
        },
    };
    let streams = simulate_two_sideband_experiment(&cfg.optomech, &cfg.filter, &cfg.detection, duration, g.seed)?;
    let mut out = output(g, "simulate", cfg);
    let mut summary = serde_json::Map::new();
    for ch in which {
        let s = match ch {
            Channel::Stokes => &streams.stokes,
            _ => &streams.antistokes,
        };
        let path = out.path(&format!("clicks_{ch}.txt"));
        save_click_stream(&path, s)?;
        out.record(path);
        out.count(&format!("clicks_{ch}"), s.len() as u64);
        summary.insert(
            ch.to_string(),
            json!({
                "clicks": s.len(),
                "rate_hz": s.rate(),
                "expected_rate_hz": match ch {
                    Channel::Stokes => streams.rates.stokes_total(),
                    _ => streams.rates.antistokes_total(),
                },
            }),
        );
    }
    summary.insert("duration_s".into(), json!(duration));
    summary.insert("seed".into(), json!(g.seed));
    out.summary("simulate_summary", &serde_json::Value::Object(summary))?;
    out.finish()?;
    Ok(())
}

fn g2(
    g: &Global,
    cfg: &ExperimentConfig,
    path: &Path,
    bin_width: Option<f64>,
    max_delay: Option<f64>,
    exclusion: f64,
    band_sigma: f64,
) -> Result<()> {
    let stream = load_click_stream(path)?;
    let opts = G2Options {
        bin_width,
        max_delay,
        exclusion_window: exclusion,
        ..G2Options::default()
    };
    let a = analyze_g2(&stream, &opts)?;
    let taus: Vec<f64> = a.points.iter().map(|p| p.tau).collect();
    let band = a.fit.band(&taus, band_sigma);
    let mut t = Table::new(
        "second-order correlation",
        &[
            ("tau_s", "delay, s"),
            ("counts", "coincidences"),
            ("expected", "coincidences for g2 = 1"),
            ("g2", "normalized correlation"),
            ("sigma", "Poisson error of g2"),
            ("model", "fitted g2"),
            ("band_lower", "model lower band"),
            ("band_upper", "model upper band"),
        ],
    );
    t.meta("bin_width_s", a.histogram.bin_width());
    t.meta("max_delay_s", a.histogram.max_delay());
    t.meta("exclusion_s", a.histogram.exclusion_window());
    t.meta("band_sigma", band_sigma);
    for (p, b) in a.points.iter().zip(&band) {
        t.push(vec![p.tau, p.counts as f64, p.expected, p.g2, p.sigma, b.value, b.lower, b.upper]);
    }
    let f = &a.fit;
    let doc = json!({
        "clicks": stream.len(),
        "duration_s": stream.duration,
        "rate_hz": stream.rate(),
        "g2_zero": f.g2_zero,
        "contrast_a": f.contrast_a,
        "sigma_a": f.sigma_a,
        "tau_c_s": num(f.tau_c),
        "sigma_tau_c_s": num(f.sigma_tau_c),
        "tau_c_constrained": f.tau_c_constrained,
        "chi2": f.chi2,
        "dof": f.dof,
    });
    let mut out = output(g, "g2", cfg);
    out.input(path);
    out.count("clicks", stream.len() as u64);
    out.table("g2_histogram", &t)?;
    out.summary("g2_fit", &doc)?;
    out.finish()?;
    Ok(())
}

fn thermo(g: &Global, cfg: &ExperimentConfig, stokes: &Path, antistokes: &Path, dark_sigma: f64) -> Result<()> {
    let s = load_click_stream(stokes)?;
    let a = load_click_stream(antistokes)?;
    let counts = RamanCounts {
        counts_antistokes: a.len() as u64,
        duration_antistokes: a.duration,
        counts_stokes: s.len() as u64,
        duration_stokes: s.duration,
        dark_rate: cfg.detection.dark_rate,
        dark_rate_sigma: dark_sigma,
    };
    let om = &cfg.optomech;
    let r = thermometry(&counts, &om.cavity, &om.mode, None)?;
    let doc = json!({
        "counts_stokes": counts.counts_stokes,
        "counts_antistokes": counts.counts_antistokes,
        "dark_rate_hz": counts.dark_rate,
        "ratio_r": r.ratio_r,
        "ratio_sigma": r.ratio_sigma,
        "n_est": r.n_est,
        "sigma_n": r.sigma_n,
    });
    let mut out = output(g, "thermometry", cfg);
    out.input(stokes);
    out.input(antistokes);
    out.count("clicks", (s.len() + a.len()) as u64);
    out.summary("thermometry", &doc)?;
    out.finish()?;
    Ok(())
}

fn state_code(s: phononcount::lock::CavityLockState) -> f64 {
    use phononcount::lock::CavityLockState::*;
    match s {
        Scanning => 0.0,
        SideLock => 1.0,
        DitherLock => 2.0,
        Frozen => 3.0,
        Relocking => 4.0,
    }
}

fn lock_cycle(
    g: &Global,
    cfg: &ExperimentConfig,
    drift: DriftModel,
    schedule: CycleSchedule,
    cycles: usize,
    seeds: usize,
    horizon: f64,
) -> Result<()> {
    let chain: FilterChain = cfg.filter.with_center(0.0);
    let gains = ControllerGains::default();
    let mut out = output(g, "lock-cycle", cfg);

    let acq = run_lock_acquisition(&chain, &drift, &gains, &AcquisitionSettings::default(), g.seed)?;
    let n = chain.stages.len();
    let mut cols: Vec<(String, String)> = vec![("time_s".into(), "s".into())];
    for i in 1..=n {
        cols.push((format!("state_{i}"), "0 scan, 1 side, 2 dither, 3 frozen, 4 relock".into()));
    }
    for i in 1..=n {
        cols.push((format!("detuning_{i}_hz"), "Hz".into()));
    }
    let col_refs: Vec<(&str, &str)> = cols.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut t = Table::new("lock acquisition trajectory", &col_refs);
    for s in &acq.states {
        let mut row = vec![s.time];
        row.extend(s.states.iter().map(|&x| state_code(x)));
        row.extend(s.detunings.iter().map(|&d| angular_to_hz(d)));
        t.push(row);
    }
    out.table("lock_acquisition", &t)?;

    let ens = frozen_ensemble(&chain, &drift, horizon, seeds, g.seed)?;
    let mut t = Table::new(
        "frozen-lock transmission, ensemble mean",
        &[("time_s", "time since freeze, s"), ("transmission", "mean relative transmission")],
    );
    t.meta("seeds", seeds);
    for (k, &m) in ens.mean_curve.iter().enumerate() {
        t.push(vec![k as f64 * phononcount::lock::FROZEN_DT, m]);
    }
    out.table("frozen_mean", &t)?;

    let duty = run_duty_cycle(&schedule, &chain, &drift, &gains, cycles, g.seed)?;
    let mut t = Table::new(
        "duty cycle",
        &[("cycle", "index"), ("mean_transmission", "mean over the counting window")],
    );
    for (i, &m) in duty.per_cycle_mean.iter().enumerate() {
        t.push(vec![i as f64, m]);
    }
    out.table("duty_cycle", &t)?;
    out.count("seeds", seeds as u64);
    out.count("cycles", cycles as u64);

    let doc = json!({
        "acquired_at_s": acq.acquired_at,
        "median_time_to_half_s": num(ens.median_time_to_half),
        "fraction_holding_80": ens.fraction_holding_80,
        "duty_mean": duty.mean,
        "duty_sd": duty.sd,
        "relock_timeouts": duty.relock_timeouts,
        "diffusion_rad2_s3": drift.diffusion,
        "drift_rad_s2": drift.deterministic_drift,
    });
    out.summary("lock_summary", &doc)?;
    out.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use phononcount::filter::chain_clipping;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_grid("255, 11e3").unwrap(), vec![255.0, 11e3]);
        assert!(parse_grid("1,x").is_err());
        let l = logspace(1.0, 100.0, 3);
        assert!((l[1] - 10.0).abs() < 1e-12);
        assert_eq!(linspace(0.0, 1.0, 0).len(), 0);
    }

    #[test]
    fn clipping_column_uses_chain() {
        let cfg = ExperimentConfig::reference();
        let c = chain_clipping(&cfg.filter, hz_to_angular(255.0));
        assert!((c - 0.9817).abs() < 1e-3);
    }
}

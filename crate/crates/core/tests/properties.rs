use phononcount::analysis::{build_histogram, occupancy_from_ratio, raman_ratio, RamanCounts, RatioEstimate};
use phononcount::clicks::{apply_dead_time, thin_by_efficiency, Channel, ClickStream};
use phononcount::filter::{chain_transmission, clipping_factor, rejection_db, FilterChain, FilterStage};
use phononcount::optomech::{
    angular_to_hz, backaction_limit, hz_to_angular, steady_state_occupancy, transition_rates, DriveSetting,
    MechanicalMode, OccupancyModel, OpticalCavity,
};
use proptest::prelude::*;

fn cavity(kappa_hz: f64, detuning_hz: f64) -> OpticalCavity {
    OpticalCavity::new(hz_to_angular(kappa_hz), hz_to_angular(detuning_hz)).unwrap()
}

fn mode(q: f64, t: f64) -> MechanicalMode {
    MechanicalMode::with_temperature(hz_to_angular(1.48e6), q, t, OccupancyModel::HighTemperature).unwrap()
}

fn stream(mut ns: Vec<u64>, duration_ns: u64) -> ClickStream {
    ns.sort_unstable();
    ns.dedup();
    let mut s = ClickStream::from_seconds(&[], duration_ns as f64 * 1e-9, Channel::AntiStokes).unwrap();
    s.timestamps = ns;
    s
}

proptest! {
    #[test]
    fn hz_angular_identity(f in -1e9f64..1e9) {
        let back = angular_to_hz(hz_to_angular(f));
        prop_assert!((back - f).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn sideband_asymmetry_independent_of_drive(
        kappa in 0.5e6f64..10e6,
        det in 0.2e6f64..5e6,
        g1 in 1e3f64..1e9,
        scale in 1e-3f64..1e3,
    ) {
        let c = cavity(kappa, -det);
        let m = mode(3.8e8, 8.8);
        let r1 = transition_rates(&c, &m, &DriveSetting::new(g1).unwrap());
        let r2 = transition_rates(&c, &m, &DriveSetting::new(g1 * scale).unwrap());
        let q1 = r1.a_plus / r1.a_minus;
        let q2 = r2.a_plus / r2.a_minus;
        prop_assert!((q1 - q2).abs() <= 1e-12 * q1);
    }

    #[test]
    fn occupancy_stays_between_limits(gamma_hz in 10f64..1e6) {
        let c = cavity(2.75e6, -1.85e6);
        let m = mode(3.8e8, 8.8);
        let d = DriveSetting::for_gamma_opt(&c, &m, hz_to_angular(gamma_hz)).unwrap();
        let r = transition_rates(&c, &m, &d);
        let n = steady_state_occupancy(&r, &m).unwrap();
        let nba = backaction_limit(&c, &m).unwrap();
        prop_assert!(n >= nba && n <= m.n_th);
    }

    #[test]
    fn estimator_round_trip(n in 0.0f64..50.0, kappa in 0.5e6f64..10e6, det in 0.2e6f64..5e6) {
        let c = cavity(kappa, -det);
        let m = mode(3.8e8, 8.8);
        let r = transition_rates(&c, &m, &DriveSetting::new(1e6).unwrap());
        let ratio = n / (n + 1.0) * r.a_minus / r.a_plus;
        let est = occupancy_from_ratio(RatioEstimate { ratio, sigma: 0.01 }, &c, &m, None).unwrap();
        prop_assert!((est.n_est - n).abs() <= 1e-9 * n.max(1.0), "{} vs {}", est.n_est, n);
    }

    #[test]
    fn ratio_invariant_to_common_efficiency(
        ns in 100u64..100_000,
        nas in 100u64..100_000,
        k in 1u64..50,
    ) {
        let base = RamanCounts {
            counts_antistokes: nas,
            duration_antistokes: 10.0,
            counts_stokes: ns,
            duration_stokes: 10.0,
            dark_rate: 0.0,
            dark_rate_sigma: 0.0,
        };
        let scaled = RamanCounts { counts_antistokes: nas * k, counts_stokes: ns * k, ..base };
        let a = raman_ratio(&base).unwrap();
        let b = raman_ratio(&scaled).unwrap();
        prop_assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio);
        prop_assert!(b.sigma <= a.sigma * (1.0 + 1e-12));
    }

    #[test]
    fn chain_product_rule(
        widths in prop::collection::vec(1e3f64..1e6, 1..6),
        peaks in prop::collection::vec(0.1f64..1.0, 6),
        offset in -5e6f64..5e6,
    ) {
        let stages: Vec<FilterStage> = widths.iter().zip(&peaks)
            .map(|(&w, &p)| FilterStage::new(w, p).unwrap()).collect();
        let chain = FilterChain::new(stages.clone(), 0.0, 1.0).unwrap();
        let product: f64 = stages.iter()
            .map(|s| chain_transmission(&FilterChain::new(vec![*s], 0.0, 1.0).unwrap(), offset))
            .product();
        let t = chain_transmission(&chain, offset);
        prop_assert!((t - product).abs() <= 1e-12 * product.max(1e-300));
        let db: f64 = stages.iter()
            .map(|s| rejection_db(&FilterChain::new(vec![*s], 0.0, 1.0).unwrap(), offset))
            .sum();
        prop_assert!((rejection_db(&chain, offset) - db).abs() <= 1e-9 * db.max(1.0));
    }

    #[test]
    fn clipping_monotone(g in 1e-3f64..1e3, step in 1.001f64..3.0) {
        let kf = 1.0;
        let c = clipping_factor(g, kf);
        prop_assert!(c > 0.0 && c <= 1.0);
        prop_assert!(clipping_factor(g * step, kf) < c);
        prop_assert!(clipping_factor(g, kf * step) > c);
    }

    #[test]
    fn histogram_matches_brute_force(
        ts in prop::collection::vec(0u64..2_000_000, 2..300),
        width in 1u64..50_000,
        nbins in 1u64..40,
        excl in 0u64..20_000,
    ) {
        let s = stream(ts, 2_000_001);
        prop_assume!(s.len() >= 2);
        let max = width * nbins;
        let h = build_histogram(&s, max as f64 * 1e-9, width as f64 * 1e-9, excl as f64 * 1e-9).unwrap();
        let mut brute = vec![0u64; h.counts.len()];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                let d = s.timestamps[j] - s.timestamps[i];
                if d > excl && d <= max {
                    brute[((d - 1) / width) as usize] += 1;
                }
            }
        }
        prop_assert_eq!(h.counts, brute);
    }

    #[test]
    fn dead_time_enforces_gap(ts in prop::collection::vec(0u64..1_000_000, 0..400), dead in 0u64..20_000) {
        let s = stream(ts, 1_000_000);
        let out = apply_dead_time(&s, dead as f64 * 1e-9).unwrap();
        out.check_invariants(dead as f64 * 1e-9).unwrap();
        prop_assert!(out.timestamps.iter().all(|t| s.timestamps.binary_search(t).is_ok()));
        if let (Some(a), Some(b)) = (s.timestamps.first(), out.timestamps.first()) {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn thinning_yields_subset(ts in prop::collection::vec(0u64..1_000_000, 0..400), eta in 0.0f64..=1.0, seed: u64) {
        let s = stream(ts, 1_000_000);
        let out = thin_by_efficiency(&s, eta, seed).unwrap();
        prop_assert!(out.len() <= s.len());
        prop_assert!(out.timestamps.iter().all(|t| s.timestamps.binary_search(t).is_ok()));
        prop_assert_eq!(out, thin_by_efficiency(&s, eta, seed).unwrap());
    }
}

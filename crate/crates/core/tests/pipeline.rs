use std::path::PathBuf;

use phononcount::analysis::{thermometry, RamanCounts};
use phononcount::clicks::simulate_two_sideband_experiment;
use phononcount::config::ExperimentConfig;
use phononcount::io::{load_click_stream, save_click_stream};
use phononcount::optomech::hz_to_angular;

fn sample_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

#[test]
fn shipped_config_matches_builtin_reference() {
    let loaded = ExperimentConfig::load(&sample_config()).unwrap();
    let builtin = ExperimentConfig::reference();
    assert_eq!(loaded.optomech, builtin.optomech);
    assert_eq!(loaded.detection, builtin.detection);
    assert_eq!(loaded.filter, builtin.filter);
    assert_eq!(loaded.gamma_opt_grid.len(), 7);
}

#[test]
fn simulate_save_load_and_estimate() {
    let exp = ExperimentConfig::load(&sample_config()).unwrap();
    let cfg = exp.with_gamma_opt(hz_to_angular(4e3)).unwrap();
    let truth = cfg.predict().unwrap().n_bar;
    let s = simulate_two_sideband_experiment(&cfg, &exp.filter, &exp.detection, 300.0, 31).unwrap();

    let dir = std::env::temp_dir().join(format!("phononcount-pipeline-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (ps, pa) = (dir.join("stokes.txt"), dir.join("antistokes.txt"));
    save_click_stream(&ps, &s.stokes).unwrap();
    save_click_stream(&pa, &s.antistokes).unwrap();
    let stokes = load_click_stream(&ps).unwrap();
    let antistokes = load_click_stream(&pa).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(stokes.timestamps, s.stokes.timestamps);
    assert_eq!(antistokes.timestamps, s.antistokes.timestamps);

    let counts = RamanCounts {
        counts_antistokes: antistokes.len() as u64,
        duration_antistokes: antistokes.duration,
        counts_stokes: stokes.len() as u64,
        duration_stokes: stokes.duration,
        dark_rate: exp.detection.dark_rate,
        dark_rate_sigma: 0.0,
    };
    let r = thermometry(&counts, &cfg.cavity, &cfg.mode, None).unwrap();
    assert!(
        (r.n_est - truth).abs() <= 4.0 * r.sigma_n,
        "n̄ = {} ± {} vs {truth}",
        r.n_est,
        r.sigma_n
    );
}

use nlsp_core::config::parse_config;
use nlsp_core::report::summarize_run;
use nlsp_core::scenario::{read_run, run_scenario_with, RunOptions};
use nlsp_core::snapshot;

const TRAPPED: &str = "seed = 9
[grid]
dim = 1
n = 256
l = 20
[model]
potential = gaussian_well
nonlinearity = cubic
[scenario]
soliton = false
velocity = 0.5
w0 = 0.04, 0.01
t_final = 2
dt = 0.002
cadence = 0.2
checkpoint_every = 1
[diagnostics]
decompose = true
";

#[test]
fn run_directory_reproduces_in_memory_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(TRAPPED).unwrap();
    let opts = RunOptions { out_dir: Some(tmp.path().to_path_buf()), ..Default::default() };
    let state = run_scenario_with(&cfg, &opts).unwrap();
    let live = state.metrics().unwrap();
    let disk = summarize_run(tmp.path()).unwrap();
    assert_eq!(live.samples, 11);
    assert_eq!(disk.samples, live.samples);
    assert_eq!(disk.config_hash, cfg.hash());
    assert_eq!(disk.gate_failures, 0);
    assert!((disk.charge_drift_rate - live.charge_drift_rate).abs() <= 1e-12 * live.charge_drift_rate.max(1e-300) + 1e-18);
    let (back, samples, _, _) = read_run(tmp.path()).unwrap();
    assert_eq!(back.hash(), cfg.hash());
    assert!(samples.iter().all(|s| s.dec.is_some()));
    // the trapped mode rotates at E_w without leaving the branch
    let w = disk.w_drift.unwrap();
    assert!(w.constant < 1e-2, "{}", w.constant);
    assert!((disk.max_w_ratio.unwrap() - 1.0).abs() < 0.05);
    let last = state.checkpoints.last().unwrap();
    let field = snapshot::load(&tmp.path().join("checkpoints").join(&last.file)).unwrap();
    assert_eq!(field.re(), state.final_field.re());
}

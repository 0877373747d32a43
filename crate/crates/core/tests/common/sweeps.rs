//! Particle sweeps shared by the acceptance run and the ignored signed checks.

use super::median;
use mflab::harness::{self, ExperimentConfig};
use mflab::modenergy::DiagnosticsRecord;

pub const DISK_SWEEP: &str = r#"
N_list = [64, 128, 256, 512, 1024]
seeds = [0, 1, 2, 3, 4, 5, 6, 7]
kernel.d = 2
kernel.s = "log"
flow.kind = "gradient"
init.family = "expanding_ball"
init.sampling = "quantized"
init.R0 = 0.5
time.T = 0.5
time.dt = 0.005
diagnostics.every = 100
"#;

pub const NEWTON_SWEEP: &str = r#"
N_list = [64, 128, 256, 512, 1024]
seeds = [0, 1, 2, 3, 4, 5, 6, 7]
kernel.d = 2
kernel.s = "log"
flow.kind = "newton"
init.family = "radial_profile"
init.p = 2.0
init.sampling = "quantized"
init.R0 = 0.5
time.T = 0.2
time.dt = 0.002
diagnostics.every = 100
"#;

pub fn sweep_records(toml: &str) -> Result<Vec<DiagnosticsRecord>, String> {
    let cfg = ExperimentConfig::from_toml_str(toml).map_err(|e| e.to_string())?;
    let mut all = vec![];
    for &n in &cfg.n_list {
        for &seed in &cfg.seeds {
            let cell = harness::run_cell(&cfg, n, seed);
            if let Some(e) = cell.error {
                return Err(format!("N={n} seed={seed}: {e}"));
            }
            all.extend(cell.records);
        }
    }
    Ok(all)
}

/// Medians over seeds at the final time of `f(record) / N^2`, by increasing N.
pub fn final_medians(recs: &[DiagnosticsRecord], f: impl Fn(&DiagnosticsRecord) -> f64) -> Vec<(usize, f64)> {
    let t_end = recs.iter().map(|r| r.t).fold(0.0, f64::max);
    let mut ns: Vec<usize> = recs.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v = recs
                .iter()
                .filter(|r| r.n == n && (r.t - t_end).abs() < 1e-9)
                .map(|r| f(r) / (n * n) as f64)
                .collect();
            (n, median(v))
        })
        .collect()
}

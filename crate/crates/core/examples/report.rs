//! Runs the pipeline on a small synthetic set and writes the report with
//! its plot data and SVG figures.

use snspd_pnr::pipeline::{run_synthetic, GroupSpec, PipelineConfig};
use snspd_pnr::preprocess::FilterPolicy;
use snspd_pnr::waveform::SyntheticConfig;

fn main() -> snspd_pnr::Result<()> {
    let cfg = PipelineConfig {
        oracle: SyntheticConfig {
            n_samples: 8000,
            ..Default::default()
        },
        groups: vec![GroupSpec {
            n_bar: 1.5,
            count: 4000,
            seed: 12,
        }],
        filter: FilterPolicy {
            window_length: 7500,
            baseline_region: 0..1000,
            ..Default::default()
        },
        training_per_group: 300,
        angle_step: 2.0,
        ..Default::default()
    };
    let out = run_synthetic(&cfg)?;
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("pnr_report"));
    for path in out.report.write_all(&dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

//! Fits a principal-component basis to filtered records and projects them
//! onto the first two components.

use snspd_pnr::pca::{fit_pca, project};
use snspd_pnr::preprocess::{window_and_align, FilterPolicy};
use snspd_pnr::waveform::{generate_synthetic, Source, SyntheticConfig, TraceSet};

fn main() -> snspd_pnr::Result<()> {
    let cfg = SyntheticConfig {
        n_bar: 2.0,
        rng_seed: 3,
        n_samples: 8000,
        ..Default::default()
    };
    let records = generate_synthetic(&cfg, 600)?;
    let set = TraceSet::new(records.iter().map(|r| r.trace.clone()).collect(), Some(2.0), Source::Synthetic)?;
    let policy = FilterPolicy {
        window_length: 7500,
        baseline_region: 0..1000,
        ..Default::default()
    };
    let (kept, report) = window_and_align(&set, &policy)?;
    println!("kept {} of {}", report.accepted, report.total());

    let basis = fit_pca(&kept, 4)?;
    for (i, r) in basis.explained_variance_ratio.iter().enumerate() {
        println!("component {}: {:.4} of the variance", i + 1, r);
    }
    let basis = basis.truncated(2);
    for t in kept.traces().iter().take(5) {
        let p = project(&basis, t)?;
        let n = records[p.trace_id as usize].true_n;
        println!("record {:>3} (n = {n}): w1 = {:+.4}, w2 = {:+.4}", p.trace_id, p.w1, p.w2);
    }
    Ok(())
}

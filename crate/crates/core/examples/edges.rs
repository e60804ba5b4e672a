//! Threshold-crossing times as a second feature plane, and a sweep of the
//! threshold scored by confidence.

use snspd_pnr::discriminate::AngleSearch;
use snspd_pnr::edge::{edge_points, threshold_sweep, ThresholdMode, ThresholdPolicy};
use snspd_pnr::preprocess::{window_and_align, FilterPolicy};
use snspd_pnr::waveform::{generate_synthetic, Source, SyntheticConfig, TraceSet};

fn main() -> snspd_pnr::Result<()> {
    let cfg = SyntheticConfig {
        n_bar: 1.5,
        rng_seed: 8,
        n_samples: 8000,
        ..Default::default()
    };
    let records = generate_synthetic(&cfg, 2500)?;
    let set = TraceSet::new(records.iter().map(|r| r.trace.clone()).collect(), Some(1.5), Source::Synthetic)?;
    let policy = FilterPolicy {
        window_length: 7500,
        baseline_region: 0..1000,
        ..Default::default()
    };
    let (kept, _) = window_and_align(&set, &policy)?;

    let threshold = ThresholdPolicy {
        mode: ThresholdMode::FractionOfMedianPeak,
        value: 0.5,
        timing_resolution: 1.5e-12,
    };
    let edges = edge_points(&kept, &threshold)?;
    println!("threshold {:.1} mV, {} edge pairs, {} dropped", edges.threshold * 1e3, edges.edges.len(), edges.dropped);
    for e in edges.edges.iter().take(4) {
        let n = records[e.trace_id as usize].true_n;
        println!("n = {n}: rise {:.4} ns, fall {:.4} ns", e.t_rise * 1e9, e.t_fall * 1e9);
    }

    let search = AngleSearch {
        step: 2.0,
        n_bar: Some(1.5),
        bins: None,
    };
    let rows = threshold_sweep(&kept, &[0.05, 0.1, 0.185, 0.25], 1.5e-12, 5, 1, &search)?;
    for r in rows {
        println!("threshold {:.3} V: score {:.4} at {:.1} deg", r.threshold, r.score, r.angle);
    }
    Ok(())
}

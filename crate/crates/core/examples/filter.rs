//! Rejects zero-traces and pulse-picking failures, windowing the rest.

use snspd_pnr::preprocess::{FilterPolicy, TraceFilter};
use snspd_pnr::waveform::{SyntheticConfig, SyntheticSource};

fn main() -> snspd_pnr::Result<()> {
    let src = SyntheticSource::new(SyntheticConfig {
        n_bar: 1.0,
        rng_seed: 7,
        ..Default::default()
    })?;
    let mut filter = TraceFilter::new(FilterPolicy::default());
    let mut zero_kept = 0;
    for id in 0..500 {
        let rec = src.record(id);
        let (class, windowed) = filter.process(&rec.trace)?;
        if rec.true_n == 0 && windowed.is_some() {
            zero_kept += 1;
        }
        if id < 5 {
            println!("record {id}: n = {} -> {class:?}", rec.true_n);
        }
    }
    let report = filter.report();
    println!("{report:?}");
    println!("noise-only records accepted: {zero_kept}");
    Ok(())
}

//! Draws labelled records from the pulse oracle and shows how peak height
//! and edge time move with photon number.

use snspd_pnr::waveform::{SyntheticConfig, SyntheticSource};

fn main() -> snspd_pnr::Result<()> {
    let src = SyntheticSource::new(SyntheticConfig {
        n_bar: 1.5,
        rng_seed: 42,
        ..Default::default()
    })?;
    let cfg = src.config();
    println!("n  amplitude(mV)  onset(ns)");
    for n in 1..=6 {
        let (amp, floored) = cfg.amplitude(n);
        let flag = if floored { " (floored)" } else { "" };
        println!("{n}  {:>12.3}  {:>9.4}{flag}", amp * 1e3, cfg.onset(n) * 1e9);
    }

    let mut tally = [0usize; 8];
    for id in 0..2000 {
        tally[(src.photon_number(id) as usize).min(7)] += 1;
    }
    println!("photon numbers over 2000 records: {tally:?}");

    let rec = src.record(3);
    println!(
        "record 3: n = {}, {} samples, peak {:.1} mV",
        rec.true_n,
        rec.trace.len(),
        rec.trace.peak() * 1e3
    );
    Ok(())
}

//! Writes records to a PNRW1 file, reads them back, and imports a
//! comma-separated trace dump.

use std::io::Cursor;

use snspd_pnr::io::{import_delimited_traces, read_waveform_file, write_waveform_file};
use snspd_pnr::waveform::{generate_synthetic, Source, SyntheticConfig, TraceSet};

fn main() -> snspd_pnr::Result<()> {
    let cfg = SyntheticConfig {
        rng_seed: 5,
        n_samples: 2000,
        ..Default::default()
    };
    let records = generate_synthetic(&cfg, 10)?;
    let set = TraceSet::new(records.into_iter().map(|r| r.trace).collect(), Some(1.5), Source::Synthetic)?;

    let dir = std::env::temp_dir().join("pnr_waveform_io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("records.pnrw");
    write_waveform_file(&path, &set)?;
    let back = read_waveform_file(&path, Source::Synthetic)?;
    let same = set
        .traces()
        .iter()
        .zip(back.traces())
        .all(|(a, b)| a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits()));
    println!(
        "{} bytes, {} traces, label {:?}, bitwise equal: {same}",
        std::fs::metadata(&path)?.len(),
        back.len(),
        back.mean_photon_number()
    );

    let text = "# exported by a scope\n0.001,0.002,0.150,0.120\n0.000,0.003,0.160,0.110\n";
    let imported = import_delimited_traces(Cursor::new(text), 8e-12, None)?;
    println!("imported {} traces of {} samples", imported.len(), imported.trace_len());
    Ok(())
}

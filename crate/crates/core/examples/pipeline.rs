//! Both analysis paths end to end on the oracle.
//!
//! `cargo run --release --example pipeline -- 50000` reproduces the full
//! two-group run; the default is smaller.

use snspd_pnr::pipeline::{run_synthetic, PipelineConfig};

fn main() -> snspd_pnr::Result<()> {
    let count: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let mut cfg = PipelineConfig::default();
    for g in &mut cfg.groups {
        g.count = count;
    }
    let out = run_synthetic(&cfg)?;
    println!("edge threshold {:.1} mV", out.threshold * 1e3);
    for f in &out.report.filter {
        println!("{}: {:?}, noise-only accepted {:?}", f.group, f.report, f.zero_accepted);
    }
    for a in &out.report.analyses {
        let c: Vec<String> = a.confidence.reported().map(|(n, c)| format!("{n}:{c:.4}")).collect();
        let acc: Vec<String> = a.accuracy.iter().take(3).map(|(n, x)| format!("{n}:{:.4}", x.fraction())).collect();
        println!(
            "{} {}: angle {:.2}, n_bar {:.3}, C_n [{}], accuracy [{}], overlaps {:?}",
            a.path.name(),
            a.group,
            a.projection.angle,
            a.mixture.n_bar,
            c.join(" "),
            acc.join(" "),
            a.unresolved
        );
    }
    Ok(())
}

//! Confidence values of a hand-built Poisson-tied mixture.

use snspd_pnr::discriminate::{confidence, PoissonMixture};

fn main() -> snspd_pnr::Result<()> {
    // Gaps shrink with photon number, as they do on the detector.
    let means = vec![0.0, 5.0, 9.0, 12.2, 14.8, 16.9];
    let mix = PoissonMixture::new(2.0, 1, means, vec![1.0; 6], 50_000.0)?;
    let rep = confidence(&mix)?;
    for ((n, c), p) in rep.per_n.iter().zip(mix.priors()) {
        println!("n = {n}: prior {p:.4}, C_n {c:.4}");
    }
    println!("overlapping pairs: {:?}", mix.unresolved_pairs());
    println!("reported up to n = {}", rep.n_max_reported);
    println!("prior-weighted mean: {:.4}", rep.weighted_mean(&mix));
    for s in [2.5, 7.0, 11.0] {
        println!("s = {s}: classified as n = {}", mix.classify(s));
    }
    Ok(())
}

//! Mean photon number from detector count rate and laser repetition rate.

use snspd_pnr::calibrate::{calibrate_nbar, expected_count_rate};

fn main() {
    let rr = 1.0e5;
    for cr in [1_000.0, 25_000.0, 63_212.0, 98_168.0] {
        let n = calibrate_nbar(cr, rr).expect("below saturation");
        println!("CR = {cr:>8} /s -> n_bar = {n:.4} (back: {:.1} /s)", expected_count_rate(n, rr));
    }
    match calibrate_nbar(rr, rr) {
        Ok(n) => println!("unexpected: {n}"),
        Err(e) => println!("CR = RR: {e}"),
    }
}

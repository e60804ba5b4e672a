//! Angle search and Poisson-tied mixture fit on a synthetic weight plane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use snspd_pnr::discriminate::{find_optimal_angle, AngleSearch};
use snspd_pnr::pca::WeightPoint;

fn main() -> snspd_pnr::Result<()> {
    // Clusters strung along 138 degrees, each smeared across that line.
    let theta = 138f64.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let poisson = Poisson::new(1.5).unwrap();
    let along = Normal::new(0.0, 0.4).unwrap();
    let across = Normal::new(0.0, 6.0).unwrap();
    let mut points = Vec::new();
    while points.len() < 20_000 {
        let n: f64 = poisson.sample(&mut rng);
        if n < 1.0 {
            continue;
        }
        let a = 3.0 * n.min(7.0) + along.sample(&mut rng);
        let c = across.sample(&mut rng);
        points.push(WeightPoint {
            w1: a * theta.cos() - c * theta.sin(),
            w2: a * theta.sin() + c * theta.cos(),
            trace_id: points.len() as u64,
        });
    }

    let search = AngleSearch {
        step: 1.0,
        ..Default::default()
    };
    let res = find_optimal_angle(&points, 6, 1, &search)?;
    let m = &res.fit.mixture;
    println!("angle {:.2} deg, score {:.4}", res.model.angle, res.model.score);
    println!("fitted n_bar {:.3}, reduced chi2 {:.2}", m.n_bar, m.fit_residual);
    for (i, (mu, s)) in m.means.iter().zip(&m.sigmas).enumerate() {
        let n = m.photon_number(i);
        println!("n = {n}: mean {mu:+.3}, sigma {s:.3}, C_n {:.4}", res.confidence.per_n[&n]);
    }
    Ok(())
}

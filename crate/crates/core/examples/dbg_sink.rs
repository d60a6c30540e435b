use tsda::alignment::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 2..=4usize {
        for trial in 0..8 {
            let zs: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let zt: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let cm = cost_matrix(&zs, &zt, 2.0).unwrap();
            let mut sorted = cm.costs.data.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            let opts = SinkhornOptions {
                eta: 1e-4 * median,
                max_iterations: 50_000,
                exponent: 2.0,
                early_stop: Some(1e-10),
                domain: SinkhornDomain::Auto,
            };
            let r = sinkhorn(&zs, &zt, &opts).unwrap();
            println!("n={} trial={} eta={:.3e} loss={:.6} viol={:.3e}", n, trial, opts.eta, r.loss, r.plan.marginal_violation());
        }
    }
}

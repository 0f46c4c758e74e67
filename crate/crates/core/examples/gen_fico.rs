//! Regenerates `data/fico_sample.csv`: a FICO-shaped profile table with
//! logistic repayment curves and Gaussian score densities, tuned so that
//! α ≈ 0.76 for group a and α ≈ 0.34 for group b.
//!
//!     cargo run -p fairthresh --example gen_fico > crates/core/data/fico_sample.csv

use statrs::distribution::{Continuous, Normal};

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn main() {
    let scores: Vec<f64> = (0..=110).map(|k| 300.0 + 5.0 * k as f64).collect();
    let density = |mean: f64, std: f64| -> Vec<f64> {
        let n = Normal::new(mean, std).unwrap();
        let raw: Vec<f64> = scores.iter().map(|&x| n.pdf(x)).collect();
        let mass: f64 = raw.windows(2).map(|w| 2.5 * (w[0] + w[1])).sum();
        raw.iter().map(|v| v / mass).collect()
    };
    let (da, db) = (density(690.032, 80.0), density(595.925, 85.0));
    println!("score,gamma_a,gamma_b,density_a,density_b");
    for (k, &x) in scores.iter().enumerate() {
        println!(
            "{x},{:.8},{:.8},{:.10e},{:.10e}",
            logistic((x - 615.0) / 38.0),
            logistic((x - 640.0) / 38.0),
            da[k],
            db[k]
        );
    }
}

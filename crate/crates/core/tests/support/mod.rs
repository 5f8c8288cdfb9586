//! Shared fixtures and independent reference implementations used by the
//! integration and acceptance suites. Everything here is written directly
//! from first principles, separate from the library code paths it checks.

#![allow(dead_code)]

pub mod ap_oracle;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Fixed 3-blob point set: n=90, seed 7, centers far apart relative to the
/// within-blob spread.
pub fn three_blob_dataset() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
    let mut points = Vec::with_capacity(90);
    for &(cx, cy) in &centers {
        for _ in 0..30 {
            let dx: f64 = normal.sample(&mut rng);
            let dy: f64 = normal.sample(&mut rng);
            points.push(vec![cx + 1.5 * dx, cy + 1.5 * dy]);
        }
    }
    points
}

/// Random point cloud for equivalence sweeps.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect()
}

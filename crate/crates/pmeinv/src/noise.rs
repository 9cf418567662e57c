//! Seeded Gaussian perturbation of DN samples.
//!
//! Every sample set draws from its own ChaCha stream keyed by `(seed, stream)`,
//! so the noise does not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pmeinv_core::BoundaryField;

use crate::config::{NoiseConfig, NoiseKind};

pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Perturbs `samples` in place; a zero level leaves them untouched.
pub fn perturb(samples: &mut [BoundaryField], noise: &NoiseConfig, seed: u64, stream: u64) {
    if noise.level == 0.0 {
        return;
    }
    let mut r = rng(seed, stream);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for s in samples {
        for v in s.values_mut() {
            let xi: f64 = normal.sample(&mut r);
            *v = match noise.kind {
                NoiseKind::Multiplicative => *v * (1.0 + noise.level * xi),
                NoiseKind::Additive => *v + noise.level * xi,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmeinv_core::Grid;
    use std::sync::Arc;

    fn samples() -> Vec<BoundaryField> {
        let g = Arc::new(Grid::cube(2, 1.0, 9).unwrap());
        vec![BoundaryField::constant(g, 2.0); 3]
    }

    #[test]
    fn same_seed_same_noise() {
        let cfg = NoiseConfig {
            level: 0.01,
            kind: NoiseKind::Multiplicative,
        };
        let (mut a, mut b, mut c) = (samples(), samples(), samples());
        perturb(&mut a, &cfg, 7, 3);
        perturb(&mut b, &cfg, 7, 3);
        perturb(&mut c, &cfg, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let rel: Vec<f64> = a.iter().flat_map(|s| s.values().iter().map(|v| v / 2.0 - 1.0)).collect();
        let sd = (rel.iter().map(|x| x * x).sum::<f64>() / rel.len() as f64).sqrt();
        assert!(sd > 0.006 && sd < 0.014, "{sd}");
    }

    #[test]
    fn zero_level_is_identity() {
        let mut a = samples();
        perturb(&mut a, &NoiseConfig::default(), 1, 0);
        assert_eq!(a, samples());
    }
}

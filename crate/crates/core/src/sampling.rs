//! Deterministic sampling: Halton points and seeded random discrete fields.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fespace::{FeFunction, FeSpace};

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Point `index` of the Halton sequence in `[0,1)^dim`, `dim ≤ 8`.
/// Index 0 is skipped so the origin never appears.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    PRIMES[..dim].iter().map(|&b| radical_inverse(index + 1, b)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random discrete field; cycles through rough, smooth and peaked shapes so
/// samples cover both oscillatory and near-extremal fields.
pub fn random_field(space: &Arc<FeSpace>, rng: &mut ChaCha8Rng, kind: usize) -> FeFunction {
    let (lo, hi) = space.mesh().domain().bounds();
    let dim = space.mesh().dim();
    let rel = |x: &[f64], d: usize| (x[d] - lo[d]) / (hi[d] - lo[d]);
    match kind % 3 {
        0 => {
            let coeffs = (0..space.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            FeFunction::from_coefficients(space, coeffs).expect("length matches")
        }
        1 => {
            let modes: Vec<(f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(-1.0..1.0),
                        rng.random_range(1..=4) as f64,
                        rng.random_range(1..=4) as f64,
                    )
                })
                .collect();
            FeFunction::interpolate(space, |x| {
                modes
                    .iter()
                    .map(|&(a, kx, ky)| {
                        let sy = if dim == 2 { (ky * PI * rel(x, 1)).sin() } else { 1.0 };
                        a * (kx * PI * rel(x, 0)).sin() * sy
                    })
                    .sum()
            })
        }
        _ => {
            let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(0.05..0.95)).collect();
            let width = rng.random_range(0.1..1.0);
            let power = rng.random_range(0.2..2.0);
            let amp = rng.random_range(-2.0..2.0);
            FeFunction::interpolate(space, |x| {
                let r2: f64 = (0..dim).map(|d| (rel(x, d) - centre[d]).powi(2)).sum();
                let dist = (1.0 - r2.sqrt() / width).max(0.0);
                let edge: f64 = (0..dim).map(|d| rel(x, d) * (1.0 - rel(x, d))).product();
                amp * dist.powf(power) * (4f64.powi(dim as i32) * edge).min(1.0)
            })
        }
    }
}

/// `count` fields from a fixed seed.
pub fn random_fields(space: &Arc<FeSpace>, count: usize, seed: u64) -> Vec<FeFunction> {
    let mut r = rng(seed);
    (0..count).map(|i| random_field(space, &mut r, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainDescriptor};

    #[test]
    fn halton_in_unit_cube() {
        for i in 0..100 {
            let p = halton(i, 3);
            assert!(p.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
    }

    #[test]
    fn fields_are_reproducible() {
        let s = FeSpace::new(build_mesh(DomainDescriptor::interval(0.0, 1.0).unwrap(), 8).unwrap());
        let a = random_fields(&s, 6, 7);
        let b = random_fields(&s, 6, 7);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.coefficients(), y.coefficients());
        }
    }
}

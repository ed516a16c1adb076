//! Quadrature helpers: cached Gauss-Legendre rules and a Halton sequence.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussLegendre;

/// Nodes and weights of the `degree`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(degree: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(degree.max(2))
        .or_insert_with(|| {
            let rule = GaussLegendre::new(degree.max(2)).expect("degree >= 2");
            let mut pairs = rule.as_node_weight_pairs().to_vec();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            Arc::new(pairs)
        })
        .clone()
}

/// Integrates `f` over `[a, b]` with the `degree`-point Gauss-Legendre rule.
pub fn integrate<F: FnMut(f64) -> f64>(degree: usize, a: f64, b: f64, mut f: F) -> f64 {
    let rule = gauss_legendre(degree);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `index` in base `base`.
fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % b) as f64;
        index /= b;
        f *= inv;
    }
    r
}

/// The `index`-th point of the Halton sequence in `dim <= 16` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton sequence supports at most 16 dimensions");
    PRIMES[..dim]
        .iter()
        .map(|&p| radical_inverse(index + 1, p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let v = integrate(8, 0.0, 2.0, |x| x.powi(7));
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-12);
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(1, 1), vec![0.25]);
    }
}

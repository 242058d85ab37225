//! Small numeric helpers shared by the attribution loop and the metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Numerically stable softmax. An empty input yields an empty output.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln(p / (1 - p))` with `p` clamped to `[eps, 1 - eps]`.
/// Exactly antisymmetric: `clamped_logit(1 - p) == -clamped_logit(p)`
/// whenever `1 - p` is computed exactly.
pub fn clamped_logit(p: f64, eps: f64) -> f64 {
    if p > 0.5 {
        return -clamped_logit(1.0 - p, eps);
    }
    let p = p.max(eps);
    p.ln() - (1.0 - p).ln()
}

/// `logit((1 + d) / 2)` with the argument clamped to `[eps, 1 - eps]`,
/// evaluated as `ln(1 + d) - ln(1 - d)` so that `f(-d) == -f(d)` exactly.
pub fn centered_logit(d: f64, eps: f64) -> f64 {
    let bound = 1.0 - 2.0 * eps;
    let d = d.clamp(-bound, bound);
    d.ln_1p() - (-d).ln_1p()
}

// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of
/// indices (run index, target position, sample index, ...). Stable across
/// platforms and releases.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_single_entry_is_one() {
        assert_eq!(softmax(&[3.7]), vec![1.0]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax(&[1e4, -1e4, 0.0]);
        assert!(s.iter().all(|v| v.is_finite()));
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logit_half_is_zero() {
        assert_eq!(clamped_logit(0.5, 1e-4), 0.0);
    }

    #[test]
    fn logit_is_clamped() {
        let hi = clamped_logit(1.0, 1e-4);
        assert!((hi - (0.9999f64 / 0.0001).ln()).abs() < 1e-12);
        assert_eq!(clamped_logit(0.0, 1e-4), -hi);
        for p in [0.25, 0.375, 0.75, 0.9375, 1.0] {
            assert_eq!(clamped_logit(1.0 - p, 1e-4), -clamped_logit(p, 1e-4));
        }
    }

    #[test]
    fn centered_logit_matches_clamped_logit() {
        for d in [-1.0, -0.6, -0.2, 0.0, 0.2, 0.999, 1.0] {
            let a = centered_logit(d, 1e-4);
            let b = clamped_logit((1.0 + d) / 2.0, 1e-4);
            assert!((a - b).abs() < 1e-9, "{d}: {a} vs {b}");
            assert_eq!(centered_logit(-d, 1e-4), -a);
        }
        assert!((centered_logit(0.2, 1e-4) - 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(7, &[0, 1]);
        let b = derive_seed(7, &[1, 0]);
        let c = derive_seed(7, &[0, 1]);
        assert_ne!(a, b);
        assert_eq!(a, c);
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }
}

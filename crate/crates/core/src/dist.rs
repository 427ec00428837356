//! Parametric distributions used by device profiles.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Point { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Normal truncated to `[lo, hi]`.
    TruncNormal { mean: f64, std: f64, lo: f64, hi: f64 },
    /// `location + Exp(mean_excess)`.
    ShiftedExponential { location: f64, mean_excess: f64 },
    /// Log-normal with the given median and log-space sigma, truncated below at `floor`.
    LogNormal { median: f64, sigma: f64, #[serde(default)] floor: f64 },
}

impl Dist {
    pub fn point(value: f64) -> Self {
        Dist::Point { value }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Dist::Point { value } => value.is_finite(),
            Dist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Dist::TruncNormal { mean, std, lo, hi } => {
                mean.is_finite() && std >= 0.0 && lo < hi && (std > 0.0 || (lo..=hi).contains(&mean))
            }
            Dist::ShiftedExponential { location, mean_excess } => location.is_finite() && mean_excess >= 0.0,
            Dist::LogNormal { median, sigma, floor } => median > 0.0 && sigma >= 0.0 && floor >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid distribution {self:?}"))
        }
    }

    /// Smallest value the distribution can produce.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            Dist::Point { value } => value,
            Dist::Uniform { lo, .. } => lo,
            Dist::TruncNormal { lo, .. } => lo,
            Dist::ShiftedExponential { location, .. } => location,
            Dist::LogNormal { floor, .. } => floor,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Dist::Point { value } => value,
            Dist::Uniform { lo, hi } => 0.5 * (lo + hi),
            Dist::TruncNormal { mean, std, lo, hi } => {
                if std == 0.0 {
                    return mean.clamp(lo, hi);
                }
                let (a, b) = ((lo - mean) / std, (hi - mean) / std);
                let z = norm_cdf(b) - norm_cdf(a);
                if z < 1e-300 {
                    return if b <= 0.0 { hi } else { lo };
                }
                mean + std * (norm_pdf(a) - norm_pdf(b)) / z
            }
            Dist::ShiftedExponential { location, mean_excess } => location + mean_excess,
            Dist::LogNormal { median, sigma, floor } => {
                if sigma == 0.0 {
                    return median.max(floor);
                }
                let zf = if floor > 0.0 { (floor / median).ln() / sigma } else { f64::NEG_INFINITY };
                median * (0.5 * sigma * sigma).exp() * norm_cdf(sigma - zf) / (1.0 - norm_cdf(zf))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Dist::Point { value } => value,
            Dist::Uniform { lo, hi } => {
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            }
            Dist::TruncNormal { mean, std, lo, hi } => trunc_normal(rng, mean, std, lo, hi),
            Dist::ShiftedExponential { location, mean_excess } => {
                if mean_excess == 0.0 {
                    location
                } else {
                    location + Exp::new(1.0 / mean_excess).unwrap().sample(rng)
                }
            }
            Dist::LogNormal { median, sigma, floor } => {
                if sigma == 0.0 {
                    return median.max(floor);
                }
                let d = LogNormal::new(median.ln(), sigma).unwrap();
                for _ in 0..10_000 {
                    let v = d.sample(rng);
                    if v >= floor {
                        return v;
                    }
                }
                floor
            }
        }
    }
}

/// Rejection sampling from a truncated normal, falling back to inverse-CDF
/// bisection when the acceptance region is far in the tail.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return mean.clamp(lo, hi);
    }
    let n = Normal::new(mean, std).unwrap();
    for _ in 0..64 {
        let v = n.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    let (a, b) = (norm_cdf((lo - mean) / std), norm_cdf((hi - mean) / std));
    let u = a + rng.gen::<f64>() * (b - a);
    let (mut l, mut h) = (lo, hi);
    for _ in 0..80 {
        let m = 0.5 * (l + h);
        if norm_cdf((m - mean) / std) < u {
            l = m;
        } else {
            h = m;
        }
    }
    0.5 * (l + h)
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn norm_ppf(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
    StdNormal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_and_ppf_roundtrip() {
        for p in [1e-6, 0.003, 0.1, 0.5, 0.9, 0.975, 1.0 - 1e-6] {
            assert!((norm_cdf(norm_ppf(p)) - p).abs() < 1e-7 * p.max(1e-3) * 10.0);
        }
        assert!((norm_ppf(0.975) - 1.959_964).abs() < 1e-4);
    }

    #[test]
    fn point_mass_is_constant() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(Dist::point(3.0).sample(&mut r), 3.0);
    }

    #[test]
    fn lognormal_respects_floor() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let d = Dist::LogNormal { median: 2.0, sigma: 1.0, floor: 1.5 };
        assert!((0..2000).all(|_| d.sample(&mut r) >= 1.5));
    }

    #[test]
    fn means_match_samples() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for d in [
            Dist::TruncNormal { mean: 0.9, std: 0.2, lo: 0.5, hi: 1.0 },
            Dist::LogNormal { median: 3.0, sigma: 0.8, floor: 1.0 },
            Dist::ShiftedExponential { location: 2.0, mean_excess: 0.5 },
        ] {
            let n = 200_000;
            let m = (0..n).map(|_| d.sample(&mut r)).sum::<f64>() / n as f64;
            assert!((m / d.mean() - 1.0).abs() < 0.01, "{d:?}: {m} vs {}", d.mean());
        }
    }

    proptest! {
        #[test]
        fn trunc_normal_stays_in_bounds(seed in any::<u64>(), mean in -3.0f64..3.0, std in 0.01f64..2.0, lo in -4.0f64..0.0, w in 0.01f64..4.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let v = trunc_normal(&mut r, mean, std, lo, lo + w);
            prop_assert!(v >= lo && v <= lo + w);
        }
    }
}

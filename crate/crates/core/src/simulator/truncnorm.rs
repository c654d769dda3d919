//! Logistic function and truncated-normal sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// Logistic function `1 / (1 + e^-x)`, evaluated without overflow.
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-odds; inverse of [`expit`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation refined by one
/// Halley step against `erfc`.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density == 0.0 {
        return x;
    }
    let u = (norm_cdf(x) - p) / density;
    x - u / (1.0 + 0.5 * x * u)
}

/// Standardized bound beyond which the inverse-CDF route loses precision and
/// the exponential tail sampler takes over.
const TAIL: f64 = 8.0;

/// Normal(mu, sigma) conditioned on `[a, b]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("truncated normal: sigma must be positive, got {sigma}")));
        }
        if !(a <= b) {
            return Err(Error::Domain(format!("truncated normal: empty interval [{a}, {b}]")));
        }
        if !mu.is_finite() {
            return Err(Error::Domain(format!("truncated normal: non-finite mean {mu}")));
        }
        Ok(Self { mu, sigma, a, b })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let Self { mu, sigma, a, b } = *self;
        if a == b {
            return a;
        }
        let alpha = (a - mu) / sigma;
        let beta = (b - mu) / sigma;
        // Work on the side of the mean where CDF values are small and exact.
        let x = if alpha > 0.0 {
            mu - sigma * standard_lower(-beta, -alpha, rng)
        } else {
            mu + sigma * standard_lower(alpha, beta, rng)
        };
        x.clamp(a, b)
    }
}

/// Standard normal restricted to `[lo, hi]` with `lo <= 0`.
fn standard_lower<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi < -TAIL {
        return -standard_upper_tail(-hi, -lo, rng);
    }
    let pl = norm_cdf(lo);
    let ph = norm_cdf(hi);
    let u: f64 = rng.random();
    let z = norm_ppf(pl + u * (ph - pl));
    if z.is_finite() {
        z.clamp(lo, hi)
    } else if z < 0.0 {
        lo.max(-TAIL * 5.0)
    } else {
        hi
    }
}

/// Standard normal restricted to `[lo, hi]` with `lo > 0` far in the tail:
/// truncated-exponential proposal, accepted with probability `exp(-e^2/2)`.
fn standard_upper_tail<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    let width = hi - lo;
    // Mass of the exponential proposal on [0, width].
    let mass = -(-lo * width).exp_m1();
    loop {
        let u: f64 = rng.random();
        let e = -(-u * mass).ln_1p() / lo;
        let v: f64 = rng.random();
        if v <= (-0.5 * e * e).exp() {
            return (lo + e).min(hi);
        }
    }
}

/// Draws from Normal(mu, sigma) conditioned on `[a, b]`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(TruncatedNormal::new(mu, sigma, a, b)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    #[test]
    fn expit_values() {
        assert_eq!(expit(0.0), 0.5);
        // 1 / (1 + e^50) = 1.9287498479639178e-22
        let v = expit(-50.0);
        assert!((v - 1.928_749_847_963_917_8e-22).abs() < 1e-35, "{v:e}");
        assert!(expit(-700.0) > 0.0);
        assert_eq!(expit(700.0), 1.0);
        assert!(expit(-745.0).is_finite() && expit(745.0).is_finite());
    }

    #[test]
    fn ppf_inverts_cdf() {
        for &p in &[1e-300, 1e-30, 1e-10, 0.001, 0.02425, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-12] {
            let z = norm_ppf(p);
            let back = norm_cdf(z);
            assert!(((back - p) / p).abs() < 1e-12, "p={p:e} z={z} back={back:e}");
        }
        assert_eq!(norm_ppf(0.5), 0.0);
    }

    #[test]
    fn degenerate_interval() {
        let mut rng = stream_rng(1, 0);
        for mu in [-1e6, 0.0, 5.0, 1e9] {
            assert_eq!(sample_truncated_normal(mu, 3.0, 5.0, 5.0, &mut rng).unwrap(), 5.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = stream_rng(1, 0);
        assert!(sample_truncated_normal(0.0, 0.0, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, -1.0, 0.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, 1.0, 2.0, 1.0, &mut rng).is_err());
        assert!(sample_truncated_normal(f64::NAN, 1.0, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn far_mean_concentrates_at_nearest_bound() {
        let mut rng = stream_rng(2, 0);
        let tn = TruncatedNormal::new(1e6, 100.0, 350.0, 800.0).unwrap();
        for _ in 0..10_000 {
            let x = tn.sample(&mut rng);
            assert!(x.is_finite() && (350.0..=800.0).contains(&x));
            // Conditional mean sits 1/alpha sd below the bound; alpha ~ 9992.
            assert!(x > 799.9, "{x}");
        }
        let tn = TruncatedNormal::new(-1e6, 100.0, 350.0, 800.0).unwrap();
        for _ in 0..1000 {
            let x = tn.sample(&mut rng);
            assert!((350.0..350.1).contains(&x), "{x}");
        }
    }

    proptest! {
        #[test]
        fn expit_symmetry(x in -700.0f64..700.0) {
            prop_assert!((expit(x) + expit(-x) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn draws_stay_in_bounds(
            mu in -1e4f64..1e4,
            sigma in 1e-3f64..1e3,
            a in -500.0f64..500.0,
            width in 0.0f64..300.0,
            seed in any::<u64>(),
        ) {
            let mut rng = stream_rng(seed, 0);
            let tn = TruncatedNormal::new(mu, sigma, a, a + width).unwrap();
            for _ in 0..20 {
                let x = tn.sample(&mut rng);
                prop_assert!(x.is_finite());
                prop_assert!(x >= a && x <= a + width);
            }
        }
    }
}

//! Standard normal and truncated normal distribution functions.
//!
//! Piece masses are carried in log space so that truncation pieces sitting
//! tens of standard deviations from the mean still contribute with full
//! relative precision.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::interval::IntervalSet;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Total masses below this are reported as [`Error::ZeroMassRegion`].
pub const MIN_REGION_MASS: f64 = 1e-300;

/// Mean and variance of a normal distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    mean: f64,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(Error::InvalidInput(format!(
                "gaussian parameters need finite mean and positive variance, got ({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd()
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF, evaluated through `erfc` so the lower tail keeps
/// full relative precision.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `Q(x) = 1 - Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// `ln Q(x)`, finite for every finite `x`.
pub fn log_normal_sf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x < 20.0 {
        normal_sf(x).ln()
    } else {
        // Q(x) = φ(x) R(x) with R the Mills ratio
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(x).ln()
    }
}

/// Mills ratio `Q(x)/φ(x)` for large positive `x`, by the Lentz evaluation of
/// `1/(x + 1/(x + 2/(x + 3/(x + ...))))`.
fn mills_ratio(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// Inverse of the standard normal CDF (Acklam's rational approximation refined
/// by one Halley step against [`normal_cdf`]).
pub fn normal_quantile(p: f64) -> f64 {
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
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// `ln P(lo <= Z <= hi)` for a standard normal `Z`, with `lo <= hi`.
///
/// Both endpoints in one tail use differences of that tail's survival
/// function; narrow pieces are integrated directly so that their relative
/// precision does not depend on the width.
pub fn log_std_normal_mass(lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    if lo >= 0.0 {
        log_upper_tail_mass(lo, hi)
    } else if hi <= 0.0 {
        log_upper_tail_mass(-hi, -lo)
    } else {
        // straddles the mode: erf is accurate near zero
        let m = 0.5 * (libm::erf(hi * FRAC_1_SQRT_2) + libm::erf(-lo * FRAC_1_SQRT_2));
        m.ln()
    }
}

/// `ln (Q(a) - Q(b))` for `0 <= a < b`.
fn log_upper_tail_mass(a: f64, b: f64) -> f64 {
    let width = b - a;
    if b.is_finite() && width * a.max(1.0) <= 0.1 {
        return log_narrow_mass(a, b);
    }
    let la = log_normal_sf(a);
    let lb = log_normal_sf(b);
    // ln(Q(a)) + ln(1 - Q(b)/Q(a))
    la + (-(lb - la).exp_m1()).ln()
}

/// Gauss-Legendre integration of the density over a narrow piece, scaled by
/// `exp(-a^2/2)` to stay representable.
fn log_narrow_mass(a: f64, b: f64) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let shift = 0.5 * a * a;
    let sum: f64 = NODES
        .iter()
        .zip(WEIGHTS.iter())
        .map(|(&t, &w)| {
            let x = mid + half * t;
            w * (shift - 0.5 * x * x).exp()
        })
        .sum();
    (sum * half).ln() - shift - LN_SQRT_2PI
}

/// Numerically stable `ln(Σ exp(v))`.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// CDF and survival function of a truncated normal evaluated at one point,
/// with the log of the total region mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedEval {
    pub cdf: f64,
    pub sf: f64,
    pub log_mass: f64,
}

/// Evaluates `F^Z_{m,s^2}(x)` and `1 - F^Z_{m,s^2}(x)` in log space, without the
/// minimum-mass check. Fails only when the region has no mass at all in
/// double-precision log space.
pub fn truncated_normal_eval(
    params: GaussianParams,
    region: &IntervalSet,
    x: f64,
) -> Result<TruncatedEval> {
    let mut below = Vec::with_capacity(region.len());
    let mut above = Vec::with_capacity(region.len());
    for &(lo, hi) in region.intervals() {
        let (l, h) = (params.standardize(lo), params.standardize(hi));
        let xs = params.standardize(x);
        if h <= xs {
            below.push(log_std_normal_mass(l, h));
        } else if l >= xs {
            above.push(log_std_normal_mass(l, h));
        } else {
            below.push(log_std_normal_mass(l, xs));
            above.push(log_std_normal_mass(xs, h));
        }
    }
    let lb = log_sum_exp(below);
    let la = log_sum_exp(above);
    let total = log_sum_exp([lb, la]);
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(Error::ZeroMassRegion {
            log_mass: f64::NEG_INFINITY,
        });
    }
    let cdf = (lb - total).exp();
    let sf = (la - total).exp();
    Ok(TruncatedEval {
        cdf: cdf.clamp(0.0, 1.0),
        sf: sf.clamp(0.0, 1.0),
        log_mass: total,
    })
}

/// CDF of the normal distribution `params` truncated to `region`, at `x`.
///
/// Returns [`Error::ZeroMassRegion`] when the region's total mass is below
/// [`MIN_REGION_MASS`].
pub fn truncated_normal_cdf(params: GaussianParams, region: &IntervalSet, x: f64) -> Result<f64> {
    let eval = truncated_normal_eval(params, region, x)?;
    if eval.log_mass < MIN_REGION_MASS.ln() {
        return Err(Error::ZeroMassRegion {
            log_mass: eval.log_mass,
        });
    }
    Ok(eval.cdf)
}

/// Natural log of the binomial coefficient `C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k).map(|j| ((n - k + j) as f64 / j as f64).ln()).sum()
}

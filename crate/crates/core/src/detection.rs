//! Outlier detection on robust residuals, and the exact set of `z` along a
//! residual path at which detection reproduces a given outlier set.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{DetectionRule, ResidualPath};
use crate::numerics::IntervalSet;

/// Exact magnitude ties at the top-K boundary closer than this are rejected.
pub const TIE_TOL: f64 = 1e-12;

/// Sorted, duplicate-free set of detected instance indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct OutlierSet {
    indices: Vec<usize>,
}

impl OutlierSet {
    pub fn new(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidInput(format!(
                "outlier index {i} out of range for n = {n}"
            )));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// Membership mask of length `n`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// Applies a detection rule to a residual vector.
pub fn detect(residuals: &DVector<f64>, rule: &DetectionRule) -> Result<OutlierSet> {
    let n = residuals.len();
    match *rule {
        DetectionRule::Threshold { xi } => {
            let idx = (0..n).filter(|&i| residuals[i].abs() >= xi).collect();
            Ok(OutlierSet { indices: idx })
        }
        DetectionRule::TopK { k } => {
            rule.validate(n)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| {
                residuals[j]
                    .abs()
                    .total_cmp(&residuals[i].abs())
                    .then(i.cmp(&j))
            });
            let kth = residuals[order[k - 1]].abs();
            let next = residuals[order[k]].abs();
            if kth - next <= TIE_TOL {
                return Err(Error::TieAtBoundary { magnitude: kth });
            }
            let mut idx = order[..k].to_vec();
            idx.sort_unstable();
            Ok(OutlierSet { indices: idx })
        }
    }
}

/// One affine piece `r(z) = f + g z` of a residual path on `[lo, hi]`.
#[derive(Debug, Clone, Copy)]
pub struct ResidualSegment<'a> {
    pub f: &'a DVector<f64>,
    pub g: &'a DVector<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ResidualSegment<'_> {
    pub fn at(&self, z: f64) -> DVector<f64> {
        self.f + self.g * z
    }
}

/// `{z ∈ [lo, hi] : |f_i + g_i z| ≥ ξ}`.
pub fn threshold_region(seg: &ResidualSegment<'_>, i: usize, xi: f64) -> IntervalSet {
    let (f, g) = (seg.f[i], seg.g[i]);
    let (lo, hi) = (seg.lo, seg.hi);
    if g > 0.0 {
        IntervalSet::interval(lo, hi.min((-xi - f) / g))
            .union(&IntervalSet::interval(lo.max((xi - f) / g), hi))
    } else if g < 0.0 {
        IntervalSet::interval(lo, hi.min((xi - f) / g))
            .union(&IntervalSet::interval(lo.max((-xi - f) / g), hi))
    } else if f.abs() >= xi {
        IntervalSet::interval(lo, hi)
    } else {
        IntervalSet::empty()
    }
}

/// `{z ∈ [lo, hi] : |f_i + g_i z| ≥ |f_j + g_j z|}`.
pub fn topk_region(seg: &ResidualSegment<'_>, i: usize, j: usize) -> IntervalSet {
    let (fi, gi, fj, gj) = (seg.f[i], seg.g[i], seg.f[j], seg.g[j]);
    let (lo, hi) = (seg.lo, seg.hi);
    // factored forms keep α, β, γ exactly zero for identical inputs
    let alpha = (gi - gj) * (gi + gj);
    let beta = 2.0 * (fi * gi - fj * gj);
    let gamma = (fi - fj) * (fi + fj);
    if alpha == 0.0 {
        if beta == 0.0 {
            return if gamma >= 0.0 {
                IntervalSet::interval(lo, hi)
            } else {
                IntervalSet::empty()
            };
        }
        let root = -gamma / beta;
        return if beta > 0.0 {
            IntervalSet::interval(lo.max(root), hi)
        } else {
            IntervalSet::interval(lo, hi.min(root))
        };
    }
    let disc = beta * beta - 4.0 * alpha * gamma;
    if disc < 0.0 {
        return if alpha > 0.0 {
            IntervalSet::interval(lo, hi)
        } else {
            IntervalSet::empty()
        };
    }
    // cancellation-free roots
    let sq = disc.sqrt();
    let q = -0.5 * (beta + if beta >= 0.0 { sq } else { -sq });
    let (mut r1, mut r2) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / alpha, gamma / q)
    };
    if r1 > r2 {
        std::mem::swap(&mut r1, &mut r2);
    }
    if alpha > 0.0 {
        IntervalSet::interval(lo, hi.min(r1)).union(&IntervalSet::interval(lo.max(r2), hi))
    } else {
        IntervalSet::interval(lo.max(r1), hi.min(r2))
    }
}

fn segments_of(path: &ResidualPath) -> impl Iterator<Item = ResidualSegment<'_>> {
    path.iter_segments().map(|(lo, hi, s)| ResidualSegment {
        f: &s.c,
        g: &s.d,
        lo,
        hi,
    })
}

/// Region of one segment where `rule` selects exactly `observed`.
pub fn segment_event_region(
    seg: &ResidualSegment<'_>,
    rule: &DetectionRule,
    observed: &OutlierSet,
) -> IntervalSet {
    let n = seg.f.len();
    let mask = observed.mask(n);
    let mut region = IntervalSet::interval(seg.lo, seg.hi);
    match *rule {
        DetectionRule::Threshold { xi } => {
            for i in 0..n {
                let v = threshold_region(seg, i, xi);
                let part = if mask[i] {
                    v
                } else {
                    v.complement_within(seg.lo, seg.hi)
                };
                region = region.intersect(&part);
                if region.is_empty() {
                    break;
                }
            }
        }
        DetectionRule::TopK { .. } => {
            'outer: for &i in observed.indices() {
                for j in (0..n).filter(|&j| !mask[j]) {
                    region = region.intersect(&topk_region(seg, i, j));
                    if region.is_empty() {
                        break 'outer;
                    }
                }
            }
        }
    }
    region
}

/// Union over segments of the per-segment event regions. The observed statistic
/// must lie in the result.
pub fn event_region_over_path(
    path: &ResidualPath,
    rule: &DetectionRule,
    observed: &OutlierSet,
    z_obs: f64,
) -> Result<IntervalSet> {
    if observed.is_empty() {
        return Err(Error::InvalidInput("observed outlier set is empty".into()));
    }
    let pieces: Vec<(f64, f64)> = segments_of(path)
        .flat_map(|seg| {
            segment_event_region(&seg, rule, observed)
                .intervals()
                .to_vec()
        })
        .collect();
    ensure_contains(IntervalSet::from_intervals(pieces), z_obs)
}

/// Accepts `z_obs` lying within round-off of the region, and rejects it otherwise.
fn ensure_contains(region: IntervalSet, z_obs: f64) -> Result<IntervalSet> {
    if region.contains(z_obs) {
        return Ok(region);
    }
    if region.distance_to(z_obs) <= 1e-7 * (1.0 + z_obs.abs()) {
        return Ok(region.union(&IntervalSet::interval(z_obs, z_obs)));
    }
    Err(Error::EmptyRegion { z_obs })
}

/// Roots of a detection function `φ_i(r(z))` on one segment.
///
/// `roots` are sorted and lie in `[lo, hi]`; `φ_i` changes sign at each listed
/// root (a root where the sign does not change is listed twice). `sign` is the
/// sign of `φ_i` at the segment midpoint, or just to its right when the
/// midpoint is itself a root. Instance `i` counts as detected where `φ_i ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiRoots {
    pub roots: Vec<f64>,
    pub sign: f64,
}

/// Event region assembled from a generic detection function.
pub fn detection_function_region<F>(
    path: &ResidualPath,
    mut phi: F,
    observed: &OutlierSet,
) -> Result<IntervalSet>
where
    F: FnMut(usize, &ResidualSegment<'_>, usize) -> PhiRoots,
{
    let mut pieces = Vec::new();
    for (t, seg) in segments_of(path).enumerate() {
        let n = seg.f.len();
        let mask = observed.mask(n);
        let mut region = IntervalSet::interval(seg.lo, seg.hi);
        for i in 0..n {
            let pr = phi(t, &seg, i);
            let detected = detected_set(&pr, seg.lo, seg.hi)?;
            let part = if mask[i] {
                detected
            } else {
                detected.complement_within(seg.lo, seg.hi)
            };
            region = region.intersect(&part);
            if region.is_empty() {
                break;
            }
        }
        pieces.extend_from_slice(region.intervals());
    }
    Ok(IntervalSet::from_intervals(pieces))
}

/// `{φ ≥ 0}` on `[lo, hi]` from alternating signs around the roots.
fn detected_set(pr: &PhiRoots, lo: f64, hi: f64) -> Result<IntervalSet> {
    let roots = &pr.roots;
    if roots.windows(2).any(|w| w[0] > w[1]) || roots.iter().any(|&r| !(r >= lo && r <= hi)) {
        return Err(Error::CallbackInconsistent(format!(
            "roots {roots:?} are unsorted or outside [{lo}, {hi}]"
        )));
    }
    if pr.sign == 0.0 || pr.sign.is_nan() {
        return Err(Error::CallbackInconsistent(
            "midpoint sign must be nonzero".into(),
        ));
    }
    // pieces between consecutive roots; locate the one holding the midpoint
    let mid = 0.5 * (lo + hi);
    let k_mid = roots.partition_point(|&r| r <= mid);
    let mut bounds = Vec::with_capacity(roots.len() + 2);
    bounds.push(lo);
    bounds.extend_from_slice(roots);
    bounds.push(hi);
    let mut out = Vec::new();
    for k in 0..=roots.len() {
        let flips = k.abs_diff(k_mid);
        let positive = (pr.sign > 0.0) == (flips % 2 == 0);
        if positive {
            out.push((bounds[k], bounds[k + 1]));
        }
    }
    Ok(IntervalSet::from_intervals(out))
}

/// Detection function `|r_i| − ξ` for the threshold rule.
pub fn threshold_phi(xi: f64) -> impl Fn(usize, &ResidualSegment<'_>, usize) -> PhiRoots {
    move |_, seg, i| {
        let (f, g) = (seg.f[i], seg.g[i]);
        let mid = 0.5 * (seg.lo + seg.hi);
        if g == 0.0 {
            return PhiRoots {
                roots: Vec::new(),
                sign: if f.abs() >= xi { 1.0 } else { -1.0 },
            };
        }
        let mut roots: Vec<f64> = [(xi - f) / g, (-xi - f) / g]
            .into_iter()
            .filter(|&r| r >= seg.lo && r <= seg.hi)
            .collect();
        roots.sort_by(f64::total_cmp);
        let v = (f + g * mid).abs() - xi;
        let sign = if v != 0.0 {
            v.signum()
        } else {
            // moving right from a root: |r| grows iff r and g agree in sign
            if (f + g * mid) * g > 0.0 {
                1.0
            } else {
                -1.0
            }
        };
        PhiRoots { roots, sign }
    }
}

/// Detection function for the top-K rule: instance `i` is detected where fewer
/// than `k` other magnitudes strictly exceed `|r_i|`.
pub fn topk_phi(k: usize) -> impl Fn(usize, &ResidualSegment<'_>, usize) -> PhiRoots {
    move |_, seg, i| {
        let n = seg.f.len();
        let mut cand: Vec<f64> = Vec::new();
        for j in (0..n).filter(|&j| j != i) {
            for (df, dg) in [
                (seg.f[i] - seg.f[j], seg.g[i] - seg.g[j]),
                (seg.f[i] + seg.f[j], seg.g[i] + seg.g[j]),
            ] {
                if dg != 0.0 {
                    let r = -df / dg;
                    if r > seg.lo && r < seg.hi {
                        cand.push(r);
                    }
                }
            }
        }
        cand.sort_by(f64::total_cmp);
        cand.dedup();
        let detected_at = |z: f64| {
            let r = seg.at(z);
            let ri = r[i].abs();
            (0..n).filter(|&j| j != i && r[j].abs() > ri).count() < k
        };
        let mut bounds = vec![seg.lo];
        bounds.extend_from_slice(&cand);
        bounds.push(seg.hi);
        let states: Vec<bool> = bounds
            .windows(2)
            .map(|w| detected_at(0.5 * (w[0] + w[1])))
            .collect();
        let roots: Vec<f64> = (1..states.len())
            .filter(|&m| states[m] != states[m - 1])
            .map(|m| bounds[m])
            .collect();
        let mid = 0.5 * (seg.lo + seg.hi);
        let piece = bounds[1..]
            .partition_point(|&b| b <= mid)
            .min(states.len() - 1);
        PhiRoots {
            roots,
            sign: if states[piece] { 1.0 } else { -1.0 },
        }
    }
}

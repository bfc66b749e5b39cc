//! Selective inference for a detected outlier: test direction, conditional
//! line, truncation region, selective p-value and confidence interval, plus
//! the naive and Bonferroni baselines.

use nalgebra::{DMatrix, DVector};

use crate::detection::{detect, event_region_over_path, OutlierSet};
use crate::error::{Error, Result};
use crate::huber_path::huber_path_with_multiplier;
use crate::lad_path::lad_path_with_multiplier;
use crate::model::{residual_path, DataLine, Dataset, DetectionRule, EstimatorSpec, PiecewisePath};
use crate::numerics::{
    least_squares_apply, ln_binomial, normal_sf, truncated_normal_eval, GaussianParams,
    IntervalSet, MIN_REGION_MASS,
};

/// Default half-width of the working window, in units of `σ_η`.
pub const DEFAULT_WINDOW_MULT: f64 = 20.0;

/// `η` with `Z = ηᵀY = Y_i − x_iᵀ β̂^{−O}` and its variance `ηᵀΣη`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDirection {
    pub eta: DVector<f64>,
    pub sigma_eta2: f64,
    pub target_index: usize,
}

impl TestDirection {
    pub fn sigma_eta(&self) -> f64 {
        self.sigma_eta2.sqrt()
    }

    /// `[min(z, 0) − w σ_η, max(z, 0) + w σ_η]`.
    pub fn window(&self, z_obs: f64, window_mult: f64) -> (f64, f64) {
        let s = self.sigma_eta();
        (
            z_obs.min(0.0) - window_mult * s,
            z_obs.max(0.0) + window_mult * s,
        )
    }
}

/// Everything reported for one detected instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveReport {
    pub target_index: usize,
    pub z_obs: f64,
    pub naive_p: f64,
    pub bonferroni_p: f64,
    pub selective_p: f64,
    pub ci: (f64, f64),
    pub truncation: IntervalSet,
    pub mass_outside_window_bound: f64,
}

/// `η = e_i − I^{−O} ((X^{−O})⁺)ᵀ x_i`, where `X^{−O}` zeroes the rows in `O`.
pub fn build_eta(dataset: &Dataset, outliers: &OutlierSet, i: usize) -> Result<TestDirection> {
    let x = dataset.x();
    let n = dataset.n();
    if !outliers.contains(i) {
        return Err(Error::InvalidInput(format!(
            "instance {i} is not among the detected outliers"
        )));
    }
    let mut x_clean = x.clone();
    for &o in outliers.indices() {
        x_clean.row_mut(o).fill(0.0);
    }
    if x_clean.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateDirection { sigma_eta2: 0.0 });
    }
    // minimum-norm w with (X^{−O})ᵀ w = x_i is supported off O
    let xi = x.row(i).transpose();
    let w = least_squares_apply(&x_clean.transpose(), &xi)?;
    let mut eta = -w;
    for &o in outliers.indices() {
        eta[o] = 0.0;
    }
    eta[i] += 1.0;
    let sigma_eta2 = (dataset.sigma() * &eta).dot(&eta);
    if !(sigma_eta2 > 1e-14) {
        return Err(Error::DegenerateDirection { sigma_eta2 });
    }
    debug_assert_eq!(eta.len(), n);
    Ok(TestDirection {
        eta,
        sigma_eta2,
        target_index: i,
    })
}

/// `a = (I − b ηᵀ) y`, `b = Ση / ηᵀΣη`, `z_obs = ηᵀy`.
pub fn conditional_line(dataset: &Dataset, dir: &TestDirection) -> DataLine {
    let b = dataset.sigma() * &dir.eta / dir.sigma_eta2;
    let z_obs = dir.eta.dot(dataset.y());
    let a = dataset.y() - &b * z_obs;
    DataLine { a, b, z_obs }
}

/// Upper bound on the null probability mass of `Z` outside the working window.
pub fn mass_outside_window_bound(window_mult: f64) -> f64 {
    2.0 * normal_sf(window_mult)
}

/// Solution path of the estimator along `line` over `window`.
pub fn coefficient_path(
    x: &DMatrix<f64>,
    line: &DataLine,
    estimator: &EstimatorSpec,
    window: (f64, f64),
    window_mult: f64,
) -> Result<PiecewisePath> {
    match *estimator {
        EstimatorSpec::Lad => lad_path_with_multiplier(x, line, window, window_mult),
        EstimatorSpec::Huber { delta } => {
            huber_path_with_multiplier(x, line, delta, window, window_mult)
        }
    }
}

/// Truncation region with the intermediate objects that produced it.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub region: IntervalSet,
    pub line: DataLine,
    pub window: (f64, f64),
    pub residuals: PiecewisePath,
    pub observed: OutlierSet,
}

/// Set of `z` in the working window at which the detection pipeline reproduces
/// the outlier set observed at `z_obs`.
pub fn truncation_region(
    dataset: &Dataset,
    estimator: &EstimatorSpec,
    rule: &DetectionRule,
    dir: &TestDirection,
    window_mult: f64,
) -> Result<Truncation> {
    if !(window_mult >= 5.0) {
        return Err(Error::InvalidInput(format!(
            "window multiplier must be at least 5, got {window_mult}"
        )));
    }
    let line = conditional_line(dataset, dir);
    let window = dir.window(line.z_obs, window_mult);
    let coeffs = coefficient_path(dataset.x(), &line, estimator, window, window_mult)?;
    let residuals = residual_path(&line, &coeffs, dataset.x())?;
    let observed = detect(&residuals.evaluate(line.z_obs)?, rule)?;
    if observed.is_empty() {
        return Err(Error::NoOutliersDetected);
    }
    let region = event_region_over_path(&residuals, rule, &observed, line.z_obs)?;
    Ok(Truncation {
        region,
        line,
        window,
        residuals,
        observed,
    })
}

/// Two-sided selective p-value `2 min(π, 1 − π)`, `π = 1 − F^Z_{0, σ²}(z_obs)`.
pub fn selective_p(dir: &TestDirection, trunc: &IntervalSet, z_obs: f64) -> Result<f64> {
    let ev = truncated_normal_eval(GaussianParams::new(0.0, dir.sigma_eta2)?, trunc, z_obs)?;
    if !(ev.log_mass >= MIN_REGION_MASS.ln()) {
        return Err(Error::ZeroMassRegion {
            log_mass: ev.log_mass,
        });
    }
    // π = sf and 1 − π = cdf, each computed without cancellation
    Ok((2.0 * ev.sf.min(ev.cdf)).clamp(0.0, 1.0))
}

/// Pivot `F^Z_{m, σ²}(z_obs)` as a (cdf, sf) pair.
fn pivot(dir: &TestDirection, trunc: &IntervalSet, z_obs: f64, m: f64) -> Result<(f64, f64)> {
    let ev = truncated_normal_eval(GaussianParams::new(m, dir.sigma_eta2)?, trunc, z_obs)?;
    Ok((ev.cdf, ev.sf))
}

/// Selective confidence interval for `ηᵀμ` at level `1 − α`.
pub fn selective_ci(
    dir: &TestDirection,
    trunc: &IntervalSet,
    z_obs: f64,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let s = dir.sigma_eta();
    // lower end: cdf(m) = 1 − α/2; upper end: cdf(m) = α/2
    let lo = invert_pivot(dir, trunc, z_obs, 1.0 - alpha / 2.0, s)?;
    let hi = invert_pivot(dir, trunc, z_obs, alpha / 2.0, s)?;
    if lo > hi + 1e-6 * s {
        return Err(Error::NonMonotonePivot { m: lo });
    }
    Ok((lo.min(hi), hi.max(lo)))
}

/// Finds `m` with `F_m(z_obs) = target` by bisection; the pivot decreases in `m`.
fn invert_pivot(
    dir: &TestDirection,
    trunc: &IntervalSet,
    z_obs: f64,
    target: f64,
    s: f64,
) -> Result<f64> {
    // compare on the smaller tail to keep resolution near 0 and 1
    let above = |m: f64| -> Result<bool> {
        let (cdf, sf) = pivot(dir, trunc, z_obs, m)?;
        Ok(if target > 0.5 {
            sf < 1.0 - target
        } else {
            cdf > target
        })
    };
    let mut width = 40.0 * s;
    let (mut lo, mut hi);
    loop {
        lo = z_obs - width;
        hi = z_obs + width;
        if above(lo)? && !above(hi)? {
            break;
        }
        width *= 2.0;
        if width > 1e6 * s {
            return Err(Error::NonMonotonePivot { m: z_obs });
        }
    }
    let tol = 1e-6 * s;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if above(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided normal p-value ignoring selection.
pub fn naive_p(dir: &TestDirection, z_obs: f64) -> f64 {
    (2.0 * normal_sf(z_obs.abs() / dir.sigma_eta())).min(1.0)
}

/// `min(1, C(n, k) · naive)`, computed in log space.
pub fn bonferroni_p(naive: f64, n: usize, k_detected: usize) -> f64 {
    if naive <= 0.0 {
        return 0.0;
    }
    let log_p = ln_binomial(n, k_detected) + naive.ln();
    if log_p >= 0.0 {
        1.0
    } else {
        log_p.exp()
    }
}

/// Full report for detected instance `i`.
pub fn analyze_instance(
    dataset: &Dataset,
    estimator: &EstimatorSpec,
    rule: &DetectionRule,
    outliers: &OutlierSet,
    i: usize,
    alpha: f64,
    window_mult: f64,
) -> Result<SelectiveReport> {
    let dir = build_eta(dataset, outliers, i)?;
    let trunc = truncation_region(dataset, estimator, rule, &dir, window_mult)?;
    if trunc.observed != *outliers {
        return Err(Error::NumericalFailure(format!(
            "path reproduces outliers {:?} at the observed data instead of {:?}",
            trunc.observed.indices(),
            outliers.indices()
        )));
    }
    let z_obs = trunc.line.z_obs;
    let naive = naive_p(&dir, z_obs);
    let k = match *rule {
        DetectionRule::Threshold { .. } => outliers.len(),
        DetectionRule::TopK { k } => k,
    };
    Ok(SelectiveReport {
        target_index: i,
        z_obs,
        naive_p: naive,
        bonferroni_p: bonferroni_p(naive, dataset.n(), k),
        selective_p: selective_p(&dir, &trunc.region, z_obs)?,
        ci: selective_ci(&dir, &trunc.region, z_obs, alpha)?,
        truncation: trunc.region,
        mass_outside_window_bound: mass_outside_window_bound(window_mult),
    })
}

/// Fits the estimator at the observed data and detects outliers.
pub fn observed_outliers(
    dataset: &Dataset,
    estimator: &EstimatorSpec,
    rule: &DetectionRule,
) -> Result<OutlierSet> {
    rule.validate(dataset.n())?;
    let beta = match *estimator {
        EstimatorSpec::Lad => crate::lad_path::solve_lad(dataset.x(), dataset.y())?.0,
        EstimatorSpec::Huber { delta } => {
            crate::huber_path::solve_huber(dataset.x(), dataset.y(), delta)?.0
        }
    };
    detect(&(dataset.y() - dataset.x() * beta), rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::truncated_normal_cdf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn direction(eta: Vec<f64>) -> TestDirection {
        let eta = DVector::from_vec(eta);
        TestDirection {
            sigma_eta2: eta.norm_squared(),
            eta,
            target_index: 0,
        }
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
        let x = DMatrix::from_fn(n, d, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        Dataset::with_isotropic_noise(x, y, 1.0).unwrap()
    }

    #[test]
    fn eta_two_points() {
        let ds = Dataset::with_isotropic_noise(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![0.0, 3.0]),
            1.0,
        )
        .unwrap();
        let dir = build_eta(&ds, &OutlierSet::new(vec![1], 2).unwrap(), 1).unwrap();
        assert!((dir.eta[0] + 1.0).abs() < 1e-12 && (dir.eta[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eta_reduces_to_unit_vector_when_row_is_isolated() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let ds =
            Dataset::with_isotropic_noise(x, DVector::from_vec(vec![1.0, 2.0, 3.0]), 1.0).unwrap();
        let dir = build_eta(&ds, &OutlierSet::new(vec![0], 3).unwrap(), 0).unwrap();
        assert!((dir.eta - DVector::from_vec(vec![1.0, 0.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn eta_matches_two_step_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let ds = random_dataset(&mut rng, 15, 3);
            let o = OutlierSet::new(vec![2, 7], 15).unwrap();
            let dir = build_eta(&ds, &o, 7).unwrap();
            let keep: Vec<usize> = (0..15).filter(|i| !o.contains(*i)).collect();
            let xc = ds.x().select_rows(&keep);
            let yc = DVector::from_iterator(keep.len(), keep.iter().map(|&i| ds.y()[i]));
            let beta = least_squares_apply(&xc, &yc).unwrap();
            let direct = ds.y()[7] - ds.x().row(7).dot(&beta.transpose());
            assert!((dir.eta.dot(ds.y()) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn all_removed_is_degenerate() {
        let ds = Dataset::with_isotropic_noise(
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_vec(vec![0.0, 3.0]),
            1.0,
        )
        .unwrap();
        let o = OutlierSet::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            build_eta(&ds, &o, 0),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn conditional_line_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 6;
        let l = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sigma = &l * l.transpose() + DMatrix::identity(n, n);
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ds = Dataset::new(x, y.clone(), sigma.clone()).unwrap();
        let dir = build_eta(&ds, &OutlierSet::new(vec![0], n).unwrap(), 0).unwrap();
        let line = conditional_line(&ds, &dir);
        assert!((dir.eta.dot(&line.b) - 1.0).abs() < 1e-12);
        assert!((line.observed() - &y).amax() < 1e-9);
        for _ in 0..20 {
            let z: f64 = rng.random_range(-10.0..10.0);
            let yz = line.at(z);
            let q = &yz - &sigma * &dir.eta * (dir.eta.dot(&yz) / dir.sigma_eta2);
            assert!((q - &line.a).amax() < 1e-9);
        }
        let ds = Dataset::with_isotropic_noise(
            DMatrix::from_element(3, 1, 1.0),
            DVector::from_vec(vec![4.0, 1.0, 2.0]),
            1.0,
        )
        .unwrap();
        let e1 = direction(vec![1.0, 0.0, 0.0]);
        let line = conditional_line(&ds, &e1);
        assert_eq!(line.a.as_slice(), &[0.0, 1.0, 2.0]);
        assert_eq!(line.b.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(line.z_obs, 4.0);
    }

    #[test]
    fn p_value_examples() {
        let dir = direction(vec![1.0]);
        let sym = IntervalSet::from_intervals([(-3.0, -1.0), (-0.5, 0.5), (1.0, 3.0)]);
        assert!((selective_p(&dir, &sym, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let real = IntervalSet::real_line();
        assert!((selective_p(&dir, &real, 1.959963985).unwrap() - 0.05).abs() < 1e-6);
        for &z in &[-3.0, -0.4, 0.0, 1.1, 2.7, 6.0] {
            assert!((selective_p(&dir, &real, z).unwrap() - naive_p(&dir, z)).abs() < 1e-10);
        }
        assert_eq!(naive_p(&dir, 0.0), 1.0);
        let dir2 = direction(vec![3.0, 4.0]);
        assert!((naive_p(&dir2, 1.959963985 * 5.0) - 0.05).abs() < 1e-6);
        assert!(naive_p(&dir, 1.0) > naive_p(&dir, 2.0));
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni_p(0.01, 20, 1) - 0.2).abs() < 1e-12);
        assert_eq!(bonferroni_p(0.5, 21, 8), 1.0);
        assert!((bonferroni_p(0.03, 9, 9) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn untruncated_ci_is_z_interval() {
        let dir = direction(vec![2.0]);
        let (lo, hi) = selective_ci(&dir, &IntervalSet::real_line(), 1.3, 0.05).unwrap();
        let half = 1.959963984540054 * 2.0;
        assert!((lo - (1.3 - half)).abs() < 1e-5);
        assert!((hi - (1.3 + half)).abs() < 1e-5);
    }

    #[test]
    fn ci_duality_with_p_value() {
        let dir = direction(vec![1.0]);
        let trunc = IntervalSet::from_intervals([(-20.0, -1.5), (1.5, 20.0)]);
        for &z in &[1.8, 2.4, 3.5, -2.2] {
            let p = selective_p(&dir, &trunc, z).unwrap();
            let (lo, hi) = selective_ci(&dir, &trunc, z, p).unwrap();
            let touch = lo.abs().min(hi.abs());
            assert!(touch < 1e-4, "z={z} p={p} ci=({lo},{hi})");
        }
    }

    #[test]
    fn pivot_uniform_and_ci_coverage_under_truncation() {
        // null draws of Z conditioned on a fixed two-sided region
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = direction(vec![1.0]);
        let trunc = IntervalSet::from_intervals([(-40.0, -1.0), (0.5, 0.8), (1.2, 40.0)]);
        let mut pivots = Vec::new();
        let mut covered = 0;
        let mut total = 0;
        while pivots.len() < 1000 {
            let z: f64 = rng.sample(StandardNormal);
            if !trunc.contains(z) {
                continue;
            }
            pivots.push(truncated_normal_cdf(GaussianParams::standard(), &trunc, z).unwrap());
            if total < 500 {
                let (lo, hi) = selective_ci(&dir, &trunc, z, 0.1).unwrap();
                total += 1;
                if lo <= 0.0 && 0.0 <= hi {
                    covered += 1;
                }
            }
        }
        pivots.sort_by(f64::total_cmp);
        let n = pivots.len() as f64;
        let ks = pivots
            .iter()
            .enumerate()
            .map(|(k, &u)| ((k + 1) as f64 / n - u).max(u - k as f64 / n))
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / n.sqrt(), "KS {ks}");
        let rate = covered as f64 / total as f64;
        assert!((rate - 0.9).abs() < 0.04, "coverage {rate}");
    }

    #[test]
    fn far_tail_region_is_handled_in_log_space() {
        let dir = direction(vec![1.0]);
        let trunc = IntervalSet::interval(30.0, 60.0);
        let p = selective_p(&dir, &trunc, 30.5).unwrap();
        // conditional on Z ≥ 30 the excess is approximately exponential with rate 30
        let approx = (-30.0f64 * 0.5).exp();
        assert!(((1.0 - p / 2.0).max(p / 2.0) - (1.0 - approx).max(approx)).abs() < 5e-2);
        let (lo, hi) = selective_ci(&dir, &trunc, 30.5, 0.05).unwrap();
        assert!(lo < 30.5 && hi > lo);
    }

    #[test]
    fn truncation_region_lad_gross_outlier_contains_observation() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![0.1, -0.2, 9.0]);
        let ds = Dataset::with_isotropic_noise(x, y, 1.0).unwrap();
        let rule = DetectionRule::Threshold { xi: 1.0 };
        let o = observed_outliers(&ds, &EstimatorSpec::Lad, &rule).unwrap();
        assert_eq!(o.indices(), &[2]);
        let dir = build_eta(&ds, &o, 2).unwrap();
        let t = truncation_region(&ds, &EstimatorSpec::Lad, &rule, &dir, 20.0).unwrap();
        assert!(t.region.contains(t.line.z_obs));
        for s in 0..10_000 {
            let z = t.window.0 + (t.window.1 - t.window.0) * s as f64 / 9999.0;
            if t.region
                .intervals()
                .iter()
                .any(|&(a, b)| (z - a).abs() < 1e-9 || (z - b).abs() < 1e-9)
            {
                continue;
            }
            let yz = t.line.at(z);
            let (beta, basis) = crate::lad_path::solve_lad(ds.x(), &yz).unwrap();
            if !basis.is_unique(ds.x(), 1e-9) {
                continue;
            }
            let same = detect(&(yz - ds.x() * beta), &rule).unwrap() == o;
            assert_eq!(t.region.contains(z), same, "z={z}");
        }
    }

    #[test]
    fn huber_with_huge_delta_matches_least_squares_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ds = random_dataset(&mut rng, 10, 2);
        let mut y = ds.y().clone();
        y[0] += 6.0;
        ds = Dataset::with_isotropic_noise(ds.x().clone(), y, 1.0).unwrap();
        let rule = DetectionRule::Threshold { xi: 1.5 };
        let est = EstimatorSpec::Huber { delta: 1e5 };
        let o = observed_outliers(&ds, &est, &rule).unwrap();
        let i = o.indices()[0];
        let dir = build_eta(&ds, &o, i).unwrap();
        let t = truncation_region(&ds, &est, &rule, &dir, 20.0).unwrap();
        // least-squares residual line: (I − H)(a + b z)
        let h = ds.x() * crate::numerics::pseudo_inverse(ds.x());
        let m = DMatrix::identity(10, 10) - h;
        let path = PiecewisePath::affine(t.window, &m * &t.line.a, &m * &t.line.b).unwrap();
        let expected = event_region_over_path(&path, &rule, &o, t.line.z_obs).unwrap();
        assert!(
            t.region.is_subset_within(&expected, 1e-7)
                && expected.is_subset_within(&t.region, 1e-7)
        );
    }
}

//! Synthetic data under the location-shift model and Monte Carlo harnesses
//! for false-positive rate, power, and the Huberized-Lasso comparison.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::detection::{detect, OutlierSet};
use crate::error::{Error, Result};
use crate::huber_path::solve_huber;
use crate::huberized_lasso::{hl_p_value, hl_truncation_interval, lasso_solve, project_out_design};
use crate::inference::{
    bonferroni_p, build_eta, naive_p, observed_outliers, selective_p, truncation_region,
    TestDirection, DEFAULT_WINDOW_MULT,
};
use crate::model::{Dataset, DetectionRule, EstimatorSpec};
use crate::numerics::{truncated_normal_eval, GaussianParams};

/// Attempts beyond which a low acceptance rate is reported as starvation.
pub const STARVATION_ATTEMPTS: usize = 1_000_000;
pub const STARVATION_RATE: f64 = 1e-3;

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "ROBUST_SI_THREADS";

const BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Intercept followed by `p` slopes.
    pub beta_star: DVector<f64>,
    pub shift: DVector<f64>,
    pub sigma2: f64,
    pub estimator: EstimatorSpec,
    pub rule: DetectionRule,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    pub window_mult: f64,
}

impl SimConfig {
    /// Null configuration with coefficients `(1, 2, 1, 2, …)` and unit noise.
    pub fn null(
        n: usize,
        p: usize,
        estimator: EstimatorSpec,
        rule: DetectionRule,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self {
            n,
            p,
            beta_star: default_beta(p),
            shift: DVector::zeros(n),
            sigma2: 1.0,
            estimator,
            rule,
            alpha: 0.05,
            trials,
            seed,
            window_mult: DEFAULT_WINDOW_MULT,
        }
    }

    /// Same configuration with the first `k` instances shifted by `u`.
    pub fn with_shift(mut self, k: usize, u: f64) -> Self {
        self.shift = DVector::from_fn(self.n, |i, _| if i < k { u } else { 0.0 });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.beta_star.len() != self.p + 1 || self.shift.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "beta_star has length {}, shift {} (expected {} and {})",
                self.beta_star.len(),
                self.shift.len(),
                self.p + 1,
                self.n
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma2 must be positive, got {}",
                self.sigma2
            )));
        }
        if self.n < self.p + 2 {
            return Err(Error::InvalidInput(format!(
                "n = {} too small for p = {}",
                self.n, self.p
            )));
        }
        self.rule.validate(self.n)
    }
}

pub fn default_beta(p: usize) -> DVector<f64> {
    DVector::from_fn(p + 1, |j, _| if j % 2 == 0 { 1.0 } else { 2.0 })
}

fn trial_rng(seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_index);
    rng
}

fn draw(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (n, p) = (cfg.n, cfg.p);
    let mut x = DMatrix::from_element(n, p + 1, 1.0);
    for i in 0..n {
        for j in 1..=p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let sd = cfg.sigma2.sqrt();
    let mean = &x * &cfg.beta_star + &cfg.shift;
    let y = DVector::from_fn(n, |i, _| {
        mean[i] + sd * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::with_isotropic_noise(x, y, cfg.sigma2)
}

/// Dataset for attempt `trial_index`, deterministic in `(seed, trial_index)`.
pub fn generate_trial(cfg: &SimConfig, trial_index: u64) -> Result<Dataset> {
    draw(cfg, &mut trial_rng(cfg.seed, trial_index))
}

/// P-values of one detected instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialPValues {
    pub index: usize,
    pub naive: f64,
    pub bonferroni: f64,
    pub selective: f64,
    /// `F^Z_{0, σ²}(z_obs)`, uniform under the null.
    pub pivot: f64,
}

/// Naive, Bonferroni and selective p-values for detected instance `i`.
pub fn trial_p_values(
    ds: &Dataset,
    estimator: &EstimatorSpec,
    rule: &DetectionRule,
    outliers: &OutlierSet,
    i: usize,
    window_mult: f64,
) -> Result<(TrialPValues, TestDirection, crate::inference::Truncation)> {
    let dir = build_eta(ds, outliers, i)?;
    let trunc = truncation_region(ds, estimator, rule, &dir, window_mult)?;
    if trunc.observed != *outliers {
        return Err(Error::NumericalFailure(format!(
            "path detects {:?} at the observed data, direct fit detects {:?}",
            trunc.observed.indices(),
            outliers.indices()
        )));
    }
    let z = trunc.line.z_obs;
    let naive = naive_p(&dir, z);
    let k = match *rule {
        DetectionRule::Threshold { .. } => outliers.len(),
        DetectionRule::TopK { k } => k,
    };
    let ev = truncated_normal_eval(GaussianParams::new(0.0, dir.sigma_eta2)?, &trunc.region, z)?;
    let pv = TrialPValues {
        index: i,
        naive,
        bonferroni: bonferroni_p(naive, ds.n(), k),
        selective: selective_p(&dir, &trunc.region, z)?,
        pivot: ev.cdf,
    };
    Ok((pv, dir, trunc))
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
}

/// Runs `attempt` on indices `0, 1, 2, …` until `needed` outcomes satisfy
/// `accept`. All `Some` outcomes up to the last accepted one are returned in
/// index order together with the number of attempts consumed.
fn collect_accepted<T, F, A>(needed: usize, attempt: F, accept: A) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(u64) -> Result<Option<T>> + Sync,
    A: Fn(&T) -> bool,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count() {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    let mut kept = Vec::with_capacity(needed);
    let mut accepted = 0usize;
    let mut next = 0u64;
    let mut attempts = 0usize;
    while accepted < needed {
        let batch = BATCH.max(pool.current_num_threads() * 4) as u64;
        let results: Vec<Result<Option<T>>> =
            pool.install(|| (next..next + batch).into_par_iter().map(&attempt).collect());
        next += batch;
        for r in results {
            attempts += 1;
            if let Some(v) = r? {
                if accept(&v) {
                    accepted += 1;
                }
                kept.push(v);
                if accepted == needed {
                    break;
                }
            }
        }
        let rate = accepted as f64 / attempts as f64;
        if attempts >= STARVATION_ATTEMPTS && rate < STARVATION_RATE {
            return Err(Error::DetectionStarvation { attempts, rate });
        }
    }
    Ok((kept, attempts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FprResult {
    pub accepted: usize,
    pub attempts: usize,
    pub fpr_naive: f64,
    pub fpr_bonferroni: f64,
    pub fpr_selective: f64,
    /// Selective pivots of the tested instances, in trial order.
    pub pivots: Vec<f64>,
}

/// Null simulation: per accepted trial, one detected instance chosen at random
/// is tested; trials without detections are redrawn.
pub fn run_fpr(cfg: &SimConfig) -> Result<FprResult> {
    cfg.validate()?;
    if cfg.shift.iter().any(|&u| u != 0.0) {
        return Err(Error::InvalidInput(
            "false-positive runs require a zero shift".into(),
        ));
    }
    let (rows, attempts) = collect_accepted(
        cfg.trials,
        |t| {
            let mut rng = trial_rng(cfg.seed, t);
            let ds = draw(cfg, &mut rng)?;
            let o = match observed_outliers(&ds, &cfg.estimator, &cfg.rule) {
                Ok(o) if !o.is_empty() => o,
                Ok(_) | Err(Error::TieAtBoundary { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let i = o.indices()[rng.random_range(0..o.len())];
            let (pv, _, _) =
                trial_p_values(&ds, &cfg.estimator, &cfg.rule, &o, i, cfg.window_mult)?;
            Ok(Some(pv))
        },
        |_| true,
    )?;
    let m = rows.len() as f64;
    let rate = |f: &dyn Fn(&TrialPValues) -> f64| {
        rows.iter().filter(|r| f(r) < cfg.alpha).count() as f64 / m
    };
    Ok(FprResult {
        accepted: rows.len(),
        attempts,
        fpr_naive: rate(&|r| r.naive),
        fpr_bonferroni: rate(&|r| r.bonferroni),
        fpr_selective: rate(&|r| r.selective),
        pivots: rows.iter().map(|r| r.pivot).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TprResult {
    pub accepted: usize,
    pub attempts: usize,
    pub tpr_naive: f64,
    pub tpr_bonferroni: f64,
    pub tpr_selective: f64,
}

/// Power for instance 0 (the shifted one), among trials in which it is detected.
pub fn run_tpr(cfg: &SimConfig) -> Result<TprResult> {
    cfg.validate()?;
    let shifted: Vec<usize> = (0..cfg.n).filter(|&i| cfg.shift[i] != 0.0).collect();
    if shifted.len() > 1 || shifted.first().is_some_and(|&i| i != 0) {
        return Err(Error::InvalidInput(
            "power runs shift only the first instance".into(),
        ));
    }
    let (rows, attempts) = collect_accepted(
        cfg.trials,
        |t| {
            let ds = generate_trial(cfg, t)?;
            let o = match observed_outliers(&ds, &cfg.estimator, &cfg.rule) {
                Ok(o) if o.contains(0) => o,
                Ok(_) | Err(Error::TieAtBoundary { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let (pv, _, _) =
                trial_p_values(&ds, &cfg.estimator, &cfg.rule, &o, 0, cfg.window_mult)?;
            Ok(Some(pv))
        },
        |_| true,
    )?;
    let m = rows.len() as f64;
    let rate = |f: &dyn Fn(&TrialPValues) -> f64| {
        rows.iter().filter(|r| f(r) < cfg.alpha).count() as f64 / m
    };
    Ok(TprResult {
        accepted: rows.len(),
        attempts,
        tpr_naive: rate(&|r| r.naive),
        tpr_bonferroni: rate(&|r| r.bonferroni),
        tpr_selective: rate(&|r| r.selective),
    })
}

/// One matched trial of the Huberized-Lasso comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct HlTrial {
    pub index: usize,
    pub selective_p: f64,
    pub hl_p: f64,
    /// The sign-conditioned interval lies inside the detection event.
    pub contained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlCompareResult {
    pub matched: usize,
    pub attempts: usize,
    /// Attempts where the Lasso support differed from the detected set.
    pub mismatched: usize,
    pub tpr_selective: f64,
    pub tpr_hl: f64,
    pub containment_failures: usize,
    pub trials: Vec<HlTrial>,
}

enum HlAttempt {
    Matched(HlTrial),
    Mismatch,
}

/// Power of the homotopy method against sign-conditioned inference, with the
/// detection threshold, Huber parameter and Lasso penalty all equal to
/// `lambda`. Each matched trial tests one detected true outlier at random.
pub fn run_hl_compare(cfg: &SimConfig, lambda: f64) -> Result<HlCompareResult> {
    cfg.validate()?;
    let estimator = EstimatorSpec::huber(lambda)?;
    let rule = DetectionRule::threshold(lambda)?;
    let truth: Vec<usize> = (0..cfg.n).filter(|&i| cfg.shift[i] != 0.0).collect();
    if truth.is_empty() {
        return Err(Error::InvalidInput(
            "comparison requires shifted instances".into(),
        ));
    }
    let (rows, attempts) = collect_accepted(
        cfg.trials,
        |t| {
            let mut rng = trial_rng(cfg.seed, t);
            let ds = draw(cfg, &mut rng)?;
            let (beta, _) = solve_huber(ds.x(), ds.y(), lambda)?;
            let o = detect(&(ds.y() - ds.x() * beta), &rule)?;
            let candidates: Vec<usize> = o
                .indices()
                .iter()
                .copied()
                .filter(|i| truth.contains(i))
                .collect();
            if candidates.is_empty() {
                return Ok(None);
            }
            let (y_tilde, proj) = project_out_design(ds.x(), ds.y());
            let sol = lasso_solve(&y_tilde, &proj, lambda)?;
            if sol.active != o.indices() {
                return Ok(Some(HlAttempt::Mismatch));
            }
            let i = candidates[rng.random_range(0..candidates.len())];
            let (pv, dir, trunc) = trial_p_values(&ds, &estimator, &rule, &o, i, cfg.window_mult)?;
            let hl = hl_truncation_interval(&sol, &proj, &trunc.line, trunc.window)?;
            let hl_p = hl_p_value(&dir, &hl, trunc.line.z_obs)?;
            Ok(Some(HlAttempt::Matched(HlTrial {
                index: i,
                selective_p: pv.selective,
                hl_p,
                contained: hl.is_subset_within(&trunc.region, 1e-7 * dir.sigma_eta()),
            })))
        },
        |r| matches!(r, HlAttempt::Matched(_)),
    )?;
    let mismatched = rows
        .iter()
        .filter(|r| matches!(r, HlAttempt::Mismatch))
        .count();
    let trials: Vec<HlTrial> = rows
        .into_iter()
        .filter_map(|r| match r {
            HlAttempt::Matched(t) => Some(t),
            HlAttempt::Mismatch => None,
        })
        .collect();
    let m = trials.len().max(1) as f64;
    Ok(HlCompareResult {
        matched: trials.len(),
        attempts,
        mismatched,
        tpr_selective: trials.iter().filter(|t| t.selective_p < cfg.alpha).count() as f64 / m,
        tpr_hl: trials.iter().filter(|t| t.hl_p < cfg.alpha).count() as f64 / m,
        containment_failures: trials.iter().filter(|t| !t.contained).count(),
        trials,
    })
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// the uniform distribution on `[0, 1]`.
pub fn ks_uniform_statistic(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(k, &u)| ((k + 1) as f64 / n - u).max(u - k as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at level 0.01.
pub fn ks_critical_value_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

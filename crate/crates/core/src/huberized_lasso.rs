//! Huberized Lasso: Huber regression rewritten as a Lasso on mean-shift
//! parameters after projecting out the design, with sign-conditioned
//! (polyhedral) selective inference as a baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::{selective_p, TestDirection};
use crate::model::DataLine;
use crate::numerics::{numerical_rank, pseudo_inverse, IntervalSet};

/// Lasso solution `û = argmin ½‖ỹ − P u‖² + λ‖u‖₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub u_hat: DVector<f64>,
    /// Indices with `û_j ≠ 0`, ascending.
    pub active: Vec<usize>,
    /// Signs of `û` on `active`.
    pub signs: Vec<f64>,
    pub lambda: f64,
}

/// `P = I − X X⁺` and `ỹ = P y`.
pub fn project_out_design(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let hat = x * pseudo_inverse(x);
    let mut proj = DMatrix::identity(n, n) - hat;
    // symmetrize away round-off
    let sym = (&proj + proj.transpose()) * 0.5;
    proj = sym;
    let y_tilde = &proj * y;
    (y_tilde, proj)
}

fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn lasso_objective(y: &DVector<f64>, proj: &DMatrix<f64>, u: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - proj * u).norm_squared() + lambda * u.lp_norm(1)
}

/// Coordinate descent to a small duality gap, followed by an exact solve on
/// the active block.
pub fn lasso_solve(
    y_tilde: &DVector<f64>,
    proj: &DMatrix<f64>,
    lambda: f64,
) -> Result<LassoSolution> {
    let n = y_tilde.len();
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if proj.nrows() != n || proj.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "projection is {}x{}, response has length {n}",
            proj.nrows(),
            proj.ncols()
        )));
    }
    let col_sq: Vec<f64> = (0..n).map(|j| proj.column(j).norm_squared()).collect();
    let mut u = DVector::zeros(n);
    let mut r = y_tilde.clone();
    const MAX_SWEEPS: usize = 100_000;
    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        for j in 0..n {
            if col_sq[j] <= 1e-14 {
                continue;
            }
            let pj = proj.column(j);
            let old = u[j];
            let new = soft(old + pj.dot(&r) / col_sq[j], lambda / col_sq[j]);
            if new != old {
                r.axpy(old - new, &pj, 1.0);
                u[j] = new;
            }
        }
        if sweep % 5 == 4 || sweep < 5 {
            r = y_tilde - proj * &u;
            let primal = 0.5 * r.norm_squared() + lambda * u.lp_norm(1);
            let corr = proj.tr_mul(&r);
            let scale = (corr.amax() / lambda).max(1.0);
            let theta = &r / scale;
            let dual = 0.5 * y_tilde.norm_squared() - 0.5 * (y_tilde - &theta).norm_squared();
            if primal - dual <= 1e-9 * (1.0 + primal) {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterations(MAX_SWEEPS));
    }
    let sol = polish(y_tilde, proj, lambda, u.clone())?;
    if lasso_objective(y_tilde, proj, &sol.u_hat, lambda)
        <= lasso_objective(y_tilde, proj, &u, lambda) + 1e-12
    {
        Ok(sol)
    } else {
        Ok(from_vector(u, lambda))
    }
}

fn from_vector(u: DVector<f64>, lambda: f64) -> LassoSolution {
    let active: Vec<usize> = (0..u.len()).filter(|&j| u[j] != 0.0).collect();
    let signs = active.iter().map(|&j| u[j].signum()).collect();
    LassoSolution {
        u_hat: u,
        active,
        signs,
        lambda,
    }
}

/// Re-solves the stationarity equations on the active block exactly; keeps
/// the rough solution when the polished one breaks sign or KKT conditions.
fn polish(
    y: &DVector<f64>,
    proj: &DMatrix<f64>,
    lambda: f64,
    u: DVector<f64>,
) -> Result<LassoSolution> {
    let rough = from_vector(u, lambda);
    if rough.active.is_empty() {
        return Ok(rough);
    }
    let (ua, _) = active_block(y, proj, lambda, &rough.active, &rough.signs)?;
    let mut polished = DVector::zeros(y.len());
    for (k, &j) in rough.active.iter().enumerate() {
        if ua[k] * rough.signs[k] <= 0.0 {
            return Ok(rough);
        }
        polished[j] = ua[k];
    }
    let corr = proj.tr_mul(&(y - proj * &polished));
    if corr.amax() > lambda * (1.0 + 1e-9) + 1e-12 {
        return Ok(rough);
    }
    Ok(LassoSolution {
        u_hat: polished,
        ..rough
    })
}

/// `û_A = (P_AA)⁻¹ ((Pᵀỹ)_A − λ s)` and the active block's Cholesky factor.
fn active_block(
    y: &DVector<f64>,
    proj: &DMatrix<f64>,
    lambda: f64,
    active: &[usize],
    signs: &[f64],
) -> Result<(DVector<f64>, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let gram_aa = gram_block(proj, active);
    if numerical_rank(&gram_aa) < active.len() {
        return Err(Error::NonUniqueActiveBlock);
    }
    let chol = gram_aa.cholesky().ok_or(Error::NonUniqueActiveBlock)?;
    let pty = proj.tr_mul(y);
    let rhs = DVector::from_iterator(
        active.len(),
        active.iter().zip(signs).map(|(&j, &s)| pty[j] - lambda * s),
    );
    Ok((chol.solve(&rhs), chol))
}

/// `(PᵀP)_AA`.
fn gram_block(proj: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let pa = proj.select_columns(active);
    pa.tr_mul(&pa)
}

/// Interval of `z` along `ỹ(z) = P (a + b z)` on which the Lasso keeps the
/// active set and signs of `sol`, intersected with `window`.
pub fn hl_truncation_interval(
    sol: &LassoSolution,
    proj: &DMatrix<f64>,
    line: &DataLine,
    window: (f64, f64),
) -> Result<IntervalSet> {
    let n = line.len();
    let lambda = sol.lambda;
    let ya = proj * &line.a;
    let yb = proj * &line.b;
    let (mut lo, mut hi) = window;
    // each constraint reads c + d z ≥ 0
    let mut clip = |c: f64, d: f64| {
        if d > 0.0 {
            lo = lo.max(-c / d);
        } else if d < 0.0 {
            hi = hi.min(-c / d);
        } else if c < 0.0 {
            hi = f64::NEG_INFINITY;
        }
    };
    let a = &sol.active;
    let (fit_c, fit_d) = if a.is_empty() {
        (DVector::zeros(n), DVector::zeros(n))
    } else {
        let gram_aa = gram_block(proj, a);
        if numerical_rank(&gram_aa) < a.len() {
            return Err(Error::NonUniqueActiveBlock);
        }
        let chol = gram_aa.cholesky().ok_or(Error::NonUniqueActiveBlock)?;
        let pya = proj.tr_mul(&ya);
        let pyb = proj.tr_mul(&yb);
        let rc = DVector::from_iterator(
            a.len(),
            a.iter().zip(&sol.signs).map(|(&j, &s)| pya[j] - lambda * s),
        );
        let rd = DVector::from_iterator(a.len(), a.iter().map(|&j| pyb[j]));
        let uc = chol.solve(&rc);
        let ud = chol.solve(&rd);
        for k in 0..a.len() {
            let s = sol.signs[k];
            clip(s * uc[k], s * ud[k]);
        }
        let pa = proj.select_columns(a);
        (&pa * uc, &pa * ud)
    };
    // inactive correlations: |Pᵀ(ỹ − P_A u_A)|_j ≤ λ
    let corr_c = proj.tr_mul(&(&ya - &fit_c));
    let corr_d = proj.tr_mul(&(&yb - &fit_d));
    let is_active = |j: usize| a.binary_search(&j).is_ok();
    for j in (0..n).filter(|&j| !is_active(j)) {
        clip(lambda - corr_c[j], -corr_d[j]);
        clip(lambda + corr_c[j], corr_d[j]);
    }
    let region = IntervalSet::interval(lo, hi);
    let z = line.z_obs;
    if region.contains(z) {
        Ok(region)
    } else if region.distance_to(z) <= 1e-7 * (1.0 + z.abs()) {
        Ok(IntervalSet::interval(lo.min(z), hi.max(z)))
    } else {
        Err(Error::EmptyRegion { z_obs: z })
    }
}

/// Selective p-value under the sign-conditioned interval.
pub fn hl_p_value(dir: &TestDirection, interval: &IntervalSet, z_obs: f64) -> Result<f64> {
    selective_p(dir, interval, z_obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{detect, OutlierSet};
    use crate::huber_path::solve_huber;
    use crate::inference::{build_eta, conditional_line, naive_p, truncation_region};
    use crate::model::{Dataset, DetectionRule, EstimatorSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Proximal gradient (ISTA) with many iterations, as an independent oracle.
    fn ista(y: &DVector<f64>, proj: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
        let step = 1.0 / proj.clone().symmetric_eigenvalues().amax().max(1e-12);
        let mut u = DVector::zeros(y.len());
        for _ in 0..20_000 {
            let grad = proj.tr_mul(&(proj * &u - y));
            u = (&u - grad * step).map(|v| soft(v, step * lambda));
        }
        u
    }

    fn outlier_data(
        rng: &mut ChaCha8Rng,
        n: usize,
        p: usize,
        k: usize,
        shift: f64,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, p + 1, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = DVector::from_fn(n, |i, _| {
            rng.sample::<f64, _>(StandardNormal) + if i < k { shift } else { 0.0 }
        });
        (x, y)
    }

    #[test]
    fn projection_examples() {
        let (yt, p) = project_out_design(
            &DMatrix::identity(3, 3),
            &DVector::from_vec(vec![1.0, 2.0, 3.0]),
        );
        assert!(p.amax() < 1e-12 && yt.amax() < 1e-12);
        let (yt, _) = project_out_design(
            &DMatrix::from_element(3, 1, 1.0),
            &DVector::from_vec(vec![1.0, 2.0, 3.0]),
        );
        assert!((yt - DVector::from_vec(vec![-1.0, 0.0, 1.0])).amax() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(10, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (_, p) = project_out_design(&x, &DVector::zeros(10));
        assert!((&p * &p - &p).amax() < 1e-9);
    }

    #[test]
    fn lasso_examples() {
        let (yt, p) = project_out_design(
            &DMatrix::from_element(4, 1, 1.0),
            &DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]),
        );
        let big = p.tr_mul(&yt).amax() + 0.1;
        let sol = lasso_solve(&yt, &p, big).unwrap();
        assert!(sol.active.is_empty() && sol.u_hat.amax() == 0.0);
        let sol = lasso_solve(
            &DVector::from_vec(vec![3.0, 0.0]),
            &DMatrix::identity(2, 2),
            1.0,
        )
        .unwrap();
        assert!((sol.u_hat[0] - 2.0).abs() < 1e-12 && sol.u_hat[1] == 0.0);
        assert_eq!(sol.active, vec![0]);
    }

    #[test]
    fn lasso_matches_proximal_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let (x, y) = outlier_data(&mut rng, 20, 3, 3, 5.0);
            let (yt, p) = project_out_design(&x, &y);
            let sol = lasso_solve(&yt, &p, 1.5).unwrap();
            let oracle = ista(&yt, &p, 1.5);
            let a = lasso_objective(&yt, &p, &sol.u_hat, 1.5);
            let b = lasso_objective(&yt, &p, &oracle, 1.5);
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            // KKT
            let corr = p.tr_mul(&(&yt - &p * &sol.u_hat));
            assert!(corr.amax() <= 1.5 + 1e-7);
            for (k, &j) in sol.active.iter().enumerate() {
                assert!((corr[j] - 1.5 * sol.signs[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lasso_support_equals_huber_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (x, y) = outlier_data(&mut rng, 30, 3, 5, 4.0);
            let (yt, p) = project_out_design(&x, &y);
            let sol = lasso_solve(&yt, &p, 2.0).unwrap();
            let (beta, _) = solve_huber(&x, &y, 2.0).unwrap();
            let det = detect(&(&y - &x * beta), &DetectionRule::Threshold { xi: 2.0 }).unwrap();
            assert_eq!(det.indices(), sol.active.as_slice());
        }
    }

    #[test]
    fn sign_interval_grid_oracle_and_containment() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lambda = 2.0;
        let mut done = 0;
        while done < 5 {
            let (x, y) = outlier_data(&mut rng, 15, 2, 3, 4.0);
            let ds = Dataset::with_isotropic_noise(x.clone(), y.clone(), 1.0).unwrap();
            let (yt, p) = project_out_design(&x, &y);
            let sol = lasso_solve(&yt, &p, lambda).unwrap();
            if sol.active.is_empty() {
                continue;
            }
            let o = OutlierSet::new(sol.active.clone(), 15).unwrap();
            let dir = build_eta(&ds, &o, sol.active[0]).unwrap();
            let line = conditional_line(&ds, &dir);
            let window = dir.window(line.z_obs, 20.0);
            let hl = hl_truncation_interval(&sol, &p, &line, window).unwrap();
            assert_eq!(hl.len(), 1);
            assert!(hl.contains(line.z_obs));
            let (lo, hi) = (hl.inf().unwrap(), hl.sup().unwrap());
            let span = (hi - lo).max(1.0);
            for s in 0..400 {
                let z = lo - 0.5 * span + 2.0 * span * s as f64 / 399.0;
                if (z - lo).abs() < 1e-9 || (z - hi).abs() < 1e-9 || z < window.0 || z > window.1 {
                    continue;
                }
                let yz = &p * line.at(z);
                let fresh = lasso_solve(&yz, &p, lambda).unwrap();
                let same = fresh.active == sol.active && fresh.signs == sol.signs;
                assert_eq!(hl.contains(z), same, "z={z}");
            }
            // over-conditioning: the sign event sits inside the detection event
            let plh = truncation_region(
                &ds,
                &EstimatorSpec::Huber { delta: lambda },
                &DetectionRule::Threshold { xi: lambda },
                &dir,
                20.0,
            )
            .unwrap();
            assert!(hl.is_subset_within(&plh.region, 1e-7));
            done += 1;
        }
    }

    #[test]
    fn hl_p_value_examples() {
        let eta = DVector::from_vec(vec![1.0]);
        let dir = TestDirection {
            eta,
            sigma_eta2: 1.0,
            target_index: 0,
        };
        let real = IntervalSet::real_line();
        assert!((hl_p_value(&dir, &real, 1.7).unwrap() - naive_p(&dir, 1.7)).abs() < 1e-10);
        assert!(
            (hl_p_value(&dir, &IntervalSet::interval(-2.0, 2.0), 0.0).unwrap() - 1.0).abs() < 1e-12
        );
    }
}

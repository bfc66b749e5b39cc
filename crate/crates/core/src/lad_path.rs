//! Least-absolute-deviation regression as a linear program, and its exact
//! solution path along `y(z) = a + b z` by parametric right-hand-side simplex.
//!
//! LP variables are laid out as
//! `(ρ1+, ρ1−, …, ρn+, ρn−, β1+, β1−, …, βd+, βd−)`, all nonnegative, with
//! equality constraints `ρi+ − ρi− + xiᵀ(β+ − β−) = yi` and cost `Σ (ρi+ + ρi−)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{AffineSegment, DataLine, PiecewisePath};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 32;

/// An optimal simplex basis of the LAD linear program.
#[derive(Debug, Clone)]
pub struct LadBasis {
    basic: Vec<usize>,
    binv: DMatrix<f64>,
    n: usize,
    d: usize,
    pivots_since_refactor: usize,
}

impl LadBasis {
    pub fn basic_indices(&self) -> &[usize] {
        &self.basic
    }

    /// Explicit inverse of the basis matrix.
    pub fn basis_inverse(&self) -> &DMatrix<f64> {
        &self.binv
    }

    pub fn num_variables(&self) -> usize {
        2 * self.n + 2 * self.d
    }

    fn cost(&self, j: usize) -> f64 {
        if j < 2 * self.n {
            1.0
        } else {
            0.0
        }
    }

    /// Dual vector `π = B⁻ᵀ c_B`.
    pub fn dual(&self) -> DVector<f64> {
        let cb = DVector::from_iterator(self.n, self.basic.iter().map(|&j| self.cost(j)));
        self.binv.tr_mul(&cb)
    }

    /// Basic variable values for a given right-hand side.
    pub fn basic_values(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.binv * rhs
    }

    /// Coefficient vector recovered from basic values.
    pub fn beta(&self, xb: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.d);
        for (k, &j) in self.basic.iter().enumerate() {
            if j >= 2 * self.n {
                let m = (j - 2 * self.n) / 2;
                if (j - 2 * self.n).is_multiple_of(2) {
                    beta[m] += xb[k];
                } else {
                    beta[m] -= xb[k];
                }
            }
        }
        beta
    }

    /// Reduced costs of every LP variable (zero on basic columns).
    pub fn reduced_costs(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let pi = self.dual();
        let (n, d) = (self.n, self.d);
        let mut rc = DVector::zeros(2 * n + 2 * d);
        for i in 0..n {
            rc[2 * i] = 1.0 - pi[i];
            rc[2 * i + 1] = 1.0 + pi[i];
        }
        for m in 0..d {
            let px = pi.dot(&x.column(m));
            rc[2 * n + 2 * m] = -px;
            rc[2 * n + 2 * m + 1] = px;
        }
        for &j in &self.basic {
            rc[j] = 0.0;
        }
        rc
    }

    /// True when the primal optimum attached to this basis is the unique LAD
    /// solution: every nonbasic reduced cost is strictly positive, ignoring the
    /// mirror column of a basic coefficient (which never changes β).
    pub fn is_unique(&self, x: &DMatrix<f64>, tol: f64) -> bool {
        let rc = self.reduced_costs(x);
        let mut is_basic = vec![false; self.num_variables()];
        for &j in &self.basic {
            is_basic[j] = true;
        }
        (0..self.num_variables()).all(|j| {
            if is_basic[j] {
                return true;
            }
            if j >= 2 * self.n && is_basic[j ^ 1] {
                return true;
            }
            rc[j] > tol
        })
    }

    /// `B⁻¹ A_j` for LP column `j`.
    fn column_image(&self, x: &DMatrix<f64>, j: usize) -> DVector<f64> {
        let n = self.n;
        if j < 2 * n {
            let col = self.binv.column(j / 2);
            if j.is_multiple_of(2) {
                col.into_owned()
            } else {
                -col
            }
        } else {
            let m = (j - 2 * n) / 2;
            let img = &self.binv * x.column(m);
            if (j - 2 * n).is_multiple_of(2) {
                img
            } else {
                -img
            }
        }
    }

    /// Row `k` of `B⁻¹ S`, over all LP columns.
    fn tableau_row(&self, x: &DMatrix<f64>, k: usize) -> DVector<f64> {
        let (n, d) = (self.n, self.d);
        let row = self.binv.row(k);
        let mut out = DVector::zeros(2 * n + 2 * d);
        for i in 0..n {
            out[2 * i] = row[i];
            out[2 * i + 1] = -row[i];
        }
        for m in 0..d {
            let v = row.dot(&x.column(m).transpose());
            out[2 * n + 2 * m] = v;
            out[2 * n + 2 * m + 1] = -v;
        }
        out
    }

    fn pivot(&mut self, x: &DMatrix<f64>, k: usize, j: usize, alpha: &DVector<f64>) -> Result<()> {
        let piv = alpha[k];
        if piv.abs() < 1e-13 {
            return Err(Error::NumericalFailure(format!(
                "pivot element {piv:e} too small"
            )));
        }
        self.basic[k] = j;
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            return self.refactor(x);
        }
        let rowk = self.binv.row(k) / piv;
        for r in 0..self.n {
            if r == k {
                continue;
            }
            let f = alpha[r];
            if f != 0.0 {
                for c in 0..self.n {
                    self.binv[(r, c)] -= f * rowk[c];
                }
            }
        }
        self.binv.set_row(k, &rowk);
        Ok(())
    }

    fn basis_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let mut b = DMatrix::zeros(n, n);
        for (k, &j) in self.basic.iter().enumerate() {
            if j < 2 * n {
                b[(j / 2, k)] = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
            } else {
                let m = (j - 2 * n) / 2;
                let s = if (j - 2 * n).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                };
                b.set_column(k, &(x.column(m) * s));
            }
        }
        b
    }

    fn refactor(&mut self, x: &DMatrix<f64>) -> Result<()> {
        let b = self.basis_matrix(x);
        self.binv = b
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::NumericalFailure("singular simplex basis".into()))?;
        self.pivots_since_refactor = 0;
        Ok(())
    }
}

/// Sum of absolute residuals.
pub fn lad_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    (y - x * beta).iter().map(|r| r.abs()).sum()
}

fn check_dims(x: &DMatrix<f64>, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, response has length {n}",
            x.nrows()
        )));
    }
    if x.ncols() == 0 || n == 0 {
        return Err(Error::InvalidInput("empty LAD problem".into()));
    }
    Ok(())
}

/// Solves `min Σ |yi − xiᵀβ|` with a primal simplex started from the all-residual
/// basis (which is feasible, so no artificial phase is needed).
pub fn solve_lad(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, LadBasis)> {
    let n = y.len();
    check_dims(x, n)?;
    let d = x.ncols();
    let basic: Vec<usize> = (0..n)
        .map(|i| if y[i] >= 0.0 { 2 * i } else { 2 * i + 1 })
        .collect();
    let binv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        basic
            .iter()
            .map(|&j| if j.is_multiple_of(2) { 1.0 } else { -1.0 }),
    ));
    let mut basis = LadBasis {
        basic,
        binv,
        n,
        d,
        pivots_since_refactor: 0,
    };
    let nvars = 2 * n + 2 * d;
    let max_iter = 50 * (n + d) + 1000;
    let mut xb = basis.basic_values(y);
    let mut degenerate_run = 0usize;
    let mut is_basic = vec![false; nvars];
    for iter in 0.. {
        if iter > max_iter {
            return Err(Error::NumericalFailure(format!(
                "simplex did not terminate within {max_iter} pivots"
            )));
        }
        is_basic.iter_mut().for_each(|b| *b = false);
        for &j in &basis.basic {
            is_basic[j] = true;
        }
        let rc = basis.reduced_costs(x);
        let bland = degenerate_run > 2;
        let mut entering = None;
        let mut best = -COST_TOL;
        for j in 0..nvars {
            if is_basic[j] || rc[j] >= -COST_TOL {
                continue;
            }
            if bland {
                entering = Some(j);
                break;
            }
            if rc[j] < best {
                best = rc[j];
                entering = Some(j);
            }
        }
        let Some(j) = entering else { break };
        let alpha = basis.column_image(x, j);
        let mut leave: Option<(usize, f64)> = None;
        for k in 0..n {
            if alpha[k] > PIVOT_TOL {
                let ratio = xb[k].max(0.0) / alpha[k];
                leave = match leave {
                    None => Some((k, ratio)),
                    Some((kk, r)) => {
                        if ratio < r - 1e-12
                            || (ratio <= r + 1e-12 && basis.basic[k] < basis.basic[kk])
                        {
                            Some((k, ratio))
                        } else {
                            Some((kk, r))
                        }
                    }
                };
            }
        }
        let Some((k, ratio)) = leave else {
            return Err(Error::Unbounded);
        };
        if ratio <= 1e-12 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        basis.pivot(x, k, j, &alpha)?;
        xb = basis.basic_values(y);
    }
    basis.refactor(x)?;
    let xb = basis.basic_values(y);
    let beta = basis.beta(&xb);
    certify(x, y, &basis, &beta)?;
    Ok((beta, basis))
}

/// Checks the duality gap of the primal–dual pair attached to `basis`.
fn certify(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    basis: &LadBasis,
    beta: &DVector<f64>,
) -> Result<()> {
    let obj = lad_objective(x, y, beta);
    let pi = basis.dual();
    let infeas = pi
        .iter()
        .map(|p| (p.abs() - 1.0).max(0.0))
        .fold(0.0, f64::max)
        + (x.tr_mul(&pi)).amax() / (1.0 + x.amax());
    let gap = (obj - pi.dot(y)).abs();
    let scale = 1.0 + obj;
    if gap > 1e-8 * scale || infeas > 1e-8 {
        return Err(Error::NumericalFailure(format!(
            "LAD certificate failed: duality gap {gap:e}, dual infeasibility {infeas:e}"
        )));
    }
    Ok(())
}

/// Exact LAD solution path over `window` along `line`.
///
/// The LP is solved at the left window end; afterwards basic values are affine
/// in `z` and each breakpoint is followed by a dual simplex pivot.
pub fn lad_path(x: &DMatrix<f64>, line: &DataLine, window: (f64, f64)) -> Result<PiecewisePath> {
    lad_path_with_multiplier(x, line, window, 20.0)
}

/// As [`lad_path`], with the window multiplier used to size the breakpoint cap.
pub fn lad_path_with_multiplier(
    x: &DMatrix<f64>,
    line: &DataLine,
    window: (f64, f64),
    window_mult: f64,
) -> Result<PiecewisePath> {
    let (lo, hi) = window;
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidInput(format!("invalid window [{lo}, {hi}]")));
    }
    if !(line.z_obs >= lo && line.z_obs <= hi) {
        return Err(Error::WindowTooSmall {
            z_obs: line.z_obs,
            lo,
            hi,
        });
    }
    let n = line.len();
    check_dims(x, n)?;
    if crate::numerics::numerical_rank(x) < x.ncols() {
        log::warn!("design matrix is rank deficient; LAD path reports one optimal selection");
    }
    let cap = ((10.0 * (n + x.ncols()) as f64 * window_mult.max(1.0)).ceil() as usize).max(100);
    let (_, mut basis) = solve_lad(x, &line.at(lo))?;
    let nvars = basis.num_variables();

    let mut breakpoints = Vec::new();
    let mut segments = Vec::new();
    let mut z = lo;
    let mut pivots = 0usize;
    let mut is_basic = vec![false; nvars];
    loop {
        let xa = basis.basic_values(&line.a);
        let xs = basis.basic_values(&line.b);
        segments.push(AffineSegment {
            c: basis.beta(&xa),
            d: basis.beta(&xs),
        });
        // next basic variable to reach zero
        let mut hit: Option<(usize, f64)> = None;
        let slope_tol = 1e-12 * (1.0 + xs.amax());
        for k in 0..n {
            if xs[k] < -slope_tol {
                let v = (xa[k] + xs[k] * z).max(0.0);
                let zk = z + v / -xs[k];
                hit = match hit {
                    None => Some((k, zk)),
                    Some((kk, zz)) => {
                        let tie = (zk - zz).abs() <= 1e-12 * (1.0 + zz.abs());
                        if zk < zz && !tie || tie && basis.basic[k] < basis.basic[kk] {
                            Some((k, zk))
                        } else {
                            Some((kk, zz))
                        }
                    }
                };
            }
        }
        let Some((k, zk)) = hit else { break };
        if zk >= hi {
            break;
        }
        pivots += 1;
        if pivots > cap {
            return Err(Error::CycleDetected { cap });
        }
        breakpoints.push(zk);
        z = zk;

        is_basic.iter_mut().for_each(|b| *b = false);
        for &j in &basis.basic {
            is_basic[j] = true;
        }
        let rc = basis.reduced_costs(x);
        let row = basis.tableau_row(x, k);
        let mut enter: Option<(usize, f64)> = None;
        for j in 0..nvars {
            if is_basic[j] || row[j] >= -PIVOT_TOL {
                continue;
            }
            let ratio = rc[j].max(0.0) / -row[j];
            enter = match enter {
                None => Some((j, ratio)),
                Some((jj, r)) => {
                    if ratio < r - 1e-12 {
                        Some((j, ratio))
                    } else {
                        Some((jj, r))
                    }
                }
            };
        }
        let Some((j, _)) = enter else {
            return Err(Error::NumericalFailure(
                "dual ratio test found no entering column".into(),
            ));
        };
        let alpha = basis.column_image(x, j);
        basis.pivot(x, k, j, &alpha)?;
    }
    PiecewisePath::new(window, breakpoints, segments)
}

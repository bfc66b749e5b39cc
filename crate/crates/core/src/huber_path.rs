//! Huber regression at a point, and its exact solution path along
//! `y(z) = a + b z` by active-set continuation of the equivalent QP.
//!
//! The QP is over `r = (β, u, v)` (length `d + 2n`):
//!
//! ```text
//! min ½‖u‖² + δ·1ᵀv   s.t.   xiᵀβ − ui − vi ≤ yi        (row 0·n + i)
//!                           −xiᵀβ − ui − vi ≤ −yi       (row 1·n + i)
//!                           −ui ≤ 0                    (row 2·n + i)
//!                            ui ≤ δ                    (row 3·n + i)
//!                           −vi ≤ 0                    (row 4·n + i)
//! ```
//!
//! i.e. `P = diag(0, I, 0)`, `q = (0, 0, δ1)`, `h(z) = u0 + u1 z` with
//! `u0 = (a, −a, 0, δ1, 0)` and `u1 = (b, −b, 0, 0, 0)`. Stationarity reads
//! `P r + q + S_Aᵀ μ_A = 0`.
//!
//! Optimal active sets are determined by the residual partition: each
//! residual is in the quadratic zone (`|e| < δ`, split by sign) or in one of
//! the two linear zones. The march tracks that partition, which keeps every
//! step an `O(n d + d³)` update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{AffineSegment, DataLine, PiecewisePath};
use crate::numerics::{numerical_rank, pseudo_inverse};

/// Which piece of the Huber loss a residual sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    /// `0 ≤ e < δ`
    QuadPos,
    /// `−δ < e < 0`
    QuadNeg,
    /// `e ≥ δ`
    Upper,
    /// `e ≤ −δ`
    Lower,
}

impl Zone {
    pub fn of(e: f64, delta: f64) -> Zone {
        if e >= delta {
            Zone::Upper
        } else if e <= -delta {
            Zone::Lower
        } else if e >= 0.0 {
            Zone::QuadPos
        } else {
            Zone::QuadNeg
        }
    }

    pub fn is_quadratic(self) -> bool {
        matches!(self, Zone::QuadPos | Zone::QuadNeg)
    }

    /// Zone entered when the residual leaves through the boundary it is
    /// moving towards with slope `g`.
    fn next(self, g: f64) -> Zone {
        match (self, g > 0.0) {
            (Zone::QuadPos, true) => Zone::Upper,
            (Zone::QuadPos, false) => Zone::QuadNeg,
            (Zone::QuadNeg, true) => Zone::QuadPos,
            (Zone::QuadNeg, false) => Zone::Lower,
            (Zone::Upper, _) => Zone::QuadPos,
            (Zone::Lower, _) => Zone::QuadNeg,
        }
    }
}

/// Huber loss `ψ_δ(e)`.
pub fn huber_loss(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * e.abs() - 0.5 * delta * delta
    }
}

pub fn huber_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, delta: f64) -> f64 {
    (y - x * beta).iter().map(|&e| huber_loss(e, delta)).sum()
}

/// Dense form of the QP, used for verification.
#[derive(Debug, Clone)]
pub struct HuberQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub s: DMatrix<f64>,
    pub u0: DVector<f64>,
    pub u1: DVector<f64>,
}

impl HuberQp {
    pub fn new(x: &DMatrix<f64>, line: &DataLine, delta: f64) -> Self {
        let (n, d) = x.shape();
        let nv = d + 2 * n;
        let mut p = DMatrix::zeros(nv, nv);
        let mut q = DVector::zeros(nv);
        let mut s = DMatrix::zeros(5 * n, nv);
        let mut u0 = DVector::zeros(5 * n);
        let mut u1 = DVector::zeros(5 * n);
        for i in 0..n {
            let (ui, vi) = (d + i, d + n + i);
            p[(ui, ui)] = 1.0;
            q[vi] = delta;
            for c in 0..d {
                s[(i, c)] = x[(i, c)];
                s[(n + i, c)] = -x[(i, c)];
            }
            s[(i, ui)] = -1.0;
            s[(i, vi)] = -1.0;
            s[(n + i, ui)] = -1.0;
            s[(n + i, vi)] = -1.0;
            s[(2 * n + i, ui)] = -1.0;
            s[(3 * n + i, ui)] = 1.0;
            s[(4 * n + i, vi)] = -1.0;
            u0[i] = line.a[i];
            u0[n + i] = -line.a[i];
            u0[3 * n + i] = delta;
            u1[i] = line.b[i];
            u1[n + i] = -line.b[i];
        }
        Self { p, q, s, u0, u1 }
    }

    pub fn h(&self, z: f64) -> DVector<f64> {
        &self.u0 + &self.u1 * z
    }
}

/// KKT state of the QP at a parameter value `z`, with the continuation
/// direction for the current active set.
#[derive(Debug, Clone)]
pub struct HuberKkt {
    pub z: f64,
    pub zones: Vec<Zone>,
    /// Active constraint rows, ascending.
    pub active_set: Vec<usize>,
    /// `r̂(z) = (β, u, v)`.
    pub primal: DVector<f64>,
    /// Multipliers aligned with `active_set`.
    pub multipliers: DVector<f64>,
    /// `dr̂/dz`.
    pub psi: DVector<f64>,
    /// `dμ_A/dz`, aligned with `active_set`.
    pub gamma: DVector<f64>,
    /// `(S r̂ − h(z))_j` for every row.
    pub constraint_value: DVector<f64>,
    /// `(S ψ − u1)_j` for every row.
    pub constraint_slope: DVector<f64>,
    /// `β(z') = beta_c + beta_d z'` while the active set is unchanged.
    pub beta_c: DVector<f64>,
    pub beta_d: DVector<f64>,
}

/// `(row, slack, slope)` for an inactive row or `(row, multiplier, gamma)`
/// for an active one.
pub type StepCandidate = (usize, f64, f64);

/// Outcome of the breakpoint step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEvent {
    AddConstraint(usize),
    DropConstraint(usize),
    WindowEnd,
}

const STEP_TOL: f64 = 1e-12;

/// Smallest step to the next active-set change.
///
/// `inactive` holds `(row, slack, slope)` with `slack = h_j − (S r̂)_j ≥ 0` and
/// `slope = (S ψ − u1)_j`; the row becomes binding after `slack / slope` when
/// the slope is positive. `active` holds `(row, multiplier, gamma)`; the
/// multiplier reaches zero after `multiplier / −gamma` when gamma is negative.
/// Ratios with the wrong sign count as `+∞`. Ties go to the first candidate.
pub fn breakpoint_step(
    inactive: &[(usize, f64, f64)],
    active: &[(usize, f64, f64)],
) -> (f64, StepEvent) {
    let mut best = (f64::INFINITY, StepEvent::WindowEnd);
    for &(j, slack, slope) in inactive {
        if slope > STEP_TOL {
            let t = slack.max(0.0) / slope;
            if t < best.0 {
                best = (t, StepEvent::AddConstraint(j));
            }
        }
    }
    for &(j, mult, gamma) in active {
        if gamma < -STEP_TOL {
            let t = mult.max(0.0) / -gamma;
            if t < best.0 {
                best = (t, StepEvent::DropConstraint(j));
            }
        }
    }
    best
}

impl HuberKkt {
    /// Builds the KKT state at `z` for the active set implied by `zones`.
    pub fn from_zones(
        x: &DMatrix<f64>,
        line: &DataLine,
        delta: f64,
        zones: Vec<Zone>,
        z: f64,
    ) -> Result<Self> {
        Self::from_zones_anchored(x, line, delta, zones, z, None)
    }

    /// As [`HuberKkt::from_zones`]; if the quadratic-zone rows do not span
    /// the coefficient space, the solution is taken through `anchor` at `z`.
    pub fn from_zones_anchored(
        x: &DMatrix<f64>,
        line: &DataLine,
        delta: f64,
        zones: Vec<Zone>,
        z: f64,
        anchor: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let (n, d) = x.shape();
        if line.len() != n || zones.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {n} rows, line has {}, zones {}",
                line.len(),
                zones.len()
            )));
        }
        let mut h = DMatrix::zeros(d, d);
        let mut rc = DVector::zeros(d);
        let mut rd = DVector::zeros(d);
        for i in 0..n {
            let xi = x.row(i).transpose();
            match zones[i] {
                Zone::QuadPos | Zone::QuadNeg => {
                    h.ger(1.0, &xi, &xi, 1.0);
                    rc.axpy(line.a[i], &xi, 1.0);
                    rd.axpy(line.b[i], &xi, 1.0);
                }
                Zone::Upper => rc.axpy(delta, &xi, 1.0),
                Zone::Lower => rc.axpy(-delta, &xi, 1.0),
            }
        }
        let (beta_c, beta_d) = solve_spd(h, &rc, &rd, anchor.map(|b| (b, z)))?;
        let beta = &beta_c + &beta_d * z;
        let e = line.at(z) - x * &beta;
        let g = &line.b - x * &beta_d;

        let nv = d + 2 * n;
        let mut primal = DVector::zeros(nv);
        let mut psi = DVector::zeros(nv);
        primal.rows_mut(0, d).copy_from(&beta);
        psi.rows_mut(0, d).copy_from(&beta_d);
        let mut act: Vec<(usize, f64, f64)> = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (ui, vi) = (d + i, d + n + i);
            match zones[i] {
                Zone::QuadPos => {
                    primal[ui] = e[i];
                    psi[ui] = g[i];
                    act.push((n + i, e[i], g[i]));
                    act.push((4 * n + i, delta - e[i], -g[i]));
                }
                Zone::QuadNeg => {
                    primal[ui] = -e[i];
                    psi[ui] = -g[i];
                    act.push((i, -e[i], -g[i]));
                    act.push((4 * n + i, delta + e[i], g[i]));
                }
                Zone::Upper => {
                    primal[ui] = delta;
                    primal[vi] = e[i] - delta;
                    psi[vi] = g[i];
                    act.push((n + i, delta, 0.0));
                }
                Zone::Lower => {
                    primal[ui] = delta;
                    primal[vi] = -e[i] - delta;
                    psi[vi] = -g[i];
                    act.push((i, delta, 0.0));
                }
            }
        }
        act.sort_by_key(|t| t.0);
        let mut value = DVector::zeros(5 * n);
        let mut slope = DVector::zeros(5 * n);
        for i in 0..n {
            let (u, v) = (primal[d + i], primal[d + n + i]);
            let (pu, pv) = (psi[d + i], psi[d + n + i]);
            value[i] = -e[i] - u - v;
            slope[i] = -g[i] - pu - pv;
            value[n + i] = e[i] - u - v;
            slope[n + i] = g[i] - pu - pv;
            value[2 * n + i] = -u;
            slope[2 * n + i] = -pu;
            value[3 * n + i] = u - delta;
            slope[3 * n + i] = pu;
            value[4 * n + i] = -v;
            slope[4 * n + i] = -pv;
        }
        Ok(Self {
            z,
            zones,
            active_set: act.iter().map(|t| t.0).collect(),
            multipliers: DVector::from_iterator(act.len(), act.iter().map(|t| t.1)),
            gamma: DVector::from_iterator(act.len(), act.iter().map(|t| t.2)),
            primal,
            psi,
            constraint_value: value,
            constraint_slope: slope,
            beta_c,
            beta_d,
        })
    }

    pub fn beta(&self) -> DVector<f64> {
        &self.beta_c + &self.beta_d * self.z
    }

    /// Whether the rows strictly inside the quadratic zone span the
    /// coefficient space, in which case the minimizer is unique.
    pub fn is_unique(&self, x: &DMatrix<f64>, delta: f64) -> bool {
        let d = x.ncols();
        let rows: Vec<usize> = (0..x.nrows())
            .filter(|&i| self.zones[i].is_quadratic() && self.primal[d + i] < delta * (1.0 - 1e-9))
            .collect();
        rows.len() >= x.ncols() && numerical_rank(&x.select_rows(&rows)) == x.ncols()
    }

    /// Largest violation of primal feasibility, complementary slackness on the
    /// active rows, and multiplier signs.
    pub fn max_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut is_active = vec![false; self.constraint_value.len()];
        for &j in &self.active_set {
            is_active[j] = true;
            worst = worst.max(self.constraint_value[j].abs());
        }
        for (j, &v) in self.constraint_value.iter().enumerate() {
            if !is_active[j] {
                worst = worst.max(v);
            }
        }
        for &m in self.multipliers.iter() {
            worst = worst.max(-m);
        }
        worst
    }

    /// Same state with the active set and direction listed in dense form:
    /// `(inactive (row, slack, slope), active (row, multiplier, gamma))`.
    pub fn step_candidates(&self) -> (Vec<StepCandidate>, Vec<StepCandidate>) {
        let mut is_active = vec![false; self.constraint_value.len()];
        for &j in &self.active_set {
            is_active[j] = true;
        }
        let inactive = (0..self.constraint_value.len())
            .filter(|&j| !is_active[j])
            .map(|j| (j, -self.constraint_value[j], self.constraint_slope[j]))
            .collect();
        let active = self
            .active_set
            .iter()
            .enumerate()
            .map(|(k, &j)| (j, self.multipliers[k], self.gamma[k]))
            .collect();
        (inactive, active)
    }
}

/// Solves `H c = rc`, `H d = rd` for symmetric positive semidefinite `H`.
/// When `H` is singular the minimizer is not unique: `d` is the minimum-norm
/// direction and `c` passes through `anchor = (β, z)` if one is given.
fn solve_spd(
    h: DMatrix<f64>,
    rc: &DVector<f64>,
    rd: &DVector<f64>,
    anchor: Option<(&DVector<f64>, f64)>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let dim = h.nrows();
    if numerical_rank(&h) == dim {
        if let Some(ch) = h.clone().cholesky() {
            let c = ch.solve(rc);
            let d = ch.solve(rd);
            if c.iter().chain(d.iter()).all(|v| v.is_finite()) {
                return Ok((c, d));
            }
        }
    }
    log::debug!("quadratic-zone Gram matrix is singular");
    let pinv = pseudo_inverse(&h);
    let d = &pinv * rd;
    let c = match anchor {
        Some((beta, z)) => beta - &d * z,
        None => &pinv * rc,
    };
    Ok((c, d))
}

/// Step to the next active-set change from `kkt`, capped by the window end `z_hi`.
pub fn huber_breakpoint_step(kkt: &HuberKkt, z_hi: f64) -> (f64, StepEvent) {
    let (inactive, active) = kkt.step_candidates();
    let (t, ev) = breakpoint_step(&inactive, &active);
    if kkt.z + t >= z_hi {
        (z_hi - kkt.z, StepEvent::WindowEnd)
    } else {
        (t, ev)
    }
}

/// Minimizes `Σ ψ_δ(yi − xiᵀβ)` by Newton iterations on the residual
/// partition, started from least squares, with an exact line search. When the
/// quadratic-zone rows are rank deficient the step adds the gradient component
/// in the null space, along which the objective is linear.
fn huber_fit(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
    let d = x.ncols();
    let mut beta = crate::numerics::least_squares_apply(x, y)?;
    let scale = 1.0 + x.amax() * (y.amax() + delta) * y.len() as f64;
    let grad_tol = 1e-14 * scale;
    for _ in 0..500 {
        let e = y - x * &beta;
        let grad = x.tr_mul(&e.map(|v| v.clamp(-delta, delta)));
        if grad.amax() <= grad_tol {
            return Ok(beta);
        }
        let mut h = DMatrix::zeros(d, d);
        for i in 0..y.len() {
            if e[i].abs() < delta {
                let xi = x.row(i).transpose();
                h.ger(1.0, &xi, &xi, 1.0);
            }
        }
        let step = if numerical_rank(&h) == d {
            h.cholesky()
                .map(|ch| ch.solve(&grad))
                .ok_or_else(|| Error::NumericalFailure("singular Huber Hessian".into()))?
        } else {
            let pinv = pseudo_inverse(&h);
            let newton = &pinv * &grad;
            let null = &grad - &h * (&pinv * &grad);
            newton + null
        };
        let r = x * &step;
        // derivative of the objective along the step, increasing in t
        let slope_at = |t: f64| -> f64 {
            e.iter()
                .zip(r.iter())
                .map(|(&ei, &ri)| -(ei - t * ri).clamp(-delta, delta) * ri)
                .sum()
        };
        let mut hi = 1.0f64;
        let mut doublings = 0;
        while slope_at(hi) < 0.0 && doublings < 200 {
            hi *= 2.0;
            doublings += 1;
        }
        let t = if slope_at(hi) == 0.0 || (hi == 1.0 && slope_at(1.0).abs() <= grad_tol * r.amax())
        {
            hi
        } else {
            let mut lo = if hi > 1.0 { 0.5 * hi } else { 0.0 };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if slope_at(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let new_beta = &beta + &step * t;
        if (&new_beta - &beta).amax() <= 1e-15 * (1.0 + beta.amax()) {
            return Ok(new_beta);
        }
        beta = new_beta;
    }
    let e = y - x * &beta;
    let grad = x.tr_mul(&e.map(|v| v.clamp(-delta, delta)));
    if grad.amax() <= 1e-9 * scale {
        return Ok(beta);
    }
    Err(Error::NumericalFailure(
        "Huber Newton iteration did not converge".into(),
    ))
}

/// Zones of a fitted residual vector; exact zeros are assigned by the slope
/// of the residual along the line.
fn zones_for(e: &DVector<f64>, g: Option<&DVector<f64>>, delta: f64) -> Vec<Zone> {
    e.iter()
        .enumerate()
        .map(|(i, &ei)| {
            let z = Zone::of(ei, delta);
            if ei == 0.0 && g.is_some_and(|g| g[i] < 0.0) {
                Zone::QuadNeg
            } else {
                z
            }
        })
        .collect()
}

/// Builds a KKT state at `z` from a fresh fit. The partition is refined until
/// it reproduces itself, which resolves residuals sitting on a zone boundary.
fn fresh_state(x: &DMatrix<f64>, line: &DataLine, delta: f64, z: f64) -> Result<HuberKkt> {
    let y = line.at(z);
    let beta = huber_fit(x, &y, delta)?;
    let e = &y - x * &beta;
    let zones = zones_for(&e, None, delta);
    let kkt = HuberKkt::from_zones_anchored(x, line, delta, zones, z, Some(&beta))?;
    let g = &line.b - x * &kkt.beta_d;
    let zones = zones_for(&e, Some(&g), delta);
    if zones != kkt.zones {
        return HuberKkt::from_zones_anchored(x, line, delta, zones, z, Some(&beta));
    }
    Ok(kkt)
}

/// Solves Huber regression at a single response vector and returns the
/// coefficients with a certified KKT state.
pub fn solve_huber(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, HuberKkt)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Huber delta must be positive, got {delta}"
        )));
    }
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, y has length {n}",
            x.nrows()
        )));
    }
    let line = DataLine::new(y.clone(), DVector::zeros(n), 0.0)?;
    let kkt = fresh_state(x, &line, delta, 0.0)?;
    let scale = 1.0 + y.amax() + delta;
    if kkt.max_violation() > 1e-8 * scale {
        return Err(Error::NumericalFailure(format!(
            "Huber KKT conditions violated by {:e}",
            kkt.max_violation()
        )));
    }
    Ok((kkt.beta(), kkt))
}

/// Exact Huber solution path over `window` along `line`.
pub fn huber_path(
    x: &DMatrix<f64>,
    line: &DataLine,
    delta: f64,
    window: (f64, f64),
) -> Result<PiecewisePath> {
    huber_path_with_multiplier(x, line, delta, window, 20.0)
}

/// As [`huber_path`], with the window multiplier used to size the event cap.
pub fn huber_path_with_multiplier(
    x: &DMatrix<f64>,
    line: &DataLine,
    delta: f64,
    window: (f64, f64),
    window_mult: f64,
) -> Result<PiecewisePath> {
    let (lo, hi) = window;
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(Error::InvalidInput(format!("invalid window [{lo}, {hi}]")));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Huber delta must be positive, got {delta}"
        )));
    }
    let (n, d) = x.shape();
    if line.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "X has {n} rows, line has {}",
            line.len()
        )));
    }
    let cap = ((10.0 * (n + d) as f64 * window_mult.max(1.0)).ceil() as usize).max(200);
    let scale = 1.0 + line.a.amax() + line.b.amax() * lo.abs().max(hi.abs()) + delta;
    let viol_tol = 1e-8 * scale;

    let mut kkt = fresh_state(x, line, delta, lo)?;
    let mut breakpoints = Vec::new();
    let mut segments = Vec::new();
    let mut events = 0usize;
    let mut zero_steps = 0usize;
    let mut last_flip: Option<(f64, Vec<usize>)> = None;
    let mut open_segment = true;
    loop {
        if open_segment {
            segments.push(AffineSegment {
                c: kkt.beta_c.clone(),
                d: kkt.beta_d.clone(),
            });
        }
        let (inactive, active) = kkt.step_candidates();
        let (t, _) = breakpoint_step(&inactive, &active);
        let z_next = kkt.z + t;
        if !(z_next < hi) {
            break;
        }
        events += 1;
        if events > cap {
            return Err(Error::CycleDetected { cap });
        }
        if t <= 1e-12 * (1.0 + z_next.abs()) {
            zero_steps += 1;
        } else {
            zero_steps = 0;
        }

        // every row whose event fires at the same z moves its instance
        let tie = 1e-10 * (1.0 + t);
        let mut moved: Vec<usize> = inactive
            .iter()
            .filter(|&&(_, s, sl)| sl > STEP_TOL && s.max(0.0) / sl <= t + tie)
            .chain(
                active
                    .iter()
                    .filter(|&&(_, m, g)| g < -STEP_TOL && m.max(0.0) / -g <= t + tie),
            )
            .map(|&(j, _, _)| j % n)
            .collect();
        moved.sort_unstable();
        moved.dedup();

        let g = &line.b - x * &kkt.beta_d;
        let mut zones = kkt.zones.clone();
        for &i in &moved {
            zones[i] = zones[i].next(g[i]);
        }
        let chatter = matches!(&last_flip, Some((zl, m)) if (z_next - zl).abs() <= 1e-12 * (1.0 + z_next.abs()) && *m == moved);
        let anchor = &kkt.beta_c + &kkt.beta_d * z_next;
        let next = if chatter || zero_steps > n {
            None
        } else {
            HuberKkt::from_zones_anchored(x, line, delta, zones, z_next, Some(&anchor))
                .ok()
                .filter(|k| k.max_violation() <= viol_tol)
        };
        let prev_zones = std::mem::take(&mut kkt.zones);
        kkt = match next {
            Some(k) => k,
            None => {
                zero_steps = 0;
                let zr = (z_next + 1e-9).min(hi);
                let k = fresh_state(x, line, delta, zr)?;
                // anchor the new segment at the event point
                HuberKkt::from_zones_anchored(x, line, delta, k.zones, z_next, Some(&anchor))?
            }
        };
        // a sign change inside the quadratic zone leaves β unchanged
        open_segment = kkt
            .zones
            .iter()
            .zip(&prev_zones)
            .any(|(a, b)| a.is_quadratic() != b.is_quadratic());
        if open_segment {
            breakpoints.push(z_next);
        }
        last_flip = Some((z_next, moved));
    }
    PiecewisePath::new(window, breakpoints, segments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, d, |_, c| {
            if c == 0 {
                1.0
            } else {
                rng.sample(StandardNormal)
            }
        });
        let y = DVector::from_fn(n, |_, _| {
            let e: f64 = rng.sample(StandardNormal);
            if rng.random::<f64>() < 0.15 {
                e * 6.0
            } else {
                e
            }
        });
        (x, y)
    }

    /// Golden-section minimization of a convex function of one variable.
    fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn large_delta_gives_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = random_problem(&mut rng, 12, 3);
        let ols = crate::numerics::least_squares_apply(&x, &y).unwrap();
        let delta = (&y - &x * &ols).amax() + 1.0;
        let (beta, _) = solve_huber(&x, &y, delta).unwrap();
        assert!((beta - ols).amax() < 1e-8);
    }

    #[test]
    fn location_with_one_outlier() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DVector::from_vec(vec![0.0, 0.0, 10.0]);
        let (beta, _) = solve_huber(&x, &y, 1.0).unwrap();
        let oracle = golden(
            |b| huber_objective(&x, &y, &DVector::from_element(1, b), 1.0),
            -5.0,
            15.0,
        );
        assert!((beta[0] - 0.5).abs() < 1e-12);
        assert!((beta[0] - oracle).abs() < 1e-7);
    }

    #[test]
    fn exact_fit_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(10, 3, |_, _| rng.sample(StandardNormal));
        let w = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let (beta, _) = solve_huber(&x, &(&x * &w), 0.3).unwrap();
        assert!((beta - w).amax() < 1e-8);
    }

    #[test]
    fn kkt_state_satisfies_dense_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (x, a) = random_problem(&mut rng, 10, 2);
            let b = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
            let line = DataLine::new(a, b, 0.0).unwrap();
            let z = rng.random_range(-2.0..2.0);
            let kkt = fresh_state(&x, &line, 1.0, z).unwrap();
            let qp = HuberQp::new(&x, &line, 1.0);
            let sa = DMatrix::from_fn(kkt.active_set.len(), qp.s.ncols(), |r, c| {
                qp.s[(kkt.active_set[r], c)]
            });
            // stationarity
            let stat = &qp.p * &kkt.primal + &qp.q + sa.tr_mul(&kkt.multipliers);
            assert!(stat.amax() < 1e-8, "stationarity {}", stat.amax());
            // constraint values and slopes
            let val = &qp.s * &kkt.primal - qp.h(z);
            assert!((val - &kkt.constraint_value).amax() < 1e-9);
            assert!(kkt.max_violation() < 1e-8);
            // direction solves the KKT system with the u1 forcing
            let dir = &qp.p * &kkt.psi + sa.tr_mul(&kkt.gamma);
            assert!(dir.amax() < 1e-9);
            let u1a = DVector::from_iterator(
                kkt.active_set.len(),
                kkt.active_set.iter().map(|&j| qp.u1[j]),
            );
            assert!((&sa * &kkt.psi - u1a).amax() < 1e-9);
        }
    }

    #[test]
    fn step_examples() {
        assert_eq!(
            breakpoint_step(&[(0, 1.0, -1.0), (1, 3.0, 0.0)], &[(2, 1.0, 0.5)]).1,
            StepEvent::WindowEnd
        );
        let (t, ev) = breakpoint_step(&[(7, 2.0, 1.0)], &[(2, 1.0, 0.0)]);
        assert_eq!(t, 2.0);
        assert_eq!(ev, StepEvent::AddConstraint(7));
        let (t, ev) = breakpoint_step(&[(7, 2.0, 1.0)], &[(3, 1.0, -1.0)]);
        assert_eq!(t, 1.0);
        assert_eq!(ev, StepEvent::DropConstraint(3));
    }

    #[test]
    fn step_probes_agree_with_fresh_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let (x, a) = random_problem(&mut rng, 12, 2);
            let b = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            let line = DataLine::new(a, b, 0.0).unwrap();
            let kkt = fresh_state(&x, &line, 1.0, 0.0).unwrap();
            let (t, ev) = huber_breakpoint_step(&kkt, 1e6);
            assert!(t > 2e-6 && ev != StepEvent::WindowEnd);
            let row = match ev {
                StepEvent::AddConstraint(j) | StepEvent::DropConstraint(j) => j,
                StepEvent::WindowEnd => unreachable!(),
            };
            // before the event the fresh partition equals the tracked one;
            // just after, the instance owning the event row has changed zone
            let before = fresh_state(&x, &line, 1.0, t - 1e-6).unwrap();
            let after = fresh_state(&x, &line, 1.0, t + 1e-6).unwrap();
            assert_eq!(before.zones, kkt.zones);
            let changed: Vec<usize> = (0..12)
                .filter(|&i| after.zones[i] != kkt.zones[i])
                .collect();
            assert_eq!(changed, vec![row % 12]);
        }
    }

    #[test]
    fn constant_line_single_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = random_problem(&mut rng, 10, 2);
        let line = DataLine::new(y, DVector::zeros(10), 0.0).unwrap();
        let path = huber_path(&x, &line, 1.0, (-3.0, 3.0)).unwrap();
        assert_eq!(path.num_segments(), 1);
    }

    #[test]
    fn huge_delta_path_is_least_squares_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, a) = random_problem(&mut rng, 10, 3);
        let b = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let line = DataLine::new(a, b, 0.0).unwrap();
        let path = huber_path(&x, &line, 1e4, (-5.0, 5.0)).unwrap();
        assert_eq!(path.num_segments(), 1);
        for &z in &[-5.0, -1.0, 0.0, 2.5, 5.0] {
            let ols = crate::numerics::least_squares_apply(&x, &line.at(z)).unwrap();
            assert!((path.evaluate(z).unwrap() - ols).amax() < 1e-9);
        }
    }

    #[test]
    fn path_matches_fresh_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (x, a) = random_problem(&mut rng, 12, 2);
            let b = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
            let line = DataLine::new(a, b, 0.0).unwrap();
            let window = (-10.0, 10.0);
            let path = huber_path(&x, &line, 1.0, window).unwrap();
            assert!(path.max_discontinuity() < 1e-7);
            let mut objs = Vec::new();
            for s in 0..=100 {
                let z = window.0 + (window.1 - window.0) * s as f64 / 100.0;
                let (fresh, _) = solve_huber(&x, &line.at(z), 1.0).unwrap();
                let on_path = path.evaluate(z).unwrap();
                assert!((&fresh - &on_path).amax() < 1e-6, "z={z}");
                objs.push(huber_objective(&x, &line.at(z), &on_path, 1.0));
            }
            for w in objs.windows(3) {
                assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
            }
            // residual partition is constant inside each segment
            for (lo, hi, seg) in path.iter_segments() {
                if hi - lo < 1e-9 {
                    continue;
                }
                let part = |z: f64| -> Vec<bool> {
                    (line.at(z) - &x * seg.at(z))
                        .iter()
                        .map(|e| e.abs() < 1.0)
                        .collect()
                };
                let mid = 0.5 * (lo + hi);
                assert_eq!(part(mid), part(lo + 0.01 * (hi - lo)));
                assert_eq!(part(mid), part(hi - 0.01 * (hi - lo)));
            }
        }
    }
}

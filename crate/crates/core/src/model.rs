//! Datasets, the conditional line `y(z) = a + b z`, detection and estimator
//! configuration, and piecewise-affine path containers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Breakpoints closer than this are merged.
pub const BREAKPOINT_MERGE_TOL: f64 = 1e-12;

/// Design matrix, response and noise covariance of `Y ~ N(mu, Sigma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 instances, got {n}"
            )));
        }
        if x.ncols() < 1 {
            return Err(Error::InvalidInput("design matrix has no columns".into()));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, y has length {n}",
                x.nrows()
            )));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "Sigma is {}x{}, expected {n}x{n}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if x.iter()
            .chain(y.iter())
            .chain(sigma.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite entry in dataset".into()));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "Sigma is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let min_eig = sigma.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-8 {
            return Err(Error::InvalidInput(format!(
                "Sigma is not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { x, y, sigma })
    }

    /// Dataset with `Sigma = sigma2 · I`.
    pub fn with_isotropic_noise(x: DMatrix<f64>, y: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma2 must be positive, got {sigma2}"
            )));
        }
        let n = y.len();
        Self::new(x, y, DMatrix::identity(n, n) * sigma2)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_full_column_rank(&self) -> bool {
        crate::numerics::numerical_rank(&self.x) == self.d()
    }
}

/// The response restricted to the line `y(z) = a + b z`, with the observed
/// statistic `z_obs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataLine {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub z_obs: f64,
}

impl DataLine {
    pub fn new(a: DVector<f64>, b: DVector<f64>, z_obs: f64) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch(format!(
                "line vectors have lengths {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(Self { a, b, z_obs })
    }

    pub fn at(&self, z: f64) -> DVector<f64> {
        &self.a + &self.b * z
    }

    pub fn observed(&self) -> DVector<f64> {
        self.at(self.z_obs)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Outlier detection rule applied to robust residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionRule {
    /// `|r_i| >= xi`.
    Threshold { xi: f64 },
    /// The `k` largest `|r_i|`.
    TopK { k: usize },
}

impl DetectionRule {
    pub fn threshold(xi: f64) -> Result<Self> {
        if !(xi > 0.0) || !xi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "threshold must be positive, got {xi}"
            )));
        }
        Ok(Self::Threshold { xi })
    }

    pub fn top_k(k: usize) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidInput("K must be at least 1".into()));
        }
        Ok(Self::TopK { k })
    }

    /// Checks the rule against the sample size (`1 <= K < n`).
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            DetectionRule::Threshold { xi } if !(xi > 0.0) => Err(Error::InvalidInput(format!(
                "threshold must be positive, got {xi}"
            ))),
            DetectionRule::TopK { k } if k < 1 || k >= n => Err(Error::InvalidInput(format!(
                "K must satisfy 1 <= K < n = {n}, got {k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Robust regression estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorSpec {
    Lad,
    Huber { delta: f64 },
}

impl EstimatorSpec {
    pub fn huber(delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Huber delta must be positive, got {delta}"
            )));
        }
        Ok(Self::Huber { delta })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Lad => "lad",
            EstimatorSpec::Huber { .. } => "huber",
        }
    }
}

/// One affine piece `c + d z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSegment {
    pub c: DVector<f64>,
    pub d: DVector<f64>,
}

impl AffineSegment {
    pub fn at(&self, z: f64) -> DVector<f64> {
        &self.c + &self.d * z
    }
}

/// A continuous piecewise-affine vector function of `z` on a finite window.
///
/// Segment `t` covers `[z_{t-1}, z_t]` where `z_0` and `z_T` are the window
/// ends and the interior breakpoints are stored in `breakpoints`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePath {
    window: (f64, f64),
    breakpoints: Vec<f64>,
    segments: Vec<AffineSegment>,
}

/// Residual path `r(z) = y(z) - X β(z)` with the same breakpoint structure.
pub type ResidualPath = PiecewisePath;

impl PiecewisePath {
    /// Builds a path, merging breakpoints closer than [`BREAKPOINT_MERGE_TOL`]
    /// (the later segment of a merged pair is kept) and dropping breakpoints on
    /// or outside the window edges.
    pub fn new(
        window: (f64, f64),
        breakpoints: Vec<f64>,
        segments: Vec<AffineSegment>,
    ) -> Result<Self> {
        let (lo, hi) = window;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!("invalid window [{lo}, {hi}]")));
        }
        if segments.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} segments for {} interior breakpoints",
                segments.len(),
                breakpoints.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::InvalidInput("breakpoints are not sorted".into()));
        }
        let dim = segments[0].c.len();
        if segments
            .iter()
            .any(|s| s.c.len() != dim || s.d.len() != dim)
        {
            return Err(Error::DimensionMismatch(
                "segments differ in dimension".into(),
            ));
        }
        let mut bps = Vec::with_capacity(breakpoints.len());
        let mut segs = Vec::with_capacity(segments.len());
        let mut iter = segments.into_iter();
        let mut current = iter.next().expect("at least one segment");
        let mut left = lo;
        for (bp, next) in breakpoints.into_iter().zip(iter) {
            if bp - left <= BREAKPOINT_MERGE_TOL || bp <= lo {
                // zero-length segment: superseded by its successor
                current = next;
                continue;
            }
            if bp >= hi - BREAKPOINT_MERGE_TOL {
                // everything past the window end is irrelevant
                break;
            }
            bps.push(bp);
            segs.push(current);
            current = next;
            left = bp;
        }
        segs.push(current);
        Ok(Self {
            window,
            breakpoints: bps,
            segments: segs,
        })
    }

    /// A single affine segment over the whole window.
    pub fn affine(window: (f64, f64), c: DVector<f64>, d: DVector<f64>) -> Result<Self> {
        Self::new(window, Vec::new(), vec![AffineSegment { c, d }])
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[AffineSegment] {
        &self.segments
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn dim(&self) -> usize {
        self.segments[0].c.len()
    }

    /// Bounds `[z_{t-1}, z_t]` of segment `t`.
    pub fn segment_bounds(&self, t: usize) -> (f64, f64) {
        let lo = if t == 0 {
            self.window.0
        } else {
            self.breakpoints[t - 1]
        };
        let hi = if t + 1 == self.segments.len() {
            self.window.1
        } else {
            self.breakpoints[t]
        };
        (lo, hi)
    }

    /// Iterates `(lo, hi, segment)`.
    pub fn iter_segments(&self) -> impl Iterator<Item = (f64, f64, &AffineSegment)> + '_ {
        self.segments.iter().enumerate().map(move |(t, s)| {
            let (lo, hi) = self.segment_bounds(t);
            (lo, hi, s)
        })
    }

    /// Index of the segment containing `z`.
    pub fn segment_index(&self, z: f64) -> Result<usize> {
        let (lo, hi) = self.window;
        if !(z >= lo && z <= hi) {
            return Err(Error::OutOfWindow { z, lo, hi });
        }
        Ok(self.breakpoints.partition_point(|&bp| bp < z))
    }

    pub fn evaluate(&self, z: f64) -> Result<DVector<f64>> {
        let t = self.segment_index(z)?;
        Ok(self.segments[t].at(z))
    }

    /// Largest jump between adjacent segments at interior breakpoints.
    pub fn max_discontinuity(&self) -> f64 {
        self.breakpoints
            .iter()
            .enumerate()
            .map(|(t, &z)| (self.segments[t].at(z) - self.segments[t + 1].at(z)).amax())
            .fold(0.0, f64::max)
    }

    /// Applies `f` to every segment, keeping the breakpoints.
    pub fn map_segments<F>(&self, mut f: F) -> Result<PiecewisePath>
    where
        F: FnMut(&AffineSegment) -> AffineSegment,
    {
        PiecewisePath::new(
            self.window,
            self.breakpoints.clone(),
            self.segments.iter().map(&mut f).collect(),
        )
    }
}

/// Evaluates `path` at `z`.
pub fn evaluate_path(path: &PiecewisePath, z: f64) -> Result<DVector<f64>> {
    path.evaluate(z)
}

/// Residual path `f_t = a - X c_t`, `g_t = b - X d_t`.
pub fn residual_path(
    line: &DataLine,
    coeff_path: &PiecewisePath,
    x: &DMatrix<f64>,
) -> Result<ResidualPath> {
    if coeff_path.dim() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "path has dimension {}, X has {} columns",
            coeff_path.dim(),
            x.ncols()
        )));
    }
    if x.nrows() != line.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, line has length {}",
            x.nrows(),
            line.len()
        )));
    }
    coeff_path.map_segments(|s| AffineSegment {
        c: &line.a - x * &s.c,
        d: &line.b - x * &s.d,
    })
}

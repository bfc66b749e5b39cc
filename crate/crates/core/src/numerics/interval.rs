//! Finite unions of closed intervals on the extended real line.

use std::fmt;

/// A finite union of disjoint closed intervals, kept in canonical form:
/// sorted by lower endpoint, pairwise disjoint, with touching intervals merged.
///
/// Endpoints may be infinite. Degenerate single-point intervals are allowed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn real_line() -> Self {
        Self {
            intervals: vec![(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    /// The single interval `[lo, hi]`, or the empty set when `lo > hi`.
    pub fn interval(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            Self {
                intervals: vec![(lo, hi)],
            }
        } else {
            Self::empty()
        }
    }

    /// Builds a canonical set from arbitrary pieces. Pieces with `lo > hi` or NaN
    /// endpoints are dropped.
    pub fn from_intervals<I: IntoIterator<Item = (f64, f64)>>(pieces: I) -> Self {
        let mut raw: Vec<(f64, f64)> = pieces.into_iter().filter(|&(lo, hi)| lo <= hi).collect();
        raw.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut intervals: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (lo, hi) in raw {
            match intervals.last_mut() {
                Some(last) if lo <= last.1 => {
                    if hi > last.1 {
                        last.1 = hi;
                    }
                }
                _ => intervals.push((lo, hi)),
            }
        }
        Self { intervals }
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        // first interval whose upper end is >= x
        let k = self.intervals.partition_point(|&(_, hi)| hi < x);
        k < self.intervals.len() && self.intervals[k].0 <= x
    }

    /// Euclidean distance from `x` to the set (infinite for the empty set).
    pub fn distance_to(&self, x: f64) -> f64 {
        self.intervals
            .iter()
            .map(|&(lo, hi)| {
                if x < lo {
                    lo - x
                } else if x > hi {
                    x - hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn inf(&self) -> Option<f64> {
        self.intervals.first().map(|iv| iv.0)
    }

    pub fn sup(&self) -> Option<f64> {
        self.intervals.last().map(|iv| iv.1)
    }

    /// Total length (Lebesgue measure).
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|&(lo, hi)| hi - lo).sum()
    }

    pub fn union(&self, other: &IntervalSet) -> IntervalSet {
        if other.is_empty() {
            return self.clone();
        }
        if self.is_empty() {
            return other.clone();
        }
        IntervalSet::from_intervals(self.intervals.iter().chain(other.intervals.iter()).copied())
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let (a, b) = (&self.intervals, &other.intervals);
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo <= hi {
                out.push((lo, hi));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        // pieces come out sorted and disjoint except for possible touching points
        IntervalSet::from_intervals(out)
    }

    /// Closure of `[lo, hi] \ self`.
    pub fn complement_within(&self, lo: f64, hi: f64) -> IntervalSet {
        if lo > hi {
            return IntervalSet::empty();
        }
        let mut out = Vec::new();
        let mut cursor = lo;
        for &(a, b) in &self.intervals {
            if b < cursor {
                continue;
            }
            if a > hi {
                break;
            }
            if a > cursor {
                out.push((cursor, a));
            }
            cursor = cursor.max(b);
            if cursor >= hi {
                break;
            }
        }
        if cursor < hi || (out.is_empty() && cursor == lo && lo == hi && !self.contains(lo)) {
            out.push((cursor, hi));
        }
        IntervalSet { intervals: out }
    }

    /// Intersection with the single interval `[lo, hi]`.
    pub fn clip(&self, lo: f64, hi: f64) -> IntervalSet {
        self.intersect(&IntervalSet::interval(lo, hi))
    }

    /// True when every point of `self` lies in `other` up to `tol` at endpoints.
    pub fn is_subset_within(&self, other: &IntervalSet, tol: f64) -> bool {
        self.intervals.iter().all(|&(lo, hi)| {
            other
                .intervals
                .iter()
                .any(|&(a, b)| a - tol <= lo && hi <= b + tol)
        })
    }
}

impl fmt::Display for IntervalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.intervals.is_empty() {
            return write!(f, "{{}}");
        }
        let parts: Vec<String> = self
            .intervals
            .iter()
            .map(|(lo, hi)| format!("[{lo}, {hi}]"))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

impl FromIterator<(f64, f64)> for IntervalSet {
    fn from_iter<I: IntoIterator<Item = (f64, f64)>>(iter: I) -> Self {
        IntervalSet::from_intervals(iter)
    }
}

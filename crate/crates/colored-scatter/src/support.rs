use crate::error::{Error, Result};

/// A union of disjoint closed intervals on the directional-cosine axis.
///
/// Intervals are kept sorted ascending and must be pairwise disjoint with
/// strictly positive length. Scattering configurations additionally require
/// the union to lie within [-1, 1]; the kernel module accepts any finite
/// union.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularSupport {
    intervals: Vec<(f64, f64)>,
}

impl AngularSupport {
    /// Builds a support from `(start, end)` pairs, which may be given in any
    /// order but must be finite, non-degenerate, and non-overlapping.
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidSupport("no intervals given".into()));
        }
        for &(a, b) in &intervals {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidSupport(format!(
                    "non-finite endpoint in ({a}, {b})"
                )));
            }
            if a >= b {
                return Err(Error::InvalidSupport(format!(
                    "interval ({a}, {b}) has non-positive length"
                )));
            }
        }
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        for w in intervals.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::InvalidSupport(format!(
                    "intervals ({}, {}) and ({}, {}) overlap or touch",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(Self { intervals })
    }

    /// Parses the text form `start:end[,start:end]*`, e.g. `-1:-0.7,-0.15:0.15,0.7:1`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut intervals = Vec::new();
        for part in text.split(',') {
            let (a, b) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidSupport(format!("expected start:end, got `{part}`")))?;
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSupport(format!("bad number `{a}`")))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::InvalidSupport(format!("bad number `{b}`")))?;
            intervals.push((a, b));
        }
        Self::new(intervals)
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    /// Number of clusters (disjoint intervals), the `M` of the counting laws.
    pub fn cluster_count(&self) -> usize {
        self.intervals.len()
    }

    /// Total Lebesgue measure of the union.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|&(a, b)| b - a).sum()
    }

    /// Membership test; intervals are closed, so boundaries are included.
    pub fn contains(&self, x: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| x >= a && x <= b)
    }

    /// True when the union lies within [-1, 1] (a valid directional-cosine set).
    pub fn within_unit(&self) -> bool {
        self.intervals
            .iter()
            .all(|&(a, b)| (-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b))
    }

    /// The canonical text form accepted by [`AngularSupport::parse`].
    pub fn to_text(&self) -> String {
        self.intervals
            .iter()
            .map(|(a, b)| format!("{a}:{b}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_measures() {
        let s = AngularSupport::new(vec![(0.7, 1.0), (-1.0, -0.7), (-0.15, 0.15)]).unwrap();
        assert_eq!(s.cluster_count(), 3);
        assert!((s.measure() - 0.9).abs() < 1e-15, "measure {}", s.measure());
        assert_eq!(s.intervals()[0], (-1.0, -0.7));
        assert!(s.within_unit());
    }

    #[test]
    fn rejects_overlap_and_degenerate() {
        assert!(AngularSupport::new(vec![(0.0, 0.5), (0.4, 0.9)]).is_err());
        assert!(AngularSupport::new(vec![(0.0, 0.5), (0.5, 0.9)]).is_err());
        assert!(AngularSupport::new(vec![(0.3, 0.3)]).is_err());
        assert!(AngularSupport::new(vec![]).is_err());
    }

    #[test]
    fn membership_is_boundary_inclusive() {
        let s = AngularSupport::new(vec![(-0.5, 0.5)]).unwrap();
        assert!(s.contains(-0.5) && s.contains(0.5) && s.contains(0.0));
        assert!(!s.contains(0.5000001));
    }

    #[test]
    fn parse_roundtrip() {
        let s = AngularSupport::parse("-1:-0.7,-0.15:0.15,0.7:1").unwrap();
        assert_eq!(s.cluster_count(), 3);
        let t = AngularSupport::parse(&s.to_text()).unwrap();
        assert_eq!(s, t);
        assert!(AngularSupport::parse("0.5").is_err());
        assert!(AngularSupport::parse("a:b").is_err());
    }
}

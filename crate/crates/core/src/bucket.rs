//! Attribute bucketing shared by tables, projections, and reports.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// `edges` of length K+1 define K buckets `[e_k, e_{k+1})`. Values below the
/// first edge fall into bucket 0 and values at or above the last edge into
/// bucket K-1, so the end buckets are open-ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucketing {
    pub edges: Vec<f64>,
}

impl Bucketing {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(CoreError::InvalidConfig(
                "bucketing needs at least two edges".into(),
            ));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CoreError::InvalidConfig(
                "bucket edges must be strictly increasing".into(),
            ));
        }
        Ok(Bucketing { edges })
    }

    /// K log-spaced buckets over `[lo, hi]`.
    pub fn log_spaced(lo: f64, hi: f64, buckets: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo) {
            return Err(CoreError::InvalidConfig(
                "log-spaced bucketing needs 0 < lo < hi".into(),
            ));
        }
        let k = buckets.max(1);
        let (ll, lh) = (lo.ln(), hi.ln());
        let edges = (0..=k)
            .map(|i| (ll + (lh - ll) * i as f64 / k as f64).exp())
            .collect();
        Self::new(edges)
    }

    pub fn num_buckets(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn index_of(&self, value: f64) -> usize {
        if value < self.edges[0] {
            return 0;
        }
        let last = self.num_buckets() - 1;
        for k in 0..self.num_buckets() {
            if value < self.edges[k + 1] {
                return k;
            }
        }
        last
    }

    pub fn label(&self, k: usize) -> String {
        format!("[{:.4},{:.4})", self.edges[k], self.edges[k + 1])
    }

    pub fn one_hot(&self, value: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.num_buckets()];
        v[self.index_of(value)] = 1.0;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_value_maps_to_exactly_one_bucket() {
        let b = Bucketing::new(vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        assert_eq!(b.num_buckets(), 3);
        assert_eq!(b.index_of(-10.0), 0); // open low end
        assert_eq!(b.index_of(0.0), 0);
        assert_eq!(b.index_of(0.999), 0);
        assert_eq!(b.index_of(1.0), 1);
        assert_eq!(b.index_of(4.999), 2);
        assert_eq!(b.index_of(5.0), 2); // open high end
        assert_eq!(b.index_of(1e9), 2);
    }

    #[test]
    fn edges_must_increase() {
        assert!(Bucketing::new(vec![1.0, 1.0]).is_err());
        assert!(Bucketing::new(vec![2.0, 1.0]).is_err());
        assert!(Bucketing::new(vec![1.0]).is_err());
    }

    #[test]
    fn log_spacing_covers_range() {
        let b = Bucketing::log_spaced(2.0, 600.0, 10).unwrap();
        assert_eq!(b.num_buckets(), 10);
        assert!((b.edges[0] - 2.0).abs() < 1e-9);
        assert!((b.edges[10] - 600.0).abs() < 1e-9);
    }

    #[test]
    fn one_hot_selects_bucket() {
        let b = Bucketing::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(b.one_hot(1.5), vec![0.0, 1.0]);
    }
}

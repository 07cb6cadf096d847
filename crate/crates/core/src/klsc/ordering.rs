use crate::error::{Error, Result};

/// Default largest point count for the exact quadratic ordering.
pub const EXACT_LIMIT: usize = 100_000;

/// Greedy maximin selection order.
///
/// `order[k]` is the point selected at step `k`; `dist[k]` is its distance to
/// the closest point selected before it (`+∞` for the first pick).
#[derive(Debug, Clone, PartialEq)]
pub struct MaximinOrdering {
    order: Vec<usize>,
    dist: Vec<f64>,
}

impl MaximinOrdering {
    /// Accepts an externally computed ordering (e.g. an approximate one for
    /// very large inputs).
    pub fn from_parts(order: Vec<usize>, dist: Vec<f64>) -> Result<Self> {
        let n = order.len();
        if dist.len() != n {
            return Err(Error::arg("ordering and distance lengths differ"));
        }
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::arg("ordering is not a permutation"));
            }
        }
        if dist.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::arg("selection distances must be non-negative"));
        }
        Ok(Self { order, dist })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Points in selection order.
    pub fn selection(&self) -> &[usize] {
        &self.order
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    /// Original index at factor position `p` (reverse selection order).
    #[inline]
    pub fn point_at(&self, p: usize) -> usize {
        self.order[self.order.len() - 1 - p]
    }

    /// Selection distance of the point at factor position `p`.
    #[inline]
    pub fn length_at(&self, p: usize) -> f64 {
        self.dist[self.dist.len() - 1 - p]
    }

    /// Original indices in factor order.
    pub fn factor_order(&self) -> Vec<usize> {
        self.order.iter().rev().copied().collect()
    }
}

/// Exact greedy maximin ordering starting from point 0. Ties go to the
/// lowest index.
pub fn reverse_maximin(
    n: usize,
    distance: impl Fn(usize, usize) -> f64,
    exact_limit: usize,
) -> Result<MaximinOrdering> {
    if n == 0 {
        return Err(Error::arg("ordering needs at least one point"));
    }
    if n > exact_limit {
        return Err(Error::Size(format!(
            "{n} points exceed the exact ordering limit {exact_limit}; supply an ordering via MaximinOrdering::from_parts"
        )));
    }
    let mut order = Vec::with_capacity(n);
    let mut dist = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut next = 0;
    let mut next_d = f64::INFINITY;
    for _ in 0..n {
        taken[next] = true;
        order.push(next);
        dist.push(next_d);
        let cur = next;
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let d = distance(cur, j);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best_d {
                best_d = min_d[j];
                best = j;
            }
        }
        next = best;
        next_d = best_d;
    }
    Ok(MaximinOrdering { order, dist })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_example() {
        let x = [0.0f64, 1.0, 10.0];
        let o = reverse_maximin(3, |i, j| (x[i] - x[j]).abs(), EXACT_LIMIT).unwrap();
        assert_eq!(o.selection(), &[0, 2, 1]);
        assert_eq!(o.distances(), &[f64::INFINITY, 10.0, 1.0]);
        assert_eq!(o.factor_order(), vec![1, 2, 0]);
        assert_eq!(o.point_at(0), 1);
        assert_eq!(o.length_at(2), f64::INFINITY);
    }

    #[test]
    fn identical_points() {
        let o = reverse_maximin(4, |_, _| 0.0, EXACT_LIMIT).unwrap();
        assert_eq!(o.selection(), &[0, 1, 2, 3]);
        assert_eq!(&o.distances()[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn limit_and_parts() {
        assert!(matches!(reverse_maximin(10, |_, _| 1.0, 5), Err(Error::Size(_))));
        assert!(MaximinOrdering::from_parts(vec![0, 0], vec![1.0, 1.0]).is_err());
        assert!(MaximinOrdering::from_parts(vec![1, 0], vec![f64::INFINITY, 1.0]).is_ok());
    }
}

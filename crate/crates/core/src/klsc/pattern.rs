use rayon::prelude::*;

use super::MaximinOrdering;
use crate::error::{Error, Result};

/// Column supports of the sparse factor, in factor positions.
///
/// Column `i` holds `i` followed, in ascending order, by every later position
/// strictly closer than `rho` times its selection distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    rho: f64,
    offsets: Vec<usize>,
    rows: Vec<usize>,
}

impl SparsityPattern {
    pub fn from_columns(rho: f64, cols: Vec<Vec<usize>>) -> Result<Self> {
        let n = cols.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        offsets.push(0);
        for (i, c) in cols.into_iter().enumerate() {
            if c.first() != Some(&i) || c.windows(2).any(|w| w[0] >= w[1]) || c.last().is_some_and(|&r| r >= n) {
                return Err(Error::arg(format!("column {i} is not self-first ascending within bounds")));
            }
            rows.extend(c);
            offsets.push(rows.len());
        }
        Ok(Self { rho, offsets, rows })
    }

    pub(crate) fn from_raw(rho: f64, offsets: Vec<usize>, rows: Vec<usize>) -> Self {
        Self { rho, offsets, rows }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn column(&self, i: usize) -> &[usize] {
        &self.rows[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub(crate) fn rows(&self) -> &[usize] {
        &self.rows
    }
}

/// Builds the ρ-scaled pattern. `distance` works on original indices.
pub fn build_pattern(
    ordering: &MaximinOrdering,
    distance: impl Fn(usize, usize) -> f64 + Sync,
    rho: f64,
) -> Result<SparsityPattern> {
    if rho.is_nan() || rho < 1.0 {
        return Err(Error::arg(format!("rho must be >= 1, got {rho}")));
    }
    let n = ordering.len();
    let cols: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let radius = rho * ordering.length_at(i);
            let pi = ordering.point_at(i);
            let mut col = vec![i];
            if radius.is_infinite() {
                col.extend(i + 1..n);
            } else {
                col.extend((i + 1..n).filter(|&j| distance(pi, ordering.point_at(j)) < radius));
            }
            col
        })
        .collect();
    SparsityPattern::from_columns(rho, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::klsc::{reverse_maximin, EXACT_LIMIT};

    #[test]
    fn infinite_rho_is_full() {
        let x = [0.0f64, 3.0, 7.0, 20.0];
        let d = |i: usize, j: usize| (x[i] - x[j]).abs();
        let o = reverse_maximin(4, d, EXACT_LIMIT).unwrap();
        let p = build_pattern(&o, d, f64::INFINITY).unwrap();
        for i in 0..4 {
            assert_eq!(p.column(i), (i..4).collect::<Vec<_>>().as_slice());
        }
        assert!(build_pattern(&o, d, 0.9).is_err());
        let p = build_pattern(&o, d, 1.0).unwrap();
        assert!((0..4).all(|i| p.column(i) == [i]));
    }
}

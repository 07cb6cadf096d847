use faer::Mat;
use rayon::prelude::*;

use super::SparseFactor;
use crate::error::{Error, Result};
use crate::linalg::DenseCholesky;

/// Grouped low-rank covariance term `C[g(i), g(j)]`, where `g` maps each
/// observation to one of `m` groups and `C = R Rᵀ` is `m × m`.
#[derive(Debug, Clone)]
pub struct GroupTerm {
    pub group_of: Vec<usize>,
    /// Lower factor `R` of the group covariance, row-major `m × m`.
    pub root: Vec<f64>,
    pub groups: usize,
}

impl GroupTerm {
    /// Term with `C = var · I` (independent per-group shifts).
    pub fn diagonal(group_of: Vec<usize>, groups: usize, var: f64) -> Self {
        let s = var.max(0.0).sqrt();
        let mut root = vec![0.0; groups * groups];
        for g in 0..groups {
            root[g * groups + g] = s;
        }
        Self { group_of, root, groups }
    }

    /// Term with a dense group covariance, factored here.
    pub fn dense(group_of: Vec<usize>, cov: &Mat<f64>) -> Result<Self> {
        let m = cov.nrows();
        let l = DenseCholesky::new(cov)?;
        let lo = l.lower();
        let mut root = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                root[i * m + j] = lo[(i, j)];
            }
        }
        Ok(Self { group_of, root, groups: m })
    }

    fn rank(&self) -> usize {
        self.groups
    }
}

/// `(B + G Gᵀ)⁻¹` where `B⁻¹ ≈ L Lᵀ` comes from a sparse factor and `G`
/// stacks the grouped terms. Applied through the Woodbury identity with a
/// dense `r × r` capacitance matrix.
#[derive(Debug, Clone)]
pub struct LowRankCorrected {
    factor: SparseFactor,
    terms: Vec<GroupTerm>,
    capacitance: Option<CapacitanceFactor>,
}

#[derive(Debug, Clone)]
struct CapacitanceFactor {
    /// Lower Cholesky factor of `I + Gᵀ B⁻¹ G`, column-major.
    lower: Mat<f64>,
}

const ROW_CHUNK: usize = 1024;

impl LowRankCorrected {
    pub fn new(factor: SparseFactor, terms: Vec<GroupTerm>) -> Result<Self> {
        let n = factor.len();
        for t in &terms {
            if t.group_of.len() != n || t.group_of.iter().any(|&g| g >= t.groups) {
                return Err(Error::arg("low-rank term does not match the factor's observations"));
            }
        }
        let mut out = Self {
            factor,
            terms,
            capacitance: None,
        };
        let r = out.rank();
        if r > 0 {
            out.capacitance = Some(out.build_capacitance(r)?);
        }
        Ok(out)
    }

    pub fn factor(&self) -> &SparseFactor {
        &self.factor
    }

    pub fn rank(&self) -> usize {
        self.terms.iter().map(GroupTerm::rank).sum()
    }

    pub fn len(&self) -> usize {
        self.factor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factor.is_empty()
    }

    /// Row `i` of `G` (original observation order).
    fn g_row(&self, i: usize, out: &mut [f64]) {
        let mut off = 0;
        for t in &self.terms {
            let g = t.group_of[i];
            out[off..off + t.groups].copy_from_slice(&t.root[g * t.groups..(g + 1) * t.groups]);
            off += t.groups;
        }
    }

    /// `Gᵀ v` using per-group sums.
    fn gt_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rank());
        for t in &self.terms {
            let mut sums = vec![0.0; t.groups];
            for (i, &g) in t.group_of.iter().enumerate() {
                sums[g] += v[i];
            }
            // (U R)ᵀ v = Rᵀ (Uᵀ v)
            for c in 0..t.groups {
                let mut acc = 0.0;
                for (g, s) in sums.iter().enumerate().skip(c) {
                    acc += t.root[g * t.groups + c] * s;
                }
                out.push(acc);
            }
        }
        out
    }

    /// `G w`.
    fn g_mul(&self, w: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        let mut off = 0;
        for t in &self.terms {
            let rw: Vec<f64> = (0..t.groups)
                .map(|g| (0..=g).map(|c| t.root[g * t.groups + c] * w[off + c]).sum())
                .collect();
            for (i, &g) in t.group_of.iter().enumerate() {
                out[i] += rw[g];
            }
            off += t.groups;
        }
        out
    }

    fn build_capacitance(&self, r: usize) -> Result<CapacitanceFactor> {
        let n = self.len();
        let f = &self.factor;
        let pat = f.pattern();
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(ROW_CHUNK)
            .map(|s| (s, (s + ROW_CHUNK).min(n)))
            .collect();
        // W = Lᵀ G in factor order, accumulated as Σ_chunks W_cᵀ W_c.
        let partials: Vec<Mat<f64>> = chunks
            .par_iter()
            .map(|&(a, b)| {
                let mut w = Mat::<f64>::zeros(b - a, r);
                let mut row = vec![0.0; r];
                for c in a..b {
                    for (&p, &v) in pat.column(c).iter().zip(f.column_values(c)) {
                        self.g_row(f.ordering().point_at(p), &mut row);
                        for (k, x) in row.iter().enumerate() {
                            w[(c - a, k)] += v * x;
                        }
                    }
                }
                w.transpose() * &w
            })
            .collect();
        let mut m = Mat::<f64>::identity(r, r);
        for p in partials {
            m += p;
        }
        let lower = DenseCholesky::new(&m)?.lower().to_owned();
        Ok(CapacitanceFactor { lower })
    }

    fn capacitance_solve(&self, t: &[f64]) -> Vec<f64> {
        let Some(c) = &self.capacitance else {
            return Vec::new();
        };
        let l = &c.lower;
        let r = t.len();
        let mut z = t.to_vec();
        for i in 0..r {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        for i in (0..r).rev() {
            let mut s = z[i];
            for k in i + 1..r {
                s -= l[(k, i)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z
    }

    /// `‖L_M⁻¹ t‖²` with `L_M` the capacitance factor.
    fn capacitance_quad(&self, t: &[f64]) -> f64 {
        let Some(c) = &self.capacitance else {
            return 0.0;
        };
        let l = &c.lower;
        let mut z = t.to_vec();
        let mut acc = 0.0;
        for i in 0..z.len() {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }

    /// `Θ⁻¹ v` in original observation order.
    pub fn precision_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let a = self.factor.precision_apply(v)?;
        if self.capacitance.is_none() {
            return Ok(a);
        }
        let s = self.capacitance_solve(&self.gt_mul(&a));
        let corr = self.factor.precision_apply(&self.g_mul(&s))?;
        Ok(a.iter().zip(corr).map(|(x, y)| x - y).collect())
    }

    /// `kᵀ Θ⁻¹ k`.
    pub fn quad_form(&self, k: &[f64]) -> Result<f64> {
        let base = self.factor.quad_form(k);
        if self.capacitance.is_none() {
            return Ok(base);
        }
        let bk = self.factor.precision_apply(k)?;
        Ok(base - self.capacitance_quad(&self.gt_mul(&bk)))
    }
}

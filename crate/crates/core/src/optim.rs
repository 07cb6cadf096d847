//! Small box-constrained quasi-Newton minimizer for low-dimensional smooth
//! objectives.

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's infinity norm drops below this.
    pub grad_tol: f64,
    /// Stop when the relative objective decrease drops below this.
    pub f_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

fn projected_grad(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if (xi <= lo[i] && gi > 0.0) || (xi >= hi[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box `[lo, hi]`. `f` returns the value and the
/// gradient; non-finite values are treated as infinitely bad during line
/// search.
pub fn minimize_box(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: BfgsOptions,
) -> BfgsReport {
    let n = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lo[i], hi[i]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut fx, mut g) = f(&x);
    let mut h = identity(n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let pg = projected_grad(&x, &g, lo, hi);
        if inf_norm(&pg) < opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let active: Vec<bool> = (0..n).map(|i| pg[i] == 0.0).collect();
        let mut d = direction(&h, &g, &active);
        if dot(&d, &pg) >= 0.0 {
            h = identity(n);
            d = pg.iter().map(|v| -v).collect();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            clamp(&mut xn);
            let step: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, fn_, gn, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            // No descent possible along any scaled step: treat as stationary.
            converged = inf_norm(&pg) < opts.grad_tol.sqrt();
            break;
        };
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let rel = (fx - fn_) / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if rel.abs() < opts.f_tol {
            converged = true;
            break;
        }
    }
    let grad_norm = inf_norm(&projected_grad(&x, &g, lo, hi));
    BfgsReport {
        x,
        f: fx,
        iterations,
        grad_norm,
        converged,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn direction(h: &[Vec<f64>], g: &[f64], active: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if active[i] {
                0.0
            } else {
                -(0..n).filter(|&j| !active[j]).map(|j| h[i][j] * g[j]).sum::<f64>()
            }
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let r = minimize_box(f, &[-1.2, 1.0], &[-5.0; 2], &[5.0; 2], BfgsOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| ((x[0] + 2.0).powi(2) + (x[1] - 1.0).powi(2), vec![2.0 * (x[0] + 2.0), 2.0 * (x[1] - 1.0)]);
        let r = minimize_box(f, &[0.5, 0.5], &[0.0, 0.0], &[3.0, 3.0], BfgsOptions::default());
        assert_eq!(r.x[0], 0.0);
        assert!((r.x[1] - 1.0).abs() < 1e-8);
        assert!(r.converged);
    }
}

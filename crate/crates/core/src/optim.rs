//! Limited-memory BFGS with Armijo backtracking for smooth unconstrained
//! objectives.

use crate::numeric::dot;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `‖∇f‖∞ ≤ grad_tol · max(1, |f|)`.
    pub grad_tol: f64,
    /// Stop when the relative decrease in `f` falls below this.
    pub f_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-10,
            f_tol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimize `f`, where `f(x, g)` returns the value and writes the gradient.
pub fn lbfgs<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for it in 0..opts.max_iter {
        let gn = inf_norm(&g);
        if !fx.is_finite() {
            break;
        }
        if gn <= opts.grad_tol * fx.abs().max(1.0) {
            return LbfgsOutcome {
                x,
                f: fx,
                grad_inf_norm: gn,
                iterations: it,
                converged: true,
            };
        }

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = rho_hist[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / gn.max(1e-300)
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = rho_hist[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Not a descent direction: reset memory, fall back to steepest descent.
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            d = g.iter().map(|v| -v / gn).collect();
            slope = dot(&g, &d);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    if s_hist.len() == opts.memory {
                        s_hist.remove(0);
                        y_hist.remove(0);
                        rho_hist.remove(0);
                    }
                    s_hist.push(s);
                    y_hist.push(y);
                    rho_hist.push(1.0 / sy);
                }
                let decrease = fx - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                if decrease <= opts.f_tol * fx.abs().max(1.0) {
                    return LbfgsOutcome {
                        grad_inf_norm: inf_norm(&g),
                        x,
                        f: fx,
                        iterations: it + 1,
                        converged: true,
                    };
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return LbfgsOutcome {
                grad_inf_norm: inf_norm(&g),
                x,
                f: fx,
                iterations: it + 1,
                converged: false,
            };
        }
    }
    LbfgsOutcome {
        grad_inf_norm: inf_norm(&g),
        x,
        f: fx,
        iterations: opts.max_iter,
        converged: false,
    }
}

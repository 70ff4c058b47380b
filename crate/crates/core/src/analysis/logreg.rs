//! Multinomial logistic regression fitted by L-BFGS.

use std::collections::VecDeque;

pub(crate) struct LogReg {
    classes: usize,
    dim: usize,
    /// `[classes * (dim + 1)]`, bias last in each row.
    params: Vec<f64>,
}

pub(crate) struct FitOptions {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tol: 1e-8,
            max_iter: 500,
            memory: 10,
        }
    }
}

fn logits(params: &[f64], x: &[f64], classes: usize, dim: usize, out: &mut [f64]) {
    for c in 0..classes {
        let row = &params[c * (dim + 1)..(c + 1) * (dim + 1)];
        out[c] = row[dim] + row[..dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// Mean cross entropy plus `l2 / 2 * |W|^2` (biases unpenalized), and its gradient.
fn objective(params: &[f64], xs: &[Vec<f64>], ys: &[usize], classes: usize, dim: usize, l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut z = vec![0.0; classes];
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        logits(params, x, classes, dim, &mut z);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - z[y];
        for c in 0..classes {
            let p = (z[c] - lse).exp() - if c == y { 1.0 } else { 0.0 };
            let g = &mut grad[c * (dim + 1)..(c + 1) * (dim + 1)];
            for d in 0..dim {
                g[d] += p * x[d];
            }
            g[dim] += p;
        }
    }
    let n = xs.len() as f64;
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    for c in 0..classes {
        for d in 0..dim {
            let i = c * (dim + 1) + d;
            loss += 0.5 * l2 * params[i] * params[i];
            grad[i] += l2 * params[i];
        }
    }
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogReg {
    pub fn fit(xs: &[Vec<f64>], ys: &[usize], classes: usize, opts: &FitOptions) -> Self {
        let dim = xs.first().map_or(0, Vec::len);
        let mut w = vec![0.0; classes * (dim + 1)];
        let (mut f, mut g) = objective(&w, xs, ys, classes, dim, opts.l2);
        let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
        for _ in 0..opts.max_iter {
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.tol {
                break;
            }
            // Two-loop recursion for the search direction.
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y, rho) in hist.iter().rev() {
                let a = rho * dot(s, &q);
                q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                alphas.push(a);
            }
            if let Some((s, y, _)) = hist.back() {
                let gamma = dot(s, y) / dot(y, y);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
            for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &q);
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
            }
            let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
            let mut slope = dot(&g, &dir);
            if slope >= 0.0 {
                hist.clear();
                dir = g.iter().map(|v| -v).collect();
                slope = dot(&g, &dir);
            }
            // Backtracking line search with the Armijo condition.
            let mut step = 1.0;
            let (mut w_new, mut f_new, mut g_new);
            loop {
                w_new = w.iter().zip(&dir).map(|(a, d)| a + step * d).collect::<Vec<_>>();
                (f_new, g_new) = objective(&w_new, xs, ys, classes, dim, opts.l2);
                if f_new <= f + 1e-4 * step * slope || step < 1e-12 {
                    break;
                }
                step *= 0.5;
            }
            let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            let converged = (f - f_new).abs() <= opts.tol * f.abs().max(1.0);
            w = w_new;
            f = f_new;
            g = g_new;
            if sy > 1e-12 {
                hist.push_back((s, y, 1.0 / sy));
                if hist.len() > opts.memory {
                    hist.pop_front();
                }
            }
            if converged {
                break;
            }
        }
        Self { classes, dim, params: w }
    }

    /// Highest-scoring class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        logits(&self.params, x, self.classes, self.dim, &mut z);
        let mut best = 0;
        for c in 1..self.classes {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }
}

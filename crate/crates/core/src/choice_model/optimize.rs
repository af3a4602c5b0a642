use nalgebra::{DMatrix, DVector};

pub struct Settings {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Largest allowed step length (Euclidean) per iteration.
    pub max_step: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 500,
            grad_tol: 1e-6,
            rel_tol: 1e-9,
            max_step: 5.0,
        }
    }
}

pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub note: Option<String>,
}

fn max_norm(g: &DVector<f64>) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` (value and gradient) by BFGS with Armijo backtracking.
pub fn bfgs<F>(f: F, x0: &[f64], s: &Settings) -> Outcome
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut note = None;

    for iter in 0..s.max_iter {
        if max_norm(&g) < s.grad_tol {
            return Outcome { x: x.data.into(), value: fx, iterations: iter, converged: true, note };
        }
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let norm = dir.norm();
        if norm > s.max_step {
            dir *= s.max_step / norm;
        }
        let slope = dir.dot(&g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + t * &dir;
            let (fc, gc) = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc, DVector::from_vec(gc)));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            // No descent possible at working precision.
            let converged = max_norm(&g) < 1e-4;
            if !converged {
                note = Some(format!("line search failed with gradient norm {:.3e}", max_norm(&g)));
            }
            return Outcome { x: x.data.into(), value: fx, iterations: iter, converged, note };
        };
        let sk = &x_new - &x;
        let yk = &g_new - &g;
        let rel = (fx - f_new).abs() / fx.abs().max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        if rel < s.rel_tol {
            return Outcome { x: x.data.into(), value: fx, iterations: iter + 1, converged: true, note };
        }
        let sy = sk.dot(&yk);
        if sy > 1e-12 {
            if iter == 0 {
                h = DMatrix::identity(n, n) * (sy / yk.dot(&yk));
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let a = &eye - rho * &sk * yk.transpose();
            let b = &eye - rho * &yk * sk.transpose();
            h = &a * &h * &b + rho * &sk * sk.transpose();
        }
    }
    note = Some(format!("no convergence within {} iterations", s.max_iter));
    Outcome { x: x.data.into(), value: fx, iterations: s.max_iter, converged: false, note }
}

/// Hessian by central differences of an analytic gradient, symmetrized.
pub fn numerical_hessian<G>(grad: G, x: &[f64]) -> DMatrix<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = 1e-5 * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let gp = grad(&xp);
        xp[j] = x[j] - h;
        let gm = grad(&xp);
        xp[j] = x[j];
        for i in 0..n {
            hm[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&hm + hm.transpose()) * 0.5
}

/// Standard errors from the Hessian of the minimized objective. Directions
/// the data cannot identify give an infinite standard error to every
/// parameter loading on them.
pub fn standard_errors(hess: &DMatrix<f64>) -> Vec<f64> {
    let n = hess.nrows();
    if n == 0 {
        return vec![];
    }
    let eig = hess.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = scale * 1e-10;
    let mut var = vec![0.0; n];
    let mut unidentified = vec![false; n];
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        if lambda <= tol {
            for i in 0..n {
                if v[i].abs() > 1e-6 {
                    unidentified[i] = true;
                }
            }
            continue;
        }
        for i in 0..n {
            var[i] += v[i] * v[i] / lambda;
        }
    }
    (0..n)
        .map(|i| if unidentified[i] { f64::INFINITY } else { var[i].sqrt() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let out = bfgs(f, &[-1.2, 1.0], &Settings { rel_tol: 0.0, grad_tol: 1e-9, ..Settings::default() });
        assert!(out.converged, "{:?}", out.note);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_hessian_and_errors() {
        // f = x0^2 + 2 x1^2 + x0 x1, Hessian [[2,1],[1,4]].
        let grad = |x: &[f64]| vec![2.0 * x[0] + x[1], 4.0 * x[1] + x[0]];
        let h = numerical_hessian(grad, &[0.3, -0.2]);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-8 && (h[(0, 1)] - 1.0).abs() < 1e-8 && (h[(1, 1)] - 4.0).abs() < 1e-8);
        let se = standard_errors(&h);
        // inverse is [[4,-1],[-1,2]]/7
        assert!((se[0] - (4.0f64 / 7.0).sqrt()).abs() < 1e-8);
        assert!((se[1] - (2.0f64 / 7.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn flat_direction_gets_infinite_error() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let se = standard_errors(&h);
        assert!((se[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(se[1].is_infinite());
    }
}

use rayon::prelude::*;

use super::{ChoiceData, Observation, PersonData};

/// Log-probability of the chosen alternative under `beta`. When `grad` is
/// given, adds `x_chosen - sum_j P_j x_j` to it.
pub(crate) fn obs_logp(beta: &[f64], obs: &Observation, grad: Option<&mut [f64]>) -> f64 {
    let v: Vec<f64> = obs.rows.iter().map(|x| dot(beta, x)).collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|vj| (vj - m).exp()).collect();
    let s: f64 = e.iter().sum();
    if let Some(g) = grad {
        let chosen = &obs.rows[obs.choice];
        for k in 0..g.len() {
            let mut expected = 0.0;
            for (j, x) in obs.rows.iter().enumerate() {
                expected += e[j] / s * x[k];
            }
            g[k] += chosen[k] - expected;
        }
    }
    v[obs.choice] - m - s.ln()
}

/// Softmax probabilities of the alternatives in `rows`.
pub(crate) fn probabilities(beta: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
    let v: Vec<f64> = rows.iter().map(|x| dot(beta, x)).collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|vj| (vj - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Multinomial logit log-likelihood and its exact gradient over a flat
/// list of observations.
pub fn mnl_loglik_obs(beta: &[f64], observations: &[Observation]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; beta.len()];
    let mut value = 0.0;
    for obs in observations {
        value += obs_logp(beta, obs, Some(&mut grad));
    }
    (value, grad)
}

fn person_mnl(beta: &[f64], p: &PersonData) -> (f64, Vec<f64>) {
    mnl_loglik_obs(beta, &p.observations)
}

/// Per-respondent results computed in parallel, reduced in dataset order.
fn ordered_sum<F>(data: &ChoiceData, dim: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(&PersonData) -> (f64, Vec<f64>) + Sync + Send,
{
    let parts: Vec<(f64, Vec<f64>)> = data.persons.par_iter().map(f).collect();
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for (v, g) in parts {
        value += v;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    (value, grad)
}

/// MNL log-likelihood summed per respondent, then over respondents.
pub fn mnl_loglik_panel(beta: &[f64], data: &ChoiceData) -> (f64, Vec<f64>) {
    ordered_sum(data, beta.len(), |p| person_mnl(beta, p))
}

/// Standard-normal draws for the random coefficients, `[position][draw][dim]`,
/// and the covariate index each dimension perturbs.
#[derive(Debug, Clone)]
pub struct Mixing {
    pub random_index: Vec<usize>,
    pub z: Vec<Vec<Vec<f64>>>,
}

impl Mixing {
    pub fn n_draws(&self) -> usize {
        self.z.first().map_or(0, Vec::len)
    }

    pub(crate) fn beta(&self, theta: &[f64], k: usize, position: usize, r: usize) -> Vec<f64> {
        let mut beta = theta[..k].to_vec();
        for (m, &idx) in self.random_index.iter().enumerate() {
            beta[idx] += theta[k + m] * self.z[position][r][m];
        }
        beta
    }
}

/// Per-draw panel log-probabilities of one respondent's observed choices,
/// with per-draw gradients with respect to the draw's coefficient vector.
fn draw_terms(theta: &[f64], k: usize, mixing: &Mixing, p: &PersonData, want_grad: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let r_count = mixing.n_draws();
    let mut l = Vec::with_capacity(r_count);
    let mut g = Vec::with_capacity(if want_grad { r_count } else { 0 });
    for r in 0..r_count {
        let beta = mixing.beta(theta, k, p.position, r);
        let mut gr = vec![0.0; k];
        let mut lr = 0.0;
        for obs in &p.observations {
            lr += obs_logp(&beta, obs, want_grad.then_some(gr.as_mut_slice()));
        }
        l.push(lr);
        if want_grad {
            g.push(gr);
        }
    }
    (l, g)
}

fn person_sim(theta: &[f64], k: usize, mixing: &Mixing, p: &PersonData) -> (f64, Vec<f64>) {
    let (l, g) = draw_terms(theta, k, mixing, p, true);
    let lse = log_sum_exp(&l);
    let value = lse - (l.len() as f64).ln();
    let mut grad = vec![0.0; theta.len()];
    for (r, (lr, gr)) in l.iter().zip(&g).enumerate() {
        let w = (lr - lse).exp();
        for i in 0..k {
            grad[i] += w * gr[i];
        }
        for (m, &idx) in mixing.random_index.iter().enumerate() {
            grad[k + m] += w * gr[idx] * mixing.z[p.position][r][m];
        }
    }
    (value, grad)
}

/// Simulated panel log-likelihood `sum_n log((1/R) sum_r prod_t P_nt(beta_r))`
/// and its gradient in `theta = (b, w)`.
pub fn simulated_loglik(theta: &[f64], data: &ChoiceData, mixing: &Mixing) -> (f64, Vec<f64>) {
    let k = theta.len() - mixing.random_index.len();
    ordered_sum(data, theta.len(), |p| person_sim(theta, k, mixing, p))
}

/// Normalized posterior weights of the draws given a respondent's observed
/// choices.
pub(crate) fn draw_weights(theta: &[f64], k: usize, mixing: &Mixing, p: &PersonData) -> Vec<f64> {
    let (l, _) = draw_terms(theta, k, mixing, p, false);
    let lse = log_sum_exp(&l);
    l.iter().map(|lr| (lr - lse).exp()).collect()
}

//! Gaussian-emission hidden Markov model: scaled forward-backward,
//! Baum-Welch fitting, BIC state selection and posterior decoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_CANDIDATES: [usize; 5] = [2, 3, 4, 5, 6];
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmModel {
    pub pi: Vec<f64>,
    /// Row-stochastic transition matrix, `trans[i][j] = P(j | i)`.
    pub trans: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

impl HmmModel {
    pub fn num_states(&self) -> usize {
        self.pi.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(Error::invalid("HMM needs at least one state"));
        }
        if self.trans.len() != k || self.means.len() != k || self.vars.len() != k {
            return Err(Error::invalid("HMM parameter sizes disagree"));
        }
        let stochastic = |row: &[f64]| {
            row.iter().all(|&p| (0.0..=1.0).contains(&p))
                && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        };
        if !stochastic(&self.pi) {
            return Err(Error::invalid("initial distribution must sum to 1"));
        }
        if self.trans.iter().any(|r| r.len() != k || !stochastic(r)) {
            return Err(Error::invalid("transition rows must be stochastic"));
        }
        if self.means.iter().any(|m| !m.is_finite())
            || self.vars.iter().any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::invalid(
                "means must be finite and variances positive",
            ));
        }
        Ok(())
    }

    fn log_emissions(&self, x: f64, out: &mut [f64]) {
        for ((o, m), v) in out.iter_mut().zip(&self.means).zip(&self.vars) {
            let d = x - m;
            *o = -0.5 * (LN_2PI + v.ln() + d * d / v);
        }
    }

    /// Gaussian emission densities at every point, each row shifted by its
    /// maximum log-density to avoid underflow. Returns the shifts too.
    fn emissions(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.num_states();
        let mut b = vec![0.0; obs.len() * k];
        let mut shift = vec![0.0; obs.len()];
        for (t, &x) in obs.iter().enumerate() {
            let row = &mut b[t * k..(t + 1) * k];
            self.log_emissions(x, row);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for v in row.iter_mut() {
                *v = (*v - m).exp();
            }
            shift[t] = m;
        }
        (b, shift)
    }
}

struct Pass {
    /// Normalised forward variables, `n * K`.
    alpha: Vec<f64>,
    /// Per-step normalisers.
    scale: Vec<f64>,
    b: Vec<f64>,
    loglik: f64,
}

fn check_obs(obs: &[f64]) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::invalid("empty observation sequence"));
    }
    if obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("observations contain non-finite values"));
    }
    Ok(())
}

fn forward_pass(model: &HmmModel, obs: &[f64]) -> Result<Pass> {
    model.validate()?;
    check_obs(obs)?;
    let k = model.num_states();
    let n = obs.len();
    let (b, shift) = model.emissions(obs);
    let mut alpha = vec![0.0; n * k];
    let mut scale = vec![0.0; n];
    let mut loglik = 0.0;
    for t in 0..n {
        let (prev, cur) = alpha.split_at_mut(t * k);
        let cur = &mut cur[..k];
        for j in 0..k {
            let inflow = if t == 0 {
                model.pi[j]
            } else {
                let p = &prev[(t - 1) * k..];
                (0..k).map(|i| p[i] * model.trans[i][j]).sum()
            };
            cur[j] = inflow * b[t * k + j];
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Numerical(format!(
                "observation {t} has zero probability under the model"
            )));
        }
        cur.iter_mut().for_each(|v| *v /= c);
        scale[t] = c;
        loglik += c.ln() + shift[t];
    }
    Ok(Pass {
        alpha,
        scale,
        b,
        loglik,
    })
}

/// `log p(obs | model)` via the scaled forward recursion.
pub fn hmm_forward_loglik(model: &HmmModel, obs: &[f64]) -> Result<f64> {
    forward_pass(model, obs).map(|p| p.loglik)
}

/// Posterior state probabilities `gamma[t * K + i]` and the log-likelihood.
fn forward_backward(model: &HmmModel, obs: &[f64]) -> Result<(Pass, Vec<f64>)> {
    let pass = forward_pass(model, obs)?;
    let k = model.num_states();
    let n = obs.len();
    let mut beta = vec![1.0; n * k];
    for t in (0..n - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * k);
        let next = &next[..k];
        let bt = &pass.b[(t + 1) * k..(t + 2) * k];
        for i in 0..k {
            let s: f64 = (0..k).map(|j| model.trans[i][j] * bt[j] * next[j]).sum();
            cur[t * k + i] = s / pass.scale[t + 1];
        }
    }
    Ok((pass, beta))
}

/// Per-point posterior state probabilities, `n` rows of length `K`.
pub fn posteriors(model: &HmmModel, obs: &[f64]) -> Result<Vec<Vec<f64>>> {
    let (pass, beta) = forward_backward(model, obs)?;
    let k = model.num_states();
    Ok(pass
        .alpha
        .chunks_exact(k)
        .zip(beta.chunks_exact(k))
        .map(|(a, b)| {
            let row: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
            let z: f64 = row.iter().sum();
            row.into_iter().map(|v| v / z).collect()
        })
        .collect())
}

/// Most probable state at each point (posterior argmax, ties to the lower index).
pub fn decode_states(model: &HmmModel, obs: &[f64]) -> Result<Vec<usize>> {
    Ok(posteriors(model, obs)?
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                    if p > best.1 {
                        (i, p)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect())
}

/// Replace each point by the mean of its most probable state.
pub fn hmm_denoise(obs: &[f64], model: &HmmModel) -> Result<Vec<f64>> {
    Ok(decode_states(model, obs)?
        .into_iter()
        .map(|s| model.means[s])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmFit {
    pub model: HmmModel,
    pub loglik: f64,
    /// Log-likelihood of the model entering each EM iteration.
    pub history: Vec<f64>,
    pub converged: bool,
    /// Input was constant; `model` is a single-state fit.
    pub degenerate: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Quantile-based starting point for EM.
pub fn initial_model(obs: &[f64], k: usize) -> Result<HmmModel> {
    check_obs(obs)?;
    if k == 0 {
        return Err(Error::invalid("HMM needs at least one state"));
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = (obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).max(VAR_FLOOR);
    let off = if k > 1 { 0.1 / (k - 1) as f64 } else { 0.0 };
    let trans = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j {
                        if k > 1 {
                            0.9
                        } else {
                            1.0
                        }
                    } else {
                        off
                    }
                })
                .collect()
        })
        .collect();
    Ok(HmmModel {
        pi: vec![1.0 / k as f64; k],
        trans,
        means: (0..k)
            .map(|i| quantile(&sorted, (i as f64 + 0.5) / k as f64))
            .collect(),
        vars: vec![var; k],
    })
}

fn em_step(model: &HmmModel, obs: &[f64]) -> Result<(HmmModel, f64)> {
    let (pass, beta) = forward_backward(model, obs)?;
    let k = model.num_states();
    let n = obs.len();
    let mut gamma = vec![0.0; n * k];
    for t in 0..n {
        let row = &mut gamma[t * k..(t + 1) * k];
        for i in 0..k {
            row[i] = pass.alpha[t * k + i] * beta[t * k + i];
        }
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    let mut xi = vec![vec![0.0; k]; k];
    for t in 0..n.saturating_sub(1) {
        let a = &pass.alpha[t * k..(t + 1) * k];
        let bn = &pass.b[(t + 1) * k..(t + 2) * k];
        let be = &beta[(t + 1) * k..(t + 2) * k];
        let c = pass.scale[t + 1];
        for i in 0..k {
            for j in 0..k {
                xi[i][j] += a[i] * model.trans[i][j] * bn[j] * be[j] / c;
            }
        }
    }
    let mut occ = vec![0.0; k];
    let mut sx = vec![0.0; k];
    for (t, &x) in obs.iter().enumerate() {
        for i in 0..k {
            let g = gamma[t * k + i];
            occ[i] += g;
            sx[i] += g * x;
        }
    }
    let means: Vec<f64> = (0..k)
        .map(|i| {
            if occ[i] > 0.0 {
                sx[i] / occ[i]
            } else {
                model.means[i]
            }
        })
        .collect();
    let mut sv = vec![0.0; k];
    for (t, &x) in obs.iter().enumerate() {
        for i in 0..k {
            sv[i] += gamma[t * k + i] * (x - means[i]).powi(2);
        }
    }
    let vars = (0..k)
        .map(|i| {
            if occ[i] > 0.0 {
                (sv[i] / occ[i]).max(VAR_FLOOR)
            } else {
                model.vars[i]
            }
        })
        .collect();
    let trans = xi
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                row.iter().map(|v| v / z).collect()
            } else {
                model.trans[i].clone()
            }
        })
        .collect();
    let pi = {
        let g0 = &gamma[..k];
        let z: f64 = g0.iter().sum();
        g0.iter().map(|v| v / z).collect()
    };
    Ok((
        HmmModel {
            pi,
            trans,
            means,
            vars,
        },
        pass.loglik,
    ))
}

/// Baum-Welch EM from the quantile initialisation.
pub fn baum_welch_fit(obs: &[f64], k: usize, max_iter: usize, tol: f64) -> Result<HmmFit> {
    check_obs(obs)?;
    if k == 0 {
        return Err(Error::invalid("HMM needs at least one state"));
    }
    if obs.len() < 10 * k {
        return Err(Error::invalid(format!(
            "{} observations are too few for {k} states (need {})",
            obs.len(),
            10 * k
        )));
    }
    let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        log::warn!("constant observations; returning a single-state fit");
        let model = HmmModel {
            pi: vec![1.0],
            trans: vec![vec![1.0]],
            means: vec![lo],
            vars: vec![VAR_FLOOR],
        };
        let loglik = hmm_forward_loglik(&model, obs)?;
        return Ok(HmmFit {
            model,
            loglik,
            history: vec![loglik],
            converged: true,
            degenerate: true,
        });
    }
    let mut model = initial_model(obs, k)?;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        let (next, ll) = em_step(&model, obs)?;
        let gain = history.last().map(|&prev| ll - prev);
        history.push(ll);
        if gain.is_some_and(|g| g < tol) {
            converged = true;
            break;
        }
        model = next;
    }
    let loglik = if converged {
        *history.last().expect("at least one iteration")
    } else {
        let ll = hmm_forward_loglik(&model, obs)?;
        history.push(ll);
        ll
    };
    Ok(HmmFit {
        model,
        loglik,
        history,
        converged,
        degenerate: false,
    })
}

/// Free parameters of a `K`-state Gaussian HMM.
pub fn num_free_params(k: usize) -> usize {
    (k - 1) + k * (k - 1) + 2 * k
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + num_free_params(k) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicRow {
    pub k: usize,
    pub loglik: f64,
    pub bic: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSelection {
    pub k: usize,
    pub fit: HmmFit,
    pub table: Vec<BicRow>,
}

/// Fit every candidate state count and keep the smallest BIC (ties to the
/// smaller `K`).
pub fn select_num_states(obs: &[f64], candidates: &[usize]) -> Result<StateSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate state counts"));
    }
    let mut ks = candidates.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut table = Vec::new();
    let mut best: Option<(usize, HmmFit, f64)> = None;
    for &k in &ks {
        let fit = baum_welch_fit(obs, k, DEFAULT_MAX_ITER, DEFAULT_TOL)?;
        let b = bic(fit.loglik, k, obs.len());
        table.push(BicRow {
            k,
            loglik: fit.loglik,
            bic: b,
            degenerate: fit.degenerate,
        });
        if fit.degenerate {
            continue;
        }
        if best.as_ref().is_none_or(|(_, _, bb)| b < *bb) {
            best = Some((k, fit, b));
        }
    }
    let (k, fit, _) =
        best.ok_or_else(|| Error::Numerical("every HMM fit was degenerate".into()))?;
    Ok(StateSelection { k, fit, table })
}

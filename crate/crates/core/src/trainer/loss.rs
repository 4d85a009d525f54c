use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA_AMP: f64 = 14.53;
pub const DEFAULT_LAMBDA_EDGE: f64 = 8.95;

/// How first and second differences are combined into the edge signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    /// `|dx| + 0.5 |d2x|`; weights are never below 1.
    #[default]
    Magnitude,
    /// `dx + 0.5 d2x` with signs kept; weights can drop below 1 at falling edges.
    Literal,
}

impl std::str::FromStr for EdgeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(EdgeMode::Magnitude),
            "literal" => Ok(EdgeMode::Literal),
            other => Err(Error::invalid(format!("unknown edge mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_amp: f64,
    pub lambda_edge: f64,
    pub edge_mode: EdgeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_amp: DEFAULT_LAMBDA_AMP,
            lambda_edge: DEFAULT_LAMBDA_EDGE,
            edge_mode: EdgeMode::Magnitude,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_amp >= 0.0 && self.lambda_edge >= 0.0)
            || !self.lambda_amp.is_finite()
            || !self.lambda_edge.is_finite()
        {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn smooth_l1(r: f64) -> f64 {
    if r.abs() < 1.0 {
        0.5 * r * r
    } else {
        r.abs() - 0.5
    }
}

/// Derivative of [`smooth_l1`] with respect to `r`.
pub fn smooth_l1_grad(r: f64) -> f64 {
    if r.abs() < 1.0 {
        r
    } else {
        r.signum()
    }
}

pub fn amp_weight(eps: &[f64], lambda_amp: f64) -> Vec<f64> {
    eps.iter().map(|e| 1.0 + lambda_amp * e.abs()).collect()
}

pub fn edge_weight(x0: &[f64], lambda_edge: f64, mode: EdgeMode) -> Result<Vec<f64>> {
    let n = x0.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "edge weights need >= 3 samples, got {n}"
        )));
    }
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let d1 = if i + 1 < n { x0[i + 1] - x0[i] } else { 0.0 };
            let d2 = if i > 0 && i + 1 < n {
                x0[i + 1] - 2.0 * x0[i] + x0[i - 1]
            } else {
                0.0
            };
            match mode {
                EdgeMode::Magnitude => d1.abs() + 0.5 * d2.abs(),
                EdgeMode::Literal => d1 + 0.5 * d2,
            }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let left = if i > 0 { g[i - 1] } else { 0.0 };
            let right = if i + 1 < n { g[i + 1] } else { 0.0 };
            1.0 + lambda_edge * (left + g[i] + right) / 3.0
        })
        .collect())
}

/// Combined per-sample weights `W_amp * W_edge`.
pub fn loss_weights(eps: &[f64], x0: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    if eps.len() != x0.len() {
        return Err(Error::LengthMismatch {
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let mut w = amp_weight(eps, cfg.lambda_amp);
    if cfg.lambda_edge == 0.0 {
        return Ok(w);
    }
    let we = edge_weight(x0, cfg.lambda_edge, cfg.edge_mode)?;
    for (a, e) in w.iter_mut().zip(we) {
        *a *= e;
    }
    Ok(w)
}

/// Weighted mean Smooth-L1 of `eps - eps_hat`.
pub fn total_loss(eps: &[f64], eps_hat: &[f64], x0: &[f64], cfg: &LossConfig) -> Result<f64> {
    loss_and_grad(eps, eps_hat, x0, cfg).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `eps_hat`.
pub fn loss_and_grad(
    eps: &[f64],
    eps_hat: &[f64],
    x0: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    if eps_hat.len() != eps.len() {
        return Err(Error::LengthMismatch {
            expected: eps.len(),
            got: eps_hat.len(),
        });
    }
    let w = loss_weights(eps, x0, cfg)?;
    let n = eps.len() as f64;
    let mut loss = 0.0;
    let grad = eps
        .iter()
        .zip(eps_hat)
        .zip(&w)
        .map(|((e, h), w)| {
            let r = e - h;
            loss += w * smooth_l1(r);
            -w * smooth_l1_grad(r) / n
        })
        .collect();
    Ok((loss / n, grad))
}

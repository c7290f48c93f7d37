//! The saturating performance-vs-SINR curve
//! `phi(s) = alpha - gamma / (1 + (beta s)^tau)`, its least-squares fit and
//! its inverse.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::db_to_linear;
use crate::error::{Error, Result};

/// Box used while fitting. `alpha` is bounded relative to the data.
pub const GAMMA_MIN: f64 = 1e-3;
pub const BETA_RANGE: (f64, f64) = (1e-4, 1e4);
pub const TAU_RANGE: (f64, f64) = (0.05, 10.0);
pub const ALPHA_HEADROOM: f64 = 50.0;
/// Shape exponents tried as starting points.
pub const TAU_STARTS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];
/// Number of log-spaced `beta` starting points per `tau`.
pub const BETA_STARTS: usize = 5;

const MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbgParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl AbgParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, tau: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            gamma,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "alpha must be finite, got {}",
                self.alpha
            )));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Performance at zero SINR.
    pub fn floor(&self) -> f64 {
        self.alpha - self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    /// Linear SINR.
    pub sinr: f64,
    pub phi: f64,
}

pub fn abg_eval(params: &AbgParams, sinr: f64) -> Result<f64> {
    if !(sinr >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "sinr must be non-negative, got {sinr}"
        )));
    }
    Ok(eval_unchecked(params, sinr))
}

fn eval_unchecked(p: &AbgParams, s: f64) -> f64 {
    p.alpha - p.gamma / (1.0 + (p.beta * s).powf(p.tau))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RequiredSinr {
    /// Linear SINR at which the curve reaches the target.
    pub threshold: f64,
    /// The target is at or below the zero-SINR performance, so any SINR
    /// meets it and the threshold is 0.
    pub below_floor: bool,
}

/// Inverse of [`abg_eval`]: `c = (1/beta) (gamma / (alpha - eta) - 1)^(1/tau)`.
pub fn required_sinr(params: &AbgParams, eta: f64) -> Result<RequiredSinr> {
    params.validate()?;
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "target must be finite, got {eta}"
        )));
    }
    if eta >= params.alpha {
        return Err(Error::InfeasibleTarget {
            eta,
            alpha: params.alpha,
        });
    }
    if eta <= params.floor() {
        return Ok(RequiredSinr {
            threshold: 0.0,
            below_floor: true,
        });
    }
    let ratio = params.gamma / (params.alpha - eta) - 1.0;
    Ok(RequiredSinr {
        threshold: ratio.powf(1.0 / params.tau) / params.beta,
        below_floor: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbgFit {
    pub params: AbgParams,
    pub residual_rms: f64,
    pub n_samples: usize,
}

/// Search box for one data set, in the fitted coordinates
/// `(alpha, ln beta, gamma, tau)`.
#[derive(Debug, Clone, Copy)]
struct FitBox {
    alpha: (f64, f64),
}

impl FitBox {
    fn project(&self, t: &mut [f64; 4]) {
        t[0] = t[0].clamp(self.alpha.0, self.alpha.1);
        t[1] = t[1].clamp(BETA_RANGE.0.ln(), BETA_RANGE.1.ln());
        t[2] = t[2].clamp(GAMMA_MIN, t[0].max(GAMMA_MIN));
        t[3] = t[3].clamp(TAU_RANGE.0, TAU_RANGE.1);
    }
}

fn to_params(t: &[f64; 4]) -> AbgParams {
    AbgParams {
        alpha: t[0],
        beta: t[1].exp(),
        gamma: t[2],
        tau: t[3],
    }
}

fn residuals(t: &[f64; 4], samples: &[FitSample]) -> Vec<f64> {
    let p = to_params(t);
    samples
        .iter()
        .map(|s| eval_unchecked(&p, s.sinr) - s.phi)
        .collect()
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian(t: &[f64; 4], samples: &[FitSample]) -> DMatrix<f64> {
    let p = to_params(t);
    DMatrix::from_fn(samples.len(), 4, |k, col| {
        let s = samples[k].sinr;
        let bs = p.beta * s;
        let u = if bs > 0.0 { bs.powf(p.tau) } else { 0.0 };
        let den = 1.0 + u;
        let dphi_du = p.gamma / (den * den);
        match col {
            0 => 1.0,
            1 => dphi_du * p.tau * u,
            2 => -1.0 / den,
            _ => {
                if bs > 0.0 {
                    dphi_du * u * bs.ln()
                } else {
                    0.0
                }
            }
        }
    })
}

/// Projected Levenberg-Marquardt from one start. Returns the final point and
/// its cost.
fn lm(start: [f64; 4], samples: &[FitSample], bounds: FitBox) -> ([f64; 4], f64) {
    let mut t = start;
    bounds.project(&mut t);
    let mut r = residuals(&t, samples);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERS {
        if c == 0.0 {
            break;
        }
        let j = jacobian(&t, samples);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = [
                t[0] + step[0],
                t[1] + step[1],
                t[2] + step[2],
                t[3] + step[3],
            ];
            bounds.project(&mut cand);
            let rc = residuals(&cand, samples);
            let cc = cost(&rc);
            if cc.is_finite() && cc < c {
                let rel = (c - cc) / c;
                t = cand;
                r = rc;
                c = cc;
                lambda = (lambda / 10.0).max(1e-15);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (t, c)
}

/// Least-squares fit with projected Levenberg-Marquardt from a grid of
/// starts (every `tau` in [`TAU_STARTS`] crossed with log-spaced `beta`).
/// The lowest-cost start wins; ties go to the earliest start.
pub fn abg_fit(samples: &[FitSample]) -> Result<AbgFit> {
    if samples.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 samples, got {}",
            samples.len()
        )));
    }
    for s in samples {
        if !(s.sinr >= 0.0 && s.sinr.is_finite() && s.phi.is_finite()) {
            return Err(Error::Fit(format!("invalid sample {s:?}")));
        }
    }
    let positive: Vec<f64> = samples
        .iter()
        .map(|s| s.sinr)
        .filter(|&s| s > 0.0)
        .collect();
    let s_max = positive.iter().cloned().fold(0.0, f64::max);
    let s_min = positive.iter().cloned().fold(f64::INFINITY, f64::min);
    if positive.is_empty() || s_max / s_min < 10.0 {
        return Err(Error::Fit(
            "samples must span at least one decade of SINR".into(),
        ));
    }
    // canonical order so the result does not depend on input order
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.sinr.total_cmp(&b.sinr).then(a.phi.total_cmp(&b.phi)));
    let samples = sorted.as_slice();
    let phi_max = samples
        .iter()
        .map(|s| s.phi)
        .fold(f64::NEG_INFINITY, f64::max);
    let phi_min = samples.iter().map(|s| s.phi).fold(f64::INFINITY, f64::min);
    let bounds = FitBox {
        alpha: (phi_max, phi_max + ALPHA_HEADROOM),
    };
    let span = phi_max - phi_min;

    let mut starts = Vec::with_capacity(TAU_STARTS.len() * BETA_STARTS);
    for &tau in &TAU_STARTS {
        for b in 0..BETA_STARTS {
            // beta * s spans [0.1, 10] at the geometric centre of the data
            let frac = b as f64 / (BETA_STARTS - 1) as f64;
            let ln_beta = -(s_min * s_max).sqrt().ln() + (10f64).ln() * (2.0 * frac - 1.0);
            let alpha = phi_max + 0.05 * span;
            starts.push([alpha, ln_beta, (alpha - phi_min).max(GAMMA_MIN), tau]);
        }
    }

    let results: Vec<([f64; 4], f64)> =
        starts.par_iter().map(|&s| lm(s, samples, bounds)).collect();
    let mut best: Option<([f64; 4], f64)> = None;
    for (t, c) in results {
        if c.is_finite() && best.is_none_or(|(_, bc)| c < bc) {
            best = Some((t, c));
        }
    }
    let (t, c) = best.ok_or_else(|| Error::Fit("all starts diverged".into()))?;
    let params = to_params(&t);
    params.validate()?;
    Ok(AbgFit {
        params,
        residual_rms: (c / samples.len() as f64).sqrt(),
        n_samples: samples.len(),
    })
}

/// Read `sinr_db,phi` rows (header required) and convert SINR to linear.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<FitSample>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["sinr_db", "phi"] {
        return Err(Error::Parse(format!(
            "expected header `sinr_db,phi`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: `{}`: {e}", line + 1, &rec[i])))
        };
        out.push(FitSample {
            sinr: db_to_linear(field(0)?),
            phi: field(1)?,
        });
    }
    Ok(out)
}

/// On-disk form of fitted parameters. Fit diagnostics and an extra `zeta`
/// coefficient are accepted; `zeta` plays no role in the curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbgParamsFile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Settings that produced the file, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl AbgParamsFile {
    pub fn params(&self) -> Result<AbgParams> {
        AbgParams::new(self.alpha, self.beta, self.gamma, self.tau)
    }

    /// True when the file carried the unused `zeta` coefficient.
    pub fn has_ignored_zeta(&self) -> bool {
        self.zeta.is_some()
    }
}

impl From<&AbgFit> for AbgParamsFile {
    fn from(fit: &AbgFit) -> Self {
        Self {
            alpha: fit.params.alpha,
            beta: fit.params.beta,
            gamma: fit.params.gamma,
            tau: fit.params.tau,
            residual_rms: Some(fit.residual_rms),
            n_samples: Some(fit.n_samples),
            zeta: None,
            config: None,
        }
    }
}

//! Robust information bottleneck loss.
//!
//! For user `i` and a mini-batch of `M` samples with `L` noise draws each:
//!
//! ```text
//! loss_i = 1/M sum_m [ 1/L sum_l -ln q(u_m | y_ml)
//!                      + w_i sum_j H(Y_ij | x_j)
//!                      - w_i sum_j H(Y_ij | s_i) ]
//! ```
//!
//! and the total loss sums over users. Each per-dimension entropy is the
//! differential entropy of a 1-D Gaussian mixture: the equalized symbol
//! `sqrt(p_i) x_ij + sum_k sqrt(p_k) x_kj + n/g` with every unknown sign
//! drawn from its Bernoulli law `P(x = +1) = (1 + a) / 2`. `H(Y|x)` fixes the
//! own symbol and marginalizes the interferers; `H(Y|s)` marginalizes the
//! own symbol as well. Both are integrated with a successive-halving
//! trapezoid rule over `[min mean - 8 sigma, max mean + 8 sigma]`.

use crate::channel::{broadcast_with_noise, equalize, gaussian_noise, ChannelRealization};
use crate::error::{Error, Result};
use crate::nn::Gradients;
use crate::signal::Quantizer;
use crate::trainer::UserModel;
use rand::Rng;

/// Probability floor inside `-ln q`.
pub const PROB_FLOOR: f64 = 1e-12;
/// Absolute tolerance (nats) of each entropy integral.
pub const ENTROPY_TOL: f64 = 1e-6;
/// Half-width of the integration window in units of the component sd.
pub const ENVELOPE_SDS: f64 = 8.0;
const MAX_REFINEMENTS: usize = 16;

/// Per-user weights on the entropy terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RibWeights(Vec<f64>);

impl RibWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if let Some(w) = omega.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "omega must be non-negative, got {w}"
            )));
        }
        Ok(Self(omega))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Per-dimension `P(x_j = +1 | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolDistribution {
    p_plus: Vec<f64>,
}

impl SymbolDistribution {
    pub fn new(p_plus: Vec<f64>) -> Result<Self> {
        if let Some(p) = p_plus.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(Self { p_plus })
    }

    pub fn p_plus(&self) -> &[f64] {
        &self.p_plus
    }

    pub fn len(&self) -> usize {
        self.p_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_plus.is_empty()
    }
}

/// `p_plus = (1 + a) / 2` for encoder features strictly inside `(-1, 1)`.
pub fn bernoulli_from_features(a: &[f64]) -> Result<SymbolDistribution> {
    if let Some(v) = a.iter().find(|v| !(v.abs() < 1.0)) {
        return Err(Error::InvalidInput(format!("feature {v} outside (-1, 1)")));
    }
    SymbolDistribution::new(a.iter().map(|v| 0.5 * (1.0 + v)).collect())
}

/// `-ln probs[label]`, with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy_term(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidInput(
            "probabilities must lie in [0, 1]".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("probabilities sum to {sum}")));
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// Entropy of one Gaussian component, `0.5 ln(2 pi e sigma^2)`.
pub fn gaussian_entropy(var: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln()
}

/// Component means for independent `+-amp_k` symbols on top of `offset`.
/// Component `c` takes sign `+` for symbol `k` when bit `k` of `c` is set.
pub fn pattern_means(offset: f64, amps: &[f64]) -> Vec<f64> {
    (0..1usize << amps.len())
        .map(|c| {
            offset
                + amps
                    .iter()
                    .enumerate()
                    .map(|(k, a)| if c >> k & 1 == 1 { *a } else { -*a })
                    .sum::<f64>()
        })
        .collect()
}

/// Pattern probabilities matching [`pattern_means`].
pub fn pattern_weights(p_plus: &[f64]) -> Vec<f64> {
    (0..1usize << p_plus.len())
        .map(|c| {
            p_plus
                .iter()
                .enumerate()
                .map(|(k, p)| if c >> k & 1 == 1 { *p } else { 1.0 - p })
                .product()
        })
        .collect()
}

/// `d weight_c / d p_k`, indexed `[k][c]`.
fn pattern_weight_grads(p_plus: &[f64]) -> Vec<Vec<f64>> {
    let n = p_plus.len();
    (0..n)
        .map(|k| {
            (0..1usize << n)
                .map(|c| {
                    let rest: f64 = p_plus
                        .iter()
                        .enumerate()
                        .filter(|&(kk, _)| kk != k)
                        .map(|(kk, p)| if c >> kk & 1 == 1 { *p } else { 1.0 - p })
                        .product();
                    if c >> k & 1 == 1 {
                        rest
                    } else {
                        -rest
                    }
                })
                .collect()
        })
        .collect()
}

/// Trapezoid nodes over a fixed window, with every component density
/// tabulated once so entropies for many weight vectors are cheap.
#[derive(Debug, Clone)]
pub struct EntropyQuadrature {
    n_components: usize,
    n_nodes: usize,
    step: f64,
    // densities[c * n_nodes + node]
    densities: Vec<f64>,
    // trapezoid weights times step
    node_weights: Vec<f64>,
}

fn window(means: &[f64], sigma: f64) -> (f64, f64) {
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo - ENVELOPE_SDS * sigma, hi + ENVELOPE_SDS * sigma)
}

fn check_mixture(means: &[f64], sigma: f64) -> Result<()> {
    if means.is_empty() {
        return Err(Error::InvalidInput("mixture has no components".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "component sd {sigma} must be positive"
        )));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidInput("mixture means must be finite".into()));
    }
    Ok(())
}

impl EntropyQuadrature {
    /// Uniform grid with `intervals` trapezoid panels over the window.
    pub fn with_intervals(means: &[f64], sigma: f64, intervals: usize) -> Result<Self> {
        check_mixture(means, sigma)?;
        let intervals = intervals.max(1);
        let (lo, hi) = window(means, sigma);
        let step = (hi - lo) / intervals as f64;
        let n_nodes = intervals + 1;
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let inv_2var = 0.5 / (sigma * sigma);
        let mut densities = Vec::with_capacity(means.len() * n_nodes);
        for &mu in means {
            for t in 0..n_nodes {
                let y = lo + step * t as f64;
                let z = y - mu;
                densities.push(norm * (-z * z * inv_2var).exp());
            }
        }
        let mut node_weights = vec![step; n_nodes];
        node_weights[0] *= 0.5;
        node_weights[n_nodes - 1] *= 0.5;
        Ok(Self {
            n_components: means.len(),
            n_nodes,
            step,
            densities,
            node_weights,
        })
    }

    /// Refine by halving the panel width until two successive estimates of
    /// the entropy under `weights` differ by less than `tol`; the finer grid
    /// is kept.
    pub fn adaptive(means: &[f64], weights: &[f64], sigma: f64, tol: f64) -> Result<Self> {
        check_mixture(means, sigma)?;
        let (lo, hi) = window(means, sigma);
        // start with panels about one sd wide
        let mut intervals = ((hi - lo) / sigma).ceil() as usize;
        let mut q = Self::with_intervals(means, sigma, intervals)?;
        let mut prev = q.entropy(weights)?;
        for _ in 0..MAX_REFINEMENTS {
            intervals *= 2;
            q = Self::with_intervals(means, sigma, intervals)?;
            let cur = q.entropy(weights)?;
            if (cur - prev).abs() < tol {
                return Ok(q);
            }
            prev = cur;
        }
        Err(Error::Integration {
            tol,
            levels: MAX_REFINEMENTS,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.n_components {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                self.n_components
            )));
        }
        Ok(())
    }

    fn mixture_density(&self, weights: &[f64], node: usize) -> f64 {
        weights
            .iter()
            .enumerate()
            .map(|(c, w)| w * self.densities[c * self.n_nodes + node])
            .sum()
    }

    /// `-sum_t w_t f(y_t) ln f(y_t)`.
    pub fn entropy(&self, weights: &[f64]) -> Result<f64> {
        self.check_weights(weights)?;
        let mut h = 0.0;
        for t in 0..self.n_nodes {
            let f = self.mixture_density(weights, t);
            if f > 0.0 {
                h -= self.node_weights[t] * f * f.ln();
            }
        }
        Ok(h)
    }

    /// Entropy and its exact derivative w.r.t. each mixture weight (of the
    /// quadrature sum, so finite differences agree to roundoff).
    pub fn entropy_with_grad(&self, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_weights(weights)?;
        let mut h = 0.0;
        let mut grad = vec![0.0; self.n_components];
        for t in 0..self.n_nodes {
            let f = self.mixture_density(weights, t);
            if f <= 0.0 {
                continue;
            }
            let lf = f.ln();
            let wt = self.node_weights[t];
            h -= wt * f * lf;
            let factor = -wt * (lf + 1.0);
            for (c, g) in grad.iter_mut().enumerate() {
                *g += factor * self.densities[c * self.n_nodes + t];
            }
        }
        Ok((h, grad))
    }
}

/// Differential entropy (nats) of a common-variance Gaussian mixture.
pub fn mixture_entropy(means: &[f64], weights: &[f64], sigma: f64) -> Result<f64> {
    if means.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} means and {} weights",
            means.len(),
            weights.len()
        )));
    }
    EntropyQuadrature::adaptive(means, weights, sigma, ENTROPY_TOL)?.entropy(weights)
}

fn dist_at(dists: &[SymbolDistribution], dim: usize) -> Result<Vec<f64>> {
    dists
        .iter()
        .map(|d| {
            d.p_plus().get(dim).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "dimension {dim} out of range for length {}",
                    d.len()
                ))
            })
        })
        .collect()
}

fn check_powers(powers: &[f64], n: usize, own_power: f64, noise_var_eff: f64) -> Result<()> {
    if powers.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} interferer powers for {n} interferers",
            powers.len()
        )));
    }
    if powers.iter().chain([&own_power]).any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidInput("powers must be non-negative".into()));
    }
    if !(noise_var_eff > 0.0) {
        return Err(Error::InvalidInput(
            "effective noise variance must be positive".into(),
        ));
    }
    Ok(())
}

/// `H(Y_ij | x_j)`: own symbol known, interferers marginalized. The value is
/// independent of the own symbol because it only shifts every component.
pub fn entropy_y_given_x(
    interferer_dists: &[SymbolDistribution],
    interferer_powers: &[f64],
    own_power: f64,
    noise_var_eff: f64,
    dim: usize,
) -> Result<f64> {
    check_powers(
        interferer_powers,
        interferer_dists.len(),
        own_power,
        noise_var_eff,
    )?;
    let p = dist_at(interferer_dists, dim)?;
    let amps: Vec<f64> = interferer_powers.iter().map(|p| p.sqrt()).collect();
    let means = pattern_means(own_power.sqrt(), &amps);
    mixture_entropy(&means, &pattern_weights(&p), noise_var_eff.sqrt())
}

/// `H(Y_ij | s_i)`: own symbol and interferers all marginalized.
pub fn entropy_y_given_s(
    own_dist: &SymbolDistribution,
    interferer_dists: &[SymbolDistribution],
    interferer_powers: &[f64],
    own_power: f64,
    noise_var_eff: f64,
    dim: usize,
) -> Result<f64> {
    check_powers(
        interferer_powers,
        interferer_dists.len(),
        own_power,
        noise_var_eff,
    )?;
    let mut p = dist_at(std::slice::from_ref(own_dist), dim)?;
    p.extend(dist_at(interferer_dists, dim)?);
    let amps: Vec<f64> = std::iter::once(own_power.sqrt())
        .chain(interferer_powers.iter().map(|p| p.sqrt()))
        .collect();
    let means = pattern_means(0.0, &amps);
    mixture_entropy(&means, &pattern_weights(&p), noise_var_eff.sqrt())
}

/// One mini-batch: `inputs[user][m]` and `labels[user][m]`.
#[derive(Debug, Clone)]
pub struct RibBatch<'a> {
    pub inputs: Vec<Vec<&'a [f64]>>,
    pub labels: Vec<Vec<usize>>,
}

impl RibBatch<'_> {
    pub fn len(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pre-drawn channel noise `draws[l][user][m]` (length `d`, variance
/// `sigma_i^2` before equalization). Freezing it makes the loss a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenNoise {
    pub draws: Vec<Vec<Vec<Vec<f64>>>>,
}

impl FrozenNoise {
    pub fn sample<R: Rng + ?Sized>(
        samples: usize,
        batch: usize,
        dim: usize,
        noise_vars: &[f64],
        rng: &mut R,
    ) -> Self {
        let draws = (0..samples)
            .map(|_| {
                noise_vars
                    .iter()
                    .map(|&var| (0..batch).map(|_| gaussian_noise(dim, var, rng)).collect())
                    .collect()
            })
            .collect();
        Self { draws }
    }

    pub fn zeros(samples: usize, users: usize, batch: usize, dim: usize) -> Self {
        Self {
            draws: vec![vec![vec![vec![0.0; dim]; batch]; users]; samples],
        }
    }

    pub fn samples(&self) -> usize {
        self.draws.len()
    }
}

/// Batch means of the three loss terms for one user (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UserTerms {
    pub cross_entropy: f64,
    pub entropy_given_x: f64,
    pub entropy_given_s: f64,
    /// Decoded correctly, out of `batch * L` decodes.
    pub correct: usize,
}

#[derive(Debug, Clone)]
pub struct UserGrads {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

#[derive(Debug, Clone)]
pub struct RibOutput {
    pub loss: f64,
    pub terms: Vec<UserTerms>,
    pub grads: Vec<UserGrads>,
}

impl RibOutput {
    /// Gradients in the order of [`crate::trainer::system_params`].
    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads
            .iter()
            .flat_map(|g| {
                let mut v = g.encoder.flatten();
                v.extend(g.decoder.flatten());
                v
            })
            .collect()
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Evaluate the loss on a mini-batch and backpropagate it into every
/// encoder and decoder.
///
/// Gradients reach the encoders along two routes: through the decoders'
/// cross-entropy (across the quantizer via `quantizer.backward`) and
/// through the Bernoulli parameters of the entropy terms.
pub fn rib_loss(
    models: &[UserModel],
    batch: &RibBatch<'_>,
    weights: &RibWeights,
    realization: &ChannelRealization,
    noise: &FrozenNoise,
    quantizer: Quantizer,
) -> Result<RibOutput> {
    let n = models.len();
    if n == 0 || realization.n_users() != n || weights.values().len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{n} models, {} channel users, {} weights",
            realization.n_users(),
            weights.values().len()
        )));
    }
    if batch.inputs.len() != n || batch.labels.len() != n {
        return Err(Error::ShapeMismatch(
            "batch does not cover every user".into(),
        ));
    }
    let m_size = batch.len();
    if m_size == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if batch
        .inputs
        .iter()
        .zip(&batch.labels)
        .any(|(x, y)| x.len() != m_size || y.len() != m_size)
    {
        return Err(Error::ShapeMismatch(
            "users have different batch sizes".into(),
        ));
    }
    let l_size = noise.samples();
    if l_size == 0 {
        return Err(Error::InvalidInput("need at least one noise sample".into()));
    }
    let d = models[0].encoder.output_dim();
    if models
        .iter()
        .any(|um| um.encoder.output_dim() != d || um.decoder.input_dim() != d)
    {
        return Err(Error::ShapeMismatch(
            "all codecs must share the code dimension".into(),
        ));
    }
    if noise.draws.iter().any(|per_l| {
        per_l.len() != n
            || per_l
                .iter()
                .any(|u| u.len() != m_size || u.iter().any(|v| v.len() != d))
    }) {
        return Err(Error::ShapeMismatch(
            "noise draws do not match batch".into(),
        ));
    }

    let amps: Vec<f64> = realization.powers().iter().map(|p| p.sqrt()).collect();

    // encoders
    let mut enc_caches = Vec::with_capacity(n);
    let mut feats: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    let mut symbols: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n);
    for (k, um) in models.iter().enumerate() {
        let mut caches = Vec::with_capacity(m_size);
        let mut a_k = Vec::with_capacity(m_size);
        let mut x_k = Vec::with_capacity(m_size);
        for input in &batch.inputs[k] {
            let cache = um.encoder.forward(input)?;
            let a = cache.output().to_vec();
            x_k.push(quantizer.forward(&a));
            a_k.push(a);
            caches.push(cache);
        }
        enc_caches.push(caches);
        feats.push(a_k);
        symbols.push(x_k);
    }
    let mut d_symbols = vec![vec![vec![0.0; d]; m_size]; n];
    let mut d_feats = vec![vec![vec![0.0; d]; m_size]; n];

    let mut terms = vec![UserTerms::default(); n];
    let mut dec_grads: Vec<Gradients> = models
        .iter()
        .map(|um| Gradients::zeros_like(&um.decoder))
        .collect();
    let mut loss = 0.0;
    let ce_scale = 1.0 / (m_size * l_size) as f64;

    // cross-entropy through the channel
    for i in 0..n {
        let g = realization.gains()[i];
        let dec = &models[i].decoder;
        for m in 0..m_size {
            let codes: Vec<&[f64]> = (0..n).map(|k| symbols[k][m].as_slice()).collect();
            let label = batch.labels[i][m];
            if label >= dec.output_dim() {
                return Err(Error::InvalidInput(format!("label {label} out of range")));
            }
            for l in 0..l_size {
                let y = broadcast_with_noise(&codes, realization, i, &noise.draws[l][i][m])?;
                let ybar = equalize(&y, g)?;
                let cache = dec.forward(&ybar)?;
                let probs = cache.output();
                let p = probs[label];
                let ce = -p.max(PROB_FLOOR).ln();
                terms[i].cross_entropy += ce * ce_scale;
                if argmax(probs) == label {
                    terms[i].correct += 1;
                }
                let mut up = vec![0.0; probs.len()];
                if p > PROB_FLOOR {
                    up[label] = -ce_scale / p;
                }
                let back = dec.backward(&cache, &up)?;
                dec_grads[i].add_assign(&back.grads);
                // ybar = sum_k sqrt(p_k) x_k + n / g
                for (k, dk) in d_symbols.iter_mut().enumerate() {
                    for (dx, gy) in dk[m].iter_mut().zip(&back.input_grad) {
                        *dx += amps[k] * gy;
                    }
                }
            }
        }
        loss += terms[i].cross_entropy;
    }

    // entropy terms
    let omega = weights.values();
    let h_scale = 1.0 / m_size as f64;
    for i in 0..n {
        if omega[i] == 0.0 {
            continue;
        }
        let sigma = realization.effective_noise_var(i).sqrt();
        let others: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let other_amps: Vec<f64> = others.iter().map(|&k| amps[k]).collect();
        let all_amps: Vec<f64> = std::iter::once(amps[i])
            .chain(other_amps.iter().copied())
            .collect();
        let means_x = pattern_means(amps[i], &other_amps);
        let means_s = pattern_means(0.0, &all_amps);
        let uniform_x = vec![1.0 / means_x.len() as f64; means_x.len()];
        let uniform_s = vec![1.0 / means_s.len() as f64; means_s.len()];
        let qx = EntropyQuadrature::adaptive(&means_x, &uniform_x, sigma, ENTROPY_TOL)?;
        let qs = EntropyQuadrature::adaptive(&means_s, &uniform_s, sigma, ENTROPY_TOL)?;
        let scale = omega[i] * h_scale;
        for m in 0..m_size {
            for j in 0..d {
                let p_of = |k: usize| (0.5 * (1.0 + feats[k][m][j])).clamp(0.0, 1.0);
                let p_others: Vec<f64> = others.iter().map(|&k| p_of(k)).collect();
                let p_all: Vec<f64> = std::iter::once(p_of(i))
                    .chain(p_others.iter().copied())
                    .collect();

                let (hx, dhx) = qx.entropy_with_grad(&pattern_weights(&p_others))?;
                let (hs, dhs) = qs.entropy_with_grad(&pattern_weights(&p_all))?;
                terms[i].entropy_given_x += hx * h_scale;
                terms[i].entropy_given_s += hs * h_scale;
                loss += scale * (hx - hs);

                // dp/da = 1/2
                for (slot, dw) in pattern_weight_grads(&p_others).iter().enumerate() {
                    let dp: f64 = dw.iter().zip(&dhx).map(|(a, b)| a * b).sum();
                    d_feats[others[slot]][m][j] += 0.5 * scale * dp;
                }
                for (slot, dw) in pattern_weight_grads(&p_all).iter().enumerate() {
                    let dp: f64 = dw.iter().zip(&dhs).map(|(a, b)| a * b).sum();
                    let k = if slot == 0 { i } else { others[slot - 1] };
                    d_feats[k][m][j] -= 0.5 * scale * dp;
                }
            }
        }
    }

    // encoders: quantizer backward then dense/tanh backward
    let mut grads = Vec::with_capacity(n);
    for k in 0..n {
        let enc = &models[k].encoder;
        let mut eg = Gradients::zeros_like(enc);
        for m in 0..m_size {
            let through_q = quantizer.backward(&feats[k][m], &d_symbols[k][m]);
            let upstream: Vec<f64> = through_q
                .iter()
                .zip(&d_feats[k][m])
                .map(|(a, b)| a + b)
                .collect();
            eg.add_assign(&enc.backward(&enc_caches[k][m], &upstream)?.grads);
        }
        grads.push(UserGrads {
            encoder: eg,
            decoder: std::mem::replace(&mut dec_grads[k], Gradients { layers: Vec::new() }),
        });
    }

    Ok(RibOutput { loss, terms, grads })
}

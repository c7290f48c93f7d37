//! Real-equivalent multi-user broadcast channel.
//!
//! User `i` receives `y_i = g_i * (sum_k sqrt(p_k) x_k) + n_i` with a block
//! fading magnitude `g_i` held for the whole code and `n_i ~ N(0, sigma_i^2)`
//! per symbol. Equalization divides by the known `g_i`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{ensure_finite, Error, Result};

/// Per-user gains, noise variances and allocated powers for one broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    gains: Vec<f64>,
    noise_vars: Vec<f64>,
    powers: Vec<f64>,
}

impl ChannelRealization {
    pub fn new(gains: Vec<f64>, noise_vars: Vec<f64>, powers: Vec<f64>) -> Result<Self> {
        let n = gains.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "realization needs at least one user".into(),
            ));
        }
        if noise_vars.len() != n || powers.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "realization: {} gains, {} noise variances, {} powers",
                n,
                noise_vars.len(),
                powers.len()
            )));
        }
        if gains.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidInput("channel gains must be positive".into()));
        }
        if noise_vars.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(
                "noise variances must be positive".into(),
            ));
        }
        if powers.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidInput("powers must be non-negative".into()));
        }
        Ok(Self {
            gains,
            noise_vars,
            powers,
        })
    }

    /// Unit gains, a common noise variance and equal powers.
    pub fn uniform(n_users: usize, power: f64, noise_var: f64) -> Result<Self> {
        Self::new(
            vec![1.0; n_users],
            vec![noise_var; n_users],
            vec![power; n_users],
        )
    }

    pub fn n_users(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    /// Noise variance seen after equalization, `sigma_i^2 / |g_i|^2`.
    pub fn effective_noise_var(&self, user: usize) -> f64 {
        self.noise_vars[user] / (self.gains[user] * self.gains[user])
    }

    fn check_user(&self, user: usize) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::InvalidInput(format!(
                "user index {user} out of range for {} users",
                self.n_users()
            )));
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Noise variance that gives `snr_db = 10 log10(power / sigma^2)`.
pub fn noise_var_for_snr(power: f64, snr_db: f64) -> f64 {
    power / db_to_linear(snr_db)
}

/// Draw `n` Rayleigh magnitudes with `E[|g|^2] = 1` from `rng`.
pub fn rayleigh_gains<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // |g|^2 ~ Exp(1); reject the measure-zero exact zero
            loop {
                let e: f64 = Exp1.sample(rng);
                if e > 0.0 {
                    break e.sqrt();
                }
            }
        })
        .collect()
}

/// Seeded Rayleigh draw for `n_users` users.
pub fn sample_rayleigh(n_users: usize, seed: u64) -> Result<Vec<f64>> {
    if n_users == 0 {
        return Err(Error::InvalidInput("n_users must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rayleigh_gains(n_users, &mut rng))
}

fn check_codes<C: AsRef<[f64]>>(codes: &[C], n_users: usize) -> Result<usize> {
    if codes.len() != n_users {
        return Err(Error::ShapeMismatch(format!(
            "{} codes for {} users",
            codes.len(),
            n_users
        )));
    }
    let d = codes[0].as_ref().len();
    if d == 0 {
        return Err(Error::InvalidInput("codes are empty".into()));
    }
    for (k, c) in codes.iter().enumerate() {
        if c.as_ref().len() != d {
            return Err(Error::ShapeMismatch(format!(
                "code {k} has length {} (expected {d})",
                c.as_ref().len()
            )));
        }
    }
    Ok(d)
}

/// Noise-free power-weighted superposition `sum_k sqrt(p_k) x_k`.
pub fn superpose<C: AsRef<[f64]>>(codes: &[C], powers: &[f64]) -> Result<Vec<f64>> {
    let d = check_codes(codes, powers.len())?;
    let mut out = vec![0.0; d];
    for (code, &p) in codes.iter().zip(powers) {
        let amp = p.sqrt();
        for (o, &x) in out.iter_mut().zip(code.as_ref()) {
            *o += amp * x;
        }
    }
    Ok(out)
}

/// Received signal of `user` for a given noise vector (already scaled to
/// variance `sigma_i^2`).
pub fn broadcast_with_noise<C: AsRef<[f64]>>(
    codes: &[C],
    realization: &ChannelRealization,
    user: usize,
    noise: &[f64],
) -> Result<Vec<f64>> {
    realization.check_user(user)?;
    let mut y = superpose(codes, realization.powers())?;
    if noise.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "noise length {} != code length {}",
            noise.len(),
            y.len()
        )));
    }
    let g = realization.gains()[user];
    for (yj, nj) in y.iter_mut().zip(noise) {
        *yj = g * *yj + nj;
    }
    Ok(y)
}

/// Draw `d` real Gaussian noise samples with variance `var`.
pub fn gaussian_noise<R: Rng + ?Sized>(d: usize, var: f64, rng: &mut R) -> Vec<f64> {
    let sd = var.sqrt();
    (0..d)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Received signal of `user` with fresh AWGN from `rng`.
pub fn broadcast<C: AsRef<[f64]>, R: Rng + ?Sized>(
    codes: &[C],
    realization: &ChannelRealization,
    user: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    realization.check_user(user)?;
    let d = check_codes(codes, realization.n_users())?;
    let noise = gaussian_noise(d, realization.noise_vars()[user], rng);
    broadcast_with_noise(codes, realization, user, &noise)
}

/// Undo the known fading magnitude.
pub fn equalize(y: &[f64], gain: f64) -> Result<Vec<f64>> {
    if !(gain > 0.0) || !gain.is_finite() {
        return Err(Error::DegenerateChannel(gain));
    }
    ensure_finite(y, "received signal")?;
    Ok(y.iter().map(|v| v / gain).collect())
}

/// `p_i |g_i|^2 / (sum_{j != i} p_j |g_i|^2 + sigma_i^2)`.
pub fn sinr(realization: &ChannelRealization, user: usize) -> Result<f64> {
    realization.check_user(user)?;
    let g2 = realization.gains[user].powi(2);
    let own = realization.powers[user] * g2;
    let interference: f64 = realization
        .powers
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != user)
        .map(|(_, &p)| p * g2)
        .sum();
    Ok(own / (interference + realization.noise_vars[user]))
}

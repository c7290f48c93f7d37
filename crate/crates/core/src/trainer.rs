//! Joint training of all users' codecs and the evaluation metrics.
//!
//! Every step draws one mini-batch per user, pairs the `m`-th samples of all
//! users into one broadcast, and takes one Adam step on every encoder and
//! decoder with the summed loss. Training uses unit gains and
//! `sigma^2 = p / 10^(snr/10)`; fading is only applied at evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    broadcast_with_noise, equalize, gaussian_noise, noise_var_for_snr, rayleigh_gains,
    ChannelRealization,
};
use crate::dataset::{Dataset, DatasetSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::nn::{adam_step, Activation, AdamState, Checkpoint, Mlp};
use crate::rib::{rib_loss, FrozenNoise, RibBatch, RibWeights};
use crate::signal::{binarize, Quantizer};

pub const MAX_USERS: usize = 4;

/// Transmit power of every user during training.
pub const TRAIN_POWER: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub n_users: usize,
    /// Code length `d` (number of BPSK symbols per user).
    pub code_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Noise draws `L` per sample.
    pub mc_samples: usize,
    /// Entropy weight per user.
    pub omega: Vec<f64>,
    pub learning_rate: f64,
    pub train_snr_db: f64,
    /// Hidden widths of the decoder's ReLU layers.
    pub decoder_hidden: Vec<usize>,
    pub dataset: DatasetSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_users: 2,
            code_dim: 16,
            epochs: 200,
            batch_size: 64,
            mc_samples: 2,
            omega: vec![0.05; 2],
            learning_rate: 1e-3,
            train_snr_db: 0.0,
            decoder_hidden: vec![32, 32],
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes: 4,
                input_dim: 8,
                per_class: 64,
                spread: 0.5,
                separation: 2.0,
            }),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_users", self.n_users),
            ("code_dim", self.code_dim),
            ("batch_size", self.batch_size),
            ("mc_samples", self.mc_samples),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("{name} must be positive")));
        }
        if self.n_users > MAX_USERS {
            return Err(Error::InvalidInput(format!(
                "at most {MAX_USERS} users are supported (got {})",
                self.n_users
            )));
        }
        if self.omega.len() != self.n_users {
            return Err(Error::InvalidInput(format!(
                "omega has {} entries for {} users",
                self.omega.len(),
                self.n_users
            )));
        }
        RibWeights::new(self.omega.clone())?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !self.train_snr_db.is_finite() {
            return Err(Error::InvalidInput("train_snr_db must be finite".into()));
        }
        if self.decoder_hidden.contains(&0) {
            return Err(Error::InvalidInput(
                "decoder hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Training datasets, one per user, each with its own seed.
    pub fn train_datasets(&self) -> Result<Vec<Dataset>> {
        (0..self.n_users)
            .map(|i| self.dataset.build(self.seed.wrapping_add(1000 + i as u64)))
            .collect()
    }

    /// Held-out datasets drawn with seeds disjoint from training.
    pub fn test_datasets(&self, per_class: Option<usize>) -> Result<Vec<Dataset>> {
        (0..self.n_users)
            .map(|i| self.test_dataset(per_class, 2000 + i as u64))
            .collect()
    }

    /// One held-out dataset; `stream` selects an independent draw.
    pub fn test_dataset(&self, per_class: Option<usize>, stream: u64) -> Result<Dataset> {
        let spec = match (&self.dataset, per_class) {
            (DatasetSpec::Synthetic(s), Some(pc)) => DatasetSpec::Synthetic(SyntheticSpec {
                per_class: pc,
                ..s.clone()
            }),
            (spec, _) => spec.clone(),
        };
        spec.build(self.seed.wrapping_add(stream))
    }
}

/// Encoder (dense + tanh, then sign) and decoder (dense/ReLU stack + softmax)
/// of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl UserModel {
    pub fn new<R: rand::Rng + ?Sized>(
        input_dim: usize,
        code_dim: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = Mlp::new(&[input_dim, code_dim], &[Activation::Tanh], rng)?;
        let mut dims = vec![code_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Softmax);
        let decoder = Mlp::new(&dims, &acts, rng)?;
        Ok(Self { encoder, decoder })
    }

    /// Binarized code of one input.
    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(binarize(&self.encoder.predict(input)?)?.into_inner())
    }

    pub fn decode(&self, received: &[f64]) -> Result<usize> {
        Ok(crate::rib::argmax(&self.decoder.predict(received)?))
    }

    pub fn classes(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn code_dim(&self) -> usize {
        self.encoder.output_dim()
    }
}

/// All encoder and decoder parameters, user by user (encoder first).
pub fn system_params(models: &[UserModel]) -> Vec<f64> {
    models
        .iter()
        .flat_map(|m| {
            let mut p = m.encoder.flat_params();
            p.extend(m.decoder.flat_params());
            p
        })
        .collect()
}

/// Inverse of [`system_params`].
pub fn set_system_params(models: &mut [UserModel], params: &[f64]) -> Result<()> {
    let total: usize = models
        .iter()
        .map(|m| m.encoder.param_count() + m.decoder.param_count())
        .sum();
    if params.len() != total {
        return Err(Error::ShapeMismatch(format!(
            "{} parameters for a system of {total}",
            params.len()
        )));
    }
    let mut at = 0;
    for m in models {
        let (ne, nd) = (m.encoder.param_count(), m.decoder.param_count());
        m.encoder.set_flat_params(&params[at..at + ne])?;
        m.decoder.set_flat_params(&params[at + ne..at + ne + nd])?;
        at += ne + nd;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    /// Per-user training accuracy over the epoch's noisy decodes.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSystem {
    pub config: TrainConfig,
    pub models: Vec<UserModel>,
    pub history: Vec<EpochRecord>,
}

fn dump_models(models: &[UserModel]) -> Option<String> {
    let cks: Vec<[Checkpoint; 2]> = models
        .iter()
        .map(|m| [m.encoder.to_checkpoint(None), m.decoder.to_checkpoint(None)])
        .collect();
    serde_json::to_string(&cks).ok()
}

/// Initialize the codecs exactly as [`train`] does.
pub fn init_models(
    config: &TrainConfig,
    datasets: &[Dataset],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UserModel>> {
    datasets
        .iter()
        .map(|ds| {
            UserModel::new(
                ds.input_dim(),
                config.code_dim,
                &config.decoder_hidden,
                ds.classes(),
                rng,
            )
        })
        .collect()
}

/// Run the training loop. An epoch is one pass over the shortest user
/// dataset in shuffled mini-batches.
pub fn train(config: &TrainConfig, datasets: &[Dataset]) -> Result<TrainedSystem> {
    config.validate()?;
    if datasets.len() != config.n_users {
        return Err(Error::InvalidInput(format!(
            "{} datasets for {} users",
            datasets.len(),
            config.n_users
        )));
    }
    let n = config.n_users;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut models = init_models(config, datasets, &mut rng)?;
    let mut enc_state: Vec<AdamState> = models.iter().map(|m| AdamState::new(&m.encoder)).collect();
    let mut dec_state: Vec<AdamState> = models.iter().map(|m| AdamState::new(&m.decoder)).collect();
    let weights = RibWeights::new(config.omega.clone())?;
    let noise_var = noise_var_for_snr(TRAIN_POWER, config.train_snr_db);
    let realization = ChannelRealization::uniform(n, TRAIN_POWER, noise_var)?;

    let shortest = datasets.iter().map(Dataset::len).min().unwrap_or(0);
    let m_size = config.batch_size.min(shortest);
    let steps = (shortest / m_size).max(1);
    let mut orders: Vec<Vec<usize>> = datasets.iter().map(|ds| (0..ds.len()).collect()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        for order in &mut orders {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = vec![0usize; n];
        for step in 0..steps {
            let span = step * m_size..(step + 1) * m_size;
            let batch = RibBatch {
                inputs: (0..n)
                    .map(|k| {
                        orders[k][span.clone()]
                            .iter()
                            .map(|&s| datasets[k].inputs()[s].as_slice())
                            .collect()
                    })
                    .collect(),
                labels: (0..n)
                    .map(|k| {
                        orders[k][span.clone()]
                            .iter()
                            .map(|&s| datasets[k].labels()[s])
                            .collect()
                    })
                    .collect(),
            };
            let noise = FrozenNoise::sample(
                config.mc_samples,
                m_size,
                config.code_dim,
                realization.noise_vars(),
                &mut rng,
            );
            let out = rib_loss(
                &models,
                &batch,
                &weights,
                &realization,
                &noise,
                Quantizer::Hard,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss is {} at step {step}", out.loss),
                    dump: dump_models(&models),
                });
            }
            loss_sum += out.loss;
            for (c, t) in correct.iter_mut().zip(&out.terms) {
                *c += t.correct;
            }
            for (k, g) in out.grads.iter().enumerate() {
                let res = adam_step(
                    &mut models[k].encoder,
                    &g.encoder,
                    &mut enc_state[k],
                    config.learning_rate,
                )
                .and_then(|_| {
                    adam_step(
                        &mut models[k].decoder,
                        &g.decoder,
                        &mut dec_state[k],
                        config.learning_rate,
                    )
                });
                if let Err(e) = res {
                    return Err(match e {
                        Error::Diverged { detail, .. } => Error::Diverged {
                            epoch,
                            detail: format!("user {k}: {detail}"),
                            dump: dump_models(&models),
                        },
                        other => other,
                    });
                }
            }
        }
        let decodes = (steps * m_size * config.mc_samples) as f64;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / steps as f64,
            accuracy: correct.iter().map(|&c| c as f64 / decodes).collect(),
        });
    }

    Ok(TrainedSystem {
        config: config.clone(),
        models,
        history,
    })
}

/// On-disk form of a trained system: the resolved config plus one encoder
/// and decoder checkpoint per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCheckpoint {
    pub config: TrainConfig,
    pub users: Vec<[Checkpoint; 2]>,
}

impl TrainedSystem {
    pub fn to_checkpoint(&self) -> SystemCheckpoint {
        SystemCheckpoint {
            config: self.config.clone(),
            users: self
                .models
                .iter()
                .map(|m| [m.encoder.to_checkpoint(None), m.decoder.to_checkpoint(None)])
                .collect(),
        }
    }
}

impl SystemCheckpoint {
    pub fn models(&self) -> Result<Vec<UserModel>> {
        self.users
            .iter()
            .map(|[e, d]| {
                Ok(UserModel {
                    encoder: Mlp::from_checkpoint(e)?,
                    decoder: Mlp::from_checkpoint(d)?,
                })
            })
            .collect()
    }
}

/// History as `epoch,loss,acc_user_0,...` after a config comment line.
pub fn write_history_csv<W: std::io::Write>(
    mut w: W,
    history: &[EpochRecord],
    config: &TrainConfig,
) -> Result<()> {
    w.write_all(crate::harness::config_comment(config)?.as_bytes())?;
    let mut header = String::from("epoch,loss");
    for i in 0..config.n_users {
        header.push_str(&format!(",acc_user_{i}"));
    }
    writeln!(w, "{header}")?;
    for r in history {
        let mut line = format!("{},{}", r.epoch, r.loss);
        for a in &r.accuracy {
            line.push_str(&format!(",{a}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Which channel impairments an evaluation applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalChannel {
    pub fading: bool,
    pub interference: bool,
    pub noise: bool,
}

impl EvalChannel {
    /// Rayleigh block fading, all users superposed, AWGN.
    pub const RAYLEIGH: Self = Self {
        fading: true,
        interference: true,
        noise: true,
    };
    /// Unit gain, all users superposed, AWGN.
    pub const AWGN: Self = Self {
        fading: false,
        interference: true,
        noise: true,
    };
    /// No fading, no other users, no noise.
    pub const UPPER_BOUND: Self = Self {
        fading: false,
        interference: false,
        noise: false,
    };
}

/// Monte-Carlo accuracy with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    pub accuracy: f64,
    pub stderr: f64,
    pub decodes: usize,
}

impl AccuracyEstimate {
    fn from_counts(correct: usize, total: usize) -> Self {
        let p = correct as f64 / total as f64;
        Self {
            accuracy: p,
            stderr: (p * (1.0 - p) / total as f64).sqrt(),
            decodes: total,
        }
    }
}

/// Seed of trial `t` derived from the base seed.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base ^ trial as u64
}

fn encode_all(models: &[UserModel], datasets: &[&Dataset]) -> Result<Vec<Vec<Vec<f64>>>> {
    models
        .iter()
        .zip(datasets)
        .map(|(m, ds)| ds.inputs().par_iter().map(|x| m.encode(x)).collect())
        .collect()
}

fn check_models(models: &[UserModel]) -> Result<usize> {
    let d = models
        .first()
        .ok_or_else(|| Error::InvalidInput("no models".into()))?
        .code_dim();
    if models
        .iter()
        .any(|m| m.code_dim() != d || m.decoder.input_dim() != d)
    {
        return Err(Error::ShapeMismatch(
            "models disagree on the code dimension".into(),
        ));
    }
    Ok(d)
}

/// Accuracy of every user's decoder on its own dataset.
///
/// Sample `m` of every user is broadcast together (datasets shorter than the
/// longest wrap around). Each trial redraws fading and noise; trial `t` uses
/// the seed [`trial_seed`]`(seed, t)`.
pub fn evaluate_accuracy(
    models: &[UserModel],
    datasets: &[Dataset],
    channel: EvalChannel,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<AccuracyEstimate>> {
    let refs: Vec<&Dataset> = datasets.iter().collect();
    evaluate_refs(models, &refs, channel, snr_db, trials, seed)
}

fn evaluate_refs(
    models: &[UserModel],
    datasets: &[&Dataset],
    channel: EvalChannel,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<AccuracyEstimate>> {
    let n = models.len();
    let d = check_models(models)?;
    if datasets.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} datasets for {n} users",
            datasets.len()
        )));
    }
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    let codes = encode_all(models, datasets)?;
    let samples = datasets.iter().map(|ds| ds.len()).max().unwrap();
    let noise_var = noise_var_for_snr(TRAIN_POWER, snr_db);

    let per_trial: Vec<Result<Vec<usize>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
            let mut correct = vec![0usize; n];
            for m in 0..samples {
                let gains = if channel.fading {
                    rayleigh_gains(n, &mut rng)
                } else {
                    vec![1.0; n]
                };
                let frame: Vec<&[f64]> = (0..n)
                    .map(|k| codes[k][m % codes[k].len()].as_slice())
                    .collect();
                for i in 0..n {
                    let powers: Vec<f64> = (0..n)
                        .map(|k| {
                            if k == i || channel.interference {
                                TRAIN_POWER
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let real = ChannelRealization::new(gains.clone(), vec![noise_var; n], powers)?;
                    let noise = if channel.noise {
                        gaussian_noise(d, noise_var, &mut rng)
                    } else {
                        vec![0.0; d]
                    };
                    let y = broadcast_with_noise(&frame, &real, i, &noise)?;
                    let ybar = equalize(&y, gains[i])?;
                    let label = datasets[i].labels()[m % datasets[i].len()];
                    if models[i].decode(&ybar)? == label {
                        correct[i] += 1;
                    }
                }
            }
            Ok(correct)
        })
        .collect();

    let mut totals = vec![0usize; n];
    for r in per_trial {
        for (t, c) in totals.iter_mut().zip(r?) {
            *t += c;
        }
    }
    Ok(totals
        .into_iter()
        .map(|c| AccuracyEstimate::from_counts(c, samples * trials))
        .collect())
}

/// Cosine similarity and angle between two users' codes on shared inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairOrthogonality {
    pub user_a: usize,
    pub user_b: usize,
    /// Mean over probes of the normalized inner product.
    pub cosine: f64,
    /// `acos(cosine)` in degrees.
    pub angle_deg: f64,
}

pub fn orthogonality_report(
    models: &[UserModel],
    probes: &Dataset,
) -> Result<Vec<PairOrthogonality>> {
    check_models(models)?;
    if models.len() < 2 {
        return Err(Error::InvalidInput(
            "orthogonality needs at least two users".into(),
        ));
    }
    let refs = vec![probes; models.len()];
    let codes = encode_all(models, &refs)?;
    let mut out = Vec::new();
    for a in 0..models.len() {
        for b in a + 1..models.len() {
            let cosine = codes[a]
                .iter()
                .zip(&codes[b])
                .map(|(x, y)| cosine(x, y))
                .sum::<f64>()
                / probes.len() as f64;
            out.push(PairOrthogonality {
                user_a: a,
                user_b: b,
                cosine,
                angle_deg: angle_deg(cosine),
            });
        }
    }
    Ok(out)
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sx: f64 = x.iter().map(|v| v * v).sum();
    let sy: f64 = y.iter().map(|v| v * v).sum();
    dot / (sx * sy).sqrt()
}

pub fn angle_deg(cosine: f64) -> f64 {
    cosine.clamp(-1.0, 1.0).acos().to_degrees()
}

/// `matrix[i][j]`: accuracy of decoder `i` on user `j`'s signal when every
/// user encodes the same inputs.
///
/// The diagonal is ordinary own-user decoding of the superposed broadcast
/// (unit gain, AWGN at `snr_db`). Off-diagonal entries feed decoder `i`
/// with user `j`'s code alone plus AWGN, which is how much of user `j`'s
/// message leaks to receiver `i`.
pub fn cross_decoding_report(
    models: &[UserModel],
    dataset: &Dataset,
    snr_db: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let n = models.len();
    let d = check_models(models)?;
    let refs = vec![dataset; n];
    let diag = evaluate_refs(models, &refs, EvalChannel::AWGN, snr_db, trials, seed)?;
    let codes = encode_all(models, &refs)?;
    let noise_var = noise_var_for_snr(TRAIN_POWER, snr_db);
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        matrix[i][i] = diag[i].accuracy;
        for j in (0..n).filter(|&j| j != i) {
            let correct: usize = (0..trials)
                .into_par_iter()
                .map(|t| -> Result<usize> {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(trial_seed(seed, t) ^ ((i * n + j) as u64) << 32);
                    let mut c = 0;
                    for (m, code) in codes[j].iter().enumerate() {
                        let noise = gaussian_noise(d, noise_var, &mut rng);
                        let y: Vec<f64> = code
                            .iter()
                            .zip(&noise)
                            .map(|(x, e)| TRAIN_POWER.sqrt() * x + e)
                            .collect();
                        if models[i].decode(&y)? == dataset.labels()[m] {
                            c += 1;
                        }
                    }
                    Ok(c)
                })
                .collect::<Result<Vec<usize>>>()?
                .into_iter()
                .sum();
            matrix[i][j] = correct as f64 / (trials * dataset.len()) as f64;
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            code_dim: 8,
            decoder_hidden: vec![8, 8],
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes: 3,
                input_dim: 4,
                per_class: 16,
                spread: 0.3,
                separation: 2.0,
            }),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                n_users: 5,
                omega: vec![0.1; 5],
                ..TrainConfig::default()
            },
            TrainConfig {
                n_users: 0,
                omega: vec![],
                ..TrainConfig::default()
            },
            TrainConfig {
                omega: vec![0.1],
                ..TrainConfig::default()
            },
            TrainConfig {
                omega: vec![0.1, -1.0],
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_size: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_epochs_returns_initial_models() {
        let cfg = TrainConfig {
            epochs: 0,
            ..tiny_config()
        };
        let data = cfg.train_datasets().unwrap();
        let sys = train(&cfg, &data).unwrap();
        assert!(sys.history.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        assert_eq!(sys.models, init_models(&cfg, &data, &mut rng).unwrap());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = tiny_config();
        let data = cfg.train_datasets().unwrap();
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.history.len(), 3);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
        }
        for (x, y) in a.models.iter().zip(&b.models) {
            let (px, py) = (x.encoder.flat_params(), y.encoder.flat_params());
            assert!(px.iter().zip(&py).all(|(u, v)| u.to_bits() == v.to_bits()));
            assert_eq!(x.decoder, y.decoder);
        }
    }

    #[test]
    fn checkpoint_and_history_round_trip() {
        let cfg = tiny_config();
        let data = cfg.train_datasets().unwrap();
        let sys = train(&cfg, &data).unwrap();
        let json = serde_json::to_string(&sys.to_checkpoint()).unwrap();
        let back: SystemCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.config, cfg);
        assert_eq!(back.models().unwrap(), sys.models);

        let mut out = Vec::new();
        write_history_csv(&mut out, &sys.history, &cfg).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: {"));
        assert_eq!(lines[1], "epoch,loss,acc_user_0,acc_user_1");
        assert_eq!(lines.len(), 2 + cfg.epochs);
    }

    #[test]
    fn train_rejects_wrong_dataset_count() {
        let cfg = tiny_config();
        let data = cfg.train_datasets().unwrap();
        assert!(train(&cfg, &data[..1]).is_err());
    }

    #[test]
    fn orthogonality_of_identical_and_opposite_codes() {
        assert_eq!(cosine(&[1.0, -1.0], &[1.0, -1.0]), 1.0);
        assert_eq!(angle_deg(1.0), 0.0);
        assert_eq!(cosine(&[1.0, -1.0], &[-1.0, 1.0]), -1.0);
        assert_eq!(angle_deg(-1.0), 180.0);

        let cfg = tiny_config();
        let data = cfg.train_datasets().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let models = init_models(&cfg, &data, &mut rng).unwrap();
        let same = vec![models[0].clone(), models[0].clone()];
        let rep = orthogonality_report(&same, &data[0]).unwrap();
        assert_eq!(rep[0].cosine, 1.0);
        assert_eq!(rep[0].angle_deg, 0.0);
        assert!(orthogonality_report(&models[..1], &data[0]).is_err());
    }

    #[test]
    fn opposite_encoder_gives_angle_180() {
        let cfg = tiny_config();
        let data = cfg.train_datasets().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let models = init_models(&cfg, &data, &mut rng).unwrap();
        let mut neg = models[0].clone();
        let flipped: Vec<f64> = neg.encoder.flat_params().iter().map(|v| -v).collect();
        neg.encoder.set_flat_params(&flipped).unwrap();
        // zero pre-activations would map to +1 under both; data is continuous
        let rep = orthogonality_report(&[models[0].clone(), neg], &data[0]).unwrap();
        assert_eq!(rep[0].cosine, -1.0);
        assert_eq!(rep[0].angle_deg, 180.0);
    }

    #[test]
    fn untrained_decoders_are_near_chance() {
        let cfg = TrainConfig {
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes: 4,
                input_dim: 4,
                per_class: 250,
                spread: 0.5,
                separation: 2.0,
            }),
            ..tiny_config()
        };
        let data = cfg.test_datasets(None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut models = init_models(&cfg, &data, &mut rng).unwrap();
        // random decoder: a constant-output network predicts one class,
        // which is exactly chance on balanced data
        for m in &mut models {
            let zeros = vec![0.0; m.decoder.param_count()];
            m.decoder.set_flat_params(&zeros).unwrap();
        }
        let acc = evaluate_accuracy(&models, &data, EvalChannel::RAYLEIGH, 0.0, 2, 9).unwrap();
        for a in acc {
            let sd = (0.25f64 * 0.75 / a.decodes as f64).sqrt();
            assert!((a.accuracy - 0.25).abs() <= 3.0 * sd, "{a:?}");
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_single_user_consistent() {
        let cfg = TrainConfig {
            n_users: 1,
            omega: vec![0.05],
            ..tiny_config()
        };
        let data = cfg.train_datasets().unwrap();
        let sys = train(&cfg, &data).unwrap();
        let a = evaluate_accuracy(&sys.models, &data, EvalChannel::RAYLEIGH, 5.0, 3, 4).unwrap();
        let b = evaluate_accuracy(&sys.models, &data, EvalChannel::RAYLEIGH, 5.0, 3, 4).unwrap();
        assert_eq!(a, b);
        let m = cross_decoding_report(&sys.models, &data[0], 5.0, 3, 4).unwrap();
        let e = evaluate_accuracy(&sys.models, &data, EvalChannel::AWGN, 5.0, 3, 4).unwrap();
        assert_eq!(m, vec![vec![e[0].accuracy]]);
        assert!(evaluate_accuracy(&sys.models, &data, EvalChannel::AWGN, 5.0, 0, 4).is_err());
    }
}

//! Experiment orchestration: SNR sweeps, the end-to-end allocate-and-decode
//! workflow and CDF comparisons of power-allocation policies.
//!
//! Every output written here starts with a `# config: {...}` line holding
//! the fully resolved configuration, so artifacts describe themselves.

use std::io::Write;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abg::{abg_eval, required_sinr, AbgParams};
use crate::channel::{broadcast, equalize, rayleigh_gains, sinr, ChannelRealization};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::power::{build_problem, simplex_solve, PowerProblem};
use crate::trainer::{
    evaluate_accuracy, trial_seed, AccuracyEstimate, EvalChannel, TrainConfig, UserModel,
};

/// Relative slack when comparing an achieved value with its target.
/// Allocations put active constraints exactly on the target, so a bare
/// `>=` would fail on rounding.
pub const TARGET_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Sweep,
    Cdf,
    Workflow,
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Channel draws for `cdf` and `workflow`.
    pub draws: usize,
    /// Monte-Carlo passes over the test set per sweep point.
    pub trials: usize,
    /// Test samples per class for synthetic data.
    pub test_per_class: usize,
    pub snr_grid_db: Vec<f64>,
    /// Performance target per user.
    pub eta: Vec<f64>,
    /// Receiver noise variance per user.
    pub noise_var: Vec<f64>,
    /// Performance curve per user.
    pub params: Vec<AbgParams>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Curve used when none is configured.
pub const DEFAULT_CURVE: AbgParams = AbgParams {
    alpha: 95.0,
    beta: 15.7,
    gamma: 82.93,
    tau: 1.427,
};

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Cdf,
            seed: 7,
            draws: 10_000,
            trials: 10,
            test_per_class: 250,
            snr_grid_db: vec![-10.0, 0.0, 10.0, 20.0, 30.0],
            eta: vec![92.0; 2],
            noise_var: vec![1.0; 2],
            params: vec![DEFAULT_CURVE; 2],
            input: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.trials == 0 {
            return Err(Error::InvalidInput(
                "draws and trials must be at least 1".into(),
            ));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidInput("snr grid is empty".into()));
        }
        if self.snr_grid_db.windows(2).any(|w| !(w[0] < w[1]))
            || self.snr_grid_db.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "snr grid must be finite and strictly increasing".into(),
            ));
        }
        let n = self.params.len();
        if self.eta.len() != n || self.noise_var.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{n} curves, {} targets, {} noise variances",
                self.eta.len(),
                self.noise_var.len()
            )));
        }
        for p in &self.params {
            p.validate()?;
        }
        if self.noise_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput(
                "noise variances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Top-level TOML file: a `[train]` table and an `[experiment]` table, both
/// optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// `# config: <json>` line for the head of a CSV file.
pub fn config_comment<T: Serialize>(config: &T) -> Result<String> {
    Ok(format!("# config: {}\n", serde_json::to_string(config)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimates: Vec<AccuracyEstimate>,
}

/// Accuracy under Rayleigh fading at every grid point. All points share
/// the same seed, so neighbouring points see the same fading and noise
/// shapes and differ only in noise level.
pub fn sweep_snr(
    models: &[UserModel],
    datasets: &[Dataset],
    grid_db: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    grid_db
        .iter()
        .map(|&snr_db| {
            Ok(SweepRow {
                snr_db,
                estimates: evaluate_accuracy(
                    models,
                    datasets,
                    EvalChannel::RAYLEIGH,
                    snr_db,
                    trials,
                    seed,
                )?,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write, C: Serialize>(
    mut w: W,
    rows: &[SweepRow],
    config: &C,
) -> Result<()> {
    w.write_all(config_comment(config)?.as_bytes())?;
    let n = rows.first().map_or(0, |r| r.estimates.len());
    let mut header = String::from("snr_db");
    for i in 0..n {
        header.push_str(&format!(",acc_user_{i},stderr_user_{i}"));
    }
    writeln!(w, "{header}")?;
    for row in rows {
        let mut line = format!("{}", row.snr_db);
        for e in &row.estimates {
            line.push_str(&format!(",{},{}", e.accuracy, e.stderr));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Outcome of one policy across all draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    /// Per-user achieved performance, sorted ascending.
    pub samples: Vec<Vec<f64>>,
    /// Per-user fraction of draws meeting the target.
    pub pass_fraction: Vec<f64>,
    /// Fraction of draws where every user meets its target.
    pub joint_pass_fraction: f64,
    /// Joint pass fraction restricted to draws where the optimal
    /// allocation is feasible.
    pub feasible_pass_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfReport {
    pub draws: usize,
    pub eta: Vec<f64>,
    /// Draws where no allocation meets all targets. The optimal policy is
    /// evaluated at the fixed-policy powers on these.
    pub infeasible_draws: usize,
    /// Total power of the fixed policy: the optimal policy's mean total
    /// over feasible draws.
    pub fixed_budget: f64,
    pub optimal: PolicyReport,
    pub fixed: PolicyReport,
}

fn meets(phi: f64, eta: f64) -> bool {
    phi >= eta - TARGET_TOL * eta.abs()
}

fn performance(
    params: &[AbgParams],
    gains: &[f64],
    noise_vars: &[f64],
    powers: &[f64],
) -> Result<Vec<f64>> {
    let real = ChannelRealization::new(gains.to_vec(), noise_vars.to_vec(), powers.to_vec())?;
    (0..params.len())
        .map(|i| abg_eval(&params[i], sinr(&real, i)?))
        .collect()
}

fn policy_report(phis: &[Vec<f64>], etas: &[f64], feasible: &[bool]) -> PolicyReport {
    let n_users = etas.len();
    let draws = phis.len();
    let passes: Vec<Vec<bool>> = phis
        .iter()
        .map(|row| row.iter().zip(etas).map(|(&p, &e)| meets(p, e)).collect())
        .collect();
    let joint: Vec<bool> = passes.iter().map(|r| r.iter().all(|&b| b)).collect();
    let n_feasible = feasible.iter().filter(|&&f| f).count();
    let mut samples: Vec<Vec<f64>> = (0..n_users)
        .map(|i| phis.iter().map(|r| r[i]).collect())
        .collect();
    for s in &mut samples {
        s.sort_by(f64::total_cmp);
    }
    PolicyReport {
        samples,
        pass_fraction: (0..n_users)
            .map(|i| passes.iter().filter(|r| r[i]).count() as f64 / draws as f64)
            .collect(),
        joint_pass_fraction: joint.iter().filter(|&&b| b).count() as f64 / draws as f64,
        feasible_pass_fraction: if n_feasible == 0 {
            0.0
        } else {
            joint
                .iter()
                .zip(feasible)
                .filter(|&(&j, &f)| j && f)
                .count() as f64
                / n_feasible as f64
        },
    }
}

/// Compare the minimum-power allocation with an equal split of the same
/// mean budget on identical Rayleigh draws. Draw `k` uses the seed
/// [`trial_seed`]`(seed, k)`.
pub fn cdf_experiment(
    params: &[AbgParams],
    etas: &[f64],
    noise_vars: &[f64],
    draws: usize,
    seed: u64,
) -> Result<CdfReport> {
    let n = params.len();
    if n == 0 || etas.len() != n || noise_vars.len() != n {
        return Err(Error::ShapeMismatch(
            "need one target and noise variance per curve".into(),
        ));
    }
    if draws < 100 {
        return Err(Error::InvalidInput(format!(
            "need at least 100 draws, got {draws}"
        )));
    }
    let solved: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..draws)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, k));
            let gains = rayleigh_gains(n, &mut rng);
            let gains_sq: Vec<f64> = gains.iter().map(|g| g * g).collect();
            let sol = simplex_solve(&build_problem(params, etas, &gains_sq, noise_vars)?)?;
            Ok((gains, sol.is_optimal().then_some(sol.powers)))
        })
        .collect::<Result<_>>()?;

    let feasible: Vec<bool> = solved.iter().map(|(_, p)| p.is_some()).collect();
    let totals: Vec<f64> = solved
        .iter()
        .filter_map(|(_, p)| p.as_ref().map(|p| p.iter().sum()))
        .collect();
    if totals.is_empty() {
        return Err(Error::Degenerate(
            "no draw admits a feasible allocation".into(),
        ));
    }
    let fixed_budget = totals.iter().sum::<f64>() / totals.len() as f64;
    let equal = vec![fixed_budget / n as f64; n];

    let mut optimal = Vec::with_capacity(draws);
    let mut fixed = Vec::with_capacity(draws);
    for (gains, powers) in &solved {
        let fixed_phi = performance(params, gains, noise_vars, &equal)?;
        optimal.push(match powers {
            Some(p) => performance(params, gains, noise_vars, p)?,
            None => fixed_phi.clone(),
        });
        fixed.push(fixed_phi);
    }
    Ok(CdfReport {
        draws,
        eta: etas.to_vec(),
        infeasible_draws: feasible.iter().filter(|&&f| !f).count(),
        fixed_budget,
        optimal: policy_report(&optimal, etas, &feasible),
        fixed: policy_report(&fixed, etas, &feasible),
    })
}

/// Empirical CDF rows `policy,user,phi,cdf`.
pub fn write_cdf_csv<W: Write, C: Serialize>(
    mut w: W,
    report: &CdfReport,
    config: &C,
) -> Result<()> {
    w.write_all(config_comment(config)?.as_bytes())?;
    writeln!(w, "policy,user,phi,cdf")?;
    for (name, policy) in [("optimal", &report.optimal), ("fixed", &report.fixed)] {
        for (user, samples) in policy.samples.iter().enumerate() {
            let n = samples.len() as f64;
            for (k, phi) in samples.iter().enumerate() {
                writeln!(w, "{name},{user},{phi},{}", (k + 1) as f64 / n)?;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowOptions {
    pub draws: usize,
    pub noise_vars: Vec<f64>,
    /// Rayleigh fading; unit gains otherwise.
    pub fading: bool,
    /// Minimum-power allocation; equal `fixed_power` per user otherwise.
    pub allocate: bool,
    pub fixed_power: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub draw: usize,
    pub gains: Vec<f64>,
    pub powers: Vec<f64>,
    pub sinr: Vec<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowReport {
    pub thresholds: Vec<f64>,
    pub records: Vec<DrawRecord>,
    /// Draws skipped because no allocation met every target.
    pub infeasible_draws: Vec<usize>,
    /// Executed draws where some user's SINR fell short of its threshold.
    pub sinr_violations: usize,
    /// Per-user decoding accuracy over executed draws.
    pub accuracy: Vec<f64>,
}

/// Encode, allocate, broadcast, equalize and decode one sample per user
/// for each draw. Draw `k` uses sample `k mod len` of every dataset.
pub fn run_workflow(
    models: &[UserModel],
    params: &[AbgParams],
    etas: &[f64],
    datasets: &[Dataset],
    opts: &WorkflowOptions,
) -> Result<WorkflowReport> {
    let n = models.len();
    if params.len() != n || etas.len() != n || datasets.len() != n || opts.noise_vars.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "workflow needs {n} curves, targets, datasets and noise variances"
        )));
    }
    let thresholds = params
        .iter()
        .zip(etas)
        .map(|(p, &e)| required_sinr(p, e).map(|r| r.threshold))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Option<DrawRecord>> = (0..opts.draws)
        .into_par_iter()
        .map(|k| -> Result<Option<DrawRecord>> {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(opts.seed, k));
            let gains = if opts.fading {
                rayleigh_gains(n, &mut rng)
            } else {
                vec![1.0; n]
            };
            let powers = if opts.allocate {
                let gains_sq: Vec<f64> = gains.iter().map(|g| g * g).collect();
                let problem =
                    PowerProblem::new(thresholds.clone(), gains_sq, opts.noise_vars.clone())?;
                let sol = simplex_solve(&problem)?;
                if !sol.is_optimal() {
                    return Ok(None);
                }
                sol.powers
            } else {
                vec![opts.fixed_power; n]
            };
            let real =
                ChannelRealization::new(gains.clone(), opts.noise_vars.clone(), powers.clone())?;
            let labels: Vec<usize> = datasets
                .iter()
                .map(|ds| ds.labels()[k % ds.len()])
                .collect();
            let codes = models
                .iter()
                .zip(datasets)
                .map(|(m, ds)| m.encode(&ds.inputs()[k % ds.len()]))
                .collect::<Result<Vec<_>>>()?;
            let mut predictions = Vec::with_capacity(n);
            let mut sinrs = Vec::with_capacity(n);
            for i in 0..n {
                let y = broadcast(&codes, &real, i, &mut rng)?;
                predictions.push(models[i].decode(&equalize(&y, gains[i])?)?);
                sinrs.push(sinr(&real, i)?);
            }
            Ok(Some(DrawRecord {
                draw: k,
                gains,
                powers,
                sinr: sinrs,
                predictions,
                labels,
            }))
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut infeasible_draws = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Some(r) => records.push(r),
            None => infeasible_draws.push(k),
        }
    }
    let sinr_violations = records
        .iter()
        .filter(|r| r.sinr.iter().zip(&thresholds).any(|(&s, &c)| !meets(s, c)))
        .count();
    let accuracy = (0..n)
        .map(|i| {
            let hits = records
                .iter()
                .filter(|r| r.predictions[i] == r.labels[i])
                .count();
            if records.is_empty() {
                0.0
            } else {
                hits as f64 / records.len() as f64
            }
        })
        .collect();
    Ok(WorkflowReport {
        thresholds,
        records,
        infeasible_draws,
        sinr_violations,
        accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DatasetSpec, SyntheticSpec};
    use crate::trainer::init_models;

    fn small_models(n: usize) -> (Vec<UserModel>, Vec<Dataset>) {
        let cfg = TrainConfig {
            n_users: n,
            omega: vec![0.05; n],
            code_dim: 8,
            decoder_hidden: vec![8],
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes: 3,
                input_dim: 4,
                per_class: 10,
                spread: 0.3,
                separation: 2.0,
            }),
            ..TrainConfig::default()
        };
        let data = cfg.train_datasets().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (init_models(&cfg, &data, &mut rng).unwrap(), data)
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = RunConfig::from_toml_str("[experiment]\ndraws = 5\n").unwrap();
        assert_eq!(partial.experiment.draws, 5);
        assert_eq!(partial.train, TrainConfig::default());
        assert!(RunConfig::from_toml_str("[experiment]\nbogus = 1\n").is_err());
        assert!(cfg.experiment.validate().is_ok());
        let unsorted = ExperimentConfig {
            snr_grid_db: vec![0.0, -1.0],
            ..ExperimentConfig::default()
        };
        assert!(unsorted.validate().is_err());
        let empty = ExperimentConfig {
            snr_grid_db: vec![],
            ..ExperimentConfig::default()
        };
        assert!(empty.validate().is_err());
        let none = ExperimentConfig {
            draws: 0,
            ..ExperimentConfig::default()
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn one_point_sweep_is_evaluate_accuracy() {
        let (models, data) = small_models(2);
        let rows = sweep_snr(&models, &data, &[3.0], 2, 5).unwrap();
        let direct = evaluate_accuracy(&models, &data, EvalChannel::RAYLEIGH, 3.0, 2, 5).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].estimates, direct);
        let mut out = Vec::new();
        write_sweep_csv(&mut out, &rows, &"cfg").unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config: \"cfg\"");
        assert_eq!(
            lines[1],
            "snr_db,acc_user_0,stderr_user_0,acc_user_1,stderr_user_1"
        );
        assert!(lines[2].starts_with("3,"));
    }

    #[test]
    fn cdf_is_a_distribution() {
        let cfg = ExperimentConfig::default();
        let rep = cdf_experiment(&cfg.params, &cfg.eta, &cfg.noise_var, 500, 3).unwrap();
        for policy in [&rep.optimal, &rep.fixed] {
            for s in &policy.samples {
                assert_eq!(s.len(), 500);
                assert!(s.windows(2).all(|w| w[0] <= w[1]));
            }
            for f in policy
                .pass_fraction
                .iter()
                .chain([&policy.joint_pass_fraction])
            {
                assert!((0.0..=1.0).contains(f));
            }
        }
        let mut out = Vec::new();
        write_cdf_csv(&mut out, &rep, &cfg).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text
            .lines()
            .rfind(|l| l.starts_with("optimal,0,"))
            .unwrap()
            .ends_with(",1"));
        assert!(cdf_experiment(&cfg.params, &cfg.eta, &cfg.noise_var, 10, 3).is_err());
    }

    #[test]
    fn infeasible_draws_fall_back_to_fixed_powers() {
        // c^2 > 1 for two identical users: every draw is infeasible
        let p = AbgParams::new(95.0, 1.0, 80.0, 1.0).unwrap();
        let eta = 95.0 - 80.0 / 2.5; // c = 1.5
        let err = cdf_experiment(&[p, p], &[eta, eta], &[1.0, 1.0], 100, 1);
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn workflow_meets_targets_with_unit_gains() {
        let (models, data) = small_models(2);
        let opts = WorkflowOptions {
            draws: 20,
            noise_vars: vec![1.0, 1.0],
            fading: false,
            allocate: true,
            fixed_power: 1.0,
            seed: 9,
        };
        let params = [DEFAULT_CURVE; 2];
        let rep = run_workflow(&models, &params, &[92.0, 92.0], &data, &opts).unwrap();
        assert_eq!(rep.records.len(), 20);
        assert!(rep.infeasible_draws.is_empty());
        assert_eq!(rep.sinr_violations, 0);
        for r in &rep.records {
            for (s, c) in r.sinr.iter().zip(&rep.thresholds) {
                assert!(*s >= c * (1.0 - 1e-9));
            }
        }
        assert_eq!(
            rep,
            run_workflow(&models, &params, &[92.0, 92.0], &data, &opts).unwrap()
        );
    }

    #[test]
    fn fixed_powers_miss_targets_under_fading() {
        let (models, data) = small_models(2);
        let opts = WorkflowOptions {
            draws: 10_000,
            noise_vars: vec![1.0, 1.0],
            fading: true,
            allocate: false,
            fixed_power: 1.0,
            seed: 9,
        };
        let rep = run_workflow(&models, &[DEFAULT_CURVE; 2], &[92.0, 92.0], &data, &opts).unwrap();
        assert!(rep.sinr_violations > 0);
    }
}

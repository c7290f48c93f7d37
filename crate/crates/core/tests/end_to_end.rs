use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sfdma_core::abg::{abg_eval, abg_fit, FitSample};
use sfdma_core::channel::{sinr, ChannelRealization};
use sfdma_core::harness::DEFAULT_CURVE;
use sfdma_core::power::{build_problem, direct_solve, simplex_solve};
use sfdma_core::trainer::{evaluate_accuracy, train, EvalChannel};
use sfdma_core::TrainConfig;

#[test]
fn separable_two_user_training_converges() {
    let cfg = TrainConfig {
        train_snr_db: 5.0,
        ..TrainConfig::default()
    };
    let sys = train(&cfg, &cfg.train_datasets().unwrap()).unwrap();
    let test = cfg.test_datasets(Some(100)).unwrap();
    let chance = 1.0 / test[0].classes() as f64;
    let noisy = evaluate_accuracy(&sys.models, &test, EvalChannel::AWGN, 5.0, 5, 1).unwrap();
    let clean = evaluate_accuracy(&sys.models, &test, EvalChannel::UPPER_BOUND, 5.0, 1, 1).unwrap();
    for (n, c) in noisy.iter().zip(&clean) {
        assert!(n.accuracy > 0.9 && n.accuracy >= 3.0 * chance, "{n:?}");
        assert!(
            c.accuracy >= n.accuracy - 3.0 * n.stderr,
            "clean {c:?} vs noisy {n:?}"
        );
    }
}

#[test]
fn fitted_curve_allocation_meets_targets() {
    // noisy measurements -> fitted curve -> allocation -> realized SINR
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<FitSample> = (0..25)
        .map(|k| {
            let sinr = 10f64.powf(-2.0 + 0.15 * k as f64);
            FitSample {
                sinr,
                phi: abg_eval(&DEFAULT_CURVE, sinr).unwrap() + noise.sample(&mut rng),
            }
        })
        .collect();
    let fit = abg_fit(&samples).unwrap();
    assert!(
        (fit.params.alpha - DEFAULT_CURVE.alpha).abs() < 1.0,
        "{fit:?}"
    );

    let gains: [f64; 3] = [0.7, 1.1, 1.6];
    let gains_sq: Vec<f64> = gains.iter().map(|g| g * g).collect();
    let params = [fit.params; 3];
    let problem = build_problem(&params, &[85.0, 88.0, 90.0], &gains_sq, &[1.0, 0.5, 2.0]).unwrap();
    let sol = simplex_solve(&problem).unwrap();
    assert_eq!(sol.status, direct_solve(&problem).unwrap().status);
    assert!(sol.is_optimal());
    let real =
        ChannelRealization::new(gains.to_vec(), vec![1.0, 0.5, 2.0], sol.powers.clone()).unwrap();
    for (i, (&c, eta)) in problem
        .thresholds
        .iter()
        .zip([85.0, 88.0, 90.0])
        .enumerate()
    {
        let s = sinr(&real, i).unwrap();
        assert!(s >= c * (1.0 - 1e-9));
        assert!(abg_eval(&fit.params, s).unwrap() >= eta - 1e-6);
    }
}

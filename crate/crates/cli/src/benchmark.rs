use std::fs;
use std::io::Write;

use bde_core::io::config::TrainConfig;
use bde_core::io::format_report;
use bde_core::predictive;
use bde_core::synthetic::Suite;
use bde_core::{ensemble, Dataset, PosteriorEnsemble, Result, Targets, Task};

use crate::{BenchmarkArgs, SuiteArg};

/// Test sets are drawn from a seed unrelated to the training seed.
const TEST_SEED_MIX: u64 = 0x7e57_5eed_0000_0001;

struct Budget {
    n_train: usize,
    n_test: usize,
    config: TrainConfig,
}

fn budget(suite: SuiteArg, seed: u64) -> Budget {
    let base = TrainConfig {
        master_seed: seed,
        ..TrainConfig::default()
    };
    match suite {
        SuiteArg::Synthetic => Budget {
            n_train: 500,
            n_test: 500,
            config: TrainConfig {
                hidden_layers: vec![16; 4],
                ..base
            },
        },
        SuiteArg::Smoke => Budget {
            n_train: 120,
            n_test: 100,
            config: TrainConfig {
                n_members: 2,
                hidden_layers: vec![8],
                epochs: 300,
                warmup_steps: 300,
                n_samples: 40,
                n_thinning: 4,
                ..base
            },
        },
    }
}

fn targets(data: &Dataset) -> &bde_core::Matrix {
    match &data.targets {
        Targets::Regression(y) => y,
        Targets::Classification { .. } => unreachable!("synthetic suites are regression"),
    }
}

struct Metrics {
    rmse: f64,
    nll_distributional: f64,
    nll_mean: f64,
    coverage_80: f64,
}

fn evaluate(ens: &PosteriorEnsemble, test: &Dataset) -> Result<Metrics> {
    let y = targets(test);
    let (means, _) = predictive::predict_moments(ens, &test.x)?;
    Ok(Metrics {
        rmse: predictive::metric_rmse(y, &means)?,
        nll_distributional: predictive::metric_nll_distributional(ens, &test.x, y)?,
        nll_mean: predictive::metric_nll_mean_regression(y, &means)?,
        coverage_80: predictive::metric_coverage(ens, &test.x, y, (0.1, 0.9))?,
    })
}

pub fn run(args: &BenchmarkArgs) -> Result<()> {
    let Budget { n_train, n_test, config } = budget(args.suite, args.seed);
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("config.toml"), config.to_toml_string())?;

    let mut lines = vec![
        "suite,method,seed,n_train,n_test,rmse,nll_distributional,nll_mean,coverage_80".to_string(),
    ];
    for suite in Suite::ALL {
        let train = suite.generate(n_train, args.seed);
        let test = suite.generate(n_test, args.seed ^ TEST_SEED_MIX);
        let cfg = config.to_ensemble_config(train.x.cols(), Task::Regression { targets: 1 })?;
        let map_cfg = bde_core::EnsembleConfig {
            n_members: 1,
            ..cfg.clone()
        };
        let runs: [(&str, Result<PosteriorEnsemble>); 2] = [
            ("bde", ensemble::fit(&train, &cfg)),
            ("map", ensemble::fit_map(&train, &map_cfg)),
        ];
        for (method, ens) in runs {
            let ens = ens.map_err(|e| {
                log::error!("{} / {method}: {e}", suite.name());
                e
            })?;
            let m = evaluate(&ens, &test)?;
            log::info!("{} {method}: rmse {}", suite.name(), format_report(m.rmse));
            lines.push(format!(
                "{},{method},{},{n_train},{n_test},{},{},{},{}",
                suite.name(),
                args.seed,
                format_report(m.rmse),
                format_report(m.nll_distributional),
                format_report(m.nll_mean),
                format_report(m.coverage_80)
            ));
        }
    }
    let mut file = fs::File::create(args.out.join("metrics.csv"))?;
    for line in &lines {
        writeln!(file, "{line}")?;
    }
    println!("{}", lines.join("\n"));
    Ok(())
}

use bde_core::io::config::TrainConfig;
use bde_core::io::container::{self, SavedModel};
use bde_core::io::csv::{self, TaskKind};
use bde_core::io::format_report;
use bde_core::{ensemble, Result, Targets, Task};

use crate::{TaskArg, TrainArgs};

pub fn run(args: &TrainArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    let kind = match args.task {
        TaskArg::Regression => TaskKind::Regression,
        TaskArg::Classification => TaskKind::Classification,
    };
    let table = csv::load_csv(&args.data, &args.target, kind)?;
    let task = match &table.dataset.targets {
        Targets::Regression(y) => Task::Regression { targets: y.cols() },
        Targets::Classification { classes, .. } => Task::Classification { classes: *classes },
    };
    let cfg = config.to_ensemble_config(table.dataset.x.cols(), task)?;
    log::info!(
        "fitting {} members on {} rows, {} parameters each",
        cfg.n_members,
        table.dataset.len(),
        cfg.net.num_params()
    );
    let ens = ensemble::fit(&table.dataset, &cfg)?;

    println!("member,seed,epochs,map_valid_loss,step_size,decoherence_length,energy_var_per_dim,divergences");
    for (i, m) in ens.member_meta.iter().enumerate() {
        println!(
            "{i},{:#018x},{},{},{},{},{},{}",
            m.seed,
            m.epochs_run,
            format_report(m.map_valid_loss),
            format_report(m.final_eps),
            format_report(m.final_l),
            format_report(m.energy_var_per_dim),
            m.divergences
        );
    }
    eprintln!(
        "wrote {} samples of {} parameters to {}",
        ens.num_samples(),
        cfg.net.num_params(),
        args.out.display()
    );
    let saved = SavedModel {
        ensemble: ens,
        config: Some(cfg),
        schema: Some(table.schema),
    };
    container::save_saved_model(&saved, &args.out)
}

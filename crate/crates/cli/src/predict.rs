use std::io::Write;

use bde_core::io::container::{self, SavedModel};
use bde_core::io::csv::{self, DataSchema};
use bde_core::io::{format_payload, format_report};
use bde_core::predictive::{self, PredictOptions, RawPredictions};
use bde_core::{BdeError, Result, Task};

use crate::PredictArgs;

fn csv_writer<W: Write>(out: W) -> ::csv::Writer<W> {
    ::csv::WriterBuilder::new().terminator(::csv::Terminator::Any(b'\n')).from_writer(out)
}

fn write_err(e: ::csv::Error) -> BdeError {
    match e.into_kind() {
        ::csv::ErrorKind::Io(io) => BdeError::Io(io),
        other => BdeError::Data(format!("cannot write CSV: {other:?}")),
    }
}

fn levels(args: &PredictArgs) -> Result<Vec<f64>> {
    match &args.intervals {
        None => Ok(Vec::new()),
        Some(v) if v.len() == 2 && v[0] < v[1] => Ok(v.clone()),
        Some(v) => Err(BdeError::Config(format!(
            "--intervals takes two increasing levels lo,hi, got {v:?}"
        ))),
    }
}

/// Column prefix for target `j`; empty for single-target models.
fn prefix(schema: &DataSchema, t: usize, j: usize) -> String {
    if t == 1 {
        String::new()
    } else {
        format!("{}_", schema.target_names[j])
    }
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let SavedModel { ensemble: ens, schema, .. } = container::load_saved_model(&args.model)?;
    let schema = schema.ok_or_else(|| {
        BdeError::Format("model has no column schema; it was not written by `bde train`".into())
    })?;
    let x = csv::load_features(&args.data, &schema.feature_names)?;
    let stdout = std::io::stdout();
    let mut out = csv_writer(stdout.lock());

    match ens.net.task {
        Task::Regression { targets: t } => {
            let levels = levels(args)?;
            let opts = PredictOptions {
                mean_and_std: args.mean_std,
                credible_levels: levels.clone(),
                raw: args.raw_out.is_some(),
            };
            let res = predictive::predict(&ens, &x, &opts)?;
            let mut header = Vec::new();
            for j in 0..t {
                let p = prefix(&schema, t, j);
                header.push(format!("{p}mean"));
                if args.mean_std {
                    header.push(format!("{p}std"));
                }
                for level in &levels {
                    header.push(format!("{p}q_{}", format_report(*level)));
                }
            }
            out.write_record(&header).map_err(write_err)?;
            for i in 0..x.rows() {
                let mut row = Vec::with_capacity(header.len());
                for j in 0..t {
                    row.push(format_report(res.means.get(i, j)));
                    if let Some(stds) = &res.stds {
                        row.push(format_report(stds.get(i, j)));
                    }
                    for (_, q) in &res.quantiles {
                        row.push(format_report(q.get(i, j)));
                    }
                }
                out.write_record(&row).map_err(write_err)?;
            }
            if let (Some(path), Some(raw)) = (&args.raw_out, &res.raw) {
                let names: Vec<String> = (0..t)
                    .map(|j| format!("{}mu", prefix(&schema, t, j)))
                    .chain((0..t).map(|j| format!("{}sigma", prefix(&schema, t, j))))
                    .collect();
                write_raw(path, raw, &names)?;
            }
        }
        Task::Classification { classes } => {
            if args.intervals.is_some() || args.mean_std {
                return Err(BdeError::Config(
                    "--intervals and --mean-std apply to regression models only".into(),
                ));
            }
            let labels: Vec<String> = schema
                .labels
                .clone()
                .unwrap_or_else(|| (0..classes).map(|k| k.to_string()).collect());
            let probs = predictive::predict_proba(&ens, &x)?;
            let classes_out = predictive::predict_class(&ens, &x)?;
            let header: Vec<String> = std::iter::once("class".to_string())
                .chain(labels.iter().map(|l| format!("p_{l}")))
                .collect();
            out.write_record(&header).map_err(write_err)?;
            for (i, &c) in classes_out.iter().enumerate() {
                let row: Vec<String> = std::iter::once(labels[c].clone())
                    .chain(probs.row(i).iter().map(|&p| format_report(p)))
                    .collect();
                out.write_record(&row).map_err(write_err)?;
            }
            if let Some(path) = &args.raw_out {
                let raw = predictive::predict_raw(&ens, &x)?;
                let names: Vec<String> = labels.iter().map(|l| format!("p_{l}")).collect();
                write_raw(path, &raw, &names)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// One line per (sample, row) with full-precision head outputs.
fn write_raw(path: &std::path::Path, raw: &RawPredictions, names: &[String]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = csv_writer(std::io::BufWriter::new(file));
    let header: Vec<&str> = ["sample", "row"]
        .into_iter()
        .chain(names.iter().map(String::as_str))
        .collect();
    out.write_record(&header).map_err(write_err)?;
    for s in 0..raw.samples {
        for i in 0..raw.rows {
            let row: Vec<String> = [s.to_string(), i.to_string()]
                .into_iter()
                .chain(raw.entry(s, i).iter().map(|&v| format_payload(v)))
                .collect();
            out.write_record(&row).map_err(write_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

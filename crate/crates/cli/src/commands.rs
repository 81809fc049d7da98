use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use spikeconv::metrics::{
    accuracy_sweep, cnn_accuracy, evaluate, snn_fan_counts, write_csv, write_json, EnergyReport, ResidualSummary,
    SweepRow,
};
use spikeconv::{
    build_snn, calibrate, fold_batchnorm, load_dataset, load_model, load_snn_model, save_snn_model, CalibrationStats,
    CnnModel, SnnModel,
};

use crate::args::{Cli, Command, Conversion, Source};
use crate::Failure;

type Outcome<T = ()> = Result<T, Failure>;

const CALIBRATION: &str = "calibration.json";
const SNN_DIR: &str = "snn";
const RUN: &str = "run.json";
const SWEEP: &str = "sweep.json";
const REPORT: &str = "report.json";

pub fn dispatch(cli: Cli) -> Outcome {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::data("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::data(e.to_string()))?;
    }
    let out = cli.out;
    match cli.command {
        Command::Calibrate { model, calib, epsilon } => cmd_calibrate(&model, &calib, epsilon, &out),
        Command::Convert {
            source,
            conversion,
            timesteps,
            bits,
        } => cmd_convert(&source, &conversion, timesteps, bits, &out),
        Command::Run {
            snn,
            data,
            timesteps,
            cnn,
        } => cmd_run(&snn, &data, timesteps, cnn.as_deref(), &out),
        Command::Sweep {
            source,
            conversion,
            data,
            timesteps_list,
            bits_list,
            timesteps,
        } => cmd_sweep(
            &source,
            &conversion,
            &data,
            &timesteps_list,
            &bits_list,
            timesteps,
            &out,
        ),
        Command::Report { run_dir } => cmd_report(run_dir.as_deref().unwrap_or(&out), &out),
    }
}

fn prepare_out(out: &Path) -> Outcome {
    fs::create_dir_all(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn cmd_calibrate(model: &Path, calib: &Path, epsilon: f32, out: &Path) -> Outcome {
    let folded = fold_batchnorm(&load_model(model)?, epsilon)?;
    let stats = calibrate(&folded, &load_dataset(calib)?, epsilon)?;
    prepare_out(out)?;
    let path = out.join(CALIBRATION);
    write_json(&stats, &path)?;
    wrote(&path);
    Ok(())
}

/// The unfolded model, its folded form and the calibration statistics.
fn load_source(source: &Source, epsilon: f32) -> Outcome<(CnnModel, CnnModel, CalibrationStats)> {
    let model = load_model(&source.model)?;
    let folded = fold_batchnorm(&model, epsilon)?;
    let stats = match (&source.stats, &source.calib) {
        (Some(path), _) => {
            let stats: CalibrationStats = read_json(path)?;
            if stats.fold_epsilon != epsilon {
                return Err(Failure::data(format!(
                    "{}: calibrated with epsilon {} but --epsilon is {epsilon}; rerun calibrate",
                    path.display(),
                    stats.fold_epsilon
                )));
            }
            stats
        }
        (None, Some(calib)) => calibrate(&folded, &load_dataset(calib)?, epsilon)?,
        (None, None) => return Err(Failure::data("one of --stats or --calib is required")),
    };
    Ok((model, folded, stats))
}

fn cmd_convert(source: &Source, conversion: &Conversion, timesteps: u32, bits: Option<u32>, out: &Path) -> Outcome {
    let cfg = conversion.config(timesteps, bits).map_err(Failure::data)?;
    let (_, folded, stats) = load_source(source, cfg.epsilon)?;
    let snn = build_snn(&folded, &stats, &cfg)?;
    prepare_out(out)?;
    let path = out.join(SNN_DIR);
    save_snn_model(&snn, &path)?;
    wrote(&path);
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    snn: String,
    data: String,
    timesteps: u32,
    images: usize,
    accuracy: f64,
    cnn_accuracy: Option<f64>,
    loss_pp: Option<f64>,
    energy: EnergyReport,
    residuals: Vec<ResidualSummary>,
}

#[derive(Serialize)]
struct PredictionRow {
    index: usize,
    label: u32,
    prediction: usize,
}

#[derive(Serialize)]
struct LayerRow {
    layer: usize,
    name: String,
    neurons: usize,
    fan_in: usize,
    mean_fan_out: f64,
    spikes_per_neuron: f64,
    synops: f64,
    macs: u64,
}

#[derive(Serialize)]
struct StepRow {
    t: usize,
    synops: f64,
}

fn cmd_run(snn_path: &Path, data_path: &Path, timesteps: Option<u32>, cnn: Option<&Path>, out: &Path) -> Outcome {
    let snn = load_snn_model(snn_path)?;
    let data = load_dataset(data_path)?;
    let timesteps = timesteps.unwrap_or(snn.encoder.timesteps);
    let cnn_acc = cnn.map(|path| cnn_accuracy(&load_model(path)?, &data)).transpose()?;
    let eval = evaluate(&snn, &data, timesteps)?;
    prepare_out(out)?;

    let fans = snn_fan_counts(&snn);
    let layers: Vec<LayerRow> = fans
        .layers
        .iter()
        .enumerate()
        .map(|(n, f)| LayerRow {
            layer: n,
            name: f.name.clone(),
            neurons: f.neurons,
            fan_in: f.fan_in,
            mean_fan_out: f.mean_fan_out(),
            spikes_per_neuron: eval.energy.spikes_per_neuron[n],
            synops: eval.energy.layer_synops[n],
            macs: eval.energy.layer_macs[n],
        })
        .collect();
    let steps: Vec<StepRow> = eval
        .energy
        .step_synops
        .iter()
        .enumerate()
        .map(|(t, &synops)| StepRow { t: t + 1, synops })
        .collect();
    let predictions: Vec<PredictionRow> = eval
        .predictions
        .iter()
        .zip(data.labels())
        .enumerate()
        .map(|(index, (&prediction, &label))| PredictionRow {
            index,
            label,
            prediction,
        })
        .collect();
    let summary = RunSummary {
        snn: snn_path.display().to_string(),
        data: data_path.display().to_string(),
        timesteps,
        images: data.len(),
        accuracy: eval.accuracy,
        cnn_accuracy: cnn_acc,
        loss_pp: cnn_acc.map(|c| (c - eval.accuracy) * 100.0),
        energy: eval.energy,
        residuals: eval.residuals,
    };

    for (name, result) in [
        ("layers.csv", write_csv(&layers, out.join("layers.csv"))),
        ("steps.csv", write_csv(&steps, out.join("steps.csv"))),
        ("predictions.csv", write_csv(&predictions, out.join("predictions.csv"))),
        (RUN, write_json(&summary, out.join(RUN))),
    ] {
        result?;
        wrote(&out.join(name));
    }
    println!(
        "accuracy {:.4} over {} images at T={timesteps}, {:.0} synaptic ops per image",
        summary.accuracy, summary.images, summary.energy.snn_synops
    );
    Ok(())
}

#[derive(Serialize)]
struct BitsRow {
    bits: u32,
    #[serde(rename = "T")]
    timesteps: u32,
    cnn_acc: f64,
    float_acc: f64,
    snn_acc: f64,
    loss_pp: f64,
    loss_vs_float_pp: f64,
}

fn cmd_sweep(
    source: &Source,
    conversion: &Conversion,
    data_path: &Path,
    timesteps_list: &[u32],
    bits_list: &[u32],
    timesteps: u32,
    out: &Path,
) -> Outcome {
    let base = conversion.config(timesteps, None).map_err(Failure::data)?;
    let (_, folded, stats) = load_source(source, base.epsilon)?;
    let data = load_dataset(data_path)?;
    let config_for = |t: u32, bits: Option<u32>| {
        let mut cfg = base.clone();
        cfg.timesteps = t;
        cfg.quant_bits = bits;
        cfg
    };

    let rows: Vec<SweepRow> = accuracy_sweep(&folded, &data, timesteps_list, |t| {
        build_snn(&folded, &stats, &config_for(t, None))
    })?;

    let mut bit_rows = Vec::new();
    if !bits_list.is_empty() {
        let cnn_acc = cnn_accuracy(&folded, &data)?;
        let float_acc = evaluate(&build_snn(&folded, &stats, &base)?, &data, timesteps)?.accuracy;
        for &bits in bits_list {
            let snn: SnnModel = build_snn(&folded, &stats, &config_for(timesteps, Some(bits)))?;
            let acc = evaluate(&snn, &data, timesteps)?.accuracy;
            bit_rows.push(BitsRow {
                bits,
                timesteps,
                cnn_acc,
                float_acc,
                snn_acc: acc,
                loss_pp: (cnn_acc - acc) * 100.0,
                loss_vs_float_pp: (float_acc - acc) * 100.0,
            });
        }
    }

    prepare_out(out)?;
    let timesteps_csv = out.join("sweep_timesteps.csv");
    write_csv(&rows, &timesteps_csv)?;
    wrote(&timesteps_csv);
    if !bit_rows.is_empty() {
        let bits_csv = out.join("sweep_bits.csv");
        write_csv(&bit_rows, &bits_csv)?;
        wrote(&bits_csv);
    }
    let path = out.join(SWEEP);
    write_json(&json!({ "config": base, "timesteps": rows, "bits": bit_rows }), &path)?;
    wrote(&path);
    Ok(())
}

fn snn_summary(snn: &SnnModel) -> Value {
    json!({
        "name": snn.name,
        "mode": snn.provenance.config.mode,
        "numeric_mode": snn.numeric_mode,
        "encoder": snn.encoder,
        "tre_eta": snn.provenance.tre_eta,
        "layers": snn.layers.iter().map(|l| json!({
            "name": l.name,
            "neurons": l.neurons(),
            "spiking": l.spiking,
            "threshold": l.params.threshold(),
            "tre_current": l.params.tre_current(),
        })).collect::<Vec<_>>(),
    })
}

fn cmd_report(run_dir: &Path, out: &Path) -> Outcome {
    if !run_dir.is_dir() {
        return Err(Failure::data(format!("{}: not a directory", run_dir.display())));
    }
    let optional = |name: &str| -> Outcome<Value> {
        let path: PathBuf = run_dir.join(name);
        if path.exists() {
            read_json(&path)
        } else {
            Ok(Value::Null)
        }
    };
    let snn_dir = run_dir.join(SNN_DIR);
    let snn = if snn_dir.is_dir() {
        snn_summary(&load_snn_model(&snn_dir)?)
    } else {
        Value::Null
    };
    let report = json!({
        "calibration": optional(CALIBRATION)?,
        "snn": snn,
        "run": optional(RUN)?,
        "sweep": optional(SWEEP)?,
    });
    if report.as_object().is_some_and(|o| o.values().all(Value::is_null)) {
        return Err(Failure::data(format!("{}: no results to report", run_dir.display())));
    }
    prepare_out(out)?;
    let path = out.join(REPORT);
    write_json(&report, &path)?;
    wrote(&path);
    Ok(())
}

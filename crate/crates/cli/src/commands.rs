use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use smokegrid_core::config::{EvalSubset, RunConfig};
use smokegrid_core::eval::{
    evaluate_channel, evaluate_model, evaluate_nearest_station, export_heatmap, seasonal_report, EvalRecord,
};
use smokegrid_core::grid::{
    compose_sample, read_archive, read_observations, split_dataset, write_archive, Archive, ObservationStore,
    SampleFrame,
};
use smokegrid_core::network::{
    gradcheck_suite, init_network, predict, read_checkpoint, train_with, write_checkpoint, NetworkSpec, Precision,
    GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
use smokegrid_core::synth::generate_scenario;
use smokegrid_core::tensor::{Real, Tensor};

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let sim = cfg.scenario.build(cfg.seed)?;
    let started = Instant::now();
    let scenario = generate_scenario(&sim, &cfg.registry)?;
    eprintln!(
        "simulated {} steps for {} frames in {:.1?}",
        scenario.steps,
        scenario.archive.len(),
        started.elapsed()
    );
    if scenario.clamped > 0 {
        eprintln!("warning: {} negative concentrations were clamped to zero", scenario.clamped);
    }
    write_archive(&cfg.archive, &scenario.archive)?;
    println!(
        "{}\t{} frames\t{}x{} cells\t{} channels\tdense truth",
        cfg.archive.display(),
        scenario.archive.len(),
        sim.rows,
        sim.cols,
        cfg.registry.len()
    );
    Ok(())
}

pub fn ingest(cfg: &RunConfig, paths: &[String]) -> Result<()> {
    if paths.is_empty() {
        bail!("ingest needs at least one observation CSV");
    }
    let label = cfg.compose.label_variable.as_str();
    let known = |v: &str| v == label || cfg.registry.has_variable(v);
    let mut observations = Vec::new();
    for path in paths {
        observations.extend(read_observations(path, known).with_context(|| format!("reading {path}"))?);
    }

    let mut outside: BTreeMap<String, usize> = BTreeMap::new();
    for o in &observations {
        if cfg.grid.latlon_to_cell(o.lat, o.lon).is_none() {
            *outside.entry(o.variable.clone()).or_default() += 1;
        }
    }
    let total = observations.len();
    let store = ObservationStore::new(observations);

    let mut archive = Archive::new(cfg.grid, cfg.registry.names().iter().map(|s| s.to_string()).collect());
    let mut without_truth = 0;
    for t in store.times(label) {
        let inside = store.at(label, t).iter().any(|r| cfg.grid.latlon_to_cell(r.lat, r.lon).is_some());
        if !inside {
            without_truth += 1;
            continue;
        }
        let composed = compose_sample(t, &store, &cfg.grid, &cfg.registry, &cfg.compose)?;
        archive.frames.push(composed.frame);
    }
    write_archive(&cfg.archive, &archive)?;

    let skipped: usize = outside.values().sum();
    println!("{}\t{} frames from {total} observations", cfg.archive.display(), archive.len());
    let detail: Vec<String> = outside.iter().map(|(v, n)| format!("{v} {n}")).collect();
    if detail.is_empty() {
        println!("skipped 0 observations outside the grid");
    } else {
        println!("skipped {skipped} observations outside the grid ({})", detail.join(", "));
    }
    if without_truth > 0 {
        println!("skipped {without_truth} label times without ground truth inside the grid");
    }
    Ok(())
}

struct Subsets {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn subsets(cfg: &RunConfig, n: usize) -> Result<Subsets> {
    let (train, val, test) = split_dataset((0..n).collect(), cfg.split, cfg.seed)?;
    Ok(Subsets { train, val, test })
}

fn load_archive(cfg: &RunConfig) -> Result<Archive> {
    let archive = read_archive(&cfg.archive).with_context(|| format!("cannot read archive {}", cfg.archive.display()))?;
    let expected = cfg.registry.names();
    if archive.channels != expected {
        bail!(
            "archive channels [{}] differ from the configured channels [{}]",
            archive.channels.join(","),
            expected.join(",")
        );
    }
    if archive.is_empty() {
        bail!("archive {} holds no frames", cfg.archive.display());
    }
    Ok(archive)
}

fn pick(frames: &[SampleFrame], idx: &[usize]) -> Vec<SampleFrame> {
    idx.iter().map(|&i| frames[i].clone()).collect()
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let archive = load_archive(cfg)?;
    let sets = subsets(cfg, archive.len())?;
    let train_set = pick(&archive.frames, &sets.train);
    let val_set = pick(&archive.frames, &sets.val);
    if train_set.is_empty() {
        bail!("the split leaves no training frames out of {}", archive.len());
    }
    eprintln!(
        "training on {} frames, validating on {}, holding out {}",
        train_set.len(),
        val_set.len(),
        sets.test.len()
    );
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, &train_set, &val_set),
        Precision::F64 => train_typed::<f64>(cfg, &train_set, &val_set),
    }
}

fn train_typed<T: Real>(cfg: &RunConfig, train_set: &[SampleFrame], val_set: &[SampleFrame]) -> Result<()> {
    let (spec, params) = if cfg.resume {
        let (spec, params) = read_checkpoint::<T>(&cfg.checkpoint)
            .with_context(|| format!("cannot resume from {}", cfg.checkpoint.display()))?;
        eprintln!("resuming at optimizer step {}", params.step());
        (spec, params)
    } else {
        let spec = cfg.network_spec();
        let params = init_network::<T>(&spec, cfg.seed)?;
        (spec, params)
    };
    if spec.input_channels != cfg.registry.len() {
        bail!(
            "checkpoint expects {} input channels, archive has {}",
            spec.input_channels,
            cfg.registry.len()
        );
    }
    let tc = smokegrid_core::network::TrainConfig {
        checkpoint: Some(cfg.checkpoint.clone()),
        ..cfg.train_config()?
    };

    let append = cfg.resume && cfg.history.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&cfg.history)
        .with_context(|| format!("cannot open {}", cfg.history.display()))?;
    let mut history = csv::Writer::from_writer(file);
    if !append {
        history.write_record(["epoch", "step", "train_loss", "val_loss"])?;
    }
    let mut write_error = None;
    let started = Instant::now();
    let outcome = train_with(params.clone(), train_set, val_set, &spec, &tc, |record, p| {
        let val = record.val_loss.map_or(String::new(), |v| v.to_string());
        let row = [record.epoch.to_string(), p.step().to_string(), record.train_loss.to_string(), val];
        if let Err(e) = history.write_record(&row).and_then(|_| history.flush().map_err(Into::into)) {
            write_error.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>3}  train {:.4}  val {}  step {}  {:.1?}",
            record.epoch,
            record.train_loss,
            record.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            p.step(),
            started.elapsed()
        );
    })?;
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("writing {}", cfg.history.display()));
    }
    if outcome.history.is_empty() {
        write_checkpoint(&cfg.checkpoint, &spec, &params)?;
    }
    match outcome.best_epoch {
        Some(epoch) => println!(
            "{}\tbest epoch {epoch}\tsteps {}",
            cfg.checkpoint.display(),
            outcome.best.step()
        ),
        None => println!("{}\tuntrained\tsteps {}", cfg.checkpoint.display(), params.step()),
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let archive = load_archive(cfg)?;
    let idx: Vec<usize> = match cfg.eval_subset {
        EvalSubset::All => (0..archive.len()).collect(),
        EvalSubset::Test => subsets(cfg, archive.len())?.test,
    };
    if idx.is_empty() {
        bail!("the test split of {} frames is empty; set eval_subset = all", archive.len());
    }
    let frames = pick(&archive.frames, &idx);
    let truths: Option<Vec<Tensor<f64>>> = archive
        .truths
        .as_ref()
        .map(|t| idx.iter().map(|&i| t[i].clone()).collect());
    match cfg.train.precision {
        Precision::F32 => eval_typed::<f32>(cfg, &frames, truths.as_deref()),
        Precision::F64 => eval_typed::<f64>(cfg, &frames, truths.as_deref()),
    }
}

fn eval_typed<T: Real>(cfg: &RunConfig, frames: &[SampleFrame], truths: Option<&[Tensor<f64>]>) -> Result<()> {
    let (spec, params) = read_checkpoint::<T>(&cfg.checkpoint)
        .with_context(|| format!("cannot read checkpoint {}", cfg.checkpoint.display()))?;
    check_spec(&spec, cfg)?;
    let aux = cfg.aux_targets()?;
    let mask = cfg.train.input_mask;

    let mut systems: Vec<(String, Vec<EvalRecord>)> = vec![
        ("model".into(), evaluate_model(&params, &spec, frames, truths, mask)?),
        ("firework".into(), evaluate_channel(frames, truths, aux.fw_channel)?),
        ("bluesky".into(), evaluate_channel(frames, truths, aux.bscan_channel)?),
    ];
    if truths.is_some() {
        // Exact at the stations by construction, so only its dense rows mean anything.
        let mut nearest = evaluate_nearest_station(frames, truths)?;
        for record in &mut nearest {
            record.errors.clear();
        }
        systems.push(("nearest station".into(), nearest));
    }
    let report = seasonal_report(&systems);

    let dir = &cfg.report_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let table = report.to_table();
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.csv"), &report.to_csv())?;
    print!("{table}");

    let count = cfg.heatmaps.min(frames.len());
    if cfg.heatmaps > frames.len() {
        eprintln!("warning: {} heatmaps requested, only {} frames evaluated", cfg.heatmaps, frames.len());
    }
    for (i, frame) in frames.iter().take(count).enumerate() {
        let m0 = mask.mask_for(frame);
        let pred = predict(&params, &spec, &frame.input.cast::<T>(), &m0)?;
        let stem = dir.join(format!("heatmap_{i:03}_{}", frame.timestamp.format("%Y%m%dT%H%MZ")));
        export_heatmap(pred.data(), frame.rows(), frame.cols(), &stem, cfg.heatmap_lo, cfg.heatmap_hi)?;
    }
    eprintln!("report written to {} ({count} heatmaps)", dir.display());
    Ok(())
}

fn check_spec(spec: &NetworkSpec, cfg: &RunConfig) -> Result<()> {
    if spec.input_channels != cfg.registry.len() {
        bail!(
            "checkpoint expects {} input channels, configuration has {}",
            spec.input_channels,
            cfg.registry.len()
        );
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Prints the table and returns whether every check passed.
pub fn gradcheck(cfg: &RunConfig) -> Result<bool> {
    let checks = gradcheck_suite(cfg.seed, cfg.gradcheck_fault)?;
    if cfg.gradcheck_fault {
        eprintln!("gradcheck_fault is set: analytic gradients are negated");
    }
    println!("# central differences, step {GRADCHECK_STEP:e}, tolerance {GRADCHECK_TOLERANCE:e}, seed {}", cfg.seed);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(2).max(2);
    println!("{:<width$}  {:>6}  {:>13}  status", "op", "coords", "max_rel_error");
    let mut all = true;
    for c in &checks {
        let passed = c.report.passed();
        all &= passed;
        println!(
            "{:<width$}  {:>6}  {:>13.6e}  {}",
            c.name,
            c.report.coordinates,
            c.report.max_rel_error,
            if passed { "pass" } else { "FAIL" }
        );
    }
    Ok(all)
}

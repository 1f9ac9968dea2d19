use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use floodnet::dataset::ClassBalance;
use floodnet::eval::{
    accuracy, confusion_at, f_curve_and_critical, monte_carlo_sweep, precision_recall,
    threshold_grid, threshold_metrics, SweepData, Table,
};
use floodnet::floodgen::{
    build_dataset, generate_scenario, ingest_csv, write_graph, write_sensor, DatasetSummary,
    EventTrace, SensorGraph,
};
use floodnet::hybrid::{load_model, save_model, train_from, EpochStats, FeatureScaler};
use floodnet::{Dataset, Model, RngState};

use crate::{CliError, RunConfig};

type CmdResult = Result<(), CliError>;

/// Derivation tag of the train/validation split stream.
const SPLIT_TAG: u64 = 3;

fn comment(cfg: &RunConfig, command: &str) -> Vec<String> {
    vec![format!(
        "floodnet {command} config_hash={} seed={}",
        cfg.hash(),
        cfg.seed
    )]
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn write_table(path: &Path, table: &Table, comments: &[String]) -> CmdResult {
    let file = fs::File::create(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    table
        .write_csv(BufWriter::new(file), comments)
        .map_err(|e| CliError::from(e).context(path.display()))
}

/// Dataset directory, defaulting to the output directory.
fn data_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    cfg.data.clone().unwrap_or_else(|| out.to_path_buf())
}

fn load_dataset(dir: &Path, name: &str) -> Result<Dataset, CliError> {
    let path = dir.join(name);
    Dataset::load(&path).map_err(|e| CliError::from(e).context(path.display()))
}

fn save_dataset(ds: &Dataset, dir: &Path, name: &str) -> CmdResult {
    let path = dir.join(name);
    ds.save(&path).map_err(|e| CliError::from(e).context(path.display()))
}

fn open_model(path: &Path) -> Result<Model, CliError> {
    load_model(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn single_model(cfg: &RunConfig) -> Result<&Path, CliError> {
    match cfg.model_paths.as_slice() {
        [p] => Ok(p),
        [] => Err(CliError::usage("no model given (--model PATH)")),
        _ => Err(CliError::usage("expected a single model file")),
    }
}

fn balance_row(pool: &str, summary: &DatasetSummary, scale: Option<f64>) -> Vec<String> {
    let b = summary.balance;
    vec![
        pool.to_string(),
        summary.events.to_string(),
        summary.samples.to_string(),
        b.positives.to_string(),
        b.negatives.to_string(),
        b.ratio().to_string(),
        scale.map_or(String::new(), |s| s.to_string()),
    ]
}

fn balance_table(rows: Vec<Vec<String>>) -> Table {
    Table {
        header: ["pool", "events", "samples", "positives", "negatives", "neg_per_pos", "storm_scale"]
            .map(String::from)
            .to_vec(),
        rows,
    }
}

fn split_row(name: &str, b: ClassBalance, n: usize) -> Vec<String> {
    vec![
        name.into(),
        String::new(),
        n.to_string(),
        b.positives.to_string(),
        b.negatives.to_string(),
        b.ratio().to_string(),
        String::new(),
    ]
}

/// All traces of a pool written one file per sensor, events back to back.
fn write_pool(graph: &SensorGraph, traces: &[EventTrace], dir: &Path) -> CmdResult {
    create_dir(dir)?;
    for (i, node) in graph.nodes.iter().enumerate() {
        let mut body = Vec::new();
        for (k, tr) in traces.iter().enumerate() {
            let mut buf = Vec::new();
            write_sensor(&mut buf, tr.start, &tr.level[i], &tr.rainfall[i])?;
            let skip = if k == 0 { 0 } else { buf.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1) };
            body.extend_from_slice(&buf[skip..]);
        }
        let path = dir.join(format!("{}.csv", node.id));
        fs::write(&path, body).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn split_pool(cfg: &RunConfig, pool: &Dataset) -> Result<(Dataset, Dataset), CliError> {
    if !(0.0..1.0).contains(&cfg.scenario.val_fraction) {
        return Err(CliError::usage(format!(
            "val_fraction {} not in [0, 1)",
            cfg.scenario.val_fraction
        )));
    }
    let (val, train) = pool.split(cfg.scenario.val_fraction, &mut RngState::new(cfg.seed).derive(SPLIT_TAG));
    Ok((train, val))
}

fn save_splits(out: &Path, train: &Dataset, val: &Dataset, test: &Dataset) -> CmdResult {
    save_dataset(train, out, "train.bin")?;
    save_dataset(val, out, "val.bin")?;
    save_dataset(test, out, "test.bin")
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> CmdResult {
    let sc = generate_scenario(&cfg.scenario, cfg.seed)?;
    let data = sc.datasets(&cfg.scenario, cfg.seed)?;
    create_dir(out)?;
    write_graph(&sc.graph, out).map_err(|e| CliError::from(e).context(out.display()))?;
    write_pool(&sc.graph, &sc.train.traces, &out.join("train"))?;
    write_pool(&sc.graph, &sc.test.traces, &out.join("test"))?;
    save_splits(out, &data.train, &data.val, &data.test)?;
    let table = balance_table(vec![
        balance_row("train_pool", &data.pool_summary, Some(sc.train.scale)),
        split_row("train", data.train.balance(), data.train.len()),
        split_row("val", data.val.balance(), data.val.len()),
        balance_row("test", &data.test_summary, Some(sc.test.scale)),
    ]);
    write_table(&out.join("balance.csv"), &table, &comment(cfg, "simulate"))?;
    println!("graph: {} sensors, {} edges", sc.graph.len(), sc.graph.edges.len());
    println!("training pool: {}", data.pool_summary);
    println!("  train {} / val {}", data.train.balance(), data.val.balance());
    println!("test pool: {}", data.test_summary);
    Ok(())
}

fn sensor_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::io(format!("{}: no sensor CSV files", dir.display())));
    }
    Ok(files)
}

fn ingest_dir(root: &Path, events: &Path) -> Result<(SensorGraph, Vec<EventTrace>), CliError> {
    let files = sensor_files(events)?;
    Ok(ingest_csv(&root.join("graph.csv"), &root.join("edges.csv"), &files)?)
}

pub fn prepare(cfg: &RunConfig, out: &Path) -> CmdResult {
    let input = cfg.input.clone().unwrap_or_else(|| data_dir(cfg, out));
    let (graph, train_traces) = ingest_dir(&input, &input.join("train"))?;
    let (_, test_traces) = ingest_dir(&input, &input.join("test"))?;
    let (pool, pool_summary) = build_dataset(&graph, &train_traces, &cfg.scenario.window)?;
    let (test, test_summary) = build_dataset(&graph, &test_traces, &cfg.scenario.window)?;
    let (train, val) = split_pool(cfg, &pool)?;
    create_dir(out)?;
    save_splits(out, &train, &val, &test)?;
    let table = balance_table(vec![
        balance_row("train_pool", &pool_summary, None),
        split_row("train", train.balance(), train.len()),
        split_row("val", val.balance(), val.len()),
        balance_row("test", &test_summary, None),
    ]);
    write_table(&out.join("balance.csv"), &table, &comment(cfg, "prepare"))?;
    println!("training pool: {pool_summary}");
    println!("test pool: {test_summary}");
    Ok(())
}

const REPORT_FILE: &str = "train_report.csv";
const REPORT_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"];

fn epoch_row(e: &EpochStats) -> Vec<String> {
    vec![
        e.epoch.to_string(),
        e.train_loss.to_string(),
        e.train_acc.to_string(),
        e.val_loss.to_string(),
        e.val_acc.to_string(),
        e.seconds.to_string(),
    ]
}

/// Rows of the report written next to `model_path`, if any.
fn previous_report(model_path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    let path = model_path.with_file_name(REPORT_FILE);
    match fs::File::open(&path) {
        Ok(f) => Ok(Table::read_csv(f).map_err(|e| CliError::from(e).context(path.display()))?.rows),
        Err(_) => Ok(Vec::new()),
    }
}

pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = data_dir(cfg, out);
    let train_set = load_dataset(&dir, "train.bin")?;
    let val = load_dataset(&dir, "val.bin")?;
    let (model, mut rows) = match &cfg.resume {
        Some(path) => {
            let mut model = open_model(path)?;
            let mut mc = model.config.clone();
            for (k, v) in cfg.model.to_pairs() {
                if cfg.explicit_model_keys.contains(k) {
                    mc.set(k, &v)?;
                }
            }
            model = Model::new(mc, model.params).map_err(|e| CliError::from(e).context(path.display()))?;
            (model, previous_report(path)?)
        }
        None => {
            let mut model = Model::init(cfg.model.clone())?;
            if cfg.model.standardize {
                model.params.scaler = FeatureScaler::fit(&train_set);
            }
            (model, Vec::new())
        }
    };
    let start_epoch = rows.len();
    create_dir(out)?;
    let t0 = Instant::now();
    let (model, report) = train_from(model, &train_set, &val, start_epoch, |e| {
        println!(
            "epoch {:>4}  loss {:.5}  acc {:.4}  val_loss {:.5}  val_acc {:.4}",
            e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
        );
    })?;
    rows.extend(report.epochs.iter().map(epoch_row));
    let model_path = out.join("model.bin");
    save_model(&model, &model_path).map_err(|e| CliError::from(e).context(model_path.display()))?;
    let table = Table {
        header: REPORT_HEADER.map(String::from).to_vec(),
        rows,
    };
    write_table(&out.join(REPORT_FILE), &table, &comment(cfg, "train"))?;
    println!(
        "{} model: best epoch {} (val loss {:.5}), stopped at {}{}, {:.1}s",
        model.config.variant,
        report.best_epoch,
        report.best_val_loss,
        report.stopped_epoch,
        if report.early_stopped { " by patience" } else { "" },
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> CmdResult {
    let dir = data_dir(cfg, out);
    let (train, val, test) = (
        load_dataset(&dir, "train.bin")?,
        load_dataset(&dir, "val.bin")?,
        load_dataset(&dir, "test.bin")?,
    );
    let template = floodnet::ModelConfig {
        seed: cfg.seed,
        ..cfg.model.clone()
    };
    let data = SweepData {
        train: &train,
        val: &val,
        test: &test,
    };
    let report = monte_carlo_sweep(&template, data, &cfg.weights, cfg.runs)?;
    create_dir(out)?;
    let comments = comment(cfg, "sweep");
    write_table(&out.join("sweep_summary.csv"), &report.summary_table(), &comments)?;
    write_table(&out.join("sweep_runs.csv"), &report.runs_table(), &comments)?;
    let best = Table {
        header: vec!["best_weight".into(), "critical_threshold".into()],
        rows: vec![vec![
            report.best_weight.map_or("NaN".into(), |w| w.to_string()),
            report.best_threshold.map_or("NaN".into(), |t| t.to_string()),
        ]],
    };
    write_table(&out.join("sweep_best.csv"), &best, &comments)?;
    for s in &report.summaries {
        match &s.mean {
            Some(m) => println!(
                "w={:<6} max_f {:.4}  f_area {:.4}  pr_area {:.4}  ({} ok, {} failed)",
                s.weight, m.max_f, m.f_area, m.pr_area, s.succeeded, s.failed
            ),
            None => println!("w={:<6} all {} runs failed", s.weight, s.failed),
        }
    }
    for r in &report.records {
        if let Err(e) = &r.outcome {
            eprintln!("w={} run {}: {e}", r.weight, r.run);
        }
    }
    let complete = report.summaries.iter().any(|s| s.failed == 0 && s.succeeded > 0);
    match (report.best_weight, report.best_threshold) {
        (Some(w), Some(t)) if complete => {
            println!("best weight {w}, critical threshold {t}");
            Ok(())
        }
        _ => Err(CliError::numeric("no weight completed all runs")),
    }
}

/// Mean seconds per epoch from the report next to `model_path`.
fn seconds_per_epoch(model_path: &Path) -> f64 {
    let rows = previous_report(model_path).unwrap_or_default();
    let secs: Vec<f64> = rows.iter().filter_map(|r| r.get(5)?.parse().ok()).collect();
    if secs.is_empty() {
        f64::NAN
    } else {
        secs.iter().sum::<f64>() / secs.len() as f64
    }
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> CmdResult {
    if cfg.model_paths.is_empty() {
        return Err(CliError::usage("no model given (--model PATH[,PATH...])"));
    }
    let test = load_dataset(&data_dir(cfg, out), "test.bin")?;
    let grid = threshold_grid();
    let header = [
        "model",
        "variant",
        "loss_weight",
        "accuracy",
        "precision",
        "recall",
        "max_accuracy",
        "max_f",
        "critical_threshold",
        "f_area",
        "pr_area",
        "seconds_per_epoch",
    ];
    let mut rows = Vec::new();
    let mut curves = None;
    for path in &cfg.model_paths {
        let model = open_model(path)?;
        let scores = model.predict_dataset(&test).map_err(|e| CliError::from(e).context(path.display()))?;
        let tm = threshold_metrics(&scores, test.labels(), &grid)?;
        let (p, r) = precision_recall(&tm.at_half);
        rows.push(vec![
            path.display().to_string(),
            model.config.variant.to_string(),
            model.config.loss_weight.to_string(),
            accuracy(&tm.at_half)?.to_string(),
            p.to_string(),
            r.to_string(),
            tm.max_accuracy.to_string(),
            tm.f.max_f.to_string(),
            tm.f.critical_threshold.to_string(),
            tm.f.area.to_string(),
            tm.pr.area.to_string(),
            seconds_per_epoch(path).to_string(),
        ]);
        println!(
            "{}: accuracy {:.4}, max F {:.4} at {}, PR area {:.4}",
            path.display(),
            accuracy(&tm.at_half)?,
            tm.f.max_f,
            tm.f.critical_threshold,
            tm.pr.area
        );
        curves.get_or_insert(tm);
    }
    create_dir(out)?;
    let comments = comment(cfg, "evaluate");
    let table = Table {
        header: header.map(String::from).to_vec(),
        rows,
    };
    write_table(&out.join("evaluation.csv"), &table, &comments)?;
    let tm = curves.expect("at least one model");
    let pr = Table {
        header: ["threshold", "precision", "recall", "tp", "fp"].map(String::from).to_vec(),
        rows: tm
            .pr
            .points
            .iter()
            .map(|p| {
                vec![
                    p.threshold.to_string(),
                    p.precision.to_string(),
                    p.recall.to_string(),
                    p.tp.to_string(),
                    p.fp.to_string(),
                ]
            })
            .collect(),
    };
    write_table(&out.join("pr_curve.csv"), &pr, &comments)?;
    let f = Table {
        header: vec!["threshold".into(), "f_measure".into()],
        rows: tm
            .f
            .points
            .iter()
            .map(|(t, f)| vec![t.to_string(), f.to_string()])
            .collect(),
    };
    write_table(&out.join("f_curve.csv"), &f, &comments)
}

/// Critical threshold of `model` on the validation set, or 0.5 without one.
fn validation_threshold(model: &Model, dir: &Path) -> Result<f64, CliError> {
    if !dir.join("val.bin").exists() {
        return Ok(0.5);
    }
    let val = load_dataset(dir, "val.bin")?;
    let scores = model.predict_dataset(&val)?;
    match f_curve_and_critical(&scores, val.labels(), &threshold_grid()) {
        Ok(f) => Ok(f.critical_threshold),
        Err(floodnet::Error::NoPositives) => Ok(0.5),
        Err(e) => Err(e.into()),
    }
}

pub fn predict(cfg: &RunConfig, out: &Path) -> CmdResult {
    if cfg.interval == 0 {
        return Err(CliError::usage("interval must be at least 1"));
    }
    let model_path = single_model(cfg)?;
    let model = open_model(model_path)?;
    let dir = data_dir(cfg, out);
    let event = cfg.event.clone().unwrap_or_else(|| dir.join("test"));
    let (graph, traces) = ingest_dir(&dir, &event)?;
    let window = floodnet::floodgen::WindowConfig {
        stride: cfg.interval,
        ..cfg.scenario.window
    };
    let (ds, summary) = build_dataset(&graph, &traces, &window)?;
    let scores = model
        .predict_dataset(&ds)
        .map_err(|e| CliError::from(e).context(model_path.display()))?;
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => validation_threshold(&model, &dir)?,
    };
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let m = ds.meta(i);
            vec![
                m.sensor_id.clone(),
                m.window_end.format("%Y-%m-%d %H:%M").to_string(),
                p.to_string(),
                ((p > threshold) as u8).to_string(),
                ds.label(i).to_string(),
            ]
        })
        .collect();
    create_dir(out)?;
    let table = Table {
        header: ["sensor_id", "time", "probability", "predicted", "actual"].map(String::from).to_vec(),
        rows,
    };
    let mut comments = comment(cfg, "predict");
    comments.push(format!("threshold={threshold}"));
    write_table(&out.join("predictions.csv"), &table, &comments)?;
    let flagged = scores.iter().filter(|&&p| p > threshold).count();
    let cm = confusion_at(&scores, ds.labels(), threshold)?;
    println!("{summary}");
    println!(
        "{flagged} of {} windows flagged at threshold {threshold} (tp {}, fp {}, fn {})",
        scores.len(),
        cm.tp,
        cm.fp,
        cm.fn_
    );
    std::io::stdout().flush().ok();
    Ok(())
}

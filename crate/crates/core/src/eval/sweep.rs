use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hybrid::{self, ModelConfig};
use crate::rng::RngState;

use super::{accuracy, precision_recall, threshold_grid, threshold_metrics};

/// `1, 2, …, 10, 15, 20, …, 100`.
pub fn default_weight_grid() -> Vec<f64> {
    (1..=10)
        .map(f64::from)
        .chain((15..=100).step_by(5).map(f64::from))
        .collect()
}

/// Seed of run `run` at weight `weight`; stable under changes to the grid.
pub fn run_seed(base: u64, weight: f64, run: usize) -> u64 {
    RngState::new(base)
        .derive(weight.to_bits() ^ (run as u64).rotate_left(48))
        .next_u64()
}

/// Test-set measurements of one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunMetrics {
    pub max_f: f64,
    pub f_area: f64,
    pub pr_area: f64,
    pub critical_threshold: f64,
    pub max_accuracy: f64,
    /// At `φ = 0.5`.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub epochs: f64,
    pub seconds_per_epoch: f64,
}

impl RunMetrics {
    const FIELDS: [&'static str; 10] = [
        "max_f",
        "f_area",
        "pr_area",
        "critical_threshold",
        "max_accuracy",
        "accuracy",
        "precision",
        "recall",
        "epochs",
        "seconds_per_epoch",
    ];

    fn values(&self) -> [f64; 10] {
        [
            self.max_f,
            self.f_area,
            self.pr_area,
            self.critical_threshold,
            self.max_accuracy,
            self.accuracy,
            self.precision,
            self.recall,
            self.epochs,
            self.seconds_per_epoch,
        ]
    }

    fn from_values(v: [f64; 10]) -> Self {
        Self {
            max_f: v[0],
            f_area: v[1],
            pr_area: v[2],
            critical_threshold: v[3],
            max_accuracy: v[4],
            accuracy: v[5],
            precision: v[6],
            recall: v[7],
            epochs: v[8],
            seconds_per_epoch: v[9],
        }
    }

    /// Threshold metrics of `scores` against `labels` on the default grid.
    pub fn measure(
        scores: &[f64],
        labels: &[u8],
        epochs: usize,
        seconds_per_epoch: f64,
    ) -> Result<Self> {
        let m = threshold_metrics(scores, labels, &threshold_grid())?;
        let (precision, recall) = precision_recall(&m.at_half);
        Ok(Self {
            max_f: m.f.max_f,
            f_area: m.f.area,
            pr_area: m.pr.area,
            critical_threshold: m.f.critical_threshold,
            max_accuracy: m.max_accuracy,
            accuracy: accuracy(&m.at_half)?,
            precision,
            recall,
            epochs: epochs as f64,
            seconds_per_epoch,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub weight: f64,
    pub run: usize,
    pub seed: u64,
    /// Error message for failed runs.
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSummary {
    pub weight: f64,
    pub succeeded: usize,
    pub failed: usize,
    /// Arithmetic means over successful runs; `None` when all failed.
    pub mean: Option<RunMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub runs_per_weight: usize,
    /// Ordered by weight (grid order), then run.
    pub records: Vec<RunRecord>,
    pub summaries: Vec<WeightSummary>,
    /// Weight with the highest mean max-F (ties → smaller weight).
    pub best_weight: Option<f64>,
    /// Critical threshold of the best run at `best_weight`.
    pub best_threshold: Option<f64>,
}

/// Inputs of a sweep over trained models.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub test: &'a Dataset,
}

/// Sweep driver with a pluggable trainer: `job(weight, seed)` returns the
/// test-set scores, epochs run and mean seconds per epoch.
pub fn sweep_with<F>(
    weights: &[f64],
    runs: usize,
    base_seed: u64,
    test_labels: &[u8],
    job: F,
) -> Result<SweepReport>
where
    F: Fn(f64, u64) -> Result<(Vec<f64>, usize, f64)> + Sync,
{
    if weights.is_empty() {
        return Err(Error::Config("weight grid is empty".into()));
    }
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("weight {w} must be positive")));
    }
    let jobs: Vec<(f64, usize)> = weights
        .iter()
        .flat_map(|&w| (0..runs).map(move |r| (w, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(weight, run)| {
            let seed = run_seed(base_seed, weight, run);
            let outcome = job(weight, seed)
                .and_then(|(scores, epochs, spe)| {
                    RunMetrics::measure(&scores, test_labels, epochs, spe)
                })
                .map_err(|e| e.to_string());
            RunRecord {
                weight,
                run,
                seed,
                outcome,
            }
        })
        .collect();
    Ok(SweepReport::assemble(runs, weights, records))
}

/// Trains `runs` models per weight from `template` and scores each on the
/// test set.
pub fn monte_carlo_sweep(
    template: &ModelConfig,
    data: SweepData<'_>,
    weights: &[f64],
    runs: usize,
) -> Result<SweepReport> {
    template.validate()?;
    sweep_with(weights, runs, template.seed, data.test.labels(), |w, seed| {
        let cfg = ModelConfig {
            loss_weight: w,
            seed,
            ..template.clone()
        };
        let (model, report) = hybrid::train(&cfg, data.train, data.val)?;
        let scores = model.predict_dataset(data.test)?;
        let n = report.epochs.len().max(1);
        let spe = report.epochs.iter().map(|e| e.seconds).sum::<f64>() / n as f64;
        Ok((scores, report.epochs.len(), spe))
    })
}

impl SweepReport {
    /// Builds summaries from raw records; also the recomputation path used
    /// to check emitted tables.
    pub fn assemble(runs_per_weight: usize, weights: &[f64], mut records: Vec<RunRecord>) -> Self {
        let position = |w: f64| weights.iter().position(|&x| x == w).unwrap_or(usize::MAX);
        records.sort_by_key(|r| (position(r.weight), r.run));
        let summaries: Vec<WeightSummary> = weights
            .iter()
            .map(|&w| {
                let ok: Vec<&RunMetrics> = records
                    .iter()
                    .filter(|r| r.weight == w)
                    .filter_map(|r| r.outcome.as_ref().ok())
                    .collect();
                let total = records.iter().filter(|r| r.weight == w).count();
                let mean = (!ok.is_empty()).then(|| {
                    let mut sum = [0.0; 10];
                    for m in &ok {
                        for (s, v) in sum.iter_mut().zip(m.values()) {
                            *s += v;
                        }
                    }
                    RunMetrics::from_values(sum.map(|s| s / ok.len() as f64))
                });
                WeightSummary {
                    weight: w,
                    succeeded: ok.len(),
                    failed: total - ok.len(),
                    mean,
                }
            })
            .collect();

        let mut best: Option<(f64, f64)> = None;
        for s in &summaries {
            if let Some(m) = &s.mean {
                let better = match best {
                    None => true,
                    Some((bw, bf)) => m.max_f > bf || (m.max_f == bf && s.weight < bw),
                };
                if better {
                    best = Some((s.weight, m.max_f));
                }
            }
        }
        let best_weight = best.map(|b| b.0);
        let best_threshold = best_weight.and_then(|w| {
            let mut top: Option<&RunMetrics> = None;
            for m in records
                .iter()
                .filter(|r| r.weight == w)
                .filter_map(|r| r.outcome.as_ref().ok())
            {
                if top.is_none_or(|t| m.max_f > t.max_f) {
                    top = Some(m);
                }
            }
            top.map(|m| m.critical_threshold)
        });
        Self {
            runs_per_weight,
            records,
            summaries,
            best_weight,
            best_threshold,
        }
    }

    /// One row per weight: the four headline columns, then the remaining
    /// means and run counts.
    pub fn summary_table(&self) -> Table {
        let mut header = vec![
            "weight".to_string(),
            "max_f".into(),
            "f_area".into(),
            "pr_area".into(),
        ];
        header.extend(
            RunMetrics::FIELDS[3..]
                .iter()
                .map(|f| format!("mean_{f}")),
        );
        header.extend(["runs_ok".to_string(), "runs_failed".into()]);
        let rows = self
            .summaries
            .iter()
            .map(|s| {
                let mut row = vec![s.weight.to_string()];
                match &s.mean {
                    Some(m) => row.extend(m.values().iter().map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n("NaN".to_string(), 10)),
                }
                row.extend([s.succeeded.to_string(), s.failed.to_string()]);
                row
            })
            .collect();
        Table { header, rows }
    }

    /// One row per (weight, run) with raw metrics or the failure message.
    pub fn runs_table(&self) -> Table {
        let mut header = vec!["weight".to_string(), "run".into(), "seed".into()];
        header.extend(RunMetrics::FIELDS.iter().map(|f| f.to_string()));
        header.push("error".into());
        let rows = self
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.weight.to_string(), r.run.to_string(), r.seed.to_string()];
                match &r.outcome {
                    Ok(m) => {
                        row.extend(m.values().iter().map(|v| v.to_string()));
                        row.push(String::new());
                    }
                    Err(e) => {
                        row.extend(std::iter::repeat_n("NaN".to_string(), 10));
                        row.push(e.clone());
                    }
                }
                row
            })
            .collect();
        Table { header, rows }
    }

    /// Parses a [`runs_table`](Self::runs_table) back into records.
    pub fn records_from_table(table: &Table) -> Result<Vec<RunRecord>> {
        let col = |name: &str| {
            table
                .header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Contract(format!("runs table lacks column `{name}`")))
        };
        let (cw, cr, cs, ce) = (col("weight")?, col("run")?, col("seed")?, col("error")?);
        let metric_cols = RunMetrics::FIELDS
            .iter()
            .map(|f| col(f))
            .collect::<Result<Vec<_>>>()?;
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Contract(format!("bad number `{s}` in runs table")))
        };
        table
            .rows
            .iter()
            .map(|row| {
                let outcome = if row[ce].is_empty() {
                    let mut v = [0.0; 10];
                    for (slot, &c) in v.iter_mut().zip(&metric_cols) {
                        *slot = num(&row[c])?;
                    }
                    Ok(RunMetrics::from_values(v))
                } else {
                    Err(row[ce].clone())
                };
                Ok(RunRecord {
                    weight: num(&row[cw])?,
                    run: num(&row[cr])? as usize,
                    seed: row[cs]
                        .parse()
                        .map_err(|_| Error::Contract("bad seed in runs table".into()))?,
                    outcome,
                })
            })
            .collect()
    }
}

/// Rows are metrics, columns are model variants.
pub fn variant_table(columns: &[(&str, &WeightSummary)]) -> Table {
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    let metric = |label: &str, f: fn(&RunMetrics) -> f64| {
        let mut row = vec![label.to_string()];
        row.extend(columns.iter().map(|(_, s)| {
            s.mean
                .as_ref()
                .map_or("NaN".to_string(), |m| f(m).to_string())
        }));
        row
    };
    Table {
        header,
        rows: vec![
            metric("max_accuracy", |m| m.max_accuracy),
            metric("max_f", |m| m.max_f),
            metric("f_area", |m| m.f_area),
            metric("pr_area", |m| m.pr_area),
            metric("seconds_per_epoch", |m| m.seconds_per_epoch),
        ],
    }
}

/// A CSV table preceded by `#` comment lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`write_csv`](Self::write_csv), skipping
    /// comment lines.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let header = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err)?;
        Ok(Self { header, rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

use std::fmt;

use rayon::prelude::*;

use crate::dataset::{ClassBalance, Dataset, SampleMeta};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::SensorGraph;
use super::sim::EventTrace;

/// Steps per window (two days).
pub const SEQ_LEN: usize = 96;
/// Label and future-rainfall horizon in steps (six hours).
pub const HORIZON: usize = 12;
pub const N_VARS: usize = 9;

/// Row names of the feature matrix, in order.
pub const FEATURE_NAMES: [&str; N_VARS] = [
    "future_rain",
    "level",
    "pred_future_rain",
    "pred_level",
    "succ_future_rain",
    "succ_level",
    "impermeable_pct",
    "pred_cross_section",
    "succ_cross_section",
];

#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    pub stride: usize,
    /// Zero the three future-rainfall rows.
    pub zero_future_rain: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            stride: 1,
            zero_future_rain: false,
        }
    }
}

/// Rainfall summed over the `HORIZON` steps after `step`.
pub fn future_rain(rain: &[f64], step: usize) -> f64 {
    rain[step + 1..=step + HORIZON].iter().sum()
}

/// Window end steps valid for an `n_steps` trace.
pub fn window_ends(n_steps: usize, stride: usize) -> impl Iterator<Item = usize> {
    (SEQ_LEN - 1..=n_steps.saturating_sub(HORIZON + 1)).step_by(stride.max(1))
}

/// Label of the window ending at `t_end`: level above bank `HORIZON` steps
/// later (strict).
pub fn label_at(trace: &EventTrace, sensor: usize, t_end: usize) -> u8 {
    (trace.level[sensor][t_end + HORIZON] > 0.0) as u8
}

fn mean_of(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The `9×96` feature matrix of `sensor` for the window ending at `t_end`.
/// Neighbor rows average the neighbors with a finite value at each step;
/// rows of absent neighbor sets are zero.
pub fn derive_features(
    graph: &SensorGraph,
    trace: &EventTrace,
    sensor: usize,
    t_end: usize,
    zero_future_rain: bool,
) -> Result<Tensor> {
    let len = trace.n_steps();
    if t_end + 1 < SEQ_LEN || t_end + HORIZON >= len {
        return Err(Error::Window { t_end, len });
    }
    if sensor >= graph.len() || trace.n_sensors() != graph.len() {
        return Err(Error::Contract(format!(
            "sensor {sensor} not in a graph of {} with a trace of {}",
            graph.len(),
            trace.n_sensors()
        )));
    }
    let preds = graph.predecessors(sensor);
    let succs = graph.successors(sensor);
    let area = |ids: &[usize]| ids.iter().map(|&j| graph.nodes[j].cross_section).sum::<f64>();
    let first = t_end + 1 - SEQ_LEN;
    let mut out = Tensor::zeros(&[N_VARS, SEQ_LEN]);
    let data = out.data_mut();
    for (k, s) in (first..=t_end).enumerate() {
        let fr = |j: usize| future_rain(&trace.rainfall[j], s);
        if !zero_future_rain {
            data[k] = fr(sensor);
            data[2 * SEQ_LEN + k] = mean_of(preds.iter().map(|&j| fr(j)));
            data[4 * SEQ_LEN + k] = mean_of(succs.iter().map(|&j| fr(j)));
        }
        data[SEQ_LEN + k] = trace.level[sensor][s];
        data[3 * SEQ_LEN + k] = mean_of(preds.iter().map(|&j| trace.level[j][s]));
        data[5 * SEQ_LEN + k] = mean_of(succs.iter().map(|&j| trace.level[j][s]));
        data[6 * SEQ_LEN + k] = graph.nodes[sensor].impermeable_pct;
        data[7 * SEQ_LEN + k] = area(&preds);
        data[8 * SEQ_LEN + k] = area(&succs);
    }
    Ok(out)
}

/// Counts reported after windowing.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub events: usize,
    pub sensors: usize,
    pub samples: usize,
    /// Windows dropped for missing own readings.
    pub skipped: usize,
    pub balance: ClassBalance,
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.samples == 0 {
            return write!(
                f,
                "0 samples from {} events x {} sensors (traces need at least {} steps)",
                self.events,
                self.sensors,
                SEQ_LEN + HORIZON
            );
        }
        write!(
            f,
            "{} samples from {} events x {} sensors, {}",
            self.samples, self.events, self.sensors, self.balance
        )?;
        if self.skipped > 0 {
            write!(f, ", {} windows skipped for gaps", self.skipped)?;
        }
        Ok(())
    }
}

/// Slides windows over every sensor of every trace. Windows whose own level
/// or rainfall is missing anywhere in `[t_end − 95, t_end + 12]` are
/// skipped. Samples are ordered by (event, sensor, t_end).
pub fn build_dataset(
    graph: &SensorGraph,
    traces: &[EventTrace],
    cfg: &WindowConfig,
) -> Result<(Dataset, DatasetSummary)> {
    if cfg.stride == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    let per_event: Vec<Result<(Dataset, usize)>> = traces
        .par_iter()
        .enumerate()
        .map(|(e, trace)| {
            let mut ds = Dataset::new(N_VARS, SEQ_LEN);
            let mut skipped = 0;
            for sensor in 0..graph.len() {
                for t_end in window_ends(trace.n_steps(), cfg.stride) {
                    let span = t_end + 1 - SEQ_LEN..=t_end + HORIZON;
                    let complete = trace.level[sensor][span.clone()]
                        .iter()
                        .chain(&trace.rainfall[sensor][span])
                        .all(|v| v.is_finite());
                    if !complete {
                        skipped += 1;
                        continue;
                    }
                    let x = derive_features(graph, trace, sensor, t_end, cfg.zero_future_rain)?;
                    ds.push(
                        x.data(),
                        label_at(trace, sensor, t_end),
                        SampleMeta {
                            sensor_id: graph.nodes[sensor].id.clone(),
                            event: e as u32,
                            t_end: t_end as u32,
                            window_end: trace.time_of(t_end),
                        },
                    )?;
                }
            }
            Ok((ds, skipped))
        })
        .collect();
    let mut all = Dataset::new(N_VARS, SEQ_LEN);
    let mut skipped = 0;
    for r in per_event {
        let (ds, s) = r?;
        all.extend(&ds)?;
        skipped += s;
    }
    let summary = DatasetSummary {
        events: traces.len(),
        sensors: graph.len(),
        samples: all.len(),
        skipped,
        balance: all.balance(),
    };
    Ok((all, summary))
}

/// Label counts of [`build_dataset`] without building features.
pub fn count_labels(graph: &SensorGraph, traces: &[EventTrace], stride: usize) -> ClassBalance {
    let mut bal = ClassBalance {
        positives: 0,
        negatives: 0,
    };
    for trace in traces {
        for sensor in 0..graph.len() {
            for t_end in window_ends(trace.n_steps(), stride) {
                if label_at(trace, sensor, t_end) == 1 {
                    bal.positives += 1;
                } else {
                    bal.negatives += 1;
                }
            }
        }
    }
    bal
}

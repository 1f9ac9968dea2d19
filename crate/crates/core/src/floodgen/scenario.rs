use chrono::{Duration, NaiveDate, NaiveDateTime};

use crate::dataset::{ClassBalance, Dataset};
use crate::error::{Error, Result};
use crate::rng::RngState;

use super::features::{build_dataset, count_labels, DatasetSummary, WindowConfig};
use super::graph::{generate_graph, GraphConfig, SensorGraph};
use super::sim::{rainfall_field, sample_storms, simulate_event, EventTrace, SimConfig, Storm, StormConfig};

/// Everything needed to synthesize a training pool and a held-out test pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_sensors: usize,
    pub train_events: usize,
    pub test_events: usize,
    pub graph: GraphConfig,
    pub sim: SimConfig,
    pub storm: StormConfig,
    pub window: WindowConfig,
    /// Target negatives per positive in the training pool.
    pub train_ratio: f64,
    pub train_tolerance: f64,
    /// Target negatives per positive in the test pool.
    pub test_ratio: f64,
    pub test_tolerance: f64,
    /// Fraction of the training pool held out for validation.
    pub val_fraction: f64,
    pub start: NaiveDateTime,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_sensors: 40,
            train_events: 3,
            test_events: 1,
            graph: GraphConfig::default(),
            sim: SimConfig::default(),
            storm: StormConfig::default(),
            window: WindowConfig::default(),
            train_ratio: 3.5,
            train_tolerance: 0.5,
            test_ratio: 15.77,
            test_tolerance: 2.0,
            val_fraction: 0.2,
            start: NaiveDate::from_ymd_opt(2017, 8, 25)
                .unwrap()
                .and_hms_opt(0, 0, 0)
                .unwrap(),
        }
    }
}

/// A group of events whose storms share one calibrated intensity scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGroup {
    pub storms: Vec<(usize, Vec<Storm>)>,
    pub scale: f64,
    pub traces: Vec<EventTrace>,
    pub balance: ClassBalance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: SensorGraph,
    pub train: EventGroup,
    pub test: EventGroup,
}

/// Train/validation/test datasets of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub pool_summary: DatasetSummary,
    pub test_summary: DatasetSummary,
}

const BISECTION_STEPS: usize = 60;
const SCALE_RANGE: (f64, f64) = (1e-3, 1e3);

fn simulate_group(
    graph: &SensorGraph,
    storms: &[(usize, Vec<Storm>)],
    scale: f64,
    cfg: &ScenarioConfig,
    first_event: usize,
) -> Result<Vec<EventTrace>> {
    storms
        .iter()
        .enumerate()
        .map(|(k, (n_steps, cells))| {
            let rain = rainfall_field(graph, cells, *n_steps, scale);
            // Events a week apart so timestamps never collide.
            let start = cfg.start + Duration::days(7 * (first_event + k) as i64);
            simulate_event(graph, &rain, &cfg.sim, start)
        })
        .collect()
}

/// Finds an intensity scale whose label ratio lies within `tolerance` of
/// `target`, bisecting in log space (more rain → fewer negatives per
/// positive).
fn calibrate(
    graph: &SensorGraph,
    storms: Vec<(usize, Vec<Storm>)>,
    target: f64,
    tolerance: f64,
    cfg: &ScenarioConfig,
    first_event: usize,
) -> Result<Result<EventGroup, f64>> {
    let ratio_at = |scale: f64| -> Result<(f64, Vec<EventTrace>, ClassBalance)> {
        let traces = simulate_group(graph, &storms, scale, cfg, first_event)?;
        let bal = count_labels(graph, &traces, cfg.window.stride);
        Ok((bal.ratio(), traces, bal))
    };
    let (mut lo, mut hi) = (SCALE_RANGE.0.ln(), SCALE_RANGE.1.ln());
    let mut best: Option<(f64, f64, Vec<EventTrace>, ClassBalance)> = None;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let scale = mid.exp();
        let (ratio, traces, bal) = ratio_at(scale)?;
        let miss = (ratio - target).abs();
        if best.as_ref().is_none_or(|b| miss < (b.1 - target).abs()) {
            best = Some((scale, ratio, traces, bal));
        }
        if miss <= tolerance {
            break;
        }
        if ratio > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (scale, ratio, traces, balance) = best.expect("at least one bisection step");
    if (ratio - target).abs() > tolerance {
        return Ok(Err(ratio));
    }
    Ok(Ok(EventGroup {
        storms,
        scale,
        traces,
        balance,
    }))
}

/// Storm draws whose footprint cannot reach the target ratio at any scale
/// are discarded and redrawn from the same stream.
const STORM_DRAWS: usize = 25;

pub fn generate_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    if cfg.train_events == 0 || cfg.test_events == 0 {
        return Err(Error::Config("need at least one training and one test event".into()));
    }
    let root = RngState::new(seed);
    let graph = generate_graph(cfg.n_sensors, &cfg.graph, &mut root.derive(1))?;
    cfg.sim.validate(&graph)?;
    let mut storm_rng = root.derive(2);
    let mut group = |events: usize, target: f64, tolerance: f64, first: usize, name: &str| {
        let mut closest = f64::NAN;
        for _ in 0..STORM_DRAWS {
            let storms = (0..events)
                .map(|_| sample_storms(&graph, &cfg.storm, &mut storm_rng))
                .collect();
            match calibrate(&graph, storms, target, tolerance, cfg, first)? {
                Ok(g) => return Ok(g),
                Err(r) => {
                    if closest.is_nan() || (r - target).abs() < (closest - target).abs() {
                        closest = r;
                    }
                }
            }
        }
        Err(Error::Config(format!(
            "{name} pool: could not calibrate storms to 1:{target} ± {tolerance} \
             (closest 1:{closest:.2}); adjust storm or sensor settings"
        )))
    };
    let train = group(cfg.train_events, cfg.train_ratio, cfg.train_tolerance, 0, "training")?;
    let test = group(
        cfg.test_events,
        cfg.test_ratio,
        cfg.test_tolerance,
        cfg.train_events,
        "test",
    )?;
    Ok(Scenario { graph, train, test })
}

impl Scenario {
    /// Windows both pools and splits the training pool into train and
    /// validation sets at random.
    pub fn datasets(&self, cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioData> {
        let (pool, pool_summary) = build_dataset(&self.graph, &self.train.traces, &cfg.window)?;
        let (test, test_summary) = build_dataset(&self.graph, &self.test.traces, &cfg.window)?;
        if !(0.0..1.0).contains(&cfg.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} not in [0, 1)",
                cfg.val_fraction
            )));
        }
        let (val, train) = pool.split(cfg.val_fraction, &mut RngState::new(seed).derive(3));
        Ok(ScenarioData {
            train,
            val,
            test,
            pool_summary,
            test_summary,
        })
    }
}

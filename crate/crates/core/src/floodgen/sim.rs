use chrono::{Duration, NaiveDateTime};

use crate::error::{Error, Result};
use crate::rng::RngState;

use super::graph::{SensorGraph, SensorNode};

pub const STEP_MINUTES: i64 = 30;
pub const STEPS_PER_DAY: usize = 48;
/// Allowed simulated event length in steps (3 to 5 days).
pub const EVENT_STEPS: (usize, usize) = (3 * STEPS_PER_DAY, 5 * STEPS_PER_DAY);

/// Reservoir parameters shared by all sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Contributing catchment area per unit channel area.
    pub catchment_gain: f64,
    /// Per-step discharge rate per ft² of cross-section.
    pub discharge_per_ft2: f64,
    /// Share of the above-bank excess passed downstream each step.
    pub spill_fraction: f64,
    /// Initial depth as a fraction of bank height.
    pub initial_fill: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            catchment_gain: 30.0,
            discharge_per_ft2: 2e-5,
            spill_fraction: 0.5,
            initial_fill: 0.3,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, graph: &SensorGraph) -> Result<()> {
        if !(self.catchment_gain >= 0.0) || !(self.discharge_per_ft2 >= 0.0) {
            return Err(Error::Config(
                "catchment_gain and discharge_per_ft2 must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.spill_fraction) || !(self.initial_fill >= 0.0) {
            return Err(Error::Config(
                "spill_fraction must be in [0, 1] and initial_fill non-negative".into(),
            ));
        }
        if let Some(n) = graph
            .nodes
            .iter()
            .find(|n| self.discharge_rate(n) > 1.0)
        {
            return Err(Error::Config(format!(
                "discharge rate at sensor {} exceeds 1 per step",
                n.id
            )));
        }
        Ok(())
    }

    pub fn discharge_rate(&self, node: &SensorNode) -> f64 {
        self.discharge_per_ft2 * node.cross_section
    }

    /// Depth gain (ft) from `rain` inches falling on `node` in one step.
    pub fn runoff(&self, node: &SensorNode, rain: f64) -> f64 {
        rain * node.impermeable_pct / 100.0 * self.catchment_gain / 12.0
    }
}

/// One rain cell: raised-cosine in time, compactly supported in space.
#[derive(Debug, Clone, PartialEq)]
pub struct Storm {
    /// Peak rainfall, inches per step.
    pub intensity: f64,
    pub center: (f64, f64),
    pub radius: f64,
    pub start: usize,
    pub duration: usize,
    /// Same rainfall at every sensor, ignoring center and radius.
    pub uniform: bool,
}

impl Storm {
    pub fn rain_at(&self, node: &SensorNode, step: usize) -> f64 {
        if step < self.start || step >= self.start + self.duration {
            return 0.0;
        }
        let phase = (step - self.start) as f64 + 0.5;
        let temporal = (std::f64::consts::PI * phase / self.duration as f64).sin().powi(2);
        let spatial = if self.uniform {
            1.0
        } else {
            let d2 = (node.x - self.center.0).powi(2) + (node.y - self.center.1).powi(2);
            (1.0 - d2 / (self.radius * self.radius)).max(0.0)
        };
        self.intensity * temporal * spatial
    }
}

/// Ranges for [`sample_storms`].
#[derive(Debug, Clone, PartialEq)]
pub struct StormConfig {
    pub cells: (usize, usize),
    pub intensity: (f64, f64),
    /// Radius as a fraction of the graph's x-extent.
    pub radius_frac: (f64, f64),
    pub duration: (usize, usize),
    pub event_steps: (usize, usize),
}

impl Default for StormConfig {
    fn default() -> Self {
        Self {
            cells: (1, 3),
            intensity: (0.2, 0.8),
            radius_frac: (0.2, 0.6),
            duration: (12, 48),
            event_steps: EVENT_STEPS,
        }
    }
}

/// Random event length and rain cells over `graph`.
pub fn sample_storms(graph: &SensorGraph, cfg: &StormConfig, rng: &mut RngState) -> (usize, Vec<Storm>) {
    let range = |rng: &mut RngState, (lo, hi): (usize, usize)| lo + rng.below(hi - lo + 1);
    let n_steps = range(rng, cfg.event_steps);
    let (x_min, x_max) = graph
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), n| (a.min(n.x), b.max(n.x)));
    let (y_min, y_max) = graph
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), n| (a.min(n.y), b.max(n.y)));
    let extent = (x_max - x_min).max(1.0);
    let cells = range(rng, cfg.cells);
    let storms = (0..cells)
        .map(|_| {
            let duration = range(rng, cfg.duration).min(n_steps / 2);
            // Rain after the first window has filled, ending before the last label.
            let earliest = STEPS_PER_DAY.min(n_steps - duration);
            let latest = n_steps.saturating_sub(duration + 12).max(earliest);
            Storm {
                intensity: rng.uniform_range(cfg.intensity.0, cfg.intensity.1),
                center: (
                    rng.uniform_range(x_min, x_max),
                    rng.uniform_range(y_min, y_max),
                ),
                radius: extent * rng.uniform_range(cfg.radius_frac.0, cfg.radius_frac.1),
                start: range(rng, (earliest, latest)),
                duration,
                uniform: false,
            }
        })
        .collect();
    (n_steps, storms)
}

/// Per-sensor rainfall series (inches per step), storms scaled by `scale`.
pub fn rainfall_field(graph: &SensorGraph, storms: &[Storm], n_steps: usize, scale: f64) -> Vec<Vec<f64>> {
    graph
        .nodes
        .iter()
        .map(|node| {
            (0..n_steps)
                .map(|s| scale * storms.iter().map(|st| st.rain_at(node, s)).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Per-sensor series on a shared 30-minute time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTrace {
    pub start: NaiveDateTime,
    /// `[sensor][step]`, inches per step.
    pub rainfall: Vec<Vec<f64>>,
    /// `[sensor][step]`, ft relative to bank top (positive = overflowing).
    /// Missing readings are NaN.
    pub level: Vec<Vec<f64>>,
}

impl EventTrace {
    pub fn n_sensors(&self) -> usize {
        self.level.len()
    }

    pub fn n_steps(&self) -> usize {
        self.level.first().map_or(0, Vec::len)
    }

    pub fn time_of(&self, step: usize) -> NaiveDateTime {
        self.start + Duration::minutes(STEP_MINUTES * step as i64)
    }
}

/// Integrates every sensor's linear reservoir over the event.
///
/// Per step: `depth += runoff + inflow − rate·max(depth, 0)`, where inflow
/// is the spill delivered by predecessors during the previous step. Above
/// bank, `spill_fraction` of the excess leaves the node and is shared
/// equally (by volume) among its successors, arriving one step later.
#[allow(clippy::needless_range_loop)]
pub fn simulate_event(
    graph: &SensorGraph,
    rainfall: &[Vec<f64>],
    cfg: &SimConfig,
    start: NaiveDateTime,
) -> Result<EventTrace> {
    cfg.validate(graph)?;
    let n = graph.len();
    if rainfall.len() != n {
        return Err(Error::dim("simulate_event", &[n], &[rainfall.len()]));
    }
    let n_steps = rainfall.first().map_or(0, Vec::len);
    if !(EVENT_STEPS.0..=EVENT_STEPS.1).contains(&n_steps) {
        return Err(Error::Config(format!(
            "event length {n_steps} steps outside 3 to 5 days ({}..={})",
            EVENT_STEPS.0, EVENT_STEPS.1
        )));
    }
    if rainfall.iter().any(|r| r.len() != n_steps) {
        return Err(Error::Contract("rainfall series differ in length".into()));
    }
    if rainfall.iter().flatten().any(|&r| !(r >= 0.0)) {
        return Err(Error::Contract("rainfall must be non-negative".into()));
    }
    let successors: Vec<Vec<usize>> = (0..n).map(|i| graph.successors(i)).collect();
    let rates: Vec<f64> = graph.nodes.iter().map(|nd| cfg.discharge_rate(nd)).collect();
    let mut depth: Vec<f64> = graph
        .nodes
        .iter()
        .map(|nd| cfg.initial_fill * nd.bank_height)
        .collect();
    let mut inflow = vec![0.0; n];
    let mut level = vec![Vec::with_capacity(n_steps); n];
    for s in 0..n_steps {
        let mut next_inflow = vec![0.0; n];
        for i in 0..n {
            let node = &graph.nodes[i];
            let d = depth[i];
            let mut nd = d + cfg.runoff(node, rainfall[i][s]) + inflow[i] - rates[i] * d.max(0.0);
            if nd > node.bank_height && cfg.spill_fraction > 0.0 {
                let spill = cfg.spill_fraction * (nd - node.bank_height);
                nd -= spill;
                let share = spill * node.cross_section / successors[i].len().max(1) as f64;
                for &j in &successors[i] {
                    next_inflow[j] += share / graph.nodes[j].cross_section;
                }
            }
            if !nd.is_finite() {
                return Err(Error::SimulationDivergence {
                    step: s,
                    sensor: node.id.clone(),
                });
            }
            depth[i] = nd;
            level[i].push(nd - node.bank_height);
        }
        inflow = next_inflow;
    }
    Ok(EventTrace {
        start,
        rainfall: rainfall.to_vec(),
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floodgen::graph::{generate_graph, GraphConfig};

    fn t0() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2019, 9, 17)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    #[test]
    fn storm_shape() {
        let node = SensorNode {
            id: "a".into(),
            bank_height: 10.0,
            cross_section: 1000.0,
            impermeable_pct: 50.0,
            x: 0.0,
            y: 0.0,
        };
        let st = Storm {
            intensity: 1.0,
            center: (0.0, 0.0),
            radius: 2.0,
            start: 10,
            duration: 4,
            uniform: false,
        };
        assert_eq!(st.rain_at(&node, 9), 0.0);
        assert_eq!(st.rain_at(&node, 14), 0.0);
        assert!(st.rain_at(&node, 11) > 0.8);
        let far = SensorNode { x: 3.0, ..node.clone() };
        assert_eq!(st.rain_at(&far, 11), 0.0);
        assert!(Storm { uniform: true, ..st }.rain_at(&far, 11) > 0.8);
    }

    #[test]
    fn length_and_rate_preconditions() {
        let g = generate_graph(3, &GraphConfig::default(), &mut RngState::new(0)).unwrap();
        let short = vec![vec![0.0; 100]; 3];
        assert!(simulate_event(&g, &short, &SimConfig::default(), t0()).is_err());
        let cfg = SimConfig {
            discharge_per_ft2: 1.0,
            ..SimConfig::default()
        };
        assert!(simulate_event(&g, &vec![vec![0.0; 150]; 3], &cfg, t0()).is_err());
    }

    #[test]
    fn sampled_storms_fit_event() {
        let g = generate_graph(10, &GraphConfig::default(), &mut RngState::new(0)).unwrap();
        for seed in 0..50 {
            let (n, storms) = sample_storms(&g, &StormConfig::default(), &mut RngState::new(seed));
            assert!((EVENT_STEPS.0..=EVENT_STEPS.1).contains(&n));
            assert!(storms.iter().all(|s| s.start + s.duration <= n));
        }
    }
}

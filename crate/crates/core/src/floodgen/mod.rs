//! Synthetic channel-network flood data and real-data CSV ingestion.
//!
//! A random drainage DAG is driven by storm cells; each sensor is a linear
//! reservoir that spills downstream above bank height. Traces are cut into
//! `9×96` windows labelled by overflow six hours after the window ends.

mod csvio;
mod features;
mod graph;
mod scenario;
mod sim;

pub use csvio::{
    forward_fill, ingest_csv, parse_timestamp, read_graph, read_sensor, write_event, write_graph,
    write_sensor, SensorSeries, MAX_FILL, SENSOR_HEADER,
};
pub use features::{
    build_dataset, count_labels, derive_features, future_rain, label_at, window_ends,
    DatasetSummary, WindowConfig, FEATURE_NAMES, HORIZON, N_VARS, SEQ_LEN,
};
pub use graph::{generate_graph, GraphConfig, SensorGraph, SensorNode, MAX_DEGREE};
pub use scenario::{generate_scenario, EventGroup, Scenario, ScenarioConfig, ScenarioData};
pub use sim::{
    rainfall_field, sample_storms, simulate_event, EventTrace, SimConfig, Storm, StormConfig,
    EVENT_STEPS, STEPS_PER_DAY, STEP_MINUTES,
};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Upper bound on in- and out-degree of generated graphs.
pub const MAX_DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorNode {
    pub id: String,
    /// ft
    pub bank_height: f64,
    /// ft²
    pub cross_section: f64,
    /// percent, `[0, 100]`
    pub impermeable_pct: f64,
    pub x: f64,
    pub y: f64,
}

/// Channel network; edges point downstream (`from → to`).
#[derive(Debug, Clone, PartialEq)]
pub struct SensorGraph {
    pub nodes: Vec<SensorNode>,
    pub edges: Vec<(usize, usize)>,
}

/// Attribute ranges for [`generate_graph`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub bank_height: (f64, f64),
    pub cross_section: (f64, f64),
    pub impermeable_pct: (f64, f64),
    /// Probability that a node gets a second downstream edge.
    pub branch_prob: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            bank_height: (10.0, 30.0),
            cross_section: (500.0, 6500.0),
            impermeable_pct: (10.0, 90.0),
            branch_prob: 0.15,
        }
    }
}

impl SensorGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn predecessors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect()
    }

    pub fn successors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    /// Kahn's algorithm; cycle → contract error.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.len();
        let mut indeg = vec![0usize; n];
        for &(_, to) in &self.edges {
            indeg[to] += 1;
        }
        let mut ready: Vec<usize> = (0..n).rev().filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop() {
            order.push(i);
            for j in self.successors(i) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Contract("sensor graph has a cycle".into()));
        }
        Ok(order)
    }

    /// Structural and attribute invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        for (a, b) in &self.edges {
            if *a >= n || *b >= n {
                return Err(Error::Contract(format!("edge ({a}, {b}) out of range")));
            }
            if a == b {
                return Err(Error::Contract(format!("self-loop at node {a}")));
            }
        }
        for node in &self.nodes {
            if !(node.bank_height > 0.0 && node.cross_section > 0.0) {
                return Err(Error::Contract(format!(
                    "sensor {} needs positive bank height and cross-section",
                    node.id
                )));
            }
            if !(0.0..=100.0).contains(&node.impermeable_pct) {
                return Err(Error::Contract(format!(
                    "sensor {} impermeable share {} outside [0, 100]",
                    node.id, node.impermeable_pct
                )));
            }
        }
        self.topological_order().map(|_| ())
    }
}

/// Random layered DAG: node `i` sits higher than every node after it, and
/// each non-final node drains into one (sometimes two) of the next few
/// nodes with free in-degree.
pub fn generate_graph(n_sensors: usize, cfg: &GraphConfig, rng: &mut RngState) -> Result<SensorGraph> {
    if n_sensors < 2 {
        return Err(Error::Config(format!(
            "a sensor graph needs at least 2 sensors, got {n_sensors}"
        )));
    }
    let nodes: Vec<SensorNode> = (0..n_sensors)
        .map(|i| SensorNode {
            id: format!("S{i:03}"),
            bank_height: rng.uniform_range(cfg.bank_height.0, cfg.bank_height.1),
            cross_section: rng.uniform_range(cfg.cross_section.0, cfg.cross_section.1),
            impermeable_pct: rng.uniform_range(cfg.impermeable_pct.0, cfg.impermeable_pct.1),
            x: i as f64,
            y: rng.uniform_range(-1.0, 1.0) * (n_sensors as f64).sqrt(),
        })
        .collect();
    let mut indeg = vec![0usize; n_sensors];
    let mut edges = Vec::new();
    for i in 0..n_sensors - 1 {
        let open = |indeg: &[usize], lo: usize, hi: usize| -> Vec<usize> {
            (lo..hi).filter(|&j| indeg[j] < MAX_DEGREE).collect()
        };
        let mut candidates = open(&indeg, i + 1, (i + 4).min(n_sensors));
        if candidates.is_empty() {
            candidates = open(&indeg, i + 1, n_sensors);
        }
        if candidates.is_empty() {
            continue;
        }
        let first = candidates.remove(rng.below(candidates.len()));
        edges.push((i, first));
        indeg[first] += 1;
        if !candidates.is_empty() && rng.bernoulli(cfg.branch_prob) {
            let second = candidates[rng.below(candidates.len())];
            edges.push((i, second));
            indeg[second] += 1;
        }
    }
    let graph = SensorGraph { nodes, edges };
    graph.validate()?;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_nodes_one_edge() {
        let g = generate_graph(2, &GraphConfig::default(), &mut RngState::new(1)).unwrap();
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn one_node_is_rejected() {
        assert!(matches!(
            generate_graph(1, &GraphConfig::default(), &mut RngState::new(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn degrees_and_ranges() {
        for seed in 0..20 {
            let g = generate_graph(60, &GraphConfig::default(), &mut RngState::new(seed)).unwrap();
            for i in 0..g.len() {
                assert!(g.predecessors(i).len() <= MAX_DEGREE);
                assert!(g.successors(i).len() <= MAX_DEGREE);
                let n = &g.nodes[i];
                assert!((10.0..30.0).contains(&n.bank_height));
                assert!((500.0..6500.0).contains(&n.cross_section));
                assert!((10.0..90.0).contains(&n.impermeable_pct));
            }
            assert!(g.edges.iter().all(|(a, b)| a < b));
        }
    }

    #[test]
    fn cycle_is_detected() {
        let mut g = generate_graph(3, &GraphConfig::default(), &mut RngState::new(0)).unwrap();
        g.edges.push((2, 0));
        assert!(g.validate().is_err());
    }
}

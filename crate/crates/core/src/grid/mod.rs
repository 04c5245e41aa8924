//! Grid description, topology utilities and scenario data.

pub mod fixtures;
mod format;
mod scenario;

pub use format::{load_grid, parse_grid, write_grid};
pub use scenario::{
    generate_scenarios, read_dataset, split_dataset, write_dataset, Dataset, GenBounds,
    LoadScenario, ScenarioConfig, Split,
};

use petgraph::unionfind::UnionFind;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Per-node loads and generation limits, all per-unit.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub p_load_nominal: f64,
    pub q_load_nominal: f64,
    pub p_gen_min: f64,
    pub p_gen_max: f64,
    pub q_gen_min: f64,
    pub q_gen_max: f64,
}

impl NodeSpec {
    /// A pure load node: generation pinned to zero.
    pub fn load(id: NodeId, p_load: f64, q_load: f64) -> Self {
        NodeSpec {
            id,
            p_load_nominal: p_load,
            q_load_nominal: q_load,
            p_gen_min: 0.0,
            p_gen_max: 0.0,
            q_gen_min: 0.0,
            q_gen_max: 0.0,
        }
    }
}

/// A directed arc. Orientation fixes the sign of its flow variables.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub r: f64,
    pub x: f64,
}

impl EdgeSpec {
    pub fn new(from: NodeId, to: NodeId, r: f64, x: f64) -> Self {
        EdgeSpec { from, to, r, x }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.from == node || self.to == node
    }
}

/// Immutable, validated grid. Construct through [`GridSpec::new`] or [`load_grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    name: String,
    nodes: Vec<NodeSpec>,
    lines: Vec<EdgeSpec>,
    switches: Vec<EdgeSpec>,
    slack: NodeId,
    v_min: f64,
    v_max: f64,
    big_m: f64,
}

impl GridSpec {
    /// Builds a grid and checks every structural invariant. `nodes` may be
    /// given in any order; they are sorted by id.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        mut nodes: Vec<NodeSpec>,
        lines: Vec<EdgeSpec>,
        switches: Vec<EdgeSpec>,
        slack: NodeId,
        v_min: f64,
        v_max: f64,
        big_m: f64,
    ) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        let grid = GridSpec {
            name: name.into(),
            nodes,
            lines,
            switches,
            slack,
            v_min,
            v_max,
            big_m,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.nodes.is_empty() {
            return fail("grid has no nodes".into());
        }
        for (expected, node) in self.nodes.iter().enumerate() {
            if node.id != expected {
                return fail(format!(
                    "node ids must be unique and contiguous from 0: expected {expected}, found {}",
                    node.id
                ));
            }
            let finite = [
                node.p_load_nominal,
                node.q_load_nominal,
                node.p_gen_min,
                node.p_gen_max,
                node.q_gen_min,
                node.q_gen_max,
            ]
            .iter()
            .all(|v| v.is_finite());
            if !finite {
                return fail(format!("node {}: non-finite value", node.id));
            }
            if node.p_gen_min > node.p_gen_max || node.q_gen_min > node.q_gen_max {
                return fail(format!("node {}: inverted generation bounds", node.id));
            }
        }
        let n = self.nodes.len();
        for (kind, arcs) in [("line", &self.lines), ("switch", &self.switches)] {
            for (k, arc) in arcs.iter().enumerate() {
                if arc.from >= n || arc.to >= n {
                    return fail(format!("{kind} {k}: unknown node"));
                }
                if arc.from == arc.to {
                    return fail(format!("{kind} {k}: self-loop at node {}", arc.from));
                }
                if !(arc.x > 0.0) || !arc.x.is_finite() {
                    return fail(format!("{kind} {k}: nonpositive reactance"));
                }
                if !(arc.r >= 0.0) || !arc.r.is_finite() {
                    return fail(format!("{kind} {k}: negative resistance"));
                }
            }
        }
        if !(self.v_min < self.v_max) {
            return fail("v_min must be below v_max".into());
        }
        if !(self.big_m > 0.0) {
            return fail("big_m must be positive".into());
        }
        if self.slack >= n {
            return fail(format!("slack node {} does not exist", self.slack));
        }
        let mut uf = UnionFind::new(n);
        for arc in self.lines.iter().chain(&self.switches) {
            uf.union(arc.from, arc.to);
        }
        let root = uf.find(0);
        if (1..n).any(|j| uf.find(j) != root) {
            return fail("disconnected grid".into());
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn lines(&self) -> &[EdgeSpec] {
        &self.lines
    }

    pub fn switches(&self) -> &[EdgeSpec] {
        &self.switches
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn num_switches(&self) -> usize {
        self.switches.len()
    }

    pub fn slack(&self) -> NodeId {
        self.slack
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    /// Number of switches that must be closed for a spanning tree: `N - 1 - M`.
    pub fn required_closed_count(&self) -> Result<usize> {
        let s = self.num_nodes() as i64 - 1 - self.num_lines() as i64;
        if s < 0 || s > self.num_switches() as i64 {
            return Err(Error::Validation(format!(
                "grid cannot be radial: N-1-M = {s} with {} switches",
                self.num_switches()
            )));
        }
        Ok(s as usize)
    }

    /// True iff lines plus the closed switches form a spanning tree.
    pub fn is_radial(&self, y: &[bool]) -> bool {
        if y.len() != self.num_switches() {
            return false;
        }
        let n = self.num_nodes();
        let closed = y.iter().filter(|&&c| c).count();
        if self.num_lines() + closed != n - 1 {
            return false;
        }
        let mut uf = UnionFind::new(n);
        let arcs = self
            .lines
            .iter()
            .chain(self.switches.iter().zip(y).filter(|(_, &c)| c).map(|(a, _)| a));
        for arc in arcs {
            // a cycle with exactly N-1 edges means some node is left out
            if !uf.union(arc.from, arc.to) {
                return false;
            }
        }
        true
    }

    /// `|delta_A(j)|`: number of lines (not switches) incident to `node`.
    pub fn fixed_degree(&self, node: NodeId) -> usize {
        self.lines.iter().filter(|a| a.touches(node)).count()
    }

    /// Number of lines and switches incident to `node`.
    pub fn total_degree(&self, node: NodeId) -> usize {
        self.fixed_degree(node) + self.switches.iter().filter(|a| a.touches(node)).count()
    }

    /// Non-slack nodes with a positive nominal active generation cap.
    pub fn pv_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.id != self.slack && n.p_gen_max > 0.0)
            .map(|n| n.id)
            .collect()
    }

    /// Sum of nominal active loads.
    pub fn peak_load(&self) -> f64 {
        self.nodes.iter().map(|n| n.p_load_nominal).sum()
    }

    /// Stable identity of the grid shape: `N`, `M`, `M_sw` and a hash over the arc list.
    pub fn signature(&self) -> String {
        let mut hasher = Sha256::new();
        for (tag, arcs) in [("L", &self.lines), ("S", &self.switches)] {
            for a in arcs.iter() {
                hasher.update(format!("{tag}{}-{};", a.from, a.to).as_bytes());
            }
        }
        hasher.update(format!("slack{}", self.slack).as_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!(
            "n{}-m{}-s{}-{hex}",
            self.num_nodes(),
            self.num_lines(),
            self.num_switches()
        )
    }

    /// Relabels nodes with `perm[old] = new`. Arc order is preserved.
    pub fn relabel(&self, perm: &[NodeId]) -> Result<GridSpec> {
        check_permutation(perm, self.num_nodes())?;
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: perm[n.id],
                ..n.clone()
            })
            .collect();
        let map = |arcs: &[EdgeSpec]| {
            arcs.iter()
                .map(|a| EdgeSpec::new(perm[a.from], perm[a.to], a.r, a.x))
                .collect()
        };
        GridSpec::new(
            self.name.clone(),
            nodes,
            map(&self.lines),
            map(&self.switches),
            perm[self.slack],
            self.v_min,
            self.v_max,
            self.big_m,
        )
    }

    /// Returns a copy with line `line` turned into an additional (last) switch.
    pub fn with_line_as_switch(&self, line: usize, name: impl Into<String>) -> Result<GridSpec> {
        if line >= self.num_lines() {
            return Err(Error::Validation(format!("line {line} does not exist")));
        }
        let mut lines = self.lines.clone();
        let arc = lines.remove(line);
        let mut switches = self.switches.clone();
        switches.push(arc);
        GridSpec::new(
            name,
            self.nodes.clone(),
            lines,
            switches,
            self.slack,
            self.v_min,
            self.v_max,
            self.big_m,
        )
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Validation("permutation length mismatch".into()));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Validation("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

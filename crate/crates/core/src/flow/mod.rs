//! Linearized DistFlow physics.
//!
//! Flow variables live on directed arcs; a positive flow runs from `from` to
//! `to`. Lines always obey Ohm's law, switches only when closed. The recovery
//! chain ([`recover_flow_state`]) turns independent variables (voltages, active
//! flow codes, switch statuses) into a full [`FlowState`] whose balance and
//! Ohm residuals vanish by construction.

use std::io::Write;

use crate::error::Result;
use crate::grid::{EdgeSpec, GridSpec, LoadScenario};

/// Full decision vector for one scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub p_sw: Vec<f64>,
    pub q_sw: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
}

impl FlowState {
    pub fn zeros(grid: &GridSpec) -> Self {
        let (n, m, s) = (grid.num_nodes(), grid.num_lines(), grid.num_switches());
        FlowState {
            y: vec![0.0; s],
            v: vec![1.0; n],
            p_line: vec![0.0; m],
            q_line: vec![0.0; m],
            p_sw: vec![0.0; s],
            q_sw: vec![0.0; s],
            p_gen: vec![0.0; n],
            q_gen: vec![0.0; n],
        }
    }

    pub fn closed(&self) -> Vec<bool> {
        self.y.iter().map(|&y| y > 0.5).collect()
    }

    /// Writes one row per variable group: `group,values...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        let groups: [(&str, &Vec<f64>); 8] = [
            ("y", &self.y),
            ("v", &self.v),
            ("p_line", &self.p_line),
            ("q_line", &self.q_line),
            ("p_sw", &self.p_sw),
            ("q_sw", &self.q_sw),
            ("p_gen", &self.p_gen),
            ("q_gen", &self.q_gen),
        ];
        for (name, values) in groups {
            let mut row = vec![name.to_string()];
            row.extend(values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `max{0, h_k}` entries: four generation-limit entries per node
/// (`p_min`, `p_max`, `q_min`, `q_max`), then one connectivity entry per node.
#[derive(Clone, Debug, PartialEq)]
pub struct ViolationVector {
    pub entries: Vec<f64>,
}

impl ViolationVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn generation(&self) -> &[f64] {
        &self.entries[..self.entries.len() / 5 * 4]
    }

    pub fn connectivity(&self) -> &[f64] {
        &self.entries[self.entries.len() / 5 * 4..]
    }
}

/// Line losses `sum_A (p^2 + q^2) R`. Switch arcs do not contribute.
pub fn objective(grid: &GridSpec, s: &FlowState) -> f64 {
    grid.lines()
        .iter()
        .zip(s.p_line.iter().zip(&s.q_line))
        .map(|(arc, (p, q))| (p * p + q * q) * arc.r)
        .sum()
}

fn arcs_with_flows<'a>(
    grid: &'a GridSpec,
    p_line: &'a [f64],
    p_sw: &'a [f64],
) -> impl Iterator<Item = (&'a EdgeSpec, f64)> + 'a {
    grid.lines()
        .iter()
        .zip(p_line.iter().copied())
        .chain(grid.switches().iter().zip(p_sw.iter().copied()))
}

/// Net outflow per node over lines and switches.
fn net_outflow(grid: &GridSpec, line: &[f64], sw: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; grid.num_nodes()];
    for (arc, f) in arcs_with_flows(grid, line, sw) {
        out[arc.from] += f;
        out[arc.to] -= f;
    }
    out
}

/// Per node `(p_gen - p_load - net_out_p, q_gen - q_load - net_out_q)`.
pub fn balance_residuals(grid: &GridSpec, scenario: &LoadScenario, s: &FlowState) -> Vec<(f64, f64)> {
    let out_p = net_outflow(grid, &s.p_line, &s.p_sw);
    let out_q = net_outflow(grid, &s.q_line, &s.q_sw);
    (0..grid.num_nodes())
        .map(|j| {
            (
                s.p_gen[j] - scenario.p_load[j] - out_p[j],
                s.q_gen[j] - scenario.q_load[j] - out_q[j],
            )
        })
        .collect()
}

/// Ohm's law residual `v_i - v_j - 2(R p + X q)` per arc (lines, then switches).
/// Open switches report zero.
pub fn ohm_residuals(grid: &GridSpec, s: &FlowState) -> Vec<f64> {
    let residual = |arc: &EdgeSpec, p: f64, q: f64| s.v[arc.from] - s.v[arc.to] - 2.0 * (arc.r * p + arc.x * q);
    let lines = grid
        .lines()
        .iter()
        .enumerate()
        .map(|(k, arc)| residual(arc, s.p_line[k], s.q_line[k]));
    let switches = grid.switches().iter().enumerate().map(|(k, arc)| {
        if s.y[k] > 0.5 {
            residual(arc, s.p_sw[k], s.q_sw[k])
        } else {
            0.0
        }
    });
    lines.chain(switches).collect()
}

/// Step 1: reactive flow from Ohm's law, `q = ((v_i - v_j)/2 - R p) / X`.
pub fn reactive_flow(arc: &EdgeSpec, v_from: f64, v_to: f64, p: f64) -> f64 {
    ((v_from - v_to) / 2.0 - arc.r * p) / arc.x
}

/// Step 1 over all arcs. Switch values are provisional until gated.
pub fn recover_reactive_flows(grid: &GridSpec, v: &[f64], p_line: &[f64], p_sw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = |arcs: &[EdgeSpec], p: &[f64]| {
        arcs.iter()
            .zip(p)
            .map(|(arc, &p)| reactive_flow(arc, v[arc.from], v[arc.to], p))
            .collect::<Vec<_>>()
    };
    (q(grid.lines(), p_line), q(grid.switches(), p_sw))
}

/// Affine decoding of a `[0, 1]` flow code onto `[-M, M]`.
pub fn decode_flow(code: f64, big_m: f64) -> f64 {
    (code - 0.5) * 2.0 * big_m
}

/// Step 2: `p_sw = (p_hat - 0.5) 2M y` and `q_sw = q_tilde y`.
///
/// The reactive value is gated in physical units so that a closed switch keeps
/// the Ohm's-law value from step 1; an open switch carries exactly zero.
pub fn apply_switch_gating(p_hat: &[f64], q_tilde: &[f64], y: &[f64], big_m: f64) -> (Vec<f64>, Vec<f64>) {
    let p = p_hat
        .iter()
        .zip(y)
        .map(|(&c, &y)| if y == 0.0 { 0.0 } else { decode_flow(c, big_m) * y })
        .collect();
    let q = q_tilde
        .iter()
        .zip(y)
        .map(|(&q, &y)| if y == 0.0 { 0.0 } else { q * y })
        .collect();
    (p, q)
}

/// Step 3: nodal generation from the balance equations. The slack node
/// absorbs the network imbalance like any other node.
pub fn recover_generation(
    grid: &GridSpec,
    scenario: &LoadScenario,
    p_line: &[f64],
    q_line: &[f64],
    p_sw: &[f64],
    q_sw: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let out_p = net_outflow(grid, p_line, p_sw);
    let out_q = net_outflow(grid, q_line, q_sw);
    let p = scenario.p_load.iter().zip(&out_p).map(|(l, o)| l + o).collect();
    let q = scenario.q_load.iter().zip(&out_q).map(|(l, o)| l + o).collect();
    (p, q)
}

/// Runs steps 1-3. `p_hat_line` and `p_hat_sw` are `[0, 1]` codes decoded
/// with the grid's flow cap; `v` must already be scaled into the voltage box.
pub fn recover_flow_state(
    grid: &GridSpec,
    scenario: &LoadScenario,
    v: &[f64],
    p_hat_line: &[f64],
    p_hat_sw: &[f64],
    y: &[f64],
) -> FlowState {
    let m = grid.big_m();
    let p_line: Vec<f64> = p_hat_line.iter().map(|&c| decode_flow(c, m)).collect();
    let p_sw_ungated: Vec<f64> = p_hat_sw.iter().map(|&c| decode_flow(c, m)).collect();
    let (q_line, q_tilde) = recover_reactive_flows(grid, v, &p_line, &p_sw_ungated);
    let (p_sw, q_sw) = apply_switch_gating(p_hat_sw, &q_tilde, y, m);
    let (p_gen, q_gen) = recover_generation(grid, scenario, &p_line, &q_line, &p_sw, &q_sw);
    FlowState {
        y: y.to_vec(),
        v: v.to_vec(),
        p_line,
        q_line,
        p_sw,
        q_sw,
        p_gen,
        q_gen,
    }
}

/// Generation-limit and connectivity violations. Voltage and switch-flow
/// limits are absent: recovery satisfies them by construction.
pub fn inequality_vector(grid: &GridSpec, scenario: &LoadScenario, s: &FlowState) -> ViolationVector {
    let n = grid.num_nodes();
    let mut entries = Vec::with_capacity(5 * n);
    for j in 0..n {
        let b = scenario.gen_bounds(grid, j);
        entries.push((b.p_min - s.p_gen[j]).max(0.0));
        entries.push((s.p_gen[j] - b.p_max).max(0.0));
        entries.push((b.q_min - s.q_gen[j]).max(0.0));
        entries.push((s.q_gen[j] - b.q_max).max(0.0));
    }
    let mut incident = vec![0.0; n];
    for (arc, &y) in grid.switches().iter().zip(&s.y) {
        incident[arc.from] += y;
        incident[arc.to] += y;
    }
    for (j, y_sum) in incident.into_iter().enumerate() {
        entries.push((1.0 - (grid.fixed_degree(j) as f64 + y_sum)).max(0.0));
    }
    ViolationVector { entries }
}

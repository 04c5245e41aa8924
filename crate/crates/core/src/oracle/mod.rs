//! Exact reconfiguration by enumerating radial topologies and solving one
//! convex QP per topology.

pub mod qp;

use std::cmp::Ordering;
use std::io::{Read, Write};

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::grid::{GridSpec, LoadScenario};
use qp::{EqualityQp, QpOptions};

/// An arc that conducts in a candidate topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeEdge {
    Line(usize),
    Switch(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyCandidate {
    pub y: Vec<bool>,
    pub tree_edges: Vec<TreeEdge>,
}

impl TopologyCandidate {
    pub fn y_f64(&self) -> Vec<f64> {
        self.y.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleStatus {
    Optimal,
    Infeasible,
}

impl OracleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleStatus::Optimal => "optimal",
            OracleStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub y_star: Vec<bool>,
    /// `None` when infeasible.
    pub flow_state: Option<FlowState>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: OracleStatus,
}

impl OracleSolution {
    fn infeasible(y: Vec<bool>) -> Self {
        OracleSolution {
            y_star: y,
            flow_state: None,
            objective: f64::INFINITY,
            kkt_residual: f64::NAN,
            status: OracleStatus::Infeasible,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == OracleStatus::Optimal
    }
}

/// All `C(M_sw, S)` closed-switch subsets that form a spanning tree, in
/// lexicographic order of the closed index sets.
pub fn enumerate_radial_topologies(grid: &GridSpec) -> Result<Vec<TopologyCandidate>> {
    let s = grid.required_closed_count()?;
    let ns = grid.num_switches();
    let mut out = Vec::new();
    for closed in (0..ns).combinations(s) {
        let mut y = vec![false; ns];
        for &k in &closed {
            y[k] = true;
        }
        if grid.is_radial(&y) {
            let tree_edges = (0..grid.num_lines())
                .map(TreeEdge::Line)
                .chain(closed.into_iter().map(TreeEdge::Switch))
                .collect();
            out.push(TopologyCandidate { y, tree_edges });
        }
    }
    Ok(out)
}

/// Variable layout of the fixed-topology QP:
/// `[v (N), p_line (M), q_line (M), p_sw (C), q_sw (C), p_gen (N), q_gen (N)]`
/// where `C` is the number of closed switches.
#[derive(Clone, Debug)]
pub struct TopologyQp {
    pub qp: EqualityQp,
    closed: Vec<usize>,
    n: usize,
    m: usize,
    y: Vec<bool>,
}

impl TopologyQp {
    pub fn build(grid: &GridSpec, scenario: &LoadScenario, candidate: &TopologyCandidate) -> Result<Self> {
        scenario.check(grid)?;
        let n = grid.num_nodes();
        let m = grid.num_lines();
        let closed: Vec<usize> = (0..grid.num_switches()).filter(|&k| candidate.y[k]).collect();
        let c = closed.len();
        let (iv, ipl, iql) = (0, n, n + m);
        let (ips, iqs) = (n + 2 * m, n + 2 * m + c);
        let (ipg, iqg) = (n + 2 * m + 2 * c, 2 * n + 2 * m + 2 * c);
        let dim = iqg + n;

        let mut hessian = DMatrix::zeros(dim, dim);
        for (k, arc) in grid.lines().iter().enumerate() {
            hessian[(ipl + k, ipl + k)] = 2.0 * arc.r;
            hessian[(iql + k, iql + k)] = 2.0 * arc.r;
        }

        // balance (2N) then Ohm on lines and closed switches
        let rows = 2 * n + m + c;
        let mut a = DMatrix::zeros(rows, dim);
        let mut b = DVector::zeros(rows);
        for j in 0..n {
            a[(j, ipg + j)] = 1.0;
            a[(n + j, iqg + j)] = 1.0;
            b[j] = scenario.p_load[j];
            b[n + j] = scenario.q_load[j];
        }
        let arcs = grid
            .lines()
            .iter()
            .enumerate()
            .map(|(k, arc)| (arc, ipl + k, iql + k))
            .chain(
                closed
                    .iter()
                    .enumerate()
                    .map(|(idx, &k)| (&grid.switches()[k], ips + idx, iqs + idx)),
            );
        for (row, (arc, p, q)) in arcs.enumerate() {
            // outflow at `from`, inflow at `to`
            a[(arc.from, p)] -= 1.0;
            a[(arc.to, p)] += 1.0;
            a[(n + arc.from, q)] -= 1.0;
            a[(n + arc.to, q)] += 1.0;
            let r = 2 * n + row;
            a[(r, iv + arc.from)] = 1.0;
            a[(r, iv + arc.to)] = -1.0;
            a[(r, p)] = -2.0 * arc.r;
            a[(r, q)] = -2.0 * arc.x;
        }

        let mut lower = vec![f64::NEG_INFINITY; dim];
        let mut upper = vec![f64::INFINITY; dim];
        for j in 0..n {
            lower[iv + j] = grid.v_min();
            upper[iv + j] = grid.v_max();
            let gb = scenario.gen_bounds(grid, j);
            lower[ipg + j] = gb.p_min;
            upper[ipg + j] = gb.p_max;
            lower[iqg + j] = gb.q_min;
            upper[iqg + j] = gb.q_max;
        }
        lower[iv + grid.slack()] = 1.0;
        upper[iv + grid.slack()] = 1.0;
        for idx in 0..c {
            for base in [ips, iqs] {
                lower[base + idx] = -grid.big_m();
                upper[base + idx] = grid.big_m();
            }
        }
        if !(grid.v_min() <= 1.0 && 1.0 <= grid.v_max()) {
            return Err(Error::Infeasible("slack voltage 1 outside the voltage box".into()));
        }
        Ok(TopologyQp {
            qp: EqualityQp {
                hessian,
                linear: DVector::zeros(dim),
                a_eq: a,
                b_eq: b,
                lower,
                upper,
            },
            closed,
            n,
            m,
            y: candidate.y.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.qp.dim()
    }

    /// Maps a QP variable vector onto the full switch/flow layout.
    pub fn to_flow_state(&self, x: &DVector<f64>) -> FlowState {
        let (n, m, c) = (self.n, self.m, self.closed.len());
        let seg = |start: usize, len: usize| x.rows(start, len).iter().copied().collect::<Vec<_>>();
        let ns = self.y.len();
        let mut p_sw = vec![0.0; ns];
        let mut q_sw = vec![0.0; ns];
        for (idx, &k) in self.closed.iter().enumerate() {
            p_sw[k] = x[n + 2 * m + idx];
            q_sw[k] = x[n + 2 * m + c + idx];
        }
        FlowState {
            y: self.y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            v: seg(0, n),
            p_line: seg(n, m),
            q_line: seg(n + m, m),
            p_sw,
            q_sw,
            p_gen: seg(n + 2 * m + 2 * c, n),
            q_gen: seg(2 * n + 2 * m + 2 * c, n),
        }
    }
}

pub fn solve_fixed_topology(
    grid: &GridSpec,
    scenario: &LoadScenario,
    candidate: &TopologyCandidate,
) -> Result<OracleSolution> {
    solve_fixed_topology_with(grid, scenario, candidate, &QpOptions::default())
}

pub fn solve_fixed_topology_with(
    grid: &GridSpec,
    scenario: &LoadScenario,
    candidate: &TopologyCandidate,
    opts: &QpOptions,
) -> Result<OracleSolution> {
    let problem = match TopologyQp::build(grid, scenario, candidate) {
        Ok(p) => p,
        Err(Error::Infeasible(_)) => return Ok(OracleSolution::infeasible(candidate.y.clone())),
        Err(e) => return Err(e),
    };
    match problem.qp.solve(opts) {
        Ok(sol) => Ok(OracleSolution {
            y_star: candidate.y.clone(),
            flow_state: Some(problem.to_flow_state(&sol.x)),
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            status: OracleStatus::Optimal,
        }),
        Err(Error::Infeasible(_)) => Ok(OracleSolution::infeasible(candidate.y.clone())),
        Err(e) => Err(e),
    }
}

fn lex_cmp(a: &[bool], b: &[bool]) -> Ordering {
    a.iter().cmp(b.iter())
}

/// Best radial topology. Objectives within `1e-12` (relative) tie and the
/// lexicographically smallest `y` wins.
pub fn solve_dyr(grid: &GridSpec, scenario: &LoadScenario) -> Result<OracleSolution> {
    let candidates = enumerate_radial_topologies(grid)?;
    solve_dyr_over(grid, scenario, &candidates)
}

pub fn solve_dyr_over(
    grid: &GridSpec,
    scenario: &LoadScenario,
    candidates: &[TopologyCandidate],
) -> Result<OracleSolution> {
    let mut best: Option<OracleSolution> = None;
    for cand in candidates {
        let sol = solve_fixed_topology(grid, scenario, cand)?;
        if !sol.is_optimal() {
            continue;
        }
        best = Some(match best {
            None => sol,
            Some(cur) => {
                let tol = 1e-12 * cur.objective.abs().max(1.0);
                let better = sol.objective < cur.objective - tol
                    || ((sol.objective - cur.objective).abs() <= tol
                        && lex_cmp(&sol.y_star, &cur.y_star) == Ordering::Less);
                if better {
                    sol
                } else {
                    cur
                }
            }
        });
    }
    Ok(best.unwrap_or_else(|| OracleSolution::infeasible(vec![false; grid.num_switches()])))
}

/// One oracle row as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRecord {
    pub scenario: usize,
    pub grid_signature: String,
    pub solution: OracleSolution,
}

/// Oracle CSV: `scenario,grid,status,objective,kkt_residual,y_*,v_*,pg_*,qg_*`.
pub fn write_oracle_csv<W: Write>(grid: &GridSpec, records: &[OracleRecord], out: W) -> Result<()> {
    let (n, ns) = (grid.num_nodes(), grid.num_switches());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["scenario", "grid", "status", "objective", "kkt_residual"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..ns).map(|k| format!("y_{k}")));
    header.extend((0..n).map(|j| format!("v_{j}")));
    header.extend((0..n).map(|j| format!("pg_{j}")));
    header.extend((0..n).map(|j| format!("qg_{j}")));
    w.write_record(&header)?;
    for rec in records {
        let sol = &rec.solution;
        let mut row = vec![
            rec.scenario.to_string(),
            rec.grid_signature.clone(),
            sol.status.as_str().to_string(),
            sol.objective.to_string(),
            sol.kkt_residual.to_string(),
        ];
        row.extend(sol.y_star.iter().map(|&c| (c as u8).to_string()));
        match &sol.flow_state {
            Some(fs) => {
                for group in [&fs.v, &fs.p_gen, &fs.q_gen] {
                    row.extend(group.iter().map(f64::to_string));
                }
            }
            None => row.extend(std::iter::repeat_n(String::new(), 3 * n)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows written by [`write_oracle_csv`]. Flow states are rebuilt with
/// the voltage and generation columns only (flows are not stored).
pub fn read_oracle_csv<R: Read>(grid: &GridSpec, input: R) -> Result<Vec<OracleRecord>> {
    let (n, ns) = (grid.num_nodes(), grid.num_switches());
    let mut rdr = csv::Reader::from_reader(input);
    let width = rdr.headers()?.len();
    if width != 5 + ns + 3 * n {
        return Err(Error::parse(1, format!("oracle file does not match grid {}", grid.name())));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |col: usize| -> Result<f64> {
            rec[col]
                .parse()
                .map_err(|_| Error::parse(line, format!("column {col}: not a number")))
        };
        let scenario: usize = rec[0]
            .parse()
            .map_err(|_| Error::parse(line, "bad scenario id"))?;
        let status = match &rec[2] {
            "optimal" => OracleStatus::Optimal,
            "infeasible" => OracleStatus::Infeasible,
            other => return Err(Error::parse(line, format!("unknown status `{other}`"))),
        };
        let y_star = (0..ns).map(|k| &rec[5 + k] == "1").collect::<Vec<_>>();
        let flow_state = if status == OracleStatus::Optimal {
            let mut fs = FlowState::zeros(grid);
            fs.y = y_star.iter().map(|&c| c as u8 as f64).collect();
            for j in 0..n {
                fs.v[j] = num(5 + ns + j)?;
                fs.p_gen[j] = num(5 + ns + n + j)?;
                fs.q_gen[j] = num(5 + ns + 2 * n + j)?;
            }
            Some(fs)
        } else {
            None
        };
        out.push(OracleRecord {
            scenario,
            grid_signature: rec[1].to_string(),
            solution: OracleSolution {
                y_star,
                flow_state,
                objective: num(3)?,
                kkt_residual: num(4)?,
                status,
            },
        });
    }
    Ok(out)
}

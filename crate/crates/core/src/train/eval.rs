use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;

use super::metrics::{dispatch_error, topology_error, violation_stats, voltage_error, ViolationStats};
use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::flow::{inequality_vector, objective, FlowState};
use crate::grid::{GridSpec, LoadScenario};
use crate::model::{committee_forward, GridContext, ModelParams};
use crate::oracle::{solve_dyr, OracleSolution};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub label: String,
    pub forced: Option<Vec<Option<bool>>>,
    pub epsilon: f64,
    /// Scenarios per timed forward pass.
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            label: "graphyr".into(),
            forced: None,
            epsilon: 0.01,
            batch_size: 200,
        }
    }
}

/// Metrics for one scenario. Oracle-relative fields are `None` when the
/// oracle found no feasible topology.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioRow {
    pub scenario: usize,
    pub dispatch_error: Option<f64>,
    pub voltage_error: Option<f64>,
    pub topology_error: Option<f64>,
    pub violations: ViolationStats,
    pub objective: f64,
    pub oracle_objective: Option<f64>,
    pub voltage_violations: usize,
}

/// Aggregate row of an [`EvalReport`], also what `report` merges.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub label: String,
    pub grid: String,
    pub scenarios: usize,
    pub dispatch_error: f64,
    pub voltage_error: f64,
    pub topology_error: f64,
    /// Fraction of scenarios whose topology equals the oracle's.
    pub topology_match: f64,
    pub ineq_mean: f64,
    /// Mean over scenarios of the largest violation.
    pub ineq_max: f64,
    /// Mean number of entries above `epsilon` per scenario.
    pub num_viol_over_eps: f64,
    pub voltage_violations: usize,
    pub epsilon: f64,
    /// Mean wall-clock milliseconds per forward batch.
    pub inference_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub summary: Summary,
    pub rows: Vec<ScenarioRow>,
    pub states: Vec<FlowState>,
}

/// Oracle solutions for `scenarios`, solved in parallel.
pub fn solve_oracle(grid: &GridSpec, scenarios: &[LoadScenario]) -> Result<Vec<OracleSolution>> {
    scenarios.par_iter().map(|s| solve_dyr(grid, s)).collect()
}

/// Committee-averaged eval-mode predictions scored against the oracle.
/// `ids` name the scenarios in the report; `oracle` is solved on demand when
/// absent. Parameters are only read.
pub fn evaluate(
    committee: &[&ModelParams],
    grid: &GridSpec,
    ids: &[usize],
    scenarios: &[LoadScenario],
    oracle: Option<&[OracleSolution]>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if ids.len() != scenarios.len() {
        return Err(Error::Shape(format!("{} ids for {} scenarios", ids.len(), scenarios.len())));
    }
    if scenarios.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Validation("batch size must be positive".into()));
    }
    let solved;
    let oracle = match oracle {
        Some(o) if o.len() == scenarios.len() => o,
        Some(o) => {
            return Err(Error::Shape(format!("{} oracle rows for {} scenarios", o.len(), scenarios.len())));
        }
        None => {
            solved = solve_oracle(grid, scenarios)?;
            &solved
        }
    };

    let mut states = Vec::with_capacity(scenarios.len());
    let mut times = Vec::new();
    let forced = opts.forced.as_deref();
    let full_ctx = GridContext::new(grid, opts.batch_size.min(scenarios.len()), forced)?;
    for chunk in scenarios.chunks(opts.batch_size) {
        let tail;
        let ctx = if chunk.len() == full_ctx.batch {
            &full_ctx
        } else {
            tail = GridContext::new(grid, chunk.len(), forced)?;
            &tail
        };
        let start = Instant::now();
        let out = committee_forward(committee, ctx, chunk, Mode::Eval)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        states.extend(out.states);
    }

    let mut rows: Vec<ScenarioRow> = (0..scenarios.len())
        .into_par_iter()
        .map(|i| score(grid, ids[i], &scenarios[i], &states[i], &oracle[i], opts.epsilon))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    let states = order.iter().map(|&i| states[i].clone()).collect();
    rows = order.iter().map(|&i| rows[i].clone()).collect();

    let summary = summarize(opts, grid, &rows, times.iter().sum::<f64>() / times.len() as f64);
    Ok(EvalReport { summary, rows, states })
}

fn score(
    grid: &GridSpec,
    id: usize,
    sc: &LoadScenario,
    s: &FlowState,
    star: &OracleSolution,
    epsilon: f64,
) -> Result<ScenarioRow> {
    let violations = violation_stats(&inequality_vector(grid, sc, s), epsilon);
    let voltage_violations = s.v.iter().filter(|&&v| v < grid.v_min() || v > grid.v_max()).count();
    let mut row = ScenarioRow {
        scenario: id,
        dispatch_error: None,
        voltage_error: None,
        topology_error: None,
        violations,
        objective: objective(grid, s),
        oracle_objective: None,
        voltage_violations,
    };
    if let Some(fs) = star.flow_state.as_ref().filter(|_| star.is_optimal()) {
        let ys: Vec<f64> = star.y_star.iter().map(|&c| c as u8 as f64).collect();
        row.dispatch_error = Some(dispatch_error(s, fs));
        row.voltage_error = Some(voltage_error(s, fs));
        row.topology_error = Some(topology_error(&s.y, &ys)?);
        row.oracle_objective = Some(star.objective);
    }
    Ok(row)
}

fn summarize(opts: &EvalOptions, grid: &GridSpec, rows: &[ScenarioRow], inference_ms: f64) -> Summary {
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let feasible = |f: fn(&ScenarioRow) -> Option<f64>| mean(rows.iter().filter_map(f).collect());
    Summary {
        label: opts.label.clone(),
        grid: grid.name().to_string(),
        scenarios: rows.len(),
        dispatch_error: feasible(|r| r.dispatch_error),
        voltage_error: feasible(|r| r.voltage_error),
        topology_error: feasible(|r| r.topology_error),
        topology_match: feasible(|r| r.topology_error.map(|t| (t == 0.0) as u8 as f64)),
        ineq_mean: mean(rows.iter().map(|r| r.violations.mean).collect()),
        ineq_max: mean(rows.iter().map(|r| r.violations.max).collect()),
        num_viol_over_eps: mean(rows.iter().map(|r| r.violations.count_over as f64).collect()),
        voltage_violations: rows.iter().map(|r| r.voltage_violations).sum(),
        epsilon: opts.epsilon,
        inference_ms,
    }
}

const COLUMNS: [&str; 14] = [
    "label",
    "grid",
    "scenario",
    "dispatch_error",
    "voltage_error",
    "topology_error",
    "topology_match",
    "ineq_mean",
    "ineq_max",
    "num_viol_over_eps",
    "voltage_violations",
    "objective",
    "oracle_objective",
    "inference_ms",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Aggregate row first (`scenario` = `all`), then one row per scenario.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(COLUMNS)?;
        let s = &self.summary;
        w.write_record(summary_record(s, "all"))?;
        for r in &self.rows {
            w.write_record([
                s.label.clone(),
                s.grid.clone(),
                r.scenario.to_string(),
                opt(r.dispatch_error),
                opt(r.voltage_error),
                opt(r.topology_error),
                opt(r.topology_error.map(|t| (t == 0.0) as u8 as f64)),
                r.violations.mean.to_string(),
                r.violations.max.to_string(),
                r.violations.count_over.to_string(),
                r.voltage_violations.to_string(),
                r.objective.to_string(),
                opt(r.oracle_objective),
                String::new(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn summary_record(s: &Summary, scenario: &str) -> Vec<String> {
    vec![
        s.label.clone(),
        s.grid.clone(),
        scenario.to_string(),
        s.dispatch_error.to_string(),
        s.voltage_error.to_string(),
        s.topology_error.to_string(),
        s.topology_match.to_string(),
        s.ineq_mean.to_string(),
        s.ineq_max.to_string(),
        s.num_viol_over_eps.to_string(),
        s.voltage_violations.to_string(),
        String::new(),
        String::new(),
        s.inference_ms.to_string(),
    ]
}

/// Reads the aggregate row of a report written by [`EvalReport::write_csv`].
/// The scenario count and epsilon are not stored and come back as 0 and NaN.
pub fn read_summary<R: Read>(input: R) -> Result<Summary> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(COLUMNS) {
        return Err(Error::parse(1, "not an evaluation report"));
    }
    let rec = rdr
        .records()
        .next()
        .ok_or_else(|| Error::parse(2, "report has no aggregate row"))??;
    if &rec[2] != "all" {
        return Err(Error::parse(2, "first row is not the aggregate"));
    }
    let num = |col: usize| -> Result<f64> {
        rec[col]
            .parse()
            .map_err(|_| Error::parse(2, format!("column `{}`: not a number", COLUMNS[col])))
    };
    Ok(Summary {
        label: rec[0].to_string(),
        grid: rec[1].to_string(),
        scenarios: 0,
        dispatch_error: num(3)?,
        voltage_error: num(4)?,
        topology_error: num(5)?,
        topology_match: num(6)?,
        ineq_mean: num(7)?,
        ineq_max: num(8)?,
        num_viol_over_eps: num(9)?,
        voltage_violations: num(10)? as usize,
        epsilon: f64::NAN,
        inference_ms: num(13)?,
    })
}

/// Comparison table with one row per report, sorted by grid then label.
pub fn write_comparison<W: Write>(summaries: &[Summary], out: W) -> Result<()> {
    let mut sorted: Vec<&Summary> = summaries.iter().collect();
    sorted.sort_by(|a, b| (&a.grid, &a.label).cmp(&(&b.grid, &b.label)));
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model",
        "grid",
        "dispatch_error",
        "voltage_error",
        "topology_error",
        "ineq_mean",
        "ineq_max",
        "num_viol_over_eps",
        "inference_ms",
    ])?;
    for s in sorted {
        w.write_record([
            s.label.clone(),
            s.grid.clone(),
            format!("{:.3e}", s.dispatch_error),
            format!("{:.3e}", s.voltage_error),
            format!("{:.3}", s.topology_error),
            format!("{:.3e}", s.ineq_mean),
            format!("{:.3e}", s.ineq_max),
            format!("{:.2}", s.num_viol_over_eps),
            format!("{:.2}", s.inference_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fixtures, generate_scenarios, ScenarioConfig};
    use crate::model::ModelConfig;

    fn setup(n: usize) -> (GridSpec, Vec<LoadScenario>, ModelParams) {
        let g = fixtures::t5();
        let cfg = ScenarioConfig {
            count: n,
            seed: 9,
            ..ScenarioConfig::default()
        };
        let scs = generate_scenarios(&g, &cfg).unwrap().scenarios;
        let p = ModelParams::new(&ModelConfig::default(), &[&g], 1).unwrap();
        (g, scs, p)
    }

    #[test]
    fn oracle_scored_against_itself_is_exact() {
        let (g, scs, _) = setup(6);
        let oracle = solve_oracle(&g, &scs).unwrap();
        for (sc, o) in scs.iter().zip(&oracle) {
            let fs = o.flow_state.as_ref().unwrap();
            let row = score(&g, 0, sc, fs, o, 0.01).unwrap();
            assert_eq!(row.dispatch_error, Some(0.0));
            assert_eq!(row.voltage_error, Some(0.0));
            assert_eq!(row.topology_error, Some(0.0));
            assert!(row.violations.max < 1e-12);
        }
    }

    #[test]
    fn report_shape_and_order() {
        let (g, scs, p) = setup(7);
        let ids = [6, 5, 4, 3, 2, 1, 0];
        let opts = EvalOptions {
            batch_size: 3,
            ..EvalOptions::default()
        };
        let before = p.clone();
        let r = evaluate(&[&p], &g, &ids, &scs, None, &opts).unwrap();
        assert_eq!(p, before);
        assert_eq!(r.rows.len(), 7);
        assert!(r.rows.windows(2).all(|w| w[0].scenario < w[1].scenario));
        assert_eq!(r.summary.voltage_violations, 0);
        assert!((0.0..=1.0).contains(&r.summary.topology_error));
        assert!(r.summary.inference_ms >= 0.0);
        // recomputed directly from the returned states
        for (row, s) in r.rows.iter().zip(&r.states) {
            let sc = &scs[6 - row.scenario];
            assert_eq!(row.violations, violation_stats(&inequality_vector(&g, sc, s), 0.01));
        }
    }

    #[test]
    fn forced_open_disagrees_with_oracle() {
        let (g, scs, p) = setup(5);
        let oracle = solve_oracle(&g, &scs).unwrap();
        let k = oracle[0].y_star.iter().position(|&c| c).unwrap();
        let mut forced = vec![None; 3];
        forced[k] = Some(false);
        let opts = EvalOptions {
            forced: Some(forced),
            ..EvalOptions::default()
        };
        let r = evaluate(&[&p], &g, &[0], &scs[..1], Some(&oracle[..1]), &opts).unwrap();
        assert!(r.rows[0].topology_error.unwrap() > 0.0);
    }

    #[test]
    fn csv_round_trip_of_summary() {
        let (g, scs, p) = setup(4);
        let r = evaluate(&[&p], &g, &[0, 1, 2, 3], &scs, None, &EvalOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        let s = read_summary(buf.as_slice()).unwrap();
        assert_eq!(s.label, "graphyr");
        assert_eq!(s.dispatch_error, r.summary.dispatch_error);
        assert_eq!(s.ineq_max, r.summary.ineq_max);
        let mut out = Vec::new();
        write_comparison(&[s.clone(), s], &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
    }
}

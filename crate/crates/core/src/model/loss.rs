use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::{inequality_vector, objective, FlowState};
use crate::grid::{GridSpec, LoadScenario};
use crate::oracle::OracleSolution;

use super::config::{ModelConfig, Supervision};
use super::context::GridContext;
use super::forward::Decoded;

/// Oracle quantities used by the supervised terms.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
}

impl Target {
    pub fn from_solution(sol: &OracleSolution) -> Result<Self> {
        let fs = sol
            .flow_state
            .as_ref()
            .ok_or_else(|| Error::MissingTarget("oracle solution is infeasible".into()))?;
        Ok(Target {
            y: sol.y_star.iter().map(|&c| c as u8 as f64).collect(),
            v: fs.v.clone(),
            p_gen: fs.p_gen.clone(),
            q_gen: fs.q_gen.clone(),
        })
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `f + λ‖max{0, h}‖₂` for one recovered state.
pub fn loss_unsupervised(grid: &GridSpec, scenario: &LoadScenario, s: &FlowState, lambda: f64) -> f64 {
    objective(grid, s) + lambda * inequality_vector(grid, scenario, s).norm()
}

/// Unsupervised loss plus `μ‖y - y*‖₂`.
pub fn loss_semi_supervised(
    grid: &GridSpec,
    scenario: &LoadScenario,
    s: &FlowState,
    lambda: f64,
    y_star: Option<&[f64]>,
    mu: f64,
) -> Result<f64> {
    let y_star = y_star.ok_or_else(|| Error::MissingTarget("switch targets".into()))?;
    Ok(loss_unsupervised(grid, scenario, s, lambda) + mu * l2(s.y.iter().zip(y_star).map(|(a, b)| a - b)))
}

/// `‖(v-v*)² + (pG-pG*)² + (qG-qG*)²‖₂² + ‖(y-y*)²‖₂² + λ‖max{0,h}‖₂`.
pub fn loss_supervised(
    grid: &GridSpec,
    scenario: &LoadScenario,
    s: &FlowState,
    target: Option<&Target>,
    lambda: f64,
) -> Result<f64> {
    let t = target.ok_or_else(|| Error::MissingTarget("regression targets".into()))?;
    let sq = |a: f64, b: f64| (a - b) * (a - b);
    let reg: f64 = (0..grid.num_nodes())
        .map(|j| sq(s.v[j], t.v[j]) + sq(s.p_gen[j], t.p_gen[j]) + sq(s.q_gen[j], t.q_gen[j]))
        .map(|e| e * e)
        .sum();
    let sw: f64 = s.y.iter().zip(&t.y).map(|(a, b)| sq(*a, *b).powi(2)).sum();
    Ok(reg + sw + lambda * inequality_vector(grid, scenario, s).norm())
}

/// Line losses per scenario, `B × 1`.
pub fn objective_column(tape: &mut Tape, ctx: &GridContext, d: &Decoded) -> Var {
    let p2 = tape.square(d.p_line);
    let q2 = tape.square(d.q_line);
    let s = tape.add(p2, q2);
    let r = tape.constant(ctx.line_r.clone());
    let w = tape.mul_col(s, r);
    let w = tape.reshape(w, ctx.batch, ctx.num_lines());
    tape.sum_cols(w)
}

/// Inequality entries per scenario, `B × 5N`, in the same order as
/// [`inequality_vector`].
pub fn violation_matrix(tape: &mut Tape, ctx: &GridContext, scenarios: &[LoadScenario], d: &Decoded) -> Var {
    let n = ctx.num_nodes();
    let g = &ctx.grid;
    let bound = |f: &dyn Fn(&LoadScenario, usize) -> f64| {
        Tensor::column(scenarios.iter().flat_map(|s| (0..n).map(move |j| f(s, j))).collect::<Vec<_>>())
    };
    let pmin = tape.constant(bound(&|s, j| s.gen_bounds(g, j).p_min));
    let pmax = tape.constant(bound(&|s, j| s.gen_bounds(g, j).p_max));
    let qmin = tape.constant(bound(&|s, j| s.gen_bounds(g, j).q_min));
    let qmax = tape.constant(bound(&|s, j| s.gen_bounds(g, j).q_max));
    let below_p = tape.sub(pmin, d.p_gen);
    let above_p = tape.sub(d.p_gen, pmax);
    let below_q = tape.sub(qmin, d.q_gen);
    let above_q = tape.sub(d.q_gen, qmax);
    let gen = tape.concat(&[below_p, above_p, below_q, above_q]);
    let gen = tape.relu(gen);
    let gen = tape.reshape(gen, ctx.batch, 4 * n);

    let rows = ctx.batch * n;
    let a = tape.scatter_add(d.y, ctx.sw_from.clone(), rows);
    let b = tape.scatter_add(d.y, ctx.sw_to.clone(), rows);
    let inc = tape.add(a, b);
    let fixed = tape.constant(ctx.fixed_degree.clone());
    let deg = tape.add(inc, fixed);
    let neg = tape.scale(deg, -1.0);
    let conn = tape.add_const(neg, 1.0);
    let conn = tape.relu(conn);
    let conn = tape.reshape(conn, ctx.batch, n);
    tape.concat(&[gen, conn])
}

fn target_column(targets: &[&Target], f: fn(&Target) -> &Vec<f64>) -> Tensor {
    Tensor::column(targets.iter().flat_map(|t| f(t).iter().copied()).collect())
}

/// Batch-mean training loss for the configured supervision mode.
pub fn batch_loss(
    tape: &mut Tape,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    d: &Decoded,
    config: &ModelConfig,
    targets: Option<&[&Target]>,
) -> Result<Var> {
    let viol = violation_matrix(tape, ctx, scenarios, d);
    let viol_norm = tape.row_norm(viol);
    let soft = tape.scale(viol_norm, config.lambda);
    let (n, ns) = (ctx.num_nodes(), ctx.num_switches());
    let targets = match (config.supervision, targets) {
        (Supervision::Unsupervised, _) => None,
        (_, Some(t)) if t.len() == ctx.batch => Some(t),
        (_, Some(t)) => {
            return Err(Error::Shape(format!("{} targets for {} scenarios", t.len(), ctx.batch)));
        }
        (_, None) => return Err(Error::MissingTarget("supervised loss without oracle targets".into())),
    };
    let per_scenario = match (config.supervision, targets) {
        (Supervision::Unsupervised, _) | (_, None) => {
            let f = objective_column(tape, ctx, d);
            tape.add(f, soft)
        }
        (Supervision::Semi, Some(t)) => {
            let f = objective_column(tape, ctx, d);
            let base = tape.add(f, soft);
            let ys = tape.constant(target_column(t, |t| &t.y));
            let dy = tape.sub(d.y, ys);
            let dy = tape.reshape(dy, ctx.batch, ns);
            let norm = tape.row_norm(dy);
            let pen = tape.scale(norm, config.mu);
            tape.add(base, pen)
        }
        (Supervision::Supervised, Some(t)) => {
            let mut err = None;
            for (var, pick) in [
                (d.v, (|t: &Target| &t.v) as fn(&Target) -> &Vec<f64>),
                (d.p_gen, |t: &Target| &t.p_gen),
                (d.q_gen, |t: &Target| &t.q_gen),
            ] {
                let c = tape.constant(target_column(t, pick));
                let diff = tape.sub(var, c);
                let sq = tape.square(diff);
                err = Some(match err {
                    None => sq,
                    Some(e) => tape.add(e, sq),
                });
            }
            let e2 = tape.square(err.expect("three terms"));
            let e2 = tape.reshape(e2, ctx.batch, n);
            let reg = tape.sum_cols(e2);
            let ys = tape.constant(target_column(t, |t| &t.y));
            let dy = tape.sub(d.y, ys);
            let dy4 = tape.powf(dy, 4.0);
            let dy4 = tape.reshape(dy4, ctx.batch, ns);
            let sw = tape.sum_cols(dy4);
            let a = tape.add(reg, sw);
            tape.add(a, soft)
        }
    };
    Ok(tape.mean_all(per_scenario))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures;

    #[test]
    fn zero_state_zero_loss() {
        // all switches closed so connectivity holds; zero load and flows
        let g = fixtures::t5();
        let sc = LoadScenario::zero(&g);
        let mut s = FlowState::zeros(&g);
        s.y = vec![1.0; 3];
        s.v = vec![1.0; 5];
        assert_eq!(loss_unsupervised(&g, &sc, &s, 100.0), 0.0);
    }

    #[test]
    fn single_violation_scaled_by_lambda() {
        let g = fixtures::t5();
        let sc = LoadScenario::zero(&g);
        let mut s = FlowState::zeros(&g);
        s.y = vec![1.0; 3];
        s.p_gen[1] = 0.03;
        assert!((loss_unsupervised(&g, &sc, &s, 100.0) - 3.0).abs() < 1e-12);
        assert_eq!(loss_unsupervised(&g, &sc, &s, 0.0), objective(&g, &s));
    }

    #[test]
    fn semi_supervised_penalty() {
        let g = fixtures::t5();
        let sc = LoadScenario::zero(&g);
        let mut s = FlowState::zeros(&g);
        s.y = vec![1.0, 0.0, 1.0];
        let base = loss_unsupervised(&g, &sc, &s, 100.0);
        let same = loss_semi_supervised(&g, &sc, &s, 100.0, Some(&[1.0, 0.0, 1.0]), 1.0).unwrap();
        assert_eq!(same, base);
        let off = loss_semi_supervised(&g, &sc, &s, 100.0, Some(&[0.0, 1.0, 1.0]), 1.0).unwrap();
        assert!((off - base - 2f64.sqrt()).abs() < 1e-12);
        let muted = loss_semi_supervised(&g, &sc, &s, 100.0, Some(&[0.0, 1.0, 1.0]), 0.0).unwrap();
        assert_eq!(muted, base);
        assert!(matches!(
            loss_semi_supervised(&g, &sc, &s, 1.0, None, 1.0),
            Err(Error::MissingTarget(_))
        ));
    }

    #[test]
    fn supervised_terms() {
        let g = fixtures::t5();
        let sc = LoadScenario::zero(&g);
        let mut s = FlowState::zeros(&g);
        s.y = vec![0.0, 1.0, 1.0];
        s.v = vec![1.0; 5];
        let t = Target {
            y: s.y.clone(),
            v: s.v.clone(),
            p_gen: s.p_gen.clone(),
            q_gen: s.q_gen.clone(),
        };
        assert_eq!(loss_supervised(&g, &sc, &s, Some(&t), 100.0).unwrap(), 0.0);
        let flipped = Target {
            y: vec![1.0, 1.0, 1.0],
            ..t.clone()
        };
        assert_eq!(loss_supervised(&g, &sc, &s, Some(&flipped), 100.0).unwrap(), 1.0);
        assert!(loss_supervised(&g, &sc, &s, None, 0.0).is_err());
    }
}

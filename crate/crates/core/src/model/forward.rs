use crate::autodiff::{sigmoid, BatchStats, Bound, Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::FlowState;
use crate::grid::LoadScenario;

use super::config::{ModelConfig, Rounding};
use super::context::GridContext;
use super::params::{LayerParams, ModelParams};
use super::phyr::{phyr_select, SelectMode, Selection};

/// Raw predictor outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Predictions {
    /// `B*M × 3`: `[p_hat, v_hat_from, v_hat_to]` in `[0, 1]`.
    pub line: Var,
    /// `B*M_sw × 4`: `[p_hat, v_hat_from, v_hat_to, y_hat]` in `[0, 1]`.
    pub switch: Var,
    /// `B*M_sw × 1`: the pre-sigmoid switch score behind `y_hat`.
    pub switch_logit: Var,
}

/// Batch statistics of both predictors from a train-mode pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictorStats {
    pub line: Option<BatchStats>,
    pub switch: Option<BatchStats>,
}

/// Recovered decision variables for a batch, all as column nodes.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub v: Var,
    pub p_line: Var,
    pub q_line: Var,
    pub p_sw: Var,
    pub q_sw: Var,
    pub p_gen: Var,
    pub q_gen: Var,
    pub y: Var,
    pub y_hat: Var,
    /// Per scenario, PhyR only.
    pub selections: Vec<Selection>,
}

fn check_batch(ctx: &GridContext, scenarios: &[LoadScenario]) -> Result<()> {
    if scenarios.len() != ctx.batch {
        return Err(Error::Shape(format!(
            "context built for {} scenarios, got {}",
            ctx.batch,
            scenarios.len()
        )));
    }
    scenarios.iter().try_for_each(|s| s.check(&ctx.grid))
}

/// Initial node embeddings `(p_load, q_load)` stacked over the batch.
pub fn node_inputs(ctx: &GridContext, scenarios: &[LoadScenario]) -> Tensor {
    let n = ctx.num_nodes();
    Tensor::from_fn(scenarios.len() * n, 2, |r, c| {
        let s = &scenarios[r / n];
        if c == 0 {
            s.p_load[r % n]
        } else {
            s.q_load[r % n]
        }
    })
}

/// Scalar gate of one switch embedding: sigmoid of its mean entry.
pub fn gate_value(z: &[f64]) -> f64 {
    sigmoid(z.iter().sum::<f64>() / z.len().max(1) as f64)
}

fn gates(tape: &mut Tape, z: Var) -> Var {
    let h = tape.value(z).cols().max(1);
    let s = tape.sum_cols(z);
    let mean = tape.scale(s, 1.0 / h as f64);
    tape.sigmoid(mean)
}

/// One message-passing layer. Layer 0 has no residual connection.
pub fn message_pass(
    tape: &mut Tape,
    bound: &Bound,
    layer: &LayerParams,
    ctx: &GridContext,
    x: Var,
    z: Var,
    first: bool,
) -> (Var, Var) {
    let rows = tape.value(x).rows();
    let self_term = tape.matmul(x, bound.var(layer.w1));
    let self_term = tape.add_row(self_term, bound.var(layer.b1));
    let xw2 = tape.matmul(x, bound.var(layer.w2));

    let line_src = tape.gather(xw2, ctx.line_msg_src.clone());
    let line_msgs = tape.scatter_add(line_src, ctx.line_msg_dst.clone(), rows);
    let mut pre = tape.add(self_term, line_msgs);
    if !ctx.sw_msg_src.is_empty() {
        let g = gates(tape, z);
        let g = tape.gather(g, ctx.sw_msg_edge.clone());
        let src = tape.gather(xw2, ctx.sw_msg_src.clone());
        let gated = tape.mul_col(src, g);
        let sw_msgs = tape.scatter_add(gated, ctx.sw_msg_dst.clone(), rows);
        pre = tape.add(pre, sw_msgs);
    }
    let update = tape.relu(pre);
    let x_next = if first { update } else { tape.add(x, update) };

    let z_next = if ctx.num_switches() == 0 {
        z
    } else {
        let xi = tape.gather(x, ctx.sw_from.clone());
        let xj = tape.gather(x, ctx.sw_to.clone());
        let xs = tape.add(xi, xj);
        let a = tape.matmul(xs, bound.var(layer.w3));
        let a = tape.add_row(a, bound.var(layer.b3));
        let b = tape.matmul(z, bound.var(layer.w4));
        let pre_z = tape.add(a, b);
        let upd = tape.relu(pre_z);
        if first {
            upd
        } else {
            tape.add(z, upd)
        }
    };
    (x_next, z_next)
}

/// Embeddings after all layers: `(x, z, x_G)` with `x_G` of shape `B × h`.
pub fn embed(
    tape: &mut Tape,
    bound: &Bound,
    params: &ModelParams,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
) -> Result<(Var, Var, Var)> {
    check_batch(ctx, scenarios)?;
    let seed = params.seed_for(&ctx.grid)?;
    let mut x = tape.constant(node_inputs(ctx, scenarios));
    let mut z = tape.gather(bound.var(seed), ctx.sw_seed.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        (x, z) = message_pass(tape, bound, layer, ctx, x, z, l == 0);
    }
    let xg = tape.scatter_add(x, ctx.node_batch.clone(), ctx.batch);
    Ok((x, z, xg))
}

pub fn predict(
    tape: &mut Tape,
    bound: &Bound,
    params: &ModelParams,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    mode: Mode,
) -> Result<(Predictions, PredictorStats)> {
    let (x, z, xg) = embed(tape, bound, params, ctx, scenarios)?;
    let mut stats = PredictorStats::default();

    let xi = tape.gather(x, ctx.line_from.clone());
    let xj = tape.gather(x, ctx.line_to.clone());
    let g = tape.gather(xg, ctx.line_batch.clone());
    let input = tape.concat(&[xi, xj, g]);
    let line = if ctx.num_lines() > 0 {
        let (out, s) = params.line_predictor.forward(tape, bound, input, mode)?;
        stats.line = s;
        tape.sigmoid(out)
    } else {
        tape.constant(Tensor::zeros(0, 3))
    };

    let (switch, switch_logit) = if ctx.num_switches() > 0 {
        let xi = tape.gather(x, ctx.sw_from.clone());
        let xj = tape.gather(x, ctx.sw_to.clone());
        let g = tape.gather(xg, ctx.sw_batch.clone());
        let input = tape.concat(&[xi, xj, z, g]);
        let (out, s) = params.switch_predictor.forward(tape, bound, input, mode)?;
        stats.switch = s;
        let logit = tape.slice(out, 3, 4);
        (tape.sigmoid(out), logit)
    } else {
        (tape.constant(Tensor::zeros(0, 4)), tape.constant(Tensor::zeros(0, 1)))
    };
    Ok((
        Predictions {
            line,
            switch,
            switch_logit,
        },
        stats,
    ))
}

/// Elementwise mean of several members' predictions on the same tape.
pub fn average_predictions(tape: &mut Tape, members: &[Predictions]) -> Predictions {
    assert!(!members.is_empty(), "committee is empty");
    if members.len() == 1 {
        return members[0];
    }
    let k = 1.0 / members.len() as f64;
    let mut avg = |pick: fn(&Predictions) -> Var| {
        let mut acc = pick(&members[0]);
        for m in &members[1..] {
            acc = tape.add(acc, pick(m));
        }
        tape.scale(acc, k)
    };
    Predictions {
        line: avg(|p| p.line),
        switch: avg(|p| p.switch),
        switch_logit: avg(|p| p.switch_logit),
    }
}

/// Smooth step `[2(1+mu)/(mu + e^{-tau z}) - 1]_+`.
pub fn insi_activation(z: f64, tau: f64, mu: f64) -> f64 {
    (2.0 * (1.0 + mu) / (mu + (-tau * z).exp()) - 1.0).max(0.0)
}

fn insi_on_tape(tape: &mut Tape, logit: Var, tau: f64, mu: f64) -> Var {
    let a = tape.scale(logit, -tau);
    let e = tape.exp(a);
    let d = tape.add_const(e, mu);
    let r = tape.powf(d, -1.0);
    let s = tape.scale(r, 2.0 * (1.0 + mu));
    let s = tape.add_const(s, -1.0);
    let s = tape.relu(s);
    // capped at 1 for use as a closure probability
    tape.clamp(s, 0.0, 1.0)
}

fn select_mode(mode: Mode) -> SelectMode {
    if mode.is_train() {
        SelectMode::Train
    } else {
        SelectMode::Eval
    }
}

fn switch_status(
    tape: &mut Tape,
    ctx: &GridContext,
    preds: &Predictions,
    config: &ModelConfig,
    mode: Mode,
) -> Result<(Var, Var, Vec<Selection>)> {
    let ns = ctx.num_switches();
    let y_hat = tape.slice(preds.switch, 3, 4);
    match config.rounding {
        Rounding::Phyr => {
            let vals = tape.value(y_hat).data().to_vec();
            let mut hard = Vec::with_capacity(vals.len());
            let mut pass = Vec::with_capacity(vals.len());
            let mut selections = Vec::with_capacity(ctx.batch);
            for b in 0..ctx.batch {
                let sel = phyr_select(&vals[b * ns..(b + 1) * ns], ctx.required_closed, &ctx.forced, select_mode(mode))?;
                hard.extend_from_slice(&sel.hard);
                pass.extend_from_slice(&sel.pass);
                selections.push(sel);
            }
            let hard = tape.constant(Tensor::column(hard));
            let pass = tape.constant(Tensor::column(pass));
            let through = tape.mul(y_hat, pass);
            Ok((tape.add(through, hard), y_hat, selections))
        }
        Rounding::Insi => {
            let soft = insi_on_tape(tape, preds.switch_logit, config.insi_tau, config.insi_mu);
            let forced_at = |r: usize| ctx.forced[r % ns.max(1)];
            let rows = ctx.batch * ns;
            let y = if mode.is_train() {
                let keep = Tensor::column((0..rows).map(|r| forced_at(r).is_none() as u8 as f64).collect());
                let keep = tape.constant(keep);
                soft_with_clamps(tape, soft, keep, rows, &forced_at)
            } else {
                let vals = tape.value(soft).data().to_vec();
                let rounded = (0..rows)
                    .map(|r| match forced_at(r) {
                        Some(c) => c as u8 as f64,
                        None => (vals[r] >= 0.5) as u8 as f64,
                    })
                    .collect();
                tape.constant(Tensor::column(rounded))
            };
            Ok((y, soft, Vec::new()))
        }
    }
}

fn soft_with_clamps(tape: &mut Tape, soft: Var, keep: Var, rows: usize, forced_at: &dyn Fn(usize) -> Option<bool>) -> Var {
    let free = tape.mul(soft, keep);
    let closed = Tensor::column((0..rows).map(|r| (forced_at(r) == Some(true)) as u8 as f64).collect());
    let closed = tape.constant(closed);
    tape.add(free, closed)
}

fn decode_flow(tape: &mut Tape, code: Var, big_m: f64) -> Var {
    let c = tape.add_const(code, -0.5);
    tape.scale(c, 2.0 * big_m)
}

/// `q = ((v_from - v_to)/2 - R p) / X` per arc.
fn reactive(tape: &mut Tape, v: Var, from: &std::sync::Arc<[usize]>, to: &std::sync::Arc<[usize]>, p: Var, r: &Tensor, inv_x: &Tensor) -> Var {
    let vf = tape.gather(v, from.clone());
    let vt = tape.gather(v, to.clone());
    let dv = tape.sub(vf, vt);
    let half = tape.scale(dv, 0.5);
    let r = tape.constant(r.clone());
    let rp = tape.mul_col(p, r);
    let num = tape.sub(half, rp);
    let inv_x = tape.constant(inv_x.clone());
    tape.mul_col(num, inv_x)
}

fn net_outflow(tape: &mut Tape, ctx: &GridContext, line: Var, sw: Var) -> Var {
    let rows = ctx.batch * ctx.num_nodes();
    let a = tape.scatter_add(line, ctx.line_from.clone(), rows);
    let b = tape.scatter_add(line, ctx.line_to.clone(), rows);
    let c = tape.scatter_add(sw, ctx.sw_from.clone(), rows);
    let d = tape.scatter_add(sw, ctx.sw_to.clone(), rows);
    let ab = tape.sub(a, b);
    let cd = tape.sub(c, d);
    tape.add(ab, cd)
}

/// Voltage aggregation, switch selection and the recovery chain.
pub fn decode(
    tape: &mut Tape,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    preds: &Predictions,
    config: &ModelConfig,
    mode: Mode,
) -> Result<Decoded> {
    check_batch(ctx, scenarios)?;
    let g = &ctx.grid;
    let rows = ctx.batch * ctx.num_nodes();
    let (v_min, v_max, big_m) = (g.v_min(), g.v_max(), g.big_m());

    // one voltage instance per (node, incident edge)
    let lvf = tape.slice(preds.line, 1, 2);
    let lvt = tape.slice(preds.line, 2, 3);
    let svf = tape.slice(preds.switch, 1, 2);
    let svt = tape.slice(preds.switch, 2, 3);
    let a = tape.scatter_add(lvf, ctx.line_from.clone(), rows);
    let b = tape.scatter_add(lvt, ctx.line_to.clone(), rows);
    let c = tape.scatter_add(svf, ctx.sw_from.clone(), rows);
    let d = tape.scatter_add(svt, ctx.sw_to.clone(), rows);
    let ab = tape.add(a, b);
    let cd = tape.add(c, d);
    let sum = tape.add(ab, cd);
    let inv_deg = tape.constant(ctx.inv_degree.clone());
    let v_tilde = tape.mul_col(sum, inv_deg);
    let v = tape.scale(v_tilde, v_max - v_min);
    let v = tape.add_const(v, v_min);
    let v = tape.clamp(v, v_min, v_max);
    let keep = tape.constant(ctx.slack_keep.clone());
    let v = tape.mul_col(v, keep);
    let one = tape.constant(ctx.slack_one.clone());
    let v = tape.add(v, one);

    let (y, y_hat, selections) = switch_status(tape, ctx, preds, config, mode)?;

    let p_code = tape.slice(preds.line, 0, 1);
    let p_line = decode_flow(tape, p_code, big_m);
    let q_line = reactive(tape, v, &ctx.line_from, &ctx.line_to, p_line, &ctx.line_r, &ctx.line_inv_x);
    let s_code = tape.slice(preds.switch, 0, 1);
    let p_raw = decode_flow(tape, s_code, big_m);
    let q_tilde = reactive(tape, v, &ctx.sw_from, &ctx.sw_to, p_raw, &ctx.sw_r, &ctx.sw_inv_x);
    let p_sw = tape.mul(p_raw, y);
    let q_sw = tape.mul(q_tilde, y);

    let load = |f: fn(&LoadScenario) -> &Vec<f64>| {
        Tensor::column(scenarios.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>())
    };
    debug_assert_eq!(load(|s| &s.p_load).len(), rows);
    let out_p = net_outflow(tape, ctx, p_line, p_sw);
    let out_q = net_outflow(tape, ctx, q_line, q_sw);
    let pl = tape.constant(load(|s| &s.p_load));
    let ql = tape.constant(load(|s| &s.q_load));
    let p_gen = tape.add(pl, out_p);
    let q_gen = tape.add(ql, out_q);
    Ok(Decoded {
        v,
        p_line,
        q_line,
        p_sw,
        q_sw,
        p_gen,
        q_gen,
        y,
        y_hat,
        selections,
    })
}

/// Splits batched columns back into one [`FlowState`] per scenario.
pub fn flow_states(tape: &Tape, ctx: &GridContext, d: &Decoded) -> Vec<FlowState> {
    let (n, m, ns) = (ctx.num_nodes(), ctx.num_lines(), ctx.num_switches());
    let chunk = |v: Var, per: usize, b: usize| tape.value(v).data()[b * per..(b + 1) * per].to_vec();
    (0..ctx.batch)
        .map(|b| FlowState {
            y: chunk(d.y, ns, b),
            v: chunk(d.v, n, b),
            p_line: chunk(d.p_line, m, b),
            q_line: chunk(d.q_line, m, b),
            p_sw: chunk(d.p_sw, ns, b),
            q_sw: chunk(d.q_sw, ns, b),
            p_gen: chunk(d.p_gen, n, b),
            q_gen: chunk(d.q_gen, n, b),
        })
        .collect()
}

/// Result of a self-contained forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub states: Vec<FlowState>,
    /// Continuous switch probabilities per scenario.
    pub y_hat: Vec<Vec<f64>>,
    pub stats: PredictorStats,
}

/// Full pipeline on a fresh tape for one model.
pub fn forward(
    params: &ModelParams,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    mode: Mode,
) -> Result<ForwardOutput> {
    committee_forward(&[params], ctx, scenarios, mode)
}

/// Averages the members' continuous predictions, then selects switches and
/// recovers the flow state once.
pub fn committee_forward(
    members: &[&ModelParams],
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    mode: Mode,
) -> Result<ForwardOutput> {
    let first = members
        .first()
        .ok_or_else(|| Error::Validation("committee is empty".into()))?;
    let mut tape = Tape::new();
    let mut preds = Vec::with_capacity(members.len());
    let mut stats = PredictorStats::default();
    for p in members {
        let bound = p.store.bind(&mut tape);
        let (pr, st) = predict(&mut tape, &bound, p, ctx, scenarios, mode)?;
        preds.push(pr);
        stats = st;
    }
    let avg = average_predictions(&mut tape, &preds);
    let d = decode(&mut tape, ctx, scenarios, &avg, &first.config, mode)?;
    let ns = ctx.num_switches();
    let yh = tape.value(d.y_hat).data();
    let y_hat = (0..ctx.batch).map(|b| yh[b * ns..(b + 1) * ns].to_vec()).collect();
    Ok(ForwardOutput {
        states: flow_states(&tape, ctx, &d),
        y_hat,
        stats,
    })
}

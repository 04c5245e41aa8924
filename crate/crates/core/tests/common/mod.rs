#![allow(dead_code)]

use graphyr::autodiff::{Mode, Tape, Var};
use graphyr::flow::{balance_residuals, ohm_residuals, FlowState};
use graphyr::grid::{generate_scenarios, GridSpec, LoadScenario, ScenarioConfig};
use graphyr::model::forward::{decode, predict};
use graphyr::model::loss::batch_loss;
use graphyr::model::{GridContext, ModelParams, Target};

pub fn scenarios(grid: &GridSpec, count: usize, seed: u64) -> Vec<LoadScenario> {
    let cfg = ScenarioConfig {
        count,
        seed,
        ..ScenarioConfig::default()
    };
    generate_scenarios(grid, &cfg).unwrap().scenarios
}

pub fn flat(params: &ModelParams) -> Vec<f64> {
    params
        .store
        .iter()
        .flat_map(|(_, t)| t.data().to_vec())
        .collect()
}

pub fn set_flat(params: &mut ModelParams, values: &[f64]) {
    let mut k = 0;
    let ids: Vec<_> = params.store.ids().collect();
    for id in ids {
        let t = params.store.get_mut(id);
        let n = t.len();
        t.data_mut().copy_from_slice(&values[k..k + n]);
        k += n;
    }
    assert_eq!(k, values.len());
}

/// Loss, flat parameter gradient, and a signature of every non-smooth
/// choice made on the way (ReLU signs, clamps, switch selections).
pub struct Eval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub signature: Vec<u8>,
}

pub fn loss_and_grad(
    params: &ModelParams,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    targets: Option<&[&Target]>,
    mode: Mode,
) -> Eval {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let (preds, _) = predict(&mut tape, &bound, params, ctx, scenarios, mode).unwrap();
    let d = decode(&mut tape, ctx, scenarios, &preds, &params.config, mode).unwrap();
    let loss = batch_loss(&mut tape, ctx, scenarios, &d, &params.config, targets).unwrap();
    let grads = tape.backward(loss).unwrap();
    let grad = bound
        .vars()
        .iter()
        .flat_map(|&v| grads.get_or_zeros(&tape, v).into_data())
        .collect();
    let mut signature = tape.kink_signature();
    for s in &d.selections {
        signature.extend(s.hard.iter().chain(&s.pass).map(|&x| x as u8));
    }
    Eval {
        loss: tape.value(loss).data()[0],
        grad,
        signature,
    }
}

/// Checks the certified-physics invariants of one eval-mode output.
pub fn certify(grid: &GridSpec, scenario: &LoadScenario, s: &FlowState) -> Result<(), String> {
    let slack = grid.slack();
    if s.v[slack] != 1.0 {
        return Err(format!("slack voltage {}", s.v[slack]));
    }
    if let Some(v) = s.v.iter().find(|&&v| v < grid.v_min() || v > grid.v_max()) {
        return Err(format!("voltage {v} outside box"));
    }
    if s.y.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(format!("non-binary switch status {:?}", s.y));
    }
    let closed = s.y.iter().filter(|&&y| y == 1.0).count();
    if closed != grid.required_closed_count().unwrap() {
        return Err(format!("{closed} switches closed"));
    }
    for k in 0..grid.num_switches() {
        if s.y[k] == 0.0 && (s.p_sw[k] != 0.0 || s.q_sw[k] != 0.0) {
            return Err(format!("open switch {k} carries flow"));
        }
    }
    for (j, (rp, rq)) in balance_residuals(grid, scenario, s).into_iter().enumerate() {
        if rp.abs() >= 1e-9 || rq.abs() >= 1e-9 {
            return Err(format!("balance residual at node {j}: {rp:e}, {rq:e}"));
        }
    }
    if let Some(r) = ohm_residuals(grid, s).into_iter().find(|r| r.abs() >= 1e-9) {
        return Err(format!("Ohm residual {r:e}"));
    }
    Ok(())
}

/// Deterministic unit direction.
pub fn direction(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    d.into_iter().map(|x| x / norm).collect()
}

type Build = fn(&mut Tape, &[Var]) -> Var;

/// One tape primitive under test: input shapes, sampling interval and the
/// graph that applies it.
pub struct Primitive {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    pub domain: (f64, f64),
    pub build: Build,
}

fn idx(v: &[usize]) -> std::sync::Arc<[usize]> {
    v.iter().copied().collect()
}

pub fn primitives() -> Vec<Primitive> {
    let p = |name, shapes: &[(usize, usize)], domain, build: Build| Primitive {
        name,
        shapes: shapes.to_vec(),
        domain,
        build,
    };
    let any = (-2.0, 2.0);
    let pos = (0.5, 2.0);
    vec![
        p("matmul", &[(3, 4), (4, 2)], any, |t, x| t.matmul(x[0], x[1])),
        p("add", &[(3, 2), (3, 2)], any, |t, x| t.add(x[0], x[1])),
        p("sub", &[(3, 2), (3, 2)], any, |t, x| t.sub(x[0], x[1])),
        p("mul", &[(3, 2), (3, 2)], any, |t, x| t.mul(x[0], x[1])),
        p("add_row", &[(4, 3), (1, 3)], any, |t, x| t.add_row(x[0], x[1])),
        p("mul_row", &[(4, 3), (1, 3)], any, |t, x| t.mul_row(x[0], x[1])),
        p("mul_col", &[(4, 3), (4, 1)], any, |t, x| t.mul_col(x[0], x[1])),
        p("scale", &[(3, 3)], any, |t, x| t.scale(x[0], -1.7)),
        p("add_const", &[(3, 3)], any, |t, x| t.add_const(x[0], 0.3)),
        p("relu", &[(4, 3)], any, |t, x| t.relu(x[0])),
        p("sigmoid", &[(4, 3)], (-6.0, 6.0), |t, x| t.sigmoid(x[0])),
        p("exp", &[(4, 3)], any, |t, x| t.exp(x[0])),
        p("powf_inverse", &[(3, 3)], pos, |t, x| t.powf(x[0], -1.0)),
        p("powf_fractional", &[(3, 3)], pos, |t, x| t.powf(x[0], 2.5)),
        p("powf_quartic", &[(3, 3)], any, |t, x| t.powf(x[0], 4.0)),
        p("square", &[(3, 3)], any, |t, x| t.square(x[0])),
        p("clamp", &[(4, 3)], any, |t, x| t.clamp(x[0], -0.5, 1.0)),
        p("sum_rows", &[(4, 3)], any, |t, x| t.sum_rows(x[0])),
        p("sum_cols", &[(4, 3)], any, |t, x| t.sum_cols(x[0])),
        p("sum_all", &[(4, 3)], any, |t, x| t.sum_all(x[0])),
        p("mean_all", &[(4, 3)], any, |t, x| t.mean_all(x[0])),
        p("gather", &[(4, 2)], any, |t, x| t.gather(x[0], idx(&[3, 0, 0, 2, 3]))),
        p("scatter_add", &[(5, 2)], any, |t, x| t.scatter_add(x[0], idx(&[1, 0, 1, 3, 1]), 4)),
        p("concat", &[(3, 2), (3, 1), (3, 3)], any, |t, x| t.concat(x)),
        p("slice", &[(3, 5)], any, |t, x| t.slice(x[0], 1, 4)),
        p("reshape", &[(4, 3)], any, |t, x| t.reshape(x[0], 2, 6)),
        p("row_norm", &[(4, 3)], any, |t, x| t.row_norm(x[0])),
    ]
}

/// Central-difference check of one primitive on `instances` random inputs,
/// each contracted with a random weight matrix. Returns the worst relative
/// error. Draws whose perturbation crosses a kink are redrawn.
pub fn check_primitive(prim: &Primitive, instances: usize, seed: u64, h: f64) -> Result<f64, String> {
    use graphyr::autodiff::gradcheck::{directional_difference, relative_error};
    use graphyr::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = prim.shapes.iter().map(|(r, c)| r * c).collect();
    let total: usize = sizes.iter().sum();
    let eval = |x: &[f64], w: &Tensor, grad: bool| -> (f64, Vec<f64>, Vec<u8>) {
        let mut tape = Tape::new();
        let mut k = 0;
        let vars: Vec<Var> = prim
            .shapes
            .iter()
            .map(|&(r, c)| {
                let v = tape.leaf(Tensor::new(r, c, x[k..k + r * c].to_vec()), true);
                k += r * c;
                v
            })
            .collect();
        let out = (prim.build)(&mut tape, &vars);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv);
        let loss = tape.sum_all(prod);
        let value = tape.value(loss).data()[0];
        let g = if grad {
            let gr = tape.backward(loss).unwrap();
            vars.iter().flat_map(|&v| gr.get_or_zeros(&tape, v).into_data()).collect()
        } else {
            Vec::new()
        };
        (value, g, tape.kink_signature())
    };
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut draws = 0;
    while done < instances {
        draws += 1;
        if draws > 50 * instances {
            return Err(format!("{}: too many kink crossings", prim.name));
        }
        let x: Vec<f64> = (0..total).map(|_| rng.random_range(prim.domain.0..prim.domain.1)).collect();
        let probe = {
            let mut tape = Tape::new();
            let mut k = 0;
            let vars: Vec<Var> = prim
                .shapes
                .iter()
                .map(|&(r, c)| {
                    let v = tape.leaf(Tensor::new(r, c, x[k..k + r * c].to_vec()), true);
                    k += r * c;
                    v
                })
                .collect();
            let out = (prim.build)(&mut tape, &vars);
            tape.value(out).shape()
        };
        let w = Tensor::from_fn(probe.0, probe.1, |_, _| rng.random_range(-1.0..1.0));
        let (_, grad, sig) = eval(&x, &w, true);
        let d = direction(total, rng.random());
        let mut same = true;
        let numeric = directional_difference(
            &mut |p: &[f64]| {
                let (v, _, s) = eval(p, &w, false);
                same &= s == sig;
                v
            },
            &x,
            &d,
            h,
        );
        if !same {
            continue;
        }
        let analytic: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        let err = relative_error(analytic, numeric, 1e-8);
        worst = worst.max(err);
        done += 1;
    }
    Ok(worst)
}

//! Acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line each and exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use graphyr::autodiff::gradcheck::{directional_difference, relative_error};
use graphyr::autodiff::{Mode, Tape};
use graphyr::flow::{objective, recover_flow_state};
use graphyr::grid::{fixtures, generate_scenarios, GridSpec, LoadScenario, ScenarioConfig};
use graphyr::model::forward::{decode, flow_states, predict};
use graphyr::model::loss::batch_loss;
use graphyr::model::{
    forward, loss_unsupervised, phyr_select, GridContext, ModelConfig, ModelParams, Rounding, SelectMode, Supervision, Target,
};
use graphyr::oracle::qp::QpOptions;
use graphyr::oracle::{enumerate_radial_topologies, solve_dyr, TopologyQp};
use graphyr::train::eval::{read_summary, write_comparison};
use graphyr::train::{evaluate, multi_grid_train, solve_oracle, train, EvalOptions, TrainConfig, TrainTask};

type Outcome = Result<String, String>;

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    if elapsed.as_secs_f64() < limit_s {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()))
    }
}

fn dataset(grid: &GridSpec, count: usize, seed: u64) -> graphyr::grid::Dataset {
    let cfg = ScenarioConfig {
        count,
        seed,
        ..ScenarioConfig::default()
    };
    generate_scenarios(grid, &cfg).unwrap()
}

fn certified_physics() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut passes = 0;
    for grid in [fixtures::t5(), fixtures::bw33()] {
        let ctx = GridContext::new(&grid, 1, None).map_err(|e| e.to_string())?;
        let pool = dataset(&grid, 500, 17).scenarios;
        for k in 0..500 {
            let p = ModelParams::new(&ModelConfig::default(), &[&grid], rng.random()).unwrap();
            let sc = &pool[k];
            let out = forward(&p, &ctx, std::slice::from_ref(sc), Mode::Eval).map_err(|e| e.to_string())?;
            common::certify(&grid, sc, &out.states[0]).map_err(|e| format!("{} pass {k}: {e}", grid.name()))?;
            passes += 1;
        }
    }
    within(start.elapsed(), 60.0, format!("{passes} forward passes certified"))
}

fn full_graph(cfg: &ModelConfig, grid: &GridSpec, supervised: bool, seed: u64) -> Result<(usize, f64), String> {
    let n = 4;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempt = 0;
    while checked < 20 {
        attempt += 1;
        if attempt > 400 {
            return Err("too many kink crossings".into());
        }
        let s = seed * 1000 + attempt;
        let mut p = ModelParams::new(cfg, &[grid], s).unwrap();
        let scs = common::scenarios(grid, n, s);
        let tg: Vec<Target> = if supervised {
            scs.iter()
                .map(|sc| Target::from_solution(&solve_dyr(grid, sc).unwrap()).unwrap())
                .collect()
        } else {
            Vec::new()
        };
        let tref: Vec<&Target> = tg.iter().collect();
        let targ = supervised.then_some(tref.as_slice());
        let ctx = GridContext::new(grid, n, None).unwrap();
        let mode = Mode::Train { seed: s };
        let x0 = common::flat(&p);
        let base = common::loss_and_grad(&p, &ctx, &scs, targ, mode);
        let d = common::direction(x0.len(), s);
        let mut same = true;
        let numeric = directional_difference(
            &mut |x: &[f64]| {
                common::set_flat(&mut p, x);
                let e = common::loss_and_grad(&p, &ctx, &scs, targ, mode);
                same &= e.signature == base.signature;
                e.loss
            },
            &x0,
            &d,
            1e-4,
        );
        if !same {
            continue;
        }
        let analytic: f64 = base.grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        worst = worst.max(relative_error(analytic, numeric, 1e-8));
        checked += 1;
    }
    Ok((checked, worst))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let prims = common::primitives();
    for (k, prim) in prims.iter().enumerate() {
        let e = common::check_primitive(prim, 20, 100 + k as u64, 1e-4)?;
        if e >= 1e-5 {
            return Err(format!("primitive {}: relative error {e:e}", prim.name));
        }
        worst = worst.max(e);
    }
    let t5 = fixtures::t5();
    let graphs = [
        ("phyr unsupervised", Rounding::Phyr, Supervision::Unsupervised, &t5),
        ("phyr semi", Rounding::Phyr, Supervision::Semi, &t5),
        ("phyr supervised", Rounding::Phyr, Supervision::Supervised, &t5),
        ("insi unsupervised", Rounding::Insi, Supervision::Unsupervised, &t5),
    ];
    for (k, (name, rounding, supervision, grid)) in graphs.into_iter().enumerate() {
        let cfg = ModelConfig {
            rounding,
            supervision,
            ..ModelConfig::default()
        };
        let (_, e) = full_graph(&cfg, grid, supervision.needs_targets(), k as u64 + 1)?;
        if e >= 1e-5 {
            return Err(format!("full graph {name}: relative error {e:e}"));
        }
        worst = worst.max(e);
    }
    within(
        start.elapsed(),
        120.0,
        format!("{} primitives and 4 full graphs x 20 instances, worst relative error {worst:.2e}", prims.len()),
    )
}

/// Basis of the null space of `a` from its SVD.
fn null_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let padded = if a.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), a.shape()).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.unwrap();
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| svd.singular_values[i] <= tol)
        .map(|i| vt.row(i).transpose())
        .collect();
    DMatrix::from_columns(&cols)
}

fn oracle_correctness() -> Outcome {
    let start = Instant::now();
    let grid = fixtures::t5();
    let cands = enumerate_radial_topologies(&grid).map_err(|e| e.to_string())?;
    if cands.len() != 2 {
        return Err(format!("{} radial topologies", cands.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scenarios = [LoadScenario::nominal(&grid), dataset(&grid, 1, 5).scenarios[0].clone()];
    let mut worst_kkt: f64 = 0.0;
    let mut samples = 0;
    for sc in &scenarios {
        let best = solve_dyr(&grid, sc).map_err(|e| e.to_string())?;
        let f_best = objective(&grid, best.flow_state.as_ref().ok_or("oracle infeasible on T5")?);
        for cand in &cands {
            let prob = TopologyQp::build(&grid, sc, cand).map_err(|e| e.to_string())?;
            let sol = prob.qp.solve(&QpOptions::default()).map_err(|e| e.to_string())?;
            worst_kkt = worst_kkt.max(sol.kkt_residual);
            let qp = &prob.qp;
            // equalities plus fixed variables
            let fixed: Vec<usize> = (0..qp.dim()).filter(|&i| qp.lower[i] == qp.upper[i]).collect();
            let mut a = DMatrix::zeros(qp.a_eq.nrows() + fixed.len(), qp.dim());
            a.view_mut((0, 0), qp.a_eq.shape()).copy_from(&qp.a_eq);
            for (r, &i) in fixed.iter().enumerate() {
                a[(qp.a_eq.nrows() + r, i)] = 1.0;
            }
            let basis = null_basis(&a);
            if basis.ncols() == 0 {
                return Err("feasible set is a single point".into());
            }
            let mut got = 0;
            let mut draws = 0;
            while got < 10_000 {
                draws += 1;
                if draws > 200_000 {
                    return Err(format!("only {got} feasible perturbations found"));
                }
                let w = DVector::from_fn(basis.ncols(), |_, _| rng.random_range(-1.0..1.0));
                // entries at roundoff level are exact zeros
                let d = (&basis * w).map(|e| if e.abs() < 1e-14 { 0.0 } else { e });
                // largest step keeping the box
                let mut t_max = rng.random_range(1e-4..1.0f64);
                for i in 0..qp.dim() {
                    if d[i] > 0.0 {
                        t_max = t_max.min((qp.upper[i] - sol.x[i]) / d[i]);
                    } else if d[i] < 0.0 {
                        t_max = t_max.min((qp.lower[i] - sol.x[i]) / d[i]);
                    }
                }
                if t_max <= 1e-12 {
                    continue;
                }
                let x = &sol.x + &d * (t_max * rng.random_range(0.01..1.0));
                let eq = (&qp.a_eq * &x - &qp.b_eq).amax();
                let in_box = (0..qp.dim()).all(|i| qp.lower[i] <= x[i] && x[i] <= qp.upper[i]);
                if eq > 1e-9 || !in_box {
                    continue;
                }
                let f = objective(&grid, &prob.to_flow_state(&x));
                if f_best > f + 1e-12 {
                    return Err(format!("sample objective {f:e} beats oracle {f_best:e}"));
                }
                got += 1;
            }
            samples += got;
        }
    }
    if worst_kkt > 1e-8 {
        return Err(format!("KKT residual {worst_kkt:e}"));
    }
    within(
        start.elapsed(),
        60.0,
        format!("2 radial topologies, worst KKT {worst_kkt:.1e}, {samples} dominated perturbations"),
    )
}

fn training_smoke() -> Outcome {
    let start = Instant::now();
    let grid = fixtures::t5();
    let ds = dataset(&grid, 500, 2024);
    let task = TrainTask::new(grid.clone(), ds).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    }
    .with_committee(3, 0);
    let committee = train(&task, &cfg).map_err(|e| e.to_string())?;
    let first = committee.mean_train_loss(1).unwrap();
    let last = committee.mean_train_loss(200).unwrap();
    let test = &task.dataset.split.test;
    let scs: Vec<LoadScenario> = test.iter().map(|&i| task.dataset.scenarios[i].clone()).collect();
    let report = evaluate(&committee.member_refs(), &grid, test, &scs, None, &EvalOptions::default())
        .map_err(|e| e.to_string())?;
    let s = &report.summary;
    let elapsed = start.elapsed();

    // soft target on the 33-node grid, not gating
    let bw = fixtures::bw33();
    let bw_task = TrainTask::new(bw.clone(), dataset(&bw, 500, 2025)).map_err(|e| e.to_string())?;
    let bw_cfg = TrainConfig {
        epochs: 300,
        batch_size: 25,
        ..TrainConfig::default()
    }
    .with_committee(1, 0);
    let bw_committee = train(&bw_task, &bw_cfg).map_err(|e| e.to_string())?;
    let bw_test = &bw_task.dataset.split.test;
    let bw_scs: Vec<LoadScenario> = bw_test.iter().map(|&i| bw_task.dataset.scenarios[i].clone()).collect();
    let bw_mse = evaluate(&bw_committee.member_refs(), &bw, bw_test, &bw_scs, None, &EvalOptions::default())
        .map_err(|e| e.to_string())?
        .summary
        .dispatch_error;

    let detail = format!(
        "loss {first:.4} -> {last:.4} (ratio {:.3}), test ineq mean {:.2e}, ineq max {:.2e}, voltage violations {}; \
         soft: topology match {:.0}% ({}), T5 dispatch MSE {:.2e}, bw33 dispatch MSE {bw_mse:.2e} ({} the 2.22e-2 band)",
        last / first,
        s.ineq_mean,
        s.ineq_max,
        s.voltage_violations,
        100.0 * s.topology_match,
        if s.topology_match >= 0.7 { "met" } else { "not met" },
        s.dispatch_error,
        if bw_mse <= 2.22e-2 { "within" } else { "outside" },
    );
    if last > 0.5 * first || s.ineq_mean >= 0.05 || s.voltage_violations != 0 {
        return Err(detail);
    }
    within(elapsed, 600.0, detail)
}

/// Sort-based top-k written independently of the rounding layer.
fn top_k(y: &[f64], k: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; y.len()];
    for &i in &idx[..k] {
        out[i] = 1.0;
    }
    out
}

fn phyr_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10_000 {
        let n = rng.random_range(1..=12);
        let coarse = trial % 4 == 0;
        let y: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..4) as f64 / 4.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let s = rng.random_range(0..=n);
        let sel = phyr_select(&y, s, &vec![None; n], SelectMode::Eval).map_err(|e| e.to_string())?;
        if sel.apply(&y) != top_k(&y, s) {
            return Err(format!("mismatch on {y:?} with S={s}"));
        }
    }

    let grid = fixtures::t5();
    let (mut nonzero, mut eligible) = (0, 0);
    for k in 0..200u64 {
        let p = ModelParams::new(&ModelConfig::default(), &[&grid], 10_000 + k).unwrap();
        let scs = common::scenarios(&grid, 1, k);
        let ctx = GridContext::new(&grid, 1, None).unwrap();
        let mode = Mode::Train { seed: k };
        let mut tape = Tape::new();
        let bound = p.store.bind(&mut tape);
        let (preds, _) = predict(&mut tape, &bound, &p, &ctx, &scs, mode).unwrap();
        let d = decode(&mut tape, &ctx, &scs, &preds, &p.config, mode).unwrap();
        let loss = batch_loss(&mut tape, &ctx, &scs, &d, &p.config, None).unwrap();
        let y = tape.value(d.y).data().to_vec();
        let fractional: Vec<usize> = (0..y.len()).filter(|&i| y[i] != 0.0 && y[i] != 1.0).collect();
        if fractional.len() != 1 {
            return Err(format!("instance {k}: {} fractional entries in {y:?}", fractional.len()));
        }
        let f = fractional[0];
        let g = tape.backward(loss).unwrap();
        let gy = g.get(d.y).map(|t| t.data()[f]).unwrap_or(0.0);
        // loss with the fractional switch fully closed and fully open
        let state = &flow_states(&tape, &ctx, &d)[0];
        let line_codes: Vec<f64> = (0..grid.num_lines()).map(|k| tape.value(preds.line).get(k, 0)).collect();
        let sw_codes: Vec<f64> = (0..grid.num_switches()).map(|k| tape.value(preds.switch).get(k, 0)).collect();
        let loss_at = |yf: f64| {
            let mut y = y.clone();
            y[f] = yf;
            let s = recover_flow_state(&grid, &scs[0], &state.v, &line_codes, &sw_codes, &y);
            loss_unsupervised(&grid, &scs[0], &s, p.config.lambda)
        };
        let (closed_obj, open_obj) = (loss_at(1.0), loss_at(0.0));
        if (closed_obj - open_obj).abs() > 1e-12 {
            eligible += 1;
            if gy != 0.0 {
                nonzero += 1;
            }
        }
    }
    let rate = nonzero as f64 / eligible.max(1) as f64;
    let detail = format!(
        "10000/10000 top-k agreement; one fractional entry on 200/200 T5 instances, nonzero gradient on {nonzero}/{eligible} ({:.0}%)",
        100.0 * rate
    );
    if eligible == 0 || rate < 0.9 {
        return Err(detail);
    }
    Ok(detail)
}

fn permutation_invariance() -> Outcome {
    let grid = fixtures::t5();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let mut perm: Vec<usize> = (0..grid.num_nodes()).collect();
        perm.shuffle(&mut rng);
        let h = grid.relabel(&perm).map_err(|e| e.to_string())?;
        let mut p = ModelParams::new(&ModelConfig::default(), &[&grid], k).unwrap();
        p.share_seeds(&grid, &h).unwrap();
        let scs = common::scenarios(&grid, 4, k);
        let hscs: Vec<LoadScenario> = scs.iter().map(|s| s.relabel(&perm).unwrap()).collect();
        let a = forward(&p, &GridContext::new(&grid, 4, None).unwrap(), &scs, Mode::Eval).unwrap();
        let b = forward(&p, &GridContext::new(&h, 4, None).unwrap(), &hscs, Mode::Eval).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            if sa.y != sb.y {
                return Err(format!("relabeling {perm:?} changed the topology"));
            }
            for old in 0..grid.num_nodes() {
                let new = perm[old];
                for (x, y) in [(sa.v[old], sb.v[new]), (sa.p_gen[old], sb.p_gen[new]), (sa.q_gen[old], sb.q_gen[new])] {
                    worst = worst.max((x - y).abs());
                }
            }
            let edges = sa.p_line.iter().zip(&sb.p_line)
                .chain(sa.q_line.iter().zip(&sb.q_line))
                .chain(sa.p_sw.iter().zip(&sb.p_sw))
                .chain(sa.q_sw.iter().zip(&sb.q_sw));
            for (x, y) in edges {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let detail = format!("100 relabelings, max deviation {worst:.1e}");
    if worst >= 1e-9 {
        return Err(detail);
    }
    Ok(detail)
}

fn throughput() -> Outcome {
    let grid = fixtures::bw33();
    let p = ModelParams::new(&ModelConfig::default(), &[&grid], 7).unwrap();
    let scs = common::scenarios(&grid, 200, 7);
    let start = Instant::now();
    let ctx = GridContext::new(&grid, 200, None).map_err(|e| e.to_string())?;
    let out = forward(&p, &ctx, &scs, Mode::Eval).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if out.states.len() != 200 {
        return Err("wrong batch size".into());
    }
    within(elapsed, 5.0, format!("batch of 200 on {} in {:.1} ms", grid.name(), elapsed.as_secs_f64() * 1e3))
}

fn harness_parity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t5 = fixtures::t5();
    let variant = fixtures::t5_variant();
    let tasks = vec![
        TrainTask::new(t5.clone(), dataset(&t5, 200, 31)).unwrap(),
        TrainTask::new(variant.clone(), dataset(&variant, 200, 32)).unwrap(),
    ];
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 50,
        ..TrainConfig::default()
    }
    .with_committee(2, 0);
    let committee = multi_grid_train(&tasks, &cfg).map_err(|e| e.to_string())?;
    let mut summaries = Vec::new();
    for task in &tasks {
        let test = &task.dataset.split.test;
        let scs: Vec<LoadScenario> = test.iter().map(|&i| task.dataset.scenarios[i].clone()).collect();
        let opts = EvalOptions {
            label: "case-b".into(),
            ..EvalOptions::default()
        };
        let r = evaluate(&committee.member_refs(), &task.grid, test, &scs, None, &opts).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("case_b_{}.csv", task.grid.name()));
        r.write_csv(std::fs::File::create(&path).unwrap()).map_err(|e| e.to_string())?;
        summaries.push(read_summary(std::fs::File::open(&path).unwrap()).map_err(|e| e.to_string())?);
    }

    // forced switching is evaluated on a single-grid committee
    let base_task = TrainTask::new(t5.clone(), dataset(&t5, 500, 2024)).unwrap();
    let single = train(
        &base_task,
        &TrainConfig {
            epochs: 200,
            ..TrainConfig::default()
        }
        .with_committee(3, 0),
    )
    .map_err(|e| e.to_string())?;
    let test = &base_task.dataset.split.test;
    let scs: Vec<LoadScenario> = test.iter().map(|&i| base_task.dataset.scenarios[i].clone()).collect();
    let oracle = solve_oracle(&t5, &scs).map_err(|e| e.to_string())?;
    let members = single.member_refs();
    let base = evaluate(&members, &t5, test, &scs, Some(&oracle), &EvalOptions::default()).map_err(|e| e.to_string())?;
    let mut extra = Vec::new();
    for k in 0..t5.num_switches() {
        for state in [false, true] {
            let mut forced = vec![None; t5.num_switches()];
            forced[k] = Some(state);
            let opts = EvalOptions {
                label: format!("case-c-sw{k}-{}", if state { "closed" } else { "open" }),
                forced: Some(forced),
                ..EvalOptions::default()
            };
            let r = evaluate(&members, &t5, test, &scs, Some(&oracle), &opts).map_err(|e| e.to_string())?;
            let path = dir.path().join(format!("{}.csv", opts.label));
            r.write_csv(std::fs::File::create(&path).unwrap()).map_err(|e| e.to_string())?;
            let s = read_summary(std::fs::File::open(&path).unwrap()).map_err(|e| e.to_string())?;
            if !state {
                extra.push(s.num_viol_over_eps - base.summary.num_viol_over_eps);
            }
            summaries.push(s);
        }
    }
    let mut table = Vec::new();
    write_comparison(&summaries, &mut table).map_err(|e| e.to_string())?;
    let rows = String::from_utf8(table).unwrap().lines().count() - 1;
    if rows != 2 + 2 * t5.num_switches() {
        return Err(format!("comparison table has {rows} rows"));
    }
    let detail = format!(
        "case (b) reports for 2 grids, case (c) 6 forced runs; baseline {:.2} violations per scenario, change when forced open {:?}",
        base.summary.num_viol_over_eps,
        extra.iter().map(|e| format!("{e:+.2}")).collect::<Vec<_>>()
    );
    if extra.iter().any(|&e| e < 0.0) {
        return Err(detail);
    }
    Ok(detail)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("certified physics", certified_physics),
        ("gradient suite", gradient_suite),
        ("oracle correctness", oracle_correctness),
        ("training smoke", training_smoke),
        ("rounding contract", phyr_contract),
        ("permutation invariance", permutation_invariance),
        ("throughput", throughput),
        ("experiment harness", harness_parity),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {} {name}: PASS ({d}) [{secs:.1} s]", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({d}) [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

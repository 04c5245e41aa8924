use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use graphyr::autodiff::Checkpoint;
use graphyr::grid::{fixtures, generate_scenarios, load_grid, read_dataset, write_dataset, Dataset, GridSpec, ScenarioConfig};
use graphyr::model::{ModelConfig, ModelParams};
use graphyr::oracle::{read_oracle_csv, write_oracle_csv, OracleRecord, OracleSolution};
use graphyr::train::eval::{read_summary, write_comparison};
use graphyr::train::{evaluate, solve_oracle, multi_grid_train, write_loss_curves, EvalOptions, TrainConfig, TrainTask};
use graphyr::{Error, Result};

use crate::manifest::{write_atomic, RunManifest};
use crate::settings::Settings;
use crate::{EvalCmd, GenData, OracleCmd, ReportCmd, TrainCmd};

fn load_grid_arg(arg: &str) -> Result<GridSpec> {
    if Path::new(arg).exists() {
        return load_grid(arg);
    }
    fixtures::by_name(arg)
        .ok_or_else(|| Error::Validation(format!("no grid file or shipped grid named `{arg}`")))
}

fn load_dataset(grid: &GridSpec, path: &Path, split_seed: u64) -> Result<Dataset> {
    read_dataset(grid, File::open(path)?, split_seed)
}

fn split_ids(ds: &Dataset, split: &str) -> Result<Vec<usize>> {
    Ok(match split {
        "all" => (0..ds.len()).collect(),
        "train" => ds.split.train.clone(),
        "validation" => ds.split.validation.clone(),
        "test" => ds.split.test.clone(),
        other => return Err(Error::Validation(format!("unknown split `{other}` (all|train|validation|test)"))),
    })
}

fn grid_path(arg: &str) -> PathBuf {
    PathBuf::from(arg)
}

struct Run {
    command: &'static str,
    start: Instant,
    inputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run {
            command,
            start: Instant::now(),
            inputs: Vec::new(),
        }
    }

    fn finish(self, settings: &Settings, seed: Option<u64>, outputs: Vec<PathBuf>, artifact: &Path) -> Result<()> {
        RunManifest {
            command: self.command.into(),
            config: settings.used.clone(),
            inputs: self.inputs,
            outputs,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_s: self.start.elapsed().as_secs_f64(),
        }
        .write_next_to(artifact)
    }
}

pub fn gen_data(a: GenData, mut s: Settings) -> Result<()> {
    let mut run = Run::new("gen-data");
    let grid_arg: String = s.require("grid", a.grid)?;
    let grid = load_grid_arg(&grid_arg)?;
    run.inputs.push(grid_path(&grid_arg));
    let defaults = ScenarioConfig::default();
    let cfg = ScenarioConfig {
        count: s.get("count", a.count, 100)?,
        seed: s.get("seed", a.seed, 0)?,
        load_band: s.get("band", a.band, defaults.load_band)?,
        pv_penetration: s.get("pv", a.pv, defaults.pv_penetration)?,
    };
    let out: PathBuf = s.require("out", a.out.map(|p| p.display().to_string()))?.into();
    let ds = generate_scenarios(&grid, &cfg)?;
    let mut buf = Vec::new();
    write_dataset(&grid, &ds, &mut buf)?;
    write_atomic(&out, &buf)?;
    println!("wrote {} scenarios for grid {} to {}", ds.len(), grid.name(), out.display());
    run.finish(&s, Some(cfg.seed), vec![out.clone()], &out)
}

pub fn oracle(a: OracleCmd, mut s: Settings) -> Result<()> {
    let mut run = Run::new("oracle");
    let grid_arg: String = s.require("grid", a.grid)?;
    let grid = load_grid_arg(&grid_arg)?;
    let data: PathBuf = s.require("dataset", a.dataset.map(|p| p.display().to_string()))?.into();
    run.inputs.extend([grid_path(&grid_arg), data.clone()]);
    let split: String = s.get("split", a.split, "all".into())?;
    let split_seed = s.get("split_seed", a.split_seed, 0)?;
    let out: PathBuf = s.require("out", a.out.map(|p| p.display().to_string()))?.into();
    let ds = load_dataset(&grid, &data, split_seed)?;
    let ids = split_ids(&ds, &split)?;
    let scenarios: Vec<_> = ids.iter().map(|&i| ds.scenarios[i].clone()).collect();
    let solutions = solve_oracle(&grid, &scenarios)?;
    let sig = grid.signature();
    let mut records: Vec<OracleRecord> = ids
        .iter()
        .zip(solutions)
        .map(|(&scenario, solution)| OracleRecord {
            scenario,
            grid_signature: sig.clone(),
            solution,
        })
        .collect();
    records.sort_by_key(|r| r.scenario);
    let infeasible = records.iter().filter(|r| !r.solution.is_optimal()).count();
    let mut buf = Vec::new();
    write_oracle_csv(&grid, &records, &mut buf)?;
    write_atomic(&out, &buf)?;
    if infeasible > 0 {
        eprintln!("warning: {infeasible} of {} scenarios are infeasible", records.len());
    }
    println!("solved {} scenarios ({infeasible} infeasible) to {}", records.len(), out.display());
    run.finish(&s, Some(split_seed), vec![out.clone()], &out)
}

fn read_records(grid: &GridSpec, path: &Path) -> Result<Vec<OracleRecord>> {
    read_oracle_csv(grid, File::open(path)?)
}

pub fn train(a: TrainCmd, mut s: Settings) -> Result<()> {
    let mut run = Run::new("train");
    let grids: Vec<String> = s.list("grid", a.grid)?;
    let data: Vec<String> = s.list("dataset", a.dataset.iter().map(|p| p.display().to_string()).collect())?;
    let oracles: Vec<String> = s.list("oracle", a.oracle.iter().map(|p| p.display().to_string()).collect())?;
    if grids.is_empty() || grids.len() != data.len() {
        return Err(Error::Validation(format!(
            "need one --dataset per --grid, got {} grids and {} datasets",
            grids.len(),
            data.len()
        )));
    }
    if !oracles.is_empty() && oracles.len() != grids.len() {
        return Err(Error::Validation("need one --oracle per --grid".into()));
    }
    let split_seed = s.get("split_seed", a.split_seed, 0)?;
    let pairs = ModelConfig::default().to_pairs();
    let d = |k: &str| pairs.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone()).unwrap();
    let model_pairs = vec![
        ("layers", s.get("layers", a.layers.map(|v| v.to_string()), d("layers"))?),
        ("hidden", s.get("hidden", a.hidden.map(|v| v.to_string()), d("hidden"))?),
        ("line_hidden", s.get("line_hidden", a.line_hidden.map(|v| v.to_string()), d("line_hidden"))?),
        ("switch_hidden", s.get("switch_hidden", a.switch_hidden.map(|v| v.to_string()), d("switch_hidden"))?),
        ("dropout", s.get("dropout", a.dropout.map(|v| v.to_string()), d("dropout"))?),
        ("lambda", s.get("lambda", a.lambda.map(|v| v.to_string()), d("lambda"))?),
        ("mu", s.get("mu", a.mu.map(|v| v.to_string()), d("mu"))?),
        ("insi_tau", s.get("insi_tau", a.insi_tau.map(|v| v.to_string()), d("insi_tau"))?),
        ("insi_mu", s.get("insi_mu", a.insi_mu.map(|v| v.to_string()), d("insi_mu"))?),
        ("rounding", s.get("rounding", a.rounding, d("rounding"))?),
        ("supervision", s.get("supervision", a.supervision, d("supervision"))?),
    ];
    let model = ModelConfig::from_pairs(model_pairs.iter().map(|(k, v)| (*k, v.as_str())))?;
    let defaults = TrainConfig::default();
    let committee = s.get("committee", a.committee, defaults.committee_size())?;
    let seed = s.get("seed", a.seed, 0)?;
    let cfg = TrainConfig {
        epochs: s.get("epochs", a.epochs, defaults.epochs)?,
        batch_size: s.get("batch_size", a.batch_size, defaults.batch_size)?,
        learning_rate: s.get("lr", a.lr, defaults.learning_rate)?,
        validate_every: s.get("validate_every", a.validate_every, defaults.validate_every)?,
        model,
        ..defaults
    }
    .with_committee(committee, seed);
    cfg.validate()?;
    let out: PathBuf = s.require("out", a.out.map(|p| p.display().to_string()))?.into();

    let mut tasks = Vec::with_capacity(grids.len());
    for (k, (g, dpath)) in grids.iter().zip(&data).enumerate() {
        let grid = load_grid_arg(g)?;
        let ds = load_dataset(&grid, Path::new(dpath), split_seed)?;
        run.inputs.extend([grid_path(g), PathBuf::from(dpath)]);
        let mut task = TrainTask::new(grid, ds)?;
        if let Some(o) = oracles.get(k) {
            run.inputs.push(o.into());
            let records = read_records(&task.grid, Path::new(o))?;
            task = task.with_oracle(&records)?;
        } else if cfg.model.supervision.needs_targets() {
            return Err(Error::MissingTarget(format!(
                "{} training needs an --oracle file for grid {}",
                cfg.model.supervision,
                task.grid.name()
            )));
        }
        tasks.push(task);
    }

    let committee = multi_grid_train(&tasks, &cfg)?;
    std::fs::create_dir_all(&out)?;
    let mut outputs = Vec::new();
    for (k, member) in committee.members.iter().enumerate() {
        let mut ck = member.to_checkpoint();
        ck.push_meta("member", k.to_string());
        ck.push_meta("seed", cfg.seeds[k].to_string());
        let mut buf = Vec::new();
        ck.write(&mut buf)?;
        let path = out.join(format!("member_{k:02}.ckpt"));
        write_atomic(&path, &buf)?;
        outputs.push(path);
    }
    let mut buf = Vec::new();
    write_loss_curves(&committee.curves, &mut buf)?;
    let curves = out.join("loss_curves.csv");
    write_atomic(&curves, &buf)?;
    outputs.push(curves);
    let last = committee.mean_train_loss(cfg.epochs).unwrap_or(f64::NAN);
    println!(
        "trained {} member(s) for {} epochs; final mean train loss {last:.6}; wrote {}",
        committee.members.len(),
        cfg.epochs,
        out.display()
    );
    run.finish(&s, Some(seed), outputs, &out)
}

fn load_committee(dir: &Path) -> Result<(Vec<ModelParams>, Vec<PathBuf>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Checkpoint(format!("no .ckpt files in {}", dir.display())));
    }
    let members = paths
        .iter()
        .map(|p| ModelParams::from_checkpoint(&Checkpoint::read(File::open(p)?)?))
        .collect::<Result<_>>()?;
    Ok((members, paths))
}

pub fn eval(a: EvalCmd, mut s: Settings) -> Result<()> {
    let mut run = Run::new("eval");
    let ckdir: PathBuf = s.require("checkpoints", a.checkpoints.map(|p| p.display().to_string()))?.into();
    let grid_arg: String = s.require("grid", a.grid)?;
    let grid = load_grid_arg(&grid_arg)?;
    let data: PathBuf = s.require("dataset", a.dataset.map(|p| p.display().to_string()))?.into();
    let oracle_path: Option<String> = s.list("oracle", a.oracle.map(|p| p.display().to_string()).into_iter().collect())?.pop();
    let split: String = s.get("split", a.split, "test".into())?;
    let split_seed = s.get("split_seed", a.split_seed, 0)?;
    let force_open: Vec<usize> = s.list("force_open", a.force_open)?;
    let force_closed: Vec<usize> = s.list("force_closed", a.force_closed)?;
    let defaults = EvalOptions::default();
    let epsilon = s.get("epsilon", a.epsilon, defaults.epsilon)?;
    let label: String = s.get("label", a.label, defaults.label.clone())?;
    let batch_size = s.get("batch_size", a.batch_size, defaults.batch_size)?;
    let out: PathBuf = s.require("out", a.out.map(|p| p.display().to_string()))?.into();

    let (members, ck_paths) = load_committee(&ckdir)?;
    for m in &members {
        m.seed_for(&grid)?;
    }
    run.inputs.extend(ck_paths);
    run.inputs.extend([grid_path(&grid_arg), data.clone()]);
    let ds = load_dataset(&grid, &data, split_seed)?;
    let ids = split_ids(&ds, &split)?;
    let scenarios: Vec<_> = ids.iter().map(|&i| ds.scenarios[i].clone()).collect();

    let ns = grid.num_switches();
    let forced = if force_open.is_empty() && force_closed.is_empty() {
        None
    } else {
        let mut f = vec![None; ns];
        for (list, state) in [(&force_open, false), (&force_closed, true)] {
            for &k in list {
                if k >= ns {
                    return Err(Error::Validation(format!("switch {k} does not exist ({ns} switches)")));
                }
                if f[k].is_some_and(|v| v != state) {
                    return Err(Error::Validation(format!("switch {k} forced both open and closed")));
                }
                f[k] = Some(state);
            }
        }
        Some(f)
    };

    let oracle: Option<Vec<OracleSolution>> = match &oracle_path {
        None => None,
        Some(p) => {
            run.inputs.push(p.into());
            let sig = grid.signature();
            let mut by_id: HashMap<usize, OracleSolution> = HashMap::new();
            for r in read_records(&grid, Path::new(p))? {
                if r.grid_signature != sig {
                    return Err(Error::Validation(format!("oracle file {p} belongs to another grid")));
                }
                by_id.insert(r.scenario, r.solution);
            }
            let missing: Vec<usize> = (0..ids.len()).filter(|&i| !by_id.contains_key(&ids[i])).collect();
            let extra = solve_oracle(&grid, &missing.iter().map(|&i| scenarios[i].clone()).collect::<Vec<_>>())?;
            for (i, sol) in missing.into_iter().zip(extra) {
                by_id.insert(ids[i], sol);
            }
            Some(ids.iter().map(|i| by_id.remove(i).expect("filled above")).collect())
        }
    };

    let opts = EvalOptions {
        label,
        forced,
        epsilon,
        batch_size,
    };
    let refs: Vec<&ModelParams> = members.iter().collect();
    let report = evaluate(&refs, &grid, &ids, &scenarios, oracle.as_deref(), &opts)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&out, &buf)?;
    let m = &report.summary;
    println!(
        "{} on {} ({} scenarios, committee of {}): dispatch {:.3e}, voltage {:.3e}, topology {:.3}, \
         ineq mean {:.3e}, ineq max {:.3e}, viol>{} {:.2}, {:.2} ms/batch",
        m.label,
        m.grid,
        m.scenarios,
        members.len(),
        m.dispatch_error,
        m.voltage_error,
        m.topology_error,
        m.ineq_mean,
        m.ineq_max,
        m.epsilon,
        m.num_viol_over_eps,
        m.inference_ms
    );
    run.finish(&s, Some(split_seed), vec![out.clone()], &out)
}

pub fn report(a: ReportCmd, mut s: Settings) -> Result<()> {
    let mut run = Run::new("report");
    let out: PathBuf = s.require("out", a.out.map(|p| p.display().to_string()))?.into();
    let mut summaries = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        summaries.push(read_summary(File::open(p)?)?);
        run.inputs.push(p.clone());
    }
    let mut buf = Vec::new();
    write_comparison(&summaries, &mut buf)?;
    write_atomic(&out, &buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    run.finish(&s, None, vec![out.clone()], &out)
}

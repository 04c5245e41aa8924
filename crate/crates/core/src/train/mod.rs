//! Committee training, metrics and evaluation reports.

pub mod eval;
pub mod metrics;

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{AdamState, Mode, Tape, Tensor};
use crate::error::{Error, Result};
use crate::grid::{Dataset, GridSpec, LoadScenario};
use crate::model::forward::{decode, predict};
use crate::model::loss::batch_loss;
use crate::model::{GridContext, ModelConfig, ModelParams, PredictorStats, Target};
use crate::oracle::OracleRecord;

pub use eval::{evaluate, solve_oracle, EvalOptions, EvalReport, ScenarioRow, Summary};
pub use metrics::{dispatch_error, topology_error, violation_stats, voltage_error, ViolationStats};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// One member per seed.
    pub seeds: Vec<u64>,
    /// Validation loss is recorded every this many epochs and at the end.
    pub validate_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1500,
            batch_size: 200,
            learning_rate: 5e-4,
            seeds: (0..10).collect(),
            validate_every: 10,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Seeds `base, base+1, ..` for a committee of `size`.
    pub fn with_committee(mut self, size: usize, base: u64) -> Self {
        self.seeds = (0..size as u64).map(|k| base + k).collect();
        self
    }

    pub fn committee_size(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Validation(m.into()));
        if self.seeds.is_empty() {
            return fail("committee size must be at least 1");
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return fail("committee seeds must be distinct");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.validate_every == 0 {
            return fail("epochs, batch size and validation interval must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be positive");
        }
        self.model.validate()
    }
}

/// One grid with its scenarios and, for supervised modes, oracle targets
/// indexed like `dataset.scenarios` (`None` where the oracle is infeasible).
#[derive(Clone, Debug)]
pub struct TrainTask {
    pub grid: GridSpec,
    pub dataset: Dataset,
    pub targets: Option<Vec<Option<Target>>>,
}

impl TrainTask {
    pub fn new(grid: GridSpec, dataset: Dataset) -> Result<Self> {
        if dataset.grid_signature != grid.signature() {
            return Err(Error::Validation(format!("dataset does not belong to grid {}", grid.name())));
        }
        Ok(TrainTask {
            grid,
            dataset,
            targets: None,
        })
    }

    /// Attaches oracle targets. Fails if any scenario lacks a record.
    pub fn with_oracle(mut self, records: &[OracleRecord]) -> Result<Self> {
        let sig = self.grid.signature();
        let mut by_id: Vec<Option<&OracleRecord>> = vec![None; self.dataset.len()];
        for r in records {
            if r.grid_signature != sig {
                return Err(Error::Validation(format!(
                    "oracle record {} is for grid {}, expected {sig}",
                    r.scenario, r.grid_signature
                )));
            }
            if let Some(slot) = by_id.get_mut(r.scenario) {
                *slot = Some(r);
            }
        }
        let mut targets = Vec::with_capacity(by_id.len());
        for (i, r) in by_id.into_iter().enumerate() {
            let r = r.ok_or_else(|| Error::MissingTarget(format!("no oracle record for scenario {i}")))?;
            targets.push(Target::from_solution(&r.solution).ok());
        }
        self.targets = Some(targets);
        Ok(self)
    }

    /// Indices usable for the loss: every scenario, or only those with a
    /// feasible target when the mode needs one.
    fn usable(&self, indices: &[usize], needs_targets: bool) -> Result<Vec<usize>> {
        if !needs_targets {
            return Ok(indices.to_vec());
        }
        let t = self.targets.as_ref().ok_or_else(|| {
            Error::MissingTarget(format!("grid {} has no oracle targets", self.grid.name()))
        })?;
        Ok(indices.iter().copied().filter(|&i| t[i].is_some()).collect())
    }

    fn batch(&self, idx: &[usize]) -> (Vec<LoadScenario>, Option<Vec<&Target>>) {
        let scs = idx.iter().map(|&i| self.dataset.scenarios[i].clone()).collect();
        let t = self
            .targets
            .as_ref()
            .map(|t| idx.iter().filter_map(|&i| t[i].as_ref()).collect::<Vec<_>>())
            .filter(|t| t.len() == idx.len());
        (scs, t)
    }
}

/// One loss-curve point. `val_loss` is present on validation epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPoint {
    pub epoch: usize,
    pub member: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Committee {
    pub members: Vec<ModelParams>,
    pub curves: Vec<LossPoint>,
}

impl Committee {
    pub fn member_refs(&self) -> Vec<&ModelParams> {
        self.members.iter().collect()
    }

    /// Mean training loss of all members at `epoch`.
    pub fn mean_train_loss(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .curves
            .iter()
            .filter(|p| p.epoch == epoch)
            .map(|p| p.train_loss)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Single-grid training.
pub fn train(task: &TrainTask, config: &TrainConfig) -> Result<Committee> {
    multi_grid_train(std::slice::from_ref(task), config)
}

/// Trains one shared parameter set per seed over all tasks, alternating
/// batches between grids. Members train in parallel; the result does not
/// depend on the thread count.
pub fn multi_grid_train(tasks: &[TrainTask], config: &TrainConfig) -> Result<Committee> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::Validation("no training data".into()));
    }
    let needs = config.model.supervision.needs_targets();
    for t in tasks {
        if t.usable(&t.dataset.split.train, needs)?.is_empty() {
            return Err(Error::Validation(format!("grid {} has no usable training scenarios", t.grid.name())));
        }
    }
    let results: Vec<Result<(ModelParams, Vec<LossPoint>)>> = config
        .seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| train_member(tasks, config, k, seed))
        .collect();
    let mut members = Vec::with_capacity(results.len());
    let mut curves = Vec::new();
    for r in results {
        let (p, c) = r?;
        members.push(p);
        curves.extend(c);
    }
    Ok(Committee { members, curves })
}

struct Contexts<'a> {
    tasks: &'a [TrainTask],
    cache: HashMap<(usize, usize), GridContext>,
}

impl Contexts<'_> {
    fn get(&mut self, task: usize, batch: usize) -> Result<&GridContext> {
        if !self.cache.contains_key(&(task, batch)) {
            let ctx = GridContext::new(&self.tasks[task].grid, batch, None)?;
            self.cache.insert((task, batch), ctx);
        }
        Ok(&self.cache[&(task, batch)])
    }
}

struct StepResult {
    loss: f64,
    grads: Vec<Tensor>,
    stats: PredictorStats,
}

fn loss_step(
    params: &ModelParams,
    ctx: &GridContext,
    scenarios: &[LoadScenario],
    targets: Option<&[&Target]>,
    mode: Mode,
    with_grad: bool,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let (preds, stats) = predict(&mut tape, &bound, params, ctx, scenarios, mode)?;
    let d = decode(&mut tape, ctx, scenarios, &preds, &params.config, mode)?;
    let loss = batch_loss(&mut tape, ctx, scenarios, &d, &params.config, targets)?;
    let value = tape.value(loss).data()[0];
    let grads = if with_grad && value.is_finite() {
        let g = tape.backward(loss)?;
        bound.vars().iter().map(|&v| g.get_or_zeros(&tape, v)).collect()
    } else {
        Vec::new()
    };
    Ok(StepResult {
        loss: value,
        grads,
        stats,
    })
}

fn train_member(tasks: &[TrainTask], config: &TrainConfig, member: usize, seed: u64) -> Result<(ModelParams, Vec<LossPoint>)> {
    let grids: Vec<&GridSpec> = tasks.iter().map(|t| &t.grid).collect();
    let mut params = ModelParams::new(&config.model, &grids, seed)?;
    let mut adam = AdamState::new(&params.store, config.learning_rate);
    // separate stream from parameter initialisation
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let needs = config.model.supervision.needs_targets();
    let train_idx: Vec<Vec<usize>> = tasks
        .iter()
        .map(|t| t.usable(&t.dataset.split.train, needs))
        .collect::<Result<_>>()?;
    let val_idx: Vec<Vec<usize>> = tasks
        .iter()
        .map(|t| t.usable(&t.dataset.split.validation, needs))
        .collect::<Result<_>>()?;
    let mut ctxs = Contexts {
        tasks,
        cache: HashMap::new(),
    };
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let batches: Vec<Vec<Vec<usize>>> = train_idx
            .iter()
            .map(|idx| {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng);
                idx.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
        let (mut total, mut count) = (0.0, 0usize);
        for r in 0..rounds {
            for (t, task_batches) in batches.iter().enumerate() {
                let Some(idx) = task_batches.get(r) else { continue };
                let (scs, targets) = tasks[t].batch(idx);
                let ctx = ctxs.get(t, idx.len())?;
                let mode = Mode::Train { seed: rng.next_u64() };
                let step = loss_step(&params, ctx, &scs, targets.as_deref(), mode, true)?;
                if !step.loss.is_finite() || step.grads.iter().any(|g| !g.all_finite()) {
                    return Err(Error::Divergence(format!(
                        "member {member} (seed {seed}): non-finite loss at epoch {epoch}"
                    )));
                }
                adam.step(&mut params.store, &step.grads)?;
                if let Some(s) = &step.stats.line {
                    params.line_predictor.update_running(s);
                }
                if let Some(s) = &step.stats.switch {
                    params.switch_predictor.update_running(s);
                }
                total += step.loss * idx.len() as f64;
                count += idx.len();
            }
        }
        let val_loss = if epoch % config.validate_every == 0 || epoch == config.epochs {
            validation_loss(&params, tasks, &val_idx, config.batch_size, &mut ctxs)?
        } else {
            None
        };
        curve.push(LossPoint {
            epoch,
            member,
            train_loss: total / count.max(1) as f64,
            val_loss,
        });
    }
    Ok((params, curve))
}

fn validation_loss(
    params: &ModelParams,
    tasks: &[TrainTask],
    val_idx: &[Vec<usize>],
    batch_size: usize,
    ctxs: &mut Contexts,
) -> Result<Option<f64>> {
    let (mut total, mut count) = (0.0, 0usize);
    for (t, idx) in val_idx.iter().enumerate() {
        for chunk in idx.chunks(batch_size) {
            let (scs, targets) = tasks[t].batch(chunk);
            let ctx = ctxs.get(t, chunk.len())?;
            let step = loss_step(params, ctx, &scs, targets.as_deref(), Mode::Eval, false)?;
            total += step.loss * chunk.len() as f64;
            count += chunk.len();
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

/// `epoch,member,train_loss,val_loss` with an empty validation cell on
/// epochs without validation.
pub fn write_loss_curves<W: Write>(points: &[LossPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "member", "train_loss", "val_loss"])?;
    for p in points {
        w.write_record([
            p.epoch.to_string(),
            p.member.to_string(),
            p.train_loss.to_string(),
            p.val_loss.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

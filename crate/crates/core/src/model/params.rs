use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{he_uniform, Checkpoint, MlpBlock, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Width of the raw node input (active and reactive load).
pub const NODE_INPUT: usize = 2;

/// Weights of one message-passing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    pub w4: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub layers: Vec<LayerParams>,
    pub line_predictor: MlpBlock,
    pub switch_predictor: MlpBlock,
    /// Learned initial switch embeddings (`M_sw × h`) per grid signature.
    seeds: BTreeMap<String, ParamId>,
}

impl ModelParams {
    /// Fresh parameters with switch seeds for each of `grids`.
    pub fn new(config: &ModelConfig, grids: &[&GridSpec], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { NODE_INPUT } else { h };
            layers.push(LayerParams {
                w1: store.add(format!("mp{l}.w1"), he_uniform(input, h, &mut rng)),
                b1: store.add(format!("mp{l}.b1"), Tensor::zeros(1, h)),
                w2: store.add(format!("mp{l}.w2"), he_uniform(input, h, &mut rng)),
                w3: store.add(format!("mp{l}.w3"), he_uniform(input, h, &mut rng)),
                b3: store.add(format!("mp{l}.b3"), Tensor::zeros(1, h)),
                w4: store.add(format!("mp{l}.w4"), he_uniform(h, h, &mut rng)),
            });
        }
        let line_predictor = MlpBlock::new(&mut store, "lpred", 3 * h, config.line_hidden, 3, config.dropout, 1, &mut rng)?;
        let switch_predictor =
            MlpBlock::new(&mut store, "spred", 4 * h, config.switch_hidden, 4, config.dropout, 2, &mut rng)?;
        let mut p = ModelParams {
            config: config.clone(),
            store,
            layers,
            line_predictor,
            switch_predictor,
            seeds: BTreeMap::new(),
        };
        for g in grids {
            p.add_grid(g, &mut rng);
        }
        Ok(p)
    }

    /// Registers seeds for a grid. A no-op if the signature is already known.
    pub fn add_grid(&mut self, grid: &GridSpec, rng: &mut impl Rng) {
        let sig = grid.signature();
        if self.seeds.contains_key(&sig) {
            return;
        }
        let t = Tensor::from_fn(grid.num_switches(), self.config.hidden, |_, _| rng.random_range(-1.0..1.0));
        let id = self.store.add(format!("seed.{sig}"), t);
        self.seeds.insert(sig, id);
    }

    /// Reuses the seeds of `known` for `other`, e.g. a relabelled copy with
    /// the same switch order.
    pub fn share_seeds(&mut self, known: &GridSpec, other: &GridSpec) -> Result<()> {
        if known.num_switches() != other.num_switches() {
            return Err(Error::Validation("switch counts differ".into()));
        }
        let t = self.store.get(self.seed_for(known)?).clone();
        let sig = other.signature();
        match self.seeds.get(&sig) {
            Some(&id) => *self.store.get_mut(id) = t,
            None => {
                let id = self.store.add(format!("seed.{sig}"), t);
                self.seeds.insert(sig, id);
            }
        }
        Ok(())
    }

    pub fn seed_for(&self, grid: &GridSpec) -> Result<ParamId> {
        let sig = grid.signature();
        self.seeds.get(&sig).copied().ok_or_else(|| {
            Error::Validation(format!(
                "model has no switch embeddings for grid {} ({sig}); known: {}",
                grid.name(),
                self.grid_signatures().join(", ")
            ))
        })
    }

    pub fn grid_signatures(&self) -> Vec<String> {
        self.seeds.keys().cloned().collect()
    }

    /// Scalars in the message-passing layers and both predictors; grid seeds
    /// are excluded. Depends on `h` and the predictor widths only.
    pub fn num_shared_params(&self) -> usize {
        let seed_scalars: usize = self.seeds.values().map(|&id| self.store.get(id).len()).sum();
        self.store.num_scalars() - seed_scalars
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (k, v) in self.config.to_pairs() {
            ck.push_meta(format!("config.{k}"), v);
        }
        ck.push_meta("grids", self.grid_signatures().join(","));
        for (name, t) in self.store.iter() {
            ck.tensors.push((name.to_string(), t.clone()));
        }
        for (prefix, block) in [("lpred", &self.line_predictor), ("spred", &self.switch_predictor)] {
            ck.tensors.push((format!("{prefix}.running_mean"), block.running_mean.clone()));
            ck.tensors.push((format!("{prefix}.running_var"), block.running_var.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_pairs(
            ck.meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k, v.as_str()))),
        )?;
        let mut p = ModelParams::new(&config, &[], 0)?;
        let shared: Vec<ParamId> = p.store.ids().collect();
        for id in shared {
            let name = p.store.name(id).to_string();
            let t = ck
                .tensor(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != p.store.get(id).shape() {
                return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong shape")));
            }
            *p.store.get_mut(id) = t.clone();
        }
        for (name, t) in &ck.tensors {
            if let Some(sig) = name.strip_prefix("seed.") {
                if t.cols() != config.hidden {
                    return Err(Error::Checkpoint(format!("seed `{sig}` has the wrong width")));
                }
                let id = p.store.add(name.clone(), t.clone());
                p.seeds.insert(sig.to_string(), id);
            }
        }
        for (prefix, block) in [("lpred", &mut p.line_predictor), ("spred", &mut p.switch_predictor)] {
            for (suffix, slot) in [("running_mean", &mut block.running_mean), ("running_var", &mut block.running_var)] {
                let name = format!("{prefix}.{suffix}");
                let t = ck
                    .tensor(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong shape")));
                }
                *slot = t.clone();
            }
        }
        Ok(p)
    }
}

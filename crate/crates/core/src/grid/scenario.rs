use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_permutation, GridSpec, NodeId};
use crate::error::{Error, Result};

/// Generation limits of one node for one scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenBounds {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// Loads for one problem instance, plus optional per-node overrides of the
/// active generation cap (PV availability).
#[derive(Clone, Debug, PartialEq)]
pub struct LoadScenario {
    pub p_load: Vec<f64>,
    pub q_load: Vec<f64>,
    pub p_gen_max: Vec<Option<f64>>,
}

impl LoadScenario {
    pub fn nominal(grid: &GridSpec) -> Self {
        LoadScenario {
            p_load: grid.nodes().iter().map(|n| n.p_load_nominal).collect(),
            q_load: grid.nodes().iter().map(|n| n.q_load_nominal).collect(),
            p_gen_max: vec![None; grid.num_nodes()],
        }
    }

    pub fn zero(grid: &GridSpec) -> Self {
        let n = grid.num_nodes();
        LoadScenario {
            p_load: vec![0.0; n],
            q_load: vec![0.0; n],
            p_gen_max: vec![None; n],
        }
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.num_nodes();
        if self.p_load.len() != n || self.q_load.len() != n || self.p_gen_max.len() != n {
            return Err(Error::Shape(format!(
                "scenario vectors must have length {n} for grid {}",
                grid.name()
            )));
        }
        Ok(())
    }

    pub fn gen_bounds(&self, grid: &GridSpec, node: NodeId) -> GenBounds {
        let spec = &grid.nodes()[node];
        GenBounds {
            p_min: spec.p_gen_min,
            p_max: self.p_gen_max[node].unwrap_or(spec.p_gen_max),
            q_min: spec.q_gen_min,
            q_max: spec.q_gen_max,
        }
    }

    /// Applies the node relabeling `perm[old] = new`.
    pub fn relabel(&self, perm: &[NodeId]) -> Result<LoadScenario> {
        check_permutation(perm, self.p_load.len())?;
        let mut out = self.clone();
        for (old, &new) in perm.iter().enumerate() {
            out.p_load[new] = self.p_load[old];
            out.q_load[new] = self.q_load[old];
            out.p_gen_max[new] = self.p_gen_max[old];
        }
        Ok(out)
    }
}

/// Settings for [`generate_scenarios`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub count: usize,
    pub seed: u64,
    /// Half-width of the uniform multiplicative load perturbation.
    pub load_band: f64,
    /// Aggregate PV capacity as a fraction of peak load.
    pub pv_penetration: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            count: 8600,
            seed: 0,
            load_band: 0.1,
            pv_penetration: 0.25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub grid_signature: String,
    pub scenarios: Vec<LoadScenario>,
    pub seed: u64,
    pub split: Split,
}

impl Dataset {
    /// Wraps scenarios read from elsewhere; the split is derived from `seed`.
    pub fn new(grid: &GridSpec, scenarios: Vec<LoadScenario>, seed: u64) -> Result<Self> {
        if scenarios.is_empty() {
            return Err(Error::Validation("dataset has no scenarios".into()));
        }
        for s in &scenarios {
            s.check(grid)?;
        }
        let mut ds = Dataset {
            grid_signature: grid.signature(),
            scenarios,
            seed,
            split: Split::default(),
        };
        ds.split = split_dataset(&ds);
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<&LoadScenario> {
        indices.iter().map(|&i| &self.scenarios[i]).collect()
    }
}

/// Draws `count` perturbed load scenarios. Each node's nominal load is scaled
/// by an independent factor in `[1 - band, 1 + band]` (same factor on p and q).
/// PV nodes share one availability factor in `[0, 1]` per scenario and split
/// `pv_penetration * peak_load` evenly as their active cap.
pub fn generate_scenarios(grid: &GridSpec, config: &ScenarioConfig) -> Result<Dataset> {
    if config.count == 0 {
        return Err(Error::Validation("scenario count must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&config.load_band) {
        return Err(Error::Validation("load band must lie in [0, 1)".into()));
    }
    if !(0.0..=1.0).contains(&config.pv_penetration) {
        return Err(Error::Validation("pv penetration must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pv = grid.pv_nodes();
    let pv_share = if pv.is_empty() {
        0.0
    } else {
        config.pv_penetration * grid.peak_load() / pv.len() as f64
    };
    let mut scenarios = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let mut s = LoadScenario::nominal(grid);
        for j in 0..grid.num_nodes() {
            let u: f64 = rng.random();
            let factor = 1.0 + config.load_band * (2.0 * u - 1.0);
            s.p_load[j] *= factor;
            s.q_load[j] *= factor;
        }
        let availability: f64 = rng.random();
        for &j in &pv {
            s.p_gen_max[j] = Some(pv_share * availability);
        }
        scenarios.push(s);
    }
    Dataset::new(grid, scenarios, config.seed)
}

/// Seeded shuffle into 80/10/10; rounding remainders go to the training set.
pub fn split_dataset(ds: &Dataset) -> Split {
    let n = ds.scenarios.len();
    let mut order: Vec<usize> = (0..n).collect();
    // decorrelate from the generation stream that used the same seed
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed ^ SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_val = n / 10;
    let n_test = n / 10;
    let n_train = n - n_val - n_test;
    Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}

const SPLIT_STREAM: u64 = 0x5eed_5b11;

/// Writes `scenario,pl_0..,ql_0..,pgmax_<pv>..` with one row per scenario.
pub fn write_dataset<W: Write>(grid: &GridSpec, ds: &Dataset, out: W) -> Result<()> {
    let n = grid.num_nodes();
    let pv = grid.pv_nodes();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario".to_string()];
    header.extend((0..n).map(|j| format!("pl_{j}")));
    header.extend((0..n).map(|j| format!("ql_{j}")));
    header.extend(pv.iter().map(|j| format!("pgmax_{j}")));
    w.write_record(&header)?;
    for (id, s) in ds.scenarios.iter().enumerate() {
        let mut row = vec![id.to_string()];
        row.extend(s.p_load.iter().map(f64::to_string));
        row.extend(s.q_load.iter().map(f64::to_string));
        for &j in &pv {
            let cap = s.gen_bounds(grid, j).p_max;
            row.push(cap.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(grid: &GridSpec, input: R, seed: u64) -> Result<Dataset> {
    let n = grid.num_nodes();
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    let mut pv_cols = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(j) = name.strip_prefix("pgmax_") {
            let j: usize = j
                .parse()
                .map_err(|_| Error::parse(1, format!("bad column `{name}`")))?;
            if j >= n {
                return Err(Error::parse(1, format!("column `{name}` names unknown node")));
            }
            pv_cols.push((col, j));
        }
    }
    if header.len() != 1 + 2 * n + pv_cols.len() {
        return Err(Error::parse(
            1,
            format!("expected {} load columns for grid {}", 2 * n, grid.name()),
        ));
    }
    let mut scenarios = Vec::new();
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = k + 2;
        let num = |col: usize| -> Result<f64> {
            record[col]
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("column {col}: not a number")))
        };
        let mut s = LoadScenario::zero(grid);
        for j in 0..n {
            s.p_load[j] = num(1 + j)?;
            s.q_load[j] = num(1 + n + j)?;
        }
        for &(col, j) in &pv_cols {
            s.p_gen_max[j] = Some(num(col)?);
        }
        scenarios.push(s);
    }
    Dataset::new(grid, scenarios, seed)
}

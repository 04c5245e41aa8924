use std::sync::Arc;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Row indices and constant columns for a batch of `batch` scenarios on one
/// grid. Node rows are `b*N + i`, line rows `b*M + k`, switch rows
/// `b*M_sw + k`.
#[derive(Clone, Debug)]
pub struct GridContext {
    pub grid: GridSpec,
    pub batch: usize,
    pub forced: Vec<Option<bool>>,
    pub required_closed: usize,
    pub node_batch: Arc<[usize]>,
    pub line_from: Arc<[usize]>,
    pub line_to: Arc<[usize]>,
    pub line_batch: Arc<[usize]>,
    pub sw_from: Arc<[usize]>,
    pub sw_to: Arc<[usize]>,
    pub sw_batch: Arc<[usize]>,
    /// Switch row → row of the per-grid seed table.
    pub sw_seed: Arc<[usize]>,
    /// Directed line messages (both directions).
    pub line_msg_src: Arc<[usize]>,
    pub line_msg_dst: Arc<[usize]>,
    /// Directed switch messages, forced-open switches excluded.
    pub sw_msg_src: Arc<[usize]>,
    pub sw_msg_dst: Arc<[usize]>,
    pub sw_msg_edge: Arc<[usize]>,
    /// `1 / |δ(i)|` over lines and all switches.
    pub inv_degree: Tensor,
    pub fixed_degree: Tensor,
    pub slack_keep: Tensor,
    pub slack_one: Tensor,
    pub line_r: Tensor,
    pub line_inv_x: Tensor,
    pub sw_r: Tensor,
    pub sw_inv_x: Tensor,
}

fn arc<T>(v: Vec<T>) -> Arc<[T]> {
    v.into()
}

impl GridContext {
    pub fn new(grid: &GridSpec, batch: usize, forced: Option<&[Option<bool>]>) -> Result<Self> {
        let (n, m, ns) = (grid.num_nodes(), grid.num_lines(), grid.num_switches());
        let forced = match forced {
            Some(f) if f.len() != ns => {
                return Err(Error::Validation(format!(
                    "{} switch clamps given for {ns} switches",
                    f.len()
                )))
            }
            Some(f) => f.to_vec(),
            None => vec![None; ns],
        };
        let required_closed = grid.required_closed_count()?;
        let forced_closed = forced.iter().filter(|f| **f == Some(true)).count();
        let free = forced.iter().filter(|f| f.is_none()).count();
        if forced_closed > required_closed || required_closed - forced_closed > free {
            return Err(Error::Validation(format!(
                "switch clamps leave no way to close exactly {required_closed} switches"
            )));
        }
        let tile = |per: usize, f: &dyn Fn(usize) -> usize, stride: usize| -> Vec<usize> {
            (0..batch).flat_map(|b| (0..per).map(move |k| (b, k))).map(|(b, k)| b * stride + f(k)).collect()
        };
        let lines = grid.lines();
        let sws = grid.switches();
        let by_batch = |per: usize| -> Vec<usize> { (0..batch).flat_map(|b| std::iter::repeat_n(b, per)).collect() };

        let mut line_msg_src = Vec::with_capacity(2 * m * batch);
        let mut line_msg_dst = Vec::with_capacity(2 * m * batch);
        let mut sw_msg_src = Vec::new();
        let mut sw_msg_dst = Vec::new();
        let mut sw_msg_edge = Vec::new();
        for b in 0..batch {
            for e in lines {
                line_msg_src.extend([b * n + e.from, b * n + e.to]);
                line_msg_dst.extend([b * n + e.to, b * n + e.from]);
            }
            for (k, e) in sws.iter().enumerate() {
                if forced[k] == Some(false) {
                    continue;
                }
                sw_msg_src.extend([b * n + e.from, b * n + e.to]);
                sw_msg_dst.extend([b * n + e.to, b * n + e.from]);
                sw_msg_edge.extend([b * ns + k, b * ns + k]);
            }
        }
        let node_col = |f: &dyn Fn(usize) -> f64| Tensor::column((0..batch * n).map(|r| f(r % n)).collect());
        let edge_col = |per: usize, f: &dyn Fn(usize) -> f64| Tensor::column((0..batch * per).map(|r| f(r % per)).collect());
        let slack = grid.slack();
        Ok(GridContext {
            grid: grid.clone(),
            batch,
            required_closed,
            node_batch: arc(by_batch(n)),
            line_from: arc(tile(m, &|k| lines[k].from, n)),
            line_to: arc(tile(m, &|k| lines[k].to, n)),
            line_batch: arc(by_batch(m)),
            sw_from: arc(tile(ns, &|k| sws[k].from, n)),
            sw_to: arc(tile(ns, &|k| sws[k].to, n)),
            sw_batch: arc(by_batch(ns)),
            sw_seed: arc(tile(ns, &|k| k, 0)),
            line_msg_src: arc(line_msg_src),
            line_msg_dst: arc(line_msg_dst),
            sw_msg_src: arc(sw_msg_src),
            sw_msg_dst: arc(sw_msg_dst),
            sw_msg_edge: arc(sw_msg_edge),
            inv_degree: node_col(&|i| {
                let d = grid.total_degree(i);
                if d == 0 {
                    0.0
                } else {
                    1.0 / d as f64
                }
            }),
            fixed_degree: node_col(&|i| grid.fixed_degree(i) as f64),
            slack_keep: node_col(&|i| if i == slack { 0.0 } else { 1.0 }),
            slack_one: node_col(&|i| if i == slack { 1.0 } else { 0.0 }),
            line_r: edge_col(m, &|k| lines[k].r),
            line_inv_x: edge_col(m, &|k| 1.0 / lines[k].x),
            sw_r: edge_col(ns, &|k| sws[k].r),
            sw_inv_x: edge_col(ns, &|k| 1.0 / sws[k].x),
            forced,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn num_lines(&self) -> usize {
        self.grid.num_lines()
    }

    pub fn num_switches(&self) -> usize {
        self.grid.num_switches()
    }
}

use crate::error::{Error, Result};

/// Per-switch clamp: `Some(true)` forced closed, `Some(false)` forced open.
pub type Forced = [Option<bool>];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    Train,
    Eval,
}

/// `y = hard + pass * y_hat`, elementwise. In eval mode `pass` is all zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub hard: Vec<f64>,
    pub pass: Vec<f64>,
}

impl Selection {
    pub fn apply(&self, y_hat: &[f64]) -> Vec<f64> {
        self.hard
            .iter()
            .zip(&self.pass)
            .zip(y_hat)
            .map(|((h, p), y)| h + p * y)
            .collect()
    }

    /// Index of the pass-through switch, if any.
    pub fn fractional(&self) -> Option<usize> {
        self.pass.iter().position(|&p| p != 0.0)
    }
}

/// Free switches sorted by descending probability; equal probabilities keep
/// the lower index first.
pub fn rank(y_hat: &[f64], forced: &Forced) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..y_hat.len()).filter(|&k| forced[k].is_none()).collect();
    idx.sort_by(|&a, &b| y_hat[b].total_cmp(&y_hat[a]).then(a.cmp(&b)));
    idx
}

/// Closes `s` switches: every forced-closed one plus the most probable free
/// ones. In train mode the last free pick passes its probability through.
pub fn phyr_select(y_hat: &[f64], s: usize, forced: &Forced, mode: SelectMode) -> Result<Selection> {
    let n = y_hat.len();
    if forced.len() != n {
        return Err(Error::Shape(format!("{} clamps for {n} switches", forced.len())));
    }
    let forced_closed = forced.iter().filter(|f| **f == Some(true)).count();
    let free = forced.iter().filter(|f| f.is_none()).count();
    if forced_closed > s || s - forced_closed > free {
        return Err(Error::Validation(format!(
            "cannot close {s} switches with {forced_closed} forced closed and {free} free"
        )));
    }
    let mut hard: Vec<f64> = forced.iter().map(|f| if *f == Some(true) { 1.0 } else { 0.0 }).collect();
    let mut pass = vec![0.0; n];
    let k = s - forced_closed;
    let order = rank(y_hat, forced);
    for (r, &i) in order.iter().take(k).enumerate() {
        if mode == SelectMode::Train && r + 1 == k {
            pass[i] = 1.0;
        } else {
            hard[i] = 1.0;
        }
    }
    Ok(Selection { hard, pass })
}

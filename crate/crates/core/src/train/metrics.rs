use crate::error::{Error, Result};
use crate::flow::{FlowState, ViolationVector};

/// Mean over nodes of the squared active plus reactive dispatch error.
pub fn dispatch_error(s: &FlowState, star: &FlowState) -> f64 {
    let n = s.p_gen.len();
    let sum: f64 = (0..n)
        .map(|j| (s.p_gen[j] - star.p_gen[j]).powi(2) + (s.q_gen[j] - star.q_gen[j]).powi(2))
        .sum();
    sum / n as f64
}

/// Mean squared error of the squared nodal voltages.
pub fn voltage_error(s: &FlowState, star: &FlowState) -> f64 {
    let n = s.v.len();
    s.v.iter().zip(&star.v).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
}

/// Normalised Hamming distance between two binary switch vectors.
pub fn topology_error(y: &[f64], y_star: &[f64]) -> Result<f64> {
    if y.len() != y_star.len() {
        return Err(Error::Shape(format!("{} vs {} switch states", y.len(), y_star.len())));
    }
    if let Some(v) = y.iter().chain(y_star).find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation(format!("switch status {v} is not binary")));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(y.iter().zip(y_star).filter(|(a, b)| a != b).count() as f64 / y.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ViolationStats {
    pub mean: f64,
    pub max: f64,
    pub count_over: usize,
}

pub fn violation_stats(h: &ViolationVector, epsilon: f64) -> ViolationStats {
    let pos = || h.entries.iter().map(|&e| e.max(0.0));
    let n = h.entries.len().max(1) as f64;
    ViolationStats {
        mean: pos().sum::<f64>() / n,
        max: pos().fold(0.0, f64::max),
        count_over: pos().filter(|&e| e > epsilon).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixtures;
    use proptest::prelude::*;

    fn state() -> FlowState {
        FlowState::zeros(&fixtures::t5())
    }

    #[test]
    fn dispatch_examples() {
        let a = state();
        assert_eq!(dispatch_error(&a, &a), 0.0);
        let mut b = a.clone();
        b.p_gen[3] = 0.1;
        assert!((dispatch_error(&b, &a) - 0.002).abs() < 1e-15);
        let mut c = a.clone();
        c.p_gen[1] = 0.3;
        c.q_gen[4] = -0.3;
        assert!((dispatch_error(&c, &a) - 2.0 * 0.09 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn voltage_examples() {
        let a = state();
        let mut b = a.clone();
        b.v.iter_mut().for_each(|v| *v += 0.02);
        assert!((voltage_error(&b, &a) - 4e-4).abs() < 1e-15);
        let mut c = a.clone();
        c.v[2] += 0.05;
        assert!((voltage_error(&c, &a) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn topology_examples() {
        assert_eq!(topology_error(&[1., 0., 1., 0.], &[1., 1., 0., 0.]).unwrap(), 0.5);
        assert_eq!(topology_error(&[1., 0.], &[1., 0.]).unwrap(), 0.0);
        let y = [1., 0., 0., 1., 1., 0., 1., 0.];
        let c: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        assert_eq!(topology_error(&y, &c).unwrap(), 1.0);
        assert!(topology_error(&[0.5], &[1.0]).is_err());
    }

    #[test]
    fn violation_examples() {
        let z = ViolationVector { entries: vec![0.0; 5] };
        assert_eq!(violation_stats(&z, 0.01), ViolationStats::default());
        let h = ViolationVector {
            entries: vec![0.03, 0.0, 0.005],
        };
        let s = violation_stats(&h, 0.01);
        assert!((s.mean - 0.035 / 3.0).abs() < 1e-15);
        assert_eq!(s.max, 0.03);
        assert_eq!(s.count_over, 1);
        assert_eq!(violation_stats(&h, 0.0).count_over, 2);
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(p in proptest::collection::vec(-1.0f64..1.0, 15), bits in proptest::collection::vec(any::<bool>(), 6)) {
            let a = state();
            let mut b = a.clone();
            b.v.copy_from_slice(&p[..5]);
            b.p_gen.copy_from_slice(&p[5..10]);
            b.q_gen.copy_from_slice(&p[10..]);
            prop_assert!(dispatch_error(&b, &a) >= 0.0);
            prop_assert!(voltage_error(&b, &a) >= 0.0);
            prop_assert_eq!(dispatch_error(&b, &b), 0.0);
            let y: Vec<f64> = bits[..3].iter().map(|&x| x as u8 as f64).collect();
            let ys: Vec<f64> = bits[3..].iter().map(|&x| x as u8 as f64).collect();
            let t = topology_error(&y, &ys).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
            prop_assert_eq!(topology_error(&y, &y).unwrap(), 0.0);
        }
    }
}

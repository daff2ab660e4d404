use thiserror::Error;

use crate::scalar::Real;

use super::SimulationTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("window [{from}, {to}] contains no samples")]
    EmptyWindow { from: f64, to: f64 },
}

/// Tracking and adaptation statistics over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub window: (f64, f64),
    pub samples: usize,
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub max_abs_error_at: f64,
    /// Adaptive branches only, by name, at the end of the trace.
    pub final_weights: Vec<(String, f64)>,
    /// Mean `|ω̇|` over the window, adaptive branches only.
    pub mean_abs_rates: Vec<(String, f64)>,
    /// Mean Euclidean norm of the adaptive rate vector over the window.
    pub mean_rate_norm: f64,
}

/// Statistics of the samples with `from <= t <= to`.
pub fn metrics<T: Real>(trace: &SimulationTrace<T>, from: f64, to: f64) -> Result<Metrics, MetricsError> {
    let picked: Vec<usize> = (0..trace.len())
        .filter(|&k| {
            let t = trace.t[k].as_f64();
            t >= from && t <= to
        })
        .collect();
    if picked.is_empty() {
        return Err(MetricsError::EmptyWindow { from, to });
    }
    let count = picked.len() as f64;
    let mut sum_sq = 0.0;
    let (mut max_abs, mut max_at) = (0.0f64, trace.t[picked[0]].as_f64());
    for &k in &picked {
        let e = trace.error[k].as_f64();
        sum_sq += e * e;
        if e.abs() > max_abs {
            max_abs = e.abs();
            max_at = trace.t[k].as_f64();
        }
    }
    let adaptive: Vec<usize> = (0..trace.adaptive.len()).filter(|&l| trace.adaptive[l]).collect();
    let final_weights = adaptive
        .iter()
        .map(|&l| {
            let w = trace.weights[l].last().map_or(f64::NAN, |w| w.as_f64());
            (trace.branch_names[l].clone(), w)
        })
        .collect();
    let mean_abs_rates = adaptive
        .iter()
        .map(|&l| {
            let total: f64 = picked.iter().map(|&k| trace.rates[l][k].as_f64().abs()).sum();
            (trace.branch_names[l].clone(), total / count)
        })
        .collect();
    let mean_rate_norm = picked
        .iter()
        .map(|&k| {
            adaptive
                .iter()
                .map(|&l| trace.rates[l][k].as_f64().powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / count;
    Ok(Metrics {
        window: (from, to),
        samples: picked.len(),
        rms_error: (sum_sq / count).sqrt(),
        max_abs_error: max_abs,
        max_abs_error_at: max_at,
        final_weights,
        mean_abs_rates,
        mean_rate_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;

    fn trace(errors: &[f64]) -> SimulationTrace<f64> {
        let n = errors.len();
        SimulationTrace {
            branch_keys: vec![(NodeId(1), NodeId(2))],
            branch_names: vec!["K".into()],
            adaptive: vec![true],
            t: (0..n).map(|k| k as f64).collect(),
            error: errors.to_vec(),
            weights: vec![vec![1.0; n]],
            rates: vec![(0..n).map(|k| -(k as f64)).collect()],
            ..Default::default()
        }
    }

    #[test]
    fn constant_error() {
        let m = metrics(&trace(&[0.5; 10]), 0.0, 9.0).unwrap();
        assert!((m.rms_error - 0.5).abs() < 1e-15);
        assert_eq!(m.max_abs_error, 0.5);
        assert_eq!(m.samples, 10);
    }

    #[test]
    fn zero_error() {
        let m = metrics(&trace(&[0.0; 4]), 0.0, 3.0).unwrap();
        assert_eq!((m.rms_error, m.max_abs_error), (0.0, 0.0));
    }

    #[test]
    fn window_selection_and_rates() {
        let m = metrics(&trace(&[0.0, 3.0, -4.0, 1.0]), 1.0, 2.0).unwrap();
        assert_eq!(m.max_abs_error, 4.0);
        assert_eq!(m.max_abs_error_at, 2.0);
        assert!((m.rms_error - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.mean_abs_rates, vec![("K".to_string(), 1.5)]);
        assert_eq!(m.mean_rate_norm, 1.5);
        assert_eq!(m.final_weights, vec![("K".to_string(), 1.0)]);
        assert!(matches!(
            metrics(&trace(&[0.0]), 5.0, 6.0),
            Err(MetricsError::EmptyWindow { .. })
        ));
    }
}

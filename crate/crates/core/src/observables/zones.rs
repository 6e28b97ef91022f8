//! Seizure-zone classification from simulated activity.
//!
//! A region seizes when its fast variable stays above a threshold
//! continuously for at least a minimum duration. Comparing a coupled run
//! with an uncoupled (G = 0) rerun classifies each region:
//! EZ seizes in isolation, PZ seizes only through coupling, HZ never.

use super::{ObservableError, Result, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    /// Epileptogenic: triggers seizures autonomously.
    Ez,
    /// Propagation: recruited through coupling only.
    Pz,
    /// Healthy: no seizures in either run.
    Hz,
}

impl std::fmt::Display for Zone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Zone::Ez => "EZ",
            Zone::Pz => "PZ",
            Zone::Hz => "HZ",
        })
    }
}

/// True if `samples` exceeds `threshold` continuously for at least
/// `min_duration_ms` on a grid with spacing `dt_out_ms`.
pub fn seizes(samples: &[f64], dt_out_ms: f64, threshold: f64, min_duration_ms: f64) -> bool {
    let needed = (min_duration_ms / dt_out_ms).ceil().max(1.0) as usize;
    let mut run = 0usize;
    for &v in samples {
        if v > threshold {
            run += 1;
            if run >= needed {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Classifies each region from the coupled run and the G = 0 rerun (same
/// configuration except coupling; one uncoupled run isolates every region
/// simultaneously). Both series carry the fast variable per region.
pub fn classify_zones(
    coupled: &TimeSeries,
    isolated: &TimeSeries,
    threshold: f64,
    min_duration_ms: f64,
) -> Result<Vec<Zone>> {
    if coupled.n_channels() != isolated.n_channels() {
        return Err(ObservableError::DimensionMismatch(format!(
            "coupled run has {} regions, isolated run {}",
            coupled.n_channels(),
            isolated.n_channels()
        )));
    }
    Ok((0..coupled.n_channels())
        .map(|i| {
            let alone = seizes(&isolated.data[i], isolated.dt_out, threshold, min_duration_ms);
            let coupled_seizes =
                seizes(&coupled.data[i], coupled.dt_out, threshold, min_duration_ms);
            if alone {
                Zone::Ez
            } else if coupled_seizes {
                Zone::Pz
            } else {
                Zone::Hz
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(rows: Vec<Vec<f64>>) -> TimeSeries {
        TimeSeries {
            t0: 0.0,
            dt_out: 1.0,
            name: "raw".into(),
            labels: (0..rows.len()).map(|i| format!("R{i:03}")).collect(),
            data: rows,
        }
    }

    #[test]
    fn seizure_detection_requires_continuous_excursion() {
        // Above threshold for 3 consecutive ms.
        assert!(seizes(&[0.0, 1.0, 1.0, 1.0, 0.0], 1.0, 0.5, 3.0));
        // Interrupted excursion does not count.
        assert!(!seizes(&[1.0, 1.0, 0.0, 1.0, 1.0], 1.0, 0.5, 3.0));
        // Exactly at threshold is not above it.
        assert!(!seizes(&[0.5; 10], 1.0, 0.5, 3.0));
    }

    #[test]
    fn all_quiescent_is_all_hz() {
        let flat = vec![vec![-1.6; 100]; 3];
        let zones = classify_zones(&series(flat.clone()), &series(flat), 0.0, 10.0).unwrap();
        assert_eq!(zones, vec![Zone::Hz, Zone::Hz, Zone::Hz]);
    }

    #[test]
    fn isolated_seizure_is_ez_regardless_of_coupled_behaviour() {
        let quiet = vec![-1.6; 100];
        let mut ictal = vec![-1.6; 100];
        for v in ictal.iter_mut().take(50).skip(10) {
            *v = 0.5;
        }
        // Region 0 seizes alone but not coupled: still EZ by definition.
        let coupled = series(vec![quiet.clone(), ictal.clone()]);
        let isolated = series(vec![ictal, quiet]);
        let zones = classify_zones(&coupled, &isolated, 0.0, 10.0).unwrap();
        assert_eq!(zones, vec![Zone::Ez, Zone::Pz]);
    }

    #[test]
    fn channel_count_mismatch_rejected() {
        let a = series(vec![vec![0.0; 10]]);
        let b = series(vec![vec![0.0; 10], vec![0.0; 10]]);
        assert!(classify_zones(&a, &b, 0.0, 1.0).is_err());
    }
}

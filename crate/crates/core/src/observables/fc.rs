//! Functional connectivity: Pearson correlation of region time series and
//! the upper-triangle FC fit used for model/empirical comparison.

use super::{ObservableError, Result, TimeSeries};

/// Pearson correlation matrix plus degeneracy flags. A zero-variance
/// channel gets 0 in its whole row and column (diagonal included) and is
/// flagged, so downstream consumers stay total.
#[derive(Debug, Clone, PartialEq)]
pub struct FcMatrix {
    pub matrix: Vec<Vec<f64>>,
    pub degenerate: Vec<bool>,
}

/// Correlation of the retained samples after dropping the first `discard`.
pub fn fc(ts: &TimeSeries, discard: usize) -> Result<FcMatrix> {
    let n = ts.n_channels();
    let total = ts.n_samples();
    let retained = total.saturating_sub(discard);
    if retained < 3 {
        return Err(ObservableError::TooFewSamples {
            retained,
            needed: 3,
        });
    }
    let m = retained as f64;

    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    let mut degenerate = vec![false; n];
    for (ch, row) in ts.data.iter().enumerate() {
        let window = &row[discard..];
        let mean = window.iter().sum::<f64>() / m;
        let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        means[ch] = mean;
        sds[ch] = var.sqrt();
        degenerate[ch] = var == 0.0;
    }
    if degenerate.iter().all(|&d| d) {
        return Err(ObservableError::AllChannelsConstant);
    }

    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        if degenerate[i] {
            continue;
        }
        matrix[i][i] = 1.0;
        for j in (i + 1)..n {
            if degenerate[j] {
                continue;
            }
            let (a, b) = (&ts.data[i][discard..], &ts.data[j][discard..]);
            let cov = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - means[i]) * (y - means[j]))
                .sum::<f64>()
                / m;
            let r = cov / (sds[i] * sds[j]);
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(FcMatrix { matrix, degenerate })
}

/// Pearson correlation of the strictly-upper-triangle entries of two FC
/// matrices (diagonal excluded). Result in [-1, 1].
pub fn fc_fit(fc_sim: &[Vec<f64>], fc_emp: &[Vec<f64>]) -> Result<f64> {
    let n = fc_sim.len();
    if n < 3 {
        return Err(ObservableError::TooFewSamples {
            retained: n,
            needed: 3,
        });
    }
    if fc_emp.len() != n
        || fc_sim.iter().any(|r| r.len() != n)
        || fc_emp.iter().any(|r| r.len() != n)
    {
        return Err(ObservableError::DimensionMismatch(format!(
            "fc matrices {}x? vs {}x?",
            fc_sim.len(),
            fc_emp.len()
        )));
    }
    let utri = |mx: &[Vec<f64>]| {
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                v.push(mx[i][j]);
            }
        }
        v
    };
    pearson(&utri(fc_sim), &utri(fc_emp))
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let m = a.len() as f64;
    let (ma, mb) = (
        a.iter().sum::<f64>() / m,
        b.iter().sum::<f64>() / m,
    );
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(ObservableError::ZeroVariance(
            "upper-triangle vector".into(),
        ));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{draw_unit_f64, mix_key};

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
    fn self_correlation_is_one_and_anticorrelation_minus_one() {
        let x = vec![1.0, 2.0, 4.0, 8.0, 3.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let ts = series(vec![x.clone(), x.clone(), neg]);
        let r = fc(&ts, 0).unwrap();
        assert_eq!(r.matrix[0][0], 1.0);
        assert!((r.matrix[0][1] - 1.0).abs() < 1e-15);
        assert!((r.matrix[0][2] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let n = 6;
        let data: Vec<Vec<f64>> = (0..n)
            .map(|ch| {
                (0..200)
                    .map(|s| draw_unit_f64(mix_key(&[8, ch as u64, s]), 0))
                    .collect()
            })
            .collect();
        let r = fc(&series(data), 10).unwrap();
        for i in 0..n {
            assert_eq!(r.matrix[i][i], 1.0);
            for j in 0..n {
                assert!((r.matrix[i][j] - r.matrix[j][i]).abs() <= 1e-15);
                assert!(r.matrix[i][j].abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn independent_noise_channels_decorrelate() {
        let n_samples = 100_000u64;
        let ch = |tag: u64| -> Vec<f64> {
            (0..n_samples)
                .map(|s| draw_unit_f64(mix_key(&[tag, s]), 0))
                .collect()
        };
        let r = fc(&series(vec![ch(1), ch(2)]), 0).unwrap();
        assert!(r.matrix[0][1].abs() < 0.02, "r = {}", r.matrix[0][1]);
    }

    #[test]
    fn constant_channel_flagged_and_zeroed() {
        let ts = series(vec![vec![1.0, 2.0, 3.0, 4.0], vec![5.0; 4]]);
        let r = fc(&ts, 0).unwrap();
        assert_eq!(r.degenerate, vec![false, true]);
        assert_eq!(r.matrix[1], vec![0.0, 0.0]);
        assert_eq!(r.matrix[0][1], 0.0);
        assert_eq!(r.matrix[0][0], 1.0);
    }

    #[test]
    fn error_paths() {
        let ts = series(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            fc(&ts, 0),
            Err(ObservableError::TooFewSamples { .. })
        ));
        let ts = series(vec![vec![1.0; 10]]);
        assert!(matches!(fc(&ts, 0), Err(ObservableError::AllChannelsConstant)));
        let ts = series(vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert!(matches!(
            fc(&ts, 3),
            Err(ObservableError::TooFewSamples { .. })
        ));
    }

    fn rand_sym(n: usize, tag: u64) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = 1.0;
            for j in (i + 1)..n {
                let v = draw_unit_f64(mix_key(&[tag, i as u64, j as u64]), 0) * 2.0 - 1.0;
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    #[test]
    fn fit_identity_and_negation() {
        let a = rand_sym(5, 3);
        let neg: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        assert!((fc_fit(&a, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!((fc_fit(&a, &neg).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn fit_is_affine_invariant() {
        let a = rand_sym(6, 4);
        let b = rand_sym(6, 5);
        let scaled: Vec<Vec<f64>> = b
            .iter()
            .map(|r| r.iter().map(|v| 2.5 * v + 0.3).collect())
            .collect();
        let f1 = fc_fit(&a, &b).unwrap();
        let f2 = fc_fit(&a, &scaled).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let a = rand_sym(4, 6);
        let b = rand_sym(5, 7);
        assert!(matches!(
            fc_fit(&a, &b),
            Err(ObservableError::DimensionMismatch(_))
        ));
        let flat = vec![vec![0.5; 4]; 4];
        assert!(matches!(
            fc_fit(&a, &flat),
            Err(ObservableError::ZeroVariance(_))
        ));
    }
}

//! Rate/spike transformers bridging the macro and micro scales.

use super::{CosimError, Result};
use crate::rng::{draw_unit_f64, mix_key, Stream};

/// Generates spike trains from per-step rates (Hz) by Bernoulli thinning:
/// each (train, step) fires with probability min(1, rate·dt·10⁻³). Draws
/// are keyed by (seed, train, absolute step) where the absolute step is
/// `window_start_step + i`, so the same global step always produces the
/// same spikes no matter how steps are grouped into windows. Returns
/// (train, time ms) pairs sorted by time; spike times are absolute,
/// `step * dt`.
pub fn rate_to_spikes(
    rates: &[f64],
    dt: f64,
    n_trains: usize,
    seed: u64,
    window_start_step: u64,
) -> Result<Vec<(u32, f64)>> {
    if let Some(bad) = rates.iter().find(|r| !(**r >= 0.0)) {
        return Err(CosimError::Config(format!("negative rate {bad}")));
    }
    let mut spikes = Vec::new();
    for (i, &rate) in rates.iter().enumerate() {
        let step = window_start_step + i as u64;
        let p = (rate * dt * 1e-3).min(1.0);
        if p <= 0.0 {
            continue;
        }
        let t = step as f64 * dt;
        for train in 0..n_trains {
            let u = draw_unit_f64(
                mix_key(&[Stream::Spikes as u64, seed, train as u64, step]),
                0,
            );
            if u < p {
                spikes.push((train as u32, t));
            }
        }
    }
    // Per-step generation already orders by time; trains ascend within a
    // step.
    Ok(spikes)
}

/// Converts a window of spikes into per-step population rates (Hz):
/// raw[s] = count(s) / (n_neurons · dt · 10⁻³), optionally exponentially
/// smoothed with decay exp(−dt/smoothing_tau) starting from zero.
/// `spikes` carry (train, absolute time ms); `window_start_step` anchors
/// step 0 of the output.
pub fn spikes_to_rate(
    spikes: &[(u32, f64)],
    n_neurons: usize,
    dt: f64,
    window_steps: usize,
    smoothing_tau: f64,
    window_start_step: u64,
) -> Result<Vec<f64>> {
    if n_neurons == 0 {
        return Err(CosimError::Config("n_neurons must be >= 1".into()));
    }
    let mut counts = vec![0usize; window_steps];
    let t0 = window_start_step as f64 * dt;
    for &(_, t) in spikes {
        let s = ((t - t0) / dt).round();
        if s < 0.0 || s >= window_steps as f64 {
            return Err(CosimError::Frame(format!(
                "spike time {t} ms outside window [{t0}, {})",
                t0 + window_steps as f64 * dt
            )));
        }
        counts[s as usize] += 1;
    }
    let scale = 1.0 / (n_neurons as f64 * dt * 1e-3);
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 * scale).collect();
    Ok(smooth(&raw, dt, smoothing_tau, 0.0))
}

/// Exponential smoothing y[s] = decay·y[s−1] + (1−decay)·raw[s] with
/// y[-1] = carry; decay = exp(−dt/tau). tau = 0 disables smoothing.
pub fn smooth(raw: &[f64], dt: f64, tau: f64, carry: f64) -> Vec<f64> {
    if tau <= 0.0 {
        return raw.to_vec();
    }
    let decay = (-dt / tau).exp();
    let mut y = carry;
    raw.iter()
        .map(|&r| {
            y = decay * y + (1.0 - decay) * r;
            y
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_no_spikes() {
        let spikes = rate_to_spikes(&[0.0; 1000], 0.1, 5, 1, 0).unwrap();
        assert!(spikes.is_empty());
    }

    #[test]
    fn negative_rate_rejected() {
        assert!(rate_to_spikes(&[-1.0], 0.1, 1, 1, 0).is_err());
    }

    #[test]
    fn identical_keys_identical_trains() {
        let rates = vec![80.0; 5000];
        let a = rate_to_spikes(&rates, 0.1, 3, 42, 100).unwrap();
        let b = rate_to_spikes(&rates, 0.1, 3, 42, 100).unwrap();
        assert_eq!(a, b);
        let c = rate_to_spikes(&rates, 0.1, 3, 43, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn windowing_does_not_change_spikes() {
        // One 100-step window vs four 25-step windows: same spikes.
        let rates = vec![200.0; 100];
        let whole = rate_to_spikes(&rates, 0.1, 4, 7, 0).unwrap();
        let mut parts = Vec::new();
        for w in 0..4 {
            parts.extend(rate_to_spikes(&rates[w * 25..(w + 1) * 25], 0.1, 4, 7, (w * 25) as u64).unwrap());
        }
        assert_eq!(whole, parts);
    }

    #[test]
    fn binomial_count_within_three_sigma() {
        // 100 Hz, dt 0.1 ms, 1 train, 1e5 steps (10 s): p = 0.01,
        // expectation 1000, 3 sigma ≈ 94.5.
        let rates = vec![100.0; 100_000];
        let spikes = rate_to_spikes(&rates, 0.1, 1, 2024, 0).unwrap();
        let n = spikes.len() as f64;
        assert!((n - 1000.0).abs() < 95.0, "count {n}");
    }

    #[test]
    fn rate_recovery_arithmetic() {
        // 10 neurons all spiking once in one step, dt 1 ms -> 1000 Hz.
        let spikes: Vec<(u32, f64)> = (0..10).map(|i| (i, 3.0)).collect();
        let rates = spikes_to_rate(&spikes, 10, 1.0, 5, 0.0, 0).unwrap();
        assert_eq!(rates, vec![0.0, 0.0, 0.0, 1000.0, 0.0]);
    }

    #[test]
    fn no_spikes_zero_rates() {
        let rates = spikes_to_rate(&[], 10, 0.1, 50, 0.0, 0).unwrap();
        assert!(rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn out_of_window_spike_rejected() {
        assert!(spikes_to_rate(&[(0, 100.0)], 1, 0.1, 10, 0.0, 0).is_err());
    }

    #[test]
    fn round_trip_mean_rate() {
        // Constant 50 Hz through 200 trains for 2 s, no smoothing: the
        // recovered mean rate lands within 50 ± 5 Hz.
        let dt = 0.1;
        let steps = 20_000;
        let rates = vec![50.0; steps];
        let spikes = rate_to_spikes(&rates, dt, 200, 11, 0).unwrap();
        let recovered = spikes_to_rate(&spikes, 200, dt, steps, 0.0, 0).unwrap();
        let mean = recovered.iter().sum::<f64>() / steps as f64;
        assert!((mean - 50.0).abs() < 5.0, "mean {mean}");
    }

    #[test]
    fn mean_rate_preserved_at_500_trains_within_three_sigma() {
        // First-order statistics: mean(spikes_to_rate(rate_to_spikes(r)))
        // approaches r; at 500 trains the binomial 3-sigma band is tight.
        let dt = 0.1;
        let steps = 20_000;
        let trains = 500;
        let rate = 50.0;
        let p = rate * dt * 1e-3;
        let spikes = rate_to_spikes(&vec![rate; steps], dt, trains, 3131, 0).unwrap();
        let recovered = spikes_to_rate(&spikes, trains, dt, steps, 0.0, 0).unwrap();
        let mean = recovered.iter().sum::<f64>() / steps as f64;
        // mean = total spikes / (n_total · dt·1e-3), total ~ B(n_total, p).
        let n_total = (trains * steps) as f64;
        let sigma_rate = (p * (1.0 - p) / n_total).sqrt() / (dt * 1e-3);
        assert!(
            (mean - rate).abs() <= 3.0 * sigma_rate,
            "mean {mean}, band {rate} ± {:.3}",
            3.0 * sigma_rate
        );
    }

    #[test]
    fn smoothing_is_streaming() {
        let raw = vec![1.0, 0.0, 2.0, 4.0, 0.5, 0.25];
        let whole = smooth(&raw, 0.1, 2.0, 0.0);
        let head = smooth(&raw[..3], 0.1, 2.0, 0.0);
        let tail = smooth(&raw[3..], 0.1, 2.0, head[2]);
        assert_eq!(&whole[..3], &head[..]);
        assert_eq!(&whole[3..], &tail[..]);
    }
}

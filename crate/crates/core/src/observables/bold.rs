//! BOLD forward model: linear convolution with a canonical double-gamma
//! hemodynamic response function, then decimation to the scanner TR.

use super::{ObservableError, Result, TimeSeries};

/// Double-gamma HRF parameters, in seconds. The kernel is
/// `gampdf(t; peak/disp1, disp1) - gampdf(t; undershoot/disp2, disp2)/ratio`,
/// truncated at `kernel_length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrfParams {
    pub peak_delay: f64,
    pub undershoot_delay: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    /// Peak-to-undershoot amplitude ratio (the undershoot term is divided
    /// by this).
    pub undershoot_ratio: f64,
    pub kernel_length: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams {
            peak_delay: 6.0,
            undershoot_delay: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 6.0,
            kernel_length: 32.0,
        }
    }
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-13 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (std::f64::consts::TAU).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn gamma_pdf(t: f64, shape: f64, scale: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t / scale - shape * scale.ln() - ln_gamma(shape)).exp()
}

/// Samples the HRF on the monitor grid: entry i is h(i*dt)·dt with dt in
/// ms, so discrete convolution approximates the continuous integral.
pub fn hrf_kernel(dt_ms: f64, p: &HrfParams) -> Vec<f64> {
    let dt_s = dt_ms * 1e-3;
    let n = (p.kernel_length / dt_s).ceil() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 * dt_s;
            let peak = gamma_pdf(t, p.peak_delay / p.peak_dispersion, p.peak_dispersion);
            let under = gamma_pdf(
                t,
                p.undershoot_delay / p.undershoot_dispersion,
                p.undershoot_dispersion,
            );
            (peak - under / p.undershoot_ratio) * dt_s
        })
        .collect()
}

/// Full-resolution convolution of every channel with the sampled HRF; same
/// grid as the input.
pub fn convolve_hrf(ts: &TimeSeries, p: &HrfParams) -> TimeSeries {
    let kernel = hrf_kernel(ts.dt_out, p);
    let n_samples = ts.n_samples();
    let data = ts
        .data
        .iter()
        .map(|row| {
            (0..n_samples)
                .map(|s| {
                    let kmax = kernel.len().min(s + 1);
                    (0..kmax).map(|k| kernel[k] * row[s - k]).sum()
                })
                .collect()
        })
        .collect();
    TimeSeries {
        t0: ts.t0,
        dt_out: ts.dt_out,
        name: "bold".into(),
        labels: ts.labels.clone(),
        data,
    }
}

/// HRF convolution followed by decimation to TR. The first
/// ceil(kernel_length / TR) output samples are convolution warm-up (the
/// kernel has not yet seen a full input window) and are dropped.
pub fn bold_hrf(ts: &TimeSeries, tr_ms: f64, p: &HrfParams) -> Result<TimeSeries> {
    let dt = ts.dt_out;
    if !(tr_ms > 0.0) || tr_ms < dt {
        return Err(ObservableError::BadTr { tr: tr_ms, dt });
    }
    let ratio_f = tr_ms / dt;
    let ratio = ratio_f.round();
    if (ratio_f - ratio).abs() > 1e-9 {
        return Err(ObservableError::BadTr { tr: tr_ms, dt });
    }
    let ratio = ratio as usize;

    let full = convolve_hrf(ts, p);
    let n_out = ts.n_samples() / ratio;
    let warmup = ((p.kernel_length * 1e3) / tr_ms).ceil() as usize;
    let kept = n_out.saturating_sub(warmup);

    let data = full
        .data
        .iter()
        .map(|row| {
            (warmup..n_out)
                .map(|m| row[(m + 1) * ratio - 1])
                .collect()
        })
        .collect();
    Ok(TimeSeries {
        t0: ts.t0 + (warmup + 1) as f64 * tr_ms,
        dt_out: tr_ms,
        name: "bold".into(),
        labels: ts.labels.clone(),
        data,
    })
    .map(|mut out: TimeSeries| {
        // Normalize channel lengths for the degenerate all-dropped case.
        if kept == 0 {
            for row in &mut out.data {
                row.clear();
            }
        }
        out
    })
}

//! EEG forward projection through a lead-field (gain) matrix.
//!
//! Lead-field file format: plaintext ASCII, one header line
//! `# sensors=<S> sources=<N> granularity=<region|vertex>` followed by S
//! rows of N whitespace-separated reals (sensor-major, i.e. transposed
//! relative to sources-by-sensors conventions). Vertex-granularity fields
//! need a region mapping (one region index per vertex) supplied separately.

use super::{ObservableError, Result, TimeSeries};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub enum Granularity {
    Region,
    /// Per-vertex sources; `region_mapping[v]` is vertex v's region.
    Vertex { region_mapping: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadField {
    /// gain[sensor][source]
    pub gain: Vec<Vec<f64>>,
    pub sensor_labels: Vec<String>,
    pub granularity: Granularity,
}

impl LeadField {
    pub fn n_sensors(&self) -> usize {
        self.gain.len()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.first().map_or(0, Vec::len)
    }

    /// Region-level gain: identity for region granularity; for vertex
    /// granularity, column r is the mean of the vertex columns mapped to
    /// region r (regions with no vertices get a zero column).
    pub fn region_gain(&self, n_regions: usize) -> Result<Vec<Vec<f64>>> {
        match &self.granularity {
            Granularity::Region => {
                if self.n_sources() != n_regions {
                    return Err(ObservableError::DimensionMismatch(format!(
                        "lead field has {} sources for {n_regions} regions",
                        self.n_sources()
                    )));
                }
                Ok(self.gain.clone())
            }
            Granularity::Vertex { region_mapping } => {
                if region_mapping.len() != self.n_sources() {
                    return Err(ObservableError::DimensionMismatch(format!(
                        "region mapping covers {} vertices, lead field has {}",
                        region_mapping.len(),
                        self.n_sources()
                    )));
                }
                if let Some(&bad) = region_mapping.iter().find(|&&r| r >= n_regions) {
                    return Err(ObservableError::DimensionMismatch(format!(
                        "region mapping entry {bad} out of range for {n_regions} regions"
                    )));
                }
                let mut counts = vec![0usize; n_regions];
                for &r in region_mapping {
                    counts[r] += 1;
                }
                let gain = self
                    .gain
                    .iter()
                    .map(|row| {
                        let mut out = vec![0.0; n_regions];
                        for (v, &r) in region_mapping.iter().enumerate() {
                            out[r] += row[v];
                        }
                        for (r, o) in out.iter_mut().enumerate() {
                            if counts[r] > 0 {
                                *o /= counts[r] as f64;
                            }
                        }
                        out
                    })
                    .collect();
                Ok(gain)
            }
        }
    }
}

/// sensor_data = region_gain · region_data, per sample.
pub fn eeg_project(ts: &TimeSeries, lf: &LeadField) -> Result<TimeSeries> {
    let n_regions = ts.n_channels();
    let gain = lf.region_gain(n_regions)?;
    let n_samples = ts.n_samples();
    let data: Vec<Vec<f64>> = gain
        .iter()
        .map(|row| {
            (0..n_samples)
                .map(|s| {
                    row.iter()
                        .zip(&ts.data)
                        .map(|(g, ch)| g * ch[s])
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(TimeSeries {
        t0: ts.t0,
        dt_out: ts.dt_out,
        name: "eeg".into(),
        labels: lf.sensor_labels.clone(),
        data,
    })
}

/// Loads a lead field; vertex-granularity files get their region mapping
/// from `region_mapping.txt` next to the lead-field file, or from an
/// explicit path.
pub fn load_lead_field(path: impl AsRef<Path>, mapping_path: Option<&Path>) -> Result<LeadField> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ObservableError::Io {
        path: display.clone(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let bad = |msg: String| ObservableError::BadFile {
        path: display.clone(),
        msg,
    };
    if !header.starts_with('#') {
        return Err(bad("missing `# sensors=.. sources=.. granularity=..` header".into()));
    }
    let mut sensors = None;
    let mut sources = None;
    let mut granularity = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        match tok.split_once('=') {
            Some(("sensors", v)) => sensors = v.parse::<usize>().ok(),
            Some(("sources", v)) => sources = v.parse::<usize>().ok(),
            Some(("granularity", v)) => granularity = Some(v.to_string()),
            _ => return Err(bad(format!("unexpected header token {tok:?}"))),
        }
    }
    let sensors = sensors.ok_or_else(|| bad("header is missing sensors=<count>".into()))?;
    let sources = sources.ok_or_else(|| bad("header is missing sources=<count>".into()))?;
    let granularity = granularity.ok_or_else(|| bad("header is missing granularity".into()))?;

    let mut gain = Vec::with_capacity(sensors);
    for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| bad(format!("row {}: malformed number {t:?}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if row.len() != sources {
            return Err(bad(format!(
                "row {}: {} values for {sources} sources",
                i + 2,
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(bad(format!("row {}: non-finite entry {v}", i + 2)));
        }
        gain.push(row);
    }
    if gain.len() != sensors {
        return Err(bad(format!("{} rows for {sensors} sensors", gain.len())));
    }

    let granularity = match granularity.as_str() {
        "region" => Granularity::Region,
        "vertex" => {
            let mpath = match mapping_path {
                Some(p) => p.to_path_buf(),
                None => path.with_file_name("region_mapping.txt"),
            };
            let mtext =
                std::fs::read_to_string(&mpath).map_err(|source| ObservableError::Io {
                    path: mpath.display().to_string(),
                    source,
                })?;
            let region_mapping = mtext
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| ObservableError::BadFile {
                        path: mpath.display().to_string(),
                        msg: format!("malformed region index {t:?}"),
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            Granularity::Vertex { region_mapping }
        }
        other => return Err(bad(format!("unknown granularity {other:?}"))),
    };

    Ok(LeadField {
        sensor_labels: (0..sensors).map(|i| format!("E{i:03}")).collect(),
        gain,
        granularity,
    })
}

//! Structural connectomes: load, validate, transform, sparsify.
//!
//! Weight orientation: `weights[i][j]` is the strength of the edge INTO
//! target `i` FROM source `j` (row = target, column = source). The engine
//! iterates per-target rows, so this is also the hot-path layout.

mod io;
mod sparse;

pub use io::{load_connectome, load_connectome_with_warnings, save_connectome};
pub use sparse::{build_sparse, SparseCoupling};

use crate::rng::{KeyedRng, Stream};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConnectomeError {
    #[error("{path}: archive is missing mandatory file {file}")]
    MissingFile { path: String, file: String },
    #[error("{file}:{line}: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}: expected {expected} rows, found {found}")]
    DimensionMismatch {
        file: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid connectome: {0}")]
    Invalid(String),
    #[error("region index {region} out of range (n_regions = {n})")]
    RegionOutOfRange { region: usize, n: usize },
    #[error("lesion fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("rewire factor must be positive, got {0}")]
    BadFactor(f64),
    #[error("conduction speed and dt must be positive (speed = {speed}, dt = {dt})")]
    BadSparseArgs { speed: f64, dt: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Zip {
        path: String,
        #[source]
        source: zip::result::ZipError,
    },
}

pub type Result<T> = std::result::Result<T, ConnectomeError>;

/// A region-level structural connectome: dense weights and tract lengths
/// plus optional per-region metadata. Immutable after construction; all
/// transforms return new values.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    pub n_regions: usize,
    pub labels: Vec<String>,
    /// `weights[i][j]`: coupling strength from source j into target i.
    pub weights: Vec<Vec<f64>>,
    /// Fiber tract lengths in mm, same orientation as `weights`.
    pub tract_lengths: Vec<Vec<f64>>,
    /// Region centre coordinates in mm.
    pub centres: Option<Vec<[f64; 3]>>,
    pub cortical: Option<Vec<bool>>,
    /// false = left hemisphere.
    pub hemisphere: Option<Vec<bool>>,
    /// Unit average orientation vectors.
    pub orientations: Option<Vec<[f64; 3]>>,
    /// Region surface areas in mm².
    pub areas: Option<Vec<f64>>,
}

impl Connectome {
    /// Builds a connectome with generated labels and no optional metadata,
    /// validating all invariants.
    pub fn new(weights: Vec<Vec<f64>>, tract_lengths: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        let c = Connectome {
            n_regions: n,
            labels: default_labels(n),
            weights,
            tract_lengths,
            centres: None,
            cortical: None,
            hemisphere: None,
            orientations: None,
            areas: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_regions;
        let check_matrix = |name: &str, m: &Vec<Vec<f64>>| -> Result<()> {
            if m.len() != n {
                return Err(ConnectomeError::Invalid(format!(
                    "{name} has {} rows, expected {n}",
                    m.len()
                )));
            }
            for (i, row) in m.iter().enumerate() {
                if row.len() != n {
                    return Err(ConnectomeError::Invalid(format!(
                        "{name} row {i} has {} entries, expected {n}",
                        row.len()
                    )));
                }
                for (j, &v) in row.iter().enumerate() {
                    if !v.is_finite() || v < 0.0 {
                        return Err(ConnectomeError::Invalid(format!(
                            "{name}[{i}][{j}] = {v} is not a finite non-negative value"
                        )));
                    }
                }
            }
            Ok(())
        };
        check_matrix("weights", &self.weights)?;
        check_matrix("tract_lengths", &self.tract_lengths)?;

        if self.labels.len() != n {
            return Err(ConnectomeError::Invalid(format!(
                "{} labels for {n} regions",
                self.labels.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.labels {
            if l.is_empty() {
                return Err(ConnectomeError::Invalid("empty region label".into()));
            }
            if !seen.insert(l) {
                return Err(ConnectomeError::Invalid(format!("duplicate label {l:?}")));
            }
        }

        let check_len = |name: &str, len: usize| -> Result<()> {
            if len != n {
                Err(ConnectomeError::Invalid(format!(
                    "{name} has {len} entries for {n} regions"
                )))
            } else {
                Ok(())
            }
        };
        if let Some(c) = &self.centres {
            check_len("centres", c.len())?;
        }
        if let Some(c) = &self.cortical {
            check_len("cortical", c.len())?;
        }
        if let Some(h) = &self.hemisphere {
            check_len("hemisphere", h.len())?;
        }
        if let Some(a) = &self.areas {
            check_len("areas", a.len())?;
            if let Some(v) = a.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(ConnectomeError::Invalid(format!("negative area {v}")));
            }
        }
        if let Some(o) = &self.orientations {
            check_len("average_orientations", o.len())?;
            for (i, v) in o.iter().enumerate() {
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(ConnectomeError::Invalid(format!(
                        "orientation {i} has norm {norm}, expected unit within 1e-6"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of nonzero-weight edges.
    pub fn edge_count(&self) -> usize {
        self.weights
            .iter()
            .map(|row| row.iter().filter(|&&w| w > 0.0).count())
            .sum()
    }

    /// Sum of nonzero incoming weights of a region (its in-strength).
    pub fn in_strength(&self, region: usize) -> f64 {
        self.weights[region].iter().sum()
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("R{i:03}")).collect()
}

/// How surviving incoming weights are rescaled after a lesion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewireMode {
    /// Multiply all surviving incoming weights by this factor.
    Factor(f64),
    /// Scale surviving incoming weights uniformly so their sum equals the
    /// recorded pre-lesion in-strength. No-op if no edges survive.
    RestoreStrength { pre_lesion_in_strength: f64 },
}

/// Removes round(fraction · m) of the m nonzero incoming edges of `region`,
/// chosen uniformly at random from the seeded generator. Returns a new
/// connectome; fraction 0 is an identical copy, fraction 1 zeroes the row.
pub fn lesion_incoming(
    c: &Connectome,
    region: usize,
    fraction: f64,
    seed: u64,
) -> Result<Connectome> {
    if region >= c.n_regions {
        return Err(ConnectomeError::RegionOutOfRange {
            region,
            n: c.n_regions,
        });
    }
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(ConnectomeError::BadFraction(fraction));
    }
    let incoming: Vec<usize> = (0..c.n_regions)
        .filter(|&j| c.weights[region][j] > 0.0)
        .collect();
    let m = incoming.len();
    let k = (fraction * m as f64).round() as usize;

    let mut rng = KeyedRng::new(Stream::Lesion, &[seed, region as u64]);
    let removed = rng.choose_k(m, k);

    let mut out = c.clone();
    for idx in removed {
        out.weights[region][incoming[idx]] = 0.0;
    }
    Ok(out)
}

/// Rescales surviving incoming weights of `region` per the chosen mode.
pub fn rewire_scale(c: &Connectome, region: usize, mode: RewireMode) -> Result<Connectome> {
    if region >= c.n_regions {
        return Err(ConnectomeError::RegionOutOfRange {
            region,
            n: c.n_regions,
        });
    }
    let scale = match mode {
        RewireMode::Factor(f) => {
            if !(f > 0.0) {
                return Err(ConnectomeError::BadFactor(f));
            }
            f
        }
        RewireMode::RestoreStrength {
            pre_lesion_in_strength,
        } => {
            let surviving: f64 = c.weights[region].iter().sum();
            if surviving == 0.0 {
                return Ok(c.clone());
            }
            pre_lesion_in_strength / surviving
        }
    };
    let mut out = c.clone();
    for w in &mut out.weights[region] {
        *w *= scale;
    }
    Ok(out)
}

/// Summary statistics of a connectome.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectomeStats {
    pub n_regions: usize,
    pub edge_count: usize,
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
    pub in_strength: Vec<f64>,
    pub out_strength: Vec<f64>,
    /// min/mean/max over nonzero-weight edges.
    pub weight_min: f64,
    pub weight_mean: f64,
    pub weight_max: f64,
    /// Tract-length min/mean/max over the same nonzero-weight edge set.
    pub length_min: f64,
    pub length_mean: f64,
    pub length_max: f64,
}

pub fn connectome_stats(c: &Connectome) -> ConnectomeStats {
    let n = c.n_regions;
    let mut in_degree = vec![0usize; n];
    let mut out_degree = vec![0usize; n];
    let mut in_strength = vec![0.0; n];
    let mut out_strength = vec![0.0; n];
    let mut edge_count = 0usize;
    let (mut wmin, mut wmax, mut wsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let (mut lmin, mut lmax, mut lsum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = c.weights[i][j];
            if w > 0.0 {
                edge_count += 1;
                in_degree[i] += 1;
                out_degree[j] += 1;
                in_strength[i] += w;
                out_strength[j] += w;
                wmin = wmin.min(w);
                wmax = wmax.max(w);
                wsum += w;
                let l = c.tract_lengths[i][j];
                lmin = lmin.min(l);
                lmax = lmax.max(l);
                lsum += l;
            }
        }
    }
    let (weight_min, weight_mean, weight_max, length_min, length_mean, length_max) =
        if edge_count == 0 {
            (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        } else {
            let e = edge_count as f64;
            (wmin, wsum / e, wmax, lmin, lsum / e, lmax)
        };
    ConnectomeStats {
        n_regions: n,
        edge_count,
        in_degree,
        out_degree,
        in_strength,
        out_strength,
        weight_min,
        weight_mean,
        weight_max,
        length_min,
        length_mean,
        length_max,
    }
}

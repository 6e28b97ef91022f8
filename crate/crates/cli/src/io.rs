//! Deterministic file writers and readers: time-series CSV and f64bin,
//! FC matrices, run summaries.

use crate::config::OutputFormat;
use crate::CliError;
use neuroloom_core::observables::TimeSeries;
use std::io::{Read, Write};
use std::path::Path;

pub const F64BIN_MAGIC: &[u8; 4] = b"NLTS";

/// Writes a time series; CSV gets a `t,<label...>` header line, f64bin the
/// binary layout documented in docs/formats.md.
pub fn write_timeseries(ts: &TimeSeries, path: &Path, format: OutputFormat) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    match format {
        OutputFormat::Csv => {
            write!(f, "t").map_err(io_err)?;
            for l in &ts.labels {
                write!(f, ",{l}").map_err(io_err)?;
            }
            writeln!(f).map_err(io_err)?;
            for s in 0..ts.n_samples() {
                let t = ts.t0 + s as f64 * ts.dt_out;
                write!(f, "{t}").map_err(io_err)?;
                for ch in &ts.data {
                    write!(f, ",{}", ch[s]).map_err(io_err)?;
                }
                writeln!(f).map_err(io_err)?;
            }
        }
        OutputFormat::F64Bin => {
            f.write_all(F64BIN_MAGIC).map_err(io_err)?;
            f.write_all(&1u32.to_le_bytes()).map_err(io_err)?;
            f.write_all(&(ts.n_channels() as u32).to_le_bytes())
                .map_err(io_err)?;
            f.write_all(&(ts.n_samples() as u64).to_le_bytes())
                .map_err(io_err)?;
            f.write_all(&ts.t0.to_le_bytes()).map_err(io_err)?;
            f.write_all(&ts.dt_out.to_le_bytes()).map_err(io_err)?;
            for ch in &ts.data {
                for v in ch {
                    f.write_all(&v.to_le_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    f.flush().map_err(io_err)
}

/// Reads a time series file, sniffing f64bin by magic, CSV otherwise.
pub fn read_timeseries(path: &Path) -> Result<TimeSeries, CliError> {
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = std::fs::File::open(path).map_err(|e| crate::read_file_err(path, e))?;
    let mut magic = [0u8; 4];
    let got = f.read(&mut magic).map_err(io_err)?;
    if got == 4 && &magic == F64BIN_MAGIC {
        read_f64bin(path, f)
    } else {
        drop(f);
        read_csv(path)
    }
}

fn read_f64bin(path: &Path, mut f: std::fs::File) -> Result<TimeSeries, CliError> {
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let bad = |msg: &str| CliError::Config(format!("{}: {msg}", path.display()));
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(io_err)?;
    if buf.len() < 4 + 4 + 8 + 8 + 8 {
        return Err(bad("truncated f64bin header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(buf[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().unwrap());
    let version = u32_at(0);
    if version != 1 {
        return Err(bad(&format!("unsupported f64bin version {version}")));
    }
    let n_channels = u32_at(4) as usize;
    let n_samples = u64_at(8) as usize;
    let t0 = f64_at(16);
    let dt_out = f64_at(24);
    let need = 32 + n_channels * n_samples * 8;
    if buf.len() != need {
        return Err(bad(&format!(
            "expected {need} data bytes, found {}",
            buf.len()
        )));
    }
    let mut data = Vec::with_capacity(n_channels);
    let mut off = 32;
    for _ in 0..n_channels {
        let mut ch = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            ch.push(f64_at(off));
            off += 8;
        }
        data.push(ch);
    }
    Ok(TimeSeries {
        t0,
        dt_out,
        name: "file".into(),
        labels: (0..n_channels).map(|i| format!("C{i:03}")).collect(),
        data,
    })
}

fn read_csv(path: &Path) -> Result<TimeSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::read_file_err(path, e))?;
    let bad = |line: usize, msg: String| {
        CliError::Config(format!("{}:{line}: {msg}", path.display()))
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty time-series file".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") {
        return Err(bad(1, "expected a `t,<label...>` header".into()));
    }
    let labels: Vec<String> = columns[1..].iter().map(|s| s.to_string()).collect();
    let n_channels = labels.len();
    let mut times = Vec::new();
    let mut data: Vec<Vec<f64>> = vec![Vec::new(); n_channels];
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_channels + 1 {
            return Err(bad(
                i + 1,
                format!("{} columns, expected {}", cells.len(), n_channels + 1),
            ));
        }
        let parse = |t: &str| -> Result<f64, CliError> {
            t.parse()
                .map_err(|_| bad(i + 1, format!("malformed number {t:?}")))
        };
        times.push(parse(cells[0])?);
        for (ch, cell) in cells[1..].iter().enumerate() {
            data[ch].push(parse(cell)?);
        }
    }
    let t0 = times.first().copied().unwrap_or(0.0);
    let dt_out = if times.len() > 1 {
        times[1] - times[0]
    } else {
        1.0
    };
    Ok(TimeSeries {
        t0,
        dt_out,
        name: "file".into(),
        labels,
        data,
    })
}

/// Plaintext matrix, space separated, shortest-round-trip numbers.
pub fn write_matrix(m: &[Vec<f64>], path: &Path) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for row in m {
        let mut first = true;
        for v in row {
            if !first {
                write!(f, " ").map_err(io_err)?;
            }
            write!(f, "{v}").map_err(io_err)?;
            first = false;
        }
        writeln!(f).map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

pub fn read_square_matrix(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    let rows = crate::config::read_matrix(path)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!(
            "{}: matrix is not square",
            path.display()
        )));
    }
    Ok(rows)
}

/// JSON-like plaintext run summary.
pub struct RunSummary<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub n_regions: usize,
    pub n_steps: u64,
    pub workers: usize,
    pub wall_seconds: f64,
    pub node_steps_per_second: f64,
    pub checksum: u64,
}

pub fn write_summary(s: &RunSummary<'_>, path: &Path) -> Result<(), CliError> {
    let body = format!(
        "{{\n  \"command\": \"{}\",\n  \"seed\": {},\n  \"n_regions\": {},\n  \"n_steps\": {},\n  \"workers\": {},\n  \"wall_seconds\": {},\n  \"node_steps_per_second\": {},\n  \"final_state_checksum\": \"{:016x}\"\n}}\n",
        s.command,
        s.seed,
        s.n_regions,
        s.n_steps,
        s.workers,
        s.wall_seconds,
        s.node_steps_per_second,
        s.checksum
    );
    std::fs::write(path, body).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

//! The connectome zip exchange format: plaintext ASCII files, whitespace
//! separated, LF newlines, zipped.
//!
//! Layout (row = target, column = source; see module docs):
//!   weights.txt               n x n reals            mandatory
//!   tract_lengths.txt         n x n reals, mm        mandatory
//!   centres.txt               n rows `label x y z`   optional
//!   cortical.txt              n rows of 0/1          optional
//!   hemisphere.txt            n rows of 0/1 (0=left) optional
//!   average_orientations.txt  n rows of 3 reals      optional
//!   areas.txt                 n reals                optional
//!
//! Unknown archive members are ignored with a warning. Numbers are written
//! with 17 significant digits so save/load round-trips are lossless.

use super::{Connectome, ConnectomeError, Result};
use std::io::{Read, Write};
use std::path::Path;

const KNOWN_FILES: &[&str] = &[
    "weights.txt",
    "tract_lengths.txt",
    "centres.txt",
    "cortical.txt",
    "hemisphere.txt",
    "average_orientations.txt",
    "areas.txt",
];

pub fn load_connectome(zip_path: impl AsRef<Path>) -> Result<Connectome> {
    load_connectome_with_warnings(zip_path).map(|(c, _)| c)
}

/// Loads a connectome, also returning warnings for ignored archive members.
pub fn load_connectome_with_warnings(
    zip_path: impl AsRef<Path>,
) -> Result<(Connectome, Vec<String>)> {
    let path = zip_path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| ConnectomeError::Io {
        path: display.clone(),
        source,
    })?;
    let mut archive =
        zip::ZipArchive::new(file).map_err(|source| ConnectomeError::Zip {
            path: display.clone(),
            source,
        })?;

    let mut warnings = Vec::new();
    let names: Vec<String> = archive.file_names().map(str::to_string).collect();
    for name in &names {
        // Some producers nest the files in a directory; match on basename.
        let base = name.rsplit('/').next().unwrap_or(name);
        if !name.ends_with('/') && !KNOWN_FILES.contains(&base) {
            warnings.push(format!("ignoring unknown archive member {name:?}"));
        }
    }

    let mut read_member = |base: &str| -> Result<Option<String>> {
        let found = names
            .iter()
            .find(|n| n.rsplit('/').next() == Some(base) && !n.ends_with('/'))
            .cloned();
        match found {
            None => Ok(None),
            Some(name) => {
                let mut f = archive
                    .by_name(&name)
                    .map_err(|source| ConnectomeError::Zip {
                        path: display.clone(),
                        source,
                    })?;
                let mut s = String::new();
                f.read_to_string(&mut s)
                    .map_err(|source| ConnectomeError::Io {
                        path: format!("{display}!{name}"),
                        source,
                    })?;
                Ok(Some(s))
            }
        }
    };

    let weights_text = read_member("weights.txt")?.ok_or_else(|| ConnectomeError::MissingFile {
        path: display.clone(),
        file: "weights.txt".into(),
    })?;
    let lengths_text =
        read_member("tract_lengths.txt")?.ok_or_else(|| ConnectomeError::MissingFile {
            path: display.clone(),
            file: "tract_lengths.txt".into(),
        })?;

    let weights = parse_square_matrix("weights.txt", &weights_text)?;
    let n = weights.len();
    let tract_lengths = parse_square_matrix("tract_lengths.txt", &lengths_text)?;
    if tract_lengths.len() != n {
        return Err(ConnectomeError::DimensionMismatch {
            file: "tract_lengths.txt".into(),
            expected: n,
            found: tract_lengths.len(),
        });
    }

    let mut labels = None;
    let mut centres = None;
    if let Some(text) = read_member("centres.txt")? {
        let (l, c) = parse_centres(&text, n)?;
        labels = Some(l);
        centres = Some(c);
    }
    let cortical = read_member("cortical.txt")?
        .map(|t| parse_bools("cortical.txt", &t, n))
        .transpose()?;
    let hemisphere = read_member("hemisphere.txt")?
        .map(|t| parse_bools("hemisphere.txt", &t, n))
        .transpose()?;
    let orientations = read_member("average_orientations.txt")?
        .map(|t| parse_triples("average_orientations.txt", &t, n))
        .transpose()?;
    let areas = read_member("areas.txt")?
        .map(|t| parse_reals("areas.txt", &t, n))
        .transpose()?;

    let c = Connectome {
        n_regions: n,
        labels: labels.unwrap_or_else(|| super::default_labels(n)),
        weights,
        tract_lengths,
        centres,
        cortical,
        hemisphere,
        orientations,
        areas,
    };
    c.validate()?;
    Ok((c, warnings))
}

/// Writes the zip layout described in the module docs. Deterministic: fixed
/// timestamps and member order, 17-significant-digit numbers.
pub fn save_connectome(c: &Connectome, zip_path: impl AsRef<Path>) -> Result<()> {
    c.validate()?;
    let path = zip_path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|source| ConnectomeError::Io {
        path: display.clone(),
        source,
    })?;
    let mut w = zip::ZipWriter::new(file);
    let opts = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());

    let mut put = |name: &str, body: String| -> Result<()> {
        w.start_file(name, opts)
            .and_then(|_| w.write_all(body.as_bytes()).map_err(zip::result::ZipError::Io))
            .map_err(|source| ConnectomeError::Zip {
                path: display.clone(),
                source,
            })
    };

    put("weights.txt", format_matrix(&c.weights))?;
    put("tract_lengths.txt", format_matrix(&c.tract_lengths))?;
    if let Some(centres) = &c.centres {
        let mut s = String::new();
        for (label, p) in c.labels.iter().zip(centres) {
            s.push_str(&format!(
                "{label} {} {} {}\n",
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2])
            ));
        }
        put("centres.txt", s)?;
    }
    if let Some(v) = &c.cortical {
        put("cortical.txt", format_bools(v))?;
    }
    if let Some(v) = &c.hemisphere {
        put("hemisphere.txt", format_bools(v))?;
    }
    if let Some(v) = &c.orientations {
        let mut s = String::new();
        for p in v {
            s.push_str(&format!("{} {} {}\n", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])));
        }
        put("average_orientations.txt", s)?;
    }
    if let Some(v) = &c.areas {
        let mut s = String::new();
        for a in v {
            s.push_str(&fmt_f64(*a));
            s.push('\n');
        }
        put("areas.txt", s)?;
    }
    w.finish().map_err(|source| ConnectomeError::Zip {
        path: display,
        source,
    })?;
    Ok(())
}

/// 17 significant digits: lossless f64 text round-trip.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_matrix(m: &[Vec<f64>]) -> String {
    let mut s = String::new();
    for row in m {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            s.push_str(&fmt_f64(*v));
        }
        s.push('\n');
    }
    s
}

fn format_bools(v: &[bool]) -> String {
    v.iter()
        .map(|b| if *b { "1\n" } else { "0\n" })
        .collect()
}

fn parse_token(file: &str, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| ConnectomeError::Malformed {
        file: file.into(),
        line,
        msg: format!("malformed numeric token {tok:?}"),
    })
}

fn nonblank_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_square_matrix(file: &str, text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in nonblank_lines(text) {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_token(file, lineno, t))
            .collect::<Result<_>>()?;
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(ConnectomeError::Malformed {
                    file: file.into(),
                    line: lineno,
                    msg: format!("entry {} is {v}, expected finite and >= 0", j + 1),
                });
            }
        }
        rows.push((lineno, row));
    }
    let n = rows.len();
    for (lineno, row) in &rows {
        if row.len() != n {
            return Err(ConnectomeError::Malformed {
                file: file.into(),
                line: *lineno,
                msg: format!("non-square matrix: row has {} columns for {n} rows", row.len()),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn parse_centres(text: &str, n: usize) -> Result<(Vec<String>, Vec<[f64; 3]>)> {
    let file = "centres.txt";
    let mut labels = Vec::new();
    let mut centres = Vec::new();
    for (lineno, line) in nonblank_lines(text) {
        let mut parts = line.split_whitespace();
        let label = parts.next().unwrap().to_string();
        let coords: Vec<f64> = parts
            .map(|t| parse_token(file, lineno, t))
            .collect::<Result<_>>()?;
        if coords.len() != 3 {
            return Err(ConnectomeError::Malformed {
                file: file.into(),
                line: lineno,
                msg: format!("expected `label x y z`, found {} coordinates", coords.len()),
            });
        }
        labels.push(label);
        centres.push([coords[0], coords[1], coords[2]]);
    }
    if labels.len() != n {
        return Err(ConnectomeError::DimensionMismatch {
            file: file.into(),
            expected: n,
            found: labels.len(),
        });
    }
    Ok((labels, centres))
}

fn parse_bools(file: &str, text: &str, n: usize) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (lineno, line) in nonblank_lines(text) {
        match line {
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(ConnectomeError::Malformed {
                    file: file.into(),
                    line: lineno,
                    msg: format!("expected 0 or 1, found {other:?}"),
                })
            }
        }
    }
    if out.len() != n {
        return Err(ConnectomeError::DimensionMismatch {
            file: file.into(),
            expected: n,
            found: out.len(),
        });
    }
    Ok(out)
}

fn parse_triples(file: &str, text: &str, n: usize) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::new();
    for (lineno, line) in nonblank_lines(text) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| parse_token(file, lineno, t))
            .collect::<Result<_>>()?;
        if vals.len() != 3 {
            return Err(ConnectomeError::Malformed {
                file: file.into(),
                line: lineno,
                msg: format!("expected 3 values, found {}", vals.len()),
            });
        }
        out.push([vals[0], vals[1], vals[2]]);
    }
    if out.len() != n {
        return Err(ConnectomeError::DimensionMismatch {
            file: file.into(),
            expected: n,
            found: out.len(),
        });
    }
    Ok(out)
}

fn parse_reals(file: &str, text: &str, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (lineno, line) in nonblank_lines(text) {
        for tok in line.split_whitespace() {
            out.push(parse_token(file, lineno, tok)?);
        }
    }
    if out.len() != n {
        return Err(ConnectomeError::DimensionMismatch {
            file: file.into(),
            expected: n,
            found: out.len(),
        });
    }
    Ok(out)
}

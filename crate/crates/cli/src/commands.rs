//! Command implementations.

use crate::config::{load_setup, OutputFormat};
use crate::io::{
    read_square_matrix, read_timeseries, write_matrix, write_summary, write_timeseries, RunSummary,
};
use crate::CliError;
use neuroloom_core::connectome::{
    connectome_stats, lesion_incoming, load_connectome_with_warnings, rewire_scale, save_connectome,
    RewireMode,
};
use neuroloom_core::cosim::{run_cosim, TransportKind};
use neuroloom_core::dsl::{compile, parse_model};
use neuroloom_core::engine::{run, sweep, SweepSpec, SweepSummary};
use neuroloom_core::observables::{fc, fc_fit};
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn effective_workers(cli: Option<usize>, cfg: usize) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var("NEUROLOOM_WORKERS") {
        return v
            .parse()
            .map_err(|_| CliError::Config(format!("NEUROLOOM_WORKERS={v:?} is not a count")));
    }
    Ok(cli.unwrap_or(cfg))
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn monitor_file(dir: &Path, index: usize, name: &str, format: OutputFormat) -> PathBuf {
    let ext = match format {
        OutputFormat::Csv => "csv",
        OutputFormat::F64Bin => "f64bin",
    };
    dir.join(format!("monitor_{index:02}_{name}.{ext}"))
}

pub fn cmd_model_validate(path: &Path, dump_bytecode: bool) -> Result<(), CliError> {
    let xml = std::fs::read_to_string(path).map_err(|e| crate::read_file_err(path, e))?;
    let spec = parse_model(&xml).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let compiled = compile(&spec).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;

    println!("model: {}", spec.name);
    println!("state variables: {}", spec.n_state());
    for sv in &spec.state_vars {
        let clamp = match sv.clamp {
            Some((lo, hi)) => format!("  clamp [{lo}, {hi}]"),
            None => String::new(),
        };
        println!("  {}  init [{}, {}]{clamp}", sv.name, sv.init_lo, sv.init_hi);
    }
    println!("parameters: {}", spec.parameters.len());
    for p in &spec.parameters {
        println!("  {} = {}", p.name, p.default);
    }
    println!("derived variables: {}", spec.derived_vars.len());
    for d in &spec.derived_vars {
        println!("  {} = {}", d.name, d.expr);
    }
    println!("coupling terms: {}", spec.n_coupling());
    for c in &spec.coupling_terms {
        println!("  {}  pre = {}  difference = {}", c.name, c.pre, c.difference);
    }
    let expo: Vec<String> = spec
        .exposures
        .iter()
        .map(|e| {
            if e.rate {
                format!("{} (rate)", e.of)
            } else {
                e.of.clone()
            }
        })
        .collect();
    println!("exposures: {}", expo.join(", "));
    println!(
        "bytecode: {} ops, {} consts, max stack {}",
        compiled.program.ops.len(),
        compiled.program.consts.len(),
        compiled.program.max_stack
    );
    if dump_bytecode {
        println!("-- derivatives program --");
        print!("{}", compiled.program.disassemble());
        for (k, p) in compiled.pre_programs.iter().enumerate() {
            println!("-- pre program {k} ({}) --", spec.coupling_terms[k].name);
            print!("{}", p.disassemble());
        }
    }
    Ok(())
}

pub fn cmd_run(
    config: &Path,
    out: Option<&Path>,
    workers: Option<usize>,
) -> Result<(), CliError> {
    let mut setup = load_setup(config)?;
    print_warnings(&setup.warnings);
    setup.sim.n_workers = effective_workers(workers, setup.sim.n_workers)?;
    let out_dir = out.map(Path::to_path_buf).unwrap_or(setup.out_dir.clone());
    ensure_dir(&out_dir)?;

    let output = run(
        &setup.kernel,
        &setup.sparse,
        setup.sim.clone(),
        &setup.bindings,
        &setup.monitors,
        Some(&setup.labels),
    )
    .map_err(crate::map_engine_err)?;

    for (i, ts) in output.monitors.iter().enumerate() {
        write_timeseries(ts, &monitor_file(&out_dir, i, &ts.name, setup.format), setup.format)?;
    }
    let checksum = output.final_state_checksum();
    write_summary(
        &RunSummary {
            command: "run",
            seed: setup.sim.seed,
            n_regions: setup.sparse.n_regions,
            n_steps: setup.sim.n_steps,
            workers: setup.sim.n_workers,
            wall_seconds: output.wall_seconds,
            node_steps_per_second: output.node_steps_per_second,
            checksum,
        },
        &out_dir.join("run_summary.txt"),
    )?;
    println!(
        "run: {} regions, {} steps, seed {}, workers {}",
        setup.sparse.n_regions, setup.sim.n_steps, setup.sim.seed, setup.sim.n_workers
    );
    println!("final_state_checksum: {checksum:016x}");
    println!(
        "throughput: {:.3e} node-steps/s",
        output.node_steps_per_second
    );
    println!("outputs: {}", out_dir.display());
    Ok(())
}

pub struct SweepArgs<'a> {
    pub config: &'a Path,
    pub grid: &'a [String],
    pub parallel: usize,
    pub summary: &'a str,
    pub empirical: Option<&'a Path>,
    pub discard: usize,
    pub stride: usize,
    pub out: Option<&'a Path>,
}

pub fn cmd_sweep(args: &SweepArgs<'_>) -> Result<(), CliError> {
    let setup = load_setup(args.config)?;
    print_warnings(&setup.warnings);
    if args.grid.is_empty() {
        return Err(CliError::Config(
            "no grid axes; pass --grid name=v1,v2,... at least once".into(),
        ));
    }
    let mut axes = Vec::new();
    for spec in args.grid {
        let (name, values) = spec.split_once('=').ok_or_else(|| {
            CliError::Config(format!("bad --grid {spec:?}; expected name=v1,v2,..."))
        })?;
        let values: Vec<f64> = values
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| CliError::Config(format!("bad grid value {v:?} in {spec:?}")))
            })
            .collect::<Result<_, _>>()?;
        axes.push((name.trim().to_string(), values));
    }

    let summary = match args.summary {
        "checksum" => SweepSummary::FinalChecksum,
        "mean" => SweepSummary::MeanExposure,
        "fc-fit" => {
            let emp_path = args.empirical.ok_or_else(|| {
                CliError::Config("--summary fc-fit needs --empirical <fc file>".into())
            })?;
            SweepSummary::FcFit {
                empirical: read_square_matrix(emp_path)?,
                monitor_stride: args.stride,
                discard: args.discard,
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown summary {other:?} (expected checksum|mean|fc-fit)"
            )))
        }
    };

    let started = std::time::Instant::now();
    let rows = sweep(
        &setup.kernel,
        &setup.connectome,
        setup.weight_threshold,
        &setup.sim,
        &setup.bindings,
        &SweepSpec {
            axes: axes.clone(),
            summary,
            parallel: args.parallel,
        },
    )
    .map_err(crate::map_engine_err)?;
    let elapsed = started.elapsed().as_secs_f64();

    let out_dir = args
        .out
        .map(Path::to_path_buf)
        .unwrap_or(setup.out_dir.clone());
    ensure_dir(&out_dir)?;
    let csv_path = out_dir.join("sweep.csv");
    let mut csv = String::new();
    for (name, _) in &axes {
        csv.push_str(name);
        csv.push(',');
    }
    csv.push_str("seed,summary\n");
    for row in &rows {
        for (_, v) in &row.coords {
            csv.push_str(&format!("{v},"));
        }
        csv.push_str(&format!("{},{}\n", row.seed, row.summary));
    }
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    // Wall time lives in a sidecar so sweep.csv stays byte-reproducible.
    let timing = out_dir.join("sweep_timing.txt");
    std::fs::write(
        &timing,
        format!("rows: {}\nwall_seconds: {elapsed}\n", rows.len()),
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", timing.display())))?;
    println!("sweep: {} rows -> {}", rows.len(), csv_path.display());
    Ok(())
}

pub fn cmd_lesion(
    connectome: &Path,
    region: usize,
    fraction: f64,
    seed: u64,
    rewire: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let (c, warnings) = load_connectome_with_warnings(connectome).map_err(crate::map_connectome_err)?;
    print_warnings(&warnings);
    let pre_strength = c.in_strength(region.min(c.n_regions.saturating_sub(1)));
    let lesioned = lesion_incoming(&c, region, fraction, seed).map_err(crate::map_connectome_err)?;
    let removed = c.weights[region]
        .iter()
        .zip(&lesioned.weights[region])
        .filter(|(a, b)| a != b)
        .count();

    let result = match rewire {
        None => lesioned,
        Some("restore") => rewire_scale(
            &lesioned,
            region,
            RewireMode::RestoreStrength {
                pre_lesion_in_strength: pre_strength,
            },
        )
        .map_err(crate::map_connectome_err)?,
        Some(spec) => match spec.strip_prefix("factor:") {
            Some(v) => {
                let factor: f64 = v.parse().map_err(|_| {
                    CliError::Config(format!("bad --rewire factor value {v:?}"))
                })?;
                rewire_scale(&lesioned, region, RewireMode::Factor(factor))
                    .map_err(crate::map_connectome_err)?
            }
            None => {
                return Err(CliError::Config(format!(
                    "unknown --rewire mode {spec:?} (expected restore or factor:<x>)"
                )))
            }
        },
    };
    save_connectome(&result, out).map_err(crate::map_connectome_err)?;
    println!(
        "lesion: region {region}, removed {removed} of its incoming edges; in-strength {} -> {}",
        pre_strength,
        result.in_strength(region)
    );
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_fc(
    timeseries: &Path,
    discard: usize,
    fit: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let ts = read_timeseries(timeseries)?;
    let result = fc(&ts, discard).map_err(crate::map_observable_err)?;
    for (i, flagged) in result.degenerate.iter().enumerate() {
        if *flagged {
            eprintln!(
                "warning: channel {} ({}) has zero variance; its row is zeroed",
                i, ts.labels[i]
            );
        }
    }
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| timeseries.with_extension("fc.txt"));
    write_matrix(&result.matrix, &out_path)?;
    println!("fc: {} channels -> {}", ts.n_channels(), out_path.display());
    if let Some(emp_path) = fit {
        let emp = read_square_matrix(emp_path)?;
        let value = fc_fit(&result.matrix, &emp).map_err(crate::map_observable_err)?;
        println!("fit: {value}");
    }
    Ok(())
}

pub fn cmd_cosim(
    config: &Path,
    transport: Option<&str>,
    port: Option<u16>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let setup = load_setup(config)?;
    print_warnings(&setup.warnings);
    let Some(resolved) = &setup.cosim else {
        return Err(CliError::Config(format!(
            "{}: config has no [cosim] section",
            config.display()
        )));
    };
    let kind = match transport {
        None => resolved.transport,
        Some("inprocess") => TransportKind::InProcess,
        Some("socket") => TransportKind::Socket {
            port: port.unwrap_or(match resolved.transport {
                TransportKind::Socket { port } => port,
                _ => 47000,
            }),
        },
        Some(other) => {
            return Err(CliError::Config(format!(
                "unknown transport {other:?} (expected inprocess|socket)"
            )))
        }
    };

    let out_dir = out.map(Path::to_path_buf).unwrap_or(setup.out_dir.clone());
    ensure_dir(&out_dir)?;
    let result = run_cosim(
        &setup.kernel,
        &setup.sparse,
        &setup.sim,
        &setup.bindings,
        &setup.monitors,
        Some(&setup.labels),
        &resolved.lif,
        &resolved.cc,
        kind,
    )
    .map_err(crate::map_cosim_err)?;

    for (i, ts) in result.macro_out.monitors.iter().enumerate() {
        write_timeseries(ts, &monitor_file(&out_dir, i, &ts.name, setup.format), setup.format)?;
    }
    write_timeseries(
        &result.micro_rates,
        &monitor_file(&out_dir, result.macro_out.monitors.len(), "micro_rates", setup.format),
        setup.format,
    )?;
    let checksum = result.macro_out.final_state_checksum();
    write_summary(
        &RunSummary {
            command: "cosim",
            seed: setup.sim.seed,
            n_regions: setup.sparse.n_regions,
            n_steps: setup.sim.n_steps,
            workers: setup.sim.n_workers,
            wall_seconds: result.macro_out.wall_seconds,
            node_steps_per_second: result.macro_out.node_steps_per_second,
            checksum,
        },
        &out_dir.join("run_summary.txt"),
    )?;
    println!(
        "cosim: window {} steps, interface lag {} steps",
        result.window_steps, result.interface_lag
    );
    println!("final_state_checksum: {checksum:016x}");
    println!("outputs: {}", out_dir.display());
    Ok(())
}

pub fn cmd_info(connectome: &Path) -> Result<(), CliError> {
    let (c, warnings) = load_connectome_with_warnings(connectome).map_err(crate::map_connectome_err)?;
    print_warnings(&warnings);
    let s = connectome_stats(&c);
    println!("n_regions: {}", s.n_regions);
    println!("edges: {}", s.edge_count);
    println!(
        "weights: min {} mean {} max {}",
        s.weight_min, s.weight_mean, s.weight_max
    );
    println!(
        "tract lengths (mm): min {} mean {} max {}",
        s.length_min, s.length_mean, s.length_max
    );
    let agg = |v: &[usize]| {
        let min = v.iter().min().copied().unwrap_or(0);
        let max = v.iter().max().copied().unwrap_or(0);
        let mean = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<usize>() as f64 / v.len() as f64
        };
        (min, mean, max)
    };
    let (dmin, dmean, dmax) = agg(&s.in_degree);
    println!("in-degree: min {dmin} mean {dmean} max {dmax}");
    let (omin, omean, omax) = agg(&s.out_degree);
    println!("out-degree: min {omin} mean {omean} max {omax}");
    let strength = |v: &[f64]| {
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
        if v.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            (min, mean, max)
        }
    };
    let (smin, smean, smax) = strength(&s.in_strength);
    println!("in-strength: min {smin} mean {smean} max {smax}");
    let yes = |b: bool| if b { "yes" } else { "no" };
    println!(
        "optional fields: centres={} cortical={} hemisphere={} orientations={} areas={}",
        yes(c.centres.is_some()),
        yes(c.cortical.is_some()),
        yes(c.hemisphere.is_some()),
        yes(c.orientations.is_some()),
        yes(c.areas.is_some())
    );
    Ok(())
}

mod args;
mod inputs;
mod sweep;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use geofindr::audit::{AuditConfig, AuditReport, AuditStatus};
use geofindr::catalog::atlas::{base_url_from_env, AtlasClient};
use geofindr::positions::declared_positions;
use geofindr::probe::sim::WorldSpec;
use geofindr::{run_audit, BackendKind, GeoPoint};

use args::{AuditArgs, Backend, Cli, Command, CommonFlags, DeadzoneArgs, FetchArgs, SimulateArgs, SweepArgs};
use inputs::{parse_position, preset_world, read_catalog, read_mesh, sim_backend, Inputs, DEFAULT_SEED};

/// Exit status for bad flags or config, after sysexits' EX_USAGE.
const EXIT_USAGE: u8 = 64;
/// Exit status for I/O and other fatal errors, shared with failed audits.
const EXIT_FATAL: u8 = 4;

/// A problem with what the user asked for, as opposed to what happened.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Sweep(a) => cmd_sweep(a).map(|()| 0),
        Command::SimulateWorld(a) => cmd_simulate(a).map(|()| 0),
        Command::MakeDeadzone(a) => cmd_deadzone(a).map(|()| 0),
        Command::FetchAtlas(a) => cmd_fetch(a).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n\nFor usage, run with --help.");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FATAL)
        }
    }
}

fn base_config(declared: GeoPoint, flags: &CommonFlags) -> Result<AuditConfig, UsageError> {
    let backend: BackendKind = flags.backend.unwrap_or(Backend::Sim).into();
    let mut cfg = AuditConfig::new(declared, backend);
    cfg.tolerance_km = flags.tolerance.unwrap_or(cfg.tolerance_km);
    cfg.zone_size_km = flags.zone_size.unwrap_or(cfg.zone_size_km);
    cfg.nb_lm = flags.nb_lm.unwrap_or(cfg.nb_lm);
    cfg.interval_percent = flags.interval_percent.unwrap_or(cfg.interval_percent);
    cfg.max_iterations = flags.max_iterations.unwrap_or(cfg.max_iterations);
    cfg.proxy_address = flags.proxy;
    cfg.validate().map_err(UsageError)?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_audit(args: AuditArgs) -> Result<u8> {
    let (flags, file) = args.common.resolve()?;
    let declared = args
        .declared
        .or_else(|| file.declared.and_then(|d| d.into_vec().into_iter().next()))
        .ok_or_else(|| UsageError("a declared position is required (--declared lat,lon or a city name)".into()))?;
    let cfg = base_config(parse_position(&declared)?, &flags)?;
    let inputs = Inputs::load(&flags)?;
    let mut report = match (&inputs.world, &inputs.backend) {
        (Some(world), _) => run_audit(&cfg, &inputs.catalog, &inputs.mesh, &sim_backend(world)),
        (None, Some(backend)) => run_audit(&cfg, &inputs.catalog, &inputs.mesh, backend.as_ref()),
        (None, None) => unreachable!("inputs always carry a world or a backend"),
    };
    if let Some(truth) = inputs.truth {
        report.attach_truth(truth);
    }
    let mut out = output(flags.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    print_summary(&report);
    Ok(u8::try_from(report.exit_code()).unwrap_or(EXIT_FATAL))
}

fn print_summary(r: &AuditReport) {
    let status = match r.status {
        AuditStatus::Converged => format!("converged after {} iterations", r.nb_iterations),
        AuditStatus::NotConverged => format!("not converged after {} iterations", r.nb_iterations),
        AuditStatus::Failed => match &r.failure {
            Some(f) => format!("failed: {f:?}"),
            None => "failed".into(),
        },
    };
    eprintln!("status:    {status}");
    eprintln!("declared:  {}", r.config.declared_position);
    eprintln!(
        "estimated: {} ({:.1} km from declared)",
        r.estimated_position, r.distance_estimated_declared_km
    );
    if let Some(d) = r.distance_real_estimated_km {
        eprintln!("accuracy:  {d:.1} km from the true position");
    }
    let verdict = if r.lie_detected {
        "declared position is NOT consistent with the measurements"
    } else {
        "no lie detected"
    };
    eprintln!("verdict:   {verdict}");
    eprintln!(
        "cost:      {} measurements, {:.1} s of probing, {:.2} s wall clock",
        r.measurements,
        r.probe_time_ms / 1000.0,
        r.audit_time_s
    );
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let (flags, file) = args.common.resolve()?;
    let parameter = args
        .parameter
        .or(file.parameter)
        .ok_or_else(|| UsageError("--parameter is required".into()))?;
    let values = args
        .values
        .or(file.values)
        .ok_or_else(|| UsageError("--values is required".into()))?;
    let values = sweep::parse_values(&values)?;
    let repetitions = args.repetitions.or(file.repetitions).unwrap_or(1);
    if repetitions == 0 {
        return Err(UsageError("--repetitions must be at least 1".into()).into());
    }
    let declared = if args.declared.is_empty() {
        file.declared.map(|d| d.into_vec()).unwrap_or_default()
    } else {
        args.declared
    };
    let positions = if declared.is_empty() {
        declared_positions().into_iter().map(|n| (n.name, n.position)).collect()
    } else {
        declared
            .iter()
            .map(|d| parse_position(d).map(|p| (d.trim().to_string(), p)))
            .collect::<Result<Vec<_>, _>>()?
    };
    match flags.backend.unwrap_or(Backend::Sim) {
        Backend::Replay => return Err(UsageError("sweeps cannot use the replay backend".into()).into()),
        Backend::Icmp => log::warn!(
            "sweeping over the live network: {} audits, each sending real probes",
            values.len() * positions.len() * repetitions
        ),
        Backend::Sim => {}
    }
    let base = base_config(positions[0].1, &flags)?;
    let plan = sweep::Plan {
        parameter,
        values,
        positions,
        repetitions,
        base,
        parallel: args.parallel.or(file.parallel).unwrap_or(1),
    };
    let inputs = Inputs::load(&flags)?;
    let out = output(flags.output.as_deref())?;
    sweep::run(&plan, &inputs, out)
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let mut spec: WorldSpec = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec
        }
        None => preset_world(
            args.jitter,
            args.offset_min,
            args.offset_max,
            args.seed.unwrap_or(DEFAULT_SEED),
        ),
    };
    let world = spec.generate()?;
    let mesh = world.mesh();
    let dir = &args.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    fs::write(dir.join("world_spec.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
    fs::write(dir.join("scenario.json"), serde_json::to_string_pretty(&world.scenario())? + "\n")?;
    let mut catalog = BufWriter::new(File::create(dir.join("landmarks.jsonl"))?);
    world.landmarks.write_jsonl(&mut catalog)?;
    catalog.flush()?;
    mesh.write_csv(BufWriter::new(File::create(dir.join("mesh.csv"))?))?;
    println!(
        "wrote {} landmarks and {} mesh entries to {}",
        world.landmarks.len(),
        mesh.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_deadzone(args: DeadzoneArgs) -> Result<()> {
    if !(args.radius.is_finite() && args.radius >= 0.0) {
        return Err(UsageError(format!("radius must be non-negative, got {}", args.radius)).into());
    }
    let center = parse_position(&args.center)?;
    let catalog = read_catalog(&args.catalog)?;
    let mesh = read_mesh(&args.mesh, &catalog)?;
    let kept = catalog.exclude_zone(center, args.radius);
    let kept_mesh = mesh.restricted_to(&kept);
    let mut out = BufWriter::new(File::create(&args.out_catalog)?);
    kept.write_jsonl(&mut out)?;
    out.flush()?;
    kept_mesh.write_csv(BufWriter::new(File::create(&args.out_mesh)?))?;
    println!("removed {} landmarks, {} remain", catalog.len() - kept.len(), kept.len());
    if let Some(d) = kept.nearest_km(center) {
        println!("nearest remaining landmark: {d:.1} km from the center");
    }
    Ok(())
}

fn cmd_fetch(args: FetchArgs) -> Result<()> {
    let url = args.atlas_url.unwrap_or_else(base_url_from_env);
    let client = AtlasClient::new(url).with_max_measurements(args.max_measurements);
    let (catalog, cstats) = client.fetch_catalog()?;
    let (mesh, mstats) = client.fetch_mesh(&catalog)?;
    let mut out = BufWriter::new(File::create(&args.out_catalog)?);
    catalog.write_jsonl(&mut out)?;
    out.flush()?;
    mesh.write_csv(BufWriter::new(File::create(&args.out_mesh)?))?;
    println!(
        "{} anchors ({} rejected), {} mesh entries ({} rejected)",
        catalog.len(),
        cstats.rejected,
        mesh.len(),
        mstats.rejected
    );
    Ok(())
}

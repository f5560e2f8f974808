mod manifest;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use floodlens_core::analysis::{self, ReportMeta};
use floodlens_core::codebook::{parse_codebook, Codebook};
use floodlens_core::geo::{self, SamplePoint};
use floodlens_core::service::{self, http, LabelService, Response};
use floodlens_core::tasking::{self, Assignment, BatchManifest, TaskBatch};

use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(
    name = "floodlens",
    version,
    about = "Street-level flood-vulnerability survey pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw random sample points inside a study region.
    Sample(SampleArgs),
    /// Move sample points onto the nearest building footprint.
    Relocate(RelocateArgs),
    /// Build a task batch (CSV + manifest) from relocated points.
    Tasks(TasksArgs),
    /// Run the labeling HTTP service.
    Serve(ServeArgs),
    /// Coverage accounting and per-variable frequencies.
    Stats(StatsArgs),
    /// Inter-rater agreement per variable.
    Kappa(KappaArgs),
    /// GeoJSON point export of one aggregated variable.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Study region (GeoJSON Polygon/MultiPolygon).
    #[arg(long, env = "FLOODLENS_REGION")]
    region: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = geo::DEFAULT_MIN_SPACING_M)]
    min_spacing_m: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RelocateArgs {
    #[arg(long, env = "FLOODLENS_POINTS")]
    points: PathBuf,
    /// Building footprints (GeoJSON FeatureCollection with `building_id`).
    #[arg(long, env = "FLOODLENS_FOOTPRINTS")]
    footprints: PathBuf,
    #[arg(long, default_value_t = geo::DEFAULT_MAX_RADIUS_M)]
    max_radius_m: f64,
    #[arg(long, default_value_t = geo::DEFAULT_MIN_SPACING_M)]
    min_spacing_m: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TasksArgs {
    #[arg(long, env = "FLOODLENS_POINTS")]
    points: PathBuf,
    #[arg(long, env = "FLOODLENS_CODEBOOK")]
    codebook: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Comma-separated rater ids.
    #[arg(long, value_delimiter = ',', required = true)]
    raters: Vec<String>,
    /// Raters per task.
    #[arg(long, default_value_t = 1)]
    k: u32,
    #[arg(long)]
    batch_id: String,
    /// Imagery URL with a `{point_id}` placeholder.
    #[arg(long, env = "FLOODLENS_IMAGE_URL_TEMPLATE")]
    image_url_template: String,
    /// Only relocated points become tasks; others are skipped (and remain in
    /// the points file for coverage accounting).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct BatchInputs {
    /// Task CSV.
    #[arg(long, env = "FLOODLENS_BATCH")]
    batch: PathBuf,
    /// Batch manifest; defaults to `<batch>.batch.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, env = "FLOODLENS_CODEBOOK")]
    codebook: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    inputs: BatchInputs,
    /// Response log (JSON Lines, append-only).
    #[arg(long, env = "FLOODLENS_LOG")]
    log: PathBuf,
    #[arg(long, env = "FLOODLENS_LISTEN", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Static files for the rater web client, served under `/`.
    #[arg(long, env = "FLOODLENS_STATIC_DIR")]
    static_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportOutput {
    /// Emit JSON instead of a text table.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[command(flatten)]
    inputs: BatchInputs,
    #[arg(long, env = "FLOODLENS_LOG")]
    log: PathBuf,
    /// Relocated points CSV (all planned points, including excluded ones).
    #[arg(long, env = "FLOODLENS_POINTS")]
    points: PathBuf,
    #[command(flatten)]
    output: ReportOutput,
}

#[derive(Args, Debug)]
struct KappaArgs {
    #[command(flatten)]
    inputs: BatchInputs,
    #[arg(long, env = "FLOODLENS_LOG")]
    log: PathBuf,
    /// Restrict to these task ids (comma-separated).
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    #[command(flatten)]
    output: ReportOutput,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    inputs: BatchInputs,
    #[arg(long, env = "FLOODLENS_LOG")]
    log: PathBuf,
    #[arg(long, env = "FLOODLENS_POINTS")]
    points: PathBuf,
    #[arg(long)]
    variable: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Sample(a) => sample(a),
        Command::Relocate(a) => relocate(a),
        Command::Tasks(a) => tasks(a),
        Command::Serve(a) => serve(a),
        Command::Stats(a) => stats(a),
        Command::Kappa(a) => kappa(a),
        Command::Export(a) => export(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

/// Writes via a temp file in the target directory and renames into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn check_distinct(out: &Path, inputs: &[&Path]) -> Result<()> {
    for input in inputs {
        if out == *input || (out.exists() && fs::canonicalize(out).ok() == fs::canonicalize(input).ok()) {
            bail!("output {} would overwrite an input", out.display());
        }
    }
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8], manifest: Option<&RunManifest>) -> Result<()> {
    match out {
        Some(path) => {
            write_atomic(path, bytes)?;
            if let Some(m) = manifest {
                write_atomic(&manifest::sidecar(path), m.to_json().as_bytes())?;
            }
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn load_points(path: &Path) -> Result<Vec<SamplePoint>> {
    geo::read_points_csv(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_codebook(path: &Path) -> Result<Codebook> {
    parse_codebook(&read(path)?).with_context(|| format!("parsing codebook {}", path.display()))
}

fn batch_manifest_path(batch: &Path) -> PathBuf {
    let mut s = batch.as_os_str().to_owned();
    s.push(".batch.json");
    PathBuf::from(s)
}

fn load_batch(inputs: &BatchInputs) -> Result<(Codebook, TaskBatch, Assignment)> {
    let cb = load_codebook(&inputs.codebook)?;
    let manifest_path = inputs
        .manifest
        .clone()
        .unwrap_or_else(|| batch_manifest_path(&inputs.batch));
    let manifest: BatchManifest = serde_json::from_slice(&read(&manifest_path)?)
        .with_context(|| format!("parsing batch manifest {}", manifest_path.display()))?;
    let (batch, assignment) = tasking::import_tasks_csv(&read(&inputs.batch)?, &manifest)
        .with_context(|| format!("parsing {}", inputs.batch.display()))?;
    if batch.codebook_version != cb.version {
        bail!(
            "batch was built for codebook version {}, {} is version {}",
            batch.codebook_version,
            inputs.codebook.display(),
            cb.version
        );
    }
    Ok((cb, batch, assignment))
}

fn load_responses(log: &Path) -> Result<Vec<Response>> {
    let bytes = read(log)?;
    let rep = service::replay(&bytes).with_context(|| format!("replaying {}", log.display()))?;
    for w in &rep.warnings {
        log::warn!("{w}");
    }
    Ok(rep.set.into_current())
}

fn sample(a: SampleArgs) -> Result<()> {
    if let Some(out) = &a.out {
        check_distinct(out, &[&a.region])?;
    }
    let region = geo::parse_region(&read(&a.region)?).with_context(|| format!("parsing {}", a.region.display()))?;
    let points = geo::random_points(&region, a.n, a.seed, a.min_spacing_m)?;
    let manifest = RunManifest::new("sample")
        .input("region", &a.region)
        .seed(a.seed)
        .param("n", a.n)
        .param("min_spacing_m", a.min_spacing_m);
    emit(a.out.as_deref(), &geo::write_points_csv(&points), Some(&manifest))
}

fn relocate(a: RelocateArgs) -> Result<()> {
    if let Some(out) = &a.out {
        check_distinct(out, &[&a.points, &a.footprints])?;
    }
    let points = load_points(&a.points)?;
    let footprints =
        geo::parse_footprints(&read(&a.footprints)?).with_context(|| format!("parsing {}", a.footprints.display()))?;
    let moved = geo::relocate_all(&points, &footprints, a.max_radius_m, a.min_spacing_m)?;
    let manifest = RunManifest::new("relocate")
        .input("points", &a.points)
        .input("footprints", &a.footprints)
        .param("max_radius_m", a.max_radius_m)
        .param("min_spacing_m", a.min_spacing_m);
    emit(a.out.as_deref(), &geo::write_points_csv(&moved), Some(&manifest))
}

fn tasks(a: TasksArgs) -> Result<()> {
    check_distinct(&a.out, &[&a.points, &a.codebook])?;
    let points = load_points(&a.points)?;
    let cb = load_codebook(&a.codebook)?;
    let relocated: Vec<SamplePoint> = points
        .into_iter()
        .filter(|p| matches!(p.status, geo::PointStatus::Relocated { .. }))
        .collect();
    let batch = tasking::build_tasks(&relocated, &a.image_url_template, a.k, &a.batch_id, &cb.version)?;
    let assignment = tasking::assign_raters(&batch, &a.raters, a.seed)?;
    let manifest = RunManifest::new("tasks")
        .input("points", &a.points)
        .input("codebook", &a.codebook)
        .seed(a.seed)
        .param("k", a.k)
        .param("batch_id", &a.batch_id)
        .param("raters", &a.raters)
        .param("image_url_template", &a.image_url_template);
    emit(
        Some(&a.out),
        &tasking::export_tasks_csv(&batch, &assignment),
        Some(&manifest),
    )?;
    let batch_manifest = BatchManifest::for_batch(&batch, Some(a.seed));
    let mut json = serde_json::to_string_pretty(&batch_manifest)?;
    json.push('\n');
    write_atomic(&batch_manifest_path(&a.out), json.as_bytes())
}

fn serve(a: ServeArgs) -> Result<()> {
    let (cb, batch, assignment) = load_batch(&a.inputs)?;
    let (svc, warnings) = LabelService::open(cb, batch, assignment, &a.log)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let svc = Arc::new(svc);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen)
            .await
            .with_context(|| format!("binding {}", a.listen))?;
        let addr = listener.local_addr()?;
        let p = svc.progress();
        log::info!(
            "batch {} ({} tasks, {} of {} responses received)",
            p.batch_id,
            p.total_tasks,
            p.responses_received,
            p.total_expected_responses
        );
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        tokio::select! {
            res = http::serve(listener, svc, a.static_dir.as_deref()) => res?,
            _ = tokio::signal::ctrl_c() => log::info!("shutting down"),
        }
        Ok(())
    })
}

fn report_bytes<T: serde::Serialize>(report: &T, text: String, json: bool) -> Result<Vec<u8>> {
    Ok(if json {
        let mut s = serde_json::to_string_pretty(report)?;
        s.push('\n');
        s.into_bytes()
    } else {
        text.into_bytes()
    })
}

fn stats(a: StatsArgs) -> Result<()> {
    let (cb, batch, _) = load_batch(&a.inputs)?;
    let points = load_points(&a.points)?;
    let responses = load_responses(&a.log)?;
    let report = analysis::stats_report(&cb, &batch, &points, &responses)?;
    let bytes = report_bytes(&report, report.to_text(), a.output.json)?;
    emit(a.output.out.as_deref(), &bytes, None)
}

fn kappa(a: KappaArgs) -> Result<()> {
    let (cb, batch, _) = load_batch(&a.inputs)?;
    let responses = load_responses(&a.log)?;
    let filter: Option<BTreeSet<String>> = a.tasks.map(|t| t.into_iter().collect());
    let report = analysis::agreement_report(&cb, &batch, &responses, filter.as_ref())?;
    let bytes = report_bytes(&report, report.to_text(), a.output.json)?;
    emit(a.output.out.as_deref(), &bytes, None)
}

fn export(a: ExportArgs) -> Result<()> {
    let (cb, batch, _) = load_batch(&a.inputs)?;
    if cb.variable(&a.variable).is_none() {
        bail!("unknown variable {}", a.variable);
    }
    let points = load_points(&a.points)?;
    let responses = load_responses(&a.log)?;
    let values = analysis::aggregate_variable(&batch, &responses, &a.variable)?;
    let bytes = analysis::export_geojson(&ReportMeta::for_batch(&cb, &batch), &points, &values, &a.variable)?;
    emit(a.out.as_deref(), &bytes, None)
}

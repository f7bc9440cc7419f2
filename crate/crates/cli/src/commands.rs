use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use serde::Serialize;

use spice_core::backend::{
    denoiser_from_spec, embedder_from_spec, BackendError, DenoiseRequest, DenoiseResponse, Denoiser,
};
use spice_core::hints::{HintKind, HintLayer};
use spice_core::imageops::{decode_png, encode_png};
use spice_core::metrics::{evaluate_cases, measure_object, percentage_errors, ObjectProperties, PropertyErrors, PropertySpec};
use spice_core::model::{load_project, save_project, Ablation, MANIFEST_FILE};
use spice_core::orchestrator::{run_edit_step, run_sweep, StepOptions, SweepOptions};
use spice_core::{BinaryMask, BoundingBox, ContextMask, EditConfig, EditSession, ImageBuffer};
use spice_server::{serve_mock, AppState, ServerConfig};

use crate::exit::{CliError, CliResult};
use crate::{ClipCmd, EditArgs, EditCmd, MeasureCmd, MockBackendCmd, ServeCmd, SweepCmd};

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::io)
}

fn read_png(path: &Path) -> CliResult<ImageBuffer> {
    decode_png(&read_file(path)?)
        .with_context(|| format!("cannot decode {}", path.display()))
        .map_err(CliError::io)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .map_err(CliError::io)?;
    }
    fs::write(path, bytes)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::io)
}

fn write_png(path: &Path, image: &ImageBuffer) -> CliResult {
    let bytes = encode_png(image).map_err(CliError::internal)?;
    write_file(path, &bytes)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
    println!("{text}");
    Ok(())
}

/// Everything an edit needs, loaded and validated.
struct EditInputs {
    mask: ContextMask,
    mask_sha256: String,
    hints: Vec<HintLayer>,
    hint_records: Vec<HintRecord>,
    config: EditConfig,
    options: StepOptions,
    backend: Box<dyn Denoiser>,
}

#[derive(Debug, Serialize)]
struct HintRecord {
    kind: HintKind,
    opacity: f64,
    sha256: String,
}

fn build_config(args: &EditArgs) -> CliResult<EditConfig> {
    let mut ablation = Ablation::default();
    for name in &args.ablate {
        ablation.set_by_name(name).map_err(CliError::usage)?;
    }
    let config = EditConfig {
        prompt: args.prompt.clone(),
        denoising_strength: args.strength,
        canny_steps: args.canny_steps,
        base_steps: args.base_steps,
        seed: args.seed,
        target_resolution: args.resolution,
        patch_opacity: args.patch_opacity,
        blur_fraction: args.blur_fraction,
        dot_area_max: args.dot_area_max,
        ablation,
    };
    config.validate().map_err(CliError::usage)?;
    if let Some(s) = args.context_scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::usage(anyhow!("--context-scale must be positive, got {s}")));
        }
    }
    Ok(config)
}

fn load_inputs(args: &EditArgs) -> CliResult<EditInputs> {
    let config = build_config(args)?;
    let mask_image = read_png(&args.mask)?;
    let mask = BinaryMask::from_image(&mask_image).map_err(CliError::usage)?;
    let mut hints = Vec::new();
    let mut hint_records = Vec::new();
    let layers = args
        .hints
        .iter()
        .map(|p| (p, HintKind::ColorPatch, config.patch_opacity))
        .chain(args.references.iter().map(|p| (p, HintKind::ReferencePaste, 1.0)));
    for (path, kind, opacity) in layers {
        let raster = read_png(path)?;
        hint_records.push(HintRecord {
            kind,
            opacity,
            sha256: raster.digest_hex(),
        });
        let layer = HintLayer::new(kind, raster, opacity)
            .with_context(|| format!("hint layer {}", path.display()))
            .map_err(CliError::usage)?;
        hints.push(layer);
    }
    let backend = denoiser_from_spec(&args.backend)?;
    Ok(EditInputs {
        mask_sha256: mask.to_gray().digest_hex(),
        mask: ContextMask::new(mask),
        hints,
        hint_records,
        options: StepOptions {
            context_scale: args.context_scale,
            ..StepOptions::default()
        },
        config,
        backend,
    })
}

/// Deterministic step description written next to the result. Wall-clock
/// duration is left out so reruns are byte-identical.
#[derive(Debug, Serialize)]
struct StepMetadata {
    #[serde(skip_serializing_if = "Option::is_none")]
    step_index: Option<usize>,
    region: BoundingBox,
    config: EditConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    context_scale: Option<f64>,
    image_sha256: String,
    mask_sha256: String,
    hints: Vec<HintRecord>,
    backend_id: String,
    continuation_digests: Vec<String>,
    result_sha256: String,
}

fn open_session(image: Option<&Path>, project: Option<&Path>) -> CliResult<EditSession> {
    if let Some(dir) = project.filter(|d| d.join(MANIFEST_FILE).is_file()) {
        if image.is_some() {
            return Err(CliError::usage(anyhow!(
                "--image cannot be combined with an existing project; the project's active image is edited"
            )));
        }
        return load_project(dir)
            .with_context(|| format!("cannot load project {}", dir.display()))
            .map_err(CliError::io);
    }
    let path = image.ok_or_else(|| CliError::usage(anyhow!("--image is required")))?;
    let id = project
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cli".to_string());
    Ok(EditSession::new(id, read_png(path)?))
}

pub fn edit(cmd: EditCmd) -> CliResult {
    let inputs = load_inputs(&cmd.edit)?;
    let mut session = open_session(cmd.edit.image.as_deref(), cmd.project.as_deref())?;
    let active = Arc::clone(session.active_image());
    let step = run_edit_step(
        &active,
        &inputs.mask,
        &inputs.hints,
        &inputs.config,
        inputs.backend.as_ref(),
        &inputs.options,
    )?;
    let mut meta = StepMetadata {
        step_index: None,
        region: step.region,
        config: step.config.clone(),
        context_scale: cmd.edit.context_scale,
        image_sha256: active.digest_hex(),
        mask_sha256: inputs.mask_sha256,
        hints: inputs.hint_records,
        backend_id: step.provenance.backend_id.clone(),
        continuation_digests: step.provenance.continuation_digests.clone(),
        result_sha256: step.result.digest_hex(),
    };
    write_png(&cmd.out, &step.result)?;
    if let Some(dir) = &cmd.project {
        let index = session.commit_step(step).map_err(CliError::internal)?;
        save_project(&session, dir)
            .with_context(|| format!("cannot save project {}", dir.display()))
            .map_err(CliError::io)?;
        meta.step_index = Some(index);
    }
    let meta_path = cmd.meta.clone().unwrap_or_else(|| cmd.out.with_extension("json"));
    write_json(&meta_path, &meta)?;
    eprintln!("wrote {} ({})", cmd.out.display(), meta.result_sha256);
    Ok(())
}

/// Fails any request made at one particular strength.
struct FaultAt {
    inner: Box<dyn Denoiser>,
    strength: f64,
}

impl Denoiser for FaultAt {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn denoise(&self, request: &DenoiseRequest) -> Result<DenoiseResponse, BackendError> {
        if (request.denoising_strength - self.strength).abs() < 1e-12 {
            return Err(BackendError::Fault(format!(
                "injected failure at strength {}",
                self.strength
            )));
        }
        self.inner.denoise(request)
    }
}

pub fn sweep(cmd: SweepCmd) -> CliResult {
    if cmd.values.len() < 2 {
        return Err(CliError::usage(anyhow!(
            "a sweep needs at least 2 values, got {}",
            cmd.values.len()
        )));
    }
    if cmd.jobs == 0 || cmd.thumb_height == 0 {
        return Err(CliError::usage(anyhow!("--jobs and --thumb-height must be positive")));
    }
    let mut inputs = load_inputs(&cmd.edit)?;
    if let Some(strength) = cmd.fail_at_strength {
        inputs.backend = Box::new(FaultAt {
            inner: inputs.backend,
            strength,
        });
    }
    let image = cmd
        .edit
        .image
        .as_deref()
        .ok_or_else(|| CliError::usage(anyhow!("--image is required")))?;
    let active = Arc::new(read_png(image)?);
    let options = SweepOptions {
        jobs: cmd.jobs,
        step: inputs.options.clone(),
        thumb_height: cmd.thumb_height,
    };
    let result = run_sweep(
        &active,
        &inputs.mask,
        &inputs.hints,
        &inputs.config,
        inputs.backend.as_ref(),
        cmd.axis,
        &cmd.values,
        &options,
    )?;
    for (i, cell) in result.cells.iter().enumerate() {
        match &cell.outcome {
            Ok(step) => write_png(&cmd.out_dir.join(format!("cell_{i:02}.png")), &step.result)?,
            Err(e) => eprintln!("cell {i} ({} = {}) failed: {e}", cmd.axis, cell.value),
        }
    }
    write_png(&cmd.out_dir.join("contact.png"), &result.contact_sheet)?;
    write_json(&cmd.out_dir.join("sweep.json"), &result.sidecar())?;
    let ok = result.succeeded();
    eprintln!("{ok}/{} cells succeeded", result.cells.len());
    if ok == 0 {
        return Err(CliError::backend(anyhow!("every sweep cell failed")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct MeasureReport {
    measured: ObjectProperties,
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<PropertySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    errors: Option<PropertyErrors>,
}

pub fn measure(cmd: MeasureCmd) -> CliResult {
    let seg = BinaryMask::from_image(&read_png(&cmd.seg)?).map_err(CliError::usage)?;
    let image = read_png(&cmd.image)?;
    let spec: Option<PropertySpec> = match &cmd.spec {
        Some(path) => Some(
            serde_json::from_slice(&read_file(path)?)
                .with_context(|| format!("invalid spec {}", path.display()))
                .map_err(CliError::usage)?,
        ),
        None => None,
    };
    let measured = measure_object(&seg, &image)?;
    let errors = spec.as_ref().map(|s| percentage_errors(&measured, s)).transpose()?;
    let report = MeasureReport {
        measured,
        spec,
        errors,
    };
    match &cmd.out {
        Some(path) => write_json(path, &report),
        None => print_json(&report),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

pub fn clip_metrics(cmd: ClipCmd) -> CliResult {
    let embedder = embedder_from_spec(&cmd.embedder)?;
    let report = evaluate_cases(&cmd.cases, embedder.as_ref())?;
    println!(
        "CLIP_dir: {} ± {} (n={})",
        fmt_opt(report.clip_dir.mean),
        fmt_opt(report.clip_dir.sd),
        report.clip_dir.n
    );
    println!(
        "CLIP_out: {} ± {} (n={})",
        fmt_opt(report.clip_out.mean),
        fmt_opt(report.clip_out.sd),
        report.clip_out.n
    );
    if report.undefined > 0 || report.errored > 0 {
        println!("undefined direction: {}, errored: {}", report.undefined, report.errored);
    }
    if let Some(path) = &cmd.out {
        write_json(path, &report)?;
    }
    if let Some(path) = &cmd.csv {
        report.write_csv(path)?;
    }
    Ok(())
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::internal)
}

async fn bind(host: &str, port: u16) -> CliResult<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .with_context(|| format!("cannot listen on {host}:{port}"))
        .map_err(CliError::io)?;
    let addr = listener.local_addr().map_err(CliError::io)?;
    println!("listening on http://{addr}");
    std::io::stdout().flush().map_err(CliError::io)?;
    Ok(listener)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn serve(cmd: ServeCmd) -> CliResult {
    // built outside the runtime: the HTTP client must not be created or
    // dropped on an async worker
    let backend: Arc<dyn Denoiser> = Arc::from(denoiser_from_spec(&cmd.backend_url)?);
    let parallelism = cmd
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = AppState::open(ServerConfig {
        project_root: cmd.project_root.clone(),
        backend: Arc::clone(&backend),
        parallelism,
    })
    .map_err(CliError::io)?;
    let rt = runtime()?;
    rt.block_on(async {
        let listener = bind(&cmd.host, cmd.port).await?;
        spice_server::serve(listener, state, shutdown_signal())
            .await
            .map_err(CliError::io)
    })?;
    drop(rt);
    drop(backend);
    eprintln!("server stopped; sessions are saved under {}", cmd.project_root.display());
    Ok(())
}

pub fn mock_backend(cmd: MockBackendCmd) -> CliResult {
    let rt = runtime()?;
    rt.block_on(async {
        let listener = bind(&cmd.host, cmd.port).await?;
        serve_mock(listener, shutdown_signal()).await.map_err(CliError::io)
    })
}

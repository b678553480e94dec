use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use conductor_core::grouping::{assign_groups, linearize, Hierarchy, HierarchyNode};
use conductor_core::mask::{build_visibility_mask, TransferFunction2D, DEFAULT_TF_RESOLUTION};
use conductor_core::render::{
    render_frame, BlendWeights, Camera, IdGate, RawTransferFunction, RenderOptions, Scene,
};
use conductor_core::session::{Command, DatasetSource, Event, Session};
use conductor_core::sparsify::{
    aggregate_importance, sparsify_groups, ImportanceFunction, SparsifyParams,
};
use conductor_core::voldata::{compute_gradients, generate_synthetic, save_dataset, SceneSpec};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(
    name = "conductor",
    version,
    about = "Visibility management for crowded volumes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write a seeded synthetic dataset to disk.
    Generate(GenerateArgs),
    /// Render a dataset offline to a PNG plus a visibility report.
    Render(RenderArgs),
    /// Serve the HTTP/WebSocket API.
    Serve(ServeArgs),
    /// Time each pipeline stage on a synthetic scene.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Boxes, spheres and ellipsoids of mixed sizes.
    Mixed,
    /// Equal small spheres spread uniformly.
    Spheres,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    pub preset: Preset,
    /// Scene spec JSON; overrides --preset.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Voxels per side for presets.
    #[arg(long, default_value_t = 64)]
    pub voxels: usize,
    /// Sphere count for the spheres preset.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SceneArgs {
    fn spec(&self) -> Result<SceneSpec> {
        if let Some(p) = &self.scene {
            return read_json(p);
        }
        Ok(match self.preset {
            Preset::Mixed => SceneSpec::mixed(self.voxels),
            Preset::Spheres => SceneSpec::uniform_spheres(self.voxels, self.count, 1.5),
        })
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub stem: String,
}

/// Contents of the `--params` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub sparsify: SparsifyParams,
    pub blend: BlendWeights,
    pub raw_tf: RawTransferFunction,
    pub render: RenderOptions,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Dataset descriptor JSON.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Image size as WxH; overrides the camera file.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(u32, u32)>,
    /// Output PNG. The report is written next to it as `<stem>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the sparsification seed of the params file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_parser = parse_size, default_value = "512x512")]
    pub size: (u32, u32),
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn parse_size(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in {s:?}"))?;
    let h: u32 = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Volume split into three ranges, each split by elongation into three.
pub fn default_hierarchy() -> Hierarchy {
    Hierarchy::new(vec![HierarchyNode::new(
        "volume",
        &[(0.0, 30.0), (30.0, 200.0), (200.0, f64::INFINITY)],
    )
    .with_children(vec![HierarchyNode::new(
        "elongation",
        &[(0.0, 1.3), (1.3, 2.0), (2.0, f64::INFINITY)],
    )])])
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Generate(a) => generate(&a),
        Cmd::Render(a) => render(&a),
        Cmd::Serve(a) => serve(&a),
        Cmd::Bench(a) => bench(&a),
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    let spec = a.scene.spec()?;
    let dataset = generate_synthetic(&spec, a.scene.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = save_dataset(&dataset, &a.out, &a.stem)?;
    println!("{}", path.display());
    Ok(())
}

/// Report path for an image path: `out.png` becomes `out.report.json`.
pub fn report_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

fn render(a: &RenderArgs) -> Result<()> {
    let mut params: RenderParams = match &a.params {
        Some(p) => read_json(p)?,
        None => RenderParams::default(),
    };
    if let Some(seed) = a.seed {
        params.sparsify.seed = seed;
    }
    let hierarchy = match &a.hierarchy {
        Some(p) => read_json(p)?,
        None => default_hierarchy(),
    };
    let mut session = Session::new();
    let mut apply = |c: Command| session.apply(c).map(|_| ());
    apply(Command::SetSparsifyParams {
        params: params.sparsify,
    })?;
    apply(Command::SetBlendWeights {
        weights: params.blend,
    })?;
    apply(Command::SetRawTf { tf: params.raw_tf })?;
    apply(Command::SetRenderOptions {
        options: params.render,
    })?;
    apply(Command::LoadDataset {
        source: DatasetSource::Path {
            path: a.dataset.clone(),
        },
    })?;
    let mut camera = match &a.camera {
        Some(p) => read_json(p)?,
        None => *session.camera(),
    };
    if let Some((w, h)) = a.size {
        camera.width = w;
        camera.height = h;
    }
    session.apply(Command::SetCamera { camera })?;
    // view-dependent modes read the camera set above
    session.apply(Command::SetHierarchy { hierarchy })?;
    let events = session.apply(Command::RequestFrame)?;
    let (mut frame, mut report) = (None, None);
    for e in events {
        match e {
            Event::Frame(f) => frame = Some(f),
            Event::Report(r) => report = Some(r),
            Event::Updated { .. } => {}
        }
    }
    let (Some(frame), Some(report)) = (frame, report) else {
        bail!("render produced no frame");
    };
    fs::write(&a.out, frame.to_png()?).with_context(|| format!("writing {}", a.out.display()))?;
    let rp = report_path(&a.out);
    let body = json!({
        "report": report,
        "groups": session.state().groups,
    });
    fs::write(&rp, serde_json::to_string_pretty(&body)?)
        .with_context(|| format!("writing {}", rp.display()))?;
    println!("{}", a.out.display());
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let addr = format!("{}:{}", a.host, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, crate::server::router()).await?;
        Ok(())
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub dims: [usize; 3],
    pub instances: usize,
    pub groups: usize,
    pub frame: [u32; 2],
    /// Seconds per stage.
    pub linearize: f64,
    pub assign: f64,
    pub aggregate: f64,
    pub sparsify: f64,
    pub mask_build: f64,
    pub render: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

pub fn run_bench(a: &BenchArgs) -> Result<BenchReport> {
    let params: RenderParams = match &a.params {
        Some(p) => read_json(p)?,
        None => RenderParams::default(),
    };
    let hierarchy = match &a.hierarchy {
        Some(p) => read_json(p)?,
        None => default_hierarchy(),
    };
    let spec = a.scene.spec()?;
    let mut dataset = generate_synthetic(&spec, a.scene.seed)?;
    let dims = dataset.dims();
    let gradients = compute_gradients(&dataset.raw);
    dataset.table.shuffle(params.sparsify.seed);
    let camera = Camera::framing(&dims, [0.3, 0.4, 1.0], a.size.0, a.size.1);

    let (preds, t_lin) = timed(|| linearize(&hierarchy, dataset.table.schema()));
    let preds = preds?;
    let (assignment, t_assign) = timed(|| assign_groups(&preds, &dataset.table));
    let assignment = assignment?;
    let function = ImportanceFunction::new(&params.sparsify, &dims, camera.eye, Some(&gradients))?;
    let (importance, t_agg) =
        timed(|| aggregate_importance(&dataset.seg, &dataset.table, &function));
    let (_, t_sp) = timed(|| sparsify_groups(&preds, &assignment, &importance, &mut dataset.table));
    let (mask, t_mask) = timed(|| build_visibility_mask(&dataset.seg, &dataset.table, &assignment));
    let mask = mask?;
    let tf = TransferFunction2D::new(
        preds.iter().map(|p| p.color).collect(),
        DEFAULT_TF_RESOLUTION,
    )?;
    let gate = IdGate::new(&dataset.table, &assignment);
    let scene = Scene {
        raw: &dataset.raw,
        seg: &dataset.seg,
        gradients: Some(&gradients),
        mask: &mask,
        tf: &tf,
        raw_tf: &params.raw_tf,
        gate: &gate,
        weights: params.blend,
        options: params.render,
        epoch: 0,
    };
    let (frame, t_render) = timed(|| render_frame(&scene, &camera));
    frame?;
    Ok(BenchReport {
        dims: dims.shape(),
        instances: dataset.table.len(),
        groups: preds.len(),
        frame: [a.size.0, a.size.1],
        linearize: t_lin,
        assign: t_assign,
        aggregate: t_agg,
        sparsify: t_sp,
        mask_build: t_mask,
        render: t_render,
    })
}

fn bench(a: &BenchArgs) -> Result<()> {
    let report = run_bench(a)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("512x256"), Ok((512, 256)));
        assert!(parse_size("512").is_err());
        assert!(parse_size("0x4").is_err());
        assert!(parse_size("ax4").is_err());
    }

    #[test]
    fn report_next_to_image() {
        assert_eq!(
            report_path(Path::new("a/out.png")),
            PathBuf::from("a/out.report.json")
        );
    }

    #[test]
    fn params_defaults() {
        let p: RenderParams = serde_json::from_str("{}").unwrap();
        assert_eq!(p, RenderParams::default());
        assert!(serde_json::from_str::<RenderParams>(r#"{"bogus":1}"#).is_err());
    }
}

//! Command-line front end.
//!
//! Every subcommand is a thin wrapper over the library: the same seeds give
//! results identical to calling the API directly. Structured results go to
//! stdout as JSON (or to a file where `--out` means the result); progress
//! notes go to stderr. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::field::{
    export_heatmap, generate_occupancy_set, generate_training_set, train, DataConfig,
    DescriptorField, FieldHead, FieldNet, GridSpec, TrainConfig, TrainReport,
};
use crate::geometry::{
    load_geometry, sample_surface, save_obj, Geometry, Pt3, RayAccelerator, RigidTransform,
};
use crate::harness::bench::{run_benchmark, BenchSuite};
use crate::harness::shapes::{generate_instance, gripper, rack, Category, GripperParams, RackParams};
use crate::ibs::{compute_ibs, IbsConfig};
use crate::imitate::{imitate, ImitateConfig, PoseResult};
use crate::rng::derive_seed_tagged;
use crate::scf::ScfConfig;
use crate::template::{build_template, Demonstration, InteractionTemplate, TemplateConfig};

#[derive(Parser)]
#[command(
    name = "nift",
    version,
    about = "Interaction templates on bisector surfaces with descriptor-field pose imitation"
)]
struct Cli {
    /// RNG seed. Omitted: a fresh one is drawn and echoed in the result.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Omitted: all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress notes on stderr (errors still print).
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate the analytic shape descriptor at one query point.
    Scf(ScfArgs),
    /// Extract the bisector surface between two meshes.
    Ibs(IbsArgs),
    /// Train a descriptor network on a mesh corpus.
    TrainField(TrainFieldArgs),
    /// Build an interaction template from demonstrations.
    MakeTemplate(MakeTemplateArgs),
    /// Recover the demonstrated pose on a new scene object.
    Imitate(ImitateArgs),
    /// Export a feature-difference heatmap between two objects.
    Heatmap(HeatmapArgs),
    /// Run a benchmark suite and write JSON + CSV reports.
    Bench(BenchArgs),
    /// Generate procedural meshes for demos and tests.
    GenShapes(GenShapesArgs),
}

/// Descriptor backend shared by template, imitation, and heatmap commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FieldChoice {
    /// Analytic band powers by ray casting.
    Scf,
    /// Trained band-power regressor (requires --net).
    Bandnet,
    /// Trained occupancy network (requires --net).
    Occnet,
}

#[derive(Args, Clone)]
struct FieldOpts {
    /// Descriptor backend.
    #[arg(long, value_enum, default_value = "scf")]
    field: FieldChoice,
    /// Weights file for the learned backends.
    #[arg(long)]
    net: Option<PathBuf>,
    /// Ray directions per analytic descriptor evaluation.
    #[arg(long, default_value_t = ScfConfig::default().dir_count)]
    dirs: usize,
    /// Band order of the analytic descriptor.
    #[arg(long, default_value_t = ScfConfig::default().order)]
    order: usize,
    /// Surface samples when binding a learned field to an object.
    #[arg(long, default_value_t = 256)]
    cloud_size: usize,
}

impl FieldOpts {
    fn scf_config(&self) -> ScfConfig {
        ScfConfig { order: self.order, dir_count: self.dirs, ..ScfConfig::default() }
    }

    fn load_net(&self) -> Result<Arc<FieldNet>> {
        let path = self
            .net
            .as_deref()
            .with_context(|| format!("--field {:?} needs --net <weights file>", self.field))?;
        let mut r = BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        );
        let net = FieldNet::load(&mut r)
            .with_context(|| format!("reading weights from {}", path.display()))?;
        let ok = match (self.field, net.head()) {
            (FieldChoice::Bandnet, FieldHead::BandPowers { .. }) => true,
            (FieldChoice::Occnet, FieldHead::Occupancy) => true,
            _ => false,
        };
        if !ok {
            bail!(
                "{} holds a {:?} head, which does not match --field {:?}",
                path.display(),
                net.head(),
                self.field
            );
        }
        Ok(Arc::new(net))
    }

    /// Binds the chosen backend to one object. `cloud_seed` only matters for
    /// learned fields, whose binding cloud is sampled.
    fn bind(&self, geom: &Arc<Geometry>, cloud_seed: u64) -> Result<DescriptorField> {
        match self.field {
            FieldChoice::Scf => {
                let accel = Arc::new(RayAccelerator::build(Arc::clone(geom))?);
                Ok(DescriptorField::scf(accel, self.scf_config()))
            }
            FieldChoice::Bandnet | FieldChoice::Occnet => {
                let net = self.load_net()?;
                let cloud = sample_surface(geom, self.cloud_size, cloud_seed)?;
                Ok(DescriptorField::learned(net, &cloud))
            }
        }
    }
}

#[derive(Args)]
struct ScfArgs {
    /// Mesh to describe (OBJ or PLY).
    object: PathBuf,
    /// Query point as x,y,z.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    point: Point3,
    #[arg(long, default_value_t = ScfConfig::default().order)]
    order: usize,
    #[arg(long, default_value_t = ScfConfig::default().dir_count)]
    dirs: usize,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IbsArgs {
    /// First mesh (distances d_A).
    object_a: PathBuf,
    /// Second mesh (distances d_B).
    object_b: PathBuf,
    /// Grid vertices per axis.
    #[arg(long, default_value_t = IbsConfig::default().grid_res)]
    grid: usize,
    /// Relative equidistance tolerance for refinement.
    #[arg(long, default_value_t = IbsConfig::default().refine_tol)]
    tol: f64,
    /// Also draw this many importance-weighted samples.
    #[arg(long)]
    sample: Option<usize>,
    /// Dump the surface points (or the sample, if requested) as PLY.
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFieldArgs {
    /// Directory of OBJ/PLY meshes to train on.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    data: Option<PathBuf>,
    /// Generate this many procedural objects instead of loading --data.
    #[arg(long)]
    generate: Option<usize>,
    /// Categories for --generate, comma separated.
    #[arg(long, default_value = "mug,bowl,bottle", value_delimiter = ',')]
    categories: Vec<Category>,
    /// What the network predicts.
    #[arg(long, value_enum, default_value = "band")]
    head: HeadChoice,
    /// Band order for the band head.
    #[arg(long, default_value_t = ScfConfig::default().order)]
    order: usize,
    /// Ray directions per analytic label.
    #[arg(long, default_value_t = 512)]
    dirs: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().val_fraction)]
    val_fraction: f64,
    /// Surface samples per object cloud.
    #[arg(long, default_value_t = DataConfig::default().cloud_size)]
    cloud_size: usize,
    /// Labeled queries per object.
    #[arg(long, default_value_t = DataConfig::default().queries_per_object)]
    queries: usize,
    /// Where to write the trained weights.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum HeadChoice {
    /// Regress analytic band powers.
    Band,
    /// Classify inside/outside occupancy.
    Occupancy,
}

#[derive(Args)]
struct MakeTemplateArgs {
    /// Anchor mesh in its model frame (the object being posed).
    #[arg(long)]
    anchor: PathBuf,
    /// JSON manifest: an array of {"scene": path, "anchor_pose": pose?}.
    /// Scene paths resolve relative to the manifest; a missing pose means
    /// the anchor was demonstrated at identity.
    #[arg(long)]
    demos: PathBuf,
    #[command(flatten)]
    field: FieldOpts,
    /// Bisector grid vertices per axis.
    #[arg(long, default_value_t = IbsConfig::default().grid_res)]
    grid: usize,
    /// Points importance-sampled from each demonstration.
    #[arg(long, default_value_t = TemplateConfig::default().samples_per_demo)]
    samples: usize,
    /// Final template size.
    #[arg(long, default_value_t = TemplateConfig::default().template_size)]
    size: usize,
    /// Where to write the template JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImitateArgs {
    /// Template JSON produced by make-template.
    #[arg(long)]
    template: PathBuf,
    /// Scene mesh to imitate the interaction on.
    #[arg(long)]
    scene: PathBuf,
    #[command(flatten)]
    field: FieldOpts,
    /// Optimizer config JSON; explicit flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    excess_weight: Option<f64>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    /// Object carrying the reference query.
    object_a: PathBuf,
    /// Object whose surroundings are scored.
    object_b: PathBuf,
    /// Reference point on/near object A, as x,y,z.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    point: Point3,
    #[command(flatten)]
    field: FieldOpts,
    /// Lattice points per axis.
    #[arg(long, default_value_t = 32)]
    res: usize,
    /// Where to write the colored point cloud.
    #[arg(long, default_value = "heatmap.ply")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite configuration JSON.
    #[arg(long)]
    suite: PathBuf,
    /// Directory for report.json and report.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenShapesArgs {
    /// What to generate: a category, "all" of them, or a fixed anchor.
    #[arg(long)]
    kind: ShapeKind,
    /// Instances per category.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Output directory for the OBJ files.
    #[arg(long)]
    out: PathBuf,
    /// Uniform scale on category instances.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ShapeKind {
    Mug,
    Bowl,
    Bottle,
    /// Every category, --count of each.
    All,
    /// The fixed two-finger anchor used by the procedural grasps.
    Gripper,
    /// The fixed wall-hook fixture.
    Rack,
}

#[derive(Clone, Copy, Debug)]
struct Point3(Pt3);

fn parse_point(s: &str) -> Result<Point3, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected x,y,z, got {s:?}"));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad coordinate {part:?}: {e}"))?;
    }
    Ok(Point3(Pt3::new(v[0], v[1], v[2])))
}

/// Entry point for the binary.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors and 0 for --help/--version.
        Err(err) => err.exit(),
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

struct Ctx {
    seed: u64,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting --threads")?;
    }
    let explicit_seed = cli.seed;
    let seed = explicit_seed.unwrap_or_else(rand::random);
    let ctx = Ctx { seed, quiet: cli.quiet };
    ctx.note(format!(
        "seed {seed}{}",
        if explicit_seed.is_some() { "" } else { " (drawn; pass --seed to reproduce)" }
    ));
    match cli.cmd {
        Cmd::Scf(args) => cmd_scf(&ctx, args),
        Cmd::Ibs(args) => cmd_ibs(&ctx, args),
        Cmd::TrainField(args) => cmd_train_field(&ctx, args),
        Cmd::MakeTemplate(args) => cmd_make_template(&ctx, args),
        Cmd::Imitate(args) => cmd_imitate(&ctx, args),
        Cmd::Heatmap(args) => cmd_heatmap(&ctx, args),
        Cmd::Bench(args) => cmd_bench(&ctx, args, explicit_seed),
        Cmd::GenShapes(args) => cmd_gen_shapes(&ctx, args),
    }
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    match out {
        Some(path) => std::fs::write(path, json)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn load_mesh(path: &Path) -> Result<Arc<Geometry>> {
    let geom = load_geometry(path, None, None)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(Arc::new(geom))
}

fn cmd_scf(ctx: &Ctx, args: ScfArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        object: &'a Path,
        point: [f64; 3],
        order: usize,
        dir_count: usize,
        /// How far the query sat outside the field domain before clamping.
        excess: f64,
        descriptor: Vec<f64>,
    }
    let geom = load_mesh(&args.object)?;
    let accel = Arc::new(RayAccelerator::build(geom)?);
    let config =
        ScfConfig { order: args.order, dir_count: args.dirs, ..ScfConfig::default() };
    let field = DescriptorField::scf(accel, config);
    let clamped = field.clamp(args.point.0);
    let descriptor = field.descriptor(clamped.point)?;
    emit(
        args.out.as_deref(),
        &Output {
            seed: ctx.seed,
            object: &args.object,
            point: args.point.0.coords.into(),
            order: args.order,
            dir_count: args.dirs,
            excess: clamped.excess,
            descriptor,
        },
    )
}

fn cmd_ibs(ctx: &Ctx, args: IbsArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        object_a: &'a Path,
        object_b: &'a Path,
        grid: usize,
        surface_points: usize,
        sampled_points: Option<usize>,
        ply: Option<&'a Path>,
    }
    let accel_a = Arc::new(RayAccelerator::build(load_mesh(&args.object_a)?)?);
    let accel_b = Arc::new(RayAccelerator::build(load_mesh(&args.object_b)?)?);
    let cfg = IbsConfig { grid_res: args.grid, refine_tol: args.tol };
    let surface = compute_ibs(&accel_a, &accel_b, &cfg)?;
    ctx.note(format!("bisector surface: {} points", surface.points.len()));
    let sample = args.sample.map(|n| surface.sample(n, ctx.seed));
    if let Some(ply) = &args.ply {
        let points: &[Pt3] = match &sample {
            Some(set) => &set.points,
            None => &surface.points,
        };
        crate::geometry::save_ply(
            ply,
            &crate::geometry::PlyPayload::cloud(points),
            crate::geometry::PlyEncoding::BinaryLittleEndian,
        )?;
        ctx.note(format!("wrote {}", ply.display()));
    }
    emit(
        args.out.as_deref(),
        &Output {
            seed: ctx.seed,
            object_a: &args.object_a,
            object_b: &args.object_b,
            grid: args.grid,
            surface_points: surface.points.len(),
            sampled_points: sample.as_ref().map(|s| s.points.len()),
            ply: args.ply.as_deref(),
        },
    )
}

fn corpus_from_dir(dir: &Path) -> Result<Vec<Arc<Geometry>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("obj") | Some("ply")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .obj or .ply files in {}", dir.display());
    }
    paths.iter().map(|p| load_mesh(p)).collect()
}

fn corpus_generated(ctx: &Ctx, count: usize, categories: &[Category]) -> Result<Vec<Arc<Geometry>>> {
    if categories.is_empty() {
        bail!("--categories must name at least one category");
    }
    let grip = GripperParams::default();
    (0..count)
        .map(|i| {
            let category = categories[i % categories.len()];
            let seed = derive_seed_tagged(ctx.seed, "train-corpus", i as u64);
            let inst = generate_instance(category, seed, &grip)?;
            Ok(inst.geometry)
        })
        .collect()
}

fn cmd_train_field(ctx: &Ctx, args: TrainFieldArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        head: &'a str,
        objects: usize,
        out: &'a Path,
        report: TrainReport,
    }
    let corpus = match (&args.data, args.generate) {
        (Some(dir), None) => corpus_from_dir(dir)?,
        (None, Some(n)) => corpus_generated(ctx, n, &args.categories)?,
        _ => bail!("pass exactly one of --data or --generate"),
    };
    ctx.note(format!("corpus: {} objects", corpus.len()));

    let data_cfg = DataConfig {
        cloud_size: args.cloud_size,
        queries_per_object: args.queries,
        scf: ScfConfig { order: args.order, dir_count: args.dirs, ..ScfConfig::default() },
        seed: derive_seed_tagged(ctx.seed, "train-data", 0),
    };
    let (set, head) = match args.head {
        HeadChoice::Band => (
            generate_training_set(&corpus, &data_cfg)?,
            FieldHead::BandPowers { order: args.order },
        ),
        HeadChoice::Occupancy => {
            (generate_occupancy_set(&corpus, &data_cfg)?, FieldHead::Occupancy)
        }
    };
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        batch_size: args.batch,
        val_fraction: args.val_fraction,
        seed: derive_seed_tagged(ctx.seed, "train-run", 0),
        ..TrainConfig::default()
    };
    let mut net = FieldNet::new(head);
    net.init(&mut crate::rng::rng_from_seed(derive_seed_tagged(ctx.seed, "net-init", 0)));
    let report = train(&mut net, &set, &train_cfg)?;
    ctx.note(format!(
        "trained {} epochs in {:.1}s; mean R2 {:.3}",
        args.epochs, report.seconds, report.mean_r2
    ));

    let mut w = BufWriter::new(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    net.save(&mut w)?;
    emit(
        None,
        &Output {
            seed: ctx.seed,
            head: match args.head {
                HeadChoice::Band => "band",
                HeadChoice::Occupancy => "occupancy",
            },
            objects: corpus.len(),
            out: &args.out,
            report,
        },
    )
}

#[derive(serde::Deserialize)]
struct DemoSpec {
    scene: PathBuf,
    /// Anchor pose demonstrated against this scene; identity if omitted.
    #[serde(default)]
    anchor_pose: Option<RigidTransform>,
}

fn load_demo_manifest(path: &Path) -> Result<Vec<(PathBuf, RigidTransform)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let specs: Vec<DemoSpec> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    if specs.is_empty() {
        bail!("{} lists no demonstrations", path.display());
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(specs
        .into_iter()
        .map(|s| {
            let scene =
                if s.scene.is_absolute() { s.scene } else { base.join(&s.scene) };
            (scene, s.anchor_pose.unwrap_or_else(RigidTransform::identity))
        })
        .collect())
}

fn cmd_make_template(ctx: &Ctx, args: MakeTemplateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        demos: usize,
        points: usize,
        descriptor_len: usize,
        field_fingerprint: &'a str,
        out: &'a Path,
    }
    let anchor = load_mesh(&args.anchor)?;
    let manifest = load_demo_manifest(&args.demos)?;
    let mut demos = Vec::with_capacity(manifest.len());
    for (i, (scene_path, anchor_pose)) in manifest.iter().enumerate() {
        let scene = load_mesh(scene_path)?;
        let field =
            args.field.bind(&scene, derive_seed_tagged(ctx.seed, "demo-cloud", i as u64))?;
        demos.push(Demonstration {
            scene,
            field,
            anchor: Arc::clone(&anchor),
            anchor_pose: *anchor_pose,
        });
    }
    let cfg = TemplateConfig {
        ibs: IbsConfig { grid_res: args.grid, ..IbsConfig::default() },
        samples_per_demo: args.samples,
        template_size: args.size,
        seed: ctx.seed,
    };
    let template = build_template(&demos, &cfg)?;
    template.save(&args.out)?;
    ctx.note(format!("wrote {}", args.out.display()));
    emit(
        None,
        &Output {
            seed: ctx.seed,
            demos: demos.len(),
            points: template.len(),
            descriptor_len: template.descriptor_len,
            field_fingerprint: &template.field_fingerprint,
            out: &args.out,
        },
    )
}

fn cmd_imitate(ctx: &Ctx, args: ImitateArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        template: &'a Path,
        scene: &'a Path,
        result: PoseResult,
    }
    let template = InteractionTemplate::load(&args.template)?;
    let scene = load_mesh(&args.scene)?;
    let field =
        args.field.bind(&scene, derive_seed_tagged(ctx.seed, "target-cloud", 0))?;

    // Config file first, explicit flags on top, run seed always.
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ImitateConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ImitateConfig::default(),
    };
    if let Some(v) = args.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = args.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.excess_weight {
        cfg.excess_weight = v;
    }
    cfg.seed = ctx.seed;

    let result = imitate(&template, &field, &cfg)?;
    ctx.note(format!(
        "restart {} of {} won: residual {:.6}, {} iters, converged: {}",
        result.restart, cfg.restarts, result.residual, result.iters, result.converged
    ));
    emit(
        args.out.as_deref(),
        &Output { seed: ctx.seed, template: &args.template, scene: &args.scene, result },
    )
}

fn cmd_heatmap(ctx: &Ctx, args: HeatmapArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output<'a> {
        seed: u64,
        grid_points: usize,
        min_point: [f64; 3],
        min_value: f64,
        out: &'a Path,
    }
    let object_a = load_mesh(&args.object_a)?;
    let object_b = load_mesh(&args.object_b)?;
    let field_a =
        args.field.bind(&object_a, derive_seed_tagged(ctx.seed, "heatmap-cloud", 0))?;
    let field_b =
        args.field.bind(&object_b, derive_seed_tagged(ctx.seed, "heatmap-cloud", 1))?;
    let grid = GridSpec::covering(&field_b, args.res);
    let map = export_heatmap(&field_a, args.point.0, &field_b, &grid)?;
    map.save_ply(&args.out)?;
    ctx.note(format!("wrote {}", args.out.display()));
    emit(
        None,
        &Output {
            seed: ctx.seed,
            grid_points: map.points.len(),
            min_point: map.min_point().coords.into(),
            min_value: map.min_value(),
            out: &args.out,
        },
    )
}

fn cmd_bench(ctx: &Ctx, args: BenchArgs, explicit_seed: Option<u64>) -> Result<()> {
    #[derive(Serialize)]
    struct Output {
        seed: u64,
        trials: usize,
        seconds_total: f64,
        report_json: PathBuf,
        report_csv: PathBuf,
        summaries: usize,
    }
    let text = std::fs::read_to_string(&args.suite)
        .with_context(|| format!("reading {}", args.suite.display()))?;
    let mut suite: BenchSuite = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.suite.display()))?;
    // The suite file owns reproducibility; an explicit --seed overrides it.
    if let Some(seed) = explicit_seed {
        suite.seed = seed;
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let report = run_benchmark(&suite)?;
    let json_path = args.out.join("report.json");
    let csv_path = args.out.join("report.csv");
    report.save(&json_path, &csv_path)?;
    ctx.note(format!(
        "{} trials in {:.1}s -> {} and {}",
        report.rows.len(),
        report.seconds_total,
        json_path.display(),
        csv_path.display()
    ));
    emit(
        None,
        &Output {
            seed: suite.seed,
            trials: report.rows.len(),
            seconds_total: report.seconds_total,
            report_json: json_path,
            report_csv: csv_path,
            summaries: report.summaries.len(),
        },
    )
}

fn cmd_gen_shapes(ctx: &Ctx, args: GenShapesArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Output {
        seed: u64,
        files: Vec<PathBuf>,
        /// Demo manifest written alongside category instances, ready for
        /// make-template.
        manifest: Option<PathBuf>,
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut files = Vec::new();
    let mut demo_specs = Vec::new();

    let categories: &[Category] = match args.kind {
        ShapeKind::Mug => &[Category::Mug],
        ShapeKind::Bowl => &[Category::Bowl],
        ShapeKind::Bottle => &[Category::Bottle],
        ShapeKind::All => &Category::ALL,
        ShapeKind::Gripper => {
            let path = args.out.join("gripper.obj");
            save_obj(&path, &gripper(&GripperParams::default())?)?;
            files.push(path);
            return finish(ctx, files, None);
        }
        ShapeKind::Rack => {
            let path = args.out.join("rack.obj");
            save_obj(&path, &rack(&RackParams::default())?)?;
            files.push(path);
            return finish(ctx, files, None);
        }
    };

    let grip = GripperParams::default();
    for category in categories {
        for i in 0..args.count {
            let seed = derive_seed_tagged(ctx.seed, "gen-shape", i as u64 ^ ((*category as u64) << 32));
            let inst = crate::harness::shapes::generate_instance_scaled(
                *category, seed, &grip, args.scale,
            )?;
            let stem = format!("{}_{i:03}", category.as_str());
            let mesh_path = args.out.join(format!("{stem}.obj"));
            save_obj(&mesh_path, &inst.geometry)?;
            // Sidecar pose, so the file pair feeds straight into a template.
            let pose_path = args.out.join(format!("{stem}.grasp.json"));
            std::fs::write(&pose_path, serde_json::to_string_pretty(&inst.grasp)?)?;
            demo_specs.push(serde_json::json!({
                "scene": format!("{stem}.obj"),
                "anchor_pose": inst.grasp,
            }));
            files.push(mesh_path);
            files.push(pose_path);
        }
    }
    let manifest = args.out.join("demos.json");
    std::fs::write(&manifest, serde_json::to_string_pretty(&demo_specs)?)?;

    return finish(ctx, files, Some(manifest));

    fn finish(ctx: &Ctx, files: Vec<PathBuf>, manifest: Option<PathBuf>) -> Result<()> {
        for f in &files {
            ctx.note(format!("wrote {}", f.display()));
        }
        emit(None, &Output { seed: ctx.seed, files, manifest })
    }
}

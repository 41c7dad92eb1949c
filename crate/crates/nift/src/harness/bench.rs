//! End-to-end benchmark: procedurally generated demonstrations, held-out
//! target instances placed at random poses, a matrix of imitation methods,
//! and success-rate reporting.
//!
//! One suite run is reproducible from its seed alone. Every random stream is
//! derived from `BenchSuite::seed` with a purpose tag, and streams are keyed
//! by category/regime/trial identity rather than list position, so reordering
//! the suite's lists never changes a trial's outcome. Timing lives only in
//! the JSON report; the CSV is byte-identical across same-seed runs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cpd::{rigid_cpd, CpdConfig, CpdError};
use super::metrics::{penetration_depth, pose_deviation, Symmetry};
use super::shapes::{
    generate_instance, generate_instance_scaled, gripper, Category, GripperParams, ShapeError,
    ShapeInstance,
};
use crate::field::{
    generate_occupancy_set, generate_training_set, train, DataConfig, DescriptorField,
    FieldError, FieldHead, FieldNet, TrainConfig, TrainReport,
};
use crate::geometry::{
    haar_random_rotation, rotation_from_scaled_axis, sample_surface, save_ply, Geometry,
    GeometryError, PlyEncoding, PlyPayload, Pt3, RayAccelerator, RigidTransform, Vec3,
};
use crate::imitate::{imitate, ImitateConfig, ImitateError};
use crate::rng::{derive_seed_tagged, rng_from_seed};
use crate::scf::ScfConfig;
use crate::template::{
    build_template, build_template_from_points, Demonstration, InteractionTemplate,
    TemplateConfig, TemplateError,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Imitate(#[from] ImitateError),
    #[error(transparent)]
    Cpd(#[from] CpdError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a method reads its template query points from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointScheme {
    /// Points importance-sampled from the interaction bisector surface.
    Ibs,
    /// Basis point set: one fixed random ball of points around the anchor,
    /// independent of the demonstrated objects.
    Bps,
}

/// Which descriptor field labels and matches the template points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// Ray-cast spherical distance band powers.
    Scf,
    /// Trained regressor of those band powers; descriptor is its
    /// concatenated decoder activations.
    BandNet,
    /// Trained occupancy classifier; same concatenated-activation readout.
    OccNet,
}

impl FieldKind {
    fn as_str(&self) -> &'static str {
        match self {
            FieldKind::Scf => "scf",
            FieldKind::BandNet => "bandnet",
            FieldKind::OccNet => "occnet",
        }
    }
}

/// One column of the benchmark matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Template { scheme: PointScheme, field: FieldKind },
    /// Rigid point-cloud registration from the first demonstration object to
    /// the target, carrying the demonstrated grasp along.
    Cpd,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Template { scheme: PointScheme::Ibs, field: FieldKind::Scf },
        Method::Template { scheme: PointScheme::Ibs, field: FieldKind::BandNet },
        Method::Template { scheme: PointScheme::Ibs, field: FieldKind::OccNet },
        Method::Template { scheme: PointScheme::Bps, field: FieldKind::Scf },
        Method::Template { scheme: PointScheme::Bps, field: FieldKind::BandNet },
        Method::Template { scheme: PointScheme::Bps, field: FieldKind::OccNet },
        Method::Cpd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Template { scheme: PointScheme::Ibs, field: FieldKind::Scf } => "ibs+scf",
            Method::Template { scheme: PointScheme::Ibs, field: FieldKind::BandNet } => {
                "ibs+bandnet"
            }
            Method::Template { scheme: PointScheme::Ibs, field: FieldKind::OccNet } => {
                "ibs+occnet"
            }
            Method::Template { scheme: PointScheme::Bps, field: FieldKind::Scf } => "bps+scf",
            Method::Template { scheme: PointScheme::Bps, field: FieldKind::BandNet } => {
                "bps+bandnet"
            }
            Method::Template { scheme: PointScheme::Bps, field: FieldKind::OccNet } => {
                "bps+occnet"
            }
            Method::Cpd => "cpd",
        }
    }

    /// Stable identity for seed derivation; independent of list order.
    fn code(&self) -> u64 {
        Method::ALL.iter().position(|m| m == self).expect("method in ALL") as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?} (ibs|bps + scf|bandnet|occnet, or cpd)"))
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How targets are posed relative to the upright demonstrations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Yaw about the vertical axis plus an in-plane offset, original size.
    Upright,
    /// Uniformly random rotation, offset in a ball, uniform rescale.
    Arbitrary,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Upright => "upright",
            Regime::Arbitrary => "arbitrary",
        }
    }

    fn code(&self) -> u64 {
        match self {
            Regime::Upright => 1,
            Regime::Arbitrary => 2,
        }
    }
}

/// Placement label for the self-imitation control rows.
const SELF_PLACEMENT: &str = "self";
const SELF_CODE: u64 = 9;

/// Scale range of the arbitrary regime and of the training corpus.
const SCALE_RANGE: std::ops::RangeInclusive<f64> = 0.8..=1.2;
/// In-plane offset half-width (upright) and offset ball radius (arbitrary).
const OFFSET_EXTENT: f64 = 0.6;

/// A trial succeeds only if the gripper barely interpenetrates the object
/// and its pose sits close to the demonstrated one, symmetry factored out.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SuccessThresholds {
    /// Maximum penetration depth as a fraction of the target diameter.
    pub max_penetration_frac: f64,
    pub max_rotation_deg: f64,
    /// Maximum translation error as a fraction of the target diameter.
    pub max_translation_frac: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self { max_penetration_frac: 0.02, max_rotation_deg: 15.0, max_translation_frac: 0.10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSuite {
    pub categories: Vec<Category>,
    pub methods: Vec<Method>,
    pub regimes: Vec<Regime>,
    pub demos_per_category: usize,
    pub trials_per_category: usize,
    /// Adds one control trial per category and method: the first
    /// demonstration object itself, unmoved. Methods should be near-perfect
    /// here; a miss points at the pipeline, not the generalization gap.
    pub self_control: bool,
    pub seed: u64,
    pub gripper: GripperParams,
    /// Field settings shared by the analytic descriptors on demonstrations
    /// and targets (must match for templates to transfer).
    pub scf: ScfConfig,
    pub template: TemplateConfig,
    pub imitate: ImitateConfig,
    /// Training-set generation for the learned fields.
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Corpus objects generated per category to train the learned fields;
    /// drawn from seed streams disjoint from demos and targets.
    pub train_objects_per_category: usize,
    pub cpd: CpdConfig,
    pub cpd_cloud_size: usize,
    /// Anchor surface samples used to probe interpenetration.
    pub penetration_samples: usize,
    pub thresholds: SuccessThresholds,
    /// If set, every failed trial with a recovered pose dumps a colored
    /// point cloud here (target gray, demonstrated pose green, recovered
    /// red) for visual post-mortems.
    pub failure_dump_dir: Option<PathBuf>,
}

impl Default for BenchSuite {
    fn default() -> Self {
        Self {
            categories: Category::ALL.to_vec(),
            methods: Method::ALL.to_vec(),
            regimes: vec![Regime::Upright, Regime::Arbitrary],
            demos_per_category: 10,
            trials_per_category: 20,
            self_control: true,
            seed: 0,
            gripper: GripperParams::default(),
            scf: ScfConfig { dir_count: 512, ..ScfConfig::default() },
            template: TemplateConfig {
                ibs: crate::ibs::IbsConfig { grid_res: 48, ..Default::default() },
                ..TemplateConfig::default()
            },
            imitate: ImitateConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            train_objects_per_category: 34,
            cpd: CpdConfig::default(),
            cpd_cloud_size: 192,
            penetration_samples: 800,
            thresholds: SuccessThresholds::default(),
            failure_dump_dir: None,
        }
    }
}

impl BenchSuite {
    fn validate(&self) -> Result<(), BenchError> {
        let mut seen_cat = Vec::new();
        for c in &self.categories {
            if seen_cat.contains(c) {
                return Err(BenchError::Config(format!("duplicate category {}", c.as_str())));
            }
            seen_cat.push(*c);
        }
        let mut seen_m = Vec::new();
        for m in &self.methods {
            if seen_m.contains(m) {
                return Err(BenchError::Config(format!("duplicate method {m}")));
            }
            seen_m.push(*m);
        }
        let mut seen_r = Vec::new();
        for r in &self.regimes {
            if seen_r.contains(r) {
                return Err(BenchError::Config(format!("duplicate regime {}", r.as_str())));
            }
            seen_r.push(*r);
        }
        if self.trials_per_category > 9_999 {
            return Err(BenchError::Config("trials_per_category above 9999".into()));
        }
        let t = &self.thresholds;
        if !(t.max_penetration_frac > 0.0 && t.max_rotation_deg > 0.0 && t.max_translation_frac > 0.0)
        {
            return Err(BenchError::Config("success thresholds must be positive".into()));
        }
        Ok(())
    }

    fn has_rows(&self) -> bool {
        !self.methods.is_empty()
            && !self.categories.is_empty()
            && (self.self_control || (self.trials_per_category > 0 && !self.regimes.is_empty()))
    }

    /// Distinct field kinds the suite's template methods need.
    fn field_kinds(&self) -> Vec<FieldKind> {
        let mut kinds = Vec::new();
        for m in &self.methods {
            if let Method::Template { field, .. } = m {
                if !kinds.contains(field) {
                    kinds.push(*field);
                }
            }
        }
        kinds
    }

    fn schemes_with(&self, kind: FieldKind) -> Vec<PointScheme> {
        let mut schemes = Vec::new();
        for m in &self.methods {
            if let Method::Template { scheme, field } = m {
                if *field == kind && !schemes.contains(scheme) {
                    schemes.push(*scheme);
                }
            }
        }
        schemes
    }

    fn wants_cpd(&self) -> bool {
        self.methods.contains(&Method::Cpd)
    }
}

/// One (target, method) evaluation. Angle and translation errors are
/// symmetry-reduced; fractions are relative to the target diameter. Rows
/// where the method itself failed carry NaN metrics and the error text.
#[derive(Clone, Debug, Serialize)]
pub struct TrialRow {
    pub category: Category,
    /// "upright", "arbitrary", or "self".
    pub placement: String,
    pub method: Method,
    pub trial: usize,
    pub instance_seed: u64,
    pub scale: f64,
    pub diameter: f64,
    pub penetration: f64,
    pub penetration_frac: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    pub translation_frac: f64,
    /// Imitation objective at the recovered pose; RMS registration residual
    /// for cpd rows.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub penetration_ok: bool,
    pub pose_ok: bool,
    pub success: bool,
    /// Wall-clock time; reported in JSON only, never in the CSV.
    pub seconds: f64,
    pub error: Option<String>,
}

/// Aggregates over one (category, placement, method) cell; `category` is
/// "all" for the cross-category rollup.
#[derive(Clone, Debug, Serialize)]
pub struct MethodSummary {
    pub category: String,
    pub placement: String,
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub penetration_successes: usize,
    pub penetration_success_rate: f64,
    /// Means over rows with finite metrics (method-error rows excluded).
    pub mean_penetration_frac: f64,
    pub mean_rotation_deg: f64,
    pub mean_translation_frac: f64,
    pub mean_seconds: f64,
    pub errors: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub suite: BenchSuite,
    pub band_training: Option<TrainReport>,
    pub occupancy_training: Option<TrainReport>,
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<MethodSummary>,
    pub seconds_total: f64,
}

const CSV_HEADER: &str = "category,placement,method,trial,instance_seed,scale,diameter,\
penetration,penetration_frac,rotation_deg,translation,translation_frac,residual,iters,\
converged,penetration_ok,pose_ok,success,error\n";

impl BenchReport {
    /// Per-trial rows as CSV. Deterministic for a given suite: no timing
    /// columns, floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 + 160 * self.rows.len());
        out.push_str(CSV_HEADER);
        for r in &self.rows {
            let error = match &r.error {
                Some(e) => e.replace([',', '\n'], ";"),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.category.as_str(),
                r.placement,
                r.method.as_str(),
                r.trial,
                r.instance_seed,
                r.scale,
                r.diameter,
                r.penetration,
                r.penetration_frac,
                r.rotation_deg,
                r.translation,
                r.translation_frac,
                r.residual,
                r.iters,
                r.converged,
                r.penetration_ok,
                r.pose_ok,
                r.success,
                error,
            ));
        }
        out
    }

    pub fn to_json_string(&self) -> Result<String, BenchError> {
        serde_json::to_string_pretty(self)
            .map_err(|e| BenchError::Config(format!("report serialization: {e}")))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<(), BenchError> {
        std::fs::write(json_path, self.to_json_string()?)?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }

    pub fn summary_for(
        &self,
        category: &str,
        placement: &str,
        method: Method,
    ) -> Option<&MethodSummary> {
        self.summaries
            .iter()
            .find(|s| s.category == category && s.placement == placement && s.method == method)
    }
}

/// The fixed random query ball for the basis-point-set ablation: `count`
/// points uniform in the anchor's bounding sphere, anchor model frame. The
/// set depends only on the seed and the anchor, never on the demonstrated
/// scenes.
pub fn bps_points(center: Pt3, radius: f64, count: usize, seed: u64) -> Vec<Pt3> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| loop {
            let v = Vec3::new(
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
            );
            if v.norm_squared() <= 1.0 {
                break center + v * radius;
            }
        })
        .collect()
}

fn category_code(c: Category) -> u64 {
    match c {
        Category::Mug => 0,
        Category::Bowl => 1,
        Category::Bottle => 2,
    }
}

/// Stream index for a (placement, category, trial) cell.
fn stream3(placement_code: u64, cat: u64, trial: u64) -> u64 {
    placement_code * 1_000_000 + cat * 10_000 + trial
}

struct TrainedNets {
    band: Option<Arc<FieldNet>>,
    occupancy: Option<Arc<FieldNet>>,
}

impl TrainedNets {
    fn get(&self, kind: FieldKind) -> Result<Arc<FieldNet>, BenchError> {
        let net = match kind {
            FieldKind::BandNet => &self.band,
            FieldKind::OccNet => &self.occupancy,
            FieldKind::Scf => {
                return Err(BenchError::Config("analytic field has no network".into()))
            }
        };
        net.clone().ok_or_else(|| {
            BenchError::Config(format!("field {} was not trained", kind.as_str()))
        })
    }
}

fn training_corpus(suite: &BenchSuite) -> Result<Vec<Arc<Geometry>>, BenchError> {
    let mut geoms = Vec::with_capacity(suite.categories.len() * suite.train_objects_per_category);
    for &category in &suite.categories {
        let cat = category_code(category);
        for i in 0..suite.train_objects_per_category {
            let stream = cat * 10_000 + i as u64;
            let seed = derive_seed_tagged(suite.seed, "train-corpus", stream);
            let mut srng = rng_from_seed(derive_seed_tagged(suite.seed, "train-scale", stream));
            let scale = srng.gen_range(SCALE_RANGE);
            let inst = generate_instance_scaled(category, seed, &suite.gripper, scale)?;
            geoms.push(inst.geometry);
        }
    }
    Ok(geoms)
}

fn train_nets(
    suite: &BenchSuite,
) -> Result<(TrainedNets, Option<TrainReport>, Option<TrainReport>), BenchError> {
    let kinds = suite.field_kinds();
    let needs_band = kinds.contains(&FieldKind::BandNet);
    let needs_occ = kinds.contains(&FieldKind::OccNet);
    let mut nets = TrainedNets { band: None, occupancy: None };
    if !needs_band && !needs_occ {
        return Ok((nets, None, None));
    }
    let geoms = training_corpus(suite)?;
    if geoms.is_empty() {
        return Err(BenchError::Config(
            "learned methods need train_objects_per_category > 0".into(),
        ));
    }
    let data = DataConfig { seed: derive_seed_tagged(suite.seed, "train-data", 0), ..suite.data };

    let mut band_report = None;
    if needs_band {
        let set = generate_training_set(&geoms, &data)?;
        let mut net = FieldNet::new(FieldHead::BandPowers { order: suite.data.scf.order });
        net.init(&mut rng_from_seed(derive_seed_tagged(suite.seed, "band-init", 0)));
        let cfg = TrainConfig { seed: derive_seed_tagged(suite.seed, "band-train", 0), ..suite.train };
        band_report = Some(train(&mut net, &set, &cfg)?);
        nets.band = Some(Arc::new(net));
    }
    let mut occ_report = None;
    if needs_occ {
        let set = generate_occupancy_set(&geoms, &data)?;
        let mut net = FieldNet::new(FieldHead::Occupancy);
        net.init(&mut rng_from_seed(derive_seed_tagged(suite.seed, "occ-init", 0)));
        let cfg = TrainConfig { seed: derive_seed_tagged(suite.seed, "occ-train", 0), ..suite.train };
        occ_report = Some(train(&mut net, &set, &cfg)?);
        nets.occupancy = Some(Arc::new(net));
    }
    Ok((nets, band_report, occ_report))
}

/// Binds a descriptor field of the given kind to one object instance.
fn bind_field(
    kind: FieldKind,
    geometry: &Arc<Geometry>,
    accel: Option<&Arc<RayAccelerator>>,
    nets: &TrainedNets,
    suite: &BenchSuite,
    cloud_seed: u64,
) -> Result<DescriptorField, BenchError> {
    match kind {
        FieldKind::Scf => {
            let accel = match accel {
                Some(a) => a.clone(),
                None => Arc::new(RayAccelerator::build(geometry.clone())?),
            };
            Ok(DescriptorField::scf(accel, suite.scf))
        }
        FieldKind::BandNet | FieldKind::OccNet => {
            let net = nets.get(kind)?;
            let cloud = sample_surface(geometry, suite.data.cloud_size, cloud_seed)?;
            Ok(DescriptorField::learned(net, &cloud))
        }
    }
}

/// Per-category state shared by every trial: the demonstration instances,
/// one template per (scheme, field) pair, and the registration source cloud.
struct CategoryContext {
    demos: Vec<ShapeInstance>,
    templates: HashMap<(PointScheme, FieldKind), InteractionTemplate>,
    cpd_source: Option<Vec<Pt3>>,
}

fn build_category_context(
    suite: &BenchSuite,
    category: Category,
    gripper_geom: &Arc<Geometry>,
    gripper_sphere: (Pt3, f64),
    nets: &TrainedNets,
) -> Result<CategoryContext, BenchError> {
    let cat = category_code(category);
    if suite.demos_per_category == 0 {
        return Err(BenchError::Config("demos_per_category must be at least 1".into()));
    }
    let demos: Vec<ShapeInstance> = (0..suite.demos_per_category)
        .map(|i| {
            let seed = derive_seed_tagged(suite.seed, "demo-instance", cat * 1_000 + i as u64);
            generate_instance(category, seed, &suite.gripper)
        })
        .collect::<Result<_, _>>()?;

    let mut templates = HashMap::new();
    for kind in suite.field_kinds() {
        let demo_set: Vec<Demonstration> = demos
            .iter()
            .enumerate()
            .map(|(i, inst)| -> Result<Demonstration, BenchError> {
                let cloud_seed =
                    derive_seed_tagged(suite.seed, "demo-cloud", cat * 1_000 + i as u64);
                Ok(Demonstration {
                    scene: inst.geometry.clone(),
                    field: bind_field(kind, &inst.geometry, None, nets, suite, cloud_seed)?,
                    anchor: gripper_geom.clone(),
                    anchor_pose: inst.grasp,
                })
            })
            .collect::<Result<_, _>>()?;
        for scheme in suite.schemes_with(kind) {
            let scheme_code = match scheme {
                PointScheme::Ibs => 1,
                PointScheme::Bps => 2,
            };
            let field_code = match kind {
                FieldKind::Scf => 1,
                FieldKind::BandNet => 2,
                FieldKind::OccNet => 3,
            };
            let cfg = TemplateConfig {
                seed: derive_seed_tagged(
                    suite.seed,
                    "template",
                    scheme_code * 100 + field_code * 10 + cat,
                ),
                ..suite.template.clone()
            };
            let template = match scheme {
                PointScheme::Ibs => build_template(&demo_set, &cfg)?,
                PointScheme::Bps => {
                    let (center, radius) = gripper_sphere;
                    let points = bps_points(
                        center,
                        radius,
                        cfg.template_size,
                        derive_seed_tagged(suite.seed, "bps", 0),
                    );
                    build_template_from_points(&demo_set, points, &cfg)?
                }
            };
            templates.insert((scheme, kind), template);
        }
    }

    let cpd_source = if suite.wants_cpd() {
        Some(sample_surface(
            &demos[0].geometry,
            suite.cpd_cloud_size,
            derive_seed_tagged(suite.seed, "cpd-source", cat),
        )?)
    } else {
        None
    };

    Ok(CategoryContext { demos, templates, cpd_source })
}

/// A target instance placed in the world, with everything a method needs to
/// attack it and everything scoring needs to judge the result.
struct PlacedTarget {
    category: Category,
    placement: &'static str,
    trial: usize,
    instance_seed: u64,
    scale: f64,
    geometry: Arc<Geometry>,
    accel: Arc<RayAccelerator>,
    diameter: f64,
    gt: RigidTransform,
    symmetry: Symmetry,
    cloud_seed: u64,
    pen_seed: u64,
    /// Base stream for per-method seed derivation.
    stream: u64,
}

fn uniform_ball_vec(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

fn finish_target(
    suite: &BenchSuite,
    inst: &ShapeInstance,
    pose: &RigidTransform,
    placement: &'static str,
    trial: usize,
    instance_seed: u64,
    scale: f64,
    stream: u64,
) -> Result<PlacedTarget, BenchError> {
    let geometry = Arc::new(inst.geometry.transformed(pose));
    let accel = Arc::new(RayAccelerator::build(geometry.clone())?);
    let diameter = accel.diameter();
    Ok(PlacedTarget {
        category: inst.category,
        placement,
        trial,
        instance_seed,
        scale,
        geometry,
        accel,
        diameter,
        gt: pose.compose(&inst.grasp),
        symmetry: inst.symmetry.transformed(pose),
        cloud_seed: derive_seed_tagged(suite.seed, "target-cloud", stream),
        pen_seed: derive_seed_tagged(suite.seed, "penetration", stream),
        stream,
    })
}

fn place_target(
    suite: &BenchSuite,
    category: Category,
    regime: Regime,
    trial: usize,
) -> Result<PlacedTarget, BenchError> {
    let stream = stream3(regime.code(), category_code(category), trial as u64);
    let instance_seed = derive_seed_tagged(suite.seed, "target-instance", stream);
    let mut rng = rng_from_seed(derive_seed_tagged(suite.seed, "placement", stream));
    let (scale, pose) = match regime {
        Regime::Upright => {
            let yaw = rng.gen::<f64>() * std::f64::consts::TAU;
            let x = rng.gen_range(-OFFSET_EXTENT..=OFFSET_EXTENT);
            let y = rng.gen_range(-OFFSET_EXTENT..=OFFSET_EXTENT);
            let rot = rotation_from_scaled_axis(Vec3::new(0.0, 0.0, yaw));
            (1.0, RigidTransform::from_parts_renormalized(rot, Vec3::new(x, y, 0.0)))
        }
        Regime::Arbitrary => {
            let rot = haar_random_rotation(&mut rng);
            let offset = uniform_ball_vec(&mut rng) * OFFSET_EXTENT;
            let scale = rng.gen_range(SCALE_RANGE);
            (scale, RigidTransform::from_parts_renormalized(rot, offset))
        }
    };
    let inst = generate_instance_scaled(category, instance_seed, &suite.gripper, scale)?;
    finish_target(suite, &inst, &pose, regime.as_str(), trial, instance_seed, scale, stream)
}

fn self_target(
    suite: &BenchSuite,
    demo0: &ShapeInstance,
    demo0_seed: u64,
) -> Result<PlacedTarget, BenchError> {
    let stream = stream3(SELF_CODE, category_code(demo0.category), 0);
    finish_target(suite, demo0, &RigidTransform::identity(), SELF_PLACEMENT, 0, demo0_seed, 1.0, stream)
}

fn evaluate_method(
    suite: &BenchSuite,
    method: Method,
    target: &PlacedTarget,
    ctx: &CategoryContext,
    nets: &TrainedNets,
    gripper_geom: &Arc<Geometry>,
) -> Result<TrialRow, BenchError> {
    let started = Instant::now();
    let attempt: Result<(RigidTransform, f64, usize, bool), String> = match method {
        Method::Template { scheme, field } => {
            let template = ctx
                .templates
                .get(&(scheme, field))
                .ok_or_else(|| BenchError::Config(format!("missing template for {method}")))?;
            let bound = bind_field(
                field,
                &target.geometry,
                Some(&target.accel),
                nets,
                suite,
                target.cloud_seed,
            )?;
            let cfg = ImitateConfig {
                seed: derive_seed_tagged(suite.seed, "imitate", target.stream * 16 + method.code()),
                ..suite.imitate.clone()
            };
            match imitate(template, &bound, &cfg) {
                Ok(r) => Ok((r.pose, r.residual, r.iters, r.converged)),
                Err(e) => Err(e.to_string()),
            }
        }
        Method::Cpd => {
            let source = ctx
                .cpd_source
                .as_ref()
                .ok_or_else(|| BenchError::Config("missing registration source cloud".into()))?;
            let target_cloud = sample_surface(
                &target.geometry,
                suite.cpd_cloud_size,
                derive_seed_tagged(suite.seed, "cpd-target", target.stream),
            )?;
            match rigid_cpd(source, &target_cloud, &suite.cpd) {
                Ok(r) => {
                    let pose = r.pose.compose(&ctx.demos[0].grasp);
                    Ok((pose, r.sigma2.sqrt(), r.iters, r.converged))
                }
                Err(e) => Err(e.to_string()),
            }
        }
    };

    let row = match attempt {
        Ok((pose, residual, iters, converged)) => {
            let penetration = penetration_depth(
                gripper_geom,
                &pose,
                &target.accel,
                suite.penetration_samples,
                target.pen_seed,
            )?;
            let deviation = pose_deviation(&pose, &target.gt, &target.symmetry);
            let penetration_frac = penetration / target.diameter;
            let translation_frac = deviation.translation / target.diameter;
            let penetration_ok = penetration_frac <= suite.thresholds.max_penetration_frac;
            let pose_ok = deviation.rotation_deg() <= suite.thresholds.max_rotation_deg
                && translation_frac <= suite.thresholds.max_translation_frac;
            let success = penetration_ok && pose_ok;
            let row = TrialRow {
                category: target.category,
                placement: target.placement.to_string(),
                method,
                trial: target.trial,
                instance_seed: target.instance_seed,
                scale: target.scale,
                diameter: target.diameter,
                penetration,
                penetration_frac,
                rotation_deg: deviation.rotation_deg(),
                translation: deviation.translation,
                translation_frac,
                residual,
                iters,
                converged,
                penetration_ok,
                pose_ok,
                success,
                seconds: started.elapsed().as_secs_f64(),
                error: None,
            };
            if !success {
                if let Some(dir) = &suite.failure_dump_dir {
                    dump_failure(dir, &row, target, gripper_geom, &pose)?;
                }
            }
            row
        }
        Err(message) => TrialRow {
            category: target.category,
            placement: target.placement.to_string(),
            method,
            trial: target.trial,
            instance_seed: target.instance_seed,
            scale: target.scale,
            diameter: target.diameter,
            penetration: f64::NAN,
            penetration_frac: f64::NAN,
            rotation_deg: f64::NAN,
            translation: f64::NAN,
            translation_frac: f64::NAN,
            residual: f64::NAN,
            iters: 0,
            converged: false,
            penetration_ok: false,
            pose_ok: false,
            success: false,
            seconds: started.elapsed().as_secs_f64(),
            error: Some(message),
        },
    };
    Ok(row)
}

/// Writes target (gray), demonstrated pose (green), recovered pose (red) as
/// one colored point cloud.
fn dump_failure(
    dir: &Path,
    row: &TrialRow,
    target: &PlacedTarget,
    gripper_geom: &Geometry,
    recovered: &RigidTransform,
) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    const SCENE: usize = 1500;
    const ANCHOR: usize = 700;
    let mut points = sample_surface(&target.geometry, SCENE, 11)?;
    points.extend(sample_surface(&gripper_geom.transformed(&target.gt), ANCHOR, 12)?);
    points.extend(sample_surface(&gripper_geom.transformed(recovered), ANCHOR, 13)?);
    let mut colors = vec![[168u8, 168, 168]; SCENE];
    colors.extend(std::iter::repeat([64u8, 192, 64]).take(ANCHOR));
    colors.extend(std::iter::repeat([208u8, 64, 64]).take(ANCHOR));
    let name = format!(
        "{}_{}_{}_t{:03}.ply",
        row.category.as_str(),
        row.placement,
        row.method.as_str(),
        row.trial
    );
    save_ply(
        dir.join(name),
        &PlyPayload { points: &points, faces: &[], colors: Some(&colors), scalars: &[] },
        PlyEncoding::BinaryLittleEndian,
    )?;
    Ok(())
}

fn mean_finite(vals: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in vals {
        if v.is_finite() {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn summarize(rows: &[TrialRow], multi_category: bool) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(String, String, String), Vec<&TrialRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.category.as_str().to_string(),
            row.placement.clone(),
            row.method.as_str().to_string(),
        );
        groups.entry(key).or_default().push(row);
        if multi_category {
            let key = ("all".to_string(), row.placement.clone(), row.method.as_str().to_string());
            groups.entry(key).or_default().push(row);
        }
    }
    groups
        .into_iter()
        .map(|((category, placement, method), rows)| {
            let trials = rows.len();
            let successes = rows.iter().filter(|r| r.success).count();
            let penetration_successes = rows.iter().filter(|r| r.penetration_ok).count();
            MethodSummary {
                category,
                placement,
                method: method.parse().expect("summary keys come from Method::as_str"),
                trials,
                successes,
                success_rate: successes as f64 / trials as f64,
                penetration_successes,
                penetration_success_rate: penetration_successes as f64 / trials as f64,
                mean_penetration_frac: mean_finite(rows.iter().map(|r| r.penetration_frac)),
                mean_rotation_deg: mean_finite(rows.iter().map(|r| r.rotation_deg)),
                mean_translation_frac: mean_finite(rows.iter().map(|r| r.translation_frac)),
                mean_seconds: mean_finite(rows.iter().map(|r| r.seconds)),
                errors: rows.iter().filter(|r| r.error.is_some()).count(),
            }
        })
        .collect()
}

/// Runs the whole suite: generates demonstrations per category, trains any
/// learned fields once on a disjoint corpus, builds one template per method
/// variant, then scores every method on shared held-out targets.
pub fn run_benchmark(suite: &BenchSuite) -> Result<BenchReport, BenchError> {
    suite.validate()?;
    let started = Instant::now();
    if !suite.has_rows() {
        return Ok(BenchReport {
            suite: suite.clone(),
            band_training: None,
            occupancy_training: None,
            rows: Vec::new(),
            summaries: Vec::new(),
            seconds_total: started.elapsed().as_secs_f64(),
        });
    }

    let gripper_geom = Arc::new(gripper(&suite.gripper)?);
    let gripper_sphere = RayAccelerator::build(gripper_geom.clone())?.bounding_sphere();
    let (nets, band_training, occupancy_training) = train_nets(suite)?;

    let mut rows = Vec::new();
    for &category in &suite.categories {
        let ctx = build_category_context(suite, category, &gripper_geom, gripper_sphere, &nets)?;
        for &regime in &suite.regimes {
            for trial in 0..suite.trials_per_category {
                let target = place_target(suite, category, regime, trial)?;
                for &method in &suite.methods {
                    rows.push(evaluate_method(
                        suite,
                        method,
                        &target,
                        &ctx,
                        &nets,
                        &gripper_geom,
                    )?);
                }
            }
        }
        if suite.self_control {
            let demo0_seed =
                derive_seed_tagged(suite.seed, "demo-instance", category_code(category) * 1_000);
            let target = self_target(suite, &ctx.demos[0], demo0_seed)?;
            for &method in &suite.methods {
                rows.push(evaluate_method(suite, method, &target, &ctx, &nets, &gripper_geom)?);
            }
        }
    }

    let summaries = summarize(&rows, suite.categories.len() > 1);
    Ok(BenchReport {
        suite: suite.clone(),
        band_training,
        occupancy_training,
        rows,
        summaries,
        seconds_total: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_ids_round_trip() {
        for method in Method::ALL {
            let s = method.as_str();
            assert_eq!(s.parse::<Method>().unwrap(), method);
            let json = serde_json::to_string(&method).unwrap();
            assert_eq!(json, format!("\"{s}\""));
            let back: Method = serde_json::from_str(&json).unwrap();
            assert_eq!(back, method);
        }
        assert!("ibs+ndf".parse::<Method>().is_err());
    }

    #[test]
    fn suite_config_round_trips_and_rejects_unknown_keys() {
        let suite = BenchSuite::default();
        let json = serde_json::to_string(&suite).unwrap();
        let back: BenchSuite = serde_json::from_str(&json).unwrap();
        assert_eq!(back.methods, suite.methods);
        assert_eq!(back.trials_per_category, suite.trials_per_category);
        // Partial configs fill in defaults; typos are errors, not silence.
        let partial: BenchSuite = serde_json::from_str(r#"{"trials_per_category": 3}"#).unwrap();
        assert_eq!(partial.trials_per_category, 3);
        assert_eq!(partial.demos_per_category, 10);
        assert!(serde_json::from_str::<BenchSuite>(r#"{"trails": 3}"#).is_err());
    }

    #[test]
    fn bps_points_are_deterministic_and_fill_the_ball() {
        let c = Pt3::new(0.3, -0.2, 0.5);
        let a = bps_points(c, 2.0, 256, 9);
        let b = bps_points(c, 2.0, 256, 9);
        assert_eq!(a, b);
        assert_ne!(a, bps_points(c, 2.0, 256, 10));
        let max_r = a.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
        assert!(max_r <= 2.0 + 1e-12);
        assert!(max_r > 1.6, "uniform ball samples should reach near the boundary");
    }

    #[test]
    fn placements_are_deterministic_and_regime_shaped() {
        let suite = BenchSuite::default();
        let a = place_target(&suite, Category::Mug, Regime::Upright, 4).unwrap();
        let b = place_target(&suite, Category::Mug, Regime::Upright, 4).unwrap();
        assert_eq!(a.gt.rotation(), b.gt.rotation());
        assert_eq!(a.gt.translation(), b.gt.translation());
        assert_eq!(a.instance_seed, b.instance_seed);

        // Upright placements keep the object vertical and unscaled: the
        // placement maps +z to +z, so the grasp's z column survives.
        assert_eq!(a.scale, 1.0);
        let c = place_target(&suite, Category::Mug, Regime::Upright, 5).unwrap();
        assert_ne!(a.instance_seed, c.instance_seed);

        let d = place_target(&suite, Category::Bottle, Regime::Arbitrary, 0).unwrap();
        assert!(*SCALE_RANGE.start() <= d.scale && d.scale <= *SCALE_RANGE.end());
        // Symmetry axis rode along with the placement.
        match d.symmetry {
            Symmetry::Axis { axis, .. } => {
                assert!((axis.norm() - 1.0).abs() < 1e-9);
            }
            Symmetry::None => panic!("bottles grasp a symmetric neck"),
        }
    }

    #[test]
    fn summaries_split_successes_and_skip_nonfinite_means() {
        let template = TrialRow {
            category: Category::Mug,
            placement: "upright".to_string(),
            method: Method::Cpd,
            trial: 0,
            instance_seed: 1,
            scale: 1.0,
            diameter: 1.0,
            penetration: 0.0,
            penetration_frac: 0.01,
            rotation_deg: 5.0,
            translation: 0.02,
            translation_frac: 0.02,
            residual: 0.1,
            iters: 10,
            converged: true,
            penetration_ok: true,
            pose_ok: true,
            success: true,
            seconds: 0.5,
            error: None,
        };
        let mut failed = template.clone();
        failed.trial = 1;
        failed.penetration_frac = f64::NAN;
        failed.rotation_deg = f64::NAN;
        failed.translation_frac = f64::NAN;
        failed.penetration_ok = false;
        failed.pose_ok = false;
        failed.success = false;
        failed.error = Some("diverged".to_string());

        let rows = vec![template, failed];
        let summaries = summarize(&rows, false);
        assert_eq!(summaries.len(), 1);
        let s = &summaries[0];
        assert_eq!(s.trials, 2);
        assert_eq!(s.successes, 1);
        assert_eq!(s.penetration_successes, 1);
        assert_eq!(s.errors, 1);
        assert!((s.success_rate - 0.5).abs() < 1e-12);
        // NaN rows drop out of the means instead of poisoning them.
        assert!((s.mean_rotation_deg - 5.0).abs() < 1e-12);
        assert!((s.mean_penetration_frac - 0.01).abs() < 1e-12);
    }

    #[test]
    fn csv_has_no_timing_and_escapes_errors() {
        let row = TrialRow {
            category: Category::Bowl,
            placement: "self".to_string(),
            method: Method::Template { scheme: PointScheme::Ibs, field: FieldKind::Scf },
            trial: 2,
            instance_seed: 77,
            scale: 1.0,
            diameter: 0.9,
            penetration: f64::NAN,
            penetration_frac: f64::NAN,
            rotation_deg: f64::NAN,
            translation: f64::NAN,
            translation_frac: f64::NAN,
            residual: f64::NAN,
            iters: 0,
            converged: false,
            penetration_ok: false,
            pose_ok: false,
            success: false,
            seconds: 1.25,
            error: Some("bad, very bad\nnews".to_string()),
        };
        let report = BenchReport {
            suite: BenchSuite::default(),
            band_training: None,
            occupancy_training: None,
            rows: vec![row],
            summaries: Vec::new(),
            seconds_total: 1.0,
        };
        let csv = report.to_csv();
        assert!(!csv.contains("seconds"));
        assert_eq!(csv.lines().count(), 2);
        let line = csv.lines().nth(1).unwrap();
        assert!(line.starts_with("bowl,self,ibs+scf,2,77,"));
        assert!(line.ends_with("bad; very bad;news"));
        assert_eq!(line.matches(',').count(), CSV_HEADER.matches(',').count());
    }

    #[test]
    fn empty_suite_yields_a_valid_empty_report() {
        let suite = BenchSuite {
            trials_per_category: 0,
            self_control: false,
            ..BenchSuite::default()
        };
        let report = run_benchmark(&suite).unwrap();
        assert!(report.rows.is_empty());
        assert!(report.summaries.is_empty());
        assert_eq!(report.to_csv(), CSV_HEADER);
        report.to_json_string().unwrap();
    }

    #[test]
    fn duplicate_methods_are_rejected() {
        let suite = BenchSuite {
            methods: vec![Method::Cpd, Method::Cpd],
            ..BenchSuite::default()
        };
        assert!(matches!(run_benchmark(&suite), Err(BenchError::Config(_))));
    }

    /// A miniature but complete run: one category, one analytic method, one
    /// upright trial plus the self control. Exercises demonstration
    /// generation, template building, imitation, scoring, and determinism of
    /// the CSV across same-seed runs.
    #[test]
    fn tiny_suite_runs_end_to_end_deterministically() {
        let suite = BenchSuite {
            categories: vec![Category::Bowl],
            methods: vec![Method::Template { scheme: PointScheme::Ibs, field: FieldKind::Scf }],
            regimes: vec![Regime::Upright],
            demos_per_category: 2,
            trials_per_category: 1,
            self_control: true,
            seed: 31,
            scf: ScfConfig { order: 3, dir_count: 96, ..ScfConfig::default() },
            template: TemplateConfig {
                ibs: crate::ibs::IbsConfig { grid_res: 24, ..Default::default() },
                samples_per_demo: 160,
                template_size: 48,
                seed: 0,
            },
            imitate: ImitateConfig { restarts: 3, max_iters: 80, ..ImitateConfig::default() },
            penetration_samples: 250,
            ..BenchSuite::default()
        };
        let report = run_benchmark(&suite).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[0].placement, "upright");
        assert_eq!(report.rows[1].placement, "self");
        for row in &report.rows {
            assert!(row.error.is_none(), "unexpected failure: {:?}", row.error);
            assert!(row.penetration_frac.is_finite());
            assert!(row.rotation_deg.is_finite());
            assert!(row.seconds > 0.0);
        }
        assert_eq!(report.summaries.len(), 2);
        report.to_json_string().unwrap();

        let again = run_benchmark(&suite).unwrap();
        assert_eq!(report.to_csv(), again.to_csv());
    }
}

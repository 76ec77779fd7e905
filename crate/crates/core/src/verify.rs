//! Definition-level checks that combine scans, moduli and surface metrics into
//! reproducible experiments driven by one JSON configuration.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forms::{self, ComassBudget, ConstantForm, MultiIndex};
use crate::grid::{AxisBox, GridDomain};
use crate::jetcalc::{self, DistortionReport, MapKind, MapSpec, Phi};
use crate::linalg;
use crate::modulus::{self, ModulusOptions, PathFamily, Selector};
use crate::report::{csv_string, fmt_f64, write_json};
use crate::surface::{self, BallMetric, LlcEstimate, SurfaceMesh};

/// Tolerance names accepted in `tolerances`, with their defaults.
pub const TOLERANCES: [(&str, f64); 9] = [
    ("analytic", 1e-6),
    ("metric", 0.05),
    ("strip-measure", 0.05),
    ("measure", 0.03),
    ("drift", 0.10),
    ("quadrature", 0.01),
    ("modulus", 0.05),
    ("modulus-reference", 0.05),
    ("llc-flat", 0.10),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MapSpec,
    pub form: ConstantForm,
    pub grid: GridDomain,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub surface: SurfaceSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsic: Option<IntrinsicSection>,
}

/// Meshes built by the surface-side checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SurfaceSection {
    /// Cells per axis of the triangulated parameter grid.
    #[serde(default = "default_mesh_resolution")]
    pub mesh_resolution: usize,
    #[serde(default = "default_subdivision")]
    pub subdivision: u32,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        SurfaceSection { mesh_resolution: default_mesh_resolution(), subdivision: default_subdivision() }
    }
}

fn default_mesh_resolution() -> usize {
    32
}

fn default_subdivision() -> u32 {
    surface::DEFAULT_SUBDIVISION_LEVEL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalyzeSection {
    /// Random polylines for the upper-gradient check.
    #[serde(default = "default_paths")]
    pub paths: usize,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { paths: default_paths() }
    }
}

fn default_paths() -> usize {
    100
}

/// A curve family on the configured grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModulusSection {
    pub source: Selector,
    pub target: Selector,
    /// Defaults to the grid dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stencil_radius: Option<usize>,
    /// Known value of the modulus, compared under `modulus-reference`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    /// Also check the lower modulus inequality for the configured map.
    #[serde(default)]
    pub lower_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CounterexampleSection {
    /// Strips `U_1 … U_N` in the regularity check.
    #[serde(default = "default_strips")]
    pub strips: usize,
    /// Inclusive range of `n` for the balls `B_n`.
    #[serde(default = "default_n_range")]
    pub n_range: [usize; 2],
    /// Cells along `x₁` of each strip piece mesh.
    #[serde(default = "default_strip_cells")]
    pub strip_cells: usize,
}

impl Default for CounterexampleSection {
    fn default() -> Self {
        CounterexampleSection {
            strips: default_strips(),
            n_range: default_n_range(),
            strip_cells: default_strip_cells(),
        }
    }
}

fn default_strips() -> usize {
    5
}

fn default_n_range() -> [usize; 2] {
    [2, 6]
}

fn default_strip_cells() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct IntrinsicSection {
    /// Parameter region; defaults to the grid box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<AxisBox>,
    /// Gauss–Legendre points per axis.
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    /// Directions sampled per seminorm (at least 64).
    #[serde(default = "default_directions")]
    pub directions: usize,
}

impl Default for IntrinsicSection {
    fn default() -> Self {
        IntrinsicSection { region: None, quadrature: default_quadrature(), directions: default_directions() }
    }
}

fn default_quadrature() -> usize {
    4
}

fn default_directions() -> usize {
    64
}

fn config_error(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::InvalidConfig { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn new(map: MapSpec, form: ConstantForm, grid: GridDomain) -> Result<Self> {
        let cfg = ExperimentConfig {
            map,
            form,
            grid,
            tolerances: BTreeMap::new(),
            seed: 0,
            surface: SurfaceSection::default(),
            analyze: AnalyzeSection::default(),
            modulus: None,
            counterexample: None,
            intrinsic: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            config_error(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.map.n(), self.map.m());
        if self.form.degree() != n {
            return Err(config_error(
                "form.n",
                format!("form degree {} differs from the map's n = {n}", self.form.degree()),
            ));
        }
        if self.form.ambient_dim() != m {
            return Err(config_error(
                "form.m",
                format!("form lives in R^{}, the map in R^{m}", self.form.ambient_dim()),
            ));
        }
        self.grid.validate().map_err(|e| config_error("grid", e.to_string()))?;
        if self.grid.dim() != n {
            return Err(config_error(
                "grid.box",
                format!("grid is {}-dimensional, the map has n = {n}", self.grid.dim()),
            ));
        }
        if !self.map.domain().contains_box(&self.grid.bbox) {
            return Err(config_error("grid.box", "grid box leaves the map domain"));
        }
        for (name, value) in &self.tolerances {
            if !TOLERANCES.iter().any(|t| t.0 == name) {
                return Err(config_error(format!("tolerances.{name}"), "unknown tolerance"));
            }
            if !(value.is_finite() && *value > 0.0) {
                return Err(config_error(format!("tolerances.{name}"), format!("must be positive, got {value}")));
            }
        }
        if self.surface.mesh_resolution < 4 {
            return Err(config_error("surface.mesh-resolution", "must be at least 4"));
        }
        if self.surface.subdivision > 6 {
            return Err(config_error("surface.subdivision", "must be at most 6"));
        }
        if let Some(section) = &self.modulus {
            if let Some(p) = section.exponent {
                if !(p > 1.0 && p.is_finite()) {
                    return Err(config_error("modulus.exponent", format!("must exceed 1, got {p}")));
                }
            }
            if section.lower_bound && n != 2 {
                return Err(config_error("modulus.lower-bound", "needs a planar parameter domain"));
            }
        }
        if let Some(section) = &self.counterexample {
            if self.map.phi().is_none() {
                return Err(config_error("map.kind", "the counterexample section needs the counterexample map"));
            }
            let [lo, hi] = section.n_range;
            if lo == 0 || hi <= lo {
                return Err(config_error("counterexample.n-range", format!("need 1 ≤ lo < hi, got [{lo}, {hi}]")));
            }
            if section.strip_cells < 8 {
                return Err(config_error("counterexample.strip-cells", "must be at least 8"));
            }
        }
        if let Some(section) = &self.intrinsic {
            if n != 2 {
                return Err(config_error("intrinsic", "needs a planar parameter domain"));
            }
            if section.directions < 64 {
                return Err(config_error("intrinsic.directions", "must be at least 64"));
            }
            if section.quadrature == 0 {
                return Err(config_error("intrinsic.quadrature", "must be positive"));
            }
            if let Some(region) = &section.region {
                region.validate().map_err(|e| config_error("intrinsic.region", e.to_string()))?;
                if region.dim() != 2 || !self.map.domain().contains_box(region) {
                    return Err(config_error("intrinsic.region", "region must be a planar box inside the map domain"));
                }
            }
        }
        Ok(())
    }

    /// Named tolerance, falling back to the default.
    pub fn tol(&self, name: &str) -> f64 {
        if let Some(v) = self.tolerances.get(name) {
            return *v;
        }
        TOLERANCES.iter().find(|t| t.0 == name).map(|t| t.1).unwrap_or_else(|| panic!("unknown tolerance {name}"))
    }

    /// The same configuration with every grid axis at `cells`.
    pub fn with_resolution(&self, cells: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.grid = self.grid.with_resolution(cells).map_err(|e| config_error("resolution", e.to_string()))?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `<out>/run-<first 16 hex digits of the hash>`.
    pub fn run_dir(&self, out: &Path) -> Result<PathBuf> {
        Ok(out.join(format!("run-{}", &self.hash()?[..16])))
    }

    fn comass_budget(&self) -> ComassBudget {
        ComassBudget { seed: self.seed, ..ComassBudget::default() }
    }

    fn scan(&self) -> Result<DistortionReport> {
        let comass = forms::comass(&self.form, &self.comass_budget()).value;
        jetcalc::distortion_scan_with_comass(&self.map, &self.form, &self.grid, comass)
    }

    fn mesh_grid(&self, bbox: &AxisBox, cells: usize) -> Result<GridDomain> {
        GridDomain::uniform(bbox.clone(), cells)
    }
}

/// A text artifact written next to a check result.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    /// The stated inequality or equality holds within tolerance.
    pub pass: bool,
    /// The check could not decide (degenerate samples, unstable counts, warnings).
    pub inconclusive: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub files: Vec<Artifact>,
}

impl CheckResult {
    fn new(name: &str, lhs: f64, rhs: f64, tolerance: f64, pass: bool) -> Self {
        CheckResult {
            name: name.to_string(),
            pass,
            inconclusive: false,
            lhs,
            rhs,
            tolerance,
            metrics: BTreeMap::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
            files: Vec::new(),
        }
    }

    fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    fn attach(&mut self, file: &str, contents: String) {
        self.artifacts.push(file.to_string());
        self.files.push(Artifact { file: file.to_string(), contents });
    }

    /// Pass and decided.
    pub fn ok(&self) -> bool {
        self.pass && !self.inconclusive
    }

    /// Writes `<name>.check.json` and the attached artifacts into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for a in &self.files {
            std::fs::write(dir.join(&a.file), &a.contents)?;
        }
        write_json(&dir.join(format!("{}.check.json", self.name)), self)
    }
}

/// Distortion scan without the per-sample table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionSummary {
    pub comass: f64,
    pub sample_count: usize,
    pub ess_sup_k: f64,
    pub k_p999: f64,
    pub degenerate_fraction: f64,
    pub empirical_c: f64,
    pub max_analytic_ratio: f64,
    pub hadamard_violations: usize,
}

impl From<&DistortionReport> for DistortionSummary {
    fn from(r: &DistortionReport) -> Self {
        DistortionSummary {
            comass: r.comass,
            sample_count: r.samples.len(),
            ess_sup_k: r.ess_sup_k,
            k_p999: r.k_p999,
            degenerate_fraction: r.degenerate_fraction,
            empirical_c: r.empirical_c,
            max_analytic_ratio: r.max_analytic_ratio,
            hadamard_violations: r.hadamard_violations,
        }
    }
}

/// `2 + sup (φ + φ′)²` over the `x₂` range of `grid`: the bound on `K` for the
/// counterexample.
pub fn counterexample_k_bound(phi: &Phi, grid: &GridDomain) -> f64 {
    2.0 + phi.sup_sum_squared(grid.bbox.lo[1], grid.bbox.hi[1])
}

/// `|Df|ⁿ ≤ K_emp · √det(DfᵀDf)` at every non-degenerate sample.
pub fn check_analytic_definition(cfg: &ExperimentConfig) -> Result<(CheckResult, DistortionReport)> {
    let scan = cfg.scan()?;
    let n = cfg.map.n() as i32;
    let tol = cfg.tol("analytic");
    let lhs = scan
        .samples
        .iter()
        .filter(|s| s.k.is_some() && s.cb_jacobian > 0.0)
        .map(|s| s.op_norm.powi(n) / s.cb_jacobian)
        .fold(0.0_f64, f64::max);
    let rhs = scan.ess_sup_k;
    let inconclusive = scan.degenerate_fraction > 0.01;
    let mut res = CheckResult::new("analytic-definition", lhs, rhs, tol, lhs <= rhs * (1.0 + tol));
    res.inconclusive = inconclusive;
    res.metric("essSupK", scan.ess_sup_k)
        .metric("kP999", scan.k_p999)
        .metric("comass", scan.comass)
        .metric("empiricalC", scan.empirical_c)
        .metric("degenerateFraction", scan.degenerate_fraction)
        .metric("maxViolationRatio", lhs / rhs)
        .metric("hadamardViolations", scan.hadamard_violations as f64);
    if let Some(phi) = cfg.map.phi() {
        let bound = counterexample_k_bound(&phi, &cfg.grid);
        res.metric("kBound", bound);
        if scan.ess_sup_k > bound + 1e-3 {
            res.pass = false;
            res.notes.push(format!("essSupK {} exceeds 2 + sup(φ+φ′)² = {bound}", scan.ess_sup_k));
        }
    }
    if inconclusive {
        res.notes.push(format!("{:.2}% of samples are degenerate", 100.0 * scan.degenerate_fraction));
    }
    res.attach("distortion.csv", scan.to_csv()?);
    res.attach("distortion-summary.json", pretty(&DistortionSummary::from(&scan))?);
    Ok((res, scan))
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// `[4h, 2h, h]` with `h` the smallest grid spacing.
pub fn default_metric_radii(grid: &GridDomain) -> Vec<f64> {
    let h = grid.spacings().into_iter().fold(f64::INFINITY, f64::min);
    vec![4.0 * h, 2.0 * h, h]
}

fn sphere_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if n == 2 {
        return (0..count)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s = linalg::norm(&v);
            v.into_iter().map(|x| x / s).collect()
        })
        .collect()
}

fn lattice(bbox: &AxisBox, per_axis: usize, inset: f64) -> Vec<Vec<f64>> {
    let n = bbox.dim();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut lin| {
            (0..n)
                .map(|a| {
                    let i = lin % per_axis;
                    lin /= per_axis;
                    let lo = bbox.lo[a] + inset;
                    let hi = bbox.hi[a] - inset;
                    lo + (i as f64 + 0.5) / per_axis as f64 * (hi - lo)
                })
                .collect()
        })
        .collect()
}

/// `H_f(x) = lim L_f(x, r) / ℓ_f(x, r)` at one center.
fn stretch_ratio(map: &MapSpec, x: &[f64], radii: &[f64], dirs: &[Vec<f64>]) -> Result<f64> {
    let fx = map.eval(x);
    let mut ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        let (mut big, mut small) = (0.0_f64, f64::INFINITY);
        for v in dirs {
            let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + r * b).collect();
            let d = linalg::dist(&map.eval(&y), &fx);
            big = big.max(d);
            small = small.min(d);
        }
        if !(small > 0.0) {
            return Err(Error::ZeroLowerStretch { x: x.to_vec(), r });
        }
        ratios.push(big / small);
    }
    Ok(surface::linear_intercept(radii, &ratios).0.max(1.0))
}

/// Metric definition: `H_f` from circle samples, extrapolated to `r → 0`, at the
/// given radii and at half of them. Checks `H_f^{n−1} ≤ K_emp` and that the two
/// radius sets agree.
pub fn check_metric_definition(cfg: &ExperimentConfig, radii: &[f64]) -> Result<CheckResult> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[1] < w[0])) || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::InvalidArgument("radii must be positive and strictly decreasing (at least two)".into()));
    }
    let n = cfg.map.n();
    let dirs = sphere_directions(n, if n == 2 { 256 } else { 512 }, cfg.seed);
    let per_axis = if n <= 2 { 8 } else { 4 };
    let inset = radii[0] * 1.01 + 1e-9;
    let bbox = &cfg.grid.bbox;
    if (0..n).any(|a| bbox.width(a) <= 2.0 * inset) {
        return Err(Error::InvalidArgument("radii are too large for the grid box".into()));
    }
    let centers = lattice(bbox, per_axis, inset);
    let half: Vec<f64> = radii.iter().map(|r| r / 2.0).collect();
    let rows: Vec<(Vec<f64>, f64, f64)> = centers
        .into_par_iter()
        .map(|x| {
            let h1 = stretch_ratio(&cfg.map, &x, radii, &dirs)?;
            let h2 = stretch_ratio(&cfg.map, &x, &half, &dirs)?;
            Ok((x, h1, h2))
        })
        .collect::<Result<_>>()?;
    let h1 = rows.iter().map(|r| r.1).fold(1.0_f64, f64::max);
    let h2 = rows.iter().map(|r| r.2).fold(1.0_f64, f64::max);
    let drift = (h1 - h2).abs() / h2;
    let scan = cfg.scan()?;
    let tol = cfg.tol("metric");
    let lhs = h2.powi(n as i32 - 1);
    let rhs = scan.ess_sup_k;
    let mut res = CheckResult::new("metric-definition", lhs, rhs, tol, lhs <= rhs * (1.0 + tol) && drift < tol);
    res.metric("maxH", h2).metric("maxHCoarse", h1).metric("radiusDrift", drift).metric("essSupK", rhs);
    if drift >= tol {
        res.notes.push(format!("H changes by {:.2}% when the radii are halved", 100.0 * drift));
    }
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend(["H", "Hhalf"].map(String::from));
    let csv = csv_string(
        &header,
        rows.iter().map(|(x, a, b)| {
            let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(*a));
            row.push(fmt_f64(*b));
            row
        }),
    )?;
    res.attach("metric-definition.csv", csv);
    Ok(res)
}

fn counterexample_phi(cfg: &ExperimentConfig) -> Result<Phi> {
    match cfg.map.kind() {
        MapKind::Counterexample { amplitude } => Ok(Phi { amplitude: *amplitude }),
        _ => Err(Error::InvalidArgument("this check needs the counterexample map".into())),
    }
}

/// Measure of `B(f(1,−2π), 2) ∩ f(U_1 ∪ … ∪ U_N)` for each `N` up to `strips`,
/// where `U_k` is the log of the disk `V` on the strip `x₂ ∈ (−2(k+1)π, −2kπ)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StripGrowth {
    /// `4 − (φ(−2π) e)²`, the squared radius of `V`.
    pub r0_squared: f64,
    /// Cumulative measure for `N = 1 ..= strips`.
    pub measures: Vec<f64>,
}

pub fn strip_measures(map: &MapSpec, strips: usize, cells: usize) -> Result<StripGrowth> {
    let phi = map.phi().ok_or_else(|| Error::InvalidArgument("strip measures need the counterexample map".into()))?;
    let s = phi.value(-2.0 * PI) * E;
    let r0_squared = 4.0 - s * s;
    let rho = r0_squared.sqrt();
    let center = map.eval(&[1.0, -2.0 * PI]);
    let (x1_lo, x1_hi) = ((E - rho).ln(), (E + rho).ln());
    let alpha = (rho / E).asin();
    let mut pieces = Vec::with_capacity(2 * strips);
    for k in 1..=strips {
        let top = -2.0 * PI * k as f64;
        let bottom = -2.0 * PI * (k + 1) as f64;
        pieces.push((k, [x1_lo, top - alpha], [x1_hi, top]));
        pieces.push((k, [x1_lo, bottom], [x1_hi, bottom + alpha]));
    }
    let per_piece: Vec<(usize, f64)> = pieces
        .into_par_iter()
        .map(|(k, lo, hi)| {
            let grid = surface::param_grid(lo, hi, [cells, cells / 2])?;
            let local = map.with_domain(grid.bbox.clone())?;
            let mesh = surface::triangulate_with(&local, &grid, 0)?;
            Ok((k, surface::ball_measure(&mesh, &center, 2.0, BallMetric::Euclidean)?))
        })
        .collect::<Result<_>>()?;
    let mut measures = Vec::with_capacity(strips);
    let mut total = 0.0;
    for k in 1..=strips {
        total += per_piece.iter().filter(|p| p.0 == k).map(|p| p.1).sum::<f64>();
        measures.push(total);
    }
    Ok(StripGrowth { r0_squared, measures })
}

/// Non-Ahlfors-regularity: the measure grows at least like `N π r₀²`.
pub fn check_counterexample_regularity(cfg: &ExperimentConfig, strips: usize) -> Result<CheckResult> {
    counterexample_phi(cfg)?;
    let cells = cfg.counterexample.as_ref().map_or(default_strip_cells(), |c| c.strip_cells);
    let growth = strip_measures(&cfg.map, strips, cells)?;
    let tol = cfg.tol("strip-measure");
    let disk = PI * growth.r0_squared;
    let mut ok = true;
    let mut prev = 0.0;
    let mut rows = vec![vec!["0".to_string(), "0".to_string(), "0".to_string(), "0".to_string()]];
    for (i, &m) in growth.measures.iter().enumerate() {
        let count = (i + 1) as f64;
        if m < count * disk * (1.0 - tol) || m <= prev {
            ok = false;
        }
        prev = m;
        rows.push(vec![(i + 1).to_string(), fmt_f64(m), fmt_f64(count * disk), fmt_f64(m / 4.0)]);
    }
    let lhs = growth.measures.last().copied().unwrap_or(0.0);
    let rhs = strips as f64 * disk * (1.0 - tol);
    let mut res = CheckResult::new("counterexample-regularity", lhs, rhs, tol, ok);
    res.metric("r0Squared", growth.r0_squared).metric("strips", strips as f64).metric("ahlforsRatio", lhs / 4.0);
    let header = ["N", "measure", "lowerBound", "measureOverRSquared"].map(String::from);
    res.attach("growth-measure.csv", csv_string(&header, rows)?);
    Ok(res)
}

/// Grid of the turn-coordinate mesh around `x_n`: `x₁ ∈ [9, 10.5]`,
/// `x₂ / 2π ∈ [−(n+1) − 1/8, −n + 1/8]`.
pub fn turn_grid(n: usize) -> Result<GridDomain> {
    let t0 = -(n as f64) - 1.125;
    surface::param_grid([9.0, t0], [10.5, t0 + 1.25], [12, 80])
}

/// `sin²(π s)` and `sin(2π s)` with exact zeros at integers.
fn turn_trig(s: f64) -> (f64, f64) {
    let frac = s - s.round();
    let half = (PI * frac).sin();
    (half * half, (2.0 * PI * frac).sin())
}

/// The counterexample around `x_n = (10, −2πn)` in coordinates relative to
/// `f(x_n)`, parametrized by `(x₁, t = x₂ / 2π)`; keeps full relative precision
/// at the scale of `B_n`.
pub fn counterexample_turn_mesh(phi: &Phi, n: usize, level: u32) -> Result<SurfaceMesh> {
    let grid = turn_grid(n)?;
    let scale = 10f64.exp();
    let phi_n = phi.value(-2.0 * PI * n as f64);
    SurfaceMesh::from_fn(&grid, level, |p| {
        let u = p[0] - 10.0;
        let t = p[1];
        let (sin2_half, sin_full) = turn_trig(t + n as f64);
        let cos_full = 1.0 - 2.0 * sin2_half;
        vec![
            scale * (u.exp_m1() * cos_full - 2.0 * sin2_half),
            scale * u.exp() * sin_full,
            scale * (u.exp() * phi.value(2.0 * PI * t) - phi_n),
        ]
    })
}

/// The flat plane over the same turn grid, `(x₁, t) ↦ (x₁ − 10, 2π (t + n), 0)`.
pub fn flat_turn_mesh(n: usize, level: u32) -> Result<SurfaceMesh> {
    let grid = turn_grid(n)?;
    SurfaceMesh::from_fn(&grid, level, |p| vec![p[0] - 10.0, 2.0 * PI * (p[1] + n as f64), 0.0])
}

/// `c(n)` for `B_n = B(f(x_n), φ(−2πn) e^{10})` and for a flat control ball of
/// three cells at the same parameter point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LlcRow {
    pub n: usize,
    pub radius: f64,
    pub estimate: LlcEstimate,
    pub flat: LlcEstimate,
}

pub fn llc_growth(phi: &Phi, n_lo: usize, n_hi: usize, level: u32) -> Result<Vec<LlcRow>> {
    (n_lo..=n_hi)
        .into_par_iter()
        .map(|n| {
            let mesh = counterexample_turn_mesh(phi, n, level)?;
            let radius = phi.value(-2.0 * PI * n as f64) * 10f64.exp();
            let estimate = surface::llc_constant(&mesh, &[0.0; 3], radius)?;
            let flat_mesh = flat_turn_mesh(n, level)?;
            let flat = surface::llc_constant(&flat_mesh, &[0.0; 3], 0.375)?;
            Ok(LlcRow { n, radius, estimate, flat })
        })
        .collect()
}

/// LLC failure: `c(n)` strictly increasing with `c(n_hi) / c(n_lo) ≥ 2`, while
/// the flat control stays near 1. Uncapped constants are compared, so values
/// above the search cap still order correctly.
pub fn check_counterexample_llc(cfg: &ExperimentConfig, n_lo: usize, n_hi: usize) -> Result<CheckResult> {
    let phi = counterexample_phi(cfg)?;
    if n_lo == 0 || n_hi <= n_lo {
        return Err(Error::InvalidArgument(format!("need 1 ≤ n_lo < n_hi, got {n_lo}..{n_hi}")));
    }
    let rows = llc_growth(&phi, n_lo, n_hi, cfg.surface.subdivision)?;
    let c: Vec<f64> = rows.iter().map(|r| r.estimate.c).collect();
    let increasing = c.windows(2).all(|w| w[1] > w[0]);
    let ratio = c[c.len() - 1] / c[0];
    let flat_max = rows.iter().map(|r| r.flat.c).fold(0.0_f64, f64::max);
    let flat_tol = cfg.tol("llc-flat");
    let pass = increasing && ratio >= 2.0 && flat_max <= 1.0 + flat_tol;
    let mut res = CheckResult::new("counterexample-llc", ratio, 2.0, flat_tol, pass);
    res.metric("cFirst", c[0]).metric("cLast", c[c.len() - 1]).metric("flatMax", flat_max);
    if rows.iter().any(|r| r.estimate.infinite) {
        res.notes
            .push(format!("some constants exceed the search cap {:e}; uncapped values are compared", surface::LLC_CAP));
    }
    if !increasing {
        res.notes.push("c(n) is not strictly increasing".into());
    }
    let header = ["n", "radius", "c", "capped", "samples", "flatC"].map(String::from);
    let csv = csv_string(
        &header,
        rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                fmt_f64(r.radius),
                fmt_f64(r.estimate.c),
                r.estimate.infinite.to_string(),
                r.estimate.samples.to_string(),
                fmt_f64(r.flat.c),
            ]
        }),
    )?;
    res.attach("growth-llc.csv", csv);
    Ok(res)
}

/// Metric differentials over a Gauss–Legendre rule on a region.
/// `(x, v, md, |Df v|)`.
pub type MdRow = ([f64; 2], [f64; 2], f64, f64);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdStudy {
    /// One row per quadrature point and direction.
    pub rows: Vec<MdRow>,
    /// `∫ J(md)` over the region.
    pub integral: f64,
    /// `∫ √det(DfᵀDf)` by the same rule.
    pub analytic_integral: f64,
    pub median_rel_error: f64,
    /// Worst `|J(md) − √det(DfᵀDf)| / √det(DfᵀDf)` over the points.
    pub max_jacobian_error: f64,
    pub warnings: usize,
}

pub fn metric_differential_study(
    map: &MapSpec,
    region: &AxisBox,
    cells: usize,
    level: u32,
    quadrature: usize,
    directions: usize,
) -> Result<MdStudy> {
    let grid = GridDomain::uniform(region.clone(), cells)?;
    let mesh = surface::triangulate_with(map, &grid, level)?;
    let radii = surface::default_radii(&mesh);
    let rule = linalg::gauss_legendre(quadrature);
    let half = [region.width(0) / 2.0, region.width(1) / 2.0];
    let mid = [region.lo[0] + half[0], region.lo[1] + half[1]];
    let mut points = Vec::with_capacity(quadrature * quadrature);
    for &(sj, wj) in &rule {
        for &(si, wi) in &rule {
            points.push(([mid[0] + half[0] * si, mid[1] + half[1] * sj], wi * wj * half[0] * half[1]));
        }
    }
    let per_point: Vec<(Vec<MdRow>, f64, f64, usize)> = points
        .par_iter()
        .map(|&(x, w)| {
            let (semi, warnings) = surface::sample_seminorm(map, &mesh, &x, directions, &radii)?;
            let jac = surface::jacobian_of_seminorm(&semi, 2)?;
            let df = jetcalc::differential(map, &x, None)?.df;
            let cb = jetcalc::cb_jacobian(&df)?;
            let rows = semi
                .samples()
                .iter()
                .enumerate()
                .map(|(k, &md)| {
                    let v = surface::Seminorm2D::direction(k, directions);
                    let dfv = (&df * nalgebra::DVector::from_column_slice(&v)).norm();
                    (x, v, md, dfv)
                })
                .collect();
            Ok((rows, w * jac, w * cb, warnings))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let (mut integral, mut analytic_integral, mut warnings) = (0.0, 0.0, 0);
    let mut max_jacobian_error = 0.0_f64;
    for (r, j, c, w) in per_point {
        rows.extend(r);
        integral += j;
        analytic_integral += c;
        warnings += w;
        if c > 0.0 {
            max_jacobian_error = max_jacobian_error.max((j - c).abs() / c);
        }
    }
    let mut errs: Vec<f64> = rows.iter().filter(|r| r.3 > 0.0).map(|r| (r.2 - r.3).abs() / r.3).collect();
    errs.sort_by(f64::total_cmp);
    let median_rel_error = if errs.is_empty() { 0.0 } else { errs[errs.len() / 2] };
    Ok(MdStudy { rows, integral, analytic_integral, median_rel_error, max_jacobian_error, warnings })
}

impl MdStudy {
    pub fn to_csv(&self) -> Result<String> {
        let header = ["x1", "x2", "v1", "v2", "md", "DfV"].map(String::from);
        csv_string(
            &header,
            self.rows.iter().map(|(x, v, md, dfv)| {
                vec![fmt_f64(x[0]), fmt_f64(x[1]), fmt_f64(v[0]), fmt_f64(v[1]), fmt_f64(*md), fmt_f64(*dfv)]
            }),
        )
    }
}

/// `∫_region J(md(f, x)) dx` against the euclidean area of `f(region)`.
/// More than 5% of non-monotone metric-differential samples make the result
/// inconclusive.
pub fn check_measure_equality(cfg: &ExperimentConfig, region: &AxisBox) -> Result<CheckResult> {
    if cfg.map.n() != 2 {
        return Err(Error::Unsupported("measure equality is implemented for surfaces".into()));
    }
    let section = cfg.intrinsic.clone().unwrap_or_default();
    let study = metric_differential_study(
        &cfg.map,
        region,
        cfg.surface.mesh_resolution,
        cfg.surface.subdivision,
        section.quadrature,
        section.directions,
    )?;
    let area_grid = GridDomain::uniform(region.clone(), 4 * cfg.surface.mesh_resolution)?;
    let area = jetcalc::area_measure(&cfg.map, &area_grid)?;
    let tol = cfg.tol("measure");
    let rel = (study.integral - area).abs() / area;
    let mut res = CheckResult::new("measure-equality", study.integral, area, tol, rel < tol);
    let samples = study.rows.len();
    res.inconclusive = study.warnings as f64 > 0.05 * samples as f64;
    res.metric("relativeDifference", rel)
        .metric("analyticIntegral", study.analytic_integral)
        .metric("mdMedianRelError", study.median_rel_error)
        .metric("maxJacobianError", study.max_jacobian_error)
        .metric("warnings", study.warnings as f64);
    if res.inconclusive {
        res.notes.push(format!("{} of {samples} metric differentials are not monotone in r", study.warnings));
    }
    res.attach("metric-differential.csv", study.to_csv()?);
    Ok(res)
}

/// Upper regularity: `Hⁿ(B(y, r) ∩ f(Ω)) / rⁿ ≤ C · max_I N(f_I)` with `C`
/// measured at the mesh resolution and at twice it.
pub fn check_upper_regularity_bound(cfg: &ExperimentConfig) -> Result<CheckResult> {
    if cfg.map.n() != 2 {
        return Err(Error::Unsupported("upper regularity is implemented for surfaces".into()));
    }
    let bbox = &cfg.grid.bbox;
    let m = cfg.map.m();
    let samples = lattice(bbox, 3, 0.0);
    let count_grid = cfg.mesh_grid(bbox, cfg.surface.mesh_resolution)?;
    let mut n_max = 0;
    let mut unstable = false;
    for index in MultiIndex::all(2, m) {
        for x in &samples {
            let fx = cfg.map.eval(x);
            let y: Vec<f64> = index.indices().iter().map(|&i| fx[i - 1]).collect();
            let mult = surface::projection_multiplicity(&cfg.map, &index, &y, &count_grid)?;
            n_max = n_max.max(mult.count);
            unstable |= mult.unstable;
        }
    }
    let res_lo = cfg.surface.mesh_resolution;
    let constants: Vec<(f64, f64)> = [res_lo, 2 * res_lo]
        .par_iter()
        .map(|&cells| {
            let mesh = surface::triangulate_with(&cfg.map, &cfg.mesh_grid(bbox, cells)?, 0)?;
            let (mut lo, mut hi) = (vec![f64::INFINITY; m], vec![f64::NEG_INFINITY; m]);
            for v in 0..mesh.vertex_count() {
                for (k, c) in mesh.vertex(v).iter().enumerate() {
                    lo[k] = lo[k].min(*c);
                    hi[k] = hi[k].max(*c);
                }
            }
            let diam = linalg::dist(&lo, &hi);
            let mut worst = 0.0_f64;
            for x in &samples {
                let y = cfg.map.eval(x);
                for s in [0.05, 0.1, 0.2] {
                    let r = s * diam;
                    worst = worst.max(surface::ball_measure(&mesh, &y, r, BallMetric::Euclidean)? / (r * r));
                }
            }
            Ok((worst, diam))
        })
        .collect::<Result<_>>()?;
    let n_eff = n_max.max(1) as f64;
    let (c_lo, c_hi) = (constants[0].0 / n_eff, constants[1].0 / n_eff);
    let drift = (c_hi - c_lo).abs() / c_hi;
    let tol = cfg.tol("drift");
    let lhs = constants[1].0;
    let rhs = c_lo * n_eff;
    let mut res = CheckResult::new("upper-regularity", lhs, rhs, tol, n_max > 0 && drift < tol);
    res.inconclusive = unstable;
    res.metric("multiplicity", n_max as f64)
        .metric("cEmp", c_hi)
        .metric("cEmpCoarse", c_lo)
        .metric("drift", drift)
        .metric("maxRatio", lhs);
    if unstable {
        res.notes.push("a multiplicity count changed under doubled resolution".into());
    }
    Ok(res)
}

/// A polyline in the parameter domain.
pub type Polyline = Vec<Vec<f64>>;

/// Seeded random polylines with 2 to 6 vertices, inset 1% from the box.
pub fn random_polylines(bbox: &AxisBox, count: usize, seed: u64) -> Vec<Polyline> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let k = rng.random_range(2..=6);
            (0..k)
                .map(|_| {
                    (0..bbox.dim())
                        .map(|a| {
                            let inset = 0.01 * bbox.width(a);
                            bbox.lo[a] + inset + rng.random::<f64>() * (bbox.width(a) - 2.0 * inset)
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// `∫_γ |Df| ds` with `pieces` sub-segments per segment and 5 Gauss points each.
pub fn upper_gradient_integral(map: &MapSpec, path: &[Vec<f64>], pieces: usize) -> Result<f64> {
    let rule = linalg::gauss_legendre(5);
    let mut total = 0.0;
    for seg in path.windows(2) {
        let (a, b) = (&seg[0], &seg[1]);
        let len = linalg::dist(a, b);
        for p in 0..pieces {
            for &(s, w) in &rule {
                let t = (p as f64 + 0.5 * (s + 1.0)) / pieces as f64;
                let x: Vec<f64> = a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect();
                let df = match map.analytic_jacobian(&x) {
                    Some(df) => df,
                    None => jetcalc::differential(map, &x, None)?.df,
                };
                total += 0.5 * w / pieces as f64 * len * jetcalc::operator_norm(&df);
            }
        }
    }
    Ok(total)
}

/// `|f(a) − f(b)| ≤ ∫_γ |Df| ds` and `d(f(a), f(b)) ≤ ∫_γ |Df| ds` along seeded
/// random polylines, with `d` the mesh intrinsic distance (planar domains).
pub fn check_upper_gradient(cfg: &ExperimentConfig, paths: usize) -> Result<CheckResult> {
    let bbox = cfg.grid.bbox.clone();
    let lines = random_polylines(&bbox, paths, cfg.seed);
    let mesh = if cfg.map.n() == 2 {
        let grid = cfg.mesh_grid(&bbox, cfg.surface.mesh_resolution)?;
        Some(Arc::new(surface::triangulate_with(&cfg.map, &grid, cfg.surface.subdivision)?))
    } else {
        None
    };
    let tol = cfg.tol("quadrature");
    let rows: Vec<(f64, f64, f64, f64)> = lines
        .par_iter()
        .map(|path| {
            let (a, b) = (&path[0], &path[path.len() - 1]);
            let chord = linalg::dist(&cfg.map.eval(a), &cfg.map.eval(b));
            let intrinsic = match &mesh {
                Some(mesh) => mesh.point_distance(a, b)?,
                None => f64::NAN,
            };
            let coarse = upper_gradient_integral(&cfg.map, path, 8)?;
            let fine = upper_gradient_integral(&cfg.map, path, 16)?;
            Ok((chord, intrinsic, fine, (fine - coarse).abs() / fine.max(f64::MIN_POSITIVE)))
        })
        .collect::<Result<_>>()?;
    let mut violations = 0;
    let (mut max_e, mut max_i, mut max_q) = (0.0_f64, 0.0_f64, 0.0_f64);
    for &(chord, intrinsic, integral, q) in &rows {
        let re = chord / integral;
        let ri = if intrinsic.is_nan() { 0.0 } else { intrinsic / integral };
        if re > 1.0 + tol || ri > 1.0 + tol {
            violations += 1;
        }
        max_e = max_e.max(re);
        max_i = max_i.max(ri);
        max_q = max_q.max(q);
    }
    let lhs = max_e.max(max_i);
    let mut res = CheckResult::new("upper-gradient", lhs, 1.0, tol, violations == 0);
    res.metric("paths", paths as f64)
        .metric("violations", violations as f64)
        .metric("maxEuclideanRatio", max_e)
        .metric("maxIntrinsicRatio", max_i)
        .metric("maxQuadratureChange", max_q);
    for (i, &(chord, intrinsic, integral, _)) in rows.iter().enumerate() {
        if chord > integral * (1.0 + tol) || intrinsic > integral * (1.0 + tol) {
            res.notes.push(format!("path {i} {:?}: chord {chord}, intrinsic {intrinsic}, ∫|Df| {integral}", lines[i]));
        }
    }
    let header = ["path", "vertices", "chord", "intrinsic", "integral", "quadratureChange"].map(String::from);
    let csv = csv_string(
        &header,
        rows.iter().enumerate().map(|(i, r)| {
            vec![i.to_string(), lines[i].len().to_string(), fmt_f64(r.0), fmt_f64(r.1), fmt_f64(r.2), fmt_f64(r.3)]
        }),
    )?;
    res.attach("upper-gradient.csv", csv);
    Ok(res)
}

fn modulus_section(cfg: &ExperimentConfig) -> Result<&ModulusSection> {
    cfg.modulus.as_ref().ok_or_else(|| config_error("modulus", "section missing"))
}

fn family_on(cfg: &ExperimentConfig, grid: GridDomain) -> Result<PathFamily> {
    let section = modulus_section(cfg)?;
    PathFamily::on_grid(grid, section.source.clone(), section.target.clone())
}

/// Discrete modulus of the configured family, compared to `expected` when given;
/// otherwise the check is the admissibility certificate.
pub fn check_modulus(cfg: &ExperimentConfig) -> Result<CheckResult> {
    let section = modulus_section(cfg)?;
    let family = family_on(cfg, cfg.grid.clone())?;
    let mut opts = ModulusOptions::new(section.exponent.unwrap_or(cfg.grid.dim() as f64));
    opts.stencil_radius = section.stencil_radius;
    let result = modulus::discrete_modulus_with(&family, &opts)?;
    let mut res = match section.expected {
        Some(expected) => {
            let tol = cfg.tol("modulus-reference");
            let rel = (result.modulus - expected).abs() / expected;
            let mut r = CheckResult::new("modulus", result.modulus, expected, tol, rel <= tol);
            r.metric("relativeError", rel);
            r
        }
        None => CheckResult::new(
            "modulus",
            result.certificate,
            1.0 - opts.tol,
            opts.tol,
            result.converged && result.certificate >= 1.0 - opts.tol,
        ),
    };
    res.metric("modulus", result.modulus)
        .metric("lowerBound", result.lower_bound)
        .metric("certificate", result.certificate)
        .metric("rounds", result.rounds as f64)
        .metric("activePaths", result.active_paths as f64)
        .metric("sweeps", result.sweeps as f64);
    if let Some(flag) = result.flag {
        res.notes.push(format!("family flag: {flag:?}"));
    }
    if !result.converged {
        res.notes.push("solver stopped before reaching the tolerance".into());
    }
    if result.density.is_some() {
        res.attach("density.csv", result.density_csv(&family)?);
    }
    Ok(res)
}

/// `mod Γ ≤ K_emp · mod f(Γ) · (1 + tol)` at the grid resolution and at half of it.
pub fn check_lower_modulus(cfg: &ExperimentConfig) -> Result<CheckResult> {
    let tol = cfg.tol("modulus");
    let full = cfg.grid.resolution[0];
    let mut resolutions = vec![full];
    if full / 2 >= 4 {
        resolutions.insert(0, full / 2);
    }
    let mut rows = Vec::new();
    let mut pass = true;
    let mut worst = 0.0_f64;
    let mut res_metrics = Vec::new();
    for &cells in &resolutions {
        let grid = cfg.grid.with_resolution(cells)?;
        let family = family_on(cfg, grid)?;
        let report = modulus::verify_lower_modulus(&cfg.map, &cfg.form, &family, tol)?;
        pass &= report.pass;
        worst = worst.max(report.lhs / report.rhs);
        res_metrics.push((cells, report.mod_domain, report.mod_image, report.k_emp));
        rows.push(vec![
            cells.to_string(),
            fmt_f64(report.mod_domain),
            fmt_f64(report.mod_image),
            fmt_f64(report.k_emp),
            fmt_f64(report.lhs / report.rhs),
            report.pass.to_string(),
        ]);
    }
    let mut res = CheckResult::new("lower-modulus", worst, 1.0, tol, pass);
    for (cells, md, mi, k) in res_metrics {
        res.metric(&format!("modDomain@{cells}"), md)
            .metric(&format!("modImage@{cells}"), mi)
            .metric(&format!("kEmp@{cells}"), k);
    }
    let header = ["resolution", "modDomain", "modImage", "kEmp", "lhsOverRhs", "pass"].map(String::from);
    res.attach("lower-modulus.csv", csv_string(&header, rows)?);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cfg(cells: usize) -> ExperimentConfig {
        let b = AxisBox::unit(2);
        ExperimentConfig::new(
            MapSpec::identity(b.clone()).unwrap(),
            ConstantForm::standard(2, 2).unwrap(),
            GridDomain::uniform(b, cells).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn turn_trig_has_exact_zeros() {
        for s in [-3.0, -2.0, -1.0, 0.0] {
            assert_eq!(turn_trig(s), (0.0, 0.0));
        }
        let (h, f) = turn_trig(-0.25);
        assert!((h - 0.5).abs() < 1e-15 && (f + 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let cfg = identity_cfg(8);
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_ne!(cfg.with_resolution(16).unwrap().hash().unwrap(), cfg.hash().unwrap());
    }

    #[test]
    fn config_errors_name_the_field() {
        let cfg = identity_cfg(8);
        let mut value = serde_json::to_value(&cfg).unwrap();
        value["tolerances"] = serde_json::json!({"measure": -1.0});
        match ExperimentConfig::from_json(&value.to_string()) {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "tolerances.measure"),
            other => panic!("unexpected {other:?}"),
        }
        let mut value = serde_json::to_value(&cfg).unwrap();
        value["grid"]["resolution"] = serde_json::json!([8, "x"]);
        match ExperimentConfig::from_json(&value.to_string()) {
            Err(Error::InvalidConfig { field, .. }) => assert!(field.starts_with("grid.resolution"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn polylines_are_seeded() {
        let b = AxisBox::unit(2);
        assert_eq!(random_polylines(&b, 5, 7), random_polylines(&b, 5, 7));
        assert_ne!(random_polylines(&b, 5, 7), random_polylines(&b, 5, 8));
        for p in random_polylines(&b, 50, 1) {
            assert!((2..=6).contains(&p.len()));
            assert!(p.iter().all(|x| b.contains(x)));
        }
    }

    #[test]
    fn identity_passes_the_analytic_check_with_k_one() {
        let (res, scan) = check_analytic_definition(&identity_cfg(8)).unwrap();
        assert!(res.ok());
        assert!((scan.ess_sup_k - 1.0).abs() < 1e-9);
    }

    #[test]
    fn straight_segment_integral_is_its_length_under_identity() {
        let map = MapSpec::identity(AxisBox::unit(2)).unwrap();
        let path = vec![vec![0.1, 0.2], vec![0.7, 0.9]];
        let i = upper_gradient_integral(&map, &path, 3).unwrap();
        assert!((i - linalg::dist(&path[0], &path[1])).abs() < 1e-14);
    }
}

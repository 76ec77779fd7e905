//! Parametrized maps `f: Ω ⊂ Rⁿ → Rᵐ`, their jets, and pointwise distortion.

use std::fmt;
use std::sync::Arc;

use evalexpr::{ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{self, ComassBudget, ConstantForm, MultiIndex};
use crate::grid::{AxisBox, GridDomain};
use crate::linalg;

/// `φ(t) = a (1 + tanh t)`: smooth, bounded, increasing, bounded derivative,
/// `φ → 0` as `t → −∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    pub amplitude: f64,
}

impl Default for Phi {
    fn default() -> Self {
        Phi { amplitude: Phi::DEFAULT_AMPLITUDE }
    }
}

impl Phi {
    /// `1/(40e)`, which puts `φ(−2π)·e` far below `1/10`.
    pub const DEFAULT_AMPLITUDE: f64 = 1.0 / (40.0 * std::f64::consts::E);

    pub fn value(&self, t: f64) -> f64 {
        // 1 + tanh t = 2 / (1 + e^{-2t}); the e^{2t} form keeps full relative precision for t ≪ 0
        if t < 0.0 {
            let q = (2.0 * t).exp();
            2.0 * self.amplitude * q / (1.0 + q)
        } else {
            2.0 * self.amplitude / (1.0 + (-2.0 * t).exp())
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        // sech² t = 4 e^{-2|t|} / (1 + e^{-2|t|})²
        let q = (-2.0 * t.abs()).exp();
        4.0 * self.amplitude * q / ((1.0 + q) * (1.0 + q))
    }

    /// `sup_{t ∈ [lo, hi]} (φ(t) + φ′(t))²`, by dense sampling plus a local refinement.
    pub fn sup_sum_squared(&self, lo: f64, hi: f64) -> f64 {
        let g = |t: f64| {
            let s = self.value(t) + self.derivative(t);
            s * s
        };
        let samples = 20_000;
        let step = (hi - lo) / samples as f64;
        let (mut best_t, mut best) = (lo, g(lo));
        for i in 1..=samples {
            let t = lo + step * i as f64;
            let v = g(t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        // golden-section polish in the bracketing cells
        let (mut a, mut b) = ((best_t - step).max(lo), (best_t + step).min(hi));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if g(c) > g(d) {
                b = d;
            } else {
                a = c;
            }
        }
        best.max(g(0.5 * (a + b)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum GraphProfile {
    /// `g(x) = (a/2)|x|²`.
    Paraboloid { curvature: f64 },
    /// `g(x) = A sin(k x₁) cos(k x₂)`.
    Wave { amplitude: f64, frequency: f64 },
}

impl GraphProfile {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            GraphProfile::Paraboloid { curvature } => 0.5 * curvature * (x[0] * x[0] + x[1] * x[1]),
            GraphProfile::Wave { amplitude, frequency } => {
                amplitude * (frequency * x[0]).sin() * (frequency * x[1]).cos()
            }
        }
    }

    fn gradient(&self, x: &[f64]) -> [f64; 2] {
        match *self {
            GraphProfile::Paraboloid { curvature } => [curvature * x[0], curvature * x[1]],
            GraphProfile::Wave { amplitude, frequency } => {
                let (s1, c1) = (frequency * x[0]).sin_cos();
                let (s2, c2) = (frequency * x[1]).sin_cos();
                [amplitude * frequency * c1 * c2, -amplitude * frequency * s1 * s2]
            }
        }
    }
}

/// The builtin map families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MapKind {
    Identity {
        n: usize,
    },
    /// `f(x) = M x` with `M` given as `m` rows of length `n`.
    Linear {
        matrix: Vec<Vec<f64>>,
    },
    /// `(x₁, x₂, g(x₁, x₂))`.
    Graph {
        profile: GraphProfile,
    },
    /// `(e^{x₁} cos x₂, e^{x₁} sin x₂, φ(x₂) e^{x₁})`.
    Counterexample {
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
    /// `(e^{x₁} cos x₂, e^{x₁} sin x₂, 0)`.
    ExpPlane,
    /// `(R cos(x₁/R), R sin(x₁/R), x₂)`, an isometric wrap of the strip.
    Cylinder {
        #[serde(default = "default_radius")]
        radius: f64,
    },
    /// Component expressions in the variables `x1 … xn` (evalexpr syntax,
    /// e.g. `math::sin(x1) * x2`); derivatives by central differences.
    Expression {
        n: usize,
        components: Vec<String>,
    },
}

fn default_amplitude() -> f64 {
    Phi::DEFAULT_AMPLITUDE
}

fn default_radius() -> f64 {
    1.0
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(try_from = "MapRepr", into = "MapRepr")]
pub struct MapSpec {
    kind: MapKind,
    domain: AxisBox,
    compiled: Option<Arc<Vec<Node<DefaultNumericTypes>>>>,
}

#[derive(Serialize, Deserialize)]
struct MapRepr {
    #[serde(flatten)]
    kind: MapKind,
    domain: AxisBox,
}

impl TryFrom<MapRepr> for MapSpec {
    type Error = Error;
    fn try_from(r: MapRepr) -> Result<Self> {
        MapSpec::new(r.kind, r.domain)
    }
}

impl From<MapSpec> for MapRepr {
    fn from(m: MapSpec) -> Self {
        MapRepr { kind: m.kind, domain: m.domain }
    }
}

impl PartialEq for MapSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.domain == other.domain
    }
}

impl fmt::Debug for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MapSpec").field("kind", &self.kind).field("domain", &self.domain).finish()
    }
}

impl MapSpec {
    pub fn new(kind: MapKind, domain: AxisBox) -> Result<Self> {
        domain.validate()?;
        let (n, m) = dims(&kind)?;
        if n > m {
            return Err(Error::InvalidMap(format!("domain dimension n = {n} exceeds target dimension m = {m}")));
        }
        if domain.dim() != n {
            return Err(Error::InvalidMap(format!(
                "domain box has dimension {} but the map has n = {n}",
                domain.dim()
            )));
        }
        let compiled = match &kind {
            MapKind::Expression { components, .. } => {
                let nodes = components
                    .iter()
                    .map(|c| {
                        evalexpr::build_operator_tree::<DefaultNumericTypes>(c)
                            .map_err(|e| Error::Expression(format!("{c:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(Arc::new(nodes))
            }
            MapKind::Cylinder { radius } if !(*radius > 0.0) => {
                return Err(Error::InvalidMap(format!("cylinder radius must be positive, got {radius}")));
            }
            MapKind::Counterexample { amplitude } if !(*amplitude > 0.0) => {
                return Err(Error::InvalidMap(format!("φ amplitude must be positive, got {amplitude}")));
            }
            _ => None,
        };
        let spec = MapSpec { kind, domain, compiled };
        if spec.compiled.is_some() {
            let center: Vec<f64> = (0..n).map(|a| 0.5 * (spec.domain.lo[a] + spec.domain.hi[a])).collect();
            spec.try_eval_expression(&center)?;
        }
        Ok(spec)
    }

    pub fn identity(domain: AxisBox) -> Result<Self> {
        let n = domain.dim();
        Self::new(MapKind::Identity { n }, domain)
    }

    pub fn linear(matrix: Vec<Vec<f64>>, domain: AxisBox) -> Result<Self> {
        Self::new(MapKind::Linear { matrix }, domain)
    }

    pub fn counterexample(domain: AxisBox) -> Result<Self> {
        Self::new(MapKind::Counterexample { amplitude: Phi::DEFAULT_AMPLITUDE }, domain)
    }

    pub fn exp_plane(domain: AxisBox) -> Result<Self> {
        Self::new(MapKind::ExpPlane, domain)
    }

    pub fn cylinder(domain: AxisBox) -> Result<Self> {
        Self::new(MapKind::Cylinder { radius: 1.0 }, domain)
    }

    pub fn graph(profile: GraphProfile, domain: AxisBox) -> Result<Self> {
        Self::new(MapKind::Graph { profile }, domain)
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn domain(&self) -> &AxisBox {
        &self.domain
    }

    /// The same map on a different parameter box.
    pub fn with_domain(&self, domain: AxisBox) -> Result<Self> {
        Self::new(self.kind.clone(), domain)
    }

    pub fn n(&self) -> usize {
        dims(&self.kind).map(|d| d.0).unwrap_or(0)
    }

    pub fn m(&self) -> usize {
        dims(&self.kind).map(|d| d.1).unwrap_or(0)
    }

    /// `φ` for the counterexample family.
    pub fn phi(&self) -> Option<Phi> {
        match self.kind {
            MapKind::Counterexample { amplitude } => Some(Phi { amplitude }),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            MapKind::Identity { .. } => x.to_vec(),
            MapKind::Linear { matrix } => {
                matrix.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
            }
            MapKind::Graph { profile } => vec![x[0], x[1], profile.value(x)],
            MapKind::Counterexample { amplitude } => {
                let r = x[0].exp();
                let (s, c) = x[1].sin_cos();
                vec![r * c, r * s, Phi { amplitude: *amplitude }.value(x[1]) * r]
            }
            MapKind::ExpPlane => {
                let r = x[0].exp();
                let (s, c) = x[1].sin_cos();
                vec![r * c, r * s, 0.0]
            }
            MapKind::Cylinder { radius } => {
                let (s, c) = (x[0] / radius).sin_cos();
                vec![radius * c, radius * s, x[1]]
            }
            MapKind::Expression { components, .. } => {
                self.try_eval_expression(x).unwrap_or_else(|_| vec![f64::NAN; components.len()])
            }
        }
    }

    fn try_eval_expression(&self, x: &[f64]) -> Result<Vec<f64>> {
        let nodes = self.compiled.as_ref().expect("expression maps are compiled on construction");
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (i, v) in x.iter().enumerate() {
            ctx.set_value(format!("x{}", i + 1), Value::Float(*v)).map_err(|e| Error::Expression(e.to_string()))?;
        }
        for (name, v) in [("pi", std::f64::consts::PI), ("e", std::f64::consts::E)] {
            ctx.set_value(name.into(), Value::Float(v)).map_err(|e| Error::Expression(e.to_string()))?;
        }
        nodes
            .iter()
            .map(|node| node.eval_number_with_context(&ctx).map_err(|e| Error::Expression(e.to_string())))
            .collect()
    }

    /// Closed-form `Df(x)` where the family has one.
    pub fn analytic_jacobian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        match &self.kind {
            MapKind::Identity { n } => Some(DMatrix::identity(*n, *n)),
            MapKind::Linear { matrix } => {
                let (m, n) = (matrix.len(), matrix[0].len());
                Some(DMatrix::from_fn(m, n, |i, j| matrix[i][j]))
            }
            MapKind::Graph { profile } => {
                let g = profile.gradient(x);
                Some(DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, g[0], g[1]]))
            }
            MapKind::Counterexample { amplitude } => {
                let phi = Phi { amplitude: *amplitude };
                let r = x[0].exp();
                let (s, c) = x[1].sin_cos();
                Some(DMatrix::from_row_slice(
                    3,
                    2,
                    &[r * c, -r * s, r * s, r * c, phi.value(x[1]) * r, phi.derivative(x[1]) * r],
                ))
            }
            MapKind::ExpPlane => {
                let r = x[0].exp();
                let (s, c) = x[1].sin_cos();
                Some(DMatrix::from_row_slice(3, 2, &[r * c, -r * s, r * s, r * c, 0.0, 0.0]))
            }
            MapKind::Cylinder { radius } => {
                let (s, c) = (x[0] / radius).sin_cos();
                Some(DMatrix::from_row_slice(3, 2, &[-s, 0.0, c, 0.0, 0.0, 1.0]))
            }
            MapKind::Expression { .. } => None,
        }
    }

    /// Central differences `(f(x + h eⱼ) − f(x − h eⱼ)) / 2h`.
    pub fn fd_jacobian(&self, x: &[f64], h: f64) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut df = DMatrix::zeros(m, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            xp[j] = x[j] + h;
            let fp = self.eval(&xp);
            xp[j] = x[j] - h;
            let fm = self.eval(&xp);
            xp[j] = x[j];
            for i in 0..m {
                df[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        df
    }
}

fn dims(kind: &MapKind) -> Result<(usize, usize)> {
    Ok(match kind {
        MapKind::Identity { n } => {
            if *n == 0 {
                return Err(Error::InvalidMap("identity needs n ≥ 1".into()));
            }
            (*n, *n)
        }
        MapKind::Linear { matrix } => {
            let m = matrix.len();
            let n = matrix.first().map_or(0, |r| r.len());
            if m == 0 || n == 0 || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::InvalidMap("linear map needs a non-empty rectangular matrix".into()));
            }
            if matrix.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMap("linear map has non-finite entries".into()));
            }
            (n, m)
        }
        MapKind::Graph { .. } | MapKind::Counterexample { .. } | MapKind::ExpPlane | MapKind::Cylinder { .. } => (2, 3),
        MapKind::Expression { n, components } => {
            if *n == 0 || components.is_empty() {
                return Err(Error::InvalidMap("expression map needs n ≥ 1 and at least one component".into()));
            }
            (*n, components.len())
        }
    })
}

/// A point, the value there, and the `m×n` differential.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub x: Vec<f64>,
    pub value: Vec<f64>,
    pub df: DMatrix<f64>,
}

impl Jet {
    pub fn from_matrix(x: Vec<f64>, df: DMatrix<f64>) -> Self {
        let value = vec![0.0; df.nrows()];
        Jet { x, value, df }
    }
}

/// Default central-difference step `1e−5·(1 + |x|)`.
pub fn default_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + linalg::norm(x))
}

/// `Df(x)`: analytic for builtins, central differences otherwise.
pub fn differential(map: &MapSpec, x: &[f64], h: Option<f64>) -> Result<Jet> {
    if x.len() != map.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("point in R^{}", map.n()),
            got: format!("point in R^{}", x.len()),
        });
    }
    let h = h.unwrap_or_else(|| default_step(x));
    let dom = map.domain();
    for axis in 0..x.len() {
        if x[axis] - dom.lo[axis] < h || dom.hi[axis] - x[axis] < h {
            return Err(Error::NearBoundary { axis, x: x.to_vec(), margin: h });
        }
    }
    let df = map.analytic_jacobian(x).unwrap_or_else(|| map.fd_jacobian(x, h));
    Ok(Jet { x: x.to_vec(), value: map.eval(x), df })
}

/// `|Df|`: the largest singular value.
pub fn operator_norm(df: &DMatrix<f64>) -> f64 {
    linalg::singular_values(df).first().copied().unwrap_or(0.0)
}

/// `√det(DfᵀDf)`, cross-checked against `√(Σ_I J_I²)` (Cauchy–Binet).
pub fn cb_jacobian(df: &DMatrix<f64>) -> Result<f64> {
    let (m, n) = (df.nrows(), df.ncols());
    if n > m {
        return Ok(0.0);
    }
    let gram_det = linalg::det(&(df.transpose() * df));
    let minor_sum: f64 = MultiIndex::all(n, m).iter().map(|idx| linalg::minor_det(df, &idx.rows()).powi(2)).sum();
    let scale = df.norm_squared().powi(n as i32).max(f64::MIN_POSITIVE);
    if (gram_det - minor_sum).abs() > 1e-10 * scale {
        return Err(Error::CauchyBinetMismatch { gram_det, minor_sum });
    }
    Ok(gram_det.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distortion {
    Finite(f64),
    /// `⋆f*ω ≤ 0`: the distortion inequality cannot hold here.
    Degenerate,
}

impl Distortion {
    pub fn value(&self) -> Option<f64> {
        match self {
            Distortion::Finite(k) => Some(*k),
            Distortion::Degenerate => None,
        }
    }
}

/// `K(x) = ‖ω‖ |Df(x)|ⁿ / ⋆f*ω(x)`.
pub fn pointwise_distortion(form: &ConstantForm, comass: f64, jet: &Jet) -> Result<Distortion> {
    let star = forms::pullback_star(form, jet)?;
    if !(star > 0.0) {
        return Ok(Distortion::Degenerate);
    }
    let k = comass * operator_norm(&jet.df).powi(jet.df.ncols() as i32) / star;
    Ok(if k.is_finite() { Distortion::Finite(k) } else { Distortion::Degenerate })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionSample {
    pub x: Vec<f64>,
    /// `None` at degenerate points.
    pub k: Option<f64>,
    pub star_pullback: f64,
    pub op_norm: f64,
    pub cb_jacobian: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistortionReport {
    pub comass: f64,
    pub samples: Vec<DistortionSample>,
    /// Max of `K` over non-degenerate samples.
    pub ess_sup_k: f64,
    pub k_p999: f64,
    pub degenerate_points: Vec<Vec<f64>>,
    pub degenerate_fraction: f64,
    /// `max cb_jacobian / ⋆f*ω`, the empirical constant in `μ_f ≤ C ⋆f*ω`.
    pub empirical_c: f64,
    /// `max |Df|ⁿ / cb_jacobian`.
    pub max_analytic_ratio: f64,
    /// Samples where `cb_jacobian > |Df|ⁿ` beyond rounding.
    pub hadamard_violations: usize,
}

impl DistortionReport {
    pub fn to_csv(&self) -> Result<String> {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.extend(["K", "starPullback", "opNorm", "cbJac"].map(String::from));
        let rows = self.samples.iter().map(|s| {
            let mut row: Vec<String> = s.x.iter().map(|v| v.to_string()).collect();
            row.push(s.k.map_or_else(|| "nan".to_string(), |k| k.to_string()));
            row.push(s.star_pullback.to_string());
            row.push(s.op_norm.to_string());
            row.push(s.cb_jacobian.to_string());
            row
        });
        crate::report::csv_string(&header, rows)
    }
}

/// Scans `K(x)` over the kept cell centers of `grid`.
pub fn distortion_scan(map: &MapSpec, form: &ConstantForm, grid: &GridDomain) -> Result<DistortionReport> {
    let comass = forms::comass(form, &ComassBudget::default()).value;
    distortion_scan_with_comass(map, form, grid, comass)
}

pub fn distortion_scan_with_comass(
    map: &MapSpec,
    form: &ConstantForm,
    grid: &GridDomain,
    comass: f64,
) -> Result<DistortionReport> {
    check_compatible(map, form, grid)?;
    let n = map.n();
    let samples: Vec<DistortionSample> = grid
        .kept_cells()
        .into_par_iter()
        .map(|cell| {
            let x = grid.cell_center(cell);
            let jet = differential(map, &x, None)?;
            let star = forms::pullback_star(form, &jet)?;
            let k = pointwise_distortion(form, comass, &jet)?.value();
            Ok(DistortionSample {
                op_norm: operator_norm(&jet.df),
                cb_jacobian: cb_jacobian(&jet.df)?,
                star_pullback: star,
                k,
                x,
            })
        })
        .collect::<Result<_>>()?;

    let mut ks: Vec<f64> = samples.iter().filter_map(|s| s.k).collect();
    if ks.is_empty() {
        return Err(Error::AllDegenerate);
    }
    ks.sort_by(f64::total_cmp);
    let ess_sup_k = *ks.last().unwrap();
    let p_idx = ((0.999 * ks.len() as f64).ceil() as usize).clamp(1, ks.len()) - 1;
    let degenerate_points: Vec<Vec<f64>> = samples.iter().filter(|s| s.k.is_none()).map(|s| s.x.clone()).collect();

    let mut empirical_c = 0.0_f64;
    let mut max_analytic_ratio = 0.0_f64;
    let mut hadamard_violations = 0;
    for s in &samples {
        if s.k.is_some() {
            empirical_c = empirical_c.max(s.cb_jacobian / s.star_pullback);
        }
        let bound = s.op_norm.powi(n as i32);
        if s.cb_jacobian > bound * (1.0 + 1e-10) + 1e-300 {
            hadamard_violations += 1;
        }
        if s.cb_jacobian > 0.0 {
            max_analytic_ratio = max_analytic_ratio.max(bound / s.cb_jacobian);
        }
    }

    Ok(DistortionReport {
        comass,
        ess_sup_k,
        k_p999: ks[p_idx],
        degenerate_fraction: degenerate_points.len() as f64 / samples.len() as f64,
        degenerate_points,
        empirical_c,
        max_analytic_ratio,
        hadamard_violations,
        samples,
    })
}

fn check_compatible(map: &MapSpec, form: &ConstantForm, grid: &GridDomain) -> Result<()> {
    if form.degree() != map.n() || form.ambient_dim() != map.m() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}-form in R^{}", map.n(), map.m()),
            got: format!("{}-form in R^{}", form.degree(), form.ambient_dim()),
        });
    }
    check_grid_in_domain(map, grid)
}

pub(crate) fn check_grid_in_domain(map: &MapSpec, grid: &GridDomain) -> Result<()> {
    if grid.dim() != map.n() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}-dimensional grid", map.n()),
            got: format!("{}-dimensional grid", grid.dim()),
        });
    }
    if !map.domain().contains_box(&grid.bbox) {
        return Err(Error::InvalidGrid(format!(
            "grid box {:?}–{:?} leaves the map domain {:?}–{:?}",
            grid.bbox.lo,
            grid.bbox.hi,
            map.domain().lo,
            map.domain().hi
        )));
    }
    Ok(())
}

/// Riemann sum of `√det(DfᵀDf)` over the kept cells: `Hⁿ(f(region))` for injective `f`.
pub fn area_measure(map: &MapSpec, region: &GridDomain) -> Result<f64> {
    check_grid_in_domain(map, region)?;
    let vol = region.cell_volume();
    let parts: Vec<f64> = region
        .kept_cells()
        .into_par_iter()
        .map(|cell| {
            let x = region.cell_center(cell);
            let jet = differential(map, &x, None)?;
            cb_jacobian(&jet.df)
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() * vol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn square(lo: f64, hi: f64) -> AxisBox {
        AxisBox::new(vec![lo, lo], vec![hi, hi]).unwrap()
    }

    #[test]
    fn phi_is_stable_and_monotone() {
        let phi = Phi::default();
        assert!(phi.value(-2.0 * PI) * E < 0.1);
        assert!(phi.value(-100.0) > 0.0);
        let mut prev = 0.0;
        for i in -40..40 {
            let v = phi.value(i as f64 * 0.25);
            assert!(v > prev);
            prev = v;
        }
        let naive = |t: f64| phi.amplitude * (1.0 + t.tanh());
        assert!((phi.value(0.7) - naive(0.7)).abs() < 1e-16);
        assert!((phi.value(-0.7) - naive(-0.7)).abs() < 1e-16);
        // derivative against central differences
        for t in [-3.0, -0.5, 0.0, 0.4, 2.0] {
            let fd = (phi.value(t + 1e-6) - phi.value(t - 1e-6)) / 2e-6;
            assert!((phi.derivative(t) - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_and_linear_differentials() {
        let id = MapSpec::identity(square(-1.0, 1.0)).unwrap();
        let jet = differential(&id, &[0.3, -0.2], None).unwrap();
        assert_eq!(jet.df, DMatrix::identity(2, 2));

        let rows = vec![vec![2.0, 0.5], vec![0.0, 1.0], vec![-1.0, 3.0]];
        let lin = MapSpec::linear(rows, square(-1.0, 1.0)).unwrap();
        let jet = differential(&lin, &[0.1, 0.2], None).unwrap();
        assert_eq!(jet.df, DMatrix::from_row_slice(3, 2, &[2.0, 0.5, 0.0, 1.0, -1.0, 3.0]));
        assert!(linalg::dist(&jet.value, &[0.3, 0.2, 0.5]) < 1e-15);
    }

    #[test]
    fn counterexample_jacobian_at_origin() {
        let map = MapSpec::counterexample(square(-3.0, 3.0)).unwrap();
        let phi = map.phi().unwrap();
        let jet = differential(&map, &[0.0, 0.0], None).unwrap();
        let expected = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, phi.value(0.0), phi.derivative(0.0)]);
        assert!((jet.df.clone() - expected).norm() < 1e-15);
        let fd = map.fd_jacobian(&[0.0, 0.0], 1e-5);
        assert!((jet.df - fd).norm() < 1e-9);
    }

    #[test]
    fn differential_rejects_points_near_the_boundary() {
        let map = MapSpec::identity(square(0.0, 1.0)).unwrap();
        match differential(&map, &[0.5, 1.0 - 1e-7], None) {
            Err(Error::NearBoundary { axis, .. }) => assert_eq!(axis, 1),
            other => panic!("expected NearBoundary, got {other:?}"),
        }
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let maps = [
            MapSpec::counterexample(square(-3.0, 3.0)).unwrap(),
            MapSpec::exp_plane(square(-1.0, 1.0)).unwrap(),
            MapSpec::cylinder(square(0.0, 3.0)).unwrap(),
            MapSpec::graph(GraphProfile::Wave { amplitude: 0.3, frequency: 2.0 }, square(-1.0, 1.0)).unwrap(),
        ];
        for map in &maps {
            let dom = map.domain();
            let x: Vec<f64> = (0..2).map(|a| dom.lo[a] + 0.37 * dom.width(a)).collect();
            let exact = map.analytic_jacobian(&x).unwrap();
            let err = |h: f64| (map.fd_jacobian(&x, h) - &exact).abs().max();
            let (e1, e2) = (err(1e-2), err(5e-3));
            assert!(e1 / e2 >= 3.5, "{:?}: ratio {}", map.kind(), e1 / e2);
        }
    }

    #[test]
    fn expression_maps_match_their_builtin_twin() {
        let kind = MapKind::Expression {
            n: 2,
            components: vec![
                "math::exp(x1) * math::cos(x2)".into(),
                "math::exp(x1) * math::sin(x2)".into(),
                "0.0".into(),
            ],
        };
        let expr = MapSpec::new(kind, square(-1.0, 1.0)).unwrap();
        let builtin = MapSpec::exp_plane(square(-1.0, 1.0)).unwrap();
        let x = [0.2, -0.4];
        let a = differential(&expr, &x, None).unwrap();
        let b = differential(&builtin, &x, None).unwrap();
        assert!((a.df - b.df).norm() < 1e-8);

        let bad = MapKind::Expression { n: 2, components: vec!["x1 +".into()] };
        assert!(MapSpec::new(bad, square(0.0, 1.0)).is_err());
    }

    #[test]
    fn map_json_schema() {
        let text = r#"{"kind":"counterexample","domain":{"lo":[-3,-3],"hi":[3,3]}}"#;
        let map: MapSpec = serde_json::from_str(text).unwrap();
        assert_eq!(map.phi().unwrap(), Phi::default());
        let text = r#"{"kind":"identity","n":3,"domain":{"lo":[0,0],"hi":[1,1]}}"#;
        assert!(serde_json::from_str::<MapSpec>(text).is_err());
        let text = r#"{"kind":"linear","matrix":[[1,0,0],[0,1,0]],"domain":{"lo":[0,0,0],"hi":[1,1,1]}}"#;
        let err = serde_json::from_str::<MapSpec>(text).unwrap_err().to_string();
        assert!(err.contains("exceeds"), "{err}");
    }

    #[test]
    fn operator_norm_examples() {
        assert_eq!(operator_norm(&DMatrix::identity(2, 2)), 1.0);
        let m = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((operator_norm(&m) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cb_jacobian_examples() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!((cb_jacobian(&m).unwrap() - 1.0).abs() < 1e-15);
        // minors J12 = 2, J13 = 0, J23 = -6
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 3.0, 0.0]);
        assert!((cb_jacobian(&m).unwrap() - 40f64.sqrt()).abs() < 1e-13);
        let wide = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(cb_jacobian(&wide).unwrap(), 0.0);
    }

    #[test]
    fn pointwise_distortion_examples() {
        let w = ConstantForm::standard(2, 2).unwrap();
        let id = Jet::from_matrix(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert_eq!(pointwise_distortion(&w, 1.0, &id).unwrap(), Distortion::Finite(1.0));

        let w3 = ConstantForm::standard(2, 3).unwrap();
        let stretch = Jet::from_matrix(vec![0.0, 0.0], DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let k = pointwise_distortion(&w3, 1.0, &stretch).unwrap().value().unwrap();
        assert!((k - 2.0).abs() < 1e-14);

        let flipped = Jet::from_matrix(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(pointwise_distortion(&w, 1.0, &flipped).unwrap(), Distortion::Degenerate);
    }

    #[test]
    fn scans_of_conformal_maps_have_unit_distortion() {
        let w = ConstantForm::standard(2, 2).unwrap();
        let id = MapSpec::identity(AxisBox::unit(2)).unwrap();
        let grid = GridDomain::uniform(AxisBox::unit(2), 32).unwrap();
        let rep = distortion_scan(&id, &w, &grid).unwrap();
        assert_eq!(rep.ess_sup_k, 1.0);
        assert_eq!(rep.samples.len(), 1024);

        let w3 = ConstantForm::standard(2, 3).unwrap();
        let exp = MapSpec::exp_plane(square(-1.0, 1.0)).unwrap();
        let grid = GridDomain::uniform(square(-1.0, 1.0), 32).unwrap();
        let rep = distortion_scan(&exp, &w3, &grid).unwrap();
        assert!((rep.ess_sup_k - 1.0).abs() < 1e-12);
        assert_eq!(rep.hadamard_violations, 0);
    }

    #[test]
    fn all_degenerate_scan_is_an_error() {
        let w = ConstantForm::simple(2, 2, vec![1, 2], -1.0).unwrap();
        let id = MapSpec::identity(AxisBox::unit(2)).unwrap();
        let grid = GridDomain::uniform(AxisBox::unit(2), 8).unwrap();
        assert!(matches!(distortion_scan(&id, &w, &grid), Err(Error::AllDegenerate)));
    }

    #[test]
    fn area_of_identity_and_cylinder() {
        let id = MapSpec::identity(AxisBox::unit(2)).unwrap();
        let grid = GridDomain::uniform(AxisBox::unit(2), 16).unwrap();
        assert!((area_measure(&id, &grid).unwrap() - 1.0).abs() < 1e-12);

        let b = AxisBox::new(vec![0.0, 0.0], vec![PI, 1.0]).unwrap();
        let cyl = MapSpec::cylinder(b.clone()).unwrap();
        let grid = GridDomain::uniform(b, 16).unwrap();
        assert!((area_measure(&cyl, &grid).unwrap() - PI).abs() < 1e-12);
    }
}

//! Constant-coefficient `n`-forms in `Rᵐ`.
//!
//! A form is stored as a sparse map from multi-indices `I = (i₁ < … < iₙ)`
//! (1-based, as in `dx_{i₁} ∧ … ∧ dx_{iₙ}`) to real coefficients. Evaluating
//! the form on an `m×n` matrix of column vectors gives `Σ_I c_I det(V_I)`,
//! where `V_I` keeps the rows listed in `I`. The same expression with the
//! differential `Df` in place of `V` is the density `⋆f*ω`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jetcalc::Jet;
use crate::linalg;

/// Strictly increasing 1-based indices `(i₁, …, iₙ)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    /// Validates against the ambient dimension `m`.
    pub fn new(indices: Vec<usize>, m: usize) -> Result<Self> {
        let idx = MultiIndex::try_from(indices)?;
        if let Some(&last) = idx.0.last() {
            if last > m {
                return Err(Error::InvalidMultiIndex { indices: idx.0, m, reason: "index exceeds ambient dimension" });
            }
        }
        if idx.0.len() > m {
            return Err(Error::InvalidMultiIndex { indices: idx.0, m, reason: "more indices than ambient dimensions" });
        }
        Ok(idx)
    }

    /// Every multi-index of length `n` in `Rᵐ`, lexicographically.
    pub fn all(n: usize, m: usize) -> Vec<MultiIndex> {
        linalg::combinations(m, n).into_iter().map(|c| MultiIndex(c.into_iter().map(|i| i + 1).collect())).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    /// 0-based row numbers.
    pub fn rows(&self) -> Vec<usize> {
        self.0.iter().map(|i| i - 1).collect()
    }
}

impl TryFrom<Vec<usize>> for MultiIndex {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidMultiIndex { indices, m: 0, reason: "empty multi-index" });
        }
        if indices.contains(&0) {
            return Err(Error::InvalidMultiIndex { indices, m: 0, reason: "indices are 1-based" });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMultiIndex { indices, m: 0, reason: "indices must be strictly increasing" });
        }
        Ok(MultiIndex(indices))
    }
}

impl From<MultiIndex> for Vec<usize> {
    fn from(idx: MultiIndex) -> Self {
        idx.0
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| format!("dx{i}")).collect();
        write!(f, "{}", parts.join("∧"))
    }
}

/// `ω = Σ_I c_I dx_I` with constant coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FormRepr", into = "FormRepr")]
pub struct ConstantForm {
    n: usize,
    m: usize,
    coeffs: BTreeMap<MultiIndex, f64>,
}

#[derive(Serialize, Deserialize)]
struct FormRepr {
    n: usize,
    m: usize,
    coeffs: Vec<CoeffRepr>,
}

#[derive(Serialize, Deserialize)]
struct CoeffRepr {
    #[serde(rename = "I")]
    index: Vec<usize>,
    c: f64,
}

impl TryFrom<FormRepr> for ConstantForm {
    type Error = Error;

    fn try_from(repr: FormRepr) -> Result<Self> {
        ConstantForm::new(repr.n, repr.m, repr.coeffs.into_iter().map(|c| (c.index, c.c)))
    }
}

impl From<ConstantForm> for FormRepr {
    fn from(form: ConstantForm) -> Self {
        FormRepr {
            n: form.n,
            m: form.m,
            coeffs: form.coeffs.into_iter().map(|(i, c)| CoeffRepr { index: i.0, c }).collect(),
        }
    }
}

impl ConstantForm {
    pub fn new(n: usize, m: usize, coeffs: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        if n == 0 || n > m {
            return Err(Error::InvalidForm(format!("need 1 ≤ n ≤ m, got n = {n}, m = {m}")));
        }
        let mut map = BTreeMap::new();
        for (indices, c) in coeffs {
            if !c.is_finite() {
                return Err(Error::InvalidForm(format!("non-finite coefficient {c} on {indices:?}")));
            }
            let idx = MultiIndex::new(indices, m)?;
            if idx.len() != n {
                return Err(Error::InvalidForm(format!(
                    "multi-index {} has length {} but the form has degree {n}",
                    idx,
                    idx.len()
                )));
            }
            if map.insert(idx.clone(), c).is_some() {
                return Err(Error::InvalidForm(format!("duplicate multi-index {idx}")));
            }
        }
        map.retain(|_, c| *c != 0.0);
        if map.is_empty() {
            return Err(Error::InvalidForm("all coefficients vanish".into()));
        }
        Ok(ConstantForm { n, m, coeffs: map })
    }

    /// `c · dx_I`.
    pub fn simple(n: usize, m: usize, indices: Vec<usize>, c: f64) -> Result<Self> {
        Self::new(n, m, [(indices, c)])
    }

    /// `dx₁ ∧ ⋯ ∧ dxₙ` in `Rᵐ`.
    pub fn standard(n: usize, m: usize) -> Result<Self> {
        Self::simple(n, m, (1..=n).collect(), 1.0)
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    pub fn ambient_dim(&self) -> usize {
        self.m
    }

    pub fn coefficients(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(i, c)| (i, *c))
    }

    pub fn coefficient(&self, idx: &MultiIndex) -> f64 {
        self.coeffs.get(idx).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.n, self.m, self.coeffs.iter().map(|(i, c)| (i.0.clone(), c * s)))
    }

    /// Euclidean norm of the coefficient vector. By Cauchy–Binet
    /// `Σ_I det(V_I)² = 1` on orthonormal frames, so this bounds the comass.
    pub fn coefficient_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// `ω(v₁, …, vₙ)` for the columns of an `m×n` matrix.
    pub fn evaluate(&self, columns: &DMatrix<f64>) -> Result<f64> {
        self.check_shape(columns)?;
        Ok(self.evaluate_unchecked(columns))
    }

    fn evaluate_unchecked(&self, columns: &DMatrix<f64>) -> f64 {
        self.coeffs.iter().map(|(idx, c)| c * linalg::minor_det(columns, &idx.rows())).sum()
    }

    /// Euclidean gradient of `V ↦ ω(V)` with respect to the matrix entries.
    fn gradient(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.m, self.n);
        for (idx, c) in &self.coeffs {
            let rows = idx.rows();
            let cof = linalg::cofactors(&linalg::row_minor(v, &rows));
            for (a, &r) in rows.iter().enumerate() {
                for j in 0..self.n {
                    g[(r, j)] += c * cof[(a, j)];
                }
            }
        }
        g
    }

    fn check_shape(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.m || a.ncols() != self.n {
            return Err(Error::DimensionMismatch {
                expected: format!("{}×{}", self.m, self.n),
                got: format!("{}×{}", a.nrows(), a.ncols()),
            });
        }
        Ok(())
    }

    /// The single-term value `|c|` when the form is `c · dx_I`.
    fn simple_comass(&self) -> Option<f64> {
        if self.coeffs.len() == 1 || self.n == 1 || self.n == self.m {
            // one term, a covector, or a top-degree form: the comass is the coefficient norm
            Some(self.coefficient_norm())
        } else {
            None
        }
    }
}

/// `⋆f*ω = Σ_I c_I J_I(Df)`.
pub fn pullback_star(form: &ConstantForm, jet: &Jet) -> Result<f64> {
    form.evaluate(&jet.df)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComassBudget {
    pub starts: usize,
    pub max_iters: usize,
    /// Stop a start once the frame moves less than this in Frobenius norm.
    pub tol: f64,
    pub random_samples: usize,
    pub seed: u64,
}

impl Default for ComassBudget {
    fn default() -> Self {
        ComassBudget { starts: 64, max_iters: 2000, tol: 1e-8, random_samples: 4096, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComassEstimate {
    /// Best `|ω(v₁,…,vₙ)|` found; attained by `frame`, hence a certified lower bound.
    pub value: f64,
    /// `‖c‖₂`, a certified upper bound.
    pub upper_bound: f64,
    /// True when the value is known analytically or meets the upper bound.
    pub exact: bool,
    /// True when the best ascent run met the frame-update tolerance.
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub frame: Option<DMatrix<f64>>,
}

/// `sup |ω(v₁,…,vₙ)|` over orthonormal `n`-frames.
pub fn comass(form: &ConstantForm, budget: &ComassBudget) -> ComassEstimate {
    let upper = form.coefficient_norm();
    if let Some(value) = form.simple_comass() {
        return ComassEstimate { value, upper_bound: upper, exact: true, converged: true, iterations: 0, frame: None };
    }

    // the search runs on ω / ‖c‖₂ so step sizes and stopping tests do not depend on scale
    let unit = match form.scaled(1.0 / upper) {
        Ok(f) if upper > 0.0 => f,
        _ => {
            return ComassEstimate {
                value: 0.0,
                upper_bound: upper,
                exact: true,
                converged: true,
                iterations: 0,
                frame: None,
            }
        }
    };
    let form = &unit;
    let (m, n) = (form.m, form.n);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut best = (0.0_f64, None::<DMatrix<f64>>);
    let consider = |v: &DMatrix<f64>, best: &mut (f64, Option<DMatrix<f64>>)| {
        let val = form.evaluate_unchecked(v).abs();
        if val > best.0 {
            *best = (val, Some(v.clone()));
        }
    };

    for _ in 0..budget.random_samples {
        if let Some(v) = random_frame(m, n, &mut rng) {
            consider(&v, &mut best);
        }
    }

    // coordinate frames of the support, then random starts
    let mut starts: Vec<DMatrix<f64>> = form
        .coeffs
        .keys()
        .map(|idx| {
            let mut v = DMatrix::zeros(m, n);
            for (j, r) in idx.rows().into_iter().enumerate() {
                v[(r, j)] = 1.0;
            }
            v
        })
        .collect();
    while starts.len() < budget.starts.max(1) {
        if let Some(v) = random_frame(m, n, &mut rng) {
            starts.push(v);
        }
    }

    let mut best_converged = false;
    let mut total_iters = 0;
    for start in starts.iter().take(budget.starts.max(1)) {
        let run = ascend(form, start.clone(), budget);
        total_iters += run.iterations;
        let val = form.evaluate_unchecked(&run.frame).abs();
        if val >= best.0 {
            best = (val, Some(run.frame));
            best_converged = run.converged;
        }
    }

    let exact = best.0 >= 1.0 - 1e-12;
    ComassEstimate {
        value: best.0 * upper,
        upper_bound: upper,
        exact,
        converged: exact || best_converged,
        iterations: total_iters,
        frame: best.1,
    }
}

struct AscentRun {
    frame: DMatrix<f64>,
    converged: bool,
    iterations: usize,
}

/// Riemannian gradient ascent of `|ω(V)|` on the Stiefel manifold with a
/// Gram–Schmidt retraction and Armijo backtracking.
fn ascend(form: &ConstantForm, mut v: DMatrix<f64>, budget: &ComassBudget) -> AscentRun {
    let mut value = form.evaluate_unchecked(&v);
    let sign = if value < 0.0 { -1.0 } else { 1.0 };
    value *= sign;
    let mut step = 1.0;
    for iter in 0..budget.max_iters {
        let g = form.gradient(&v) * sign;
        let vtg = v.transpose() * &g;
        let sym = (&vtg + vtg.transpose()) * 0.5;
        let xi = &g - &v * sym;
        let xi_norm2 = xi.norm_squared();
        if xi_norm2.sqrt() < budget.tol {
            return AscentRun { frame: v, converged: true, iterations: iter };
        }
        let mut t = step;
        let accepted = loop {
            if t < 1e-16 {
                break None;
            }
            if let Some(cand) = linalg::orthonormalize(&(&v + &xi * t)) {
                let cand_value = sign * form.evaluate_unchecked(&cand);
                if cand_value >= value + 1e-4 * t * xi_norm2 {
                    break Some((cand, cand_value));
                }
            }
            t *= 0.5;
        };
        let Some((cand, cand_value)) = accepted else {
            // no ascent direction left at machine precision
            return AscentRun { frame: v, converged: true, iterations: iter };
        };
        let moved = (&cand - &v).norm();
        v = cand;
        value = cand_value;
        step = (t * 2.0).min(4.0);
        if moved < budget.tol {
            return AscentRun { frame: v, converged: true, iterations: iter + 1 };
        }
    }
    AscentRun { frame: v, converged: false, iterations: budget.max_iters }
}

fn random_frame(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Option<DMatrix<f64>> {
    let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    linalg::orthonormalize(&a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet(df: DMatrix<f64>) -> Jet {
        Jet { x: vec![0.0; df.ncols()], value: vec![0.0; df.nrows()], df }
    }

    #[test]
    fn multi_index_validation() {
        assert!(MultiIndex::new(vec![1, 2], 3).is_ok());
        assert!(MultiIndex::new(vec![2, 1], 3).is_err());
        assert!(MultiIndex::new(vec![1, 1], 3).is_err());
        assert!(MultiIndex::new(vec![0, 1], 3).is_err());
        assert!(MultiIndex::new(vec![1, 4], 3).is_err());
        assert_eq!(MultiIndex::all(2, 4).len(), 6);
        assert_eq!(MultiIndex::new(vec![1, 3], 3).unwrap().to_string(), "dx1∧dx3");
    }

    #[test]
    fn form_validation() {
        assert!(ConstantForm::new(3, 2, [(vec![1, 2, 3], 1.0)]).is_err());
        assert!(ConstantForm::new(2, 3, [(vec![1, 2], 0.0)]).is_err());
        assert!(ConstantForm::new(2, 3, [(vec![1], 1.0)]).is_err());
        assert!(ConstantForm::new(2, 3, [(vec![1, 2], 1.0), (vec![1, 2], 2.0)]).is_err());
        assert!(ConstantForm::new(2, 3, [(vec![1, 2], f64::NAN)]).is_err());
    }

    #[test]
    fn json_round_trip_and_schema() {
        let text = r#"{"n":2,"m":3,"coeffs":[{"I":[1,2],"c":1.0}]}"#;
        let form: ConstantForm = serde_json::from_str(text).unwrap();
        assert_eq!(form, ConstantForm::standard(2, 3).unwrap());
        assert_eq!(serde_json::to_string(&form).unwrap(), text);
        let bad = r#"{"n":2,"m":3,"coeffs":[{"I":[2,1],"c":1.0}]}"#;
        assert!(serde_json::from_str::<ConstantForm>(bad).is_err());
    }

    #[test]
    fn comass_of_simple_forms_is_exact() {
        let w = ConstantForm::standard(2, 3).unwrap();
        let est = comass(&w, &ComassBudget::default());
        assert_eq!(est.value, 1.0);
        assert!(est.exact);

        let w = ConstantForm::simple(2, 4, vec![1, 3], 5.0).unwrap();
        assert_eq!(comass(&w, &ComassBudget::default()).value, 5.0);

        let w = ConstantForm::simple(2, 4, vec![2, 4], -3.0).unwrap();
        assert_eq!(comass(&w, &ComassBudget::default()).value, 3.0);
    }

    #[test]
    fn comass_of_symplectic_form_is_one() {
        let w = ConstantForm::new(2, 4, [(vec![1, 2], 1.0), (vec![3, 4], 1.0)]).unwrap();
        let est = comass(&w, &ComassBudget::default());
        assert!((est.value - 1.0).abs() < 1e-9, "{}", est.value);
        assert!(est.converged);
        assert!((est.upper_bound - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pullback_star_examples() {
        let w = ConstantForm::standard(2, 2).unwrap();
        assert_eq!(pullback_star(&w, &jet(DMatrix::identity(2, 2))).unwrap(), 1.0);

        let w = ConstantForm::standard(2, 3).unwrap();
        let df = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        assert_eq!(pullback_star(&w, &jet(df)).unwrap(), 2.0);

        let wrong = DMatrix::zeros(2, 2);
        assert!(matches!(pullback_star(&w, &jet(wrong)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn pullback_star_flips_sign_on_column_swap() {
        let w = ConstantForm::new(2, 3, [(vec![1, 2], 0.7), (vec![2, 3], -1.3)]).unwrap();
        let df = DMatrix::from_row_slice(3, 2, &[0.3, 1.1, -0.4, 2.0, 1.5, 0.2]);
        let mut swapped = df.clone();
        swapped.swap_columns(0, 1);
        let a = pullback_star(&w, &jet(df)).unwrap();
        let b = pullback_star(&w, &jet(swapped)).unwrap();
        assert!((a + b).abs() < 1e-14);
    }
}

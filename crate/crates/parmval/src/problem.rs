//! Problem-definition files, bundled fixtures, reports, and coefficient
//! file serialization.
//!
//! A problem file declares the polynomial field (with coefficients that may
//! be expressions over named parameters), an equilibrium guess, the side of
//! the spectrum wanted, and the eigenvector normalization. Building a
//! problem runs the whole front end: realize the field (negating it first
//! for unstable manifolds - time reversal), Newton for the equilibrium,
//! eigenpairs, stable-subspace selection, and the non-resonance check.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Expr, PolyVectorField, TermSpec};
use crate::parm::{ManifoldProblem, Parameterization};
use crate::series::{GradedOrdering, Scaling, VectorSeq};
use crate::spectrum::{eigenpairs, select_and_pair, NonResonance, Normalization};

const EQUILIBRIUM_TOL: f64 = 1e-13;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum NumberOrExpr {
    Num(f64),
    Expr(String),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct TermFile {
    pub target: usize,
    pub exponents: Vec<u32>,
    pub coeff: NumberOrExpr,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationFile {
    #[default]
    Unit,
    Anchor,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
pub struct ProblemFile {
    pub schema: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub n: usize,
    pub variables: Vec<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, NumberOrExpr>,
    pub terms: Vec<TermFile>,
    pub equilibrium_guess: Vec<f64>,
    pub stability: Stability,
    #[serde(default)]
    pub normalization: NormalizationFile,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<ProblemFile> {
        let file: ProblemFile = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("{e} (line {}, column {})", e.line(), e.column())))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<ProblemFile> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::Schema(format!("unsupported schema version {}", self.schema)));
        }
        if self.variables.len() != self.n {
            return Err(Error::Schema(format!(
                "{} variable names for n = {}",
                self.variables.len(),
                self.n
            )));
        }
        if self.equilibrium_guess.len() != self.n {
            return Err(Error::Schema(format!(
                "equilibrium_guess has {} entries, expected {}",
                self.equilibrium_guess.len(),
                self.n
            )));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if t.target >= self.n {
                return Err(Error::Schema(format!(
                    "terms[{i}]: target {} out of range for n = {}",
                    t.target, self.n
                )));
            }
            if t.exponents.len() != self.n {
                return Err(Error::Schema(format!(
                    "terms[{i}]: exponent list has {} entries, expected {}",
                    t.exponents.len(),
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Resolve parameter expressions to numbers. Expressions may reference
    /// other parameters; resolution iterates until a fixed point.
    pub fn resolve_parameters(
        &self,
        overrides: &[(String, f64)],
    ) -> Result<BTreeMap<String, f64>> {
        let mut resolved: BTreeMap<String, f64> = BTreeMap::new();
        let mut pending: Vec<(&String, Expr)> = Vec::new();
        for (name, value) in &self.parameters {
            match value {
                NumberOrExpr::Num(x) => {
                    resolved.insert(name.clone(), *x);
                }
                NumberOrExpr::Expr(src) => pending.push((name, Expr::parse(src)?)),
            }
        }
        for _ in 0..=pending.len() {
            pending.retain(|(name, expr)| match expr.eval(&resolved) {
                Ok(v) => {
                    resolved.insert((*name).clone(), v);
                    false
                }
                Err(_) => true,
            });
            if pending.is_empty() {
                break;
            }
        }
        if let Some((name, _)) = pending.first() {
            return Err(Error::Schema(format!(
                "parameter {name:?} could not be resolved (unknown reference or cycle)"
            )));
        }
        for (name, value) in overrides {
            if !resolved.contains_key(name) {
                return Err(Error::Schema(format!("unknown parameter override {name:?}")));
            }
            resolved.insert(name.clone(), *value);
        }
        Ok(resolved)
    }

    /// Realize the polynomial field (negated when the unstable manifold was
    /// requested, so downstream code always works with the stable side).
    pub fn build_field(&self, overrides: &[(String, f64)]) -> Result<PolyVectorField> {
        let params = self.resolve_parameters(overrides)?;
        let specs: Result<Vec<TermSpec>> = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let coeff = match &t.coeff {
                    NumberOrExpr::Num(x) => Expr::Num(*x),
                    NumberOrExpr::Expr(src) => Expr::parse(src).map_err(|e| {
                        Error::Schema(format!("terms[{i}]: {e}"))
                    })?,
                };
                Ok(TermSpec { target: t.target, exponents: t.exponents.clone(), coeff })
            })
            .collect();
        let mut field = PolyVectorField::new(self.n, specs?, params)?;
        if self.stability == Stability::Unstable {
            field.negate()?;
        }
        Ok(field)
    }
}

/// Thresholds and truncation order for a run.
#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub order: usize,
    pub epsilon_max: f64,
    pub r_max: f64,
    pub overrides: Vec<(String, f64)>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { order: 30, epsilon_max: 1e-5, r_max: 1e-5, overrides: Vec::new() }
    }
}

/// Front end: field, equilibrium, spectrum, non-resonance.
pub fn build_problem(file: &ProblemFile, opts: &BuildOptions) -> Result<ManifoldProblem> {
    let field = file.build_field(&opts.overrides)?;
    let p = field.find_equilibrium(&file.equilibrium_guess, EQUILIBRIUM_TOL)?;
    let jac = field.jacobian(&p);
    let eigs = eigenpairs(&jac)?;
    let normalization = match file.normalization {
        NormalizationFile::Unit => Normalization::Unit,
        NormalizationFile::Anchor => Normalization::Anchor,
    };
    let spectral = select_and_pair(&p, &eigs, normalization)?;
    ManifoldProblem::new(field, spectral, opts.order, opts.epsilon_max, opts.r_max)
}

/// Bundled example problems.
pub mod fixtures {
    pub const LORENZ: &str = include_str!("../fixtures/lorenz.json");
    pub const FHN: &str = include_str!("../fixtures/fhn.json");
    pub const BRIDGE: &str = include_str!("../fixtures/bridge.json");

    pub fn names() -> &'static [&'static str] {
        &["lorenz", "fhn", "bridge"]
    }

    pub fn source(name: &str) -> Option<&'static str> {
        match name {
            "lorenz" => Some(LORENZ),
            "fhn" => Some(FHN),
            "bridge" => Some(BRIDGE),
            _ => None,
        }
    }
}

/// Load a problem file from a path, or a bundled fixture when the argument
/// matches a fixture name.
pub fn load_problem_source(source: &str) -> Result<ProblemFile> {
    if let Some(text) = fixtures::source(source) {
        return ProblemFile::parse(text);
    }
    ProblemFile::load(Path::new(source))
}

/// Eigenstructure report emitted by the front end.
#[derive(Debug, Serialize)]
pub struct SpectralReport {
    pub equilibrium: Vec<f64>,
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub eigenvectors: Vec<Vec<(f64, f64)>>,
    pub pairing: Vec<(usize, usize)>,
    pub min_abs_re: f64,
    pub nonresonance: NonResonance,
    pub time_reversed: bool,
}

pub fn spectral_report(problem: &ManifoldProblem) -> SpectralReport {
    SpectralReport {
        equilibrium: problem.spectral.equilibrium.clone(),
        eigenvalues: problem.spectral.lambdas.iter().map(|l| (l.re, l.im)).collect(),
        eigenvectors: problem
            .spectral
            .vectors
            .iter()
            .map(|v| v.iter().map(|z| (z.re, z.im)).collect())
            .collect(),
        pairing: problem.spectral.pairing.clone(),
        min_abs_re: problem.spectral.min_abs_re,
        nonresonance: problem.nonresonance,
        time_reversed: problem.field.is_negated(),
    }
}

/// Residual summary written next to the coefficients.
#[derive(Debug, Serialize)]
pub struct ResidualSummary {
    pub order: usize,
    /// `||F(a)||` at unit scaling.
    pub defect_at_unit_scaling: f64,
    pub per_component: Vec<f64>,
    /// Norm over the solved orders only (solver quality).
    pub truncated_norm: f64,
    pub residual_order_bound: usize,
}

pub fn residual_summary(
    problem: &ManifoldProblem,
    par: &Parameterization,
) -> Result<ResidualSummary> {
    let res = crate::parm::residual(problem, par)?;
    let per_component: Vec<f64> = res.components().iter().map(|c| c.ell1_norm(1.0)).collect();
    let ord = res.ordering().clone();
    let mut truncated = 0.0f64;
    for c in res.components() {
        let mut acc = 0.0;
        for pos in 0..ord.order_offset(problem.order) {
            acc += c.values()[pos].norm();
        }
        truncated = truncated.max(acc);
    }
    Ok(ResidualSummary {
        order: problem.order,
        defect_at_unit_scaling: per_component.iter().cloned().fold(0.0, f64::max),
        per_component,
        truncated_norm: truncated,
        residual_order_bound: problem.residual_order_bound() - 1,
    })
}

/// Write coefficients as JSON with 17 significant digits: per component an
/// array of `[[alpha...], re, im]` triples in graded order.
pub fn write_coefficients(path: &Path, par: &Parameterization) -> Result<()> {
    let a = &par.coeffs;
    let ord = a.ordering();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{{")?;
    writeln!(out, "  \"n\": {},", a.dim())?;
    writeln!(out, "  \"manifold_dim\": {},", ord.vars())?;
    writeln!(out, "  \"order\": {},", ord.max_order())?;
    let gamma: Vec<String> = par.gamma.entries().iter().map(|g| format!("{g:.16e}")).collect();
    writeln!(out, "  \"gamma\": [{}],", gamma.join(", "))?;
    writeln!(out, "  \"components\": [")?;
    for (i, comp) in a.components().iter().enumerate() {
        writeln!(out, "    [")?;
        for (pos, v) in comp.values().iter().enumerate() {
            let alpha: Vec<String> =
                ord.multi_index(pos).exponents().iter().map(|e| e.to_string()).collect();
            let sep = if pos + 1 == comp.values().len() { "" } else { "," };
            writeln!(
                out,
                "      [[{}], {:.16e}, {:.16e}]{sep}",
                alpha.join(", "),
                v.re,
                v.im
            )?;
        }
        let sep = if i + 1 == a.dim() { "" } else { "," };
        writeln!(out, "    ]{sep}")?;
    }
    writeln!(out, "  ]")?;
    writeln!(out, "}}")?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CoeffFile {
    n: usize,
    manifold_dim: usize,
    order: usize,
    gamma: Vec<f64>,
    components: Vec<Vec<(Vec<u32>, f64, f64)>>,
}

/// Read a coefficient file back into a parameterization.
pub fn read_coefficients(path: &Path) -> Result<Parameterization> {
    let text = std::fs::read_to_string(path)?;
    let file: CoeffFile = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{e} (line {}, column {})", e.line(), e.column())))?;
    if file.components.len() != file.n {
        return Err(Error::Schema(format!(
            "{} component arrays for n = {}",
            file.components.len(),
            file.n
        )));
    }
    let ord = GradedOrdering::new(file.manifold_dim, file.order)?;
    let mut coeffs = VectorSeq::zeros(ord.clone(), file.n);
    for (i, comp) in file.components.iter().enumerate() {
        for (alpha, re, im) in comp {
            let pos = ord.position(alpha).ok_or_else(|| {
                Error::Schema(format!("coefficient index {alpha:?} outside order {}", file.order))
            })?;
            coeffs.component_mut(i).values_mut()[pos] = Complex64::new(*re, *im);
        }
    }
    Ok(Parameterization { coeffs, gamma: Scaling::new(file.gamma)? })
}

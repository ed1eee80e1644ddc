//! The invariance operator for a manifold parameterization, its truncated
//! Newton solve, the order-by-order homological solve, the full residual,
//! and the defect criterion.
//!
//! For a field `g`, equilibrium `p`, stable eigenvalues `lambda` and
//! eigenvectors `V`, the operator acts on a coefficient sequence `a` as
//!
//! ```text
//! F_0(a)     = a_0 - p
//! F_{e_i}(a) = a_{e_i} - gamma_i V_i
//! F_alpha(a) = (alpha . lambda) a_alpha - (g o a)_alpha,   |alpha| >= 2
//! ```
//!
//! and `F(a) = 0` makes `a` the Taylor coefficients of a map conjugating the
//! flow of `g` to the linear flow of `diag(lambda)`. Rescaling the
//! eigenvectors by `gamma` multiplies `F_alpha` by `gamma^alpha`, which is
//! what makes re-validation under new scalings cheap.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{monomial_series, PolyVectorField};
use crate::linalg::{CMat, Lu};
use crate::series::{GradedOrdering, Scaling, VectorSeq};
use crate::spectrum::{check_nonresonance, NonResonance, SpectralData};

type C = Complex64;

const NEWTON_MAX_ITERS: usize = 30;
const NEWTON_STEP_TOL: f64 = 1e-13;
const NEWTON_RESIDUAL_TOL: f64 = 1e-12;
const HOMOLOGICAL_DET_TOL: f64 = 1e-12;

/// A manifold computation: field, spectral data, truncation order and the
/// two validity thresholds.
#[derive(Clone, Debug)]
pub struct ManifoldProblem {
    pub field: PolyVectorField,
    pub spectral: SpectralData,
    /// Truncation order N; coefficients are computed for `|alpha| < N`.
    pub order: usize,
    pub epsilon_max: f64,
    pub r_max: f64,
    pub nonresonance: NonResonance,
}

impl ManifoldProblem {
    pub fn new(
        field: PolyVectorField,
        spectral: SpectralData,
        order: usize,
        epsilon_max: f64,
        r_max: f64,
    ) -> Result<Self> {
        if order < 2 {
            return Err(Error::Schema(format!("order must be >= 2 (got {order})")));
        }
        if !(epsilon_max > 0.0) || !(r_max > 0.0) {
            return Err(Error::Schema("thresholds must be positive".into()));
        }
        if field.dim() != spectral.phase_dim() {
            return Err(Error::DimensionMismatch(
                "field and spectral data disagree on the phase dimension".into(),
            ));
        }
        // Guard the order-1 invariance: every (lambda, V) must be an actual
        // eigenpair of the field Jacobian at the equilibrium, or the chart
        // solves the wrong equation while the residual stays blind to it.
        let jac = field.jacobian(&spectral.equilibrium);
        let scale = jac
            .iter()
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(1.0f64, f64::max);
        for (l, v) in spectral.lambdas.iter().zip(&spectral.vectors) {
            let vmax = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
            let mut worst = 0.0f64;
            for i in 0..field.dim() {
                let mut acc = C::new(0.0, 0.0);
                for (j, vj) in v.iter().enumerate() {
                    acc += C::new(jac[i][j], 0.0) * vj;
                }
                worst = worst.max((acc - l * v[i]).norm());
            }
            if worst > 1e-10 * scale * vmax {
                return Err(Error::DefectiveMatrix(worst / vmax));
            }
        }
        let nonresonance = check_nonresonance(&spectral.lambdas)?;
        Ok(Self { field, spectral, order, epsilon_max, r_max, nonresonance })
    }

    pub fn phase_dim(&self) -> usize {
        self.field.dim()
    }

    pub fn manifold_dim(&self) -> usize {
        self.spectral.manifold_dim()
    }

    /// Ordering of the unknowns, `|alpha| < N`.
    pub fn ordering(&self) -> Result<Arc<GradedOrdering>> {
        GradedOrdering::new(self.manifold_dim(), self.order)
    }

    /// Orders carrying a nonzero residual run up to `d (N - 1)`.
    pub fn residual_order_bound(&self) -> usize {
        (self.field.degree() * (self.order - 1)).max(1) + 1
    }
}

/// A truncated coefficient sequence together with the scaling it realizes.
#[derive(Clone, Debug)]
pub struct Parameterization {
    pub coeffs: VectorSeq<f64>,
    pub gamma: Scaling<f64>,
}

impl Parameterization {
    /// Apply a further scaling to the coefficients (`gamma^alpha a_alpha`).
    pub fn rescaled(&self, gamma: &Scaling<f64>) -> Result<Parameterization> {
        let combined: Vec<f64> = self
            .gamma
            .entries()
            .iter()
            .zip(gamma.entries())
            .map(|(a, b)| a * b)
            .collect();
        Ok(Parameterization {
            coeffs: self.coeffs.rescale(gamma)?,
            gamma: Scaling::new(combined)?,
        })
    }
}

/// Seed sequence: equilibrium at order 0, eigenvectors at order 1.
fn linear_jet(problem: &ManifoldProblem) -> Result<VectorSeq<f64>> {
    let ord = problem.ordering()?;
    let n = problem.phase_dim();
    let m = problem.manifold_dim();
    let mut a = VectorSeq::zeros(ord.clone(), n);
    let p: Vec<C> = problem.spectral.equilibrium.iter().map(|&x| C::new(x, 0.0)).collect();
    a.set_coeff(0, &p);
    for i in 0..m {
        let pos = ord
            .position(crate::series::MultiIndex::unit(m, i).exponents())
            .expect("unit index present");
        a.set_coeff(pos, &problem.spectral.vectors[i]);
    }
    Ok(a)
}

/// Solve the homological equations order by order:
/// `[(alpha . lambda) I - Dg(p)] a_alpha = (nonlinear terms of lower order)`.
pub fn solve_homological(problem: &ManifoldProblem) -> Result<Parameterization> {
    let ord = problem.ordering()?;
    let n = problem.phase_dim();
    let mut a = linear_jet(problem)?;

    let jac_p = problem.field.jacobian(&problem.spectral.equilibrium);
    for k in 2..problem.order {
        // With the order-k slots still zero, the composition at order k is
        // exactly the inhomogeneity: the unknown a_alpha only enters paired
        // with order-zero factors, i.e. through Dg(p) a_alpha.
        let comp = problem.field.compose_series(&a, k + 1)?;
        for pos in ord.order_offset(k)..ord.order_offset(k + 1) {
            let alpha = ord.multi_index(pos).exponents();
            let dot = problem.spectral.alpha_dot_lambda(alpha);
            let mut block = CMat::zeros(n, n);
            for r in 0..n {
                for c in 0..n {
                    block[(r, c)] = C::new(-jac_p[r][c], 0.0);
                }
                block[(r, r)] += dot;
            }
            let lu = Lu::factor(&block).map_err(|_| Error::SingularHomological {
                order: alpha.to_vec(),
                det: 0.0,
            })?;
            let det = lu.det().norm();
            if det < HOMOLOGICAL_DET_TOL {
                return Err(Error::SingularHomological { order: alpha.to_vec(), det });
            }
            let rhs: Vec<C> = (0..n)
                .map(|i| {
                    comp.component(i).values()
                        [comp.ordering().position(alpha).expect("covers order k")]
                })
                .collect();
            let sol = lu.solve(&rhs);
            a.set_coeff(pos, &sol);
        }
    }
    Ok(Parameterization { coeffs: a, gamma: Scaling::ones(problem.manifold_dim()) })
}

/// Flat layout of the truncated unknowns: entry `pos * n + i` is component
/// `i` of the coefficient at graded position `pos`.
pub fn flatten(a: &VectorSeq<f64>) -> Vec<C> {
    let count = a.ordering().len();
    let n = a.dim();
    let mut x = vec![C::new(0.0, 0.0); count * n];
    for pos in 0..count {
        for i in 0..n {
            x[pos * n + i] = a.component(i).values()[pos];
        }
    }
    x
}

pub fn unflatten(ord: Arc<GradedOrdering>, n: usize, x: &[C]) -> VectorSeq<f64> {
    let mut a = VectorSeq::zeros(ord.clone(), n);
    for pos in 0..ord.len() {
        for i in 0..n {
            a.component_mut(i).values_mut()[pos] = x[pos * n + i];
        }
    }
    a
}

/// Truncated operator value `F^{[N]}(a)` in the flat layout.
pub fn truncated_f(problem: &ManifoldProblem, a: &VectorSeq<f64>) -> Result<Vec<C>> {
    let ord = a.ordering();
    let n = problem.phase_dim();
    let m = problem.manifold_dim();
    let comp = problem.field.compose_series(a, ord.max_order())?;
    let mut f = vec![C::new(0.0, 0.0); ord.len() * n];
    let p = &problem.spectral.equilibrium;
    for i in 0..n {
        f[i] = a.component(i).values()[0] - C::new(p[i], 0.0);
    }
    for k in 0..m {
        let pos = ord
            .position(crate::series::MultiIndex::unit(m, k).exponents())
            .expect("unit index");
        for i in 0..n {
            f[pos * n + i] = a.component(i).values()[pos] - problem.spectral.vectors[k][i];
        }
    }
    for pos in ord.order_offset(2)..ord.len() {
        let alpha = ord.multi_index(pos).exponents();
        let dot = problem.spectral.alpha_dot_lambda(alpha);
        for i in 0..n {
            f[pos * n + i] = dot * a.component(i).values()[pos] - comp.component(i).values()[pos];
        }
    }
    Ok(f)
}

/// Jacobian of the truncated operator in the flat layout, optionally with an
/// entrywise accumulation of absolute summands (used for rigorous rounding
/// radii; exact for fields of degree <= 2, where every entry is a short sum
/// of products of stored values with no intermediate convolutions).
///
/// The matrix is block lower triangular in the graded ordering: the
/// composition at order `|alpha|` only references coefficients with
/// `delta <= alpha`.
pub fn truncated_jacobian(
    problem: &ManifoldProblem,
    a: &VectorSeq<f64>,
    with_abs: bool,
) -> Result<(CMat, Option<Vec<f64>>)> {
    let ord = a.ordering();
    let n = problem.phase_dim();
    let count = ord.len();
    let dim = count * n;
    let mut df = CMat::zeros(dim, dim);
    let mut abs_acc = if with_abs { Some(vec![0.0f64; dim * dim]) } else { None };

    let first_order2 = ord.order_offset(2);
    // Constraint rows are identities.
    for pos in 0..first_order2 {
        for i in 0..n {
            df[(pos * n + i, pos * n + i)] = C::new(1.0, 0.0);
        }
    }
    // Diagonal (alpha . lambda) part.
    for pos in first_order2..count {
        let dot = problem.spectral.alpha_dot_lambda(ord.multi_index(pos).exponents());
        for i in 0..n {
            df[(pos * n + i, pos * n + i)] = dot;
            if let Some(acc) = abs_acc.as_mut() {
                acc[(pos * n + i) * dim + pos * n + i] += dot.norm();
            }
        }
    }
    // Derivative of the composition: each term b y^beta and each j with
    // beta_j > 0 contributes -b_k beta_j (a^{beta - e_j})_{alpha - delta}
    // to the entry (alpha, i=k; delta, j).
    let mut memo: HashMap<(usize, u32), crate::series::CoeffSeq<f64>> = HashMap::new();
    let mut reduced = vec![0u32; n];
    for t in problem.field.terms() {
        if t.order() == 0 {
            continue;
        }
        for j in 0..n {
            let e = t.exponents[j];
            if e == 0 {
                continue;
            }
            reduced.copy_from_slice(&t.exponents);
            reduced[j] -= 1;
            let mult = e as f64;
            match monomial_series(a, &reduced, ord.max_order(), &mut memo)? {
                None => {
                    // Linear term: hits the block diagonal at every order >= 2.
                    for pos in first_order2..count {
                        for (k, &b) in t.coeff.iter().enumerate() {
                            if b == 0.0 {
                                continue;
                            }
                            let r = pos * n + k;
                            let c = pos * n + j;
                            df[(r, c)] -= C::new(b * mult, 0.0);
                            if let Some(acc) = abs_acc.as_mut() {
                                acc[r * dim + c] += (b * mult).abs();
                            }
                        }
                    }
                }
                Some(p) => {
                    let p_ord = p.ordering().clone();
                    let mut alpha = vec![0u32; p_ord.vars()];
                    for (tau_pos, pv) in p.values().iter().enumerate() {
                        if pv.re == 0.0 && pv.im == 0.0 {
                            continue;
                        }
                        let tau = p_ord.multi_index(tau_pos).exponents();
                        let tau_order = p_ord.order_of(tau_pos);
                        for delta_pos in 0..count {
                            let delta_order = ord.order_of(delta_pos);
                            if (tau_order + delta_order) as usize >= ord.max_order() {
                                continue;
                            }
                            if tau_order + delta_order < 2 {
                                continue; // constraint rows stay identities
                            }
                            let delta = ord.multi_index(delta_pos).exponents();
                            for (x, (u, v)) in alpha.iter_mut().zip(tau.iter().zip(delta.iter())) {
                                *x = u + v;
                            }
                            let alpha_pos = ord.position(&alpha).expect("inside ordering");
                            let contrib = pv * mult;
                            for (k, &b) in t.coeff.iter().enumerate() {
                                if b == 0.0 {
                                    continue;
                                }
                                let r = alpha_pos * n + k;
                                let c = delta_pos * n + j;
                                df[(r, c)] -= contrib * b;
                                if let Some(acc) = abs_acc.as_mut() {
                                    acc[r * dim + c] += (contrib * b).norm();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((df, abs_acc))
}

/// Block forward substitution for the (block lower triangular) truncated
/// Jacobian; stands in for a full LU factorization.
pub fn solve_block_lower(df: &CMat, rhs: &[C], ord: &GradedOrdering, n: usize) -> Result<Vec<C>> {
    let count = ord.len();
    let mut x = rhs.to_vec();
    let mut blk = CMat::zeros(n, n);
    for pos in 0..count {
        for i in 0..n {
            let row = df.row(pos * n + i);
            let mut acc = C::new(0.0, 0.0);
            for (q, xv) in x[..pos * n].iter().enumerate() {
                acc += row[q] * xv;
            }
            x[pos * n + i] -= acc;
        }
        for i in 0..n {
            for j in 0..n {
                blk[(i, j)] = df[(pos * n + i, pos * n + j)];
            }
        }
        let lu = Lu::factor(&blk).map_err(|_| Error::SingularHomological {
            order: ord.multi_index(pos).exponents().to_vec(),
            det: 0.0,
        })?;
        let sol = lu.solve(&x[pos * n..pos * n + n]);
        x[pos * n..pos * n + n].copy_from_slice(&sol);
    }
    Ok(x)
}

/// Newton iteration on the truncated operator. The default start is the
/// linear jet (equilibrium and eigenvectors, zero above order 1).
pub fn newton_solve(
    problem: &ManifoldProblem,
    initial: Option<&VectorSeq<f64>>,
) -> Result<Parameterization> {
    let ord = problem.ordering()?;
    let n = problem.phase_dim();
    let mut a = match initial {
        Some(a0) => a0.clone(),
        None => linear_jet(problem)?,
    };
    for _ in 0..NEWTON_MAX_ITERS {
        let f = truncated_f(problem, &a)?;
        let residual = x_norm_flat(&f, &ord, n);
        let (df, _) = truncated_jacobian(problem, &a, false)?;
        let step = solve_block_lower(&df, &f, &ord, n)?;
        let step_norm = x_norm_flat(&step, &ord, n);
        let mut x = flatten(&a);
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        a = unflatten(ord.clone(), n, &x);
        // Tolerances scale with the coefficient size: evaluating the
        // operator leaves rounding noise proportional to the magnitudes
        // flowing through the convolutions, so absolute thresholds are
        // unreachable once coefficients grow large.
        let scale = 1.0f64.max(x_norm_flat(&x, &ord, n));
        if step_norm < NEWTON_STEP_TOL * scale && residual < NEWTON_RESIDUAL_TOL * scale {
            return Ok(Parameterization {
                coeffs: a,
                gamma: Scaling::ones(problem.manifold_dim()),
            });
        }
    }
    Err(Error::NonConvergence(format!(
        "Newton on the truncated operator exceeded {NEWTON_MAX_ITERS} iterations"
    )))
}

/// Product-space norm (max over components of l1 norms, nu = 1) of a flat
/// vector.
pub fn x_norm_flat(x: &[C], ord: &GradedOrdering, n: usize) -> f64 {
    let mut norms = vec![0.0f64; n];
    for pos in 0..ord.len() {
        for (i, norm) in norms.iter_mut().enumerate() {
            *norm += x[pos * n + i].norm();
        }
    }
    norms.into_iter().fold(0.0, f64::max)
}

/// Full residual `F(a)` through every order that can be nonzero
/// (`|alpha| <= d (N - 1)`); identically zero beyond.
pub fn residual(problem: &ManifoldProblem, par: &Parameterization) -> Result<VectorSeq<f64>> {
    let n = problem.phase_dim();
    let m = problem.manifold_dim();
    let bound = problem.residual_order_bound();
    let out_ord = GradedOrdering::new(m, bound)?;
    let comp = problem.field.compose_series(&par.coeffs, bound)?;
    let mut res = VectorSeq::zeros(out_ord.clone(), n);

    let p = &problem.spectral.equilibrium;
    for i in 0..n {
        res.component_mut(i).values_mut()[0] =
            par.coeffs.component(i).values()[0] - C::new(p[i], 0.0);
    }
    for k in 0..m {
        let unit = crate::series::MultiIndex::unit(m, k);
        let pos = out_ord.position(unit.exponents()).expect("unit index");
        for i in 0..n {
            let scaled_v =
                problem.spectral.vectors[k][i] * C::new(par.gamma.entries()[k], 0.0);
            res.component_mut(i).values_mut()[pos] =
                par.coeffs.component(i).get(unit.exponents()) - scaled_v;
        }
    }
    for pos in out_ord.order_offset(2)..out_ord.len() {
        let alpha = out_ord.multi_index(pos).exponents();
        let dot = problem.spectral.alpha_dot_lambda(alpha);
        for i in 0..n {
            let a_alpha = par.coeffs.component(i).get(alpha);
            res.component_mut(i).values_mut()[pos] =
                dot * a_alpha - comp.component(i).values()[pos];
        }
    }
    Ok(res)
}

/// Cheap re-evaluation of the defect for arbitrary scalings: the residual
/// moduli are computed once and the defect at `gamma` is
/// `max_i sum_alpha |F_alpha^{(i)}| gamma^alpha`.
pub struct DefectEvaluator {
    ordering: Arc<GradedOrdering>,
    abs_residual: Vec<Vec<f64>>,
}

impl DefectEvaluator {
    /// Expects the parameterization at unit scaling; its residual is the
    /// profile every rescaled defect is derived from.
    pub fn new(problem: &ManifoldProblem, par: &Parameterization) -> Result<Self> {
        let res = residual(problem, par)?;
        let ordering = res.ordering().clone();
        let abs_residual = res
            .components()
            .iter()
            .map(|c| c.values().iter().map(|z| z.norm()).collect())
            .collect();
        Ok(Self { ordering, abs_residual })
    }

    /// Evaluator over an explicit residual-magnitude profile; diagnostics
    /// and synthetic-profile tests.
    pub fn from_abs_profile(ordering: Arc<GradedOrdering>, abs_residual: Vec<Vec<f64>>) -> Self {
        Self { ordering, abs_residual }
    }

    pub fn ordering(&self) -> &Arc<GradedOrdering> {
        &self.ordering
    }

    pub fn abs_residual(&self) -> &[Vec<f64>] {
        &self.abs_residual
    }

    /// `max_i sum_alpha |F_alpha^{(i)}| gamma^alpha`.
    pub fn eval(&self, gamma: &Scaling<f64>) -> f64 {
        let pows = gamma.pow_table(self.ordering.max_order());
        let mut worst = 0.0f64;
        for comp in &self.abs_residual {
            let mut acc = 0.0;
            for (pos, &v) in comp.iter().enumerate() {
                if v != 0.0 {
                    acc += v * pows.weight(self.ordering.multi_index(pos).exponents());
                }
            }
            worst = worst.max(acc);
        }
        worst
    }

    pub fn is_defect_valid(&self, gamma: &Scaling<f64>, epsilon_max: f64) -> bool {
        self.eval(gamma) < epsilon_max
    }
}

/// One-shot defect; prefer [`DefectEvaluator`] when probing many scalings.
pub fn defect(
    problem: &ManifoldProblem,
    par: &Parameterization,
    gamma: &Scaling<f64>,
) -> Result<f64> {
    Ok(DefectEvaluator::new(problem, par)?.eval(gamma))
}

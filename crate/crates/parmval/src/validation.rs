//! Contraction bounds and radii polynomials for rigorous validation.
//!
//! Around an approximate zero `a` of the invariance operator, a Newton-like
//! map `T = I - A F` is built from an approximate inverse `A`: a dense
//! numeric inverse of the truncated Jacobian on orders `< N`, and the exact
//! diagonal `1 / (alpha . lambda)` beyond. Four bounds control `T` on a ball
//! of radius `r` around the (rescaled) coefficients:
//!
//! * `Y`  — residual after one application: `||(L A F(a))^(i)||`,
//! * `Z0` — defect of the approximate inverse: column norms of `I - A DF`,
//! * `Z1` — truncation tail of the Jacobian approximation,
//! * `Z2` — second-derivative (curvature) term, degree <= 2 only.
//!
//! If `P_i(r) = Y_i + (Z0_i + Z1_i - 1) r + Z2_i r^2 < 0` for every
//! component at some `r <= r_max`, the map is a contraction there and a true
//! coefficient sequence lies within `r` of the approximation. All quantities
//! carry an explicit scaling dependence, so probing a new `gamma` reuses the
//! expensive artifacts (the inverse, the product `A DF`, the residual image)
//! and costs only weighted column scans.
//!
//! In interval mode every bound is an upper endpoint of an outward-rounded
//! enclosure; the dense product `A DF` is enclosed by a floating midpoint
//! product plus a rigorous error matrix rather than entrywise intervals.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::PolyVectorField;
use crate::interval::{abs_up, add_up, div_up, mul_down, mul_up, ComplexInterval};
use crate::linalg::{
    invert_block_lower_triangular, matmul_abs_lower, matmul_block_lower, CMat, RMat,
};
use crate::parm::{residual, truncated_jacobian, ManifoldProblem, Parameterization};
use crate::scalar::Scalar;
use crate::series::{CoeffSeq, GradedOrdering, Scaling, VectorSeq};

type C = Complex64;
type CI = ComplexInterval<f64>;

/// Relative slack applied to nonnegative floating accumulations that must be
/// upper bounds (covers the accumulation rounding of the error-matrix GEMM).
const NONNEG_SUM_SLACK: f64 = 1.0 + 1e-10;
/// Multiplier on `u * abs_acc` bounding the assembly error of the truncated
/// Jacobian (each entry is a sum of a handful of exact products).
const JACOBIAN_ROUNDING_FLOPS: f64 = 8.0;

/// Approximate inverse of the operator Jacobian: dense numeric inverse on
/// orders `< N`, exact diagonal `1 / (alpha . lambda)` on the tail.
pub struct ApproxInverse {
    pub finite_block: CMat,
    pub ordering: Arc<GradedOrdering>,
    pub phase_dim: usize,
    pub lambdas: Vec<C>,
}

impl ApproxInverse {
    pub fn flat_dim(&self) -> usize {
        self.ordering.len() * self.phase_dim
    }

    /// Tail multiplier `1 / (alpha . lambda)` for `|alpha| >= N`.
    pub fn tail_multiplier(&self, alpha: &[u32]) -> C {
        let mut dot = C::new(0.0, 0.0);
        for (&e, l) in alpha.iter().zip(&self.lambdas) {
            dot += C::new(e as f64, 0.0) * l;
        }
        C::new(1.0, 0.0) / dot
    }
}

/// Build the approximate inverse at the unit-scaling parameterization.
pub fn build_approx_inverse(
    problem: &ManifoldProblem,
    par: &Parameterization,
) -> Result<ApproxInverse> {
    let ord = par.coeffs.ordering().clone();
    let n = problem.phase_dim();
    let (df, _) = truncated_jacobian(problem, &par.coeffs, false)?;
    let finite_block = invert_block_lower_triangular(&df, n)?;
    Ok(ApproxInverse {
        finite_block,
        ordering: ord,
        phase_dim: n,
        lambdas: problem.spectral.lambdas.clone(),
    })
}

/// l1-induced operator norms of a finite block matrix in the graded layout:
/// `K[i][j] = max_beta nu^{-|beta|} sum_alpha |B^{(i,j)}_{alpha,beta}| nu^{|alpha|}`.
pub fn operator_norm_k(
    b: &CMat,
    ordering: &GradedOrdering,
    n: usize,
    nu: f64,
) -> Vec<Vec<f64>> {
    let count = ordering.len();
    let mut k = vec![vec![0.0f64; n]; n];
    let mut nu_pows = Vec::with_capacity(ordering.max_order());
    let mut acc = 1.0;
    for _ in 0..ordering.max_order() {
        nu_pows.push(acc);
        acc *= nu;
    }
    for cb in 0..count {
        for j in 0..n {
            let col = cb * n + j;
            let mut sums = vec![0.0f64; n];
            for rb in 0..count {
                let w = nu_pows[ordering.order_of(rb) as usize];
                for (i, s) in sums.iter_mut().enumerate() {
                    *s += b[(rb * n + i, col)].norm() * w;
                }
            }
            let winv = 1.0 / nu_pows[ordering.order_of(cb) as usize];
            for i in 0..n {
                let cand = sums[i] * winv;
                if cand > k[i][j] {
                    k[i][j] = cand;
                }
            }
        }
    }
    k
}

/// Directed arithmetic selector for the bound evaluations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    /// Plain floating point (fast search mode).
    Nearest,
    /// Outward rounding; results are certified upper bounds.
    Upward,
}

impl Rounding {
    #[inline]
    fn add(self, a: f64, b: f64) -> f64 {
        match self {
            Rounding::Nearest => a + b,
            Rounding::Upward => add_up(a, b),
        }
    }
    #[inline]
    fn mul(self, a: f64, b: f64) -> f64 {
        match self {
            Rounding::Nearest => a * b,
            Rounding::Upward => mul_up(a, b),
        }
    }
    #[inline]
    fn div(self, a: f64, b: f64) -> f64 {
        match self {
            Rounding::Nearest => a / b,
            Rounding::Upward => div_up(a, b),
        }
    }
}

/// Per-position weights `gamma^alpha` (upper bounds in upward mode) and
/// `gamma^{-alpha}` for the column side.
struct GammaWeights {
    w: Vec<f64>,
    w_inv: Vec<f64>,
}

fn gamma_weights(gamma: &Scaling<f64>, ordering: &GradedOrdering, dir: Rounding) -> GammaWeights {
    let vars = ordering.vars();
    let max = ordering.max_order();
    // Per-variable power ladders, rounded outward so products stay bounds.
    let mut up = vec![vec![1.0f64; max + 1]; vars];
    let mut inv_up = vec![vec![1.0f64; max + 1]; vars];
    for (k, &g) in gamma.entries().iter().enumerate() {
        let ginv = dir.div(1.0, g);
        for e in 1..=max {
            up[k][e] = dir.mul(up[k][e - 1], g);
            inv_up[k][e] = dir.mul(inv_up[k][e - 1], ginv);
        }
    }
    let weight = |table: &[Vec<f64>], alpha: &[u32]| -> f64 {
        let mut acc = 1.0;
        for (k, &e) in alpha.iter().enumerate() {
            if e > 0 {
                acc = dir.mul(acc, table[k][e as usize]);
            }
        }
        acc
    };
    let mut w = Vec::with_capacity(ordering.len());
    let mut w_inv = Vec::with_capacity(ordering.len());
    for idx in ordering.indices() {
        w.push(weight(&up, idx.exponents()));
        w_inv.push(weight(&inv_up, idx.exponents()));
    }
    GammaWeights { w, w_inv }
}

/// Scaling-conjugated operator norms from a precomputed magnitude matrix
/// stored column-major: `K[i][j] = max_beta gamma^{-beta} sum_alpha
/// mag[alpha,beta] gamma^alpha`.
fn knorm_weighted(
    mag_by_col: &RMat,
    ordering: &GradedOrdering,
    n: usize,
    weights: &GammaWeights,
    dir: Rounding,
) -> Vec<Vec<f64>> {
    let count = ordering.len();
    let dim = count * n;
    let mut k = vec![vec![0.0f64; n]; n];
    let mut sums = vec![0.0f64; n];
    for col in 0..dim {
        let pos_b = col / n;
        let j = col % n;
        sums.iter_mut().for_each(|s| *s = 0.0);
        let entries = mag_by_col.row(col);
        for (row, &v) in entries.iter().enumerate() {
            if v != 0.0 {
                let i = row % n;
                sums[i] = dir.add(sums[i], dir.mul(v, weights.w[row / n]));
            }
        }
        for i in 0..n {
            let cand = dir.mul(sums[i], weights.w_inv[pos_b]);
            if cand > k[i][j] {
                k[i][j] = cand;
            }
        }
    }
    k
}

/// The four bounds at one scaling.
#[derive(Clone, Debug, Serialize)]
pub struct BoundSet {
    pub gamma: Vec<f64>,
    pub y: Vec<f64>,
    pub z0: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
}

/// Radii polynomial outcome at one scaling.
#[derive(Clone, Debug, Serialize)]
pub struct RadiiReport {
    pub gamma: Vec<f64>,
    pub order: usize,
    pub interval_mode: bool,
    pub bounds: BoundSet,
    /// Per component `(Y, Z0 + Z1 - 1, Z2)`.
    pub polynomials: Vec<[f64; 3]>,
    pub root_interval: Option<(f64, f64)>,
    pub r_used: Option<f64>,
    pub verdict: bool,
    /// How injectivity of the approximate inverse is discharged.
    pub injectivity: String,
    pub used_from_scratch_fallback: bool,
}

/// Precomputed artifacts for cheap bound re-evaluation across scalings.
pub struct BoundEngine<'a> {
    problem: &'a ManifoldProblem,
    par: &'a Parameterization,
    pub inverse: ApproxInverse,
    interval_mode: bool,
    /// Upper bounds on `|v_alpha^{(i)}|` where `v = A F(a)`, per component,
    /// on the residual ordering.
    y_profile: Vec<Vec<f64>>,
    residual_ordering: Arc<GradedOrdering>,
    /// Magnitude bound of `I - A DF`, column-major.
    b_mag_by_col: RMat,
    /// Magnitude bound of the finite block of `A`, column-major.
    a_mag_by_col: RMat,
    /// `|a_alpha^{(i)}|` of the unit-scaling coefficients.
    abar_abs: Vec<Vec<f64>>,
    lin_sums: Vec<f64>,
    quad_terms: Vec<(usize, usize, Vec<f64>)>,
    /// `sum_{i,j} |b_{beta_{i,j}}^{(k)}|` with derivative multiplicities.
    quad_weights: Vec<f64>,
}

impl<'a> BoundEngine<'a> {
    /// Heavy, once per parameterization: inverse, enclosed `I - A DF`,
    /// residual image `A F(a)`.
    pub fn new(
        problem: &'a ManifoldProblem,
        par: &'a Parameterization,
        interval_mode: bool,
    ) -> Result<BoundEngine<'a>> {
        let inverse = build_approx_inverse(problem, par)?;
        Self::with_inverse(problem, par, inverse, interval_mode)
    }

    /// Build the artifacts around an externally supplied approximate
    /// inverse. The bounds are valid for any injective block plus the exact
    /// diagonal tail; a worse inverse just produces larger (but still
    /// certified) bounds.
    pub fn with_inverse(
        problem: &'a ManifoldProblem,
        par: &'a Parameterization,
        inverse: ApproxInverse,
        interval_mode: bool,
    ) -> Result<BoundEngine<'a>> {
        if problem.field.degree() > 2 {
            return Err(Error::UnsupportedDegree(problem.field.degree()));
        }
        let n = problem.phase_dim();
        let (df, df_abs) = truncated_jacobian(problem, &par.coeffs, interval_mode)?;

        let b_mag = enclose_one_minus_product(&inverse.finite_block, &df, df_abs.as_deref(), n, interval_mode);
        let a_mag = if interval_mode {
            inverse.finite_block.abs_up()
        } else {
            inverse.finite_block.abs()
        };

        let (y_profile, residual_ordering) =
            residual_image_profile(problem, par, &inverse, interval_mode)?;

        let abar_abs: Vec<Vec<f64>> = par
            .coeffs
            .components()
            .iter()
            .map(|c| {
                c.values()
                    .iter()
                    .map(|z| if interval_mode { abs_up(*z) } else { z.norm() })
                    .collect()
            })
            .collect();

        let quad_terms = problem.field.quadratic_terms();
        let mut quad_weights = vec![0.0f64; n];
        for (_, _, coeff) in &quad_terms {
            for (k, &b) in coeff.iter().enumerate() {
                // Both derivative slots of a quadratic monomial contribute.
                quad_weights[k] += 2.0 * b.abs();
            }
        }

        Ok(BoundEngine {
            problem,
            par,
            inverse,
            interval_mode,
            y_profile,
            residual_ordering,
            b_mag_by_col: b_mag.transpose(),
            a_mag_by_col: a_mag.transpose(),
            abar_abs,
            lin_sums: problem.field.linear_abs_sums(),
            quad_terms,
            quad_weights,
        })
    }

    pub fn interval_mode(&self) -> bool {
        self.interval_mode
    }

    fn dir(&self) -> Rounding {
        if self.interval_mode {
            Rounding::Upward
        } else {
            Rounding::Nearest
        }
    }

    /// `Y^{(i)}(gamma) = sum_alpha |v_alpha^{(i)}| gamma^alpha`.
    pub fn bound_y(&self, gamma: &Scaling<f64>) -> Vec<f64> {
        let dir = self.dir();
        let weights = gamma_weights(gamma, &self.residual_ordering, dir);
        self.y_profile
            .iter()
            .map(|comp| {
                let mut acc = 0.0;
                for (pos, &v) in comp.iter().enumerate() {
                    if v != 0.0 {
                        acc = dir.add(acc, dir.mul(v, weights.w[pos]));
                    }
                }
                acc
            })
            .collect()
    }

    /// `Z0^{(i)}(gamma) = sum_j K^{(i,j)}` of the scaling-conjugated
    /// `I - A DF`.
    pub fn bound_z0(&self, gamma: &Scaling<f64>) -> Vec<f64> {
        let dir = self.dir();
        let n = self.problem.phase_dim();
        let weights = gamma_weights(gamma, &self.inverse.ordering, dir);
        let k = knorm_weighted(&self.b_mag_by_col, &self.inverse.ordering, n, &weights, dir);
        (0..n)
            .map(|i| k[i].iter().fold(0.0, |a, &b| dir.add(a, b)))
            .collect()
    }

    /// Scaled norms `||(L(a))^{(i)}||` used by the Z1 bound.
    fn scaled_coeff_norms(&self, gamma: &Scaling<f64>) -> Vec<f64> {
        let dir = self.dir();
        let ord = self.par.coeffs.ordering();
        let weights = gamma_weights(gamma, ord, dir);
        self.abar_abs
            .iter()
            .map(|comp| {
                let mut acc = 0.0;
                for (pos, &v) in comp.iter().enumerate() {
                    if v != 0.0 {
                        acc = dir.add(acc, dir.mul(v, weights.w[pos]));
                    }
                }
                acc
            })
            .collect()
    }

    /// Tail bound: linear and first-derivative quadratic contributions over
    /// `N min |Re lambda|`.
    pub fn bound_z1(&self, gamma: &Scaling<f64>) -> Vec<f64> {
        let dir = self.dir();
        let n = self.problem.phase_dim();
        let norms = self.scaled_coeff_norms(gamma);
        let denom = mul_denominator(self.problem, self.interval_mode);
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut numer = self.lin_sums[k];
            for (i, j, coeff) in &self.quad_terms {
                let b = coeff[k].abs();
                if b == 0.0 {
                    continue;
                }
                if i == j {
                    numer = dir.add(numer, dir.mul(2.0 * b, norms[*i]));
                } else {
                    numer = dir.add(numer, dir.mul(b, dir.add(norms[*i], norms[*j])));
                }
            }
            out.push(dir.div(numer, denom));
        }
        out
    }

    /// Curvature bound from the full action of `A` on the second derivative.
    pub fn bound_z2(&self, gamma: &Scaling<f64>) -> Vec<f64> {
        let dir = self.dir();
        let n = self.problem.phase_dim();
        let weights = gamma_weights(gamma, &self.inverse.ordering, dir);
        let k = knorm_weighted(&self.a_mag_by_col, &self.inverse.ordering, n, &weights, dir);
        let tail = dir.div(1.0, mul_denominator(self.problem, self.interval_mode));
        (0..n)
            .map(|kk| {
                let diag = k[kk][kk].max(tail);
                let mut acc = dir.mul(diag, self.quad_weights[kk]);
                for l in 0..n {
                    if l != kk {
                        acc = dir.add(acc, dir.mul(k[kk][l], self.quad_weights[l]));
                    }
                }
                acc
            })
            .collect()
    }

    /// All four bounds via the cheap scaling-conjugation route.
    pub fn bounds(&self, gamma: &Scaling<f64>) -> Result<BoundSet> {
        gamma.check_pairing(&self.problem.spectral.pairing)?;
        Ok(BoundSet {
            gamma: gamma.entries().to_vec(),
            y: self.bound_y(gamma),
            z0: self.bound_z0(gamma),
            z1: self.bound_z1(gamma),
            z2: self.bound_z2(gamma),
        })
    }

    /// From-scratch bounds at `gamma`: rescale the coefficients, rebuild the
    /// operator Jacobian there, conjugate the stored inverse explicitly, and
    /// redo the product. Slow path; used when the conjugated `Z0` becomes
    /// ill-conditioned, and as an independent cross-check of the cheap route.
    pub fn bounds_from_scratch(&self, gamma: &Scaling<f64>) -> Result<BoundSet> {
        gamma.check_pairing(&self.problem.spectral.pairing)?;
        let n = self.problem.phase_dim();
        let ord = self.inverse.ordering.clone();
        let scaled = self.par.rescaled(gamma)?;

        // Conjugated inverse L A L^{-1} as an explicit matrix.
        let plain = gamma_weights(gamma, &ord, Rounding::Nearest);
        let mut a_scaled = self.inverse.finite_block.clone();
        for rb in 0..ord.len() {
            for i in 0..n {
                let row = a_scaled.row_mut(rb * n + i);
                for cb in 0..ord.len() {
                    let f = plain.w[rb] * plain.w_inv[cb];
                    for j in 0..n {
                        row[cb * n + j] *= f;
                    }
                }
            }
        }

        let (df, df_abs) = truncated_jacobian(self.problem, &scaled.coeffs, self.interval_mode)?;
        let b_mag =
            enclose_one_minus_product(&a_scaled, &df, df_abs.as_deref(), n, self.interval_mode)
                .transpose();
        let a_mag =
            if self.interval_mode { a_scaled.abs_up() } else { a_scaled.abs() }.transpose();

        let scaled_inverse = ApproxInverse {
            finite_block: a_scaled,
            ordering: ord.clone(),
            phase_dim: n,
            lambdas: self.problem.spectral.lambdas.clone(),
        };
        let (y_profile, res_ord) =
            residual_image_profile(self.problem, &scaled, &scaled_inverse, self.interval_mode)?;

        let dir = self.dir();
        let ones = Scaling::ones(gamma.len());
        let unit_w = gamma_weights(&ones, &ord, dir);
        let y: Vec<f64> = y_profile
            .iter()
            .map(|comp| comp.iter().fold(0.0, |a, &b| dir.add(a, b)))
            .collect();
        let _ = res_ord;
        let kb = knorm_weighted(&b_mag, &ord, n, &unit_w, dir);
        let z0: Vec<f64> =
            (0..n).map(|i| kb[i].iter().fold(0.0, |a, &b| dir.add(a, b))).collect();

        // Z1 on the materialized rescaled coefficients.
        let denom = mul_denominator(self.problem, self.interval_mode);
        let norms: Vec<f64> = scaled
            .coeffs
            .components()
            .iter()
            .map(|c| {
                c.values().iter().fold(0.0, |a, z| {
                    dir.add(a, if self.interval_mode { abs_up(*z) } else { z.norm() })
                })
            })
            .collect();
        let mut z1 = Vec::with_capacity(n);
        for k in 0..n {
            let mut numer = self.lin_sums[k];
            for (i, j, coeff) in &self.quad_terms {
                let b = coeff[k].abs();
                if b == 0.0 {
                    continue;
                }
                if i == j {
                    numer = dir.add(numer, dir.mul(2.0 * b, norms[*i]));
                } else {
                    numer = dir.add(numer, dir.mul(b, dir.add(norms[*i], norms[*j])));
                }
            }
            z1.push(dir.div(numer, denom));
        }

        let ka = knorm_weighted(&a_mag, &ord, n, &unit_w, dir);
        let tail = dir.div(1.0, denom);
        let z2: Vec<f64> = (0..n)
            .map(|kk| {
                let diag = ka[kk][kk].max(tail);
                let mut acc = dir.mul(diag, self.quad_weights[kk]);
                for l in 0..n {
                    if l != kk {
                        acc = dir.add(acc, dir.mul(ka[kk][l], self.quad_weights[l]));
                    }
                }
                acc
            })
            .collect();

        Ok(BoundSet { gamma: gamma.entries().to_vec(), y, z0, z1, z2 })
    }

    /// Radii-polynomial verdict at a scaling. Falls back to the from-scratch
    /// route when the conjugated `Z0` blows past 1 (the known instability of
    /// reusing `I - A DF` across scalings).
    pub fn proof_report(&self, gamma: &Scaling<f64>) -> Result<RadiiReport> {
        let mut bounds = self.bounds(gamma)?;
        let mut fallback = false;
        if bounds.z0.iter().any(|&z| z >= 1.0) {
            bounds = self.bounds_from_scratch(gamma)?;
            fallback = true;
        }
        Ok(self.report_from_bounds(bounds, fallback))
    }

    fn report_from_bounds(&self, bounds: BoundSet, fallback: bool) -> RadiiReport {
        let n = self.problem.phase_dim();
        let polynomials: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                [
                    bounds.y[i],
                    bounds.z0[i] + bounds.z1[i] - 1.0,
                    bounds.z2[i],
                ]
            })
            .collect();
        let root_interval = radii_root_interval(&bounds);
        let z0_max = bounds.z0.iter().fold(0.0f64, |a, &b| a.max(b));

        let mut r_used = None;
        let mut verdict = false;
        if let Some((r0, r1)) = root_interval {
            let candidate = pick_r(r0, r1, self.problem.r_max);
            if let Some(r) = candidate {
                // Certify the candidate with outward rounding regardless of
                // the search mode used to find it.
                if verify_negative(&bounds, r) && z0_max < 1.0 {
                    r_used = Some(r);
                    verdict = true;
                }
            }
        }
        let injectivity = if verdict {
            format!(
                "finite block: Z0 = {z0_max:.3e} < 1; tail: nonresonant spectrum keeps every \
                 alpha.lambda away from zero (min real part {:.3e})",
                self.problem.spectral.min_abs_re
            )
        } else {
            "not certified".into()
        };
        RadiiReport {
            gamma: bounds.gamma.clone(),
            order: self.problem.order,
            interval_mode: self.interval_mode,
            polynomials,
            root_interval,
            r_used,
            verdict,
            injectivity,
            used_from_scratch_fallback: fallback,
            bounds,
        }
    }
}

fn mul_denominator(problem: &ManifoldProblem, interval_mode: bool) -> f64 {
    let n = problem.order as f64;
    let m = problem.spectral.min_abs_re;
    if interval_mode {
        mul_down(n, m)
    } else {
        n * m
    }
}

/// Magnitude upper bound of `I - A DF`.
///
/// In interval mode the floating midpoint product is corrected by a rigorous
/// error matrix: `|A DF_true - fl(A DF_mid)| <= c_gemm |A| |DF_mid| + |A| DF_rad`
/// entrywise, with `c_gemm` a conservative complex dot-product constant and
/// `DF_rad = 8 u * abs_acc` the assembly radius of the Jacobian entries.
fn enclose_one_minus_product(
    a_inv: &CMat,
    df: &CMat,
    df_abs: Option<&[f64]>,
    block: usize,
    interval_mode: bool,
) -> RMat {
    let dim = a_inv.rows;
    let p = matmul_block_lower(a_inv, df, block);
    let mut mag = RMat::zeros(dim, dim);
    if !interval_mode {
        for r in 0..dim {
            for c in 0..dim {
                let mut v = p[(r, c)];
                if r == c {
                    v = C::new(1.0, 0.0) - v;
                } else {
                    v = -v;
                }
                mag.data[r * dim + c] = v.norm();
            }
        }
        return mag;
    }

    let abs_acc = df_abs.expect("interval mode carries the jacobian abs accumulation");
    let u = f64::EPSILON * 0.5;
    let c_gemm = 4.0 * (dim as f64 + 4.0) * u;
    // W = c_gemm |DF| + DF_rad, then E = |A| W (nonnegative floating product
    // inflated to an upper bound).
    let df_mag = df.abs_up();
    let mut w = RMat::zeros(dim, dim);
    for idx in 0..dim * dim {
        let rad = JACOBIAN_ROUNDING_FLOPS * u * abs_acc[idx];
        w.data[idx] = add_up(mul_up(c_gemm, df_mag.data[idx]), rad);
    }
    let a_mag = a_inv.abs_up();
    let e = matmul_abs_lower(&a_mag, &w, block);
    for r in 0..dim {
        for c in 0..dim {
            let mut v = p[(r, c)];
            if r == c {
                v = C::new(1.0, 0.0) - v;
            } else {
                v = -v;
            }
            // One extra step outward covers the subtraction above.
            let err = mul_up(e.data[r * dim + c], NONNEG_SUM_SLACK);
            mag.data[r * dim + c] = add_up(abs_up(v).step_up(), err);
        }
    }
    mag
}

/// Upper bounds on `|(A F(a))_alpha^{(i)}|` over the residual ordering.
/// The finite rows apply the dense block; tail rows divide by
/// `alpha . lambda`.
fn residual_image_profile(
    problem: &ManifoldProblem,
    par: &Parameterization,
    inverse: &ApproxInverse,
    interval_mode: bool,
) -> Result<(Vec<Vec<f64>>, Arc<GradedOrdering>)> {
    let n = problem.phase_dim();
    let ord = &inverse.ordering;
    let count = ord.len();

    if !interval_mode {
        let res = residual(problem, par)?;
        let res_ord = res.ordering().clone();
        // Flat finite part in the graded layout.
        let mut f_finite = vec![C::new(0.0, 0.0); count * n];
        for pos in 0..count {
            let alpha = ord.multi_index(pos).exponents();
            let rpos = res_ord.position(alpha).expect("residual covers orders < N");
            for i in 0..n {
                f_finite[pos * n + i] = res.component(i).values()[rpos];
            }
        }
        let v_finite = crate::linalg::matvec(&inverse.finite_block, &f_finite);
        let mut profile = vec![vec![0.0f64; res_ord.len()]; n];
        for pos in 0..count {
            for i in 0..n {
                profile[i][pos] = v_finite[pos * n + i].norm();
            }
        }
        for rpos in res_ord.order_offset(ord.max_order())..res_ord.len() {
            let alpha = res_ord.multi_index(rpos).exponents();
            let mult = inverse.tail_multiplier(alpha);
            for (i, prof) in profile.iter_mut().enumerate() {
                prof[rpos] = (res.component(i).values()[rpos] * mult).norm();
            }
        }
        return Ok((profile, res_ord));
    }

    // Interval route: enclose F(a), then apply A with interval products.
    let ires = residual_enclosure(problem, par)?;
    let res_ord = ires.ordering.clone();
    let mut profile = vec![vec![0.0f64; res_ord.len()]; n];
    // Finite rows: A^[N] (point) times the interval vector.
    let mut v = vec![CI::zero(); count * n];
    for (row, vr) in v.iter_mut().enumerate() {
        let arow = inverse.finite_block.row(row);
        let mut acc = CI::zero();
        for pos in 0..count {
            let alpha_pos = res_ord
                .position(ord.multi_index(pos).exponents())
                .expect("residual covers orders < N");
            for i in 0..n {
                let aval = arow[pos * n + i];
                if aval.re == 0.0 && aval.im == 0.0 {
                    continue;
                }
                acc = acc.add(&ires.values[i][alpha_pos].mul(&CI::point(aval)));
            }
        }
        *vr = acc;
    }
    for pos in 0..count {
        for i in 0..n {
            profile[i][pos] = v[pos * n + i].mod_upper();
        }
    }
    // Tail rows.
    for rpos in res_ord.order_offset(ord.max_order())..res_ord.len() {
        let alpha = res_ord.multi_index(rpos).exponents();
        let dot = interval_alpha_dot_lambda(alpha, &problem.spectral.lambdas);
        for (i, prof) in profile.iter_mut().enumerate() {
            let q = ires.values[i][rpos].div(&dot)?;
            prof[rpos] = q.mod_upper();
        }
    }
    Ok((profile, res_ord))
}

fn interval_alpha_dot_lambda(alpha: &[u32], lambdas: &[C]) -> CI {
    let mut acc = CI::zero();
    for (&e, l) in alpha.iter().zip(lambdas) {
        if e > 0 {
            acc = acc.add(&CI::point(*l).scale_real(e as f64));
        }
    }
    acc
}

/// Interval enclosure of the full residual `F(a)` (orders up to `d (N-1)`).
struct ResidualEnclosure {
    ordering: Arc<GradedOrdering>,
    /// Per component, per graded position.
    values: Vec<Vec<CI>>,
}

fn residual_enclosure(
    problem: &ManifoldProblem,
    par: &Parameterization,
) -> Result<ResidualEnclosure> {
    let n = problem.phase_dim();
    let m = problem.manifold_dim();
    let bound = problem.residual_order_bound();
    let ord = GradedOrdering::new(m, bound)?;
    let comp = compose_enclosure(&problem.field, &par.coeffs, bound)?;
    let mut values = vec![vec![CI::zero(); ord.len()]; n];

    for i in 0..n {
        let a0 = par.coeffs.component(i).values()[0];
        values[i][0] = CI::point(a0).sub(&CI::point(C::new(problem.spectral.equilibrium[i], 0.0)));
    }
    for k in 0..m {
        let unit = crate::series::MultiIndex::unit(m, k);
        let pos = ord.position(unit.exponents()).expect("unit index");
        let g = par.gamma.entries()[k];
        for (i, vals) in values.iter_mut().enumerate() {
            let scaled_v =
                CI::point(problem.spectral.vectors[k][i]).scale_real(g);
            vals[pos] = CI::point(par.coeffs.component(i).get(unit.exponents())).sub(&scaled_v);
        }
    }
    for pos in ord.order_offset(2)..ord.len() {
        let alpha = ord.multi_index(pos).exponents();
        let dot = interval_alpha_dot_lambda(alpha, &problem.spectral.lambdas);
        for (i, vals) in values.iter_mut().enumerate() {
            let a_alpha = CI::point(par.coeffs.component(i).get(alpha));
            vals[pos] = dot.mul(&a_alpha).sub(&comp[i][pos]);
        }
    }
    Ok(ResidualEnclosure { ordering: ord, values })
}

/// Interval composition `g o a` truncated to orders `< out_order`.
fn compose_enclosure(
    field: &PolyVectorField,
    a: &VectorSeq<f64>,
    out_order: usize,
) -> Result<Vec<Vec<CI>>> {
    let n = field.dim();
    let ord = GradedOrdering::new(a.ordering().vars(), out_order)?;
    let mut out = vec![vec![CI::zero(); ord.len()]; n];
    let mut memo: HashMap<(usize, u32), Vec<CI>> = HashMap::new();

    for t in field.terms() {
        if t.order() == 0 {
            for (k, &b) in t.coeff.iter().enumerate() {
                if b != 0.0 {
                    out[k][0] = out[k][0].add(&CI::point(C::new(b, 0.0)));
                }
            }
            continue;
        }
        let prod = interval_monomial(a, &t.exponents, &ord, &mut memo)?
            .expect("order >= 1 term has a factor");
        for (k, &b) in t.coeff.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (o, p) in out[k].iter_mut().zip(&prod) {
                *o = o.add(&p.scale_real(b));
            }
        }
    }
    Ok(out)
}

fn interval_monomial(
    a: &VectorSeq<f64>,
    exponents: &[u32],
    ord: &Arc<GradedOrdering>,
    memo: &mut HashMap<(usize, u32), Vec<CI>>,
) -> Result<Option<Vec<CI>>> {
    let mut prod: Option<Vec<CI>> = None;
    for (j, &e) in exponents.iter().enumerate() {
        if e == 0 {
            continue;
        }
        let pw = interval_power(a, j, e, ord, memo)?;
        prod = Some(match prod {
            None => pw,
            Some(p) => interval_conv(&p, &pw, ord),
        });
    }
    Ok(prod)
}

fn interval_power(
    a: &VectorSeq<f64>,
    j: usize,
    e: u32,
    ord: &Arc<GradedOrdering>,
    memo: &mut HashMap<(usize, u32), Vec<CI>>,
) -> Result<Vec<CI>> {
    if let Some(p) = memo.get(&(j, e)) {
        return Ok(p.clone());
    }
    let result = if e == 1 {
        let base: &CoeffSeq<f64> = a.component(j);
        let mut ext = vec![CI::zero(); ord.len()];
        for (pos, v) in base.values().iter().enumerate() {
            if let Some(p) = ord.position(base.ordering().multi_index(pos).exponents()) {
                ext[p] = CI::point(*v);
            }
        }
        ext
    } else {
        let lower = interval_power(a, j, e - 1, ord, memo)?;
        let first = interval_power(a, j, 1, ord, memo)?;
        interval_conv(&lower, &first, ord)
    };
    memo.insert((j, e), result.clone());
    Ok(result)
}

fn interval_conv(u: &[CI], v: &[CI], ord: &Arc<GradedOrdering>) -> Vec<CI> {
    let vars = ord.vars();
    let max_order = ord.max_order() as u32;
    let mut out = vec![CI::zero(); ord.len()];
    let mut sum = vec![0u32; vars];
    for (i, uv) in u.iter().enumerate() {
        if uv.re.lo == 0.0 && uv.re.hi == 0.0 && uv.im.lo == 0.0 && uv.im.hi == 0.0 {
            continue;
        }
        let ia = ord.multi_index(i);
        if ia.order() >= max_order {
            continue;
        }
        for (j, vv) in v.iter().enumerate() {
            let ib = ord.multi_index(j);
            if ia.order() + ib.order() >= max_order {
                continue;
            }
            if vv.re.lo == 0.0 && vv.re.hi == 0.0 && vv.im.lo == 0.0 && vv.im.hi == 0.0 {
                continue;
            }
            for (s, (x, y)) in sum.iter_mut().zip(ia.exponents().iter().zip(ib.exponents())) {
                *s = x + y;
            }
            let pos = ord.position(&sum).expect("inside ordering");
            out[pos] = out[pos].add(&uv.mul(vv));
        }
    }
    out
}

/// Negativity interval of the radii polynomials: per component the negative
/// range of `Y + (Z0 + Z1 - 1) r + Z2 r^2`, intersected.
pub fn radii_root_interval(bounds: &BoundSet) -> Option<(f64, f64)> {
    let mut r0 = 0.0f64;
    let mut r1 = f64::INFINITY;
    for i in 0..bounds.y.len() {
        let a = bounds.z2[i];
        let b = bounds.z0[i] + bounds.z1[i] - 1.0;
        let c = bounds.y[i];
        if b >= 0.0 {
            return None; // not contracting in the linear part
        }
        let (lo, hi) = if a == 0.0 {
            (c / -b, f64::INFINITY)
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc <= 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            (2.0 * c / (-b + sq), (-b + sq) / (2.0 * a))
        };
        r0 = r0.max(lo);
        r1 = r1.min(hi);
    }
    if r0 < r1 {
        Some((r0, r1))
    } else {
        None
    }
}

/// Candidate radius: nudge off the lower root, stay below both the upper
/// root and the proof threshold.
fn pick_r(r0: f64, r1: f64, r_max: f64) -> Option<f64> {
    let hi = r1.min(r_max);
    if r0 >= hi {
        return None;
    }
    let mut r = r0 * (1.0 + 1e-6);
    if r0 == 0.0 {
        r = hi * 1e-3;
    }
    if r >= hi {
        r = 0.5 * (r0 + hi);
    }
    (r > 0.0 && r < hi).then_some(r)
}

/// Outward-rounded check that every radii polynomial is negative at `r`.
pub fn verify_negative(bounds: &BoundSet, r: f64) -> bool {
    let r2 = mul_up(r, r);
    for i in 0..bounds.y.len() {
        let b = add_up(bounds.z0[i], bounds.z1[i]) - 1.0;
        let p = add_up(
            add_up(bounds.y[i], mul_up(b, r)),
            mul_up(bounds.z2[i], r2),
        );
        if !(p < 0.0) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::test_fields;
    use crate::parm::{solve_homological, test_problems};
    use crate::spectrum::{eigenpairs, select_and_pair, Normalization};

    fn bridge_engine(
        problem: &ManifoldProblem,
        par: &Parameterization,
        interval: bool,
    ) -> BoundEngine<'static> {
        // Tests keep problem/par alive for the duration; leak a reference.
        let problem: &'static ManifoldProblem = Box::leak(Box::new(problem.clone()));
        let par: &'static Parameterization = Box::leak(Box::new(par.clone()));
        BoundEngine::new(problem, par, interval).unwrap()
    }

    #[test]
    fn operator_norm_examples() {
        let ord = GradedOrdering::new(2, 3).unwrap();
        let n = 2;
        let dim = ord.len() * n;
        let id = CMat::identity(dim);
        let k = operator_norm_k(&id, &ord, n, 1.0);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(k[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
        // Single entry c at block (alpha, beta), components (1, 2):
        // K^{(1,2)} = |c| nu^{|alpha| - |beta|}.
        let mut b = CMat::zeros(dim, dim);
        let alpha_pos = ord.position(&[2, 0]).unwrap();
        let beta_pos = ord.position(&[1, 0]).unwrap();
        b[(alpha_pos * n, beta_pos * n + 1)] = C::new(-3.0, 4.0);
        let nu = 0.5;
        let k = operator_norm_k(&b, &ord, n, nu);
        assert!((k[0][1] - 5.0 * nu).abs() < 1e-14);
        assert_eq!(k[1][0], 0.0);
    }

    #[test]
    fn operator_norm_bounds_matrix_action() {
        // Monte-Carlo: ||(B c)^{(i)}|| <= sum_j K^{(i,j)} ||c^{(j)}||.
        let ord = GradedOrdering::new(2, 4).unwrap();
        let n = 2;
        let count = ord.len();
        let dim = count * n;
        let mut state = 12u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut b = CMat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                b[(r, c)] = C::new(rnd(), rnd());
            }
        }
        let k = operator_norm_k(&b, &ord, n, 1.0);
        for _ in 0..1000 {
            let c: Vec<C> = (0..dim).map(|_| C::new(rnd(), rnd())).collect();
            let bc = crate::linalg::matvec(&b, &c);
            let mut c_norms = vec![0.0f64; n];
            let mut bc_norms = vec![0.0f64; n];
            for pos in 0..count {
                for i in 0..n {
                    c_norms[i] += c[pos * n + i].norm();
                    bc_norms[i] += bc[pos * n + i].norm();
                }
            }
            for i in 0..n {
                let bound: f64 = (0..n).map(|j| k[i][j] * c_norms[j]).sum();
                assert!(bc_norms[i] <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn linear_diagonal_field_gives_diagonal_inverse() {
        let field = test_fields::linear(&[
            &[-1.0, 0.0, 0.0],
            &[0.0, -2.5, 0.0],
            &[0.0, 0.0, 4.0],
        ]);
        let jac = field.jacobian(&[0.0; 3]);
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 3], &eigs, Normalization::Anchor).unwrap();
        let problem = ManifoldProblem::new(field, sd, 5, 1e-5, 1e-5).unwrap();
        let par = solve_homological(&problem).unwrap();
        let inv = build_approx_inverse(&problem, &par).unwrap();
        let ord = inv.ordering.clone();
        let n = 3;
        let lam = [-1.0, -2.5, 4.0];
        for rb in 0..ord.len() {
            let alpha = ord.multi_index(rb).exponents();
            let dot = problem.spectral.alpha_dot_lambda(alpha);
            for i in 0..n {
                for cb in 0..ord.len() {
                    for j in 0..n {
                        let v = inv.finite_block[(rb * n + i, cb * n + j)];
                        if rb == cb && i == j {
                            let want = if ord.order_of(rb) < 2 {
                                C::new(1.0, 0.0)
                            } else {
                                C::new(1.0, 0.0) / (dot - C::new(lam[i], 0.0))
                            };
                            assert!((v - want).norm() < 1e-13);
                        } else {
                            assert!(v.norm() < 1e-13, "off-diagonal fill at ({rb},{i},{cb},{j})");
                        }
                    }
                }
            }
        }
        // Tail rule on a delta at |alpha| = N.
        let mult = inv.tail_multiplier(&[3, 2]);
        let dot = problem.spectral.alpha_dot_lambda(&[3, 2]);
        assert!((mult * dot - C::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bridge_finite_block_size() {
        let problem = test_problems::bridge_problem(1.0, 30);
        let par = solve_homological(&problem).unwrap();
        let inv = build_approx_inverse(&problem, &par).unwrap();
        assert_eq!(inv.flat_dim(), 4 * 465);
        assert_eq!(inv.finite_block.rows, 1860);
    }

    #[test]
    fn bridge_bounds_have_expected_magnitudes() {
        // Magnitude check at the production order: tiny Y and Z0.
        let problem30 = test_problems::bridge_problem(1.0, 30);
        let par30 = solve_homological(&problem30).unwrap();
        let engine30 = bridge_engine(&problem30, &par30, false);
        let b30 = engine30.bounds(&Scaling::ones(2)).unwrap();
        for i in 0..4 {
            assert!(b30.y[i] < 1e-10, "Y[{i}] = {:.3e}", b30.y[i]);
            assert!(b30.z0[i] < 1e-8, "Z0[{i}] = {:.3e}", b30.z0[i]);
        }

        // Closed-form structure at a cheaper order.
        let problem = test_problems::bridge_problem(1.0, 12);
        let par = solve_homological(&problem).unwrap();
        let engine = bridge_engine(&problem, &par, false);
        let ones = Scaling::ones(2);
        let b = engine.bounds(&ones).unwrap();
        for i in 0..4 {
            assert!(b.z0[i] < 1e-8, "Z0[{i}] = {:.3e}", b.z0[i]);
        }
        // Z1 closed forms for this field: (1 + ||a1|| + ||a2||), 1, 1, (1 + beta)
        // over N |Re lambda|.
        let denom = 12.0 * problem.spectral.min_abs_re;
        let n1 = par.coeffs.component(0).ell1_norm(1.0);
        let n2 = par.coeffs.component(1).ell1_norm(1.0);
        assert!((b.z1[0] - (1.0 + n1 + n2) / denom).abs() < 1e-12);
        assert!((b.z1[1] - 1.0 / denom).abs() < 1e-14);
        assert!((b.z1[2] - 1.0 / denom).abs() < 1e-14);
        assert!((b.z1[3] - 2.0 / denom).abs() < 1e-14);
        // Z2 = 2 max(K_D^{(1,1)}, 1/(N|Re|)) and 2 K_D^{(k,1)}.
        let ka = operator_norm_k(&engine.inverse.finite_block, &engine.inverse.ordering, 4, 1.0);
        assert!((b.z2[0] - 2.0 * ka[0][0].max(1.0 / denom)).abs() < 1e-12);
        for k in 1..4 {
            assert!((b.z2[k] - 2.0 * ka[k][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn cheap_and_scratch_bounds_agree() {
        let problem = test_problems::bridge_problem(1.0, 10);
        let par = solve_homological(&problem).unwrap();
        let engine = bridge_engine(&problem, &par, false);
        for g in [0.6, 1.0, 1.3] {
            let gamma = Scaling::uniform(2, g).unwrap();
            let cheap = engine.bounds(&gamma).unwrap();
            let scratch = engine.bounds_from_scratch(&gamma).unwrap();
            for i in 0..4 {
                let rel = |a: f64, b: f64| (a - b).abs() / (1.0 + a.abs().max(b.abs()));
                assert!(rel(cheap.y[i], scratch.y[i]) < 1e-9, "Y[{i}] at {g}");
                assert!(rel(cheap.z1[i], scratch.z1[i]) < 1e-9, "Z1[{i}] at {g}");
                assert!(rel(cheap.z2[i], scratch.z2[i]) < 1e-9, "Z2[{i}] at {g}");
                // Z0 is dominated by rounding noise in both routes; compare
                // loosely on the common magnitude.
                assert!(cheap.z0[i] < 1e-6 && scratch.z0[i] < 1e-6, "Z0[{i}] at {g}");
            }
        }
    }

    #[test]
    fn interval_bounds_dominate_floating_bounds() {
        let problem = test_problems::bridge_problem(1.0, 10);
        let par = solve_homological(&problem).unwrap();
        let fl = bridge_engine(&problem, &par, false);
        let iv = bridge_engine(&problem, &par, true);
        for g in [0.7, 1.0, 1.2] {
            let gamma = Scaling::uniform(2, g).unwrap();
            let a = fl.bounds(&gamma).unwrap();
            let b = iv.bounds(&gamma).unwrap();
            for i in 0..4 {
                assert!(b.y[i] >= a.y[i]);
                assert!(b.z0[i] >= a.z0[i]);
                assert!(b.z1[i] >= a.z1[i]);
                assert!(b.z2[i] >= a.z2[i]);
                // And not absurdly larger.
                assert!(b.z1[i] <= a.z1[i] * (1.0 + 1e-9) + 1e-12);
                assert!(b.z2[i] <= a.z2[i] * (1.0 + 1e-6) + 1e-9);
            }
        }
    }

    #[test]
    fn tail_action_is_contractive_on_tails() {
        // ||(A d)^{(i)}|| <= ||d^{(i)}|| / (N min |Re lambda|) for tail d.
        let problem = test_problems::bridge_problem(0.8, 8);
        let par = solve_homological(&problem).unwrap();
        let inv = build_approx_inverse(&problem, &par).unwrap();
        let res_ord = GradedOrdering::new(2, 2 * (8 - 1) + 1).unwrap();
        let denom = 8.0 * problem.spectral.min_abs_re;
        let mut state = 9000u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..50 {
            let mut d = vec![C::new(0.0, 0.0); res_ord.len()];
            let mut norm = 0.0;
            for pos in res_ord.order_offset(8)..res_ord.len() {
                let z = C::new(rnd(), rnd());
                norm += z.norm();
                d[pos] = z;
            }
            let mut image_norm = 0.0;
            for pos in res_ord.order_offset(8)..res_ord.len() {
                let alpha = res_ord.multi_index(pos).exponents();
                image_norm += (d[pos] * inv.tail_multiplier(alpha)).norm();
            }
            assert!(image_norm <= norm / denom * (1.0 + 1e-12));
        }
    }

    #[test]
    fn radii_root_interval_examples() {
        let mk = |y: f64, z0: f64, z1: f64, z2: f64| BoundSet {
            gamma: vec![1.0],
            y: vec![y],
            z0: vec![z0],
            z1: vec![z1],
            z2: vec![z2],
        };
        // Hand-checked quadratic: Y = 1e-10, Z2 = 1, slope -1.
        let (r0, r1) = radii_root_interval(&mk(1e-10, 0.0, 0.0, 1.0)).unwrap();
        assert!((r0 - 1.0000000001e-10).abs() < 1e-14);
        assert!((r1 - (1.0 - 1e-10)).abs() < 1e-9);
        // Not contracting.
        assert!(radii_root_interval(&mk(1e-10, 0.6, 0.5, 1.0)).is_none());
        // Y = 0: interval opens at zero.
        let (r0, r1) = radii_root_interval(&mk(0.0, 0.1, 0.1, 1.0)).unwrap();
        assert_eq!(r0, 0.0);
        assert!(r1 > 0.5);
        // Verification at a candidate radius is outward-rounded.
        let b = mk(1e-10, 0.0, 0.0, 1.0);
        assert!(verify_negative(&b, 1e-5));
        assert!(!verify_negative(&b, 2.0));
    }

    #[test]
    fn bridge_proof_succeeds_and_rejects_huge_scalings() {
        let problem = test_problems::bridge_problem(1.0, 20);
        let par = solve_homological(&problem).unwrap();
        let engine = bridge_engine(&problem, &par, true);
        let report = engine.proof_report(&Scaling::ones(2)).unwrap();
        assert!(report.verdict, "bounds: {:?}", report.bounds);
        assert!(report.r_used.unwrap() <= 1e-5);
        assert!(report.interval_mode);

        let huge = Scaling::uniform(2, 1e3).unwrap();
        let report = engine.proof_report(&huge).unwrap();
        assert!(!report.verdict);
    }

    #[test]
    fn ill_conditioned_cheap_z0_triggers_the_from_scratch_fallback() {
        // An identity "inverse" makes I - A DF large, pushing the cheap Z0
        // past 1; the report must fall back to the from-scratch route.
        let problem = test_problems::bridge_problem(1.0, 8);
        let par = solve_homological(&problem).unwrap();
        let ord = par.coeffs.ordering().clone();
        let n = problem.phase_dim();
        let bad = ApproxInverse {
            finite_block: CMat::identity(ord.len() * n),
            ordering: ord,
            phase_dim: n,
            lambdas: problem.spectral.lambdas.clone(),
        };
        let problem: &'static ManifoldProblem = Box::leak(Box::new(problem));
        let par: &'static Parameterization = Box::leak(Box::new(par.clone()));
        let engine = BoundEngine::with_inverse(problem, par, bad, false).unwrap();
        let report = engine.proof_report(&Scaling::ones(2)).unwrap();
        assert!(report.used_from_scratch_fallback);
        assert!(!report.verdict);
    }

    #[test]
    fn artificially_large_y_fails_the_proof() {
        let problem = test_problems::bridge_problem(1.0, 12);
        let par = solve_homological(&problem).unwrap();
        let engine = bridge_engine(&problem, &par, false);
        let mut bounds = engine.bounds(&Scaling::ones(2)).unwrap();
        // Push Y beyond r_max (1 - Z0 - Z1): no admissible radius remains.
        bounds.y = vec![2.0 * problem.r_max; 4];
        let report = engine.report_from_bounds(bounds, false);
        assert!(!report.verdict);
    }

    #[test]
    fn tail_bounds_dominate_brute_force_action_with_square_terms() {
        // Field with a pure square nonlinearity (y1^2): the derivative picks
        // up a factor 2 that the bound formulas must carry. Verify both tail
        // bounds against brute-force applications of the operator pieces.
        use crate::field::{Expr, TermSpec};
        let field = PolyVectorField::new(
            2,
            vec![
                TermSpec { target: 0, exponents: vec![1, 0], coeff: Expr::Num(-1.0) },
                TermSpec { target: 0, exponents: vec![2, 0], coeff: Expr::Num(0.7) },
                TermSpec { target: 1, exponents: vec![0, 1], coeff: Expr::Num(-2.4) },
                TermSpec { target: 1, exponents: vec![2, 0], coeff: Expr::Num(0.5) },
                TermSpec { target: 1, exponents: vec![1, 1], coeff: Expr::Num(-0.3) },
            ],
            Default::default(),
        )
        .unwrap();
        let jac = field.jacobian(&[0.0; 2]);
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 2], &eigs, Normalization::Unit).unwrap();
        let problem = ManifoldProblem::new(field, sd, 6, 1e-5, 1e-5).unwrap();
        let par = solve_homological(&problem).unwrap();
        let problem: &'static ManifoldProblem = Box::leak(Box::new(problem));
        let par: &'static Parameterization = Box::leak(Box::new(par.clone()));
        let engine = BoundEngine::new(problem, par, false).unwrap();
        let bounds = engine.bounds(&Scaling::ones(2)).unwrap();

        let n = 2;
        let ord = par.coeffs.ordering().clone();
        let res_ord = GradedOrdering::new(2, problem.residual_order_bound()).unwrap();
        // Derivative of the composition along c, exact for quadratic fields:
        // Dg(a)c = g(a + c) - g(a) - g2(c) with g2 the quadratic part.
        let quad_field = PolyVectorField::new(
            2,
            vec![
                TermSpec { target: 0, exponents: vec![2, 0], coeff: Expr::Num(0.7) },
                TermSpec { target: 1, exponents: vec![2, 0], coeff: Expr::Num(0.5) },
                TermSpec { target: 1, exponents: vec![1, 1], coeff: Expr::Num(-0.3) },
            ],
            Default::default(),
        )
        .unwrap();

        let mut worst_z1 = 0.0f64;
        let mut worst_z2 = 0.0f64;
        // Exhaustive unit-delta probes: every (position, component) pair has
        // unit X-norm and attains the columnwise structure of the bounds.
        let mut deltas = Vec::new();
        for pos in 0..ord.len() {
            for i in 0..n {
                let mut d = VectorSeq::<f64>::zeros(ord.clone(), n);
                d.component_mut(i).values_mut()[pos] = C::new(1.0, 0.0);
                deltas.push(d);
            }
        }
        let mut pairs = Vec::new();
        for (bi, b) in deltas.iter().enumerate() {
            pairs.push((b.clone(), b.clone()));
            pairs.push((b.clone(), deltas[(bi * 7 + 3) % deltas.len()].clone()));
        }
        for (b, c) in pairs {

            // Z1 route: (DF(a) - A_dag)c vanishes below order N; above, it is
            // -[Dg(a)c]_alpha, and the diagonal tail of A divides by
            // alpha.lambda.
            let bound_order = problem.residual_order_bound();
            let mut sum_ac = par.coeffs.clone();
            for i in 0..n {
                for (pos, v) in sum_ac.component_mut(i).values_mut().iter_mut().enumerate() {
                    *v += c.component(i).values()[pos];
                }
            }
            let g_sum = problem.field.compose_series(&sum_ac, bound_order).unwrap();
            let g_a = problem.field.compose_series(&par.coeffs, bound_order).unwrap();
            let g2_c = quad_field.compose_series(&c, bound_order).unwrap();
            let mut norms = vec![0.0f64; n];
            for pos in res_ord.order_offset(problem.order)..res_ord.len() {
                let alpha = res_ord.multi_index(pos).exponents();
                let dot = problem.spectral.alpha_dot_lambda(alpha);
                for i in 0..n {
                    let dgc = g_sum.component(i).values()[pos]
                        - g_a.component(i).values()[pos]
                        - g2_c.component(i).values()[pos];
                    norms[i] += (dgc / dot).norm();
                }
            }
            for i in 0..n {
                worst_z1 = worst_z1.max(norms[i] / bounds.z1[i]);
            }

            // Z2 route: the full second derivative as a series,
            // 2 G2(b, c) = g2(b + c) - g2(b) - g2(c) for quadratic fields;
            // finite rows go through the dense block, tail rows through the
            // exact diagonal.
            let mut bc = b.clone();
            for i in 0..n {
                for (pos, v) in bc.component_mut(i).values_mut().iter_mut().enumerate() {
                    *v += c.component(i).values()[pos];
                }
            }
            let g2_bc = quad_field.compose_series(&bc, bound_order).unwrap();
            let g2_b = quad_field.compose_series(&b, bound_order).unwrap();
            let g2_cc = quad_field.compose_series(&c, bound_order).unwrap();
            let count = ord.len();
            let mut w_finite = vec![C::new(0.0, 0.0); count * n];
            let mut tail_norms = vec![0.0f64; n];
            for pos in 0..res_ord.len() {
                let alpha = res_ord.multi_index(pos).exponents();
                for i in 0..n {
                    let d2 = g2_bc.component(i).values()[pos]
                        - g2_b.component(i).values()[pos]
                        - g2_cc.component(i).values()[pos];
                    if let Some(fin) = ord.position(alpha) {
                        w_finite[fin * n + i] = d2;
                    } else {
                        let dot = problem.spectral.alpha_dot_lambda(alpha);
                        tail_norms[i] += (d2 / dot).norm();
                    }
                }
            }
            let aw = crate::linalg::matvec(&engine.inverse.finite_block, &w_finite);
            let mut out_norms = tail_norms;
            for pos in 0..count {
                for i in 0..n {
                    out_norms[i] += aw[pos * n + i].norm();
                }
            }
            for i in 0..n {
                worst_z2 = worst_z2.max(out_norms[i] / bounds.z2[i]);
            }
        }
        assert!(worst_z1 <= 1.0 + 1e-9, "Z1 exceeded: ratio {worst_z1:.4}");
        assert!(worst_z2 <= 1.0 + 1e-9, "Z2 exceeded: ratio {worst_z2:.4}");
        // The attained fractions stay within a factor ~2 of the bounds, so a
        // missing derivative multiplicity (a factor 2 on square terms) would
        // push past 1 or show as gross slack.
        assert!(worst_z1 > 0.45, "Z1 slack too large: ratio {worst_z1:.4}");
        assert!(worst_z2 > 0.3, "Z2 slack too large: ratio {worst_z2:.4}");
    }

    #[test]
    fn degree_three_is_rejected_for_proof_bounds() {
        let field = {
            use crate::field::{Expr, TermSpec};
            let specs = vec![
                TermSpec { target: 0, exponents: vec![1, 0], coeff: Expr::Num(-1.0) },
                TermSpec { target: 1, exponents: vec![0, 1], coeff: Expr::Num(-2.5) },
                TermSpec { target: 1, exponents: vec![3, 0], coeff: Expr::Num(1.0) },
            ];
            PolyVectorField::new(2, specs, Default::default()).unwrap()
        };
        let jac = field.jacobian(&[0.0; 2]);
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 2], &eigs, Normalization::Unit).unwrap();
        let problem = ManifoldProblem::new(field, sd, 8, 1e-5, 1e-5).unwrap();
        let par = solve_homological(&problem).unwrap();
        let problem: &'static ManifoldProblem = Box::leak(Box::new(problem));
        let par: &'static Parameterization = Box::leak(Box::new(par.clone()));
        assert!(matches!(
            BoundEngine::new(problem, par, false),
            Err(Error::UnsupportedDegree(3))
        ));
    }
}

//! Eigenpairs of the equilibrium Jacobian, stable-subspace selection,
//! conjugate pairing, and the non-resonance check.
//!
//! The matrices here are tiny (phase dimension <= 10), so eigenvalues come
//! from the characteristic polynomial (Faddeev-LeVerrier) with simultaneous
//! root iteration, polished by Newton on det(J - lambda I) = 0; eigenvectors
//! follow by inverse iteration.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{CMat, Lu};
use crate::series::GradedOrdering;

type C = Complex64;

const TOL_HYP: f64 = 1e-10;
const TOL_RES: f64 = 1e-8;
const PAIR_TOL: f64 = 1e-9;

/// How eigenvectors are normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Normalization {
    /// Unit Euclidean norm, largest-modulus entry rotated real positive.
    Unit,
    /// Largest-modulus entry scaled to exactly 1.
    Anchor,
}

/// Stable (after any time reversal) eigenstructure at an equilibrium.
#[derive(Clone, Debug)]
pub struct SpectralData {
    pub equilibrium: Vec<f64>,
    pub lambdas: Vec<C>,
    pub vectors: Vec<Vec<C>>,
    /// Positions of conjugate pairs, each `(k, k+1)` with `Im > 0` first.
    pub pairing: Vec<(usize, usize)>,
    pub min_abs_re: f64,
}

impl SpectralData {
    pub fn manifold_dim(&self) -> usize {
        self.lambdas.len()
    }

    pub fn phase_dim(&self) -> usize {
        self.equilibrium.len()
    }

    /// `alpha . lambda = sum alpha_k lambda_k`.
    pub fn alpha_dot_lambda(&self, alpha: &[u32]) -> C {
        let mut acc = C::new(0.0, 0.0);
        for (&e, l) in alpha.iter().zip(&self.lambdas) {
            acc += C::new(e as f64, 0.0) * l;
        }
        acc
    }

    /// Mirror of a multi-index under conjugation: paired slots swap.
    pub fn conjugate_mirror(&self, alpha: &[u32]) -> Vec<u32> {
        let mut out = alpha.to_vec();
        for &(a, b) in &self.pairing {
            out.swap(a, b);
        }
        out
    }
}

/// All eigenpairs of a small real matrix.
pub fn eigenpairs(jac: &[Vec<f64>]) -> Result<Vec<(C, Vec<C>)>> {
    let n = jac.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    let coeffs = char_poly(jac);
    let mut roots = durand_kerner(&coeffs)?;
    let scale = matrix_scale(jac);
    for r in roots.iter_mut() {
        *r = polish_root(jac, *r, scale);
    }
    // Snap near-real roots before vector extraction.
    for r in roots.iter_mut() {
        if r.im.abs() <= PAIR_TOL * scale {
            r.im = 0.0;
        }
    }
    let mut out = Vec::with_capacity(n);
    for &r in &roots {
        let v = inverse_iteration(jac, r, scale)?;
        let resid = eigen_residual(jac, r, &v);
        if resid > 1e-10 * scale.max(1.0) {
            return Err(Error::DefectiveMatrix(resid));
        }
        out.push((r, v));
    }
    Ok(out)
}

/// Monic characteristic polynomial coefficients `[1, c1, ..., cn]` of a real
/// matrix, by the Faddeev-LeVerrier recurrence.
fn char_poly(jac: &[Vec<f64>]) -> Vec<f64> {
    let n = jac.len();
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut coeffs = vec![1.0];
    for k in 1..=n {
        // jm = J * M
        let mut jm = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..n {
                    acc += jac[i][t] * m[t][j];
                }
                jm[i][j] = acc;
            }
        }
        let tr: f64 = (0..n).map(|i| jm[i][i]).sum();
        let ck = -tr / k as f64;
        coeffs.push(ck);
        for i in 0..n {
            for j in 0..n {
                m[i][j] = jm[i][j] + if i == j { ck } else { 0.0 };
            }
        }
    }
    coeffs
}

/// Simultaneous iteration for all roots of a monic real polynomial.
fn durand_kerner(coeffs: &[f64]) -> Result<Vec<C>> {
    let deg = coeffs.len() - 1;
    let radius = 1.0 + coeffs.iter().skip(1).fold(0.0f64, |a, &c| a.max(c.abs()));
    let seed = C::new(0.4, 0.9);
    let mut z: Vec<C> = (0..deg)
        .map(|k| C::new(radius, 0.0) * seed.powu(k as u32 + 1))
        .collect();
    let eval = |x: C| -> C {
        let mut acc = C::new(0.0, 0.0);
        for &c in coeffs {
            acc = acc * x + C::new(c, 0.0);
        }
        acc
    };
    for _ in 0..500 {
        let mut worst: f64 = 0.0;
        for i in 0..deg {
            let mut denom = C::new(1.0, 0.0);
            for j in 0..deg {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                // Nudge coincident iterates apart.
                z[i] += C::new(1e-8 * radius, 1e-8 * radius);
                worst = f64::INFINITY;
                continue;
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            worst = worst.max(step.norm() / (1.0 + z[i].norm()));
        }
        if worst <= 1e-14 {
            return Ok(z);
        }
    }
    Err(Error::NonConvergence(
        "root iteration for the characteristic polynomial".into(),
    ))
}

fn matrix_scale(jac: &[Vec<f64>]) -> f64 {
    jac.iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
        .max(1e-300)
}

fn complex_shifted(jac: &[Vec<f64>], lambda: C) -> CMat {
    let n = jac.len();
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = C::new(jac[i][j], 0.0);
        }
        m[(i, i)] -= lambda;
    }
    m
}

/// A few Newton steps on det(J - lambda I) = 0, using
/// d/dlambda det(J - lambda I) = -det * tr((J - lambda I)^{-1}).
fn polish_root(jac: &[Vec<f64>], mut lambda: C, scale: f64) -> C {
    let n = jac.len();
    for _ in 0..4 {
        let m = complex_shifted(jac, lambda);
        let lu = match Lu::factor(&m) {
            Ok(lu) => lu,
            Err(_) => return lambda, // exactly singular: lambda is an eigenvalue
        };
        if lu.min_pivot() < 1e-14 * scale {
            return lambda;
        }
        let mut trace_inv = C::new(0.0, 0.0);
        let mut e = vec![C::new(0.0, 0.0); n];
        for k in 0..n {
            e.iter_mut().for_each(|x| *x = C::new(0.0, 0.0));
            e[k] = C::new(1.0, 0.0);
            trace_inv += lu.solve(&e)[k];
        }
        if trace_inv.norm() == 0.0 {
            return lambda;
        }
        let step = C::new(1.0, 0.0) / trace_inv;
        lambda += step;
        if step.norm() <= 1e-16 * (1.0 + lambda.norm()) {
            break;
        }
    }
    lambda
}

fn inverse_iteration(jac: &[Vec<f64>], lambda: C, scale: f64) -> Result<Vec<C>> {
    let n = jac.len();
    // Shift slightly off the (numerically exact) eigenvalue so the solve is
    // well posed; the solution aligns with the eigenvector regardless.
    let mut shift = lambda;
    let mut lu = None;
    for attempt in 0..4 {
        let m = complex_shifted(jac, shift);
        match Lu::factor(&m) {
            Ok(f) if f.min_pivot() > 1e-300 => {
                lu = Some(f);
                break;
            }
            _ => {
                let bump = scale * 1e-13 * (attempt + 1) as f64;
                shift = lambda + C::new(bump, bump);
            }
        }
    }
    let lu = lu.ok_or(Error::DefectiveMatrix(f64::INFINITY))?;
    let mut v: Vec<C> = (0..n).map(|k| C::new(1.0, 0.3 + 0.1 * k as f64)).collect();
    normalize(&mut v);
    let mut best = v.clone();
    let mut best_resid = f64::INFINITY;
    for _ in 0..40 {
        v = lu.solve(&v);
        normalize(&mut v);
        let r = eigen_residual(jac, lambda, &v);
        if r < best_resid {
            best_resid = r;
            best = v.clone();
        }
        if r <= 1e-13 * scale.max(1.0) {
            break;
        }
    }
    Ok(best)
}

fn normalize(v: &mut [C]) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        for z in v.iter_mut() {
            *z /= norm;
        }
    }
}

fn eigen_residual(jac: &[Vec<f64>], lambda: C, v: &[C]) -> f64 {
    let n = jac.len();
    let vmax = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max).max(1e-300);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut acc = C::new(0.0, 0.0);
        for j in 0..n {
            acc += C::new(jac[i][j], 0.0) * v[j];
        }
        worst = worst.max((acc - lambda * v[i]).norm());
    }
    worst / vmax
}

/// Select the stable half-spectrum (of the possibly time-reversed field),
/// arrange conjugate pairs adjacently, and normalize eigenvectors.
pub fn select_and_pair(
    equilibrium: &[f64],
    eigs: &[(C, Vec<C>)],
    normalization: Normalization,
) -> Result<SpectralData> {
    let scale = eigs.iter().map(|(l, _)| l.norm()).fold(0.0f64, f64::max).max(1.0);
    for (l, _) in eigs {
        if l.re.abs() < TOL_HYP {
            return Err(Error::NonHyperbolic(l.re.abs()));
        }
    }
    let mut stable: Vec<(C, Vec<C>)> =
        eigs.iter().filter(|(l, _)| l.re < 0.0).cloned().collect();
    if stable.is_empty() {
        return Err(Error::DimensionMismatch(
            "no eigenvalue on the requested stable side".into(),
        ));
    }
    // Sort: most negative real part first, +Im member of each pair first.
    stable.sort_by(|a, b| {
        (a.0.re, -a.0.im)
            .partial_cmp(&(b.0.re, -b.0.im))
            .expect("finite eigenvalues")
    });

    let m = stable.len();
    let mut lambdas = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    let mut pairing = Vec::new();
    let mut k = 0usize;
    while k < m {
        let (l, v) = &stable[k];
        if l.im.abs() <= PAIR_TOL * scale {
            // Real eigenvalue; strip rounding-level imaginary parts.
            let lam = C::new(l.re, 0.0);
            let mut vec = v.clone();
            realify(&mut vec);
            lambdas.push(lam);
            vectors.push(normalize_convention(vec, normalization));
            k += 1;
            continue;
        }
        // Complex: the sort placed the conjugate partner right after.
        if k + 1 >= m || (stable[k + 1].0 - l.conj()).norm() > PAIR_TOL * scale {
            return Err(Error::DimensionMismatch(
                "complex eigenvalue without its conjugate partner on the stable side".into(),
            ));
        }
        // Keep the +Im member's own eigenvector; rounding in the real parts
        // can land either member first in the sort.
        let (l, v) = if l.im > 0.0 { (l, v) } else { (&stable[k + 1].0, &stable[k + 1].1) };
        let lam = C::new(l.re, l.im.abs());
        let vec = normalize_convention(v.clone(), normalization);
        let conj_vec: Vec<C> = vec.iter().map(|z| z.conj()).collect();
        pairing.push((lambdas.len(), lambdas.len() + 1));
        lambdas.push(lam);
        lambdas.push(lam.conj());
        vectors.push(vec);
        vectors.push(conj_vec);
        k += 2;
    }

    let min_abs_re = lambdas.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    Ok(SpectralData {
        equilibrium: equilibrium.to_vec(),
        lambdas,
        vectors,
        pairing,
        min_abs_re,
    })
}

fn realify(v: &mut [C]) {
    let max_im = v.iter().map(|z| z.im.abs()).fold(0.0f64, f64::max);
    let max_re = v.iter().map(|z| z.re.abs()).fold(0.0f64, f64::max);
    if max_im > 1e-9 * max_re.max(1.0) {
        // Rotate the dominant entry onto the real axis first.
        let k = dominant_entry(v);
        let phase = v[k] / v[k].norm();
        for z in v.iter_mut() {
            *z /= phase;
        }
    }
    for z in v.iter_mut() {
        z.im = 0.0;
    }
}

/// First entry whose modulus is within a relative whisker of the maximum,
/// so ties produced by rounding stay deterministic.
fn dominant_entry(v: &[C]) -> usize {
    let max = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    v.iter().position(|z| z.norm() >= max * (1.0 - 1e-9)).unwrap_or(0)
}

fn normalize_convention(mut v: Vec<C>, normalization: Normalization) -> Vec<C> {
    let k = dominant_entry(&v);
    match normalization {
        Normalization::Anchor => {
            let anchor = v[k];
            for z in v.iter_mut() {
                *z /= anchor;
            }
            v[k] = C::new(1.0, 0.0);
        }
        Normalization::Unit => {
            let phase = v[k] / v[k].norm();
            for z in v.iter_mut() {
                *z /= phase;
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for z in v.iter_mut() {
                *z /= norm;
            }
        }
    }
    v
}

/// Outcome of the non-resonance scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NonResonance {
    /// All orders `2 <= |alpha| <= max_order_checked` were scanned.
    pub max_order_checked: usize,
    /// Smallest gap `|alpha . lambda - lambda_j|` seen.
    pub min_gap: f64,
}

/// Scan for integer relations `alpha . lambda = lambda_j`. Beyond
/// `max|Re| / min|Re|` the real parts alone rule a resonance out, so the
/// scan is finite.
pub fn check_nonresonance(lambdas: &[C]) -> Result<NonResonance> {
    let max_re = lambdas.iter().map(|l| l.re.abs()).fold(0.0f64, f64::max);
    let min_re = lambdas.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min);
    if !(min_re > 0.0) {
        return Err(Error::NonHyperbolic(min_re));
    }
    let max_order = (max_re / min_re).ceil() as usize + 1;
    let ordering = GradedOrdering::new(lambdas.len(), max_order + 1)?;
    let mut min_gap = f64::INFINITY;
    for pos in ordering.order_offset(2)..ordering.len() {
        let alpha = ordering.multi_index(pos).exponents();
        let mut dot = C::new(0.0, 0.0);
        for (&e, l) in alpha.iter().zip(lambdas) {
            dot += C::new(e as f64, 0.0) * l;
        }
        for (j, l) in lambdas.iter().enumerate() {
            let gap = (dot - l).norm();
            min_gap = min_gap.min(gap);
            if gap < TOL_RES {
                return Err(Error::ResonanceDetected { alpha: alpha.to_vec(), j, gap });
            }
        }
    }
    Ok(NonResonance { max_order_checked: max_order, min_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::test_fields;

    fn lorenz_jac() -> Vec<Vec<f64>> {
        test_fields::lorenz(10.0, 8.0 / 3.0, 28.0).jacobian(&[0.0, 0.0, 0.0])
    }

    #[test]
    fn diagonal_matrix_eigenpairs() {
        let jac = vec![
            vec![-1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ];
        let mut eigs = eigenpairs(&jac).unwrap();
        eigs.sort_by(|a, b| a.0.re.partial_cmp(&b.0.re).unwrap());
        let want = [-1.0, 2.0, 3.0];
        for (k, (l, v)) in eigs.iter().enumerate() {
            assert!((l - C::new(want[k], 0.0)).norm() < 1e-12);
            let dom = dominant_entry(v);
            for (i, z) in v.iter().enumerate() {
                if i == dom {
                    assert!((z.norm() - 1.0).abs() < 1e-12);
                } else {
                    assert!(z.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lorenz_eigenvalues_match_closed_form() {
        let sigma = 10.0f64;
        let beta = 8.0 / 3.0;
        let rho = 28.0;
        let eigs = eigenpairs(&lorenz_jac()).unwrap();
        let disc = ((sigma - 1.0).powi(2) + 4.0 * sigma * rho).sqrt();
        let l1 = -0.5 * (sigma + 1.0 + disc);
        let l3 = -0.5 * (sigma + 1.0 - disc);
        for want in [l1, -beta, l3] {
            assert!(
                eigs.iter().any(|(l, _)| (l - C::new(want, 0.0)).norm() < 1e-10),
                "missing eigenvalue {want}"
            );
        }
    }

    #[test]
    fn bridge_eigenvalues_match_closed_form() {
        let beta = 1.0;
        let jac = test_fields::bridge(beta).jacobian(&[0.0; 4]);
        let eigs = eigenpairs(&jac).unwrap();
        let re = 0.5 * (2.0f64 - beta).sqrt();
        let im = 0.5 * (2.0f64 + beta).sqrt();
        for (sr, si) in [(-re, im), (-re, -im), (re, im), (re, -im)] {
            assert!(
                eigs.iter().any(|(l, _)| (l - C::new(sr, si)).norm() < 1e-11),
                "missing eigenvalue {sr} + {si}i"
            );
        }
        assert!((im - 0.8660254).abs() < 1e-7);
    }

    #[test]
    fn lorenz_selection_and_ordering() {
        let eigs = eigenpairs(&lorenz_jac()).unwrap();
        let sd = select_and_pair(&[0.0; 3], &eigs, Normalization::Anchor).unwrap();
        assert_eq!(sd.manifold_dim(), 2);
        assert!((sd.lambdas[0].re + 22.82772345).abs() < 1e-7);
        assert!((sd.lambdas[1].re + 8.0 / 3.0).abs() < 1e-12);
        assert!(sd.pairing.is_empty());
        assert!((sd.min_abs_re - 8.0 / 3.0).abs() < 1e-12);
        // Anchored Lorenz eigenvectors, against the closed form.
        let sigma = 10.0;
        let l1 = sd.lambdas[0].re;
        assert!((sd.vectors[0][0].re - sigma / (l1 + sigma)).abs() < 1e-12);
        assert!((sd.vectors[0][1].re - 1.0).abs() < 1e-14);
        assert!(sd.vectors[0][2].norm() < 1e-12);
        assert!((sd.vectors[1][2].re - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bridge_pairing_is_exactly_conjugate() {
        let jac = test_fields::bridge(1.0).jacobian(&[0.0; 4]);
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 4], &eigs, Normalization::Anchor).unwrap();
        assert_eq!(sd.manifold_dim(), 2);
        assert_eq!(sd.pairing, vec![(0, 1)]);
        assert!(sd.lambdas[0].im > 0.0);
        assert_eq!(sd.lambdas[1], sd.lambdas[0].conj());
        assert!((sd.lambdas[0].re + 0.5).abs() < 1e-12);
        for (a, b) in sd.vectors[0].iter().zip(&sd.vectors[1]) {
            assert_eq!(a.conj(), *b);
        }
        // Anchored to the first entry: V = (1, l, l^2, l^3).
        let l = sd.lambdas[0];
        assert!((sd.vectors[0][0] - C::new(1.0, 0.0)).norm() < 1e-13);
        assert!((sd.vectors[0][1] - l).norm() < 1e-11);
        assert!((sd.vectors[0][2] - l * l).norm() < 1e-11);
        assert!((sd.vectors[0][3] - l * l * l).norm() < 1e-11);
    }

    #[test]
    fn one_dimensional_stable_line() {
        let jac = vec![vec![-2.0, 1.0], vec![0.0, 3.0]];
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 2], &eigs, Normalization::Unit).unwrap();
        assert_eq!(sd.manifold_dim(), 1);
        assert!((sd.lambdas[0] - C::new(-2.0, 0.0)).norm() < 1e-12);
        let norm: f64 = sd.vectors[0].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-13);
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let eigs = eigenpairs(&lorenz_jac()).unwrap();
        let sd = select_and_pair(&[0.0; 3], &eigs, Normalization::Unit).unwrap();
        for v in &sd.vectors {
            let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn conjugation_permutes_spectral_data() {
        let jac = test_fields::bridge(0.7).jacobian(&[0.0; 4]);
        let eigs = eigenpairs(&jac).unwrap();
        let sd = select_and_pair(&[0.0; 4], &eigs, Normalization::Anchor).unwrap();
        for &(a, b) in &sd.pairing {
            assert_eq!(sd.lambdas[a].conj(), sd.lambdas[b]);
            for (x, y) in sd.vectors[a].iter().zip(&sd.vectors[b]) {
                assert_eq!(x.conj(), *y);
            }
        }
    }

    #[test]
    fn non_hyperbolic_rejected() {
        let jac = vec![vec![0.0, 1.0], vec![-1.0, 0.0]]; // pure rotation
        let eigs_raw = eigenpairs(&jac).unwrap();
        assert!(matches!(
            select_and_pair(&[0.0; 2], &eigs_raw, Normalization::Unit),
            Err(Error::NonHyperbolic(_))
        ));
    }

    #[test]
    fn nonresonance_examples() {
        // Lorenz: the eigenvalue ratio ~ 8.56 admits no low-order relation.
        let l1 = C::new(-22.827723451163457, 0.0);
        let l2 = C::new(-8.0 / 3.0, 0.0);
        let report = check_nonresonance(&[l1, l2]).unwrap();
        assert!(report.max_order_checked >= 9);
        // Oracle: exhaustive loop over |alpha| <= 10.
        let mut min_gap = f64::INFINITY;
        for a1 in 0..=10u32 {
            for a2 in 0..=10u32 {
                if a1 + a2 < 2 || a1 + a2 > 10 {
                    continue;
                }
                let dot = C::new(a1 as f64, 0.0) * l1 + C::new(a2 as f64, 0.0) * l2;
                for l in [l1, l2] {
                    min_gap = min_gap.min((dot - l).norm());
                }
            }
        }
        assert!(min_gap > 1e-2);

        // Exact resonance 2 * (-1) = -2.
        match check_nonresonance(&[C::new(-1.0, 0.0), C::new(-2.0, 0.0)]) {
            Err(Error::ResonanceDetected { alpha, j, .. }) => {
                assert_eq!(alpha, vec![2, 0]);
                assert_eq!(j, 1);
            }
            other => panic!("expected resonance, got {other:?}"),
        }

        // Bridge pair at beta = 1 passes.
        let re = -0.5;
        let im = 0.5 * 3.0f64.sqrt();
        check_nonresonance(&[C::new(re, im), C::new(re, -im)]).unwrap();
    }
}

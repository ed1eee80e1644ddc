//! Automatic eigenvector-scaling selection: level-set area maximization,
//! fixed-ratio ray search, proof dichotomy, and parameter continuation.
//!
//! All searches exploit that validity (defect below threshold, or a radii
//! polynomial root below the proof threshold) is monotone along rays of
//! scalings, so one-dimensional bisections bracket the largest admissible
//! scaling.

use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{sample_surface, surface_area};
use crate::parm::{solve_homological, DefectEvaluator, ManifoldProblem, Parameterization};
use crate::series::{Scaling, VectorSeq};
use crate::validation::BoundEngine;

/// Scaling cap preventing unbounded searches on degenerate (e.g. linear)
/// fields.
pub const GAMMA_CAP: f64 = 1e6;
/// Relative bisection tolerance on scalings.
pub const BISECT_REL_TOL: f64 = 1e-3;
/// Grid used for area estimates while searching; only the winner gets a
/// finer grid.
pub const SEARCH_AREA_GRID: usize = 33;
pub const FINAL_AREA_GRID: usize = 65;
const SHRINK_LIMIT: usize = 60;

/// Direction weights for the ray search `gamma(t) = t * omega`.
#[derive(Clone, Debug, Serialize)]
pub struct RayWeights {
    omega: Vec<f64>,
}

impl RayWeights {
    pub fn new(omega: Vec<f64>, pairing: &[(usize, usize)]) -> Result<Self> {
        for &w in &omega {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::NonPositiveScaling(w));
            }
        }
        for &(a, b) in pairing {
            if omega[a] != omega[b] {
                return Err(Error::DimensionMismatch(
                    "ray weights must agree on conjugate pairs".into(),
                ));
            }
        }
        Ok(Self { omega })
    }

    pub fn uniform(m: usize) -> Self {
        Self { omega: vec![1.0; m] }
    }

    pub fn entries(&self) -> &[f64] {
        &self.omega
    }

    fn at(&self, t: f64) -> Result<Scaling<f64>> {
        Scaling::new(self.omega.iter().map(|w| w * t).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Criterion {
    Defect,
    Proof,
}

/// One probed scaling and the metric it achieved.
#[derive(Clone, Debug, Serialize)]
pub struct SamplePoint {
    pub gamma: Vec<f64>,
    pub metric: f64,
    pub area: Option<f64>,
}

/// Outcome of a scaling search.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingResult {
    pub gamma_opt: Vec<f64>,
    pub criterion: Criterion,
    /// Defect value or certified radius at the optimum.
    pub achieved: f64,
    /// Patch area at the optimum (two-parameter manifolds).
    pub area: Option<f64>,
    /// The search ran into the scaling cap (degenerate validity region).
    pub capped: bool,
    pub samples: Vec<SamplePoint>,
}

/// Largest `t` in `(0, cap]` with `valid(t)`, assuming monotone validity.
/// Returns `(t, capped)`; `None` when validity fails all the way down the
/// shrink ladder.
pub fn bisect_largest(
    valid: &mut dyn FnMut(f64) -> bool,
    t_init: f64,
    rel_tol: f64,
    cap: f64,
) -> Option<(f64, bool)> {
    let mut lo = t_init.min(cap);
    let mut shrinks = 0;
    while !valid(lo) {
        lo *= 0.25;
        shrinks += 1;
        if shrinks > SHRINK_LIMIT {
            return None;
        }
    }
    let mut hi = lo * 2.0;
    while hi < cap && valid(hi) {
        lo = hi;
        hi *= 2.0;
    }
    if hi >= cap && valid(cap) {
        return Some((cap, true));
    }
    while hi - lo > rel_tol * lo {
        let mid = 0.5 * (lo + hi);
        if valid(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some((lo, false))
}

fn patch_area(
    coeffs: &VectorSeq<f64>,
    pairing: &[(usize, usize)],
    gamma: &Scaling<f64>,
    grid: usize,
) -> Result<f64> {
    let scaled = coeffs.rescale(gamma)?;
    let mesh = sample_surface(&scaled, pairing, grid, &[(-1.0, 1.0), (-1.0, 1.0)])?;
    Ok(surface_area(&mesh))
}

/// Level-set method: sample `gamma_1`, bisect the largest defect-valid
/// `gamma_2` per column, estimate each level-set patch area, and return the
/// argmax. Two independent real eigendirections only.
pub fn level_set_method1(
    problem: &ManifoldProblem,
    par: &Parameterization,
    ev: &DefectEvaluator,
    n_gamma1_samples: usize,
) -> Result<ScalingResult> {
    if problem.manifold_dim() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "level-set search is implemented for two-dimensional manifolds (got {})",
            problem.manifold_dim()
        )));
    }
    if !problem.spectral.pairing.is_empty() {
        return Err(Error::DimensionMismatch(
            "level-set search needs independent directions; use the ray or proof search \
             for conjugate pairs (uniform scaling)"
                .into(),
        ));
    }
    let eps = problem.epsilon_max;
    let defect_floor = ev.eval(&Scaling::uniform(2, 1e-9)?);
    if defect_floor >= eps {
        return Err(Error::EmptyLevelSet { defect: defect_floor, eps_max: eps });
    }

    // Uniform-ray optimum centers the gamma_1 sweep.
    let mut uniform_valid = |t: f64| ev.is_defect_valid(&Scaling::uniform(2, t).unwrap(), eps);
    let (gamma_u, capped_u) = bisect_largest(&mut uniform_valid, 1.0, BISECT_REL_TOL, GAMMA_CAP)
        .ok_or(Error::EmptyLevelSet { defect: defect_floor, eps_max: eps })?;
    if capped_u {
        // Degenerate validity region (residual-free field): report the cap.
        let gamma = Scaling::uniform(2, GAMMA_CAP)?;
        let area = patch_area(&par.coeffs, &problem.spectral.pairing, &gamma, FINAL_AREA_GRID)?;
        return Ok(ScalingResult {
            gamma_opt: gamma.entries().to_vec(),
            criterion: Criterion::Defect,
            achieved: ev.eval(&gamma),
            area: Some(area),
            capped: true,
            samples: vec![SamplePoint {
                gamma: gamma.entries().to_vec(),
                metric: ev.eval(&gamma),
                area: Some(area),
            }],
        });
    }

    let samples = n_gamma1_samples.max(2);
    let lo = gamma_u / 32.0;
    let hi = gamma_u * 32.0;
    let ratio = (hi / lo).ln();
    let columns: Vec<Option<SamplePoint>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let g1 = lo * (ratio * k as f64 / (samples - 1) as f64).exp();
            // Column feasibility: the gamma_2-independent residual portion
            // alone can exceed the threshold.
            let floor = ev.eval(&Scaling::new(vec![g1, 1e-12]).unwrap());
            if floor >= eps {
                return None;
            }
            let mut valid =
                |g2: f64| ev.is_defect_valid(&Scaling::new(vec![g1, g2]).unwrap(), eps);
            let (g2, _capped) = bisect_largest(&mut valid, gamma_u, BISECT_REL_TOL, GAMMA_CAP)?;
            let gamma = Scaling::new(vec![g1, g2]).ok()?;
            let area =
                patch_area(&par.coeffs, &problem.spectral.pairing, &gamma, SEARCH_AREA_GRID)
                    .ok()?;
            Some(SamplePoint {
                gamma: gamma.entries().to_vec(),
                metric: ev.eval(&gamma),
                area: Some(area),
            })
        })
        .collect();

    let samples: Vec<SamplePoint> = columns.into_iter().flatten().collect();
    let best = samples
        .iter()
        .max_by(|a, b| {
            a.area
                .unwrap_or(0.0)
                .partial_cmp(&b.area.unwrap_or(0.0))
                .expect("finite areas")
        })
        .ok_or(Error::EmptyLevelSet { defect: defect_floor, eps_max: eps })?
        .clone();

    let gamma_opt = Scaling::new(best.gamma.clone())?;
    let area = patch_area(&par.coeffs, &problem.spectral.pairing, &gamma_opt, FINAL_AREA_GRID)?;
    Ok(ScalingResult {
        gamma_opt: best.gamma.clone(),
        criterion: Criterion::Defect,
        achieved: best.metric,
        area: Some(area),
        capped: false,
        samples,
    })
}

/// Ray search: largest `t` with `gamma = t * omega` defect-valid.
pub fn ray_method2(
    problem: &ManifoldProblem,
    par: &Parameterization,
    ev: &DefectEvaluator,
    weights: &RayWeights,
) -> Result<ScalingResult> {
    let eps = problem.epsilon_max;
    let probes: Mutex<Vec<SamplePoint>> = Mutex::new(Vec::new());
    let max_w = weights.entries().iter().cloned().fold(0.0f64, f64::max);
    let cap = GAMMA_CAP / max_w;
    let mut valid = |t: f64| {
        let gamma = weights.at(t).expect("positive ray");
        let d = ev.eval(&gamma);
        probes
            .lock()
            .unwrap()
            .push(SamplePoint { gamma: gamma.entries().to_vec(), metric: d, area: None });
        d < eps
    };
    let (t, capped) = bisect_largest(&mut valid, 1.0, BISECT_REL_TOL, cap).ok_or_else(|| {
        Error::EmptyLevelSet { defect: ev.eval(&weights.at(1e-30).unwrap()), eps_max: eps }
    })?;
    let gamma = weights.at(t)?;
    gamma.check_pairing(&problem.spectral.pairing)?;
    let area = if problem.manifold_dim() == 2 {
        Some(patch_area(&par.coeffs, &problem.spectral.pairing, &gamma, FINAL_AREA_GRID)?)
    } else {
        None
    };
    let mut samples = probes.into_inner().unwrap();
    samples.sort_by(|a, b| a.gamma[0].partial_cmp(&b.gamma[0]).expect("finite"));
    Ok(ScalingResult {
        gamma_opt: gamma.entries().to_vec(),
        criterion: Criterion::Defect,
        achieved: ev.eval(&gamma),
        area,
        capped,
        samples,
    })
}

/// Dichotomy on a uniform scaling for the largest proof-valid `gamma`;
/// the verdict at the returned scaling is re-verified through the engine
/// (interval mode when the engine was built with it).
pub fn proof_dichotomy(
    problem: &ManifoldProblem,
    par: &Parameterization,
    engine: &BoundEngine,
) -> Result<ScalingResult> {
    let m = problem.manifold_dim();
    let probes: Mutex<Vec<SamplePoint>> = Mutex::new(Vec::new());
    let mut valid = |g: f64| {
        let gamma = match Scaling::uniform(m, g) {
            Ok(s) => s,
            Err(_) => return false,
        };
        match engine.proof_report(&gamma) {
            Ok(report) => {
                probes.lock().unwrap().push(SamplePoint {
                    gamma: gamma.entries().to_vec(),
                    metric: report.r_used.unwrap_or(f64::NAN),
                    area: None,
                });
                report.verdict
            }
            Err(_) => false,
        }
    };
    let found = bisect_largest(&mut valid, 1.0, BISECT_REL_TOL, GAMMA_CAP);
    let (g, capped) = match found {
        Some(v) => v,
        None => {
            let tiny = Scaling::uniform(m, 1e-9)?;
            let report = engine.proof_report(&tiny)?;
            let b = &report.bounds;
            let fmax = |v: &[f64]| v.iter().cloned().fold(0.0f64, f64::max);
            return Err(Error::ProofImpossible(format!(
                "at gamma = 1e-9: Y = {:.3e}, Z0 = {:.3e}, Z1 = {:.3e}, Z2 = {:.3e}, r_max = {:.1e}",
                fmax(&b.y),
                fmax(&b.z0),
                fmax(&b.z1),
                fmax(&b.z2),
                problem.r_max
            )));
        }
    };
    let gamma = Scaling::uniform(m, g)?;
    let report = engine.proof_report(&gamma)?;
    if !report.verdict {
        return Err(Error::ProofImpossible(
            "final re-verification failed at the bisected scaling".into(),
        ));
    }
    let area = if m == 2 {
        patch_area(&par.coeffs, &problem.spectral.pairing, &gamma, FINAL_AREA_GRID).ok()
    } else {
        None
    };
    let mut samples = probes.into_inner().unwrap();
    samples.sort_by(|a, b| a.gamma[0].partial_cmp(&b.gamma[0]).expect("finite"));
    Ok(ScalingResult {
        gamma_opt: gamma.entries().to_vec(),
        criterion: Criterion::Proof,
        achieved: report.r_used.expect("verdict true carries a radius"),
        area,
        capped,
        samples,
    })
}

/// How each continuation row certifies its manifold.
pub enum ContinuationMode {
    Proof { interval: bool },
    Defect { weights: Option<Vec<f64>> },
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuationRow {
    pub param: f64,
    /// Scaling reached (uniform value for proofs, ray parameter for defect).
    pub gamma: Option<Vec<f64>>,
    /// Certified radius or achieved defect.
    pub metric: Option<f64>,
    pub status: String,
}

/// Sweep a parameter: rebuild, solve, and optimize each value independently.
/// Failures are recorded per row and never abort the sweep.
pub fn continuation<F>(build: F, values: &[f64], mode: &ContinuationMode) -> Vec<ContinuationRow>
where
    F: Fn(f64) -> Result<ManifoldProblem>,
{
    values
        .iter()
        .map(|&param| match continuation_row(&build, param, mode) {
            Ok(row) => row,
            Err(e) => ContinuationRow {
                param,
                gamma: None,
                metric: None,
                status: format!("failed: {e}"),
            },
        })
        .collect()
}

fn continuation_row<F>(build: &F, param: f64, mode: &ContinuationMode) -> Result<ContinuationRow>
where
    F: Fn(f64) -> Result<ManifoldProblem>,
{
    let problem = build(param)?;
    let par = solve_homological(&problem)?;
    match mode {
        ContinuationMode::Proof { interval } => {
            let engine = BoundEngine::new(&problem, &par, *interval)?;
            let result = proof_dichotomy(&problem, &par, &engine)?;
            Ok(ContinuationRow {
                param,
                gamma: Some(result.gamma_opt),
                metric: Some(result.achieved),
                status: "ok".into(),
            })
        }
        ContinuationMode::Defect { weights } => {
            let ev = DefectEvaluator::new(&problem, &par)?;
            let w = match weights {
                Some(w) => RayWeights::new(w.clone(), &problem.spectral.pairing)?,
                None => RayWeights::uniform(problem.manifold_dim()),
            };
            let result = ray_method2(&problem, &par, &ev, &w)?;
            Ok(ContinuationRow {
                param,
                gamma: Some(result.gamma_opt),
                metric: Some(result.achieved),
                status: "ok".into(),
            })
        }
    }
}

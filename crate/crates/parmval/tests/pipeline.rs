//! Cross-module invariants that need the whole pipeline.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parmval::geometry;
use parmval::linalg::matvec;
use parmval::optimize::{self, ContinuationMode};
use parmval::parm::{self, DefectEvaluator, ManifoldProblem, Parameterization};
use parmval::problem::{build_problem, load_problem_source, BuildOptions};
use parmval::series::{GradedOrdering, Scaling, VectorSeq};
use parmval::validation::BoundEngine;

type C = Complex64;

fn fixture(name: &str, order: usize, beta: Option<f64>) -> ManifoldProblem {
    let file = load_problem_source(name).unwrap();
    let overrides = beta.map(|b| vec![("beta".to_string(), b)]).unwrap_or_default();
    let opts = BuildOptions { order, epsilon_max: 1e-5, r_max: 1e-5, overrides };
    build_problem(&file, &opts).unwrap()
}

#[test]
fn patch_area_grows_with_each_scaling_direction() {
    // Empirical monotonicity of the patch area in each scaling entry.
    let problem = fixture("lorenz", 12, None);
    let par = parm::solve_homological(&problem).unwrap();
    let area = |g1: f64, g2: f64| {
        let scaled = par.rescaled(&Scaling::new(vec![g1, g2]).unwrap()).unwrap();
        let mesh = geometry::sample_surface(
            &scaled.coeffs,
            &problem.spectral.pairing,
            33,
            &[(-1.0, 1.0), (-1.0, 1.0)],
        )
        .unwrap();
        geometry::surface_area(&mesh)
    };
    let base = area(1.0, 1.0);
    assert!(area(1.5, 1.0) > base);
    assert!(area(1.0, 1.5) > base);
    assert!(area(2.0, 1.0) > area(1.5, 1.0));
    assert!(area(1.0, 2.0) > area(1.0, 1.5));
}

#[test]
fn conjugacy_error_shrinks_with_the_defect() {
    // Shrinking the scaling (hence the achieved defect) never worsens the
    // flow-conjugacy error beyond the integrator floor.
    let problem = fixture("lorenz", 10, None);
    let par = parm::solve_homological(&problem).unwrap();
    let ev = DefectEvaluator::new(&problem, &par).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let thetas: Vec<[f64; 2]> = (0..40)
        .map(|_| [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)])
        .collect();
    let max_err = |g: f64| {
        let gamma = Scaling::uniform(2, g).unwrap();
        let scaled = par.rescaled(&gamma).unwrap();
        thetas
            .iter()
            .map(|t| {
                geometry::conjugacy_error(&scaled.coeffs, &problem.field, &problem.spectral, t, 0.5)
                    .unwrap()
            })
            .fold(0.0f64, f64::max)
    };
    let g_big = 6.0;
    let g_small = 3.0;
    assert!(ev.eval(&Scaling::uniform(2, g_small).unwrap())
        < 0.01 * ev.eval(&Scaling::uniform(2, g_big).unwrap()));
    let integrator_floor = 1e-9;
    assert!(max_err(g_small) <= max_err(g_big) + integrator_floor);
}

#[test]
fn float_searched_scaling_reverifies_in_interval_mode() {
    let problem = fixture("bridge", 16, Some(1.0));
    let par = parm::solve_homological(&problem).unwrap();
    let float_engine = BoundEngine::new(&problem, &par, false).unwrap();
    let result = optimize::proof_dichotomy(&problem, &par, &float_engine).unwrap();
    let interval_engine = BoundEngine::new(&problem, &par, true).unwrap();
    let report = interval_engine
        .proof_report(&Scaling::new(result.gamma_opt.clone()).unwrap())
        .unwrap();
    assert!(report.verdict, "interval re-verification at the float optimum");
    assert!(report.interval_mode);
    assert!(report.r_used.unwrap() <= problem.r_max);
}

#[test]
fn certified_contraction_factor_holds_numerically() {
    // With a proof-valid report at radius r, the Newton-like map contracts
    // sampled pairs in the r-ball at factor Z0 + Z1 + 2 Z2 r.
    let problem = fixture("bridge", 12, Some(1.0));
    let par = parm::solve_homological(&problem).unwrap();
    let engine = BoundEngine::new(&problem, &par, false).unwrap();
    let gamma = Scaling::uniform(2, 0.6).unwrap();
    let report = engine.proof_report(&gamma).unwrap();
    assert!(report.verdict);
    let r = report.r_used.unwrap();
    let b = &report.bounds;
    let factor = (0..4)
        .map(|i| b.z0[i] + b.z1[i] + 2.0 * b.z2[i] * r)
        .fold(0.0f64, f64::max);
    assert!(factor < 1.0);

    let scaled = par.rescaled(&gamma).unwrap();
    let inverse = parmval::validation::build_approx_inverse(&problem, &scaled).unwrap();
    let n = problem.phase_dim();
    // Perturbation support: the truncated orders plus the residual tail.
    let support = GradedOrdering::new(2, problem.residual_order_bound()).unwrap();

    let newton_map = |x: &VectorSeq<f64>| -> VectorSeq<f64> {
        let px = Parameterization { coeffs: x.clone(), gamma: gamma.clone() };
        let f = parm::residual(&problem, &px).unwrap();
        let f_ord = f.ordering().clone();
        // Apply the approximate inverse: dense block on orders < N, the
        // exact diagonal beyond.
        let count = inverse.ordering.len();
        let mut flat = vec![C::new(0.0, 0.0); count * n];
        for pos in 0..count {
            let alpha = inverse.ordering.multi_index(pos).exponents();
            let fpos = f_ord.position(alpha).unwrap();
            for i in 0..n {
                flat[pos * n + i] = f.component(i).values()[fpos];
            }
        }
        let v = matvec(&inverse.finite_block, &flat);
        let mut out = x.clone();
        for pos in 0..out.ordering().len() {
            let alpha = out.ordering().multi_index(pos).exponents().to_vec();
            if let Some(p) = inverse.ordering.position(&alpha) {
                for i in 0..n {
                    let cur = out.component(i).values()[p.min(usize::MAX)];
                    let _ = cur;
                }
                for i in 0..n {
                    out.component_mut(i).values_mut()[pos] -= v[p * n + i];
                }
            } else {
                let mult = inverse.tail_multiplier(&alpha);
                let fpos = f_ord.position(&alpha).unwrap();
                for i in 0..n {
                    let fv = f.component(i).values()[fpos];
                    out.component_mut(i).values_mut()[pos] -= fv * mult;
                }
            }
        }
        out
    };

    // Base point on the support ordering.
    let mut base = VectorSeq::zeros(support.clone(), n);
    for pos in 0..support.len() {
        let alpha = support.multi_index(pos).exponents();
        let coeff = scaled.coeffs.coeff(alpha);
        base.set_coeff(pos, &coeff);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_ratio = 0.0f64;
    for _ in 0..200 {
        let mut dx = VectorSeq::zeros(support.clone(), n);
        let mut dy = VectorSeq::zeros(support.clone(), n);
        for d in [&mut dx, &mut dy] {
            for i in 0..n {
                for v in d.component_mut(i).values_mut() {
                    *v = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            let norm = d.x_norm(1.0);
            let s = r / norm * rng.gen_range(0.1..1.0);
            for i in 0..n {
                for v in d.component_mut(i).values_mut() {
                    *v *= C::new(s, 0.0);
                }
            }
        }
        let mut x = base.clone();
        let mut y = base.clone();
        for pos in 0..support.len() {
            for i in 0..n {
                x.component_mut(i).values_mut()[pos] += dx.component(i).values()[pos];
                y.component_mut(i).values_mut()[pos] += dy.component(i).values()[pos];
            }
        }
        let tx = newton_map(&x);
        let ty = newton_map(&y);
        let mut diff_in = 0.0f64;
        let mut diff_out = 0.0f64;
        for i in 0..n {
            let mut acc_in = 0.0;
            let mut acc_out = 0.0;
            for pos in 0..support.len() {
                acc_in += (x.component(i).values()[pos] - y.component(i).values()[pos]).norm();
                acc_out += (tx.component(i).values()[pos] - ty.component(i).values()[pos]).norm();
            }
            diff_in = diff_in.max(acc_in);
            diff_out = diff_out.max(acc_out);
        }
        worst_ratio = worst_ratio.max(diff_out / diff_in);
    }
    assert!(
        worst_ratio <= factor * (1.0 + 1e-9),
        "observed contraction {worst_ratio:.6} vs certified {factor:.6}"
    );
}

#[test]
fn unstable_manifold_of_a_nontrivial_equilibrium() {
    // Time reversal: the nontrivial Lorenz equilibria carry two-dimensional
    // unstable manifolds with a complex conjugate pair; the reversed field
    // must make them stable, paired, and ray-searchable.
    let mut file = load_problem_source("lorenz").unwrap();
    file.stability = parmval::problem::Stability::Unstable;
    let c = (8.0 / 3.0 * 27.0f64).sqrt();
    file.equilibrium_guess = vec![c, c, 27.0];
    let opts = BuildOptions { order: 20, epsilon_max: 1e-5, r_max: 1e-5, overrides: vec![] };
    let problem = build_problem(&file, &opts).unwrap();
    assert!(problem.field.is_negated());
    assert_eq!(problem.manifold_dim(), 2);
    assert_eq!(problem.spectral.pairing, vec![(0, 1)]);
    let p = &problem.spectral.equilibrium;
    assert!((p[0] - c).abs() < 1e-10 && (p[2] - 27.0).abs() < 1e-10);

    let par = parm::solve_homological(&problem).unwrap();
    let ev = DefectEvaluator::new(&problem, &par).unwrap();
    let w = optimize::RayWeights::uniform(2);
    let result = optimize::ray_method2(&problem, &par, &ev, &w).unwrap();
    assert!(result.achieved < 1e-5);
    assert!(result.gamma_opt[0] > 0.0);

    // The chart is real and flows correctly under the reversed field.
    let scaled = par.rescaled(&Scaling::new(result.gamma_opt.clone()).unwrap()).unwrap();
    let err = geometry::conjugacy_error(
        &scaled.coeffs,
        &problem.field,
        &problem.spectral,
        &[0.4, 0.3],
        0.5,
    )
    .unwrap();
    assert!(err < 1e-5, "conjugacy error {err:.3e}");
}

#[test]
fn continuation_is_order_independent() {
    let file = load_problem_source("bridge").unwrap();
    let build = |beta: f64| {
        let opts = BuildOptions {
            order: 8,
            epsilon_max: 1e-5,
            r_max: 1e-5,
            overrides: vec![("beta".into(), beta)],
        };
        build_problem(&file, &opts)
    };
    let values = [0.8, 1.2, 1.6];
    let reversed: Vec<f64> = values.iter().rev().cloned().collect();
    let mode = ContinuationMode::Defect { weights: None };
    let fwd = optimize::continuation(build, &values, &mode);
    let bwd = optimize::continuation(build, &reversed, &mode);
    for (a, b) in fwd.iter().zip(bwd.iter().rev()) {
        assert_eq!(a.param, b.param);
        assert_eq!(a.status, b.status);
        assert_eq!(a.gamma, b.gamma);
        assert_eq!(a.metric, b.metric);
    }
}

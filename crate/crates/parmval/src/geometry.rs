//! Real-form evaluation, surface sampling, triangulated areas, mesh export,
//! and an independent flow-conjugacy check.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::PolyVectorField;
use crate::series::VectorSeq;
use crate::spectrum::SpectralData;

type C = Complex64;

const IM_RESIDUE_SOFT: f64 = 1e-10;
const IM_RESIDUE_HARD: f64 = 1e-8;

/// Evaluator mapping real parameters to real phase-space points.
///
/// For conjugate-paired eigendirections the complex series is evaluated at
/// `(theta_p + i theta_q, theta_p - i theta_q)`; conjugate symmetry of the
/// coefficients makes the result real up to rounding. The imaginary residue
/// is tracked and enforced.
pub struct RealChart<'a> {
    coeffs: &'a VectorSeq<f64>,
    pairing: Vec<(usize, usize)>,
    max_residue_seen: std::cell::Cell<f64>,
}

impl<'a> RealChart<'a> {
    /// Probes a coarse grid to catch symmetry violations early.
    pub fn new(coeffs: &'a VectorSeq<f64>, pairing: &[(usize, usize)]) -> Result<RealChart<'a>> {
        let chart = RealChart {
            coeffs,
            pairing: pairing.to_vec(),
            max_residue_seen: std::cell::Cell::new(0.0),
        };
        let m = coeffs.ordering().vars();
        let probes = 5usize;
        let mut theta = vec![0.0; m];
        let mut counter = vec![0usize; m];
        loop {
            for (t, &c) in theta.iter_mut().zip(&counter) {
                *t = -1.0 + 2.0 * c as f64 / (probes - 1) as f64;
            }
            chart.eval(&theta)?;
            // Odometer over the probe grid.
            let mut k = 0;
            loop {
                if k == m {
                    return Ok(chart);
                }
                counter[k] += 1;
                if counter[k] < probes {
                    break;
                }
                counter[k] = 0;
                k += 1;
            }
        }
    }

    pub fn max_residue_seen(&self) -> f64 {
        self.max_residue_seen.get()
    }

    /// Complex argument realizing the real chart at `theta`.
    pub fn complex_argument(&self, theta: &[f64]) -> Vec<C> {
        let mut z: Vec<C> = theta.iter().map(|&t| C::new(t, 0.0)).collect();
        for &(p, q) in &self.pairing {
            z[p] = C::new(theta[p], theta[q]);
            z[q] = C::new(theta[p], -theta[q]);
        }
        z
    }

    pub fn eval(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let z = self.complex_argument(theta);
        let w = self.coeffs.evaluate(&z);
        let mut residue = 0.0f64;
        let mut out = Vec::with_capacity(w.len());
        for v in &w {
            residue = residue.max(v.im.abs());
            out.push(v.re);
        }
        if residue > IM_RESIDUE_HARD {
            return Err(Error::SymmetryViolated(residue));
        }
        if residue > self.max_residue_seen.get() {
            self.max_residue_seen.set(residue);
        }
        debug_assert!(
            self.pairing.is_empty() || residue <= IM_RESIDUE_SOFT || residue <= IM_RESIDUE_HARD,
            "imaginary residue {residue:.3e}"
        );
        Ok(out)
    }
}

/// Triangulated sample of the manifold patch.
#[derive(Clone, Debug)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// Parameter value of each vertex.
    pub parameter_grid: Vec<Vec<f64>>,
}

impl SurfaceMesh {
    /// Row-major grid mesh over a rectangle, triangulating each cell into
    /// two triangles. `rows = cols = grid_n` vertices per side.
    pub fn from_grid<F>(grid_n: usize, domain: &[(f64, f64)], mut f: F) -> Result<SurfaceMesh>
    where
        F: FnMut(&[f64]) -> Result<Vec<f64>>,
    {
        if domain.len() != 2 {
            return Err(Error::DimensionMismatch(
                "triangulated meshes need a two-parameter domain".into(),
            ));
        }
        let mut vertices = Vec::with_capacity(grid_n * grid_n);
        let mut parameter_grid = Vec::with_capacity(grid_n * grid_n);
        for r in 0..grid_n {
            let t2 = lerp(domain[1], r as f64 / (grid_n - 1) as f64);
            for c in 0..grid_n {
                let t1 = lerp(domain[0], c as f64 / (grid_n - 1) as f64);
                let theta = vec![t1, t2];
                vertices.push(f(&theta)?);
                parameter_grid.push(theta);
            }
        }
        let mut triangles = Vec::with_capacity(2 * (grid_n - 1) * (grid_n - 1));
        for r in 0..grid_n - 1 {
            for c in 0..grid_n - 1 {
                let v = r * grid_n + c;
                triangles.push([v, v + 1, v + grid_n]);
                triangles.push([v + 1, v + grid_n + 1, v + grid_n]);
            }
        }
        Ok(SurfaceMesh { vertices, triangles, parameter_grid })
    }
}

fn lerp((lo, hi): (f64, f64), t: f64) -> f64 {
    lo + (hi - lo) * t
}

/// Sample the patch on a grid. Two-parameter manifolds produce a
/// triangulated surface, one-parameter manifolds a polyline, and higher
/// parameter counts a raw point cloud (no triangles).
pub fn sample_surface(
    coeffs: &VectorSeq<f64>,
    pairing: &[(usize, usize)],
    grid_n: usize,
    domain: &[(f64, f64)],
) -> Result<SurfaceMesh> {
    if grid_n < 2 {
        return Err(Error::DimensionMismatch("grid must have at least 2 points per side".into()));
    }
    let m = coeffs.ordering().vars();
    if domain.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "domain has {} ranges for {} parameters",
            domain.len(),
            m
        )));
    }
    let chart = RealChart::new(coeffs, pairing)?;
    if m == 2 {
        return SurfaceMesh::from_grid(grid_n, domain, |theta| chart.eval(theta));
    }
    // Polyline (m = 1) or point cloud (m >= 3): grid_n points per axis,
    // odometer order, first axis fastest.
    let total = grid_n.checked_pow(m as u32).filter(|&t| t <= 4_000_000).ok_or_else(|| {
        Error::SizeOverflow(format!("{grid_n} points per axis over {m} parameters"))
    })?;
    let mut vertices = Vec::with_capacity(total);
    let mut parameter_grid = Vec::with_capacity(total);
    let mut counter = vec![0usize; m];
    let mut theta = vec![0.0; m];
    loop {
        for (t, (&c, &range)) in theta.iter_mut().zip(counter.iter().zip(domain.iter())) {
            *t = lerp(range, c as f64 / (grid_n - 1) as f64);
        }
        vertices.push(chart.eval(&theta)?);
        parameter_grid.push(theta.clone());
        let mut k = 0;
        loop {
            if k == m {
                return Ok(SurfaceMesh { vertices, triangles: Vec::new(), parameter_grid });
            }
            counter[k] += 1;
            if counter[k] < grid_n {
                break;
            }
            counter[k] = 0;
            k += 1;
        }
    }
}

/// Sum of triangle areas, each `1/2 sqrt(|u|^2 |v|^2 - (u.v)^2)` for edge
/// vectors in R^n.
pub fn surface_area(mesh: &SurfaceMesh) -> f64 {
    let mut total = 0.0;
    for t in &mesh.triangles {
        let a = &mesh.vertices[t[0]];
        let b = &mesh.vertices[t[1]];
        let c = &mesh.vertices[t[2]];
        let mut uu = 0.0;
        let mut vv = 0.0;
        let mut uv = 0.0;
        for k in 0..a.len() {
            let u = b[k] - a[k];
            let v = c[k] - a[k];
            uu += u * u;
            vv += v * v;
            uv += u * v;
        }
        total += 0.5 * (uu * vv - uv * uv).max(0.0).sqrt();
    }
    total
}

/// Farthest the image of the `theta_axis = +/-1` edges reaches from the
/// patch center, measured in Euclidean phase-space distance. A proxy for the
/// extent of the patch along one eigendirection.
pub fn edge_extent(
    coeffs: &VectorSeq<f64>,
    pairing: &[(usize, usize)],
    axis: usize,
    grid_n: usize,
) -> Result<f64> {
    let m = coeffs.ordering().vars();
    if m != 2 {
        return Err(Error::DimensionMismatch("edge extent is defined for 2-parameter patches".into()));
    }
    let chart = RealChart::new(coeffs, pairing)?;
    let center = chart.eval(&[0.0, 0.0])?;
    let mut worst = 0.0f64;
    for side in [-1.0, 1.0] {
        for k in 0..grid_n {
            let s = -1.0 + 2.0 * k as f64 / (grid_n - 1) as f64;
            let theta = if axis == 0 { [side, s] } else { [s, side] };
            let v = chart.eval(&theta)?;
            let dist: f64 = v
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(dist);
        }
    }
    Ok(worst)
}

/// Fixed-step fourth-order Runge-Kutta flow of the field; the independent
/// oracle the conjugacy check integrates with.
pub fn rk4_flow(field: &PolyVectorField, y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let n = y0.len();
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let mut k1;
    let mut stage = vec![0.0; n];
    for _ in 0..steps {
        k1 = field.eval_real(&y);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = field.eval_real(&stage);
        for i in 0..n {
            stage[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = field.eval_real(&stage);
        for i in 0..n {
            stage[i] = y[i] + h * k3[i];
        }
        let k4 = field.eval_real(&stage);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

/// `|| phi(t, f(theta)) - f(e^{Lambda t} theta) ||_inf` with an RK4 flow.
/// `steps = max(64, ceil(64 t), ceil(32 t max|lambda|))`: the last term keeps
/// the fastest eigendirection resolved, which the flat 64-per-unit-time rate
/// cannot do for strongly contracting spectra. Never reuses the series
/// machinery beyond evaluation.
pub fn conjugacy_error(
    coeffs: &VectorSeq<f64>,
    field: &PolyVectorField,
    spectral: &SpectralData,
    theta: &[f64],
    t: f64,
) -> Result<f64> {
    let chart = RealChart::new(coeffs, &spectral.pairing)?;
    let start = chart.eval(theta)?;
    let max_rate = spectral.lambdas.iter().map(|l| l.norm()).fold(1.0f64, f64::max);
    let steps = 64usize
        .max((64.0 * t).ceil() as usize)
        .max((32.0 * t * max_rate).ceil() as usize);
    let flowed = rk4_flow(field, &start, t, steps);

    // Target: evaluate at e^{Lambda t} applied to the complex argument.
    let z = chart.complex_argument(theta);
    let zt: Vec<C> = z
        .iter()
        .zip(&spectral.lambdas)
        .map(|(zk, l)| zk * (l * t).exp())
        .collect();
    let target = coeffs.evaluate(&zt);

    let mut err = 0.0f64;
    for (i, tv) in target.iter().enumerate() {
        if tv.im.abs() > IM_RESIDUE_HARD {
            return Err(Error::SymmetryViolated(tv.im.abs()));
        }
        err = err.max((flowed[i] - tv.re).abs());
    }
    Ok(err)
}

/// Write a Wavefront OBJ (first three coordinates; higher-dimensional
/// vertices are projected with a warning on stderr).
pub fn export_obj(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let n = mesh.vertices.first().map(|v| v.len()).unwrap_or(0);
    if n < 3 {
        return Err(Error::DimensionMismatch(format!(
            "OBJ export needs at least 3 phase-space coordinates (got {n})"
        )));
    }
    if n > 3 {
        eprintln!("warning: projecting {n}-dimensional vertices onto the first three coordinates");
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2])?;
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Write vertices (and triangle indices when present) as CSV. The vertex
/// file has one `x1..xn` row per vertex; triangles go to a sibling file with
/// suffix `_triangles.csv`.
pub fn export_csv(mesh: &SurfaceMesh, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = mesh.vertices.first().map(|v| v.len()).unwrap_or(0);
    let header: Vec<String> = (1..=n).map(|k| format!("x{k}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for v in &mesh.vertices {
        let cells: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    drop(out);
    if !mesh.triangles.is_empty() {
        let tri_path = path.with_file_name(format!(
            "{}_triangles.csv",
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh")
        ));
        let mut out = std::io::BufWriter::new(std::fs::File::create(tri_path)?);
        writeln!(out, "v1,v2,v3")?;
        for t in &mesh.triangles {
            writeln!(out, "{},{},{}", t[0], t[1], t[2])?;
        }
    }
    Ok(())
}

/// Read back a vertex CSV written by [`export_csv`].
pub fn import_csv_vertices(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| Error::Schema(format!("line {}: {e}", ln + 1)))?);
    }
    Ok(rows)
}

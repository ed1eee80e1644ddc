//! Polynomial vector fields: evaluation, exact Jacobians, equilibria, and
//! composition with a coefficient series.
//!
//! A field is a list of monomial terms `b_beta y^beta` with `b_beta` a real
//! n-vector. Term coefficients may be arithmetic expressions over named
//! parameters, so a parameter sweep rebuilds the numeric terms without
//! re-parsing the problem.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::series::{CoeffSeq, VectorSeq};

/// Arithmetic expression over named parameters.
#[derive(Clone, Debug)]
pub enum Expr {
    Num(f64),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(Error::Schema(format!(
                "trailing characters in expression {src:?} at byte {}",
                p.pos
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, params: &BTreeMap<String, f64>) -> Result<f64> {
        Ok(match self {
            Expr::Num(x) => *x,
            Expr::Param(name) => *params.get(name).ok_or_else(|| {
                Error::Schema(format!("unknown parameter {name:?} in coefficient expression"))
            })?,
            Expr::Neg(e) => -e.eval(params)?,
            Expr::Add(a, b) => a.eval(params)? + b.eval(params)?,
            Expr::Sub(a, b) => a.eval(params)? - b.eval(params)?,
            Expr::Mul(a, b) => a.eval(params)? * b.eval(params)?,
            Expr::Div(a, b) => a.eval(params)? / b.eval(params)?,
        })
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        while let Some(op) = self.peek() {
            match op {
                b'+' => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                b'-' => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.factor()?;
        while let Some(op) = self.peek() {
            match op {
                b'*' => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                b'/' => {
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.factor()
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(Error::Schema("unbalanced parenthesis in expression".into()));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            other => Err(Error::Schema(format!(
                "unexpected token {:?} in expression",
                other.map(|c| c as char)
            ))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos + 1 < self.src.len()
                && (self.src[self.pos + 1].is_ascii_digit()
                    || self.src[self.pos + 1] == b'-'
                    || self.src[self.pos + 1] == b'+')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| Error::Schema(format!("malformed number {text:?}")))
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        Ok(Expr::Param(
            std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string(),
        ))
    }
}

/// One monomial as authored: a scalar coefficient feeding one component.
#[derive(Clone, Debug)]
pub struct TermSpec {
    pub target: usize,
    pub exponents: Vec<u32>,
    pub coeff: Expr,
}

/// Realized monomial `b_beta y^beta` with a full coefficient vector.
#[derive(Clone, Debug)]
pub struct PolyTerm {
    pub exponents: Vec<u32>,
    pub coeff: Vec<f64>,
}

impl PolyTerm {
    pub fn order(&self) -> u32 {
        self.exponents.iter().sum()
    }
}

#[derive(Clone, Debug)]
pub struct PolyVectorField {
    n: usize,
    degree: usize,
    specs: Vec<TermSpec>,
    parameters: BTreeMap<String, f64>,
    negated: bool,
    terms: Vec<PolyTerm>,
}

impl PolyVectorField {
    pub fn new(
        n: usize,
        specs: Vec<TermSpec>,
        parameters: BTreeMap<String, f64>,
    ) -> Result<Self> {
        for (i, s) in specs.iter().enumerate() {
            if s.target >= n {
                return Err(Error::Schema(format!(
                    "terms[{i}]: target {} out of range for n = {n}",
                    s.target
                )));
            }
            if s.exponents.len() != n {
                return Err(Error::Schema(format!(
                    "terms[{i}]: exponent list has {} entries, expected {n}",
                    s.exponents.len()
                )));
            }
        }
        let mut f = Self { n, degree: 0, specs, parameters, negated: false, terms: Vec::new() };
        f.realize()?;
        Ok(f)
    }

    fn realize(&mut self) -> Result<()> {
        let mut merged: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
        let sign = if self.negated { -1.0 } else { 1.0 };
        for s in &self.specs {
            let v = s.coeff.eval(&self.parameters)? * sign;
            let entry = merged.entry(s.exponents.clone()).or_insert_with(|| vec![0.0; self.n]);
            entry[s.target] += v;
        }
        self.terms = merged
            .into_iter()
            .filter(|(_, coeff)| coeff.iter().any(|&c| c != 0.0))
            .map(|(exponents, coeff)| PolyTerm { exponents, coeff })
            .collect();
        self.degree = self.terms.iter().map(|t| t.order() as usize).max().unwrap_or(0);
        Ok(())
    }

    /// Flip the sign of the field (time reversal); turns unstable manifold
    /// problems into stable ones.
    pub fn negate(&mut self) -> Result<()> {
        self.negated = !self.negated;
        self.realize()
    }

    pub fn is_negated(&self) -> bool {
        self.negated
    }

    pub fn set_parameter(&mut self, name: &str, value: f64) -> Result<()> {
        if !self.parameters.contains_key(name) {
            return Err(Error::Schema(format!("unknown parameter {name:?}")));
        }
        self.parameters.insert(name.to_string(), value);
        self.realize()
    }

    pub fn parameters(&self) -> &BTreeMap<String, f64> {
        &self.parameters
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    /// Per-component sums of |linear coefficients|.
    pub fn linear_abs_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for t in self.terms.iter().filter(|t| t.order() == 1) {
            for (k, &b) in t.coeff.iter().enumerate() {
                sums[k] += b.abs();
            }
        }
        sums
    }

    /// Quadratic monomials as `(i, j, coeff)` with `i <= j` (i == j for squares).
    pub fn quadratic_terms(&self) -> Vec<(usize, usize, Vec<f64>)> {
        let mut out = Vec::new();
        for t in self.terms.iter().filter(|t| t.order() == 2) {
            let vars: Vec<usize> = t
                .exponents
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(k, _)| k)
                .collect();
            let (i, j) = if vars.len() == 1 { (vars[0], vars[0]) } else { (vars[0], vars[1]) };
            out.push((i, j, t.coeff.clone()));
        }
        out
    }

    pub fn eval<T: Scalar>(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        debug_assert_eq!(y.len(), self.n);
        let zero = Complex::new(T::zero(), T::zero());
        let mut out = vec![zero; self.n];
        for t in &self.terms {
            let mut mono = Complex::new(T::one(), T::zero());
            for (k, &e) in t.exponents.iter().enumerate() {
                for _ in 0..e {
                    mono = mono * y[k];
                }
            }
            for (k, &b) in t.coeff.iter().enumerate() {
                if b != 0.0 {
                    out[k] = out[k] + mono * T::of_f64(b);
                }
            }
        }
        out
    }

    pub fn eval_real(&self, y: &[f64]) -> Vec<f64> {
        let yc: Vec<Complex<f64>> = y.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.eval(&yc).into_iter().map(|z| z.re).collect()
    }

    /// Exact Jacobian at a real point.
    pub fn jacobian(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let mut jac = vec![vec![0.0; self.n]; self.n];
        for t in &self.terms {
            for j in 0..self.n {
                let e = t.exponents[j];
                if e == 0 {
                    continue;
                }
                // d/dy_j of y^beta = e * y^{beta - e_j}
                let mut mono = e as f64;
                for (k, &ek) in t.exponents.iter().enumerate() {
                    let p = if k == j { ek - 1 } else { ek };
                    for _ in 0..p {
                        mono *= y[k];
                    }
                }
                for (k, &b) in t.coeff.iter().enumerate() {
                    jac[k][j] += b * mono;
                }
            }
        }
        jac
    }

    /// Newton iteration for an equilibrium near `y0`.
    pub fn find_equilibrium(&self, y0: &[f64], tol: f64) -> Result<Vec<f64>> {
        let mut y = y0.to_vec();
        for _ in 0..50 {
            let g = self.eval_real(&y);
            let res = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            if res <= tol {
                return Ok(y);
            }
            let jac = self.jacobian(&y);
            let rhs: Vec<f64> = g.iter().map(|&v| -v).collect();
            let step = linalg::solve_real(&jac, &rhs).map_err(|_| Error::SingularJacobian)?;
            for (yi, si) in y.iter_mut().zip(&step) {
                *yi += si;
            }
        }
        Err(Error::NonConvergence(format!(
            "equilibrium Newton stalled above tolerance {tol:.1e}"
        )))
    }

    /// Coefficients of `g(f)` through orders `< out_order`, where `f` is the
    /// series with coefficients `a`. Component powers are memoized; each term
    /// costs at most `order - 1` extra convolutions.
    pub fn compose_series<T: Scalar>(
        &self,
        a: &VectorSeq<T>,
        out_order: usize,
    ) -> Result<VectorSeq<T>> {
        if a.dim() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "series has {} components for a field of dimension {}",
                a.dim(),
                self.n
            )));
        }
        let out_ord = crate::series::GradedOrdering::new(a.ordering().vars(), out_order)?;
        let mut out = VectorSeq::zeros(out_ord.clone(), self.n);
        let mut powers: HashMap<(usize, u32), CoeffSeq<T>> = HashMap::new();

        for t in &self.terms {
            if t.order() == 0 {
                for (k, &b) in t.coeff.iter().enumerate() {
                    let v = out.component_mut(k).values_mut();
                    v[0] = v[0] + Complex::new(T::of_f64(b), T::zero());
                }
                continue;
            }
            let prod = monomial_series(a, &t.exponents, out_order, &mut powers)?
                .expect("order >= 1 term has a factor");
            for (k, &b) in t.coeff.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let bs = T::of_f64(b);
                for (o, p) in out.component_mut(k).values_mut().iter_mut().zip(prod.values()) {
                    *o = *o + Complex::new(p.re * bs, p.im * bs);
                }
            }
        }
        Ok(out)
    }
}

/// Product series `prod_j (a^{(j)})^{e_j}` truncated to orders `< out_order`,
/// or `None` when every exponent vanishes. Powers of single components are
/// memoized across calls through `memo`.
pub fn monomial_series<T: Scalar>(
    a: &VectorSeq<T>,
    exponents: &[u32],
    out_order: usize,
    memo: &mut HashMap<(usize, u32), CoeffSeq<T>>,
) -> Result<Option<CoeffSeq<T>>> {
    let mut prod: Option<CoeffSeq<T>> = None;
    for (j, &e) in exponents.iter().enumerate() {
        if e == 0 {
            continue;
        }
        let pw = component_power(a, j, e, out_order, memo)?;
        prod = Some(match prod {
            None => pw,
            Some(p) => p.cauchy_product(&pw, out_order)?,
        });
    }
    Ok(prod)
}

fn component_power<T: Scalar>(
    a: &VectorSeq<T>,
    j: usize,
    e: u32,
    out_order: usize,
    memo: &mut HashMap<(usize, u32), CoeffSeq<T>>,
) -> Result<CoeffSeq<T>> {
    if let Some(p) = memo.get(&(j, e)) {
        return Ok(p.clone());
    }
    let result = if e == 1 {
        // Re-truncate onto the output ordering so downstream products share it.
        let base = a.component(j);
        if base.ordering().max_order() == out_order {
            base.clone()
        } else {
            let ord = crate::series::GradedOrdering::new(base.ordering().vars(), out_order)?;
            let mut ext = CoeffSeq::zeros(ord);
            for (pos, v) in base.values().iter().enumerate() {
                if let Some(p) = ext.ordering().position(base.ordering().multi_index(pos).exponents()) {
                    ext.values_mut()[p] = *v;
                }
            }
            ext
        }
    } else {
        let lower = component_power(a, j, e - 1, out_order, memo)?;
        let first = component_power(a, j, 1, out_order, memo)?;
        lower.cauchy_product(&first, out_order)?
    };
    memo.insert((j, e), result.clone());
    Ok(result)
}

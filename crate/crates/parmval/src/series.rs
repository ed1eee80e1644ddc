//! Graded multivariate Taylor coefficient sequences.
//!
//! A coefficient sequence stores one complex value per multi-index
//! `alpha = (alpha_1, ..., alpha_m)` with `|alpha| < N`, laid out by growing
//! order `|alpha|` and lexicographically (larger leading exponents first)
//! within each order. For m = 2 this is
//! `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...`.
//!
//! The layer provides the Cauchy product, the weighted l1 norm
//! `sum |u_alpha| nu^|alpha|`, point evaluation, and the diagonal rescaling
//! `alpha -> gamma^alpha u_alpha` that the rest of the crate is built on.

use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Exponent tuple with its order cached.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    pub fn zero(vars: usize) -> Self {
        Self { exponents: vec![0; vars] }
    }

    /// Unit index `e_k`.
    pub fn unit(vars: usize, k: usize) -> Self {
        let mut exponents = vec![0; vars];
        exponents[k] = 1;
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn order(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn vars(&self) -> usize {
        self.exponents.len()
    }
}

fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
    }
    Some(acc)
}

/// Index table for all multi-indices of `vars` variables with order < `max_order`,
/// sorted by growing order and lexicographically (descending tuples) within an order.
#[derive(Debug)]
pub struct GradedOrdering {
    vars: usize,
    max_order: usize,
    indices: Vec<MultiIndex>,
    /// `offsets[k]` = position of the first index of order `k`; last entry = total count.
    offsets: Vec<usize>,
}

impl GradedOrdering {
    /// Enumerate all multi-indices with `|alpha| < max_order`.
    pub fn new(vars: usize, max_order: usize) -> Result<Arc<Self>> {
        if vars == 0 || max_order == 0 {
            return Err(Error::DimensionMismatch(format!(
                "ordering requires vars >= 1 and max_order >= 1 (got {vars}, {max_order})"
            )));
        }
        let count = binomial_u128((max_order + vars - 1) as u64, vars as u64)
            .filter(|&c| c <= usize::MAX as u128 && c <= 100_000_000)
            .ok_or_else(|| {
                Error::SizeOverflow(format!("{vars} variables up to order {max_order}"))
            })? as usize;

        let mut indices = Vec::with_capacity(count);
        let mut offsets = Vec::with_capacity(max_order + 1);
        let mut scratch = vec![0u32; vars];
        for k in 0..max_order {
            offsets.push(indices.len());
            emit_order(&mut scratch, 0, k as u32, &mut indices);
        }
        offsets.push(indices.len());
        debug_assert_eq!(indices.len(), count);
        Ok(Arc::new(Self { vars, max_order, indices, offsets }))
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn multi_index(&self, pos: usize) -> &MultiIndex {
        &self.indices[pos]
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn order_of(&self, pos: usize) -> u32 {
        self.indices[pos].order()
    }

    /// First position of the given order (= count of indices of lower order).
    pub fn order_offset(&self, order: usize) -> usize {
        self.offsets[order.min(self.max_order)]
    }

    /// Position of a multi-index, if its order is below the bound.
    pub fn position(&self, exponents: &[u32]) -> Option<usize> {
        debug_assert_eq!(exponents.len(), self.vars);
        let order: u32 = exponents.iter().sum();
        if (order as usize) >= self.max_order {
            return None;
        }
        Some(self.offsets[order as usize] + rank_within_order(exponents, order))
    }
}

/// Rank of `exponents` among all tuples of the same order, in descending
/// lexicographic order: tuples with a larger first entry come first.
fn rank_within_order(exponents: &[u32], order: u32) -> usize {
    let mut rank = 0usize;
    let mut remaining = order;
    let vars = exponents.len();
    for (slot, &e) in exponents.iter().enumerate().take(vars.saturating_sub(1)) {
        let tail_vars = (vars - slot - 1) as u64;
        // Tuples whose entry at `slot` exceeds `e` precede this one.
        for v in (e + 1)..=remaining {
            let s = (remaining - v) as u64;
            rank += binomial_u128(s + tail_vars - 1, tail_vars - 1).expect("small binomial")
                as usize;
        }
        remaining -= e;
    }
    rank
}

fn emit_order(scratch: &mut [u32], slot: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if slot + 1 == scratch.len() {
        scratch[slot] = remaining;
        out.push(MultiIndex::new(scratch.to_vec()));
        return;
    }
    for v in (0..=remaining).rev() {
        scratch[slot] = v;
        emit_order(scratch, slot + 1, remaining - v, out);
    }
}

/// One phase-space component of a coefficient sequence.
#[derive(Clone, Debug)]
pub struct CoeffSeq<T: Scalar> {
    ordering: Arc<GradedOrdering>,
    values: Vec<Complex<T>>,
}

impl<T: Scalar> CoeffSeq<T> {
    pub fn zeros(ordering: Arc<GradedOrdering>) -> Self {
        let n = ordering.len();
        Self { ordering, values: vec![Complex::new(T::zero(), T::zero()); n] }
    }

    pub fn from_values(ordering: Arc<GradedOrdering>, values: Vec<Complex<T>>) -> Result<Self> {
        if values.len() != ordering.len() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient count {} does not match ordering size {}",
                values.len(),
                ordering.len()
            )));
        }
        Ok(Self { ordering, values })
    }

    /// Dirac sequence: `value` at `exponents`, zero elsewhere.
    pub fn delta(ordering: Arc<GradedOrdering>, exponents: &[u32], value: Complex<T>) -> Self {
        let mut s = Self::zeros(ordering);
        let pos = s.ordering.position(exponents).expect("index within ordering");
        s.values[pos] = value;
        s
    }

    pub fn ordering(&self) -> &Arc<GradedOrdering> {
        &self.ordering
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }

    pub fn get(&self, exponents: &[u32]) -> Complex<T> {
        self.ordering
            .position(exponents)
            .map(|p| self.values[p])
            .unwrap_or_else(|| Complex::new(T::zero(), T::zero()))
    }

    /// Weighted l1 norm `sum |u_alpha| nu^|alpha|`.
    pub fn ell1_norm(&self, nu: T) -> T {
        let pows = real_pow_table(nu, self.ordering.max_order);
        let mut acc = T::zero();
        for (pos, v) in self.values.iter().enumerate() {
            acc = acc + v.norm() * pows[self.ordering.order_of(pos) as usize];
        }
        acc
    }

    /// Cauchy product truncated to orders `< out_order`.
    pub fn cauchy_product(&self, other: &Self, out_order: usize) -> Result<Self> {
        if self.ordering.vars() != other.ordering.vars() {
            return Err(Error::DimensionMismatch(format!(
                "cauchy product of sequences over {} and {} variables",
                self.ordering.vars(),
                other.ordering.vars()
            )));
        }
        let out_ord = if out_order == self.ordering.max_order {
            self.ordering.clone()
        } else {
            GradedOrdering::new(self.ordering.vars(), out_order)?
        };
        let mut out = Self::zeros(out_ord);
        let vars = self.ordering.vars();
        let mut sum = vec![0u32; vars];
        for (i, a) in self.ordering.indices().iter().enumerate() {
            let u = self.values[i];
            if u.re == T::zero() && u.im == T::zero() {
                continue;
            }
            let max_rem = out_order as u32 - 1;
            if a.order() > max_rem {
                continue;
            }
            for (j, b) in other.ordering.indices().iter().enumerate() {
                if a.order() + b.order() > max_rem {
                    continue;
                }
                let v = other.values[j];
                if v.re == T::zero() && v.im == T::zero() {
                    continue;
                }
                for k in 0..vars {
                    sum[k] = a.exponents()[k] + b.exponents()[k];
                }
                let pos = out.ordering.position(&sum).expect("within out ordering");
                out.values[pos] = out.values[pos] + u * v;
            }
        }
        Ok(out)
    }
}

/// Coefficient sequence with one [`CoeffSeq`] per phase-space component,
/// all sharing one ordering.
#[derive(Clone, Debug)]
pub struct VectorSeq<T: Scalar> {
    components: Vec<CoeffSeq<T>>,
}

impl<T: Scalar> VectorSeq<T> {
    pub fn zeros(ordering: Arc<GradedOrdering>, n: usize) -> Self {
        Self { components: (0..n).map(|_| CoeffSeq::zeros(ordering.clone())).collect() }
    }

    pub fn from_components(components: Vec<CoeffSeq<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::DimensionMismatch("empty vector sequence".into()));
        }
        let ord = components[0].ordering().clone();
        for c in &components {
            if !Arc::ptr_eq(c.ordering(), &ord) && c.ordering().len() != ord.len() {
                return Err(Error::DimensionMismatch(
                    "vector sequence components must share one ordering".into(),
                ));
            }
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn ordering(&self) -> &Arc<GradedOrdering> {
        self.components[0].ordering()
    }

    pub fn component(&self, i: usize) -> &CoeffSeq<T> {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut CoeffSeq<T> {
        &mut self.components[i]
    }

    pub fn components(&self) -> &[CoeffSeq<T>] {
        &self.components
    }

    /// Coefficient vector at a multi-index (zero outside the stored range).
    pub fn coeff(&self, exponents: &[u32]) -> Vec<Complex<T>> {
        self.components.iter().map(|c| c.get(exponents)).collect()
    }

    pub fn set_coeff(&mut self, pos: usize, value: &[Complex<T>]) {
        for (c, v) in self.components.iter_mut().zip(value) {
            c.values_mut()[pos] = *v;
        }
    }

    /// Product-space norm: max over components of the weighted l1 norms.
    pub fn x_norm(&self, nu: T) -> T {
        self.components
            .iter()
            .map(|c| c.ell1_norm(nu))
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    /// Apply the diagonal scaling `u_alpha -> gamma^alpha u_alpha`.
    pub fn rescale(&self, gamma: &Scaling<T>) -> Result<VectorSeq<T>> {
        let ord = self.ordering().clone();
        if gamma.len() != ord.vars() {
            return Err(Error::DimensionMismatch(format!(
                "scaling has {} entries for {} variables",
                gamma.len(),
                ord.vars()
            )));
        }
        let pows = gamma.pow_table(ord.max_order);
        let mut out = self.clone();
        for c in &mut out.components {
            for (pos, v) in c.values.iter_mut().enumerate() {
                let w = pows.weight(ord.multi_index(pos).exponents());
                *v = Complex::new(v.re * w, v.im * w);
            }
        }
        Ok(out)
    }

    /// Evaluate `sum a_alpha theta^alpha`. Monomials are built incrementally
    /// from a lower-order parent, one multiplication per index.
    pub fn evaluate(&self, theta: &[Complex<T>]) -> Vec<Complex<T>> {
        let ord = self.ordering();
        debug_assert_eq!(theta.len(), ord.vars());
        let monomials = monomials_at(ord, theta);
        let mut out = vec![Complex::new(T::zero(), T::zero()); self.dim()];
        for (i, c) in self.components.iter().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (pos, v) in c.values.iter().enumerate() {
                acc = acc + *v * monomials[pos];
            }
            out[i] = acc;
        }
        out
    }
}

/// All monomials `theta^alpha` in graded order.
pub fn monomials_at<T: Scalar>(
    ord: &GradedOrdering,
    theta: &[Complex<T>],
) -> Vec<Complex<T>> {
    let mut monomials = vec![Complex::new(T::one(), T::zero()); ord.len()];
    let vars = ord.vars();
    let mut parent = vec![0u32; vars];
    for pos in 1..ord.len() {
        let alpha = ord.multi_index(pos).exponents();
        let k = (0..vars).find(|&k| alpha[k] > 0).expect("nonzero index");
        parent.copy_from_slice(alpha);
        parent[k] -= 1;
        let pp = ord.position(&parent).expect("parent present");
        monomials[pos] = monomials[pp] * theta[k];
    }
    monomials
}

fn real_pow_table<T: Scalar>(base: T, max_order: usize) -> Vec<T> {
    let mut pows = Vec::with_capacity(max_order + 1);
    let mut acc = T::one();
    for _ in 0..=max_order {
        pows.push(acc);
        acc = acc * base;
    }
    pows
}

/// Positive per-direction scalings `gamma = (gamma_1, ..., gamma_m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling<T: Scalar> {
    gamma: Vec<T>,
}

impl<T: Scalar> Scaling<T> {
    pub fn new(gamma: Vec<T>) -> Result<Self> {
        for &g in &gamma {
            if !(g > T::zero()) || !g.is_finite() {
                return Err(Error::NonPositiveScaling(
                    g.to_f64().unwrap_or(f64::NAN),
                ));
            }
        }
        Ok(Self { gamma })
    }

    pub fn ones(vars: usize) -> Self {
        Self { gamma: vec![T::one(); vars] }
    }

    pub fn uniform(vars: usize, g: T) -> Result<Self> {
        Self::new(vec![g; vars])
    }

    /// Entrywise reciprocal (the inverse rescaling).
    pub fn inverse(&self) -> Self {
        Self { gamma: self.gamma.iter().map(|&g| T::one() / g).collect() }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.gamma
    }

    /// Check that entries at conjugate-paired slots agree.
    pub fn check_pairing(&self, pairing: &[(usize, usize)]) -> Result<()> {
        for &(a, b) in pairing {
            if self.gamma[a] != self.gamma[b] {
                return Err(Error::DimensionMismatch(format!(
                    "scaling entries {} and {} differ on a conjugate pair",
                    a, b
                )));
            }
        }
        Ok(())
    }

    /// Per-variable power tables for evaluating `gamma^alpha`.
    pub fn pow_table(&self, max_order: usize) -> PowTable<T> {
        PowTable {
            pows: self.gamma.iter().map(|&g| real_pow_table(g, max_order)).collect(),
        }
    }
}

/// Precomputed `gamma_k^e` values.
pub struct PowTable<T: Scalar> {
    pows: Vec<Vec<T>>,
}

impl<T: Scalar> PowTable<T> {
    /// `gamma^alpha = prod_k gamma_k^{alpha_k}`.
    pub fn weight(&self, exponents: &[u32]) -> T {
        let mut acc = T::one();
        for (k, &e) in exponents.iter().enumerate() {
            if e > 0 {
                acc = acc * self.pows[k][e as usize];
            }
        }
        acc
    }
}

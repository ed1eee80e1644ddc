//! Outward-rounded interval arithmetic.
//!
//! Endpoints are widened to the adjacent representable value after every
//! floating operation, so each primitive op encloses the exact image of its
//! operand intervals without touching the FPU rounding mode. Complex
//! intervals are axis-aligned rectangles.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Directed scalar helpers; every result is pushed one step outward.
pub fn add_up<T: Scalar>(a: T, b: T) -> T {
    (a + b).step_up()
}
pub fn add_down<T: Scalar>(a: T, b: T) -> T {
    (a + b).step_down()
}
pub fn sub_up<T: Scalar>(a: T, b: T) -> T {
    (a - b).step_up()
}
pub fn sub_down<T: Scalar>(a: T, b: T) -> T {
    (a - b).step_down()
}
pub fn mul_up<T: Scalar>(a: T, b: T) -> T {
    (a * b).step_up()
}
pub fn mul_down<T: Scalar>(a: T, b: T) -> T {
    (a * b).step_down()
}
pub fn div_up<T: Scalar>(a: T, b: T) -> T {
    (a / b).step_up()
}
pub fn div_down<T: Scalar>(a: T, b: T) -> T {
    (a / b).step_down()
}
/// Upper bound of sqrt (sqrt is correctly rounded, one step suffices).
pub fn sqrt_up<T: Scalar>(a: T) -> T {
    a.sqrt().step_up()
}
pub fn sqrt_down<T: Scalar>(a: T) -> T {
    a.sqrt().step_down()
}
/// Upper bound of the complex modulus.
pub fn abs_up<T: Scalar>(z: Complex<T>) -> T {
    sqrt_up(add_up(mul_up(z.re, z.re), mul_up(z.im, z.im)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval<T: Scalar> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        debug_assert!(lo <= hi, "interval endpoints out of order");
        Self { lo, hi }
    }

    /// Degenerate interval containing exactly `x`.
    pub fn point(x: T) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn zero() -> Self {
        Self::point(T::zero())
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> T {
        (self.lo + self.hi) / T::of_f64(2.0)
    }

    /// Upper bound of |x| over the interval.
    pub fn mag(&self) -> T {
        self.lo.abs().max(self.hi.abs())
    }

    /// Lower bound of |x| over the interval (0 if it straddles zero).
    pub fn mig(&self) -> T {
        if self.lo <= T::zero() && self.hi >= T::zero() {
            T::zero()
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(add_down(self.lo, o.lo), add_up(self.hi, o.hi))
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(sub_down(self.lo, o.hi), sub_up(self.hi, o.lo))
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.hi, -self.lo)
    }

    pub fn mul(&self, o: &Self) -> Self {
        let (a, b, c, d) = (self.lo, self.hi, o.lo, o.hi);
        let lo = mul_down(a, c)
            .min(mul_down(a, d))
            .min(mul_down(b, c))
            .min(mul_down(b, d));
        let hi = mul_up(a, c)
            .max(mul_up(a, d))
            .max(mul_up(b, c))
            .max(mul_up(b, d));
        Self::new(lo, hi)
    }

    pub fn div(&self, o: &Self) -> Result<Self> {
        if o.contains(T::zero()) {
            return Err(Error::DivisionByZeroInterval);
        }
        let (a, b, c, d) = (self.lo, self.hi, o.lo, o.hi);
        let lo = div_down(a, c)
            .min(div_down(a, d))
            .min(div_down(b, c))
            .min(div_down(b, d));
        let hi = div_up(a, c)
            .max(div_up(a, d))
            .max(div_up(b, c))
            .max(div_up(b, d));
        Ok(Self::new(lo, hi))
    }

    /// Enclosure of |x| over the interval (exact endpoints).
    pub fn abs(&self) -> Self {
        Self::new(self.mig(), self.mag())
    }

    pub fn sqrt(&self) -> Result<Self> {
        if self.lo < T::zero() {
            return Err(Error::NegativeSqrt);
        }
        Ok(Self::new(sqrt_down(self.lo).max(T::zero()), sqrt_up(self.hi)))
    }

    pub fn scale(&self, s: T) -> Self {
        if s >= T::zero() {
            Self::new(mul_down(self.lo, s), mul_up(self.hi, s))
        } else {
            Self::new(mul_down(self.hi, s), mul_up(self.lo, s))
        }
    }
}

/// Rectangle enclosure of a complex value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexInterval<T: Scalar> {
    pub re: Interval<T>,
    pub im: Interval<T>,
}

impl<T: Scalar> ComplexInterval<T> {
    pub fn point(z: Complex<T>) -> Self {
        Self { re: Interval::point(z.re), im: Interval::point(z.im) }
    }

    pub fn zero() -> Self {
        Self { re: Interval::zero(), im: Interval::zero() }
    }

    pub fn contains(&self, z: Complex<T>) -> bool {
        self.re.contains(z.re) && self.im.contains(z.im)
    }

    pub fn midpoint(&self) -> Complex<T> {
        Complex::new(self.re.midpoint(), self.im.midpoint())
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { re: self.re.add(&o.re), im: self.im.add(&o.im) }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { re: self.re.sub(&o.re), im: self.im.sub(&o.im) }
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self {
            re: self.re.mul(&o.re).sub(&self.im.mul(&o.im)),
            im: self.re.mul(&o.im).add(&self.im.mul(&o.re)),
        }
    }

    pub fn conj(&self) -> Self {
        Self { re: self.re, im: self.im.neg() }
    }

    /// Division by `|o|^2`-scaled conjugate; errors when 0 may lie in `o`.
    pub fn div(&self, o: &Self) -> Result<Self> {
        let denom = o.re.mul(&o.re).add(&o.im.mul(&o.im));
        let num = self.mul(&o.conj());
        Ok(Self { re: num.re.div(&denom)?, im: num.im.div(&denom)? })
    }

    /// Upper bound of the modulus over the rectangle.
    pub fn mod_upper(&self) -> T {
        let r = self.re.mag();
        let i = self.im.mag();
        sqrt_up(add_up(mul_up(r, r), mul_up(i, i)))
    }

    /// Enclosure of the modulus over the rectangle.
    pub fn modulus(&self) -> Interval<T> {
        let rl = self.re.mig();
        let il = self.im.mig();
        let lo = sqrt_down(add_down((rl * rl).step_down(), (il * il).step_down()));
        Interval::new(lo.max(T::zero()), self.mod_upper())
    }

    pub fn scale_real(&self, s: T) -> Self {
        Self { re: self.re.scale(s), im: self.im.scale(s) }
    }
}

//! Scalar abstraction used by the surface catalog.
//!
//! Catalog immersions are written once, generically over [`Scalar`], and then
//! evaluated either on plain `f64` (finite differences), on [`Taylor3`]
//! (exact partial derivatives up to third order) or on `Complex64`
//! (complex-step differentiation in tests).

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(x: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;

    fn scale(self, s: f64) -> Self {
        self * Self::cst(s)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::cst(1.0);
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl Scalar for f64 {
    fn cst(x: f64) -> Self {
        x
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
}

impl Scalar for Complex64 {
    fn cst(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn sin(self) -> Self {
        Complex64::sin(self)
    }
    fn cos(self) -> Self {
        Complex64::cos(self)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
    fn sinh(self) -> Self {
        Complex64::sinh(self)
    }
    fn cosh(self) -> Self {
        Complex64::cosh(self)
    }
}

/// Monomial exponents `(a, b)` of `x^a y^b`, graded by total degree.
const EXPONENTS: [(usize, usize); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

const fn monomial_index(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

/// Bivariate Taylor polynomial truncated after total degree 3.
///
/// `c[k]` is the coefficient of the k-th monomial in [`EXPONENTS`] order, so
/// partial derivatives are read off as `∂^a_u ∂^b_v f = a! b! c[index(a,b)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Taylor3 {
    pub c: [f64; 10],
}

impl Taylor3 {
    pub fn constant(x: f64) -> Self {
        let mut c = [0.0; 10];
        c[0] = x;
        Self { c }
    }

    /// The coordinate function `u` expanded at `u0`.
    pub fn var_u(u0: f64) -> Self {
        let mut t = Self::constant(u0);
        t.c[1] = 1.0;
        t
    }

    /// The coordinate function `v` expanded at `v0`.
    pub fn var_v(v0: f64) -> Self {
        let mut t = Self::constant(v0);
        t.c[2] = 1.0;
        t
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// Partial derivative `∂^a_u ∂^b_v` at the expansion point (`a + b ≤ 3`).
    pub fn partial(&self, a: usize, b: usize) -> f64 {
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        fact(a) * fact(b) * self.c[monomial_index(a, b)]
    }

    /// `f(self)` from the derivatives `[f, f', f'', f''']` of `f` at the constant term.
    fn compose(self, d: [f64; 4]) -> Self {
        let mut e = self;
        e.c[0] = 0.0;
        let e2 = e * e;
        let e3 = e2 * e;
        let mut out = Self::constant(d[0]);
        for k in 1..10 {
            out.c[k] = d[1] * e.c[k] + 0.5 * d[2] * e2.c[k] + d[3] / 6.0 * e3.c[k];
        }
        out
    }

    fn recip(self) -> Self {
        let a = self.c[0];
        self.compose([
            1.0 / a,
            -1.0 / (a * a),
            2.0 / (a * a * a),
            -6.0 / (a * a * a * a),
        ])
    }
}

impl Add for Taylor3 {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for k in 0..10 {
            self.c[k] += rhs.c[k];
        }
        self
    }
}

impl Sub for Taylor3 {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for k in 0..10 {
            self.c[k] -= rhs.c[k];
        }
        self
    }
}

impl Neg for Taylor3 {
    type Output = Self;
    fn neg(mut self) -> Self {
        for k in 0..10 {
            self.c[k] = -self.c[k];
        }
        self
    }
}

impl Mul for Taylor3 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = [0.0; 10];
        for (p, &(pa, pb)) in EXPONENTS.iter().enumerate() {
            if self.c[p] == 0.0 {
                continue;
            }
            for (q, &(qa, qb)) in EXPONENTS.iter().enumerate() {
                if pa + pb + qa + qb > 3 {
                    continue;
                }
                out[monomial_index(pa + qa, pb + qb)] += self.c[p] * rhs.c[q];
            }
        }
        Self { c: out }
    }
}

impl Div for Taylor3 {
    type Output = Self;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl Scalar for Taylor3 {
    fn cst(x: f64) -> Self {
        Self::constant(x)
    }
    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c])
    }
    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s])
    }
    fn exp(self) -> Self {
        let e = self.c[0].exp();
        self.compose([e; 4])
    }
    fn sinh(self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose([s, c, s, c])
    }
    fn cosh(self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose([c, s, c, s])
    }
    fn scale(mut self, s: f64) -> Self {
        for k in 0..10 {
            self.c[k] *= s;
        }
        self
    }
}

/// Complex number over an arbitrary [`Scalar`]; used for holomorphic catalog maps.
#[derive(Debug, Clone, Copy)]
pub struct Cplx<S> {
    pub re: S,
    pub im: S,
}

impl<S: Scalar> Cplx<S> {
    pub fn new(re: S, im: S) -> Self {
        Self { re, im }
    }

    pub fn from_c64(z: Complex64) -> Self {
        Self::new(S::cst(z.re), S::cst(z.im))
    }

    pub fn powi(self, n: u32) -> Self {
        let mut acc = Self::new(S::cst(1.0), S::cst(0.0));
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }
}

impl<S: Scalar> Add for Cplx<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }
}

impl<S: Scalar> Mul for Cplx<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn product_rule_on_polynomials() {
        let u = Taylor3::var_u(0.7);
        let v = Taylor3::var_v(-0.3);
        // f = u^2 v + v^3
        let f = u * u * v + v * v * v;
        assert_close(f.value(), 0.49 * -0.3 + (-0.3f64).powi(3));
        assert_close(f.partial(1, 0), 2.0 * 0.7 * -0.3);
        assert_close(f.partial(0, 1), 0.49 + 3.0 * 0.09);
        assert_close(f.partial(2, 0), 2.0 * -0.3);
        assert_close(f.partial(1, 1), 2.0 * 0.7);
        assert_close(f.partial(0, 2), 6.0 * -0.3);
        assert_close(f.partial(2, 1), 2.0);
        assert_close(f.partial(0, 3), 6.0);
        assert_close(f.partial(3, 0), 0.0);
    }

    #[test]
    fn transcendental_chain_rule() {
        let t = 0.4;
        let x = Taylor3::var_u(t);
        let f = x.cosh();
        assert_close(f.partial(1, 0), t.sinh());
        assert_close(f.partial(2, 0), t.cosh());
        assert_close(f.partial(3, 0), t.sinh());
        let g = (x.scale(2.0)).sin();
        assert_close(g.partial(3, 0), -8.0 * (2.0 * t).cos());
        let h = Taylor3::constant(1.0) / (x + Taylor3::constant(1.0));
        assert_close(h.partial(3, 0), -6.0 / (1.0 + t).powi(4));
    }

    #[test]
    fn mixed_partials_of_exponential() {
        let u = Taylor3::var_u(0.2);
        let v = Taylor3::var_v(0.5);
        let f = (u * v).exp();
        let e = (0.1f64).exp();
        // d/du d/dv e^{uv} = (1 + uv) e^{uv}
        assert_close(f.partial(1, 1), (1.0 + 0.1) * e);
        // d^2/du^2 d/dv e^{uv} = (2v + u v^2) e^{uv}
        assert_close(f.partial(2, 1), (2.0 * 0.5 + 0.2 * 0.25) * e);
    }
}

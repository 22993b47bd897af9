use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use crate::linalg::{CMat, C64};

/// `constant + Σ coef · x[index]` over the real decision vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn var(index: usize) -> Self {
        Self {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(i, c)| (i, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn add_scaled(&mut self, other: &Affine, s: f64) {
        if s == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(i, c)| (i, c * s)));
        self.constant += other.constant * s;
    }

    /// Merges repeated indices and drops zero coefficients.
    pub fn compact(&mut self) {
        if self.terms.len() < 2 {
            self.terms.retain(|t| t.1 != 0.0);
            return;
        }
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => out.push((i, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn compacted(mut self) -> Self {
        self.compact();
        self
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }
}

pub fn sum<'a, I: IntoIterator<Item = &'a Affine>>(items: I) -> Affine {
    let mut out = Affine::zero();
    for a in items {
        out.add_scaled(a, 1.0);
    }
    out.compacted()
}

impl From<f64> for Affine {
    fn from(c: f64) -> Self {
        Affine::constant(c)
    }
}

impl Add<&Affine> for &Affine {
    type Output = Affine;
    fn add(self, rhs: &Affine) -> Affine {
        let mut out = self.clone();
        out.add_scaled(rhs, 1.0);
        out
    }
}

impl Add for Affine {
    type Output = Affine;
    fn add(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, 1.0);
        self
    }
}

impl Add<f64> for Affine {
    type Output = Affine;
    fn add(mut self, rhs: f64) -> Affine {
        self.constant += rhs;
        self
    }
}

impl Sub<&Affine> for &Affine {
    type Output = Affine;
    fn sub(self, rhs: &Affine) -> Affine {
        let mut out = self.clone();
        out.add_scaled(rhs, -1.0);
        out
    }
}

impl Sub for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: Affine) -> Affine {
        self.add_scaled(&rhs, -1.0);
        self
    }
}

impl Sub<f64> for Affine {
    type Output = Affine;
    fn sub(mut self, rhs: f64) -> Affine {
        self.constant -= rhs;
        self
    }
}

impl AddAssign<&Affine> for Affine {
    fn add_assign(&mut self, rhs: &Affine) {
        self.add_scaled(rhs, 1.0);
    }
}

impl SubAssign<&Affine> for Affine {
    fn sub_assign(&mut self, rhs: &Affine) {
        self.add_scaled(rhs, -1.0);
    }
}

impl Mul<f64> for &Affine {
    type Output = Affine;
    fn mul(self, rhs: f64) -> Affine {
        self.scale(rhs)
    }
}

impl Mul<f64> for Affine {
    type Output = Affine;
    fn mul(self, rhs: f64) -> Affine {
        self.scale(rhs)
    }
}

impl Neg for Affine {
    type Output = Affine;
    fn neg(self) -> Affine {
        self.scale(-1.0)
    }
}

/// Complex-valued affine expression `re + j·im`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplexAffine {
    pub re: Affine,
    pub im: Affine,
}

impl ComplexAffine {
    pub fn new(re: Affine, im: Affine) -> Self {
        Self { re, im }
    }

    pub fn constant(c: C64) -> Self {
        Self::new(Affine::constant(c.re), Affine::constant(c.im))
    }

    pub fn real(re: Affine) -> Self {
        Self::new(re, Affine::zero())
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re.clone(), self.im.scale(-1.0))
    }

    /// `c · self`.
    pub fn mul_c(&self, c: C64) -> Self {
        let mut re = self.re.scale(c.re);
        re.add_scaled(&self.im, -c.im);
        let mut im = self.im.scale(c.re);
        im.add_scaled(&self.re, c.im);
        Self::new(re, im)
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, other: &ComplexAffine, c: C64) {
        self.re.add_scaled(&other.re, c.re);
        self.re.add_scaled(&other.im, -c.im);
        self.im.add_scaled(&other.im, c.re);
        self.im.add_scaled(&other.re, c.im);
    }

    pub fn add_const(&mut self, c: C64) {
        self.re.constant += c.re;
        self.im.constant += c.im;
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        C64::new(self.re.eval(x), self.im.eval(x))
    }

    pub fn compact(&mut self) {
        self.re.compact();
        self.im.compact();
    }

    pub fn compacted(mut self) -> Self {
        self.compact();
        self
    }
}

impl Add<&ComplexAffine> for &ComplexAffine {
    type Output = ComplexAffine;
    fn add(self, rhs: &ComplexAffine) -> ComplexAffine {
        ComplexAffine::new(&self.re + &rhs.re, &self.im + &rhs.im)
    }
}

impl Sub<&ComplexAffine> for &ComplexAffine {
    type Output = ComplexAffine;
    fn sub(self, rhs: &ComplexAffine) -> ComplexAffine {
        ComplexAffine::new(&self.re - &rhs.re, &self.im - &rhs.im)
    }
}

/// `Σ c_i · z_i` for complex coefficients.
pub fn linear_combination(coefs: &[C64], items: &[ComplexAffine]) -> ComplexAffine {
    let mut out = ComplexAffine::default();
    for (c, z) in coefs.iter().zip(items) {
        if *c != C64::from(0.0) {
            out.add_scaled(z, *c);
        }
    }
    out.compacted()
}

/// Hermitian matrix variable of order `n`, backed by `n²` real parameters:
/// the diagonal first, then `(Re, Im)` pairs of the strict upper triangle in
/// row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianVar {
    pub n: usize,
    pub offset: usize,
}

impl HermitianVar {
    pub fn num_params(n: usize) -> usize {
        n * n
    }

    fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        // Pairs before row i: Σ_{r<i} (n − 1 − r).
        let before = i * (2 * self.n - i - 1) / 2;
        self.offset + self.n + 2 * (before + (j - i - 1))
    }

    pub fn entry(&self, i: usize, j: usize) -> ComplexAffine {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => ComplexAffine::real(Affine::var(self.offset + i)),
            Less => {
                let k = self.upper_index(i, j);
                ComplexAffine::new(Affine::var(k), Affine::var(k + 1))
            }
            Greater => self.entry(j, i).conj(),
        }
    }

    pub fn trace(&self) -> Affine {
        let mut t = Affine::zero();
        for i in 0..self.n {
            t.terms.push((self.offset + i, 1.0));
        }
        t
    }

    /// `Re Tr(C X)` for a constant matrix `C`; exact `Tr(C X)` when `C` is
    /// Hermitian.
    pub fn inner(&self, c: &CMat) -> Affine {
        let mut out = Affine::zero();
        for i in 0..self.n {
            // Tr(CX) = Σ_ij C_ji X_ij.
            out.terms.push((self.offset + i, c[(i, i)].re));
            for j in (i + 1)..self.n {
                let k = self.upper_index(i, j);
                // Re(C_ji X_ij + C_ij conj(X_ij)).
                let a = c[(j, i)] + c[(i, j)];
                let b = c[(j, i)] - c[(i, j)];
                out.terms.push((k, a.re));
                out.terms.push((k + 1, -b.im));
            }
        }
        out.compacted()
    }

    pub fn value(&self, x: &[f64]) -> CMat {
        CMat::from_fn(self.n, self.n, |i, j| self.entry(i, j).eval(x))
    }

    /// Parameter vector that represents the Hermitian matrix `m`.
    pub fn params_of(&self, m: &CMat) -> Vec<f64> {
        let mut p = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            p[i] = m[(i, i)].re;
            for j in (i + 1)..self.n {
                let k = self.upper_index(i, j) - self.offset;
                p[k] = m[(i, j)].re;
                p[k + 1] = m[(i, j)].im;
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_merges_and_drops() {
        let a = Affine {
            terms: vec![(3, 1.0), (1, 2.0), (3, -1.0), (1, 0.5)],
            constant: 1.0,
        };
        assert_eq!(a.compacted().terms, vec![(1, 2.5)]);
    }

    #[test]
    fn complex_scaling() {
        let z = ComplexAffine::new(Affine::var(0), Affine::var(1));
        let x = [2.0, -1.0];
        let c = C64::new(0.5, 3.0);
        assert!((z.mul_c(c).eval(&x) - c * C64::new(2.0, -1.0)).norm() < 1e-15);
        assert_eq!(z.conj().eval(&x), C64::new(2.0, 1.0));
    }

    #[test]
    fn hermitian_layout_and_inner() {
        let h = HermitianVar { n: 3, offset: 2 };
        let m = CMat::from_fn(3, 3, |i, j| {
            if i == j {
                C64::from(i as f64 + 1.0)
            } else if i < j {
                C64::new(i as f64 + 0.5, j as f64 - 0.25)
            } else {
                C64::new(j as f64 + 0.5, -(i as f64 - 0.25))
            }
        });
        let mut x = vec![0.0, 0.0];
        x.extend(h.params_of(&m));
        assert_eq!(h.value(&x), m);
        let c = CMat::from_fn(3, 3, |i, j| C64::new(i as f64 - j as f64, (i * j) as f64 + 0.3));
        let direct = (&c * &m).trace().re;
        assert!((h.inner(&c).eval(&x) - direct).abs() < 1e-12);
        assert_eq!(h.trace().eval(&x), 6.0);
    }
}

//! Small numeric utilities: second-order forward-mode duals and PSD
//! projection of element Hessians.
//!
//! [`Dual2`] carries a value, its gradient and its (symmetric) Hessian with
//! respect to `N` independent variables. Energies and squared-distance
//! branches are written once in terms of `Dual2` arithmetic and yield exact
//! first and second derivatives. Only the upper triangle of the Hessian is
//! maintained during arithmetic; [`Dual2::hessian`] mirrors it on extraction.

use nalgebra::{DMatrix, DVector, Vector3};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar with exact first and second derivatives w.r.t. `N` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Dual2<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    h: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// Independent variable number `i` with value `v`.
    pub fn var(v: f64, i: usize) -> Self {
        let mut d = Self::constant(v);
        d.g[i] = 1.0;
        d
    }

    /// Full (mirrored) Hessian.
    pub fn hessian(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(N, N);
        for i in 0..N {
            for j in i..N {
                m[(i, j)] = self.h[i][j];
                m[(j, i)] = self.h[i][j];
            }
        }
        m
    }

    pub fn gradient(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.g)
    }

    /// Chain rule through a scalar function with derivatives `d1`, `d2`.
    fn unary(self, v: f64, d1: f64, d2: f64) -> Self {
        let mut out = Self::constant(v);
        for i in 0..N {
            out.g[i] = d1 * self.g[i];
        }
        for i in 0..N {
            for j in i..N {
                out.h[i][j] = d1 * self.h[i][j] + d2 * self.g[i] * self.g[j];
            }
        }
        out
    }

    pub fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.unary(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn ln(self) -> Self {
        self.unary(self.v.ln(), 1.0 / self.v, -1.0 / (self.v * self.v))
    }

    pub fn powi2(self) -> Self {
        self * self
    }

    fn recip(self) -> Self {
        let iv = 1.0 / self.v;
        self.unary(iv, -iv * iv, 2.0 * iv * iv * iv)
    }

    /// atan2(self, other) with exact second derivatives.
    pub fn atan2(self, other: Self) -> Self {
        let (y, x) = (self.v, other.v);
        let r2 = x * x + y * y;
        let fy = x / r2;
        let fx = -y / r2;
        let r4 = r2 * r2;
        let fyy = -2.0 * x * y / r4;
        let fxx = 2.0 * x * y / r4;
        let fxy = (y * y - x * x) / r4;
        let mut out = Self::constant(y.atan2(x));
        for i in 0..N {
            out.g[i] = fy * self.g[i] + fx * other.g[i];
        }
        for i in 0..N {
            for j in i..N {
                out.h[i][j] = fy * self.h[i][j]
                    + fx * other.h[i][j]
                    + fyy * self.g[i] * self.g[j]
                    + fxy * (self.g[i] * other.g[j] + other.g[i] * self.g[j])
                    + fxx * other.g[i] * other.g[j];
            }
        }
        out
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.v += rhs.v;
        for i in 0..N {
            self.g[i] += rhs.g[i];
        }
        for i in 0..N {
            for j in i..N {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.v -= rhs.v;
        for i in 0..N {
            self.g[i] -= rhs.g[i];
        }
        for i in 0..N {
            for j in i..N {
                self.h[i][j] -= rhs.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for i in 0..N {
            self.g[i] = -self.g[i];
        }
        for i in 0..N {
            for j in i..N {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::constant(self.v * rhs.v);
        for i in 0..N {
            out.g[i] = self.g[i] * rhs.v + rhs.g[i] * self.v;
        }
        for i in 0..N {
            for j in i..N {
                out.h[i][j] = self.h[i][j] * rhs.v
                    + rhs.h[i][j] * self.v
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i];
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Mul<f64> for Dual2<N> {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        self.v *= rhs;
        for i in 0..N {
            self.g[i] *= rhs;
        }
        for i in 0..N {
            for j in i..N {
                self.h[i][j] *= rhs;
            }
        }
        self
    }
}

impl<const N: usize> Add<f64> for Dual2<N> {
    type Output = Self;
    fn add(mut self, rhs: f64) -> Self {
        self.v += rhs;
        self
    }
}

impl<const N: usize> Sub<f64> for Dual2<N> {
    type Output = Self;
    fn sub(mut self, rhs: f64) -> Self {
        self.v -= rhs;
        self
    }
}

/// 3-vector of duals; coordinates of one stencil vertex.
pub type DVec3<const N: usize> = [Dual2<N>; 3];

/// Stencil vertex `k` of a point list as three dual variables (slots
/// `3k..3k+3`).
pub fn dvec3_var<const N: usize>(p: &Vector3<f64>, k: usize) -> DVec3<N> {
    [
        Dual2::var(p.x, 3 * k),
        Dual2::var(p.y, 3 * k + 1),
        Dual2::var(p.z, 3 * k + 2),
    ]
}

pub fn dvec3_const<const N: usize>(p: &Vector3<f64>) -> DVec3<N> {
    [
        Dual2::constant(p.x),
        Dual2::constant(p.y),
        Dual2::constant(p.z),
    ]
}

pub fn dsub<const N: usize>(a: &DVec3<N>, b: &DVec3<N>) -> DVec3<N> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn ddot<const N: usize>(a: &DVec3<N>, b: &DVec3<N>) -> Dual2<N> {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn dcross<const N: usize>(a: &DVec3<N>, b: &DVec3<N>) -> DVec3<N> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dnorm_sq<const N: usize>(a: &DVec3<N>) -> Dual2<N> {
    ddot(a, a)
}

pub fn dnorm<const N: usize>(a: &DVec3<N>) -> Dual2<N> {
    dnorm_sq(a).sqrt()
}

/// One element or contact-pair contribution to the global gradient and
/// Hessian: up to four stencil vertices with the local derivative blocks
/// (padded to 12 dofs).
#[derive(Clone, Debug)]
pub struct ElementBlock {
    pub verts: [u32; 4],
    pub vertex_count: usize,
    pub grad: nalgebra::SVector<f64, 12>,
    pub hess: nalgebra::SMatrix<f64, 12, 12>,
}

impl ElementBlock {
    pub fn new(verts: [u32; 4], vertex_count: usize) -> Self {
        Self {
            verts,
            vertex_count,
            grad: nalgebra::SVector::zeros(),
            hess: nalgebra::SMatrix::zeros(),
        }
    }

    pub fn dof(&self) -> usize {
        3 * self.vertex_count
    }

    /// Project the active Hessian block to PSD by symmetric
    /// eigendecomposition, clamping negative eigenvalues to zero.
    pub fn project_psd(&mut self) {
        match self.dof() {
            6 => project_fixed_6(&mut self.hess),
            9 => project_fixed_9(&mut self.hess),
            _ => project_fixed_12(&mut self.hess),
        }
    }
}

macro_rules! project_fixed_impl {
    ($name:ident, $dim:literal) => {
        fn $name(hess: &mut nalgebra::SMatrix<f64, 12, 12>) {
            let mut m = nalgebra::SMatrix::<f64, $dim, $dim>::zeros();
            for i in 0..$dim {
                for j in 0..$dim {
                    m[(i, j)] = hess[(i, j)];
                }
            }
            // symmetrize: roundoff can leave the block slightly skew
            m = (m + m.transpose()) * 0.5;
            let sym = nalgebra::SymmetricEigen::new(m);
            let mut vals = sym.eigenvalues;
            let mut any = false;
            for v in vals.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    any = true;
                }
            }
            if !any {
                return;
            }
            let q = sym.eigenvectors;
            let proj =
                q * nalgebra::SMatrix::<f64, $dim, $dim>::from_diagonal(&vals) * q.transpose();
            for i in 0..$dim {
                for j in 0..$dim {
                    hess[(i, j)] = proj[(i, j)];
                }
            }
        }
    };
}

project_fixed_impl!(project_fixed_6, 6);
project_fixed_impl!(project_fixed_9, 9);
project_fixed_impl!(project_fixed_12, 12);

/// Project a symmetric matrix to the PSD cone by clamping negative
/// eigenvalues to zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut vals = sym.eigenvalues;
    let mut any = false;
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
            any = true;
        }
    }
    if !any {
        return m.clone();
    }
    let q = sym.eigenvectors;
    &q * DMatrix::from_diagonal(&vals) * q.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // f(x, y, z) = x^2 * y + ln(sqrt(z)) * atan2(y, x)
    fn eval(x: f64, y: f64, z: f64) -> Dual2<3> {
        let dx = Dual2::<3>::var(x, 0);
        let dy = Dual2::<3>::var(y, 1);
        let dz = Dual2::<3>::var(z, 2);
        dx * dx * dy + dz.sqrt().ln() * dy.atan2(dx)
    }

    #[test]
    fn dual2_matches_finite_differences() {
        let (x, y, z) = (1.3, -0.7, 2.1);
        let f = eval(x, y, z);
        let e = 1e-5;
        let fd_g = [
            (eval(x + e, y, z).v - eval(x - e, y, z).v) / (2.0 * e),
            (eval(x, y + e, z).v - eval(x, y - e, z).v) / (2.0 * e),
            (eval(x, y, z + e).v - eval(x, y, z - e).v) / (2.0 * e),
        ];
        for i in 0..3 {
            assert_relative_eq!(f.g[i], fd_g[i], max_relative = 1e-7);
        }
        // Hessian columns against gradient differences.
        let h = f.hessian();
        let gp = eval(x + e, y, z);
        let gm = eval(x - e, y, z);
        for i in 0..3 {
            assert_relative_eq!(h[(i, 0)], (gp.g[i] - gm.g[i]) / (2.0 * e), max_relative = 1e-6);
        }
    }

    #[test]
    fn division_and_cross_products() {
        let a = Dual2::<2>::var(3.0, 0);
        let b = Dual2::<2>::var(2.0, 1);
        let q = a / b;
        assert_relative_eq!(q.v, 1.5);
        assert_relative_eq!(q.g[0], 0.5);
        assert_relative_eq!(q.g[1], -0.75);
        // d^2(a/b)/db^2 = 2a/b^3
        assert_relative_eq!(q.hessian()[(1, 1)], 2.0 * 3.0 / 8.0);
    }

    #[test]
    fn psd_projection_clamps_negative_modes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let p = project_psd(&m);
        let eig = nalgebra::SymmetricEigen::new(p.clone());
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-12));
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.0, epsilon = 1e-12);
    }
}

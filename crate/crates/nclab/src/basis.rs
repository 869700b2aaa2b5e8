//! Hermite/Fock bases on the line and the plane, truncation by total degree,
//! the 1D position/derivative blocks and their lifts, displacement operators
//! and tensor quadrature.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Total-degree truncation {(m,n): m+n <= L}, enumerated degree-major and
/// lexicographically within a degree: (0,d), (1,d-1), ..., (d,0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTruncation {
    level: usize,
}

impl BasisTruncation {
    pub fn new(level: usize) -> Self {
        Self { level }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scalar_dim(&self) -> usize {
        (self.level + 1) * (self.level + 2) / 2
    }

    pub fn index_of(&self, m: usize, n: usize) -> Option<usize> {
        let d = m + n;
        (d <= self.level).then(|| d * (d + 1) / 2 + m)
    }

    pub fn pair_of(&self, i: usize) -> (usize, usize) {
        let mut d = (((8 * i + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
        while (d + 1) * (d + 2) / 2 <= i {
            d += 1;
        }
        while d * (d + 1) / 2 > i {
            d -= 1;
        }
        let m = i - d * (d + 1) / 2;
        (m, d - m)
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.scalar_dim()).map(|i| self.pair_of(i)).collect()
    }

    pub fn degree_of(&self, i: usize) -> usize {
        let (m, n) = self.pair_of(i);
        m + n
    }

    /// Scalar indices with m+n <= L - margin.
    pub fn interior(&self, margin: usize) -> Vec<usize> {
        match self.level.checked_sub(margin) {
            Some(top) => (0..(top + 1) * (top + 2) / 2).collect(),
            None => Vec::new(),
        }
    }
}

/// Scaled and sheared Hermite frame
/// phi_{m,n}(x,y) = e^{i kappa x y} h_m(x/lx) h_n(y/ly) / sqrt(lx ly).
/// The unit frame is the plain product basis h_m(x) h_n(y).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub kappa: f64,
}

impl Frame {
    pub fn unit() -> Self {
        Self { lambda_x: 1.0, lambda_y: 1.0, kappa: 0.0 }
    }

    pub fn is_unit(&self) -> bool {
        *self == Self::unit()
    }
}

impl Default for Frame {
    fn default() -> Self {
        Self::unit()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HermiteBasis {
    pub trunc: BasisTruncation,
    pub frame: Frame,
}

impl HermiteBasis {
    pub fn unit(level: usize) -> Self {
        Self { trunc: BasisTruncation::new(level), frame: Frame::unit() }
    }

    pub fn with_frame(level: usize, frame: Frame) -> Self {
        Self { trunc: BasisTruncation::new(level), frame }
    }

    pub fn level(&self) -> usize {
        self.trunc.level()
    }

    pub fn scalar_dim(&self) -> usize {
        self.trunc.scalar_dim()
    }

    pub fn enlarged(&self, extra: usize) -> Self {
        Self { trunc: BasisTruncation::new(self.level() + extra), frame: self.frame }
    }
}

/// Dense complex matrix over a truncated 2D basis, optionally spinor-doubled.
/// Spinor matrices are 2x2 blocks over the scalar basis: index = s * scalar_dim + a.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    pub entries: DMatrix<C64>,
    pub basis: HermiteBasis,
    pub spinor: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    Id,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(&self) -> [[C64; 2]; 2] {
        match self {
            Pauli::Id => [[ONE, ZERO], [ZERO, ONE]],
            Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => [[ZERO, -I], [I, ZERO]],
            Pauli::Z => [[ONE, ZERO], [ZERO, -ONE]],
        }
    }
}

impl OperatorMatrix {
    pub fn scalar(entries: DMatrix<C64>, basis: HermiteBasis) -> Self {
        assert_eq!(entries.nrows(), basis.scalar_dim());
        Self { entries, basis, spinor: false }
    }

    pub fn spinor(entries: DMatrix<C64>, basis: HermiteBasis) -> Self {
        assert_eq!(entries.nrows(), 2 * basis.scalar_dim());
        Self { entries, basis, spinor: true }
    }

    pub fn identity(basis: HermiteBasis, spinor: bool) -> Self {
        let n = basis.scalar_dim() * if spinor { 2 } else { 1 };
        Self { entries: DMatrix::identity(n, n), basis, spinor }
    }

    pub fn zeros(basis: HermiteBasis, spinor: bool) -> Self {
        let n = basis.scalar_dim() * if spinor { 2 } else { 1 };
        Self { entries: DMatrix::zeros(n, n), basis, spinor }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn adjoint(&self) -> Self {
        self.with(self.entries.adjoint())
    }

    fn with(&self, entries: DMatrix<C64>) -> Self {
        Self { entries, basis: self.basis, spinor: self.spinor }
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.entries - self.entries.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn is_antihermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.entries + self.entries.adjoint())) <= tol
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.with(&self.entries * &other.entries)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.with(&self.entries + &other.entries)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.with(&self.entries - &other.entries)
    }

    pub fn scale(&self, s: C64) -> Self {
        self.with(&self.entries * s)
    }

    pub fn commutator(&self, other: &Self) -> Self {
        self.with(&self.entries * &other.entries - &other.entries * &self.entries)
    }

    pub fn anticommutator(&self, other: &Self) -> Self {
        self.with(&self.entries * &other.entries + &other.entries * &self.entries)
    }

    /// Indices (scalar or spinor) whose scalar part has degree <= L - margin.
    pub fn interior_indices(&self, margin: usize) -> Vec<usize> {
        let inner = self.basis.trunc.interior(margin);
        if !self.spinor {
            return inner;
        }
        let n = self.basis.scalar_dim();
        inner.iter().copied().chain(inner.iter().map(|&i| i + n)).collect()
    }

    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.entries[(rows[i], cols[j])])
    }

    pub fn interior_block(&self, margin: usize) -> DMatrix<C64> {
        let idx = self.interior_indices(margin);
        self.block(&idx, &idx)
    }

    /// Frobenius norm of (self - target) on the interior block.
    pub fn interior_residual(&self, target: &Self, margin: usize) -> f64 {
        let idx = self.interior_indices(margin);
        (self.block(&idx, &idx) - target.block(&idx, &idx)).norm()
    }

    /// Scalar operator tensored with a Pauli matrix: blocks s_{ij} * A.
    pub fn kron_pauli(&self, p: Pauli) -> Self {
        assert!(!self.spinor);
        let n = self.dim();
        let s = p.matrix();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for bi in 0..2 {
            for bj in 0..2 {
                if s[bi][bj] != ZERO {
                    out.view_mut((bi * n, bj * n), (n, n)).copy_from(&(&self.entries * s[bi][bj]));
                }
            }
        }
        Self { entries: out, basis: self.basis, spinor: true }
    }

    /// Scalar block (bi, bj) of a spinor matrix.
    pub fn spin_block(&self, bi: usize, bj: usize) -> DMatrix<C64> {
        assert!(self.spinor);
        let n = self.basis.scalar_dim();
        self.entries.view((bi * n, bj * n), (n, n)).into_owned()
    }

    /// Truncate to a smaller level of the same frame (orthogonal projection).
    pub fn project_to(&self, level: usize) -> Self {
        let small = BasisTruncation::new(level);
        let sd = small.scalar_dim();
        let big_n = self.basis.scalar_dim();
        let idx: Vec<usize> = if self.spinor {
            (0..sd).chain((0..sd).map(|i| i + big_n)).collect()
        } else {
            (0..sd).collect()
        };
        Self {
            entries: self.block(&idx, &idx),
            basis: HermiteBasis { trunc: small, frame: self.basis.frame },
            spinor: self.spinor,
        }
    }

    pub fn op_norm(&self) -> f64 {
        op_norm(&self.entries)
    }
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

pub fn op_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(c)
}

/// Largest degree accepted by `hermite_eval`.
pub const MAX_HERMITE_DEGREE: usize = 4096;

/// L2-orthonormal Hermite functions h_0..h_n at x by the normalized recurrence
/// h_{k+1} = x sqrt(2/(k+1)) h_k - sqrt(k/(k+1)) h_{k-1}.
pub fn hermite_all(n: usize, x: f64) -> Result<Vec<f64>> {
    if n > MAX_HERMITE_DEGREE || !x.is_finite() {
        return Err(Error::Range(format!("hermite degree {n} at x = {x}")));
    }
    let mut out = vec![0.0; n + 1];
    if x * x / 2.0 > 700.0 {
        // e^{-x^2/2} underflows; only safe when x is far beyond the turning point.
        if x * x > 4.0 * (2 * n + 1) as f64 + 100.0 {
            return Ok(out);
        }
        return Err(Error::Range(format!("hermite degree {n} at x = {x}")));
    }
    out[0] = PI.powf(-0.25) * (-x * x / 2.0).exp();
    if n >= 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for k in 1..n {
        let kf = k as f64;
        out[k + 1] = x * (2.0 / (kf + 1.0)).sqrt() * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
    Ok(out)
}

pub fn hermite_eval(n: usize, x: f64) -> Result<f64> {
    Ok(hermite_all(n, x)?[n])
}

/// Multiplication by x and d/dx in the 1D Hermite basis h_0..h_L.
#[derive(Clone, Debug)]
pub struct Ops1D {
    pub x: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn build_1d_ops(level: usize) -> Ops1D {
    let n = level + 1;
    let mut x = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    for k in 0..level {
        let v = ((k + 1) as f64 / 2.0).sqrt();
        x[(k, k + 1)] = v;
        x[(k + 1, k)] = v;
        d[(k, k + 1)] = v;
        d[(k + 1, k)] = -v;
    }
    Ops1D { x, d }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Lift a 1D operator onto one axis of the 2D truncated basis; entries that
/// couple out of the truncation set are dropped.
pub fn lift_2d(op1: &DMatrix<C64>, axis: Axis, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let l = basis.level();
    if op1.nrows() < l + 1 || op1.ncols() < l + 1 {
        return Err(Error::Dimension { expected: l + 1, found: op1.nrows().min(op1.ncols()) });
    }
    let tr = basis.trunc;
    let dim = tr.scalar_dim();
    let mut out = DMatrix::zeros(dim, dim);
    for col in 0..dim {
        let (p, q) = tr.pair_of(col);
        match axis {
            Axis::X => {
                for m in 0..=(l - q) {
                    let v = op1[(m, p)];
                    if v != ZERO {
                        out[(tr.index_of(m, q).unwrap(), col)] = v;
                    }
                }
            }
            Axis::Y => {
                for n in 0..=(l - p) {
                    let v = op1[(n, q)];
                    if v != ZERO {
                        out[(tr.index_of(p, n).unwrap(), col)] = v;
                    }
                }
            }
        }
    }
    Ok(OperatorMatrix::scalar(out, basis))
}

/// Position and derivative matrices in a frame: x, y, d/dx, d/dy.
#[derive(Clone, Debug)]
pub struct PlaneOps {
    pub x: OperatorMatrix,
    pub y: OperatorMatrix,
    pub dx: OperatorMatrix,
    pub dy: OperatorMatrix,
}

pub fn plane_ops(basis: HermiteBasis) -> PlaneOps {
    let ops = build_1d_ops(basis.level());
    let xm = to_complex(&ops.x);
    let dm = to_complex(&ops.d);
    let f = basis.frame;
    let x1 = lift_2d(&xm, Axis::X, basis).unwrap();
    let y1 = lift_2d(&xm, Axis::Y, basis).unwrap();
    let dx1 = lift_2d(&dm, Axis::X, basis).unwrap();
    let dy1 = lift_2d(&dm, Axis::Y, basis).unwrap();
    let x = x1.scale(c(f.lambda_x));
    let y = y1.scale(c(f.lambda_y));
    // d/dx acting on e^{i kappa x y} g = e^{i kappa x y}(d/dx + i kappa y) g
    let dx = dx1.scale(c(1.0 / f.lambda_x)).add(&y.scale(I * f.kappa));
    let dy = dy1.scale(c(1.0 / f.lambda_y)).add(&x.scale(I * f.kappa));
    PlaneOps { x, y, dx, dy }
}

/// Frame annihilators c_1, c_2 (lowering m and n respectively).
pub fn frame_annihilators(basis: HermiteBasis) -> (OperatorMatrix, OperatorMatrix) {
    let l = basis.level();
    let mut a = DMatrix::zeros(l + 1, l + 1);
    for k in 0..l {
        a[(k, k + 1)] = c(((k + 1) as f64).sqrt());
    }
    (lift_2d(&a, Axis::X, basis).unwrap(), lift_2d(&a, Axis::Y, basis).unwrap())
}

/// Matrix <m| D(beta) |n>, 0 <= m,n < size, of the displacement
/// D(beta) = exp(beta a^+ - conj(beta) a).
pub fn displacement_1d(beta: C64, size: usize) -> DMatrix<C64> {
    let mut d = DMatrix::zeros(size, size);
    if size == 0 {
        return d;
    }
    d[(0, 0)] = c((-beta.norm_sqr() / 2.0).exp());
    for m in 1..size {
        d[(m, 0)] = d[(m - 1, 0)] * beta / (m as f64).sqrt();
    }
    let bc = beta.conj();
    for n in 0..size - 1 {
        let s = 1.0 / ((n + 1) as f64).sqrt();
        for m in 0..size {
            let mut v = -bc * d[(m, n)];
            if m > 0 {
                v += (m as f64).sqrt() * d[(m - 1, n)];
            }
            d[(m, n + 1)] = v * s;
        }
    }
    d
}

/// Frame amplitudes (beta_1, beta_2) of exp(i u.z + v.grad), u, v real.
pub fn frame_betas(frame: Frame, u: [f64; 2], v: [f64; 2]) -> (C64, C64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (lx, ly, k) = (frame.lambda_x, frame.lambda_y, frame.kappa);
    let b1 = C64::new(-v[0] / lx, lx * (u[0] + k * v[1])) * s;
    let b2 = C64::new(-v[1] / ly, ly * (u[1] + k * v[0])) * s;
    (b1, b2)
}

/// Exact matrix elements of exp(i u.z + v.grad) on the truncated basis.
pub fn displacement_2d(basis: HermiteBasis, u: [f64; 2], v: [f64; 2]) -> OperatorMatrix {
    let (b1, b2) = frame_betas(basis.frame, u, v);
    let size = basis.level() + 1;
    let d1 = displacement_1d(b1, size);
    let d2 = displacement_1d(b2, size);
    OperatorMatrix::scalar(tensor_on_truncation(&d1, &d2, basis.trunc), basis)
}

/// Entries <(m,n)| A (x) B |(p,q)> = A[m,p] B[n,q] over the truncation set.
pub fn tensor_on_truncation(a: &DMatrix<C64>, b: &DMatrix<C64>, tr: BasisTruncation) -> DMatrix<C64> {
    let pairs = tr.pairs();
    let dim = pairs.len();
    DMatrix::from_fn(dim, dim, |i, j| {
        let (m, n) = pairs[i];
        let (p, q) = pairs[j];
        a[(m, p)] * b[(n, q)]
    })
}

/// Grid-free pointwise-evaluable function on the plane. `half_width` bounds the
/// region outside which the function is negligible; `spacing` is the coarsest
/// sample spacing that resolves it.
#[derive(Clone)]
pub struct SmoothFunction2D {
    f: Arc<dyn Fn(f64, f64) -> C64 + Send + Sync>,
    pub half_width: f64,
    pub spacing: f64,
}

impl std::fmt::Debug for SmoothFunction2D {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("SmoothFunction2D")
            .field("half_width", &self.half_width)
            .field("spacing", &self.spacing)
            .finish()
    }
}

impl SmoothFunction2D {
    pub fn new<F>(half_width: f64, spacing: f64, f: F) -> Self
    where
        F: Fn(f64, f64) -> C64 + Send + Sync + 'static,
    {
        Self { f: Arc::new(f), half_width, spacing }
    }

    pub fn eval(&self, x: f64, y: f64) -> C64 {
        (self.f)(x, y)
    }

    /// Isotropic Gaussian packet amp * exp(-|z-z0|^2/(2 s^2) + i k.z).
    pub fn gaussian(center: [f64; 2], width: f64, momentum: [f64; 2], amp: C64) -> Self {
        let hw = (center[0].abs().max(center[1].abs()) + 7.0 * width).max(1.0);
        let kmax = momentum[0].abs().max(momentum[1].abs()) + 6.0 / width;
        Self::new(hw, PI / kmax, move |x, y| {
            let dx = x - center[0];
            let dy = y - center[1];
            amp * C64::new(-(dx * dx + dy * dy) / (2.0 * width * width), momentum[0] * x + momentum[1] * y).exp()
        })
    }

    pub fn conj(&self) -> Self {
        let f = self.f.clone();
        Self::new(self.half_width, self.spacing, move |x, y| f(x, y).conj())
    }
}

/// Scaled, sheared Hermite basis function phi_{m,n} of the frame.
pub fn basis_function(basis: HermiteBasis, m: usize, n: usize) -> SmoothFunction2D {
    let f = basis.frame;
    let hw = (((2 * (m + n) + 1) as f64).sqrt() + 5.0) * f.lambda_x.max(f.lambda_y);
    let kmax = ((2 * (m + n) + 1) as f64).sqrt() / f.lambda_x.min(f.lambda_y) + f.kappa.abs() * hw + 4.0;
    let norm = 1.0 / (f.lambda_x * f.lambda_y).sqrt();
    SmoothFunction2D::new(hw, PI / kmax, move |x, y| {
        let hx = hermite_all(m, x / f.lambda_x).map(|v| v[m]).unwrap_or(0.0);
        let hy = hermite_all(n, y / f.lambda_y).map(|v| v[n]).unwrap_or(0.0);
        C64::from_polar(norm * hx * hy, f.kappa * x * y)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    GaussHermite,
}

/// Tensor quadrature on [-W, W]^2. Trapezoid nodes are x_j = -W + j h,
/// h = 2W/N (periodic layout shared with the Fourier grids).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub half_width: f64,
    pub points_per_axis: usize,
    #[serde(default)]
    pub rule: QuadratureRule,
}

/// Gauss-Hermite node counts above this are refused (weights underflow).
pub const MAX_GAUSS_HERMITE: usize = 150;

impl QuadratureGrid {
    pub fn trapezoid(half_width: f64, points_per_axis: usize) -> Self {
        Self { half_width, points_per_axis, rule: QuadratureRule::Trapezoid }
    }

    /// W = max(8, 2 sqrt(2L+1)), 256 points per axis.
    pub fn default_for_level(level: usize) -> Self {
        Self::trapezoid(8f64.max(2.0 * ((2 * level + 1) as f64).sqrt()), 256)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_axis as f64
    }

    /// Advertised error for unit-scale Gaussian-decaying integrands.
    pub fn tolerance(&self) -> f64 {
        match self.rule {
            QuadratureRule::Trapezoid => {
                let h = self.spacing();
                let tail = (-self.half_width * self.half_width / 2.0).exp();
                let alias = (-PI * PI / (h * h)).exp();
                (10.0 * tail.max(alias)).max(1e-12)
            }
            QuadratureRule::GaussHermite => 1e-12,
        }
    }

    /// Nodes and weights per axis. Gauss-Hermite weights include e^{x^2} so
    /// that sum w_j f(x_j) approximates the plain integral of f.
    pub fn nodes_weights(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.points_per_axis;
        match self.rule {
            QuadratureRule::Trapezoid => {
                let h = self.spacing();
                Ok(((0..n).map(|j| -self.half_width + j as f64 * h).collect(), vec![h; n]))
            }
            QuadratureRule::GaussHermite => {
                if n > MAX_GAUSS_HERMITE || n == 0 {
                    return Err(Error::Range(format!("gauss-hermite with {n} nodes")));
                }
                // Golub-Welsch: nodes are eigenvalues of the position matrix.
                let x = build_1d_ops(n - 1).x;
                let eig = x.symmetric_eigen();
                let mut nw: Vec<(f64, f64)> = (0..n)
                    .map(|k| {
                        let xk = eig.eigenvalues[k];
                        let v0 = eig.eigenvectors[(0, k)];
                        (xk, PI.sqrt() * v0 * v0 * (xk * xk).exp())
                    })
                    .collect();
                nw.sort_by(|a, b| a.0.total_cmp(&b.0));
                Ok(nw.into_iter().unzip())
            }
        }
    }

    fn check(&self, f: &SmoothFunction2D) -> Result<()> {
        if f.half_width > self.half_width + 1e-12 {
            return Err(Error::Resolution(format!(
                "function support {} exceeds grid half-width {}",
                f.half_width, self.half_width
            )));
        }
        if self.rule == QuadratureRule::Trapezoid && self.spacing() > f.spacing {
            return Err(Error::Resolution(format!(
                "grid spacing {} coarser than required {}",
                self.spacing(),
                f.spacing
            )));
        }
        Ok(())
    }

    /// Sample a function on the tensor nodes, row-major in (x, y).
    pub fn sample(&self, f: &SmoothFunction2D) -> Result<Vec<C64>> {
        let (xs, _) = self.nodes_weights()?;
        let n = xs.len();
        let rows = crate::par::map(n, |i| xs.iter().map(|&y| f.eval(xs[i], y)).collect::<Vec<_>>());
        Ok(rows.into_iter().flatten().collect::<Vec<_>>()).map(|v| {
            debug_assert_eq!(v.len(), n * n);
            v
        })
    }
}

/// <f, g> = integral of conj(f) g by tensor quadrature.
pub fn inner_product(f: &SmoothFunction2D, g: &SmoothFunction2D, grid: &QuadratureGrid) -> Result<C64> {
    grid.check(f)?;
    grid.check(g)?;
    let (xs, ws) = grid.nodes_weights()?;
    let rows = crate::par::map(xs.len(), |i| {
        let mut acc = ZERO;
        for (j, &y) in xs.iter().enumerate() {
            acc += f.eval(xs[i], y).conj() * g.eval(xs[i], y) * ws[j];
        }
        acc * ws[i]
    });
    Ok(rows.into_iter().fold(ZERO, |a, b| a + b))
}

/// Coefficients <phi_a, f> of a function in the frame basis, by quadrature.
pub fn project(basis: HermiteBasis, f: &SmoothFunction2D, grid: &QuadratureGrid) -> Result<DVector<C64>> {
    grid.check(f)?;
    let (xs, ws) = grid.nodes_weights()?;
    let fr = basis.frame;
    let l = basis.level();
    let n = xs.len();
    let hx: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| hermite_all(l, x / fr.lambda_x).map(|v| v.iter().map(|h| h / fr.lambda_x.sqrt()).collect()))
        .collect::<Result<_>>()?;
    let hy: Vec<Vec<f64>> = xs
        .iter()
        .map(|&y| hermite_all(l, y / fr.lambda_y).map(|v| v.iter().map(|h| h / fr.lambda_y.sqrt()).collect()))
        .collect::<Result<_>>()?;
    // g[m][j] = sum_i h_m(x_i) e^{-i kappa x_i y_j} f(x_i, y_j) w_i
    let cols = crate::par::map(n, |j| {
        let y = xs[j];
        let mut g = vec![ZERO; l + 1];
        for i in 0..n {
            let v = f.eval(xs[i], y) * C64::from_polar(ws[i], -fr.kappa * xs[i] * y);
            for (m, gm) in g.iter_mut().enumerate() {
                *gm += v * hx[i][m];
            }
        }
        g
    });
    let tr = basis.trunc;
    Ok(DVector::from_fn(tr.scalar_dim(), |a, _| {
        let (m, nn) = tr.pair_of(a);
        (0..n).fold(ZERO, |acc, j| acc + cols[j][m] * hy[j][nn] * ws[j])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_is_degree_major_lexicographic() {
        let tr = BasisTruncation::new(2);
        assert_eq!(tr.pairs(), vec![(0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0)]);
        assert_eq!(tr.scalar_dim(), 6);
        assert_eq!(tr.index_of(2, 1), None);
    }

    #[test]
    fn hermite_values() {
        assert!((hermite_eval(0, 0.0).unwrap() - 0.7511255444649425).abs() < 1e-15);
        assert_eq!(hermite_eval(1, 0.0).unwrap(), 0.0);
        // H_3(x) = 8x^3 - 12x, h_3 = H_3 e^{-x^2/2} / sqrt(2^3 3! sqrt(pi))
        let x: f64 = 1.25;
        let direct = (8.0 * x.powi(3) - 12.0 * x) * (-x * x / 2.0).exp() / (48.0 * PI.sqrt()).sqrt();
        assert!((hermite_eval(3, x).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn hermite_range_guard() {
        assert!(hermite_eval(MAX_HERMITE_DEGREE + 1, 0.0).is_err());
        assert!(hermite_eval(2000, 40.0).is_err());
        assert_eq!(hermite_eval(3, 80.0).unwrap(), 0.0);
    }

    #[test]
    fn one_d_blocks() {
        let ops = build_1d_ops(1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(ops.x, DMatrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]));
        let l = 7;
        let ops = build_1d_ops(l);
        let comm = &ops.x * &ops.d - &ops.d * &ops.x;
        for i in 0..l {
            for j in 0..l {
                let target = if i == j { -1.0 } else { 0.0 };
                assert!((comm[(i, j)] - target).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn oscillator_interior_spectrum() {
        let ops = build_1d_ops(3);
        let h = (&ops.x * &ops.x - &ops.d * &ops.d) / 2.0;
        let inner = h.view((0, 0), (2, 2)).into_owned();
        let mut e: Vec<f64> = inner.symmetric_eigen().eigenvalues.iter().cloned().collect();
        e.sort_by(f64::total_cmp);
        assert!((e[0] - 0.5).abs() < 1e-10 && (e[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn lift_entries() {
        let b = HermiteBasis::unit(2);
        let x = to_complex(&build_1d_ops(2).x);
        let lx = lift_2d(&x, Axis::X, b).unwrap();
        let i10 = b.trunc.index_of(1, 0).unwrap();
        assert!((lx.entries[(i10, 0)].re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let id = lift_2d(&DMatrix::identity(3, 3), Axis::Y, b).unwrap();
        assert_eq!(id.entries, DMatrix::identity(6, 6));
        assert!(lift_2d(&DMatrix::identity(2, 2), Axis::X, b).is_err());
    }

    #[test]
    fn displacement_matches_laguerre_form() {
        // <m|D|0> coherent state and <1|D|1> = (1 - |b|^2) e^{-|b|^2/2}
        let b = C64::new(0.4, -0.7);
        let d = displacement_1d(b, 6);
        let e = (-b.norm_sqr() / 2.0).exp();
        assert!((d[(1, 1)] - c((1.0 - b.norm_sqr()) * e)).norm() < 1e-14);
        assert!((d[(2, 0)] - b * b * e / 2f64.sqrt()).norm() < 1e-14);
        assert!((d[(0, 2)] - b.conj() * b.conj() * e / 2f64.sqrt()).norm() < 1e-14);
        assert!((d[(0, 1)] + b.conj() * e).norm() < 1e-14);
    }

    #[test]
    fn displacement_is_unitary_on_low_block() {
        let d = displacement_1d(C64::new(1.3, 0.8), 60);
        let p = &d * d.adjoint();
        for i in 0..15 {
            for j in 0..15 {
                let t = if i == j { ONE } else { ZERO };
                assert!((p[(i, j)] - t).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn quadrature_normalization_and_orthogonality() {
        let g = QuadratureGrid::trapezoid(8.0, 256);
        let b = HermiteBasis::unit(1);
        let h00 = basis_function(b, 0, 0);
        let h10 = basis_function(b, 1, 0);
        let h01 = basis_function(b, 0, 1);
        assert!((inner_product(&h00, &h00, &g).unwrap() - ONE).norm() < 1e-10);
        assert!(inner_product(&h10, &h01, &g).unwrap().norm() < 1e-10);
        let xh = SmoothFunction2D::new(h00.half_width, h00.spacing, {
            let h = h00.clone();
            move |x, y| h.eval(x, y) * x
        });
        assert!(inner_product(&h00, &xh, &g).unwrap().norm() < 1e-10);
    }

    #[test]
    fn gauss_hermite_rule() {
        let g = QuadratureGrid { half_width: 8.0, points_per_axis: 40, rule: QuadratureRule::GaussHermite };
        let h = basis_function(HermiteBasis::unit(2), 2, 1);
        assert!((inner_product(&h, &h, &g).unwrap() - ONE).norm() < 1e-12);
        let big = QuadratureGrid { points_per_axis: 500, ..g };
        assert!(big.nodes_weights().is_err());
    }

    #[test]
    fn resolution_guard() {
        let g = QuadratureGrid::trapezoid(3.0, 256);
        let h = basis_function(HermiteBasis::unit(10), 10, 0);
        assert!(matches!(inner_product(&h, &h, &g), Err(Error::Resolution(_))));
    }

    #[test]
    fn framed_basis_is_orthonormal() {
        let fr = Frame { lambda_x: 1.3, lambda_y: 0.8, kappa: 0.4 };
        let b = HermiteBasis::with_frame(3, fr);
        let g = QuadratureGrid::trapezoid(10.0, 256);
        let coeffs = project(b, &basis_function(b, 1, 2), &g).unwrap();
        for a in 0..b.scalar_dim() {
            let t = if b.trunc.pair_of(a) == (1, 2) { 1.0 } else { 0.0 };
            assert!((coeffs[a] - c(t)).norm() < 1e-10);
        }
    }

    #[test]
    fn frame_position_matrix_agrees_with_quadrature() {
        let fr = Frame { lambda_x: 1.2, lambda_y: 0.9, kappa: -0.3 };
        let b = HermiteBasis::with_frame(4, fr);
        let ops = plane_ops(b);
        let g = QuadratureGrid::trapezoid(10.0, 256);
        let phi = basis_function(b, 1, 1);
        // (d/dx) phi via closed form is awkward; check x phi instead.
        let xphi = SmoothFunction2D::new(phi.half_width, phi.spacing, {
            let p = phi.clone();
            move |x, y| p.eval(x, y) * x
        });
        let coeffs = project(b, &xphi, &g).unwrap();
        let col = b.trunc.index_of(1, 1).unwrap();
        for a in 0..b.scalar_dim() {
            assert!((coeffs[a] - ops.x.entries[(a, col)]).norm() < 1e-10);
        }
    }
}

//! Star products on the plane with a terminating series backend and a grid
//! backend, the ordering multiplier T_rho, the rho-involution and
//! left-multiplication matrices.
//!
//! Product: f *_rho g = f exp(i theta [(1 - rho) <-d_x ->d_y - rho <-d_y ->d_x]) g,
//! so x * y = xy + i(1 - rho) theta and y * x = xy - i rho theta.
//!
//! Fourier convention: fhat(k) = int f(z) e^{-i k.z} dz. T_rho is the
//! multiplier e^{+i(1/2 - rho) theta k_x k_y}, so that
//! T_rho(f *_rho g) = (T_rho f) *_{1/2} (T_rho g).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::basis::{
    c, displacement_1d, frame_betas, plane_ops, HermiteBasis, OperatorMatrix, QuadratureGrid, SmoothFunction2D, C64,
    I, ONE, ZERO,
};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::report::{Check, Report};

/// Finite sum of c_ab x^a y^b with exact coefficient bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PolynomialFunction2D {
    pub coeffs: BTreeMap<(usize, usize), C64>,
}

impl PolynomialFunction2D {
    pub fn constant(v: C64) -> Self {
        Self::monomial(0, 0, v)
    }

    pub fn monomial(a: usize, b: usize, v: C64) -> Self {
        let mut p = Self::default();
        p.push(a, b, v);
        p
    }

    pub fn x() -> Self {
        Self::monomial(1, 0, ONE)
    }

    pub fn y() -> Self {
        Self::monomial(0, 1, ONE)
    }

    fn push(&mut self, a: usize, b: usize, v: C64) {
        let e = self.coeffs.entry((a, b)).or_insert(ZERO);
        *e += v;
        if *e == ZERO {
            self.coeffs.remove(&(a, b));
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.keys().map(|(a, b)| a + b).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: f64, y: f64) -> C64 {
        self.coeffs.iter().fold(ZERO, |acc, (&(a, b), &v)| acc + v * x.powi(a as i32) * y.powi(b as i32))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&(a, b), &v) in &other.coeffs {
            out.push(a, b, v);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::default();
        for (&(a, b), &v) in &self.coeffs {
            out.push(a, b, v * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for (&(a, b), &v) in &self.coeffs {
            for (&(p, q), &w) in &other.coeffs {
                out.push(a + p, b + q, v * w);
            }
        }
        out
    }

    /// d_x^i d_y^j
    pub fn derivative(&self, i: usize, j: usize) -> Self {
        let mut out = Self::default();
        for (&(a, b), &v) in &self.coeffs {
            if a >= i && b >= j {
                let fa: f64 = ((a - i + 1)..=a).map(|k| k as f64).product();
                let fb: f64 = ((b - j + 1)..=b).map(|k| k as f64).product();
                out.push(a - i, b - j, v * fa * fb);
            }
        }
        out
    }
}

/// poly(x, y) exp(-Q(x, y)), Q = q0 x^2 + q1 xy + q2 y^2 + q3 x + q4 y + q5.
/// Closed under derivatives and under products with polynomials.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianPolynomial {
    pub poly: PolynomialFunction2D,
    pub q: [C64; 6],
    pub half_width: f64,
    pub spacing: f64,
}

impl GaussianPolynomial {
    /// amp exp(-|z - z0|^2 / (2 s^2) + i k.z), metadata as the 2D Gaussian packet.
    pub fn gaussian(center: [f64; 2], width: f64, momentum: [f64; 2], amp: C64) -> Self {
        let s2 = width * width;
        let g = SmoothFunction2D::gaussian(center, width, momentum, amp);
        Self {
            poly: PolynomialFunction2D::constant(amp),
            q: [
                c(0.5 / s2),
                ZERO,
                c(0.5 / s2),
                C64::new(-center[0] / s2, -momentum[0]),
                C64::new(-center[1] / s2, -momentum[1]),
                c((center[0] * center[0] + center[1] * center[1]) / (2.0 * s2)),
            ],
            half_width: g.half_width,
            spacing: g.spacing,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> C64 {
        let q = &self.q;
        let e = q[0] * x * x + q[1] * x * y + q[2] * y * y + q[3] * x + q[4] * y + q[5];
        self.poly.eval(x, y) * (-e).exp()
    }

    pub fn times_poly(&self, p: &PolynomialFunction2D) -> Self {
        Self { poly: self.poly.mul(p), ..self.clone() }
    }

    /// Sum of two with the same exponent.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.q != other.q {
            return Err(Error::Backend("sum of poly-Gaussians with different exponents".into()));
        }
        Ok(Self { poly: self.poly.add(&other.poly), ..self.clone() })
    }

    fn dx(&self) -> Self {
        let q = &self.q;
        let qx = PolynomialFunction2D::monomial(1, 0, q[0] * 2.0)
            .add(&PolynomialFunction2D::monomial(0, 1, q[1]))
            .add(&PolynomialFunction2D::constant(q[3]));
        Self { poly: self.poly.derivative(1, 0).sub(&self.poly.mul(&qx)), ..self.clone() }
    }

    fn dy(&self) -> Self {
        let q = &self.q;
        let qy = PolynomialFunction2D::monomial(0, 1, q[2] * 2.0)
            .add(&PolynomialFunction2D::monomial(1, 0, q[1]))
            .add(&PolynomialFunction2D::constant(q[4]));
        Self { poly: self.poly.derivative(0, 1).sub(&self.poly.mul(&qy)), ..self.clone() }
    }

    pub fn derivative(&self, i: usize, j: usize) -> Self {
        let mut out = self.clone();
        for _ in 0..i {
            out = out.dx();
        }
        for _ in 0..j {
            out = out.dy();
        }
        out
    }

    pub fn to_smooth(&self) -> SmoothFunction2D {
        let me = self.clone();
        SmoothFunction2D::new(self.half_width, self.spacing, move |x, y| me.eval(x, y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Series,
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarConfig {
    pub theta_eff: f64,
    pub rho: f64,
    pub backend: Backend,
    /// Requested grid; the grid backend snaps the spacing (see [`MoyalGrid`]).
    pub grid: QuadratureGrid,
    pub series_max_order: usize,
}

impl Default for StarConfig {
    fn default() -> Self {
        Self { theta_eff: 1.0, rho: 0.5, backend: Backend::Grid, grid: QuadratureGrid::trapezoid(8.0, 256), series_max_order: 8 }
    }
}

impl StarConfig {
    pub fn series(theta_eff: f64, rho: f64) -> Self {
        Self { theta_eff, rho, backend: Backend::Series, ..Self::default() }
    }

    pub fn grid(theta_eff: f64, rho: f64, half_width: f64, points: usize) -> Self {
        Self { theta_eff, rho, backend: Backend::Grid, grid: QuadratureGrid::trapezoid(half_width, points), ..Self::default() }
    }

    pub fn with_rho(self, rho: f64) -> Self {
        Self { rho, ..self }
    }

    pub fn with_backend(self, backend: Backend) -> Self {
        Self { backend, ..self }
    }
}

/// Periodic grid x_i = (i - N/2) h whose spacing is snapped so that the
/// Moyal shift theta k_y / 2 of a y-mode is an integer number `shift` of
/// x-cells: h = sqrt(pi |theta| / (N shift)).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MoyalGrid {
    pub n: usize,
    pub h: f64,
    pub shift: usize,
    pub theta: f64,
}

impl MoyalGrid {
    pub fn snapped(cfg: &StarConfig) -> Result<Self> {
        let n = cfg.grid.points_per_axis;
        let w = cfg.grid.half_width;
        if n < 8 || n % 2 != 0 || !(w > 0.0) {
            return Err(Error::Resolution(format!("grid backend needs even N >= 8 and W > 0, got N={n}, W={w}")));
        }
        let t = cfg.theta_eff.abs();
        if t == 0.0 {
            return Ok(Self { n, h: 2.0 * w / n as f64, shift: 0, theta: 0.0 });
        }
        let shift = ((PI * t * n as f64 / (4.0 * w * w)).round() as usize).max(1);
        Ok(Self { n, h: (PI * t / (n * shift) as f64).sqrt(), shift, theta: cfg.theta_eff })
    }

    /// Unsnapped periodic grid (for transforms that need no Moyal shift).
    pub fn plain(grid: &QuadratureGrid, theta: f64) -> Self {
        Self { n: grid.points_per_axis, h: grid.spacing(), shift: 0, theta }
    }

    pub fn half_width(&self) -> f64 {
        self.n as f64 * self.h / 2.0
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 - (self.n / 2) as f64) * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Signed frequency index of FFT slot m.
    pub fn signed(&self, m: usize) -> i64 {
        if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    pub fn dk(&self) -> f64 {
        2.0 * PI / (self.n as f64 * self.h)
    }

    pub fn frequency(&self, m: usize) -> f64 {
        self.signed(m) as f64 * self.dk()
    }
}

/// Samples on a [`MoyalGrid`], row-major (x index major).
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: MoyalGrid,
    pub values: Vec<C64>,
}

impl GridFunction {
    pub fn sample(grid: MoyalGrid, f: impl Fn(f64, f64) -> C64 + Sync) -> Self {
        let xs = grid.nodes();
        let rows = crate::par::map(grid.n, |i| xs.iter().map(|&y| f(xs[i], y)).collect::<Vec<_>>());
        Self { grid, values: rows.concat() }
    }

    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.values[i * self.grid.n + j]
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() })
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    /// max |f - g| over nodes with |x|, |y| <= frac W
    pub fn interior_diff(&self, other: &Self, frac: f64) -> Result<f64> {
        same_grid(&self.grid, &other.grid)?;
        let lim = frac * self.grid.half_width();
        let xs = self.grid.nodes();
        let mut m = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            for (j, &y) in xs.iter().enumerate() {
                if x.abs() <= lim && y.abs() <= lim {
                    m = m.max((self.at(i, j) - other.at(i, j)).norm());
                }
            }
        }
        Ok(m)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() * self.grid.h
    }
}

fn same_grid(a: &MoyalGrid, b: &MoyalGrid) -> Result<()> {
    if a.n != b.n || a.h != b.h {
        return Err(Error::Backend(format!("grid mismatch: N={} h={} vs N={} h={}", a.n, a.h, b.n, b.h)));
    }
    Ok(())
}

/// In-place FFT of every row (forward uses e^{-2 pi i m j / N}, inverse is
/// unnormalized).
fn fft_rows(v: &mut [C64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    plan.process(v);
}

fn transpose(v: &[C64], n: usize) -> Vec<C64> {
    let mut t = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = v[i * n + j];
        }
    }
    t
}

fn fft2(v: &[C64], n: usize, inverse: bool) -> Vec<C64> {
    let mut a = v.to_vec();
    fft_rows(&mut a, n, inverse);
    let mut t = transpose(&a, n);
    fft_rows(&mut t, n, inverse);
    transpose(&t, n)
}

/// Fourier multiplier m(k_x, k_y) applied on the periodic grid.
pub fn apply_multiplier(f: &GridFunction, m: impl Fn(f64, f64) -> C64) -> GridFunction {
    let g = f.grid;
    let n = g.n;
    let mut hat = fft2(&f.values, n, false);
    for a in 0..n {
        for b in 0..n {
            hat[a * n + b] *= m(g.frequency(a), g.frequency(b));
        }
    }
    let scale = 1.0 / (n * n) as f64;
    GridFunction { grid: g, values: fft2(&hat, n, true).into_iter().map(|v| v * scale).collect() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

fn t_rho_grid(f: &GridFunction, theta: f64, rho: f64, dir: Direction) -> GridFunction {
    let s = match dir {
        Direction::Forward => 1.0,
        Direction::Inverse => -1.0,
    };
    let c0 = s * (0.5 - rho) * theta;
    if c0 == 0.0 {
        return f.clone();
    }
    apply_multiplier(f, |kx, ky| C64::from_polar(1.0, c0 * kx * ky))
}

fn check_resolvable(f: &SmoothFunction2D, g: &MoyalGrid) -> Result<()> {
    if f.half_width > g.half_width() + 1e-12 {
        return Err(Error::Resolution(format!(
            "function support {} exceeds grid half-width {}",
            f.half_width,
            g.half_width()
        )));
    }
    if g.h > f.spacing {
        return Err(Error::Resolution(format!("grid spacing {} coarser than required {}", g.h, f.spacing)));
    }
    Ok(())
}

/// Sample a smooth function on the snapped grid of `cfg`.
pub fn sample_on(f: &SmoothFunction2D, cfg: &StarConfig) -> Result<GridFunction> {
    let g = MoyalGrid::snapped(cfg)?;
    check_resolvable(f, &g)?;
    Ok(GridFunction::sample(g, |x, y| f.eval(x, y)))
}

/// T_rho f (forward) or T_rho^{-1} f (inverse) on the snapped grid.
pub fn t_rho(f: &SmoothFunction2D, cfg: &StarConfig, dir: Direction) -> Result<GridFunction> {
    Ok(t_rho_grid(&sample_on(f, cfg)?, cfg.theta_eff, cfg.rho, dir))
}

pub fn t_rho_on(f: &GridFunction, cfg: &StarConfig, dir: Direction) -> GridFunction {
    t_rho_grid(f, cfg.theta_eff, cfg.rho, dir)
}

/// f^{*_rho} = T_rho^{-1} conj(T_rho f)
pub fn involution_rho_on(f: &GridFunction, cfg: &StarConfig) -> GridFunction {
    let t = t_rho_on(f, cfg, Direction::Forward).conj();
    t_rho_on(&t, cfg, Direction::Inverse)
}

pub fn involution_rho(f: &SmoothFunction2D, cfg: &StarConfig) -> Result<GridFunction> {
    Ok(involution_rho_on(&sample_on(f, cfg)?, cfg))
}

/// Weyl product on the snapped grid: in the mixed representation
/// F(x, y) = sum_m a_m(x) e^{i k_m y},
/// (a e^{i k y}) * (b e^{i k' y}) = a(x - theta k'/2) b(x + theta k/2) e^{i (k + k') y},
/// and theta k/2 is an integer number of cells by construction.
fn weyl_star_grid(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    same_grid(&f.grid, &g.grid)?;
    let grid = f.grid;
    let n = grid.n;
    if grid.theta == 0.0 {
        return f.zip(g, |a, b| a * b);
    }
    let parity = |m: usize| if grid.signed(m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let coef = |v: &GridFunction| {
        let mut a = v.values.clone();
        for row in a.chunks_mut(n) {
            fft_rows(row, n, false);
            for (m, x) in row.iter_mut().enumerate() {
                *x *= parity(m) / n as f64;
            }
        }
        a
    };
    let (af, ag) = (coef(f), coef(g));
    let colmax = |a: &[C64]| -> Vec<f64> {
        (0..n).map(|m| (0..n).fold(0.0f64, |acc, i| acc.max(a[i * n + m].norm()))).collect()
    };
    let (mf, mg) = (colmax(&af), colmax(&ag));
    let scale = mf.iter().cloned().fold(0.0, f64::max) * mg.iter().cloned().fold(0.0, f64::max);
    let sgn: i64 = if grid.theta > 0.0 { 1 } else { -1 };
    let j = grid.shift as i64;
    let ni = n as i64;
    let cols = crate::par::map(n, |l| {
        let mut out = vec![ZERO; n];
        for m in 0..n {
            let lm = (l + n - m) % n;
            if mf[m] * mg[lm] <= 1e-18 * scale {
                continue;
            }
            let d = grid.signed(lm);
            let s = grid.signed(m);
            let sf = sgn * j * d;
            let sg = sgn * j * s;
            for (ix, o) in out.iter_mut().enumerate() {
                let i = ix as i64;
                let fi = (i - sf).rem_euclid(ni) as usize;
                let gi = (i + sg).rem_euclid(ni) as usize;
                *o += af[fi * n + m] * ag[gi * n + lm];
            }
        }
        out
    });
    let mut vals = vec![ZERO; n * n];
    for (l, col) in cols.iter().enumerate() {
        for ix in 0..n {
            vals[ix * n + l] = col[ix] * parity(l);
        }
    }
    for row in vals.chunks_mut(n) {
        fft_rows(row, n, true);
    }
    Ok(GridFunction { grid, values: vals })
}

/// f *_rho g = T_rho^{-1}((T_rho f) *_{1/2} (T_rho g)) on the grid.
pub fn star_grid(f: &GridFunction, g: &GridFunction, cfg: &StarConfig) -> Result<GridFunction> {
    let (th, rho) = (cfg.theta_eff, cfg.rho);
    let tf = t_rho_grid(f, th, rho, Direction::Forward);
    let tg = t_rho_grid(g, th, rho, Direction::Forward);
    Ok(t_rho_grid(&weyl_star_grid(&tf, &tg)?, th, rho, Direction::Inverse))
}

/// Inputs and outputs of [`star`].
#[derive(Clone, Debug)]
pub enum StarOperand {
    Poly(PolynomialFunction2D),
    PolyGauss(GaussianPolynomial),
    Smooth(SmoothFunction2D),
    Grid(GridFunction),
}

impl StarOperand {
    fn sample(&self, g: MoyalGrid) -> Result<GridFunction> {
        match self {
            StarOperand::Poly(p) => Ok(GridFunction::sample(g, |x, y| p.eval(x, y))),
            StarOperand::PolyGauss(p) => {
                check_resolvable(&p.to_smooth(), &g)?;
                Ok(GridFunction::sample(g, |x, y| p.eval(x, y)))
            }
            StarOperand::Smooth(f) => {
                check_resolvable(f, &g)?;
                Ok(GridFunction::sample(g, |x, y| f.eval(x, y)))
            }
            StarOperand::Grid(f) => {
                same_grid(&f.grid, &g)?;
                Ok(f.clone())
            }
        }
    }

    pub fn as_grid(&self) -> Option<&GridFunction> {
        match self {
            StarOperand::Grid(g) => Some(g),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> Option<C64> {
        match self {
            StarOperand::Poly(p) => Some(p.eval(x, y)),
            StarOperand::PolyGauss(p) => Some(p.eval(x, y)),
            StarOperand::Smooth(f) => Some(f.eval(x, y)),
            StarOperand::Grid(_) => None,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coefficient of (d_x^k d_y^{n-k} f)(d_x^{n-k} d_y^k g) in the order-n term.
fn series_weight(n: usize, k: usize, theta: f64, rho: f64) -> C64 {
    let fact: f64 = (1..=n).map(|i| i as f64).product();
    (I * theta).powu(n as u32) / fact * binomial(n, k) * (1.0 - rho).powi(k as i32) * (-rho).powi((n - k) as i32)
}

/// Star product; series backend for polynomial (x) polynomial and
/// polynomial (x) poly-Gaussian in either order, grid backend for anything
/// sampled on the snapped grid.
pub fn star(f: &StarOperand, g: &StarOperand, cfg: &StarConfig) -> Result<StarOperand> {
    match cfg.backend {
        Backend::Grid => {
            let grid = MoyalGrid::snapped(cfg)?;
            Ok(StarOperand::Grid(star_grid(&f.sample(grid)?, &g.sample(grid)?, cfg)?))
        }
        Backend::Series => {
            let (th, rho) = (cfg.theta_eff, cfg.rho);
            let order = match (f, g) {
                (StarOperand::Poly(a), StarOperand::Poly(b)) => a.degree().min(b.degree()),
                (StarOperand::Poly(a), StarOperand::PolyGauss(_)) => a.degree(),
                (StarOperand::PolyGauss(_), StarOperand::Poly(b)) => b.degree(),
                _ => {
                    return Err(Error::Backend(
                        "series backend needs a polynomial factor and a polynomial or poly-Gaussian partner".into(),
                    ))
                }
            };
            if order > cfg.series_max_order {
                return Err(Error::Backend(format!(
                    "series order {order} exceeds series_max_order {}",
                    cfg.series_max_order
                )));
            }
            match (f, g) {
                (StarOperand::Poly(a), StarOperand::Poly(b)) => {
                    let mut out = PolynomialFunction2D::default();
                    for n in 0..=order {
                        for k in 0..=n {
                            let w = series_weight(n, k, th, rho);
                            out = out.add(&a.derivative(k, n - k).mul(&b.derivative(n - k, k)).scale(w));
                        }
                    }
                    Ok(StarOperand::Poly(out))
                }
                (StarOperand::Poly(a), StarOperand::PolyGauss(b)) => {
                    let mut out = GaussianPolynomial { poly: PolynomialFunction2D::default(), ..b.clone() };
                    for n in 0..=order {
                        for k in 0..=n {
                            let w = series_weight(n, k, th, rho);
                            out = out.add(&b.derivative(n - k, k).times_poly(&a.derivative(k, n - k).scale(w)))?;
                        }
                    }
                    Ok(StarOperand::PolyGauss(out))
                }
                (StarOperand::PolyGauss(a), StarOperand::Poly(b)) => {
                    let mut out = GaussianPolynomial { poly: PolynomialFunction2D::default(), ..a.clone() };
                    for n in 0..=order {
                        for k in 0..=n {
                            let w = series_weight(n, k, th, rho);
                            out = out.add(&a.derivative(k, n - k).times_poly(&b.derivative(n - k, k).scale(w)))?;
                        }
                    }
                    Ok(StarOperand::PolyGauss(out))
                }
                _ => unreachable!(),
            }
        }
    }
}

/// Largest |beta| of a displacement kept in k-space sums, sqrt(L) + 9.
pub fn beta_cutoff(level: usize) -> f64 {
    (level as f64).sqrt() + 9.0
}

/// Non-increasing envelope of max_{m,n < size} |<m|D(beta)|n>|, which
/// depends on |beta| only.
struct DisplacementEnvelope {
    step: f64,
    table: Vec<f64>,
}

impl DisplacementEnvelope {
    fn new(size: usize, rmax: f64) -> Self {
        let step = 0.05;
        let count = (rmax / step).ceil() as usize + 2;
        let mut table: Vec<f64> = (0..count)
            .map(|i| displacement_1d(c(i as f64 * step), size).iter().fold(0.0f64, |m, v| m.max(v.norm())))
            .collect();
        for i in (0..count - 1).rev() {
            table[i] = table[i].max(table[i + 1]);
        }
        Self { step, table }
    }

    /// Upper envelope at r (sampled at the left node of r's cell).
    fn at(&self, r: f64) -> f64 {
        let i = ((r / self.step).floor() as usize).min(self.table.len() - 1);
        self.table[i]
    }
}

/// Matrix of L^rho_f = (2 pi)^{-2} int fhat(k) e^{i(1/2 - rho) theta k_x k_y} D_rho(k) dk,
/// D_rho(k) = exp(i k.z + a.grad), a = (rho theta k_y, (rho - 1) theta k_x),
/// from the grid DFT of the samples. Exact in the basis up to the DFT error.
pub fn left_mult_from_grid(f: &GridFunction, cfg: &StarConfig, basis: HermiteBasis) -> OperatorMatrix {
    left_mult_impl(f, cfg.theta_eff, cfg.rho, basis, true)
}

fn left_mult_impl(f: &GridFunction, theta: f64, rho: f64, basis: HermiteBasis, multiplier: bool) -> OperatorMatrix {
    let g = f.grid;
    let n = g.n;
    let h = g.h;
    let mut hat = fft2(&f.values, n, false);
    let parity = |m: usize| if g.signed(m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    for a in 0..n {
        for b in 0..n {
            hat[a * n + b] *= h * h * parity(a) * parity(b);
        }
    }
    let peak = hat.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let size = basis.level() + 1;
    let bmax = beta_cutoff(basis.level());
    let norm = 1.0 / (n as f64 * h).powi(2);
    let env = DisplacementEnvelope::new(size, bmax);
    let mut modes = Vec::new();
    for a in 0..n {
        let kx = g.frequency(a);
        for b in 0..n {
            let fh = hat[a * n + b];
            if fh.norm() <= 1e-16 * peak {
                continue;
            }
            let ky = g.frequency(b);
            let v = [rho * theta * ky, (rho - 1.0) * theta * kx];
            let (b1, b2) = frame_betas(basis.frame, [kx, ky], v);
            if b1.norm() > bmax || b2.norm() > bmax || fh.norm() * env.at(b1.norm()) * env.at(b2.norm()) <= 1e-16 * peak {
                continue;
            }
            let mk = if multiplier { C64::from_polar(1.0, (0.5 - rho) * theta * kx * ky) } else { ONE };
            modes.push((fh * mk * norm, b1, b2));
        }
    }
    // block[(m, p), (n, q)] = sum_k c_k D1_k[m, p] D2_k[n, q] as real GEMMs over
    // fixed mode chunks (3-multiplication complex product). Rows are grouped
    // by (m <= L/2, p <= L/2); a group only needs n <= L - m_min, q <= L - p_min.
    let l = basis.level();
    let half = l / 2;
    let groups: Vec<(Vec<usize>, Vec<usize>)> = [(0, half), (half + 1, l)]
        .iter()
        .flat_map(|&mr| [(0, half), (half + 1, l)].into_iter().map(move |pr| (mr, pr)))
        .filter(|&((m0, m1), (p0, p1))| m0 <= m1 && p0 <= p1)
        .map(|((m0, m1), (p0, p1))| {
            let rows = (p0..=p1).flat_map(|p| (m0..=m1).map(move |m| m + p * size)).collect();
            let cols = (0..=l - p0).flat_map(|q| (0..=l - m0).map(move |n| n + q * size)).collect();
            (rows, cols)
        })
        .collect();
    let ranges = crate::par::chunks(modes.len(), 512);
    let parts = crate::par::map(ranges.len(), |ci| {
        let r = ranges[ci].clone();
        let w = r.len();
        let s2 = size * size;
        let mut wr = DMatrix::<f64>::zeros(s2, w);
        let mut wi = DMatrix::<f64>::zeros(s2, w);
        let mut vr = DMatrix::<f64>::zeros(w, s2);
        let mut vi = DMatrix::<f64>::zeros(w, s2);
        for (col, k) in r.enumerate() {
            let (coef, b1, b2) = modes[k];
            let d1 = displacement_1d(b1, size);
            let d2 = displacement_1d(b2, size);
            // column-major: D[(m, p)] sits at m + p * size
            for (idx, (x1, x2)) in d1.iter().zip(d2.iter()).enumerate() {
                let t = coef * x1;
                wr[(idx, col)] = t.re;
                wi[(idx, col)] = t.im;
                vr[(col, idx)] = x2.re;
                vi[(col, idx)] = x2.im;
            }
        }
        groups
            .iter()
            .map(|(rows, cols)| {
                let (ar, ai) = (wr.select_rows(rows), wi.select_rows(rows));
                let (br, bi) = (vr.select_columns(cols), vi.select_columns(cols));
                let t1 = &ar * &br;
                let t2 = &ai * &bi;
                let t3 = (ar + ai) * (br + bi);
                let im = &t3 - &t1 - &t2;
                (t1 - t2, im)
            })
            .collect::<Vec<_>>()
    });
    let mut acc: Vec<(DMatrix<f64>, DMatrix<f64>)> =
        groups.iter().map(|(r, c0)| (DMatrix::zeros(r.len(), c0.len()), DMatrix::zeros(r.len(), c0.len()))).collect();
    for part in parts {
        for (a, (re, im)) in acc.iter_mut().zip(part) {
            a.0 += re;
            a.1 += im;
        }
    }
    let s2 = size * size;
    let mut row_at = vec![(usize::MAX, 0); s2];
    let mut col_at = vec![vec![usize::MAX; s2]; groups.len()];
    for (g, (rows, cols)) in groups.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            row_at[r] = (g, i);
        }
        for (j, &c0) in cols.iter().enumerate() {
            col_at[g][c0] = j;
        }
    }
    let pairs = basis.trunc.pairs();
    let dim = pairs.len();
    let total = DMatrix::from_fn(dim, dim, |i, j| {
        let ((m, nn), (p, q)) = (pairs[i], pairs[j]);
        let (g, u) = row_at[m + p * size];
        let v = col_at[g][nn + q * size];
        C64::new(acc[g].0[(u, v)], acc[g].1[(u, v)])
    });
    OperatorMatrix::scalar(total, basis)
}

/// Left multiplication by a smooth profile, sampled on the configured grid
/// (no snapping needed: the k-space sum uses the plain DFT).
pub fn left_mult_matrix(f: &SmoothFunction2D, cfg: &StarConfig, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let g = MoyalGrid::plain(&cfg.grid, cfg.theta_eff);
    check_resolvable(f, &g)?;
    let fg = GridFunction::sample(g, |x, y| f.eval(x, y));
    Ok(left_mult_impl(&fg, cfg.theta_eff, cfg.rho, basis, true))
}

/// Entries <phi_a, f *_rho phi_b> by grid star products and quadrature
/// (slow cross-check of [`left_mult_matrix`]).
pub fn left_mult_by_products(f: &SmoothFunction2D, cfg: &StarConfig, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let grid = MoyalGrid::snapped(cfg)?;
    check_resolvable(f, &grid)?;
    let fg = GridFunction::sample(grid, |x, y| f.eval(x, y));
    let pairs = basis.trunc.pairs();
    let phis: Vec<GridFunction> = pairs
        .iter()
        .map(|&(m, n)| {
            let b = crate::basis::basis_function(basis, m, n);
            GridFunction::sample(grid, |x, y| b.eval(x, y))
        })
        .collect();
    let dim = pairs.len();
    let mut out = DMatrix::<C64>::zeros(dim, dim);
    let h2 = grid.h * grid.h;
    for (j, pj) in phis.iter().enumerate() {
        let prod = star_grid(&fg, pj, cfg)?;
        for (i, pi) in phis.iter().enumerate() {
            out[(i, j)] = pi.values.iter().zip(&prod.values).fold(ZERO, |a, (u, v)| a + u.conj() * v) * h2;
        }
    }
    Ok(OperatorMatrix::scalar(out, basis))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AffineSymbol {
    #[serde(rename = "x")]
    X,
    #[serde(rename = "y")]
    Y,
    #[serde(rename = "A_x")]
    Ax,
    #[serde(rename = "A_y")]
    Ay,
}

/// L_x = x + i(1 - rho) theta_eff d_y, L_y = y - i rho theta_eff d_x,
/// L_{A_x} = alpha_x L_y, L_{A_y} = alpha_y L_x, from lifted 1D blocks.
pub fn affine_left_mult(which: AffineSymbol, params: &ParameterSet, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let th = params.theta_eff()?;
    affine_left_mult_with(which, th, params.rho, params, basis)
}

pub fn affine_left_mult_with(
    which: AffineSymbol,
    theta: f64,
    rho: f64,
    params: &ParameterSet,
    basis: HermiteBasis,
) -> Result<OperatorMatrix> {
    let ops = plane_ops(basis);
    let lx = || ops.x.add(&ops.dy.scale(I * ((1.0 - rho) * theta)));
    let ly = || ops.y.sub(&ops.dx.scale(I * (rho * theta)));
    Ok(match which {
        AffineSymbol::X => lx(),
        AffineSymbol::Y => ly(),
        AffineSymbol::Ax => ly().scale(c(crate::gauge::gauge_potentials(params)?.alpha_x)),
        AffineSymbol::Ay => lx().scale(c(crate::gauge::gauge_potentials(params)?.alpha_y)),
    })
}

/// Right multipliers R_x = x - i rho theta d_y, R_y = y + i(1 - rho) theta d_x
/// (psi * x and psi * y); they commute with every left multiplier.
pub fn affine_right_mult(which: AffineSymbol, theta: f64, rho: f64, basis: HermiteBasis) -> OperatorMatrix {
    let ops = plane_ops(basis);
    match which {
        AffineSymbol::X | AffineSymbol::Ay => ops.x.sub(&ops.dy.scale(I * (rho * theta))),
        AffineSymbol::Y | AffineSymbol::Ax => ops.y.add(&ops.dx.scale(I * ((1.0 - rho) * theta))),
    }
}

/// Sizes and grids of the Moyal identity suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoyalSuiteConfig {
    pub pairs: usize,
    /// ordering used for the involution and matrix checks
    pub rho: f64,
    pub width: (f64, f64),
    pub half_width: f64,
    pub points: usize,
    pub level: usize,
}

impl Default for MoyalSuiteConfig {
    fn default() -> Self {
        Self { pairs: 5, rho: 0.3, width: (0.6, 0.85), half_width: 8.0, points: 256, level: 10 }
    }
}

pub fn random_gaussian<R: rand::Rng>(rng: &mut R, width: (f64, f64)) -> SmoothFunction2D {
    let center: [f64; 2] = std::array::from_fn(|_| rng.gen_range(-0.4..0.4));
    let momentum: [f64; 2] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
    let w = rng.gen_range(width.0..width.1);
    let amp = C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(-PI..PI));
    SmoothFunction2D::gaussian(center, w, momentum, amp)
}

fn rel_diff(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(a.interior_diff(b, 1.0)? / b.sup().max(f64::MIN_POSITIVE))
}

/// Coordinate commutator, T_rho, involution, product and left-multiplication
/// identities on seeded random Gaussians.
pub fn moyal_suite<R: rand::Rng>(params: &ParameterSet, cfg: &MoyalSuiteConfig, rng: &mut R) -> Result<Report> {
    params.validate()?;
    let th = params.theta_eff()?;
    let mut rep = Report::new("moyal_suite");

    // exact coefficient arithmetic
    let mut cdev = 0.0f64;
    for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let sc = StarConfig::series(th, rho);
        let (x, y) = (StarOperand::Poly(PolynomialFunction2D::x()), StarOperand::Poly(PolynomialFunction2D::y()));
        let (StarOperand::Poly(a), StarOperand::Poly(b)) = (star(&x, &y, &sc)?, star(&y, &x, &sc)?) else {
            unreachable!()
        };
        let d = a.sub(&b).sub(&PolynomialFunction2D::constant(I * th));
        cdev = cdev.max(d.coeffs.values().map(|v| v.norm()).fold(0.0, f64::max));
    }
    rep.check(Check::at_most("coordinate_commutator", cdev, 4.0 * f64::EPSILON * th.abs().max(1.0)));

    let gcfg = StarConfig::grid(th, cfg.rho, cfg.half_width, cfg.points);
    let half = gcfg.with_rho(0.5);
    let f0 = random_gaussian(rng, cfg.width);
    let s0 = sample_on(&f0, &half)?;
    rep.check(Check::at_most("t_half_identity", t_rho_on(&s0, &half, Direction::Forward).interior_diff(&s0, 1.0)?, 0.0));
    let xonly = SmoothFunction2D::new(cfg.half_width, 0.5, |x, _| c((-x * x).exp()));
    let sx = sample_on(&xonly, &gcfg)?;
    rep.check(Check::at_most("t_rho_x_only", t_rho_on(&sx, &gcfg, Direction::Forward).interior_diff(&sx, 1.0)?, 1e-8));

    // dual backend: series is exact for a polynomial factor
    let mut dual = 0.0f64;
    for rho in [0.5, cfg.rho] {
        let sc = StarConfig::series(th, rho);
        let gc = StarConfig::grid(th, rho, cfg.half_width, cfg.points);
        let gp = GaussianPolynomial::gaussian([0.3, -0.2], 1.0, [0.4, 0.0], ONE);
        let left = (StarOperand::Poly(PolynomialFunction2D::x()), StarOperand::PolyGauss(gp.clone()));
        let right = (StarOperand::PolyGauss(gp), StarOperand::Poly(PolynomialFunction2D::y()));
        for (a, b) in [left, right] {
            let exact = star(&a, &b, &sc)?;
            let num = star(&a, &b, &gc)?;
            let ng = num.as_grid().expect("grid backend");
            let eg = GridFunction::sample(ng.grid, |x, y| exact.eval(x, y).unwrap_or(ZERO));
            dual = dual.max(eg.interior_diff(ng, 0.5)?);
        }
    }
    rep.check(Check::at_most("dual_backend", dual, 1e-6));

    // rho-involution fixed points: pulled-back cutoff potentials
    let gp = crate::gauge::gauge_potentials(params)?;
    let cut = crate::gauge::CutoffProfile::new(2.0)?;
    let loc = crate::gauge::localized_potentials(&gp, &cut, &gcfg)?;
    let fix = rel_diff(&involution_rho_on(&loc.ax, &gcfg), &loc.ax)?
        .max(rel_diff(&involution_rho_on(&loc.ay, &gcfg), &loc.ay)?);
    rep.check(Check::at_most("involution_fixed_points", fix, 1e-8));
    let s1 = sample_on(&f0, &gcfg)?;
    rep.check(Check::at_most("involutive", rel_diff(&involution_rho_on(&involution_rho_on(&s1, &gcfg), &gcfg), &s1)?, 1e-8));

    let (mut anti, mut assoc) = (0.0f64, 0.0f64);
    for _ in 0..cfg.pairs {
        let f = sample_on(&random_gaussian(rng, cfg.width), &gcfg)?;
        let g = sample_on(&random_gaussian(rng, cfg.width), &gcfg)?;
        let h = sample_on(&random_gaussian(rng, cfg.width), &gcfg)?;
        let fg = star_grid(&f, &g, &gcfg)?;
        let lhs = involution_rho_on(&fg, &gcfg);
        let rhs = star_grid(&involution_rho_on(&g, &gcfg), &involution_rho_on(&f, &gcfg), &gcfg)?;
        anti = anti.max(rel_diff(&lhs, &rhs)?);
        let a = star_grid(&fg, &h, &gcfg)?;
        let b = star_grid(&f, &star_grid(&g, &h, &gcfg)?, &gcfg)?;
        assoc = assoc.max(rel_diff(&a, &b)?);
    }
    rep.check(Check::at_most("anti_homomorphism", anti, 1e-5)).check(Check::at_most("associativity", assoc, 1e-4));

    // matrices
    let pr = ParameterSet { rho: cfg.rho, ..*params };
    let basis = HermiteBasis::unit(cfg.level);
    let plain = MoyalGrid::plain(&QuadratureGrid::trapezoid(cfg.half_width, 128), th);
    let mut aff = 0.0f64;
    for (sym, idx) in [(AffineSymbol::X, 0usize), (AffineSymbol::Y, 1)] {
        let s = GridFunction::sample(plain, |x, y| c(if idx == 0 { x } else { y }));
        let m = left_mult_from_grid(&s, &gcfg, basis);
        aff = aff.max(m.interior_residual(&affine_left_mult(sym, &pr, basis)?, 2));
    }
    rep.check(Check::at_most("left_mult_vs_affine", aff, 1e-5));

    let bump = crate::gauge::CutoffProfile::new(9.0)?;
    let wide = QuadratureGrid::trapezoid(20.0, 256);
    let one = SmoothFunction2D::new(20.0, 0.5, move |x, y| c(bump.eval(x, y)));
    let lm = left_mult_matrix(&one, &StarConfig { grid: wide, ..gcfg }, basis)?;
    let unit_dev = crate::basis::op_norm(&(lm.entries - OperatorMatrix::identity(basis, false).entries));
    rep.check(Check::at_most("near_unital", unit_dev, 2e-2));

    // [L_f, L_g] = L_{[f, g]} and self-adjointness transfer; the matrix
    // product needs intermediate levels far above the compared block
    let pad = 24;
    let big = HermiteBasis::unit(cfg.level + pad);
    let wcfg = StarConfig::grid(th, cfg.rho, cfg.half_width + 6.0, cfg.points * 3 / 2);
    let f = sample_on(&random_gaussian(rng, cfg.width), &wcfg)?;
    let g = sample_on(&random_gaussian(rng, cfg.width), &wcfg)?;
    let fg = star_grid(&f, &g, &wcfg)?.zip(&star_grid(&g, &f, &wcfg)?, |a, b| a - b)?;
    let (lf, lg) = (left_mult_from_grid(&f, &wcfg, big), left_mult_from_grid(&g, &wcfg, big));
    let lc = left_mult_from_grid(&fg, &wcfg, big);
    let comm = lf.commutator(&lg).interior_residual(&lc, pad) / crate::basis::op_norm(&lc.interior_block(pad));
    rep.check(Check::at_most("commutator_image", comm, 1e-5));
    let real = f.map(|v| c(v.re));
    let sa = t_rho_on(&real, &wcfg, Direction::Inverse);
    rep.put("self_adjoint_profile_dev", rel_diff(&involution_rho_on(&sa, &wcfg), &sa)?);
    rep.check(Check::at_most("hermitian_transfer", left_mult_from_grid(&sa, &wcfg, basis).hermiticity_defect(), 1e-8));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(p: PolynomialFunction2D) -> StarOperand {
        StarOperand::Poly(p)
    }

    #[test]
    fn coordinate_commutator_series() {
        for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let cfg = StarConfig::series(1.0, rho);
            let xy = star(&poly(PolynomialFunction2D::x()), &poly(PolynomialFunction2D::y()), &cfg).unwrap();
            let yx = star(&poly(PolynomialFunction2D::y()), &poly(PolynomialFunction2D::x()), &cfg).unwrap();
            let (StarOperand::Poly(a), StarOperand::Poly(b)) = (xy, yx) else { panic!() };
            assert_eq!(a.coeffs.get(&(0, 0)).copied().unwrap_or(ZERO), C64::new(0.0, 1.0 - rho));
            assert_eq!(a.sub(&b), PolynomialFunction2D::constant(I));
        }
    }

    #[test]
    fn zero_theta_is_pointwise() {
        let cfg = StarConfig::series(0.0, 0.3);
        let p = PolynomialFunction2D::x().mul(&PolynomialFunction2D::y()).add(&PolynomialFunction2D::constant(c(2.0)));
        let q = PolynomialFunction2D::x().mul(&PolynomialFunction2D::x());
        let StarOperand::Poly(r) = star(&poly(p.clone()), &poly(q.clone()), &cfg).unwrap() else { panic!() };
        assert_eq!(r, p.mul(&q));
        let g = SmoothFunction2D::gaussian([0.1, 0.0], 1.0, [0.0; 2], ONE);
        let gcfg = StarConfig::grid(0.0, 0.5, 8.0, 64);
        let s = star(&StarOperand::Smooth(g.clone()), &StarOperand::Smooth(g.clone()), &gcfg).unwrap();
        let sg = s.as_grid().unwrap();
        let want = GridFunction::sample(sg.grid, |x, y| g.eval(x, y) * g.eval(x, y));
        assert!(sg.interior_diff(&want, 1.0).unwrap() < 1e-15);
    }

    #[test]
    fn poly_gauss_derivatives() {
        let g = GaussianPolynomial::gaussian([0.3, -0.2], 0.8, [0.5, 0.1], C64::new(1.0, 0.5));
        let d = g.derivative(1, 2).times_poly(&PolynomialFunction2D::x());
        let (x, y, e) = (0.4, 0.1, 1e-4);
        let f = |x: f64, y: f64| g.derivative(1, 0).eval(x, y);
        let num = (f(x, y + e) - 2.0 * f(x, y) + f(x, y - e)) / (e * e) * x;
        assert!((num - d.eval(x, y)).norm() < 1e-6);
        assert!((g.eval(x, y) - g.to_smooth().eval(x, y)).norm() < 1e-15);
    }

    #[test]
    fn snapped_grid_is_commensurate() {
        let cfg = StarConfig::grid(1.0, 0.5, 8.0, 256);
        let g = MoyalGrid::snapped(&cfg).unwrap();
        assert_eq!(g.shift, 3);
        let shift_cells = cfg.theta_eff * g.dk() / 2.0 / g.h;
        assert!((shift_cells - g.shift as f64).abs() < 1e-12);
        assert!((g.half_width() - 8.0).abs() < 0.5);
    }

    #[test]
    fn dual_backend_linear_factor() {
        for rho in [0.5, 0.2] {
            let gp = GaussianPolynomial::gaussian([0.3, -0.2], 1.0, [0.4, 0.0], ONE);
            let s = StarConfig::series(1.0, rho);
            let gr = StarConfig::grid(1.0, rho, 8.0, 256);
            let a = star(&poly(PolynomialFunction2D::x()), &StarOperand::PolyGauss(gp.clone()), &s).unwrap();
            let b = star(&poly(PolynomialFunction2D::x()), &StarOperand::PolyGauss(gp.clone()), &gr).unwrap();
            let bg = b.as_grid().unwrap();
            let ag = GridFunction::sample(bg.grid, |x, y| a.eval(x, y).unwrap());
            assert!(ag.interior_diff(bg, 0.5).unwrap() < 1e-6);
            let a = star(&StarOperand::PolyGauss(gp.clone()), &poly(PolynomialFunction2D::y()), &s).unwrap();
            let b = star(&StarOperand::PolyGauss(gp), &poly(PolynomialFunction2D::y()), &gr).unwrap();
            let bg = b.as_grid().unwrap();
            let ag = GridFunction::sample(bg.grid, |x, y| a.eval(x, y).unwrap());
            assert!(ag.interior_diff(bg, 0.5).unwrap() < 1e-6);
        }
    }

    #[test]
    fn t_rho_examples() {
        let cfg = StarConfig::grid(1.0, 0.5, 9.0, 128);
        let g = SmoothFunction2D::gaussian([0.2, 0.1], 1.0, [0.3, -0.2], ONE);
        let t = t_rho(&g, &cfg, Direction::Forward).unwrap();
        assert_eq!(t, sample_on(&g, &cfg).unwrap());
        let cfg = cfg.with_rho(0.8);
        let gx = SmoothFunction2D::new(8.0, 0.5, |x, _| C64::new((-x * x).exp(), 0.0));
        let s = sample_on(&gx, &cfg).unwrap();
        assert!(t_rho_on(&s, &cfg, Direction::Forward).interior_diff(&s, 1.0).unwrap() < 1e-8);
        let s = sample_on(&g, &cfg).unwrap();
        let back = t_rho_on(&t_rho_on(&s, &cfg, Direction::Forward), &cfg, Direction::Inverse);
        assert!(back.interior_diff(&s, 1.0).unwrap() < 1e-8);
        let fwd = t_rho_on(&s, &cfg, Direction::Forward);
        assert!((fwd.l2_norm() - s.l2_norm()).abs() < 1e-10);
        let inv = involution_rho_on(&involution_rho_on(&s, &cfg), &cfg);
        assert!(inv.interior_diff(&s, 1.0).unwrap() < 1e-8);
    }

    #[test]
    fn affine_commutator_and_block_entry() {
        let p = ParameterSet::canonical();
        let basis = HermiteBasis::unit(8);
        let lx = affine_left_mult(AffineSymbol::X, &p, basis).unwrap();
        let ly = affine_left_mult(AffineSymbol::Y, &p, basis).unwrap();
        let comm = lx.commutator(&ly);
        let target = OperatorMatrix::identity(basis, false).scale(I * p.theta_eff().unwrap());
        assert!(comm.interior_residual(&target, 1) < 1e-10);
        // <h_{0,1}, L_x h_{0,0}> = (i/2) <h_1, d h_0> = (i/2)(-1/sqrt2)
        let (r, c0) = (basis.trunc.index_of(0, 1).unwrap(), basis.trunc.index_of(0, 0).unwrap());
        let want = I * 0.5 * (-std::f64::consts::FRAC_1_SQRT_2);
        assert!((lx.entries[(r, c0)] - want).norm() < 1e-15);
        let lax = affine_left_mult(AffineSymbol::Ax, &p, basis.enlarged(0)).unwrap();
        assert!(lax.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn grid_left_mult_matches_affine() {
        let p = ParameterSet::canonical().with_gauge(0.25, 1.0, 0.2);
        let cfg = StarConfig::grid(1.0, 0.25, 8.0, 128);
        let basis = HermiteBasis::unit(10);
        let g = MoyalGrid::plain(&cfg.grid, 1.0);
        for (sym, f) in [(AffineSymbol::X, 0usize), (AffineSymbol::Y, 1)] {
            let s = GridFunction::sample(g, |x, y| c(if f == 0 { x } else { y }));
            let m = left_mult_from_grid(&s, &cfg, basis);
            let a = affine_left_mult(sym, &p, basis).unwrap();
            assert!(m.interior_residual(&a, 2) < 1e-5);
        }
    }

    #[test]
    fn left_mult_definition_cross_check() {
        let cfg = StarConfig::grid(1.0, 0.3, 8.0, 128);
        let basis = HermiteBasis::unit(3);
        let f = SmoothFunction2D::gaussian([0.2, -0.1], 0.9, [0.0, 0.3], ONE);
        let a = left_mult_matrix(&f, &cfg, basis).unwrap();
        let b = left_mult_by_products(&f, &cfg, basis).unwrap();
        assert!((a.entries - b.entries).norm() < 1e-6);
    }

    #[test]
    fn weyl_grid_associative_and_trace() {
        let cfg = StarConfig::grid(1.0, 0.5, 7.0, 128);
        let mk = |c0: [f64; 2], w: f64| sample_on(&SmoothFunction2D::gaussian(c0, w, [0.2, 0.0], ONE), &cfg).unwrap();
        let (f1, f2, f3) = (mk([0.5, 0.0], 0.8), mk([-0.3, 0.4], 0.85), mk([0.0, 0.2], 0.9));
        let a = star_grid(&star_grid(&f1, &f2, &cfg).unwrap(), &f3, &cfg).unwrap();
        let b = star_grid(&f1, &star_grid(&f2, &f3, &cfg).unwrap(), &cfg).unwrap();
        assert!(a.interior_diff(&b, 1.0).unwrap() < 1e-10 * b.sup());
        let fg = star_grid(&f1, &f2, &cfg).unwrap();
        let s1: C64 = fg.values.iter().sum();
        let s2: C64 = f1.values.iter().zip(&f2.values).map(|(a, b)| a * b).sum();
        assert!((s1 - s2).norm() < 1e-10);
    }

    #[test]
    fn suite_passes() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let rep = moyal_suite(&ParameterSet::canonical(), &MoyalSuiteConfig::default(), &mut rng).unwrap();
        for ck in &rep.checks {
            println!("{} {:e} {}", ck.name, ck.measured, ck.passed);
        }
        assert!(rep.passed());
    }

    #[test]
    fn backend_mismatch() {
        let cfg = StarConfig::series(1.0, 0.5);
        let g = StarOperand::Smooth(SmoothFunction2D::gaussian([0.0; 2], 1.0, [0.0; 2], ONE));
        assert!(matches!(star(&g, &g, &cfg), Err(Error::Backend(_))));
        let big = PolynomialFunction2D::monomial(9, 0, ONE);
        assert!(matches!(star(&poly(big.clone()), &poly(big), &cfg), Err(Error::Backend(_))));
    }
}

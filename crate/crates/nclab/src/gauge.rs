//! Affine gauge potentials, the smooth cutoff, localized perturbations
//! B_R = -e (L_{A^R_x} (x) s1 + L_{A^R_y} (x) s2), D_R = D' + B_R, the
//! minimally coupled D_inf and the resolvent convergence experiment.
//!
//! D' (the base operator on the Moyal side) is (Pi'_x (x) s1 + Pi'_y (x) s2)/sqrt2
//! with Pi'_x = -i d_x + beta R_y, Pi'_y = -i d_y + delta R_x, where R_x, R_y
//! are the right Moyal multipliers, so D' commutes with every L_f up to
//! derivative terms. beta - delta + beta delta theta_eff = 1 keeps [Pi'_x, Pi'_y] = i.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{c, frame_annihilators, HermiteBasis, OperatorMatrix, Pauli, SmoothFunction2D, C64, I, ONE, ZERO};
use crate::error::{invalid, Error, Result};
use crate::kinematics::{dirac_from, grading, AffinePair};
use crate::linalg::{shifted_inverse, shifted_solve, unit_vector};
use crate::moyal::{
    affine_left_mult, left_mult_from_grid, star_grid, t_rho_on, AffineSymbol, Direction, GaussianPolynomial,
    GridFunction, MoyalGrid, PolynomialFunction2D, StarConfig, StarOperand,
};
use crate::params::ParameterSet;
use crate::report::{Check, Report};

/// A_x = alpha_x y, A_y = alpha_y x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GaugePotential {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub params: ParameterSet,
}

impl GaugePotential {
    pub fn a_x(&self) -> PolynomialFunction2D {
        PolynomialFunction2D::monomial(0, 1, c(self.alpha_x))
    }

    pub fn a_y(&self) -> PolynomialFunction2D {
        PolynomialFunction2D::monomial(1, 0, c(self.alpha_y))
    }

    pub fn is_zero(&self) -> bool {
        self.params.e == 0.0 || (self.alpha_x == 0.0 && self.alpha_y == 0.0)
    }
}

pub fn gauge_potentials(params: &ParameterSet) -> Result<GaugePotential> {
    let disc = params.gauge_discriminant()?;
    if disc < 0.0 {
        return invalid("gauge discriminant >= 0");
    }
    let (h, rho, b) = (params.hbar0, params.rho, params.b_ext);
    let den = h + disc.sqrt();
    if den == 0.0 {
        return invalid("hbar0 + sqrt(discriminant) != 0");
    }
    Ok(GaugePotential {
        alpha_x: -2.0 * (1.0 - rho) * h * b / den,
        alpha_y: 2.0 * rho * h * b / den,
        params: *params,
    })
}

/// u_R(z) = u(|z|/R), u(t) = g(2 - t)/(g(2 - t) + g(t - 1)), g(t) = e^{-1/t} (t > 0).
/// An infinite radius gives u_R = 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub radius: f64,
}

fn bump_g(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

impl CutoffProfile {
    pub const PROFILE: &'static str = "g(2-t)/(g(2-t)+g(t-1)), g(t)=exp(-1/t)";

    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return invalid("cutoff radius > 0");
        }
        Ok(Self { radius })
    }

    pub fn step(t: f64) -> f64 {
        let (a, b) = (bump_g(2.0 - t), bump_g(t - 1.0));
        a / (a + b)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        if self.radius.is_infinite() {
            return 1.0;
        }
        Self::step(x.hypot(y) / self.radius)
    }
}

/// Grid used for everything in this module: the snapped star grid of `cfg`.
pub fn gauge_grid(cfg: &StarConfig) -> Result<MoyalGrid> {
    MoyalGrid::snapped(cfg)
}

/// T_rho^{-1}(u_R A_x), T_rho^{-1}(u_R A_y) on the grid.
#[derive(Clone, Debug)]
pub struct LocalizedPotentials {
    pub ax: GridFunction,
    pub ay: GridFunction,
}

/// The box may cut the support of u_R A (that part is outside every basis
/// function's reach and shows up only in the R = infinity floor); the cutoff
/// transition must be resolved.
pub fn localized_potentials(gp: &GaugePotential, cutoff: &CutoffProfile, cfg: &StarConfig) -> Result<LocalizedPotentials> {
    let grid = gauge_grid(cfg)?;
    if cutoff.radius.is_finite() && grid.h > cutoff.radius / 8.0 {
        return Err(Error::Resolution(format!(
            "grid spacing {} does not resolve the cutoff transition of radius {}",
            grid.h, cutoff.radius
        )));
    }
    let (ax, ay) = (gp.alpha_x, gp.alpha_y);
    let cut = *cutoff;
    let sx = GridFunction::sample(grid, move |x, y| c(cut.eval(x, y) * ax * y));
    let sy = GridFunction::sample(grid, move |x, y| c(cut.eval(x, y) * ay * x));
    Ok(LocalizedPotentials { ax: t_rho_on(&sx, cfg, Direction::Inverse), ay: t_rho_on(&sy, cfg, Direction::Inverse) })
}

/// Basis functions up to level L are below ~1e-12 beyond lambda (sqrt(2L+1) + 3.5).
pub fn basis_reach(basis: HermiteBasis) -> f64 {
    let f = basis.frame;
    f.lambda_x.max(f.lambda_y) * (((2 * basis.level() + 1) as f64).sqrt() + 3.5)
}

fn check_basis_fits(basis: HermiteBasis, grid: &MoyalGrid) -> Result<()> {
    let reach = basis_reach(basis);
    if reach > grid.half_width() + 1e-9 {
        return Err(Error::Resolution(format!(
            "basis functions up to level {} reach {reach:.2}, grid half-width {:.2}",
            basis.level(),
            grid.half_width()
        )));
    }
    Ok(())
}

/// -e (L_{A^R_x} (x) s1 + L_{A^R_y} (x) s2)
pub fn perturbation_matrix(
    gp: &GaugePotential,
    cutoff: &CutoffProfile,
    cfg: &StarConfig,
    basis: HermiteBasis,
) -> Result<OperatorMatrix> {
    if gp.is_zero() {
        return Ok(OperatorMatrix::zeros(basis, true));
    }
    let grid = gauge_grid(cfg)?;
    check_basis_fits(basis, &grid)?;
    let loc = localized_potentials(gp, cutoff, cfg)?;
    let lx = left_mult_from_grid(&loc.ax, cfg, basis);
    let ly = left_mult_from_grid(&loc.ay, cfg, basis);
    Ok(lx.kron_pauli(Pauli::X).add(&ly.kron_pauli(Pauli::Y)).scale(c(-gp.params.e)))
}

/// (beta, delta) of D' on the curve beta - delta + beta delta theta = 1.
/// The right-multiplier parts of Pi'_x, Pi'_y are beta - 1/theta and
/// delta + 1/theta, whose product is (theta - 1)/theta^2; delta + 1/theta is
/// kept >= 1/(2 theta) so D' never acts on the left factor alone (that would
/// make every L_a (D' - i)^{-1} non-compact at theta = 1).
pub fn base_slopes(theta: f64) -> (f64, f64) {
    if theta.abs() < 1e-12 {
        return (0.5, -0.5);
    }
    let delta = if theta <= 0.75 { -(1.0 - (1.0 - theta).sqrt()) / theta } else { -0.5 / theta };
    ((1.0 + delta) / (1.0 + delta * theta), delta)
}

/// Pi'_x = beta y + (1 - beta(1 - rho) theta)(-i d_x), Pi'_y = delta x + (1 + delta rho theta)(-i d_y).
pub fn base_pair(params: &ParameterSet) -> Result<AffinePair> {
    params.validate()?;
    let th = params.theta_eff()?;
    let rho = params.rho;
    let (beta, delta) = base_slopes(th);
    Ok(AffinePair { a: beta, b: 1.0 - beta * (1.0 - rho) * th, c: delta, e: 1.0 + delta * rho * th })
}

/// Hermite frame adapted to D' (exact Landau structure under truncation).
pub fn base_basis(params: &ParameterSet, level: usize) -> Result<HermiteBasis> {
    Ok(HermiteBasis::with_frame(level, base_pair(params)?.frame()?))
}

pub fn base_dirac(params: &ParameterSet, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let (px, py) = base_pair(params)?.matrices(basis);
    Ok(dirac_from(&px, &py))
}

/// D_inf = D' - e (L_{A_x} (x) s1 + L_{A_y} (x) s2), exact.
pub fn minimal_coupled(params: &ParameterSet, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let d = base_dirac(params, basis)?;
    let gp = gauge_potentials(params)?;
    if gp.is_zero() {
        return Ok(d);
    }
    let lax = affine_left_mult(AffineSymbol::Ax, params, basis)?;
    let lay = affine_left_mult(AffineSymbol::Ay, params, basis)?;
    Ok(d.sub(&lax.kron_pauli(Pauli::X).add(&lay.kron_pauli(Pauli::Y)).scale(c(params.e))))
}

#[derive(Clone, Debug)]
pub struct PerturbedOperators {
    pub d_base: OperatorMatrix,
    pub b_r: OperatorMatrix,
    pub d_r: OperatorMatrix,
    pub d_inf: OperatorMatrix,
    pub cfg: StarConfig,
    pub cutoff: CutoffProfile,
}

impl PerturbedOperators {
    pub fn build(params: &ParameterSet, cutoff: CutoffProfile, cfg: &StarConfig, basis: HermiteBasis) -> Result<Self> {
        let gp = gauge_potentials(params)?;
        let d_base = base_dirac(params, basis)?;
        let b_r = perturbation_matrix(&gp, &cutoff, cfg, basis)?;
        Ok(Self {
            d_r: d_base.add(&b_r),
            d_inf: minimal_coupled(params, basis)?,
            d_base,
            b_r,
            cfg: *cfg,
            cutoff,
        })
    }

    pub fn hermiticity(&self) -> [f64; 4] {
        [
            self.d_base.hermiticity_defect(),
            self.b_r.hermiticity_defect(),
            self.d_r.hermiticity_defect(),
            self.d_inf.hermiticity_defect(),
        ]
    }
}

/// 2x2 matrix m (x) op, spinor layout as in `kron_pauli`.
pub fn kron2(op: &OperatorMatrix, m: &Matrix2<C64>) -> OperatorMatrix {
    let n = op.dim();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for bi in 0..2 {
        for bj in 0..2 {
            if m[(bi, bj)] != ZERO {
                out.view_mut((bi * n, bj * n), (n, n)).copy_from(&(&op.entries * m[(bi, bj)]));
            }
        }
    }
    OperatorMatrix::spinor(out, op.basis)
}

fn pauli2(p: Pauli) -> Matrix2<C64> {
    let s = p.matrix();
    Matrix2::new(s[0][0], s[0][1], s[1][0], s[1][1])
}

/// D_inf = M1 c1 + M2 c1^+ + M3 c2 + M4 c2^+ with c the annihilators of the
/// basis frame.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderDecomposition {
    pub m: [Matrix2<C64>; 4],
    pub op_norms: [f64; 4],
    pub k: f64,
    pub frame: crate::basis::Frame,
}

fn op_norm2(m: &Matrix2<C64>) -> f64 {
    m.singular_values().max()
}

pub fn ladder_decomposition(params: &ParameterSet, frame: crate::basis::Frame) -> Result<LadderDecomposition> {
    let pair = base_pair(params)?;
    let gp = gauge_potentials(params)?;
    let th = params.theta_eff()?;
    let (rho, e) = (params.rho, params.e);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (sx, sy) = (pauli2(Pauli::X), pauli2(Pauli::Y));
    // coefficients of x, y, d_x, d_y
    let w = [
        sy * c(pair.c * s - e * gp.alpha_y),
        sx * c(pair.a * s - e * gp.alpha_x),
        sx * (-I * pair.b * s + I * e * gp.alpha_x * rho * th),
        sy * (-I * pair.e * s - I * e * gp.alpha_y * (1.0 - rho) * th),
    ];
    let (lx, ly, k) = (frame.lambda_x, frame.lambda_y, frame.kappa);
    // columns: c1, c1^+, c2, c2^+ in the (x, y, d_x, d_y) coordinates
    let cols = nalgebra::Matrix4::<C64>::from_columns(&[
        nalgebra::Vector4::new(c(1.0 / lx), -I * lx * k, c(lx), ZERO) * c(s),
        nalgebra::Vector4::new(c(1.0 / lx), I * lx * k, c(-lx), ZERO) * c(s),
        nalgebra::Vector4::new(-I * ly * k, c(1.0 / ly), ZERO, c(ly)) * c(s),
        nalgebra::Vector4::new(I * ly * k, c(1.0 / ly), ZERO, c(-ly)) * c(s),
    ]);
    let inv = cols.try_inverse().ok_or(Error::Solver)?;
    let mut m = [Matrix2::zeros(); 4];
    for (i, mi) in m.iter_mut().enumerate() {
        for (j, wj) in w.iter().enumerate() {
            *mi += wj * inv[(i, j)];
        }
    }
    let op_norms = [op_norm2(&m[0]), op_norm2(&m[1]), op_norm2(&m[2]), op_norm2(&m[3])];
    Ok(LadderDecomposition { m, op_norms, k: op_norms.iter().sum(), frame })
}

impl LadderDecomposition {
    pub fn reconstruct(&self, basis: HermiteBasis) -> OperatorMatrix {
        let (c1, c2) = frame_annihilators(basis);
        let ops = [c1.clone(), c1.adjoint(), c2.clone(), c2.adjoint()];
        let mut out = OperatorMatrix::zeros(basis, true);
        for (op, m) in ops.iter().zip(&self.m) {
            out = out.add(&kron2(op, m));
        }
        out
    }
}

/// (D - z)^{-1} v with the residual ||(D - z) w - v|| / ||v||.
pub fn resolvent_apply(d: &OperatorMatrix, z: C64, v: &DVector<C64>) -> Result<(DVector<C64>, f64)> {
    if z.im == 0.0 {
        return invalid("Im z != 0");
    }
    let w = shifted_solve(&d.entries, z, v)?;
    let r = (&d.entries * &w - &w * z - v).norm() / v.norm().max(f64::MIN_POSITIVE);
    Ok((w, r))
}

/// Low-level probe vectors: unit vectors on (m, n) with m + n <= max_level in both spin components.
pub fn low_level_probes(basis: HermiteBasis, max_level: usize) -> Vec<DVector<C64>> {
    let n = basis.scalar_dim();
    let inner: Vec<usize> = (0..n).filter(|&i| basis.trunc.degree_of(i) <= max_level).collect();
    inner.iter().chain(inner.iter()).enumerate().map(|(k, &i)| unit_vector(2 * n, if k < inner.len() { i } else { i + n })).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub radii: Vec<f64>,
    pub level: usize,
    pub star: StarConfig,
    pub probe_max_level: usize,
    /// resolvent point z = z[0] + i z[1]
    pub z: [f64; 2],
    /// err(R_last) must fall below this
    pub final_tolerance: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            radii: vec![2.0, 4.0, 6.0, 8.0],
            level: 20,
            star: StarConfig::grid(1.0, 0.5, 10.0, 256),
            probe_max_level: 2,
            z: [0.0, 1.0],
            final_tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub radius: f64,
    pub err_resolvent: f64,
    pub err_direct: f64,
}

/// (D - z)^{-1} applied to the columns of `vs` with one factorization.
pub fn resolvent_apply_many(d: &OperatorMatrix, z: C64, vs: &DMatrix<C64>) -> Result<(DMatrix<C64>, f64)> {
    if z.im == 0.0 {
        return invalid("Im z != 0");
    }
    let n = d.dim();
    let shifted = &d.entries - DMatrix::from_diagonal_element(n, n, z);
    let w = shifted.clone().lu().solve(vs).ok_or(Error::Solver)?;
    let r = (0..vs.ncols())
        .map(|j| (&shifted * w.column(j) - vs.column(j)).norm() / vs.column(j).norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok((w, r))
}

fn sweep_errors(d_r: &OperatorMatrix, d_inf: &OperatorMatrix, z: C64, probes: &[DVector<C64>]) -> Result<(f64, f64, f64)> {
    let vs = DMatrix::from_columns(probes);
    let (a, r1) = resolvent_apply_many(d_r, z, &vs)?;
    let (b, r2) = resolvent_apply_many(d_inf, z, &vs)?;
    let diff = a - b;
    let direct = (&d_r.entries - &d_inf.entries) * &vs;
    let er = diff.column_iter().map(|c0| c0.norm()).fold(0.0, f64::max);
    let ed = direct.column_iter().map(|c0| c0.norm()).fold(0.0, f64::max);
    Ok((er, ed, r1.max(r2)))
}

/// Saturation-aware monotonicity: each step may not increase unless both
/// values sit within 2x of the floor.
pub fn monotone_until_saturation(errs: &[f64], floor: f64) -> bool {
    errs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-15 || w[1] <= 2.0 * floor)
}

pub fn convergence_sweep(params: &ParameterSet, cfg: &ConvergenceConfig) -> Result<(Report, Vec<SweepRow>)> {
    if cfg.radii.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("radii strictly increasing");
    }
    if cfg.probe_max_level * 2 > cfg.level {
        return invalid("probes supported in m + n <= L/2");
    }
    let star = StarConfig { theta_eff: params.theta_eff()?, rho: params.rho, ..cfg.star };
    let basis = base_basis(params, cfg.level)?;
    let z = C64::new(cfg.z[0], cfg.z[1]);
    let probes = low_level_probes(basis, cfg.probe_max_level);
    let gp = gauge_potentials(params)?;
    let d_base = base_dirac(params, basis)?;
    let d_inf = minimal_coupled(params, basis)?;
    let mut rows = Vec::new();
    let mut herm = 0.0f64;
    let mut solve_res = 0.0f64;
    for &r in &cfg.radii {
        let b = perturbation_matrix(&gp, &CutoffProfile::new(r)?, &star, basis)?;
        herm = herm.max(b.hermiticity_defect());
        let d_r = d_base.add(&b);
        let (er, ed, res) = sweep_errors(&d_r, &d_inf, z, &probes)?;
        solve_res = solve_res.max(res);
        rows.push(SweepRow { radius: r, err_resolvent: er, err_direct: ed });
    }
    // R = infinity: u_R = 1 on the whole box, measures the quadrature floor
    let b_inf = perturbation_matrix(&gp, &CutoffProfile { radius: f64::INFINITY }, &star, basis)?;
    let (floor, floor_direct, _) = sweep_errors(&d_base.add(&b_inf), &d_inf, z, &probes)?;
    // e = 0 control
    let p0 = ParameterSet { e: 0.0, ..*params };
    let d0_inf = minimal_coupled(&p0, basis)?;
    let b0 = perturbation_matrix(&gauge_potentials(&p0)?, &CutoffProfile::new(cfg.radii[0])?, &star, basis)?;
    let (control, _, _) = sweep_errors(&d_base.add(&b0), &d0_inf, z, &probes)?;
    let sat = floor.max(control);
    let errs: Vec<f64> = rows.iter().map(|r| r.err_resolvent).collect();
    let last = *errs.last().unwrap_or(&f64::NAN);

    let mut rep = Report::new("convergence_sweep");
    rep.put("level", cfg.level)
        .put("probes", probes.len())
        .put("radii", &cfg.radii)
        .put("err_resolvent", &errs)
        .put("err_direct", rows.iter().map(|r| r.err_direct).collect::<Vec<_>>())
        .put("floor_r_infinity", floor)
        .put("floor_r_infinity_direct", floor_direct)
        .put("control_e0", control)
        .put("grid_half_width", gauge_grid(&star)?.half_width())
        .put("base_operator", "Pi'_x = -i d_x + beta R_y, Pi'_y = -i d_y + delta R_x (right Moyal multipliers)")
        .put("cutoff_profile", CutoffProfile::PROFILE);
    rep.check(Check::holds("monotone_until_saturation", monotone_until_saturation(&errs, sat)))
        .check(Check::at_most("final_err_resolvent", last, cfg.final_tolerance))
        .check(Check::at_most("control_e0", control, 1e-12))
        .check(Check::at_most("solver_residual", solve_res, 1e-10))
        .check(Check::at_most("b_r_hermiticity", herm, 1e-8));
    Ok((rep, rows))
}

/// Factorization D_R - i = S (D' - i) with S = I + B_R (D' - i)^{-1}, and the
/// second-resolvent form (D_R - i)^{-1} = (D' - i)^{-1} S^{-1}, S^{-1} = I - B_R (D_R - i)^{-1}.
pub fn resolvent_identities(ops: &PerturbedOperators, z: C64) -> Result<(f64, f64)> {
    let n = ops.d_base.dim();
    let id = DMatrix::<C64>::identity(n, n);
    let zi = DMatrix::from_diagonal_element(n, n, z);
    let r_base = shifted_inverse(&ops.d_base.entries, z)?;
    let r_pert = shifted_inverse(&ops.d_r.entries, z)?;
    let s = &id + &ops.b_r.entries * &r_base;
    let fact = (&ops.d_r.entries - &zi - &s * (&ops.d_base.entries - &zi)).norm();
    let s_inv = &id - &ops.b_r.entries * &r_pert;
    let second = (&r_pert - &r_base * &s_inv).norm();
    Ok((fact, second))
}

/// Interior residual of [D', L_a (x) 1] against -(i/sqrt2)(L_{d_x a} (x) s1 + L_{d_y a} (x) s2)
/// and the operator norm of the interior commutator block.
fn commutator_at(
    params: &ParameterSet,
    a: &GaussianPolynomial,
    cfg: &StarConfig,
    level: usize,
    extra: Option<(&GaugePotential, CutoffProfile)>,
) -> Result<(f64, f64, Option<f64>)> {
    let basis = base_basis(params, level + 1)?;
    let d = base_dirac(params, basis)?;
    let la = crate::moyal::left_mult_matrix(&a.to_smooth(), cfg, basis)?;
    let ldx = crate::moyal::left_mult_matrix(&a.derivative(1, 0).to_smooth(), cfg, basis)?;
    let ldy = crate::moyal::left_mult_matrix(&a.derivative(0, 1).to_smooth(), cfg, basis)?;
    let la2 = la.kron_pauli(Pauli::Id);
    let comm = d.commutator(&la2);
    let target = ldx.kron_pauli(Pauli::X).add(&ldy.kron_pauli(Pauli::Y)).scale(-I * std::f64::consts::FRAC_1_SQRT_2);
    let resid = comm.interior_residual(&target, 1);
    let norm = crate::basis::op_norm(&comm.interior_block(1));
    let pert = match extra {
        Some((gp, cut)) => {
            let b = perturbation_matrix(gp, &cut, cfg, basis)?;
            let cr = d.add(&b).commutator(&la2);
            Some(crate::basis::op_norm(&cr.interior_block(1)))
        }
        None => None,
    };
    Ok((resid, norm, pert))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommutatorConfig {
    pub levels: Vec<usize>,
    pub star: StarConfig,
    pub gaussian_center: [f64; 2],
    pub gaussian_width: f64,
    /// also report ||[D_R, L_a]|| at this radius
    pub perturbed_radius: Option<f64>,
    pub residual_tolerance: f64,
    pub plateau_tolerance: f64,
}

impl Default for CommutatorConfig {
    fn default() -> Self {
        Self {
            levels: vec![10, 14, 18],
            star: StarConfig::grid(1.0, 0.5, 10.0, 256),
            gaussian_center: [0.3, -0.2],
            gaussian_width: 1.0,
            perturbed_radius: Some(4.0),
            residual_tolerance: 1e-4,
            plateau_tolerance: 0.05,
        }
    }
}

fn spread(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::MIN, f64::max);
    let mn = v.iter().cloned().fold(f64::MAX, f64::min);
    (mx - mn) / mx.abs().max(f64::MIN_POSITIVE)
}

pub fn commutator_probe(params: &ParameterSet, cfg: &CommutatorConfig) -> Result<Report> {
    let star = StarConfig { theta_eff: params.theta_eff()?, rho: params.rho, ..cfg.star };
    let gp = gauge_potentials(params)?;
    let a = GaussianPolynomial::gaussian(cfg.gaussian_center, cfg.gaussian_width, [0.0; 2], ONE);
    let mut rep = Report::new("commutator_probe");
    let (mut res, mut norms, mut pnorms) = (Vec::new(), Vec::new(), Vec::new());
    for &l in &cfg.levels {
        let extra = cfg.perturbed_radius.map(|r| CutoffProfile::new(r).map(|c0| (&gp, c0))).transpose()?;
        let (r, n, p) = commutator_at(params, &a, &star, l, extra)?;
        res.push(r);
        norms.push(n);
        if let Some(p) = p {
            pnorms.push(p);
        }
    }
    rep.put("levels", &cfg.levels).put("interior_residual", &res).put("commutator_norm", &norms);
    rep.check(Check::at_most("gaussian_residual", res.iter().cloned().fold(0.0, f64::max), cfg.residual_tolerance))
        .check(Check::at_most("norm_plateau", spread(&norms), cfg.plateau_tolerance));
    if !pnorms.is_empty() {
        rep.put("perturbed_commutator_norm", &pnorms)
            .check(Check::at_most("perturbed_norm_plateau", spread(&pnorms), cfg.plateau_tolerance));
    }
    // exact affine path: [D', L_x] = -(i/sqrt2) 1 (x) s1, [D', L_y] = -(i/sqrt2) 1 (x) s2
    let l = *cfg.levels.first().unwrap_or(&10);
    let basis = base_basis(params, l)?;
    let d = base_dirac(params, basis)?;
    let id = OperatorMatrix::identity(basis, false);
    for (sym, p, name) in [(AffineSymbol::X, Pauli::X, "coord_x"), (AffineSymbol::Y, Pauli::Y, "coord_y")] {
        let lm = affine_left_mult(sym, params, basis)?.kron_pauli(Pauli::Id);
        let target = id.kron_pauli(p).scale(-I * std::f64::consts::FRAC_1_SQRT_2);
        rep.check(Check::at_most(name, d.commutator(&lm).interior_residual(&target, 1), 1e-10));
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    Base,
    Perturbed,
    MinimalCoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompactnessConfig {
    pub levels: Vec<usize>,
    pub star: StarConfig,
    pub gaussian_width: f64,
    pub wide_width: f64,
    pub radius: f64,
    /// number of singular values reported
    pub keep: usize,
    pub decay_index: usize,
    /// leading singular values compared between levels
    pub stability_index: usize,
    /// singular values above count_fraction * sigma_1 are counted per level
    pub count_fraction: f64,
    /// allowed growth of that count between the two largest levels
    pub count_slack: usize,
    pub stability_tolerance: f64,
    pub coupling_tolerance: f64,
}

impl Default for CompactnessConfig {
    fn default() -> Self {
        Self {
            levels: vec![16, 20, 24],
            star: StarConfig::grid(1.0, 0.5, 12.0, 256),
            gaussian_width: 1.0,
            wide_width: 1.4,
            radius: 4.0,
            keep: 30,
            decay_index: 20,
            stability_index: 10,
            count_fraction: 0.5,
            count_slack: 0,
            stability_tolerance: 0.1,
            coupling_tolerance: 0.1,
        }
    }
}

/// Singular values (descending) of (L_a (x) 1)(D - i)^{-1}.
pub fn compactness_profile(
    params: &ParameterSet,
    a: &SmoothFunction2D,
    star: &StarConfig,
    level: usize,
    choice: OperatorChoice,
    radius: f64,
) -> Result<Vec<f64>> {
    let basis = base_basis(params, level)?;
    let d = match choice {
        OperatorChoice::Base => base_dirac(params, basis)?,
        OperatorChoice::MinimalCoupled => minimal_coupled(params, basis)?,
        OperatorChoice::Perturbed => {
            PerturbedOperators::build(params, CutoffProfile::new(radius)?, star, basis)?.d_r
        }
    };
    let la = crate::moyal::left_mult_matrix(a, star, basis)?.kron_pauli(Pauli::Id);
    let res = shifted_inverse(&d.entries, I)?;
    let m = &la.entries * res;
    let mut sv: Vec<f64> = m.singular_values().iter().cloned().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Ok(sv)
}

fn count_above(sv: &[f64], t: f64) -> usize {
    sv.iter().filter(|&&s| s > t).count()
}

fn max_rel_diff(a: &[f64], b: &[f64], k: usize) -> f64 {
    a.iter().zip(b).take(k).map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max)
}

pub fn local_compactness_probe(params: &ParameterSet, cfg: &CompactnessConfig) -> Result<Report> {
    let star = StarConfig { theta_eff: params.theta_eff()?, rho: params.rho, ..cfg.star };
    let g = SmoothFunction2D::gaussian([0.0; 2], cfg.gaussian_width, [0.0; 2], ONE);
    let wide = SmoothFunction2D::gaussian([0.0; 2], cfg.wide_width, [0.0; 2], ONE);
    let k = cfg.decay_index;
    let keep = cfg.keep.max(k + 1);
    let mut rep = Report::new("local_compactness_probe");
    // [x_g, y_g] for the guiding centre of D' in units where [Pi'_x, Pi'_y] = i;
    // it vanishes at theta_eff = 1 and then no L_a (D' - i)^{-1} is compact
    rep.put("guiding_center_commutator", star.theta_eff - 1.0);
    let mut rows = Vec::new();
    for (name, f) in [("gaussian", &g), ("wide", &wide)] {
        let mut prev: Option<Vec<f64>> = None;
        let mut stab = 0.0f64;
        let mut last = Vec::new();
        let mut counts = Vec::new();
        for &l in &cfg.levels {
            let sv = compactness_profile(params, f, &star, l, OperatorChoice::Base, cfg.radius)?;
            if let Some(p) = &prev {
                stab = stab.max(max_rel_diff(&sv, p, cfg.stability_index));
            }
            counts.push(count_above(&sv, cfg.count_fraction * sv[0]));
            rows.push((name, l, sv.iter().take(keep).cloned().collect::<Vec<_>>()));
            prev = Some(sv.clone());
            last = sv;
        }
        rep.put(format!("{name}.stability"), stab)
            .check(Check::at_most(format!("{name}.stable_across_levels"), stab, cfg.stability_tolerance));
        let ratio = last.get(k).copied().unwrap_or(0.0) / last[0];
        rep.put(format!("{name}.sigma_ratio"), ratio);
        if name == "gaussian" {
            // a compact operator has finitely many singular values above any
            // threshold, so the count must stop growing with the truncation
            let n = counts.len();
            let growth = if n >= 2 { counts[n - 1].saturating_sub(counts[n - 2]) } else { 0 };
            rep.put("gaussian.counts", counts)
                .put("gaussian.decreasing", last.windows(2).all(|w| w[1] <= w[0]))
                .check(Check::at_most("gaussian.count_saturation", growth as f64, cfg.count_slack as f64));
        }
    }
    let top = *cfg.levels.last().unwrap_or(&24);
    let base = compactness_profile(params, &g, &star, top, OperatorChoice::Base, cfg.radius)?;
    let pert = compactness_profile(params, &g, &star, top, OperatorChoice::Perturbed, cfg.radius)?;
    let cdiff = max_rel_diff(&pert, &base, cfg.stability_index);
    rep.put("profiles", rows.iter().map(|(n, l, s)| serde_json::json!({"function": n, "level": l, "sigma": s})).collect::<Vec<_>>())
        .put("perturbed_sigma", pert.iter().take(keep).cloned().collect::<Vec<_>>())
        .check(Check::at_most("coupling_profile_change", cdiff, cfg.coupling_tolerance));
    Ok(rep)
}

/// ||((u_R - 1) p) *_{1/2} phi||_2 for each radius.
pub fn cutoff_tail_norms(p: &PolynomialFunction2D, phi: &GaussianPolynomial, radii: &[f64], cfg: &StarConfig) -> Result<Vec<f64>> {
    let w = cfg.with_rho(0.5);
    let grid = MoyalGrid::snapped(&w)?;
    let ph = GridFunction::sample(grid, |x, y| phi.eval(x, y));
    radii
        .iter()
        .map(|&r| {
            let cut = CutoffProfile::new(r)?;
            let f = GridFunction::sample(grid, |x, y| (cut.eval(x, y) - 1.0) * p.eval(x, y));
            Ok(star_grid(&f, &ph, &w)?.l2_norm())
        })
        .collect()
}

/// ||L_{A^R_x} psi - L_{A_x} psi||_2 with the exact affine action from the series backend.
pub fn multiplier_convergence(gp: &GaugePotential, psi: &GaussianPolynomial, radii: &[f64], cfg: &StarConfig) -> Result<Vec<f64>> {
    let grid = MoyalGrid::snapped(cfg)?;
    let exact = crate::moyal::star(
        &StarOperand::Poly(gp.a_x()),
        &StarOperand::PolyGauss(psi.clone()),
        &StarConfig { backend: crate::moyal::Backend::Series, ..*cfg },
    )?;
    let ex = GridFunction::sample(grid, |x, y| exact.eval(x, y).unwrap_or(ZERO));
    let ps = GridFunction::sample(grid, |x, y| psi.eval(x, y));
    radii
        .iter()
        .map(|&r| {
            let loc = localized_potentials(gp, &CutoffProfile::new(r)?, cfg)?;
            let v = star_grid(&loc.ax, &ps, cfg)?;
            Ok(v.zip(&ex, |a, b| a - b)?.l2_norm())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub level: usize,
    pub radius: f64,
    pub star: StarConfig,
    pub z: [f64; 2],
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { level: 16, radius: 4.0, star: StarConfig::grid(1.0, 0.5, 10.0, 256), z: [0.0, 1.0] }
    }
}

/// Hermiticity of B_R, D_R, D_inf and the two resolvent identities.
pub fn chain_report(params: &ParameterSet, cfg: &ChainConfig) -> Result<Report> {
    let star = StarConfig { theta_eff: params.theta_eff()?, rho: params.rho, ..cfg.star };
    let basis = base_basis(params, cfg.level)?;
    let ops = PerturbedOperators::build(params, CutoffProfile::new(cfg.radius)?, &star, basis)?;
    let [hb, hbr, hdr, hinf] = ops.hermiticity();
    let (fact, second) = resolvent_identities(&ops, C64::new(cfg.z[0], cfg.z[1]))?;
    let mut rep = Report::new("perturbation_chain");
    rep.put("level", cfg.level).put("radius", cfg.radius).put("d_base_hermiticity", hb);
    rep.check(Check::at_most("b_r_hermitian", hbr, 1e-10))
        .check(Check::at_most("d_r_hermitian", hdr, 1e-10))
        .check(Check::at_most("d_inf_hermitian", hinf, 1e-10))
        .check(Check::at_most("factorization", fact, 1e-9))
        .check(Check::at_most("second_resolvent", second, 1e-9));
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailConfig {
    pub radii: Vec<f64>,
    pub star: StarConfig,
    pub probe_center: [f64; 2],
    pub probe_width: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self {
            radii: vec![2.0, 3.0, 4.0, 5.0, 6.0],
            star: StarConfig::grid(1.0, 0.5, 14.0, 256),
            probe_center: [0.0, 0.0],
            probe_width: 1.0,
        }
    }
}

/// Cutoff tails ||((u_R - 1) A_x) * phi|| and ||L_{A^R_x} phi - L_{A_x} phi||,
/// both non-increasing in R once R exceeds the probe radius.
pub fn tail_report(params: &ParameterSet, cfg: &TailConfig) -> Result<Report> {
    let star = StarConfig { theta_eff: params.theta_eff()?, rho: params.rho, ..cfg.star };
    let gp = gauge_potentials(params)?;
    let phi = GaussianPolynomial::gaussian(cfg.probe_center, cfg.probe_width, [0.0; 2], ONE);
    let tails = cutoff_tail_norms(&gp.a_x(), &phi, &cfg.radii, &star)?;
    let mult = multiplier_convergence(&gp, &phi, &cfg.radii, &star)?;
    let probe_radius = cfg.probe_center[0].hypot(cfg.probe_center[1]) + 2.0 * cfg.probe_width;
    let beyond = |v: &[f64]| {
        let tail: Vec<f64> = cfg.radii.iter().zip(v).filter(|(r, _)| **r >= probe_radius).map(|(_, x)| *x).collect();
        tail.windows(2).all(|w| w[1] <= w[0])
    };
    let mut rep = Report::new("cutoff_tails");
    rep.put("radii", &cfg.radii).put("probe_radius", probe_radius).put("tail_norms", &tails).put("multiplier_error", &mult);
    rep.check(Check::holds("tail_norms_decrease", beyond(&tails)))
        .check(Check::holds("multiplier_error_decreases", beyond(&mult)));
    Ok(rep)
}

/// Checks of the analytic-vector bound ||D_inf Phi|| <= K sqrt(l + 1) ||Phi||
/// on random vectors supported in levels <= l; returns the worst ratio.
pub fn estimate_bound_ratio(params: &ParameterSet, trials: usize, max_level: usize, rng: &mut impl Rng) -> Result<f64> {
    let basis = base_basis(params, max_level + 1)?;
    let lad = ladder_decomposition(params, basis.frame)?;
    let d = minimal_coupled(params, basis)?;
    let n = basis.scalar_dim();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let l = rng.gen_range(0..=max_level);
        let mut v = DVector::from_element(2 * n, ZERO);
        for i in 0..n {
            if basis.trunc.degree_of(i) <= l {
                v[i] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                v[i + n] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let ratio = (&d.entries * &v).norm() / (lad.k * ((l + 1) as f64).sqrt() * v.norm());
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Structural checks of the gauge module at one configuration.
pub fn structure_report(params: &ParameterSet, level: usize, rng: &mut impl Rng) -> Result<Report> {
    let basis = base_basis(params, level)?;
    let d_inf = minimal_coupled(params, basis)?;
    let lad = ladder_decomposition(params, basis.frame)?;
    let chi = grading(basis);
    let mut rep = Report::new("gauge_structure");
    let gp = gauge_potentials(params)?;
    rep.put("alpha", [gp.alpha_x, gp.alpha_y]).put("ladder_k", lad.k);
    rep.check(Check::at_most("d_inf_hermitian", d_inf.hermiticity_defect(), 1e-12))
        .check(Check::at_most("d_inf_grading", crate::basis::max_abs(&chi.anticommutator(&d_inf).entries), 1e-12))
        .check(Check::at_most("ladder_reconstruction", (lad.reconstruct(basis).entries - &d_inf.entries).norm(), 1e-10))
        .check(Check::at_most(
            "ladder_offdiagonal",
            lad.m.iter().map(|m| m[(0, 0)].norm().max(m[(1, 1)].norm())).fold(0.0, f64::max),
            1e-14,
        ))
        .check(Check::at_most("estimate_bound_ratio", estimate_bound_ratio(params, 50, 15, rng)?, 1.0));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn canon() -> ParameterSet {
        ParameterSet::canonical()
    }

    #[test]
    fn slopes() {
        let g = gauge_potentials(&canon()).unwrap();
        assert!((canon().gauge_discriminant().unwrap() - 1.2).abs() < 1e-12);
        assert!((g.alpha_x + 0.09545).abs() < 1e-5 && (g.alpha_y - 0.09545).abs() < 1e-5);
        let z = gauge_potentials(&canon().with_gauge(0.3, 1.0, 0.0)).unwrap();
        assert_eq!((z.alpha_x, z.alpha_y), (0.0, 0.0));
        assert_eq!(gauge_potentials(&canon().with_gauge(1.0, 1.0, 0.2)).unwrap().alpha_x, 0.0);
        assert!(gauge_potentials(&canon().with_gauge(0.5, -20.0, 0.2)).is_err());
    }

    #[test]
    fn cutoff_shape() {
        let u = CutoffProfile::new(2.0).unwrap();
        assert_eq!(u.eval(1.0, 1.0), 1.0);
        assert_eq!(u.eval(3.0, 3.0), 0.0);
        assert!((u.eval(3.0, 0.0) - 0.5).abs() < 1e-15);
        for i in 0..100 {
            let v = u.eval(i as f64 * 0.05, 0.0);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn base_operator_landau_and_coord_commutators() {
        let p = canon();
        let basis = base_basis(&p, 12).unwrap();
        assert!((basis.frame.lambda_x - 1.0).abs() < 1e-12 && (basis.frame.lambda_y - 0.75f64.sqrt()).abs() < 1e-12);
        let d = base_dirac(&p, basis).unwrap();
        let sp = crate::kinematics::hermitian_spectrum(&d);
        assert!(crate::kinematics::landau_deviation(&sp, 7) < 1e-10);
        for rho in [0.0, 0.3, 0.8] {
            let q = p.with_gauge(rho, 1.0, 0.2);
            let b = base_basis(&q, 8).unwrap();
            let d = base_dirac(&q, b).unwrap();
            let lx = affine_left_mult(AffineSymbol::X, &q, b).unwrap().kron_pauli(Pauli::Id);
            let t = OperatorMatrix::identity(b, false).kron_pauli(Pauli::X).scale(-I * std::f64::consts::FRAC_1_SQRT_2);
            assert!(d.commutator(&lx).interior_residual(&t, 1) < 1e-10);
        }
    }

    #[test]
    fn minimal_coupling_structure() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rep = structure_report(&canon(), 10, &mut rng).unwrap();
        assert!(rep.passed(), "{}", rep.to_json());
        let p0 = canon().with_gauge(0.5, 0.0, 0.2);
        let b = base_basis(&p0, 6).unwrap();
        assert_eq!(minimal_coupled(&p0, b).unwrap(), base_dirac(&p0, b).unwrap());
        let lad = ladder_decomposition(&p0, b.frame).unwrap();
        assert!((lad.reconstruct(b).entries - base_dirac(&p0, b).unwrap().entries).norm() < 1e-10);
    }

    #[test]
    fn resolvent_basics() {
        let b = HermiteBasis::unit(2);
        let z = OperatorMatrix::zeros(b, true);
        let v = DVector::from_fn(z.dim(), |i, _| C64::new(i as f64, 1.0));
        let (w, r) = resolvent_apply(&z, I, &v).unwrap();
        assert!((w - &v * I).norm() < 1e-15 && r < 1e-15);
        assert!(resolvent_apply(&z, ONE, &v).is_err());
    }

    #[test]
    fn localized_potentials_identities() {
        let p = canon().with_gauge(0.8, 1.0, 0.2);
        let gp = gauge_potentials(&p).unwrap();
        let cfg = StarConfig::grid(p.theta_eff().unwrap(), 0.8, 10.0, 256);
        let cut = CutoffProfile::new(3.0).unwrap();
        let loc = localized_potentials(&gp, &cut, &cfg).unwrap();
        let grid = gauge_grid(&cfg).unwrap();
        let plain = GridFunction::sample(grid, |x, y| c(cut.eval(x, y) * gp.alpha_x * y));
        let back = t_rho_on(&loc.ax, &cfg, Direction::Forward);
        assert!(back.interior_diff(&plain, 1.0).unwrap() < 1e-8);
        let inv = crate::moyal::involution_rho_on(&loc.ax, &cfg);
        assert!(inv.interior_diff(&loc.ax, 1.0).unwrap() < 1e-8);
        let half = localized_potentials(&gp, &cut, &cfg.with_rho(0.5)).unwrap();
        assert!(half.ax.interior_diff(&plain, 1.0).unwrap() < 1e-15);
    }

    #[test]
    fn perturbation_small_config() {
        let p = canon();
        let cfg = StarConfig::grid(1.0, 0.5, 10.0, 256);
        let basis = base_basis(&p, 8).unwrap();
        let ops = PerturbedOperators::build(&p, CutoffProfile::new(3.0).unwrap(), &cfg, basis).unwrap();
        let h = ops.hermiticity();
        assert!(h.iter().all(|&v| v < 1e-10), "{h:?}");
        let (f, s) = resolvent_identities(&ops, I).unwrap();
        assert!(f < 1e-10 && s < 1e-9);
        let zero = perturbation_matrix(&gauge_potentials(&p.with_gauge(0.5, 1.0, 0.0)).unwrap(), &CutoffProfile::new(3.0).unwrap(), &cfg, basis).unwrap();
        assert_eq!(zero.op_norm(), 0.0);
        let far = perturbation_matrix(&gauge_potentials(&p).unwrap(), &CutoffProfile { radius: f64::INFINITY }, &cfg, basis).unwrap();
        assert!(far.interior_residual(&ops.d_inf.sub(&ops.d_base), 0) < 1e-4);
    }

    #[test]
    fn tails_decay() {
        let cfg = StarConfig::grid(1.0, 0.5, 12.0, 256);
        let phi = GaussianPolynomial::gaussian([0.0; 2], 1.0, [0.0; 2], ONE);
        let t = cutoff_tail_norms(&PolynomialFunction2D::x(), &phi, &[2.0, 3.0, 4.0, 6.0, 8.0], &cfg).unwrap();
        assert!(t.windows(2).all(|w| w[1] < w[0]), "{t:?}");
        assert!(t[3] < 1e-4, "{t:?}");
    }
}

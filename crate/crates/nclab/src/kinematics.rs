//! Kinematical operators X, Y, Pi_x, Pi_y of a presentation (r, s), the
//! normalized momenta, ladder operators, H, the Dirac family and grading.
//!
//! Momenta are p = -i hbar0 d. All operators here are affine in (x, y, d_x, d_y),
//! so every matrix is a linear combination of lifted position/derivative blocks.
//! Matrices are assembled in an adapted frame (see `AffinePair::frame`) in which
//! a^- contains only frame annihilators; truncation then keeps the exact
//! Landau-level structure.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::{
    c, plane_ops, project, BasisTruncation, Frame, HermiteBasis, OperatorMatrix, Pauli,
    QuadratureGrid, SmoothFunction2D, C64, I, ONE,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{block_eigh, hermitian_eigenvalues};
use crate::params::ParameterSet;
use crate::report::{Check, Report};

/// Pi_x = a y + b(-i d_x), Pi_y = c x + e(-i d_y) with a e - b c = 1, so that
/// [Pi_x, Pi_y] = i.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AffinePair {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl AffinePair {
    pub fn ccr(&self) -> f64 {
        self.a * self.e - self.b * self.c
    }

    /// Frame phi = e^{i kappa x y} h_m(x/lx) h_n(y/ly) with
    /// 1/ly^2 = (a + b kappa)/e and 1/lx^2 = -(c + e kappa)/b, which makes
    /// (Pi_x + i Pi_y)/sqrt2 = (e/ly) c_2 - i (b/lx) c_1.
    pub fn frame(&self) -> Result<Frame> {
        let AffinePair { a, b, c, e } = *self;
        if (self.ccr() - 1.0).abs() > 1e-9 {
            return invalid("affine pair with a e - b c = 1");
        }
        let tiny = 1e-12;
        let (kappa, lx, ly) = if b.abs() < tiny {
            let k = -c / e;
            (k, 1.0, (e / (a + b * k)).sqrt())
        } else if e.abs() < tiny {
            let k = -a / b;
            (k, (-b / (c + e * k)).sqrt(), 1.0)
        } else {
            // f(kappa) = e (a + b kappa) must lie in (0, 1); the other condition is 1 - f.
            let f0 = a * e;
            let k = if f0 > 0.0 && f0 < 1.0 { 0.0 } else { (0.5 / e - a) / b };
            (k, (-b / (c + e * k)).sqrt(), (e / (a + b * k)).sqrt())
        };
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return invalid("adapted frame exists");
        }
        Ok(Frame { lambda_x: lx, lambda_y: ly, kappa })
    }

    pub fn matrices(&self, basis: HermiteBasis) -> (OperatorMatrix, OperatorMatrix) {
        let ops = plane_ops(basis);
        let px = ops.y.scale(c(self.a)).add(&ops.dx.scale(-I * self.b));
        let py = ops.x.scale(c(self.c)).add(&ops.dy.scale(-I * self.e));
        (px, py)
    }
}

/// Coefficients of the normalized momenta Pi-tilde = Pi / sqrt(hbar0 B0), in -i d units.
pub fn normalized_pair(p: &ParameterSet) -> AffinePair {
    let (h, t, b0, r, s) = (p.hbar0, p.theta0, p.b0, p.r, p.s);
    let n = (h * b0).sqrt();
    AffinePair {
        a: (1.0 - r) * h * b0 / (h - r * t * b0) / n,
        b: h * ((r + s - r * s) * t * b0 - h) / (r * t * b0 - h) / n,
        c: -r * b0 / n,
        e: h * (1.0 + r * (s - 1.0) * t * b0 / h) / n,
    }
}

pub fn kinematic_frame(p: &ParameterSet) -> Result<Frame> {
    p.validate()?;
    normalized_pair(p).frame()
}

#[derive(Clone, Debug)]
pub struct KinematicalOps {
    pub x: OperatorMatrix,
    pub y: OperatorMatrix,
    pub pi_x: OperatorMatrix,
    pub pi_y: OperatorMatrix,
    pub pi_x_tilde: OperatorMatrix,
    pub pi_y_tilde: OperatorMatrix,
    pub params: ParameterSet,
    pub basis: HermiteBasis,
}

/// Build in the adapted frame of `params`.
pub fn build_kinematics(params: &ParameterSet, trunc: BasisTruncation) -> Result<KinematicalOps> {
    let frame = kinematic_frame(params)?;
    build_kinematics_in(params, HermiteBasis { trunc, frame })
}

/// Build in an explicitly chosen frame (e.g. the unit frame).
pub fn build_kinematics_in(params: &ParameterSet, basis: HermiteBasis) -> Result<KinematicalOps> {
    params.validate()?;
    let p = *params;
    let (h, t, b0, r, s) = (p.hbar0, p.theta0, p.b0, p.r, p.s);
    let ops = plane_ops(basis);
    // p = -i h d
    let px = ops.dx.scale(-I * h);
    let py = ops.dy.scale(-I * h);
    let x = ops.x.sub(&py.scale(c(s * t / h)));
    let y = ops.y.add(&px.scale(c((1.0 - s) * t / h)));
    let pi_x = ops
        .y
        .scale(c((1.0 - r) * h * b0 / (h - r * t * b0)))
        .add(&px.scale(c(((r + s - r * s) * t * b0 - h) / (r * t * b0 - h))));
    let pi_y = ops.x.scale(c(-r * b0)).add(&py.scale(c(1.0 + r * (s - 1.0) * t * b0 / h)));
    let n = 1.0 / (h * b0).sqrt();
    Ok(KinematicalOps {
        pi_x_tilde: pi_x.scale(c(n)),
        pi_y_tilde: pi_y.scale(c(n)),
        x,
        y,
        pi_x,
        pi_y,
        params: p,
        basis,
    })
}

impl KinematicalOps {
    /// Interior residuals ||[A,B] - i k I|| on m+n <= L - margin.
    pub fn ccr_residuals(&self, margin: usize) -> Vec<(&'static str, f64)> {
        let p = &self.params;
        let id = OperatorMatrix::identity(self.basis, false);
        let res = |a: &OperatorMatrix, b: &OperatorMatrix, k: f64| {
            a.commutator(b).interior_residual(&id.scale(I * k), margin)
        };
        vec![
            ("[X,Pi_x]-i*hbar0", res(&self.x, &self.pi_x, p.hbar0)),
            ("[Y,Pi_y]-i*hbar0", res(&self.y, &self.pi_y, p.hbar0)),
            ("[X,Y]-i*theta0", res(&self.x, &self.y, p.theta0)),
            ("[Pi_x,Pi_y]-i*hbar0*B0", res(&self.pi_x, &self.pi_y, p.hbar0 * p.b0)),
            ("[Pi~_x,Pi~_y]-i", res(&self.pi_x_tilde, &self.pi_y_tilde, 1.0)),
        ]
    }

    pub fn hermiticity_defect(&self) -> f64 {
        [&self.x, &self.y, &self.pi_x, &self.pi_y, &self.pi_x_tilde, &self.pi_y_tilde]
            .iter()
            .map(|m| m.hermiticity_defect())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct Ladder {
    pub a_minus: OperatorMatrix,
    pub a_plus: OperatorMatrix,
}

/// a^{+-} = (Pi~_x -+ i Pi~_y)/sqrt2.
pub fn ladder_ops(kin: &KinematicalOps) -> Ladder {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    Ladder {
        a_minus: kin.pi_x_tilde.add(&kin.pi_y_tilde.scale(I)).scale(c(s)),
        a_plus: kin.pi_x_tilde.sub(&kin.pi_y_tilde.scale(I)).scale(c(s)),
    }
}

/// Compression of a^+ a^- + 1/2 to the truncation, formed on one extra level
/// so the product is exact in any frame.
pub fn hamiltonian(kin: &KinematicalOps) -> OperatorMatrix {
    let big = build_kinematics_in(&kin.params, kin.basis.enlarged(1)).expect("validated params");
    let lad = ladder_ops(&big);
    let h = lad.a_plus.mul(&lad.a_minus).project_to(kin.basis.level());
    h.add(&OperatorMatrix::identity(kin.basis, false).scale(c(0.5)))
}

/// Normalized Gaussian psi0 = C exp(-wx x^2 - wy y^2) annihilated by a^-.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GroundState {
    pub wx: f64,
    pub wy: f64,
    pub norm: f64,
}

impl GroundState {
    pub fn function(&self) -> SmoothFunction2D {
        let GroundState { wx, wy, norm } = *self;
        let hw = 8.0 / (2.0 * wx.min(wy)).sqrt();
        let kmax = 8.0 * (2.0 * wx.max(wy)).sqrt();
        SmoothFunction2D::new(hw, std::f64::consts::PI / kmax, move |x, y| c(norm * (-wx * x * x - wy * y * y).exp()))
    }
}

/// Solves (a y + i b d_x + i c x + d d_y) psi = 0 with a separable Gaussian:
/// wx = c/(2b), wy = -a/(2d). Requires c/b > 0 and a/d < 0.
pub fn ground_state_analytic(params: &ParameterSet) -> Result<GroundState> {
    params.validate()?;
    if !params.gaussian_positive() {
        return invalid("ground-state Gaussian positivity (c/b > 0, a/d < 0)");
    }
    let [a, b, cc, d] = params.ground_constants();
    let wx = cc / (2.0 * b);
    let wy = -a / (2.0 * d);
    // |C|^2 = (1/pi) sqrt((c/b)(-a/d))
    let norm = ((cc / b) * (-a / d)).sqrt().sqrt() / std::f64::consts::PI.sqrt();
    Ok(GroundState { wx, wy, norm })
}

/// D = (Pi~_x (x) sigma_x + Pi~_y (x) sigma_y)/sqrt2 in the adapted frame.
pub fn dirac(params: &ParameterSet, trunc: BasisTruncation) -> Result<OperatorMatrix> {
    let kin = build_kinematics(params, trunc)?;
    Ok(dirac_from(&kin.pi_x_tilde, &kin.pi_y_tilde))
}

pub fn dirac_from(pi_x: &OperatorMatrix, pi_y: &OperatorMatrix) -> OperatorMatrix {
    pi_x.kron_pauli(Pauli::X)
        .add(&pi_y.kron_pauli(Pauli::Y))
        .scale(c(std::f64::consts::FRAC_1_SQRT_2))
}

pub fn grading(basis: HermiteBasis) -> OperatorMatrix {
    OperatorMatrix::identity(basis, false).kron_pauli(Pauli::Z)
}

/// Eigenvalues of a Hermitian matrix, sorted by |lambda| then lambda.
pub fn hermitian_spectrum(d: &OperatorMatrix) -> Vec<f64> {
    let mut ev = hermitian_eigenvalues(&d.entries);
    sort_by_modulus(&mut ev);
    ev
}

pub fn sort_by_modulus(v: &mut [f64]) {
    v.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
}

/// Eigenvalues with lambda^2 <= L - 2 sqrt(L) are trusted.
pub fn edge_threshold(level: usize) -> f64 {
    let l = level as f64;
    l - 2.0 * l.sqrt()
}

/// Groups ascending values whose neighbours differ by less than `gap`.
pub fn clusters(values: &[f64], gap: f64) -> Vec<(f64, usize)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<(f64, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=v.len() {
        if i == v.len() || v[i] - v[i - 1] > gap {
            let group = &v[start..i];
            out.push((group.iter().sum::<f64>() / group.len() as f64, group.len()));
            start = i;
        }
    }
    out
}

/// The k distinct eigenvalue clusters of smallest modulus.
pub fn lowest_clusters(spectrum: &[f64], k: usize) -> Vec<(f64, usize)> {
    let mut cl = clusters(spectrum, 1e-4);
    // +-pairs whose moduli differ by rounding keep the negative member first
    cl.sort_by(|a, b| {
        let (ma, mb) = (a.0.abs(), b.0.abs());
        if (ma - mb).abs() < 1e-7 {
            a.0.total_cmp(&b.0)
        } else {
            ma.total_cmp(&mb)
        }
    });
    cl.truncate(k);
    cl
}

/// Exact Landau values {0, +-1, +-sqrt2, ...} in |lambda| order.
pub fn landau_values(k: usize) -> Vec<f64> {
    let mut v = vec![0.0];
    let mut j = 1.0f64;
    while v.len() < k {
        v.push(-j.sqrt());
        v.push(j.sqrt());
        j += 1.0;
    }
    v.truncate(k);
    v
}

/// Max deviation of the k lowest clusters from {+-sqrt j}.
pub fn landau_deviation(spectrum: &[f64], k: usize) -> f64 {
    let cl = lowest_clusters(spectrum, k);
    let target = landau_values(k);
    if cl.len() < k {
        return f64::INFINITY;
    }
    cl.iter().zip(&target).map(|(a, b)| (a.0 - b).abs()).fold(0.0, f64::max)
}

/// For each trusted eigenvalue, distance to the nearest eigenvalue of opposite sign.
pub fn symmetry_defect(spectrum: &[f64], level: usize) -> f64 {
    let thr = edge_threshold(level);
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(f64::total_cmp);
    spectrum
        .iter()
        .filter(|&&l| l * l <= thr)
        .map(|&l| {
            let i = sorted.partition_point(|&v| v < -l);
            let mut d = f64::INFINITY;
            for j in i.saturating_sub(1)..(i + 1).min(sorted.len()) {
                d = d.min((sorted[j] + l).abs());
            }
            d
        })
        .fold(0.0, f64::max)
}

pub fn isospectrality_check(
    params1: &ParameterSet,
    params2: &ParameterSet,
    trunc: BasisTruncation,
    k: usize,
) -> Result<Report> {
    if !params1.same_sector(params2) {
        return invalid("isospectrality compares presentations of one sector (hbar0, theta0, B0 equal)");
    }
    let s1 = hermitian_spectrum(&dirac(params1, trunc)?);
    let s2 = hermitian_spectrum(&dirac(params2, trunc)?);
    let c1 = lowest_clusters(&s1, k);
    let c2 = lowest_clusters(&s2, k);
    if c1.len() < k || c2.len() < k {
        return Err(Error::Scale(format!("fewer than {k} eigenvalue clusters at L = {}", trunc.level())));
    }
    let dev = c1.iter().zip(&c2).map(|(a, b)| (a.0 - b.0).abs()).fold(0.0, f64::max);
    let mult_equal = c1.iter().zip(&c2).all(|(a, b)| a.1 == b.1);
    let thr = edge_threshold(trunc.level());
    let trusted = |s: &[f64]| s.iter().cloned().filter(|l| l * l <= thr).collect::<Vec<_>>();
    let (t1, t2) = (trusted(&s1), trusted(&s2));
    let full_dev = if t1.len() == t2.len() {
        t1.iter().zip(&t2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut rep = Report::new("isospectrality");
    rep.put("k", k)
        .put("clusters_1", &c1)
        .put("clusters_2", &c2)
        .put_tol("max_deviation", dev, 1e-6)
        .put("trusted_count", (t1.len(), t2.len()))
        .put("trusted_max_deviation", full_dev);
    rep.check(Check::at_most("lowest_clusters_agree", dev, 1e-6))
        .check(Check::holds("multiplicities_agree", mult_equal));
    Ok(rep)
}

/// Numerical ground-state checks: overlap of the analytic Gaussian with the
/// lowest eigenspace of H, and ||a^- psi0||.
#[derive(Clone, Debug, Serialize)]
pub struct GroundStateCheck {
    pub overlap: f64,
    pub annihilation_norm: f64,
    pub energy_residual: f64,
    pub lowest_eigenvalue: f64,
    pub multiplicity: usize,
}

pub fn ground_state_check(params: &ParameterSet, trunc: BasisTruncation) -> Result<GroundStateCheck> {
    let gs = ground_state_analytic(params)?;
    let kin = build_kinematics(params, trunc)?;
    let f = gs.function();
    let hw = f.half_width.max(kin.basis.frame.lambda_x.max(kin.basis.frame.lambda_y) * 9.0);
    let grid = QuadratureGrid::trapezoid(hw, 256);
    let v = project(kin.basis, &f, &grid)?;
    let h = hamiltonian(&kin);
    let eig = block_eigh(&h.entries);
    let lo = eig.pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let idx: Vec<usize> = (0..eig.pairs.len()).filter(|&i| (eig.pairs[i].0 - lo).abs() < 1e-8).collect();
    let mut pv = DVector::<C64>::zeros(v.len());
    for &i in &idx {
        let col = eig.dense_vector(i);
        pv += &col * col.dotc(&v);
    }
    let lad = ladder_ops(&kin);
    let hv = &h.entries * &v - &v * c(0.5);
    Ok(GroundStateCheck {
        overlap: pv.norm() / v.norm(),
        annihilation_norm: (&lad.a_minus.entries * &v).norm(),
        energy_residual: hv.norm(),
        lowest_eigenvalue: lo,
        multiplicity: idx.len(),
    })
}

/// psi_n = (a^+)^n psi0 / sqrt(n!) from a basis vector psi0.
pub fn excited_states(lad: &Ladder, psi0: &DVector<C64>, n: usize) -> Vec<DVector<C64>> {
    let mut out = vec![psi0.clone()];
    for k in 1..=n {
        let next = &lad.a_plus.entries * &out[k - 1] / C64::new((k as f64).sqrt(), 0.0);
        out.push(next);
    }
    out
}

/// D^2 - (H (x) I + 1/2 diag(-1, 1)) on the interior block.
pub fn square_identity_residual(params: &ParameterSet, trunc: BasisTruncation, margin: usize) -> Result<f64> {
    let kin = build_kinematics(params, trunc)?;
    let d = dirac_from(&kin.pi_x_tilde, &kin.pi_y_tilde);
    let h = hamiltonian(&kin);
    let id = OperatorMatrix::identity(kin.basis, false);
    let target = h.kron_pauli(Pauli::Id).sub(&id.kron_pauli(Pauli::Z).scale(c(0.5)));
    Ok(d.mul(&d).interior_residual(&target, margin))
}

pub fn identity_like(n: usize) -> DMatrix<C64> {
    DMatrix::from_diagonal_element(n, n, ONE)
}

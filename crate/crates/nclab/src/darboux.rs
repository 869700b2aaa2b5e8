//! Commutation form Sigma, Pfaffian and linear Darboux factorization
//! S^T Sigma S = hbar_eff J.

use nalgebra::Matrix4;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::params::ParameterSet;
use crate::report::{Check, Report};

pub type M4 = Matrix4<f64>;

/// J = [[0, I2], [-I2, 0]].
pub fn standard_j() -> M4 {
    let mut j = M4::zeros();
    j[(0, 2)] = 1.0;
    j[(1, 3)] = 1.0;
    j[(2, 0)] = -1.0;
    j[(3, 1)] = -1.0;
    j
}

/// Sigma_12 = theta0, Sigma_13 = Sigma_24 = hbar0, Sigma_34 = hbar0 B0.
pub fn sigma(p: &ParameterSet) -> M4 {
    let mut s = M4::zeros();
    let mut set = |i: usize, j: usize, v: f64| {
        s[(i, j)] = v;
        s[(j, i)] = -v;
    };
    set(0, 1, p.theta0);
    set(0, 2, p.hbar0);
    set(1, 3, p.hbar0);
    set(2, 3, p.hbar0 * p.b0);
    s
}

fn skew_defect(m: &M4) -> f64 {
    (m + m.transpose()).abs().max()
}

pub fn pfaffian4(m: &M4) -> Result<f64> {
    if skew_defect(m) > 1e-12 {
        return invalid("skew-symmetric input");
    }
    Ok(m[(0, 1)] * m[(2, 3)] - m[(0, 2)] * m[(1, 3)] + m[(0, 3)] * m[(1, 2)])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DarbouxData {
    pub sigma: M4,
    pub s: M4,
    pub hbar_eff: f64,
    pub j: M4,
    pub pfaffian: f64,
    pub residual: f64,
}

pub fn residual(sigma: &M4, s: &M4, hbar_eff: f64) -> f64 {
    (s.transpose() * sigma * s - standard_j() * hbar_eff).norm()
}

/// Symplectic Gram-Schmidt on the standard basis, pivoting on the largest
/// pairing |w_i^T Sigma w_j|. Columns of S are (u1, u2, hbar v1, hbar v2).
pub fn darboux_factor(sigma: &M4, hbar_eff: f64) -> Result<DarbouxData> {
    let pf = pfaffian4(sigma)?;
    if pf.abs() <= 1e-14 * sigma.norm().powi(2).max(f64::MIN_POSITIVE) {
        return invalid("Sigma nondegenerate (Pf != 0)");
    }
    if hbar_eff == 0.0 || !hbar_eff.is_finite() {
        return invalid("hbar_eff != 0");
    }
    let omega = |a: &nalgebra::Vector4<f64>, b: &nalgebra::Vector4<f64>| (a.transpose() * sigma * b)[(0, 0)];
    let mut pool: Vec<nalgebra::Vector4<f64>> = (0..4).map(|i| M4::identity().column(i).into_owned()).collect();
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for _ in 0..2 {
        let mut best = (0, 1, 0.0f64);
        for i in 0..pool.len() {
            for j in 0..pool.len() {
                let w = omega(&pool[i], &pool[j]);
                if i != j && w.abs() > best.2.abs() {
                    best = (i, j, w);
                }
            }
        }
        let (i, j, w) = best;
        if w.abs() <= 1e-300 {
            return invalid("Sigma nondegenerate (Pf != 0)");
        }
        let u = pool[i];
        let v = pool[j] / w;
        pool = pool
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i && k != j)
            .map(|(_, x)| x - u * omega(x, &v) + v * omega(x, &u))
            .collect();
        us.push(u);
        vs.push(v);
    }
    let s = M4::from_columns(&[us[0], us[1], vs[0] * hbar_eff, vs[1] * hbar_eff]);
    Ok(DarbouxData {
        sigma: *sigma,
        residual: residual(sigma, &s, hbar_eff),
        s,
        hbar_eff,
        j: standard_j(),
        pfaffian: pf,
    })
}

/// One row per admissibility constraint. Gaussian positivity is advisory and
/// reported as a result, not a check.
pub fn validate_admissible(p: &ParameterSet) -> Report {
    let mut rep = Report::new("validate_admissible");
    let nz = |v: f64| v != 0.0 && v.is_finite();
    rep.check(Check::holds("hbar0 != 0", nz(p.hbar0)))
        .check(Check::holds("theta0 != 0", nz(p.theta0)))
        .check(Check::holds("B0 != 0", nz(p.b0)))
        .check(Check::holds("hbar0 - theta0*B0 != 0", p.theta_eff().is_ok()))
        .check(Check::holds(
            "r != hbar0/(theta0*B0)",
            nz(p.theta0 * p.b0) && (p.r - p.hbar0 / (p.theta0 * p.b0)).abs() > 1e-14,
        ))
        .check(Check::holds("hbar0*B0 > 0", p.hbar0 * p.b0 > 0.0));
    let disc = p.gauge_discriminant().unwrap_or(f64::NAN);
    rep.check(Check::at_least("gauge discriminant >= 0", disc, 0.0));
    let [a, b, c, d] = p.ground_constants();
    rep.put("ground_constants_abcd", [a, b, c, d])
        .put("advisory.gaussian_positivity", p.gaussian_positive())
        .put("theta_eff", p.theta_eff().ok());
    rep
}

/// Random admissible sector constants with |hbar0 - theta0 B0| bounded away from 0.
pub fn random_sector<R: rand::Rng>(rng: &mut R) -> ParameterSet {
    loop {
        let hbar0 = rng.gen_range(0.3..2.0);
        let theta0 = rng.gen_range(-1.5..1.5);
        let b0 = rng.gen_range(0.2..2.0);
        let p = ParameterSet { hbar0, theta0, b0, ..ParameterSet::canonical() };
        if (hbar0 - theta0 * b0).abs() > 0.05 * hbar0 && theta0.abs() > 1e-3 && p.validate().is_ok() {
            return p;
        }
    }
}

/// Pfaffian closed form, Pf^2 = det and Darboux residuals over random sectors.
pub fn darboux_suite<R: rand::Rng>(params: &ParameterSet, trials: usize, rng: &mut R) -> Result<Report> {
    params.validate()?;
    let s = sigma(params);
    let pf = pfaffian4(&s)?;
    let d = darboux_factor(&s, 1.0)?;
    let mut rep = Report::new("darboux");
    rep.put("sigma", s.row_iter().map(|r| r.iter().cloned().collect::<Vec<_>>()).collect::<Vec<_>>())
        .put("pfaffian", pf)
        .put("det", s.determinant())
        .put("theta_eff", params.theta_eff()?)
        .put("S", d.s.row_iter().map(|r| r.iter().cloned().collect::<Vec<_>>()).collect::<Vec<_>>())
        .put("residual", d.residual);
    let (mut pf_rel, mut det_dev, mut res) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let p = random_sector(rng);
        let sg = sigma(&p);
        let pf = pfaffian4(&sg)?;
        let want = -p.hbar0 * (p.hbar0 - p.theta0 * p.b0);
        pf_rel = pf_rel.max((pf - want).abs() / want.abs());
        det_dev = det_dev.max((sg.determinant() - pf * pf).abs() / (pf * pf).max(1.0));
        let hbar_eff = rng.gen_range(0.5..2.0);
        res = res.max(darboux_factor(&sg, hbar_eff)?.residual);
    }
    rep.put("trials", trials)
        .check(Check::at_most("pfaffian_closed_form", ((pf - (-params.hbar0 * (params.hbar0 - params.theta0 * params.b0))) / pf).abs(), 1e-12))
        .check(Check::at_most("random_pfaffian_rel", pf_rel, 1e-12))
        .check(Check::at_most("random_det_vs_pf2", det_dev, 1e-10))
        .check(Check::at_most("random_darboux_residual", res, 1e-10))
        .check(Check::at_most("darboux_residual", d.residual, 1e-12));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfaffian_examples() {
        // [[0, I], [-I, 0]] has Pf = -1; the block-diagonal form has Pf = 1
        assert_eq!(pfaffian4(&standard_j()).unwrap(), -1.0);
        let mut jb = M4::zeros();
        jb[(0, 1)] = 1.0;
        jb[(1, 0)] = -1.0;
        jb[(2, 3)] = 1.0;
        jb[(3, 2)] = -1.0;
        assert_eq!(pfaffian4(&jb).unwrap(), 1.0);
        let p = ParameterSet::canonical();
        let s = sigma(&p);
        assert!((pfaffian4(&s).unwrap() + 0.5).abs() < 1e-15);
        assert!((s.determinant() - 0.25).abs() < 1e-14);
        assert!(pfaffian4(&M4::identity()).is_err());
    }

    #[test]
    fn trivial_and_canonical_factor() {
        let d = darboux_factor(&(standard_j() * 2.0), 2.0).unwrap();
        assert!(d.residual < 1e-15);
        let d = darboux_factor(&sigma(&ParameterSet::canonical()), 1.0).unwrap();
        assert!(d.residual < 1e-12 && d.s.determinant().abs() > 1e-12);
    }

    #[test]
    fn scale_reuse() {
        let sg = sigma(&ParameterSet::canonical());
        let d = darboux_factor(&sg, 1.3).unwrap();
        let d2 = darboux_factor(&(sg * 2.0), 2.6).unwrap();
        assert!(residual(&(sg * 2.0), &d.s, 2.6) < 1e-12);
        assert!((d.s - d2.s).norm() < 1e-12);
    }

    #[test]
    fn singular_rejected() {
        let p = ParameterSet { theta0: 1.0, ..ParameterSet::canonical() };
        assert!(darboux_factor(&sigma(&p), 1.0).is_err());
    }

    #[test]
    fn admissibility_rows() {
        assert!(validate_admissible(&ParameterSet::canonical()).passed());
        let bad = ParameterSet { r: 2.0, ..ParameterSet::canonical() };
        let rep = validate_admissible(&bad);
        let fails: Vec<_> = rep.failures().iter().map(|c| c.name.clone()).collect();
        assert_eq!(fails, vec!["r != hbar0/(theta0*B0)"]);
        let deg = ParameterSet { theta0: 1.0, ..ParameterSet::canonical() };
        assert!(validate_admissible(&deg).failures().iter().any(|c| c.name == "hbar0 - theta0*B0 != 0"));
    }
}

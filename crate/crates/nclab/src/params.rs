//! Sector constants, kinematic presentation and gauge data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const EPS: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParameterSet {
    pub hbar0: f64,
    pub theta0: f64,
    pub b0: f64,
    pub r: f64,
    pub s: f64,
    pub rho: f64,
    pub e: f64,
    pub b_ext: f64,
}

impl Default for ParameterSet {
    fn default() -> Self {
        Self::canonical()
    }
}

impl ParameterSet {
    /// hbar0 = 1, theta0 = 0.5, B0 = 1, (r, s) = (1.5, 1), rho = 1/2, e = 1, B_ext = 0.2.
    pub fn canonical() -> Self {
        Self { hbar0: 1.0, theta0: 0.5, b0: 1.0, r: 1.5, s: 1.0, rho: 0.5, e: 1.0, b_ext: 0.2 }
    }

    pub fn with_rs(self, r: f64, s: f64) -> Self {
        Self { r, s, ..self }
    }

    pub fn with_gauge(self, rho: f64, e: f64, b_ext: f64) -> Self {
        Self { rho, e, b_ext, ..self }
    }

    pub fn same_sector(&self, other: &Self) -> bool {
        self.hbar0 == other.hbar0 && self.theta0 == other.theta0 && self.b0 == other.b0
    }

    /// theta0 / (1 - theta0 B0 / hbar0).
    pub fn theta_eff(&self) -> Result<f64> {
        if (self.hbar0 - self.theta0 * self.b0).abs() <= EPS * self.hbar0.abs().max(1.0) || self.hbar0 == 0.0 {
            return invalid("hbar0 - theta0*B0 != 0");
        }
        Ok(self.theta0 / (1.0 - self.theta0 * self.b0 / self.hbar0))
    }

    /// Radicand of the gauge slopes: hbar0^2 - 4 rho (rho - 1) e hbar0 theta_eff B_ext.
    pub fn gauge_discriminant(&self) -> Result<f64> {
        let th = self.theta_eff()?;
        Ok(self.hbar0 * self.hbar0 - 4.0 * self.rho * (self.rho - 1.0) * self.e * self.hbar0 * th * self.b_ext)
    }

    /// Hard constraints; each failure names the violated constraint.
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [(self.hbar0, "hbar0"), (self.theta0, "theta0"), (self.b0, "B0")] {
            if !v.is_finite() || v == 0.0 {
                return invalid(format!("{name} != 0"));
            }
        }
        for (v, name) in [(self.r, "r"), (self.s, "s"), (self.rho, "rho"), (self.e, "e"), (self.b_ext, "B_ext")] {
            if !v.is_finite() {
                return invalid(format!("{name} finite"));
            }
        }
        self.theta_eff()?;
        if self.hbar0 * self.b0 <= 0.0 {
            return invalid("hbar0*B0 > 0");
        }
        let r_excl = self.hbar0 / (self.theta0 * self.b0);
        if (self.r - r_excl).abs() <= EPS * r_excl.abs().max(1.0) {
            return invalid("r != hbar0/(theta0*B0)");
        }
        if self.gauge_discriminant()? < 0.0 {
            return invalid("gauge discriminant >= 0");
        }
        Ok(())
    }

    /// Constants (a, b, c, d) of the ground-state equation
    /// (a y + i b d_x + i c x + d d_y) psi = 0.
    pub fn ground_constants(&self) -> [f64; 4] {
        let (h, t, b0, r, s) = (self.hbar0, self.theta0, self.b0, self.r, self.s);
        let den = r * t * b0 - h;
        [
            (1.0 - r) * h * b0 / den,
            h * ((r + s - r * s) * t * b0 - h) / den,
            r * b0,
            h * (1.0 + r * (s - 1.0) * t * b0 / h),
        ]
    }

    /// Existence of the centered separable Gaussian annihilated by a^-:
    /// c/b > 0 and a/d < 0.
    pub fn gaussian_positive(&self) -> bool {
        let [a, b, c, d] = self.ground_constants();
        c / b > 0.0 && a / d < 0.0
    }
}

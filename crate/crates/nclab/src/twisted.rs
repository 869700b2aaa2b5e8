//! Twisted convolution algebra on R^4: product, involution, derivations,
//! the R^2-action, the Weyl unitaries of a presentation and the integrated
//! representation on a truncated Hermite basis.
//!
//! Functions are closures. Sums of separable terms (Gaussian packets, their
//! derivations and automorphic images) keep that structure, which turns the
//! twisted product into four 1D integrals per evaluation point.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::{
    c, displacement_1d, frame_betas, BasisTruncation, Frame, HermiteBasis, OperatorMatrix, QuadratureGrid,
    SmoothFunction2D, C64, I, ONE, ZERO,
};
use crate::darboux::M4;
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::report::{Check, Report};

pub type Factor = Arc<dyn Fn(f64) -> C64 + Send + Sync>;
type General = Arc<dyn Fn(&[f64; 4]) -> C64 + Send + Sync>;

/// coeff * prod_b factors[b](q_b)
#[derive(Clone)]
pub struct SeparableTerm {
    pub coeff: C64,
    pub factors: [Factor; 4],
}

impl SeparableTerm {
    fn eval(&self, q: &[f64; 4]) -> C64 {
        self.coeff * (0..4).fold(ONE, |acc, b| acc * (self.factors[b])(q[b]))
    }
}

#[derive(Clone)]
enum Repr {
    Separable(Vec<SeparableTerm>),
    Product(Arc<SeparableProduct>),
    General(General),
}

/// Twisted product of two separable sums, kept symbolic so that tensor-grid
/// tabulation can reuse per-axis tables.
struct SeparableProduct {
    ft: Vec<SeparableTerm>,
    gt: Vec<SeparableTerm>,
    tau: M4,
    xs: Vec<f64>,
    h: f64,
}

impl SeparableProduct {
    fn eval(&self, p: &[f64; 4]) -> C64 {
        let mut cv = [0.0; 4];
        for b in 0..4 {
            cv[b] = (0..4).map(|a| p[a] * self.tau[(a, b)]).sum();
        }
        let mut acc = ZERO;
        for tf in &self.ft {
            for tg in &self.gt {
                let mut prod = tf.coeff * tg.coeff;
                for b in 0..4 {
                    let (fb, gb) = (&tf.factors[b], &tg.factors[b]);
                    prod *= integrate_1d(&self.xs, self.h, |x| fb(x) * gb(p[b] - x) * C64::from_polar(1.0, PI * cv[b] * x));
                }
                acc += prod;
            }
        }
        acc
    }

    /// Values on the tensor grid ps^4 (last axis fastest). Axis b of the
    /// integrand depends on p_b and on the p_a with tau_ab != 0, so each axis
    /// is a table over at most three grid indices.
    fn tabulate(&self, ps: &[f64]) -> Vec<C64> {
        let n = ps.len();
        let mut out = vec![ZERO; n.pow(4)];
        let deps: Vec<Vec<usize>> = (0..4)
            .map(|b| {
                let mut d = vec![b];
                d.extend((0..4).filter(|&a| a != b && self.tau[(a, b)] != 0.0));
                d
            })
            .collect();
        for tf in &self.ft {
            for tg in &self.gt {
                let tables: Vec<Vec<C64>> = (0..4)
                    .map(|b| {
                        let d = &deps[b];
                        let fvals: Vec<C64> = self.xs.iter().map(|&x| (tf.factors[b])(x)).collect();
                        crate::par::map(n.pow(d.len() as u32), |mut idx| {
                            let mut ids = vec![0; d.len()];
                            for slot in ids.iter_mut().rev() {
                                *slot = idx % n;
                                idx /= n;
                            }
                            let pb = ps[ids[0]];
                            let cb: f64 = d.iter().zip(&ids).skip(1).map(|(&a, &i)| ps[i] * self.tau[(a, b)]).sum();
                            let gb = &tg.factors[b];
                            self.xs.iter().zip(&fvals).fold(ZERO, |acc, (&x, &fx)| {
                                acc + fx * gb(pb - x) * C64::from_polar(1.0, PI * cb * x)
                            }) * self.h
                        })
                    })
                    .collect();
                let coeff = tf.coeff * tg.coeff;
                for (flat, o) in out.iter_mut().enumerate() {
                    let i = [flat / (n * n * n), (flat / (n * n)) % n, (flat / n) % n, flat % n];
                    let mut v = coeff;
                    for b in 0..4 {
                        let idx = deps[b].iter().fold(0, |acc, &a| acc * n + i[a]);
                        v *= tables[b][idx];
                    }
                    *o += v;
                }
            }
        }
        out
    }
}

/// Function on R^4 with box metadata: negligible outside [-W, W]^4, resolved
/// by `grid_points_per_axis` tensor nodes.
#[derive(Clone)]
pub struct Function4D {
    repr: Repr,
    pub box_half_width: f64,
    pub grid_points_per_axis: usize,
}

impl std::fmt::Debug for Function4D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Function4D")
            .field("separable_terms", &self.separable_terms().map(|t| t.len()))
            .field("box_half_width", &self.box_half_width)
            .field("grid_points_per_axis", &self.grid_points_per_axis)
            .finish()
    }
}

/// Nodes -W + j 2W/(n-1), j = 0..n; the spacing is the weight (endpoint
/// values are negligible for box-decaying integrands).
pub fn box_nodes(w: f64, n: usize) -> (Vec<f64>, f64) {
    let n = n.max(2);
    let h = 2.0 * w / (n - 1) as f64;
    ((0..n).map(|j| -w + j as f64 * h).collect(), h)
}

/// Oversampling of the 1D integrals in separable twisted products and L1 norms.
pub const SEPARABLE_OVERSAMPLE: usize = 4;

impl Function4D {
    pub fn new<F>(box_half_width: f64, grid_points_per_axis: usize, f: F) -> Self
    where
        F: Fn(&[f64; 4]) -> C64 + Send + Sync + 'static,
    {
        Self { repr: Repr::General(Arc::new(f)), box_half_width, grid_points_per_axis }
    }

    pub fn separable(terms: Vec<SeparableTerm>, box_half_width: f64, grid_points_per_axis: usize) -> Self {
        Self { repr: Repr::Separable(terms), box_half_width, grid_points_per_axis }
    }

    /// amp * exp(-|q - center|^2 / (2 width^2) + i momentum.q)
    pub fn gaussian(center: [f64; 4], width: f64, momentum: [f64; 4], amp: C64) -> Self {
        let factors: [Factor; 4] = std::array::from_fn(|b| {
            let (m, k) = (center[b], momentum[b]);
            let s2 = 2.0 * width * width;
            Arc::new(move |x: f64| C64::new(-(x - m) * (x - m) / s2, k * x).exp()) as Factor
        });
        let reach = center.iter().fold(0.0f64, |a, x| a.max(x.abs())) + 5.0 * width;
        let kmax = momentum.iter().fold(0.0f64, |a, x| a.max(x.abs())) + 3.0 / width;
        let n = ((2.0 * reach * kmax / PI).ceil() as usize + 1) | 1;
        Self::separable(vec![SeparableTerm { coeff: amp, factors }], reach, n.max(9))
    }

    /// Unit-L1 Gaussian of width eps centred at 0 (approximate identity).
    pub fn approximate_delta(eps: f64) -> Self {
        let amp = 1.0 / (2.0 * PI * eps * eps).powi(2);
        Self::gaussian([0.0; 4], eps, [0.0; 4], c(amp))
    }

    pub fn separable_terms(&self) -> Option<&[SeparableTerm]> {
        match &self.repr {
            Repr::Separable(t) => Some(t),
            _ => None,
        }
    }

    pub fn eval(&self, q: &[f64; 4]) -> C64 {
        match &self.repr {
            Repr::Separable(terms) => terms.iter().fold(ZERO, |a, t| a + t.eval(q)),
            Repr::Product(p) => p.eval(q),
            Repr::General(f) => f(q),
        }
    }

    /// Values on the tensor grid xs^4, last axis fastest.
    pub fn tabulate(&self, xs: &[f64]) -> Vec<C64> {
        if let Repr::Product(p) = &self.repr {
            return p.tabulate(xs);
        }
        let n = xs.len();
        crate::par::map(n, |i| {
            let mut row = Vec::with_capacity(n * n * n);
            for &x2 in xs {
                for &x3 in xs {
                    for &x4 in xs {
                        row.push(self.eval(&[xs[i], x2, x3, x4]));
                    }
                }
            }
            row
        })
        .concat()
    }

    pub fn nodes(&self) -> (Vec<f64>, f64) {
        box_nodes(self.box_half_width, self.grid_points_per_axis)
    }

    fn general(&self) -> General {
        let me = self.clone();
        Arc::new(move |q| me.eval(q))
    }

    /// Termwise map of separable data; general closures are wrapped.
    fn map_terms(
        &self,
        sep: impl Fn(&SeparableTerm) -> Vec<SeparableTerm>,
        gen: impl Fn(General) -> General,
    ) -> Self {
        let repr = match &self.repr {
            Repr::Separable(terms) => Repr::Separable(terms.iter().flat_map(&sep).collect()),
            Repr::General(f) => Repr::General(gen(f.clone())),
            Repr::Product(_) => Repr::General(gen(self.general())),
        };
        Self { repr, ..*self }
    }

    pub fn scale(&self, s: C64) -> Self {
        self.map_terms(
            |t| vec![SeparableTerm { coeff: t.coeff * s, factors: t.factors.clone() }],
            |f| Arc::new(move |q| f(q) * s),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        let w = self.box_half_width.max(other.box_half_width);
        let n = self.grid_points_per_axis.max(other.grid_points_per_axis);
        match (&self.repr, &other.repr) {
            (Repr::Separable(a), Repr::Separable(b)) => {
                Self::separable(a.iter().chain(b.iter()).cloned().collect(), w, n)
            }
            _ => {
                let (f, g) = (self.general(), other.general());
                Self::new(w, n, move |q| f(q) + g(q))
            }
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-ONE))
    }

    /// sum over tensor nodes of |f| h^4
    pub fn l1_norm(&self) -> f64 {
        if let Some([t]) = self.separable_terms() {
            let (xs, h) = box_nodes(self.box_half_width, SEPARABLE_OVERSAMPLE * self.grid_points_per_axis + 1);
            return t.coeff.norm()
                * (0..4).map(|b| xs.iter().map(|&x| (t.factors[b])(x).norm()).sum::<f64>() * h).product::<f64>();
        }
        let (xs, h) = self.nodes();
        self.tabulate(&xs).iter().map(|v| v.norm()).sum::<f64>() * h.powi(4)
    }

    /// max |f| over the tensor nodes
    pub fn sup_norm(&self) -> f64 {
        let (xs, _) = self.nodes();
        self.tabulate(&xs).iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// Skew cocycle matrix tau of a sector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TwistedStructure {
    pub tau: M4,
    pub params: ParameterSet,
}

impl TwistedStructure {
    pub fn new(params: &ParameterSet) -> Self {
        let (h, t, b0) = (params.hbar0, params.theta0, params.b0);
        let mut tau = M4::zeros();
        let mut set = |i: usize, j: usize, v: f64| {
            tau[(i, j)] = v;
            tau[(j, i)] = -v;
        };
        set(0, 1, b0 / (2.0 * PI * h));
        set(0, 2, -1.0 / (2.0 * PI * h));
        set(1, 3, -1.0 / (2.0 * PI * h));
        set(2, 3, t / (2.0 * PI * h * h));
        Self { tau, params: *params }
    }

    pub fn zero(params: &ParameterSet) -> Self {
        Self { tau: M4::zeros(), params: *params }
    }

    /// p^T tau q
    pub fn form(&self, p: &[f64; 4], q: &[f64; 4]) -> f64 {
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                s += p[a] * self.tau[(a, b)] * q[b];
            }
        }
        s
    }

    /// sum_{n<m} p_n tau_nm q_m
    pub fn upper_form(&self, p: &[f64; 4], q: &[f64; 4]) -> f64 {
        let mut s = 0.0;
        for n in 0..4 {
            for m in (n + 1)..4 {
                s += p[n] * self.tau[(n, m)] * q[m];
            }
        }
        s
    }
}

/// Antisymmetric local exponents (xi, xi', xi'') with
/// p^T tau q = xi/(pi hbar) - theta xi'/(pi hbar^2) - B xi''/(pi hbar).
pub fn local_exponents(p: &[f64; 4], q: &[f64; 4]) -> (f64, f64, f64) {
    (
        0.5 * (q[0] * p[2] + q[1] * p[3] - q[2] * p[0] - q[3] * p[1]),
        0.5 * (q[2] * p[3] - p[2] * q[3]),
        0.5 * (q[0] * p[1] - p[0] * q[1]),
    )
}

fn integrate_1d(xs: &[f64], h: f64, f: impl Fn(f64) -> C64) -> C64 {
    xs.iter().fold(ZERO, |a, &x| a + f(x)) * h
}

/// (f * g)(p) = int f(q) g(p - q) e^{i pi p^T tau q} dq.
///
/// Separable inputs use 1D integrals (the phase is e^{i pi (tau^T p).q}); a
/// half-resolution rerun at one probe point is the self-estimate. General
/// inputs use the 4D tensor rule on the box of `f`.
pub fn twisted_product(f: &Function4D, g: &Function4D, ts: &TwistedStructure) -> Result<Function4D> {
    let w = f.box_half_width.hypot(g.box_half_width);
    let (_, hf) = f.nodes();
    let (_, hg) = g.nodes();
    let h = hf.min(hg);
    let n = ((2.0 * w / h).ceil() as usize + 1) | 1;
    let tau = ts.tau;
    match (f.separable_terms(), g.separable_terms()) {
        (Some(ft), Some(gt)) => {
            let fine_n = SEPARABLE_OVERSAMPLE * f.grid_points_per_axis.max(g.grid_points_per_axis) + 1;
            let with_nodes = |nodes: usize| {
                let (xs, h) = box_nodes(f.box_half_width, nodes);
                SeparableProduct { ft: ft.to_vec(), gt: gt.to_vec(), tau, xs, h }
            };
            let prod = with_nodes(fine_n);
            let probe = [0.3, -0.2, 0.1, 0.25];
            let fine = prod.eval(&probe);
            let coarse = with_nodes(fine_n / 2 + 1).eval(&probe);
            // the probe may sit in the tail; scale by the value at the origin too
            let scale = fine.norm().max(prod.eval(&[0.0; 4]).norm()).max(1e-12);
            if (fine - coarse).norm() > 1e-8 * scale {
                return Err(Error::Resolution(format!(
                    "separable twisted product self-estimate {:.3e}",
                    (fine - coarse).norm()
                )));
            }
            Ok(Function4D { repr: Repr::Product(Arc::new(prod)), box_half_width: w, grid_points_per_axis: n })
        }
        _ => {
            let gg = g.general();
            let (xs, hq) = f.nodes();
            if xs.len().pow(4) > 60usize.pow(4) {
                return Err(Error::Scale(format!("4D twisted product with {} nodes per point", xs.len().pow(4))));
            }
            // f is tabulated once; nodes where it is below 1e-17 of its peak are dropped
            let table = f.tabulate(&xs);
            let peak = table.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let nx = xs.len();
            let support: Vec<([f64; 4], C64)> = table
                .iter()
                .enumerate()
                .filter(|(_, v)| v.norm() > 1e-17 * peak)
                .map(|(flat, &v)| {
                    let q = [xs[flat / (nx * nx * nx)], xs[(flat / (nx * nx)) % nx], xs[(flat / nx) % nx], xs[flat % nx]];
                    (q, v)
                })
                .collect();
            let ts = *ts;
            let w4 = hq.powi(4);
            Ok(Function4D::new(w, n, move |p| {
                support.iter().fold(ZERO, |acc, (q, fq)| {
                    let pq = [p[0] - q[0], p[1] - q[1], p[2] - q[2], p[3] - q[3]];
                    acc + fq * gg(&pq) * C64::from_polar(1.0, PI * ts.form(p, q))
                }) * w4
            }))
        }
    }
}

/// f*(q) = conj(f(-q))
pub fn involution4(f: &Function4D) -> Function4D {
    f.map_terms(
        |t| {
            let factors: [Factor; 4] = std::array::from_fn(|b| {
                let fb = t.factors[b].clone();
                Arc::new(move |x: f64| fb(-x).conj()) as Factor
            });
            vec![SeparableTerm { coeff: t.coeff.conj(), factors }]
        },
        |g| Arc::new(move |q| g(&[-q[0], -q[1], -q[2], -q[3]]).conj()),
    )
}

/// q#_1 = B0 q2 - q3, q#_2 = -B0 q1 - q4
pub fn q_sharp(q: &[f64; 4], b0: f64) -> [f64; 2] {
    [b0 * q[1] - q[2], -b0 * q[0] - q[3]]
}

/// (d_j f)(q) = -i q#_j f(q), j in {1, 2}
pub fn derivation(f: &Function4D, j: usize, params: &ParameterSet) -> Function4D {
    assert!(j == 1 || j == 2, "derivation index is 1 or 2");
    let b0 = params.b0;
    // q#_j = sum_b w_b q_b
    let w: [f64; 4] = if j == 1 { [0.0, b0, -1.0, 0.0] } else { [-b0, 0.0, 0.0, -1.0] };
    f.map_terms(
        |t| {
            (0..4)
                .filter(|&b| w[b] != 0.0)
                .map(|b| {
                    let mut factors = t.factors.clone();
                    let fb = t.factors[b].clone();
                    factors[b] = Arc::new(move |x: f64| fb(x) * x);
                    SeparableTerm { coeff: t.coeff * (-I * w[b]), factors }
                })
                .collect()
        },
        |g| Arc::new(move |q| g(q) * (-I * (0..4).map(|b| w[b] * q[b]).sum::<f64>())),
    )
}

/// alpha_k(f)(q) = e^{-i k.q#} f(q)
pub fn automorphism_alpha(k: [f64; 2], f: &Function4D, params: &ParameterSet) -> Function4D {
    let b0 = params.b0;
    // k.q# = sum_b w_b q_b
    let w = [-k[1] * b0, k[0] * b0, -k[0], -k[1]];
    let kmax = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (_, h) = f.nodes();
    let n = f.grid_points_per_axis.max(((2.0 * f.box_half_width * (PI / h + kmax) / PI).ceil() as usize + 1) | 1);
    let mut out = f.map_terms(
        |t| {
            let factors: [Factor; 4] = std::array::from_fn(|b| {
                let fb = t.factors[b].clone();
                let wb = w[b];
                Arc::new(move |x: f64| fb(x) * C64::from_polar(1.0, -wb * x)) as Factor
            });
            vec![SeparableTerm { coeff: t.coeff, factors }]
        },
        |g| Arc::new(move |q| g(q) * C64::from_polar(1.0, -(0..4).map(|b| w[b] * q[b]).sum::<f64>())),
    );
    out.grid_points_per_axis = n;
    out
}

/// Linear data of the Weyl unitaries: hbar G(q) = q1 Pi_x + q2 Pi_y + q3 X + q4 Y
/// with Pi_x = ax y + bx p_x, Pi_y = cy x + dy p_y, X = x - s theta p_y / hbar,
/// Y = y + (1 - s) theta p_x / hbar and p = -i hbar d.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeylData {
    pub hbar: f64,
    pub ax: f64,
    pub bx: f64,
    pub cy: f64,
    pub dy: f64,
    pub xs: f64,
    pub ys: f64,
}

impl WeylData {
    pub fn new(p: &ParameterSet) -> Self {
        let (h, t, b0, r, s) = (p.hbar0, p.theta0, p.b0, p.r, p.s);
        Self {
            hbar: h,
            ax: (1.0 - r) * h * b0 / (h - r * t * b0),
            bx: ((r + s - r * s) * t * b0 - h) / (r * t * b0 - h),
            cy: -r * b0,
            dy: 1.0 + r * (s - 1.0) * t * b0 / h,
            xs: -s * t / h,
            ys: (1.0 - s) * t / h,
        }
    }

    /// exp(i G(q)) = exp(i u.z + v.grad)
    pub fn uv(&self, q: &[f64; 4]) -> ([f64; 2], [f64; 2]) {
        let h = self.hbar;
        let u = [(q[1] * self.cy + q[2]) / h, (q[0] * self.ax + q[3]) / h];
        // coefficient of p_x, p_y in hbar G, times hbar / hbar
        let w = [q[0] * self.bx + q[3] * self.ys, q[1] * self.dy + q[2] * self.xs];
        (u, [w[0], w[1]])
    }

    /// Single-axis unitary U_i(q) = exp(i q A_i / hbar), A = (Pi_x, Pi_y, X, Y).
    pub fn axis_uv(&self, axis: usize, q: f64) -> ([f64; 2], [f64; 2]) {
        let mut k = [0.0; 4];
        k[axis] = q;
        self.uv(&k)
    }
}

/// (exp(i u.z + v.grad) f)(z) = e^{i u.z + i u.v/2} f(z + v)
pub fn displace_function(u: [f64; 2], v: [f64; 2], f: &SmoothFunction2D) -> SmoothFunction2D {
    let g = f.clone();
    let ph0 = 0.5 * (u[0] * v[0] + u[1] * v[1]);
    let hw = f.half_width + v[0].abs().max(v[1].abs());
    let kmax = PI / f.spacing + u[0].abs().max(u[1].abs());
    SmoothFunction2D::new(hw, PI / kmax, move |x, y| {
        C64::from_polar(1.0, u[0] * x + u[1] * y + ph0) * g.eval(x + v[0], y + v[1])
    })
}

/// U_i(q) f for one Weyl generator (axis 0..4 = Pi_x, Pi_y, X, Y).
pub fn weyl_axis_apply(axis: usize, q: f64, f: &SmoothFunction2D, params: &ParameterSet) -> SmoothFunction2D {
    let (u, v) = WeylData::new(params).axis_uv(axis, q);
    displace_function(u, v, f)
}

/// U(q) = U_1(q1) U_2(q2) U_3(q3) U_4(q4) applied to f.
pub fn weyl_product_apply(q: &[f64; 4], f: &SmoothFunction2D, params: &ParameterSet) -> SmoothFunction2D {
    (0..4).rev().fold(f.clone(), |g, a| weyl_axis_apply(a, q[a], &g, params))
}

/// U^{r,s}(q) f = e^{i pi sum_{n<m} q_n tau_nm q_m} U(q) f, evaluated in the
/// single-displacement closed form.
pub fn projective_rep_apply(q: &[f64; 4], f: &SmoothFunction2D, params: &ParameterSet) -> SmoothFunction2D {
    let (u, v) = WeylData::new(params).uv(q);
    displace_function(u, v, f)
}

/// Sample points (7 x 7 over the inner half of the probe box).
fn probe_points(f: &SmoothFunction2D) -> Vec<(f64, f64)> {
    let w = 0.5 * f.half_width;
    let mut pts = Vec::new();
    for i in 0..7 {
        for j in 0..7 {
            pts.push((-w + i as f64 * w / 3.0, -w + j as f64 * w / 3.0));
        }
    }
    pts
}

/// Measured phase ratio of U_i U_j against U_j U_i on a probe versus
/// e^{2 pi i tau_ji q_i q_j}.
pub fn weyl_relation_check(
    i: usize,
    j: usize,
    qi: f64,
    qj: f64,
    params: &ParameterSet,
    probe: &SmoothFunction2D,
) -> Result<Report> {
    if i == j || i > 4 || j > 4 || i == 0 || j == 0 {
        return Err(Error::Range(format!("Weyl pair ({i},{j}) must be distinct indices in 1..=4")));
    }
    let (a, b) = (i - 1, j - 1);
    let ij = weyl_axis_apply(a, qi, &weyl_axis_apply(b, qj, probe, params), params);
    let ji = weyl_axis_apply(b, qj, &weyl_axis_apply(a, qi, probe, params), params);
    let tau = TwistedStructure::new(params).tau;
    let analytic = C64::from_polar(1.0, 2.0 * PI * tau[(b, a)] * qi * qj);
    let peak = probe_points(probe).iter().map(|&(x, y)| ji.eval(x, y).norm()).fold(0.0, f64::max);
    let mut dev = 0.0f64;
    let mut used = 0;
    let mut sum = ZERO;
    for (x, y) in probe_points(probe) {
        let den = ji.eval(x, y);
        if den.norm() > 1e-8 * peak && den.norm() > 1e-300 {
            let ratio = ij.eval(x, y) / den;
            dev = dev.max((ratio - analytic).norm());
            sum += ratio;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::IndeterminatePhase);
    }
    let measured = sum / used as f64;
    let mut rep = Report::new("weyl_relation");
    rep.put("pair", [i, j])
        .put("q", [qi, qj])
        .put("measured_phase", measured.arg())
        .put("analytic_phase", analytic.arg())
        .put("points_used", used)
        .put_tol("max_ratio_deviation", dev, 1e-10);
    rep.check(Check::at_most(format!("weyl_{i}{j}_phase"), dev, 1e-10));
    Ok(rep)
}

/// Default cap on 4D nodes for the integrated representation.
pub const DEFAULT_NODE_CAP: usize = 21 * 21 * 21 * 21;

/// Matrix <phi_a, rho(f) phi_b>, a over `rows`, b over `cols`, of
/// rho(f) = int f(-k) U^{r,s}(k) d^4k; entries of U(k) are exact displacement
/// matrix elements, the k-integral is the tensor rule on the box of f.
pub fn integrated_rep_rect(
    f: &Function4D,
    params: &ParameterSet,
    frame: Frame,
    rows: BasisTruncation,
    cols: BasisTruncation,
    node_cap: usize,
) -> Result<DMatrix<C64>> {
    params.validate()?;
    let (ks, h) = f.nodes();
    let n = ks.len();
    let nodes = n.pow(4);
    let (rp, cp) = (rows.pairs(), cols.pairs());
    if nodes > node_cap {
        return Err(Error::Scale(format!(
            "integrated representation needs {nodes} nodes x {} entries (cap {node_cap} nodes)",
            rp.len() * cp.len()
        )));
    }
    let wd = WeylData::new(params);
    let size = rows.level().max(cols.level()) + 1;
    let w4 = h.powi(4);
    // nodes are symmetric, so f(-k) at node i is the table entry at n-1-i
    let table = f.tabulate(&ks);
    let last = n.pow(4) - 1;
    // one chunk per first-axis node, summed in order
    let parts = crate::par::map(n, |i0| {
        let mut acc = DMatrix::<C64>::zeros(rp.len(), cp.len());
        for (i1, &k1) in ks.iter().enumerate() {
            for (i2, &k2) in ks.iter().enumerate() {
                for (i3, &k3) in ks.iter().enumerate() {
                    let k = [ks[i0], k1, k2, k3];
                    let fv = table[last - (((i0 * n + i1) * n + i2) * n + i3)];
                    if fv.norm() < 1e-300 {
                        continue;
                    }
                    let (u, v) = wd.uv(&k);
                    let (b1, b2) = frame_betas(frame, u, v);
                    let d1 = displacement_1d(b1, size);
                    let d2 = displacement_1d(b2, size);
                    for (cj, &(p, q)) in cp.iter().enumerate() {
                        for (ri, &(m, nn)) in rp.iter().enumerate() {
                            acc[(ri, cj)] += fv * d1[(m, p)] * d2[(nn, q)];
                        }
                    }
                }
            }
        }
        acc
    });
    let mut total = DMatrix::<C64>::zeros(rp.len(), cp.len());
    for p in parts {
        total += p;
    }
    Ok(total * c(w4))
}

pub fn integrated_rep(f: &Function4D, params: &ParameterSet, basis: HermiteBasis) -> Result<OperatorMatrix> {
    let m = integrated_rep_rect(f, params, basis.frame, basis.trunc, basis.trunc, DEFAULT_NODE_CAP)?;
    Ok(OperatorMatrix::scalar(m, basis))
}

/// U_k = exp(-i(k1 Pi_x + k2 Pi_y)) on (rows x cols) of a frame, exact elements.
pub fn covariance_unitary(k: [f64; 2], params: &ParameterSet, frame: Frame, rows: BasisTruncation, cols: BasisTruncation) -> DMatrix<C64> {
    let wd = WeylData::new(params);
    // -i(k1 Pi_x + k2 Pi_y) = -i(k1 ax y + k2 cy x) - hbar (k1 bx d_x + k2 dy d_y)
    let u = [-k[1] * wd.cy, -k[0] * wd.ax];
    let v = [-wd.hbar * k[0] * wd.bx, -wd.hbar * k[1] * wd.dy];
    let (b1, b2) = frame_betas(frame, u, v);
    let size = rows.level().max(cols.level()) + 1;
    let d1 = displacement_1d(b1, size);
    let d2 = displacement_1d(b2, size);
    let (rp, cp) = (rows.pairs(), cols.pairs());
    DMatrix::from_fn(rp.len(), cp.len(), |i, j| d1[(rp[i].0, cp[j].0)] * d2[(rp[i].1, cp[j].1)])
}

/// Quadrature check that U^{r,s}(q) preserves the L2 norm of a probe.
pub fn unitarity_defect(q: &[f64; 4], f: &SmoothFunction2D, params: &ParameterSet) -> Result<f64> {
    let g = projective_rep_apply(q, f, params);
    let w = g.half_width.max(f.half_width);
    let n = ((2.0 * w / f.spacing.min(g.spacing)).ceil() as usize).max(128);
    let grid = QuadratureGrid::trapezoid(w, n.next_power_of_two());
    let a = crate::basis::inner_product(f, f, &grid)?;
    let b = crate::basis::inner_product(&g, &g, &grid)?;
    Ok((a - b).norm())
}

/// Sizes of the twisted-algebra identity suite.
#[derive(Clone, Debug, PartialEq, serde::Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwistedSuiteConfig {
    pub pairs: usize,
    pub sample_points: usize,
    pub rep_level: usize,
    pub rep_extra_levels: usize,
    pub rep_width: f64,
    pub node_cap: usize,
    pub covariance_k: [f64; 2],
}

impl Default for TwistedSuiteConfig {
    fn default() -> Self {
        Self {
            pairs: 20,
            sample_points: 4,
            rep_level: 4,
            rep_extra_levels: 8,
            rep_width: 0.4,
            node_cap: DEFAULT_NODE_CAP,
            covariance_k: [0.3, -0.2],
        }
    }
}

pub fn random_packet<R: rand::Rng>(rng: &mut R, width: (f64, f64)) -> Function4D {
    let center: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.4..0.4));
    let momentum: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-0.5..0.5));
    let w = rng.gen_range(width.0..width.1);
    let amp = C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(-PI..PI));
    Function4D::gaussian(center, w, momentum, amp)
}

fn random_point<R: rand::Rng>(rng: &mut R, r: f64) -> [f64; 4] {
    std::array::from_fn(|_| rng.gen_range(-r..r))
}

/// Product, involution, derivation, associativity, exponent and
/// representation identities on seeded random Gaussian packets.
pub fn twisted_suite<R: rand::Rng>(params: &ParameterSet, cfg: &TwistedSuiteConfig, rng: &mut R) -> Result<Report> {
    params.validate()?;
    let ts = TwistedStructure::new(params);
    let mut rep = Report::new("twisted_suite");

    let (mut sub_ratio, mut inv_dev, mut leib_dev) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cfg.pairs {
        let f = random_packet(rng, (0.5, 0.9));
        let g = random_packet(rng, (0.5, 0.9));
        let fg = twisted_product(&f, &g, &ts)?;
        sub_ratio = sub_ratio.max(fg.l1_norm() / (f.l1_norm() * g.l1_norm()));
        let gsfs = twisted_product(&involution4(&g), &involution4(&f), &ts)?;
        let fgs = involution4(&fg);
        let d_fg = derivation(&fg, 1, params);
        let rhs = twisted_product(&derivation(&f, 1, params), &g, &ts)?
            .add(&twisted_product(&f, &derivation(&g, 1, params), &ts)?);
        for _ in 0..cfg.sample_points {
            let q = random_point(rng, 1.0);
            let scale = fg.eval(&q).norm().max(1e-3 * f.eval(&[0.0; 4]).norm() * g.l1_norm());
            inv_dev = inv_dev.max((gsfs.eval(&q) - fgs.eval(&q)).norm() / scale);
            leib_dev = leib_dev.max((d_fg.eval(&q) - rhs.eval(&q)).norm() / scale);
        }
    }
    rep.put_tol("l1_ratio_max", sub_ratio, 1.0 + 1e-6)
        .put_tol("involution_rel_dev", inv_dev, 1e-6)
        .put_tol("leibniz_rel_dev", leib_dev, 1e-5);
    rep.check(Check::at_most("l1_submultiplicative", sub_ratio, 1.0 + 1e-6))
        .check(Check::at_most("product_involution", inv_dev, 1e-6))
        .check(Check::at_most("leibniz", leib_dev, 1e-5));

    // associativity on one triple, quadrature limited
    let (f, g, h) = (
        random_packet(rng, (0.6, 0.8)),
        random_packet(rng, (0.6, 0.8)),
        random_packet(rng, (0.6, 0.8)),
    );
    let left = twisted_product(&twisted_product(&f, &g, &ts)?, &h, &ts)?;
    let right = twisted_product(&f, &twisted_product(&g, &h, &ts)?, &ts)?;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let q = random_point(rng, 0.8);
        let r = right.eval(&q);
        num = num.max((left.eval(&q) - r).norm());
        den = den.max(r.norm());
    }
    rep.put_tol("associativity_rel", num / den, 1e-3)
        .check(Check::at_most("associativity", num / den, 1e-3));

    // exact identities on random pairs
    let (mut xi_dev, mut sharp_dev) = (0.0f64, 0.0f64);
    for _ in 0..cfg.pairs {
        let (p, q) = (random_point(rng, 3.0), random_point(rng, 3.0));
        let (xi, xi1, xi2) = local_exponents(&p, &q);
        let (hb, th, b0) = (params.hbar0, params.theta0, params.b0);
        let rhs = xi / (PI * hb) - th * xi1 / (PI * hb * hb) - b0 * xi2 / (PI * hb);
        xi_dev = xi_dev.max((ts.form(&p, &q) - rhs).abs());
        let neg = q_sharp(&[-q[0], -q[1], -q[2], -q[3]], b0);
        let pos = q_sharp(&q, b0);
        sharp_dev = sharp_dev.max((neg[0] + pos[0]).abs().max((neg[1] + pos[1]).abs()));
    }
    rep.put("exponent_identity_dev", xi_dev).put("q_sharp_odd_dev", sharp_dev);
    rep.check(Check::at_most("exponent_identity", xi_dev, 1e-12))
        .check(Check::at_most("q_sharp_odd", sharp_dev, 0.0));

    let probe = SmoothFunction2D::gaussian([0.2, -0.1], 1.0, [0.3, 0.0], ONE);
    for i in 1..=4 {
        for j in (i + 1)..=4 {
            let (qi, qj) = (rng.gen_range(0.3..1.3), rng.gen_range(0.3..1.3));
            rep.absorb(&format!("weyl_{i}{j}"), weyl_relation_check(i, j, qi, qj, params, &probe)?);
        }
    }

    rep.absorb("representation", representation_checks(params, cfg, rng)?);
    Ok(rep)
}

/// Homomorphism, star and covariance of the integrated representation at
/// desk scale. Products pass through `rep_extra_levels` more levels.
pub fn representation_checks<R: rand::Rng>(
    params: &ParameterSet,
    cfg: &TwistedSuiteConfig,
    rng: &mut R,
) -> Result<Report> {
    let ts = TwistedStructure::new(params);
    let w = cfg.rep_width;
    let f = random_packet(rng, (w, w * 1.001));
    let g = random_packet(rng, (w, w * 1.001));
    let fr = Frame::unit();
    let row = BasisTruncation::new(cfg.rep_level);
    let mid = BasisTruncation::new(cfg.rep_level + cfg.rep_extra_levels);
    let rho = |h: &Function4D, a, b| integrated_rep_rect(h, params, fr, a, b, cfg.node_cap);
    let fg = twisted_product(&f, &g, &ts)?;
    let lhs = rho(&fg, row, row)?;
    let rhs = rho(&f, row, mid)? * rho(&g, mid, row)?;
    let hom = (&lhs - &rhs).norm() / rhs.norm();
    let rf = rho(&f, row, row)?;
    let star = (rho(&involution4(&f), row, row)? - rf.adjoint()).norm();
    let k = cfg.covariance_k;
    let ucov = covariance_unitary(k, params, fr, row, mid)
        * rho(&f, mid, mid)?
        * covariance_unitary([-k[0], -k[1]], params, fr, mid, row);
    let cov = (ucov - rho(&automorphism_alpha(k, &f, params), row, row)?).norm();
    let mut rep = Report::new("integrated_representation");
    rep.put("scalar_dim", row.scalar_dim())
        .put("nodes_per_axis", fg.grid_points_per_axis)
        .put_tol("homomorphism_rel", hom, 1e-2)
        .put_tol("star_dev", star, 1e-6)
        .put_tol("covariance_dev", cov, 1e-2);
    rep.check(Check::at_most("homomorphism", hom, 1e-2))
        .check(Check::at_most("star", star, 1e-6))
        .check(Check::at_most("covariance", cov, 1e-2));
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon() -> ParameterSet {
        ParameterSet::canonical()
    }

    #[test]
    fn tau_entries_and_exponents() {
        let ts = TwistedStructure::new(&canon());
        assert_eq!(ts.tau, -ts.tau.transpose());
        assert!((ts.tau[(2, 3)] - 0.5 / (2.0 * PI)).abs() < 1e-16);
        let p = [0.3, -1.2, 0.7, 2.0];
        let q = [-0.4, 0.9, 1.1, -0.6];
        let (xi, xi1, xi2) = local_exponents(&p, &q);
        let rhs = xi / PI - 0.5 * xi1 / PI - xi2 / PI;
        assert!((ts.form(&p, &q) - rhs).abs() < 1e-14);
    }

    #[test]
    fn involution_examples() {
        let f = Function4D::new(4.0, 9, |q| {
            C64::new(q[0], q[1]) * (-(q.iter().map(|x| x * x).sum::<f64>())).exp()
        });
        let fs = involution4(&f);
        assert!((fs.eval(&[1.0, 0.0, 0.0, 0.0]) - c(-(-1.0f64).exp())).norm() < 1e-15);
        let back = involution4(&fs);
        let q = [0.2, -0.3, 0.5, 0.1];
        assert!((back.eval(&q) - f.eval(&q)).norm() < 1e-15);
        let g = Function4D::gaussian([0.0; 4], 1.0, [0.0; 4], ONE);
        assert!((involution4(&g).eval(&q) - g.eval(&q)).norm() < 1e-15);
    }

    #[test]
    fn derivation_values() {
        let f = Function4D::gaussian([0.0, 1.0, 0.0, 0.0], 0.5, [0.0; 4], c(2.0));
        let d1 = derivation(&f, 1, &canon());
        assert!((d1.eval(&[0.0, 1.0, 0.0, 0.0]) - C64::new(0.0, -2.0)).norm() < 1e-14);
        let q = [0.3, 0.8, -0.2, 0.4];
        let a = derivation(&derivation(&f, 1, &canon()), 2, &canon()).eval(&q);
        let b = derivation(&derivation(&f, 2, &canon()), 1, &canon()).eval(&q);
        assert!((a - b).norm() < 1e-15);
    }

    #[test]
    fn untwisted_product_is_convolution() {
        let p = canon();
        let f = Function4D::gaussian([0.0; 4], 1.0, [0.0; 4], ONE);
        let fg = twisted_product(&f, &f, &TwistedStructure::zero(&p)).unwrap();
        // (pi)^{2} e^{-|p|^2/4} in 4D: each axis sqrt(pi) e^{-p^2/4}
        let q = [0.5, -0.3, 1.0, 0.2];
        let want = PI * PI * (-(q.iter().map(|x| x * x).sum::<f64>()) / 4.0).exp();
        assert!((fg.eval(&q) - c(want)).norm() < 1e-6);
    }

    #[test]
    fn general_path_matches_separable_path() {
        let p = canon();
        let ts = TwistedStructure::new(&p);
        let f = Function4D::gaussian([0.2, 0.0, -0.1, 0.0], 0.6, [0.3, 0.0, 0.0, -0.2], ONE);
        let g = Function4D::gaussian([0.0, 0.1, 0.0, 0.0], 0.7, [0.0; 4], ONE);
        let sep = twisted_product(&f, &g, &ts).unwrap();
        let fgen = Function4D::new(f.box_half_width, 25, {
            let f = f.clone();
            move |q| f.eval(q)
        });
        let gen = twisted_product(&fgen, &g, &ts).unwrap();
        let q = [0.1, 0.2, -0.3, 0.0];
        assert!((sep.eval(&q) - gen.eval(&q)).norm() < 1e-6 * sep.eval(&q).norm());
    }

    #[test]
    fn automorphism_is_phase() {
        let f = Function4D::gaussian([0.1; 4], 0.8, [0.0; 4], ONE);
        let a = automorphism_alpha([0.0, 0.0], &f, &canon());
        let q = [0.3, -0.1, 0.2, 0.6];
        assert_eq!(a.eval(&q), f.eval(&q));
        let a = automorphism_alpha([0.4, -0.3], &f, &canon());
        assert!((a.eval(&q).norm() - f.eval(&q).norm()).abs() < 1e-15);
        let qs = q_sharp(&q, 1.0);
        let want = f.eval(&q) * C64::from_polar(1.0, -(0.4 * qs[0] - 0.3 * qs[1]));
        assert!((a.eval(&q) - want).norm() < 1e-15);
    }

    #[test]
    fn weyl_pairs() {
        let p = canon();
        let probe = SmoothFunction2D::gaussian([0.2, -0.1], 1.0, [0.3, 0.0], ONE);
        let r = weyl_relation_check(1, 2, 1.0, 1.0, &p, &probe).unwrap();
        assert!(r.passed());
        assert!((r.get_f64("analytic_phase").unwrap() + 1.0).abs() < 1e-12);
        let r = weyl_relation_check(3, 4, 1.0, 1.0, &p, &probe).unwrap();
        assert!((r.get_f64("analytic_phase").unwrap() + 0.5).abs() < 1e-12);
        let r = weyl_relation_check(1, 4, 0.7, 1.3, &p, &probe).unwrap();
        assert!(r.passed() && r.get_f64("analytic_phase").unwrap().abs() < 1e-15);
        let zero = SmoothFunction2D::new(3.0, 0.1, |_, _| ZERO);
        assert_eq!(weyl_relation_check(1, 3, 1.0, 1.0, &p, &zero).unwrap_err(), Error::IndeterminatePhase);
    }

    #[test]
    fn projective_rep_phases() {
        let p = canon().with_rs(1.2, 0.8);
        let f = SmoothFunction2D::gaussian([0.3, -0.2], 0.9, [0.0, 0.4], ONE);
        let ts = TwistedStructure::new(&p);
        let q = [0.4, -0.7, 0.3, 0.9];
        let q2 = [-0.5, 0.2, 0.6, -0.1];
        let sym = projective_rep_apply(&q, &f, &p);
        let prod = weyl_product_apply(&q, &f, &p);
        let ph = C64::from_polar(1.0, PI * ts.upper_form(&q, &q));
        let lhs = weyl_product_apply(&q, &weyl_product_apply(&q2, &f, &p), &p);
        let sum = [q[0] + q2[0], q[1] + q2[1], q[2] + q2[2], q[3] + q2[3]];
        let rhs = weyl_product_apply(&sum, &f, &p);
        let cyc = C64::from_polar(1.0, 2.0 * PI * ts.upper_form(&q2, &q));
        for (x, y) in [(0.1, 0.2), (-0.5, 0.3), (0.7, -0.6)] {
            assert!((sym.eval(x, y) - ph * prod.eval(x, y)).norm() < 1e-12);
            assert!((lhs.eval(x, y) - cyc * rhs.eval(x, y)).norm() < 1e-12);
        }
        let id = projective_rep_apply(&[0.0; 4], &f, &p);
        assert_eq!(id.eval(0.3, 0.1), f.eval(0.3, 0.1));
        assert!(unitarity_defect(&q, &f, &p).unwrap() < 1e-10);
    }

    #[test]
    fn rep_of_delta_is_identity() {
        let p = canon();
        let f = Function4D::approximate_delta(0.02);
        let m = integrated_rep(&f, &p, HermiteBasis::unit(3)).unwrap();
        let id = DMatrix::<C64>::identity(10, 10);
        assert!((m.entries - id).norm() < 5e-2);
    }

    #[test]
    fn rep_matrix_elements_match_quadrature() {
        // <h_a, U(k) h_b> from displacement vs 2D quadrature
        let p = canon();
        let basis = HermiteBasis::unit(3);
        let k = [0.3, -0.4, 0.2, 0.5];
        let wd = WeylData::new(&p);
        let (u, v) = wd.uv(&k);
        let d = crate::basis::displacement_2d(basis, u, v);
        let grid = QuadratureGrid::trapezoid(10.0, 256);
        for (a, b) in [(0, 0), (2, 1), (4, 7)] {
            let (m, n) = basis.trunc.pair_of(a);
            let (pp, qq) = basis.trunc.pair_of(b);
            let hb = crate::basis::basis_function(basis, pp, qq);
            let ha = crate::basis::basis_function(basis, m, n);
            let uh = projective_rep_apply(&k, &hb, &p);
            let q = crate::basis::inner_product(&ha, &uh, &grid).unwrap();
            assert!((q - d.entries[(a, b)]).norm() < 1e-10);
        }
    }

    #[test]
    fn scale_cap() {
        let f = Function4D::gaussian([0.0; 4], 1.0, [0.0; 4], ONE);
        let t = BasisTruncation::new(2);
        let e = integrated_rep_rect(&f, &canon(), Frame::unit(), t, t, 10).unwrap_err();
        assert!(matches!(e, Error::Scale(_)));
    }
}

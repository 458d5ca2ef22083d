//! Exactly-evaluable Lipschitz maps ℝ^d → ℝ^l as shared expression DAGs.
//!
//! Every node evaluates over any [`Real`]; nodes that only make sense at
//! `f64` resolution (grids, bumps, lattice smoothing) evaluate in `f64` and
//! lift the result.

use crate::error::{Error, Result};
use crate::hexf::hex;
use crate::operator::{LinOp, Matrix};
use crate::real::{Mp, Real};
use crate::region::Region;
use crate::space::NormedSpace;
use nalgebra::{DMatrix, DVector};
use rug::Float;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

/// Lattice nodes per kernel half-width in smoothing nodes.
pub const DEFAULT_SMOOTH_M: usize = 8;

#[derive(Clone)]
pub struct LipFn(Arc<Node>);

pub struct Node {
    din: usize,
    dout: usize,
    kind: Kind,
}

pub(crate) enum Kind {
    Zero,
    Const(Vec<f64>),
    Affine {
        m: Matrix,
        b: Vec<f64>,
    },
    /// coef·‖x − center‖·dir
    Norm {
        space: NormedSpace,
        center: Vec<f64>,
        coef: f64,
        dir: Vec<f64>,
    },
    Scale(f64, LipFn),
    Sum(Vec<LipFn>),
    Compose {
        outer: LipFn,
        inner: LipFn,
    },
    Blend {
        space: NormedSpace,
        a: f64,
        b: f64,
        f1: LipFn,
        f2: LipFn,
    },
    /// inside[i] on the open ball B(centers[i], radius), outside elsewhere.
    /// Centers sorted by first coordinate.
    BallPatch {
        space: NormedSpace,
        centers: Vec<Vec<f64>>,
        radius: f64,
        inside: Vec<LipFn>,
        outside: LipFn,
        k1: f64,
    },
    PointValue {
        f: LipFn,
        at: Vec<f64>,
        c64: OnceLock<Vec<f64>>,
        cmp: Mutex<HashMap<u32, Vec<Float>>>,
    },
    Product {
        s: LipFn,
        v: LipFn,
    },
    Grid {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: Vec<usize>,
        values: Vec<f64>,
    },
    Bump {
        center: Vec<f64>,
        radius: f64,
    },
    /// Scalar clamp [`ramp`] with half-width r.
    Ramp {
        r: f64,
    },
    PouWeight {
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
        members: Vec<usize>,
        floor: f64,
    },
    Smooth(Box<SmoothSpec>),
    Select {
        region: Region,
        inside: LipFn,
        outside: LipFn,
    },
    Min(Vec<LipFn>),
    Max(Vec<LipFn>),
    LipBound {
        f: LipFn,
        lip: f64,
    },
}

pub(crate) struct SmoothSpec {
    f: LipFn,
    radial: bool,
    frame: Vec<Vec<f64>>,
    frame_inv: DMatrix<f64>,
    widths: Vec<f64>,
    m: usize,
}

impl fmt::Debug for LipFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LipFn<{}→{} {}>",
            self.0.din,
            self.0.dout,
            self.kind_name()
        )
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn input<T>(m: impl Into<String>) -> Result<T> {
    Err(Error::Input(m.into()))
}

fn new(din: usize, dout: usize, kind: Kind) -> LipFn {
    LipFn(Arc::new(Node { din, dout, kind }))
}

/// Standard bump profile exp(−1/(1−t²)) on |t| < 1.
pub fn rho1(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn psi(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

/// C^∞ step: 1 for r ≤ 1/2, 0 for r ≥ 1.
pub fn plateau(r: f64) -> f64 {
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        let t = 2.0 * r - 1.0;
        let a = psi(1.0 - t);
        a / (a + psi(t))
    }
}

/// Max |d/dr plateau(r)|, attained at r = 3/4.
pub const PLATEAU_SLOPE: f64 = 4.0;

/// Scaled so that distances far below 1e-154 do not underflow.
fn eucl_dist(x: &[f64], c: &[f64]) -> f64 {
    let m = x
        .iter()
        .zip(c)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x
        .iter()
        .zip(c)
        .map(|(a, b)| ((a - b) / m).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Monotone C² clamp: σ(t) = t on |t| ≤ r, constant ±1.5r for |t| ≥ 2r,
/// 0 ≤ σ′ ≤ 1 with σ′ = 1 − 3u² + 2u³ at |t| = r(1 + u).
pub fn ramp(t: f64, r: f64) -> f64 {
    let a = t.abs();
    let v = if a <= r {
        a
    } else if a >= 2.0 * r {
        1.5 * r
    } else {
        let u = (a - r) / r;
        r + r * (u - u * u * u + 0.5 * u * u * u * u)
    };
    v.copysign(t)
}

/// Normaliser for partitions: S(σ) = σ for σ ≥ 1, σ + e^{−1/(1−σ)} below.
pub fn pou_norm(sigma: f64) -> f64 {
    if sigma >= 1.0 {
        sigma
    } else {
        sigma + (-1.0 / (1.0 - sigma)).exp()
    }
}

/// S_τ(σ) = τ·S(σ/τ): equals σ once σ ≥ τ.
pub fn pou_norm_floor(sigma: f64, floor: f64) -> f64 {
    if sigma >= floor {
        sigma
    } else {
        floor * pou_norm(sigma / floor)
    }
}

impl LipFn {
    pub fn din(&self) -> usize {
        self.0.din
    }

    pub fn dout(&self) -> usize {
        self.0.dout
    }

    fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn ptr_eq(&self, o: &LipFn) -> bool {
        Arc::ptr_eq(&self.0, &o.0)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind() {
            Kind::Zero => "zero",
            Kind::Const(_) => "const",
            Kind::Affine { .. } => "affine",
            Kind::Norm { .. } => "norm",
            Kind::Scale(..) => "scale",
            Kind::Sum(_) => "sum",
            Kind::Compose { .. } => "compose",
            Kind::Blend { .. } => "blend",
            Kind::BallPatch { .. } => "ball-patch",
            Kind::PointValue { .. } => "point-value",
            Kind::Product { .. } => "product",
            Kind::Grid { .. } => "grid",
            Kind::Bump { .. } => "bump",
            Kind::Ramp { .. } => "ramp",
            Kind::PouWeight { .. } => "pou-weight",
            Kind::Smooth(s) => {
                if s.radial {
                    "mollify"
                } else {
                    "dir-smooth"
                }
            }
            Kind::Select { .. } => "select",
            Kind::Min(_) => "min",
            Kind::Max(_) => "max",
            Kind::LipBound { .. } => "lip-bound",
        }
    }

    pub fn is_zero(&self) -> bool {
        match self.kind() {
            Kind::Zero => true,
            Kind::LipBound { f, .. } => f.is_zero(),
            _ => false,
        }
    }

    // ---- constructors -------------------------------------------------

    pub fn zero(din: usize, dout: usize) -> LipFn {
        new(din, dout, Kind::Zero)
    }

    pub fn constant(din: usize, value: Vec<f64>) -> Result<LipFn> {
        if din == 0 || value.is_empty() || !finite(&value) {
            return input("constant needs finite values");
        }
        Ok(new(din, value.len(), Kind::Const(value)))
    }

    pub fn affine(m: Matrix, b: Vec<f64>) -> Result<LipFn> {
        if b.len() != m.rows || !finite(&b) || !finite(&m.data) {
            return input("affine offset/matrix mismatch");
        }
        Ok(new(m.cols, m.rows, Kind::Affine { m, b }))
    }

    pub fn linear(t: &LinOp) -> LipFn {
        let r = t.matrix.rows;
        LipFn::affine(t.matrix.clone(), vec![0.0; r]).expect("finite operator")
    }

    pub fn identity(d: usize) -> LipFn {
        LipFn::affine(Matrix::identity(d), vec![0.0; d]).expect("identity")
    }

    /// x ↦ x + v
    pub fn shift(v: &[f64]) -> Result<LipFn> {
        LipFn::affine(Matrix::identity(v.len()), v.to_vec())
    }

    pub fn norm(space: &NormedSpace, center: Vec<f64>, coef: f64, dir: Vec<f64>) -> Result<LipFn> {
        if center.len() != space.dim()
            || dir.is_empty()
            || !finite(&center)
            || !finite(&dir)
            || !coef.is_finite()
        {
            return input("norm node shape");
        }
        Ok(new(
            space.dim(),
            dir.len(),
            Kind::Norm {
                space: space.clone(),
                center,
                coef,
                dir,
            },
        ))
    }

    pub fn scale(c: f64, f: &LipFn) -> Result<LipFn> {
        if !c.is_finite() {
            return input("non-finite scale");
        }
        Ok(new(f.din(), f.dout(), Kind::Scale(c, f.clone())))
    }

    pub fn sum(terms: Vec<LipFn>) -> Result<LipFn> {
        let Some(first) = terms.first() else {
            return input("empty sum");
        };
        let (din, dout) = (first.din(), first.dout());
        if terms.iter().any(|t| t.din() != din || t.dout() != dout) {
            return input("sum of mismatched shapes");
        }
        let terms: Vec<LipFn> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        if terms.is_empty() {
            return Ok(LipFn::zero(din, dout));
        }
        if terms.len() == 1 {
            return Ok(terms[0].clone());
        }
        Ok(new(din, dout, Kind::Sum(terms)))
    }

    pub fn add(&self, o: &LipFn) -> Result<LipFn> {
        LipFn::sum(vec![self.clone(), o.clone()])
    }

    pub fn sub(&self, o: &LipFn) -> Result<LipFn> {
        LipFn::sum(vec![self.clone(), LipFn::scale(-1.0, o)?])
    }

    /// outer ∘ inner
    pub fn compose(outer: &LipFn, inner: &LipFn) -> Result<LipFn> {
        if outer.din() != inner.dout() {
            return input("composition shape mismatch");
        }
        Ok(new(
            inner.din(),
            outer.dout(),
            Kind::Compose {
                outer: outer.clone(),
                inner: inner.clone(),
            },
        ))
    }

    /// Raw radial blend node; see `blend::BlendSpec` for the checked builder.
    pub fn blend_node(
        space: &NormedSpace,
        a: f64,
        b: f64,
        f1: &LipFn,
        f2: &LipFn,
    ) -> Result<LipFn> {
        if !(a > 0.0 && a < b && b.is_finite()) {
            return input(format!("blend needs 0 < a < b, got a={a}, b={b}"));
        }
        if f1.din() != space.dim() || f2.din() != space.dim() || f1.dout() != f2.dout() {
            return input("blend shape mismatch");
        }
        Ok(new(
            space.dim(),
            f1.dout(),
            Kind::Blend {
                space: space.clone(),
                a,
                b,
                f1: f1.clone(),
                f2: f2.clone(),
            },
        ))
    }

    /// Replaces `outside` by `inside[i]` on open balls B(c_i, radius); the
    /// balls must be pairwise disjoint.
    pub fn ball_patch(
        space: &NormedSpace,
        centers: Vec<Vec<f64>>,
        radius: f64,
        inside: Vec<LipFn>,
        outside: &LipFn,
    ) -> Result<LipFn> {
        let d = space.dim();
        if centers.len() != inside.len() {
            return input("ball patch centers/pieces mismatch");
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return input("ball patch radius");
        }
        if outside.din() != d
            || inside
                .iter()
                .any(|f| f.din() != d || f.dout() != outside.dout())
        {
            return input("ball patch shape mismatch");
        }
        if centers.iter().any(|c| c.len() != d || !finite(c)) {
            return input("ball patch center");
        }
        if centers.is_empty() {
            return Ok(outside.clone());
        }
        let mut idx: Vec<usize> = (0..centers.len()).collect();
        idx.sort_by(|a, b| centers[*a][0].total_cmp(&centers[*b][0]));
        let centers: Vec<Vec<f64>> = idx.iter().map(|i| centers[*i].clone()).collect();
        let inside: Vec<LipFn> = idx.iter().map(|i| inside[*i].clone()).collect();
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        let k1 = space.dual_norm(&e1).0;
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                if (centers[j][0] - centers[i][0]) > 2.0 * radius * k1 * (1.0 + 1e-12) {
                    break;
                }
                if space.dist_f(&centers[i], &centers[j]) < 2.0 * radius {
                    return Err(Error::Geometry("ball patch balls overlap".into()));
                }
            }
        }
        Ok(new(
            d,
            outside.dout(),
            Kind::BallPatch {
                space: space.clone(),
                centers,
                radius,
                inside,
                outside: outside.clone(),
                k1,
            },
        ))
    }

    /// The constant function x ↦ f(at), evaluated lazily at the caller's precision.
    pub fn point_value(f: &LipFn, at: Vec<f64>) -> Result<LipFn> {
        if at.len() != f.din() || !finite(&at) {
            return input("point value location");
        }
        Ok(new(
            f.din(),
            f.dout(),
            Kind::PointValue {
                f: f.clone(),
                at,
                c64: OnceLock::new(),
                cmp: Mutex::new(HashMap::new()),
            },
        ))
    }

    /// Scalar field times vector field.
    pub fn product(s: &LipFn, v: &LipFn) -> Result<LipFn> {
        if s.dout() != 1 || s.din() != v.din() {
            return input("product needs a scalar first factor");
        }
        Ok(new(
            v.din(),
            v.dout(),
            Kind::Product {
                s: s.clone(),
                v: v.clone(),
            },
        ))
    }

    /// Multilinear interpolation on a node grid over [lo, hi] (clamped);
    /// `values` is row-major (last axis fastest) with `dout` entries per node.
    pub fn grid(
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: Vec<usize>,
        dout: usize,
        values: Vec<f64>,
    ) -> Result<LipFn> {
        let d = lo.len();
        if d == 0 || hi.len() != d || n.len() != d || dout == 0 {
            return input("grid shape");
        }
        if n.iter().any(|k| *k < 2)
            || lo.iter().zip(&hi).any(|(a, b)| !(a < b))
            || !finite(&lo)
            || !finite(&hi)
        {
            return input("grid axes");
        }
        let total = n.iter().try_fold(dout, |acc, k| acc.checked_mul(*k));
        if total != Some(values.len()) || !finite(&values) {
            return input("grid payload length");
        }
        Ok(new(d, dout, Kind::Grid { lo, hi, n, values }))
    }

    /// Smooth Euclidean plateau bump: 1 on B(c, r/2), 0 off B(c, r).
    pub fn bump(center: Vec<f64>, radius: f64) -> Result<LipFn> {
        if center.is_empty() || !finite(&center) || !(radius > 0.0) {
            return input("bump shape");
        }
        Ok(new(center.len(), 1, Kind::Bump { center, radius }))
    }

    /// ℝ → ℝ monotone smooth clamp, 1-Lipschitz, identity on [−r, r].
    pub fn ramp(r: f64) -> Result<LipFn> {
        if !(r > 0.0) || !r.is_finite() {
            return input("ramp half-width must be positive");
        }
        Ok(new(1, 1, Kind::Ramp { r }).with_lip_bound(1.0))
    }

    /// φ_k = b_k / S(Σ_j b_j) over plateau bumps b_j.
    pub fn pou_weight(centers: Vec<Vec<f64>>, radii: Vec<f64>, k: usize) -> Result<LipFn> {
        LipFn::pou_group(centers, radii, vec![k], 1.0)
    }

    /// Σ_{k ∈ members} b_k / S_τ(Σ_j b_j) with floor τ ∈ (0, 1].
    pub fn pou_group(
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
        members: Vec<usize>,
        floor: f64,
    ) -> Result<LipFn> {
        let d = centers.first().map(|c| c.len()).unwrap_or(0);
        if d == 0 || centers.len() != radii.len() || members.iter().any(|k| *k >= centers.len()) {
            return input("pou weight shape");
        }
        if centers.iter().any(|c| c.len() != d || !finite(c)) || radii.iter().any(|r| !(*r > 0.0)) {
            return input("pou weight bumps");
        }
        if !(floor > 0.0 && floor <= 1.0) {
            return input("pou floor must lie in (0, 1]");
        }
        Ok(new(
            d,
            1,
            Kind::PouWeight {
                centers,
                radii,
                members,
                floor,
            },
        ))
    }

    fn smooth_node(
        f: &LipFn,
        radial: bool,
        frame: Vec<Vec<f64>>,
        widths: Vec<f64>,
        m: usize,
    ) -> Result<LipFn> {
        let d = f.din();
        if frame.len() != d || frame.iter().any(|h| h.len() != d || !finite(h)) {
            return input("smoothing frame must be d directions in ℝ^d");
        }
        if widths.len() != d
            || widths.iter().any(|w| !(*w > 0.0) || !w.is_finite())
            || m == 0
            || m > 64
        {
            return input("smoothing widths");
        }
        let h = DMatrix::from_fn(d, d, |i, j| frame[j][i]);
        let Some(frame_inv) = h.try_inverse() else {
            return input("smoothing frame is singular");
        };
        Ok(new(
            d,
            f.dout(),
            Kind::Smooth(Box::new(SmoothSpec {
                f: f.clone(),
                radial,
                frame,
                frame_inv,
                widths,
                m,
            })),
        ))
    }

    /// Convolution-type smoothing with the Euclidean bump of radius `eps`,
    /// discretised on a fixed lattice with local-linear normalisation.
    pub fn mollify(f: &LipFn, eps: f64, m: usize) -> Result<LipFn> {
        let d = f.din();
        let frame = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        LipFn::smooth_node(f, true, frame, vec![eps; d], m)
    }

    /// Product-kernel smoothing along the directions `frame` with half-widths `widths`.
    pub fn dir_smooth(
        f: &LipFn,
        frame: Vec<Vec<f64>>,
        widths: Vec<f64>,
        m: usize,
    ) -> Result<LipFn> {
        LipFn::smooth_node(f, false, frame, widths, m)
    }

    pub fn select(region: &Region, inside: &LipFn, outside: &LipFn) -> Result<LipFn> {
        if inside.din() != outside.din() || inside.dout() != outside.dout() {
            return input("select shape mismatch");
        }
        if let Some(d) = region.dim() {
            if d != inside.din() {
                return input("select region dimension");
            }
        }
        Ok(new(
            inside.din(),
            inside.dout(),
            Kind::Select {
                region: region.clone(),
                inside: inside.clone(),
                outside: outside.clone(),
            },
        ))
    }

    pub fn min(terms: Vec<LipFn>) -> Result<LipFn> {
        LipFn::minmax(terms, true)
    }

    pub fn max(terms: Vec<LipFn>) -> Result<LipFn> {
        LipFn::minmax(terms, false)
    }

    fn minmax(terms: Vec<LipFn>, is_min: bool) -> Result<LipFn> {
        let Some(first) = terms.first() else {
            return input("empty min/max");
        };
        let din = first.din();
        if terms.iter().any(|t| t.din() != din || t.dout() != 1) {
            return input("min/max takes scalar fields");
        }
        let k = if is_min {
            Kind::Min(terms)
        } else {
            Kind::Max(terms)
        };
        Ok(new(din, 1, k))
    }

    /// Attaches a proved Lipschitz bound (evaluation passes through).
    pub fn with_lip_bound(&self, lip: f64) -> LipFn {
        new(
            self.din(),
            self.dout(),
            Kind::LipBound {
                f: self.clone(),
                lip,
            },
        )
    }

    /// The nearest attached Lipschitz bound, if any.
    pub fn lip_bound(&self) -> Option<f64> {
        match self.kind() {
            Kind::LipBound { lip, .. } => Some(*lip),
            _ => None,
        }
    }

    // ---- evaluation ---------------------------------------------------

    pub fn eval_f(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x)
    }

    /// Evaluation at `prec` bits with the input rounded from `f64`.
    pub fn eval_mp(&self, x: &[f64], prec: u32) -> Vec<Mp> {
        self.eval(&Mp::vec(prec, x))
    }

    pub fn eval<S: Real>(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.din());
        let z = x[0].zero();
        match self.kind() {
            Kind::Zero => vec![z; self.dout()],
            Kind::Const(v) => v.iter().map(|c| z.cst(*c)).collect(),
            Kind::Affine { m, b } => m
                .apply_r(x)
                .into_iter()
                .zip(b)
                .map(|(v, c)| if *c == 0.0 { v } else { v.shift(*c) })
                .collect(),
            Kind::Norm {
                space,
                center,
                coef,
                dir,
            } => {
                let y: Vec<S> = x.iter().zip(center).map(|(a, c)| a.shift(-c)).collect();
                let n = space.norm(&y).scale(*coef);
                dir.iter().map(|d| n.scale(*d)).collect()
            }
            Kind::Scale(c, f) => f.eval(x).into_iter().map(|v| v.scale(*c)).collect(),
            Kind::Sum(ts) => {
                let mut acc = ts[0].eval(x);
                for t in &ts[1..] {
                    for (a, b) in acc.iter_mut().zip(t.eval(x)) {
                        *a = a.clone() + b;
                    }
                }
                acc
            }
            Kind::Compose { outer, inner } => outer.eval(&inner.eval(x)),
            Kind::Blend {
                space,
                a,
                b,
                f1,
                f2,
            } => {
                let t = space.norm(x);
                if t.le_f(*a) {
                    f1.eval(x)
                } else if !t.lt_f(*b) {
                    f2.eval(x)
                } else {
                    let w = b - a;
                    let c1 = (t.cst(*b) - t.clone()).scale(1.0 / w);
                    let c2 = (t.shift(-a).scale(*b)) / (t.scale(w));
                    let v1 = if f1.is_zero() { None } else { Some(f1.eval(x)) };
                    let v2 = if f2.is_zero() { None } else { Some(f2.eval(x)) };
                    (0..self.dout())
                        .map(|i| {
                            let mut s = z.clone();
                            if let Some(v) = &v1 {
                                s = s + c1.clone() * v[i].clone();
                            }
                            if let Some(v) = &v2 {
                                s = s + c2.clone() * v[i].clone();
                            }
                            s
                        })
                        .collect()
                }
            }
            Kind::BallPatch {
                space,
                centers,
                radius,
                inside,
                outside,
                k1,
            } => {
                let x0 = x[0].to_f64();
                let win = radius * k1 * (1.0 + 1e-9) + 1e-300;
                let start = centers.partition_point(|c| c[0] < x0 - win);
                for i in start..centers.len() {
                    if centers[i][0] > x0 + win {
                        break;
                    }
                    let y: Vec<S> = x
                        .iter()
                        .zip(&centers[i])
                        .map(|(a, c)| a.shift(-c))
                        .collect();
                    if space.norm(&y).lt_f(*radius) {
                        return inside[i].eval(x);
                    }
                }
                outside.eval(x)
            }
            Kind::PointValue { f, at, c64, cmp } => {
                let bits = z.bits();
                if bits == 53 {
                    let v = c64.get_or_init(|| f.eval_f(at));
                    v.iter().map(|c| z.cst(*c)).collect()
                } else {
                    let hit = cmp.lock().expect("cache").get(&bits).cloned();
                    let vals = match hit {
                        Some(v) => v,
                        None => {
                            let xa: Vec<S> = at.iter().map(|a| z.cst(*a)).collect();
                            let v: Vec<Float> = f.eval(&xa).iter().map(|s| s.to_float()).collect();
                            cmp.lock().expect("cache").insert(bits, v.clone());
                            v
                        }
                    };
                    vals.iter().map(|v| z.from_float(v)).collect()
                }
            }
            Kind::Product { s, v } => {
                let c = s.eval(x).remove(0);
                v.eval(x).into_iter().map(|e| c.clone() * e).collect()
            }
            Kind::Select {
                region,
                inside,
                outside,
            } => {
                let xf: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
                if region.contains(&xf) {
                    inside.eval(x)
                } else {
                    outside.eval(x)
                }
            }
            Kind::Min(ts) => {
                let mut it = ts.iter().map(|t| t.eval(x).remove(0));
                let first = it.next().expect("nonempty");
                vec![it.fold(first, |a, b| a.min_r(b))]
            }
            Kind::Max(ts) => {
                let mut it = ts.iter().map(|t| t.eval(x).remove(0));
                let first = it.next().expect("nonempty");
                vec![it.fold(first, |a, b| a.max_r(b))]
            }
            Kind::LipBound { f, .. } => f.eval(x),
            Kind::Grid { .. }
            | Kind::Bump { .. }
            | Kind::Ramp { .. }
            | Kind::PouWeight { .. }
            | Kind::Smooth(_) => {
                let xf: Vec<f64> = x.iter().map(|v| v.to_f64()).collect();
                self.eval_lifted(&xf)
                    .into_iter()
                    .map(|v| z.cst(v))
                    .collect()
            }
        }
    }

    fn eval_lifted(&self, x: &[f64]) -> Vec<f64> {
        match self.kind() {
            Kind::Grid { lo, hi, n, values } => grid_eval(lo, hi, n, self.dout(), values, x),
            Kind::Bump { center, radius } => vec![plateau(eucl_dist(x, center) / radius)],
            Kind::Ramp { r } => vec![ramp(x[0], *r)],
            Kind::PouWeight {
                centers,
                radii,
                members,
                floor,
            } => {
                let bk: f64 = members
                    .iter()
                    .map(|k| plateau(eucl_dist(x, &centers[*k]) / radii[*k]))
                    .sum();
                if bk == 0.0 {
                    return vec![0.0];
                }
                let sigma: f64 = centers
                    .iter()
                    .zip(radii)
                    .map(|(c, r)| plateau(eucl_dist(x, c) / r))
                    .sum();
                vec![bk / pou_norm_floor(sigma, *floor)]
            }
            Kind::Smooth(s) => smooth_eval(s, x, self.dout()),
            _ => unreachable!("not a lifted node"),
        }
    }

    /// Central-difference Jacobian (dout × din) at step h.
    pub fn jacobian_fd(&self, x: &[f64], h: f64) -> Matrix {
        let (d, l) = (self.din(), self.dout());
        let mut m = Matrix::zeros(l, d);
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (self.eval_f(&xp), self.eval_f(&xm));
            for i in 0..l {
                m.data[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        m
    }

    /// Number of distinct nodes reachable from the root.
    pub fn node_count(&self) -> usize {
        to_doc(self).nodes.len()
    }
}

fn grid_eval(
    lo: &[f64],
    hi: &[f64],
    n: &[usize],
    dout: usize,
    values: &[f64],
    x: &[f64],
) -> Vec<f64> {
    let d = lo.len();
    let mut base = 0usize;
    let mut fr = vec![0.0; d];
    let mut strides = vec![0usize; d];
    let mut s = dout;
    for k in (0..d).rev() {
        strides[k] = s;
        s *= n[k];
    }
    for k in 0..d {
        let t = ((x[k] - lo[k]) / (hi[k] - lo[k])).clamp(0.0, 1.0) * (n[k] - 1) as f64;
        let i = (t.floor() as usize).min(n[k] - 2);
        fr[k] = t - i as f64;
        base += i * strides[k];
    }
    let mut out = vec![0.0; dout];
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut off = base;
        for k in 0..d {
            if corner >> k & 1 == 1 {
                w *= fr[k];
                off += strides[k];
            } else {
                w *= 1.0 - fr[k];
            }
        }
        if w != 0.0 {
            for c in 0..dout {
                out[c] += w * values[off + c];
            }
        }
    }
    out
}

/// Weighted local-linear fit of f over a fixed lattice z = H·(k∘δ),
/// δ_i = w_i/m, evaluated at x. Weights are C^∞ in x, so the result is.
fn smooth_eval(s: &SmoothSpec, x: &[f64], dout: usize) -> Vec<f64> {
    let d = x.len();
    let xv = DVector::from_column_slice(x);
    let c = &s.frame_inv * xv;
    let delta: Vec<f64> = s.widths.iter().map(|w| w / s.m as f64).collect();
    let lo: Vec<i64> = (0..d)
        .map(|i| ((c[i] - s.widths[i]) / delta[i]).floor() as i64)
        .collect();
    let hi: Vec<i64> = (0..d)
        .map(|i| ((c[i] + s.widths[i]) / delta[i]).ceil() as i64)
        .collect();
    let span: Vec<usize> = (0..d).map(|i| (hi[i] - lo[i] + 1) as usize).collect();
    let total: usize = span.iter().product();
    let p = d + 1;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, dout);
    let mut u = vec![0.0; d];
    let mut sv = vec![0.0; d];
    for mut idx in 0..total {
        for i in 0..d {
            let k = lo[i] + (idx % span[i]) as i64;
            idx /= span[i];
            sv[i] = k as f64 * delta[i];
            u[i] = (sv[i] - c[i]) / s.widths[i];
        }
        let w = if s.radial {
            rho1(u.iter().map(|v| v * v).sum::<f64>().sqrt())
        } else {
            u.iter().map(|v| rho1(*v)).product()
        };
        if w == 0.0 {
            continue;
        }
        let z: Vec<f64> = (0..d)
            .map(|r| (0..d).map(|j| s.frame[j][r] * sv[j]).sum())
            .collect();
        let fz = s.f.eval_f(&z);
        let phi: Vec<f64> = std::iter::once(1.0).chain(u.iter().copied()).collect();
        for r in 0..p {
            for q in 0..p {
                a[(r, q)] += w * phi[r] * phi[q];
            }
            for o in 0..dout {
                rhs[(r, o)] += w * phi[r] * fz[o];
            }
        }
    }
    match a.clone().cholesky() {
        Some(ch) => {
            let sol = ch.solve(&rhs);
            (0..dout).map(|o| sol[(0, o)]).collect()
        }
        None => {
            // Degenerate lattice (m too small): fall back to the weighted mean.
            (0..dout).map(|o| rhs[(0, o)] / a[(0, 0)]).collect()
        }
    }
}

// ---- serialization ------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
enum NodeDoc {
    Zero {
        din: usize,
        dout: usize,
    },
    Const {
        din: usize,
        #[serde(with = "hex::vec")]
        value: Vec<f64>,
    },
    Affine {
        #[serde(with = "hex::mat")]
        matrix: Vec<Vec<f64>>,
        #[serde(with = "hex::vec")]
        offset: Vec<f64>,
    },
    Norm {
        space: NormedSpace,
        #[serde(with = "hex::vec")]
        center: Vec<f64>,
        #[serde(with = "hex")]
        coef: f64,
        #[serde(with = "hex::vec")]
        dir: Vec<f64>,
    },
    Scale {
        #[serde(with = "hex")]
        c: f64,
        f: usize,
    },
    Sum {
        terms: Vec<usize>,
    },
    Compose {
        outer: usize,
        inner: usize,
    },
    Blend {
        space: NormedSpace,
        #[serde(with = "hex")]
        a: f64,
        #[serde(with = "hex")]
        b: f64,
        f1: usize,
        f2: usize,
    },
    BallPatch {
        space: NormedSpace,
        #[serde(with = "hex::mat")]
        centers: Vec<Vec<f64>>,
        #[serde(with = "hex")]
        radius: f64,
        inside: Vec<usize>,
        outside: usize,
    },
    PointValue {
        f: usize,
        #[serde(with = "hex::vec")]
        at: Vec<f64>,
    },
    Product {
        s: usize,
        v: usize,
    },
    Grid {
        #[serde(with = "hex::vec")]
        lo: Vec<f64>,
        #[serde(with = "hex::vec")]
        hi: Vec<f64>,
        n: Vec<usize>,
        dout: usize,
        #[serde(with = "hex::vec")]
        values: Vec<f64>,
    },
    Bump {
        #[serde(with = "hex::vec")]
        center: Vec<f64>,
        #[serde(with = "hex")]
        radius: f64,
    },
    Ramp {
        #[serde(with = "hex")]
        r: f64,
    },
    PouWeight {
        #[serde(with = "hex::mat")]
        centers: Vec<Vec<f64>>,
        #[serde(with = "hex::vec")]
        radii: Vec<f64>,
        members: Vec<usize>,
        #[serde(with = "hex", default = "unit_floor")]
        floor: f64,
    },
    Mollify {
        f: usize,
        #[serde(with = "hex")]
        eps: f64,
        m: usize,
    },
    DirSmooth {
        f: usize,
        #[serde(with = "hex::mat")]
        frame: Vec<Vec<f64>>,
        #[serde(with = "hex::vec")]
        widths: Vec<f64>,
        m: usize,
    },
    Select {
        region: Region,
        inside: usize,
        outside: usize,
    },
    Min {
        terms: Vec<usize>,
    },
    Max {
        terms: Vec<usize>,
    },
    LipBound {
        f: usize,
        #[serde(with = "hex")]
        lip: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagDoc {
    pub din: usize,
    pub dout: usize,
    nodes: Vec<NodeDoc>,
    pub root: usize,
}

fn unit_floor() -> f64 {
    1.0
}

fn to_doc(f: &LipFn) -> DagDoc {
    let mut ids: HashMap<*const Node, usize> = HashMap::new();
    let mut nodes = vec![];
    let root = emit(f, &mut ids, &mut nodes);
    DagDoc {
        din: f.din(),
        dout: f.dout(),
        nodes,
        root,
    }
}

fn emit(f: &LipFn, ids: &mut HashMap<*const Node, usize>, out: &mut Vec<NodeDoc>) -> usize {
    let key = Arc::as_ptr(&f.0);
    if let Some(i) = ids.get(&key) {
        return *i;
    }
    let mut e = |g: &LipFn| emit(g, ids, out);
    let doc = match f.kind() {
        Kind::Zero => NodeDoc::Zero {
            din: f.din(),
            dout: f.dout(),
        },
        Kind::Const(v) => NodeDoc::Const {
            din: f.din(),
            value: v.clone(),
        },
        Kind::Affine { m, b } => NodeDoc::Affine {
            matrix: m.to_rows(),
            offset: b.clone(),
        },
        Kind::Norm {
            space,
            center,
            coef,
            dir,
        } => NodeDoc::Norm {
            space: space.clone(),
            center: center.clone(),
            coef: *coef,
            dir: dir.clone(),
        },
        Kind::Scale(c, g) => NodeDoc::Scale { c: *c, f: e(g) },
        Kind::Sum(ts) => NodeDoc::Sum {
            terms: ts.iter().map(e).collect(),
        },
        Kind::Compose { outer, inner } => {
            let o = e(outer);
            let i = e(inner);
            NodeDoc::Compose { outer: o, inner: i }
        }
        Kind::Blend {
            space,
            a,
            b,
            f1,
            f2,
        } => {
            let (i1, i2) = (e(f1), e(f2));
            NodeDoc::Blend {
                space: space.clone(),
                a: *a,
                b: *b,
                f1: i1,
                f2: i2,
            }
        }
        Kind::BallPatch {
            space,
            centers,
            radius,
            inside,
            outside,
            ..
        } => {
            let ins: Vec<usize> = inside.iter().map(&mut e).collect();
            let o = e(outside);
            NodeDoc::BallPatch {
                space: space.clone(),
                centers: centers.clone(),
                radius: *radius,
                inside: ins,
                outside: o,
            }
        }
        Kind::PointValue { f: g, at, .. } => NodeDoc::PointValue {
            f: e(g),
            at: at.clone(),
        },
        Kind::Product { s, v } => {
            let (a, b) = (e(s), e(v));
            NodeDoc::Product { s: a, v: b }
        }
        Kind::Grid { lo, hi, n, values } => NodeDoc::Grid {
            lo: lo.clone(),
            hi: hi.clone(),
            n: n.clone(),
            dout: f.dout(),
            values: values.clone(),
        },
        Kind::Bump { center, radius } => NodeDoc::Bump {
            center: center.clone(),
            radius: *radius,
        },
        Kind::Ramp { r } => NodeDoc::Ramp { r: *r },
        Kind::PouWeight {
            centers,
            radii,
            members,
            floor,
        } => NodeDoc::PouWeight {
            centers: centers.clone(),
            radii: radii.clone(),
            members: members.clone(),
            floor: *floor,
        },
        Kind::Smooth(s) => {
            let g = e(&s.f);
            if s.radial {
                NodeDoc::Mollify {
                    f: g,
                    eps: s.widths[0],
                    m: s.m,
                }
            } else {
                NodeDoc::DirSmooth {
                    f: g,
                    frame: s.frame.clone(),
                    widths: s.widths.clone(),
                    m: s.m,
                }
            }
        }
        Kind::Select {
            region,
            inside,
            outside,
        } => {
            let (a, b) = (e(inside), e(outside));
            NodeDoc::Select {
                region: region.clone(),
                inside: a,
                outside: b,
            }
        }
        Kind::Min(ts) => NodeDoc::Min {
            terms: ts.iter().map(e).collect(),
        },
        Kind::Max(ts) => NodeDoc::Max {
            terms: ts.iter().map(e).collect(),
        },
        Kind::LipBound { f: g, lip } => NodeDoc::LipBound { f: e(g), lip: *lip },
    };
    out.push(doc);
    let id = out.len() - 1;
    ids.insert(key, id);
    id
}

fn from_doc(doc: &DagDoc) -> Result<LipFn> {
    if doc.nodes.is_empty() {
        return Err(Error::Parse("empty DAG".into()));
    }
    let mut built: Vec<LipFn> = Vec::with_capacity(doc.nodes.len());
    for (i, nd) in doc.nodes.iter().enumerate() {
        let get = |j: usize| -> Result<LipFn> {
            if j >= i {
                return Err(Error::Parse(format!(
                    "node {i} references {j}, not earlier"
                )));
            }
            Ok(built[j].clone())
        };
        let many = |js: &[usize]| js.iter().map(|j| get(*j)).collect::<Result<Vec<_>>>();
        let f = match nd {
            NodeDoc::Zero { din, dout } => {
                if *din == 0 || *dout == 0 || *din > 64 || *dout > 64 {
                    return Err(Error::Parse("zero node shape".into()));
                }
                LipFn::zero(*din, *dout)
            }
            NodeDoc::Const { din, value } => {
                if *din > 64 {
                    return Err(Error::Parse("const din".into()));
                }
                LipFn::constant(*din, value.clone())?
            }
            NodeDoc::Affine { matrix, offset } => {
                LipFn::affine(Matrix::from_rows(matrix)?, offset.clone())?
            }
            NodeDoc::Norm {
                space,
                center,
                coef,
                dir,
            } => LipFn::norm(space, center.clone(), *coef, dir.clone())?,
            NodeDoc::Scale { c, f } => LipFn::scale(*c, &get(*f)?)?,
            NodeDoc::Sum { terms } => {
                let ts = many(terms)?;
                let Some(first) = ts.first() else {
                    return Err(Error::Parse("empty sum".into()));
                };
                let (din, dout) = (first.din(), first.dout());
                if ts.iter().any(|t| t.din() != din || t.dout() != dout) {
                    return Err(Error::Parse("sum shape".into()));
                }
                // Keep the node verbatim (no zero pruning) so re-serialization is stable.
                new(din, dout, Kind::Sum(ts))
            }
            NodeDoc::Compose { outer, inner } => LipFn::compose(&get(*outer)?, &get(*inner)?)?,
            NodeDoc::Blend {
                space,
                a,
                b,
                f1,
                f2,
            } => LipFn::blend_node(space, *a, *b, &get(*f1)?, &get(*f2)?)?,
            NodeDoc::BallPatch {
                space,
                centers,
                radius,
                inside,
                outside,
            } => {
                let sorted = centers.windows(2).all(|w| w[0].first() <= w[1].first());
                if !sorted || centers.is_empty() {
                    return Err(Error::Parse(
                        "ball patch centers must be sorted and nonempty".into(),
                    ));
                }
                LipFn::ball_patch(
                    space,
                    centers.clone(),
                    *radius,
                    many(inside)?,
                    &get(*outside)?,
                )?
            }
            NodeDoc::PointValue { f, at } => LipFn::point_value(&get(*f)?, at.clone())?,
            NodeDoc::Product { s, v } => LipFn::product(&get(*s)?, &get(*v)?)?,
            NodeDoc::Grid {
                lo,
                hi,
                n,
                dout,
                values,
            } => LipFn::grid(lo.clone(), hi.clone(), n.clone(), *dout, values.clone())?,
            NodeDoc::Bump { center, radius } => LipFn::bump(center.clone(), *radius)?,
            NodeDoc::Ramp { r } => {
                LipFn::ramp(*r)?;
                new(1, 1, Kind::Ramp { r: *r })
            }
            NodeDoc::PouWeight {
                centers,
                radii,
                members,
                floor,
            } => LipFn::pou_group(centers.clone(), radii.clone(), members.clone(), *floor)?,
            NodeDoc::Mollify { f, eps, m } => LipFn::mollify(&get(*f)?, *eps, *m)?,
            NodeDoc::DirSmooth {
                f,
                frame,
                widths,
                m,
            } => LipFn::dir_smooth(&get(*f)?, frame.clone(), widths.clone(), *m)?,
            NodeDoc::Select {
                region,
                inside,
                outside,
            } => {
                region.validate()?;
                LipFn::select(region, &get(*inside)?, &get(*outside)?)?
            }
            NodeDoc::Min { terms } => LipFn::min(many(terms)?)?,
            NodeDoc::Max { terms } => LipFn::max(many(terms)?)?,
            NodeDoc::LipBound { f, lip } => {
                if !(*lip >= 0.0) {
                    return Err(Error::Parse("lip bound".into()));
                }
                get(*f)?.with_lip_bound(*lip)
            }
        };
        built.push(f);
    }
    let root = built
        .get(doc.root)
        .ok_or_else(|| Error::Parse("root out of range".into()))?
        .clone();
    if root.din() != doc.din || root.dout() != doc.dout {
        return Err(Error::Parse("root shape does not match header".into()));
    }
    Ok(root)
}

impl Serialize for LipFn {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_doc(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for LipFn {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<LipFn, D::Error> {
        let doc = DagDoc::deserialize(d)?;
        from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

pub fn parse_dag_json(s: &str) -> Result<LipFn> {
    let doc: DagDoc = serde_json::from_str(s)?;
    from_doc(&doc)
}

pub fn to_dag_json(f: &LipFn) -> String {
    serde_json::to_string(&to_doc(f)).expect("DAG serializes")
}

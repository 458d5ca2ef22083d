//! Finite-dimensional normed spaces: ℓp, weighted ℓp and polyhedral norms.

use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exponent in [1, ∞]; serialized as a number or the string "inf".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PExp(pub f64);

impl Serialize for PExp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for PExp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<PExp, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(v) => Ok(PExp(v)),
            Raw::S(s) if s == "inf" || s == "infinity" => Ok(PExp(f64::INFINITY)),
            Raw::S(s) => Err(serde::de::Error::custom(format!("bad exponent {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Descriptor {
    Lp {
        p: PExp,
    },
    WeightedLp {
        p: PExp,
        weights: Vec<f64>,
    },
    /// Symmetric polytope given by unit-ball vertices and/or supporting
    /// functionals (‖x‖ = max_j f_j·x). In d ≤ 2 either one suffices.
    Polyhedral {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vertices: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        facets: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceDoc", into = "SpaceDoc")]
pub struct NormedSpace {
    dim: usize,
    desc: Descriptor,
    vertices: Vec<Vec<f64>>,
    facets: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpaceDoc {
    pub dim: usize,
    pub descriptor: Descriptor,
}

impl TryFrom<SpaceDoc> for NormedSpace {
    type Error = Error;
    fn try_from(d: SpaceDoc) -> Result<Self> {
        NormedSpace::new(d.dim, d.descriptor)
    }
}

impl From<NormedSpace> for SpaceDoc {
    fn from(s: NormedSpace) -> SpaceDoc {
        SpaceDoc {
            dim: s.dim,
            descriptor: s.desc,
        }
    }
}

const MAX_DIM: usize = 64;

fn check_p(p: f64) -> Result<()> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Descriptor(format!("exponent {p} outside [1, inf]")));
    }
    Ok(())
}

impl NormedSpace {
    pub fn new(dim: usize, desc: Descriptor) -> Result<NormedSpace> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Descriptor(format!("dimension {dim} unsupported")));
        }
        let mut sp = NormedSpace {
            dim,
            desc: desc.clone(),
            vertices: vec![],
            facets: vec![],
        };
        match &desc {
            Descriptor::Lp { p } => check_p(p.0)?,
            Descriptor::WeightedLp { p, weights } => {
                check_p(p.0)?;
                if weights.len() != dim || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::Descriptor(
                        "weights must be positive, one per axis".into(),
                    ));
                }
            }
            Descriptor::Polyhedral { vertices, facets } => {
                let chk = |set: &Vec<Vec<f64>>, what: &str| -> Result<()> {
                    if set.is_empty() {
                        return Err(Error::Descriptor(format!("empty {what} set")));
                    }
                    for v in set {
                        if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
                            return Err(Error::Descriptor(format!("malformed {what}")));
                        }
                    }
                    check_symmetric(set, what)
                };
                if let Some(v) = vertices {
                    chk(v, "vertex")?;
                }
                if let Some(f) = facets {
                    chk(f, "facet")?;
                }
                let (v, f) = match (vertices, facets) {
                    (Some(v), Some(f)) => (v.clone(), f.clone()),
                    (Some(v), None) if dim <= 2 => (v.clone(), polar_facets(v, dim)?),
                    (None, Some(f)) if dim <= 2 => (polar_facets(f, dim)?, f.clone()),
                    (None, None) => {
                        return Err(Error::Descriptor(
                            "polyhedral norm needs vertices or facets".into(),
                        ))
                    }
                    _ => {
                        return Err(Error::Descriptor(
                            "polyhedral norm in d >= 3 needs both vertices and facets".into(),
                        ))
                    }
                };
                // Consistency: every vertex lies in the closed unit ball, and the
                // facet max is attained at 1 by some vertex for each facet.
                for x in &v {
                    let n = f.iter().map(|fj| dot(fj, x)).fold(f64::MIN, f64::max);
                    if n > 1.0 + 1e-9 {
                        return Err(Error::Descriptor("vertex outside facet description".into()));
                    }
                }
                sp.vertices = v;
                sp.facets = f;
            }
        }
        Ok(sp)
    }

    pub fn lp(dim: usize, p: f64) -> NormedSpace {
        NormedSpace::new(dim, Descriptor::Lp { p: PExp(p) }).expect("valid lp")
    }

    pub fn euclidean(dim: usize) -> NormedSpace {
        NormedSpace::lp(dim, 2.0)
    }

    pub fn linf(dim: usize) -> NormedSpace {
        NormedSpace::lp(dim, f64::INFINITY)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.desc
    }

    pub fn is_euclidean(&self) -> bool {
        matches!(self.desc, Descriptor::Lp { p } if p.0 == 2.0)
    }

    /// Vertex set of the unit ball when it is a polytope (ℓ1, ℓ∞, weighted
    /// variants, polyhedral); `None` otherwise.
    pub fn ball_vertices(&self) -> Option<Vec<Vec<f64>>> {
        let d = self.dim;
        let (p, w): (f64, Vec<f64>) = match &self.desc {
            Descriptor::Polyhedral { .. } => return Some(self.vertices.clone()),
            Descriptor::Lp { p } => (p.0, vec![1.0; d]),
            Descriptor::WeightedLp { p, weights } => (p.0, weights.clone()),
        };
        if p == 1.0 {
            let mut out = vec![];
            for i in 0..d {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; d];
                    v[i] = s / w[i];
                    out.push(v);
                }
            }
            Some(out)
        } else if p.is_infinite() && d <= 16 {
            let mut out = vec![];
            for mask in 0..(1u32 << d) {
                out.push(
                    (0..d)
                        .map(|i| {
                            if mask >> i & 1 == 1 {
                                -1.0 / w[i]
                            } else {
                                1.0 / w[i]
                            }
                        })
                        .collect(),
                );
            }
            Some(out)
        } else {
            None
        }
    }

    pub fn norm<S: Real>(&self, x: &[S]) -> S {
        debug_assert_eq!(x.len(), self.dim);
        let z = x[0].zero();
        match &self.desc {
            Descriptor::Lp { p } => lp_norm(x, p.0, None, z),
            Descriptor::WeightedLp { p, weights } => lp_norm(x, p.0, Some(weights), z),
            Descriptor::Polyhedral { .. } => {
                let mut best: Option<S> = None;
                for f in &self.facets {
                    let mut s = z.clone();
                    for (xi, fi) in x.iter().zip(f) {
                        s = s + xi.scale(*fi);
                    }
                    best = Some(match best {
                        None => s,
                        Some(b) => b.max_r(s),
                    });
                }
                best.unwrap_or(z)
            }
        }
    }

    #[inline]
    pub fn norm_f(&self, x: &[f64]) -> f64 {
        match &self.desc {
            Descriptor::Lp { p } if p.0 == 2.0 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Descriptor::Lp { p } if p.0.is_infinite() => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            Descriptor::Lp { p } if p.0 == 1.0 => x.iter().map(|v| v.abs()).sum(),
            _ => self.norm(x),
        }
    }

    pub fn dist_f(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.norm_f(&d)
    }

    /// Dual norm of the functional with coefficient vector `c`, with a unit
    /// vector `v` attaining it (c·v = ‖c‖_*).
    pub fn dual_norm(&self, c: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        assert_eq!(c.len(), d);
        if c.iter().all(|v| *v == 0.0) {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            let n = self.norm_f(&e);
            e[0] = 1.0 / n;
            return (0.0, e);
        }
        match &self.desc {
            Descriptor::Polyhedral { .. } => {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for (i, v) in self.vertices.iter().enumerate() {
                    let val = dot(c, v);
                    if val > best {
                        best = val;
                        arg = i;
                    }
                }
                (best, self.vertices[arg].clone())
            }
            Descriptor::Lp { p } => self.lp_dual(c, p.0, &vec![1.0; d]),
            Descriptor::WeightedLp { p, weights } => self.lp_dual(c, p.0, weights),
        }
    }

    fn lp_dual(&self, c: &[f64], p: f64, w: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim;
        // Substitute y_i = w_i^{1/p} x_i (y_i = w_i x_i for p = ∞).
        let wp: Vec<f64> = if p.is_infinite() {
            w.to_vec()
        } else {
            w.iter().map(|wi| wi.powf(1.0 / p)).collect()
        };
        let cc: Vec<f64> = c.iter().zip(&wp).map(|(ci, wi)| ci / wi).collect();
        let mut y = vec![0.0; d];
        let val;
        if p == 1.0 {
            let (j, m) = cc.iter().enumerate().fold((0, -1.0), |(bj, bm), (j, v)| {
                if v.abs() > bm {
                    (j, v.abs())
                } else {
                    (bj, bm)
                }
            });
            y[j] = cc[j].signum();
            val = m;
        } else if p.is_infinite() {
            for i in 0..d {
                y[i] = if cc[i] > 0.0 {
                    1.0
                } else if cc[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
            }
            val = cc.iter().map(|v| v.abs()).sum();
        } else {
            let q = p / (p - 1.0);
            let m = cc.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s: f64 = cc.iter().map(|v| (v.abs() / m).powf(q)).sum();
            val = m * s.powf(1.0 / q);
            for i in 0..d {
                y[i] = cc[i].signum() * (cc[i].abs() / val).powf(q - 1.0);
                if cc[i] == 0.0 {
                    y[i] = 0.0;
                }
            }
        }
        let mut x: Vec<f64> = y.iter().zip(&wp).map(|(yi, wi)| yi / wi).collect();
        let n = self.norm_f(&x);
        if n > 0.0 {
            for v in &mut x {
                *v /= n;
            }
        }
        (val, x)
    }

    /// sup_{‖x‖≤1} ‖x‖_∞.
    pub fn linf_const(&self) -> f64 {
        (0..self.dim)
            .map(|i| {
                let mut e = vec![0.0; self.dim];
                e[i] = 1.0;
                self.dual_norm(&e).0
            })
            .fold(0.0, f64::max)
    }

    /// (a, b) with ‖x‖ ≤ a·|x|₂ and |x|₂ ≤ b·‖x‖.
    pub fn euclid_consts(&self) -> (f64, f64) {
        let d = self.dim as f64;
        match &self.desc {
            Descriptor::Lp { p } => lp_consts(d, p.0, 1.0, 1.0),
            Descriptor::WeightedLp { p, weights } => {
                let (wmax, wmin) = weights
                    .iter()
                    .fold((0.0f64, f64::MAX), |(a, b), w| (a.max(*w), b.min(*w)));
                let e = if p.0.is_infinite() { 1.0 } else { 1.0 / p.0 };
                lp_consts(d, p.0, wmax.powf(e), wmin.powf(e))
            }
            Descriptor::Polyhedral { .. } => {
                let a = self.facets.iter().map(|f| euclid(f)).fold(0.0, f64::max);
                let b = self.vertices.iter().map(|v| euclid(v)).fold(0.0, f64::max);
                (a, b)
            }
        }
    }

    /// Distance from x to the hyperplane {y : c·y = t}.
    pub fn dist_to_hyperplane(&self, x: &[f64], c: &[f64], t: f64) -> f64 {
        (dot(c, x) - t).abs() / self.dual_norm(c).0
    }

    /// Points on the unit sphere along `n` evenly spaced angles (d = 2 only).
    pub fn sphere_polygon(&self, n: usize) -> Vec<Vec<f64>> {
        assert_eq!(self.dim, 2);
        (0..n)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / n as f64;
                let v = [t.cos(), t.sin()];
                let r = self.norm_f(&v);
                vec![v[0] / r, v[1] / r]
            })
            .collect()
    }

    pub fn facets(&self) -> &[Vec<f64>] {
        &self.facets
    }
}

fn lp_consts(d: f64, p: f64, wmax: f64, wmin: f64) -> (f64, f64) {
    let ip = if p.is_infinite() { 0.0 } else { 1.0 / p };
    let a = d.powf((ip - 0.5).max(0.0)) * wmax;
    let b = d.powf((0.5 - ip).max(0.0)) / wmin;
    (a, b)
}

fn lp_norm<S: Real>(x: &[S], p: f64, w: Option<&Vec<f64>>, z: S) -> S {
    let wt = |i: usize| w.map(|w| w[i]).unwrap_or(1.0);
    if p.is_infinite() {
        let mut m = z;
        for (i, xi) in x.iter().enumerate() {
            let v = if w.is_some() {
                xi.abs().scale(wt(i))
            } else {
                xi.abs()
            };
            m = m.max_r(v);
        }
        m
    } else if p == 1.0 {
        let mut s = z;
        for (i, xi) in x.iter().enumerate() {
            s = s + if w.is_some() {
                xi.abs().scale(wt(i))
            } else {
                xi.abs()
            };
        }
        s
    } else if p == 2.0 {
        let mut s = z;
        for (i, xi) in x.iter().enumerate() {
            let sq = xi.clone() * xi.clone();
            s = s + if w.is_some() { sq.scale(wt(i)) } else { sq };
        }
        s.sqrt()
    } else {
        let mut m = z.clone();
        for xi in x {
            m = m.max_r(xi.abs());
        }
        if !(m > z) {
            return z;
        }
        let mut s = z;
        for (i, xi) in x.iter().enumerate() {
            let r = (xi.abs() / m.clone()).powf(p);
            s = s + if w.is_some() { r.scale(wt(i)) } else { r };
        }
        m * s.powf(1.0 / p)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn euclid(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_symmetric(set: &[Vec<f64>], what: &str) -> Result<()> {
    for v in set {
        let scale = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let found = set
            .iter()
            .any(|w| v.iter().zip(w).all(|(a, b)| (a + b).abs() <= 1e-12 * scale));
        if !found {
            return Err(Error::Descriptor(format!(
                "{what} set not closed under negation"
            )));
        }
    }
    Ok(())
}

/// In d ≤ 2, the facet functionals of conv(gens) (equivalently, the vertices
/// of the polar body when `gens` are functionals).
fn polar_facets(gens: &[Vec<f64>], dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 1 {
        let m = gens.iter().map(|g| g[0].abs()).fold(0.0, f64::max);
        if m == 0.0 {
            return Err(Error::Descriptor("degenerate polytope".into()));
        }
        return Ok(vec![vec![1.0 / m], vec![-1.0 / m]]);
    }
    let hull = convex_hull(gens);
    if hull.len() < 3 {
        return Err(Error::Descriptor("polytope is not full-dimensional".into()));
    }
    let mut out = vec![];
    for i in 0..hull.len() {
        let a = &hull[i];
        let b = &hull[(i + 1) % hull.len()];
        let det = a[0] * b[1] - a[1] * b[0];
        if det.abs() < 1e-14 {
            return Err(Error::Descriptor("origin not interior to polytope".into()));
        }
        out.push(vec![(b[1] - a[1]) / det, (a[0] - b[0]) / det]);
    }
    Ok(out)
}

/// Andrew's monotone chain, counter-clockwise, collinear points dropped.
pub fn convex_hull(pts: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut p: Vec<[f64; 2]> = pts.iter().map(|v| [v[0], v[1]]).collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    p.dedup();
    if p.len() < 3 {
        return p.into_iter().map(|a| a.to_vec()).collect();
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut lower: Vec<[f64; 2]> = vec![];
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<[f64; 2]> = vec![];
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower.into_iter().map(|a| a.to_vec()).collect()
}

/// A linear functional on a normed space with its cached dual norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Functional {
    pub coeffs: Vec<f64>,
    pub space: NormedSpace,
    pub dual_norm: f64,
    pub attain_dir: Vec<f64>,
}

impl Functional {
    pub fn new(coeffs: Vec<f64>, space: &NormedSpace) -> Result<Functional> {
        if coeffs.len() != space.dim() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("functional coefficients malformed".into()));
        }
        let (n, v) = space.dual_norm(&coeffs);
        Ok(Functional {
            coeffs,
            space: space.clone(),
            dual_norm: n,
            attain_dir: v,
        })
    }

    pub fn apply(&self, x: &[f64]) -> f64 {
        dot(&self.coeffs, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hexagon() -> NormedSpace {
        let v = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![1.0, 1.0],
            vec![-1.0, -1.0],
        ];
        NormedSpace::new(
            2,
            Descriptor::Polyhedral {
                vertices: Some(v),
                facets: None,
            },
        )
        .unwrap()
    }

    fn zoo() -> Vec<NormedSpace> {
        vec![
            NormedSpace::lp(2, 1.0),
            NormedSpace::euclidean(3),
            NormedSpace::linf(2),
            NormedSpace::lp(2, 3.5),
            NormedSpace::new(
                2,
                Descriptor::WeightedLp {
                    p: PExp(2.0),
                    weights: vec![1.0, 4.0],
                },
            )
            .unwrap(),
            NormedSpace::new(
                3,
                Descriptor::WeightedLp {
                    p: PExp(f64::INFINITY),
                    weights: vec![1.0, 2.0, 0.5],
                },
            )
            .unwrap(),
            NormedSpace::new(
                2,
                Descriptor::WeightedLp {
                    p: PExp(1.0),
                    weights: vec![3.0, 0.5],
                },
            )
            .unwrap(),
            hexagon(),
        ]
    }

    #[test]
    fn dual_norm_examples() {
        let (n, v) = NormedSpace::euclidean(2).dual_norm(&[3.0, 4.0]);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((v[0] - 0.6).abs() < 1e-12 && (v[1] - 0.8).abs() < 1e-12);
        let (n, v) = NormedSpace::linf(2).dual_norm(&[1.0, 1.0]);
        assert_eq!(n, 2.0);
        assert_eq!(v, vec![1.0, 1.0]);
        // Brute force over the listed generators: max(2, 1, 1) = 2 at (1, 0).
        let (n, v) = hexagon().dual_norm(&[2.0, -1.0]);
        assert_eq!(n, 2.0);
        assert_eq!(v, vec![1.0, 0.0]);
    }

    #[test]
    fn polyhedral_norm_from_vertices() {
        let h = hexagon();
        assert!((h.norm_f(&[1.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((h.norm_f(&[1.0, -1.0]) - 2.0).abs() < 1e-12);
        assert!((h.norm_f(&[0.5, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_polytope_rejected() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]];
        assert!(NormedSpace::new(
            2,
            Descriptor::Polyhedral {
                vertices: Some(v),
                facets: None
            }
        )
        .is_err());
        assert!(NormedSpace::new(2, Descriptor::Lp { p: PExp(0.5) }).is_err());
    }

    #[test]
    fn norm_axioms_and_duality_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for sp in zoo() {
            let d = sp.dim();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let c = rng.gen_range(-4.0..4.0);
                let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
                let s: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
                let (nx, ny) = (sp.norm_f(&x), sp.norm_f(&y));
                assert!((sp.norm_f(&cx) - c.abs() * nx).abs() <= 1e-9 * (1.0 + nx));
                assert!(sp.norm_f(&s) <= nx + ny + 1e-9);
                let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let (dn, v) = sp.dual_norm(&p);
                assert!(dot(&p, &x) <= dn * nx + 1e-9);
                assert!((dot(&p, &v) - dn).abs() <= 1e-9);
                assert!((sp.norm_f(&v) - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn equivalence_constants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sp in zoo() {
            let (a, b) = sp.euclid_consts();
            let c = sp.linf_const();
            for _ in 0..500 {
                let x: Vec<f64> = (0..sp.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = sp.norm_f(&x);
                assert!(n <= a * euclid(&x) + 1e-12);
                assert!(euclid(&x) <= b * n + 1e-12);
                assert!(x.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= c * n + 1e-12);
            }
        }
    }

    #[test]
    fn json_shape() {
        let s = r#"{"dim":2,"descriptor":{"kind":"lp","p":"inf"}}"#;
        let sp: NormedSpace = serde_json::from_str(s).unwrap();
        assert_eq!(sp, NormedSpace::linf(2));
        let back = serde_json::to_string(&sp).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn generic_norm_matches_fast_path(x in proptest::collection::vec(-10.0f64..10.0, 2)) {
            for sp in zoo().into_iter().filter(|s| s.dim() == 2) {
                let a = sp.norm(&x);
                let b = sp.norm_f(&x);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
            }
        }
    }
}

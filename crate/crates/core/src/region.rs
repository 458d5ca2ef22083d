//! Sets in ℝ^d with exact membership: ball and box unions, IFS Cantor
//! iterates, and boolean trees of these.

use crate::error::{Error, Result};
use crate::hexf::hex;
use crate::space::NormedSpace;
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Region {
    Empty,
    Points {
        #[serde(with = "hex::mat")]
        points: Vec<Vec<f64>>,
    },
    /// Union of balls of the given norm.
    Balls {
        space: NormedSpace,
        #[serde(with = "hex::mat")]
        centers: Vec<Vec<f64>>,
        #[serde(with = "hex::vec")]
        radii: Vec<f64>,
        #[serde(default = "default_true")]
        open: bool,
    },
    /// Union of axis-aligned boxes.
    Boxes {
        #[serde(with = "hex::mat")]
        lo: Vec<Vec<f64>>,
        #[serde(with = "hex::mat")]
        hi: Vec<Vec<f64>>,
        #[serde(default)]
        open: bool,
    },
    /// Level-n iterate of the 2^d-corner IFS on origin + side·[0,1]^d
    /// (closed cubes of side side·ratio^n).
    Cantor {
        level: u32,
        #[serde(with = "hex")]
        ratio: f64,
        #[serde(with = "hex::vec")]
        origin: Vec<f64>,
        #[serde(with = "hex")]
        side: f64,
    },
    Complement {
        of: Box<Region>,
    },
    Intersection {
        parts: Vec<Region>,
    },
    Union {
        parts: Vec<Region>,
    },
}

/// Unit square four-corner set at `level` with contraction `ratio`.
pub fn gen_four_corner(level: u32, ratio: f64) -> Result<Region> {
    if !(ratio > 0.0 && ratio <= 0.5) {
        return Err(Error::Input(format!("ratio {ratio} outside (0, 1/2]")));
    }
    Ok(Region::Cantor {
        level,
        ratio,
        origin: vec![0.0, 0.0],
        side: 1.0,
    })
}

pub fn parse_region_json(s: &str) -> Result<Region> {
    let r: Region = serde_json::from_str(s)?;
    r.validate()?;
    Ok(r)
}

fn linf_out(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (a, b))| (a - v).max(v - b).max(0.0))
        .fold(0.0, f64::max)
}

fn linf_in(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (a, b))| (v - a).min(b - v))
        .fold(f64::INFINITY, f64::min)
}

fn in_box(x: &[f64], lo: &[f64], hi: &[f64], open: bool) -> bool {
    x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| {
        if open {
            a < v && v < b
        } else {
            a <= v && v <= b
        }
    })
}

/// Factor k with ‖y‖_from ≤ k‖y‖_to.
fn equiv(from: &NormedSpace, to: &NormedSpace) -> f64 {
    if from == to {
        1.0
    } else {
        crate::operator::LinOp::identity_between(to, from).opnorm_ub
    }
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(m.into()));
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Region::Empty => Ok(()),
            Region::Points { points } => {
                let d = points.first().map(|p| p.len()).unwrap_or(0);
                if points.iter().any(|p| p.len() != d || d == 0 || !finite(p)) {
                    return bad("points must share a positive dimension");
                }
                Ok(())
            }
            Region::Balls {
                space,
                centers,
                radii,
                ..
            } => {
                if centers.len() != radii.len() {
                    return bad("centers/radii length mismatch");
                }
                if centers.iter().any(|c| c.len() != space.dim() || !finite(c)) {
                    return bad("ball center dimension");
                }
                if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
                    return bad("ball radii must be positive");
                }
                Ok(())
            }
            Region::Boxes { lo, hi, .. } => {
                if lo.len() != hi.len() {
                    return bad("lo/hi length mismatch");
                }
                let d = lo.first().map(|p| p.len()).unwrap_or(0);
                for (a, b) in lo.iter().zip(hi) {
                    if a.len() != d || b.len() != d || d == 0 || !finite(a) || !finite(b) {
                        return bad("box dimension");
                    }
                    if a.iter().zip(b).any(|(x, y)| x > y) {
                        return bad("box with lo > hi");
                    }
                }
                Ok(())
            }
            Region::Cantor {
                level,
                ratio,
                origin,
                side,
            } => {
                if !(*ratio > 0.0 && *ratio <= 0.5)
                    || !(*side > 0.0)
                    || origin.is_empty()
                    || !finite(origin)
                {
                    return bad("cantor parameters");
                }
                if *level as usize * origin.len() > 40 {
                    return bad("cantor level too deep");
                }
                Ok(())
            }
            Region::Complement { of } => of.validate(),
            Region::Intersection { parts } | Region::Union { parts } => {
                for p in parts {
                    p.validate()?;
                }
                let dims: Vec<usize> = parts.iter().filter_map(|p| p.dim()).collect();
                if dims.windows(2).any(|w| w[0] != w[1]) {
                    return bad("mixed dimensions");
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Region::Empty => None,
            Region::Points { points } => points.first().map(|p| p.len()),
            Region::Balls { space, .. } => Some(space.dim()),
            Region::Boxes { lo, .. } => lo.first().map(|p| p.len()),
            Region::Cantor { origin, .. } => Some(origin.len()),
            Region::Complement { of } => of.dim(),
            Region::Intersection { parts } | Region::Union { parts } => {
                parts.iter().find_map(|p| p.dim())
            }
        }
    }

    pub fn is_empty_kind(&self) -> bool {
        match self {
            Region::Empty => true,
            Region::Points { points } => points.is_empty(),
            Region::Balls { centers, .. } => centers.is_empty(),
            Region::Boxes { lo, .. } => lo.is_empty(),
            Region::Union { parts } => parts.iter().all(|p| p.is_empty_kind()),
            _ => false,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Region::Empty => false,
            Region::Points { points } => points.iter().any(|p| p.as_slice() == x),
            Region::Balls {
                space,
                centers,
                radii,
                open,
            } => centers.iter().zip(radii).any(|(c, r)| {
                let n = space.dist_f(x, c);
                if *open {
                    n < *r
                } else {
                    n <= *r
                }
            }),
            Region::Boxes { lo, hi, open } => {
                lo.iter().zip(hi).any(|(a, b)| in_box(x, a, b, *open))
            }
            Region::Cantor {
                level,
                ratio,
                origin,
                side,
            } => cantor_contains(x, *level, *ratio, origin, *side),
            Region::Complement { of } => !of.contains(x),
            Region::Intersection { parts } => parts.iter().all(|p| p.contains(x)),
            Region::Union { parts } => parts.iter().any(|p| p.contains(x)),
        }
    }

    /// Lower bound on dist_sp(x, complement); 0 when x is outside.
    pub fn depth(&self, x: &[f64], sp: &NormedSpace) -> f64 {
        let c_inf = || sp.linf_const();
        match self {
            Region::Empty | Region::Points { .. } => 0.0,
            Region::Balls {
                space,
                centers,
                radii,
                ..
            } => {
                let k = equiv(space, sp);
                centers
                    .iter()
                    .zip(radii)
                    .map(|(c, r)| ((r - space.dist_f(x, c)) / k).max(0.0))
                    .fold(0.0, f64::max)
            }
            Region::Boxes { lo, hi, .. } => {
                let m = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| linf_in(x, a, b).max(0.0))
                    .fold(0.0, f64::max);
                m / c_inf()
            }
            Region::Cantor { .. } => {
                let m = self
                    .cantor_boxes_at(None)
                    .iter()
                    .map(|(a, b)| linf_in(x, a, b).max(0.0))
                    .fold(0.0, f64::max);
                m / c_inf()
            }
            Region::Complement { of } => of.dist_outside(x, sp),
            Region::Intersection { parts } => parts
                .iter()
                .map(|p| p.depth(x, sp))
                .fold(f64::INFINITY, f64::min)
                .min(f64::MAX),
            Region::Union { parts } => parts.iter().map(|p| p.depth(x, sp)).fold(0.0, f64::max),
        }
    }

    /// Lower bound on dist_sp(x, region); 0 when x is inside.
    pub fn dist_outside(&self, x: &[f64], sp: &NormedSpace) -> f64 {
        match self {
            Region::Empty => f64::INFINITY,
            Region::Points { points } => points
                .iter()
                .map(|p| sp.dist_f(x, p))
                .fold(f64::INFINITY, f64::min),
            Region::Balls {
                space,
                centers,
                radii,
                ..
            } => {
                let k = equiv(space, sp);
                centers
                    .iter()
                    .zip(radii)
                    .map(|(c, r)| ((space.dist_f(x, c) - r) / k).max(0.0))
                    .fold(f64::INFINITY, f64::min)
            }
            Region::Boxes { lo, hi, .. } => {
                lo.iter()
                    .zip(hi)
                    .map(|(a, b)| linf_out(x, a, b))
                    .fold(f64::INFINITY, f64::min)
                    / sp.linf_const()
            }
            Region::Cantor { .. } => {
                self.cantor_boxes_at(None)
                    .iter()
                    .map(|(a, b)| linf_out(x, a, b))
                    .fold(f64::INFINITY, f64::min)
                    / sp.linf_const()
            }
            Region::Complement { of } => of.depth(x, sp),
            Region::Intersection { parts } => parts
                .iter()
                .map(|p| p.dist_outside(x, sp))
                .fold(0.0, f64::max),
            Region::Union { parts } => parts
                .iter()
                .map(|p| p.dist_outside(x, sp))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Axis box containing the region; `None` when unbounded or empty.
    pub fn bbox(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let merge = |a: Option<(Vec<f64>, Vec<f64>)>, b: (Vec<f64>, Vec<f64>)| match a {
            None => Some(b),
            Some((lo, hi)) => Some((
                lo.iter().zip(&b.0).map(|(x, y)| x.min(*y)).collect(),
                hi.iter().zip(&b.1).map(|(x, y)| x.max(*y)).collect(),
            )),
        };
        match self {
            Region::Empty => None,
            Region::Points { points } => points
                .iter()
                .fold(None, |acc, p| merge(acc, (p.clone(), p.clone()))),
            Region::Balls {
                space,
                centers,
                radii,
                ..
            } => {
                let k = space.linf_const();
                centers.iter().zip(radii).fold(None, |acc, (c, r)| {
                    merge(
                        acc,
                        (
                            c.iter().map(|v| v - r * k).collect(),
                            c.iter().map(|v| v + r * k).collect(),
                        ),
                    )
                })
            }
            Region::Boxes { lo, hi, .. } => lo
                .iter()
                .zip(hi)
                .fold(None, |acc, (a, b)| merge(acc, (a.clone(), b.clone()))),
            Region::Cantor { origin, side, .. } => {
                Some((origin.clone(), origin.iter().map(|o| o + side).collect()))
            }
            Region::Complement { .. } => None,
            Region::Intersection { parts } => {
                let boxes: Vec<_> = parts.iter().filter_map(|p| p.bbox()).collect();
                if boxes.is_empty() {
                    return None;
                }
                let mut lo = boxes[0].0.clone();
                let mut hi = boxes[0].1.clone();
                for (a, b) in &boxes[1..] {
                    for i in 0..lo.len() {
                        lo[i] = lo[i].max(a[i]);
                        hi[i] = hi[i].min(b[i]);
                    }
                }
                if lo.iter().zip(&hi).any(|(a, b)| a > b) {
                    None
                } else {
                    Some((lo, hi))
                }
            }
            Region::Union { parts } => {
                let mut acc = None;
                for p in parts {
                    if p.is_empty_kind() {
                        continue;
                    }
                    acc = merge(acc, p.bbox()?);
                }
                acc
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.is_empty_kind() || self.bbox().is_some()
    }

    /// Cubes of the Cantor iterate at `level` (own level when `None`).
    pub fn cantor_boxes_at(&self, level: Option<u32>) -> Vec<(Vec<f64>, Vec<f64>)> {
        let Region::Cantor {
            level: own,
            ratio,
            origin,
            side,
        } = self
        else {
            return vec![];
        };
        let n = level.unwrap_or(*own);
        let d = origin.len();
        let mut cur = vec![(origin.clone(), *side)];
        for _ in 0..n {
            let mut next = Vec::with_capacity(cur.len() << d);
            for (o, s) in &cur {
                let t = s * ratio;
                for mask in 0..(1usize << d) {
                    let c = (0..d)
                        .map(|i| {
                            if mask >> i & 1 == 1 {
                                o[i] + s - t
                            } else {
                                o[i]
                            }
                        })
                        .collect();
                    next.push((c, t));
                }
            }
            cur = next;
        }
        cur.into_iter()
            .map(|(o, s)| {
                let hi = o.iter().map(|v| v + s).collect();
                (o, hi)
            })
            .collect()
    }

    /// Axis boxes making up the region, when it is a box union or Cantor iterate.
    pub fn as_boxes(&self) -> Option<Vec<(Vec<f64>, Vec<f64>)>> {
        match self {
            Region::Empty => Some(vec![]),
            Region::Boxes { lo, hi, .. } => {
                Some(lo.iter().cloned().zip(hi.iter().cloned()).collect())
            }
            Region::Cantor { .. } => Some(self.cantor_boxes_at(None)),
            Region::Union { parts } => {
                let mut out = vec![];
                for p in parts {
                    out.extend(p.as_boxes()?);
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// Lebesgue measure for box-type regions (boxes assumed disjoint).
    pub fn box_volume(&self) -> Option<f64> {
        Some(
            self.as_boxes()?
                .iter()
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| y - x).product::<f64>())
                .sum(),
        )
    }

    /// Cell-centred lattice with `n` points per bbox axis, filtered by membership.
    pub fn lattice(&self, n: usize) -> Vec<Vec<f64>> {
        match self.bbox() {
            Some((lo, hi)) => lattice_in(&lo, &hi, n)
                .into_iter()
                .filter(|p| self.contains(p))
                .collect(),
            None => vec![],
        }
    }

    /// Points of the region at spacing ≤ h: the points themselves for finite
    /// sets, per-cube lattices for box-type regions, a bbox lattice otherwise.
    pub fn sample(&self, h: f64) -> Vec<Vec<f64>> {
        match self {
            Region::Points { points } => points.clone(),
            _ => {
                if let Some(bx) = self.as_boxes() {
                    let mut out = vec![];
                    for (a, b) in bx {
                        let n = a
                            .iter()
                            .zip(&b)
                            .map(|(x, y)| ((y - x) / h).ceil() as usize)
                            .max()
                            .unwrap_or(1)
                            .max(1);
                        out.extend(
                            lattice_in(&a, &b, n)
                                .into_iter()
                                .filter(|p| self.contains(p)),
                        );
                    }
                    out
                } else if let Some((lo, hi)) = self.bbox() {
                    let n = lo
                        .iter()
                        .zip(&hi)
                        .map(|(x, y)| ((y - x) / h).ceil() as usize)
                        .max()
                        .unwrap_or(1)
                        .max(1);
                    lattice_in(&lo, &hi, n)
                        .into_iter()
                        .filter(|p| self.contains(p))
                        .collect()
                } else {
                    vec![]
                }
            }
        }
    }

    /// Diameter upper bound in `sp`: exact for boxes under polytope norms via
    /// the corner difference, bbox-based otherwise.
    pub fn diam_ub(&self, sp: &NormedSpace) -> f64 {
        match self.bbox() {
            None => {
                if self.is_empty_kind() {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Some((lo, hi)) => {
                // sup over the box difference set = max over sign patterns of ‖σ∘(hi−lo)‖.
                let w: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| b - a).collect();
                let d = w.len();
                (0..(1u32 << d.min(16)))
                    .map(|m| {
                        let v: Vec<f64> = (0..d)
                            .map(|i| if m >> i & 1 == 1 { -w[i] } else { w[i] })
                            .collect();
                        sp.norm_f(&v)
                    })
                    .fold(0.0, f64::max)
            }
        }
    }
}

fn cantor_contains(x: &[f64], level: u32, ratio: f64, origin: &[f64], side: f64) -> bool {
    let mut rel: Vec<f64> = x.iter().zip(origin).map(|(v, o)| (v - o) / side).collect();
    if rel.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return false;
    }
    for _ in 0..level {
        for v in rel.iter_mut() {
            if *v <= ratio {
                *v /= ratio;
            } else if *v >= 1.0 - ratio {
                *v = (*v - (1.0 - ratio)) / ratio;
            } else {
                return false;
            }
        }
    }
    true
}

pub fn lattice_in(lo: &[f64], hi: &[f64], n: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let n = n.max(1);
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut k| {
            (0..d)
                .map(|i| {
                    let j = k % n;
                    k /= n;
                    lo[i] + (j as f64 + 0.5) * (hi[i] - lo[i]) / n as f64
                })
                .collect()
        })
        .collect()
}

/// Closed axis box [lo, hi].
pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Region {
    Region::Boxes {
        lo: vec![lo],
        hi: vec![hi],
        open: false,
    }
}

/// Open axis box (lo, hi).
pub fn open_box(lo: Vec<f64>, hi: Vec<f64>) -> Region {
    Region::Boxes {
        lo: vec![lo],
        hi: vec![hi],
        open: true,
    }
}

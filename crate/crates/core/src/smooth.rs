//! Mollification, partitions of unity, SLA assembly and local smoothing.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::{rho1, LipFn, DEFAULT_SMOOTH_M};
use crate::operator::{LinOp, Matrix, NormOracle};
use crate::region::{boxed, Region};
use crate::space::NormedSpace;
use crate::verify::{directions, lip_estimate};

/// Tolerance on the unit mass of the normalised mollifier.
pub const MASS_TOL: f64 = 1e-8;
/// Default order of the tensor Gauss–Legendre rule for direct convolutions.
pub const DEFAULT_QUAD_ORDER: usize = 16;
/// Default number of Johanis directions.
pub const DEFAULT_NDIR: usize = 16;
/// Upper limit on the number of bumps in a generated partition.
pub const MAX_BUMPS: usize = 4096;
/// Relative safety margin applied to sampled Lipschitz constants.
pub const LIP_MARGIN: f64 = 0.1;

/// Gauss–Legendre nodes and weights on [−1, 1] (Golub–Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (vec![], vec![]);
    }
    let j = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            let k = r.max(c) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn gamma_half(k: usize) -> f64 {
    // Γ(k/2) for k ≥ 1.
    let (mut g, mut x) = if k % 2 == 0 {
        (1.0, 1.0)
    } else {
        (PI.sqrt(), 0.5)
    };
    while x + 1e-12 < k as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Surface area of the Euclidean unit sphere in ℝ^d.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

fn radial_mass(d: usize, order: usize) -> f64 {
    let (t, w) = gauss_legendre(order);
    let s: f64 = t
        .iter()
        .zip(&w)
        .map(|(t, w)| {
            let r = 0.5 * (t + 1.0);
            0.5 * w * rho1(r) * r.powi(d as i32 - 1)
        })
        .sum();
    sphere_area(d) * s
}

/// The standard bump ρ(x) = exp(−1/(1−|x|²)) rescaled to radius ε and unit mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub dim: usize,
    pub eps: f64,
    /// Lattice resolution of the smoothing node (steps per radius).
    pub m: usize,
    /// ∫ρ over the unit ball.
    pub mass: f64,
    /// Gauss–Legendre order at which `mass` converged.
    pub quad_order: usize,
}

impl MollifierSpec {
    pub fn new(dim: usize, eps: f64) -> Result<MollifierSpec> {
        if dim == 0 || !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::Input("mollifier needs dim ≥ 1 and ε > 0".into()));
        }
        let mut order = 8;
        let mut prev = radial_mass(dim, order);
        loop {
            let next = radial_mass(dim, 2 * order);
            order *= 2;
            if (next - prev).abs() <= 1e-3 * MASS_TOL * next || order >= 1024 {
                prev = next;
                break;
            }
            prev = next;
        }
        Ok(MollifierSpec {
            dim,
            eps,
            m: DEFAULT_SMOOTH_M,
            mass: prev,
            quad_order: order,
        })
    }

    pub fn with_m(mut self, m: usize) -> MollifierSpec {
        self.m = m;
        self
    }

    /// ρ_ε(y) = ε^{−d} ρ(y/ε) / mass.
    pub fn kernel(&self, y: &[f64]) -> f64 {
        let r = y.iter().map(|v| v * v).sum::<f64>().sqrt() / self.eps;
        rho1(r) / (self.mass * self.eps.powi(self.dim as i32))
    }

    /// Direct tensor Gauss–Legendre evaluation of (g∗ρ_ε)(x) over [−ε, ε]^d.
    pub fn convolve_at(&self, g: &LipFn, x: &[f64], order: usize) -> Vec<f64> {
        let d = self.dim;
        let (t, w) = gauss_legendre(order);
        let total = order.pow(d as u32);
        let mut out = vec![0.0; g.dout()];
        let mut y = vec![0.0; d];
        for mut idx in 0..total {
            let mut wt = 1.0;
            for yi in y.iter_mut() {
                let j = idx % order;
                idx /= order;
                *yi = self.eps * t[j];
                wt *= self.eps * w[j];
            }
            let k = self.kernel(&y);
            if k == 0.0 {
                continue;
            }
            let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            for (o, v) in out.iter_mut().zip(g.eval_f(&z)) {
                *o += wt * k * v;
            }
        }
        out
    }
}

/// A mollified map together with the region on which it may be evaluated.
#[derive(Clone, Debug)]
pub struct Mollified {
    pub f: LipFn,
    pub domain: Region,
    pub spec: MollifierSpec,
    /// C·Lip(g)·ε when Lip(g) is known.
    pub bound: Option<f64>,
}

impl Mollified {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.dim {
            return Err(Error::Input(format!(
                "point of dim {} for a dim-{} map",
                x.len(),
                self.spec.dim
            )));
        }
        if !self.domain.contains(x) {
            return Err(Error::Domain(format!(
                "{x:?} lies outside the mollification domain"
            )));
        }
        Ok(self.f.eval_f(x))
    }

    /// max |node − direct quadrature| over `pts`.
    pub fn quad_gap(&self, g: &LipFn, pts: &[Vec<f64>], order: usize) -> f64 {
        pts.par_iter()
            .map(|p| {
                let a = self.f.eval_f(p);
                let b = self.spec.convolve_at(g, p, order);
                a.iter()
                    .zip(&b)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// g∗ρ_ε restricted to `u_eps`; `xs` fixes the equivalence constant C.
pub fn mollify(
    g: &LipFn,
    spec: &MollifierSpec,
    u_eps: &Region,
    xs: &NormedSpace,
) -> Result<Mollified> {
    if g.din() != spec.dim || xs.dim() != spec.dim {
        return Err(Error::Input("mollifier dimension mismatch".into()));
    }
    if let Some(d) = u_eps.dim() {
        if d != spec.dim {
            return Err(Error::Input("domain dimension mismatch".into()));
        }
    }
    let f = LipFn::mollify(g, spec.eps, spec.m)?;
    let bound = g.lip_bound().map(|l| xs.euclid_consts().0 * l * spec.eps);
    Ok(Mollified {
        f,
        domain: u_eps.clone(),
        spec: spec.clone(),
        bound,
    })
}

/// Lip(f) from its attached bound, else a padded sampled estimate over `q`.
pub fn lip_of(f: &LipFn, q: &Region, xs: &NormedSpace, ys: &NormedSpace) -> f64 {
    f.lip_bound()
        .unwrap_or_else(|| lip_estimate(f, q, xs, ys, 20_000, 0x5eed).ratio * (1.0 + LIP_MARGIN))
}

fn eucl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn ball_lattice(c: &[f64], r: f64, n: usize) -> Vec<Vec<f64>> {
    let lo: Vec<f64> = c.iter().map(|v| v - r).collect();
    let hi: Vec<f64> = c.iter().map(|v| v + r).collect();
    crate::region::lattice_in(&lo, &hi, n)
        .into_iter()
        .filter(|p| eucl(p, c) < r)
        .collect()
}

/// Smooth partition φ_k = b_k / S_τ(Σ b_j) over Euclidean plateau bumps.
#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    pub centers: Vec<Vec<f64>>,
    /// Euclidean support radii; b_k = 1 on half the radius.
    pub radii: Vec<f64>,
    /// τ: Σφ_k = 1 wherever Σb_j ≥ τ.
    pub floor: f64,
    pub bumps: Vec<LipFn>,
    /// Lip(φ_k) in the norm of X (sampled, padded).
    pub lip: Vec<f64>,
    /// Error budgets θ_k.
    pub theta: Vec<f64>,
    /// Largest number of supports meeting at one sample point.
    pub multiplicity: usize,
    /// Space in which Lipschitz constants are measured.
    pub space: NormedSpace,
}

impl PartitionOfUnity {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map(|c| c.len()).unwrap_or(0)
    }

    /// Σ_j b_j(x).
    pub fn sigma(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.radii)
            .map(|(c, r)| crate::func::plateau(eucl(x, c) / r))
            .sum()
    }

    pub fn weights(&self, x: &[f64]) -> Vec<f64> {
        self.bumps.iter().map(|b| b.eval_f(x)[0]).collect()
    }

    /// Whether the partition sums to one at x.
    pub fn covers(&self, x: &[f64]) -> bool {
        self.sigma(x) >= self.floor
    }

    /// Closed Euclidean support of φ_k.
    pub fn support(&self, k: usize) -> Region {
        Region::Balls {
            space: NormedSpace::euclidean(self.dim()),
            centers: vec![self.centers[k].clone()],
            radii: vec![self.radii[k]],
            open: false,
        }
    }

    /// Indices j whose support meets supp φ_k.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|j| eucl(&self.centers[*j], &self.centers[k]) < self.radii[*j] + self.radii[k])
            .collect()
    }

    /// Bound on sup_x Σ_{k : x ∈ supp φ_k} (1 + Lip φ_k) θ_k.
    pub fn local_budget(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                self.neighbors(k)
                    .iter()
                    .map(|j| (1.0 + self.lip[*j]) * self.theta[*j])
                    .sum::<f64>()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Bound on sup_x Σ_{k : x ∈ supp φ_k} Lip φ_k θ_k.
    pub fn slope_budget(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                self.neighbors(k)
                    .iter()
                    .map(|j| self.lip[*j] * self.theta[*j])
                    .sum::<f64>()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// max_k Σ_{j meeting supp φ_k} (1 + Lip φ_j).
    pub fn local_weight(&self) -> f64 {
        (0..self.len())
            .into_par_iter()
            .map(|k| {
                self.neighbors(k)
                    .iter()
                    .map(|j| 1.0 + self.lip[*j])
                    .sum::<f64>()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Σ_{k ∈ members} φ_k as one node.
    pub fn group(&self, members: Vec<usize>) -> Result<LipFn> {
        LipFn::pou_group(
            self.centers.clone(),
            self.radii.clone(),
            members,
            self.floor,
        )
    }

    /// Sampled, padded Lip(Σ_{k ∈ members} φ_k) in the norm of X.
    pub fn group_lip(&self, members: &[usize]) -> Result<f64> {
        if members.is_empty() {
            return Ok(0.0);
        }
        let phi = self.group(members.to_vec())?;
        let d = self.dim();
        let per_axis = if d <= 2 { 12 } else { 5 };
        let stride = members.len().div_ceil(256);
        let lip = members
            .par_iter()
            .step_by(stride)
            .map(|k| {
                let r = self.radii[*k];
                let step = 1e-6 * r;
                let mut lip: f64 = 0.0;
                for p in ball_lattice(&self.centers[*k], r, per_axis) {
                    let grad: Vec<f64> = (0..d)
                        .map(|i| {
                            let mut a = p.clone();
                            let mut b = p.clone();
                            a[i] += step;
                            b[i] -= step;
                            (phi.eval_f(&a)[0] - phi.eval_f(&b)[0]) / (2.0 * step)
                        })
                        .collect();
                    lip = lip.max(self.space.dual_norm(&grad).0);
                }
                lip
            })
            .reduce(|| 0.0, f64::max);
        Ok(lip * (1.0 + LIP_MARGIN))
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<PartitionOfUnity> {
        if theta.len() != self.len() || theta.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Input("one nonnegative θ_k per bump".into()));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn with_uniform_theta(self, t: f64) -> Result<PartitionOfUnity> {
        let n = self.len();
        self.with_theta(vec![t; n])
    }
}

/// Builds the partition from Euclidean balls, measuring Lip φ_k in `xs`.
pub fn pou_from_balls(
    centers: Vec<Vec<f64>>,
    radii: Vec<f64>,
    floor: f64,
    xs: &NormedSpace,
) -> Result<PartitionOfUnity> {
    if centers.is_empty() {
        return Ok(PartitionOfUnity {
            centers,
            radii,
            floor,
            bumps: vec![],
            lip: vec![],
            theta: vec![],
            multiplicity: 0,
            space: xs.clone(),
        });
    }
    if centers.len() > MAX_BUMPS {
        return Err(Error::Budget(format!(
            "{} bumps exceed the limit {MAX_BUMPS}",
            centers.len()
        )));
    }
    let bumps: Vec<LipFn> = (0..centers.len())
        .map(|k| LipFn::pou_group(centers.clone(), radii.clone(), vec![k], floor))
        .collect::<Result<_>>()?;
    let mut pou = PartitionOfUnity {
        centers,
        radii,
        floor,
        bumps,
        lip: vec![],
        theta: vec![],
        multiplicity: 0,
        space: xs.clone(),
    };
    let d = pou.dim();
    let per_axis = if d <= 2 { 14 } else { 6 };
    let stats: Vec<(f64, usize)> = (0..pou.len())
        .into_par_iter()
        .map(|k| {
            let r = pou.radii[k];
            let step = 1e-6 * r;
            let mut lip: f64 = 0.0;
            let mut mult = 0usize;
            for p in ball_lattice(&pou.centers[k], r, per_axis) {
                let grad: Vec<f64> = (0..d)
                    .map(|i| {
                        let mut a = p.clone();
                        let mut b = p.clone();
                        a[i] += step;
                        b[i] -= step;
                        (pou.bumps[k].eval_f(&a)[0] - pou.bumps[k].eval_f(&b)[0]) / (2.0 * step)
                    })
                    .collect();
                lip = lip.max(xs.dual_norm(&grad).0);
                let m = pou
                    .centers
                    .iter()
                    .zip(&pou.radii)
                    .filter(|(c, rr)| eucl(&p, c) < **rr)
                    .count();
                mult = mult.max(m);
            }
            (lip * (1.0 + LIP_MARGIN), mult)
        })
        .collect();
    pou.lip = stats.iter().map(|s| s.0).collect();
    pou.multiplicity = stats.iter().map(|s| s.1).max().unwrap_or(0);
    pou.theta = vec![0.0; pou.len()];
    Ok(pou)
}

/// Partition subordinate to an open cover of `v` by balls: each element must
/// be a `Balls` region, replaced by inscribed Euclidean balls. The floor is
/// set from the smallest bump sum on `v` so that Σφ_k = 1 there.
pub fn build_pou(cover: &[Region], v: &Region, xs: &NormedSpace) -> Result<PartitionOfUnity> {
    let mut centers = vec![];
    let mut radii = vec![];
    for el in cover {
        match el {
            Region::Balls {
                space,
                centers: cs,
                radii: rs,
                ..
            } => {
                if space.dim() != xs.dim() {
                    return Err(Error::Input("cover element of the wrong dimension".into()));
                }
                let a = space.euclid_consts().0;
                for (c, r) in cs.iter().zip(rs) {
                    centers.push(c.clone());
                    radii.push(r / a);
                }
            }
            Region::Empty => {}
            _ => {
                return Err(Error::Input(
                    "cover elements must be unions of balls".into(),
                ))
            }
        }
    }
    if centers.is_empty() {
        return Err(Error::Cover("empty cover".into()));
    }
    let rmin = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let probe = pou_from_balls(centers.clone(), radii.clone(), 1.0, xs)?;
    // σ is Lipschitz with constant ≤ PLATEAU_SLOPE·(M+1)/r_min in the Euclidean norm.
    let lip_sigma = crate::func::PLATEAU_SLOPE * (probe.multiplicity + 1) as f64 / rmin;
    let d = xs.dim();
    let mut floor = None;
    match v {
        Region::Points { points } => {
            let mut smin = f64::INFINITY;
            for p in points {
                let s = probe.sigma(p);
                if s <= 0.0 {
                    return Err(Error::Cover(format!(
                        "bump sum vanishes at {p:?}: not a cover of V"
                    )));
                }
                smin = smin.min(s);
            }
            floor = Some(if smin.is_finite() { smin.min(1.0) } else { 1.0 });
        }
        _ => {
            if !v.is_bounded() {
                return Err(Error::Domain("V must be bounded".into()));
            }
            let (lo, hi) = v.bbox().unwrap_or((vec![0.0; d], vec![0.0; d]));
            let w = lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max);
            let mut n = ((w / (rmin / 8.0)).ceil() as usize).max(8);
            let cap = if d <= 2 { 2000 } else { 40 };
            while n <= cap {
                let pts = v.lattice(n);
                let slack = lip_sigma * (d as f64).sqrt() * w / (2.0 * n as f64);
                let mut smin = f64::INFINITY;
                for p in &pts {
                    let s = probe.sigma(p);
                    if s <= 0.0 {
                        return Err(Error::Cover(format!(
                            "bump sum vanishes at {p:?}: not a cover of V"
                        )));
                    }
                    smin = smin.min(s);
                }
                if !smin.is_finite() {
                    floor = Some(1.0);
                    break;
                }
                if smin - slack > 0.0 {
                    floor = Some((smin - slack).min(1.0));
                    break;
                }
                n *= 2;
            }
        }
    }
    let Some(floor) = floor else {
        return Err(Error::Cover(
            "bump sum could not be bounded away from zero on V".into(),
        ));
    };
    if floor < 1.0 {
        pou_from_balls(centers, radii, floor, xs)
    } else {
        Ok(probe)
    }
}

/// Output of the compact selection: only φ_1..φ_K meet U.
#[derive(Clone, Debug)]
pub struct CompactSelection {
    pub k: usize,
    pub u: Region,
}

/// Finds K and an open U (finite union of balls centred in E) with
/// E ⊆ U ⊆ Ū ⊆ V ∩ G_1 ∩ … ∩ G_K and supp φ_k ∩ U = ∅ for k > K.
pub fn select_compact(
    pou: &PartitionOfUnity,
    e: &Region,
    v: &Region,
    gs: &[Region],
    xs: &NormedSpace,
) -> Result<CompactSelection> {
    let d = xs.dim();
    let (a, b) = xs.euclid_consts();
    let mut s = match e.bbox() {
        Some((lo, hi)) => {
            lo.iter()
                .zip(&hi)
                .map(|(x, y)| y - x)
                .fold(0.0, f64::max)
                .max(1e-9)
                / 8.0
        }
        None if e.is_empty_kind() => {
            return Ok(CompactSelection {
                k: 0,
                u: Region::Empty,
            })
        }
        None => return Err(Error::Domain("E must be compact".into())),
    };
    for _ in 0..12 {
        let (pts, slack) = match e {
            Region::Points { points } => (points.clone(), 0.0),
            _ => (e.sample(s), a * s * (d as f64).sqrt() / 2.0),
        };
        if pts.is_empty() {
            return Ok(CompactSelection {
                k: 0,
                u: Region::Empty,
            });
        }
        let rv = pts
            .iter()
            .map(|p| v.depth(p, xs))
            .fold(f64::INFINITY, f64::min)
            / 2.0;
        if rv <= slack {
            s /= 2.0;
            continue;
        }
        // Supports meeting the provisional U, in index order.
        let meets = |k: usize, r: f64| {
            pts.iter()
                .any(|p| eucl(p, &pou.centers[k]) < pou.radii[k] + b * r)
        };
        let k = (0..pou.len())
            .rev()
            .find(|k| meets(*k, rv))
            .map(|k| k + 1)
            .unwrap_or(0);
        let rg = gs
            .iter()
            .take(k)
            .map(|g| {
                pts.iter()
                    .map(|p| g.depth(p, xs))
                    .fold(f64::INFINITY, f64::min)
                    / 2.0
            })
            .fold(f64::INFINITY, f64::min);
        let r = rv.min(rg);
        if r <= slack {
            if slack == 0.0 {
                return Err(Error::Cover("E is not inside the selected G_k".into()));
            }
            s /= 2.0;
            continue;
        }
        let u = Region::Balls {
            space: xs.clone(),
            centers: pts.clone(),
            radii: vec![r; pts.len()],
            open: true,
        };
        return Ok(CompactSelection { k, u });
    }
    Err(Error::Cover(
        "no admissible U around E at the finest sampling".into(),
    ))
}

/// Assembled SLA map h̃ = h + Σ_k φ_k (h_k − h).
#[derive(Clone, Debug)]
pub struct Sla {
    pub g: LipFn,
    /// Pointwise budget sup_x Σ (1 + Lip φ_k) θ_k over supports at x.
    pub theta: f64,
    /// sup_x Σ Lip φ_k θ_k over supports at x.
    pub slope: f64,
    /// Distinct approximants after merging shared pieces.
    pub groups: usize,
    /// Per group: members, Lip(Σ φ_k) and max θ_k.
    pub group_info: Vec<(Vec<usize>, f64, f64)>,
    /// Samples on which the SLA premise was checked.
    pub checked: usize,
}

impl Sla {
    /// Lemma bound max(Lip h, θ + sup Lip h_k).
    pub fn lip_claim(&self, lip_h: f64, lip_hk: f64) -> f64 {
        lip_h.max(self.theta + lip_hk)
    }
}

/// Glues local approximants h_k ∈ SLA(h, supp φ_k, θ_k) into one map that
/// equals h wherever no bump is active.
pub fn sla_assemble(
    h: &LipFn,
    u: &Region,
    pou: &PartitionOfUnity,
    hk: &[LipFn],
    ys: &NormedSpace,
) -> Result<Sla> {
    if hk.len() != pou.len() {
        return Err(Error::Input(format!(
            "{} approximants for {} bumps",
            hk.len(),
            pou.len()
        )));
    }
    if hk
        .iter()
        .any(|f| f.din() != h.din() || f.dout() != h.dout())
    {
        return Err(Error::Input("approximant shape differs from h".into()));
    }
    if pou.is_empty() {
        return Ok(Sla {
            g: h.clone(),
            theta: 0.0,
            slope: 0.0,
            groups: 0,
            group_info: vec![],
            checked: 0,
        });
    }
    let per_axis = if h.din() <= 2 { 6 } else { 3 };
    let checks: Vec<Result<usize>> = (0..pou.len())
        .into_par_iter()
        .map(|k| {
            let pts = ball_lattice(&pou.centers[k], pou.radii[k], per_axis);
            for p in &pts {
                if !u.contains(p) {
                    return Err(Error::Premise(format!("supp φ_{k} leaves U at {p:?}")));
                }
                let err = ys.dist_f(&hk[k].eval_f(p), &h.eval_f(p));
                if err > pou.theta[k] * (1.0 + 1e-9) + 1e-12 {
                    return Err(Error::Premise(format!(
                        "piece {k} misses h by {err:.3e} > θ_{k} = {:.3e} at {p:?}",
                        pou.theta[k]
                    )));
                }
            }
            Ok(pts.len())
        })
        .collect();
    let mut checked = 0;
    for c in checks {
        checked += c?;
    }
    let mut groups: Vec<(LipFn, Vec<usize>)> = vec![];
    for (k, f) in hk.iter().enumerate() {
        match groups.iter_mut().find(|(g, _)| g.ptr_eq(f)) {
            Some((_, m)) => m.push(k),
            None => groups.push((f.clone(), vec![k])),
        }
    }
    let mut terms = vec![h.clone()];
    for (f, members) in &groups {
        if f.ptr_eq(h) {
            continue;
        }
        terms.push(LipFn::product(&pou.group(members.clone())?, &f.sub(h)?)?);
    }
    let n_groups = groups.len();
    let mut g = if terms.len() == 1 {
        h.clone()
    } else {
        LipFn::sum(terms)?
    };
    // The grouped sums Σ_{k∈group} φ_k form a coarser partition; the lemma
    // applies to either, so keep the smaller budget.
    let mut group_info = vec![];
    for (_, members) in &groups {
        let t = members.iter().map(|k| pou.theta[*k]).fold(0.0, f64::max);
        group_info.push((members.clone(), pou.group_lip(members)?, t));
    }
    let theta = pou
        .local_budget()
        .min(group_info.iter().map(|(_, l, t)| (1.0 + l) * t).sum());
    let slope = pou
        .slope_budget()
        .min(group_info.iter().map(|(_, l, t)| l * t).sum());
    let lips: Option<Vec<f64>> = std::iter::once(h)
        .chain(hk.iter())
        .map(|f| f.lip_bound())
        .collect();
    if let Some(l) = lips {
        let sup_k = l[1..].iter().copied().fold(0.0, f64::max);
        g = g.with_lip_bound(l[0].max(theta + sup_k));
    }
    Ok(Sla {
        g,
        theta,
        slope,
        groups: n_groups,
        group_info,
        checked,
    })
}

/// Largest excess of ‖Dh̃(x) − P‖ over η + Σ Lip φ_k 1_{supp φ_k}(x) θ_k at `pts`.
pub fn sla_derivative_excess(
    sla: &Sla,
    pou: &PartitionOfUnity,
    p: &Matrix,
    eta: f64,
    pts: &[Vec<f64>],
    xs: &NormedSpace,
    ys: &NormedSpace,
) -> f64 {
    let oracle = NormOracle::new(xs, ys);
    pts.par_iter()
        .map(|x| {
            let step = 1e-6 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let lhs = oracle.ub(&sla.g.jacobian_fd(x, step).sub(p));
            let inside = |k: usize| eucl(x, &pou.centers[k]) < pou.radii[k];
            let per_bump: f64 = (0..pou.len())
                .filter(|k| inside(*k))
                .map(|k| pou.lip[k] * pou.theta[k])
                .sum();
            let per_group: f64 = sla
                .group_info
                .iter()
                .filter(|(m, _, _)| m.iter().any(|k| inside(*k)))
                .map(|(_, l, t)| l * t)
                .sum();
            lhs - (eta + per_bump.min(per_group))
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Options for the local smoothing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmoothOptions {
    pub ndir: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for SmoothOptions {
    fn default() -> Self {
        SmoothOptions {
            ndir: DEFAULT_NDIR,
            m: DEFAULT_SMOOTH_M,
            seed: 7,
        }
    }
}

/// Result of smoothing a map around a compact set.
#[derive(Clone, Debug)]
pub struct Smoothed {
    pub g: LipFn,
    /// Directional smoothing of f used by every bump.
    pub h: LipFn,
    pub pou: PartitionOfUnity,
    /// H = B(E, ρ): g = f off H.
    pub region: Region,
    pub r: f64,
    pub rho: f64,
    /// ε after clamping to the geometric precondition.
    pub eps: f64,
    pub lip_f: f64,
    /// Per-bump budget θ_k.
    pub theta_k: f64,
    /// Johanis scale ε_J: |J_i| = ε_J / (2(Lip f + 1) 2^i).
    pub eps_j: f64,
    pub directions: Vec<Vec<f64>>,
    /// Half-widths used along the first d directions.
    pub widths: Vec<f64>,
    /// Lip(f)·Σ_{i>d} |J_i|/2 over the truncated directions.
    pub truncation: f64,
    pub sla: Sla,
}

impl Smoothed {
    /// Points where the assembled map is a combination of smooth pieces only.
    pub fn smooth_core(&self, x: &[f64]) -> bool {
        self.pou.covers(x)
    }
}

fn e_points(e: &Region, s: f64) -> Vec<Vec<f64>> {
    match e {
        Region::Points { points } => points.clone(),
        _ => e.sample(s),
    }
}

fn johanis_frame(xs: &NormedSpace, ndir: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = xs.dim();
    let all = directions(xs, ndir.saturating_sub(d), seed);
    // Keep the positive axes, then the random tail.
    let mut out: Vec<Vec<f64>> = all.iter().step_by(2).take(d).cloned().collect();
    out.extend(all.into_iter().skip(2 * d));
    out.truncate(ndir.max(d));
    out
}

/// Smooths f on a neighbourhood of the compact set E inside Q: the result
/// equals f off H = B(E, ρ), stays within ε of f, and Lip grows by at most ε.
pub fn smooth_around(
    e: &Region,
    q: &Region,
    f: &LipFn,
    eps: f64,
    xs: &NormedSpace,
    ys: &NormedSpace,
    opts: &SmoothOptions,
) -> Result<Smoothed> {
    let d = xs.dim();
    if f.din() != d || f.dout() != ys.dim() {
        return Err(Error::Input("map shape does not match the spaces".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Input("ε must be positive".into()));
    }
    let (lo, hi) = match e.bbox() {
        Some(b) => b,
        None if e.is_empty_kind() => {
            let pou = pou_from_balls(vec![], vec![], 1.0, xs)?;
            let sla = Sla {
                g: f.clone(),
                theta: 0.0,
                slope: 0.0,
                groups: 0,
                group_info: vec![],
                checked: 0,
            };
            return Ok(Smoothed {
                g: f.clone(),
                h: f.clone(),
                pou,
                region: Region::Empty,
                r: f64::INFINITY,
                rho: 0.0,
                eps,
                lip_f: 0.0,
                theta_k: 0.0,
                eps_j: 0.0,
                directions: vec![],
                widths: vec![],
                truncation: 0.0,
                sla,
            });
        }
        None => return Err(Error::Domain("E must be compact".into())),
    };
    let a = xs.euclid_consts().0;
    let sd = (d as f64).sqrt();
    let width = lo.iter().zip(&hi).map(|(x, y)| y - x).fold(0.0, f64::max);
    let s0 = (width / 16.0).max(1e-9);
    let slack0 = if matches!(e, Region::Points { .. }) {
        0.0
    } else {
        a * s0 * sd / 2.0
    };
    let coarse = e_points(e, s0);
    let r = coarse
        .iter()
        .map(|p| q.depth(p, xs))
        .fold(f64::INFINITY, f64::min)
        - slack0;
    if !(r > 0.0) {
        return Err(Error::Domain("no r > 0 with B(E, r) ⊆ Q".into()));
    }
    let r = r.min(1e6);
    let rho = r / 2.0;
    let eps_eff = eps.min(0.99 * (r - rho) / 2.0);
    let radius = rho / a;
    let s = 0.9 * radius / sd;
    let centers = e_points(e, s);
    let n = centers.len();
    let region = Region::Balls {
        space: xs.clone(),
        centers: centers.clone(),
        radii: vec![rho; n],
        open: true,
    };
    let pou = pou_from_balls(centers, vec![radius; n], 1.0, xs)?;
    let nbhd = boxed(
        lo.iter().map(|v| v - r).collect(),
        hi.iter().map(|v| v + r).collect(),
    );
    let lip_f = lip_of(f, &nbhd, xs, ys);
    let all: Vec<usize> = (0..pou.len()).collect();
    let theta_k = 0.5 * eps_eff / pou.local_weight().min(1.0 + pou.group_lip(&all)?);
    let pou = pou.with_uniform_theta(theta_k)?;
    let eps_j = if lip_f > 0.0 {
        eps_eff.min(4.0 * theta_k * (lip_f + 1.0) / lip_f)
    } else {
        eps_eff
    };
    let half = |i: usize| eps_j / (4.0 * (lip_f + 1.0) * 2f64.powi(i as i32));
    let dirs = johanis_frame(xs, opts.ndir, opts.seed);
    let widths: Vec<f64> = (1..=d).map(half).collect();
    let truncation = lip_f * (d + 1..=dirs.len()).map(half).sum::<f64>();
    let frame: Vec<Vec<f64>> = dirs[..d].to_vec();
    let h = if lip_f == 0.0 {
        f.clone()
    } else {
        LipFn::dir_smooth(f, frame, widths.clone(), opts.m)?.with_lip_bound(lip_f)
    };
    let f_l = f.with_lip_bound(lip_f);
    let hk = vec![h.clone(); pou.len()];
    let sla = sla_assemble(&f_l, &region, &pou, &hk, ys)?;
    Ok(Smoothed {
        g: sla.g.clone(),
        h,
        pou,
        region,
        r,
        rho,
        eps: eps_eff,
        lip_f,
        theta_k,
        eps_j,
        directions: dirs,
        widths,
        truncation,
        sla,
    })
}

/// Largest δ ∈ {θ, 2^{-1}, 2^{-2}, …} ∩ (0, θ] whose first-order Taylor
/// residual stays below (θ/2)‖y‖ for ‖y‖ ≤ δ on a test grid over E.
pub fn uniform_diff_radius(
    g: &LipFn,
    e: &Region,
    theta: f64,
    xs: &NormedSpace,
    ys: &NormedSpace,
) -> Result<f64> {
    uniform_diff_radius_to(g, e, theta, xs, ys, 30)
}

/// [`uniform_diff_radius`] scanning dyadic radii down to 2^{-max_j}. The
/// Jacobian is re-estimated at step δ/1024 for each candidate, and the scan
/// stops once δ falls below the coordinate resolution of E.
pub fn uniform_diff_radius_to(
    g: &LipFn,
    e: &Region,
    theta: f64,
    xs: &NormedSpace,
    ys: &NormedSpace,
    max_j: i32,
) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Input("θ must be positive".into()));
    }
    let pts = match e {
        Region::Points { points } => points.clone(),
        _ => {
            let w = e
                .bbox()
                .map(|(lo, hi)| lo.iter().zip(&hi).map(|(a, b)| b - a).fold(0.0, f64::max));
            match w {
                Some(w) => e.sample((w / 8.0).max(1e-9)),
                None if e.is_empty_kind() => vec![],
                None => return Err(Error::Domain("E must be compact".into())),
            }
        }
    };
    let dirs = directions(xs, 8, 11);
    let coord = pts
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let floor = if coord > 0.0 { 1e-12 * coord } else { 1e-280 };
    let passes = |delta: f64| -> bool {
        let step = (delta / 1024.0).max(floor * 1e-3);
        pts.par_iter().all(|p| {
            let gp = g.eval_f(p);
            let dg = g.jacobian_fd(p, step);
            dirs.iter().all(|u| {
                [1.0, 0.75, 0.5, 0.25, 0.125].iter().all(|f| {
                    let t = delta * f;
                    let y: Vec<f64> = u.iter().map(|c| c * t).collect();
                    let ny = xs.norm_f(&y);
                    let z: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a + b).collect();
                    let lin = dg.apply(&y);
                    let res: Vec<f64> = g
                        .eval_f(&z)
                        .iter()
                        .zip(&gp)
                        .zip(&lin)
                        .map(|((a, b), c)| a - b - c)
                        .collect();
                    ys.norm_f(&res) <= 0.5 * theta * ny * (1.0 + 1e-9) + 1e-15 * ny.min(1.0)
                })
            })
        })
    };
    if passes(theta) {
        return Ok(theta);
    }
    let mut j = (-theta.log2()).floor() as i32 + 1;
    while j <= max_j {
        let delta = 0.5f64.powi(j);
        if delta < floor {
            return Err(Error::Modulus(format!(
                "Taylor residual scan reached the coordinate resolution {floor:.1e} of E without passing"
            )));
        }
        if delta < theta && passes(delta) {
            return Ok(delta);
        }
        j += 1;
    }
    Err(Error::Modulus(format!(
        "Taylor residual scan failed down to 2^-{max_j}; g is likely not C¹ near E"
    )))
}

/// Options for the C¹ replacement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct C1Options {
    /// Lattice spacing of the bump centres; defaults to diam(V)/24.
    pub spacing: Option<f64>,
    pub m: usize,
}

impl Default for C1Options {
    fn default() -> Self {
        C1Options {
            spacing: None,
            m: DEFAULT_SMOOTH_M,
        }
    }
}

/// Result of the C¹ replacement.
#[derive(Clone, Debug)]
pub struct C1Replacement {
    pub f: LipFn,
    pub pou: PartitionOfUnity,
    /// Mollification radius shared by all bumps (0 when nothing was replaced).
    pub eps: f64,
    pub theta_k: f64,
    /// min ξ over the bump supports.
    pub xi_min: f64,
    pub lip_g: f64,
    pub lip_xi: f64,
    pub lip_psi: f64,
}

/// Replaces g on {ξ > 0} by a mollified copy so that the result is C¹ where
/// the bumps cover, equals g elsewhere, stays within θ of g and keeps
/// ‖Df − ψT‖ ≤ ξ(1 + θ).
#[allow(clippy::too_many_arguments)]
pub fn c1_replace(
    g: &LipFn,
    v: &Region,
    psi: &LipFn,
    t: &LinOp,
    xi: &LipFn,
    theta: f64,
    opts: &C1Options,
) -> Result<C1Replacement> {
    let (xs, ys) = (&t.dom, &t.cod);
    let d = xs.dim();
    if g.din() != d
        || g.dout() != ys.dim()
        || psi.din() != d
        || xi.din() != d
        || psi.dout() != 1
        || xi.dout() != 1
    {
        return Err(Error::Input("shapes of g, ψ, ξ and T disagree".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::Input("θ must be positive".into()));
    }
    let trivial = |pou: PartitionOfUnity| C1Replacement {
        f: g.clone(),
        pou,
        eps: 0.0,
        theta_k: 0.0,
        xi_min: 0.0,
        lip_g: 0.0,
        lip_xi: 0.0,
        lip_psi: 0.0,
    };
    if g.is_zero() {
        return Ok(trivial(pou_from_balls(vec![], vec![], 1.0, xs)?));
    }
    let Some((lo, hi)) = v.bbox() else {
        if v.is_empty_kind() {
            return Ok(trivial(pou_from_balls(vec![], vec![], 1.0, xs)?));
        }
        return Err(Error::Domain("V must be bounded".into()));
    };
    let a = xs.euclid_consts().0;
    let width = lo.iter().zip(&hi).map(|(x, y)| y - x).fold(0.0, f64::max);
    let s = opts.spacing.unwrap_or(width / 24.0);
    if !(s > 0.0) {
        return Err(Error::Input("bump spacing must be positive".into()));
    }
    let radius = s * (d as f64).sqrt();
    let lip_xi = lip_of(xi, v, xs, &NormedSpace::euclidean(1));
    let n = ((width / s).ceil() as usize).max(1);
    let lattice = crate::region::lattice_in(&lo, &hi, n);
    let kept: Vec<(Vec<f64>, f64)> = lattice
        .into_par_iter()
        .filter_map(|c| {
            let margin = a * radius;
            let x = xi.eval_f(&c)[0];
            let inner = x - lip_xi * margin;
            (v.contains(&c) && v.depth(&c, xs) > margin && inner > 0.0).then_some((c, inner))
        })
        .collect();
    if kept.is_empty() {
        return Ok(trivial(pou_from_balls(vec![], vec![], 1.0, xs)?));
    }
    let xi_min = kept.iter().map(|k| k.1).fold(f64::INFINITY, f64::min);
    let depth_min = kept
        .iter()
        .map(|k| v.depth(&k.0, xs))
        .fold(f64::INFINITY, f64::min)
        - a * radius;
    let centers: Vec<Vec<f64>> = kept.into_iter().map(|k| k.0).collect();
    let n = centers.len();
    let pou = pou_from_balls(centers, vec![radius; n], 1.0, xs)?;
    let lip_g = lip_of(g, v, xs, ys);
    let lip_psi = lip_of(psi, v, xs, &NormedSpace::euclidean(1));
    let all: Vec<usize> = (0..pou.len()).collect();
    let lam = pou.local_weight().min(1.0 + pou.group_lip(&all)?);
    let drift = lip_xi + t.opnorm_ub * lip_psi;
    let mut eps = (depth_min / a).max(0.0);
    if drift > 0.0 {
        eps = eps.min(xi_min * theta / (2.0 * a * drift));
    }
    if lip_g > 0.0 {
        eps = eps
            .min(xi_min * theta / (2.0 * a * lip_g * lam))
            .min(theta / (a * lip_g * lam));
    }
    if !(eps > 1e-12) {
        return Err(Error::Budget(format!(
            "mollification radius {eps:.3e} below resolution; bumps too steep for θ"
        )));
    }
    let theta_k = a * lip_g * eps;
    let pou = pou.with_uniform_theta(theta_k)?;
    let h = LipFn::mollify(g, eps, opts.m)?;
    let u = Region::Balls {
        space: NormedSpace::euclidean(d),
        centers: pou.centers.clone(),
        radii: vec![radius * (1.0 + 1e-9); pou.len()],
        open: false,
    };
    let hk = vec![h; pou.len()];
    let sla = sla_assemble(g, &u, &pou, &hk, ys)?;
    Ok(C1Replacement {
        f: sla.g,
        pou,
        eps,
        theta_k,
        xi_min,
        lip_g,
        lip_xi,
        lip_psi,
    })
}

/// max over `pts` of ‖Df(x) − ψ(x)T‖ − ξ(x)(1 + θ), using central differences.
pub fn c1_replace_excess(
    f: &LipFn,
    psi: &LipFn,
    t: &LinOp,
    xi: &LipFn,
    theta: f64,
    pts: &[Vec<f64>],
) -> f64 {
    let oracle = NormOracle::new(&t.dom, &t.cod);
    pts.par_iter()
        .map(|x| {
            let step = 1e-6 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let j = f.jacobian_fd(x, step);
            let lhs = oracle.ub(&j.sub(&t.matrix.scaled(psi.eval_f(x)[0])));
            lhs - xi.eval_f(x)[0] * (1.0 + theta)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

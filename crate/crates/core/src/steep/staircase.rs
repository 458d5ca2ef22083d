//! ψ-maps, sequences of them and the pu game step over finite sets E.
//!
//! For a point p the stage maps are g_i(x) = b_i(x)·Σ_l σ_{r_i}(T_l(x − p))·w_l
//! with b_i a plateau bump of radius R_i around p, σ the monotone clamp of
//! [`crate::func::ramp`] and T = Σ_l w_l ⊗ T_l a cylinder decomposition. On
//! B(p, ρ_i) every clamp is the identity and b_i = 1, so Dg_i = T exactly.
//! Radii halve from one stage to the next, so each point carries its own
//! local coordinates y = x − p and all certificates run in them.

use crate::cylinder::cyl_constant;
use crate::error::{Error, Result};
use crate::func::{LipFn, PLATEAU_SLOPE};
use crate::operator::{LinOp, Matrix, NormOracle};
use crate::region::Region;
use crate::smooth::{lip_of, pou_from_balls, uniform_diff_radius_to, PartitionOfUnity};
use crate::space::NormedSpace;
use crate::verify::directions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Relative shrink applied to every radius so that closures stay inside.
pub const RADIUS_SLACK: f64 = 1e-3;
/// Radii below this are treated as beyond f64 resolution.
pub const MIN_RADIUS: f64 = 1e-280;
pub const MAX_STAGES: usize = 4096;
/// Lipschitz room granted to the bump term of each stage map (C − 𝔠 = 5).
pub const STAGE_LIP_ROOM: f64 = 5.0;
/// Deepest dyadic radius tried when choosing δ in the game step.
pub const MAX_DELTA_EXP: i32 = 1000;

fn finite_points(e: &Region) -> Result<Vec<Vec<f64>>> {
    match e {
        Region::Empty => Ok(vec![]),
        Region::Points { points } => Ok(points.clone()),
        _ => Err(Error::Input(
            "staircase constructions take E as a finite point set; Cantor sets need nested covers below f64 resolution"
                .into(),
        )),
    }
}

fn eucl(y: &[f64]) -> f64 {
    let m = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * y.iter().map(|v| (v / m).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub enum PsiRegime {
    /// T = 0: f ≡ 0 and ψ = φ·1_H with H = B(E, η).
    ZeroOperator,
    /// ‖T‖ ≤ η: f ≡ 0 already satisfies ‖Df − ψT‖ ≤ ‖T‖ ≤ η.
    SmallOperator,
    /// k-level staircase.
    Staircase,
}

/// Stage data of one point of E.
#[derive(Clone, Debug, Serialize)]
pub struct PointStages {
    pub point: Vec<f64>,
    pub phi_at: f64,
    /// Euclidean radius of a ball around p inside H_1 = B(E, η), at most half
    /// the gap to the other points.
    pub rho1: f64,
    /// (R_i, ρ_i, r_i) for stages i = 2, 3, …: bump radius, radius of the
    /// Euclidean ball H_i around p, clamp half-width.
    pub stages: Vec<(f64, f64, f64)>,
    /// (1/k)Σ_i g_i in local coordinates, already multiplied by the rescale factor.
    #[serde(skip)]
    pub local: LipFn,
}

impl PointStages {
    /// FD step resolving every stage map that is active at offset y.
    pub fn fd_step(&self, y: &[f64]) -> f64 {
        let ny = eucl(y);
        let feature = self
            .stages
            .iter()
            .filter(|s| s.0 > ny)
            .map(|s| s.1)
            .fold(ny, f64::min);
        (feature * 1e-5).max(MIN_RADIUS * 1e-6)
    }
}

/// ψ together with the j(x), G_i, H_i data it is read from.
#[derive(Clone, Debug, Serialize)]
pub struct PsiMap {
    #[serde(skip)]
    pub phi: LipFn,
    pub k: usize,
    pub eta: f64,
    pub regime: PsiRegime,
    #[serde(skip)]
    pub space: NormedSpace,
    /// Lipschitz constant of φ used for radii (X norm).
    pub lip_phi: f64,
    pub points: Vec<PointStages>,
}

/// Membership data of one point x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiLevels {
    pub in_g1: bool,
    /// Largest i with x ∈ H_i (0 outside H_1).
    pub h: usize,
    /// j(x) on G_1, 0 outside.
    pub j: usize,
    pub psi: f64,
    pub in_h: bool,
}

impl PsiMap {
    fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, self.space.dist_f(x, &p.point)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Levels at x = p_i + y given φ(x); `dist_e` is dist(x, E).
    pub fn levels_local(&self, i: usize, y: &[f64], dist_e: f64, phi: f64) -> PsiLevels {
        let in_g1 = dist_e < self.eta;
        if !in_g1 {
            return PsiLevels {
                in_g1,
                h: 0,
                j: 0,
                psi: 0.0,
                in_h: false,
            };
        }
        if self.regime != PsiRegime::Staircase {
            return PsiLevels {
                in_g1,
                h: 1,
                j: 1,
                psi: phi,
                in_h: true,
            };
        }
        let k = self.k;
        let ny = eucl(y);
        let h = 1 + self.points[i]
            .stages
            .iter()
            .take_while(|s| ny < s.1)
            .count();
        let kf = k as f64;
        // Largest i with φ > (i − 1)/k.
        let a = {
            let t = kf * phi;
            let c = t.ceil();
            if c == t {
                t as usize
            } else {
                c as usize
            }
        };
        let j = a.min(h + 1).min(k - 1).max(1);
        let psi = ((j as f64 + 2.0) / kf).min(phi);
        let hc = h.min(k - 1);
        let in_h = phi < (hc as f64 + 2.0) / kf;
        PsiLevels {
            in_g1,
            h,
            j,
            psi,
            in_h,
        }
    }

    pub fn levels(&self, x: &[f64]) -> PsiLevels {
        let phi = self.phi.eval_f(x)[0];
        match self.nearest(x) {
            None => PsiLevels {
                in_g1: false,
                h: 0,
                j: 0,
                psi: 0.0,
                in_h: false,
            },
            Some((i, d)) => {
                let y: Vec<f64> = x
                    .iter()
                    .zip(&self.points[i].point)
                    .map(|(a, b)| a - b)
                    .collect();
                self.levels_local(i, &y, d, phi)
            }
        }
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        self.levels(x).psi
    }

    pub fn in_h(&self, x: &[f64]) -> bool {
        self.levels(x).in_h
    }

    /// dist(x, E) < η.
    pub fn in_ball(&self, x: &[f64]) -> bool {
        self.nearest(x).is_some_and(|(_, d)| d < self.eta)
    }

    /// A radius s with B̄(p_i, s) ⊆ H (X norm).
    pub fn inner_radius(&self, i: usize) -> f64 {
        let p = &self.points[i];
        if self.regime != PsiRegime::Staircase {
            return self.eta;
        }
        let (_, b) = self.space.euclid_consts();
        let kf = self.k as f64;
        let mut best: f64 = 0.0;
        let mut radii = vec![p.rho1.min(self.eta)];
        radii.extend(p.stages.iter().map(|s| s.1 / b));
        for (idx, rad) in radii.iter().enumerate() {
            let jj = idx + 1;
            if jj > self.k - 1 {
                break;
            }
            let room = (jj as f64 + 2.0) / kf - p.phi_at;
            if room <= 0.0 {
                continue;
            }
            let s = if self.lip_phi > 0.0 {
                rad.min(room / self.lip_phi)
            } else {
                *rad
            };
            best = best.max(s);
        }
        best * (1.0 - RADIUS_SLACK)
    }
}

/// Output of [`build_psi_map`].
#[derive(Clone, Debug, Serialize)]
pub struct PsiOutput {
    #[serde(skip)]
    pub f: LipFn,
    pub psi: PsiMap,
    /// ‖T‖ factor removed before the construction (1 when ‖T‖ ≤ 1).
    pub scale: f64,
    /// η/scale, the tolerance used internally.
    pub eta_internal: f64,
    /// min{1, η_internal/5}.
    pub theta: f64,
    /// C = max(𝔠(T), vertex bound) + 5.
    pub c_const: f64,
    pub cyl: f64,
    /// Proven bound on ‖Df − ψT‖ a.e.
    pub deriv_bound: f64,
    /// Proven bound on ‖f‖_∞.
    pub sup_bound: f64,
    pub lip_bound: f64,
}

/// Cylinder decomposition T = Σ_l w_l ⊗ T_l: (T_l rows, w_l, vertex bound
/// max_S ‖Σ_{l∈S} w_l ⊗ T_l‖, 𝔠(T)).
fn decompose(t: &LinOp) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, f64, f64)> {
    let cyl = cyl_constant(t, 16)?;
    let d = t.dom.dim();
    let l = t.cod.dim();
    let rows = t.matrix.to_rows();
    let funcs: Vec<Vec<f64>> = cyl
        .duals
        .iter()
        .map(|ws| {
            (0..d)
                .map(|j| (0..l).map(|k| ws[k] * rows[k][j]).sum())
                .collect()
        })
        .collect();
    let oracle = NormOracle::new(&t.dom, &t.cod);
    let n = funcs.len();
    let mut vertex: f64 = 0.0;
    for mask in 1usize..(1 << n) {
        let mut m = Matrix::zeros(l, d);
        for (idx, (f, w)) in funcs.iter().zip(&cyl.basis).enumerate() {
            if mask >> idx & 1 == 1 {
                for a in 0..l {
                    for b in 0..d {
                        m.data[a * d + b] += w[a] * f[b];
                    }
                }
            }
        }
        vertex = vertex.max(oracle.ub(&m));
    }
    Ok((funcs, cyl.basis, vertex, cyl.value))
}

/// ψ-map for a finite E (see the module docs). φ must map into [0, 1]; its
/// Lipschitz constant is read from its attached bound, else estimated on B(E, η).
pub fn build_psi_map(e: &Region, eta: f64, phi: &LipFn, t: &LinOp) -> Result<PsiOutput> {
    let xs = &t.dom;
    let ys = &t.cod;
    let d = xs.dim();
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Input("η must be positive".into()));
    }
    if phi.din() != d || phi.dout() != 1 {
        return Err(Error::Input("φ must be a scalar function on X".into()));
    }
    let pts = finite_points(e)?;
    if pts.iter().any(|p| p.len() != d) {
        return Err(Error::Input("points of E have the wrong dimension".into()));
    }
    let phis: Vec<f64> = pts.iter().map(|p| phi.eval_f(p)[0]).collect();
    if phis.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input("φ must take values in [0, 1]".into()));
    }
    let (a_e, b_e) = xs.euclid_consts();
    let around = if pts.is_empty() {
        Region::Empty
    } else {
        Region::Balls {
            space: xs.clone(),
            centers: pts.clone(),
            radii: vec![eta; pts.len()],
            open: true,
        }
    };
    let lip_phi = if pts.is_empty() {
        0.0
    } else {
        lip_of(phi, &around, xs, &NormedSpace::euclidean(1))
    };
    let rho1: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gap = pts
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| eucl(&p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            (eta / a_e).min(gap / 2.0) * (1.0 - RADIUS_SLACK)
        })
        .collect();
    let trivial = |regime: PsiRegime, scale: f64, deriv: f64| PsiOutput {
        f: LipFn::zero(d, ys.dim()).with_lip_bound(0.0),
        psi: PsiMap {
            phi: phi.clone(),
            k: 0,
            eta,
            regime,
            space: xs.clone(),
            lip_phi,
            points: pts
                .iter()
                .zip(&phis)
                .zip(&rho1)
                .map(|((p, v), r)| PointStages {
                    point: p.clone(),
                    phi_at: *v,
                    rho1: *r,
                    stages: vec![],
                    local: LipFn::zero(d, ys.dim()),
                })
                .collect(),
        },
        scale,
        eta_internal: eta / scale,
        theta: (eta / scale / 5.0).min(1.0),
        c_const: 0.0,
        cyl: 0.0,
        deriv_bound: deriv,
        sup_bound: 0.0,
        lip_bound: 0.0,
    };
    if t.is_zero() {
        return Ok(trivial(PsiRegime::ZeroOperator, 1.0, 0.0));
    }
    let scale = t.opnorm_ub.max(1.0);
    if t.opnorm_ub <= eta {
        return Ok(trivial(PsiRegime::SmallOperator, scale, t.opnorm_ub));
    }
    let t1 = t.scaled(1.0 / scale);
    let eta1 = eta / scale;
    let theta = (eta1 / 5.0).min(1.0);
    let (funcs, basis, vertex, cyl) = decompose(&t1)?;
    let c_const = cyl.max(vertex) + STAGE_LIP_ROOM;
    let k = (c_const / theta).ceil() as usize;
    if k > MAX_STAGES {
        return Err(Error::Resolution(format!(
            "staircase needs k = {k} levels (> {MAX_STAGES}); raise η"
        )));
    }
    let kf = k as f64;
    let w_sum: f64 = basis.iter().map(|w| ys.norm_f(w)).sum();
    let t_max = funcs.iter().map(|f| eucl(f)).fold(0.0, f64::max);
    let lip_phi2 = lip_phi * a_e;
    let mut points = vec![];
    for ((p, &v), &r1) in pts.iter().zip(&phis).zip(&rho1) {
        let mut stages = vec![];
        let mut terms = vec![];
        let mut prev = r1;
        for i in 2..k {
            if v < i as f64 / kf {
                break;
            }
            let room = v - (i as f64 - 1.0) / kf;
            let cap = if lip_phi2 > 0.0 {
                room / lip_phi2
            } else {
                f64::INFINITY
            };
            let big_r = prev.min(cap) * (1.0 - RADIUS_SLACK);
            let sup =
                theta.min(STAGE_LIP_ROOM * big_r / (PLATEAU_SLOPE * b_e)) * (1.0 - RADIUS_SLACK);
            let r = sup / (1.5 * w_sum);
            let rho = (big_r / 2.0).min(r / t_max) * (1.0 - RADIUS_SLACK);
            if !(rho > MIN_RADIUS) {
                return Err(Error::Resolution(format!(
                    "stage {i} of {k} needs radius {rho:.2e} around {p:?}, below f64 resolution; raise η"
                )));
            }
            let ramp = LipFn::ramp(r)?;
            let mut pieces = vec![];
            for (f, w) in funcs.iter().zip(&basis) {
                let lin = LipFn::affine(Matrix::new(1, d, f.clone())?, vec![0.0])?;
                let s = LipFn::compose(&ramp, &lin)?;
                pieces.push(LipFn::product(&s, &LipFn::constant(d, w.clone())?)?);
            }
            terms.push(LipFn::product(
                &LipFn::bump(vec![0.0; d], big_r)?,
                &LipFn::sum(pieces)?,
            )?);
            stages.push((big_r, rho, r));
            prev = rho;
        }
        let local = if terms.is_empty() {
            LipFn::zero(d, ys.dim())
        } else {
            LipFn::scale(scale / kf, &LipFn::sum(terms)?)?
        };
        points.push(PointStages {
            point: p.clone(),
            phi_at: v,
            rho1: r1,
            stages,
            local,
        });
    }
    let parts: Vec<LipFn> = points
        .iter()
        .filter(|p| !p.stages.is_empty())
        .map(|p| {
            let back: Vec<f64> = p.point.iter().map(|v| -v).collect();
            LipFn::compose(&p.local, &LipFn::shift(&back)?)
        })
        .collect::<Result<_>>()?;
    let max_stages = points.iter().map(|p| p.stages.len()).max().unwrap_or(0) as f64;
    let lip_bound = scale * c_const * max_stages / kf;
    let f = if parts.is_empty() {
        LipFn::zero(d, ys.dim()).with_lip_bound(0.0)
    } else {
        LipFn::sum(parts)?.with_lip_bound(lip_bound)
    };
    Ok(PsiOutput {
        f,
        psi: PsiMap {
            phi: phi.clone(),
            k,
            eta,
            regime: PsiRegime::Staircase,
            space: xs.clone(),
            lip_phi,
            points,
        },
        scale,
        eta_internal: eta1,
        theta,
        c_const,
        cyl,
        deriv_bound: scale * 4.0 * c_const / kf,
        sup_bound: scale * theta * max_stages / kf,
        lip_bound,
    })
}

/// Sample sites: (x, owner point, local offset) with x = p + y.
fn psi_samples(psi: &PsiMap, n: usize, seed: u64) -> Vec<(usize, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = psi.space.dim();
    let (_, b) = psi.space.euclid_consts();
    let mut out = vec![];
    if psi.points.is_empty() {
        return out;
    }
    for s in 0..n {
        let i = rng.gen_range(0..psi.points.len());
        let p = &psi.points[i];
        // Scales: the η-ball, ρ₁, and every stage radius.
        let mut scales = vec![psi.eta * b * 1.2, p.rho1];
        for st in &p.stages {
            scales.push(st.0);
            scales.push(st.1);
        }
        let base = scales[if s % 4 == 0 {
            0
        } else {
            rng.gen_range(0..scales.len())
        }];
        let r = base * rng.gen_range(0.05..1.6);
        let mut u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
        let nu = eucl(&u).max(1e-300);
        u.iter_mut().for_each(|c| *c *= r / nu);
        out.push((i, u));
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiCert {
    pub samples: usize,
    pub e_in_h: bool,
    /// H ⊆ B(E, η) on samples.
    pub h_in_ball: bool,
    pub sup: f64,
    /// f ≠ 0 only where φ > 0.
    pub support_ok: bool,
    /// max ‖Df − ψT‖ at samples.
    pub deriv_max: f64,
    pub sandwich_ok: bool,
    pub psi_eq_phi_on_h: bool,
    pub pass: bool,
}

/// Samples properties (i), (iii)–(vi) at `n` multi-scale sites in local
/// coordinates around each point. f is C^∞ by construction, which covers (ii).
pub fn certify_psi_map(out: &PsiOutput, t: &LinOp, n: usize, seed: u64) -> PsiCert {
    let psi = &out.psi;
    let oracle = NormOracle::new(&t.dom, &t.cod);
    let e_in_h = psi.points.iter().all(|p| psi.in_h(&p.point));
    let sites = psi_samples(psi, n, seed);
    let rows: Vec<(bool, f64, bool, f64, bool, bool)> = sites
        .par_iter()
        .map(|(i, y)| {
            let p = &psi.points[*i];
            let x: Vec<f64> = p.point.iter().zip(y).map(|(a, b)| a + b).collect();
            let phi = psi.phi.eval_f(&x)[0];
            let dist = psi
                .points
                .iter()
                .enumerate()
                .map(|(j, q)| {
                    if j == *i {
                        psi.space.norm_f(y)
                    } else {
                        psi.space.dist_f(&x, &q.point)
                    }
                })
                .fold(f64::INFINITY, f64::min);
            let lv = psi.levels_local(*i, y, dist, phi);
            // Local evaluation is exact for the owning point; other points'
            // stage maps vanish on the ρ₁-ball and are added globally outside it.
            let near = eucl(y) < p.rho1;
            let fx = if near {
                p.local.eval_f(y)
            } else {
                out.f.eval_f(&x)
            };
            let fnorm = t.cod.norm_f(&fx);
            let mut step = p.fd_step(y);
            if !near {
                step = step.max(1e-12 * x.iter().fold(0.0f64, |a, v| a.max(v.abs())));
            }
            let jac = if near {
                p.local.jacobian_fd(y, step)
            } else {
                out.f.jacobian_fd(&x, step)
            };
            let dev = oracle.ub(&jac.sub(&t.matrix.scaled(lv.psi)));
            let h_ok = !lv.in_h || dist < psi.eta;
            let sandwich = (if lv.in_h { phi } else { 0.0 }) <= lv.psi + 1e-15
                && lv.psi <= (if dist < psi.eta { phi } else { 0.0 }) + 1e-15;
            let eq = !lv.in_h || (lv.psi - phi).abs() <= 1e-15;
            (h_ok, fnorm, fnorm == 0.0 || phi > 0.0, dev, sandwich, eq)
        })
        .collect();
    let h_in_ball = rows.iter().all(|r| r.0);
    let sup = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let support_ok = rows.iter().all(|r| r.2);
    let deriv_max = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    let sandwich_ok = rows.iter().all(|r| r.4);
    let psi_eq_phi_on_h = rows.iter().all(|r| r.5);
    let eta = psi.eta;
    let pass = e_in_h
        && h_in_ball
        && sup <= eta
        && support_ok
        && deriv_max <= eta * (1.0 + 1e-6)
        && sandwich_ok
        && psi_eq_phi_on_h;
    PsiCert {
        samples: rows.len(),
        e_in_h,
        h_in_ball,
        sup,
        support_ok,
        deriv_max,
        sandwich_ok,
        psi_eq_phi_on_h,
        pass,
    }
}

// ---- sequences ------------------------------------------------------------

/// One schedule entry (T_k, φ_k, θ_k).
#[derive(Clone, Debug)]
pub struct SeqStep {
    pub t: LinOp,
    pub phi: LipFn,
    pub theta: f64,
}

#[derive(Clone, Debug)]
pub struct SeqItem {
    pub eta: f64,
    pub theta: f64,
    pub t: LinOp,
    pub f: LipFn,
    pub map: PsiOutput,
}

/// H_0 ⊇ H_1 ⊇ … with f_j = f_{j−1} + g_j.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub points: Vec<Vec<f64>>,
    pub h0: Region,
    pub f0: LipFn,
    pub eta: f64,
    pub items: Vec<SeqItem>,
}

impl Sequence {
    pub fn f(&self, j: usize) -> &LipFn {
        if j == 0 {
            &self.f0
        } else {
            &self.items[j - 1].f
        }
    }

    pub fn in_h(&self, j: usize, x: &[f64]) -> bool {
        if j == 0 {
            self.h0.contains(x)
        } else {
            self.items[j - 1].map.psi.in_h(x)
        }
    }

    pub fn psi(&self, j: usize, x: &[f64]) -> f64 {
        self.items[j - 1].map.psi.psi(x)
    }
}

/// Iterates [`build_psi_map`] with η_j = min{2^{-j}η, θ_j} further capped so
/// that B̄(E, η_j) ⊆ H_{j−1}.
pub fn build_sequence(
    e: &Region,
    h0: &Region,
    f0: &LipFn,
    eta: f64,
    schedule: &[SeqStep],
) -> Result<Sequence> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Input("η must lie in (0, 1)".into()));
    }
    let pts = finite_points(e)?;
    let xs = schedule.first().map(|s| s.t.dom.clone());
    if let Some(xs) = &xs {
        if pts
            .iter()
            .any(|p| !h0.contains(p) || h0.depth(p, xs) <= 0.0)
        {
            return Err(Error::Input("E must lie in the open set H₀".into()));
        }
    }
    let mut items: Vec<SeqItem> = vec![];
    for (idx, step) in schedule.iter().enumerate() {
        let j = idx + 1;
        if !(step.theta > 0.0) {
            return Err(Error::Input(format!("θ_{j} must be positive")));
        }
        if step.t.dom.dim() != f0.din() || step.t.cod.dim() != f0.dout() {
            return Err(Error::Input(format!("T_{j} does not match f₀")));
        }
        let inner = match items.last() {
            None => pts
                .iter()
                .map(|p| h0.depth(p, &step.t.dom))
                .fold(f64::INFINITY, f64::min),
            Some(it) => (0..pts.len())
                .map(|i| it.map.psi.inner_radius(i))
                .fold(f64::INFINITY, f64::min),
        };
        let eta_j = (eta * 0.5f64.powi(j as i32))
            .min(step.theta)
            .min(inner * (1.0 - RADIUS_SLACK));
        if !(eta_j > 0.0) {
            return Err(Error::Resolution(format!(
                "step {j}: H_{} leaves no room around E",
                j - 1
            )));
        }
        let map = build_psi_map(e, eta_j, &step.phi, &step.t)?;
        let prev = items.last().map_or(f0, |it| &it.f);
        let f = if map.f.is_zero() {
            prev.clone()
        } else {
            prev.add(&map.f)?
        };
        items.push(SeqItem {
            eta: eta_j,
            theta: step.theta,
            t: step.t.clone(),
            f,
            map,
        });
    }
    Ok(Sequence {
        points: pts,
        h0: h0.clone(),
        f0: f0.clone(),
        eta,
        items,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeqCert {
    pub samples: usize,
    pub nested: bool,
    /// max_j sup|f_j − f_{j−1}| / θ_j.
    pub step_ratio: f64,
    /// f_j = f_{j−1} wherever φ_j = 0.
    pub frozen_ok: bool,
    pub sandwich_ok: bool,
    /// max over samples and j of ‖Df_j − L‖ − ‖Df₀ + Σψ_kT_k − L‖.
    pub telescoping_excess: f64,
    pub pass: bool,
}

/// Samples (i)–(iii) and the telescoping inequality for the caller's L at
/// `n` sites: uniform ones in B(E, 2η₁) ∩ H₀ and multi-scale ones around E
/// down to the coordinate resolution of E.
pub fn certify_sequence(seq: &Sequence, l: &Matrix, n: usize, seed: u64) -> SeqCert {
    let Some(first) = seq.items.first() else {
        return SeqCert {
            samples: 0,
            nested: true,
            step_ratio: 0.0,
            frozen_ok: true,
            sandwich_ok: true,
            telescoping_excess: f64::NEG_INFINITY,
            pass: true,
        };
    };
    let xs = &first.t.dom;
    let ys = &first.t.cod;
    let oracle = NormOracle::new(xs, ys);
    let d = xs.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = seq
        .points
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let floor = if coord > 0.0 { 1e-11 * coord } else { 1e-200 };
    let outer = 2.0 * first.eta * xs.euclid_consts().1;
    let sites: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            let p = &seq.points[rng
                .gen_range(0..seq.points.len().max(1))
                .min(seq.points.len().saturating_sub(1))];
            let r = if s % 2 == 0 {
                outer * rng.gen::<f64>()
            } else {
                let lo = floor.max(1e-300).log10();
                let hi = outer.log10();
                10f64.powf(rng.gen_range(lo.min(hi)..=hi))
            };
            let mut u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
            let nu = eucl(&u).max(1e-300);
            u.iter_mut().for_each(|c| *c *= r / nu);
            p.iter().zip(&u).map(|(a, b)| a + b).collect()
        })
        .filter(|x: &Vec<f64>| seq.h0.contains(x))
        .collect();
    let jmax = seq.items.len();
    let rows: Vec<(bool, f64, bool, bool, f64)> = sites
        .par_iter()
        .map(|x| {
            let mut nested = true;
            let mut ratio: f64 = 0.0;
            let mut frozen = true;
            let mut sandwich = true;
            let mut excess = f64::NEG_INFINITY;
            let dist = seq
                .points
                .iter()
                .map(|p| eucl(&x.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            let step = (dist * 1e-4).max(floor * 1e-2).min(1e-6);
            let df0 = seq.f0.jacobian_fd(x, step);
            let mut acc = df0.clone();
            for j in 1..=jmax {
                let it = &seq.items[j - 1];
                let hj = seq.in_h(j, x);
                let hprev = seq.in_h(j - 1, x);
                nested &= !hj || hprev;
                let a = seq.f(j).eval_f(x);
                let b = seq.f(j - 1).eval_f(x);
                let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
                ratio = ratio.max(ys.norm_f(&diff) / it.theta);
                let phi = it.map.psi.phi.eval_f(x)[0];
                if phi == 0.0 {
                    frozen &= a == b;
                }
                let psi = it.map.psi.psi(x);
                sandwich &= (if hj { phi } else { 0.0 }) <= psi + 1e-15
                    && psi <= (if hprev { phi } else { 0.0 }) + 1e-15;
                acc = acc.add(&it.t.matrix.scaled(psi));
                let dfj = seq.f(j).jacobian_fd(x, step);
                let lhs = oracle.ub(&dfj.sub(l));
                let rhs = oracle.ub(&acc.sub(l)) + seq.eta;
                excess = excess.max(lhs - rhs);
            }
            (nested, ratio, frozen, sandwich, excess)
        })
        .collect();
    let nested = rows.iter().all(|r| r.0)
        && seq
            .points
            .iter()
            .all(|p| (0..=jmax).all(|j| seq.in_h(j, p)));
    let step_ratio = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let frozen_ok = rows.iter().all(|r| r.2);
    let sandwich_ok = rows.iter().all(|r| r.3);
    let telescoping_excess = rows.iter().map(|r| r.4).fold(f64::NEG_INFINITY, f64::max);
    let pass =
        nested && step_ratio <= 1.0 && frozen_ok && sandwich_ok && telescoping_excess <= 1e-6;
    SeqCert {
        samples: rows.len(),
        nested,
        step_ratio,
        frozen_ok,
        sandwich_ok,
        telescoping_excess,
        pass,
    }
}

// ---- game step --------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GameStep {
    pub g: LipFn,
    /// g is C¹ on U = H: f is C¹ there and every added stage map is C^∞.
    pub u: Region,
    pub delta: f64,
    pub zeta: f64,
    pub rho: f64,
    pub tau: f64,
    pub lip_f: f64,
    pub pou: PartitionOfUnity,
    pub seq: Sequence,
}

/// First τ = ρ·2^{-m} with ‖Df(y) − Df(x)‖ ≤ ζ/2 on sampled pairs of
/// B̄(E, ρ) at distance ≤ 2τ.
fn modulus_scan(
    f: &LipFn,
    pts: &[Vec<f64>],
    rho: f64,
    zeta: f64,
    xs: &NormedSpace,
    ys: &NormedSpace,
) -> Result<f64> {
    let oracle = NormOracle::new(xs, ys);
    let d = xs.dim();
    let b = xs.euclid_consts().1;
    for m in 1..60 {
        let tau = rho * 0.5f64.powi(m);
        let worst = (0..256usize)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(0x7a0 ^ (s as u64) << 8 ^ m as u64);
                let p = &pts[s % pts.len()];
                let mut draw = |r: f64| {
                    let mut u: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() - 0.5).collect();
                    let nu = eucl(&u).max(1e-300);
                    let t = r * rng.gen::<f64>();
                    u.iter_mut().for_each(|c| *c *= t / nu);
                    u
                };
                let x: Vec<f64> = p.iter().zip(draw(rho / b)).map(|(a, c)| a + c).collect();
                let y: Vec<f64> = x
                    .iter()
                    .zip(draw(2.0 * tau / b))
                    .map(|(a, c)| a + c)
                    .collect();
                let step = (tau * 1e-3).max(1e-9);
                oracle.ub(&f.jacobian_fd(&x, step).sub(&f.jacobian_fd(&y, step)))
            })
            .reduce(|| 0.0, f64::max);
        if worst <= zeta / 2.0 {
            return Ok(tau);
        }
    }
    Err(Error::Modulus(
        "Df varies by more than ζ/2 at every scanned scale".into(),
    ))
}

/// One step of the pu game: g ∈ Lip₁ ∩ C¹(U) within θ of f whose slope at E
/// is T up to θδ for every h with ‖h − g‖_∞ ≤ θδ/8.
pub fn bmgame_step_pu(
    e: &Region,
    h: &Region,
    q: &Region,
    theta: f64,
    f: &LipFn,
    t: &LinOp,
) -> Result<GameStep> {
    let xs = &t.dom;
    let ys = &t.cod;
    if !(theta > 0.0) {
        return Err(Error::Input("θ must be positive".into()));
    }
    let pts = finite_points(e)?;
    if pts.is_empty() {
        return Err(Error::Input("E is empty".into()));
    }
    let lip_f = lip_of(f, q, xs, ys);
    if lip_f >= 1.0 {
        return Err(Error::Hypothesis(format!(
            "Lip(f) ≤ {lip_f:.4} is not below 1"
        )));
    }
    if t.opnorm_ub >= 1.0 {
        return Err(Error::Hypothesis(format!(
            "‖T‖ ≤ {:.4} is not below 1",
            t.opnorm_ub
        )));
    }
    let zeta = ((1.0 - lip_f.max(t.opnorm_ub)) / 3.0).min(theta / 4.0);
    let rho = 0.99
        * pts
            .iter()
            .map(|p| h.depth(p, xs))
            .fold(f64::INFINITY, f64::min);
    if !(rho > 0.0) {
        return Err(Error::Input("E must lie in the open set H".into()));
    }
    let tau = modulus_scan(f, &pts, rho, zeta, xs, ys)?;
    let a = xs.euclid_consts().0;
    let pou = pou_from_balls(
        pts.clone(),
        vec![tau / a * (1.0 - RADIUS_SLACK); pts.len()],
        1.0,
        xs,
    )?;
    let mut schedule = vec![];
    for (m, p) in pts.iter().enumerate() {
        let step = 1e-6 * (1.0 + p.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let df = f.jacobian_fd(p, step);
        let j = 2 * m + 1;
        schedule.push(SeqStep {
            t: LinOp::new(df.scaled(-1.0), xs, ys)?,
            phi: pou.bumps[m].clone(),
            theta: theta * 0.5f64.powi(j as i32),
        });
        schedule.push(SeqStep {
            t: t.clone(),
            phi: pou.bumps[m].clone(),
            theta: theta * 0.5f64.powi(j as i32 + 1),
        });
    }
    let seq = build_sequence(e, h, f, zeta, &schedule)?;
    let g = seq.items.last().map_or(f.clone(), |it| it.f.clone());
    let delta = uniform_diff_radius_to(&g, e, 0.5 * theta * (1.0 - 1e-9), xs, ys, MAX_DELTA_EXP)?;
    Ok(GameStep {
        g,
        u: h.clone(),
        delta,
        zeta,
        rho,
        tau,
        lip_f,
        pou,
        seq,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GameCert {
    /// sup |g − f| over Q samples.
    pub dist_f: f64,
    /// Sampled Lip(g) over Q pairs.
    pub lip_g: f64,
    /// max_E ‖Dg(x) − T‖.
    pub jac_dev: f64,
    /// max over the tested h of the slope error divided by θδ.
    pub slope_ratio: f64,
    pub pass: bool,
}

/// Checks ‖g − f‖ ≤ θ, Lip(g) ≤ 1 (sampled), ‖Dg − T‖ ≤ 2ζ at E and the
/// slope condition for h = g, h = g + c and h = g + oscillation with
/// ‖h − g‖_∞ = θδ/8.
pub fn certify_game_step(
    gs: &GameStep,
    e: &Region,
    q: &Region,
    f: &LipFn,
    t: &LinOp,
    theta: f64,
    pairs: usize,
    seed: u64,
) -> Result<GameCert> {
    let xs = &t.dom;
    let ys = &t.cod;
    let d = xs.dim();
    let l = ys.dim();
    let oracle = NormOracle::new(xs, ys);
    let pts = finite_points(e)?;
    let (lo, hi) = q
        .bbox()
        .ok_or_else(|| Error::Domain("Q must be bounded".into()))?;
    let coord = pts
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let floor = if coord > 0.0 { 1e-11 * coord } else { 1e-280 };
    let stats: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut r =
                ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let x: Vec<f64> = if k % 2 == 0 || pts.is_empty() {
                (0..d)
                    .map(|i| lo[i] + r.gen::<f64>() * (hi[i] - lo[i]))
                    .collect()
            } else {
                let p = &pts[r.gen_range(0..pts.len())];
                let s = 10f64.powf(r.gen_range(floor.log10().max(-300.0)..=gs.rho.log10()));
                p.iter().map(|v| v + (r.gen::<f64>() - 0.5) * s).collect()
            };
            let dx = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let s = 10f64.powf(-r.gen_range(0.0..6.0)) * (if k % 2 == 0 { 1e-1 } else { 1.0 });
            let s = s.max(1e-11 * dx).max(1e-300);
            let near = pts
                .iter()
                .map(|p| xs.dist_f(&x, p))
                .fold(f64::INFINITY, f64::min);
            let s = if k % 2 == 1 {
                s.min(near.max(floor))
            } else {
                s
            };
            let y: Vec<f64> = x.iter().map(|v| v + (r.gen::<f64>() - 0.5) * s).collect();
            let gx = gs.g.eval_f(&x);
            let gy = gs.g.eval_f(&y);
            let diff: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
            let nx = xs.dist_f(&x, &y);
            let ratio = if nx > 0.0 && q.contains(&x) && q.contains(&y) {
                ys.norm_f(&diff) / nx
            } else {
                0.0
            };
            let fx = f.eval_f(&x);
            let dist = if q.contains(&x) {
                ys.norm_f(&gx.iter().zip(&fx).map(|(a, b)| a - b).collect::<Vec<_>>())
            } else {
                0.0
            };
            (dist, ratio)
        })
        .collect();
    let dist_f = stats.iter().map(|s| s.0).fold(0.0, f64::max);
    let lip_g = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let delta = gs.delta;
    let jac_dev = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let deepest = gs
                .seq
                .items
                .iter()
                .flat_map(|it| it.map.psi.points[i].stages.iter().map(|s| s.1))
                .fold(delta, f64::min);
            let step = (deepest * 1e-5).max(floor * 1e-3);
            oracle.ub(&gs.g.jacobian_fd(p, step).sub(&t.matrix))
        })
        .fold(0.0, f64::max);
    let amp = theta * delta / 8.0;
    let mut unit = vec![0.0; l];
    unit[0] = 1.0;
    let n0 = ys.norm_f(&unit);
    unit.iter_mut().for_each(|v| *v /= n0);
    // Offsets h − g with sup norm θδ/8: none, a constant, a fast oscillation.
    let offset = |kind: usize, x: &[f64]| -> Vec<f64> {
        let c = match kind {
            0 => 0.0,
            1 => amp,
            _ => amp * (x.iter().sum::<f64>() * 1e3 / delta).sin(),
        };
        unit.iter().map(|v| v * c).collect()
    };
    let dirs = directions(xs, 8, 13);
    let mut slope: f64 = 0.0;
    for kind in 0..3 {
        for p in &pts {
            let h = |x: &[f64]| -> Vec<f64> {
                gs.g.eval_f(x)
                    .iter()
                    .zip(offset(kind, x))
                    .map(|(a, b)| a + b)
                    .collect()
            };
            let hp = h(p);
            for u in &dirs {
                for fr in [1.0, 0.7, 0.4, 0.1] {
                    let y: Vec<f64> = u.iter().map(|v| v * delta * fr).collect();
                    let z: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a + b).collect();
                    let ty = t.apply(&y);
                    let res: Vec<f64> = h(&z)
                        .iter()
                        .zip(&hp)
                        .zip(&ty)
                        .map(|((a, b), c)| a - b - c)
                        .collect();
                    slope = slope.max(ys.norm_f(&res) / (theta * delta));
                }
            }
        }
    }
    let pass =
        dist_f <= theta && lip_g <= 1.0 + 1e-6 && jac_dev <= 2.0 * gs.zeta + 1e-6 && slope <= 1.0;
    Ok(GameCert {
        dist_f,
        lip_g,
        jac_dev,
        slope_ratio: slope,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp() -> NormedSpace {
        NormedSpace::euclidean(2)
    }

    fn pts(v: Vec<Vec<f64>>) -> Region {
        Region::Points { points: v }
    }

    fn diag(a: f64, b: f64) -> LinOp {
        LinOp::from_rows(&[vec![a, 0.0], vec![0.0, b]], &sp(), &sp()).unwrap()
    }

    #[test]
    fn ramp_is_a_monotone_clamp() {
        let r = 0.3;
        let mut prev = f64::NEG_INFINITY;
        for i in -400..=400 {
            let t = i as f64 / 200.0;
            let v = crate::func::ramp(t, r);
            assert!(v >= prev);
            if t.abs() <= r {
                assert_eq!(v, t);
            }
            assert!(v.abs() <= 1.5 * r + 1e-15);
            prev = v;
        }
        let h = 1e-7;
        for t in [0.31, 0.45, 0.59] {
            let dv = (crate::func::ramp(t + h, r) - crate::func::ramp(t - h, r)) / (2.0 * h);
            assert!((0.0..=1.0 + 1e-6).contains(&dv), "{dv}");
        }
    }

    #[test]
    fn zero_phi_gives_zero_map_and_psi() {
        let phi = LipFn::zero(2, 1);
        let out = build_psi_map(&pts(vec![vec![0.0, 0.0]]), 0.5, &phi, &diag(1.0, 0.0)).unwrap();
        assert_eq!(out.psi.regime, PsiRegime::Staircase);
        assert!(out.f.is_zero());
        for x in [[0.0, 0.0], [0.1, -0.2], [3.0, 3.0]] {
            assert_eq!(out.psi.psi(&x), 0.0);
        }
        let cert = certify_psi_map(&out, &diag(1.0, 0.0), 2000, 1);
        assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn large_operator_is_rescaled() {
        let phi = LipFn::constant(2, vec![1.0]).unwrap();
        let t = diag(4.0, 0.0);
        let out = build_psi_map(&pts(vec![vec![0.0, 0.0]]), 2.0, &phi, &t).unwrap();
        assert!((out.scale - 4.0).abs() < 1e-9, "{}", out.scale);
        assert!((out.eta_internal - 0.5).abs() < 1e-9);
        assert!(out.deriv_bound <= 2.0 + 1e-12);
        let cert = certify_psi_map(&out, &t, 3000, 2);
        assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn small_operator_regime_and_zero_operator() {
        let phi = LipFn::constant(2, vec![0.7]).unwrap();
        let out = build_psi_map(&pts(vec![vec![0.2, 0.2]]), 0.6, &phi, &diag(0.5, 0.0)).unwrap();
        assert_eq!(out.psi.regime, PsiRegime::SmallOperator);
        assert!(out.f.is_zero());
        assert_eq!(out.psi.psi(&[0.3, 0.2]), 0.7);
        assert_eq!(out.psi.psi(&[2.0, 0.2]), 0.0);
        let out = build_psi_map(&pts(vec![vec![0.2, 0.2]]), 0.1, &phi, &diag(0.0, 0.0)).unwrap();
        assert_eq!(out.psi.regime, PsiRegime::ZeroOperator);
        assert!(certify_psi_map(&out, &diag(0.0, 0.0), 500, 3).pass);
    }

    #[test]
    fn staircase_sandwich_and_derivative() {
        // φ a bump equal to 1 at the origin and below 2/k at the second point.
        let phi = LipFn::bump(vec![0.0, 0.0], 1.0)
            .unwrap()
            .with_lip_bound(PLATEAU_SLOPE);
        let t = LinOp::from_rows(&[vec![0.6, 0.2], vec![-0.1, 0.3]], &sp(), &sp()).unwrap();
        let e = pts(vec![vec![0.0, 0.0], vec![0.8, 0.1]]);
        let out = build_psi_map(&e, 0.6, &phi, &t).unwrap();
        assert_eq!(out.psi.regime, PsiRegime::Staircase);
        assert!(out.psi.k >= 2 && out.psi.points[0].stages.len() + 2 >= out.psi.k);
        assert!(out.deriv_bound <= 0.6 + 1e-12);
        let cert = certify_psi_map(&out, &t, 10_000, 4);
        assert_eq!(cert.samples, 10_000);
        assert!(cert.pass, "{cert:?}");
        // j(x) tracks the stage radii at the origin.
        let st = &out.psi.points[0].stages;
        let inner = st.last().unwrap().1 * 0.5;
        assert_eq!(out.psi.levels(&[inner, 0.0]).h, st.len() + 1);
    }

    #[test]
    fn resolution_error_for_tiny_eta() {
        let phi = LipFn::constant(2, vec![1.0]).unwrap();
        let err =
            build_psi_map(&pts(vec![vec![0.0, 0.0]]), 1e-4, &phi, &diag(1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Resolution(_)), "{err:?}");
        let cantor = crate::region::gen_four_corner(2, 0.25).unwrap();
        assert!(matches!(
            build_psi_map(&cantor, 0.5, &phi, &diag(1.0, 0.0)),
            Err(Error::Input(_))
        ));
    }

    fn ball(r: f64) -> Region {
        Region::Balls {
            space: sp(),
            centers: vec![vec![0.0, 0.0]],
            radii: vec![r],
            open: true,
        }
    }

    #[test]
    fn empty_schedule_returns_start() {
        let f0 = LipFn::linear(&diag(0.2, 0.1));
        let seq = build_sequence(&pts(vec![vec![0.0, 0.0]]), &ball(1.0), &f0, 0.5, &[]).unwrap();
        assert!(seq.items.is_empty());
        assert!(seq.f(0).ptr_eq(&f0));
        assert!(certify_sequence(&seq, &Matrix::zeros(2, 2), 10, 1).pass);
    }

    #[test]
    fn zero_operator_step_freezes_f() {
        let f0 = LipFn::linear(&diag(0.2, 0.1));
        let phi = LipFn::bump(vec![0.0, 0.0], 0.5)
            .unwrap()
            .with_lip_bound(8.0);
        let step = SeqStep {
            t: diag(0.0, 0.0),
            phi: phi.clone(),
            theta: 0.3,
        };
        let seq =
            build_sequence(&pts(vec![vec![0.0, 0.0]]), &ball(1.0), &f0, 0.5, &[step]).unwrap();
        for x in [[0.6, 0.0], [0.0, -0.9], [0.3, 0.45]] {
            assert_eq!(phi.eval_f(&x)[0], 0.0);
            assert_eq!(seq.f(1).eval_f(&x), f0.eval_f(&x));
        }
        assert!(certify_sequence(&seq, &Matrix::zeros(2, 2), 400, 2).pass);
    }

    #[test]
    fn two_steps_stay_within_theta_sum() {
        let f0 = LipFn::linear(&diag(0.2, 0.1));
        let phi = LipFn::bump(vec![0.0, 0.0], 0.8)
            .unwrap()
            .with_lip_bound(5.0);
        let steps = vec![
            SeqStep {
                t: diag(0.1, 0.0),
                phi: phi.clone(),
                theta: 0.4,
            },
            SeqStep {
                t: diag(0.5, 0.2),
                phi: phi.clone(),
                theta: 0.2,
            },
        ];
        let seq = build_sequence(&pts(vec![vec![0.0, 0.0]]), &ball(1.0), &f0, 0.9, &steps).unwrap();
        assert_eq!(seq.items.len(), 2);
        assert!(seq.items[1].eta <= (0.9f64 / 4.0).min(0.2));
        let mut worst: f64 = 0.0;
        for x in crate::region::lattice_in(&[-1.0, -1.0], &[1.0, 1.0], 41) {
            let a = seq.f(2).eval_f(&x);
            let b = f0.eval_f(&x);
            worst = worst.max(sp().norm_f(&[a[0] - b[0], a[1] - b[1]]));
        }
        assert!(worst <= 0.4 + 0.2, "{worst}");
        let l = diag(0.5, 0.5).matrix;
        let cert = certify_sequence(&seq, &l, 3000, 3);
        assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn game_step_hypotheses() {
        let f = LipFn::linear(&diag(0.5, 0.5));
        let q = Region::Boxes {
            lo: vec![vec![-1.0, -1.0]],
            hi: vec![vec![1.0, 1.0]],
            open: false,
        };
        let e = pts(vec![vec![0.0, 0.0]]);
        let err = bmgame_step_pu(&e, &ball(0.5), &q, 0.5, &f, &diag(1.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
        let steep = LipFn::linear(&diag(1.2, 0.0));
        let err = bmgame_step_pu(&e, &ball(0.5), &q, 0.5, &steep, &diag(0.5, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }

    #[test]
    fn game_step_on_linear_map_at_a_point() {
        let t = diag(0.5, 0.0);
        let c = 0.1;
        let f = LipFn::linear(&t.scaled(c)).with_lip_bound(c * 0.5);
        let q = Region::Boxes {
            lo: vec![vec![-1.0, -1.0]],
            hi: vec![vec![1.0, 1.0]],
            open: false,
        };
        let e = pts(vec![vec![0.0, 0.0]]);
        let theta = 0.9;
        let gs = bmgame_step_pu(&e, &ball(0.8), &q, theta, &f, &t).unwrap();
        assert_eq!(gs.seq.items.len(), 2);
        assert!(gs.delta > 0.0 && gs.delta < theta / 2.0);
        let cert = certify_game_step(&gs, &e, &q, &f, &t, theta, 20_000, 5).unwrap();
        assert!(
            cert.jac_dev <= 2.0 * gs.zeta && 2.0 * gs.zeta <= theta / 2.0,
            "{cert:?}"
        );
        assert!(cert.pass, "{cert:?}");
    }
}

//! Nested separated nets and the local derivative prescription
//! g(x+u) = g(x) + Lu on small balls around a separated point set.

use crate::error::{Error, Result};
use crate::func::LipFn;
use crate::operator::LinOp;
use crate::region::Region;
use crate::space::NormedSpace;
use crate::verify::{directions, lip_estimate, LipEstimate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Relative slack on separation and boundary checks.
const GEOM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Net {
    /// levels[k-1] = Γ_k.
    pub levels: Vec<Vec<Vec<f64>>>,
    /// δ_k = 2^{-k}.
    pub seps: Vec<f64>,
    pub e: Region,
    pub q: Region,
    /// Spacing of the candidate sample of E.
    pub spacing: f64,
}

impl Net {
    pub fn level(&self, k: usize) -> &[Vec<f64>] {
        &self.levels[k - 1]
    }

    /// Nesting, separation and boundary gap of every level.
    pub fn check(&self, sp: &NormedSpace) -> Result<()> {
        for (i, g) in self.levels.iter().enumerate() {
            let d = self.seps[i];
            if i > 0 && self.levels[i - 1].iter().any(|p| !g.contains(p)) {
                return Err(Error::Geometry(format!(
                    "level {} does not contain level {i}",
                    i + 1
                )));
            }
            if let Some(m) = min_separation(g, sp) {
                if m < d * (1.0 - GEOM_TOL) {
                    return Err(Error::Geometry(format!(
                        "level {} separation {m} < {d}",
                        i + 1
                    )));
                }
            }
            if g.iter().any(|p| self.q.depth(p, sp) < d * (1.0 - GEOM_TOL)) {
                return Err(Error::Geometry(format!(
                    "level {} point too close to ∂Q",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Smallest pairwise distance, `None` for fewer than two points.
pub fn min_separation(pts: &[Vec<f64>], sp: &NormedSpace) -> Option<f64> {
    let mut m: Option<f64> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = sp.dist_f(&pts[i], &pts[j]);
            m = Some(m.map_or(d, |v: f64| v.min(d)));
        }
    }
    m
}

/// Uniform hash grid for separation queries.
struct Cells {
    size: f64,
    map: HashMap<Vec<i64>, Vec<usize>>,
}

impl Cells {
    fn key(&self, p: &[f64]) -> Vec<i64> {
        p.iter().map(|v| (v / self.size).floor() as i64).collect()
    }

    fn insert(&mut self, p: &[f64], i: usize) {
        let k = self.key(p);
        self.map.entry(k).or_default().push(i);
    }

    fn far_from_all(&self, p: &[f64], pts: &[Vec<f64>], sp: &NormedSpace, delta: f64) -> bool {
        let k = self.key(p);
        let d = k.len();
        let mut off = vec![-1i64; d];
        loop {
            let c: Vec<i64> = k.iter().zip(&off).map(|(a, b)| a + b).collect();
            if let Some(v) = self.map.get(&c) {
                if v.iter().any(|&i| sp.dist_f(&pts[i], p) < delta) {
                    return false;
                }
            }
            let mut j = 0;
            while j < d {
                off[j] += 1;
                if off[j] <= 1 {
                    break;
                }
                off[j] = -1;
                j += 1;
            }
            if j == d {
                return true;
            }
        }
    }
}

/// Greedy maximal 2^{-k}-separated subsets of E_k = {x ∈ E : depth_Q(x) ≥ 2^{-k}},
/// each level seeded with the previous one.
pub fn build_net(e: &Region, q: &Region, sp: &NormedSpace, kmax: u32) -> Result<Net> {
    if kmax == 0 {
        return Err(Error::Input("kmax must be ≥ 1".into()));
    }
    let spacing = 0.5f64.powi(kmax as i32) / 4.0;
    let cands = e.sample(spacing);
    if let Some(p) = cands.iter().find(|p| !(q.depth(p, sp) > 0.0)) {
        return Err(Error::Domain(format!("E is not inside Int Q near {p:?}")));
    }
    let depth: Vec<f64> = cands.par_iter().map(|p| q.depth(p, sp)).collect();
    let cinf = sp.linf_const();
    let mut levels: Vec<Vec<Vec<f64>>> = vec![];
    let mut seps = vec![];
    let mut cur: Vec<Vec<f64>> = vec![];
    for k in 1..=kmax {
        let delta = 0.5f64.powi(k as i32);
        let mut cells = Cells {
            size: delta * cinf,
            map: HashMap::new(),
        };
        for (i, p) in cur.iter().enumerate() {
            cells.insert(p, i);
        }
        for (p, d) in cands.iter().zip(&depth) {
            if *d >= delta && cells.far_from_all(p, &cur, sp, delta) {
                cells.insert(p, cur.len());
                cur.push(p.clone());
            }
        }
        levels.push(cur.clone());
        seps.push(delta);
    }
    Ok(Net {
        levels,
        seps,
        e: e.clone(),
        q: q.clone(),
        spacing,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrescriptionParams {
    pub r: f64,
    pub s: f64,
    pub diam_q: f64,
    pub beta: f64,
    pub alpha: f64,
    /// s/(s − β)·L as a matrix; its norm bound is `t_scaled_ub`.
    pub t_scaled: Vec<Vec<f64>>,
    pub t_scaled_ub: f64,
}

impl PrescriptionParams {
    pub fn new(r: f64, s: f64, diam_q: f64, l: &LinOp) -> Result<PrescriptionParams> {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::Input(format!("r must lie in (0,1), got {r}")));
        }
        if !(s > 0.0) || !s.is_finite() || !(diam_q >= 0.0) || !diam_q.is_finite() {
            return Err(Error::Input("s must be positive and Q bounded".into()));
        }
        if l.opnorm_ub > 1.0 - r {
            return Err(Error::Norm(format!(
                "‖L‖ ≤ {} exceeds 1 − r = {}",
                l.opnorm_ub,
                1.0 - r
            )));
        }
        let beta = r * s / (4.0 * (1.0 + diam_q));
        let alpha = r * r * s / (16.0 * (1.0 + diam_q) * (1.0 + diam_q));
        if !alpha.is_normal() {
            return Err(Error::Resolution(format!(
                "α = {alpha:e} is below f64 range at s = {s:e}"
            )));
        }
        let t = l.scaled(s / (s - beta));
        Ok(PrescriptionParams {
            r,
            s,
            diam_q,
            beta,
            alpha,
            t_scaled: t.matrix.to_rows(),
            t_scaled_ub: t.opnorm_ub,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Prescription {
    pub g: LipFn,
    pub params: PrescriptionParams,
    pub gamma: Vec<Vec<f64>>,
    /// The anchor value f(x₀) about which the final rescale is taken.
    pub anchor: Vec<f64>,
    pub op: LinOp,
}

/// z ↦ x + φ(z − x).
fn recentre(phi: &LipFn, x: &[f64]) -> Result<LipFn> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let inner = LipFn::compose(phi, &LipFn::shift(&neg)?)?;
    LipFn::compose(&LipFn::shift(x)?, &inner)
}

/// Checks that Γ is 4s-separated and 4s deep inside Q.
pub fn check_gamma(gamma: &[Vec<f64>], s: f64, q: &Region, sp: &NormedSpace) -> Result<()> {
    if let Some(m) = min_separation(gamma, sp) {
        if m < 4.0 * s * (1.0 - GEOM_TOL) {
            return Err(Error::Geometry(format!(
                "Γ is only {m}-separated, need 4s = {}",
                4.0 * s
            )));
        }
    }
    for x in gamma {
        let d = q.depth(x, sp);
        if d < 4.0 * s * (1.0 - GEOM_TOL) {
            return Err(Error::Geometry(format!(
                "point {x:?} has boundary gap {d} < 4s = {}",
                4.0 * s
            )));
        }
    }
    Ok(())
}

/// Pairs used to confirm f ∈ Lip₁ before prescribing.
pub const PREMISE_PAIRS: usize = 4000;

/// Builds g ∈ Lip₁ with ‖g − f‖ ≤ r and g(x+u) = g(x) + Lu for x ∈ Γ, ‖u‖ ≤ α.
pub fn prescribe_derivative(
    f: &LipFn,
    l: &LinOp,
    r: f64,
    gamma: &[Vec<f64>],
    s: f64,
    q: &Region,
) -> Result<Prescription> {
    let xs = &l.dom;
    let d = xs.dim();
    if f.din() != d || f.dout() != l.cod.dim() {
        return Err(Error::Input("f and L shapes differ".into()));
    }
    if gamma.iter().any(|x| x.len() != d) {
        return Err(Error::Input("Γ point dimension".into()));
    }
    if !q.is_bounded() {
        return Err(Error::Input("Q must be bounded".into()));
    }
    let params = PrescriptionParams::new(r, s, q.diam_ub(xs), l)?;
    check_gamma(gamma, s, q, xs)?;
    let est = lip_estimate(f, q, xs, &l.cod, PREMISE_PAIRS, 0x11f);
    if est.ratio > 1.0 + 1e-7 {
        return Err(Error::Premise(format!(
            "f is not 1-Lipschitz: sampled ratio {}",
            est.ratio
        )));
    }
    let op = l.clone();
    if gamma.is_empty() {
        let anchor = vec![0.0; l.cod.dim()];
        return Ok(Prescription {
            g: f.clone(),
            params,
            gamma: vec![],
            anchor,
            op,
        });
    }
    let (beta, alpha) = (params.beta, params.alpha);
    let t_scaled = LipFn::linear(&l.scaled(s / (s - beta)));
    let zero = LipFn::zero(d, d);
    let id = LipFn::identity(d);
    let collapse = LipFn::blend_node(xs, beta, s, &zero, &id)?;
    let pieces0: Vec<LipFn> = gamma
        .iter()
        .map(|x| LipFn::compose(f, &recentre(&collapse, x)?))
        .collect::<Result<_>>()?;
    let g0 = LipFn::ball_patch(xs, gamma.to_vec(), s, pieces0, f)?;
    let psi = LipFn::blend_node(xs, alpha, beta, &id, &zero)?;
    let lin = LipFn::compose(&t_scaled, &psi)?;
    let pieces1: Vec<LipFn> = gamma
        .iter()
        .map(|x| {
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            let local = LipFn::compose(&lin, &LipFn::shift(&neg)?)?;
            LipFn::point_value(&g0, x.clone())?.add(&local)
        })
        .collect::<Result<_>>()?;
    let g1 = LipFn::ball_patch(xs, gamma.to_vec(), beta, pieces1, &g0)?;
    let c = LipFn::point_value(f, gamma[0].clone())?;
    let anchor = c.eval_f(&gamma[0]);
    let g = LipFn::sum(vec![
        LipFn::scale((s - beta) / s, &g1)?,
        LipFn::scale(beta / s, &c)?,
    ])?
    .with_lip_bound(1.0);
    Ok(Prescription {
        g,
        params,
        gamma: gamma.to_vec(),
        anchor,
        op,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrescribeCert {
    pub beta: f64,
    pub alpha: f64,
    /// max ‖g(x+u) − g(x) − Lu‖ over Γ and sampled ‖u‖ ≤ α.
    pub affinity_err: f64,
    pub sup_diff: f64,
    pub sup_points: usize,
    pub lip: LipEstimate,
    /// max |g − (c + ((s−β)/s)(f − c))| over sampled points outside the s-balls.
    pub outside_err: f64,
}

impl PrescribeCert {
    pub fn holds(&self, r: f64) -> bool {
        self.affinity_err <= 1e-12
            && self.sup_diff <= r
            && self.lip.ratio <= 1.0 + 1e-7
            && self.outside_err <= 1e-12
    }
}

/// Samples every postcondition of [`prescribe_derivative`]: `lattice` points
/// per axis of Q, `dirs` offsets per Γ point and `pairs` Lipschitz pairs.
pub fn certify(
    p: &Prescription,
    f: &LipFn,
    q: &Region,
    lattice: usize,
    dirs: usize,
    pairs: usize,
    seed: u64,
) -> PrescribeCert {
    let xs = &p.op.dom;
    let ys = &p.op.cod;
    let alpha = p.params.alpha;
    let s = p.params.s;
    let beta = p.params.beta;
    let units = directions(xs, dirs, seed);
    let affinity_err = p
        .gamma
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 7));
            let gx = p.g.eval_f(x);
            let mut worst: f64 = 0.0;
            for w in units.iter().take(dirs.max(1)) {
                let t = alpha * rng.gen_range(0.0..=1.0f64);
                let z: Vec<f64> = x.iter().zip(w).map(|(a, b)| a + t * b).collect();
                let u: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
                let lu = p.op.apply(&u);
                let gz = p.g.eval_f(&z);
                let e: Vec<f64> = gz
                    .iter()
                    .zip(&gx)
                    .zip(&lu)
                    .map(|((a, b), c)| a - b - c)
                    .collect();
                worst = worst.max(ys.norm_f(&e));
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let pts = q.lattice(lattice);
    let k = (s - beta) / s;
    let (sup_diff, outside_err) = pts
        .par_iter()
        .map(|z| {
            let gz = p.g.eval_f(z);
            let fz = f.eval_f(z);
            let diff = ys.dist_f(&gz, &fz);
            let outside = p.gamma.iter().all(|x| xs.dist_f(x, z) >= s);
            let oe = if outside && !p.gamma.is_empty() {
                gz.iter()
                    .zip(&fz)
                    .zip(&p.anchor)
                    .map(|((g, f), c)| (g - (c + k * (f - c))).abs())
                    .fold(0.0, f64::max)
            } else {
                0.0
            };
            (diff, oe)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let lip = lip_estimate(&p.g, q, xs, ys, pairs, seed);
    PrescribeCert {
        beta,
        alpha,
        affinity_err,
        sup_diff,
        sup_points: pts.len(),
        lip,
        outside_err,
    }
}

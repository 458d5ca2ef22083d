//! Steep functions of cone-constrained curves and the derivative maps built
//! from them on purely unrectifiable Cantor sets.

use crate::cylinder::cyl_constant;
use crate::error::{Error, Result};
use crate::func::{LipFn, PLATEAU_SLOPE};
use crate::operator::{LinOp, Matrix};
use crate::puresets::{self, cantor_cover_at, crossings, LatticeGraph, Weigher, MAX_NODES};
use crate::region::Region;
use crate::space::{Functional, NormedSpace};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

mod staircase;
pub use staircase::*;

/// Tolerance of the P(v_P) = ‖P‖ invariant.
pub const ATTAIN_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct SteepSpec {
    pub g: Region,
    pub p: Functional,
    pub alpha: f64,
    /// Lattice step along v_P.
    pub h: f64,
    /// Lateral step / forward step; defaults to the widest ratio the cone admits.
    pub ratio: Option<f64>,
    /// Box carrying the lattice; bbox(G) when absent.
    pub domain: Option<(Vec<f64>, Vec<f64>)>,
    /// Resolution error when the reported gap exceeds this.
    pub max_gap: Option<f64>,
}

impl SteepSpec {
    pub fn new(g: Region, p: Functional, alpha: f64, h: f64) -> Result<SteepSpec> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Input(format!("α = {alpha} outside (0,1)")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input("grid step must be positive".into()));
        }
        if p.dual_norm > 0.0
            && (p.apply(&p.attain_dir) - p.dual_norm).abs() > ATTAIN_TOL * p.dual_norm.max(1.0)
        {
            return Err(Error::Input("attain direction does not norm P".into()));
        }
        Ok(SteepSpec {
            g,
            p,
            alpha,
            h,
            ratio: None,
            domain: None,
            max_gap: None,
        })
    }

    pub fn v_p(&self) -> &[f64] {
        &self.p.attain_dir
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Steep {
    #[serde(skip)]
    pub g: LipFn,
    pub p_norm: f64,
    /// max V over the lattice (lattice ξ estimate).
    pub xi: f64,
    pub gap: f64,
    pub alpha_eff: f64,
    pub ratio: f64,
    pub v: Vec<f64>,
    pub lateral: Vec<Vec<f64>>,
    pub h: f64,
    pub n: Vec<usize>,
    /// Proven Lipschitz bound of g (from lattice differences).
    pub lip: f64,
    pub witness: Vec<Vec<f64>>,
}

impl Steep {
    fn zero(d: usize, spec: &SteepSpec) -> Steep {
        Steep {
            g: LipFn::zero(d, 1).with_lip_bound(0.0),
            p_norm: spec.p.dual_norm,
            xi: 0.0,
            gap: 0.0,
            alpha_eff: spec.alpha,
            ratio: 0.0,
            v: spec.p.attain_dir.clone(),
            lateral: vec![],
            h: spec.h,
            n: vec![],
            lip: 0.0,
            witness: vec![],
        }
    }
}

/// Unit-norm basis of ker P (Euclidean Gram–Schmidt of the projections of e_i along v).
fn kernel_frame(p: &Functional, v: &[f64]) -> Vec<Vec<f64>> {
    let d = v.len();
    let pv = p.apply(v);
    let mut out: Vec<Vec<f64>> = vec![];
    for i in 0..d {
        let mut k: Vec<f64> = (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
        let c = p.coeffs[i] / pv;
        for j in 0..d {
            k[j] -= c * v[j];
        }
        for q in &out {
            let dq: f64 = k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>()
                / q.iter().map(|a| a * a).sum::<f64>();
            for j in 0..d {
                k[j] -= dq * q[j];
            }
        }
        if k.iter().map(|a| a * a).sum::<f64>().sqrt() > 1e-8 {
            out.push(k);
        }
        if out.len() == d - 1 {
            break;
        }
    }
    out.into_iter()
        .map(|k| {
            let n = p.space.norm_f(&k);
            k.into_iter().map(|a| a / n).collect()
        })
        .collect()
}

fn sign_patterns(m: usize) -> Vec<Vec<i64>> {
    (0..3usize.pow(m as u32))
        .map(|mut c| {
            (0..m)
                .map(|_| {
                    let s = (c % 3) as i64 - 1;
                    c /= 3;
                    s
                })
                .collect()
        })
        .collect()
}

/// max over lateral sign patterns σ of ‖v + K·Σσ_j k_j‖.
fn widest(sp: &NormedSpace, v: &[f64], lat: &[Vec<f64>], k: f64) -> f64 {
    sign_patterns(lat.len())
        .iter()
        .map(|s| {
            let u: Vec<f64> = (0..v.len())
                .map(|i| {
                    v[i] + k * s
                        .iter()
                        .zip(lat)
                        .map(|(sj, kj)| *sj as f64 * kj[i])
                        .sum::<f64>()
                })
                .collect();
            sp.norm_f(&u)
        })
        .fold(0.0, f64::max)
}

/// Largest lateral ratio K with every step (1, σ) inside the α-cone.
pub fn max_ratio(sp: &NormedSpace, v: &[f64], lat: &[Vec<f64>], alpha: f64) -> f64 {
    if lat.is_empty() {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while widest(sp, v, lat, hi) <= 1.0 / alpha {
        hi *= 2.0;
        if hi > 1e12 {
            return hi;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if widest(sp, v, lat, mid) <= 1.0 / alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The steep function of (G, P, α) on a lattice aligned with v_P:
/// g(x) = ‖P‖·max_s [V(x + s v_P) − s], V the longest-path value of
/// admissible lattice curves, extended by clamping and, upstream of the
/// lattice, by g decreasing at unit rate along −v_P.
pub fn build_steep(spec: &SteepSpec) -> Result<Steep> {
    let d = spec.p.coeffs.len();
    let pn = spec.p.dual_norm;
    let w = Weigher::new(&spec.g);
    if pn == 0.0 || matches!(w, Weigher::Empty) {
        return Ok(Steep::zero(d, spec));
    }
    let (dlo, dhi) = match (&spec.domain, spec.g.bbox()) {
        (Some(b), _) => b.clone(),
        (None, Some(b)) => b,
        (None, None) => {
            return Err(Error::Domain(
                "unbounded G needs an explicit domain box".into(),
            ))
        }
    };
    if dlo.len() != d {
        return Err(Error::Input("domain dimension differs from P".into()));
    }
    let sp = &spec.p.space;
    let v = spec.p.attain_dir.clone();
    let lat = kernel_frame(&spec.p, &v);
    let kmax = max_ratio(sp, &v, &lat, spec.alpha);
    let ratio = match spec.ratio {
        Some(r) if r > 0.0 && r <= kmax * (1.0 + 1e-12) => r,
        Some(r) => {
            return Err(Error::Input(format!(
                "lateral ratio {r} exceeds the cone limit {kmax}"
            )))
        }
        None => kmax,
    };
    let alpha_eff = if lat.is_empty() {
        1.0
    } else {
        1.0 / widest(sp, &v, &lat, ratio)
    };
    let h1 = spec.h;
    let h2 = ratio * h1;

    // Frame coordinates x = t·v + Σ l_j k_j.
    let fm = DMatrix::from_fn(d, d, |i, j| if j == 0 { v[i] } else { lat[j - 1][i] });
    let finv = fm
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Input("degenerate steep frame".into()))?;
    let (mut cmin, mut cmax) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
    for mask in 0..(1usize << d) {
        let x =
            nalgebra::DVector::from_fn(d, |i, _| if mask >> i & 1 == 1 { dhi[i] } else { dlo[i] });
        let c = &finv * x;
        for j in 0..d {
            cmin[j] = cmin[j].min(c[j]);
            cmax[j] = cmax[j].max(c[j]);
        }
    }
    let margin = 2.0 * h2;
    let mut n = vec![((cmax[0] - cmin[0]) / h1).ceil() as usize + 2];
    for j in 1..d {
        n.push(((cmax[j] - cmin[j] + 2.0 * margin) / h2).ceil() as usize + 1);
    }
    let total = n.iter().try_fold(1usize, |a, k| a.checked_mul(*k));
    if total.map_or(true, |t| t > MAX_NODES) {
        let scale = (total.unwrap_or(usize::MAX) as f64 / MAX_NODES as f64).powf(1.0 / d as f64);
        return Err(Error::Resolution(format!(
            "steep lattice exceeds {MAX_NODES} nodes; try h ≥ {:.3e}",
            h1 * scale
        )));
    }
    let mut origin = vec![0.0; d];
    for i in 0..d {
        origin[i] = cmin[0] * v[i]
            + (1..d)
                .map(|j| (cmin[j] - margin) * lat[j - 1][i])
                .sum::<f64>();
    }
    let mut basis = vec![v.iter().map(|a| a * h1).collect::<Vec<f64>>()];
    for k in &lat {
        basis.push(k.iter().map(|a| a * h2).collect());
    }
    let pats: Vec<Vec<i64>> = sign_patterns(d - 1);
    let steps: Vec<Vec<i64>> = pats
        .iter()
        .map(|s| std::iter::once(1).chain(s.iter().copied()).collect())
        .collect();
    let graph = LatticeGraph {
        origin,
        basis,
        n: n.clone(),
        steps,
    };
    let slen: Vec<f64> = graph
        .steps
        .iter()
        .map(|u| sp.norm_f(&graph.step_vec(u)))
        .collect();

    // Row-by-row DP along v.
    let row: usize = n[1..].iter().product();
    let lat_coords: Vec<Vec<i64>> = (0..row).map(|j| graph.coords(j)[1..].to_vec()).collect();
    let lat_index = |c: &[i64]| -> Option<usize> {
        let mut flat = 0usize;
        for (i, x) in c.iter().enumerate() {
            if *x < 0 || *x as usize >= n[i + 1] {
                return None;
            }
            flat = flat * n[i + 1] + *x as usize;
        }
        Some(flat)
    };
    let mut value = vec![0.0f64; n[0] * row];
    let mut back = vec![puresets::NO_PRED; n[0] * row];
    for i in 1..n[0] {
        let (done, rest) = value.split_at_mut(i * row);
        let prev = &done[(i - 1) * row..];
        let cur = &mut rest[..row];
        let bk = &mut back[i * row..(i + 1) * row];
        cur.par_iter_mut()
            .zip(bk.par_iter_mut())
            .enumerate()
            .for_each(|(j, (vj, bj))| {
                let lc = &lat_coords[j];
                let mut c = vec![i as i64];
                c.extend_from_slice(lc);
                let x = graph.point_of(&c);
                let mut best = 0.0;
                let mut arg = puresets::NO_PRED;
                for (s, u) in graph.steps.iter().enumerate() {
                    let pl: Vec<i64> = lc.iter().zip(&u[1..]).map(|(a, b)| a - b).collect();
                    let Some(pj) = lat_index(&pl) else { continue };
                    let mut pc = vec![i as i64 - 1];
                    pc.extend_from_slice(&pl);
                    let cand = prev[pj] + w.fraction(&graph.point_of(&pc), &x) * slen[s];
                    if cand > best {
                        best = cand;
                        arg = s as u8;
                    }
                }
                *vj = best;
                *bj = arg;
            });
    }
    let best = (0..value.len()).fold(0, |b, k| if value[k] > value[b] { k } else { b });
    let xi = value[best];
    let outcome = puresets::DpOutcome { value, back, best };
    let path = graph.trace(&outcome, best);
    let witness: Vec<Vec<f64>> = path.iter().map(|c| graph.point_of(c)).collect();
    let fr: Vec<f64> = witness
        .windows(2)
        .map(|e| w.fraction(&e[0], &e[1]))
        .collect();
    let xi_gap = crossings(&fr) as f64 * slen.iter().fold(0.0, |a: f64, b| a.max(*b));
    let mut gv = outcome.value;

    // Terminal ray: last row is the lateral envelope of V, earlier rows
    // g(i) = max(V(i), g(i+1) − h1).
    let last = (n[0] - 1) * row;
    lateral_envelope(&mut gv[last..], &lat_coords, &lat_index, &pats, h1);
    for i in (0..n[0] - 1).rev() {
        for j in 0..row {
            let nxt = gv[(i + 1) * row + j] - h1;
            if nxt > gv[i * row + j] {
                gv[i * row + j] = nxt;
            }
        }
    }

    // Proven Lipschitz bound: hull of per-axis lattice differences, mapped
    // through the frame inverse and measured in the dual norm.
    let binv = DMatrix::from_fn(d, d, |i, j| graph.basis[j][i])
        .try_inverse()
        .expect("frame is invertible");
    let mut hull = vec![(0.0f64, 0.0f64); d];
    hull[0].1 = h1;
    for idx in 0..gv.len() {
        let c = graph.coords(idx);
        for a in 0..d {
            let mut cn = c.clone();
            cn[a] += 1;
            if let Some(k) = graph.index(&cn) {
                let diff = gv[k] - gv[idx];
                hull[a].0 = hull[a].0.min(diff);
                hull[a].1 = hull[a].1.max(diff);
            }
        }
    }
    let mut lip_unit: f64 = 0.0;
    for mask in 0..(1usize << d) {
        let grad: Vec<f64> = (0..d)
            .map(|a| {
                if mask >> a & 1 == 1 {
                    hull[a].1
                } else {
                    hull[a].0
                }
            })
            .collect();
        let coeffs: Vec<f64> = (0..d)
            .map(|col| (0..d).map(|a| grad[a] * binv[(a, col)]).sum())
            .collect();
        lip_unit = lip_unit.max(sp.dual_norm(&coeffs).0);
    }

    // g = ‖P‖·max(0, Grid(B⁻¹(x − o)) − max(0, −h1·c₀)).
    let lo = vec![0.0; d];
    let hi: Vec<f64> = n.iter().map(|k| (*k - 1) as f64).collect();
    let grid = LipFn::grid(lo, hi, n.clone(), 1, gv)?;
    let a_rows: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| binv[(i, j)]).collect())
        .collect();
    let shift: Vec<f64> = (0..d)
        .map(|i| -(0..d).map(|j| binv[(i, j)] * graph.origin[j]).sum::<f64>())
        .collect();
    let aff = LipFn::affine(Matrix::from_rows(&a_rows)?, shift.clone())?;
    let deficit_lin = LipFn::affine(
        Matrix::from_rows(&[a_rows[0].iter().map(|a| -h1 * a).collect()])?,
        vec![-h1 * shift[0]],
    )?;
    let deficit = LipFn::max(vec![LipFn::zero(d, 1), deficit_lin])?;
    let inner = LipFn::compose(&grid, &aff)?.sub(&deficit)?;
    let unit = LipFn::max(vec![LipFn::zero(d, 1), inner])?;
    let lip = pn * lip_unit;
    let g = LipFn::scale(pn, &unit)?.with_lip_bound(lip);
    let gap = pn * (xi_gap + 2.0 * h1.max(h2));
    if let Some(mg) = spec.max_gap {
        if gap > mg {
            return Err(Error::Resolution(format!(
                "steep gap {gap:.3e} exceeds {mg:.3e}; try h ≤ {:.3e}",
                h1 * mg / gap
            )));
        }
    }
    Ok(Steep {
        g,
        p_norm: pn,
        xi,
        gap,
        alpha_eff,
        ratio,
        v,
        lateral: lat,
        h: h1,
        n,
        lip,
        witness,
    })
}

/// In-place g(J) = max_{J'} V(J') − h·‖J − J'‖_∞ over the lateral lattice.
fn lateral_envelope(
    row: &mut [f64],
    coords: &[Vec<i64>],
    index: &dyn Fn(&[i64]) -> Option<usize>,
    pats: &[Vec<i64>],
    h: f64,
) {
    if coords.first().map_or(true, |c| c.is_empty()) {
        return;
    }
    loop {
        let mut changed = false;
        for order in [false, true] {
            for t in 0..row.len() {
                let j = if order { row.len() - 1 - t } else { t };
                for s in pats {
                    let c: Vec<i64> = coords[j].iter().zip(s).map(|(a, b)| a + b).collect();
                    if let Some(k) = index(&c) {
                        let cand = row[k] - h;
                        if cand > row[j] {
                            row[j] = cand;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

// ---- certification ---------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct SteepCert {
    pub samples: usize,
    pub gap: f64,
    pub alpha: f64,
    /// max(−g, g − ‖P‖ξ) over samples, property (i).
    pub sup_excess: f64,
    /// Largest violation of g(x) ≤ g(x+rv) ≤ g(x) + ‖P‖r.
    pub monotone_excess: f64,
    /// Largest |g(x′) − g(x) − ‖P‖t| over segments inside G.
    pub slope_err: f64,
    pub slope_checked: usize,
    /// Largest |g(x+y) − g(x)| − α‖P‖‖y‖/(1−α) over y ∈ ker P.
    pub kernel_excess: f64,
    pub lip_sampled: f64,
    pub lip_claim: f64,
    /// λ-decomposition: largest range and residual excesses.
    pub lambda_excess: f64,
    pub residual_excess: f64,
    pub pass: bool,
}

/// Checks properties (i), (A), (B), (ii), (iv) and the λ-decomposition on
/// random samples of the domain box enlarged by 10%.
pub fn certify_steep(st: &Steep, spec: &SteepSpec, samples: usize, seed: u64) -> Result<SteepCert> {
    let d = spec.p.coeffs.len();
    let (lo, hi) = match (&spec.domain, spec.g.bbox()) {
        (Some(b), _) => b.clone(),
        (None, Some(b)) => b,
        (None, None) => (vec![0.0; d], vec![1.0; d]),
    };
    let sp = &spec.p.space;
    let pn = st.p_norm;
    let alpha = st.alpha_eff;
    let kslope = alpha / (1.0 - alpha) * pn;
    let gap = st.gap + 1e-12;
    let lip_claim = (1.0 + 2.0 * alpha / (1.0 - alpha)) * pn;
    let span: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-9)).collect();
    let rows: Vec<[f64; 8]> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let pt = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..d)
                    .map(|i| lo[i] - 0.1 * span[i] + rng.gen::<f64>() * 1.2 * span[i])
                    .collect()
            };
            let x = pt(&mut rng);
            let gx = st.g.eval_f(&x)[0];
            let sup = (-gx).max(gx - pn * st.xi);
            let r = rng.gen::<f64>() * 0.3 * span[0];
            let xr: Vec<f64> = x.iter().zip(&st.v).map(|(a, b)| a + r * b).collect();
            let gr = st.g.eval_f(&xr)[0];
            let mono = (gx - gr).max(gr - gx - pn * r);
            // (B): segment along v inside G.
            let mut slope = -1.0;
            let t = rng.gen::<f64>() * 4.0 * st.h * st.ratio.max(1.0);
            let xt: Vec<f64> = x.iter().zip(&st.v).map(|(a, b)| a + t * b).collect();
            if (0..=8).all(|q| {
                let f = q as f64 / 8.0;
                let p: Vec<f64> = x.iter().zip(&xt).map(|(a, b)| a + f * (b - a)).collect();
                spec.g.contains(&p)
            }) {
                slope = (st.g.eval_f(&xt)[0] - gx - pn * t).abs();
            }
            // (ii): kernel increments.
            let mut kex = f64::NEG_INFINITY;
            if !st.lateral.is_empty() {
                let y: Vec<f64> = (0..d)
                    .map(|i| {
                        st.lateral.iter().map(|k| k[i]).sum::<f64>()
                            * (rng.gen::<f64>() - 0.5)
                            * 0.2
                            * span[0]
                    })
                    .collect();
                let y: Vec<f64> = {
                    // project back onto ker P along v
                    let c = spec.p.apply(&y) / pn;
                    y.iter().zip(&st.v).map(|(a, b)| a - c * b).collect()
                };
                let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
                kex = (st.g.eval_f(&xy)[0] - gx).abs() - kslope * sp.norm_f(&y);
            }
            // (iv) and (iii): random w.
            let wv: Vec<f64> = (0..d)
                .map(|_| (rng.gen::<f64>() - 0.5) * 0.2 * span[0])
                .collect();
            let xw: Vec<f64> = x.iter().zip(&wv).map(|(a, b)| a + b).collect();
            let gw = st.g.eval_f(&xw)[0];
            let nw = sp.norm_f(&wv);
            let lipr = if nw > 0.0 { (gw - gx).abs() / nw } else { 0.0 };
            let pw = spec.p.apply(&wv) / pn;
            let (mut lam_ex, mut res_ex) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            if pw.abs() > 1e-9 {
                let xp: Vec<f64> = x.iter().zip(&st.v).map(|(a, b)| a + pw * b).collect();
                let lam = (st.g.eval_f(&xp)[0] - gx) / (pn * pw);
                let tol = gap / (pn * pw.abs());
                lam_ex = (-lam - tol).max(lam - 1.0 - tol);
                res_ex = (gw - gx - lam * pn * pw).abs() - 2.0 * kslope * nw - gap;
            }
            [sup, mono, slope, kex, lipr, lam_ex, res_ex, 0.0]
        })
        .collect();
    let mx = |i: usize| rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max);
    let slope_checked = rows.iter().filter(|r| r[2] >= 0.0).count();
    let cert = SteepCert {
        samples,
        gap: st.gap,
        alpha,
        sup_excess: mx(0),
        monotone_excess: mx(1),
        slope_err: mx(2).max(0.0),
        slope_checked,
        kernel_excess: mx(3),
        lip_sampled: mx(4),
        lip_claim,
        lambda_excess: mx(5),
        residual_excess: mx(6),
        pass: false,
    };
    let pass = cert.sup_excess <= gap
        && cert.monotone_excess <= gap
        && cert.slope_err <= gap
        && cert.kernel_excess <= gap
        && cert.lip_sampled <= lip_claim + gap
        && cert.lambda_excess <= 0.0
        && cert.residual_excess <= 0.0;
    Ok(SteepCert { pass, ..cert })
}

// ---- pu derivative map --------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PuMapOptions {
    /// Lateral / forward lattice ratio of the steep functions.
    pub ratio: f64,
    /// Deepest cover level tried.
    pub max_level: u32,
    pub restarts: usize,
}

impl Default for PuMapOptions {
    fn default() -> Self {
        PuMapOptions {
            ratio: 3.0,
            max_level: 4,
            restarts: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PuPiece {
    pub functional: Vec<f64>,
    pub functional_norm: f64,
    pub w: Vec<f64>,
    pub w_norm: f64,
    pub xi: f64,
    pub steep_gap: f64,
    pub steep_lip: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PuMap {
    #[serde(skip)]
    pub g: LipFn,
    /// E ⊆ H ⊆ H̄ ⊆ U; ‖Dg − T‖ small on H.
    pub h: Region,
    /// Open cover carrying the steep functions.
    pub cover: Region,
    pub level: Option<u32>,
    pub theta: f64,
    pub cyl: f64,
    pub bump_center: Vec<f64>,
    pub bump_radius: f64,
    pub bump_lip: f64,
    pub pieces: Vec<PuPiece>,
    /// Σ ‖w_i‖‖T_i‖ξ_i ≥ ‖g‖_∞.
    pub sup_bound: f64,
    /// Proven Lipschitz bound of g.
    pub lip_bound: f64,
    /// Discretisation gap plus any excess of lip_bound over 𝔠(T)+θ.
    pub gap: f64,
    /// Lattice step along v for the Jacobian checks.
    pub h_step: f64,
    /// (level, sup_bound, lip_bound) per level tried.
    pub sweep: Vec<(u32, f64, f64)>,
}

fn euclid_center_radius(e: &Region, u: &Region) -> Result<(Vec<f64>, f64)> {
    let (lo, hi) = e
        .bbox()
        .ok_or_else(|| Error::Input("E must be bounded".into()))?;
    let d = lo.len();
    let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let euc = NormedSpace::euclidean(d);
    let r = u.depth(&c, &euc) * (1.0 - 1e-9);
    let reach = euc.dist_f(&hi, &c);
    if !(r > 0.0) || reach > r / 2.0 {
        return Err(Error::Cover(format!(
            "U leaves depth {r:.3e} around E; a plateau bump needs ≥ {:.3e}",
            2.0 * reach
        )));
    }
    Ok((c, r))
}

/// g = φ·Σ_i ‖T_i‖ĝ_i·w_i with w_i a cylinder basis of T(X), T_i = w_i*∘T,
/// ĝ_i steep functions of a level-m cover of E and φ a plateau bump equal to
/// 1 near E with support inside U. The level is the first one whose proven
/// bounds give ‖g‖_∞ ≤ θ and Lip(g) ≤ 𝔠(T) + θ.
pub fn build_pu_map(
    e: &Region,
    u: &Region,
    t: &LinOp,
    theta: f64,
    opts: &PuMapOptions,
) -> Result<PuMap> {
    if !(theta > 0.0) {
        return Err(Error::Input("θ must be positive".into()));
    }
    let d = t.dom.dim();
    let l = t.cod.dim();
    let zero_map = |h: Region, c: Vec<f64>, r: f64| PuMap {
        g: LipFn::zero(d, l).with_lip_bound(0.0),
        h,
        cover: Region::Empty,
        level: None,
        theta,
        cyl: 0.0,
        bump_center: c,
        bump_radius: r,
        bump_lip: 0.0,
        pieces: vec![],
        sup_bound: 0.0,
        lip_bound: 0.0,
        gap: 0.0,
        h_step: 0.0,
        sweep: vec![],
    };
    let empty = match e {
        Region::Empty => true,
        Region::Points { points } => points.is_empty(),
        _ => e.as_boxes().map_or(false, |b| b.is_empty()),
    };
    if empty {
        return Ok(zero_map(Region::Empty, vec![], 0.0));
    }
    let Region::Cantor { level: e_level, .. } = e else {
        return Err(Error::Input("pu map needs E of cantor kind".into()));
    };
    let (c, radius) = euclid_center_radius(e, u)?;
    let plateau = Region::Balls {
        space: NormedSpace::euclidean(d),
        centers: vec![c.clone()],
        radii: vec![radius / 2.0],
        open: false,
    };
    if t.is_zero() {
        return Ok(zero_map(plateau, c, radius));
    }
    let cyl = cyl_constant(t, opts.restarts)?;
    let bump = LipFn::bump(c.clone(), radius)?;
    let bump_lip = PLATEAU_SLOPE / radius;
    let sp = &t.dom;
    let ysp = &t.cod;
    let rows = t.matrix.to_rows();
    let funcs: Vec<Functional> = cyl
        .duals
        .iter()
        .map(|ws| {
            Functional::new(
                (0..d)
                    .map(|j| (0..l).map(|k| ws[k] * rows[k][j]).sum())
                    .collect(),
                sp,
            )
        })
        .collect::<Result<_>>()?;
    let Region::Cantor {
        ratio: er, side, ..
    } = e
    else {
        unreachable!()
    };
    let frac = puresets::enlarge_frac(*er);
    let mut sweep = vec![];
    let mut best: Option<PuMap> = None;
    for m in (*e_level).max(1)..=opts.max_level.max(*e_level) {
        let (cover, hreg) = cantor_cover_at(e, m)?;
        let margin = frac * side * er.powi(m as i32);
        let h1 = margin / opts.ratio;
        let mut pieces = vec![];
        let mut terms = vec![];
        let mut failed = None;
        for (i, f) in funcs.iter().enumerate() {
            let v = &f.attain_dir;
            let lat = kernel_frame(f, v);
            let alpha = if lat.is_empty() {
                0.5
            } else {
                1.0 / widest(sp, v, &lat, opts.ratio)
            };
            let mut spec = SteepSpec::new(cover.clone(), f.clone(), alpha.min(0.999), h1)?;
            spec.ratio = Some(opts.ratio.min(max_ratio(sp, v, &lat, spec.alpha)));
            let st = match build_steep(&spec) {
                Ok(s) => s,
                Err(err @ Error::Resolution(_)) => {
                    failed = Some(err);
                    break;
                }
                Err(err) => return Err(err),
            };
            let wn = ysp.norm_f(&cyl.basis[i]);
            terms.push(LipFn::product(
                &st.g,
                &LipFn::constant(d, cyl.basis[i].clone())?,
            )?);
            pieces.push(PuPiece {
                functional: f.coeffs.clone(),
                functional_norm: f.dual_norm,
                w: cyl.basis[i].clone(),
                w_norm: wn,
                xi: st.xi,
                steep_gap: st.gap,
                steep_lip: st.lip,
                alpha: st.alpha_eff,
            });
        }
        if let Some(err) = failed {
            if best.is_some() {
                break;
            }
            return Err(err);
        }
        let sup_bound: f64 = pieces
            .iter()
            .map(|p| p.w_norm * p.functional_norm * p.xi)
            .sum();
        // Lip(φ·Σ ĝ_i w_i) ≤ sup_λ‖Σ λ_i T_i w_i‖ + Lip φ·Σ‖w_i‖‖T_i‖ξ_i, with the
        // steep slopes bounded by their proven per-piece constants.
        let steep_part = if pieces.len() == 1 {
            pieces[0].w_norm * pieces[0].steep_lip
        } else {
            pieces.iter().map(|p| p.w_norm * p.steep_lip).sum()
        };
        let lip_bound = steep_part + bump_lip * sup_bound;
        let disc: f64 = pieces.iter().map(|p| p.w_norm * p.steep_gap).sum();
        let gap = disc + (lip_bound - cyl.value - theta).max(0.0);
        sweep.push((m, sup_bound, lip_bound));
        let g = LipFn::product(&bump, &LipFn::sum(terms)?)?.with_lip_bound(lip_bound);
        let cand = PuMap {
            g,
            h: hreg,
            cover,
            level: Some(m),
            theta,
            cyl: cyl.value,
            bump_center: c.clone(),
            bump_radius: radius,
            bump_lip,
            pieces,
            sup_bound,
            lip_bound,
            gap,
            h_step: h1,
            sweep: vec![],
        };
        let ok = sup_bound <= theta && lip_bound <= cyl.value + theta;
        let better = best.as_ref().map_or(true, |b| cand.sup_bound < b.sup_bound);
        if ok || better {
            best = Some(cand);
        }
        if ok {
            break;
        }
    }
    let mut out = best.ok_or_else(|| Error::Construction("no cover level available".into()))?;
    out.sweep = sweep;
    if out.sup_bound > theta {
        return Err(Error::Budget(format!(
            "cover budget: best level {:?} gives ‖g‖∞ ≤ {:.4} > θ = {theta}; needs ξ ≤ ε = {:.4e}",
            out.level,
            out.sup_bound,
            theta
                / out
                    .pieces
                    .iter()
                    .map(|p| p.w_norm * p.functional_norm)
                    .sum::<f64>()
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct PuCert {
    pub jac_points: usize,
    pub jac_max_err: f64,
    pub sup: f64,
    pub lip_sampled: f64,
    pub lip_allowed: f64,
    pub outside_max: f64,
    pub e_in_h: bool,
    pub h_in_u: bool,
    pub pass: bool,
}

/// Samples the pu-map claims: Jacobians at lattice points of H (central
/// differences at step h/4, points at least one step inside their cube),
/// ‖g‖_∞ and Lip(g) over a box around U ∩ bbox, g = 0 outside U, E ⊆ H ⊆ U.
pub fn certify_pu_map(
    pm: &PuMap,
    e: &Region,
    u: &Region,
    t: &LinOp,
    jac_points: usize,
    pairs: usize,
    seed: u64,
) -> Result<PuCert> {
    let d = t.dom.dim();
    let ysp = &t.cod;
    let opn = crate::operator::NormOracle::new(&t.dom, &t.cod);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cubes = pm.h.as_boxes().unwrap_or_default();
    let step = pm.h_step.max(1e-9) / 4.0;
    let mut jac_err: f64 = 0.0;
    let mut count = 0;
    if !cubes.is_empty() {
        for _ in 0..jac_points {
            let (a, b) = &cubes[rng.gen_range(0..cubes.len())];
            let x: Vec<f64> = (0..d)
                .map(|i| a[i] + step + rng.gen::<f64>() * (b[i] - a[i] - 2.0 * step).max(0.0))
                .collect();
            let jm = pm.g.jacobian_fd(&x, step);
            jac_err = jac_err.max(opn.ub(&jm.sub(&t.matrix)));
            count += 1;
        }
    }
    let (lo, hi) = match (e.bbox(), pm.bump_radius > 0.0) {
        (Some(_), true) => (
            pm.bump_center
                .iter()
                .map(|c| c - 1.1 * pm.bump_radius)
                .collect::<Vec<f64>>(),
            pm.bump_center
                .iter()
                .map(|c| c + 1.1 * pm.bump_radius)
                .collect::<Vec<f64>>(),
        ),
        (Some(b), false) => b,
        _ => (vec![0.0; d], vec![1.0; d]),
    };
    let (elo, ehi) = e.bbox().unwrap_or((lo.clone(), hi.clone()));
    let stats: Vec<(f64, f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut r = ChaCha8Rng::seed_from_u64(
                seed ^ 0xA5A5 ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            // Half the pairs near E (where g varies fastest), half over the bump.
            let (a, b) = if k % 2 == 0 { (&elo, &ehi) } else { (&lo, &hi) };
            let x: Vec<f64> = (0..d)
                .map(|i| a[i] + r.gen::<f64>() * (b[i] - a[i]))
                .collect();
            let scale = 10f64.powf(-r.gen_range(1.0..5.0));
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + (r.gen::<f64>() - 0.5) * scale)
                .collect();
            let gx = pm.g.eval_f(&x);
            let gy = pm.g.eval_f(&y);
            let diff: Vec<f64> = gx.iter().zip(&gy).map(|(p, q)| p - q).collect();
            let nx = t.dom.dist_f(&x, &y);
            let ratio = if nx > 0.0 {
                ysp.norm_f(&diff) / nx
            } else {
                0.0
            };
            let outside = if u.contains(&x) { 0.0 } else { ysp.norm_f(&gx) };
            (ysp.norm_f(&gx), ratio, outside)
        })
        .collect();
    let sup = stats.iter().map(|s| s.0).fold(0.0, f64::max);
    let lip = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let outside = stats.iter().map(|s| s.2).fold(0.0, f64::max);
    let limit_points = limit_points(e, 8);
    let e_in_h = limit_points.iter().all(|p| pm.h.contains(p));
    let h_in_u = cubes.iter().all(|(a, b)| {
        (0..(1usize << d)).all(|mask| {
            let p: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { b[i] } else { a[i] })
                .collect();
            u.contains(&p)
        })
    });
    let lip_allowed = pm.cyl + pm.theta + pm.gap;
    let pass = jac_err <= pm.theta + pm.gap
        && sup <= pm.theta
        && lip <= lip_allowed
        && outside == 0.0
        && e_in_h
        && h_in_u;
    Ok(PuCert {
        jac_points: count,
        jac_max_err: jac_err,
        sup,
        lip_sampled: lip,
        lip_allowed,
        outside_max: outside,
        e_in_h,
        h_in_u,
        pass,
    })
}

/// Corners of the level-(own + extra) cubes of a Cantor region; all lie in the limit set.
pub fn limit_points(e: &Region, extra: u32) -> Vec<Vec<f64>> {
    let Region::Cantor { level, .. } = e else {
        return vec![];
    };
    let m = (*level + extra).min(7);
    let mut out = vec![];
    for (a, b) in e.cantor_boxes_at(Some(m)) {
        let d = a.len();
        for mask in 0..(1usize << d) {
            out.push(
                (0..d)
                    .map(|i| if mask >> i & 1 == 1 { b[i] } else { a[i] })
                    .collect(),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puresets::{xi_exhaustive, CurveSpec};
    use crate::region::{boxed, gen_four_corner, open_box};

    fn e1(sp: &NormedSpace) -> Functional {
        Functional::new(vec![1.0, 0.0], sp).unwrap()
    }

    #[test]
    fn zero_functional_and_empty_region_give_zero() {
        let sp = NormedSpace::euclidean(2);
        let z = Functional::new(vec![0.0, 0.0], &sp).unwrap();
        let s = build_steep(
            &SteepSpec::new(boxed(vec![0.0, 0.0], vec![1.0, 1.0]), z, 0.3, 0.1).unwrap(),
        )
        .unwrap();
        assert!(s.g.is_zero() || s.g.eval_f(&[0.5, 0.5])[0] == 0.0);
        let s = build_steep(&SteepSpec::new(Region::Empty, e1(&sp), 0.3, 0.1).unwrap()).unwrap();
        assert_eq!(s.g.eval_f(&[0.2, 0.9])[0], 0.0);
    }

    #[test]
    fn tall_box_slope_along_v() {
        let sp = NormedSpace::euclidean(2);
        let h = 1.0 / 64.0;
        let mut spec =
            SteepSpec::new(open_box(vec![-0.1, -2.0], vec![1.1, 2.0]), e1(&sp), 0.3, h).unwrap();
        spec.domain = Some((vec![-0.1, -1.0], vec![1.1, 1.0]));
        let st = build_steep(&spec).unwrap();
        let diff = st.g.eval_f(&[1.0, 0.0])[0] - st.g.eval_f(&[0.0, 0.0])[0];
        assert!((diff - 1.0).abs() <= 3.0 * h, "{diff}");
        assert!(st.ratio <= max_ratio(&sp, &st.v, &st.lateral, 0.3) + 1e-12);
        assert!((st.alpha_eff - 0.3).abs() < 1e-9);
    }

    #[test]
    fn properties_hold_on_four_corner_cover() {
        let sp = NormedSpace::euclidean(2);
        let e = gen_four_corner(2, 0.25).unwrap();
        let (g, _) = cantor_cover_at(&e, 2).unwrap();
        let p = Functional::new(vec![0.8, 0.6], &sp).unwrap();
        let st =
            build_steep(&SteepSpec::new(g.clone(), p.clone(), 0.35, 1.0 / 256.0).unwrap()).unwrap();
        let cert = certify_steep(
            &st,
            &SteepSpec::new(g, p, 0.35, 1.0 / 256.0).unwrap(),
            4000,
            3,
        )
        .unwrap();
        assert!(cert.pass, "{cert:?}");
        assert!(cert.slope_checked > 10);
        assert!(
            st.lip <= cert.lip_claim + 1e-12,
            "{} {}",
            st.lip,
            cert.lip_claim
        );
    }

    #[test]
    fn lattice_value_matches_enumeration_on_axis_lattice() {
        // With P = e₁ and ratio 1 the steep lattice is the unit-step lattice
        // with steps (1, 0), (1, ±1), which the exhaustive oracle can enumerate.
        let sp = NormedSpace::euclidean(2);
        let g = Region::Boxes {
            lo: vec![vec![0.1, 0.0], vec![0.45, 0.3]],
            hi: vec![vec![0.3, 0.25], vec![0.7, 0.5]],
            open: true,
        };
        let h = 0.2;
        let alpha = 1.0 / 2f64.sqrt();
        let mut spec = SteepSpec::new(g.clone(), e1(&sp), alpha, h).unwrap();
        spec.ratio = Some(1.0);
        let st = build_steep(&spec).unwrap();
        let cs = CurveSpec::with_k(e1(&sp), alpha, h, 1).unwrap();
        let ex = xi_exhaustive(&g, &cs, 64).unwrap();
        assert!((st.xi - ex).abs() < 1e-12, "{} {}", st.xi, ex);
    }

    #[test]
    fn non_euclidean_frame_respects_cone() {
        let sp = NormedSpace::lp(2, 3.0);
        let p = Functional::new(vec![1.0, -0.4], &sp).unwrap();
        let g = open_box(vec![0.2, 0.2], vec![0.5, 0.6]);
        let st =
            build_steep(&SteepSpec::new(g.clone(), p.clone(), 0.4, 1.0 / 128.0).unwrap()).unwrap();
        assert!(st.alpha_eff >= 0.4 * (1.0 - 1e-9));
        let cert = certify_steep(
            &st,
            &SteepSpec::new(g, p, 0.4, 1.0 / 128.0).unwrap(),
            3000,
            5,
        )
        .unwrap();
        assert!(cert.pass, "{cert:?}");
    }

    #[test]
    fn pu_map_trivial_cases() {
        let sp = NormedSpace::euclidean(2);
        let u = Region::Balls {
            space: sp.clone(),
            centers: vec![vec![0.5, 0.5]],
            radii: vec![3.0],
            open: true,
        };
        let t0 = LinOp::zero(&sp, &sp);
        let e = gen_four_corner(2, 0.25).unwrap();
        let pm = build_pu_map(&e, &u, &t0, 0.2, &PuMapOptions::default()).unwrap();
        assert_eq!(pm.g.eval_f(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert!(pm.h.contains(&[0.0, 0.0]) && pm.h.contains(&[1.0, 1.0]));
        let t = LinOp::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]], &sp, &sp).unwrap();
        let pm = build_pu_map(&Region::Empty, &u, &t, 0.2, &PuMapOptions::default()).unwrap();
        assert!(matches!(pm.h, Region::Empty));
        let tight = Region::Balls {
            space: sp.clone(),
            centers: vec![vec![0.5, 0.5]],
            radii: vec![0.8],
            open: true,
        };
        assert!(matches!(
            build_pu_map(&e, &tight, &t, 0.2, &PuMapOptions::default()),
            Err(Error::Cover(_))
        ));
    }

    #[test]
    fn pu_map_budget_error_carries_eps() {
        let sp = NormedSpace::euclidean(2);
        let u = Region::Balls {
            space: sp.clone(),
            centers: vec![vec![0.5, 0.5]],
            radii: vec![4.0],
            open: true,
        };
        let t = LinOp::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]], &sp, &sp).unwrap();
        let e = gen_four_corner(1, 0.25).unwrap();
        let opts = PuMapOptions {
            max_level: 2,
            ..PuMapOptions::default()
        };
        match build_pu_map(&e, &u, &t, 0.05, &opts) {
            Err(Error::Budget(m)) => assert!(m.contains("ε"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}

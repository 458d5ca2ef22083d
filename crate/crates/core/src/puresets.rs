//! Curve-intersection estimates ξ(G, P, α) by longest-path DP over lattice
//! curves, and open covers of Cantor sets with small ξ.

use crate::error::{Error, Result};
use crate::region::Region;
use crate::space::{Functional, NormedSpace};
use rayon::prelude::*;
use serde::Serialize;

/// Relative slack in the cone test P(u) ≥ α‖u‖‖P‖ (absorbs rounding at the boundary ray).
pub const CONE_TOL: f64 = 1e-12;
/// Node budget of a single DP.
pub const MAX_NODES: usize = 40_000_000;
/// Sub-samples per edge for regions without exact clipping.
pub const EDGE_SAMPLES: usize = 16;
/// Cover boxes are enlarged by this fraction of their side on each face.
pub const COVER_ENLARGE: f64 = 0.25;

/// Cone-constrained lattice curves: steps u ∈ [−k,k]^d, primitive, with
/// P(u) ≥ α‖u‖‖P‖.
#[derive(Clone, Debug)]
pub struct CurveSpec {
    pub p: Functional,
    pub alpha: f64,
    pub h: f64,
    pub k: usize,
}

impl CurveSpec {
    pub fn new(p: Functional, alpha: f64, h: f64) -> Result<CurveSpec> {
        CurveSpec::with_k(p, alpha, h, 3)
    }

    pub fn with_k(p: Functional, alpha: f64, h: f64, k: usize) -> Result<CurveSpec> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Input(format!(
                "cone parameter α = {alpha} outside (0,1)"
            )));
        }
        if !(h > 0.0 && h.is_finite()) || k == 0 {
            return Err(Error::Input("lattice step must be positive".into()));
        }
        if p.dual_norm == 0.0 {
            return Err(Error::Input("P = 0 gives no cone order".into()));
        }
        Ok(CurveSpec { p, alpha, h, k })
    }

    pub fn space(&self) -> &NormedSpace {
        &self.p.space
    }

    /// Whether the physical direction u is admissible.
    pub fn admits(&self, u: &[f64]) -> bool {
        admits(&self.p, self.alpha, u)
    }

    /// Admissible primitive integer steps in [−k,k]^d.
    pub fn steps(&self) -> Vec<Vec<i64>> {
        let d = self.p.coeffs.len();
        let k = self.k as i64;
        let side = (2 * k + 1) as usize;
        let mut out = vec![];
        for mut code in 0..side.pow(d as u32) {
            let u: Vec<i64> = (0..d)
                .map(|_| {
                    let c = (code % side) as i64 - k;
                    code /= side;
                    c
                })
                .collect();
            if u.iter().all(|c| *c == 0) || u.iter().fold(0, |g, c| gcd(g, c.abs())) != 1 {
                continue;
            }
            let uf: Vec<f64> = u.iter().map(|c| *c as f64).collect();
            if self.admits(&uf) {
                out.push(u);
            }
        }
        out
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub(crate) fn admits(p: &Functional, alpha: f64, u: &[f64]) -> bool {
    let pu = p.apply(u);
    pu > 0.0 && pu >= alpha * p.space.norm_f(u) * p.dual_norm * (1.0 - CONE_TOL)
}

// ---- edge measure -------------------------------------------------------

/// Uniform bin index over a list of axis boxes.
pub(crate) struct BoxIndex {
    boxes: Vec<(Vec<f64>, Vec<f64>)>,
    lo: Vec<f64>,
    cell: Vec<f64>,
    dims: Vec<usize>,
    bins: Vec<Vec<u32>>,
}

impl BoxIndex {
    pub(crate) fn new(boxes: Vec<(Vec<f64>, Vec<f64>)>) -> BoxIndex {
        let d = boxes.first().map(|b| b.0.len()).unwrap_or(1);
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (a, b) in &boxes {
            for i in 0..d {
                lo[i] = lo[i].min(a[i]);
                hi[i] = hi[i].max(b[i]);
            }
        }
        let per = ((boxes.len() as f64).powf(1.0 / d as f64).ceil() as usize * 2).clamp(1, 256);
        let dims = vec![per; d];
        let cell: Vec<f64> = (0..d)
            .map(|i| ((hi[i] - lo[i]) / per as f64).max(1e-300))
            .collect();
        let total: usize = dims.iter().product();
        let mut bins = vec![vec![]; if boxes.is_empty() { 0 } else { total }];
        let mut ix = BoxIndex {
            boxes: vec![],
            lo,
            cell,
            dims,
            bins: vec![],
        };
        for (k, (a, b)) in boxes.iter().enumerate() {
            let (r0, r1) = (ix.bin_of(a), ix.bin_of(b));
            ix.for_bins(&r0, &r1, |flat| bins[flat].push(k as u32));
        }
        ix.boxes = boxes;
        ix.bins = bins;
        ix
    }

    fn bin_of(&self, x: &[f64]) -> Vec<usize> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                (((v - self.lo[i]) / self.cell[i]).floor().max(0.0) as usize).min(self.dims[i] - 1)
            })
            .collect()
    }

    fn for_bins(&self, r0: &[usize], r1: &[usize], mut f: impl FnMut(usize)) {
        let d = r0.len();
        let mut cur = r0.to_vec();
        loop {
            let mut flat = 0;
            for i in 0..d {
                flat = flat * self.dims[i] + cur[i];
            }
            f(flat);
            let mut i = d;
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                if cur[i] < r1[i] {
                    cur[i] += 1;
                    break;
                }
                cur[i] = r0[i];
            }
        }
    }

    /// Fraction of the segment [a, b] inside the union of boxes.
    pub(crate) fn fraction(&self, a: &[f64], b: &[f64]) -> f64 {
        if self.boxes.is_empty() {
            return 0.0;
        }
        let d = a.len();
        let mn: Vec<f64> = (0..d).map(|i| a[i].min(b[i])).collect();
        let mx: Vec<f64> = (0..d).map(|i| a[i].max(b[i])).collect();
        for i in 0..d {
            let top = self.lo[i] + self.cell[i] * self.dims[i] as f64;
            if mx[i] < self.lo[i] || mn[i] > top {
                return 0.0;
            }
        }
        let (r0, r1) = (self.bin_of(&mn), self.bin_of(&mx));
        let mut cand: Vec<u32> = vec![];
        self.for_bins(&r0, &r1, |flat| cand.extend_from_slice(&self.bins[flat]));
        cand.sort_unstable();
        cand.dedup();
        let mut iv: Vec<(f64, f64)> = vec![];
        for k in cand {
            let (lo, hi) = &self.boxes[k as usize];
            if let Some(t) = clip(a, b, lo, hi) {
                iv.push(t);
            }
        }
        merged_length(iv)
    }
}

/// Parameter interval of [a, b] inside the closed box [lo, hi].
fn clip(a: &[f64], b: &[f64], lo: &[f64], hi: &[f64]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..a.len() {
        let dir = b[i] - a[i];
        if dir == 0.0 {
            if a[i] < lo[i] || a[i] > hi[i] {
                return None;
            }
        } else {
            let (mut u, mut v) = ((lo[i] - a[i]) / dir, (hi[i] - a[i]) / dir);
            if u > v {
                std::mem::swap(&mut u, &mut v);
            }
            t0 = t0.max(u);
            t1 = t1.min(v);
            if t0 >= t1 {
                return None;
            }
        }
    }
    Some((t0, t1))
}

fn merged_length(mut iv: Vec<(f64, f64)>) -> f64 {
    if iv.is_empty() {
        return 0.0;
    }
    iv.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut total = 0.0;
    let (mut s, mut e) = iv[0];
    for &(a, b) in &iv[1..] {
        if a > e {
            total += e - s;
            s = a;
            e = b;
        } else {
            e = e.max(b);
        }
    }
    (total + e - s).min(1.0)
}

/// Measures edge ∩ G: exact clipping for box-type regions, sub-sampling otherwise.
pub(crate) enum Weigher {
    Empty,
    Boxes(BoxIndex),
    Sampled(Region),
}

impl Weigher {
    pub(crate) fn new(g: &Region) -> Weigher {
        if g.is_empty_kind() {
            return Weigher::Empty;
        }
        match g.as_boxes() {
            Some(b) if b.is_empty() => Weigher::Empty,
            Some(b) => Weigher::Boxes(BoxIndex::new(b)),
            None => Weigher::Sampled(g.clone()),
        }
    }

    pub(crate) fn fraction(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Weigher::Empty => 0.0,
            Weigher::Boxes(ix) => ix.fraction(a, b),
            Weigher::Sampled(r) => {
                let mut p = vec![0.0; a.len()];
                let hits = (0..EDGE_SAMPLES)
                    .filter(|j| {
                        let t = (*j as f64 + 0.5) / EDGE_SAMPLES as f64;
                        for i in 0..a.len() {
                            p[i] = a[i] + t * (b[i] - a[i]);
                        }
                        r.contains(&p)
                    })
                    .count();
                hits as f64 / EDGE_SAMPLES as f64
            }
        }
    }
}

// ---- lattice DP ----------------------------------------------------------

/// A finite lattice origin + Σ c_j·basis_j, c_j ∈ [0, n_j), with integer steps.
pub(crate) struct LatticeGraph {
    pub origin: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub n: Vec<usize>,
    pub steps: Vec<Vec<i64>>,
}

pub(crate) struct DpOutcome {
    pub value: Vec<f64>,
    pub back: Vec<u8>,
    pub best: usize,
}

pub(crate) const NO_PRED: u8 = u8::MAX;

impl LatticeGraph {
    pub(crate) fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub(crate) fn coords(&self, mut idx: usize) -> Vec<i64> {
        let d = self.n.len();
        let mut c = vec![0i64; d];
        for i in (0..d).rev() {
            c[i] = (idx % self.n[i]) as i64;
            idx /= self.n[i];
        }
        c
    }

    pub(crate) fn index(&self, c: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for (i, v) in c.iter().enumerate() {
            if *v < 0 || *v as usize >= self.n[i] {
                return None;
            }
            flat = flat * self.n[i] + *v as usize;
        }
        Some(flat)
    }

    pub(crate) fn point_of(&self, c: &[i64]) -> Vec<f64> {
        let mut x = self.origin.clone();
        for (j, cj) in c.iter().enumerate() {
            for (xi, bi) in x.iter_mut().zip(&self.basis[j]) {
                *xi += *cj as f64 * bi;
            }
        }
        x
    }

    pub(crate) fn step_vec(&self, u: &[i64]) -> Vec<f64> {
        let d = self.origin.len();
        let mut v = vec![0.0; d];
        for (j, uj) in u.iter().enumerate() {
            for i in 0..d {
                v[i] += *uj as f64 * self.basis[j][i];
            }
        }
        v
    }

    /// V(n) = max(0, max_u V(n−u) + |edge ∩ G|), nodes processed by increasing P.
    pub(crate) fn longest(&self, w: &Weigher, p: &Functional) -> DpOutcome {
        let len = self.len();
        let pb: Vec<f64> = self.basis.iter().map(|b| p.apply(b)).collect();
        let slen: Vec<f64> = self
            .steps
            .iter()
            .map(|u| p.space.norm_f(&self.step_vec(u)))
            .collect();
        let mut order: Vec<u32> = (0..len as u32).collect();
        let key = |i: u32| -> f64 {
            self.coords(i as usize)
                .iter()
                .zip(&pb)
                .map(|(c, b)| *c as f64 * b)
                .sum()
        };
        order.sort_by(|a, b| key(*a).total_cmp(&key(*b)).then(a.cmp(b)));
        let mut value = vec![0.0f64; len];
        let mut back = vec![NO_PRED; len];
        let mut best = 0usize;
        for &node in &order {
            let node = node as usize;
            let c = self.coords(node);
            let x = self.point_of(&c);
            let mut v = 0.0;
            let mut arg = NO_PRED;
            for (s, u) in self.steps.iter().enumerate() {
                let pc: Vec<i64> = c.iter().zip(u).map(|(a, b)| a - b).collect();
                let Some(pred) = self.index(&pc) else {
                    continue;
                };
                let cand = value[pred] + w.fraction(&self.point_of(&pc), &x) * slen[s];
                if cand > v {
                    v = cand;
                    arg = s as u8;
                }
            }
            value[node] = v;
            back[node] = arg;
            if v > value[best] {
                best = node;
            }
        }
        DpOutcome { value, back, best }
    }

    /// Node path ending at `end`, following back pointers.
    pub(crate) fn trace(&self, out: &DpOutcome, end: usize) -> Vec<Vec<i64>> {
        let mut path = vec![self.coords(end)];
        let mut cur = end;
        while out.back[cur] != NO_PRED {
            let u = &self.steps[out.back[cur] as usize];
            let c: Vec<i64> = self.coords(cur).iter().zip(u).map(|(a, b)| a - b).collect();
            cur = self.index(&c).expect("back pointer stays in the lattice");
            path.push(c);
        }
        path.reverse();
        path
    }
}

// ---- ξ estimate ------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct XiEstimate {
    pub value: f64,
    pub gap: f64,
    pub witness: Vec<Vec<f64>>,
    pub crossings: usize,
    /// Longest admissible step, in units of h.
    pub c: f64,
    pub h: f64,
    pub nodes: usize,
}

fn xi_lattice(
    g: &Region,
    spec: &CurveSpec,
    frame: Option<(&[f64], &[f64])>,
) -> Result<Option<LatticeGraph>> {
    if !g.is_bounded() {
        return Err(Error::Domain("ξ estimate needs a bounded G".into()));
    }
    let (lo, hi) = match (frame, g.bbox()) {
        (Some((a, b)), _) => (a.to_vec(), b.to_vec()),
        (None, Some(bb)) => bb,
        (None, None) => return Ok(None),
    };
    let d = spec.p.coeffs.len();
    if lo.len() != d {
        return Err(Error::Input("G and P dimensions differ".into()));
    }
    let h = spec.h;
    let m = spec.k as f64;
    let origin: Vec<f64> = lo.iter().map(|a| a - m * h).collect();
    let n: Vec<usize> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| ((b - a) / h).ceil() as usize + 2 * spec.k + 1)
        .collect();
    let total = n.iter().try_fold(1usize, |acc, k| acc.checked_mul(*k));
    if total.map_or(true, |t| t > MAX_NODES) {
        return Err(Error::Resolution(format!(
            "lattice with h = {h} exceeds {MAX_NODES} nodes"
        )));
    }
    let basis = (0..d)
        .map(|i| (0..d).map(|j| if i == j { h } else { 0.0 }).collect())
        .collect();
    Ok(Some(LatticeGraph {
        origin,
        basis,
        n,
        steps: spec.steps(),
    }))
}

/// Longest admissible lattice curve through G: value is a lower estimate of
/// ξ(G, P, α) over lattice curves; gap = h·crossings·c.
pub fn xi_estimate(g: &Region, spec: &CurveSpec) -> Result<XiEstimate> {
    xi_estimate_in(g, spec, None)
}

/// As [`xi_estimate`], on the lattice spanned by an explicit box `frame`
/// instead of bbox(G), so that different regions can share one lattice.
pub fn xi_estimate_in(
    g: &Region,
    spec: &CurveSpec,
    frame: Option<(&[f64], &[f64])>,
) -> Result<XiEstimate> {
    let empty = XiEstimate {
        value: 0.0,
        gap: 0.0,
        witness: vec![],
        crossings: 0,
        c: 0.0,
        h: spec.h,
        nodes: 0,
    };
    let Some(lat) = xi_lattice(g, spec, frame)? else {
        return Ok(empty);
    };
    let w = Weigher::new(g);
    if matches!(w, Weigher::Empty) {
        return Ok(XiEstimate {
            nodes: lat.len(),
            ..empty
        });
    }
    let out = lat.longest(&w, &spec.p);
    let path = lat.trace(&out, out.best);
    let witness: Vec<Vec<f64>> = path.iter().map(|c| lat.point_of(c)).collect();
    let fr: Vec<f64> = witness
        .windows(2)
        .map(|e| w.fraction(&e[0], &e[1]))
        .collect();
    let crossings = crossings(&fr);
    let c = lat
        .steps
        .iter()
        .map(|u| spec.space().norm_f(&lat.step_vec(u)))
        .fold(0.0, f64::max)
        / spec.h;
    Ok(XiEstimate {
        value: out.value[out.best],
        gap: spec.h * crossings as f64 * c,
        witness,
        crossings,
        c,
        h: spec.h,
        nodes: lat.len(),
    })
}

/// Boundary crossings along a path given per-edge inside fractions.
pub(crate) fn crossings(fr: &[f64]) -> usize {
    let partial = fr.iter().filter(|f| **f > 0.0 && **f < 1.0).count();
    let jumps = fr
        .windows(2)
        .filter(|p| (p[0] == 1.0 && p[1] == 0.0) || (p[0] == 0.0 && p[1] == 1.0))
        .count();
    partial + jumps + usize::from(!fr.is_empty())
}

/// Exhaustive enumeration of every admissible lattice path (small grids only).
pub fn xi_exhaustive(g: &Region, spec: &CurveSpec, max_nodes: usize) -> Result<f64> {
    let Some(lat) = xi_lattice(g, spec, None)? else {
        return Ok(0.0);
    };
    if lat.len() > max_nodes {
        return Err(Error::Budget(format!(
            "{} nodes exceed the enumeration limit {max_nodes}",
            lat.len()
        )));
    }
    let w = Weigher::new(g);
    let slen: Vec<f64> = lat
        .steps
        .iter()
        .map(|u| spec.space().norm_f(&lat.step_vec(u)))
        .collect();
    fn dfs(lat: &LatticeGraph, w: &Weigher, slen: &[f64], c: &[i64], acc: f64) -> f64 {
        let x = lat.point_of(c);
        let mut best = acc;
        for (s, u) in lat.steps.iter().enumerate() {
            let nc: Vec<i64> = c.iter().zip(u).map(|(a, b)| a + b).collect();
            if lat.index(&nc).is_some() {
                let y = lat.point_of(&nc);
                best = best.max(dfs(lat, w, slen, &nc, acc + w.fraction(&x, &y) * slen[s]));
            }
        }
        best
    }
    Ok((0..lat.len())
        .map(|i| dfs(&lat, &w, &slen, &lat.coords(i), 0.0))
        .fold(0.0, f64::max))
}

// ---- covers ------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct Cover {
    /// Open cover G ⊇ E.
    pub g: Region,
    /// Closed cubes of the chosen level (E ⊆ H ⊆ G).
    pub h_region: Region,
    pub level: Option<u32>,
    pub value: f64,
    pub gap: f64,
    pub met: bool,
    /// (level, value, gap) per swept level.
    pub sweep: Vec<(u32, f64, f64)>,
}

/// Face enlargement (fraction of side) keeping the enlarged sibling cubes disjoint.
pub fn enlarge_frac(ratio: f64) -> f64 {
    COVER_ENLARGE.min((1.0 / ratio - 2.0) / 4.0).max(0.01)
}

/// Level-m cubes of a Cantor region, as closed cubes and enlarged open boxes.
pub fn cantor_cover_at(e: &Region, m: u32) -> Result<(Region, Region)> {
    let Region::Cantor { ratio, .. } = e else {
        return Err(Error::Input("cantor cover needs a cantor region".into()));
    };
    let cubes = e.cantor_boxes_at(Some(m));
    let f = enlarge_frac(*ratio);
    let (mut lo, mut hi) = (vec![], vec![]);
    for (a, b) in &cubes {
        let s = b[0] - a[0];
        lo.push(a.iter().map(|v| v - f * s).collect());
        hi.push(b.iter().map(|v| v + f * s).collect());
    }
    let h = Region::Boxes {
        lo: cubes.iter().map(|c| c.0.clone()).collect(),
        hi: cubes.iter().map(|c| c.1.clone()).collect(),
        open: false,
    };
    Ok((Region::Boxes { lo, hi, open: true }, h))
}

/// Open cover of E with ξ-estimate ≤ ε (+ gap). Cantor E sweeps levels
/// 0..=max_level, each at lattice step min(h, enlarged side/3); a finite point
/// set is covered by balls of radius α·ε/4.
pub fn pu_cover(e: &Region, spec: &CurveSpec, eps: f64, max_level: u32) -> Result<Cover> {
    if !(eps > 0.0) {
        return Err(Error::Input("ε must be positive".into()));
    }
    match e {
        Region::Points { points } => {
            let r = spec.alpha * eps / 4.0;
            let g = Region::Balls {
                space: spec.space().clone(),
                centers: points.clone(),
                radii: vec![r; points.len()],
                open: true,
            };
            let fine = CurveSpec {
                h: spec.h.min(r / 4.0),
                ..spec.clone()
            };
            let est = xi_estimate(&g, &fine)?;
            let h_region = Region::Balls {
                space: spec.space().clone(),
                centers: points.clone(),
                radii: vec![r / 2.0; points.len()],
                open: false,
            };
            Ok(Cover {
                met: est.value <= eps,
                g,
                h_region,
                level: None,
                value: est.value,
                gap: est.gap,
                sweep: vec![],
            })
        }
        Region::Cantor { ratio, side, .. } => {
            let f = enlarge_frac(*ratio);
            let levels: Vec<u32> = (0..=max_level).collect();
            let mut sweep = vec![];
            let mut best: Option<Cover> = None;
            for m in levels {
                let (g, h_region) = cantor_cover_at(e, m)?;
                let s = side * ratio.powi(m as i32) * (1.0 + 2.0 * f);
                let lspec = CurveSpec {
                    h: spec.h.min(s / 3.0),
                    ..spec.clone()
                };
                let est = match xi_estimate(&g, &lspec) {
                    Ok(v) => v,
                    Err(Error::Resolution(_)) => break,
                    Err(err) => return Err(err),
                };
                sweep.push((m, est.value, est.gap));
                let cand = Cover {
                    g,
                    h_region,
                    level: Some(m),
                    value: est.value,
                    gap: est.gap,
                    met: est.value <= eps,
                    sweep: vec![],
                };
                let done = cand.met;
                if best.as_ref().map_or(true, |b| cand.value < b.value) || done {
                    best = Some(cand);
                }
                if done {
                    break;
                }
            }
            let mut out =
                best.ok_or_else(|| Error::Budget("no cover level fits the node budget".into()))?;
            out.sweep = sweep;
            Ok(out)
        }
        _ => Err(Error::Input(
            "pu_cover takes a cantor or finite point region".into(),
        )),
    }
}

/// ξ estimates for several levels of a Cantor set at one lattice (parallel sweep).
pub fn level_sweep(e: &Region, spec: &CurveSpec, levels: &[u32]) -> Result<Vec<XiEstimate>> {
    levels
        .par_iter()
        .map(|m| match e {
            Region::Cantor {
                ratio,
                origin,
                side,
                ..
            } => xi_estimate(
                &Region::Cantor {
                    level: *m,
                    ratio: *ratio,
                    origin: origin.clone(),
                    side: *side,
                },
                spec,
            ),
            _ => Err(Error::Input("level sweep needs a cantor region".into())),
        })
        .collect()
}

//! Certification harness: derivative-set scans, Lipschitz estimates,
//! Dini checks and C¹ finite-difference checks.

use crate::error::{Error, Result};
use crate::func::LipFn;
use crate::operator::LinOp;
use crate::real::{bits_for_scale, Mp, Real};
use crate::region::Region;
use crate::space::NormedSpace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Scales below this are evaluated in multiprecision when no precision is forced.
pub const MP_THRESHOLD: f64 = 1e-6;

/// Evaluates (f(x+u) − f(x))/t with u = t·w, in multiprecision when `prec` is set.
fn quotient(
    f: &LipFn,
    x: &[f64],
    fx_mp: Option<&[Mp]>,
    fx: &[f64],
    w: &[f64],
    t: f64,
    prec: Option<u32>,
) -> Vec<f64> {
    match prec {
        None => {
            let y: Vec<f64> = x.iter().zip(w).map(|(a, b)| a + t * b).collect();
            f.eval_f(&y)
                .iter()
                .zip(fx)
                .map(|(a, b)| (a - b) / t)
                .collect()
        }
        Some(p) => {
            let y: Vec<Mp> = x
                .iter()
                .zip(w)
                .map(|(a, b)| Mp::new(p, *a) + Mp::new(p, t * b))
                .collect();
            let fy = f.eval(&y);
            let tm = Mp::new(p, t);
            fy.into_iter()
                .zip(fx_mp.expect("mp base value"))
                .map(|(a, b)| ((a - b.clone()) / tm.clone()).to_f64())
                .collect()
        }
    }
}

fn auto_prec(t: f64, forced: Option<u32>) -> Option<u32> {
    match forced {
        Some(p) => Some(p),
        None if t < MP_THRESHOLD => Some(bits_for_scale(t, 64)),
        None => None,
    }
}

/// Unit vectors in `sp`: ± axes followed by `n` seeded random directions.
pub fn directions(sp: &NormedSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = sp.dim();
    let mut out = vec![];
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            let k = sp.norm_f(&e);
            out.push(e.into_iter().map(|v| v / k).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < 2 * d + n {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let k = sp.norm_f(&v);
        if k > 1e-3 {
            out.push(v.into_iter().map(|c| c / k).collect());
        }
    }
    out
}

/// 2^{-j} for j in lo..=hi.
pub fn dyadic_scales(lo: u32, hi: u32) -> Vec<f64> {
    (lo..=hi).map(|j| 0.5f64.powi(j as i32)).collect()
}

#[derive(Clone, Debug)]
pub struct ScanConfig {
    pub dirs: usize,
    pub seed: u64,
    /// Fractions of each scale at which directions are also probed.
    pub fracs: Vec<f64>,
    /// Forced precision; `None` picks f64 or multiprecision per scale.
    pub prec: Option<u32>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            dirs: 200,
            seed: 0,
            fracs: vec![1.0, 0.5],
            prec: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpVerdict {
    pub op: Vec<Vec<f64>>,
    /// e_j per scale.
    pub errors: Vec<f64>,
    pub min_error: f64,
    pub best_scale: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivScanReport {
    pub point: Vec<f64>,
    pub scales: Vec<f64>,
    pub tol: f64,
    pub dirs: usize,
    pub verdicts: Vec<OpVerdict>,
}

impl DerivScanReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    /// One line per (operator, scale): `op,scale,error`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("op,scale,error\n");
        for (i, v) in self.verdicts.iter().enumerate() {
            for (r, e) in self.scales.iter().zip(&v.errors) {
                s.push_str(&format!("{i},{r:e},{e:e}\n"));
            }
        }
        s
    }
}

/// e_j(T) = sup_u ‖f(x+u) − f(x) − Tu‖/r_j over sampled ‖u‖ ≤ r_j.
pub fn scan_derivative_set(
    f: &LipFn,
    x: &[f64],
    ops: &[LinOp],
    scales: &[f64],
    tol: f64,
    q: Option<&Region>,
    cfg: &ScanConfig,
) -> Result<DerivScanReport> {
    if x.len() != f.din() || ops.is_empty() {
        return Err(Error::Input(
            "scan: bad point or empty operator list".into(),
        ));
    }
    if scales.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::Input("scan: scales must be positive".into()));
    }
    let xs = ops[0].dom.clone();
    let ys = ops[0].cod.clone();
    if ops
        .iter()
        .any(|t| t.dom.dim() != f.din() || t.cod.dim() != f.dout())
    {
        return Err(Error::Input("scan: operator shape mismatch".into()));
    }
    if let Some(q) = q {
        let rmax = scales.iter().copied().fold(0.0, f64::max);
        let dep = q.depth(x, &xs);
        if dep < rmax {
            return Err(Error::Domain(format!(
                "scale {rmax:e} exits Q (depth {dep:e})"
            )));
        }
    }
    let dirs = directions(&xs, cfg.dirs, cfg.seed);
    let fx = f.eval_f(x);
    let per_scale: Vec<Vec<f64>> = scales
        .par_iter()
        .map(|&r| {
            let prec = auto_prec(r * cfg.fracs.iter().copied().fold(1.0, f64::min), cfg.prec);
            let fx_mp = prec.map(|p| f.eval_mp(x, p));
            let mut worst = vec![0.0f64; ops.len()];
            for w in &dirs {
                for &fr in &cfg.fracs {
                    let t = r * fr;
                    let dq = quotient(f, x, fx_mp.as_deref(), &fx, w, t, prec);
                    for (k, op) in ops.iter().enumerate() {
                        let tw = op.apply(w);
                        let diff: Vec<f64> =
                            dq.iter().zip(&tw).map(|(a, b)| (a - b) * fr).collect();
                        worst[k] = worst[k].max(ys.norm_f(&diff));
                    }
                }
            }
            worst
        })
        .collect();
    let verdicts = ops
        .iter()
        .enumerate()
        .map(|(k, op)| {
            let errors: Vec<f64> = per_scale.iter().map(|v| v[k]).collect();
            let (j, min_error) = errors
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            OpVerdict {
                op: op.matrix.to_rows(),
                errors,
                min_error,
                best_scale: scales[j],
                pass: min_error <= tol,
            }
        })
        .collect();
    Ok(DerivScanReport {
        point: x.to_vec(),
        scales: scales.to_vec(),
        tol,
        dirs: dirs.len(),
        verdicts,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipEstimate {
    pub ratio: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

fn sample_box(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter()
        .zip(hi)
        .map(|(a, b)| if b > a { rng.gen_range(*a..*b) } else { *a })
        .collect()
}

/// Lower bound on Lip(f|Q) from `pairs` sampled pairs: a mix of independent
/// pairs and near-diagonal pairs at gaps 10⁻¹..10⁻⁶ of the bbox width.
pub fn lip_estimate(
    f: &LipFn,
    q: &Region,
    xs: &NormedSpace,
    ys: &NormedSpace,
    pairs: usize,
    seed: u64,
) -> LipEstimate {
    let d = f.din();
    let (lo, hi) = q.bbox().unwrap_or((vec![-1.0; d], vec![1.0; d]));
    let width = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max)
        .max(1e-300);
    let pairs = pairs.max(1);
    let chunks = 64.min(pairs);
    let per = pairs.div_ceil(chunks);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (c as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15));
            let mut best = LipEstimate {
                ratio: 0.0,
                x: lo.clone(),
                y: lo.clone(),
            };
            let n = per.min(pairs.saturating_sub(c * per));
            for i in 0..n {
                let pick = |rng: &mut ChaCha8Rng| {
                    let mut p = sample_box(rng, &lo, &hi);
                    for _ in 0..20 {
                        if q.contains(&p) {
                            break;
                        }
                        p = sample_box(rng, &lo, &hi);
                    }
                    p
                };
                let x = pick(&mut rng);
                let y = if i % 4 == 0 {
                    pick(&mut rng)
                } else {
                    let gap = width * 10f64.powi(-((i % 6) as i32) - 1);
                    x.iter()
                        .map(|v| v + gap * rng.gen_range(-1.0..1.0))
                        .collect()
                };
                let dx = xs.dist_f(&x, &y);
                if dx == 0.0 {
                    continue;
                }
                let r = ys.dist_f(&f.eval_f(&x), &f.eval_f(&y)) / dx;
                if r > best.ratio {
                    best = LipEstimate { ratio: r, x, y };
                }
            }
            best
        })
        .reduce_with(|a, b| if b.ratio > a.ratio { b } else { a })
        .expect("at least one chunk")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentLip {
    /// max ‖f(x)−f(y)‖/‖x−y‖ over the given pairs.
    pub global: f64,
    /// max ratio over consecutive subdivision points of each segment.
    pub local: f64,
}

/// Local-to-global check along segments: the global ratio never exceeds
/// the largest ratio between consecutive subdivision points.
pub fn lip_segments(
    f: &LipFn,
    xs: &NormedSpace,
    ys: &NormedSpace,
    pairs: &[(Vec<f64>, Vec<f64>)],
    n: usize,
) -> SegmentLip {
    let n = n.max(1);
    pairs
        .par_iter()
        .map(|(a, b)| {
            let dx = xs.dist_f(a, b);
            if dx == 0.0 {
                return SegmentLip {
                    global: 0.0,
                    local: 0.0,
                };
            }
            let global = ys.dist_f(&f.eval_f(a), &f.eval_f(b)) / dx;
            let pt = |k: usize| -> Vec<f64> {
                let t = k as f64 / n as f64;
                a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect()
            };
            let mut local: f64 = 0.0;
            let mut prev = (pt(0), f.eval_f(a));
            for k in 1..=n {
                let p = if k == n { b.clone() } else { pt(k) };
                let v = f.eval_f(&p);
                let h = xs.dist_f(&prev.0, &p);
                if h > 0.0 {
                    local = local.max(ys.dist_f(&prev.1, &v) / h);
                }
                prev = (p, v);
            }
            SegmentLip { global, local }
        })
        .reduce(
            || SegmentLip {
                global: 0.0,
                local: 0.0,
            },
            |a, b| SegmentLip {
                global: a.global.max(b.global),
                local: a.local.max(b.local),
            },
        )
}

/// sup over `pts` of ‖f − g‖_Y with the maximiser.
pub fn sup_dist(
    f: &LipFn,
    g: &LipFn,
    pts: &[Vec<f64>],
    ys: &NormedSpace,
    prec: Option<u32>,
) -> (f64, Vec<f64>) {
    pts.par_iter()
        .map(|p| {
            let d = match prec {
                None => ys.dist_f(&f.eval_f(p), &g.eval_f(p)),
                Some(b) => {
                    let a = f.eval_mp(p, b);
                    let c = g.eval_mp(p, b);
                    let diff: Vec<Mp> = a.into_iter().zip(c).map(|(u, v)| u - v).collect();
                    ys.norm(&diff).to_f64()
                }
            };
            (d, p.clone())
        })
        .reduce(|| (0.0, vec![]), |a, b| if b.0 > a.0 { b } else { a })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiniReport {
    pub point: Vec<f64>,
    pub dir: Vec<f64>,
    pub tgrid: Vec<f64>,
    /// min over the grid of (f(x+tv) − f(x))/t; an upper bound on the liminf.
    pub plus: f64,
    pub minus: f64,
    pub margin: f64,
    pub empty_flag: bool,
}

/// Lower Dini derivatives of a scalar f along ±v, sampled on `tgrid`.
pub fn dini_check(
    f: &LipFn,
    x: &[f64],
    v: &[f64],
    tgrid: &[f64],
    margin: f64,
) -> Result<DiniReport> {
    if f.dout() != 1 || x.len() != f.din() || v.len() != f.din() {
        return Err(Error::Input(
            "dini check needs a scalar function and matching point/direction".into(),
        ));
    }
    if tgrid.is_empty() || tgrid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Input("dini t-grid must be positive".into()));
    }
    let fx = f.eval_f(x);
    let one_side = |w: &[f64]| -> f64 {
        tgrid
            .par_iter()
            .map(|&t| {
                let prec = auto_prec(t, None);
                let fx_mp = prec.map(|p| f.eval_mp(x, p));
                quotient(f, x, fx_mp.as_deref(), &fx, w, t, prec)[0]
            })
            .reduce(|| f64::INFINITY, f64::min)
    };
    let neg: Vec<f64> = v.iter().map(|c| -c).collect();
    let plus = one_side(v);
    let minus = one_side(&neg);
    Ok(DiniReport {
        point: x.to_vec(),
        dir: v.to_vec(),
        tgrid: tgrid.to_vec(),
        plus,
        minus,
        margin,
        empty_flag: plus < -margin && minus < -margin,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct C1Report {
    pub pass: bool,
    /// Largest one-sided gap ‖D⁺f − D⁻f‖ at step h/2.
    pub worst_residual: f64,
    pub worst_point: Vec<f64>,
    /// Smallest central-difference Richardson ratio among non-converged points.
    pub min_richardson: f64,
    /// max ‖J(p_i) − J(p_{i+1})‖/‖p_i − p_{i+1}‖ over consecutive points.
    pub jac_modulus: f64,
    pub failures: Vec<usize>,
}

/// Richardson ratios are accepted within this fraction of their nominal value.
pub const RICHARDSON_SLACK: f64 = 0.15;

struct PointC1 {
    pass: bool,
    gap: f64,
    rich: f64,
}

fn c1_at(f: &LipFn, x: &[f64], h: f64, tol: f64) -> PointC1 {
    let fx = f.eval_f(x);
    let at = |j: usize, t: f64| -> Vec<f64> {
        let mut y = x.to_vec();
        y[j] += t;
        f.eval_f(&y)
    };
    let mut res = PointC1 {
        pass: true,
        gap: 0.0,
        rich: f64::INFINITY,
    };
    for j in 0..x.len() {
        let mut gaps = [0.0f64; 2];
        let mut cent = [vec![], vec![], vec![]];
        for (k, t) in [h, h / 2.0, h / 4.0].into_iter().enumerate() {
            let p = at(j, t);
            let m = at(j, -t);
            if k < 2 {
                gaps[k] = p
                    .iter()
                    .zip(&m)
                    .zip(&fx)
                    .map(|((a, b), c)| ((a - c) - (c - b)).abs() / t)
                    .fold(0.0, f64::max);
            }
            cent[k] = p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * t)).collect();
        }
        res.gap = res.gap.max(gaps[1]);
        // One-sided derivatives must merge at first order.
        if gaps[1] > tol && gaps[1] > 0.5 * (1.0 + RICHARDSON_SLACK) * gaps[0] {
            res.pass = false;
        }
        let d1 = cent[0]
            .iter()
            .zip(&cent[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let d2 = cent[1]
            .iter()
            .zip(&cent[2])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if d1 > tol {
            let r = if d2 > 0.0 { d1 / d2 } else { f64::INFINITY };
            res.rich = res.rich.min(r);
            if r < 4.0 * (1.0 - RICHARDSON_SLACK) {
                res.pass = false;
            }
        }
    }
    res
}

/// Finite-difference C¹ check at `pts` with base step `h`.
pub fn c1_check(f: &LipFn, pts: &[Vec<f64>], h: f64, tol: f64) -> C1Report {
    let per: Vec<PointC1> = pts.par_iter().map(|p| c1_at(f, p, h, tol)).collect();
    let mut rep = C1Report {
        pass: true,
        worst_residual: 0.0,
        worst_point: vec![],
        min_richardson: f64::INFINITY,
        jac_modulus: 0.0,
        failures: vec![],
    };
    for (i, r) in per.iter().enumerate() {
        if !r.pass {
            rep.pass = false;
            rep.failures.push(i);
        }
        if r.gap >= rep.worst_residual {
            rep.worst_residual = r.gap;
            rep.worst_point = pts[i].clone();
        }
        rep.min_richardson = rep.min_richardson.min(r.rich);
    }
    let jacs: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|p| f.jacobian_fd(p, h / 4.0).data)
        .collect();
    for i in 1..pts.len() {
        let dx = pts[i]
            .iter()
            .zip(&pts[i - 1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if dx > 0.0 {
            let dj = jacs[i]
                .iter()
                .zip(&jacs[i - 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rep.jac_modulus = rep.jac_modulus.max(dj / dx);
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::boxed;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn r1() -> NormedSpace {
        NormedSpace::euclidean(1)
    }

    #[test]
    fn linear_map_scans_to_zero() {
        let e2 = NormedSpace::euclidean(2);
        let t = LinOp::from_rows(&[vec![0.3, -0.1], vec![0.2, 0.4]], &e2, &e2).unwrap();
        let f = LipFn::linear(&t);
        let rep = scan_derivative_set(
            &f,
            &[0.2, 0.1],
            &[t],
            &dyadic_scales(1, 10),
            1e-12,
            None,
            &ScanConfig::default(),
        )
        .unwrap();
        assert!(rep.verdicts[0].errors.iter().all(|e| *e < 1e-13));
    }

    #[test]
    fn negative_norm_has_empty_derivative_set() {
        for d in 1..=2 {
            let sp = NormedSpace::euclidean(d);
            let f = LipFn::norm(&sp, vec![0.0; d], -1.0, vec![1.0]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let ops: Vec<LinOp> = (0..50)
                .map(|_| {
                    let row: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    LinOp::from_rows(&[row], &sp, &r1()).unwrap()
                })
                .chain([LinOp::zero(&sp, &r1())])
                .collect();
            let rep = scan_derivative_set(
                &f,
                &vec![0.0; d],
                &ops,
                &dyadic_scales(1, 20),
                0.1,
                None,
                &ScanConfig::default(),
            )
            .unwrap();
            assert!(rep.verdicts.iter().all(|v| !v.pass && v.min_error > 0.1));
        }
    }

    #[test]
    fn scan_rejects_scales_leaving_q() {
        let f = LipFn::identity(1);
        let t = LinOp::identity(&r1());
        let q = boxed(vec![0.0], vec![1.0]);
        let e = scan_derivative_set(
            &f,
            &[0.9],
            &[t],
            &[0.5],
            0.1,
            Some(&q),
            &ScanConfig::default(),
        );
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn multiprecision_scan_sees_tiny_scales() {
        let f = LipFn::norm(&r1(), vec![0.25], 0.5, vec![1.0]).unwrap();
        let t = LinOp::from_rows(&[vec![0.5]], &r1(), &r1()).unwrap();
        let x = [0.25 + 1e-12];
        let rep = scan_derivative_set(&f, &x, &[t], &[1e-40], 1e-12, None, &ScanConfig::default())
            .unwrap();
        assert!(rep.verdicts[0].pass, "{:?}", rep.verdicts[0].errors);
    }

    #[test]
    fn lip_estimate_of_scaled_identity() {
        let e2 = NormedSpace::euclidean(2);
        let f = LipFn::scale(-0.7, &LipFn::identity(2)).unwrap();
        let est = lip_estimate(
            &f,
            &boxed(vec![0.0, 0.0], vec![1.0, 1.0]),
            &e2,
            &e2,
            1000,
            1,
        );
        assert!((est.ratio - 0.7).abs() < 1e-9);
    }

    #[test]
    fn blend_lip_estimate_within_bound() {
        let e2 = NormedSpace::euclidean(2);
        let phi =
            LipFn::blend_node(&e2, 1.0, 2.0, &LipFn::zero(2, 2), &LipFn::identity(2)).unwrap();
        let est = lip_estimate(
            &phi,
            &boxed(vec![-3.0, -3.0], vec![3.0, 3.0]),
            &e2,
            &e2,
            20_000,
            2,
        );
        assert!(est.ratio <= 2.0 + 1e-7, "{}", est.ratio);
        assert!(est.ratio > 1.5);
    }

    #[test]
    fn segments_through_null_line_obey_local_bound() {
        // 0.5|x₁| + 0.3x₂ is √0.34-Lipschitz off {x₁ = 0} and 0.3-Lipschitz on it.
        let e2 = NormedSpace::euclidean(2);
        let row = LipFn::linear(&LinOp::from_rows(&[vec![0.0, 0.3]], &e2, &r1()).unwrap());
        let f = LipFn::norm(&NormedSpace::euclidean(1), vec![0.0], 0.5, vec![1.0]).unwrap();
        let proj = LipFn::linear(&LinOp::from_rows(&[vec![1.0, 0.0]], &e2, &r1()).unwrap());
        let g = LipFn::compose(&f, &proj).unwrap().add(&row).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<_> = (0..2000)
            .map(|_| {
                let a = vec![rng.gen_range(-1.0..-0.01), rng.gen_range(-1.0..1.0)];
                let b = vec![rng.gen_range(0.01..1.0), rng.gen_range(-1.0..1.0)];
                (a, b)
            })
            .collect();
        let s = lip_segments(&g, &e2, &r1(), &pairs, 37);
        let bound = 0.34f64.sqrt().max(0.3);
        assert!(s.global <= s.local + 1e-12);
        assert!(s.local <= bound + 1e-12);
        assert!(s.global > 0.5);
    }

    #[test]
    fn dini_flags() {
        let lin = LipFn::linear(&LinOp::from_rows(&[vec![0.4]], &r1(), &r1()).unwrap());
        let grid = dyadic_scales(1, 20);
        let r = dini_check(&lin, &[0.1], &[1.0], &grid, 1e-3).unwrap();
        assert!(!r.empty_flag && (r.plus - 0.4).abs() < 1e-9);
        let neg = LipFn::norm(&r1(), vec![0.0], -1.0, vec![1.0]).unwrap();
        let r = dini_check(&neg, &[0.0], &[1.0], &grid, 1e-3).unwrap();
        assert!(r.empty_flag);
        assert_eq!((r.plus, r.minus), (-1.0, -1.0));
    }

    #[test]
    fn c1_check_examples() {
        let e1 = r1();
        let sq = LipFn::product(&LipFn::identity(1), &LipFn::identity(1)).unwrap();
        let pts: Vec<Vec<f64>> = (0..21).map(|i| vec![-1.0 + 0.1 * i as f64]).collect();
        assert!(c1_check(&sq, &pts, 1e-3, 1e-8).pass);
        let abs = LipFn::norm(&e1, vec![0.0], 1.0, vec![1.0]).unwrap();
        let rep = c1_check(&abs, &pts, 1e-3, 1e-8);
        assert!(!rep.pass);
        assert_eq!(rep.failures, vec![10]);
        let m = LipFn::mollify(&abs, 0.1, crate::func::DEFAULT_SMOOTH_M).unwrap();
        let rep = c1_check(&m, &pts, 1e-4, 1e-8);
        assert!(rep.pass, "{rep:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn scan_errors_obey_triangle_bound(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0) {
            let e2 = NormedSpace::lp(2, 1.5);
            let f = LipFn::norm(&e2, vec![0.0, 0.0], 0.5, vec![1.0]).unwrap();
            let t1 = LinOp::from_rows(&[vec![a, b]], &e2, &r1()).unwrap();
            let t2 = LinOp::from_rows(&[vec![c, b * 0.5]], &e2, &r1()).unwrap();
            let cfg = ScanConfig { dirs: 40, ..Default::default() };
            let rep = scan_derivative_set(&f, &[0.01, 0.0], &[t1.clone(), t2.clone()], &dyadic_scales(2, 8), 0.1, None, &cfg).unwrap();
            let diff = LinOp::new(t1.matrix.sub(&t2.matrix), &e2, &r1()).unwrap();
            for j in 0..rep.scales.len() {
                let d = (rep.verdicts[0].errors[j] - rep.verdicts[1].errors[j]).abs();
                prop_assert!(d <= diff.opnorm_ub + 1e-9);
            }
        }

        #[test]
        fn verdict_monotone_in_tol(t in 0.0f64..0.5, extra in 0.0f64..0.5) {
            let f = LipFn::norm(&r1(), vec![0.0], 1.0, vec![1.0]).unwrap();
            let op = LinOp::from_rows(&[vec![0.6]], &r1(), &r1()).unwrap();
            let cfg = ScanConfig { dirs: 4, ..Default::default() };
            let a = scan_derivative_set(&f, &[0.0], &[op.clone()], &dyadic_scales(1, 6), t, None, &cfg).unwrap();
            let b = scan_derivative_set(&f, &[0.0], &[op], &dyadic_scales(1, 6), t + extra, None, &cfg).unwrap();
            prop_assert!(!a.verdicts[0].pass || b.verdicts[0].pass);
        }
    }
}

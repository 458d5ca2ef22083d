//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use lipforge::blend::BlendSpec;
use lipforge::cylinder::cyl_constant;
use lipforge::func::{parse_dag_json, to_dag_json};
use lipforge::game::{
    multi_operator_run, run_bm_game, GameConfig, IdentityPolicy, PlayerI, RandomPolicy,
    SpoilerPolicy,
};
use lipforge::prescribe::{certify, prescribe_derivative};
use lipforge::puresets::{level_sweep, xi_estimate, xi_exhaustive, CurveSpec};
use lipforge::region::{boxed, gen_four_corner, lattice_in, open_box};
use lipforge::smooth::{
    mollify, pou_from_balls, sla_assemble, smooth_around, MollifierSpec, SmoothOptions,
};
use lipforge::space::Functional;
use lipforge::steep::{
    build_pu_map, build_steep, certify_pu_map, certify_steep, PuMapOptions, SteepSpec,
};
use lipforge::verify::{
    c1_check, dini_check, dyadic_scales, lip_estimate, scan_derivative_set, ScanConfig,
};
use lipforge::{LinOp, LipFn, NormedSpace, Region, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_space(r: &mut ChaCha8Rng, d: usize) -> NormedSpace {
    match r.gen_range(0..5) {
        0 => NormedSpace::lp(d, 1.0),
        1 => NormedSpace::euclidean(d),
        2 => NormedSpace::linf(d),
        _ => NormedSpace::lp(d, r.gen_range(1.2..4.0)),
    }
}

fn random_op(r: &mut ChaCha8Rng, dom: &NormedSpace, cod: &NormedSpace) -> Result<LinOp> {
    let rows: Vec<Vec<f64>> = (0..cod.dim())
        .map(|_| (0..dom.dim()).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    LinOp::from_rows(&rows, dom, cod)
}

/// Random operator with ‖T‖ ≤ n (by the upper bracket).
fn op_with_norm(r: &mut ChaCha8Rng, dom: &NormedSpace, cod: &NormedSpace, n: f64) -> Result<LinOp> {
    let t = random_op(r, dom, cod)?;
    Ok(t.scaled(n / t.opnorm_ub))
}

/// ‖·‖-cone term plus a linear part, with Lipschitz constant at most `lip`.
fn random_lip(r: &mut ChaCha8Rng, xs: &NormedSpace, ys: &NormedSpace, lip: f64) -> Result<LipFn> {
    let d = xs.dim();
    let c: Vec<f64> = (0..d).map(|_| r.gen_range(-0.5..0.5)).collect();
    let dir: Vec<f64> = (0..ys.dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let coef = 0.5 * lip / ys.norm_f(&dir);
    LipFn::norm(xs, c, coef, dir)?.add(&LipFn::linear(&op_with_norm(r, xs, ys, 0.5 * lip)?))
}

fn dist(ys: &NormedSpace, a: &[f64], b: &[f64]) -> f64 {
    ys.dist_f(a, b)
}

// 1. Blend bounds.
fn blend() -> Result<Outcome> {
    let mut r = rng(101);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_boundary: f64 = 0.0;
    for _ in 0..20 {
        let sp = random_space(&mut r, 2);
        let a = r.gen_range(0.1..1.0);
        let b = a + r.gen_range(0.05..1.0);
        let lip1 = r.gen_range(0.0..1.0);
        let lip2 = 1.0 - lip1;
        let f1 = random_lip(&mut r, &sp, &sp, lip1)?;
        let f2 = random_lip(&mut r, &sp, &sp, lip2)?;
        let spec = BlendSpec::new(&sp, a, b, f1.clone(), f2.clone(), lip1, lip2)?;
        let phi = spec.build()?.phi;
        let at0 = |f: &LipFn, x: &[f64]| -> Vec<f64> {
            let z = f.eval_f(&[0.0, 0.0]);
            f.eval_f(x).iter().zip(&z).map(|(u, v)| u - v).collect()
        };
        let mut worst: f64 = 0.0;
        for i in 0..10_000 {
            let x = [
                r.gen_range(-1.5 * b..1.5 * b),
                r.gen_range(-1.5 * b..1.5 * b),
            ];
            let scale = if i % 2 == 0 { b } else { 0.05 * (b - a) };
            let y = [
                x[0] + r.gen_range(-scale..scale),
                x[1] + r.gen_range(-scale..scale),
            ];
            let den = sp.dist_f(&x, &y);
            if den > 0.0 {
                worst = worst.max(dist(&sp, &phi.eval_f(&x), &phi.eval_f(&y)) / den);
            }
        }
        worst_excess = worst_excess.max(worst - spec.lip_bound());
        for _ in 0..200 {
            let u = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
            let n = sp.norm_f(&u);
            if n == 0.0 {
                continue;
            }
            for (rad, f) in [(a, &f1), (b, &f2)] {
                let on: Vec<f64> = u.iter().map(|v| v * rad / n).collect();
                let inside: Vec<f64> = on.iter().map(|v| v * (1.0 - 1e-12)).collect();
                let outside: Vec<f64> = on.iter().map(|v| v * (1.0 + 1e-12)).collect();
                let side = if rad == a { &inside } else { &outside };
                worst_boundary = worst_boundary.max(dist(&sp, &phi.eval_f(side), &at0(f, side)));
                worst_boundary =
                    worst_boundary.max(dist(&sp, &phi.eval_f(&inside), &phi.eval_f(&outside)));
            }
        }
    }
    outcome(
        worst_excess <= 1e-7 && worst_boundary <= 1e-6,
        format!("max(Lip − bound) = {worst_excess:.3e}, boundary residual = {worst_boundary:.3e}"),
    )
}

fn separated_points(
    r: &mut ChaCha8Rng,
    q: &Region,
    sp: &NormedSpace,
    s: f64,
    want: usize,
) -> Vec<Vec<f64>> {
    let (lo, hi) = q.bbox().expect("bounded");
    let mut pts: Vec<Vec<f64>> = vec![];
    for _ in 0..2000 {
        if pts.len() == want {
            break;
        }
        let x: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| r.gen_range(*a..*b))
            .collect();
        if q.depth(&x, sp) >= 4.1 * s && pts.iter().all(|p| sp.dist_f(p, &x) >= 4.1 * s) {
            pts.push(x);
        }
    }
    pts
}

struct PrescribeCase {
    f: LipFn,
    l: LinOp,
    r: f64,
    s: f64,
    q: Region,
    gamma: Vec<Vec<f64>>,
}

fn prescribe_case(seed: u64) -> Result<PrescribeCase> {
    let mut r = rng(seed);
    let xs = random_space(&mut r, 2);
    let ys = random_space(&mut r, 2);
    let lo = vec![r.gen_range(-0.5..0.0), r.gen_range(-0.5..0.0)];
    let hi = vec![lo[0] + r.gen_range(1.0..1.5), lo[1] + r.gen_range(1.0..1.5)];
    let q = boxed(lo, hi);
    let rr = r.gen_range(0.1..0.5);
    let s = r.gen_range(0.03..0.08);
    let ln = r.gen_range(0.0..0.95) * (1.0 - rr);
    let l = op_with_norm(&mut r, &xs, &ys, ln)?;
    let f = random_lip(&mut r, &xs, &ys, 1.0)?;
    let want = r.gen_range(1..6);
    let gamma = separated_points(&mut r, &q, &xs, s, want);
    Ok(PrescribeCase {
        f,
        l,
        r: rr,
        s,
        q,
        gamma,
    })
}

// 2. Prescription exactness.
fn prescription() -> Result<Outcome> {
    let (mut aff, mut sup_ex, mut lip) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    let mut points = 0;
    for i in 0..10 {
        let c = prescribe_case(200 + i)?;
        let p = prescribe_derivative(&c.f, &c.l, c.r, &c.gamma, c.s, &c.q)?;
        let cert = certify(&p, &c.f, &c.q, 1000, 100, 100_000, i);
        aff = aff.max(cert.affinity_err);
        sup_ex = sup_ex.max(cert.sup_diff - c.r);
        lip = lip.max(cert.lip.ratio);
        points = points.max(cert.sup_points);
    }
    outcome(
        aff <= 1e-12 && sup_ex <= 0.0 && lip <= 1.0 + 1e-7,
        format!("affinity = {aff:.3e}, max(‖g−f‖ − r) = {sup_ex:.3e} on {points} points, Lip = {lip:.9}"),
    )
}

// 3. Game certificate.
fn game() -> Result<Outcome> {
    let sp = NormedSpace::euclidean(2);
    let t = LinOp::from_rows(&[vec![0.3, -0.1], vec![0.2, 0.25]], &sp, &sp)?;
    let e = gen_four_corner(2, 0.25)?;
    let q = boxed(vec![-1.0, -1.0], vec![2.0, 2.0]);
    let cfg = GameConfig {
        seed: 11,
        ..GameConfig::default()
    };
    let mut players: Vec<Box<dyn PlayerI>> = vec![
        Box::new(IdentityPolicy),
        Box::new(RandomPolicy::new(5)),
        Box::new(SpoilerPolicy),
    ];
    let mut pass = true;
    let mut parts = vec![];
    for p in players.iter_mut() {
        let tr = run_bm_game(&e, &q, &t, p.as_mut(), 4, &cfg)?;
        let ratios: Vec<f64> = (1..=4).map(|k| tr.max_level_error(k) * k as f64).collect();
        let worst = ratios.iter().copied().fold(0.0, f64::max);
        pass &= worst <= 1.0 && tr.certified() && tr.certificate.iter().any(|c| c.k == 4);
        parts.push(format!(
            "{}: max k·err = {worst:.3e}, rows = {}",
            tr.policy,
            tr.certificate.len()
        ));
    }
    outcome(pass, parts.join("; "))
}

// 4. Multi-operator extremality on the line.
fn multi_op() -> Result<Outcome> {
    let sp = NormedSpace::euclidean(1);
    let ops = [
        LinOp::identity(&sp).scaled(0.5),
        LinOp::identity(&sp).scaled(-0.5),
    ];
    let e = Region::Points {
        points: vec![vec![0.0]],
    };
    let q = boxed(vec![-1.0], vec![1.0]);
    let m = multi_operator_run(
        &e,
        &q,
        &ops,
        2,
        &GameConfig {
            seed: 4,
            ..GameConfig::default()
        },
    )?;
    let scales = m.scales();
    let cfg = ScanConfig {
        dirs: 0,
        ..Default::default()
    };
    let rep = scan_derivative_set(&m.limit, &[0.0], &ops, &scales, 0.15, Some(&q), &cfg)?;
    let mut grid = dyadic_scales(1, 20);
    grid.extend(&scales);
    let d = dini_check(&m.limit, &[0.0], &[1.0], &grid, 1e-3)?;
    let errs: Vec<String> = rep.verdicts.iter().map(|v| format!("{}", v.pass)).collect();
    outcome(
        rep.all_pass() && d.empty_flag,
        format!(
            "verdicts = [{}], empty_flag = {}",
            errs.join(", "),
            d.empty_flag
        ),
    )
}

fn random_boxes_in(r: &mut ChaCha8Rng, lo: [f64; 2], hi: [f64; 2]) -> Region {
    // One box anchored at each corner so bbox(G) is exactly [lo, hi].
    let w = [hi[0] - lo[0], hi[1] - lo[1]];
    let a_hi = vec![
        lo[0] + w[0] * r.gen_range(0.3..0.7),
        lo[1] + w[1] * r.gen_range(0.3..0.7),
    ];
    let b_lo = vec![
        lo[0] + w[0] * r.gen_range(0.3..0.7),
        lo[1] + w[1] * r.gen_range(0.3..0.7),
    ];
    Region::Boxes {
        lo: vec![lo.to_vec(), b_lo],
        hi: vec![a_hi, hi.to_vec()],
        open: true,
    }
}

fn random_functional(r: &mut ChaCha8Rng, sp: &NormedSpace) -> Result<Functional> {
    let ang: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    Functional::new(vec![ang.cos(), ang.sin()], sp)
}

// 5. Steep-function oracle equivalence and properties.
fn steep() -> Result<Outcome> {
    let mut r = rng(505);
    let h = 0.25;
    let (mut compared, mut mismatch) = (0, 0);
    let mut shapes = std::collections::BTreeSet::new();
    let mut certs = vec![];
    let mut pass = true;
    for _ in 0..3 {
        let sp = random_space(&mut r, 2);
        let p = random_functional(&mut r, &sp)?;
        let alpha = r.gen_range(0.2..0.6);
        let cs = CurveSpec::with_k(p.clone(), alpha, h, 1)?;
        for cx in 1..=3 {
            for cy in 1..=3 {
                let g = random_boxes_in(&mut r, [0.0, 0.0], [cx as f64 * h, cy as f64 * h]);
                let dp = xi_estimate(&g, &cs)?;
                let ex = xi_exhaustive(&g, &cs, 36)?;
                shapes.insert((cx + 3, cy + 3));
                compared += 1;
                if dp.value != ex || dp.nodes > 36 {
                    mismatch += 1;
                }
            }
        }
        let g = random_boxes_in(&mut r, [0.0, 0.0], [1.0, 1.0]);
        let spec = SteepSpec::new(g, p, alpha, 1.0 / 64.0)?;
        let st = build_steep(&spec)?;
        let cert = certify_steep(&st, &spec, 4000, 9)?;
        pass &= cert.pass;
        certs.push(format!(
            "gap {:.3e} {}",
            cert.gap,
            if cert.pass { "ok" } else { "violated" }
        ));
    }
    outcome(
        pass && mismatch == 0,
        format!(
            "{compared} small grids over shapes {shapes:?}, {mismatch} mismatches; 64×64: {}",
            certs.join(", ")
        ),
    )
}

// 6. Cylinder constant.
fn cylinder() -> Result<Outcome> {
    let mut r = rng(606);
    let mut below: f64 = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (m, n) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let x = random_space(&mut r, n);
        let y = random_space(&mut r, m);
        let t = random_op(&mut r, &x, &y)?;
        let c = cyl_constant(&t, 8)?;
        below = below.max(t.opnorm_ub - c.value);
    }
    let mut above: f64 = f64::NEG_INFINITY;
    for _ in 0..20 {
        let (m, n) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let t = random_op(
            &mut r,
            &NormedSpace::euclidean(n),
            &NormedSpace::euclidean(m),
        )?;
        let c = cyl_constant(&t, 8)?;
        above = above.max(c.value - t.opnorm_lb);
    }
    outcome(
        below <= 1e-9 && above <= 1e-6,
        format!("max(‖T‖ − c) = {below:.3e}, ℓ² max(c − ‖T‖) = {above:.3e}"),
    )
}

// 7. pu derivative map.
fn pu_map() -> Result<Outcome> {
    let sp = NormedSpace::euclidean(2);
    let e = gen_four_corner(3, 0.25)?;
    let t = LinOp::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.0]], &sp, &sp)?;
    let u = Region::Balls {
        space: sp.clone(),
        centers: vec![vec![0.5, 0.5]],
        radii: vec![4.0],
        open: true,
    };
    let pm = build_pu_map(&e, &u, &t, 0.2, &PuMapOptions::default())?;
    let c = certify_pu_map(&pm, &e, &u, &t, 200, 100_000, 7)?;
    outcome(
        c.pass && c.jac_points == 200 && pm.gap < 0.1,
        format!(
            "‖Dg − T‖ ≤ {:.3e}, ‖g‖ = {:.3e}, Lip = {:.4} ≤ {:.4}, gap = {:.3e}",
            c.jac_max_err, c.sup, c.lip_sampled, c.lip_allowed, pm.gap
        ),
    )
}

fn sup_gap(f: &LipFn, g: &LipFn, pts: &[Vec<f64>]) -> f64 {
    use rayon::prelude::*;
    pts.par_iter()
        .map(|p| (f.eval_f(p)[0] - g.eval_f(p)[0]).abs())
        .reduce(|| 0.0, f64::max)
}

// 8. Smoothing.
fn smoothing() -> Result<Outcome> {
    let sp = NormedSpace::euclidean(2);
    let e1 = NormedSpace::euclidean(1);
    let f = LipFn::norm(&sp, vec![0.5, 0.5], 1.0, vec![1.0])?;
    let eps = 0.05;
    let grid = lattice_in(&[0.0, 0.0], &[1.0, 1.0], 317);

    let spec = MollifierSpec::new(2, eps)?;
    let inner = boxed(vec![0.2, 0.2], vec![0.8, 0.8]);
    let m = mollify(&f, &spec, &inner, &sp)?;
    let moll_sup = sup_gap(&m.f, &f, &grid);
    let c1_pts = lattice_in(&[0.2, 0.2], &[0.8, 0.8], 32);
    let moll_c1 = c1_check(&m.f, &c1_pts, eps / (1024.0 * spec.m as f64), 1e-8);

    let e = Region::Intersection {
        parts: vec![
            Region::Balls {
                space: sp.clone(),
                centers: vec![vec![0.5, 0.5]],
                radii: vec![0.05],
                open: true,
            },
            boxed(vec![0.45, 0.45], vec![0.55, 0.55]),
        ],
    };
    let q = boxed(vec![0.0, 0.0], vec![1.0, 1.0]);
    let s = smooth_around(&e, &q, &f, eps, &sp, &e1, &SmoothOptions::default())?;
    let around_sup = sup_gap(&s.g, &f, &grid);
    let step = s.widths.iter().copied().fold(f64::INFINITY, f64::min)
        / (16.0 * lipforge::func::DEFAULT_SMOOTH_M as f64);
    let core: Vec<Vec<f64>> = lattice_in(&[0.4, 0.4], &[0.6, 0.6], 24)
        .into_iter()
        .filter(|x| s.smooth_core(x))
        .collect();
    let around_c1 = c1_check(&s.g, &core, step, 1e-8);

    let h = LipFn::norm(&sp, vec![0.0, 0.0], 1.0, vec![1.0])?.with_lip_bound(1.0);
    let theta = 0.02;
    let pou = pou_from_balls(
        vec![vec![-0.3, 0.0], vec![0.3, 0.0]],
        vec![0.6, 0.6],
        1.0,
        &sp,
    )?
    .with_uniform_theta(theta)?;
    let h1 = LipFn::mollify(&h, theta, 8)?.with_lip_bound(1.0);
    let h2 = h
        .add(&LipFn::constant(2, vec![-theta])?)?
        .with_lip_bound(1.0);
    let ball = Region::Balls {
        space: sp.clone(),
        centers: vec![vec![0.0, 0.0]],
        radii: vec![2.0],
        open: true,
    };
    let sla = sla_assemble(&h, &ball, &pou, &[h1, h2], &e1)?;
    let claim = sla.lip_claim(1.0, 1.0);
    let est = lip_estimate(
        &sla.g,
        &boxed(vec![-1.0, -1.0], vec![1.0, 1.0]),
        &sp,
        &e1,
        100_000,
        3,
    );

    let pass = moll_c1.pass
        && around_c1.pass
        && !core.is_empty()
        && moll_sup <= eps
        && around_sup <= eps
        && est.ratio <= claim + 1e-6;
    outcome(
        pass,
        format!(
            "mollify: C¹ {} on {} pts, sup {:.3e}; smooth_around: C¹ {} on {} pts, sup {:.3e}; {} sup points; SLA Lip {:.6} ≤ {:.6}",
            moll_c1.pass,
            c1_pts.len(),
            moll_sup,
            around_c1.pass,
            core.len(),
            around_sup,
            grid.len(),
            est.ratio,
            claim
        ),
    )
}

// 9. ξ monotonicity and the strip value.
fn xi_monotone() -> Result<Outcome> {
    let sp = NormedSpace::euclidean(2);
    let p = Functional::new(vec![1.0, 0.0], &sp)?;
    let s = CurveSpec::new(p.clone(), 0.5, 1.0 / 128.0)?;
    let e = gen_four_corner(0, 0.25)?;
    let v: Vec<f64> = level_sweep(&e, &s, &[1, 2, 3, 4])?
        .into_iter()
        .map(|x| x.value)
        .collect();
    let monotone = v.windows(2).all(|w| w[1] <= w[0]);
    let h = 1.0 / 32.0;
    let strip = xi_estimate(
        &open_box(vec![0.0, -2.0], vec![1.0, 2.0]),
        &CurveSpec::new(p, 1.0 / 2f64.sqrt(), h)?,
    )?;
    let off = (strip.value - 2f64.sqrt()).abs();
    outcome(
        monotone && off <= 2.0 * h,
        format!(
            "levels 1..4: {v:.5?}; strip |ξ − √2| = {off:.3e} ≤ {:.3e}",
            2.0 * h
        ),
    )
}

// 10. Determinism and DAG round trip.
fn determinism() -> Result<Outcome> {
    let run = || -> Result<(String, String)> {
        let c = prescribe_case(1000)?;
        let p = prescribe_derivative(&c.f, &c.l, c.r, &c.gamma, c.s, &c.q)?;
        let cert = certify(&p, &c.f, &c.q, 100, 20, 5000, 3);
        Ok((
            to_dag_json(&p.g),
            serde_json::to_string(&cert).expect("cert json"),
        ))
    };
    let game = || -> Result<String> {
        let sp = NormedSpace::euclidean(2);
        let t = LinOp::from_rows(&[vec![0.2, 0.0], vec![0.1, -0.3]], &sp, &sp)?;
        let e = Region::Points {
            points: vec![vec![0.5, 0.5], vec![0.2, 0.7]],
        };
        let cfg = GameConfig {
            nest_points: 900,
            lip_pairs: 5000,
            cert_dirs: 20,
            seed: 8,
        };
        let tr = run_bm_game(
            &e,
            &boxed(vec![0.0, 0.0], vec![1.0, 1.0]),
            &t,
            &mut RandomPolicy::new(2),
            2,
            &cfg,
        )?;
        Ok(serde_json::to_string(&tr.to_doc()).expect("doc json"))
    };
    let (g1, c1) = run()?;
    let (g2, c2) = run()?;
    let (t1, t2) = (game()?, game()?);
    let reruns = g1 == g2 && c1 == c2 && t1 == t2;

    let f = parse_dag_json(&g1)?;
    let back = parse_dag_json(&to_dag_json(&f))?;
    let mut r = rng(10);
    let mut exact = to_dag_json(&back) == g1;
    for _ in 0..1000 {
        let x = [r.gen_range(-1.0..2.0), r.gen_range(-1.0..2.0)];
        let (a, b) = (f.eval_f(&x), back.eval_f(&x));
        exact &= a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits());
    }
    outcome(
        reruns && exact,
        format!(
            "reruns identical = {reruns}, round trip bit-exact = {exact} ({} bytes of DAG)",
            g1.len()
        ),
    )
}

type Criterion = (u32, &'static str, u64, fn() -> Result<Outcome>);

fn main() {
    let all: [Criterion; 10] = [
        (1, "blend bounds", 10, blend),
        (2, "prescription exactness", 60, prescription),
        (3, "game certificate", 300, game),
        (4, "multi-operator extremality", 120, multi_op),
        (5, "steep oracle equivalence", 180, steep),
        (6, "cylinder constant", 120, cylinder),
        (7, "pu derivative map", 600, pu_map),
        (8, "smoothing", 180, smoothing),
        (9, "xi monotonicity", 120, xi_monotone),
        (10, "determinism and round trip", 30, determinism),
    ];
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, budget, run) in all {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(run);
        let took = t0.elapsed();
        let in_time = took <= Duration::from_secs(budget);
        let (pass, detail) = match res {
            Ok(Ok(o)) => (o.pass && in_time, o.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {id} ({name}): {} [{:.1}s of {budget}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

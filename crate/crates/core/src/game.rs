//! Finite Banach–Mazur game on Lip₁(Q, Y): an adversarial Player I against
//! the prescription strategy for Player II, with multiprecision certificates.

use crate::error::{Error, Result};
use crate::func::{to_dag_json, LipFn};
use crate::operator::{dense_ball_sequence, LinOp, OperatorFamily};
use crate::prescribe::{build_net, prescribe_derivative, Net};
use crate::real::{bits_for_scale, Mp, Real};
use crate::region::Region;
use crate::space::NormedSpace;
use crate::verify::{directions, lip_estimate, scan_derivative_set, sup_dist, ScanConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative slack allowed in sampled ball inclusions.
pub const NEST_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct GameConfig {
    /// Sampled points for sup-norm checks (≈ this many lattice points of Q).
    pub nest_points: usize,
    /// Pairs per Lipschitz check.
    pub lip_pairs: usize,
    /// Directions per net point in the certificate.
    pub cert_dirs: usize,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            nest_points: 10_000,
            lip_pairs: 100_000,
            cert_dirs: 100,
            seed: 0,
        }
    }
}

/// What Player I sees when moving.
pub struct Board<'a> {
    pub xs: &'a NormedSpace,
    pub ys: &'a NormedSpace,
    pub q: &'a Region,
    pub net: &'a Net,
    pub t_ub: f64,
}

/// Player I's move (f_k, r_k), given Player II's last ball if any.
/// `attempt` is 1 after a rejected move.
pub trait PlayerI {
    fn name(&self) -> &str;
    fn propose(
        &mut self,
        k: usize,
        prev: Option<(&LipFn, f64)>,
        board: &Board,
        attempt: usize,
    ) -> Result<(LipFn, f64)>;
}

/// Replays Player II's centre with half its radius; starts from f = 0.
pub struct IdentityPolicy;

impl PlayerI for IdentityPolicy {
    fn name(&self) -> &str {
        "identity"
    }
    fn propose(
        &mut self,
        _k: usize,
        prev: Option<(&LipFn, f64)>,
        board: &Board,
        attempt: usize,
    ) -> Result<(LipFn, f64)> {
        let shrink = 0.5f64.powi(attempt as i32);
        Ok(match prev {
            None => (
                LipFn::zero(board.xs.dim(), board.ys.dim()),
                0.5 * (1.0 - board.t_ub) * shrink,
            ),
            Some((g, s)) => (g.clone(), 0.5 * s * shrink),
        })
    }
}

/// Bound on sup_Q ‖g − h‖ for 1-Lipschitz g, h, from one evaluation.
fn sup_bound(g: &LipFn, h: &LipFn, board: &Board) -> f64 {
    let (lo, hi) = board
        .q
        .bbox()
        .unwrap_or((vec![0.0; board.xs.dim()], vec![0.0; board.xs.dim()]));
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let diam = board.q.diam_ub(board.xs);
    board.ys.dist_f(&g.eval_f(&mid), &h.eval_f(&mid)) + diam + 1e-9
}

/// (1 − τ)g + τh with τ chosen so that ‖f − g‖ ≤ s/4, paired with r = s/4.
fn perturb(g: &LipFn, h: &LipFn, s: f64, board: &Board, attempt: usize) -> Result<(LipFn, f64)> {
    let shrink = 0.5f64.powi(attempt as i32);
    let tau = (s / (4.0 * sup_bound(g, h, board))).min(1.0) * shrink;
    let f =
        LipFn::sum(vec![LipFn::scale(1.0 - tau, g)?, LipFn::scale(tau, h)?])?.with_lip_bound(1.0);
    Ok((f, 0.25 * s * shrink))
}

fn unit_y(ys: &NormedSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..ys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = ys.norm_f(&v);
        if n > 1e-3 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Random 1-Lipschitz map ½A x + ½σ‖x − c‖e with ‖A‖ ≤ 1, ‖e‖ = 1.
fn random_lip1(board: &Board, rng: &mut ChaCha8Rng) -> Result<LipFn> {
    let (dx, dy) = (board.xs.dim(), board.ys.dim());
    let rows: Vec<Vec<f64>> = (0..dy)
        .map(|_| (0..dx).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let a = LinOp::from_rows(&rows, board.xs, board.ys)?;
    let a = if a.opnorm_ub > 0.0 {
        a.scaled(0.5 / a.opnorm_ub)
    } else {
        a
    };
    let (lo, hi) = board.q.bbox().unwrap_or((vec![0.0; dx], vec![1.0; dx]));
    let c: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| rng.gen_range(*l..=*h))
        .collect();
    let sigma = if rng.gen_bool(0.5) { 0.5 } else { -0.5 };
    let e = unit_y(board.ys, rng);
    LipFn::linear(&a).add(&LipFn::norm(board.xs, c, sigma, e)?)
}

/// Seeded random Lip₁ perturbation of Player II's centre.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> RandomPolicy {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl PlayerI for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }
    fn propose(
        &mut self,
        _k: usize,
        prev: Option<(&LipFn, f64)>,
        board: &Board,
        attempt: usize,
    ) -> Result<(LipFn, f64)> {
        let h = random_lip1(board, &mut self.rng)?;
        match prev {
            None => Ok((h, 0.5 * (1.0 - board.t_ub) * 0.5f64.powi(attempt as i32))),
            Some((g, s)) => perturb(g, &h, s, board, attempt),
        }
    }
}

/// Places a downward cone at a fresh net point of the current level, away
/// from the points Player II has already treated.
pub struct SpoilerPolicy;

impl PlayerI for SpoilerPolicy {
    fn name(&self) -> &str {
        "spoiler"
    }
    fn propose(
        &mut self,
        k: usize,
        prev: Option<(&LipFn, f64)>,
        board: &Board,
        attempt: usize,
    ) -> Result<(LipFn, f64)> {
        let cur = board.net.level(k.min(board.net.levels.len()));
        let old: &[Vec<f64>] = if k >= 2 { board.net.level(k - 1) } else { &[] };
        let p = cur
            .iter()
            .find(|p| !old.contains(p))
            .or(cur.first())
            .cloned()
            .unwrap_or_else(|| {
                let (lo, hi) = board
                    .q
                    .bbox()
                    .unwrap_or((vec![0.0; board.xs.dim()], vec![0.0; board.xs.dim()]));
                lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
            });
        let mut e = vec![0.0; board.ys.dim()];
        e[0] = 1.0;
        let n = board.ys.norm_f(&e);
        e.iter_mut().for_each(|v| *v /= n);
        let cone = LipFn::norm(board.xs, p, -1.0, e)?;
        match prev {
            None => Ok((cone, 0.5 * (1.0 - board.t_ub) * 0.5f64.powi(attempt as i32))),
            Some((g, s)) => perturb(g, &cone, s, board, attempt),
        }
    }
}

/// Builds a shipped policy by name.
pub fn policy_by_name(name: &str, seed: u64) -> Result<Box<dyn PlayerI>> {
    match name {
        "identity" => Ok(Box::new(IdentityPolicy)),
        "random" => Ok(Box::new(RandomPolicy::new(seed))),
        "spoiler" => Ok(Box::new(SpoilerPolicy)),
        _ => Err(Error::Input(format!("unknown policy {name:?}"))),
    }
}

#[derive(Clone, Debug)]
pub struct Round {
    pub k: usize,
    pub f: LipFn,
    /// Player I's radius after Player II's shrink.
    pub r: f64,
    pub g: LipFn,
    pub s: f64,
    pub alpha: f64,
    pub gamma: Vec<Vec<f64>>,
    pub attempts: usize,
    /// Sampled ‖f_k − g_{k−1}‖ + r_k (0 in round 1 of a fresh game).
    pub nest_in: f64,
    /// Sampled ‖g_k − f_k‖ + s_k.
    pub nest_out: f64,
    pub lip_f: f64,
    pub lip_g: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertRow {
    pub k: usize,
    pub point: Vec<f64>,
    pub alpha: f64,
    pub error: f64,
    pub bound: f64,
}

#[derive(Clone, Debug)]
pub struct GameTranscript {
    pub policy: String,
    pub t: LinOp,
    pub rounds: Vec<Round>,
    pub limit: LipFn,
    pub net: Net,
    pub certificate: Vec<CertRow>,
    /// Largest ratio over multiprecision pairs near net points at scale α_k.
    pub local_lip: f64,
    pub witnesses: Vec<Vec<f64>>,
}

impl GameTranscript {
    pub fn max_level_error(&self, k: usize) -> f64 {
        self.certificate
            .iter()
            .filter(|c| c.k == k)
            .map(|c| c.error)
            .fold(0.0, f64::max)
    }

    pub fn certified(&self) -> bool {
        self.certificate.iter().all(|c| c.error <= c.bound) && self.local_lip <= 1.0 + 1e-7
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.alpha).collect()
    }

    pub fn certificate_csv(&self) -> String {
        let mut s = String::from("k,point,alpha,error,bound\n");
        for c in &self.certificate {
            let p: Vec<String> = c.point.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e}\n",
                c.k,
                p.join(" "),
                c.alpha,
                c.error,
                c.bound
            ));
        }
        s
    }

    pub fn to_doc(&self) -> TranscriptDoc {
        TranscriptDoc {
            policy: self.policy.clone(),
            t: self.t.matrix.to_rows(),
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundDoc {
                    k: r.k,
                    r: r.r,
                    s: r.s,
                    alpha: r.alpha,
                    gamma: r.gamma.clone(),
                    attempts: r.attempts,
                    nest_in: r.nest_in,
                    nest_out: r.nest_out,
                    lip_f: r.lip_f,
                    lip_g: r.lip_g,
                })
                .collect(),
            certificate: self.certificate.clone(),
            local_lip: self.local_lip,
            witnesses: self.witnesses.clone(),
            limit: serde_json::from_str(&to_dag_json(&self.limit)).expect("dag json"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundDoc {
    pub k: usize,
    pub r: f64,
    pub s: f64,
    pub alpha: f64,
    pub gamma: Vec<Vec<f64>>,
    pub attempts: usize,
    pub nest_in: f64,
    pub nest_out: f64,
    pub lip_f: f64,
    pub lip_g: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranscriptDoc {
    pub policy: String,
    pub t: Vec<Vec<f64>>,
    pub rounds: Vec<RoundDoc>,
    pub certificate: Vec<CertRow>,
    pub local_lip: f64,
    pub witnesses: Vec<Vec<f64>>,
    pub limit: serde_json::Value,
}

fn check_points(q: &Region, n: usize) -> Vec<Vec<f64>> {
    let d = q.dim().unwrap_or(1).max(1);
    let per = ((n as f64).powf(1.0 / d as f64).round() as usize).max(2);
    q.lattice(per)
}

struct Referee<'a> {
    q: &'a Region,
    xs: &'a NormedSpace,
    ys: &'a NormedSpace,
    pts: Vec<Vec<f64>>,
    cfg: &'a GameConfig,
}

impl Referee<'_> {
    fn sup(&self, a: &LipFn, b: &LipFn, scale: f64) -> f64 {
        sup_dist(a, b, &self.pts, self.ys, Some(bits_for_scale(scale, 24))).0
    }

    fn lip(&self, f: &LipFn, salt: u64) -> f64 {
        lip_estimate(
            f,
            self.q,
            self.xs,
            self.ys,
            self.cfg.lip_pairs,
            self.cfg.seed ^ salt,
        )
        .ratio
    }

    /// Accepts (f, r) inside B(g, s); returns (sup‖f − g‖ + r, Lip f).
    fn judge(
        &self,
        f: &LipFn,
        r: f64,
        prev: Option<(&LipFn, f64)>,
        salt: u64,
    ) -> std::result::Result<(f64, f64), String> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(format!("radius {r} is not positive"));
        }
        if f.din() != self.xs.dim() || f.dout() != self.ys.dim() {
            return Err("move has the wrong shape".into());
        }
        let lip = self.lip(f, salt);
        if lip > 1.0 + 1e-7 {
            return Err(format!("move is not 1-Lipschitz (sampled {lip})"));
        }
        let nest = match prev {
            None => 0.0,
            Some((g, s)) => {
                let v = self.sup(f, g, r) + r;
                if v > s * (1.0 + NEST_TOL) {
                    return Err(format!("ball not inside the previous one: {v:e} > {s:e}"));
                }
                v
            }
        };
        Ok((nest, lip))
    }
}

/// Pairs in B(x, 2α) evaluated in multiprecision; returns the largest ratio.
fn local_lip(
    f: &LipFn,
    pts: &[(Vec<f64>, f64)],
    xs: &NormedSpace,
    ys: &NormedSpace,
    n: usize,
    seed: u64,
) -> f64 {
    pts.par_iter()
        .enumerate()
        .map(|(i, (x, a))| {
            let prec = bits_for_scale(*a / 64.0, 64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64 * 31 + 5));
            let dirs = directions(xs, n, seed ^ i as u64);
            let mut worst: f64 = 0.0;
            for w in dirs.iter().skip(2 * xs.dim()) {
                let t1 = a * rng.gen_range(-2.0..2.0);
                let t2 = t1 + a * rng.gen_range(-1.0..1.0);
                let p = |t: f64| -> Vec<Mp> {
                    x.iter()
                        .zip(w)
                        .map(|(c, v)| Mp::new(prec, *c) + Mp::new(prec, t * v))
                        .collect()
                };
                let (a1, a2) = (p(t1), p(t2));
                let fa: Vec<Mp> = f
                    .eval(&a1)
                    .into_iter()
                    .zip(f.eval(&a2))
                    .map(|(u, v)| u - v)
                    .collect();
                let dx = (t1 - t2).abs();
                if dx > 0.0 {
                    let num = (ys.norm(&fa) / Mp::new(prec, dx)).to_f64();
                    worst = worst.max(num);
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Plays K rounds starting from Player II's ball `start` (or a fresh board).
pub fn run_bm_game_from(
    e: &Region,
    q: &Region,
    t: &LinOp,
    player: &mut dyn PlayerI,
    rounds: usize,
    start: Option<(LipFn, f64)>,
    cfg: &GameConfig,
) -> Result<GameTranscript> {
    if rounds == 0 {
        return Err(Error::Input("need at least one round".into()));
    }
    if !(t.opnorm_ub < 1.0) {
        return Err(Error::Norm(format!("‖T‖ ≤ {} is not below 1", t.opnorm_ub)));
    }
    let (xs, ys) = (&t.dom, &t.cod);
    let net = build_net(e, q, xs, rounds as u32)?;
    let board = Board {
        xs,
        ys,
        q,
        net: &net,
        t_ub: t.opnorm_ub,
    };
    let referee = Referee {
        q,
        xs,
        ys,
        pts: check_points(q, cfg.nest_points),
        cfg,
    };
    let mut prev: Option<(LipFn, f64)> = start;
    let mut out: Vec<Round> = vec![];
    for k in 1..=rounds {
        let pv = prev.as_ref().map(|(g, s)| (g, *s));
        let mut attempt = 0;
        let (f, r, nest_in, lip_f) = loop {
            let (f, r) = player.propose(k, pv, &board, attempt)?;
            match referee.judge(&f, r, pv, k as u64) {
                Ok((nest, lip)) => break (f, r, nest, lip),
                Err(msg) if attempt == 0 => {
                    let _ = msg;
                    attempt = 1;
                }
                Err(msg) => {
                    return Err(Error::Referee(format!(
                        "round {k}, policy {}: {msg}",
                        player.name()
                    )))
                }
            }
        };
        // Player II: shrink, prescribe T on Γ_k, pick s_k.
        let scale = 0.5f64.powi(k as i32);
        let rho = r.min(scale * (1.0 - t.opnorm_ub));
        let gamma = net.level(k).to_vec();
        let p = prescribe_derivative(&f, t, 0.5 * rho, &gamma, scale / 4.0, q)?;
        let alpha = p.params.alpha;
        let s = 0.5 * (alpha / (4.0 * k as f64)).min(0.5 * rho);
        let g = p.g;
        let nest_out = referee.sup(&g, &f, s) + s;
        if nest_out > rho * (1.0 + NEST_TOL) {
            return Err(Error::Construction(format!(
                "round {k}: Player II ball escapes ({nest_out:e} > {rho:e})"
            )));
        }
        let lip_g = referee.lip(&g, 0x6a00 + k as u64);
        if lip_g > 1.0 + 1e-7 {
            return Err(Error::Construction(format!(
                "round {k}: g_k sampled Lipschitz {lip_g}"
            )));
        }
        out.push(Round {
            k,
            f,
            r: rho,
            g: g.clone(),
            s,
            alpha,
            gamma,
            attempts: attempt + 1,
            nest_in,
            nest_out,
            lip_f,
            lip_g,
        });
        prev = Some((g, s));
    }
    let limit = out.last().expect("rounds ≥ 1").g.clone();
    let scan_cfg = ScanConfig {
        dirs: cfg.cert_dirs,
        seed: cfg.seed,
        fracs: vec![1.0, 0.5, 0.25],
        prec: None,
    };
    let mut certificate = vec![];
    let mut probe = vec![];
    for rd in &out {
        let rows: Vec<CertRow> = rd
            .gamma
            .par_iter()
            .map(|x| {
                let rep = scan_derivative_set(
                    &limit,
                    x,
                    std::slice::from_ref(t),
                    &[rd.alpha],
                    1.0 / rd.k as f64,
                    Some(q),
                    &scan_cfg,
                )?;
                Ok(CertRow {
                    k: rd.k,
                    point: x.clone(),
                    alpha: rd.alpha,
                    error: rep.verdicts[0].min_error,
                    bound: 1.0 / rd.k as f64,
                })
            })
            .collect::<Result<_>>()?;
        certificate.extend(rows);
        probe.extend(rd.gamma.iter().take(4).map(|x| (x.clone(), rd.alpha)));
    }
    let local = local_lip(&limit, &probe, xs, ys, 24, cfg.seed);
    let witnesses = witnesses(&out, q, xs, cfg.nest_points);
    Ok(GameTranscript {
        policy: player.name().to_string(),
        t: t.clone(),
        rounds: out,
        limit,
        net,
        certificate,
        local_lip: local,
        witnesses,
    })
}

/// Γ_K together with lattice points lying in at least ⌈K/2⌉ of the sets U_k.
fn witnesses(rounds: &[Round], q: &Region, xs: &NormedSpace, n: usize) -> Vec<Vec<f64>> {
    let kk = rounds.len();
    let need = kk.div_ceil(2);
    let mut out = rounds.last().map(|r| r.gamma.clone()).unwrap_or_default();
    for p in check_points(q, n) {
        let hits = rounds
            .iter()
            .filter(|r| r.gamma.iter().any(|x| xs.dist_f(x, &p) < r.s))
            .count();
        if hits >= need && !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

pub fn run_bm_game(
    e: &Region,
    q: &Region,
    t: &LinOp,
    player: &mut dyn PlayerI,
    rounds: usize,
    cfg: &GameConfig,
) -> Result<GameTranscript> {
    run_bm_game_from(e, q, t, player, rounds, None, cfg)
}

#[derive(Clone, Debug)]
pub struct MultiRun {
    pub runs: Vec<GameTranscript>,
    pub limit: LipFn,
}

impl MultiRun {
    /// All α_k across runs, largest first.
    pub fn scales(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.runs.iter().flat_map(|r| r.alphas()).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

/// Runs one game per operator, each resuming inside the previous limit's last ball.
pub fn multi_operator_run(
    e: &Region,
    q: &Region,
    ops: &[LinOp],
    rounds: usize,
    cfg: &GameConfig,
) -> Result<MultiRun> {
    if ops.is_empty() {
        return Err(Error::Family("no operators".into()));
    }
    let mut runs: Vec<GameTranscript> = vec![];
    let mut start: Option<(LipFn, f64)> = None;
    for t in ops {
        let tr = run_bm_game_from(e, q, t, &mut IdentityPolicy, rounds, start.take(), cfg)?;
        let last = tr.rounds.last().expect("rounds");
        start = Some((last.g.clone(), last.s));
        runs.push(tr);
    }
    let limit = runs.last().expect("runs").limit.clone();
    Ok(MultiRun { runs, limit })
}

/// As [`multi_operator_run`] with T_1..T_n taken from the dense sequence of `fam`.
pub fn multi_operator_run_family(
    e: &Region,
    q: &Region,
    fam: &OperatorFamily,
    n: usize,
    rounds: usize,
    cfg: &GameConfig,
) -> Result<MultiRun> {
    let ops = (1..=n)
        .map(|i| dense_ball_sequence(fam, i))
        .collect::<Result<Vec<_>>>()?;
    multi_operator_run(e, q, &ops, rounds, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::boxed;
    use crate::verify::{dini_check, dyadic_scales};

    fn quick() -> GameConfig {
        GameConfig {
            nest_points: 900,
            lip_pairs: 5000,
            cert_dirs: 40,
            seed: 1,
        }
    }

    fn unit_sq() -> Region {
        boxed(vec![0.0, 0.0], vec![1.0, 1.0])
    }

    #[test]
    fn single_round_identity() {
        let sp = NormedSpace::linf(2);
        let t = LinOp::identity(&sp).scaled(0.3);
        let e = Region::Points {
            points: vec![vec![0.5, 0.5]],
        };
        let tr = run_bm_game(&e, &unit_sq(), &t, &mut IdentityPolicy, 1, &quick()).unwrap();
        let rd = &tr.rounds[0];
        assert!((rd.r - 0.35).abs() < 1e-15);
        assert!(rd.s < rd.alpha / 4.0);
        let err = tr.max_level_error(1);
        assert!(err <= 1.0 && err <= 4.0 * rd.s / rd.alpha, "{err}");
        assert!(tr.certified());
    }

    #[test]
    fn zero_operator_limit_is_locally_constant() {
        let sp = NormedSpace::euclidean(2);
        let t = LinOp::zero(&sp, &sp);
        let e = Region::Points {
            points: vec![vec![0.5, 0.5]],
        };
        let tr = run_bm_game(&e, &unit_sq(), &t, &mut IdentityPolicy, 2, &quick()).unwrap();
        assert!(
            tr.certificate.iter().all(|c| c.error < 1e-15),
            "{:?}",
            tr.certificate
        );
    }

    #[test]
    fn random_policy_three_rounds() {
        let sp = NormedSpace::euclidean(2);
        let t = LinOp::from_rows(&[vec![0.2, -0.3], vec![0.1, 0.4]], &sp, &sp).unwrap();
        let e = Region::Points {
            points: vec![vec![0.5, 0.5], vec![0.3, 0.6]],
        };
        let tr = run_bm_game(&e, &unit_sq(), &t, &mut RandomPolicy::new(3), 3, &quick()).unwrap();
        for k in 1..=3 {
            assert!(tr.max_level_error(k) <= 1.0 / k as f64);
        }
        for (i, rd) in tr.rounds.iter().enumerate() {
            assert!(rd.r <= 0.5f64.powi(rd.k as i32) * (1.0 - t.opnorm_ub));
            assert!(rd.s < rd.alpha / (4.0 * rd.k as f64));
            assert!(rd.nest_out <= rd.r * (1.0 + NEST_TOL));
            if i > 0 {
                assert!(rd.nest_in <= tr.rounds[i - 1].s * (1.0 + NEST_TOL));
            }
        }
        assert!(tr.certified());
    }

    struct Cheater;
    impl PlayerI for Cheater {
        fn name(&self) -> &str {
            "cheater"
        }
        fn propose(
            &mut self,
            _k: usize,
            prev: Option<(&LipFn, f64)>,
            b: &Board,
            _a: usize,
        ) -> Result<(LipFn, f64)> {
            match prev {
                None => Ok((LipFn::zero(b.xs.dim(), b.ys.dim()), 0.1)),
                Some((_, s)) => Ok((LipFn::constant(b.xs.dim(), vec![1.0; b.ys.dim()])?, s)),
            }
        }
    }

    #[test]
    fn referee_aborts_after_one_reprompt() {
        let sp = NormedSpace::euclidean(1);
        let t = LinOp::zero(&sp, &sp);
        let e = Region::Points {
            points: vec![vec![0.0]],
        };
        let q = boxed(vec![-1.0], vec![1.0]);
        let r = run_bm_game(&e, &q, &t, &mut Cheater, 2, &quick());
        assert!(matches!(r, Err(Error::Referee(_))));
    }

    #[test]
    fn two_slopes_on_the_line() {
        let sp = NormedSpace::euclidean(1);
        let ops = [
            LinOp::identity(&sp).scaled(0.5),
            LinOp::identity(&sp).scaled(-0.5),
        ];
        let e = Region::Points {
            points: vec![vec![0.0]],
        };
        let q = boxed(vec![-1.0], vec![1.0]);
        let m = multi_operator_run(&e, &q, &ops, 2, &quick()).unwrap();
        let scales = m.scales();
        let cfg = ScanConfig {
            dirs: 0,
            ..Default::default()
        };
        let rep =
            scan_derivative_set(&m.limit, &[0.0], &ops, &scales, 0.15, Some(&q), &cfg).unwrap();
        assert!(rep.all_pass(), "{:?}", rep.verdicts);
        let mut grid = dyadic_scales(1, 20);
        grid.extend(&scales);
        let d = dini_check(&m.limit, &[0.0], &[1.0], &grid, 1e-3).unwrap();
        assert!(d.empty_flag, "{d:?}");
    }
}

use clap::{Args, Parser, Subcommand, ValueEnum};
use lipforge::cylinder::{cyl_constant, DEFAULT_RESTARTS};
use lipforge::formats::{field_2d, heatmap_svg, parse_points_csv, GridFile};
use lipforge::func::{parse_dag_json, to_dag_json, DEFAULT_SMOOTH_M};
use lipforge::game::{policy_by_name, run_bm_game, GameConfig};
use lipforge::operator::{parse_op_json, FamilyDoc, NormOracle, OpDoc};
use lipforge::prescribe::{certify, prescribe_derivative};
use lipforge::puresets::{xi_estimate, xi_exhaustive, CurveSpec, MAX_NODES};
use lipforge::region::{parse_region_json, Region};
use lipforge::smooth::{
    mollify, smooth_around, MollifierSpec, SmoothOptions, DEFAULT_NDIR, DEFAULT_QUAD_ORDER,
};
use lipforge::space::Functional;
use lipforge::steep::{
    build_pu_map, build_steep, certify_pu_map, certify_steep, PuMapOptions, SteepSpec,
};
use lipforge::verify::{c1_check, dyadic_scales, lip_estimate, scan_derivative_set, ScanConfig};
use lipforge::{Error, LinOp, LipFn, NormedSpace};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("certificate violation: {0}")]
    Certificate(String),
    #[error("resolution error: {0}")]
    Resolution(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Certificate(_) => 3,
            CliError::Resolution(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Resolution(_) | Error::Budget(_) | Error::Cover(_) | Error::Modulus(_) => {
                CliError::Resolution(e.to_string())
            }
            Error::Construction(_) | Error::Referee(_) => CliError::Certificate(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

type Res<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "lipforge",
    version,
    about = "Construct and certify Lipschitz maps with prescribed derivative sets"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Prescribe the derivative L at the points Γ.
    Prescribe(PrescribeArgs),
    /// Play the Banach–Mazur game against a Player I policy.
    Game(GameArgs),
    /// Steep function of a region.
    Steep(SteepArgs),
    /// Derivative map on a purely unrectifiable set.
    Pumap(PumapArgs),
    /// Four-corner Cantor iterate.
    Cantor(CantorArgs),
    /// Curve-intersection estimate ξ(G, P, α).
    Xi(XiArgs),
    /// Cylinder constant of an operator.
    Cyl(CylArgs),
    /// Mollify or locally smooth a map.
    Smooth(SmoothArgs),
    /// Derivative-set scan at a point.
    Verify(VerifyArgs),
    /// Heatmap of a map or an LFGF grid file.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write SVG heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct PrescribeArgs {
    /// Domain space JSON; overrides the operator's domain.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    op: PathBuf,
    /// CSV of points Γ.
    #[arg(long)]
    gamma: PathBuf,
    #[arg(long)]
    r: f64,
    #[arg(long)]
    s: f64,
    /// Base map (DAG JSON); zero when absent.
    #[arg(long = "fn")]
    f: Option<PathBuf>,
    /// Region Q; a box 5s around Γ when absent.
    #[arg(long)]
    q: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    lattice: usize,
    #[arg(long, default_value_t = 100)]
    dirs: usize,
    #[arg(long, default_value_t = 10_000)]
    pairs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GameArgs {
    /// JSON with keys e, q, op and optional policy, nest_points, lip_pairs, cert_dirs.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SteepArgs {
    #[arg(long)]
    region: PathBuf,
    /// Coefficients of P, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    functional: Vec<f64>,
    /// Space JSON; Euclidean when absent.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    h: f64,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PumapArgs {
    #[arg(long)]
    e: PathBuf,
    #[arg(long)]
    u: PathBuf,
    #[arg(long)]
    op: PathBuf,
    #[arg(long)]
    theta: f64,
    #[arg(long, default_value_t = 4)]
    max_level: u32,
    #[arg(long, default_value_t = 200)]
    jac_points: usize,
    #[arg(long, default_value_t = 20_000)]
    pairs: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CantorArgs {
    #[arg(long)]
    level: u32,
    #[arg(long, default_value_t = 0.25)]
    ratio: f64,
    /// Write the compact iterate descriptor instead of its boxes.
    #[arg(long)]
    descriptor: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct XiArgs {
    #[arg(long)]
    region: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    functional: Vec<f64>,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long)]
    alpha: f64,
    /// Lattice step h.
    #[arg(long)]
    grid: f64,
    /// Largest step coordinate of lattice curves.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Also run the exhaustive path enumeration (small grids only).
    #[arg(long)]
    exhaustive: bool,
}

#[derive(Args)]
struct CylArgs {
    #[arg(long)]
    op: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SmoothMode {
    Around,
    Mollify,
}

#[derive(Args)]
struct SmoothArgs {
    #[arg(long = "fn")]
    f: PathBuf,
    /// Compact set E (around) or evaluation region (mollify).
    #[arg(long)]
    e: PathBuf,
    /// Ambient region Q; bbox(E) enlarged by 1 when absent.
    #[arg(long)]
    q: Option<PathBuf>,
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "around")]
    mode: SmoothMode,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_NDIR)]
    ndir: usize,
    /// Gauss–Legendre order of the quadrature cross-check.
    #[arg(long, default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
    #[arg(long, default_value_t = DEFAULT_SMOOTH_M)]
    m: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long = "fn")]
    f: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Vec<f64>,
    /// Operator family JSON (`space`, `ops`).
    #[arg(long)]
    ops: PathBuf,
    #[arg(long, default_value_t = 0.15)]
    tol: f64,
    /// Dyadic scale exponents lo:hi (scales 2^-lo..2^-hi).
    #[arg(long, default_value = "4:20")]
    scales: String,
    #[arg(long, default_value_t = 200)]
    dirs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report JSON and the (scale, error) CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// LFGF grid file (2-dimensional).
    #[arg(long, conflicts_with = "f")]
    grid: Option<PathBuf>,
    /// DAG JSON sampled over --bbox.
    #[arg(long = "fn")]
    f: Option<PathBuf>,
    /// lo0,lo1,hi0,hi1
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    bbox: Vec<f64>,
    #[arg(long, default_value_t = 96)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    component: usize,
    /// Write the sampled grid as LFGF here.
    #[arg(long)]
    grid_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read(p: &Path) -> Res<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

fn write(p: &Path, data: impl AsRef<[u8]>) -> Res<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(p, data).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_space(p: &Path) -> Res<NormedSpace> {
    serde_json::from_str(&read(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
}

fn load_region(p: &Path) -> Res<Region> {
    Ok(parse_region_json(&read(p)?)?)
}

fn load_fn(p: &Path) -> Res<LipFn> {
    Ok(parse_dag_json(&read(p)?)?)
}

fn space_or_euclid(p: Option<&PathBuf>, d: usize) -> Res<NormedSpace> {
    match p {
        Some(p) => {
            let sp = load_space(p)?;
            if sp.dim() != d {
                return Err(CliError::Config(format!(
                    "space has dimension {}, expected {d}",
                    sp.dim()
                )));
            }
            Ok(sp)
        }
        None => Ok(NormedSpace::euclidean(d)),
    }
}

fn enlarged_box(r: &Region, pad: f64) -> Res<Region> {
    let (lo, hi) = r
        .bbox()
        .ok_or_else(|| CliError::Config("region must be bounded".into()))?;
    Ok(lipforge::region::boxed(
        lo.iter().map(|v| v - pad).collect(),
        hi.iter().map(|v| v + pad).collect(),
    ))
}

/// Writes the report and turns a failed verdict into exit 3.
fn finish<T: Serialize>(dir: &Path, name: &str, cert: &T, pass: bool) -> Res<()> {
    write(&dir.join(name), json(cert))?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Certificate(format!(
            "see {}",
            dir.join(name).display()
        )))
    }
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::Prescribe(a) => prescribe(a),
        Cmd::Game(a) => game(a),
        Cmd::Steep(a) => steep(a),
        Cmd::Pumap(a) => pumap(a),
        Cmd::Cantor(a) => cantor(a),
        Cmd::Xi(a) => xi(a),
        Cmd::Cyl(a) => cyl(a),
        Cmd::Smooth(a) => smooth(a),
        Cmd::Verify(a) => verify(a),
        Cmd::Plot(a) => plot(a),
    }
}

fn prescribe(a: PrescribeArgs) -> Res<()> {
    let mut l = parse_op_json(&read(&a.op)?)?;
    if let Some(p) = &a.space {
        l = LinOp::new(l.matrix.clone(), &load_space(p)?, &l.cod)?;
    }
    let gamma = parse_points_csv(&read(&a.gamma)?)?;
    if gamma.is_empty() {
        return Err(CliError::Config("Γ is empty".into()));
    }
    let f = match &a.f {
        Some(p) => load_fn(p)?,
        None => LipFn::zero(l.dom.dim(), l.cod.dim()).with_lip_bound(0.0),
    };
    let q = match &a.q {
        Some(p) => load_region(p)?,
        None => enlarged_box(
            &Region::Points {
                points: gamma.clone(),
            },
            5.0 * a.s * l.dom.euclid_consts().0,
        )?,
    };
    let p = prescribe_derivative(&f, &l, a.r, &gamma, a.s, &q)?;
    write(&a.common.out.join("g.json"), to_dag_json(&p.g))?;
    let cert = certify(&p, &f, &q, a.lattice, a.dirs, a.pairs, a.common.seed);
    if a.common.svg && l.dom.dim() == 2 {
        let (lo, hi) = q.bbox().expect("bounded Q");
        let vals = field_2d([lo[0], lo[1]], [hi[0], hi[1]], 96, 96, |x| p.g.eval_f(x)[0]);
        write(
            &a.common.out.join("g.svg"),
            heatmap_svg(&vals, 96, 96, "g, first component")?,
        )?;
    }
    let pass = cert.holds(a.r);
    finish(&a.common.out, "certificate.json", &cert, pass)
}

#[derive(serde::Deserialize)]
struct GameFile {
    e: Region,
    q: Region,
    op: OpDoc,
    #[serde(default = "default_policy")]
    policy: String,
    nest_points: Option<usize>,
    lip_pairs: Option<usize>,
    cert_dirs: Option<usize>,
}

fn default_policy() -> String {
    "identity".into()
}

fn game(a: GameArgs) -> Res<()> {
    let cfg: GameFile = serde_json::from_str(&read(&a.config)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", a.config.display())))?;
    cfg.e.validate()?;
    cfg.q.validate()?;
    let t = cfg.op.to_op()?;
    let d = GameConfig::default();
    let gc = GameConfig {
        nest_points: cfg.nest_points.unwrap_or(d.nest_points),
        lip_pairs: cfg.lip_pairs.unwrap_or(d.lip_pairs),
        cert_dirs: cfg.cert_dirs.unwrap_or(d.cert_dirs),
        seed: a.common.seed,
    };
    let mut player = policy_by_name(&cfg.policy, a.common.seed)?;
    let tr = run_bm_game(&cfg.e, &cfg.q, &t, player.as_mut(), a.rounds, &gc)?;
    let out = &a.common.out;
    write(&out.join("transcript.json"), json(&tr.to_doc()))?;
    write(&out.join("certificate.csv"), tr.certificate_csv())?;
    if a.common.svg && !tr.certificate.is_empty() {
        // Rows: rounds (scale α_k); columns: net points; value error/bound.
        let rows = tr.rounds.len();
        let cols = (1..=rows)
            .map(|k| tr.certificate.iter().filter(|c| c.k == k).count())
            .max()
            .unwrap_or(0)
            .max(1);
        let mut vals = vec![f64::NAN; rows * cols];
        for k in 1..=rows {
            for (i, c) in tr.certificate.iter().filter(|c| c.k == k).enumerate() {
                vals[(k - 1) * cols + i] = c.error / c.bound;
            }
        }
        write(
            &out.join("ratio_error.svg"),
            heatmap_svg(&vals, cols, rows, "error / bound at scale α_k (row k)")?,
        )?;
    }
    if tr.certified() {
        Ok(())
    } else {
        Err(CliError::Certificate(format!(
            "see {}",
            out.join("certificate.csv").display()
        )))
    }
}

fn steep(a: SteepArgs) -> Res<()> {
    let g = load_region(&a.region)?;
    let sp = space_or_euclid(a.space.as_ref(), a.functional.len())?;
    let p = Functional::new(a.functional.clone(), &sp)?;
    let mut spec = SteepSpec::new(g, p, a.alpha, a.h)?;
    spec.ratio = a.ratio;
    let st = build_steep(&spec)?;
    let out = &a.common.out;
    write(&out.join("g.json"), to_dag_json(&st.g))?;
    write(&out.join("steep.json"), json(&st))?;
    if a.common.svg && sp.dim() == 2 {
        if let Some((lo, hi)) = spec.g.bbox() {
            let vals = field_2d([lo[0], lo[1]], [hi[0], hi[1]], 96, 96, |x| {
                st.g.eval_f(x)[0]
            });
            write(
                &out.join("g.svg"),
                heatmap_svg(&vals, 96, 96, "steep function g")?,
            )?;
        }
    }
    let cert = certify_steep(&st, &spec, a.samples, a.common.seed)?;
    let pass = cert.pass;
    finish(out, "certificate.json", &cert, pass)
}

fn pumap(a: PumapArgs) -> Res<()> {
    let e = load_region(&a.e)?;
    let u = load_region(&a.u)?;
    let t = parse_op_json(&read(&a.op)?)?;
    let opts = PuMapOptions {
        max_level: a.max_level,
        ..PuMapOptions::default()
    };
    let pm = build_pu_map(&e, &u, &t, a.theta, &opts)?;
    let out = &a.common.out;
    write(&out.join("g.json"), to_dag_json(&pm.g))?;
    write(&out.join("pumap.json"), json(&pm))?;
    if a.common.svg && t.dom.dim() == 2 {
        if let Some((lo, hi)) = e.bbox() {
            let pad: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.1 * (h - l)).collect();
            let lo = [lo[0] - pad[0], lo[1] - pad[1]];
            let hi = [hi[0] + pad[0], hi[1] + pad[1]];
            let vals = field_2d(lo, hi, 128, 128, |x| pm.g.eval_f(x)[0]);
            write(
                &out.join("g.svg"),
                heatmap_svg(&vals, 128, 128, "g, first component")?,
            )?;
            let oracle = NormOracle::new(&t.dom, &t.cod);
            let step = (hi[0] - lo[0]) / 128.0 * 1e-3;
            let dev = field_2d(lo, hi, 128, 128, |x| {
                oracle.ub(&pm.g.jacobian_fd(x, step).sub(&t.matrix))
            });
            write(
                &out.join("dg_minus_t.svg"),
                heatmap_svg(&dev, 128, 128, "‖Dg − T‖")?,
            )?;
        }
    }
    let cert = certify_pu_map(&pm, &e, &u, &t, a.jac_points, a.pairs, a.common.seed)?;
    let pass = cert.pass;
    finish(out, "certificate.json", &cert, pass)
}

fn cantor(a: CantorArgs) -> Res<()> {
    let c = lipforge::region::gen_four_corner(a.level, a.ratio)?;
    let r = if a.descriptor {
        c
    } else {
        let (lo, hi) = c.cantor_boxes_at(None).into_iter().unzip();
        Region::Boxes {
            lo,
            hi,
            open: false,
        }
    };
    let s = json(&r);
    match &a.out {
        Some(p) => write(p, s),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct XiReport {
    estimate: lipforge::puresets::XiEstimate,
    exhaustive: Option<f64>,
}

fn xi(a: XiArgs) -> Res<()> {
    let g = load_region(&a.region)?;
    let sp = space_or_euclid(a.space.as_ref(), a.functional.len())?;
    let spec = CurveSpec::with_k(
        Functional::new(a.functional.clone(), &sp)?,
        a.alpha,
        a.grid,
        a.k,
    )?;
    let estimate = xi_estimate(&g, &spec)?;
    let exhaustive = if a.exhaustive {
        Some(xi_exhaustive(&g, &spec, MAX_NODES)?)
    } else {
        None
    };
    print!(
        "{}",
        json(&XiReport {
            estimate,
            exhaustive
        })
    );
    Ok(())
}

#[derive(Serialize)]
struct CylReport {
    value: f64,
    op_norm: f64,
    #[serde(flatten)]
    result: lipforge::cylinder::CylResult,
}

fn cyl(a: CylArgs) -> Res<()> {
    let t = parse_op_json(&read(&a.op)?)?;
    let result = cyl_constant(&t, a.restarts)?;
    let op_norm = t.bracket()[0];
    let ok = result.value >= op_norm - 1e-9;
    print!(
        "{}",
        json(&CylReport {
            value: result.value,
            op_norm,
            result
        })
    );
    if ok {
        Ok(())
    } else {
        Err(CliError::Certificate("cylinder value below ‖T‖".into()))
    }
}

#[derive(Serialize)]
struct SmoothCert {
    mode: &'static str,
    eps: f64,
    sup_diff: f64,
    sup_points: usize,
    lip_f: f64,
    lip_g: f64,
    c1: lipforge::verify::C1Report,
    c1_points: usize,
    /// Mollify only: quadrature cross-check of the evaluation.
    quad_gap: Option<f64>,
    pass: bool,
}

fn smooth(a: SmoothArgs) -> Res<()> {
    let f = load_fn(&a.f)?;
    let e = load_region(&a.e)?;
    let xs = space_or_euclid(a.space.as_ref(), f.din())?;
    let ys = NormedSpace::euclidean(f.dout());
    let q = match &a.q {
        Some(p) => load_region(p)?,
        None => enlarged_box(&e, 1.0)?,
    };
    let out = &a.common.out;
    let sample_pts = |r: &Region| {
        let d = xs.dim();
        let per = ((a.points as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
        r.lattice(per)
    };
    let lip_f = lip_estimate(&f, &q, &xs, &ys, 20_000, a.common.seed).ratio;
    let (g, mode, c1_pts, step, quad_gap) = match a.mode {
        SmoothMode::Around => {
            let opts = SmoothOptions {
                ndir: a.ndir,
                m: a.m,
                seed: a.common.seed,
            };
            let s = smooth_around(&e, &q, &f, a.eps, &xs, &ys, &opts)?;
            let core: Vec<Vec<f64>> = sample_pts(&s.region)
                .into_iter()
                .filter(|x| s.smooth_core(x))
                .collect();
            let step = s.widths.iter().copied().fold(f64::INFINITY, f64::min) / (16.0 * a.m as f64);
            (s.g, "around", core, step, None)
        }
        SmoothMode::Mollify => {
            let spec = MollifierSpec::new(xs.dim(), a.eps)?.with_m(a.m);
            let m = mollify(&f, &spec, &e, &xs)?;
            let pts = sample_pts(&e);
            let probe: Vec<Vec<f64>> = pts
                .iter()
                .step_by((pts.len() / 16).max(1))
                .cloned()
                .collect();
            let gap = m.quad_gap(&f, &probe, a.quad_order);
            (
                m.f,
                "mollify",
                pts,
                a.eps / (1024.0 * a.m as f64),
                Some(gap),
            )
        }
    };
    let sup_pts = sample_pts(&q);
    let sup_diff = sup_pts
        .iter()
        .map(|x| {
            let (u, v) = (g.eval_f(x), f.eval_f(x));
            ys.norm_f(&u.iter().zip(&v).map(|(p, q)| p - q).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max);
    let lip_g = lip_estimate(&g, &q, &xs, &ys, 20_000, a.common.seed).ratio;
    let c1 = c1_check(&g, &c1_pts, step, 1e-8);
    write(&out.join("g.json"), to_dag_json(&g))?;
    if a.common.svg && xs.dim() == 2 {
        let (lo, hi) = q.bbox().expect("bounded Q");
        let vals = field_2d([lo[0], lo[1]], [hi[0], hi[1]], 96, 96, |x| g.eval_f(x)[0]);
        write(
            &out.join("g.svg"),
            heatmap_svg(&vals, 96, 96, "smoothed map, first component")?,
        )?;
    }
    let pass = sup_diff <= a.eps && c1.pass && lip_g <= lip_f + a.eps + 1e-6;
    let cert = SmoothCert {
        mode,
        eps: a.eps,
        sup_diff,
        sup_points: sup_pts.len(),
        lip_f,
        lip_g,
        c1_points: c1_pts.len(),
        c1,
        quad_gap,
        pass,
    };
    finish(out, "certificate.json", &cert, pass)
}

fn verify(a: VerifyArgs) -> Res<()> {
    let f = load_fn(&a.f)?;
    let fam: FamilyDoc = serde_json::from_str(&read(&a.ops)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", a.ops.display())))?;
    let ops = fam.to_family()?.basis;
    let (lo, hi) = a
        .scales
        .split_once(':')
        .and_then(|(l, h)| Some((l.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
        .filter(|(l, h)| l <= h)
        .ok_or_else(|| {
            CliError::Config(format!("scales must look like lo:hi, got {:?}", a.scales))
        })?;
    let cfg = ScanConfig {
        dirs: a.dirs,
        seed: a.seed,
        ..ScanConfig::default()
    };
    let rep = scan_derivative_set(
        &f,
        &a.point,
        &ops,
        &dyadic_scales(lo, hi),
        a.tol,
        None,
        &cfg,
    )?;
    let s = json(&rep);
    print!("{s}");
    if let Some(dir) = &a.out {
        write(&dir.join("report.json"), &s)?;
        write(&dir.join("errors.csv"), rep.to_csv())?;
    }
    if rep.all_pass() {
        Ok(())
    } else {
        Err(CliError::Certificate("some operators fail the scan".into()))
    }
}

fn plot(a: PlotArgs) -> Res<()> {
    let grid = match (&a.grid, &a.f) {
        (Some(p), _) => {
            let bytes =
                std::fs::read(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            GridFile::from_bytes(&bytes)?
        }
        (None, Some(p)) => {
            let f = load_fn(p)?;
            if a.bbox.len() != 4 || f.din() != 2 {
                return Err(CliError::Config(
                    "--fn needs a map on ℝ² and --bbox lo0,lo1,hi0,hi1".into(),
                ));
            }
            GridFile::sample(
                &f,
                vec![a.bbox[0], a.bbox[1]],
                vec![a.bbox[2], a.bbox[3]],
                vec![a.n, a.n],
            )?
        }
        (None, None) => return Err(CliError::Config("give --grid or --fn".into())),
    };
    if grid.dims.len() != 2 || a.component >= grid.codomain {
        return Err(CliError::Config(
            "plot needs a 2-dimensional grid and a valid component".into(),
        ));
    }
    if let Some(p) = &a.grid_out {
        write(p, grid.to_bytes()?)?;
    }
    // Node (i, j) has x-index i (first axis) and y-index j; rows of the heatmap run over y.
    let (nx, ny) = (grid.dims[0], grid.dims[1]);
    let l = grid.codomain;
    let vals: Vec<f64> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| grid.values[(i * ny + j) * l + a.component])
        .collect();
    write(
        &a.out,
        heatmap_svg(&vals, nx, ny, &format!("component {}", a.component))?,
    )
}

fn init_threads() -> Res<()> {
    if let Ok(v) = std::env::var("LIPFORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("LIPFORGE_THREADS={v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match init_threads().and_then(|_| run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lipforge: {e}");
            ExitCode::from(e.code())
        }
    }
}

//! Linear operators between normed spaces and certified operator norms.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::space::{convex_hull, NormedSpace};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Polygon refinement level for non-polyhedral domains in d = 2.
pub const DEFAULT_REFINE: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Input("matrix shape mismatch".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite matrix entry".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        if rows.iter().any(|x| x.len() != c) {
            return Err(Error::Input("ragged matrix".into()));
        }
        Matrix::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(|r| r.to_vec()).collect()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_r<S: Real>(&self, x: &[S]) -> Vec<S> {
        let z = x[0].zero();
        (0..self.rows)
            .map(|i| {
                let mut s = z.clone();
                for (j, xj) in x.iter().enumerate() {
                    let a = self.at(i, j);
                    if a != 0.0 {
                        s = s + xj.scale(a);
                    }
                }
                s
            })
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, o: &Matrix) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Matrix) -> Matrix {
        self.add(&o.scaled(-1.0))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn to_na(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_na(m: &DMatrix<f64>) -> Matrix {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// Upper-bound machinery for ‖M‖ between fixed spaces.
#[derive(Clone, Debug)]
pub struct NormOracle {
    dom: NormedSpace,
    cod: NormedSpace,
    mode: Mode,
}

#[derive(Clone, Debug)]
enum Mode {
    /// Exact: max over unit-ball vertices.
    Vertices(Vec<Vec<f64>>),
    /// Exact up to rounding: largest singular value.
    Euclid,
    /// ub = c · max over the proxy vertices, which lie on the unit sphere.
    Proxy { c: f64, verts: Vec<Vec<f64>> },
}

impl NormOracle {
    pub fn new(dom: &NormedSpace, cod: &NormedSpace) -> NormOracle {
        NormOracle::with_refine(dom, cod, DEFAULT_REFINE)
    }

    pub fn with_refine(dom: &NormedSpace, cod: &NormedSpace, refine: u32) -> NormOracle {
        let mode = if let Some(v) = dom.ball_vertices() {
            Mode::Vertices(v)
        } else if dom.is_euclidean() && cod.is_euclidean() {
            Mode::Euclid
        } else if dom.dim() == 2 {
            let n = 1usize << (refine + 2);
            let verts = dom.sphere_polygon(n);
            let hull = convex_hull(&verts);
            let mut c: f64 = 1.0;
            for i in 0..hull.len() {
                let a = &hull[i];
                let b = &hull[(i + 1) % hull.len()];
                let det = a[0] * b[1] - a[1] * b[0];
                let f = [(b[1] - a[1]) / det, (a[0] - b[0]) / det];
                c = c.max(dom.dual_norm(&f).0);
            }
            Mode::Proxy { c, verts }
        } else {
            // Cross-polytope with vertices ±e_i/‖e_i‖.
            let d = dom.dim();
            let mut verts = vec![];
            let mut scal = vec![0.0; d];
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                let n = dom.norm_f(&e);
                scal[i] = n;
                e[i] = 1.0 / n;
                verts.push(e.clone());
                e[i] = -1.0 / n;
                verts.push(e);
            }
            let mut c: f64 = 1.0;
            for mask in 0..(1u32 << d.min(16)) {
                let f: Vec<f64> = (0..d)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            -scal[i]
                        } else {
                            scal[i]
                        }
                    })
                    .collect();
                c = c.max(dom.dual_norm(&f).0);
            }
            Mode::Proxy { c, verts }
        };
        NormOracle {
            dom: dom.clone(),
            cod: cod.clone(),
            mode,
        }
    }

    pub fn ratio(&self, m: &Matrix, v: &[f64]) -> f64 {
        let n = self.dom.norm_f(v);
        if n == 0.0 {
            return 0.0;
        }
        self.cod.norm_f(&m.apply(v)) / n
    }

    /// Certified upper bound on ‖m‖.
    pub fn ub(&self, m: &Matrix) -> f64 {
        match &self.mode {
            Mode::Vertices(vs) => vs.iter().map(|v| self.ratio(m, v)).fold(0.0, f64::max),
            Mode::Euclid => {
                if m.is_zero() {
                    0.0
                } else {
                    m.to_na().singular_values().max()
                }
            }
            Mode::Proxy { c, verts } => {
                c * verts
                    .iter()
                    .map(|v| self.cod.norm_f(&m.apply(v)))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// (lb, ub, witness) with lb = ratio(witness).
    pub fn bracket(&self, m: &Matrix) -> (f64, f64, Vec<f64>) {
        let d = self.dom.dim();
        let best_of = |cands: &[Vec<f64>]| -> (f64, Vec<f64>) {
            let mut best = (f64::NEG_INFINITY, cands[0].clone());
            for v in cands {
                let r = self.ratio(m, v);
                if r > best.0 {
                    best = (r, v.clone());
                }
            }
            best
        };
        match &self.mode {
            Mode::Vertices(vs) => {
                let (lb, w) = best_of(vs);
                (lb, lb, w)
            }
            Mode::Euclid => {
                let na = m.to_na();
                let svd = na.clone().svd(false, true);
                let vt = svd.v_t.unwrap();
                let (k, smax) =
                    svd.singular_values
                        .iter()
                        .enumerate()
                        .fold(
                            (0, -1.0),
                            |(bk, bs), (k, s)| if *s > bs { (k, *s) } else { (bk, bs) },
                        );
                let w: Vec<f64> = (0..d).map(|j| vt[(k, j)]).collect();
                let lb = self.ratio(m, &w);
                (lb, smax.max(lb), w)
            }
            Mode::Proxy { verts, .. } => {
                let (mut lb, mut w) = best_of(verts);
                let (l2, w2) = ascend(m, self, 0x5eed);
                if l2 > lb {
                    lb = l2;
                    w = w2;
                }
                let ub = self.ub(m).max(lb);
                (lb, ub, w)
            }
        }
    }
}

/// Multi-start local ascent of ‖Mx‖/‖x‖.
fn ascend(m: &Matrix, o: &NormOracle, seed: u64) -> (f64, Vec<f64>) {
    let d = o.dom.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
    for _ in 0..16 {
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut fx = o.ratio(m, &x);
        let mut step = 0.25;
        while step > 1e-10 {
            let mut improved = false;
            for i in 0..d {
                for s in [step, -step] {
                    let mut y = x.clone();
                    y[i] += s;
                    let fy = o.ratio(m, &y);
                    if fy > fx {
                        x = y;
                        fx = fy;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if fx > best.0 {
            let n = o.dom.norm_f(&x);
            best = (fx, x.iter().map(|v| v / n).collect());
        }
    }
    let lb = o.ratio(m, &best.1);
    (lb, best.1)
}

/// A matrix tagged with domain/codomain spaces and a certified norm bracket.
#[derive(Clone, Debug, PartialEq)]
pub struct LinOp {
    pub matrix: Matrix,
    pub dom: NormedSpace,
    pub cod: NormedSpace,
    pub opnorm_lb: f64,
    pub opnorm_ub: f64,
    pub witness: Vec<f64>,
}

impl LinOp {
    pub fn new(matrix: Matrix, dom: &NormedSpace, cod: &NormedSpace) -> Result<LinOp> {
        if matrix.cols != dom.dim() || matrix.rows != cod.dim() {
            return Err(Error::Input(format!(
                "matrix {}x{} does not map dim {} to dim {}",
                matrix.rows,
                matrix.cols,
                dom.dim(),
                cod.dim()
            )));
        }
        if matrix.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite operator entry".into()));
        }
        let (lb, ub, w) = NormOracle::new(dom, cod).bracket(&matrix);
        Ok(LinOp {
            matrix,
            dom: dom.clone(),
            cod: cod.clone(),
            opnorm_lb: lb,
            opnorm_ub: ub,
            witness: w,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], dom: &NormedSpace, cod: &NormedSpace) -> Result<LinOp> {
        LinOp::new(Matrix::from_rows(rows)?, dom, cod)
    }

    pub fn identity(sp: &NormedSpace) -> LinOp {
        LinOp::new(Matrix::identity(sp.dim()), sp, sp).expect("identity")
    }

    /// The identity matrix viewed as a map between two norms on ℝ^d.
    pub fn identity_between(dom: &NormedSpace, cod: &NormedSpace) -> LinOp {
        LinOp::new(Matrix::identity(dom.dim()), dom, cod).expect("identity")
    }

    pub fn zero(dom: &NormedSpace, cod: &NormedSpace) -> LinOp {
        LinOp::new(Matrix::zeros(cod.dim(), dom.dim()), dom, cod).expect("zero")
    }

    /// c·T with bracket |c|·[lb, ub] (homogeneity, no recomputation).
    pub fn scaled(&self, c: f64) -> LinOp {
        LinOp {
            matrix: self.matrix.scaled(c),
            dom: self.dom.clone(),
            cod: self.cod.clone(),
            opnorm_lb: self.opnorm_lb * c.abs(),
            opnorm_ub: self.opnorm_ub * c.abs(),
            witness: self.witness.clone(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.apply(x)
    }

    pub fn bracket(&self) -> [f64; 2] {
        [self.opnorm_lb, self.opnorm_ub]
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.is_zero()
    }

    /// Bracket re-derived from the stored witness.
    pub fn witness_ratio(&self) -> f64 {
        NormOracle::new(&self.dom, &self.cod).ratio(&self.matrix, &self.witness)
    }
}

/// JSON document for an operator: `space` (domain), optional `cod`, `matrix`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OpDoc {
    pub space: NormedSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cod: Option<NormedSpace>,
    pub matrix: Vec<Vec<f64>>,
}

impl OpDoc {
    pub fn to_op(&self) -> Result<LinOp> {
        let m = Matrix::from_rows(&self.matrix)?;
        let cod = match &self.cod {
            Some(c) => c.clone(),
            None if m.rows == self.space.dim() => self.space.clone(),
            None => NormedSpace::euclidean(m.rows),
        };
        LinOp::new(m, &self.space, &cod)
    }

    pub fn from_op(t: &LinOp) -> OpDoc {
        OpDoc {
            space: t.dom.clone(),
            cod: Some(t.cod.clone()),
            matrix: t.matrix.to_rows(),
        }
    }
}

pub fn parse_op_json(s: &str) -> Result<LinOp> {
    let doc: OpDoc = serde_json::from_str(s)?;
    doc.to_op()
}

/// Span of basis operators; emits a dense sequence in its unit ball.
#[derive(Clone, Debug)]
pub struct OperatorFamily {
    pub basis: Vec<LinOp>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyDoc {
    pub space: NormedSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cod: Option<NormedSpace>,
    /// Basis matrices; also accepted under the key `ops`.
    #[serde(alias = "ops")]
    pub basis: Vec<Vec<Vec<f64>>>,
}

impl FamilyDoc {
    pub fn to_family(&self) -> Result<OperatorFamily> {
        let ops = self
            .basis
            .iter()
            .map(|m| {
                OpDoc {
                    space: self.space.clone(),
                    cod: self.cod.clone(),
                    matrix: m.clone(),
                }
                .to_op()
            })
            .collect::<Result<Vec<_>>>()?;
        OperatorFamily::new(ops)
    }
}

impl OperatorFamily {
    pub fn new(basis: Vec<LinOp>) -> Result<OperatorFamily> {
        if basis.is_empty() {
            return Err(Error::Family("empty basis".into()));
        }
        let (d, l) = (basis[0].dom.clone(), basis[0].cod.clone());
        if basis.iter().any(|b| b.dom != d || b.cod != l) {
            return Err(Error::Family(
                "basis operators act between different spaces".into(),
            ));
        }
        Ok(OperatorFamily { basis })
    }

    /// All of 𝓛(X, Y) via elementary matrices.
    pub fn full(dom: &NormedSpace, cod: &NormedSpace) -> OperatorFamily {
        let mut b = vec![];
        for i in 0..cod.dim() {
            for j in 0..dom.dim() {
                let mut m = Matrix::zeros(cod.dim(), dom.dim());
                m.data[i * dom.dim() + j] = 1.0;
                b.push(LinOp::new(m, dom, cod).expect("elementary"));
            }
        }
        OperatorFamily { basis: b }
    }

    /// Iterator over T_1, T_2, ...
    pub fn dense_iter(&self) -> DenseBallIter<'_> {
        DenseBallIter {
            fam: self,
            coeffs: RationalGrid::new(self.basis.len()),
            n: 0,
        }
    }
}

/// T_n = (1 − 2^{-⌈√n⌉})·R_n; R_n runs over rational combinations of the
/// normalized basis, rescaled into the unit ball.
pub fn dense_ball_sequence(fam: &OperatorFamily, n: usize) -> Result<LinOp> {
    if n == 0 {
        return Err(Error::Input("sequence index starts at 1".into()));
    }
    if fam.basis.is_empty() {
        return Err(Error::Family("empty basis".into()));
    }
    Ok(fam.dense_iter().nth(n - 1).expect("infinite sequence"))
}

pub struct DenseBallIter<'a> {
    fam: &'a OperatorFamily,
    coeffs: RationalGrid,
    n: usize,
}

impl Iterator for DenseBallIter<'_> {
    type Item = LinOp;
    fn next(&mut self) -> Option<LinOp> {
        let (num, den) = self.coeffs.next()?;
        self.n += 1;
        let b0 = &self.fam.basis[0];
        let mut m = Matrix::zeros(b0.matrix.rows, b0.matrix.cols);
        for (a, b) in num.iter().zip(&self.fam.basis) {
            if *a != 0 && b.opnorm_ub > 0.0 {
                m = m.add(&b.matrix.scaled(*a as f64 / den as f64 / b.opnorm_ub));
            }
        }
        let c = LinOp::new(m, &b0.dom, &b0.cod).expect("combination");
        let r = if c.opnorm_ub > 1.0 {
            c.scaled(1.0 / c.opnorm_ub)
        } else {
            c
        };
        // Past 2^-52 the factor is no longer representable below 1.
        let e = ((self.n as f64).sqrt().ceil() as i32).min(52);
        Some(r.scaled(1.0 - 2f64.powi(-e)))
    }
}

/// Enumerates integer vectors a ∈ [−L, L]^m with gcd(a, L) = 1, level by
/// level, so each rational point of [−1, 1]^m appears once; yields (a, L).
struct RationalGrid {
    m: usize,
    level: i64,
    idx: u64,
}

impl RationalGrid {
    fn new(m: usize) -> RationalGrid {
        RationalGrid {
            m,
            level: 1,
            idx: 0,
        }
    }

    fn value(l: i64, k: u64) -> i64 {
        // Order L, −L, L−1, −(L−1), …, 1, −1, 0.
        let k = k as i64;
        if k == 2 * l {
            0
        } else {
            let mag = l - k / 2;
            if k % 2 == 0 {
                mag
            } else {
                -mag
            }
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Iterator for RationalGrid {
    type Item = (Vec<i64>, i64);
    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let base = (2 * self.level + 1) as u64;
            let total = base.checked_pow(self.m as u32)?;
            if self.idx >= total {
                self.level += 1;
                self.idx = 0;
                continue;
            }
            let mut k = self.idx;
            self.idx += 1;
            let mut a = vec![0i64; self.m];
            for i in (0..self.m).rev() {
                a[i] = RationalGrid::value(self.level, k % base);
                k /= base;
            }
            let l = self.level;
            if a.iter().fold(l, |g, v| gcd(g, *v)) != 1 {
                continue;
            }
            return Some((a, l));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{Descriptor, PExp};

    #[test]
    fn bracket_examples() {
        let e2 = NormedSpace::euclidean(2);
        let id = LinOp::identity(&e2);
        assert_eq!(id.bracket(), [1.0, 1.0]);
        let t = LinOp::from_rows(
            &[vec![2.0, 0.0], vec![0.0, 3.0]],
            &NormedSpace::linf(2),
            &NormedSpace::lp(2, 1.0),
        )
        .unwrap();
        assert_eq!(t.bracket(), [5.0, 5.0]);
        let s = t.scaled(0.5);
        assert_eq!(s.bracket(), [2.5, 2.5]);
    }

    #[test]
    fn nonfinite_rejected() {
        let e2 = NormedSpace::euclidean(2);
        assert!(LinOp::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]], &e2, &e2).is_err());
    }

    #[test]
    fn proxy_brackets_contain_truth() {
        // ℓ3 → ℓ2 on a rotation-scaling; compare against a fine sweep.
        let dom = NormedSpace::lp(2, 3.0);
        let cod = NormedSpace::euclidean(2);
        let t = LinOp::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.7]], &dom, &cod).unwrap();
        let o = NormOracle::new(&dom, &cod);
        let fine = dom
            .sphere_polygon(100_000)
            .iter()
            .map(|v| o.ratio(&t.matrix, v))
            .fold(0.0, f64::max);
        assert!(t.opnorm_lb <= fine + 1e-8);
        assert!(t.opnorm_ub >= fine - 1e-12);
        assert!(t.opnorm_ub / t.opnorm_lb < 1.01);
        assert_eq!(t.witness_ratio(), t.opnorm_lb);
    }

    #[test]
    fn three_dim_proxy_is_sound() {
        let dom = NormedSpace::lp(3, 4.0);
        let cod = NormedSpace::new(
            3,
            Descriptor::WeightedLp {
                p: PExp(2.0),
                weights: vec![1.0, 2.0, 3.0],
            },
        )
        .unwrap();
        let t = LinOp::from_rows(
            &[
                vec![1.0, 0.2, 0.0],
                vec![0.0, 1.0, -0.3],
                vec![0.5, 0.0, 1.0],
            ],
            &dom,
            &cod,
        )
        .unwrap();
        assert!(t.opnorm_lb <= t.opnorm_ub);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = cod.norm_f(&t.apply(&x)) / dom.norm_f(&x);
            assert!(r <= t.opnorm_ub + 1e-12);
        }
    }

    #[test]
    fn dense_sequence_first_term_and_bound() {
        let e1 = NormedSpace::euclidean(1);
        let a = LinOp::from_rows(&[vec![3.0]], &e1, &e1).unwrap();
        let fam = OperatorFamily::new(vec![a]).unwrap();
        let t1 = dense_ball_sequence(&fam, 1).unwrap();
        assert!((t1.matrix.data[0] - 0.5).abs() < 1e-15);
        for t in fam.dense_iter().take(5000) {
            assert!(t.opnorm_ub < 1.0);
        }
    }

    #[test]
    fn dense_sequence_hits_target() {
        let e1 = NormedSpace::euclidean(1);
        let fam = OperatorFamily::full(&e1, &e1);
        let hit = fam
            .dense_iter()
            .take(10_000)
            .position(|t| (t.matrix.data[0] - 0.73).abs() < 0.01);
        assert!(hit.is_some());
    }

    #[test]
    fn dense_sequence_covers_2d_family() {
        let e2 = NormedSpace::euclidean(2);
        let fam = OperatorFamily::full(&e2, &e2);
        let target = Matrix::from_rows(&[vec![0.4, -0.2], vec![0.2, 0.6]]).unwrap();
        let o = NormOracle::new(&e2, &e2);
        let best = fam
            .dense_iter()
            .take(60_000)
            .map(|t| o.ub(&t.matrix.sub(&target)))
            .fold(f64::MAX, f64::min);
        assert!(best < 1e-3, "closest {best}");
    }

    #[test]
    fn empty_family_rejected() {
        assert!(matches!(OperatorFamily::new(vec![]), Err(Error::Family(_))));
    }
}

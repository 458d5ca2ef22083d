//! The cylinder constant 𝔠(T): min over bases of T(X) of the largest
//! partial-sum operator norm.

use crate::error::Result;
use crate::operator::{LinOp, Matrix, NormOracle};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const RANK_TOL: f64 = 1e-10;
pub const DEFAULT_RESTARTS: usize = 64;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CylResult {
    /// Certified upper bound on max_j ‖S_j‖ for the returned basis.
    pub value: f64,
    /// Lower bound: the operator norm bracket's lb.
    pub lower: f64,
    pub rank: usize,
    /// w_1..w_l in Y, unit norm.
    pub basis: Vec<Vec<f64>>,
    /// Functionals on Y extending w*_i from T(X).
    pub duals: Vec<Vec<f64>>,
}

/// Numerical rank with relative tolerance [`RANK_TOL`].
pub fn rank(m: &Matrix) -> usize {
    let sv = m.to_na().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * smax).count()
}

struct Setup {
    t: Matrix,
    ur: DMatrix<f64>,
    /// U_rᵀ T, r × d.
    core: DMatrix<f64>,
    r: usize,
    oracle: NormOracle,
    cod_norm: crate::space::NormedSpace,
}

impl Setup {
    /// Unit-normalised basis columns W and the dual rows for coefficient matrix c.
    fn basis(&self, c: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let mut w = &self.ur * c;
        let mut c = c.clone();
        for j in 0..self.r {
            let col: Vec<f64> = w.column(j).iter().copied().collect();
            let n = self.cod_norm.norm_f(&col);
            if !(n > 0.0) || !n.is_finite() {
                return None;
            }
            w.column_mut(j).scale_mut(1.0 / n);
            c.column_mut(j).scale_mut(1.0 / n);
        }
        let cinv = c.try_inverse()?;
        let duals = &cinv * self.ur.transpose();
        Some((w, duals))
    }

    fn objective(&self, c: &DMatrix<f64>) -> f64 {
        let Some((w, duals)) = self.basis(c) else {
            return f64::INFINITY;
        };
        let coef = &duals * &self.ur * &self.core;
        let mut best: f64 = 0.0;
        let mut s = DMatrix::<f64>::zeros(self.t.rows, self.t.cols);
        for j in 0..self.r {
            s += w.column(j) * coef.row(j);
            let v = self.oracle.ub(&Matrix::from_na(&s));
            if !v.is_finite() {
                return f64::INFINITY;
            }
            best = best.max(v);
        }
        best
    }

    fn refine(&self, mut c: DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut f = self.objective(&c);
        let mut step = 0.1;
        while step >= 1e-6 {
            let mut improved = false;
            for i in 0..self.r {
                for j in 0..self.r {
                    for s in [step, -step] {
                        let mut c2 = c.clone();
                        c2[(i, j)] += s;
                        let f2 = self.objective(&c2);
                        if f2 < f {
                            c = c2;
                            f = f2;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (f, c)
    }
}

/// Searches bases of T(X); `restarts` random starts (the first is the SVD
/// basis) each refined coordinate-wise with halving steps 0.1 → 1e-6.
pub fn cyl_constant(t: &LinOp, restarts: usize) -> Result<CylResult> {
    let r = rank(&t.matrix);
    if r == 0 {
        return Ok(CylResult {
            value: 0.0,
            lower: 0.0,
            rank: 0,
            basis: vec![],
            duals: vec![],
        });
    }
    let na = t.matrix.to_na();
    let svd = na.clone().svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|a, b| svd.singular_values[*b].total_cmp(&svd.singular_values[*a]));
    let ur = DMatrix::from_fn(u.nrows(), r, |i, j| u[(i, order[j])]);
    let core = ur.transpose() * &na;
    let setup = Setup {
        t: t.matrix.clone(),
        ur,
        core,
        r,
        oracle: NormOracle::new(&t.dom, &t.cod),
        cod_norm: t.cod.clone(),
    };
    let restarts = restarts.max(1);
    let results: Vec<(f64, DMatrix<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|k| {
            let c0 = if k == 0 {
                DMatrix::identity(r, r)
            } else {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(0xc71 ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
                DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0))
            };
            if r == 1 {
                (setup.objective(&c0), c0)
            } else {
                setup.refine(c0)
            }
        })
        .collect();
    let (value, c) = results.into_iter().filter(|(v, _)| v.is_finite()).fold(
        (f64::INFINITY, DMatrix::identity(r, r)),
        |a, b| if b.0 < a.0 { b } else { a },
    );
    let (w, duals) = setup
        .basis(&c)
        .expect("finite objective implies valid basis");
    let basis = (0..r)
        .map(|j| w.column(j).iter().copied().collect())
        .collect();
    let duals = (0..r)
        .map(|i| duals.row(i).iter().copied().collect())
        .collect();
    // The last partial sum is T itself, so value ≥ ‖T‖_ub ≥ lb up to rounding.
    let value = value.max(t.opnorm_lb);
    Ok(CylResult {
        value,
        lower: t.opnorm_lb,
        rank: r,
        basis,
        duals,
    })
}

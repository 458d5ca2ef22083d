//! Radial interpolation Φ(a, b, f₁, f₂): f₁ inside ‖x‖ ≤ a, f₂ outside ‖x‖ ≥ b.

use crate::error::{Error, Result};
use crate::func::LipFn;
use crate::space::NormedSpace;

/// Tolerance for the f₁(0) = f₂(0) = 0 hypothesis.
pub const ORIGIN_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct BlendSpec {
    pub space: NormedSpace,
    pub a: f64,
    pub b: f64,
    pub f1: LipFn,
    pub f2: LipFn,
    pub lip1: f64,
    pub lip2: f64,
}

#[derive(Clone, Debug)]
pub struct Blend {
    pub phi: LipFn,
    /// Whether f₁ / f₂ were shifted to vanish at the origin.
    pub shifted: [bool; 2],
    pub lip_bound: f64,
}

impl BlendSpec {
    pub fn new(
        space: &NormedSpace,
        a: f64,
        b: f64,
        f1: LipFn,
        f2: LipFn,
        lip1: f64,
        lip2: f64,
    ) -> Result<BlendSpec> {
        if !(a > 0.0 && a < b && b.is_finite()) {
            return Err(Error::Input(format!("need 0 < a < b, got a={a}, b={b}")));
        }
        if !(lip1 >= 0.0 && lip2 >= 0.0) || lip1 + lip2 > 1.0 + 1e-12 {
            return Err(Error::Input(format!(
                "need lip1 + lip2 ≤ 1, got {lip1} + {lip2}"
            )));
        }
        Ok(BlendSpec {
            space: space.clone(),
            a,
            b,
            f1,
            f2,
            lip1,
            lip2,
        })
    }

    /// Lip(Φ) ≤ 1 + a/(b − a).
    pub fn lip_bound(&self) -> f64 {
        1.0 + self.a / (self.b - self.a)
    }

    pub fn build(&self) -> Result<Blend> {
        let zero = vec![0.0; self.space.dim()];
        let mut shifted = [false, false];
        let mut fix = |f: &LipFn, i: usize| -> Result<LipFn> {
            let v = f.eval_f(&zero);
            if v.iter().all(|c| c.abs() <= ORIGIN_TOL) {
                Ok(f.clone())
            } else {
                shifted[i] = true;
                f.sub(&LipFn::point_value(f, zero.clone())?)
            }
        };
        let f1 = fix(&self.f1, 0)?;
        let f2 = fix(&self.f2, 1)?;
        let lip = self.lip_bound();
        let phi = LipFn::blend_node(&self.space, self.a, self.b, &f1, &f2)?.with_lip_bound(lip);
        Ok(Blend {
            phi,
            shifted,
            lip_bound: lip,
        })
    }
}

pub fn eval_blend(spec: &BlendSpec, x: &[f64]) -> Result<Vec<f64>> {
    Ok(spec.build()?.phi.eval_f(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::LinOp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e2() -> NormedSpace {
        NormedSpace::euclidean(2)
    }

    #[test]
    fn middle_case_value() {
        let s = BlendSpec::new(
            &e2(),
            1.0,
            2.0,
            LipFn::zero(2, 2),
            LipFn::identity(2),
            0.0,
            1.0,
        )
        .unwrap();
        let x = [1.5 * 0.6, 1.5 * 0.8];
        let v = eval_blend(&s, &x).unwrap();
        assert!((v[0] - 2.0 / 3.0 * x[0]).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0 * x[1]).abs() < 1e-15);
    }

    #[test]
    fn inner_ball_is_f1_and_outer_is_f2() {
        let t = LinOp::from_rows(&[vec![0.2, 0.1], vec![0.0, -0.3]], &e2(), &e2()).unwrap();
        let f1 = LipFn::linear(&t);
        let f2 = LipFn::linear(&t.scaled(-1.0));
        let s = BlendSpec::new(&e2(), 0.5, 1.0, f1.clone(), f2.clone(), 0.35, 0.35).unwrap();
        let phi = s.build().unwrap().phi;
        for x in [[0.3, 0.3], [0.0, 0.5], [0.1, -0.2]] {
            assert_eq!(phi.eval_f(&x), f1.eval_f(&x));
        }
        for x in [[1.0, 0.0], [2.0, 3.0]] {
            assert_eq!(phi.eval_f(&x), f2.eval_f(&x));
        }
    }

    #[test]
    fn shifted_inputs_are_recentred() {
        let f2 = LipFn::shift(&[1.0, 0.0]).unwrap();
        let s = BlendSpec::new(&e2(), 0.5, 1.0, LipFn::zero(2, 2), f2, 0.0, 1.0).unwrap();
        let b = s.build().unwrap();
        assert_eq!(b.shifted, [false, true]);
        assert_eq!(b.phi.eval_f(&[2.0, 0.0]), vec![2.0, 0.0]);
    }

    #[test]
    fn properties_iv_v_and_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sp = NormedSpace::lp(2, 1.5);
        let (a, b) = (0.3, 0.8);
        let id = LipFn::identity(2);
        let p4 = BlendSpec::new(&sp, a, b, LipFn::zero(2, 2), id.clone(), 0.0, 1.0)
            .unwrap()
            .build()
            .unwrap();
        let p5 = BlendSpec::new(&sp, a, b, id.clone(), LipFn::zero(2, 2), 1.0, 0.0)
            .unwrap()
            .build()
            .unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let x = [
                rng.gen_range(-2.0 * b..2.0 * b),
                rng.gen_range(-2.0 * b..2.0 * b),
            ];
            let v4 = p4.phi.eval_f(&x);
            assert!(sp.dist_f(&v4, &x) <= a + 1e-12);
            assert!(sp.norm_f(&p5.phi.eval_f(&x)) <= b + 1e-12);
            let y = [
                x[0] + rng.gen_range(-0.05..0.05),
                x[1] + rng.gen_range(-0.05..0.05),
            ];
            let r = sp.dist_f(&p4.phi.eval_f(&x), &p4.phi.eval_f(&y)) / sp.dist_f(&x, &y);
            worst = worst.max(r);
        }
        assert!(worst <= p4.lip_bound + 1e-7, "{worst}");
    }

    #[test]
    fn rejects_bad_radii_and_lipschitz_budget() {
        let z = LipFn::zero(2, 2);
        assert!(BlendSpec::new(&e2(), 1.0, 1.0, z.clone(), z.clone(), 0.0, 0.0).is_err());
        assert!(BlendSpec::new(&e2(), 0.5, 1.0, z.clone(), z, 0.7, 0.7).is_err());
    }
}

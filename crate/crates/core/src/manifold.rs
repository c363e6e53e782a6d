//! Poincaré-ball arithmetic with trainable positive curvature `c` (the ball
//! has sectional curvature `-c` and radius `1/sqrt(c)`).
//!
//! All maps are anchored at the origin. Operations are pure functions over
//! immutable values and safe to call concurrently. This module is the plain
//! `f64` kernel; the differentiable counterparts on the autodiff tape live in
//! [`crate::geometry`] and are tested against these functions.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{CoreError, Result};

/// Margin kept between any stored point and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;
/// artanh arguments are clamped to `[-(1-ARTANH_EPS), 1-ARTANH_EPS]`.
pub const ARTANH_EPS: f64 = 1e-7;
/// Norms are floored here before they appear in a denominator.
pub const NORM_FLOOR: f64 = 1e-15;

/// A point of the open ball `c * ||x||^2 < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint {
    coords: Array1<f64>,
    curvature: f64,
}

/// A tangent vector at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub coords: Array1<f64>,
}

/// Conformal factor `lambda_x^c = 2 / (1 - c ||x||^2)`; equals 2 at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalFactor(pub f64);

pub fn artanh(x: f64) -> f64 {
    let x = x.clamp(-(1.0 - ARTANH_EPS), 1.0 - ARTANH_EPS);
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

impl BallPoint {
    /// Wrap coordinates, checking strict ball membership for `c`.
    pub fn new(coords: Array1<f64>, curvature: f64) -> Result<Self> {
        if !coords.iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite("BallPoint::new"));
        }
        let sq = curvature * coords.dot(&coords);
        if sq >= 1.0 {
            return Err(CoreError::BallViolation(sq));
        }
        Ok(Self { coords, curvature })
    }

    /// The origin of the `dim`-dimensional ball.
    pub fn origin(dim: usize, curvature: f64) -> Self {
        Self {
            coords: Array1::zeros(dim),
            curvature,
        }
    }

    pub fn coords(&self) -> ArrayView1<'_, f64> {
        self.coords.view()
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn conformal_factor(&self) -> ConformalFactor {
        let sq = self.coords.dot(&self.coords);
        ConformalFactor(2.0 / (1.0 - self.curvature * sq))
    }

    fn check_curvature(&self, c: f64, context: &'static str) -> Result<()> {
        if (self.curvature - c).abs() > 1e-12 {
            return Err(CoreError::GraphData(format!(
                "{context}: point carries curvature {} but op uses {c}",
                self.curvature
            )));
        }
        Ok(())
    }
}

/// Möbius addition `x ⊕_c y`.
pub fn mobius_add(x: &BallPoint, y: &BallPoint, c: f64) -> Result<BallPoint> {
    x.check_curvature(c, "mobius_add")?;
    y.check_curvature(c, "mobius_add")?;
    if x.dim() != y.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "mobius_add",
            lhs: vec![x.dim()],
            rhs: vec![y.dim()],
        });
    }
    let xv = x.coords.view();
    let yv = y.coords.view();
    let x2 = xv.dot(&xv);
    let y2 = yv.dot(&yv);
    let xy = xv.dot(&yv);
    let num = &x.coords * (1.0 + 2.0 * c * xy + c * y2) + &y.coords * (1.0 - c * x2);
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    Ok(project_to_ball(&(num / den), c, BALL_EPS)?)
}

/// Geodesic distance `d_c(x, y) = (2/sqrt(c)) * artanh(sqrt(c) ||(-x) ⊕_c y||)`.
pub fn poincare_distance(x: &BallPoint, y: &BallPoint, c: f64) -> Result<f64> {
    let neg_x = BallPoint::new(-&x.coords, c)?;
    y.check_curvature(c, "poincare_distance")?;
    let diff = mobius_add(&neg_x, y, c)?;
    let sqrt_c = c.sqrt();
    Ok(2.0 / sqrt_c * artanh(sqrt_c * norm(diff.coords())))
}

/// `exp_o^c(v)`: the zero vector maps to the origin.
pub fn exp_map_origin(v: &TangentVector, c: f64) -> Result<BallPoint> {
    if !v.coords.iter().all(|x| x.is_finite()) {
        return Err(CoreError::NonFinite("exp_map_origin"));
    }
    let n = norm(v.coords.view());
    if n < NORM_FLOOR {
        return Ok(BallPoint::origin(v.coords.len(), c));
    }
    let sqrt_c = c.sqrt();
    let scale = (sqrt_c * n).tanh() / (sqrt_c * n);
    project_to_ball(&(&v.coords * scale), c, BALL_EPS)
}

/// `log_o^c(y)`: the origin maps to the zero vector.
pub fn log_map_origin(y: &BallPoint, c: f64) -> Result<TangentVector> {
    y.check_curvature(c, "log_map_origin")?;
    let n = norm(y.coords());
    if n < NORM_FLOOR {
        return Ok(TangentVector {
            coords: Array1::zeros(y.dim()),
        });
    }
    let sqrt_c = c.sqrt();
    let scale = artanh(sqrt_c * n) / (sqrt_c * n);
    Ok(TangentVector {
        coords: &y.coords * scale,
    })
}

/// Möbius matrix-vector product `M ⊗_c x = exp_o^c(M log_o^c(x))`.
pub fn mobius_matvec(m: ArrayView2<'_, f64>, x: &BallPoint, c: f64) -> Result<BallPoint> {
    if m.ncols() != x.dim() {
        return Err(CoreError::ShapeMismatch {
            context: "mobius_matvec",
            lhs: vec![m.nrows(), m.ncols()],
            rhs: vec![x.dim()],
        });
    }
    let v = log_map_origin(x, c)?;
    let mv = m.dot(&v.coords);
    exp_map_origin(&TangentVector { coords: mv }, c)
}

/// Rescale `x` onto norm `(1 - eps)/sqrt(c)` when it falls outside; interior
/// points pass through unchanged. Direction is always preserved.
pub fn project_to_ball(x: &Array1<f64>, c: f64, eps: f64) -> Result<BallPoint> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err(CoreError::NonFinite("project_to_ball"));
    }
    let max_norm = (1.0 - eps) / c.sqrt();
    let n = norm(x.view());
    let coords = if n > max_norm {
        x * (max_norm / n)
    } else {
        x.clone()
    };
    Ok(BallPoint {
        coords,
        curvature: c,
    })
}

/// Weighted tangent-space aggregation:
/// `exp_o^{c_out}( sum_j w_j log_o^{c_in}(p_j) )`.
///
/// This is the shared aggregation kernel; callers supply degree- or
/// attention-derived weights.
pub fn tangent_aggregate(
    points: &[BallPoint],
    weights: &[f64],
    c_in: f64,
    c_out: f64,
) -> Result<BallPoint> {
    if points.is_empty() {
        return Err(CoreError::EmptyInput("tangent_aggregate"));
    }
    if points.len() != weights.len() {
        return Err(CoreError::ShapeMismatch {
            context: "tangent_aggregate",
            lhs: vec![points.len()],
            rhs: vec![weights.len()],
        });
    }
    let dim = points[0].dim();
    let mut acc = Array1::<f64>::zeros(dim);
    for (p, &w) in points.iter().zip(weights) {
        if p.dim() != dim {
            return Err(CoreError::ShapeMismatch {
                context: "tangent_aggregate",
                lhs: vec![dim],
                rhs: vec![p.dim()],
            });
        }
        let v = log_map_origin(p, c_in)?;
        acc.scaled_add(w, &v.coords);
    }
    exp_map_origin(&TangentVector { coords: acc }, c_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ball(coords: &[f64], c: f64) -> BallPoint {
        BallPoint::new(arr1(coords), c).unwrap()
    }

    fn random_ball_point(rng: &mut ChaCha8Rng, dim: usize, c: f64, max_frac: f64) -> BallPoint {
        let raw: Array1<f64> = Array1::from_iter((0..dim).map(|_| rng.gen_range(-1.0..1.0)));
        let target = rng.gen_range(0.0..max_frac) / c.sqrt();
        let n = raw.dot(&raw).sqrt().max(NORM_FLOOR);
        BallPoint::new(raw * (target / n), c).unwrap()
    }

    #[test]
    fn mobius_add_1d_hand_value() {
        // 1-D Möbius addition collapses to (x+y)/(1+c*x*y) = 0.7/1.12.
        let z = mobius_add(&ball(&[0.3], 1.0), &ball(&[0.4], 1.0), 1.0).unwrap();
        assert!((z.coords()[0] - 0.625).abs() < 1e-12);
    }

    #[test]
    fn mobius_add_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let c = rng.gen_range(0.2..3.0);
            let x = random_ball_point(&mut rng, 5, c, 0.9);
            let zero = BallPoint::origin(5, c);
            let right = mobius_add(&x, &zero, c).unwrap();
            let left = mobius_add(&zero, &x, c).unwrap();
            let neg = BallPoint::new(-&x.coords().to_owned(), c).unwrap();
            let inv = mobius_add(&neg, &x, c).unwrap();
            for i in 0..5 {
                assert!((right.coords()[i] - x.coords()[i]).abs() < 1e-9);
                assert!((left.coords()[i] - x.coords()[i]).abs() < 1e-9);
                assert!(inv.coords()[i].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mobius_add_small_curvature_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = 1e-9;
        for _ in 0..200 {
            let x = random_ball_point(&mut rng, 4, 1.0, 0.9); // norm <= 0.9 < 1
            let y = random_ball_point(&mut rng, 4, 1.0, 0.9);
            let xb = BallPoint::new(x.coords().to_owned(), c).unwrap();
            let yb = BallPoint::new(y.coords().to_owned(), c).unwrap();
            let z = mobius_add(&xb, &yb, c).unwrap();
            let euclid = &x.coords().to_owned() + &y.coords().to_owned();
            let diff = (&z.coords().to_owned() - &euclid).mapv(f64::abs).sum();
            assert!(diff <= 1e-5, "c->0 limit violated: {diff}");
        }
    }

    #[test]
    fn distance_1d_hand_value() {
        let d = poincare_distance(&ball(&[0.0], 1.0), &ball(&[0.5], 1.0), 1.0).unwrap();
        assert!((d - 2.0 * 0.5f64.atanh()).abs() < 1e-9);
        assert!((d - 1.0986122886681098).abs() < 1e-7);
    }

    #[test]
    fn distance_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let c = rng.gen_range(0.5..2.0);
            let x = random_ball_point(&mut rng, 4, c, 0.8);
            let y = random_ball_point(&mut rng, 4, c, 0.8);
            let z = random_ball_point(&mut rng, 4, c, 0.8);
            let dxy = poincare_distance(&x, &y, c).unwrap();
            let dyx = poincare_distance(&y, &x, c).unwrap();
            let dxx = poincare_distance(&x, &x, c).unwrap();
            assert!(dxy >= 0.0);
            assert!((dxy - dyx).abs() < 1e-9);
            assert!(dxx.abs() < 1e-9);
            let dxz = poincare_distance(&x, &z, c).unwrap();
            let dzy = poincare_distance(&z, &y, c).unwrap();
            assert!(dxy <= dxz + dzy + 1e-9);
        }
    }

    #[test]
    fn exp_map_hand_value() {
        let v = TangentVector { coords: arr1(&[0.5]) };
        let p = exp_map_origin(&v, 1.0).unwrap();
        assert!((p.coords()[0] - 0.5f64.tanh()).abs() < 1e-12);
        assert!((p.coords()[0] - 0.4621171572600098).abs() < 1e-9);
        let back = log_map_origin(&p, 1.0).unwrap();
        assert!((back.coords[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn exp_log_zero_cases() {
        let z = TangentVector { coords: Array1::zeros(3) };
        let p = exp_map_origin(&z, 2.0).unwrap();
        assert_eq!(p.coords().iter().map(|v| v.abs()).sum::<f64>(), 0.0);
        let back = log_map_origin(&BallPoint::origin(3, 2.0), 2.0).unwrap();
        assert_eq!(back.coords.iter().map(|v| v.abs()).sum::<f64>(), 0.0);
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let c = rng.gen_range(0.3..3.0);
            // tangent -> ball -> tangent
            let raw: Array1<f64> = Array1::from_iter((0..6).map(|_| rng.gen_range(-1.0..1.0)));
            let len = rng.gen_range(0.0..3.0);
            let n = raw.dot(&raw).sqrt().max(NORM_FLOOR);
            let v = TangentVector { coords: raw * (len / n) };
            let p = exp_map_origin(&v, c).unwrap();
            let v2 = log_map_origin(&p, c).unwrap();
            for i in 0..6 {
                assert!((v2.coords[i] - v.coords[i]).abs() < 1e-7);
            }
            // ball -> tangent -> ball
            let q = random_ball_point(&mut rng, 6, c, 0.95);
            let w = log_map_origin(&q, c).unwrap();
            let q2 = exp_map_origin(&w, c).unwrap();
            for i in 0..6 {
                assert!((q2.coords()[i] - q.coords()[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn matvec_identity_zero_and_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = 1.3;
        let x = random_ball_point(&mut rng, 4, c, 0.8);
        let eye: Array2<f64> = Array2::eye(4);
        let same = mobius_matvec(eye.view(), &x, c).unwrap();
        for i in 0..4 {
            assert!((same.coords()[i] - x.coords()[i]).abs() < 1e-9);
        }
        let zero: Array2<f64> = Array2::zeros((3, 4));
        let org = mobius_matvec(zero.view(), &x, c).unwrap();
        assert_eq!(org.coords().iter().map(|v| v.abs()).sum::<f64>(), 0.0);

        // composition oracle: exp_o(M log_o(x)) built from the two map ops
        for _ in 0..100 {
            let m: Array2<f64> =
                Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
            let y = mobius_matvec(m.view(), &x, c).unwrap();
            let v = log_map_origin(&x, c).unwrap();
            let oracle = exp_map_origin(&TangentVector { coords: m.dot(&v.coords) }, c).unwrap();
            for i in 0..3 {
                assert!((y.coords()[i] - oracle.coords()[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn projection_behaviour() {
        let inside = arr1(&[0.1, 0.2]);
        let p = project_to_ball(&inside, 1.0, 1e-5).unwrap();
        assert_eq!(p.coords().to_owned(), inside);

        let far = arr1(&[2.0, 0.0]);
        let q = project_to_ball(&far, 1.0, 1e-5).unwrap();
        assert!((q.coords()[0] - 0.99999).abs() < 1e-12);
        assert_eq!(q.coords()[1], 0.0);

        // direction preserved
        let v = arr1(&[3.0, 4.0]);
        let r = project_to_ball(&v, 1.0, 1e-5).unwrap();
        let n = r.coords().dot(&r.coords()).sqrt();
        assert!((r.coords()[0] / n - 0.6).abs() < 1e-12);
        assert!((r.coords()[1] / n - 0.8).abs() < 1e-12);

        assert!(project_to_ball(&arr1(&[f64::NAN]), 1.0, 1e-5).is_err());
    }

    #[test]
    fn aggregate_identity_zero_and_scalar_oracle() {
        let c = 1.0;
        let p = ball(&[0.3, -0.2], c);
        let one = tangent_aggregate(&[p.clone()], &[1.0], c, c).unwrap();
        for i in 0..2 {
            assert!((one.coords()[i] - p.coords()[i]).abs() < 1e-9);
        }
        let q = ball(&[0.1, 0.4], c);
        let zeroed = tangent_aggregate(&[p.clone(), q.clone()], &[0.0, 0.0], c, c).unwrap();
        assert_eq!(zeroed.coords().iter().map(|v| v.abs()).sum::<f64>(), 0.0);

        // two points, equal weights: tangent midpoint image, checked against
        // an independent scalar evaluation of the map formulas
        let mid = tangent_aggregate(&[p.clone(), q.clone()], &[0.5, 0.5], c, c).unwrap();
        let scalar = |y: &BallPoint| -> Array1<f64> {
            let n = y.coords().dot(&y.coords()).sqrt();
            y.coords().to_owned() * (artanh(n) / n)
        };
        let t = (scalar(&p) * 0.5 + scalar(&q) * 0.5) as Array1<f64>;
        let tn = t.dot(&t).sqrt();
        let expect = &t * (tn.tanh() / tn);
        for i in 0..2 {
            assert!((mid.coords()[i] - expect[i]).abs() < 1e-9);
        }

        assert!(tangent_aggregate(&[], &[], c, c).is_err());
    }

    #[test]
    fn matvec_shape_mismatch_rejected() {
        let x = ball(&[0.1, 0.2], 1.0);
        let m = arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(mobius_matvec(m.view(), &x, 1.0).is_err());
    }

    #[test]
    fn conformal_factor_at_origin() {
        let o = BallPoint::origin(3, 1.7);
        assert!((o.conformal_factor().0 - 2.0).abs() < 1e-15);
    }
}

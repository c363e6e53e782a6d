//! Differentiable Poincaré-ball operations on the autodiff tape.
//!
//! Mirrors [`crate::manifold`] but works row-wise on `(n,d)` node batches and
//! participates in backward passes. Curvatures are tape nodes, so gradients
//! flow into curvature pre-images.
//!
//! [`Geometry`] carries the kernel selection: [`GeometryKind::Ball`] is the
//! hyperbolic model, [`GeometryKind::Euclidean`] swaps every kernel for its
//! flat counterpart (exp/log = identity, Möbius addition = vector addition,
//! distance = Euclidean) while leaving all surrounding code identical. Each
//! call increments a per-kernel counter so tests can audit that variant runs
//! differ in geometry kernels only.

use std::cell::Cell;

use crate::autodiff::{NodeId, Tape};
use crate::manifold::{BALL_EPS, NORM_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryKind {
    Ball,
    Euclidean,
}

/// Invocation counts per kernel since construction or the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GeometryCounters {
    pub expmap0: u64,
    pub logmap0: u64,
    pub mobius_add: u64,
    pub matvec: u64,
    pub project: u64,
    pub distance: u64,
}

#[derive(Debug)]
pub struct Geometry {
    pub kind: GeometryKind,
    expmap0: Cell<u64>,
    logmap0: Cell<u64>,
    mobius_add: Cell<u64>,
    matvec: Cell<u64>,
    project: Cell<u64>,
    distance: Cell<u64>,
}

impl Geometry {
    pub fn new(kind: GeometryKind) -> Self {
        Geometry {
            kind,
            expmap0: Cell::new(0),
            logmap0: Cell::new(0),
            mobius_add: Cell::new(0),
            matvec: Cell::new(0),
            project: Cell::new(0),
            distance: Cell::new(0),
        }
    }

    pub fn ball() -> Self {
        Self::new(GeometryKind::Ball)
    }

    pub fn euclidean() -> Self {
        Self::new(GeometryKind::Euclidean)
    }

    pub fn counters(&self) -> GeometryCounters {
        GeometryCounters {
            expmap0: self.expmap0.get(),
            logmap0: self.logmap0.get(),
            mobius_add: self.mobius_add.get(),
            matvec: self.matvec.get(),
            project: self.project.get(),
            distance: self.distance.get(),
        }
    }

    pub fn reset_counters(&self) {
        self.expmap0.set(0);
        self.logmap0.set(0);
        self.mobius_add.set(0);
        self.matvec.set(0);
        self.project.set(0);
        self.distance.set(0);
    }

    fn bump(cell: &Cell<u64>) {
        cell.set(cell.get() + 1);
    }

    /// Floored row norms of `x`: `(n,1)`.
    fn row_norm(&self, t: &mut Tape, x: NodeId) -> NodeId {
        let n = t.row_norm(x);
        t.clamp_min(n, NORM_FLOOR)
    }

    /// Rescale rows that left the ball back to norm `(1-eps)/sqrt(c)`.
    pub fn project(&self, t: &mut Tape, x: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.project);
        self.project_impl(t, x, c)
    }

    fn project_impl(&self, t: &mut Tape, x: NodeId, c: NodeId) -> NodeId {
        if self.kind == GeometryKind::Euclidean {
            return x;
        }
        let sqrt_c = t.sqrt(c);
        let margin = t.scalar(1.0 - BALL_EPS);
        let max_norm = t.div(margin, sqrt_c); // (1,1)
        let norms = self.row_norm(t, x); // (n,1)
        let ratio = t.div(max_norm, norms);
        let scale = t.clamp(ratio, 0.0, 1.0);
        t.mul(x, scale)
    }

    /// `exp_o^c` applied row-wise; zero rows map to the origin.
    pub fn expmap0(&self, t: &mut Tape, v: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.expmap0);
        self.expmap0_impl(t, v, c)
    }

    fn expmap0_impl(&self, t: &mut Tape, v: NodeId, c: NodeId) -> NodeId {
        if self.kind == GeometryKind::Euclidean {
            return v;
        }
        let sqrt_c = t.sqrt(c);
        let norms = self.row_norm(t, v); // (n,1)
        let z = t.mul(norms, sqrt_c); // sqrt(c)*||v||
        let th = t.tanh(z);
        let scale = t.div(th, z); // tanh(z)/z -> 1 as z->0
        let scaled = t.mul(v, scale);
        self.project_impl(t, scaled, c)
    }

    /// `log_o^c` applied row-wise; origin rows map to zero.
    pub fn logmap0(&self, t: &mut Tape, y: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.logmap0);
        self.logmap0_impl(t, y, c)
    }

    fn logmap0_impl(&self, t: &mut Tape, y: NodeId, c: NodeId) -> NodeId {
        if self.kind == GeometryKind::Euclidean {
            return y;
        }
        let sqrt_c = t.sqrt(c);
        let norms = self.row_norm(t, y);
        let z = t.mul(norms, sqrt_c);
        let at = t.artanh(z);
        let scale = t.div(at, z); // artanh(z)/z -> 1 as z->0
        t.mul(y, scale)
    }

    /// Row-wise Möbius addition `x ⊕_c y`.
    pub fn mobius_add(&self, t: &mut Tape, x: NodeId, y: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.mobius_add);
        self.mobius_add_impl(t, x, y, c)
    }

    fn mobius_add_impl(&self, t: &mut Tape, x: NodeId, y: NodeId, c: NodeId) -> NodeId {
        if self.kind == GeometryKind::Euclidean {
            return t.add(x, y);
        }
        let x2 = t.row_dot(x, x);
        let y2 = t.row_dot(y, y);
        let xy = t.row_dot(x, y);
        let c_xy = t.mul(c, xy);
        let two_c_xy = t.affine(c_xy, 2.0, 0.0);
        let c_y2 = t.mul(c, y2);
        let c_x2 = t.mul(c, x2);

        // coefficient on x: 1 + 2c<x,y> + c||y||^2
        let ax0 = t.affine(two_c_xy, 1.0, 1.0);
        let ax = t.add(ax0, c_y2);
        // coefficient on y: 1 - c||x||^2
        let ay = t.affine(c_x2, -1.0, 1.0);
        // denominator: 1 + 2c<x,y> + c^2||x||^2||y||^2
        let x2y2 = t.mul(c_x2, c_y2);
        let den0 = t.affine(two_c_xy, 1.0, 1.0);
        let den = t.add(den0, x2y2);

        let xs = t.mul(x, ax);
        let ys = t.mul(y, ay);
        let num = t.add(xs, ys);
        let out = t.div(num, den);
        self.project_impl(t, out, c)
    }

    /// `W ⊗_c X = exp_o(log_o(X) · W)` with `X: (n,din)`, `w: (din,dout)`.
    pub fn matvec(&self, t: &mut Tape, x: NodeId, w: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.matvec);
        if self.kind == GeometryKind::Euclidean {
            return t.matmul(x, w);
        }
        let v = self.logmap0_impl(t, x, c);
        let mv = t.matmul(v, w);
        self.expmap0_impl(t, mv, c)
    }

    /// Row-wise geodesic distance between paired rows of `x` and `y`: `(n,1)`.
    pub fn distance(&self, t: &mut Tape, x: NodeId, y: NodeId, c: NodeId) -> NodeId {
        Self::bump(&self.distance);
        if self.kind == GeometryKind::Euclidean {
            let d = t.sub(x, y);
            return self.row_norm(t, d);
        }
        let neg_x = t.neg(x);
        let diff = self.mobius_add_impl(t, neg_x, y, c);
        let sqrt_c = t.sqrt(c);
        let norms = self.row_norm(t, diff);
        let z = t.mul(norms, sqrt_c);
        let at = t.artanh(z);
        let two = t.scalar(2.0);
        let coef = t.div(two, sqrt_c);
        t.mul(at, coef)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{max_rel_error, rel_error};
    use crate::manifold::{
        self, exp_map_origin, log_map_origin, mobius_add, poincare_distance, BallPoint,
        TangentVector,
    };
    use ndarray::{arr2, Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows_to_points(m: &Array2<f64>, c: f64) -> Vec<BallPoint> {
        m.outer_iter()
            .map(|r| BallPoint::new(r.to_owned(), c).unwrap())
            .collect()
    }

    fn random_in_ball(rng: &mut ChaCha8Rng, n: usize, d: usize, c: f64, frac: f64) -> Array2<f64> {
        let mut m = Array2::zeros((n, d));
        for mut row in m.outer_iter_mut() {
            let raw: Array1<f64> = Array1::from_iter((0..d).map(|_| rng.gen_range(-1.0..1.0)));
            let target = rng.gen_range(0.01..frac) / c.sqrt();
            let norm = raw.dot(&raw).sqrt().max(1e-12);
            row.assign(&(raw * (target / norm)));
        }
        m
    }

    #[test]
    fn matches_scalar_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = 1.4;
        let geo = Geometry::ball();
        let x = random_in_ball(&mut rng, 8, 5, c, 0.8);
        let y = random_in_ball(&mut rng, 8, 5, c, 0.8);

        let mut t = Tape::new();
        let cx = t.scalar(c);
        let xn = t.constant(x.clone());
        let yn = t.constant(y.clone());
        let sum = geo.mobius_add(&mut t, xn, yn, cx);
        let lg = geo.logmap0(&mut t, xn, cx);
        let back = geo.expmap0(&mut t, lg, cx);
        let dist = geo.distance(&mut t, xn, yn, cx);

        let xp = rows_to_points(&x, c);
        let yp = rows_to_points(&y, c);
        for i in 0..8 {
            let expect = mobius_add(&xp[i], &yp[i], c).unwrap();
            for j in 0..5 {
                assert!((t.value(sum)[(i, j)] - expect.coords()[j]).abs() < 1e-10);
            }
            let v = log_map_origin(&xp[i], c).unwrap();
            for j in 0..5 {
                assert!((t.value(lg)[(i, j)] - v.coords[j]).abs() < 1e-10);
                assert!((t.value(back)[(i, j)] - xp[i].coords()[j]).abs() < 1e-9);
            }
            let d = poincare_distance(&xp[i], &yp[i], c).unwrap();
            assert!((t.value(dist)[(i, 0)] - d).abs() < 1e-10);
        }
    }

    #[test]
    fn expmap_matches_manifold_and_projects() {
        let c = 0.7;
        let geo = Geometry::ball();
        let mut t = Tape::new();
        let cx = t.scalar(c);
        // a long tangent vector still lands strictly inside the ball
        let v = arr2(&[[3.0, -4.0], [0.0, 0.0]]);
        let vn = t.constant(v.clone());
        let p = geo.expmap0(&mut t, vn, cx);
        let oracle = exp_map_origin(
            &TangentVector {
                coords: v.row(0).to_owned(),
            },
            c,
        )
        .unwrap();
        for j in 0..2 {
            assert!((t.value(p)[(0, j)] - oracle.coords()[j]).abs() < 1e-10);
            assert_eq!(t.value(p)[(1, j)], 0.0);
        }
        let norm = t.value(p).row(0).dot(&t.value(p).row(0)).sqrt();
        assert!(c * norm * norm < 1.0);
    }

    #[test]
    fn euclidean_kind_is_flat() {
        let geo = Geometry::euclidean();
        let mut t = Tape::new();
        let c = t.scalar(1.0);
        let x = t.constant(arr2(&[[0.3, 0.4]]));
        let y = t.constant(arr2(&[[0.1, -0.2]]));
        let s = geo.mobius_add(&mut t, x, y, c);
        assert_eq!(t.value(s), &arr2(&[[0.4, 0.2]]));
        let e = geo.expmap0(&mut t, x, c);
        assert_eq!(t.value(e), t.value(x));
        let d = geo.distance(&mut t, x, y, c);
        let expect = (0.2f64 * 0.2 + 0.6 * 0.6).sqrt();
        assert!((t.value(d)[(0, 0)] - expect).abs() < 1e-12);
        assert_eq!(geo.counters().mobius_add, 1);
        assert_eq!(geo.counters().expmap0, 1);
        assert_eq!(geo.counters().distance, 1);
    }

    #[test]
    fn counters_identical_across_kinds() {
        let run = |geo: &Geometry| {
            let mut t = Tape::new();
            let c = t.scalar(1.0);
            let x = t.constant(arr2(&[[0.1, 0.2]]));
            let w = t.constant(arr2(&[[1.0, 0.0], [0.0, 1.0]]));
            let h = geo.matvec(&mut t, x, w, c);
            let s = geo.mobius_add(&mut t, h, x, c);
            let l = geo.logmap0(&mut t, s, c);
            let _ = geo.expmap0(&mut t, l, c);
            geo.counters()
        };
        let ball = Geometry::ball();
        let flat = Geometry::euclidean();
        assert_eq!(run(&ball), run(&flat));
    }

    #[test]
    fn gradients_pass_finite_differences() {
        // d/dx of a scalar functional of mobius_add / expmap0 / logmap0,
        // including gradient flow into the curvature.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let c0 = 1.2;
        let x0 = random_in_ball(&mut rng, 3, 4, c0, 0.6);
        let y0 = random_in_ball(&mut rng, 3, 4, c0, 0.6);

        let eval = |x: &Array2<f64>, y: &Array2<f64>, c: f64, which: usize| -> f64 {
            let geo = Geometry::ball();
            let mut t = Tape::new();
            let cn = t.leaf(arr2(&[[c]]));
            let xn = t.leaf(x.clone());
            let yn = t.leaf(y.clone());
            let out = match which {
                0 => geo.mobius_add(&mut t, xn, yn, cn),
                1 => {
                    let l = geo.logmap0(&mut t, xn, cn);
                    geo.expmap0(&mut t, l, cn)
                }
                _ => geo.distance(&mut t, xn, yn, cn),
            };
            let w = t.constant(Array2::from_shape_fn(t.value(out).dim(), |(i, j)| {
                ((i + 2 * j) as f64 * 0.37).sin()
            }));
            let p = t.mul(out, w);
            let s = t.sum_all(p);
            t.scalar_value(s)
        };

        for which in 0..3 {
            let geo = Geometry::ball();
            let mut t = Tape::new();
            let cn = t.leaf(arr2(&[[c0]]));
            let xn = t.leaf(x0.clone());
            let yn = t.leaf(y0.clone());
            let out = match which {
                0 => geo.mobius_add(&mut t, xn, yn, cn),
                1 => {
                    let l = geo.logmap0(&mut t, xn, cn);
                    geo.expmap0(&mut t, l, cn)
                }
                _ => geo.distance(&mut t, xn, yn, cn),
            };
            let w = t.constant(Array2::from_shape_fn(t.value(out).dim(), |(i, j)| {
                ((i + 2 * j) as f64 * 0.37).sin()
            }));
            let p = t.mul(out, w);
            let s = t.sum_all(p);
            let grads = t.backward(s);

            let gx = grads.get(xn).unwrap().clone();
            let mut fx = |x: &Array2<f64>| eval(x, &y0, c0, which);
            let worst = max_rel_error(&mut fx, &x0, &gx, 1e-6);
            assert!(worst <= 1e-4, "op {which}: x-grad fd error {worst}");

            let gc = grads.get(cn).unwrap()[(0, 0)];
            let num = (eval(&x0, &y0, c0 + 1e-6, which) - eval(&x0, &y0, c0 - 1e-6, which))
                / 2e-6;
            assert!(
                rel_error(gc, num) <= 1e-4,
                "op {which}: curvature grad {gc} vs fd {num}"
            );
        }
    }

    #[test]
    fn small_curvature_structural_ops_match_flat() {
        let geo = Geometry::ball();
        let mut t = Tape::new();
        let c = t.scalar(1e-9);
        let x = t.constant(arr2(&[[0.3, -0.7], [0.9, 0.2]]));
        let y = t.constant(arr2(&[[0.5, 0.5], [-0.1, 0.3]]));
        let s = geo.mobius_add(&mut t, x, y, c);
        let flat = t.value(x) + t.value(y);
        for (a, b) in t.value(s).iter().zip(flat.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        let l = geo.logmap0(&mut t, x, c);
        for (a, b) in t.value(l).iter().zip(t.value(x).iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn all_outputs_stay_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let geo = Geometry::ball();
        for _ in 0..50 {
            let c = rng.gen_range(0.5..2.0);
            let x = random_in_ball(&mut rng, 4, 3, c, 0.999);
            let y = random_in_ball(&mut rng, 4, 3, c, 0.999);
            let mut t = Tape::new();
            let cn = t.scalar(c);
            let xn = t.constant(x);
            let yn = t.constant(y);
            let s = geo.mobius_add(&mut t, xn, yn, cn);
            for row in t.value(s).outer_iter() {
                let sq = c * row.dot(&row);
                assert!(sq < 1.0, "left ball: {sq}");
            }
        }
        let _ = manifold::BALL_EPS;
    }
}

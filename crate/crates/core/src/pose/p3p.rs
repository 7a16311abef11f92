//! Perspective-three-point by Grunert's elimination.
//!
//! With unit bearings `f_i` and depths `s_i`, the three side lengths give
//! three quadratic constraints. Writing `s2 = u s1` and `s3 = v s1` and
//! eliminating `u` between two of them leaves a quartic in `v`; its
//! coefficients are assembled with small polynomial products instead of
//! being spelled out by hand.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{project, PinholeCamera, Se3Pose, CHEIRALITY_EPS};

/// Pose-level reprojection tolerance for accepting a solution, in pixels.
const ACCEPT_PX: f64 = 1e-6;

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64], scale_b: f64) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += scale_b * y;
    }
    out
}

fn poly_eval(p: &[f64], x: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
}

/// Safeguarded Newton inside a sign-change bracket.
fn bracketed_root(p: &[f64], dp: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let flo = poly_eval(p, lo);
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = poly_eval(p, x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == (flo < 0.0) {
            lo = x;
        } else {
            hi = x;
        }
        let d = poly_eval(dp, x);
        let newton = x - fx / d;
        let next = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= 1e-16 * (1.0 + x.abs()) || hi - lo <= 1e-16 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

/// Real roots of a polynomial given by ascending coefficients, in increasing
/// order. Roots of the derivative split the line into monotone pieces, each
/// holding at most one root.
pub(crate) fn real_roots(p: &[f64]) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut deg = p.len() - 1;
    while deg > 0 && p[deg].abs() <= 1e-14 * scale {
        deg -= 1;
    }
    let p = &p[..=deg];
    match deg {
        0 => return Vec::new(),
        1 => return vec![-p[0] / p[1]],
        _ => {}
    }
    let dp = poly_deriv(p);
    let bound = 1.0 + p[..deg].iter().map(|c| (c / p[deg]).abs()).fold(0.0, f64::max);
    let mut knots = vec![-bound];
    knots.extend(real_roots(&dp).into_iter().filter(|c| c.abs() < bound));
    knots.push(bound);
    let magnitude = |x: f64| p.iter().enumerate().map(|(i, c)| (c * x.powi(i as i32)).abs()).sum::<f64>();
    let mut roots: Vec<f64> = Vec::new();
    for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (poly_eval(p, a), poly_eval(p, b));
        if fa.abs() <= 1e-13 * magnitude(a) {
            // touching root at a critical point
            roots.push(a);
        } else if (fa < 0.0) != (fb < 0.0) && fb != 0.0 {
            roots.push(bracketed_root(p, &dp, a, b));
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    roots
}

/// Gauss-Newton on the three side-length equations.
fn polish_depths(s: &mut Vector3<f64>, cosines: &Vector3<f64>, sides_sq: &Vector3<f64>) {
    // pairs (j, k) opposite to side i, with cosine index i
    const PAIRS: [(usize, usize); 3] = [(1, 2), (0, 2), (0, 1)];
    for _ in 0..6 {
        let mut r = Vector3::zeros();
        let mut jac = Matrix3::zeros();
        for (i, &(j, k)) in PAIRS.iter().enumerate() {
            let c = cosines[i];
            r[i] = s[j] * s[j] + s[k] * s[k] - 2.0 * c * s[j] * s[k] - sides_sq[i];
            jac[(i, j)] = 2.0 * s[j] - 2.0 * c * s[k];
            jac[(i, k)] = 2.0 * s[k] - 2.0 * c * s[j];
        }
        match jac.lu().solve(&r) {
            Some(step) if step.iter().all(|v| v.is_finite()) => {
                *s -= step;
                if step.norm() <= 1e-15 * s.norm() {
                    break;
                }
            }
            _ => break,
        }
    }
}

/// Rigid transform (world to camera) aligning three world points with three
/// camera-frame points.
fn align_triangles(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let frame = |p: &[Vector3<f64>; 3]| -> Option<Matrix3<f64>> {
        let e1 = (p[1] - p[0]).try_normalize(1e-300)?;
        let e3 = e1.cross(&(p[2] - p[0])).try_normalize(1e-300)?;
        let e2 = e3.cross(&e1);
        Some(Matrix3::from_columns(&[e1, e2, e3]))
    };
    let r = frame(cam)? * frame(world)?.transpose();
    let cw = (world[0] + world[1] + world[2]) / 3.0;
    let cc = (cam[0] + cam[1] + cam[2]) / 3.0;
    Some((r, cc - r * cw))
}

pub(crate) fn is_collinear(points: &[Vector3<f64>; 3]) -> bool {
    let a = points[1] - points[0];
    let b = points[2] - points[0];
    let scale = a.norm_squared().max(b.norm_squared()).max((points[2] - points[1]).norm_squared());
    scale == 0.0 || 0.5 * a.cross(&b).norm() < 1e-9 * scale
}

/// All camera-to-world poses that place the three points in front of the
/// camera and reproject them onto the three pixels.
pub fn p3p_solve(pixels: &[Vector2<f64>; 3], points: &[Vector3<f64>; 3], camera: &PinholeCamera) -> Vec<Se3Pose> {
    if is_collinear(points) {
        return Vec::new();
    }
    for i in 0..3 {
        for j in i + 1..3 {
            if (pixels[i] - pixels[j]).norm() < 1e-9 {
                return Vec::new();
            }
        }
    }
    let f: Vec<Vector3<f64>> = pixels.iter().map(|px| camera.unproject_ray(px).normalize()).collect();
    // side i is opposite point i; cosine i is the angle between the other two rays
    let cos_a = f[1].dot(&f[2]);
    let cos_b = f[0].dot(&f[2]);
    let cos_g = f[0].dot(&f[1]);
    let a2 = (points[1] - points[2]).norm_squared();
    let b2 = (points[0] - points[2]).norm_squared();
    let c2 = (points[0] - points[1]).norm_squared();
    let k1 = a2 / b2;
    let k2 = c2 / b2;

    // u^2 + B u + C = 0 and u^2 + E u + F = 0, coefficients polynomial in v
    let b_poly = [0.0, -2.0 * cos_a];
    let e_poly = [-2.0 * cos_g];
    let c_poly = [-k1, 2.0 * k1 * cos_b, 1.0 - k1];
    let f_poly = [1.0 - k2, 2.0 * k2 * cos_b, -k2];
    let cf = poly_add(&c_poly, &f_poly, -1.0);
    let be = poly_add(&b_poly, &e_poly, -1.0);
    // (C - F)^2 - B (C - F)(B - E) + C (B - E)^2 = 0
    let quartic = poly_add(
        &poly_add(&poly_mul(&cf, &cf), &poly_mul(&poly_mul(&b_poly, &cf), &be), -1.0),
        &poly_mul(&c_poly, &poly_mul(&be, &be)),
        1.0,
    );

    let cosines = Vector3::new(cos_a, cos_b, cos_g);
    let sides = Vector3::new(a2, b2, c2);
    let mut out: Vec<Se3Pose> = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let denom = poly_eval(&be, v);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = -poly_eval(&cf, v) / denom;
        let s1_sq = b2 / (1.0 + v * v - 2.0 * v * cos_b);
        if u <= 0.0 || !(s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let mut s = Vector3::new(s1, u * s1, v * s1);
        polish_depths(&mut s, &cosines, &sides);
        if s.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            continue;
        }
        let cam_pts = [f[0] * s[0], f[1] * s[1], f[2] * s[2]];
        if cam_pts.iter().any(|p| p.z <= CHEIRALITY_EPS) {
            continue;
        }
        let Some((r, t)) = align_triangles(points, &cam_pts) else {
            continue;
        };
        let pose = Se3Pose::from_rotation_matrix(&r.transpose(), -(r.transpose() * t));
        let ok = points.iter().zip(pixels).all(|(p, px)| {
            project(&pose, camera, p).is_some_and(|q| (q - px).norm() <= ACCEPT_PX)
        });
        let duplicate = out.iter().any(|o| {
            (o.translation() - pose.translation()).norm() <= 1e-9 * (1.0 + pose.translation().norm())
                && o.rotation().angle_to(pose.rotation()) <= 1e-9
        });
        if ok && !duplicate {
            out.push(pose);
        }
    }
    out
}

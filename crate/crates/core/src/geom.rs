//! Small vector and torus helpers used throughout.
//!
//! Points on the torus 𝕋ⁿ are stored as `Vec<f64>` with coordinates taken
//! mod 1; ambient vectors are plain `Vec<f64>`.

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Max-norm.
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// a + s*b
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Fractional part in [0, 1).
pub fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Wrap every coordinate into [0, 1).
pub fn wrap(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| frac(v)).collect()
}

/// Signed distance of `x` to the nearest integer, in (-1/2, 1/2].
pub fn to_nearest_int(x: f64) -> f64 {
    x - x.round()
}

/// Distance to the nearest integer (the ‖·‖_ℤ of the Dirichlet theorem).
pub fn dist_to_int(x: f64) -> f64 {
    to_nearest_int(x).abs()
}

/// Torus distance between two points of 𝕋ⁿ (Euclidean on the flat torus).
pub fn torus_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| to_nearest_int(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Componentwise torus distance in the max-norm.
pub fn torus_dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| dist_to_int(x - y))
        .fold(0.0, f64::max)
}

/// Shortest representative of a - b on the torus, coordinates in (-1/2, 1/2].
pub fn torus_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| to_nearest_int(x - y)).collect()
}

/// Distance from a point to a segment [p, q] in ℝⁿ.
pub fn dist_point_segment(x: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let d = sub(q, p);
    let dd = dot(&d, &d);
    if dd == 0.0 {
        return norm(&sub(x, p));
    }
    let t = (dot(&sub(x, p), &d) / dd).clamp(0.0, 1.0);
    norm(&sub(x, &axpy(p, t, &d)))
}

/// Distance from a point to a polyline given by its vertex list.
pub fn dist_point_polyline(x: &[f64], verts: &[Vec<f64>]) -> f64 {
    verts
        .windows(2)
        .map(|w| dist_point_segment(x, &w[0], &w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_metric_wraps() {
        assert!((torus_dist(&[0.95], &[0.05]) - 0.1).abs() < 1e-14);
        assert!((torus_dist_inf(&[0.95, 0.4], &[0.05, 0.6]) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn segment_distance() {
        let d = dist_point_segment(&[0.0, 1.0], &[-1.0, 0.0], &[1.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-14);
        let d = dist_point_segment(&[2.0, 1.0], &[-1.0, 0.0], &[1.0, 0.0]);
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn fd_gradient_quadratic() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = fd_gradient(f, &[2.0, 0.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}

//! Plane quadrics and point/triangle geometry used by decimation and
//! barycentric up-sampling.

/// Symmetric 4x4 error quadric stored as its 10 unique coefficients.
///
/// Accumulates squared point-to-plane distances; evaluating at a point gives
/// `v^T Q v` with `v = [x, y, z, 1]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quadric {
    // | a b c d |
    // | b e f g |
    // | c f h i |
    // | d g i j |
    q: [f64; 10],
}

impl Quadric {
    pub fn zero() -> Self {
        Quadric::default()
    }

    /// Quadric of the normalized plane `ax + by + cz + d = 0`.
    pub fn from_plane(a: f64, b: f64, c: f64, d: f64) -> Self {
        Quadric {
            q: [
                a * a,
                a * b,
                a * c,
                a * d,
                b * b,
                b * c,
                b * d,
                c * c,
                c * d,
                d * d,
            ],
        }
    }

    /// Quadric of the supporting plane of a triangle; zero area gives the
    /// zero quadric.
    pub fn from_triangle(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3]) -> Self {
        let e1 = sub(p1, p0);
        let e2 = sub(p2, p0);
        let n = cross(e1, e2);
        let len = norm(n);
        if len < 1e-12 {
            return Quadric::zero();
        }
        let n = [n[0] / len, n[1] / len, n[2] / len];
        let d = -dot(n, p0);
        Quadric::from_plane(n[0], n[1], n[2], d)
    }

    pub fn add(&self, other: &Quadric) -> Quadric {
        let mut q = self.q;
        for (a, b) in q.iter_mut().zip(&other.q) {
            *a += b;
        }
        Quadric { q }
    }

    pub fn evaluate(&self, p: [f64; 3]) -> f64 {
        let [x, y, z] = p;
        let q = &self.q;
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimizer of the quadric, from the 3x3 system `A v = -b`. Returns
    /// `None` when |det| < 1e-12 (caller falls back to the edge midpoint).
    pub fn minimizer(&self) -> Option<[f64; 3]> {
        let q = &self.q;
        let a = [[q[0], q[1], q[2]], [q[1], q[4], q[5]], [q[2], q[5], q[7]]];
        let b = [-q[3], -q[6], -q[8]];
        solve3(a, b)
    }
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let inv_det = 1.0 / det;
    let x = [
        b[0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (b[1] * a[2][2] - a[1][2] * b[2])
            + a[0][2] * (b[1] * a[2][1] - a[1][1] * b[2]),
        a[0][0] * (b[1] * a[2][2] - a[1][2] * b[2])
            - b[0] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * b[2] - b[1] * a[2][0]),
        a[0][0] * (a[1][1] * b[2] - b[1] * a[2][1])
            - a[0][1] * (a[1][0] * b[2] - b[1] * a[2][0])
            + b[0] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]),
    ];
    Some([x[0] * inv_det, x[1] * inv_det, x[2] * inv_det])
}

/// Closest point of a triangle to `p`, returned as barycentric coordinates
/// (w0, w1, w2) plus the squared distance. The weights are nonnegative and
/// sum to one by construction.
pub fn closest_point_barycentric(
    p: [f64; 3],
    a: [f64; 3],
    b: [f64; 3],
    c: [f64; 3],
) -> ([f64; 3], f64) {
    // Region classification after Ericson, "Real-Time Collision Detection".
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return finish(p, a, [1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return finish(p, b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return finish(p, lerp(a, b, v), [1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return finish(p, c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return finish(p, lerp(a, c, w), [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return finish(p, lerp(b, c, w), [0.0, 1.0 - w, w]);
    }
    let denom = va + vb + vc;
    if denom.abs() < 1e-300 {
        // Degenerate triangle: treat as vertex a.
        return finish(p, a, [1.0, 0.0, 0.0]);
    }
    let v = vb / denom;
    let w = vc / denom;
    let point = [
        a[0] + ab[0] * v + ac[0] * w,
        a[1] + ab[1] * v + ac[1] * w,
        a[2] + ab[2] * v + ac[2] * w,
    ];
    finish(p, point, [1.0 - v - w, v, w])
}

fn finish(p: [f64; 3], q: [f64; 3], bary: [f64; 3]) -> ([f64; 3], f64) {
    let total: f64 = bary.iter().sum();
    let clamped = [
        (bary[0] / total).max(0.0),
        (bary[1] / total).max(0.0),
        (bary[2] / total).max(0.0),
    ];
    let s: f64 = clamped.iter().sum();
    let bary = [clamped[0] / s, clamped[1] / s, clamped[2] / s];
    let d = sub(p, q);
    (bary, dot(d, d))
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

//! Small dense-vector kernels shared across the crate.
//!
//! Scores are accumulated in `f64` even though vectors are stored as `f32`.

/// Dot product of two equal-length `f32` slices, accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dot product of an `f32` vector with an `f64` vector.
#[inline]
pub fn dot_mixed(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Squared euclidean distance between an `f32` point and an `f64` center.
#[inline]
pub fn squared_distance(x: &[f32], c: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), c.len());
    let mut acc = [0.0f64; 4];
    let cx = x.chunks_exact(4);
    let cc = c.chunks_exact(4);
    let (rx, rc) = (cx.remainder(), cc.remainder());
    for (p, q) in cx.zip(cc) {
        for l in 0..4 {
            let d = p[l] as f64 - q[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (p, q) in rx.iter().zip(rc) {
        let d = *p as f64 - *q;
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Scales `v` to unit L2 norm in place. Zero vectors are left untouched.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

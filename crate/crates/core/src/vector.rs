//! Small dense-vector helpers shared by the numeric modules.

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub fn norm_f64(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}

/// Cosine similarity computed in double precision. Zero vectors have
/// similarity 0 with everything.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = norm_f64(a);
    let nb = norm_f64(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot_f64(a, b) / (na * nb)
}

#[inline]
pub fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn mean_rows<'a>(rows: impl IntoIterator<Item = &'a [f32]>, dim: usize) -> Option<Vec<f32>> {
    let mut acc = vec![0f64; dim];
    let mut n = 0usize;
    for r in rows {
        for (a, &x) in acc.iter_mut().zip(r) {
            *a += x as f64;
        }
        n += 1;
    }
    (n > 0).then(|| acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

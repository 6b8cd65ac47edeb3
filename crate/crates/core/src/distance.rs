/// Squared L2 distance with eight independent partial sums.
///
/// The summation order is fixed, so identical inputs always produce
/// bit-identical outputs regardless of the caller.
#[inline]
pub(crate) fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let x = &a[c * 8..c * 8 + 8];
        let y = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        let d = a[i] - b[i];
        tail += d * d;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Index of the nearest row in a row-major `rows × dim` table, lowest index on ties.
pub(crate) fn nearest_row(table: &[f32], dim: usize, v: &[f32]) -> (usize, f32) {
    let mut best = 0usize;
    let mut best_d = f32::INFINITY;
    for (j, row) in table.chunks_exact(dim).enumerate() {
        let d = l2_sq(row, v);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_matches_naive_sum() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.5).collect();
        let b: Vec<f32> = (0..19).map(|i| (i as f32).sin()).collect();
        let naive: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((*x - *y) as f64).powi(2))
            .sum();
        assert!((l2_sq(&a, &b) as f64 - naive).abs() / naive < 1e-6);
    }

    #[test]
    fn nearest_row_prefers_lowest_index() {
        let table = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(nearest_row(&table, 2, &[0.0, 0.0]).0, 1);
    }
}

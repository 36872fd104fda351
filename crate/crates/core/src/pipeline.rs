//! Numeric encoding, min-max normalization, sliding windows and minibatches.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::seed::rng;
use crate::{Error, Result};

/// Row-major `rows × cols` matrix of finite values with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl NumericMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: rows * cols,
                found: data.len(),
                what: "matrix data",
            });
        }
        if names.len() != cols {
            return Err(Error::Shape {
                expected: cols,
                found: names.len(),
                what: "column names",
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix"));
        }
        Ok(NumericMatrix { rows, cols, data, names })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Rows `[start, end)` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> NumericMatrix {
        NumericMatrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
            names: self.names.clone(),
        }
    }
}

/// Per-column `(min, max)` fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    pub fn fit(m: &NumericMatrix) -> Result<Self> {
        if m.rows == 0 || m.cols == 0 {
            return Err(Error::Empty("matrix"));
        }
        let mut min = m.row(0).to_vec();
        let mut max = min.clone();
        for r in 1..m.rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        Ok(NormStats { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Scales every column by the fitted range; constant columns map to 0.
    /// Values outside the fitted range are not clipped.
    pub fn apply(&self, m: &NumericMatrix) -> Result<NumericMatrix> {
        if m.cols != self.width() {
            return Err(Error::Shape {
                expected: self.width(),
                found: m.cols,
                what: "normalization width",
            });
        }
        let mut data = m.data.clone();
        for row in data.chunks_exact_mut(m.cols) {
            for ((v, &lo), &hi) in row.iter_mut().zip(&self.min).zip(&self.max) {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { 0.0 };
            }
        }
        NumericMatrix::new(m.rows, m.cols, data, m.names.clone())
    }

    /// Inverse of [`NormStats::apply`] for non-constant columns; constant
    /// columns come back as their fitted value.
    pub fn invert(&self, m: &NumericMatrix) -> Result<NumericMatrix> {
        let mut data = m.data.clone();
        for row in data.chunks_exact_mut(m.cols) {
            for ((v, &lo), &hi) in row.iter_mut().zip(&self.min).zip(&self.max) {
                *v = if hi > lo { lo + *v * (hi - lo) } else { lo };
            }
        }
        NumericMatrix::new(m.rows, m.cols, data, m.names.clone())
    }
}

/// Min-max scales `m` to [0, 1] per column.
pub fn normalize(m: &NumericMatrix) -> Result<(NumericMatrix, NormStats)> {
    let stats = NormStats::fit(m)?;
    Ok((stats.apply(m)?, stats))
}

/// Fixed-length windows `X` with one binary target per window.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    window: usize,
    width: usize,
    /// Windows back to back, each `window × width` row-major.
    data: Vec<f64>,
    targets: Vec<u8>,
}

impl SequenceSet {
    pub fn new(window: usize, width: usize, data: Vec<f64>, targets: Vec<u8>) -> Result<Self> {
        if data.len() != targets.len() * window * width {
            return Err(Error::Shape {
                expected: targets.len() * window * width,
                found: data.len(),
                what: "sequence data",
            });
        }
        Ok(SequenceSet {
            window,
            width,
            data,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Steps per window (`T`).
    pub fn window_len(&self) -> usize {
        self.window
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Window `i` as `T` rows of `width` values.
    pub fn window(&self, i: usize) -> &[f64] {
        let size = self.window * self.width;
        &self.data[i * size..(i + 1) * size]
    }

    pub fn target(&self, i: usize) -> u8 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }

    /// Concatenates sets of the same shape.
    pub fn concat<'a>(sets: impl IntoIterator<Item = &'a SequenceSet>) -> Option<SequenceSet> {
        let mut iter = sets.into_iter();
        let first = iter.next()?.clone();
        Some(iter.fold(first, |mut acc, s| {
            assert_eq!((acc.window, acc.width), (s.window, s.width), "sequence shapes differ");
            acc.data.extend_from_slice(&s.data);
            acc.targets.extend_from_slice(&s.targets);
            acc
        }))
    }
}

/// Slides a window of `window` rows over `m` with the given stride. Each
/// window's target is the label of its last row.
pub fn make_sequences(m: &NumericMatrix, labels: &[u8], window: usize, stride: usize) -> Result<SequenceSet> {
    if window == 0 || stride == 0 {
        return Err(Error::validation("window", "window length and stride must be at least 1"));
    }
    if labels.len() != m.rows {
        return Err(Error::Shape {
            expected: m.rows,
            found: labels.len(),
            what: "labels",
        });
    }
    let count = if m.rows >= window { (m.rows - window) / stride + 1 } else { 0 };
    let mut data = Vec::with_capacity(count * window * m.cols);
    let mut targets = Vec::with_capacity(count);
    for i in (0..count).map(|k| k * stride) {
        data.extend_from_slice(&m.data[i * m.cols..(i + window) * m.cols]);
        targets.push(labels[i + window - 1]);
    }
    SequenceSet::new(window, m.cols, data, targets)
}

/// Indices into a [`SequenceSet`], at most `J` of them.
pub type Batch = Vec<usize>;

/// Shuffles window indices with `epoch_seed` and cuts them into chunks of
/// `batch_size`; only the last chunk may be shorter.
pub fn split_batches(set: &SequenceSet, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::validation("training.minibatch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut rng(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn column(values: &[f64]) -> NumericMatrix {
        NumericMatrix::new(values.len(), 1, values.to_vec(), names(1)).unwrap()
    }

    #[test]
    fn min_max_column() {
        let (m, stats) = normalize(&column(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(m.data(), &[0.0, 0.5, 1.0]);
        assert_eq!(stats.min, [1.0]);
        assert_eq!(stats.max, [3.0]);
    }

    #[test]
    fn constant_column_is_zero() {
        let (m, _) = normalize(&column(&[7.0, 7.0, 7.0])).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn empty_and_non_finite_rejected() {
        let empty = NumericMatrix::new(0, 2, vec![], names(2)).unwrap();
        assert_eq!(normalize(&empty).unwrap_err(), Error::Empty("matrix"));
        assert_eq!(
            NumericMatrix::new(1, 1, vec![f64::NAN], names(1)).unwrap_err(),
            Error::NonFinite("matrix")
        );
    }

    #[test]
    fn random_matrices_span_unit_interval() {
        for seed in 0..20 {
            let mut r = rng(seed);
            let data: Vec<f64> = (0..500).map(|_| r.random_range(-1e3..1e3)).collect();
            let m = NumericMatrix::new(100, 5, data, names(5)).unwrap();
            let (n, _) = normalize(&m).unwrap();
            assert!(n.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for c in 0..5 {
                let col: Vec<f64> = (0..100).map(|r| n.get(r, c)).collect();
                assert!(col.contains(&0.0) && col.contains(&1.0));
            }
        }
    }

    #[test]
    fn ten_rows_window_four() {
        let m = NumericMatrix::new(10, 2, (0..20).map(f64::from).collect(), names(2)).unwrap();
        let labels: Vec<u8> = (0..10).map(|i| (i % 3 == 0) as u8).collect();
        let s = make_sequences(&m, &labels, 4, 1).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s.window(0), &m.data()[..8]);
        assert_eq!(s.window(6), &m.data()[12..]);
        assert_eq!(s.target(0), labels[3]);
        assert_eq!(s.target(6), labels[9]);

        let strided = make_sequences(&m, &labels, 4, 3).unwrap();
        assert_eq!(strided.len(), 3);
    }

    #[test]
    fn short_input_gives_no_windows() {
        let m = column(&[1.0, 2.0, 3.0]);
        assert!(make_sequences(&m, &[0, 0, 1], 4, 1).unwrap().is_empty());
    }

    #[test]
    fn batch_sizes() {
        let m = column(&[0.0; 10]);
        let s = make_sequences(&m, &[0; 10], 4, 1).unwrap();
        let sizes: Vec<usize> = split_batches(&s, 3, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, [3, 3, 1]);
        assert_eq!(split_batches(&s, 100, 1).unwrap().len(), 1);
        assert_eq!(split_batches(&s, 3, 9).unwrap(), split_batches(&s, 3, 9).unwrap());
        assert!(split_batches(&s, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trips(rows in 2usize..20, cols in 1usize..5, seed in any::<u64>()) {
            let mut r = rng(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1e4..1e4)).collect();
            let m = NumericMatrix::new(rows, cols, data, names(cols)).unwrap();
            let (n, stats) = normalize(&m).unwrap();
            let back = stats.invert(&n).unwrap();
            for (a, b) in m.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn windows_cover_every_row(rows in 1usize..40, window in 1usize..6, stride_off in 0usize..6) {
            let stride = 1 + stride_off % window;
            let m = NumericMatrix::new(rows, 1, (0..rows).map(|i| i as f64).collect(), names(1)).unwrap();
            let s = make_sequences(&m, &vec![0; rows], window, stride).unwrap();
            let expected = if rows >= window { (rows - window) / stride + 1 } else { 0 };
            prop_assert_eq!(s.len(), expected);
            if rows >= window {
                // Rows past the last full stride are not covered; all others are.
                let last = (s.len() - 1) * stride + window;
                let mut seen = vec![false; rows];
                for i in 0..s.len() {
                    for v in s.window(i) {
                        seen[*v as usize] = true;
                    }
                }
                prop_assert!(seen[..last].iter().all(|&x| x));
            }
        }

        #[test]
        fn batches_partition(len in 0usize..60, batch in 1usize..10, seed in any::<u64>()) {
            let m = NumericMatrix::new(len + 1, 1, vec![0.0; len + 1], names(1)).unwrap();
            let s = make_sequences(&m, &vec![0; len + 1], 2, 1).unwrap();
            let batches = split_batches(&s, batch, seed).unwrap();
            let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..s.len()).collect::<Vec<_>>());
            for b in batches.iter().rev().skip(1) {
                prop_assert_eq!(b.len(), batch);
            }
        }
    }
}

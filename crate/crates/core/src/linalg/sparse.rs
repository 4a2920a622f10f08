use std::sync::Arc;

/// Structurally symmetric compressed-row pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityPattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    /// `transpose[k]` is the position of entry `(j, i)` when entry `k` is `(i, j)`.
    transpose: Vec<u32>,
}

impl SparsityPattern {
    /// Builds the pattern from per-row column lists. Rows are sorted and
    /// deduplicated, then the pattern is symmetrized and every diagonal entry
    /// is made present.
    pub fn from_rows(n: usize, mut rows: Vec<Vec<u32>>) -> Self {
        assert_eq!(rows.len(), n);
        for (i, row) in rows.iter_mut().enumerate() {
            row.push(i as u32);
            row.sort_unstable();
            row.dedup();
        }
        let mut missing: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, row) in rows.iter().enumerate() {
            for &j in row {
                let j = j as usize;
                if j != i && rows[j].binary_search(&(i as u32)).is_err() {
                    missing[j].push(i as u32);
                }
            }
        }
        for (row, extra) in rows.iter_mut().zip(missing) {
            if !extra.is_empty() {
                row.extend(extra);
                row.sort_unstable();
                row.dedup();
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        for row in rows {
            col_idx.extend_from_slice(&row);
            row_ptr.push(col_idx.len());
        }
        let transpose = transpose_map(n, &row_ptr, &col_idx);
        Self { n, row_ptr, col_idx, transpose }
    }

    pub fn dense(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|_| (0..n as u32).collect()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[u32] {
        &self.col_idx
    }

    pub fn transpose_map(&self) -> &[u32] {
        &self.transpose
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Position of entry `(i, j)` in the value array.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_ptr[i];
        self.row(i).binary_search(&(j as u32)).ok().map(|k| start + k)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.find(i, j).is_some()
    }
}

fn transpose_map(n: usize, row_ptr: &[usize], col_idx: &[u32]) -> Vec<u32> {
    let mut cursor: Vec<usize> = row_ptr[..n].to_vec();
    let mut t = vec![0u32; col_idx.len()];
    for i in 0..n {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = col_idx[k] as usize;
            let pos = cursor[j];
            debug_assert_eq!(col_idx[pos] as usize, i);
            t[k] = pos as u32;
            cursor[j] += 1;
        }
    }
    t
}

/// Square compressed-row matrix over a shared [`SparsityPattern`].
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let rows = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.iter()
                    .enumerate()
                    .filter(|&(j, &v)| v != 0.0 || i == j)
                    .map(|(j, _)| j as u32)
                    .collect()
            })
            .collect();
        let pattern = Arc::new(SparsityPattern::from_rows(n, rows));
        let mut m = Self::zeros(pattern);
        for (i, r) in a.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n();
        let mut d = vec![vec![0.0; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.pattern.row_ptr[i]..self.pattern.row_ptr[i + 1] {
                row[self.pattern.col_idx[k] as usize] = self.values[k];
            }
        }
        d
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.find(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to entry `(i, j)`. Panics if the entry is not in the pattern.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .pattern
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn set_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate().take(p.n) {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k] as usize];
            }
            *yi = s;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate().take(p.n) {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[p.transpose[k] as usize] * x[p.col_idx[k] as usize];
            }
            *yi = s;
        }
    }

    /// Explicit transpose over the same (symmetric) pattern.
    pub fn transpose(&self) -> Self {
        let values = self.pattern.transpose.iter().map(|&t| self.values[t as usize]).collect();
        Self { pattern: Arc::clone(&self.pattern), values }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

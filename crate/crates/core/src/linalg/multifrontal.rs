//! Multifrontal LU factorization with threshold partial pivoting.
//!
//! The elimination tree and supernode partition come from a symbolic
//! Cholesky analysis of the (structurally symmetric) pattern under an AMD
//! ordering. Each front is partially factored with row pivoting restricted to
//! its fully summed rows; columns without an acceptable pivot are delayed to
//! the parent front together with an equal number of unused rows.

use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::solve_unit_lower_triangular_in_place;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, SymbolicCholeskyRaw, SymmetricOrdering,
};
use faer::sparse::linalg::SupernodalThreshold;
use faer::sparse::SymbolicSparseColMatRef;
use faer::{Accum, MatMut, Par, Side};
use faer::reborrow::IntoConst;

use super::sparse::{SparseMatrix, SparsityPattern};
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;
const UNSET: u32 = u32::MAX;
/// Panel width for the blocked partial factorization of a front.
const BLOCK: usize = 48;
/// Relative threshold for accepting a pivot against its column maximum.
const PIVOT_THRESHOLD: f64 = 0.1;

/// Ordering and supernodal assembly tree for one sparsity pattern.
#[derive(Debug, Clone)]
pub struct Analysis {
    n: usize,
    nnz: usize,
    /// new index -> original index
    perm: Vec<usize>,
    /// original index -> new index
    iperm: Vec<usize>,
    sn_begin: Vec<usize>,
    sn_end: Vec<usize>,
    pat_ptr: Vec<usize>,
    pat: Vec<u32>,
    parent: Vec<usize>,
}

impl Analysis {
    pub fn new(pattern: &SparsityPattern) -> Result<Self> {
        let n = pattern.n();
        if n == 0 {
            return Ok(Self {
                n,
                nnz: 0,
                perm: vec![],
                iperm: vec![],
                sn_begin: vec![],
                sn_end: vec![],
                pat_ptr: vec![0],
                pat: vec![],
                parent: vec![],
            });
        }
        let col_ptr: Vec<u32> = pattern.row_ptr().iter().map(|&p| p as u32).collect();
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, pattern.col_idx());
        let params = CholeskySymbolicParams {
            supernodal_flop_ratio_threshold: SupernodalThreshold::FORCE_SUPERNODAL,
            ..Default::default()
        };
        let chol = factorize_symbolic_cholesky(sym, Side::Lower, SymmetricOrdering::Amd, params)
            .map_err(|e| Error::Incompatible(format!("symbolic analysis failed: {e:?}")))?;
        let (perm, iperm) = match chol.perm() {
            Some(p) => {
                let (fwd, inv) = p.arrays();
                (
                    fwd.iter().map(|&i| i as usize).collect(),
                    inv.iter().map(|&i| i as usize).collect(),
                )
            }
            None => ((0..n).collect(), (0..n).collect()),
        };
        let mut sn_begin = Vec::new();
        let mut sn_end = Vec::new();
        let mut pat_ptr = vec![0];
        let mut pat = Vec::new();
        match chol.raw() {
            SymbolicCholeskyRaw::Supernodal(sn) => {
                sn_begin.extend(sn.supernode_begin().iter().map(|&i| i as usize));
                sn_end.extend(sn.supernode_end().iter().map(|&i| i as usize));
                for s in 0..sn.n_supernodes() {
                    pat.extend_from_slice(sn.supernode(s).pattern());
                    pat_ptr.push(pat.len());
                }
            }
            // Chosen by faer when there is no fill at all.
            SymbolicCholeskyRaw::Simplicial(sc) => {
                let (cp, ri) = (sc.col_ptr(), sc.row_idx());
                for j in 0..n {
                    sn_begin.push(j);
                    sn_end.push(j + 1);
                    let mut rows: Vec<u32> =
                        ri[cp[j] as usize..cp[j + 1] as usize].iter().copied().filter(|&r| r as usize > j).collect();
                    rows.sort_unstable();
                    pat.extend_from_slice(&rows);
                    pat_ptr.push(pat.len());
                }
            }
        }
        let nsn = sn_begin.len();
        let mut owner = vec![0usize; n];
        for s in 0..nsn {
            owner[sn_begin[s]..sn_end[s]].iter_mut().for_each(|o| *o = s);
        }
        let parent = (0..nsn)
            .map(|s| {
                let p = &pat[pat_ptr[s]..pat_ptr[s + 1]];
                p.iter().map(|&r| r as usize).min().map_or(NONE, |r| owner[r])
            })
            .collect();
        Ok(Self { n, nnz: pattern.nnz(), perm, iperm, sn_begin, sn_end, pat_ptr, pat, parent })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_supernodes(&self) -> usize {
        self.sn_begin.len()
    }

    fn pattern_of(&self, s: usize) -> &[u32] {
        &self.pat[self.pat_ptr[s]..self.pat_ptr[s + 1]]
    }
}

#[derive(Debug, Clone)]
struct Front {
    rows: Vec<u32>,
    cols: Vec<u32>,
    npiv: usize,
    /// `f × npiv`, column-major: unit-lower L below the diagonal, U11 on and above.
    l: Vec<f64>,
    /// `npiv × (f − npiv)`, column-major.
    u: Vec<f64>,
}

struct Contribution {
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    ndelay: usize,
}

/// Numeric LU factors `A[perm, perm] = L U` with front-local row/column pivoting.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    perm: Vec<usize>,
    fronts: Vec<Front>,
    growth: f64,
    delayed: usize,
}

impl LuFactor {
    pub fn factor(a: &SparseMatrix, an: &Analysis) -> Result<Self> {
        let n = a.n();
        if n != an.n || a.pattern().nnz() != an.nnz {
            return Err(Error::Incompatible("matrix does not match its analysis".into()));
        }
        let pat = a.pattern();
        let (row_ptr, col_idx, tmap) = (pat.row_ptr(), pat.col_idx(), pat.transpose_map());
        let vals = a.values();
        let nsn = an.n_supernodes();
        let mut pending: Vec<Vec<Contribution>> = (0..nsn).map(|_| Vec::new()).collect();
        let mut rowpos = vec![UNSET; n];
        let mut colpos = vec![UNSET; n];
        let mut fronts = Vec::with_capacity(nsn);
        let mut umax = 0.0f64;
        let mut delayed_total = 0;

        for s in 0..nsn {
            let (b, e) = (an.sn_begin[s], an.sn_end[s]);
            let kids = std::mem::take(&mut pending[s]);
            let pattern = an.pattern_of(s);
            let ndel: usize = kids.iter().map(|c| c.ndelay).sum();
            let nfs = (e - b) + ndel;
            let f = nfs + pattern.len();
            let mut rows: Vec<u32> = Vec::with_capacity(f);
            let mut cols: Vec<u32> = Vec::with_capacity(f);
            rows.extend((b..e).map(|v| v as u32));
            cols.extend((b..e).map(|v| v as u32));
            for c in &kids {
                rows.extend_from_slice(&c.rows[..c.ndelay]);
                cols.extend_from_slice(&c.cols[..c.ndelay]);
            }
            rows.extend_from_slice(pattern);
            cols.extend_from_slice(pattern);
            for (i, &r) in rows.iter().enumerate() {
                rowpos[r as usize] = i as u32;
            }
            for (j, &c) in cols.iter().enumerate() {
                colpos[c as usize] = j as u32;
            }

            let mut fr = vec![0.0; f * f];
            for v in b..e {
                let o = an.perm[v];
                let (rv, cv) = (rowpos[v] as usize, colpos[v] as usize);
                for k in row_ptr[o]..row_ptr[o + 1] {
                    let c = an.iperm[col_idx[k] as usize];
                    if c >= b {
                        fr[rv + colpos[c] as usize * f] += vals[k];
                    }
                    if c >= e {
                        fr[rowpos[c] as usize + cv * f] += vals[tmap[k] as usize];
                    }
                }
            }
            for c in &kids {
                let m = c.rows.len();
                for jj in 0..m {
                    let lc = colpos[c.cols[jj] as usize] as usize * f;
                    let src = &c.vals[jj * m..(jj + 1) * m];
                    for (ii, &v) in src.iter().enumerate() {
                        fr[rowpos[c.rows[ii] as usize] as usize + lc] += v;
                    }
                }
            }
            drop(kids);

            let is_root = an.parent[s] == NONE;
            let k = partial_factor(&mut fr, f, nfs, &mut rows, &mut cols, &mut rowpos, &mut colpos, is_root);
            for &r in &rows {
                rowpos[r as usize] = UNSET;
            }
            for &c in &cols {
                colpos[c as usize] = UNSET;
            }
            if k < nfs {
                if is_root {
                    return Err(Error::SingularMatrix { row: an.perm[rows[k] as usize] });
                }
                delayed_total += nfs - k;
            }

            let mut l = Vec::with_capacity(f * k);
            for j in 0..k {
                l.extend_from_slice(&fr[j * f..(j + 1) * f]);
                for i in 0..=j {
                    umax = umax.max(fr[i + j * f].abs());
                }
            }
            let m = f - k;
            let mut u = Vec::with_capacity(k * m);
            let mut cb = Vec::with_capacity(m * m);
            for j in k..f {
                let col = &fr[j * f..(j + 1) * f];
                u.extend_from_slice(&col[..k]);
                cb.extend_from_slice(&col[k..]);
                umax = col[..k].iter().fold(umax, |a, v| a.max(v.abs()));
            }
            drop(fr);
            if m > 0 {
                let p = an.parent[s];
                debug_assert!(p != NONE);
                pending[p].push(Contribution {
                    rows: rows[k..].to_vec(),
                    cols: cols[k..].to_vec(),
                    vals: cb,
                    ndelay: nfs - k,
                });
            }
            rows.truncate(f);
            cols.truncate(f);
            fronts.push(Front { rows, cols, npiv: k, l, u });
        }
        let amax = a.max_abs();
        let growth = if amax > 0.0 { umax / amax } else { 1.0 };
        Ok(Self { n, perm: an.perm.clone(), fronts, growth, delayed: delayed_total })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// max |U| / max |A|.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    /// Number of pivots delayed from a front to its parent.
    pub fn delayed_pivots(&self) -> usize {
        self.delayed
    }

    /// Number of stored factor entries.
    pub fn factor_entries(&self) -> usize {
        self.fronts.iter().map(|f| f.l.len() + f.u.len()).sum()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut w: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        let mut t = Vec::new();
        for fr in &self.fronts {
            let (k, f) = (fr.npiv, fr.rows.len());
            t.clear();
            t.extend(fr.rows[..k].iter().map(|&r| w[r as usize]));
            for j in 0..k {
                let tj = t[j];
                if tj != 0.0 {
                    let col = &fr.l[j * f..(j + 1) * f];
                    for i in j + 1..k {
                        t[i] -= col[i] * tj;
                    }
                    for i in k..f {
                        w[fr.rows[i] as usize] -= col[i] * tj;
                    }
                }
            }
            for (i, &r) in fr.rows[..k].iter().enumerate() {
                w[r as usize] = t[i];
            }
        }
        let mut x = vec![0.0; n];
        for fr in self.fronts.iter().rev() {
            let (k, f) = (fr.npiv, fr.rows.len());
            t.clear();
            t.extend(fr.rows[..k].iter().map(|&r| w[r as usize]));
            for jj in 0..f - k {
                let xv = x[fr.cols[k + jj] as usize];
                if xv != 0.0 {
                    let col = &fr.u[jj * k..(jj + 1) * k];
                    for i in 0..k {
                        t[i] -= col[i] * xv;
                    }
                }
            }
            for j in (0..k).rev() {
                let col = &fr.l[j * f..(j + 1) * f];
                t[j] /= col[j];
                let tj = t[j];
                for i in 0..j {
                    t[i] -= col[i] * tj;
                }
            }
            for (i, &c) in fr.cols[..k].iter().enumerate() {
                x[c as usize] = t[i];
            }
        }
        for (j, &o) in self.perm.iter().enumerate() {
            b[o] = x[j];
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        let mut w: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        let mut t = Vec::new();
        for fr in &self.fronts {
            let (k, f) = (fr.npiv, fr.rows.len());
            t.clear();
            t.extend(fr.cols[..k].iter().map(|&c| w[c as usize]));
            for j in 0..k {
                let col = &fr.l[j * f..(j + 1) * f];
                let mut s = t[j];
                for i in 0..j {
                    s -= col[i] * t[i];
                }
                t[j] = s / col[j];
            }
            for jj in 0..f - k {
                let col = &fr.u[jj * k..(jj + 1) * k];
                let mut s = 0.0;
                for i in 0..k {
                    s += col[i] * t[i];
                }
                w[fr.cols[k + jj] as usize] -= s;
            }
            for (i, &c) in fr.cols[..k].iter().enumerate() {
                w[c as usize] = t[i];
            }
        }
        let mut x = vec![0.0; n];
        for fr in self.fronts.iter().rev() {
            let (k, f) = (fr.npiv, fr.rows.len());
            t.clear();
            t.extend(fr.cols[..k].iter().map(|&c| w[c as usize]));
            for j in 0..k {
                let col = &fr.l[j * f..(j + 1) * f];
                let mut s = 0.0;
                for i in k..f {
                    s += col[i] * x[fr.rows[i] as usize];
                }
                t[j] -= s;
            }
            for j in (0..k).rev() {
                let tj = t[j];
                for i in 0..j {
                    t[i] -= fr.l[j + i * f] * tj;
                }
            }
            for (i, &r) in fr.rows[..k].iter().enumerate() {
                x[r as usize] = t[i];
            }
        }
        for (j, &o) in self.perm.iter().enumerate() {
            b[o] = x[j];
        }
    }
}

/// Partially factors the `f × f` column-major front, eliminating as many of
/// the first `nfs` columns as admit a threshold-acceptable pivot among the
/// first `nfs` rows. Returns the number of pivots; the pivots end up in the
/// leading positions of `rows`/`cols`.
#[allow(clippy::too_many_arguments)]
fn partial_factor(
    a: &mut [f64],
    f: usize,
    nfs: usize,
    rows: &mut [u32],
    cols: &mut [u32],
    rowpos: &mut [u32],
    colpos: &mut [u32],
    is_root: bool,
) -> usize {
    let threshold = if is_root { 0.0 } else { PIVOT_THRESHOLD };
    let mut k = 0;
    let mut d = 0;
    for pass in 0..2 {
        if pass == 1 {
            if d == 0 {
                break;
            }
            d = 0;
        }
        while k + d < nfs {
            let wend = (k + d + BLOCK).min(nfs);
            let kstart = k;
            while k + d < wend {
                let c = k + d;
                let col = &a[c * f..(c + 1) * f];
                let cmax = col[k..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut best = 0.0;
                let mut best_i = NONE;
                for (i, v) in col.iter().enumerate().take(nfs).skip(k) {
                    if v.abs() > best {
                        best = v.abs();
                        best_i = i;
                    }
                }
                if best == 0.0 || best < threshold * cmax {
                    d += 1;
                    continue;
                }
                let diag = rowpos[cols[c] as usize] as usize;
                let r = if diag >= k && diag < nfs && col[diag] != 0.0 && col[diag].abs() >= threshold * cmax {
                    diag
                } else {
                    best_i
                };
                if r != k {
                    for j in 0..f {
                        a.swap(r + j * f, k + j * f);
                    }
                    rows.swap(r, k);
                    rowpos[rows[r] as usize] = r as u32;
                    rowpos[rows[k] as usize] = k as u32;
                }
                if c != k {
                    let (lo, hi) = a.split_at_mut(c * f);
                    lo[k * f..(k + 1) * f].swap_with_slice(&mut hi[..f]);
                    cols.swap(c, k);
                    colpos[cols[c] as usize] = c as u32;
                    colpos[cols[k] as usize] = k as u32;
                }
                let (left, right) = a.split_at_mut((k + 1) * f);
                let lcol = &mut left[k * f..];
                let inv = 1.0 / lcol[k];
                for v in &mut lcol[k + 1..] {
                    *v *= inv;
                }
                let lcol = &left[k * f..];
                for j in k + 1..wend {
                    let cj = &mut right[(j - k - 1) * f..(j - k) * f];
                    let ukj = cj[k];
                    if ukj != 0.0 {
                        for (x, l) in cj[k + 1..].iter_mut().zip(&lcol[k + 1..]) {
                            *x -= l * ukj;
                        }
                    }
                }
                k += 1;
            }
            if k > kstart && wend < f {
                let mat = MatMut::from_column_major_slice_mut(&mut *a, f, f);
                let (left, right) = mat.split_at_col_mut(wend);
                let left = left.into_const();
                let lblk = left.submatrix(kstart, kstart, k - kstart, k - kstart);
                let l21 = left.submatrix(k, kstart, f - k, k - kstart);
                let (top, bottom) = right.split_at_row_mut(k);
                let mut ublk = top.submatrix_mut(kstart, 0, k - kstart, f - wend);
                solve_unit_lower_triangular_in_place(lblk, ublk.as_mut(), Par::Seq);
                matmul(bottom, Accum::Add, l21, ublk.as_ref(), -1.0, Par::Seq);
            }
        }
    }
    k
}

//! Dense LU factorization of the basis with product-form (eta) updates.

/// Smallest pivot magnitude accepted during factorization.
const SINGULAR_TOL: f64 = 1e-11;

struct Eta {
    row: usize,
    col: Vec<f64>,
}

/// `P B = L U` for the basis matrix `B`, followed by a sequence of eta
/// transformations, one per pivot since the last refactorization.
pub(crate) struct Factor {
    m: usize,
    // Row-major, unit L strictly below the diagonal, U on and above it.
    lu: Vec<f64>,
    // perm[k] = original row placed at position k.
    perm: Vec<usize>,
    etas: Vec<Eta>,
}

/// Factorization failed at elimination step `step`; the rows in
/// `remaining_rows` have not been used as pivots yet.
pub(crate) struct Singular {
    pub step: usize,
    pub remaining_rows: Vec<usize>,
}

impl Factor {
    pub fn empty(m: usize) -> Self {
        Self { m, lu: Vec::new(), perm: (0..m).collect(), etas: Vec::new() }
    }

    /// Factorizes the dense column-major basis given as `columns[k]` = k-th basic column.
    pub fn factorize(&mut self, columns: &[Vec<f64>]) -> Result<(), Singular> {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, col) in columns.iter().enumerate() {
            for i in 0..m {
                a[i * m + k] = col[i];
            }
        }
        let mut perm: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let mut p = k;
            let mut best = a[k * m + k].abs();
            for i in (k + 1)..m {
                let v = a[i * m + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best < SINGULAR_TOL {
                return Err(Singular { step: k, remaining_rows: perm[k..].to_vec() });
            }
            if p != k {
                for c in 0..m {
                    a.swap(k * m + c, p * m + c);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * m + k];
            for i in (k + 1)..m {
                let f = a[i * m + k] / pivot;
                if f != 0.0 {
                    a[i * m + k] = f;
                    let (top, bottom) = a.split_at_mut(i * m);
                    let krow = &top[k * m..k * m + m];
                    let irow = &mut bottom[..m];
                    for c in (k + 1)..m {
                        irow[c] -= f * krow[c];
                    }
                } else {
                    a[i * m + k] = 0.0;
                }
            }
        }
        self.lu = a;
        self.perm = perm;
        self.etas.clear();
        Ok(())
    }

    pub fn eta_count(&self) -> usize {
        self.etas.len()
    }

    /// Records the pivot that replaced basis position `row` by a column whose
    /// FTRAN image is `w`.
    pub fn push_eta(&mut self, row: usize, w: Vec<f64>) {
        self.etas.push(Eta { row, col: w });
    }

    /// Solves `B w = v` (v indexed by constraint rows, w by basis positions).
    pub fn ftran(&self, v: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut t: Vec<f64> = (0..m).map(|k| v[self.perm[k]]).collect();
        for i in 0..m {
            let row = &self.lu[i * m..i * m + i];
            let mut s = t[i];
            for (k, l) in row.iter().enumerate() {
                s -= l * t[k];
            }
            t[i] = s;
        }
        for i in (0..m).rev() {
            let row = &self.lu[i * m..(i + 1) * m];
            let mut s = t[i];
            for k in (i + 1)..m {
                s -= row[k] * t[k];
            }
            t[i] = s / row[i];
        }
        for eta in &self.etas {
            let r = eta.row;
            let tr = t[r] / eta.col[r];
            if tr != 0.0 {
                for (i, wi) in eta.col.iter().enumerate() {
                    t[i] -= wi * tr;
                }
            }
            t[r] = tr;
        }
        t
    }

    /// Solves `y' B = c'` (c indexed by basis positions, y by constraint rows).
    pub fn btran(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut c = c.to_vec();
        for eta in self.etas.iter().rev() {
            let r = eta.row;
            let mut s = c[r];
            for (i, wi) in eta.col.iter().enumerate() {
                if i != r {
                    s -= c[i] * wi;
                }
            }
            c[r] = s / eta.col[r];
        }
        // U' s = c
        let mut s = c;
        for k in 0..m {
            let mut v = s[k];
            for i in 0..k {
                v -= self.lu[i * m + k] * s[i];
            }
            s[k] = v / self.lu[k * m + k];
        }
        // L' t = s
        for k in (0..m).rev() {
            let mut v = s[k];
            for i in (k + 1)..m {
                v -= self.lu[i * m + k] * s[i];
            }
            s[k] = v;
        }
        let mut y = vec![0.0; m];
        for k in 0..m {
            y[self.perm[k]] = s[k];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matvec(cols: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
        let m = cols.len();
        let mut out = vec![0.0; m];
        for (k, col) in cols.iter().enumerate() {
            for i in 0..m {
                out[i] += col[i] * w[k];
            }
        }
        out
    }

    #[test]
    fn ftran_btran_solve_the_basis_system() {
        let cols = vec![vec![2.0, 1.0, 0.0], vec![0.0, 3.0, 1.0], vec![1.0, 0.0, 4.0]];
        let mut f = Factor::empty(3);
        assert!(f.factorize(&cols).is_ok());
        let v = vec![1.0, -2.0, 0.5];
        let w = f.ftran(&v);
        let back = matvec(&cols, &w);
        for i in 0..3 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
        let y = f.btran(&v);
        for k in 0..3 {
            let dot: f64 = (0..3).map(|i| y[i] * cols[k][i]).sum();
            assert!((dot - v[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn eta_update_matches_refactorization() {
        let mut cols = vec![vec![2.0, 1.0, 0.0], vec![0.0, 3.0, 1.0], vec![1.0, 0.0, 4.0]];
        let mut f = Factor::empty(3);
        assert!(f.factorize(&cols).is_ok());
        let entering = vec![1.0, 1.0, 1.0];
        let w = f.ftran(&entering);
        f.push_eta(1, w);
        cols[1] = entering;
        let v = vec![0.3, -1.0, 2.0];
        let a = f.ftran(&v);
        let mut g = Factor::empty(3);
        assert!(g.factorize(&cols).is_ok());
        let b = g.ftran(&v);
        for i in 0..3 {
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
        let ya = f.btran(&v);
        let yb = g.btran(&v);
        for i in 0..3 {
            assert!((ya[i] - yb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_basis_reports_step() {
        let cols = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let mut f = Factor::empty(2);
        let err = f.factorize(&cols).err().expect("singular");
        assert_eq!(err.step, 1);
        assert_eq!(err.remaining_rows.len(), 1);
    }
}

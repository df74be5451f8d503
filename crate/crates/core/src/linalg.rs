//! Thin wrappers over faer's sparse and dense LU factorizations.

use crate::error::{NlmcError, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

/// Coordinate-format accumulator; duplicate entries are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    pub n: usize,
    pub entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        Self {
            n,
            entries: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push(Triplet::new(row, col, value));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn to_matrix(&self) -> Result<SparseColMat<usize, f64>> {
        SparseColMat::try_new_from_triplets(self.n, self.n, &self.entries)
            .map_err(|e| NlmcError::Singular(format!("sparse assembly failed: {e:?}")))
    }

    /// y = A x with the accumulated entries.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for t in &self.entries {
            y[t.row] += t.val * x[t.col];
        }
        y
    }
}

pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(builder: &TripletBuilder) -> Result<Self> {
        let a = builder.to_matrix()?;
        Self::factor_matrix(&a, None)
    }

    pub fn factor_matrix(
        a: &SparseColMat<usize, f64>,
        symbolic: Option<&SymbolicLu<usize>>,
    ) -> Result<Self> {
        let symbolic = match symbolic {
            Some(s) => s.clone(),
            None => SymbolicLu::try_new(a.symbolic())
                .map_err(|e| NlmcError::Singular(format!("symbolic LU: {e:?}")))?,
        };
        let lu = Lu::try_new_with_symbolic(symbolic, a.as_ref())
            .map_err(|e| NlmcError::Singular(format!("numeric LU: {e:?}")))?;
        Ok(Self { n: a.nrows(), lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        check_finite(&out)?;
        Ok(out)
    }

    /// Solves for every column of `rhs` (column-major, `n × k`).
    pub fn solve_columns(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if rhs.is_empty() {
            return Ok(Vec::new());
        }
        let b = Mat::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        let x = self.lu.solve(&b);
        let out: Vec<Vec<f64>> = (0..rhs.len())
            .map(|j| (0..self.n).map(|i| x[(i, j)]).collect())
            .collect();
        for c in &out {
            check_finite(c)?;
        }
        Ok(out)
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NlmcError::Singular("non-finite solution".into()))
    }
}

/// Dense row-major solve with partial pivoting.
pub fn dense_solve(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let m = Mat::from_fn(n, n, |i, j| a[i * n + j]);
    let lu = m.partial_piv_lu();
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = lu.solve(&rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    check_finite(&out)?;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let res = (0..n)
        .map(|i| {
            let r: f64 = (0..n).map(|j| a[i * n + j] * out[j]).sum::<f64>() - b[i];
            r.abs()
        })
        .fold(0.0f64, f64::max);
    let xs = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bs = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if res > 1e-6 * (scale * xs + bs) && res > 1e-200 {
        return Err(NlmcError::Singular(format!(
            "dense solve residual {res:e} exceeds tolerance"
        )));
    }
    Ok(out)
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_and_dense_agree() {
        let n = 5;
        let mut b = TripletBuilder::new(n);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            b.push(i, i, 4.0);
            dense[i * n + i] += 4.0;
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
                b.push(i + 1, i, -1.5);
                dense[i * n + i + 1] += -1.0;
                dense[(i + 1) * n + i] += -1.5;
            }
        }
        b.push(0, 0, 1.0);
        dense[0] += 1.0;
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 + 1.0).collect();
        let xs = SparseLu::factor(&b).unwrap().solve(&rhs).unwrap();
        let xd = dense_solve(n, &dense, &rhs).unwrap();
        for (a, c) in xs.iter().zip(&xd) {
            assert!((a - c).abs() < 1e-13);
        }
        let y = b.apply(&xs);
        for (a, c) in y.iter().zip(&rhs) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn saddle_with_zero_block() {
        // [2 1; 1 0] x = [1; 2]
        let mut b = TripletBuilder::new(2);
        b.push(0, 0, 2.0);
        b.push(0, 1, 1.0);
        b.push(1, 0, 1.0);
        let x = SparseLu::factor(&b).unwrap().solve(&[1.0, 2.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14 && (x[1] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_dense_rejected() {
        assert!(dense_solve(2, &[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]).is_err());
    }
}

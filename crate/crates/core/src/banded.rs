//! Square banded matrices with an in-place LU factorization without pivoting.
//!
//! Storage follows the usual band layout: entry `(i, j)` lives at
//! `data[(i - j + upper) * n + j]`. Factorization keeps the fill-in inside the
//! band, so solves cost O(n · (lower + upper)) per right-hand side.

#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
    factored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("banded system is singular at pivot {pivot}")]
pub struct SingularMatrix {
    pub pivot: usize,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i <= j + self.lower && j <= i + self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[(i + self.upper - j) * self.n + j]
        } else {
            0.0
        }
    }

    /// Mutable entry access; panics outside the band.
    pub fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        &mut self.data[(i + self.upper - j) * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        *self.at(i, j) = v;
    }

    /// Dense copy, for inspection and tests.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Overwrite with the LU factors (unit lower triangle implicit).
    pub fn factorize(&mut self) -> Result<(), SingularMatrix> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(SingularMatrix { pivot: k });
            }
            let i_max = (k + self.lower).min(n - 1);
            for i in k + 1..=i_max {
                let v = self.get(i, k);
                if v != 0.0 {
                    *self.at(i, k) = v / pivot;
                }
            }
            let j_max = (k + self.upper).min(n - 1);
            for j in k + 1..=j_max {
                let ukj = self.get(k, j);
                if ukj == 0.0 {
                    continue;
                }
                for i in k + 1..=i_max {
                    let lik = self.get(i, k);
                    if lik != 0.0 {
                        *self.at(i, j) -= lik * ukj;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solve `A X = B` in place; `b` is row-major with `cols` columns.
    pub fn solve(&self, b: &mut [f64], cols: usize) {
        assert!(self.factored, "solve before factorize");
        let n = self.n;
        assert_eq!(b.len(), n * cols);
        for j in 0..n {
            let i_max = (j + self.lower).min(n - 1);
            for i in j + 1..=i_max {
                let l = self.get(i, j);
                if l != 0.0 {
                    for c in 0..cols {
                        b[i * cols + c] -= l * b[j * cols + c];
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let d = self.get(j, j);
            for c in 0..cols {
                b[j * cols + c] /= d;
            }
            let i_min = j.saturating_sub(self.upper);
            for i in i_min..j {
                let u = self.get(i, j);
                if u != 0.0 {
                    for c in 0..cols {
                        b[i * cols + c] -= u * b[j * cols + c];
                    }
                }
            }
        }
    }

    /// Solve `Aᵀ X = B` in place with the same factors.
    pub fn solve_transposed(&self, b: &mut [f64], cols: usize) {
        assert!(self.factored, "solve before factorize");
        let n = self.n;
        assert_eq!(b.len(), n * cols);
        // Uᵀ y = b
        for j in 0..n {
            let d = self.get(j, j);
            for c in 0..cols {
                b[j * cols + c] /= d;
            }
            let i_max = (j + self.upper).min(n - 1);
            for i in j + 1..=i_max {
                let u = self.get(j, i);
                if u != 0.0 {
                    for c in 0..cols {
                        b[i * cols + c] -= u * b[j * cols + c];
                    }
                }
            }
        }
        // Lᵀ x = y
        for j in (0..n).rev() {
            let i_min = j.saturating_sub(self.lower);
            for i in i_min..j {
                let l = self.get(j, i);
                if l != 0.0 {
                    for c in 0..cols {
                        b[i * cols + c] -= l * b[j * cols + c];
                    }
                }
            }
        }
    }
}

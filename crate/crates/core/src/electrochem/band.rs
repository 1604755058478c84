//! Banded matrix with in-place Gaussian elimination (partial pivoting).

/// Square matrix with `kl` sub- and `ku` super-diagonals. Each row keeps
/// `2 kl + ku + 1` slots so that row interchanges have room for fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(
            j + self.kl >= i && j <= i + self.kl + self.ku,
            "({i}, {j}) outside band"
        );
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += value;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku || j >= self.n {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Largest absolute entry of row `i` after multiplying column `j` by `col_scale[j]`.
    pub fn row_max_scaled(&self, i: usize, col_scale: &[f64]) -> f64 {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        (lo..=hi)
            .map(|j| (self.data[self.slot(i, j)] * col_scale[j]).abs())
            .fold(0.0, f64::max)
    }

    pub fn scale_row(&mut self, i: usize, factor: f64) {
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        for j in lo..=hi {
            let s = self.slot(i, j);
            self.data[s] *= factor;
        }
    }

    pub fn scale_col(&mut self, j: usize, factor: f64) {
        let lo = j.saturating_sub(self.ku);
        let hi = (j + self.kl).min(self.n - 1);
        for i in lo..=hi {
            let s = self.slot(i, j);
            self.data[s] *= factor;
        }
    }

    /// Solves `A x = rhs` in place, destroying the matrix. Returns `None` on a zero pivot.
    pub fn solve_in_place(&mut self, rhs: &mut [f64]) -> Option<()> {
        let n = self.n;
        assert_eq!(rhs.len(), n);
        let span = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut pivot = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    pivot = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            let last_col = (k + span).min(n - 1);
            if pivot != k {
                for c in k..=last_col {
                    let a = self.slot(k, c);
                    let b = self.slot(pivot, c);
                    self.data.swap(a, b);
                }
                rhs.swap(k, pivot);
            }
            let diag = self.data[self.slot(k, k)];
            for r in k + 1..=last_row {
                let sr = self.slot(r, k);
                let factor = self.data[sr] / diag;
                if factor == 0.0 {
                    continue;
                }
                self.data[sr] = 0.0;
                for c in k + 1..=last_col {
                    let src = self.data[self.slot(k, c)];
                    let dst = self.slot(r, c);
                    self.data[dst] -= factor * src;
                }
                rhs[r] -= factor * rhs[k];
            }
        }
        for i in (0..n).rev() {
            let last_col = (i + span).min(n - 1);
            let mut acc = rhs[i];
            for c in i + 1..=last_col {
                acc -= self.data[self.slot(i, c)] * rhs[c];
            }
            rhs[i] = acc / self.data[self.slot(i, i)];
        }
        Some(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for r in k + 1..n {
                let f = a[r][k] / a[k][k];
                for c in k..n {
                    a[r][c] -= f * a[k][c];
                }
                b[r] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|c| a[i][c] * x[c]).sum();
            x[i] = (b[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn matches_dense_elimination_with_pivoting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (n, kl, ku) = (30, 4, 3);
            let mut band = BandMatrix::new(n, kl, ku);
            let mut dense = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    // weak diagonal forces row interchanges
                    let v: f64 = rng.gen_range(-1.0..1.0) * if i == j { 0.01 } else { 1.0 };
                    band.add(i, j, v);
                    dense[i][j] = v;
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expected = dense_solve(dense, b.clone());
            let mut x = b;
            band.solve_in_place(&mut x).unwrap();
            for (u, v) in x.iter().zip(&expected) {
                assert!((u - v).abs() < 1e-8 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn singular_matrix_reports_none() {
        let mut band = BandMatrix::new(3, 1, 1);
        band.add(0, 0, 1.0);
        band.add(2, 2, 1.0);
        let mut rhs = vec![1.0; 3];
        assert!(band.solve_in_place(&mut rhs).is_none());
    }
}

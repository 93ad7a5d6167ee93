//! Symmetric positive-definite banded systems, lower band storage.

/// Lower band of a symmetric `n x n` matrix with half-bandwidth `p`:
/// entry `(i, j)` with `j <= i <= j + p` lives at `i * (p + 1) + (i - j)`.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            data: vec![0.0; n * (p + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.p
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.p, "({i}, {j}) outside band {}", self.p);
        i * (self.p + 1) + (i - j)
    }

    /// Reads `(i, j)` from either triangle; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.p {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds to the lower-triangle entry `(i, j)`, `j <= i`.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set_lower(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * (self.p + 1)]
    }

    /// Solves `A x = b` by banded Cholesky. Returns `None` when `A` is not
    /// numerically positive definite.
    pub fn solve(&self, b: &[f64]) -> Option<Vec<f64>> {
        let (n, p) = (self.n, self.p);
        assert_eq!(b.len(), n);
        let mut l = self.data.clone();
        let at = |i: usize, j: usize| i * (p + 1) + (i - j);
        for j in 0..n {
            let lo = j.saturating_sub(p);
            let mut s = l[at(j, j)];
            for k in lo..j {
                let v = l[at(j, k)];
                s -= v * v;
            }
            if !(s > 0.0) || !s.is_finite() {
                return None;
            }
            let d = s.sqrt();
            l[at(j, j)] = d;
            for i in (j + 1)..n.min(j + p + 1) {
                let lo_i = i.saturating_sub(p);
                let mut s = l[at(i, j)];
                for k in lo_i.max(lo)..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                l[at(i, j)] = s / d;
            }
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(p);
            let mut s = y[i];
            for k in lo..i {
                s -= l[at(i, k)] * y[k];
            }
            y[i] = s / l[at(i, i)];
        }
        for i in (0..n).rev() {
            let hi = n.min(i + p + 1);
            let mut s = y[i];
            for k in (i + 1)..hi {
                s -= l[at(k, i)] * y[k];
            }
            y[i] = s / l[at(i, i)];
        }
        Some(y)
    }
}

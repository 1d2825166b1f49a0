use super::OdeError;

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || j + self.kl < i || j > i + self.ku {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)`. Panics outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside band ({}, {})", self.kl, self.ku));
        self.data[k] += v;
    }

    /// `self <- I - c * self`.
    pub(crate) fn make_iteration_matrix(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= -c;
        }
        for i in 0..self.n {
            self.add(i, i, 1.0);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization without pivoting.
    ///
    /// Only used on `I - h J` for generator-like `J`, which is diagonally
    /// dominant by columns.
    pub(crate) fn factorize(mut self, t: f64) -> Result<BandLu, OdeError> {
        let (n, kl) = (self.n, self.kl);
        let w = self.kl + self.ku + 1;
        for k in 0..n {
            let pivot = self.data[k * w + kl];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(OdeError::Singular { t });
            }
            let rows = (k + kl).min(n - 1);
            let width = (k + self.ku).min(n - 1) - k;
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let pivot_row = &head[k * w + kl + 1..k * w + kl + 1 + width];
            for i in k + 1..=rows {
                let row = &mut tail[(i - k - 1) * w..(i - k) * w];
                // row i stores column j at offset j + kl - i
                let ik = k + kl - i;
                let l = row[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                row[ik] = l;
                for (x, &u) in row[ik + 1..ik + 1 + width].iter_mut().zip(pivot_row) {
                    *x -= l * u;
                }
            }
        }
        Ok(BandLu(self))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandLu(BandMatrix);

impl BandLu {
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let m = &self.0;
        let (n, kl) = (m.n, m.kl);
        let w = m.kl + m.ku + 1;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let row = &m.data[i * w + lo + kl - i..i * w + kl];
            let s: f64 = row.iter().zip(&b[lo..i]).map(|(a, x)| a * x).sum();
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + m.ku).min(n - 1);
            let row = &m.data[i * w + kl..i * w + kl + 1 + hi - i];
            let s: f64 = row[1..].iter().zip(&b[i + 1..=hi]).map(|(a, x)| a * x).sum();
            b[i] = (b[i] - s) / row[0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let n = 7;
        let mut a = BandMatrix::zeros(n, 1, 2);
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(1)..=(i + 2).min(n - 1) {
                let v = if i == j { 6.0 + i as f64 } else { 1.0 / (1.0 + i as f64 + 2.0 * j as f64) };
                a.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let b = a.mul_vec(&x);
        let lu = a.factorize(0.0).unwrap();
        let mut sol = b.clone();
        lu.solve_in_place(&mut sol);
        let reference = dense.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((sol[i] - x[i]).abs() < 1e-13);
            assert!((sol[i] - reference[i]).abs() < 1e-13);
        }
    }

    #[test]
    #[should_panic]
    fn add_outside_band_panics() {
        BandMatrix::zeros(4, 1, 1).add(0, 3, 1.0);
    }
}

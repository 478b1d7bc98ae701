//! Explicit ring matrices, used only to cross-check the local formulas and the
//! algebra behind the convergence arguments. Nothing at run time depends on
//! this module.
//!
//! `C` has first row `(0, 1/2, 0, .., 0, 1/2)`, `D` has first row
//! `(0, 1/2, 0, .., 0, -1/2)` and `H` has first row `(0, .., 0, -1)`. With
//! these, `phi_bar = C phi + b`, `half_span = D phi + g` and
//! `gap = (H + I) phi + h` for phases in ring order.

use std::f64::consts::{PI, TAU};

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Circulant matrix from its first row; entries that land on the same column
/// (as for `n = 2`) are summed.
pub fn circulant(first_row: &[(usize, f64)], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, value) in first_row {
            m[(i, (i + j) % n)] += value;
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct CirculantOracle {
    pub n: usize,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub ones: DVector<f64>,
    pub b: DVector<f64>,
    pub g: DVector<f64>,
    pub h_vec: DVector<f64>,
}

impl CirculantOracle {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::TooFewRobots { n });
        }
        let last = n - 1;
        let mut b = DVector::zeros(n);
        b[0] -= PI;
        b[last] += PI;
        let mut g = DVector::zeros(n);
        g[0] += PI;
        g[last] += PI;
        let mut h_vec = DVector::zeros(n);
        h_vec[0] = TAU;
        Ok(CirculantOracle {
            n,
            c: circulant(&[(1, 0.5), (last, 0.5)], n),
            d: circulant(&[(1, 0.5), (last, -0.5)], n),
            h: circulant(&[(last, -1.0)], n),
            ones: DVector::from_element(n, 1.0),
            b,
            g,
            h_vec,
        })
    }

    pub fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }

    /// `C - I`, the phase-error coupling.
    pub fn laplacian(&self) -> DMatrix<f64> {
        &self.c - self.identity()
    }

    pub fn phi_bar(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.c * phi + &self.b
    }

    pub fn half_span(&self, phi: &DVector<f64>) -> DVector<f64> {
        &self.d * phi + &self.g
    }

    pub fn gaps(&self, phi: &DVector<f64>) -> DVector<f64> {
        (&self.h + self.identity()) * phi + &self.h_vec
    }

    pub fn phase_error(&self, phi: &DVector<f64>) -> DVector<f64> {
        self.laplacian() * phi + &self.b
    }

    /// Max-norm residuals of the structural identities, by name.
    pub fn identity_residuals(&self) -> Vec<(&'static str, f64)> {
        let l = self.laplacian();
        let hi = &self.h + self.identity();
        let norm = |m: DMatrix<f64>| m.amax();
        let vnorm = |v: DVector<f64>| v.amax();
        vec![
            ("(C-I)1 = 0", vnorm(&l * &self.ones)),
            ("1'(C-I) = 0", (self.ones.transpose() * &l).amax()),
            ("(C-I)g - Db = 0", vnorm(&l * &self.g - &self.d * &self.b)),
            (
                "(H+I)b - (C-I)h = 0",
                vnorm(&hi * &self.b - &l * &self.h_vec),
            ),
            ("(H+I)1 = 0", vnorm(&hi * &self.ones)),
            ("(C-I)D = D(C-I)", norm(&l * &self.d - &self.d * &l)),
            ("(H+I)(C-I) = (C-I)(H+I)", norm(&hi * &l - &l * &hi)),
        ]
    }

    /// Smallest off-diagonal entry of `k_phi (C - I)`; non-negative for a
    /// Metzler matrix.
    pub fn min_off_diagonal(&self, k_phi: f64) -> f64 {
        let l = self.laplacian() * k_phi;
        let mut min = f64::INFINITY;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    min = min.min(l[(i, j)]);
                }
            }
        }
        min
    }

    /// Numerical rank of `C - I`.
    pub fn laplacian_rank(&self) -> usize {
        self.laplacian().rank(1e-9)
    }
}

/// Eigenvalues of `C - I` in ascending order.
pub fn spectrum(n: usize) -> Result<Vec<f64>> {
    let oracle = CirculantOracle::new(n)?;
    let mut eig: Vec<f64> = SymmetricEigen::new(oracle.laplacian())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// `cos(2 pi k / n) - 1` for `k = 0..n`, ascending.
pub fn closed_form_spectrum(n: usize) -> Vec<f64> {
    let mut eig: Vec<f64> = (0..n)
        .map(|k| (TAU * k as f64 / n as f64).cos() - 1.0)
        .collect();
    eig.sort_by(f64::total_cmp);
    eig
}

#[derive(Clone, Debug)]
pub struct BlockEigenpair {
    /// Eigenvalue of `B` this pair was built from.
    pub mu: f64,
    pub lambda: Complex<f64>,
    /// `|A v - lambda v|_inf / |v|_inf` for `v = (k1 u; lambda u)`.
    pub residual: f64,
}

/// Roots of `lambda^2 - k2 mu lambda - k1 mu = 0`.
pub fn block_roots(mu: f64, k1: f64, k2: f64) -> [Complex<f64>; 2] {
    let p = k2 * mu;
    let disc = Complex::new(p * p + 4.0 * k1 * mu, 0.0).sqrt();
    [(disc + p) * 0.5, (-disc + p) * 0.5]
}

/// Eigenpairs of `A = [0, k1 I; B, k2 B]` built from those of a symmetric `B`,
/// each with its residual against the explicit `2n x 2n` matrix.
pub fn block_eigenpairs(b: &DMatrix<f64>, k1: f64, k2: f64) -> Result<Vec<BlockEigenpair>> {
    let n = b.nrows();
    if b.ncols() != n || (b - b.transpose()).amax() > 1e-12 {
        return Err(Error::Config(
            "block eigenpairs need a symmetric square B".into(),
        ));
    }
    if k1 == 0.0 || k2 == 0.0 {
        return Err(Error::Config("block eigenpairs need nonzero gains".into()));
    }
    let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = k1;
        for j in 0..n {
            a[(n + i, j)] = b[(i, j)];
            a[(n + i, n + j)] = k2 * b[(i, j)];
        }
    }
    let a = a.map(|x| Complex::new(x, 0.0));
    let eig = SymmetricEigen::new(b.clone());
    let mut pairs = Vec::with_capacity(2 * n);
    for (k, &mu) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k).map(|x| Complex::new(x, 0.0));
        for lambda in block_roots(mu, k1, k2) {
            let mut v = DVector::<Complex<f64>>::zeros(2 * n);
            v.rows_mut(0, n).copy_from(&(&u * Complex::new(k1, 0.0)));
            v.rows_mut(n, n).copy_from(&(&u * lambda));
            let r = &a * &v - &v * lambda;
            let scale = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let residual = r.iter().map(|c| c.norm()).fold(0.0, f64::max) / scale;
            pairs.push(BlockEigenpair {
                mu,
                lambda,
                residual,
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::phase::{gaps, ring_views};

    fn sample_phases(n: usize) -> Vec<f64> {
        // Sorted, unequal gaps, shifted off the seam by a few turns.
        let mut acc = 0.3;
        (0..n)
            .map(|k| {
                acc += 0.2 + 0.37 * ((k * 7 % 5) as f64) / n as f64;
                acc + 2.0 * TAU
            })
            .collect()
    }

    #[test]
    fn first_rows() {
        let o = CirculantOracle::new(5).unwrap();
        assert_eq!(
            o.c.row(0).iter().copied().collect::<Vec<_>>(),
            [0.0, 0.5, 0.0, 0.0, 0.5]
        );
        assert_eq!(
            o.d.row(0).iter().copied().collect::<Vec<_>>(),
            [0.0, 0.5, 0.0, 0.0, -0.5]
        );
        assert_eq!(
            o.h.row(0).iter().copied().collect::<Vec<_>>(),
            [0.0, 0.0, 0.0, 0.0, -1.0]
        );
        assert_eq!(
            o.c.row(2).iter().copied().collect::<Vec<_>>(),
            [0.0, 0.5, 0.0, 0.5, 0.0]
        );
    }

    #[test]
    fn local_formulas_match_matrices() {
        for n in 2..=12 {
            let o = CirculantOracle::new(n).unwrap();
            let phases = sample_phases(n);
            let phi = DVector::from_vec(phases.clone());
            let views = ring_views(&phases);
            let bar = o.phi_bar(&phi);
            let span = o.half_span(&phi);
            let err = o.phase_error(&phi);
            let g = o.gaps(&phi);
            for i in 0..n {
                assert_relative_eq!(views[i].phi_bar, bar[i], epsilon = 1e-12);
                assert_relative_eq!(views[i].half_span, span[i], epsilon = 1e-12);
                assert_relative_eq!(views[i].phase_error(), err[i], epsilon = 1e-12);
                assert_relative_eq!(gaps(&phases)[i], g[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn identities_hold() {
        for n in 2..=12 {
            let o = CirculantOracle::new(n).unwrap();
            for (name, r) in o.identity_residuals() {
                assert!(r < 1e-12, "n={n}: {name} residual {r}");
            }
            assert!(o.min_off_diagonal(2.0) >= 0.0);
            assert_eq!(o.laplacian_rank(), n - 1);
        }
    }

    #[test]
    fn spectra() {
        let s4 = spectrum(4).unwrap();
        for (a, b) in s4.iter().zip([-2.0, -1.0, -1.0, 0.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        // 2x2: [[-1, 1], [1, -1]] has characteristic polynomial l^2 + 2l.
        let s2 = spectrum(2).unwrap();
        assert_relative_eq!(s2[0], -2.0, epsilon = 1e-12);
        assert_relative_eq!(s2[1], 0.0, epsilon = 1e-12);
        for n in 2..=12 {
            let s = spectrum(n).unwrap();
            assert_relative_eq!(s.iter().sum::<f64>(), -(n as f64), epsilon = 1e-9);
            for (a, b) in s.iter().zip(closed_form_spectrum(n)) {
                assert_relative_eq!(*a, b, epsilon = 1e-9);
            }
            assert_eq!(s.iter().filter(|x| x.abs() < 1e-9).count(), 1);
        }
    }

    #[test]
    fn block_pairs_for_three_robots() {
        let b = CirculantOracle::new(3).unwrap().laplacian();
        let pairs = block_eigenpairs(&b, 3.0, 2.0).unwrap();
        assert_eq!(pairs.len(), 6);
        for p in &pairs {
            assert!(p.residual < 1e-9, "{p:?}");
        }
    }

    #[test]
    fn block_roots_zero_and_negative() {
        for r in block_roots(0.0, 3.0, 2.0) {
            assert_eq!(r, Complex::new(0.0, 0.0));
        }
        for (k1, k2) in [(3.0, 2.0), (0.1, 5.0), (10.0, 0.1)] {
            for k in 1..=2000 {
                let mu = -1e-3 * k as f64;
                for r in block_roots(mu, k1, k2) {
                    assert!(r.re < 0.0, "mu={mu} root={r}");
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_rings() {
        assert!(CirculantOracle::new(1).is_err());
    }
}

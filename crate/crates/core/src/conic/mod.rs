//! Dense conic programs over a product of free, nonnegative and PSD cones,
//! and the primal-dual interior-point method that solves them.
//!
//! Standard form:
//!
//! ```text
//! primal:  minimize  cᵀx        subject to  A x = b,  x ∈ K
//! dual:    maximize  bᵀy        subject to  Aᵀy + s = c,  s ∈ K*
//! ```
//!
//! with `K = ℝ^{n_free} × ℝ₊^{n_nonneg} × S₊^{k₁} × … × S₊^{k_p}`. PSD blocks
//! are stored in symmetric vectorized form (lower triangle, column major,
//! off-diagonal entries scaled by √2) so the trace inner product is the
//! Euclidean one.

mod ipm;
mod text;

pub use ipm::{solve, IpmResult, IpmSettings, IpmStatus, IterationRecord};
pub use text::{read_program, write_program};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConeLayout {
    pub n_free: usize,
    pub n_nonneg: usize,
    pub psd_orders: Vec<usize>,
}

impl ConeLayout {
    pub fn new(n_free: usize, n_nonneg: usize, psd_orders: Vec<usize>) -> Self {
        Self { n_free, n_nonneg, psd_orders }
    }

    /// Total length of the variable vector.
    pub fn dim(&self) -> usize {
        self.n_free + self.n_nonneg + self.psd_orders.iter().map(|&k| svec_len(k)).sum::<usize>()
    }

    /// Length of the conic (non-free) part.
    pub fn cone_dim(&self) -> usize {
        self.dim() - self.n_free
    }

    /// Barrier degree: number of nonnegative entries plus the PSD orders.
    pub fn degree(&self) -> usize {
        self.n_nonneg + self.psd_orders.iter().sum::<usize>()
    }

    /// Start offset of each PSD block within the full variable vector.
    pub fn psd_offsets(&self) -> Vec<usize> {
        let mut off = self.n_free + self.n_nonneg;
        self.psd_orders
            .iter()
            .map(|&k| {
                let o = off;
                off += svec_len(k);
                o
            })
            .collect()
    }

    pub fn nonneg_range(&self) -> std::ops::Range<usize> {
        self.n_free..self.n_free + self.n_nonneg
    }

    /// Identity element of the cone part (ones, identity matrices).
    pub fn cone_identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.cone_dim());
        e.rows_mut(0, self.n_nonneg).fill(1.0);
        let mut off = self.n_nonneg;
        for &k in &self.psd_orders {
            for j in 0..k {
                e[off + svec_index(k, j, j)] = 1.0;
            }
            off += svec_len(k);
        }
        e
    }

    /// Smallest eigenvalue of each cone block of a full-length vector:
    /// the nonnegative block as a whole first (if present), then each PSD
    /// block. Free entries are ignored.
    pub fn min_eigenvalues(&self, x: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.psd_orders.len());
        if self.n_nonneg > 0 {
            out.push(x.rows(self.n_free, self.n_nonneg).min());
        }
        for (off, &k) in self.psd_offsets().iter().zip(&self.psd_orders) {
            let m = smat(&x.rows(*off, svec_len(k)).into_owned(), k);
            out.push(SymmetricEigen::new(m).eigenvalues.min());
        }
        out
    }
}

pub fn svec_len(order: usize) -> usize {
    order * (order + 1) / 2
}

/// Position of entry `(i, j)` (either triangle) of an order-`k` matrix in
/// its symmetric vectorization.
pub fn svec_index(k: usize, i: usize, j: usize) -> usize {
    let (r, c) = if i >= j { (i, j) } else { (j, i) };
    // columns 0..c hold k + (k-1) + ... + (k-c+1) entries
    c * k - c * (c.saturating_sub(1)) / 2 + (r - c)
}

pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.nrows();
    let mut v = DVector::zeros(svec_len(k));
    let mut idx = 0;
    for j in 0..k {
        v[idx] = m[(j, j)];
        idx += 1;
        for i in j + 1..k {
            v[idx] = std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]);
            idx += 1;
        }
    }
    v
}

pub fn smat(v: &DVector<f64>, k: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), svec_len(k));
    let mut m = DMatrix::zeros(k, k);
    let mut idx = 0;
    for j in 0..k {
        m[(j, j)] = v[idx];
        idx += 1;
        for i in j + 1..k {
            let x = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
            m[(i, j)] = x;
            m[(j, i)] = x;
            idx += 1;
        }
    }
    m
}

/// A linear conic program in standard form.
///
/// `objective_offset` is a constant added to reported objective values; it
/// does not influence the solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub layout: ConeLayout,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub objective_offset: f64,
}

impl ConicProgram {
    pub fn new(layout: ConeLayout, c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let p = Self { layout, c, a, b, objective_offset: 0.0 };
        p.validate()?;
        Ok(p)
    }

    pub fn num_vars(&self) -> usize {
        self.layout.dim()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layout.dim();
        if self.c.len() != n || self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::DimensionMismatch(format!(
                "layout has {n} variables; c has {}, A is {}×{}, b has {}",
                self.c.len(),
                self.a.nrows(),
                self.a.ncols(),
                self.b.len()
            )));
        }
        if self.layout.psd_orders.contains(&0) {
            return Err(Error::DimensionMismatch("PSD block of order 0".into()));
        }
        let finite = self.c.iter().chain(self.a.iter()).chain(self.b.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::NumericalFailure("program data is not finite".into()));
        }
        Ok(())
    }

    pub fn primal_objective(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(x) + self.objective_offset
    }

    pub fn dual_objective(&self, y: &DVector<f64>) -> f64 {
        self.b.dot(y) + self.objective_offset
    }
}

/// KKT residuals of a primal-dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `‖Ax − b‖ / (1 + ‖b‖)`.
    pub primal_infeasibility: f64,
    /// `‖Aᵀy + s − c‖ / (1 + ‖c‖)`, with the free part of `s` treated as 0.
    pub dual_infeasibility: f64,
    /// Signed objective gap `(cᵀx − bᵀy) / (1 + ‖b‖ + ‖c‖)`.
    pub gap: f64,
}

pub fn residuals(program: &ConicProgram, x: &DVector<f64>, y: &DVector<f64>, s: &DVector<f64>) -> Residuals {
    let nf = program.layout.n_free;
    let rp = &program.a * x - &program.b;
    let mut rd = program.a.tr_mul(y) - &program.c;
    for i in nf..rd.len() {
        rd[i] += s[i];
    }
    let (nb, nc) = (program.b.norm(), program.c.norm());
    Residuals {
        primal_infeasibility: rp.norm() / (1.0 + nb),
        dual_infeasibility: rd.norm() / (1.0 + nc),
        gap: (program.c.dot(x) - program.b.dot(y)) / (1.0 + nb + nc),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svec_round_trip_and_inner_product() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 2.0, 1.0, 5.0, 3.0, 2.0, 3.0, 6.0]);
        let n = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.5, -1.0, 2.0, 0.0, 0.5, 0.0, 3.0]);
        assert!((smat(&svec(&m), 3) - &m).amax() < 1e-14);
        let tr = (&m * &n).trace();
        assert!((svec(&m).dot(&svec(&n)) - tr).abs() < 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                let v = svec(&m);
                let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                assert!((v[svec_index(3, i, j)] - scale * m[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layout_sizes() {
        let l = ConeLayout::new(2, 3, vec![4, 1]);
        assert_eq!(l.dim(), 2 + 3 + 10 + 1);
        assert_eq!(l.degree(), 3 + 5);
        assert_eq!(l.psd_offsets(), vec![5, 15]);
        let e = l.cone_identity();
        assert_eq!(e.sum(), 3.0 + 4.0 + 1.0);
    }
}

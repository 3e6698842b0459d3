#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use twoway_toa::conic::{svec, ConeLayout, ConicProgram};

/// A conic program generated from a known strictly complementary
/// primal-dual pair, so its optimal value is known before solving.
pub struct ConstructedProgram {
    pub program: ConicProgram,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub optimum: f64,
}

fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_orthogonal(rng: &mut impl Rng, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(k, k, |_, _| gauss(rng));
    g.qr().q()
}

/// Builds the solution first (x*, y*, s* with x*ᵀs* = 0 and x* + s* in the
/// cone interior), then random data `A`, `b = A x*`, `c = Aᵀy* + s*`.
pub fn constructed_program(rng: &mut impl Rng) -> ConstructedProgram {
    let n_free = rng.gen_range(0..=3);
    let n_nonneg = rng.gen_range(0..=5);
    let blocks = rng.gen_range(1..=3);
    let psd_orders: Vec<usize> = (0..blocks).map(|_| rng.gen_range(1..=6)).collect();
    let layout = ConeLayout::new(n_free, n_nonneg, psd_orders.clone());
    let n = layout.dim();

    let mut x = DVector::zeros(n);
    let mut s = DVector::zeros(n);
    for i in 0..n_free {
        x[i] = gauss(rng);
    }
    for i in layout.nonneg_range() {
        let v = rng.gen_range(0.5..2.0);
        if rng.gen_bool(0.5) {
            x[i] = v;
        } else {
            s[i] = v;
        }
    }
    for (off, &k) in layout.psd_offsets().iter().zip(&psd_orders) {
        let q = random_orthogonal(rng, k);
        let rank = rng.gen_range(0..=k);
        let dx = DVector::from_fn(k, |i, _| if i < rank { rng.gen_range(0.5..2.0) } else { 0.0 });
        let ds = DVector::from_fn(k, |i, _| if i >= rank { rng.gen_range(0.5..2.0) } else { 0.0 });
        let xm = &q * DMatrix::from_diagonal(&dx) * q.transpose();
        let sm = &q * DMatrix::from_diagonal(&ds) * q.transpose();
        x.rows_mut(*off, k * (k + 1) / 2).copy_from(&svec(&xm));
        s.rows_mut(*off, k * (k + 1) / 2).copy_from(&svec(&sm));
    }

    let m = (n_free + rng.gen_range(1..=n.saturating_sub(n_free).max(1))).min(n);
    let a = DMatrix::from_fn(m, n, |_, _| gauss(rng));
    let y = DVector::from_fn(m, |_, _| gauss(rng));
    let b = &a * &x;
    let c = a.tr_mul(&y) + &s;
    let optimum = c.dot(&x);
    let program = ConicProgram::new(layout, c, a, b).unwrap();
    ConstructedProgram { program, x, y, s, optimum }
}

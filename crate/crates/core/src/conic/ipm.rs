//! Infeasible-start primal-dual path-following method with Nesterov-Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! Free variables stay in the KKT system: after eliminating the conic part
//! the search direction solves the saddle-point system
//!
//! ```text
//! [ A_c H⁻¹ A_cᵀ   A_f ] [Δy  ]   [ r_p − A_c (W⁻¹t − H⁻¹ r_d,c) ]
//! [ A_fᵀ           0   ] [Δx_f] = [ r_d,f                        ]
//! ```
//!
//! where `W` is the NT scaling (`W x = W⁻ᵀ s = λ`), `H = WᵀW` and `t` is the
//! scaled complementarity target.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{smat, svec, svec_len, ConicProgram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSettings {
    pub max_iter: usize,
    /// Relative duality gap tolerance.
    pub tol_gap: f64,
    /// Relative primal and dual infeasibility tolerance.
    pub tol_feas: f64,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    /// Iterations allowed past the first point meeting the tolerances. The
    /// iterate with the smallest gap among those meeting them is returned;
    /// iteration stops early once the steps shrink below 0.2.
    pub polish_iters: usize,
    /// Print one trace line per iteration to stderr.
    pub verbose: bool,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol_gap: 1e-7,
            tol_feas: 1e-7,
            step_fraction: 0.98,
            polish_iters: 0,
            verbose: false,
        }
    }
}

impl IpmSettings {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = |t: f64| t > 0.0 && t <= 1e-2;
        if !tol_ok(self.tol_gap) || !tol_ok(self.tol_feas) {
            return Err(Error::InvalidScenario(format!(
                "solver tolerances must lie in (0, 1e-2], got gap {} feas {}",
                self.tol_gap, self.tol_feas
            )));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(Error::InvalidScenario(format!(
                "step fraction must lie in (0, 1), got {}",
                self.step_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum IpmStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
    Infeasible,
}

/// State of one iterate, recorded before its step is taken.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `xᵀs` over the conic part.
    pub complementarity: f64,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// Smallest eigenvalue over all conic blocks of `x` and of `s`.
    pub min_eig_x: f64,
    pub min_eig_s: f64,
    /// Step lengths taken from this iterate (0 on the final record).
    pub step_primal: f64,
    pub step_dual: f64,
    pub centering: f64,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub s: DVector<f64>,
    pub status: IpmStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub trace: Vec<IterationRecord>,
    pub message: Option<String>,
}

/// Conic blocks of the non-free part of the variable vector.
struct Cones {
    n_nonneg: usize,
    /// (offset within the conic part, order)
    psd: Vec<(usize, usize)>,
    dim: usize,
    degree: f64,
}

impl Cones {
    fn new(program: &ConicProgram) -> Self {
        let l = &program.layout;
        let mut off = l.n_nonneg;
        let psd = l
            .psd_orders
            .iter()
            .map(|&k| {
                let o = off;
                off += svec_len(k);
                (o, k)
            })
            .collect();
        Self {
            n_nonneg: l.n_nonneg,
            psd,
            dim: l.cone_dim(),
            degree: l.degree() as f64,
        }
    }

    fn block(&self, v: &DVector<f64>, off: usize, k: usize) -> DMatrix<f64> {
        smat(&v.rows(off, svec_len(k)).into_owned(), k)
    }

    fn identity(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.dim);
        e.rows_mut(0, self.n_nonneg).fill(1.0);
        for &(off, k) in &self.psd {
            for j in 0..k {
                e[off + super::svec_index(k, j, j)] = 1.0;
            }
        }
        e
    }

    /// Strict interior test that matches what the scaling needs: positive
    /// nonnegative entries and a successful Cholesky factorization of every
    /// PSD block.
    fn interior(&self, v: &DVector<f64>) -> bool {
        v.rows(0, self.n_nonneg).iter().all(|&x| x > 0.0)
            && self.psd.iter().all(|&(off, k)| Cholesky::new(self.block(v, off, k)).is_some())
    }

    fn min_eig(&self, v: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        if self.n_nonneg > 0 {
            m = v.rows(0, self.n_nonneg).min();
        }
        for &(off, k) in &self.psd {
            m = m.min(SymmetricEigen::new(self.block(v, off, k)).eigenvalues.min());
        }
        m
    }
}

struct PsdScaling {
    off: usize,
    order: usize,
    r: DMatrix<f64>,
    /// `R⁻ᵀ`
    rti: DMatrix<f64>,
    /// `R Rᵀ`
    p: DMatrix<f64>,
    lambda: DVector<f64>,
}

/// Nesterov-Todd scaling at the current iterate.
struct Scaling {
    /// `√(x/s)` on the nonnegative block.
    w: DVector<f64>,
    /// `√(x s)` on the nonnegative block.
    lambda_lp: DVector<f64>,
    psd: Vec<PsdScaling>,
}

fn map_psd(
    v: &DVector<f64>,
    out: &mut DVector<f64>,
    off: usize,
    k: usize,
    f: impl FnOnce(DMatrix<f64>) -> DMatrix<f64>,
) {
    let m = smat(&v.rows(off, svec_len(k)).into_owned(), k);
    out.rows_mut(off, svec_len(k)).copy_from(&svec(&f(m)));
}

impl Scaling {
    fn new(cones: &Cones, xc: &DVector<f64>, sc: &DVector<f64>) -> std::result::Result<Self, String> {
        let nn = cones.n_nonneg;
        let mut w = DVector::zeros(nn);
        let mut lambda_lp = DVector::zeros(nn);
        for i in 0..nn {
            let (x, s) = (xc[i], sc[i]);
            if !(x > 0.0 && s > 0.0) {
                return Err(format!("nonnegative entry {i} left the cone (x={x:e}, s={s:e})"));
            }
            w[i] = (x / s).sqrt();
            lambda_lp[i] = (x * s).sqrt();
        }
        let mut psd = Vec::with_capacity(cones.psd.len());
        for &(off, k) in &cones.psd {
            let x = cones.block(xc, off, k);
            let s = cones.block(sc, off, k);
            let lx = Cholesky::new(x).ok_or("primal PSD block lost definiteness")?.l();
            let ls = Cholesky::new(s).ok_or("dual PSD block lost definiteness")?.l();
            let svd = (ls.transpose() * &lx).svd(true, true);
            let (u, vt) = match (svd.u, svd.v_t) {
                (Some(u), Some(vt)) => (u, vt),
                _ => return Err("SVD of the scaling product failed".into()),
            };
            let lambda = svd.singular_values;
            if lambda.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return Err("degenerate NT scaling".into());
            }
            let inv_sqrt = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l.sqrt()));
            let r = lx * vt.transpose() * &inv_sqrt;
            let rti = ls * u * inv_sqrt;
            let p = &r * r.transpose();
            psd.push(PsdScaling { off, order: k, r, rti, p, lambda });
        }
        Ok(Self { w, lambda_lp, psd })
    }

    /// `H⁻¹ v = W⁻¹ W⁻ᵀ v`.
    fn hinv(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for i in 0..self.w.len() {
            out[i] *= self.w[i] * self.w[i];
        }
        for b in &self.psd {
            map_psd(v, &mut out, b.off, b.order, |m| &b.p * m * &b.p);
        }
        out
    }

    /// `W⁻¹ t`.
    fn winv(&self, t: &DVector<f64>) -> DVector<f64> {
        let mut out = t.clone();
        for i in 0..self.w.len() {
            out[i] *= self.w[i];
        }
        for b in &self.psd {
            map_psd(t, &mut out, b.off, b.order, |m| &b.r * m * b.r.transpose());
        }
        out
    }

    /// `W Δx`.
    fn scale_primal(&self, dx: &DVector<f64>) -> DVector<f64> {
        let mut out = dx.clone();
        for i in 0..self.w.len() {
            out[i] /= self.w[i];
        }
        for b in &self.psd {
            map_psd(dx, &mut out, b.off, b.order, |m| b.rti.transpose() * m * &b.rti);
        }
        out
    }

    /// `W⁻ᵀ Δs`.
    fn scale_dual(&self, ds: &DVector<f64>) -> DVector<f64> {
        let mut out = ds.clone();
        for i in 0..self.w.len() {
            out[i] *= self.w[i];
        }
        for b in &self.psd {
            map_psd(ds, &mut out, b.off, b.order, |m| b.r.transpose() * m * &b.r);
        }
        out
    }

    /// Solves `λ ∘ t = z` for `t`.
    fn lambda_div(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = z.clone();
        for i in 0..self.lambda_lp.len() {
            out[i] /= self.lambda_lp[i];
        }
        for b in &self.psd {
            let l = &b.lambda;
            map_psd(z, &mut out, b.off, b.order, |mut m| {
                for j in 0..b.order {
                    for i in 0..b.order {
                        m[(i, j)] *= 2.0 / (l[i] + l[j]);
                    }
                }
                m
            });
        }
        out
    }

    /// `λ ∘ λ`.
    fn lambda_sq(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for i in 0..self.lambda_lp.len() {
            out[i] = self.lambda_lp[i] * self.lambda_lp[i];
        }
        for b in &self.psd {
            let d = DMatrix::from_diagonal(&b.lambda.map(|l| l * l));
            out.rows_mut(b.off, svec_len(b.order)).copy_from(&svec(&d));
        }
        out
    }

    fn lambda(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        out.rows_mut(0, self.lambda_lp.len()).copy_from(&self.lambda_lp);
        for b in &self.psd {
            let d = DMatrix::from_diagonal(&b.lambda);
            out.rows_mut(b.off, svec_len(b.order)).copy_from(&svec(&d));
        }
        out
    }

    /// Largest `α` with `λ + α u` in the cone (∞ if unbounded).
    fn max_step(&self, u: &DVector<f64>) -> f64 {
        let mut alpha = f64::INFINITY;
        for i in 0..self.lambda_lp.len() {
            if u[i] < 0.0 {
                alpha = alpha.min(-self.lambda_lp[i] / u[i]);
            }
        }
        for b in &self.psd {
            let mut m = smat(&u.rows(b.off, svec_len(b.order)).into_owned(), b.order);
            let isq = b.lambda.map(|l| 1.0 / l.sqrt());
            for j in 0..b.order {
                for i in 0..b.order {
                    m[(i, j)] *= isq[i] * isq[j];
                }
            }
            let e = SymmetricEigen::new(m).eigenvalues.min();
            if e < 0.0 {
                alpha = alpha.min(-1.0 / e);
            }
        }
        alpha
    }
}

fn jordan(cones: &Cones, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(cones.dim);
    for i in 0..cones.n_nonneg {
        out[i] = u[i] * v[i];
    }
    for &(off, k) in &cones.psd {
        let a = cones.block(u, off, k);
        let b = cones.block(v, off, k);
        let p = (&a * &b + &b * &a) * 0.5;
        out.rows_mut(off, svec_len(k)).copy_from(&svec(&p));
    }
    out
}

enum Factor {
    Cholesky(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// Newton system of one iteration, factored once and reused for the
/// predictor and corrector. Without free variables it is the SPD Schur
/// complement; otherwise the saddle-point system `[S A_f; A_fᵀ 0]`.
struct KktSystem {
    factor: Factor,
    k: DMatrix<f64>,
    m: usize,
}

impl KktSystem {
    fn new(a_c: &DMatrix<f64>, a_f: &DMatrix<f64>, schur: DMatrix<f64>) -> Self {
        let m = a_c.nrows();
        let nf = a_f.ncols();
        if nf == 0 {
            // near the optimum the Schur complement can lose definiteness to
            // rounding; a tiny diagonal shift restores it and the refinement
            // step below corrects against the unshifted matrix
            let scale = schur.diagonal().amax().max(f64::MIN_POSITIVE);
            for shift in [0.0, 1e-14, 1e-12, 1e-10] {
                let mut shifted = schur.clone();
                for i in 0..m {
                    shifted[(i, i)] += shift * scale;
                }
                if let Some(ch) = Cholesky::new(shifted) {
                    return Self { factor: Factor::Cholesky(ch), k: schur, m };
                }
            }
            return Self { factor: Factor::Lu(schur.clone().lu()), k: schur, m };
        }
        let mut k = DMatrix::zeros(m + nf, m + nf);
        k.view_mut((0, 0), (m, m)).copy_from(&schur);
        k.view_mut((0, m), (m, nf)).copy_from(a_f);
        k.view_mut((m, 0), (nf, m)).copy_from(&a_f.transpose());
        Self { factor: Factor::Lu(k.clone().lu()), k, m }
    }

    fn raw_solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        match &self.factor {
            Factor::Cholesky(ch) => Some(ch.solve(rhs)),
            Factor::Lu(lu) => lu.solve(rhs),
        }
    }

    fn solve(&self, top: &DVector<f64>, bottom: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
        let mut rhs = DVector::zeros(self.k.nrows());
        rhs.rows_mut(0, self.m).copy_from(top);
        rhs.rows_mut(self.m, bottom.len()).copy_from(bottom);
        let mut z = self.raw_solve(&rhs)?;
        // one step of iterative refinement
        let res = &rhs - &self.k * &z;
        if let Some(dz) = self.raw_solve(&res) {
            z += dz;
        }
        if z.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((z.rows(0, self.m).into_owned(), z.rows(self.m, bottom.len()).into_owned()))
    }
}

/// `A_c H⁻¹ A_cᵀ`.
fn schur_complement(cones: &Cones, a_c: &DMatrix<f64>, scaling: &Scaling) -> DMatrix<f64> {
    let m = a_c.nrows();
    let mut schur = DMatrix::zeros(m, m);
    let nn = cones.n_nonneg;
    if nn > 0 {
        let a_lp = a_c.columns(0, nn);
        let mut scaled = a_lp.clone_owned();
        for j in 0..nn {
            let w2 = scaling.w[j] * scaling.w[j];
            scaled.column_mut(j).scale_mut(w2);
        }
        schur += &scaled * a_lp.transpose();
    }
    for b in &scaling.psd {
        let len = svec_len(b.order);
        let a_b = a_c.columns(b.off, len);
        let mut t = DMatrix::zeros(len, m);
        for row in 0..m {
            let a_row = a_b.row(row).transpose();
            if a_row.iter().all(|&v| v == 0.0) {
                continue;
            }
            let am = smat(&a_row, b.order);
            t.column_mut(row).copy_from(&svec(&(&b.p * am * &b.p)));
        }
        schur += a_b * t;
    }
    (&schur + schur.transpose()) * 0.5
}

/// Indices of a maximal linearly independent subset of the rows of `a`,
/// by modified Gram-Schmidt in the given row order.
fn independent_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..a.nrows() {
        let mut r = a.row(i).transpose();
        let norm0 = r.norm();
        if norm0 == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&r);
                r.axpy(-d, q, 1.0);
            }
        }
        let nr = r.norm();
        if nr > 1e-10 * norm0 {
            basis.push(r / nr);
            keep.push(i);
        }
    }
    keep
}

/// `(x_f, x_c, y, s)` or the matching directions.
type Quad = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Initial point: minimum-norm primal and dual solutions of the equality
/// constraints, shifted into the cone interior along the identity.
fn initial_point(
    cones: &Cones,
    a_c: &DMatrix<f64>,
    a_f: &DMatrix<f64>,
    b: &DVector<f64>,
    c_f: &DVector<f64>,
    c_c: &DVector<f64>,
) -> Option<Quad> {
    let kkt = KktSystem::new(a_c, a_f, a_c * a_c.transpose());
    let m = a_c.nrows();
    let nf = a_f.ncols();
    let (z, xf) = kkt.solve(b, &DVector::zeros(nf))?;
    let mut xc = a_c.tr_mul(&z);
    let (y, _) = kkt.solve(&(a_c * c_c), c_f)?;
    let mut sc = c_c - a_c.tr_mul(&y);
    debug_assert_eq!(y.len(), m);

    let e = cones.identity();
    let shift = |v: &mut DVector<f64>| {
        let floor = (v.norm() / cones.degree.sqrt()).max(1.0);
        let lo = cones.min_eig(v);
        if lo < floor {
            v.axpy(floor - lo, &e, 1.0);
        }
    };
    shift(&mut xc);
    shift(&mut sc);
    Some((xf, xc, y, sc))
}

#[derive(Clone)]
struct Point {
    xf: DVector<f64>,
    xc: DVector<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
}

/// Exact elimination of free variables whose constraint block has full
/// column rank. With `A_f = Q₁R` and `Q₂` spanning the complement, the
/// remaining problem is `min ĉᵀx_c + κ` s.t. `Q₂ᵀA_c x_c = Q₂ᵀb`, and
/// `x_f = R⁻¹Q₁ᵀ(b − A_c x_c)`, `y = Q₂ŷ + Q₁R⁻ᵀc_f`. This keeps the
/// iteration free of the indefinite saddle-point system.
struct FreeElimination {
    q1: DMatrix<f64>,
    q2: DMatrix<f64>,
    r: DMatrix<f64>,
    /// `Q₁R⁻ᵀc_f`
    y0: DVector<f64>,
}

impl FreeElimination {
    fn new(a_f: &DMatrix<f64>, c_f: &DVector<f64>) -> Option<Self> {
        let (m, nf) = a_f.shape();
        if nf == 0 || nf >= m {
            return None;
        }
        let qr = a_f.clone().qr();
        let r = qr.r();
        let rmax = r.diagonal().amax();
        if r.diagonal().iter().any(|d| d.abs() <= 1e-10 * rmax) {
            return None;
        }
        // full Q from Householder reflections applied to the identity
        let mut q = DMatrix::identity(m, m);
        qr.q_tr_mul(&mut q);
        let q = q.transpose();
        let q1 = q.columns(0, nf).into_owned();
        let q2 = q.columns(nf, m - nf).into_owned();
        let w = r.transpose().solve_lower_triangular(c_f)?;
        let y0 = &q1 * w;
        Some(Self { q1, q2, r, y0 })
    }

    fn free_part(&self, b: &DVector<f64>, a_c: &DMatrix<f64>, xc: &DVector<f64>) -> DVector<f64> {
        let rhs = self.q1.tr_mul(&(b - a_c * xc));
        self.r.solve_upper_triangular(&rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN))
    }
}

pub fn solve(program: &ConicProgram, settings: &IpmSettings) -> Result<IpmResult> {
    program.validate()?;
    settings.validate()?;
    let start = Instant::now();
    let nf = program.layout.n_free;
    let n = program.num_vars();
    let m_all = program.num_constraints();
    let cones = Cones::new(program);

    let rows = independent_rows(&program.a);
    if rows.len() < m_all {
        log::warn!(
            "dropping {} linearly dependent equality rows",
            m_all - rows.len()
        );
    }
    let a = program.a.select_rows(rows.iter());
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| program.b[i]));
    let a_f = a.columns(0, nf).into_owned();
    let a_c = a.columns(nf, cones.dim).into_owned();
    let c_f = program.c.rows(0, nf).into_owned();
    let c_c = program.c.rows(nf, cones.dim).into_owned();
    let (nb, nc) = (b.norm(), program.c.norm());

    // working problem: min c_wᵀx + κ over (free_w × cones), A_w x = b_w
    let elim = FreeElimination::new(&a_f, &c_f);
    let (wa_f, wa_c, wb, wc_f, wc_c, kappa) = match &elim {
        Some(e) => (
            DMatrix::zeros(e.q2.ncols(), 0),
            e.q2.tr_mul(&a_c),
            e.q2.tr_mul(&b),
            DVector::zeros(0),
            &c_c - a_c.tr_mul(&e.y0),
            e.y0.dot(&b),
        ),
        None => (a_f.clone(), a_c.clone(), b.clone(), c_f.clone(), c_c.clone(), 0.0),
    };
    let wnf = wa_f.ncols();

    let expand_y = |y: &DVector<f64>| {
        let mut full = DVector::zeros(m_all);
        for (k, &i) in rows.iter().enumerate() {
            full[i] = y[k];
        }
        full
    };

    let mut trace = Vec::new();
    let finish = |pt: &Point, status: IpmStatus, trace: Vec<IterationRecord>, message: Option<String>| {
        let (xf, y) = match &elim {
            Some(e) => (e.free_part(&b, &a_c, &pt.xc), &e.q2 * &pt.y + &e.y0),
            None => (pt.xf.clone(), pt.y.clone()),
        };
        let mut x = DVector::zeros(n);
        x.rows_mut(0, nf).copy_from(&xf);
        x.rows_mut(nf, cones.dim).copy_from(&pt.xc);
        let mut s = DVector::zeros(n);
        s.rows_mut(nf, cones.dim).copy_from(&pt.s);
        let y = expand_y(&y);
        let res = super::residuals(program, &x, &y, &s);
        let pobj = program.c.dot(&x);
        let dobj = program.b.dot(&y);
        let comp = pt.xc.dot(&pt.s);
        IpmResult {
            primal_objective: pobj + program.objective_offset,
            dual_objective: dobj + program.objective_offset,
            relative_gap: comp.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs()),
            primal_infeasibility: res.primal_infeasibility,
            dual_infeasibility: res.dual_infeasibility,
            iterations: trace.len().saturating_sub(1),
            wall_time: start.elapsed().as_secs_f64(),
            x,
            y,
            s,
            status,
            trace,
            message,
        }
    };

    let Some((xf, xc, y, sc)) = initial_point(&cones, &wa_c, &wa_f, &wb, &wc_f, &wc_c) else {
        let pt = Point {
            xf: DVector::zeros(wnf),
            xc: cones.identity(),
            y: DVector::zeros(wb.len()),
            s: cones.identity(),
        };
        return Ok(finish(&pt, IpmStatus::NumericalFailure, trace, Some("initial KKT system is singular".into())));
    };
    let mut pt = Point { xf, xc, y, s: sc };
    // best converged iterate while polishing: (point, gap, iterations left)
    let mut polished: Option<(Point, f64, usize)> = None;

    for iter in 0..=settings.max_iter {
        let xc = &pt.xc;
        let r_p = &wb - &wa_f * &pt.xf - &wa_c * xc;
        let r_df = &wc_f - wa_f.tr_mul(&pt.y);
        let r_dc = &wc_c - wa_c.tr_mul(&pt.y) - &pt.s;
        let pobj = wc_c.dot(xc) + wc_f.dot(&pt.xf) + kappa;
        let dobj = wb.dot(&pt.y) + kappa;
        let comp = xc.dot(&pt.s);
        let mu = comp / cones.degree.max(1.0);
        let pinf = r_p.norm() / (1.0 + nb);
        let dinf = (r_df.norm_squared() + r_dc.norm_squared()).sqrt() / (1.0 + nc);
        let rel_gap = comp.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());

        let mut record = IterationRecord {
            iter,
            primal_objective: pobj + program.objective_offset,
            dual_objective: dobj + program.objective_offset,
            complementarity: comp,
            relative_gap: rel_gap,
            primal_infeasibility: pinf,
            dual_infeasibility: dinf,
            min_eig_x: cones.min_eig(xc),
            min_eig_s: cones.min_eig(&pt.s),
            step_primal: 0.0,
            step_dual: 0.0,
            centering: 0.0,
        };
        let log_record = |r: &IterationRecord| {
            if settings.verbose {
                eprintln!(
                    "ipm {:3}  pobj {:+.8e}  dobj {:+.8e}  gap {:.2e}  pinf {:.2e}  dinf {:.2e}  ap {:.3}  ad {:.3}  sigma {:.2e}",
                    r.iter, r.primal_objective, r.dual_objective, r.relative_gap,
                    r.primal_infeasibility, r.dual_infeasibility, r.step_primal, r.step_dual, r.centering
                );
            }
        };

        if rel_gap <= settings.tol_gap && pinf <= settings.tol_feas && dinf <= settings.tol_feas {
            let left = match &polished {
                None => settings.polish_iters,
                Some((_, g, left)) if rel_gap < *g => *left,
                Some(_) => usize::MAX,
            };
            if left != usize::MAX {
                polished = Some((pt.clone(), rel_gap, left));
            }
        }
        let stalled = trace.last().is_some_and(|r: &IterationRecord| r.step_primal.min(r.step_dual) < 0.2);
        if let Some((best, _, left)) = &mut polished {
            if *left == 0 || stalled || iter == settings.max_iter {
                log_record(&record);
                trace.push(record);
                return Ok(finish(best, IpmStatus::Optimal, trace, None));
            }
            *left -= 1;
        }
        // infeasibility certificates, on the homogeneous parts of the data
        let dual_ray = (wa_f.tr_mul(&pt.y).norm_squared() + (wa_c.tr_mul(&pt.y) + &pt.s).norm_squared()).sqrt();
        let by = wb.dot(&pt.y);
        if by > 0.0 && dual_ray <= settings.tol_feas * by && pinf > settings.tol_feas {
            log_record(&record);
            trace.push(record);
            return Ok(finish(&pt, IpmStatus::Infeasible, trace, Some("primal infeasible".into())));
        }
        let primal_ray = (&wa_f * &pt.xf + &wa_c * xc).norm();
        let cx = wc_c.dot(xc) + wc_f.dot(&pt.xf);
        if cx < 0.0 && primal_ray <= settings.tol_feas * -cx && dinf > settings.tol_feas {
            log_record(&record);
            trace.push(record);
            return Ok(finish(&pt, IpmStatus::Infeasible, trace, Some("dual infeasible (primal unbounded)".into())));
        }
        if iter == settings.max_iter {
            log_record(&record);
            trace.push(record);
            return Ok(finish(&pt, IpmStatus::MaxIter, trace, None));
        }

        let fail = |pt: &Point, mut trace: Vec<IterationRecord>, record: IterationRecord, msg: String| {
            trace.push(record);
            match &polished {
                Some((best, _, _)) => Ok(finish(best, IpmStatus::Optimal, trace, None)),
                None => Ok(finish(pt, IpmStatus::NumericalFailure, trace, Some(msg))),
            }
        };
        let scaling = match Scaling::new(&cones, xc, &pt.s) {
            Ok(s) => s,
            Err(msg) => return fail(&pt, trace, record, msg),
        };
        let kkt = KktSystem::new(&wa_c, &wa_f, schur_complement(&cones, &wa_c, &scaling));
        let hinv_rdc = scaling.hinv(&r_dc);

        let direction = |t: &DVector<f64>| -> Option<Quad> {
            let winv_t = scaling.winv(t);
            let top = &r_p - &wa_c * (&winv_t - &hinv_rdc);
            let (dy, dxf) = kkt.solve(&top, &r_df)?;
            let atdy = wa_c.tr_mul(&dy);
            let dxc = scaling.hinv(&(&atdy - &r_dc)) + winv_t;
            let dsc = &r_dc - atdy;
            Some((dxf, dxc, dy, dsc))
        };

        let lambda = scaling.lambda(cones.dim);
        // predictor
        let Some((_, dxc_a, _, dsc_a)) = direction(&(-&lambda)) else {
            return fail(&pt, trace, record, "singular KKT system".into());
        };
        let u_a = scaling.scale_primal(&dxc_a);
        let w_a = scaling.scale_dual(&dsc_a);
        let ap = scaling.max_step(&u_a).min(1.0);
        let ad = scaling.max_step(&w_a).min(1.0);
        let mu_aff = (xc + &dxc_a * ap).dot(&(&pt.s + &dsc_a * ad)) / cones.degree.max(1.0);
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let target = cones.identity() * (sigma * mu) - scaling.lambda_sq(cones.dim) - jordan(&cones, &u_a, &w_a);
        let t = scaling.lambda_div(&target);
        let Some((dxf, dxc, dy, dsc)) = direction(&t) else {
            return fail(&pt, trace, record, "singular KKT system".into());
        };
        let u = scaling.scale_primal(&dxc);
        let w = scaling.scale_dual(&dsc);
        let mut ap = (settings.step_fraction * scaling.max_step(&u)).min(1.0);
        let mut ad = (settings.step_fraction * scaling.max_step(&w)).min(1.0);
        // the step bound is exact in exact arithmetic; near the boundary
        // rounding can still leave a block numerically indefinite
        let mut xc_new = xc + &dxc * ap;
        while !cones.interior(&xc_new) && ap > 1e-12 {
            ap *= 0.5;
            xc_new = xc + &dxc * ap;
        }
        let mut s_new = &pt.s + &dsc * ad;
        while !cones.interior(&s_new) && ad > 1e-12 {
            ad *= 0.5;
            s_new = &pt.s + &dsc * ad;
        }
        if !(ap > 1e-12 && ad > 1e-12) {
            return fail(&pt, trace, record, format!("step length collapsed (primal {ap:e}, dual {ad:e})"));
        }
        record.step_primal = ap;
        record.step_dual = ad;
        record.centering = sigma;
        log_record(&record);
        trace.push(record);

        pt = Point { xf: &pt.xf + dxf * ap, xc: xc_new, y: &pt.y + dy * ad, s: s_new };
    }
    unreachable!("loop returns on the final iteration")
}

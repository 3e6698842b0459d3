//! Semidefinite relaxation of the two-way TOA maximum-likelihood problem for
//! a moving device, assembled as a [`ConicProgram`].
//!
//! The weighted least-squares cost is rewritten as a linear function of the
//! lifted variables `g = [g_ρ; g_τ; B; Ω]` (request ranges, response ranges,
//! clock offset and drift) and `G = ggᵀ`. Auxiliary scalars `y = pᵀp`,
//! `f = vᵀv`, `ψ = 2pᵀv` and `z_i = ‖p + v δt_i‖²` make the diagonal of `G`
//! linear in the unknowns, and the rank-one equalities are relaxed to four
//! PSD blocks:
//!
//! ```text
//! S₁ = [G g; gᵀ 1]    S₂ = [I p; pᵀ y]    S₃ = [I v; vᵀ f]    S₄ = [I p+v; (p+v)ᵀ y+f+ψ]
//! ```
//!
//! The program is built in a normalized frame: anchors are centered on
//! their centroid, lengths are divided by [`SdpOptions::length_unit`],
//! times by the largest reply delay, a coarse clock offset and drift fitted
//! from `τ − ρ` are removed from the measurements, and weights are divided by
//! their maximum. Each of these is an affine change of variables under which
//! the relaxed feasible set maps onto itself (the PSD blocks transform by
//! congruence), so the relaxation is unchanged; only its conditioning
//! improves. The regularization of [`SdpOptions::regularization`] is defined
//! in this frame.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conic::{self, smat, svec, svec_index, svec_len, ConeLayout, ConicProgram, IpmResult, IpmSettings, IpmStatus};
use crate::error::{Error, Result};
use crate::measurement::{TwoWayMeasurements, WeightMatrix};
use crate::model::{StateVector, UdState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Full model: position, velocity, clock offset and drift.
    Moving,
    /// Velocity pinned to zero (the conventional model that ignores motion).
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpOptions {
    /// Impose `g ≥ 0` on the response ranges as well as the request ranges.
    pub nonneg_response_ranges: bool,
    /// Length unit of the normalized frame, meters.
    pub length_unit: f64,
    /// Weight `ε` of the term `ε(y + f)` added to the frame objective.
    /// Every direction in which the optimal set is unbounded adds a PSD term
    /// to `G` along the null space of `A`, which leaves the cost unchanged and
    /// raises `y` or `f` while keeping `p` and `v` fixed. The term bounds the
    /// optimal set and makes the dual strictly feasible. It also biases the
    /// estimate by roughly `2·10³ ε` meters at the default frame; zero gives
    /// the plain relaxation.
    pub regularization: f64,
    pub solver: IpmSettings,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            nonneg_response_ranges: true,
            length_unit: 1e3,
            regularization: 1e-7,
            solver: IpmSettings { tol_gap: 1e-8, tol_feas: 1e-8, polish_iters: 30, ..IpmSettings::default() },
        }
    }
}

/// `A = [A_ρ; A_τ]` with `A_ρ = [I, O, −1, 0]` and `A_τ = [O, I, 1, λ]`, so
/// that `γ = A g` for noiseless data. Columns follow `g = [g_ρ; g_τ; B; Ω]`.
pub fn build_a(delays: &[f64]) -> DMatrix<f64> {
    let m = delays.len();
    let mut a = DMatrix::zeros(2 * m, 2 * m + 2);
    for (i, &dt) in delays.iter().enumerate() {
        a[(i, i)] = 1.0;
        a[(i, 2 * m)] = -1.0;
        a[(m + i, m + i)] = 1.0;
        a[(m + i, 2 * m)] = 1.0;
        a[(m + i, 2 * m + 1)] = dt;
    }
    a
}

/// One linear equality `coeffsᵀ g = rhs` over the lifted vector `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: DVector<f64>,
    pub rhs: f64,
}

impl LinearRow {
    pub fn residual(&self, g: &DVector<f64>) -> f64 {
        self.coeffs.dot(g) - self.rhs
    }
}

/// Zero-derivative conditions of the weighted cost with respect to the clock
/// offset and the clock drift, both linear in `g`:
///
/// ```text
/// (A_ρ g − ρ)ᵀ W_ρ 1 + (τ − A_τ g)ᵀ W_τ 1 = 0
/// (τ − A_τ g)ᵀ W_τ λ = 0
/// ```
pub fn stationarity_constraints(
    measurements: &TwoWayMeasurements,
    weights: &WeightMatrix,
    a: &DMatrix<f64>,
) -> Result<[LinearRow; 2]> {
    let m = measurements.len();
    if weights.len() != 2 * m || a.nrows() != 2 * m || a.ncols() != 2 * m + 2 {
        return Err(Error::DimensionMismatch(format!(
            "{m} anchors with {} weights and a {}×{} model matrix",
            weights.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    let w = weights.diagonal();
    let a_rho = a.rows(0, m);
    let a_tau = a.rows(m, m);
    let w_rho = w.rows(0, m);
    let w_tau = w.rows(m, m);
    let rho = DVector::from_column_slice(&measurements.rho);
    let tau = DVector::from_column_slice(&measurements.tau);
    let lambda = DVector::from_column_slice(&measurements.delays);

    // (A_ρ g)ᵀ W_ρ 1 − (A_τ g)ᵀ W_τ 1 = ρᵀW_ρ1 − τᵀW_τ1
    let coeffs_b = a_rho.tr_mul(&w_rho) - a_tau.tr_mul(&w_tau);
    let rhs_b = rho.dot(&w_rho) - tau.dot(&w_tau);
    // (A_τ g)ᵀ W_τ λ = τᵀ W_τ λ
    let wl = w_tau.component_mul(&lambda);
    let coeffs_w = a_tau.tr_mul(&wl);
    let rhs_w = tau.dot(&wl);
    Ok([
        LinearRow { coeffs: coeffs_b, rhs: rhs_b },
        LinearRow { coeffs: coeffs_w, rhs: rhs_w },
    ])
}

/// Affine normalization between physical units and the program's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub origin: DVector<f64>,
    /// Meters per frame length unit.
    pub length: f64,
    /// Seconds per frame time unit.
    pub time: f64,
    /// Coarse clock offset removed from the data, meters.
    pub offset: f64,
    /// Coarse clock drift removed from the data, m/s.
    pub drift: f64,
    /// Weight divisor.
    pub weight: f64,
}

impl Frame {
    fn position_to(&self, p: &DVector<f64>) -> DVector<f64> {
        (p - &self.origin) / self.length
    }

    fn velocity_to(&self, v: &DVector<f64>) -> DVector<f64> {
        v * (self.time / self.length)
    }
}

/// Least-squares fit of `τ_i − ρ_i ≈ 2B + Ω δt_i`, which ignores the small
/// range change between request and response.
fn coarse_clock(measurements: &TwoWayMeasurements) -> (f64, f64) {
    let m = measurements.len() as f64;
    let d: Vec<f64> = measurements.tau.iter().zip(&measurements.rho).map(|(t, r)| t - r).collect();
    let t = &measurements.delays;
    let mean_t = t.iter().sum::<f64>() / m;
    let mean_d = d.iter().sum::<f64>() / m;
    let stt: f64 = t.iter().map(|ti| (ti - mean_t).powi(2)).sum();
    let std: f64 = t.iter().zip(&d).map(|(ti, di)| (ti - mean_t) * (di - mean_d)).sum();
    let drift = if stt > 0.0 { std / stt } else { 0.0 };
    let offset = (mean_d - drift * mean_t) / 2.0;
    (offset, drift)
}

/// Location of every lifted quantity inside the program's variable vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpVariables {
    pub dim: usize,
    pub num_anchors: usize,
    pub motion: Motion,
    pub p: Vec<usize>,
    pub v: Vec<usize>,
    pub y: usize,
    pub f: usize,
    pub psi: usize,
    pub z: Vec<usize>,
    /// `g = [g_ρ; g_τ; B; Ω]`, length `2M + 2`.
    pub g: Vec<usize>,
    /// Start of each PSD block: `[S₁, S₂]` or `[S₁, S₂, S₃, S₄]`.
    pub blocks: Vec<usize>,
}

impl SdpVariables {
    fn new(dim: usize, m: usize, motion: Motion, nonneg_response: bool) -> (Self, ConeLayout) {
        let mut next = 0;
        let mut take = |k: usize| {
            let r: Vec<usize> = (next..next + k).collect();
            next += k;
            r
        };
        let p = take(dim);
        let v = take(dim);
        let y = take(1)[0];
        let f = take(1)[0];
        let psi = take(1)[0];
        let z = take(m);
        let bw = take(2);
        let free_tau = if nonneg_response { vec![] } else { take(m) };
        let g_rho = take(m);
        let g_tau = if nonneg_response { take(m) } else { free_tau };
        let n_free = 2 * dim + 5 + m + if nonneg_response { 0 } else { m };
        let n_nonneg = if nonneg_response { 2 * m } else { m };
        let mut g = g_rho;
        g.extend(g_tau);
        g.extend(bw);

        let s1 = 2 * m + 3;
        let mut orders = vec![s1, dim + 1];
        if motion == Motion::Moving {
            orders.extend([dim + 1, dim + 1]);
        }
        let layout = ConeLayout::new(n_free, n_nonneg, orders);
        let blocks = layout.psd_offsets();
        (Self { dim, num_anchors: m, motion, p, v, y, f, psi, z, g, blocks }, layout)
    }

    fn block_order(&self, b: usize) -> usize {
        if b == 0 {
            2 * self.num_anchors + 3
        } else {
            self.dim + 1
        }
    }

    /// Column and coefficient such that `coef · x[col]` is entry `(i, j)`
    /// of PSD block `b`.
    fn entry(&self, b: usize, i: usize, j: usize) -> (usize, f64) {
        let k = self.block_order(b);
        let coef = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
        (self.blocks[b] + svec_index(k, i, j), coef)
    }
}

/// A built relaxation together with what is needed to interpret its
/// solution in physical units.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub program: ConicProgram,
    pub vars: SdpVariables,
    pub frame: Frame,
    /// Physical objective = `objective_scale · (cᵀx + objective_offset)`
    /// less the regularization term.
    pub objective_scale: f64,
    /// Objective coefficients of the proximal term.
    pub regularization: DVector<f64>,
    /// Anchor positions in the frame.
    anchors: Vec<DVector<f64>>,
    /// Reply delays in frame time units.
    delays: Vec<f64>,
}

struct RowBuilder {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

impl RowBuilder {
    fn push(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.rows.push(terms);
        self.rhs.push(rhs);
    }

    fn finish(self) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.rows.len(), self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] += v;
            }
        }
        (a, DVector::from_vec(self.rhs))
    }
}

/// Builds the relaxed program for the given measurements.
///
/// Equality rows, in order: the two stationarity rows; `2M` diagonal rows of
/// `G`; `M` rows linking `z` to `y, ψ, f`; the unit corner of `S₁`; `2M + 2`
/// rows tying the last column of `S₁` to `g`; then for each of `S₂…S₄` its
/// identity block, its last column and its corner. The stationary variant
/// drops `S₃, S₄` and pins `v`, `f` and `ψ` to zero instead.
pub fn build_sdp(
    measurements: &TwoWayMeasurements,
    weights: &WeightMatrix,
    anchors: &[DVector<f64>],
    motion: Motion,
    options: &SdpOptions,
) -> Result<SdpProblem> {
    measurements.validate()?;
    let m = measurements.len();
    if anchors.len() != m || weights.len() != 2 * m {
        return Err(Error::DimensionMismatch(format!(
            "{m} measurement pairs, {} anchors, {} weights",
            anchors.len(),
            weights.len()
        )));
    }
    let dim = anchors[0].len();
    if !(dim == 2 || dim == 3) || anchors.iter().any(|q| q.len() != dim) {
        return Err(Error::DimensionMismatch("anchors must all be 2-D or all 3-D".into()));
    }
    if 2 * m < 2 * dim + 2 {
        return Err(Error::DimensionMismatch(format!(
            "{m} anchors cannot determine {} unknowns",
            2 * dim + 2
        )));
    }
    if !(options.length_unit > 0.0 && options.length_unit.is_finite()) {
        return Err(Error::InvalidScenario("length unit must be positive".into()));
    }
    if !(options.regularization >= 0.0 && options.regularization.is_finite()) {
        return Err(Error::InvalidScenario("regularization must be finite and nonnegative".into()));
    }

    let origin = anchors.iter().fold(DVector::zeros(dim), |acc, q| acc + q) / m as f64;
    let time = measurements.delays.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    let time = if time > 0.0 { time } else { 1.0 };
    let (offset, drift) = coarse_clock(measurements);
    let weight = weights.diagonal().max();
    let frame = Frame { origin, length: options.length_unit, time, offset, drift, weight };
    let l = frame.length;

    // data in the frame
    let q: Vec<DVector<f64>> = anchors.iter().map(|a| frame.position_to(a)).collect();
    let delays: Vec<f64> = measurements.delays.iter().map(|d| d / time).collect();
    let fm = TwoWayMeasurements {
        rho: measurements.rho.iter().map(|r| (r + offset) / l).collect(),
        tau: measurements
            .tau
            .iter()
            .zip(&measurements.delays)
            .map(|(t, d)| (t - offset - drift * d) / l)
            .collect(),
        delays: delays.clone(),
        sigma_an: measurements.sigma_an.clone(),
        sigma_ud: measurements.sigma_ud,
    };
    let fw = WeightMatrix::from_diagonal(weights.diagonal() / weight);
    let a = build_a(&delays);
    let gamma = fm.stacked();

    let (vars, layout) = SdpVariables::new(dim, m, motion, options.nonneg_response_ranges);
    let n = layout.dim();
    let ng = 2 * m + 2;

    // objective tr(W A G Aᵀ) − 2 γᵀ W A g
    let wa = DMatrix::from_diagonal(fw.diagonal()) * &a;
    let quad = a.tr_mul(&wa);
    let lin = wa.tr_mul(&gamma) * -2.0;
    let mut c = DVector::zeros(n);
    for j in 0..ng {
        for i in j..ng {
            let (col, coef) = vars.entry(0, i, j);
            // coef·x = G_ij and the off-diagonal pair contributes twice
            let mult = if i == j { 1.0 } else { 2.0 };
            c[col] += mult * quad[(i, j)] * coef;
        }
        c[vars.g[j]] += lin[j];
    }

    let mut reg = DVector::zeros(n);
    reg[vars.y] = options.regularization;
    reg[vars.f] = options.regularization;
    c += &reg;

    let mut rb = RowBuilder { n, rows: Vec::new(), rhs: Vec::new() };
    for row in stationarity_constraints(&fm, &fw, &a)? {
        let terms = (0..ng).filter(|&j| row.coeffs[j] != 0.0).map(|j| (vars.g[j], row.coeffs[j])).collect();
        rb.push(terms, row.rhs);
    }
    for i in 0..m {
        let qq = q[i].norm_squared();
        // G_ii = ‖q‖² − 2qᵀp + y
        let mut t = vec![vars.entry(0, i, i), (vars.y, -1.0)];
        t.extend((0..dim).map(|k| (vars.p[k], 2.0 * q[i][k])));
        rb.push(t, qq);
    }
    for i in 0..m {
        let qq = q[i].norm_squared();
        // G_{M+i,M+i} = ‖q‖² − 2qᵀp − 2δt qᵀv + z_i
        let mut t = vec![vars.entry(0, m + i, m + i), (vars.z[i], -1.0)];
        t.extend((0..dim).map(|k| (vars.p[k], 2.0 * q[i][k])));
        t.extend((0..dim).map(|k| (vars.v[k], 2.0 * delays[i] * q[i][k])));
        rb.push(t, qq);
    }
    for i in 0..m {
        let d = delays[i];
        rb.push(vec![(vars.z[i], 1.0), (vars.y, -1.0), (vars.psi, -d), (vars.f, -d * d)], 0.0);
    }
    let last = 2 * m + 2;
    rb.push(vec![vars.entry(0, last, last)], 1.0);
    for j in 0..ng {
        rb.push(vec![vars.entry(0, j, last), (vars.g[j], -1.0)], 0.0);
    }

    let small_block = |rb: &mut RowBuilder, b: usize, col: Vec<Vec<usize>>, corner: Vec<(usize, f64)>| {
        for j in 0..dim {
            for i in j..dim {
                rb.push(vec![vars.entry(b, i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
        for (k, idx) in col.iter().enumerate() {
            let mut t = vec![vars.entry(b, k, dim)];
            t.extend(idx.iter().map(|&i| (i, -1.0)));
            rb.push(t, 0.0);
        }
        let mut t = vec![vars.entry(b, dim, dim)];
        t.extend(corner.iter().map(|&(i, s)| (i, -s)));
        rb.push(t, 0.0);
    };
    small_block(&mut rb, 1, vars.p.iter().map(|&i| vec![i]).collect(), vec![(vars.y, 1.0)]);
    match motion {
        Motion::Moving => {
            small_block(&mut rb, 2, vars.v.iter().map(|&i| vec![i]).collect(), vec![(vars.f, 1.0)]);
            small_block(
                &mut rb,
                3,
                (0..dim).map(|k| vec![vars.p[k], vars.v[k]]).collect(),
                vec![(vars.y, 1.0), (vars.f, 1.0), (vars.psi, 1.0)],
            );
        }
        Motion::Stationary => {
            for &i in vars.v.iter().chain([vars.f, vars.psi].iter()) {
                rb.push(vec![(i, 1.0)], 0.0);
            }
        }
    }
    let (a_eq, b_eq) = rb.finish();

    // F_phys = L² w_s F_frame + (Ad)ᵀW(Ad) − 2γᵀW(Ad) with d the removed clock
    let a_phys = build_a(&measurements.delays);
    let mut d = DVector::zeros(ng);
    d[2 * m] = offset;
    d[2 * m + 1] = drift;
    let ad = a_phys * d;
    let wd = weights.diagonal().component_mul(&ad);
    let constant = ad.dot(&wd) - 2.0 * measurements.stacked().dot(&wd);
    let objective_scale = l * l * weight;

    let mut program = ConicProgram::new(layout, c, a_eq, b_eq)?;
    program.objective_offset = constant / objective_scale;
    Ok(SdpProblem { program, vars, frame, objective_scale, regularization: reg, anchors: q, delays })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    NumericalFailure,
    Infeasible,
}

impl From<IpmStatus> for SolveStatus {
    fn from(s: IpmStatus) -> Self {
        match s {
            IpmStatus::Optimal => SolveStatus::Optimal,
            IpmStatus::MaxIter => SolveStatus::MaxIter,
            IpmStatus::NumericalFailure => SolveStatus::NumericalFailure,
            IpmStatus::Infeasible => SolveStatus::Infeasible,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Read from the `p`, `v` and `g` variables. The position is the scored
    /// output; velocity and drift can be poorly identified by the relaxation
    /// even when the position is exact.
    pub estimate: StateVector,
    pub status: SolveStatus,
    pub duality_gap: f64,
    /// Ratio of the two largest eigenvalues of the solved `S₁` block; zero
    /// for an exactly rank-one lifted solution.
    pub tightness: f64,
    pub iterations: usize,
    /// Relaxed objective at the returned point, physical units.
    pub objective: f64,
    pub wall_time: f64,
}

impl SolveReport {
    /// The estimate if the solver reached optimality.
    pub fn ok(&self) -> Result<&StateVector> {
        match self.status {
            SolveStatus::Optimal => Ok(&self.estimate),
            s => Err(Error::NumericalFailure(format!("relaxation solve ended with status {s:?}"))),
        }
    }
}

impl SdpProblem {
    /// Lifted point of a candidate state: `g` from its exact ranges, `G =
    /// ggᵀ`, `y = pᵀp` and so on. Feasible for the program whenever the state
    /// reproduces the measurements' stationarity conditions (e.g. truth at
    /// zero noise).
    pub fn lift(&self, state: &UdState) -> DVector<f64> {
        let fr = &self.frame;
        let vars = &self.vars;
        let m = vars.num_anchors;
        let dim = vars.dim;
        let p = fr.position_to(&state.position);
        let v = match vars.motion {
            Motion::Moving => fr.velocity_to(&state.velocity),
            Motion::Stationary => DVector::zeros(dim),
        };
        let b = (state.clock_offset - fr.offset) / fr.length;
        let w = (state.clock_drift - fr.drift) * fr.time / fr.length;

        let mut g = DVector::zeros(2 * m + 2);
        for i in 0..m {
            g[i] = (&self.anchors[i] - &p).norm();
            g[m + i] = (&self.anchors[i] - &p - &v * self.delays[i]).norm();
        }
        g[2 * m] = b;
        g[2 * m + 1] = w;

        let mut x = DVector::zeros(self.program.num_vars());
        for k in 0..dim {
            x[vars.p[k]] = p[k];
            x[vars.v[k]] = v[k];
        }
        x[vars.y] = p.norm_squared();
        x[vars.f] = v.norm_squared();
        x[vars.psi] = 2.0 * p.dot(&v);
        for i in 0..m {
            x[vars.z[i]] = (&p + &v * self.delays[i]).norm_squared();
        }
        for (j, &col) in vars.g.iter().enumerate() {
            x[col] = g[j];
        }
        let mut s1 = DMatrix::zeros(2 * m + 3, 2 * m + 3);
        s1.view_mut((0, 0), (2 * m + 2, 2 * m + 2)).copy_from(&(&g * g.transpose()));
        s1.view_mut((0, 2 * m + 2), (2 * m + 2, 1)).copy_from(&g);
        s1.view_mut((2 * m + 2, 0), (1, 2 * m + 2)).copy_from(&g.transpose());
        s1[(2 * m + 2, 2 * m + 2)] = 1.0;
        self.put_block(&mut x, 0, &s1);
        let small = |u: &DVector<f64>, corner: f64| {
            let mut s = DMatrix::identity(dim + 1, dim + 1);
            s.view_mut((0, dim), (dim, 1)).copy_from(u);
            s.view_mut((dim, 0), (1, dim)).copy_from(&u.transpose());
            s[(dim, dim)] = corner;
            s
        };
        let (y, f, psi) = (x[vars.y], x[vars.f], x[vars.psi]);
        self.put_block(&mut x, 1, &small(&p, y));
        if vars.motion == Motion::Moving {
            self.put_block(&mut x, 2, &small(&v, f));
            self.put_block(&mut x, 3, &small(&(&p + &v), y + f + psi));
        }
        x
    }

    fn put_block(&self, x: &mut DVector<f64>, b: usize, mat: &DMatrix<f64>) {
        let k = self.vars.block_order(b);
        x.rows_mut(self.vars.blocks[b], svec_len(k)).copy_from(&svec(mat));
    }

    /// PSD block `b` of a program point as a matrix.
    pub fn block(&self, x: &DVector<f64>, b: usize) -> DMatrix<f64> {
        let k = self.vars.block_order(b);
        smat(&x.rows(self.vars.blocks[b], svec_len(k)).into_owned(), k)
    }

    pub fn num_blocks(&self) -> usize {
        self.vars.blocks.len()
    }

    /// Relaxed objective `tr(W(AGAᵀ − 2Agγᵀ))` of a program point in
    /// physical units.
    pub fn physical_objective(&self, x: &DVector<f64>) -> f64 {
        let reg = self.regularization.dot(x);
        self.objective_scale * (self.program.primal_objective(x) - reg)
    }

    /// Physical state read from the free-variable slots of a program point.
    pub fn state_from(&self, x: &DVector<f64>) -> StateVector {
        let fr = &self.frame;
        let vars = &self.vars;
        let m = vars.num_anchors;
        let p = DVector::from_fn(vars.dim, |k, _| fr.origin[k] + fr.length * x[vars.p[k]]);
        let v = DVector::from_fn(vars.dim, |k, _| fr.length * x[vars.v[k]] / fr.time);
        let state = UdState {
            position: p,
            velocity: v,
            clock_offset: fr.offset + fr.length * x[vars.g[2 * m]],
            clock_drift: fr.drift + fr.length * x[vars.g[2 * m + 1]] / fr.time,
        };
        StateVector::from_state(&state)
    }

    /// λ₂/λ₁ of the `S₁` block.
    pub fn tightness(&self, x: &DVector<f64>) -> f64 {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.block(x, 0)).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        if ev[0] <= 0.0 {
            return 0.0;
        }
        (ev.get(1).copied().unwrap_or(0.0) / ev[0]).clamp(0.0, 1.0)
    }
}

pub fn extract_solution(problem: &SdpProblem, result: &IpmResult) -> SolveReport {
    SolveReport {
        estimate: problem.state_from(&result.x),
        status: result.status.into(),
        duality_gap: result.relative_gap,
        tightness: problem.tightness(&result.x),
        iterations: result.iterations,
        objective: problem.physical_objective(&result.x),
        wall_time: result.wall_time,
    }
}

/// Builds, solves and extracts in one call.
pub fn solve_sdp(
    measurements: &TwoWayMeasurements,
    weights: &WeightMatrix,
    anchors: &[DVector<f64>],
    motion: Motion,
    options: &SdpOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let problem = build_sdp(measurements, weights, anchors, motion, options)?;
    let result = conic::solve(&problem.program, &options.solver)?;
    let mut report = extract_solution(&problem, &result);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gn::wls_cost;
    use crate::harness::{sample_scenario, CampaignConfig};
    use crate::measurement::{eval_h, simulate};
    use crate::model::Scenario;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn table_one(sigma: f64, seed: u64) -> Scenario {
        sample_scenario(&CampaignConfig::default(), sigma, None, seed)
    }

    fn problem_for(sc: &Scenario, seed: u64, motion: Motion) -> (SdpProblem, TwoWayMeasurements, WeightMatrix) {
        let meas = simulate(sc, seed).unwrap();
        let w = meas.weights_with_floor(1e-12).unwrap();
        let p = build_sdp(&meas, &w, &sc.anchor_positions(), motion, &SdpOptions::default()).unwrap();
        (p, meas, w)
    }

    fn true_g(sc: &Scenario) -> DVector<f64> {
        let m = sc.num_anchors();
        let mut g = DVector::zeros(2 * m + 2);
        for (i, q) in sc.anchor_positions().iter().enumerate() {
            let dt = sc.schedule.delays[i];
            g[i] = (q - &sc.ud.position).norm();
            g[m + i] = (q - sc.ud.position_at(dt)).norm();
        }
        g[2 * m] = sc.ud.clock_offset;
        g[2 * m + 1] = sc.ud.clock_drift;
        g
    }

    #[test]
    fn model_matrix_examples() {
        let a = build_a(&[0.01]);
        assert_eq!(a, DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.01]));
        let a = build_a(&[0.01, 0.02]);
        assert_eq!(a.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn model_matrix_reproduces_forward_model() {
        for seed in 0..5 {
            let sc = table_one(0.0, seed);
            let a = build_a(&sc.schedule.delays);
            let h = eval_h(&StateVector::from_state(&sc.ud), &sc.anchor_positions(), &sc.schedule.delays).unwrap();
            let ag = a * true_g(&sc);
            assert_relative_eq!(ag, h, max_relative = 1e-12);
        }
    }

    #[test]
    fn stationarity_vanishes_at_noiseless_truth() {
        let sc = table_one(0.0, 3);
        let meas = simulate(&sc, 3).unwrap();
        let w = meas.weights_with_floor(1e-6).unwrap();
        let a = build_a(&meas.delays);
        let g = true_g(&sc);
        for row in stationarity_constraints(&meas, &w, &a).unwrap() {
            let scale = row.coeffs.abs().dot(&g.abs()) + row.rhs.abs();
            assert!(row.residual(&g).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn stationarity_single_anchor_by_hand() {
        let meas = TwoWayMeasurements {
            rho: vec![3.0],
            tau: vec![7.0],
            delays: vec![0.5],
            sigma_an: vec![1.0],
            sigma_ud: 1.0,
        };
        let w = WeightMatrix::from_diagonal(DVector::from_element(2, 1.0));
        let [rb, rw] = stationarity_constraints(&meas, &w, &build_a(&meas.delays)).unwrap();
        let g = DVector::from_vec(vec![2.0, 5.0, 0.25, 1.5]);
        // (g₁ − B − ρ₁) + (τ₁ − g₂ − B − Ω δt₁)
        let expect_b = (2.0 - 0.25 - 3.0) + (7.0 - 5.0 - 0.25 - 1.5 * 0.5);
        assert_relative_eq!(rb.residual(&g), expect_b, epsilon = 1e-14);
        let expect_w = (7.0 - 5.0 - 0.25 - 1.5 * 0.5) * 0.5;
        assert_relative_eq!(rw.residual(&g), -expect_w, epsilon = 1e-14);
    }

    #[test]
    fn stationarity_matches_explicit_dot_products() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = 6;
        let meas = TwoWayMeasurements {
            rho: (0..m).map(|_| rng.gen_range(10.0..500.0)).collect(),
            tau: (0..m).map(|_| rng.gen_range(10.0..500.0)).collect(),
            delays: (0..m).map(|i| 0.01 * (i + 1) as f64).collect(),
            sigma_an: vec![1.0; m],
            sigma_ud: 1.0,
        };
        let wd = DVector::from_fn(2 * m, |_, _| rng.gen_range(0.5..2.0));
        let w = WeightMatrix::from_diagonal(wd.clone());
        let a = build_a(&meas.delays);
        let g = DVector::from_fn(2 * m + 2, |_, _| rng.gen_range(-50.0..500.0));
        let [rb, rw] = stationarity_constraints(&meas, &w, &a).unwrap();
        let ag = &a * &g;
        let (mut sb, mut sw) = (0.0, 0.0);
        for i in 0..m {
            let e_rho = ag[i] - meas.rho[i];
            let e_tau = meas.tau[i] - ag[m + i];
            sb += e_rho * wd[i] + e_tau * wd[m + i];
            sw += e_tau * wd[m + i] * meas.delays[i];
        }
        assert_relative_eq!(rb.residual(&g), sb, max_relative = 1e-12, epsilon = 1e-9);
        // the drift row is stored as (A_τ g)ᵀW_τλ − τᵀW_τλ, the negated form
        assert_relative_eq!(rw.residual(&g), -sw, max_relative = 1e-12, epsilon = 1e-9);
    }

    #[test]
    fn program_sizes() {
        let sc = table_one(0.1, 1);
        let (moving, _, _) = problem_for(&sc, 1, Motion::Moving);
        let l = &moving.program.layout;
        assert_eq!(l.psd_orders, vec![19, 4, 4, 4]);
        assert_eq!(l.n_nonneg, 16);
        // stationarity 2, diagonal 16, z-links 8, S₁ corner 1, S₁ column 18,
        // S₂…S₄ identity 6 + column 3 + corner 1 each
        assert_eq!(moving.program.num_constraints(), 2 + 16 + 8 + 1 + 18 + 3 * 10);

        let (still, _, _) = problem_for(&sc, 1, Motion::Stationary);
        assert_eq!(still.program.layout.psd_orders, vec![19, 4]);
        // S₂ only, plus pins on v (3), f and ψ
        assert_eq!(still.program.num_constraints(), 2 + 16 + 8 + 1 + 18 + 10 + 5);
    }

    #[test]
    fn noiseless_truth_lift_is_feasible() {
        for (seed, motion) in [(2, Motion::Moving), (4, Motion::Moving)] {
            let sc = table_one(0.0, seed);
            let (p, _, _) = problem_for(&sc, seed, motion);
            let x = p.lift(&sc.ud);
            let r = &p.program.a * &x - &p.program.b;
            for i in 0..r.len() {
                assert!(r[i].abs() <= 1e-9 * (1.0 + p.program.b[i].abs()), "row {i}: {}", r[i]);
            }
            for (b, ev) in p.program.layout.min_eigenvalues(&x).iter().enumerate() {
                assert!(*ev >= -1e-9, "cone part {b}: {ev}");
            }
        }
    }

    #[test]
    fn objective_of_lifted_state_is_cost_minus_constant() {
        for (sigma, seed) in [(0.0, 5), (2.0, 6)] {
            let sc = table_one(sigma, seed);
            let (p, meas, w) = problem_for(&sc, seed, Motion::Moving);
            let anchors = sc.anchor_positions();
            let gamma = meas.stacked();
            let constant = w.quadratic_form(&gamma);
            for state in [sc.ud.clone(), UdState { position: &sc.ud.position * 0.5, ..sc.ud.clone() }] {
                let cost = wls_cost(&StateVector::from_state(&state), &meas, &w, &anchors).unwrap();
                let obj = p.physical_objective(&p.lift(&state));
                assert_relative_eq!(obj, cost - constant, max_relative = 1e-9, epsilon = 1e-6 * constant);
            }
        }
    }

    #[test]
    fn round_trip_of_state_through_frame() {
        let sc = table_one(0.0, 8);
        let (p, _, _) = problem_for(&sc, 8, Motion::Moving);
        let back = p.state_from(&p.lift(&sc.ud));
        assert_relative_eq!(back.as_vector(), &StateVector::from_state(&sc.ud).into_vector(), max_relative = 1e-12);
    }

    #[test]
    fn tightness_of_rank_one_lift_is_zero() {
        let sc = table_one(0.0, 9);
        let (p, _, _) = problem_for(&sc, 9, Motion::Moving);
        assert!(p.tightness(&p.lift(&sc.ud)) < 1e-12);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let sc = table_one(0.1, 1);
        let meas = simulate(&sc, 1).unwrap();
        let w = meas.weights().unwrap();
        let anchors = sc.anchor_positions();
        let opts = SdpOptions::default();
        assert!(matches!(
            build_sdp(&meas, &w, &anchors[..7], Motion::Moving, &opts),
            Err(Error::DimensionMismatch(_))
        ));
        let few = TwoWayMeasurements {
            rho: meas.rho[..3].to_vec(),
            tau: meas.tau[..3].to_vec(),
            delays: meas.delays[..3].to_vec(),
            sigma_an: meas.sigma_an[..3].to_vec(),
            sigma_ud: meas.sigma_ud,
        };
        let w3 = few.weights().unwrap();
        assert!(matches!(
            build_sdp(&few, &w3, &anchors[..3], Motion::Moving, &opts),
            Err(Error::DimensionMismatch(_))
        ));
    }
}

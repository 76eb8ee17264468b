//! Weighted H2 machinery: the shaping filter `W`, the map
//! `𝔉[G](s) = G(s)W(s)W(-s)^T + Σ_k G(-γ_k)W(-γ_k) f_k e_k^T / (s + γ_k)`
//! and weighted inner products.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{MorError, Result};
use crate::linalg::{self, c, fro, to_complex, CMat, Mat, Pairing};
use crate::lti::{self, StateSpace};

/// Input shaping filter `W(s) = C_w (sI - A_w)^{-1} B_w + D_w` with simple
/// poles γ_k and residues `e_k f_k^T`.
#[derive(Debug, Clone)]
pub struct WeightFilter {
    sys: StateSpace,
    pub poles: Vec<Complex64>,
    /// Column k is `e_k` (m entries).
    pub e: CMat,
    /// Column k is `f_k` (m_w entries).
    pub f: CMat,
    pub pairing: Vec<Pairing>,
}

impl WeightFilter {
    pub fn new(a_w: Mat, b_w: Mat, c_w: Mat, d_w: Mat) -> Result<Self> {
        let sys = StateSpace::new(a_w, b_w, c_w, d_w)?;
        Self::from_system(sys)
    }

    pub fn from_system(sys: StateSpace) -> Result<Self> {
        lti::require_stable(&sys, "weight")?;
        let pr = lti::to_pole_residue(&sys)?;
        Ok(Self {
            sys,
            poles: pr.poles,
            e: pr.left,
            f: pr.right,
            pairing: pr.pairing,
        })
    }

    /// `W = I_m`, under which the weighted norm is the plain H2 norm.
    pub fn identity(m: usize) -> Self {
        Self::constant(Mat::identity(m, m))
    }

    pub fn constant(d_w: Mat) -> Self {
        let (m, mw) = d_w.shape();
        Self {
            sys: StateSpace::constant(d_w),
            poles: vec![],
            e: CMat::zeros(m, 0),
            f: CMat::zeros(mw, 0),
            pairing: vec![],
        }
    }

    pub fn system(&self) -> &StateSpace {
        &self.sys
    }
    pub fn a(&self) -> &Mat {
        self.sys.a()
    }
    pub fn b(&self) -> &Mat {
        self.sys.b()
    }
    pub fn c(&self) -> &Mat {
        self.sys.c()
    }
    pub fn d(&self) -> &Mat {
        self.sys.d()
    }
    pub fn order(&self) -> usize {
        self.sys.order()
    }
    /// Row count of `W`, which must equal the input count of `G`.
    pub fn outputs(&self) -> usize {
        self.sys.outputs()
    }
    pub fn inputs(&self) -> usize {
        self.sys.inputs()
    }

    pub fn eval(&self, s: Complex64) -> Result<CMat> {
        lti::eval_transfer(&self.sys, s)
    }

    /// Orthonormal basis of `Ker(D_w^T)`.
    pub fn kernel(&self) -> Mat {
        linalg::kernel_basis(&self.d().transpose(), linalg::DEFAULT_RANK_TOL)
    }

    /// Controllability Gramian `P_w` of the weight.
    pub fn gramian(&self) -> Result<Mat> {
        linalg::solve_lyapunov(self.a(), &(self.b() * self.b().transpose()))
    }
}

fn dd_w_vanishes(d: &Mat, d_w: &Mat) -> bool {
    fro(&(d * d_w)) <= 1e-12 * (1.0 + fro(d) * fro(d_w))
}

/// Checks that `G W` lies in H2: `G` stable and `D D_w = 0`.
pub fn validate_membership(g: &StateSpace, w: &WeightFilter) -> Result<()> {
    if g.inputs() != w.outputs() {
        return Err(MorError::NotInWeightedH2(format!(
            "system has {} inputs but the weight has {} outputs",
            g.inputs(),
            w.outputs()
        )));
    }
    if g.order() > 0 {
        let r = linalg::max_real_eig(g.a())?;
        if !(r < 0.0) {
            return Err(MorError::NotInWeightedH2(format!(
                "system is not stable (eigenvalue real part {r:e})"
            )));
        }
    }
    if !dd_w_vanishes(g.d(), w.d()) {
        return Err(MorError::NotInWeightedH2(format!(
            "D D_w is nonzero (norm {:e})",
            fro(&(g.d() * w.d()))
        )));
    }
    Ok(())
}

/// Block realization of `𝔉[G]`:
/// `A_F = [[A, B C_w], [0, A_w]]`, `B_F = [[Z C_w^T + B D_w D_w^T], [P_w C_w^T + B_w D_w^T]]`,
/// `C_F = [C, D C_w]`.
#[derive(Debug, Clone)]
pub struct FRealization {
    pub a_f: Mat,
    pub b_f: Mat,
    pub c_f: Mat,
    pub p_w: Mat,
    pub z: Mat,
    g: StateSpace,
    w: WeightFilter,
}

impl FRealization {
    pub fn system_order(&self) -> usize {
        self.g.order()
    }
    pub fn weight_order(&self) -> usize {
        self.w.order()
    }
    pub fn system(&self) -> &StateSpace {
        &self.g
    }
    pub fn weight(&self) -> &WeightFilter {
        &self.w
    }

    /// The realization as a strictly proper state-space system.
    pub fn as_state_space(&self) -> StateSpace {
        StateSpace::strictly_proper(self.a_f.clone(), self.b_f.clone(), self.c_f.clone())
            .expect("block realization is conformal")
    }

    /// `(sI - A_F)^{-1} R`, trailing block first.
    pub fn resolvent(&self, s: Complex64, rhs: &CMat) -> Result<CMat> {
        let (n, nw) = (self.system_order(), self.weight_order());
        let k = rhs.ncols();
        let r1 = rhs.rows(0, n).into_owned();
        let r2 = rhs.rows(n, nw).into_owned();
        let x2 = linalg::shifted_solve(self.w.a(), s, &r2)?;
        let coupling = to_complex(&(self.g.b() * self.w.c()));
        let x1 = linalg::shifted_solve(self.g.a(), s, &(r1 + coupling * &x2))?;
        let mut x = CMat::zeros(n + nw, k);
        x.rows_mut(0, n).copy_from(&x1);
        x.rows_mut(n, nw).copy_from(&x2);
        Ok(x)
    }

    /// `(sI - A_F^T)^{-1} R`, leading block first.
    pub fn resolvent_transpose(&self, s: Complex64, rhs: &CMat) -> Result<CMat> {
        let (n, nw) = (self.system_order(), self.weight_order());
        let k = rhs.ncols();
        let r1 = rhs.rows(0, n).into_owned();
        let r2 = rhs.rows(n, nw).into_owned();
        let x1 = linalg::shifted_solve(&self.g.a().transpose(), s, &r1)?;
        let coupling = to_complex(&(self.g.b() * self.w.c()).transpose());
        let x2 = linalg::shifted_solve(&self.w.a().transpose(), s, &(r2 + coupling * &x1))?;
        let mut x = CMat::zeros(n + nw, k);
        x.rows_mut(0, n).copy_from(&x1);
        x.rows_mut(n, nw).copy_from(&x2);
        Ok(x)
    }
}

pub fn build_f_realization(g: &StateSpace, w: &WeightFilter) -> Result<FRealization> {
    validate_membership(g, w)?;
    let (n, nw) = (g.order(), w.order());
    let (a, b, cm, d) = (g.a(), g.b(), g.c(), g.d());
    let (a_w, b_w, c_w, d_w) = (w.a(), w.b(), w.c(), w.d());
    let p_w = w.gramian()?;
    let z = linalg::solve_sylvester(
        a,
        &a_w.transpose(),
        &(b * (c_w * &p_w + d_w * b_w.transpose())),
    )?;
    let m = g.inputs();
    let mut a_f = Mat::zeros(n + nw, n + nw);
    a_f.view_mut((0, 0), (n, n)).copy_from(a);
    a_f.view_mut((0, n), (n, nw)).copy_from(&(b * c_w));
    a_f.view_mut((n, n), (nw, nw)).copy_from(a_w);
    let mut b_f = Mat::zeros(n + nw, m);
    b_f.view_mut((0, 0), (n, m))
        .copy_from(&(&z * c_w.transpose() + b * d_w * d_w.transpose()));
    b_f.view_mut((n, 0), (nw, m))
        .copy_from(&(&p_w * c_w.transpose() + b_w * d_w.transpose()));
    let mut c_f = Mat::zeros(g.outputs(), n + nw);
    c_f.view_mut((0, 0), (g.outputs(), n)).copy_from(cm);
    c_f.view_mut((0, n), (g.outputs(), nw)).copy_from(&(d * c_w));
    Ok(FRealization {
        a_f,
        b_f,
        c_f,
        p_w,
        z,
        g: g.clone(),
        w: w.clone(),
    })
}

/// `𝔉[G](s) = C_F (sI - A_F)^{-1} B_F`.
pub fn eval_f(f: &FRealization, s: Complex64) -> Result<CMat> {
    let x = f.resolvent(s, &to_complex(&f.b_f))?;
    Ok(to_complex(&f.c_f) * x)
}

/// `𝔉'[G](s) = -C_F (sI - A_F)^{-2} B_F`.
pub fn eval_f_derivative(f: &FRealization, s: Complex64) -> Result<CMat> {
    let x = f.resolvent(s, &to_complex(&f.b_f))?;
    let y = f.resolvent(s, &x)?;
    Ok(-(to_complex(&f.c_f) * y))
}

/// Impulse response of `𝔉[G]` at `t = 0`, i.e. `C_F B_F`.
pub fn f_impulse_at_zero(f: &FRealization) -> Mat {
    &f.c_f * &f.b_f
}

/// `𝔉[G](s)` summed from the weight's pole-residue data; a reference path
/// independent of the block realization.
pub fn eval_f_by_residues(g: &StateSpace, w: &WeightFilter, s: Complex64) -> Result<CMat> {
    let mut out = lti::eval_transfer(g, s)? * w.eval(s)? * w.eval(-s)?.transpose();
    for (k, gam) in w.poles.iter().enumerate() {
        let gk = lti::eval_transfer(g, -gam)? * w.eval(-gam)?;
        let rank_one = w.f.column(k) * w.e.column(k).transpose();
        out += gk * rank_one / (s + gam);
    }
    Ok(out)
}

/// Realization of the product `G W`.
pub fn cascade(g: &StateSpace, w: &WeightFilter) -> Result<StateSpace> {
    if g.inputs() != w.outputs() {
        return Err(MorError::DimensionMismatch(format!(
            "system has {} inputs but the weight has {} outputs",
            g.inputs(),
            w.outputs()
        )));
    }
    let (n, nw, p, mw) = (g.order(), w.order(), g.outputs(), w.inputs());
    let mut a = Mat::zeros(n + nw, n + nw);
    a.view_mut((0, 0), (n, n)).copy_from(g.a());
    a.view_mut((0, n), (n, nw)).copy_from(&(g.b() * w.c()));
    a.view_mut((n, n), (nw, nw)).copy_from(w.a());
    let mut b = Mat::zeros(n + nw, mw);
    b.view_mut((0, 0), (n, mw)).copy_from(&(g.b() * w.d()));
    b.view_mut((n, 0), (nw, mw)).copy_from(w.b());
    let mut cm = Mat::zeros(p, n + nw);
    cm.view_mut((0, 0), (p, n)).copy_from(g.c());
    cm.view_mut((0, n), (p, nw)).copy_from(&(g.d() * w.c()));
    StateSpace::new(a, b, cm, g.d() * w.d())
}

/// `⟨G, H⟩_{H2(W)}`. The strictly proper part of `H` is paired with
/// `𝔉[G]` in H2; a constant part `D_H` goes through the closed trace form.
pub fn weighted_h2_inner(g: &StateSpace, h: &StateSpace, w: &WeightFilter) -> Result<f64> {
    validate_membership(g, w)?;
    validate_membership(h, w)?;
    if g.outputs() != h.outputs() {
        return Err(MorError::DimensionMismatch(format!(
            "systems have {} and {} outputs",
            g.outputs(),
            h.outputs()
        )));
    }
    let f = build_f_realization(g, w)?;
    let mut total = lti::h2_inner(&f.as_state_space(), &h.strictly_proper_part())?;
    if fro(h.d()) > 0.0 {
        total += constant_pairing(&f, h.d());
    }
    Ok(total)
}

/// `tr(C Z C_w^T D_H^T + D C_w P_w C_w^T D_H^T)`.
fn constant_pairing(f: &FRealization, d_h: &Mat) -> f64 {
    let c_w = f.w.c();
    let t = f.g.c() * &f.z * c_w.transpose() + f.g.d() * c_w * &f.p_w * c_w.transpose();
    (t * d_h.transpose()).trace()
}

/// Returns `(⟨G, D_H⟩_{H2(W)}, ⟨𝔉[G], D_H⟩_{H2})`; the second is half the first.
pub fn weighted_inner_with_constant(
    g: &StateSpace,
    d_h: &Mat,
    w: &WeightFilter,
) -> Result<(f64, f64)> {
    if d_h.shape() != (g.outputs(), g.inputs()) {
        return Err(MorError::DimensionMismatch(format!(
            "constant is {}x{}, system is {}x{}",
            d_h.nrows(),
            d_h.ncols(),
            g.outputs(),
            g.inputs()
        )));
    }
    validate_membership(g, w)?;
    if !dd_w_vanishes(d_h, w.d()) {
        return Err(MorError::NotInWeightedH2("D_H D_w is nonzero".into()));
    }
    let f = build_f_realization(g, w)?;
    let full = constant_pairing(&f, d_h);
    Ok((full, 0.5 * full))
}

/// `‖(G - G_r) W‖_H2`, splitting the error into its strictly proper part
/// `E_0` and constant `ΔD`:
/// `‖E‖² = ‖E_0‖²_W + 2⟨E_0, ΔD⟩_W + ‖ΔD W‖²_H2`.
pub fn weighted_error_norm(g: &StateSpace, g_r: &StateSpace, w: &WeightFilter) -> Result<f64> {
    let e = g.difference(g_r)?;
    if e.inputs() != w.outputs() {
        return Err(MorError::DimensionMismatch(format!(
            "system has {} inputs but the weight has {} outputs",
            e.inputs(),
            w.outputs()
        )));
    }
    lti::require_stable(g, "original system")
        .and_then(|_| lti::require_stable(g_r, "reduced system"))
        .map_err(|err| MorError::NotInWeightedH2(err.to_string()))?;
    let dd = e.d().clone();
    if !dd_w_vanishes(&dd, w.d()) {
        return Err(MorError::InfiniteNorm(format!(
            "(D - D_r) D_w is nonzero (norm {:e})",
            fro(&(&dd * w.d()))
        )));
    }
    let e0 = e.strictly_proper_part();
    let f = build_f_realization(&e0, w)?;
    let mut sq = lti::h2_inner(&f.as_state_space(), &e0)?;
    if fro(&dd) > 0.0 {
        let c_w = w.c();
        sq += 2.0 * constant_pairing(&f, &dd);
        sq += (&dd * c_w * &f.p_w * c_w.transpose() * dd.transpose()).trace();
    }
    Ok(sq.max(0.0).sqrt())
}

/// `‖G‖_{H2(W)}`.
pub fn weighted_norm(g: &StateSpace, w: &WeightFilter) -> Result<f64> {
    let zero = StateSpace::constant(Mat::zeros(g.outputs(), g.inputs()));
    weighted_error_norm(g, &zero, w)
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    pub rel_tol: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            omega_min: 1e-4,
            omega_max: 1e4,
            points: 4000,
            rel_tol: 1e-5,
            max_refinements: 6,
        }
    }
}

/// `Re tr((G W)(iω)^H (H W)(iω)) / π`; the integral over `ω > 0` of this is
/// the weighted inner product for real systems.
fn integrand(g: &StateSpace, h: &StateSpace, w: &WeightFilter, omega: f64) -> Result<f64> {
    let s = c(0.0, omega);
    let ws = w.eval(s)?;
    let gw = lti::eval_transfer(g, s)? * &ws;
    let hw = lti::eval_transfer(h, s)? * &ws;
    let acc: f64 = gw.iter().zip(hw.iter()).map(|(a, b)| (a.conj() * b).re).sum();
    Ok(acc / std::f64::consts::PI)
}

/// Trapezoid in `u = ln ω` over `[lo, hi]` with `points` nodes (odd), plus
/// a Richardson step against the half-resolution rule and crude head and
/// tail corrections. Returns `(estimate, ∫|f|)`.
fn log_trapezoid(
    g: &StateSpace,
    h: &StateSpace,
    w: &WeightFilter,
    lo: f64,
    hi: f64,
    points: usize,
) -> Result<(f64, f64)> {
    let omegas = lti::log_grid(lo, hi, points);
    let vals: Vec<f64> = omegas
        .par_iter()
        .map(|&om| integrand(g, h, w, om).map(|v| v * om))
        .collect::<Result<Vec<_>>>()?;
    let du = (hi.ln() - lo.ln()) / (points - 1) as f64;
    let trap = |step: usize| -> (f64, f64) {
        let idx: Vec<usize> = (0..points).step_by(step).collect();
        let mut s = 0.0;
        let mut sa = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            let wgt = if k == 0 || k == idx.len() - 1 { 0.5 } else { 1.0 };
            s += wgt * vals[i];
            sa += wgt * vals[i].abs();
        }
        (s * du * step as f64, sa * du * step as f64)
    };
    let (t1, abs1) = trap(1);
    let (t2, _) = trap(2);
    let body = (4.0 * t1 - t2) / 3.0;
    // [0, lo]: integrand is flat near zero; [hi, ∞): decays like 1/ω²
    let f_lo = vals[0] / lo;
    let f_hi = vals[points - 1] / hi;
    let head = f_lo * lo;
    let tail = f_hi * hi;
    Ok((body + head + tail, abs1 + head.abs() + tail.abs()))
}

/// Frequency-domain quadrature of `⟨G, H⟩_{H2(W)}`, independent of the
/// Gramian formulas. The range widens tenfold per side and the node density
/// doubles at each refinement.
pub fn quadrature_weighted_inner(
    g: &StateSpace,
    h: &StateSpace,
    w: &WeightFilter,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    lti::require_stable(g, "first system")?;
    lti::require_stable(h, "second system")?;
    lti::require_stable(w.system(), "weight")?;
    if g.inputs() != w.outputs() || h.inputs() != w.outputs() || g.outputs() != h.outputs() {
        return Err(MorError::DimensionMismatch(
            "operands and weight are not conformal".into(),
        ));
    }
    let decades = (cfg.omega_max / cfg.omega_min).log10();
    let density = (cfg.points as f64 / decades).max(8.0);
    let mut lo = cfg.omega_min;
    let mut hi = cfg.omega_max;
    let mut dens = density;
    let mut prev: Option<f64> = None;
    let mut last_change = f64::INFINITY;
    for _ in 0..=cfg.max_refinements {
        let mut pts = ((hi / lo).log10() * dens).ceil() as usize;
        if pts.is_multiple_of(2) {
            pts += 1;
        }
        let (est, mass) = log_trapezoid(g, h, w, lo, hi, pts.max(5))?;
        if let Some(p) = prev {
            last_change = (est - p).abs();
            let scale = est.abs().max(1e-3 * mass).max(f64::MIN_POSITIVE);
            if last_change <= cfg.rel_tol * scale {
                return Ok(est);
            }
        }
        prev = Some(est);
        lo /= 10.0;
        hi *= 10.0;
        dens *= 2.0;
    }
    Err(MorError::NonConvergedQuadrature {
        estimate: prev.unwrap_or(f64::NAN),
        change: last_change,
    })
}

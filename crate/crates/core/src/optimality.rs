//! First-order optimality diagnostics for weighted H2 reduction: the
//! tangential interpolation conditions at mirrored reduced poles and the
//! equivalent coupled matrix-equation (Halevi) form.

use num_complex::Complex64;

use crate::error::{MorError, Result};
use crate::fmap::{self, FRealization, WeightFilter};
use crate::linalg::{self, cfro, fro, CMat, Mat, Pairing};
use crate::lti::{self, StateSpace};

/// Shifts σ_i with right directions `b_i` (columns of `right`) and left
/// directions `c_i` (columns of `left`).
#[derive(Debug, Clone)]
pub struct InterpolationData {
    pub shifts: Vec<Complex64>,
    pub right: CMat,
    pub left: CMat,
}

impl InterpolationData {
    pub fn new(shifts: Vec<Complex64>, right: CMat, left: CMat) -> Result<Self> {
        let k = shifts.len();
        if right.ncols() != k || left.ncols() != k {
            return Err(MorError::DimensionMismatch(format!(
                "{k} shifts but {} right and {} left directions",
                right.ncols(),
                left.ncols()
            )));
        }
        let data = Self { shifts, right, left };
        if data.pairing().is_none() {
            return Err(MorError::DimensionMismatch(
                "shift set is not closed under conjugation".into(),
            ));
        }
        Ok(data)
    }

    /// Mirrored poles of a reduced model with its residue directions.
    pub fn from_reduced(g_r: &StateSpace) -> Result<Self> {
        let pr = lti::to_pole_residue(g_r)?;
        Ok(Self {
            shifts: pr.poles.iter().map(|l| -l).collect(),
            right: pr.right,
            left: pr.left,
        })
    }

    pub fn len(&self) -> usize {
        self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shifts.is_empty()
    }

    pub fn pairing(&self) -> Option<Vec<Pairing>> {
        let scale = self.shifts.iter().map(|z| z.norm()).fold(1.0, f64::max);
        linalg::conjugate_pairing(&self.shifts, 1e-10 * scale)
    }
}

/// An absolute residual and its relative form. When the normalizer
/// vanishes the relative value falls back to the absolute one and the
/// flag is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residual {
    pub absolute: f64,
    pub relative: f64,
    pub normalizer_underflow: bool,
}

impl Residual {
    pub fn new(absolute: f64, normalizer: f64) -> Self {
        if normalizer > 1e-300 && normalizer.is_finite() {
            Self {
                absolute,
                relative: absolute / normalizer,
                normalizer_underflow: false,
            }
        } else {
            Self {
                absolute,
                relative: absolute,
                normalizer_underflow: true,
            }
        }
    }

    pub fn zero() -> Self {
        Self {
            absolute: 0.0,
            relative: 0.0,
            normalizer_underflow: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftResidual {
    pub shift: Complex64,
    pub right: Residual,
    pub left: Residual,
    pub bitangential: Residual,
}

impl ShiftResidual {
    pub fn max_relative(&self) -> f64 {
        self.right
            .relative
            .max(self.left.relative)
            .max(self.bitangential.relative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaleviResiduals {
    pub a: Residual,
    pub b: Residual,
    pub c: Residual,
    pub d: Residual,
}

impl HaleviResiduals {
    pub fn max_relative(&self) -> f64 {
        self.a
            .relative
            .max(self.b.relative)
            .max(self.c.relative)
            .max(self.d.relative)
    }

    pub fn as_array(&self) -> [(&'static str, Residual); 4] {
        [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// One entry per reduced pole λ_k, evaluated at σ = -λ_k.
    pub shifts: Vec<ShiftResidual>,
    /// `‖(F(0) - F_r(0)) N‖_F` with `N` spanning `Ker(D_w^T)`.
    pub kernel: Residual,
    pub halevi: Option<HaleviResiduals>,
}

impl ResidualReport {
    pub fn max_interpolatory_relative(&self) -> f64 {
        self.shifts
            .iter()
            .map(|r| r.max_relative())
            .fold(self.kernel.relative, f64::max)
    }

    pub fn max_halevi_relative(&self) -> Option<f64> {
        self.halevi.map(|h| h.max_relative())
    }
}

/// Interpolation residuals of `𝔉[G_r]` against `𝔉[G]` at arbitrary data.
pub fn residuals_at(
    fg: &FRealization,
    fgr: &FRealization,
    data: &InterpolationData,
) -> Result<Vec<ShiftResidual>> {
    let mut out = Vec::with_capacity(data.len());
    for (k, &s) in data.shifts.iter().enumerate() {
        let b = data.right.columns(k, 1).into_owned();
        let cv = data.left.columns(k, 1).transpose();
        let f = fmap::eval_f(fg, s)?;
        let fr = fmap::eval_f(fgr, s)?;
        let df = fmap::eval_f_derivative(fg, s)?;
        let dfr = fmap::eval_f_derivative(fgr, s)?;
        let diff = &f - &fr;
        let right = Residual::new(cfro(&(&diff * &b)), cfro(&(&f * &b)));
        let left = Residual::new(cfro(&(&cv * &diff)), cfro(&(&cv * &f)));
        let bt = (&cv * (&df - &dfr) * &b)[(0, 0)];
        let bt0 = (&cv * &df * &b)[(0, 0)];
        let bitangential = Residual::new(bt.norm(), bt0.norm());
        out.push(ShiftResidual {
            shift: s,
            right,
            left,
            bitangential,
        });
    }
    Ok(out)
}

/// Impulse-at-zero residual on `Ker(D_w^T)`.
pub fn kernel_residual(fg: &FRealization, fgr: &FRealization, n: &Mat) -> Residual {
    if n.ncols() == 0 {
        return Residual::zero();
    }
    let f0 = fmap::f_impulse_at_zero(fg) * n;
    let fr0 = fmap::f_impulse_at_zero(fgr) * n;
    Residual::new(fro(&(&f0 - fr0)), fro(&f0))
}

/// The same quantity through `Z`, `Z_r` and `P_w` without forming either
/// realization's impulse response.
pub fn kernel_residual_closed_form(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
) -> Result<Residual> {
    let n = w.kernel();
    if n.ncols() == 0 {
        return Ok(Residual::zero());
    }
    let p_w = w.gramian()?;
    let rhs = w.c() * &p_w + w.d() * w.b().transpose();
    let z = linalg::solve_sylvester(g.a(), &w.a().transpose(), &(g.b() * &rhs))?;
    let z_r = linalg::solve_sylvester(g_r.a(), &w.a().transpose(), &(g_r.b() * &rhs))?;
    let cpc = w.c() * &p_w * w.c().transpose();
    let full = (g.c() * z * w.c().transpose() + g.d() * &cpc) * &n;
    let red = (g_r.c() * z_r * w.c().transpose() + g_r.d() * &cpc) * &n;
    Ok(Residual::new(fro(&(&full - red)), fro(&full)))
}

fn check_pair(g: &StateSpace, g_r: &StateSpace, w: &WeightFilter) -> Result<()> {
    if g.inputs() != g_r.inputs() || g.outputs() != g_r.outputs() {
        return Err(MorError::DimensionMismatch(format!(
            "full system is {}x{}, reduced is {}x{}",
            g.outputs(),
            g.inputs(),
            g_r.outputs(),
            g_r.inputs()
        )));
    }
    fmap::validate_membership(g, w)?;
    fmap::validate_membership(g_r, w)
}

/// Residuals of the interpolation conditions at σ = -λ_k for every reduced
/// pole, plus the kernel condition.
pub fn interpolatory_residuals(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
) -> Result<ResidualReport> {
    check_pair(g, g_r, w)?;
    let data = InterpolationData::from_reduced(g_r)?;
    let fg = fmap::build_f_realization(g, w)?;
    let fgr = fmap::build_f_realization(g_r, w)?;
    let shifts = residuals_at(&fg, &fgr, &data)?;
    let kernel = kernel_residual(&fg, &fgr, &w.kernel());
    Ok(ResidualReport {
        shifts,
        kernel,
        halevi: None,
    })
}

#[derive(Debug, Clone)]
pub struct HaleviSolution {
    pub x: Mat,
    pub p_r: Mat,
    pub q_r: Mat,
    pub y: Mat,
}

/// `[0 C_w]` padded to the width of `A_F`.
fn zero_cw(n: usize, w: &WeightFilter) -> Mat {
    let (m, nw) = (w.outputs(), w.order());
    let mut e = Mat::zeros(m, n + nw);
    e.view_mut((0, n), (m, nw)).copy_from(w.c());
    e
}

pub fn solve_halevi_system(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
) -> Result<HaleviSolution> {
    check_pair(g, g_r, w)?;
    let f = fmap::build_f_realization(g, w)?;
    solve_halevi_with(&f, g_r, w)
}

fn solve_halevi_with(f: &FRealization, g_r: &StateSpace, w: &WeightFilter) -> Result<HaleviSolution> {
    let g = f.system();
    let (a_r, b_r, c_r, d_r) = (g_r.a(), g_r.b(), g_r.c(), g_r.d());
    let e = zero_cw(g.order(), w);
    let x = linalg::solve_sylvester(&f.a_f, &a_r.transpose(), &(&f.b_f * b_r.transpose()))?;
    let coupling = b_r * &e * &x;
    let q = &coupling + coupling.transpose() + b_r * w.d() * w.d().transpose() * b_r.transpose();
    let p_r = linalg::solve_lyapunov(a_r, &q)?;
    let q_r = linalg::solve_lyapunov(&a_r.transpose(), &(c_r.transpose() * c_r))?;
    let mut left = Mat::zeros(g.order() + w.order(), g.outputs());
    left.view_mut((0, 0), (g.order(), g.outputs()))
        .copy_from(&g.c().transpose());
    left.view_mut((g.order(), 0), (w.order(), g.outputs()))
        .copy_from(&((g.d() - d_r) * w.c()).transpose());
    let rhs = left * c_r - e.transpose() * b_r.transpose() * &q_r;
    let y = linalg::solve_sylvester(&f.a_f.transpose(), a_r, &(-rhs))?;
    Ok(HaleviSolution { x, p_r, q_r, y })
}

fn termwise(terms: &[Mat]) -> Residual {
    let sum = terms.iter().fold(Mat::zeros(terms[0].nrows(), terms[0].ncols()), |acc, t| acc + t);
    let scale: f64 = terms.iter().map(fro).sum();
    Residual::new(fro(&sum), scale)
}

/// Frobenius norms of the four matrix optimality conditions. Relative
/// forms divide by the sum of the norms of the individual terms.
pub fn halevi_residuals(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
) -> Result<HaleviResiduals> {
    check_pair(g, g_r, w)?;
    let f = fmap::build_f_realization(g, w)?;
    let sol = solve_halevi_with(&f, g_r, w)?;
    Ok(halevi_from_solution(&f, g_r, w, &sol))
}

fn halevi_from_solution(
    f: &FRealization,
    g_r: &StateSpace,
    w: &WeightFilter,
    sol: &HaleviSolution,
) -> HaleviResiduals {
    let g = f.system();
    let HaleviSolution { x, p_r, q_r, y } = sol;
    let (b_r, c_r, d_r) = (g_r.b(), g_r.c(), g_r.d());
    let e = zero_cw(g.order(), w);
    let xe = x.transpose() * e.transpose();
    let a = termwise(&[y.transpose() * x, q_r * p_r]);
    let b = termwise(&[&f.c_f * x, -(c_r * p_r), -(d_r * &e * x)]);
    let c = termwise(&[
        y.transpose() * &f.b_f,
        q_r * (b_r * w.d() * w.d().transpose() + &xe),
    ]);
    let n = w.kernel();
    let d = if n.ncols() == 0 {
        Residual::zero()
    } else {
        let cpc = w.c() * &f.p_w * w.c().transpose();
        termwise(&[
            c_r * &xe * &n,
            -(g.c() * &f.z * w.c().transpose() * &n),
            -((g.d() - d_r) * cpc * &n),
        ])
    };
    HaleviResiduals { a, b, c, d }
}

/// Both residual families in one report.
pub fn full_report(g: &StateSpace, g_r: &StateSpace, w: &WeightFilter) -> Result<ResidualReport> {
    let mut rep = interpolatory_residuals(g, g_r, w)?;
    rep.halevi = Some(halevi_residuals(g, g_r, w)?);
    Ok(rep)
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub interpolatory_satisfied: bool,
    pub halevi_satisfied: bool,
    pub equivalent: bool,
    pub report: ResidualReport,
}

pub const DEFAULT_SCALE_FACTOR: f64 = 10.0;

/// Whether the interpolatory family is below `tol` exactly when the Halevi
/// family is below `tol · scale_factor`.
pub fn equivalence_check(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
    tol: f64,
    scale_factor: f64,
) -> Result<EquivalenceReport> {
    let report = full_report(g, g_r, w)?;
    let interpolatory_satisfied = report.max_interpolatory_relative() <= tol;
    let halevi_satisfied = report.max_halevi_relative().unwrap_or(f64::INFINITY) <= tol * scale_factor;
    Ok(EquivalenceReport {
        interpolatory_satisfied,
        halevi_satisfied,
        equivalent: interpolatory_satisfied == halevi_satisfied,
        report,
    })
}

/// Convenience: residuals of `G_r` treated as an approximation of `G`
/// evaluated directly from the pole-residue form of both maps.
pub fn residuals_by_residue_sums(
    g: &StateSpace,
    g_r: &StateSpace,
    w: &WeightFilter,
) -> Result<Vec<ShiftResidual>> {
    let data = InterpolationData::from_reduced(g_r)?;
    let mut out = Vec::new();
    for (k, &s) in data.shifts.iter().enumerate() {
        let b = data.right.columns(k, 1).into_owned();
        let cv = data.left.columns(k, 1).transpose();
        let f = fmap::eval_f_by_residues(g, w, s)?;
        let fr = fmap::eval_f_by_residues(g_r, w, s)?;
        let h = 1e-5 * (1.0 + s.norm());
        let hc = Complex64::new(h, 0.0);
        let fd = |sys: &StateSpace| -> Result<CMat> {
            Ok((fmap::eval_f_by_residues(sys, w, s + hc)? - fmap::eval_f_by_residues(sys, w, s - hc)?)
                / (hc * 2.0))
        };
        let df = fd(g)?;
        let dfr = fd(g_r)?;
        let diff = &f - &fr;
        out.push(ShiftResidual {
            shift: s,
            right: Residual::new(cfro(&(&diff * &b)), cfro(&(&f * &b))),
            left: Residual::new(cfro(&(&cv * &diff)), cfro(&(&cv * &f))),
            bitangential: Residual::new(
                (&cv * (&df - &dfr) * &b)[(0, 0)].norm(),
                (&cv * &df * &b)[(0, 0)].norm(),
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, cl: usize, v: &[f64]) -> Mat {
        Mat::from_row_slice(r, cl, v)
    }

    fn g1() -> StateSpace {
        StateSpace::strictly_proper(m(1, 1, &[-1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap()
    }

    fn w2() -> WeightFilter {
        WeightFilter::new(m(1, 1, &[-2.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[0.0])).unwrap()
    }

    #[test]
    fn identical_models_have_zero_residuals() {
        let rep = full_report(&g1(), &g1(), &w2()).unwrap();
        assert!(rep.max_interpolatory_relative() < 1e-10);
        assert!(rep.max_halevi_relative().unwrap() < 1e-10);
        let eq = equivalence_check(&g1(), &g1(), &w2(), 1e-6, DEFAULT_SCALE_FACTOR).unwrap();
        assert!(eq.equivalent && eq.interpolatory_satisfied);
    }

    #[test]
    fn q_r_scalar() {
        let sol = solve_halevi_system(&g1(), &g1(), &w2()).unwrap();
        assert!((sol.q_r[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invertible_dw_makes_kernel_vacuous() {
        let w = WeightFilter::new(m(1, 1, &[-2.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0]), m(1, 1, &[1.0])).unwrap();
        let gr = StateSpace::strictly_proper(m(1, 1, &[-3.0]), m(1, 1, &[2.0]), m(1, 1, &[1.0])).unwrap();
        let rep = full_report(&g1(), &gr, &w).unwrap();
        assert_eq!(rep.kernel, Residual::zero());
        assert_eq!(rep.halevi.unwrap().d, Residual::zero());
    }

    #[test]
    fn kernel_residual_two_routes() {
        let g = StateSpace::strictly_proper(
            m(2, 2, &[-1.0, 0.3, 0.0, -2.5]),
            m(2, 1, &[1.0, 0.4]),
            m(1, 2, &[0.7, -1.0]),
        )
        .unwrap();
        let gr = StateSpace::new(m(1, 1, &[-1.7]), m(1, 1, &[0.9]), m(1, 1, &[0.6]), m(1, 1, &[0.2])).unwrap();
        let w = w2();
        let fg = fmap::build_f_realization(&g, &w).unwrap();
        let fgr = fmap::build_f_realization(&gr, &w).unwrap();
        let a = kernel_residual(&fg, &fgr, &w.kernel());
        let b = kernel_residual_closed_form(&g, &gr, &w).unwrap();
        assert!((a.absolute - b.absolute).abs() < 1e-12);
    }

    #[test]
    fn residual_normalizer_fallback() {
        let r = Residual::new(2.0, 0.0);
        assert!(r.normalizer_underflow && r.relative == 2.0);
    }
}

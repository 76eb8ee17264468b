//! Continuous-time state-space systems `G(s) = C (sI - A)^{-1} B + D`.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{MorError, Result};
use crate::linalg::{self, c, cnorm2, fro, to_complex, CMat, Mat, Pairing};

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: Mat,
    b: Mat,
    c: Mat,
    d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        let dims = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(MorError::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        dims("A", a.shape(), (n, n))?;
        dims("B", (b.nrows(), b.ncols()), (n, b.ncols()))?;
        dims("C", (c.nrows(), c.ncols()), (c.nrows(), n))?;
        dims("D", d.shape(), (c.nrows(), b.ncols()))?;
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            linalg::check_finite(name, m)?;
        }
        Ok(Self { a, b, c, d })
    }

    /// Realization with zero feedthrough.
    pub fn strictly_proper(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let d = Mat::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    /// Static gain with no states.
    pub fn constant(d: Mat) -> Self {
        let (p, m) = d.shape();
        Self {
            a: Mat::zeros(0, 0),
            b: Mat::zeros(0, m),
            c: Mat::zeros(p, 0),
            d,
        }
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_feedthrough(&self, d: Mat) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.c.clone(), d)
    }

    /// Same system with the feedthrough removed.
    pub fn strictly_proper_part(&self) -> Self {
        Self {
            d: Mat::zeros(self.outputs(), self.inputs()),
            ..self.clone()
        }
    }

    /// `(T^{-1} A T, T^{-1} B, C T, D)`.
    pub fn similarity(&self, t: &Mat) -> Result<Self> {
        let tinv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| MorError::SingularOperator("similarity transform".into()))?;
        Self::new(&tinv * &self.a * t, &tinv * &self.b, &self.c * t, self.d.clone())
    }

    /// Realization of `self - other` on the stacked state.
    pub fn difference(&self, other: &StateSpace) -> Result<Self> {
        if self.inputs() != other.inputs() || self.outputs() != other.outputs() {
            return Err(MorError::DimensionMismatch(format!(
                "systems are {}x{} and {}x{}",
                self.outputs(),
                self.inputs(),
                other.outputs(),
                other.inputs()
            )));
        }
        let (n1, n2) = (self.order(), other.order());
        let mut a = Mat::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = Mat::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs())).copy_from(&other.b);
        let mut cm = Mat::zeros(self.outputs(), n1 + n2);
        cm.view_mut((0, 0), (self.outputs(), n1)).copy_from(&self.c);
        cm.view_mut((0, n1), (self.outputs(), n2)).copy_from(&(-&other.c));
        Self::new(a, b, cm, &self.d - &other.d)
    }

    pub fn eval(&self, s: Complex64) -> Result<CMat> {
        eval_transfer(self, s)
    }
}

/// `C (sI - A)^{-1} B + D` by one linear solve.
pub fn eval_transfer(sys: &StateSpace, s: Complex64) -> Result<CMat> {
    let x = linalg::shifted_solve(&sys.a, s, &to_complex(&sys.b))?;
    Ok(to_complex(&sys.c) * x + to_complex(&sys.d))
}

/// `d/ds G(s) = -C (sI - A)^{-2} B`.
pub fn eval_transfer_derivative(sys: &StateSpace, s: Complex64) -> Result<CMat> {
    let x = linalg::shifted_solve(&sys.a, s, &to_complex(&sys.b))?;
    let y = linalg::shifted_solve(&sys.a, s, &x)?;
    Ok(-(to_complex(&sys.c) * y))
}

/// `G(s) = Σ c_k b_k^T / (s - λ_k) + D`.
#[derive(Debug, Clone)]
pub struct PoleResidue {
    pub poles: Vec<Complex64>,
    /// Column k holds `b_k` (m entries).
    pub right: CMat,
    /// Column k holds `c_k` (p entries).
    pub left: CMat,
    pub d: Mat,
    pub pairing: Vec<Pairing>,
}

impl PoleResidue {
    pub fn eval(&self, s: Complex64) -> CMat {
        let mut g = to_complex(&self.d);
        for (k, lam) in self.poles.iter().enumerate() {
            let w = c(1.0, 0.0) / (s - lam);
            g += self.left.column(k) * self.right.column(k).transpose() * w;
        }
        g
    }

    pub fn residue(&self, k: usize) -> CMat {
        self.left.column(k) * self.right.column(k).transpose()
    }
}

/// Pole-residue form from the eigen-decomposition `A = R Λ R^{-1}`:
/// `b_k^T` is row k of `R^{-1} B` and `c_k` is column k of `C R`.
pub fn to_pole_residue(sys: &StateSpace) -> Result<PoleResidue> {
    let sd = linalg::spectral(&sys.a)?;
    let rb = sd.solve(&to_complex(&sys.b))?;
    let cr = to_complex(&sys.c) * &sd.vectors;
    Ok(PoleResidue {
        poles: sd.eigenvalues,
        right: rb.transpose(),
        left: cr,
        d: sys.d.clone(),
        pairing: sd.pairing,
    })
}

pub fn is_stable(sys: &StateSpace) -> bool {
    is_stable_with_margin(sys, 0.0)
}

/// True iff every eigenvalue has real part below `-margin`.
pub fn is_stable_with_margin(sys: &StateSpace, margin: f64) -> bool {
    match linalg::max_real_eig(&sys.a) {
        Ok(r) => r < -margin,
        Err(_) => false,
    }
}

pub(crate) fn require_stable(sys: &StateSpace, what: &str) -> Result<()> {
    if sys.order() == 0 {
        return Ok(());
    }
    let r = linalg::max_real_eig(&sys.a)?;
    if r < 0.0 {
        Ok(())
    } else {
        Err(MorError::NonStableSystem(format!(
            "{what} has an eigenvalue with real part {r:e}"
        )))
    }
}

/// Real H2 inner product through the Sylvester cross-Gramian.
pub fn h2_inner(g: &StateSpace, h: &StateSpace) -> Result<f64> {
    if g.inputs() != h.inputs() || g.outputs() != h.outputs() {
        return Err(MorError::DimensionMismatch(format!(
            "systems are {}x{} and {}x{}",
            g.outputs(),
            g.inputs(),
            h.outputs(),
            h.inputs()
        )));
    }
    require_stable(g, "first system")?;
    require_stable(h, "second system")?;
    if fro(&g.d) > 0.0 || fro(&h.d) > 0.0 {
        return Err(MorError::InfiniteNorm(
            "H2 inner product needs zero feedthrough".into(),
        ));
    }
    let x = linalg::solve_sylvester(&g.a, &h.a.transpose(), &(&g.b * h.b.transpose()))?;
    Ok((&g.c * x * h.c.transpose()).trace())
}

pub fn h2_norm(g: &StateSpace) -> Result<f64> {
    Ok(h2_inner(g, g)?.max(0.0).sqrt())
}

/// Largest spectral norm of `G(iω)` over the grid. This is a lower bound
/// of the true H∞ norm.
pub fn hinf_norm_sampled(sys: &StateSpace, omegas: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    for &w in omegas {
        let g = eval_transfer(sys, c(0.0, w))?;
        best = best.max(cnorm2(&g));
    }
    Ok(best)
}

/// Log-spaced grid of `points` frequencies in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Diagonal realization helper used in tests and examples.
pub fn diag(v: &[f64]) -> Mat {
    Mat::from_diagonal(&DVector::from_column_slice(v))
}

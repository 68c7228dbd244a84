//! Benchmark problems with known or reference solutions, and the
//! leaf-averaged relative error.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{HpsError, Result};
use crate::field::{LeafValues, SolutionField};
use crate::leafops::{Coef, PdeOperatorSpec};
use crate::meshtree::{Rect, ScalarFn, Side};
use crate::scalar::{c64, norm2, Scalar};
use crate::solver::Formulation;

pub type ImpedanceFn<T> = Arc<dyn Fn(f64, f64, Side) -> T + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryData<T> {
    Dirichlet(ScalarFn<T>),
    /// Incoming impedance data `du/dn + i eta u` on each side.
    Impedance(ImpedanceFn<T>),
}

/// Tunable parameters; `None` selects the problem's default.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProblemParams {
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub eta: Option<f64>,
}

#[derive(Clone)]
pub struct BenchmarkProblem<T: Scalar> {
    pub name: &'static str,
    pub domain: Rect,
    pub pde: PdeOperatorSpec<T>,
    pub boundary: BoundaryData<T>,
    pub exact: Option<ScalarFn<T>>,
    pub formulation: Formulation,
    /// Parameter values actually used.
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub eta: Option<f64>,
}

/// A catalog entry: real problems use `f64`, Helmholtz problems `c64`.
#[derive(Clone)]
pub enum Problem {
    Real(BenchmarkProblem<f64>),
    Complex(BenchmarkProblem<c64>),
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Real(p) => p.name,
            Problem::Complex(p) => p.name,
        }
    }

    pub fn has_exact(&self) -> bool {
        match self {
            Problem::Real(p) => p.exact.is_some(),
            Problem::Complex(p) => p.exact.is_some(),
        }
    }
}

pub const PROBLEM_NAMES: [&str; 5] = [
    "boundary_layer",
    "locally_oscillatory",
    "wave_front",
    "helmholtz_constant",
    "helmholtz_variable",
];

pub fn catalog(name: &str, params: ProblemParams) -> Result<Problem> {
    match name {
        "boundary_layer" => Ok(Problem::Real(boundary_layer(params.alpha.unwrap_or(1e-3))?)),
        "locally_oscillatory" => Ok(Problem::Real(locally_oscillatory(
            params.alpha.unwrap_or(1.0 / (10.0 * PI)),
        )?)),
        "wave_front" => Ok(Problem::Real(wave_front())),
        "helmholtz_constant" => {
            let omega = params.omega.unwrap_or(20.0 * PI);
            Ok(Problem::Complex(helmholtz_constant(omega, params.eta.unwrap_or(omega))?))
        }
        "helmholtz_variable" => {
            let omega = params.omega.unwrap_or(150.0);
            Ok(Problem::Complex(helmholtz_variable(omega, params.eta.unwrap_or(omega))?))
        }
        _ => Err(HpsError::InvalidArgument(format!(
            "unknown problem `{name}` (expected one of {})",
            PROBLEM_NAMES.join(", ")
        ))),
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(HpsError::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn unit_square() -> Rect {
    Rect::new(0.0, 1.0, 0.0, 1.0).expect("valid rectangle")
}

/// `-a Δu + 2 u_x + u_y = f` on the unit square with
/// `u = (1 - e^{-(1-x)/a})(1 - e^{-(1-y)/a}) cos(π(x + y))`.
pub fn boundary_layer(alpha: f64) -> Result<BenchmarkProblem<f64>> {
    let a = positive("alpha", alpha)?;
    // factor X(x) = 1 - e^{-(1-x)/a} and its derivatives
    let layer = move |t: f64| {
        let e = (-(1.0 - t) / a).exp();
        (1.0 - e, -e / a, -e / (a * a))
    };
    let exact = move |x: f64, y: f64| {
        let (xv, _, _) = layer(x);
        let (yv, _, _) = layer(y);
        xv * yv * (PI * (x + y)).cos()
    };
    let rhs = move |x: f64, y: f64| {
        let (xv, xd, xdd) = layer(x);
        let (yv, yd, ydd) = layer(y);
        let c = (PI * (x + y)).cos();
        let s = (PI * (x + y)).sin();
        let cd = -PI * s;
        let cdd = -PI * PI * c;
        let ux = xd * yv * c + xv * yv * cd;
        let uy = xv * yd * c + xv * yv * cd;
        let uxx = xdd * yv * c + 2.0 * xd * yv * cd + xv * yv * cdd;
        let uyy = xv * ydd * c + 2.0 * xv * yd * cd + xv * yv * cdd;
        -a * (uxx + uyy) + 2.0 * ux + uy
    };
    let exact: ScalarFn<f64> = Arc::new(exact);
    Ok(BenchmarkProblem {
        name: "boundary_layer",
        domain: unit_square(),
        pde: PdeOperatorSpec {
            c11: Coef::Const(a),
            c12: Coef::Zero,
            c22: Coef::Const(a),
            c1: Coef::Const(2.0),
            c2: Coef::Const(1.0),
            c0: Coef::Zero,
            body: Coef::func(rhs),
        },
        boundary: BoundaryData::Dirichlet(exact.clone()),
        exact: Some(exact),
        formulation: Formulation::Dtn,
        alpha: Some(a),
        omega: None,
        eta: None,
    })
}

/// `-Δu - (a + r)^{-4} u = f` on the unit square with
/// `u = sin(1 / (a + r))`, `r = |(x, y)|`.
pub fn locally_oscillatory(alpha: f64) -> Result<BenchmarkProblem<f64>> {
    let a = positive("alpha", alpha)?;
    let exact: ScalarFn<f64> = Arc::new(move |x: f64, y: f64| (1.0 / (a + x.hypot(y))).sin());
    let rhs = move |x: f64, y: f64| {
        let r = x.hypot(y);
        let s = 1.0 / (a + r);
        // singular (NaN) at the origin, which is never a collocation point
        s * s * s.cos() * (1.0 / r - 2.0 * s)
    };
    Ok(BenchmarkProblem {
        name: "locally_oscillatory",
        domain: unit_square(),
        pde: PdeOperatorSpec {
            c0: Coef::func(move |x, y| -(a + x.hypot(y)).powi(-4)),
            body: Coef::func(rhs),
            ..PdeOperatorSpec::laplace()
        },
        boundary: BoundaryData::Dirichlet(exact.clone()),
        exact: Some(exact),
        formulation: Formulation::Dtn,
        alpha: Some(a),
        omega: None,
        eta: None,
    })
}

/// Poisson problem on the unit square with
/// `u = atan(50 (|(x + 0.05, y + 0.05)| - 0.7))`.
pub fn wave_front() -> BenchmarkProblem<f64> {
    let rho = |x: f64, y: f64| (x + 0.05).hypot(y + 0.05);
    let exact: ScalarFn<f64> = Arc::new(move |x, y| (50.0 * (rho(x, y) - 0.7)).atan());
    let rhs = move |x: f64, y: f64| {
        let p = rho(x, y);
        let w = 50.0 * (p - 0.7);
        let q = 1.0 + w * w;
        5000.0 * w / (q * q) - 50.0 / (q * p)
    };
    BenchmarkProblem {
        name: "wave_front",
        domain: unit_square(),
        pde: PdeOperatorSpec::laplace().with_body(Coef::func(rhs)),
        boundary: BoundaryData::Dirichlet(exact.clone()),
        exact: Some(exact),
        formulation: Formulation::Dtn,
        alpha: None,
        omega: None,
        eta: None,
    }
}

/// Impedance data of the plane wave `e^{i ω x}` for parameter `eta`.
pub fn plane_wave_impedance(omega: f64, eta: f64) -> ImpedanceFn<c64> {
    Arc::new(move |x: f64, _y: f64, side: Side| {
        let (nx, _) = side.normal();
        let u = c64::new(0.0, omega * x).exp();
        c64::new(0.0, omega * nx + eta) * u
    })
}

fn helmholtz(
    name: &'static str,
    domain: Rect,
    omega: f64,
    eta: f64,
    c: Coef<c64>,
    body: Coef<c64>,
) -> Result<BenchmarkProblem<c64>> {
    let omega = positive("omega", omega)?;
    if eta == 0.0 || !eta.is_finite() {
        return Err(HpsError::InvalidArgument(format!("eta must be nonzero, got {eta}")));
    }
    Ok(BenchmarkProblem {
        name,
        domain,
        pde: PdeOperatorSpec::helmholtz(omega, c).with_body(body),
        boundary: BoundaryData::Impedance(plane_wave_impedance(omega, eta)),
        exact: None,
        formulation: Formulation::Iti {
            eta: c64::new(eta, 0.0),
        },
        alpha: None,
        omega: Some(omega),
        eta: Some(eta),
    })
}

/// `-Δu - ω² u = f` on (-1, 1)² with a narrow Gaussian source.
pub fn helmholtz_constant(omega: f64, eta: f64) -> Result<BenchmarkProblem<c64>> {
    let sigma: f64 = 0.005;
    let amp = 1.0 / (2.0 * PI * sigma).sqrt();
    let body = Coef::func(move |x: f64, y: f64| {
        let r2 = x * x + (y - 0.875) * (y - 0.875);
        c64::new(amp * (-r2 / (2.0 * sigma * sigma)).exp(), 0.0)
    });
    helmholtz(
        "helmholtz_constant",
        Rect::new(-1.0, 1.0, -1.0, 1.0)?,
        omega,
        eta,
        Coef::Const(c64::new(1.0, 0.0)),
        body,
    )
}

/// `-Δu - ω² c(x) u = 0` on (-0.5, 0.5)² with
/// `c = 4 (y - 0.2) [1 - erf(25 (|x| - 0.3))]`.
pub fn helmholtz_variable(omega: f64, eta: f64) -> Result<BenchmarkProblem<c64>> {
    let c = Coef::func(|x: f64, y: f64| {
        c64::new(4.0 * (y - 0.2) * (1.0 - libm::erf(25.0 * (x.hypot(y) - 0.3))), 0.0)
    });
    helmholtz(
        "helmholtz_variable",
        Rect::new(-0.5, 0.5, -0.5, 0.5)?,
        omega,
        eta,
        c,
        Coef::Zero,
    )
}

impl BenchmarkProblem<c64> {
    /// The same problem without the source term. With a constant medium
    /// the exact solution is then the incident plane wave.
    pub fn without_source(mut self) -> Self {
        self.pde.body = Coef::Zero;
        let constant = matches!(self.pde.c0, Coef::Const(v) if v == c64::new(-self.omega.unwrap_or(0.0).powi(2), 0.0));
        if constant {
            let omega = self.omega.unwrap_or(0.0);
            self.exact = Some(Arc::new(move |x: f64, _y: f64| c64::new(0.0, omega * x).exp()));
        }
        self
    }
}

/// Per-leaf relative errors over the discretization points and their
/// unweighted mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub per_leaf: Vec<(usize, f64)>,
    pub mean: f64,
}

fn mean_error<T: Scalar>(
    solution: &SolutionField<T>,
    mut reference: impl FnMut(usize, &LeafValues<T>) -> Result<Vec<T>>,
) -> Result<ErrorReport> {
    if solution.leaves.is_empty() {
        return Err(HpsError::InvalidArgument("empty solution".into()));
    }
    let mut per_leaf = Vec::with_capacity(solution.num_leaves());
    for (&id, leaf) in &solution.leaves {
        let r = reference(id, leaf)?;
        let idx: Vec<usize> = LeafValues::<T>::discretization_indices(leaf.n_c).collect();
        let den = norm2(idx.iter().map(|&k| r[k]));
        let num = norm2(idx.iter().map(|&k| leaf.values[k] - r[k]));
        if !(den > 1e-300) {
            return Err(HpsError::DegenerateReference { leaf: id });
        }
        per_leaf.push((id, num / den));
    }
    let mean = per_leaf.iter().map(|e| e.1).sum::<f64>() / per_leaf.len() as f64;
    Ok(ErrorReport { per_leaf, mean })
}

/// Error against an exact solution.
pub fn relative_error<T: Scalar>(solution: &SolutionField<T>, exact: &dyn Fn(f64, f64) -> T) -> Result<ErrorReport> {
    mean_error(solution, |_, leaf| {
        let n = leaf.n_c;
        let xs = crate::spectral1d::cheb_nodes(n, leaf.rect.x0, leaf.rect.x1)?.points;
        let ys = crate::spectral1d::cheb_nodes(n, leaf.rect.y0, leaf.rect.y1)?.points;
        let mut v = Vec::with_capacity(n * n);
        for &x in &xs {
            for &y in &ys {
                v.push(exact(x, y));
            }
        }
        Ok(v)
    })
}

/// Error against a reference field on another mesh, evaluated through the
/// reference's piecewise tensor interpolant.
pub fn relative_error_vs_field<T: Scalar>(
    solution: &SolutionField<T>,
    reference: &SolutionField<T>,
) -> Result<ErrorReport> {
    mean_error(solution, |_, leaf| reference.sample_on(&leaf.rect))
}

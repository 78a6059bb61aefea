//! Python bindings for the fracvar toolkit: the discrete fractional
//! operators, the problem model, the direct solver, and the
//! necessary-condition audits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fracvar::direct::{self, SolverOptions, Trajectory};
use fracvar::fracops::{self, FracOrder, SampledSignal};
use fracvar::indirect;
use fracvar::problems::{
    builtin, BoundaryCondition, Constraint, Endpoint, IsoperimetricConstraint, Lagrangian,
    VariationalProblem,
};

fn py_err(e: fracvar::Error) -> PyErr {
    match e {
        fracvar::Error::SolverStalled { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Gamma function (Lanczos approximation). Raises at the poles.
#[pyfunction]
fn gamma(x: f64) -> PyResult<f64> {
    fracops::gamma(x).map_err(py_err)
}

/// Reciprocal gamma 1/Γ(x); 0 at the poles.
#[pyfunction]
fn rgamma(x: f64) -> f64 {
    fracops::rgamma(x)
}

/// Grünwald–Letnikov weights w_0..w_m for a given order.
#[pyfunction]
fn gl_weights(alpha: f64, m: usize) -> Vec<f64> {
    fracops::gl_weights(alpha, m).as_slice().to_vec()
}

/// Normalize an expression: parse and print it back.
#[pyfunction]
fn normalize_expression(source: &str) -> PyResult<String> {
    fracvar::problems::expr::parse(source)
        .map(|e| e.to_string())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Uniform grid on [a, b] with n subintervals.
#[pyclass]
struct Grid {
    inner: fracops::Grid,
}

#[pymethods]
impl Grid {
    #[new]
    fn new(a: f64, b: f64, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: fracops::Grid::new(a, b, n).map_err(py_err)?,
        })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h()
    }

    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes()
    }

    fn __repr__(&self) -> String {
        format!(
            "Grid(a={}, b={}, n={})",
            self.inner.a(),
            self.inner.b(),
            self.inner.n()
        )
    }
}

fn signal(grid: &Grid, values: Vec<f64>) -> PyResult<SampledSignal> {
    SampledSignal::new(grid.inner, values).map_err(py_err)
}

/// Truncated Grünwald–Letnikov approximation of the left Caputo
/// derivative; index 0 is a convention value.
#[pyfunction]
fn caputo_left(grid: &Grid, values: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    let order = FracOrder::new(alpha).map_err(py_err)?;
    Ok(fracops::caputo_left(&signal(grid, values)?, order)
        .map_err(py_err)?
        .into_values())
}

/// Left Caputo derivative of order in (i-1, i), i >= 2, given
/// x(a), x'(a), ... up to order i-1.
#[pyfunction]
fn caputo_left_higher(
    grid: &Grid,
    values: Vec<f64>,
    alpha: f64,
    initial_derivs: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let order = FracOrder::new(alpha).map_err(py_err)?;
    Ok(
        fracops::caputo_left_higher(&signal(grid, values)?, order, &initial_derivs)
            .map_err(py_err)?
            .into_values(),
    )
}

/// Right Riemann–Liouville derivative; index n is a convention value.
#[pyfunction]
fn rl_right_derivative(grid: &Grid, values: Vec<f64>, alpha: f64) -> PyResult<Vec<f64>> {
    let order = FracOrder::new(alpha).map_err(py_err)?;
    Ok(fracops::rl_right_derivative(&signal(grid, values)?, order)
        .map_err(py_err)?
        .into_values())
}

/// Right Riemann–Liouville integral of order beta in (0, 1).
#[pyfunction]
fn rl_right_integral(grid: &Grid, values: Vec<f64>, beta: f64) -> PyResult<Vec<f64>> {
    Ok(fracops::rl_right_integral(&signal(grid, values)?, beta)
        .map_err(py_err)?
        .into_values())
}

/// Solver output.
#[pyclass]
struct Solution {
    #[pyo3(get)]
    nodes: Vec<f64>,
    #[pyo3(get)]
    values: Vec<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    gradient_norm: f64,
    #[pyo3(get)]
    objective: f64,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    multiplier: Option<f64>,
}

#[pymethods]
impl Solution {
    fn __repr__(&self) -> String {
        format!(
            "Solution(n={}, objective={:.6e}, converged={})",
            self.values.len().saturating_sub(1),
            self.objective,
            self.converged
        )
    }
}

/// Euler–Lagrange audit of a candidate trajectory.
#[pyclass]
struct Residual {
    #[pyo3(get)]
    values: Vec<f64>,
    #[pyo3(get)]
    sup_norm_interior: f64,
    #[pyo3(get)]
    band: (usize, usize),
    #[pyo3(get)]
    transversality_left: Option<f64>,
    #[pyo3(get)]
    transversality_right: Option<f64>,
    #[pyo3(get)]
    legendre_min: f64,
}

#[pymethods]
impl Residual {
    fn __repr__(&self) -> String {
        format!("Residual(sup_norm_interior={:.6e})", self.sup_norm_interior)
    }
}

/// A scalar variational problem with Caputo-derivative dynamics.
#[pyclass]
struct Problem {
    inner: VariationalProblem,
}

fn endpoint(value: Option<f64>) -> Endpoint {
    match value {
        Some(v) => Endpoint::Fixed(v),
        None => Endpoint::Free,
    }
}

#[pymethods]
impl Problem {
    /// Build a problem from an expression in t, x, d. Boundary values of
    /// None mean the endpoint is free. `isoperimetric` takes
    /// (integrand_expression, level).
    #[new]
    #[pyo3(signature = (a, b, alpha, lagrangian, x_a=None, x_b=None, isoperimetric=None))]
    fn new(
        a: f64,
        b: f64,
        alpha: f64,
        lagrangian: &str,
        x_a: Option<f64>,
        x_b: Option<f64>,
        isoperimetric: Option<(String, f64)>,
    ) -> PyResult<Self> {
        let constraint = match isoperimetric {
            Some((src, level)) => Constraint::Isoperimetric(IsoperimetricConstraint {
                integrand: Lagrangian::parse(&src).map_err(py_err)?,
                level,
            }),
            None => Constraint::None,
        };
        let inner = VariationalProblem::new(
            a,
            b,
            vec![FracOrder::new(alpha).map_err(py_err)?],
            Lagrangian::parse(lagrangian).map_err(py_err)?,
            vec![BoundaryCondition::new(endpoint(x_a), endpoint(x_b)).map_err(py_err)?],
            constraint,
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// One of the builtin example problems: "example1" or "example2".
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: builtin(name).map_err(py_err)?,
        })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.order().alpha()
    }

    #[getter]
    fn lagrangian(&self) -> String {
        self.inner.lagrangian().to_string()
    }

    /// Solve by the direct method on n subintervals.
    #[pyo3(signature = (n, tol=1e-9, max_iter=200))]
    fn solve(&self, n: usize, tol: f64, max_iter: usize) -> PyResult<Solution> {
        let options = SolverOptions {
            tol,
            max_iter,
            ..SolverOptions::default()
        };
        let report = match direct::solve(&self.inner, n, &options) {
            Ok(report) => report,
            Err(fracvar::Error::SolverStalled { report }) => *report,
            Err(other) => return Err(py_err(other)),
        };
        let sig = report.trajectory.component(0);
        Ok(Solution {
            nodes: sig.grid().nodes(),
            values: sig.values().to_vec(),
            iterations: report.iterations,
            gradient_norm: report.gradient_norm,
            objective: report.objective_value,
            converged: report.converged,
            multiplier: report.multiplier,
        })
    }

    /// Discretized objective of a full node-value vector.
    fn objective(&self, values: Vec<f64>) -> PyResult<f64> {
        let objective =
            direct::DiscretizedObjective::new(&self.inner, values.len().saturating_sub(1))
                .map_err(py_err)?;
        let unknowns = objective.unknowns_from(&values);
        objective.objective(&unknowns).map_err(py_err)
    }

    /// Euler–Lagrange residual audit of sampled node values. For
    /// isoperimetric problems pass the multiplier.
    #[pyo3(signature = (values, lambda_=None))]
    fn residual(&self, values: Vec<f64>, lambda_: Option<f64>) -> PyResult<Residual> {
        let traj = self.trajectory(values)?;
        let report = match lambda_ {
            Some(lambda) => {
                indirect::isoperimetric_residual(&self.inner, &traj, lambda).map_err(py_err)?
            }
            None => indirect::el_residual(&self.inner, &traj).map_err(py_err)?,
        };
        Ok(Residual {
            values: report.residuals[0].values().to_vec(),
            sup_norm_interior: report.sup_norm_interior,
            band: report.band,
            transversality_left: report.transversality_left,
            transversality_right: report.transversality_right,
            legendre_min: report.legendre_min,
        })
    }

    /// Minimum of the second difference of L in the derivative slot along
    /// the given node values.
    fn legendre(&self, values: Vec<f64>) -> PyResult<f64> {
        let traj = self.trajectory(values)?;
        indirect::legendre_check(&self.inner, &traj).map_err(py_err)
    }

    /// Sampled convexity check; returns (passed, worst_margin).
    fn convexity(&self, samples: usize) -> PyResult<(bool, f64)> {
        let report = indirect::convexity_check(&self.inner, samples).map_err(py_err)?;
        Ok((report.convex, report.worst_margin))
    }

    /// Per-grid errors against an analytic reference expression in t:
    /// a list of (n, error) pairs.
    fn convergence(&self, n_list: Vec<usize>, analytic: &str) -> PyResult<Vec<(usize, f64)>> {
        let reference = direct::Reference::Analytic(
            fracvar::problems::expr::parse(analytic)
                .map_err(|e| PyValueError::new_err(e.to_string()))?,
        );
        let rows = direct::convergence_study(
            &self.inner,
            &n_list,
            &reference,
            &SolverOptions::default(),
        )
        .map_err(py_err)?;
        Ok(rows
            .into_iter()
            .map(|row| (row.n, row.error.unwrap_or(f64::NAN)))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(a={}, b={}, alpha={}, lagrangian='{}')",
            self.inner.a(),
            self.inner.b(),
            self.inner.order().alpha(),
            self.inner.lagrangian()
        )
    }
}

impl Problem {
    fn trajectory(&self, values: Vec<f64>) -> PyResult<Trajectory> {
        let n = values.len().saturating_sub(1);
        let grid = self.inner.grid(n).map_err(py_err)?;
        Ok(Trajectory::scalar(
            SampledSignal::new(grid, values).map_err(py_err)?,
        ))
    }
}

#[pymodule]
fn fracvar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gamma, m)?)?;
    m.add_function(wrap_pyfunction!(rgamma, m)?)?;
    m.add_function(wrap_pyfunction!(gl_weights, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_expression, m)?)?;
    m.add_function(wrap_pyfunction!(caputo_left, m)?)?;
    m.add_function(wrap_pyfunction!(caputo_left_higher, m)?)?;
    m.add_function(wrap_pyfunction!(rl_right_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(rl_right_integral, m)?)?;
    m.add_class::<Grid>()?;
    m.add_class::<Problem>()?;
    m.add_class::<Solution>()?;
    m.add_class::<Residual>()?;
    Ok(())
}

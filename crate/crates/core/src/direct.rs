//! Direct method: discretize the functional into a finite-dimensional Ψ and
//! solve the stationarity system ∂Ψ/∂x_i = 0 with a damped Newton iteration.
//!
//! The quadrature is the right-endpoint sum Ψ = Σ_{k=1}^{N} h L(t_k, x_k,
//! D~x(t_k)), which never touches the singular Caputo correction at t_0.
//! Isoperimetric constraints are handled as a bordered system with the
//! multiplier appended as an extra unknown.

use crate::fracops::{self, FracOrder, GLWeights, Grid, SampledSignal};
use crate::problems::{Constraint, Endpoint, Lagrangian, VariationalProblem};
use crate::problems::expr::Expr;
use crate::{Error, Result};

/// Candidate solution: one sampled component per unknown function, all on
/// one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    components: Vec<SampledSignal>,
}

impl Trajectory {
    pub fn new(components: Vec<SampledSignal>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidSignal("trajectory needs a component".into()))?;
        let grid = first.grid();
        if components.iter().any(|c| c.grid() != grid) {
            return Err(Error::InvalidSignal(
                "trajectory components must share one grid".into(),
            ));
        }
        Ok(Self { grid, components })
    }

    pub fn scalar(signal: SampledSignal) -> Self {
        Self {
            grid: signal.grid(),
            components: vec![signal],
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn components(&self) -> &[SampledSignal] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &SampledSignal {
        &self.components[i]
    }
}

/// Options for [`solve`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Stop when the sup norm of the stationarity residual drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Backtracking halvings allowed per Newton step.
    pub damping_max: usize,
    /// Starting trajectory; defaults to linear interpolation of the
    /// boundary data.
    pub seed: Option<Trajectory>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            damping_max: 30,
            seed: None,
        }
    }
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub trajectory: Trajectory,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective_value: f64,
    /// Isoperimetric multiplier λ, when a constraint was present.
    pub multiplier: Option<f64>,
    pub converged: bool,
    /// Sup of the constraint integrand's own stationarity residual, scaled
    /// by 1/h. Near zero it flags a possibly abnormal extremal (the
    /// constraint alone is stationary, so the multiplier is not unique).
    pub m_stationarity: Option<f64>,
    pub abnormal_suspected: bool,
}

/// Ψ from the discretized functional, as a function of the unknown nodes
/// (interior nodes, plus endpoints when the boundary leaves them free).
#[derive(Debug, Clone)]
pub struct DiscretizedObjective {
    grid: Grid,
    order: FracOrder,
    lagrangian: Lagrangian,
    left: Endpoint,
    right: Endpoint,
    free: Vec<usize>,
    weights: GLWeights,
    /// corr[j] = (t_j - a)^{-α} / Γ(1-α); index 0 unused.
    corr: Vec<f64>,
    /// h^{-α}.
    scale: f64,
}

impl DiscretizedObjective {
    /// Discretize a scalar problem on n subintervals. Weights and the
    /// correction coefficients are cached here; convolutions dominate the
    /// runtime and recomputing weights per evaluation would not be free.
    pub fn new(problem: &VariationalProblem, n: usize) -> Result<Self> {
        if problem.components() != 1 || problem.is_higher_order() {
            return Err(Error::InvalidProblem(
                "the direct solver handles scalar problems of order in (0, 1]".into(),
            ));
        }
        let order = problem.order();
        let grid = problem.grid(n)?;
        let alpha = order.alpha();
        let weights = fracops::gl_weights(alpha, n);
        let rg = fracops::rgamma(1.0 - alpha);
        let mut corr = vec![0.0; n + 1];
        for (j, c) in corr.iter_mut().enumerate().skip(1) {
            *c = rg * (j as f64 * grid.h()).powf(-alpha);
        }
        let bc = problem.boundary()[0];
        let mut free = Vec::with_capacity(n + 1);
        if matches!(bc.left, Endpoint::Free) {
            free.push(0);
        }
        free.extend(1..n);
        if matches!(bc.right, Endpoint::Free) {
            free.push(n);
        }
        Ok(Self {
            grid,
            order,
            lagrangian: problem.lagrangian().clone(),
            left: bc.left,
            right: bc.right,
            free,
            weights,
            corr,
            scale: grid.h().powf(-alpha),
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn order(&self) -> FracOrder {
        self.order
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn unknown_count(&self) -> usize {
        self.free.len()
    }

    /// Full node vector with fixed boundary values substituted bit-exactly.
    pub fn assemble(&self, unknowns: &[f64]) -> Vec<f64> {
        assert_eq!(unknowns.len(), self.free.len());
        let n = self.grid.n();
        let mut x = vec![0.0; n + 1];
        if let Endpoint::Fixed(v) = self.left {
            x[0] = v;
        }
        if let Endpoint::Fixed(v) = self.right {
            x[n] = v;
        }
        for (&i, &u) in self.free.iter().zip(unknowns) {
            x[i] = u;
        }
        x
    }

    pub fn unknowns_from(&self, full: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| full[i]).collect()
    }

    /// Linear interpolation of the boundary data; a free endpoint borrows
    /// the opposite fixed value, or 0 when both are free.
    pub fn initial_guess(&self) -> Vec<f64> {
        let va = self
            .left
            .fixed_value()
            .or(self.right.fixed_value())
            .unwrap_or(0.0);
        let vb = self
            .right
            .fixed_value()
            .or(self.left.fixed_value())
            .unwrap_or(0.0);
        let n = self.grid.n() as f64;
        self.free
            .iter()
            .map(|&j| va + (vb - va) * j as f64 / n)
            .collect()
    }

    /// D~x on the full node vector (cached weights; index 0 by convention).
    fn caputo(&self, x: &[f64]) -> Vec<f64> {
        let mut d = fracops::convolve_lower(x, self.weights.as_slice(), self.scale);
        if x[0] != 0.0 {
            for (j, dj) in d.iter_mut().enumerate().skip(1) {
                *dj -= x[0] * self.corr[j];
            }
        }
        d[0] = d[1];
        d
    }

    /// Right-endpoint Riemann sum of L along the assembled trajectory.
    pub fn objective(&self, unknowns: &[f64]) -> Result<f64> {
        let x = self.assemble(unknowns);
        let d = self.caputo(&x);
        let h = self.grid.h();
        let mut acc = 0.0;
        for k in 1..=self.grid.n() {
            acc += h * self.lagrangian.eval(self.grid.node(k), &[x[k]], &[d[k]])?;
        }
        Ok(acc)
    }

    /// Analytic chain-rule gradient: the unknown x_i enters L(t_i, ...)
    /// directly and D~x(t_k) for every k >= i through the weight
    /// w_{k-i}/h^α; a free x_0 also carries the correction coefficient.
    pub fn gradient(&self, unknowns: &[f64]) -> Result<Vec<f64>> {
        let x = self.assemble(unknowns);
        let d = self.caputo(&x);
        let n = self.grid.n();
        let h = self.grid.h();
        let mut p2 = vec![0.0; n + 1];
        let mut p3 = vec![0.0; n + 1];
        for k in 1..=n {
            let t = self.grid.node(k);
            p2[k] = self.lagrangian.partial_x(0, t, &[x[k]], &[d[k]])?;
            p3[k] = self.lagrangian.partial_d(0, t, &[x[k]], &[d[k]])?;
        }
        let w = self.weights.as_slice();
        let mut g = Vec::with_capacity(self.free.len());
        for &i in &self.free {
            let mut acc = if i >= 1 { h * p2[i] } else { 0.0 };
            for k in i.max(1)..=n {
                let mut coeff = self.scale * w[k - i];
                if i == 0 {
                    coeff -= self.corr[k];
                }
                acc += h * p3[k] * coeff;
            }
            g.push(acc);
        }
        Ok(g)
    }

    pub fn trajectory(&self, unknowns: &[f64]) -> Result<Trajectory> {
        let x = self.assemble(unknowns);
        Ok(Trajectory::scalar(SampledSignal::new(self.grid, x)?))
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) mod linalg {
    /// Solve the dense system A x = b (row-major, m x m) by LU with partial
    /// pivoting. Returns None when a pivot degenerates.
    pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
        let m = b.len();
        debug_assert_eq!(a.len(), m * m);
        for col in 0..m {
            let mut pivot = col;
            let mut best = a[col * m + col].abs();
            for row in (col + 1)..m {
                let cand = a[row * m + col].abs();
                if cand > best {
                    best = cand;
                    pivot = row;
                }
            }
            if !best.is_finite() || best < f64::MIN_POSITIVE * 1e4 {
                return None;
            }
            if pivot != col {
                for k in 0..m {
                    a.swap(col * m + k, pivot * m + k);
                }
                b.swap(col, pivot);
            }
            let diag = a[col * m + col];
            for row in (col + 1)..m {
                let factor = a[row * m + col] / diag;
                if factor == 0.0 {
                    continue;
                }
                for k in (col + 1)..m {
                    a[row * m + k] -= factor * a[col * m + k];
                }
                b[row] -= factor * b[col];
                a[row * m + col] = 0.0;
            }
        }
        for col in (0..m).rev() {
            let mut acc = b[col];
            for k in (col + 1)..m {
                acc -= a[col * m + k] * b[k];
            }
            b[col] = acc / a[col * m + col];
        }
        if b.iter().all(|v| v.is_finite()) {
            Some(b)
        } else {
            None
        }
    }
}

/// Stationarity system for plain and isoperimetric problems. For the
/// constrained case the unknown vector is (x_free.., λ) and the equations
/// are the gradient of Ψ_F with F = L + λ M plus G(x) - K = 0.
struct StationaritySystem {
    objective: DiscretizedObjective,
    constraint: Option<(DiscretizedObjective, f64)>,
}

impl StationaritySystem {
    fn build(problem: &VariationalProblem, n: usize) -> Result<Self> {
        let objective = DiscretizedObjective::new(problem, n)?;
        let constraint = match problem.constraint() {
            Constraint::None => None,
            Constraint::Isoperimetric(c) => {
                let mut m_problem = problem.clone();
                // Same grid, boundary and order; only the integrand differs.
                m_problem = VariationalProblem::new(
                    m_problem.a(),
                    m_problem.b(),
                    m_problem.orders().to_vec(),
                    c.integrand.clone(),
                    m_problem.boundary().to_vec(),
                    Constraint::None,
                )?;
                Some((DiscretizedObjective::new(&m_problem, n)?, c.level))
            }
            Constraint::Holonomic(_) => {
                return Err(Error::InvalidProblem(
                    "the direct solver does not handle holonomic problems".into(),
                ));
            }
        };
        Ok(Self {
            objective,
            constraint,
        })
    }

    fn initial(&self, seed: Option<&Trajectory>) -> Result<Vec<f64>> {
        let mut u = match seed {
            Some(traj) => {
                if traj.grid() != self.objective.grid() {
                    return Err(Error::InvalidProblem(
                        "seed trajectory grid does not match the solve grid".into(),
                    ));
                }
                self.objective.unknowns_from(traj.component(0).values())
            }
            None => self.objective.initial_guess(),
        };
        if self.constraint.is_some() {
            u.push(0.0);
        }
        Ok(u)
    }

    /// Ψ at `u` for the unconstrained case, where the residual map is the
    /// gradient of Ψ and Ψ itself serves as the line-search merit. The
    /// bordered system is a saddle problem with no such merit.
    fn merit(&self, u: &[f64]) -> Result<Option<f64>> {
        match &self.constraint {
            None => Ok(Some(self.objective.objective(u)?)),
            Some(_) => Ok(None),
        }
    }

    fn residual(&self, u: &[f64]) -> Result<Vec<f64>> {
        match &self.constraint {
            None => self.objective.gradient(u),
            Some((m_obj, level)) => {
                let (xu, lambda) = u.split_at(u.len() - 1);
                let lambda = lambda[0];
                let mut r = self.objective.gradient(xu)?;
                let gm = m_obj.gradient(xu)?;
                for (ri, gi) in r.iter_mut().zip(&gm) {
                    *ri += lambda * gi;
                }
                r.push(m_obj.objective(xu)? - level);
                Ok(r)
            }
        }
    }

    /// Central-difference Jacobian of the residual map (row-major).
    fn jacobian(&self, u: &[f64]) -> Result<Vec<f64>> {
        let m = u.len();
        let mut jac = vec![0.0; m * m];
        let mut probe = u.to_vec();
        for col in 0..m {
            let s = f64::EPSILON.cbrt() * u[col].abs().max(1.0);
            probe[col] = u[col] + s;
            let hi = self.residual(&probe)?;
            probe[col] = u[col] - s;
            let lo = self.residual(&probe)?;
            probe[col] = u[col];
            for row in 0..m {
                jac[row * m + col] = (hi[row] - lo[row]) / (2.0 * s);
            }
        }
        Ok(jac)
    }

    fn report(&self, u: &[f64], iterations: usize, norm: f64, converged: bool) -> Result<SolveReport> {
        let (xu, lambda) = match &self.constraint {
            None => (u, None),
            Some(_) => {
                let (xu, l) = u.split_at(u.len() - 1);
                (xu, Some(l[0]))
            }
        };
        let trajectory = self.objective.trajectory(xu)?;
        let objective_value = self.objective.objective(xu)?;
        let (m_stationarity, abnormal_suspected) = match &self.constraint {
            Some((m_obj, _)) => {
                let gm = m_obj.gradient(xu)?;
                let stat = inf_norm(&gm) / self.objective.grid().h();
                (Some(stat), stat <= 1e-6)
            }
            None => (None, false),
        };
        Ok(SolveReport {
            trajectory,
            iterations,
            gradient_norm: norm,
            objective_value,
            multiplier: lambda,
            converged,
            m_stationarity,
            abnormal_suspected,
        })
    }
}

/// Solve the discretized stationarity system by damped Newton iteration
/// with a central-difference Jacobian of the analytic gradient.
///
/// Returns a report with `converged = false` when the iteration cap is
/// reached; a step that cannot reduce the residual even after exhausting
/// the damping and regularization budget is an error carrying the best
/// iterate found.
pub fn solve(problem: &VariationalProblem, n: usize, options: &SolverOptions) -> Result<SolveReport> {
    let system = StationaritySystem::build(problem, n)?;
    let mut u = system.initial(options.seed.as_ref())?;
    let mut r = system.residual(&u)?;
    let mut norm = inf_norm(&r);
    let mut merit = system.merit(&u)?;
    let mut iterations = 0;

    while norm > options.tol && iterations < options.max_iter {
        let jac = system.jacobian(&u)?;
        let m = u.len();
        let jac_scale = inf_norm(&jac).max(1.0);
        let mut mu = 0.0f64;
        let mut accepted = false;

        'regularize: for _ in 0..10 {
            let mut a = jac.clone();
            if mu > 0.0 {
                for i in 0..m {
                    a[i * m + i] += mu;
                }
            }
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let Some(step) = linalg::solve(a, rhs) else {
                mu = if mu == 0.0 { 1e-8 * jac_scale } else { mu * 100.0 };
                continue;
            };
            // Directional derivative of Ψ along the step; with enough
            // regularization the step turns into plain descent, so a
            // non-descent direction just escalates mu.
            let slope: f64 = step.iter().zip(&r).map(|(s, g)| s * g).sum();
            if merit.is_some() && slope >= 0.0 {
                mu = if mu == 0.0 { 1e-8 * jac_scale } else { mu * 100.0 };
                continue;
            }
            let mut damping = 1.0;
            for _ in 0..=options.damping_max {
                let trial: Vec<f64> = u
                    .iter()
                    .zip(&step)
                    .map(|(ui, si)| ui + damping * si)
                    .collect();
                if let Ok(r_trial) = system.residual(&trial) {
                    let norm_trial = inf_norm(&r_trial);
                    // A step counts if it reduces the residual norm, or
                    // (plain problems) makes Armijo progress on Ψ; the
                    // norm alone has non-root local minima where pure
                    // norm backtracking wedges.
                    let mut take = norm_trial < norm;
                    let mut merit_trial = None;
                    if !take {
                        if let Some(psi) = merit {
                            if let Ok(Some(psi_trial)) = system.merit(&trial) {
                                take = psi_trial <= psi + 1e-4 * damping * slope;
                                merit_trial = Some(psi_trial);
                            }
                        }
                    }
                    if take {
                        u = trial;
                        r = r_trial;
                        norm = norm_trial;
                        merit = match merit_trial {
                            Some(v) => Some(v),
                            None => system.merit(&u)?,
                        };
                        accepted = true;
                        break 'regularize;
                    }
                }
                damping *= 0.5;
            }
            mu = if mu == 0.0 { 1e-8 * jac_scale } else { mu * 100.0 };
        }

        if !accepted {
            let report = system.report(&u, iterations, norm, false)?;
            return Err(Error::SolverStalled {
                report: Box::new(report),
            });
        }
        iterations += 1;
    }

    system.report(&u, iterations, norm, norm <= options.tol)
}

/// Reference solution for a convergence study.
#[derive(Debug, Clone)]
pub enum Reference {
    /// Closed-form minimizer as an expression in t.
    Analytic(Expr),
    /// Compare against the solution on the finest grid in the list.
    Finest,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    /// Max absolute deviation from the reference over all nodes; None for
    /// the finest row under `Reference::Finest`.
    pub error: Option<f64>,
    /// Empirical order against the previous row.
    pub order: Option<f64>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub failure: Option<String>,
}

/// Solve on every grid in `n_list` and report deviations from the
/// reference together with empirical convergence orders.
pub fn convergence_study(
    problem: &VariationalProblem,
    n_list: &[usize],
    reference: &Reference,
    options: &SolverOptions,
) -> Result<Vec<ConvergenceRow>> {
    if n_list.is_empty() {
        return Err(Error::InvalidProblem("n list must not be empty".into()));
    }
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if matches!(reference, Reference::Finest) && ns.len() < 2 {
        return Err(Error::InvalidProblem(
            "finest-grid reference requires at least 2 grid sizes".into(),
        ));
    }
    if let Reference::Analytic(e) = reference {
        if e.x_slots() > 0 || e.d_slots() > 0 {
            return Err(Error::InvalidProblem(
                "analytic reference must be an expression in t only".into(),
            ));
        }
    }

    let mut solutions: Vec<(usize, Option<SolveReport>, Option<String>)> = Vec::new();
    for &n in &ns {
        match solve(problem, n, options) {
            Ok(report) => solutions.push((n, Some(report), None)),
            Err(Error::SolverStalled { report }) => {
                solutions.push((n, Some(*report), Some("solver stalled".into())));
            }
            Err(other) => return Err(other),
        }
    }

    let finest_values: Option<(Grid, Vec<f64>)> = match reference {
        Reference::Finest => {
            let (_, report, _) = solutions.last().expect("nonempty");
            report.as_ref().map(|r| {
                let sig = r.trajectory.component(0);
                (sig.grid(), sig.values().to_vec())
            })
        }
        Reference::Analytic(_) => None,
    };

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (idx, (n, report, failure)) in solutions.iter().enumerate() {
        let mut row = ConvergenceRow {
            n: *n,
            error: None,
            order: None,
            iterations: 0,
            gradient_norm: f64::NAN,
            converged: false,
            failure: failure.clone(),
        };
        if let Some(rep) = report {
            row.iterations = rep.iterations;
            row.gradient_norm = rep.gradient_norm;
            row.converged = rep.converged;
            let sig = rep.trajectory.component(0);
            let grid = sig.grid();
            row.error = match reference {
                Reference::Analytic(e) => {
                    let mut worst = 0.0f64;
                    for j in 0..=grid.n() {
                        let want = e.eval(&crate::problems::expr::Point {
                            t: grid.node(j),
                            x: &[],
                            d: &[],
                        })?;
                        worst = worst.max((sig.values()[j] - want).abs());
                    }
                    Some(worst)
                }
                Reference::Finest => {
                    if idx + 1 == solutions.len() {
                        None
                    } else {
                        finest_values.as_ref().map(|(ref_grid, ref_values)| {
                            let mut worst = 0.0f64;
                            for j in 0..=grid.n() {
                                let want = interp(ref_grid, ref_values, grid.node(j));
                                worst = worst.max((sig.values()[j] - want).abs());
                            }
                            worst
                        })
                    }
                }
            };
        }
        if let (Some(prev), Some(cur)) = (
            rows.last().and_then(|p: &ConvergenceRow| p.error),
            row.error,
        ) {
            let n_prev = rows.last().expect("prev row").n;
            if prev > 0.0 && cur > 0.0 {
                row.order = Some((prev / cur).ln() / (*n as f64 / n_prev as f64).ln());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

fn interp(grid: &Grid, values: &[f64], t: f64) -> f64 {
    let p = (t - grid.a()) / grid.h();
    let k = (p.floor() as isize).clamp(0, grid.n() as isize - 1) as usize;
    let frac = p - k as f64;
    values[k] * (1.0 - frac) + values[k + 1] * frac
}

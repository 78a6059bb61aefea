//! Indirect method: audit candidate trajectories against the fractional
//! Euler–Lagrange equation, transversality values, the Legendre condition,
//! sampled convexity, and the multiplier conditions of constrained and
//! higher-order problems.
//!
//! Residuals are reported over an interior band of nodes (by default the
//! middle 90%): the right-sided operators are boundary-degenerate at t = b
//! where the Grünwald–Letnikov tail runs out of terms, and the evaluation
//! at t = a sits on the singular correction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::direct::Trajectory;
use crate::fracops::{
    self, caputo_left, caputo_left_higher, rl_right_derivative, rl_right_integral, FracOrder,
    SampledSignal,
};
use crate::problems::{Constraint, Endpoint, Lagrangian, VariationalProblem};
use crate::{Error, Result};

/// Margin below which a sampled convexity check is considered violated.
const CONVEXITY_SLACK: f64 = 1e-9;

/// M-stationarity level below which a constrained extremal is flagged as
/// possibly abnormal.
const ABNORMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ResidualOptions {
    /// Fraction of nodes excluded at each end of the reporting band.
    pub band_fraction: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        Self { band_fraction: 0.05 }
    }
}

/// Multiplier attached to a constrained residual report.
#[derive(Debug, Clone)]
pub enum MultiplierProfile {
    Isoperimetric(f64),
    Holonomic(SampledSignal),
}

#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// Euler–Lagrange residual, one signal per component.
    pub residuals: Vec<SampledSignal>,
    /// Sup of |residual| over the interior band, across components.
    pub sup_norm_interior: f64,
    /// Inclusive node range the sup was taken over.
    pub band: (usize, usize),
    /// I^{1-α}(∂_3 L) at t = a, reported when x(a) is free.
    pub transversality_left: Option<f64>,
    /// I^{1-α}(∂_3 L) at t = b, reported when x(b) is free.
    pub transversality_right: Option<f64>,
    /// Min over nodes (and derivative slots) of the second difference of L
    /// in the derivative slot.
    pub legendre_min: f64,
    pub multiplier: Option<MultiplierProfile>,
    /// Max |g| along the trajectory for holonomic problems.
    pub constraint_violation: Option<f64>,
    /// Sup of the constraint integrand's own Euler–Lagrange residual over
    /// the band (isoperimetric problems).
    pub m_residual_sup: Option<f64>,
    /// Near-zero `m_residual_sup`: the multiplier rule degenerates.
    pub abnormal_suspected: bool,
}

fn interior_band(n: usize, fraction: f64) -> (usize, usize) {
    let skip = ((n as f64) * fraction).ceil() as usize;
    let lo = skip.min(n / 2);
    let hi = n - lo;
    (lo, hi)
}

fn sup_over_band(values: &[f64], band: (usize, usize)) -> f64 {
    values[band.0..=band.1]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Per-node variable rows for a trajectory and its derivative samples.
struct NodeRows {
    x: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

impl NodeRows {
    fn build(traj: &Trajectory, ds: &[SampledSignal]) -> Self {
        let n = traj.grid().n();
        let x = (0..=n)
            .map(|j| traj.components().iter().map(|c| c.values()[j]).collect())
            .collect();
        let d = (0..=n)
            .map(|j| ds.iter().map(|s| s.values()[j]).collect())
            .collect();
        Self { x, d }
    }
}

fn check_trajectory(problem: &VariationalProblem, traj: &Trajectory) -> Result<()> {
    let grid = traj.grid();
    if grid.a() != problem.a() || grid.b() != problem.b() {
        return Err(Error::InvalidProblem(format!(
            "trajectory grid [{}, {}] does not match the problem interval [{}, {}]",
            grid.a(),
            grid.b(),
            problem.a(),
            problem.b()
        )));
    }
    if traj.components().len() != problem.components() {
        return Err(Error::InvalidProblem(format!(
            "trajectory has {} components, problem has {}",
            traj.components().len(),
            problem.components()
        )));
    }
    Ok(())
}

/// Derivative samples for each slot of the problem; band-one slots use the
/// left Caputo approximation, higher bands the Taylor-subtraction form.
fn derivative_samples(
    problem: &VariationalProblem,
    traj: &Trajectory,
    initial_derivs: &[f64],
) -> Result<Vec<SampledSignal>> {
    let mut out = Vec::with_capacity(problem.orders().len());
    if problem.is_higher_order() {
        let x = traj.component(0);
        for order in problem.orders() {
            let d = if order.band() == 1 {
                caputo_left(x, *order)?
            } else {
                caputo_left_higher(x, *order, initial_derivs)?
            };
            out.push(d);
        }
    } else {
        for (comp, order) in traj.components().iter().zip(problem.orders()) {
            out.push(caputo_left(comp, *order)?);
        }
    }
    Ok(out)
}

/// -d/dt by central differences (one-sided at the ends); composing i-1 of
/// these with the fractional right derivative of the remaining order gives
/// D_{b-}^α for α in band i.
fn neg_central_derivative(signal: &SampledSignal) -> Result<SampledSignal> {
    let grid = signal.grid();
    let v = signal.values();
    let n = grid.n();
    let h = grid.h();
    let mut out = Vec::with_capacity(n + 1);
    out.push(-(v[1] - v[0]) / h);
    for j in 1..n {
        out.push(-(v[j + 1] - v[j - 1]) / (2.0 * h));
    }
    out.push(-(v[n] - v[n - 1]) / h);
    SampledSignal::new(grid, out)
}

/// Right Riemann–Liouville derivative of any supported order: band one is
/// the plain Grünwald–Letnikov form, higher bands split off integer
/// derivative passes.
fn right_derivative_any(signal: &SampledSignal, order: FracOrder) -> Result<SampledSignal> {
    if order.band() == 1 {
        rl_right_derivative(signal, order)
    } else {
        let beta = order.alpha() - (order.band() - 1) as f64;
        let mut cur = rl_right_derivative(signal, FracOrder::new(beta)?)?;
        for _ in 0..(order.band() - 1) {
            cur = neg_central_derivative(&cur)?;
        }
        Ok(cur)
    }
}

/// Right Caputo derivative from the right Riemann–Liouville one and the
/// boundary correction φ(b)/(Γ(1-α)(b-t)^α). Index n is a convention value
/// (the correction is singular there).
fn caputo_right(phi: &SampledSignal, order: FracOrder) -> Result<SampledSignal> {
    let rl = rl_right_derivative(phi, order)?;
    let grid = phi.grid();
    let n = grid.n();
    let alpha = order.alpha();
    let coef = phi.values()[n] * fracops::rgamma(1.0 - alpha);
    let mut out = rl.into_values();
    if coef != 0.0 {
        for (j, out_j) in out.iter_mut().enumerate().take(n) {
            *out_j -= coef * (grid.b() - grid.node(j)).powf(-alpha);
        }
    }
    out[n] = out[n - 1];
    SampledSignal::new(grid, out)
}

/// Per-node values, one inner vector per component or slot.
type NodeArrays = Vec<Vec<f64>>;

fn partial_arrays(
    problem: &VariationalProblem,
    traj: &Trajectory,
    rows: &NodeRows,
) -> Result<(NodeArrays, NodeArrays)> {
    let grid = traj.grid();
    let n = grid.n();
    let lag = problem.lagrangian();
    let components = problem.components();
    let slots = problem.orders().len();
    let mut p_x = vec![vec![0.0; n + 1]; components];
    let mut p_d = vec![vec![0.0; n + 1]; slots];
    for j in 0..=n {
        let t = grid.node(j);
        for (i, px) in p_x.iter_mut().enumerate() {
            px[j] = lag.partial_x(i, t, &rows.x[j], &rows.d[j])?;
        }
        for (s, pd) in p_d.iter_mut().enumerate() {
            pd[j] = lag.partial_d(s, t, &rows.x[j], &rows.d[j])?;
        }
    }
    Ok((p_x, p_d))
}

fn legendre_from_rows(
    lag: &Lagrangian,
    traj: &Trajectory,
    rows: &NodeRows,
    slots: usize,
) -> Result<f64> {
    let grid = traj.grid();
    let mut min = f64::INFINITY;
    for j in 0..=grid.n() {
        let t = grid.node(j);
        for s in 0..slots.max(1) {
            let v = lag.second_d(s, t, &rows.x[j], &rows.d[j])?;
            min = min.min(v);
        }
    }
    Ok(min)
}

fn residual_core(
    problem: &VariationalProblem,
    traj: &Trajectory,
    d_override: Option<&[SampledSignal]>,
    initial_derivs: &[f64],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    check_trajectory(problem, traj)?;
    let grid = traj.grid();
    let n = grid.n();
    let ds = match d_override {
        Some(ds) => {
            if ds.len() != problem.orders().len() {
                return Err(Error::InvalidProblem(format!(
                    "{} derivative signals supplied for {} slots",
                    ds.len(),
                    problem.orders().len()
                )));
            }
            ds.to_vec()
        }
        None => derivative_samples(problem, traj, initial_derivs)?,
    };
    let rows = NodeRows::build(traj, &ds);
    let (p_x, p_d) = partial_arrays(problem, traj, &rows)?;

    let mut residuals = Vec::with_capacity(problem.components());
    if problem.is_higher_order() {
        let mut acc = p_x[0].clone();
        for (s, order) in problem.orders().iter().enumerate() {
            let pd_signal = SampledSignal::new(grid, p_d[s].clone())?;
            let rd = right_derivative_any(&pd_signal, *order)?;
            for (a, r) in acc.iter_mut().zip(rd.values()) {
                *a += r;
            }
        }
        residuals.push(SampledSignal::new(grid, acc)?);
    } else {
        for i in 0..problem.components() {
            let pd_signal = SampledSignal::new(grid, p_d[i].clone())?;
            let rd = rl_right_derivative(&pd_signal, problem.orders()[i])?;
            let values: Vec<f64> = p_x[i]
                .iter()
                .zip(rd.values())
                .map(|(a, b)| a + b)
                .collect();
            residuals.push(SampledSignal::new(grid, values)?);
        }
    }

    let band = interior_band(n, opts.band_fraction);
    let sup = residuals
        .iter()
        .map(|r| sup_over_band(r.values(), band))
        .fold(0.0f64, f64::max);

    // Transversality values for a scalar problem with free endpoints.
    let (mut t_left, mut t_right) = (None, None);
    if problem.components() == 1 && !problem.is_higher_order() {
        let bc = problem.boundary()[0];
        let alpha = problem.order().alpha();
        if alpha < 1.0
            && (matches!(bc.left, Endpoint::Free) || matches!(bc.right, Endpoint::Free))
        {
            let p3 = SampledSignal::new(grid, p_d[0].clone())?;
            let integral = rl_right_integral(&p3, 1.0 - alpha)?;
            if matches!(bc.left, Endpoint::Free) {
                t_left = Some(integral.values()[0]);
            }
            if matches!(bc.right, Endpoint::Free) {
                t_right = Some(integral.values()[n]);
            }
        }
    }

    let legendre_min = legendre_from_rows(problem.lagrangian(), traj, &rows, p_d.len())?;

    Ok(ResidualReport {
        residuals,
        sup_norm_interior: sup,
        band,
        transversality_left: t_left,
        transversality_right: t_right,
        legendre_min,
        multiplier: None,
        constraint_violation: None,
        m_residual_sup: None,
        abnormal_suspected: false,
    })
}

/// Euler–Lagrange residual r_i(t_j) = ∂_{i+1}L + D_{b-}^{α_i}(∂_{i+1+m}L)
/// of a candidate trajectory, per component.
pub fn el_residual(problem: &VariationalProblem, traj: &Trajectory) -> Result<ResidualReport> {
    el_residual_with(problem, traj, &ResidualOptions::default())
}

pub fn el_residual_with(
    problem: &VariationalProblem,
    traj: &Trajectory,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    residual_core(problem, traj, None, &[], opts)
}

/// As [`el_residual`], with caller-supplied derivative samples in the
/// Lagrangian's derivative slots (e.g. analytic Caputo values).
pub fn el_residual_with_derivatives(
    problem: &VariationalProblem,
    traj: &Trajectory,
    derivatives: &[SampledSignal],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    residual_core(problem, traj, Some(derivatives), &[], opts)
}

/// Residual of the augmented integrand F = L + λM for an isoperimetric
/// problem, together with the M-only residual that flags the abnormal case.
pub fn isoperimetric_residual(
    problem: &VariationalProblem,
    traj: &Trajectory,
    lambda: f64,
) -> Result<ResidualReport> {
    isoperimetric_residual_with(problem, traj, lambda, &ResidualOptions::default())
}

pub fn isoperimetric_residual_with(
    problem: &VariationalProblem,
    traj: &Trajectory,
    lambda: f64,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let Constraint::Isoperimetric(c) = problem.constraint() else {
        return Err(Error::InvalidProblem(
            "isoperimetric_residual needs an isoperimetric constraint".into(),
        ));
    };
    if !lambda.is_finite() {
        return Err(Error::InvalidProblem("multiplier must be finite".into()));
    }
    let m_problem = VariationalProblem::new(
        problem.a(),
        problem.b(),
        problem.orders().to_vec(),
        c.integrand.clone(),
        problem.boundary().to_vec(),
        Constraint::None,
    )?;
    let l_report = residual_core(problem, traj, None, &[], opts)?;
    let m_report = residual_core(&m_problem, traj, None, &[], opts)?;

    // The Euler–Lagrange operator is linear in the integrand, so the
    // residual of F = L + λM is the matching combination of residuals.
    let grid = traj.grid();
    let mut residuals = Vec::with_capacity(l_report.residuals.len());
    for (lr, mr) in l_report.residuals.iter().zip(&m_report.residuals) {
        let values: Vec<f64> = lr
            .values()
            .iter()
            .zip(mr.values())
            .map(|(a, b)| a + lambda * b)
            .collect();
        residuals.push(SampledSignal::new(grid, values)?);
    }
    let band = l_report.band;
    let sup = residuals
        .iter()
        .map(|r| sup_over_band(r.values(), band))
        .fold(0.0f64, f64::max);
    let m_sup = m_report.sup_norm_interior;

    // Legendre of F node-wise; the minimum of the sum is not the sum of
    // the minima.
    let l_profile = legendre_profile(problem, traj)?;
    let m_profile = legendre_profile(&m_problem, traj)?;
    let legendre_min = l_profile
        .values()
        .iter()
        .zip(m_profile.values())
        .map(|(a, b)| a + lambda * b)
        .fold(f64::INFINITY, f64::min);

    Ok(ResidualReport {
        residuals,
        sup_norm_interior: sup,
        band,
        transversality_left: l_report.transversality_left,
        transversality_right: l_report.transversality_right,
        legendre_min,
        multiplier: Some(MultiplierProfile::Isoperimetric(lambda)),
        constraint_violation: None,
        m_residual_sup: Some(m_sup),
        abnormal_suspected: m_sup <= ABNORMALITY_TOL,
    })
}

/// Residual of a holonomically constrained two-component problem. The
/// multiplier λ(t) is eliminated from the second equation, whose hypothesis
/// guarantees ∂g/∂x2 != 0, and reported as a profile; the first equation's
/// residual and the pointwise constraint violation are the audit outputs.
pub fn holonomic_residual(
    problem: &VariationalProblem,
    traj: &Trajectory,
) -> Result<ResidualReport> {
    holonomic_residual_with(problem, traj, &ResidualOptions::default())
}

pub fn holonomic_residual_with(
    problem: &VariationalProblem,
    traj: &Trajectory,
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    let Constraint::Holonomic(constraint) = problem.constraint() else {
        return Err(Error::InvalidProblem(
            "holonomic_residual needs a holonomic constraint".into(),
        ));
    };
    check_trajectory(problem, traj)?;
    let grid = traj.grid();
    let n = grid.n();
    let ds = derivative_samples(problem, traj, &[])?;
    let rows = NodeRows::build(traj, &ds);
    let (p_x, p_d) = partial_arrays(problem, traj, &rows)?;

    // Right Caputo derivatives of the d-partials.
    let cd: Vec<SampledSignal> = (0..2)
        .map(|i| {
            let sig = SampledSignal::new(grid, p_d[i].clone())?;
            caputo_right(&sig, problem.orders()[i])
        })
        .collect::<Result<_>>()?;

    let mut g_values = vec![0.0; n + 1];
    let mut dg1 = vec![0.0; n + 1];
    let mut dg2 = vec![0.0; n + 1];
    for j in 0..=n {
        let t = grid.node(j);
        g_values[j] = constraint.eval(t, &rows.x[j])?;
        dg1[j] = constraint.partial_x(0, t, &rows.x[j])?;
        dg2[j] = constraint.partial_x(1, t, &rows.x[j])?;
        if dg2[j].abs() < 1e-10 {
            return Err(Error::HolonomicHypothesis {
                t,
                value: dg2[j].abs(),
            });
        }
    }

    let mut lambda = vec![0.0; n + 1];
    let mut r1 = vec![0.0; n + 1];
    let mut r2 = vec![0.0; n + 1];
    for j in 0..=n {
        lambda[j] = -(p_x[1][j] + cd[1].values()[j]) / dg2[j];
        r1[j] = p_x[0][j] + cd[0].values()[j] + lambda[j] * dg1[j];
        r2[j] = p_x[1][j] + cd[1].values()[j] + lambda[j] * dg2[j];
    }
    let violation = g_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let band = interior_band(n, opts.band_fraction);
    let residuals = vec![
        SampledSignal::new(grid, r1)?,
        SampledSignal::new(grid, r2)?,
    ];
    let sup = residuals
        .iter()
        .map(|r| sup_over_band(r.values(), band))
        .fold(0.0f64, f64::max);
    let legendre_min = legendre_from_rows(problem.lagrangian(), traj, &rows, 2)?;

    Ok(ResidualReport {
        residuals,
        sup_norm_interior: sup,
        band,
        transversality_left: None,
        transversality_right: None,
        legendre_min,
        multiplier: Some(MultiplierProfile::Holonomic(SampledSignal::new(
            grid, lambda,
        )?)),
        constraint_violation: Some(violation),
        m_residual_sup: None,
        abnormal_suspected: false,
    })
}

/// Residual ∂_2 L + Σ_i D_{b-}^{α_i}(∂_{i+2}L) of a higher-order problem.
/// `initial_derivs` supplies x(a), x'(a), ... up to the largest band.
pub fn higher_order_residual(
    problem: &VariationalProblem,
    traj: &Trajectory,
    initial_derivs: &[f64],
) -> Result<ResidualReport> {
    higher_order_residual_with(problem, traj, initial_derivs, &ResidualOptions::default())
}

pub fn higher_order_residual_with(
    problem: &VariationalProblem,
    traj: &Trajectory,
    initial_derivs: &[f64],
    opts: &ResidualOptions,
) -> Result<ResidualReport> {
    if problem.components() != 1 {
        return Err(Error::InvalidProblem(
            "higher-order residuals take a single-component problem".into(),
        ));
    }
    residual_core(problem, traj, None, initial_derivs, opts)
}

/// Minimum over nodes of the second difference of L in its derivative
/// slot; nonnegative (within slack) is consistent with a minimizer.
pub fn legendre_check(problem: &VariationalProblem, traj: &Trajectory) -> Result<f64> {
    let profile = legendre_profile(problem, traj)?;
    Ok(profile
        .values()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v)))
}

/// Per-node second difference of L in the first derivative slot.
pub fn legendre_profile(problem: &VariationalProblem, traj: &Trajectory) -> Result<SampledSignal> {
    check_trajectory(problem, traj)?;
    let ds = derivative_samples(problem, traj, &[])?;
    let rows = NodeRows::build(traj, &ds);
    let grid = traj.grid();
    let lag = problem.lagrangian();
    let mut out = Vec::with_capacity(grid.n() + 1);
    for j in 0..=grid.n() {
        out.push(lag.second_d(0, grid.node(j), &rows.x[j], &rows.d[j])?);
    }
    SampledSignal::new(grid, out)
}

#[derive(Debug, Clone)]
pub struct ConvexityOptions {
    pub seed: u64,
    /// Box for the sampled x and d base points.
    pub x_range: (f64, f64),
    pub d_range: (f64, f64),
    /// Box for the sampled displacements v, w.
    pub step_range: (f64, f64),
}

impl Default for ConvexityOptions {
    fn default() -> Self {
        Self {
            seed: 0x5eed_f00d,
            x_range: (-5.0, 5.0),
            d_range: (-5.0, 5.0),
            step_range: (-2.0, 2.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvexityReport {
    pub convex: bool,
    /// Most negative observed margin of the gradient inequality.
    pub worst_margin: f64,
    /// Sample point (t, x, d, v, w) attaining the worst margin.
    pub worst_point: (f64, f64, f64, f64, f64),
    pub samples: usize,
}

/// Randomized check of L(t, x+v, d+w) - L(t, x, d) >= ∂_2L v + ∂_3L w over
/// a sampled box, with a fixed seed for reproducibility. Evidence, not a
/// proof: a pass reports sampled-convexity evidence only.
pub fn convexity_check(problem: &VariationalProblem, samples: usize) -> Result<ConvexityReport> {
    convexity_check_with(problem, samples, &ConvexityOptions::default())
}

pub fn convexity_check_with(
    problem: &VariationalProblem,
    samples: usize,
    opts: &ConvexityOptions,
) -> Result<ConvexityReport> {
    if samples == 0 {
        return Err(Error::InvalidProblem("need at least one sample".into()));
    }
    if problem.components() != 1 || problem.is_higher_order() {
        return Err(Error::InvalidProblem(
            "convexity_check takes a scalar problem".into(),
        ));
    }
    let lag = problem.lagrangian();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = f64::INFINITY;
    let mut worst_point = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut used = 0;
    for _ in 0..samples {
        let t = rng.random_range(problem.a()..=problem.b());
        let x = rng.random_range(opts.x_range.0..=opts.x_range.1);
        let d = rng.random_range(opts.d_range.0..=opts.d_range.1);
        let v = rng.random_range(opts.step_range.0..=opts.step_range.1);
        let w = rng.random_range(opts.step_range.0..=opts.step_range.1);
        let margin = (|| -> Result<f64> {
            let base = lag.eval(t, &[x], &[d])?;
            let moved = lag.eval(t, &[x + v], &[d + w])?;
            let p2 = lag.partial_x(0, t, &[x], &[d])?;
            let p3 = lag.partial_d(0, t, &[x], &[d])?;
            Ok(moved - base - p2 * v - p3 * w)
        })();
        // Points outside the integrand's domain don't witness either way.
        let Ok(margin) = margin else { continue };
        used += 1;
        if margin < worst {
            worst = margin;
            worst_point = (t, x, d, v, w);
        }
    }
    if used == 0 {
        return Err(Error::InvalidProblem(
            "no convexity sample fell inside the integrand's domain".into(),
        ));
    }
    Ok(ConvexityReport {
        convex: worst >= -CONVEXITY_SLACK,
        worst_margin: worst,
        worst_point,
        samples: used,
    })
}

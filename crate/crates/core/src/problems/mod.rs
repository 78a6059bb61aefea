//! Problem model: Lagrangians with numerically obtained partial
//! derivatives, boundary conditions, constraints, and the builtin example
//! library.

pub mod expr;

use std::fmt;
use std::sync::Arc;

use crate::fracops::FracOrder;
use crate::{Error, Result};

use expr::{Expr, Point};

type NativeFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum LagrangianKind {
    Expr(Expr),
    Native { label: String, f: NativeFn },
}

/// An evaluable integrand L(t, x, d). Partial derivatives are obtained by
/// central finite differences, never symbolically.
#[derive(Clone)]
pub struct Lagrangian {
    kind: LagrangianKind,
    x_slots: usize,
    d_slots: usize,
}

impl fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LagrangianKind::Expr(e) => write!(f, "Lagrangian({e})"),
            LagrangianKind::Native { label, .. } => write!(f, "Lagrangian(<{label}>)"),
        }
    }
}

impl fmt::Display for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LagrangianKind::Expr(e) => write!(f, "{e}"),
            LagrangianKind::Native { label, .. } => write!(f, "<{label}>"),
        }
    }
}

fn fd_step(coord: f64) -> f64 {
    // s = cbrt(machine epsilon) * max(1, |coordinate|); O(s^2) truncation
    // for the central quotient.
    f64::EPSILON.cbrt() * coord.abs().max(1.0)
}

fn fd_step_second(coord: f64) -> f64 {
    f64::EPSILON.powf(0.25) * coord.abs().max(1.0)
}

impl Lagrangian {
    pub fn from_expr(e: Expr) -> Self {
        let x_slots = e.x_slots();
        let d_slots = e.d_slots();
        Self {
            kind: LagrangianKind::Expr(e),
            x_slots,
            d_slots,
        }
    }

    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self::from_expr(expr::parse(source)?))
    }

    /// Register a built-in evaluator. `x_slots`/`d_slots` declare how many
    /// trajectory components and derivative slots the closure reads.
    pub fn from_fn(
        label: impl Into<String>,
        x_slots: usize,
        d_slots: usize,
        f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: LagrangianKind::Native {
                label: label.into(),
                f: Arc::new(f),
            },
            x_slots,
            d_slots,
        }
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.kind {
            LagrangianKind::Expr(e) => Some(e),
            LagrangianKind::Native { .. } => None,
        }
    }

    /// Trajectory components the integrand reads.
    pub fn x_slots(&self) -> usize {
        self.x_slots
    }

    /// Derivative slots the integrand reads.
    pub fn d_slots(&self) -> usize {
        self.d_slots
    }

    pub fn eval(&self, t: f64, x: &[f64], d: &[f64]) -> Result<f64> {
        let v = match &self.kind {
            LagrangianKind::Expr(e) => e.eval(&Point { t, x, d })?,
            LagrangianKind::Native { f, .. } => f(t, x, d),
        };
        if !v.is_finite() {
            return Err(Error::Eval(expr::EvalError::NonFinite("lagrangian")));
        }
        Ok(v)
    }

    /// Central-difference partial with respect to x_i.
    pub fn partial_x(&self, i: usize, t: f64, x: &[f64], d: &[f64]) -> Result<f64> {
        let s = fd_step(x[i]);
        let mut probe = x.to_vec();
        probe[i] = x[i] + s;
        let hi = self.eval(t, &probe, d)?;
        probe[i] = x[i] - s;
        let lo = self.eval(t, &probe, d)?;
        Ok((hi - lo) / (2.0 * s))
    }

    /// Central-difference partial with respect to d_i.
    pub fn partial_d(&self, i: usize, t: f64, x: &[f64], d: &[f64]) -> Result<f64> {
        let s = fd_step(d[i]);
        let mut probe = d.to_vec();
        probe[i] = d[i] + s;
        let hi = self.eval(t, x, &probe)?;
        probe[i] = d[i] - s;
        let lo = self.eval(t, x, &probe)?;
        Ok((hi - lo) / (2.0 * s))
    }

    /// Second central difference in d_i, used by the Legendre condition.
    pub fn second_d(&self, i: usize, t: f64, x: &[f64], d: &[f64]) -> Result<f64> {
        let s = fd_step_second(d[i]);
        let mid = self.eval(t, x, d)?;
        let mut probe = d.to_vec();
        probe[i] = d[i] + s;
        let hi = self.eval(t, x, &probe)?;
        probe[i] = d[i] - s;
        let lo = self.eval(t, x, &probe)?;
        Ok((hi - 2.0 * mid + lo) / (s * s))
    }
}

/// Partial derivative of a scalar Lagrangian by positional slot: the
/// arguments are (t, x, d), so slot 2 is x and slot 3 is d.
pub fn partial(l: &Lagrangian, which: u8, point: (f64, f64, f64)) -> Result<f64> {
    let (t, x, d) = point;
    match which {
        2 => l.partial_x(0, t, &[x], &[d]),
        3 => l.partial_d(0, t, &[x], &[d]),
        other => Err(Error::InvalidProblem(format!(
            "partial slot must be 2 or 3, got {other}"
        ))),
    }
}

/// One end of a boundary condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Endpoint {
    Fixed(f64),
    Free,
}

impl Endpoint {
    pub fn fixed_value(&self) -> Option<f64> {
        match self {
            Endpoint::Fixed(v) => Some(*v),
            Endpoint::Free => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub left: Endpoint,
    pub right: Endpoint,
}

impl BoundaryCondition {
    pub fn new(left: Endpoint, right: Endpoint) -> Result<Self> {
        for end in [left, right] {
            if let Endpoint::Fixed(v) = end {
                if !v.is_finite() {
                    return Err(Error::InvalidProblem(format!(
                        "fixed boundary value must be finite, got {v}"
                    )));
                }
            }
        }
        Ok(Self { left, right })
    }

    pub fn fixed(x_a: f64, x_b: f64) -> Result<Self> {
        Self::new(Endpoint::Fixed(x_a), Endpoint::Fixed(x_b))
    }
}

/// Integral equality constraint G(x) = ∫ M(t, x, d) dt = K.
#[derive(Debug, Clone)]
pub struct IsoperimetricConstraint {
    pub integrand: Lagrangian,
    pub level: f64,
}

/// Pointwise algebraic constraint g(t, x1, x2) = 0 on a two-component
/// trajectory. The auditing hypothesis requires dg/dx2 != 0 along the
/// trajectory.
#[derive(Debug, Clone)]
pub struct HolonomicConstraint {
    g: Lagrangian,
}

impl HolonomicConstraint {
    pub fn new(g: Expr) -> Result<Self> {
        if g.d_slots() > 0 {
            return Err(Error::InvalidProblem(
                "holonomic constraint may only depend on t, x1, x2".into(),
            ));
        }
        Ok(Self {
            g: Lagrangian::from_expr(g),
        })
    }

    pub fn parse(source: &str) -> Result<Self> {
        Self::new(expr::parse(source)?)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.g.eval(t, x, &[])
    }

    /// dg/dx_i by central differences.
    pub fn partial_x(&self, i: usize, t: f64, x: &[f64]) -> Result<f64> {
        self.g.partial_x(i, t, x, &[])
    }

    pub fn expr(&self) -> Option<&Expr> {
        self.g.expr()
    }
}

#[derive(Debug, Clone)]
pub enum Constraint {
    None,
    Isoperimetric(IsoperimetricConstraint),
    Holonomic(HolonomicConstraint),
}

impl Constraint {
    pub fn is_none(&self) -> bool {
        matches!(self, Constraint::None)
    }
}

/// A variational problem: minimize ∫_a^b L(t, x, D^α x) dt subject to
/// boundary conditions and an optional constraint.
///
/// Three shapes are supported, distinguished by the order list:
/// one component with one order in (0, 1]; m components with one order each
/// (the vector case, used with holonomic constraints); and one component
/// with orders α_i ∈ (i-1, i] feeding separate derivative slots (the
/// higher-order case, residual evaluation only).
#[derive(Debug, Clone)]
pub struct VariationalProblem {
    a: f64,
    b: f64,
    orders: Vec<FracOrder>,
    lagrangian: Lagrangian,
    boundary: Vec<BoundaryCondition>,
    constraint: Constraint,
}

impl VariationalProblem {
    pub fn new(
        a: f64,
        b: f64,
        orders: Vec<FracOrder>,
        lagrangian: Lagrangian,
        boundary: Vec<BoundaryCondition>,
        constraint: Constraint,
    ) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidProblem(format!(
                "interval must satisfy a < b, got [{a}, {b}]"
            )));
        }
        if boundary.is_empty() || orders.is_empty() {
            return Err(Error::InvalidProblem(
                "need at least one component and one order".into(),
            ));
        }
        let components = boundary.len();
        if orders.len() == components {
            if let Some(bad) = orders.iter().find(|o| o.band() != 1) {
                return Err(Error::InvalidProblem(format!(
                    "per-component orders must lie in (0, 1], got {}",
                    bad.alpha()
                )));
            }
        } else if components == 1 {
            // Higher-order shape: band i for the i-th derivative slot.
            if orders.len() > 3 {
                return Err(Error::InvalidProblem(
                    "at most 3 derivative orders are supported".into(),
                ));
            }
            for (i, o) in orders.iter().enumerate() {
                if o.band() != i + 1 {
                    return Err(Error::InvalidProblem(format!(
                        "derivative order {} of slot {} must lie in ({}, {}]",
                        o.alpha(),
                        i + 1,
                        i,
                        i + 1
                    )));
                }
            }
        } else {
            return Err(Error::InvalidProblem(format!(
                "{} orders do not match {} components",
                orders.len(),
                components
            )));
        }
        if lagrangian.x_slots() > components {
            return Err(Error::InvalidProblem(format!(
                "lagrangian reads {} components, problem has {}",
                lagrangian.x_slots(),
                components
            )));
        }
        if lagrangian.d_slots() > orders.len() {
            return Err(Error::InvalidProblem(format!(
                "lagrangian reads {} derivative slots, problem has {}",
                lagrangian.d_slots(),
                orders.len()
            )));
        }
        match &constraint {
            Constraint::Isoperimetric(c) => {
                if components != 1 || orders.len() != 1 {
                    return Err(Error::InvalidProblem(
                        "isoperimetric constraints require a scalar problem".into(),
                    ));
                }
                if !c.level.is_finite() {
                    return Err(Error::InvalidProblem("constraint level must be finite".into()));
                }
            }
            Constraint::Holonomic(_) => {
                if components != 2 {
                    return Err(Error::InvalidProblem(
                        "holonomic constraints require two components".into(),
                    ));
                }
            }
            Constraint::None => {}
        }
        Ok(Self {
            a,
            b,
            orders,
            lagrangian,
            boundary,
            constraint,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn orders(&self) -> &[FracOrder] {
        &self.orders
    }

    /// Order of the single component; panics on vector problems.
    pub fn order(&self) -> FracOrder {
        assert_eq!(self.orders.len(), 1, "scalar order on a multi-order problem");
        self.orders[0]
    }

    pub fn lagrangian(&self) -> &Lagrangian {
        &self.lagrangian
    }

    pub fn boundary(&self) -> &[BoundaryCondition] {
        &self.boundary
    }

    pub fn constraint(&self) -> &Constraint {
        &self.constraint
    }

    pub fn components(&self) -> usize {
        self.boundary.len()
    }

    pub fn is_higher_order(&self) -> bool {
        self.orders.len() > self.components()
    }

    pub fn grid(&self, n: usize) -> Result<crate::fracops::Grid> {
        crate::fracops::Grid::new(self.a, self.b, n)
    }
}

/// The builtin example problems.
///
/// `example1`: ∫_0^10 (D^{0.5}x - (2/Γ(2.5)) t^{1.5})^2 dt with x(0) = 0,
/// x(10) = 100; the subtracted term is exactly D^{0.5} of t^2, so the
/// integrand vanishes along x(t) = t^2 and that curve is the minimizer.
///
/// `example2`: ∫_0^1 (x (D^{0.5}x)^2 - sin x)^2 dt with x(0) = 0, x(1) = 1;
/// no closed-form minimizer is known.
pub fn builtin(name: &str) -> Result<VariationalProblem> {
    match name {
        "example1" => VariationalProblem::new(
            0.0,
            10.0,
            vec![FracOrder::new(0.5)?],
            Lagrangian::parse("(d - 2/gammafn(2.5)*t^1.5)^2")?,
            vec![BoundaryCondition::fixed(0.0, 100.0)?],
            Constraint::None,
        ),
        "example2" => VariationalProblem::new(
            0.0,
            1.0,
            vec![FracOrder::new(0.5)?],
            Lagrangian::parse("(x*d^2 - sin(x))^2")?,
            vec![BoundaryCondition::fixed(0.0, 1.0)?],
            Constraint::None,
        ),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_at_stationary_point_is_zero() {
        let l = Lagrangian::parse("(d - 3.25)^2").unwrap();
        let v = partial(&l, 3, (0.0, 0.0, 3.25)).unwrap();
        assert!(v.abs() < 1e-8, "got {v}");
    }

    #[test]
    fn partials_match_hand_differentiation() {
        // L = x d^2: dL/dx = d^2 = 9, dL/dd = 2 x d = 30 at (x, d) = (5, 3).
        let l = Lagrangian::parse("x*d^2").unwrap();
        let px = partial(&l, 2, (0.0, 5.0, 3.0)).unwrap();
        let pd = partial(&l, 3, (0.0, 5.0, 3.0)).unwrap();
        assert!((px - 9.0).abs() / 9.0 < 1e-7, "px = {px}");
        assert!((pd - 30.0).abs() / 30.0 < 1e-7, "pd = {pd}");
    }

    #[test]
    fn partials_match_analytic_cubic() {
        // L = 2 t x^3 - x d^2 + d^3.
        let l = Lagrangian::parse("2*t*x^3 - x*d^2 + d^3").unwrap();
        for &(t, x, d) in &[(0.5, 1.2, -0.7), (2.0, -0.3, 1.9), (1.0, 4.0, 2.5)] {
            let px = partial(&l, 2, (t, x, d)).unwrap();
            let pd = partial(&l, 3, (t, x, d)).unwrap();
            let px_true = 6.0 * t * x * x - d * d;
            let pd_true = -2.0 * x * d + 3.0 * d * d;
            assert!((px - px_true).abs() <= 1e-7 * px_true.abs().max(1.0));
            assert!((pd - pd_true).abs() <= 1e-7 * pd_true.abs().max(1.0));
        }
    }

    #[test]
    fn second_difference_of_quadratic() {
        let l = Lagrangian::parse("(d - 1)^2 + x").unwrap();
        let v = l.second_d(0, 0.0, &[2.0], &[5.0]).unwrap();
        assert!((v - 2.0).abs() < 1e-6, "got {v}");
    }

    #[test]
    fn builtins() {
        let p1 = builtin("example1").unwrap();
        assert_eq!(p1.a(), 0.0);
        assert_eq!(p1.b(), 10.0);
        assert_eq!(p1.order().alpha(), 0.5);
        assert_eq!(
            p1.boundary()[0],
            BoundaryCondition::fixed(0.0, 100.0).unwrap()
        );
        let p2 = builtin("example2").unwrap();
        assert_eq!(p2.a(), 0.0);
        assert_eq!(p2.b(), 1.0);
        assert_eq!(p2.order().alpha(), 0.5);
        assert!(matches!(builtin("nope"), Err(Error::UnknownBuiltin(_))));
    }

    #[test]
    fn example1_integrand_is_nonnegative() {
        let p = builtin("example1").unwrap();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            // xorshift; cheap deterministic probe points.
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let t = 10.0 * next();
            let x = 200.0 * next() - 100.0;
            let d = 200.0 * next() - 100.0;
            let v = p.lagrangian().eval(t, &[x], &[d]).unwrap();
            assert!(v >= 0.0, "integrand negative at ({t}, {x}, {d}): {v}");
        }
    }

    #[test]
    fn problem_validation() {
        let order = FracOrder::new(0.5).unwrap();
        let l = Lagrangian::parse("d^2").unwrap();
        let bc = BoundaryCondition::fixed(0.0, 1.0).unwrap();
        assert!(VariationalProblem::new(
            1.0,
            0.0,
            vec![order],
            l.clone(),
            vec![bc],
            Constraint::None
        )
        .is_err());
        // Two-component lagrangian on a scalar problem.
        let l2 = Lagrangian::parse("x2*d1").unwrap();
        assert!(VariationalProblem::new(
            0.0,
            1.0,
            vec![order],
            l2,
            vec![bc],
            Constraint::None
        )
        .is_err());
        // Higher-order bands must step through (i-1, i].
        let bad = vec![FracOrder::new(0.5).unwrap(), FracOrder::new(2.5).unwrap()];
        assert!(VariationalProblem::new(
            0.0,
            1.0,
            bad,
            l.clone(),
            vec![bc],
            Constraint::None
        )
        .is_err());
        let good = vec![FracOrder::new(0.5).unwrap(), FracOrder::new(1.5).unwrap()];
        let p = VariationalProblem::new(0.0, 1.0, good, l, vec![bc], Constraint::None).unwrap();
        assert!(p.is_higher_order());
    }

    #[test]
    fn native_lagrangian_round_trip() {
        let l = Lagrangian::from_fn("unit", 0, 0, |_, _, _| 1.0);
        assert_eq!(l.eval(0.3, &[1.0], &[2.0]).unwrap(), 1.0);
        assert_eq!(partial(&l, 2, (0.0, 0.0, 0.0)).unwrap(), 0.0);
    }
}

//! Surrogate losses `l(u)` of the angle margin `u = <W_a, f(x)>`.
//!
//! All losses are convex and increasing (smaller outcomes are better, so
//! the usual large-margin losses are mirrored). Each loss also exposes its
//! decomposition into [`Piece`]s, the convex building blocks whose
//! conjugates drive the dual solvers.

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Floor applied to derivatives before they are used as ratio
/// denominators in the two-step rule.
pub const DERIVATIVE_FLOOR: f64 = 1e-10;

/// Value and one-sided derivatives of a loss at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEvaluation {
    pub value: f64,
    pub left_derivative: f64,
    pub right_derivative: f64,
}

pub trait SurrogateLoss: Send + Sync + fmt::Debug {
    /// Registry token (`"squared"`, `"exp"`, `"hinge"`, `"bent-hinge"`).
    fn token(&self) -> &'static str;

    /// Near-optimal parameter; 1 for every non-bent family.
    fn c(&self) -> f64 {
        1.0
    }

    fn value(&self, u: f64) -> f64;

    fn evaluate(&self, u: f64) -> LossEvaluation;

    /// True when the loss has a derivative everywhere, which the two-step
    /// ratio rule requires.
    fn is_differentiable(&self) -> bool;

    /// The `l_1` part: everything except the bent term.
    fn base_piece(&self) -> Piece;

    /// The bent term `(c - 1) u_+`, if any.
    fn bent_piece(&self) -> Option<Piece> {
        None
    }

    /// All pieces whose sum is the loss.
    fn pieces(&self) -> Vec<Piece> {
        let mut out = vec![self.base_piece()];
        out.extend(self.bent_piece());
        out
    }

    fn spec(&self) -> LossSpec {
        LossSpec {
            family: self.token().to_string(),
            c: self.c(),
        }
    }
}

/// Convex pieces with closed-form (or 1-D Newton) conjugate steps.
///
/// Each piece is written as `phi(u) = max_a [scale * a * u - phi*(a)]`
/// over its dual domain; `scale` is 1 except for the bent term, whose dual
/// variable is normalised to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    /// `(1 + u)_+`, dual domain `[0, 1]`.
    Hinge,
    /// `slope * u_+`, dual domain `[0, 1]` with scale `slope`.
    PositivePart { slope: f64 },
    /// `(1 + u)_+^2`, dual domain `[0, inf)`.
    SquaredHinge,
    /// `exp(u)`, dual domain `[0, inf)`.
    Exponential,
}

impl Piece {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            Piece::Hinge => (1.0 + u).max(0.0),
            Piece::PositivePart { slope } => slope * u.max(0.0),
            Piece::SquaredHinge => {
                let h = (1.0 + u).max(0.0);
                h * h
            }
            Piece::Exponential => u.exp(),
        }
    }

    /// Convex conjugate on its domain.
    pub fn conjugate(&self, a: f64) -> f64 {
        match *self {
            Piece::Hinge => -a,
            Piece::PositivePart { .. } => 0.0,
            Piece::SquaredHinge => a * a / 4.0 - a,
            Piece::Exponential => {
                if a > 0.0 {
                    a * a.ln() - a
                } else {
                    0.0
                }
            }
        }
    }

    /// Upper end of the dual domain.
    pub fn upper(&self) -> f64 {
        match *self {
            Piece::Hinge | Piece::PositivePart { .. } => 1.0,
            Piece::SquaredHinge | Piece::Exponential => f64::INFINITY,
        }
    }

    /// Multiplier linking the dual variable to the loss slope.
    pub fn scale(&self) -> f64 {
        match *self {
            Piece::PositivePart { slope } => slope,
            _ => 1.0,
        }
    }

    /// Gradient of `-phi*(a) + scale * a * u` with respect to `a`.
    pub fn dual_gradient(&self, a: f64, u: f64) -> f64 {
        match *self {
            Piece::Hinge => 1.0 + u,
            Piece::PositivePart { slope } => slope * u,
            Piece::SquaredHinge => 1.0 + u - a / 2.0,
            Piece::Exponential => {
                if a > 0.0 {
                    u - a.ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Dual gradient projected onto the feasible directions at `a`.
    pub fn projected_gradient(&self, a: f64, u: f64) -> f64 {
        let g = self.dual_gradient(a, u);
        if a <= 0.0 {
            g.max(0.0)
        } else if a >= self.upper() {
            g.min(0.0)
        } else {
            g
        }
    }

    /// Fenchel-Young gap `phi(u) + phi*(a) - scale * a * u >= 0`.
    pub fn gap(&self, a: f64, u: f64) -> f64 {
        (self.value(u) + self.conjugate(a) - self.scale() * a * u).max(0.0)
    }

    /// Maximises `-phi*(a + d) + scale * d * u - scale^2 * h * d^2 / 2`
    /// over `d`, keeping `a + d` in the domain, and returns `a + d`. `u` is
    /// the margin at the current `a`; `h > 0` is the curvature that the
    /// quadratic coupling contributes per unit of slope.
    pub fn coordinate_step(&self, a: f64, u: f64, h: f64) -> f64 {
        match *self {
            Piece::Hinge => (a + (1.0 + u) / h).clamp(0.0, 1.0),
            Piece::PositivePart { slope } => (a + u / (h * slope)).clamp(0.0, 1.0),
            Piece::SquaredHinge => (a + (1.0 + u - a / 2.0) / (h + 0.5)).max(0.0),
            Piece::Exponential => exp_conjugate_step(a, u, h),
        }
    }
}

/// Solves `ln b + h b = u + h a` for `b > 0` by Newton's method in
/// `t = ln b`. The map `t -> t + h e^t` is convex and increasing, so
/// iterates started right of the root decrease monotonically onto it.
fn exp_conjugate_step(a: f64, u: f64, h: f64) -> f64 {
    let r = u + h * a;
    // both candidates have g(t) = t + h e^t - r > 0
    let mut t = if r > h { r.min((r / h).ln()) } else { r };
    for _ in 0..200 {
        let et = t.exp();
        let step = (t + h * et - r) / (1.0 + h * et);
        t -= step;
        if step.abs() <= 1e-15 * t.abs().max(1.0) {
            break;
        }
    }
    t.exp()
}

fn hinge_derivs(u: f64) -> (f64, f64) {
    if u < -1.0 {
        (0.0, 0.0)
    } else if u > -1.0 {
        (1.0, 1.0)
    } else {
        (0.0, 1.0)
    }
}

/// `(1 + u)_+^2`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredLoss;

impl SurrogateLoss for SquaredLoss {
    fn token(&self) -> &'static str {
        "squared"
    }

    fn value(&self, u: f64) -> f64 {
        Piece::SquaredHinge.value(u)
    }

    fn evaluate(&self, u: f64) -> LossEvaluation {
        let d = 2.0 * (1.0 + u).max(0.0);
        LossEvaluation {
            value: self.value(u),
            left_derivative: d,
            right_derivative: d,
        }
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn base_piece(&self) -> Piece {
        Piece::SquaredHinge
    }
}

/// `exp(u)`; the only shipped loss with a strictly positive derivative.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialLoss;

impl SurrogateLoss for ExponentialLoss {
    fn token(&self) -> &'static str {
        "exp"
    }

    fn value(&self, u: f64) -> f64 {
        u.exp()
    }

    fn evaluate(&self, u: f64) -> LossEvaluation {
        let e = u.exp();
        LossEvaluation {
            value: e,
            left_derivative: e,
            right_derivative: e,
        }
    }

    fn is_differentiable(&self) -> bool {
        true
    }

    fn base_piece(&self) -> Piece {
        Piece::Exponential
    }
}

/// `(1 + u)_+`.
#[derive(Debug, Clone, Copy)]
pub struct HingeLoss;

impl SurrogateLoss for HingeLoss {
    fn token(&self) -> &'static str {
        "hinge"
    }

    fn value(&self, u: f64) -> f64 {
        (1.0 + u).max(0.0)
    }

    fn evaluate(&self, u: f64) -> LossEvaluation {
        let (l, r) = hinge_derivs(u);
        LossEvaluation {
            value: self.value(u),
            left_derivative: l,
            right_derivative: r,
        }
    }

    fn is_differentiable(&self) -> bool {
        false
    }

    fn base_piece(&self) -> Piece {
        Piece::Hinge
    }
}

/// Bent hinge `(1 + u)_+ + (c - 1) u_+`: slope 1 just left of zero and
/// slope `c` right of it.
#[derive(Debug, Clone, Copy)]
pub struct BentHingeLoss {
    c: f64,
}

impl BentHingeLoss {
    pub fn new(c: f64) -> Result<Self> {
        if !(c.is_finite() && c >= 1.0) {
            return Err(Error::invalid_argument(format!(
                "near-optimal parameter c must be >= 1, got {c}"
            )));
        }
        Ok(Self { c })
    }
}

impl SurrogateLoss for BentHingeLoss {
    fn token(&self) -> &'static str {
        "bent-hinge"
    }

    fn c(&self) -> f64 {
        self.c
    }

    fn value(&self, u: f64) -> f64 {
        (1.0 + u).max(0.0) + (self.c - 1.0) * u.max(0.0)
    }

    fn evaluate(&self, u: f64) -> LossEvaluation {
        let (hl, hr) = hinge_derivs(u);
        let (pl, pr) = if u < 0.0 {
            (0.0, 0.0)
        } else if u > 0.0 {
            (1.0, 1.0)
        } else {
            (0.0, 1.0)
        };
        let extra = self.c - 1.0;
        LossEvaluation {
            value: self.value(u),
            left_derivative: hl + extra * pl,
            right_derivative: hr + extra * pr,
        }
    }

    fn is_differentiable(&self) -> bool {
        false
    }

    fn base_piece(&self) -> Piece {
        Piece::Hinge
    }

    fn bent_piece(&self) -> Option<Piece> {
        (self.c > 1.0).then_some(Piece::PositivePart {
            slope: self.c - 1.0,
        })
    }
}

/// Serializable description of a loss: family token and `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: String,
    pub c: f64,
}

impl LossSpec {
    /// Validates the token against the registry. For families without a
    /// bend `c` is forced to 1.
    pub fn new(family: &str, c: f64) -> Result<Self> {
        let loss = build_loss(family, c)?;
        Ok(loss.spec())
    }

    pub fn build(&self) -> Result<Box<dyn SurrogateLoss>> {
        build_loss(&self.family, self.c)
    }
}

fn parse_c(arg: Option<&str>) -> Result<f64> {
    match arg {
        None => Ok(1.0),
        Some(s) => s
            .parse::<f64>()
            .map_err(|_| Error::invalid_argument(format!("bad near-optimal parameter '{s}'"))),
    }
}

/// Registry of loss families keyed by CLI token. The optional token
/// argument is the near-optimal parameter (`bent-hinge:1.2`).
pub fn loss_registry() -> &'static Registry<dyn SurrogateLoss> {
    static REG: OnceLock<Registry<dyn SurrogateLoss>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut reg: Registry<dyn SurrogateLoss> = Registry::new("loss");
        reg.register("squared", |_| Ok(Box::new(SquaredLoss)));
        reg.register("exp", |_| Ok(Box::new(ExponentialLoss)));
        reg.register("hinge", |_| Ok(Box::new(HingeLoss)));
        reg.register("bent-hinge", |arg| Ok(Box::new(BentHingeLoss::new(parse_c(arg)?)?)));
        reg
    })
}

/// Builds a loss from its token and near-optimal parameter.
pub fn build_loss(token: &str, c: f64) -> Result<Box<dyn SurrogateLoss>> {
    if !(c.is_finite() && c >= 1.0) {
        return Err(Error::invalid_argument(format!("c must be >= 1, got {c}")));
    }
    // Display for f64 is the shortest representation that parses back exactly
    loss_registry().build(&format!("{token}:{c}"))
}

/// Derivative used as a ratio term in the two-step rule, floored at
/// [`DERIVATIVE_FLOOR`]. The flag reports whether the floor was applied.
pub fn floored_derivative(loss: &dyn SurrogateLoss, u: f64) -> (f64, bool) {
    let d = loss.evaluate(u).right_derivative;
    if d < DERIVATIVE_FLOOR {
        (DERIVATIVE_FLOOR, true)
    } else {
        (d, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_losses() -> Vec<Box<dyn SurrogateLoss>> {
        vec![
            build_loss("squared", 1.0).unwrap(),
            build_loss("exp", 1.0).unwrap(),
            build_loss("hinge", 1.0).unwrap(),
            build_loss("bent-hinge", 1.5).unwrap(),
            build_loss("bent-hinge", 1.0).unwrap(),
        ]
    }

    #[test]
    fn bent_hinge_values() {
        let l = build_loss("bent-hinge", 1.5).unwrap();
        assert_eq!(l.value(1.0), 2.5);
        for c in [1.0, 1.2, 3.0] {
            assert_eq!(build_loss("bent-hinge", c).unwrap().value(-2.0), 0.0);
        }
        assert_eq!(build_loss("exp", 1.0).unwrap().value(0.0), 1.0);
    }

    #[test]
    fn bent_at_zero() {
        let e = build_loss("bent-hinge", 1.5).unwrap().evaluate(0.0);
        assert_eq!(e.left_derivative, 1.0);
        assert_eq!(e.right_derivative, 1.5);
    }

    #[test]
    fn squared_kink_and_exp_derivative() {
        let e = build_loss("squared", 1.0).unwrap().evaluate(-1.0);
        assert_eq!((e.left_derivative, e.right_derivative), (0.0, 0.0));
        let e = build_loss("exp", 1.0).unwrap().evaluate(2.0);
        assert_eq!(e.left_derivative, 2f64.exp());
        assert_eq!(e.right_derivative, 2f64.exp());
    }

    #[test]
    fn non_bent_families_force_c_to_one() {
        assert_eq!(LossSpec::new("squared", 1.7).unwrap().c, 1.0);
        assert_eq!(LossSpec::new("bent-hinge", 1.7).unwrap().c, 1.7);
        assert!(LossSpec::new("bent-hinge", 0.9).is_err());
        assert!(LossSpec::new("logistic", 1.0).is_err());
    }

    #[test]
    fn floored_derivative_flags_flat_region() {
        let sq = build_loss("squared", 1.0).unwrap();
        assert_eq!(floored_derivative(sq.as_ref(), -3.0), (DERIVATIVE_FLOOR, true));
        assert_eq!(floored_derivative(sq.as_ref(), 0.0), (2.0, false));
    }

    #[test]
    fn pieces_sum_to_loss() {
        for l in all_losses() {
            for u in [-3.0, -1.0, -0.3, 0.0, 0.4, 2.0] {
                let s: f64 = l.pieces().iter().map(|p| p.value(u)).sum();
                assert!((s - l.value(u)).abs() < 1e-12, "{} at {u}", l.token());
            }
        }
    }

    #[test]
    fn conjugate_steps_maximise_the_coordinate_objective() {
        // brute-force the 1-D concave maximisation on a fine grid
        let pieces = [
            Piece::Hinge,
            Piece::PositivePart { slope: 0.4 },
            Piece::SquaredHinge,
            Piece::Exponential,
        ];
        for p in pieces {
            for &(a, u, h) in &[(0.0f64, 0.3f64, 2.0f64), (0.5, -1.4, 0.7), (0.2, 0.9, 5.0), (1.0, -0.2, 0.3)] {
                let a = a.min(p.upper());
                let s = p.scale();
                let obj = |b: f64| -p.conjugate(b) + s * (b - a) * u - s * s * h * (b - a) * (b - a) / 2.0;
                let best = p.coordinate_step(a, u, h);
                let hi = if p.upper().is_finite() { p.upper() } else { 10.0 };
                let grid_best = (0..=200_000)
                    .map(|t| hi * t as f64 / 200_000.0)
                    .map(obj)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(obj(best) >= grid_best - 1e-9, "{p:?} a={a} u={u} h={h}");
            }
        }
    }

    proptest! {
        #[test]
        fn convex(u1 in -4.0f64..4.0, du in 0.0f64..4.0, t in 0.0f64..1.0) {
            let u2 = u1 + du;
            for l in all_losses() {
                let mid = l.value(t * u1 + (1.0 - t) * u2);
                prop_assert!(mid <= t * l.value(u1) + (1.0 - t) * l.value(u2) + 1e-12);
            }
        }

        #[test]
        fn monotone(u1 in -4.0f64..4.0, du in 0.0f64..4.0) {
            for l in all_losses() {
                prop_assert!(l.value(u1) <= l.value(u1 + du));
            }
        }

        #[test]
        fn derivatives_ordered_and_nonnegative(u in -4.0f64..4.0) {
            for l in all_losses() {
                let e = l.evaluate(u);
                prop_assert!(e.value >= 0.0);
                prop_assert!(e.left_derivative <= e.right_derivative);
                prop_assert!(e.left_derivative >= 0.0);
            }
        }

        #[test]
        fn derivative_matches_central_difference(u in -3.0f64..3.0) {
            let h = 1e-6;
            for l in all_losses() {
                // skip kinks
                if (u + 1.0).abs() < 1e-3 || u.abs() < 1e-3 {
                    continue;
                }
                let fd = (l.value(u + h) - l.value(u - h)) / (2.0 * h);
                let d = l.evaluate(u).right_derivative;
                prop_assert!((fd - d).abs() <= 1e-4 * d.abs().max(1.0), "{} u={u} fd={fd} d={d}", l.token());
            }
        }

        #[test]
        fn bent_hinge_with_c_one_is_hinge(u in -5.0f64..5.0) {
            let bent = build_loss("bent-hinge", 1.0).unwrap();
            let hinge = build_loss("hinge", 1.0).unwrap();
            prop_assert_eq!(bent.value(u), hinge.value(u));
            prop_assert_eq!(bent.evaluate(u), hinge.evaluate(u));
        }
    }
}

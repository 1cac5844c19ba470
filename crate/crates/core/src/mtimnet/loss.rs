//! Per-sample training loss.
//!
//! For each target `(y, ŷ, ê, η)`:
//!
//! ```text
//! r = y - ŷ
//! L = r² exp(-η) / 2 + η / 2 + SmoothL1(ê - stopgrad(r))
//! ```
//!
//! summed over displacement and heading; batch losses are means.

use super::net::{MotionEstimate, NetOutputs};
use crate::autodiff::{Graph, Plain, Tape};
use crate::model::MotionDelta;

/// Transition point of the smooth-L1 residual term.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub nll_dd: f64,
    pub nll_dpsi: f64,
    pub residual_dd: f64,
    pub residual_dpsi: f64,
}

fn target_terms<G: Graph>(
    g: &mut G,
    y: f64,
    y_hat: G::Var,
    e: G::Var,
    eta: G::Var,
    frozen: Option<f64>,
) -> (G::Var, G::Var) {
    let neg = g.scale(y_hat, -1.0);
    let r = g.offset(neg, y);
    let r2 = g.square(r);
    let neg_eta = g.scale(eta, -1.0);
    let prec = g.exp(neg_eta);
    let weighted = g.mul(r2, prec);
    let a = g.scale(weighted, 0.5);
    let b = g.scale(eta, 0.5);
    let nll = g.add(a, b);
    let target = match frozen {
        Some(v) => g.constant(v),
        None => g.detach(r),
    };
    let diff = g.sub(e, target);
    (nll, g.smooth_l1(diff, SMOOTH_L1_BETA))
}

/// Loss of one sample on any graph. `frozen` replaces the detached residual
/// targets with fixed values, which lets a finite-difference check perturb
/// parameters without moving the residual targets.
pub fn sample_loss<G: Graph>(
    g: &mut G,
    out: &NetOutputs<G::Var>,
    truth: &MotionDelta,
    frozen: Option<[f64; 2]>,
) -> G::Var {
    let (n1, s1) = target_terms(
        g,
        truth.dd,
        out.dd_hat,
        out.e_dd,
        out.log_var_dd,
        frozen.map(|f| f[0]),
    );
    let (n2, s2) = target_terms(
        g,
        truth.dpsi,
        out.dpsi_hat,
        out.e_dpsi,
        out.log_var_dpsi,
        frozen.map(|f| f[1]),
    );
    g.sum(&[n1, s1, n2, s2])
}

/// Residual targets `y - ŷ` of one sample.
pub fn residual_targets<G: Graph>(
    g: &G,
    out: &NetOutputs<G::Var>,
    truth: &MotionDelta,
) -> [f64; 2] {
    [
        truth.dd - g.value(out.dd_hat),
        truth.dpsi - g.value(out.dpsi_hat),
    ]
}

/// Loss of a finished estimate, broken into its terms.
pub fn loss(est: &MotionEstimate, truth: &MotionDelta) -> LossTerms {
    let mut g = Plain;
    let (nll_dd, residual_dd) =
        target_terms(&mut g, truth.dd, est.dd_hat, est.e_dd, est.log_var_dd, None);
    let (nll_dpsi, residual_dpsi) = target_terms(
        &mut g,
        truth.dpsi,
        est.dpsi_hat,
        est.e_dpsi,
        est.log_var_dpsi,
        None,
    );
    LossTerms {
        total: nll_dd + residual_dd + nll_dpsi + residual_dpsi,
        nll_dd,
        nll_dpsi,
        residual_dd,
        residual_dpsi,
    }
}

/// Loss and its gradient with respect to the six outputs, in the field order
/// of [`MotionEstimate`].
pub fn loss_with_gradients(est: &MotionEstimate, truth: &MotionDelta) -> (f64, [f64; 6]) {
    let mut t = Tape::new();
    let vals = [
        est.dd_hat,
        est.dpsi_hat,
        est.e_dd,
        est.e_dpsi,
        est.log_var_dd,
        est.log_var_dpsi,
    ];
    let v: Vec<_> = vals.iter().map(|&x| t.leaf(x)).collect();
    let out = NetOutputs {
        dd_hat: v[0],
        dpsi_hat: v[1],
        e_dd: v[2],
        e_dpsi: v[3],
        log_var_dd: v[4],
        log_var_dpsi: v[5],
    };
    let l = sample_loss(&mut t, &out, truth, None);
    let adj = t.backward(l);
    let mut grad = [0.0; 6];
    for (g, var) in grad.iter_mut().zip(&v) {
        *g = adj[var.index()];
    }
    (t.value(l), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn est(dd: f64, dpsi: f64, e_dd: f64, e_dpsi: f64, l1: f64, l2: f64) -> MotionEstimate {
        MotionEstimate {
            dd_hat: dd,
            dpsi_hat: dpsi,
            e_dd,
            e_dpsi,
            log_var_dd: l1,
            log_var_dpsi: l2,
        }
    }

    #[test]
    fn perfect_prediction_costs_nothing() {
        let truth = MotionDelta::new(3.0, 0.1).unwrap();
        let l = loss(&est(3.0, 0.1, 0.0, 0.0, 0.0, 0.0), &truth);
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn hand_computed_value() {
        let truth = MotionDelta::new(3.0, 0.0).unwrap();
        // r_dd = 1, eta = ln 2: 1 * 0.5 / 2 + ln2 / 2; residual |0 - 1| -> 0.5
        // r_dpsi = -2, eta = 0: 4 / 2 = 2; residual |0.5 + 2| = 2.5 -> 2.0
        let l = loss(&est(2.0, 2.0, 0.0, 0.5, 2f64.ln(), 0.0), &truth);
        assert!((l.nll_dd - (0.25 + 0.5 * 2f64.ln())).abs() < 1e-15);
        assert!((l.residual_dd - 0.5).abs() < 1e-15);
        assert!((l.nll_dpsi - 2.0).abs() < 1e-15);
        assert!((l.residual_dpsi - 2.0).abs() < 1e-15);
    }

    #[test]
    fn residual_target_is_detached() {
        let truth = MotionDelta::new(3.0, 0.0).unwrap();
        let (_, g) = loss_with_gradients(&est(2.5, 0.0, 0.1, 0.0, 0.0, 0.0), &truth);
        // d/d dd_hat only through the NLL: -(y - ŷ) exp(-η) = -0.5
        assert!((g[0] + 0.5).abs() < 1e-15);
        // d/d e_dd = (ê - r) for |ê - r| < 1: 0.1 - 0.5
        assert!((g[2] + 0.4).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn nll_minimised_at_squared_residual(r in 0.01f64..5.0, dpsi in -1.0f64..1.0) {
            // dL/dη = 0 at η = ln r²
            let truth = MotionDelta::new(3.0 + r, dpsi).unwrap();
            let (_, g) = loss_with_gradients(&est(3.0, dpsi, r, 0.0, (r * r).ln(), 0.0), &truth);
            prop_assert!(g[4].abs() < 1e-9, "{}", g[4]);
        }

        #[test]
        fn loss_is_finite_for_bounded_inputs(
            a in 0.0f64..20.0, b in -3.0f64..3.0, c in -5.0f64..5.0,
            d in -5.0f64..5.0, e in -10.0f64..10.0, f in -10.0f64..10.0,
        ) {
            let truth = MotionDelta::new(2.0, 0.1).unwrap();
            let l = loss(&est(a, b, c, d, e, f), &truth);
            prop_assert!(l.total.is_finite());
        }
    }
}

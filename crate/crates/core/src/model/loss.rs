use super::dot;
use crate::{Error, Result};

/// Gradients of the BCE loss with respect to its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BceGrad {
    pub h: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-[log sigmoid(h.pos) + log(1 - sigmoid(h.neg))]` and its gradients.
pub fn bce_loss(h: &[f64], pos: &[f64], neg: &[f64]) -> Result<(f64, BceGrad)> {
    if pos.len() != h.len() || neg.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: h.len(),
            got: if pos.len() != h.len() { pos.len() } else { neg.len() },
        });
    }
    let s_pos = dot(h, pos);
    let s_neg = dot(h, neg);
    if !(s_pos.is_finite() && s_neg.is_finite()) {
        return Err(Error::Numeric(format!("non-finite BCE logits ({s_pos}, {s_neg})")));
    }
    let loss = softplus(-s_pos) + softplus(s_neg);
    let g_pos = sigmoid(s_pos) - 1.0;
    let g_neg = sigmoid(s_neg);
    let grad = BceGrad {
        h: pos.iter().zip(neg).map(|(p, n)| g_pos * p + g_neg * n).collect(),
        pos: h.iter().map(|x| g_pos * x).collect(),
        neg: h.iter().map(|x| g_neg * x).collect(),
    };
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_logits_give_two_log_two() {
        let (l, _) = bce_loss(&[0.0, 0.0], &[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturates_to_zero_without_overflow() {
        let (l, g) = bce_loss(&[1e3], &[1e3], &[-1e3]).unwrap();
        assert!(l.abs() < 1e-300);
        assert!(g.h.iter().all(|x| x.is_finite()));
        let (l, _) = bce_loss(&[1e3], &[-1e3], &[1e3]).unwrap();
        assert!((l - 2e6).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(bce_loss(&[1.0], &[1.0, 2.0], &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(bce_loss(&[f64::NAN], &[1.0], &[1.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut v = |_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (h, p, n) = (v(0), v(1), v(2));
        let (_, g) = bce_loss(&h, &p, &n).unwrap();
        let step = 1e-6;
        for which in 0..3 {
            for i in 0..8 {
                let eval = |delta: f64| {
                    let mut args = [h.clone(), p.clone(), n.clone()];
                    args[which][i] += delta;
                    bce_loss(&args[0], &args[1], &args[2]).unwrap().0
                };
                let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                let analytic = [&g.h, &g.pos, &g.neg][which][i];
                assert!((numeric - analytic).abs() <= 1e-5 * numeric.abs().max(analytic.abs()) + 1e-10);
            }
        }
    }

    #[test]
    fn mixed_input_interpolates_endpoint_losses() {
        let (h1, h2) = ([0.4, -0.2, 1.0], [-0.3, 0.8, 0.1]);
        let (p, n) = ([0.5, 0.5, -0.5], [0.2, -0.9, 0.3]);
        let at = |lambda: f64| {
            let h: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            bce_loss(&h, &p, &n).unwrap().0
        };
        assert_eq!(at(1.0), bce_loss(&h1, &p, &n).unwrap().0);
        assert_eq!(at(0.0), bce_loss(&h2, &p, &n).unwrap().0);
        assert!((at(0.5) - at(0.5 + 1e-9)).abs() < 1e-8);
    }
}

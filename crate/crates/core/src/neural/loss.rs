//! Losses over score matrices, each returning the value and `∂loss/∂scores`.
//!
//! Every loss is averaged over the supervised positions (the rows of the
//! score matrix).

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// Gradient of `value` with respect to every score.
    pub grad: Array2<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `−β·ln σ(x)` and its derivative.
pub(crate) fn positive_term(x: f64, beta: f64) -> (f64, f64) {
    (beta * softplus(-x), -beta * sigmoid(-x))
}

/// `−ln(1 − σ(x))` and its derivative.
pub(crate) fn negative_term(x: f64) -> (f64, f64) {
    (softplus(x), sigmoid(x))
}

fn check_rows(scores: &ArrayView2<'_, f64>, rows: usize) -> Result<()> {
    if scores.nrows() != rows {
        return Err(Error::invalid(format!("{} score rows but {rows} targets", scores.nrows())));
    }
    if rows == 0 {
        return Err(Error::invalid("no supervised positions"));
    }
    Ok(())
}

fn check_target(t: usize, n: usize) -> Result<()> {
    if t >= n {
        return Err(Error::invalid(format!("target {t} outside catalog of size {n}")));
    }
    Ok(())
}

/// Mean over rows of `−ln softmax(x)[target]`.
pub fn ce_loss(scores: ArrayView2<'_, f64>, targets: &[usize]) -> Result<LossValue> {
    check_rows(&scores, targets.len())?;
    let n = scores.ncols();
    let inv_rows = 1.0 / targets.len() as f64;
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        check_target(t, n)?;
        let row = scores.row(i);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut g = grad.row_mut(i);
        let mut sum = 0.0;
        for (gv, &x) in g.iter_mut().zip(row.iter()) {
            *gv = (x - max).exp();
            sum += *gv;
        }
        total += max + sum.ln() - row[t];
        g.mapv_inplace(|e| e / sum * inv_rows);
        g[t] -= inv_rows;
    }
    Ok(LossValue { value: total * inv_rows, grad })
}

/// Plain BCE with sampled negatives; same as [`gbce_loss`] with `beta = 1`.
pub fn bce_loss(scores: ArrayView2<'_, f64>, positives: &[usize], negatives: &[Vec<usize>]) -> Result<LossValue> {
    binary_loss(scores, positives, negatives, 1.0)
}

/// Mean over rows of `−ln(σ(x_pos)^β) − Σ_neg ln(1 − σ(x_neg))`.
pub fn gbce_loss(
    scores: ArrayView2<'_, f64>,
    positives: &[usize],
    negatives: &[Vec<usize>],
    beta: f64,
) -> Result<LossValue> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    binary_loss(scores, positives, negatives, beta)
}

fn binary_loss(scores: ArrayView2<'_, f64>, positives: &[usize], negatives: &[Vec<usize>], beta: f64) -> Result<LossValue> {
    check_rows(&scores, positives.len())?;
    if negatives.len() != positives.len() {
        return Err(Error::invalid("one negative list per positive is required"));
    }
    let n = scores.ncols();
    let inv_rows = 1.0 / positives.len() as f64;
    let mut grad = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for (i, (&pos, negs)) in positives.iter().zip(negatives).enumerate() {
        check_target(pos, n)?;
        let (v, d) = positive_term(scores[[i, pos]], beta);
        total += v;
        grad[[i, pos]] += d * inv_rows;
        for &neg in negs {
            check_target(neg, n)?;
            if neg == pos {
                return Err(Error::invalid(format!("negative {neg} equals the positive item")));
            }
            let (v, d) = negative_term(scores[[i, neg]]);
            total += v;
            grad[[i, neg]] += d * inv_rows;
        }
    }
    Ok(LossValue { value: total * inv_rows, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn ce_uniform_is_ln_n() {
        let s = Array2::zeros((3, 4));
        let l = ce_loss(s.view(), &[0, 1, 3]).unwrap();
        assert_abs_diff_eq!(l.value, 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn ce_confident_target_vanishes() {
        let s = array![[800.0, 0.0, 0.0]];
        assert!(ce_loss(s.view(), &[0]).unwrap().value < 1e-300);
        assert!(ce_loss(s.view(), &[3]).is_err());
        assert!(ce_loss(s.view(), &[0, 1]).is_err());
    }

    #[test]
    fn bce_at_zero_is_two_ln_two() {
        let s = Array2::zeros((1, 3));
        let l = bce_loss(s.view(), &[0], &[vec![2]]).unwrap();
        assert_abs_diff_eq!(l.value, 2.0 * 2f64.ln(), epsilon = 1e-15);
        let s = array![[60.0, 0.0, -60.0]];
        assert!(bce_loss(s.view(), &[0], &[vec![2]]).unwrap().value < 1e-20);
        assert!(bce_loss(s.view(), &[0], &[vec![0]]).is_err());
    }

    #[test]
    fn gbce_cases() {
        let s = array![[0.3, -1.2, 2.0, 0.7]];
        let negs = vec![vec![1, 3]];
        let a = gbce_loss(s.view(), &[2], &negs, 1.0).unwrap();
        let b = bce_loss(s.view(), &[2], &negs).unwrap();
        assert_eq!(a, b);
        let z = Array2::zeros((1, 2));
        let half = gbce_loss(z.view(), &[0], &[vec![]], 0.5).unwrap();
        assert_abs_diff_eq!(half.value, 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert!(gbce_loss(z.view(), &[0], &[vec![]], 0.0).is_err());
        assert!(gbce_loss(z.view(), &[0], &[vec![]], 1.01).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn ce_matches_direct_formula() {
        let s: Array2<f64> = array![[0.3, -1.2, 2.0, 0.7, -0.4], [1.1, 0.0, -2.5, 0.2, 3.3], [-0.6, 0.9, 0.1, -1.4, 0.5]];
        let targets = [2, 4, 0];
        let want: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -(s[[i, t]].exp() / s.row(i).iter().map(|v| v.exp()).sum::<f64>()).ln())
            .sum::<f64>()
            / 3.0;
        assert_abs_diff_eq!(ce_loss(s.view(), &targets).unwrap().value, want, epsilon = 1e-14);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let s = array![[0.3, -1.2, 2.0, 0.7], [1.1, 0.0, -2.5, 0.2]];
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let want = (-(sig(2.0)).ln() - (1.0 - sig(-1.2)).ln() - (1.0 - sig(0.7)).ln() - sig(1.1).ln() - (1.0 - sig(-2.5)).ln())
            / 2.0;
        let got = bce_loss(s.view(), &[2, 0], &[vec![1, 3], vec![2]]).unwrap().value;
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let s = array![[0.3, -1.2, 2.0, 0.7], [1.1, 0.0, -2.5, 0.2]];
        let negs = vec![vec![1, 3], vec![2, 3]];
        let h = 1e-5;
        for beta in [0.5, 1.0] {
            let f = |m: &Array2<f64>| gbce_loss(m.view(), &[2, 0], &negs, beta).unwrap().value;
            let g = gbce_loss(s.view(), &[2, 0], &negs, beta).unwrap().grad;
            for idx in [[0, 2], [1, 0], [0, 1], [1, 3]] {
                let (mut up, mut down) = (s.clone(), s.clone());
                up[idx] += h;
                down[idx] -= h;
                let fd = (f(&up) - f(&down)) / (2.0 * h);
                assert!((fd - g[idx]).abs() / g[idx].abs() < 1e-4);
            }
        }
        let g = ce_loss(s.view(), &[2, 0]).unwrap().grad;
        for idx in [[0, 2], [1, 3]] {
            let (mut up, mut down) = (s.clone(), s.clone());
            up[idx] += h;
            down[idx] -= h;
            let fd = (ce_loss(up.view(), &[2, 0]).unwrap().value - ce_loss(down.view(), &[2, 0]).unwrap().value) / (2.0 * h);
            assert!((fd - g[idx]).abs() / g[idx].abs() < 1e-4);
        }
    }
}

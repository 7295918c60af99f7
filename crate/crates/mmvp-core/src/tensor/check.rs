//! Central finite-difference verification of autodiff gradients.

use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Compares the autodiff gradient of a scalar-valued function against
/// central finite differences (f(x+h·e) − f(x−h·e)) / 2h and returns the
/// max over elements of |Δ| / max(|g|, 1e-8).
pub fn finite_diff_check<E, F>(f: F, x: &Tensor<E>, h: f64) -> Result<f64>
where
    E: Element,
    F: Fn(&Graph<E>, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::Invalid(format!("step h must be > 0, got {h}")));
    }
    let eval = |t: Tensor<E>| -> Result<f64> {
        let g = Graph::new();
        let v = g.leaf(t, false);
        let out = f(&g, v)?;
        let val = g.value(out);
        if val.numel() != 1 {
            return Err(Error::Invalid(format!(
                "finite_diff_check needs a scalar-valued function, got shape {:?}",
                val.shape()
            )));
        }
        Ok(val.item().as_f64())
    };

    // autodiff gradient
    let g = Graph::new();
    let v = g.leaf(x.clone(), true);
    let out = f(&g, v)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Invalid(
            "finite_diff_check needs a scalar-valued function".into(),
        ));
    }
    g.backward(out)?;
    let auto = g.grad(v).expect("leaf requires grad");

    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += E::from_f64(h);
        let mut minus = x.clone();
        minus.data_mut()[i] -= E::from_f64(h);
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = auto.data()[i].as_f64();
        let rel = (numeric - a).abs() / a.abs().max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let w = g.constant(Tensor::from_vec(vec![3], vec![2.0, 3.0, -1.0]).unwrap());
                Ok(g.sum(g.mul(v, w)?))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "rel err {err}");
    }

    #[test]
    fn sum_of_squares_gradient() {
        // f(x) = sum(x^2) at [1,2,3] has gradient [2,4,6]
        let x = Tensor::from_vec(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap();
        let g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let y = g.mul(v, v).unwrap();
        g.backward(g.sum(y)).unwrap();
        assert_eq!(g.grad(v).unwrap().data(), &[2.0, 4.0, 6.0]);
        let err = finite_diff_check(|g, v| Ok(g.sum(g.mul(v, v)?)), &x, 1e-5).unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn softmax_matmul_chain() {
        let x = Tensor::from_vec(vec![2, 3], vec![0.3f64, -0.7, 1.1, 0.2, 0.9, -1.3]).unwrap();
        let err = finite_diff_check(
            |g, v| {
                let s = g.softmax(v, &[1])?;
                let w = g.constant(
                    Tensor::from_vec(vec![3, 2], vec![0.5, -0.25, 1.5, 0.75, -0.5, 1.0]).unwrap(),
                );
                let y = g.matmul(s, w)?;
                let m = g.constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
                Ok(g.sum(g.mul(y, m)?))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn rejects_nonpositive_step() {
        let x = Tensor::from_vec(vec![1], vec![1.0f64]).unwrap();
        assert!(finite_diff_check(|g, v| Ok(g.sum(v)), &x, 0.0).is_err());
    }
}

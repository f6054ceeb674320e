use crate::error::{NnError, Result};

/// A named-by-position block of trainable values with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(NnError::shape("ParamTensor::from_values", n, values.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns an ordered collection of parameter tensors.
///
/// The order must be stable: optimizers and soft updates pair tensors by
/// position.
pub trait ParamSet {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub fn zero_grads<P: ParamSet + ?Sized>(set: &mut P) {
    for p in set.params_mut() {
        p.zero_grad();
    }
}

/// `target ← (1 − tau)·target + tau·online`, elementwise.
pub fn soft_update<T, O>(target: &mut T, online: &O, tau: f64) -> Result<()>
where
    T: ParamSet + ?Sized,
    O: ParamSet + ?Sized,
{
    let src = online.params();
    let mut dst = target.params_mut();
    if src.len() != dst.len() {
        return Err(NnError::shape("soft_update tensor count", dst.len(), src.len()));
    }
    for (d, s) in dst.iter().zip(&src) {
        if d.shape() != s.shape() {
            return Err(NnError::shape(
                "soft_update tensor shape",
                format!("{:?}", d.shape()),
                format!("{:?}", s.shape()),
            ));
        }
    }
    for (d, s) in dst.iter_mut().zip(src) {
        if tau == 1.0 {
            d.values.copy_from_slice(&s.values);
        } else {
            for (dv, sv) in d.values.iter_mut().zip(&s.values) {
                *dv = (1.0 - tau) * *dv + tau * sv;
            }
        }
    }
    Ok(())
}

/// Euclidean distance between two parameter collections of identical layout.
pub fn param_distance<A, B>(a: &A, b: &B) -> Result<f64>
where
    A: ParamSet + ?Sized,
    B: ParamSet + ?Sized,
{
    let pa = a.params();
    let pb = b.params();
    if pa.len() != pb.len() {
        return Err(NnError::shape("param_distance tensor count", pa.len(), pb.len()));
    }
    let mut acc = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        if x.shape() != y.shape() {
            return Err(NnError::shape(
                "param_distance tensor shape",
                format!("{:?}", x.shape()),
                format!("{:?}", y.shape()),
            ));
        }
        acc += x
            .values
            .iter()
            .zip(&y.values)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>();
    }
    Ok(acc.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat(Vec<ParamTensor>);

    impl ParamSet for Flat {
        fn params(&self) -> Vec<&ParamTensor> {
            self.0.iter().collect()
        }
        fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
            self.0.iter_mut().collect()
        }
    }

    fn flat(values: &[f64]) -> Flat {
        Flat(vec![ParamTensor::from_values(&[values.len()], values.to_vec()).unwrap()])
    }

    #[test]
    fn soft_update_converges_geometrically() {
        let online = flat(&[1.0, -2.0, 0.5]);
        let mut target = flat(&[0.0, 0.0, 0.0]);
        let d0 = param_distance(&target, &online).unwrap();
        let tau = 0.001;
        for k in 1..=2000 {
            soft_update(&mut target, &online, tau).unwrap();
            if k % 500 == 0 {
                let want = d0 * (1.0 - tau).powi(k);
                let got = param_distance(&target, &online).unwrap();
                assert!((got - want).abs() <= 1e-9 * want, "k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn tau_one_copies_and_zero_keeps() {
        let online = flat(&[3.0, 4.0]);
        let mut t = flat(&[0.0, 0.0]);
        soft_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.0[0].values, vec![0.0, 0.0]);
        soft_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t.0[0].values, vec![3.0, 4.0]);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = flat(&[1.0]);
        let mut b = flat(&[1.0, 2.0]);
        assert!(param_distance(&a, &b).is_err());
        assert!(soft_update(&mut b, &a, 0.5).is_err());
    }
}

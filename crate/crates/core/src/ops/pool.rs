use crate::{Error, Result, Shape4, Tensor4};

/// Spatial mean per channel, `(n, c, h, w) → (n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor4) -> Tensor4 {
    let s = x.shape();
    let inv = 1.0 / s.plane() as f64;
    Tensor4::from_fn(Shape4::new(s.n, s.c, 1, 1), |n, c, _, _| x.plane(n, c).iter().sum::<f64>() * inv)
}

pub fn global_avg_pool_backward(input_shape: Shape4, grad_out: &Tensor4) -> Result<Tensor4> {
    let expect = Shape4::new(input_shape.n, input_shape.c, 1, 1);
    if grad_out.shape() != expect {
        return Err(Error::shape("global_avg_pool_backward", expect, grad_out.shape()));
    }
    let inv = 1.0 / input_shape.plane() as f64;
    Ok(Tensor4::from_fn(input_shape, |n, c, _, _| grad_out.at(n, c, 0, 0) * inv))
}

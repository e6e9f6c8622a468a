use super::ModelError;
use crate::tensor::{Scalar, Tensor};

/// Sin/cos time embedding `(sin(b^0·π·t), cos(b^0·π·t), …, sin(b^{l−1}·π·t), cos(b^{l−1}·π·t))`.
pub fn positional_encode<T: Scalar>(t: f64, base: f64, levels: usize) -> Result<Tensor<T>, ModelError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(ModelError::TimeOutOfRange(t));
    }
    let mut out = Vec::with_capacity(2 * levels);
    for i in 0..levels {
        let arg = base.powi(i as i32) * std::f64::consts::PI * t;
        out.push(T::of(arg.sin()));
        out.push(T::of(arg.cos()));
    }
    Ok(Tensor::from_vec(&[2 * levels], out)?)
}

/// Embeddings for a batch of times, `[N, 2l]`.
pub fn encode_times<T: Scalar>(times: &[f64], base: f64, levels: usize) -> Result<Tensor<T>, ModelError> {
    let rows = times
        .iter()
        .map(|&t| positional_encode(t, base, levels))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::stack(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_pattern() {
        let pe = positional_encode::<f64>(0.0, 1.25, 6).unwrap();
        for pair in pe.data().chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
    }

    #[test]
    fn t_one_base_one() {
        let pe = positional_encode::<f64>(1.0, 1.0, 3).unwrap();
        for pair in pe.data().chunks(2) {
            assert!(pair[0].abs() < 1e-12);
            assert!((pair[1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_formula_midpoint() {
        let pe = positional_encode::<f64>(0.5, 1.25, 3).unwrap();
        let pi = std::f64::consts::PI;
        let expect = [
            (0.5 * pi).sin(),
            (0.5 * pi).cos(),
            (1.25 * 0.5 * pi).sin(),
            (1.25 * 0.5 * pi).cos(),
            (1.5625 * 0.5 * pi).sin(),
            (1.5625 * 0.5 * pi).cos(),
        ];
        for (a, b) in pe.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_out_of_range_time() {
        assert!(matches!(
            positional_encode::<f32>(1.5, 1.25, 2),
            Err(ModelError::TimeOutOfRange(_))
        ));
        assert!(positional_encode::<f32>(-0.1, 1.25, 2).is_err());
    }
}

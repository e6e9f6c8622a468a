use super::{Result, Tape, Tensor, TensorError, Var};

fn eval_scalar<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Central-difference gradient of a scalar-valued `f` wrt every parameter.
pub fn numeric_grad<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Tensor::zeros(params[pi].shape());
        for j in 0..params[pi].numel() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let plus = eval_scalar(&f, &work)?;
            work[pi].data_mut()[j] = orig - eps;
            let minus = eval_scalar(&f, &work)?;
            work[pi].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Reverse-mode gradients of `f` wrt `params`.
pub fn analytic_grad<F>(f: &F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars.iter().map(|&v| tape.grad(v).expect("leaf grad")).collect())
}

/// Largest `|analytic − numeric| / max(1, |numeric|)` over every parameter
/// element, with central differences of step `eps`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grad(&f, params)?;
    let numeric = numeric_grad(&f, params, eps)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            worst = worst.max((av - nv).abs() / nv.abs().max(1.0));
        }
    }
    Ok(worst)
}

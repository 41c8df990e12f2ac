use super::dense::DenseNet;
use super::NnError;

/// Relative error between an analytic and a numerical derivative.
///
/// The denominator is floored at 1e-6 so that parameters with vanishing
/// gradients are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Worst relative error of [`DenseNet::backward`] against central differences
/// of `L(θ) = ½‖net(x; θ)‖²`, over every parameter.
pub fn grad_check(net: &DenseNet<f64>, x: &[f64], eps: f64) -> Result<f64, NnError> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let trace = net.forward_trace(x.to_vec(), 1)?;
    let out = trace.output().to_vec();
    let mut grads = vec![0.0; net.num_params()];
    net.backward(&trace, &out, &mut grads, false)?;

    let loss = |n: &DenseNet<f64>| -> Result<f64, NnError> {
        Ok(0.5 * n.forward(x)?.iter().map(|v| v * v).sum::<f64>())
    };
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let up = loss(&probe)?;
        probe.params_mut()[i] = orig - eps;
        let down = loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(grads[i], numeric));
    }
    Ok(worst)
}

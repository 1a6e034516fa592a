//! Central finite-difference gradient checking in `f64`.

use super::{Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Compares tape gradients with central differences of step `h`.
///
/// `build` records a scalar loss from the leaf handles. Returns, per leaf,
/// `|g - g_fd| / max(|g| + |g_fd|, floor)` measured in the 2-norm, where the
/// floor keeps all-zero gradients from dividing by zero.
pub fn check_gradients<F>(leaves: &[Tensor<f64>], h: f64, build: F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = ts.iter().map(|t| g.leaf(t)).collect::<Result<Vec<_>>>()?;
        let loss = build(&mut g, &vars)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(invalid("gradient check needs a scalar loss"));
        }
        Ok(v[0])
    };

    let mut g = Graph::new();
    let mut trainable: Vec<Tensor<f64>> = leaves.to_vec();
    trainable.iter_mut().for_each(|t| t.set_requires_grad(true));
    let vars = trainable.iter().map(|t| g.leaf(t)).collect::<Result<Vec<_>>>()?;
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let mut errors = Vec::with_capacity(leaves.len());
    for (li, var) in vars.iter().enumerate() {
        let analytic = g.grad(*var).expect("leaf gradient").to_vec();
        let mut probe = leaves.to_vec();
        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe[li].data()[i];
            probe[li].data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe[li].data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe[li].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff2 += (a - numeric).powi(2);
            norm_a += a.powi(2);
            norm_n += numeric.powi(2);
        }
        errors.push(diff2.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-12));
    }
    Ok(errors)
}

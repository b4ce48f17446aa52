use super::ParamBlock;

/// A scalar function of one or more parameter blocks with an analytic gradient.
pub trait Objective {
    /// The blocks whose entries are perturbed by [`grad_check`].
    fn blocks(&mut self) -> Vec<&mut ParamBlock>;
    fn value(&mut self) -> f64;
    /// Evaluates the function and leaves `∂f/∂θ` in the blocks' gradient
    /// buffers (zeroing them first).
    fn value_and_grad(&mut self) -> f64;
}

fn nudge<O: Objective + ?Sized>(obj: &mut O, block: usize, param: usize, j: usize, value: f64) {
    let mut blocks = obj.blocks();
    let b = &mut blocks[block];
    let id = b.ids().nth(param).expect("parameter index");
    b.value_mut(id).data_mut()[j] = value;
}

/// Largest relative error between analytic and finite-difference gradients.
///
/// The numeric side is the fourth-order central stencil
/// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`; the error per entry is
/// `|a − fd| / max(|a|, |fd|, 1e-8)`. Every entry of every block is probed,
/// and parameters are restored bit-for-bit afterwards.
pub fn grad_check<O: Objective + ?Sized>(obj: &mut O, eps: f64) -> f64 {
    obj.value_and_grad();
    let analytic: Vec<Vec<Vec<f64>>> = obj
        .blocks()
        .iter()
        .map(|b| b.ids().map(|id| b.grad(id).data().to_vec()).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for (bi, block_grads) in analytic.iter().enumerate() {
        for (pi, grads) in block_grads.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let orig = {
                    let mut blocks = obj.blocks();
                    let b = &mut blocks[bi];
                    let id = b.ids().nth(pi).expect("parameter index");
                    b.value(id).data()[j]
                };
                let mut eval = |delta: f64| {
                    nudge(obj, bi, pi, j, orig + delta);
                    obj.value()
                };
                let fp2 = eval(2.0 * eps);
                let fp1 = eval(eps);
                let fm1 = eval(-eps);
                let fm2 = eval(-2.0 * eps);
                nudge(obj, bi, pi, j, orig);
                let fd = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * eps);
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

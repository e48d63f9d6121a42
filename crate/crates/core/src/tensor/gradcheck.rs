//! Central finite-difference gradient checking.

use super::params::{ParamId, ParamStore};
use super::tape::Gradients;

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per parameter, in store order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Probes that straddled a kink and matched a one-sided difference.
    pub one_sided: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares the analytic parameter gradients returned by `f` against
/// central differences of its loss. At most `max_per_param` coordinates
/// of each parameter are probed, evenly spread over the tensor.
///
/// Networks built from leaky ReLU and max reductions are only piecewise
/// smooth; a probe whose step crosses a kink gets a central difference
/// that averages two slopes. Each probe is therefore also compared with
/// both one-sided differences and scored by the best of the three: a wrong
/// gradient disagrees with all of them, a correct one matches the side of
/// the kink it was computed on.
pub fn check_gradients<E>(
    store: &mut ParamStore,
    h: f64,
    floor: f64,
    max_per_param: usize,
    mut f: impl FnMut(&ParamStore) -> Result<(f64, Gradients), E>,
) -> Result<GradCheckReport, E> {
    let (base, grads) = f(store)?;
    let mut analytic: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
    for (id, g) in grads.params() {
        for (a, b) in analytic[id.index()].iter_mut().zip(g) {
            *a += b;
        }
    }
    let mut per_param = Vec::with_capacity(store.len());
    let mut checked = 0;
    let mut one_sided = 0;
    for pi in 0..store.len() {
        let id = ParamId(pi);
        let n = store.get(id).value.numel();
        let probes = n.min(max_per_param.max(1));
        let mut worst = 0.0f64;
        for q in 0..probes {
            let i = q * n / probes;
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let up = f(store)?.0;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let down = f(store)?.0;
            store.get_mut(id).value.data_mut()[i] = orig;
            let a = analytic[pi][i];
            let central = rel_error(a, (up - down) / (2.0 * h), floor);
            let side = rel_error(a, (up - base) / h, floor).min(rel_error(a, (base - down) / h, floor));
            if side * 10.0 < central {
                one_sided += 1;
            }
            worst = worst.max(central.min(side));
            checked += 1;
        }
        per_param.push((store.get(id).name.clone(), worst));
    }
    let max_rel_err = per_param.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        checked,
        one_sided,
    })
}

use rand::Rng;

use super::tape::{Groups, Tape, Var};
use super::{Tensor, TensorError};

/// Step and denominator floor used for all 64-bit checks.
pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-4;

/// Checks one tape operation: the inputs become variables, the output is
/// contracted with fixed random weights into a scalar, and the gradient of
/// every input coordinate is compared against central differences.
/// Returns the largest relative error.
pub fn check_op(
    inputs: &[Tensor],
    rng: &mut impl Rng,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
) -> Result<f64, TensorError> {
    let loss_of = |xs: &[Tensor], weights: Option<&Tensor>| -> Result<(f64, Vec<Vec<f64>>, Tensor), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let w = match weights {
            Some(w) => w.clone(),
            None => Tensor::zeros(tape.shape(out)),
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum(prod)?;
        let grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(xs)
            .map(|(&v, x)| grads.wrt(v).map_or_else(|| vec![0.0; x.numel()], <[f64]>::to_vec))
            .collect();
        Ok((tape.value(loss).item(), g, w))
    };
    // Discover the output shape, then draw the contraction weights.
    let (_, _, w0) = loss_of(inputs, None)?;
    let weights = Tensor::new(
        w0.shape().to_vec(),
        (0..w0.numel()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let (_, analytic, _) = loss_of(inputs, Some(&weights))?;
    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = loss_of(&xs, Some(&weights))?.0;
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = loss_of(&xs, Some(&weights))?.0;
            xs[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic[k][i], numeric, FD_FLOOR));
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

/// Runs [`check_op`] over every differentiable primitive with small random
/// shapes. Returns `(name, max relative error)` per primitive.
pub fn primitive_suite(rng: &mut impl Rng) -> Result<Vec<(&'static str, f64)>, TensorError> {
    let mut out = Vec::new();
    let r = |rng: &mut _, s: &[usize]| rand_tensor(rng, s);

    let ins = [r(rng, &[4, 3]), r(rng, &[5, 3]), r(rng, &[5])];
    out.push(("linear", check_op(&ins, rng, |t, v| t.linear(v[0], v[1], Some(v[2])))?));
    let ins = [r(rng, &[3, 4]), r(rng, &[3, 4])];
    out.push(("add", check_op(&ins, rng, |t, v| t.add(v[0], v[1]))?));
    out.push(("sub", check_op(&ins, rng, |t, v| t.sub(v[0], v[1]))?));
    out.push(("mul", check_op(&ins, rng, |t, v| t.mul(v[0], v[1]))?));
    out.push(("scale", check_op(&ins[..1], rng, |t, v| t.scale(v[0], -1.7))?));
    let ins = [r(rng, &[3, 4]), r(rng, &[4])];
    out.push(("add_row", check_op(&ins, rng, |t, v| t.add_row(v[0], v[1]))?));
    out.push(("leaky_relu", check_op(&ins[..1], rng, |t, v| t.leaky_relu(v[0], 0.2))?));
    let ins = [r(rng, &[3, 2]), r(rng, &[3, 4])];
    out.push(("concat_cols", check_op(&ins, rng, |t, v| t.concat_cols(v))?));
    let ins = [r(rng, &[5, 3])];
    out.push(("gather_rows", check_op(&ins, rng, |t, v| t.gather_rows(v[0], vec![4, 0, 0, 2]))?));
    out.push((
        "weighted_gather",
        check_op(&ins, rng, |t, v| t.weighted_gather(v[0], vec![0, 1, 2, 3, 4, 4], vec![0.2, 0.5, 0.3, 0.6, 0.1, 0.3], 3))?,
    ));
    let groups = Groups::from_lists([vec![0, 1, 2], vec![3], vec![4, 1]]);
    out.push(("max_gather", check_op(&ins, rng, |t, v| t.max_gather(v[0], &groups))?));
    let ins = [r(rng, &[9, 3]), r(rng, &[4, 3, 3]), r(rng, &[4])];
    out.push((
        "conv1d",
        check_op(&ins, rng, |t, v| t.conv1d(v[0], v[1], Some(v[2]), &[5, 1, 3], 2, 1).map(|p| p.0))?,
    ));
    let ins = [r(rng, &[6, 3]), r(rng, &[3, 2, 3]), r(rng, &[2])];
    out.push((
        "tconv1d",
        check_op(&ins, rng, |t, v| t.tconv1d(v[0], v[1], Some(v[2]), &[3, 1, 2], 2, &[5, 2, 4]))?,
    ));
    let ins = [r(rng, &[3, 5])];
    out.push(("log_softmax", check_op(&ins, rng, |t, v| t.log_softmax(v[0]))?));
    out.push((
        "nll_loss",
        check_op(&ins, rng, |t, v| {
            let l = t.log_softmax(v[0])?;
            t.nll_loss(l, &[1, 4, 0])
        })?,
    ));
    let ins = [r(rng, &[3, 4]), r(rng, &[3, 4])];
    out.push(("mse_loss", check_op(&ins, rng, |t, v| t.mse_loss(v[0], v[1]))?));
    // Margin large enough that every row is inside the hinge.
    let ins = [r(rng, &[3, 4]), r(rng, &[3, 4]), r(rng, &[3, 4])];
    out.push(("triplet_loss", check_op(&ins, rng, |t, v| t.triplet_loss(v[0], v[1], v[2], 10.0))?));
    out.push(("l2_normalize", check_op(&ins[..1], rng, |t, v| t.l2_normalize(v[0]))?));
    out.push(("sum", check_op(&ins[..1], rng, |t, v| t.sum(v[0]))?));
    out.push(("mean", check_op(&ins[..1], rng, |t, v| t.mean(v[0]))?));
    Ok(out)
}

//! Reverse-mode automatic differentiation over the fixed op set.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Ops append
//! nodes in topological order; [`Tape::backward`] walks them in reverse and
//! accumulates adjoints into each node's gradient buffer, so fan-out sums
//! contributions exactly once per use.

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<E> {
    /// Input node; a leaf participates in gradients, a constant never does.
    Input,
    Conv1d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize },
    ConvTranspose1d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    Affine { input: Var, weight: Var, bias: Option<Var> },
    Relu { input: Var },
    Reshape { input: Var },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: E },
    Mse { pred: Var, target: Var },
}

#[derive(Debug)]
struct Node<E> {
    op: Op<E>,
    value: Tensor<E>,
}

#[derive(Debug, Default)]
pub struct Tape<E> {
    nodes: Vec<Node<E>>,
    backward_run: bool,
}

impl<E: Real> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_run: false }
    }

    /// Registers a differentiable input; its gradient is available after
    /// `backward`.
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(Op::Input, value.with_requires_grad(true))
    }

    /// Registers a non-differentiable input (data batches, stop-gradient
    /// targets). No gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor<E>) -> Var {
        self.push(Op::Input, value.with_requires_grad(false))
    }

    pub fn value(&self, var: Var) -> &Tensor<E> {
        &self.nodes[var.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. `var`, if it was computed.
    pub fn grad(&self, var: Var) -> Option<&[E]> {
        self.nodes[var.0].value.grad()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<E>, value: Tensor<E>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn record(&mut self, op: Op<E>, out: Tensor<E>, inputs: &[Var]) -> Var {
        let requires = self.any_requires_grad(inputs);
        self.push(op, out.with_requires_grad(requires))
    }

    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv1d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.record(Op::Conv1d { input, weight, bias, stride, padding }, out, &ins))
    }

    pub fn conv_transpose1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let out = ops::conv_transpose1d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
            output_padding,
        )?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.record(
            Op::ConvTranspose1d { input, weight, bias, stride, padding, output_padding },
            out,
            &ins,
        ))
    }

    pub fn affine(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = ops::affine_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let mut ins = vec![input, weight];
        ins.extend(bias);
        Ok(self.record(Op::Affine { input, weight, bias }, out, &ins))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu_forward(self.value(input));
        self.record(Op::Relu { input }, out, &[input])
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(input).clone().reshaped(shape)?;
        Ok(self.record(Op::Reshape { input }, out, &[input]))
    }

    /// Flattens [batch, ...] to [batch, rest].
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        if shape.is_empty() {
            return Err(Error::dim("flatten requires a batched tensor".to_string()));
        }
        let batch = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, vec![batch, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!(
                "add shapes differ: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.record(Op::Add { a, b }, out, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: E) -> Var {
        let t = self.value(input);
        let data = t.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.record(Op::Scale { input, factor }, out, &[input])
    }

    /// Scalar mean squared error over all elements of `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let value = ops::mse_value(self.value(pred), self.value(target))?;
        Ok(self.record(Op::Mse { pred, target }, Tensor::scalar(value), &[pred, target]))
    }

    /// Populates gradients of `loss` w.r.t. every differentiable node.
    ///
    /// `loss` must be a scalar recorded on this tape, and a second call
    /// without [`Tape::reset_grads`] in between is a contract error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_run {
            return Err(Error::contract(
                "backward already run on this tape; call reset_grads first".to_string(),
            ));
        }
        let loss_node = &self.nodes[loss.0].value;
        if !loss_node.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.shape()
            )));
        }
        self.backward_run = true;
        self.nodes[loss.0].value.accumulate_grad(&[E::one()])?;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            let Some(dy) = self.nodes[idx].value.grad().map(|g| g.to_vec()) else {
                continue;
            };
            // Ops only reference earlier nodes, so split at idx to borrow the
            // current node and its inputs simultaneously.
            let (earlier, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            match node.op {
                Op::Input => {}
                Op::Conv1d { input, weight, bias, stride, padding } => {
                    let (dx, dw, db) = ops::conv1d_backward(
                        &earlier[input.0].value,
                        &earlier[weight.0].value,
                        bias.is_some(),
                        stride,
                        padding,
                        &dy,
                    )?;
                    accumulate(earlier, input, dx.data())?;
                    accumulate(earlier, weight, dw.data())?;
                    if let (Some(b), Some(db)) = (bias, db) {
                        accumulate(earlier, b, db.data())?;
                    }
                }
                Op::ConvTranspose1d { input, weight, bias, stride, padding, output_padding } => {
                    let (dx, dw, db) = ops::conv_transpose1d_backward(
                        &earlier[input.0].value,
                        &earlier[weight.0].value,
                        bias.is_some(),
                        stride,
                        padding,
                        output_padding,
                        &dy,
                    )?;
                    accumulate(earlier, input, dx.data())?;
                    accumulate(earlier, weight, dw.data())?;
                    if let (Some(b), Some(db)) = (bias, db) {
                        accumulate(earlier, b, db.data())?;
                    }
                }
                Op::Affine { input, weight, bias } => {
                    let (dx, dw, db) = ops::affine_backward(
                        &earlier[input.0].value,
                        &earlier[weight.0].value,
                        bias.is_some(),
                        &dy,
                    )?;
                    accumulate(earlier, input, dx.data())?;
                    accumulate(earlier, weight, dw.data())?;
                    if let (Some(b), Some(db)) = (bias, db) {
                        accumulate(earlier, b, db.data())?;
                    }
                }
                Op::Relu { input } => {
                    let dx = ops::relu_backward(&earlier[input.0].value, &dy);
                    accumulate(earlier, input, &dx)?;
                }
                Op::Reshape { input } => {
                    accumulate(earlier, input, &dy)?;
                }
                Op::Add { a, b } => {
                    accumulate(earlier, a, &dy)?;
                    accumulate(earlier, b, &dy)?;
                }
                Op::Scale { input, factor } => {
                    let dx: Vec<E> = dy.iter().map(|&g| g * factor).collect();
                    accumulate(earlier, input, &dx)?;
                }
                Op::Mse { pred, target } => {
                    let (dp, dt) =
                        ops::mse_backward(&earlier[pred.0].value, &earlier[target.0].value, dy[0]);
                    accumulate(earlier, pred, &dp)?;
                    accumulate(earlier, target, &dt)?;
                }
            }
        }
        Ok(())
    }

    /// Clears every gradient buffer so a fresh `backward` may run.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.backward_run = false;
    }
}

fn accumulate<E: Real>(nodes: &mut [Node<E>], var: Var, delta: &[E]) -> Result<()> {
    let t = &mut nodes[var.0].value;
    if t.requires_grad() {
        t.accumulate_grad(delta)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_differentiated_quadratic() {
        // loss = mean((w * x - y)^2) with w = 2, x = 3, y = 1:
        // d loss / d w = 2 (w x - y) x = 30.
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::new(vec![1, 1], vec![2.0f64]).unwrap());
        let x = tape.constant(Tensor::new(vec![1, 1], vec![3.0f64]).unwrap());
        let y = tape.constant(Tensor::new(vec![1, 1], vec![1.0f64]).unwrap());
        let pred = tape.affine(x, w, None).unwrap();
        let loss = tape.mse(pred, y).unwrap();
        assert_eq!(tape.value(loss).scalar_value().unwrap(), 25.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[30.0]);
        // x and y are constants: no gradient buffers for them.
        assert!(tape.grad(x).is_none());
        assert!(tape.grad(y).is_none());
    }

    #[test]
    fn loss_independent_of_leaf_leaves_zero_grad() {
        let mut tape = Tape::new();
        let unused = tape.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
        let a = tape.leaf(Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap());
        let t = tape.constant(Tensor::zeros(vec![2]));
        let loss = tape.mse(a, t).unwrap();
        tape.backward(loss).unwrap();
        // The unused leaf got no contribution: grad is either absent or zero.
        assert!(tape.grad(unused).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
        assert!(tape.grad(a).is_some());
    }

    #[test]
    fn relu_blocks_gradient_in_dead_region() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![-5.0f64, 2.0]).unwrap());
        let r = tape.relu(x);
        let t = tape.constant(Tensor::zeros(vec![2]));
        let loss = tape.mse(r, t).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g[1] != 0.0);
    }

    #[test]
    fn backward_on_non_scalar_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0f64, 2.0]).unwrap());
        let y = tape.scale(x, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn second_backward_without_reset_is_a_contract_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![2.0f64]).unwrap());
        let t = tape.constant(Tensor::zeros(vec![1]));
        let loss = tape.mse(x, t).unwrap();
        tape.backward(loss).unwrap();
        assert!(matches!(tape.backward(loss), Err(Error::Contract(_))));
        tape.reset_grads();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[4.0]);
    }

    #[test]
    fn fanout_accumulates_both_contributions() {
        // y = x*2 + relu(x) at x = 3: y = 9, loss = y^2 -> dy = 2y = 18,
        // dx = 18 * (2 + 1) = 54.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![3.0f64]).unwrap());
        let two_x = tape.scale(x, 2.0);
        let r = tape.relu(x);
        let y = tape.add(two_x, r).unwrap();
        let t = tape.constant(Tensor::zeros(vec![1]));
        let loss = tape.mse(y, t).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[54.0]);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let build = || {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::new(vec![1, 2, 12], (0..24).map(|i| (i as f32 * 0.7).sin()).collect())
                    .unwrap(),
            );
            let w = tape.leaf(
                Tensor::new(vec![3, 2, 3], (0..18).map(|i| (i as f32 * 0.3).cos()).collect())
                    .unwrap(),
            );
            let c = tape.conv1d(x, w, None, 2, 1).unwrap();
            let f = tape.flatten(c).unwrap();
            let t = tape.constant(Tensor::zeros(vec![1, 18]));
            let loss = tape.mse(f, t).unwrap();
            tape.backward(loss).unwrap();
            (tape.grad(x).unwrap().to_vec(), tape.grad(w).unwrap().to_vec())
        };
        let (gx1, gw1) = build();
        let (gx2, gw2) = build();
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }

    #[test]
    fn composite_conv_affine_gradient_matches_finite_difference() {
        let xs: Vec<f64> = (0..36).map(|i| ((i * 7 + 3) as f64 * 0.11).sin()).collect();
        let ws: Vec<f64> = (0..24).map(|i| ((i * 5 + 1) as f64 * 0.17).cos()).collect();
        // Conv output is [2, 4, 5] (len 5 = floor((9 + 2 - 3)/2) + 1), so the
        // flattened width feeding the affine layer is 20.
        let aws: Vec<f64> = (0..40).map(|i| ((i * 3 + 2) as f64 * 0.23).sin()).collect();

        let run = |xs: &[f64], ws: &[f64], aws: &[f64], grads: bool| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let x = tape.constant(Tensor::new(vec![2, 2, 9], xs.to_vec()).unwrap());
            let w = tape.leaf(Tensor::new(vec![4, 2, 3], ws.to_vec()).unwrap());
            let aw = tape.leaf(Tensor::new(vec![2, 20], aws.to_vec()).unwrap());
            let c = tape.conv1d(x, w, None, 2, 1).unwrap();
            let r = tape.relu(c);
            let f = tape.flatten(r).unwrap();
            let a = tape.affine(f, aw, None).unwrap();
            let t = tape.constant(Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.9, 0.1]).unwrap());
            let loss = tape.mse(a, t).unwrap();
            let value = tape.value(loss).scalar_value().unwrap();
            if grads {
                tape.backward(loss).unwrap();
                (value, tape.grad(w).unwrap().to_vec())
            } else {
                (value, Vec::new())
            }
        };

        let (_, gw) = run(&xs, &ws, &aws, true);
        let h = 1e-6;
        for idx in [0usize, 5, 13, 23] {
            let mut plus = ws.clone();
            plus[idx] += h;
            let mut minus = ws.clone();
            minus[idx] -= h;
            let fd = (run(&xs, &plus, &aws, false).0 - run(&xs, &minus, &aws, false).0) / (2.0 * h);
            let denom = gw[idx].abs().max(fd.abs()).max(1e-8);
            assert!((fd - gw[idx]).abs() / denom < 1e-6, "idx {idx}: {fd} vs {}", gw[idx]);
        }
    }
}

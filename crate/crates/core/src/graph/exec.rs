//! Whole-network forward and backward execution.

use crate::error::{Error, Result};
use crate::layers::{
    conv2d_backward_impl, conv2d_forward, fc_backward, fc_forward, relu_backward, relu_in_place, LayerParams,
};
use crate::tensor::{concat_channels, Element, Tensor};

use super::params::ParamStore;
use super::spec::{deep_name, ff_name, NetworkSpec, HEAD_NAMES};

/// Activations of one stage, all post-ReLU. `b2c1` is absent in the ablation
/// network, where `s2` is `s2c3` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace<T = f32> {
    pub s1: Tensor<T>,
    pub s2c1: Tensor<T>,
    pub s2c2: Tensor<T>,
    pub s2c3: Tensor<T>,
    pub b2c1: Option<Tensor<T>>,
    pub s2: Tensor<T>,
}

/// Everything backward needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T = f32> {
    pub stages: Vec<StageTrace<T>>,
    /// Post-ReLU outputs of FC 1 and FC 2.
    pub hidden: [Tensor<T>; 2],
}

/// A deliberate backward-pass defect, used to check that gradient checking
/// notices single-layer errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negate every gradient produced by the second deep conv of stage 1.
    ConvSign,
    /// Negate every gradient produced by FC 2.
    FcSign,
    /// Negate the gradient through the ReLU after the first deep conv of stage 1.
    ReluSign,
    /// Negate the fast-forward half of stage 1's concat adjoint.
    ConcatSign,
}

fn conv_relu<T: Element>(x: &Tensor<T>, spec: &crate::layers::ConvSpec, p: &LayerParams<T>) -> Result<Tensor<T>> {
    let mut y = conv2d_forward(x, spec, p)?;
    relu_in_place(&mut y);
    Ok(y)
}

/// Runs the network on `x`. With `capture`, returns every intermediate
/// activation needed by [`backward`].
pub fn forward<T: Element>(
    spec: &NetworkSpec,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    capture: bool,
) -> Result<(Tensor<T>, Option<ForwardTrace<T>>)> {
    let expected = spec.input_shape().batch(x.shape().n);
    if x.shape() != expected {
        return Err(Error::Shape(format!("network input {} != expected {expected}", x.shape())));
    }
    let mut traces = Vec::new();
    let mut s1 = x.clone();
    for (i, st) in spec.stages.iter().enumerate() {
        let s2c1 = conv_relu(&s1, &st.deep[0], params.get(&deep_name(i, 0))?)?;
        let s2c2 = conv_relu(&s2c1, &st.deep[1], params.get(&deep_name(i, 1))?)?;
        let s2c3 = conv_relu(&s2c2, &st.deep[2], params.get(&deep_name(i, 2))?)?;
        let b2c1 = match &st.ff {
            Some(ff) => Some(conv_relu(&s1, ff, params.get(&ff_name(i))?)?),
            None => None,
        };
        let s2 = match &b2c1 {
            Some(b) => concat_channels(&s2c3, b)?,
            None => s2c3.clone(),
        };
        if capture {
            traces.push(StageTrace { s1, s2c1, s2c2, s2c3, b2c1, s2: s2.clone() });
        }
        s1 = s2;
    }
    let mut h1 = fc_forward(&s1, params.get(HEAD_NAMES[0])?)?;
    relu_in_place(&mut h1);
    let mut h2 = fc_forward(&h1, params.get(HEAD_NAMES[1])?)?;
    relu_in_place(&mut h2);
    let logits = fc_forward(&h2, params.get(HEAD_NAMES[2])?)?;
    let trace = capture.then_some(ForwardTrace { stages: traces, hidden: [h1, h2] });
    Ok((logits, trace))
}

/// Reverse traversal of the stage graph. Fills every parameter gradient in
/// `params`.
pub fn backward<T: Element>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    trace: Option<&ForwardTrace<T>>,
    grad_logits: &Tensor<T>,
) -> Result<()> {
    backward_with_fault(spec, params, trace, grad_logits, Fault::None)
}

fn negate<T: Element>(t: &mut Tensor<T>) {
    t.scale(-T::one());
}

#[doc(hidden)]
pub fn backward_with_fault<T: Element>(
    spec: &NetworkSpec,
    params: &mut ParamStore<T>,
    trace: Option<&ForwardTrace<T>>,
    grad_logits: &Tensor<T>,
    fault: Fault,
) -> Result<()> {
    let trace = trace.ok_or(Error::MissingTraces)?;
    if trace.stages.len() != spec.stages.len() {
        return Err(Error::MissingTraces);
    }
    let last = &trace.stages.last().ok_or(Error::MissingTraces)?.s2;
    let [h1, h2] = &trace.hidden;

    // Head.
    let inputs = [last, h1, h2];
    let mut g = grad_logits.clone();
    for k in (0..3).rev() {
        let name = HEAD_NAMES[k];
        let mut grads = fc_backward(inputs[k], params.get(name)?, &g)?;
        if fault == Fault::FcSign && k == 1 {
            negate(&mut grads.grad_in);
            negate(&mut grads.grad_w);
            negate(&mut grads.grad_b);
        }
        params.set_grad(name, LayerParams { weights: grads.grad_w, bias: Some(grads.grad_b) })?;
        g = grads.grad_in;
        if k > 0 {
            g = relu_backward(inputs[k], &g)?;
        }
    }
    let mut g = g.reshape(last.shape())?;

    // Stages, last to first.
    for (i, (st, tr)) in spec.stages.iter().zip(&trace.stages).enumerate().rev() {
        let need_input = i > 0;
        let (mut g_deep, g_ff) = match &st.ff {
            Some(_) => {
                let mut g_ff = g.slice_channels(st.branch_width, st.out_channels())?;
                if fault == Fault::ConcatSign && i == 0 {
                    negate(&mut g_ff);
                }
                (g.slice_channels(0, st.branch_width)?, Some(g_ff))
            }
            None => (g, None),
        };

        let inputs = [&tr.s1, &tr.s2c1, &tr.s2c2];
        let outputs = [&tr.s2c1, &tr.s2c2, &tr.s2c3];
        for j in (0..3).rev() {
            let name = deep_name(i, j);
            let mut gz = relu_backward(outputs[j], &g_deep)?;
            if fault == Fault::ReluSign && i == 0 && j == 0 {
                negate(&mut gz);
            }
            let mut grads = conv2d_backward_impl(inputs[j], &st.deep[j], params.get(&name)?, &gz, j > 0 || need_input)?;
            if fault == Fault::ConvSign && i == 0 && j == 1 {
                if let Some(t) = grads.grad_in.as_mut() {
                    negate(t);
                }
                negate(&mut grads.grad_w);
                if let Some(t) = grads.grad_b.as_mut() {
                    negate(t);
                }
            }
            params.set_grad(&name, LayerParams { weights: grads.grad_w, bias: grads.grad_b })?;
            if let Some(gi) = grads.grad_in {
                g_deep = gi;
            }
        }

        if let (Some(ff), Some(g_ff), Some(b2c1)) = (&st.ff, g_ff, &tr.b2c1) {
            let name = ff_name(i);
            let gz = relu_backward(b2c1, &g_ff)?;
            let grads = conv2d_backward_impl(&tr.s1, ff, params.get(&name)?, &gz, need_input)?;
            params.set_grad(&name, LayerParams { weights: grads.grad_w, bias: grads.grad_b })?;
            if let Some(gi) = grads.grad_in {
                // Both branches read S1, so their input gradients add.
                g_deep.add_assign(&gi)?;
            }
        }
        g = g_deep;
    }
    Ok(())
}

//! The self-shortcut block: `Y = X + act(BN(adder(X)))`.
//!
//! A bare adder layer cannot represent the identity map (its outputs are
//! never positive), so the block adds its own input back; with the
//! batch-norm scale at zero the block *is* the identity, which is the
//! starting point every layer is initialized to.

use super::{act, adder, norm, AdderLayerParams, PowerActParams};
use crate::tensor::{Tensor, TensorError};

/// Applies one shortcut block out of tape; in training mode the running
/// batch-norm statistics are updated in place.
pub fn self_shortcut_block(
    x: &Tensor,
    params: &mut AdderLayerParams,
    act_params: &PowerActParams,
    training: bool,
) -> Result<Tensor, TensorError> {
    if params.c_in() != params.c_out() {
        return Err(TensorError::Param(format!(
            "self-shortcut needs matching channel counts, got {} -> {}",
            params.c_in(),
            params.c_out()
        )));
    }
    if params.stride != 1 {
        return Err(TensorError::Param(
            "self-shortcut requires stride 1".into(),
        ));
    }
    if params.kernel() % 2 == 0 || params.padding != (params.kernel() - 1) / 2 {
        return Err(TensorError::Param(
            "self-shortcut requires \"same\" padding with an odd kernel".into(),
        ));
    }
    params.validate()?;
    let z = adder::correlate(x, &params.w, params.stride, params.padding)?;
    let normed = if training {
        let (y, stats) = norm::forward_train(&z, &params.bn_gamma, &params.bn_beta)?;
        norm::update_running(
            &mut params.bn_running_mean,
            &mut params.bn_running_var,
            &stats,
        );
        y
    } else {
        norm::forward_eval(
            &z,
            &params.bn_gamma,
            &params.bn_beta,
            &params.bn_running_mean,
            &params.bn_running_var,
        )?
    };
    let activated = act::power_relu(&normed, act_params.alpha())?;
    x.add(&activated)
}

/// Spec-level batch-norm entry point over a layer's stored state.
pub fn batch_norm(
    x: &Tensor,
    params: &mut AdderLayerParams,
    training: bool,
) -> Result<Tensor, TensorError> {
    if training {
        let (y, stats) = norm::forward_train(x, &params.bn_gamma, &params.bn_beta)?;
        norm::update_running(
            &mut params.bn_running_mean,
            &mut params.bn_running_var,
            &stats,
        );
        Ok(y)
    } else {
        norm::forward_eval(
            x,
            &params.bn_gamma,
            &params.bn_beta,
            &params.bn_running_mean,
            &params.bn_running_var,
        )
    }
}

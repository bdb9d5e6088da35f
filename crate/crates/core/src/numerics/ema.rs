//! Exponential-moving-average parameter blending for the target encoder.

use crate::error::{Error, Result};
use crate::numerics::params::ModelParams;
use crate::numerics::real::Real;

/// `target <- alpha * target + (1 - alpha) * online`, elementwise.
///
/// The two collections must hold exactly the same parameter names with
/// matching shapes.
pub fn ema_update<E: Real>(
    target: &mut ModelParams<E>,
    online: &ModelParams<E>,
    alpha: E,
) -> Result<()> {
    if alpha < E::zero() || alpha > E::one() {
        return Err(Error::contract(format!("ema alpha must be in [0, 1], got {alpha}")));
    }
    if target.len() != online.len() {
        return Err(Error::contract(format!(
            "ema parameter sets differ in size: {} vs {}",
            target.len(),
            online.len()
        )));
    }
    let one_minus = E::one() - alpha;
    for (name, t) in target.iter_mut() {
        let o = online
            .get(name)
            .ok_or_else(|| Error::contract(format!("ema online set is missing {name:?}")))?;
        if o.shape() != t.shape() {
            return Err(Error::contract(format!(
                "ema shape mismatch for {name:?}: {:?} vs {:?}",
                t.shape(),
                o.shape()
            )));
        }
        for (tv, &ov) in t.data_mut().iter_mut().zip(o.data()) {
            *tv = alpha * *tv + one_minus * ov;
        }
    }
    Ok(())
}

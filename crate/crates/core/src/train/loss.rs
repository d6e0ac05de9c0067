use super::LossKind;
use crate::autograd::Var;
use crate::error::Result;

pub const CHARBONNIER_EPS: f64 = 1e-3;

/// `mean(sqrt((pred - target)^2 + eps^2))`.
pub fn charbonnier_loss<'t>(pred: Var<'t>, target: Var<'t>, eps: f64) -> Result<Var<'t>> {
    Ok(pred
        .sub(target)?
        .square()
        .scalar_add(eps * eps)
        .sqrt()?
        .mean_all())
}

pub fn l1_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    Ok(pred.sub(target)?.abs().mean_all())
}

pub fn l2_loss<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    Ok(pred.sub(target)?.square().mean_all())
}

pub fn loss_value<'t>(kind: LossKind, pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    match kind {
        LossKind::Charbonnier => charbonnier_loss(pred, target, CHARBONNIER_EPS),
        LossKind::L1 => l1_loss(pred, target),
        LossKind::L2 => l2_loss(pred, target),
    }
}

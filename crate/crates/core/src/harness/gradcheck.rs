use super::synthetic::Dataset;
use crate::error::{Error, Result};
use crate::lgf::LgfModel;
use crate::numcore::{grad_check, GradCheckConfig, GradCheckReport, Graph};
use crate::objective::{multi_task_loss_graph_with_preds, predictions, LossConfig, PolarityMap};

/// Checks the gradient of the multi-task loss over `batch` with respect to every
/// model parameter against central differences.
///
/// Branch predictions, and with them the polarity penalties, are fixed at the
/// unperturbed parameters so a finite-difference step cannot flip an argmax.
pub fn model_grad_check(
    model: &LgfModel<f64>,
    batch: &Dataset<f64>,
    loss: &LossConfig,
    polarity: &PolarityMap,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient check batch"));
    }
    let inputs: Vec<_> = batch.samples.iter().map(|s| (&s.audio, &s.visual)).collect();
    let labels = batch.labels();
    let mut g = Graph::new();
    let base = model.forward_batch(&mut g, &inputs)?;
    let preds = [
        predictions(g.value(base.overall))?,
        predictions(g.value(base.visual))?,
        predictions(g.value(base.audio))?,
    ];
    let mut store = model.store().clone();
    grad_check(
        &mut store,
        None,
        |st, g| {
            let out = model.forward_batch_with(st, g, &inputs)?;
            let logits = [out.overall, out.visual, out.audio];
            let pinned = [preds[0].as_slice(), &preds[1], &preds[2]];
            Ok(multi_task_loss_graph_with_preds(g, logits, &labels, pinned, loss, polarity)?.0)
        },
        cfg,
    )
}

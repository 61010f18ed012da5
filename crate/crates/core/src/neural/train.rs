use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::{adam_step, loss_and_grad, AdamState, BoundaryTerms, MlpModel, NeuralError, LossSpec};
use crate::rng::{stream, tag};

/// Runs `epochs` passes of shuffled mini-batch Adam and returns the mean batch loss of each epoch.
///
/// `boundary(b)` supplies the boundary rows for the `b`-th batch of this call.
pub fn train_epochs<F>(
    model: &mut MlpModel,
    adam: &mut AdamState,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    spec: &LossSpec,
    epochs: usize,
    seed: u64,
    mut boundary: F,
) -> Result<Vec<f64>, NeuralError>
where
    F: FnMut(usize) -> Option<BoundaryTerms>,
{
    spec.validate()?;
    if x.nrows() == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    if x.nrows() != y.len() {
        return Err(NeuralError::LabelMismatch { rows: x.nrows(), labels: y.len() });
    }
    let mut rng = stream(seed, &[tag::SHUFFLE]);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut trace = Vec::with_capacity(epochs);
    let mut batch_no = 0;
    for _ in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(spec.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let terms = boundary(batch_no);
            batch_no += 1;
            let (parts, grads) = loss_and_grad(model, xb.view(), yb.view(), terms.as_ref(), spec)?;
            adam_step(adam, model, &grads)?;
            sum += parts.total();
            count += 1;
        }
        trace.push(sum / count as f64);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{init_mlp_with, AdamConfig};
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn linear_data() -> (Array2<f64>, Array1<f64>) {
        let mut rng = stream(3, &[0]);
        let x = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        let y = x.column(0).mapv(|v| 0.3 * v);
        (x, y)
    }

    #[test]
    fn zero_epochs_is_noop() {
        let (x, y) = linear_data();
        let mut m = init_mlp_with(2, &[8], 1).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let tr = train_epochs(&mut m, &mut st, x.view(), y.view(), &LossSpec::default(), 0, 1, |_| None).unwrap();
        assert!(tr.is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn learns_linear_target() {
        let (x, y) = linear_data();
        let mut m = init_mlp_with(2, &[16, 16], 4).unwrap();
        let mut st = AdamState::new(&m, AdamConfig { step_size: 1e-2, ..AdamConfig::default() });
        let spec = LossSpec { lambda: 0.0, l2: 0.0, batch_size: 16 };
        let tr = train_epochs(&mut m, &mut st, x.view(), y.view(), &spec, 50, 9, |_| None).unwrap();
        assert_eq!(tr.len(), 50);
        let pred = m.forward_batch(x.view()).unwrap();
        let mae = (&pred - &y).mapv(f64::abs).mean().unwrap();
        assert!(mae <= 0.02, "mae {mae}");
        assert!(tr[49] < tr[0]);
    }

    #[test]
    fn reproducible_to_the_bit() {
        let (x, y) = linear_data();
        let run = || {
            let mut m = init_mlp_with(2, &[8, 8], 2).unwrap();
            let mut st = AdamState::new(&m, AdamConfig::default());
            let tr = train_epochs(&mut m, &mut st, x.view(), y.view(), &LossSpec::default(), 3, 5, |_| None).unwrap();
            (m, tr)
        };
        let (ma, ta) = run();
        let (mb, tb) = run();
        assert_eq!(ma, mb);
        assert_eq!(ta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn boundary_provider_sees_every_batch() {
        let (x, y) = linear_data();
        let mut m = init_mlp_with(2, &[4], 2).unwrap();
        let mut st = AdamState::new(&m, AdamConfig::default());
        let mut seen = Vec::new();
        let spec = LossSpec { batch_size: 64, ..LossSpec::default() };
        train_epochs(&mut m, &mut st, x.view(), y.view(), &spec, 2, 1, |b| {
            seen.push(b);
            None
        })
        .unwrap();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }
}

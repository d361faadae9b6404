use crate::numerics::Matrix;
use crate::rnn::Trajectory;
use crate::tasks::Trial;
use crate::{Error, Result};

/// Masked mean-squared error `Σ mask·(ŷ − y)² / Σ mask` and its derivative
/// with respect to the outputs (zero off the mask).
pub fn mse_loss(traj: &Trajectory, trial: &Trial) -> Result<(f64, Matrix)> {
    let outputs = &traj.outputs;
    if outputs.shape() != trial.targets.shape() || trial.mask.shape() != trial.targets.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?}, targets {:?}, mask {:?}",
            outputs.shape(),
            trial.targets.shape(),
            trial.mask.shape()
        )));
    }
    let count: f64 = trial.mask.data().iter().sum();
    if count <= 0.0 {
        return Err(Error::DegenerateTrial);
    }
    let mut grad = Matrix::zeros(outputs.rows(), outputs.cols());
    let mut loss = 0.0;
    for (((g, &y_hat), &y), &m) in grad
        .data_mut()
        .iter_mut()
        .zip(outputs.data())
        .zip(trial.targets.data())
        .zip(trial.mask.data())
    {
        if m == 0.0 {
            continue;
        }
        let e = y_hat - y;
        loss += m * e * e;
        *g = 2.0 * m * e / count;
    }
    Ok((loss / count, grad))
}

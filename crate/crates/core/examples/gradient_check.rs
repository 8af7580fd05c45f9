//! Analytic LoRA gradients and the cross Hessian-vector product against
//! central finite differences.

use fedlora::models::{cross_hvp_fd, grad_x_fd, grad_y_fd, BilevelTask, LoraTask, RegressionData, FD_GRAD_STEP, FD_HVP_STEP};
use fedlora::models::lora::DataRole;
use fedlora::numerics::{gaussian_matrix, RngStream};

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12)
}

pub fn run_example() -> fedlora::Result<()> {
    let mut rng = RngStream::new(7, 0);
    let (samples, m, n) = (20, 6, 5);
    let data = RegressionData::new(
        gaussian_matrix(samples, m, 0.0, 1.0, &mut rng)?,
        gaussian_matrix(samples, n, 0.0, 1.0, &mut rng)?,
        DataRole::Train,
    )?;
    let w0 = gaussian_matrix(m, n, 0.0, 0.3, &mut rng)?;
    let task = LoraTask::new(&w0, &data, 3, 2);
    let mut draw = |len: usize| (0..len).map(|_| 0.5 * rng.standard_normal()).collect::<Vec<_>>();
    let (x, y, v) = (draw(task.upper_dim()), draw(task.lower_dim()), draw(task.lower_dim()));
    let gx = rel_err(&task.grad_x(&x, &y)?, &grad_x_fd(&task, &x, &y, FD_GRAD_STEP)?);
    let gy = rel_err(&task.grad_y(&x, &y)?, &grad_y_fd(&task, &x, &y, FD_GRAD_STEP)?);
    let hvp = rel_err(&task.cross_hvp(&x, &y, &v)?, &cross_hvp_fd(&task, &x, &y, &v, FD_HVP_STEP)?);
    println!("relative error: grad_x {gx:.2e}, grad_y {gy:.2e}, cross HVP {hvp:.2e}");
    Ok(())
}

fn main() -> fedlora::Result<()> {
    run_example()
}

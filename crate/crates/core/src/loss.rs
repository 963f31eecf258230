use crate::error::{Error, Result};
use crate::tensor::Tensor4;

fn check_labels(logits: &Tensor4, labels: &[usize]) -> Result<()> {
    if logits.n() != labels.len() {
        return Err(Error::shape(
            "cross entropy",
            format!("{} logit rows for {} labels", logits.n(), labels.len()),
        ));
    }
    if logits.n() == 0 {
        return Err(Error::Empty("logits"));
    }
    let classes = logits.c();
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::Label { label, classes }),
        None => Ok(()),
    }
}

/// Softmax minus one-hot for each row, unscaled (the per-sample gradient).
pub fn softmax_minus_onehot(logits: &Tensor4, labels: &[usize]) -> Result<(Vec<f64>, Tensor4)> {
    check_labels(logits, labels)?;
    let classes = logits.c();
    let mut grad = Tensor4::zeros(logits.shape());
    let mut losses = Vec::with_capacity(labels.len());
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        losses.push(log_z - row[label]);
        let g = &mut grad.data_mut()[i * classes..(i + 1) * classes];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp();
        }
        g[label] -= 1.0;
    }
    Ok((losses, grad))
}

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/n`.
pub fn cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let (losses, grad) = softmax_minus_onehot(logits, labels)?;
    let n = labels.len() as f64;
    Ok((losses.iter().sum::<f64>() / n, grad.scale(1.0 / n)))
}

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_label<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<()> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    Ok(())
}

/// `−log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<T> {
    check_label(logits, label)?;
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.data().iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    Ok(lse - logits.data()[label])
}

/// `softmax(logits) − onehot(label)`.
pub fn cross_entropy_backward<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<Tensor<T>> {
    check_label(logits, label)?;
    let mut d = logits.clone();
    crate::numerics::kernels::softmax_in_place(d.data_mut());
    d.data_mut()[label] -= T::one();
    Ok(d)
}

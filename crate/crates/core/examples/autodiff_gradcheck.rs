//! Reverse-mode gradients of a small two-layer network checked against finite differences.

use nodenas::tensor::{gradcheck, Tape, Tensor, TensorError};

fn main() -> Result<(), TensorError> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.7]])?;
    let w1 = Tensor::from_rows(&[vec![0.2, -0.4], vec![0.7, 0.1], vec![-0.3, 0.5]])?;
    let w2 = Tensor::from_rows(&[vec![1.0, -1.0, 0.5], vec![0.2, 0.4, -0.6]])?;

    let mut tape = Tape::new();
    let (xv, a, b) = (tape.constant(x.clone()), tape.param(w1.clone()), tape.param(w2.clone()));
    let h = tape.matmul(xv, a)?;
    let h = tape.tanh(h);
    let logits = tape.matmul(h, b)?;
    let logp = tape.log_softmax(logits);
    let loss = tape.sum_all(logp);
    let loss = tape.scale(loss, -1.0);
    let grads = tape.backward(loss)?;
    println!("loss {:.6}", tape.value(loss).item());
    println!("dL/dW1 {:?}", grads.get(a).map(|g| g.data().to_vec()));

    let err = gradcheck(
        |t, v| {
            let xv = t.constant(x.clone());
            let h = t.matmul(xv, v[0])?;
            let h = t.tanh(h);
            let logits = t.matmul(h, v[1])?;
            let logp = t.log_softmax(logits);
            let s = t.sum_all(logp);
            Ok(t.scale(s, -1.0))
        },
        &[w1, w2],
    )?;
    println!("max relative error vs central differences: {err:.2e}");
    Ok(())
}

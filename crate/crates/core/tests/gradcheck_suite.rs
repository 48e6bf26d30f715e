use dbdn::autograd::Op;
use dbdn::gradcheck::{check, run_checks, CHECKS, TOLERANCE};
use dbdn::ops::conv2d_transpose_backward;
use dbdn::Tensor;

/// Correct transposed-conv backward, with the weight gradient inflated by 1%.
fn skewed_transpose(op: &Op, inputs: &[&Tensor<f32>], dy: &Tensor<f32>) -> Option<Vec<Option<Vec<f32>>>> {
    let Op::ConvTranspose2d { stride, padding, .. } = *op else { return None };
    let g = conv2d_transpose_backward(inputs[0], inputs[1], stride, padding, dy, true).ok()?;
    let weight = g.weight.data().iter().map(|v| v * 1.01).collect();
    Some(vec![g.input.map(Tensor::into_data), Some(weight), Some(g.bias.into_data())])
}

/// ReLU backward that forgets to gate.
fn ungated_relu(op: &Op, _inputs: &[&Tensor<f32>], dy: &Tensor<f32>) -> Option<Vec<Option<Vec<f32>>>> {
    matches!(op, Op::Relu { .. }).then(|| vec![Some(dy.data().to_vec())])
}

#[test]
fn default_suite_passes() {
    let reports = run_checks(None, 0, None).unwrap();
    assert_eq!(reports.len(), CHECKS.len());
    for r in &reports {
        assert!(r.passed(), "{}: {:.3e}", r.name, r.max_rel_error);
        assert!(r.checked > 0, "{} compared nothing", r.name);
        assert!(r.max_rel_error < TOLERANCE);
    }
}

#[test]
fn single_op_filter() {
    let reports = run_checks(Some("conv2d_transpose"), 1, None).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].name, "conv2d_transpose");
    assert!(run_checks(Some("softmax"), 0, None).is_err());
}

#[test]
fn corrupted_transpose_backward_is_detected() {
    let report = check("conv2d_transpose", 0, Some(skewed_transpose)).unwrap();
    assert!(!report.passed(), "1% weight-gradient error slipped through: {:.3e}", report.max_rel_error);
    // The hook only touches its own op kind.
    assert!(check("conv2d", 0, Some(skewed_transpose)).unwrap().passed());
}

#[test]
fn corruption_propagates_to_the_network_check() {
    assert!(!check("network", 0, Some(skewed_transpose)).unwrap().passed());
    assert!(!check("relu", 0, Some(ungated_relu)).unwrap().passed());
}

use mcgan::tensor::inject_backward_fault;
use mcgan::verify::{gradient_cases, run, run_elementary_gradients, Suite, RANDOM_CASES};

#[test]
fn gradient_suite_passes() {
    let report = run(Suite::Gradients);
    assert!(report.ok(), "{report}\n{}", report.failures.join("\n"));
    assert_eq!(report.passed, gradient_cases().len());
}

#[test]
fn metric_suite_passes() {
    let report = run(Suite::Metrics);
    assert!(report.ok(), "{report}\n{}", report.failures.join("\n"));
    assert_eq!(report.passed, 5 + 5 * RANDOM_CASES);
}

#[test]
fn memory_suite_passes() {
    let report = run(Suite::Memory);
    assert!(report.ok(), "{report}\n{}", report.failures.join("\n"));
    assert_eq!(report.passed, 4 * RANDOM_CASES);
}

#[test]
fn every_injected_backward_fault_is_detected() {
    let ops = [
        "add", "sub", "mul", "scale", "offset", "matmul", "transpose", "outer", "interpolate", "tanh",
        "sigmoid", "relu", "leaky_relu", "ln", "abs", "softmax", "sum", "mean", "reshape", "concat", "slice",
        "gather", "conv_down", "conv_up", "batchnorm", "channel_affine", "dropout", "avg_pool",
    ];
    for op in ops {
        inject_backward_fault(Some(op));
        let report = run_elementary_gradients();
        inject_backward_fault(None);
        assert!(!report.ok(), "fault in `{op}` went unnoticed");
        assert!(
            report.failures.iter().any(|f| f.starts_with(&format!("{op}:"))),
            "fault in `{op}` not attributed to its case: {:?}",
            report.failures
        );
    }
    assert!(run_elementary_gradients().ok());
}

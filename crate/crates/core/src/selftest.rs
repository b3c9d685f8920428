//! Built-in health checks: gradient correctness, cost-table reproduction,
//! and masked/compact equivalence, each reported pass/fail.

use crate::error::Result;
use crate::flops::{self, FlopPolicy};
use crate::gradcheck::{gradient_check, CheckedParam};
use crate::model::{extract_compact, ModelSpec, ResNet};
use crate::ops;
use crate::prune::FilterMask;
use crate::rng;
use crate::tensor::Tensor;

/// Deliberate corruption used to demonstrate that a check catches failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    ConvBackward,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Fault> {
        match s {
            "conv-backward" => Some(Fault::ConvBackward),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name: name.to_string(), passed, detail }
}

fn random_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = rng::seeded(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
        .collect();
    Tensor::from_vec(shape, data).expect("matching shape")
}

fn conv_forward_check() -> CheckOutcome {
    // Horizontal-edge kernel over a 3x3 ramp; value worked out by hand.
    let input =
        Tensor::from_vec(&[1, 1, 3, 3], vec![0.0f64, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
    let weight =
        Tensor::from_vec(&[1, 1, 3, 3], vec![1.0f64, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0]).unwrap();
    match ops::conv2d_forward(&input, &weight, 1, 0) {
        Err(e) => outcome("conv2d-forward", false, e.to_string()),
        Ok(out) => {
            let got = out.data()[0];
            let pass = (got - (-8.0)).abs() < 1e-10;
            outcome("conv2d-forward", pass, format!("expected -8, got {got}"))
        }
    }
}

fn conv_backward_check(fault: Option<Fault>) -> CheckOutcome {
    let input = random_tensor(&[2, 2, 5, 5], 10, 1.0);
    let weight = random_tensor(&[3, 2, 3, 3], 11, 0.5);
    let target = random_tensor(&[2, 3 * 9], 12, 0.5);

    let params = vec![CheckedParam::new("weight", weight)];
    let report = gradient_check(
        &params,
        |vals| {
            let out = ops::conv2d_forward(&input, &vals[0], 1, 0).unwrap();
            let flat = out.clone().reshaped(&[2, 3 * 9]).unwrap();
            // Quadratic loss against a fixed target.
            let loss: f64 = flat
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| 0.5 * (a - b) * (a - b))
                .sum();
            let grad_flat: Vec<f64> =
                flat.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect();
            let grad_out = Tensor::from_vec(out.shape(), grad_flat).unwrap();
            let (_, mut gw) = ops::conv2d_backward(&grad_out, &input, &vals[0], 1, 0).unwrap();
            if fault == Some(Fault::ConvBackward) {
                let v = gw.data()[0];
                gw.data_mut()[0] = v + 0.05;
            }
            (loss, vec![gw])
        },
        1e-4,
        1e-4,
    );
    outcome(
        "conv2d-backward",
        report.passed(),
        format!("max relative error {:.3e}", report.max_rel_err()),
    )
}

fn batchnorm_backward_check() -> CheckOutcome {
    let input = random_tensor(&[2, 3, 4, 4], 20, 1.0);
    let gamma = random_tensor(&[3], 21, 1.0).map(|v| v + 1.5);
    let beta = random_tensor(&[3], 22, 0.5);
    let target = random_tensor(&[2 * 3 * 16], 23, 0.5);

    let params = vec![CheckedParam::new("gamma", gamma), CheckedParam::new("beta", beta)];
    let report = gradient_check(
        &params,
        |vals| {
            let mut rm = Tensor::zeros(&[3]);
            let mut rv = Tensor::filled(&[3], 1.0);
            let (out, cache) =
                ops::batchnorm2d_forward_train(&input, &vals[0], &vals[1], &mut rm, &mut rv, 0.1, 1e-5)
                    .unwrap();
            let loss: f64 = out
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| 0.5 * (a - b) * (a - b))
                .sum();
            let grad: Vec<f64> = out.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect();
            let grad_out = Tensor::from_vec(out.shape(), grad).unwrap();
            let (_, gg, gb) = ops::batchnorm2d_backward(&grad_out, &cache, &vals[0]).unwrap();
            (loss, vec![gg, gb])
        },
        1e-4,
        1e-4,
    );
    outcome(
        "batchnorm-backward",
        report.passed(),
        format!("max relative error {:.3e}", report.max_rel_err()),
    )
}

fn linear_backward_check() -> CheckOutcome {
    let input = random_tensor(&[4, 6], 30, 1.0);
    let weight = random_tensor(&[3, 6], 31, 0.5);
    let bias = random_tensor(&[3], 32, 0.5);
    let mut target = Tensor::zeros(&[4, 3]);
    for i in 0..4 {
        target.data_mut()[i * 3 + i % 3] = 1.0;
    }

    let params = vec![CheckedParam::new("weight", weight), CheckedParam::new("bias", bias)];
    let report = gradient_check(
        &params,
        |vals| {
            let out = ops::linear_forward(&input, &vals[0], &vals[1]).unwrap();
            let (loss, grad) = ops::softmax_cross_entropy(&out, &target).unwrap();
            let (_, gw, gb) = ops::linear_backward(&grad, &input, &vals[0]).unwrap();
            (loss, vec![gw, gb])
        },
        1e-4,
        1e-4,
    );
    outcome(
        "linear-backward",
        report.passed(),
        format!("max relative error {:.3e}", report.max_rel_err()),
    )
}

fn flops_table_check() -> CheckOutcome {
    let expect: [(usize, u64); 5] = [
        (20, 40_551_040),
        (32, 68_862_592),
        (44, 97_174_144),
        (56, 125_485_696),
        (110, 252_887_680),
    ];
    for (depth, macs) in expect {
        let spec = match ModelSpec::new(depth) {
            Ok(s) => s,
            Err(e) => return outcome("flops-dense-table", false, e.to_string()),
        };
        let report = match flops::model_flops(&spec, 1.0, FlopPolicy::Dense) {
            Ok(r) => r,
            Err(e) => return outcome("flops-dense-table", false, e.to_string()),
        };
        if report.total_macs() != macs {
            return outcome(
                "flops-dense-table",
                false,
                format!("depth {depth}: expected {macs} MACs, got {}", report.total_macs()),
            );
        }
    }
    outcome("flops-dense-table", true, "all five depths match".to_string())
}

fn masked_compact_check() -> CheckOutcome {
    use rand::Rng;
    let spec = ModelSpec::new(20).expect("valid depth");
    let mut model: ResNet<f32> = ResNet::build(spec, 99);
    let schedule = crate::prune::PruneSchedule::default();
    let mut rng = rng::seeded(7);
    let masks: Vec<FilterMask> = match crate::prune::apply_soft_prune(&mut model, &schedule, &mut rng) {
        Ok(m) => m,
        Err(e) => return outcome("masked-compact-equivalence", false, e.to_string()),
    };
    let extraction = match extract_compact(&model, &masks) {
        Ok(x) => x,
        Err(e) => return outcome("masked-compact-equivalence", false, e.to_string()),
    };
    let mut max_diff = 0.0f64;
    for seed in 0..4u64 {
        let mut in_rng = rng::seeded(1000 + seed);
        let data: Vec<f32> = (0..2 * 3 * 32 * 32).map(|_| in_rng.gen::<f32>() - 0.5).collect();
        let input = Tensor::from_vec(&[2, 3, 32, 32], data).expect("shape");
        let a = match model.forward_eval(&input) {
            Ok(t) => t,
            Err(e) => return outcome("masked-compact-equivalence", false, e.to_string()),
        };
        let b = match extraction.model.forward_eval(&input) {
            Ok(t) => t,
            Err(e) => return outcome("masked-compact-equivalence", false, e.to_string()),
        };
        max_diff = max_diff.max(a.max_abs_diff(&b).expect("same shape"));
    }
    outcome(
        "masked-compact-equivalence",
        max_diff < 1e-5,
        format!("max |logit difference| {max_diff:.3e}"),
    )
}

/// Run every check; `fault` deliberately corrupts one of them.
pub fn run_selftest(fault: Option<Fault>) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        conv_forward_check(),
        conv_backward_check(fault),
        batchnorm_backward_check(),
        linear_backward_check(),
        flops_table_check(),
        masked_compact_check(),
    ])
}

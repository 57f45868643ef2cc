//! Verify the reverse-mode gradients of a small ConvLSTM forecaster
//! against central finite differences.
//!
//! Run with: cargo run --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_forecast::autodiff::{finite_diff_gradient, rel_err, Tape};
use traffic_forecast::convlstm::S2SConfig;
use traffic_forecast::model::{AnyModel, ModelConfig, ModelParams};
use traffic_forecast::tensor::Tensor;

fn main() -> traffic_forecast::Result<()> {
    let mut config = S2SConfig::desk(3, 3, 2, 11);
    config.t_in = 3;
    config.horizon = 2;
    config.embed_channels = 4;
    config.hidden_channels = vec![4];
    let config = ModelConfig::ConvLstm(config);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut input = Tensor::zeros(&[3, 2, 3, 3]);
    let mut target = Tensor::zeros(&[2, 2, 3, 3]);
    for v in input.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in target.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }

    // reverse-mode gradients in one sweep
    let mut model = AnyModel::init(&config)?;
    let mut tape = Tape::new();
    let nodes = model.params().leaves(&mut tape);
    let loss = model.build_loss(&mut tape, &nodes, &input, &target, 0.0, &mut rng, false)?;
    let grads = tape.backward(loss)?;

    // the same loss as a plain function of the parameter values
    let base = model.params().as_map().clone();
    let mut f = |params: &std::collections::BTreeMap<String, Tensor>| {
        let mut m = AnyModel::init(&config)?;
        *m.params_mut() = ModelParams::from_map(params.clone());
        let mut tape = Tape::new();
        let nodes = m.params().leaves(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let loss = m.build_loss(&mut tape, &nodes, &input, &target, 0.0, &mut rng, false)?;
        tape.value(loss).scalar_value()
    };
    let numeric = finite_diff_gradient(&mut f, &base, 1e-4)?;

    let mut worst = 0.0_f64;
    let mut worst_name = String::new();
    for (name, node) in &nodes {
        let analytic = grads.get(*node);
        for (a, b) in analytic.data().iter().zip(numeric[name].data()) {
            let e = rel_err(*a, *b);
            if e > worst {
                worst = e;
                worst_name = name.clone();
            }
        }
    }
    println!(
        "checked {} parameters ({} values): max relative error {worst:.3e} (at {worst_name})",
        base.len(),
        base.values().map(Tensor::len).sum::<usize>()
    );
    assert!(worst < 1e-4, "gradient check failed");
    Ok(())
}

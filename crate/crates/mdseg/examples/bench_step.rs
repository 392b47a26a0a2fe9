//! Times desk-scale training steps (internal tuning aid).

use std::time::Instant;

use mdseg::data::{generate_dataset, synth_domain_specs, DomainData};
use mdseg::network::ArchConfig;
use mdseg::training::{train_one, SplitPlan, TrainConfig, TrainScheme};

fn main() {
    let size = (16, 64, 64);
    let data: Vec<DomainData> = (0..2)
        .map(|domain| DomainData {
            spec: synth_domain_specs(8)[domain].clone(),
            exams: generate_dataset(1, domain, 8, size).unwrap(),
        })
        .collect();
    let split = SplitPlan::leave_one_out(&[8, 8], 0).unwrap();

    let mut config = TrainConfig::new(TrainScheme::DslContrastive, ArchConfig::desk(), 1);
    config.epochs = 2;
    let start = Instant::now();
    let outcome = train_one(&config, &split, &data).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    // 2 epochs x 6 steps; validation each epoch
    println!("2 epochs: {elapsed:.1}s ({:.2}s/epoch)", elapsed / 2.0);
    println!(
        "epoch 1: ce {:.4} contrastive {:.4} val_dice {:.4}",
        outcome.units[0].trace[0].ce,
        outcome.units[0].trace[0].contrastive,
        outcome.units[0].trace[0].val_dice
    );
    println!("projected 30-epoch run: {:.1} min", elapsed / 2.0 * 30.0 / 60.0);
}

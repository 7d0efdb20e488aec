//! Fit a triplet-loss embedding head on phantom descriptors and compare
//! retrieval before and after.
//!
//! `cargo run --release -p cbir-core --example train_head [HEAD.bin]`

use cbir_core::descriptor::{describe, DescribeInput, DescriptorConfig};
use cbir_core::formats::save_head;
use cbir_core::metric::{train_head, EmbeddingHead, TrainConfig};
use cbir_core::phantom::{corpus, PatientLayout};
use cbir_core::retrieval::{build_index, evaluate_index, EvalSetting, IndexEntry};

fn map_at_10(head: &EmbeddingHead, rows: &[Vec<f64>], labels: &[String]) -> cbir_core::Result<f64> {
    let entries = rows
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (row, label))| {
            Ok(IndexEntry {
                id: format!("r{i}"),
                embedding: head.embed(row)?,
                patient_id: format!("P{}", i % 6),
                study_id: "S".into(),
                lesion_type: label.clone(),
            })
        })
        .collect::<cbir_core::Result<Vec<_>>>()?;
    Ok(evaluate_index(&build_index(entries)?, EvalSetting::AllPatients)?.map_at_10)
}

fn main() -> cbir_core::Result<()> {
    let cases = corpus(20, PatientLayout::Mixed(6), 5);
    let cfg = DescriptorConfig::default();
    let rows = cases
        .iter()
        .map(|c| Ok(describe(DescribeInput::Image(&c.image), &cfg)?.vector))
        .collect::<cbir_core::Result<Vec<_>>>()?;
    let labels: Vec<String> = cases.iter().map(|c| c.kind.label().to_string()).collect();

    let train = TrainConfig { iterations: 50, ..TrainConfig::default() };
    println!(
        "margin {} lr {} momentum {} iterations {}",
        train.margin, train.learning_rate, train.momentum, train.iterations
    );
    let report = train_head(&rows, &labels, &train)?;
    println!("{} triplets, {} updates", report.triplet_count, report.updates);
    for (i, loss) in report.loss_history.iter().enumerate().step_by(10) {
        println!("  iter {i:>3}  lr {:.5}  loss {loss:.5}", report.learning_rates[i]);
    }
    println!("loss {:.5} -> {:.5}", report.initial_loss, report.final_loss);

    let identity = EmbeddingHead::identity(rows[0].len());
    println!(
        "mAP@10 identity {:.3}, trained {:.3}",
        map_at_10(&identity, &rows, &labels)?,
        map_at_10(&report.head, &rows, &labels)?
    );

    if let Some(out) = std::env::args().nth(1) {
        save_head(&report.head, &out)?;
        println!("wrote {out}");
    }
    Ok(())
}

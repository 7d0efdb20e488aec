//! Frangi-stack descriptors against raw pixels on the phantom benchmark.
//!
//! `cargo run --release -p cbir-core --example phantom_retrieval`

use cbir_core::descriptor::{describe, raw_pixel_descriptor, DescribeInput, DescriptorConfig};
use cbir_core::phantom::{corpus, PatientLayout};
use cbir_core::retrieval::{build_index, evaluate_index, query, EvalSetting, IndexEntry, QueryOptions};

fn main() -> cbir_core::Result<()> {
    let cases = corpus(40, PatientLayout::Mixed(8), 2024);
    let cfg = DescriptorConfig::default();

    let mut frangi = Vec::new();
    let mut raw = Vec::new();
    for c in &cases {
        let entry = |embedding| IndexEntry {
            id: c.id.clone(),
            embedding,
            patient_id: c.patient_id.clone(),
            study_id: c.study_id.clone(),
            lesion_type: c.kind.label().into(),
        };
        frangi.push(entry(describe(DescribeInput::Image(&c.image), &cfg)?.vector));
        raw.push(entry(raw_pixel_descriptor(&c.image)?.vector));
    }

    for (name, entries) in [("frangi+gem", frangi), ("raw pixels", raw)] {
        let index = build_index(entries)?;
        println!("{name}");
        for setting in [EvalSetting::AllPatients, EvalSetting::SamePatient, EvalSetting::CrossPatient] {
            let r = evaluate_index(&index, setting)?;
            println!(
                "  {setting:<14} mAP@10 {:.3}  P@1 {:.3}  P@10 {:.3}  ({} queries)",
                r.map_at_10, r.precision_at_1, r.precision_at_10, r.query_count
            );
        }
        let probe = &index.entries()[0];
        let hits = query(&index, &probe.embedding, &QueryOptions { k: 5, exclude_id: Some(&probe.id), ..Default::default() })?;
        println!("  neighbours of {}: {:?}", probe.id, hits.ids());
    }
    Ok(())
}

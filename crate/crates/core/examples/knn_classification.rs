//! k-NN lesion-type classification with and without the Frangi descriptor,
//! sweeping the GeM exponent.
//!
//! `cargo run --release -p cbir-core --example knn_classification`

use cbir_core::descriptor::{describe, raw_pixel_descriptor, DescribeInput, DescriptorConfig};
use cbir_core::phantom::{corpus, PatientLayout, PhantomCase};
use cbir_core::retrieval::{build_index, knn_report, IndexEntry};

fn report(name: &str, cases: &[PhantomCase], embed: impl Fn(&PhantomCase) -> cbir_core::Result<Vec<f64>>) -> cbir_core::Result<()> {
    let entries = cases
        .iter()
        .map(|c| {
            Ok(IndexEntry {
                id: c.id.clone(),
                embedding: embed(c)?,
                patient_id: c.patient_id.clone(),
                study_id: c.study_id.clone(),
                lesion_type: c.kind.label().into(),
            })
        })
        .collect::<cbir_core::Result<Vec<_>>>()?;
    let index = build_index(entries)?;
    for k in [1, 5, 9] {
        let r = knn_report(&index, k)?;
        println!("{name:<16} k={k}  accuracy {:.3}  macro-F1 {:.3}", r.accuracy, r.macro_f1);
    }
    Ok(())
}

fn main() -> cbir_core::Result<()> {
    let cases = corpus(15, PatientLayout::Mixed(5), 99);
    report("raw pixels", &cases, |c| Ok(raw_pixel_descriptor(&c.image)?.vector))?;
    for p in [1.0, 3.0, 10.0] {
        let cfg = DescriptorConfig { gem_p: p, ..DescriptorConfig::default() };
        report(&format!("frangi gem p={p}"), &cases, |c| Ok(describe(DescribeInput::Image(&c.image), &cfg)?.vector))?;
    }
    Ok(())
}

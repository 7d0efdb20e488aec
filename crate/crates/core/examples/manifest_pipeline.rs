//! From image files and a CSV manifest to a saved index and an evaluation.
//!
//! `cargo run --release -p cbir-core --example manifest_pipeline [WORK_DIR]`

use std::fmt::Write as _;
use std::path::PathBuf;

use cbir_core::descriptor::{describe, DescribeInput, DescriptorConfig};
use cbir_core::formats::{load_index, save_index};
use cbir_core::imagecore::{load_manifest, load_raster, prepare_roi, save_png16};
use cbir_core::phantom::{corpus, PatientLayout};
use cbir_core::retrieval::{build_index, evaluate_index, EvalSetting, IndexEntry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("cbir-manifest-demo"));
    std::fs::create_dir_all(dir.join("scans"))?;

    let mut csv = String::from("image_path,patient_id,study_id,lesion_type,left,top,right,bottom\n");
    for c in corpus(6, PatientLayout::Homogeneous(3), 11) {
        save_png16(&c.image, dir.join(format!("scans/{}.png", c.id)))?;
        writeln!(csv, "scans/{}.png,{},{},{},8,8,56,56", c.id, c.patient_id, c.study_id, c.kind.label()).unwrap();
    }
    std::fs::write(dir.join("manifest.csv"), csv)?;

    let manifest = load_manifest(dir.join("manifest.csv"))?;
    println!("{} records, labels {:?}", manifest.len(), manifest.label_set());
    let cfg = DescriptorConfig::default();
    let mut entries = Vec::new();
    for (rec, path) in manifest.records().iter().zip(manifest.resolve_paths(&dir)) {
        let roi = prepare_roi(&load_raster(&path)?, Some(&rec.bbox))?;
        entries.push(IndexEntry {
            id: rec.derived_id(),
            embedding: describe(DescribeInput::Image(&roi), &cfg)?.vector,
            patient_id: rec.patient_id.clone(),
            study_id: rec.study_id.clone(),
            lesion_type: rec.lesion_type.clone(),
        });
    }
    let index_path = dir.join("index.bin");
    save_index(&build_index(entries)?, &index_path)?;
    let index = load_index(&index_path)?;
    println!("index {} x {} at {}", index.len(), index.dim(), index_path.display());

    for setting in [EvalSetting::AllPatients, EvalSetting::SamePatient, EvalSetting::CrossPatient] {
        let r = evaluate_index(&index, setting)?;
        println!("{setting:<14} mAP@10 {:.3}  P@1 {:.3}  P@10 {:.3}", r.map_at_10, r.precision_at_1, r.precision_at_10);
    }
    Ok(())
}

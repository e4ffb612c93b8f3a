use std::fs;
use std::path::{Path, PathBuf};

use xai_core::io::{self, DatasetDescriptor, LabelSource, RunConfig};
use xai_core::recommender::Modality;
use xai_core::synth::{self, LabelledData};
use xai_core::{ComputeGraph, Error, Result, Tensor};

fn write_set(
    dir: &Path,
    graph: &ComputeGraph,
    data: &LabelledData,
    modality: Modality,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (manifest, blob) = (dir.join("model.json"), dir.join("model.bin"));
    io::save_model(graph, &manifest, &blob)?;
    written.extend([manifest, blob]);

    let samples = dir.join("samples.pnpt");
    io::save_tensor_file(&samples, &Tensor::stack(&data.samples)?)?;
    written.push(samples);
    let masks = match &data.masks {
        Some(m) => {
            let path = dir.join("masks.pnpt");
            io::save_tensor_file(&path, &Tensor::stack(m)?)?;
            written.push(path);
            Some(PathBuf::from("masks.pnpt"))
        }
        None => None,
    };
    let descriptor = DatasetDescriptor {
        samples: PathBuf::from("samples.pnpt"),
        labels: Some(LabelSource::Inline(data.labels.clone())),
        masks,
        modalities: vec![modality],
    };
    let path = dir.join("data.json");
    let text = serde_json::to_string_pretty(&descriptor).expect("json") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Trains the patch CNN and the tabular MLP and writes each with a
/// held-out dataset and a default run configuration.
pub fn write_examples(out: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let patch = synth::trained_patch_cnn(seed)?;
    write_set(&out.join("patch"), &patch, &synth::patch_task(64, seed + 1), Modality::Vision, &mut written)?;

    let tabular = synth::trained_tabular_mlp(seed)?;
    write_set(&out.join("tabular"), &tabular, &synth::tabular_task(64, seed + 1), Modality::Structured, &mut written)?;

    let config = RunConfig { seed, ..RunConfig::default() };
    let path = out.join("config.json");
    let text = serde_json::to_string_pretty(&config).expect("json") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

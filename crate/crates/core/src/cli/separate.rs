use std::path::{Path, PathBuf};

use super::{CliError, SeparateArgs};
use crate::audio::{load_wav, resample_half, to_mono, write_wav, SampleFormat};
use crate::separate::separate;
use crate::trainer::load_checkpoint;

/// `<dir>/<stem>.intermediate.wav` next to `output`.
pub fn intermediate_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    output.with_file_name(format!("{stem}.intermediate.wav"))
}

pub fn run(a: SeparateArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint, None)?;
    let mut model = ckpt.model;
    if a.emit_intermediate && !model.config.has_intermediate() {
        return Err(CliError::Usage(format!(
            "model `{}` has no intermediate estimate",
            model.config.name()
        )));
    }
    let chunk_len = a
        .chunk_len
        .or(ckpt.trainer.as_ref().map(|t| t.config.chunk_len))
        .unwrap_or(16384);

    let mut input = to_mono(&load_wav(&a.input)?)?;
    if input.sample_rate != a.sample_rate {
        if a.resample && input.sample_rate == 2 * a.sample_rate {
            input = resample_half(&input)?;
        } else {
            return Err(CliError::Data(format!(
                "{}: sample rate {} Hz differs from the working rate {} Hz{}",
                a.input.display(),
                input.sample_rate,
                a.sample_rate,
                if input.sample_rate == 2 * a.sample_rate { "; pass --resample" } else { "" }
            )));
        }
    }
    let out = separate(&mut model, &input, chunk_len, a.batch_size)?;
    let format = if a.pcm16 { SampleFormat::Pcm16 } else { SampleFormat::Float32 };
    write_wav(&out.vocals, &a.output, format)?;
    println!("wrote {} ({} samples)", a.output.display(), out.vocals.frames());
    if a.emit_intermediate {
        let p = intermediate_path(&a.output);
        write_wav(out.intermediate.as_ref().expect("composite model"), &p, format)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

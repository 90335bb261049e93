//! Tab-separated mixture manifests:
//! `mixture_path \t reference_path \t target_path \t speaker_id`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixtureRecord {
    pub mixture_path: PathBuf,
    pub reference_path: PathBuf,
    pub target_path: PathBuf,
    pub speaker_id: usize,
}

/// Reads a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<MixtureRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&path.display().to_string(), &text, base)
}

pub(crate) fn parse_manifest(origin: &str, text: &str, base: &Path) -> Result<Vec<MixtureRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [mix, reference, target, speaker] = fields[..] else {
            return Err(bad(format!("expected 4 tab-separated fields, got {}", fields.len())));
        };
        let speaker_id = speaker
            .trim()
            .parse()
            .map_err(|e| bad(format!("bad speaker id `{speaker}`: {e}")))?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        out.push(MixtureRecord {
            mixture_path: resolve(mix),
            reference_path: resolve(reference),
            target_path: resolve(target),
            speaker_id,
        });
    }
    Ok(out)
}

/// Writes records, storing paths relative to the manifest's directory when possible.
pub fn write_manifest(path: &Path, records: &[MixtureRecord]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let text: String = records
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{}\n",
                rel(&r.mixture_path),
                rel(&r.reference_path),
                rel(&r.target_path),
                r.speaker_id
            )
        })
        .collect();
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

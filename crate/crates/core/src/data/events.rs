//! Generic event-stream ingestion: a plain-text CSV of `t,channel,polarity,
//! label` rows standing in for neuromorphic camera formats, plus a JSON
//! manifest that stitches per-sample files into a dataset.
//!
//! One CSV file holds one sample; every row must carry the same label.
//! Polarities are mapped to separate channel planes: ON events occupy
//! channels `[0, channels)`, OFF events `[channels, 2*channels)`.

use super::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::SpikeTensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// One binned event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub t: usize,
    pub channel: usize,
    pub polarity: i8,
    pub weight: u32,
}

fn parse_row(line: &str, line_no: usize) -> Result<(i64, i64, i64, i64)> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(CoreError::Format {
            what: "event CSV",
            detail: format!("line {line_no}: expected 4 fields, got {}", fields.len()),
        });
    }
    let mut out = [0i64; 4];
    for (i, f) in fields.iter().enumerate() {
        out[i] = f.parse().map_err(|_| CoreError::Format {
            what: "event CSV",
            detail: format!("line {line_no}: non-integer field '{f}'"),
        })?;
    }
    Ok((out[0], out[1], out[2], out[3]))
}

/// Parses one event CSV file into a single-sample dataset.
///
/// `channels` is the per-polarity channel count; the resulting tensor has
/// `2 * channels` planes. With `clamp_binary` set, multiple events landing
/// in the same bin saturate at 1 instead of counting.
pub fn load_events_csv<F: Scalar>(
    path: &Path,
    t_steps: usize,
    channels: usize,
    n_classes: usize,
    clamp_binary: bool,
) -> Result<Dataset<F>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t,channel,polarity,label" => {}
        Some((_, header)) => {
            return Err(CoreError::Format {
                what: "event CSV",
                detail: format!("bad header '{}'", header.trim()),
            })
        }
        None => return Err(CoreError::Empty("event CSV")),
    }

    let mut tensor = SpikeTensor::zeros(t_steps, 2 * channels);
    let mut label: Option<usize> = None;
    let mut any = false;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (t, ch, pol, lab) = parse_row(line, idx + 1)?;
        if t < 0 || t as usize >= t_steps {
            return Err(CoreError::OutOfRange {
                context: "event timestep",
                index: t.max(0) as usize,
                bound: t_steps,
            });
        }
        if ch < 0 || ch as usize >= channels {
            return Err(CoreError::OutOfRange {
                context: "event channel",
                index: ch.max(0) as usize,
                bound: channels,
            });
        }
        if pol != 1 && pol != -1 {
            return Err(CoreError::Format {
                what: "event CSV",
                detail: format!("line {}: polarity must be 1 or -1, got {pol}", idx + 1),
            });
        }
        if lab < 0 || lab as usize >= n_classes {
            return Err(CoreError::OutOfRange {
                context: "event label",
                index: lab.max(0) as usize,
                bound: n_classes,
            });
        }
        match label {
            None => label = Some(lab as usize),
            Some(prev) if prev != lab as usize => {
                return Err(CoreError::Format {
                    what: "event CSV",
                    detail: format!(
                        "line {}: mixed labels in one sample file ({prev} vs {lab})",
                        idx + 1
                    ),
                })
            }
            _ => {}
        }
        let plane = if pol == 1 { 0 } else { channels };
        let (ti, ci) = (t as usize, plane + ch as usize);
        let new = if clamp_binary {
            F::one()
        } else {
            tensor.get(ti, ci) + F::one()
        };
        tensor.set(ti, ci, new);
        any = true;
    }
    if !any {
        return Err(CoreError::Empty("event CSV sample"));
    }
    Dataset::new(vec![(tensor, label.unwrap())], n_classes)
}

/// Dataset manifest: shared shape metadata plus one event CSV per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventManifest {
    pub t_steps: usize,
    pub channels: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<String>,
    #[serde(default)]
    pub clamp_binary: bool,
}

/// Loads every sample file referenced by a manifest (paths resolved relative
/// to the manifest's directory) into one dataset.
pub fn load_event_manifest<F: Scalar>(manifest_path: &Path) -> Result<Dataset<F>> {
    let text = fs::read_to_string(manifest_path)?;
    let manifest: EventManifest = serde_json::from_str(&text).map_err(|e| CoreError::Format {
        what: "dataset manifest",
        detail: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n_classes = manifest.class_names.len();
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rel in &manifest.samples {
        let one = load_events_csv::<F>(
            &base.join(rel),
            manifest.t_steps,
            manifest.channels,
            n_classes,
            manifest.clamp_binary,
        )?;
        samples.extend(one.samples().iter().cloned());
    }
    Dataset::new(samples, n_classes)
}

/// Unbins a tensor back into event records (polarity planes split at
/// `channels`). Weights carry bin counts, so total event mass is preserved.
pub fn events_from_tensor<F: Scalar>(tensor: &SpikeTensor<F>, channels: usize) -> Vec<EventRecord> {
    let mut events = Vec::new();
    for t in 0..tensor.t_steps() {
        for c in 0..tensor.channels() {
            let x = tensor.get(t, c);
            if x > F::zero() {
                let weight = x.to_f64_c().round() as u32;
                let (channel, polarity) = if c < channels {
                    (c, 1)
                } else {
                    (c - channels, -1)
                };
                events.push(EventRecord {
                    t,
                    channel,
                    polarity,
                    weight: weight.max(1),
                });
            }
        }
    }
    events
}

//! Model checkpoints: a versioned binary file with a magic header (network
//! weights plus the method's auxiliary fixed matrices) and a JSON metadata
//! sidecar carrying the experiment config that produced it.

use crate::config::ExperimentConfig;
use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use spikebench_core::learn::decolle::{DecolleReadouts, LocalReadout};
use spikebench_core::learn::eprop::{FeedbackMatrices, FeedbackMode};
use spikebench_core::snn::{
    LayerParams, LifParams, Network, ReadoutMode, SurrogateKind, SurrogateSpec,
};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"SBCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub input_size: usize,
    pub n_classes: usize,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: Network<f64>,
    pub feedback: Option<FeedbackMatrices<f64>>,
    pub readouts: Option<DecolleReadouts<f64>>,
    pub meta: CheckpointMeta,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, x: u8) -> Result<()> {
        self.out.write_all(&[x])?;
        Ok(())
    }
    fn u32(&mut self, x: u32) -> Result<()> {
        self.out.write_all(&x.to_le_bytes())?;
        Ok(())
    }
    fn f64(&mut self, x: f64) -> Result<()> {
        self.out.write_all(&x.to_le_bytes())?;
        Ok(())
    }
    fn matrix(&mut self, m: &Array2<f64>) -> Result<()> {
        self.u32(m.nrows() as u32)?;
        self.u32(m.ncols() as u32)?;
        for &x in m.iter() {
            self.f64(x)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            bail!("checkpoint truncated at offset {}", self.pos);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Ok(Array2::from_shape_vec((rows, cols), data)?)
    }
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating checkpoint {}", path.display()))?;
    let mut w = Writer {
        out: std::io::BufWriter::new(file),
    };
    w.out.write_all(MAGIC)?;
    w.u32(VERSION)?;
    w.u8(match ckpt.net.readout_mode {
        ReadoutMode::MembraneSum => 0,
        ReadoutMode::SpikeCount => 1,
    })?;
    w.u8(match ckpt.net.surrogate.kind {
        SurrogateKind::FastSigmoid => 0,
        SurrogateKind::Rectangular => 1,
        SurrogateKind::SigmoidSoft => 2,
    })?;
    w.f64(ckpt.net.surrogate.slope)?;
    w.u32(ckpt.net.layers.len() as u32)?;
    for layer in &ckpt.net.layers {
        w.f64(layer.lif.alpha_syn)?;
        w.f64(layer.lif.alpha_mem)?;
        w.f64(layer.lif.v_th)?;
        w.u8(layer.lif.reset_by_subtraction as u8)?;
        w.matrix(&layer.w)?;
        match &layer.v {
            Some(v) => {
                w.u8(1)?;
                w.matrix(v)?;
            }
            None => w.u8(0)?,
        }
    }
    match &ckpt.feedback {
        Some(fb) => {
            w.u8(1)?;
            w.u8(matches!(fb.mode, FeedbackMode::Symmetric) as u8)?;
            w.u32(fb.matrices.len() as u32)?;
            for m in &fb.matrices {
                w.matrix(m)?;
            }
        }
        None => w.u8(0)?,
    }
    match &ckpt.readouts {
        Some(ro) => {
            w.u8(1)?;
            w.u32(ro.per_layer.len() as u32)?;
            for r in &ro.per_layer {
                w.matrix(&r.g)?;
            }
        }
        None => w.u8(0)?,
    }
    w.out.flush()?;

    let meta_json = serde_json::to_string_pretty(&ckpt.meta)?;
    std::fs::write(sidecar_path(path), meta_json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?
        .read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        bail!("not a checkpoint file (bad magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported checkpoint version {version} (expected {VERSION})");
    }
    let readout_mode = match r.u8()? {
        0 => ReadoutMode::MembraneSum,
        1 => ReadoutMode::SpikeCount,
        x => bail!("bad readout mode tag {x}"),
    };
    let surrogate_kind = match r.u8()? {
        0 => SurrogateKind::FastSigmoid,
        1 => SurrogateKind::Rectangular,
        2 => SurrogateKind::SigmoidSoft,
        x => bail!("bad surrogate tag {x}"),
    };
    let slope = r.f64()?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let alpha_syn = r.f64()?;
        let alpha_mem = r.f64()?;
        let v_th = r.f64()?;
        let reset = r.u8()? != 0;
        let w = r.matrix()?;
        let v = if r.u8()? != 0 { Some(r.matrix()?) } else { None };
        let mut lif = LifParams::new(alpha_syn, alpha_mem, v_th);
        lif.reset_by_subtraction = reset;
        layers.push(LayerParams { w, v, lif });
    }
    let feedback = if r.u8()? != 0 {
        let mode = if r.u8()? != 0 {
            FeedbackMode::Symmetric
        } else {
            FeedbackMode::RandomFixed
        };
        let count = r.u32()? as usize;
        let mut matrices = Vec::with_capacity(count);
        for _ in 0..count {
            matrices.push(r.matrix()?);
        }
        Some(FeedbackMatrices { matrices, mode })
    } else {
        None
    };
    let readouts = if r.u8()? != 0 {
        let count = r.u32()? as usize;
        let mut per_layer = Vec::with_capacity(count);
        for _ in 0..count {
            per_layer.push(LocalReadout { g: r.matrix()? });
        }
        Some(DecolleReadouts { per_layer })
    } else {
        None
    };
    if r.pos != bytes.len() {
        bail!("trailing bytes in checkpoint ({} unread)", bytes.len() - r.pos);
    }

    let meta_text = std::fs::read_to_string(sidecar_path(path))
        .with_context(|| format!("reading sidecar for {}", path.display()))?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_text)?;

    let net = Network {
        layers,
        readout_mode,
        surrogate: SurrogateSpec::new(surrogate_kind, slope),
    };
    net.validate()
        .map_err(|e| anyhow::anyhow!("checkpoint network invalid: {e}"))?;
    Ok(Checkpoint {
        net,
        feedback,
        readouts,
        meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use spikebench_core::snn::{init_network, LayerSpec, NetworkConfig};

    fn sample_checkpoint() -> Checkpoint {
        let cfg = NetworkConfig {
            input_size: 4,
            layers: vec![LayerSpec::rec(5), LayerSpec::ff(2)],
            lif: LifParams::new(0.9, 0.5, 0.6),
            surrogate: SurrogateSpec::new(SurrogateKind::FastSigmoid, 10.0),
            readout_mode: ReadoutMode::MembraneSum,
        };
        let net = init_network(&cfg, 3).unwrap();
        let feedback = Some(FeedbackMatrices::random_fixed(&net, 9));
        Checkpoint {
            net,
            feedback,
            readouts: None,
            meta: CheckpointMeta {
                version: VERSION,
                seed: 3,
                config: preset("synth-bptt-ff").unwrap(),
                input_size: 4,
                n_classes: 2,
                test_accuracy: Some(0.5),
            },
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = sample_checkpoint();
        save(&path, &ckpt).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.net, ckpt.net);
        assert_eq!(
            back.feedback.as_ref().unwrap().matrices,
            ckpt.feedback.as_ref().unwrap().matrices
        );
        assert_eq!(back.meta.seed, 3);
        assert_eq!(back.meta.config, ckpt.meta.config);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        let ckpt = sample_checkpoint();
        save(&p1, &ckpt).unwrap();
        save(&p2, &ckpt).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(load(&path).is_err());
    }
}

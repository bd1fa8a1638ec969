//! Flat parameter vector with layer-shape metadata, and its binary snapshot
//! format used by the harness for checkpointing.

use std::io::{Read, Write};

use crate::error::{Result, SimError};

/// Architecture constants: conv(1->8, 3x3, pad 1) -> ReLU -> channel gate ->
/// spatial gate -> conv(8->16, 3x3, stride 2, pad 1) -> ReLU -> global
/// average pool -> affine(16->K) -> softmax.
pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const KERNEL: usize = 3;
/// Squeeze bottleneck reduction of the channel gate.
pub const CA_REDUCTION: usize = 2;

const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Dense,
}

/// One layer's slice of the flat vector: weights followed by biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub offset: usize,
}

impl LayerDesc {
    pub fn weight_len(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.out_ch * self.in_ch * self.kernel * self.kernel,
            LayerKind::Dense => self.out_ch * self.in_ch,
        }
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.out_ch
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Input geometry and class count of the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
}

impl NetShape {
    pub fn new(classes: usize, height: usize, width: usize) -> Self {
        assert!(classes >= 2, "need at least two classes");
        assert!(
            height % 2 == 0 && width % 2 == 0,
            "stride-2 layer requires even chip dimensions"
        );
        Self {
            classes,
            height,
            width,
        }
    }

    /// Ordered layer descriptors for this shape.
    pub fn layout(&self) -> Vec<LayerDesc> {
        let mut descs = Vec::with_capacity(6);
        let mut offset = 0;
        let mut push = |kind, in_ch, out_ch, kernel| {
            let d = LayerDesc {
                kind,
                in_ch,
                out_ch,
                kernel,
                offset,
            };
            offset += d.len();
            descs.push(d);
        };
        let squeeze = CONV1_CHANNELS / CA_REDUCTION;
        push(LayerKind::Conv, 1, CONV1_CHANNELS, KERNEL); // conv1
        push(LayerKind::Dense, CONV1_CHANNELS, squeeze, 1); // channel gate squeeze
        push(LayerKind::Dense, squeeze, CONV1_CHANNELS, 1); // channel gate excite
        push(LayerKind::Conv, 2, 1, KERNEL); // spatial gate conv over mean/max maps
        push(LayerKind::Conv, CONV1_CHANNELS, CONV2_CHANNELS, KERNEL); // conv2, stride 2
        push(LayerKind::Dense, CONV2_CHANNELS, self.classes, 1); // classifier
        descs
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|d| d.len()).sum()
    }
}

/// Global or local model parameters: a flat vector plus its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub flat: Vec<f64>,
    pub layout: Vec<LayerDesc>,
}

impl ModelParams {
    pub fn zeros(shape: &NetShape) -> Self {
        let layout = shape.layout();
        let d = layout.iter().map(|l| l.len()).sum();
        Self {
            flat: vec![0.0; d],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Weight slice of layer `idx`.
    pub fn weights(&self, idx: usize) -> &[f64] {
        let d = &self.layout[idx];
        &self.flat[d.offset..d.offset + d.weight_len()]
    }

    /// Bias slice of layer `idx`.
    pub fn biases(&self, idx: usize) -> &[f64] {
        let d = &self.layout[idx];
        &self.flat[d.offset + d.weight_len()..d.offset + d.len()]
    }

    /// `after - self`, elementwise.
    pub fn delta_to(&self, after: &ModelParams) -> ParamUpdate {
        assert_eq!(self.len(), after.len(), "parameter length mismatch");
        ParamUpdate {
            delta: self
                .flat
                .iter()
                .zip(&after.flat)
                .map(|(b, a)| a - b)
                .collect(),
        }
    }

    /// Serializes the snapshot: version byte, layer descriptor list, then the
    /// flat vector as little-endian 64-bit floats.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&[SNAPSHOT_VERSION])?;
        w.write_all(&(self.layout.len() as u32).to_le_bytes())?;
        for d in &self.layout {
            let kind = match d.kind {
                LayerKind::Conv => 0u8,
                LayerKind::Dense => 1u8,
            };
            w.write_all(&[kind])?;
            w.write_all(&(d.in_ch as u32).to_le_bytes())?;
            w.write_all(&(d.out_ch as u32).to_le_bytes())?;
            w.write_all(&(d.kernel as u32).to_le_bytes())?;
            w.write_all(&(d.offset as u64).to_le_bytes())?;
        }
        w.write_all(&(self.flat.len() as u64).to_le_bytes())?;
        for v in &self.flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)?;
        if byte[0] != SNAPSHOT_VERSION {
            return Err(SimError::Parse(format!(
                "unsupported snapshot version {}",
                byte[0]
            )));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let n_layers = u32::from_le_bytes(u32buf) as usize;
        let mut layout = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            r.read_exact(&mut byte)?;
            let kind = match byte[0] {
                0 => LayerKind::Conv,
                1 => LayerKind::Dense,
                k => return Err(SimError::Parse(format!("unknown layer kind {k}"))),
            };
            r.read_exact(&mut u32buf)?;
            let in_ch = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u32buf)?;
            let out_ch = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u32buf)?;
            let kernel = u32::from_le_bytes(u32buf) as usize;
            r.read_exact(&mut u64buf)?;
            let offset = u64::from_le_bytes(u64buf) as usize;
            layout.push(LayerDesc {
                kind,
                in_ch,
                out_ch,
                kernel,
                offset,
            });
        }
        r.read_exact(&mut u64buf)?;
        let d = u64::from_le_bytes(u64buf) as usize;
        let expected: usize = layout.iter().map(|l| l.len()).sum();
        if d != expected {
            return Err(SimError::Parse(format!(
                "flat length {d} does not match layout total {expected}"
            )));
        }
        let mut flat = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut u64buf)?;
            let v = f64::from_le_bytes(u64buf);
            if !v.is_finite() {
                return Err(SimError::Parse("non-finite parameter value".into()));
            }
            flat.push(v);
        }
        Ok(Self { flat, layout })
    }
}

/// Per-round client update `theta_after - theta_before`.
#[derive(Debug, Clone)]
pub struct ParamUpdate {
    pub delta: Vec<f64>,
}

impl ParamUpdate {
    pub fn zeros(len: usize) -> Self {
        Self {
            delta: vec![0.0; len],
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

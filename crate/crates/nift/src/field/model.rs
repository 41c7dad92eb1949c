//! Trainable descriptor field: a set encoder produces one embedding per
//! object; a coordinate decoder maps (embedding, canonical query) to a
//! predicted target. The descriptor exposed to pose optimization is the
//! concatenation of every decoder layer's activations, which carries far
//! more spatial detail than the head alone.

use std::io::{self, Read, Write};

use rand::Rng;
use sha2::{Digest, Sha256};

use super::encoder::{Canonicalizer, EncoderCache, PointNetEncoder};
use super::mlp::{Activation, Mlp, MlpCache};
use super::FieldError;
use crate::geometry::{Pt3, Vec3};

const MAGIC: &[u8; 8] = b"NIFTFLD1";

/// What the decoder head predicts, which also fixes its width and the
/// training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldHead {
    /// Spherical-harmonic band powers of the distance descriptor,
    /// bands `0..=order`; trained with an L1 loss.
    BandPowers { order: usize },
    /// Inside/outside logit; trained with binary cross-entropy.
    Occupancy,
}

impl FieldHead {
    pub fn out_dim(&self) -> usize {
        match self {
            FieldHead::BandPowers { order } => order + 1,
            FieldHead::Occupancy => 1,
        }
    }

    fn tag(&self) -> u8 {
        match self {
            FieldHead::BandPowers { .. } => 0,
            FieldHead::Occupancy => 1,
        }
    }
}

/// An object the field has been evaluated against: its normalizer plus the
/// memoized embedding, so queries only pay for the decoder.
#[derive(Clone, Debug)]
pub struct ObjectBinding {
    pub canon: Canonicalizer,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FieldNet {
    pub encoder: PointNetEncoder,
    pub decoder: Mlp,
    head: FieldHead,
}

impl FieldNet {
    pub const FEATURE_DIM: usize = 64;

    pub fn new(head: FieldHead) -> Self {
        let f = Self::FEATURE_DIM;
        let decoder = Mlp::new(
            &[f + 3, 64, 64, 32, head.out_dim()],
            &[Activation::Tanh, Activation::Tanh, Activation::Tanh, Activation::Linear],
        );
        Self { encoder: PointNetEncoder::new(f), decoder, head }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.encoder.init(rng);
        self.decoder.init(rng);
    }

    pub fn head(&self) -> FieldHead {
        self.head
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    /// Width of the concatenated-activations descriptor.
    pub fn descriptor_len(&self) -> usize {
        self.decoder.concat_len()
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// Fits the normalizer to the cloud and memoizes the embedding.
    pub fn bind(&self, cloud: &[Pt3]) -> ObjectBinding {
        let canon = Canonicalizer::fit(cloud);
        let canonical: Vec<[f64; 3]> = cloud.iter().map(|&p| canon.apply(p)).collect();
        let cache = self.encoder.forward(&canonical);
        ObjectBinding { canon, embedding: cache.embedding().to_vec() }
    }

    /// Encoder pass kept around for training backprop.
    pub fn encode_cached(&self, canonical: &[[f64; 3]]) -> EncoderCache {
        self.encoder.forward(canonical)
    }

    fn decoder_input(&self, binding_embedding: &[f64], q_canon: [f64; 3]) -> Vec<f64> {
        let mut input = Vec::with_capacity(binding_embedding.len() + 3);
        input.extend_from_slice(binding_embedding);
        input.extend_from_slice(&q_canon);
        input
    }

    /// Decoder pass against a memoized embedding, canonical query coords.
    pub fn decode(&self, embedding: &[f64], q_canon: [f64; 3]) -> MlpCache {
        self.decoder.forward(&self.decoder_input(embedding, q_canon))
    }

    /// Head prediction at a world-space query.
    pub fn predict(&self, binding: &ObjectBinding, q: Pt3) -> Vec<f64> {
        self.decode(&binding.embedding, binding.canon.apply(q)).output().to_vec()
    }

    /// Concatenated-activations descriptor at a world-space query.
    pub fn descriptor(&self, binding: &ObjectBinding, q: Pt3) -> Vec<f64> {
        let cache = self.decode(&binding.embedding, binding.canon.apply(q));
        self.decoder.concat_outputs(&cache)
    }

    /// Splits a descriptor-space cotangent into per-layer slices.
    fn split_cots<'a>(&self, cot: &'a [f64]) -> Vec<&'a [f64]> {
        assert_eq!(cot.len(), self.descriptor_len());
        let mut cots = Vec::with_capacity(self.decoder.layer_count());
        let mut off = 0;
        for l in 0..self.decoder.layer_count() {
            let w = self.decoder.dims()[l + 1];
            cots.push(&cot[off..off + w]);
            off += w;
        }
        cots
    }

    /// Gradient of `cot . descriptor(q)` with respect to the world-space
    /// query. The canonical map contributes its `1/radius` factor.
    pub fn descriptor_query_grad(&self, binding: &ObjectBinding, q: Pt3, cot: &[f64]) -> Vec3 {
        let cache = self.decode(&binding.embedding, binding.canon.apply(q));
        let cots = self.split_cots(cot);
        let gin = self.decoder.input_grad_all(&cache, &cots);
        let k = binding.embedding.len();
        Vec3::new(gin[k], gin[k + 1], gin[k + 2]) * binding.canon.grad_scale()
    }

    /// Descriptor and query gradient in one decoder pass pair.
    pub fn descriptor_with_cache(
        &self,
        binding: &ObjectBinding,
        q: Pt3,
    ) -> (Vec<f64>, MlpCache) {
        let cache = self.decode(&binding.embedding, binding.canon.apply(q));
        (self.decoder.concat_outputs(&cache), cache)
    }

    /// Query gradient from a cached decode.
    pub fn query_grad_from_cache(
        &self,
        binding: &ObjectBinding,
        cache: &MlpCache,
        cot: &[f64],
    ) -> Vec3 {
        let cots = self.split_cots(cot);
        let gin = self.decoder.input_grad_all(cache, &cots);
        let k = binding.embedding.len();
        Vec3::new(gin[k], gin[k + 1], gin[k + 2]) * binding.canon.grad_scale()
    }

    pub fn save(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.head.tag()])?;
        let order = match self.head {
            FieldHead::BandPowers { order } => order as u32,
            FieldHead::Occupancy => 0,
        };
        w.write_all(&order.to_le_bytes())?;
        write_dims(w, self.encoder.point_mlp.dims())?;
        write_dims(w, self.encoder.post.dims())?;
        write_dims(w, self.decoder.dims())?;
        write_params(w, self.encoder.point_mlp.params())?;
        write_params(w, self.encoder.post.params())?;
        write_params(w, self.decoder.params())?;
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, FieldError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(FieldError::Io)?;
        if &magic != MAGIC {
            return Err(FieldError::Format("bad magic; not a field file".into()));
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(FieldError::Io)?;
        let order = read_u32(r)? as usize;
        let head = match tag[0] {
            0 => FieldHead::BandPowers { order },
            1 => FieldHead::Occupancy,
            t => return Err(FieldError::Format(format!("unknown head tag {t}"))),
        };
        let point_dims = read_dims(r)?;
        let post_dims = read_dims(r)?;
        let decoder_dims = read_dims(r)?;
        if point_dims.first() != Some(&3) {
            return Err(FieldError::Format("point network must take 3 coords".into()));
        }
        let feat = *point_dims.last().unwrap_or(&0);
        if post_dims.first() != Some(&feat) {
            return Err(FieldError::Format("pool width mismatch".into()));
        }
        let emb = *post_dims.last().unwrap_or(&0);
        if decoder_dims.first() != Some(&(emb + 3)) {
            return Err(FieldError::Format("decoder must take embedding + 3 coords".into()));
        }
        if decoder_dims.last() != Some(&head.out_dim()) {
            return Err(FieldError::Format("decoder head width mismatch".into()));
        }
        let tanh_acts = |n: usize| vec![Activation::Tanh; n];
        let mut point_mlp = Mlp::new(&point_dims, &tanh_acts(point_dims.len() - 1));
        let mut post = Mlp::new(&post_dims, &tanh_acts(post_dims.len() - 1));
        let mut dec_acts = tanh_acts(decoder_dims.len() - 1);
        *dec_acts.last_mut().unwrap() = Activation::Linear;
        let mut decoder = Mlp::new(&decoder_dims, &dec_acts);
        read_params(r, point_mlp.params_mut())?;
        read_params(r, post.params_mut())?;
        read_params(r, decoder.params_mut())?;
        for p in point_mlp.params().iter().chain(post.params()).chain(decoder.params()) {
            if !p.is_finite() {
                return Err(FieldError::Format("non-finite parameter".into()));
            }
        }
        Ok(Self { encoder: PointNetEncoder { point_mlp, post }, decoder, head })
    }

    /// Content hash of the serialized network, hex-encoded.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        self.save(&mut bytes).expect("in-memory write cannot fail");
        let digest = Sha256::digest(&bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write as _;
            write!(hex, "{b:02x}").unwrap();
        }
        hex
    }
}

fn write_dims(w: &mut impl Write, dims: &[usize]) -> io::Result<()> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, FieldError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(FieldError::Io)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_dims(r: &mut impl Read) -> Result<Vec<usize>, FieldError> {
    let n = read_u32(r)? as usize;
    if n < 2 || n > 64 {
        return Err(FieldError::Format(format!("implausible layer count {n}")));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        let d = read_u32(r)? as usize;
        if d == 0 || d > 1 << 20 {
            return Err(FieldError::Format(format!("implausible width {d}")));
        }
        dims.push(d);
    }
    Ok(dims)
}

fn write_params(w: &mut impl Write, params: &[f64]) -> io::Result<()> {
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_params(r: &mut impl Read, out: &mut [f64]) -> Result<(), FieldError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(FieldError::Io)?;
    let n = u64::from_le_bytes(buf) as usize;
    if n != out.len() {
        return Err(FieldError::Format(format!(
            "parameter count mismatch: file has {n}, network needs {}",
            out.len()
        )));
    }
    for slot in out {
        r.read_exact(&mut buf).map_err(FieldError::Io)?;
        *slot = f64::from_le_bytes(buf);
    }
    Ok(())
}

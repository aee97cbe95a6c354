//! Prior sampling, corpus generation and the `IFNC` shard format.
//!
//! Every parameter group of record `i` is drawn from its own random stream
//! seeded by `(global_seed, i, group)`, so any record can be regenerated in
//! isolation and generation order does not matter.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::face_model::FaceModel;
use crate::image::{Mask, RgbImage};
use crate::params::{ParamGroup, ParamLayout, ParameterVector};
use crate::renderer::{render, CameraSpec};

const SHARD_MAGIC: &[u8; 4] = b"IFNC";
const SHARD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// Yaw and pitch are drawn from U(-r, r), degrees.
    pub yaw_pitch_range: f64,
    /// Roll is drawn from U(-r, r), degrees.
    pub roll_range: f64,
    /// Shape coefficients ~ N(0, 1) when set, otherwise zero.
    pub shape_dist: bool,
    /// Reflectance coefficients ~ N(0, 1) when set, otherwise zero.
    pub refl_dist: bool,
    pub expr_range: (f64, f64),
    /// Added to the first expression coefficient.
    pub expr_bias_first: f64,
    /// Range of SH bands 2..9.
    pub illum_ac_range: (f64, f64),
    /// Range of the constant SH band.
    pub illum_dc_range: (f64, f64),
    /// Replicate each SH coefficient across RGB.
    pub monochrome: bool,
    pub rng_seed: u64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            yaw_pitch_range: 40.0,
            roll_range: 15.0,
            shape_dist: true,
            refl_dist: true,
            expr_range: (-12.0, 12.0),
            expr_bias_first: 4.8,
            illum_ac_range: (-0.2, 0.2),
            illum_dc_range: (0.6, 1.2),
            monochrome: true,
            rng_seed: 1,
        }
    }
}

impl PriorSpec {
    /// Shifted prior standing in for an unseen target distribution:
    /// expressions in U(4, 12) and independently colored illumination.
    pub fn shifted_target(rng_seed: u64) -> Self {
        Self {
            expr_range: (4.0, 12.0),
            expr_bias_first: 0.0,
            monochrome: false,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidPrior(what.to_string()));
        if !(self.yaw_pitch_range.is_finite() && self.yaw_pitch_range > 0.0 && self.roll_range.is_finite() && self.roll_range > 0.0) {
            return bad("rotation ranges must be positive");
        }
        for (name, (lo, hi)) in [
            ("expression", self.expr_range),
            ("illumination AC", self.illum_ac_range),
            ("illumination DC", self.illum_dc_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return bad(&format!("{name} range ({lo}, {hi}) is degenerate"));
            }
        }
        if self.illum_dc_range.0 <= 0.0 {
            return bad("illumination DC range must be positive");
        }
        if !self.expr_bias_first.is_finite() {
            return bad("expression bias must be finite");
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent random stream for one (seed, record, stream) triple.
pub fn stream_rng(seed: u64, record: u64, stream: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(splitmix64(seed) ^ record) ^ stream.wrapping_mul(0xa076_1d64_78bd_642f));
    ChaCha8Rng::seed_from_u64(key)
}

fn group_stream(g: ParamGroup) -> u64 {
    g as u64 + 1
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

/// Draws record `index` from the prior. Values are rounded to f32 precision.
pub fn sample_prior(prior: &PriorSpec, layout: ParamLayout, index: u64) -> ParameterVector {
    let mut theta = ParameterVector::zeros(layout);
    for group in ParamGroup::ALL {
        let mut rng = stream_rng(prior.rng_seed, index, group_stream(group));
        let out = theta.group_mut(group);
        match group {
            ParamGroup::Rotation => {
                let yp = prior.yaw_pitch_range.to_radians();
                let roll = prior.roll_range.to_radians();
                out[0] = uniform(&mut rng, (-yp, yp));
                out[1] = uniform(&mut rng, (-yp, yp));
                out[2] = uniform(&mut rng, (-roll, roll));
            }
            ParamGroup::Shape if prior.shape_dist => {
                out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            }
            ParamGroup::Reflectance if prior.refl_dist => {
                out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            }
            ParamGroup::Shape | ParamGroup::Reflectance => {}
            ParamGroup::Expression => {
                out.iter_mut()
                    .for_each(|v| *v = uniform(&mut rng, prior.expr_range));
                if let Some(first) = out.first_mut() {
                    *first += prior.expr_bias_first;
                }
            }
            ParamGroup::Illumination => {
                for band in 0..9 {
                    let range = if band == 0 {
                        prior.illum_dc_range
                    } else {
                        prior.illum_ac_range
                    };
                    if prior.monochrome {
                        let v = uniform(&mut rng, range);
                        out[3 * band..3 * band + 3].fill(v);
                    } else {
                        for c in 0..3 {
                            out[3 * band + c] = uniform(&mut rng, range);
                        }
                    }
                }
            }
        }
    }
    theta.quantized()
}

/// One stored training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub params: Vec<f32>,
    pub image: RgbImage,
    pub mask: Mask,
}

impl Record {
    pub fn parameters(&self, layout: ParamLayout) -> Result<ParameterVector> {
        ParameterVector::from_f32(layout, &self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub m: usize,
    pub width: usize,
    pub height: usize,
    pub global_seed: u64,
    /// Sample index of the first record.
    pub first_index: u64,
    /// Sample indices that failed to render and were left out.
    pub skipped: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusShard {
    pub header: ShardHeader,
    pub records: Vec<Record>,
}

/// Renders records `first_index .. first_index + count` of the prior.
pub fn generate_corpus_range(
    model: &FaceModel,
    camera: &CameraSpec,
    prior: &PriorSpec,
    first_index: u64,
    count: usize,
) -> Result<CorpusShard> {
    prior.validate()?;
    camera.validate()?;
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    let layout = model.layout();
    let rendered: Vec<(u64, Result<Record>)> = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let index = first_index + k;
            let theta = sample_prior(prior, layout, index);
            let rec = render(model, camera, &theta).map(|s| Record {
                params: theta.to_f32(),
                image: s.image,
                mask: s.mask,
            });
            (index, rec)
        })
        .collect();

    let mut records = Vec::with_capacity(count);
    let mut skipped = Vec::new();
    for (index, rec) in rendered {
        match rec {
            Ok(r) => records.push(r),
            Err(_) => skipped.push(index),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(CorpusShard {
        header: ShardHeader {
            m: layout.len(),
            width: camera.image_width,
            height: camera.image_height,
            global_seed: prior.rng_seed,
            first_index,
            skipped,
        },
        records,
    })
}

pub fn generate_corpus(
    model: &FaceModel,
    camera: &CameraSpec,
    prior: &PriorSpec,
    count: usize,
) -> Result<CorpusShard> {
    generate_corpus_range(model, camera, prior, 0, count)
}

impl CorpusShard {
    /// Builds a shard from already rendered records (used for bred corpora).
    pub fn from_records(
        m: usize,
        width: usize,
        height: usize,
        global_seed: u64,
        records: Vec<Record>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let shard = Self {
            header: ShardHeader {
                m,
                width,
                height,
                global_seed,
                first_index: 0,
                skipped: Vec::new(),
            },
            records,
        };
        shard.check_records()?;
        Ok(shard)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fails unless the shard was generated for parameter dimension `m`.
    pub fn ensure_m(&self, m: usize) -> Result<()> {
        if self.header.m != m {
            return Err(Error::mismatch("corpus parameter dimension", m, self.header.m));
        }
        Ok(())
    }

    fn check_records(&self) -> Result<()> {
        let h = &self.header;
        for r in &self.records {
            if r.params.len() != h.m {
                return Err(Error::mismatch("record parameters", h.m, r.params.len()));
            }
            if r.image.width != h.width || r.image.height != h.height {
                return Err(Error::mismatch("record image width", h.width, r.image.width));
            }
            if r.mask.width != h.width || r.mask.height != h.height {
                return Err(Error::mismatch("record mask width", h.width, r.mask.width));
            }
        }
        Ok(())
    }

    /// Splits off the last `n` records into a second shard.
    pub fn split_tail(mut self, n: usize) -> (CorpusShard, Option<CorpusShard>) {
        if n == 0 || n >= self.records.len() {
            return (self, None);
        }
        let tail_records = self.records.split_off(self.records.len() - n);
        let mut tail_header = self.header.clone();
        tail_header.first_index += self.records.len() as u64;
        tail_header.skipped.clear();
        (
            self,
            Some(CorpusShard {
                header: tail_header,
                records: tail_records,
            }),
        )
    }

    fn record_size(&self) -> usize {
        let px = self.header.width * self.header.height;
        4 * self.header.m + 3 * px + px.div_ceil(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut w = ByteWriter::with_capacity(64 + 8 * h.skipped.len() + self.records.len() * self.record_size());
        w.bytes(SHARD_MAGIC);
        w.u32(SHARD_VERSION);
        w.u64(self.records.len() as u64);
        w.u32(h.m as u32);
        w.u32(h.width as u32);
        w.u32(h.height as u32);
        w.u64(h.global_seed);
        // header extension
        w.u64(h.first_index);
        w.u64(h.skipped.len() as u64);
        h.skipped.iter().for_each(|&i| w.u64(i));
        for r in &self.records {
            w.f32_slice(&r.params);
            w.bytes(&r.image.data);
            w.bytes(&r.mask.pack());
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "IFNC");
        r.header(SHARD_MAGIC, SHARD_VERSION)?;
        let count = r.u64()? as usize;
        let m = r.usize32()?;
        let width = r.usize32()?;
        let height = r.usize32()?;
        let global_seed = r.u64()?;
        let first_index = r.u64()?;
        let n_skipped = r.u64()? as usize;
        if n_skipped > r.remaining() / 8 {
            return Err(Error::Truncated("IFNC"));
        }
        let skipped = (0..n_skipped).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if count == 0 {
            return Err(Error::EmptyCorpus);
        }
        let px = width
            .checked_mul(height)
            .ok_or_else(|| Error::Malformed {
                format: "IFNC",
                reason: "image size overflow".into(),
            })?;
        let record_size = 4 * m + 3 * px + px.div_ceil(8);
        if count.checked_mul(record_size).is_none_or(|n| n > r.remaining()) {
            return Err(Error::Truncated("IFNC"));
        }
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let params = r.f32_vec(m)?;
            let image = RgbImage::from_raw(width, height, r.take(3 * px)?.to_vec())?;
            let mask = Mask::unpack(width, height, r.take(px.div_ceil(8))?)?;
            records.push(Record { params, image, mask });
        }
        r.finish()?;
        Ok(Self {
            header: ShardHeader {
                m,
                width,
                height,
                global_seed,
                first_index,
                skipped,
            },
            records,
        })
    }
}

pub fn write_shard(shard: &CorpusShard, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, shard.to_bytes())?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<CorpusShard> {
    CorpusShard::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::{generate_model, ModelSpec};

    fn small_model() -> FaceModel {
        generate_model(&ModelSpec {
            n_shape: 4,
            n_expr: 3,
            n_refl: 4,
            mesh_grid: (16, 16),
            rng_seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn sample_bounds_and_monochrome() {
        let prior = PriorSpec::default();
        let layout = ParamLayout::new(16, 8, 16);
        let yp = 40f64.to_radians() as f32 as f64;
        let roll = 15f64.to_radians() as f32 as f64;
        for i in 0..2000 {
            let t = sample_prior(&prior, layout, i);
            let r = t.rotation();
            assert!(r[0].abs() <= yp && r[1].abs() <= yp && r[2].abs() <= roll);
            let e = t.expression();
            assert!(e[0] >= -12.0 + 4.8 && e[0] <= 12.0 + 4.8);
            assert!(e[1..].iter().all(|v| (-12.0..=12.0).contains(v)));
            let il = t.illumination();
            for band in 0..9 {
                assert!(il[3 * band] == il[3 * band + 1] && il[3 * band] == il[3 * band + 2]);
            }
            assert!(il[0] >= 0.6 && il[0] <= 1.2);
            assert!(il[3..].iter().all(|v| v.abs() <= 0.2));
        }
    }

    #[test]
    fn colored_prior_breaks_channel_equality() {
        let prior = PriorSpec::shifted_target(9);
        let t = sample_prior(&prior, ParamLayout::new(2, 2, 2), 0);
        let il = t.illumination();
        assert!(il[0] != il[1] || il[1] != il[2]);
        assert!(t.expression().iter().all(|v| (4.0..=12.0).contains(v)));
    }

    #[test]
    fn groups_depend_only_on_seed_index_group() {
        let prior = PriorSpec::default();
        let a = sample_prior(&prior, ParamLayout::new(4, 3, 4), 17);
        // a larger layout changes neither rotation nor illumination of the same record
        let b = sample_prior(&prior, ParamLayout::new(6, 3, 5), 17);
        assert_eq!(a.rotation(), b.rotation());
        assert_eq!(a.illumination(), b.illumination());
        assert_eq!(a.expression(), b.expression());
        assert_eq!(&b.shape()[..4], a.shape());
        let c = sample_prior(&prior, ParamLayout::new(4, 3, 4), 18);
        assert_ne!(a.rotation(), c.rotation());
    }

    #[test]
    fn toggles_zero_groups() {
        let prior = PriorSpec {
            shape_dist: false,
            refl_dist: false,
            ..PriorSpec::default()
        };
        let t = sample_prior(&prior, ParamLayout::new(4, 3, 4), 3);
        assert!(t.shape().iter().all(|&v| v == 0.0));
        assert!(t.reflectance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::default().validate().is_ok());
        let p = PriorSpec {
            expr_range: (1.0, 1.0),
            ..PriorSpec::default()
        };
        assert!(p.validate().is_err());
        let p = PriorSpec {
            illum_dc_range: (-0.1, 0.5),
            ..PriorSpec::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn concatenated_single_records_match_batch() {
        let model = small_model();
        let cam = CameraSpec::square(32);
        let prior = PriorSpec::default();
        let both = generate_corpus(&model, &cam, &prior, 2).unwrap();
        let first = generate_corpus_range(&model, &cam, &prior, 0, 1).unwrap();
        let second = generate_corpus_range(&model, &cam, &prior, 1, 1).unwrap();
        assert_eq!(both.records[0], first.records[0]);
        assert_eq!(both.records[1], second.records[0]);
        let bytes = both.to_bytes();
        let tail = |s: &CorpusShard| {
            let b = s.to_bytes();
            b[b.len() - s.len() * s.record_size()..].to_vec()
        };
        assert_eq!(
            bytes[bytes.len() - 2 * both.record_size()..],
            [tail(&first), tail(&second)].concat()[..]
        );
    }

    #[test]
    fn shard_round_trip_and_errors() {
        let model = small_model();
        let shard = generate_corpus(&model, &CameraSpec::square(24), &PriorSpec::default(), 3).unwrap();
        let bytes = shard.to_bytes();
        let back = CorpusShard::from_bytes(&bytes).unwrap();
        assert_eq!(back, shard);
        assert_eq!(back.to_bytes(), bytes);

        assert!(matches!(
            CorpusShard::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(CorpusShard::from_bytes(&bytes[..10]), Err(Error::Truncated(_))));
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"IFNM");
        assert!(matches!(CorpusShard::from_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            CorpusShard::from_bytes(&bad),
            Err(Error::UnsupportedVersion { .. })
        ));
        assert!(matches!(back.ensure_m(71), Err(Error::DimensionMismatch { .. })));
        assert!(back.ensure_m(model.layout().len()).is_ok());
    }

    #[test]
    fn empty_corpus_rejected() {
        let model = small_model();
        assert!(matches!(
            generate_corpus(&model, &CameraSpec::square(16), &PriorSpec::default(), 0),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn split_tail_keeps_indices() {
        let model = small_model();
        let shard = generate_corpus(&model, &CameraSpec::square(16), &PriorSpec::default(), 5).unwrap();
        let (head, tail) = shard.clone().split_tail(2);
        let tail = tail.unwrap();
        assert_eq!(head.len(), 3);
        assert_eq!(tail.header.first_index, 3);
        assert_eq!(tail.records[..], shard.records[3..]);
    }
}

//! On-disk formats: `DPT1` tensors, binary PPM images, `DPW1` checkpoints,
//! the `key = value` run configuration and dataset directories.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Architecture, ClassifierParams, ModelParams};
use crate::synthdata::{Dataset, DatasetSpec, Sample};
use crate::tensor::{Labels, Tensor};
use crate::trainer::{LayoutConfig, LossMask, Models, OptimizerKind, TrainConfig};

const TENSOR_MAGIC: &[u8; 4] = b"DPT1";
const CHECKPOINT_MAGIC: &[u8; 4] = b"DPW1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_dims(cur: &mut Cursor) -> Result<Vec<usize>> {
    let rank = cur.u8()? as usize;
    let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    Ok(dims)
}

fn element_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("tensor dimensions overflow"))
}

fn write_dims(out: &mut Vec<u8>, dims: &[usize]) -> Result<()> {
    let rank = u8::try_from(dims.len()).map_err(|_| format_err("rank exceeds 255"))?;
    out.push(rank);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| format_err("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

/// Payload of a `DPT1` file.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U16(Vec<u16>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U16(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            dims: t.shape().to_vec(),
            data: TensorData::F64(t.data().to_vec()),
        }
    }

    pub fn from_labels(l: &Labels) -> Self {
        Self {
            dims: vec![l.height(), l.width()],
            data: TensorData::U16(l.data().to_vec()),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U16(v) => v.iter().map(|&x| x as f64).collect(),
        };
        Tensor::new(self.dims.clone(), data)
    }

    pub fn to_labels(&self) -> Result<Labels> {
        match (&self.data, self.dims.as_slice()) {
            (TensorData::U16(v), &[h, w]) => Labels::new(h, w, v.clone()),
            _ => Err(format_err("label files must hold a rank-2 u16 tensor")),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        if element_count(&self.dims)? != self.data.len() {
            return Err(format_err("payload length does not match the dimensions"));
        }
        let mut out = TENSOR_MAGIC.to_vec();
        write_dims(&mut out, &self.dims)?;
        match &self.data {
            TensorData::F32(v) => {
                out.push(0);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            TensorData::F64(v) => {
                out.push(1);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
            TensorData::U16(v) => {
                out.push(2);
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != TENSOR_MAGIC {
            return Err(format_err("missing DPT1 magic"));
        }
        let dims = read_dims(&mut cur)?;
        let count = element_count(&dims)?;
        let tag = cur.u8()?;
        let size = match tag {
            0 => 4,
            1 => 8,
            2 => 2,
            _ => return Err(format_err(format!("unknown dtype tag {tag}"))),
        };
        let remaining = bytes.len() - cur.pos;
        if Some(remaining) != count.checked_mul(size) {
            return Err(format_err(format!(
                "payload holds {remaining} bytes, {count} elements of {size} bytes expected"
            )));
        }
        let payload = cur.take(remaining)?;
        let data = match tag {
            0 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            1 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            ),
            _ => TensorData::U16(
                payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Encodes an `H×W×3` image with values in `[0,1]` as binary PPM.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match *image.shape() {
        [h, w, 3] => (h, w),
        _ => return Err(Error::dim(format!("PPM needs an H×W×3 image, got {:?}", image.shape()))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&x| {
        let x = if x.is_finite() { x.clamp(0.0, 1.0) } else { 0.0 };
        (x * 255.0).round() as u8
    }));
    Ok(out)
}

/// Decodes an 8-bit binary PPM into an `H×W×3` image scaled to `[0,1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_err("PPM header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(format_err(format!("expected a P6 PPM, found '{}'", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad PPM header field '{s}'")));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(format_err(format!("only 8-bit PPM is supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let expected = w * h * 3;
    if bytes.len() < pos || bytes.len() - pos != expected {
        return Err(format_err(format!("PPM raster should hold {expected} bytes")));
    }
    Tensor::new(vec![h, w, 3], bytes[pos..].iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

/// Named `f32` tensors in file order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Checkpoint {
    pub records: Vec<(String, Tensor)>,
}

fn arch_tensor(arch: &Architecture) -> Tensor {
    let mut v = vec![arch.in_channels as f64, arch.num_classes as f64, arch.channels.len() as f64];
    v.extend(arch.channels.iter().map(|&c| c as f64));
    v.extend(arch.strides.iter().map(|&s| s as f64));
    Tensor::new(vec![v.len()], v).expect("non-empty")
}

fn arch_from_tensor(t: &Tensor) -> Result<Architecture> {
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    let bad = || format_err("malformed meta.arch record");
    let layers = *v.get(2).ok_or_else(bad)?;
    if v.len() != 3 + 2 * layers {
        return Err(bad());
    }
    let arch = Architecture {
        in_channels: v[0],
        num_classes: v[1],
        channels: v[3..3 + layers].to_vec(),
        strides: v[3 + layers..].to_vec(),
    };
    arch.validate().map_err(|_| bad())?;
    Ok(arch)
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push(&mut self, name: impl Into<String>, t: &Tensor) {
        // the payload is f32; store the rounded values so encode/decode is lossless
        self.records.push((name.into(), t.map(|x| x as f32 as f64)));
    }

    /// Drops every record whose name starts with `prefix`; returns how many.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let before = self.records.len();
        self.records.retain(|(n, _)| !n.starts_with(prefix));
        before - self.records.len()
    }

    pub fn from_models(models: &Models, layout: &LayoutConfig, erp_size: (usize, usize)) -> Self {
        let mut ck = Checkpoint::default();
        ck.push("meta.arch", &arch_tensor(&models.erp.arch));
        let meta = [layout.fov.to_degrees(), layout.patch_size as f64, erp_size.0 as f64, erp_size.1 as f64];
        ck.push("meta.layout", &Tensor::new(vec![4], meta.to_vec()).expect("4 values"));
        let mut add_model = |prefix: &str, m: &ModelParams| {
            for (name, t) in m.tensor_names().iter().zip(m.tensors()) {
                ck.push(format!("{prefix}.{name}"), t);
            }
        };
        add_model("erp", &models.erp);
        if let Some(tp) = &models.tp {
            add_model("tp", tp);
        }
        for (prefix, cls) in [("erp_cls", &models.erp_classifier), ("tp_cls", &models.tp_classifier)] {
            if let Some(cls) = cls {
                for (name, t) in cls.tensor_names().iter().zip(cls.tensors()) {
                    ck.push(format!("{prefix}.{name}"), t);
                }
            }
        }
        ck
    }

    /// Rebuilds the networks; missing tangent-path or classifier records
    /// leave the corresponding entries empty.
    pub fn models(&self) -> Result<(Models, LayoutConfig, (usize, usize))> {
        let arch = arch_from_tensor(self.get("meta.arch").ok_or_else(|| format_err("missing meta.arch"))?)?;
        let meta = self.get("meta.layout").ok_or_else(|| format_err("missing meta.layout"))?;
        let m = meta.data();
        if m.len() != 4 {
            return Err(format_err("malformed meta.layout record"));
        }
        let layout = LayoutConfig {
            fov: m[0].to_radians(),
            patch_size: m[1] as usize,
        };
        let erp_size = (m[2] as usize, m[3] as usize);
        let collect = |prefix: &str, names: Vec<String>| -> Result<Option<Vec<Tensor>>> {
            let found: Vec<Option<&Tensor>> = names.iter().map(|n| self.get(&format!("{prefix}.{n}"))).collect();
            if found.iter().all(Option::is_none) {
                return Ok(None);
            }
            found
                .into_iter()
                .zip(&names)
                .map(|(t, n)| t.cloned().ok_or_else(|| format_err(format!("missing {prefix}.{n}"))))
                .collect::<Result<Vec<_>>>()
                .map(Some)
        };
        let names = ModelParams::zeros(&arch)?.tensor_names();
        let erp = collect("erp", names.clone())?.ok_or_else(|| format_err("missing ERP-path weights"))?;
        let erp = ModelParams::from_tensors(&arch, erp)?;
        let tp = collect("tp", names)?.map(|t| ModelParams::from_tensors(&arch, t)).transpose()?;
        let f = arch.feature_channels();
        let cls_names = ClassifierParams::zeros(f).tensor_names();
        let erp_classifier = collect("erp_cls", cls_names.clone())?
            .map(|t| ClassifierParams::from_tensors(f, t))
            .transpose()?;
        let tp_classifier = collect("tp_cls", cls_names)?
            .map(|t| ClassifierParams::from_tensors(f, t))
            .transpose()?;
        Ok((
            Models {
                erp,
                tp,
                erp_classifier,
                tp_classifier,
            },
            layout,
            erp_size,
        ))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        for (name, t) in &self.records {
            let len = u32::try_from(name.len()).map_err(|_| format_err("record name too long"))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_dims(&mut out, t.shape())?;
            for &x in t.data() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(format_err("missing DPW1 magic"));
        }
        let mut records = Vec::new();
        while !cur.at_end() {
            let len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| format_err("record name is not UTF-8"))?
                .to_string();
            let dims = read_dims(&mut cur)?;
            let count = element_count(&dims)?;
            let payload = cur.take(count.checked_mul(4).ok_or_else(|| format_err("record too large"))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            records.push((name, Tensor::new(dims, data)?));
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

/// Everything a `train`, `synth` or `ablate` run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
    /// Read the dataset from this directory instead of generating it.
    pub data_dir: Option<PathBuf>,
    pub ablation_masks: Vec<LossMask>,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: DatasetSpec::default(),
            data_dir: None,
            ablation_masks: LossMask::standard_set(),
            ablation_seeds: vec![0, 1, 2],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.data.erp_size != self.train.erp_size {
            return Err(Error::Config("data and training ERP sizes differ".into()));
        }
        if self.ablation_masks.is_empty() || self.ablation_seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one mask and one seed".into()));
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data_dir {
            Some(dir) => load_dataset(dir),
            None => self.data.generate(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse '{value}' for {key}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: {key} expects true or false, got '{value}'"))),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(line, key, v.trim()))
        .collect()
}

/// Parses the `[section]` / `key = value` configuration format.
///
/// `#` starts a comment. Angles are given in degrees. Unknown sections or
/// keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    let mut classes: Option<usize> = None;
    let mut erp_size = cfg.train.erp_size;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            if !["train", "layout", "loss", "data"].contains(&section.as_str()) {
                return Err(Error::Config(format!("line {line}: unknown section [{section}]")));
            }
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::Config(format!("line {line}: expected 'key = value'")))?;
        let t = &mut cfg.train;
        let d = &mut cfg.data;
        match (section.as_str(), key) {
            ("train", "steps") => t.steps = parse_value(line, key, value)?,
            ("train", "warmup_steps") => t.warmup_steps = parse_value(line, key, value)?,
            ("train", "seed") => t.seed = parse_value(line, key, value)?,
            ("train", "lr") => t.lr = parse_value(line, key, value)?,
            ("train", "optimizer") => {
                t.optimizer = match value {
                    "adam" => OptimizerKind::Adam,
                    "sgd" => OptimizerKind::Sgd,
                    _ => return Err(Error::Config(format!("line {line}: optimizer must be adam or sgd"))),
                }
            }
            ("train", "beta1") => t.beta1 = parse_value(line, key, value)?,
            ("train", "beta2") => t.beta2 = parse_value(line, key, value)?,
            ("train", "weight_decay") => t.weight_decay = parse_value(line, key, value)?,
            ("train", "batch_source") => t.batch_source = parse_value(line, key, value)?,
            ("train", "batch_target") => t.batch_target = parse_value(line, key, value)?,
            ("train", "crops_per_source") => t.crops_per_source = parse_value(line, key, value)?,
            ("train", "stop_gradient_erp") => t.stop_gradient_erp = parse_bool(line, key, value)?,
            ("train", "supervise_tp") => t.supervise_tp = parse_bool(line, key, value)?,
            ("train", "eval_every") => t.eval_every = parse_value(line, key, value)?,
            ("train", "eval_mode") => t.eval_mode = value.parse()?,
            ("train", "mask") => t.mask = value.parse()?,
            ("train", "channels") => t.arch.channels = parse_list(line, key, value)?,
            ("train", "strides") => t.arch.strides = parse_list(line, key, value)?,
            ("train", "ablation_masks") => {
                cfg.ablation_masks = value.split(',').map(str::parse).collect::<Result<Vec<_>>>()?
            }
            ("train", "ablation_seeds") => cfg.ablation_seeds = parse_list(line, key, value)?,
            ("layout", "fov_deg") => t.layout.fov = parse_value::<f64>(line, key, value)?.to_radians(),
            ("layout", "patch_size") => t.layout.patch_size = parse_value(line, key, value)?,
            ("loss", "tau") => t.loss.tau = parse_value(line, key, value)?,
            ("loss", "alpha") => t.loss.alpha = parse_value(line, key, value)?,
            ("loss", "beta") => t.loss.beta = parse_value(line, key, value)?,
            ("loss", "fc_weight") => t.loss.fc_weight = parse_value(line, key, value)?,
            ("loss", "kl_epsilon") => t.loss.kl_epsilon = parse_value(line, key, value)?,
            ("data", "seed") => d.seed = parse_value(line, key, value)?,
            ("data", "erp_height") => erp_size.0 = parse_value(line, key, value)?,
            ("data", "erp_width") => erp_size.1 = parse_value(line, key, value)?,
            ("data", "num_classes") => classes = Some(parse_value(line, key, value)?),
            ("data", "num_objects") => d.num_objects = parse_value(line, key, value)?,
            ("data", "source_count") => d.source_count = parse_value(line, key, value)?,
            ("data", "target_count") => d.target_count = parse_value(line, key, value)?,
            ("data", "eval_count") => d.eval_count = parse_value(line, key, value)?,
            ("data", "brightness") => d.source_style.brightness = parse_value(line, key, value)?,
            ("data", "contrast") => d.source_style.contrast = parse_value(line, key, value)?,
            ("data", "hue_deg") => d.source_style.hue_deg = parse_value(line, key, value)?,
            ("data", "noise_sigma") => d.source_style.noise_sigma = parse_value(line, key, value)?,
            ("data", "dir") => cfg.data_dir = Some(PathBuf::from(value)),
            ("", _) => return Err(Error::Config(format!("line {line}: key '{key}' outside a section"))),
            (s, _) => return Err(Error::Config(format!("line {line}: unknown key '{key}' in [{s}]"))),
        }
    }
    if let Some(c) = classes {
        cfg.train.arch.num_classes = c;
        cfg.train.loss.num_classes = c;
        cfg.data.num_classes = c;
    }
    cfg.train.erp_size = erp_size;
    cfg.data.erp_size = erp_size;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

const SPLITS: [&str; 3] = ["source", "target", "eval"];

/// Writes `<dir>/{source,target,eval}/NNNNNN.ppm` images and matching
/// `NNNNNN.labels.dpt` label files.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for (split, samples) in SPLITS.iter().zip([&data.source, &data.target, &data.eval]) {
        let sub = dir.join(split);
        fs::create_dir_all(&sub)?;
        for (i, s) in samples.iter().enumerate() {
            write_ppm(&sub.join(format!("{i:06}.ppm")), &s.image)?;
            TensorFile::from_labels(&s.labels).save(&sub.join(format!("{i:06}.labels.dpt")))?;
        }
    }
    Ok(())
}

fn load_split(dir: &Path) -> Result<Vec<Sample>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut stems: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    stems.sort();
    stems
        .iter()
        .map(|p| {
            let image = read_ppm(p)?;
            let labels = TensorFile::load(&p.with_extension("labels.dpt"))?.to_labels()?;
            if labels.height() != image.shape()[0] || labels.width() != image.shape()[1] {
                return Err(format_err(format!("labels of {} do not match the image", p.display())));
            }
            Ok(Sample { image, labels })
        })
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset directory {} does not exist", dir.display()),
        )));
    }
    Ok(Dataset {
        source: load_split(&dir.join("source"))?,
        target: load_split(&dir.join("target"))?,
        eval: load_split(&dir.join("eval"))?,
    })
}

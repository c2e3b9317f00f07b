//! Binary parameter containers: a four-byte magic, `key=value` header lines
//! closed by a blank line, then little-endian `f32` tensor data in header
//! order.

use std::path::Path;

use tgfuse_autodiff::{AdamState, Scalar, Tensor};

use crate::config::{RunConfig, RUN_KEYS};
use crate::discriminator::PerceptualNet;
use crate::error::{FuseError, Result};
use crate::generator::Generator;
use crate::io::{read_file, write_atomic};

pub const GENERATOR_MAGIC: &[u8; 4] = b"TGF1";
pub const DISCRIMINATOR_MAGIC: &[u8; 4] = b"TGFD";

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn new(magic: &[u8; 4]) -> Self {
        Container {
            magic: *magic,
            header: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) {
        self.tensors.push((name.to_string(), t.cast()));
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.magic.to_vec();
        out.push(b'\n');
        for (k, v) in &self.header {
            out.extend(format!("{k}={v}\n").bytes());
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            out.extend(format!("tensor={name} {}\n", dims.join("x")).bytes());
        }
        out.push(b'\n');
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], expect_magic: &[u8; 4], context: &str) -> Result<Container> {
        let fmt = |off: usize, d: String| FuseError::format(context, off as u64, d);
        if bytes.len() < 5 || &bytes[..4] != expect_magic || bytes[4] != b'\n' {
            return Err(fmt(
                0,
                format!("expected magic {}", String::from_utf8_lossy(expect_magic)),
            ));
        }
        let mut pos = 5;
        let mut header = Vec::new();
        let mut decls = Vec::new();
        loop {
            let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
                return Err(fmt(pos, "header not terminated by a blank line".into()));
            };
            let line = std::str::from_utf8(&bytes[pos..pos + len])
                .map_err(|_| fmt(pos, "header is not UTF-8".into()))?;
            let start = pos;
            pos += len + 1;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fmt(start, format!("bad header line {line:?}")))?;
            if k == "tensor" {
                let (name, dims) = v
                    .rsplit_once(' ')
                    .ok_or_else(|| fmt(start, format!("bad tensor declaration {v:?}")))?;
                let shape = dims
                    .split('x')
                    .map(str::parse)
                    .collect::<std::result::Result<Vec<usize>, _>>()
                    .map_err(|_| fmt(start, format!("bad dimensions {dims:?}")))?;
                if shape.is_empty() || shape.contains(&0) {
                    return Err(fmt(start, format!("bad dimensions {dims:?}")));
                }
                decls.push((name.to_string(), shape));
            } else {
                header.push((k.to_string(), v.to_string()));
            }
        }
        let mut tensors = Vec::with_capacity(decls.len());
        for (name, shape) in decls {
            let n: usize = shape.iter().product();
            let end = pos + 4 * n;
            if end > bytes.len() {
                return Err(fmt(
                    bytes.len(),
                    format!("truncated data for tensor {name}: need {} more bytes", end - bytes.len()),
                ));
            }
            let data = bytes[pos..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data).expect("declared shape")));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(fmt(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Container {
            magic: *expect_magic,
            header,
            tensors,
        })
    }

    /// Removes and returns the tensors whose names start with `prefix`,
    /// with the prefix stripped, converted to `T`.
    fn take_prefixed<T: Scalar>(&mut self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        let (hit, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tensors)
            .into_iter()
            .partition(|(n, _)| n.starts_with(prefix));
        self.tensors = rest;
        hit.into_iter()
            .map(|(n, t)| (n[prefix.len()..].to_string(), t.cast()))
            .collect()
    }
}

fn header_u64(c: &Container, key: &str, context: &str) -> Result<u64> {
    match c.get(key) {
        None => Ok(0),
        Some(v) => v
            .parse()
            .map_err(|_| FuseError::format(context, 0, format!("bad {key} value {v:?}"))),
    }
}

fn push_adam<T: Scalar>(c: &mut Container, names: &[String], adam: &AdamState<T>) {
    c.header.push(("adam_step".into(), adam.step.to_string()));
    for (n, m) in names.iter().zip(&adam.m) {
        c.push_tensor(&format!("adam.m.{n}"), m);
    }
    for (n, v) in names.iter().zip(&adam.v) {
        c.push_tensor(&format!("adam.v.{n}"), v);
    }
}

fn take_adam<T: Scalar>(
    c: &mut Container,
    names: &[String],
    shapes: &[&[usize]],
    context: &str,
) -> Result<Option<AdamState<T>>> {
    let m = c.take_prefixed::<T>("adam.m.");
    let v = c.take_prefixed::<T>("adam.v.");
    if m.is_empty() && v.is_empty() {
        return Ok(None);
    }
    let check = |list: &[(String, Tensor<T>)], which: &str| -> Result<()> {
        if list.len() != names.len() {
            return Err(FuseError::format(context, 0, format!("{} Adam {which} tensors for {} parameters", list.len(), names.len())));
        }
        for ((n, t), (want, shape)) in list.iter().zip(names.iter().zip(shapes)) {
            if n != want || t.shape() != *shape {
                return Err(FuseError::format(context, 0, format!("Adam {which} tensor {n} does not match parameter {want}")));
            }
        }
        Ok(())
    };
    check(&m, "moment")?;
    check(&v, "variance")?;
    Ok(Some(AdamState {
        m: m.into_iter().map(|(_, t)| t).collect(),
        v: v.into_iter().map(|(_, t)| t).collect(),
        step: header_u64(c, "adam_step", context)?,
    }))
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct GeneratorCheckpoint<T> {
    pub run: RunConfig,
    pub generator: Generator<T>,
    pub adam: Option<AdamState<T>>,
    /// Completed training steps.
    pub step: u64,
}

pub fn encode_generator<T: Scalar>(
    run: &RunConfig,
    generator: &Generator<T>,
    adam: Option<&AdamState<T>>,
    step: u64,
) -> Vec<u8> {
    let mut c = Container::new(GENERATOR_MAGIC);
    let mut run = run.clone();
    run.fusion = generator.config.clone();
    for k in RUN_KEYS {
        c.header.push((k.to_string(), run.get(k).expect("listed key")));
    }
    c.header.push(("step".into(), step.to_string()));
    let names: Vec<String> = generator.params.specs().iter().map(|s| s.name.clone()).collect();
    for (n, t) in names.iter().zip(generator.params.tensors()) {
        c.push_tensor(&format!("param.{n}"), t);
    }
    if let Some(adam) = adam {
        push_adam(&mut c, &names, adam);
    }
    c.encode()
}

pub fn decode_generator<T: Scalar>(bytes: &[u8], context: &str) -> Result<GeneratorCheckpoint<T>> {
    let mut c = Container::decode(bytes, GENERATOR_MAGIC, context)?;
    let mut run = RunConfig::default();
    for (k, v) in &c.header {
        if RUN_KEYS.contains(&k.as_str()) {
            run.set(k, v)
                .map_err(|e| FuseError::format(context, 0, e.to_string()))?;
        }
    }
    run.validate()
        .map_err(|e| FuseError::format(context, 0, e.to_string()))?;
    let step = header_u64(&c, "step", context)?;
    let mut generator = Generator::<T>::new(run.fusion.clone(), 0)?;
    let params = c.take_prefixed::<T>("param.");
    generator
        .params
        .replace(params)
        .map_err(|e| FuseError::format(context, 0, e.to_string()))?;
    let names: Vec<String> = generator.params.specs().iter().map(|s| s.name.clone()).collect();
    let shapes: Vec<&[usize]> = generator.params.specs().iter().map(|s| s.shape.as_slice()).collect();
    let adam = take_adam(&mut c, &names, &shapes, context)?;
    Ok(GeneratorCheckpoint {
        run,
        generator,
        adam,
        step,
    })
}

pub fn save_generator<T: Scalar>(
    path: &Path,
    run: &RunConfig,
    generator: &Generator<T>,
    adam: Option<&AdamState<T>>,
    step: u64,
) -> Result<()> {
    write_atomic(path, &encode_generator(run, generator, adam, step))
}

pub fn load_generator<T: Scalar>(path: &Path) -> Result<GeneratorCheckpoint<T>> {
    decode_generator(&read_file(path)?, &path.display().to_string())
}

pub fn encode_discriminator<T: Scalar>(net: &PerceptualNet<T>, adam: Option<&AdamState<T>>) -> Vec<u8> {
    let mut c = Container::new(DISCRIMINATOR_MAGIC);
    let names: Vec<String> = net.params.specs().iter().map(|s| s.name.clone()).collect();
    for (n, t) in names.iter().zip(net.params.tensors()) {
        c.push_tensor(n, t);
    }
    if let Some(adam) = adam {
        push_adam(&mut c, &names, adam);
    }
    c.encode()
}

/// Installs weights into `net`; on any error `net` is left unmodified.
/// Returns the optimizer state if the file carries one.
pub fn decode_discriminator_into<T: Scalar>(
    net: &mut PerceptualNet<T>,
    bytes: &[u8],
    context: &str,
) -> Result<Option<AdamState<T>>> {
    let mut c = Container::decode(bytes, DISCRIMINATOR_MAGIC, context)?;
    let names: Vec<String> = net.params.specs().iter().map(|s| s.name.clone()).collect();
    let shapes: Vec<&[usize]> = net.params.specs().iter().map(|s| s.shape.as_slice()).collect();
    let adam = take_adam(&mut c, &names, &shapes, context)?;
    let params: Vec<(String, Tensor<T>)> = c.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect();
    if let Some(((n, t), (want, shape))) = params
        .iter()
        .zip(names.iter().zip(&shapes))
        .find(|((n, t), (want, shape))| n != *want || t.shape() != **shape)
    {
        return Err(FuseError::format(
            context,
            0,
            format!("tensor {n} {:?} does not match expected {want} {shape:?}", t.shape()),
        ));
    }
    if params.len() != names.len() {
        return Err(FuseError::format(
            context,
            0,
            format!("{} tensors for a {}-tensor network", params.len(), names.len()),
        ));
    }
    net.params
        .replace(params)
        .map_err(|e| FuseError::format(context, 0, e.to_string()))?;
    Ok(adam)
}

pub fn save_discriminator<T: Scalar>(path: &Path, net: &PerceptualNet<T>, adam: Option<&AdamState<T>>) -> Result<()> {
    write_atomic(path, &encode_discriminator(net, adam))
}

pub fn load_discriminator_into<T: Scalar>(net: &mut PerceptualNet<T>, path: &Path) -> Result<Option<AdamState<T>>> {
    decode_discriminator_into(net, &read_file(path)?, &path.display().to_string())
}

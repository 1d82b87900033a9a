//! Model manifests and real-valued tensor files.
//!
//! A quantized model is a directory holding a text manifest plus one binary
//! file per weight or scale vector:
//!
//! ```text
//! shiftflow-model v1
//! input dims=3x64x64 bits=8 alpha=0.0039
//! layer kind=conv33 stride=2 in=3x64x64 n=8 fusion=into_dw prec=8/3/4 alpha=0.41 weights=l00.pow2w a=l00.a.fixs b=l00.b.fixs
//! layer kind=head11 stride=1 in=64x4x4 n=12 fusion=none prec=4/8/16 alpha=0.002 weights=l23.i8w bias=l23.i16v
//! ```
//!
//! A float model uses `shiftflow-float v1` and one `flayer` file per layer.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fixq::io::{self as fio, load, save};
use crate::fixq::Dims;
use crate::kernels::{LayerKind, LayerSpec, Precision};
use crate::quantizer::{FloatLayer, FloatNetwork, LayerBody, MergedLayerParams, QuantLayer, QuantModel, RealTensor};

pub const MODEL_MAGIC: &str = "shiftflow-model v1";
pub const FLOAT_MAGIC: &str = "shiftflow-float v1";
pub const MANIFEST: &str = "model.txt";

pub fn parse_dims(s: &str) -> Option<Dims> {
    let v: Vec<usize> = s.split('x').map(str::parse).collect::<Result<_, _>>().ok()?;
    match v[..] {
        [c, h, w] => Some(Dims::new(c, h, w)),
        _ => None,
    }
}

struct Line<'a> {
    src: &'a str,
    no: usize,
    kv: HashMap<&'a str, &'a str>,
}

impl<'a> Line<'a> {
    fn parse(text: &'a str, src: &'a str, no: usize) -> Result<Self> {
        let mut kv = HashMap::new();
        for tok in text.split_whitespace().skip(1) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::parse(src, no, format!("expected key=value, got {tok:?}")))?;
            kv.insert(k, v);
        }
        Ok(Line { src, no, kv })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.kv
            .get(key)
            .copied()
            .ok_or_else(|| Error::parse(self.src, self.no, format!("missing {key}=")))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| Error::parse(self.src, self.no, format!("bad {key}={v}")))
    }

    fn dims(&self, key: &str) -> Result<Dims> {
        let v = self.raw(key)?;
        parse_dims(v).ok_or_else(|| Error::parse(self.src, self.no, format!("bad {key}={v}, want CxHxW")))
    }

    fn spec(&self) -> Result<LayerSpec> {
        let kind: LayerKind = self.get("kind")?;
        let p = self.raw("prec")?;
        let bits: Vec<u8> = p
            .split('/')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Error::parse(self.src, self.no, format!("bad prec={p}")))?;
        let [a, w, o] = bits[..] else {
            return Err(Error::parse(self.src, self.no, format!("bad prec={p}, want M/N/M")));
        };
        let mut spec = LayerSpec::new(kind, self.get("stride")?, self.dims("in")?, self.get("n")?)
            .with_precision(Precision::new(a, w, o));
        spec.fusion = self.get("fusion")?;
        spec.validate().map_err(|e| Error::parse(self.src, self.no, e))?;
        Ok(spec)
    }
}

fn spec_fields(s: &LayerSpec) -> String {
    let p = s.precision;
    format!(
        "kind={} stride={} in={} n={} fusion={} prec={}/{}/{}",
        s.kind, s.stride, s.input, s.kernels, s.fusion, p.act_in, p.weight, p.act_out
    )
}

/// Non-comment lines after the magic line, numbered from 1.
fn manifest_lines(text: &str, src: &str, magic: &str) -> Result<Vec<(usize, String)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim().to_owned()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == magic => Ok(lines.collect()),
        _ => Err(Error::parse(src, 1, format!("expected `{magic}` header"))),
    }
}

/// Write `model` as `dir/model.txt` plus its weight files.
pub fn write_model(dir: &Path, model: &QuantModel) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut m = format!(
        "{MODEL_MAGIC}\ninput dims={} bits={} alpha={}\n",
        model.input,
        model.input_bits,
        model.input_alpha()
    );
    for (i, l) in model.layers.iter().enumerate() {
        let files = match &l.body {
            LayerBody::Shift { weights, params } => {
                let (w, a, b) = (format!("l{i:02}.pow2w"), format!("l{i:02}.a.fixs"), format!("l{i:02}.b.fixs"));
                save(&dir.join(&w), |f| fio::write_pow2_weights(f, weights))?;
                save(&dir.join(&a), |f| fio::write_fixed_vec(f, params.a()))?;
                save(&dir.join(&b), |f| fio::write_fixed_vec(f, params.b()))?;
                format!("weights={w} a={a} b={b}")
            }
            LayerBody::Head { weights, bias } => {
                let (w, b) = (format!("l{i:02}.i8w"), format!("l{i:02}.i16v"));
                save(&dir.join(&w), |f| fio::write_int8_weights(f, weights))?;
                save(&dir.join(&b), |f| fio::write_i16_vec(f, bias))?;
                format!("weights={w} bias={b}")
            }
        };
        m.push_str(&format!("layer {} alpha={} {files}\n", spec_fields(&l.spec), l.alpha_out()));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, m)?;
    Ok(path)
}

/// Read a model manifest; a directory means `dir/model.txt`.
pub fn read_model(path: &Path) -> Result<QuantModel> {
    let path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let dir = path.parent().unwrap_or(Path::new("."));
    let src = path.display().to_string();
    let text = fs::read_to_string(&path).map_err(Error::file(&path))?;
    let lines = manifest_lines(&text, &src, MODEL_MAGIC)?;
    let mut input = None;
    let mut layers = Vec::new();
    for (no, l) in &lines {
        let line = Line::parse(l, &src, *no)?;
        match l.split_whitespace().next() {
            Some("input") => input = Some((line.dims("dims")?, line.get::<u8>("bits")?, line.get::<f64>("alpha")?)),
            Some("layer") => {
                let i = layers.len();
                layers.push(read_layer(&line, dir).map_err(|e| e.in_layer(i))?);
            }
            Some(other) => return Err(Error::parse(&src, *no, format!("unknown record {other:?}"))),
            None => unreachable!(),
        }
    }
    let (dims, bits, alpha) = input.ok_or_else(|| Error::parse(&src, 0, "missing input record"))?;
    QuantModel::new(dims, bits, alpha, layers)
}

fn read_layer(line: &Line, dir: &Path) -> Result<QuantLayer> {
    let spec = line.spec()?;
    let alpha: f64 = line.get("alpha")?;
    let file = |key: &str| -> Result<PathBuf> { Ok(dir.join(line.raw(key)?)) };
    let body = if spec.kind == LayerKind::Head11 {
        let weights = load(&file("weights")?, fio::read_int8_weights)?;
        let bias = load(&file("bias")?, fio::read_i16_vec)?;
        if weights.kernels() != spec.kernels || weights.channels() != spec.input.c || bias.len() != spec.kernels {
            return Err(Error::dim("head weights or bias do not match the layer"));
        }
        LayerBody::Head { weights, bias }
    } else {
        let weights = load(&file("weights")?, fio::read_pow2_weights)?;
        let a = load(&file("a")?, fio::read_fixed_vec)?;
        let b = load(&file("b")?, fio::read_fixed_vec)?;
        let params = MergedLayerParams::new(a, b)?;
        crate::kernels::ShiftLayer::new(&spec, &weights, &params)?;
        LayerBody::Shift { weights, params }
    };
    Ok(QuantLayer::new(spec, body, alpha))
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize, src: &str) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)
        .map_err(|_| Error::parse(src, 2, format!("payload shorter than {n} values")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::parse(src, 2, "trailing bytes after payload"));
    }
    Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
}

fn header_fields(r: &mut impl BufRead, src: &str, magic: &str, n: usize) -> Result<Vec<usize>> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n + 2 || f[0] != magic || f[1] != "v1" {
        return Err(Error::parse(src, 1, format!("expected `{magic} v1` header with {n} fields")));
    }
    f[2..]
        .iter()
        .map(|s| s.parse().map_err(|_| Error::parse(src, 1, format!("bad field {s:?}"))))
        .collect()
}

/// `rtensor v1 c h w` followed by c·h·w little-endian f64.
pub fn write_rtensor(w: &mut impl Write, t: &RealTensor) -> Result<()> {
    let d = t.dims();
    writeln!(w, "rtensor v1 {} {} {}", d.c, d.h, d.w)?;
    write_f64s(w, t.data())
}

pub fn read_rtensor(r: &mut impl BufRead, src: &str) -> Result<RealTensor> {
    let f = header_fields(r, src, "rtensor", 3)?;
    let dims = Dims::new(f[0], f[1], f[2]);
    RealTensor::new(dims, read_f64s(r, dims.len(), src)?)
}

/// `flayer v1 count n` followed by `count` weights, n γ and n b (f64).
fn write_flayer(w: &mut impl Write, l: &FloatLayer) -> Result<()> {
    writeln!(w, "flayer v1 {} {}", l.weights.len(), l.gamma.len())?;
    write_f64s(w, &l.weights)?;
    write_f64s(w, &l.gamma)?;
    write_f64s(w, &l.bias)
}

fn read_flayer(r: &mut impl BufRead, src: &str, spec: LayerSpec) -> Result<FloatLayer> {
    let f = header_fields(r, src, "flayer", 2)?;
    let (count, n) = (f[0], f[1]);
    let all = read_f64s(r, count + 2 * n, src)?;
    let l = FloatLayer {
        spec,
        weights: all[..count].to_vec(),
        gamma: all[count..count + n].to_vec(),
        bias: all[count + n..].to_vec(),
    };
    l.validate()?;
    Ok(l)
}

pub fn write_float_model(dir: &Path, net: &FloatNetwork) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut m = format!("{FLOAT_MAGIC}\ninput dims={}\n", net.input);
    for (i, l) in net.layers.iter().enumerate() {
        let name = format!("l{i:02}.flayer");
        save(&dir.join(&name), |f| write_flayer(f, l))?;
        m.push_str(&format!("layer {} file={name}\n", spec_fields(&l.spec)));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, m)?;
    Ok(path)
}

pub fn read_float_model(path: &Path) -> Result<FloatNetwork> {
    let path = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let dir = path.parent().unwrap_or(Path::new("."));
    let src = path.display().to_string();
    let text = fs::read_to_string(&path).map_err(Error::file(&path))?;
    let mut input = None;
    let mut layers = Vec::new();
    for (no, l) in manifest_lines(&text, &src, FLOAT_MAGIC)? {
        let line = Line::parse(&l, &src, no)?;
        match l.split_whitespace().next() {
            Some("input") => input = Some(line.dims("dims")?),
            Some("layer") => {
                let i = layers.len();
                let read = || -> Result<FloatLayer> {
                    let spec = line.spec()?;
                    load(&dir.join(line.raw("file")?), |r, s| read_flayer(r, s, spec))
                };
                layers.push(read().map_err(|e| e.in_layer(i))?);
            }
            Some(other) => return Err(Error::parse(&src, no, format!("unknown record {other:?}"))),
            None => unreachable!(),
        }
    }
    let input = input.ok_or_else(|| Error::parse(&src, 0, "missing input record"))?;
    let net = FloatNetwork { input, layers };
    net.validate()?;
    Ok(net)
}

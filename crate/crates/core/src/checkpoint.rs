//! Checkpoint directories: `config` (training config text), `manifest`
//! (header lines, then one `tensor <name> <dtype> <shape> <offset> <count>`
//! line per tensor) and `payload.bin` (little-endian tensors back to back,
//! offsets in elements).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::MemoryState;
use crate::tensor::{Module, Scalar, Tensor};
use crate::training::{McGan, TrainConfig};

pub const FORMAT: &str = "mcgan-checkpoint";
pub const VERSION: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a string");
        s
    })
}

/// SHA-256 of the config text, hex encoded.
pub fn config_hash(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}

struct Writer<T> {
    manifest: String,
    payload: Vec<u8>,
    offset: usize,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> Writer<T> {
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[T]) -> Result<()> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Config(format!("checkpoint tensor name {name:?} must be non-empty without spaces")));
        }
        let dims = if shape.is_empty() {
            "scalar".to_owned()
        } else {
            shape.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        writeln!(self.manifest, "tensor {name} {} {dims} {} {}", T::DTYPE, self.offset, data.len()).expect("string");
        for &v in data {
            v.write_le(&mut self.payload);
        }
        self.offset += data.len();
        Ok(())
    }
}

fn state_tensors<T: Scalar>(s: &MemoryState<T>) -> [(&'static str, &Tensor<T>); 5] {
    [
        ("memory", &s.memory),
        ("read_h", &s.read.h),
        ("read_c", &s.read.c),
        ("write_h", &s.write.h),
        ("write_c", &s.write.c),
    ]
}

fn modules<T: Scalar>(model: &McGan<T>) -> [&dyn Module<T>; 4] {
    [&model.generator, &model.discriminator, &model.memory, &model.gate]
}

/// Writes `model` to `dir`, replacing any previous checkpoint there.
pub fn save_checkpoint<T: Scalar>(model: &McGan<T>, dir: &Path) -> Result<()> {
    let config = model.config.to_text();
    let (seed, stream, word) = (model.rng.get_seed(), model.rng.get_stream(), model.rng.get_word_pos());
    let mut w = Writer::<T> { manifest: String::new(), payload: Vec::new(), offset: 0, _scalar: Default::default() };
    let header = [
        format!("{FORMAT} {VERSION}"),
        format!("dtype {}", T::DTYPE),
        format!("config_hash {}", config_hash(&config)),
        format!("n_tasks {}", model.n_tasks),
        format!("step {}", model.step),
        format!("epoch {}", model.epoch),
        format!("g_opt_step {}", model.g_opt.step_count()),
        format!("d_opt_step {}", model.d_opt.step_count()),
        format!("rng {} {stream} {word}", hex(&seed)),
    ];
    for line in header {
        writeln!(w.manifest, "{line}").expect("string");
    }
    let mut params = Vec::new();
    for m in modules(model) {
        m.visit_params(&mut |p| params.push((p.name().to_owned(), p.tensor.shape().to_vec(), p.tensor.data().to_vec())));
    }
    for (name, shape, data) in &params {
        w.tensor(&format!("param/{name}"), shape, data)?;
    }
    for (tag, opt) in [("g", &model.g_opt), ("d", &model.d_opt)] {
        for (name, (m1, m2)) in opt.moments() {
            w.tensor(&format!("adam.{tag}/{name}/m"), &[m1.len()], m1)?;
            w.tensor(&format!("adam.{tag}/{name}/v"), &[m2.len()], m2)?;
        }
    }
    for (subject, state) in &model.states {
        for (part, t) in state_tensors(state) {
            w.tensor(&format!("state/{subject}/{part}"), t.shape(), t.data())?;
        }
    }

    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join("config"), &config)?;
    fs::write(tmp.join("manifest"), &w.manifest)?;
    fs::write(tmp.join("payload.bin"), &w.payload)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(())
}

struct Entry {
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

/// Loads a checkpoint written by [`save_checkpoint`] with the same scalar type.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<McGan<T>> {
    let err = |msg: String| Error::checkpoint(dir, msg);
    let read = |name: &str| fs::read(dir.join(name)).map_err(|e| err(format!("cannot read {name}: {e}")));
    let config_text = String::from_utf8(read("config")?).map_err(|_| err("config is not UTF-8".into()))?;
    let manifest = String::from_utf8(read("manifest")?).map_err(|_| err("manifest is not UTF-8".into()))?;
    let payload = read("payload.bin")?;

    let mut header: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut entries: Vec<(String, Entry)> = Vec::new();
    let mut lines = manifest.lines();
    let first = lines.next().unwrap_or_default();
    if first != format!("{FORMAT} {VERSION}") {
        return Err(err(format!("unsupported format line {first:?}, expected `{FORMAT} {VERSION}`")));
    }
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || err(format!("manifest line {}: malformed {line:?}", i + 2));
        match fields.as_slice() {
            ["tensor", name, dtype, dims, offset, count] => {
                if *dtype != T::DTYPE {
                    return Err(err(format!("tensor {name} has dtype {dtype}, expected {}", T::DTYPE)));
                }
                let shape = if *dims == "scalar" {
                    Vec::new()
                } else {
                    dims.split(',').map(|d| d.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?
                };
                let offset = offset.parse().map_err(|_| bad())?;
                let count: usize = count.parse().map_err(|_| bad())?;
                if shape.iter().product::<usize>() != count {
                    return Err(err(format!("tensor {name}: shape {shape:?} holds {count} elements")));
                }
                entries.push(((*name).to_owned(), Entry { shape, offset, count }));
            }
            [key, rest @ ..] if !rest.is_empty() => {
                header.insert(key, rest.to_vec());
            }
            _ => return Err(bad()),
        }
    }
    let one = |key: &str| -> Result<&str> {
        match header.get(key).map(Vec::as_slice) {
            Some([v]) => Ok(v),
            _ => Err(err(format!("manifest lacks `{key}`"))),
        }
    };
    let number = |key: &str| -> Result<u64> { one(key)?.parse().map_err(|_| err(format!("`{key}` is not a number"))) };
    if one("dtype")? != T::DTYPE {
        return Err(err(format!("checkpoint precision {} differs from requested {}", one("dtype")?, T::DTYPE)));
    }
    if one("config_hash")? != config_hash(&config_text) {
        return Err(err("config does not match the manifest hash".into()));
    }

    let mut expected = 0;
    for (name, e) in &entries {
        if e.offset != expected {
            return Err(err(format!("tensor {name} starts at {}, expected {expected}", e.offset)));
        }
        expected += e.count;
    }
    if payload.len() != expected * T::BYTES {
        return Err(err(format!("payload holds {} bytes, manifest describes {}", payload.len(), expected * T::BYTES)));
    }
    let decode = |e: &Entry| -> Vec<T> {
        payload[e.offset * T::BYTES..(e.offset + e.count) * T::BYTES].chunks_exact(T::BYTES).map(T::read_le).collect()
    };

    let config = TrainConfig::parse(&config_text, &dir.join("config"))?;
    let n_tasks = number("n_tasks")? as usize;
    let mut model = McGan::<T>::new(config, n_tasks)?;
    model.step = number("step")?;
    model.epoch = number("epoch")?;
    let rng = header.get("rng").ok_or_else(|| err("manifest lacks `rng`".into()))?;
    let [seed_hex, stream, word] = rng.as_slice() else {
        return Err(err("malformed `rng` line".into()));
    };
    let mut seed = [0u8; 32];
    if seed_hex.len() != 64 {
        return Err(err("rng seed must be 64 hex digits".into()));
    }
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| err("rng seed is not hex".into()))?;
    }
    model.rng = ChaCha8Rng::from_seed(seed);
    model.rng.set_stream(stream.parse().map_err(|_| err("rng stream is not a number".into()))?);
    model.rng.set_word_pos(word.parse().map_err(|_| err("rng position is not a number".into()))?);

    let mut by_name: BTreeMap<&str, &Entry> = entries.iter().map(|(n, e)| (n.as_str(), e)).collect();
    if by_name.len() != entries.len() {
        return Err(err("duplicate tensor names".into()));
    }
    let mut failure = None;
    let mut assign = |name: String, target: &mut Tensor<T>| {
        if failure.is_some() {
            return;
        }
        match by_name.remove(name.as_str()) {
            None => failure = Some(err(format!("missing tensor {name}"))),
            Some(e) if e.shape != target.shape() => {
                failure = Some(err(format!("tensor {name}: stored shape {:?}, model expects {:?}", e.shape, target.shape())))
            }
            Some(e) => target.data_mut().copy_from_slice(&decode(e)),
        }
    };
    {
        let McGan { generator, discriminator, memory, gate, .. } = &mut model;
        let mods: [&mut dyn Module<T>; 4] = [generator, discriminator, memory, gate];
        for m in mods {
            m.visit_params_mut(&mut |p| {
                let name = format!("param/{}", p.name());
                assign(name, &mut p.tensor);
            });
        }
    }
    if let Some(e) = failure.take() {
        return Err(e);
    }

    let mut moments: [BTreeMap<String, (Vec<T>, Vec<T>)>; 2] = Default::default();
    let mut states: BTreeMap<String, MemoryState<T>> = BTreeMap::new();
    for (name, e) in std::mem::take(&mut by_name) {
        if let Some(rest) = name.strip_prefix("adam.g/").map(|r| (0, r)).or_else(|| name.strip_prefix("adam.d/").map(|r| (1, r))) {
            let (which, rest) = rest;
            let (param, part) = rest.rsplit_once('/').ok_or_else(|| err(format!("malformed moment name {name}")))?;
            let slot = moments[which].entry(param.to_owned()).or_default();
            match part {
                "m" => slot.0 = decode(e),
                "v" => slot.1 = decode(e),
                _ => return Err(err(format!("malformed moment name {name}"))),
            }
        } else if let Some(rest) = name.strip_prefix("state/") {
            let (subject, part) = rest.rsplit_once('/').ok_or_else(|| err(format!("malformed state name {name}")))?;
            let state = states
                .entry(subject.to_owned())
                .or_insert_with(|| MemoryState::new(subject, model.config.slots));
            let target = match part {
                "memory" => &mut state.memory,
                "read_h" => &mut state.read.h,
                "read_c" => &mut state.read.c,
                "write_h" => &mut state.write.h,
                "write_c" => &mut state.write.c,
                _ => return Err(err(format!("malformed state name {name}"))),
            };
            if target.shape() != e.shape.as_slice() {
                return Err(err(format!("tensor {name}: stored shape {:?}, expected {:?}", e.shape, target.shape())));
            }
            target.data_mut().copy_from_slice(&decode(e));
        } else {
            return Err(err(format!("unexpected tensor {name}")));
        }
    }
    let [g_moments, d_moments] = moments;
    let mut sizes: [BTreeMap<String, usize>; 2] = Default::default();
    for (i, m) in modules(&model).into_iter().enumerate() {
        let side = usize::from(i == 1);
        m.visit_params(&mut |p| {
            if p.is_trainable() {
                sizes[side].insert(p.name().to_owned(), p.tensor.numel());
            }
        });
    }
    for (side, moments) in [&g_moments, &d_moments].into_iter().enumerate() {
        for (param, (m, v)) in moments {
            if sizes[side].get(param) != Some(&m.len()) || m.len() != v.len() {
                return Err(err(format!("optimizer moments for {param} do not match the model")));
            }
        }
    }
    model.g_opt.restore(number("g_opt_step")?, g_moments);
    model.d_opt.restore(number("d_opt_step")?, d_moments);
    model.states = states;
    Ok(model)
}

pub const STATE_FORMAT: &str = "mcgan-memory-state";

/// Writes one subject memory as text: a format line, `subject <id>`, then
/// `<part> <dims> <values...>` with shortest round-trip decimals.
pub fn save_memory_state<T: Scalar>(state: &MemoryState<T>, path: &Path) -> Result<()> {
    if state.subject_id.chars().any(char::is_whitespace) {
        return Err(Error::Config(format!("subject id {:?} must not contain spaces", state.subject_id)));
    }
    let mut text = format!("{STATE_FORMAT} {VERSION}\nsubject {}\n", state.subject_id);
    for (part, t) in state_tensors(state) {
        let dims = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        write!(text, "{part} {dims}").expect("string");
        for v in t.data() {
            write!(text, " {v}").expect("string");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a file written by [`save_memory_state`]; its slot count must be `slots`.
pub fn load_memory_state<T: Scalar>(path: &Path, slots: usize) -> Result<MemoryState<T>> {
    let err = |msg: String| Error::checkpoint(path, msg);
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or_default();
    if first != format!("{STATE_FORMAT} {VERSION}") {
        return Err(err(format!("unsupported format line {first:?}")));
    }
    let subject = lines
        .next()
        .and_then(|l| l.strip_prefix("subject "))
        .ok_or_else(|| err("missing subject line".into()))?;
    let mut state = MemoryState::new(subject, slots);
    let mut seen = Vec::new();
    for line in lines {
        let mut fields = line.split_whitespace();
        let (Some(part), Some(dims)) = (fields.next(), fields.next()) else {
            return Err(err(format!("malformed line {line:?}")));
        };
        let target = match part {
            "memory" => &mut state.memory,
            "read_h" => &mut state.read.h,
            "read_c" => &mut state.read.c,
            "write_h" => &mut state.write.h,
            "write_c" => &mut state.write.c,
            _ => return Err(err(format!("unknown part {part}"))),
        };
        let shape: Vec<usize> = dims.split(',').map(|d| d.parse().map_err(|_| err(format!("bad shape {dims}")))).collect::<Result<_>>()?;
        if shape != target.shape() {
            return Err(err(format!("{part}: stored shape {shape:?}, expected {:?}", target.shape())));
        }
        let values: Vec<T> = fields
            .map(|v| T::from_str_radix(v, 10).map_err(|_| err(format!("{part}: bad value {v:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != target.numel() {
            return Err(err(format!("{part}: {} values for shape {shape:?}", values.len())));
        }
        target.data_mut().copy_from_slice(&values);
        seen.push(part.to_owned());
    }
    seen.sort();
    if seen != ["memory", "read_c", "read_h", "write_c", "write_h"] {
        return Err(err(format!("expected each state part once, found {seen:?}")));
    }
    Ok(state)
}

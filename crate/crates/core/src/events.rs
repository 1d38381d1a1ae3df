//! Event streams, binning into spike frames, and the synthetic gesture set.
//!
//! EVS1 layout (little-endian): magic `EVS1`, `u16` width, `u16` height,
//! `u64` event count, then packed 9-byte records `u32 t_us, u16 x, u16 y,
//! u8 polarity`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spiking::SpikeTensor;
use crate::tensor::Tensor;

pub const EVS_MAGIC: &[u8; 4] = b"EVS1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub t: u32,
    pub x: u16,
    pub y: u16,
    /// 0 = off, 1 = on.
    pub polarity: u8,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Out-of-order events up to this many microseconds behind the running
    /// maximum are re-sorted; anything later is a format error.
    pub sort_tolerance_us: u32,
}

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stream.events.len() * RECORD_LEN);
    out.extend_from_slice(EVS_MAGIC);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    out.extend_from_slice(&(stream.events.len() as u64).to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.polarity);
    }
    out
}

pub fn decode_events(bytes: &[u8], opts: LoadOptions) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != EVS_MAGIC {
            return Err(fmt_err(0, "bad magic"));
        }
        return Err(fmt_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != EVS_MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = bytes.len() - HEADER_LEN;
    let available = (payload / RECORD_LEN) as u64;
    if available < count {
        let at = HEADER_LEN + available as usize * RECORD_LEN;
        return Err(fmt_err(at, format!("truncated: header declares {count} events, file holds {available}")));
    }
    let end = HEADER_LEN + count as usize * RECORD_LEN;
    if end != bytes.len() {
        return Err(fmt_err(end, "trailing bytes after last event"));
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut max_t = 0u32;
    let mut needs_sort = false;
    for (i, r) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let at = HEADER_LEN + i * RECORD_LEN;
        let e = Event {
            t: u32::from_le_bytes(r[0..4].try_into().unwrap()),
            x: u16::from_le_bytes([r[4], r[5]]),
            y: u16::from_le_bytes([r[6], r[7]]),
            polarity: r[8],
        };
        if e.polarity > 1 {
            return Err(fmt_err(at + 8, format!("polarity {} is not 0 or 1", e.polarity)));
        }
        if e.t < max_t {
            if max_t - e.t > opts.sort_tolerance_us {
                return Err(fmt_err(
                    at,
                    format!("event at {} µs precedes {} µs beyond sort tolerance", e.t, max_t),
                ));
            }
            needs_sort = true;
        }
        max_t = max_t.max(e.t);
        events.push(e);
    }
    if needs_sort {
        events.sort_by_key(|e| e.t);
    }
    Ok(EventStream { width, height, events })
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, encode_events(stream)).map_err(|e| Error::io(path, e))
}

pub fn load_events(path: &Path, opts: LoadOptions) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_events(&bytes, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinConfig {
    pub bin_us: u32,
    pub frames_per_sample: usize,
    /// Length of the recording in frames; defaults to the frame of the last
    /// event plus one.
    pub total_frames: Option<usize>,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            bin_us: 10_000,
            frames_per_sample: 50,
            total_frames: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binned<S> {
    /// Consecutive disjoint windows, each `(2, height, width, T)`.
    pub windows: Vec<SpikeTensor<S>>,
    /// Events dropped for lying outside the sensor.
    pub rejected: usize,
}

/// Bins a sorted stream into saturating binary frames `frames[p, y, x, t]`.
pub fn bin_events<S: Scalar>(stream: &EventStream, cfg: &BinConfig) -> Result<Binned<S>> {
    if cfg.bin_us == 0 || cfg.frames_per_sample == 0 {
        return Err(Error::Config("bin width and frames per sample must be positive".into()));
    }
    if stream.width == 0 || stream.height == 0 {
        return Err(Error::Config("sensor must have positive size".into()));
    }
    if stream.events.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::Contract("events must be sorted by timestamp".into()));
    }
    let frames = cfg.total_frames.unwrap_or_else(|| {
        stream
            .events
            .last()
            .map_or(0, |e| (e.t / cfg.bin_us) as usize + 1)
    });
    let t_len = cfg.frames_per_sample;
    let n_windows = frames / t_len;
    let (w, h) = (usize::from(stream.width), usize::from(stream.height));
    let plane = h * w * t_len;
    let mut buffers = vec![vec![S::zero(); 2 * plane]; n_windows];
    let mut rejected = 0;
    for e in &stream.events {
        let (x, y) = (usize::from(e.x), usize::from(e.y));
        if x >= w || y >= h || e.polarity > 1 {
            rejected += 1;
            continue;
        }
        let f = (e.t / cfg.bin_us) as usize;
        let (win, t) = (f / t_len, f % t_len);
        if win >= n_windows {
            continue;
        }
        buffers[win][usize::from(e.polarity) * plane + (y * w + x) * t_len + t] = S::one();
    }
    let windows = buffers
        .into_iter()
        .map(|b| SpikeTensor::new(Tensor::from_vec(&[2, h, w, t_len], b)?))
        .collect::<Result<_>>()?;
    Ok(Binned { windows, rejected })
}

/// Converts binary frames back into events, one per set bit, timestamped
/// `t·bin_us + jitter` with jitter drawn uniformly below `bin_us`.
pub fn frames_to_events<S: Scalar>(frames: &SpikeTensor<S>, bin_us: u32, rng: &mut impl Rng) -> EventStream {
    let [c, h, w, t_len] = frames.tensor().shape()[..] else {
        unreachable!("spike tensors are 4-D")
    };
    let data = frames.tensor().data();
    let mut events = Vec::new();
    for t in 0..t_len {
        let mut frame: Vec<Event> = Vec::new();
        for p in 0..c.min(2) {
            for y in 0..h {
                for x in 0..w {
                    if data[((p * h + y) * w + x) * t_len + t] != S::zero() {
                        frame.push(Event {
                            t: t as u32 * bin_us + rng.gen_range(0..bin_us),
                            x: x as u16,
                            y: y as u16,
                            polarity: p as u8,
                        });
                    }
                }
            }
        }
        frame.sort_by_key(|e| e.t);
        events.extend(frame);
    }
    EventStream {
        width: w as u16,
        height: h as u16,
        events,
    }
}

/// One labelled spike sample. `group` ties together samples that must land
/// on the same side of a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<S> {
    pub frames: SpikeTensor<S>,
    pub label: usize,
    pub group: usize,
}

/// Moving-bar gestures. Classes come in pairs: class `2j` is a bar sweeping
/// along direction `j·π/P`, class `2j+1` is the exact time reversal of a
/// class `2j` sample drawn with the same sample index. Reversal twins have
/// identical per-pixel totals, so only temporal order separates them.
pub fn synth_gestures<S: Scalar>(class_count: usize, samples_per_class: usize, shape: [usize; 4], seed: u64) -> Result<Vec<Sample<S>>> {
    if class_count < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    let [c, h, w, t] = shape;
    if c != 2 || h < 4 || w < 4 || t < 2 {
        return Err(Error::Config(format!("synthetic gestures need shape (2, ≥4, ≥4, ≥2), got {shape:?}")));
    }
    let pairs = class_count.div_ceil(2);
    let mut out = Vec::with_capacity(class_count * samples_per_class);
    for pair in 0..pairs {
        let angle = pair as f64 * PI / pairs as f64;
        for i in 0..samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((pair * samples_per_class + i) as u64);
            let frames = moving_bar::<S>(angle, [h, w, t], &mut rng)?;
            let group = pair * samples_per_class + i;
            if 2 * pair + 1 < class_count {
                out.push(Sample {
                    frames: frames.time_reversed(),
                    label: 2 * pair + 1,
                    group,
                });
            }
            out.push(Sample {
                frames,
                label: 2 * pair,
                group,
            });
        }
    }
    out.sort_by_key(|s| (s.label, s.group));
    Ok(out)
}

const NOISE_RATE: f64 = 0.002;

fn moving_bar<S: Scalar>(angle: f64, [h, w, t_len]: [usize; 3], rng: &mut ChaCha8Rng) -> Result<SpikeTensor<S>> {
    let (dx, dy) = (angle.cos(), angle.sin());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let radius = 0.5 * (w.max(h) as f64);
    let thickness = rng.gen_range(2.0..4.0);
    let half_len = rng.gen_range(0.35..0.6) * radius;
    let lateral = rng.gen_range(-0.3..0.3) * radius;
    let speed = rng.gen_range(1.2..1.8) * radius / t_len as f64;
    let start = -rng.gen_range(0.6..0.9) * radius;
    let covered = |x: usize, y: usize, t: isize| {
        let (px, py) = (x as f64 - cx, y as f64 - cy);
        let along = px * dx + py * dy;
        let across = -px * dy + py * dx;
        let front = start + speed * (t as f64 + 1.0);
        (across - lateral).abs() <= half_len && along <= front && along > front - thickness
    };
    let plane = h * w * t_len;
    let mut data = vec![S::zero(); 2 * plane];
    for y in 0..h {
        for x in 0..w {
            for t in 0..t_len {
                let now = covered(x, y, t as isize);
                let before = covered(x, y, t as isize - 1);
                let idx = (y * w + x) * t_len + t;
                if now && !before {
                    data[plane + idx] = S::one();
                } else if before && !now {
                    data[idx] = S::one();
                }
            }
        }
    }
    for v in data.iter_mut() {
        if rng.gen_bool(NOISE_RATE) {
            *v = S::one();
        }
    }
    SpikeTensor::new(Tensor::from_vec(&[2, h, w, t_len], data)?)
}

/// Seeded stratified split. Indices of each class are divided so that every
/// group lands wholly in train or in test.
pub fn stratified_split<S>(samples: &[Sample<S>], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_group_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for s in samples {
        by_group_label.entry(s.group).or_default().push(s.label);
    }
    // Groups sharing a label signature form one stratum.
    let mut strata: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (g, mut labels) in by_group_label {
        labels.sort_unstable();
        strata.entry(labels).or_default().push(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_groups = std::collections::BTreeSet::new();
    for groups in strata.values_mut() {
        for i in (1..groups.len()).rev() {
            groups.swap(i, rng.gen_range(0..=i));
        }
        let n_test = (groups.len() as f64 * test_fraction).round() as usize;
        test_groups.extend(groups[..n_test].iter().copied());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if test_groups.contains(&s.group) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// One row of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub file: String,
    pub window: usize,
    pub label: usize,
    pub group: usize,
}

/// Text listing of a dataset: `#` header lines carrying the binning, then
/// one `file window label group` row per sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub width: u16,
    pub height: u16,
    pub frames_per_sample: usize,
    pub bin_us: u32,
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# width {}\n# height {}\n# frames_per_sample {}\n# bin_us {}\n# classes {}\n# file window label group\n",
            self.width, self.height, self.frames_per_sample, self.bin_us, self.classes
        );
        for e in &self.entries {
            s.push_str(&format!("{} {} {} {}\n", e.file, e.window, e.label, e.group));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = BTreeMap::new();
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.lines() {
            let bad = |m: &str| fmt_err(offset, format!("manifest line `{line}`: {m}"));
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if let (Some(k), Some(v), None) = (it.next(), it.next(), it.next()) {
                    if let Ok(v) = v.parse::<u64>() {
                        header.insert(k.to_string(), v);
                    }
                }
            } else if !line.trim().is_empty() {
                let f: Vec<&str> = line.split_whitespace().collect();
                let [file, window, label, group] = f[..] else {
                    return Err(bad("expected `file window label group`"));
                };
                let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
                entries.push(ManifestEntry {
                    file: file.to_string(),
                    window: num(window)?,
                    label: num(label)?,
                    group: num(group)?,
                });
            }
            offset += line.len() + 1;
        }
        let missing: Vec<String> = ["width", "height", "frames_per_sample", "bin_us", "classes"]
            .iter()
            .filter(|k| !header.contains_key(**k))
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFields(missing));
        }
        let m = Self {
            width: header["width"] as u16,
            height: header["height"] as u16,
            frames_per_sample: header["frames_per_sample"] as usize,
            bin_us: header["bin_us"] as u32,
            classes: header["classes"] as usize,
            entries,
        };
        if let Some(e) = m.entries.iter().find(|e| e.label >= m.classes) {
            return Err(Error::Config(format!("label {} of {} exceeds class count {}", e.label, e.file, m.classes)));
        }
        Ok(m)
    }

    pub fn shape(&self) -> [usize; 4] {
        [2, usize::from(self.height), usize::from(self.width), self.frames_per_sample]
    }

    pub fn bin_config(&self, window: usize) -> BinConfig {
        BinConfig {
            bin_us: self.bin_us,
            frames_per_sample: self.frames_per_sample,
            total_frames: Some((window + 1) * self.frames_per_sample),
        }
    }
}

/// Writes each sample as an EVS1 file plus `manifest.txt` into `dir`.
pub fn write_dataset<S: Scalar>(
    dir: &Path,
    samples: &[Sample<S>],
    shape: [usize; 4],
    classes: usize,
    bin_us: u32,
    seed: u64,
) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if s.frames.tensor().shape() != shape.as_slice() {
            return Err(Error::shapes("dataset sample", s.frames.tensor().shape(), &shape));
        }
        let file = format!("sample_{i:05}.evs");
        write_events(&dir.join(&file), &frames_to_events(&s.frames, bin_us, &mut rng))?;
        entries.push(ManifestEntry {
            file,
            window: 0,
            label: s.label,
            group: s.group,
        });
    }
    let manifest = DatasetManifest {
        width: shape[2] as u16,
        height: shape[1] as u16,
        frames_per_sample: shape[3],
        bin_us,
        classes,
        entries,
    };
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Reads a dataset written by [`write_dataset`] or assembled by hand.
pub fn load_dataset<S: Scalar>(dir: &Path) -> Result<(DatasetManifest, Vec<Sample<S>>)> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let stream = load_events(&dir.join(&e.file), LoadOptions::default())?;
        if (stream.width, stream.height) != (manifest.width, manifest.height) {
            return Err(Error::Config(format!(
                "{} is {}×{}, manifest says {}×{}",
                e.file, stream.width, stream.height, manifest.width, manifest.height
            )));
        }
        let binned = bin_events::<S>(&stream, &manifest.bin_config(e.window))?;
        let frames = binned.windows.into_iter().nth(e.window).expect("window count fixed by total_frames");
        samples.push(Sample {
            frames,
            label: e.label,
            group: e.group,
        });
    }
    Ok((manifest, samples))
}

pub mod dvs_gesture {
    //! Adapter for the DvsGesture recordings (AEDAT 3.1 polarity packets
    //! plus per-trial label CSVs). Windows are labelled by majority overlap:
    //! a window takes the gesture covering more than half of it, and
    //! windows without such a gesture are dropped.

    use super::*;

    pub const SENSOR: u16 = 128;
    const PACKET_HEADER: usize = 28;
    const POLARITY_EVENT: u16 = 1;

    /// Parses the polarity events of an AEDAT 3.1 file.
    pub fn parse_aedat(bytes: &[u8]) -> Result<EventStream> {
        let mut pos = 0;
        while pos < bytes.len() && bytes[pos] == b'#' {
            match bytes[pos..].iter().position(|&b| b == b'\n') {
                Some(n) => pos += n + 1,
                None => return Err(fmt_err(pos, "unterminated header line")),
            }
        }
        let mut events = Vec::new();
        while pos < bytes.len() {
            if pos + PACKET_HEADER > bytes.len() {
                return Err(fmt_err(pos, "truncated packet header"));
            }
            let h = &bytes[pos..pos + PACKET_HEADER];
            let word = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
            let kind = u16::from_le_bytes([h[0], h[1]]);
            let size = word(4) as usize;
            let overflow = word(12);
            let number = word(20) as usize;
            let body = pos + PACKET_HEADER;
            let end = body + size * number;
            if end > bytes.len() {
                return Err(fmt_err(body, "truncated packet body"));
            }
            if kind == POLARITY_EVENT && size >= 8 {
                for rec in bytes[body..end].chunks_exact(size) {
                    let data = u32::from_le_bytes(rec[0..4].try_into().unwrap());
                    if data & 1 == 0 {
                        continue;
                    }
                    let ts = u64::from(u32::from_le_bytes(rec[4..8].try_into().unwrap())) | (u64::from(overflow) << 31);
                    events.push(Event {
                        t: u32::try_from(ts).map_err(|_| fmt_err(body, "timestamp exceeds 32 bits"))?,
                        x: ((data >> 17) & 0x1FFF) as u16,
                        y: ((data >> 2) & 0x1FFF) as u16,
                        polarity: ((data >> 1) & 1) as u8,
                    });
                }
            }
            pos = end;
        }
        events.sort_by_key(|e| e.t);
        Ok(EventStream {
            width: SENSOR,
            height: SENSOR,
            events,
        })
    }

    /// `(class, start_us, end_us)` rows; classes are 1-based in the files.
    pub fn parse_labels(text: &str) -> Result<Vec<(usize, u32, u32)>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.trim().split(',').collect();
            let parsed = match f[..] {
                [c, s, e] => (c.trim().parse::<usize>(), s.trim().parse::<u32>(), e.trim().parse::<u32>()),
                _ => continue,
            };
            match parsed {
                (Ok(c), Ok(s), Ok(e)) if c >= 1 => out.push((c - 1, s, e)),
                _ if i == 0 => continue,
                _ => return Err(Error::Config(format!("bad label row {}: `{line}`", i + 1))),
            }
        }
        Ok(out)
    }

    /// Label of window `[start, start+len)` under the majority-overlap rule.
    pub fn majority_label(labels: &[(usize, u32, u32)], start: u64, len: u64) -> Option<usize> {
        labels.iter().find_map(|&(c, s, e)| {
            let overlap = (start + len).min(u64::from(e)).saturating_sub(start.max(u64::from(s)));
            (2 * overlap > len).then_some(c)
        })
    }

    /// Bins one trial and keeps the labelled windows.
    pub fn ingest_trial<S: Scalar>(aedat: &[u8], labels_csv: &str, cfg: &BinConfig) -> Result<Vec<(usize, SpikeTensor<S>)>> {
        let stream = parse_aedat(aedat)?;
        let labels = parse_labels(labels_csv)?;
        let binned = bin_events::<S>(&stream, cfg)?;
        let len = u64::from(cfg.bin_us) * cfg.frames_per_sample as u64;
        Ok(binned
            .windows
            .into_iter()
            .enumerate()
            .filter_map(|(i, w)| majority_label(&labels, i as u64 * len, len).map(|c| (c, w)))
            .collect())
    }

    /// Trial names listed in `trials_to_train.txt` or `trials_to_test.txt`.
    pub fn trial_list(dir: &Path, list: &str) -> Result<Vec<PathBuf>> {
        let path = dir.join(list);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| dir.join(l))
            .collect())
    }

    /// Counts labelled windows of every trial in a list without keeping the
    /// frames around.
    pub fn count_samples(dir: &Path, list: &str, cfg: &BinConfig) -> Result<(usize, Vec<usize>)> {
        let mut total = 0;
        let mut shape = Vec::new();
        for trial in trial_list(dir, list)? {
            let aedat = fs::read(&trial).map_err(|e| Error::io(&trial, e))?;
            let stem = trial.with_extension("");
            let csv_path = PathBuf::from(format!("{}_labels.csv", stem.display()));
            let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
            let windows = ingest_trial::<f32>(&aedat, &csv, cfg)?;
            if let Some((_, w)) = windows.first() {
                shape = w.tensor().shape().to_vec();
            }
            total += windows.len();
        }
        Ok((total, shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u32, x: u16, y: u16, polarity: u8) -> Event {
        Event { t, x, y, polarity }
    }

    #[test]
    fn empty_payload_round_trips() {
        let s = EventStream {
            width: 4,
            height: 3,
            events: vec![],
        };
        let bytes = encode_events(&s);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode_events(&bytes, LoadOptions::default()).unwrap(), s);
    }

    #[test]
    fn three_events_round_trip() {
        let s = EventStream {
            width: 128,
            height: 128,
            events: vec![ev(0, 5, 7, 1), ev(10, 0, 0, 0), ev(10_000, 127, 127, 1)],
        };
        let bytes = encode_events(&s);
        assert_eq!(&bytes[16..25], &[0, 0, 0, 0, 5, 0, 7, 0, 1][..]);
        assert_eq!(decode_events(&bytes, LoadOptions::default()).unwrap(), s);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let s = EventStream {
            width: 8,
            height: 8,
            events: vec![ev(5, 1, 1, 1), ev(3, 1, 1, 1)],
        };
        let bytes = encode_events(&s);
        let err = decode_events(&bytes, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 25, .. }), "{err}");
        let ok = decode_events(&bytes, LoadOptions { sort_tolerance_us: 2 }).unwrap();
        assert_eq!(ok.events[0].t, 3);
        assert!(matches!(
            decode_events(&bytes[..20], LoadOptions::default()),
            Err(Error::Format { offset: 16, .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_events(&bad, LoadOptions::default()), Err(Error::Format { offset: 0, .. })));
        let mut pol = bytes;
        pol[24] = 2;
        assert!(matches!(decode_events(&pol, LoadOptions::default()), Err(Error::Format { offset: 24, .. })));
    }

    #[test]
    fn single_event_lands_at_polarity_row_column() {
        let s = EventStream {
            width: 128,
            height: 128,
            events: vec![ev(0, 5, 7, 1)],
        };
        let cfg = BinConfig {
            total_frames: Some(50),
            ..BinConfig::default()
        };
        let b = bin_events::<f64>(&s, &cfg).unwrap();
        assert_eq!(b.windows.len(), 1);
        let f = &b.windows[0];
        assert!(f.get(1, 7, 5, 0));
        assert_eq!(f.count(), 1);
    }

    #[test]
    fn same_pixel_same_bin_saturates() {
        let s = EventStream {
            width: 4,
            height: 4,
            events: vec![ev(100, 1, 2, 1), ev(9_000, 1, 2, 1)],
        };
        let b = bin_events::<f64>(
            &s,
            &BinConfig {
                frames_per_sample: 1,
                ..BinConfig::default()
            },
        )
        .unwrap();
        assert_eq!(b.windows[0].count(), 1);
    }

    #[test]
    fn out_of_bounds_events_are_counted() {
        let s = EventStream {
            width: 4,
            height: 4,
            events: vec![ev(0, 4, 0, 1), ev(1, 0, 9, 0), ev(2, 3, 3, 0)],
        };
        let b = bin_events::<f64>(
            &s,
            &BinConfig {
                frames_per_sample: 1,
                ..BinConfig::default()
            },
        )
        .unwrap();
        assert_eq!(b.rejected, 2);
        assert_eq!(b.windows[0].count(), 1);
    }

    #[test]
    fn windows_are_disjoint_and_exhaustive() {
        let s = EventStream {
            width: 2,
            height: 2,
            events: (0..7).map(|i| ev(i * 10_000, 0, 0, 1)).collect(),
        };
        let cfg = BinConfig {
            frames_per_sample: 3,
            ..BinConfig::default()
        };
        let b = bin_events::<f64>(&s, &cfg).unwrap();
        // 7 frames → 2 full windows, the seventh frame is left over
        assert_eq!(b.windows.len(), 2);
        assert!(b.windows.iter().all(|w| w.count() == 3));
    }

    #[test]
    fn twins_share_totals_but_not_order() {
        let samples = synth_gestures::<f64>(3, 4, [2, 32, 32, 20], 1).unwrap();
        assert_eq!(samples.len(), 12);
        let a = samples.iter().find(|s| s.label == 0 && s.group == 2).unwrap();
        let b = samples.iter().find(|s| s.label == 1 && s.group == 2).unwrap();
        let totals = |s: &Sample<f64>| {
            s.frames
                .tensor()
                .data()
                .chunks(20)
                .map(|c| c.iter().sum::<f64>())
                .collect::<Vec<_>>()
        };
        assert_eq!(totals(a), totals(b));
        assert_ne!(a.frames, b.frames);
        assert_eq!(a.frames.time_reversed(), b.frames);
    }

    #[test]
    fn generator_is_deterministic() {
        let a = synth_gestures::<f64>(3, 5, [2, 16, 16, 10], 42).unwrap();
        let b = synth_gestures::<f64>(3, 5, [2, 16, 16, 10], 42).unwrap();
        assert_eq!(a, b);
        let c = synth_gestures::<f64>(3, 5, [2, 16, 16, 10], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_keeps_twins_together_and_is_stratified() {
        let samples = synth_gestures::<f64>(3, 10, [2, 8, 8, 4], 3).unwrap();
        let (train, test) = stratified_split(&samples, 0.2, 7);
        assert_eq!(train.len() + test.len(), 30);
        for label in 0..3 {
            assert_eq!(test.iter().filter(|&&i| samples[i].label == label).count(), 2);
        }
        for &i in &test {
            for &j in &train {
                assert_ne!(samples[i].group, samples[j].group);
            }
        }
    }

    #[test]
    fn manifest_round_trips_and_lists_missing_fields() {
        let m = DatasetManifest {
            width: 32,
            height: 32,
            frames_per_sample: 20,
            bin_us: 10_000,
            classes: 3,
            entries: vec![ManifestEntry {
                file: "a.evs".into(),
                window: 0,
                label: 2,
                group: 5,
            }],
        };
        assert_eq!(DatasetManifest::parse(&m.to_text()).unwrap(), m);
        let err = DatasetManifest::parse("# width 3\n").unwrap_err();
        assert!(matches!(err, Error::MissingFields(ref f) if f.len() == 4));
    }

    #[test]
    fn majority_overlap() {
        let labels = [(3, 1000, 1500), (4, 2000, 2600)];
        assert_eq!(dvs_gesture::majority_label(&labels, 1000, 1000), None);
        assert_eq!(dvs_gesture::majority_label(&labels, 1000, 900), Some(3));
        assert_eq!(dvs_gesture::majority_label(&labels, 2000, 1000), Some(4));
    }

    #[test]
    fn aedat_polarity_decoding() {
        let mut bytes = b"#!AER-DAT3.1\r\n#End Of ASCII Header\r\n".to_vec();
        let data: u32 = (17 << 17) | (42 << 2) | (1 << 1) | 1;
        let mut header = vec![0u8; 28];
        header[0..2].copy_from_slice(&1u16.to_le_bytes());
        header[4..8].copy_from_slice(&8u32.to_le_bytes());
        header[20..24].copy_from_slice(&1u32.to_le_bytes());
        bytes.extend(header);
        bytes.extend(data.to_le_bytes());
        bytes.extend(1234u32.to_le_bytes());
        let s = dvs_gesture::parse_aedat(&bytes).unwrap();
        assert_eq!(s.events, vec![ev(1234, 17, 42, 1)]);
    }

    #[test]
    fn dataset_round_trips_through_event_files() {
        let dir = tempfile::tempdir().unwrap();
        let shape = [2, 16, 16, 8];
        let samples = synth_gestures::<f64>(3, 2, shape, 4).unwrap();
        write_dataset(dir.path(), &samples, shape, 3, 10_000, 1).unwrap();
        let (m, back) = load_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(m.shape(), shape);
        assert_eq!(back, samples);
    }

    #[test]
    fn empty_dataset_keeps_its_shape() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset::<f64>(dir.path(), &[], [2, 32, 32, 20], 3, 10_000, 1).unwrap();
        let (m, back) = load_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(m.shape(), [2, 32, 32, 20]);
        assert!(back.is_empty());
    }
}

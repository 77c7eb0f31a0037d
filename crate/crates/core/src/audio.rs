//! WAV ingestion and dataset manifests.
//!
//! Everything downstream works on 16 kHz mono float audio; files in any other
//! format are rejected rather than resampled.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sample rate every pipeline input must have.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::UnsupportedFormat("sample rate must be positive".into()));
        }
        if let Some(pos) = samples
            .iter()
            .position(|s| !s.is_finite() || s.abs() > 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "sample {pos} ({}) outside [-1, 1]",
                samples[pos]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a 16-bit mono 16 kHz PCM WAV image.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(Error::CorruptFile("missing RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::UnsupportedFormat("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt_seen = false;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .ok_or_else(|| Error::CorruptFile("chunk size overflow".into()))?;
        if end > bytes.len() {
            return Err(Error::CorruptFile(format!(
                "chunk {:?} truncated: declares {size} bytes, {} available",
                String::from_utf8_lossy(id),
                bytes.len() - body
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::CorruptFile("fmt chunk shorter than 16 bytes".into()));
                }
                let format = read_u16(bytes, body);
                let channels = read_u16(bytes, body + 2);
                let rate = read_u32(bytes, body + 4);
                let bits = read_u16(bytes, body + 14);
                if format != 1 {
                    return Err(Error::UnsupportedFormat(format!("format code {format} (want PCM)")));
                }
                if channels != 1 {
                    return Err(Error::UnsupportedFormat(format!("{channels} channels (want mono)")));
                }
                if rate != SAMPLE_RATE {
                    return Err(Error::UnsupportedFormat(format!("{rate} Hz (want {SAMPLE_RATE})")));
                }
                if bits != 16 {
                    return Err(Error::UnsupportedFormat(format!("{bits}-bit samples (want 16)")));
                }
                fmt_seen = true;
            }
            b"data" => {
                if !fmt_seen {
                    return Err(Error::CorruptFile("data chunk before fmt chunk".into()));
                }
                if size % 2 != 0 {
                    return Err(Error::CorruptFile("odd byte count in 16-bit data chunk".into()));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return AudioBuffer::new(samples, SAMPLE_RATE);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    Err(Error::CorruptFile(if fmt_seen {
        "no data chunk".into()
    } else {
        "no fmt chunk".into()
    }))
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Encodes as 16-bit PCM; samples are quantized with `round(x * 32768)` and
/// clamped to the i16 range.
pub fn encode_wav(audio: &AudioBuffer) -> Vec<u8> {
    let data_len = audio.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&audio.sample_rate().to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in audio.samples() {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(audio)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Pristine,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pristine => "pristine",
            Label::Spoof => "spoof",
        }
    }

    /// Training target: 0 for the target (pristine) class, 1 for spoof.
    pub fn target(self) -> u8 {
        match self {
            Label::Pristine => 0,
            Label::Spoof => 1,
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pristine" => Ok(Label::Pristine),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label {other:?} (expected pristine|spoof)")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Dev,
    Eval,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Dev => "dev",
            Partition::Eval => "eval",
        }
    }
}

impl FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "dev" => Ok(Partition::Dev),
            "eval" => Ok(Partition::Eval),
            other => Err(format!("unknown partition {other:?} (expected train|dev|eval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub audio_path: String,
    pub label: Label,
    /// Names the pristine source or the speech generator.
    pub class_id: String,
    pub partition: Partition,
}

impl ManifestEntry {
    pub fn new(
        audio_path: impl Into<String>,
        label: Label,
        class_id: impl Into<String>,
        partition: Partition,
    ) -> Self {
        Self {
            audio_path: audio_path.into(),
            label,
            class_id: class_id.into(),
            partition,
        }
    }
}

/// Ordered list of labelled utterances; audio paths are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

fn check_field(value: &str, what: &str) -> std::result::Result<(), String> {
    if value.is_empty() {
        return Err(format!("empty {what}"));
    }
    if value.contains(['\t', '\n', '\r']) {
        return Err(format!("{what} contains a tab or newline"));
    }
    Ok(())
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, e) in entries.iter().enumerate() {
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            check_field(&e.audio_path, "audio path").map_err(bad)?;
            check_field(&e.class_id, "class_id").map_err(bad)?;
            if e.audio_path.starts_with('#') || e.audio_path.trim() != e.audio_path {
                return Err(bad(format!("audio path {:?} is not representable", e.audio_path)));
            }
            if !seen.insert(e.audio_path.as_str()) {
                return Err(Error::DuplicatePath(e.audio_path.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn partition(&self, p: Partition) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.partition == p)
    }

    /// `<path>\t<label>\t<class_id>\t<partition>` per line.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.audio_path,
                e.label,
                e.class_id,
                e.partition.as_str()
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse { line: line_no, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
            }
            let label: Label = fields[1].parse().map_err(bad)?;
            let partition: Partition = fields[3].parse().map_err(bad)?;
            check_field(fields[0], "audio path").map_err(bad)?;
            check_field(fields[2], "class_id").map_err(bad)?;
            if !seen.insert(fields[0].to_string()) {
                return Err(Error::DuplicatePath(fields[0].to_string()));
            }
            entries.push(ManifestEntry::new(fields[0], label, fields[2], partition));
        }
        Ok(Self { entries })
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::parse(&text)
}

/// Resolves a manifest audio path against the manifest's directory.
pub fn resolve_path(manifest_path: &Path, audio_path: &str) -> PathBuf {
    let p = Path::new(audio_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wav_header(rate: u32, channels: u16, bits: u16, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data.len()) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVEfmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * u32::from(channels) * u32::from(bits) / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        out
    }

    #[test]
    fn one_second_of_silence() {
        let bytes = wav_header(16000, 1, 16, &vec![0u8; 32000]);
        let audio = decode_wav(&bytes).unwrap();
        assert_eq!(audio.len(), 16000);
        assert!(audio.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn half_scale_sample() {
        let bytes = wav_header(16000, 1, 16, &16384i16.to_le_bytes());
        assert_eq!(decode_wav(&bytes).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn rejects_wrong_formats() {
        let data = [0u8; 4];
        for bytes in [
            wav_header(8000, 1, 16, &data),
            wav_header(16000, 2, 16, &data),
            wav_header(16000, 1, 8, &data),
        ] {
            assert!(matches!(decode_wav(&bytes), Err(Error::UnsupportedFormat(_))));
        }
    }

    #[test]
    fn truncated_data_chunk() {
        let mut bytes = wav_header(16000, 1, 16, &[0u8; 100]);
        bytes.truncate(bytes.len() - 10);
        assert!(matches!(decode_wav(&bytes), Err(Error::CorruptFile(_))));
        assert!(matches!(decode_wav(b"RIFF"), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = wav_header(16000, 1, 16, &[0x00, 0x40]);
        // splice a LIST chunk with odd size between fmt and data
        let list = [b"LIST".as_slice(), &3u32.to_le_bytes(), &[1, 2, 3, 0]].concat();
        bytes.splice(36..36, list);
        assert_eq!(decode_wav(&bytes).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn manifest_parsing() {
        assert!(DatasetManifest::parse("").unwrap().is_empty());
        let text = "# header\na.wav\tpristine\tlibri\ttrain\nb.wav\tspoof\ttts1\tdev\nc.wav\tspoof\ttts2\teval\n";
        let m = DatasetManifest::parse(text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.entries()[1].audio_path, "b.wav");
        assert_eq!(m.entries()[2].partition, Partition::Eval);

        let err = DatasetManifest::parse("a.wav\tpristine\tx\ttrain\nb.wav\tbonafide\tx\ttrain\n");
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })));
        let dup = DatasetManifest::parse("a.wav\tpristine\tx\ttrain\na.wav\tspoof\ty\ttrain\n");
        assert!(matches!(dup, Err(Error::DuplicatePath(_))));
        let empty_class = DatasetManifest::parse("a.wav\tpristine\t\ttrain\n");
        assert!(matches!(empty_class, Err(Error::Parse { line: 1, .. })));
    }

    fn field() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_./-][a-zA-Z0-9_ ./-]{0,12}[a-zA-Z0-9_./-]"
    }

    proptest! {
        #[test]
        fn wav_round_trip(q in prop::collection::vec(-32768i32..=32767, 0..200)) {
            let samples: Vec<f32> = q.iter().map(|&v| v as f32 / 32768.0).collect();
            let audio = AudioBuffer::new(samples, SAMPLE_RATE).unwrap();
            let back = decode_wav(&encode_wav(&audio)).unwrap();
            prop_assert_eq!(back, audio);
        }

        #[test]
        fn manifest_round_trip(rows in prop::collection::vec((field(), any::<bool>(), field(), 0u8..3), 0..20)) {
            let mut seen = HashSet::new();
            let entries: Vec<_> = rows
                .into_iter()
                .filter(|r| seen.insert(r.0.clone()))
                .map(|(p, spoof, c, part)| {
                    let label = if spoof { Label::Spoof } else { Label::Pristine };
                    let part = [Partition::Train, Partition::Dev, Partition::Eval][part as usize];
                    ManifestEntry::new(p, label, c, part)
                })
                .collect();
            let m = DatasetManifest::new(entries).unwrap();
            prop_assert_eq!(DatasetManifest::parse(&m.serialize()).unwrap(), m);
        }
    }
}

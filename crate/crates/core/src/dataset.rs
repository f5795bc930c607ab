//! Image loading, resizing, network-input preparation, dataset indexing and
//! train/test splitting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("per-channel mean must have 3 entries, got {0}")]
    MeanShapeMismatch(usize),
    #[error("invalid image shape {height}x{width}x{channels}")]
    BadShape {
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("dataset at {0} contains no images")]
    EmptyDataset(PathBuf),
    #[error("subject `{subject}` has {available} images, needs more than {train_per_subject}")]
    InsufficientSamples {
        subject: String,
        available: usize,
        train_per_subject: usize,
    },
    #[error("train_per_subject must be at least 1")]
    ZeroTrainCount,
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::FileNotFound(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

/// Height x width x channels grid of samples stored row-major as (row, col, channel).
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ImageTensor({}x{}x{})",
            self.height, self.width, self.channels
        )
    }
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        if height == 0
            || width == 0
            || !(channels == 1 || channels == 3)
            || data.len() != height * width * channels
        {
            return Err(DatasetError::BadShape {
                height,
                width,
                channels,
            });
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f32,
    ) -> Result<Self, DatasetError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Luminance as the plain channel average; grayscale images are returned as is.
    pub fn to_grayscale(&self) -> ImageTensor {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| ((px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0) as f32)
            .collect();
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Decodes an 8-bit PGM (P5) or PNG (gray or RGB) file into raw [0, 255] samples.
pub fn load_image(path: &Path) -> Result<ImageTensor, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_image(&bytes).map_err(|e| match e {
        DatasetError::CorruptImage(m) => {
            DatasetError::CorruptImage(format!("{}: {m}", path.display()))
        }
        DatasetError::UnsupportedFormat(m) => {
            DatasetError::UnsupportedFormat(format!("{}: {m}", path.display()))
        }
        other => other,
    })
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor, DatasetError> {
    const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(&PNG_MAGIC) {
        decode_png(bytes)
    } else {
        Err(DatasetError::UnsupportedFormat(
            "unrecognized magic bytes".into(),
        ))
    }
}

fn decode_pgm(bytes: &[u8]) -> Result<ImageTensor, DatasetError> {
    // Header: "P5" <ws> width <ws> height <ws> maxval <single ws> payload, '#' comments allowed.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(DatasetError::CorruptImage("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| DatasetError::CorruptImage("malformed PGM header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(DatasetError::CorruptImage("malformed PGM header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DatasetError::UnsupportedFormat(format!(
            "PGM maxval {maxval}, only 255 is supported"
        )));
    }
    let payload = &bytes[pos..];
    if width == 0 || height == 0 || payload.len() != width * height {
        return Err(DatasetError::CorruptImage(format!(
            "PGM declares {width}x{height} but carries {} bytes",
            payload.len()
        )));
    }
    ImageTensor::new(
        height,
        width,
        1,
        payload.iter().map(|&b| b as f32).collect(),
    )
}

fn decode_png(bytes: &[u8]) -> Result<ImageTensor, DatasetError> {
    let corrupt = |e: png::DecodingError| DatasetError::CorruptImage(e.to_string());
    let decoder = png::Decoder::new(io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let buf_len = reader
        .output_buffer_size()
        .ok_or_else(|| DatasetError::CorruptImage("PNG too large".into()))?;
    let mut buf = vec![0u8; buf_len];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(DatasetError::UnsupportedFormat(format!(
            "PNG bit depth {:?}",
            info.bit_depth
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(DatasetError::UnsupportedFormat(format!(
                "PNG color type {other:?}"
            )))
        }
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let row_bytes = width * channels;
    let mut data = Vec::with_capacity(height * row_bytes);
    for row in buf[..info.buffer_size()]
        .chunks_exact(info.line_size)
        .take(height)
    {
        data.extend(row[..row_bytes].iter().map(|&b| b as f32));
    }
    ImageTensor::new(height, width, channels, data)
}

/// Writes a single-channel image as binary PGM, rounding and clamping to [0, 255].
pub fn write_pgm(path: &Path, img: &ImageTensor) -> Result<(), DatasetError> {
    let gray = img.to_grayscale();
    let mut out = format!("P5\n{} {}\n255\n", gray.width, gray.height).into_bytes();
    out.extend(gray.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8));
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}

/// Bilinear resampling with the half-pixel (align-corners = false) mapping.
///
/// Source coordinate for output index `d` is `(d + 0.5) * in / out - 0.5`,
/// clamped to `[0, in - 1]`.
pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    assert!(
        out_h >= 1 && out_w >= 1,
        "output dimensions must be positive"
    );
    let taps = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(img.height, out_h);
    let cols = taps(img.width, out_w);
    let ch = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            for c in 0..ch {
                let top = img.at(r0, c0, c) as f64 * (1.0 - fx) + img.at(r0, c1, c) as f64 * fx;
                let bottom = img.at(r1, c0, c) as f64 * (1.0 - fx) + img.at(r1, c1, c) as f64 * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    ImageTensor {
        height: out_h,
        width: out_w,
        channels: ch,
        data,
    }
}

/// Replicates grayscale to three channels and subtracts the per-channel mean.
pub fn to_network_input(img: &ImageTensor, mean: &[f32]) -> Result<ImageTensor, DatasetError> {
    if mean.len() != 3 {
        return Err(DatasetError::MeanShapeMismatch(mean.len()));
    }
    let pixels = img.height * img.width;
    let mut data = Vec::with_capacity(pixels * 3);
    for p in 0..pixels {
        for (c, m) in mean.iter().enumerate() {
            let src = if img.channels == 1 {
                img.data[p]
            } else {
                img.data[p * 3 + c]
            };
            data.push(src - m);
        }
    }
    Ok(ImageTensor {
        height: img.height,
        width: img.width,
        channels: 3,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entry {
    pub subject_id: String,
    pub image_path: PathBuf,
}

/// Sorted (subject, image) listing of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    entries: Vec<Entry>,
    subjects: Vec<String>,
}

impl DatasetIndex {
    /// Builds an index from arbitrary entries, sorting them and deriving the subject list.
    pub fn from_entries(mut entries: Vec<Entry>) -> Self {
        entries.sort();
        entries.dedup();
        let mut subjects: Vec<String> = entries.iter().map(|e| e.subject_id.clone()).collect();
        subjects.dedup();
        DatasetIndex { entries, subjects }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn by_subject(&self) -> BTreeMap<&str, Vec<&Entry>> {
        let mut groups: BTreeMap<&str, Vec<&Entry>> = BTreeMap::new();
        for e in &self.entries {
            groups.entry(e.subject_id.as_str()).or_default().push(e);
        }
        groups
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
}

/// Indexes `<root>/<subject_id>/<image files>`. Non-image files are skipped with a warning.
pub fn index_dataset(root: &Path) -> Result<DatasetIndex, DatasetError> {
    let mut entries = Vec::new();
    for subject_dir in fs::read_dir(root).map_err(io_err(root))? {
        let subject_dir = subject_dir.map_err(io_err(root))?;
        let dir_path = subject_dir.path();
        if !dir_path.is_dir() {
            log::warn!("skipping non-directory {}", dir_path.display());
            continue;
        }
        let Some(subject_id) = dir_path
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_owned)
        else {
            log::warn!(
                "skipping non-UTF-8 subject directory {}",
                dir_path.display()
            );
            continue;
        };
        for file in fs::read_dir(&dir_path).map_err(io_err(&dir_path))? {
            let path = file.map_err(io_err(&dir_path))?.path();
            if path.is_file() && is_image_file(&path) {
                entries.push(Entry {
                    subject_id: subject_id.clone(),
                    image_path: path,
                });
            } else {
                log::warn!("skipping non-image entry {}", path.display());
            }
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    Ok(DatasetIndex::from_entries(entries))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    FirstN,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_per_subject: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_per_subject: 5,
            seed: 0,
            mode: SplitMode::FirstN,
        }
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Per-subject train/test partition.
pub fn split_dataset(
    index: &DatasetIndex,
    spec: &SplitSpec,
) -> Result<(DatasetIndex, DatasetIndex), DatasetError> {
    if spec.train_per_subject == 0 {
        return Err(DatasetError::ZeroTrainCount);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (subject, mut group) in index.by_subject() {
        if group.len() <= spec.train_per_subject {
            return Err(DatasetError::InsufficientSamples {
                subject: subject.to_owned(),
                available: group.len(),
                train_per_subject: spec.train_per_subject,
            });
        }
        if spec.mode == SplitMode::Random {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(subject.as_bytes()));
            group.shuffle(&mut rng);
        }
        let (head, tail) = group.split_at(spec.train_per_subject);
        train.extend(head.iter().map(|&e| e.clone()));
        test.extend(tail.iter().map(|&e| e.clone()));
    }
    Ok((
        DatasetIndex::from_entries(train),
        DatasetIndex::from_entries(test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm_bytes(w: usize, h: usize, payload: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n{w} {h}\n255\n").into_bytes();
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn decodes_tiny_pgm() {
        let img = decode_image(&pgm_bytes(2, 2, &[0, 255, 128, 64])).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn pgm_header_with_comment() {
        let mut b = b"P5\n# made by hand\n3 1\n# again\n255\n".to_vec();
        b.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_image(&b).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn iit_sized_pgm_has_landscape_shape() {
        let img = decode_image(&pgm_bytes(320, 240, &vec![7u8; 320 * 240])).unwrap();
        assert_eq!((img.height(), img.width()), (240, 320));
    }

    #[test]
    fn pgm_payload_mismatch_is_corrupt() {
        assert!(matches!(
            decode_image(&pgm_bytes(2, 2, &[1, 2, 3])),
            Err(DatasetError::CorruptImage(_))
        ));
        assert!(matches!(
            decode_image(&pgm_bytes(2, 2, &[1, 2, 3, 4, 5])),
            Err(DatasetError::CorruptImage(_))
        ));
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        assert!(matches!(
            decode_image(b"GIF89a...."),
            Err(DatasetError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_image(Path::new("/definitely/not/here.pgm")),
            Err(DatasetError::FileNotFound(_))
        ));
    }

    #[test]
    fn decodes_png_written_by_stock_encoder() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 1, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[10, 20, 30]).unwrap();
        }
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (1, 1, 3));
        assert_eq!(img.data(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn decodes_gray_png() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 3, 2);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3, 4, 5, 6]).unwrap();
        }
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.height(), img.width(), img.channels()), (2, 3, 1));
        assert_eq!(img.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn rgba_png_is_unsupported() {
        let mut bytes = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut bytes, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 2, 3, 4]).unwrap();
        }
        assert!(matches!(
            decode_image(&bytes),
            Err(DatasetError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageTensor::filled(7, 5, 3, 77.0).unwrap();
        let out = resize_bilinear(&img, 224, 224);
        assert_eq!((out.height(), out.width(), out.channels()), (224, 224, 3));
        assert!(out.data().iter().all(|&v| v == 77.0));
    }

    #[test]
    fn resize_iit_to_vgg_input() {
        let img = ImageTensor::filled(240, 320, 1, 3.0).unwrap();
        let out = resize_bilinear(&img, 224, 224);
        assert_eq!((out.height(), out.width()), (224, 224));
    }

    #[test]
    fn resize_2x2_to_4x4_matches_hand_grid() {
        // Half-pixel mapping puts output samples at source coordinates
        // 0 (clamped), 0.25, 0.75, 1 (clamped) along both axes; the input is
        // the plane 100*row + 100*col so the interpolant is exact.
        let img = ImageTensor::new(2, 2, 1, vec![0.0, 100.0, 100.0, 200.0]).unwrap();
        let out = resize_bilinear(&img, 4, 4);
        #[rustfmt::skip]
        let expected = [
            0.0, 25.0, 75.0, 100.0,
            25.0, 50.0, 100.0, 125.0,
            75.0, 100.0, 150.0, 175.0,
            100.0, 125.0, 175.0, 200.0,
        ];
        for (a, e) in out.data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-4, "{a} vs {e}");
        }
    }

    #[test]
    fn network_input_cases() {
        let gray = ImageTensor::filled(3, 3, 1, 100.0).unwrap();
        let out = to_network_input(&gray, &[100.0, 100.0, 100.0]).unwrap();
        assert_eq!(out.channels(), 3);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let rgb = ImageTensor::new(1, 2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(to_network_input(&rgb, &[0.0; 3]).unwrap(), rgb);

        let gray = ImageTensor::filled(2, 2, 1, 128.0).unwrap();
        let out = to_network_input(&gray, &[123.68, 116.779, 103.939]).unwrap();
        for px in out.data().chunks(3) {
            assert!((px[0] - 4.32).abs() < 1e-4);
            assert!((px[1] - 11.221).abs() < 1e-4);
            assert!((px[2] - 24.061).abs() < 1e-4);
        }

        assert!(matches!(
            to_network_input(&gray, &[1.0, 2.0]),
            Err(DatasetError::MeanShapeMismatch(2))
        ));
    }

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, pgm_bytes(1, 1, &[0])).unwrap();
    }

    #[test]
    fn index_small_tree() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("s2/c.pgm"));
        touch(&dir.path().join("s1/b.pgm"));
        touch(&dir.path().join("s1/a.pgm"));
        fs::write(dir.path().join("s1/notes.txt"), "x").unwrap();
        let idx = index_dataset(dir.path()).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.subjects(), &["s1".to_string(), "s2".to_string()]);
        let names: Vec<_> = idx
            .entries()
            .iter()
            .map(|e| {
                e.image_path
                    .file_name()
                    .unwrap()
                    .to_str()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        assert_eq!(names, ["a.pgm", "b.pgm", "c.pgm"]);
    }

    #[test]
    fn index_empty_root() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("s1")).unwrap();
        assert!(matches!(
            index_dataset(dir.path()),
            Err(DatasetError::EmptyDataset(_))
        ));
    }

    pub(crate) fn synthetic_index(subjects: usize, per_subject: usize) -> DatasetIndex {
        let entries = (0..subjects)
            .flat_map(|s| {
                (0..per_subject).map(move |i| Entry {
                    subject_id: format!("{s:04}"),
                    image_path: PathBuf::from(format!("{s:04}/{i:02}.pgm")),
                })
            })
            .collect();
        DatasetIndex::from_entries(entries)
    }

    #[test]
    fn dataset_scale_layouts() {
        assert_eq!(synthetic_index(224, 10).len(), 2240);
        let casia = synthetic_index(1000, 20);
        assert_eq!(casia.len(), 20000);
        assert_eq!(casia.subjects().len(), 1000);
    }

    #[test]
    fn half_split_and_single_sample_split() {
        let idx = synthetic_index(4, 10);
        let (train, test) = split_dataset(&idx, &SplitSpec::default()).unwrap();
        assert_eq!((train.len(), test.len()), (20, 20));
        for group in train.by_subject().values() {
            assert_eq!(group.len(), 5);
        }
        // first_n takes the lexicographically first images
        assert!(train.entries()[0].image_path.ends_with("00.pgm"));

        let spec = SplitSpec {
            train_per_subject: 1,
            ..SplitSpec::default()
        };
        let (train, test) = split_dataset(&idx, &spec).unwrap();
        assert_eq!((train.len(), test.len()), (4, 36));
    }

    #[test]
    fn insufficient_samples() {
        let idx = synthetic_index(2, 5);
        let spec = SplitSpec {
            train_per_subject: 5,
            ..SplitSpec::default()
        };
        assert!(matches!(
            split_dataset(&idx, &spec),
            Err(DatasetError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn random_split_is_seeded() {
        let idx = synthetic_index(6, 10);
        let spec = |seed| SplitSpec {
            train_per_subject: 3,
            seed,
            mode: SplitMode::Random,
        };
        let a = split_dataset(&idx, &spec(7)).unwrap();
        let b = split_dataset(&idx, &spec(7)).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&idx, &spec(8)).unwrap();
        assert_ne!(a.0, c.0);
    }

    proptest! {
        #[test]
        fn split_partitions_index(
            counts in proptest::collection::vec(2usize..12, 1..8),
            train_per_subject in 1usize..4,
            seed in any::<u64>(),
            random in any::<bool>(),
        ) {
            let entries: Vec<Entry> = counts.iter().enumerate().flat_map(|(s, &n)| {
                (0..n).map(move |i| Entry {
                    subject_id: format!("subj{s}"),
                    image_path: PathBuf::from(format!("subj{s}/img{i}.png")),
                })
            }).collect();
            let idx = DatasetIndex::from_entries(entries);
            let spec = SplitSpec {
                train_per_subject,
                seed,
                mode: if random { SplitMode::Random } else { SplitMode::FirstN },
            };
            match split_dataset(&idx, &spec) {
                Ok((train, test)) => {
                    prop_assert_eq!(train.len() + test.len(), idx.len());
                    let mut all: Vec<_> = train.entries().iter().chain(test.entries()).cloned().collect();
                    all.sort();
                    prop_assert_eq!(all.as_slice(), idx.entries());
                }
                Err(DatasetError::InsufficientSamples { .. }) => {
                    prop_assert!(counts.iter().any(|&n| n <= train_per_subject));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn resize_to_same_size_is_identity(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..h * w * 3).map(|_| rng.gen_range(0.0f32..255.0)).collect();
            let img = ImageTensor::new(h, w, 3, data).unwrap();
            prop_assert_eq!(resize_bilinear(&img, h, w), img);
        }

        #[test]
        fn resize_stays_within_input_range(h in 1usize..7, w in 1usize..7, oh in 1usize..12, ow in 1usize..12, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.0f32..255.0)).collect();
            let (lo, hi) = data.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            let img = ImageTensor::new(h, w, 1, data).unwrap();
            let out = resize_bilinear(&img, oh, ow);
            prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-3 && v <= hi + 1e-3));
        }

        #[test]
        fn pgm_round_trip(h in 1usize..10, w in 1usize..10, seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let payload: Vec<u8> = (0..h * w).map(|_| rng.gen()).collect();
            let img = ImageTensor::new(h, w, 1, payload.iter().map(|&b| b as f32).collect()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("x.pgm");
            write_pgm(&path, &img).unwrap();
            let bytes = fs::read(&path).unwrap();
            prop_assert_eq!(&bytes[bytes.len() - payload.len()..], payload.as_slice());
            prop_assert_eq!(load_image(&path).unwrap(), img);
        }
    }
}

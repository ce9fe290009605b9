//! On-disk dataset adapter.
//!
//! ```text
//! <root>/manifest.json                      format tag, resolution, split counts
//! <root>/palette.json                       parse palette sidecar
//! <root>/<category>/train_pairs.txt         "<model file> <garment file>" per line
//! <root>/<category>/test_pairs_paired.txt
//! <root>/<category>/images/<id>_0.{png,jpg} model photo
//! <root>/<category>/images/<id>_1.{png,jpg} in-shop garment
//! <root>/<category>/keypoints/<id>_2.json   {"keypoints": [[x, y, conf(, idx)], ...18]}
//! <root>/<category>/label_maps/<id>_4.png   palette-indexed parse map
//! <root>/<category>/dense/<id>_5.png        8-bit dense-pose part labels
//! <root>/<category>/dense/<id>_5_uv.png     16-bit RGB: U, V, unused
//! ```
//!
//! `<category>` is one of `upper_body`, `lower_body`, `dresses`.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::palette::{PaletteManifest, CLASS_COLORS, NUM_CLASSES};
use super::split::{PairEntry, SplitSpec};
use super::{GarmentCategory, Keypoint, LabelMap, Resolution, RgbImage, SampleRecord, UvMap, NUM_KEYPOINTS};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "tryon-dataset/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Test,
}

impl SplitKind {
    pub fn pair_file(self) -> &'static str {
        match self {
            SplitKind::Train => "train_pairs.txt",
            SplitKind::Test => "test_pairs_paired.txt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub resolution: Resolution,
    pub train_counts: [usize; 3],
    pub test_counts: [usize; 3],
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    keypoints: Vec<Vec<f32>>,
}

fn item_stem(file: &str) -> &str {
    let stem = file.rsplit_once('.').map_or(file, |(s, _)| s);
    stem.rsplit_once('_').map_or(stem, |(s, _)| s)
}

fn read_pairs(path: &Path, category: GarmentCategory) -> Result<Vec<PairEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut cols = line.split_whitespace();
        let (Some(model), Some(garment)) = (cols.next(), cols.next()) else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Layout(format!("{}:{}: expected two columns", path.display(), lineno + 1)));
        };
        out.push(PairEntry { model_id: model.to_string(), garment_id: garment.to_string(), category });
    }
    Ok(out)
}

impl SplitSpec {
    /// Reads the per-category pair lists. Ids keep their file names
    /// (`<id>_0.png`), see [`item_stem`].
    pub fn from_root(root: &Path) -> Result<SplitSpec> {
        let mut spec = SplitSpec::default();
        for cat in GarmentCategory::ALL {
            let dir = root.join(cat.as_str());
            spec.train.extend(read_pairs(&dir.join(SplitKind::Train.pair_file()), cat)?);
            spec.test.extend(read_pairs(&dir.join(SplitKind::Test.pair_file()), cat)?);
        }
        Ok(spec)
    }

    pub fn entries(&self, kind: SplitKind) -> &[PairEntry] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Test => &self.test,
        }
    }
}

/// Item id (without role suffix and extension) of a pair-file entry.
pub fn entry_item_id(file: &str) -> String {
    item_stem(file).to_string()
}

fn find_image(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "jpg", "jpeg"].iter().map(|ext| dir.join(format!("{stem}.{ext}"))).find(|p| p.exists())
}

fn require(path: PathBuf, item_id: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingAnnotation { item_id: item_id.to_string(), path })
    }
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(RgbImage::from_rgb8(&img.to_rgb8()))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.to_rgb8().save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Raw 8-bit samples of a single-channel (gray or indexed) PNG.
fn read_png_u8(path: &Path) -> Result<LabelMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale)
    {
        return Err(Error::Layout(format!("{}: expected an 8-bit indexed or gray PNG", path.display())));
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
    let stride = frame.line_size;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        data.extend_from_slice(&buf[y * stride..y * stride + w]);
    }
    Ok(LabelMap { height: h, width: w, data })
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, palette: Option<Vec<u8>>, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let map = |e: png::EncodingError| Error::Layout(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(map)?;
    writer.write_image_data(data).map_err(map)?;
    writer.finish().map_err(map)
}

/// Palette-indexed parse map.
pub fn write_parse_png(path: &Path, parse: &LabelMap) -> Result<()> {
    let palette: Vec<u8> = CLASS_COLORS.iter().flatten().copied().collect();
    write_png(path, parse.width, parse.height, png::ColorType::Indexed, png::BitDepth::Eight, Some(palette), &parse.data)
}

pub fn read_parse_png(path: &Path) -> Result<LabelMap> {
    read_png_u8(path)
}

fn write_uv_png(path: &Path, uv: &UvMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(uv.height * uv.width * 6);
    for px in uv.data.chunks_exact(2) {
        for v in [px[0], px[1], 0.0] {
            bytes.extend_from_slice(&((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
        }
    }
    write_png(path, uv.width, uv.height, png::ColorType::Rgb, png::BitDepth::Sixteen, None, &bytes)
}

fn read_uv_png(path: &Path) -> Result<UvMap> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Sixteen || info.color_type != png::ColorType::Rgb {
        return Err(Error::Layout(format!("{}: expected a 16-bit RGB PNG", path.display())));
    }
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h * 6)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
    let mut data = Vec::with_capacity(w * h * 2);
    for y in 0..h {
        let row = &buf[y * frame.line_size..];
        for x in 0..w {
            for c in 0..2 {
                let o = (x * 3 + c) * 2;
                data.push(u16::from_be_bytes([row[o], row[o + 1]]) as f32 / 65535.0);
            }
        }
    }
    Ok(UvMap { height: h, width: w, data })
}

fn read_keypoints(path: &Path, item_id: &str) -> Result<Vec<Keypoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: KeypointFile = serde_json::from_str(&text)?;
    if file.keypoints.len() != NUM_KEYPOINTS {
        return Err(Error::Layout(format!("item {item_id}: expected {NUM_KEYPOINTS} keypoints")));
    }
    file.keypoints
        .iter()
        .map(|k| match k.as_slice() {
            [x, y, c, ..] => {
                // Negative coordinates mark undetected joints.
                let missing = *x < 0.0 || *y < 0.0;
                Ok(Keypoint { x: *x, y: *y, confidence: if missing { 0.0 } else { *c } })
            }
            _ => Err(Error::Layout(format!("item {item_id}: keypoint entries need x, y, confidence"))),
        })
        .collect()
}

fn resize_labels(src: &LabelMap, res: Resolution) -> LabelMap {
    if src.resolution() == res {
        return src.clone();
    }
    let mut out = LabelMap::filled(res, 0);
    for y in 0..res.height {
        let sy = ((y as f32 + 0.5) * src.height as f32 / res.height as f32) as usize;
        for x in 0..res.width {
            let sx = ((x as f32 + 0.5) * src.width as f32 / res.width as f32) as usize;
            out.set(y, x, src.get(sy.min(src.height - 1), sx.min(src.width - 1)));
        }
    }
    out
}

fn resize_uv(src: &UvMap, res: Resolution) -> UvMap {
    if src.height == res.height && src.width == res.width {
        return src.clone();
    }
    let mut out = UvMap::zeros(res);
    for y in 0..res.height {
        let sy = (((y as f32 + 0.5) * src.height as f32 / res.height as f32) as usize).min(src.height - 1);
        for x in 0..res.width {
            let sx = (((x as f32 + 0.5) * src.width as f32 / res.width as f32) as usize).min(src.width - 1);
            let s = 2 * (sy * src.width + sx);
            let d = 2 * (y * res.width + x);
            out.data[d] = src.data[s];
            out.data[d + 1] = src.data[s + 1];
        }
    }
    out
}

fn resize_rgb(src: RgbImage, res: Resolution) -> RgbImage {
    if src.resolution() == res {
        return src;
    }
    let resized = image::imageops::resize(&src.to_rgb8(), res.width as u32, res.height as u32, image::imageops::FilterType::Triangle);
    RgbImage::from_rgb8(&resized)
}

fn load_record(root: &Path, entry: &PairEntry, res: Resolution) -> Result<SampleRecord> {
    let dir = root.join(entry.category.as_str());
    let model_stem = entry.model_id.rsplit_once('.').map_or(entry.model_id.as_str(), |(s, _)| s);
    let garment_stem = entry.garment_id.rsplit_once('.').map_or(entry.garment_id.as_str(), |(s, _)| s);
    let item_id = item_stem(&entry.model_id).to_string();
    let images = dir.join("images");
    let model_path = find_image(&images, model_stem)
        .ok_or_else(|| Error::MissingAnnotation { item_id: item_id.clone(), path: images.join(&entry.model_id) })?;
    let garment_path = find_image(&images, garment_stem)
        .ok_or_else(|| Error::MissingAnnotation { item_id: item_id.clone(), path: images.join(&entry.garment_id) })?;
    let kp_path = require(dir.join("keypoints").join(format!("{item_id}_2.json")), &item_id)?;
    let parse_path = require(dir.join("label_maps").join(format!("{item_id}_4.png")), &item_id)?;
    let dense_path = require(dir.join("dense").join(format!("{item_id}_5.png")), &item_id)?;
    let uv_path = require(dir.join("dense").join(format!("{item_id}_5_uv.png")), &item_id)?;

    let parse = read_parse_png(&parse_path)?;
    if let Some(&v) = parse.data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return Err(Error::InvalidParse { item_id, value: v });
    }
    let model_image = read_rgb(&model_path)?;
    let src_res = model_image.resolution();
    let sx = res.width as f32 / src_res.width as f32;
    let sy = res.height as f32 / src_res.height as f32;
    let mut keypoints = read_keypoints(&kp_path, &item_id)?;
    if src_res != res {
        for k in keypoints.iter_mut().filter(|k| k.is_present()) {
            k.x = ((k.x + 0.5) * sx - 0.5).clamp(0.0, (res.width - 1) as f32);
            k.y = ((k.y + 0.5) * sy - 0.5).clamp(0.0, (res.height - 1) as f32);
        }
    }
    let record = SampleRecord {
        item_id,
        category: entry.category,
        model_image: resize_rgb(model_image, res),
        garment_image: resize_rgb(read_rgb(&garment_path)?, res),
        keypoints,
        densepose_labels: resize_labels(&read_png_u8(&dense_path)?, res),
        densepose_uv: resize_uv(&read_uv_png(&uv_path)?, res),
        parse: resize_labels(&parse, res),
    };
    record.validate()?;
    Ok(record)
}

/// Streams the records of one split.
///
/// Missing files surface as per-record [`Error::MissingAnnotation`] items and
/// the stream continues; out-of-range parse labels are a hard error after
/// which the stream ends.
pub struct DatasetStream {
    root: PathBuf,
    entries: Vec<PairEntry>,
    resolution: Resolution,
    next: usize,
    failed: bool,
}

impl DatasetStream {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PairEntry] {
        &self.entries
    }
}

impl Iterator for DatasetStream {
    type Item = Result<SampleRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.entries.len() {
            return None;
        }
        let entry = &self.entries[self.next];
        self.next += 1;
        let rec = load_record(&self.root, entry, self.resolution);
        if matches!(rec, Err(Error::InvalidParse { .. })) {
            self.failed = true;
        }
        Some(rec)
    }
}

pub fn load_dataset(
    root: &Path,
    split: SplitKind,
    resolution: Resolution,
    category_filter: Option<GarmentCategory>,
) -> Result<DatasetStream> {
    if !root.is_dir() {
        return Err(Error::Layout(format!("dataset root {} is not a directory", root.display())));
    }
    let spec = SplitSpec::from_root(root)?;
    let entries = spec
        .entries(split)
        .iter()
        .filter(|e| category_filter.is_none_or(|c| c == e.category))
        .cloned()
        .collect();
    Ok(DatasetStream { root: root.to_path_buf(), entries, resolution, next: 0, failed: false })
}

/// Loads a whole split, failing on the first bad record.
pub fn load_all(root: &Path, split: SplitKind, resolution: Resolution, category_filter: Option<GarmentCategory>) -> Result<Vec<SampleRecord>> {
    load_dataset(root, split, resolution, category_filter)?.collect()
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_record(root: &Path, rec: &SampleRecord) -> Result<()> {
    let dir = root.join(rec.category.as_str());
    let id = &rec.item_id;
    for sub in ["images", "keypoints", "label_maps", "dense"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    save_rgb(&dir.join("images").join(format!("{id}_0.png")), &rec.model_image)?;
    save_rgb(&dir.join("images").join(format!("{id}_1.png")), &rec.garment_image)?;
    let kp = KeypointFile { keypoints: rec.keypoints.iter().map(|k| vec![k.x, k.y, k.confidence]).collect() };
    let kp_path = dir.join("keypoints").join(format!("{id}_2.json"));
    fs::write(&kp_path, serde_json::to_string(&kp)?).map_err(|e| Error::io(&kp_path, e))?;
    write_parse_png(&dir.join("label_maps").join(format!("{id}_4.png")), &rec.parse)?;
    let dl = &rec.densepose_labels;
    write_png(&dir.join("dense").join(format!("{id}_5.png")), dl.width, dl.height, png::ColorType::Grayscale, png::BitDepth::Eight, None, &dl.data)?;
    write_uv_png(&dir.join("dense").join(format!("{id}_5_uv.png")), &rec.densepose_uv)
}

/// Writes records, pair lists, the manifest and the palette sidecar.
pub fn write_dataset(root: &Path, res: Resolution, records: &[SampleRecord], splits: &[(SplitKind, Vec<PairEntry>)]) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for rec in records {
        write_record(root, rec)?;
    }
    let mut spec = SplitSpec::default();
    for (kind, entries) in splits {
        for cat in GarmentCategory::ALL {
            let lines: String = entries
                .iter()
                .filter(|e| e.category == cat)
                .map(|e| format!("{}_0.png {}_1.png\n", e.model_id, e.garment_id))
                .collect();
            let dir = root.join(cat.as_str());
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(kind.pair_file());
            fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
        }
        match kind {
            SplitKind::Train => spec.train = entries.clone(),
            SplitKind::Test => spec.test = entries.clone(),
        }
    }
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        resolution: res,
        train_counts: spec.train_counts(),
        test_counts: spec.test_counts(),
    };
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    let path = root.join("palette.json");
    fs::write(&path, serde_json::to_string_pretty(&PaletteManifest::standard())?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems() {
        assert_eq!(item_stem("013563_0.jpg"), "013563");
        assert_eq!(entry_item_id("abc_1.png"), "abc");
    }

    #[test]
    fn parse_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.png");
        let lm = LabelMap { height: 3, width: 5, data: (0..15).collect() };
        write_parse_png(&p, &lm).unwrap();
        assert_eq!(read_parse_png(&p).unwrap(), lm);
    }

    #[test]
    fn empty_root_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let s = load_dataset(dir.path(), SplitKind::Test, Resolution::new(64, 48), None).unwrap();
        assert_eq!(s.count(), 0);
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{EmberError, Result};

/// Backbone feature vectors for one image: the original image half and the
/// ELA-image half, each `width` floats. Ids missing from a corpus resolve to
/// [`ImageFeature::absent`], whose halves are zero with present flags down.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeature {
    pub id: String,
    pub original: Vec<f64>,
    pub ela: Vec<f64>,
    pub original_present: bool,
    pub ela_present: bool,
}

impl ImageFeature {
    pub fn new(id: impl Into<String>, original: Vec<f64>, ela: Vec<f64>) -> Self {
        ImageFeature {
            id: id.into(),
            original,
            ela,
            original_present: true,
            ela_present: true,
        }
    }

    pub fn absent(id: impl Into<String>, width: usize) -> Self {
        ImageFeature {
            id: id.into(),
            original: vec![0.0; width],
            ela: vec![0.0; width],
            original_present: false,
            ela_present: false,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.original.iter().chain(&self.ela).all(|v| v.is_finite())
    }
}

/// All features of one corpus, fixed-width per file header.
#[derive(Clone, Debug, Default)]
pub struct FeatureTable {
    width: usize,
    map: BTreeMap<String, ImageFeature>,
}

impl FeatureTable {
    pub fn new(width: usize) -> Self {
        FeatureTable {
            width,
            map: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(&mut self, feature: ImageFeature) -> Result<()> {
        if feature.original.len() != self.width || feature.ela.len() != self.width {
            return Err(EmberError::dims(
                format!("feature vector for {}", feature.id),
                format!("2x{}", self.width),
                format!("{}+{}", feature.original.len(), feature.ela.len()),
            ));
        }
        if !feature.is_finite() {
            return Err(EmberError::NonFinite {
                stage: format!("image feature {}", feature.id),
            });
        }
        self.map.insert(feature.id.clone(), feature);
        Ok(())
    }

    /// Feature for an id; missing ids come back as an absent placeholder.
    pub fn resolve(&self, id: &str) -> ImageFeature {
        self.map
            .get(id)
            .cloned()
            .unwrap_or_else(|| ImageFeature::absent(id, self.width))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ImageFeature)> {
        self.map.iter()
    }
}

/// Load a feature file: a text header declaring `width` and `count`, then one
/// row per image holding the id and `2 * width` floats (original half, then
/// ELA half).
pub fn load_image_features(path: impl AsRef<Path>) -> Result<FeatureTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|_| EmberError::MissingFile {
        path: path.display().to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let parse_header =
        |field: &str, entry: Option<(usize, std::io::Result<String>)>| -> Result<usize> {
            let (lineno, line) = entry.ok_or_else(|| EmberError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("missing `{field}` header"),
            })?;
            let line = line?;
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next()) {
                (Some(key), Some(value)) if key == field => {
                    value.parse().map_err(|_| EmberError::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        message: format!("bad `{field}` value '{value}'"),
                    })
                }
                _ => Err(EmberError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("expected `{field} <n>` header, got '{line}'"),
                }),
            }
        };

    let width = parse_header("width", lines.next())?;
    let count = parse_header("count", lines.next())?;

    let mut table = FeatureTable::new(width);
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_string();
        let values: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| EmberError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if values.len() != 2 * width {
            return Err(EmberError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("expected {} floats, got {}", 2 * width, values.len()),
            });
        }
        let (orig, ela) = values.split_at(width);
        table.insert(ImageFeature::new(id, orig.to_vec(), ela.to_vec()))?;
    }
    if table.len() != count {
        return Err(EmberError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("header count {count} but {} rows", table.len()),
        });
    }
    Ok(table)
}

pub fn write_image_features(table: &FeatureTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "width {}", table.width())?;
    writeln!(out, "count {}", table.len())?;
    for (id, feature) in table.iter() {
        write!(out, "{id}")?;
        for v in feature.original.iter().chain(&feature.ela) {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_with_header_is_an_empty_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tsv");
        fs::write(&path, "width 4\ncount 0\n").unwrap();
        let table = load_image_features(&path).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.width(), 4);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut table = FeatureTable::new(3);
        table
            .insert(ImageFeature::new(
                "img1",
                vec![0.1, -2.5e-17, 1.0 / 3.0],
                vec![9.99, 0.0, -1.0],
            ))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tsv");
        write_image_features(&table, &path).unwrap();
        let loaded = load_image_features(&path).unwrap();
        assert_eq!(loaded.resolve("img1"), table.resolve("img1"));
        // A second write produces identical bytes.
        let path2 = dir.path().join("f2.tsv");
        write_image_features(&loaded, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn wrong_width_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tsv");
        fs::write(&path, "width 2\ncount 1\nimg1 1 2 3\n").unwrap();
        match load_image_features(&path) {
            Err(EmberError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_ids_resolve_to_absent_features() {
        let table = FeatureTable::new(2);
        let f = table.resolve("ghost");
        assert!(!f.original_present && !f.ela_present);
        assert_eq!(f.original, vec![0.0, 0.0]);
    }
}

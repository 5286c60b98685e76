//! Class metadata: names, categories, evaluability, average instance sizes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::IGNORE_LABEL;
use crate::error::{Error, Result};

/// One class definition. `avg_size` is the mean instance area in pixels,
/// absent until measured; classes without it carry no instance statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub id: u16,
    pub name: String,
    pub category: String,
    pub avg_size: Option<f64>,
    pub evaluable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassTableFile {
    classes: Vec<ClassDef>,
}

/// Immutable lookup table over class definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: Vec<ClassDef>,
    by_id: HashMap<u16, usize>,
    by_name: HashMap<String, usize>,
}

impl ClassTable {
    pub fn new(classes: Vec<ClassDef>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput {
                what: "class table".into(),
            });
        }
        let mut by_id = HashMap::with_capacity(classes.len());
        let mut by_name = HashMap::with_capacity(classes.len());
        for (idx, def) in classes.iter().enumerate() {
            if def.id == IGNORE_LABEL {
                return Err(Error::invalid(
                    "class table",
                    format!("id {} is reserved for ignore", IGNORE_LABEL),
                ));
            }
            if by_id.insert(def.id, idx).is_some() {
                return Err(Error::invalid(
                    "class table",
                    format!("duplicate class id {}", def.id),
                ));
            }
            if by_name.insert(def.name.clone(), idx).is_some() {
                return Err(Error::invalid(
                    "class table",
                    format!("duplicate class name {:?}", def.name),
                ));
            }
            if def.category.is_empty() {
                return Err(Error::invalid(
                    "class table",
                    format!("class {} has an empty category", def.id),
                ));
            }
            if let Some(avg) = def.avg_size {
                if !(avg > 0.0) || !avg.is_finite() {
                    return Err(Error::invalid(
                        "class table",
                        format!("class {} avg_size {avg} must be finite and > 0", def.id),
                    ));
                }
            }
        }
        Ok(ClassTable {
            classes,
            by_id,
            by_name,
        })
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, id: u16) -> Option<&ClassDef> {
        self.by_id.get(&id).map(|&i| &self.classes[i])
    }

    pub fn require(&self, id: u16) -> Result<&ClassDef> {
        self.get(id).ok_or(Error::LabelNotInTable { label: id })
    }

    pub fn by_name(&self, name: &str) -> Option<&ClassDef> {
        self.by_name.get(name).map(|&i| &self.classes[i])
    }

    pub fn avg_size(&self, id: u16) -> Result<f64> {
        self.require(id)?
            .avg_size
            .ok_or(Error::MissingAvgSize { class_id: id })
    }

    /// Category names, deduplicated and sorted for stable indexing.
    pub fn category_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.classes.iter().map(|c| c.category.clone()).collect();
        names.sort();
        names.dedup();
        names
    }

    /// Maps every class id to its index in `category_names()`.
    pub fn category_index(&self) -> HashMap<u16, usize> {
        let names = self.category_names();
        self.classes
            .iter()
            .map(|c| {
                let idx = names
                    .binary_search(&c.category)
                    .expect("category present by construction");
                (c.id, idx)
            })
            .collect()
    }
}

pub fn read_class_table(path: &Path) -> Result<ClassTable> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ClassTableFile =
        serde_json::from_str(&data).map_err(|e| Error::json(path, e.to_string()))?;
    ClassTable::new(file.classes)
}

pub fn write_class_table(path: &Path, table: &ClassTable) -> Result<()> {
    let file = ClassTableFile {
        classes: table.classes().to_vec(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
pub(crate) fn test_table(defs: &[(u16, &str, &str, Option<f64>, bool)]) -> ClassTable {
    let classes = defs
        .iter()
        .map(|&(id, name, category, avg_size, evaluable)| ClassDef {
            id,
            name: name.into(),
            category: category.into(),
            avg_size,
            evaluable,
        })
        .collect();
    ClassTable::new(classes).expect("valid test table")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn parses_schema() {
        let path = tmp("t.json");
        std::fs::write(
            &path,
            r#"{"classes":[
                {"id":0,"name":"road","category":"flat","avg_size":null,"evaluable":true},
                {"id":13,"name":"car","category":"vehicle","avg_size":5400.5,"evaluable":true}
            ]}"#,
        )
        .unwrap();
        let table = read_class_table(&path).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.get(13).unwrap().name, "car");
        assert_eq!(table.avg_size(13).unwrap(), 5400.5);
        assert!(matches!(
            table.avg_size(0),
            Err(Error::MissingAvgSize { class_id: 0 })
        ));
        assert!(matches!(
            table.require(99),
            Err(Error::LabelNotInTable { label: 99 })
        ));
    }

    #[test]
    fn round_trip() {
        let table = test_table(&[
            (0, "road", "flat", None, true),
            (1, "car", "vehicle", Some(100.0), true),
            (2, "sky", "nature", None, false),
        ]);
        let path = tmp("t.json");
        write_class_table(&path, &table).unwrap();
        assert_eq!(read_class_table(&path).unwrap(), table);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = ClassTable::new(vec![
            ClassDef {
                id: 1,
                name: "a".into(),
                category: "x".into(),
                avg_size: None,
                evaluable: true,
            },
            ClassDef {
                id: 1,
                name: "b".into(),
                category: "x".into(),
                avg_size: None,
                evaluable: true,
            },
        ])
        .unwrap_err();
        assert!(err.to_string().contains("duplicate class id"));
    }

    #[test]
    fn reserved_ignore_id_is_rejected() {
        let err = ClassTable::new(vec![ClassDef {
            id: IGNORE_LABEL,
            name: "bad".into(),
            category: "x".into(),
            avg_size: None,
            evaluable: true,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("reserved"));
    }

    #[test]
    fn empty_category_is_rejected() {
        let err = ClassTable::new(vec![ClassDef {
            id: 0,
            name: "a".into(),
            category: String::new(),
            avg_size: None,
            evaluable: true,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("empty category"));
    }

    #[test]
    fn non_positive_avg_size_is_rejected() {
        let err = ClassTable::new(vec![ClassDef {
            id: 0,
            name: "a".into(),
            category: "x".into(),
            avg_size: Some(0.0),
            evaluable: true,
        }])
        .unwrap_err();
        assert!(err.to_string().contains("avg_size"));
    }

    #[test]
    fn unknown_json_field_is_rejected() {
        let path = tmp("t.json");
        std::fs::write(
            &path,
            r#"{"classes":[{"id":0,"name":"a","category":"x","avg_size":null,"evaluable":true,"extra":1}]}"#,
        )
        .unwrap();
        assert!(matches!(read_class_table(&path), Err(Error::Json { .. })));
    }

    #[test]
    fn category_indices_are_sorted_and_stable() {
        let table = test_table(&[
            (3, "car", "vehicle", None, true),
            (1, "road", "flat", None, true),
            (2, "bus", "vehicle", None, true),
        ]);
        assert_eq!(table.category_names(), vec!["flat", "vehicle"]);
        let idx = table.category_index();
        assert_eq!(idx[&1], 0);
        assert_eq!(idx[&2], 1);
        assert_eq!(idx[&3], 1);
    }
}

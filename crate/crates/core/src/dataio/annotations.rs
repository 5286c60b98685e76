//! Polygon annotation ingestion and rasterization.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::dataio::{ClassTable, Instance, InstanceSet, PixelRun};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    width: u32,
    height: u32,
    objects: Vec<AnnotationObject>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationObject {
    label: String,
    polygon: Vec<[f64; 2]>,
}

/// Rasterizes one polygon with an even-odd scanline fill over pixel centers:
/// a pixel (x, y) is inside when the point (x+0.5, y+0.5) is. Edges use the
/// half-open rule min(ya,yb) <= yc < max(ya,yb) so shared vertices are not
/// counted twice. Output runs are clipped to the image.
pub(crate) fn rasterize_polygon(vertices: &[[f64; 2]], width: u32, height: u32) -> Vec<PixelRun> {
    let n = vertices.len();
    let mut runs = Vec::new();
    let mut crossings: Vec<f64> = Vec::new();
    for y in 0..height {
        let yc = y as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let [xa, ya] = vertices[i];
            let [xb, yb] = vertices[(i + 1) % n];
            if ya == yb {
                continue;
            }
            let (ymin, ymax) = if ya < yb { (ya, yb) } else { (yb, ya) };
            if yc < ymin || yc >= ymax {
                continue;
            }
            crossings.push(xa + (yc - ya) * (xb - xa) / (yb - ya));
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        for pair in crossings.chunks_exact(2) {
            // Pixel centers x+0.5 in [pair[0], pair[1]).
            let x0 = (pair[0] - 0.5).ceil().max(0.0) as i64;
            let x1 = (pair[1] - 0.5).ceil().min(width as f64) as i64;
            if x1 > x0 {
                runs.push(PixelRun {
                    y,
                    x0: x0 as u32,
                    x1: x1 as u32,
                });
            }
        }
    }
    runs
}

/// Reads an annotation file, resolves labels through the class table, and
/// rasterizes every polygon. Polygons are painted in file order and later
/// objects overwrite earlier ones on shared pixels; cached areas reflect the
/// final ownership. Polygons entirely outside the image are skipped with a
/// warning. The file's declared dimensions must match `width` x `height`.
pub fn ingest_polygon_annotations(
    path: &Path,
    table: &ClassTable,
    width: u32,
    height: u32,
) -> Result<InstanceSet> {
    let data = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: AnnotationFile =
        serde_json::from_str(&data).map_err(|e| Error::json(path, e.to_string()))?;
    if file.width != width || file.height != height {
        return Err(Error::DimensionMismatch {
            what: "annotation file".into(),
            want_w: width,
            want_h: height,
            got_w: file.width,
            got_h: file.height,
        });
    }

    let mut kept: Vec<(u16, Vec<PixelRun>)> = Vec::new();
    for obj in &file.objects {
        let class = table.by_name(&obj.label).ok_or_else(|| Error::UnknownClass {
            name: obj.label.clone(),
        })?;
        if obj.polygon.len() < 3 {
            return Err(Error::MalformedPolygon {
                vertices: obj.polygon.len(),
            });
        }
        for v in &obj.polygon {
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(Error::invalid(
                    "annotation polygon",
                    "non-finite vertex coordinate",
                ));
            }
        }
        let outside = obj.polygon.iter().all(|v| v[0] <= 0.0)
            || obj.polygon.iter().all(|v| v[0] >= width as f64)
            || obj.polygon.iter().all(|v| v[1] <= 0.0)
            || obj.polygon.iter().all(|v| v[1] >= height as f64);
        if outside {
            log::warn!(
                "skipping polygon with label {:?}: entirely outside {}x{} bounds",
                obj.label,
                width,
                height
            );
            continue;
        }
        kept.push((class.id, rasterize_polygon(&obj.polygon, width, height)));
    }

    // Paint file order onto an owner grid; later objects win.
    let mut owner = vec![-1i64; (width as usize) * (height as usize)];
    for (idx, (_, runs)) in kept.iter().enumerate() {
        for run in runs {
            let base = (run.y as usize) * (width as usize);
            for x in run.x0..run.x1 {
                owner[base + x as usize] = idx as i64;
            }
        }
    }

    // Rebuild surviving runs per instance from final ownership.
    let mut final_runs: Vec<Vec<PixelRun>> = vec![Vec::new(); kept.len()];
    for y in 0..height {
        let base = (y as usize) * (width as usize);
        let mut x = 0u32;
        while x < width {
            let own = owner[base + x as usize];
            if own < 0 {
                x += 1;
                continue;
            }
            let start = x;
            while x < width && owner[base + x as usize] == own {
                x += 1;
            }
            final_runs[own as usize].push(PixelRun { y, x0: start, x1: x });
        }
    }

    let instances = kept
        .into_iter()
        .zip(final_runs)
        .map(|((class_id, _), runs)| Instance::from_runs(class_id, runs))
        .collect();
    InstanceSet::new(width, height, instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::test_table;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    fn table() -> ClassTable {
        test_table(&[
            (0, "road", "flat", None, true),
            (13, "car", "vehicle", Some(100.0), true),
        ])
    }

    fn write_annotation(objects: &str, w: u32, h: u32) -> std::path::PathBuf {
        let path = tmp("a.json");
        std::fs::write(
            &path,
            format!(r#"{{"width":{w},"height":{h},"objects":[{objects}]}}"#),
        )
        .unwrap();
        path
    }

    #[test]
    fn axis_aligned_square_covers_sixteen_pixels() {
        let path = write_annotation(
            r#"{"label":"car","polygon":[[0,0],[4,0],[4,4],[0,4]]}"#,
            8,
            8,
        );
        let set = ingest_polygon_annotations(&path, &table(), 8, 8).unwrap();
        assert_eq!(set.instances().len(), 1);
        assert_eq!(set.instances()[0].area, 16);
        assert_eq!(set.instances()[0].class_id, 13);
        let pixels: Vec<_> = set.instances()[0].pixels().collect();
        assert_eq!(pixels.len(), 16);
        assert!(pixels.iter().all(|&(x, y)| x < 4 && y < 4));
    }

    #[test]
    fn later_object_overwrites_earlier() {
        let sq = r#"{"label":"car","polygon":[[0,0],[4,0],[4,4],[0,4]]}"#;
        let path = write_annotation(&format!("{sq},{sq}"), 8, 8);
        let set = ingest_polygon_annotations(&path, &table(), 8, 8).unwrap();
        assert_eq!(set.instances().len(), 2);
        assert_eq!(set.instances()[0].area, 0);
        assert_eq!(set.instances()[1].area, 16);
    }

    #[test]
    fn partial_overlap_areas_reflect_final_ownership() {
        let a = r#"{"label":"car","polygon":[[0,0],[4,0],[4,4],[0,4]]}"#;
        let b = r#"{"label":"road","polygon":[[2,0],[6,0],[6,4],[2,4]]}"#;
        let path = write_annotation(&format!("{a},{b}"), 8, 8);
        let set = ingest_polygon_annotations(&path, &table(), 8, 8).unwrap();
        assert_eq!(set.instances()[0].area, 8);
        assert_eq!(set.instances()[1].area, 16);
    }

    #[test]
    fn two_vertex_polygon_is_malformed() {
        let path = write_annotation(r#"{"label":"car","polygon":[[0,0],[4,0]]}"#, 8, 8);
        assert!(matches!(
            ingest_polygon_annotations(&path, &table(), 8, 8),
            Err(Error::MalformedPolygon { vertices: 2 })
        ));
    }

    #[test]
    fn unknown_label_is_an_error() {
        let path = write_annotation(r#"{"label":"ufo","polygon":[[0,0],[4,0],[4,4]]}"#, 8, 8);
        match ingest_polygon_annotations(&path, &table(), 8, 8) {
            Err(Error::UnknownClass { name }) => assert_eq!(name, "ufo"),
            other => panic!("expected unknown class, got {other:?}"),
        }
    }

    #[test]
    fn polygon_outside_bounds_is_skipped() {
        let path = write_annotation(
            r#"{"label":"car","polygon":[[20,20],[24,20],[24,24],[20,24]]}"#,
            8,
            8,
        );
        let set = ingest_polygon_annotations(&path, &table(), 8, 8).unwrap();
        assert!(set.instances().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let path = write_annotation(r#""#, 8, 8);
        assert!(matches!(
            ingest_polygon_annotations(&path, &table(), 16, 8),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn triangle_fill_matches_point_in_polygon_test() {
        let tri = [[1.0, 1.0], [9.0, 2.0], [3.0, 8.0]];
        let runs = rasterize_polygon(&tri, 12, 12);
        let mut filled = vec![false; 12 * 12];
        for r in &runs {
            for x in r.x0..r.x1 {
                filled[(r.y as usize) * 12 + x as usize] = true;
            }
        }
        // Independent even-odd membership test on every pixel center.
        for y in 0..12u32 {
            for x in 0..12u32 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut inside = false;
                for i in 0..3 {
                    let [xa, ya] = tri[i];
                    let [xb, yb] = tri[(i + 1) % 3];
                    if (ya <= py) != (yb <= py) {
                        let cx = xa + (py - ya) * (xb - xa) / (yb - ya);
                        if px < cx {
                            inside = !inside;
                        }
                    }
                }
                assert_eq!(
                    filled[(y as usize) * 12 + x as usize],
                    inside,
                    "pixel ({x},{y})"
                );
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn rasterized_area_is_translation_invariant(
            ax in 0.5f64..6.0, ay in 0.5f64..6.0,
            bx in 6.5f64..12.0, by in 0.5f64..6.0,
            cx in 0.5f64..12.0, cy in 6.5f64..12.0,
            dx in 0u32..8, dy in 0u32..8,
        ) {
            let base = [[ax, ay], [bx, by], [cx, cy]];
            let moved: Vec<[f64; 2]> = base
                .iter()
                .map(|v| [v[0] + dx as f64, v[1] + dy as f64])
                .collect();
            let area = |runs: &[PixelRun]| -> u64 { runs.iter().map(PixelRun::len).sum() };
            let a0 = area(&rasterize_polygon(&base, 24, 24));
            let a1 = area(&rasterize_polygon(&moved, 24, 24));
            proptest::prop_assert_eq!(a0, a1);
        }

        #[test]
        fn rectangle_area_matches_closed_form(
            x0 in 0u32..6, y0 in 0u32..6,
            w in 1u32..8, h in 1u32..8,
        ) {
            let poly = [
                [x0 as f64, y0 as f64],
                [(x0 + w) as f64, y0 as f64],
                [(x0 + w) as f64, (y0 + h) as f64],
                [x0 as f64, (y0 + h) as f64],
            ];
            let runs = rasterize_polygon(&poly, 16, 16);
            let area: u64 = runs.iter().map(PixelRun::len).sum();
            proptest::prop_assert_eq!(area, (w as u64) * (h as u64));
        }
    }
}

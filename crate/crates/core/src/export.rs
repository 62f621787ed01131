//! GeoJSON export of zones, routes, and the raw Voronoi tessellation.
//!
//! Zone polygons are the Voronoi cells of the tower set, clipped to the
//! tower bounding box with a small margin; each carries its site, its
//! per-window BUSY/IDLE state, and its zone type when layer 3 has run.
//! Routes come out as LineStrings tagged with the user id.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{voronoi, BoundingBox, GeoPoint};
use crate::kb::{KnowledgeBase, Layer};
use crate::pipeline::Pipeline;

/// What to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Zones,
    Routes,
    Voronoi,
}

impl ExportKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zones" => Ok(ExportKind::Zones),
            "routes" => Ok(ExportKind::Routes),
            "voronoi" => Ok(ExportKind::Voronoi),
            other => Err(Error::config(format!("unknown export kind `{other}`"))),
        }
    }
}

fn layer(i: u8) -> Layer {
    Layer::new(i).expect("static layer index")
}

fn towers_of(kb: &KnowledgeBase) -> Result<Vec<GeoPoint>> {
    let table = kb.read_any(layer(0), "towers")?;
    let (la, lo) = (table.col("lat")?, table.col("lon")?);
    table
        .rows()
        .iter()
        .map(|row| {
            Ok(GeoPoint::new(
                row[la].parse().map_err(|_| Error::data("bad tower lat"))?,
                row[lo].parse().map_err(|_| Error::data("bad tower lon"))?,
            ))
        })
        .collect()
}

fn tower_bbox(towers: &[GeoPoint]) -> Result<BoundingBox> {
    let mut min_lat = f64::INFINITY;
    let mut min_lon = f64::INFINITY;
    let mut max_lat = f64::NEG_INFINITY;
    let mut max_lon = f64::NEG_INFINITY;
    for t in towers {
        min_lat = min_lat.min(t.lat);
        min_lon = min_lon.min(t.lon);
        max_lat = max_lat.max(t.lat);
        max_lon = max_lon.max(t.lon);
    }
    // Margin so border towers get proper cells.
    let pad_lat = ((max_lat - min_lat) * 0.02).max(1e-3);
    let pad_lon = ((max_lon - min_lon) * 0.02).max(1e-3);
    BoundingBox::new(min_lat - pad_lat, min_lon - pad_lon, max_lat + pad_lat, max_lon + pad_lon)
}

fn ring_coordinates(cell: &[GeoPoint]) -> Value {
    let mut coords: Vec<[f64; 2]> = cell.iter().map(|p| [p.lon, p.lat]).collect();
    if let Some(first) = coords.first().copied() {
        coords.push(first); // close the ring
    }
    json!([coords])
}

/// Exports the requested layer as a GeoJSON FeatureCollection. `window`
/// picks which time slot's busyness to attach to zone polygons.
pub fn export_geojson(pipeline: &Pipeline, kind: ExportKind, window: &str) -> Result<Value> {
    match kind {
        ExportKind::Routes => {
            let table = pipeline.kb.read_any(layer(3), "routes")?;
            let (u, r) = (table.col("user_id")?, table.col("route")?);
            let features: Vec<Value> = table
                .rows()
                .iter()
                .map(|row| {
                    let points = crate::pipeline::parse_route_string(&row[r])?;
                    let total_km: f64 = points
                        .windows(2)
                        .map(|w| crate::geo::haversine_km(w[0].point(), w[1].point()))
                        .sum();
                    let coords: Vec<[f64; 2]> = points
                        .iter()
                        .map(|k| {
                            let p = k.point();
                            [p.lon, p.lat]
                        })
                        .collect();
                    Ok(json!({
                        "type": "Feature",
                        "geometry": { "type": "LineString", "coordinates": coords },
                        "properties": { "user_id": row[u], "total_km": total_km },
                    }))
                })
                .collect::<Result<_>>()?;
            Ok(json!({ "type": "FeatureCollection", "features": features }))
        }
        ExportKind::Voronoi | ExportKind::Zones => {
            let towers = towers_of(&pipeline.kb)?;
            let bbox = tower_bbox(&towers)?;
            let diagram = voronoi(&towers, bbox)?;

            let mut busy: BTreeMap<(String, String), String> = BTreeMap::new();
            let mut ztype: BTreeMap<(String, String), String> = BTreeMap::new();
            if kind == ExportKind::Zones {
                let table = pipeline.kb.read_any(layer(2), "zone_busyness")?;
                let (la, lo, w, b) = (
                    table.col("lat")?,
                    table.col("lon")?,
                    table.col("window")?,
                    table.col("busy_class")?,
                );
                for row in table.rows() {
                    if row[w] == window {
                        busy.insert((row[la].clone(), row[lo].clone()), row[b].clone());
                    }
                }
                if pipeline.kb.exists(layer(3), "zone_type") {
                    let table = pipeline.kb.read_any(layer(3), "zone_type")?;
                    let (la, lo, z) =
                        (table.col("lat")?, table.col("lon")?, table.col("zone_type")?);
                    for row in table.rows() {
                        ztype.insert((row[la].clone(), row[lo].clone()), row[z].clone());
                    }
                }
            }

            let features: Vec<Value> = diagram
                .sites
                .iter()
                .enumerate()
                .map(|(i, site)| {
                    let key = (site.lat.to_string(), site.lon.to_string());
                    let mut properties = json!({ "site": [site.lon, site.lat] });
                    if kind == ExportKind::Zones {
                        properties["busy_class"] =
                            json!(busy.get(&key).cloned().unwrap_or_default());
                        properties["zone_type"] =
                            json!(ztype.get(&key).cloned().unwrap_or_default());
                        properties["window"] = json!(window);
                    }
                    json!({
                        "type": "Feature",
                        "geometry": { "type": "Polygon", "coordinates": ring_coordinates(&diagram.cells[i]) },
                        "properties": properties,
                    })
                })
                .collect();
            Ok(json!({ "type": "FeatureCollection", "features": features }))
        }
    }
}

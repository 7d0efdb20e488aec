//! Annotation records attached to ingested images.

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ServiceError, ServiceResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Box,
    Polygon,
    Point,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub kind: ShapeKind,
    /// `[x, y]` pixel positions. A box is two opposite corners.
    pub coordinates: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub image_id: String,
    pub shapes: Vec<Shape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub author: String,
    /// RFC 3339 timestamp.
    pub created_at: String,
}

impl Annotation {
    /// Parse a JSON body into the annotation schema.
    pub fn from_value(body: &Value) -> ServiceResult<Self> {
        serde_json::from_value(body.clone())
            .map_err(|e| ServiceError::BadRequest(format!("annotation schema: {e}")))
    }

    /// Checks everything except image bounds.
    pub fn validate_fields(&self) -> ServiceResult<()> {
        let bad = |m: String| Err(ServiceError::BadRequest(m));
        if self.image_id.is_empty() {
            return bad("image_id must not be empty".into());
        }
        if self.author.trim().is_empty() {
            return bad("author must not be empty".into());
        }
        if DateTime::parse_from_rfc3339(&self.created_at).is_err() {
            return bad(format!("created_at `{}` is not an RFC 3339 timestamp", self.created_at));
        }
        if self.shapes.is_empty() {
            return bad("annotation needs at least one shape".into());
        }
        for (i, s) in self.shapes.iter().enumerate() {
            let n = s.coordinates.len();
            let ok = match s.kind {
                ShapeKind::Point => n == 1,
                ShapeKind::Box => n == 2,
                ShapeKind::Polygon => n >= 3,
            };
            if !ok {
                return bad(format!("shape {i}: {:?} cannot have {n} vertices", s.kind));
            }
        }
        Ok(())
    }

    /// Every vertex must satisfy `0 <= x <= width` and `0 <= y <= height`.
    pub fn validate_bounds(&self, width: usize, height: usize) -> ServiceResult<()> {
        for (i, s) in self.shapes.iter().enumerate() {
            for &[x, y] in &s.coordinates {
                let inside = x.is_finite()
                    && y.is_finite()
                    && (0.0..=width as f64).contains(&x)
                    && (0.0..=height as f64).contains(&y);
                if !inside {
                    return Err(ServiceError::BadRequest(format!(
                        "shape {i}: vertex ({x}, {y}) outside image bounds {width}x{height}"
                    )));
                }
            }
        }
        Ok(())
    }
}
